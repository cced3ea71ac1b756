use anyhow::Context;
use serde::Serialize;
use vstg_core::io::{read_dataset, read_model, Part};
use vstg_core::{evaluate, ree, risk_bound_terms, Evaluation, RiskBoundTerms};

use crate::train::load_truth;
use crate::{require_dir, CliResult, EvalArgs, PartArg};

#[derive(Debug, Serialize)]
struct EvalReport {
    #[serde(flatten)]
    evaluation: Evaluation,
    risk_bound_terms: RiskBoundTerms,
    ree: Option<f64>,
}

pub fn run(args: &EvalArgs) -> CliResult<()> {
    require_dir(&args.model, "model directory")?;
    require_dir(&args.data, "dataset directory")?;
    let (fact, manifest) = read_model(&args.model)?;
    let part = match args.part {
        PartArg::Train => Part::Train,
        PartArg::Test => Part::Test,
    };
    let raw = read_dataset(&args.data, part)?;
    let data = manifest.preprocessing.apply(&raw)?;
    let w = fact.coefficients();
    let evaluation = evaluate(w.view(), &data)?;
    let ree_value = match load_truth(&args.data)? {
        Some(w_true) => {
            let w_raw = manifest.preprocessing.raw_coefficients(w.view())?;
            Some(ree(w_true.view(), w_raw.view())?)
        }
        None => None,
    };
    let report = EvalReport {
        evaluation,
        risk_bound_terms: risk_bound_terms(&data),
        ree: ree_value,
    };
    let json = serde_json::to_string_pretty(&report).context("serializing metrics")?;
    if let Some(out) = &args.out {
        std::fs::write(out, format!("{json}\n")).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("{json}");
    Ok(())
}
