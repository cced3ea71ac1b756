use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use ndarray::Array2;
use serde::Serialize;
use vstg_core::io::{
    fmt_num, from_rows, read_dataset, read_ground_truth, write_model, ModelManifest, Part,
    Preprocessing, GROUND_TRUTH,
};
use vstg_core::{evaluate, fit, grid_search, ree, FitReport, GridResult, HyperParams};

use crate::config::RunConfig;
use crate::{require_dir, CliError, CliResult, TrainArgs};

#[derive(Debug, Serialize)]
struct TrainReport<'a> {
    fit: &'a FitReport,
    metric: &'a str,
    train_metric: f64,
    u_nonzeros: usize,
    /// Relative estimation error against `ground_truth.json`, when present.
    ree: Option<f64>,
    grid_best_score: Option<f64>,
}

/// Loads `W*` from a dataset directory, if it has one.
pub(crate) fn load_truth(data_dir: &Path) -> CliResult<Option<Array2<f64>>> {
    if !data_dir.join(GROUND_TRUTH).exists() {
        return Ok(None);
    }
    let truth = read_ground_truth(data_dir)?;
    Ok(Some(from_rows(&truth.w_true)?))
}

pub(crate) fn cv_table_csv(result: &GridResult) -> String {
    let mut out = String::from("gamma1,gamma2,mu,K,k,score\n");
    for r in &result.table {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_num(r.gamma1),
            fmt_num(r.gamma2),
            fmt_num(r.mu),
            r.rank,
            r.k,
            fmt_num(r.score)
        );
    }
    out
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    require_dir(&args.data, "dataset directory")?;
    let config = RunConfig::load(args.config.as_deref())?;
    let mut hp: HyperParams = args.hyper.apply(config.hyperparams);
    hp.validate()?;

    let raw = read_dataset(&args.data, Part::Train)?;
    let prep = Preprocessing::fit(&raw, args.normalize, args.add_bias);
    let train = prep.apply(&raw)?;

    let mut grid_result = None;
    if args.grid.is_some() || config.grid.is_some() {
        let mut grid = match (args.grid, config.grid) {
            (Some(g), _) => g.spec(),
            (None, Some(g)) => g,
            (None, None) => unreachable!(),
        };
        if let Some(cv) = args.cv {
            grid.selection = cv.selection();
        }
        grid.base = hp;
        let result = grid_search(&train, &grid, args.seed)?;
        log::info!("grid search picked {:?} (score {})", result.best, result.best_score);
        hp = result.best;
        grid_result = Some(result);
    } else if args.cv.is_some() {
        return Err(CliError::Usage("--cv needs --grid or a [grid] config table".into()));
    }

    let (fact, report) = fit(&train, &hp)?;
    log::info!("fit finished in {:.3}s", report.wall_time);
    let w = fact.coefficients();
    let train_eval = evaluate(w.view(), &train)?;
    let ree_value = match load_truth(&args.data)? {
        Some(w_true) => {
            let w_raw = prep.raw_coefficients(w.view())?;
            Some(ree(w_true.view(), w_raw.view())?)
        }
        None => None,
    };

    let manifest = ModelManifest {
        dim: fact.dim(),
        rank: fact.rank(),
        n_tasks: fact.n_tasks(),
        kind: train.kind(),
        hyperparams: hp,
        preprocessing: prep,
        objective_trace: report.objective_trace.clone(),
        train_metric: train_eval.pooled,
    };
    write_model(&args.out, &fact, &manifest)?;

    let summary = TrainReport {
        fit: &report,
        metric: &train_eval.metric,
        train_metric: train_eval.pooled,
        u_nonzeros: fact.u.iter().filter(|&&x| x != 0.0).count(),
        ree: ree_value,
        grid_best_score: grid_result.as_ref().map(|g| g.best_score),
    };
    let json = serde_json::to_string_pretty(&summary).context("serializing report")?;
    let report_path = args.out.join("report.json");
    std::fs::write(&report_path, format!("{json}\n"))
        .with_context(|| format!("writing {}", report_path.display()))?;
    if let Some(g) = &grid_result {
        let path = args.out.join("cv_table.csv");
        std::fs::write(&path, cv_table_csv(g)).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{json}");
    Ok(())
}
