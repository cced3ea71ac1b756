//! Repeated synthetic experiments: every method is tuned on the training
//! split by grid search and scored on the test split, for each seed.

use std::fmt::{self, Write as _};

use anyhow::Context;
use vstg_core::eval::select_baseline_lambda;
use vstg_core::io::fmt_num;
use vstg_core::{evaluate, fit, generate, grid_search, ree, Baseline, GridSpec, SynFamily, SynSpec};

use crate::config::RunConfig;
use crate::{BenchmarkArgs, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// The factorized model with the k-support parameter fixed to `k`.
    Vstg { k: usize },
    Baseline(Baseline),
}

impl Method {
    pub const DEFAULT: [Method; 4] = [
        Method::Vstg { k: 1 },
        Method::Vstg { k: 3 },
        Method::Baseline(Baseline::Ridge),
        Method::Baseline(Baseline::Lasso),
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Vstg { k } => write!(f, "vstg-k{k}"),
            Method::Baseline(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkOptions {
    pub families: Vec<SynFamily>,
    pub seeds: Vec<u64>,
    /// Search space for the factorized model; its `k_grid` is replaced by
    /// each method's `k`, and its `gamma_grid` doubles as the baseline grid.
    pub grid: GridSpec,
    pub methods: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub family: SynFamily,
    pub method: Method,
    pub seed: u64,
    pub rmse: f64,
    pub ree: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub family: SynFamily,
    pub method: Method,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub ree_mean: f64,
    pub ree_std: f64,
    pub seeds: usize,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run_benchmark(opts: &BenchmarkOptions) -> CliResult<(Vec<SeedResult>, Vec<BenchmarkRow>)> {
    if opts.seeds.is_empty() || opts.families.is_empty() || opts.methods.is_empty() {
        return Err(CliError::Usage("benchmark needs at least one family, seed and method".into()));
    }
    opts.grid.validate()?;
    let mut details = Vec::new();
    for &family in &opts.families {
        for &seed in &opts.seeds {
            let data = generate(&SynSpec::new(family, seed))?;
            for &method in &opts.methods {
                let w = match method {
                    Method::Vstg { k } => {
                        let grid = GridSpec {
                            k_grid: vec![k],
                            ..opts.grid.clone()
                        };
                        let best = grid_search(&data.train, &grid, seed)?.best;
                        fit(&data.train, &best)?.0.coefficients()
                    }
                    Method::Baseline(b) => {
                        let (lam, _) = select_baseline_lambda(
                            &data.train,
                            b,
                            &opts.grid.gamma_grid,
                            opts.grid.selection,
                            seed,
                        )?;
                        b.fit(&data.train, lam)?
                    }
                };
                let rmse = evaluate(w.view(), &data.test)?.pooled;
                let ree = ree(data.w_true.view(), w.view())?;
                log::info!("{family} seed {seed} {method}: rmse {rmse:.4} ree {ree:.4}");
                details.push(SeedResult {
                    family,
                    method,
                    seed,
                    rmse,
                    ree,
                });
            }
        }
    }
    let mut rows = Vec::new();
    for &family in &opts.families {
        for &method in &opts.methods {
            let picked: Vec<&SeedResult> = details
                .iter()
                .filter(|r| r.family == family && r.method == method)
                .collect();
            let rmse: Vec<f64> = picked.iter().map(|r| r.rmse).collect();
            let ree: Vec<f64> = picked.iter().map(|r| r.ree).collect();
            let (rmse_mean, rmse_std) = mean_std(&rmse);
            let (ree_mean, ree_std) = mean_std(&ree);
            rows.push(BenchmarkRow {
                family,
                method,
                rmse_mean,
                rmse_std,
                ree_mean,
                ree_std,
                seeds: picked.len(),
            });
        }
    }
    Ok((details, rows))
}

pub fn format_table(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from("family,method,rmse_mean,rmse_std,ree_mean,ree_std,seeds\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.family,
            r.method,
            fmt_num(r.rmse_mean),
            fmt_num(r.rmse_std),
            fmt_num(r.ree_mean),
            fmt_num(r.ree_std),
            r.seeds
        );
    }
    out
}

pub fn format_details(details: &[SeedResult]) -> String {
    let mut out = String::from("family,method,seed,rmse,ree\n");
    for r in details {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.family,
            r.method,
            r.seed,
            fmt_num(r.rmse),
            fmt_num(r.ree)
        );
    }
    out
}

pub fn run(args: &BenchmarkArgs) -> CliResult<()> {
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let config = RunConfig::load(args.config.as_deref())?;
    let mut grid = config.grid.unwrap_or_else(|| args.grid.spec());
    if let Some(cv) = args.cv {
        grid.selection = cv.selection();
    }
    let families = if args.family.is_empty() {
        SynFamily::ALL.to_vec()
    } else {
        args.family.iter().map(|&f| f.into()).collect()
    };
    let opts = BenchmarkOptions {
        families,
        seeds: (args.seed..args.seed + args.seeds).collect(),
        grid,
        methods: Method::DEFAULT.to_vec(),
    };
    let (details, rows) = run_benchmark(&opts)?;
    let table = format_table(&rows);
    if let Some(out) = &args.out {
        std::fs::write(out, &table).with_context(|| format!("writing {}", out.display()))?;
    }
    if let Some(path) = &args.details {
        std::fs::write(path, format_details(&details))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{table}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_of_one_value_is_zero() {
        assert_eq!(mean_std(&[1.5]), (1.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn method_names() {
        let names: Vec<String> = Method::DEFAULT.iter().map(Method::to_string).collect();
        assert_eq!(names, ["vstg-k1", "vstg-k3", "ridge", "lasso"]);
    }
}
