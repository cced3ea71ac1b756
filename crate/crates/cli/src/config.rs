//! Optional TOML run configuration.
//!
//! ```toml
//! [hyperparams]
//! gamma1 = 0.125
//! rank = 5
//!
//! [grid]
//! gamma_grid = [0.0078125, 0.03125, 0.125]
//! rank_grid = [5]
//! k_grid = [1]
//! selection = { kind = "holdout", fraction = 0.2 }
//! ```
//!
//! Missing keys take their defaults; unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;
use vstg_core::{GridSpec, HyperParams};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub hyperparams: HyperParams,
    pub grid: Option<GridSpec>,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_keeps_defaults() {
        let c = RunConfig::parse("[hyperparams]\ngamma1 = 0.5\nrank = 3\n").unwrap();
        assert_eq!(c.hyperparams.gamma1, 0.5);
        assert_eq!(c.hyperparams.rank, 3);
        assert_eq!(c.hyperparams.gamma2, HyperParams::default().gamma2);
        assert!(c.grid.is_none());
    }

    #[test]
    fn grid_table() {
        let c = RunConfig::parse(
            "[grid]\ngamma_grid = [0.5]\nrank_grid = [2]\nk_grid = [1]\n\
             selection = { kind = \"holdout\", fraction = 0.25 }\n",
        )
        .unwrap();
        let g = c.grid.unwrap();
        assert_eq!(g.points().len(), 1);
        assert_eq!(g.selection, vstg_core::Selection::Holdout { fraction: 0.25 });
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::parse("gamma = 1\n"), Err(CliError::Usage(_))));
        assert!(RunConfig::parse("[hyperparams]\ngama1 = 1\n").is_err());
    }
}
