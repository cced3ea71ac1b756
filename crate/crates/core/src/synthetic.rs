//! Seeded synthetic regression benchmarks with a known sparse low-rank `W`.
//!
//! All four families use `D = 25` variables, `T = 20` tasks and `K = 5`
//! latent bases. Families differ in how the bases share variables (`U`) and
//! how tasks share bases (`V`):
//!
//! | family | `U` basis `r` (rows, 1-based) | `V` column `j` (components) |
//! |--------|-------------------------------|-----------------------------|
//! | Syn1   | `4r-3 ..= 4r`                 | `ceil(j/4)`                 |
//! | Syn2   | `4r-3 ..= 4r`                 | `{r, r+1}` for group `r`    |
//! | Syn3   | `3r-2 ..= 3r+3`               | `ceil(j/4)`                 |
//! | Syn4   | `3r-2 ..= 3r+3`               | `{r, r+1}` for group `r`    |
//!
//! In Syn2/Syn4 the tasks of group `r = ceil(j/4)` use components `r` and
//! `r+1`, except the last group which uses `K-1` and `K`.
//!
//! Random draws come from a `ChaCha8Rng` seeded with `seed`, in this order:
//! the nonzero `U` entries row by row (`N(1, 0.25²)`), the nonzero `V`
//! entries column by column (`U(1, 1.5)`), then for each task its training
//! inputs and test inputs row by row (`N(0, 1)`), then for each task the
//! training and test noise.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MultiTaskDataset, ProblemKind, TaskData};

pub const SYN_DIM: usize = 25;
pub const SYN_TASKS: usize = 20;
pub const SYN_RANK: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynFamily {
    Syn1,
    Syn2,
    Syn3,
    Syn4,
}

impl SynFamily {
    pub const ALL: [SynFamily; 4] = [SynFamily::Syn1, SynFamily::Syn2, SynFamily::Syn3, SynFamily::Syn4];

    fn overlapping_variables(self) -> bool {
        matches!(self, SynFamily::Syn3 | SynFamily::Syn4)
    }

    fn overlapping_tasks(self) -> bool {
        matches!(self, SynFamily::Syn2 | SynFamily::Syn4)
    }
}

impl fmt::Display for SynFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SynFamily::Syn1 => "syn1",
            SynFamily::Syn2 => "syn2",
            SynFamily::Syn3 => "syn3",
            SynFamily::Syn4 => "syn4",
        };
        f.write_str(s)
    }
}

impl FromStr for SynFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "syn1" => Ok(SynFamily::Syn1),
            "syn2" => Ok(SynFamily::Syn2),
            "syn3" => Ok(SynFamily::Syn3),
            "syn4" => Ok(SynFamily::Syn4),
            _ => Err(Error::param(format!(
                "unknown family {s:?}, expected syn1, syn2, syn3 or syn4"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynSpec {
    pub family: SynFamily,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynSpec {
    /// 50 training and 100 test observations per task, unit noise.
    pub fn new(family: SynFamily, seed: u64) -> Self {
        SynSpec {
            family,
            n_train: 50,
            n_test: 100,
            noise_std: 1.0,
            seed,
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.noise_std = 0.0;
        self
    }
}

/// Sparsity patterns of the true factors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureMasks {
    /// `D × K`.
    pub u: Array2<bool>,
    /// `K × T`.
    pub v: Array2<bool>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: MultiTaskDataset,
    pub test: MultiTaskDataset,
    pub w_true: Array2<f64>,
    pub u_true: Array2<f64>,
    pub v_true: Array2<f64>,
}

pub fn family_group_structure(family: SynFamily) -> StructureMasks {
    let mut u = Array2::from_elem((SYN_DIM, SYN_RANK), false);
    for r in 1..=SYN_RANK {
        let rows = if family.overlapping_variables() {
            (3 * r - 2)..=(3 * r + 3)
        } else {
            (4 * r - 3)..=(4 * r)
        };
        for i in rows {
            u[[i - 1, r - 1]] = true;
        }
    }
    let mut v = Array2::from_elem((SYN_RANK, SYN_TASKS), false);
    for j in 1..=SYN_TASKS {
        let group = j.div_ceil(4);
        if family.overlapping_tasks() {
            let first = group.min(SYN_RANK - 1);
            v[[first - 1, j - 1]] = true;
            v[[first, j - 1]] = true;
        } else {
            v[[group - 1, j - 1]] = true;
        }
    }
    StructureMasks { u, v }
}

pub fn generate(spec: &SynSpec) -> Result<SyntheticData> {
    if spec.n_train == 0 || spec.n_test == 0 {
        return Err(Error::param("synthetic tasks need at least one train and test row"));
    }
    if !(spec.noise_std >= 0.0) || !spec.noise_std.is_finite() {
        return Err(Error::param(format!(
            "noise_std must be finite and >= 0, got {}",
            spec.noise_std
        )));
    }
    let masks = family_group_structure(spec.family);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let u_dist = Normal::new(1.0, 0.25).expect("valid normal");
    let v_dist = Uniform::new(1.0, 1.5).expect("valid uniform");

    let mut u_true = Array2::<f64>::zeros((SYN_DIM, SYN_RANK));
    for i in 0..SYN_DIM {
        for r in 0..SYN_RANK {
            if masks.u[[i, r]] {
                u_true[[i, r]] = u_dist.sample(&mut rng);
            }
        }
    }
    let mut v_true = Array2::<f64>::zeros((SYN_RANK, SYN_TASKS));
    for j in 0..SYN_TASKS {
        for r in 0..SYN_RANK {
            if masks.v[[r, j]] {
                v_true[[r, j]] = v_dist.sample(&mut rng);
            }
        }
    }
    let w_true = u_true.dot(&v_true);

    let mut draw_x = |n: usize| {
        Array2::from_shape_simple_fn((n, SYN_DIM), || StandardNormal.sample(&mut rng))
    };
    let mut inputs = Vec::with_capacity(SYN_TASKS);
    for _ in 0..SYN_TASKS {
        let xtr = draw_x(spec.n_train);
        let xte = draw_x(spec.n_test);
        inputs.push((xtr, xte));
    }

    let mut train = Vec::with_capacity(SYN_TASKS);
    let mut test = Vec::with_capacity(SYN_TASKS);
    for (j, (xtr, xte)) in inputs.into_iter().enumerate() {
        let w = w_true.column(j);
        let mut noisy = |x: &Array2<f64>| -> Array1<f64> {
            let clean = x.dot(&w);
            clean.mapv(|c| {
                let e: f64 = StandardNormal.sample(&mut rng);
                c + spec.noise_std * e
            })
        };
        let ytr = noisy(&xtr);
        let yte = noisy(&xte);
        train.push(TaskData::new(xtr, ytr)?);
        test.push(TaskData::new(xte, yte)?);
    }

    Ok(SyntheticData {
        train: MultiTaskDataset::new(train, ProblemKind::Regression)?,
        test: MultiTaskDataset::new(test, ProblemKind::Regression)?,
        w_true,
        u_true,
        v_true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows_nonzero(m: &Array2<bool>) -> Vec<usize> {
        (0..m.nrows())
            .filter(|&i| m.row(i).iter().any(|&b| b))
            .collect()
    }

    #[test]
    fn irrelevant_rows() {
        let m1 = family_group_structure(SynFamily::Syn1);
        assert_eq!(rows_nonzero(&m1.u), (0..20).collect::<Vec<_>>());
        let m3 = family_group_structure(SynFamily::Syn3);
        assert_eq!(rows_nonzero(&m3.u), (0..18).collect::<Vec<_>>());
    }

    #[test]
    fn syn2_groups_share_one_component() {
        let m = family_group_structure(SynFamily::Syn2);
        for g in 0..3 {
            let a = m.v.column(4 * g);
            let b = m.v.column(4 * (g + 1));
            let shared = a.iter().zip(b.iter()).filter(|(x, y)| **x && **y).count();
            assert_eq!(shared, 1, "groups {g} and {}", g + 1);
        }
        // the last group reuses components K-1 and K
        assert_eq!(m.v.column(19), m.v.column(15));
        assert!(m.v[[3, 19]] && m.v[[4, 19]]);
    }

    #[test]
    fn syn1_task_groups_disjoint() {
        let m = family_group_structure(SynFamily::Syn1);
        for j in 0..SYN_TASKS {
            assert_eq!(m.v.column(j).iter().filter(|&&b| b).count(), 1);
            assert!(m.v[[j / 4, j]]);
        }
    }

    #[test]
    fn syn4_consecutive_bases_overlap_three_rows() {
        let m = family_group_structure(SynFamily::Syn4);
        for r in 0..SYN_RANK - 1 {
            let shared = (0..SYN_DIM).filter(|&i| m.u[[i, r]] && m.u[[i, r + 1]]).count();
            assert_eq!(shared, 3);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SynSpec::new(SynFamily::Syn2, 9);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.w_true, b.w_true);
    }

    #[test]
    fn family_parses() {
        assert_eq!("SYN3".parse::<SynFamily>().unwrap(), SynFamily::Syn3);
        assert!("syn5".parse::<SynFamily>().is_err());
    }
}
