//! Synthetic problems: random low-rank tensors and the matrix-multiplication
//! tensor.
//!
//! Random factor entries come from a counter-based stream: entry `(i, j)` of
//! factor `m` is drawn from a ChaCha8 generator seeded with `seed`, stream
//! `m`, positioned at the entry's flat index. Values therefore do not depend
//! on generation order or thread count.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CpError, Result};
use crate::kruskal::{KruskalModel, DEFAULT_ELEMENT_CAP};
use crate::tensor::{DenseTensor, Matrix};

/// Words reserved per entry in the ChaCha stream (two `u64` draws use four).
const WORDS_PER_ENTRY: u128 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorDistribution {
    Uniform { low: f64, high: f64 },
    Gaussian,
}

impl FactorDistribution {
    pub const UNIFORM_01: Self = Self::Uniform { low: 0.0, high: 1.0 };
    pub const UNIFORM_11: Self = Self::Uniform { low: -1.0, high: 1.0 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Uniform { low, high } if !(low < high) || !low.is_finite() || !high.is_finite() => {
                Err(CpError::InvalidConfig(format!("uniform bounds need low < high, got ({low}, {high})")))
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Self::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Self::Gaussian => {
                // Box-Muller on (0, 1] × [0, 1)
                let u1 = 1.0 - rng.random::<f64>();
                let u2 = rng.random::<f64>();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Uniform { low: f64, high: f64 },
    Gaussian,
    Matmul { n: usize },
}

impl Family {
    pub const UNIFORM_01: Self = Self::Uniform { low: 0.0, high: 1.0 };
    pub const UNIFORM_11: Self = Self::Uniform { low: -1.0, high: 1.0 };

    pub fn factor_distribution(&self) -> Option<FactorDistribution> {
        match *self {
            Self::Uniform { low, high } => Some(FactorDistribution::Uniform { low, high }),
            Self::Gaussian => Some(FactorDistribution::Gaussian),
            Self::Matmul { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub family: Family,
    pub dims: Vec<usize>,
    pub rank: usize,
    pub seed: u64,
}

impl ProblemSpec {
    /// Equidimensional problem from a factor distribution.
    pub fn new(family: Family, order: usize, size: usize, rank: usize, seed: u64) -> Self {
        let dims = match family {
            Family::Matmul { n } => vec![n * n; 3],
            _ => vec![size; order],
        };
        Self { family, dims, rank, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(CpError::InvalidConfig("rank must be positive".into()));
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(CpError::InvalidConfig(format!("invalid dims {:?}", self.dims)));
        }
        match self.family {
            Family::Matmul { n } => {
                if n == 0 || self.dims != [n * n; 3] {
                    return Err(CpError::InvalidConfig(format!(
                        "matmul({n}) requires dims [{0}, {0}, {0}], got {1:?}",
                        n * n,
                        self.dims
                    )));
                }
                Ok(())
            }
            f => f.factor_distribution().expect("factor family").validate(),
        }
    }

    /// The input tensor this spec describes.
    pub fn tensor(&self) -> Result<DenseTensor> {
        self.validate()?;
        match self.family {
            Family::Matmul { n } => matmul_tensor(n),
            _ => Ok(random_low_rank(self)?.1),
        }
    }
}

/// A single draw from the counter-based stream.
fn entry_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(index as u128 * WORDS_PER_ENTRY);
    rng
}

/// `rows × cols` matrix of i.i.d. draws keyed by `(seed, stream, flat index)`.
pub fn random_matrix(rows: usize, cols: usize, dist: FactorDistribution, seed: u64, stream: u64) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| dist.sample(&mut entry_rng(seed, stream, (i * cols + j) as u64)))
}

/// Random factors for `dims`; mode `m` uses stream `m`.
pub fn random_model(dims: &[usize], rank: usize, dist: FactorDistribution, seed: u64) -> Result<KruskalModel> {
    dist.validate()?;
    KruskalModel::new(
        dims.iter()
            .enumerate()
            .map(|(m, &s)| random_matrix(s, rank, dist, seed, m as u64))
            .collect(),
    )
}

/// Ground-truth model and its reconstruction.
pub fn random_low_rank(spec: &ProblemSpec) -> Result<(KruskalModel, DenseTensor)> {
    spec.validate()?;
    let dist = spec
        .family
        .factor_distribution()
        .ok_or_else(|| CpError::InvalidConfig("matmul family has no ground-truth factors".into()))?;
    let model = random_model(&spec.dims, spec.rank, dist, spec.seed)?;
    let x = model.reconstruct()?;
    Ok((model, x))
}

/// `n² × n² × n²` tensor with `T[(i,j),(k,l),(m,p)] = 1` iff `k = i`,
/// `l = m`, `p = j`; pairs linearize as `i * n + j`.
///
/// Contracting modes 2 and 3 with `vec(A)` and `vec(B)` yields `vec(AB)`.
pub fn matmul_tensor(n: usize) -> Result<DenseTensor> {
    if n == 0 {
        return Err(CpError::InvalidConfig("matmul tensor needs n >= 1".into()));
    }
    let s = n * n;
    let len = s.checked_mul(s).and_then(|v| v.checked_mul(s)).unwrap_or(usize::MAX);
    if len > DEFAULT_ELEMENT_CAP {
        return Err(CpError::TooLarge { requested: len, cap: DEFAULT_ELEMENT_CAP });
    }
    let mut t = DenseTensor::zeros(vec![s; 3])?;
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                t.set(&[i * n + j, i * n + l, l * n + j], 1.0);
            }
        }
    }
    Ok(t)
}

/// Rank-`n³` decomposition of [`matmul_tensor`] from the classical algorithm.
pub fn classical_matmul_model(n: usize) -> Result<KruskalModel> {
    let s = n * n;
    let rank = n * n * n;
    let mut f = vec![Matrix::zeros(s, rank); 3];
    let mut r = 0;
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                f[0].set(i * n + j, r, 1.0);
                f[1].set(i * n + l, r, 1.0);
                f[2].set(l * n + j, r, 1.0);
                r += 1;
            }
        }
    }
    KruskalModel::new(f)
}

/// Strassen's rank-7 decomposition of `matmul_tensor(2)`.
pub fn strassen_model() -> KruskalModel {
    // columns: M1..M7; rows: entries 11, 12, 21, 22
    let c = [
        [1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        [1.0, -1.0, 1.0, 0.0, 0.0, 1.0, 0.0],
    ];
    let a = [
        [1.0, 0.0, 1.0, 0.0, 1.0, -1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0],
        [0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        [1.0, 1.0, 0.0, 1.0, 0.0, 0.0, -1.0],
    ];
    let b = [
        [1.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
        [1.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0],
    ];
    KruskalModel::new(vec![Matrix::from_rows(&c), Matrix::from_rows(&a), Matrix::from_rows(&b)])
        .expect("static shapes")
}

/// Mixes a tuple of integers into one seed (SplitMix64 finalizer per part).
pub fn derive_seed(parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts
        .iter()
        .fold(0x243f_6a88_85a3_08d3u64, |acc, &p| mix(acc.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ p))
}
