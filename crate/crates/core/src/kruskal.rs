//! The CP model `[[A⁽¹⁾, …, A⁽ᴺ⁾]]` and the Gram/Γ machinery shared by ALS and
//! Gauss-Newton.

use crate::error::{CpError, Result};
use crate::mttkrp::mttkrp_naive;
use crate::tensor::{gram, hadamard, khatri_rao_chain, DenseTensor, Matrix};

/// Largest tensor [`KruskalModel::reconstruct`] will materialize by default.
pub const DEFAULT_ELEMENT_CAP: usize = 1 << 27;

#[derive(Debug, Clone, PartialEq)]
pub struct KruskalModel {
    dims: Vec<usize>,
    rank: usize,
    factors: Vec<Matrix>,
}

impl KruskalModel {
    pub fn new(factors: Vec<Matrix>) -> Result<Self> {
        let rank = factors.first().map(Matrix::cols).ok_or_else(|| {
            CpError::ShapeMismatch("a model needs at least one factor".into())
        })?;
        if rank == 0 {
            return Err(CpError::ShapeMismatch("rank must be positive".into()));
        }
        for f in &factors {
            if f.cols() != rank {
                return Err(CpError::RankMismatch { expected: rank, found: f.cols() });
            }
            if f.rows() == 0 {
                return Err(CpError::ShapeMismatch("empty factor".into()));
            }
            if !f.is_finite() {
                return Err(CpError::NumericalFailure("non-finite factor entry".into()));
            }
        }
        let dims = factors.iter().map(Matrix::rows).collect();
        Ok(Self { dims, rank, factors })
    }

    pub fn zeros(dims: &[usize], rank: usize) -> Result<Self> {
        Self::new(dims.iter().map(|&s| Matrix::zeros(s, rank)).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factor(&self, n: usize) -> &Matrix {
        &self.factors[n]
    }

    /// Total number of scalar unknowns, `Σ sₙ R`.
    pub fn num_variables(&self) -> usize {
        self.dims.iter().sum::<usize>() * self.rank
    }

    /// Replaces factor `n`; the shape must match.
    pub fn set_factor(&mut self, n: usize, f: Matrix) -> Result<()> {
        if f.shape() != self.factors[n].shape() {
            return Err(CpError::ShapeMismatch(format!(
                "factor {n}: expected {:?}, got {:?}",
                self.factors[n].shape(),
                f.shape()
            )));
        }
        self.factors[n] = f;
        Ok(())
    }

    pub fn into_factors(self) -> Vec<Matrix> {
        self.factors
    }

    /// `self + alpha * step`, mode by mode.
    pub fn updated(&self, step: &[Matrix], alpha: f64) -> KruskalModel {
        let mut next = self.clone();
        for (f, v) in next.factors.iter_mut().zip(step) {
            f.axpy(alpha, v);
        }
        next
    }

    pub fn conforms_to(&self, t: &DenseTensor) -> Result<()> {
        if self.dims != t.dims() {
            return Err(CpError::ShapeMismatch(format!(
                "model dims {:?} against tensor dims {:?}",
                self.dims,
                t.dims()
            )));
        }
        Ok(())
    }

    pub fn reconstruct(&self) -> Result<DenseTensor> {
        self.reconstruct_capped(DEFAULT_ELEMENT_CAP)
    }

    /// `x̃_{i₁…i_N} = Σ_r Π_n a⁽ⁿ⁾_{iₙ r}`, refusing outputs above `cap` entries.
    pub fn reconstruct_capped(&self, cap: usize) -> Result<DenseTensor> {
        let len = self
            .dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .unwrap_or(usize::MAX);
        if len > cap {
            return Err(CpError::TooLarge { requested: len, cap });
        }
        // the mode-0 unfolding shares the tensor's row-major layout
        let rest = khatri_rao_chain(self.factors[1..].iter(), self.rank)?;
        let unfolded = self.factors[0].matmul_t(&rest);
        Ok(DenseTensor::from_parts_unchecked(self.dims.clone(), unfolded.into_vec()))
    }

    pub fn grams(&self) -> Vec<Matrix> {
        self.factors.iter().map(gram).collect()
    }

    /// `‖[[A]]‖²_F = Σ_{r,z} Π_m S⁽ᵐ⁾_{rz}`.
    pub fn norm_sq_from_grams(grams: &[Matrix]) -> f64 {
        let r = grams[0].rows();
        let mut acc = Matrix::filled(r, r, 1.0);
        for g in grams {
            acc = hadamard(&acc, g).expect("grams share the rank");
        }
        acc.as_slice().iter().sum()
    }
}

/// Grams `S⁽ⁿ⁾` and the pairwise Hadamard products `Γ⁽ⁿ'ᵖ⁾`.
///
/// `Γ⁽ⁿ'ᵖ⁾` is the Hadamard product of every `S⁽ᵐ⁾` with `m ∉ {n, p}`, so
/// `Γ⁽ⁿ'ⁿ⁾` is the ALS normal-equation matrix. An empty product is the
/// all-ones matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSet {
    grams: Vec<Matrix>,
    pairwise: Vec<Vec<Matrix>>,
}

impl GammaSet {
    pub fn build(model: &KruskalModel) -> Self {
        Self::from_grams(model.grams())
    }

    /// Assembles a set from explicit parts, bypassing the Hadamard rule.
    /// Meant for test doubles of the Hessian structure.
    pub fn from_parts(grams: Vec<Matrix>, pairwise: Vec<Vec<Matrix>>) -> Result<Self> {
        let order = grams.len();
        if pairwise.len() != order || pairwise.iter().any(|row| row.len() != order) {
            return Err(CpError::ShapeMismatch("pairwise table must be N x N".into()));
        }
        Ok(Self { grams, pairwise })
    }

    pub fn from_grams(grams: Vec<Matrix>) -> Self {
        let order = grams.len();
        let rank = grams[0].rows();
        let ones = Matrix::filled(rank, rank, 1.0);
        let mut pairwise = vec![vec![Matrix::zeros(0, 0); order]; order];
        for n in 0..order {
            for p in n..order {
                let mut g = ones.clone();
                for (m, s) in grams.iter().enumerate() {
                    if m != n && m != p {
                        g = hadamard(&g, s).expect("grams share the rank");
                    }
                }
                if p != n {
                    pairwise[p][n] = g.clone();
                }
                pairwise[n][p] = g;
            }
        }
        Self { grams, pairwise }
    }

    pub fn order(&self) -> usize {
        self.grams.len()
    }

    pub fn rank(&self) -> usize {
        self.grams[0].rows()
    }

    pub fn gram(&self, n: usize) -> &Matrix {
        &self.grams[n]
    }

    pub fn grams(&self) -> &[Matrix] {
        &self.grams
    }

    /// `Γ⁽ⁿ'ᵖ⁾`.
    pub fn get(&self, n: usize, p: usize) -> &Matrix {
        &self.pairwise[n][p]
    }

    /// `Γ⁽ⁿ'ⁿ⁾`.
    pub fn diag(&self, n: usize) -> &Matrix {
        &self.pairwise[n][n]
    }
}

/// Relative residual and fitness of a model against `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualFitness {
    pub residual: f64,
    pub fitness: f64,
}

/// Computes `‖X − X̃‖_F / ‖X‖_F` without forming `X̃`.
///
/// `xnorm2` must be `‖X‖²_F`. `m_last`, when given, must be the MTTKRP of the
/// last mode at the current factors; otherwise it is computed.
pub fn residual_fitness(
    model: &KruskalModel,
    x: &DenseTensor,
    xnorm2: f64,
    m_last: Option<&Matrix>,
) -> Result<ResidualFitness> {
    let grams = model.grams();
    residual_fitness_with_grams(model, &grams, x, xnorm2, m_last)
}

pub(crate) fn residual_fitness_with_grams(
    model: &KruskalModel,
    grams: &[Matrix],
    x: &DenseTensor,
    xnorm2: f64,
    m_last: Option<&Matrix>,
) -> Result<ResidualFitness> {
    if !(xnorm2 > 0.0) {
        return Err(CpError::ZeroNorm);
    }
    model.conforms_to(x)?;
    let last = model.order() - 1;
    let owned;
    let m = match m_last {
        Some(m) => m,
        None => {
            owned = mttkrp_naive(x, model.factors(), last)?;
            &owned
        }
    };
    let cross = m.inner(model.factor(last));
    let model_sq = KruskalModel::norm_sq_from_grams(grams);
    let resid_sq = (xnorm2 - 2.0 * cross + model_sq).max(0.0);
    let residual = (resid_sq / xnorm2).sqrt();
    Ok(ResidualFitness { residual, fitness: 1.0 - residual })
}

/// Below this relative residual the expanded-norm formula loses digits to
/// cancellation: its absolute error in `r` is about `eps / r`, with a floor
/// near `sqrt(eps)`.
pub const DENSE_REFINE_BELOW: f64 = 1e-3;

/// Fast residual, re-evaluated by dense reconstruction when it falls under
/// [`DENSE_REFINE_BELOW`] and the tensor fits the default cap.
pub fn residual_fitness_refined(
    model: &KruskalModel,
    grams: &[Matrix],
    x: &DenseTensor,
    xnorm2: f64,
    m_last: Option<&Matrix>,
) -> Result<ResidualFitness> {
    let fast = residual_fitness_with_grams(model, grams, x, xnorm2, m_last)?;
    if fast.residual >= DENSE_REFINE_BELOW || x.len() > DEFAULT_ELEMENT_CAP {
        return Ok(fast);
    }
    let residual = (2.0 * objective_dense(model, x)? / xnorm2).sqrt();
    Ok(ResidualFitness { residual, fitness: 1.0 - residual })
}

/// `½‖X − [[A]]‖²_F` by dense reconstruction.
pub fn objective_dense(model: &KruskalModel, x: &DenseTensor) -> Result<f64> {
    model.conforms_to(x)?;
    let recon = model.reconstruct()?;
    Ok(0.5
        * x.as_slice()
            .iter()
            .zip(recon.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>())
}
