//! Matricized tensor times Khatri-Rao product.
//!
//! [`mttkrp`] computes `M⁽ⁿ⁾ = X₍ₙ₎ P⁽ⁿ⁾` where `P⁽ⁿ⁾` is the Khatri-Rao product
//! of every other factor in ascending mode order. With an
//! [`MttkrpWorkspace`] the computation runs over a binary dimension tree:
//! the root splits modes `[0, N)` into `[0, ⌈N/2⌉)` and the rest, and every
//! node caches the tensor contracted with the factors of all modes outside
//! it. Only the two root children touch the full tensor, so a sweep over all
//! modes (including an ALS sweep where factors change between modes) costs
//! two full-tensor contractions.

use std::collections::HashMap;

use crate::error::{CpError, Result};
use crate::tensor::{khatri_rao_chain, DenseTensor, Matrix};

pub(crate) fn check_factors(t: &DenseTensor, factors: &[Matrix]) -> Result<usize> {
    if factors.len() != t.order() {
        return Err(CpError::ShapeMismatch(format!(
            "{} factors for an order-{} tensor",
            factors.len(),
            t.order()
        )));
    }
    let rank = factors.first().map_or(0, Matrix::cols);
    for (m, (f, &s)) in factors.iter().zip(t.dims()).enumerate() {
        if f.cols() != rank {
            return Err(CpError::RankMismatch { expected: rank, found: f.cols() });
        }
        if f.rows() != s {
            return Err(CpError::ShapeMismatch(format!(
                "factor {m} has {} rows, mode extent is {s}",
                f.rows()
            )));
        }
    }
    Ok(rank)
}

/// Reference path: explicit unfolding times explicit Khatri-Rao product.
pub fn mttkrp_naive(t: &DenseTensor, factors: &[Matrix], mode: usize) -> Result<Matrix> {
    t.check_mode(mode)?;
    let rank = check_factors(t, factors)?;
    let others = factors.iter().enumerate().filter(|(m, _)| *m != mode).map(|(_, f)| f);
    let krp = khatri_rao_chain(others, rank)?;
    Ok(t.matricize(mode)?.matmul(&krp))
}

/// MTTKRP for one mode, through the dimension tree when a workspace is given.
pub fn mttkrp(
    t: &DenseTensor,
    factors: &[Matrix],
    mode: usize,
    ws: Option<&mut MttkrpWorkspace>,
) -> Result<Matrix> {
    match ws {
        None => mttkrp_naive(t, factors, mode),
        Some(ws) => ws.compute(t, factors, mode),
    }
}

/// All `N` MTTKRPs for one set of factors.
pub fn mttkrp_all(t: &DenseTensor, factors: &[Matrix], ws: &mut MttkrpWorkspace) -> Result<Vec<Matrix>> {
    (0..t.order()).map(|n| ws.compute(t, factors, n)).collect()
}

/// A contiguous mode range `[lo, hi)`; every dimension-tree node is one.
type NodeKey = (usize, usize);

#[derive(Debug, Clone)]
struct Partial {
    /// Row-major over the node's extents, rank index last.
    data: Vec<f64>,
    /// Factor generations of every mode outside the node at build time.
    stamp: Vec<u64>,
}

/// Cache of partial contractions for the dimension tree.
#[derive(Debug, Clone, Default)]
pub struct MttkrpWorkspace {
    dims: Vec<usize>,
    rank: usize,
    snapshots: Vec<Matrix>,
    generations: Vec<u64>,
    cache: HashMap<NodeKey, Partial>,
    full_contractions: usize,
}

impl MttkrpWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Contractions that read every entry of the input tensor, since creation
    /// or the last [`reset_counter`](Self::reset_counter).
    pub fn full_contractions(&self) -> usize {
        self.full_contractions
    }

    pub fn reset_counter(&mut self) {
        self.full_contractions = 0;
    }

    /// Drops all cached partials. Needed when the tensor changes but the
    /// factors do not.
    pub fn clear(&mut self) {
        self.cache.clear();
        self.snapshots.clear();
        self.generations.clear();
    }

    fn sync(&mut self, t: &DenseTensor, factors: &[Matrix], rank: usize) {
        if self.dims != t.dims() || self.rank != rank || self.snapshots.len() != factors.len() {
            self.dims = t.dims().to_vec();
            self.rank = rank;
            self.cache.clear();
            self.snapshots = factors.to_vec();
            self.generations = vec![0; factors.len()];
            return;
        }
        for (m, f) in factors.iter().enumerate() {
            if self.snapshots[m].as_slice() != f.as_slice() {
                self.snapshots[m] = f.clone();
                self.generations[m] += 1;
            }
        }
    }

    fn stamp_outside(&self, (lo, hi): NodeKey) -> Vec<u64> {
        self.generations
            .iter()
            .enumerate()
            .filter(|(m, _)| *m < lo || *m >= hi)
            .map(|(_, g)| *g)
            .collect()
    }

    fn compute(&mut self, t: &DenseTensor, factors: &[Matrix], mode: usize) -> Result<Matrix> {
        t.check_mode(mode)?;
        let rank = check_factors(t, factors)?;
        let order = t.order();
        if order == 1 {
            self.full_contractions += 1;
            return mttkrp_naive(t, factors, mode);
        }
        self.sync(t, factors, rank);

        let mut parent: NodeKey = (0, order);
        while parent.1 - parent.0 > 1 {
            let (lo, hi) = parent;
            let mid = lo + (hi - lo).div_ceil(2);
            let child = if mode < mid { (lo, mid) } else { (mid, hi) };
            let stamp = self.stamp_outside(child);
            let fresh = self.cache.get(&child).is_some_and(|p| p.stamp == stamp);
            if !fresh {
                let data = self.contract(t, factors, parent, child)?;
                self.cache.insert(child, Partial { data, stamp });
            }
            parent = child;
        }
        let leaf = &self.cache[&parent];
        Matrix::from_vec(t.dims()[mode], rank, leaf.data.clone())
    }

    /// Contracts the partial of `parent` with the factors of the sibling of
    /// `child`.
    fn contract(&mut self, t: &DenseTensor, factors: &[Matrix], parent: NodeKey, child: NodeKey) -> Result<Vec<f64>> {
        let rank = self.rank;
        let (plo, phi) = parent;
        let mid = if child.0 == plo { child.1 } else { child.0 };
        let left_len: usize = t.dims()[plo..mid].iter().product();
        let right_len: usize = t.dims()[mid..phi].iter().product();
        let keep_left = child.0 == plo;
        let contracted = if keep_left { mid..phi } else { plo..mid };
        let krp = khatri_rao_chain(factors[contracted].iter(), rank)?;

        if parent == (0, t.order()) {
            self.full_contractions += 1;
            let x = Matrix::from_vec(left_len, right_len, t.as_slice().to_vec())?;
            let out = if keep_left { x.matmul(&krp) } else { x.t_matmul(&krp) };
            return Ok(out.into_vec());
        }

        let p = &self.cache[&parent].data;
        let k = krp.as_slice();
        let out_len = if keep_left { left_len } else { right_len };
        let mut out = vec![0.0; out_len * rank];
        for a in 0..left_len {
            for b in 0..right_len {
                let src = &p[(a * right_len + b) * rank..(a * right_len + b + 1) * rank];
                let (dst_row, k_row) = if keep_left { (a, b) } else { (b, a) };
                let dst = &mut out[dst_row * rank..(dst_row + 1) * rank];
                let kr = &k[k_row * rank..(k_row + 1) * rank];
                for r in 0..rank {
                    dst[r] += src[r] * kr[r];
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gram;
    use proptest::prelude::*;

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Matrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    fn lcg_tensor(dims: Vec<usize>, seed: u64) -> DenseTensor {
        let len: usize = dims.iter().product();
        let m = lcg_matrix(1, len, seed);
        DenseTensor::new(dims, m.into_vec()).unwrap()
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    /// Independent brute force over every tensor entry.
    fn mttkrp_brute(t: &DenseTensor, factors: &[Matrix], mode: usize) -> Matrix {
        let rank = factors[0].cols();
        let mut out = Matrix::zeros(t.dims()[mode], rank);
        let mut idx = vec![0usize; t.order()];
        for flat in 0..t.len() {
            for r in 0..rank {
                let prod: f64 = (0..t.order()).filter(|&m| m != mode).map(|m| factors[m].get(idx[m], r)).product();
                let v = out.get(idx[mode], r) + t.as_slice()[flat] * prod;
                out.set(idx[mode], r, v);
            }
            crate::tensor::increment_index(&mut idx, t.dims());
        }
        out
    }

    #[test]
    fn constant_case() {
        let t = DenseTensor::new(vec![2, 2, 2], vec![1.0; 8]).unwrap();
        let f = vec![Matrix::filled(2, 2, 1.0); 3];
        let mut ws = MttkrpWorkspace::new();
        assert_eq!(mttkrp(&t, &f, 0, Some(&mut ws)).unwrap(), Matrix::filled(2, 2, 4.0));
        assert_eq!(mttkrp(&t, &f, 0, None).unwrap(), Matrix::filled(2, 2, 4.0));
    }

    #[test]
    fn rank_one_identity() {
        let a = Matrix::from_rows(&[[1.0], [-2.0]]);
        let b = Matrix::from_rows(&[[0.5], [3.0], [1.0]]);
        let c = Matrix::from_rows(&[[2.0], [1.0]]);
        let t = DenseTensor::from_fn(vec![2, 3, 2], |i| a.get(i[0], 0) * b.get(i[1], 0) * c.get(i[2], 0)).unwrap();
        let scale = gram(&b).get(0, 0) * gram(&c).get(0, 0);
        let expected = a.scaled(scale);
        let factors = vec![Matrix::zeros(2, 1), b, c];
        let mut ws = MttkrpWorkspace::new();
        let m = mttkrp(&t, &factors, 0, Some(&mut ws)).unwrap();
        assert!(rel_err(&m, &expected) < 1e-14);
    }

    #[test]
    fn random_matches_unfolding_path() {
        let t = lcg_tensor(vec![3, 3, 3], 5);
        let f: Vec<_> = (0..3).map(|m| lcg_matrix(3, 2, 10 + m)).collect();
        let mut ws = MttkrpWorkspace::new();
        for n in 0..3 {
            let tree = mttkrp(&t, &f, n, Some(&mut ws)).unwrap();
            assert!(rel_err(&tree, &mttkrp_naive(&t, &f, n).unwrap()) <= 1e-12);
            assert!(rel_err(&tree, &mttkrp_brute(&t, &f, n)) <= 1e-12);
        }
    }

    #[test]
    fn rejects_rank_mismatch_and_bad_mode() {
        let t = lcg_tensor(vec![2, 2, 2], 1);
        let f = vec![lcg_matrix(2, 2, 1), lcg_matrix(2, 3, 2), lcg_matrix(2, 2, 3)];
        assert!(matches!(mttkrp(&t, &f, 0, None), Err(CpError::RankMismatch { .. })));
        let f = vec![lcg_matrix(2, 2, 1); 3];
        assert!(matches!(mttkrp(&t, &f, 3, Some(&mut MttkrpWorkspace::new())), Err(CpError::ModeOutOfRange { .. })));
    }

    #[test]
    fn order_one_and_two() {
        let t = lcg_tensor(vec![4], 2);
        let f = vec![lcg_matrix(4, 3, 1)];
        let m = mttkrp(&t, &f, 0, Some(&mut MttkrpWorkspace::new())).unwrap();
        for r in 0..3 {
            assert_eq!(m.column(r), t.as_slice());
        }
        let t = lcg_tensor(vec![3, 4], 2);
        let f = vec![lcg_matrix(3, 2, 1), lcg_matrix(4, 2, 2)];
        let mut ws = MttkrpWorkspace::new();
        for n in 0..2 {
            let m = mttkrp(&t, &f, n, Some(&mut ws)).unwrap();
            assert!(rel_err(&m, &mttkrp_brute(&t, &f, n)) < 1e-12);
        }
        assert_eq!(ws.full_contractions(), 2);
    }

    #[test]
    fn stale_partials_are_rebuilt_after_factor_change() {
        let t = lcg_tensor(vec![3, 2, 4, 2], 9);
        let mut f: Vec<_> = (0..4).map(|m| lcg_matrix(t.dims()[m], 3, 20 + m as u64)).collect();
        let mut ws = MttkrpWorkspace::new();
        for n in 0..4 {
            mttkrp(&t, &f, n, Some(&mut ws)).unwrap();
        }
        f[3] = lcg_matrix(2, 3, 99);
        for n in 0..4 {
            let m = mttkrp(&t, &f, n, Some(&mut ws)).unwrap();
            assert!(rel_err(&m, &mttkrp_brute(&t, &f, n)) < 1e-12, "mode {n}");
        }
    }

    /// ALS access pattern: factor `n` changes right after its MTTKRP.
    fn sweep_contractions(dims: Vec<usize>, rank: usize, seed: u64) -> (usize, f64) {
        let t = lcg_tensor(dims.clone(), seed);
        let mut f: Vec<_> = dims.iter().enumerate().map(|(m, &s)| lcg_matrix(s, rank, seed + m as u64)).collect();
        let mut ws = MttkrpWorkspace::new();
        let mut worst = 0.0f64;
        for sweep in 0..3 {
            ws.reset_counter();
            for n in 0..dims.len() {
                let m = mttkrp(&t, &f, n, Some(&mut ws)).unwrap();
                worst = worst.max(rel_err(&m, &mttkrp_naive(&t, &f, n).unwrap()));
                f[n] = lcg_matrix(dims[n], rank, seed * 31 + sweep * 7 + n as u64);
            }
        }
        (ws.full_contractions(), worst)
    }

    #[test]
    fn sweep_uses_two_full_contractions() {
        for order in 3..=5 {
            let (count, err) = sweep_contractions(vec![3; order], 2, order as u64);
            assert!(count <= 2, "order {order}: {count} contractions");
            assert!(err <= 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn tree_equals_naive(dims in prop::collection::vec(1usize..4, 2..6), rank in 1usize..4, seed in 0u64..1000) {
            let t = lcg_tensor(dims.clone(), seed);
            let f: Vec<_> = dims.iter().enumerate().map(|(m, &s)| lcg_matrix(s, rank, seed + 100 + m as u64)).collect();
            let mut ws = MttkrpWorkspace::new();
            for n in 0..dims.len() {
                let tree = mttkrp(&t, &f, n, Some(&mut ws)).unwrap();
                let naive = mttkrp_naive(&t, &f, n).unwrap();
                prop_assert!(rel_err(&tree, &naive) <= 1e-12 || naive.frobenius_norm() < 1e-300);
            }
            prop_assert_eq!(ws.full_contractions(), 2);
        }
    }
}
