//! Generalized block orthogonal matching pursuit.
//!
//! Each iteration correlates the residual with every dictionary column,
//! scores each candidate block by the Euclidean norm of its correlations,
//! adds the best block's columns to the support and refits the coefficients
//! by least squares on the whole support. Candidate blocks may overlap, so the
//! support grows by at most `b²` columns per iteration.

use std::collections::BTreeSet;

use num_complex::Complex64;

use crate::block_geometry::{BlockAnchor, BlockCollection};
use crate::error::{invalid, Result};
use crate::linalg::thin_svd;
use crate::{CMatrix, CVector};

/// Relative singular-value cutoff for the minimum-norm least-squares fit.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Threshold returned by [`default_tau`] for noiseless problems.
pub const NOISELESS_TAU: f64 = 1e-20;

/// Caps how many selections may come from each segment of a stacked vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentLimit {
    /// Columns per segment; column `j` belongs to segment `j / segment_len`.
    pub segment_len: usize,
    /// Selections allowed per segment before the segment is masked.
    pub picks_per_segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Maximum number of iterations (selected blocks).
    pub max_blocks: usize,
    /// Stop once `‖Ā^H r‖_∞² <= tau`.
    pub tau: f64,
    pub segments: Option<SegmentLimit>,
}

impl SolverConfig {
    pub fn new(max_blocks: usize, tau: f64) -> Self {
        Self {
            max_blocks,
            tau,
            segments: None,
        }
    }

    /// One block per segment of length `segment_len`.
    pub fn one_block_per_segment(mut self, segment_len: usize) -> Self {
        self.segments = Some(SegmentLimit {
            segment_len,
            picks_per_segment: 1,
        });
        self
    }

    /// Matching OMP configuration: `max_blocks * block_area` atoms, and
    /// `block_area` atoms per segment where segments are limited.
    pub fn for_omp(&self, block_area: usize) -> Self {
        Self {
            max_blocks: self.max_blocks * block_area,
            tau: self.tau,
            segments: self.segments.map(|s| SegmentLimit {
                segment_len: s.segment_len,
                picks_per_segment: s.picks_per_segment * block_area,
            }),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_blocks < 1 {
            return Err(invalid("max_blocks must be at least 1"));
        }
        if self.tau.is_nan() || self.tau < 0.0 {
            return Err(invalid(format!("tau must be nonnegative, got {}", self.tau)));
        }
        if let Some(s) = self.segments {
            if s.segment_len == 0 || s.picks_per_segment == 0 {
                return Err(invalid("segment limits must be positive"));
            }
        }
        Ok(())
    }
}

/// A block chosen at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectedBlock {
    pub segment: usize,
    pub anchor: BlockAnchor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    /// Full-length coefficient vector, zero off the support.
    pub estimate: CVector,
    /// Sorted 0-based column indices of the support.
    pub support: Vec<usize>,
    /// Blocks in selection order.
    pub selected: Vec<SelectedBlock>,
    /// `‖r‖₂` after each iteration.
    pub residual_norms: Vec<f64>,
}

impl SolverResult {
    pub fn iterations(&self) -> usize {
        self.selected.len()
    }

    pub fn selected_anchors(&self) -> Vec<BlockAnchor> {
        self.selected.iter().map(|s| s.anchor).collect()
    }
}

/// Minimum-norm least-squares solution of `a x ≈ y`, computed through an SVD
/// with singular values below `RANK_TOLERANCE * σ_max` treated as zero.
pub fn least_squares(a: &CMatrix, y: &CVector) -> Result<CVector> {
    if a.nrows() != y.len() {
        return Err(invalid(format!(
            "least squares: {} rows but observation length {}",
            a.nrows(),
            y.len()
        )));
    }
    if a.ncols() == 0 {
        return Ok(CVector::zeros(0));
    }
    if a.nrows() == 0 {
        return Ok(CVector::zeros(a.ncols()));
    }
    let svd = thin_svd(a)?;
    let s_max = svd.s[0];
    if s_max == 0.0 {
        return Ok(CVector::zeros(a.ncols()));
    }
    let eps = RANK_TOLERANCE * s_max;
    let mut coords = svd.u.ad_mul(y);
    for (c, &s) in coords.iter_mut().zip(svd.s.iter()) {
        *c = if s > eps { *c / s } else { Complex64::new(0.0, 0.0) };
    }
    Ok(&svd.v * coords)
}

/// Noise-floor threshold `2 σ² ln(N) max_j ‖ā_j‖²`.
///
/// Under pure noise each correlation `ā_j^H n` is circular Gaussian with
/// variance at most `σ² max_j ‖ā_j‖²`, so the peak squared correlation over
/// `N` columns exceeds this level with probability about `1/N`.
pub fn default_tau(noise_variance: f64, a_bar: &CMatrix) -> f64 {
    if noise_variance <= 0.0 || a_bar.ncols() == 0 {
        return NOISELESS_TAU;
    }
    let n = a_bar.ncols() as f64;
    let max_col = a_bar.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max);
    2.0 * noise_variance * n.ln() * max_col
}

/// Runs G-BOMP on `y ≈ a_bar e` with candidate blocks `blocks`.
///
/// Ties in the block score go to the earliest block in collection order.
/// Blocks whose columns are already all in the support are skipped.
pub fn gbomp(y: &CVector, a_bar: &CMatrix, blocks: &BlockCollection, config: &SolverConfig) -> Result<SolverResult> {
    config.validate()?;
    let (m, n) = a_bar.shape();
    if m == 0 {
        return Err(invalid("at least one measurement is required"));
    }
    if y.len() != m {
        return Err(invalid(format!(
            "observation length {} does not match {m} sensing rows",
            y.len()
        )));
    }
    if blocks.max_index() > n {
        return Err(invalid(format!(
            "block index {} exceeds the {n} dictionary columns",
            blocks.max_index()
        )));
    }

    let mut support: BTreeSet<usize> = BTreeSet::new();
    let mut selected = Vec::new();
    let mut residual_norms = Vec::new();
    let mut segment_picks: Vec<usize> = Vec::new();
    let mut residual = y.clone();
    let mut coefficients = CVector::zeros(0);
    let mut support_cols: Vec<usize> = Vec::new();

    for _ in 0..config.max_blocks {
        let corr = a_bar.ad_mul(&residual);
        let power: Vec<f64> = corr.iter().map(|z| z.norm_sqr()).collect();
        let peak = power.iter().cloned().fold(0.0, f64::max);
        if peak <= config.tau {
            break;
        }

        let mut best: Option<(usize, f64)> = None;
        for (k, block) in blocks.blocks().iter().enumerate() {
            if block.columns().all(|c| support.contains(&c)) {
                continue;
            }
            if let Some(limit) = config.segments {
                let seg = segment_of(block.indices()[0] - 1, limit);
                if segment_picks.get(seg).copied().unwrap_or(0) >= limit.picks_per_segment {
                    continue;
                }
            }
            let score: f64 = block.columns().map(|c| power[c]).sum::<f64>().sqrt();
            match best {
                Some((_, s)) if score <= s => {}
                _ => best = Some((k, score)),
            }
        }
        let Some((k, _)) = best else { break };
        let block = &blocks.blocks()[k];

        support.extend(block.columns());
        if let Some(limit) = config.segments {
            let seg = segment_of(block.indices()[0] - 1, limit);
            if segment_picks.len() <= seg {
                segment_picks.resize(seg + 1, 0);
            }
            segment_picks[seg] += 1;
        }
        selected.push(SelectedBlock {
            segment: block.segment(),
            anchor: block.anchor(),
        });

        support_cols = support.iter().copied().collect();
        let a_sub = a_bar.select_columns(support_cols.iter());
        coefficients = least_squares(&a_sub, y)?;
        residual = y - &a_sub * &coefficients;
        residual_norms.push(residual.norm());
    }

    let mut estimate = CVector::zeros(n);
    for (&col, &c) in support_cols.iter().zip(coefficients.iter()) {
        estimate[col] = c;
    }
    Ok(SolverResult {
        estimate,
        support: support_cols,
        selected,
        residual_norms,
    })
}

/// Plain OMP: G-BOMP over singleton blocks. `config.max_blocks` counts atoms;
/// use [`SolverConfig::for_omp`] to match a block budget.
pub fn omp(y: &CVector, a_bar: &CMatrix, config: &SolverConfig) -> Result<SolverResult> {
    let atoms = BlockCollection::singletons(a_bar.ncols())?;
    gbomp(y, a_bar, &atoms, config)
}

fn segment_of(col: usize, limit: SegmentLimit) -> usize {
    col / limit.segment_len
}

/// `‖Ā_I^H r‖_∞` for a support `I`; zero for an empty support.
pub fn support_correlation(a_bar: &CMatrix, support: &[usize], residual: &CVector) -> f64 {
    support
        .iter()
        .map(|&c| a_bar.column(c).dotc(residual).norm())
        .fold(0.0, f64::max)
}

/// Residual `y - Ā ê` of a solver result.
pub fn residual_of(y: &CVector, a_bar: &CMatrix, result: &SolverResult) -> CVector {
    let mut r = y.clone();
    for &c in &result.support {
        let coef: Complex64 = result.estimate[c];
        r -= a_bar.column(c) * coef;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block_geometry::{block_index_set, valid_blocks};
    use crate::spectral_channel::complex_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> CMatrix {
        CMatrix::from_fn(m, n, |_, _| complex_gaussian(rng, 1.0))
    }

    fn random_vector(rng: &mut ChaCha8Rng, m: usize) -> CVector {
        CVector::from_fn(m, |_, _| complex_gaussian(rng, 1.0))
    }

    #[test]
    fn least_squares_identity_and_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_vector(&mut rng, 5);
        let x = least_squares(&CMatrix::identity(5, 5), &y).unwrap();
        assert!((x - &y).norm() < 1e-12);

        let mut a = random_vector(&mut rng, 5);
        a /= Complex64::from(a.norm());
        let a_mat = CMatrix::from_columns(&[a.clone()]);
        let x = least_squares(&a_mat, &y).unwrap();
        assert!((x[0] - a.dotc(&y)).norm() < 1e-12);
    }

    #[test]
    fn least_squares_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 10, 4);
        let y = random_vector(&mut rng, 10);
        let x = least_squares(&a, &y).unwrap();
        let r = &y - &a * &x;
        assert!(a.ad_mul(&r).norm() <= 1e-10);
    }

    #[test]
    fn least_squares_minimum_norm_for_wide_and_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // wide: minimum-norm solution lies in the row space
        let a = random_matrix(&mut rng, 3, 6);
        let y = random_vector(&mut rng, 3);
        let x = least_squares(&a, &y).unwrap();
        assert!((&a * &x - &y).norm() < 1e-10);
        let pinv = a.adjoint() * (&a * a.adjoint()).try_inverse().unwrap() * &y;
        assert!((x - pinv).norm() < 1e-10);

        // duplicated column: both copies share the coefficient equally
        let col = random_vector(&mut rng, 6);
        let a = CMatrix::from_columns(&[col.clone(), col.clone()]);
        let y = &col * Complex64::new(2.0, -1.0);
        let x = least_squares(&a, &y).unwrap();
        assert!((x[0] - Complex64::new(1.0, -0.5)).norm() < 1e-10);
        assert!((x[1] - Complex64::new(1.0, -0.5)).norm() < 1e-10);
    }

    #[test]
    fn least_squares_rejects_mismatch() {
        assert!(least_squares(&CMatrix::zeros(3, 2), &CVector::zeros(4)).is_err());
    }

    #[test]
    fn default_tau_rules() {
        let a = CMatrix::identity(4, 4);
        assert_eq!(default_tau(0.0, &a), NOISELESS_TAU);
        // unit-norm columns, N = e columns is not an integer; check ln scaling instead
        let a3 = CMatrix::identity(3, 3);
        assert!((default_tau(1.0, &a3) - 2.0 * 3f64.ln()).abs() < 1e-15);
        let mut scaled = CMatrix::identity(3, 3);
        scaled[(0, 0)] = Complex64::new(2.0, 0.0);
        assert!((default_tau(0.5, &scaled) - 4.0 * 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn zero_observation_selects_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_matrix(&mut rng, 10, 16);
        let blocks = valid_blocks(4, 4, 2, 0).unwrap();
        let res = gbomp(&CVector::zeros(10), &a, &blocks, &SolverConfig::new(3, 1e-12)).unwrap();
        assert!(res.support.is_empty());
        assert!(res.selected.is_empty());
        assert!(res.residual_norms.is_empty());
        assert_eq!(res.estimate, CVector::zeros(16));
    }

    #[test]
    fn noiseless_single_block_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, q, b) = (6, 5, 2);
        let a = random_matrix(&mut rng, 20, p * q);
        let block = block_index_set(6, 5, b, p, q).unwrap();
        let mut e = CVector::zeros(p * q);
        for c in block.columns() {
            e[c] = complex_gaussian(&mut rng, 1.0);
        }
        let y = &a * &e;
        let res = gbomp(
            &y,
            &a,
            &valid_blocks(p, q, b, 0).unwrap(),
            &SolverConfig::new(2, NOISELESS_TAU),
        )
        .unwrap();
        assert!(block.columns().all(|c| res.support.contains(&c)));
        assert!(*res.residual_norms.last().unwrap() <= 1e-8);
        assert!((res.estimate - e).norm() <= 1e-8);
    }

    #[test]
    fn dimension_mismatches_are_errors() {
        let a = CMatrix::zeros(5, 8);
        let blocks = valid_blocks(4, 2, 2, 0).unwrap();
        assert!(gbomp(&CVector::zeros(4), &a, &blocks, &SolverConfig::new(1, 0.0)).is_err());
        let too_big = valid_blocks(4, 4, 2, 0).unwrap();
        assert!(gbomp(&CVector::zeros(5), &a, &too_big, &SolverConfig::new(1, 0.0)).is_err());
        assert!(gbomp(&CVector::zeros(5), &a, &blocks, &SolverConfig::new(0, 0.0)).is_err());
        assert!(gbomp(&CVector::zeros(5), &a, &blocks, &SolverConfig::new(1, -1.0)).is_err());
    }

    #[test]
    fn omp_matched_filter_picks_the_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut a = random_matrix(&mut rng, 12, 30);
        for mut col in a.column_iter_mut() {
            let n = col.norm();
            col /= Complex64::from(n);
        }
        let j = 17;
        let y = a.column(j).into_owned();
        let res = omp(&y, &a, &SolverConfig::new(1, NOISELESS_TAU)).unwrap();
        assert_eq!(res.support, vec![j]);
    }

    #[test]
    fn unit_blocks_reduce_to_omp() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (p, q) = (4, 5);
        let a = random_matrix(&mut rng, 9, p * q);
        let y = random_vector(&mut rng, 9);
        let cfg = SolverConfig::new(4, 0.0);
        let g = gbomp(&y, &a, &valid_blocks(p, q, 1, 0).unwrap(), &cfg).unwrap();
        let o = omp(&y, &a, &cfg).unwrap();
        assert_eq!(g.support, o.support);
        assert_eq!(g.residual_norms, o.residual_norms);
        assert_eq!(g.estimate, o.estimate);
    }

    #[test]
    fn omp_residual_is_orthogonal_to_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_matrix(&mut rng, 15, 40);
        let y = random_vector(&mut rng, 15);
        let res = omp(&y, &a, &SolverConfig::new(6, 0.0)).unwrap();
        assert_eq!(res.support.len(), 6);
        let r = residual_of(&y, &a, &res);
        assert!(support_correlation(&a, &res.support, &r) <= 1e-8);
    }

    #[test]
    fn segment_limit_masks_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let len = 8;
        let a = random_matrix(&mut rng, 12, 3 * len);
        let y = random_vector(&mut rng, 12);
        let blocks = crate::block_geometry::valid_blocks_1d(len, 2, 0).unwrap().stacked(3);
        let cfg = SolverConfig::new(3, 0.0).one_block_per_segment(len);
        let res = gbomp(&y, &a, &blocks, &cfg).unwrap();
        let mut segs: Vec<_> = res.selected.iter().map(|s| s.segment).collect();
        segs.sort_unstable();
        assert_eq!(segs, vec![0, 1, 2]);

        let omp_cfg = cfg.for_omp(2);
        assert_eq!(omp_cfg.max_blocks, 6);
        let res = omp(&y, &a, &omp_cfg).unwrap();
        for s in 0..3 {
            let n = res.support.iter().filter(|&&c| c / len == s).count();
            assert_eq!(n, 2);
        }
    }

    #[test]
    fn ties_go_to_the_first_anchor() {
        // identical columns give identical scores everywhere
        let a = CMatrix::from_element(3, 4, Complex64::new(1.0, 0.0));
        let y = CVector::from_element(3, Complex64::new(1.0, 0.0));
        let blocks = valid_blocks(2, 2, 1, 0).unwrap();
        let res = gbomp(&y, &a, &blocks, &SolverConfig::new(1, 0.0)).unwrap();
        assert_eq!(res.selected[0].anchor, BlockAnchor { p: 1, q: 1 });
    }
}
