//! End-to-end estimation strategies and the beamforming-gain metric.
//!
//! * Method 1: every UE estimates its own channel from downlink pilots.
//! * Method 2: the BS estimates all channels jointly from simultaneous uplink
//!   pilots sent on a shared UE beam.
//! * Method 3: UEs run Method 1, then transmit on their estimated weights
//!   while the BS recovers one 1-D block per user.
//!
//! Each strategy is split into a *trial* (training, sensing matrices, noiseless
//! observations and unit-variance noise) and a solve at a given noise variance,
//! so one drawn trial can be evaluated at many SNRs and with both solvers.

use num_complex::Complex64;
use rand::Rng;

use crate::block_geometry::{valid_blocks, valid_blocks_1d, BlockCollection};
use crate::error::{invalid, Result};
use crate::gbomp::{default_tau, gbomp, omp, SolverConfig, SolverResult};
use crate::linalg::thin_svd;
use crate::spectral_channel::{ArrayGeometry, ChannelMatrix, KroneckerDictionary};
use crate::training::{
    method1_clean, method1_sensing, method2_clean, method2_sensing, method3_clean, method3_sensing, observe,
    standard_noise, TrainingSet,
};
use crate::{CMatrix, CVector};

/// Array sizes, recovery grid and block parameters shared by all strategies.
#[derive(Debug, Clone)]
pub struct SystemModel {
    bs: ArrayGeometry,
    ue: ArrayGeometry,
    oversampling: usize,
    block_size: usize,
    block_size_1d: usize,
    k_max: usize,
    dict: KroneckerDictionary,
    blocks_2d: BlockCollection,
    blocks_1d: BlockCollection,
}

impl SystemModel {
    pub fn new(
        bs: ArrayGeometry,
        ue: ArrayGeometry,
        oversampling: usize,
        block_size: usize,
        block_size_1d: usize,
        k_max: usize,
    ) -> Result<Self> {
        if oversampling < 1 {
            return Err(invalid("oversampling must be at least 1"));
        }
        if k_max < 1 {
            return Err(invalid("k_max must be at least 1"));
        }
        let dict = KroneckerDictionary::fourier(&bs, &ue, oversampling);
        let blocks_2d = valid_blocks(dict.grid_rows(), dict.grid_cols(), block_size, 0)?;
        let blocks_1d = valid_blocks_1d(dict.grid_rows(), block_size_1d, 0)?;
        Ok(Self {
            bs,
            ue,
            oversampling,
            block_size,
            block_size_1d,
            k_max,
            dict,
            blocks_2d,
            blocks_1d,
        })
    }

    pub fn bs(&self) -> &ArrayGeometry {
        &self.bs
    }

    pub fn ue(&self) -> &ArrayGeometry {
        &self.ue
    }

    pub fn oversampling(&self) -> usize {
        self.oversampling
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn block_size_1d(&self) -> usize {
        self.block_size_1d
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn dictionary(&self) -> &KroneckerDictionary {
        &self.dict
    }

    pub fn blocks_2d(&self) -> &BlockCollection {
        &self.blocks_2d
    }

    fn check_channels(&self, channels: &[ChannelMatrix]) -> Result<()> {
        if channels.is_empty() {
            return Err(invalid("at least one user is required"));
        }
        let (nb, nu) = (self.bs.n_antennas(), self.ue.n_antennas());
        if channels.iter().any(|h| h.n_bs() != nb || h.n_ue() != nu) {
            return Err(invalid(format!("channels must be {nb}x{nu}")));
        }
        Ok(())
    }
}

/// Greedy solver used for recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Recovery {
    GBomp,
    Omp,
}

/// Residual-correlation threshold rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// [`default_tau`] at the operating noise variance.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub recovery: Recovery,
    pub threshold: Threshold,
}

impl SolverSettings {
    pub fn new(recovery: Recovery) -> Self {
        Self {
            recovery,
            threshold: Threshold::Auto,
        }
    }

    fn solve(
        &self,
        y: &CVector,
        sensing: &CMatrix,
        blocks: &BlockCollection,
        block_area: usize,
        mut config: SolverConfig,
        noise_variance: f64,
    ) -> Result<SolverResult> {
        config.tau = match self.threshold {
            Threshold::Auto => default_tau(noise_variance, sensing),
            Threshold::Fixed(t) => t,
        };
        match self.recovery {
            Recovery::GBomp => gbomp(y, sensing, blocks, &config),
            Recovery::Omp => omp(y, sensing, &config.for_omp(block_area)),
        }
    }
}

/// Transmit/receive weights for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerPair {
    /// `ŵ`, length `N_b`.
    pub bs_weight: CVector,
    /// `f̂` (equivalently `û_opt`), length `N_u`.
    pub ue_weight: CVector,
    /// Set when no estimate was available and canonical vectors were used.
    pub degenerate: bool,
}

impl BeamformerPair {
    fn canonical(n_bs: usize, n_ue: usize) -> Self {
        Self {
            bs_weight: unit(n_bs),
            ue_weight: unit(n_ue),
            degenerate: true,
        }
    }
}

fn unit(n: usize) -> CVector {
    let mut e = CVector::zeros(n);
    e[0] = Complex64::new(1.0, 0.0);
    e
}

/// Rotates `v` so that its first non-negligible entry is real and positive.
fn normalize_phase(mut v: CVector) -> CVector {
    let floor = 1e-12 * v.camax();
    if let Some(z) = v.iter().find(|z| z.norm() > floor).copied() {
        v *= z.conj() / z.norm();
    }
    v
}

/// Left/right singular vectors of the largest singular value of `h`.
///
/// The zero matrix yields canonical basis vectors with `degenerate` set.
pub fn dominant_singular_pair(h: &ChannelMatrix) -> BeamformerPair {
    let m = h.as_matrix();
    if m.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
        return BeamformerPair::canonical(h.n_bs(), h.n_ue());
    }
    let Ok(svd) = thin_svd(m) else {
        return BeamformerPair::canonical(h.n_bs(), h.n_ue());
    };
    let u = svd.u.column(0).into_owned();
    let v = svd.v.column(0).into_owned();
    BeamformerPair {
        bs_weight: normalize_phase(u),
        ue_weight: normalize_phase(v),
        degenerate: false,
    }
}

/// `γ = (1/L) Σ_i |ŵ_i^H H_i f̂_i|²` on the true channels, with the per-user terms.
pub fn beamforming_gain(channels: &[ChannelMatrix], pairs: &[BeamformerPair]) -> Result<(f64, Vec<f64>)> {
    if channels.len() != pairs.len() {
        return Err(invalid(format!(
            "{} channels but {} beamformer pairs",
            channels.len(),
            pairs.len()
        )));
    }
    if channels.is_empty() {
        return Err(invalid("at least one user is required"));
    }
    let mut per_user = Vec::with_capacity(channels.len());
    for (h, pair) in channels.iter().zip(pairs) {
        if pair.bs_weight.len() != h.n_bs() || pair.ue_weight.len() != h.n_ue() {
            return Err(invalid("beamformer length does not match the channel"));
        }
        let hf = h.as_matrix() * &pair.ue_weight;
        per_user.push(pair.bs_weight.dotc(&hf).norm_sqr());
    }
    let gain = per_user.iter().sum::<f64>() / per_user.len() as f64;
    Ok((gain, per_user))
}

/// Result of one strategy run.
#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    /// Estimated channels; empty for Method 3, which never forms them at the BS.
    pub estimates: Vec<ChannelMatrix>,
    pub pairs: Vec<BeamformerPair>,
    pub gain: f64,
    pub per_user_gain: Vec<f64>,
    /// Every solver call of the run, in execution order.
    pub solves: Vec<SolverResult>,
}

impl StrategyOutcome {
    fn finish(
        channels: &[ChannelMatrix],
        estimates: Vec<ChannelMatrix>,
        pairs: Vec<BeamformerPair>,
        solves: Vec<SolverResult>,
    ) -> Result<Self> {
        let (gain, per_user_gain) = beamforming_gain(channels, &pairs)?;
        Ok(Self {
            estimates,
            pairs,
            gain,
            per_user_gain,
            solves,
        })
    }

    pub fn residual_histories(&self) -> Vec<&[f64]> {
        self.solves.iter().map(|s| s.residual_norms.as_slice()).collect()
    }
}

/// Drawn Method 1 trial: per-user sensing matrices, noiseless observations
/// and unit noise.
#[derive(Debug, Clone)]
pub struct DownlinkTrial {
    sensing: Vec<CMatrix>,
    clean: Vec<CVector>,
    noise: Vec<CVector>,
}

impl DownlinkTrial {
    /// Builds a trial from explicit training (one set per user) and unit noise.
    pub fn prepare(
        channels: &[ChannelMatrix],
        system: &SystemModel,
        training: &[TrainingSet],
        noise: Vec<CVector>,
    ) -> Result<Self> {
        system.check_channels(channels)?;
        if training.len() != channels.len() || noise.len() != channels.len() {
            return Err(invalid("need one training set and one noise vector per user"));
        }
        let mut sensing = Vec::with_capacity(channels.len());
        let mut clean = Vec::with_capacity(channels.len());
        for ((h, t), n) in channels.iter().zip(training).zip(&noise) {
            if n.len() != t.len() {
                return Err(invalid("noise length must equal the number of measurements"));
            }
            sensing.push(method1_sensing(system.dictionary(), t)?);
            clean.push(method1_clean(h, t)?);
        }
        Ok(Self { sensing, clean, noise })
    }

    /// Draws Bernoulli downlink training, then unit noise, from `rng`.
    pub fn draw<R: Rng + ?Sized>(
        channels: &[ChannelMatrix],
        system: &SystemModel,
        m: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if m < 1 {
            return Err(invalid("M must be at least 1"));
        }
        let training = TrainingSet::downlink(system.bs.n_antennas(), system.ue.n_antennas(), m, channels.len(), rng)?;
        let noise = (0..channels.len()).map(|_| standard_noise(m, rng)).collect();
        Self::prepare(channels, system, &training, noise)
    }

    fn estimate(
        &self,
        system: &SystemModel,
        settings: &SolverSettings,
        noise_variance: f64,
    ) -> Result<(Vec<ChannelMatrix>, Vec<BeamformerPair>, Vec<SolverResult>)> {
        let b2 = system.block_size * system.block_size;
        let mut estimates = Vec::new();
        let mut pairs = Vec::new();
        let mut solves = Vec::new();
        for ((a, clean), noise) in self.sensing.iter().zip(&self.clean).zip(&self.noise) {
            let y = observe(clean, noise, noise_variance)?;
            let result = settings.solve(
                &y,
                a,
                &system.blocks_2d,
                b2,
                SolverConfig::new(system.k_max, 0.0),
                noise_variance,
            )?;
            let h_hat = system.dict.synthesize_vec(result.estimate.as_slice());
            pairs.push(dominant_singular_pair(&h_hat));
            estimates.push(h_hat);
            solves.push(result);
        }
        Ok((estimates, pairs, solves))
    }

    pub fn run(
        &self,
        channels: &[ChannelMatrix],
        system: &SystemModel,
        settings: &SolverSettings,
        noise_variance: f64,
    ) -> Result<StrategyOutcome> {
        if channels.len() != self.clean.len() {
            return Err(invalid("trial was drawn for a different number of users"));
        }
        let (estimates, pairs, solves) = self.estimate(system, settings, noise_variance)?;
        StrategyOutcome::finish(channels, estimates, pairs, solves)
    }
}

/// Drawn Method 2 trial.
#[derive(Debug, Clone)]
pub struct JointUplinkTrial {
    sensing: CMatrix,
    clean: CVector,
    noise: CVector,
    users: usize,
}

impl JointUplinkTrial {
    pub fn prepare(
        channels: &[ChannelMatrix],
        system: &SystemModel,
        training: &TrainingSet,
        noise: CVector,
    ) -> Result<Self> {
        system.check_channels(channels)?;
        if noise.len() != training.len() {
            return Err(invalid("noise length must equal the number of measurements"));
        }
        Ok(Self {
            sensing: method2_sensing(system.dictionary(), training)?,
            clean: method2_clean(channels, training)?,
            noise,
            users: channels.len(),
        })
    }

    /// Draws shared-beam uplink training, then unit noise, from `rng`.
    pub fn draw<R: Rng + ?Sized>(
        channels: &[ChannelMatrix],
        system: &SystemModel,
        m: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if m < 1 {
            return Err(invalid("M must be at least 1"));
        }
        let training = TrainingSet::bernoulli(system.bs.n_antennas(), system.ue.n_antennas(), m, channels.len(), rng)?;
        let noise = standard_noise(m, rng);
        Self::prepare(channels, system, &training, noise)
    }

    pub fn run(
        &self,
        channels: &[ChannelMatrix],
        system: &SystemModel,
        settings: &SolverSettings,
        noise_variance: f64,
    ) -> Result<StrategyOutcome> {
        if channels.len() != self.users {
            return Err(invalid("trial was drawn for a different number of users"));
        }
        let y = observe(&self.clean, &self.noise, noise_variance)?;
        let blocks = system.blocks_2d.stacked(self.users);
        let b2 = system.block_size * system.block_size;
        let result = settings.solve(
            &y,
            &self.sensing,
            &blocks,
            b2,
            SolverConfig::new(self.users * system.k_max, 0.0),
            noise_variance,
        )?;
        let seg = system.dict.n_atoms();
        let mut estimates = Vec::with_capacity(self.users);
        let mut pairs = Vec::with_capacity(self.users);
        for i in 0..self.users {
            let h_hat = system
                .dict
                .synthesize_vec(&result.estimate.as_slice()[i * seg..(i + 1) * seg]);
            pairs.push(dominant_singular_pair(&h_hat));
            estimates.push(h_hat);
        }
        StrategyOutcome::finish(channels, estimates, pairs, vec![result])
    }
}

/// Drawn Method 3 trial: a downlink phase plus second-phase uplink training.
#[derive(Debug, Clone)]
pub struct TwoStageTrial {
    phase1: DownlinkTrial,
    training2: TrainingSet,
    sensing2: CMatrix,
    noise2: CVector,
}

impl TwoStageTrial {
    pub fn prepare(
        phase1: DownlinkTrial,
        system: &SystemModel,
        training2: TrainingSet,
        noise2: CVector,
    ) -> Result<Self> {
        if noise2.len() != training2.len() {
            return Err(invalid("noise length must equal the number of measurements"));
        }
        if training2.users() != phase1.clean.len() {
            return Err(invalid("second-phase training has the wrong number of users"));
        }
        let sensing2 = method3_sensing(system.dict.f_bs(), &training2)?;
        Ok(Self {
            phase1,
            training2,
            sensing2,
            noise2,
        })
    }

    /// Draws the downlink phase with `m1` measurements, then the second-phase
    /// training and noise with `m2`.
    pub fn draw<R: Rng + ?Sized>(
        channels: &[ChannelMatrix],
        system: &SystemModel,
        m1: usize,
        m2: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if m1 < 1 || m2 < 1 {
            return Err(invalid("both phases need at least one measurement"));
        }
        let phase1 = DownlinkTrial::draw(channels, system, m1, rng)?;
        let training2 = TrainingSet::fixed_ue_weights(system.bs.n_antennas(), m2, channels.len(), rng)?;
        let noise2 = standard_noise(m2, rng);
        Self::prepare(phase1, system, training2, noise2)
    }

    pub fn run(
        &self,
        channels: &[ChannelMatrix],
        system: &SystemModel,
        settings: &SolverSettings,
        noise_variance: f64,
    ) -> Result<StrategyOutcome> {
        let (_, phase1_pairs, mut solves) = self.phase1.estimate(system, settings, noise_variance)?;
        let ue_weights: Vec<CVector> = phase1_pairs.iter().map(|p| p.ue_weight.clone()).collect();

        let clean = method3_clean(channels, &ue_weights, &self.training2)?;
        let y = observe(&clean, &self.noise2, noise_variance)?;
        let users = channels.len();
        let seg = system.dict.grid_rows();
        let blocks = system.blocks_1d.stacked(users);
        let config = SolverConfig::new(users, 0.0).one_block_per_segment(seg);
        let result = settings.solve(
            &y,
            &self.sensing2,
            &blocks,
            system.block_size_1d,
            config,
            noise_variance,
        )?;

        let f_bs = system.dict.f_bs();
        let mut pairs = Vec::with_capacity(users);
        for (i, (ue_weight, p1)) in ue_weights.into_iter().zip(&phase1_pairs).enumerate() {
            let coeffs = result.estimate.rows(i * seg, seg);
            let w = f_bs * coeffs;
            let norm = w.norm();
            if norm > 0.0 {
                pairs.push(BeamformerPair {
                    bs_weight: normalize_phase(w / Complex64::from(norm)),
                    ue_weight,
                    degenerate: p1.degenerate,
                });
            } else {
                pairs.push(BeamformerPair {
                    bs_weight: unit(f_bs.nrows()),
                    ue_weight,
                    degenerate: true,
                });
            }
        }
        solves.push(result);
        StrategyOutcome::finish(channels, Vec::new(), pairs, solves)
    }
}

/// Method 1 end to end: training, noise and recovery all drawn from `rng`.
pub fn run_method1<R: Rng + ?Sized>(
    channels: &[ChannelMatrix],
    system: &SystemModel,
    m: usize,
    settings: &SolverSettings,
    noise_variance: f64,
    rng: &mut R,
) -> Result<StrategyOutcome> {
    DownlinkTrial::draw(channels, system, m, rng)?.run(channels, system, settings, noise_variance)
}

/// Method 2 end to end.
pub fn run_method2<R: Rng + ?Sized>(
    channels: &[ChannelMatrix],
    system: &SystemModel,
    m: usize,
    settings: &SolverSettings,
    noise_variance: f64,
    rng: &mut R,
) -> Result<StrategyOutcome> {
    JointUplinkTrial::draw(channels, system, m, rng)?.run(channels, system, settings, noise_variance)
}

/// Method 3 end to end with `m1` downlink and `m2` uplink measurements.
pub fn run_method3<R: Rng + ?Sized>(
    channels: &[ChannelMatrix],
    system: &SystemModel,
    m1: usize,
    m2: usize,
    settings: &SolverSettings,
    noise_variance: f64,
    rng: &mut R,
) -> Result<StrategyOutcome> {
    TwoStageTrial::draw(channels, system, m1, m2, rng)?.run(channels, system, settings, noise_variance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_channel::{wrap_phase, MultipathChannel, PathComponent};
    use crate::training::TrainingSet;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, k: usize) -> CMatrix {
        CMatrix::from_fn(r, k, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn small_system(block: usize, k_max: usize) -> SystemModel {
        SystemModel::new(
            ArrayGeometry::half_wavelength(8).unwrap(),
            ArrayGeometry::half_wavelength(4).unwrap(),
            2,
            block,
            2,
            k_max,
        )
        .unwrap()
    }

    /// Single path whose spatial frequencies sit on the 2x-oversampled grid.
    fn on_grid_path(system: &SystemModel, k_bs: usize, k_ue: usize, gain: Complex64) -> ChannelMatrix {
        let (nb, nu) = (system.bs().n_antennas() as f64, system.ue().n_antennas() as f64);
        MultipathChannel::new(vec![PathComponent {
            gain,
            omega_bs: wrap_phase(2.0 * PI * k_bs as f64 / (2.0 * nb)),
            omega_ue: wrap_phase(2.0 * PI * k_ue as f64 / (2.0 * nu)),
        }])
        .unwrap()
        .matrix(system.bs(), system.ue())
    }

    /// Largest eigenvalue of `H^H H` by power iteration.
    fn power_iteration(h: &CMatrix) -> f64 {
        let g = h.adjoint() * h;
        let mut x = CVector::from_element(g.ncols(), c(1.0, 0.3));
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let y = &g * &x;
            lambda = y.norm() / x.norm();
            x = &y / c(y.norm(), 0.0);
        }
        lambda
    }

    #[test]
    fn rank_one_pair_recovers_factors() {
        let u = CVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let v = CVector::from_vec(vec![c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let h = ChannelMatrix::new(&u * v.adjoint() * c(3.0, 0.0));
        let pair = dominant_singular_pair(&h);
        assert!(!pair.degenerate);
        assert!((pair.bs_weight[0] - c(0.6, 0.0)).norm() < 1e-12);
        assert!((pair.bs_weight[1] - c(0.0, 0.8)).norm() < 1e-12);
        assert!((pair.ue_weight[0] - c(1.0, 0.0)).norm() < 1e-12);
        let (gain, _) = beamforming_gain(std::slice::from_ref(&h), &[pair]).unwrap();
        assert!((gain - 9.0).abs() < 1e-12);
    }

    #[test]
    fn identity_returns_first_basis_vectors() {
        let h = ChannelMatrix::new(CMatrix::identity(2, 2));
        let pair = dominant_singular_pair(&h);
        assert!((pair.bs_weight[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!(pair.bs_weight[1].norm() < 1e-12);
        assert!((pair.ue_weight[0] - c(1.0, 0.0)).norm() < 1e-12);
        let (gain, _) = beamforming_gain(&[h], &[pair]).unwrap();
        assert!((gain - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_is_flagged_degenerate() {
        let pair = dominant_singular_pair(&ChannelMatrix::zeros(3, 2));
        assert!(pair.degenerate);
        assert_eq!(pair.bs_weight[0], c(1.0, 0.0));
        assert_eq!(pair.ue_weight[0], c(1.0, 0.0));
    }

    #[test]
    fn dominant_gain_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let h = random_matrix(&mut rng, 4, 3);
        let pair = dominant_singular_pair(&ChannelMatrix::new(h.clone()));
        assert!((pair.bs_weight.norm() - 1.0).abs() < 1e-12);
        assert!((pair.ue_weight.norm() - 1.0).abs() < 1e-12);
        assert!(pair.bs_weight[0].im.abs() < 1e-12 && pair.bs_weight[0].re > 0.0);
        let gain = pair.bs_weight.dotc(&(&h * &pair.ue_weight)).norm_sqr();
        assert!((gain - power_iteration(&h)).abs() < 1e-8);
    }

    #[test]
    fn gain_matches_hand_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let channels: Vec<_> = (0..2)
            .map(|_| ChannelMatrix::new(random_matrix(&mut rng, 3, 2)))
            .collect();
        let pairs: Vec<_> = (0..2)
            .map(|_| {
                let w = random_matrix(&mut rng, 3, 1).column(0).normalize();
                let f = random_matrix(&mut rng, 2, 1).column(0).normalize();
                BeamformerPair {
                    bs_weight: w,
                    ue_weight: f,
                    degenerate: false,
                }
            })
            .collect();
        let (gain, per_user) = beamforming_gain(&channels, &pairs).unwrap();
        for (i, (h, p)) in channels.iter().zip(&pairs).enumerate() {
            let mut s = c(0.0, 0.0);
            for r in 0..3 {
                for k in 0..2 {
                    s += p.bs_weight[r].conj() * h.as_matrix()[(r, k)] * p.ue_weight[k];
                }
            }
            assert!((per_user[i] - s.norm_sqr()).abs() < 1e-12);
        }
        assert!((gain - (per_user[0] + per_user[1]) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn gain_with_identity_channel_is_bounded_by_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let w = random_matrix(&mut rng, 3, 1).column(0).normalize();
            let f = random_matrix(&mut rng, 3, 1).column(0).normalize();
            let pair = BeamformerPair {
                bs_weight: w.clone(),
                ue_weight: f.clone(),
                degenerate: false,
            };
            let (g, _) = beamforming_gain(&[ChannelMatrix::new(CMatrix::identity(3, 3))], &[pair]).unwrap();
            assert!((g - w.dotc(&f).norm_sqr()).abs() < 1e-12);
            assert!(g <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn perfect_csi_gives_mean_top_singular_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let channels: Vec<_> = (0..3)
            .map(|_| ChannelMatrix::new(random_matrix(&mut rng, 5, 4)))
            .collect();
        let pairs: Vec<_> = channels.iter().map(dominant_singular_pair).collect();
        let (gain, _) = beamforming_gain(&channels, &pairs).unwrap();
        let bound = channels.iter().map(|h| h.max_singular_value_sqr()).sum::<f64>() / 3.0;
        assert!((gain - bound).abs() < 1e-10 * bound);
    }

    #[test]
    fn gain_rejects_length_mismatch() {
        let h = ChannelMatrix::new(CMatrix::identity(2, 2));
        assert!(beamforming_gain(std::slice::from_ref(&h), &[]).is_err());
        let pair = dominant_singular_pair(&ChannelMatrix::new(CMatrix::identity(3, 2)));
        assert!(beamforming_gain(&[h], &[pair]).is_err());
    }

    #[test]
    fn gain_is_phase_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = ChannelMatrix::new(random_matrix(&mut rng, 4, 3));
        let estimate = random_matrix(&mut rng, 4, 3);
        let base = beamforming_gain(
            std::slice::from_ref(&truth),
            &[dominant_singular_pair(&ChannelMatrix::new(estimate.clone()))],
        )
        .unwrap()
        .0;
        for theta in [0.3, 1.7, -2.9] {
            let rotated = ChannelMatrix::new(&estimate * Complex64::from_polar(1.0, theta));
            let g = beamforming_gain(std::slice::from_ref(&truth), &[dominant_singular_pair(&rotated)])
                .unwrap()
                .0;
            assert!((g - base).abs() < 1e-12);
        }
    }

    #[test]
    fn method1_exact_for_on_grid_single_path() {
        let system = small_system(1, 1);
        let h = on_grid_path(&system, 5, 3, c(0.7, -0.4));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let out = run_method1(
            std::slice::from_ref(&h),
            &system,
            12,
            &SolverSettings::new(Recovery::GBomp),
            0.0,
            &mut rng,
        )
        .unwrap();
        assert!((out.gain - h.max_singular_value_sqr()).abs() < 1e-9);
        assert_eq!(out.estimates.len(), 1);
    }

    #[test]
    fn method2_single_user_matches_method1() {
        let system = small_system(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let channels: Vec<_> = vec![ChannelMatrix::new(random_matrix(&mut rng, 8, 4))];
        let m = 20;
        let dl = TrainingSet::downlink(8, 4, m, 1, &mut rng).unwrap();
        let ul = TrainingSet::new(
            dl[0].bs_beams().to_vec(),
            dl[0].ue_beams().to_vec(),
            DMatrix::from_element(m, 1, 1.0),
        )
        .unwrap();
        let noise = crate::training::standard_noise(m, &mut rng);
        let t1 = DownlinkTrial::prepare(&channels, &system, &dl, vec![noise.clone()]).unwrap();
        let t2 = JointUplinkTrial::prepare(&channels, &system, &ul, noise).unwrap();
        for solver in [Recovery::GBomp, Recovery::Omp] {
            let settings = SolverSettings::new(solver);
            let a = t1.run(&channels, &system, &settings, 0.1).unwrap();
            let b = t2.run(&channels, &system, &settings, 0.1).unwrap();
            assert_eq!(a.gain, b.gain);
            assert_eq!(a.pairs, b.pairs);
            assert_eq!(a.estimates[0].as_matrix(), b.estimates[0].as_matrix());
            assert_eq!(a.solves[0].support, b.solves[0].support);
        }
    }

    #[test]
    fn method3_exact_for_single_path_channels() {
        let system = small_system(2, 1);
        let channels = vec![
            on_grid_path(&system, 3, 2, c(1.0, 0.5)),
            on_grid_path(&system, 12, 7, c(-0.4, 0.9)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let out = run_method3(
            &channels,
            &system,
            24,
            16,
            &SolverSettings::new(Recovery::GBomp),
            0.0,
            &mut rng,
        )
        .unwrap();
        assert!(out.estimates.is_empty());
        for (g, h) in out.per_user_gain.iter().zip(&channels) {
            assert!((g - h.max_singular_value_sqr()).abs() < 1e-6 * h.max_singular_value_sqr());
        }
    }

    #[test]
    fn method3_rejects_empty_phase() {
        let system = small_system(2, 1);
        let channels = vec![ChannelMatrix::zeros(8, 4)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let settings = SolverSettings::new(Recovery::GBomp);
        assert!(run_method3(&channels, &system, 10, 0, &settings, 0.1, &mut rng).is_err());
        assert!(run_method3(&channels, &system, 0, 10, &settings, 0.1, &mut rng).is_err());
    }

    #[test]
    fn null_channels_give_canonical_method3_weights() {
        let system = small_system(2, 1);
        let channels = vec![ChannelMatrix::zeros(8, 4); 2];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = run_method3(
            &channels,
            &system,
            10,
            10,
            &SolverSettings::new(Recovery::Omp),
            0.0,
            &mut rng,
        )
        .unwrap();
        assert!(out.pairs.iter().all(|p| p.degenerate));
        assert_eq!(out.gain, 0.0);
    }

    #[test]
    fn per_user_gain_never_exceeds_bound() {
        let system = small_system(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let channels: Vec<_> = (0..2)
            .map(|_| ChannelMatrix::new(random_matrix(&mut rng, 8, 4)))
            .collect();
        for settings in [SolverSettings::new(Recovery::GBomp), SolverSettings::new(Recovery::Omp)] {
            let outs = [
                run_method1(&channels, &system, 20, &settings, 0.5, &mut rng).unwrap(),
                run_method2(&channels, &system, 20, &settings, 0.5, &mut rng).unwrap(),
                run_method3(&channels, &system, 12, 8, &settings, 0.5, &mut rng).unwrap(),
            ];
            for out in outs {
                for (g, h) in out.per_user_gain.iter().zip(&channels) {
                    assert!(*g <= h.max_singular_value_sqr() + 1e-9);
                }
                let mean = out.per_user_gain.iter().sum::<f64>() / 2.0;
                assert!((out.gain - mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mismatched_channel_shapes_are_rejected() {
        let system = small_system(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let settings = SolverSettings::new(Recovery::GBomp);
        assert!(run_method1(&[ChannelMatrix::zeros(4, 4)], &system, 5, &settings, 0.1, &mut rng).is_err());
        assert!(run_method2(&[], &system, 5, &settings, 0.1, &mut rng).is_err());
    }
}
