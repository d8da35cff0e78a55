//! Seeded Monte Carlo sweeps over SNR and measurement budget.
//!
//! Every trial index `t` gets its own seed `split_seed(master_seed, t)`. From
//! that seed independent streams are derived for the channels and for each
//! method's training and noise. The same trial therefore sees the same
//! channels under every method, solver, SNR and `M`, and the noise at
//! different SNRs is one unit-variance draw rescaled. Output is independent of
//! thread scheduling: rows are sorted by `(method, solver, snr_db, M, trial)`
//! before they are written.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block_geometry::valid_blocks;
use crate::error::{Error, Result};
use crate::spectral_channel::{fourier_dictionary, grid_channel, physical_channel, ArrayGeometry, ChannelMatrix};
use crate::strategies::{
    DownlinkTrial, JointUplinkTrial, Recovery, SolverSettings, StrategyOutcome, SystemModel, Threshold, TwoStageTrial,
};

const STREAM_CHANNELS: u64 = 0;
const STREAM_METHOD1: u64 = 1;
const STREAM_METHOD2: u64 = 2;
const STREAM_METHOD3: u64 = 3;

/// SplitMix64 finalizer applied to `seed + (index + 1) * φ`, where φ is the
/// 64-bit golden-ratio increment.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split_seed(seed, id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Method1,
    Method2,
    Method3,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Method1 => "method1",
            Method::Method2 => "method2",
            Method::Method3 => "method3",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Gbomp,
    Omp,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Gbomp => "gbomp",
            Solver::Omp => "omp",
        }
    }

    fn recovery(self) -> Recovery {
        match self {
            Solver::Gbomp => Recovery::GBomp,
            Solver::Omp => Recovery::Omp,
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    /// Exactly block-sparse channels on the oversampled Fourier grid.
    Grid,
    /// Off-grid ULA multipath channels.
    Physical,
}

/// Sweep parameters. Defaults are the reference scenario: 32x16 arrays, four users, two paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// BS antennas `N_b`.
    pub n_bs: usize,
    /// UE antennas `N_u`.
    pub n_ue: usize,
    /// Number of users `L`.
    pub users: usize,
    /// Paths (grid blocks) per channel `K`.
    pub paths: usize,
    /// Per-user solver block budget `K_max`.
    pub k_max: usize,
    /// 2-D block size `b`.
    pub block_size: usize,
    /// 1-D block size used in the second phase of Method 3.
    pub block_size_1d: usize,
    /// Fourier grid oversampling `ρ`.
    pub oversampling: usize,
    pub d_over_lambda: f64,
    /// Path gain variance `σ_α²` (physical generator).
    pub gain_variance: f64,
    /// Total measurements for the SNR sweep.
    pub m: usize,
    /// Method 3 first-phase measurements for the SNR sweep; the rest go to
    /// the second phase. Defaults to `m1_fraction * m` when absent.
    pub m1: Option<usize>,
    /// Measurement budgets for the M sweep.
    pub m_list: Vec<usize>,
    /// First-phase share of `M` in the M sweep.
    pub m1_fraction: f64,
    pub snr_db_list: Vec<f64>,
    /// Fixed residual-correlation stopping threshold. Absent means the
    /// noise-floor rule evaluated at each SNR.
    pub tau: Option<f64>,
    /// SNR used by the M sweep.
    pub m_sweep_snr_db: f64,
    pub n_trials: usize,
    pub master_seed: u64,
    pub generator: Generator,
    pub methods: Vec<Method>,
    pub solvers: Vec<Solver>,
    pub output_path: PathBuf,
    /// Fill the `runtime_ms` column. Timings make the CSV nondeterministic.
    pub record_runtime: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_bs: 32,
            n_ue: 16,
            users: 4,
            paths: 2,
            k_max: 3,
            block_size: 2,
            block_size_1d: 4,
            oversampling: 2,
            d_over_lambda: 0.5,
            gain_variance: 1.0,
            m: 225,
            m1: Some(125),
            m_list: vec![75, 150, 225, 300],
            m1_fraction: 2.0 / 3.0,
            snr_db_list: vec![-20.0, -15.0, -10.0, -5.0, 0.0],
            tau: None,
            m_sweep_snr_db: -10.0,
            n_trials: 200,
            master_seed: 20_170_101,
            generator: Generator::Grid,
            methods: vec![Method::Method1, Method::Method2, Method::Method3],
            solvers: vec![Solver::Gbomp, Solver::Omp],
            output_path: PathBuf::from("results"),
            record_runtime: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Checks every field and reports all offending ones at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                bad.push(msg);
            }
        };
        need(self.n_bs >= 1, format!("n_bs must be >= 1 (got {})", self.n_bs));
        need(self.n_ue >= 1, format!("n_ue must be >= 1 (got {})", self.n_ue));
        need(self.users >= 1, format!("users must be >= 1 (got {})", self.users));
        need(self.paths >= 1, format!("paths must be >= 1 (got {})", self.paths));
        need(self.k_max >= 1, format!("k_max must be >= 1 (got {})", self.k_max));
        need(
            self.oversampling >= 1,
            format!("oversampling must be >= 1 (got {})", self.oversampling),
        );
        let (p, q) = (self.oversampling * self.n_bs, self.oversampling * self.n_ue);
        need(
            self.block_size >= 1 && self.block_size <= p.min(q),
            format!("block_size must lie in 1..={} (got {})", p.min(q), self.block_size),
        );
        need(
            self.block_size_1d >= 1 && self.block_size_1d <= p,
            format!("block_size_1d must lie in 1..={p} (got {})", self.block_size_1d),
        );
        need(
            self.d_over_lambda > 0.0 && self.d_over_lambda.is_finite(),
            format!("d_over_lambda must be positive (got {})", self.d_over_lambda),
        );
        need(
            self.gain_variance > 0.0 && self.gain_variance.is_finite(),
            format!("gain_variance must be positive (got {})", self.gain_variance),
        );
        need(self.m >= 1, format!("m must be >= 1 (got {})", self.m));
        if self.methods.contains(&Method::Method3) {
            let m1 = self.snr_sweep_m1();
            need(
                m1 >= 1 && m1 < self.m,
                format!(
                    "m1 must lie in 1..{} so both phases get measurements (got {m1})",
                    self.m
                ),
            );
        }
        need(
            self.m1_fraction > 0.0 && self.m1_fraction < 1.0,
            format!("m1_fraction must lie in (0, 1) (got {})", self.m1_fraction),
        );
        need(!self.m_list.is_empty(), "m_list must not be empty".into());
        for &m in &self.m_list {
            let m1 = self.split_m1(m);
            need(
                m >= 1 && (!self.methods.contains(&Method::Method3) || (m1 >= 1 && m1 < m)),
                format!("m_list entry {m} leaves a Method 3 phase without measurements"),
            );
        }
        need(!self.snr_db_list.is_empty(), "snr_db_list must not be empty".into());
        need(
            self.snr_db_list.iter().all(|s| s.is_finite()) && self.m_sweep_snr_db.is_finite(),
            "SNR values must be finite".into(),
        );
        need(
            self.tau.is_none_or(|t| t >= 0.0 && t.is_finite()),
            format!("tau must be a nonnegative number (got {:?})", self.tau),
        );
        need(
            self.n_trials >= 1,
            format!("n_trials must be >= 1 (got {})", self.n_trials),
        );
        need(!self.methods.is_empty(), "methods must not be empty".into());
        need(!self.solvers.is_empty(), "solvers must not be empty".into());
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    fn split_m1(&self, m: usize) -> usize {
        (self.m1_fraction * m as f64).round() as usize
    }

    fn snr_sweep_m1(&self) -> usize {
        self.m1.unwrap_or_else(|| self.split_m1(self.m))
    }

    pub fn solver_settings(&self, solver: Solver) -> SolverSettings {
        let mut settings = SolverSettings::new(solver.recovery());
        if let Some(t) = self.tau {
            settings.threshold = Threshold::Fixed(t);
        }
        settings
    }

    pub fn system(&self) -> Result<SystemModel> {
        SystemModel::new(
            ArrayGeometry::new(self.n_bs, self.d_over_lambda)?,
            ArrayGeometry::new(self.n_ue, self.d_over_lambda)?,
            self.oversampling,
            self.block_size,
            self.block_size_1d,
            self.k_max,
        )
    }

    /// Channels of every user for one trial seed.
    pub fn draw_channels(&self, trial_seed: u64) -> Result<Vec<ChannelMatrix>> {
        let bs = ArrayGeometry::new(self.n_bs, self.d_over_lambda)?;
        let ue = ArrayGeometry::new(self.n_ue, self.d_over_lambda)?;
        let mut rng = stream(trial_seed, STREAM_CHANNELS);
        let range = (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
        (0..self.users)
            .map(|_| match self.generator {
                Generator::Grid => {
                    grid_channel(&bs, &ue, self.paths, self.block_size, self.oversampling, &mut rng).map(|(_, h)| h)
                }
                Generator::Physical => {
                    physical_channel(&bs, &ue, self.paths, self.gain_variance, range, &mut rng).map(|(_, h)| h)
                }
            })
            .collect()
    }
}

/// Which axis a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// SNR over `snr_db_list` at fixed `m` (and `m1`).
    Snr,
    /// `M` over `m_list` at `m_sweep_snr_db`, with `M1 = m1_fraction * M`.
    Measurements,
}

impl SweepKind {
    pub fn file_stem(self) -> &'static str {
        match self {
            SweepKind::Snr => "snr_sweep",
            SweepKind::Measurements => "m_sweep",
        }
    }
}

/// One evaluated (method, solver, SNR, M, trial) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub solver: Solver,
    pub snr_db: f64,
    pub m: usize,
    pub trial: usize,
    pub gamma: f64,
    pub gamma_db: f64,
    pub per_user_gains: Vec<f64>,
    /// Upper bounds `σ_max(H_i)²` of the per-user gains.
    pub per_user_bounds: Vec<f64>,
    pub runtime_ms: Option<f64>,
    pub seed: u64,
}

/// Trial statistics of one (method, solver, SNR, M) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: Method,
    pub solver: Solver,
    pub snr_db: f64,
    pub m: usize,
    /// Mean γ over trials, in dB.
    pub mean_gamma_db: f64,
    /// Sample standard deviation of the per-trial `gamma_db`.
    pub std_gamma_db: f64,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub kind: SweepKind,
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl SweepOutput {
    pub fn aggregate(&self, method: Method, solver: Solver, snr_db: f64, m: usize) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.solver == solver && a.snr_db == snr_db && a.m == m)
    }
}

fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// (snr_db, M, M1) points evaluated by a sweep.
fn sweep_points(config: &ExperimentConfig, kind: SweepKind) -> Vec<(f64, usize, usize)> {
    match kind {
        SweepKind::Snr => {
            let m1 = config.snr_sweep_m1();
            config.snr_db_list.iter().map(|&s| (s, config.m, m1)).collect()
        }
        SweepKind::Measurements => config
            .m_list
            .iter()
            .map(|&m| (config.m_sweep_snr_db, m, config.split_m1(m)))
            .collect(),
    }
}

enum PreparedTrial {
    Downlink(DownlinkTrial),
    Joint(JointUplinkTrial),
    TwoStage(TwoStageTrial),
}

impl PreparedTrial {
    fn draw(
        method: Method,
        channels: &[ChannelMatrix],
        system: &SystemModel,
        m: usize,
        m1: usize,
        trial_seed: u64,
    ) -> Result<Self> {
        Ok(match method {
            Method::Method1 => {
                let mut rng = stream(trial_seed, STREAM_METHOD1);
                Self::Downlink(DownlinkTrial::draw(channels, system, m, &mut rng)?)
            }
            Method::Method2 => {
                let mut rng = stream(trial_seed, STREAM_METHOD2);
                Self::Joint(JointUplinkTrial::draw(channels, system, m, &mut rng)?)
            }
            Method::Method3 => {
                let mut rng = stream(trial_seed, STREAM_METHOD3);
                Self::TwoStage(TwoStageTrial::draw(channels, system, m1, m - m1, &mut rng)?)
            }
        })
    }

    fn run(
        &self,
        channels: &[ChannelMatrix],
        system: &SystemModel,
        settings: &SolverSettings,
        noise_variance: f64,
    ) -> Result<StrategyOutcome> {
        match self {
            Self::Downlink(t) => t.run(channels, system, settings, noise_variance),
            Self::Joint(t) => t.run(channels, system, settings, noise_variance),
            Self::TwoStage(t) => t.run(channels, system, settings, noise_variance),
        }
    }
}

fn run_trial(
    config: &ExperimentConfig,
    system: &SystemModel,
    points: &[(f64, usize, usize)],
    trial: usize,
) -> Result<Vec<ResultRow>> {
    let trial_seed = split_seed(config.master_seed, trial as u64);
    let channels = config.draw_channels(trial_seed)?;
    let bounds: Vec<f64> = channels.iter().map(|h| h.max_singular_value_sqr()).collect();

    // group SNR points by budget so each drawn trial is reused across SNRs
    let mut budgets: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for &(snr, m, m1) in points {
        budgets.entry((m, m1)).or_default().push(snr);
    }

    let mut rows = Vec::new();
    for &method in &config.methods {
        for (&(m, m1), snrs) in &budgets {
            let prepared = PreparedTrial::draw(method, &channels, system, m, m1, trial_seed)?;
            for &solver in &config.solvers {
                let settings = config.solver_settings(solver);
                for &snr_db in snrs {
                    let start = Instant::now();
                    let outcome = prepared.run(&channels, system, &settings, noise_variance(snr_db))?;
                    let elapsed = start.elapsed().as_secs_f64() * 1e3;
                    rows.push(ResultRow {
                        method,
                        solver,
                        snr_db,
                        m,
                        trial,
                        gamma: outcome.gain,
                        gamma_db: to_db(outcome.gain),
                        per_user_gains: outcome.per_user_gain,
                        per_user_bounds: bounds.clone(),
                        runtime_ms: config.record_runtime.then_some(elapsed),
                        seed: trial_seed,
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn row_order(a: &ResultRow, b: &ResultRow) -> std::cmp::Ordering {
    (a.method, a.solver)
        .cmp(&(b.method, b.solver))
        .then(a.snr_db.total_cmp(&b.snr_db))
        .then(a.m.cmp(&b.m))
        .then(a.trial.cmp(&b.trial))
}

/// Groups sorted rows into per-cell aggregates.
pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut out: Vec<AggregateRow> = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let head = &rows[start];
        let end = rows[start..]
            .iter()
            .position(|r| {
                r.method != head.method || r.solver != head.solver || r.snr_db != head.snr_db || r.m != head.m
            })
            .map_or(rows.len(), |k| start + k);
        let cell = &rows[start..end];
        let n = cell.len() as f64;
        let mean_gamma = cell.iter().map(|r| r.gamma).sum::<f64>() / n;
        let mean_db = cell.iter().map(|r| r.gamma_db).sum::<f64>() / n;
        let std_db = if cell.len() > 1 {
            (cell.iter().map(|r| (r.gamma_db - mean_db).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        out.push(AggregateRow {
            method: head.method,
            solver: head.solver,
            snr_db: head.snr_db,
            m: head.m,
            mean_gamma_db: to_db(mean_gamma),
            std_gamma_db: std_db,
            n_trials: cell.len(),
        });
        start = end;
    }
    out
}

/// Runs every (method, solver, point, trial) cell of a sweep in memory.
pub fn run_sweep(config: &ExperimentConfig, kind: SweepKind) -> Result<SweepOutput> {
    config.validate()?;
    let system = config.system()?;
    let points = sweep_points(config, kind);
    let per_trial: Vec<Vec<ResultRow>> = (0..config.n_trials)
        .into_par_iter()
        .map(|t| run_trial(config, &system, &points, t))
        .collect::<Result<_>>()?;
    let mut rows: Vec<ResultRow> = per_trial.into_iter().flatten().collect();
    rows.sort_by(row_order);
    let aggregates = aggregate(&rows);
    Ok(SweepOutput { kind, rows, aggregates })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    solver: &'a str,
    snr_db: f64,
    #[serde(rename = "M")]
    m: usize,
    trial: usize,
    gamma: f64,
    gamma_db: f64,
    runtime_ms: Option<f64>,
    seed: u64,
}

#[derive(Serialize)]
struct CsvAggregate<'a> {
    method: &'a str,
    solver: &'a str,
    snr_db: f64,
    #[serde(rename = "M")]
    m: usize,
    mean_gamma_db: f64,
    std_gamma_db: f64,
    n_trials: usize,
}

/// Writes `<stem>.csv` and `<stem>_aggregate.csv` into `dir`.
pub fn write_sweep(output: &SweepOutput, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let stem = output.kind.file_stem();
    let rows_path = dir.join(format!("{stem}.csv"));
    let agg_path = dir.join(format!("{stem}_aggregate.csv"));

    let mut w = csv::Writer::from_path(&rows_path)?;
    for r in &output.rows {
        w.serialize(CsvRow {
            method: r.method.name(),
            solver: r.solver.name(),
            snr_db: r.snr_db,
            m: r.m,
            trial: r.trial,
            gamma: r.gamma,
            gamma_db: r.gamma_db,
            runtime_ms: r.runtime_ms,
            seed: r.seed,
        })?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&agg_path)?;
    for a in &output.aggregates {
        w.serialize(CsvAggregate {
            method: a.method.name(),
            solver: a.solver.name(),
            snr_db: a.snr_db,
            m: a.m,
            mean_gamma_db: a.mean_gamma_db,
            std_gamma_db: a.std_gamma_db,
            n_trials: a.n_trials,
        })?;
    }
    w.flush()?;
    Ok((rows_path, agg_path))
}

/// Block-summed magnitude of the Fourier-domain channel.
///
/// `H^ω = F_bs^H H F_ue` is taken on the `ρ`-oversampled grid and cell
/// `(p, q)` holds the sum of `|H^ω|` over the wrapped `b x b` block anchored
/// there.
pub fn spectral_magnitude_dump(
    channel: &ChannelMatrix,
    oversampling: usize,
    block_size: usize,
) -> Result<DMatrix<f64>> {
    let f_bs = fourier_dictionary(channel.n_bs(), oversampling);
    let f_ue = fourier_dictionary(channel.n_ue(), oversampling);
    let spectral = f_bs.adjoint() * channel.as_matrix() * &f_ue;
    let (p, q) = spectral.shape();
    let magnitude: Vec<f64> = spectral.iter().map(|z| z.norm()).collect();
    let blocks = valid_blocks(p, q, block_size, 0)?;
    let mut out = DMatrix::zeros(p, q);
    for block in blocks.blocks() {
        let a = block.anchor();
        out[(a.p - 1, a.q - 1)] = block.columns().map(|c| magnitude[c]).sum();
    }
    Ok(out)
}

#[derive(Serialize)]
struct SpectrumCell {
    p: usize,
    q: usize,
    magnitude: f64,
}

/// Writes a spectrum dump as `p,q,magnitude` rows (1-based, column-major).
pub fn write_spectrum(spectrum: &DMatrix<f64>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for q in 0..spectrum.ncols() {
        for p in 0..spectrum.nrows() {
            w.serialize(SpectrumCell {
                p: p + 1,
                q: q + 1,
                magnitude: spectrum[(p, q)],
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
