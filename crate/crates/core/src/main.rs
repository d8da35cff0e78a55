use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mmwave_gbomp::experiment::{
    run_sweep, spectral_magnitude_dump, split_seed, write_spectrum, write_sweep, ExperimentConfig, Generator, SweepKind,
};
use mmwave_gbomp::spectral_channel::{grid_channel, physical_channel, ArrayGeometry};

/// Monte Carlo sweeps for multi-user mm-wave channel estimation with G-BOMP.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep SNR at a fixed measurement budget.
    SweepSnr(Common),
    /// Sweep the measurement budget at a fixed SNR.
    SweepM(Common),
    /// Write the block-summed spectral magnitude of one drawn channel.
    DumpSpectrum(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; unspecified fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo trials per cell.
    #[arg(long)]
    trials: Option<usize>,
    /// Record per-cell wall-clock time in `runtime_ms`.
    #[arg(long)]
    timing: bool,
}

impl Common {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.master_seed = seed;
        }
        if let Some(out) = &self.out {
            config.output_path = out.clone();
        }
        if let Some(trials) = self.trials {
            config.n_trials = trials;
        }
        config.record_runtime |= self.timing;
        config.validate()?;
        Ok(config)
    }
}

fn sweep(common: &Common, kind: SweepKind) -> anyhow::Result<()> {
    let config = common.config()?;
    let output = run_sweep(&config, kind)?;
    let (rows, agg) = write_sweep(&output, &config.output_path)
        .with_context(|| format!("writing results to {}", config.output_path.display()))?;
    for a in &output.aggregates {
        println!(
            "{:<8} {:<6} snr={:>6.1} dB  M={:>4}  gamma={:>8.3} dB  (sd {:.3}, n={})",
            a.method.name(),
            a.solver.name(),
            a.snr_db,
            a.m,
            a.mean_gamma_db,
            a.std_gamma_db,
            a.n_trials
        );
    }
    eprintln!("wrote {} and {}", rows.display(), agg.display());
    Ok(())
}

fn dump_spectrum(common: &Common) -> anyhow::Result<()> {
    let config = common.config()?;
    let bs = ArrayGeometry::new(config.n_bs, config.d_over_lambda)?;
    let ue = ArrayGeometry::new(config.n_ue, config.d_over_lambda)?;
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(config.master_seed, 0));
    let channel = match config.generator {
        Generator::Grid => grid_channel(&bs, &ue, config.paths, config.block_size, config.oversampling, &mut rng)?.1,
        Generator::Physical => {
            let range = (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
            physical_channel(&bs, &ue, config.paths, config.gain_variance, range, &mut rng)?.1
        }
    };
    let spectrum = spectral_magnitude_dump(&channel, config.oversampling, config.block_size)?;
    let path = config.output_path.join("spectrum.csv");
    write_spectrum(&spectrum, &path).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::SweepSnr(c) => sweep(&c, SweepKind::Snr),
        Command::SweepM(c) => sweep(&c, SweepKind::Measurements),
        Command::DumpSpectrum(c) => dump_spectrum(&c),
    }
}
