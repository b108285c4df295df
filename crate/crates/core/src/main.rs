use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use tvrir::dtw::{self, DtwOptions};
use tvrir::harness::io::{self, RirSet};
use tvrir::harness::{self, misalignment, ExperimentConfig, Scenario};
use tvrir::kalman::{run_filter, Algorithm};
use tvrir::signal::Observation;
use tvrir::transition::{fill_identity_rows, TransitionMatrix};
use tvrir::{Error, Result};

/// Early time-varying RIR estimation along a linear microphone trajectory.
#[derive(Parser, Debug)]
#[command(name = "tvrir", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Config file (flat TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Base seed for excitation and measurement noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of realizations averaged per parameter point.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Spatial downsampling factor.
    #[arg(long, global = true)]
    omega: Option<usize>,
    /// Fraction of the trajectory used, in (0, 1].
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Measurement SNR in dB (noiseless when omitted).
    #[arg(long, global = true, allow_hyphen_values = true)]
    snr: Option<f64>,
    /// Highest simulated reflection order.
    #[arg(long, global = true)]
    max_order: Option<u32>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the ground-truth RIR set, excitation and observation.
    Simulate {
        /// Also write the RIRs as raw little-endian f64 with a `.hdr` sidecar.
        #[arg(long)]
        raw: bool,
    },
    /// Write the analytical transition matrix built from exact first-order TOAs.
    Transition {
        /// Put ones on the diagonal of empty rows.
        #[arg(long)]
        fill_identity: bool,
    },
    /// Estimate the transition matrix from two RIR files.
    Dtw {
        /// RIR CSV whose first row is the start-point RIR.
        #[arg(long)]
        start: PathBuf,
        /// RIR CSV whose last row is the end-point RIR.
        #[arg(long)]
        end: PathBuf,
        /// Number of trajectory locations (derived from the config when omitted).
        #[arg(long)]
        locations: Option<usize>,
        /// Also dump the accumulated cost matrix and warping path.
        #[arg(long)]
        dump: bool,
    },
    /// Run one algorithm on stored signals.
    Filter {
        /// LI-A, KF-alpha, KF-A or KF-A_dtw.
        #[arg(long)]
        algorithm: Algorithm,
        /// Ground-truth RIR CSV; row 0 initialises the filter.
        #[arg(long)]
        rirs: PathBuf,
        /// Observation CSV (l,k,y).
        #[arg(long)]
        observation: PathBuf,
        /// Excitation CSV (k,x).
        #[arg(long)]
        excitation: PathBuf,
        /// Transition matrix triplets (row,col,value); otherwise built from the config or by DTW.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Measurement noise variance R.
        #[arg(long, default_value_t = 0.0)]
        noise_variance: f64,
    },
    /// Reproduce one of the four experiments.
    Experiment {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=4))]
        id: u8,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = c.omega {
        cfg.omega = v;
    }
    if let Some(v) = c.scale {
        cfg.scale = v;
    }
    if c.snr.is_some() {
        cfg.snr_db = c.snr;
    }
    if let Some(v) = c.max_order {
        cfg.max_order = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_matrix(out: &Path, stem: &str, a: &TransitionMatrix) -> Result<()> {
    io::write_matrix_triplets(&out.join(format!("{stem}.csv")), a)?;
    io::write_atomic(&out.join(format!("{stem}.txt")), a.block_summary().as_bytes())
}

fn simulate(cfg: &ExperimentConfig, out: &Path, raw: bool) -> Result<()> {
    let s = Scenario::new(cfg, cfg.omega, cfg.max_order)?;
    let set = s.rir_set()?;
    io::write_rir_csv(&out.join("rirs.csv"), &set)?;
    if raw {
        io::write_rir_raw(&out.join("rirs.f64"), &set)?;
    }
    let x = s.excitation(cfg.excitation_variance(), cfg.seed);
    let obs = s.observation(&x, cfg.snr_db, cfg.seed)?;
    io::write_excitation_csv(&out.join("excitation.csv"), &x)?;
    io::write_observation_csv(&out.join("observation.csv"), &obs)?;
    info!(
        "wrote {} RIRs of {} taps to {}",
        set.num_locations(),
        set.taps,
        out.display()
    );
    println!("noise_variance = {}", obs.noise_variance);
    Ok(())
}

fn dtw_cmd(
    cfg: &ExperimentConfig,
    out: &Path,
    start: &Path,
    end: &Path,
    locations: Option<usize>,
    dump: bool,
) -> Result<()> {
    let a = io::read_rir_csv(start)?;
    let b = io::read_rir_csv(end)?;
    let h0 = a
        .first()
        .ok_or_else(|| Error::Config(format!("{} holds no RIR", start.display())))?;
    let h_end = b
        .last()
        .ok_or_else(|| Error::Config(format!("{} holds no RIR", end.display())))?;
    let num = match locations {
        Some(n) => n,
        None => Scenario::new(cfg, cfg.omega, cfg.max_order)?.num_locations(),
    };
    let ts = 1.0 / a.fs;
    let eps = 0.5 * cfg.epsilon_samples as f64 * ts;
    let opts = DtwOptions {
        min_segment_len: cfg.dtw_min_segment_len,
        rel_threshold: cfg.dtw_rel_threshold,
        local_cost: cfg.dtw_cost.parse()?,
    };
    let est = dtw::estimate(h0, h_end, num, eps, ts, opts)?;
    write_matrix(out, "dtw_matrix", &est.matrix)?;
    if dump {
        io::write_cost_csv(&out.join("dtw_cost.csv"), &est.cost)?;
        io::write_path_csv(&out.join("dtw_path.csv"), &est.path)?;
    }
    println!("{} reflection tracks", est.tracks.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn filter_cmd(
    cfg: &ExperimentConfig,
    out: &Path,
    algorithm: Algorithm,
    rirs: &Path,
    observation: &Path,
    excitation: &Path,
    matrix: Option<&Path>,
    noise_variance: f64,
) -> Result<()> {
    let set: RirSet = io::read_rir_csv(rirs)?;
    let (omega, y) = io::read_observation_csv(observation)?;
    let x = io::read_excitation_csv(excitation)?;
    if y.len() != set.num_locations() {
        return Err(Error::Dimension {
            expected: set.num_locations(),
            got: y.len(),
        });
    }
    let h0 = set.first().ok_or_else(|| Error::Config("empty RIR set".into()))?;
    let ts = 1.0 / set.fs;
    let eps = 0.5 * cfg.epsilon_samples as f64 * ts;
    let a = match (algorithm, matrix) {
        (Algorithm::KfAlpha, _) => None,
        (_, Some(p)) => Some(TransitionMatrix::from_triplets(
            set.taps,
            &io::read_matrix_triplets(p)?,
        )?),
        (Algorithm::KfDtw, None) => Some(dtw::build_dtw_matrix(
            h0,
            set.last().unwrap_or(h0),
            set.num_locations(),
            eps,
            ts,
        )?),
        (_, None) => {
            let mut c = cfg.clone();
            c.omega = omega;
            let s = Scenario::new(&c, omega, 1)?;
            if s.num_locations() != set.num_locations() {
                return Err(Error::Config(format!(
                    "config yields {} locations but {} holds {}",
                    s.num_locations(),
                    rirs.display(),
                    set.num_locations()
                )));
            }
            let a = s.analytical_matrix(false)?;
            Some(if algorithm == Algorithm::LiA && cfg.li_fill_identity {
                fill_identity_rows(&a)
            } else {
                a
            })
        }
    };
    let obs = Observation {
        y,
        omega,
        noise_variance,
    };
    let kcfg = cfg.kalman(noise_variance);
    let mut curve = Vec::with_capacity(obs.len());
    run_filter(algorithm, a.as_ref(), &obs, &x, &kcfg, h0, |l, h| {
        curve.push(misalignment(h, &set.rirs[l])?);
        Ok(())
    })?;
    let positions: Vec<f64> = (0..curve.len())
        .map(|l| l as f64 * omega as f64 * cfg.mic_velocity / set.fs)
        .collect();
    io::write_curves_csv(
        &out.join("filter.csv"),
        &positions,
        &[algorithm.name()],
        &[curve.clone()],
    )?;
    println!("{algorithm}: interior mean {} dB", harness::interior_mean(&curve));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out = cli.common.out.as_path();
    std::fs::create_dir_all(out)?;
    match cli.command {
        Command::Simulate { raw } => simulate(&cfg, out, raw),
        Command::Transition { fill_identity } => {
            let s = Scenario::new(&cfg, cfg.omega, cfg.max_order)?;
            write_matrix(out, "transition", &s.analytical_matrix(fill_identity)?)
        }
        Command::Dtw {
            start,
            end,
            locations,
            dump,
        } => dtw_cmd(&cfg, out, &start, &end, locations, dump),
        Command::Filter {
            algorithm,
            rirs,
            observation,
            excitation,
            matrix,
            noise_variance,
        } => filter_cmd(
            &cfg,
            out,
            algorithm,
            &rirs,
            &observation,
            &excitation,
            matrix.as_deref(),
            noise_variance,
        ),
        Command::Experiment { id } => {
            for r in harness::run_experiment(id, &cfg, out)? {
                let means: Vec<String> = r
                    .curves
                    .iter()
                    .map(|c| format!("{}={:.2}", c.algorithm, c.interior_mean()))
                    .collect();
                println!("{} (L={}): {}", r.spec.name, r.num_locations, means.join(" "));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
