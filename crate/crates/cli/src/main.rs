mod cmd;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vcut::costmodel::MacConvention;
use vcut::equiv::EquivOptions;
use vcut::metrics::Metric;
use vcut::model::ModelSpec;
use vcut::sampler::{CachePolicy, SamplerMode};

use crate::cmd::sweep::ExperimentPlan;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "vcut", version, about = "Cross-attention surgery, sampling, cost and metric tools")]
struct Cli {
    /// Scalar type for model weights and sampling.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    dtype: Precision,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    ComputeOnce,
    RecomputeEveryStep,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded spec and weight directory.
    Init {
        /// tiny or toy-svd.
        #[arg(long, default_value = "toy-svd", conflicts_with = "spec")]
        preset: String,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Delete temporal cross-attention and fold spatial cross-attention.
    Surgery {
        #[arg(long)]
        spec: PathBuf,
        /// Weight directory; seeded from --init-seed when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        init_seed: u64,
    },
    /// Sample one trajectory.
    Run {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        init_seed: u64,
        #[arg(long, value_parser = parse_mode, default_value = "vcut")]
        mode: SamplerMode,
        #[arg(long, default_value_t = 25)]
        steps: usize,
        /// First single-pass step (default 17 for vcut, steps+1 otherwise).
        #[arg(long)]
        cut_step: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 700.0)]
        sigma_max: f64,
        #[arg(long, default_value_t = 0.002)]
        sigma_min: f64,
        #[arg(long, value_enum, default_value_t = Policy::ComputeOnce)]
        cache_policy: Policy,
        /// Conditional embedding ([D], [b, D] or [b, 1, D]); random from the seed when absent.
        #[arg(long)]
        embedding: Option<PathBuf>,
        /// Also write every step's noise prediction.
        #[arg(long)]
        save_eps: bool,
    },
    /// MACs, parameters and modeled latency of an architecture inventory.
    Cost {
        /// Inventory JSON; the bundled SVD UNet when absent.
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long, default_value_t = 14)]
        frames: usize,
        #[arg(long, default_value_t = 25)]
        steps: usize,
        #[arg(long, default_value_t = 17)]
        cut_step: usize,
        #[arg(long)]
        baseline_latency: Option<f64>,
        #[arg(long, value_parser = parse_convention, default_value = "op-counter")]
        convention: MacConvention,
        /// Also time the toy model (sanity only).
        #[arg(long)]
        measure: bool,
    },
    /// Score feature, frame or flow files.
    Metrics {
        #[arg(value_parser = parse_metric)]
        metric: Metric,
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = vcut::metrics::DEFAULT_THETA)]
        theta: f64,
        #[arg(long, default_value_t = 0.0)]
        lo: f64,
        #[arg(long, default_value_t = 1.0)]
        hi: f64,
        /// Treat dynamic-degree inputs as [T, H, W, ch] frames and estimate flow by block matching.
        #[arg(long)]
        from_frames: bool,
        #[arg(long, default_value_t = 8)]
        block: usize,
        #[arg(long, default_value_t = 4)]
        radius: usize,
    },
    /// Run the fold, cache and prefix equivalence suite.
    EquivCheck {
        /// Random attention configurations.
        #[arg(long, default_value_t = 200)]
        seeds: usize,
        /// Sampler seeds for cache identity and prefix equality (0 skips them).
        #[arg(long, default_value_t = 5)]
        run_seeds: usize,
        #[arg(long, default_value_t = 25)]
        steps: usize,
        #[arg(long, default_value_t = 17)]
        cut_step: usize,
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
        /// Model spec for the sampler checks (default: tiny preset).
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Corrupt one folded map; the suite must then fail.
        #[arg(long)]
        poison_fold: bool,
    },
    /// Cross modes, cut steps and seeds; one CSV row per run.
    Sweep {
        /// Plan JSON; the flags below are ignored when given.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        init_seed: u64,
        #[arg(long, value_parser = parse_mode, value_delimiter = ',', default_value = "baseline,vcut")]
        modes: Vec<SamplerMode>,
        #[arg(long, value_delimiter = ',', default_value = "17")]
        cut_steps: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 25)]
        steps: usize,
        #[arg(long)]
        embedding: Option<PathBuf>,
        #[arg(long)]
        baseline_latency: Option<f64>,
        #[arg(long)]
        save_finals: bool,
    },
    /// Per-step and per-video cost tables of the SVD family next to published figures.
    CostTables {
        #[arg(long, value_parser = parse_convention, default_value = "op-counter")]
        convention: MacConvention,
    },
}

fn parse_mode(s: &str) -> Result<SamplerMode, String> {
    s.parse().map_err(|e: vcut::Error| e.to_string())
}

fn parse_convention(s: &str) -> Result<MacConvention, String> {
    s.parse().map_err(|e: vcut::Error| e.to_string())
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: vcut::Error| e.to_string())
}

macro_rules! with_dtype {
    ($p:expr, $f:ident $(:: $g:ident)* ( $($a:expr),* $(,)? )) => {
        match $p {
            Precision::F32 => $f $(:: $g)* ::<f32>($($a),*),
            Precision::F64 => $f $(:: $g)* ::<f64>($($a),*),
        }
    };
}

fn dispatch(cli: Cli) -> CliResult<String> {
    let out = cli.out.clone();
    let p = cli.dtype;
    match cli.command {
        Command::Init { preset, spec, seed } => {
            let spec = match spec {
                Some(path) => cmd::load_spec(&path)?,
                None => cmd::init::preset(&preset)?,
            };
            let dir = io::out_dir(&out, "init")?;
            with_dtype!(p, cmd::init::cmd(spec, seed, &dir))
        }
        Command::Surgery { spec, weights, init_seed } => {
            let spec = cmd::load_spec(&spec)?;
            let dir = io::out_dir(&out, "surgery")?;
            with_dtype!(p, cmd::surgery::cmd(spec, weights.as_deref(), init_seed, &dir))
        }
        Command::Run {
            spec,
            weights,
            init_seed,
            mode,
            steps,
            cut_step,
            seed,
            sigma_max,
            sigma_min,
            cache_policy,
            embedding,
            save_eps,
        } => {
            let spec = cmd::load_spec(&spec)?;
            let dir = io::out_dir(&out, "run")?;
            let args = cmd::run::RunArgs {
                mode,
                steps,
                cut_step,
                seed,
                sigma_max,
                sigma_min,
                cache_policy: match cache_policy {
                    Policy::ComputeOnce => CachePolicy::ComputeOnce,
                    Policy::RecomputeEveryStep => CachePolicy::RecomputeEveryStep,
                },
                embedding,
                init_seed,
                save_eps,
            };
            with_dtype!(p, cmd::run::cmd(spec, weights.as_deref(), &args, &dir))
        }
        Command::Cost {
            arch,
            frames,
            steps,
            cut_step,
            baseline_latency,
            convention,
            measure,
        } => {
            let args = cmd::cost::CostArgs {
                arch,
                frames,
                steps,
                cut_step,
                baseline_latency,
                convention,
                measure,
            };
            with_dtype!(p, cmd::cost::cmd(&args, out.as_deref()))
        }
        Command::Metrics {
            metric,
            inputs,
            reference,
            theta,
            lo,
            hi,
            from_frames,
            block,
            radius,
        } => {
            let args = cmd::metrics::MetricArgs {
                metric,
                inputs,
                reference,
                theta,
                lo,
                hi,
                from_frames,
                block,
                radius,
            };
            cmd::metrics::cmd(&args, out.as_deref())
        }
        Command::EquivCheck {
            seeds,
            run_seeds,
            steps,
            cut_step,
            base_seed,
            spec,
            poison_fold,
        } => {
            let spec = match spec {
                Some(path) => cmd::load_spec(&path)?,
                None => ModelSpec::tiny(),
            };
            let opts = EquivOptions {
                configs: seeds,
                run_seeds,
                steps,
                cut_step,
                seed: base_seed,
                poison_fold,
                spec,
            };
            with_dtype!(p, cmd::equiv::cmd(&opts, out.as_deref()))
        }
        Command::Sweep {
            plan,
            spec,
            weights,
            init_seed,
            modes,
            cut_steps,
            seeds,
            steps,
            embedding,
            baseline_latency,
            save_finals,
        } => {
            let plan = match plan {
                Some(path) => ExperimentPlan::load(&path)?,
                None => ExperimentPlan {
                    spec,
                    weights,
                    init_seed,
                    modes,
                    cut_steps,
                    seeds,
                    steps,
                    embedding,
                    baseline_latency,
                    save_finals,
                },
            };
            let dir = io::out_dir(&out, "sweep")?;
            let (text, failed) = with_dtype!(p, cmd::sweep::cmd(&plan, &dir))?;
            if failed > 0 {
                eprintln!("warning: {failed} sweep rows failed; see the error column");
            }
            Ok(text)
        }
        Command::CostTables { convention } => cmd::tables::cmd(convention, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("{}", CliError::Argument("--threads must be positive".into()));
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", CliError::Argument(e.to_string()));
            return ExitCode::from(2);
        }
    }
    match dispatch(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("vcut: {e}");
            e.exit_code()
        }
    }
}
