//! `rotortrack` command line: synthesize streams, track, score and sweep.

use std::error::Error;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector2;
use rotortrack::config::RunConfig;
use rotortrack::event_io::{
    read_events, read_ground_truth, write_events, write_ground_truth, Event,
};
use rotortrack::init::TrackerInit;
use rotortrack::metrics::{compute_metrics, compute_rtf};

use rotortrack::par::{init_threads_from_env, Executor};
use rotortrack::sweep::{
    ablate_init, ablate_loss, bench_csv, bench_strides, init_ablation_csv, loss_ablation_csv,
    LossTerm,
};
use rotortrack::synth::{generate, PerturbKind, ScenarioSpec};
use rotortrack::tracker::{format_samples, parse_samples, track_stream};

type CliResult = Result<(), Box<dyn Error>>;

#[derive(Parser)]
#[command(
    name = "rotortrack",
    version,
    about = "Event-camera propeller RPM tracking"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set lambda_r=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, value_enum, global = true, default_value_t = Exec::Auto)]
    executor: Exec,
}

#[derive(Clone, Copy, ValueEnum)]
enum Exec {
    Auto,
    Sequential,
    Parallel,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scenario: events.bin, gt.csv, init.txt, manifest.txt.
    Synth {
        #[arg(long, default_value = "const9000")]
        preset: String,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write events.txt.
        #[arg(long)]
        text: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Track an event stream; samples go to `--out` or stdout.
    Track {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print timing totals and RTF_est to stderr.
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Score samples against ground truth.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 2)]
        blades: u32,
        #[command(flatten)]
        common: Common,
    },
    /// Event-stride sweep: MAE, RTF_est, U_evt, U_GN per stride.
    Bench {
        #[arg(long, default_value = "chirp")]
        preset: String,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4])]
        strides: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Leave the timing columns empty.
        #[arg(long)]
        no_timing: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Initialization perturbation sweep.
    AblateInit {
        #[arg(long, default_value = "const9000")]
        preset: String,
        #[arg(long, value_delimiter = ',', default_values_t = ["position".to_string(), "scale".to_string(), "rpm".to_string()])]
        kinds: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0])]
        pcts: Vec<f64>,
        /// Image direction toward the distractor, `x,y`.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [1.0, 0.0], allow_hyphen_values = true)]
        radial: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Zero each loss weight in turn.
    AblateLoss {
        #[arg(long, default_value = "chirp")]
        preset: String,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn config(&self) -> Result<RunConfig, Box<dyn Error>> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn executor(&self) -> Executor {
        match self.executor {
            Exec::Auto => Executor::default(),
            Exec::Sequential => Executor::Sequential,
            Exec::Parallel => Executor::Parallel,
        }
    }
}

fn specs(preset: &str, base_seed: u64, n: u64) -> Result<Vec<ScenarioSpec>, Box<dyn Error>> {
    (0..n)
        .map(|i| ScenarioSpec::preset(preset, base_seed + i).map_err(Into::into))
        .collect()
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.cmd {
        Cmd::Synth {
            preset,
            out_dir,
            text,
            common,
        } => {
            let cfg = common.config()?;
            let spec = ScenarioSpec::preset(&preset, cfg.seed)?;
            let out = generate(&spec)?;
            fs::create_dir_all(&out_dir)?;
            write_events(out_dir.join("events.bin"), out.sensor, &out.events)?;
            if text {
                rotortrack::event_io::write_events_text(
                    out_dir.join("events.txt"),
                    out.sensor,
                    &out.events,
                )?;
            }
            write_ground_truth(out_dir.join("gt.csv"), &out.ground_truth)?;
            fs::write(out_dir.join("init.txt"), spec.truth_init().to_text())?;
            fs::write(out_dir.join("manifest.txt"), spec.manifest())?;
            println!(
                "events={} blade_events={} gt_samples={}",
                out.events.len(),
                out.n_blade(),
                out.ground_truth.len()
            );
        }
        Cmd::Track {
            events,
            init,
            out,
            timing,
            common,
        } => {
            let cfg = common.config()?;
            let init = TrackerInit::from_text(&fs::read_to_string(&init)?)?;
            let stream = read_events(&events)?;
            let evs: Vec<Event> = rotortrack::event_io::stride_filter(&stream.events, cfg.stride)?;
            let (samples, t) = track_stream(&init, &evs, &cfg.tracker)?;
            emit(out.as_deref(), &format_samples(&samples))?;
            if timing {
                let rtf = compute_rtf(&[stream.duration_s()], &t).unwrap_or(f64::INFINITY);
                eprintln!(
                    "n_events={} n_gn={} n_gn_failed={} u_evt_us={:.4} u_gn_us={:.2} rtf_est={:.3}",
                    t.n_events,
                    t.n_gn,
                    t.n_gn_failed,
                    t.mean_evt_us(),
                    t.mean_gn_us(),
                    rtf
                );
            }
        }
        Cmd::Eval {
            samples,
            gt,
            blades,
            common,
        } => {
            let cfg = common.config()?;
            let samples = parse_samples(io::BufReader::new(fs::File::open(&samples)?), blades)?;
            let gt = read_ground_truth(&gt)?;
            let m = compute_metrics(&samples, &gt, cfg.tracker.warmup_us, cfg.gt_align)?;
            println!("mae,mare,rmse,n");
            println!("{:.6},{:.8},{:.6},{}", m.mae, m.mare, m.rmse, m.n);
        }
        Cmd::Bench {
            preset,
            strides,
            seeds,
            no_timing,
            common,
        } => {
            let cfg = common.config()?;
            if strides.is_empty() || strides.contains(&0) {
                return Err("strides must be >= 1".into());
            }
            let rows = bench_strides(
                &specs(&preset, cfg.seed, seeds)?,
                &strides,
                &cfg,
                common.executor(),
            )?;
            print!("{}", bench_csv(&rows, !no_timing));
        }
        Cmd::AblateInit {
            preset,
            kinds,
            pcts,
            radial,
            common,
        } => {
            let cfg = common.config()?;
            let kinds = kinds
                .iter()
                .map(|k| match k.as_str() {
                    "position" => Ok(PerturbKind::Position),
                    "scale" => Ok(PerturbKind::Scale),
                    "rpm" => Ok(PerturbKind::Rpm),
                    other => Err(format!("unknown perturbation kind `{other}`")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let spec = ScenarioSpec::preset(&preset, cfg.seed)?;
            let rows = ablate_init(
                &spec,
                &kinds,
                &pcts,
                Vector2::new(radial[0], radial[1]),
                &cfg,
                common.executor(),
            )?;
            print!("{}", init_ablation_csv(&rows));
        }
        Cmd::AblateLoss {
            preset,
            seeds,
            common,
        } => {
            let cfg = common.config()?;
            let rows = ablate_loss(
                &specs(&preset, cfg.seed, seeds)?,
                &LossTerm::ALL,
                &cfg,
                common.executor(),
            )?;
            print!("{}", loss_ablation_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads_from_env();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
