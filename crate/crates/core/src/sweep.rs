//! Run drivers: single scenario, stride benchmark, init and loss ablations.

use std::fmt::Write as _;

use nalgebra::Vector2;
use thiserror::Error;

use crate::config::RunConfig;
use crate::event_io::{stride_filter, Event, EventIoError, GroundTruthSample};
use crate::geometry::HomographyParams;
use crate::init::TrackerInit;
use crate::metrics::{
    compute_metrics, compute_rtf, mean_metrics, pool_metrics, Metrics, MetricsError,
};
use crate::par::Executor;
use crate::synth::{
    generate, perturb_init, PerturbDirection, PerturbKind, ScenarioSpec, SynthError,
};
use crate::tracker::{track_stream, RpmSample, TimingStats, TrackerError};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    EventIo(#[from] EventIoError),
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: Metrics,
    pub timing: TimingStats,
    pub duration_s: f64,
    pub n_events: usize,
    pub final_q: HomographyParams,
    pub final_rpm: f64,
    pub samples: Vec<RpmSample>,
}

/// Tracks `events` (after striding) and scores against `gt`.
pub fn run_events(
    init: &TrackerInit,
    events: &[Event],
    gt: &[GroundTruthSample],
    duration_s: f64,
    cfg: &RunConfig,
) -> Result<RunResult, SweepError> {
    let strided;
    let events = if cfg.stride > 1 {
        strided = stride_filter(events, cfg.stride)?;
        &strided[..]
    } else {
        events
    };
    let (samples, timing) = track_stream(init, events, &cfg.tracker)?;
    let metrics = compute_metrics(&samples, gt, cfg.tracker.warmup_us, cfg.gt_align)?;
    let last = samples.last().copied();
    Ok(RunResult {
        metrics,
        timing,
        duration_s,
        n_events: events.len(),
        final_q: last.map_or(init.q0, |s| s.q),
        final_rpm: last.map_or(init.rpm0, |s| s.rpm_shaft),
        samples,
    })
}

/// Generates the scenario and tracks it from `init` (exact init when `None`).
pub fn run_scenario(
    spec: &ScenarioSpec,
    init: Option<TrackerInit>,
    cfg: &RunConfig,
) -> Result<RunResult, SweepError> {
    let out = generate(spec)?;
    let init = init.unwrap_or_else(|| spec.truth_init());
    run_events(&init, &out.events, &out.ground_truth, spec.duration_s, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub stride: usize,
    pub n_events: usize,
    pub mae_mean: f64,
    pub mae_pooled: f64,
    pub mare: f64,
    pub rmse: f64,
    pub rtf_est: f64,
    pub u_evt_us: f64,
    pub u_gn_us: f64,
    /// Total measured compute time over all runs, seconds.
    pub compute_s: f64,
}

/// Stride sweep over one stream per scenario; rows follow `strides`.
pub fn bench_strides(
    specs: &[ScenarioSpec],
    strides: &[usize],
    cfg: &RunConfig,
    exec: Executor,
) -> Result<Vec<BenchRow>, SweepError> {
    let streams: Vec<_> = exec
        .map(specs, |s| {
            generate(s).map(|o| (s.truth_init(), o, s.duration_s))
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = strides
        .iter()
        .flat_map(|&k| (0..streams.len()).map(move |i| (k, i)))
        .collect();
    let results: Vec<RunResult> = exec
        .map(&jobs, |&(k, i)| {
            let (init, out, dur) = &streams[i];
            let c = RunConfig { stride: k, ..*cfg };
            run_events(init, &out.events, &out.ground_truth, *dur, &c)
        })
        .into_iter()
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(strides.len());
    for (j, &k) in strides.iter().enumerate() {
        let runs = &results[j * streams.len()..(j + 1) * streams.len()];
        let ms: Vec<Metrics> = runs.iter().map(|r| r.metrics).collect();
        let mut timing = TimingStats::default();
        for r in runs {
            timing.merge(&r.timing);
        }
        let durations: Vec<f64> = runs.iter().map(|r| r.duration_s).collect();
        let mean = mean_metrics(&ms);
        rows.push(BenchRow {
            stride: k,
            n_events: runs.iter().map(|r| r.n_events).sum(),
            mae_mean: mean.mae,
            mae_pooled: pool_metrics(&ms).mae,
            mare: mean.mare,
            rmse: mean.rmse,
            rtf_est: compute_rtf(&durations, &timing).unwrap_or(f64::INFINITY),
            u_evt_us: timing.mean_evt_us(),
            u_gn_us: timing.mean_gn_us(),
            compute_s: (timing.u_evt_total_us + timing.u_gn_total_us) * 1e-6,
        });
    }
    Ok(rows)
}

pub const BENCH_HEADER: &str =
    "stride,n_events,mae_mean,mae_pooled,mare,rmse,rtf_est,u_evt_us,u_gn_us";

/// CSV of bench rows; timing columns are left empty unless `timing`.
pub fn bench_csv(rows: &[BenchRow], timing: bool) -> String {
    let mut s = String::from(BENCH_HEADER);
    s.push('\n');
    for r in rows {
        let _ = write!(
            s,
            "{},{},{:.6},{:.6},{:.8},{:.6},",
            r.stride, r.n_events, r.mae_mean, r.mae_pooled, r.mare, r.rmse
        );
        if timing {
            let _ = writeln!(s, "{:.3},{:.4},{:.2}", r.rtf_est, r.u_evt_us, r.u_gn_us);
        } else {
            s.push_str(",,\n");
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitAblationRow {
    pub kind: PerturbKind,
    pub direction: PerturbDirection,
    pub pct: f64,
    pub metrics: Option<Metrics>,
    /// Error text of a run that aborted.
    pub error: Option<String>,
}

pub fn kind_name(k: PerturbKind) -> &'static str {
    match k {
        PerturbKind::Position => "position",
        PerturbKind::Scale => "scale",
        PerturbKind::Rpm => "rpm",
    }
}

pub fn direction_name(d: PerturbDirection) -> &'static str {
    match d {
        PerturbDirection::TowardDistractor => "toward",
        PerturbDirection::Away => "away",
    }
}

/// Perturbation sweep on one stream.
///
/// `Away` negates `pct` for scale and RPM, and reverses the shift for
/// position. Failed runs are reported, not propagated.
pub fn ablate_init(
    spec: &ScenarioSpec,
    kinds: &[PerturbKind],
    pcts: &[f64],
    radial: Vector2<f64>,
    cfg: &RunConfig,
    exec: Executor,
) -> Result<Vec<InitAblationRow>, SweepError> {
    let out = generate(spec)?;
    let truth = spec.truth_init();
    let mut jobs = Vec::new();
    for &kind in kinds {
        for dir in [PerturbDirection::TowardDistractor, PerturbDirection::Away] {
            for &pct in pcts {
                jobs.push((kind, dir, pct));
            }
        }
    }
    Ok(exec.map(&jobs, |&(kind, direction, pct)| {
        let signed = match (kind, direction) {
            (PerturbKind::Position, _) | (_, PerturbDirection::TowardDistractor) => pct,
            (_, PerturbDirection::Away) => -pct,
        };
        let init = perturb_init(&truth, kind, signed, direction, radial);
        let res = init
            .validate()
            .map_err(|e| SweepError::Tracker(e.into()))
            .and_then(|_| run_events(&init, &out.events, &out.ground_truth, spec.duration_s, cfg));
        match res {
            Ok(r) => InitAblationRow {
                kind,
                direction,
                pct,
                metrics: Some(r.metrics),
                error: None,
            },
            Err(e) => InitAblationRow {
                kind,
                direction,
                pct,
                metrics: None,
                error: Some(e.to_string()),
            },
        }
    }))
}

pub const INIT_ABLATION_HEADER: &str = "kind,direction,pct,mae,mare,rmse,status";

pub fn init_ablation_csv(rows: &[InitAblationRow]) -> String {
    let mut s = String::from(INIT_ABLATION_HEADER);
    s.push('\n');
    for r in rows {
        let (mae, mare, rmse) = r
            .metrics
            .map_or((f64::NAN, f64::NAN, f64::NAN), |m| (m.mae, m.mare, m.rmse));
        let status = match &r.error {
            None => "ok".to_string(),
            Some(e) => format!("error: {}", e.replace(',', ";")),
        };
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.8},{:.6},{}",
            kind_name(r.kind),
            direction_name(r.direction),
            r.pct,
            mae,
            mare,
            rmse,
            status
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Phase,
    Radial,
    Polarity,
    Band,
    Bto,
}

impl LossTerm {
    pub const ALL: [LossTerm; 5] = [
        LossTerm::Phase,
        LossTerm::Radial,
        LossTerm::Polarity,
        LossTerm::Band,
        LossTerm::Bto,
    ];

    pub fn key(self) -> &'static str {
        match self {
            LossTerm::Phase => "lambda_phi",
            LossTerm::Radial => "lambda_r",
            LossTerm::Polarity => "lambda_pol",
            LossTerm::Band => "lambda_band",
            LossTerm::Bto => "lambda_bto",
        }
    }

    pub fn zeroed(self, cfg: &RunConfig) -> RunConfig {
        let mut c = *cfg;
        let g = &mut c.tracker.gn;
        match self {
            LossTerm::Phase => g.lambda_phi = 0.0,
            LossTerm::Radial => g.lambda_r = 0.0,
            LossTerm::Polarity => g.lambda_pol = 0.0,
            LossTerm::Band => g.lambda_band = 0.0,
            LossTerm::Bto => g.lambda_bto = 0.0,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAblationRow {
    /// `None` is the full objective.
    pub zeroed: Option<LossTerm>,
    pub per_seed_mae: Vec<f64>,
    pub mae_mean: f64,
    pub mare_mean: f64,
}

impl LossAblationRow {
    pub fn label(&self) -> &'static str {
        self.zeroed.map_or("all", LossTerm::key)
    }
}

/// Full objective plus each weight zeroed in turn.
pub fn ablate_loss(
    specs: &[ScenarioSpec],
    terms: &[LossTerm],
    cfg: &RunConfig,
    exec: Executor,
) -> Result<Vec<LossAblationRow>, SweepError> {
    let streams: Vec<_> = exec
        .map(specs, |s| {
            generate(s).map(|o| (s.truth_init(), o, s.duration_s))
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
    let variants: Vec<Option<LossTerm>> = std::iter::once(None)
        .chain(terms.iter().copied().map(Some))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..streams.len()).map(move |i| (v, i)))
        .collect();
    let results: Vec<Metrics> = exec
        .map(&jobs, |&(v, i)| {
            let c = variants[v].map_or(*cfg, |t| t.zeroed(cfg));
            let (init, out, dur) = &streams[i];
            run_events(init, &out.events, &out.ground_truth, *dur, &c).map(|r| r.metrics)
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
    Ok(variants
        .iter()
        .enumerate()
        .map(|(v, &zeroed)| {
            let ms = &results[v * streams.len()..(v + 1) * streams.len()];
            let mean = mean_metrics(ms);
            LossAblationRow {
                zeroed,
                per_seed_mae: ms.iter().map(|m| m.mae).collect(),
                mae_mean: mean.mae,
                mare_mean: mean.mare,
            }
        })
        .collect())
}

pub const LOSS_ABLATION_HEADER: &str = "variant,mae,mare,mae_ratio_to_all";

pub fn loss_ablation_csv(rows: &[LossAblationRow]) -> String {
    let base = rows
        .iter()
        .find(|r| r.zeroed.is_none())
        .map_or(f64::NAN, |r| r.mae_mean);
    let mut s = String::from(LOSS_ABLATION_HEADER);
    s.push('\n');
    for r in rows {
        let label = match r.zeroed {
            None => "all".to_string(),
            Some(t) => format!("{}=0", t.key()),
        };
        let _ = writeln!(
            s,
            "{},{:.6},{:.8},{:.4}",
            label,
            r.mae_mean,
            r.mare_mean,
            r.mae_mean / base
        );
    }
    s
}
