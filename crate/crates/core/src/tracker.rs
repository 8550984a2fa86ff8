//! Event loop: per-event phase filtering with trigger-driven pose refinement.

use std::fmt::Write as _;
use std::io::BufRead;
use std::time::Instant;

use nalgebra::Vector2;
use thiserror::Error;

use crate::ekf::{EkfError, EkfParams, PhaseState};
use crate::event_io::Event;
use crate::geometry::{GeometryError, HomographyParams, Warp};
use crate::gn_refine::{
    apply_step, assemble_and_solve, should_trigger, BatchEvent, EventTerms, GnAccumulator,
    GnWeights, StepScaling,
};
pub use crate::init::{InitError, TrackerInit};
use crate::phase::{
    estimate_rotation_sign, initial_phase, phase_residual, PhaseError, RotorConfig, Zeta,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error(transparent)]
    Ekf(#[from] EkfError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Init(#[from] InitError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid tracker configuration: {0}")]
    Config(String),
    #[error("sample parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    /// One sample per processed event.
    PerEvent,
    /// One sample per pose refinement.
    Compact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub ekf: EkfParams,
    pub gn: GnWeights,
    pub gamma: StepScaling,
    /// Disables pose refinement entirely when false.
    pub refine_pose: bool,
    /// Linearise-solve-step rounds per trigger.
    pub gn_iterations: usize,
    pub output: OutputMode,
    pub warmup_us: u64,
    /// Events used for rotation-sign estimation.
    pub sign_prefix: usize,
    /// Events used for the initial phase estimate.
    pub phase_prefix: usize,
    /// Annulus for the prefix estimators.
    pub prefix_r_in: f64,
    pub prefix_r_out: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            ekf: EkfParams::default(),
            gn: GnWeights::default(),
            gamma: StepScaling::default(),
            refine_pose: true,
            gn_iterations: 1,
            output: OutputMode::PerEvent,
            warmup_us: 5_000,
            sign_prefix: 8_000,
            phase_prefix: 400,
            prefix_r_in: 0.5,
            prefix_r_out: 1.1,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        self.gn.validate().map_err(TrackerError::Config)?;
        let e = &self.ekf;
        if !(e.q_jerk >= 0.0) || !(e.sigma0 > 0.0) || !(e.kappa >= 0.0) {
            return Err(TrackerError::Config(
                "need q_jerk >= 0, sigma0 > 0, kappa >= 0".into(),
            ));
        }
        if !(e.sigma_ring > 0.0) || !(e.eps_floor > 0.0) {
            return Err(TrackerError::Config(
                "need sigma_ring > 0 and eps_floor > 0".into(),
            ));
        }
        if !(self.prefix_r_in < self.prefix_r_out) {
            return Err(TrackerError::Config("prefix annulus is empty".into()));
        }
        if self.gn_iterations == 0 {
            return Err(TrackerError::Config("gn_iterations must be >= 1".into()));
        }
        if self.phase_prefix == 0 {
            return Err(TrackerError::Config("phase_prefix must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpmSample {
    pub t: u64,
    pub rpm_blade: f64,
    pub rpm_shaft: f64,
    pub phi: f64,
    pub q: HomographyParams,
    /// Inside the warmup window; metrics skip these.
    pub warmup: bool,
}

impl RpmSample {
    /// `|ω|·60/2π` for the blade pattern, divided by `B` for the shaft.
    pub fn from_state(
        t: u64,
        phi: f64,
        omega: f64,
        blades: u32,
        q: HomographyParams,
        warmup: bool,
    ) -> Self {
        let rpm_blade = omega.abs() * 60.0 / std::f64::consts::TAU;
        Self {
            t,
            rpm_blade,
            rpm_shaft: rpm_blade / blades as f64,
            phi,
            q,
            warmup,
        }
    }
}

/// Accumulated loop costs, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimingStats {
    pub u_evt_total_us: f64,
    pub u_gn_total_us: f64,
    pub n_events: u64,
    pub n_gn: u64,
    /// Solves that failed and were skipped.
    pub n_gn_failed: u64,
}

impl TimingStats {
    pub fn mean_evt_us(&self) -> f64 {
        if self.n_events == 0 {
            0.0
        } else {
            self.u_evt_total_us / self.n_events as f64
        }
    }

    pub fn mean_gn_us(&self) -> f64 {
        if self.n_gn == 0 {
            0.0
        } else {
            self.u_gn_total_us / self.n_gn as f64
        }
    }

    pub fn merge(&mut self, o: &TimingStats) {
        self.u_evt_total_us += o.u_evt_total_us;
        self.u_gn_total_us += o.u_gn_total_us;
        self.n_events += o.n_events;
        self.n_gn += o.n_gn;
        self.n_gn_failed += o.n_gn_failed;
    }
}

/// Clock reads happen once per this many events.
pub const CLOCK_BATCH: u64 = 64;

pub struct Tracker {
    cfg: TrackerConfig,
    rotor: RotorConfig,
    state: PhaseState,
    warp: Warp,
    acc: GnAccumulator,
    /// Kept only when more than one GN round runs per trigger.
    batch: Vec<BatchEvent>,
    phi_base: f64,
    psi_base: f64,
    t_first: u64,
    timing: TimingStats,
    batch_start: Instant,
    batch_gn_us: f64,
    batch_len: u64,
}

impl Tracker {
    pub fn new(
        q0: HomographyParams,
        rotor: RotorConfig,
        phi0: f64,
        omega0: f64,
        t0: u64,
        cfg: TrackerConfig,
    ) -> Result<Self, TrackerError> {
        cfg.validate()?;
        let warp = Warp::new(&q0)?;
        Ok(Self {
            state: PhaseState::new(phi0, omega0, t0, cfg.ekf.sigma0),
            warp,
            acc: GnAccumulator::new(),
            batch: Vec::new(),
            phi_base: phi0,
            psi_base: q0.psi,
            t_first: t0,
            timing: TimingStats::default(),
            batch_start: Instant::now(),
            batch_gn_us: 0.0,
            batch_len: 0,
            cfg,
            rotor,
        })
    }

    pub fn q(&self) -> &HomographyParams {
        self.warp.params()
    }

    pub fn state(&self) -> &PhaseState {
        &self.state
    }

    pub fn rotor(&self) -> RotorConfig {
        self.rotor
    }

    pub fn sample(&self) -> RpmSample {
        let t = self.state.t_last;
        RpmSample::from_state(
            t,
            self.state.phi(),
            self.state.omega(),
            self.rotor.blades,
            *self.q(),
            t.saturating_sub(self.t_first) < self.cfg.warmup_us,
        )
    }

    /// Predict, back-warp, gate, update, accumulate, and refine on trigger.
    pub fn process_event(&mut self, e: &Event) -> Result<Option<RpmSample>, TrackerError> {
        if self.batch_len == 0 {
            self.batch_start = Instant::now();
        }
        let out = self.step(e);
        self.batch_len += 1;
        self.timing.n_events += 1;
        if self.batch_len == CLOCK_BATCH {
            self.flush_clock();
        }
        out
    }

    fn step(&mut self, e: &Event) -> Result<Option<RpmSample>, TrackerError> {
        self.state.predict(e.t, self.cfg.ekf.q_jerk)?;
        let z = Vector2::new(e.x as f64, e.y as f64);
        let mut triggered = false;
        if let Ok((u, du)) = self.warp.backwarp_with_jacobian(z) {
            let psi = self.warp.params().psi;
            let phi_pred = self.state.phi();
            if let Ok(eps) = phase_residual(phi_pred, psi, self.rotor, u) {
                let r = u.norm();
                self.state.update_gated(eps, r, &self.cfg.ekf);
                let gn = &self.cfg.gn;
                if self.cfg.refine_pose && r >= gn.admit_r_min && r <= gn.admit_r_max {
                    let terms = EventTerms::from_parts(
                        eps,
                        u,
                        &du,
                        e.p,
                        self.rotor,
                        gn,
                        &self.cfg.ekf,
                        None,
                    )?;
                    self.acc.add(&terms, gn);
                    if self.cfg.gn_iterations > 1 {
                        self.batch.push(BatchEvent {
                            z,
                            phi: phi_pred,
                            p: e.p,
                        });
                    }
                }
            }
        }
        if self.cfg.refine_pose
            && should_trigger(
                self.state.phi(),
                self.warp.params().psi,
                self.phi_base,
                self.psi_base,
                self.rotor.blades,
            )
        {
            let t0 = Instant::now();
            self.refine();
            let dt = t0.elapsed().as_secs_f64() * 1e6;
            self.timing.u_gn_total_us += dt;
            self.batch_gn_us += dt;
            self.timing.n_gn += 1;
            triggered = true;
        }
        Ok(match self.cfg.output {
            OutputMode::PerEvent => Some(self.sample()),
            OutputMode::Compact if triggered => Some(self.sample()),
            OutputMode::Compact => None,
        })
    }

    /// Gauss-Newton rounds over the batch; a failed round keeps the last `q`.
    fn refine(&mut self) {
        for round in 0..self.cfg.gn_iterations {
            if round > 0 && !self.relinearise() {
                break;
            }
            let q = *self.warp.params();
            let next = assemble_and_solve(&self.acc, &self.cfg.gn, &q)
                .ok()
                .map(|dq| apply_step(&q, &dq, &self.cfg.gamma).q)
                .and_then(|q_new| Warp::new(&q_new).ok());
            match next {
                Some(w) => self.warp = w,
                None => {
                    self.timing.n_gn_failed += 1;
                    break;
                }
            }
        }
        self.acc.reset();
        self.batch.clear();
        self.phi_base = self.state.phi();
        self.psi_base = self.warp.params().psi;
    }

    /// Rebuilds the accumulator from the stored batch at the current `q`.
    fn relinearise(&mut self) -> bool {
        self.acc.reset();
        let gn = &self.cfg.gn;
        for ev in &self.batch {
            let Ok(t) = EventTerms::compute(
                &self.warp,
                ev.z,
                ev.phi,
                ev.p,
                self.rotor,
                gn,
                &self.cfg.ekf,
                None,
            ) else {
                continue;
            };
            let r = t.r();
            if r >= gn.admit_r_min && r <= gn.admit_r_max {
                self.acc.add(&t, gn);
            }
        }
        self.acc.n_events > 0
    }

    fn flush_clock(&mut self) {
        if self.batch_len > 0 {
            let total = self.batch_start.elapsed().as_secs_f64() * 1e6;
            self.timing.u_evt_total_us += (total - self.batch_gn_us).max(0.0);
        }
        self.batch_len = 0;
        self.batch_gn_us = 0.0;
    }

    /// Flushes the pending clock batch and returns the totals.
    pub fn finish(mut self) -> TimingStats {
        self.flush_clock();
        self.timing
    }
}

/// Resolved sign and initial phase for a stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartState {
    pub rotor: RotorConfig,
    pub phi0: f64,
    pub omega0: f64,
    pub t0: u64,
}

pub fn resolve_start(
    init: &TrackerInit,
    events: &[Event],
    cfg: &TrackerConfig,
) -> Result<Option<StartState>, TrackerError> {
    init.validate()?;
    let Some(first) = events.first() else {
        return Ok(None);
    };
    let zeta: Zeta = match init.zeta {
        Some(z) => z,
        None => {
            let n = events.len().min(cfg.sign_prefix);
            estimate_rotation_sign(
                &events[..n],
                &init.q0,
                init.blades,
                cfg.prefix_r_in,
                cfg.prefix_r_out,
            )?
        }
    };
    let rotor = RotorConfig::new(init.blades, zeta)?;
    let omega0 = init.omega0();
    let n = events.len().min(cfg.phase_prefix);
    let phi0 = initial_phase(
        &events[..n],
        &init.q0,
        rotor,
        omega0,
        cfg.prefix_r_in,
        cfg.prefix_r_out,
    )
    .unwrap_or(0.0);
    Ok(Some(StartState {
        rotor,
        phi0,
        omega0,
        t0: first.t,
    }))
}

/// Runs a tracker over a whole stream.
pub fn track_stream(
    init: &TrackerInit,
    events: &[Event],
    cfg: &TrackerConfig,
) -> Result<(Vec<RpmSample>, TimingStats), TrackerError> {
    cfg.validate()?;
    let Some(start) = resolve_start(init, events, cfg)? else {
        return Ok((Vec::new(), TimingStats::default()));
    };
    let mut tracker = Tracker::new(
        init.q0,
        start.rotor,
        start.phi0,
        start.omega0,
        start.t0,
        *cfg,
    )?;
    let mut samples = Vec::with_capacity(match cfg.output {
        OutputMode::PerEvent => events.len(),
        OutputMode::Compact => 1024,
    });
    for e in events {
        if let Some(s) = tracker.process_event(e)? {
            samples.push(s);
        }
    }
    Ok((samples, tracker.finish()))
}

pub const SAMPLE_HEADER: &str = "# t_us,rpm_shaft,phi,s,psi,tx,ty,p31,p32,warmup";

/// One text line per sample; floats use shortest round-trip formatting.
pub fn format_samples(samples: &[RpmSample]) -> String {
    let mut s = String::with_capacity(samples.len() * 96 + 64);
    s.push_str(SAMPLE_HEADER);
    s.push('\n');
    for x in samples {
        let q = x.q.to_array();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            x.t, x.rpm_shaft, x.phi, q[0], q[1], q[2], q[3], q[4], q[5], x.warmup as u8
        );
    }
    s
}

/// Parses [`format_samples`] output for a rotor with `blades` blades.
pub fn parse_samples<R: BufRead>(reader: R, blades: u32) -> Result<Vec<RpmSample>, TrackerError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| TrackerError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| TrackerError::Parse {
            line: line_no,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad("expected 10 fields"));
        }
        let t: u64 = f[0].trim().parse().map_err(|_| bad("bad timestamp"))?;
        let mut v = [0.0f64; 8];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = f[k + 1].trim().parse().map_err(|_| bad("bad number"))?;
        }
        let warmup = match f[9].trim() {
            "0" => false,
            "1" => true,
            _ => return Err(bad("warmup flag must be 0 or 1")),
        };
        let rpm_shaft = v[0];
        out.push(RpmSample {
            t,
            rpm_blade: rpm_shaft * blades as f64,
            rpm_shaft,
            phi: v[1],
            q: HomographyParams::new(v[2], v[3], v[4], v[5], v[6], v[7]),
            warmup,
        });
    }
    Ok(out)
}
