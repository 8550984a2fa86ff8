//! Synthetic rotor event generator with exact ground truth.
//!
//! Blade events are drawn on the two edges of each blade in rotor-plane
//! coordinates, projected through a time-varying homography and jittered;
//! clutter is uniform over the frame. Arrivals are Poisson. This module only
//! depends on geometry and I/O types, never on the estimator.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use thiserror::Error;

use crate::event_io::{Event, GroundTruthSample, Polarity, SensorSize};
use crate::geometry::{project, HomographyParams};
use crate::init::TrackerInit;
use crate::phase::Zeta;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

/// Piecewise-linear profile over time in seconds, held constant outside the
/// knot range.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile<T> {
    pub knots: Vec<(f64, T)>,
}

pub trait Lerp: Copy {
    fn lerp(a: Self, b: Self, w: f64) -> Self;
}

impl Lerp for f64 {
    fn lerp(a: f64, b: f64, w: f64) -> f64 {
        a + (b - a) * w
    }
}

impl Lerp for HomographyParams {
    fn lerp(a: Self, b: Self, w: f64) -> Self {
        HomographyParams::from_vector(&(a.to_vector() + (b.to_vector() - a.to_vector()) * w))
    }
}

impl<T: Lerp> Profile<T> {
    pub fn constant(v: T) -> Self {
        Self {
            knots: vec![(0.0, v)],
        }
    }

    pub fn linear(t0: f64, a: T, t1: f64, b: T) -> Self {
        Self {
            knots: vec![(t0, a), (t1, b)],
        }
    }

    pub fn at(&self, t: f64) -> T {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        let i = k.partition_point(|(kt, _)| *kt <= t);
        if i >= k.len() {
            return k[k.len() - 1].1;
        }
        let (ta, a) = k[i - 1];
        let (tb, b) = k[i];
        T::lerp(a, b, (t - ta) / (tb - ta))
    }

    fn validate(&self, what: &str) -> Result<(), SynthError> {
        if self.knots.is_empty() {
            return Err(SynthError::InvalidSpec(format!(
                "{what} profile has no knots"
            )));
        }
        if self.knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(SynthError::InvalidSpec(format!(
                "{what} profile knot times must be strictly increasing"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub blades: u32,
    pub zeta: Zeta,
    /// Shaft RPM.
    pub rpm_profile: Profile<f64>,
    pub q_profile: Profile<HomographyParams>,
    pub duration_s: f64,
    /// Blade events per second (clutter comes on top).
    pub event_rate: f64,
    pub clutter_fraction: f64,
    pub noise_px: f64,
    pub seed: u64,
    pub sensor: SensorSize,
    pub r_in_gen: f64,
    pub r_out_gen: f64,
    /// Angular half-width between the two edges of a blade (rad).
    pub eps_edge: f64,
    pub gt_period_us: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.blades == 0 {
            return bad("blades must be >= 1".into());
        }
        if !(self.duration_s > 0.0) || !(self.event_rate > 0.0) {
            return bad("duration and event_rate must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.clutter_fraction) {
            return bad(format!(
                "clutter_fraction must be in [0, 1), got {}",
                self.clutter_fraction
            ));
        }
        if !(self.noise_px >= 0.0) {
            return bad("noise_px must be >= 0".into());
        }
        if !(0.0 <= self.r_in_gen && self.r_in_gen < self.r_out_gen) {
            return bad("need 0 <= r_in_gen < r_out_gen".into());
        }
        if self.gt_period_us == 0 {
            return bad("gt_period_us must be > 0".into());
        }
        self.rpm_profile.validate("rpm")?;
        self.q_profile.validate("q")?;
        for (_, q) in &self.q_profile.knots {
            q.validate()
                .map_err(|e| SynthError::InvalidSpec(format!("q knot: {e}")))?;
        }
        Ok(())
    }

    /// Exact initial state at `t = 0`.
    pub fn truth_init(&self) -> TrackerInit {
        TrackerInit {
            q0: self.q_profile.at(0.0),
            rpm0: self.rpm_profile.at(0.0),
            blades: self.blades,
            zeta: Some(self.zeta),
        }
    }

    /// Blade-phase speed `2π·rpm·B/60` at `t` seconds.
    pub fn omega(&self, t: f64) -> f64 {
        TAU * self.rpm_profile.at(t) * self.blades as f64 / 60.0
    }

    pub fn phase_fn(&self) -> PhaseIntegral {
        PhaseIntegral::new(&self.rpm_profile, self.blades)
    }
}

/// Closed-form `φ(t) = ∫₀ᵗ ω` for a piecewise-linear RPM profile.
#[derive(Debug, Clone)]
pub struct PhaseIntegral {
    /// `(t_k, ω_k, φ(t_k))`
    nodes: Vec<(f64, f64, f64)>,
}

impl PhaseIntegral {
    pub fn new(rpm: &Profile<f64>, blades: u32) -> Self {
        let c = TAU * blades as f64 / 60.0;
        let mut nodes = vec![(0.0, c * rpm.at(0.0), 0.0)];
        for &(t, r) in rpm.knots.iter().filter(|(t, _)| *t > 0.0) {
            let &(ta, wa, pa) = nodes.last().unwrap();
            let wb = c * r;
            nodes.push((t, wb, pa + 0.5 * (wa + wb) * (t - ta)));
        }
        Self { nodes }
    }

    pub fn at(&self, t: f64) -> f64 {
        let i = self.nodes.partition_point(|n| n.0 <= t).max(1);
        let (ta, wa, pa) = self.nodes[i - 1];
        let dt = t - ta;
        match self.nodes.get(i) {
            Some(&(tb, wb, _)) => pa + wa * dt + 0.5 * (wb - wa) / (tb - ta) * dt * dt,
            None => pa + wa * dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Blade,
    Clutter,
}

/// An event before pixel quantisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthEvent {
    pub t: u64,
    pub x: f64,
    pub y: f64,
    pub p: Polarity,
    pub kind: EventKind,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub sensor: SensorSize,
    /// Quantised, in-frame events.
    pub events: Vec<Event>,
    /// Pre-quantisation events, including those that fall outside the frame.
    pub continuous: Vec<SynthEvent>,
    pub ground_truth: Vec<GroundTruthSample>,
    pub truth_q: Vec<(u64, HomographyParams)>,
}

impl SynthOutput {
    pub fn n_blade(&self) -> usize {
        self.continuous
            .iter()
            .filter(|e| e.kind == EventKind::Blade)
            .count()
    }
}

pub fn generate(spec: &ScenarioSpec) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total_rate = spec.event_rate / (1.0 - spec.clutter_fraction);
    let arrivals = Exp::new(total_rate).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let noise =
        Normal::new(0.0, spec.noise_px).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let phase = spec.phase_fn();
    let b = spec.blades as f64;
    let zs = spec.zeta.sign();
    let (w, h) = (spec.sensor.width as f64, spec.sensor.height as f64);

    let expected = (total_rate * spec.duration_s * 1.05) as usize + 16;
    let mut continuous = Vec::with_capacity(expected);
    let mut events = Vec::with_capacity(expected);
    let mut t = 0.0;
    loop {
        t += arrivals.sample(&mut rng);
        if t > spec.duration_s {
            break;
        }
        let t_us = (t * 1e6).floor() as u64;
        let ts = t_us as f64 * 1e-6;
        let ev = if rng.random::<f64>() < spec.clutter_fraction {
            let p = if rng.random::<bool>() {
                Polarity::On
            } else {
                Polarity::Off
            };
            SynthEvent {
                t: t_us,
                x: rng.random::<f64>() * w - 0.5,
                y: rng.random::<f64>() * h - 0.5,
                p,
                kind: EventKind::Clutter,
            }
        } else {
            let blade = rng.random_range(0..spec.blades) as f64;
            let r = rng.random_range(spec.r_in_gen..=spec.r_out_gen);
            let leading = rng.random::<bool>();
            let edge = if leading {
                spec.eps_edge
            } else {
                -spec.eps_edge
            };
            let theta_z = (phase.at(ts) + TAU * blade) / b + edge;
            let theta = zs * theta_z;
            let u = Vector2::new(r * theta.cos(), r * theta.sin());
            let q = spec.q_profile.at(ts);
            let Ok(z) = project(&q, u) else { continue };
            let (nx, ny) = if spec.noise_px > 0.0 {
                (noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            SynthEvent {
                t: t_us,
                x: z.x + nx,
                y: z.y + ny,
                p: if leading { Polarity::On } else { Polarity::Off },
                kind: EventKind::Blade,
            }
        };
        let (xr, yr) = (ev.x.round(), ev.y.round());
        if xr >= 0.0 && yr >= 0.0 && xr < w && yr < h {
            events.push(Event::new(t_us, xr as u16, yr as u16, ev.p));
        }
        continuous.push(ev);
    }

    let end_us = (spec.duration_s * 1e6).round() as u64;
    let mut ground_truth = Vec::new();
    let mut truth_q = Vec::new();
    let mut tg = 0u64;
    while tg <= end_us {
        let ts = tg as f64 * 1e-6;
        ground_truth.push(GroundTruthSample {
            t: tg,
            rpm_shaft: spec.rpm_profile.at(ts),
        });
        truth_q.push((tg, spec.q_profile.at(ts)));
        tg += spec.gt_period_us;
    }
    Ok(SynthOutput {
        sensor: spec.sensor,
        events,
        continuous,
        ground_truth,
        truth_q,
    })
}

/// Default sensor and rotor pose used by the presets.
pub const DEFAULT_SENSOR: SensorSize = SensorSize {
    width: 640,
    height: 480,
};
pub const DEFAULT_Q: HomographyParams = HomographyParams {
    s: 50.0,
    psi: 0.0,
    tx: 320.0,
    ty: 240.0,
    p31: 0.0,
    p32: 0.0,
};

pub const PRESETS: &[&str] = &["const9000", "const9000_cw", "chirp", "psi_ramp"];

impl ScenarioSpec {
    /// Constant 9000 shaft RPM, two blades, static pose, no clutter.
    pub fn const9000(seed: u64) -> Self {
        Self {
            blades: 2,
            zeta: Zeta::Ccw,
            rpm_profile: Profile::constant(9000.0),
            q_profile: Profile::constant(DEFAULT_Q),
            duration_s: 2.0,
            event_rate: 2e5,
            clutter_fraction: 0.0,
            noise_px: 0.3,
            seed,
            sensor: DEFAULT_SENSOR,
            r_in_gen: 0.3,
            r_out_gen: 1.0,
            eps_edge: 0.02,
            gt_period_us: 100,
        }
    }

    /// Linear 6000 to 12000 RPM chirp with 20% clutter and mild egomotion.
    pub fn chirp(seed: u64) -> Self {
        let end = HomographyParams::new(52.0, 0.1, 330.0, 235.0, 0.005, 0.0);
        Self {
            rpm_profile: Profile::linear(0.0, 6000.0, 2.0, 12000.0),
            q_profile: Profile::linear(0.0, DEFAULT_Q, 2.0, end),
            clutter_fraction: 0.2,
            ..Self::const9000(seed)
        }
    }

    /// Fixed rotor seen by a camera rolling about its optical axis.
    pub fn psi_ramp(seed: u64) -> Self {
        let end = HomographyParams {
            psi: 0.5,
            ..DEFAULT_Q
        };
        Self {
            q_profile: Profile::linear(0.0, DEFAULT_Q, 2.0, end),
            ..Self::const9000(seed)
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self, SynthError> {
        match name {
            "const9000" => Ok(Self::const9000(seed)),
            "const9000_cw" => Ok(Self {
                zeta: Zeta::Cw,
                ..Self::const9000(seed)
            }),
            "chirp" => Ok(Self::chirp(seed)),
            "psi_ramp" => Ok(Self::psi_ramp(seed)),
            other => Err(SynthError::UnknownPreset(other.to_string())),
        }
    }

    /// `key=value` description of the scenario and its truth.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# synthetic rotor scenario");
        let _ = writeln!(s, "blades={}", self.blades);
        let _ = writeln!(s, "zeta={}", self.zeta.sign() as i64);
        let _ = writeln!(s, "duration_s={}", self.duration_s);
        let _ = writeln!(s, "event_rate={}", self.event_rate);
        let _ = writeln!(s, "clutter_fraction={}", self.clutter_fraction);
        let _ = writeln!(s, "noise_px={}", self.noise_px);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "sensor={}x{}", self.sensor.width, self.sensor.height);
        let _ = writeln!(s, "r_gen={},{}", self.r_in_gen, self.r_out_gen);
        let _ = writeln!(s, "eps_edge={}", self.eps_edge);
        for (t, r) in &self.rpm_profile.knots {
            let _ = writeln!(s, "rpm_knot={t},{r}");
        }
        for (t, q) in &self.q_profile.knots {
            let a = q.to_array();
            let _ = writeln!(
                s,
                "q_knot={t},{},{},{},{},{},{}",
                a[0], a[1], a[2], a[3], a[4], a[5]
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbKind {
    Position,
    Scale,
    Rpm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbDirection {
    TowardDistractor,
    Away,
}

/// Perturbs one component of a tracker init by `pct` percent.
///
/// Position shifts along `radial` (unit image direction pointing at the
/// distractor) by `pct`% of the projected blade radius `s`; `Away` reverses
/// it. Scale and RPM are multiplied by `1 + pct/100`.
pub fn perturb_init(
    init: &TrackerInit,
    kind: PerturbKind,
    pct: f64,
    direction: PerturbDirection,
    radial: Vector2<f64>,
) -> TrackerInit {
    let mut out = *init;
    let f = pct / 100.0;
    match kind {
        PerturbKind::Position => {
            let n = radial.norm();
            let d = if n > 0.0 {
                radial / n
            } else {
                Vector2::new(1.0, 0.0)
            };
            let sign = match direction {
                PerturbDirection::TowardDistractor => 1.0,
                PerturbDirection::Away => -1.0,
            };
            out.q0.tx += sign * f * init.q0.s * d.x;
            out.q0.ty += sign * f * init.q0.s * d.y;
        }
        PerturbKind::Scale => out.q0.s *= 1.0 + f,
        PerturbKind::Rpm => out.rpm0 *= 1.0 + f,
    }
    out
}

/// Blade-phase offset of an event from the nearest blade edge pattern,
/// `wrap_pi(B θ_ζ(u) - φ(t))`, for oracle checks.
pub fn blade_phase_offset(u: Vector2<f64>, phi: f64, blades: u32, zeta: Zeta) -> f64 {
    let theta = (zeta.sign() * u.y).atan2(u.x);
    let d = blades as f64 * theta - phi;
    (d + PI).rem_euclid(TAU) - PI
}
