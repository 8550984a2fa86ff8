//! Azimuths, π-wrapping and the blade-phase residual.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector2;
use thiserror::Error;

use crate::event_io::Event;
use crate::geometry::{HomographyParams, Warp};

/// Minimum in-annulus events required by [`estimate_rotation_sign`].
pub const SIGN_MIN_EVENTS: usize = 200;
/// Minimum `|Σ Δ|` (radians) accepted by [`estimate_rotation_sign`].
pub const SIGN_MIN_EVIDENCE: f64 = PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("azimuth undefined at the rotor origin")]
    OriginAzimuthUndefined,
    #[error("insufficient evidence for rotation sign ({events} events, |sum| = {sum:.3})")]
    InsufficientEvidence { events: usize, sum: f64 },
    #[error("blade count must be >= 1")]
    InvalidBladeCount,
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Rotation sign ζ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Zeta {
    /// ζ = +1: azimuth grows in rotor-plane coordinates.
    Ccw,
    /// ζ = -1.
    Cw,
}

impl Zeta {
    pub fn sign(self) -> f64 {
        match self {
            Zeta::Ccw => 1.0,
            Zeta::Cw => -1.0,
        }
    }

    pub fn from_sign(v: i64) -> Option<Self> {
        match v {
            1 => Some(Zeta::Ccw),
            -1 => Some(Zeta::Cw),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Zeta::Ccw => Zeta::Cw,
            Zeta::Cw => Zeta::Ccw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RotorConfig {
    pub blades: u32,
    pub zeta: Zeta,
}

impl RotorConfig {
    pub fn new(blades: u32, zeta: Zeta) -> Result<Self, PhaseError> {
        if blades == 0 {
            return Err(PhaseError::InvalidBladeCount);
        }
        Ok(Self { blades, zeta })
    }

    pub fn b(&self) -> f64 {
        self.blades as f64
    }
}

/// `mod(θ + π, 2π) - π`, landing in `[-π, π)`.
#[inline]
pub fn wrap_pi(theta: f64) -> f64 {
    if (-PI..PI).contains(&theta) {
        return theta;
    }
    let w = (theta + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Signed azimuth `atan2(ζ u_y, u_x)` in `(-π, π]`.
#[inline]
pub fn azimuth(u: Vector2<f64>, zeta: Zeta) -> Result<f64, PhaseError> {
    if u.x == 0.0 && u.y == 0.0 {
        return Err(PhaseError::OriginAzimuthUndefined);
    }
    let a = (zeta.sign() * u.y).atan2(u.x);
    // atan2(-0, x<0) is -π
    Ok(if a == -PI { PI } else { a })
}

/// Wrapped residual between the effective phase and the event's blade phase,
/// `wrap_pi(φ - ζBψ - B θ_ζ(u))`.
///
/// The in-plane rotation enters with the rotation sign so that shifting ψ and
/// rotating the back-warped point by the same angle cancels for either sign.
pub fn phase_residual(
    phi: f64,
    psi: f64,
    rotor: RotorConfig,
    u: Vector2<f64>,
) -> Result<f64, PhaseError> {
    let b = rotor.b();
    Ok(wrap_pi(
        effective_phase(phi, psi, rotor) - b * azimuth(u, rotor.zeta)?,
    ))
}

#[inline]
pub fn effective_phase(phi: f64, psi: f64, rotor: RotorConfig) -> f64 {
    phi - rotor.zeta.sign() * rotor.b() * psi
}

fn in_annulus(u: &Vector2<f64>, r_in: f64, r_out: f64) -> bool {
    let r = u.norm();
    r >= r_in && r <= r_out
}

/// Estimates ζ from a prefix of events.
///
/// Sums the wrapped increments of `B·θ₊(u)` between consecutive events that
/// back-warp inside `[r_in, r_out]`. Working in blade phase (times `B`)
/// makes jumps between blades vanish modulo 2π, so the sum telescopes to
/// the net rotation.
pub fn estimate_rotation_sign(
    events: &[Event],
    q: &HomographyParams,
    blades: u32,
    r_in: f64,
    r_out: f64,
) -> Result<Zeta, PhaseError> {
    if blades == 0 {
        return Err(PhaseError::InvalidBladeCount);
    }
    let warp = Warp::new(q)?;
    let b = blades as f64;
    let mut count = 0usize;
    let mut sum = 0.0;
    let mut prev: Option<f64> = None;
    for e in events {
        let Ok(u) = warp.backwarp(Vector2::new(e.x as f64, e.y as f64)) else {
            continue;
        };
        if !in_annulus(&u, r_in, r_out) {
            continue;
        }
        let Ok(theta) = azimuth(u, Zeta::Ccw) else {
            continue;
        };
        count += 1;
        if let Some(p) = prev {
            sum += wrap_pi(b * (theta - p));
        }
        prev = Some(theta);
    }
    if count < SIGN_MIN_EVENTS || sum.abs() < SIGN_MIN_EVIDENCE {
        return Err(PhaseError::InsufficientEvidence { events: count, sum });
    }
    Ok(if sum > 0.0 { Zeta::Ccw } else { Zeta::Cw })
}

/// Circular mean of blade phase over a prefix, referred back to the first
/// event time using the nominal angular speed `omega` (rad/s of blade phase).
///
/// Returns the phase at `events[0].t`, or `None` when no event lands in the
/// annulus.
pub fn initial_phase(
    events: &[Event],
    q: &HomographyParams,
    rotor: RotorConfig,
    omega: f64,
    r_in: f64,
    r_out: f64,
) -> Option<f64> {
    let warp = Warp::new(q).ok()?;
    let t0 = events.first()?.t;
    let b = rotor.b();
    let (mut c, mut s, mut n) = (0.0, 0.0, 0usize);
    for e in events {
        let Ok(u) = warp.backwarp(Vector2::new(e.x as f64, e.y as f64)) else {
            continue;
        };
        if !in_annulus(&u, r_in, r_out) {
            continue;
        }
        let Ok(theta) = azimuth(u, rotor.zeta) else {
            continue;
        };
        let dt = (e.t as f64 - t0 as f64) * 1e-6;
        let a = b * theta - omega * dt;
        c += a.cos();
        s += a.sin();
        n += 1;
    }
    if n == 0 {
        return None;
    }
    // residual is computed against φ - ζBψ
    Some(s.atan2(c) + rotor.zeta.sign() * b * q.psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_io::Polarity;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_pi(0.0), 0.0);
        assert!((wrap_pi(1.5 * PI) + FRAC_PI_2).abs() < 1e-15);
        assert_eq!(wrap_pi(PI), -PI);
        assert_eq!(wrap_pi(-PI), -PI);
        assert!(wrap_pi(-1e-300) < PI);
    }

    #[test]
    fn azimuth_examples() {
        let a = |x, y, z| azimuth(Vector2::new(x, y), z).unwrap();
        assert_eq!(a(1.0, 0.0, Zeta::Ccw), 0.0);
        assert_eq!(a(0.0, 1.0, Zeta::Ccw), FRAC_PI_2);
        assert_eq!(a(0.0, 1.0, Zeta::Cw), -FRAC_PI_2);
        assert_eq!(a(-1.0, 0.0, Zeta::Ccw), PI);
        assert_eq!(a(-1.0, 0.0, Zeta::Cw), PI);
        assert_eq!(
            azimuth(Vector2::zeros(), Zeta::Ccw),
            Err(PhaseError::OriginAzimuthUndefined)
        );
    }

    #[test]
    fn residual_examples() {
        let rotor = RotorConfig::new(2, Zeta::Ccw).unwrap();
        let eps = phase_residual(2.0 * 0.3, 0.3, rotor, Vector2::new(1.0, 0.0)).unwrap();
        assert!(eps.abs() < 1e-15);
        let eps = phase_residual(0.0, 0.0, rotor, Vector2::new(0.0, 1.0)).unwrap();
        assert_eq!(eps, -PI);
        assert!(phase_residual(0.0, 0.0, rotor, Vector2::zeros()).is_err());
    }

    #[test]
    fn rotation_invariance_both_signs() {
        for zeta in [Zeta::Ccw, Zeta::Cw] {
            let rotor = RotorConfig::new(3, zeta).unwrap();
            let u = Vector2::new(0.4, -0.7);
            let base = phase_residual(1.1, 0.2, rotor, u).unwrap();
            for delta in [0.1f64, -0.9, 2.5] {
                // a +δ camera rotation moves the back-warped point by -δ
                let (s, c) = (-delta).sin_cos();
                let ur = Vector2::new(c * u.x - s * u.y, s * u.x + c * u.y);
                let shifted = phase_residual(1.1, 0.2 + delta, rotor, ur).unwrap();
                assert!(wrap_pi(shifted - base).abs() < 1e-12, "{zeta:?} {delta}");
            }
        }
    }

    #[test]
    fn same_azimuth_gives_no_evidence() {
        let q = HomographyParams::new(10.0, 0.0, 50.0, 50.0, 0.0, 0.0);
        let events: Vec<Event> = (0..10)
            .map(|i| Event::new(i, 58, 50, Polarity::On))
            .collect();
        assert!(matches!(
            estimate_rotation_sign(&events, &q, 2, 0.2, 1.5),
            Err(PhaseError::InsufficientEvidence { .. })
        ));
    }
}
