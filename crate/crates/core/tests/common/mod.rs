//! Independent oracles shared by the integration test targets.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rotortrack::ekf::EkfParams;
use rotortrack::event_io::Polarity;
use rotortrack::geometry::{project, HomographyParams, Warp};
use rotortrack::gn_refine::{residual_band, residual_polarity, BtoSums, EventTerms, GnWeights};
use rotortrack::phase::{phase_residual, RotorConfig, Zeta};

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random homography kept well away from singularity: `det H / s²` is
/// bounded below by 0.5.
pub fn random_q(r: &mut ChaCha8Rng) -> HomographyParams {
    loop {
        let q = HomographyParams::new(
            r.random_range(20.0..120.0),
            r.random_range(-PI..PI),
            r.random_range(100.0..500.0),
            r.random_range(100.0..400.0),
            r.random_range(-0.01..0.01),
            r.random_range(-0.01..0.01),
        );
        if q.matrix().determinant() / (q.s * q.s) > 0.5 {
            return q;
        }
    }
}

/// Random homography without perspective.
pub fn random_affine_q(r: &mut ChaCha8Rng) -> HomographyParams {
    HomographyParams {
        p31: 0.0,
        p32: 0.0,
        ..random_q(r)
    }
}

/// Rotor-plane point with radius in `[r_lo, r_hi]`.
pub fn random_u(r: &mut ChaCha8Rng, r_lo: f64, r_hi: f64) -> Vector2<f64> {
    let rad = r.random_range(r_lo..r_hi);
    let a = r.random_range(-PI..PI);
    Vector2::new(rad * a.cos(), rad * a.sin())
}

pub fn random_rotor(r: &mut ChaCha8Rng) -> RotorConfig {
    let zeta = if r.random_bool(0.5) {
        Zeta::Ccw
    } else {
        Zeta::Cw
    };
    RotorConfig::new(r.random_range(1..=6), zeta).unwrap()
}

pub fn random_polarity(r: &mut ChaCha8Rng) -> Polarity {
    if r.random_bool(0.5) {
        Polarity::On
    } else {
        Polarity::Off
    }
}

fn bump(q: &HomographyParams, j: usize, h: f64) -> HomographyParams {
    let mut v = q.to_vector();
    v[j] += h;
    HomographyParams::from_vector(&v)
}

/// Central difference of a scalar function of `q`.
pub fn fd_scalar(q: &HomographyParams, f: impl Fn(&HomographyParams) -> f64) -> Vector6<f64> {
    Vector6::from_fn(|j, _| (f(&bump(q, j, FD_STEP)) - f(&bump(q, j, -FD_STEP))) / (2.0 * FD_STEP))
}

/// Mixed relative error between an analytic and a numeric gradient.
///
/// Each entry is compared relative to its own magnitude, floored at
/// `1e-2` of the largest entry: entries that small sit at the level of the
/// difference quotient's cancellation noise, so they are judged on the
/// scale of the whole gradient. Always at least as strict as the
/// norm-wise relative error.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-2 * scale))
        .fold(0.0, f64::max)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct JacobianErrors {
    pub backwarp: f64,
    pub phase: f64,
    pub phase_psi_col: f64,
    pub radial: f64,
    pub polarity: f64,
    pub band: f64,
    pub bto: f64,
    pub configs: usize,
}

impl JacobianErrors {
    pub fn within(&self, tol: f64, tol_bto: f64) -> bool {
        [
            self.backwarp,
            self.phase,
            self.radial,
            self.polarity,
            self.band,
        ]
        .iter()
        .all(|e| *e < tol)
            && self.bto < tol_bto
    }
}

/// Runs every residual Jacobian against central differences on `n` seeded
/// configurations. Points within `1e-3` of a wrap boundary are redrawn.
pub fn jacobian_suite(n: usize) -> JacobianErrors {
    jacobian_suite_with(n, random_q)
}

pub fn jacobian_suite_with(
    n: usize,
    draw_q: fn(&mut ChaCha8Rng) -> HomographyParams,
) -> JacobianErrors {
    let mut out = JacobianErrors::default();
    let ekf = EkfParams::default();
    let base_w = GnWeights::default();
    let mut seed = 0u64;
    while out.configs < n {
        seed += 1;
        let mut r = rng(seed);
        let q = draw_q(&mut r);
        let rotor = random_rotor(&mut r);
        let u_true = random_u(&mut r, 0.3, 1.7);
        let z = project(&q, u_true).unwrap();
        let phi = r.random_range(-PI..PI);
        let pol = random_polarity(&mut r);
        // band barriers and occupancy with non-negligible curvature
        let w = GnWeights {
            tau: r.random_range(0.05..0.5),
            tau_occ: r.random_range(0.05..0.3),
            ..base_w
        };

        let warp = Warp::new(&q).unwrap();
        let Ok(t) = EventTerms::compute(&warp, z, phi, pol, rotor, &w, &ekf, None) else {
            continue;
        };
        let eps = t.phase.value;
        let delta = rotortrack::phase::wrap_pi(eps - w.polarity_phase(pol));
        if eps.abs() > PI - 1e-3 || delta.abs() > PI - 1e-3 {
            continue;
        }

        let u_of = |q: &HomographyParams| Warp::new(q).unwrap().backwarp(z).unwrap();
        let (_, du) = warp.backwarp_with_jacobian(z).unwrap();
        for row in 0..2 {
            let fd = fd_scalar(&q, |q| u_of(q)[row]);
            let an: Vec<f64> = (0..6).map(|c| du[(row, c)]).collect();
            out.backwarp = out.backwarp.max(rel_err(&an, fd.as_slice()));
        }

        // unwrap the numeric residual around its base value
        let eps_of = |q: &HomographyParams| {
            let e = phase_residual(phi, q.psi, rotor, u_of(q)).unwrap();
            eps + rotortrack::phase::wrap_pi(e - eps)
        };
        let fd_phase = fd_scalar(&q, eps_of);
        out.phase = out
            .phase
            .max(rel_err(t.phase.jacobian.as_slice(), fd_phase.as_slice()));
        out.phase_psi_col = out.phase_psi_col.max(t.phase.jacobian[1].abs());

        let fd_r = fd_scalar(&q, |q| u_of(q).norm() - 1.0);
        out.radial = out
            .radial
            .max(rel_err(t.radial.jacobian.as_slice(), fd_r.as_slice()));

        let fd_pol = fd_scalar(&q, |q| residual_polarity(eps_of(q), pol, &w).0);
        let an_pol = t.phase.jacobian * t.polarity_factor;
        out.polarity = out
            .polarity
            .max(rel_err(an_pol.as_slice(), fd_pol.as_slice()));

        let fd_in = fd_scalar(&q, |q| residual_band(u_of(q).norm(), &w).value_in);
        let fd_out = fd_scalar(&q, |q| residual_band(u_of(q).norm(), &w).value_out);
        let an_in = t.radial.jacobian * t.band.factor_in;
        let an_out = t.radial.jacobian * t.band.factor_out;
        out.band = out.band.max(rel_err(an_in.as_slice(), fd_in.as_slice()));
        out.band = out.band.max(rel_err(an_out.as_slice(), fd_out.as_slice()));

        out.bto = out.bto.max(bto_gradient_error(&mut r, &q, &w));
        out.configs += 1;
    }
    out
}

/// BTO gradient on a random batch around `q` vs. central differences of
/// the BTO loss. Bounds are set so that all four slacks are active.
fn bto_gradient_error(r: &mut ChaCha8Rng, q: &HomographyParams, w: &GnWeights) -> f64 {
    let w = GnWeights {
        p_in_min: r.random_range(0.1..0.4),
        p_in_max: r.random_range(0.4..0.9),
        p_out_min: r.random_range(0.0..0.2),
        p_out_max: r.random_range(0.2..0.7),
        ..*w
    };
    let zs: Vec<Vector2<f64>> = (0..32)
        .map(|_| project(q, random_u(r, 0.6, 1.4)).unwrap())
        .collect();
    let sums = |q: &HomographyParams| {
        let warp = Warp::new(q).unwrap();
        let mut s = BtoSums::default();
        for z in &zs {
            let (u, du) = warp.backwarp_with_jacobian(*z).unwrap();
            let rr = u.norm();
            let jr =
                nalgebra::RowVector6::from_fn(|_, c| (u.x * du[(0, c)] + u.y * du[(1, c)]) / rr);
            s.add(rr, &jr, &w);
        }
        s
    };
    let an = sums(q).terms(&w).gradient;
    let fd = fd_scalar(q, |q| sums(q).terms(&w).loss);
    rel_err(an.as_slice(), fd.as_slice())
}

/// `exp(A dt)` for the constant-acceleration generator by a truncated
/// Taylor series (exact for nilpotent `A` once three terms are in).
pub fn series_expm(dt: f64, terms: usize) -> Matrix3<f64> {
    let a = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0) * dt;
    let mut acc = Matrix3::identity();
    let mut term = Matrix3::identity();
    for k in 1..terms {
        term = term * a / k as f64;
        acc += term;
    }
    acc
}

/// `∫₀^dt L(τ) q Lᵀ(τ) dτ`, `L(τ) = [τ²/2, τ, 1]ᵀ`, by composite Simpson.
pub fn simpson_qd(dt: f64, q_jerk: f64, panels: usize) -> Matrix3<f64> {
    assert!(panels.is_multiple_of(2));
    let f = |tau: f64| {
        let l = nalgebra::Vector3::new(0.5 * tau * tau, tau, 1.0);
        l * l.transpose() * q_jerk
    };
    let h = dt / panels as f64;
    let mut acc = f(0.0) + f(dt);
    for i in 1..panels {
        let c = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(i as f64 * h) * c;
    }
    acc * (h / 3.0)
}

/// Largest entrywise relative error, floored at `1e-300`.
pub fn mat_rel_err(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300))
        .fold(0.0, f64::max)
}
