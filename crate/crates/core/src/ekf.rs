//! Per-event phase filter with constant-acceleration / white-jerk dynamics.
//!
//! State `x = [φ, ω, α]` (blade phase in rad, rad/s, rad/s²). The phase is
//! kept unwrapped; wrapping only happens inside the residual. Measurements are
//! scalar wrapped phase residuals with `C = [1, 0, 0]` and a heteroscedastic
//! variance inflated by the von Mises and ring gates.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum EkfError {
    #[error("negative time step {0} s")]
    NegativeDt(f64),
    #[error("timestamp regression: event at {event} µs before last {last} µs")]
    TimestampRegression { event: u64, last: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfParams {
    /// Jerk spectral density, rad²/s⁵.
    pub q_jerk: f64,
    /// Nominal phase noise σ₀ (rad).
    pub sigma0: f64,
    /// Von Mises concentration; 0 disables the angular gate.
    pub kappa: f64,
    pub sigma_ring: f64,
    /// Floor on the combined gate weight.
    pub eps_floor: f64,
}

impl Default for EkfParams {
    fn default() -> Self {
        Self {
            q_jerk: 400.0,
            sigma0: 0.3,
            kappa: 2.0,
            sigma_ring: 0.25,
            eps_floor: 1e-6,
        }
    }
}

impl EkfParams {
    /// Innovation variance `σ₀² / max(w_vm w_ring, ε)`.
    #[inline]
    pub fn innovation_variance(&self, gate_weight: f64) -> f64 {
        self.sigma0 * self.sigma0 / gate_weight.max(self.eps_floor)
    }
}

/// `(F, Q_d)` for a step of `dt` seconds.
pub fn transition(dt: f64, q_jerk: f64) -> Result<(Matrix3<f64>, Matrix3<f64>), EkfError> {
    if dt < 0.0 || dt.is_nan() {
        return Err(EkfError::NegativeDt(dt));
    }
    Ok((transition_matrix(dt), process_noise(dt, q_jerk)))
}

#[inline]
pub fn transition_matrix(dt: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, dt, 0.5 * dt * dt, 0.0, 1.0, dt, 0.0, 0.0, 1.0)
}

#[inline]
pub fn process_noise(dt: f64, q_jerk: f64) -> Matrix3<f64> {
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    let dt4 = dt3 * dt;
    let dt5 = dt4 * dt;
    q_jerk
        * Matrix3::new(
            dt5 / 20.0,
            dt4 / 8.0,
            dt3 / 6.0,
            dt4 / 8.0,
            dt3 / 3.0,
            dt2 / 2.0,
            dt3 / 6.0,
            dt2 / 2.0,
            dt,
        )
}

/// `exp(κ (cos ε - 1))`.
#[inline]
pub fn gate_vonmises(eps_phi: f64, kappa: f64) -> f64 {
    (kappa * (eps_phi.cos() - 1.0)).exp()
}

/// Gaussian weight around the unit radius.
#[inline]
pub fn gate_ring(r: f64, sigma_ring: f64) -> f64 {
    let z = (r - 1.0) / sigma_ring;
    (-0.5 * z * z).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    pub x: Vector3<f64>,
    pub p: Matrix3<f64>,
    /// Timestamp (µs) of the last assimilated event.
    pub t_last: u64,
}

impl PhaseState {
    /// `P₀ = diag(σ₀², (0.1 ω₀)², (10 ω₀)²)`.
    pub fn new(phi: f64, omega: f64, t: u64, sigma0: f64) -> Self {
        let w = omega.abs();
        Self {
            x: Vector3::new(phi, omega, 0.0),
            p: Matrix3::from_diagonal(&Vector3::new(
                sigma0 * sigma0,
                (0.1 * w).powi(2),
                (10.0 * w).powi(2),
            )),
            t_last: t,
        }
    }

    pub fn phi(&self) -> f64 {
        self.x[0]
    }

    pub fn omega(&self) -> f64 {
        self.x[1]
    }

    pub fn alpha(&self) -> f64 {
        self.x[2]
    }

    /// Propagates to `t_event` (µs).
    pub fn predict(&mut self, t_event: u64, q_jerk: f64) -> Result<(), EkfError> {
        if t_event < self.t_last {
            return Err(EkfError::TimestampRegression {
                event: t_event,
                last: self.t_last,
            });
        }
        if t_event == self.t_last {
            return Ok(());
        }
        let dt = (t_event - self.t_last) as f64 * 1e-6;
        let f = transition_matrix(dt);
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + process_noise(dt, q_jerk);
        symmetrize(&mut self.p);
        self.t_last = t_event;
        Ok(())
    }

    /// Scalar update with residual `eps_phi` and innovation variance `r_var`.
    ///
    /// The residual is `φ_pred - measurement`, hence `x ← x - K ε`.
    pub fn update(&mut self, eps_phi: f64, r_var: f64) {
        let pc = self.p.column(0).into_owned();
        let s = pc[0] + r_var;
        let k = pc / s;
        self.x -= k * eps_phi;
        // (I - K C) P
        self.p -= k * pc.transpose();
        symmetrize(&mut self.p);
    }

    /// Gated update: computes `R` from the gate product before updating.
    pub fn update_gated(&mut self, eps_phi: f64, r: f64, params: &EkfParams) -> f64 {
        let w = gate_vonmises(eps_phi, params.kappa) * gate_ring(r, params.sigma_ring);
        let r_var = params.innovation_variance(w);
        self.update(eps_phi, r_var);
        r_var
    }
}

#[inline]
fn symmetrize(p: &mut Matrix3<f64>) {
    for i in 0..3 {
        for j in (i + 1)..3 {
            let m = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = m;
            p[(j, i)] = m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn transition_examples() {
        let (f, q) = transition(0.0, 400.0).unwrap();
        assert_eq!(f, Matrix3::identity());
        assert_eq!(q, Matrix3::zeros());
        let (f, q) = transition(1.0, 1.0).unwrap();
        assert_eq!(f, Matrix3::new(1.0, 1.0, 0.5, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0));
        let expected = Matrix3::new(
            0.05,
            0.125,
            1.0 / 6.0,
            0.125,
            1.0 / 3.0,
            0.5,
            1.0 / 6.0,
            0.5,
            1.0,
        );
        assert!((q - expected).abs().max() < 1e-16);
        assert_eq!(transition(-1e-3, 1.0), Err(EkfError::NegativeDt(-1e-3)));
    }

    #[test]
    fn predict_examples() {
        let mut s = PhaseState::new(0.3, 2.0, 100, 0.3);
        let before = s;
        s.predict(100, 400.0).unwrap();
        assert_eq!(s, before);

        let mut s = PhaseState::new(0.0, 2.0 * PI, 0, 0.3);
        s.predict(500_000, 400.0).unwrap();
        assert!((s.phi() - PI).abs() < 1e-12);
        assert_eq!(s.omega(), 2.0 * PI);
        assert_eq!(s.alpha(), 0.0);
        assert_eq!(s.t_last, 500_000);

        assert!(matches!(
            s.predict(10, 400.0),
            Err(EkfError::TimestampRegression { .. })
        ));
    }

    #[test]
    fn gate_examples() {
        assert_eq!(gate_vonmises(0.0, 7.0), 1.0);
        assert_eq!(gate_vonmises(2.3, 0.0), 1.0);
        assert!((gate_vonmises(PI, 1.0) - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(gate_ring(1.0, 0.25), 1.0);
        assert!((gate_ring(1.25, 0.25) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((gate_ring(0.0, 0.25) - (-8.0f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn update_examples() {
        let mut s = PhaseState::new(1.0, 10.0, 0, 0.3);
        let x0 = s.x;
        let p11 = s.p[(0, 0)];
        s.update(0.0, 0.09);
        assert_eq!(s.x, x0);
        assert!(s.p[(0, 0)] < p11);

        let mut s = PhaseState {
            x: Vector3::new(0.7, 0.0, 0.0),
            p: Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0)),
            t_last: 0,
        };
        s.update(0.2, 1.0);
        assert!((s.phi() - 0.6).abs() < 1e-15);
        assert_eq!(s.p[(0, 0)], 0.5);
    }

    #[test]
    fn fully_gated_event_barely_moves_phase() {
        let params = EkfParams {
            eps_floor: 1e-6,
            sigma0: 0.3,
            ..Default::default()
        };
        let mut s = PhaseState {
            x: Vector3::new(0.0, 0.0, 0.0),
            p: Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 1.0)),
            t_last: 0,
        };
        // r far from the ring and ε = π drive the gate product under the floor
        let eps = -PI;
        let r_var = s.update_gated(eps, 10.0, &params);
        assert_eq!(r_var, 0.09 / 1e-6);
        let bound = 1.0 / (1.0 + r_var) * eps.abs();
        assert!(s.phi().abs() <= bound * (1.0 + 1e-12));
        assert!(s.phi().abs() < 2e-5 * eps.abs());
    }

    #[test]
    fn innovation_variance_monotone() {
        let p = EkfParams::default();
        let mut last = f64::INFINITY;
        for i in 0..=100 {
            let r = p.innovation_variance(i as f64 / 100.0);
            assert!(r <= last);
            last = r;
        }
    }
}
