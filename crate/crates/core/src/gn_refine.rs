//! Batched Gauss-Newton refinement of the homography parameters.
//!
//! Every admitted event contributes a phase residual, a radial residual, a
//! polarity residual and two soft annulus barriers; all are linearised at the
//! current `q` with gates frozen at accumulation time. The balanced tip
//! occupancy (BTO) penalty is a batch-level term built from soft occupancies
//! of two narrow bands just inside and outside the unit radius. When the
//! phase trigger fires, the normal equations are solved and `q` is moved by a
//! per-parameter scaled step.
//!
//! Phase and polarity Jacobians are both multiples of `J^φ`; radial, band and
//! occupancy Jacobians are multiples of `J^r`. The accumulator exploits this
//! and performs two rank-one updates per event.

use nalgebra::{Cholesky, Matrix6, RowVector6, Vector2, Vector6};
use thiserror::Error;

use crate::ekf::{gate_ring, gate_vonmises, EkfParams};
use crate::event_io::Polarity;
use crate::geometry::{idx, HomographyParams, Jacobian2x6, Warp};
use crate::phase::{phase_residual, wrap_pi, PhaseError, RotorConfig};

pub type Row6 = RowVector6<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GnError {
    #[error("normal equations singular after Levenberg fallback")]
    SingularSystem,
    #[error(transparent)]
    Phase(#[from] PhaseError),
}

/// Loss weights and constants of the batch objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnWeights {
    pub lambda_phi: f64,
    pub lambda_r: f64,
    pub lambda_pol: f64,
    pub lambda_band: f64,
    pub lambda_bto: f64,
    pub lambda_reg: f64,
    /// Huber threshold on the phase residual (rad).
    pub c_phi: f64,
    /// Huber threshold on the radial residual.
    pub c_r: f64,
    pub c_pol: f64,
    /// Expected edge phase of positive events.
    pub c_plus: f64,
    /// Expected edge phase of negative events.
    pub c_minus: f64,
    pub c_b: f64,
    /// Softplus temperature for band barriers and the BTO penalty.
    pub tau: f64,
    pub r_in: f64,
    pub r_out: f64,
    pub tau_occ: f64,
    /// BTO bands sit at `1 - delta_band` and `1 + delta_band`.
    pub delta_band: f64,
    pub p_out_max: f64,
    pub p_in_min: f64,
    /// Extra occupancy bounds; infinite values disable them.
    pub p_in_max: f64,
    pub p_out_min: f64,
    /// Hard radial admission range for accumulation.
    pub admit_r_min: f64,
    pub admit_r_max: f64,
}

impl Default for GnWeights {
    fn default() -> Self {
        Self {
            lambda_phi: 1.0,
            lambda_r: 1.0,
            lambda_pol: 0.25,
            lambda_band: 5.0,
            lambda_bto: 1.0,
            lambda_reg: 1e-3,
            c_phi: 0.6,
            c_r: 0.3,
            c_pol: 0.5,
            c_plus: std::f64::consts::FRAC_PI_2,
            c_minus: -std::f64::consts::FRAC_PI_2,
            c_b: 1.0,
            tau: 0.05,
            r_in: 0.2,
            r_out: 1.5,
            tau_occ: 0.05,
            delta_band: 0.15,
            p_out_max: 0.6,
            p_in_min: 0.2,
            p_in_max: f64::INFINITY,
            p_out_min: f64::NEG_INFINITY,
            admit_r_min: 0.05,
            admit_r_max: 2.0,
        }
    }
}

impl GnWeights {
    pub fn validate(&self) -> Result<(), String> {
        let lambdas = [
            ("lambda_phi", self.lambda_phi),
            ("lambda_r", self.lambda_r),
            ("lambda_pol", self.lambda_pol),
            ("lambda_band", self.lambda_band),
            ("lambda_bto", self.lambda_bto),
            ("lambda_reg", self.lambda_reg),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0) {
                return Err(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.tau > 0.0) || !(self.tau_occ > 0.0) {
            return Err("tau and tau_occ must be > 0".into());
        }
        if !(0.0 < self.r_in && self.r_in < 1.0 && 1.0 < self.r_out) {
            return Err(format!(
                "annulus must satisfy 0 < r_in < 1 < r_out, got [{}, {}]",
                self.r_in, self.r_out
            ));
        }
        if !(self.c_phi > 0.0 && self.c_r > 0.0) {
            return Err("Huber thresholds must be > 0".into());
        }
        Ok(())
    }

    pub fn polarity_phase(&self, p: Polarity) -> f64 {
        match p {
            Polarity::On => self.c_plus,
            Polarity::Off => self.c_minus,
        }
    }

    pub fn bto_inner_radius(&self) -> f64 {
        1.0 - self.delta_band
    }

    pub fn bto_outer_radius(&self) -> f64 {
        1.0 + self.delta_band
    }
}

/// Diagonal step scaling Γ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepScaling {
    pub gamma_scale: f64,
    pub gamma_rot: f64,
    pub gamma_tx: f64,
    pub gamma_ty: f64,
    pub gamma_persp: f64,
}

impl Default for StepScaling {
    fn default() -> Self {
        Self {
            gamma_scale: 1.0,
            gamma_rot: 1.0,
            gamma_tx: 1.0,
            gamma_ty: 1.0,
            gamma_persp: 1.0,
        }
    }
}

impl StepScaling {
    pub fn uniform(g: f64) -> Self {
        Self {
            gamma_scale: g,
            gamma_rot: g,
            gamma_tx: g,
            gamma_ty: g,
            gamma_persp: g,
        }
    }

    pub fn diagonal(&self) -> Vector6<f64> {
        Vector6::new(
            self.gamma_scale,
            self.gamma_rot,
            self.gamma_tx,
            self.gamma_ty,
            self.gamma_persp,
            self.gamma_persp,
        )
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `τ ln(1 + e^{s/τ})`, linear branch above `s/τ > 30`.
#[inline]
pub fn softplus(s: f64, tau: f64) -> f64 {
    let a = s / tau;
    if a > 30.0 {
        s + tau * (-a).exp().ln_1p()
    } else {
        tau * a.exp().ln_1p()
    }
}

/// `min(1, c / |ε|)`.
#[inline]
pub fn huber_weight(eps: f64, c: f64) -> f64 {
    let a = eps.abs();
    if a <= c {
        1.0
    } else {
        c / a
    }
}

/// A scalar residual with its 1×6 Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub value: f64,
    pub jacobian: Row6,
}

/// `J^φ = -ζB e_ψ - B (∂θ_ζ/∂u)(∂u/∂q)`, with `∂θ_ζ/∂u = ζ(-u_y, u_x)/‖u‖²`.
pub fn residual_phase(
    eps_phi: f64,
    rotor: RotorConfig,
    u: Vector2<f64>,
    du_dq: &Jacobian2x6,
) -> Result<Residual, PhaseError> {
    let r2 = u.norm_squared();
    if r2 == 0.0 {
        return Err(PhaseError::OriginAzimuthUndefined);
    }
    let zb = rotor.zeta.sign() * rotor.b();
    let dtheta = [-zb * (-u.y) / r2, -zb * u.x / r2];
    let mut j = Row6::zeros();
    for c in 0..6 {
        j[c] = dtheta[0] * du_dq[(0, c)] + dtheta[1] * du_dq[(1, c)];
    }
    j[idx::PSI] -= zb;
    Ok(Residual {
        value: eps_phi,
        jacobian: j,
    })
}

/// `ε^r = ‖u‖ - 1`.
pub fn residual_radial(u: Vector2<f64>, du_dq: &Jacobian2x6) -> Residual {
    let r = u.norm();
    let mut j = Row6::zeros();
    if r > 0.0 {
        let (nx, ny) = (u.x / r, u.y / r);
        for c in 0..6 {
            j[c] = nx * du_dq[(0, c)] + ny * du_dq[(1, c)];
        }
    }
    Residual {
        value: r - 1.0,
        jacobian: j,
    }
}

/// `c_pol sin(δ/2)` with `δ = wrap_pi(ε^φ - θ_pol(p))`.
///
/// Returns the residual and the factor `a` such that `J^pol = a J^φ`.
pub fn residual_polarity(eps_phi: f64, p: Polarity, weights: &GnWeights) -> (f64, f64) {
    let delta = wrap_pi(eps_phi - weights.polarity_phase(p));
    let (s, c) = (0.5 * delta).sin_cos();
    (weights.c_pol * s, weights.c_pol * 0.5 * c)
}

/// Soft annulus barriers as multiples of `J^r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandResidual {
    pub value_in: f64,
    pub value_out: f64,
    /// `J^in = factor_in J^r`.
    pub factor_in: f64,
    /// `J^out = factor_out J^r`.
    pub factor_out: f64,
}

pub fn residual_band(r: f64, weights: &GnWeights) -> BandResidual {
    let (cb, tau) = (weights.c_b, weights.tau);
    let s_in = weights.r_in - r;
    let s_out = r - weights.r_out;
    BandResidual {
        value_in: cb * softplus(s_in, tau),
        value_out: cb * softplus(s_out, tau),
        factor_in: -cb * sigmoid(s_in / tau),
        factor_out: cb * sigmoid(s_out / tau),
    }
}

/// Soft occupancies `(m_in, m_out)` and their factors on `J^r`.
#[inline]
pub fn bto_occupancy(r: f64, weights: &GnWeights) -> (f64, f64, f64, f64) {
    let t = weights.tau_occ;
    let m_in = sigmoid((weights.bto_inner_radius() - r) / t);
    let m_out = sigmoid((r - weights.bto_outer_radius()) / t);
    (
        m_in,
        m_out,
        -m_in * (1.0 - m_in) / t,
        m_out * (1.0 - m_out) / t,
    )
}

/// Gate weights frozen at linearisation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenGates {
    /// `λ_φ w_vm w_ring w_Huber(ε^φ)`.
    pub g_phi: f64,
    /// `λ_r w_vm w_ring w_Huber(ε^r)`.
    pub g_r: f64,
}

impl FrozenGates {
    pub fn compute(eps_phi: f64, eps_r: f64, weights: &GnWeights, ekf: &EkfParams) -> Self {
        let base = gate_vonmises(eps_phi, ekf.kappa) * gate_ring(eps_r + 1.0, ekf.sigma_ring);
        Self {
            g_phi: weights.lambda_phi * base * huber_weight(eps_phi, weights.c_phi),
            g_r: weights.lambda_r * base * huber_weight(eps_r, weights.c_r),
        }
    }
}

/// All per-event quantities entering the normal equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventTerms {
    pub phase: Residual,
    pub radial: Residual,
    pub polarity: f64,
    pub polarity_factor: f64,
    pub band: BandResidual,
    pub gates: FrozenGates,
}

impl EventTerms {
    /// Builds the terms from an already back-warped event.
    ///
    /// Gates are computed from the residuals unless `frozen` is given.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        eps_phi: f64,
        u: Vector2<f64>,
        du_dq: &Jacobian2x6,
        p: Polarity,
        rotor: RotorConfig,
        weights: &GnWeights,
        ekf: &EkfParams,
        frozen: Option<FrozenGates>,
    ) -> Result<Self, PhaseError> {
        let phase = residual_phase(eps_phi, rotor, u, du_dq)?;
        let radial = residual_radial(u, du_dq);
        let (polarity, polarity_factor) = residual_polarity(eps_phi, p, weights);
        let band = residual_band(radial.value + 1.0, weights);
        let gates =
            frozen.unwrap_or_else(|| FrozenGates::compute(eps_phi, radial.value, weights, ekf));
        Ok(Self {
            phase,
            radial,
            polarity,
            polarity_factor,
            band,
            gates,
        })
    }

    /// Back-warps `z` through `warp` and builds the terms against phase `phi`.
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        warp: &Warp,
        z: Vector2<f64>,
        phi: f64,
        p: Polarity,
        rotor: RotorConfig,
        weights: &GnWeights,
        ekf: &EkfParams,
        frozen: Option<FrozenGates>,
    ) -> Result<Self, GnError> {
        let (u, du) = warp
            .backwarp_with_jacobian(z)
            .map_err(PhaseError::Geometry)?;
        let eps = phase_residual(phi, warp.params().psi, rotor, u)?;
        Ok(Self::from_parts(
            eps, u, &du, p, rotor, weights, ekf, frozen,
        )?)
    }

    pub fn r(&self) -> f64 {
        self.radial.value + 1.0
    }

    /// Per-event part of the batch objective.
    pub fn loss(&self, weights: &GnWeights) -> f64 {
        0.5 * (self.gates.g_phi * self.phase.value.powi(2)
            + self.gates.g_r * self.radial.value.powi(2)
            + weights.lambda_pol * self.polarity.powi(2)
            + weights.lambda_band * (self.band.value_in.powi(2) + self.band.value_out.powi(2)))
    }
}

/// Running sums for the BTO penalty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BtoSums {
    pub sum_in: f64,
    pub sum_out: f64,
    pub d_in: Vector6<f64>,
    pub d_out: Vector6<f64>,
    pub count: usize,
}

/// Value, gradient and Gauss-Newton Hessian of the BTO penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BtoTerms {
    pub p_in: f64,
    pub p_out: f64,
    pub loss: f64,
    pub gradient: Vector6<f64>,
    pub hessian: Matrix6<f64>,
}

impl BtoSums {
    pub fn add(&mut self, r: f64, j_r: &Row6, weights: &GnWeights) {
        let (m_in, m_out, f_in, f_out) = bto_occupancy(r, weights);
        self.sum_in += m_in;
        self.sum_out += m_out;
        self.d_in += j_r.transpose() * f_in;
        self.d_out += j_r.transpose() * f_out;
        self.count += 1;
    }

    /// Evaluates the penalty over the batch. An empty batch yields zeros.
    pub fn terms(&self, weights: &GnWeights) -> BtoTerms {
        let mut out = BtoTerms {
            p_in: 0.0,
            p_out: 0.0,
            loss: 0.0,
            gradient: Vector6::zeros(),
            hessian: Matrix6::zeros(),
        };
        if self.count == 0 {
            return out;
        }
        let n = self.count as f64;
        out.p_in = self.sum_in / n;
        out.p_out = self.sum_out / n;
        let dp_in = self.d_in / n;
        let dp_out = self.d_out / n;
        let tau = weights.tau;
        let slacks = [
            (weights.p_in_min - out.p_in, -dp_in),
            (out.p_in - weights.p_in_max, dp_in),
            (weights.p_out_min - out.p_out, -dp_out),
            (out.p_out - weights.p_out_max, dp_out),
        ];
        for (s, j) in slacks {
            if !s.is_finite() {
                continue;
            }
            let sig = sigmoid(s / tau);
            out.loss += softplus(s, tau);
            out.gradient += j * sig;
            out.hessian += (j * j.transpose()) * (sig * (1.0 - sig) / tau);
        }
        out
    }
}

/// Normal-equation terms of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GnAccumulator {
    pub h: Matrix6<f64>,
    pub g: Vector6<f64>,
    pub bto: BtoSums,
    pub n_events: usize,
    /// Sum of per-event objective terms at the linearisation point.
    pub data_loss: f64,
}

impl Default for GnAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl GnAccumulator {
    pub fn new() -> Self {
        Self {
            h: Matrix6::zeros(),
            g: Vector6::zeros(),
            bto: BtoSums::default(),
            n_events: 0,
            data_loss: 0.0,
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new();
    }

    pub fn add(&mut self, t: &EventTerms, weights: &GnWeights) {
        let jp = t.phase.jacobian.transpose();
        let jr = t.radial.jacobian.transpose();
        let gp = t.gates.g_phi;
        let gr = t.gates.g_r;
        let lp = weights.lambda_pol;
        let lb = weights.lambda_band;
        let b = &t.band;

        let w_phi = gp + lp * t.polarity_factor * t.polarity_factor;
        let w_r = gr + lb * (b.factor_in * b.factor_in + b.factor_out * b.factor_out);
        let g_phi = gp * t.phase.value + lp * t.polarity * t.polarity_factor;
        let g_r =
            gr * t.radial.value + lb * (b.value_in * b.factor_in + b.value_out * b.factor_out);

        self.h.ger(w_phi, &jp, &jp, 1.0);
        self.h.ger(w_r, &jr, &jr, 1.0);
        self.g.axpy(g_phi, &jp, 1.0);
        self.g.axpy(g_r, &jr, 1.0);
        self.bto.add(t.r(), &t.radial.jacobian, weights);
        self.data_loss += t.loss(weights);
        self.n_events += 1;
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().all(|v| v.is_finite()) && self.g.iter().all(|v| v.is_finite())
    }

    /// Full system `(H_GN + H_reg, g)` including BTO and regularisation.
    pub fn assemble(
        &self,
        weights: &GnWeights,
        q: &HomographyParams,
    ) -> (Matrix6<f64>, Vector6<f64>) {
        let bto = self.bto.terms(weights);
        let mut h = self.h + bto.hessian * weights.lambda_bto;
        let mut g = self.g + bto.gradient * weights.lambda_bto;
        h[(idx::P31, idx::P31)] += weights.lambda_reg;
        h[(idx::P32, idx::P32)] += weights.lambda_reg;
        g[idx::P31] += weights.lambda_reg * q.p31;
        g[idx::P32] += weights.lambda_reg * q.p32;
        (h, g)
    }
}

/// Number of Levenberg retries after the plain factorisation fails.
pub const LEVENBERG_RETRIES: usize = 8;

/// Solves `(H_GN + H_reg) Δq = -g`.
///
/// Cholesky first; on failure retries with `H + μI`, `μ = 1e-6 tr(H)/6`,
/// doubling `μ` each time.
pub fn assemble_and_solve(
    acc: &GnAccumulator,
    weights: &GnWeights,
    q: &HomographyParams,
) -> Result<Vector6<f64>, GnError> {
    if !acc.is_finite() {
        return Err(GnError::SingularSystem);
    }
    let (h, g) = acc.assemble(weights, q);
    solve_spd_levenberg(h, -g)
}

pub fn solve_spd_levenberg(h: Matrix6<f64>, rhs: Vector6<f64>) -> Result<Vector6<f64>, GnError> {
    let mean_diag = h.trace() / 6.0;
    if let Some(x) = factor_solve(h, &rhs, mean_diag) {
        return Ok(x);
    }
    let mut mu = 1e-6 * mean_diag;
    if !(mu > 0.0) {
        return Err(GnError::SingularSystem);
    }
    for _ in 0..LEVENBERG_RETRIES {
        let damped = h + Matrix6::identity() * mu;
        if let Some(x) = factor_solve(damped, &rhs, mean_diag) {
            return Ok(x);
        }
        mu *= 2.0;
    }
    Err(GnError::SingularSystem)
}

/// Relative pivot floor below which a factorisation counts as failed.
pub const PIVOT_RTOL: f64 = 1e-10;

/// Cholesky solve that also rejects pivots lost in round-off, e.g. the
/// in-plane rotation column when perspective is zero.
fn factor_solve(h: Matrix6<f64>, rhs: &Vector6<f64>, mean_diag: f64) -> Option<Vector6<f64>> {
    let ch = Cholesky::new(h)?;
    let floor = PIVOT_RTOL * mean_diag;
    if ch.l_dirty().diagonal().iter().any(|d| !(d * d > floor)) {
        return None;
    }
    let x = ch.solve(rhs);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Scale floor applied by [`apply_step`].
pub const MIN_SCALE: f64 = 1e-6;

/// Result of [`apply_step`]; `clamped` is set when the scale hit its floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stepped {
    pub q: HomographyParams,
    pub clamped: bool,
}

/// `q ← q + Γ Δq`, with the scale floored and ψ wrapped.
pub fn apply_step(q: &HomographyParams, delta: &Vector6<f64>, gamma: &StepScaling) -> Stepped {
    let v = q.to_vector() + gamma.diagonal().component_mul(delta);
    let mut out = HomographyParams::from_vector(&v);
    let clamped = !(out.s > MIN_SCALE);
    if clamped {
        out.s = MIN_SCALE;
    }
    out.psi = wrap_pi(out.psi);
    Stepped { q: out, clamped }
}

/// `|(φ - φ_base - B(ψ - ψ_base)) / B| >= π`.
#[inline]
pub fn should_trigger(phi: f64, psi: f64, phi_base: f64, psi_base: f64, blades: u32) -> bool {
    let b = blades as f64;
    ((phi - phi_base - b * (psi - psi_base)) / b).abs() >= std::f64::consts::PI
}

/// An event kept for objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchEvent {
    pub z: Vector2<f64>,
    pub phi: f64,
    pub p: Polarity,
}

/// Batch objective at `q` with gates held at `frozen` (one per event).
///
/// Events whose back-warp leaves the admission range or fails are skipped.
pub fn batch_objective(
    q: &HomographyParams,
    batch: &[BatchEvent],
    frozen: &[FrozenGates],
    rotor: RotorConfig,
    weights: &GnWeights,
    ekf: &EkfParams,
) -> Result<f64, GnError> {
    let warp = Warp::new(q).map_err(PhaseError::Geometry)?;
    let mut total = 0.0;
    let mut bto = BtoSums::default();
    for (ev, gates) in batch.iter().zip(frozen) {
        let Ok(t) =
            EventTerms::compute(&warp, ev.z, ev.phi, ev.p, rotor, weights, ekf, Some(*gates))
        else {
            continue;
        };
        total += t.loss(weights);
        bto.add(t.r(), &t.radial.jacobian, weights);
    }
    total += weights.lambda_bto * bto.terms(weights).loss;
    total += 0.5 * weights.lambda_reg * (q.p31 * q.p31 + q.p32 * q.p32);
    Ok(total)
}
