//! Time integration of the Fisher-Rao (birth-death) gradient flow
//!
//! ```text
//! d/dt nu_t(x) = -a(nu_t, mu_t, x) nu_t(x)
//! d/dt mu_t(y) = +b(nu_t, mu_t, y) mu_t(y)
//! ```
//!
//! where `a`, `b` are the centered drifts of the regularized objective. All
//! stepping happens in log-density space, so the multiplicative structure of
//! the flow becomes additive and positivity is preserved exactly. Schemes:
//!
//! - `euler_log`: explicit Euler on the log-densities, simultaneous (Jacobi)
//!   evaluation of both drifts at the incoming state;
//! - `exp_duhamel`: exact integration of the linear log-confinement part
//!   (the `-(sigma^2/2) log(nu/pi)` term), with the payoff derivative and KL
//!   normalizer frozen at the step start — unconditionally stable in the
//!   linear part;
//! - [`picard_solve`]: the fixed-point construction on a uniform time mesh,
//!   iterating the Duhamel integral map with trapezoidal quadrature over the
//!   stored previous iterate, contracting in the time-integrated
//!   total-variation metric.

use crate::measure::GridMeasure;
use crate::payoff::{self, PayoffSpec, RegularizedObjective};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerLog,
    ExpDuhamel,
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    pub sample_every: usize,
}

impl IntegratorConfig {
    pub fn new(scheme: Scheme, dt: f64, t_end: f64, sample_every: usize) -> Result<IntegratorConfig> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("dt", format!("{dt} not in (0, inf)")));
        }
        if !(t_end.is_finite() && t_end >= dt) {
            return Err(Error::invalid("t_end", format!("need dt <= T, got dt={dt}, T={t_end}")));
        }
        if sample_every == 0 {
            return Err(Error::invalid("sample_every", "must be positive"));
        }
        Ok(IntegratorConfig { scheme, dt, t_end, sample_every })
    }

    /// Defaults: dt = 1e-3, T = 20 / sigma^2, sample stride chosen to keep
    /// at most 2000 samples.
    pub fn default_for_sigma(scheme: Scheme, sigma: f64) -> Result<IntegratorConfig> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid("sigma", format!("{sigma} not in (0, inf)")));
        }
        let dt = 1e-3;
        let t_end = 20.0 / (sigma * sigma);
        let steps = (t_end / dt).round() as usize;
        let sample_every = (steps / 2000).max(1);
        IntegratorConfig::new(scheme, dt, t_end, sample_every)
    }
}

/// The pair `(nu_t, mu_t)` at a given time.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub nu: GridMeasure,
    pub mu: GridMeasure,
}

/// Per-sample diagnostics recorded along a trajectory. Mass errors are the
/// largest pre-renormalization drift `|mass - 1|` over the steps since the
/// previous sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleDiag {
    pub t: f64,
    pub kl_nu_pi: f64,
    pub kl_mu_rho: f64,
    pub sup_ratio_nu: f64,
    pub inf_ratio_nu: f64,
    pub sup_ratio_mu: f64,
    pub inf_ratio_mu: f64,
    pub mass_err_nu: f64,
    pub mass_err_mu: f64,
}

/// Initial density-ratio constants of the ratio condition (warm start).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct RatioConstants {
    pub r_nu: f64,
    pub big_r_nu: f64,
    pub r_mu: f64,
    pub big_r_mu: f64,
}

/// Theoretical envelopes propagated from the initial ratio constants and the
/// first-derivative bounds: the KL bound `2 log R + (4/sigma^2) C` and the
/// all-time ratio bounds `R_1 = 1 + exp(3 log R + (6/sigma^2) C)` and
/// `r_1 = exp(-|log r| - (2/sigma^2) C)`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EnvelopeReport {
    pub kl_bound_nu: f64,
    pub kl_bound_mu: f64,
    pub sup_bound_nu: f64,
    pub sup_bound_mu: f64,
    pub inf_bound_nu: f64,
    pub inf_bound_mu: f64,
    /// Samples violating an envelope beyond the 5% discretization margin.
    /// Violations indicate discretization error; they are reported, not fatal.
    pub violations: usize,
}

/// Envelope margin tolerated before a sample counts as a violation.
pub const ENVELOPE_MARGIN: f64 = 0.05;

impl EnvelopeReport {
    pub(crate) fn from_constants(sigma: f64, ratios: &RatioConstants, c_nu: f64, c_mu: f64) -> EnvelopeReport {
        let s2 = sigma * sigma;
        EnvelopeReport {
            kl_bound_nu: 2.0 * ratios.big_r_nu.ln() + 4.0 / s2 * c_nu,
            kl_bound_mu: 2.0 * ratios.big_r_mu.ln() + 4.0 / s2 * c_mu,
            sup_bound_nu: 1.0 + (3.0 * ratios.big_r_nu.ln() + 6.0 / s2 * c_nu).exp(),
            sup_bound_mu: 1.0 + (3.0 * ratios.big_r_mu.ln() + 6.0 / s2 * c_mu).exp(),
            inf_bound_nu: (-(ratios.r_nu.ln().abs()) - 2.0 / s2 * c_nu).exp(),
            inf_bound_mu: (-(ratios.r_mu.ln().abs()) - 2.0 / s2 * c_mu).exp(),
            violations: 0,
        }
    }

    fn unconstrained() -> EnvelopeReport {
        EnvelopeReport {
            kl_bound_nu: f64::INFINITY,
            kl_bound_mu: f64::INFINITY,
            sup_bound_nu: f64::INFINITY,
            sup_bound_mu: f64::INFINITY,
            inf_bound_nu: 0.0,
            inf_bound_mu: 0.0,
            violations: 0,
        }
    }

    fn check(&mut self, d: &SampleDiag) {
        let m = 1.0 + ENVELOPE_MARGIN;
        let violated = d.kl_nu_pi > self.kl_bound_nu * m
            || d.kl_mu_rho > self.kl_bound_mu * m
            || d.sup_ratio_nu > self.sup_bound_nu * m
            || d.sup_ratio_mu > self.sup_bound_mu * m
            || d.inf_ratio_nu < self.inf_bound_nu / m
            || d.inf_ratio_mu < self.inf_bound_mu / m;
        if violated {
            self.violations += 1;
        }
    }
}

/// A time-sampled trajectory of the coupled flow with per-sample diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<FlowState>,
    pub diagnostics: Vec<SampleDiag>,
    pub ratio_constants: RatioConstants,
    pub envelope: EnvelopeReport,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn terminal(&self) -> &FlowState {
        self.samples.last().expect("trajectory has at least the initial sample")
    }
}

fn ensure_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what, index: i });
    }
    Ok(())
}

fn euler_shifts(state: &FlowState, obj: &RegularizedObjective, dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = obj.drift_a(&state.nu, &state.mu)?;
    let b = obj.drift_b(&state.nu, &state.mu)?;
    ensure_finite("drift_a", &a)?;
    ensure_finite("drift_b", &b)?;
    let shift_nu: Vec<f64> = a.iter().map(|v| -dt * v).collect();
    let shift_mu: Vec<f64> = b.iter().map(|v| dt * v).collect();
    Ok((shift_nu, shift_mu))
}

fn step_tilt(state: &FlowState, shift_nu: &[f64], shift_mu: &[f64], dt: f64) -> Result<(FlowState, f64, f64)> {
    let mass_nu = (state.nu.tilted_mass(shift_nu) - 1.0).abs();
    let mass_mu = (state.mu.tilted_mass(shift_mu) - 1.0).abs();
    let nu = state.nu.tilt(shift_nu)?;
    let mu = state.mu.tilt(shift_mu)?;
    Ok((FlowState { t: state.t + dt, nu, mu }, mass_nu, mass_mu))
}

/// One explicit Euler step in log-density space; both drifts are evaluated
/// at the incoming state.
pub fn step_euler_log(state: &FlowState, obj: &RegularizedObjective, dt: f64) -> Result<FlowState> {
    let (sn, sm) = euler_shifts(state, obj, dt)?;
    Ok(step_tilt(state, &sn, &sm, dt)?.0)
}

fn duhamel_shifts(state: &FlowState, obj: &RegularizedObjective, dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let sigma = obj.require_positive_sigma("step_exp_duhamel")?;
    let s2 = sigma * sigma;
    let kappa = 0.5 * s2 * dt;
    let decay = (-kappa).exp();
    // 1 - e^{-kappa} via exp_m1: no cancellation for small steps.
    let gain = -(-kappa).exp_m1() * 2.0 / s2;

    let g = payoff::flat_dnu_raw(obj.payoff(), &state.mu)?;
    let h = payoff::flat_dmu_raw(obj.payoff(), &state.nu, &state.mu)?;
    ensure_finite("flat_dnu", &g)?;
    ensure_finite("flat_dmu", &h)?;
    let kl_nu = state.nu.kl_divergence(obj.pi().measure())?;
    let kl_mu = state.mu.kl_divergence(obj.rho().measure())?;

    // log nu+ = log pi + e^{-kappa} u + gain (-G + (sigma^2/2) KL_nu) with
    // u = log nu - log pi, expressed below as a shift from the incoming log nu.
    let pi_log = obj.pi().measure().log_density();
    let shift_nu: Vec<f64> = state
        .nu
        .log_density()
        .iter()
        .zip(pi_log)
        .zip(&g)
        .map(|((lnu, lpi), gi)| {
            let u = lnu - lpi;
            (decay - 1.0) * u + gain * (-gi + 0.5 * s2 * kl_nu)
        })
        .collect();
    let rho_log = obj.rho().measure().log_density();
    let shift_mu: Vec<f64> = state
        .mu
        .log_density()
        .iter()
        .zip(rho_log)
        .zip(&h)
        .map(|((lmu, lrho), hj)| {
            let v = lmu - lrho;
            (decay - 1.0) * v + gain * (hj + 0.5 * s2 * kl_mu)
        })
        .collect();
    Ok((shift_nu, shift_mu))
}

/// One exponential-integrator step: the linear log-confinement part is
/// integrated exactly, the payoff derivatives and KL normalizers are frozen
/// at the step start.
pub fn step_exp_duhamel(state: &FlowState, obj: &RegularizedObjective, dt: f64) -> Result<FlowState> {
    let (sn, sm) = duhamel_shifts(state, obj, dt)?;
    Ok(step_tilt(state, &sn, &sm, dt)?.0)
}

/// Crude sup-norm bounds on the centered first flat derivatives, derived
/// from the kernel magnitudes alone (no probing). These are upper bounds,
/// used for the step-size stability guard and the envelope report inside
/// [`integrate`].
pub(crate) fn crude_first_order_bounds(spec: &PayoffSpec) -> (f64, f64) {
    fn sup_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
    match spec {
        PayoffSpec::Bilinear { kernel, .. } => {
            let m = sup_abs(kernel);
            (2.0 * m, 2.0 * m)
        }
        PayoffSpec::Separable { phi_x, phi_y, .. } => (2.0 * sup_abs(phi_x), 2.0 * sup_abs(phi_y)),
        PayoffSpec::Composite { kernel, lambda, t_mix, penalty, .. } => {
            let eff = sup_abs(kernel) + lambda * t_mix * sup_abs(penalty);
            // The mu derivative carries the baseline difference (factor 2)
            // plus the outer-function term; |g'| <= 1 for the supported outers.
            let c_mu = 2.0 * (2.0 * eff + lambda * (1.0 - t_mix) * sup_abs(penalty));
            (2.0 * eff, c_mu)
        }
    }
}

/// Operational window for the warm-start ratio condition. Log-domain storage
/// makes a literal zero ratio impossible, so "bounded away from 0 and
/// infinity" is enforced as `ratio in [1e-100, 1e100]`; in particular,
/// raw-density inputs floored at 1e-300 are rejected as effectively
/// unsupported points.
pub const RATIO_GUARD: f64 = 1e-100;

fn ratio_constants(nu0: &GridMeasure, mu0: &GridMeasure, obj: &RegularizedObjective) -> Result<RatioConstants> {
    let (r_nu, big_r_nu) = nu0.ratio_bounds(obj.pi().measure())?;
    let (r_mu, big_r_mu) = mu0.ratio_bounds(obj.rho().measure())?;
    if !(r_nu >= RATIO_GUARD && big_r_nu <= 1.0 / RATIO_GUARD) {
        return Err(Error::RatioCondition {
            side: "nu",
            detail: format!("nu0/pi ratios in [{r_nu:.3e}, {big_r_nu:.3e}] are not bounded away from 0 and infinity"),
        });
    }
    if !(r_mu >= RATIO_GUARD && big_r_mu <= 1.0 / RATIO_GUARD) {
        return Err(Error::RatioCondition {
            side: "mu",
            detail: format!("mu0/rho ratios in [{r_mu:.3e}, {big_r_mu:.3e}] are not bounded away from 0 and infinity"),
        });
    }
    Ok(RatioConstants { r_nu, big_r_nu, r_mu, big_r_mu })
}

fn diag_for(state: &FlowState, obj: &RegularizedObjective, mass_nu: f64, mass_mu: f64) -> Result<SampleDiag> {
    let (inf_nu, sup_nu) = state.nu.ratio_bounds(obj.pi().measure())?;
    let (inf_mu, sup_mu) = state.mu.ratio_bounds(obj.rho().measure())?;
    Ok(SampleDiag {
        t: state.t,
        kl_nu_pi: state.nu.kl_divergence(obj.pi().measure())?,
        kl_mu_rho: state.mu.kl_divergence(obj.rho().measure())?,
        sup_ratio_nu: sup_nu,
        inf_ratio_nu: inf_nu,
        sup_ratio_mu: sup_mu,
        inf_ratio_mu: inf_mu,
        mass_err_nu: mass_nu,
        mass_err_mu: mass_mu,
    })
}

/// Integrate the coupled flow over `[0, T]`.
///
/// The initial pair must satisfy the ratio condition against the references;
/// the observed `(r, R)` constants are recorded on the trajectory. Per-sample
/// theorem envelopes (KL bound and all-time ratio bounds) are checked with a
/// 5% margin and violations are counted, not fatal.
pub fn integrate(
    nu0: &GridMeasure,
    mu0: &GridMeasure,
    obj: &RegularizedObjective,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let sigma = obj.require_positive_sigma("integrate")?;
    let s2 = sigma * sigma;
    let (c_nu, c_mu) = crude_first_order_bounds(obj.payoff());
    if matches!(cfg.scheme, Scheme::EulerLog) {
        let guard = 0.5 * (1.0 / s2).min(1.0 / (c_nu + c_mu + 1.0));
        if cfg.dt > guard {
            return Err(Error::invalid(
                "dt",
                format!("euler_log stability guard requires dt <= {guard:.3e}, got {:.3e}", cfg.dt),
            ));
        }
    }

    let ratios = ratio_constants(nu0, mu0, obj)?;
    let mut envelope = EnvelopeReport::from_constants(sigma, &ratios, c_nu, c_mu);

    let steps = (cfg.t_end / cfg.dt).round().max(1.0) as usize;
    let mut state = FlowState { t: 0.0, nu: nu0.clone(), mu: mu0.clone() };
    let mut samples = Vec::new();
    let mut diagnostics = Vec::new();

    let d0 = diag_for(&state, obj, 0.0, 0.0)?;
    envelope.check(&d0);
    samples.push(state.clone());
    diagnostics.push(d0);

    let mut stride_mass_nu = 0.0_f64;
    let mut stride_mass_mu = 0.0_f64;
    for k in 1..=steps {
        let (sn, sm) = match cfg.scheme {
            Scheme::EulerLog => euler_shifts(&state, obj, cfg.dt)?,
            Scheme::ExpDuhamel => duhamel_shifts(&state, obj, cfg.dt)?,
        };
        let (mut next, m_nu, m_mu) = step_tilt(&state, &sn, &sm, cfg.dt)?;
        next.t = k as f64 * cfg.dt;
        stride_mass_nu = stride_mass_nu.max(m_nu);
        stride_mass_mu = stride_mass_mu.max(m_mu);
        state = next;
        if k % cfg.sample_every == 0 || k == steps {
            let d = diag_for(&state, obj, stride_mass_nu, stride_mass_mu)?;
            envelope.check(&d);
            samples.push(state.clone());
            diagnostics.push(d);
            stride_mass_nu = 0.0;
            stride_mass_mu = 0.0;
        }
    }

    Ok(Trajectory { samples, diagnostics, ratio_constants: ratios, envelope })
}

/// Result of the Picard fixed-point construction.
#[derive(Debug, Clone)]
pub struct PicardResult {
    pub trajectory: Trajectory,
    /// Time-integrated TV distance between successive iterates.
    pub iterate_distances: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Time-integrated total variation distance between two trajectories sampled
/// at identical times (trapezoidal rule in `t`, summed over both players).
pub fn trajectory_tv_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.samples.len() != b.samples.len() {
        return Err(Error::invalid("trajectories", "sample counts differ"));
    }
    let mut pointwise = Vec::with_capacity(a.samples.len());
    for (sa, sb) in a.samples.iter().zip(&b.samples) {
        if (sa.t - sb.t).abs() > 1e-9 * (1.0 + sa.t.abs()) {
            return Err(Error::invalid(
                "trajectories",
                format!("sample times differ: {} vs {}", sa.t, sb.t),
            ));
        }
        pointwise.push(sa.nu.tv_distance(&sb.nu)? + sa.mu.tv_distance(&sb.mu)?);
    }
    Ok(trapezoid(&a.times(), &pointwise))
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 1..times.len() {
        acc += 0.5 * (times[k] - times[k - 1]) * (values[k] + values[k - 1]);
    }
    acc
}

/// Solve the flow on `[0, T]` by Picard iteration of the Duhamel integral
/// map on a uniform mesh of `n_time_nodes` nodes.
///
/// Each iteration rebuilds the whole trajectory from the previous iterate,
/// evaluating the memory integral by trapezoidal quadrature and
/// renormalizing every node. Iteration stops when the time-integrated TV
/// distance between successive iterates drops below `tol`; the distance
/// sequence is returned and is eventually geometric (the map is a
/// contraction on `[0, T]`). Exhausting `max_iters` returns the best iterate
/// flagged non-converged.
pub fn picard_solve(
    nu0: &GridMeasure,
    mu0: &GridMeasure,
    obj: &RegularizedObjective,
    t_end: f64,
    n_time_nodes: usize,
    tol: f64,
    max_iters: usize,
) -> Result<PicardResult> {
    let sigma = obj.require_positive_sigma("picard_solve")?;
    if n_time_nodes < 2 {
        return Err(Error::invalid("n_time_nodes", "need at least 2 time nodes"));
    }
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::invalid("t_end", format!("{t_end} not in (0, inf)")));
    }
    let ratios = ratio_constants(nu0, mu0, obj)?;
    let s2 = sigma * sigma;
    let n = n_time_nodes;
    let h = t_end / (n - 1) as f64;
    let times: Vec<f64> = (0..n).map(|k| k as f64 * h).collect();

    let pi_log = obj.pi().measure().log_density().to_vec();
    let rho_log = obj.rho().measure().log_density().to_vec();
    let log_nu0 = nu0.log_density().to_vec();
    let log_mu0 = mu0.log_density().to_vec();

    // Start from the constant-in-time iterate.
    let mut nodes: Vec<(GridMeasure, GridMeasure)> = (0..n).map(|_| (nu0.clone(), mu0.clone())).collect();
    let mut distances = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut node_mass_err = vec![(0.0_f64, 0.0_f64); n];

    while iterations < max_iters {
        iterations += 1;
        // Frozen data from the previous iterate at each node.
        let mut g_nu = Vec::with_capacity(n);
        let mut g_mu = Vec::with_capacity(n);
        let mut kl_nu = Vec::with_capacity(n);
        let mut kl_mu = Vec::with_capacity(n);
        for (nu_s, mu_s) in &nodes {
            g_nu.push(payoff::flat_dnu_raw(obj.payoff(), mu_s)?);
            g_mu.push(payoff::flat_dmu_raw(obj.payoff(), nu_s, mu_s)?);
            kl_nu.push(nu_s.kl_divergence(obj.pi().measure())?);
            kl_mu.push(mu_s.kl_divergence(obj.rho().measure())?);
        }

        let mut next = Vec::with_capacity(n);
        next.push((nu0.clone(), mu0.clone()));
        for k in 1..n {
            let t = times[k];
            let decay0 = (-0.5 * s2 * t).exp();
            // Trapezoidal weights of the memory integral over [0, t_k].
            let quad: Vec<f64> = (0..=k)
                .map(|j| {
                    let w = if j == 0 || j == k { 0.5 * h } else { h };
                    w * 0.5 * s2 * (-0.5 * s2 * (t - times[j])).exp()
                })
                .collect();

            let mut lw_nu: Vec<f64> = log_nu0
                .iter()
                .zip(&pi_log)
                .map(|(l0, lpi)| decay0 * l0 + (1.0 - decay0) * lpi)
                .collect();
            for (j, w) in quad.iter().enumerate() {
                let g = &g_nu[j];
                let kl = kl_nu[j];
                for (lw, gi) in lw_nu.iter_mut().zip(g) {
                    *lw -= w * (2.0 / s2 * gi - kl);
                }
            }
            let mut lw_mu: Vec<f64> = log_mu0
                .iter()
                .zip(&rho_log)
                .map(|(l0, lrho)| decay0 * l0 + (1.0 - decay0) * lrho)
                .collect();
            for (j, w) in quad.iter().enumerate() {
                let g = &g_mu[j];
                let kl = kl_mu[j];
                for (lw, gj) in lw_mu.iter_mut().zip(g) {
                    *lw += w * (2.0 / s2 * gj + kl);
                }
            }
            let (nu_k, log_z_nu) = GridMeasure::from_log_weights(nu0.grid().clone(), &lw_nu)?;
            let (mu_k, log_z_mu) = GridMeasure::from_log_weights(mu0.grid().clone(), &lw_mu)?;
            node_mass_err[k] = ((log_z_nu.exp() - 1.0).abs(), (log_z_mu.exp() - 1.0).abs());
            next.push((nu_k, mu_k));
        }

        let mut dist_nu = Vec::with_capacity(n);
        let mut dist_mu = Vec::with_capacity(n);
        for ((nu_new, mu_new), (nu_old, mu_old)) in next.iter().zip(&nodes) {
            dist_nu.push(nu_new.tv_distance(nu_old)?);
            dist_mu.push(mu_new.tv_distance(mu_old)?);
        }
        let dist = trapezoid(&times, &dist_nu) + trapezoid(&times, &dist_mu);
        distances.push(dist);
        nodes = next;
        if dist <= tol {
            converged = true;
            break;
        }
    }

    let (c_nu, c_mu) = crude_first_order_bounds(obj.payoff());
    let mut envelope = EnvelopeReport::from_constants(sigma, &ratios, c_nu, c_mu);
    let mut samples = Vec::with_capacity(n);
    let mut diagnostics = Vec::with_capacity(n);
    for (k, (nu_k, mu_k)) in nodes.into_iter().enumerate() {
        let state = FlowState { t: times[k], nu: nu_k, mu: mu_k };
        let d = diag_for(&state, obj, node_mass_err[k].0, node_mass_err[k].1)?;
        envelope.check(&d);
        samples.push(state);
        diagnostics.push(d);
    }
    let trajectory = Trajectory { samples, diagnostics, ratio_constants: ratios, envelope };
    Ok(PicardResult { trajectory, iterate_distances: distances, iterations, converged })
}

/// Two-population replicator dynamics for a bilinear payoff on finite
/// strategy sets.
///
/// With `sigma = 0` this is the classical zero-sum replicator (the drifts
/// reduce to centered payoffs); the step is an explicit midpoint rule in log
/// space, so the interior-equilibrium invariant drifts only at O(dt^2) per
/// unit time. With `sigma > 0` it is the full Fisher-Rao flow on finite sets
/// with uniform references, delegated to [`integrate`]. Nothing beyond
/// conservation is asserted for `sigma = 0`: the regularized convergence
/// theory does not cover that case.
pub fn replicator_trajectory(
    payoff: &PayoffSpec,
    nu0: &GridMeasure,
    mu0: &GridMeasure,
    sigma: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let bilinear = matches!(payoff, PayoffSpec::Bilinear { .. });
    if !bilinear || !payoff.grid_x().is_finite_set() || !payoff.grid_y().is_finite_set() {
        return Err(Error::invalid(
            "payoff",
            "replicator dynamics need a bilinear payoff on finite strategy sets",
        ));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid("sigma", format!("{sigma} not in [0, inf)")));
    }
    if sigma > 0.0 {
        let obj = RegularizedObjective::new(
            payoff.clone(),
            sigma,
            crate::measure::ReferenceMeasure::uniform(payoff.grid_x().clone()),
            crate::measure::ReferenceMeasure::uniform(payoff.grid_y().clone()),
        )?;
        return integrate(nu0, mu0, &obj, cfg);
    }

    let drifts = |nu: &GridMeasure, mu: &GridMeasure| -> Result<(Vec<f64>, Vec<f64>)> {
        let a = payoff::flat_dnu(payoff, nu, mu)?;
        let b = payoff::flat_dmu(payoff, nu, mu)?;
        ensure_finite("replicator payoff", &a)?;
        ensure_finite("replicator payoff", &b)?;
        Ok((a, b))
    };

    let uniform_nu = GridMeasure::uniform(payoff.grid_x().clone());
    let uniform_mu = GridMeasure::uniform(payoff.grid_y().clone());
    let diag0 = |state: &FlowState, m_nu: f64, m_mu: f64| -> Result<SampleDiag> {
        let (inf_nu, sup_nu) = state.nu.ratio_bounds(&uniform_nu)?;
        let (inf_mu, sup_mu) = state.mu.ratio_bounds(&uniform_mu)?;
        Ok(SampleDiag {
            t: state.t,
            kl_nu_pi: state.nu.kl_divergence(&uniform_nu)?,
            kl_mu_rho: state.mu.kl_divergence(&uniform_mu)?,
            sup_ratio_nu: sup_nu,
            inf_ratio_nu: inf_nu,
            sup_ratio_mu: sup_mu,
            inf_ratio_mu: inf_mu,
            mass_err_nu: m_nu,
            mass_err_mu: m_mu,
        })
    };

    let (r_nu, big_r_nu) = nu0.ratio_bounds(&uniform_nu)?;
    let (r_mu, big_r_mu) = mu0.ratio_bounds(&uniform_mu)?;
    let ratios = RatioConstants { r_nu, big_r_nu, r_mu, big_r_mu };

    let steps = (cfg.t_end / cfg.dt).round().max(1.0) as usize;
    let mut state = FlowState { t: 0.0, nu: nu0.clone(), mu: mu0.clone() };
    let mut samples = vec![state.clone()];
    let mut diagnostics = vec![diag0(&state, 0.0, 0.0)?];
    let mut stride_nu = 0.0_f64;
    let mut stride_mu = 0.0_f64;
    for k in 1..=steps {
        let (a0, b0) = drifts(&state.nu, &state.mu)?;
        let half_nu: Vec<f64> = a0.iter().map(|v| -0.5 * cfg.dt * v).collect();
        let half_mu: Vec<f64> = b0.iter().map(|v| 0.5 * cfg.dt * v).collect();
        let nu_half = state.nu.tilt(&half_nu)?;
        let mu_half = state.mu.tilt(&half_mu)?;
        let (a1, b1) = drifts(&nu_half, &mu_half)?;
        let full_nu: Vec<f64> = a1.iter().map(|v| -cfg.dt * v).collect();
        let full_mu: Vec<f64> = b1.iter().map(|v| cfg.dt * v).collect();
        let (mut next, m_nu, m_mu) = step_tilt(&state, &full_nu, &full_mu, cfg.dt)?;
        next.t = k as f64 * cfg.dt;
        stride_nu = stride_nu.max(m_nu);
        stride_mu = stride_mu.max(m_mu);
        state = next;
        if k % cfg.sample_every == 0 || k == steps {
            samples.push(state.clone());
            diagnostics.push(diag0(&state, stride_nu, stride_mu)?);
            stride_nu = 0.0;
            stride_mu = 0.0;
        }
    }
    Ok(Trajectory { samples, diagnostics, ratio_constants: ratios, envelope: EnvelopeReport::unconstrained() })
}
