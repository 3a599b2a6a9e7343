//! Mixed Nash equilibrium of the regularized game, Nikaido-Isoda error, and
//! convergence diagnostics.
//!
//! The unique MNE of `V_sigma` satisfies the Gibbs fixed-point equations
//!
//! ```text
//! nu*  proportional to  exp(-(2/sigma^2) dF/dnu(nu*, mu*, .) - U_pi)
//! mu*  proportional to  exp(+(2/sigma^2) dF/dmu(nu*, mu*, .) - U_rho)
//! ```
//!
//! and is computed here by damped fixed-point iteration in log-density
//! space. The Nikaido-Isoda error evaluates both inner optimizations in
//! closed form whenever the payoff is affine in the optimized slot (always
//! true for the min player; true for the max player except for composite
//! payoffs, where a single-player damped Gibbs ascent is used and flagged as
//! iterative).

use crate::flow::Trajectory;
use crate::measure::{GridMeasure, ReferenceMeasure};
use crate::payoff::{self, PayoffSpec, RegularizedObjective};
use crate::rng::CounterRng;
use crate::{Error, Result};

/// Derived constants reported with an equilibrium solve: probe estimates of
/// the first flat-derivative bounds, the drift sup estimate `C_sigma`, the
/// propagated ratio envelopes of the equilibrium against the references, and
/// the drift envelopes `C_V`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ConstantsBundle {
    pub c_nu: f64,
    pub c_mu: f64,
    pub c_sigma: f64,
    pub r1_nu: f64,
    pub r1_mu: f64,
    #[serde(rename = "R1_nu")]
    pub big_r1_nu: f64,
    #[serde(rename = "R1_mu")]
    pub big_r1_mu: f64,
    pub cv_nu: f64,
    pub cv_mu: f64,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub nu_star: GridMeasure,
    pub mu_star: GridMeasure,
    /// Max of the two terminal best-response TV residuals.
    pub residual_tv: f64,
    pub iterations: usize,
    pub converged: bool,
    pub constants: ConstantsBundle,
}

/// Probe seed for the constants bundle; fixed so equilibrium solves are
/// deterministic functions of the objective.
const BUNDLE_PROBE_SEED: u64 = 0x00c0_ffee;

/// Gibbs response of the min player with regularizer weight `s`:
/// `argmin_nu integral(dF/dnu) d nu + s KL(nu|pi)`, closed form
/// `nu proportional to exp(-(1/s) dF/dnu - U_pi)`. The derivative of every
/// supported payoff variant is independent of `nu`, so only `mu` is needed.
pub fn gibbs_response_nu(
    spec: &PayoffSpec,
    pi: &ReferenceMeasure,
    reg_weight: f64,
    mu: &GridMeasure,
) -> Result<GridMeasure> {
    if reg_weight <= 0.0 {
        return Err(Error::invalid("reg_weight", format!("{reg_weight} not in (0, inf)")));
    }
    let g = payoff::flat_dnu_raw(spec, mu)?;
    let lw: Vec<f64> = g
        .iter()
        .zip(pi.potential())
        .map(|(gi, u)| -gi / reg_weight - u)
        .collect();
    Ok(GridMeasure::from_log_weights(spec.grid_x().clone(), &lw)?.0)
}

/// Gibbs response of the max player; the composite payoff's derivative
/// depends on the current `mu` (outer-function linearization), so the map is
/// evaluated at the full `(nu, mu)` argument pair.
pub fn gibbs_response_mu(
    spec: &PayoffSpec,
    rho: &ReferenceMeasure,
    reg_weight: f64,
    nu: &GridMeasure,
    mu: &GridMeasure,
) -> Result<GridMeasure> {
    if reg_weight <= 0.0 {
        return Err(Error::invalid("reg_weight", format!("{reg_weight} not in (0, inf)")));
    }
    let h = payoff::flat_dmu_raw(spec, nu, mu)?;
    let lw: Vec<f64> = h
        .iter()
        .zip(rho.potential())
        .map(|(hj, u)| hj / reg_weight - u)
        .collect();
    Ok(GridMeasure::from_log_weights(spec.grid_y().clone(), &lw)?.0)
}

/// Best response of the min player under the main-text weight `sigma^2/2`.
pub fn best_response_nu(mu: &GridMeasure, obj: &RegularizedObjective) -> Result<GridMeasure> {
    let sigma = obj.require_positive_sigma("best_response_nu")?;
    gibbs_response_nu(obj.payoff(), obj.pi(), 0.5 * sigma * sigma, mu)
}

/// Best response of the max player under the main-text weight `sigma^2/2`.
pub fn best_response_mu(nu: &GridMeasure, mu: &GridMeasure, obj: &RegularizedObjective) -> Result<GridMeasure> {
    let sigma = obj.require_positive_sigma("best_response_mu")?;
    gibbs_response_mu(obj.payoff(), obj.rho(), 0.5 * sigma * sigma, nu, mu)
}

/// Default damping for the fixed-point iteration: the best-response map's
/// Lipschitz constant scales like (2/sigma^2) times the second-derivative
/// bounds, so weak regularization gets strong damping.
pub fn default_damping(obj: &RegularizedObjective) -> Result<f64> {
    let s2 = obj.sigma() * obj.sigma();
    let c = obj.bound_constants(BUNDLE_PROBE_SEED)?.second_order_max();
    Ok((s2 / (s2 + 2.0 * c)).min(1.0))
}

fn log_blend(current: &GridMeasure, target: &GridMeasure, theta: f64) -> Result<GridMeasure> {
    let lw: Vec<f64> = current
        .log_density()
        .iter()
        .zip(target.log_density())
        .map(|(lc, lt)| (1.0 - theta) * lc + theta * lt)
        .collect();
    Ok(GridMeasure::from_log_weights(current.grid().clone(), &lw)?.0)
}

fn constants_bundle(
    obj: &RegularizedObjective,
    nu_star: &GridMeasure,
    mu_star: &GridMeasure,
) -> Result<ConstantsBundle> {
    let sigma = obj.sigma();
    let s2 = sigma * sigma;
    let bc = obj.bound_constants(BUNDLE_PROBE_SEED)?;

    // Ratio constants of the equilibrium against the references feed the
    // propagated envelopes R_1 = 1 + exp(3 log R + (6/sigma^2) C) and
    // r_1 = exp(-|log r| - (2/sigma^2) C).
    let (r_nu, big_r_nu) = nu_star.ratio_bounds(obj.pi().measure())?;
    let (r_mu, big_r_mu) = mu_star.ratio_bounds(obj.rho().measure())?;
    let big_r1_nu = 1.0 + (3.0 * big_r_nu.ln().max(0.0) + 6.0 / s2 * bc.c_nu).exp();
    let big_r1_mu = 1.0 + (3.0 * big_r_mu.ln().max(0.0) + 6.0 / s2 * bc.c_mu).exp();
    let r1_nu = (-(r_nu.ln().abs()) - 2.0 / s2 * bc.c_nu).exp();
    let r1_mu = (-(r_mu.ln().abs()) - 2.0 / s2 * bc.c_mu).exp();
    let cv_nu = 3.0 * bc.c_nu + 0.5 * s2 * (r1_nu.ln().abs().max(big_r1_nu.ln()) + 2.0 * big_r_nu.ln().max(0.0));
    let cv_mu = 3.0 * bc.c_mu + 0.5 * s2 * (r1_mu.ln().abs().max(big_r1_mu.ln()) + 2.0 * big_r_mu.ln().max(0.0));

    // C_sigma: sup of the drift magnitudes over probe pairs around the
    // equilibrium (a lower estimate of the true envelope; validation runs
    // refine it along trajectories).
    let mut rng = CounterRng::stream(BUNDLE_PROBE_SEED, 0x5add1e);
    let mut c_sigma = 0.0_f64;
    let mut probe = |nu: &GridMeasure, mu: &GridMeasure| -> Result<()> {
        let a = obj.drift_a(nu, mu)?;
        let b = obj.drift_b(nu, mu)?;
        let sup = a.iter().chain(&b).fold(0.0_f64, |m, v| m.max(v.abs()));
        c_sigma = c_sigma.max(sup);
        Ok(())
    };
    probe(nu_star, mu_star)?;
    for _ in 0..20 {
        let dn = perturb(nu_star, &mut rng, 1.0)?;
        let dm = perturb(mu_star, &mut rng, 1.0)?;
        probe(&dn, &dm)?;
    }

    Ok(ConstantsBundle {
        c_nu: bc.c_nu,
        c_mu: bc.c_mu,
        c_sigma,
        r1_nu,
        r1_mu,
        big_r1_nu,
        big_r1_mu,
        cv_nu,
        cv_mu,
    })
}

/// Gibbs perturbation of a base measure: log-density plus uniform noise in
/// `[-amplitude, amplitude]`, renormalized.
fn perturb(base: &GridMeasure, rng: &mut CounterRng, amplitude: f64) -> Result<GridMeasure> {
    let noise = rng.uniform_vec(base.len(), -amplitude, amplitude);
    base.tilt(&noise)
}

/// Output of the damped Gibbs fixed-point iteration for an arbitrary
/// regularizer weight (main text uses `sigma^2/2`, the discrete-time module
/// uses its own convention).
#[derive(Debug, Clone)]
pub struct FixedPointSolve {
    pub nu: GridMeasure,
    pub mu: GridMeasure,
    pub residual_tv: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Damping for the weighted fixed-point map.
pub fn weighted_default_damping(spec: &PayoffSpec, reg_weight: f64) -> Result<f64> {
    let c = payoff::bound_constants(spec, None, BUNDLE_PROBE_SEED)?.second_order_max();
    Ok((reg_weight / (reg_weight + 2.0 * c)).min(1.0))
}

/// Damped Gibbs fixed-point iteration with regularizer weight `reg_weight`,
/// starting from the reference pair; simultaneous sweeps in log-density
/// space. Converged when both best-response TV residuals drop to `tol`.
pub fn solve_mne_weighted(
    spec: &PayoffSpec,
    pi: &ReferenceMeasure,
    rho: &ReferenceMeasure,
    reg_weight: f64,
    damping: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointSolve> {
    if reg_weight <= 0.0 {
        return Err(Error::invalid("reg_weight", format!("{reg_weight} not in (0, inf)")));
    }
    let theta = match damping {
        Some(t) => {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid("damping", format!("{t} outside (0, 1]")));
            }
            t
        }
        None => weighted_default_damping(spec, reg_weight)?,
    };

    let mut nu = pi.measure().clone();
    let mut mu = rho.measure().clone();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let br_nu = gibbs_response_nu(spec, pi, reg_weight, &mu)?;
        let br_mu = gibbs_response_mu(spec, rho, reg_weight, &nu, &mu)?;
        residual = br_nu.tv_distance(&nu)?.max(br_mu.tv_distance(&mu)?);
        if residual <= tol {
            converged = true;
            break;
        }
        nu = log_blend(&nu, &br_nu, theta)?;
        mu = log_blend(&mu, &br_mu, theta)?;
    }
    Ok(FixedPointSolve { nu, mu, residual_tv: residual, iterations, converged })
}

/// Compute the MNE by damped Gibbs best-response iteration in log-density
/// space, starting from the reference pair. Simultaneous sweeps; converged
/// when both best-response TV residuals drop to `tol`. Exhausting `max_iter`
/// returns the final iterate flagged non-converged.
pub fn solve_mne(
    obj: &RegularizedObjective,
    damping: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumResult> {
    let sigma = obj.require_positive_sigma("solve_mne")?;
    let theta = match damping {
        Some(t) => Some(t),
        None => Some(default_damping(obj)?),
    };
    let solve = solve_mne_weighted(
        obj.payoff(),
        obj.pi(),
        obj.rho(),
        0.5 * sigma * sigma,
        theta,
        tol,
        max_iter,
    )?;
    let constants = constants_bundle(obj, &solve.nu, &solve.mu)?;
    Ok(EquilibriumResult {
        nu_star: solve.nu,
        mu_star: solve.mu,
        residual_tv: solve.residual_tv,
        iterations: solve.iterations,
        converged: solve.converged,
        constants,
    })
}

/// Nikaido-Isoda error with full reporting.
#[derive(Debug, Clone, Copy)]
pub struct NiReport {
    pub value: f64,
    /// Raw value fell in [-1e-10, 0) and was clamped to zero.
    pub clamped: bool,
    /// The max-player inner problem was solved iteratively (composite payoff).
    pub iterative_inner: bool,
}

/// Negative NI below this magnitude is surfaced as an error instead of
/// being clamped.
pub const NI_CLAMP: f64 = 1e-10;

/// Weighted Nikaido-Isoda error
/// `NI(nu, mu) = max_mu' V_s(nu, mu') - min_nu' V_s(nu', mu)` for the
/// objective with regularizer weight `s` (`V_s = F + s KL(.|pi) - s KL(.|rho)`).
///
/// `s = 0` is supported for payoffs affine in the optimized slot: the inner
/// optima are attained at Dirac masses on the grid.
pub fn ni_error_weighted(
    spec: &PayoffSpec,
    pi: &ReferenceMeasure,
    rho: &ReferenceMeasure,
    s: f64,
    nu: &GridMeasure,
    mu: &GridMeasure,
) -> Result<NiReport> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::invalid("reg_weight", format!("{s} not in [0, inf)")));
    }

    // Min player: F is affine in nu for every variant. F(nu', mu) =
    // integral g d nu' + c2(mu) with g the raw nu-derivative.
    let g = payoff::flat_dnu_raw(spec, mu)?;
    let c2 = payoff::eval_f(spec, nu, mu)? - nu.expect(&g);
    let min_side = if s > 0.0 {
        // min over nu' of integral g d nu' + s KL(nu'|pi) = -s log integral exp(-g/s) d pi
        let scaled: Vec<f64> = g.iter().map(|v| -v / s).collect();
        let lw = log_int_exp(pi.measure(), &scaled);
        c2 - s * lw
    } else {
        c2 + g.iter().cloned().fold(f64::INFINITY, f64::min)
    };

    // Max player.
    let mut iterative_inner = false;
    let max_side = match spec {
        PayoffSpec::Bilinear { .. } | PayoffSpec::Separable { .. } => {
            let h = payoff::flat_dmu_raw(spec, nu, mu)?;
            let c1 = payoff::eval_f(spec, nu, mu)? - mu.expect(&h);
            if s > 0.0 {
                let scaled: Vec<f64> = h.iter().map(|v| v / s).collect();
                c1 + s * log_int_exp(rho.measure(), &scaled)
            } else {
                c1 + h.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            }
        }
        PayoffSpec::Composite { .. } => {
            iterative_inner = true;
            inner_max_mu(spec, rho, s, nu, mu)?
        }
    };

    let kl_nu = if s > 0.0 { s * nu.kl_divergence(pi.measure())? } else { 0.0 };
    let kl_mu = if s > 0.0 { s * mu.kl_divergence(rho.measure())? } else { 0.0 };
    let raw = (max_side + kl_nu) - (min_side - kl_mu);
    if raw < -NI_CLAMP {
        return Err(Error::invalid(
            "ni_error",
            format!("NI = {raw:.3e} below the -1e-10 clamp window; inner solves inconsistent"),
        ));
    }
    Ok(NiReport { value: raw.max(0.0), clamped: raw < 0.0, iterative_inner })
}

/// `log integral exp(v) d m` for a probability measure `m`.
fn log_int_exp(m: &GridMeasure, values: &[f64]) -> f64 {
    let log_quad: Vec<f64> = m
        .grid()
        .weights()
        .iter()
        .zip(m.log_density())
        .map(|(w, lp)| w.ln() + lp)
        .collect();
    crate::measure::log_weighted_sum_exp(&log_quad, values)
}

/// Single-player inner maximization `max_mu' F(nu, mu') - s KL(mu'|rho)` by
/// damped Gibbs ascent (composite payoffs only). Tolerance 1e-10 TV,
/// iteration cap 1e5.
fn inner_max_mu(
    spec: &PayoffSpec,
    rho: &ReferenceMeasure,
    s: f64,
    nu: &GridMeasure,
    mu_init: &GridMeasure,
) -> Result<f64> {
    if s <= 0.0 {
        return Err(Error::invalid(
            "reg_weight",
            "composite inner maximization requires s > 0 (unregularized composite NI unsupported)",
        ));
    }
    let objective = |m: &GridMeasure| -> Result<f64> {
        Ok(payoff::eval_f(spec, nu, m)? - s * m.kl_divergence(rho.measure())?)
    };
    let mut mu = mu_init.clone();
    let theta = {
        let c = payoff::bound_constants(spec, None, BUNDLE_PROBE_SEED)?.c_mumu;
        (s / (s + 2.0 * c)).min(1.0)
    };
    let tol = 1e-10;
    for _ in 0..100_000 {
        let br = gibbs_response_mu(spec, rho, s, nu, &mu)?;
        let residual = br.tv_distance(&mu)?;
        mu = log_blend(&mu, &br, theta)?;
        if residual <= tol {
            return objective(&mu);
        }
    }
    Err(Error::NotConverged { what: "composite NI inner maximization", iterations: 100_000, residual: f64::NAN })
}

/// Nikaido-Isoda error of the regularized objective (weight `sigma^2/2`).
pub fn ni_error(nu: &GridMeasure, mu: &GridMeasure, obj: &RegularizedObjective) -> Result<f64> {
    let sigma = obj.require_positive_sigma("ni_error")?;
    Ok(ni_error_weighted(obj.payoff(), obj.pi(), obj.rho(), 0.5 * sigma * sigma, nu, mu)?.value)
}

/// Per-sample Lyapunov values along a trajectory: the KL sum
/// `KL(nu*|nu_t) + KL(mu*|mu_t)` and the NI error.
#[derive(Debug, Clone, Copy)]
pub struct LyapunovSample {
    pub t: f64,
    pub kl_sum: f64,
    pub ni: f64,
}

pub fn lyapunov_series(
    traj: &Trajectory,
    eq: &EquilibriumResult,
    obj: &RegularizedObjective,
) -> Result<Vec<LyapunovSample>> {
    let mut out = Vec::with_capacity(traj.samples.len());
    for s in &traj.samples {
        let kl_sum = eq.nu_star.kl_divergence(&s.nu)? + eq.mu_star.kl_divergence(&s.mu)?;
        let ni = ni_error(&s.nu, &s.mu, obj)?;
        out.push(LyapunovSample { t: s.t, kl_sum, ni });
    }
    Ok(out)
}

/// Sup of the drift magnitudes along a trajectory; the operative estimate of
/// `C_sigma` used in the NI decay envelope.
pub fn estimate_c_sigma(traj: &Trajectory, obj: &RegularizedObjective) -> Result<f64> {
    let mut c = 0.0_f64;
    for s in &traj.samples {
        let a = obj.drift_a(&s.nu, &s.mu)?;
        let b = obj.drift_b(&s.nu, &s.mu)?;
        c = a.iter().chain(&b).fold(c, |m, v| m.max(v.abs()));
    }
    Ok(c)
}

/// Least-squares fit of `log(value) = alpha - rate * t`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct RateFit {
    /// Time range actually used for the fit.
    pub window: (f64, f64),
    pub fitted_rate: f64,
    pub r_squared: f64,
}

/// Fit an exponential decay rate to a positive series. With no explicit
/// window, the fit uses the last 50% of the samples whose values stay above
/// 1e-12 (avoids floating-point floor contamination).
pub fn fit_decay_rate(times: &[f64], values: &[f64], window: Option<(f64, f64)>) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(Error::invalid("series", "times and values lengths differ"));
    }
    let indices: Vec<usize> = match window {
        Some((lo, hi)) => (0..times.len())
            .filter(|&i| times[i] >= lo && times[i] <= hi)
            .collect(),
        None => {
            let alive: Vec<usize> = (0..times.len()).filter(|&i| values[i] > 1e-12).collect();
            alive[alive.len() / 2..].to_vec()
        }
    };
    if indices.len() < 4 {
        return Err(Error::invalid("window", format!("only {} points in fit window, need 4", indices.len())));
    }
    for &i in &indices {
        if values[i] <= 0.0 || values[i].is_nan() {
            return Err(Error::invalid("series", format!("non-positive value {} at t={}", values[i], times[i])));
        }
    }

    let n = indices.len() as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for &i in &indices {
        let t = times[i];
        let y = values[i].ln();
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let denom = n * stt - st * st;
    if denom.abs() < 1e-30 {
        return Err(Error::invalid("window", "degenerate time window"));
    }
    let slope = (n * sty - st * sy) / denom;
    let intercept = (sy - slope * st) / n;
    let mean_y = sy / n;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for &i in &indices {
        let y = values[i].ln();
        let f = intercept + slope * times[i];
        ss_res += (y - f) * (y - f);
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit {
        window: (times[indices[0]], times[*indices.last().unwrap()]),
        fitted_rate: -slope,
        r_squared,
    })
}

/// Audit the saddle inequalities
/// `V(nu*, mu) <= V(nu*, mu*) <= V(nu, mu*)` against the two best responses
/// and `n_probes` random Gibbs perturbations of the equilibrium pair.
/// Returns the most negative slack observed (>= -1e-8 at a genuine MNE).
pub fn saddle_audit(
    eq: &EquilibriumResult,
    obj: &RegularizedObjective,
    n_probes: usize,
    seed: u64,
) -> Result<f64> {
    obj.require_positive_sigma("saddle_audit")?;
    let v_star = obj.eval_v_sigma(&eq.nu_star, &eq.mu_star)?;
    let mut worst = f64::INFINITY;
    let mut check_mu = |mu: &GridMeasure| -> Result<()> {
        let slack = v_star - obj.eval_v_sigma(&eq.nu_star, mu)?;
        worst = worst.min(slack);
        Ok(())
    };
    // The best responses are the strongest opponents; probe them first.
    let br_mu = best_response_mu(&eq.nu_star, &eq.mu_star, obj)?;
    check_mu(&br_mu)?;
    let mut rng = CounterRng::stream(seed, 0xa0d17);
    for _ in 0..n_probes / 2 {
        let mu = perturb(&eq.mu_star, &mut rng, 1.5)?;
        check_mu(&mu)?;
    }
    let mut check_nu = |nu: &GridMeasure| -> Result<()> {
        let slack = obj.eval_v_sigma(nu, &eq.mu_star)? - v_star;
        worst = worst.min(slack);
        Ok(())
    };
    let br_nu = best_response_nu(&eq.mu_star, obj)?;
    check_nu(&br_nu)?;
    for _ in 0..n_probes - n_probes / 2 {
        let nu = perturb(&eq.nu_star, &mut rng, 1.5)?;
        check_nu(&nu)?;
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{self, FlowState, IntegratorConfig, Scheme};
    use crate::grid::Grid;
    use crate::payoff::{
        generator_matching_pennies, generator_smooth_sin, generator_zero, random_gibbs,
    };
    use std::sync::Arc;

    fn smooth_sin_objective(n: usize, sigma: f64) -> RegularizedObjective {
        let gx = Arc::new(Grid::uniform_1d(n, -1.0, 1.0).unwrap());
        let gy = Arc::new(Grid::uniform_1d(n, -1.0, 1.0).unwrap());
        let spec = generator_smooth_sin(gx.clone(), gy.clone()).unwrap();
        RegularizedObjective::new(
            spec,
            sigma,
            ReferenceMeasure::uniform(gx),
            ReferenceMeasure::uniform(gy),
        )
        .unwrap()
    }

    #[test]
    fn zero_kernel_equilibrium_is_reference_pair() {
        let gx = Arc::new(Grid::uniform_1d(16, -1.0, 1.0).unwrap());
        let gy = Arc::new(Grid::uniform_1d(16, -1.0, 1.0).unwrap());
        let potential: Vec<f64> = (0..16).map(|i| gx.coord(i) * gx.coord(i)).collect();
        let obj = RegularizedObjective::new(
            generator_zero(gx.clone(), gy.clone()).unwrap(),
            0.7,
            ReferenceMeasure::from_potential(gx, potential).unwrap(),
            ReferenceMeasure::uniform(gy),
        )
        .unwrap();
        let eq = solve_mne(&obj, None, 1e-12, 50).unwrap();
        assert!(eq.converged);
        assert_eq!(eq.iterations, 1);
        assert!(eq.nu_star.tv_distance(obj.pi().measure()).unwrap() < 1e-14);
        assert!(eq.mu_star.tv_distance(obj.rho().measure()).unwrap() < 1e-14);
    }

    #[test]
    fn matching_pennies_equilibrium_is_uniform() {
        let spec = generator_matching_pennies().unwrap();
        let obj = RegularizedObjective::new(
            spec.clone(),
            1.0,
            ReferenceMeasure::uniform(spec.grid_x().clone()),
            ReferenceMeasure::uniform(spec.grid_y().clone()),
        )
        .unwrap();
        let eq = solve_mne(&obj, None, 1e-12, 500).unwrap();
        assert!(eq.converged);
        assert!(eq.residual_tv <= 1e-12);
        let uniform = GridMeasure::uniform(spec.grid_x().clone());
        assert!(eq.nu_star.tv_distance(&uniform).unwrap() < 1e-10);
        assert!(eq.mu_star.tv_distance(&uniform).unwrap() < 1e-10);
    }

    #[test]
    fn best_response_matches_dense_oracle() {
        // Independent recomputation of the Gibbs response with explicit loops.
        let obj = smooth_sin_objective(24, 0.9);
        let mut rng = CounterRng::new(3);
        let mu = random_gibbs(obj.payoff().grid_y(), &mut rng, 1.0);
        let br = best_response_nu(&mu, &obj).unwrap();

        let gx = obj.payoff().grid_x();
        let gy = obj.payoff().grid_y();
        let kernel = match obj.payoff() {
            PayoffSpec::Bilinear { kernel, .. } => kernel,
            _ => unreachable!(),
        };
        let s2 = 0.9 * 0.9;
        let mut exponent = Vec::with_capacity(gx.len());
        for i in 0..gx.len() {
            let mut g = 0.0;
            for j in 0..gy.len() {
                g += gy.weight(j) * kernel[i * gy.len() + j] * mu.density(j);
            }
            exponent.push(-2.0 / s2 * g);
        }
        let z: f64 = exponent.iter().enumerate().map(|(i, e)| gx.weight(i) * e.exp()).sum();
        for (i, expo) in exponent.iter().enumerate() {
            let oracle = expo.exp() / z;
            assert!(
                (br.density(i) - oracle).abs() <= 1e-12 * oracle.max(1.0),
                "density {} vs oracle {oracle}",
                br.density(i)
            );
        }
    }

    #[test]
    fn smooth_sin_equilibrium_is_flow_stationary() {
        let obj = smooth_sin_objective(64, 1.0);
        let eq = solve_mne(&obj, None, 1e-12, 2000).unwrap();
        assert!(eq.converged, "residual {}", eq.residual_tv);
        assert!(eq.residual_tv <= 1e-12);

        // One unit of flow time leaves the equilibrium in place, under both
        // stepping schemes.
        let mut state = FlowState { t: 0.0, nu: eq.nu_star.clone(), mu: eq.mu_star.clone() };
        for _ in 0..1000 {
            state = flow::step_euler_log(&state, &obj, 1e-3).unwrap();
        }
        let moved = state.nu.tv_distance(&eq.nu_star).unwrap().max(state.mu.tv_distance(&eq.mu_star).unwrap());
        assert!(moved <= 1e-9, "equilibrium moved {moved} per unit time");

        let mut state = FlowState { t: 0.0, nu: eq.nu_star.clone(), mu: eq.mu_star.clone() };
        for _ in 0..100 {
            state = flow::step_exp_duhamel(&state, &obj, 1e-2).unwrap();
        }
        let moved = state.nu.tv_distance(&eq.nu_star).unwrap().max(state.mu.tv_distance(&eq.mu_star).unwrap());
        assert!(moved <= 1e-10, "equilibrium moved {moved} under exp_duhamel");

        // The drifts vanish there.
        let a = obj.drift_a(&eq.nu_star, &eq.mu_star).unwrap();
        let b = obj.drift_b(&eq.nu_star, &eq.mu_star).unwrap();
        let sup = a.iter().chain(&b).fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(sup <= 10.0 * 1e-12 * obj.sigma() * obj.sigma() + 1e-11, "drift sup {sup}");
    }

    #[test]
    fn ni_zero_kernel_closed_form() {
        let gx = Arc::new(Grid::uniform_1d(20, -1.0, 1.0).unwrap());
        let gy = Arc::new(Grid::uniform_1d(20, -1.0, 1.0).unwrap());
        let sigma = 1.1_f64;
        let obj = RegularizedObjective::new(
            generator_zero(gx.clone(), gy.clone()).unwrap(),
            sigma,
            ReferenceMeasure::uniform(gx.clone()),
            ReferenceMeasure::uniform(gy.clone()),
        )
        .unwrap();
        let mut rng = CounterRng::new(7);
        let nu = random_gibbs(&gx, &mut rng, 1.0);
        let mu = random_gibbs(&gy, &mut rng, 1.0);
        let ni = ni_error(&nu, &mu, &obj).unwrap();
        let expected = 0.5
            * sigma
            * sigma
            * (nu.kl_divergence(obj.pi().measure()).unwrap() + mu.kl_divergence(obj.rho().measure()).unwrap());
        assert!((ni - expected).abs() < 1e-12, "{ni} vs {expected}");
    }

    #[test]
    fn ni_vanishes_at_equilibrium_and_detects_deviation() {
        let obj = smooth_sin_objective(48, 1.0);
        let eq = solve_mne(&obj, None, 1e-12, 2000).unwrap();
        let ni = ni_error(&eq.nu_star, &eq.mu_star, &obj).unwrap();
        assert!(ni <= 1e-8, "NI at the MNE: {ni}");

        let mut rng = CounterRng::new(9);
        let nu = perturb(&eq.nu_star, &mut rng, 0.5).unwrap();
        let ni_off = ni_error(&nu, &eq.mu_star, &obj).unwrap();
        assert!(ni_off > 1e-4, "NI should detect a perturbed pair, got {ni_off}");
    }

    #[test]
    fn ni_closed_form_matches_simplex_grid_search() {
        // 3-point finite game: dense search over Gibbs-parameterized
        // responses on the simplex at resolution ~1e-3.
        let gx = Arc::new(Grid::finite(3).unwrap());
        let gy = Arc::new(Grid::finite(3).unwrap());
        let mut rng = CounterRng::new(11);
        let kernel = rng.uniform_vec(9, -1.0, 1.0);
        let spec = PayoffSpec::bilinear(gx.clone(), gy.clone(), kernel.clone()).unwrap();
        let pi = ReferenceMeasure::uniform(gx.clone());
        let rho = ReferenceMeasure::uniform(gy.clone());
        let s = 0.4;
        let nu = random_gibbs(&gx, &mut rng, 1.0);
        let mu = random_gibbs(&gy, &mut rng, 1.0);
        let ni = ni_error_weighted(&spec, &pi, &rho, s, &nu, &mu).unwrap().value;

        // Oracle: direct maximization / minimization over a fine simplex grid.
        let simplex = |n: usize| -> Vec<[f64; 3]> {
            let mut out = Vec::new();
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let k = n - i - j;
                    out.push([i as f64 / n as f64, j as f64 / n as f64, k as f64 / n as f64]);
                }
            }
            out
        };
        let kl_vs_uniform = |p: &[f64; 3]| -> f64 {
            p.iter().map(|&pi_| if pi_ > 0.0 { pi_ * (pi_ / (1.0 / 3.0)).ln() } else { 0.0 }).sum()
        };
        let h: Vec<f64> = (0..3)
            .map(|j| (0..3).map(|i| kernel[i * 3 + j] * nu.density(i)).sum())
            .collect();
        let g: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| kernel[i * 3 + j] * mu.density(j)).sum())
            .collect();
        let mut best_max = f64::NEG_INFINITY;
        let mut best_min = f64::INFINITY;
        for p in simplex(1000) {
            let fmax: f64 = (0..3).map(|j| h[j] * p[j]).sum::<f64>() - s * kl_vs_uniform(&p);
            best_max = best_max.max(fmax);
            let fmin: f64 = (0..3).map(|i| g[i] * p[i]).sum::<f64>() + s * kl_vs_uniform(&p);
            best_min = best_min.min(fmin);
        }
        let kl_nu = s * nu.kl_divergence(pi.measure()).unwrap();
        let kl_mu = s * mu.kl_divergence(rho.measure()).unwrap();
        let oracle = (best_max + kl_nu) - (best_min - kl_mu);

        // The closed form dominates the grid search and agrees to the grid
        // resolution.
        assert!(ni >= oracle - 1e-12, "closed form {ni} below oracle {oracle}");
        assert!((ni - oracle).abs() < 5e-4, "closed form {ni} vs oracle {oracle}");
    }

    #[test]
    fn composite_equilibrium_and_iterative_ni() {
        // The gradient-penalty composite exercises the mu-side inner solve.
        let gx = Arc::new(Grid::uniform_1d(20, -1.0, 1.0).unwrap());
        let gy = Arc::new(Grid::uniform_1d(20, -1.0, 1.0).unwrap());
        let mut rng = CounterRng::new(31);
        let kernel = rng.uniform_vec(400, -1.0, 1.0);
        let penalty = rng.uniform_vec(400, 0.0, 1.0);
        let baseline = random_gibbs(&gx, &mut rng, 1.0);
        let spec = PayoffSpec::composite(
            gx.clone(),
            gy.clone(),
            kernel,
            crate::payoff::OuterFn::Tanh,
            0.7,
            0.4,
            penalty,
            baseline,
        )
        .unwrap();
        let obj = RegularizedObjective::new(
            spec,
            1.0,
            ReferenceMeasure::uniform(gx.clone()),
            ReferenceMeasure::uniform(gy.clone()),
        )
        .unwrap();
        let eq = solve_mne(&obj, None, 1e-12, 20_000).unwrap();
        assert!(eq.converged, "residual {}", eq.residual_tv);

        // Both drifts vanish at the solved pair.
        let a = obj.drift_a(&eq.nu_star, &eq.mu_star).unwrap();
        let b = obj.drift_b(&eq.nu_star, &eq.mu_star).unwrap();
        let sup = a.iter().chain(&b).fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(sup < 1e-10, "drift sup {sup} at the composite MNE");

        // NI at the MNE through the iterative inner maximization.
        let report = ni_error_weighted(obj.payoff(), obj.pi(), obj.rho(), 0.5, &eq.nu_star, &eq.mu_star).unwrap();
        assert!(report.iterative_inner, "composite NI should flag the iterative inner solve");
        assert!(report.value <= 1e-8, "NI at the composite MNE: {}", report.value);

        // Away from the equilibrium the iterative NI is strictly positive
        // and dominated by the saddle-audit construction.
        let nu = random_gibbs(&gx, &mut rng, 1.0);
        let mu = random_gibbs(&gy, &mut rng, 1.0);
        let off = ni_error(&nu, &mu, &obj).unwrap();
        assert!(off > 1e-4, "composite NI should detect a random pair, got {off}");
    }

    #[test]
    fn fit_decay_rate_recovers_exact_exponential() {
        let times: Vec<f64> = (0..100).map(|k| 0.1 * k as f64).collect();
        let lambda = 0.73;
        let values: Vec<f64> = times.iter().map(|t| 2.5 * (-lambda * t).exp()).collect();
        let fit = fit_decay_rate(&times, &values, None).unwrap();
        assert!((fit.fitted_rate - lambda).abs() < 1e-10, "rate {}", fit.fitted_rate);
        assert!(fit.r_squared > 1.0 - 1e-12);

        // Too few points is an error.
        assert!(fit_decay_rate(&times[..3], &values[..3], Some((0.0, 1.0))).is_err());
    }

    #[test]
    fn fit_window_skips_floor_contamination() {
        // Series decays then floors at 1e-16; the default window must stay
        // above the floor and recover the true rate.
        let times: Vec<f64> = (0..200).map(|k| 0.1 * k as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| (1.0_f64 * (-2.0 * t).exp()).max(1e-16)).collect();
        let fit = fit_decay_rate(&times, &values, None).unwrap();
        assert!((fit.fitted_rate - 2.0).abs() < 1e-6, "rate {}", fit.fitted_rate);
    }

    #[test]
    fn saddle_audit_accepts_equilibrium_and_flags_fakes() {
        let obj = smooth_sin_objective(32, 1.0);
        let eq = solve_mne(&obj, None, 1e-12, 2000).unwrap();
        let worst = saddle_audit(&eq, &obj, 1000, 42).unwrap();
        assert!(worst >= -1e-9, "saddle violation {worst} at the MNE");

        // Negative control: a perturbed pair must report a violation.
        let mut rng = CounterRng::new(13);
        let fake = EquilibriumResult {
            nu_star: perturb(&eq.nu_star, &mut rng, 0.8).unwrap(),
            mu_star: perturb(&eq.mu_star, &mut rng, 0.8).unwrap(),
            residual_tv: f64::NAN,
            iterations: 0,
            converged: false,
            constants: eq.constants,
        };
        let worst_fake = saddle_audit(&fake, &obj, 100, 43).unwrap();
        assert!(worst_fake < -1e-6, "audit failed to flag a non-equilibrium pair: {worst_fake}");
    }

    #[test]
    fn saddle_audit_zero_kernel_slack_is_kl() {
        let gx = Arc::new(Grid::uniform_1d(12, -1.0, 1.0).unwrap());
        let gy = Arc::new(Grid::uniform_1d(12, -1.0, 1.0).unwrap());
        let obj = RegularizedObjective::new(
            generator_zero(gx.clone(), gy.clone()).unwrap(),
            1.0,
            ReferenceMeasure::uniform(gx),
            ReferenceMeasure::uniform(gy),
        )
        .unwrap();
        let eq = solve_mne(&obj, None, 1e-12, 10).unwrap();
        // Slack of any opponent mu is (sigma^2/2) KL(mu|rho) >= 0 exactly.
        let worst = saddle_audit(&eq, &obj, 200, 5).unwrap();
        assert!(worst >= 0.0, "worst slack {worst}");
    }

    #[test]
    fn lyapunov_series_vanishes_on_equilibrium_start() {
        let obj = smooth_sin_objective(32, 1.0);
        let eq = solve_mne(&obj, None, 1e-12, 2000).unwrap();
        let cfg = IntegratorConfig::new(Scheme::EulerLog, 1e-3, 0.05, 10).unwrap();
        let traj = flow::integrate(&eq.nu_star, &eq.mu_star, &obj, &cfg).unwrap();
        let series = lyapunov_series(&traj, &eq, &obj).unwrap();
        for s in &series {
            assert!(s.kl_sum <= 1e-8, "kl_sum {} at t={}", s.kl_sum, s.t);
            assert!(s.ni <= 1e-8, "ni {} at t={}", s.ni, s.t);
        }
    }

    #[test]
    fn matching_pennies_lyapunov_decay_with_envelopes() {
        // sigma = 1 matching pennies: kl_sum(t) <= 1.02 e^{-t/2} kl_sum(0)
        // sample-wise, and the NI envelope with the trajectory C_sigma.
        let spec = generator_matching_pennies().unwrap();
        let obj = RegularizedObjective::new(
            spec.clone(),
            1.0,
            ReferenceMeasure::uniform(spec.grid_x().clone()),
            ReferenceMeasure::uniform(spec.grid_y().clone()),
        )
        .unwrap();
        let eq = solve_mne(&obj, None, 1e-12, 1000).unwrap();
        let (nu0, _) = GridMeasure::from_log_weights(spec.grid_x().clone(), &[0.9, -0.9]).unwrap();
        let (mu0, _) = GridMeasure::from_log_weights(spec.grid_y().clone(), &[-0.6, 0.6]).unwrap();
        let cfg = IntegratorConfig::new(Scheme::EulerLog, 1e-3, 20.0, 100).unwrap();
        let traj = flow::integrate(&nu0, &mu0, &obj, &cfg).unwrap();
        let series = lyapunov_series(&traj, &eq, &obj).unwrap();
        let kl0 = series[0].kl_sum;
        assert!(kl0 > 1e-3);
        let c_sigma = estimate_c_sigma(&traj, &obj).unwrap();
        for s in &series {
            assert!(
                s.kl_sum <= 1.02 * (-0.5 * s.t).exp() * kl0,
                "kl_sum {} above envelope at t={}",
                s.kl_sum,
                s.t
            );
            assert!(
                s.ni <= 1.05 * 2.0 * c_sigma * (-0.25 * s.t).exp() * kl0.sqrt(),
                "ni {} above envelope at t={} (C_sigma={c_sigma})",
                s.ni,
                s.t
            );
        }

        // Fitted rates against the sigma^2/2 and sigma^2/4 targets.
        let times: Vec<f64> = series.iter().map(|s| s.t).collect();
        let kls: Vec<f64> = series.iter().map(|s| s.kl_sum).collect();
        let nis: Vec<f64> = series.iter().map(|s| s.ni).collect();
        let kl_fit = fit_decay_rate(&times, &kls, None).unwrap();
        assert!(kl_fit.fitted_rate >= 0.5 * 0.95, "kl rate {}", kl_fit.fitted_rate);
        let ni_fit = fit_decay_rate(&times, &nis, None).unwrap();
        assert!(ni_fit.fitted_rate >= 0.25 * 0.95, "ni rate {}", ni_fit.fitted_rate);
    }
}
