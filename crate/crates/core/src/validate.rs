//! Built-in validation suite: executable properties of every module,
//! runnable via `fr-minmax validate`.
//!
//! Each check is a named, seeded property: divergence inequalities,
//! flat-derivative consistency, relative strong convexity, conservation and
//! envelope respect along flows, mirror-descent structure, and equilibrium
//! saddle/NI behavior (including a negative control that must flag a
//! perturbed pair). The acceptance test suite drives the same checks.

use std::sync::Arc;

use crate::equilibrium::{self, EquilibriumResult};
use crate::flow::{self, FlowState, IntegratorConfig, Scheme};
use crate::grid::Grid;
use crate::measure::{GridMeasure, ReferenceMeasure};
use crate::payoff::{self, OuterFn, PayoffSpec, Player, RegularizedObjective};
use crate::rng::CounterRng;
use crate::Result;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &'static str, detail: impl Into<String>) -> CheckResult {
        CheckResult { name, passed: true, detail: detail.into() }
    }

    fn fail(name: &'static str, detail: impl Into<String>) -> CheckResult {
        CheckResult { name, passed: false, detail: detail.into() }
    }

    fn from(name: &'static str, outcome: Result<String>) -> CheckResult {
        match outcome {
            Ok(detail) => CheckResult::pass(name, detail),
            Err(e) => CheckResult::fail(name, e.to_string()),
        }
    }
}

fn err(msg: String) -> crate::Error {
    crate::Error::Config(msg)
}

fn grids_1d(n: usize) -> (Arc<Grid>, Arc<Grid>) {
    (
        Arc::new(Grid::uniform_1d(n, -1.0, 1.0).expect("grid")),
        Arc::new(Grid::uniform_1d(n, -1.0, 1.0).expect("grid")),
    )
}

fn composite_spec(gx: &Arc<Grid>, gy: &Arc<Grid>, seed: u64) -> Result<PayoffSpec> {
    let mut rng = CounterRng::stream(seed, 0xc0);
    let kernel = rng.uniform_vec(gx.len() * gy.len(), -1.0, 1.0);
    let penalty = rng.uniform_vec(gx.len() * gy.len(), 0.0, 1.0);
    let baseline = payoff::random_gibbs(gx, &mut rng, 1.0);
    payoff::PayoffSpec::composite(gx.clone(), gy.clone(), kernel, OuterFn::Tanh, 0.7, 0.4, penalty, baseline)
}

fn check_pinsker(seed: u64) -> Result<String> {
    let mut worst = f64::NEG_INFINITY;
    for &n in &[16usize, 64, 256] {
        let grid = Arc::new(Grid::uniform_1d(n, -1.0, 1.0)?);
        let mut rng = CounterRng::stream(seed, n as u64);
        for _ in 0..1000 {
            let p = payoff::random_gibbs(&grid, &mut rng, 3.0);
            let q = payoff::random_gibbs(&grid, &mut rng, 3.0);
            let tv = p.tv_distance(&q)?;
            let kl = p.kl_divergence(&q)?;
            let slack = tv * tv - 0.5 * kl;
            worst = worst.max(slack);
            if slack > 1e-15 {
                return Err(err(format!("Pinsker violated on {n}-point grid: tv^2 - kl/2 = {slack:.3e}")));
            }
            let mass = (p.mass() - 1.0).abs().max((q.mass() - 1.0).abs());
            if mass > 1e-12 {
                return Err(err(format!("normalization drift {mass:.3e} on {n}-point grid")));
            }
        }
    }
    Ok(format!("3000 pairs, worst tv^2 - kl/2 = {worst:.3e}"))
}

fn check_gibbs_shift_invariance(seed: u64) -> Result<String> {
    let grid = Arc::new(Grid::uniform_1d(64, -1.0, 1.0)?);
    let mut rng = CounterRng::stream(seed, 1);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let lw = rng.uniform_vec(64, -3.0, 3.0);
        let c = rng.uniform(-50.0, 50.0);
        let shifted: Vec<f64> = lw.iter().map(|v| v + c).collect();
        let (m0, z0) = GridMeasure::from_log_weights(grid.clone(), &lw)?;
        let (m1, z1) = GridMeasure::from_log_weights(grid.clone(), &shifted)?;
        for (a, b) in m0.log_density().iter().zip(m1.log_density()) {
            let rel = (a - b).abs() / a.abs().max(1.0);
            worst = worst.max(rel);
            if rel > 1e-14 {
                return Err(err(format!("shift invariance broke: relative log-density drift {rel:.3e}")));
            }
        }
        if ((z1 - z0) - c).abs() > 1e-10 {
            return Err(err(format!("log Z did not shift by the constant: {} vs {c}", z1 - z0)));
        }
    }
    Ok(format!("100 shifts, worst relative drift {worst:.3e}"))
}

fn check_flat_derivative_centering(seed: u64) -> Result<String> {
    let (gx, gy) = grids_1d(48);
    let specs = [
        payoff::generator_smooth_sin(gx.clone(), gy.clone())?,
        payoff::generator_appendix_phi(gx.clone(), gy.clone())?,
        composite_spec(&gx, &gy, seed)?,
    ];
    let mut rng = CounterRng::stream(seed, 2);
    let mut worst = 0.0_f64;
    for spec in &specs {
        for _ in 0..100 {
            let nu = payoff::random_gibbs(&gx, &mut rng, 2.0);
            let mu = payoff::random_gibbs(&gy, &mut rng, 2.0);
            let dn = payoff::flat_dnu(spec, &nu, &mu)?;
            let dm = payoff::flat_dmu(spec, &nu, &mu)?;
            let res = nu.expect(&dn).abs().max(mu.expect(&dm).abs());
            worst = worst.max(res);
            if res > 1e-10 {
                return Err(err(format!("{} centering residual {res:.3e}", spec.variant_name())));
            }
        }
    }
    Ok(format!("300 states, worst centering residual {worst:.3e}"))
}

fn check_fd_consistency(seed: u64) -> Result<String> {
    let (gx, gy) = grids_1d(24);
    let mut rng = CounterRng::stream(seed, 3);
    let nu = payoff::random_gibbs(&gx, &mut rng, 1.0);
    let mu = payoff::random_gibbs(&gy, &mut rng, 1.0);
    let probe_nu = payoff::random_gibbs(&gx, &mut rng, 1.0);
    let probe_mu = payoff::random_gibbs(&gy, &mut rng, 1.0);

    // Bilinear: affine, exact.
    let bil = payoff::generator_smooth_sin(gx.clone(), gy.clone())?;
    let worst = payoff::check_flat_derivative_fd(&bil, &nu, &mu, &probe_nu, Player::Nu)?;
    if worst > 1e-9 {
        return Err(err(format!("bilinear fd defect {worst:.3e} (should be machine precision)")));
    }

    // Composite with tanh outer: O(eps). The linear-shrink check only
    // applies above the floating-point noise floor of the difference
    // quotient; a probe that happens to align with the payoff's linear part
    // yields defects at machine precision for every eps.
    let comp = composite_spec(&gx, &gy, seed)?;
    let profile = payoff::flat_derivative_fd_profile(&comp, &nu, &mu, &probe_mu, Player::Mu)?;
    if profile[0].1 >= 1e-2 {
        return Err(err(format!("composite fd defect at eps=1e-4 too large: {profile:?}")));
    }
    if profile[0].1 > 1e-8 && profile[1].1 >= 0.25 * profile[0].1 + 1e-9 {
        return Err(err(format!("composite fd profile not O(eps): {profile:?}")));
    }
    Ok(format!(
        "bilinear defect {worst:.1e}; composite profile {:.2e} -> {:.2e} -> {:.2e}",
        profile[0].1, profile[1].1, profile[2].1
    ))
}

fn check_convexity_concavity(seed: u64) -> Result<String> {
    let (gx, gy) = grids_1d(24);
    let comp = composite_spec(&gx, &gy, seed)?;
    let mut rng = CounterRng::stream(seed, 4);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let nu = payoff::random_gibbs(&gx, &mut rng, 2.0);
        let mu = payoff::random_gibbs(&gy, &mut rng, 2.0);
        let nu2 = payoff::random_gibbs(&gx, &mut rng, 2.0);
        let mu2 = payoff::random_gibbs(&gy, &mut rng, 2.0);
        let f = payoff::eval_f(&comp, &nu, &mu)?;
        let dn = payoff::flat_dnu(&comp, &nu, &mu)?;
        let convex_slack = payoff::eval_f(&comp, &nu2, &mu)? - f - (nu2.expect(&dn) - nu.expect(&dn));
        let dm = payoff::flat_dmu(&comp, &nu, &mu)?;
        let concave_slack = (mu2.expect(&dm) - mu.expect(&dm)) - (payoff::eval_f(&comp, &nu, &mu2)? - f);
        worst = worst.min(convex_slack.min(concave_slack));
        if convex_slack < -1e-9 || concave_slack < -1e-9 {
            return Err(err(format!(
                "first-order convexity/concavity violated: slacks {convex_slack:.3e}, {concave_slack:.3e}"
            )));
        }
    }
    Ok(format!("1000 tuples, worst slack {worst:.3e}"))
}

fn check_relative_strong_convexity(seed: u64) -> Result<String> {
    // V(nu', mu) - V(nu, mu) >= <a(nu, mu), nu' - nu> + (sigma^2/2) KL(nu'|nu)
    // and the mirrored inequality for the max player.
    let (gx, gy) = grids_1d(24);
    let sigma = 0.9_f64;
    let obj = RegularizedObjective::new(
        composite_spec(&gx, &gy, seed)?,
        sigma,
        ReferenceMeasure::uniform(gx.clone()),
        ReferenceMeasure::uniform(gy.clone()),
    )?;
    let half_s2 = 0.5 * sigma * sigma;
    let mut rng = CounterRng::stream(seed, 5);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let nu = payoff::random_gibbs(&gx, &mut rng, 2.0);
        let mu = payoff::random_gibbs(&gy, &mut rng, 2.0);
        let nu2 = payoff::random_gibbs(&gx, &mut rng, 2.0);
        let mu2 = payoff::random_gibbs(&gy, &mut rng, 2.0);
        let v = obj.eval_v_sigma(&nu, &mu)?;
        let a = obj.drift_a(&nu, &mu)?;
        let slack_nu = obj.eval_v_sigma(&nu2, &mu)? - v
            - (nu2.expect(&a) - nu.expect(&a))
            - half_s2 * nu2.kl_divergence(&nu)?;
        let b = obj.drift_b(&nu, &mu)?;
        let slack_mu = (mu2.expect(&b) - mu.expect(&b)) - half_s2 * mu2.kl_divergence(&mu)?
            - (obj.eval_v_sigma(&nu, &mu2)? - v);
        worst = worst.min(slack_nu.min(slack_mu));
        if slack_nu < -1e-9 || slack_mu < -1e-9 {
            return Err(err(format!(
                "relative strong convexity violated: slacks {slack_nu:.3e}, {slack_mu:.3e}"
            )));
        }
    }
    Ok(format!("1000 tuples, worst slack {worst:.3e}"))
}

fn check_mixed_second_symmetry(seed: u64) -> Result<String> {
    // Both differentiation orders of the mixed second derivative must agree:
    // finite differences of each first derivative against the shared kernel.
    let (gx, gy) = grids_1d(12);
    let comp = composite_spec(&gx, &gy, seed)?;
    let mut rng = CounterRng::stream(seed, 6);
    let nu = payoff::random_gibbs(&gx, &mut rng, 1.0);
    let mu = payoff::random_gibbs(&gy, &mut rng, 1.0);
    let probe_nu = payoff::random_gibbs(&gx, &mut rng, 1.0);
    let probe_mu = payoff::random_gibbs(&gy, &mut rng, 1.0);
    let mixed = payoff::second_flat(&comp, payoff::SecondSlot::MuNu, &nu, &mu)?;
    let ny = gy.len();
    let eps = 1e-6;

    // Response of dF/dnu to a mu perturbation, against the kernel rows.
    let d0 = payoff::flat_dnu_raw(&comp, &mu)?;
    let d1 = payoff::flat_dnu_raw(&comp, &mu.mix(&probe_mu, eps)?)?;
    let mut worst = 0.0_f64;
    for i in 0..gx.len() {
        let row = &mixed[i * ny..(i + 1) * ny];
        let predicted = probe_mu.expect(row) - mu.expect(row);
        let observed = (d1[i] - d0[i]) / eps;
        worst = worst.max((observed - predicted).abs());
    }
    // Response of dF/dmu to a nu perturbation, against the kernel columns.
    let e0 = payoff::flat_dmu_raw(&comp, &nu, &mu)?;
    let e1 = payoff::flat_dmu_raw(&comp, &nu.mix(&probe_nu, eps)?, &mu)?;
    for j in 0..ny {
        let col: Vec<f64> = (0..gx.len()).map(|i| mixed[i * ny + j]).collect();
        let predicted = probe_nu.expect(&col) - nu.expect(&col);
        let observed = (e1[j] - e0[j]) / eps;
        worst = worst.max((observed - predicted).abs());
    }
    if worst > 1e-6 {
        return Err(err(format!("mixed second derivative orders disagree by {worst:.3e}")));
    }
    Ok(format!("both orders agree within {worst:.3e}"))
}

/// The standard smooth_sin game used by the flow/equilibrium checks.
fn smooth_sin_objective(n: usize, sigma: f64) -> Result<RegularizedObjective> {
    let (gx, gy) = grids_1d(n);
    RegularizedObjective::new(
        payoff::generator_smooth_sin(gx.clone(), gy.clone())?,
        sigma,
        ReferenceMeasure::uniform(gx),
        ReferenceMeasure::uniform(gy),
    )
}

struct FlowChecks {
    mass: String,
    envelopes: String,
    gronwall: String,
    bound_chain: String,
}

fn flow_trajectory_checks(seed: u64) -> Result<FlowChecks> {
    let sigma = 1.0;
    let obj = smooth_sin_objective(64, sigma)?;
    let mut rng = CounterRng::stream(seed, 7);
    let nu0 = payoff::random_gibbs(obj.payoff().grid_x(), &mut rng, 1.0);
    let mu0 = payoff::random_gibbs(obj.payoff().grid_y(), &mut rng, 1.0);
    let dt = 1e-3;
    let cfg = IntegratorConfig::new(Scheme::EulerLog, dt, 10.0, 50)?;
    let traj = flow::integrate(&nu0, &mu0, &obj, &cfg)?;

    // Conservation: pre-renormalization drift <= 10 dt^2 per step.
    let mut worst_mass = 0.0_f64;
    for d in &traj.diagnostics {
        worst_mass = worst_mass.max(d.mass_err_nu).max(d.mass_err_mu);
    }
    if worst_mass > 10.0 * dt * dt {
        return Err(err(format!("mass drift {worst_mass:.3e} above 10 dt^2")));
    }

    // Envelope respect (5% margin already applied inside the report).
    if traj.envelope.violations > 0 {
        return Err(err(format!("{} envelope violations along the trajectory", traj.envelope.violations)));
    }

    // Gronwall differential check against the solved equilibrium.
    let eq = equilibrium::solve_mne(&obj, None, 1e-11, 50_000)?;
    if !eq.converged {
        return Err(err("equilibrium solve did not converge".into()));
    }
    let series = equilibrium::lyapunov_series(&traj, &eq, &obj)?;
    let tol = 10.0 * dt;
    let mut worst_gronwall = f64::NEG_INFINITY;
    for w in series.windows(2) {
        let (s0, s1) = (&w[0], &w[1]);
        let rate = (s1.kl_sum - s0.kl_sum) / (s1.t - s0.t);
        let slack = rate - (-0.5 * sigma * sigma * s0.kl_sum + tol * (1.0 + s0.kl_sum));
        worst_gronwall = worst_gronwall.max(slack);
        if slack > 0.0 {
            return Err(err(format!("Gronwall differential check failed at t={}: slack {slack:.3e}", s0.t)));
        }
    }

    // Bound chain: NI <= 2 C_sigma sqrt(2) sqrt(kl_sum), sample-wise.
    let c_sigma = eq.constants.c_sigma.max(equilibrium::estimate_c_sigma(&traj, &obj)?);
    let mut worst_chain = f64::NEG_INFINITY;
    for s in &series {
        let bound = 2.0 * c_sigma * (2.0 * s.kl_sum).sqrt();
        let slack = s.ni - bound;
        worst_chain = worst_chain.max(slack);
        if slack > 1e-9 {
            return Err(err(format!("NI bound chain violated at t={}: ni {} > {bound}", s.t, s.ni)));
        }
    }

    Ok(FlowChecks {
        mass: format!("worst pre-renormalization drift {worst_mass:.3e} (budget {:.1e})", 10.0 * dt * dt),
        envelopes: format!(
            "0 violations; KL bounds ({:.2}, {:.2}), ratio envelopes [{:.2e}, {:.2e}]",
            traj.envelope.kl_bound_nu, traj.envelope.kl_bound_mu, traj.envelope.inf_bound_nu, traj.envelope.sup_bound_nu
        ),
        gronwall: format!("worst slack {worst_gronwall:.3e}"),
        bound_chain: format!("worst slack {worst_chain:.3e} with C_sigma = {c_sigma:.3}"),
    })
}

fn check_scheme_consistency(seed: u64) -> Result<String> {
    let obj = smooth_sin_objective(16, 1.0)?;
    let mut rng = CounterRng::stream(seed, 8);
    let nu0 = payoff::random_gibbs(obj.payoff().grid_x(), &mut rng, 1.0);
    let mu0 = payoff::random_gibbs(obj.payoff().grid_y(), &mut rng, 1.0);
    let diff_at = |dt: f64| -> Result<f64> {
        let stride = (1.0 / dt) as usize;
        let te = flow::integrate(&nu0, &mu0, &obj, &IntegratorConfig::new(Scheme::EulerLog, dt, 1.0, stride)?)?;
        let td = flow::integrate(&nu0, &mu0, &obj, &IntegratorConfig::new(Scheme::ExpDuhamel, dt, 1.0, stride)?)?;
        let (se, sd) = (te.terminal(), td.terminal());
        Ok(se.nu.tv_distance(&sd.nu)? + se.mu.tv_distance(&sd.mu)?)
    };
    let d1 = diff_at(0.02)?;
    let d2 = diff_at(0.01)?;
    if d2 >= 0.75 * d1 {
        return Err(err(format!("schemes not mutually first-order: {d1:.3e} -> {d2:.3e}")));
    }
    Ok(format!("terminal TV gap {d1:.3e} at dt=2e-2, {d2:.3e} at dt=1e-2"))
}

fn check_mda_structure(seed: u64) -> Result<String> {
    // One MDA step with s = sigma^2/2 equals one euler_log step.
    let obj = smooth_sin_objective(24, 0.8)?;
    let mut rng = CounterRng::stream(seed, 9);
    let nu = payoff::random_gibbs(obj.payoff().grid_x(), &mut rng, 1.0);
    let mu = payoff::random_gibbs(obj.payoff().grid_y(), &mut rng, 1.0);
    let eta = 1e-3;
    let cfg = crate::mda::MdaConfig::main_text(0.8, eta, 1, 1)?;
    let (nu1, mu1) = crate::mda::mda_step(&nu, &mu, &obj, &cfg)?;
    let s1 = flow::step_euler_log(&FlowState { t: 0.0, nu: nu.clone(), mu: mu.clone() }, &obj, eta)?;
    let gap = nu1.tv_distance(&s1.nu)?.max(mu1.tv_distance(&s1.mu)?);
    if gap > 1e-12 {
        return Err(err(format!("mda step differs from euler_log by TV {gap:.3e}")));
    }

    // Non-interactive descent property.
    let (gx, gy) = grids_1d(101);
    let sep = payoff::generator_appendix_phi(gx.clone(), gy.clone())?;
    let obj_sep = RegularizedObjective::new(sep, 0.0, ReferenceMeasure::uniform(gx.clone()), ReferenceMeasure::uniform(gy))?;
    let cfg = crate::mda::MdaConfig::appendix_d(0.5, 0.5, 40, 1)?;
    let phi_x = match obj_sep.payoff() {
        PayoffSpec::Separable { phi_x, .. } => phi_x.clone(),
        _ => unreachable!(),
    };
    let mut nu = payoff::random_gibbs(&gx, &mut rng, 1.0);
    let mut mu = GridMeasure::uniform(obj_sep.payoff().grid_y().clone());
    let mut f = nu.expect(&phi_x) + cfg.reg_weight * nu.kl_divergence(obj_sep.pi().measure())?;
    for _ in 0..cfg.n_steps {
        let (n2, m2) = crate::mda::mda_step(&nu, &mu, &obj_sep, &cfg)?;
        let f2 = n2.expect(&phi_x) + cfg.reg_weight * n2.kl_divergence(obj_sep.pi().measure())?;
        if f2 > f + 1e-12 {
            return Err(err(format!("non-interactive objective rose: {f} -> {f2}")));
        }
        nu = n2;
        mu = m2;
        f = f2;
    }
    Ok(format!("euler_log translation gap {gap:.1e}; descent property held for 40 steps"))
}

struct EquilibriumChecks {
    fixed_point: String,
    ni: String,
    saddle: String,
    negative_control: String,
    rate_fit: String,
}

fn equilibrium_checks(seed: u64) -> Result<EquilibriumChecks> {
    let obj = smooth_sin_objective(64, 1.0)?;
    let eq = equilibrium::solve_mne(&obj, None, 1e-11, 50_000)?;
    if !eq.converged || eq.residual_tv > 1e-10 {
        return Err(err(format!("solve_mne residual {}", eq.residual_tv)));
    }
    // Flow stationarity of the solved pair.
    let mut state = FlowState { t: 0.0, nu: eq.nu_star.clone(), mu: eq.mu_star.clone() };
    for _ in 0..1000 {
        state = flow::step_euler_log(&state, &obj, 1e-3)?;
    }
    let moved = state.nu.tv_distance(&eq.nu_star)?.max(state.mu.tv_distance(&eq.mu_star)?);
    if moved > 1e-9 {
        return Err(err(format!("equilibrium moved TV {moved:.3e} over one unit of flow time")));
    }

    let ni = equilibrium::ni_error(&eq.nu_star, &eq.mu_star, &obj)?;
    if ni > 1e-8 {
        return Err(err(format!("NI at the MNE is {ni:.3e}")));
    }

    let worst = equilibrium::saddle_audit(&eq, &obj, 1000, seed)?;
    if worst < -1e-8 {
        return Err(err(format!("saddle audit violation {worst:.3e}")));
    }

    // Negative control: a perturbed pair must be flagged.
    let mut rng = CounterRng::stream(seed, 10);
    let fake = EquilibriumResult {
        nu_star: eq.nu_star.tilt(&rng.uniform_vec(eq.nu_star.len(), -0.8, 0.8))?,
        mu_star: eq.mu_star.tilt(&rng.uniform_vec(eq.mu_star.len(), -0.8, 0.8))?,
        residual_tv: f64::NAN,
        iterations: 0,
        converged: false,
        constants: eq.constants,
    };
    let fake_worst = equilibrium::saddle_audit(&fake, &obj, 100, seed + 1)?;
    if fake_worst >= -1e-7 {
        return Err(err(format!("negative control not flagged: worst slack {fake_worst:.3e}")));
    }
    let fake_ni = equilibrium::ni_error(&fake.nu_star, &fake.mu_star, &obj)?;
    if fake_ni <= 1e-7 {
        return Err(err(format!("negative control NI suspiciously small: {fake_ni:.3e}")));
    }

    // Synthetic rate fit.
    let times: Vec<f64> = (0..200).map(|k| 0.05 * k as f64).collect();
    let values: Vec<f64> = times.iter().map(|t| 3.0 * (-1.25 * t).exp()).collect();
    let fit = equilibrium::fit_decay_rate(&times, &values, None)?;
    if (fit.fitted_rate - 1.25).abs() > 1e-10 || fit.r_squared < 1.0 - 1e-12 {
        return Err(err(format!("synthetic rate fit off: {} (r^2 {})", fit.fitted_rate, fit.r_squared)));
    }

    Ok(EquilibriumChecks {
        fixed_point: format!("residual {:.2e}, flow movement {moved:.2e} per unit time", eq.residual_tv),
        ni: format!("NI at MNE = {ni:.2e}"),
        saddle: format!("worst slack {worst:.2e} over 1000 probes"),
        negative_control: format!("perturbed pair flagged: slack {fake_worst:.2e}, NI {fake_ni:.2e}"),
        rate_fit: format!("recovered 1.25 as {:.12}", fit.fitted_rate),
    })
}

/// Run the full property suite. Deterministic given the seed.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut out = vec![
        CheckResult::from("measure.pinsker_and_normalization", check_pinsker(seed)),
        CheckResult::from("measure.gibbs_shift_invariance", check_gibbs_shift_invariance(seed)),
        CheckResult::from("payoff.flat_derivative_centering", check_flat_derivative_centering(seed)),
        CheckResult::from("payoff.fd_consistency", check_fd_consistency(seed)),
        CheckResult::from("payoff.convexity_concavity", check_convexity_concavity(seed)),
        CheckResult::from("payoff.relative_strong_convexity", check_relative_strong_convexity(seed)),
        CheckResult::from("payoff.mixed_second_symmetry", check_mixed_second_symmetry(seed)),
    ];
    match flow_trajectory_checks(seed) {
        Ok(fc) => {
            out.push(CheckResult::pass("flow.mass_conservation", fc.mass));
            out.push(CheckResult::pass("flow.theorem_envelopes", fc.envelopes));
            out.push(CheckResult::pass("flow.gronwall_differential", fc.gronwall));
            out.push(CheckResult::pass("flow.ni_bound_chain", fc.bound_chain));
        }
        Err(e) => {
            let msg = e.to_string();
            out.push(CheckResult::fail("flow.mass_conservation", msg.clone()));
            out.push(CheckResult::fail("flow.theorem_envelopes", msg.clone()));
            out.push(CheckResult::fail("flow.gronwall_differential", msg.clone()));
            out.push(CheckResult::fail("flow.ni_bound_chain", msg));
        }
    }
    out.push(CheckResult::from("flow.scheme_consistency", check_scheme_consistency(seed)));
    out.push(CheckResult::from("mda.structure_and_descent", check_mda_structure(seed)));
    match equilibrium_checks(seed) {
        Ok(ec) => {
            out.push(CheckResult::pass("equilibrium.fixed_point", ec.fixed_point));
            out.push(CheckResult::pass("equilibrium.ni_at_mne", ec.ni));
            out.push(CheckResult::pass("equilibrium.saddle_audit", ec.saddle));
            out.push(CheckResult::pass("equilibrium.negative_control", ec.negative_control));
            out.push(CheckResult::pass("equilibrium.rate_fit", ec.rate_fit));
        }
        Err(e) => {
            let msg = e.to_string();
            for name in [
                "equilibrium.fixed_point",
                "equilibrium.ni_at_mne",
                "equilibrium.saddle_audit",
                "equilibrium.negative_control",
                "equilibrium.rate_fit",
            ] {
                out.push(CheckResult::fail(name, msg.clone()));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_is_green() {
        let results = run_all(42);
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
        assert!(failed.is_empty(), "failed checks: {failed:?}");
        assert!(results.len() >= 15);
    }
}
