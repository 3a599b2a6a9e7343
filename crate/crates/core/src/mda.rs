//! Discrete-time mirror descent-ascent (MDA).
//!
//! Each player minimizes/maximizes a linearization of the objective plus a
//! `(1/eta) KL` proximal term; the closed form is the simultaneous
//! multiplicative-weights update
//!
//! ```text
//! nu+  proportional to  nu  exp(-eta [dF/dnu + s log(nu/pi)])
//! mu+  proportional to  mu  exp(+eta [dF/dmu - s log(mu/rho)])
//! ```
//!
//! Two regularizer-weight conventions coexist in the literature this module
//! covers: the continuous-time objective weighs the KL terms by `sigma^2/2`,
//! the discrete-time analysis weighs them by `sigma` (and requires
//! `sigma * eta <= 1`). [`MdaConfig::main_text`] and [`MdaConfig::appendix_d`]
//! pin down which convention a run uses, so rate constants cannot silently
//! mix. The zero-step-size limit of either convention is the Fisher-Rao
//! flow; in fact one MDA step with `s = sigma^2/2` and `eta = dt` equals one
//! `euler_log` flow step exactly (the updates differ by a constant that the
//! normalization removes).

use crate::equilibrium::{self, NiReport};
use crate::measure::GridMeasure;
use crate::payoff::{self, PayoffSpec, RegularizedObjective};
use crate::{Error, Result};

/// Which regularizer-weight convention a config was built with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegConvention {
    /// Weight `sigma^2 / 2` (continuous-time objective).
    MainText,
    /// Weight `sigma` (discrete-time rate analysis), requires `sigma eta <= 1`.
    AppendixD,
}

#[derive(Debug, Clone, Copy)]
pub struct MdaConfig {
    pub eta: f64,
    /// Operative regularizer weight `s` (see [`RegConvention`]).
    pub reg_weight: f64,
    pub convention: RegConvention,
    pub n_steps: usize,
    pub record_every: usize,
}

impl MdaConfig {
    fn validate(eta: f64, reg_weight: f64, convention: RegConvention, n_steps: usize, record_every: usize) -> Result<MdaConfig> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::invalid("eta", format!("{eta} not in (0, inf)")));
        }
        if !(reg_weight.is_finite() && reg_weight >= 0.0) {
            return Err(Error::invalid("sigma", format!("regularizer weight {reg_weight} not in [0, inf)")));
        }
        if reg_weight > 0.0 && reg_weight * eta > 1.0 {
            return Err(Error::invalid(
                "eta",
                format!("stability requires reg_weight * eta <= 1, got {}", reg_weight * eta),
            ));
        }
        if n_steps == 0 || record_every == 0 {
            return Err(Error::invalid("n_steps", "n_steps and record_every must be positive"));
        }
        Ok(MdaConfig { eta, reg_weight, convention, n_steps, record_every })
    }

    /// Main-text convention: regularizer weight `sigma^2 / 2`.
    pub fn main_text(sigma: f64, eta: f64, n_steps: usize, record_every: usize) -> Result<MdaConfig> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid("sigma", format!("{sigma} not in [0, inf)")));
        }
        Self::validate(eta, 0.5 * sigma * sigma, RegConvention::MainText, n_steps, record_every)
    }

    /// Discrete-time convention: regularizer weight `sigma`, with the step
    /// restriction `sigma eta <= 1`.
    pub fn appendix_d(sigma: f64, eta: f64, n_steps: usize, record_every: usize) -> Result<MdaConfig> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid("sigma", format!("{sigma} not in [0, inf)")));
        }
        Self::validate(eta, sigma, RegConvention::AppendixD, n_steps, record_every)
    }
}

fn mda_shifts(
    nu: &GridMeasure,
    mu: &GridMeasure,
    obj: &RegularizedObjective,
    cfg: &MdaConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = cfg.reg_weight;
    let g = payoff::flat_dnu_raw(obj.payoff(), mu)?;
    let h = payoff::flat_dmu_raw(obj.payoff(), nu, mu)?;
    let pi_log = obj.pi().measure().log_density();
    let rho_log = obj.rho().measure().log_density();
    let shift_nu: Vec<f64> = g
        .iter()
        .zip(nu.log_density())
        .zip(pi_log)
        .map(|((gi, lp), lpi)| -cfg.eta * (gi + s * (lp - lpi)))
        .collect();
    let shift_mu: Vec<f64> = h
        .iter()
        .zip(mu.log_density())
        .zip(rho_log)
        .map(|((hj, lq), lrho)| cfg.eta * (hj - s * (lq - lrho)))
        .collect();
    if let Some(i) = shift_nu.iter().chain(&shift_mu).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "mda exponent", index: i });
    }
    Ok((shift_nu, shift_mu))
}

/// One simultaneous multiplicative-weights update. Both exponents are
/// evaluated at the incoming pair, then Gibbs-normalized.
pub fn mda_step(
    nu: &GridMeasure,
    mu: &GridMeasure,
    obj: &RegularizedObjective,
    cfg: &MdaConfig,
) -> Result<(GridMeasure, GridMeasure)> {
    let (sn, sm) = mda_shifts(nu, mu, obj, cfg)?;
    Ok((nu.tilt(&sn)?, mu.tilt(&sm)?))
}

/// Per-record diagnostics of an MDA run. Optional fields are populated when
/// they are defined for the run: `kl_sum_to_mne` needs a positive
/// regularizer weight, the payoff integrals need a separable payoff.
#[derive(Debug, Clone, Copy)]
pub struct MdaRecord {
    pub n: usize,
    pub ni_error: f64,
    pub kl_sum_to_mne: Option<f64>,
    pub phi_integral_nu: Option<f64>,
    pub phi_integral_mu: Option<f64>,
    /// Largest pre-renormalization mass drift since the previous record.
    pub mass_err: f64,
}

#[derive(Debug, Clone)]
pub struct MdaRun {
    pub records: Vec<MdaRecord>,
    pub final_nu: GridMeasure,
    pub final_mu: GridMeasure,
    /// The weighted MNE used for `kl_sum_to_mne` (regularized runs only).
    pub mne: Option<(GridMeasure, GridMeasure)>,
    /// Sup over all steps of the centered per-step drift magnitude
    /// `|shift|/eta` (the discrete analog of the `C_sigma` drift envelope).
    pub drift_sup: f64,
    /// Any NI evaluation used an iterative inner solve (composite payoffs).
    pub ni_iterative: bool,
    /// Raw NI values in [-1e-10, 0) clamped to zero.
    pub ni_clamped: usize,
}

/// Run MDA for `cfg.n_steps` iterations, recording diagnostics every
/// `cfg.record_every` steps (plus the initial and final iterates).
pub fn run_mda(
    nu0: &GridMeasure,
    mu0: &GridMeasure,
    obj: &RegularizedObjective,
    cfg: &MdaConfig,
) -> Result<MdaRun> {
    let s = cfg.reg_weight;
    let mne = if s > 0.0 {
        let solve = equilibrium::solve_mne_weighted(obj.payoff(), obj.pi(), obj.rho(), s, None, 1e-12, 10_000)?;
        if !solve.converged {
            return Err(Error::NotConverged {
                what: "weighted MNE for MDA diagnostics",
                iterations: solve.iterations,
                residual: solve.residual_tv,
            });
        }
        Some((solve.nu, solve.mu))
    } else {
        None
    };
    let phi = match obj.payoff() {
        PayoffSpec::Separable { phi_x, phi_y, .. } => Some((phi_x.clone(), phi_y.clone())),
        _ => None,
    };

    let mut ni_iterative = false;
    let mut ni_clamped = 0usize;
    let mut record = |n: usize, nu: &GridMeasure, mu: &GridMeasure, mass_err: f64| -> Result<MdaRecord> {
        let NiReport { value, clamped, iterative_inner } =
            equilibrium::ni_error_weighted(obj.payoff(), obj.pi(), obj.rho(), s, nu, mu)?;
        ni_iterative |= iterative_inner;
        ni_clamped += clamped as usize;
        let kl_sum_to_mne = match &mne {
            Some((nu_star, mu_star)) => Some(nu_star.kl_divergence(nu)? + mu_star.kl_divergence(mu)?),
            None => None,
        };
        let (phi_nu, phi_mu) = match &phi {
            Some((phi_x, phi_y)) => (Some(nu.expect(phi_x)), Some(mu.expect(phi_y))),
            None => (None, None),
        };
        Ok(MdaRecord { n, ni_error: value, kl_sum_to_mne, phi_integral_nu: phi_nu, phi_integral_mu: phi_mu, mass_err })
    };

    let mut nu = nu0.clone();
    let mut mu = mu0.clone();
    let mut records = vec![record(0, &nu, &mu, 0.0)?];
    let mut stride_mass = 0.0_f64;
    let mut drift_sup = 0.0_f64;
    for n in 1..=cfg.n_steps {
        let (sn, sm) = mda_shifts(&nu, &mu, obj, cfg)?;
        let mean_sn = nu.expect(&sn);
        let mean_sm = mu.expect(&sm);
        drift_sup = sn
            .iter()
            .map(|v| (v - mean_sn).abs())
            .chain(sm.iter().map(|v| (v - mean_sm).abs()))
            .fold(drift_sup, f64::max);
        stride_mass = stride_mass
            .max((nu.tilted_mass(&sn) - 1.0).abs())
            .max((mu.tilted_mass(&sm) - 1.0).abs());
        nu = nu.tilt(&sn)?;
        mu = mu.tilt(&sm)?;
        if n % cfg.record_every == 0 || n == cfg.n_steps {
            records.push(record(n, &nu, &mu, stride_mass)?);
            stride_mass = 0.0;
        }
    }
    let drift_sup = drift_sup / cfg.eta;
    Ok(MdaRun { records, final_nu: nu, final_mu: mu, mne, drift_sup, ni_iterative, ni_clamped })
}
