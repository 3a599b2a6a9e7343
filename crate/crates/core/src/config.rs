//! Declarative experiment configuration, schema `fr-minmax/v1`.
//!
//! Experiments are described by a JSON document rather than flags: a game
//! (named generator or kernel file over configured grids), the
//! regularization strength, reference and initial measures, a method with
//! its parameters, and an output directory. A `summary.json` written by the
//! runner embeds the fully-resolved config, so re-running from it reproduces
//! the outputs byte for byte.
//!
//! Named reference potentials (for `gibbs` measures): `quadratic` is
//! `U(x) = |x|^2 / 2`, `double_well` is `U(x) = 4 (|x|^2 - 1/4)^2` (wells at
//! `|x| = 1/2`).

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::flow::{IntegratorConfig, Scheme};
use crate::grid::Grid;
use crate::mda::{MdaConfig, RegConvention};
use crate::measure::{GridMeasure, ReferenceMeasure};
use crate::payoff::{self, PayoffSpec, RegularizedObjective};
use crate::{Error, Result};

pub const SCHEMA: &str = "fr-minmax/v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    pub game: GameConfig,
    pub sigma: f64,
    #[serde(default)]
    pub references: MeasurePairConfig,
    #[serde(default)]
    pub init: MeasurePairConfig,
    pub method: MethodConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    /// Built-in kernel generator: `zero`, `matching_pennies`, `smooth_sin`,
    /// `appendix_d_phi`. Exactly one of `generator` / `kernel_file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    /// CSV matrix (row = x index, column = y index) for a bilinear payoff.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_file: Option<String>,
    #[serde(default)]
    pub grid: GridConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    #[serde(rename = "uniform_1d")]
    Uniform1d,
    Finite,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub kind: GridKind,
    pub nx: usize,
    pub ny: usize,
    pub x_bounds: [f64; 2],
    pub y_bounds: [f64; 2],
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { kind: GridKind::Uniform1d, nx: 256, ny: 256, x_bounds: [-1.0, 1.0], y_bounds: [-1.0, 1.0] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MeasurePairConfig {
    #[serde(default)]
    pub nu: MeasureConfig,
    #[serde(default)]
    pub mu: MeasureConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureConfig {
    #[default]
    Uniform,
    Gibbs {
        potential: String,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    DensityFile {
        path: String,
    },
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    Flow {
        scheme: Scheme,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dt: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_end: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sample_every: Option<usize>,
    },
    Mda {
        #[serde(default = "default_convention")]
        convention: RegConvention,
        eta: f64,
        n_steps: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        record_every: Option<usize>,
    },
    Picard {
        t_end: f64,
        n_time_nodes: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tol: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_iters: Option<usize>,
    },
    SolveMne {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        damping: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tol: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_iter: Option<usize>,
    },
    Validate,
}

fn default_convention() -> RegConvention {
    RegConvention::AppendixD
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    #[serde(default)]
    pub density_snapshots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into(), density_snapshots: false }
    }
}

/// Cartesian parameter grid for `fr-minmax sweep`.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default)]
    pub grid_points: Vec<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        ExperimentConfig::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Config(format!("unsupported schema `{}`, expected `{SCHEMA}`", self.schema)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma {} must be finite and nonnegative", self.sigma)));
        }
        match (&self.game.generator, &self.game.kernel_file) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("specify either game.generator or game.kernel_file, not both".into()))
            }
            (None, None) => return Err(Error::Config("game needs a generator name or a kernel_file".into())),
            _ => {}
        }
        Ok(())
    }

    /// Resolve all optional method parameters to concrete values, so the
    /// embedded config in `summary.json` round-trips the exact run.
    pub fn resolved(&self) -> Result<ExperimentConfig> {
        let mut out = self.clone();
        out.method = match &self.method {
            MethodConfig::Flow { scheme, dt, t_end, sample_every } => {
                let sigma = self.sigma;
                if sigma <= 0.0 {
                    return Err(Error::Config("flow methods require sigma > 0".into()));
                }
                let dt = dt.unwrap_or(1e-3);
                let t_end = t_end.unwrap_or(20.0 / (sigma * sigma));
                let sample_every = match sample_every {
                    Some(s) => *s,
                    None => (((t_end / dt).round() as usize) / 2000).max(1),
                };
                MethodConfig::Flow { scheme: *scheme, dt: Some(dt), t_end: Some(t_end), sample_every: Some(sample_every) }
            }
            MethodConfig::Mda { convention, eta, n_steps, record_every } => MethodConfig::Mda {
                convention: *convention,
                eta: *eta,
                n_steps: *n_steps,
                record_every: Some(record_every.unwrap_or_else(|| (n_steps / 2000).max(1))),
            },
            MethodConfig::Picard { t_end, n_time_nodes, tol, max_iters } => MethodConfig::Picard {
                t_end: *t_end,
                n_time_nodes: *n_time_nodes,
                tol: Some(tol.unwrap_or(1e-8)),
                max_iters: Some(max_iters.unwrap_or(200)),
            },
            MethodConfig::SolveMne { damping, tol, max_iter } => MethodConfig::SolveMne {
                damping: *damping,
                tol: Some(tol.unwrap_or(1e-10)),
                max_iter: Some(max_iter.unwrap_or(100_000)),
            },
            MethodConfig::Validate => MethodConfig::Validate,
        };
        Ok(out)
    }
}

/// Named potential evaluated at a grid point (squared norm in 2-D).
pub fn named_potential(name: &str, point: &[f64]) -> Result<f64> {
    let r2: f64 = point.iter().map(|c| c * c).sum();
    match name {
        "quadratic" => Ok(0.5 * r2),
        "double_well" => Ok(4.0 * (r2 - 0.25) * (r2 - 0.25)),
        other => Err(Error::Config(format!("unknown potential `{other}`"))),
    }
}

/// Everything a method run needs, materialized from a config.
pub struct Experiment {
    pub objective: RegularizedObjective,
    pub nu0: GridMeasure,
    pub mu0: GridMeasure,
}

fn build_grid(kind: GridKind, n: usize, bounds: [f64; 2]) -> Result<Arc<Grid>> {
    Ok(Arc::new(match kind {
        GridKind::Uniform1d => Grid::uniform_1d(n, bounds[0], bounds[1])?,
        GridKind::Finite => Grid::finite(n)?,
    }))
}

fn build_measure(cfg: &MeasureConfig, grid: &Arc<Grid>) -> Result<GridMeasure> {
    match cfg {
        MeasureConfig::Uniform => Ok(GridMeasure::uniform(grid.clone())),
        MeasureConfig::Gibbs { potential, scale } => {
            let lw: Vec<f64> = (0..grid.len())
                .map(|i| named_potential(potential, grid.point(i)).map(|u| -scale * u))
                .collect::<Result<_>>()?;
            Ok(GridMeasure::from_log_weights(grid.clone(), &lw)?.0)
        }
        MeasureConfig::DensityFile { path } => csvio::read_measure_csv(Path::new(path)),
    }
}

fn build_reference(cfg: &MeasureConfig, grid: &Arc<Grid>) -> Result<ReferenceMeasure> {
    match cfg {
        MeasureConfig::Uniform => Ok(ReferenceMeasure::uniform(grid.clone())),
        MeasureConfig::Gibbs { potential, scale } => {
            let potential: Vec<f64> = (0..grid.len())
                .map(|i| named_potential(potential, grid.point(i)).map(|u| scale * u))
                .collect::<Result<_>>()?;
            ReferenceMeasure::from_potential(grid.clone(), potential)
        }
        MeasureConfig::DensityFile { .. } => {
            Err(Error::Config("references must be uniform or a named gibbs potential".into()))
        }
    }
}

impl ExperimentConfig {
    /// Build grids, payoff, references and initial measures. `sigma_override`
    /// and `grid_override` serve sweep cells.
    pub fn build(&self, sigma_override: Option<f64>, grid_override: Option<usize>) -> Result<Experiment> {
        let mut grid_cfg = self.game.grid.clone();
        if let Some(n) = grid_override {
            grid_cfg.nx = n;
            grid_cfg.ny = n;
        }
        let sigma = sigma_override.unwrap_or(self.sigma);

        let payoff = if let Some(name) = &self.game.generator {
            // matching_pennies fixes its own finite 2x2 strategy sets.
            if name == "matching_pennies" {
                payoff::generator_matching_pennies()?
            } else {
                let gx = build_grid(grid_cfg.kind, grid_cfg.nx, grid_cfg.x_bounds)?;
                let gy = build_grid(grid_cfg.kind, grid_cfg.ny, grid_cfg.y_bounds)?;
                payoff::generator_by_name(name, gx, gy)?
            }
        } else {
            let path = self.game.kernel_file.as_ref().expect("validated");
            let (kernel, nx, ny) = csvio::read_kernel_csv(Path::new(path))?;
            let gx = build_grid(grid_cfg.kind, nx, grid_cfg.x_bounds)?;
            let gy = build_grid(grid_cfg.kind, ny, grid_cfg.y_bounds)?;
            PayoffSpec::bilinear(gx, gy, kernel)?
        };

        let gx = payoff.grid_x().clone();
        let gy = payoff.grid_y().clone();
        let pi = build_reference(&self.references.nu, &gx)?;
        let rho = build_reference(&self.references.mu, &gy)?;
        let nu0 = build_measure(&self.init.nu, &gx)?;
        let mu0 = build_measure(&self.init.mu, &gy)?;

        // Warm-start invariant, checked at load: initial density ratios to
        // the references must be bounded away from 0 and infinity.
        for (side, m, r) in [("init.nu", &nu0, pi.measure()), ("init.mu", &mu0, rho.measure())] {
            let (lo, hi) = m.ratio_bounds(r)?;
            if !(lo >= crate::flow::RATIO_GUARD && hi <= 1.0 / crate::flow::RATIO_GUARD) {
                return Err(Error::Config(format!(
                    "{side} violates the ratio condition against its reference: ratios in [{lo:.3e}, {hi:.3e}]"
                )));
            }
        }
        let objective = RegularizedObjective::new(payoff, sigma, pi, rho)?;
        Ok(Experiment { objective, nu0, mu0 })
    }

    pub fn integrator_config(&self) -> Result<IntegratorConfig> {
        match self.resolved()?.method {
            MethodConfig::Flow { scheme, dt, t_end, sample_every } => {
                IntegratorConfig::new(scheme, dt.unwrap(), t_end.unwrap(), sample_every.unwrap())
            }
            _ => Err(Error::Config("method is not a flow".into())),
        }
    }

    pub fn mda_config(&self, sigma_override: Option<f64>, eta_override: Option<f64>) -> Result<MdaConfig> {
        match self.resolved()?.method {
            MethodConfig::Mda { convention, eta, n_steps, record_every } => {
                let sigma = sigma_override.unwrap_or(self.sigma);
                let eta = eta_override.unwrap_or(eta);
                match convention {
                    RegConvention::MainText => MdaConfig::main_text(sigma, eta, n_steps, record_every.unwrap()),
                    RegConvention::AppendixD => MdaConfig::appendix_d(sigma, eta, n_steps, record_every.unwrap()),
                }
            }
            _ => Err(Error::Config("method is not mda".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": "fr-minmax/v1",
        "seed": 7,
        "game": {"generator": "smooth_sin", "grid": {"kind": "uniform_1d", "nx": 32, "ny": 32, "x_bounds": [-1, 1], "y_bounds": [-1, 1]}},
        "sigma": 1.0,
        "method": {"type": "flow", "scheme": "euler_log"}
    }"#;

    #[test]
    fn minimal_config_parses_and_resolves() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 7);
        let resolved = cfg.resolved().unwrap();
        match resolved.method {
            MethodConfig::Flow { dt, t_end, sample_every, .. } => {
                assert_eq!(dt, Some(1e-3));
                assert_eq!(t_end, Some(20.0));
                assert_eq!(sample_every, Some(10));
            }
            _ => panic!("wrong method"),
        }
        let exp = cfg.build(None, None).unwrap();
        assert_eq!(exp.objective.payoff().grid_x().len(), 32);
        assert_eq!(exp.nu0.len(), 32);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap().resolved().unwrap();
        let text = cfg.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn schema_and_game_validation() {
        assert!(ExperimentConfig::from_json(&MINIMAL.replace("fr-minmax/v1", "fr-minmax/v0")).is_err());
        assert!(ExperimentConfig::from_json(&MINIMAL.replace(r#""generator": "smooth_sin", "#, "")).is_err());
        let cfg = ExperimentConfig::from_json(&MINIMAL.replace("smooth_sin", "no_such_game")).unwrap();
        assert!(cfg.build(None, None).is_err());
    }

    #[test]
    fn gibbs_references_and_potentials() {
        let text = MINIMAL.replace(
            r#""method""#,
            r#""references": {"nu": {"type": "gibbs", "potential": "quadratic"}, "mu": {"type": "gibbs", "potential": "double_well", "scale": 2.0}}, "method""#,
        );
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        let exp = cfg.build(None, None).unwrap();
        // quadratic reference puts more mass near 0 than at the boundary
        let pi = exp.objective.pi().measure();
        let mid = pi.density(16);
        let edge = pi.density(0);
        assert!(mid > edge);
        assert!(named_potential("nope", &[0.0]).is_err());
    }

    #[test]
    fn grid_override_rescales_both_sides() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let exp = cfg.build(None, Some(64)).unwrap();
        assert_eq!(exp.objective.payoff().grid_x().len(), 64);
        assert_eq!(exp.objective.payoff().grid_y().len(), 64);
    }
}
