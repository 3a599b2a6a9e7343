//! Probability measures on quadrature grids, stored in log-domain.
//!
//! A [`GridMeasure`] keeps the natural log of its density with respect to the
//! grid quadrature, so the multiplicative birth-death and mirror-descent
//! updates become additive and positivity is exact by construction. Every
//! public operation returns measures normalized to `sum_i w_i exp(log p_i) = 1`
//! within 1e-12.

use std::sync::Arc;

use crate::grid::Grid;
use crate::{Error, Result};

/// Floor applied when ingesting user-supplied raw densities. The dynamics
/// themselves never need a floor: log-domain updates preserve positivity.
pub const RAW_DENSITY_FLOOR: f64 = 1e-300;

/// Log of `sum_i w_i exp(v_i)` with max-subtraction.
pub fn log_weighted_sum_exp(log_weights: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(log_weights.len(), values.len());
    let mut hi = f64::NEG_INFINITY;
    for (lw, v) in log_weights.iter().zip(values) {
        let s = lw + v;
        if s > hi {
            hi = s;
        }
    }
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = log_weights
        .iter()
        .zip(values)
        .map(|(lw, v)| (lw + v - hi).exp())
        .sum();
    hi + sum.ln()
}

#[derive(Debug, Clone)]
pub struct GridMeasure {
    grid: Arc<Grid>,
    log_density: Vec<f64>,
}

impl GridMeasure {
    /// Gibbs normalization of unnormalized log-weights: returns the measure
    /// with `log p_i = g_i - log Z` and the log normalizing constant
    /// `log Z = log sum_i w_i exp(g_i)`.
    ///
    /// Rejects non-finite inputs, reporting the offending index.
    pub fn from_log_weights(grid: Arc<Grid>, log_weights: &[f64]) -> Result<(GridMeasure, f64)> {
        if log_weights.len() != grid.len() {
            return Err(Error::GridMismatch("log_weights length differs from grid size"));
        }
        for (i, &v) in log_weights.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { what: "log_weights", index: i });
            }
        }
        let log_quad: Vec<f64> = grid.weights().iter().map(|w| w.ln()).collect();
        let log_z = log_weighted_sum_exp(&log_quad, log_weights);
        let log_density = log_weights.iter().map(|v| v - log_z).collect();
        Ok((GridMeasure { grid, log_density }, log_z))
    }

    /// Uniform measure (density `1 / volume`).
    pub fn uniform(grid: Arc<Grid>) -> GridMeasure {
        let n = grid.len();
        let (m, _) = GridMeasure::from_log_weights(grid, &vec![0.0; n]).expect("zeros are finite");
        debug_assert_eq!(m.len(), n);
        m
    }

    /// Ingest raw densities, flooring at [`RAW_DENSITY_FLOOR`] before taking
    /// logs, then normalizing.
    pub fn from_densities(grid: Arc<Grid>, densities: &[f64]) -> Result<GridMeasure> {
        if densities.len() != grid.len() {
            return Err(Error::GridMismatch("density length differs from grid size"));
        }
        let mut logs = Vec::with_capacity(densities.len());
        for (i, &d) in densities.iter().enumerate() {
            if !d.is_finite() || d < 0.0 {
                return Err(Error::NonFinite { what: "densities", index: i });
            }
            logs.push(d.max(RAW_DENSITY_FLOOR).ln());
        }
        Ok(GridMeasure::from_log_weights(grid, &logs)?.0)
    }

    /// Rebuild from already-normalized log-densities (CSV round-trips). The
    /// normalization residual must be within 1e-9; the given values are kept
    /// verbatim so that serialization round-trips are bit-faithful.
    pub fn from_log_density(grid: Arc<Grid>, log_density: Vec<f64>) -> Result<GridMeasure> {
        if log_density.len() != grid.len() {
            return Err(Error::GridMismatch("log_density length differs from grid size"));
        }
        for (i, &v) in log_density.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { what: "log_density", index: i });
            }
        }
        let m = GridMeasure { grid, log_density };
        let residual = (m.mass() - 1.0).abs();
        if residual > 1e-9 {
            return Err(Error::invalid(
                "log_density",
                format!("normalization residual {residual:.3e} exceeds 1e-9"),
            ));
        }
        Ok(m)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.log_density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_density.is_empty()
    }

    pub fn log_density(&self) -> &[f64] {
        &self.log_density
    }

    pub fn density(&self, i: usize) -> f64 {
        self.log_density[i].exp()
    }

    pub fn densities(&self) -> Vec<f64> {
        self.log_density.iter().map(|v| v.exp()).collect()
    }

    /// Expectation `integral of g with respect to this measure`.
    pub fn expect(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        self.grid
            .weights()
            .iter()
            .zip(&self.log_density)
            .zip(values)
            .map(|((w, lp), v)| w * lp.exp() * v)
            .sum()
    }

    /// Total mass, 1 up to rounding.
    pub fn mass(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(&self.log_density)
            .map(|(w, lp)| w * lp.exp())
            .sum()
    }

    pub(crate) fn same_grid(&self, other: &GridMeasure) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }

    /// Relative entropy `KL(self | other) = sum_i w_i p_i log(p_i / q_i)`,
    /// nonnegative, zero iff the densities coincide pointwise.
    ///
    /// Mismatched support (a `q_i = 0` with `p_i > 0`, which would make the
    /// divergence infinite) cannot occur by construction: log-domain storage
    /// keeps every density strictly positive.
    pub fn kl_divergence(&self, other: &GridMeasure) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch("kl_divergence operands"));
        }
        let kl: f64 = self
            .grid
            .weights()
            .iter()
            .zip(&self.log_density)
            .zip(&other.log_density)
            .map(|((w, lp), lq)| w * lp.exp() * (lp - lq))
            .sum();
        Ok(kl.max(0.0))
    }

    /// Total variation distance `1/2 sum_i w_i |p_i - q_i|`, in `[0, 1]`.
    pub fn tv_distance(&self, other: &GridMeasure) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch("tv_distance operands"));
        }
        let tv: f64 = self
            .grid
            .weights()
            .iter()
            .zip(&self.log_density)
            .zip(&other.log_density)
            .map(|((w, lp), lq)| w * (lp.exp() - lq.exp()).abs())
            .sum::<f64>()
            * 0.5;
        Ok(tv.min(1.0))
    }

    /// Pointwise min and max of the density ratio `self / reference`.
    pub fn ratio_bounds(&self, reference: &GridMeasure) -> Result<(f64, f64)> {
        if !self.same_grid(reference) {
            return Err(Error::GridMismatch("ratio_bounds operands"));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (lp, lq) in self.log_density.iter().zip(&reference.log_density) {
            let d = lp - lq;
            if d < lo {
                lo = d;
            }
            if d > hi {
                hi = d;
            }
        }
        Ok((lo.exp(), hi.exp()))
    }

    /// Convex mixture `(1 - eps) self + eps other`, renormalized.
    pub fn mix(&self, other: &GridMeasure, eps: f64) -> Result<GridMeasure> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch("mix operands"));
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::invalid("eps", format!("mixture weight {eps} outside [0, 1]")));
        }
        if eps == 0.0 {
            return Ok(self.clone());
        }
        if eps == 1.0 {
            return Ok(other.clone());
        }
        let la = (1.0 - eps).ln();
        let lb = eps.ln();
        let logs: Vec<f64> = self
            .log_density
            .iter()
            .zip(&other.log_density)
            .map(|(lp, lq)| {
                let a = la + lp;
                let b = lb + lq;
                let hi = a.max(b);
                hi + ((a - hi).exp() + (b - hi).exp()).ln()
            })
            .collect();
        Ok(GridMeasure::from_log_weights(self.grid.clone(), &logs)?.0)
    }

    /// Measure proportional to `self * exp(shift)`, Gibbs-normalized.
    /// This is the multiplicative update underlying both the birth-death
    /// flow and mirror descent.
    pub fn tilt(&self, shift: &[f64]) -> Result<GridMeasure> {
        let logs: Vec<f64> = self.log_density.iter().zip(shift).map(|(lp, s)| lp + s).collect();
        Ok(GridMeasure::from_log_weights(self.grid.clone(), &logs)?.0)
    }

    /// Mass of `self * exp(shift)` before renormalization; 1 + O(shift^2)
    /// when the shift is centered. Used for per-step conservation diagnostics.
    pub fn tilted_mass(&self, shift: &[f64]) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(&self.log_density)
            .zip(shift)
            .map(|((w, lp), s)| w * (lp + s).exp())
            .sum()
    }
}

/// A reference measure `pi` specified through its potential `U`, with
/// `pi proportional to exp(-U)`. The Gibbs normalization is exact by the
/// log-sum-exp identity.
#[derive(Debug, Clone)]
pub struct ReferenceMeasure {
    potential: Vec<f64>,
    measure: GridMeasure,
}

impl ReferenceMeasure {
    pub fn from_potential(grid: Arc<Grid>, potential: Vec<f64>) -> Result<ReferenceMeasure> {
        let neg: Vec<f64> = potential.iter().map(|u| -u).collect();
        let (measure, _) = GridMeasure::from_log_weights(grid, &neg)?;
        Ok(ReferenceMeasure { potential, measure })
    }

    /// Uniform reference (zero potential).
    pub fn uniform(grid: Arc<Grid>) -> ReferenceMeasure {
        let n = grid.len();
        ReferenceMeasure::from_potential(grid, vec![0.0; n]).expect("zero potential is finite")
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn measure(&self) -> &GridMeasure {
        &self.measure
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    fn two_point_grid() -> Arc<Grid> {
        Arc::new(Grid::finite(2).unwrap())
    }

    /// Hand-summation oracle for Gibbs normalization on small grids.
    fn dense_normalize(grid: &Grid, log_weights: &[f64]) -> (Vec<f64>, f64) {
        let z: f64 = grid
            .weights()
            .iter()
            .zip(log_weights)
            .map(|(w, g)| w * g.exp())
            .sum();
        (log_weights.iter().map(|g| g.exp() / z).collect(), z.ln())
    }

    #[test]
    fn gibbs_uniform_two_points() {
        let g = two_point_grid();
        let (m, log_z) = GridMeasure::from_log_weights(g, &[0.0, 0.0]).unwrap();
        assert!((m.density(0) - 0.5).abs() < 1e-15);
        assert!((m.density(1) - 0.5).abs() < 1e-15);
        assert!((log_z - 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gibbs_matches_hand_summation() {
        // Z = 3 + 1 = 4, densities (3/4, 1/4).
        let g = two_point_grid();
        let lw = [3.0_f64.ln(), 0.0];
        let (m, log_z) = GridMeasure::from_log_weights(g.clone(), &lw).unwrap();
        assert!((m.density(0) - 0.75).abs() < 1e-15);
        assert!((m.density(1) - 0.25).abs() < 1e-15);
        assert!((log_z - 4.0_f64.ln()).abs() < 1e-15);

        let (dens, oracle_log_z) = dense_normalize(&g, &lw);
        assert!((m.density(0) - dens[0]).abs() < 1e-15);
        assert!((log_z - oracle_log_z).abs() < 1e-15);
    }

    #[test]
    fn gibbs_shift_invariance() {
        let g = Arc::new(Grid::uniform_1d(33, -1.0, 1.0).unwrap());
        let mut rng = CounterRng::new(11);
        let lw = rng.uniform_vec(33, -3.0, 3.0);
        let shifted: Vec<f64> = lw.iter().map(|v| v + 123.456).collect();
        let (m0, z0) = GridMeasure::from_log_weights(g.clone(), &lw).unwrap();
        let (m1, z1) = GridMeasure::from_log_weights(g, &shifted).unwrap();
        for (a, b) in m0.log_density().iter().zip(m1.log_density()) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
        assert!((z1 - z0 - 123.456).abs() < 1e-10);
    }

    #[test]
    fn gibbs_rejects_non_finite_with_index() {
        let g = two_point_grid();
        let err = GridMeasure::from_log_weights(g, &[0.0, f64::NAN]).unwrap_err();
        match err {
            crate::Error::NonFinite { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn kl_identity_is_zero() {
        let g = Arc::new(Grid::uniform_1d(17, 0.0, 1.0).unwrap());
        let mut rng = CounterRng::new(3);
        let (m, _) = GridMeasure::from_log_weights(g, &rng.uniform_vec(17, -1.0, 1.0)).unwrap();
        assert_eq!(m.kl_divergence(&m).unwrap(), 0.0);
    }

    #[test]
    fn kl_closed_form_two_points() {
        // KL((3/4,1/4) | (1/2,1/2)) = 0.75 ln 1.5 + 0.25 ln 0.5
        let g = two_point_grid();
        let (p, _) = GridMeasure::from_log_weights(g.clone(), &[3.0_f64.ln(), 0.0]).unwrap();
        let q = GridMeasure::uniform(g);
        let kl = p.kl_divergence(&q).unwrap();
        assert!((kl - 0.130_812_035_941_137).abs() < 1e-14, "kl = {kl}");
    }

    #[test]
    fn tv_hand_values() {
        let g = two_point_grid();
        let (p, _) = GridMeasure::from_log_weights(g.clone(), &[3.0_f64.ln(), 0.0]).unwrap();
        let q = GridMeasure::uniform(g);
        assert!((p.tv_distance(&q).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(p.tv_distance(&p).unwrap(), 0.0);
    }

    #[test]
    fn tv_of_disjoint_floored_masses_approaches_one() {
        let g = two_point_grid();
        let p = GridMeasure::from_densities(g.clone(), &[1.0, 0.0]).unwrap();
        let q = GridMeasure::from_densities(g, &[0.0, 1.0]).unwrap();
        assert!((p.tv_distance(&q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_bounds_cases() {
        let g = two_point_grid();
        let (p, _) = GridMeasure::from_log_weights(g.clone(), &[3.0_f64.ln(), 0.0]).unwrap();
        let u = GridMeasure::uniform(g);
        assert_eq!(p.ratio_bounds(&p).unwrap(), (1.0, 1.0));
        let (lo, hi) = p.ratio_bounds(&u).unwrap();
        assert!((lo - 0.5).abs() < 1e-14);
        assert!((hi - 1.5).abs() < 1e-14);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = GridMeasure::uniform(Arc::new(Grid::finite(2).unwrap()));
        let b = GridMeasure::uniform(Arc::new(Grid::finite(3).unwrap()));
        assert!(a.kl_divergence(&b).is_err());
        assert!(a.tv_distance(&b).is_err());
        assert!(a.ratio_bounds(&b).is_err());
        assert!(a.mix(&b, 0.5).is_err());
    }

    #[test]
    fn mix_endpoints_and_midpoint() {
        let g = two_point_grid();
        let p = GridMeasure::from_densities(g.clone(), &[1.0, 0.0]).unwrap();
        let q = GridMeasure::from_densities(g, &[0.0, 1.0]).unwrap();
        let m0 = p.mix(&q, 0.0).unwrap();
        assert_eq!(m0.log_density(), p.log_density());
        let m1 = p.mix(&q, 1.0).unwrap();
        assert_eq!(m1.log_density(), q.log_density());
        let mid = p.mix(&q, 0.5).unwrap();
        assert!((mid.density(0) - 0.5).abs() < 1e-12);
        assert!((mid.density(1) - 0.5).abs() < 1e-12);
        assert!(p.mix(&q, 1.5).is_err());
    }

    #[test]
    fn mix_kl_vanishes_as_eps_shrinks() {
        let g = Arc::new(Grid::uniform_1d(41, -1.0, 1.0).unwrap());
        let mut rng = CounterRng::new(5);
        let (p, _) = GridMeasure::from_log_weights(g.clone(), &rng.uniform_vec(41, -2.0, 2.0)).unwrap();
        let (q, _) = GridMeasure::from_log_weights(g, &rng.uniform_vec(41, -2.0, 2.0)).unwrap();
        let mut last = f64::INFINITY;
        for eps in [0.5, 0.1, 0.01, 1e-3, 1e-4] {
            let kl = p.mix(&q, eps).unwrap().kl_divergence(&p).unwrap();
            assert!(kl <= last + 1e-15, "kl not shrinking at eps={eps}");
            last = kl;
        }
        assert!(last < 1e-6, "kl at eps=1e-4 still {last}");
    }

    #[test]
    fn reference_measure_is_gibbs_of_potential() {
        let g = Arc::new(Grid::uniform_1d(65, -1.0, 1.0).unwrap());
        let potential: Vec<f64> = (0..65).map(|i| {
            let x = -1.0 + 2.0 * i as f64 / 64.0;
            0.5 * x * x
        }).collect();
        let r = ReferenceMeasure::from_potential(g.clone(), potential.clone()).unwrap();
        // Density ratio exp(-U) between two points must match exactly.
        let m = r.measure();
        let lr = m.log_density()[0] - m.log_density()[32];
        assert!((lr - (potential[32] - potential[0])).abs() < 1e-12);
        assert!((m.mass() - 1.0).abs() <= 1e-12);
    }

    proptest! {
        /// Pinsker: tv(p,q)^2 <= kl(p,q)/2 on random pairs, and normalization
        /// stays within 1e-12 through the public constructors.
        #[test]
        fn pinsker_and_normalization(seed in 0u64..2000) {
            let g = Arc::new(Grid::uniform_1d(32, 0.0, 1.0).unwrap());
            let mut rng = CounterRng::new(seed);
            let (p, _) = GridMeasure::from_log_weights(g.clone(), &rng.uniform_vec(32, -4.0, 4.0)).unwrap();
            let (q, _) = GridMeasure::from_log_weights(g, &rng.uniform_vec(32, -4.0, 4.0)).unwrap();
            let tv = p.tv_distance(&q).unwrap();
            let kl = p.kl_divergence(&q).unwrap();
            prop_assert!(tv * tv <= 0.5 * kl + 1e-15);
            prop_assert!((p.mass() - 1.0).abs() <= 1e-12);
            prop_assert!((q.mass() - 1.0).abs() <= 1e-12);
            let m = p.mix(&q, 0.37).unwrap();
            prop_assert!((m.mass() - 1.0).abs() <= 1e-12);
        }

        /// TV is a metric on the simplex: bounded by 1, symmetric, and
        /// satisfying the triangle inequality.
        #[test]
        fn tv_is_symmetric_and_triangular(seed in 0u64..2000) {
            let g = Arc::new(Grid::uniform_1d(24, -1.0, 1.0).unwrap());
            let mut rng = CounterRng::new(seed);
            let (p, _) = GridMeasure::from_log_weights(g.clone(), &rng.uniform_vec(24, -4.0, 4.0)).unwrap();
            let (q, _) = GridMeasure::from_log_weights(g.clone(), &rng.uniform_vec(24, -4.0, 4.0)).unwrap();
            let (r, _) = GridMeasure::from_log_weights(g, &rng.uniform_vec(24, -4.0, 4.0)).unwrap();
            let pq = p.tv_distance(&q).unwrap();
            let qp = q.tv_distance(&p).unwrap();
            prop_assert_eq!(pq, qp);
            prop_assert!((0.0..=1.0).contains(&pq));
            let pr = p.tv_distance(&r).unwrap();
            let qr = q.tv_distance(&r).unwrap();
            prop_assert!(pr <= pq + qr + 1e-15);
        }
    }
}
