//! Quadrature grids on compact strategy spaces.
//!
//! A [`Grid`] is an ordered set of points in a compact subset of `R^d`
//! (`d = 1` or `2`) together with strictly positive quadrature weights.
//! Integrals of grid functions are plain weighted sums, so the same type
//! covers three regimes:
//!
//! - 1-D uniform grids with trapezoidal weights (weights sum to the interval
//!   length),
//! - 2-D product grids (product of two trapezoidal rules),
//! - finite strategy sets with unit weights, where quadrature degenerates to
//!   summation and densities are probability masses.

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    /// Point coordinates, `dim` entries per point.
    coords: Vec<f64>,
    /// Quadrature weight per point, strictly positive.
    weights: Vec<f64>,
    descriptor: String,
}

/// Two grids are the same when their points and weights coincide exactly;
/// the descriptor is a label, not identity (a grid read back from CSV must
/// compare equal to the one that wrote it).
impl PartialEq for Grid {
    fn eq(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.coords == other.coords && self.weights == other.weights
    }
}

impl Grid {
    /// Uniform 1-D grid of `n >= 2` points on `[a, b]` with trapezoidal weights.
    pub fn uniform_1d(n: usize, a: f64, b: f64) -> Result<Grid> {
        if n < 2 {
            return Err(Error::invalid("n", "1-D grid needs at least 2 points"));
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::invalid("bounds", format!("need finite a < b, got [{a}, {b}]")));
        }
        let h = (b - a) / (n - 1) as f64;
        let coords: Vec<f64> = (0..n).map(|i| a + i as f64 * h).collect();
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        Ok(Grid {
            dim: 1,
            coords,
            weights,
            descriptor: format!("uniform_1d(n={n}, [{a}, {b}])"),
        })
    }

    /// Finite strategy set `{0, 1, ..., n-1}` with unit weights.
    pub fn finite(n: usize) -> Result<Grid> {
        if n == 0 {
            return Err(Error::invalid("n", "finite strategy set must be non-empty"));
        }
        Ok(Grid {
            dim: 1,
            coords: (0..n).map(|i| i as f64).collect(),
            weights: vec![1.0; n],
            descriptor: format!("finite(n={n})"),
        })
    }

    /// Product of two 1-D trapezoidal rules on `[ax, bx] x [ay, by]`.
    /// Points are ordered row-major: the second coordinate varies fastest.
    pub fn product_2d(nx: usize, ax: f64, bx: f64, ny: usize, ay: f64, by: f64) -> Result<Grid> {
        let gx = Grid::uniform_1d(nx, ax, bx)?;
        let gy = Grid::uniform_1d(ny, ay, by)?;
        let mut coords = Vec::with_capacity(2 * nx * ny);
        let mut weights = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                coords.push(gx.coords[i]);
                coords.push(gy.coords[j]);
                weights.push(gx.weights[i] * gy.weights[j]);
            }
        }
        Ok(Grid {
            dim: 2,
            coords,
            weights,
            descriptor: format!("product_2d({nx}x{ny}, [{ax}, {bx}] x [{ay}, {by}])"),
        })
    }

    /// Rebuild a grid from raw parts (CSV ingestion). Validates weight
    /// positivity and pairwise-distinct points.
    pub fn from_parts(dim: usize, coords: Vec<f64>, weights: Vec<f64>, descriptor: String) -> Result<Grid> {
        if dim == 0 || dim > 2 {
            return Err(Error::invalid("dim", format!("only d = 1 or 2 supported, got {dim}")));
        }
        let n = weights.len();
        if n == 0 || coords.len() != n * dim {
            return Err(Error::invalid(
                "coords",
                format!("expected {} coordinates for {n} points, got {}", n * dim, coords.len()),
            ));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::invalid("weights", format!("weight {w} at index {i} not strictly positive")));
            }
        }
        for v in &coords {
            if !v.is_finite() {
                return Err(Error::invalid("coords", "non-finite coordinate"));
            }
        }
        // Pairwise distinctness via a lexicographic sort of point indices.
        let mut order: Vec<usize> = (0..n).collect();
        let point = |i: usize| &coords[i * dim..(i + 1) * dim];
        order.sort_by(|&i, &j| point(i).partial_cmp(point(j)).unwrap());
        for k in 1..n {
            if point(order[k - 1]) == point(order[k]) {
                return Err(Error::invalid(
                    "points",
                    format!("points {} and {} coincide", order[k - 1], order[k]),
                ));
            }
        }
        Ok(Grid { dim, coords, weights, descriptor })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// First coordinate of point `i` (the only one on 1-D grids).
    pub fn coord(&self, i: usize) -> f64 {
        self.coords[i * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    /// Total quadrature mass (the domain volume, or the cardinality of a
    /// finite strategy set).
    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Quadrature integral of a grid function.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// True when all weights are exactly 1 (finite strategy set).
    pub fn is_finite_set(&self) -> bool {
        self.weights.iter().all(|&w| w == 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_weights_sum_to_length() {
        let g = Grid::uniform_1d(101, -1.0, 1.0).unwrap();
        assert!((g.volume() - 2.0).abs() < 1e-12);
        assert_eq!(g.len(), 101);
        assert!((g.coord(0) + 1.0).abs() < 1e-15);
        assert!((g.coord(100) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        // Trapezoid rule is exact on affine integrands.
        let g = Grid::uniform_1d(17, 0.0, 2.0).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|i| 3.0 * g.coord(i) + 1.0).collect();
        // integral of 3x+1 on [0,2] = 6 + 2 = 8
        assert!((g.integrate(&vals) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn finite_set_has_unit_weights() {
        let g = Grid::finite(4).unwrap();
        assert!(g.is_finite_set());
        assert_eq!(g.volume(), 4.0);
    }

    #[test]
    fn product_grid_volume() {
        let g = Grid::product_2d(5, 0.0, 1.0, 9, -1.0, 1.0).unwrap();
        assert_eq!(g.dim(), 2);
        assert_eq!(g.len(), 45);
        assert!((g.volume() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn from_parts_rejects_duplicates_and_bad_weights() {
        let err = Grid::from_parts(1, vec![0.0, 0.0], vec![1.0, 1.0], "dup".into());
        assert!(err.is_err());
        let err = Grid::from_parts(1, vec![0.0, 1.0], vec![1.0, 0.0], "zero w".into());
        assert!(err.is_err());
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(Grid::uniform_1d(1, 0.0, 1.0).is_err());
        assert!(Grid::uniform_1d(4, 1.0, 1.0).is_err());
        assert!(Grid::finite(0).is_err());
    }
}
