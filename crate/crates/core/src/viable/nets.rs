//! The energy net `M_η` and the boundary contraction net `N_ξ`.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::{ViableError, ViableResult};

/// `{−1, −1+η, …, 1+η}`; when `2/η` is not an integer the grid runs on
/// until it reaches `1+η`.
pub fn energy_net(eta: f64) -> ViableResult<Vec<f64>> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(ViableError::BadParameter(format!("energy net spacing must be positive, got {eta}")));
    }
    let top = ((2.0 + eta) / eta - 1e-9).ceil() as usize;
    Ok((0..=top).map(|k| -1.0 + k as f64 * eta).collect())
}

/// Smallest net point `y ≥ x`. The flag is set when `x` lies outside
/// `[−1−η, 1+η]` and had to be clamped.
pub fn round_up(x: f64, eta: f64) -> ViableResult<(f64, bool)> {
    let net = energy_net(eta)?;
    let top = *net.last().expect("nonempty net");
    if x > top + 1e-12 {
        return Ok((top, true));
    }
    let y = net.iter().cloned().find(|&y| y >= x - 1e-12).unwrap_or(top);
    Ok((y, x < -1.0 - eta - 1e-12))
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum NetMode {
    Exhaustive,
    #[default]
    Candidates,
}

/// Where a net point came from.
#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Exhaustive,
    /// Best oracle witness in the current span, truncated to bond `B`.
    Witness,
    /// Least-energy oracle state in the current span.
    OracleEnergy,
    Member,
    Random,
}

#[derive(Clone, Debug)]
pub struct NetPoint {
    pub y: f64,
    pub x: Array2<C64>,
    pub provenance: Provenance,
    /// `Y` was clamped into the net range.
    pub clamped: bool,
}

/// Grid values `{−1, −1+s, …, 1}` with `s = (ξ/2)/(Bd)²`, the spacing of
/// `N_{ξ/2}`.
pub fn contraction_grid(xi: f64, d: usize, bond: usize) -> ViableResult<Vec<f64>> {
    if !(xi > 0.0) {
        return Err(ViableError::BadParameter(format!("net radius must be positive, got {xi}")));
    }
    let db = (d * bond) as f64;
    let spacing = (xi / 2.0) / (db * db);
    let steps = (2.0 / spacing - 1e-9).ceil() as usize;
    Ok((0..=steps).map(|k| (-1.0 + k as f64 * spacing).min(1.0)).collect())
}

/// The cardinality bound `(2⌈Bd/ξ⌉+1)^{4Bd}` used to gate enumeration.
pub fn cardinality_bound(xi: f64, d: usize, bond: usize) -> f64 {
    let db = (d * bond) as f64;
    (2.0 * (db / xi).ceil() + 1.0).powf(4.0 * db)
}

/// Full enumeration of `N_{ξ/2}` on `C^d ⊗ C^B`, in odometer order over
/// (real, imaginary) parts of the row-major entries.
#[derive(Clone, Debug)]
pub struct ExhaustiveNet {
    dim: usize,
    grid: Vec<f64>,
    idx: Vec<usize>,
    done: bool,
}

impl ExhaustiveNet {
    pub fn new(xi: f64, d: usize, bond: usize, cap: u64) -> ViableResult<Self> {
        let grid = contraction_grid(xi, d, bond)?;
        let dim = d * bond;
        let coords = 2 * dim * dim;
        let actual = (grid.len() as f64).powi(coords as i32);
        let bound = cardinality_bound(xi, d, bond);
        if bound > cap as f64 || actual > cap as f64 {
            return Err(ViableError::NetTooLarge { bound, actual, cap });
        }
        Ok(ExhaustiveNet { dim, grid, idx: vec![0; coords], done: false })
    }

    pub fn len(&self) -> usize { self.grid.len().pow(self.idx.len() as u32) }
    pub fn is_empty(&self) -> bool { false }

    /// Net point nearest to `m`, entrywise.
    pub fn nearest(&self, m: &Array2<C64>) -> Array2<C64> {
        let snap = |v: f64| {
            *self
                .grid
                .iter()
                .min_by(|a, b| (*a - v).abs().partial_cmp(&(*b - v).abs()).expect("finite"))
                .expect("nonempty grid")
        };
        m.mapv(|z| C64::new(snap(z.re), snap(z.im)))
    }
}

impl Iterator for ExhaustiveNet {
    type Item = Array2<C64>;

    fn next(&mut self) -> Option<Array2<C64>> {
        if self.done {
            return None;
        }
        let n = self.dim;
        let mut x = Array2::zeros((n, n));
        for r in 0..n {
            for c in 0..n {
                let k = 2 * (r * n + c);
                x[[r, c]] = C64::new(self.grid[self.idx[k]], self.grid[self.idx[k + 1]]);
            }
        }
        let mut pos = self.idx.len();
        loop {
            if pos == 0 {
                self.done = true;
                break;
            }
            pos -= 1;
            self.idx[pos] += 1;
            if self.idx[pos] < self.grid.len() {
                break;
            }
            self.idx[pos] = 0;
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{self, random_density};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn energy_net_points() {
        assert_eq!(energy_net(1.0).unwrap(), vec![-1.0, 0.0, 1.0, 2.0]);
        assert_eq!(energy_net(0.5).unwrap(), vec![-1.0, -0.5, 0.0, 0.5, 1.0, 1.5]);
        assert!(energy_net(0.0).is_err());
        assert!(energy_net(-1.0).is_err());
    }

    #[test]
    fn energy_net_one_sided_grid_sweep() {
        for &eta in &[1.0, 0.5, 0.3, 0.07] {
            for k in 0..=10_000 {
                let x = -1.0 - eta + (2.0 + 2.0 * eta) * k as f64 / 10_000.0;
                let (y, clamped) = round_up(x, eta).unwrap();
                assert!(!clamped);
                assert!(y - x >= -1e-12 && y - x <= eta + 1e-12, "eta {eta} x {x} y {y}");
            }
        }
        assert!(round_up(5.0, 0.5).unwrap().1);
    }

    #[test]
    fn single_entry_net() {
        let net = ExhaustiveNet::new(2.0, 1, 1, 1000).unwrap();
        assert_eq!(net.len(), 9);
        let pts: Vec<Array2<C64>> = net.collect();
        assert_eq!(pts.len(), 9);
        let vals = [-1.0, 0.0, 1.0];
        for re in vals {
            for im in vals {
                assert!(pts.iter().any(|p| p[[0, 0]] == C64::new(re, im)));
            }
        }
        assert!(pts.iter().any(|p| p[[0, 0]] == C64::new(0.0, 0.0)));
    }

    #[test]
    fn exhaustive_net_is_capped() {
        assert!(matches!(ExhaustiveNet::new(1e-3, 2, 2, 1_000_000), Err(ViableError::NetTooLarge { .. })));
    }

    #[test]
    fn covering_property_small_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for &(d, b, xi) in &[(1usize, 1usize, 0.5), (2, 1, 1.0), (1, 2, 1.0)] {
            let net = ExhaustiveNet::new(xi, d, b, u64::MAX).unwrap();
            for _ in 0..200 {
                let n = d * b;
                let rho = random_density(&mut rng, n, n);
                let x = net.nearest(&rho);
                let dist = linalg::trace_norm(&(&rho - &x)).unwrap();
                assert!(dist <= xi / 2.0, "d {d} b {b}: {dist}");
            }
        }
    }

    proptest! {
        #[test]
        fn round_up_lands_on_net(x in -1.5f64..1.5, eta in 0.05f64..1.0) {
            let (y, _) = round_up(x, eta).unwrap();
            let net = energy_net(eta).unwrap();
            prop_assert!(net.iter().any(|&p| p == y));
        }
    }
}
