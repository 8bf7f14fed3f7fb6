//! Dense exact diagonalization used as ground truth at small sizes.

use ndarray::{s, Array1, Array2};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::linalg::{self, dagger, LinalgError};
use crate::model::{Partition, StandardHamiltonian};
use crate::mps::Mps;

pub const MAX_ORACLE_DIM: usize = 1 << 14;
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("Hilbert space dimension {0} exceeds the oracle limit {MAX_ORACLE_DIM}")]
    TooLarge(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("threshold must be nonnegative, got {0}")]
    NegativeThreshold(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type OracleResult<T> = Result<T, OracleError>;

#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Array1<f64>,
    /// Orthonormal columns, ascending energy.
    pub eigenvectors: Array2<C64>,
    pub eps0: f64,
    pub eps1: f64,
    pub gap: f64,
    pub g: usize,
}

/// Exportable summary of a spectrum.
#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSummary {
    pub dim: usize,
    pub eps0: f64,
    pub eps1: f64,
    pub gap: f64,
    pub g: usize,
    pub eigenvalues: Vec<f64>,
}

/// Deterministic generic diagonal perturbation used to fix a basis inside
/// degenerate eigenspaces.
fn gauge_potential(dim: usize) -> Array1<f64> {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    Array1::from_iter((0..dim).map(|x| ((x as f64 + 1.0) * phi).fract() - 0.5))
}

pub fn diagonalize(h: &StandardHamiltonian, degeneracy_tol: f64) -> OracleResult<Spectrum> {
    let dim = h.d().pow(h.n() as u32);
    if dim > MAX_ORACLE_DIM {
        return Err(OracleError::TooLarge(dim));
    }
    diagonalize_dense(&h.dense(), degeneracy_tol)
}

pub fn diagonalize_dense(h: &Array2<C64>, degeneracy_tol: f64) -> OracleResult<Spectrum> {
    let dim = h.nrows();
    if dim > MAX_ORACLE_DIM {
        return Err(OracleError::TooLarge(dim));
    }
    let (w, mut v) = linalg::eigh(h)?;
    let pot = gauge_potential(dim);
    let mut start = 0;
    while start < dim {
        let mut end = start + 1;
        while end < dim && w[end] - w[start] <= degeneracy_tol {
            end += 1;
        }
        if end - start > 1 {
            let block = v.slice(s![.., start..end]).to_owned();
            let mut pb = block.clone();
            for (r, mut row) in pb.rows_mut().into_iter().enumerate() {
                row.mapv_inplace(|z| z * pot[r]);
            }
            let (_, rot) = linalg::eigh(&dagger(&block).dot(&pb))?;
            v.slice_mut(s![.., start..end]).assign(&block.dot(&rot));
        }
        start = end;
    }
    for mut col in v.columns_mut() {
        let mut c = col.to_owned();
        linalg::fix_phase(&mut c);
        col.assign(&c);
    }
    let eps0 = w[0];
    let g = w.iter().take_while(|&&e| e - eps0 <= degeneracy_tol).count();
    let eps1 = if g < dim { w[g] } else { f64::INFINITY };
    Ok(Spectrum { eps0, eps1, gap: eps1 - eps0, g, eigenvalues: w, eigenvectors: v })
}

impl Spectrum {
    pub fn dim(&self) -> usize { self.eigenvalues.len() }

    pub fn ground_vectors(&self) -> Array2<C64> { self.eigenvectors.slice(s![.., ..self.g]).to_owned() }

    /// Dense ground-space projector `G`.
    pub fn ground_projector(&self) -> Array2<C64> { linalg::projector(&self.ground_vectors()) }

    /// Orthonormal basis of eigenvectors with energy `≤ ε₀ + delta`.
    pub fn low_energy_vectors(&self, delta: f64) -> Array2<C64> {
        let k = self.eigenvalues.iter().take_while(|&&e| e <= self.eps0 + delta).count();
        self.eigenvectors.slice(s![.., ..k]).to_owned()
    }

    pub fn summary(&self) -> SpectrumSummary {
        SpectrumSummary {
            dim: self.dim(),
            eps0: self.eps0,
            eps1: self.eps1,
            gap: self.gap,
            g: self.g,
            eigenvalues: self.eigenvalues.to_vec(),
        }
    }

    /// `‖G v‖ / ‖v‖` for a dense vector.
    pub fn ground_overlap_dense(&self, v: &Array1<C64>) -> OracleResult<f64> {
        if v.len() != self.dim() {
            return Err(OracleError::Dimension(v.len(), self.dim()));
        }
        let nv = linalg::norm(v.view());
        let coeffs = dagger(&self.ground_vectors()).dot(v);
        Ok((linalg::norm(coeffs.view()) / nv).min(1.0))
    }

    /// `‖G|v⟩‖` for a state given as an MPS.
    pub fn ground_overlap(&self, state: &Mps) -> OracleResult<f64> {
        self.ground_overlap_dense(&state.to_dense())
    }
}

/// `(P_t, Q_t)` at a cut: `P_t` projects onto `H_R′ ≤ t` on the right half
/// (identity on the left), `Q_t` onto `H_L′ + H_R′ ≤ t`.
pub fn truncated_projectors(p: &Partition, t: f64) -> OracleResult<(Array2<C64>, Array2<C64>)> {
    if t < 0.0 {
        return Err(OracleError::NegativeThreshold(t));
    }
    let (wl, vl) = linalg::eigh(&p.dense_left_shifted())?;
    let (wr, vr) = linalg::eigh(&p.dense_right_shifted())?;
    let dl = wl.len();
    let dr = wr.len();
    let keep_r: Vec<usize> = (0..dr).filter(|&j| wr[j] <= t).collect();
    let mut right = Array2::zeros((dr, keep_r.len()));
    for (c, &j) in keep_r.iter().enumerate() {
        right.column_mut(c).assign(&vr.column(j));
    }
    let pt = linalg::kron(&linalg::identity(dl), &linalg::projector(&right));
    let mut cols = Vec::new();
    for i in 0..dl {
        for j in 0..dr {
            if wl[i] + wr[j] <= t {
                cols.push(linalg::kron_vec(&vl.column(i).to_owned(), &vr.column(j).to_owned()));
            }
        }
    }
    let q = linalg::stack_columns(dl * dr, &cols);
    Ok((pt, linalg::projector(&q)))
}

/// `(‖G − Υ‖_F, ‖G − Υ‖_1)`.
pub fn projector_distance(g: &Array2<C64>, upsilon: &Array2<C64>) -> OracleResult<(f64, f64)> {
    if g.dim() != upsilon.dim() {
        return Err(OracleError::Dimension(g.nrows(), upsilon.nrows()));
    }
    let diff = g - upsilon;
    Ok((linalg::fro_norm(&diff), linalg::trace_norm(&diff)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, ONE};
    use crate::model::{make_model, ModelSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(name: &str, n: usize, params: &[(&str, f64)]) -> StandardHamiltonian {
        make_model(&ModelSpec {
            name: name.into(),
            n,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            seed: Some(3),
        })
        .unwrap()
    }

    #[test]
    fn ising_counts() {
        let sp = diagonalize(&model("ising", 4, &[]), DEFAULT_DEGENERACY_TOL).unwrap();
        assert!(sp.eps0.abs() < 1e-12);
        assert!((sp.gap - 1.0).abs() < 1e-12);
        assert_eq!(sp.g, 2);
        let g = sp.ground_projector();
        assert!(max_abs_diff(g.dot(&g).view(), g.view()) < 1e-10);
        // gauge fixing picks the two product states
        let gv = sp.ground_vectors();
        for j in 0..2 {
            let big = gv.column(j).iter().filter(|z| z.norm() > 1e-8).count();
            assert_eq!(big, 1);
        }
    }

    #[test]
    fn single_term() {
        let sp = diagonalize(&model("ising", 2, &[]), DEFAULT_DEGENERACY_TOL).unwrap();
        let want = [0.0, 0.0, 1.0, 1.0];
        for (a, b) in sp.eigenvalues.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tfim_against_independent_assembly() {
        let h = model("tfim", 6, &[("h", 0.3)]);
        let sp = diagonalize(&h, DEFAULT_DEGENERACY_TOL).unwrap();
        // raw Hamiltonian assembled from site operators, then mapped to standard units
        let x = Array2::from_shape_vec((2, 2), vec![C64::new(0.0, 0.0), ONE, ONE, C64::new(0.0, 0.0)]).unwrap();
        let z = Array2::from_shape_vec((2, 2), vec![ONE, C64::new(0.0, 0.0), C64::new(0.0, 0.0), -ONE]).unwrap();
        let id2 = linalg::identity(2);
        let site = |op: &Array2<C64>, k: usize| {
            let mut m = linalg::identity(1);
            for j in 0..6 {
                m = linalg::kron(&m, if j == k { op } else { &id2 });
            }
            m
        };
        let mut raw = Array2::zeros((64, 64));
        for k in 0..5 {
            raw -= &site(&z, k).dot(&site(&z, k + 1));
        }
        for k in 0..6 {
            raw -= &site(&x, k).mapv(|v| v * 0.3);
        }
        let e = linalg::eigvalsh(&raw).unwrap();
        for (a, b) in sp.eigenvalues.iter().zip(e.iter()) {
            assert!((h.to_original_units(*a) - b).abs() < 1e-10);
        }
        let res = h.dense().dot(&sp.eigenvectors) - &{
            let mut vw = sp.eigenvectors.clone();
            for (j, mut c) in vw.columns_mut().into_iter().enumerate() {
                c.mapv_inplace(|z| z * sp.eigenvalues[j]);
            }
            vw
        };
        assert!(res.iter().all(|z| z.norm() < 1e-9));
    }

    #[test]
    fn ground_overlaps() {
        let sp = diagonalize(&model("tfim", 5, &[("h", 0.5)]), DEFAULT_DEGENERACY_TOL).unwrap();
        let e0 = sp.eigenvectors.column(0).to_owned();
        let e5 = sp.eigenvectors.column(5).to_owned();
        assert!((sp.ground_overlap_dense(&e0).unwrap() - 1.0).abs() < 1e-12);
        assert!(sp.ground_overlap_dense(&e5).unwrap() < 1e-12);
        let (a, b) = (0.6, 0.8);
        let mix = e0.mapv(|z| z * a) + e5.mapv(|z| z * b);
        assert!((sp.ground_overlap_dense(&mix).unwrap() - a).abs() < 1e-12);
        let m = Mps::from_dense(2, 5, &mix).unwrap();
        assert!((sp.ground_overlap(&m).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn truncated_projector_order() {
        let h = model("random_ising", 6, &[]);
        let p = h.partition(3).unwrap();
        let (pt, qt) = truncated_projectors(&p, 0.5).unwrap();
        assert!(linalg::eigvalsh(&(&pt - &qt)).unwrap()[0] >= -1e-10);
        let big = linalg::op_norm(&(p.dense_left_shifted())).unwrap() + linalg::op_norm(&p.dense_right_shifted()).unwrap();
        let (pt, qt) = truncated_projectors(&p, big + 1.0).unwrap();
        assert!(max_abs_diff(pt.view(), linalg::identity(64).view()) < 1e-10);
        assert!(max_abs_diff(qt.view(), linalg::identity(64).view()) < 1e-10);
        let ising = model("ising", 4, &[]).partition(2).unwrap();
        let (_, q0) = truncated_projectors(&ising, 0.0).unwrap();
        let l = linalg::eigh(&ising.dense_left_shifted()).unwrap();
        let lg = l.1.slice(s![.., ..2]).to_owned();
        let want = linalg::kron(&linalg::projector(&lg), &linalg::projector(&lg));
        assert!(max_abs_diff(q0.view(), want.view()) < 1e-10);
        assert!(matches!(truncated_projectors(&ising, -1.0), Err(OracleError::NegativeThreshold(_))));
    }

    #[test]
    fn distance_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = linalg::random_isometry(&mut rng, 8, 2);
        let g = linalg::projector(&a);
        assert_eq!(projector_distance(&g, &g).unwrap().0, 0.0);
        let full = linalg::random_isometry(&mut rng, 8, 4);
        let g1 = linalg::projector(&full.slice(s![.., ..2]).to_owned());
        let g2 = linalg::projector(&full.slice(s![.., 2..]).to_owned());
        assert!((projector_distance(&g1, &g2).unwrap().0 - 2.0).abs() < 1e-12);
        let b = linalg::random_isometry(&mut rng, 8, 2);
        let u = linalg::projector(&b);
        let f = projector_distance(&g, &u).unwrap().0;
        let tr = linalg::trace(&g.dot(&u)).re;
        assert!((f * f - (4.0 - 2.0 * tr)).abs() < 1e-10);
    }
}
