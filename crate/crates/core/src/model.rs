//! Nearest-neighbour chain Hamiltonians in standard form `0 ≤ H_i ≤ 1`.

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::linalg::{self, c, kron, LinalgError, ONE, ZERO};
use crate::mps::{Mpo, MpsError};

/// Half chains with at most this Hilbert-space dimension are diagonalized
/// densely; larger ones use Lanczos on the local terms.
pub const DENSE_HALF_LIMIT: usize = 1 << 9;
pub const MAX_PHYS_DIM: usize = 4;
const HERMITIAN_TOL: f64 = 1e-12;
const SPECTRUM_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("term {0} is not Hermitian")]
    NonHermitian(usize),
    #[error("term {index} has shape {shape:?}, expected {d2}x{d2}")]
    TermShape { index: usize, shape: (usize, usize), d2: usize },
    #[error("chain needs at least 2 sites, got {0}")]
    TooShort(usize),
    #[error("physical dimension {0} outside 2..=4")]
    PhysDim(usize),
    #[error("cut {cut} out of range for n = {n}")]
    BadCut { cut: usize, n: usize },
    #[error("missing parameter '{0}'")]
    MissingParam(&'static str),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Mps(#[from] MpsError),
}

pub type ModelResult<T> = Result<T, ModelError>;

/// Model selection as read from a run config.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub n: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct StandardHamiltonian {
    n: usize,
    d: usize,
    terms: Vec<Array2<C64>>,
    mpo: Mpo,
    /// Original energy = `scale · E + shift`.
    pub scale: f64,
    pub shift: f64,
    pub name: String,
}

impl StandardHamiltonian {
    /// Standardizes raw nearest-neighbour terms by a positive affine map.
    /// Terms whose spectra already lie in `[0, 1]` are kept as they are;
    /// otherwise every term is shifted by its own least eigenvalue and all are
    /// divided by the largest resulting spread.
    pub fn standardize(d: usize, raw: &[Array2<C64>]) -> ModelResult<Self> {
        if !(2..=MAX_PHYS_DIM).contains(&d) {
            return Err(ModelError::PhysDim(d));
        }
        if raw.is_empty() {
            return Err(ModelError::TooShort(raw.len() + 1));
        }
        let mut spectra = Vec::with_capacity(raw.len());
        for (i, t) in raw.iter().enumerate() {
            if t.dim() != (d * d, d * d) {
                return Err(ModelError::TermShape { index: i, shape: t.dim(), d2: d * d });
            }
            let scale = linalg::fro_norm(t).max(1.0);
            if !linalg::is_hermitian(t, HERMITIAN_TOL * scale) {
                return Err(ModelError::NonHermitian(i));
            }
            spectra.push(linalg::eigvalsh(t)?);
        }
        let in_unit = spectra.iter().all(|s| s[0] >= -SPECTRUM_TOL && s[s.len() - 1] <= 1.0 + SPECTRUM_TOL);
        let (terms, scale, shift): (Vec<Array2<C64>>, f64, f64) = if in_unit {
            (raw.iter().map(linalg::hermitian_part).collect(), 1.0, 0.0)
        } else {
            let spread = spectra.iter().map(|s| s[s.len() - 1] - s[0]).fold(0.0, f64::max);
            let spread = if spread > 0.0 { spread } else { 1.0 };
            let id = linalg::identity(d * d);
            let terms: Vec<Array2<C64>> = raw
                .iter()
                .zip(&spectra)
                .map(|(t, s)| (linalg::hermitian_part(t) - &id.mapv(|z| z * s[0])).mapv(|z| z / spread))
                .collect();
            (terms, spread, spectra.iter().map(|s| s[0]).sum())
        };
        let n = raw.len() + 1;
        let mpo = chain_mpo(d, n, &terms)?;
        Ok(StandardHamiltonian { n, d, terms, mpo, scale, shift, name: "custom".into() })
    }

    pub fn n(&self) -> usize { self.n }
    pub fn d(&self) -> usize { self.d }
    pub fn terms(&self) -> &[Array2<C64>] { &self.terms }
    pub fn mpo(&self) -> &Mpo { &self.mpo }

    pub fn to_original_units(&self, e: f64) -> f64 { self.scale * e + self.shift }

    /// Dense `Σ H_i` on the full chain.
    pub fn dense(&self) -> Array2<C64> { dense_sum(self.d, self.n, &self.terms_on(0, self.n)) }

    /// Terms acting inside the sites `[lo, hi)` (0-based), re-indexed so that
    /// site `lo` becomes 0.
    pub fn terms_on(&self, lo: usize, hi: usize) -> Vec<(usize, Array2<C64>)> {
        (lo..hi.saturating_sub(1)).map(|k| (k - lo, self.terms[k].clone())).collect()
    }

    /// `H|v⟩` on a dense vector, term by term.
    pub fn apply_dense(&self, v: &Array1<C64>) -> Array1<C64> {
        apply_terms(self.d, self.n, &self.terms_on(0, self.n), v)
    }

    /// `H_{[1,i]}` as an MPO on the first `i` sites; `i = n` gives `H`.
    pub fn left_mpo(&self, i: usize) -> ModelResult<Mpo> {
        if i == 0 || i > self.n {
            return Err(ModelError::BadCut { cut: i, n: self.n });
        }
        half_mpo(self.d, i, &self.terms_on(0, i))
    }

    /// Splits at the cut after site `cut` (1-based count of left sites).
    pub fn partition(&self, cut: usize) -> ModelResult<Partition> {
        if cut == 0 || cut >= self.n {
            return Err(ModelError::BadCut { cut, n: self.n });
        }
        let left = self.terms_on(0, cut);
        let right = self.terms_on(cut, self.n);
        let eps_left = least_eigenvalue(self.d, cut, &left)?;
        let eps_right = least_eigenvalue(self.d, self.n - cut, &right)?;
        let mpo_left = half_mpo(self.d, cut, &left)?;
        let mpo_right = half_mpo(self.d, self.n - cut, &right)?;
        Ok(Partition {
            cut,
            d: self.d,
            n: self.n,
            left,
            middle: self.terms[cut - 1].clone(),
            right,
            eps_left,
            eps_right,
            mpo_left,
            mpo_right,
        })
    }
}

/// `H = H_L + H_i + H_R` at one cut.
#[derive(Clone, Debug)]
pub struct Partition {
    pub cut: usize,
    pub d: usize,
    pub n: usize,
    pub left: Vec<(usize, Array2<C64>)>,
    pub middle: Array2<C64>,
    pub right: Vec<(usize, Array2<C64>)>,
    pub eps_left: f64,
    pub eps_right: f64,
    pub mpo_left: Mpo,
    pub mpo_right: Mpo,
}

impl Partition {
    pub fn left_sites(&self) -> usize { self.cut }
    pub fn right_sites(&self) -> usize { self.n - self.cut }
    pub fn dense_left(&self) -> Array2<C64> { dense_sum(self.d, self.cut, &self.left) }
    pub fn dense_right(&self) -> Array2<C64> { dense_sum(self.d, self.n - self.cut, &self.right) }

    /// `H_L′ = H_L − ε_L`.
    pub fn dense_left_shifted(&self) -> Array2<C64> {
        shift_diag(self.dense_left(), -self.eps_left)
    }

    pub fn dense_right_shifted(&self) -> Array2<C64> {
        shift_diag(self.dense_right(), -self.eps_right)
    }

    /// `H_L + H_i + H_R` assembled from the three parts on the full chain.
    pub fn dense_total(&self) -> Array2<C64> {
        let dl = self.d.pow(self.cut as u32);
        let dr = self.d.pow((self.n - self.cut) as u32);
        let mid_l = self.d.pow(self.cut as u32 - 1);
        let mid_r = self.d.pow((self.n - self.cut - 1) as u32);
        let mut h = kron(&self.dense_left(), &linalg::identity(dr));
        h += &kron(&linalg::identity(dl), &self.dense_right());
        h += &kron(&kron(&linalg::identity(mid_l), &self.middle), &linalg::identity(mid_r));
        h
    }
}

fn shift_diag(mut m: Array2<C64>, by: f64) -> Array2<C64> {
    for z in m.diag_mut() {
        *z += by;
    }
    m
}

fn chain_mpo(d: usize, n: usize, terms: &[Array2<C64>]) -> ModelResult<Mpo> {
    let indexed: Vec<(usize, Array2<C64>)> = terms.iter().cloned().enumerate().collect();
    half_mpo(d, n, &indexed)
}

/// MPO of a sum of nearest-neighbour terms on `n` sites, compressed exactly.
fn half_mpo(d: usize, n: usize, terms: &[(usize, Array2<C64>)]) -> ModelResult<Mpo> {
    if terms.is_empty() {
        return Ok(Mpo::identity(d, n).scaled(ZERO).with_hermitian(true)?);
    }
    let ops: Vec<Mpo> = terms.iter().map(|(k, t)| Mpo::two_site(d, n, *k, t)).collect::<Result<_, _>>()?;
    let sum = Mpo::sum(&ops, &vec![ONE; ops.len()])?;
    let (m, _) = sum.compress(0.0, None)?;
    Ok(m.with_hermitian(true)?)
}

/// Dense `Σ_k (term at sites k, k+1)` on `n` sites.
pub fn dense_sum(d: usize, n: usize, terms: &[(usize, Array2<C64>)]) -> Array2<C64> {
    let dim = d.pow(n as u32);
    let mut h = Array2::zeros((dim, dim));
    for (k, t) in terms {
        let left = linalg::identity(d.pow(*k as u32));
        let right = linalg::identity(d.pow((n - k - 2) as u32));
        h += &kron(&kron(&left, t), &right);
    }
    h
}

/// `Σ_k H_k |v⟩` on a dense vector without forming the matrix.
pub fn apply_terms(d: usize, n: usize, terms: &[(usize, Array2<C64>)], v: &Array1<C64>) -> Array1<C64> {
    let mut out = Array1::zeros(v.len());
    for (k, t) in terms {
        let outer = d.pow(*k as u32);
        let inner = d.pow((n - k - 2) as u32);
        let v3 = v.view().into_shape_with_order((outer, d * d, inner)).expect("reshape");
        let mut o3 = out.view_mut().into_shape_with_order((outer, d * d, inner)).expect("reshape");
        for a in 0..outer {
            let block = v3.index_axis(Axis(0), a);
            let res = t.dot(&block);
            let mut dst = o3.index_axis_mut(Axis(0), a);
            dst += &res;
        }
    }
    out
}

/// Least eigenvalue of a sum of local terms on `n` sites.
pub fn least_eigenvalue(d: usize, n: usize, terms: &[(usize, Array2<C64>)]) -> ModelResult<f64> {
    if terms.is_empty() {
        return Ok(0.0);
    }
    let dim = d.pow(n as u32);
    if dim <= DENSE_HALF_LIMIT {
        return Ok(linalg::eigvalsh(&dense_sum(d, n, terms))?[0]);
    }
    Ok(lanczos_min(dim, |v| apply_terms(d, n, terms, v), 1e-11)?)
}

/// Smallest eigenvalue by Lanczos with full reorthogonalization.
pub fn lanczos_min(dim: usize, apply: impl Fn(&Array1<C64>) -> Array1<C64>, tol: f64) -> Result<f64, LinalgError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut basis: Vec<Array1<C64>> = vec![linalg::random_vector(&mut rng, dim)];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut last = f64::INFINITY;
    let max_iter = dim.min(400);
    for it in 0..max_iter {
        let q = &basis[it];
        let mut w = apply(q);
        let a = linalg::inner(q.view(), w.view()).re;
        alpha.push(a);
        for b in &basis {
            let p = linalg::inner(b.view(), w.view());
            w.scaled_add(-p, b);
        }
        let nb = linalg::norm(w.view());
        let k = alpha.len();
        let mut t = Array2::<C64>::zeros((k, k));
        for i in 0..k {
            t[[i, i]] = c(alpha[i], 0.0);
            if i + 1 < k {
                t[[i, i + 1]] = c(beta[i], 0.0);
                t[[i + 1, i]] = c(beta[i], 0.0);
            }
        }
        let theta = linalg::eigvalsh(&t)?[0];
        if (theta - last).abs() < tol || nb < 1e-12 {
            return Ok(theta);
        }
        last = theta;
        beta.push(nb);
        basis.push(w.mapv(|z| z / nb));
    }
    Ok(last)
}

fn pauli() -> [Array2<C64>; 4] {
    let i = linalg::identity(2);
    let x = Array2::from_shape_vec((2, 2), vec![ZERO, ONE, ONE, ZERO]).unwrap();
    let y = Array2::from_shape_vec((2, 2), vec![ZERO, c(0.0, -1.0), c(0.0, 1.0), ZERO]).unwrap();
    let z = Array2::from_shape_vec((2, 2), vec![ONE, ZERO, ZERO, -ONE]).unwrap();
    [i, x, y, z]
}

fn param(spec: &ModelSpec, key: &'static str, default: Option<f64>) -> ModelResult<f64> {
    spec.params.get(key).copied().or(default).ok_or(ModelError::MissingParam(key))
}

/// Builds a catalog model: `ising`, `tfim` (field `h`), `heisenberg`
/// (coupling `j`), `random_ising` (perturbation `strength`, seeded).
pub fn make_model(spec: &ModelSpec) -> ModelResult<StandardHamiltonian> {
    let n = spec.n;
    if n < 2 {
        return Err(ModelError::TooShort(n));
    }
    let [id, x, y, z] = pauli();
    let zz = kron(&z, &z);
    let raw: Vec<Array2<C64>> = match spec.name.as_str() {
        "ising" => (0..n - 1).map(|_| zz.mapv(|v| -v)).collect(),
        "tfim" => {
            let h = param(spec, "h", None)?;
            let xi = kron(&x, &id);
            let ix = kron(&id, &x);
            (0..n - 1)
                .map(|k| {
                    // each site's field is split between the terms that touch it
                    let cl = if k == 0 { 1.0 } else { 0.5 };
                    let cr = if k + 2 == n { 1.0 } else { 0.5 };
                    -&zz - &xi.mapv(|v| v * h * cl) - &ix.mapv(|v| v * h * cr)
                })
                .collect()
        }
        "heisenberg" => {
            let j = param(spec, "j", Some(1.0))?;
            let t = (kron(&x, &x) + kron(&y, &y) + &zz).mapv(|v| v * j);
            vec![t; n - 1]
        }
        "random_ising" => {
            let strength = param(spec, "strength", Some(0.05))?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(0));
            (0..n - 1)
                .map(|_| {
                    let r = linalg::random_hermitian(&mut rng, 4);
                    let nr = linalg::op_norm(&r).unwrap_or(1.0);
                    -&zz + &r.mapv(|v| v * strength / nr)
                })
                .collect()
        }
        other => return Err(ModelError::UnknownModel(other.to_string())),
    };
    let mut h = StandardHamiltonian::standardize(2, &raw)?;
    h.name = spec.name.clone();
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use rand::SeedableRng;

    fn spec(name: &str, n: usize, params: &[(&str, f64)]) -> ModelSpec {
        ModelSpec {
            name: name.into(),
            n,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            seed: Some(7),
        }
    }

    #[test]
    fn standardize_two_point_spectrum() {
        let [_, _, _, z] = pauli();
        let zz = kron(&z, &z);
        let h = StandardHamiltonian::standardize(2, &[zz.clone()]).unwrap();
        let want = (linalg::identity(4) + &zz).mapv(|v| v * 0.5);
        assert!(max_abs_diff(h.terms()[0].view(), want.view()) < 1e-12);
        let h = StandardHamiltonian::standardize(2, &[zz.mapv(|v| -v)]).unwrap();
        let want = (linalg::identity(4) - &zz).mapv(|v| v * 0.5);
        assert!(max_abs_diff(h.terms()[0].view(), want.view()) < 1e-12);
        assert_eq!((h.scale, h.shift), (2.0, -1.0));
        let unit = StandardHamiltonian::standardize(2, &[want.clone()]).unwrap();
        assert_eq!((unit.scale, unit.shift), (1.0, 0.0));
        assert!(max_abs_diff(unit.terms()[0].view(), want.view()) < 1e-15);
    }

    #[test]
    fn standardize_random_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw: Vec<_> = (0..5).map(|_| linalg::random_hermitian(&mut rng, 4)).collect();
        let h = StandardHamiltonian::standardize(2, &raw).unwrap();
        for t in h.terms() {
            let e = linalg::eigvalsh(t).unwrap();
            assert!(e[0] >= -1e-10 && e[3] <= 1.0 + 1e-10);
        }
        let raw_dense = dense_sum(2, 6, &raw.iter().cloned().enumerate().collect::<Vec<_>>());
        let e_raw = linalg::eigvalsh(&raw_dense).unwrap()[0];
        let e_std = linalg::eigvalsh(&h.dense()).unwrap()[0];
        assert!((h.to_original_units(e_std) - e_raw).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = linalg::random_matrix(&mut rng, 4, 4);
        assert!(matches!(StandardHamiltonian::standardize(2, &[m]), Err(ModelError::NonHermitian(0))));
        assert!(matches!(make_model(&spec("potts", 4, &[])), Err(ModelError::UnknownModel(_))));
        assert!(matches!(make_model(&spec("tfim", 4, &[])), Err(ModelError::MissingParam("h"))));
    }

    #[test]
    fn mpo_matches_dense_sum() {
        for h in [
            make_model(&spec("ising", 5, &[])).unwrap(),
            make_model(&spec("tfim", 6, &[("h", 0.4)])).unwrap(),
            make_model(&spec("heisenberg", 4, &[])).unwrap(),
            make_model(&spec("random_ising", 5, &[])).unwrap(),
        ] {
            assert!(max_abs_diff(h.mpo().to_dense().view(), h.dense().view()) < 1e-10);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let v = linalg::random_vector(&mut rng, h.dense().nrows());
            let hv = h.dense().dot(&v);
            assert!((&hv - &h.apply_dense(&v)).iter().all(|z| z.norm() < 1e-12));
        }
    }

    #[test]
    fn tfim_at_zero_field_is_ising() {
        let a = make_model(&spec("tfim", 5, &[("h", 0.0)])).unwrap();
        let b = make_model(&spec("ising", 5, &[])).unwrap();
        assert!(max_abs_diff(a.dense().view(), b.dense().view()) < 1e-14);
    }

    #[test]
    fn random_model_is_reproducible() {
        let a = make_model(&spec("random_ising", 5, &[])).unwrap();
        let b = make_model(&spec("random_ising", 5, &[])).unwrap();
        assert_eq!(a.dense(), b.dense());
    }

    #[test]
    fn partition_identity_and_shifts() {
        let h = make_model(&spec("random_ising", 8, &[])).unwrap();
        for cut in 1..8 {
            let p = h.partition(cut).unwrap();
            assert!(max_abs_diff(p.dense_total().view(), h.dense().view()) < 1e-12);
            assert!(linalg::eigvalsh(&p.dense_left_shifted()).unwrap()[0] >= -1e-10);
            assert!(linalg::eigvalsh(&p.dense_right_shifted()).unwrap()[0] >= -1e-10);
            assert!(max_abs_diff(p.mpo_left.to_dense().view(), p.dense_left().view()) < 1e-10);
        }
        let p = h.partition(1).unwrap();
        assert_eq!(p.eps_left, 0.0);
        assert!(p.dense_left().iter().all(|z| *z == ZERO));
        let p = h.partition(4).unwrap();
        let want = linalg::eigvalsh(&p.dense_left()).unwrap()[0];
        assert!((p.eps_left - want).abs() < 1e-9);
        let ising = make_model(&spec("ising", 6, &[])).unwrap();
        for cut in 1..6 {
            let p = ising.partition(cut).unwrap();
            assert!(p.eps_left.abs() < 1e-12 && p.eps_right.abs() < 1e-12);
        }
        assert!(matches!(h.partition(8), Err(ModelError::BadCut { .. })));
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let h = make_model(&spec("tfim", 10, &[("h", 0.7)])).unwrap();
        let terms = h.terms_on(0, 10);
        let l = least_eigenvalue(2, 10, &terms).unwrap();
        let dense = linalg::eigvalsh(&h.dense()).unwrap()[0];
        assert!((l - dense).abs() < 1e-9, "{l} vs {dense}");
    }
}
