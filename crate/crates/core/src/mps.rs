//! Matrix product states and operators.
//!
//! Site tensors of an [`Mps`] are stored as `(left bond, physical, right bond)`
//! and those of an [`Mpo`] as `(left bond, out, in, right bond)`. Dense vectors
//! use the convention that site 1 is the most significant digit, so the dense
//! form of a concatenation is the Kronecker product of the dense parts.

use ndarray::{s, Array1, Array2, Array3, Array4, Axis};
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::Serialize;
use std::cmp::Ordering;

use crate::linalg::{self, dagger, kron, qr_positive, svd, LinalgError, ONE, ZERO, ZERO_SV};

/// Largest dense dimension for which the Schmidt tie-break and phase
/// convention are computed from dense coefficients.
pub const DENSE_CONVENTION_LIMIT: usize = 1 << 20;
/// Largest dense dimension for which exact rank reduction goes through the
/// dense vector instead of canonical sweeps.
const DENSE_COMPACT_LIMIT: usize = 1 << 12;
/// Norm below which a state counts as the zero vector.
pub const ZERO_NORM: f64 = 1e-13;

#[derive(Debug, thiserror::Error)]
pub enum MpsError {
    /// The state has (numerically) zero norm.
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cut {cut} out of range for a chain of length {len}")]
    BadCut { cut: usize, len: usize },
    #[error("bond dimension must be positive")]
    BadBond,
    #[error("operator is not flagged Hermitian")]
    NotHermitian,
    /// An expectation value that should be real came out complex.
    #[error("expectation value has imaginary part {0:e}")]
    ComplexResult(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type MpsResult<T> = Result<T, MpsError>;

fn reshape2(t: &Array3<C64>, rows: usize, cols: usize) -> Array2<C64> {
    t.as_standard_layout().into_owned().into_shape_with_order((rows, cols)).expect("reshape")
}

fn reshape3(m: Array2<C64>, a: usize, b: usize, c: usize) -> Array3<C64> {
    m.as_standard_layout().into_owned().into_shape_with_order((a, b, c)).expect("reshape")
}

/// Left-to-right contraction of site tensors into a dense `(p^k, D)` block.
fn left_block(tensors: &[Array3<C64>]) -> Array2<C64> {
    let mut block = Array2::from_elem((1, 1), ONE);
    for t in tensors {
        let (dl, p, dr) = t.dim();
        let rows = block.nrows();
        let m = block.dot(&reshape2(t, dl, p * dr));
        block = m.into_shape_with_order((rows * p, dr)).expect("reshape");
    }
    block
}

#[derive(Clone, Debug)]
pub struct Mps {
    tensors: Vec<Array3<C64>>,
    d: usize,
    canonical_center: Option<usize>,
    norm_cache: Option<f64>,
}

/// Schmidt decomposition of a state across the cut after site `cut`.
#[derive(Clone, Debug)]
pub struct SchmidtData {
    pub cut: usize,
    /// Nonincreasing, squares sum to one.
    pub coefficients: Vec<f64>,
    pub left_vectors: Vec<Mps>,
    pub right_vectors: Vec<Mps>,
    /// Set when the input was not normalized and had to be rescaled.
    pub renormalized: bool,
}

/// Result of [`linear_combine`].
#[derive(Clone, Debug)]
pub struct Combination {
    pub state: Mps,
    pub norm: f64,
    /// The combination cancelled to numerical zero.
    pub zero_norm: bool,
}

impl Mps {
    pub fn from_tensors(d: usize, tensors: Vec<Array3<C64>>) -> MpsResult<Self> {
        for (k, t) in tensors.iter().enumerate() {
            if t.dim().1 != d {
                return Err(MpsError::Shape(format!("site {k} has physical dim {} != {d}", t.dim().1)));
            }
            if k + 1 < tensors.len() && t.dim().2 != tensors[k + 1].dim().0 {
                return Err(MpsError::Shape(format!("bond mismatch between sites {k} and {}", k + 1)));
            }
        }
        if let (Some(f), Some(l)) = (tensors.first(), tensors.last()) {
            if f.dim().0 != 1 || l.dim().2 != 1 {
                return Err(MpsError::Shape("boundary bonds must be 1".into()));
            }
        }
        Ok(Mps { tensors, d, canonical_center: None, norm_cache: None })
    }

    fn raw(d: usize, tensors: Vec<Array3<C64>>) -> Self {
        Mps { tensors, d, canonical_center: None, norm_cache: None }
    }

    /// The empty chain, whose single amplitude is 1.
    pub fn unit(d: usize) -> Self { Mps::raw(d, Vec::new()) }

    pub fn product(d: usize, digits: &[usize]) -> Self {
        let tensors = digits
            .iter()
            .map(|&k| {
                let mut t = Array3::zeros((1, d, 1));
                t[[0, k, 0]] = ONE;
                t
            })
            .collect();
        Mps { tensors, d, canonical_center: None, norm_cache: Some(1.0) }
    }

    /// Random state with bond dimension capped at `bond`, normalized.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, n: usize, bond: usize) -> Self {
        let bonds = capped_bonds(d, n, bond);
        let tensors = (0..n)
            .map(|k| {
                let m = linalg::random_matrix(rng, bonds[k] * d, bonds[k + 1]);
                reshape3(m, bonds[k], d, bonds[k + 1])
            })
            .collect();
        Mps::raw(d, tensors).normalized().expect("random state is nonzero")
    }

    /// Exact MPS of a dense vector by sequential SVD, dropping numerically
    /// zero singular values.
    pub fn from_dense(d: usize, n: usize, v: &Array1<C64>) -> MpsResult<Self> {
        if v.len() != d.pow(n as u32) {
            return Err(MpsError::Shape(format!("vector of length {} is not {d}^{n}", v.len())));
        }
        if n == 0 {
            let mut m = Mps::unit(d);
            m.norm_cache = Some(v[0].norm());
            return Ok(m);
        }
        let mut tensors = Vec::with_capacity(n);
        let mut rest = v.clone().into_shape_with_order((1, v.len())).expect("reshape");
        let mut bond = 1;
        for k in 0..n - 1 {
            let cols = rest.len() / (bond * d);
            let m = rest.into_shape_with_order((bond * d, cols)).expect("reshape");
            let (u, sv, vt) = svd(&m)?;
            let r = linalg::numerical_rank(&sv).max(1);
            tensors.push(reshape3(u.slice(s![.., ..r]).to_owned(), bond, d, r));
            let mut next = vt.slice(s![..r, ..]).to_owned();
            for (j, mut row) in next.axis_iter_mut(Axis(0)).enumerate() {
                row.mapv_inplace(|z| z * sv[j]);
            }
            rest = next;
            bond = r;
            let _ = k;
        }
        tensors.push(reshape3(rest, bond, d, 1));
        Ok(Mps::raw(d, tensors))
    }

    pub fn len(&self) -> usize { self.tensors.len() }
    pub fn is_empty(&self) -> bool { self.tensors.is_empty() }
    pub fn phys_dim(&self) -> usize { self.d }
    pub fn tensors(&self) -> &[Array3<C64>] { &self.tensors }
    pub fn canonical_center(&self) -> Option<usize> { self.canonical_center }

    /// Bond dimensions of the `n − 1` internal cuts.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors.iter().skip(1).map(|t| t.dim().0).collect()
    }

    pub fn max_bond(&self) -> usize { self.bond_dims().into_iter().max().unwrap_or(1) }

    pub fn to_dense(&self) -> Array1<C64> {
        let b = left_block(&self.tensors);
        let n = b.nrows();
        b.into_shape_with_order(n).expect("reshape")
    }

    pub fn norm(&self) -> f64 {
        if let Some(n) = self.norm_cache {
            return n;
        }
        overlap(self, self).map(|z| z.re.max(0.0).sqrt()).unwrap_or(0.0)
    }

    pub fn scaled(&self, z: C64) -> Mps {
        let mut out = self.clone();
        if let Some(t) = out.tensors.first_mut() {
            t.mapv_inplace(|x| x * z);
        }
        out.norm_cache = self.norm_cache.map(|n| n * z.norm());
        out.canonical_center = if out.tensors.is_empty() { None } else { self.canonical_center };
        if let (Some(c), Some(_)) = (out.canonical_center, self.canonical_center) {
            if c != 0 {
                // scaling the first tensor breaks its isometry
                out.canonical_center = None;
            }
        }
        out
    }

    pub fn normalized(&self) -> MpsResult<Mps> {
        let n = self.norm();
        if n < ZERO_NORM {
            return Err(MpsError::ZeroNorm);
        }
        let mut out = self.scaled(C64::new(1.0 / n, 0.0));
        out.norm_cache = Some(1.0);
        Ok(out)
    }

    /// Tensor product `self ⊗ other` as a longer chain.
    pub fn concat(&self, other: &Mps) -> MpsResult<Mps> {
        if self.d != other.d {
            return Err(MpsError::Shape("physical dimensions differ".into()));
        }
        let mut tensors = self.tensors.clone();
        tensors.extend(other.tensors.iter().cloned());
        let norm = match (self.norm_cache, other.norm_cache) {
            (Some(a), Some(b)) => Some(a * b),
            _ => None,
        };
        Ok(Mps { tensors, d: self.d, canonical_center: None, norm_cache: norm })
    }

    /// Appends the basis state `|k⟩` as a new last site.
    pub fn append_basis(&self, k: usize) -> Mps {
        let mut t = Array3::zeros((1, self.d, 1));
        t[[0, k, 0]] = ONE;
        let mut out = self.clone();
        out.tensors.push(t);
        out.canonical_center = None;
        out
    }

    /// Mixed-canonical form with orthogonality center `center`; the norm is
    /// carried by the center tensor.
    pub fn canonicalize(&self, center: usize) -> MpsResult<Mps> {
        let n = self.len();
        if center >= n.max(1) {
            return Err(MpsError::BadCut { cut: center, len: n });
        }
        let mut t = self.tensors.clone();
        for k in 0..center {
            let (dl, p, dr) = t[k].dim();
            let (q, r) = qr_positive(&reshape2(&t[k], dl * p, dr))?;
            let nb = q.ncols();
            t[k] = reshape3(q, dl, p, nb);
            let (_, p2, dr2) = t[k + 1].dim();
            t[k + 1] = reshape3(r.dot(&reshape2(&t[k + 1], dr, p2 * dr2)), nb, p2, dr2);
        }
        for k in (center + 1..n).rev() {
            let (dl, p, dr) = t[k].dim();
            let m = reshape2(&t[k], dl, p * dr);
            let (q, r) = qr_positive(&dagger(&m))?;
            let nb = q.ncols();
            t[k] = reshape3(dagger(&q), nb, p, dr);
            let (dl0, p0, _) = t[k - 1].dim();
            t[k - 1] = reshape3(reshape2(&t[k - 1], dl0 * p0, dl).dot(&dagger(&r)), dl0, p0, nb);
        }
        let norm = if n == 0 { 1.0 } else { linalg::fro_norm(&reshape2(&t[center], 1, t[center].len())) };
        if norm < ZERO_NORM {
            return Err(MpsError::ZeroNorm);
        }
        Ok(Mps { tensors: t, d: self.d, canonical_center: Some(center), norm_cache: Some(norm) })
    }

    /// Exact rank reduction: drops numerically zero singular values at every
    /// cut. The represented state is unchanged.
    pub fn compact(&self) -> MpsResult<Mps> {
        let n = self.len();
        if n <= 1 {
            return Ok(self.clone());
        }
        let dim = self.d.checked_pow(n as u32).unwrap_or(usize::MAX);
        if dim <= DENSE_COMPACT_LIMIT {
            let v = self.to_dense();
            if linalg::norm(v.view()) < ZERO_NORM {
                return Err(MpsError::ZeroNorm);
            }
            return Mps::from_dense(self.d, n, &v);
        }
        let (m, _) = self.compress(0.0, None)?;
        Ok(m)
    }

    /// SVD compression sweep. At every cut the smallest Schmidt values are
    /// discarded while their relative squared weight stays within `tol²`, and
    /// the bond is capped at `max_bond`. Returns the (unnormalized) state and
    /// the total discarded relative weight.
    pub fn compress(&self, tol: f64, max_bond: Option<usize>) -> MpsResult<(Mps, f64)> {
        let n = self.len();
        if n == 0 {
            return Ok((self.clone(), 0.0));
        }
        let mut t = self.canonicalize(0)?.tensors;
        let mut discarded = 0.0;
        for k in 0..n - 1 {
            let (dl, p, dr) = t[k].dim();
            let (u, sv, vt) = svd(&reshape2(&t[k], dl * p, dr))?;
            let total: f64 = sv.iter().map(|x| x * x).sum();
            let mut keep = linalg::numerical_rank(&sv).max(1);
            if let Some(mb) = max_bond {
                keep = keep.min(mb.max(1));
            }
            let mut tail: f64 = sv.iter().skip(keep).map(|x| x * x).sum();
            while keep > 1 && (tail + sv[keep - 1] * sv[keep - 1]) <= tol * tol * total {
                keep -= 1;
                tail += sv[keep] * sv[keep];
            }
            discarded += if total > 0.0 { tail / total } else { 0.0 };
            t[k] = reshape3(u.slice(s![.., ..keep]).to_owned(), dl, p, keep);
            let mut sv_vt = vt.slice(s![..keep, ..]).to_owned();
            for (j, mut row) in sv_vt.axis_iter_mut(Axis(0)).enumerate() {
                row.mapv_inplace(|z| z * sv[j]);
            }
            let (_, p2, dr2) = t[k + 1].dim();
            t[k + 1] = reshape3(sv_vt.dot(&reshape2(&t[k + 1], dr, p2 * dr2)), keep, p2, dr2);
        }
        let last = &t[n - 1];
        let norm = linalg::fro_norm(&reshape2(last, 1, last.len()));
        Ok((Mps { tensors: t, d: self.d, canonical_center: Some(n - 1), norm_cache: Some(norm) }, discarded))
    }

    /// SVD of the center matrix at the cut after site `cut` (1-based count of
    /// left sites), with the tie-break order applied. Returns the canonical
    /// tensors, `U`, singular values, `V†`, the kept column order and the
    /// phase applied to each left vector.
    fn cut_svd(&self, cut: usize) -> MpsResult<CutSvd> {
        let n = self.len();
        if cut == 0 || cut >= n {
            return Err(MpsError::BadCut { cut, len: n });
        }
        let canon = self.canonicalize(cut - 1)?;
        let norm = canon.norm_cache.unwrap_or(1.0);
        let ct = &canon.tensors[cut - 1];
        let (dl, p, dr) = ct.dim();
        let (u, sv, vt) = svd(&reshape2(ct, dl * p, dr))?;
        let r = linalg::numerical_rank(&sv).max(1);
        let mut order: Vec<usize> = (0..r).collect();
        let mut phases = vec![ONE; r];
        let left_dim = self.d.checked_pow(cut as u32).unwrap_or(usize::MAX);
        if left_dim <= DENSE_CONVENTION_LIMIT {
            let lb = left_block(&canon.tensors[..cut - 1]);
            let x = lb.nrows();
            let ur = u.slice(s![.., ..r]).to_owned();
            let ur3 = ur.into_shape_with_order((dl, p * r)).expect("reshape");
            let dense = lb.dot(&ur3).into_shape_with_order((x * p, r)).expect("reshape");
            let mut cols: Vec<Array1<C64>> = Vec::with_capacity(r);
            for j in 0..r {
                let mut v = dense.column(j).to_owned();
                phases[j] = linalg::fix_phase(&mut v);
                cols.push(v);
            }
            let top = sv[0];
            order.sort_by(|&a, &b| {
                if (sv[a] - sv[b]).abs() > ZERO_SV * top {
                    sv[b].partial_cmp(&sv[a]).unwrap_or(Ordering::Equal)
                } else {
                    lex_cmp(&cols[a], &cols[b])
                }
            });
        }
        Ok(CutSvd { canon, norm, u, sv, vt, order, phases })
    }

    /// Schmidt decomposition across the cut after site `cut`.
    pub fn schmidt(&self, cut: usize) -> MpsResult<SchmidtData> {
        let cs = self.cut_svd(cut)?;
        let renormalized = (cs.norm - 1.0).abs() > 1e-10;
        let (dl, p, _) = cs.canon.tensors[cut - 1].dim();
        let total: f64 = cs.order.iter().map(|&j| cs.sv[j] * cs.sv[j]).sum::<f64>().sqrt();
        let mut coefficients = Vec::new();
        let mut left_vectors = Vec::new();
        let mut right_vectors = Vec::new();
        let next = &cs.canon.tensors[cut];
        let (nl, np, nr) = next.dim();
        let next_m = reshape2(next, nl, np * nr);
        for &j in &cs.order {
            coefficients.push(cs.sv[j] / total);
            let ph = cs.phases[j];
            let mut lt = cs.canon.tensors[..cut - 1].to_vec();
            let col = cs.u.column(j).mapv(|z| z * ph);
            lt.push(reshape3(col.into_shape_with_order((dl * p, 1)).expect("reshape"), dl, p, 1));
            let mut l = Mps::raw(self.d, lt);
            l.canonical_center = Some(cut - 1);
            l.norm_cache = Some(1.0);
            left_vectors.push(l);
            let row = cs.vt.row(j).mapv(|z| z * ph.conj()).insert_axis(Axis(0));
            let mut rt = vec![reshape3(row.dot(&next_m), 1, np, nr)];
            rt.extend(cs.canon.tensors[cut + 1..].iter().cloned());
            let mut r = Mps::raw(self.d, rt);
            r.canonical_center = Some(0);
            r.norm_cache = Some(1.0);
            right_vectors.push(r);
        }
        Ok(SchmidtData { cut, coefficients, left_vectors, right_vectors, renormalized })
    }

    /// `Trunc_D` at one cut followed by renormalization.
    pub fn truncate_at_cut(&self, cut: usize, bond: usize) -> MpsResult<Mps> {
        if bond == 0 {
            return Err(MpsError::BadBond);
        }
        let cs = self.cut_svd(cut)?;
        let keep: Vec<usize> = cs.order.iter().take(bond).cloned().collect();
        let mut t = cs.canon.tensors.clone();
        let (dl, p, _) = t[cut - 1].dim();
        let k = keep.len();
        let mut us = Array2::zeros((dl * p, k));
        let mut vt = Array2::zeros((k, cs.vt.ncols()));
        for (c, &j) in keep.iter().enumerate() {
            us.column_mut(c).assign(&cs.u.column(j).mapv(|z| z * cs.sv[j]));
            vt.row_mut(c).assign(&cs.vt.row(j));
        }
        t[cut - 1] = reshape3(us, dl, p, k);
        let (nl, np, nr) = t[cut].dim();
        t[cut] = reshape3(vt.dot(&reshape2(&t[cut], nl, np * nr)), k, np, nr);
        Mps::raw(self.d, t).normalized()
    }

    /// Sequential truncation of every internal bond to `bond`, cut 1 first,
    /// renormalized once at the end. Also returns the discarded weight at
    /// each cut, relative to the state entering that cut.
    pub fn truncate_all_bonds(&self, bond: usize) -> MpsResult<(Mps, Vec<f64>)> {
        if bond == 0 {
            return Err(MpsError::BadBond);
        }
        let n = self.len();
        if n <= 1 {
            return Ok((self.normalized()?, Vec::new()));
        }
        let mut t = self.canonicalize(0)?.tensors;
        let mut weights = Vec::with_capacity(n - 1);
        for k in 0..n - 1 {
            let (dl, p, dr) = t[k].dim();
            let (u, sv, vt) = svd(&reshape2(&t[k], dl * p, dr))?;
            let total: f64 = sv.iter().map(|x| x * x).sum();
            let keep = linalg::numerical_rank(&sv).max(1).min(bond);
            let tail: f64 = sv.iter().skip(keep).map(|x| x * x).sum();
            weights.push(if total > 0.0 { tail / total } else { 0.0 });
            t[k] = reshape3(u.slice(s![.., ..keep]).to_owned(), dl, p, keep);
            let mut sv_vt = vt.slice(s![..keep, ..]).to_owned();
            for (j, mut row) in sv_vt.axis_iter_mut(Axis(0)).enumerate() {
                row.mapv_inplace(|z| z * sv[j]);
            }
            let (_, p2, dr2) = t[k + 1].dim();
            t[k + 1] = reshape3(sv_vt.dot(&reshape2(&t[k + 1], dr, p2 * dr2)), keep, p2, dr2);
        }
        Ok((Mps::raw(self.d, t).normalized()?, weights))
    }
}

struct CutSvd {
    canon: Mps,
    norm: f64,
    u: Array2<C64>,
    sv: Array1<f64>,
    vt: Array2<C64>,
    order: Vec<usize>,
    phases: Vec<C64>,
}

fn lex_cmp(a: &Array1<C64>, b: &Array1<C64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        let o = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

fn capped_bonds(p: usize, n: usize, bond: usize) -> Vec<usize> {
    (0..=n)
        .map(|k| {
            let l = p.saturating_pow(k as u32);
            let r = p.saturating_pow((n - k) as u32);
            bond.min(l).min(r).max(1)
        })
        .collect()
}

fn check_pair(a: &Mps, b: &Mps) -> MpsResult<()> {
    if a.len() != b.len() || a.d != b.d {
        return Err(MpsError::Shape(format!(
            "lengths {}/{} and physical dims {}/{}",
            a.len(),
            b.len(),
            a.d,
            b.d
        )));
    }
    Ok(())
}

/// `⟨a|b⟩[:k]`: the partial transfer environment over the first `k` sites,
/// a `(D_a, D_b)` matrix.
pub fn partial_env(a: &Mps, b: &Mps, k: usize) -> MpsResult<Array2<C64>> {
    check_pair(a, b)?;
    let mut env = Array2::from_elem((1, 1), ONE);
    for (ta, tb) in a.tensors.iter().zip(b.tensors.iter()).take(k) {
        let (dla, p, dra) = ta.dim();
        let (dlb, _, drb) = tb.dim();
        let tmp = env.dot(&reshape2(tb, dlb, p * drb)).into_shape_with_order((dla * p, drb)).expect("reshape");
        env = dagger(&reshape2(ta, dla * p, dra)).dot(&tmp);
    }
    Ok(env)
}

/// `⟨a|b⟩`.
pub fn overlap(a: &Mps, b: &Mps) -> MpsResult<C64> {
    let env = partial_env(a, b, a.len())?;
    Ok(env[[0, 0]])
}

/// `Tr_{[1,k−1]} |a⟩⟨b|` for states on `k` sites, as a `d × d` matrix.
pub fn reduced_last_site(a: &Mps, b: &Mps) -> MpsResult<Array2<C64>> {
    check_pair(a, b)?;
    let k = a.len();
    if k == 0 {
        return Err(MpsError::BadCut { cut: 0, len: 0 });
    }
    let env = partial_env(a, b, k - 1)?.mapv(|z| z.conj());
    let (dla, p, _) = a.tensors[k - 1].dim();
    let (dlb, _, _) = b.tensors[k - 1].dim();
    let la = reshape2(&a.tensors[k - 1], dla, p);
    let lb = reshape2(&b.tensors[k - 1], dlb, p).mapv(|z| z.conj());
    Ok(la.t().dot(&env).dot(&lb))
}

/// Weighted sum as a direct sum of bonds.
pub fn linear_combine(states: &[Mps], weights: &[C64]) -> MpsResult<Combination> {
    if states.is_empty() || states.len() != weights.len() {
        return Err(MpsError::Shape("need one weight per state and at least one state".into()));
    }
    let first = &states[0];
    for s in states {
        check_pair(first, s)?;
    }
    let n = first.len();
    let d = first.d;
    let scale: f64 = states.iter().zip(weights).map(|(s, w)| s.norm() * w.norm()).sum();
    let state = if n == 0 {
        let z: C64 = weights.iter().sum();
        let mut m = Mps::unit(d);
        m.norm_cache = Some(z.norm());
        m
    } else if n == 1 {
        let mut t = Array3::zeros((1, d, 1));
        for (s, &w) in states.iter().zip(weights) {
            t.scaled_add(w, &s.tensors[0]);
        }
        Mps::raw(d, vec![t])
    } else {
        let mut tensors = Vec::with_capacity(n);
        for k in 0..n {
            let dls: Vec<usize> = states.iter().map(|s| s.tensors[k].dim().0).collect();
            let drs: Vec<usize> = states.iter().map(|s| s.tensors[k].dim().2).collect();
            let dl = if k == 0 { 1 } else { dls.iter().sum() };
            let dr = if k == n - 1 { 1 } else { drs.iter().sum() };
            let mut t = Array3::zeros((dl, d, dr));
            let (mut ol, mut or) = (0, 0);
            for (j, s) in states.iter().enumerate() {
                let src = &s.tensors[k];
                let (a, b) = (if k == 0 { 0 } else { ol }, if k == n - 1 { 0 } else { or });
                let w = if k == 0 { weights[j] } else { ONE };
                let mut view = t.slice_mut(s![a..a + dls[j], .., b..b + drs[j]]);
                view.zip_mut_with(src, |o, &x| *o += w * x);
                ol += dls[j];
                or += drs[j];
            }
            tensors.push(t);
        }
        Mps::raw(d, tensors)
    };
    let norm = state.norm();
    Ok(Combination { zero_norm: norm <= ZERO_NORM.max(1e-12 * scale), norm, state })
}

#[derive(Clone, Debug)]
pub struct Mpo {
    tensors: Vec<Array4<C64>>,
    d: usize,
    hermitian: bool,
}

/// Bond and error bookkeeping of an MPO compression.
#[derive(Clone, Debug, Serialize)]
pub struct CompressionInfo {
    pub bonds: Vec<usize>,
    pub discarded_weight: f64,
}

impl Mpo {
    pub fn from_tensors(d: usize, tensors: Vec<Array4<C64>>, hermitian: bool) -> MpsResult<Self> {
        for (k, t) in tensors.iter().enumerate() {
            let (_, o, i, _) = t.dim();
            if o != d || i != d {
                return Err(MpsError::Shape(format!("site {k} is not {d}x{d}")));
            }
            if k + 1 < tensors.len() && t.dim().3 != tensors[k + 1].dim().0 {
                return Err(MpsError::Shape(format!("bond mismatch after site {k}")));
            }
        }
        Ok(Mpo { tensors, d, hermitian })
    }

    pub fn identity(d: usize, n: usize) -> Self {
        let mut t = Array4::zeros((1, d, d, 1));
        for k in 0..d {
            t[[0, k, k, 0]] = ONE;
        }
        Mpo { tensors: vec![t; n], d, hermitian: true }
    }

    /// Product operator with the given single-site factors.
    pub fn product(d: usize, ops: &[Array2<C64>]) -> Self {
        let tensors = ops
            .iter()
            .map(|op| op.clone().into_shape_with_order((1, d, d, 1)).expect("reshape"))
            .collect();
        Mpo { tensors, d, hermitian: false }
    }

    /// A two-site operator (`d² × d²`, row index `out_k·d + out_{k+1}`) acting
    /// on sites `(site, site+1)` of an `n`-site chain, identity elsewhere.
    pub fn two_site(d: usize, n: usize, site: usize, op: &Array2<C64>) -> MpsResult<Self> {
        if site + 1 >= n {
            return Err(MpsError::BadCut { cut: site, len: n });
        }
        // regroup (o1 o2, i1 i2) -> (o1 i1, o2 i2) and split by SVD
        let mut m = Array2::zeros((d * d, d * d));
        for o1 in 0..d {
            for o2 in 0..d {
                for i1 in 0..d {
                    for i2 in 0..d {
                        m[[o1 * d + i1, o2 * d + i2]] = op[[o1 * d + o2, i1 * d + i2]];
                    }
                }
            }
        }
        let (u, sv, vt) = svd(&m)?;
        let r = linalg::numerical_rank(&sv).max(1);
        let mut a = Array4::zeros((1, d, d, r));
        let mut b = Array4::zeros((r, d, d, 1));
        for j in 0..r {
            for o in 0..d {
                for i in 0..d {
                    a[[0, o, i, j]] = u[[o * d + i, j]] * sv[j];
                    b[[j, o, i, 0]] = vt[[j, o * d + i]];
                }
            }
        }
        let mut out = Mpo::identity(d, n);
        out.tensors[site] = a;
        out.tensors[site + 1] = b;
        out.hermitian = linalg::is_hermitian(op, 1e-12);
        Ok(out)
    }

    /// Exact MPO of a dense `d^n × d^n` operator.
    pub fn from_dense(d: usize, n: usize, op: &Array2<C64>) -> MpsResult<Self> {
        let dim = d.pow(n as u32);
        if op.dim() != (dim, dim) {
            return Err(MpsError::Shape(format!("operator is {:?}, expected {dim}x{dim}", op.dim())));
        }
        let mut v = Array1::zeros(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                v[interleave(r, c, d, n)] = op[[r, c]];
            }
        }
        let m = Mps::from_dense(d * d, n, &v)?;
        let mut out = Mpo::from_vectorized(d, &m);
        out.hermitian = linalg::is_hermitian(op, 1e-12);
        Ok(out)
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let n = self.len();
        let dim = self.d.pow(n as u32);
        let v = self.vectorized().to_dense();
        let mut out = Array2::zeros((dim, dim));
        for r in 0..dim {
            for c in 0..dim {
                out[[r, c]] = v[interleave(r, c, self.d, n)];
            }
        }
        out
    }

    pub fn len(&self) -> usize { self.tensors.len() }
    pub fn is_empty(&self) -> bool { self.tensors.is_empty() }
    pub fn phys_dim(&self) -> usize { self.d }
    pub fn tensors(&self) -> &[Array4<C64>] { &self.tensors }
    pub fn is_hermitian(&self) -> bool { self.hermitian }

    pub fn bond_dims(&self) -> Vec<usize> { self.tensors.iter().skip(1).map(|t| t.dim().0).collect() }
    pub fn max_bond(&self) -> usize { self.bond_dims().into_iter().max().unwrap_or(1) }

    /// Sets the Hermiticity flag; when the dense form is small it is checked.
    pub fn with_hermitian(mut self, flag: bool) -> MpsResult<Self> {
        if flag && self.d.pow(self.len() as u32) <= 1 << 10 {
            let m = self.to_dense();
            let scale = linalg::fro_norm(&m).max(1.0);
            if !linalg::is_hermitian(&m, 1e-10 * scale) {
                return Err(MpsError::NotHermitian);
            }
        }
        self.hermitian = flag;
        Ok(self)
    }

    /// The operator as an MPS with physical index `out·d + in`.
    pub fn vectorized(&self) -> Mps {
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let (l, o, i, r) = t.dim();
                t.as_standard_layout().into_owned().into_shape_with_order((l, o * i, r)).expect("reshape")
            })
            .collect();
        Mps::raw(self.d * self.d, tensors)
    }

    fn from_vectorized(d: usize, m: &Mps) -> Mpo {
        let tensors = m
            .tensors
            .iter()
            .map(|t| {
                let (l, _, r) = t.dim();
                t.as_standard_layout().into_owned().into_shape_with_order((l, d, d, r)).expect("reshape")
            })
            .collect();
        Mpo { tensors, d, hermitian: false }
    }

    pub fn scaled(&self, z: C64) -> Mpo {
        let mut out = self.clone();
        if let Some(t) = out.tensors.first_mut() {
            t.mapv_inplace(|x| x * z);
        }
        out.hermitian = self.hermitian && z.im == 0.0;
        out
    }

    pub fn dagger(&self) -> Mpo {
        let tensors = self
            .tensors
            .iter()
            .map(|t| t.clone().permuted_axes([0, 2, 1, 3]).mapv(|z| z.conj()).as_standard_layout().into_owned())
            .collect();
        Mpo { tensors, d: self.d, hermitian: self.hermitian }
    }

    /// Direct-sum addition.
    pub fn add(&self, other: &Mpo) -> MpsResult<Mpo> {
        let c = linear_combine(&[self.vectorized(), other.vectorized()], &[ONE, ONE])?;
        let mut out = Mpo::from_vectorized(self.d, &c.state);
        out.hermitian = self.hermitian && other.hermitian;
        Ok(out)
    }

    /// Weighted sum of operators.
    pub fn sum(ops: &[Mpo], weights: &[C64]) -> MpsResult<Mpo> {
        let v: Vec<Mps> = ops.iter().map(|o| o.vectorized()).collect();
        let c = linear_combine(&v, weights)?;
        Ok(Mpo::from_vectorized(ops[0].d, &c.state))
    }

    /// Operator product `self · other`.
    pub fn compose(&self, other: &Mpo) -> MpsResult<Mpo> {
        if self.len() != other.len() || self.d != other.d {
            return Err(MpsError::Shape("operator shapes differ".into()));
        }
        let d = self.d;
        let tensors = self
            .tensors
            .iter()
            .zip(other.tensors.iter())
            .map(|(a, b)| {
                let (al, _, _, ar) = a.dim();
                let (bl, _, _, br) = b.dim();
                let mut t = Array4::zeros((al * bl, d, d, ar * br));
                for o in 0..d {
                    for i in 0..d {
                        let mut acc = Array2::zeros((al * bl, ar * br));
                        for m in 0..d {
                            let am = a.slice(s![.., o, m, ..]).to_owned();
                            let bm = b.slice(s![.., m, i, ..]).to_owned();
                            acc += &kron(&am, &bm);
                        }
                        t.slice_mut(s![.., o, i, ..]).assign(&acc);
                    }
                }
                t
            })
            .collect();
        Ok(Mpo { tensors, d, hermitian: false })
    }

    /// Frobenius-norm SVD compression (see [`Mps::compress`]).
    pub fn compress(&self, tol: f64, max_bond: Option<usize>) -> MpsResult<(Mpo, CompressionInfo)> {
        if self.is_empty() {
            return Ok((self.clone(), CompressionInfo { bonds: vec![], discarded_weight: 0.0 }));
        }
        let (m, w) = self.vectorized().compress(tol, max_bond)?;
        let mut out = Mpo::from_vectorized(self.d, &m);
        out.hermitian = self.hermitian;
        let bonds = out.bond_dims();
        Ok((out, CompressionInfo { bonds, discarded_weight: w }))
    }

    /// Operator-Schmidt decomposition `Σ_j A_j ⊗ B_j` at the cut after site
    /// `cut`, with the singular weights absorbed into the left factors.
    pub fn operator_schmidt(&self, cut: usize) -> MpsResult<Vec<(Mpo, Mpo)>> {
        let n = self.len();
        if cut == 0 || cut >= n {
            return Err(MpsError::BadCut { cut, len: n });
        }
        let canon = self.vectorized().canonicalize(cut - 1)?;
        let ct = &canon.tensors[cut - 1];
        let (dl, p, dr) = ct.dim();
        let (u, sv, vt) = svd(&reshape2(ct, dl * p, dr))?;
        let r = linalg::numerical_rank(&sv).max(1);
        let next = &canon.tensors[cut];
        let (nl, np, nr) = next.dim();
        let next_m = reshape2(next, nl, np * nr);
        let mut out = Vec::with_capacity(r);
        for j in 0..r {
            let mut lt = canon.tensors[..cut - 1].to_vec();
            let col = u.column(j).mapv(|z| z * sv[j]);
            lt.push(reshape3(col.into_shape_with_order((dl * p, 1)).expect("reshape"), dl, p, 1));
            let row = vt.row(j).to_owned().insert_axis(Axis(0));
            let mut rt = vec![reshape3(row.dot(&next_m), 1, np, nr)];
            rt.extend(canon.tensors[cut + 1..].iter().cloned());
            out.push((Mpo::from_vectorized(self.d, &Mps::raw(p, lt)), Mpo::from_vectorized(self.d, &Mps::raw(p, rt))));
        }
        Ok(out)
    }
}

/// Index of entry `(r, c)` of a `d^n × d^n` operator in its vectorization with
/// per-site physical index `out·d + in`.
fn interleave(r: usize, c: usize, d: usize, n: usize) -> usize {
    let mut idx = 0;
    for k in 0..n {
        let shift = d.pow((n - 1 - k) as u32);
        let o = (r / shift) % d;
        let i = (c / shift) % d;
        idx = idx * d * d + o * d + i;
    }
    idx
}

/// `⟨a|W|b⟩`.
pub fn matrix_element(a: &Mps, op: &Mpo, b: &Mps) -> MpsResult<C64> {
    check_pair(a, b)?;
    if op.len() != a.len() || op.d != a.d {
        return Err(MpsError::Shape("operator does not match the states".into()));
    }
    let d = a.d;
    // env[α, w, β]
    let mut env = Array3::from_elem((1, 1, 1), ONE);
    for k in 0..a.len() {
        let ta = &a.tensors[k];
        let tb = &b.tensors[k];
        let w = &op.tensors[k];
        let (da, dw, db) = env.dim();
        let (_, _, dra) = ta.dim();
        let (_, _, _, drw) = w.dim();
        let (_, _, drb) = tb.dim();
        let env2 = env.as_standard_layout().into_owned().into_shape_with_order((da * dw, db)).expect("reshape");
        let fs: Vec<Array2<C64>> =
            (0..d).map(|t| env2.dot(&tb.slice(s![.., t, ..]))).collect(); // (α w, β')
        let mut next = Array3::<C64>::zeros((dra, drw, drb));
        for si in 0..d {
            let a_s = ta.slice(s![.., si, ..]).mapv(|z| z.conj()); // (α, α')
            for t in 0..d {
                let wst = w.slice(s![.., si, t, ..]);
                if wst.iter().all(|z| *z == ZERO) {
                    continue;
                }
                // G[α, w', β'] = Σ_w W[w, w'] F[α, w, β']
                let f3 = fs[t].clone().into_shape_with_order((da, dw, drb)).expect("reshape");
                let fp = f3.permuted_axes([1, 0, 2]).as_standard_layout().into_owned();
                let fm = fp.into_shape_with_order((dw, da * drb)).expect("reshape");
                let g = wst.t().dot(&fm); // (w', α β')
                let g3 = g.into_shape_with_order((drw, da, drb)).expect("reshape");
                let gp = g3.permuted_axes([1, 0, 2]).as_standard_layout().into_owned();
                let gm = gp.into_shape_with_order((da, drw * drb)).expect("reshape");
                let contrib = a_s.t().dot(&gm); // (α', w' β')
                let c3 = contrib.into_shape_with_order((dra, drw, drb)).expect("reshape");
                next += &c3;
            }
        }
        env = next;
    }
    Ok(env[[0, 0, 0]])
}

/// `⟨v|W|v⟩ / ⟨v|v⟩` for a Hermitian-flagged operator.
pub fn expectation(state: &Mps, op: &Mpo) -> MpsResult<f64> {
    if !op.hermitian {
        return Err(MpsError::NotHermitian);
    }
    let num = matrix_element(state, op, state)?;
    let den = overlap(state, state)?.re;
    if den < ZERO_NORM * ZERO_NORM {
        return Err(MpsError::ZeroNorm);
    }
    let val = num / den;
    if val.im.abs() > 1e-9 * val.re.abs().max(1.0) {
        return Err(MpsError::ComplexResult(val.im));
    }
    Ok(val.re)
}

/// `W|v⟩` with bond dimensions multiplied; `compress_tol` optionally
/// compresses afterwards. Returns the state and the discarded weight.
pub fn apply_mpo(op: &Mpo, state: &Mps, compress_tol: Option<f64>) -> MpsResult<(Mps, f64)> {
    if op.len() != state.len() || op.d != state.d {
        return Err(MpsError::Shape("operator does not match the state".into()));
    }
    let d = state.d;
    let tensors = op
        .tensors
        .iter()
        .zip(state.tensors.iter())
        .map(|(w, a)| {
            let (wl, _, _, wr) = w.dim();
            let (al, _, ar) = a.dim();
            let mut t = Array3::zeros((wl * al, d, wr * ar));
            for o in 0..d {
                let mut acc = Array2::zeros((wl * al, wr * ar));
                for i in 0..d {
                    let wm = w.slice(s![.., o, i, ..]).to_owned();
                    if wm.iter().all(|z| *z == ZERO) {
                        continue;
                    }
                    acc += &kron(&wm, &a.slice(s![.., i, ..]).to_owned());
                }
                t.slice_mut(s![.., o, ..]).assign(&acc);
            }
            t
        })
        .collect();
    let out = Mps::raw(d, tensors);
    match compress_tol {
        Some(tol) => out.compress(tol, None),
        None => Ok((out, 0.0)),
    }
}

/// Applies a `d × d` operator to the last site of a state.
pub fn apply_last_site(state: &Mps, op: &Array2<C64>) -> Mps {
    let mut out = state.clone();
    if let Some(t) = out.tensors.last_mut() {
        let (l, p, r) = t.dim();
        let m = reshape2(t, l, p * r).into_shape_with_order((l, p, r)).expect("reshape");
        let mut nt = Array3::zeros((l, p, r));
        for o in 0..p {
            for i in 0..p {
                let z = op[[o, i]];
                if z != ZERO {
                    nt.slice_mut(s![.., o, ..]).scaled_add(z, &m.slice(s![.., i, ..]));
                }
            }
        }
        *t = nt;
    }
    out.canonical_center = None;
    out.norm_cache = None;
    out
}
