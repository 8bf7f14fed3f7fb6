//! Dense linear-algebra helpers shared by every module.
//!
//! Everything here works on `ndarray` matrices of `C64` and defers the heavy
//! lifting to LAPACK through `ndarray-linalg`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, ShapeBuilder};
use ndarray_linalg::{Eigh, EigValsh, JobSvd, QR, SVDDC, SVD, UPLO};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;

/// Relative singular-value threshold below which a value counts as zero.
pub const ZERO_SV: f64 = 1e-12;

pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, thiserror::Error)]
pub enum LinalgError {
    #[error("LAPACK failure: {0}")]
    Lapack(String),
}

pub type LinalgResult<T> = Result<T, LinalgError>;

fn lapack<E: std::fmt::Display>(e: E) -> LinalgError { LinalgError::Lapack(e.to_string()) }

pub fn c(re: f64, im: f64) -> C64 { C64::new(re, im) }

pub fn dagger(a: &Array2<C64>) -> Array2<C64> { a.t().mapv(|z| z.conj()) }

pub fn hermitian_part(a: &Array2<C64>) -> Array2<C64> {
    let mut h = a + &dagger(a);
    h.mapv_inplace(|z| z * 0.5);
    h
}

pub fn identity(n: usize) -> Array2<C64> { Array2::eye(n) }

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let z = a[[i, j]];
            if z == ZERO {
                continue;
            }
            out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
                .zip_mut_with(b, |o, &x| *o = z * x);
        }
    }
    out
}

pub fn kron_vec(a: &Array1<C64>, b: &Array1<C64>) -> Array1<C64> {
    let mut out = Array1::zeros(a.len() * b.len());
    for (i, &z) in a.iter().enumerate() {
        out.slice_mut(s![i * b.len()..(i + 1) * b.len()])
            .zip_mut_with(b, |o, &x| *o = z * x);
    }
    out
}

pub fn trace(a: &Array2<C64>) -> C64 { a.diag().sum() }

pub fn inner(a: ArrayView1<C64>, b: ArrayView1<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(v: ArrayView1<C64>) -> f64 { v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() }

pub fn fro_norm(a: &Array2<C64>) -> f64 { a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() }

/// `⟨u|A|v⟩`.
pub fn quad(u: ArrayView1<C64>, a: &Array2<C64>, v: ArrayView1<C64>) -> C64 { inner(u, a.dot(&v).view()) }

/// Eigen-decomposition of the Hermitian part of `a`, eigenvalues ascending.
pub fn eigh(a: &Array2<C64>) -> LinalgResult<(Array1<f64>, Array2<C64>)> {
    // ndarray-linalg returns conjugated eigenvectors for row-major complex input
    let f = fortran(&hermitian_part(a));
    let (w, v) = f.eigh(UPLO::Lower).map_err(lapack)?;
    Ok((w, v.as_standard_layout().into_owned()))
}

fn fortran(a: &Array2<C64>) -> Array2<C64> {
    let mut f = Array2::zeros(a.dim().f());
    f.assign(a);
    f
}

pub fn eigvalsh(a: &Array2<C64>) -> LinalgResult<Array1<f64>> {
    hermitian_part(a).eigvalsh(UPLO::Lower).map_err(lapack)
}

/// Thin SVD `a = U diag(s) V†`, returning `(U, s, V†)`.
pub fn svd(a: &Array2<C64>) -> LinalgResult<(Array2<C64>, Array1<f64>, Array2<C64>)> {
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return Ok((Array2::zeros((m, 0)), Array1::zeros(0), Array2::zeros((0, n))));
    }
    match a.svddc(JobSvd::Some) {
        Ok((Some(u), s, Some(vt))) if s.iter().all(|x| x.is_finite()) => Ok((u, s, vt)),
        _ => {
            // divide-and-conquer occasionally fails to converge; fall back to the QR iteration
            let (u, s, vt) = a.svd(true, true).map_err(lapack)?;
            let k = m.min(n);
            let u = u.unwrap().slice(s![.., ..k]).to_owned();
            let vt = vt.unwrap().slice(s![..k, ..]).to_owned();
            Ok((u, s, vt))
        }
    }
}

pub fn singular_values(a: &Array2<C64>) -> LinalgResult<Array1<f64>> {
    if a.is_empty() {
        return Ok(Array1::zeros(0));
    }
    a.svddc(JobSvd::None).map(|(_, s, _)| s).map_err(lapack)
}

/// Number of singular values above `ZERO_SV` times the largest.
pub fn numerical_rank(s: &Array1<f64>) -> usize {
    let top = s.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > ZERO_SV * top).count()
}

/// Thin QR with the diagonal of `R` made real and nonnegative, which makes
/// the factorization of an isometry return that isometry unchanged.
pub fn qr_positive(a: &Array2<C64>) -> LinalgResult<(Array2<C64>, Array2<C64>)> {
    let (mut q, mut r) = a.qr().map_err(lapack)?;
    let k = r.nrows();
    for j in 0..k {
        let d = r[[j, j]];
        let mag = d.norm();
        if mag > 0.0 {
            let ph = d / mag;
            q.column_mut(j).mapv_inplace(|z| z * ph);
            r.row_mut(j).mapv_inplace(|z| z * ph.conj());
        }
    }
    Ok((q, r))
}

/// `f(A)` for Hermitian `A` through its eigen-decomposition.
pub fn herm_fn(a: &Array2<C64>, f: impl Fn(f64) -> C64) -> LinalgResult<Array2<C64>> {
    let (w, v) = eigh(a)?;
    Ok(spectral(&w, &v, f))
}

pub fn spectral(w: &Array1<f64>, v: &Array2<C64>, f: impl Fn(f64) -> C64) -> Array2<C64> {
    let mut vf = v.clone();
    for (j, mut col) in vf.axis_iter_mut(Axis(1)).enumerate() {
        let z = f(w[j]);
        col.mapv_inplace(|x| x * z);
    }
    vf.dot(&dagger(v))
}

/// `e^{-iHt}` for Hermitian `H`.
pub fn expm_herm(h: &Array2<C64>, t: f64) -> LinalgResult<Array2<C64>> {
    herm_fn(h, |e| C64::from_polar(1.0, -e * t))
}

/// Largest singular value.
pub fn op_norm(a: &Array2<C64>) -> LinalgResult<f64> {
    Ok(singular_values(a)?.iter().cloned().fold(0.0, f64::max))
}

/// Sum of singular values.
pub fn trace_norm(a: &Array2<C64>) -> LinalgResult<f64> { Ok(singular_values(a)?.sum()) }

/// Orthonormal basis of the column span of `m`, dropping directions whose
/// Gram eigenvalue falls below `tol` times the largest.
pub fn orth_columns(m: &Array2<C64>, tol: f64) -> LinalgResult<Array2<C64>> {
    if m.ncols() == 0 {
        return Ok(Array2::zeros((m.nrows(), 0)));
    }
    let (u, sv, _) = svd(m)?;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    let keep = sv.iter().filter(|&&x| top > 0.0 && x * x > tol * top * top).count();
    Ok(u.slice(s![.., ..keep]).to_owned())
}

/// Projector onto the column span of an isometry.
pub fn projector(basis: &Array2<C64>) -> Array2<C64> { basis.dot(&dagger(basis)) }

/// Partial trace over the first factor of a `(dl*dr)`-dimensional operator.
pub fn trace_left(rho: &Array2<C64>, dl: usize, dr: usize) -> Array2<C64> {
    let mut out = Array2::zeros((dr, dr));
    for a in 0..dl {
        out += &rho.slice(s![a * dr..(a + 1) * dr, a * dr..(a + 1) * dr]);
    }
    out
}

/// Partial trace over the second factor.
pub fn trace_right(rho: &Array2<C64>, dl: usize, dr: usize) -> Array2<C64> {
    let mut out = Array2::zeros((dl, dl));
    for a in 0..dl {
        for b in 0..dl {
            let mut z = ZERO;
            for k in 0..dr {
                z += rho[[a * dr + k, b * dr + k]];
            }
            out[[a, b]] = z;
        }
    }
    out
}

pub fn outer(u: ArrayView1<C64>, v: ArrayView1<C64>) -> Array2<C64> {
    let mut out = Array2::zeros((u.len(), v.len()));
    for (i, &a) in u.iter().enumerate() {
        for (j, &b) in v.iter().enumerate() {
            out[[i, j]] = a * b.conj();
        }
    }
    out
}

pub fn is_hermitian(a: &Array2<C64>, tol: f64) -> bool {
    a.is_square() && a.iter().zip(a.t().iter()).all(|(x, y)| (x - y.conj()).norm() <= tol)
}

pub fn random_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array1<C64> {
    let mut v: Array1<C64> =
        (0..n).map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
    let nv = norm(v.view());
    v.mapv_inplace(|z| z / nv);
    v
}

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize) -> Array2<C64> {
    Array2::from_shape_fn((m, n), |_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array2<C64> {
    hermitian_part(&random_matrix(rng, n, n))
}

/// Haar-ish isometry with `k` orthonormal columns.
pub fn random_isometry<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Array2<C64> {
    let (q, _) = qr_positive(&random_matrix(rng, n, k)).expect("QR of a Gaussian matrix");
    q
}

/// Random density matrix of the given rank (trace one).
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, n: usize, rank: usize) -> Array2<C64> {
    let m = random_matrix(rng, n, rank);
    let mut rho = m.dot(&dagger(&m));
    let t = trace(&rho).re;
    rho.mapv_inplace(|z| z / t);
    rho
}

/// Column `j` of a matrix as an owned vector.
pub fn col(a: &Array2<C64>, j: usize) -> Array1<C64> { a.column(j).to_owned() }

/// Stacks vectors as the columns of a matrix.
pub fn stack_columns(dim: usize, cols: &[Array1<C64>]) -> Array2<C64> {
    let mut m = Array2::zeros((dim, cols.len()));
    for (j, v) in cols.iter().enumerate() {
        m.column_mut(j).assign(v);
    }
    m
}

pub fn max_abs_diff(a: ArrayView2<C64>, b: ArrayView2<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Multiplies `v` by the phase that makes its first entry above
/// `1e-10 * max|v_k|` real and positive; returns the applied phase.
pub fn fix_phase(v: &mut Array1<C64>) -> C64 {
    let top = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if top == 0.0 {
        return ONE;
    }
    let first = v.iter().find(|z| z.norm() > 1e-10 * top).cloned().unwrap_or(ONE);
    let ph = first.conj() / first.norm();
    v.mapv_inplace(|z| z * ph);
    ph
}
