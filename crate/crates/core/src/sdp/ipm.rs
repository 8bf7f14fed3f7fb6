//! Primal-dual interior-point method for small complex Hermitian SDPs
//!
//! ```text
//!   min ⟨C, X⟩  s.t.  ⟨A_k, X⟩ = b_k,  X ⪰ 0      (⟨A, X⟩ = Re Tr(A X))
//!   max b·y     s.t.  Σ_k y_k A_k + S = C,  S ⪰ 0
//! ```
//!
//! `X` is block diagonal. Constraint matrices are stored block-sparse, which
//! keeps the Schur complement cheap for the partial-trace constraints of the
//! trim program. Search direction is HKM with a Mehrotra corrector.

use ndarray::{s, Array1, Array2};
use ndarray_linalg::Solve;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::linalg::{self, c, dagger, LinalgError};

/// Dense sub-block `m` placed at `(row, col)` inside one variable block.
#[derive(Clone, Debug)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub m: Array2<C64>,
}

impl Patch {
    pub fn new(row: usize, col: usize, m: Array2<C64>) -> Self { Patch { row, col, m } }

    /// The Hermitian part `(N + N†)/2` of a single sub-block `N`.
    pub fn hermitian(row: usize, col: usize, m: &Array2<C64>) -> Vec<Patch> {
        let half = m.mapv(|z| z * 0.5);
        vec![Patch::new(row, col, half.clone()), Patch::new(col, row, dagger(&half))]
    }

    pub fn entry(row: usize, col: usize, z: C64) -> Patch { Patch::new(row, col, Array2::from_elem((1, 1), z)) }
}

/// A Hermitian operator on the block-diagonal variable, as patches per block.
#[derive(Clone, Debug, Default)]
pub struct SparseOp {
    pub parts: Vec<(usize, Patch)>,
}

impl SparseOp {
    pub fn push(&mut self, block: usize, p: Patch) { self.parts.push((block, p)); }

    pub fn extend(&mut self, block: usize, ps: Vec<Patch>) {
        for p in ps {
            self.parts.push((block, p));
        }
    }

    fn dot(&self, x: &[Array2<C64>]) -> f64 {
        let mut acc = 0.0;
        for (b, p) in &self.parts {
            let (h, w) = p.m.dim();
            let sub = x[*b].slice(s![p.col..p.col + w, p.row..p.row + h]);
            for i in 0..h {
                for j in 0..w {
                    acc += (p.m[[i, j]] * sub[[j, i]]).re;
                }
            }
        }
        acc
    }

    fn add_to(&self, out: &mut [Array2<C64>], scale: f64) {
        for (b, p) in &self.parts {
            let (h, w) = p.m.dim();
            let mut sub = out[*b].slice_mut(s![p.row..p.row + h, p.col..p.col + w]);
            sub.zip_mut_with(&p.m, |o, &z| *o += z * scale);
        }
    }

    fn fro_sq(&self, sizes: &[usize]) -> f64 {
        let mut dense: Vec<Array2<C64>> = sizes.iter().map(|&n| Array2::zeros((n, n))).collect();
        self.add_to(&mut dense, 1.0);
        dense.iter().map(|m| m.iter().map(|z| z.norm_sqr()).sum::<f64>()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub blocks: Vec<usize>,
    pub objective: SparseOp,
    pub constraints: Vec<SparseOp>,
    pub b: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Optimal,
    Infeasible,
    /// Iteration limit or numerical breakdown before the tolerances were met.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct IpmOptions {
    pub max_iter: usize,
    pub gap_tol: f64,
    pub feas_tol: f64,
    /// Known upper bound on the primal optimum; a dual objective above it
    /// certifies infeasibility.
    pub objective_upper_bound: Option<f64>,
}

impl Default for IpmOptions {
    fn default() -> Self { IpmOptions { max_iter: 120, gap_tol: 1e-11, feas_tol: 1e-10, objective_upper_bound: None } }
}

#[derive(Clone, Debug)]
pub struct IpmSolution {
    pub x: Vec<Array2<C64>>,
    pub y: Array1<f64>,
    pub s: Vec<Array2<C64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub status: Status,
}

#[derive(Debug, thiserror::Error)]
pub enum IpmError {
    #[error("constraint count {0} does not match right-hand side length {1}")]
    Shape(usize, usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn inner(a: &[Array2<C64>], b: &[Array2<C64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y.t().iter()).map(|(p, q)| (p * q).re).sum::<f64>())
        .sum()
}

fn herm(m: &Array2<C64>) -> Array2<C64> { linalg::hermitian_part(m) }

/// Largest `α` with `X + αΔ ⪰ 0`, given `X^{-1/2}`.
fn max_step(inv_sqrt: &[Array2<C64>], delta: &[Array2<C64>]) -> Result<f64, LinalgError> {
    let mut alpha = f64::INFINITY;
    for (r, d) in inv_sqrt.iter().zip(delta) {
        let z = r.dot(d).dot(r);
        let lmin = linalg::eigvalsh(&z)?[0];
        if lmin < 0.0 {
            alpha = alpha.min(-1.0 / lmin);
        }
    }
    Ok(alpha)
}

struct Factored {
    inv: Vec<Array2<C64>>,
    inv_sqrt: Vec<Array2<C64>>,
}

fn factor(blocks: &[Array2<C64>]) -> Result<Factored, LinalgError> {
    let mut inv = Vec::with_capacity(blocks.len());
    let mut inv_sqrt = Vec::with_capacity(blocks.len());
    for m in blocks {
        let (w, v) = linalg::eigh(m)?;
        let floor = 1e-300;
        inv.push(linalg::spectral(&w, &v, |e| c(1.0 / e.max(floor), 0.0)));
        inv_sqrt.push(linalg::spectral(&w, &v, |e| c(1.0 / e.max(floor).sqrt(), 0.0)));
    }
    Ok(Factored { inv, inv_sqrt })
}

struct Ctx<'a> {
    p: &'a Problem,
    sizes: &'a [usize],
    b: Array1<f64>,
    /// `⟨A_k, A_l⟩`, used to restore `A(ΔX) = r_p` after the Newton solve.
    gram: Array2<f64>,
}

impl Ctx<'_> {
    fn zeros(&self) -> Vec<Array2<C64>> { self.sizes.iter().map(|&n| Array2::zeros((n, n))).collect() }

    fn a_of(&self, mats: &[Array2<C64>]) -> Array1<f64> { Array1::from_iter(self.p.constraints.iter().map(|a| a.dot(mats))) }

    fn at_of(&self, v: &Array1<f64>) -> Vec<Array2<C64>> {
        let mut out = self.zeros();
        for (k, a) in self.p.constraints.iter().enumerate() {
            if v[k] != 0.0 {
                a.add_to(&mut out, v[k]);
            }
        }
        out
    }

    /// `M_kl = ⟨A_k, L A_l R⟩`.
    fn schur(&self, left: &[Array2<C64>], right: &[Array2<C64>]) -> Array2<f64> {
        let m = self.p.constraints.len();
        let mut schur = Array2::<f64>::zeros((m, m));
        for (l, al) in self.p.constraints.iter().enumerate() {
            let mut g = self.zeros();
            for (blk, patch) in &al.parts {
                let (h, w) = patch.m.dim();
                let lm = left[*blk].slice(s![.., patch.row..patch.row + h]).dot(&patch.m);
                let rm = right[*blk].slice(s![patch.col..patch.col + w, ..]);
                g[*blk] += &lm.dot(&rm);
            }
            for (k, ak) in self.p.constraints.iter().enumerate().skip(l) {
                let v = ak.dot(&g);
                schur[[k, l]] = v;
                schur[[l, k]] = v;
            }
        }
        schur
    }
}

fn solve_sym(mat: &Array2<f64>, rhs: &Array1<f64>) -> Result<Array1<f64>, LinalgError> {
    mat.solve(rhs).or_else(|_| {
        let m = mat.nrows();
        let mut reg = mat.clone();
        let scale = (0..m).map(|i| mat[[i, i]].abs()).fold(0.0, f64::max).max(1.0);
        for i in 0..m {
            reg[[i, i]] += 1e-14 * scale;
        }
        reg.solve(rhs).map_err(|e| LinalgError::Lapack(e.to_string()))
    })
}

type Step = (Vec<Array2<C64>>, Array1<f64>, Vec<Array2<C64>>, f64, f64);

/// One Mehrotra predictor-corrector step.
fn newton_step(ctx: &Ctx, x: &[Array2<C64>], sm: &[Array2<C64>], rp: &Array1<f64>, rd: &[Array2<C64>], mu: f64) -> Result<Step, LinalgError> {
    let nblk = ctx.sizes.len();
    let ntot: usize = ctx.sizes.iter().sum();
    let fx = factor(x)?;
    let fs = factor(sm)?;
    let sinv = &fs.inv;
    let schur = ctx.schur(x, sinv);
    let xrd: Vec<Array2<C64>> = (0..nblk).map(|k| x[k].dot(&rd[k]).dot(&sinv[k])).collect();
    let a_xrd = ctx.a_of(&xrd);
    let a_sinv = ctx.a_of(sinv);
    let direction = |sigma_mu: f64, corr: Option<&[Array2<C64>]>| -> Result<(Vec<Array2<C64>>, Array1<f64>, Vec<Array2<C64>>), LinalgError> {
        let mut rhs = &ctx.b + &a_xrd - &a_sinv.mapv(|v| v * sigma_mu);
        if let Some(cc) = corr {
            rhs = rhs + ctx.a_of(cc);
        }
        let dy = solve_sym(&schur, &rhs)?;
        let atdy = ctx.at_of(&dy);
        let ds: Vec<Array2<C64>> = (0..nblk).map(|k| herm(&(&rd[k] - &atdy[k]))).collect();
        let mut dx: Vec<Array2<C64>> = (0..nblk)
            .map(|k| {
                let mut d = sinv[k].mapv(|z| z * sigma_mu) - &x[k] - x[k].dot(&ds[k]).dot(&sinv[k]);
                if let Some(cc) = corr {
                    d -= &cc[k];
                }
                herm(&d)
            })
            .collect();
        let miss = rp - &ctx.a_of(&dx);
        let fix = ctx.at_of(&solve_sym(&ctx.gram, &miss)?);
        for k in 0..nblk {
            dx[k] += &fix[k];
        }
        Ok((dx, dy, ds))
    };
    let (dxa, _, dsa) = direction(0.0, None)?;
    let ap = max_step(&fx.inv_sqrt, &dxa)?.min(1.0);
    let ad = max_step(&fs.inv_sqrt, &dsa)?.min(1.0);
    let xa: Vec<Array2<C64>> = (0..nblk).map(|k| &x[k] + &dxa[k].mapv(|z| z * ap)).collect();
    let sa: Vec<Array2<C64>> = (0..nblk).map(|k| &sm[k] + &dsa[k].mapv(|z| z * ad)).collect();
    let mu_aff = inner(&xa, &sa) / ntot as f64;
    let sigma = (mu_aff / mu).max(0.0).powi(3).min(1.0);
    let corr: Vec<Array2<C64>> = (0..nblk).map(|k| dxa[k].dot(&dsa[k]).dot(&sinv[k])).collect();
    let (dx, dy, ds) = direction(sigma * mu, Some(&corr))?;
    let ap = (0.98 * max_step(&fx.inv_sqrt, &dx)?).min(1.0);
    let ad = (0.98 * max_step(&fs.inv_sqrt, &ds)?).min(1.0);
    Ok((dx, dy, ds, ap, ad))
}

/// Residual level at which a stalled run still counts as solved.
pub const ACCEPT_TOL: f64 = 1e-8;

pub fn solve(p: &Problem, opts: &IpmOptions) -> Result<IpmSolution, IpmError> {
    let m = p.constraints.len();
    if m != p.b.len() {
        return Err(IpmError::Shape(m, p.b.len()));
    }
    let sizes = &p.blocks;
    let ntot: usize = sizes.iter().sum();
    let b = Array1::from(p.b.clone());
    let ones: Vec<Array2<C64>> = sizes.iter().map(|&n| linalg::identity(n)).collect();
    let mut ctx = Ctx { p, sizes, b: b.clone(), gram: Array2::zeros((0, 0)) };
    ctx.gram = ctx.schur(&ones, &ones);
    let mut cmat = ctx.zeros();
    p.objective.add_to(&mut cmat, 1.0);
    let c_norm = cmat.iter().map(linalg::fro_norm).map(|x| x * x).sum::<f64>().sqrt();
    let b_norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let a_norms: Vec<f64> = p.constraints.iter().map(|a| a.fro_sq(sizes).sqrt()).collect();

    let sq = (ntot as f64).sqrt();
    let mut xi = 10f64.max(sq);
    let mut eta = 10f64.max(sq).max(c_norm);
    for (k, an) in a_norms.iter().enumerate() {
        xi = xi.max(ntot as f64 * (1.0 + b[k].abs()) / (1.0 + an));
        eta = eta.max((1.0 + an.max(c_norm)) / sq);
    }
    let mut x: Vec<Array2<C64>> = sizes.iter().map(|&n| linalg::identity(n).mapv(|z| z * xi)).collect();
    let mut sm: Vec<Array2<C64>> = sizes.iter().map(|&n| linalg::identity(n).mapv(|z| z * eta)).collect();
    let mut y = Array1::<f64>::zeros(m);

    let mut best: Option<(f64, IpmSolution)> = None;
    let mut since_best = 0;
    for it in 0..opts.max_iter {
        let rp = &b - &ctx.a_of(&x);
        let aty = ctx.at_of(&y);
        let rd: Vec<Array2<C64>> = (0..sizes.len()).map(|k| &cmat[k] - &sm[k] - &aty[k]).collect();
        let pobj = inner(&cmat, &x);
        let dobj = b.dot(&y);
        let mu = inner(&x, &sm) / ntot as f64;
        let pinf = rp.iter().map(|v| v * v).sum::<f64>().sqrt() / (1.0 + b_norm);
        let dinf = rd.iter().map(linalg::fro_norm).map(|v| v * v).sum::<f64>().sqrt() / (1.0 + c_norm);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let snapshot = |status| IpmSolution {
            x: x.clone(),
            y: y.clone(),
            s: sm.clone(),
            primal_objective: pobj,
            dual_objective: dobj,
            primal_residual: pinf,
            dual_residual: dinf,
            gap,
            iterations: it,
            status,
        };
        if pinf < opts.feas_tol && dinf < opts.feas_tol && gap < opts.gap_tol {
            return Ok(snapshot(Status::Optimal));
        }
        if let Some(ub) = opts.objective_upper_bound {
            if dinf < 1e-7 && dobj > ub + 1e-6 * (1.0 + ub.abs()) {
                return Ok(snapshot(Status::Infeasible));
            }
        }
        let merit = pinf.max(dinf).max(gap);
        if best.as_ref().is_none_or(|(bm, _)| merit < *bm) {
            best = Some((merit, snapshot(Status::Stalled)));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= 8 {
                break;
            }
        }
        let Ok((dx, dy, ds, ap, ad)) = newton_step(&ctx, &x, &sm, &rp, &rd, mu) else {
            break;
        };
        if !(ap > 1e-12 || ad > 1e-12) {
            break;
        }
        for k in 0..sizes.len() {
            x[k] = herm(&(&x[k] + &dx[k].mapv(|z| z * ap)));
            sm[k] = herm(&(&sm[k] + &ds[k].mapv(|z| z * ad)));
        }
        y = &y + &dy.mapv(|v| v * ad);
    }
    let (merit, mut out) = best.expect("at least one iteration");
    out.status = if merit <= ACCEPT_TOL { Status::Optimal } else { Status::Stalled };
    Ok(out)
}
