//! Span coordinates and the two convex programs of the algorithm.

pub mod ipm;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::linalg::{self, c, dagger, LinalgError, ONE, ZERO};
use crate::mps::{self, Mpo, Mps, MpsError};

pub use ipm::{IpmOptions, Status};
use ipm::{Patch, Problem, SparseOp};

/// Gram eigenvalues below this fraction of the largest are dropped.
pub const GRAM_TOL: f64 = 1e-10;
/// Spans over at most this many amplitudes are handled densely.
pub const DENSE_SPAN_LIMIT: usize = 1 << 12;
/// Residual outside the span tolerated for previous states.
pub const SPAN_RESIDUAL_TOL: f64 = 1e-8;
pub const TIE_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum SdpError {
    #[error("span of an empty set")]
    EmptySpan,
    #[error("all states are numerically zero")]
    ZeroSpan,
    #[error("state lies outside the span (residual {0:e})")]
    NotInSpan(f64),
    #[error("state lies inside the span of the previous states (remaining norm {0:e})")]
    InsideSpan(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Ipm(#[from] ipm::IpmError),
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type SdpResult<T> = Result<T, SdpError>;

/// Orthonormal basis `e_k = Σ_a coeffs[a, k] s_a` of the span of a set of
/// MPS on a common number of sites.
#[derive(Clone, Debug)]
pub struct SpanBasis {
    d: usize,
    sites: usize,
    inputs: Vec<Mps>,
    coeffs: Array2<C64>,
    /// Basis as dense columns when the space is small.
    dense: Option<Array2<C64>>,
    gram_eigenvalues: Vec<f64>,
    /// Operators projected at construction, in the order given.
    pub projected: Vec<Array2<C64>>,
}

fn dense_columns(states: &[Mps]) -> Array2<C64> {
    let cols: Vec<Array1<C64>> = states.iter().map(|s| s.to_dense()).collect();
    linalg::stack_columns(cols[0].len(), &cols)
}

/// `span` with the given operators projected.
pub fn build_span(states: &[Mps], ops: &[&Mpo]) -> SdpResult<SpanBasis> {
    let mut b = SpanBasis::new(states)?;
    b.projected = ops.iter().map(|o| b.project(o)).collect::<SdpResult<_>>()?;
    Ok(b)
}

impl SpanBasis {
    pub fn new(states: &[Mps]) -> SdpResult<Self> {
        let first = states.first().ok_or(SdpError::EmptySpan)?;
        let (d, sites) = (first.phys_dim(), first.len());
        if states.iter().any(|s| s.len() != sites || s.phys_dim() != d) {
            return Err(SdpError::Shape("span members differ in length or physical dimension".into()));
        }
        let dim = d.pow(sites as u32);
        let k = states.len();
        if dim <= DENSE_SPAN_LIMIT {
            // thin SVD of the amplitude matrix; avoids a k × k Gram matrix for large sets
            let m = dense_columns(states);
            let (u, sv, vt) = linalg::svd(&m)?;
            let top = sv.iter().cloned().fold(0.0, f64::max);
            if top <= mps::ZERO_NORM {
                return Err(SdpError::ZeroSpan);
            }
            let r = sv.iter().filter(|&&x| x * x > GRAM_TOL * top * top).count();
            let mut q = u.slice(ndarray::s![.., ..r]).to_owned();
            let mut coeffs = Array2::zeros((k, r));
            for j in 0..r {
                let mut col = q.column(j).to_owned();
                let ph = linalg::fix_phase(&mut col);
                q.column_mut(j).assign(&col);
                for a in 0..k {
                    coeffs[[a, j]] = vt[[j, a]].conj() * ph / sv[j];
                }
            }
            return Ok(SpanBasis {
                d,
                sites,
                inputs: states.to_vec(),
                coeffs,
                dense: Some(q),
                gram_eigenvalues: sv.iter().take(r).map(|x| x * x).collect(),
                projected: Vec::new(),
            });
        }
        let mut gram = Array2::zeros((k, k));
        for a in 0..k {
            for b in a..k {
                let z = mps::overlap(&states[a], &states[b])?;
                gram[[a, b]] = z;
                gram[[b, a]] = z.conj();
            }
        }
        let (w, v) = linalg::eigh(&gram)?;
        let top = w.iter().cloned().fold(0.0, f64::max);
        if top <= mps::ZERO_NORM * mps::ZERO_NORM {
            return Err(SdpError::ZeroSpan);
        }
        let keep: Vec<usize> = (0..k).rev().filter(|&j| w[j] > GRAM_TOL * top).collect();
        let mut coeffs = Array2::zeros((k, keep.len()));
        for (col, &j) in keep.iter().enumerate() {
            let mut cv = v.column(j).mapv(|z| z / w[j].sqrt());
            linalg::fix_phase(&mut cv);
            coeffs.column_mut(col).assign(&cv);
        }
        let dense = None;
        Ok(SpanBasis {
            d,
            sites,
            inputs: states.to_vec(),
            coeffs,
            dense,
            gram_eigenvalues: keep.iter().map(|&j| w[j]).collect(),
            projected: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize { self.coeffs.ncols() }
    pub fn sites(&self) -> usize { self.sites }
    pub fn phys_dim(&self) -> usize { self.d }
    pub fn gram_eigenvalues(&self) -> &[f64] { &self.gram_eigenvalues }

    /// Basis as dense columns, computed on demand for large spaces.
    pub fn dense_basis(&self) -> Array2<C64> {
        match &self.dense {
            Some(q) => q.clone(),
            None => dense_columns(&self.inputs).dot(&self.coeffs),
        }
    }

    /// Gram matrix of the basis itself.
    pub fn basis_gram(&self) -> SdpResult<Array2<C64>> {
        match &self.dense {
            Some(q) => Ok(dagger(q).dot(q)),
            None => {
                let k = self.inputs.len();
                let mut g = Array2::zeros((k, k));
                for a in 0..k {
                    for b in 0..k {
                        g[[a, b]] = mps::overlap(&self.inputs[a], &self.inputs[b])?;
                    }
                }
                Ok(dagger(&self.coeffs).dot(&g).dot(&self.coeffs))
            }
        }
    }

    /// The state with the given coordinates.
    pub fn state(&self, coords: &Array1<C64>) -> SdpResult<Mps> {
        match &self.dense {
            Some(q) => Ok(Mps::from_dense(self.d, self.sites, &q.dot(coords))?),
            None => {
                let w = self.coeffs.dot(coords);
                Ok(mps::linear_combine(&self.inputs, w.as_slice().expect("contiguous"))?.state.compact()?)
            }
        }
    }

    pub fn basis_states(&self) -> SdpResult<Vec<Mps>> {
        (0..self.dim())
            .map(|k| {
                let mut e = Array1::zeros(self.dim());
                e[k] = ONE;
                self.state(&e)
            })
            .collect()
    }

    /// Coordinates `⟨e_k|ψ⟩` and the norm of the part outside the span.
    pub fn coordinates(&self, psi: &Mps) -> SdpResult<(Array1<C64>, f64)> {
        match &self.dense {
            Some(q) => {
                let v = psi.to_dense();
                let coords = dagger(q).dot(&v);
                let rest = &v - &q.dot(&coords);
                Ok((coords, linalg::norm(rest.view())))
            }
            None => {
                let ov: Array1<C64> = self.inputs.iter().map(|s| mps::overlap(s, psi)).collect::<Result<_, _>>()?;
                let coords = dagger(&self.coeffs).dot(&ov);
                let inside: f64 = coords.iter().map(|z| z.norm_sqr()).sum();
                let total = psi.norm().powi(2);
                Ok((coords, (total - inside).max(0.0).sqrt()))
            }
        }
    }

    /// `⟨e_k|O|e_l⟩`.
    pub fn project(&self, op: &Mpo) -> SdpResult<Array2<C64>> {
        if op.len() != self.sites {
            return Err(SdpError::Shape(format!("operator on {} sites, span on {}", op.len(), self.sites)));
        }
        let p = match &self.dense {
            Some(q) if q.nrows() <= 1 << 10 => dagger(q).dot(&op.to_dense()).dot(q),
            _ => {
                let k = self.inputs.len();
                let mut g = Array2::zeros((k, k));
                for a in 0..k {
                    for b in 0..k {
                        g[[a, b]] = mps::matrix_element(&self.inputs[a], op, &self.inputs[b])?;
                    }
                }
                dagger(&self.coeffs).dot(&g).dot(&self.coeffs)
            }
        };
        Ok(if op.is_hermitian() { linalg::hermitian_part(&p) } else { p })
    }

    pub fn project_dense(&self, op: &Array2<C64>) -> Array2<C64> {
        let q = self.dense_basis();
        dagger(&q).dot(op).dot(&q)
    }

    /// `R[a][b] = Tr_{[1,k−1]} |e_a⟩⟨e_b|`, each `d × d`.
    pub fn reduced_blocks(&self) -> SdpResult<Vec<Vec<Array2<C64>>>> {
        let m = self.dim();
        let d = self.d;
        if self.sites == 0 {
            return Err(SdpError::Shape("reduced blocks need at least one site".into()));
        }
        match &self.dense {
            Some(q) => {
                let rest = q.nrows() / d;
                let mats: Vec<Array2<C64>> = (0..m)
                    .map(|a| q.column(a).to_owned().into_shape_with_order((rest, d)).expect("reshape"))
                    .collect();
                Ok((0..m)
                    .map(|a| (0..m).map(|b| mats[a].t().dot(&mats[b].mapv(|z| z.conj()))).collect())
                    .collect())
            }
            None => {
                let k = self.inputs.len();
                let mut raw = vec![vec![Array2::zeros((d, d)); k]; k];
                for a in 0..k {
                    for b in 0..k {
                        raw[a][b] = mps::reduced_last_site(&self.inputs[a], &self.inputs[b])?;
                    }
                }
                let mut out = vec![vec![Array2::zeros((d, d)); m]; m];
                for x in 0..m {
                    for y in 0..m {
                        let mut acc = Array2::zeros((d, d));
                        for a in 0..k {
                            for b in 0..k {
                                let w = self.coeffs[[a, x]] * self.coeffs[[b, y]].conj();
                                if w != ZERO {
                                    acc.scaled_add(w, &raw[a][b]);
                                }
                            }
                        }
                        out[x][y] = acc;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Solution of either program in span coordinates.
#[derive(Clone, Debug, Serialize)]
pub struct ProgramSolution {
    #[serde(skip)]
    pub sigma: Array2<C64>,
    pub objective: f64,
    pub residuals: BTreeMap<String, f64>,
    pub status: Status,
    pub gap: f64,
    pub iterations: usize,
}

impl ProgramSolution {
    /// Eigenpairs of `σ` at or above `threshold`, descending, and their mass.
    pub fn support(&self, threshold: f64) -> SdpResult<(Vec<(f64, Array1<C64>)>, f64)> {
        let (w, v) = linalg::eigh(&self.sigma)?;
        let mut out = Vec::new();
        let mut mass = 0.0;
        for j in (0..w.len()).rev() {
            if w[j] >= threshold {
                let mut col = v.column(j).to_owned();
                linalg::fix_phase(&mut col);
                mass += w[j];
                out.push((w[j], col));
            }
        }
        Ok((out, mass))
    }
}

/// Data of one instance of the trim program over `Span ⊗ C^B`, bond index
/// outer in `σ` and inner in `X`.
#[derive(Clone, Debug)]
pub struct TrimSpec {
    pub bond: usize,
    /// `H_{[1,i]}` in span coordinates.
    pub h_left: Array2<C64>,
    /// Objective operator in span coordinates (applied as `O ⊗ 1_B`).
    pub objective: Array2<C64>,
    /// Upper bound on `Tr[(H_L ⊗ 1) σ]`; `None` drops the constraint.
    pub energy_bound: Option<f64>,
    /// Boundary contraction target on `C^d ⊗ C^B`.
    pub target: Array2<C64>,
    /// Trace-norm radius (`ξ/2`).
    pub radius: f64,
}

/// `Tr_{[1,i−1]} σ` on `C^d ⊗ C^B`.
pub fn contract_sigma(reduced: &[Vec<Array2<C64>>], d: usize, bond: usize, sigma: &Array2<C64>) -> Array2<C64> {
    let m = reduced.len();
    let mut out = Array2::zeros((d * bond, d * bond));
    for b1 in 0..bond {
        for b2 in 0..bond {
            for a1 in 0..m {
                for a2 in 0..m {
                    let z = sigma[[b1 * m + a1, b2 * m + a2]];
                    if z == ZERO {
                        continue;
                    }
                    let r = &reduced[a1][a2];
                    for k in 0..d {
                        for l in 0..d {
                            out[[k * bond + b1, l * bond + b2]] += z * r[[k, l]];
                        }
                    }
                }
            }
        }
    }
    out
}

fn kron_identity(op: &Array2<C64>, bond: usize) -> Array2<C64> { linalg::kron(&linalg::identity(bond), op) }

/// Trim program: `min Tr[(O ⊗ 1)σ]` subject to the energy and boundary
/// contraction constraints, `Tr σ = 1`, `σ ⪰ 0`. Infeasibility is reported
/// through the status.
pub fn solve_trim_program(span: &SpanBasis, spec: &TrimSpec, opts: &IpmOptions) -> SdpResult<ProgramSolution> {
    let reduced = span.reduced_blocks()?;
    solve_trim_with(&reduced, span.phys_dim(), spec, opts)
}

pub fn solve_trim_with(reduced: &[Vec<Array2<C64>>], d: usize, spec: &TrimSpec, opts: &IpmOptions) -> SdpResult<ProgramSolution> {
    let m = reduced.len();
    let bond = spec.bond;
    let nb = d * bond;
    if spec.target.dim() != (nb, nb) || spec.h_left.dim() != (m, m) || spec.objective.dim() != (m, m) {
        return Err(SdpError::Shape("trim program data".into()));
    }
    let x = &spec.target;
    let hermitian_target = linalg::max_abs_diff(x.view(), dagger(x).view()) < 1e-14;

    // blocks: σ, then (P, Q) or W, then slacks
    let mut blocks = vec![m * bond];
    if hermitian_target {
        blocks.extend([nb, nb]);
    } else {
        blocks.push(2 * nb);
    }
    let tn_slack = blocks.len();
    blocks.push(1);
    let energy_slack = spec.energy_bound.map(|_| {
        blocks.push(1);
        tn_slack + 1
    });

    let mut objective = SparseOp::default();
    for b in 0..bond {
        objective.push(0, Patch::new(b * m, b * m, spec.objective.clone()));
    }
    let mut cons = Vec::new();
    let mut rhs = Vec::new();

    let mut tr = SparseOp::default();
    for b in 0..bond {
        tr.push(0, Patch::new(b * m, b * m, linalg::identity(m)));
    }
    cons.push(tr);
    rhs.push(1.0);

    if let (Some(bound), Some(slot)) = (spec.energy_bound, energy_slack) {
        let mut en = SparseOp::default();
        for b in 0..bond {
            en.push(0, Patch::new(b * m, b * m, spec.h_left.clone()));
        }
        en.push(slot, Patch::entry(0, 0, ONE));
        cons.push(en);
        rhs.push(bound);
    }

    // entry (p, q) of Tr_{[1,i−1]}σ is Tr(N σ), N = E_{b2 b1} ⊗ W, W[a2, a1] = R[a1][a2][k, l]
    let entry_matrix = |k: usize, l: usize| -> Array2<C64> {
        let mut w = Array2::zeros((m, m));
        for a1 in 0..m {
            for a2 in 0..m {
                w[[a2, a1]] = reduced[a1][a2][[k, l]];
            }
        }
        w
    };
    let i = c(0.0, 1.0);
    for p in 0..nb {
        let (k, b1) = (p / bond, p % bond);
        let q_range: Vec<usize> = if hermitian_target { (p..nb).collect() } else { (0..nb).collect() };
        for q in q_range {
            let (l, b2) = (q / bond, q % bond);
            let w = entry_matrix(k, l);
            for imag in [false, true] {
                if imag && hermitian_target && p == q {
                    continue;
                }
                let phase = if imag { -i } else { ONE };
                let mut op = SparseOp::default();
                op.extend(0, Patch::hermitian(b2 * m, b1 * m, &w.mapv(|z| z * phase)));
                let unit = |z: C64| Array2::from_elem((1, 1), z);
                if hermitian_target {
                    op.extend(1, Patch::hermitian(q, p, &unit(-phase)));
                    op.extend(2, Patch::hermitian(q, p, &unit(phase)));
                } else {
                    op.extend(1, Patch::hermitian(nb + q, p, &unit(-phase)));
                }
                cons.push(op);
                rhs.push(if imag { x[[p, q]].im } else { x[[p, q]].re });
            }
        }
    }

    let mut tn = SparseOp::default();
    let (budget, scale) = if hermitian_target { (spec.radius, 1.0) } else { (2.0 * spec.radius, 1.0) };
    for blk in 1..tn_slack {
        tn.push(blk, Patch::new(0, 0, linalg::identity(blocks[blk]).mapv(|z| z * scale)));
    }
    tn.push(tn_slack, Patch::entry(0, 0, ONE));
    cons.push(tn);
    rhs.push(budget);

    let ub = linalg::eigvalsh(&spec.objective)?.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut o = opts.clone();
    o.objective_upper_bound = Some(ub.max(0.0));
    let problem = Problem { blocks, objective, constraints: cons, b: rhs };
    let sol = ipm::solve(&problem, &o)?;

    let sigma = linalg::hermitian_part(&sol.x[0]);
    let mut residuals = BTreeMap::new();
    residuals.insert("trace".to_string(), (linalg::trace(&sigma).re - 1.0).abs());
    let contracted = contract_sigma(reduced, d, bond, &sigma);
    let tn_val = linalg::trace_norm(&(&contracted - x))?;
    residuals.insert("trace_norm".to_string(), (tn_val - spec.radius).max(0.0));
    if let Some(bound) = spec.energy_bound {
        let e = linalg::trace(&kron_identity(&spec.h_left, bond).dot(&sigma)).re;
        residuals.insert("energy".to_string(), (e - bound).max(0.0));
    }
    let min_eig = linalg::eigvalsh(&sigma)?[0];
    residuals.insert("psd".to_string(), (-min_eig).max(0.0));
    let objective = linalg::trace(&kron_identity(&spec.objective, bond).dot(&sigma)).re;
    Ok(ProgramSolution {
        sigma,
        objective,
        residuals,
        status: sol.status,
        gap: (sol.primal_objective - sol.dual_objective).abs(),
        iterations: sol.iterations,
    })
}

/// Ground-state program by facial reduction: a PSD `σ` with `⟨γ|σ|γ⟩ = 0` is
/// supported on `γ^⊥`, so the optimum is the ground state of `H`
/// compressed to the span minus the previous states.
pub fn solve_gsa_program(span: &SpanBasis, h: &Array2<C64>, prev: &[Mps]) -> SdpResult<ProgramSolution> {
    let m = span.dim();
    if h.dim() != (m, m) {
        return Err(SdpError::Shape("projected Hamiltonian".into()));
    }
    let mut prev_coords = Vec::with_capacity(prev.len());
    for g in prev {
        let (cv, res) = span.coordinates(g)?;
        if res > SPAN_RESIDUAL_TOL * g.norm().max(1.0) {
            return Err(SdpError::NotInSpan(res));
        }
        prev_coords.push(cv);
    }
    let complement = orthogonal_complement(m, &prev_coords)?;
    if complement.ncols() == 0 {
        return Err(SdpError::InsideSpan(0.0));
    }
    let hc = linalg::hermitian_part(&dagger(&complement).dot(h).dot(&complement));
    let (w, v) = linalg::eigh(&hc)?;
    let mut coords = complement.dot(&v.column(0));
    linalg::fix_phase(&mut coords);
    let sigma = linalg::outer(coords.view(), coords.view());
    let mut residuals = BTreeMap::new();
    residuals.insert("trace".to_string(), (linalg::trace(&sigma).re - 1.0).abs());
    let worst = prev_coords.iter().map(|g| linalg::quad(g.view(), &sigma, g.view()).re.abs()).fold(0.0, f64::max);
    residuals.insert("previous_overlap".to_string(), worst);
    Ok(ProgramSolution { sigma, objective: w[0], residuals, status: Status::Optimal, gap: 0.0, iterations: 0 })
}

/// Orthonormal basis of the complement of `vs` in `C^m`.
pub fn orthogonal_complement(m: usize, vs: &[Array1<C64>]) -> SdpResult<Array2<C64>> {
    if vs.is_empty() {
        return Ok(linalg::identity(m));
    }
    let a = linalg::stack_columns(m, vs);
    let p = a.dot(&dagger(&a));
    let (w, v) = linalg::eigh(&linalg::hermitian_part(&p))?;
    let top = w.iter().cloned().fold(0.0, f64::max).max(1.0);
    let cols: Vec<usize> = (0..m).filter(|&j| w[j] <= 1e-10 * top).collect();
    let mut out = Array2::zeros((m, cols.len()));
    for (o, &j) in cols.iter().enumerate() {
        out.column_mut(o).assign(&v.column(j));
    }
    Ok(out)
}

/// Pure state extracted from a low-energy mixed state.
#[derive(Clone, Debug)]
pub struct Demixed {
    pub coords: Array1<C64>,
    pub weight: f64,
    pub energy: f64,
}

/// Leading eigenvector of `σ`, ties within [`TIE_TOL`] broken by lower
/// projected energy. `h` is in span coordinates and absolute units.
pub fn demix(sigma: &Array2<C64>, h: &Array2<C64>, eps0: f64, eps: f64, delta: f64, g: usize) -> SdpResult<Demixed> {
    let mixed = linalg::trace(&h.dot(sigma)).re;
    let allowed = eps0 + delta * eps / (2 * g + 1) as f64;
    if delta > 1.0 / (3.0 * g as f64) {
        return Err(SdpError::Precondition(format!("Δ = {delta} exceeds 1/3g")));
    }
    if mixed > allowed + 1e-12 {
        return Err(SdpError::Precondition(format!("Tr(σH) = {mixed} exceeds {allowed}")));
    }
    leading_eigenvector(sigma, h)
}

/// The demixing selection rule without the energy precondition.
pub fn leading_eigenvector(sigma: &Array2<C64>, h: &Array2<C64>) -> SdpResult<Demixed> {
    let (w, v) = linalg::eigh(&linalg::hermitian_part(sigma))?;
    let top = w[w.len() - 1];
    let mut best: Option<Demixed> = None;
    for j in (0..w.len()).rev().take_while(|&j| w[j] >= top - TIE_TOL) {
        let mut col = v.column(j).to_owned();
        linalg::fix_phase(&mut col);
        let e = linalg::quad(col.view(), h, col.view()).re;
        if best.as_ref().is_none_or(|b| e < b.energy) {
            best = Some(Demixed { coords: col, weight: w[j], energy: e });
        }
    }
    Ok(best.expect("nonempty spectrum"))
}

/// `v` with its component in `span(prev)` removed, normalized, and the
/// overlap `β = ‖P v‖/‖v‖` that was removed.
pub fn orthogonalize(v: &Mps, prev: &[Mps]) -> SdpResult<(Mps, f64)> {
    let nv = v.norm();
    if nv <= mps::ZERO_NORM {
        return Err(SdpError::Mps(MpsError::ZeroNorm));
    }
    if prev.is_empty() {
        return Ok((v.normalized()?, 0.0));
    }
    let span = SpanBasis::new(prev)?;
    let (coords, rest) = span.coordinates(v)?;
    if rest / nv < 1e-10 {
        return Err(SdpError::InsideSpan(rest / nv));
    }
    let beta = (coords.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt() / nv;
    let inside = span.state(&coords)?;
    let out = if v.len() > 0 && v.phys_dim().pow(v.len() as u32) <= DENSE_SPAN_LIMIT {
        let dv = v.to_dense() - inside.to_dense();
        Mps::from_dense(v.phys_dim(), v.len(), &dv)?
    } else {
        mps::linear_combine(&[v.clone(), inside], &[ONE, -ONE])?.state.compact()?
    };
    Ok((out.normalized()?, beta))
}

/// Least eigenvalue of a Hermitian matrix restricted to the span of the
/// columns of `basis`, with its eigenvector in the ambient coordinates.
pub fn restricted_ground(h: &Array2<C64>, basis: &Array2<C64>) -> SdpResult<(f64, Array1<C64>)> {
    let hc = linalg::hermitian_part(&dagger(basis).dot(h).dot(basis));
    let (w, v) = linalg::eigh(&hc)?;
    Ok((w[0], basis.dot(&v.column(0))))
}
