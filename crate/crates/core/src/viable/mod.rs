//! Viable sets and the procedures that grow them one site at a time.

pub mod nets;
pub mod theory;

use std::fmt;
use std::time::Instant;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agsp::{AgspError, AgspOperator, PropagatorBackend};
use crate::linalg::{self, dagger, LinalgError};
use crate::model::{ModelError, StandardHamiltonian};
use crate::mps::{self, Mpo, Mps, MpsError};
use crate::oracle::Spectrum;
use crate::sdp::{self, IpmOptions, SdpError, SpanBasis, Status, TrimSpec};

pub use nets::{energy_net, round_up, ExhaustiveNet, NetMode, NetPoint, Provenance};

/// Schmidt coefficients below this are treated as zero.
pub const SCHMIDT_ZERO: f64 = 1e-12;

/// Relative truncation applied to `A|s⟩` products.
const PRODUCT_TOL: f64 = 1e-13;

#[derive(Debug, thiserror::Error)]
pub enum ViableError {
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("contraction net too large: bound {bound:e}, actual {actual:e}, cap {cap}")]
    NetTooLarge { bound: f64, actual: f64, cap: u64 },
    #[error("trim failed at h={h}, i={i}: no feasible net point among {}: {}", statuses.len(), statuses.join(", "))]
    TrimFailure { h: usize, i: usize, statuses: Vec<String> },
    #[error("{stage} at h={h}, i={i}: measured error {measured:e} exceeds target {target:e}")]
    TargetMissed { h: usize, i: usize, stage: Stage, measured: f64, target: f64 },
    #[error("{stage} at h={h}, i={i}: {source}")]
    InStage {
        h: usize,
        i: usize,
        stage: Stage,
        #[source]
        source: Box<ViableError>,
    },
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Agsp(#[from] AgspError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type ViableResult<T> = Result<T, ViableError>;

/// Which procedure produced a set.
#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initial,
    Extended,
    Trimmed,
    Truncated,
    Reduced,
    Final,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Initial => "initial",
            Stage::Extended => "extend",
            Stage::Trimmed => "trim",
            Stage::Truncated => "truncate",
            Stage::Reduced => "reduce",
            Stage::Final => "final_reduce",
        };
        f.write_str(s)
    }
}

/// Overlap error `δ` or energy error `Δ` (units of `ε`).
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum ErrorTag {
    Overlap(f64),
    Energy(f64),
}

#[derive(Clone, Debug)]
pub struct ViableSet {
    pub h: usize,
    pub i: usize,
    pub states: Vec<Mps>,
    pub s_bound: usize,
    pub b_bound: usize,
    pub error: ErrorTag,
    pub stage: Stage,
}

impl ViableSet {
    /// `{1}` on zero sites.
    pub fn initial(h: usize, d: usize) -> Self {
        ViableSet {
            h,
            i: 0,
            states: vec![Mps::unit(d)],
            s_bound: 1,
            b_bound: 1,
            error: ErrorTag::Energy(0.0),
            stage: Stage::Initial,
        }
    }

    pub fn len(&self) -> usize { self.states.len() }
    pub fn is_empty(&self) -> bool { self.states.is_empty() }
    pub fn max_bond(&self) -> usize { self.states.iter().map(|s| s.max_bond()).max().unwrap_or(1) }

    pub fn bounds_hold(&self) -> bool { self.len() <= self.s_bound && self.max_bond() <= self.b_bound }
}

#[derive(Clone, Debug)]
pub struct BoundaryContraction {
    pub cut: usize,
    pub bond: usize,
    /// Density operator on `C^d ⊗ C^B`, site index outer.
    pub matrix: Array2<C64>,
}

/// `cont(v) = Tr_{[1,i−1]} |ls(v)⟩⟨ls(v)|` for the normalized `v`.
pub fn boundary_contraction(v: &Mps, cut: usize) -> ViableResult<BoundaryContraction> {
    let n = v.len();
    if cut == 0 || cut > n {
        return Err(MpsError::BadCut { cut, len: n }.into());
    }
    if cut == n {
        let vn = v.normalized()?;
        return Ok(BoundaryContraction { cut, bond: 1, matrix: mps::reduced_last_site(&vn, &vn)? });
    }
    let sd = v.schmidt(cut)?;
    let keep: Vec<usize> = (0..sd.coefficients.len()).filter(|&j| sd.coefficients[j] > SCHMIDT_ZERO).collect();
    let bond = keep.len();
    let d = v.phys_dim();
    let mut matrix = Array2::zeros((d * bond, d * bond));
    for (bj, &j) in keep.iter().enumerate() {
        for (bk, &k) in keep.iter().enumerate() {
            let r = mps::reduced_last_site(&sd.left_vectors[j], &sd.left_vectors[k])?;
            let w = sd.coefficients[j] * sd.coefficients[k];
            for a in 0..d {
                for b in 0..d {
                    matrix[[a * bond + bj, b * bond + bk]] = r[[a, b]] * w;
                }
            }
        }
    }
    Ok(BoundaryContraction { cut, bond, matrix })
}

/// Left Schmidt vectors at the cut after site `i` of every state, with
/// zero coefficients dropped. At `i = n` these are the normalized states.
pub fn schmidt_vecs(i: usize, states: &[Mps]) -> ViableResult<Vec<Mps>> {
    let mut out = Vec::new();
    for s in states {
        if i == s.len() {
            out.push(s.normalized()?);
            continue;
        }
        let sd = s.schmidt(i)?;
        for (c, l) in sd.coefficients.iter().zip(sd.left_vectors) {
            if *c > SCHMIDT_ZERO {
                out.push(l);
            }
        }
    }
    Ok(out)
}

/// Element-wise product with a basis of the next site.
pub fn extend(s: &ViableSet) -> ViableSet {
    let d = s.states.first().map(|m| m.phys_dim()).unwrap_or(2);
    let states = s.states.iter().flat_map(|m| (0..d).map(move |k| m.append_basis(k))).collect();
    ViableSet {
        h: s.h,
        i: s.i + 1,
        states,
        s_bound: d * s.s_bound,
        b_bound: s.b_bound,
        error: s.error,
        stage: Stage::Extended,
    }
}

/// Desk-scale constants standing in for the proof constants.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ViableConfig {
    /// Trace-norm radius of the contraction constraint is `xi / 2`.
    pub xi: f64,
    /// Spacing of the energy net.
    pub energy_net_eta: f64,
    /// Bond dimension `B` of the contraction; derived from the witness when unset.
    pub bond: Option<usize>,
    /// Truncation error tolerated when reading `B` off the witness.
    pub bond_tol: f64,
    pub bond_max: usize,
    /// `B` without an oracle and without an explicit value.
    pub bond_default: usize,
    /// Bond `P` of `Truncate`.
    pub truncation_bond: usize,
    /// Eigenvalue threshold of `Trim`, divided by `g`.
    pub eig_threshold: f64,
    pub net_mode: NetMode,
    pub net_cap: u64,
    pub max_candidates: usize,
    /// `ζ` of the AGSP used by `Reduce`; also the energy target after it.
    pub reduce_zeta: f64,
    /// Allowed `‖A − K‖` for the `Reduce` AGSP.
    pub reduce_budget: f64,
    /// Allowed `‖A − K‖` for the `FinalReduce` AGSP.
    pub final_budget: f64,
    pub backend: PropagatorBackend,
    pub agsp_bond: Option<usize>,
    /// Overlap error targets after `Trim` and `Truncate`.
    pub trim_target: f64,
    pub truncate_target: f64,
    pub enforce_targets: bool,
    /// Replace the `Reduce` output by an orthonormal basis of its span.
    pub compact: bool,
    pub solver_gap: f64,
}

impl Default for ViableConfig {
    fn default() -> Self {
        ViableConfig {
            xi: 1e-3,
            energy_net_eta: 0.01,
            bond: None,
            bond_tol: 1e-3,
            bond_max: 8,
            bond_default: 2,
            truncation_bond: 32,
            eig_threshold: 1e-9,
            net_mode: NetMode::Candidates,
            net_cap: 10_000,
            max_candidates: 4,
            reduce_zeta: 0.01,
            reduce_budget: 1e-3,
            final_budget: 1e-3,
            backend: PropagatorBackend::Trotter,
            agsp_bond: None,
            trim_target: 0.01,
            truncate_target: 0.2,
            enforce_targets: true,
            compact: true,
            solver_gap: 1e-11,
        }
    }
}

/// Dense ground-space oracle used to pick witnesses and score stages.
#[derive(Clone, Debug)]
pub struct Probe {
    pub spectrum: Spectrum,
    pub h_dense: Array2<C64>,
    pub n: usize,
    pub d: usize,
    /// Previously constructed states, dense.
    pub prev: Vec<Array1<C64>>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WitnessMeasure {
    /// `1 − max ‖G v‖` over admissible witnesses.
    pub overlap_error: f64,
    /// `min ⟨v|H|v⟩ − ε₀` over admissible witnesses, absolute units.
    pub energy_excess: f64,
    pub space_dim: usize,
}

impl Probe {
    pub fn new(spectrum: Spectrum, h_dense: Array2<C64>, n: usize, d: usize) -> Self {
        Probe { spectrum, h_dense, n, d, prev: Vec::new() }
    }

    /// Orthonormal basis of `Span(S) ⊗ H_R` minus the previous states.
    pub fn witness_space(&self, states: &[Mps]) -> ViableResult<Array2<C64>> {
        let span = SpanBasis::new(states)?;
        self.witness_space_of(&span.dense_basis(), span.sites())
    }

    fn witness_space_of(&self, q: &Array2<C64>, i: usize) -> ViableResult<Array2<C64>> {
        let right = self.d.pow((self.n - i) as u32);
        let w = linalg::kron(q, &linalg::identity(right));
        if self.prev.is_empty() {
            return Ok(w);
        }
        let coords: Vec<Array1<C64>> = self.prev.iter().map(|g| dagger(&w).dot(g)).collect();
        Ok(w.dot(&sdp::orthogonal_complement(w.ncols(), &coords)?))
    }

    /// Best ground-space overlap and least energy over a witness space,
    /// with the maximizing vectors.
    pub fn extremes(&self, space: &Array2<C64>) -> ViableResult<(f64, Array1<C64>, f64, Array1<C64>)> {
        if space.ncols() == 0 {
            let z = Array1::zeros(space.nrows());
            return Ok((0.0, z.clone(), f64::INFINITY, z));
        }
        let gv = self.spectrum.ground_vectors();
        let m = dagger(&gv).dot(space);
        let (_, sv, vt) = linalg::svd(&m)?;
        let overlap = sv.first().cloned().unwrap_or(0.0);
        let best = if sv.is_empty() {
            space.column(0).to_owned()
        } else {
            space.dot(&vt.row(0).mapv(|z| z.conj()))
        };
        let (e, low) = sdp::restricted_ground(&self.h_dense, space)?;
        Ok((overlap, best, e, low))
    }

    pub fn measure(&self, states: &[Mps]) -> ViableResult<WitnessMeasure> {
        let space = self.witness_space(states)?;
        let (ov, _, e, _) = self.extremes(&space)?;
        Ok(WitnessMeasure { overlap_error: 1.0 - ov, energy_excess: e - self.spectrum.eps0, space_dim: space.ncols() })
    }
}

/// Everything a step needs besides the set itself.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub h: usize,
    pub g: usize,
    pub eps: f64,
    pub ham: &'a StandardHamiltonian,
    pub cfg: &'a ViableConfig,
    pub probe: Option<&'a Probe>,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Overlap,
    Energy,
}

#[derive(Clone, Debug, Serialize)]
pub struct PointReport {
    pub provenance: Provenance,
    pub y: f64,
    pub clamped: bool,
    pub status: Status,
    pub objective: f64,
    pub gap: f64,
    pub max_residual: f64,
    pub iterations: usize,
    pub kept_vectors: usize,
    pub kept_mass: f64,
    pub mass_meets_lambda: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrimReport {
    pub bond: usize,
    pub span_dim: usize,
    pub net_mode: NetMode,
    pub points: Vec<PointReport>,
    pub accepted: Vec<Provenance>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageRecord {
    pub h: usize,
    pub i: usize,
    pub stage: Stage,
    pub size: usize,
    pub max_bond: usize,
    pub s_bound: usize,
    pub b_bound: usize,
    pub metric: Metric,
    pub measured: Option<f64>,
    pub target: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trim: Option<TrimReport>,
    #[serde(skip)]
    pub wall_ms: f64,
}

/// Left state `ls(Trunc_B v)` in span coordinates (bond outer), its bond
/// and the Schmidt coefficients of `v`.
fn left_state(v: &Array1<C64>, q: &Array2<C64>, i: usize, n: usize, d: usize, bond: usize) -> ViableResult<(Array1<C64>, Vec<f64>)> {
    let rows = d.pow(i as u32);
    let cols = d.pow((n - i) as u32);
    let mat = v.clone().into_shape_with_order((rows, cols)).expect("reshape");
    let (u, sv, _) = linalg::svd(&mat)?;
    let m = q.ncols();
    let keep = bond.min(sv.len());
    let mut ls = Array1::zeros(m * bond);
    let mut norm = 0.0;
    for j in 0..keep {
        let a = dagger(q).dot(&u.column(j));
        for x in 0..m {
            ls[j * m + x] = a[x] * sv[j];
        }
        norm += sv[j] * sv[j];
    }
    let norm = norm.sqrt();
    ls.mapv_inplace(|z| z / norm);
    let total: f64 = sv.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok((ls, sv.iter().map(|x| x / total).collect()))
}

/// Smallest `D` whose truncation keeps overlap `≥ 1 − tol`.
fn rank_at(coeffs: &[f64], tol: f64) -> usize {
    let mut acc = 0.0;
    for (k, c) in coeffs.iter().enumerate() {
        acc += c * c;
        if 1.0 - acc.sqrt() <= tol {
            return k + 1;
        }
    }
    coeffs.len().max(1)
}

fn trace_distance(a: &Array2<C64>, b: &Array2<C64>) -> f64 { linalg::trace_norm(&(a - b)).unwrap_or(f64::INFINITY) }

/// The trim program over `Span(S1 ∪ L) ⊗ C^B` for every net point; the union of
/// the left Schmidt vectors of the kept eigenvectors, plus `L`.
pub fn trim(
    s1: &ViableSet,
    l: &[Mps],
    e_left: Option<f64>,
    ctx: &StepContext,
    rng: &mut ChaCha8Rng,
) -> ViableResult<(ViableSet, TrimReport)> {
    let cfg = ctx.cfg;
    let (i, n, d) = (s1.i, ctx.ham.n(), ctx.ham.d());
    let mut members = s1.states.clone();
    members.extend(l.iter().cloned());
    let span = SpanBasis::new(&members)?;
    let m = span.dim();
    let q = span.dense_basis();
    let h_left = span.project(&ctx.ham.left_mpo(i)?)?;
    let objective = match e_left {
        None => h_left.clone(),
        Some(_) => {
            let coords: Vec<Array1<C64>> = l.iter().map(|v| span.coordinates(v).map(|c| c.0)).collect::<Result<_, _>>()?;
            let basis = linalg::orth_columns(&linalg::stack_columns(m, &coords), 1e-20)?;
            linalg::projector(&basis)
        }
    };
    let reduced = span.reduced_blocks()?;
    let right_dim = d.pow((n - i) as u32);

    // oracle witnesses in the current span
    let oracle = match ctx.probe {
        Some(p) => {
            let space = p.witness_space_of(&q, i)?;
            let (_, best, _, low) = p.extremes(&space)?;
            Some((best, low))
        }
        None => None,
    };
    let bond = match (cfg.bond, &oracle) {
        (Some(b), _) => b,
        (None, Some((best, _))) => {
            let (_, coeffs) = left_state(best, &q, i, n, d, 1)?;
            rank_at(&coeffs, cfg.bond_tol).min(cfg.bond_max)
        }
        (None, None) => cfg.bond_default,
    }
    .min(right_dim)
    .max(1);

    let net_top = *energy_net(cfg.energy_net_eta)?.last().expect("nonempty");
    let energy_of = |ls: &Array1<C64>| -> f64 {
        let mut e = 0.0;
        for b in 0..bond {
            let part = ls.slice(ndarray::s![b * m..(b + 1) * m]).to_owned();
            e += linalg::quad(part.view(), &h_left, part.view()).re;
        }
        e
    };
    let contraction = |ls: &Array1<C64>| sdp::contract_sigma(&reduced, d, bond, &linalg::outer(ls.view(), ls.view()));

    let mut points: Vec<NetPoint> = Vec::new();
    match cfg.net_mode {
        NetMode::Candidates => {
            let mut seeds: Vec<(Array1<C64>, Option<f64>, Provenance)> = Vec::new();
            if let Some((best, low)) = &oracle {
                let (ls, _) = left_state(best, &q, i, n, d, bond)?;
                let e = energy_of(&ls);
                seeds.push((ls, Some(e), Provenance::Witness));
                let (ls, _) = left_state(low, &q, i, n, d, bond)?;
                let e = energy_of(&ls);
                seeds.push((ls, Some(e), Provenance::OracleEnergy));
            }
            for s in s1.states.iter().chain(l.iter()) {
                let (c, _) = span.coordinates(s)?;
                let nrm = linalg::norm(c.view());
                if nrm <= mps::ZERO_NORM {
                    continue;
                }
                let mut ls = Array1::zeros(m * bond);
                for x in 0..m {
                    ls[x] = c[x] / nrm;
                }
                let e = energy_of(&ls);
                seeds.push((ls, Some(e), Provenance::Member));
            }
            let mut ls = linalg::random_vector(rng, m * bond);
            let nrm = linalg::norm(ls.view());
            ls.mapv_inplace(|z| z / nrm);
            seeds.push((ls, None, Provenance::Random));

            for (ls, e, provenance) in seeds {
                if points.len() >= cfg.max_candidates {
                    break;
                }
                let x = contraction(&ls);
                if points.iter().any(|p| trace_distance(&p.x, &x) < cfg.xi / 2.0) {
                    continue;
                }
                let (y, clamped) = match (e, e_left) {
                    (Some(e), Some(el)) => round_up(e - el, cfg.energy_net_eta)?,
                    _ => (net_top, false),
                };
                points.push(NetPoint { y, x, provenance, clamped });
            }
        }
        NetMode::Exhaustive => {
            let ys = if e_left.is_some() { energy_net(cfg.energy_net_eta)? } else { vec![net_top] };
            let net = ExhaustiveNet::new(cfg.xi, d, bond, cfg.net_cap)?;
            if (net.len() * ys.len()) as u64 > cfg.net_cap {
                return Err(ViableError::NetTooLarge {
                    bound: nets::cardinality_bound(cfg.xi, d, bond),
                    actual: (net.len() * ys.len()) as f64,
                    cap: cfg.net_cap,
                });
            }
            for x in net {
                for &y in &ys {
                    points.push(NetPoint { y, x: x.clone(), provenance: Provenance::Exhaustive, clamped: false });
                }
            }
        }
    }
    for p in points.iter().filter(|p| p.clamped) {
        log::warn!("h={} i={i}: left-energy offset clamped to {}", ctx.h, p.y);
    }

    let opts = IpmOptions { gap_tol: cfg.solver_gap, ..Default::default() };
    let threshold = cfg.eig_threshold / ctx.g as f64;
    let lam = theory::lambda(ctx.g);
    let solved: Vec<ViableResult<(PointReport, Vec<Array1<C64>>)>> = points
        .par_iter()
        .map(|p| {
            let spec = TrimSpec {
                bond,
                h_left: h_left.clone(),
                objective: objective.clone(),
                energy_bound: e_left.map(|el| el + p.y),
                target: p.x.clone(),
                radius: cfg.xi / 2.0,
            };
            let sol = sdp::solve_trim_with(&reduced, d, &spec, &opts)?;
            let max_residual = sol.residuals.values().cloned().fold(0.0, f64::max);
            let mut vecs = Vec::new();
            let (mut kept, mut mass) = (0, 0.0);
            if sol.status == Status::Optimal {
                let (support, mm) = sol.support(threshold)?;
                kept = support.len();
                mass = mm;
                for (_, v) in support {
                    let mut mat = Array2::zeros((m, bond));
                    for b in 0..bond {
                        for x in 0..m {
                            mat[[x, b]] = v[b * m + x];
                        }
                    }
                    let (u, sv, _) = linalg::svd(&mat)?;
                    for j in 0..linalg::numerical_rank(&sv) {
                        let mut col = u.column(j).to_owned();
                        linalg::fix_phase(&mut col);
                        vecs.push(col);
                    }
                }
            }
            let report = PointReport {
                provenance: p.provenance,
                y: p.y,
                clamped: p.clamped,
                status: sol.status,
                objective: sol.objective,
                gap: sol.gap,
                max_residual,
                iterations: sol.iterations,
                kept_vectors: kept,
                kept_mass: mass,
                mass_meets_lambda: mass >= lam - 1e-9,
            };
            Ok((report, vecs))
        })
        .collect();

    let mut reports = Vec::new();
    let mut accepted = Vec::new();
    let mut coords = Vec::new();
    for r in solved {
        let (rep, vecs) = r?;
        if rep.status == Status::Optimal {
            accepted.push(rep.provenance);
            coords.extend(vecs);
        }
        reports.push(rep);
    }
    if accepted.is_empty() {
        return Err(ViableError::TrimFailure {
            h: ctx.h,
            i,
            statuses: reports.iter().map(|r| format!("{:?}:{:?}", r.provenance, r.status)).collect(),
        });
    }
    let mut states: Vec<Mps> = coords.iter().map(|c| span.state(c)).collect::<Result<_, _>>()?;
    let p1 = states.len() + l.len();
    states.extend(l.iter().cloned());
    let q_len = l.len();
    let set = ViableSet {
        h: s1.h,
        i,
        states,
        s_bound: p1,
        b_bound: s1.s_bound * s1.b_bound + q_len * q_len,
        error: ErrorTag::Overlap(cfg.trim_target),
        stage: Stage::Trimmed,
    };
    let report = TrimReport { bond, span_dim: m, net_mode: cfg.net_mode, points: reports, accepted };
    Ok((set, report))
}

/// Every member truncated to bond `p` on all cuts, then `L` appended.
pub fn truncate_set(s2: &ViableSet, l: &[Mps], p: usize) -> ViableResult<ViableSet> {
    let mut states: Vec<Mps> = s2.states.iter().map(|s| s.truncate_all_bonds(p).map(|t| t.0)).collect::<Result<_, _>>()?;
    states.extend(l.iter().cloned());
    let l_bond = l.iter().map(|s| s.max_bond()).max().unwrap_or(1);
    Ok(ViableSet {
        h: s2.h,
        i: s2.i,
        states,
        s_bound: s2.s_bound + l.len(),
        b_bound: p.max(l_bond),
        error: ErrorTag::Overlap(0.2),
        stage: Stage::Truncated,
    })
}

/// `{A_j|s⟩} ∪ L` for `K = Σ_j A_j ⊗ B_j` at the current cut; products are
/// normalized and numerically zero ones dropped.
pub fn reduce(s3: &ViableSet, terms: &[(Mpo, Mpo)], l: &[Mps], zeta: f64) -> ViableResult<ViableSet> {
    let mut raw = Vec::with_capacity(terms.len() * s3.len());
    for (a, _) in terms {
        for s in &s3.states {
            raw.push(mps::apply_mpo(a, s, Some(PRODUCT_TOL))?.0);
        }
    }
    let top = raw.iter().map(|s| s.norm()).fold(0.0, f64::max);
    let mut states: Vec<Mps> = raw
        .into_iter()
        .filter(|s| s.norm() > mps::ZERO_NORM.max(1e-12 * top))
        .map(|s| s.normalized())
        .collect::<Result<_, _>>()?;
    states.extend(l.iter().cloned());
    let k_bond = terms.iter().map(|(a, _)| a.max_bond()).max().unwrap_or(1);
    Ok(ViableSet {
        h: s3.h,
        i: s3.i,
        states,
        s_bound: terms.len() * s3.s_bound + l.len(),
        b_bound: k_bond * s3.b_bound,
        error: ErrorTag::Energy(zeta),
        stage: Stage::Reduced,
    })
}

/// Orthonormal basis of the span; bounds become the measured ones.
pub fn compact(s: &ViableSet) -> ViableResult<ViableSet> {
    let states = SpanBasis::new(&s.states)?.basis_states()?;
    let mut out = ViableSet { states, ..s.clone() };
    out.s_bound = out.len().min(s.s_bound);
    out.b_bound = out.max_bond();
    Ok(out)
}

/// `{K|s⟩} ∪ {γ_1, …, γ_{h−1}}` with the whole-chain AGSP.
pub fn final_reduce(s3: &ViableSet, k: &AgspOperator, prev: &[Mps], delta: f64) -> ViableResult<ViableSet> {
    let n = s3.i;
    let d = s3.states.first().map(|s| s.phys_dim()).unwrap_or(2);
    let kmpo = match &k.mpo {
        Some(m) => m.clone(),
        None => Mpo::from_dense(d, n, &k.to_dense())?,
    };
    let mut states = Vec::with_capacity(s3.len() + prev.len());
    for s in &s3.states {
        let ks = mps::apply_mpo(&kmpo, s, Some(PRODUCT_TOL))?.0;
        if ks.norm() > mps::ZERO_NORM {
            states.push(ks.normalized()?);
        }
    }
    states.extend(prev.iter().cloned());
    let prev_bond = prev.iter().map(|s| s.max_bond()).max().unwrap_or(1);
    Ok(ViableSet {
        h: s3.h,
        i: n,
        states,
        s_bound: s3.s_bound + prev.len(),
        b_bound: (kmpo.max_bond() * s3.b_bound).max(prev_bond),
        error: ErrorTag::Energy(delta),
        stage: Stage::Final,
    })
}

fn checkpoint(
    ctx: &StepContext,
    set: &ViableSet,
    metric: Metric,
    target: f64,
    trim: Option<TrimReport>,
    started: Instant,
    records: &mut Vec<StageRecord>,
) -> ViableResult<()> {
    let measured = match ctx.probe {
        Some(p) => {
            let w = p.measure(&set.states)?;
            Some(match metric {
                Metric::Overlap => w.overlap_error,
                Metric::Energy => w.energy_excess / ctx.eps,
            })
        }
        None => None,
    };
    log::debug!(
        "h={} i={} {}: |S|={} bond={} measured={:?} target={target:e}",
        ctx.h,
        set.i,
        set.stage,
        set.len(),
        set.max_bond(),
        measured
    );
    records.push(StageRecord {
        h: ctx.h,
        i: set.i,
        stage: set.stage,
        size: set.len(),
        max_bond: set.max_bond(),
        s_bound: set.s_bound,
        b_bound: set.b_bound,
        metric,
        measured,
        target,
        trim,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    });
    if let Some(v) = measured {
        if ctx.cfg.enforce_targets && !(v <= target) {
            return Err(ViableError::TargetMissed { h: ctx.h, i: set.i, stage: set.stage, measured: v, target });
        }
    }
    Ok(())
}

fn in_stage<T>(ctx: &StepContext, i: usize, stage: Stage, r: ViableResult<T>) -> ViableResult<T> {
    r.map_err(|e| match e {
        e @ (ViableError::TargetMissed { .. } | ViableError::TrimFailure { .. } | ViableError::InStage { .. }) => e,
        other => ViableError::InStage { h: ctx.h, i, stage, source: Box::new(other) },
    })
}

/// Extend, Trim, Truncate, Reduce. `l` holds the recycled left Schmidt
/// vectors on `i` sites and `e_left` the left energy of `γ₁` (absent at
/// `h = 1`).
pub fn step(
    prev: &ViableSet,
    l: &[Mps],
    e_left: Option<f64>,
    ctx: &StepContext,
    k: &AgspOperator,
    rng: &mut ChaCha8Rng,
    records: &mut Vec<StageRecord>,
) -> ViableResult<ViableSet> {
    let i = prev.i + 1;
    let cfg = ctx.cfg;
    let t = Instant::now();
    let s1 = extend(prev);
    checkpoint(ctx, &s1, Metric::Energy, cfg.reduce_zeta, None, t, records)?;

    let t = Instant::now();
    let (s2, report) = in_stage(ctx, i, Stage::Trimmed, trim(&s1, l, e_left, ctx, rng))?;
    checkpoint(ctx, &s2, Metric::Overlap, cfg.trim_target, Some(report), t, records)?;

    let t = Instant::now();
    let mut s3 = in_stage(ctx, i, Stage::Truncated, truncate_set(&s2, l, cfg.truncation_bond))?;
    s3.error = ErrorTag::Overlap(cfg.truncate_target);
    checkpoint(ctx, &s3, Metric::Overlap, cfg.truncate_target, None, t, records)?;

    let t = Instant::now();
    let n = ctx.ham.n();
    let terms = in_stage(ctx, i, Stage::Reduced, k.terms_at_cut(i, n, ctx.ham.d()).map_err(ViableError::from))?;
    let mut s4 = in_stage(ctx, i, Stage::Reduced, reduce(&s3, &terms, l, cfg.reduce_zeta))?;
    if cfg.compact {
        s4 = in_stage(ctx, i, Stage::Reduced, compact(&s4))?;
    }
    checkpoint(ctx, &s4, Metric::Energy, cfg.reduce_zeta, None, t, records)?;
    Ok(s4)
}

/// Extend, Trim, Truncate and FinalReduce on the last site. `prev` are the
/// states `γ_1, …, γ_{h−1}` and `e_total` the energy of `γ₁`.
#[allow(clippy::too_many_arguments)]
pub fn final_step(
    last: &ViableSet,
    prev: &[Mps],
    e_total: Option<f64>,
    ctx: &StepContext,
    k_strong: &AgspOperator,
    final_target: f64,
    rng: &mut ChaCha8Rng,
    records: &mut Vec<StageRecord>,
) -> ViableResult<ViableSet> {
    let cfg = ctx.cfg;
    let i = last.i + 1;
    let t = Instant::now();
    let s1 = extend(last);
    checkpoint(ctx, &s1, Metric::Energy, cfg.reduce_zeta, None, t, records)?;
    let l = in_stage(ctx, i, Stage::Trimmed, schmidt_vecs(i, prev))?;

    let t = Instant::now();
    let (s2, report) = in_stage(ctx, i, Stage::Trimmed, trim(&s1, &l, e_total, ctx, rng))?;
    checkpoint(ctx, &s2, Metric::Overlap, cfg.trim_target, Some(report), t, records)?;

    let t = Instant::now();
    let mut s3 = in_stage(ctx, i, Stage::Truncated, truncate_set(&s2, &l, cfg.truncation_bond))?;
    s3.error = ErrorTag::Overlap(cfg.truncate_target);
    checkpoint(ctx, &s3, Metric::Overlap, cfg.truncate_target, None, t, records)?;

    let t = Instant::now();
    let s4 = in_stage(ctx, i, Stage::Final, final_reduce(&s3, k_strong, prev, final_target))?;
    checkpoint(ctx, &s4, Metric::Energy, final_target, None, t, records)?;
    Ok(s4)
}

/// Dense helper: projector onto the span of the given dense columns.
pub fn span_projector(cols: &[Array1<C64>], dim: usize) -> ViableResult<Array2<C64>> {
    let basis = linalg::orth_columns(&linalg::stack_columns(dim, cols), 1e-20)?;
    Ok(linalg::projector(&basis))
}

#[cfg(test)]
mod tests;
