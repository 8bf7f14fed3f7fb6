//! Randomized checks of the lemmas the algorithm rests on. Each suite
//! draws its own instances from a seeded generator and records the worst
//! slack `rhs − lhs` over all inequalities it checks.

use ndarray::{s, Array1, Array2};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agsp::{exact_agsp, shrink_report, AgspError};
use crate::linalg::{self, dagger, LinalgError};
use crate::model::{make_model, ModelError, ModelSpec, StandardHamiltonian};
use crate::mps::{Mps, MpsError};
use crate::oracle::{self, OracleError, Spectrum, DEFAULT_DEGENERACY_TOL};
use crate::sdp::{self, SdpError};

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("unknown suite {0}")]
    Unknown(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Agsp(#[from] AgspError),
}

pub type SuiteResult<T> = Result<T, SuiteError>;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SuiteReport {
    pub name: String,
    pub instances: usize,
    pub checks: usize,
    pub violations: usize,
    pub worst_slack: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const SUITES: &[&str] = &[
    "interchangeability",
    "omnibus_overlap",
    "orthogonalising",
    "demixing",
    "boundary_contraction",
    "truncation_lemma",
    "eckart_young",
    "appendix_a",
    "appendix_b",
    "appendix_c",
];

/// Instances of the AGSP suite; each one diagonalizes a model and builds a filter.
pub const APPENDIX_B_INSTANCES: usize = 60;

struct Tally {
    tol: f64,
    instances: usize,
    checks: usize,
    violations: usize,
    worst: f64,
}

impl Tally {
    fn new(tol: f64) -> Self { Tally { tol, instances: 0, checks: 0, violations: 0, worst: f64::INFINITY } }

    fn check(&mut self, slack: f64) {
        self.checks += 1;
        if !(slack >= -self.tol) {
            self.violations += 1;
        }
        if slack.is_nan() {
            self.worst = f64::NAN;
        } else if !self.worst.is_nan() {
            self.worst = self.worst.min(slack);
        }
    }

    fn report(self, name: &str) -> SuiteReport {
        SuiteReport {
            name: name.to_string(),
            instances: self.instances,
            checks: self.checks,
            violations: self.violations,
            worst_slack: self.worst,
            tolerance: self.tol,
            passed: self.violations == 0 && self.instances > 0,
        }
    }
}

struct Sample {
    ham: StandardHamiltonian,
    spec: Spectrum,
    dense: Array2<C64>,
}

fn random_model(rng: &mut ChaCha8Rng, sizes: &[usize]) -> SuiteResult<Sample> {
    let n = sizes[rng.random_range(0..sizes.len())];
    let (name, params): (&str, Vec<(&str, f64)>) = match rng.random_range(0..4) {
        0 => ("ising", vec![]),
        1 => ("tfim", vec![("h", rng.random_range(0.05..1.5))]),
        2 => ("heisenberg", vec![]),
        _ => ("random_ising", vec![("strength", rng.random_range(0.01..0.5))]),
    };
    let spec = ModelSpec {
        name: name.into(),
        n,
        params: params.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        seed: Some(rng.random()),
    };
    let ham = make_model(&spec)?;
    let spec = oracle::diagonalize(&ham, DEFAULT_DEGENERACY_TOL)?;
    let dense = ham.dense();
    Ok(Sample { ham, spec, dense })
}

fn pool(rng: &mut ChaCha8Rng, count: usize, sizes: &[usize]) -> SuiteResult<Vec<Sample>> {
    (0..count).map(|_| random_model(rng, sizes)).collect()
}

fn normalized(v: Array1<C64>) -> Array1<C64> {
    let n = linalg::norm(v.view());
    v.mapv(|z| z / n)
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 { (rng.random_range(lo.ln()..hi.ln())).exp() }

/// `w + s·r` normalized for a random direction `r` and scale `s`.
fn perturb(rng: &mut ChaCha8Rng, w: &Array1<C64>, lo: f64, hi: f64) -> Array1<C64> {
    let s = log_uniform(rng, lo, hi);
    let r = normalized(linalg::random_vector(rng, w.len()));
    normalized(w + &r.mapv(|z| z * s))
}

/// Random combination of the `k` lowest eigenvectors plus a small generic part.
fn low_energy(rng: &mut ChaCha8Rng, spec: &Spectrum, k: usize, noise: f64) -> Array1<C64> {
    let k = k.min(spec.dim());
    let c = linalg::random_vector(rng, k);
    let v = spec.eigenvectors.slice(s![.., ..k]).dot(&c);
    let r = normalized(linalg::random_vector(rng, spec.dim()));
    normalized(normalized(v) + r.mapv(|z| z * noise))
}

fn energy(h: &Array2<C64>, v: &Array1<C64>) -> f64 { linalg::quad(v.view(), h, v.view()).re }

fn abs_inner(a: &Array1<C64>, b: &Array1<C64>) -> f64 { linalg::inner(a.view(), b.view()).norm() }

fn ground_weight(spec: &Spectrum, v: &Array1<C64>) -> f64 {
    let gv = spec.ground_vectors();
    dagger(&gv).dot(v).iter().map(|z| z.norm_sqr()).sum()
}

/// Energy and overlap conversions between `Δ` and `δ`.
fn interchangeability(rng: &mut ChaCha8Rng, instances: usize) -> SuiteResult<Tally> {
    let mut t = Tally::new(1e-9);
    let models = pool(rng, 20, &[3, 4, 5])?;
    for k in 0..instances {
        let m = &models[k % models.len()];
        let spread = log_uniform(rng, 1e-4, 3.0);
        let v = low_energy(rng, &m.spec, m.spec.g, spread);
        let e = energy(&m.dense, &v);
        let ov = ground_weight(&m.spec, &v).sqrt();
        let big_delta = (e - m.spec.eps0) / m.spec.gap;
        t.check(ov - (1.0 - big_delta));
        let delta = 1.0 - ov;
        t.check(m.spec.eps0 + 2.0 * delta * m.ham.n() as f64 - e);
        t.instances += 1;
    }
    Ok(t)
}

fn random_unit_op(rng: &mut ChaCha8Rng, n: usize) -> SuiteResult<Array2<C64>> {
    let m = linalg::random_matrix(rng, n, n);
    let s = linalg::op_norm(&m)?;
    Ok(m.mapv(|z| z / s))
}

/// The four overlap inequalities.
fn omnibus(rng: &mut ChaCha8Rng, instances: usize) -> SuiteResult<Tally> {
    let mut t = Tally::new(1e-10);
    for _ in 0..instances {
        let n = rng.random_range(2..=12);
        let w = normalized(linalg::random_vector(rng, n));
        let v = perturb(rng, &w, 1e-4, 2.0);
        let v2 = perturb(rng, &w, 1e-4, 2.0);
        let (d1, d2) = (1.0 - abs_inner(&v, &w), 1.0 - abs_inner(&v2, &w));
        t.check(abs_inner(&v, &v2) - (1.0 - 2.0 * (d1 + d2)));

        let o = random_unit_op(rng, n)?;
        let diff = (linalg::quad(v.view(), &o, v.view()) - linalg::quad(w.view(), &o, w.view())).norm();
        t.check(2.0 * (2.0 * d1).sqrt() - diff);

        let u = normalized(linalg::random_vector(rng, n));
        let base = normalized(linalg::random_vector(rng, n));
        let gamma = perturb(rng, &base, 1e-3, 1.0);
        let omega = abs_inner(&u, &gamma);
        let vu = perturb(rng, &u, 1e-4, 2.0);
        let du = 1.0 - abs_inner(&vu, &u);
        t.check(omega + (2.0 * du).sqrt() - abs_inner(&vu, &gamma));

        let u1 = normalized(linalg::random_vector(rng, n));
        let u2 = perturb(rng, &u1, 1e-2, 10.0);
        let omega = abs_inner(&u1, &u2);
        let v1 = perturb(rng, &u1, 1e-4, 2.0);
        let v2 = perturb(rng, &u2, 1e-4, 2.0);
        let d = (1.0 - abs_inner(&u1, &v1)).max(1.0 - abs_inner(&u2, &v2));
        t.check(omega + (10.0 * d).sqrt() - abs_inner(&v1, &v2));
        t.instances += 1;
    }
    Ok(t)
}

/// Energy growth under orthogonalization against one vector.
fn orthogonalising(rng: &mut ChaCha8Rng, instances: usize) -> SuiteResult<Tally> {
    let mut t = Tally::new(1e-9);
    let models = pool(rng, 20, &[3, 4])?;
    for k in 0..instances {
        let m = &models[k % models.len()];
        let n = m.ham.n();
        let levels = rng.random_range(1..=4);
        let spread = log_uniform(rng, 1e-4, 0.3);
        let u = low_energy(rng, &m.spec, levels, spread);
        let v = perturb(rng, &u, 1e-1, 5.0);
        let v = normalized(v + low_energy(rng, &m.spec, levels, 1e-3));
        let beta = abs_inner(&u, &v);
        if beta > 1.0 - 1e-6 {
            continue;
        }
        let excess = (energy(&m.dense, &u) - m.spec.eps0).max(energy(&m.dense, &v) - m.spec.eps0);
        let (vo, b) = sdp::orthogonalize(&Mps::from_dense(2, n, &v)?, &[Mps::from_dense(2, n, &u)?])?;
        let vd = vo.to_dense();
        t.check(1e-9 - abs_inner(&u, &vd));
        t.check(1e-9 - (b - beta).abs());
        t.check(excess * (1.0 + beta) / (1.0 - beta) - (energy(&m.dense, &vd) - m.spec.eps0));
        t.instances += 1;
    }
    Ok(t)
}

/// Leading eigenvector of a low-energy mixture.
fn demixing(rng: &mut ChaCha8Rng, instances: usize) -> SuiteResult<Tally> {
    let mut t = Tally::new(1e-9);
    let models = pool(rng, 20, &[3, 4, 5])?;
    let mut attempts = 0;
    while t.instances < instances && attempts < 50 * instances {
        attempts += 1;
        let m = &models[attempts % models.len()];
        let g = m.spec.g;
        let rank = rng.random_range(1..=(2 * g + 2).min(m.spec.dim()));
        let noise = log_uniform(rng, 1e-5, 0.3);
        let cols: Vec<Array1<C64>> = (0..rank).map(|_| low_energy(rng, &m.spec, g, noise)).collect();
        let q = linalg::orth_columns(&linalg::stack_columns(m.spec.dim(), &cols), 1e-10)?;
        let mut w: Vec<f64> = (0..q.ncols()).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        let mut sigma = Array2::<C64>::zeros((m.spec.dim(), m.spec.dim()));
        for (j, &p) in w.iter().enumerate() {
            let c = q.column(j).to_owned();
            sigma = sigma + linalg::outer(c.view(), c.view()).mapv(|z| z * p);
        }
        let mixed = linalg::trace(&m.dense.dot(&sigma)).re;
        let delta = (2 * g + 1) as f64 * (mixed - m.spec.eps0).max(0.0) / m.spec.gap;
        if delta > 1.0 / (3.0 * g as f64) {
            continue;
        }
        let d = sdp::demix(&sigma, &m.dense, m.spec.eps0, m.spec.gap, delta, g)?;
        t.check(m.spec.eps0 + delta * m.spec.gap - d.energy);
        t.instances += 1;
    }
    Ok(t)
}

/// Right Schmidt data of a dense state truncated to rank `b`: `(λ, a, U_v)`
/// with `U_v|j⟩ = |b_j⟩`.
fn schmidt_dense(v: &Array1<C64>, dl: usize, dr: usize, b: usize) -> SuiteResult<(Vec<f64>, Array2<C64>, Array2<C64>)> {
    let mat = v.clone().into_shape_with_order((dl, dr)).expect("reshape");
    let (u, sv, vt) = linalg::svd(&mat)?;
    let b = b.min(sv.len());
    let norm = sv.iter().take(b).map(|x| x * x).sum::<f64>().sqrt();
    let lambda: Vec<f64> = sv.iter().take(b).map(|x| x / norm).collect();
    let left = u.slice(s![.., ..b]).to_owned();
    let right = vt.slice(s![..b, ..]).t().to_owned();
    Ok((lambda, left, right))
}

/// Energy bound for the extension of a mixed left state by a witness.
fn boundary_contraction(rng: &mut ChaCha8Rng, instances: usize) -> SuiteResult<Tally> {
    let mut t = Tally::new(1e-9);
    let models = pool(rng, 24, &[4, 5, 6])?;
    for k in 0..instances {
        let m = &models[k % models.len()];
        let (n, d) = (m.ham.n(), m.ham.d());
        let cut = rng.random_range(1..n);
        let p = m.ham.partition(cut)?;
        let (dl, dr) = (d.pow(cut as u32), d.pow((n - cut) as u32));
        let raw = if rng.random_bool(0.5) {
            let levels = rng.random_range(1..=3);
            let spread = log_uniform(rng, 1e-4, 1.0);
            low_energy(rng, &m.spec, levels, spread)
        } else {
            normalized(linalg::random_vector(rng, dl * dr))
        };
        let b = rng.random_range(1..=dl.min(dr).min(4));
        let (lambda, a, uv) = schmidt_dense(&raw, dl, dr, b)?;
        let b = lambda.len();
        let mut v = Array1::zeros(dl * dr);
        let mut ls = Array1::zeros(dl * b);
        for j in 0..b {
            v = v + linalg::kron_vec(&a.column(j).to_owned(), &uv.column(j).to_owned()).mapv(|z| z * lambda[j]);
            let mut e = Array1::zeros(b);
            e[j] = C64::new(lambda[j], 0.0);
            ls = ls + linalg::kron_vec(&a.column(j).to_owned(), &e);
        }
        let rank = rng.random_range(1..=dl * b);
        let sigma = linalg::random_density(rng, dl * b, rank);
        let lift = linalg::kron(&linalg::identity(dl), &uv);
        let sigma_full = lift.dot(&sigma).dot(&dagger(&lift));
        let lhs = linalg::trace(&sigma_full.dot(&m.dense)).re;

        let hl = p.dense_left();
        let hl_b = linalg::kron(&hl, &linalg::identity(b));
        let hr = p.dense_right();
        let hl_full = linalg::kron(&hl, &linalg::identity(dr));
        let hr_full = linalg::kron(&linalg::identity(dl), &hr);
        let rest = &m.dense - &hl_full;
        let cont = linalg::trace_left(&linalg::outer(ls.view(), ls.view()), dl / d, d * b);
        let reduced = linalg::trace_left(&sigma, dl / d, d * b);
        let dist = linalg::trace_norm(&(&reduced - &cont))?;
        let pi_v = linalg::projector(&uv);
        let hr_pi = linalg::op_norm(&hr.dot(&pi_v))?;
        let vr = energy(&hr_full, &v);
        let rhs = linalg::trace(&sigma.dot(&hl_b)).re + energy(&rest, &v) + dist * (1.0 + hr_pi - vr);
        t.check(rhs - lhs);
        t.instances += 1;
    }
    Ok(t)
}

/// Ground-state weight outside the truncated Hilbert spaces.
fn truncation_lemma(rng: &mut ChaCha8Rng, instances: usize) -> SuiteResult<Tally> {
    let mut t = Tally::new(1e-9);
    let models = pool(rng, 12, &[4, 5, 6])?;
    for k in 0..instances {
        let m = &models[k % models.len()];
        let n = m.ham.n();
        let cut = rng.random_range(1..n);
        let p = m.ham.partition(cut)?;
        let top = linalg::op_norm(&p.dense_left_shifted())? + linalg::op_norm(&p.dense_right_shifted())?;
        let tt = rng.random_range(0.0..top + 1.0);
        let (pt, qt) = oracle::truncated_projectors(&p, tt)?;
        let c = normalized(linalg::random_vector(rng, m.spec.g));
        let gamma = m.spec.ground_vectors().dot(&c);
        let out_p = linalg::norm((&gamma - &pt.dot(&gamma)).view());
        let out_q = linalg::norm((&gamma - &qt.dot(&gamma)).view());
        t.check(out_q - out_p);
        t.check(99.0 * 2f64.powf(-tt / 99.0) - out_q);
        t.instances += 1;
    }
    Ok(t)
}

/// Truncation to Schmidt rank `D` beats every rank-`D` state.
fn eckart_young(rng: &mut ChaCha8Rng, instances: usize) -> SuiteResult<Tally> {
    let mut t = Tally::new(1e-10);
    for _ in 0..instances {
        let n = rng.random_range(3..=6);
        let bond = rng.random_range(1..=4);
        let v = Mps::random(rng, 2, n, bond).normalized()?;
        let cut = rng.random_range(1..n);
        let (dl, dr) = (1usize << cut, 1usize << (n - cut));
        let dense = v.to_dense();
        let sv = linalg::singular_values(&dense.clone().into_shape_with_order((dl, dr)).expect("reshape"))?;
        let rank = linalg::numerical_rank(&sv).max(1);
        let dmax = rng.random_range(1..=rank);
        let tr = v.truncate_at_cut(cut, dmax)?.normalized()?.to_dense();
        let ov = linalg::inner(dense.view(), tr.view());
        let best = sv.iter().take(dmax).map(|x| x * x).sum::<f64>().sqrt();
        t.check(1e-10 - (ov.norm() - best).abs());
        t.check(ov.re + 1e-12 - ov.norm());
        for _ in 0..3 {
            let mut w = Array1::zeros(dl * dr);
            for _ in 0..dmax {
                w = w + linalg::kron_vec(&linalg::random_vector(rng, dl), &linalg::random_vector(rng, dr));
            }
            if rng.random_bool(0.5) {
                // a rank-D state close to the truncation
                w = tr.clone() + normalized(w).mapv(|z| z * log_uniform(rng, 1e-4, 1.0));
                let (lam, a, b) = schmidt_dense(&w, dl, dr, dmax)?;
                w = Array1::zeros(dl * dr);
                for j in 0..lam.len() {
                    w = w + linalg::kron_vec(&a.column(j).to_owned(), &b.column(j).to_owned()).mapv(|z| z * lam[j]);
                }
            }
            let w = normalized(w);
            t.check(ov.re - abs_inner(&dense, &w));
        }
        t.instances += 1;
    }
    Ok(t)
}

/// Overlap, basis and fullness of an approximate ground-space basis.
fn appendix_a(rng: &mut ChaCha8Rng, instances: usize) -> SuiteResult<Tally> {
    let mut t = Tally::new(1e-9);
    let mut attempts = 0;
    while t.instances < instances && attempts < 20 * instances {
        attempts += 1;
        let dim = rng.random_range(4..=16);
        let g = rng.random_range(1..=3.min(dim / 2));
        let gb = linalg::random_isometry(rng, dim, g);
        let gp = linalg::projector(&gb);
        let noise = log_uniform(rng, 1e-4, 0.5);
        let pert = linalg::random_matrix(rng, dim, g).mapv(|z| z * noise);
        let (vq, _) = linalg::qr_positive(&(&gb + &pert))?;
        let vs = vq.slice(s![.., ..g]).to_owned();
        let worst = (0..g).map(|i| 1.0 - energy(&gp, &vs.column(i).to_owned())).fold(0.0, f64::max);
        let delta = g as f64 * worst;
        if delta >= 1.0 {
            continue;
        }
        for _ in 0..3 {
            let c = normalized(linalg::random_vector(rng, g));
            let v = vs.dot(&c);
            t.check(energy(&gp, &v) - (1.0 - delta));
        }
        let smin = linalg::singular_values(&gp.dot(&vs))?.iter().cloned().fold(f64::INFINITY, f64::min);
        t.check(smin * smin - (1.0 - delta));
        let comp = sdp::orthogonal_complement(dim, &(0..g).map(|i| vs.column(i).to_owned()).collect::<Vec<_>>())?;
        for _ in 0..3 {
            let c = normalized(linalg::random_vector(rng, comp.ncols()));
            let v = comp.dot(&c);
            t.check(delta - energy(&gp, &v));
        }
        t.instances += 1;
    }
    Ok(t)
}

/// Exact AGSP shrink and retention bounds.
fn appendix_b(rng: &mut ChaCha8Rng, instances: usize) -> SuiteResult<Tally> {
    let mut t = Tally::new(1e-9);
    for _ in 0..instances {
        let m = random_model(rng, &[3, 4])?;
        let zeta = [0.5, 0.1, 0.01, log_uniform(rng, 1e-3, 1.0)][rng.random_range(0..4)];
        let op = exact_agsp(&m.dense, m.spec.eps0, m.spec.gap, zeta)?;
        let r = shrink_report(&op, &m.spec);
        t.check(zeta / 2.0 - r.max_excited_shrink);
        t.check(r.min_ground_retention - 19.0 / 20.0);
        t.instances += 1;
    }
    Ok(t)
}

/// Left energies of two low-energy states differ by at most `1 + ΔE`.
fn appendix_c(rng: &mut ChaCha8Rng, instances: usize) -> SuiteResult<Tally> {
    let mut t = Tally::new(1e-9);
    let models = pool(rng, 20, &[3, 4, 5, 6])?;
    for k in 0..instances {
        let m = &models[k % models.len()];
        let n = m.ham.n();
        let levels = rng.random_range(1..=6);
        let spread = log_uniform(rng, 1e-4, 1.0);
        let v1 = low_energy(rng, &m.spec, levels, spread);
        let spread = log_uniform(rng, 1e-4, 1.0);
        let v2 = low_energy(rng, &m.spec, levels, spread);
        let de = (energy(&m.dense, &v1) - m.spec.eps0).max(energy(&m.dense, &v2) - m.spec.eps0);
        for cut in 1..n {
            let p = m.ham.partition(cut)?;
            let hl = linalg::kron(&p.dense_left(), &linalg::identity(1 << (n - cut)));
            t.check(1.0 + de - (energy(&hl, &v1) - energy(&hl, &v2)).abs());
        }
        t.instances += 1;
    }
    Ok(t)
}

pub fn run_suite(name: &str, instances: usize, seed: u64) -> SuiteResult<SuiteReport> {
    let salt = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    let tally = match name {
        "interchangeability" => interchangeability(&mut rng, instances)?,
        "omnibus_overlap" => omnibus(&mut rng, instances)?,
        "orthogonalising" => orthogonalising(&mut rng, instances)?,
        "demixing" => demixing(&mut rng, instances)?,
        "boundary_contraction" => boundary_contraction(&mut rng, instances)?,
        "truncation_lemma" => truncation_lemma(&mut rng, instances)?,
        "eckart_young" => eckart_young(&mut rng, instances)?,
        "appendix_a" => appendix_a(&mut rng, instances)?,
        "appendix_b" => appendix_b(&mut rng, instances)?,
        "appendix_c" => appendix_c(&mut rng, instances)?,
        other => return Err(SuiteError::Unknown(other.to_string())),
    };
    Ok(tally.report(name))
}

/// Every suite; the AGSP suite runs [`APPENDIX_B_INSTANCES`] at most.
pub fn property_suite(instances: usize, seed: u64) -> SuiteResult<Vec<SuiteReport>> {
    SUITES
        .iter()
        .map(|&name| {
            let count = if name == "appendix_b" { instances.min(APPENDIX_B_INSTANCES) } else { instances };
            run_suite(name, count, seed)
        })
        .collect()
}
