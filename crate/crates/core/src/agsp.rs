//! Gaussian ground-space filters: the exact `A`, its discretized Fourier
//! form `K` built from propagators, and the error budget tying them together.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::linalg::{self, c, LinalgError, ONE};
use crate::model::StandardHamiltonian;
use crate::mps::{Mpo, MpsError};
use crate::oracle::Spectrum;

/// Largest `d^n` for which propagator and filter errors are measured densely.
pub const DENSE_CHECK_LIMIT: usize = 1 << 8;
/// Largest `d^n` for which the spectral backend is available.
pub const SPECTRAL_LIMIT: usize = 1 << 12;
const MAX_TROTTER_STEPS: usize = 1 << 12;
/// Compression tolerance for intermediate propagator products.
const PRODUCT_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum AgspError {
    #[error("zeta must lie in (0, 1], got {0}")]
    InvalidZeta(f64),
    #[error("gap must be positive, got {0}")]
    InvalidGap(f64),
    #[error("propagator error {achieved:e} exceeds target {target:e}")]
    BudgetExceeded { achieved: f64, target: f64 },
    #[error("filter error {achieved:e} exceeds the budget {budget:e} after {attempts} refinements")]
    FilterBudget { achieved: f64, budget: f64, attempts: usize },
    #[error("dense dimension {0} too large for the spectral backend")]
    TooLarge(usize),
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type AgspResult<T> = Result<T, AgspError>;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum PropagatorBackend {
    /// Second-order Trotter product of two-site gates.
    #[default]
    Trotter,
    /// Exact `e^{−iHt}` from the dense spectrum, converted to an MPO.
    Spectral,
}

#[derive(Clone, Debug, Serialize)]
pub struct AgspSchedule {
    pub zeta: f64,
    pub eps: f64,
    pub n: usize,
    pub x: f64,
    pub zeta_prime: f64,
    pub t_max: f64,
    pub tau: f64,
    /// `⌈T/τ⌉`; the sum runs over `j = 0..=steps`.
    pub steps: usize,
    pub delta_t: f64,
    pub delta_d: f64,
    pub bond_budget: Option<usize>,
    /// Theoretical step size, kept when `tau` was coarsened.
    pub tau_theory: f64,
}

fn check_inputs(zeta: f64, eps: f64) -> AgspResult<()> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(AgspError::InvalidZeta(zeta));
    }
    if eps <= 0.0 || !eps.is_finite() {
        return Err(AgspError::InvalidGap(eps));
    }
    Ok(())
}

pub fn filter_width(zeta: f64) -> f64 { 33.0 - 8.0 * zeta.ln() }

pub fn delta_t(eps: f64, t_max: f64, x: f64) -> f64 { (-(eps * eps * t_max * t_max) / (2.0 * x)).exp() }

pub fn delta_d(eps: f64, tau: f64, x: f64) -> f64 { 4.0 * eps * tau / (2.0 * PI * x).sqrt() }

impl AgspSchedule {
    /// Parameters with the theoretical time step.
    pub fn new(zeta: f64, eps: f64, n: usize) -> AgspResult<Self> {
        check_inputs(zeta, eps)?;
        let x = filter_width(zeta);
        let zeta_prime = zeta * eps / (240000.0 * n as f64);
        let t_max = (2.0 * x).sqrt() / eps * (3.0 / zeta_prime).ln().sqrt();
        let tau = zeta_prime * (2.0 * PI * x).sqrt() / (12.0 * eps);
        Ok(Self::assemble(zeta, eps, n, x, zeta_prime, t_max, tau, tau))
    }

    /// Same `x`, `T` and `ζ′`, with `τ` coarsened so that the discretization
    /// budget fills `budget − δ_T − propagator_err`.
    pub fn desk(zeta: f64, eps: f64, n: usize, budget: f64, propagator_err: f64) -> AgspResult<Self> {
        let th = Self::new(zeta, eps, n)?;
        let room = budget - th.delta_t - propagator_err;
        if room <= 0.0 {
            return Err(AgspError::FilterBudget { achieved: th.delta_t + propagator_err, budget, attempts: 0 });
        }
        let tau = (room * (2.0 * PI * th.x).sqrt() / (4.0 * eps)).max(th.tau);
        Ok(Self::assemble(zeta, eps, n, th.x, th.zeta_prime, th.t_max, tau, th.tau))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(zeta: f64, eps: f64, n: usize, x: f64, zeta_prime: f64, t_max: f64, tau: f64, tau_theory: f64) -> Self {
        let steps = (t_max / tau).ceil() as usize;
        AgspSchedule {
            zeta,
            eps,
            n,
            x,
            zeta_prime,
            t_max,
            tau,
            steps,
            delta_t: delta_t(eps, t_max, x),
            delta_d: delta_d(eps, tau, x),
            bond_budget: None,
            tau_theory,
        }
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        let mut s = Self::assemble(self.zeta, self.eps, self.n, self.x, self.zeta_prime, self.t_max, tau, self.tau_theory);
        s.bond_budget = self.bond_budget;
        s
    }

    pub fn prefactor(&self) -> f64 { 2.0 * self.eps * self.tau / (2.0 * PI * self.x).sqrt() }

    /// Complex weight of `U(τj)` in the sum, including the prefactor.
    pub fn weight(&self, j: usize, eps0_prime: f64) -> C64 {
        let t = self.tau * j as f64;
        let env = (-(self.eps * t).powi(2) / (2.0 * self.x)).exp();
        C64::from_polar(self.prefactor() * env, eps0_prime * t)
    }

    /// `A(E)`: the exact filter as a function of energy.
    pub fn filter(&self, e: f64, eps0_prime: f64) -> f64 {
        (-self.x * (e - eps0_prime).powi(2) / (2.0 * self.eps * self.eps)).exp()
    }

    /// Hermitized `K(E)` with exact propagators.
    pub fn discretized_filter(&self, e: f64, eps0_prime: f64) -> f64 {
        (0..=self.steps)
            .map(|j| {
                let t = self.tau * j as f64;
                let env = (-(self.eps * t).powi(2) / (2.0 * self.x)).exp();
                self.prefactor() * env * ((e - eps0_prime) * t).cos()
            })
            .sum()
    }

    /// `pref · Σ_j e^{−ε²τ²j²/2x} err_j`.
    pub fn weighted_error(&self, errs: &[f64]) -> f64 {
        errs.iter().enumerate().map(|(j, e)| self.weight(j, 0.0).norm() * e).sum()
    }
}

/// Diagnostics attached to a constructed filter.
#[derive(Clone, Debug, Serialize, Default)]
pub struct AgspDiagnostics {
    /// `‖K − (K + K†)/2‖` before symmetrization.
    pub hermitization_change: f64,
    /// Weighted propagator error contribution.
    pub propagator_error: f64,
    /// Conversion and compression error of the final MPO (operator norm bound).
    pub compression_error: f64,
    /// `δ_T + δ_D + propagator + compression`.
    pub budget: f64,
    /// Dense `‖A − K‖` when available.
    pub measured_error: Option<f64>,
    pub bonds: Vec<usize>,
    pub backend: Option<PropagatorBackend>,
}

#[derive(Clone, Debug)]
pub struct AgspOperator {
    pub dense: Option<Array2<C64>>,
    pub mpo: Option<Mpo>,
    pub schedule: AgspSchedule,
    pub eps0_prime: f64,
    pub diagnostics: AgspDiagnostics,
}

impl AgspOperator {
    pub fn to_dense(&self) -> Array2<C64> {
        match (&self.dense, &self.mpo) {
            (Some(d), _) => d.clone(),
            (None, Some(m)) => m.to_dense(),
            (None, None) => unreachable!("operator has no representation"),
        }
    }

    /// `K = Σ_j A_j ⊗ B_j` at the cut after site `cut`.
    pub fn terms_at_cut(&self, cut: usize, n: usize, d: usize) -> AgspResult<Vec<(Mpo, Mpo)>> {
        let mpo = match &self.mpo {
            Some(m) => m.clone(),
            None => Mpo::from_dense(d, n, self.dense.as_ref().expect("dense form"))?,
        };
        Ok(mpo.operator_schmidt(cut)?)
    }
}

/// The exact filter `A = exp[−x(H−ε₀′)²/2ε²]` as a dense matrix.
pub fn exact_agsp(h: &Array2<C64>, eps0_prime: f64, eps: f64, zeta: f64) -> AgspResult<AgspOperator> {
    check_inputs(zeta, eps)?;
    let x = filter_width(zeta);
    let a = linalg::herm_fn(h, |e| c((-x * (e - eps0_prime).powi(2) / (2.0 * eps * eps)).exp(), 0.0))?;
    let n = (h.nrows() as f64).log2().round() as usize;
    Ok(AgspOperator {
        dense: Some(a),
        mpo: None,
        schedule: AgspSchedule::new(zeta, eps, n.max(1))?,
        eps0_prime,
        diagnostics: AgspDiagnostics::default(),
    })
}

/// Propagator build report.
#[derive(Clone, Debug, Serialize)]
pub struct PropagatorInfo {
    pub t: f64,
    pub trotter_steps: usize,
    pub error: f64,
    /// Error was measured densely rather than estimated.
    pub certified: bool,
    pub bonds: Vec<usize>,
}

fn gate_layer(h: &StandardHamiltonian, parity: usize, dt: f64) -> AgspResult<Mpo> {
    let d = h.d();
    let n = h.n();
    let mut layer = Mpo::identity(d, n);
    for k in (parity..n - 1).step_by(2) {
        let g = linalg::expm_herm(&h.terms()[k], dt)?;
        layer = layer.compose(&Mpo::two_site(d, n, k, &g)?)?;
    }
    Ok(layer.compress(PRODUCT_TOL, None)?.0)
}

/// One second-order Trotter step `e^{−iH_o dt/2} e^{−iH_e dt} e^{−iH_o dt/2}`.
pub fn trotter_step(h: &StandardHamiltonian, dt: f64) -> AgspResult<Mpo> {
    let half = gate_layer(h, 1, dt / 2.0)?;
    let full = gate_layer(h, 0, dt)?;
    let u = half.compose(&full)?.compose(&half)?;
    Ok(u.compress(PRODUCT_TOL, None)?.0)
}

fn power(step: &Mpo, m: usize, max_bond: Option<usize>) -> AgspResult<Mpo> {
    let mut u = Mpo::identity(step.phys_dim(), step.len());
    for _ in 0..m {
        u = u.compose(step)?.compress(PRODUCT_TOL, max_bond)?.0;
    }
    Ok(u)
}

/// `U(t) ≈ e^{−iHt}` as an MPO within `target_err` in operator norm. Trotter
/// steps are doubled until the target is met; at small sizes the error is
/// measured against the dense exponential, otherwise estimated from two
/// successive refinements.
pub fn propagator_mpo(
    h: &StandardHamiltonian,
    t: f64,
    target_err: f64,
    max_bond: Option<usize>,
) -> AgspResult<(Mpo, PropagatorInfo)> {
    let (d, n) = (h.d(), h.n());
    if t == 0.0 {
        let id = Mpo::identity(d, n);
        let bonds = id.bond_dims();
        return Ok((id, PropagatorInfo { t, trotter_steps: 0, error: 0.0, certified: true, bonds }));
    }
    let dim = d.pow(n as u32);
    let exact = if dim <= DENSE_CHECK_LIMIT { Some(linalg::expm_herm(&h.dense(), t)?) } else { None };
    let mut m = 1;
    let mut prev: Option<Mpo> = None;
    loop {
        let u = power(&trotter_step(h, t / m as f64)?, m, max_bond)?;
        let err = match (&exact, &prev) {
            (Some(e), _) => Some(linalg::op_norm(&(u.to_dense() - e))?),
            (None, Some(p)) => {
                let diff = Mpo::sum(&[u.clone(), p.clone()], &[ONE, -ONE])?;
                let fro = diff.vectorized().norm();
                // second order: the coarser product carries ~4/3 of the difference
                Some(fro / 3.0)
            }
            (None, None) => None,
        };
        if let Some(e) = err {
            if e <= target_err {
                let bonds = u.bond_dims();
                return Ok((u, PropagatorInfo { t, trotter_steps: m, error: e, certified: exact.is_some(), bonds }));
            }
            if m >= MAX_TROTTER_STEPS {
                return Err(AgspError::BudgetExceeded { achieved: e, target: target_err });
            }
        }
        prev = Some(u);
        m *= 2;
    }
}

/// Builds `K` from the schedule, Hermitizes it and measures it against `A`
/// when the dense form is small enough.
pub fn approx_agsp(
    h: &StandardHamiltonian,
    eps0_prime: f64,
    schedule: &AgspSchedule,
    backend: PropagatorBackend,
    propagator_tol: f64,
    compress_tol: f64,
) -> AgspResult<AgspOperator> {
    match backend {
        PropagatorBackend::Spectral => spectral_agsp(h, eps0_prime, schedule, compress_tol),
        PropagatorBackend::Trotter => trotter_agsp(h, eps0_prime, schedule, propagator_tol, compress_tol),
    }
}

fn spectral_agsp(h: &StandardHamiltonian, eps0_prime: f64, s: &AgspSchedule, compress_tol: f64) -> AgspResult<AgspOperator> {
    let dim = h.d().pow(h.n() as u32);
    if dim > SPECTRAL_LIMIT {
        return Err(AgspError::TooLarge(dim));
    }
    let (w, v) = linalg::eigh(&h.dense())?;
    let k: Array1<f64> = w.mapv(|e| s.discretized_filter(e, eps0_prime));
    let measured = w.iter().zip(k.iter()).map(|(&e, &kv)| (s.filter(e, eps0_prime) - kv).abs()).fold(0.0, f64::max);
    let sine = w
        .iter()
        .map(|&e| {
            (0..=s.steps)
                .map(|j| {
                    let t = s.tau * j as f64;
                    s.weight(j, 0.0).norm() * ((e - eps0_prime) * t).sin()
                })
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max);
    let kd = linalg::spectral(&w, &v, |e| c(s.discretized_filter(e, eps0_prime), 0.0));
    let exact = Mpo::from_dense(h.d(), h.n(), &kd)?;
    let fro = linalg::fro_norm(&kd);
    let (mpo, info) = exact.compress(compress_tol, s.bond_budget)?;
    // compression can leave an anti-Hermitian part of the order of its error
    let mpo = match mpo.clone().with_hermitian(true) {
        Ok(m) => m,
        Err(_) => mpo,
    };
    let compression_error = info.discarded_weight.sqrt() * fro;
    let diagnostics = AgspDiagnostics {
        hermitization_change: sine,
        propagator_error: 0.0,
        compression_error,
        budget: s.delta_t + s.delta_d + compression_error,
        measured_error: Some(measured + compression_error),
        bonds: info.bonds,
        backend: Some(PropagatorBackend::Spectral),
    };
    Ok(AgspOperator { dense: None, mpo: Some(mpo), schedule: s.clone(), eps0_prime, diagnostics })
}

fn trotter_agsp(
    h: &StandardHamiltonian,
    eps0_prime: f64,
    s: &AgspSchedule,
    propagator_tol: f64,
    compress_tol: f64,
) -> AgspResult<AgspOperator> {
    let (d, n) = (h.d(), h.n());
    // U(τ(j+1)) = U(τ) U(τj); per-step errors accumulate linearly
    let (step, info) = propagator_mpo(h, s.tau, propagator_tol, s.bond_budget)?;
    let mut u = Mpo::identity(d, n);
    let mut acc = u.scaled(s.weight(0, eps0_prime));
    let mut errs = vec![0.0];
    for j in 1..=s.steps {
        u = u.compose(&step)?.compress(PRODUCT_TOL, s.bond_budget)?.0;
        errs.push(j as f64 * info.error);
        acc = Mpo::sum(&[acc, u.clone()], &[ONE, s.weight(j, eps0_prime)])?.compress(PRODUCT_TOL, None)?.0;
    }
    let kd = acc.dagger();
    let herm = Mpo::sum(&[acc.clone(), kd], &[c(0.5, 0.0), c(0.5, 0.0)])?;
    let anti = Mpo::sum(&[acc, herm.clone()], &[ONE, -ONE])?;
    let (herm, cinfo) = herm.compress(compress_tol, s.bond_budget)?;
    let fro = herm.vectorized().norm();
    let compression_error = cinfo.discarded_weight.sqrt() * fro;
    let propagator_error = s.weighted_error(&errs);
    let dim = d.pow(n as u32);
    let herm = if dim <= 1 << 10 { herm.with_hermitian(true)? } else { herm };
    let measured = if dim <= DENSE_CHECK_LIMIT {
        let a = linalg::herm_fn(&h.dense(), |e| c(s.filter(e, eps0_prime), 0.0))?;
        Some(linalg::op_norm(&(a - herm.to_dense()))?)
    } else {
        None
    };
    let hermitization_change = if dim <= DENSE_CHECK_LIMIT {
        linalg::op_norm(&anti.to_dense())?
    } else {
        anti.vectorized().norm()
    };
    let diagnostics = AgspDiagnostics {
        hermitization_change,
        propagator_error,
        compression_error,
        budget: s.delta_t + s.delta_d + propagator_error + compression_error,
        measured_error: measured,
        bonds: cinfo.bonds,
        backend: Some(PropagatorBackend::Trotter),
    };
    let mut herm = herm;
    if dim > 1 << 10 {
        herm = herm.with_hermitian(true)?;
    }
    Ok(AgspOperator { dense: None, mpo: Some(herm), schedule: s.clone(), eps0_prime, diagnostics })
}

/// Share of a desk budget held back for propagator and compression errors.
const DESK_RESERVE: f64 = 0.05;

/// Desk schedule whose measured `‖A − K‖` and error budget both meet
/// `budget`; `τ` is halved until they do.
pub fn desk_agsp(
    h: &StandardHamiltonian,
    eps0_prime: f64,
    zeta: f64,
    eps: f64,
    budget: f64,
    backend: PropagatorBackend,
    bond_budget: Option<usize>,
) -> AgspResult<AgspOperator> {
    let mut s = AgspSchedule::desk(zeta, eps, h.n(), budget, budget * DESK_RESERVE)?;
    s.bond_budget = bond_budget;
    let mut last = f64::INFINITY;
    for attempt in 0..8 {
        // step j carries j times the per-step error
        let ramp: Vec<f64> = (0..=s.steps).map(|j| j as f64).collect();
        let propagator_tol = budget * DESK_RESERVE / (2.0 * s.weighted_error(&ramp).max(1.0));
        let op = approx_agsp(h, eps0_prime, &s, backend, propagator_tol, budget * 1e-4)?;
        let err = op.diagnostics.measured_error.unwrap_or(op.diagnostics.budget).max(op.diagnostics.budget);
        if err <= budget {
            return Ok(op);
        }
        last = err;
        log::debug!("filter error {err:e} over budget {budget:e} at tau {} (attempt {attempt})", s.tau);
        s = s.with_tau(s.tau / 2.0);
    }
    Err(AgspError::FilterBudget { achieved: last, budget, attempts: 8 })
}

/// Per-eigenvector retention of a filter.
#[derive(Clone, Debug, Serialize)]
pub struct ShrinkReport {
    pub norms: Vec<f64>,
    pub min_ground_retention: f64,
    pub max_excited_shrink: f64,
}

pub fn shrink_report(op: &AgspOperator, spec: &Spectrum) -> ShrinkReport {
    let k = op.to_dense();
    let applied = k.dot(&spec.eigenvectors);
    let norms: Vec<f64> = applied.columns().into_iter().map(|c| linalg::norm(c)).collect();
    let min_ground_retention = norms[..spec.g].iter().cloned().fold(f64::INFINITY, f64::min);
    let max_excited_shrink = norms[spec.g..].iter().cloned().fold(0.0, f64::max);
    ShrinkReport { norms, min_ground_retention, max_excited_shrink }
}
