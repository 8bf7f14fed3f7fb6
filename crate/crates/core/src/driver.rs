//! End-to-end runs: the nondegenerate pass, the degenerate loop, the final
//! extraction and the run report.

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agsp::{desk_agsp, AgspDiagnostics, AgspError, AgspOperator, AgspSchedule};
use crate::linalg::{self, LinalgError};
use crate::model::{self, make_model, ModelError, ModelSpec, StandardHamiltonian};
use crate::mps::{self, Mps, MpsError};
use crate::oracle::{self, OracleError, Spectrum, SpectrumSummary, DEFAULT_DEGENERACY_TOL};
use crate::sdp::{self, SdpError, SpanBasis, Status};
use crate::viable::{self, theory, Probe, StageRecord, StepContext, ViableConfig, ViableError, ViableSet};

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Viable(#[from] ViableError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Agsp(#[from] AgspError),
    #[error("extraction at h={h}: {source}")]
    Extract {
        h: usize,
        #[source]
        source: SdpError,
    },
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type DriverResult<T> = Result<T, DriverError>;

fn default_true() -> bool { true }
fn default_herald() -> f64 { 0.5 }
fn default_degeneracy_tol() -> f64 { DEFAULT_DEGENERACY_TOL }

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    /// Number of ground states to construct.
    pub g: usize,
    /// Gap lower bound; replaced by the measured gap when the oracle is on.
    #[serde(default)]
    pub eps: Option<f64>,
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub oracle: bool,
    /// Run one pass past `g` and report the herald.
    #[serde(default)]
    pub overcount: bool,
    /// The herald fires when the extra state sits this many `ε` above `ε₀`.
    #[serde(default = "default_herald")]
    pub herald_fraction: f64,
    #[serde(default = "default_degeneracy_tol")]
    pub degeneracy_tol: f64,
    #[serde(default)]
    pub viable: ViableConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> DriverResult<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> DriverResult<Self> { Self::from_toml(&std::fs::read_to_string(path)?) }

    pub fn validate(&self) -> DriverResult<()> {
        if self.g == 0 {
            return Err(DriverError::Config("g must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0 / 3.0) {
            return Err(DriverError::Config(format!("eta must lie in (0, 1/3], got {}", self.eta)));
        }
        match self.eps {
            Some(e) if !(e > 0.0) => return Err(DriverError::Config(format!("eps must be positive, got {e}"))),
            None if !self.oracle => return Err(DriverError::Config("eps is required when the oracle is off".into())),
            _ => {}
        }
        if self.model.n < 2 {
            return Err(DriverError::Config(format!("chain length {} too short", self.model.n)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum EpsSource {
    Config,
    Oracle,
}

/// A model with its filters, ready to run passes.
pub struct Pipeline {
    pub cfg: RunConfig,
    pub ham: StandardHamiltonian,
    pub eps: f64,
    pub eps_source: EpsSource,
    /// Ground energy estimate `ε₀′` used by the filters and the extraction.
    pub eps0: f64,
    pub spectrum: Option<Spectrum>,
    pub probe: Option<Probe>,
    pub k_reduce: AgspOperator,
    pub k_final: AgspOperator,
    pub final_target: f64,
    pub warnings: Vec<String>,
}

impl Pipeline {
    pub fn new(cfg: &RunConfig) -> DriverResult<Self> {
        cfg.validate()?;
        let ham = make_model(&cfg.model)?;
        let mut warnings = Vec::new();
        let (spectrum, probe) = if cfg.oracle {
            let s = oracle::diagonalize(&ham, cfg.degeneracy_tol)?;
            let p = Probe::new(s.clone(), ham.dense(), ham.n(), ham.d());
            (Some(s), Some(p))
        } else {
            (None, None)
        };
        let (eps, eps_source) = match (&spectrum, cfg.eps) {
            (Some(s), configured) => {
                if let Some(e) = configured {
                    if (e - s.gap).abs() > 0.1 * s.gap {
                        let msg = format!("configured eps {e} differs from the measured gap {} by more than 10%", s.gap);
                        log::warn!("{msg}");
                        warnings.push(msg);
                    }
                }
                (s.gap, EpsSource::Oracle)
            }
            (None, Some(e)) => (e, EpsSource::Config),
            (None, None) => unreachable!("validated"),
        };
        let eps0 = match &spectrum {
            Some(s) => s.eps0,
            None => model::least_eigenvalue(ham.d(), ham.n(), &ham.terms_on(0, ham.n()))?,
        };
        if let Some(s) = &spectrum {
            if s.g != cfg.g {
                let msg = format!("requested g = {} but the oracle finds g = {}", cfg.g, s.g);
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        let v = &cfg.viable;
        let final_target = theory::final_delta(cfg.g, cfg.eta);
        let k_reduce = desk_agsp(&ham, eps0, v.reduce_zeta, eps, v.reduce_budget, v.backend, v.agsp_bond)?;
        let k_final = desk_agsp(&ham, eps0, final_target, eps, v.final_budget, v.backend, v.agsp_bond)?;
        Ok(Pipeline {
            cfg: cfg.clone(),
            ham,
            eps,
            eps_source,
            eps0,
            spectrum,
            probe,
            k_reduce,
            k_final,
            final_target,
            warnings,
        })
    }

    /// Stage targets are enforced only while `h` is within the oracle's
    /// ground degeneracy.
    fn enforce(&self, h: usize) -> bool {
        self.cfg.viable.enforce_targets && self.spectrum.as_ref().is_none_or(|s| h <= s.g)
    }

    /// One outer iteration: the stepping loop, the final step and the
    /// extraction of `γ_h` orthogonal to `prev`.
    pub fn pass(&mut self, h: usize, prev: &[Mps]) -> DriverResult<PassResult> {
        let n = self.ham.n();
        if let Some(p) = self.probe.as_mut() {
            p.prev = prev.iter().map(|s| s.to_dense()).collect();
        }
        let mut vcfg = self.cfg.viable.clone();
        vcfg.enforce_targets = self.enforce(h);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (h as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (e_total, e_left) = match prev.first() {
            Some(g1) => {
                let e = mps::expectation(g1, self.ham.mpo())?;
                let left = (1..n).map(|i| left_energy(&self.ham, g1, i)).collect::<DriverResult<Vec<f64>>>()?;
                (Some(e), Some(left))
            }
            None => (None, None),
        };
        let ctx = StepContext { h, g: self.cfg.g, eps: self.eps, ham: &self.ham, cfg: &vcfg, probe: self.probe.as_ref() };
        let mut records = Vec::new();
        let mut s = ViableSet::initial(h, self.ham.d());
        for i in 1..n {
            let l = viable::schmidt_vecs(i, prev)?;
            let ei = e_left.as_ref().map(|v| v[i - 1]);
            s = viable::step(&s, &l, ei, &ctx, &self.k_reduce, &mut rng, &mut records)?;
        }
        let sn = viable::final_step(&s, prev, e_total, &ctx, &self.k_final, self.final_target, &mut rng, &mut records)?;
        let (state, extraction) = approx_ground_state(&sn, &self.ham, prev, self.eps0, self.eps, self.final_target, self.cfg.g)
            .map_err(|source| DriverError::Extract { h, source })?;
        let energy = mps::expectation(&state, self.ham.mpo())?;
        let ground_overlap = match &self.spectrum {
            Some(s) => Some(s.ground_overlap(&state)?),
            None => None,
        };
        Ok(PassResult {
            h,
            energy,
            energy_original: self.ham.to_original_units(energy),
            ground_overlap,
            bonds: state.bond_dims(),
            targets_enforced: vcfg.enforce_targets,
            e_left,
            extraction,
            records,
            state,
        })
    }
}

/// `⟨γ|H_{[1,i]}|γ⟩` from the left Schmidt vectors.
pub fn left_energy(ham: &StandardHamiltonian, state: &Mps, i: usize) -> DriverResult<f64> {
    if i >= state.len() {
        return Ok(mps::expectation(state, ham.mpo())?);
    }
    let op = ham.left_mpo(i)?;
    let sd = state.schmidt(i)?;
    let mut e = 0.0;
    for (c, a) in sd.coefficients.iter().zip(&sd.left_vectors) {
        if *c > viable::SCHMIDT_ZERO {
            e += c * c * mps::expectation(a, &op)?;
        }
    }
    Ok(e)
}

#[derive(Clone, Debug, Serialize)]
pub struct Extraction {
    pub span_dim: usize,
    pub status: Status,
    pub objective: f64,
    pub gap: f64,
    pub residuals: std::collections::BTreeMap<String, f64>,
    /// The demixing precondition held for the solution.
    pub demix_precondition: bool,
    pub leading_weight: f64,
    /// Overlap with the previous states removed by orthogonalization.
    pub beta: f64,
}

/// The ground-state program over `Span(S_n)`, demixing and orthogonalization against
/// `prev`.
pub fn approx_ground_state(
    sn: &ViableSet,
    ham: &StandardHamiltonian,
    prev: &[Mps],
    eps0: f64,
    eps: f64,
    delta: f64,
    g: usize,
) -> Result<(Mps, Extraction), SdpError> {
    let span = SpanBasis::new(&sn.states)?;
    let h = span.project(ham.mpo())?;
    let sol = sdp::solve_gsa_program(&span, &h, prev)?;
    let (pick, demix_precondition) = match sdp::demix(&sol.sigma, &h, eps0, eps, delta, g) {
        Ok(d) => (d, true),
        Err(SdpError::Precondition(msg)) => {
            log::debug!("demixing precondition fails ({msg}); taking the leading eigenvector");
            (sdp::leading_eigenvector(&sol.sigma, &h)?, false)
        }
        Err(e) => return Err(e),
    };
    let raw = span.state(&pick.coords)?;
    let (state, beta) = sdp::orthogonalize(&raw, prev)?;
    let extraction = Extraction {
        span_dim: span.dim(),
        status: sol.status,
        objective: sol.objective,
        gap: sol.gap,
        residuals: sol.residuals.clone(),
        demix_precondition,
        leading_weight: pick.weight,
        beta,
    };
    Ok((state, extraction))
}

#[derive(Clone, Debug, Serialize)]
pub struct PassResult {
    pub h: usize,
    pub energy: f64,
    pub energy_original: f64,
    pub ground_overlap: Option<f64>,
    pub bonds: Vec<usize>,
    pub targets_enforced: bool,
    /// `E_i` of `γ₁` used as energy-net offsets.
    pub e_left: Option<Vec<f64>>,
    pub extraction: Extraction,
    pub records: Vec<StageRecord>,
    #[serde(skip)]
    pub state: Mps,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleMetrics {
    pub frobenius: f64,
    pub trace_norm: f64,
    /// `√(2g)·‖G−Υ‖_F`.
    pub trace_norm_bound: f64,
    /// `|‖G−Υ‖_F² − (Tr G + Tr Υ − 2Tr(GΥ))|`.
    pub identity_residual: f64,
    pub overlaps: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OvercountDiagnostic {
    pub state_index: usize,
    pub energy: Option<f64>,
    /// Energy above `ε₀` in units of `ε`.
    pub excess: Option<f64>,
    pub threshold: f64,
    pub herald: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GroundSpaceResult {
    pub g: usize,
    pub energies: Vec<f64>,
    pub energies_original: Vec<f64>,
    pub orthonormality_residual: f64,
    pub gram_rank: usize,
    pub oracle: Option<OracleMetrics>,
    pub passes: Vec<PassResult>,
    pub overcount: Option<OvercountDiagnostic>,
}

impl GroundSpaceResult {
    pub fn states(&self) -> Vec<Mps> { self.passes.iter().take(self.g).map(|p| p.state.clone()).collect() }

    /// `Υ = Σ |γ_j⟩⟨γ_j|`, dense.
    pub fn projector(&self) -> Array2<C64> {
        let cols: Vec<_> = self.states().iter().map(|s| s.to_dense()).collect();
        let dim = cols.first().map(|c| c.len()).unwrap_or(0);
        linalg::stack_columns(dim, &cols).dot(&linalg::dagger(&linalg::stack_columns(dim, &cols)))
    }
}

/// Herald check on the last state: fires when it sits at least
/// `fraction·ε` above `ε₀`.
pub fn overcount_check(state_index: usize, energy: Result<f64, String>, eps0: f64, eps: f64, fraction: f64) -> OvercountDiagnostic {
    match energy {
        Ok(e) => {
            let excess = (e - eps0) / eps;
            OvercountDiagnostic {
                state_index,
                energy: Some(e),
                excess: Some(excess),
                threshold: fraction,
                herald: excess >= fraction,
                error: None,
            }
        }
        Err(msg) => OvercountDiagnostic { state_index, energy: None, excess: None, threshold: fraction, herald: true, error: Some(msg) },
    }
}

fn orthonormality(states: &[Mps]) -> DriverResult<(f64, usize)> {
    let k = states.len();
    let mut gram = Array2::<C64>::zeros((k, k));
    let mut worst: f64 = 0.0;
    for a in 0..k {
        for b in 0..k {
            gram[[a, b]] = mps::overlap(&states[a], &states[b])?;
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((gram[[a, b]] - C64::new(want, 0.0)).norm());
        }
    }
    let rank = if k == 0 { 0 } else { linalg::numerical_rank(&linalg::singular_values(&gram)?) };
    Ok((worst, rank))
}

/// The h = 1 pass on its own.
pub fn nondegenerate_gsa(cfg: &RunConfig) -> DriverResult<(Mps, PassResult)> {
    let mut one = cfg.clone();
    one.g = 1;
    one.overcount = false;
    let mut pipe = Pipeline::new(&one)?;
    let pass = pipe.pass(1, &[])?;
    Ok((pass.state.clone(), pass))
}

/// `γ₁` from the nondegenerate pass, then one pass per
/// further state, each orthogonal to the ones before.
pub fn degenerate_gsa(cfg: &RunConfig) -> DriverResult<(GroundSpaceResult, Pipeline)> {
    let mut pipe = Pipeline::new(cfg)?;
    let mut passes: Vec<PassResult> = Vec::new();
    let mut states: Vec<Mps> = Vec::new();
    for h in 1..=cfg.g {
        log::info!("pass h={h}");
        let p = pipe.pass(h, &states)?;
        states.push(p.state.clone());
        passes.push(p);
    }
    let overcount = if cfg.overcount {
        let h = cfg.g + 1;
        log::info!("overcount pass h={h}");
        let energy = match pipe.pass(h, &states) {
            Ok(p) => {
                let e = p.energy;
                passes.push(p);
                Ok(e)
            }
            Err(e) => Err(e.to_string()),
        };
        Some(overcount_check(h, energy, pipe.eps0, pipe.eps, cfg.herald_fraction))
    } else if pipe.spectrum.as_ref().is_some_and(|s| cfg.g > s.g) {
        let e = passes.last().map(|p| p.energy).ok_or_else(|| "no states".to_string());
        Some(overcount_check(cfg.g, e, pipe.eps0, pipe.eps, cfg.herald_fraction))
    } else {
        None
    };
    let (orthonormality_residual, gram_rank) = orthonormality(&states)?;
    let energies: Vec<f64> = passes.iter().take(cfg.g).map(|p| p.energy).collect();
    let mut result = GroundSpaceResult {
        g: cfg.g,
        energies_original: energies.iter().map(|&e| pipe.ham.to_original_units(e)).collect(),
        energies,
        orthonormality_residual,
        gram_rank,
        oracle: None,
        passes,
        overcount,
    };
    if let Some(s) = &pipe.spectrum {
        result.oracle = Some(oracle_metrics(s, &result)?);
    }
    Ok((result, pipe))
}

fn oracle_metrics(s: &Spectrum, result: &GroundSpaceResult) -> DriverResult<OracleMetrics> {
    let g_proj = s.ground_projector();
    let upsilon = result.projector();
    let (frobenius, trace_norm) = oracle::projector_distance(&g_proj, &upsilon)?;
    let overlap = linalg::trace(&g_proj.dot(&upsilon)).re;
    let traces = linalg::trace(&g_proj).re + linalg::trace(&upsilon).re;
    let overlaps = result.states().iter().map(|st| s.ground_overlap(st)).collect::<Result<_, _>>()?;
    Ok(OracleMetrics {
        frobenius,
        trace_norm,
        trace_norm_bound: (2.0 * result.g as f64).sqrt() * frobenius,
        identity_residual: (frobenius * frobenius - (traces - 2.0 * overlap)).abs(),
        overlaps,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelInfo {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub scale: f64,
    pub shift: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AgspInfo {
    pub schedule: AgspSchedule,
    pub diagnostics: AgspDiagnostics,
    pub eps0_prime: f64,
}

impl From<&AgspOperator> for AgspInfo {
    fn from(k: &AgspOperator) -> Self {
        AgspInfo { schedule: k.schedule.clone(), diagnostics: k.diagnostics.clone(), eps0_prime: k.eps0_prime }
    }
}

/// Parameters the run actually used, next to the theoretical ones.
#[derive(Clone, Debug, Serialize)]
pub struct UsedParams {
    pub xi: f64,
    pub energy_net_eta: f64,
    pub trim_target: f64,
    pub truncate_target: f64,
    pub reduce_zeta: f64,
    pub final_target: f64,
    pub truncation_bond: usize,
    pub eig_threshold: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub model: ModelInfo,
    pub eps: f64,
    pub eps_source: EpsSource,
    pub eps0_estimate: f64,
    pub spectrum: Option<SpectrumSummary>,
    pub theory: theory::TheoryReport,
    pub used: UsedParams,
    pub agsp_reduce: AgspInfo,
    pub agsp_final: AgspInfo,
    pub result: GroundSpaceResult,
    pub warnings: Vec<String>,
}

/// Eigenvalues kept in the report's spectrum summary.
pub const REPORT_EIGENVALUES: usize = 16;

pub fn build_report(result: GroundSpaceResult, pipe: &Pipeline) -> RunReport {
    let cfg = &pipe.cfg;
    let v = &cfg.viable;
    let spectrum = pipe.spectrum.as_ref().map(|s| {
        let mut sum = s.summary();
        sum.eigenvalues.truncate(REPORT_EIGENVALUES);
        sum
    });
    RunReport {
        config: cfg.clone(),
        model: ModelInfo {
            name: pipe.ham.name.clone(),
            n: pipe.ham.n(),
            d: pipe.ham.d(),
            scale: pipe.ham.scale,
            shift: pipe.ham.shift,
        },
        eps: pipe.eps,
        eps_source: pipe.eps_source,
        eps0_estimate: pipe.eps0,
        spectrum,
        theory: theory::report(pipe.ham.n(), cfg.g, pipe.eps, cfg.eta),
        used: UsedParams {
            xi: v.xi,
            energy_net_eta: v.energy_net_eta,
            trim_target: v.trim_target,
            truncate_target: v.truncate_target,
            reduce_zeta: v.reduce_zeta,
            final_target: pipe.final_target,
            truncation_bond: v.truncation_bond,
            eig_threshold: v.eig_threshold / cfg.g as f64,
            lambda: theory::lambda(cfg.g),
        },
        agsp_reduce: (&pipe.k_reduce).into(),
        agsp_final: (&pipe.k_final).into(),
        result,
        warnings: pipe.warnings.clone(),
    }
}

impl RunReport {
    pub fn to_json(&self) -> DriverResult<String> { Ok(serde_json::to_string_pretty(self)? + "\n") }

    /// One row per stage: `h,i,stage,size,max_bond,measured_error,wall_ms`.
    pub fn stage_csv(&self) -> String {
        let mut out = String::from("h,i,stage,size,max_bond,measured_error,wall_ms\n");
        for p in &self.result.passes {
            for r in &p.records {
                let m = r.measured.map(|x| format!("{x:e}")).unwrap_or_default();
                out.push_str(&format!("{},{},{},{},{},{},{:.3}\n", r.h, r.i, r.stage, r.size, r.max_bond, m, r.wall_ms));
            }
        }
        out
    }
}

/// Runs the degenerate algorithm and assembles the report.
pub fn run(cfg: &RunConfig) -> DriverResult<RunReport> {
    let (result, pipe) = degenerate_gsa(cfg)?;
    Ok(build_report(result, &pipe))
}

/// Oracle spectrum export for `spectrum` runs.
pub fn spectrum_report(cfg: &RunConfig) -> DriverResult<SpectrumSummary> {
    let ham = make_model(&cfg.model)?;
    Ok(oracle::diagonalize(&ham, cfg.degeneracy_tol)?.summary())
}
