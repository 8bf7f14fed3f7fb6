use std::process::ExitCode;
use std::time::{Duration, Instant};

use gsa_core::agsp::{desk_agsp, exact_agsp, filter_width, PropagatorBackend};
use gsa_core::driver::{self, RunConfig, RunReport};
use gsa_core::linalg::{self, c};
use gsa_core::model::{make_model, ModelSpec};
use gsa_core::mps;
use gsa_core::oracle::{diagonalize, DEFAULT_DEGENERACY_TOL};
use gsa_core::sdp::Status;
use gsa_core::suites;
use gsa_core::viable::{Provenance, Stage};
use gsa_core::C64;
use ndarray::Array2;
use ndarray_linalg::{Eigh, Norm, UPLO};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome { Outcome { pass, detail } }

fn ising(n: usize, g: usize) -> RunConfig {
    RunConfig::from_toml(&format!("g = {g}\neta = 0.05\neps = 1.0\nseed = 1\n[model]\nname = \"ising\"\nn = {n}\n")).unwrap()
}

fn dense_filter(h: &Array2<C64>, eps0: f64, eps: f64, zeta: f64) -> Array2<C64> {
    let x = 33.0 - 8.0 * zeta.ln();
    let (w, v) = h.eigh(UPLO::Lower).unwrap();
    let mut scaled = v.clone();
    for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
        let f = (-x * (w[j] - eps0).powi(2) / (2.0 * eps * eps)).exp();
        col.mapv_inplace(|z| z * f);
    }
    scaled.dot(&v.t().mapv(|z| z.conj()))
}

fn op_norm(a: &Array2<C64>) -> f64 {
    let (w, _) = a.eigh(UPLO::Lower).unwrap();
    w.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `‖G−Υ‖_F` and the orthonormality residual, recomputed densely.
fn dense_check(report: &RunReport) -> (f64, f64) {
    let ham = make_model(&report.config.model).unwrap();
    let sp = diagonalize(&ham, DEFAULT_DEGENERACY_TOL).unwrap();
    let gp = sp.ground_projector();
    let states = report.result.states();
    let mut ups = Array2::<C64>::zeros(gp.raw_dim());
    let mut ortho: f64 = 0.0;
    for (a, sa) in states.iter().enumerate() {
        let v = sa.to_dense();
        ups = ups + linalg::outer(v.view(), v.view());
        for (b, sb) in states.iter().enumerate() {
            let want = if a == b { 1.0 } else { 0.0 };
            ortho = ortho.max((mps::overlap(sa, sb).unwrap() - c(want, 0.0)).norm());
        }
    }
    ((&gp - &ups).norm_l2(), ortho)
}

fn run_timed(cfg: &RunConfig) -> (RunReport, Duration) {
    let t = Instant::now();
    let r = driver::run(cfg).unwrap();
    (r, t.elapsed())
}

fn end_to_end(runs: &[(&RunReport, Duration)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (r, wall) in runs {
        let (fro, ortho) = dense_check(r);
        let ok = fro <= 0.05 && ortho <= 1e-8 && wall.as_secs_f64() <= 600.0;
        pass &= ok;
        parts.push(format!("n={} ‖G−Υ‖_F={fro:.3e} ortho={ortho:.1e} wall={:.1}s", r.config.model.n, wall.as_secs_f64()));
    }
    outcome(pass, parts.join("; "))
}

fn tfim_regression() -> Outcome {
    let cfg = RunConfig::from_toml(
        "g = 1\neta = 0.05\nseed = 1\n[model]\nname = \"tfim\"\nn = 8\nparams = { h = 0.3 }\n[viable]\nbackend = \"spectral\"\n",
    )
    .unwrap();
    let (r, wall) = run_timed(&cfg);
    let (fro, ortho) = dense_check(&r);
    outcome(fro <= 0.05 && ortho <= 1e-8, format!("‖G−Υ‖_F={fro:.3e} wall={:.1}s", wall.as_secs_f64()))
}

fn agsp_exact() -> Outcome {
    let ham = make_model(&ModelSpec { name: "ising".into(), n: 6, params: Default::default(), seed: None }).unwrap();
    let sp = diagonalize(&ham, DEFAULT_DEGENERACY_TOL).unwrap();
    let h = ham.dense();
    let mut pass = true;
    let mut parts = Vec::new();
    for zeta in [0.5, 0.1, 0.01] {
        let a = exact_agsp(&h, sp.eps0, sp.gap, zeta).unwrap().to_dense();
        let formula = (&a - &dense_filter(&h, sp.eps0, sp.gap, zeta)).norm_max();
        let applied = a.dot(&sp.eigenvectors);
        let norms: Vec<f64> = applied.columns().into_iter().map(|col| col.norm_l2()).collect();
        let retention = norms[..sp.g].iter().cloned().fold(f64::INFINITY, f64::min);
        let shrink = norms[sp.g..].iter().cloned().fold(0.0, f64::max);
        let ok = formula <= 1e-9 && shrink <= zeta / 2.0 + 1e-9 && retention >= 19.0 / 20.0 - 1e-9 && (filter_width(zeta) - (33.0 - 8.0 * zeta.ln())).abs() < 1e-12;
        pass &= ok;
        parts.push(format!("ζ={zeta}: shrink={shrink:.2e} retention={retention:.6} formula={formula:.1e}"));
    }
    outcome(pass, parts.join("; "))
}

fn agsp_budget() -> Outcome {
    let ham = make_model(&ModelSpec { name: "ising".into(), n: 4, params: Default::default(), seed: None }).unwrap();
    let sp = diagonalize(&ham, DEFAULT_DEGENERACY_TOL).unwrap();
    let (zeta, target) = (0.01, 1e-3);
    let k = desk_agsp(&ham, sp.eps0, zeta, sp.gap, target, PropagatorBackend::Trotter, None).unwrap();
    let measured = op_norm(&(&dense_filter(&ham.dense(), sp.eps0, sp.gap, zeta) - &k.to_dense()));
    let d = &k.diagnostics;
    let s = &k.schedule;
    let components = s.delta_t + s.delta_d + d.propagator_error + d.compression_error;
    let ok = measured <= d.budget && d.budget <= target && (components - d.budget).abs() <= 1e-15 * d.budget.max(1.0);
    outcome(
        ok,
        format!(
            "‖A−K‖={measured:.3e} budget={:.3e} (δ_T={:.1e} δ_D={:.1e} prop={:.1e} compr={:.1e}) target={target:e}",
            d.budget, s.delta_t, s.delta_d, d.propagator_error, d.compression_error
        ),
    )
}

fn lemma_suites() -> Outcome {
    let required = [
        "interchangeability",
        "omnibus_overlap",
        "orthogonalising",
        "demixing",
        "boundary_contraction",
        "truncation_lemma",
        "eckart_young",
        "appendix_a",
        "appendix_c",
    ];
    let reports = suites::property_suite(1000, 2024).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &reports {
        let needed = required.contains(&r.name.as_str());
        let ok = r.passed && (!needed || r.instances >= 1000);
        pass &= ok;
        parts.push(format!("{}:{}/{}", r.name, r.violations, r.instances));
    }
    pass &= required.iter().all(|n| reports.iter().any(|r| r.name == *n));
    outcome(pass, format!("violations/instances {}", parts.join(" ")))
}

fn trim_witness(report: &RunReport) -> Outcome {
    let mut pass = true;
    let mut cuts = 0;
    let mut worst: f64 = 0.0;
    for p in &report.result.passes {
        for r in p.records.iter().filter(|r| r.stage == Stage::Trimmed) {
            cuts += 1;
            let trim = r.trim.as_ref().unwrap();
            let witness_ok = trim.points.iter().any(|pt| pt.provenance == Provenance::Witness && pt.status == Status::Optimal);
            let err = r.measured.unwrap_or(f64::INFINITY);
            worst = worst.max(err);
            pass &= witness_ok && err <= 0.01;
        }
    }
    let expected = report.result.passes.len() * report.config.model.n;
    pass &= cuts == expected;
    outcome(pass, format!("{cuts} trims, worst overlap error {worst:.2e}"))
}

fn overcount() -> Outcome {
    let cfg = ising(6, 3);
    let r = driver::run(&cfg).unwrap();
    let ham = make_model(&cfg.model).unwrap();
    let sp = diagonalize(&ham, DEFAULT_DEGENERACY_TOL).unwrap();
    let Some(diag) = r.result.overcount.as_ref() else {
        return outcome(false, "no overcount diagnostic".into());
    };
    let third = r.result.passes.get(2).map(|p| mps::expectation(&p.state, ham.mpo()).unwrap());
    match third {
        Some(e) => outcome(
            diag.herald && e >= sp.eps0 + sp.gap / 2.0,
            format!("E₃−ε₀={:.4} ε/2={:.4} herald={}", e - sp.eps0, sp.gap / 2.0, diag.herald),
        ),
        None => outcome(diag.herald, format!("third pass failed, herald={} ({:?})", diag.herald, diag.error)),
    }
}

fn determinism(first: &RunReport) -> Outcome {
    let a = first.to_json().unwrap();
    let b = driver::run(&first.config).unwrap().to_json().unwrap();
    outcome(a == b, format!("{} bytes, identical={}", a.len(), a == b))
}

fn main() -> ExitCode {
    let (r6, w6) = run_timed(&ising(6, 2));
    let (r8, w8) = run_timed(&ising(8, 2));
    let results = [
        ("1 end-to-end Ising", end_to_end(&[(&r6, w6), (&r8, w8)])),
        ("2 g=1 regression TFIM", tfim_regression()),
        ("3 exact AGSP bounds", agsp_exact()),
        ("4 AAGSP measured budget", agsp_budget()),
        ("5 lemma suites", lemma_suites()),
        ("6 trim witness feasibility", trim_witness(&r6)),
        ("7 overcount herald", overcount()),
        ("8 determinism", determinism(&r6)),
    ];
    let mut all = true;
    for (name, o) in &results {
        println!("criterion {name}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        all &= o.pass;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
