use gsa_core::driver::{self, approx_ground_state, degenerate_gsa, left_energy, nondegenerate_gsa, overcount_check, RunConfig};
use gsa_core::linalg;
use gsa_core::model::{make_model, ModelSpec};
use gsa_core::mps::{self, Mps};
use gsa_core::oracle::{diagonalize, DEFAULT_DEGENERACY_TOL};
use gsa_core::sdp::SpanBasis;
use gsa_core::viable::{theory, ViableSet};
use ndarray_linalg::Eigh;

fn config(text: &str) -> RunConfig { RunConfig::from_toml(text).unwrap() }

fn spec(name: &str, n: usize, params: &[(&str, f64)]) -> ModelSpec {
    ModelSpec {
        name: name.into(),
        n,
        params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        seed: None,
    }
}

fn product_basis(n: usize) -> Vec<Mps> {
    (0..1usize << n).map(|k| Mps::product(2, &(0..n).map(|s| (k >> (n - 1 - s)) & 1).collect::<Vec<_>>())).collect()
}

#[test]
fn rejects_bad_configs() {
    let base = "g = 2\neta = 0.05\n[model]\nname = \"ising\"\nn = 4\n";
    assert!(RunConfig::from_toml(base).is_ok());
    assert!(RunConfig::from_toml(&base.replace("eta = 0.05", "eta = 0.4")).is_err());
    assert!(RunConfig::from_toml(&base.replace("g = 2", "g = 0")).is_err());
    assert!(RunConfig::from_toml(&format!("eps = -1.0\n{base}")).is_err());
    assert!(RunConfig::from_toml(&format!("oracle = false\n{base}")).is_err());
    assert!(RunConfig::from_toml(&format!("bogus = 1\n{base}")).is_err());
}

#[test]
fn two_site_model_reaches_ground_energy() {
    let cfg = config("g = 1\neta = 0.05\n[model]\nname = \"tfim\"\nn = 2\nparams = { h = 0.5 }\n");
    let sp = diagonalize(&make_model(&cfg.model).unwrap(), DEFAULT_DEGENERACY_TOL).unwrap();
    let (state, pass) = nondegenerate_gsa(&cfg).unwrap();
    let ham = make_model(&cfg.model).unwrap();
    let e = mps::expectation(&state, ham.mpo()).unwrap();
    assert!((e - sp.eps0).abs() < 1e-7, "{e} vs {}", sp.eps0);
    assert!((pass.energy - e).abs() < 1e-12);
}

#[test]
fn ising_ground_overlap_meets_final_target() {
    let cfg = config("g = 1\neta = 0.2\neps = 1.0\nseed = 3\n[model]\nname = \"ising\"\nn = 6\n");
    let (state, _) = nondegenerate_gsa(&cfg).unwrap();
    let sp = diagonalize(&make_model(&cfg.model).unwrap(), DEFAULT_DEGENERACY_TOL).unwrap();
    let ov = sp.ground_overlap(&state).unwrap();
    assert!(ov >= 1.0 - 0.2 * 0.2 / (4.0 * theory::f(1)), "{ov}");
}

#[test]
fn single_state_run_matches_nondegenerate_path() {
    let cfg = config("g = 1\neta = 0.1\nseed = 5\n[model]\nname = \"tfim\"\nn = 4\nparams = { h = 0.8 }\n");
    let (state, _) = nondegenerate_gsa(&cfg).unwrap();
    let (res, _) = degenerate_gsa(&cfg).unwrap();
    assert_eq!(res.passes.len(), 1);
    let other = &res.states()[0];
    assert_eq!(state.to_dense(), other.to_dense());
}

#[test]
fn degenerate_run_identities() {
    let cfg = config("g = 2\neta = 0.1\neps = 1.0\nseed = 2\n[model]\nname = \"ising\"\nn = 4\n");
    let (res, _) = degenerate_gsa(&cfg).unwrap();
    let sp = diagonalize(&make_model(&cfg.model).unwrap(), DEFAULT_DEGENERACY_TOL).unwrap();
    let g = sp.ground_projector();
    let u = res.projector();
    let diff = &g - &u;
    let fro = linalg::fro_norm(&diff);
    let (w, _) = diff.eigh(ndarray_linalg::UPLO::Lower).unwrap();
    let trace_norm: f64 = w.iter().map(|x| x.abs()).sum();
    assert!(trace_norm <= (2.0 * 2f64).sqrt() * fro + 1e-12);
    let tr_gu = linalg::trace(&g.dot(&u)).re;
    assert!((fro * fro - (4.0 - 2.0 * tr_gu)).abs() < 1e-10);

    let metrics = res.oracle.as_ref().unwrap();
    assert!((metrics.frobenius - fro).abs() < 1e-10);
    assert!((metrics.trace_norm - trace_norm).abs() < 1e-9);
    assert!(res.orthonormality_residual <= 1e-8);
    assert_eq!(res.gram_rank, 2);

    let states = res.states();
    assert!(mps::overlap(&states[0], &states[1]).unwrap().norm() < 1e-8);
    let delta = 0.1 * 0.1 / (4.0 * theory::f(2));
    for s in &states {
        assert!(sp.ground_overlap(s).unwrap() >= 1.0 - delta, "{}", sp.ground_overlap(s).unwrap());
    }
    for p in &res.passes {
        let last = p.records.last().unwrap();
        assert!(p.bonds.iter().all(|&b| b <= last.b_bound));
    }
}

#[test]
fn full_span_extraction_is_exact() {
    let ham = make_model(&spec("tfim", 3, &[("h", 0.6)])).unwrap();
    let sp = diagonalize(&ham, DEFAULT_DEGENERACY_TOL).unwrap();
    let sn = ViableSet { i: 3, s_bound: 8, b_bound: 1, states: product_basis(3), ..ViableSet::initial(1, 2) };
    let (state, ex) = approx_ground_state(&sn, &ham, &[], sp.eps0, sp.gap, 1e-3, 1).unwrap();
    let e = mps::expectation(&state, ham.mpo()).unwrap();
    assert!((e - sp.eps0).abs() < 1e-7);
    assert_eq!(ex.span_dim, 8);
}

#[test]
fn extraction_is_optimal_in_span_and_orthogonal() {
    let ham = make_model(&spec("ising", 4, &[])).unwrap();
    let sp = diagonalize(&ham, DEFAULT_DEGENERACY_TOL).unwrap();
    let gv = sp.ground_vectors();
    let gamma = Mps::from_dense(2, 4, &gv.column(0).to_owned()).unwrap();
    let states: Vec<Mps> = product_basis(4).into_iter().step_by(3).chain([gv.column(1).to_owned()].iter().map(|v| Mps::from_dense(2, 4, v).unwrap())).collect();
    let sn = ViableSet { i: 4, s_bound: states.len(), b_bound: 4, states: states.clone(), ..ViableSet::initial(2, 2) };

    // best energy over the part of the span orthogonal to γ₁
    let span = SpanBasis::new(&states).unwrap();
    let q = span.dense_basis();
    let g1 = gamma.to_dense();
    let proj = &q - &linalg::outer(g1.view(), g1.view()).dot(&q);
    let basis = linalg::orth_columns(&proj, 1e-20).unwrap();
    let hr = linalg::dagger(&basis).dot(&ham.dense()).dot(&basis);
    let (w, _) = hr.eigh(ndarray_linalg::UPLO::Lower).unwrap();

    let (state, _) = approx_ground_state(&sn, &ham, std::slice::from_ref(&gamma), sp.eps0, sp.gap, 1e-3, 2).unwrap();
    let e = mps::expectation(&state, ham.mpo()).unwrap();
    assert!(e <= w[0] + 1e-7, "{e} vs {}", w[0]);
    assert!(mps::overlap(&state, &gamma).unwrap().norm() < 1e-8);
}

#[test]
fn left_energy_matches_dense() {
    let ham = make_model(&spec("heisenberg", 5, &[])).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(17);
    let v = Mps::random(&mut rng, 2, 5, 3).normalized().unwrap();
    let dense = v.to_dense();
    for i in 1..5 {
        let p = ham.partition(i).unwrap();
        let hl = linalg::kron(&p.dense_left(), &linalg::identity(1 << (5 - i)));
        let want = linalg::quad(dense.view(), &hl, dense.view()).re;
        assert!((left_energy(&ham, &v, i).unwrap() - want).abs() < 1e-10, "cut {i}");
    }
}

#[test]
fn herald_threshold() {
    let quiet = overcount_check(3, Ok(-1.0 + 0.1), -1.0, 1.0, 0.5);
    assert!(!quiet.herald);
    let loud = overcount_check(3, Ok(-1.0 + 0.6), -1.0, 1.0, 0.5);
    assert!(loud.herald);
    let custom = overcount_check(3, Ok(-1.0 + 0.6), -1.0, 1.0, 0.75);
    assert!(!custom.herald);
    assert_eq!(custom.threshold, 0.75);
    let failed = overcount_check(3, Err("no state".into()), -1.0, 1.0, 0.5);
    assert!(failed.herald);
    assert!(failed.error.is_some());
}

#[test]
fn report_echoes_config_and_warns_on_eps_mismatch() {
    let cfg = config("g = 2\neta = 0.1\neps = 2.0\nherald_fraction = 0.3\n[model]\nname = \"ising\"\nn = 4\n");
    let report = driver::run(&cfg).unwrap();
    assert_eq!(report.config.herald_fraction, 0.3);
    assert!(report.warnings.iter().any(|w| w.contains("eps")), "{:?}", report.warnings);
    assert!((report.eps - 1.0).abs() < 1e-9);
    assert!(report.result.overcount.is_none());
    let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(json["config"]["herald_fraction"], 0.3);
    let csv = report.stage_csv();
    assert!(csv.starts_with("h,i,stage,size,max_bond,measured_error,wall_ms\n"));
    assert_eq!(csv.lines().count() - 1, report.result.passes.iter().map(|p| p.records.len()).sum::<usize>());
}
