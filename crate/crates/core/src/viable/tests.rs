use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::agsp::exact_agsp;
use crate::linalg::{c, max_abs_diff, numerical_rank, singular_values};
use crate::model::{make_model, ModelSpec};
use crate::oracle::{diagonalize, DEFAULT_DEGENERACY_TOL};
use crate::sdp::ProgramSolution;

fn model(name: &str, n: usize, params: &[(&str, f64)]) -> StandardHamiltonian {
    let spec = ModelSpec {
        name: name.into(),
        n,
        params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        seed: None,
    };
    make_model(&spec).unwrap()
}

fn probe_for(ham: &StandardHamiltonian) -> Probe {
    let sp = diagonalize(ham, DEFAULT_DEGENERACY_TOL).unwrap();
    Probe::new(sp, ham.dense(), ham.n(), ham.d())
}

fn residual_in_span(states: &[Mps], v: &Mps) -> f64 { SpanBasis::new(states).unwrap().coordinates(v).unwrap().1 }

#[test]
fn stage_names() {
    let names: Vec<String> = [Stage::Initial, Stage::Extended, Stage::Trimmed, Stage::Truncated, Stage::Reduced, Stage::Final]
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(names, ["initial", "extend", "trim", "truncate", "reduce", "final_reduce"]);
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let cfg = ViableConfig { bond: Some(3), net_mode: NetMode::Exhaustive, ..Default::default() };
    let text = toml::to_string(&cfg).unwrap();
    assert_eq!(toml::from_str::<ViableConfig>(&text).unwrap(), cfg);
    assert!(toml::from_str::<ViableConfig>("bogus = 1").is_err());
    let partial: ViableConfig = toml::from_str("xi = 0.01").unwrap();
    assert_eq!(partial.xi, 0.01);
    assert_eq!(partial.truncation_bond, ViableConfig::default().truncation_bond);
}

#[test]
fn extend_multiplies_cardinality_by_d() {
    let s0 = ViableSet::initial(1, 2);
    let s1 = extend(&s0);
    assert_eq!(s1.len(), 2);
    assert_eq!(s1.i, 1);
    assert!(s1.bounds_hold());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let states: Vec<Mps> = (0..3).map(|_| Mps::random(&mut rng, 2, 3, 2)).collect();
    let s = ViableSet { i: 3, states, s_bound: 3, b_bound: 2, ..ViableSet::initial(1, 2) };
    let e = extend(&s);
    assert_eq!(e.len(), 6);
    assert_eq!(e.s_bound, 6);
    assert_eq!(e.b_bound, 2);
    assert!(e.bounds_hold());
    assert!(e.states.iter().all(|m| m.len() == 4));
}

#[test]
fn extend_keeps_witness_left_vectors() {
    let ham = model("ising", 4, &[]);
    let p = probe_for(&ham);
    let gv = p.spectrum.ground_vectors();
    let gamma = Mps::from_dense(2, 4, &gv.column(0).to_owned()).unwrap();
    for i in 2..4 {
        let prev = schmidt_vecs(i - 1, std::slice::from_ref(&gamma)).unwrap();
        let s = ViableSet { i: i - 1, s_bound: prev.len(), b_bound: 4, states: prev, ..ViableSet::initial(1, 2) };
        let ext = extend(&s);
        for v in schmidt_vecs(i, std::slice::from_ref(&gamma)).unwrap() {
            assert!(residual_in_span(&ext.states, &v) < 1e-10, "cut {i}");
        }
    }
}

#[test]
fn contraction_of_product_state_is_pure() {
    let v = Mps::product(2, &[0, 1, 1, 0, 1]);
    for cut in 1..=5 {
        let bc = boundary_contraction(&v, cut).unwrap();
        assert_eq!(bc.bond, 1);
        assert!((linalg::trace(&bc.matrix).re - 1.0).abs() < 1e-12);
        assert_eq!(numerical_rank(&singular_values(&bc.matrix).unwrap()), 1);
    }
}

#[test]
fn contraction_matches_dense_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (d, n) = (2usize, 6usize);
    for _ in 0..5 {
        let v = Mps::random(&mut rng, d, n, 3).normalized().unwrap();
        let dense = v.to_dense();
        for cut in 2..n {
            let bc = boundary_contraction(&v, cut).unwrap();
            let sd = v.schmidt(cut).unwrap();
            let rights: Vec<Array1<C64>> = sd.right_vectors.iter().map(|r| r.to_dense()).collect();
            let (dl, dr) = (d.pow(cut as u32 - 1), d.pow((n - cut) as u32));
            let b = bc.bond;
            assert_eq!(b, sd.coefficients.iter().filter(|&&x| x > SCHMIDT_ZERO).count());
            let mut expect = Array2::<C64>::zeros((d * b, d * b));
            for a in 0..d {
                for ap in 0..d {
                    for j in 0..b {
                        for k in 0..b {
                            let mut acc = c(0.0, 0.0);
                            for l in 0..dl {
                                let mut x = c(0.0, 0.0);
                                let mut y = c(0.0, 0.0);
                                for r in 0..dr {
                                    x += dense[(l * d + a) * dr + r] * rights[j][r].conj();
                                    y += dense[(l * d + ap) * dr + r] * rights[k][r].conj();
                                }
                                acc += x * y.conj();
                            }
                            expect[[a * b + j, ap * b + k]] = acc;
                        }
                    }
                }
            }
            assert!(max_abs_diff(bc.matrix.view(), expect.view()) < 1e-10, "cut {cut}");
            assert!((linalg::trace(&bc.matrix).re - 1.0).abs() < 1e-10);
            assert!(linalg::eigvalsh(&bc.matrix).unwrap().iter().all(|&e| e > -1e-12));
        }
    }
}

#[test]
fn schmidt_vecs_counts() {
    let prod = Mps::product(2, &[1, 0, 1]);
    assert_eq!(schmidt_vecs(1, &[prod.clone()]).unwrap().len(), 1);
    assert_eq!(schmidt_vecs(3, &[prod]).unwrap().len(), 1);

    let mut bell = Array1::<C64>::zeros(4);
    bell[0] = c(0.5f64.sqrt(), 0.0);
    bell[3] = c(0.5f64.sqrt(), 0.0);
    let bell = Mps::from_dense(2, 2, &bell).unwrap();
    assert_eq!(schmidt_vecs(1, &[bell]).unwrap().len(), 2);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let states: Vec<Mps> = (0..3).map(|_| Mps::random(&mut rng, 2, 5, 3)).collect();
        for cut in 1..5 {
            let ranks: usize = states
                .iter()
                .map(|s| {
                    let m = s.to_dense().into_shape_with_order((1 << cut, 1 << (5 - cut))).unwrap();
                    numerical_rank(&singular_values(&m).unwrap())
                })
                .sum();
            let vecs = schmidt_vecs(cut, &states).unwrap();
            assert!(vecs.len() <= ranks);
            for s in &states {
                for l in s.schmidt(cut).unwrap().left_vectors {
                    assert!(residual_in_span(&vecs, &l) < 1e-9);
                }
            }
        }
    }
}

#[test]
fn eigenvalue_threshold_keeps_large_weights() {
    let mut sigma = Array2::<C64>::zeros((4, 4));
    for (k, w) in [0.7, 0.3 - 1e-10, 6e-11, 4e-11].iter().enumerate() {
        sigma[[k, k]] = c(*w, 0.0);
    }
    let sol = ProgramSolution { sigma, objective: 0.0, residuals: BTreeMap::new(), status: Status::Optimal, gap: 0.0, iterations: 0 };
    let threshold = ViableConfig::default().eig_threshold / 1.0;
    let (kept, mass) = sol.support(threshold).unwrap();
    assert_eq!(kept.len(), 2);
    assert!((kept[0].0 - 0.7).abs() < 1e-15);
    assert!((mass - (1.0 - 1e-10)).abs() < 1e-14);
}

fn ctx<'a>(ham: &'a StandardHamiltonian, cfg: &'a ViableConfig, probe: &'a Probe, h: usize, g: usize) -> StepContext<'a> {
    StepContext { h, g, eps: probe.spectrum.gap, ham, cfg, probe: Some(probe) }
}

#[test]
fn trim_retains_witness_at_first_cuts() {
    let ham = model("ising", 4, &[]);
    let p = probe_for(&ham);
    let cfg = ViableConfig::default();
    let cx = ctx(&ham, &cfg, &p, 1, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = ViableSet::initial(1, 2);
    for _ in 0..2 {
        let s1 = extend(&s);
        let (s2, report) = trim(&s1, &[], None, &cx, &mut rng).unwrap();
        assert!(report.accepted.contains(&Provenance::Witness));
        assert!(report.points.len() <= cfg.max_candidates);
        assert!(p.measure(&s2.states).unwrap().overlap_error <= cfg.trim_target);
        assert!(s2.bounds_hold());
        s = s1;
    }
}

#[test]
fn truncate_keeps_small_bond_members() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let states: Vec<Mps> = (0..3).map(|_| Mps::random(&mut rng, 2, 6, 2).normalized().unwrap()).collect();
    let l = vec![Mps::random(&mut rng, 2, 6, 6).normalized().unwrap()];
    let s2 = ViableSet { i: 6, s_bound: 3, b_bound: 2, states: states.clone(), ..ViableSet::initial(2, 2) };
    let s3 = truncate_set(&s2, &l, 4).unwrap();
    assert_eq!(s3.len(), 4);
    assert_eq!(s3.b_bound, 6);
    for (a, b) in states.iter().zip(&s3.states) {
        let ov = mps::overlap(a, b).unwrap().norm();
        assert!((ov - 1.0).abs() < 1e-10);
    }
    assert!((mps::overlap(&l[0], &s3.states[3]).unwrap().norm() - 1.0).abs() < 1e-12);
    assert!(s3.bounds_hold());
}

#[test]
fn single_cut_truncation_loses_at_most_tail_times_nuclear_norm() {
    // |⟨u − T u|v⟩| ≤ σ_{P+1}(u) Σ_j μ_j(v)
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, cut) = (6usize, 3usize);
    for trial in 0..20 {
        let v = Mps::random(&mut rng, 2, n, 1 + trial % 3).normalized().unwrap();
        let noise = Mps::random(&mut rng, 2, n, 8).normalized().unwrap();
        let u = mps::linear_combine(&[v.clone(), noise], &[c(1.0, 0.0), c(0.4, 0.0)]).unwrap().state.normalized().unwrap();
        for p in [1usize, 2, 4] {
            let t = u.truncate_at_cut(cut, p).unwrap();
            let shape = (1 << cut, 1 << (n - cut));
            let su = singular_values(&u.to_dense().into_shape_with_order(shape).unwrap()).unwrap();
            let sv = singular_values(&v.to_dense().into_shape_with_order(shape).unwrap()).unwrap();
            let kept: f64 = su.iter().take(p).map(|x| x * x).sum::<f64>().sqrt();
            let tail = su.get(p).cloned().unwrap_or(0.0);
            // T u is renormalized; undo it before comparing
            let unnorm = mps::overlap(&t, &v).unwrap() * kept;
            let full = mps::overlap(&u, &v).unwrap();
            assert!((full - unnorm).norm() <= tail * sv.sum() + 1e-12, "trial {trial} P {p}");
        }
    }
}

#[test]
fn reduce_with_identity_keeps_members_and_appends_l() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let states: Vec<Mps> = (0..3).map(|_| Mps::random(&mut rng, 2, 3, 2)).collect();
    let l = vec![Mps::random(&mut rng, 2, 3, 2).normalized().unwrap()];
    let s3 = ViableSet { i: 3, s_bound: 3, b_bound: 2, states: states.clone(), ..ViableSet::initial(1, 2) };
    let terms = vec![(Mpo::identity(2, 3), Mpo::identity(2, 2))];
    let s4 = reduce(&s3, &terms, &l, 0.01).unwrap();
    assert_eq!(s4.len(), 4);
    assert!(s4.bounds_hold());
    for (a, b) in states.iter().zip(&s4.states) {
        assert!((mps::overlap(a, b).unwrap().norm() / a.norm() - 1.0).abs() < 1e-10);
    }
    let c4 = compact(&s4).unwrap();
    assert_eq!(c4.len(), 4);
    for s in &s4.states {
        assert!(residual_in_span(&c4.states, s) < 1e-10);
    }
}

#[test]
fn reduce_term_count_is_operator_schmidt_rank() {
    let ham = model("ising", 4, &[]);
    let sp = diagonalize(&ham, DEFAULT_DEGENERACY_TOL).unwrap();
    let k = exact_agsp(&ham.dense(), sp.eps0, sp.gap, 0.1).unwrap();
    let kd = k.to_dense();
    for cut in 1..4 {
        let (dl, dr) = (1usize << cut, 1usize << (4 - cut));
        let mut realigned = Array2::<C64>::zeros((dl * dl, dr * dr));
        for l in 0..dl {
            for lp in 0..dl {
                for r in 0..dr {
                    for rp in 0..dr {
                        realigned[[l * dl + lp, r * dr + rp]] = kd[[l * dr + r, lp * dr + rp]];
                    }
                }
            }
        }
        let rank = numerical_rank(&singular_values(&realigned).unwrap());
        let terms = k.terms_at_cut(cut, 4, 2).unwrap();
        assert_eq!(terms.len(), rank, "cut {cut}");
    }
}

#[test]
fn final_reduce_appends_previous_states() {
    let ham = model("ising", 4, &[]);
    let sp = diagonalize(&ham, DEFAULT_DEGENERACY_TOL).unwrap();
    let k = exact_agsp(&ham.dense(), sp.eps0, sp.gap, 0.01).unwrap();
    let kd = k.to_dense();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let states: Vec<Mps> = (0..3).map(|_| Mps::random(&mut rng, 2, 4, 2)).collect();
    let s3 = ViableSet { i: 4, s_bound: 3, b_bound: 2, states: states.clone(), ..ViableSet::initial(1, 2) };

    let out = final_reduce(&s3, &k, &[], 1e-3).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(out.stage, Stage::Final);
    for (s, o) in states.iter().zip(&out.states) {
        let mut want = kd.dot(&s.to_dense());
        let nrm = linalg::norm(want.view());
        want.mapv_inplace(|z| z / nrm);
        let ov = linalg::inner(want.view(), o.to_dense().view()).norm();
        assert!((ov - 1.0).abs() < 1e-10);
    }

    let gamma = Mps::from_dense(2, 4, &sp.ground_vectors().column(0).to_owned()).unwrap();
    let out2 = final_reduce(&s3, &k, std::slice::from_ref(&gamma), 1e-3).unwrap();
    assert_eq!(out2.len(), 4);
    assert!(out2.bounds_hold());
}

#[test]
fn missed_target_aborts_with_stage() {
    let ham = model("ising", 4, &[]);
    let p = probe_for(&ham);
    let cfg = ViableConfig { trim_target: -1.0, ..Default::default() };
    let cx = ctx(&ham, &cfg, &p, 1, 2);
    let k = exact_agsp(&ham.dense(), p.spectrum.eps0, p.spectrum.gap, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut records = Vec::new();
    let err = step(&ViableSet::initial(1, 2), &[], None, &cx, &k, &mut rng, &mut records).unwrap_err();
    assert!(matches!(err, ViableError::TargetMissed { h: 1, i: 1, stage: Stage::Trimmed, .. }), "{err}");
    assert_eq!(records.last().unwrap().stage, Stage::Trimmed);
}

#[test]
fn two_site_chain_runs_to_the_final_target() {
    let ham = model("tfim", 2, &[("h", 0.5)]);
    let p = probe_for(&ham);
    assert_eq!(p.spectrum.g, 1);
    let cfg = ViableConfig::default();
    let cx = ctx(&ham, &cfg, &p, 1, 1);
    let (eps0, gap) = (p.spectrum.eps0, p.spectrum.gap);
    let k = exact_agsp(&ham.dense(), eps0, gap, cfg.reduce_zeta).unwrap();
    let target = theory::final_delta(1, 0.05);
    let k_final = exact_agsp(&ham.dense(), eps0, gap, target).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut records = Vec::new();
    let s = step(&ViableSet::initial(1, 2), &[], None, &cx, &k, &mut rng, &mut records).unwrap();
    let last = final_step(&s, &[], None, &cx, &k_final, target, &mut rng, &mut records).unwrap();
    assert_eq!(last.i, 2);
    assert_eq!(last.error, ErrorTag::Energy(target));
    let fin = records.last().unwrap();
    assert_eq!(fin.stage, Stage::Final);
    assert!(fin.measured.unwrap() <= target);
    assert!(records.iter().all(|r| r.measured.unwrap() <= r.target));
}

#[test]
fn span_projector_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cols: Vec<Array1<C64>> = (0..3).map(|_| linalg::random_vector(&mut rng, 8)).collect();
    let mut with_dup = cols.clone();
    with_dup.push(&cols[0] * c(2.0, 1.0));
    let p = span_projector(&with_dup, 8).unwrap();
    assert!(max_abs_diff(p.dot(&p).view(), p.view()) < 1e-12);
    assert!((linalg::trace(&p).re - 3.0).abs() < 1e-10);
}
