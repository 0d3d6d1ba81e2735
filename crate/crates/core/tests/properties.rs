//! Cross-module properties: accumulation determinism, knowledge-matrix
//! structure, optimizer identities (monotonicity, gradients, fixed points,
//! power iteration, SPD systems), scoring decompositions, and NDCG laws.

use std::collections::HashMap;

use approx::assert_abs_diff_eq;
use ndarray::Array2;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use lmm::corpus::{build_cross_covariance, CrossCovariance, TermVector, Vocabulary};
use lmm::corpus::{vectorize_query, ClickRecord};
use lmm::eval::ndcg_at_k;
use lmm::knowledge::{
    build_knowledge_matrix, extract_context, logistic_weight, mine_synonyms, ClickGraph,
    KnowledgeMatrix, KnowledgePair,
};
use lmm::linalg::{gram, symmetric_eigenvalues};
use lmm::scorer::{latent_match, rank_top_k, score_ir, Collection, Model, ScoreMode};
use lmm::trainer::{
    cd_sweep, cd_sweep_sequential, gd_step, init_mappings, objective, train, MappingPair,
    TrainConfig,
};

// ---------------------------------------------------------------------------
// Shared generators
// ---------------------------------------------------------------------------

fn dense_covariance(rng: &mut StdRng, dx: usize, dy: usize, scale: f64) -> CrossCovariance {
    let mut entries = Vec::with_capacity(dx * dy);
    for u in 0..dx {
        for v in 0..dy {
            entries.push((u as u32, v as u32, rng.random_range(-scale..scale)));
        }
    }
    CrossCovariance::from_triples(entries, dx, dy).unwrap()
}

fn random_knowledge(rng: &mut StdRng, dim: usize, n_pairs: usize) -> KnowledgeMatrix {
    let terms: Vec<String> = (0..dim).map(|i| format!("t{i}")).collect();
    let vocab = Vocabulary::from_terms(terms.clone()).unwrap();
    let mut pairs = Vec::new();
    let mut used = std::collections::HashSet::new();
    while pairs.len() < n_pairs {
        let a = rng.random_range(0..dim);
        let b = rng.random_range(0..dim);
        if a == b || !used.insert((a.min(b), a.max(b))) {
            continue;
        }
        pairs.push(KnowledgePair {
            member1: terms[a].clone(),
            member2: terms[b].clone(),
            weight: rng.random_range(0.1..1.0),
        });
    }
    build_knowledge_matrix(&pairs, &vocab).unwrap().0
}

/// An instance on which the simultaneous sweep provably settles: click-style
/// covariances are entrywise positive, and a positive starting point keeps
/// every update sign-aligned, so the iteration contracts to a genuine fixed
/// point instead of the sign-flip two-cycle random starts can fall into.
fn aligned_instance(seed: u64) -> (CrossCovariance, TrainConfig, MappingPair) {
    let mut rng = StdRng::seed_from_u64(seed);
    let (dx, dy) = (8usize, 8usize);
    let mut entries = Vec::with_capacity(dx * dy);
    for u in 0..dx {
        for v in 0..dy {
            entries.push((u as u32, v as u32, rng.random_range(0.01..0.25)));
        }
    }
    let c = CrossCovariance::from_triples(entries, dx, dy).unwrap();
    let mut config = TrainConfig::new(1);
    config.theta2 = 0.1;
    config.lambda2 = 0.5;
    config.rho2 = 0.5;
    config.seed = seed;
    let warm = MappingPair::from_maps(
        Array2::from_elem((dx, 1), 0.5),
        Array2::from_elem((dy, 1), 0.5),
    )
    .unwrap();
    (c, config, warm)
}

// ---------------------------------------------------------------------------
// Corpus accumulation
// ---------------------------------------------------------------------------

/// Chunked parallel accumulation equals a single-pass dense sum even when the
/// stream spans many chunks.
#[test]
fn chunked_covariance_matches_single_pass_over_many_chunks() {
    let mut rng = StdRng::seed_from_u64(11);
    let (dx, dy) = (6, 5);
    let mut pairs = Vec::new();
    for _ in 0..2500 {
        let xe = vec![(rng.random_range(0..dx) as u32, rng.random_range(0.5..2.0))];
        let ye = vec![(rng.random_range(0..dy) as u32, rng.random_range(0.5..2.0))];
        let w = rng.random_range(1..4u32);
        pairs.push((
            TermVector::new(xe, dx).unwrap(),
            TermVector::new(ye, dy).unwrap(),
            w,
        ));
    }
    let c = build_cross_covariance(&pairs, (dx, dy)).unwrap();

    let mut dense = Array2::<f64>::zeros((dx, dy));
    let mut n = 0u64;
    for (x, y, w) in &pairs {
        n += u64::from(*w);
        for &(u, xw) in x.entries() {
            for &(v, yw) in y.entries() {
                dense[[u as usize, v as usize]] += f64::from(*w) * xw * yw;
            }
        }
    }
    dense /= n as f64;
    assert_eq!(c.n(), n);
    let got = c.to_dense();
    for u in 0..dx {
        for v in 0..dy {
            assert_abs_diff_eq!(got[[u, v]], dense[[u, v]], epsilon = 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Sparse accumulation equals dense matrix arithmetic on small instances.
    #[test]
    fn sparse_covariance_matches_dense_oracle(
        seed in 0u64..1000,
        dx in 1usize..20,
        dy in 1usize..20,
        n in 1usize..50,
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut pairs = Vec::new();
        for _ in 0..n {
            let mut xe = Vec::new();
            for id in 0..dx {
                if rng.random_bool(0.3) {
                    xe.push((id as u32, rng.random_range(-1.0..1.0f64)));
                }
            }
            let mut ye = Vec::new();
            for id in 0..dy {
                if rng.random_bool(0.3) {
                    ye.push((id as u32, rng.random_range(-1.0..1.0f64)));
                }
            }
            let w = rng.random_range(0..3u32);
            pairs.push((TermVector::new(xe, dx).unwrap(), TermVector::new(ye, dy).unwrap(), w));
        }
        let total: u64 = pairs.iter().map(|(_, _, w)| u64::from(*w)).sum();
        prop_assume!(total > 0);
        let c = build_cross_covariance(&pairs, (dx, dy)).unwrap();

        let mut dense = Array2::<f64>::zeros((dx, dy));
        for (x, y, w) in &pairs {
            for &(u, xw) in x.entries() {
                for &(v, yw) in y.entries() {
                    dense[[u as usize, v as usize]] += f64::from(*w) * xw * yw;
                }
            }
        }
        dense /= total as f64;
        let got = c.to_dense();
        for u in 0..dx {
            for v in 0..dy {
                prop_assert!((got[[u, v]] - dense[[u, v]]).abs() <= 1e-12);
            }
        }
    }

    /// Total query-vector weight equals the number of in-vocabulary tokens.
    #[test]
    fn query_vector_weight_counts_in_vocab_tokens(reps in 1usize..6, oov in 0usize..4) {
        let vocab = Vocabulary::from_terms(vec!["a".into(), "b".into()]).unwrap();
        let mut text = "a b ".repeat(reps);
        for _ in 0..oov {
            text.push_str("zzz ");
        }
        let v = vectorize_query(&text, &vocab);
        prop_assert_eq!(v.total_weight(), (2 * reps) as f64);
    }
}

// ---------------------------------------------------------------------------
// Knowledge structure
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The assembled knowledge matrix is bitwise symmetric.
    #[test]
    fn knowledge_matrix_is_bitwise_symmetric(seed in 0u64..1000, dim in 2usize..12, n in 1usize..8) {
        let mut rng = StdRng::seed_from_u64(seed);
        let n = n.min(dim * (dim - 1) / 2);
        prop_assume!(n >= 1);
        let r = random_knowledge(&mut rng, dim, n);
        for u in 0..dim as u32 {
            for v in 0..dim as u32 {
                prop_assert_eq!(r.get(u, v).to_bits(), r.get(v, u).to_bits());
            }
        }
    }

    /// Logistic support weighting never decreases, and increases strictly
    /// until the ratio support/scale saturates f64 at 1.
    #[test]
    fn logistic_weight_is_monotone(s1 in 0u32..200, s2 in 0u32..200, scale in 0.1f64..10.0) {
        prop_assume!(s1 < s2);
        prop_assert!(logistic_weight(s1, scale) <= logistic_weight(s2, scale));
        if f64::from(s2) / scale <= 30.0 {
            prop_assert!(logistic_weight(s1, scale) < logistic_weight(s2, scale));
        }
    }
}

/// Mining twice from the same records yields identical lists, and supports
/// match a brute-force enumeration over (document, query-pair, context).
#[test]
fn mining_matches_brute_force_and_is_deterministic() {
    let words = ["get", "free", "app", "game", "download"];
    for seed in 0..40u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let n_docs = rng.random_range(1..=5usize);
        let n_queries = rng.random_range(2..=10usize);
        let mut records = Vec::new();
        for _ in 0..n_queries {
            let len = rng.random_range(1..=4usize);
            let query: Vec<&str> =
                (0..len).map(|_| words[rng.random_range(0..words.len())]).collect();
            let doc = rng.random_range(0..n_docs);
            records.push(ClickRecord {
                query: query.join(" "),
                doc_id: format!("doc{doc}"),
                doc_title: "title".into(),
                clicks: rng.random_range(1..5),
            });
        }
        let graph = ClickGraph::from_records(&records);
        let mined = mine_synonyms(&graph, usize::MAX, 1.0);
        let again = mine_synonyms(&graph, usize::MAX, 1.0);
        assert_eq!(mined, again, "seed {seed}: mining must be deterministic");

        // Brute force: every document, every ordered query pair, every
        // position pair with a shared context and differing filler terms.
        let mut support: HashMap<(String, String), std::collections::HashSet<(String, String)>> =
            HashMap::new();
        for (doc, queries) in graph.docs() {
            let queries: Vec<&String> = queries.iter().collect();
            for qa in &queries {
                for qb in &queries {
                    let ta: Vec<String> = qa.split_whitespace().map(String::from).collect();
                    let tb: Vec<String> = qb.split_whitespace().map(String::from).collect();
                    for i in 0..ta.len() {
                        for j in 0..tb.len() {
                            let ca = extract_context(&ta, i).unwrap();
                            let cb = extract_context(&tb, j).unwrap();
                            if ca != cb || ta[i] == tb[j] {
                                continue;
                            }
                            let (t1, t2) = if ta[i] < tb[j] {
                                (ta[i].clone(), tb[j].clone())
                            } else {
                                (tb[j].clone(), ta[i].clone())
                            };
                            support
                                .entry((t1, t2))
                                .or_default()
                                .insert((doc.to_string(), ca));
                        }
                    }
                }
            }
        }
        let brute: HashMap<(String, String), u32> = support
            .into_iter()
            .map(|(pair, sites)| (pair, sites.len() as u32))
            .collect();
        assert_eq!(mined.len(), brute.len(), "seed {seed}: pair sets differ");
        for pair in &mined {
            let key = (pair.term1.clone(), pair.term2.clone());
            assert_eq!(
                Some(&pair.support),
                brute.get(&key),
                "seed {seed}: support mismatch for {key:?}"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Optimizer identities
// ---------------------------------------------------------------------------

/// Sequential (Gauss-Seidel) sweeps never increase the objective when both
/// blocks are exact minimizers (no knowledge terms).
#[test]
fn sequential_sweeps_are_monotone_without_knowledge() {
    for seed in 0..20u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let dx = rng.random_range(2..=8usize);
        let dy = rng.random_range(2..=8usize);
        let c = dense_covariance(&mut rng, dx, dy, 1.0);
        let mut config = TrainConfig::new(rng.random_range(1..=4usize));
        config.theta2 = rng.random_range(0.0..0.2);
        config.lambda2 = rng.random_range(0.05..1.0);
        config.rho2 = rng.random_range(0.05..1.0);
        config.seed = seed;
        let mut maps = init_mappings(&config, dx, dy, None).unwrap();
        let mut prev = objective(&c, &maps, None, None, &config).unwrap();
        for sweep in 0..10 {
            maps = cd_sweep_sequential(&c, &maps, None, None, &config).unwrap();
            let f = objective(&c, &maps, None, None, &config).unwrap();
            assert!(
                f <= prev + 1e-10 * prev.abs().max(1.0),
                "seed {seed} sweep {sweep}: objective rose from {prev} to {f}"
            );
            prev = f;
        }
    }
}

/// At a converged point of the simultaneous sweep, the mappings themselves
/// are (nearly) fixed and one more sweep leaves the objective stationary.
#[test]
fn simultaneous_sweep_is_stationary_at_its_fixed_point() {
    for seed in 0..5u64 {
        let (c, mut config, warm) = aligned_instance(seed);
        config.tol = 1e-12;
        config.max_iters = 5000;
        let (maps, report) = train(&c, None, None, &config, Some(&warm)).unwrap();
        assert!(report.converged, "seed {seed}: did not converge");
        let f = objective(&c, &maps, None, None, &config).unwrap();
        let swept = cd_sweep(&c, &maps, None, None, &config).unwrap();
        let f2 = objective(&c, &swept, None, None, &config).unwrap();
        assert!(
            (f2 - f).abs() <= 1e-8 * f.abs().max(1.0),
            "seed {seed}: objective moved {f} -> {f2} at the fixed point"
        );
        let drift: f64 =
            (maps.x_map() - swept.x_map()).iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale: f64 = maps.x_map().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(
            drift <= 1e-5 * scale.max(1.0),
            "seed {seed}: mapping moved {drift:.3e} at the fixed point"
        );
    }
}

/// The analytic gradient read off a unit-step gradient update matches central
/// finite differences of the objective.
#[test]
fn analytic_gradient_matches_central_differences() {
    let h = 1e-5;
    for seed in 0..6u64 {
        let mut rng = StdRng::seed_from_u64(100 + seed);
        let dx = rng.random_range(2..=8usize);
        let dy = rng.random_range(2..=8usize);
        let d = rng.random_range(1..=5usize);
        let c = dense_covariance(&mut rng, dx, dy, 1.0);
        let mut config = TrainConfig::new(d);
        config.theta2 = rng.random_range(0.0..0.3);
        config.lambda2 = rng.random_range(0.05..1.0);
        config.rho2 = rng.random_range(0.05..1.0);
        config.seed = seed;
        let with_knowledge = seed % 2 == 0;
        let (rx, ry) = if with_knowledge {
            config.alpha = rng.random_range(0.01..0.2);
            config.beta = rng.random_range(0.01..0.2);
            (
                Some(random_knowledge(&mut rng, dx, 3.min(dx * (dx - 1) / 2))),
                Some(random_knowledge(&mut rng, dy, 3.min(dy * (dy - 1) / 2))),
            )
        } else {
            (None, None)
        };
        let maps = init_mappings(&config, dx, dy, None).unwrap();

        let mut unit = config.clone();
        unit.gamma = 1.0;
        let stepped = gd_step(&c, &maps, rx.as_ref(), ry.as_ref(), &unit).unwrap();
        let grad_x = maps.x_map() - stepped.x_map();
        let grad_y = maps.y_map() - stepped.y_map();

        let mut max_rel = 0.0f64;
        let mut check = |row: usize, col: usize, on_x: bool, analytic: f64| {
            let bump = |delta: f64| {
                let mut xm = maps.x_map().clone();
                let mut ym = maps.y_map().clone();
                if on_x {
                    xm[[row, col]] += delta;
                } else {
                    ym[[row, col]] += delta;
                }
                let bumped = MappingPair::from_maps(xm, ym).unwrap();
                objective(&c, &bumped, rx.as_ref(), ry.as_ref(), &config).unwrap()
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        };
        for row in 0..dx {
            for col in 0..d {
                check(row, col, true, grad_x[[row, col]]);
            }
        }
        for row in 0..dy {
            for col in 0..d {
                check(row, col, false, grad_y[[row, col]]);
            }
        }
        assert!(max_rel < 1e-4, "seed {seed}: max relative gradient error {max_rel:.3e}");
    }
}

/// Coordinate descent and the gradient step share stationary points: after CD
/// converges tightly, one small gradient step barely moves the objective.
#[test]
fn coordinate_and_gradient_methods_share_fixed_points() {
    for seed in 0..5u64 {
        let (c, mut config, warm) = aligned_instance(40 + seed);
        config.tol = 1e-10;
        config.max_iters = 10_000;
        let (maps, report) = train(&c, None, None, &config, Some(&warm)).unwrap();
        assert!(report.converged, "seed {seed}: CD did not converge");
        let f = objective(&c, &maps, None, None, &config).unwrap();
        let mut gd_config = config.clone();
        gd_config.gamma = 1e-3;
        let stepped = gd_step(&c, &maps, None, None, &gd_config).unwrap();
        let f2 = objective(&c, &stepped, None, None, &gd_config).unwrap();
        assert!(
            (f2 - f).abs() < 1e-8,
            "seed {seed}: gradient step moved the objective {f} -> {f2}"
        );
    }
}

/// Without the cross-gram and knowledge terms, two simultaneous sweeps apply
/// the linear map C·Cᵀ/(λ2·ρ2) to the query-side mapping.
#[test]
fn two_unregularized_sweeps_equal_one_power_iteration() {
    for seed in 0..5u64 {
        let mut rng = StdRng::seed_from_u64(7 + seed);
        let dx = rng.random_range(2..=8usize);
        let dy = rng.random_range(2..=8usize);
        let c = dense_covariance(&mut rng, dx, dy, 1.0);
        let mut config = TrainConfig::new(rng.random_range(1..=4usize));
        config.theta2 = 0.0;
        config.lambda2 = rng.random_range(0.5..2.0);
        config.rho2 = rng.random_range(0.5..2.0);
        config.seed = seed;
        let maps = init_mappings(&config, dx, dy, None).unwrap();
        let once = cd_sweep(&c, &maps, None, None, &config).unwrap();
        let twice = cd_sweep(&c, &once, None, None, &config).unwrap();

        let cc = c.to_dense();
        let expected = cc.dot(&cc.t()).dot(maps.x_map()) / (config.lambda2 * config.rho2);
        let got = twice.x_map();
        for u in 0..dx {
            for k in 0..config.d {
                assert_abs_diff_eq!(got[[u, k]], expected[[u, k]], epsilon = 1e-10);
            }
        }
    }
}

/// Both sweep systems are SPD with smallest eigenvalue at least the ridge.
#[test]
fn sweep_systems_keep_eigenvalues_above_the_ridges() {
    for seed in 0..10u64 {
        let mut rng = StdRng::seed_from_u64(900 + seed);
        let d = rng.random_range(1..=5usize);
        let config = {
            let mut c = TrainConfig::new(d);
            c.theta2 = rng.random_range(0.0..0.5);
            c.lambda2 = rng.random_range(0.05..1.0);
            c.rho2 = rng.random_range(0.05..1.0);
            c.seed = seed;
            c
        };
        let maps = init_mappings(&config, rng.random_range(2..9), rng.random_range(2..9), None)
            .unwrap();
        let floor = config.lambda2.min(config.rho2);
        let mut sys_x = gram(maps.y_map()) * config.theta2;
        let mut sys_y = gram(maps.x_map()) * config.theta2;
        for i in 0..d {
            sys_x[[i, i]] += config.lambda2;
            sys_y[[i, i]] += config.rho2;
        }
        for sys in [sys_x, sys_y] {
            let eigs = symmetric_eigenvalues(&sys);
            let min_eig = *eigs.last().unwrap();
            assert!(
                min_eig >= floor - 1e-10,
                "seed {seed}: min eigenvalue {min_eig} under ridge floor {floor}"
            );
        }
    }
}

/// Objective traces and trained mappings are bit-identical across worker
/// counts.
#[test]
fn training_is_bitwise_deterministic_across_worker_counts() {
    let mut rng = StdRng::seed_from_u64(77);
    let (dx, dy) = (7, 6);
    let c = dense_covariance(&mut rng, dx, dy, 0.4);
    let rx = random_knowledge(&mut rng, dx, 4);
    let ry = random_knowledge(&mut rng, dy, 4);
    let mut config = TrainConfig::new(3);
    config.theta2 = 0.1;
    config.lambda2 = 0.5;
    config.rho2 = 0.5;
    config.alpha = 0.05;
    config.beta = 0.05;
    config.max_iters = 8;
    config.tol = 0.0;

    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| train(&c, Some(&rx), Some(&ry), &config, None).unwrap())
    };
    let (maps1, report1) = run(1);
    for threads in [2, 4] {
        let (maps_n, report_n) = run(threads);
        let t1: Vec<u64> = report1.objective_trace.iter().map(|f| f.to_bits()).collect();
        let tn: Vec<u64> = report_n.objective_trace.iter().map(|f| f.to_bits()).collect();
        assert_eq!(t1, tn, "objective trace differs at {threads} workers");
        assert_eq!(
            maps1.x_map().iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
            maps_n.x_map().iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
            "query mapping differs at {threads} workers"
        );
        assert_eq!(
            maps1.y_map().iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
            maps_n.y_map().iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
            "document mapping differs at {threads} workers"
        );
    }
}

// ---------------------------------------------------------------------------
// Scoring laws
// ---------------------------------------------------------------------------

fn toy_model(seed: u64, terms: &[&str], d: usize) -> Model {
    let vocab = Vocabulary::from_terms(terms.iter().map(|t| t.to_string()).collect()).unwrap();
    let mut config = TrainConfig::new(d);
    config.seed = seed;
    let maps = init_mappings(&config, vocab.len(), vocab.len(), None).unwrap();
    Model::new(maps, vocab).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Scaling the query scales the latent score linearly.
    #[test]
    fn latent_score_is_linear_in_the_query(seed in 0u64..500, a in -4.0f64..4.0) {
        let model = toy_model(seed, &["a", "b", "c"], 2);
        let x = TermVector::new(vec![(0, 1.0), (2, 2.0)], 3).unwrap();
        let y = TermVector::new(vec![(1, 1.0), (2, 0.5)], 3).unwrap();
        let scaled = TermVector::new(vec![(0, a), (2, 2.0 * a)], 3).unwrap();
        let lhs = latent_match(&model, &scaled, &y);
        let rhs = a * latent_match(&model, &x, &y);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    /// The combined score minus the latent score is exactly the dot product.
    #[test]
    fn combined_score_decomposes_into_latent_plus_dot(seed in 0u64..500) {
        let model = toy_model(seed, &["a", "b", "c", "d"], 3);
        let mut rng = StdRng::seed_from_u64(seed);
        let x = TermVector::new(
            vec![(0, rng.random_range(-2.0..2.0)), (2, rng.random_range(-2.0..2.0))], 4).unwrap();
        let y = TermVector::new(
            vec![(1, rng.random_range(-2.0..2.0)), (2, rng.random_range(-2.0..2.0))], 4).unwrap();
        let combined = score_ir(&model, &x, &y);
        let latent = latent_match(&model, &x, &y);
        prop_assert_eq!((latent + x.dot(&y)).to_bits(), combined.to_bits());
    }
}

/// Rankings do not depend on the order documents were loaded in.
#[test]
fn ranking_is_invariant_to_collection_order() {
    use rand::seq::SliceRandom;
    let model = toy_model(3, &["alpha", "beta", "gamma", "delta"], 2);
    let mut entries: Vec<(String, String)> = (0..12)
        .map(|i| {
            let title = match i % 4 {
                0 => "alpha beta",
                1 => "beta gamma",
                2 => "gamma delta alpha",
                _ => "delta",
            };
            (format!("doc{i:02}"), title.to_string())
        })
        .collect();
    let baseline = {
        let coll = Collection::build(&entries, model.vocab(), None).unwrap();
        rank_top_k(&model, "alpha gamma", &coll, 12, ScoreMode::Combined).unwrap()
    };
    let mut rng = StdRng::seed_from_u64(5);
    for _ in 0..10 {
        entries.shuffle(&mut rng);
        let coll = Collection::build(&entries, model.vocab(), None).unwrap();
        let ranked = rank_top_k(&model, "alpha gamma", &coll, 12, ScoreMode::Combined).unwrap();
        assert_eq!(baseline, ranked);
    }
}

/// BM25 scores on a 4-document corpus match a hand-evaluated spreadsheet of
/// the formula.
#[test]
fn bm25_matches_hand_spreadsheet_on_toy_corpus() {
    use lmm::scorer::bm25_score;
    let vocab = Vocabulary::from_terms(
        ["free", "game", "download", "music"].iter().map(|s| s.to_string()).collect(),
    )
    .unwrap();
    let entries = vec![
        ("d1".to_string(), "free game".to_string()),
        ("d2".to_string(), "free music download".to_string()),
        ("d3".to_string(), "game game download".to_string()),
        ("d4".to_string(), "music".to_string()),
    ];
    let coll = Collection::build(&entries, &vocab, None).unwrap();
    // Spreadsheet rows: N=4, avg_len=(2+3+3+1)/4=2.25,
    // df(free)=2, df(game)=2, df(download)=2, df(music)=2.
    let idf = ((4.0 - 2.0 + 0.5) / (2.0 + 0.5) + 1.0f64).ln();
    let norm = |len: f64| 1.0 - 0.75 + 0.75 * len / 2.25;
    let weight = |tf: f64, len: f64| tf * (1.2 + 1.0) / (tf + 1.2 * norm(len));
    let q = vectorize_query("game download", &vocab);
    let expected = [
        idf * weight(1.0, 2.0),                           // d1: game only
        idf * weight(1.0, 3.0),                           // d2: download only
        idf * weight(2.0, 3.0) + idf * weight(1.0, 3.0),  // d3: game twice + download
        0.0,                                              // d4: no query term
    ];
    for (doc, want) in coll.docs().iter().zip(expected) {
        let got = bm25_score(coll.stats(), &q, &doc.tf, 1.2, 0.75);
        assert_abs_diff_eq!(got, want, epsilon = 1e-9);
    }
}

// ---------------------------------------------------------------------------
// NDCG laws
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// NDCG always lands in [0, 1].
    #[test]
    fn ndcg_stays_within_unit_interval(
        labels in proptest::collection::vec(0u8..=3, 0..12),
        k in 1usize..12,
    ) {
        let v = ndcg_at_k(&labels, k);
        prop_assert!((0.0..=1.0).contains(&v), "ndcg {v} for {labels:?} at {k}");
    }

    /// Promoting a better-labeled item from a later rank to an earlier one
    /// (judgment pool unchanged) never lowers NDCG at cutoffs covering the
    /// earlier rank.
    #[test]
    fn promoting_a_better_item_never_lowers_ndcg(
        labels in proptest::collection::vec(0u8..=3, 2..10),
        a_seed in 0usize..100,
        b_seed in 0usize..100,
    ) {
        let a = a_seed % labels.len();
        let b = b_seed % labels.len();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assume!(lo < hi && labels[hi] > labels[lo]);
        let mut promoted = labels.clone();
        promoted.swap(lo, hi);
        for k in (lo + 1)..=labels.len() {
            prop_assert!(
                ndcg_at_k(&promoted, k) >= ndcg_at_k(&labels, k) - 1e-12,
                "promoting rank {hi} to {lo} lowered ndcg@{k} for {labels:?}"
            );
        }
    }
}

/// Of all 24 orderings of the labels [3,2,1,0], exactly the descending one
/// reaches NDCG@4 = 1.
#[test]
fn only_the_sorted_ordering_attains_perfect_ndcg() {
    fn permutations(items: &mut Vec<u8>, k: usize, out: &mut Vec<Vec<u8>>) {
        if k == 1 {
            out.push(items.clone());
            return;
        }
        for i in 0..k {
            permutations(items, k - 1, out);
            if k.is_multiple_of(2) {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
    }
    let mut items = vec![3u8, 2, 1, 0];
    let mut all = Vec::new();
    permutations(&mut items, 4, &mut all);
    assert_eq!(all.len(), 24);
    let mut perfect = Vec::new();
    for p in &all {
        if (ndcg_at_k(p, 4) - 1.0).abs() < 1e-12 {
            perfect.push(p.clone());
        }
    }
    assert_eq!(perfect, vec![vec![3u8, 2, 1, 0]]);
}
