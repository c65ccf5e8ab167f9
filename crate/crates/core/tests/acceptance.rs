//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! stdout (bypassing the harness capture) before asserting.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use contrascope::bench::{run_bench, BenchConfig};
use contrascope::cleaner::{clean, corruption_experiment, CleanConfig, CorruptionRun};
use contrascope::corpus::{
    generate_corruption, generate_planted, split_by_group, Bundle, CorruptionConfig, DocId, DualCorpus,
    EmbeddingMatrix, PlantedConfig, QueryRecord, SplitFractions, BASE_SPACE,
};
use contrascope::engine::{batch_search, search, SearchParams};
use contrascope::evalkit::{evaluate, search_interval, tune_alpha, AlphaSearchConfig, AlphaSearchTrace};
use contrascope::trainer::{
    apply_adapter, apply_adapter_queries, loss_gradient, resolve_tuples, train, Adapter, TrainConfig,
    TrainOutcome, TrainingTuple,
};
use contrascope::vecmath::{combined_score, hoyer, ScoreWeights, SparsityKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const ADAPTED: &str = "adapted";

/// Heavy experiments and timing must not overlap.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(name: &str, pass: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = out.flush();
}

fn check(name: &str, pass: bool, detail: String) {
    report(name, pass, &detail);
    assert!(pass, "{name}: {detail}");
}

/// Compensated (Neumaier) sum.
fn neumaier(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

fn oracle_hoyer(a: &[f32], b: &[f32]) -> f64 {
    // f32 differences are exact in f64
    let d: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x as f64 - y as f64).collect();
    let l1 = neumaier(d.iter().map(|x| x.abs()));
    let l2 = neumaier(d.iter().map(|x| x * x)).sqrt();
    let n = (d.len() as f64).sqrt();
    (n - l1 / l2) / (n - 1.0)
}

#[test]
fn hoyer_kernel_exactness() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let d = [2, 3, 16, 64, 257, 768, 1024][i % 7];
        let scale = 10f32.powi(rng.random_range(-3..4));
        let mut v = || (0..d).map(|_| scale * rng.sample::<f32, _>(StandardNormal)).collect::<Vec<f32>>();
        let (a, b) = (v(), v());
        worst = worst.max((hoyer(&a, &b).unwrap() - oracle_hoyer(&a, &b)).abs());
    }
    let mut boundary_ok = true;
    for d in [2usize, 7, 64, 768] {
        let zero = vec![0.0f32; d];
        let mut one = zero.clone();
        one[d / 2] = -3.7;
        let flat: Vec<f32> = (0..d).map(|i| if i % 3 == 0 { 0.3 } else { -0.3 }).collect();
        boundary_ok &= hoyer(&one, &zero).unwrap() == 1.0 && hoyer(&flat, &zero).unwrap() == 0.0;
    }
    let elapsed = start.elapsed();
    check(
        "hoyer kernel exactness",
        worst <= 1e-9 && boundary_ok && elapsed < Duration::from_secs(1),
        format!("max |err| {worst:.2e} over 1000 pairs (tol 1e-9), boundaries exact {boundary_ok}, {elapsed:.2?}"),
    );
}

#[test]
fn non_transitivity() {
    let _g = serial();
    let start = Instant::now();
    let mut ok = true;
    let mut details = Vec::new();
    for d in [16usize, 64, 256] {
        let eps = 1.0 / (2.0 * d as f64);
        let mut a = vec![0.0f64; d];
        a[0] = 1.0;
        let mut b = vec![eps; d];
        b[0] = 1.0;
        b[1] = 0.0;
        let mut c = vec![0.0f64; d];
        c[1] = 1.0;
        let sd = (d as f64).sqrt();
        let (ac, bc, ab) = (hoyer(&a, &c).unwrap(), hoyer(&b, &c).unwrap(), hoyer(&a, &b).unwrap());
        // hand ratios: A-C has sqrt(2), B-C at most 3/sqrt(2), A-B exactly sqrt(d-2)
        let h = |r: f64| (sd - r) / (sd - 1.0);
        let ratios_ok = (ac - h(2f64.sqrt())).abs() < 1e-12
            && bc >= h(3.0 / 2f64.sqrt()) - 1e-12
            && (ab - h(((d - 2) as f64).sqrt())).abs() < 1e-12;
        let bounds_ok = ac >= 1.0 - 2.0 / sd && bc >= 1.0 - 3.0 / sd && ab <= 2.0 / sd;
        ok &= ratios_ok && bounds_ok;
        details.push(format!("d={d}: AC {ac:.4} BC {bc:.4} AB {ab:.4}"));
    }
    let elapsed = start.elapsed();
    check("non-transitivity", ok && elapsed < Duration::from_secs(1), format!("{} ({elapsed:.2?})", details.join("; ")));
}

/// Separate scalar loss used as the finite-difference reference.
fn oracle_loss(w: &[f64], d: usize, batch: &[TrainingTuple], tau: f64) -> f64 {
    let map = |x: &[f64]| -> Vec<f64> { (0..d).map(|r| (0..d).map(|c| w[r * d + c] * x[c]).sum()).collect() };
    let h = |u: &[f64], v: &[f64]| -> f64 {
        let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
        let l1: f64 = diff.iter().map(|x| x.abs()).sum();
        let l2: f64 = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n = (d as f64).sqrt();
        (n - l1 / l2) / (n - 1.0)
    };
    let anchors: Vec<Vec<f64>> = batch.iter().map(|t| map(&t.anchor)).collect();
    let pos: Vec<Vec<f64>> = batch.iter().map(|t| map(&t.positive)).collect();
    let neg: Vec<Vec<f64>> = batch.iter().map(|t| map(&t.hard_negative)).collect();
    let mut total = 0.0;
    for i in 0..batch.len() {
        let num = (h(&anchors[i], &pos[i]) / tau).exp();
        let den: f64 = (0..batch.len())
            .map(|j| (h(&anchors[i], &pos[j]) / tau).exp() + (h(&anchors[i], &neg[j]) / tau).exp())
            .sum();
        total += -(num / den).ln();
    }
    total / batch.len() as f64
}

#[test]
fn gradient_correctness() {
    let _g = serial();
    let start = Instant::now();
    let (d, n, tau, step) = (16usize, 4usize, 0.02, 1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    let mut points = 0;
    while points < 20 {
        let w: Vec<f64> = (0..d * d)
            .map(|k| if k % (d + 1) == 0 { 1.0 } else { 0.0 } + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut v = || (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>();
        let batch: Vec<TrainingTuple> = (0..n).map(|_| TrainingTuple::new(v(), v(), v()).unwrap()).collect();
        let adapter = Adapter::new(d, d, w.clone()).unwrap();
        // keep every evaluated difference coordinate away from the |x| kink
        let mapped = |x: &[f64]| adapter.apply(x).unwrap();
        let near_kink = batch.iter().any(|ti| {
            let a = mapped(&ti.anchor);
            batch.iter().any(|tj| {
                [mapped(&tj.positive), mapped(&tj.hard_negative)]
                    .iter()
                    .any(|p| a.iter().zip(p).any(|(x, y)| (x - y).abs() < 1e-3))
            })
        });
        if near_kink {
            continue;
        }
        let (_, analytic) = loss_gradient(&batch, tau, &adapter, 0.0).unwrap();
        let mut probe = w.clone();
        let numeric: Vec<f64> = (0..d * d)
            .map(|k| {
                probe[k] = w[k] + step;
                let up = oracle_loss(&probe, d, &batch, tau);
                probe[k] = w[k] - step;
                let down = oracle_loss(&probe, d, &batch, tau);
                probe[k] = w[k];
                (up - down) / (2.0 * step)
            })
            .collect();
        let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&analytic).max(norm(&numeric)));
        points += 1;
    }
    let elapsed = start.elapsed();
    check(
        "gradient correctness",
        worst < 1e-4 && elapsed < Duration::from_secs(10),
        format!("max relative error {worst:.2e} at {points} points (tol 1e-4), {elapsed:.2?}"),
    );
}

#[test]
fn oracle_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let cfg = PlantedConfig {
        groups: 250,
        dim_cos: 64,
        dim_sparse: 64,
        sparse_support: 4,
        distractor_count: 490,
        seed: 5,
        ..Default::default()
    };
    let bundle = generate_planted(&cfg).unwrap();
    // ten exact duplicates under new ids force score ties
    let dup_src: Vec<usize> = (0..10).map(|i| i * 97).collect();
    let ids: Vec<DocId> = dup_src.iter().map(|i| DocId::new(format!("zz-dup{i}")).unwrap()).collect();
    let mut extra = DualCorpus::new(ids, vec![]).unwrap();
    for space in bundle.corpus.spaces() {
        let rows: Vec<&[f32]> = dup_src.iter().map(|&i| space.matrix.row(i)).collect();
        extra
            .add_space(space.space.clone(), EmbeddingMatrix::from_rows(space.space.dim, &rows).unwrap())
            .unwrap();
    }
    let corpus = bundle.corpus.concat(&extra).unwrap();
    assert_eq!(corpus.len(), 2000);
    let mut queries: Vec<QueryRecord> = bundle.queries.iter().take(90).cloned().collect();
    // queries that are themselves duplicated documents see an exact tie
    queries.extend(corpus.to_queries(&corpus.ids()[..10]).unwrap());

    let mut mismatches = 0;
    let mut ties = 0;
    for alpha in [0.0, 1.3] {
        let params = SearchParams {
            k_candidates: corpus.len(),
            top_n: corpus.len(),
            weights: ScoreWeights::new(alpha, SparsityKind::Hoyer).unwrap(),
            ..Default::default()
        };
        for q in &queries {
            let got = search(q, &corpus, &params).unwrap();
            let qc = q.embedding("cosine").unwrap();
            let qs = q.embedding("sparse").unwrap();
            let mut naive: Vec<(f64, DocId)> = Vec::new();
            for i in 0..corpus.len() {
                let id = corpus.id(i);
                if q.exclude_ids.contains(id) {
                    continue;
                }
                let dc = corpus.row("cosine", i).unwrap();
                let ds = corpus.row("sparse", i).unwrap();
                let s = if alpha == 0.0 {
                    contrascope::vecmath::cosine(qc, dc).unwrap()
                } else {
                    combined_score(qc, dc, qs, ds, params.weights).unwrap()
                };
                naive.push((s, id.clone()));
            }
            naive.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
            ties += naive.windows(2).filter(|w| w[0].0 == w[1].0).count();
            let same = got.entries.len() == naive.len()
                && got.entries.iter().zip(&naive).all(|(e, (s, id))| e.doc == *id && e.score == *s);
            if !same {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        "oracle equivalence",
        mismatches == 0 && ties > 0 && elapsed < Duration::from_secs(30),
        format!(
            "{mismatches} mismatching rankings of {} (2000 docs, alpha 0 and 1.3, {ties} tied neighbours), {elapsed:.2?}",
            2 * queries.len()
        ),
    );
}

/// Shared planted experiment: adapter trained on the train split, alpha
/// tuned on validation, evaluated on test.
struct Experiment {
    splits: [Bundle; 3],
    outcome: TrainOutcome,
    trace: AlphaSearchTrace,
    params: SearchParams,
    valid_corpus: DualCorpus,
    valid_queries: Vec<QueryRecord>,
    test_corpus: DualCorpus,
    test_queries: Vec<QueryRecord>,
    elapsed: Duration,
}

const BASIS_SEED: u64 = 11;

fn planted_config() -> PlantedConfig {
    PlantedConfig {
        groups: 100,
        dim_cos: 32,
        dim_sparse: 32,
        sparse_support: 2,
        contradiction_magnitude: 0.5,
        distractor_count: 300,
        seed: 7,
        basis_seed: BASIS_SEED,
        ..Default::default()
    }
}

fn train_config() -> TrainConfig {
    TrainConfig { temperature: 0.1, learning_rate: 0.3, epochs: 20, batch_size: 64, seed: 1, subgradient_epsilon: 0.0 }
}

fn adapt(adapter: &Adapter, b: &Bundle) -> (DualCorpus, Vec<QueryRecord>) {
    (
        apply_adapter(adapter, &b.corpus, BASE_SPACE, ADAPTED).unwrap(),
        apply_adapter_queries(adapter, &b.queries, BASE_SPACE, ADAPTED).unwrap(),
    )
}

fn experiment() -> &'static Experiment {
    static EXP: OnceLock<Experiment> = OnceLock::new();
    EXP.get_or_init(|| {
        let start = Instant::now();
        let bundle = generate_planted(&planted_config()).unwrap();
        let splits = split_by_group(&bundle, SplitFractions::default(), 3).unwrap();
        let tuples = resolve_tuples(&splits[0].tuples, &splits[0].corpus, BASE_SPACE).unwrap();
        let outcome = train(&tuples, &train_config(), 4).unwrap();
        let (valid_corpus, valid_queries) = adapt(&outcome.adapter, &splits[1]);
        let (test_corpus, test_queries) = adapt(&outcome.adapter, &splits[2]);
        let params = SearchParams { sparse_space: ADAPTED.into(), ..Default::default() };
        let trace = tune_alpha(&valid_queries, &valid_corpus, &splits[1].qrels, &params, &AlphaSearchConfig::default(), 4)
            .unwrap();
        Experiment {
            splits,
            outcome,
            trace,
            params,
            valid_corpus,
            valid_queries,
            test_corpus,
            test_queries,
            elapsed: start.elapsed(),
        }
    })
}

fn mean_ndcg(corpus: &DualCorpus, queries: &[QueryRecord], b: &Bundle, params: &SearchParams) -> f64 {
    let run = batch_search(queries, corpus, params, 4).unwrap();
    evaluate(&run, &b.qrels, 10).unwrap().mean_ndcg_at_k.unwrap()
}

#[test]
fn planted_retrieval_gap() {
    let _g = serial();
    let e = experiment();
    let start = Instant::now();
    let test = &e.splits[2];
    let cos_only = mean_ndcg(&e.test_corpus, &e.test_queries, test, &e.params.with_alpha(0.0));
    let tuned = mean_ndcg(&e.test_corpus, &e.test_queries, test, &e.params.with_alpha(e.trace.alpha));
    let elapsed = e.elapsed + start.elapsed();
    let gap = tuned - cos_only;
    check(
        "planted retrieval gap",
        cos_only <= 0.6 && tuned >= 0.9 && gap >= 0.25 && elapsed < Duration::from_secs(300),
        format!(
            "test NDCG@10 cosine-only {cos_only:.4} (<= 0.6), cosine+Hoyer {tuned:.4} at alpha {:.3} (>= 0.9), gap {gap:.4} (>= 0.25), {elapsed:.2?}",
            e.trace.alpha
        ),
    );
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median Hoyer over (query, own contradiction) minus median over random
/// (query, other-group contradiction) pairs, under `adapter`.
fn separation(adapter: &Adapter, b: &Bundle) -> (f64, f64, f64) {
    let c = &b.corpus;
    let emb = |id: &DocId| adapter.apply(c.embedding(BASE_SPACE, id.as_str()).unwrap()).unwrap();
    let mut own = Vec::new();
    for q in &b.queries {
        for doc in b.qrels.get(q.qid.as_str()).unwrap().keys() {
            own.push(hoyer(&emb(&q.qid), &emb(doc)).unwrap());
        }
    }
    let contradictions: Vec<&DocId> = b.qrels.queries().flat_map(|(_, m)| m.keys()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut cross = Vec::new();
    while cross.len() < 400 {
        let q = &b.queries[rng.random_range(0..b.queries.len())].qid;
        let d = contradictions[rng.random_range(0..contradictions.len())];
        if b.groups[q] != b.groups[d] {
            cross.push(hoyer(&emb(q), &emb(d)).unwrap());
        }
    }
    let (m_own, m_cross) = (median(own), median(cross));
    (m_own - m_cross, m_own, m_cross)
}

#[test]
fn planted_sparsity_separation() {
    let _g = serial();
    let e = experiment();
    let start = Instant::now();
    let test = &e.splits[2];
    let (before, bo, bc) = separation(&e.outcome.initial, test);
    let (after, ao, ac) = separation(&e.outcome.adapter, test);
    let elapsed = e.elapsed + start.elapsed();
    let curve = &e.outcome.loss_curve.epochs;
    check(
        "planted sparsity separation",
        after >= 0.2 && before <= 0.05 && elapsed < Duration::from_secs(300),
        format!(
            "median gap before {before:.4} ({bo:.3} vs {bc:.3}, <= 0.05), after {after:.4} ({ao:.3} vs {ac:.3}, >= 0.2); loss {:.4} -> {:.4}; {elapsed:.2?}",
            curve[0].mean_loss,
            curve.last().unwrap().mean_loss
        ),
    );
}

#[test]
fn alpha_search_contract() {
    let _g = serial();
    let e = experiment();
    let t = &e.trace;
    let width = t.hi - t.lo;
    // the returned alpha reproduces its objective through the full pipeline
    let valid = &e.splits[1];
    let replay = mean_ndcg(&e.valid_corpus, &e.valid_queries, valid, &e.params.with_alpha(t.alpha));
    let again =
        tune_alpha(&e.valid_queries, &e.valid_corpus, &valid.qrels, &e.params, &AlphaSearchConfig::default(), 1).unwrap();
    let flat = search_interval(|_| Ok(0.25), &AlphaSearchConfig::default(), 3).unwrap();
    let ok = t.iterations.len() == 3
        && (t.iterations[0].lo, t.iterations[0].hi) == (0.0, 10.0)
        && width <= 0.01 * (1.0 + 1e-9)
        && t.evaluations <= 30
        && replay == t.objective
        && again == *t
        && (flat.alpha - 0.005).abs() < 1e-12;
    check(
        "alpha search contract",
        ok,
        format!(
            "{} rounds, final width {width:.6}, {} evaluations, alpha {:.4} objective {:.6} replayed {:.6}, tie on flat objective -> {:.4}",
            t.iterations.len(),
            t.evaluations,
            t.alpha,
            t.objective,
            replay,
            flat.alpha
        ),
    );
}

#[test]
fn planted_corruption_cleaning() {
    let _g = serial();
    let e = experiment();
    let start = Instant::now();
    let cfg = CorruptionConfig {
        planted: PlantedConfig { contradiction_cos_shift: 0.05, seed: 21, ..planted_config() },
        query_cos_noise: 1.0,
    };
    let s = generate_corruption(&cfg).unwrap();
    let adapter = &e.outcome.adapter;
    let original = apply_adapter(adapter, &s.original, BASE_SPACE, ADAPTED).unwrap();
    let corrupted = apply_adapter(adapter, &s.corrupted, BASE_SPACE, ADAPTED).unwrap();
    let truths = apply_adapter_queries(adapter, &s.ground_truths, BASE_SPACE, ADAPTED).unwrap();
    let clean_cfg = CleanConfig { removals_per_groundtruth: 3, search: e.params.with_alpha(e.trace.alpha) };
    let cleaned = clean(&corrupted, &truths, &clean_cfg, 4).unwrap();
    let run = CorruptionRun {
        original: &original,
        corrupted: &corrupted,
        cleaned: &cleaned,
        queries: &s.queries,
        qrels: &s.qrels,
        corrupted_ids: &s.corrupted_ids,
    };
    let r = corruption_experiment(&run, &SearchParams::default(), 10, 4).unwrap();
    let removed = cleaned.removed_ids();
    let precision = removed.intersection(&s.corrupted_ids).count() as f64 / removed.len() as f64;
    let elapsed = e.elapsed + start.elapsed();
    let ratio = r.recovered_loss_ratio.unwrap_or(f64::NAN);
    check(
        "planted corruption cleaning",
        r.corruption_cleaned < 0.05 && ratio >= 0.6 && elapsed < Duration::from_secs(300),
        format!(
            "NDCG@10 {:.4} -> corrupted {:.4} -> cleaned {:.4}; corruption {:.4} -> {:.4} (< 0.05); recovered {ratio:.3} (>= 0.6); removal precision {precision:.3}; {elapsed:.2?}",
            r.ndcg_original, r.ndcg_corrupted, r.ndcg_cleaned, r.corruption_corrupted, r.corruption_cleaned
        ),
    );
}

#[test]
fn bench_sanity() {
    let _g = serial();
    let params = SearchParams { weights: ScoreWeights::new(1.0, SparsityKind::Hoyer).unwrap(), ..Default::default() };
    let r = run_bench(None, &params, &BenchConfig::default()).unwrap();
    let t100 = r.timings[0].mean_seconds;
    let ratio = r.scaling_ratio.unwrap();
    check(
        "bench sanity",
        r.timings[0].docs == 100 && r.timings[0].cosine_dim == 768 && t100 < 5e-3 && (8.0..=12.0).contains(&ratio),
        format!(
            "1 query x 100 docs at d=768: {:.3} ms (< 5 ms; reference {} s); 1000/100 ratio {ratio:.2} (in [8, 12])",
            t100 * 1e3,
            r.reference_bi_encoder_seconds
        ),
    );
}
