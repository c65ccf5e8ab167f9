use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use contrascope::bench::run_bench;
use contrascope::cleaner::{clean, corruption_experiment, write_removed_list, CleanConfig, CorruptionRun};
use contrascope::corpus::{
    generate_corruption, generate_planted, load_corpus_dir, load_qrels, load_queries, load_tuples, read_ids,
    save_bundle, save_corpus, save_qrels, save_queries, split_by_group, write_ids, Bundle, CorruptionConfig,
    DocId,
};
use contrascope::engine::{batch_search, read_run, write_run, SearchParams};
use contrascope::evalkit::{evaluate, tune_alpha};
use contrascope::trainer::{apply_adapter, apply_adapter_queries, gradcheck, resolve_tuples, train, Adapter};
use contrascope::vecmath::ScoreWeights;
use serde::Serialize;

use crate::config::{JobConfig, Scenario};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

fn output_dir(cfg: &JobConfig) -> Result<PathBuf> {
    let out = cfg.path(&cfg.paths.output, "output")?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn bundle_summary(name: &str, b: &Bundle) {
    let groups: std::collections::BTreeSet<u32> = b.groups.values().copied().collect();
    println!(
        "{name:<8} {:>7} docs {:>6} queries {:>6} judged queries {:>6} tuples {:>5} groups",
        b.corpus.len(),
        b.queries.len(),
        b.qrels.len(),
        b.tuples.len(),
        groups.len()
    );
}

pub fn synth(cfg: &JobConfig) -> Result<()> {
    let out = cfg.path(&cfg.paths.output, "output")?;
    let s = &cfg.synth;
    match s.scenario {
        Scenario::Retrieval => {
            let mut planted = s.planted.clone().unwrap_or_default();
            if let Some(seed) = cfg.seed {
                planted.seed = seed;
            }
            planted.validate()?;
            if let Some(f) = &s.split {
                f.validate()?;
            }
            let bundle = generate_planted(&planted)?;
            save_bundle(&bundle, &out)?;
            bundle_summary("all", &bundle);
            if let Some(f) = s.split {
                let parts = split_by_group(&bundle, f, s.split_seed)?;
                for (name, part) in ["train", "valid", "test"].iter().zip(&parts) {
                    save_bundle(part, &out.join(name))?;
                    bundle_summary(name, part);
                }
            }
        }
        Scenario::Corruption => {
            let mut cc = CorruptionConfig::default();
            if let Some(p) = &s.planted {
                cc.planted = p.clone();
            }
            if let Some(n) = s.query_cos_noise {
                cc.query_cos_noise = n;
            }
            if let Some(seed) = cfg.seed {
                cc.planted.seed = seed;
            }
            let sc = generate_corruption(&cc)?;
            save_corpus(&sc.original, &out.join("original"))?;
            save_corpus(&sc.corrupted, &out.join("corrupted"))?;
            save_queries(&sc.queries, &out.join("queries"))?;
            save_queries(&sc.ground_truths, &out.join("ground_truths"))?;
            save_qrels(&sc.qrels, &out.join("qrels.tsv"))?;
            let ids: Vec<DocId> = sc.corrupted_ids.iter().cloned().collect();
            write_ids(&out.join("corrupted_ids.txt"), &ids)?;
            println!(
                "original {} docs, corrupted {} docs ({} injected), {} queries, {} ground truths",
                sc.original.len(),
                sc.corrupted.len(),
                ids.len(),
                sc.queries.len(),
                sc.ground_truths.len()
            );
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn search(cfg: &JobConfig, workers: usize) -> Result<()> {
    let params = cfg.search_params()?;
    let run_path = cfg.path(&cfg.paths.run, "run")?;
    let corpus = load_corpus_dir(&cfg.input(&cfg.paths.corpus, "corpus")?)?;
    let queries = load_queries(&cfg.input(&cfg.paths.queries, "queries")?)?;
    let runs = batch_search(&queries, &corpus, &params, workers)?;
    ensure_parent(&run_path)?;
    write_run(&run_path, &runs)?;
    println!(
        "searched {} queries over {} documents (alpha {}, {}); wrote {}",
        queries.len(),
        corpus.len(),
        params.weights.alpha,
        params.weights.kind,
        run_path.display()
    );
    Ok(())
}

pub fn eval(cfg: &JobConfig) -> Result<()> {
    let runs = read_run(&cfg.input(&cfg.paths.run, "run")?)?;
    let qrels = load_qrels(&cfg.input(&cfg.paths.qrels, "qrels")?)?;
    let k = cfg.eval.k;
    let report = evaluate(&runs, &qrels, k)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("{:<10} {:>10} {:>10}", "queries", format!("NDCG@{k}"), format!("Recall@{k}"));
    println!("{:<10} {:>10} {:>10}", report.query_count, fmt(report.mean_ndcg_at_k), fmt(report.mean_recall_at_k));
    if let Some(out) = &cfg.paths.output {
        write_json(&out.join("eval.json"), &report)?;
    }
    Ok(())
}

pub fn tune(cfg: &JobConfig, workers: usize) -> Result<()> {
    let params = cfg.search_params()?;
    let out = output_dir(cfg)?;
    let corpus = load_corpus_dir(&cfg.input(&cfg.paths.corpus, "corpus")?)?;
    let queries = load_queries(&cfg.input(&cfg.paths.queries, "queries")?)?;
    let qrels = load_qrels(&cfg.input(&cfg.paths.qrels, "qrels")?)?;
    let trace = tune_alpha(&queries, &corpus, &qrels, &params, &cfg.tune, workers)?;
    println!("{:<6} {:>21} {:>10} {:>10}", "round", "interval", "best", format!("NDCG@{}", cfg.tune.k));
    for (i, it) in trace.iterations.iter().enumerate() {
        let mut best = 0;
        for j in 1..it.objectives.len() {
            if it.objectives[j] > it.objectives[best] {
                best = j;
            }
        }
        println!(
            "{:<6} {:>21} {:>10.4} {:>10.4}",
            i + 1,
            format!("[{:.4}, {:.4}]", it.lo, it.hi),
            it.midpoints[best],
            it.objectives[best]
        );
    }
    println!("alpha = {:.4} (NDCG@{} {:.4}, {} evaluations)", trace.alpha, cfg.tune.k, trace.objective, trace.evaluations);
    let path = out.join("alpha_trace.json");
    write_json(&path, &trace)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn train_cmd(cfg: &JobConfig, workers: usize) -> Result<()> {
    let adapter_path = cfg.path(&cfg.paths.adapter, "adapter")?;
    let corpus = load_corpus_dir(&cfg.input(&cfg.paths.corpus, "corpus")?)?;
    let refs = load_tuples(&cfg.input(&cfg.paths.tuples, "tuples")?)?;
    let tuples = resolve_tuples(&refs, &corpus, &cfg.spaces.base)?;
    let outcome = train(&tuples, &cfg.train, workers)?;
    println!("{:<6} {:>12} {:>8}", "epoch", "mean loss", "batches");
    for e in &outcome.loss_curve.epochs {
        println!("{:<6} {:>12.6} {:>8}", e.epoch, e.mean_loss, e.batches);
    }
    ensure_parent(&adapter_path)?;
    outcome.adapter.save(&adapter_path)?;
    let curve_path = match &cfg.paths.output {
        Some(dir) => dir.join("loss_curve.json"),
        None => adapter_path.with_file_name("loss_curve.json"),
    };
    write_json(&curve_path, &outcome.loss_curve)?;
    println!("wrote {} and {}", adapter_path.display(), curve_path.display());
    Ok(())
}

pub fn apply(cfg: &JobConfig) -> Result<()> {
    let out = output_dir(cfg)?;
    let adapter = Adapter::load(&cfg.input(&cfg.paths.adapter, "adapter")?)?;
    let (src, dst) = (&cfg.spaces.base, &cfg.spaces.adapted);
    let corpus = load_corpus_dir(&cfg.input(&cfg.paths.corpus, "corpus")?)?;
    let adapted = apply_adapter(&adapter, &corpus, src, dst)?;
    save_corpus(&adapted, &out.join("corpus"))?;
    println!("mapped {} documents {src:?} -> {dst:?}", adapted.len());
    if cfg.paths.queries.is_some() {
        let queries = load_queries(&cfg.input(&cfg.paths.queries, "queries")?)?;
        let mapped = apply_adapter_queries(&adapter, &queries, src, dst)?;
        save_queries(&mapped, &out.join("queries"))?;
        println!("mapped {} queries", mapped.len());
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn clean_cmd(cfg: &JobConfig, workers: usize) -> Result<()> {
    let mut params = cfg.search_params()?;
    if let Some(a) = cfg.clean.alpha {
        params.weights = ScoreWeights::new(a, params.weights.kind)?;
    }
    let out = output_dir(cfg)?;
    let corrupted = load_corpus_dir(&cfg.input(&cfg.paths.corpus, "corpus")?)?;
    let truths = load_queries(&cfg.input(&cfg.paths.ground_truths, "ground_truths")?)?;
    let cc = CleanConfig { removals_per_groundtruth: cfg.clean.removals_per_groundtruth, search: params.clone() };
    let outcome = clean(&corrupted, &truths, &cc, workers)?;
    save_corpus(&outcome.cleaned, &out.join("corpus"))?;
    write_removed_list(&outcome.removed, &out.join("removed.txt"))?;
    write_json(&out.join("removed.json"), &outcome.removed)?;
    println!(
        "removed {} documents for {} ground truths; {} remain",
        outcome.removed.len(),
        truths.len(),
        outcome.cleaned.len()
    );

    let p = &cfg.paths;
    if p.original.is_none() || p.corrupted_ids.is_none() {
        return Ok(());
    }
    let original = load_corpus_dir(&cfg.input(&p.original, "original")?)?;
    let queries = load_queries(&cfg.input(&p.queries, "queries")?)?;
    let qrels = load_qrels(&cfg.input(&p.qrels, "qrels")?)?;
    let ids = read_ids(&cfg.input(&p.corrupted_ids, "corrupted_ids")?)?.into_iter().collect();
    let run = CorruptionRun {
        original: &original,
        corrupted: &corrupted,
        cleaned: &outcome,
        queries: &queries,
        qrels: &qrels,
        corrupted_ids: &ids,
    };
    // question answering retrieval is plain cosine
    let qa = SearchParams { weights: ScoreWeights::cosine_only(), ..params };
    let k = cfg.eval.k;
    let report = corruption_experiment(&run, &qa, k, workers)?;
    println!("{:<10} {:>8} {:>10} {:>11}", "corpus", "docs", format!("NDCG@{k}"), "corruption");
    println!("{:<10} {:>8} {:>10.4} {:>11}", "original", report.sizes.original, report.ndcg_original, "-");
    println!(
        "{:<10} {:>8} {:>10.4} {:>11.4}",
        "corrupted", report.sizes.corrupted, report.ndcg_corrupted, report.corruption_corrupted
    );
    println!("{:<10} {:>8} {:>10.4} {:>11.4}", "cleaned", report.sizes.cleaned, report.ndcg_cleaned, report.corruption_cleaned);
    match report.recovered_loss_ratio {
        Some(r) => println!("recovered {:.1}% of the NDCG lost to corruption", 100.0 * r),
        None => println!("corruption cost no NDCG; recovery ratio undefined"),
    }
    report.save(&out.join("clean_report.json"))?;
    Ok(())
}

pub fn bench(cfg: &JobConfig) -> Result<()> {
    let params = cfg.search_params()?;
    let corpus = match &cfg.paths.corpus {
        Some(_) => Some(load_corpus_dir(&cfg.input(&cfg.paths.corpus, "corpus")?)?),
        None => None,
    };
    let report = run_bench(corpus.as_ref(), &params, &cfg.bench)?;
    println!("{:>7} {:>9} {:>12} {:>12}", "docs", "dim", "mean ms", "std ms");
    for t in &report.timings {
        println!(
            "{:>7} {:>9} {:>12.4} {:>12.4}",
            t.docs,
            format!("{}/{}", t.cosine_dim, t.sparse_dim),
            t.mean_seconds * 1e3,
            t.std_seconds * 1e3
        );
    }
    if let Some(r) = report.scaling_ratio {
        println!("scaling ratio (last/first): {r:.2}");
    }
    println!(
        "reference per query, 100 docs: bi-encoder {} s, judge model {} s",
        report.reference_bi_encoder_seconds, report.reference_judge_model_seconds
    );
    if let Some(out) = &cfg.paths.output {
        write_json(&out.join("bench.json"), &report)?;
    }
    Ok(())
}

pub fn gradcheck_cmd(cfg: &JobConfig) -> Result<()> {
    let r = gradcheck(&cfg.gradcheck)?;
    for (i, p) in r.points.iter().enumerate() {
        println!("point {i:>3}: loss {:.6} |grad| {:.4e} rel err {:.3e}", p.loss, p.gradient_norm, p.relative_error);
    }
    println!("max relative error {:.3e} (tolerance {:e})", r.max_relative_error, cfg.gradcheck.tolerance);
    if let Some(out) = &cfg.paths.output {
        write_json(&out.join("gradcheck.json"), &r)?;
    }
    if !r.passed {
        bail!("gradient check failed");
    }
    Ok(())
}
