//! Timing of the combined score for one query against a block of documents.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocId, DualCorpus, EmbeddingMatrix, EmbeddingSpace, COSINE_SPACE, SPARSE_SPACE};
use crate::engine::SearchParams;
use crate::error::{Error, Result};
use crate::vecmath::combined_score;

/// Published per-query times for 100 documents, for side-by-side reading.
pub const REFERENCE_BI_ENCODER_SECONDS: f64 = 0.0029;
pub const REFERENCE_JUDGE_MODEL_SECONDS: f64 = 0.8832;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Document counts to time, each against the same queries.
    pub doc_counts: Vec<usize>,
    pub queries: usize,
    /// Each query is timed this many times and its fastest run kept.
    pub repeats: usize,
    /// Dimension of the synthetic corpus when none is supplied.
    pub dim: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { doc_counts: vec![100, 1000], queries: 100, repeats: 5, dim: 768, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTiming {
    pub docs: usize,
    pub cosine_dim: usize,
    pub sparse_dim: usize,
    pub queries: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub timings: Vec<BenchTiming>,
    /// Mean time of the last document count over the first.
    pub scaling_ratio: Option<f64>,
    pub reference_bi_encoder_seconds: f64,
    pub reference_judge_model_seconds: f64,
}

/// Gaussian corpus with `cosine` and `sparse` spaces of dimension `dim`.
pub fn random_corpus(n: usize, dim: usize, seed: u64) -> Result<DualCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f32> { (0..n * dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect() };
    let cos = draw(&mut rng);
    let sp = draw(&mut rng);
    let ids = (0..n).map(|i| DocId::new(format!("r{i:07}"))).collect::<Result<Vec<_>>>()?;
    DualCorpus::new(ids, vec![])?
        .with_space(EmbeddingSpace::new(COSINE_SPACE, dim, "random")?, EmbeddingMatrix::new(dim, cos)?)?
        .with_space(EmbeddingSpace::new(SPARSE_SPACE, dim, "random")?, EmbeddingMatrix::new(dim, sp)?)
}

/// Times `cosine + alpha * sparsity` for query rows against the first
/// `docs` rows of `corpus`. Queries cycle through the corpus rows.
pub fn time_block(corpus: &DualCorpus, params: &SearchParams, docs: usize, queries: usize, repeats: usize) -> Result<BenchTiming> {
    if corpus.is_empty() {
        return Err(Error::Config("cannot benchmark an empty corpus".into()));
    }
    if docs == 0 || queries == 0 || repeats == 0 {
        return Err(Error::Config("docs, queries and repeats must be >= 1".into()));
    }
    let cos = &corpus.space(&params.cosine_space)?.matrix;
    let sp = &corpus.space(&params.sparse_space)?.matrix;
    let docs = docs.min(corpus.len());
    let mut scores = vec![0.0f64; docs];
    let mut times = Vec::with_capacity(queries);
    for qi in 0..queries {
        let q = qi % corpus.len();
        let (qc, qs) = (cos.row(q), sp.row(q));
        let mut best = f64::INFINITY;
        for _ in 0..repeats {
            let start = Instant::now();
            for (d, out) in scores.iter_mut().enumerate() {
                *out = combined_score(qc, cos.row(d), qs, sp.row(d), params.weights)?;
            }
            black_box(&scores);
            best = best.min(start.elapsed().as_secs_f64());
        }
        times.push(best);
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / times.len() as f64;
    Ok(BenchTiming {
        docs,
        cosine_dim: cos.dim(),
        sparse_dim: sp.dim(),
        queries,
        mean_seconds: mean,
        std_seconds: var.sqrt(),
    })
}

/// Times every configured document count. Uses a synthetic corpus sized
/// for the largest count when `corpus` is `None`.
pub fn run_bench(corpus: Option<&DualCorpus>, params: &SearchParams, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.doc_counts.is_empty() {
        return Err(Error::Config("doc_counts is empty".into()));
    }
    params.weights.validate()?;
    let owned;
    let corpus = match corpus {
        Some(c) => c,
        None => {
            let n = cfg.doc_counts.iter().copied().max().unwrap_or(0).max(1);
            owned = random_corpus(n, cfg.dim, cfg.seed)?;
            &owned
        }
    };
    // warm caches and the allocator once
    time_block(corpus, params, cfg.doc_counts[0], 1, 1)?;
    let timings = cfg
        .doc_counts
        .iter()
        .map(|&n| time_block(corpus, params, n, cfg.queries, cfg.repeats))
        .collect::<Result<Vec<_>>>()?;
    let scaling_ratio = (timings.len() > 1).then(|| timings[timings.len() - 1].mean_seconds / timings[0].mean_seconds);
    Ok(BenchReport {
        timings,
        scaling_ratio,
        reference_bi_encoder_seconds: REFERENCE_BI_ENCODER_SECONDS,
        reference_judge_model_seconds: REFERENCE_JUDGE_MODEL_SECONDS,
    })
}
