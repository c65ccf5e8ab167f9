//! Exact two-stage retrieval.
//!
//! Stage one scans the whole corpus and keeps the `k_candidates` documents
//! with the highest cosine similarity. Stage two scores each candidate with
//! `cosine + alpha * sparsity` and keeps the best `top_n`. Ties are broken by
//! ascending document id everywhere so rankings are reproducible.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocId, DualCorpus, QueryRecord, COSINE_SPACE, SPARSE_SPACE};
use crate::error::{Error, Result};
use crate::vecmath::{cosine, ScoreWeights};

fn default_k() -> usize {
    1000
}
fn default_top_n() -> usize {
    10
}
fn default_cosine_space() -> String {
    COSINE_SPACE.to_string()
}
fn default_sparse_space() -> String {
    SPARSE_SPACE.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchParams {
    #[serde(default = "default_k")]
    pub k_candidates: usize,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default)]
    pub weights: ScoreWeights,
    #[serde(default = "default_cosine_space")]
    pub cosine_space: String,
    #[serde(default = "default_sparse_space")]
    pub sparse_space: String,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            k_candidates: default_k(),
            top_n: default_top_n(),
            weights: ScoreWeights::default(),
            cosine_space: default_cosine_space(),
            sparse_space: default_sparse_space(),
        }
    }
}

impl SearchParams {
    pub fn with_alpha(&self, alpha: f64) -> Self {
        let mut p = self.clone();
        p.weights.alpha = alpha;
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_candidates == 0 || self.top_n == 0 {
            return Err(Error::Config("k_candidates and top_n must be >= 1".into()));
        }
        if self.top_n > self.k_candidates {
            return Err(Error::Config(format!(
                "top_n ({}) exceeds k_candidates ({})",
                self.top_n, self.k_candidates
            )));
        }
        self.weights.validate()
    }
}

/// First-stage candidate: corpus row and its cosine similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc: DocId,
    pub score: f64,
    #[serde(rename = "cos")]
    pub cosine: f64,
    pub sparsity: f64,
}

/// Results for one query, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub qid: DocId,
    #[serde(rename = "results")]
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn docs(&self) -> impl Iterator<Item = &DocId> {
        self.entries.iter().map(|e| &e.doc)
    }
}

/// Descending score, then ascending id.
fn rank_order(sa: f64, ida: &DocId, sb: f64, idb: &DocId) -> Ordering {
    sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then_with(|| ida.cmp(idb))
}

/// Exact cosine scan returning up to `k` candidates, best first.
pub fn top_k_cosine(query: &QueryRecord, corpus: &DualCorpus, k: usize, cosine_space: &str) -> Result<Vec<Candidate>> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let space = corpus.space(cosine_space)?;
    let q = query.embedding(cosine_space)?;
    if q.len() != space.space.dim {
        return Err(Error::DimensionMismatch { left: q.len(), right: space.space.dim });
    }
    let mut cands = Vec::with_capacity(corpus.len());
    for (index, row) in space.matrix.iter_rows().enumerate() {
        if query.exclude_ids.contains(corpus.id(index)) {
            continue;
        }
        cands.push(Candidate { index, cosine: cosine(q, row)? });
    }
    let cmp = |a: &Candidate, b: &Candidate| rank_order(a.cosine, corpus.id(a.index), b.cosine, corpus.id(b.index));
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, cmp);
        cands.truncate(k);
    }
    cands.sort_unstable_by(cmp);
    Ok(cands)
}

/// Cosine and sparsity parts for a set of candidates, reusable across
/// different `alpha` values.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScores {
    pub qid: DocId,
    pub candidates: Vec<Candidate>,
    pub sparsity: Vec<f64>,
}

impl CandidateScores {
    /// Scores every candidate's sparsity part in the sparse space.
    pub fn compute(
        query: &QueryRecord,
        candidates: Vec<Candidate>,
        corpus: &DualCorpus,
        params: &SearchParams,
    ) -> Result<Self> {
        let sparsity = if candidates.is_empty() {
            Vec::new()
        } else {
            let space = corpus.space(&params.sparse_space)?;
            let q = query.embedding(&params.sparse_space)?;
            if q.len() != space.space.dim {
                return Err(Error::DimensionMismatch { left: q.len(), right: space.space.dim });
            }
            candidates
                .iter()
                .map(|c| params.weights.kind.score(q, space.matrix.row(c.index)))
                .collect::<Result<_>>()?
        };
        Ok(Self { qid: query.qid.clone(), candidates, sparsity })
    }

    fn cosine_only(query: &QueryRecord, candidates: Vec<Candidate>) -> Self {
        let sparsity = vec![0.0; candidates.len()];
        Self { qid: query.qid.clone(), candidates, sparsity }
    }

    /// Top `top_n` by `cosine + alpha * sparsity`.
    pub fn rank(&self, corpus: &DualCorpus, alpha: f64, top_n: usize) -> RankedList {
        let mut entries: Vec<RankedEntry> = self
            .candidates
            .iter()
            .zip(&self.sparsity)
            .map(|(c, &s)| RankedEntry {
                doc: corpus.id(c.index).clone(),
                score: c.cosine + alpha * s,
                cosine: c.cosine,
                sparsity: s,
            })
            .collect();
        let cmp = |a: &RankedEntry, b: &RankedEntry| rank_order(a.score, &a.doc, b.score, &b.doc);
        if entries.len() > top_n {
            entries.select_nth_unstable_by(top_n - 1, cmp);
            entries.truncate(top_n);
        }
        entries.sort_unstable_by(cmp);
        RankedList { qid: self.qid.clone(), entries }
    }
}

/// Scores candidates with the combined score and keeps the best `top_n`.
///
/// With `alpha == 0` the sparse space is not consulted and sparsity parts
/// are reported as 0.
pub fn rerank(
    query: &QueryRecord,
    candidates: Vec<Candidate>,
    corpus: &DualCorpus,
    params: &SearchParams,
) -> Result<RankedList> {
    let scores = if params.weights.alpha > 0.0 {
        CandidateScores::compute(query, candidates, corpus, params)?
    } else {
        CandidateScores::cosine_only(query, candidates)
    };
    Ok(scores.rank(corpus, params.weights.alpha, params.top_n))
}

/// Top-K cosine candidates followed by combined-score reranking.
pub fn search(query: &QueryRecord, corpus: &DualCorpus, params: &SearchParams) -> Result<RankedList> {
    params.validate()?;
    let cands = top_k_cosine(query, corpus, params.k_candidates, &params.cosine_space)?;
    rerank(query, cands, corpus, params)
}

/// Runs `f` on a dedicated pool of `workers` threads (inline when 1).
pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Err(Error::Config("parallelism must be >= 1".into()));
    }
    if workers == 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Searches every query; output order follows input order and does not
/// depend on `parallelism`.
pub fn batch_search(
    queries: &[QueryRecord],
    corpus: &DualCorpus,
    params: &SearchParams,
    parallelism: usize,
) -> Result<Vec<RankedList>> {
    params.validate()?;
    with_workers(parallelism, || {
        queries.par_iter().map(|q| search(q, corpus, params)).collect::<Result<Vec<_>>>()
    })?
}

fn nine_digits(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Writes a run as JSON Lines, scores rounded to 9 significant digits.
pub fn write_run(path: &Path, runs: &[RankedList]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for run in runs {
        let rounded = RankedList {
            qid: run.qid.clone(),
            entries: run
                .entries
                .iter()
                .map(|e| RankedEntry {
                    doc: e.doc.clone(),
                    score: nine_digits(e.score),
                    cosine: nine_digits(e.cosine),
                    sparsity: nine_digits(e.sparsity),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rounded)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_run(path: &Path) -> Result<Vec<RankedList>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}
