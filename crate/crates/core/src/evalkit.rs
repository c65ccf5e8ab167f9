//! Retrieval metrics and the validation-set search for `alpha`.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocId, DualCorpus, QrelSet, QueryRecord};
use crate::engine::{top_k_cosine, with_workers, CandidateScores, RankedList, SearchParams};
use crate::error::{Error, Result};

/// NDCG@k with gain `2^rel - 1` and discount `log2(rank + 1)`.
/// Unjudged documents have relevance 0. Returns 0 when the ideal DCG is 0.
pub fn ndcg_at_k(ranked: &RankedList, qrels: &QrelSet, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let judged = qrels.get(ranked.qid.as_str()).ok_or_else(|| Error::UnknownQuery(ranked.qid.to_string()))?;
    let gain = |rel: u32| 2f64.powi(rel as i32) - 1.0;
    let discount = |i: usize| ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .entries
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, e)| gain(judged.get(&e.doc).copied().unwrap_or(0)) / discount(i))
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &r)| gain(r) / discount(i)).sum();
    Ok(if idcg > 0.0 { dcg / idcg } else { 0.0 })
}

/// Fraction of the top-`k` returned documents that belong to `targets`
/// (reported as "Recall@k" for corruption). 0 when nothing was returned.
pub fn recall_at_k(ranked: &RankedList, targets: &BTreeSet<DocId>, k: usize) -> f64 {
    let returned = ranked.entries.len().min(k);
    if returned == 0 {
        return 0.0;
    }
    let hits = ranked.entries.iter().take(k).filter(|e| targets.contains(&e.doc)).count();
    hits as f64 / returned as f64
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> Option<f64> {
    let n = values.len();
    (n > 0).then(|| values.sum::<f64>() / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub ndcg: f64,
    pub recall: f64,
}

/// Per-query and mean metrics of a run. Means are absent for an empty run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub query_count: usize,
    pub per_query: BTreeMap<DocId, QueryMetrics>,
    pub mean_ndcg_at_k: Option<f64>,
    pub mean_recall_at_k: Option<f64>,
}

/// Evaluates a run against judgments. Recall here is the fraction of the
/// top-k that is judged relevant.
pub fn evaluate(run: &[RankedList], qrels: &QrelSet, k: usize) -> Result<EvalReport> {
    let mut per_query = BTreeMap::new();
    let mut ndcgs = Vec::with_capacity(run.len());
    let mut recalls = Vec::with_capacity(run.len());
    for r in run {
        let ndcg = ndcg_at_k(r, qrels, k)?;
        let relevant: BTreeSet<DocId> = qrels.get(r.qid.as_str()).into_iter().flat_map(|m| m.keys().cloned()).collect();
        let recall = recall_at_k(r, &relevant, k);
        if per_query.insert(r.qid.clone(), QueryMetrics { ndcg, recall }).is_some() {
            return Err(Error::Config(format!("query {:?} appears twice in the run", r.qid.as_str())));
        }
        ndcgs.push(ndcg);
        recalls.push(recall);
    }
    Ok(EvalReport {
        k,
        query_count: run.len(),
        per_query,
        mean_ndcg_at_k: mean(ndcgs.into_iter()),
        mean_recall_at_k: mean(recalls.into_iter()),
    })
}

/// Interval-refinement schedule for `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaSearchConfig {
    pub lo: f64,
    pub hi: f64,
    pub stop_width: f64,
    pub subdivisions: usize,
    /// Cutoff of the NDCG objective.
    pub k: usize,
}

impl Default for AlphaSearchConfig {
    fn default() -> Self {
        Self { lo: 0.0, hi: 10.0, stop_width: 0.01, subdivisions: 10, k: 10 }
    }
}

impl AlphaSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo >= 0.0 && self.hi > self.lo) {
            return Err(Error::Config(format!("bad alpha range [{}, {}]", self.lo, self.hi)));
        }
        if !(self.stop_width > 0.0) || self.subdivisions < 2 || self.k == 0 {
            return Err(Error::Config("stop_width must be > 0, subdivisions >= 2, k >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaIteration {
    pub lo: f64,
    pub hi: f64,
    pub midpoints: Vec<f64>,
    pub objectives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSearchTrace {
    pub iterations: Vec<AlphaIteration>,
    /// Final interval.
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
    pub objective: f64,
    pub evaluations: usize,
}

/// Refines `[lo, hi]` by evaluating the midpoints of `subdivisions` equal
/// sub-intervals and descending into the best one (ties go to the smaller
/// alpha) until the interval is no wider than `stop_width`. Returns the best
/// midpoint seen.
pub fn search_interval<F>(objective: F, cfg: &AlphaSearchConfig, workers: usize) -> Result<AlphaSearchTrace>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let n = cfg.subdivisions;
    let (mut lo, mut hi) = (cfg.lo, cfg.hi);
    let mut iterations = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    while hi - lo > cfg.stop_width * (1.0 + 1e-9) {
        let width = (hi - lo) / n as f64;
        let midpoints: Vec<f64> = (0..n).map(|j| lo + (j as f64 + 0.5) * width).collect();
        let objectives =
            with_workers(workers, || midpoints.par_iter().map(|&a| objective(a)).collect::<Result<Vec<_>>>())??;
        let mut pick = 0;
        for j in 1..n {
            if objectives[j] > objectives[pick] {
                pick = j;
            }
        }
        for (&a, &o) in midpoints.iter().zip(&objectives) {
            let better = match best {
                None => true,
                Some((ba, bo)) => o > bo || (o == bo && a < ba),
            };
            if better {
                best = Some((a, o));
            }
        }
        log::debug!("alpha interval [{lo}, {hi}]: best midpoint {} -> {}", midpoints[pick], objectives[pick]);
        iterations.push(AlphaIteration { lo, hi, midpoints, objectives });
        let new_lo = lo + pick as f64 * width;
        hi = if pick + 1 == n { hi } else { lo + (pick + 1) as f64 * width };
        lo = new_lo;
    }
    let (alpha, objective) = match best {
        Some(b) => b,
        // already narrower than stop_width: evaluate the single midpoint
        None => {
            let a = 0.5 * (lo + hi);
            (a, objective(a)?)
        }
    };
    let evaluations = iterations.iter().map(|it| it.midpoints.len()).sum::<usize>().max(1);
    Ok(AlphaSearchTrace { iterations, lo, hi, alpha, objective, evaluations })
}

/// Precomputed candidates for a validation set; evaluates mean NDCG for any
/// alpha without rescanning the corpus.
pub struct ValidationObjective<'a> {
    corpus: &'a DualCorpus,
    qrels: &'a QrelSet,
    scores: Vec<CandidateScores>,
    top_n: usize,
    k: usize,
}

impl<'a> ValidationObjective<'a> {
    pub fn new(
        queries: &[QueryRecord],
        corpus: &'a DualCorpus,
        qrels: &'a QrelSet,
        params: &SearchParams,
        k: usize,
        workers: usize,
    ) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::EmptyValidationSet);
        }
        params.validate()?;
        for q in queries {
            if !qrels.contains_query(q.qid.as_str()) {
                return Err(Error::UnknownQuery(q.qid.to_string()));
            }
        }
        let scores = with_workers(workers, || {
            queries
                .par_iter()
                .map(|q| {
                    let cands = top_k_cosine(q, corpus, params.k_candidates, &params.cosine_space)?;
                    CandidateScores::compute(q, cands, corpus, params)
                })
                .collect::<Result<Vec<_>>>()
        })??;
        Ok(Self { corpus, qrels, scores, top_n: params.top_n, k })
    }

    pub fn mean_ndcg(&self, alpha: f64) -> Result<f64> {
        let mut sum = 0.0;
        for s in &self.scores {
            sum += ndcg_at_k(&s.rank(self.corpus, alpha, self.top_n), self.qrels, self.k)?;
        }
        Ok(sum / self.scores.len() as f64)
    }
}

/// Tunes `alpha` on a validation set by interval refinement of mean NDCG@k.
/// Candidates use the same `k_candidates` as `params`.
pub fn tune_alpha(
    valid_queries: &[QueryRecord],
    corpus: &DualCorpus,
    qrels: &QrelSet,
    params: &SearchParams,
    cfg: &AlphaSearchConfig,
    workers: usize,
) -> Result<AlphaSearchTrace> {
    cfg.validate()?;
    let objective = ValidationObjective::new(valid_queries, corpus, qrels, params, cfg.k, workers)?;
    search_interval(|a| objective.mean_ndcg(a), cfg, workers)
}
