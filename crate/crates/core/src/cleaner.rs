//! Removing contradictions of trusted documents from a corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{DocId, DualCorpus, QrelSet, QueryRecord};
use crate::engine::{batch_search, SearchParams};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, recall_at_k};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanConfig {
    pub removals_per_groundtruth: usize,
    /// `top_n` is ignored; each ground truth removes
    /// `removals_per_groundtruth` documents.
    pub search: SearchParams,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self { removals_per_groundtruth: 3, search: SearchParams::default() }
    }
}

impl CleanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.removals_per_groundtruth == 0 {
            return Err(Error::Config("removals_per_groundtruth must be >= 1".into()));
        }
        self.params().validate()
    }

    fn params(&self) -> SearchParams {
        SearchParams { top_n: self.removals_per_groundtruth, ..self.search.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub doc: DocId,
    pub score: f64,
    /// First ground truth whose search removed the document.
    pub ground_truth: DocId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanOutcome {
    pub cleaned: DualCorpus,
    pub removed: Vec<Removal>,
}

impl CleanOutcome {
    pub fn removed_ids(&self) -> BTreeSet<DocId> {
        self.removed.iter().map(|r| r.doc.clone()).collect()
    }
}

/// Searches each ground truth with the combined score and removes its top
/// `removals_per_groundtruth` results. Ground-truth ids and every
/// ground truth's exclude list are never removed. A document removed for
/// several ground truths is removed once.
pub fn clean(
    corrupted: &DualCorpus,
    ground_truths: &[QueryRecord],
    cfg: &CleanConfig,
    workers: usize,
) -> Result<CleanOutcome> {
    cfg.validate()?;
    let protected: BTreeSet<DocId> = ground_truths
        .iter()
        .flat_map(|g| std::iter::once(g.qid.clone()).chain(g.exclude_ids.iter().cloned()))
        .collect();
    let searches: Vec<QueryRecord> = ground_truths
        .iter()
        .map(|g| {
            let mut q = g.clone();
            q.exclude_ids.extend(protected.iter().cloned());
            q
        })
        .collect();
    let runs = batch_search(&searches, corrupted, &cfg.params(), workers)?;
    let mut seen = BTreeSet::new();
    let mut removed = Vec::new();
    for run in runs {
        for e in run.entries {
            if seen.insert(e.doc.clone()) {
                removed.push(Removal { doc: e.doc, score: e.score, ground_truth: run.qid.clone() });
            }
        }
    }
    let cleaned = corrupted.filter(|id| !seen.contains(id));
    log::info!("removed {} of {} documents", removed.len(), corrupted.len());
    Ok(CleanOutcome { cleaned, removed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSizes {
    pub original: usize,
    pub corrupted: usize,
    pub cleaned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    pub k: usize,
    pub removed: Vec<Removal>,
    pub sizes: CorpusSizes,
    pub ndcg_original: f64,
    pub ndcg_corrupted: f64,
    pub ndcg_cleaned: f64,
    /// Mean fraction of the top-k that are injected documents.
    pub corruption_corrupted: f64,
    pub corruption_cleaned: f64,
    /// Share of the NDCG lost to corruption that cleaning recovers; absent
    /// when corruption cost nothing.
    pub recovered_loss_ratio: Option<f64>,
}

impl CleanReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Writes one removed id per line.
pub fn write_removed_list(removed: &[Removal], path: &Path) -> Result<()> {
    let mut s = String::new();
    for r in removed {
        s.push_str(r.doc.as_str());
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Inputs of [`corruption_experiment`].
pub struct CorruptionRun<'a> {
    pub original: &'a DualCorpus,
    pub corrupted: &'a DualCorpus,
    pub cleaned: &'a CleanOutcome,
    pub queries: &'a [QueryRecord],
    pub qrels: &'a QrelSet,
    pub corrupted_ids: &'a BTreeSet<DocId>,
}

/// Retrieves the test queries from all three corpora with `params` and
/// compares NDCG@k and the corruption fraction.
pub fn corruption_experiment(run: &CorruptionRun<'_>, params: &SearchParams, k: usize, workers: usize) -> Result<CleanReport> {
    if run.queries.is_empty() {
        return Err(Error::EmptyValidationSet);
    }
    let params = SearchParams { top_n: k, k_candidates: params.k_candidates.max(k), ..params.clone() };
    let mut ndcg = BTreeMap::new();
    let mut corruption = BTreeMap::new();
    for (name, corpus) in [("original", run.original), ("corrupted", run.corrupted), ("cleaned", &run.cleaned.cleaned)] {
        let lists = batch_search(run.queries, corpus, &params, workers)?;
        let report = evaluate(&lists, run.qrels, k)?;
        ndcg.insert(name, report.mean_ndcg_at_k.unwrap_or(0.0));
        let frac = lists.iter().map(|l| recall_at_k(l, run.corrupted_ids, k)).sum::<f64>() / lists.len() as f64;
        corruption.insert(name, frac);
    }
    let (orig, corr, cln) = (ndcg["original"], ndcg["corrupted"], ndcg["cleaned"]);
    let denom = orig - corr;
    Ok(CleanReport {
        k,
        removed: run.cleaned.removed.clone(),
        sizes: CorpusSizes {
            original: run.original.len(),
            corrupted: run.corrupted.len(),
            cleaned: run.cleaned.cleaned.len(),
        },
        ndcg_original: orig,
        ndcg_corrupted: corr,
        ndcg_cleaned: cln,
        corruption_corrupted: corruption["corrupted"],
        corruption_cleaned: corruption["cleaned"],
        recovered_loss_ratio: (denom > 0.0).then(|| (cln - corr) / denom),
    })
}
