//! Job configuration file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use contrascope::bench::BenchConfig;
use contrascope::corpus::{PlantedConfig, SplitFractions, BASE_SPACE, COSINE_SPACE, SPARSE_SPACE};
use contrascope::engine::SearchParams;
use contrascope::evalkit::AlphaSearchConfig;
use contrascope::trainer::{GradcheckConfig, TrainConfig};
use contrascope::vecmath::{ScoreWeights, SparsityKind};
use serde::{Deserialize, Serialize};

/// Bad input or configuration; exits with status 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory written by `synth`; fills in corpus, queries, qrels and
    /// tuples when those are unset.
    pub bundle: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub tuples: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub adapter: Option<PathBuf>,
    /// Trusted documents for `clean`, as a query directory.
    pub ground_truths: Option<PathBuf>,
    /// Uncorrupted corpus for the `clean` comparison.
    pub original: Option<PathBuf>,
    /// Injected document ids for the `clean` comparison.
    pub corrupted_ids: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Spaces {
    pub cosine: String,
    pub sparse: String,
    /// Source space of adapter training.
    pub base: String,
    /// Space written by `apply-adapter`.
    pub adapted: String,
}

impl Default for Spaces {
    fn default() -> Self {
        Self {
            cosine: COSINE_SPACE.into(),
            sparse: SPARSE_SPACE.into(),
            base: BASE_SPACE.into(),
            adapted: "adapted".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub k_candidates: usize,
    pub top_n: usize,
    pub alpha: f64,
    pub sparsity: SparsityKind,
}

impl Default for SearchSection {
    fn default() -> Self {
        let p = SearchParams::default();
        Self { k_candidates: p.k_candidates, top_n: p.top_n, alpha: p.weights.alpha, sparsity: p.weights.kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[default]
    Retrieval,
    Corruption,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub scenario: Scenario,
    /// Generator parameters; unset uses the scenario's defaults.
    pub planted: Option<PlantedConfig>,
    /// Corruption scenario only.
    pub query_cos_noise: Option<f64>,
    /// Retrieval scenario only; also writes train/valid/test bundles.
    pub split: Option<SplitFractions>,
    pub split_seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            scenario: Scenario::Retrieval,
            planted: None,
            query_cos_noise: None,
            split: Some(SplitFractions::default()),
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanSection {
    pub removals_per_groundtruth: usize,
    /// Overrides `search.alpha` for cleaning.
    pub alpha: Option<f64>,
}

impl Default for CleanSection {
    fn default() -> Self {
        Self { removals_per_groundtruth: 3, alpha: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { k: 10 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    pub paths: Paths,
    pub spaces: Spaces,
    pub search: SearchSection,
    pub synth: SynthSection,
    pub train: TrainConfig,
    pub tune: AlphaSearchConfig,
    pub clean: CleanSection,
    pub eval: EvalSection,
    pub bench: BenchConfig,
    pub gradcheck: GradcheckConfig,
    /// Applied to every seeded section when set.
    pub seed: Option<u64>,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl JobConfig {
    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: JobConfig =
            serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.bundle,
            &mut p.corpus,
            &mut p.queries,
            &mut p.qrels,
            &mut p.tuples,
            &mut p.run,
            &mut p.adapter,
            &mut p.ground_truths,
            &mut p.original,
            &mut p.corrupted_ids,
            &mut p.output,
        ] {
            resolve(base, slot);
        }
        if let Some(b) = p.bundle.clone() {
            p.corpus.get_or_insert_with(|| b.join("corpus"));
            p.queries.get_or_insert_with(|| b.join("queries"));
            p.qrels.get_or_insert_with(|| b.join("qrels.tsv"));
            p.tuples.get_or_insert_with(|| b.join("tuples.jsonl"));
        }
    }

    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            if let Some(p) = &mut self.synth.planted {
                p.seed = s;
            }
            self.synth.split_seed = s;
            self.train.seed = s;
            self.bench.seed = s;
            self.gradcheck.seed = s;
        }
    }

    pub fn search_params(&self) -> anyhow::Result<SearchParams> {
        let s = &self.search;
        let p = SearchParams {
            k_candidates: s.k_candidates,
            top_n: s.top_n,
            weights: ScoreWeights::new(s.alpha, s.sparsity)?,
            cosine_space: self.spaces.cosine.clone(),
            sparse_space: self.spaces.sparse.clone(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Required path, or a validation error naming the key.
    pub fn path(&self, value: &Option<PathBuf>, key: &str) -> anyhow::Result<PathBuf> {
        value.clone().ok_or_else(|| invalid(format!("paths.{key} is required for this command")))
    }

    /// Required input path that must exist.
    pub fn input(&self, value: &Option<PathBuf>, key: &str) -> anyhow::Result<PathBuf> {
        let p = self.path(value, key)?;
        if !p.exists() {
            return Err(invalid(format!("paths.{key}: {} does not exist", p.display())));
        }
        Ok(p)
    }
}
