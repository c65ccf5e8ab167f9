//! Deterministic synthetic corpora with planted contradiction geometry.
//!
//! Each group has a latent "meaning" vector. Paraphrases perturb it with
//! small dense noise; contradictions move it along a few coordinates of a
//! group-specific support. Three spaces are emitted:
//!
//! * `sparse`: the latent vectors themselves, i.e. an ideal sparsity encoder
//! * `base`: the latent vectors under a hidden random rotation, so the
//!   contradiction offsets are dense; adapters are trained to undo it
//! * `cosine`: a separate similarity space where paraphrases and
//!   contradictions of one group are all close, paraphrases closest

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    Bundle, DocId, DualCorpus, EmbeddingMatrix, EmbeddingSpace, GroupMap, QrelSet, QueryRecord, TupleRef,
    BASE_SPACE, COSINE_SPACE, SPARSE_SPACE,
};
use crate::error::{Error, Result};

/// Parameters of the planted generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    pub groups: usize,
    pub dim_cos: usize,
    pub dim_sparse: usize,
    pub paraphrases_per_group: usize,
    pub contradictions_per_group: usize,
    /// Nonzero coordinates of each contradiction offset.
    pub sparse_support: usize,
    /// L2 norm of each contradiction offset.
    pub contradiction_magnitude: f64,
    /// Per-coordinate standard deviation of paraphrase noise.
    pub paraphrase_noise: f64,
    /// Per-coordinate standard deviation of cosine-space noise.
    pub cosine_noise: f64,
    /// Norm of the random shift moving contradictions away from their group
    /// direction in the cosine space. 0 makes them as close as paraphrases.
    pub contradiction_cos_shift: f64,
    /// Same for distractors, which are anchored on groups round-robin.
    pub distractor_cos_shift: f64,
    pub distractor_count: usize,
    pub seed: u64,
    /// Seed of the hidden rotation between `sparse` and `base`. Corpora that
    /// share it share the base encoder.
    pub basis_seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            groups: 100,
            dim_cos: 256,
            dim_sparse: 256,
            paraphrases_per_group: 3,
            contradictions_per_group: 3,
            sparse_support: 8,
            contradiction_magnitude: 0.5,
            paraphrase_noise: 0.02,
            cosine_noise: 0.02,
            contradiction_cos_shift: 1.0,
            distractor_cos_shift: 0.8,
            distractor_count: 0,
            seed: 0,
            basis_seed: 0,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.groups == 0 {
            return fail("groups must be >= 1");
        }
        if self.dim_cos < 2 || self.dim_sparse < 2 {
            return fail("dimensions must be >= 2");
        }
        if self.paraphrases_per_group < 2 {
            return fail("paraphrases_per_group must be >= 2 (hard negatives come from the other paraphrases)");
        }
        if self.contradictions_per_group == 0 {
            return fail("contradictions_per_group must be >= 1");
        }
        if self.sparse_support == 0 || self.sparse_support > self.dim_sparse {
            return fail("sparse_support must be in 1..=dim_sparse");
        }
        let positive = [self.contradiction_magnitude, self.paraphrase_noise, self.cosine_noise];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return fail("contradiction_magnitude, paraphrase_noise and cosine_noise must be positive");
        }
        let shifts = [self.contradiction_cos_shift, self.distractor_cos_shift];
        if shifts.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return fail("cosine shifts must be non-negative");
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    normalized(gaussian(rng, dim))
}

fn axpy(base: &[f64], scale: f64, dir: &[f64]) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + scale * d).collect()
}

/// Random orthogonal matrix (row-major) by Gram-Schmidt on Gaussian rows.
fn random_rotation(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v = gaussian(&mut rng, dim);
        for r in &rows {
            let p: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            rows.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    rows.concat()
}

fn rotate(rotation: &[f64], v: &[f64]) -> Vec<f32> {
    let d = v.len();
    rotation
        .chunks_exact(d)
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() as f32)
        .collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Accumulates documents for all three spaces.
struct Rows {
    ids: Vec<DocId>,
    cosine: Vec<Vec<f32>>,
    sparse: Vec<Vec<f32>>,
    base: Vec<Vec<f32>>,
}

impl Rows {
    fn new() -> Self {
        Self { ids: Vec::new(), cosine: Vec::new(), sparse: Vec::new(), base: Vec::new() }
    }

    fn push(&mut self, id: DocId, cos: &[f64], latent: &[f64], rotation: &[f64]) {
        self.ids.push(id);
        self.cosine.push(to_f32(cos));
        self.sparse.push(to_f32(latent));
        self.base.push(rotate(rotation, latent));
    }

    fn into_corpus(self, cfg: &PlantedConfig) -> Result<DualCorpus> {
        DualCorpus::new(self.ids, vec![])?
            .with_space(
                EmbeddingSpace::new(COSINE_SPACE, cfg.dim_cos, "planted-cosine")?,
                EmbeddingMatrix::from_rows(cfg.dim_cos, &self.cosine)?,
            )?
            .with_space(
                EmbeddingSpace::new(SPARSE_SPACE, cfg.dim_sparse, "planted-oracle")?,
                EmbeddingMatrix::from_rows(cfg.dim_sparse, &self.sparse)?,
            )?
            .with_space(
                EmbeddingSpace::new(BASE_SPACE, cfg.dim_sparse, format!("planted-base-{}", cfg.basis_seed))?,
                EmbeddingMatrix::from_rows(cfg.dim_sparse, &self.base)?,
            )
    }
}

fn doc_id(s: String) -> DocId {
    DocId::new(s).expect("generated ids are valid")
}

pub(crate) fn paraphrase_id(group: usize, a: usize) -> DocId {
    doc_id(format!("g{group:05}-p{a}"))
}

pub(crate) fn contradiction_id(group: usize, b: usize) -> DocId {
    doc_id(format!("g{group:05}-c{b}"))
}

fn distractor_id(j: usize) -> DocId {
    doc_id(format!("d{j:06}"))
}

/// Latent and cosine geometry of one group.
struct Group {
    latent_paraphrases: Vec<Vec<f64>>,
    latent_contradictions: Vec<Vec<f64>>,
    cos_paraphrases: Vec<Vec<f64>>,
    cos_contradictions: Vec<Vec<f64>>,
    latent_center: Vec<f64>,
    cos_center: Vec<f64>,
}

fn draw_group(rng: &mut ChaCha8Rng, cfg: &PlantedConfig) -> Group {
    let center = unit(rng, cfg.dim_sparse);
    let cos_center = unit(rng, cfg.dim_cos);
    let support = sample(rng, cfg.dim_sparse, cfg.sparse_support).into_vec();
    let mut g = Group {
        latent_paraphrases: Vec::new(),
        latent_contradictions: Vec::new(),
        cos_paraphrases: Vec::new(),
        cos_contradictions: Vec::new(),
        latent_center: center,
        cos_center,
    };
    for _ in 0..cfg.paraphrases_per_group {
        let noise = gaussian(rng, cfg.dim_sparse);
        g.latent_paraphrases.push(axpy(&g.latent_center, cfg.paraphrase_noise, &noise));
        let cnoise = gaussian(rng, cfg.dim_cos);
        g.cos_paraphrases.push(normalized(axpy(&g.cos_center, cfg.cosine_noise, &cnoise)));
    }
    for _ in 0..cfg.contradictions_per_group {
        let mags: Vec<f64> = normalized(gaussian(rng, cfg.sparse_support));
        let mut offset = vec![0.0; cfg.dim_sparse];
        for (&k, m) in support.iter().zip(mags) {
            offset[k] = m;
        }
        g.latent_contradictions.push(axpy(&g.latent_center, cfg.contradiction_magnitude, &offset));
        let shift = unit(rng, cfg.dim_cos);
        let cnoise = gaussian(rng, cfg.dim_cos);
        let shifted = axpy(&g.cos_center, cfg.contradiction_cos_shift, &shift);
        g.cos_contradictions.push(normalized(axpy(&shifted, cfg.cosine_noise, &cnoise)));
    }
    g
}

fn draw_distractor(rng: &mut ChaCha8Rng, cfg: &PlantedConfig, anchor: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let latent = unit(rng, cfg.dim_sparse);
    let shift = unit(rng, cfg.dim_cos);
    let cnoise = gaussian(rng, cfg.dim_cos);
    let shifted = axpy(anchor, cfg.distractor_cos_shift, &shift);
    (normalized(axpy(&shifted, cfg.cosine_noise, &cnoise)), latent)
}

/// Generates a planted contradiction-retrieval bundle.
///
/// Queries are the paraphrases (each excluding itself); the group's
/// contradictions are its relevant documents. Each group contributes
/// `paraphrases * contradictions` training tuples whose hard negative is a
/// random other paraphrase of the group.
pub fn generate_planted(cfg: &PlantedConfig) -> Result<Bundle> {
    cfg.validate()?;
    let rotation = random_rotation(cfg.dim_sparse, cfg.basis_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Rows::new();
    let mut groups = GroupMap::new();
    let mut qrels = QrelSet::new();
    let mut tuples = Vec::new();
    let mut query_ids = Vec::new();
    let mut cos_centers = Vec::with_capacity(cfg.groups);

    for gi in 0..cfg.groups {
        let g = draw_group(&mut rng, cfg);
        let gid = gi as u32;
        for (a, (cos, lat)) in g.cos_paraphrases.iter().zip(&g.latent_paraphrases).enumerate() {
            let id = paraphrase_id(gi, a);
            rows.push(id.clone(), cos, lat, &rotation);
            groups.insert(id.clone(), gid);
            query_ids.push(id);
        }
        for (b, (cos, lat)) in g.cos_contradictions.iter().zip(&g.latent_contradictions).enumerate() {
            let id = contradiction_id(gi, b);
            rows.push(id.clone(), cos, lat, &rotation);
            groups.insert(id.clone(), gid);
            for a in 0..cfg.paraphrases_per_group {
                qrels.insert(paraphrase_id(gi, a), id.clone(), 1);
            }
        }
        for a in 0..cfg.paraphrases_per_group {
            for b in 0..cfg.contradictions_per_group {
                let mut pick = rng.random_range(0..cfg.paraphrases_per_group - 1);
                if pick >= a {
                    pick += 1;
                }
                tuples.push(TupleRef {
                    anchor: paraphrase_id(gi, a),
                    positive: contradiction_id(gi, b),
                    hard_negative: paraphrase_id(gi, pick),
                });
            }
        }
        cos_centers.push(g.cos_center);
    }
    for j in 0..cfg.distractor_count {
        let (cos, lat) = draw_distractor(&mut rng, cfg, &cos_centers[j % cfg.groups]);
        rows.push(distractor_id(j), &cos, &lat, &rotation);
    }

    let corpus = rows.into_corpus(cfg)?;
    let queries = corpus.to_queries(&query_ids)?;
    Ok(Bundle { corpus, queries, qrels, tuples, groups })
}

/// Parameters of the corpus-corruption scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    #[serde(flatten)]
    pub planted: PlantedConfig,
    /// Norm of the random component separating a question from its answer
    /// group direction in the cosine space.
    pub query_cos_noise: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            planted: PlantedConfig {
                contradiction_cos_shift: 0.05,
                distractor_count: 300,
                ..PlantedConfig::default()
            },
            query_cos_noise: 1.0,
        }
    }
}

/// Original corpus `C+` (paraphrases and background), corrupted corpus `C-`
/// (`C+` plus injected contradictions), question queries answered by the
/// paraphrases, and one paraphrase per group as trusted ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionScenario {
    pub original: DualCorpus,
    pub corrupted: DualCorpus,
    pub queries: Vec<QueryRecord>,
    pub qrels: QrelSet,
    pub ground_truths: Vec<QueryRecord>,
    pub corrupted_ids: BTreeSet<DocId>,
}

pub fn generate_corruption(cfg: &CorruptionConfig) -> Result<CorruptionScenario> {
    let p = &cfg.planted;
    p.validate()?;
    if !(cfg.query_cos_noise.is_finite() && cfg.query_cos_noise >= 0.0) {
        return Err(Error::Config("query_cos_noise must be non-negative".into()));
    }
    let rotation = random_rotation(p.dim_sparse, p.basis_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut clean = Rows::new();
    let mut injected = Rows::new();
    let mut questions = Rows::new();
    let mut qrels = QrelSet::new();
    let mut cos_centers = Vec::with_capacity(p.groups);
    let mut gt_ids = Vec::new();

    for gi in 0..p.groups {
        let g = draw_group(&mut rng, p);
        let qid = doc_id(format!("q{gi:05}"));
        for (a, (cos, lat)) in g.cos_paraphrases.iter().zip(&g.latent_paraphrases).enumerate() {
            let id = paraphrase_id(gi, a);
            clean.push(id.clone(), cos, lat, &rotation);
            qrels.insert(qid.clone(), id, 1);
        }
        gt_ids.push(paraphrase_id(gi, 0));
        for (b, (cos, lat)) in g.cos_contradictions.iter().zip(&g.latent_contradictions).enumerate() {
            injected.push(contradiction_id(gi, b), cos, lat, &rotation);
        }
        let qdir = unit(&mut rng, p.dim_cos);
        let qcos = normalized(axpy(&g.cos_center, cfg.query_cos_noise, &qdir));
        let qlat = axpy(&g.latent_center, p.paraphrase_noise, &gaussian(&mut rng, p.dim_sparse));
        questions.push(qid, &qcos, &qlat, &rotation);
        cos_centers.push(g.cos_center);
    }
    for j in 0..p.distractor_count {
        let (cos, lat) = draw_distractor(&mut rng, p, &cos_centers[j % p.groups]);
        clean.push(distractor_id(j), &cos, &lat, &rotation);
    }

    let corrupted_ids: BTreeSet<DocId> = injected.ids.iter().cloned().collect();
    let original = clean.into_corpus(p)?;
    let corrupted = original.concat(&injected.into_corpus(p)?)?;
    let question_table = questions.into_corpus(p)?;
    let mut queries = question_table.to_queries(question_table.ids())?;
    for q in &mut queries {
        q.exclude_ids.clear();
    }
    let ground_truths = original.to_queries(&gt_ids)?;
    Ok(CorruptionScenario { original, corrupted, queries, qrels, ground_truths, corrupted_ids })
}
