//! Corpus data model.
//!
//! A [`DualCorpus`] holds one row per document in every registered embedding
//! space (typically `"cosine"` for the similarity encoder and `"sparse"` for
//! the sparsity-trained encoder), aligned with the document id list.

mod io;
mod planted;
mod split;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_bundle, load_corpus, load_corpus_dir, load_groups, load_qrels, load_queries, load_tuples, read_ids,
    read_spem, save_bundle, save_corpus, save_groups, save_qrels, save_queries, save_tuples,
    write_ids, write_spem, CorpusFiles,
};
pub use planted::{generate_corruption, generate_planted, CorruptionConfig, CorruptionScenario, PlantedConfig};
pub use split::{split_by_group, SplitFractions};

/// Name of the similarity-encoder space.
pub const COSINE_SPACE: &str = "cosine";
/// Name of the sparsity-encoder space.
pub const SPARSE_SPACE: &str = "sparse";
/// Name of the frozen base-encoder space adapters are trained on.
pub const BASE_SPACE: &str = "base";

/// Document (or query) identifier: non-empty UTF-8 without control characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DocId(String);

impl DocId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_control) {
            return Err(Error::InvalidId(id));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for DocId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        DocId::new(s)
    }
}

impl From<DocId> for String {
    fn from(id: DocId) -> String {
        id.0
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for DocId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Metadata for one embedding space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpace {
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub model_tag: String,
}

impl EmbeddingSpace {
    pub fn new(name: impl Into<String>, dim: usize, model_tag: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::Config(format!("invalid space name {name:?}")));
        }
        if dim < 2 {
            return Err(Error::InvalidEmbedding(format!("space {name:?} has dimension {dim} < 2")));
        }
        Ok(Self { name, dim, model_tag: model_tag.into() })
    }
}

/// Row-major `f32` matrix, one row per document.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Alignment(format!(
                "matrix payload of {} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding(format!("non-finite value in row {}", pos / dim)));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch { left: dim, right: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }
}

/// An embedding space together with its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceData {
    pub space: EmbeddingSpace,
    pub matrix: EmbeddingMatrix,
}

/// Aligned documents with one embedding row per document per space.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCorpus {
    ids: Vec<DocId>,
    index: HashMap<DocId, usize>,
    texts: Vec<Option<String>>,
    spaces: BTreeMap<String, SpaceData>,
}

impl DualCorpus {
    /// Creates a corpus with no spaces. `texts` may be empty (no texts) or
    /// aligned with `ids`.
    pub fn new(ids: Vec<DocId>, texts: Vec<Option<String>>) -> Result<Self> {
        let texts = if texts.is_empty() { vec![None; ids.len()] } else { texts };
        if texts.len() != ids.len() {
            return Err(Error::Alignment(format!("{} texts for {} documents", texts.len(), ids.len())));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.to_string()));
            }
        }
        Ok(Self { ids, index, texts, spaces: BTreeMap::new() })
    }

    pub fn add_space(&mut self, space: EmbeddingSpace, matrix: EmbeddingMatrix) -> Result<()> {
        if self.spaces.contains_key(&space.name) {
            return Err(Error::SpaceExists(space.name));
        }
        if matrix.dim() != space.dim {
            return Err(Error::DimensionMismatch { left: space.dim, right: matrix.dim() });
        }
        if matrix.rows() != self.ids.len() {
            return Err(Error::Alignment(format!(
                "space {:?} has {} rows for {} documents",
                space.name,
                matrix.rows(),
                self.ids.len()
            )));
        }
        self.spaces.insert(space.name.clone(), SpaceData { space, matrix });
        Ok(())
    }

    pub fn with_space(mut self, space: EmbeddingSpace, matrix: EmbeddingMatrix) -> Result<Self> {
        self.add_space(space, matrix)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[DocId] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &DocId {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn text(&self, i: usize) -> Option<&str> {
        self.texts[i].as_deref()
    }

    pub fn texts(&self) -> &[Option<String>] {
        &self.texts
    }

    pub fn has_texts(&self) -> bool {
        self.texts.iter().any(Option::is_some)
    }

    pub fn space(&self, name: &str) -> Result<&SpaceData> {
        self.spaces.get(name).ok_or_else(|| Error::MissingSpace(name.to_string()))
    }

    pub fn has_space(&self, name: &str) -> bool {
        self.spaces.contains_key(name)
    }

    pub fn spaces(&self) -> impl Iterator<Item = &SpaceData> {
        self.spaces.values()
    }

    pub fn space_names(&self) -> impl Iterator<Item = &str> {
        self.spaces.keys().map(String::as_str)
    }

    /// Embedding of document `i` in `space`.
    pub fn row(&self, space: &str, i: usize) -> Result<&[f32]> {
        Ok(self.space(space)?.matrix.row(i))
    }

    /// Embedding of document `id` in `space`.
    pub fn embedding(&self, space: &str, id: &str) -> Result<&[f32]> {
        let i = self.index_of(id).ok_or_else(|| Error::Alignment(format!("unknown document {id:?}")))?;
        self.row(space, i)
    }

    /// New corpus with only the documents for which `keep` is true, in the
    /// original order.
    pub fn filter(&self, mut keep: impl FnMut(&DocId) -> bool) -> DualCorpus {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.ids[i])).collect();
        self.select(&rows)
    }

    fn select(&self, rows: &[usize]) -> DualCorpus {
        let ids: Vec<DocId> = rows.iter().map(|&i| self.ids[i].clone()).collect();
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let texts = rows.iter().map(|&i| self.texts[i].clone()).collect();
        let spaces = self
            .spaces
            .iter()
            .map(|(name, sd)| {
                let dim = sd.matrix.dim();
                let mut data = Vec::with_capacity(rows.len() * dim);
                for &i in rows {
                    data.extend_from_slice(sd.matrix.row(i));
                }
                let matrix = EmbeddingMatrix { dim, data };
                (name.clone(), SpaceData { space: sd.space.clone(), matrix })
            })
            .collect();
        DualCorpus { ids, index, texts, spaces }
    }

    /// Concatenates two corpora with the same space layout.
    pub fn concat(&self, other: &DualCorpus) -> Result<DualCorpus> {
        let names_a: Vec<_> = self.space_names().collect();
        let names_b: Vec<_> = other.space_names().collect();
        if names_a != names_b {
            return Err(Error::Alignment(format!("space sets differ: {names_a:?} vs {names_b:?}")));
        }
        let ids = self.ids.iter().chain(&other.ids).cloned().collect();
        let texts = self.texts.iter().chain(&other.texts).cloned().collect();
        let mut out = DualCorpus::new(ids, texts)?;
        for (sa, sb) in self.spaces.values().zip(other.spaces.values()) {
            if sa.space.dim != sb.space.dim {
                return Err(Error::DimensionMismatch { left: sa.space.dim, right: sb.space.dim });
            }
            let mut data = sa.matrix.data.clone();
            data.extend_from_slice(&sb.matrix.data);
            out.add_space(sa.space.clone(), EmbeddingMatrix::new(sa.space.dim, data)?)?;
        }
        Ok(out)
    }

    /// Extracts documents as query records, each excluding itself.
    pub fn to_queries(&self, ids: &[DocId]) -> Result<Vec<QueryRecord>> {
        ids.iter()
            .map(|id| {
                let i = self
                    .index_of(id.as_str())
                    .ok_or_else(|| Error::Alignment(format!("unknown document {id:?}")))?;
                let embeddings = self
                    .spaces
                    .iter()
                    .map(|(name, sd)| (name.clone(), sd.matrix.row(i).to_vec()))
                    .collect();
                Ok(QueryRecord {
                    qid: id.clone(),
                    embeddings,
                    text: self.texts[i].clone(),
                    exclude_ids: BTreeSet::from([id.clone()]),
                })
            })
            .collect()
    }
}

/// A query passage with its embeddings and ids it must never retrieve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub qid: DocId,
    pub embeddings: BTreeMap<String, Vec<f32>>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub exclude_ids: BTreeSet<DocId>,
}

impl QueryRecord {
    pub fn embedding(&self, space: &str) -> Result<&[f32]> {
        self.embeddings
            .get(space)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingSpace(space.to_string()))
    }
}

/// Graded relevance judgments: query id to relevant documents (relevance >= 1).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrelSet {
    judgments: BTreeMap<DocId, BTreeMap<DocId, u32>>,
}

impl QrelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a judgment; relevance 0 is ignored.
    pub fn insert(&mut self, qid: DocId, doc: DocId, relevance: u32) {
        if relevance > 0 {
            self.judgments.entry(qid).or_default().insert(doc, relevance);
        }
    }

    pub fn get(&self, qid: &str) -> Option<&BTreeMap<DocId, u32>> {
        self.judgments.get(qid)
    }

    pub fn relevance(&self, qid: &str, doc: &str) -> u32 {
        self.get(qid).and_then(|m| m.get(doc)).copied().unwrap_or(0)
    }

    pub fn contains_query(&self, qid: &str) -> bool {
        self.judgments.contains_key(qid)
    }

    pub fn queries(&self) -> impl Iterator<Item = (&DocId, &BTreeMap<DocId, u32>)> {
        self.judgments.iter()
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Judgments restricted to the given queries.
    pub fn restrict<'a>(&self, qids: impl IntoIterator<Item = &'a DocId>) -> QrelSet {
        let judgments = qids
            .into_iter()
            .filter_map(|q| self.judgments.get(q).map(|m| (q.clone(), m.clone())))
            .collect();
        QrelSet { judgments }
    }
}

/// Training tuple by document id: anchor, positive (a contradiction of the
/// anchor) and hard negative (a paraphrase of the anchor).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TupleRef {
    pub anchor: DocId,
    pub positive: DocId,
    pub hard_negative: DocId,
}

/// Document id to group id. Documents absent from the map are background.
pub type GroupMap = BTreeMap<DocId, u32>;

/// Everything a retrieval experiment needs: corpus, queries, judgments,
/// training tuples and the group labels used for splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub corpus: DualCorpus,
    pub queries: Vec<QueryRecord>,
    pub qrels: QrelSet,
    pub tuples: Vec<TupleRef>,
    pub groups: GroupMap,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> DocId {
        DocId::new(s).unwrap()
    }

    fn small_corpus() -> DualCorpus {
        let ids = vec![id("a"), id("b"), id("c")];
        DualCorpus::new(ids, vec![])
            .unwrap()
            .with_space(
                EmbeddingSpace::new("cosine", 2, "").unwrap(),
                EmbeddingMatrix::new(2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap(),
            )
            .unwrap()
    }

    #[test]
    fn doc_id_validation() {
        assert!(DocId::new("").is_err());
        assert!(DocId::new("a\tb").is_err());
        assert!(DocId::new("a\nb").is_err());
        assert!(DocId::new("ünïcode-42").is_ok());
        let parsed: std::result::Result<DocId, _> = serde_json::from_str("\"x\\ty\"");
        assert!(parsed.is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(matches!(DualCorpus::new(vec![id("a"), id("a")], vec![]), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn space_alignment_enforced() {
        let mut c = small_corpus();
        let bad = EmbeddingMatrix::new(2, vec![0.0; 4]).unwrap();
        assert!(matches!(
            c.add_space(EmbeddingSpace::new("sparse", 2, "").unwrap(), bad),
            Err(Error::Alignment(_))
        ));
        let dup = EmbeddingMatrix::new(2, vec![0.0; 6]).unwrap();
        assert!(matches!(
            c.add_space(EmbeddingSpace::new("cosine", 2, "").unwrap(), dup),
            Err(Error::SpaceExists(_))
        ));
        assert!(matches!(c.space("sparse"), Err(Error::MissingSpace(_))));
    }

    #[test]
    fn filter_keeps_order_and_alignment() {
        let c = small_corpus();
        let f = c.filter(|d| d.as_str() != "b");
        assert_eq!(f.ids(), &[id("a"), id("c")]);
        assert_eq!(f.row("cosine", 1).unwrap(), &[1.0, 1.0]);
        assert_eq!(f.index_of("c"), Some(1));
    }

    #[test]
    fn to_queries_excludes_self() {
        let q = small_corpus().to_queries(&[id("b")]).unwrap();
        assert_eq!(q[0].embedding("cosine").unwrap(), &[0.0, 1.0]);
        assert!(q[0].exclude_ids.contains("b"));
    }

    #[test]
    fn qrels_ignore_zero_relevance() {
        let mut q = QrelSet::new();
        q.insert(id("q"), id("d"), 0);
        assert!(q.is_empty());
        q.insert(id("q"), id("d"), 2);
        assert_eq!(q.relevance("q", "d"), 2);
        assert_eq!(q.relevance("q", "x"), 0);
    }
}
