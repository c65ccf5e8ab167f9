//! On-disk formats.
//!
//! * embeddings: `SPEM` magic, `u32` version 1, `u32` dim, `u64` count, then
//!   `count * dim` little-endian `f32`, row-major
//! * ids: UTF-8, one id per LF-terminated line
//! * texts: JSON Lines `{"id": .., "text": ..}`
//! * qrels: `qid<TAB>0<TAB>docid<TAB>rel`
//!
//! A corpus directory holds `ids.txt`, one `<space>.spem` per space, a
//! `spaces.json` manifest and optionally `texts.jsonl`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    Bundle, DocId, DualCorpus, EmbeddingMatrix, EmbeddingSpace, GroupMap, QrelSet, QueryRecord, TupleRef,
    COSINE_SPACE,
};
use crate::error::{Error, Result};

const SPEM_MAGIC: &[u8; 4] = b"SPEM";
const SPEM_VERSION: u32 = 1;
const SPEM_HEADER: usize = 4 + 4 + 4 + 8;

const MANIFEST: &str = "spaces.json";
const IDS: &str = "ids.txt";
const TEXTS: &str = "texts.jsonl";
const EXCLUDES: &str = "exclude.jsonl";

/// Writes an embedding matrix in SPEM format.
pub fn write_spem(path: &Path, matrix: &EmbeddingMatrix) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(SPEM_MAGIC)?;
    w.write_all(&SPEM_VERSION.to_le_bytes())?;
    let dim = u32::try_from(matrix.dim()).map_err(|_| Error::Config("dimension exceeds u32".into()))?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(matrix.rows() as u64).to_le_bytes())?;
    for v in matrix.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a SPEM file, validating header, length and finiteness.
pub fn read_spem(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path)?;
    if bytes.len() < SPEM_HEADER {
        return Err(Error::format(path, "file shorter than header"));
    }
    if &bytes[0..4] != SPEM_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SPEM_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if dim < 2 {
        return Err(Error::format(path, format!("dimension {dim} < 2")));
    }
    let expected = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(dim))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(SPEM_HEADER))
        .ok_or_else(|| Error::format(path, "count overflows"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes for {count} x {dim}, found {}", bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes[SPEM_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(path, format!("non-finite value in row {}", pos / dim)));
    }
    EmbeddingMatrix::new(dim, data)
}

/// Reads an LF-terminated id list.
pub fn read_ids(path: &Path) -> Result<Vec<DocId>> {
    let content = fs::read_to_string(path)?;
    if content.is_empty() {
        return Ok(Vec::new());
    }
    let Some(body) = content.strip_suffix('\n') else {
        return Err(Error::format(path, "last line is not LF terminated"));
    };
    body.split('\n')
        .enumerate()
        .map(|(n, line)| {
            DocId::new(line).map_err(|_| Error::format(path, format!("line {}: invalid id {line:?}", n + 1)))
        })
        .collect()
}

pub fn write_ids(path: &Path, ids: &[DocId]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for id in ids {
        writeln!(w, "{id}")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TextLine {
    id: DocId,
    text: String,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(v);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_texts(path: &Path, ids: &[DocId]) -> Result<Vec<Option<String>>> {
    let index: BTreeMap<&DocId, usize> = ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let mut texts = vec![None; ids.len()];
    for line in read_jsonl::<TextLine>(path)? {
        let i = *index
            .get(&line.id)
            .ok_or_else(|| Error::Alignment(format!("text for unknown id {:?}", line.id.as_str())))?;
        if texts[i].replace(line.text).is_some() {
            return Err(Error::DuplicateId(line.id.to_string()));
        }
    }
    Ok(texts)
}

/// Explicit file locations for [`load_corpus`].
#[derive(Debug, Clone, Default)]
pub struct CorpusFiles {
    /// Space name to SPEM path.
    pub embeddings: BTreeMap<String, PathBuf>,
    pub ids: PathBuf,
    pub texts: Option<PathBuf>,
}

/// Loads and validates a corpus from explicit files. A `"cosine"` space is
/// required.
pub fn load_corpus(files: &CorpusFiles) -> Result<DualCorpus> {
    let corpus = load_table(files, &BTreeMap::new())?;
    corpus.space(COSINE_SPACE)?;
    Ok(corpus)
}

fn load_table(files: &CorpusFiles, tags: &BTreeMap<String, String>) -> Result<DualCorpus> {
    let ids = read_ids(&files.ids)?;
    let texts = match &files.texts {
        Some(p) => read_texts(p, &ids)?,
        None => Vec::new(),
    };
    let mut corpus = DualCorpus::new(ids, texts)?;
    for (name, path) in &files.embeddings {
        let matrix = read_spem(path)?;
        if matrix.rows() != corpus.len() {
            return Err(Error::Alignment(format!(
                "{} has {} rows but {} has {} ids",
                path.display(),
                matrix.rows(),
                files.ids.display(),
                corpus.len()
            )));
        }
        let tag = tags.get(name).cloned().unwrap_or_default();
        let space = EmbeddingSpace::new(name.clone(), matrix.dim(), tag)?;
        corpus.add_space(space, matrix)?;
    }
    Ok(corpus)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    spaces: Vec<ManifestSpace>,
    #[serde(default)]
    texts: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSpace {
    name: String,
    dim: usize,
    #[serde(default)]
    model_tag: String,
    file: String,
}

fn read_table_dir(dir: &Path) -> Result<DualCorpus> {
    let manifest_path = dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
        .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    let mut files = CorpusFiles { ids: dir.join(IDS), ..Default::default() };
    let mut tags = BTreeMap::new();
    for s in &manifest.spaces {
        files.embeddings.insert(s.name.clone(), dir.join(&s.file));
        tags.insert(s.name.clone(), s.model_tag.clone());
    }
    if manifest.texts {
        files.texts = Some(dir.join(TEXTS));
    }
    let corpus = load_table(&files, &tags)?;
    for s in &manifest.spaces {
        let got = corpus.space(&s.name)?.space.dim;
        if got != s.dim {
            return Err(Error::format(&manifest_path, format!("space {:?} declared dim {} but file has {got}", s.name, s.dim)));
        }
    }
    Ok(corpus)
}

fn write_table_dir(corpus: &DualCorpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_ids(&dir.join(IDS), corpus.ids())?;
    let mut spaces = Vec::new();
    for sd in corpus.spaces() {
        let file = format!("{}.spem", sd.space.name);
        write_spem(&dir.join(&file), &sd.matrix)?;
        spaces.push(ManifestSpace {
            name: sd.space.name.clone(),
            dim: sd.space.dim,
            model_tag: sd.space.model_tag.clone(),
            file,
        });
    }
    let texts = corpus.has_texts();
    if texts {
        let lines = corpus
            .ids()
            .iter()
            .zip(corpus.texts())
            .filter_map(|(id, t)| t.as_ref().map(|t| TextLine { id: id.clone(), text: t.clone() }));
        write_jsonl(&dir.join(TEXTS), lines)?;
    }
    let manifest = serde_json::to_string_pretty(&Manifest { spaces, texts })?;
    fs::write(dir.join(MANIFEST), manifest + "\n")?;
    Ok(())
}

/// Loads a corpus directory written by [`save_corpus`].
pub fn load_corpus_dir(dir: &Path) -> Result<DualCorpus> {
    let corpus = read_table_dir(dir)?;
    corpus.space(COSINE_SPACE)?;
    Ok(corpus)
}

/// Writes `corpus` into `dir` (created if needed).
pub fn save_corpus(corpus: &DualCorpus, dir: &Path) -> Result<()> {
    write_table_dir(corpus, dir)
}

#[derive(Serialize, Deserialize)]
struct ExcludeLine {
    qid: DocId,
    exclude_ids: BTreeSet<DocId>,
}

/// Writes queries as a table directory plus per-query exclusions.
pub fn save_queries(queries: &[QueryRecord], dir: &Path) -> Result<()> {
    let ids: Vec<DocId> = queries.iter().map(|q| q.qid.clone()).collect();
    let texts = queries.iter().map(|q| q.text.clone()).collect();
    let mut table = DualCorpus::new(ids, texts)?;
    if let Some(first) = queries.first() {
        for (name, v) in &first.embeddings {
            let rows = queries
                .iter()
                .map(|q| q.embedding(name))
                .collect::<Result<Vec<_>>>()?;
            let matrix = EmbeddingMatrix::from_rows(v.len(), &rows)?;
            table.add_space(EmbeddingSpace::new(name.clone(), v.len(), "")?, matrix)?;
        }
        if queries.iter().any(|q| q.embeddings.len() != first.embeddings.len()) {
            return Err(Error::Alignment("queries carry different space sets".into()));
        }
    }
    write_table_dir(&table, dir)?;
    write_jsonl(
        &dir.join(EXCLUDES),
        queries.iter().map(|q| ExcludeLine { qid: q.qid.clone(), exclude_ids: q.exclude_ids.clone() }),
    )
}

/// Loads queries written by [`save_queries`].
pub fn load_queries(dir: &Path) -> Result<Vec<QueryRecord>> {
    let table = read_table_dir(dir)?;
    let excludes_path = dir.join(EXCLUDES);
    let mut excludes: BTreeMap<DocId, BTreeSet<DocId>> = BTreeMap::new();
    if excludes_path.exists() {
        for line in read_jsonl::<ExcludeLine>(&excludes_path)? {
            if !table.contains(line.qid.as_str()) {
                return Err(Error::Alignment(format!("exclusions for unknown query {:?}", line.qid.as_str())));
            }
            excludes.insert(line.qid, line.exclude_ids);
        }
    }
    Ok((0..table.len())
        .map(|i| {
            let qid = table.id(i).clone();
            QueryRecord {
                embeddings: table
                    .spaces()
                    .map(|sd| (sd.space.name.clone(), sd.matrix.row(i).to_vec()))
                    .collect(),
                text: table.text(i).map(str::to_string),
                exclude_ids: excludes.remove(&qid).unwrap_or_default(),
                qid,
            }
        })
        .collect())
}

/// Parses TREC-style qrels. The second column is ignored; relevance 0 lines
/// are dropped; negative relevance is an error.
pub fn load_qrels(path: &Path) -> Result<QrelSet> {
    let content = fs::read_to_string(path)?;
    let mut qrels = QrelSet::new();
    for (n, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |msg: String| Error::format(path, format!("line {}: {msg}", n + 1));
        if cols.len() != 4 {
            return Err(bad(format!("expected 4 tab-separated columns, got {}", cols.len())));
        }
        let qid = DocId::new(cols[0]).map_err(|e| bad(e.to_string()))?;
        let doc = DocId::new(cols[2]).map_err(|e| bad(e.to_string()))?;
        let rel: i64 = cols[3].trim().parse().map_err(|_| bad(format!("bad relevance {:?}", cols[3])))?;
        if rel < 0 {
            return Err(bad(format!("negative relevance {rel}")));
        }
        let rel = u32::try_from(rel).map_err(|_| bad(format!("relevance {rel} too large")))?;
        qrels.insert(qid, doc, rel);
    }
    Ok(qrels)
}

pub fn save_qrels(qrels: &QrelSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (qid, docs) in qrels.queries() {
        for (doc, rel) in docs {
            writeln!(w, "{qid}\t0\t{doc}\t{rel}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_tuples(path: &Path) -> Result<Vec<TupleRef>> {
    read_jsonl(path)
}

pub fn save_tuples(tuples: &[TupleRef], path: &Path) -> Result<()> {
    write_jsonl(path, tuples)
}

/// Reads `docid<TAB>group` lines.
pub fn load_groups(path: &Path) -> Result<GroupMap> {
    let mut groups = GroupMap::new();
    for (n, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = || Error::format(path, format!("line {}: expected docid<TAB>group", n + 1));
        let (id, g) = line.split_once('\t').ok_or_else(bad)?;
        let g: u32 = g.parse().map_err(|_| bad())?;
        if groups.insert(DocId::new(id)?, g).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(groups)
}

pub fn save_groups(groups: &GroupMap, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (id, g) in groups {
        writeln!(w, "{id}\t{g}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a bundle as `corpus/`, `queries/`, `qrels.tsv`, `tuples.jsonl` and
/// `groups.tsv` under `dir`.
pub fn save_bundle(bundle: &Bundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_corpus(&bundle.corpus, &dir.join("corpus"))?;
    save_queries(&bundle.queries, &dir.join("queries"))?;
    save_qrels(&bundle.qrels, &dir.join("qrels.tsv"))?;
    save_tuples(&bundle.tuples, &dir.join("tuples.jsonl"))?;
    save_groups(&bundle.groups, &dir.join("groups.tsv"))
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    Ok(Bundle {
        corpus: load_corpus_dir(&dir.join("corpus"))?,
        queries: load_queries(&dir.join("queries"))?,
        qrels: load_qrels(&dir.join("qrels.tsv"))?,
        tuples: load_tuples(&dir.join("tuples.jsonl"))?,
        groups: load_groups(&dir.join("groups.tsv"))?,
    })
}
