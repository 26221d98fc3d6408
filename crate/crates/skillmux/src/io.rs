//! Line-record file formats: pools, SKILL.md documents, embeddings, runs,
//! relevance and query files, training data and persisted BM25 indexes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use skillmux_core::corpus::{CorpusError, Skill, SkillPool, SkillRecord, Tier};
use skillmux_core::dense::{assemble_index, DenseError, NormPolicy, VectorIndex};
use skillmux_core::eval::{EvalQuery, QueryRelevance, QueryRun, RelevanceSet};
use skillmux_core::sparse::Bm25Index;
use skillmux_core::{Ranking, ScoredHit};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Corpus {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error("{path}: {source}")]
    Dense {
        path: PathBuf,
        #[source]
        source: DenseError,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Non-blank lines with their 1-based line numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>, IoError> {
    let file = File::open(path).map_err(fs_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(fs_err(path))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_line<T: DeserializeOwned>(path: &Path, line: usize, text: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    })
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    lines(path)?.into_iter().map(|(n, l)| parse_line(path, n, &l)).collect()
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<(), IoError> {
    let mut w = create(path)?;
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| format_err(path, e.to_string()))?;
        writeln!(w, "{line}").map_err(fs_err(path))?;
    }
    w.flush().map_err(fs_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(fs_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(fs_err(path))?;
    parse_line(path, 1, &text)
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(fs_err(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(fs_err(path))?))
}

/// Reads a pool file. Errors name the offending line.
pub fn read_pool(path: &Path, tier: Tier) -> Result<SkillPool, IoError> {
    let rows = lines(path)?;
    let mut skills = Vec::with_capacity(rows.len());
    for (index, (line, text)) in rows.iter().enumerate() {
        let record: SkillRecord = parse_line(path, *line, text)?;
        let skill = record.into_skill(index).map_err(|e| IoError::Parse {
            path: path.to_path_buf(),
            line: *line,
            message: e.to_string(),
        })?;
        skills.push(skill);
    }
    SkillPool::new(skills, tier).map_err(|source| match source {
        CorpusError::DuplicateId { id, first, second } => IoError::Format {
            path: path.to_path_buf(),
            message: format!(
                "duplicate skill id `{id}` on lines {} and {}",
                rows[first].0, rows[second].0
            ),
        },
        source => IoError::Corpus {
            path: path.to_path_buf(),
            source,
        },
    })
}

/// Reads skill records without enforcing id uniqueness (input to dedup).
pub fn read_skills(path: &Path) -> Result<Vec<Skill>, IoError> {
    let rows = lines(path)?;
    rows.iter()
        .enumerate()
        .map(|(index, (line, text))| {
            let record: SkillRecord = parse_line(path, *line, text)?;
            record.into_skill(index).map_err(|e| IoError::Parse {
                path: path.to_path_buf(),
                line: *line,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_skills<'a>(path: &Path, skills: impl IntoIterator<Item = &'a Skill>) -> Result<(), IoError> {
    write_jsonl(path, skills)
}

/// Parses a SKILL.md document.
///
/// The document may open with a metadata block delimited by `---` lines
/// holding `key: value` pairs (`name`, `description`, `category`, `id`;
/// values may be quoted, other keys are ignored). Everything after the block
/// is the body. Without a block, the name is `fallback_id` and the whole
/// document is the body.
pub fn parse_skill_md(text: &str, fallback_id: &str) -> Skill {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut meta = BTreeMap::new();
    let mut body = text;
    let mut it = text.split_inclusive('\n');
    if it.next().map(str::trim_end) == Some("---") {
        let mut consumed = text.split_inclusive('\n').next().map_or(0, str::len);
        let mut closed = false;
        for line in it {
            consumed += line.len();
            let trimmed = line.trim_end();
            if trimmed == "---" {
                closed = true;
                break;
            }
            if let Some((k, v)) = trimmed.split_once(':') {
                let v = v.trim();
                let v = v
                    .strip_prefix('"')
                    .and_then(|s| s.strip_suffix('"'))
                    .or_else(|| v.strip_prefix('\'').and_then(|s| s.strip_suffix('\'')))
                    .unwrap_or(v);
                meta.insert(k.trim().to_lowercase(), v.to_string());
            }
        }
        if closed {
            body = &text[consumed..];
        } else {
            meta.clear();
        }
    }
    let get = |k: &str| meta.get(k).cloned().filter(|v| !v.is_empty());
    Skill::new(
        get("id").unwrap_or_else(|| fallback_id.to_string()),
        get("name").unwrap_or_else(|| fallback_id.to_string()),
        get("description").unwrap_or_default(),
        body.trim().to_string(),
        get("category").unwrap_or_else(|| skillmux_core::corpus::UNCATEGORIZED.to_string()),
    )
}

/// Collects every `SKILL.md` below `root`, in path order. The fallback id is
/// the containing directory relative to `root`.
pub fn ingest_skill_dir(root: &Path) -> Result<Vec<Skill>, IoError> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(fs_err(&dir))? {
            let path = entry.map_err(fs_err(&dir))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n.eq_ignore_ascii_case("SKILL.md")) {
                files.push(path);
            }
        }
    }
    files.sort();
    files
        .into_iter()
        .map(|path| {
            let text = fs::read_to_string(&path).map_err(fs_err(&path))?;
            let dir = path.parent().unwrap_or(root);
            let rel = dir.strip_prefix(root).unwrap_or(dir);
            let mut id = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if id.is_empty() {
                id = root
                    .file_name()
                    .map_or_else(|| "skill".to_string(), |n| n.to_string_lossy().into_owned());
            }
            Ok(parse_skill_md(&text, &id))
        })
        .collect()
}

/// First record of an embeddings file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub header: EmbeddingHeader,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingFile {
    pub fn read(path: &Path) -> Result<Self, IoError> {
        let rows = lines(path)?;
        let Some(((hl, ht), rest)) = rows.split_first() else {
            return Err(format_err(path, "empty embeddings file"));
        };
        let header: EmbeddingHeader = parse_line(path, *hl, ht)?;
        let mut records = Vec::with_capacity(rest.len());
        let mut seen = BTreeSet::new();
        for (line, text) in rest {
            let r: EmbeddingRecord = parse_line(path, *line, text)?;
            if r.vector.len() != header.dimension {
                return Err(IoError::Parse {
                    path: path.to_path_buf(),
                    line: *line,
                    message: format!(
                        "`{}` has dimension {}, header declares {}",
                        r.id,
                        r.vector.len(),
                        header.dimension
                    ),
                });
            }
            if !seen.insert(r.id.clone()) {
                return Err(IoError::Parse {
                    path: path.to_path_buf(),
                    line: *line,
                    message: format!("duplicate id `{}`", r.id),
                });
            }
            records.push(r);
        }
        if let Some(n) = header.count.filter(|&n| n != records.len()) {
            return Err(format_err(
                path,
                format!("header declares {n} records, found {}", records.len()),
            ));
        }
        Ok(Self { header, records })
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let mut w = create(path)?;
        let mut emit = |v: String| writeln!(w, "{v}").map_err(fs_err(path));
        emit(serde_json::to_string(&self.header).map_err(|e| format_err(path, e.to_string()))?)?;
        for r in &self.records {
            emit(serde_json::to_string(r).map_err(|e| format_err(path, e.to_string()))?)?;
        }
        w.flush().map_err(fs_err(path))
    }

    pub fn from_index(index: &VectorIndex, model: Option<String>) -> Self {
        Self {
            header: EmbeddingHeader {
                dimension: index.dim(),
                count: Some(index.len()),
                model,
                format: None,
            },
            records: index
                .ids()
                .iter()
                .enumerate()
                .map(|(i, id)| EmbeddingRecord {
                    id: id.clone(),
                    vector: index.row(i).to_vec(),
                })
                .collect(),
        }
    }

    pub fn by_id(&self) -> BTreeMap<&str, &[f32]> {
        self.records
            .iter()
            .map(|r| (r.id.as_str(), r.vector.as_slice()))
            .collect()
    }

    /// Index over `pool` in pool order; every pool skill needs a vector.
    pub fn index_for(&self, pool: &SkillPool, policy: &NormPolicy, path: &Path) -> Result<VectorIndex, IoError> {
        let map = self.by_id();
        let mut vectors = Vec::with_capacity(pool.len());
        for s in pool.iter() {
            let v = map
                .get(s.id.as_str())
                .ok_or_else(|| format_err(path, format!("no vector for pool skill `{}`", s.id)))?;
            vectors.push(v.to_vec());
        }
        assemble_index(pool, vectors, self.header.dimension, policy).map_err(|source| IoError::Dense {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// One ranked entry in a run file: `{rank, skill_id, score}` or `[skill_id, score]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RankedEntry {
    Record {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rank: Option<usize>,
        skill_id: String,
        score: f64,
    },
    Pair(String, f64),
}

/// A run-file line: one query's ranked candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<String>,
    pub ranked: Vec<RankedEntry>,
}

impl RunRecord {
    pub fn from_run(run: &QueryRun) -> Self {
        Self {
            query_id: run.query_id.clone(),
            tier: run.tier.clone(),
            ranked: run
                .ranking
                .hits
                .iter()
                .enumerate()
                .map(|(i, h)| RankedEntry::Record {
                    rank: Some(i + 1),
                    skill_id: h.skill_id.clone(),
                    score: h.score,
                })
                .collect(),
        }
    }

    /// Entries are ordered by `rank` when every entry has one, else kept in file order.
    pub fn into_run(self) -> Result<QueryRun, String> {
        let mut entries: Vec<(Option<usize>, String, f64)> = self
            .ranked
            .into_iter()
            .map(|e| match e {
                RankedEntry::Record { rank, skill_id, score } => (rank, skill_id, score),
                RankedEntry::Pair(id, score) => (None, id, score),
            })
            .collect();
        if entries.iter().all(|e| e.0.is_some()) {
            entries.sort_by_key(|e| e.0);
            if entries.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(format!("query `{}` repeats a rank", self.query_id));
            }
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.1.as_str()) {
                return Err(format!("query `{}` ranks `{}` twice", self.query_id, e.1));
            }
        }
        Ok(QueryRun {
            query_id: self.query_id,
            tier: self.tier,
            ranking: Ranking::new(entries.into_iter().map(|(_, id, s)| ScoredHit::new(id, s)).collect()),
        })
    }
}

pub fn read_run(path: &Path) -> Result<Vec<QueryRun>, IoError> {
    lines(path)?
        .into_iter()
        .map(|(line, text)| {
            let rec: RunRecord = parse_line(path, line, &text)?;
            rec.into_run().map_err(|message| IoError::Parse {
                path: path.to_path_buf(),
                line,
                message,
            })
        })
        .collect()
}

pub fn write_run(path: &Path, runs: &[QueryRun]) -> Result<(), IoError> {
    let records: Vec<RunRecord> = runs.iter().map(RunRecord::from_run).collect();
    write_jsonl(path, &records)
}

/// A query-file line: text and/or ground truth for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFileRecord {
    #[serde(alias = "id")]
    pub query_id: String,
    #[serde(default, alias = "query", skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gt: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub strata: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct QueryFile {
    pub path: PathBuf,
    pub records: Vec<QueryFileRecord>,
}

impl QueryFile {
    pub fn read(path: &Path) -> Result<Self, IoError> {
        let records: Vec<QueryFileRecord> = read_jsonl(path)?;
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.query_id.as_str()) {
                return Err(format_err(path, format!("duplicate query id `{}`", r.query_id)));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            records,
        })
    }

    pub fn relevance(&self) -> Result<RelevanceSet, IoError> {
        RelevanceSet::new(self.records.iter().map(|r| QueryRelevance {
            query_id: r.query_id.clone(),
            gt: r.gt.iter().cloned().collect(),
            tier: r.tier.clone(),
            difficulty: r.difficulty.clone(),
            strata: r.strata.clone(),
        }))
        .map_err(|e| format_err(&self.path, e.to_string()))
    }

    pub fn queries(&self) -> Result<Vec<EvalQuery>, IoError> {
        self.records
            .iter()
            .map(|r| {
                Ok(EvalQuery {
                    query_id: r.query_id.clone(),
                    text: r
                        .text
                        .clone()
                        .ok_or_else(|| format_err(&self.path, format!("query `{}` has no text", r.query_id)))?,
                    tier: r.tier.clone(),
                })
            })
            .collect()
    }
}

/// Reads skill ids, one per line, or the union of `gt` sets if the file is a query file.
pub fn read_id_list(path: &Path) -> Result<BTreeSet<String>, IoError> {
    let rows = lines(path)?;
    if rows.first().is_some_and(|(_, t)| t.trim_start().starts_with('{')) {
        let q = QueryFile::read(path)?;
        return Ok(q.records.into_iter().flat_map(|r| r.gt).collect());
    }
    Ok(rows.into_iter().map(|(_, t)| t.trim().to_string()).collect())
}

const BM25_FORMAT: &str = "skillmux-bm25";
const BM25_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Bm25Header {
    format: String,
    version: u32,
}

/// Writes a header line `{"format":"skillmux-bm25","version":1}` followed by
/// the index as one JSON line.
pub fn write_bm25(path: &Path, index: &Bm25Index) -> Result<(), IoError> {
    let mut w = create(path)?;
    let header = Bm25Header {
        format: BM25_FORMAT.into(),
        version: BM25_VERSION,
    };
    for v in [serde_json::to_string(&header), serde_json::to_string(index)] {
        let v = v.map_err(|e| format_err(path, e.to_string()))?;
        writeln!(w, "{v}").map_err(fs_err(path))?;
    }
    w.flush().map_err(fs_err(path))
}

pub fn read_bm25(path: &Path) -> Result<Bm25Index, IoError> {
    let rows = lines(path)?;
    let [(hl, ht), (bl, bt)] = rows.as_slice() else {
        return Err(format_err(path, "expected a header line and an index line"));
    };
    let header: Bm25Header = parse_line(path, *hl, ht)?;
    if header.format != BM25_FORMAT || header.version != BM25_VERSION {
        return Err(format_err(
            path,
            format!("unsupported index format {} v{}", header.format, header.version),
        ));
    }
    parse_line(path, *bl, bt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skill_md_with_metadata() {
        let s = parse_skill_md(
            "---\nname: pdf-reader\ndescription: \"Read PDFs: fast\"\nlicense: MIT\n---\n# PDF\n\nUse it.\n",
            "fallback",
        );
        assert_eq!((s.id.as_str(), s.name.as_str()), ("fallback", "pdf-reader"));
        assert_eq!(s.description, "Read PDFs: fast");
        assert_eq!(s.body, "# PDF\n\nUse it.");
        assert_eq!(s.category, "uncategorized");
    }

    #[test]
    fn skill_md_without_metadata() {
        let s = parse_skill_md("just a body", "dir/x");
        assert_eq!((s.name.as_str(), s.body.as_str()), ("dir/x", "just a body"));
        let unclosed = parse_skill_md("---\nname: a\nbody", "f");
        assert_eq!(unclosed.name, "f");
    }

    #[test]
    fn ranked_entry_forms() {
        let rec: RunRecord = serde_json::from_str(
            r#"{"query_id":"q","ranked":[{"rank":2,"skill_id":"b","score":0.5},{"rank":1,"skill_id":"a","score":0.9}]}"#,
        )
        .unwrap();
        assert_eq!(rec.into_run().unwrap().ranking.ids().collect::<Vec<_>>(), ["a", "b"]);
        let pairs: RunRecord = serde_json::from_str(r#"{"query_id":"q","ranked":[["x",1.0],["y",0.0]]}"#).unwrap();
        assert_eq!(pairs.into_run().unwrap().ranking.ids().collect::<Vec<_>>(), ["x", "y"]);
        let dup: RunRecord = serde_json::from_str(r#"{"query_id":"q","ranked":[["x",1.0],["x",0.0]]}"#).unwrap();
        assert!(dup.into_run().is_err());
    }
}
