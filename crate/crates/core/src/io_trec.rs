//! Readers and writers for TREC run files, TREC qrels, JSONL corpora and TSV queries.
//!
//! All readers take a [`BufRead`] of raw bytes. Invalid UTF-8 is a parse error carrying the
//! 1-based line number, and blank lines are skipped everywhere.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{Candidate, Corpus, Passage, PassageId, Qrels, Query, QueryId, RankedList};

pub const DEFAULT_PRECISION: usize = 6;

/// A parsed value plus the non-fatal issues met while reading it.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub value: T,
    pub warnings: Vec<LoadWarning>,
}

impl<T> Loaded<T> {
    pub fn into_inner(self) -> T {
        self.value
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadWarning {
    pub line: usize,
    pub message: String,
}

fn warn(warnings: &mut Vec<LoadWarning>, line: usize, message: String) {
    tracing::warn!(line, "{message}");
    warnings.push(LoadWarning { line, message });
}

/// A TREC run: one ranked list per query and a single run tag.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunFile {
    pub tag: String,
    pub lists: BTreeMap<QueryId, RankedList>,
}

impl RunFile {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            lists: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, list: RankedList) {
        self.lists.insert(list.query_id.clone(), list);
    }

    pub fn get(&self, query: &QueryId) -> Option<&RankedList> {
        self.lists.get(query)
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

/// Iterates non-blank lines as UTF-8, with their 1-based numbers.
fn for_each_line(mut reader: impl BufRead, mut f: impl FnMut(usize, &str) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        line_no += 1;
        let line = std::str::from_utf8(&buf).map_err(|e| Error::Parse {
            line: line_no,
            message: format!("invalid UTF-8: {e}"),
        })?;
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        f(line_no, line)?;
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn id_at<'a, T>(line: usize, raw: &'a str, make: impl FnOnce(&'a str) -> Result<T>) -> Result<T> {
    make(raw).map_err(|e| parse_err(line, e.to_string()))
}

/// Parses a six-column TREC run. Entries are re-sorted by score (descending, ties by
/// ascending docid) and re-ranked from 1; the rank column is only checked to be an integer.
pub fn parse_run(reader: impl BufRead) -> Result<RunFile> {
    let mut tag: Option<String> = None;
    let mut rows: BTreeMap<QueryId, Vec<(PassageId, f64)>> = BTreeMap::new();
    let mut seen: HashSet<(QueryId, PassageId)> = HashSet::new();

    for_each_line(reader, |line, text| {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(parse_err(line, format!("expected 6 fields, found {}", fields.len())));
        }
        let qid = id_at(line, fields[0], QueryId::new)?;
        let pid = id_at(line, fields[2], PassageId::new)?;
        fields[3]
            .parse::<i64>()
            .map_err(|_| parse_err(line, format!("non-numeric rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| parse_err(line, format!("non-numeric score {:?}", fields[4])))?;
        if !score.is_finite() {
            return Err(parse_err(line, format!("non-finite score {:?}", fields[4])));
        }
        match &tag {
            None => tag = Some(fields[5].to_string()),
            Some(t) if t != fields[5] => {
                return Err(Error::Data {
                    line,
                    message: format!("run tag {:?} differs from {:?}", fields[5], t),
                })
            }
            Some(_) => {}
        }
        if !seen.insert((qid.clone(), pid.clone())) {
            return Err(Error::Data {
                line,
                message: format!("duplicate docid {pid} for query {qid}"),
            });
        }
        rows.entry(qid).or_default().push((pid, score));
        Ok(())
    })?;

    let mut run = RunFile::new(tag.unwrap_or_default());
    for (qid, mut entries) in rows {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let entries = entries
            .into_iter()
            .enumerate()
            .map(|(i, (pid, score))| Candidate::new(pid, score, i + 1))
            .collect();
        run.insert(RankedList::new(qid, entries));
    }
    Ok(run)
}

/// Writes `qid Q0 docid rank score tag` lines, queries in ascending id order and entries in
/// list order, scores fixed-point with `precision` fractional digits.
pub fn write_run(run: &RunFile, precision: usize, mut out: impl Write) -> std::io::Result<()> {
    for (qid, list) in &run.lists {
        for c in &list.entries {
            writeln!(
                out,
                "{qid} Q0 {} {} {:.precision$} {}",
                c.passage_id, c.rank, c.score, run.tag
            )?;
        }
    }
    Ok(())
}

pub fn run_to_string(run: &RunFile, precision: usize) -> String {
    let mut buf = Vec::new();
    write_run(run, precision, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("run output is UTF-8")
}

/// Parses four-column qrels. Negative grades clamp to 0 with a warning; repeating a pair with
/// the same grade is accepted, with a different grade it is a data error.
pub fn parse_qrels(reader: impl BufRead) -> Result<Loaded<Qrels>> {
    let mut qrels = Qrels::new();
    let mut warnings = Vec::new();
    for_each_line(reader, |line, text| {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", fields.len())));
        }
        let qid = id_at(line, fields[0], QueryId::new)?;
        let pid = id_at(line, fields[2], PassageId::new)?;
        let raw: i64 = fields[3]
            .parse()
            .map_err(|_| parse_err(line, format!("non-integer grade {:?}", fields[3])))?;
        let grade = if raw < 0 {
            warn(
                &mut warnings,
                line,
                format!("negative grade {raw} for ({qid}, {pid}) clamped to 0"),
            );
            0
        } else {
            u32::try_from(raw).map_err(|_| parse_err(line, format!("grade {raw} too large")))?
        };
        if let Some(old) = qrels.insert(qid.clone(), pid.clone(), grade) {
            return Err(Error::Data {
                line,
                message: format!("conflicting grades {old} and {grade} for ({qid}, {pid})"),
            });
        }
        Ok(())
    })?;
    Ok(Loaded { value: qrels, warnings })
}

#[derive(Deserialize)]
struct CorpusRow {
    id: String,
    contents: String,
}

/// Loads a JSONL corpus of `{"id": .., "contents": ..}` objects; other fields are ignored.
pub fn load_corpus(reader: impl BufRead) -> Result<Loaded<Corpus>> {
    let mut corpus = Corpus::new();
    let mut warnings = Vec::new();
    for_each_line(reader, |line, text| {
        let row: CorpusRow = serde_json::from_str(text).map_err(|e| parse_err(line, e.to_string()))?;
        let id = id_at(line, &row.id, PassageId::new)?;
        if corpus.contains_key(&id) {
            return Err(Error::Data {
                line,
                message: format!("duplicate passage id {id}"),
            });
        }
        if row.contents.is_empty() {
            warn(&mut warnings, line, format!("passage {id} has empty text"));
        }
        corpus.insert(id.clone(), Passage::new(id, row.contents));
        Ok(())
    })?;
    Ok(Loaded {
        value: corpus,
        warnings,
    })
}

/// Loads `qid<TAB>text` lines. Only the first tab splits; later tabs stay in the text.
pub fn load_queries(reader: impl BufRead) -> Result<Vec<Query>> {
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    for_each_line(reader, |line, text| {
        let (qid, body) = text
            .split_once('\t')
            .ok_or_else(|| parse_err(line, "missing tab between query id and text"))?;
        let qid = id_at(line, qid, QueryId::new)?;
        if !seen.insert(qid.clone()) {
            return Err(Error::Data {
                line,
                message: format!("duplicate query id {qid}"),
            });
        }
        queries.push(Query::new(qid, body).map_err(|e| parse_err(line, e.to_string()))?);
        Ok(())
    })?;
    Ok(queries)
}
