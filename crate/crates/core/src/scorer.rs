//! Per-question relevance scores for every corpus fact and the initial
//! ranking derived from them.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use log::warn;
use rayon::prelude::*;

use crate::corpus::{Corpus, FactId};
use crate::error::{Error, Result};
use crate::textsim::{cosine, qa_text, tokenize, VectorProvider};

/// Lower bound of normalized scores.
pub const NORMALIZE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexicalMethod {
    TfidfCosine,
    Overlap,
}

/// Dense question × fact score matrix. Rows are indexed by [`FactId`] and
/// kept in insertion order of their question ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceTable {
    n_facts: usize,
    rows: IndexMap<String, Vec<f64>>,
}

impl RelevanceTable {
    pub fn new(n_facts: usize) -> Self {
        RelevanceTable {
            n_facts,
            rows: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, qid: impl Into<String>, scores: Vec<f64>) -> Result<()> {
        let qid = qid.into();
        if scores.len() != self.n_facts {
            return Err(Error::Invalid(format!(
                "question {qid}: {} scores for {} facts",
                scores.len(),
                self.n_facts
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Invalid(format!("question {qid}: non-finite score")));
        }
        self.rows.insert(qid, scores);
        Ok(())
    }

    pub fn scores(&self, qid: &str) -> Option<&[f64]> {
        self.rows.get(qid).map(Vec::as_slice)
    }

    pub fn qids(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.rows.iter().map(|(q, s)| (q.as_str(), s.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_facts(&self) -> usize {
        self.n_facts
    }

    /// Multiplies every score by `c`.
    pub fn scaled(&self, c: f64) -> RelevanceTable {
        RelevanceTable {
            n_facts: self.n_facts,
            rows: self
                .rows
                .iter()
                .map(|(q, s)| (q.clone(), s.iter().map(|x| x * c).collect()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub fact: FactId,
    pub score: f64,
}

/// Ordered facts of one question, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub qid: String,
    pub entries: Vec<Scored>,
}

impl Ranking {
    pub fn facts(&self) -> impl Iterator<Item = FactId> + '_ {
        self.entries.iter().map(|e| e.fact)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn score_lexical(
    corpus: &Corpus,
    provider: &VectorProvider,
    method: LexicalMethod,
) -> Result<RelevanceTable> {
    let rows: Vec<(String, Vec<f64>)> = match method {
        LexicalMethod::TfidfCosine => {
            let fact_vecs = crate::textsim::fact_vectors(corpus, provider);
            corpus
                .questions()
                .par_iter()
                .map(|q| {
                    let qa = provider.vectorize(&qa_text(q)?);
                    let row = fact_vecs
                        .iter()
                        .map(|f| cosine(&qa, f))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((q.qid.clone(), row))
                })
                .collect::<Result<_>>()?
        }
        LexicalMethod::Overlap => {
            let fact_tokens: Vec<Vec<String>> = corpus
                .facts()
                .iter()
                .map(|f| distinct_tokens(&f.text))
                .collect();
            corpus
                .questions()
                .par_iter()
                .map(|q| {
                    let qa = distinct_tokens(&qa_text(q)?);
                    let row = fact_tokens.iter().map(|f| overlap(&qa, f)).collect();
                    Ok((q.qid.clone(), row))
                })
                .collect::<Result<_>>()?
        }
    };
    let mut table = RelevanceTable::new(corpus.len());
    for (qid, row) in rows {
        table.insert(qid, row)?;
    }
    Ok(table)
}

fn distinct_tokens(text: &str) -> Vec<String> {
    let mut t: Vec<String> = tokenize(text, true).into_iter().collect();
    t.sort_unstable();
    t.dedup();
    t
}

/// Share of the fact's distinct content tokens that also occur in the
/// question/answer text. Both lists are sorted and deduplicated.
fn overlap(qa: &[String], fact: &[String]) -> f64 {
    if qa.is_empty() || fact.is_empty() {
        return 0.0;
    }
    let shared = fact.iter().filter(|t| qa.binary_search(t).is_ok()).count();
    shared as f64 / fact.len() as f64
}

/// Scores read from a file, with coverage and duplicate warnings.
#[derive(Debug, Clone)]
pub struct LoadedScores {
    pub table: RelevanceTable,
    pub warnings: Vec<String>,
}

/// Reads `qid<TAB>fact_uid<TAB>score` lines (an optional `qid` header line
/// is skipped). Facts missing for a question score one below that
/// question's minimum and therefore rank last.
pub fn load_scores(path: impl AsRef<Path>, corpus: &Corpus) -> Result<LoadedScores> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows: IndexMap<String, Vec<Option<f64>>> = IndexMap::new();
    let mut unknown: Vec<String> = Vec::new();
    let mut warnings = Vec::new();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if line_no == 1 && fields.first().map(|f| f.trim()) == Some("qid") {
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::format(path, line_no, "expected qid, fact_uid and score"));
        }
        let (qid, uid, raw) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        let score: f64 = raw
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| Error::format(path, line_no, format!("bad score {raw:?}")))?;
        let Some(id) = corpus.id(uid) else {
            unknown.push(uid.to_string());
            continue;
        };
        let row = rows
            .entry(qid.to_string())
            .or_insert_with(|| vec![None; corpus.len()]);
        if row[id.index()].replace(score).is_some() {
            warnings.push(format!("{}:{line_no}: duplicate score for ({qid}, {uid}), last wins", path.display()));
        }
    }
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(Error::UnknownFacts(unknown));
    }

    let mut table = RelevanceTable::new(corpus.len());
    for (qid, row) in rows {
        let missing = row.iter().filter(|s| s.is_none()).count();
        let floor = row.iter().flatten().copied().fold(f64::INFINITY, f64::min) - 1.0;
        if missing > 0 {
            warnings.push(format!(
                "question {qid}: {missing} of {} facts have no score and rank last",
                corpus.len()
            ));
        }
        table.insert(qid, row.into_iter().map(|s| s.unwrap_or(floor)).collect())?;
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(LoadedScores { table, warnings })
}

/// Writes the dense table in the format read by [`load_scores`].
pub fn write_scores(table: &RelevanceTable, corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "qid\tfact_uid\tscore").map_err(io)?;
    for (qid, scores) in table.iter() {
        for (fact, score) in corpus.facts().iter().zip(scores) {
            writeln!(out, "{qid}\t{}\t{score}", fact.uid).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Facts by descending score; equal scores in ascending uid order.
pub fn initial_ranking(table: &RelevanceTable, qid: &str) -> Result<Ranking> {
    let scores = table
        .scores(qid)
        .ok_or_else(|| Error::UnknownQuestion(qid.to_string()))?;
    let mut entries: Vec<Scored> = scores
        .iter()
        .enumerate()
        .map(|(i, &score)| Scored {
            fact: FactId(i as u32),
            score,
        })
        .collect();
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.fact.cmp(&b.fact)));
    Ok(Ranking {
        qid: qid.to_string(),
        entries,
    })
}

/// Initial rankings of every question in the table, in table order.
pub fn initial_rankings(table: &RelevanceTable) -> Vec<Ranking> {
    let qids: Vec<&str> = table.qids().collect();
    qids.par_iter()
        .map(|q| initial_ranking(table, q).expect("qid taken from table"))
        .collect()
}

/// Per-question min-max rescale onto `[NORMALIZE_FLOOR, 1]`. Constant rows
/// become all ones.
pub fn normalize(table: &RelevanceTable) -> RelevanceTable {
    let rows = table
        .rows
        .iter()
        .map(|(qid, scores)| {
            let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = max - min;
            let row = if !(range > 0.0) {
                vec![1.0; scores.len()]
            } else {
                scores
                    .iter()
                    .map(|s| NORMALIZE_FLOOR + (1.0 - NORMALIZE_FLOOR) * ((s - min) / range))
                    .collect()
            };
            (qid.clone(), row)
        })
        .collect();
    RelevanceTable {
        n_facts: table.n_facts,
        rows,
    }
}

/// Index of scores by question, convenient for building tables by hand.
pub fn table_from_map(
    corpus: &Corpus,
    scores: &[(&str, HashMap<&str, f64>)],
) -> Result<RelevanceTable> {
    let mut table = RelevanceTable::new(corpus.len());
    for (qid, by_uid) in scores {
        let mut row = vec![f64::NAN; corpus.len()];
        for (uid, s) in by_uid {
            let id = corpus
                .id(uid)
                .ok_or_else(|| Error::UnknownFacts(vec![uid.to_string()]))?;
            row[id.index()] = *s;
        }
        table.insert(*qid, row)?;
    }
    Ok(table)
}
