//! Training data for relevance learners.
//!
//! For every gold fact of a question the `k` most similar non-gold facts
//! become negatives and the gold fact is repeated `k` times, so each dataset
//! is class balanced. Context datasets additionally prefix random subsets
//! of the other gold facts; contexts only ever appear in training files.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use itertools::Itertools;
use log::{info, warn};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, FactId, Question, Role};
use crate::error::{Error, Result};
use crate::textsim::{cosine, qa_text, SentenceVector};

pub const CONTEXT_SEPARATOR: &str = " [SEP] ";

const HEADER: &str = "qid\tquestion_text\tcontext\tcandidate_text\tlabel_or_target\trole\tcandidate_uid\tcontext_uids";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification,
    Regression,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepConfig {
    /// Negatives per gold fact, and copies of each positive.
    pub k: usize,
    /// Context subsets sampled per question and context size.
    pub m: usize,
    pub seed: u64,
    pub with_context: bool,
    pub task: Task,
    /// Regression target for BACKGROUND, NEG and unknown roles.
    pub other_role_target: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            k: 7,
            m: 3,
            seed: 42,
            with_context: false,
            task: Task::Classification,
            other_role_target: 4.0,
        }
    }
}

impl PrepConfig {
    pub fn check(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 {
            return Err(Error::Invalid("k and m must be at least 1".into()));
        }
        if !self.other_role_target.is_finite() || self.other_role_target <= 0.0 {
            return Err(Error::Invalid("other_role_target must be positive".into()));
        }
        Ok(())
    }
}

/// Regression target of a gold fact.
pub fn role_target(role: &Role, other: f64) -> f64 {
    match role {
        Role::Central => 6.0,
        Role::Grounding => 5.0,
        Role::LexGlue => 4.0,
        Role::Background | Role::Neg | Role::Other(_) => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub qid: String,
    pub question_text: String,
    pub context: Vec<String>,
    pub candidate_text: String,
    /// Class label (0 or 1) or regression target.
    pub value: f64,
    /// Role of the candidate; `None` for negatives.
    pub role: Option<Role>,
    pub candidate_uid: String,
    pub context_uids: Vec<String>,
}

impl TrainingExample {
    pub fn is_positive(&self) -> bool {
        self.value > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Negatives {
    pub facts: Vec<FactId>,
    pub requested: usize,
}

impl Negatives {
    pub fn is_short(&self) -> bool {
        self.facts.len() < self.requested
    }
}

/// The `k` non-gold facts most similar to `gold_uid`, most similar first,
/// equal similarity in uid order.
pub fn sample_negatives(
    corpus: &Corpus,
    fact_vectors: &[SentenceVector],
    question: &Question,
    gold_uid: &str,
    k: usize,
) -> Result<Negatives> {
    let gold_id = corpus
        .id(gold_uid)
        .ok_or_else(|| Error::UnknownFacts(vec![gold_uid.to_string()]))?;
    let gold: HashSet<FactId> = question
        .gold
        .iter()
        .filter_map(|g| corpus.id(&g.uid))
        .collect();
    let target = &fact_vectors[gold_id.index()];

    let mut scored: Vec<(f64, FactId)> = Vec::with_capacity(corpus.len());
    for i in 0..corpus.len() {
        let id = FactId(i as u32);
        if !gold.contains(&id) {
            scored.push((cosine(target, &fact_vectors[i])?, id));
        }
    }
    let order = |a: &(f64, FactId), b: &(f64, FactId)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if scored.len() > k {
        scored.select_nth_unstable_by(k, order);
        scored.truncate(k);
    }
    scored.sort_by(order);

    if scored.len() < k {
        warn!(
            "question {}: only {} non-gold facts available for {gold_uid} (k = {k})",
            question.qid,
            scored.len()
        );
    }
    Ok(Negatives {
        facts: scored.into_iter().map(|(_, id)| id).collect(),
        requested: k,
    })
}

fn question_rng(seed: u64, qid: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(qid.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

fn binomial(n: usize, r: usize) -> u128 {
    (0..r as u128).fold(1u128, |acc, i| acc.saturating_mul(n as u128 - i) / (i + 1))
}

/// Up to `m` distinct size-`size` subsets of `0..n`, each sorted. All
/// subsets are returned when there are at most `m`.
fn context_subsets(rng: &mut ChaCha8Rng, n: usize, size: usize, m: usize) -> Vec<Vec<usize>> {
    if binomial(n, size) <= m as u128 {
        return (0..n).combinations(size).collect();
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let mut subset = index::sample(rng, n, size).into_vec();
        subset.sort_unstable();
        if seen.insert(subset.clone()) {
            out.push(subset);
        }
    }
    out
}

fn question_examples(
    corpus: &Corpus,
    fact_vectors: &[SentenceVector],
    cfg: &PrepConfig,
    q: &Question,
) -> Result<Vec<TrainingExample>> {
    let gold = q.distinct_gold();
    if let Err(Error::UnknownFacts(missing)) = corpus.gold_ids(q) {
        return Err(Error::Invalid(format!(
            "question {}: gold fact(s) not in corpus: {}",
            q.qid,
            missing.join(", ")
        )));
    }
    let question_text = qa_text(q)?;
    let negatives = gold
        .iter()
        .map(|g| sample_negatives(corpus, fact_vectors, q, &g.uid, cfg.k))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    let mut emit = |gold_index: usize, context: &[usize]| {
        let g = gold[gold_index];
        let negs = &negatives[gold_index];
        let context_text: Vec<String> = context
            .iter()
            .map(|&c| corpus.fact(&gold[c].uid).expect("checked").text.clone())
            .collect();
        let context_uids: Vec<String> = context.iter().map(|&c| gold[c].uid.clone()).collect();
        let positive_value = match cfg.task {
            Task::Classification => 1.0,
            Task::Regression => role_target(&g.role, cfg.other_role_target),
        };
        let candidate = corpus.fact(&g.uid).expect("checked");
        // Copies of the positive match the negatives actually found.
        for _ in 0..negs.facts.len() {
            out.push(TrainingExample {
                qid: q.qid.clone(),
                question_text: question_text.clone(),
                context: context_text.clone(),
                candidate_text: candidate.text.clone(),
                value: positive_value,
                role: Some(g.role.clone()),
                candidate_uid: g.uid.clone(),
                context_uids: context_uids.clone(),
            });
        }
        for &neg in &negs.facts {
            let fact = corpus.get(neg);
            out.push(TrainingExample {
                qid: q.qid.clone(),
                question_text: question_text.clone(),
                context: context_text.clone(),
                candidate_text: fact.text.clone(),
                value: 0.0,
                role: None,
                candidate_uid: fact.uid.clone(),
                context_uids: context_uids.clone(),
            });
        }
    };

    if !cfg.with_context {
        for i in 0..gold.len() {
            emit(i, &[]);
        }
        return Ok(out);
    }

    if gold.len() < 2 {
        info!("question {}: single gold fact, no context examples", q.qid);
        return Ok(out);
    }
    let mut rng = question_rng(cfg.seed, &q.qid);
    for size in 1..gold.len() {
        for subset in context_subsets(&mut rng, gold.len(), size, cfg.m) {
            for i in (0..gold.len()).filter(|i| !subset.contains(i)) {
                emit(i, &subset);
            }
        }
    }
    Ok(out)
}

/// Builds one dataset over the annotated questions, in question order.
pub fn build_dataset(
    corpus: &Corpus,
    fact_vectors: &[SentenceVector],
    cfg: &PrepConfig,
) -> Result<Vec<TrainingExample>> {
    cfg.check()?;
    if cfg.task == Task::Regression {
        let unusual = corpus
            .questions()
            .iter()
            .flat_map(|q| &q.gold)
            .filter(|g| matches!(g.role, Role::Background | Role::Neg | Role::Other(_)))
            .count();
        if unusual > 0 {
            warn!(
                "{unusual} gold facts have roles without a dedicated target; using {}",
                cfg.other_role_target
            );
        }
    }
    let per_question = corpus
        .questions()
        .par_iter()
        .filter(|q| q.is_annotated())
        .map(|q| question_examples(corpus, fact_vectors, cfg, q))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_question.into_iter().flatten().collect())
}

fn clean_field(s: &str, what: &str, qid: &str) -> String {
    if s.contains(['\t', '\n', '\r']) {
        warn!("question {qid}: {what} contains tabs or newlines, replaced by spaces");
        s.replace(['\t', '\n', '\r'], " ")
    } else {
        s.to_string()
    }
}

pub fn write_dataset(examples: &[TrainingExample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "{HEADER}").map_err(io)?;
    for ex in examples {
        let context = ex
            .context
            .iter()
            .map(|c| clean_field(c, "context", &ex.qid))
            .join(CONTEXT_SEPARATOR);
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            ex.qid,
            clean_field(&ex.question_text, "question text", &ex.qid),
            context,
            clean_field(&ex.candidate_text, "candidate text", &ex.qid),
            ex.value,
            ex.role.as_ref().map_or("NONE", Role::label),
            ex.candidate_uid,
            ex.context_uids.join(" "),
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<TrainingExample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line != HEADER {
                return Err(Error::format(path, 1, "unexpected dataset header"));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(Error::format(path, i + 1, format!("expected 8 fields, found {}", f.len())));
        }
        let split = |s: &str, sep: &str| -> Vec<String> {
            if s.is_empty() {
                Vec::new()
            } else {
                s.split(sep).map(str::to_string).collect()
            }
        };
        out.push(TrainingExample {
            qid: f[0].to_string(),
            question_text: f[1].to_string(),
            context: split(f[2], CONTEXT_SEPARATOR),
            candidate_text: f[3].to_string(),
            value: f[4]
                .parse()
                .map_err(|_| Error::format(path, i + 1, format!("bad label {:?}", f[4])))?,
            role: (f[5] != "NONE").then(|| Role::parse(f[5])),
            candidate_uid: f[6].to_string(),
            context_uids: split(f[7], " "),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub total: usize,
    pub positives: usize,
    pub negatives: usize,
    pub by_value: BTreeMap<String, usize>,
    pub by_role: BTreeMap<String, usize>,
    pub per_question: BTreeMap<String, usize>,
}

impl DatasetStats {
    /// Positives per negative; 0 for an empty dataset.
    pub fn balance(&self) -> f64 {
        if self.negatives == 0 {
            0.0
        } else {
            self.positives as f64 / self.negatives as f64
        }
    }
}

pub fn dataset_stats(examples: &[TrainingExample]) -> DatasetStats {
    let mut stats = DatasetStats {
        total: examples.len(),
        positives: 0,
        negatives: 0,
        by_value: BTreeMap::new(),
        by_role: BTreeMap::new(),
        per_question: BTreeMap::new(),
    };
    for ex in examples {
        if ex.is_positive() {
            stats.positives += 1;
        } else {
            stats.negatives += 1;
        }
        *stats.by_value.entry(ex.value.to_string()).or_default() += 1;
        let role = ex.role.as_ref().map_or("NONE", Role::label).to_string();
        *stats.by_role.entry(role).or_default() += 1;
        *stats.per_question.entry(ex.qid.clone()).or_default() += 1;
    }
    stats
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "total={}", self.total)?;
        writeln!(f, "positives={}", self.positives)?;
        writeln!(f, "negatives={}", self.negatives)?;
        writeln!(f, "balance={}", self.balance())?;
        writeln!(f, "questions={}", self.per_question.len())?;
        for (value, n) in &self.by_value {
            writeln!(f, "value.{value}={n}")?;
        }
        for (role, n) in &self.by_role {
            writeln!(f, "role.{role}={n}")?;
        }
        Ok(())
    }
}
