//! Explanation-fact tables and annotated questions.
//!
//! Fact tables are tab-separated with a header row. Exactly one header must
//! contain `UID`; headers containing `SKIP` are metadata and are left out of
//! the fact text. Every other nonempty cell is joined with single spaces.
//!
//! Question files are tab-separated with configurable column names. The
//! combined question text carries the answer choices as `(A) ... (B) ...`
//! markers and the explanation column holds `uid|ROLE` tokens.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};

/// Gold explanations longer than this are flagged by [`validate`].
pub const MAX_GOLD: usize = 16;

const CHOICE_KEYS: [&str; 5] = ["A", "B", "C", "D", "E"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplanationFact {
    pub uid: String,
    pub text: String,
    pub table_name: String,
}

/// Explanation role of a gold fact.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Central,
    Grounding,
    LexGlue,
    Background,
    Neg,
    Other(String),
}

impl Role {
    /// Case-insensitive; spaces and underscores are ignored, so
    /// `LEXICAL GLUE` and `lex_glue` both map to [`Role::LexGlue`].
    /// Unknown labels are kept verbatim as [`Role::Other`].
    pub fn parse(label: &str) -> Role {
        let norm: String = label
            .chars()
            .filter(|c| *c != ' ' && *c != '_')
            .collect::<String>()
            .to_ascii_uppercase();
        match norm.as_str() {
            "CENTRAL" => Role::Central,
            "GROUNDING" => Role::Grounding,
            "LEXGLUE" | "LEXICALGLUE" => Role::LexGlue,
            "BACKGROUND" => Role::Background,
            "NEG" => Role::Neg,
            _ => Role::Other(label.to_string()),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Role::Central => "CENTRAL",
            Role::Grounding => "GROUNDING",
            Role::LexGlue => "LEXGLUE",
            Role::Background => "BACKGROUND",
            Role::Neg => "NEG",
            Role::Other(label) => label,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldFact {
    pub uid: String,
    pub role: Role,
}

impl GoldFact {
    pub fn new(uid: impl Into<String>, role: Role) -> Self {
        GoldFact {
            uid: uid.into(),
            role,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub qid: String,
    pub stem: String,
    pub choices: BTreeMap<String, String>,
    pub answer_key: String,
    /// In annotation order. Order carries no meaning downstream.
    pub gold: Vec<GoldFact>,
}

impl Question {
    pub fn is_annotated(&self) -> bool {
        !self.gold.is_empty()
    }

    /// Distinct gold uids.
    pub fn gold_uids(&self) -> BTreeSet<&str> {
        self.gold.iter().map(|g| g.uid.as_str()).collect()
    }

    /// Gold facts with duplicate uids removed, first occurrence kept.
    pub fn distinct_gold(&self) -> Vec<&GoldFact> {
        let mut seen = HashSet::new();
        self.gold.iter().filter(|g| seen.insert(g.uid.as_str())).collect()
    }
}

/// Text of the correct answer choice.
pub fn answer_text(q: &Question) -> Result<&str> {
    q.choices
        .get(&q.answer_key)
        .map(String::as_str)
        .ok_or_else(|| Error::UnresolvedAnswer {
            qid: q.qid.clone(),
            key: q.answer_key.clone(),
        })
}

/// Index of a fact inside a [`Corpus`]. Facts are stored in uid order, so
/// comparing ids compares uids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FactId(pub u32);

impl FactId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Immutable fact collection plus questions.
#[derive(Debug, Clone)]
pub struct Corpus {
    facts: Vec<ExplanationFact>,
    by_uid: HashMap<String, FactId>,
    questions: Vec<Question>,
}

impl Corpus {
    pub fn new(facts: BTreeMap<String, ExplanationFact>, questions: Vec<Question>) -> Self {
        let facts: Vec<ExplanationFact> = facts.into_values().collect();
        let by_uid = facts
            .iter()
            .enumerate()
            .map(|(i, f)| (f.uid.clone(), FactId(i as u32)))
            .collect();
        Corpus {
            facts,
            by_uid,
            questions,
        }
    }

    /// Facts in ascending uid order.
    pub fn facts(&self) -> &[ExplanationFact] {
        &self.facts
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn fact(&self, uid: &str) -> Option<&ExplanationFact> {
        self.id(uid).map(|id| &self.facts[id.index()])
    }

    pub fn id(&self, uid: &str) -> Option<FactId> {
        self.by_uid.get(uid).copied()
    }

    pub fn get(&self, id: FactId) -> &ExplanationFact {
        &self.facts[id.index()]
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn question(&self, qid: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.qid == qid)
    }

    /// Resolves a question's distinct gold uids to fact ids.
    pub fn gold_ids(&self, q: &Question) -> Result<Vec<FactId>> {
        let mut missing = Vec::new();
        let mut ids = Vec::new();
        for g in q.distinct_gold() {
            match self.id(&g.uid) {
                Some(id) => ids.push(id),
                None => missing.push(g.uid.clone()),
            }
        }
        if missing.is_empty() {
            Ok(ids)
        } else {
            Err(Error::UnknownFacts(missing))
        }
    }
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .has_headers(true)
        .from_reader(file))
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::format(path, line, format!("{other:?}")),
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Loads fact tables. The table name of each fact is its file stem.
pub fn load_facts<P: AsRef<Path>>(paths: &[P]) -> Result<BTreeMap<String, ExplanationFact>> {
    let mut facts = BTreeMap::new();
    let mut origin: HashMap<String, PathBuf> = HashMap::new();

    for path in paths {
        let path = path.as_ref();
        let mut rdr = tsv_reader(path)?;
        let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();

        let uid_cols: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.contains("UID"))
            .map(|(i, _)| i)
            .collect();
        let uid_col = match uid_cols.as_slice() {
            [] => return Err(Error::MissingUidColumn(path.to_path_buf())),
            [col] => *col,
            _ => return Err(Error::AmbiguousUidColumn(path.to_path_buf())),
        };
        let text_cols: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(i, h)| *i != uid_col && !h.contains("SKIP"))
            .map(|(i, _)| i)
            .collect();
        let table_name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();

        for record in rdr.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let uid = record.get(uid_col).unwrap_or("").trim().to_string();
            let text = text_cols
                .iter()
                .filter_map(|&i| record.get(i))
                .map(normalize_ws)
                .filter(|cell| !cell.is_empty())
                .collect::<Vec<_>>()
                .join(" ");

            if uid.is_empty() {
                if !text.is_empty() {
                    warn!("{}:{line}: row without uid skipped", path.display());
                }
                continue;
            }
            if text.is_empty() {
                warn!("{}:{line}: fact {uid} has no text, skipped", path.display());
                continue;
            }
            if let Some(first) = origin.get(&uid) {
                return Err(Error::DuplicateUid {
                    uid,
                    first: first.clone(),
                    second: path.to_path_buf(),
                });
            }
            origin.insert(uid.clone(), path.to_path_buf());
            facts.insert(
                uid.clone(),
                ExplanationFact {
                    uid,
                    text,
                    table_name: table_name.clone(),
                },
            );
        }
    }
    Ok(facts)
}

/// Parses `uid|ROLE` tokens separated by whitespace.
pub fn parse_explanation(cell: &str) -> Result<Vec<GoldFact>> {
    cell.split_whitespace()
        .map(|token| match token.split_once('|') {
            Some((uid, role)) if !uid.is_empty() && !role.is_empty() => {
                Ok(GoldFact::new(uid, Role::parse(role)))
            }
            _ => Err(Error::ExplanationToken(token.to_string())),
        })
        .collect()
}

/// Splits `stem (A) x (B) y ...` into the stem and its choices. Returns
/// `None` when the markers are missing, out of sequence or enclose an empty
/// choice.
pub fn split_choices(text: &str) -> Option<(String, BTreeMap<String, String>)> {
    let mut marks: Vec<(&str, usize, usize)> = Vec::new();
    let mut from = 0;
    for key in CHOICE_KEYS {
        let pat = format!("({key})");
        match text[from..].find(&pat) {
            Some(p) => {
                let start = from + p;
                from = start + pat.len();
                marks.push((key, start, from));
            }
            None => break,
        }
    }
    if marks.is_empty() {
        return None;
    }
    let rest = &text[from..];
    if CHOICE_KEYS[marks.len()..]
        .iter()
        .any(|key| rest.contains(&format!("({key})")))
    {
        return None;
    }

    let stem = text[..marks[0].1].trim().to_string();
    let mut choices = BTreeMap::new();
    for (i, &(key, _, end)) in marks.iter().enumerate() {
        let stop = marks.get(i + 1).map_or(text.len(), |m| m.1);
        let choice = text[end..stop].trim();
        if choice.is_empty() {
            return None;
        }
        choices.insert(key.to_string(), choice.to_string());
    }
    Some((stem, choices))
}

/// Column names of a question file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionColumns {
    pub qid: String,
    pub text: String,
    pub answer_key: String,
    pub explanation: String,
}

impl Default for QuestionColumns {
    fn default() -> Self {
        QuestionColumns {
            qid: "QuestionID".into(),
            text: "question".into(),
            answer_key: "AnswerKey".into(),
            explanation: "explanation".into(),
        }
    }
}

/// Questions that loaded cleanly plus every row-level problem found.
#[derive(Debug, Clone, Default)]
pub struct QuestionSet {
    pub questions: Vec<Question>,
    pub report: ValidationReport,
}

pub fn load_questions(path: impl AsRef<Path>, columns: &QuestionColumns) -> Result<QuestionSet> {
    let path = path.as_ref();
    let mut rdr = tsv_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::format(path, 1, format!("missing column {name:?}")))
    };
    let qid_col = column(&columns.qid)?;
    let text_col = column(&columns.text)?;
    let key_col = column(&columns.answer_key)?;
    let expl_col = column(&columns.explanation)?;

    let mut set = QuestionSet::default();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let cell = |i: usize| record.get(i).unwrap_or("").trim();
        let qid = cell(qid_col).to_string();
        if qid.is_empty() {
            continue;
        }
        let text = cell(text_col);
        let answer_key = cell(key_col).to_string();

        let gold = match parse_explanation(cell(expl_col)) {
            Ok(gold) => gold,
            Err(Error::ExplanationToken(token)) => {
                set.report.push(Issue::new(&qid, IssueKind::BadExplanationToken(token)));
                continue;
            }
            Err(e) => return Err(e),
        };

        let (stem, choices) = match split_choices(text) {
            Some(split) => split,
            None => {
                warn!("{}: question {qid}: malformed choice markers", path.display());
                set.report.push(Issue::new(&qid, IssueKind::MalformedChoices));
                (text.to_string(), BTreeMap::new())
            }
        };
        if !choices.contains_key(&answer_key) {
            set.report
                .push(Issue::new(&qid, IssueKind::UnresolvedAnswer(answer_key)));
            continue;
        }
        set.questions.push(Question {
            qid,
            stem,
            choices,
            answer_key,
            gold,
        });
    }
    Ok(set)
}

/// Writes questions in the format read by [`load_questions`] with the
/// given column names.
pub fn write_questions(
    questions: &[Question],
    path: impl AsRef<Path>,
    columns: &QuestionColumns,
) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(
        out,
        "{}\t{}\t{}\t{}",
        columns.qid, columns.text, columns.answer_key, columns.explanation
    )
    .map_err(io)?;
    for q in questions {
        let mut text = q.stem.clone();
        for (key, choice) in &q.choices {
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(&format!("({key}) {choice}"));
        }
        let explanation = q
            .gold
            .iter()
            .map(|g| format!("{}|{}", g.uid, g.role))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(out, "{}\t{}\t{}\t{}", q.qid, text, q.answer_key, explanation).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IssueKind {
    DanglingGold(String),
    DuplicateGold(String),
    DuplicateQuestion,
    EmptyGold,
    GoldSize(usize),
    UnresolvedAnswer(String),
    MalformedChoices,
    BadExplanationToken(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub qid: String,
    pub kind: IssueKind,
}

impl Issue {
    pub fn new(qid: &str, kind: IssueKind) -> Self {
        Issue {
            qid: qid.to_string(),
            kind,
        }
    }

    /// Hard issues make the corpus unusable for evaluation.
    pub fn is_hard(&self) -> bool {
        matches!(
            self.kind,
            IssueKind::DanglingGold(_)
                | IssueKind::DuplicateQuestion
                | IssueKind::UnresolvedAnswer(_)
                | IssueKind::BadExplanationToken(_)
        )
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = if self.is_hard() { "error" } else { "warning" };
        write!(f, "{level}\t{}\t", self.qid)?;
        match &self.kind {
            IssueKind::DanglingGold(uid) => write!(f, "dangling gold uid {uid}"),
            IssueKind::DuplicateGold(uid) => write!(f, "gold uid {uid} listed more than once"),
            IssueKind::DuplicateQuestion => write!(f, "duplicate question id"),
            IssueKind::EmptyGold => write!(f, "no gold explanation (excluded from evaluation)"),
            IssueKind::GoldSize(n) => write!(f, "gold explanation has {n} facts (expected 1..={MAX_GOLD})"),
            IssueKind::UnresolvedAnswer(key) => write!(f, "answer key {key:?} not among choices"),
            IssueKind::MalformedChoices => write!(f, "malformed choice markers"),
            IssueKind::BadExplanationToken(t) => write!(f, "bad explanation token {t:?}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn push(&mut self, issue: Issue) {
        self.issues.push(issue);
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.issues.extend(other.issues);
    }

    pub fn hard_issues(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.is_hard())
    }

    pub fn is_usable(&self) -> bool {
        self.hard_issues().next().is_none()
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Checks gold references and gold sizes. Never fails.
pub fn validate(corpus: &Corpus) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen_qids = HashSet::new();
    for q in corpus.questions() {
        if !seen_qids.insert(q.qid.as_str()) {
            report.push(Issue::new(&q.qid, IssueKind::DuplicateQuestion));
        }
        if q.gold.is_empty() {
            report.push(Issue::new(&q.qid, IssueKind::EmptyGold));
            continue;
        }
        if q.gold.len() > MAX_GOLD {
            report.push(Issue::new(&q.qid, IssueKind::GoldSize(q.gold.len())));
        }
        let mut seen = HashSet::new();
        for g in &q.gold {
            if !seen.insert(g.uid.as_str()) {
                report.push(Issue::new(&q.qid, IssueKind::DuplicateGold(g.uid.clone())));
            } else if corpus.fact(&g.uid).is_none() {
                report.push(Issue::new(&q.qid, IssueKind::DanglingGold(g.uid.clone())));
            }
        }
    }
    report
}
