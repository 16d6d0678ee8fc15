//! Mean average precision over rankings, overall, per explanation role and
//! per gold-explanation length. Also reads and writes prediction files
//! (`qid<TAB>fact_uid`, best first).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::hash::Hash;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use log::warn;

use crate::corpus::{Corpus, FactId, Question, Role};
use crate::error::{Error, Result};
use crate::scorer::{Ranking, Scored};

/// Average precision of `ranked` against `relevant`. Every relevant item
/// must appear in the ranking.
pub fn average_precision<T: Eq + Hash>(ranked: &[T], relevant: &HashSet<T>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::Invalid("average precision of an empty relevant set".into()));
    }
    let mut seen = HashSet::with_capacity(relevant.len());
    let mut sum = 0.0;
    for (pos, item) in ranked.iter().enumerate() {
        if relevant.contains(item) && seen.insert(item) {
            sum += seen.len() as f64 / (pos + 1) as f64;
            if seen.len() == relevant.len() {
                break;
            }
        }
    }
    if seen.len() < relevant.len() {
        return Err(Error::Invalid(format!(
            "{} relevant item(s) missing from the ranking",
            relevant.len() - seen.len()
        )));
    }
    Ok(sum / relevant.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub map_overall: f64,
    pub per_role: BTreeMap<Role, f64>,
    /// Gold size → (question count, MAP).
    pub per_length: BTreeMap<usize, (usize, f64)>,
    pub n_questions: usize,
    /// Ranked questions without gold explanation.
    pub skipped: usize,
    /// Annotated questions of the corpus that have no ranking.
    pub unranked: usize,
}

struct Judged<'a> {
    question: &'a Question,
    ranked: Vec<FactId>,
}

/// Pairs each ranking with its annotated question, in ranking order.
/// Returns the pairs plus the number of rankings of unannotated questions.
fn annotated<'a>(rankings: &[Ranking], corpus: &'a Corpus) -> Result<(Vec<Judged<'a>>, usize)> {
    let by_qid: HashMap<&str, &Question> =
        corpus.questions().iter().map(|q| (q.qid.as_str(), q)).collect();
    let mut out = Vec::new();
    let mut skipped = 0;
    for r in rankings {
        let q = *by_qid
            .get(r.qid.as_str())
            .ok_or_else(|| Error::UnknownQuestion(r.qid.clone()))?;
        if !q.is_annotated() {
            skipped += 1;
            continue;
        }
        out.push(Judged {
            question: q,
            ranked: r.facts().collect(),
        });
    }
    if out.is_empty() {
        return Err(Error::Invalid("no annotated question to evaluate".into()));
    }
    Ok((out, skipped))
}

fn question_ap(corpus: &Corpus, item: &Judged<'_>, role: Option<&Role>) -> Result<Option<f64>> {
    let mut relevant = HashSet::new();
    for g in &item.question.gold {
        if role.map_or(true, |r| *r == g.role) {
            let id = corpus
                .id(&g.uid)
                .ok_or_else(|| Error::UnknownFacts(vec![g.uid.clone()]))?;
            relevant.insert(id);
        }
    }
    if relevant.is_empty() {
        return Ok(None);
    }
    average_precision(&item.ranked, &relevant)
        .map(Some)
        .map_err(|e| Error::Invalid(format!("question {}: {e}", item.question.qid)))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean AP over annotated questions; roles are ignored.
pub fn map_overall(rankings: &[Ranking], corpus: &Corpus) -> Result<f64> {
    let (items, _) = annotated(rankings, corpus)?;
    let aps = items
        .iter()
        .map(|it| question_ap(corpus, it, None).map(|ap| ap.expect("annotated")))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&aps))
}

/// Per role, mean AP over the questions that have gold facts of that role,
/// with only those facts counted as relevant. Roles no question uses are
/// absent.
pub fn map_per_role(rankings: &[Ranking], corpus: &Corpus) -> Result<BTreeMap<Role, f64>> {
    let (items, _) = annotated(rankings, corpus)?;
    let roles: std::collections::BTreeSet<Role> = items
        .iter()
        .flat_map(|it| it.question.gold.iter().map(|g| g.role.clone()))
        .collect();
    let mut out = BTreeMap::new();
    for role in roles {
        let mut aps = Vec::new();
        for it in &items {
            if let Some(ap) = question_ap(corpus, it, Some(&role))? {
                aps.push(ap);
            }
        }
        out.insert(role, mean(&aps));
    }
    Ok(out)
}

/// Questions bucketed by number of distinct gold facts.
pub fn map_by_length(rankings: &[Ranking], corpus: &Corpus) -> Result<BTreeMap<usize, (usize, f64)>> {
    let (items, _) = annotated(rankings, corpus)?;
    let mut buckets: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for it in &items {
        let ap = question_ap(corpus, it, None)?.expect("annotated");
        buckets
            .entry(it.question.gold_uids().len())
            .or_default()
            .push(ap);
    }
    Ok(buckets
        .into_iter()
        .map(|(len, aps)| (len, (aps.len(), mean(&aps))))
        .collect())
}

pub fn evaluate(rankings: &[Ranking], corpus: &Corpus) -> Result<EvalReport> {
    let (items, skipped) = annotated(rankings, corpus)?;
    let ranked: HashSet<&str> = rankings.iter().map(|r| r.qid.as_str()).collect();
    let unranked = corpus
        .questions()
        .iter()
        .filter(|q| q.is_annotated() && !ranked.contains(q.qid.as_str()))
        .count();
    if unranked > 0 {
        warn!("{unranked} annotated question(s) have no ranking and are not evaluated");
    }
    let per_length = map_by_length(rankings, corpus)?;
    Ok(EvalReport {
        map_overall: map_overall(rankings, corpus)?,
        per_role: map_per_role(rankings, corpus)?,
        per_length,
        n_questions: items.len(),
        skipped,
        unranked,
    })
}

impl EvalReport {
    /// `key=value` lines at full precision.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("map_overall={}\n", self.map_overall));
        out.push_str(&format!("n_questions={}\n", self.n_questions));
        out.push_str(&format!("skipped={}\n", self.skipped));
        out.push_str(&format!("unranked={}\n", self.unranked));
        for (role, map) in &self.per_role {
            out.push_str(&format!("role.{role}={map}\n"));
        }
        for (len, (count, map)) in &self.per_length {
            out.push_str(&format!("length.{len}.count={count}\n"));
            out.push_str(&format!("length.{len}.map={map}\n"));
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "questions evaluated  {}", self.n_questions)?;
        writeln!(f, "skipped (no gold)    {}", self.skipped)?;
        if self.unranked > 0 {
            writeln!(f, "unranked             {}", self.unranked)?;
        }
        writeln!(f, "MAP                  {:.4}", self.map_overall)?;
        writeln!(f)?;
        writeln!(f, "{:<14}{:>8}", "role", "MAP")?;
        for (role, map) in &self.per_role {
            writeln!(f, "{:<14}{:>8.4}", role.label(), map)?;
        }
        writeln!(f)?;
        writeln!(f, "{:<10}{:>10}{:>8}", "gold size", "questions", "MAP")?;
        for (len, (count, map)) in &self.per_length {
            writeln!(f, "{len:<10}{count:>10}{map:>8.4}")?;
        }
        Ok(())
    }
}

/// Writes `qid<TAB>fact_uid` lines, questions in the given order, at most
/// `top_m` facts per question.
pub fn write_predictions(
    rankings: &[Ranking],
    corpus: &Corpus,
    path: impl AsRef<Path>,
    top_m: Option<usize>,
) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for r in rankings {
        let limit = top_m.unwrap_or(usize::MAX);
        for fact in r.facts().take(limit) {
            writeln!(out, "{}\t{}", r.qid, corpus.get(fact).uid).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Reads a predictions file back into rankings. Scores are synthetic and
/// only encode the file order.
pub fn read_predictions(path: impl AsRef<Path>, corpus: &Corpus) -> Result<Vec<Ranking>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let known: HashSet<&str> = corpus.questions().iter().map(|q| q.qid.as_str()).collect();
    let mut lists: IndexMap<String, Vec<FactId>> = IndexMap::new();
    let mut unknown = Vec::new();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (qid, uid) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, i + 1, "expected qid<TAB>fact_uid"))?;
        let (qid, uid) = (qid.trim(), uid.trim());
        if !known.contains(qid) {
            return Err(Error::UnknownQuestion(qid.to_string()));
        }
        match corpus.id(uid) {
            Some(id) => lists.entry(qid.to_string()).or_default().push(id),
            None => unknown.push(uid.to_string()),
        }
    }
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(Error::UnknownFacts(unknown));
    }
    Ok(lists
        .into_iter()
        .map(|(qid, facts)| {
            let n = facts.len();
            Ranking {
                qid,
                entries: facts
                    .into_iter()
                    .enumerate()
                    .map(|(i, fact)| Scored {
                        fact,
                        score: (n - i) as f64,
                    })
                    .collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ExplanationFact, GoldFact};
    use proptest::prelude::*;

    fn set(items: &[&'static str]) -> HashSet<&'static str> {
        items.iter().copied().collect()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&["a", "b", "c"], &set(&["a", "b"])).unwrap(), 1.0);
        assert_eq!(average_precision(&["a", "b", "c"], &set(&["b"])).unwrap(), 0.5);
        let ap = average_precision(&["a", "b", "c", "d"], &set(&["a", "c"])).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ap_errors() {
        assert!(average_precision(&["a"], &set(&[])).is_err());
        assert!(average_precision(&["a", "b"], &set(&["z"])).is_err());
    }

    fn corpus_with(questions: Vec<(&str, Vec<(&str, Role)>)>, n_facts: usize) -> Corpus {
        let facts = (0..n_facts)
            .map(|i| {
                let uid = format!("f{i}");
                (
                    uid.clone(),
                    ExplanationFact {
                        uid,
                        text: format!("text {i}"),
                        table_name: "t".into(),
                    },
                )
            })
            .collect();
        let questions = questions
            .into_iter()
            .map(|(qid, gold)| Question {
                qid: qid.into(),
                stem: "s".into(),
                choices: [("A".to_string(), "x".to_string())].into(),
                answer_key: "A".into(),
                gold: gold.into_iter().map(|(u, r)| GoldFact::new(u, r)).collect(),
            })
            .collect();
        Corpus::new(facts, questions)
    }

    fn ranking(corpus: &Corpus, qid: &str, uids: &[&str]) -> Ranking {
        Ranking {
            qid: qid.into(),
            entries: uids
                .iter()
                .enumerate()
                .map(|(i, u)| Scored {
                    fact: corpus.id(u).unwrap(),
                    score: -(i as f64),
                })
                .collect(),
        }
    }

    #[test]
    fn overall_map_is_mean_ap() {
        let c = corpus_with(
            vec![("q1", vec![("f1", Role::Central)]), ("q2", vec![("f0", Role::Central)]), ("q3", vec![])],
            3,
        );
        let rs = vec![
            ranking(&c, "q1", &["f0", "f1", "f2"]),
            ranking(&c, "q2", &["f0", "f1", "f2"]),
            ranking(&c, "q3", &["f0", "f1", "f2"]),
        ];
        assert_eq!(map_overall(&rs, &c).unwrap(), 0.75);
        let report = evaluate(&rs, &c).unwrap();
        assert_eq!(report.n_questions, 2);
        assert_eq!(report.skipped, 1);
        assert!(map_overall(&rs[2..], &c).is_err());
    }

    #[test]
    fn per_role_skips_questions_without_the_role() {
        let c = corpus_with(vec![("q1", vec![("f1", Role::Central)])], 3);
        let rs = vec![ranking(&c, "q1", &["f1", "f0", "f2"])];
        let per_role = map_per_role(&rs, &c).unwrap();
        assert_eq!(per_role.get(&Role::Central), Some(&1.0));
        assert!(!per_role.contains_key(&Role::Grounding));
    }

    #[test]
    fn per_role_two_questions() {
        // q1: ranking f0 f1 f2 f3, CENTRAL {f1}, GROUNDING {f2, f3}
        // q2: ranking f3 f2 f1 f0, CENTRAL {f0}, LEXGLUE {f3}
        let c = corpus_with(
            vec![
                ("q1", vec![("f1", Role::Central), ("f2", Role::Grounding), ("f3", Role::Grounding)]),
                ("q2", vec![("f0", Role::Central), ("f3", Role::LexGlue)]),
            ],
            4,
        );
        let rs = vec![
            ranking(&c, "q1", &["f0", "f1", "f2", "f3"]),
            ranking(&c, "q2", &["f3", "f2", "f1", "f0"]),
        ];
        let m = map_per_role(&rs, &c).unwrap();
        // CENTRAL: q1 AP 1/2, q2 AP 1/4 -> 3/8
        assert!((m[&Role::Central] - 0.375).abs() < 1e-15);
        // GROUNDING: q1 only, (1/3 + 2/4)/2 = 5/12
        assert!((m[&Role::Grounding] - 5.0 / 12.0).abs() < 1e-15);
        assert_eq!(m[&Role::LexGlue], 1.0);
    }

    #[test]
    fn length_buckets() {
        let c = corpus_with(
            vec![
                ("q1", vec![("f0", Role::Central)]),
                ("q2", vec![("f1", Role::Central)]),
                ("q3", vec![("f0", Role::Central), ("f2", Role::Grounding)]),
            ],
            3,
        );
        let rs = vec![
            ranking(&c, "q1", &["f0", "f1", "f2"]),
            ranking(&c, "q2", &["f0", "f1", "f2"]),
            ranking(&c, "q3", &["f2", "f1", "f0"]),
        ];
        let b = map_by_length(&rs, &c).unwrap();
        assert_eq!(b[&1], (2, 0.75));
        // q3: f2 at 1, f0 at 3 -> (1 + 2/3)/2
        assert_eq!(b[&2].0, 1);
        assert!((b[&2].1 - 5.0 / 6.0).abs() < 1e-15);
        let overall = map_overall(&rs, &c).unwrap();
        let recombined: f64 = b.values().map(|(n, m)| *n as f64 * m).sum::<f64>() / 3.0;
        assert!((overall - recombined).abs() < 1e-9);
    }

    #[test]
    fn missing_gold_in_ranking_is_an_error() {
        let c = corpus_with(vec![("q1", vec![("f2", Role::Central)])], 3);
        let rs = vec![ranking(&c, "q1", &["f0", "f1"])];
        assert!(map_overall(&rs, &c).is_err());
    }

    #[test]
    fn predictions_round_trip() {
        let c = corpus_with(vec![("q1", vec![("f1", Role::Central)]), ("q2", vec![("f2", Role::Central)])], 3);
        let rs = vec![
            ranking(&c, "q1", &["f2", "f1", "f0"]),
            ranking(&c, "q2", &["f0", "f1", "f2"]),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.tsv");
        write_predictions(&rs, &c, &p, None).unwrap();
        let body = std::fs::read_to_string(&p).unwrap();
        assert_eq!(body.lines().count(), 6);
        assert!(body.starts_with("q1\tf2\nq1\tf1\nq1\tf0\n"));
        let back = read_predictions(&p, &c).unwrap();
        assert_eq!(map_overall(&back, &c).unwrap(), map_overall(&rs, &c).unwrap());

        write_predictions(&rs, &c, &p, Some(2)).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 4);

        std::fs::write(&p, "qx\tf0\n").unwrap();
        assert!(matches!(read_predictions(&p, &c), Err(Error::UnknownQuestion(_))));
    }

    #[test]
    fn report_formats() {
        let c = corpus_with(vec![("q1", vec![("f1", Role::Central), ("f0", Role::Background)])], 3);
        let rs = vec![ranking(&c, "q1", &["f0", "f1", "f2"])];
        let report = evaluate(&rs, &c).unwrap();
        let kv = report.to_key_values();
        assert!(kv.contains("map_overall=1\n"));
        assert!(kv.contains("role.BACKGROUND=1\n"));
        assert!(kv.contains("role.CENTRAL=0.5\n"));
        assert!(kv.contains("length.2.count=1\n"));
        assert!(report.to_string().contains("BACKGROUND"));
    }

    fn brute_ap(ranked: &[usize], relevant: &HashSet<usize>) -> f64 {
        let mut total = 0.0;
        for p in 0..ranked.len() {
            if relevant.contains(&ranked[p]) {
                let hits = ranked[..=p].iter().filter(|x| relevant.contains(x)).count();
                total += hits as f64 / (p + 1) as f64;
            }
        }
        total / relevant.len() as f64
    }

    fn instance() -> impl Strategy<Value = (Vec<usize>, HashSet<usize>)> {
        (2usize..12).prop_flat_map(|n| {
            (
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
                proptest::collection::hash_set(0..n, 1..=n.min(5)),
            )
        })
    }

    proptest! {
        #[test]
        fn ap_properties((ranked, relevant) in instance()) {
            let ap = average_precision(&ranked, &relevant).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
            prop_assert!((ap - brute_ap(&ranked, &relevant)).abs() < 1e-12);

            let k = relevant.len();
            let all_first = ranked[..k].iter().all(|x| relevant.contains(x));
            prop_assert_eq!(ap == 1.0, all_first);

            // Moving a relevant item one place up past an irrelevant one.
            for p in 1..ranked.len() {
                if relevant.contains(&ranked[p]) && !relevant.contains(&ranked[p - 1]) {
                    let mut swapped = ranked.clone();
                    swapped.swap(p, p - 1);
                    prop_assert!(average_precision(&swapped, &relevant).unwrap() >= ap);
                }
            }
        }

        #[test]
        fn single_role_per_role_equals_overall(perm in Just((0..8usize).collect::<Vec<_>>()).prop_shuffle(), gold in proptest::collection::btree_set(0..8usize, 1..5)) {
            let uids: Vec<String> = (0..8).map(|i| format!("f{i}")).collect();
            let c = corpus_with(vec![("q", gold.iter().map(|&g| (uids[g].as_str(), Role::Grounding)).collect())], 8);
            let order: Vec<&str> = perm.iter().map(|&i| uids[i].as_str()).collect();
            let rs = vec![ranking(&c, "q", &order)];
            prop_assert_eq!(map_per_role(&rs, &c).unwrap()[&Role::Grounding], map_overall(&rs, &c).unwrap());
        }
    }
}
