#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use exregen::corpus::{write_questions, Corpus, ExplanationFact, GoldFact, Question, QuestionColumns, Role};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fact(uid: &str, text: &str) -> (String, ExplanationFact) {
    (
        uid.to_string(),
        ExplanationFact {
            uid: uid.to_string(),
            text: text.to_string(),
            table_name: "synthetic".into(),
        },
    )
}

pub fn question(qid: &str, stem: &str, answer: &str, gold: Vec<GoldFact>) -> Question {
    Question {
        qid: qid.to_string(),
        stem: stem.to_string(),
        choices: [
            ("A".to_string(), "nothing at all".to_string()),
            ("B".to_string(), answer.to_string()),
        ]
        .into(),
        answer_key: "B".into(),
        gold,
    }
}

const ROLES: [Role; 5] = [Role::Central, Role::Grounding, Role::LexGlue, Role::Background, Role::Neg];

fn words(rng: &mut ChaCha8Rng, vocab: usize, n: usize) -> String {
    (0..n)
        .map(|_| format!("w{}", rng.gen_range(0..vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random corpus over a small shared vocabulary. Gold facts share a few
/// words with their question so lexical scores are informative.
pub fn random_corpus(seed: u64, n_questions: usize, n_facts: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = 120;
    let mut facts: BTreeMap<String, ExplanationFact> = (0..n_facts)
        .map(|i| {
            let len = rng.gen_range(3..8);
            fact(&format!("f{i:04}"), &words(&mut rng, vocab, len))
        })
        .collect();
    let uids: Vec<String> = facts.keys().cloned().collect();

    let mut questions = Vec::new();
    for q in 0..n_questions {
        let n_gold = rng.gen_range(1..=6);
        let gold_uids: Vec<&String> = uids.choose_multiple(&mut rng, n_gold).collect();
        let mut stem_words = Vec::new();
        let gold = gold_uids
            .iter()
            .map(|uid| {
                let text = &facts[*uid].text;
                let first = text.split(' ').next().unwrap().to_string();
                stem_words.push(first);
                GoldFact::new(uid.as_str(), ROLES[rng.gen_range(0..ROLES.len())].clone())
            })
            .collect();
        let stem = format!("what is {} {}", stem_words.join(" "), words(&mut rng, vocab, 3));
        let answer = words(&mut rng, vocab, 2);
        questions.push(question(&format!("Q{q:03}"), &stem, &answer, gold));
    }
    // Keep fact texts distinct from each other in case of collisions.
    for (i, f) in facts.values_mut().enumerate() {
        f.text.push_str(&format!(" t{i}"));
    }
    Corpus::new(facts, questions)
}

/// Twenty questions whose gold explanation is a chain: the first fact
/// shares stem words with the question, later facts share a link word with
/// their predecessor and only the answer word with the question.
/// Distractors share the remaining stem words but nothing with the chain.
pub fn multi_hop_corpus() -> Corpus {
    let mut facts = BTreeMap::new();
    let mut questions = Vec::new();
    for t in 0..20 {
        let chain = 2 + t % 4;
        let distractors = 2 + t % 3;
        let (sa, sb, sc, sd) = (format!("s{t}a"), format!("s{t}b"), format!("s{t}c"), format!("s{t}d"));
        let ans = format!("ans{t}");
        let link = |i: usize| format!("link{t}x{i}");

        let mut gold = Vec::new();
        let first = format!("q{t:02}_g1");
        facts.extend([fact(&first, &format!("{sa} {sb} {} {ans}", link(1)))]);
        gold.push(GoldFact::new(first, Role::Central));
        for i in 2..=chain {
            let uid = format!("q{t:02}_g{i}");
            facts.extend([fact(&uid, &format!("{} {} {ans}", link(i - 1), link(i)))]);
            gold.push(GoldFact::new(uid, Role::Grounding));
        }
        for d in 0..distractors {
            let uid = format!("q{t:02}_d{d}");
            facts.extend([fact(&uid, &format!("{sc} {sd} noise{t}x{d}"))]);
        }
        questions.push(question(
            &format!("MH{t:02}"),
            &format!("which {sa} {sb} {sc} {sd}"),
            &ans,
            gold,
        ));
    }
    Corpus::new(facts, questions)
}

/// Writes the corpus as one fact table plus a question file.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> (PathBuf, PathBuf) {
    let facts = dir.join("facts.tsv");
    let mut body = String::from("[SKIP] UID\tTEXT\t[SKIP] COMMENT\n");
    for f in corpus.facts() {
        writeln!(body, "{}\t{}\t", f.uid, f.text).unwrap();
    }
    fs::write(&facts, body).unwrap();
    let questions = dir.join("questions.tsv");
    write_questions(corpus.questions(), &questions, &QuestionColumns::default()).unwrap();
    (facts, questions)
}

/// Scores that favour gold facts with seeded noise, standing in for a
/// trained relevance learner.
pub fn noisy_scores(corpus: &Corpus, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("qid\tfact_uid\tscore\n");
    for q in corpus.questions() {
        let gold = q.gold_uids();
        for f in corpus.facts() {
            let bonus = if gold.contains(f.uid.as_str()) { 0.6 } else { 0.0 };
            let score: f64 = rng.gen::<f64>() + bonus;
            writeln!(out, "{}\t{}\t{}", q.qid, f.uid, score).unwrap();
        }
    }
    out
}

/// All files under `dir` with their contents, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

pub fn run(args: &[&str]) -> i32 {
    let mut full = vec!["exregen"];
    full.extend_from_slice(args);
    exregen::cli::run_args(full)
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
