//! Tokenization, sentence vectors and cosine similarity.
//!
//! Two vector backends share one interface: TF-IDF built over a text
//! collection (the default, fully self-contained) and averaged dense word
//! vectors loaded from a word2vec-style text file.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::{answer_text, Corpus, Question};
use crate::error::{Error, Result};

/// Fixed English stop-word list used when building TF-IDF vectors.
pub const STOP_WORDS: &[&str] = &[
    "a", "about", "an", "and", "are", "as", "at", "be", "by", "can", "do", "does", "for", "from",
    "has", "have", "how", "if", "in", "into", "is", "it", "its", "of", "on", "or", "that", "the",
    "their", "there", "these", "they", "this", "to", "was", "were", "what", "when", "where",
    "which", "while", "who", "will", "with",
];

pub fn is_stop_word(token: &str) -> bool {
    STOP_WORDS.contains(&token)
}

/// Lowercase alphanumeric tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenList(Vec<String>);

impl TokenList {
    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }
}

impl IntoIterator for TokenList {
    type Item = String;
    type IntoIter = std::vec::IntoIter<String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

/// Splits on every non-alphanumeric character (so `;` separates tokens)
/// and lowercases. Stop words are dropped when `drop_stop_words` is set.
pub fn tokenize(text: &str, drop_stop_words: bool) -> TokenList {
    TokenList(
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .filter(|t| !(drop_stop_words && is_stop_word(t)))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    /// (term id, weight), ascending term id.
    Sparse(Vec<(u32, f64)>),
    Dense(Vec<f64>),
}

/// Sparse or dense sentence vector with its cached Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceVector {
    repr: Repr,
    dim: usize,
    norm: f64,
}

impl SentenceVector {
    pub fn dense(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        SentenceVector {
            dim: values.len(),
            repr: Repr::Dense(values),
            norm,
        }
    }

    /// Duplicate term ids are summed.
    pub fn sparse(dim: usize, entries: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
        for (term, w) in entries {
            *merged.entry(term).or_insert(0.0) += w;
        }
        let entries: Vec<(u32, f64)> = merged.into_iter().collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        SentenceVector {
            repr: Repr::Sparse(entries),
            dim,
            norm,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }

    /// Dense view of the vector.
    pub fn to_dense(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Dense(v) => v.clone(),
            Repr::Sparse(entries) => {
                let mut v = vec![0.0; self.dim];
                for &(t, w) in entries {
                    v[t as usize] = w;
                }
                v
            }
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        match &self.repr {
            Repr::Dense(v) => SentenceVector::dense(v.iter().map(|x| x * c).collect()),
            Repr::Sparse(e) => SentenceVector::sparse(self.dim, e.iter().map(|&(t, w)| (t, w * c))),
        }
    }

    fn dot(&self, other: &SentenceVector) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        let dot = match (&self.repr, &other.repr) {
            (Repr::Dense(a), Repr::Dense(b)) => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            (Repr::Sparse(a), Repr::Sparse(b)) => sparse_dot(a, b),
            (Repr::Sparse(s), Repr::Dense(d)) | (Repr::Dense(d), Repr::Sparse(s)) => {
                s.iter().map(|&(t, w)| w * d[t as usize]).sum()
            }
        };
        Ok(dot)
    }
}

fn sparse_dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

/// Cosine similarity; 0.0 when either vector is zero.
pub fn cosine(u: &SentenceVector, v: &SentenceVector) -> Result<f64> {
    let dot = u.dot(v)?;
    if u.norm == 0.0 || v.norm == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (u.norm * v.norm)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorMode {
    Tfidf,
    Dense,
}

#[derive(Debug, Clone)]
enum Backend {
    Tfidf {
        vocab: HashMap<String, u32>,
        idf: Vec<f64>,
    },
    Dense {
        dim: usize,
        table: HashMap<String, Vec<f64>>,
    },
}

/// Turns texts into sentence vectors. Immutable once built.
#[derive(Debug, Clone)]
pub struct VectorProvider {
    backend: Backend,
}

impl VectorProvider {
    pub fn mode(&self) -> VectorMode {
        match self.backend {
            Backend::Tfidf { .. } => VectorMode::Tfidf,
            Backend::Dense { .. } => VectorMode::Dense,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.backend {
            Backend::Tfidf { idf, .. } => idf.len(),
            Backend::Dense { dim, .. } => *dim,
        }
    }

    /// idf of a vocabulary term (TF-IDF mode only).
    pub fn idf(&self, term: &str) -> Option<f64> {
        match &self.backend {
            Backend::Tfidf { vocab, idf } => vocab.get(term).map(|&i| idf[i as usize]),
            Backend::Dense { .. } => None,
        }
    }

    pub fn vocabulary(&self) -> Vec<&str> {
        let mut terms: Vec<&str> = match &self.backend {
            Backend::Tfidf { vocab, .. } => vocab.keys().map(String::as_str).collect(),
            Backend::Dense { table, .. } => table.keys().map(String::as_str).collect(),
        };
        terms.sort_unstable();
        terms
    }

    pub fn vectorize(&self, text: &str) -> SentenceVector {
        match &self.backend {
            Backend::Tfidf { vocab, idf } => {
                let entries = tokenize(text, true)
                    .into_iter()
                    .filter_map(|t| vocab.get(&t).map(|&id| (id, idf[id as usize])));
                SentenceVector::sparse(idf.len(), entries)
            }
            Backend::Dense { dim, table } => {
                let mut sum = vec![0.0; *dim];
                let mut hits = 0usize;
                for token in tokenize(text, false).iter() {
                    if let Some(v) = table.get(token) {
                        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
                        hits += 1;
                    }
                }
                if hits > 0 {
                    sum.iter_mut().for_each(|s| *s /= hits as f64);
                }
                SentenceVector::dense(sum)
            }
        }
    }
}

/// TF-IDF over `texts` with stop words removed:
/// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, weight = raw count * idf.
pub fn build_tfidf<S: AsRef<str>>(texts: &[S]) -> Result<VectorProvider> {
    let n = texts.len();
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        let mut terms: Vec<String> = tokenize(text.as_ref(), true).into_iter().collect();
        terms.sort_unstable();
        terms.dedup();
        for t in terms {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    if df.is_empty() {
        return Err(Error::Invalid(
            "cannot build TF-IDF vectors: no tokens in any text".into(),
        ));
    }
    let mut vocab = HashMap::with_capacity(df.len());
    let mut idf = Vec::with_capacity(df.len());
    for (i, (term, count)) in df.into_iter().enumerate() {
        vocab.insert(term, i as u32);
        idf.push(((1.0 + n as f64) / (1.0 + count as f64)).ln() + 1.0);
    }
    Ok(VectorProvider {
        backend: Backend::Tfidf { vocab, idf },
    })
}

/// Loads word vectors: optional `count dim` header, then `token v1 .. vdim`
/// per line. Tokens are lowercased; the first occurrence wins.
pub fn load_dense(path: impl AsRef<Path>) -> Result<VectorProvider> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dim: Option<usize> = None;
    let mut table = HashMap::new();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if line_no == 1 && fields.len() == 2 {
            if let (Ok(_), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                dim = Some(d);
                continue;
            }
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, line_no, format!("bad number: {e}")))?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::format(
                    path,
                    line_no,
                    format!("expected {d} values, found {}", values.len()),
                ))
            }
            Some(_) => {}
        }
        table.entry(fields[0].to_lowercase()).or_insert(values);
    }
    let dim = dim.ok_or_else(|| Error::format(path, 0, "no vectors"))?;
    Ok(VectorProvider {
        backend: Backend::Dense { dim, table },
    })
}

/// Question stem followed by the correct answer text.
pub fn qa_text(q: &Question) -> Result<String> {
    let answer = answer_text(q)?;
    Ok(format!("{} {}", q.stem, answer).trim().to_string())
}

/// Default similarity backend: TF-IDF over all fact texts and all
/// question/answer texts of the corpus.
pub fn corpus_tfidf(corpus: &Corpus) -> Result<VectorProvider> {
    let mut texts: Vec<String> = corpus.facts().iter().map(|f| f.text.clone()).collect();
    for q in corpus.questions() {
        texts.push(qa_text(q)?);
    }
    build_tfidf(&texts)
}

/// Sentence vectors of every corpus fact, indexed by `FactId`.
pub fn fact_vectors(corpus: &Corpus, provider: &VectorProvider) -> Vec<SentenceVector> {
    corpus.facts().iter().map(|f| provider.vectorize(&f.text)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(t: &TokenList) -> Vec<&str> {
        t.iter().map(String::as_str).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            toks(&tokenize("A girl eating an apple.", false)),
            ["a", "girl", "eating", "an", "apple"]
        );
        assert_eq!(toks(&tokenize("young; baby cat", false)), ["young", "baby", "cat"]);
        assert!(tokenize("", false).is_empty());
        assert_eq!(toks(&tokenize("A girl eating an apple.", true)), ["girl", "eating", "apple"]);
    }

    #[test]
    fn idf_values() {
        let p = build_tfidf(&["red apple", "red pear"]).unwrap();
        assert_eq!(p.idf("red"), Some(1.0));
        assert!((p.idf("apple").unwrap() - 1.405_465_108_108_164_4).abs() < 1e-12);
        assert_eq!(p.idf("banana"), None);
        for term in p.vocabulary() {
            assert!(["red", "apple", "pear"].contains(&term));
        }
    }

    #[test]
    fn tfidf_of_empty_texts_fails() {
        assert!(build_tfidf(&["", "the a"]).is_err());
    }

    #[test]
    fn cosine_examples() {
        let u = SentenceVector::dense(vec![1.0, 2.0]);
        let v = SentenceVector::dense(vec![2.0, 1.0]);
        assert!((cosine(&u, &v).unwrap() - 0.8).abs() < 1e-15);
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        let e1 = SentenceVector::dense(vec![1.0, 0.0]);
        let e2 = SentenceVector::dense(vec![0.0, 1.0]);
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        let zero = SentenceVector::dense(vec![0.0, 0.0]);
        assert_eq!(cosine(&zero, &u).unwrap(), 0.0);
        let three = SentenceVector::dense(vec![1.0, 0.0, 0.0]);
        assert!(matches!(cosine(&u, &three), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn dense_file_mean_and_oov() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        std::fs::write(&path, "2 2\na 1 0\nb 0 1\n").unwrap();
        let p = load_dense(&path).unwrap();
        assert_eq!(p.mode(), VectorMode::Dense);
        assert_eq!(p.vectorize("a b").to_dense(), vec![0.5, 0.5]);
        assert!(p.vectorize("zebra quokka").is_zero());
    }

    #[test]
    fn dense_file_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        std::fs::write(&path, "A 1 0 2\nb 0 1 0\n").unwrap();
        let p = load_dense(&path).unwrap();
        assert_eq!(p.dim(), 3);
        assert_eq!(p.vectorize("a").to_dense(), vec![1.0, 0.0, 2.0]);
    }

    #[test]
    fn dense_file_bad_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        std::fs::write(&path, "2 2\na 1 0\nb 0 1 5\n").unwrap();
        match load_dense(&path) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn qa_text_joins_stem_and_answer() {
        let mut q = Question {
            qid: "q".into(),
            stem: "Which of the following is an example of an organism taking in nutrients?".into(),
            choices: [
                ("A", "a dog burying a bone"),
                ("B", "a girl eating an apple"),
                ("C", "an insect crawling on a leaf"),
                ("D", "a boy planting tomatoes"),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
            answer_key: "B".into(),
            gold: vec![],
        };
        assert_eq!(
            qa_text(&q).unwrap(),
            "Which of the following is an example of an organism taking in nutrients? a girl eating an apple"
        );
        q.stem.clear();
        assert_eq!(qa_text(&q).unwrap(), "a girl eating an apple");
    }

    #[test]
    fn tfidf_is_deterministic() {
        let texts = ["an apple is a kind of fruit", "fruits are kinds of foods", "eating is taking in food"];
        let a = build_tfidf(&texts).unwrap();
        let b = build_tfidf(&texts).unwrap();
        for t in texts {
            assert_eq!(a.vectorize(t), b.vectorize(t));
        }
    }

    fn dense_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, len)
    }

    proptest! {
        #[test]
        fn cosine_properties((u, v) in (1usize..8).prop_flat_map(|n| (dense_vec(n), dense_vec(n))), c in 0.01f64..100.0) {
            let u = SentenceVector::dense(u);
            let v = SentenceVector::dense(v);
            let uv = cosine(&u, &v).unwrap();
            prop_assert_eq!(uv, cosine(&v, &u).unwrap());
            prop_assert!((-1.0..=1.0).contains(&uv));
            let scaled = cosine(&u.scaled(c), &v).unwrap();
            prop_assert!((scaled - uv).abs() < 1e-9);
        }

        #[test]
        fn cached_norm_matches(values in dense_vec(6)) {
            let v = SentenceVector::dense(values.clone());
            let recomputed = values.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((v.norm() - recomputed).abs() < 1e-9);
        }

        #[test]
        fn tokens_are_clean(text in "\\PC{0,40}") {
            for t in tokenize(&text, false).iter() {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.chars().any(char::is_whitespace));
            }
        }

        #[test]
        fn tfidf_cosine_nonnegative(a in "[a-e ]{0,20}", b in "[a-e ]{0,20}") {
            let p = build_tfidf(&[a.as_str(), b.as_str(), "a b c d e"]).unwrap();
            let c = cosine(&p.vectorize(&a), &p.vectorize(&b)).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }
}
