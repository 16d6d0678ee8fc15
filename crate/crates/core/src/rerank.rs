//! Iterative weighted re-ranking.
//!
//! Starting from the top fact of the initial ranking, each round picks the
//! next fact from a window that slides one position further down the
//! initial ranking per round. Candidates are scored by
//!
//! ```text
//! W(c)     = Σ_k rel(s_k) · sim(c, s_k) / Σ_k rel(s_k)      over selected s_k
//! score(c) = W(c) · sim(c, qa)
//! ```
//!
//! After `depth` positions are fixed, the remaining facts follow in their
//! initial order.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::corpus::{Corpus, FactId};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::scorer::{initial_ranking, normalize, Ranking, RelevanceTable};
use crate::textsim::{cosine, qa_text, SentenceVector, VectorProvider};

/// Depth used when none is given.
pub const DEFAULT_DEPTH: usize = 15;

/// Re-ranking depths of the standard sweep.
pub const SWEEP_DEPTHS: [usize; 7] = [1, 3, 5, 10, 15, 20, 30];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RerankConfig {
    /// Number of leading positions finalized, counting the fixed top fact.
    /// A depth of 1 leaves the ranking unchanged.
    pub depth: usize,
}

impl RerankConfig {
    pub fn new(depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Invalid("re-ranking depth must be at least 1".into()));
        }
        Ok(RerankConfig { depth })
    }
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            depth: DEFAULT_DEPTH,
        }
    }
}

/// Relevance-weighted mean similarity between a candidate and the facts
/// selected so far.
pub fn weighted_relevance(
    candidate: &SentenceVector,
    selected: &[(&SentenceVector, f64)],
) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::Invalid("weighted relevance needs a selected fact".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &(vec, rel) in selected {
        num += rel * cosine(candidate, vec)?;
        den += rel;
    }
    if !(den > 0.0) {
        return Err(Error::Invalid(format!(
            "relevance scores of selected facts sum to {den}; normalize scores first"
        )));
    }
    Ok(num / den)
}

pub fn rerank_score(
    candidate: &SentenceVector,
    selected: &[(&SentenceVector, f64)],
    qa: &SentenceVector,
) -> Result<f64> {
    Ok(weighted_relevance(candidate, selected)? * cosine(candidate, qa)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub fact: FactId,
    pub weighted: f64,
    pub qa_sim: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankRound {
    pub selected: FactId,
    pub candidates: Vec<CandidateScore>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RerankTrace {
    pub qid: String,
    pub rounds: Vec<RerankRound>,
}

impl RerankTrace {
    /// One line per round: round number, selected uid, and the three best
    /// candidates as `uid:score`.
    pub fn render(&self, corpus: &Corpus) -> String {
        let mut out = String::new();
        for (i, round) in self.rounds.iter().enumerate() {
            let mut best: Vec<&CandidateScore> = round.candidates.iter().collect();
            best.sort_by(|a, b| b.score.total_cmp(&a.score));
            let top = best
                .iter()
                .take(3)
                .map(|c| format!("{}:{:.6}", corpus.get(c.fact).uid, c.score))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(out, "{}\t{}\t{}", i + 1, corpus.get(round.selected).uid, top);
        }
        out
    }
}

/// Re-ranks one question.
///
/// `relevance` and `fact_vectors` are indexed by [`FactId`]; relevance must
/// be positive (see [`normalize`]).
pub fn iterative_rerank(
    ranking: &Ranking,
    relevance: &[f64],
    fact_vectors: &[SentenceVector],
    qa: &SentenceVector,
    cfg: &RerankConfig,
) -> Result<(Ranking, RerankTrace)> {
    let n = ranking.len();
    let mut trace = RerankTrace {
        qid: ranking.qid.clone(),
        rounds: Vec::new(),
    };
    if n == 0 || cfg.depth <= 1 {
        return Ok((ranking.clone(), trace));
    }

    let vec_of = |pos: usize| &fact_vectors[ranking.entries[pos].fact.index()];
    let rel_of = |pos: usize| relevance[ranking.entries[pos].fact.index()];

    // Positions into the initial ranking.
    let mut selected: Vec<usize> = vec![0];
    let mut taken = vec![false; n];
    taken[0] = true;
    let mut rel_sum = rel_of(0);
    if !(rel_sum > 0.0) {
        return Err(Error::Invalid(format!(
            "question {}: non-positive relevance; normalize scores first",
            ranking.qid
        )));
    }
    // Running Σ rel·sim per position, caught up lazily with `selected`.
    let mut partial: Vec<(f64, usize)> = vec![(0.0, 0); n];
    let mut qa_sim: Vec<Option<f64>> = vec![None; n];

    while selected.len() < cfg.depth.min(n) {
        // Window: 1-based initial rank <= depth + |selected|.
        let window_end = (cfg.depth + selected.len()).min(n);
        let mut candidates = Vec::new();
        let mut best: Option<(f64, usize)> = None;

        for pos in 0..window_end {
            if taken[pos] {
                continue;
            }
            let (sum, upto) = &mut partial[pos];
            for &s in &selected[*upto..] {
                *sum += rel_of(s) * cosine(vec_of(pos), vec_of(s))?;
            }
            *upto = selected.len();
            let weighted = *sum / rel_sum;
            let qs = match qa_sim[pos] {
                Some(v) => v,
                None => {
                    let v = cosine(vec_of(pos), qa)?;
                    qa_sim[pos] = Some(v);
                    v
                }
            };
            let score = weighted * qs;
            // Strictly greater: earlier initial rank wins ties.
            if best.map_or(true, |(b, _)| score > b) {
                best = Some((score, pos));
            }
            candidates.push(CandidateScore {
                fact: ranking.entries[pos].fact,
                weighted,
                qa_sim: qs,
                score,
            });
        }

        let (_, pick) = best.expect("window always holds an unselected fact");
        taken[pick] = true;
        selected.push(pick);
        let rel = rel_of(pick);
        if !(rel > 0.0) {
            return Err(Error::Invalid(format!(
                "question {}: non-positive relevance; normalize scores first",
                ranking.qid
            )));
        }
        rel_sum += rel;
        trace.rounds.push(RerankRound {
            selected: ranking.entries[pick].fact,
            candidates,
        });
    }

    let entries = selected
        .iter()
        .copied()
        .chain((0..n).filter(|&p| !taken[p]))
        .map(|p| ranking.entries[p])
        .collect();
    Ok((
        Ranking {
            qid: ranking.qid.clone(),
            entries,
        },
        trace,
    ))
}

/// Re-ranks every question of `raw` in table order. The initial order comes
/// from the raw scores; the normalized scores act as relevance weights.
pub fn rerank_table(
    corpus: &Corpus,
    raw: &RelevanceTable,
    provider: &VectorProvider,
    fact_vectors: &[SentenceVector],
    cfg: &RerankConfig,
) -> Result<Vec<(Ranking, RerankTrace)>> {
    let normalized = normalize(raw);
    let qids: Vec<&str> = raw.qids().collect();
    qids.par_iter()
        .map(|qid| {
            let q = corpus
                .question(qid)
                .ok_or_else(|| Error::UnknownQuestion(qid.to_string()))?;
            let qa = provider.vectorize(&qa_text(q)?);
            let initial = initial_ranking(raw, qid)?;
            let rel = normalized.scores(qid).expect("same qids as raw table");
            iterative_rerank(&initial, rel, fact_vectors, &qa, cfg)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub depth: usize,
    pub report: EvalReport,
}

/// Re-ranks all questions at each depth and evaluates the result.
pub fn depth_sweep(
    corpus: &Corpus,
    raw: &RelevanceTable,
    provider: &VectorProvider,
    fact_vectors: &[SentenceVector],
    depths: &[usize],
) -> Result<Vec<SweepRow>> {
    depths
        .iter()
        .map(|&depth| {
            let cfg = RerankConfig::new(depth)?;
            let rankings: Vec<Ranking> = rerank_table(corpus, raw, provider, fact_vectors, &cfg)?
                .into_iter()
                .map(|(r, _)| r)
                .collect();
            Ok(SweepRow {
                depth,
                report: eval::evaluate(&rankings, corpus)?,
            })
        })
        .collect()
}

/// `depth<TAB>map` table.
pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from("depth\tmap\n");
    for row in rows {
        let _ = writeln!(out, "{}\t{:.4}", row.depth, row.report.map_overall);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::Scored;

    fn dense(v: &[f64]) -> SentenceVector {
        SentenceVector::dense(v.to_vec())
    }

    fn ranking(order: &[u32]) -> Ranking {
        Ranking {
            qid: "q".into(),
            entries: order
                .iter()
                .enumerate()
                .map(|(i, &f)| Scored {
                    fact: FactId(f),
                    score: -(i as f64),
                })
                .collect(),
        }
    }

    #[test]
    fn single_selected_fact_gives_plain_similarity() {
        let c = dense(&[1.0, 2.0]);
        let s = dense(&[2.0, 1.0]);
        for rel in [0.01, 0.5, 7.0] {
            assert_eq!(weighted_relevance(&c, &[(&s, rel)]).unwrap(), cosine(&c, &s).unwrap());
        }
    }

    #[test]
    fn weighted_relevance_examples() {
        // Unit vectors at fixed cosines to the candidate.
        let c = dense(&[1.0, 0.0]);
        let half = dense(&[0.5, (0.75f64).sqrt()]);
        let same = dense(&[3.0, 0.0]);
        let w = weighted_relevance(&c, &[(&half, 0.8), (&same, 0.2)]).unwrap();
        assert!((w - 0.6).abs() < 1e-12);

        let w = weighted_relevance(&c, &[(&half, 0.1), (&half, 3.0), (&half, 0.4)]).unwrap();
        assert!((w - 0.5).abs() < 1e-12);

        assert!(weighted_relevance(&c, &[(&half, 0.0)]).is_err());
        assert!(weighted_relevance(&c, &[]).is_err());
    }

    #[test]
    fn rerank_score_examples() {
        let c = dense(&[1.0, 0.0]);
        let half = dense(&[0.5, (0.75f64).sqrt()]);
        let same = dense(&[1.0, 0.0]);
        let qa = dense(&[0.5, (0.75f64).sqrt()]);
        let s = rerank_score(&c, &[(&half, 0.8), (&same, 0.2)], &qa).unwrap();
        assert!((s - 0.3).abs() < 1e-12);

        let orthogonal = dense(&[0.0, 1.0]);
        assert_eq!(rerank_score(&c, &[(&same, 1.0)], &orthogonal).unwrap(), 0.0);
        assert!((rerank_score(&c, &[(&same, 0.3), (&c, 0.9)], &same).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn depth_one_is_identity() {
        let vecs: Vec<_> = (0..5).map(|i| dense(&[i as f64, 1.0])).collect();
        let r = ranking(&[3, 1, 4, 0, 2]);
        let (out, trace) =
            iterative_rerank(&r, &[0.5; 5], &vecs, &dense(&[1.0, 1.0]), &RerankConfig::new(1).unwrap()).unwrap();
        assert_eq!(out, r);
        assert!(trace.rounds.is_empty());
        assert!(RerankConfig::new(0).is_err());
    }

    #[test]
    fn window_slides_one_position_per_round() {
        // Depth 2: one round over initial ranks 2..=3 only. Fact 3 at rank 4
        // is the best match but lies outside the window.
        let vecs = vec![
            dense(&[1.0, 0.0]),
            dense(&[0.0, 1.0]),
            dense(&[0.5, 0.5]),
            dense(&[1.0, 0.01]),
        ];
        let r = ranking(&[0, 1, 2, 3]);
        let qa = dense(&[1.0, 0.0]);
        let (out, trace) = iterative_rerank(&r, &[1.0; 4], &vecs, &qa, &RerankConfig::new(2).unwrap()).unwrap();
        assert_eq!(out.facts().map(|f| f.0).collect::<Vec<_>>(), [0, 2, 1, 3]);
        assert_eq!(trace.rounds.len(), 1);
        let window: Vec<u32> = trace.rounds[0].candidates.iter().map(|c| c.fact.0).collect();
        assert_eq!(window, [1, 2]);
    }

    #[test]
    fn ties_keep_initial_order() {
        let vecs = vec![dense(&[1.0, 0.0]); 4];
        let r = ranking(&[2, 0, 3, 1]);
        let (out, _) = iterative_rerank(&r, &[1.0; 4], &vecs, &dense(&[1.0, 0.0]), &RerankConfig::new(4).unwrap()).unwrap();
        assert_eq!(out, r);
    }

    #[test]
    fn depth_beyond_length_reranks_everything() {
        let vecs = vec![dense(&[1.0, 0.0]), dense(&[0.0, 1.0]), dense(&[1.0, 0.1])];
        let r = ranking(&[0, 1, 2]);
        let (out, trace) =
            iterative_rerank(&r, &[1.0; 3], &vecs, &dense(&[1.0, 0.0]), &RerankConfig::new(30).unwrap()).unwrap();
        assert_eq!(out.facts().map(|f| f.0).collect::<Vec<_>>(), [0, 2, 1]);
        assert_eq!(trace.rounds.len(), 2);
    }

    #[test]
    fn non_positive_relevance_is_rejected() {
        let vecs = vec![dense(&[1.0, 0.0]), dense(&[0.0, 1.0])];
        let r = ranking(&[0, 1]);
        assert!(iterative_rerank(&r, &[0.0, 1.0], &vecs, &dense(&[1.0, 0.0]), &RerankConfig::new(2).unwrap()).is_err());
    }
}
