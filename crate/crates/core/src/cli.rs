//! Command-line driver: `validate`, `prepare`, `rank`, `rerank` and
//! `evaluate`.
//!
//! Every option can also come from a flat `key=value` file passed with
//! `--config`; command-line flags take precedence. Exit codes: 0 success,
//! 1 validation or content failure, 2 I/O or format failure.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::warn;

use crate::corpus::{self, Corpus, QuestionColumns, ValidationReport};
use crate::dataprep::{self, PrepConfig, Task};
use crate::error::{Error, Result};
use crate::eval;
use crate::rerank::{self, RerankConfig};
use crate::scorer::{self, LexicalMethod, Ranking, RelevanceTable};
use crate::textsim::{self, SentenceVector, VectorProvider};

#[derive(Debug, Parser)]
#[command(name = "exregen", version, about = "Explanation regeneration: data preparation, ranking, re-ranking and MAP evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check fact tables and questions for dangling or malformed annotations
    Validate(Options),
    /// Write relevance-learner training datasets
    Prepare(Options),
    /// Score every fact for every question and write the initial ranking
    Rank(Options),
    /// Re-rank the initial ranking to a given depth
    Rerank(Options),
    /// Compute MAP reports for a predictions file and/or a depth sweep
    Evaluate(Options),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Flat key=value configuration file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fact table files or directories of .tsv tables
    #[arg(long, num_args = 1..)]
    pub facts: Vec<PathBuf>,
    #[arg(long)]
    pub questions: Option<PathBuf>,
    /// External relevance scores (qid, fact_uid, score)
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Word-vector file; replaces the TF-IDF similarity backend
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Predictions file to evaluate
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// tfidf, overlap or external
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long = "top-m")]
    pub top_m: Option<usize>,
    /// Comma-separated re-ranking depths, e.g. 1,3,5,10,15,20,30
    #[arg(long)]
    pub sweep: Option<String>,
    /// Write one re-ranking trace file per question
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// classification, regression or all
    #[arg(long)]
    pub task: Option<String>,
    /// Build datasets with context facts
    #[arg(long)]
    pub context: bool,
    /// Regression target for BACKGROUND, NEG and unknown roles
    #[arg(long = "other-role-target")]
    pub other_role_target: Option<f64>,
    #[arg(long = "qid-column")]
    pub qid_column: Option<String>,
    #[arg(long = "question-column")]
    pub question_column: Option<String>,
    #[arg(long = "answer-column")]
    pub answer_column: Option<String>,
    #[arg(long = "explanation-column")]
    pub explanation_column: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Tfidf,
    Overlap,
    External,
}

impl Method {
    fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tfidf" => Ok(Method::Tfidf),
            "overlap" => Ok(Method::Overlap),
            "external" => Ok(Method::External),
            other => Err(Error::Invalid(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskSelection {
    One(Task),
    All,
}

/// Fully resolved options of one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub facts: Vec<PathBuf>,
    pub questions: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub out: PathBuf,
    pub method: Method,
    pub prep: PrepConfig,
    pub tasks: TaskSelection,
    pub rerank: RerankConfig,
    pub top_m: Option<usize>,
    pub sweep: Option<Vec<usize>>,
    pub trace: bool,
    pub jobs: Option<usize>,
    pub columns: QuestionColumns,
}

const CONFIG_KEYS: &[&str] = &[
    "facts", "questions", "scores", "vectors", "predictions", "out", "method", "depth", "k", "m",
    "seed", "jobs", "top_m", "sweep", "trace", "task", "context", "other_role_target",
    "qid_column", "question_column", "answer_column", "explanation_column",
];

/// Parses `key=value` lines; `#` starts a comment line.
pub fn parse_config(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, i + 1, "expected key=value"))?;
        let key = key.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::format(path, i + 1, format!("unknown key {key:?}")));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Invalid(format!("bad value for {key}: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Invalid(format!("bad value for {key}: {value:?}"))),
    }
}

fn parse_depths(value: &str) -> Result<Vec<usize>> {
    let depths = value
        .split(',')
        .map(|d| parse_value::<usize>("sweep", d.trim()))
        .collect::<Result<Vec<_>>>()?;
    if depths.is_empty() || depths.contains(&0) {
        return Err(Error::Invalid("sweep depths must be positive".into()));
    }
    Ok(depths)
}

impl RunConfig {
    pub fn resolve(opts: &Options) -> Result<RunConfig> {
        let file = match &opts.config {
            Some(path) => parse_config(path)?,
            None => HashMap::new(),
        };
        let get = |key: &str| file.get(key).map(String::as_str);
        let path_of = |flag: &Option<PathBuf>, key: &str| flag.clone().or_else(|| get(key).map(PathBuf::from));
        let num = |flag: Option<usize>, key: &str| -> Result<Option<usize>> {
            match (flag, get(key)) {
                (Some(v), _) => Ok(Some(v)),
                (None, Some(v)) => parse_value(key, v).map(Some),
                (None, None) => Ok(None),
            }
        };

        let facts = if opts.facts.is_empty() {
            get("facts")
                .map(|v| v.split(',').map(|p| PathBuf::from(p.trim())).collect())
                .unwrap_or_default()
        } else {
            opts.facts.clone()
        };
        let scores = path_of(&opts.scores, "scores");

        let method = match opts.method.as_deref().or(get("method")) {
            Some(m) => Method::parse(m)?,
            None if scores.is_some() => Method::External,
            None => Method::Tfidf,
        };

        let defaults = PrepConfig::default();
        let task_name = opts.task.as_deref().or(get("task")).unwrap_or("classification");
        let tasks = match task_name.to_ascii_lowercase().as_str() {
            "classification" => TaskSelection::One(Task::Classification),
            "regression" => TaskSelection::One(Task::Regression),
            "all" => TaskSelection::All,
            other => return Err(Error::Invalid(format!("unknown task {other:?}"))),
        };
        let with_context = opts.context || get("context").map(|v| parse_bool("context", v)).transpose()?.unwrap_or(false);
        let seed = match (opts.seed, get("seed")) {
            (Some(s), _) => s,
            (None, Some(v)) => parse_value("seed", v)?,
            (None, None) => defaults.seed,
        };
        let other_role_target = match (opts.other_role_target, get("other_role_target")) {
            (Some(t), _) => t,
            (None, Some(v)) => parse_value("other_role_target", v)?,
            (None, None) => defaults.other_role_target,
        };
        let prep = PrepConfig {
            k: num(opts.k, "k")?.unwrap_or(defaults.k),
            m: num(opts.m, "m")?.unwrap_or(defaults.m),
            seed,
            with_context,
            task: match tasks {
                TaskSelection::One(t) => t,
                TaskSelection::All => Task::Classification,
            },
            other_role_target,
        };
        prep.check()?;

        let sweep = match opts.sweep.as_deref().or(get("sweep")) {
            Some(v) => Some(parse_depths(v)?),
            None => None,
        };
        let trace = opts.trace || get("trace").map(|v| parse_bool("trace", v)).transpose()?.unwrap_or(false);

        let column = |flag: &Option<String>, key: &str, default: String| {
            flag.clone().or_else(|| get(key).map(str::to_string)).unwrap_or(default)
        };
        let d = QuestionColumns::default();
        let columns = QuestionColumns {
            qid: column(&opts.qid_column, "qid_column", d.qid),
            text: column(&opts.question_column, "question_column", d.text),
            answer_key: column(&opts.answer_column, "answer_column", d.answer_key),
            explanation: column(&opts.explanation_column, "explanation_column", d.explanation),
        };

        let config = RunConfig {
            facts,
            questions: path_of(&opts.questions, "questions"),
            scores,
            vectors: path_of(&opts.vectors, "vectors"),
            predictions: path_of(&opts.predictions, "predictions"),
            out: path_of(&opts.out, "out").unwrap_or_else(|| PathBuf::from("out")),
            method,
            prep,
            tasks,
            rerank: RerankConfig::new(num(opts.depth, "depth")?.unwrap_or(rerank::DEFAULT_DEPTH))?,
            top_m: num(opts.top_m, "top_m")?,
            sweep,
            trace,
            jobs: num(opts.jobs, "jobs")?,
            columns,
        };
        config.check_inputs()?;
        Ok(config)
    }

    fn check_inputs(&self) -> Result<()> {
        let inputs = self
            .facts
            .iter()
            .chain(&self.questions)
            .chain(&self.scores)
            .chain(&self.vectors)
            .chain(&self.predictions);
        for path in inputs {
            if !path.exists() {
                return Err(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input does not exist"),
                ));
            }
        }
        if self.method == Method::External && self.scores.is_none() {
            return Err(Error::Invalid("method external needs --scores".into()));
        }
        Ok(())
    }

    /// Fact table files; directories expand to their `.tsv` files in name
    /// order.
    pub fn fact_files(&self) -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        for path in &self.facts {
            if path.is_dir() {
                let mut entries: Vec<PathBuf> = fs::read_dir(path)
                    .map_err(|e| Error::io(path, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
                    .collect();
                entries.sort();
                files.extend(entries);
            } else {
                files.push(path.clone());
            }
        }
        if files.is_empty() {
            return Err(Error::Invalid("no fact tables given (--facts)".into()));
        }
        Ok(files)
    }

    fn questions_path(&self) -> Result<&Path> {
        self.questions
            .as_deref()
            .ok_or_else(|| Error::Invalid("no question file given (--questions)".into()))
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(&self.out)
    }
}

/// Loads facts and questions; row-level question problems go into the
/// returned report.
pub fn load_corpus(cfg: &RunConfig) -> Result<(Corpus, ValidationReport)> {
    let facts = corpus::load_facts(&cfg.fact_files()?)?;
    let set = corpus::load_questions(cfg.questions_path()?, &cfg.columns)?;
    Ok((Corpus::new(facts, set.questions), set.report))
}

fn similarity(cfg: &RunConfig, corpus: &Corpus) -> Result<VectorProvider> {
    match &cfg.vectors {
        Some(path) => textsim::load_dense(path),
        None => textsim::corpus_tfidf(corpus),
    }
}

/// Keeps the rows of questions in the corpus, in corpus question order.
fn align_to_corpus(table: RelevanceTable, corpus: &Corpus) -> Result<RelevanceTable> {
    let extra: Vec<&str> = table.qids().filter(|q| corpus.question(q).is_none()).collect();
    if !extra.is_empty() {
        warn!("{} scored question(s) are not in the question file and are ignored", extra.len());
    }
    let mut aligned = RelevanceTable::new(table.n_facts());
    for q in corpus.questions() {
        if let Some(scores) = table.scores(&q.qid) {
            aligned.insert(q.qid.clone(), scores.to_vec())?;
        }
    }
    if aligned.is_empty() {
        return Err(Error::Invalid("no scores for any question of the question file".into()));
    }
    Ok(aligned)
}

fn relevance(cfg: &RunConfig, corpus: &Corpus, provider: &VectorProvider) -> Result<RelevanceTable> {
    let table = match cfg.method {
        Method::Tfidf => scorer::score_lexical(corpus, provider, LexicalMethod::TfidfCosine)?,
        Method::Overlap => scorer::score_lexical(corpus, provider, LexicalMethod::Overlap)?,
        Method::External => {
            let path = cfg.scores.as_ref().expect("checked in resolve");
            scorer::load_scores(path, corpus)?.table
        }
    };
    align_to_corpus(table, corpus)
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<i32> {
    let (corpus, mut report) = load_corpus(cfg)?;
    report.extend(corpus::validate(&corpus));
    print!("{report}");
    let hard = report.hard_issues().count();
    println!(
        "{} facts, {} questions, {} error(s), {} warning(s)",
        corpus.len(),
        corpus.questions().len(),
        hard,
        report.issues.len() - hard
    );
    Ok(if report.is_usable() { 0 } else { 1 })
}

pub fn cmd_prepare(cfg: &RunConfig) -> Result<i32> {
    let (corpus, _) = load_corpus(cfg)?;
    let provider = similarity(cfg, &corpus)?;
    let vectors = textsim::fact_vectors(&corpus, &provider);
    let variants: Vec<(Task, bool)> = match cfg.tasks {
        TaskSelection::One(task) => vec![(task, cfg.prep.with_context)],
        TaskSelection::All => [Task::Classification, Task::Regression]
            .into_iter()
            .flat_map(|t| [(t, false), (t, true)])
            .collect(),
    };
    let out = cfg.out_dir()?;
    for (task, with_context) in variants {
        let prep = PrepConfig {
            task,
            with_context,
            ..cfg.prep.clone()
        };
        let examples = dataprep::build_dataset(&corpus, &vectors, &prep)?;
        let name = format!("{}{}", task.name(), if with_context { "_context" } else { "" });
        dataprep::write_dataset(&examples, out.join(format!("{name}.tsv")))?;
        let stats = dataprep::dataset_stats(&examples);
        let stats_path = out.join(format!("{name}.stats.txt"));
        fs::write(&stats_path, stats.to_string()).map_err(|e| Error::io(&stats_path, e))?;
        println!("{name}: {} examples, balance {}", stats.total, stats.balance());
    }
    Ok(0)
}

pub fn cmd_rank(cfg: &RunConfig) -> Result<i32> {
    let (corpus, _) = load_corpus(cfg)?;
    let provider = similarity(cfg, &corpus)?;
    let table = relevance(cfg, &corpus, &provider)?;
    let out = cfg.out_dir()?;
    scorer::write_scores(&table, &corpus, out.join("scores.tsv"))?;
    let rankings = scorer::initial_rankings(&table);
    eval::write_predictions(&rankings, &corpus, out.join("predictions.tsv"), cfg.top_m)?;
    println!("ranked {} questions over {} facts", rankings.len(), corpus.len());
    Ok(0)
}

fn trace_name(qid: &str) -> String {
    let safe: String = qid
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.txt")
}

pub fn cmd_rerank(cfg: &RunConfig) -> Result<i32> {
    let (corpus, _) = load_corpus(cfg)?;
    let provider = similarity(cfg, &corpus)?;
    let table = relevance(cfg, &corpus, &provider)?;
    let vectors: Vec<SentenceVector> = textsim::fact_vectors(&corpus, &provider);
    let results = rerank::rerank_table(&corpus, &table, &provider, &vectors, &cfg.rerank)?;
    let out = cfg.out_dir()?;
    let (rankings, traces): (Vec<Ranking>, Vec<_>) = results.into_iter().unzip();
    eval::write_predictions(&rankings, &corpus, out.join("predictions_rerank.tsv"), cfg.top_m)?;
    if cfg.trace {
        let dir = out.join("traces");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for t in &traces {
            let path = dir.join(trace_name(&t.qid));
            fs::write(&path, t.render(&corpus)).map_err(|e| Error::io(&path, e))?;
        }
    }
    println!("re-ranked {} questions to depth {}", rankings.len(), cfg.rerank.depth);
    Ok(0)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<i32> {
    if cfg.predictions.is_none() && cfg.sweep.is_none() {
        return Err(Error::Invalid("evaluate needs --predictions and/or --sweep".into()));
    }
    let (corpus, _) = load_corpus(cfg)?;
    let out = cfg.out_dir()?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = out.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    };

    if let Some(path) = &cfg.predictions {
        let rankings = eval::read_predictions(path, &corpus)?;
        let report = eval::evaluate(&rankings, &corpus)?;
        print!("{report}");
        write("report.txt", report.to_string())?;
        write("report.kv", report.to_key_values())?;
    }
    if let Some(depths) = &cfg.sweep {
        let provider = similarity(cfg, &corpus)?;
        let table = relevance(cfg, &corpus, &provider)?;
        let vectors = textsim::fact_vectors(&corpus, &provider);
        let rows = rerank::depth_sweep(&corpus, &table, &provider, &vectors, depths)?;
        let rendered = rerank::render_sweep(&rows);
        print!("{rendered}");
        write("sweep.tsv", rendered)?;
        let per_depth: String = rows
            .iter()
            .flat_map(|row| {
                row.report
                    .to_key_values()
                    .lines()
                    .map(|l| format!("depth.{}.{l}\n", row.depth))
                    .collect::<Vec<_>>()
            })
            .collect();
        write("sweep.kv", per_depth)?;
    }
    Ok(0)
}

fn dispatch(command: &Command) -> Result<i32> {
    let (opts, f): (&Options, fn(&RunConfig) -> Result<i32>) = match command {
        Command::Validate(o) => (o, cmd_validate),
        Command::Prepare(o) => (o, cmd_prepare),
        Command::Rank(o) => (o, cmd_rank),
        Command::Rerank(o) => (o, cmd_rerank),
        Command::Evaluate(o) => (o, cmd_evaluate),
    };
    let cfg = RunConfig::resolve(opts)?;
    match cfg.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?
            .install(|| f(&cfg)),
        None => f(&cfg),
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (program name first) and runs them.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                2
            } else {
                0
            }
        }
    }
}
