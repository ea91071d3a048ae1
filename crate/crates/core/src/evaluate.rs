//! Benchmark harness, answer-letter extraction, LLM-judge scoring and
//! dataset statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backends::protocol::TextRequest;
use crate::backends::{BackendClient, BackendError};
use crate::generate::{normalize_option, Category, QAItem};

pub const JUDGE_TEMPLATE: &str = include_str!("../prompts/judge_v1.txt");
pub const JUDGE_FORMAT: &str = include_str!("../prompts/judge_format_v1.txt");
pub const BENCHMARK_TEMPLATE_VERSION: &str = "mcq_v1";
pub const JUDGE_RUNS: usize = 3;
const LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("benchmark has no items")]
    EmptyBenchmark,
    #[error("judge reply unusable: {0}")]
    JudgeParse(String),
    #[error("every judge run failed; last error: {0}")]
    NoJudgeRuns(String),
    #[error("question refers to unknown video {0:?}")]
    UnknownVideo(String),
    #[error("invalid benchmark item {index}: {reason}")]
    InvalidItem { index: usize, reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// A benchmark question. Reads qa.jsonl lines directly; extra fields are
/// ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchItem {
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    #[serde(default)]
    pub category: Option<Category>,
    #[serde(default)]
    pub video_id: Option<String>,
}

impl From<&QAItem> for BenchItem {
    fn from(q: &QAItem) -> Self {
        Self {
            question: q.question.clone(),
            options: q.options.clone(),
            answer_index: q.answer_index,
            category: Some(q.category),
            video_id: Some(q.video_id.clone()),
        }
    }
}

pub fn render_question(question: &str, options: &[String]) -> String {
    let mut s = format!("Q: {question}\n");
    for (l, o) in LETTERS.iter().zip(options) {
        let _ = writeln!(s, "{l}. {o}");
    }
    s.push_str("Answer with the letter only.");
    s
}

static LEADING_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^\s*[*"'(\[]*([A-D])[*"')\]]*\s*(?:[.:,;!)\]]|$)"#).expect("regex"));
static ANSWER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i:answer)\s*(?:(?i:is)\s*)?(?:[:\-=]\s*)?(?:(?i:option)\s*)?[*"'(\[]*([A-D])\b"#).expect("regex")
});
static PAREN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-D])\)").expect("regex"));
static OPTION_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i:option)\s+([A-D])\b").expect("regex"));

/// First match among: a leading standalone letter; "answer … X"; "(X)";
/// "option X"; the text of exactly one option. Only uppercase letters
/// count, except a reply consisting of a single lowercase letter.
pub fn extract_answer_letter(reply: &str, options: &[String]) -> Option<char> {
    let trimmed = reply.trim().trim_end_matches('.');
    if trimmed.len() == 1 {
        let c = trimmed.chars().next()?.to_ascii_uppercase();
        if LETTERS[..options.len().min(4)].contains(&c) {
            return Some(c);
        }
    }
    let valid = |c: char| LETTERS[..options.len().min(4)].contains(&c);
    for re in [&*LEADING_RE, &*ANSWER_RE, &*PAREN_RE, &*OPTION_RE] {
        if let Some(c) = re.captures(reply).and_then(|m| m[1].chars().next()) {
            if valid(c) {
                return Some(c);
            }
        }
    }
    let norm_reply = normalize_option(reply);
    let hits: Vec<usize> = options
        .iter()
        .enumerate()
        .filter(|(_, o)| {
            let n = normalize_option(o);
            !n.is_empty() && norm_reply.contains(&n)
        })
        .map(|(i, _)| i)
        .collect();
    match hits.as_slice() {
        [i] => Some(LETTERS[*i]),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub reply: Option<String>,
    pub letter: Option<char>,
    pub correct: bool,
    #[serde(default)]
    pub category: Option<Category>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub benchmark: String,
    pub model: String,
    pub template: String,
    pub items: Vec<ItemResult>,
    pub correct: usize,
    pub accuracy: f64,
    pub per_category: BTreeMap<Category, f64>,
}

fn accuracy(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 * 100.0 / total as f64
    }
}

/// Scores the collected replies. Items without a usable letter count as
/// incorrect.
pub fn score_run(benchmark: &str, model: &str, items: &[BenchItem], replies: Vec<Option<String>>) -> BenchmarkRun {
    let results: Vec<ItemResult> = items
        .iter()
        .zip(replies)
        .map(|(it, reply)| {
            let letter = reply.as_deref().and_then(|r| extract_answer_letter(r, &it.options));
            let correct = letter.is_some_and(|l| LETTERS.get(it.answer_index) == Some(&l));
            ItemResult {
                reply,
                letter,
                correct,
                category: it.category,
            }
        })
        .collect();
    let correct = results.iter().filter(|r| r.correct).count();
    let mut by_cat: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
    for r in &results {
        if let Some(c) = r.category {
            let e = by_cat.entry(c).or_default();
            e.0 += r.correct as usize;
            e.1 += 1;
        }
    }
    BenchmarkRun {
        benchmark: benchmark.to_string(),
        model: model.to_string(),
        template: BENCHMARK_TEMPLATE_VERSION.to_string(),
        accuracy: accuracy(correct, results.len()),
        correct,
        items: results,
        per_category: by_cat.into_iter().map(|(c, (k, n))| (c, accuracy(k, n))).collect(),
    }
}

pub fn validate_items(items: &[BenchItem]) -> Result<(), EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyBenchmark);
    }
    for (index, it) in items.iter().enumerate() {
        if it.options.len() != 4 || it.answer_index >= 4 {
            return Err(EvalError::InvalidItem {
                index,
                reason: format!("{} options, answer index {}", it.options.len(), it.answer_index),
            });
        }
    }
    Ok(())
}

/// Asks the model under test each question. A failed call leaves the item
/// unanswered and the run continues.
pub fn run_benchmark(
    benchmark: &str,
    model: &str,
    items: &[BenchItem],
    client: &BackendClient,
) -> Result<BenchmarkRun, EvalError> {
    validate_items(items)?;
    let replies = items
        .iter()
        .map(
            |it| match client.answer(TextRequest::prompt(render_question(&it.question, &it.options))) {
                Ok(r) => Some(r),
                Err(e) => {
                    log::warn!("{benchmark}: no answer for {:?}: {e}", it.question);
                    None
                }
            },
        )
        .collect();
    Ok(score_run(benchmark, model, items, replies))
}

/// Rows are models, columns benchmarks, cells accuracy in percent.
pub fn render_accuracy_table(runs: &[BenchmarkRun]) -> String {
    let mut benches: Vec<&str> = runs.iter().map(|r| r.benchmark.as_str()).collect();
    benches.sort_unstable();
    benches.dedup();
    let mut models: Vec<&str> = runs.iter().map(|r| r.model.as_str()).collect();
    models.dedup();
    let mut out = String::from("| Model |");
    for b in &benches {
        let _ = write!(out, " {b} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(benches.len()));
    for m in models {
        let _ = write!(out, "\n| {m} |");
        for b in &benches {
            match runs.iter().find(|r| r.model == m && r.benchmark == *b) {
                Some(r) => {
                    let _ = write!(out, " {:.1} |", r.accuracy);
                }
                None => out.push_str(" - |"),
            }
        }
    }
    out.push('\n');
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub fine_grained_action_accuracy: f64,
    pub motion_detail_and_specificity: f64,
    pub temporal_coherence: f64,
    pub question_relevance: f64,
    pub overall_qa_quality: f64,
}

impl QualityScore {
    pub const DIMENSIONS: [&'static str; 5] = [
        "fine_grained_action_accuracy",
        "motion_detail_and_specificity",
        "temporal_coherence",
        "question_relevance",
        "overall_qa_quality",
    ];

    pub const LABELS: [&'static str; 5] = [
        "Fine-grained Action Accuracy",
        "Motion Detail and Specificity",
        "Temporal Coherence",
        "Question Relevance",
        "Overall QA Quality",
    ];

    pub fn values(&self) -> [f64; 5] {
        [
            self.fine_grained_action_accuracy,
            self.motion_detail_and_specificity,
            self.temporal_coherence,
            self.question_relevance,
            self.overall_qa_quality,
        ]
    }

    pub fn from_values(v: [f64; 5]) -> Self {
        Self {
            fine_grained_action_accuracy: v[0],
            motion_detail_and_specificity: v[1],
            temporal_coherence: v[2],
            question_relevance: v[3],
            overall_qa_quality: v[4],
        }
    }

    fn parse(v: &Value, set: &str) -> Result<Self, EvalError> {
        let obj = v
            .get(set)
            .and_then(Value::as_object)
            .ok_or_else(|| EvalError::JudgeParse(format!("missing {set}")))?;
        let mut out = [0.0; 5];
        for (slot, dim) in out.iter_mut().zip(Self::DIMENSIONS) {
            let x = obj
                .get(dim)
                .and_then(Value::as_f64)
                .ok_or_else(|| EvalError::JudgeParse(format!("{set}.{dim} missing or not a number")))?;
            if !(0.0..=10.0).contains(&x) {
                return Err(EvalError::JudgeParse(format!("{set}.{dim} = {x} outside [0, 10]")));
            }
            *slot = x;
        }
        Ok(Self::from_values(out))
    }
}

/// Parses `{"set_a": {...}, "set_b": {...}}`, tolerating text around the
/// JSON object.
pub fn parse_judge_reply(reply: &str) -> Result<(QualityScore, QualityScore), EvalError> {
    let start = reply
        .find('{')
        .ok_or_else(|| EvalError::JudgeParse("no JSON object".into()))?;
    let end = reply
        .rfind('}')
        .ok_or_else(|| EvalError::JudgeParse("no JSON object".into()))?;
    if end < start {
        return Err(EvalError::JudgeParse("no JSON object".into()));
    }
    let v: Value = serde_json::from_str(&reply[start..=end]).map_err(|e| EvalError::JudgeParse(e.to_string()))?;
    Ok((QualityScore::parse(&v, "set_a")?, QualityScore::parse(&v, "set_b")?))
}

fn render_set(items: &[QAItem]) -> String {
    let mut s = String::new();
    for (i, q) in items.iter().enumerate() {
        let _ = writeln!(s, "Q{}: {}", i + 1, q.question);
        for (l, o) in LETTERS.iter().zip(&q.options) {
            let _ = writeln!(s, "{l}: {o}");
        }
        let _ = writeln!(s, "Answer: {}", LETTERS[q.answer_index.min(3)]);
    }
    s
}

pub fn judge_prompt(set_a: &[QAItem], set_b: &[QAItem]) -> String {
    format!(
        "{JUDGE_TEMPLATE}{JUDGE_FORMAT}\nSet A:\n{}\nSet B:\n{}",
        render_set(set_a),
        render_set(set_b)
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResult {
    pub set_a: QualityScore,
    pub set_b: QualityScore,
    pub runs_used: usize,
    pub runs_failed: usize,
}

/// Averages the scores of the runs whose replies parse.
pub fn average_judgements(replies: &[Result<String, String>]) -> Result<JudgeResult, EvalError> {
    let mut sums = ([0.0; 5], [0.0; 5]);
    let mut used = 0;
    let mut last_err = String::from("no runs");
    for r in replies {
        let parsed = match r {
            Ok(text) => parse_judge_reply(text),
            Err(e) => Err(EvalError::JudgeParse(e.clone())),
        };
        match parsed {
            Ok((a, b)) => {
                for i in 0..5 {
                    sums.0[i] += a.values()[i];
                    sums.1[i] += b.values()[i];
                }
                used += 1;
            }
            Err(e) => {
                log::warn!("judge run excluded: {e}");
                last_err = e.to_string();
            }
        }
    }
    if used == 0 {
        return Err(EvalError::NoJudgeRuns(last_err));
    }
    let avg = |s: [f64; 5]| QualityScore::from_values(s.map(|x| x / used as f64));
    Ok(JudgeResult {
        set_a: avg(sums.0),
        set_b: avg(sums.1),
        runs_used: used,
        runs_failed: replies.len() - used,
    })
}

pub fn judge_qa_quality(
    set_a: &[QAItem],
    set_b: &[QAItem],
    client: &BackendClient,
    runs: usize,
) -> Result<JudgeResult, EvalError> {
    let prompt = judge_prompt(set_a, set_b);
    let replies: Vec<Result<String, String>> = (0..runs)
        .map(|_| {
            client
                .judge(TextRequest::prompt(prompt.clone()))
                .map_err(|e| e.to_string())
        })
        .collect();
    average_judgements(&replies)
}

/// Per-video judge comparisons plus their unweighted mean. Only videos
/// present in both sets are judged; videos whose every run fails are left
/// out of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetJudgement {
    pub per_video: BTreeMap<String, JudgeResult>,
    pub failed: BTreeMap<String, String>,
    pub mean: JudgeResult,
}

pub fn judge_by_video(
    set_a: &[QAItem],
    set_b: &[QAItem],
    client: &BackendClient,
    runs: usize,
) -> Result<DatasetJudgement, EvalError> {
    let group = |items: &[QAItem]| {
        let mut m: BTreeMap<String, Vec<QAItem>> = BTreeMap::new();
        for it in items {
            m.entry(it.video_id.clone()).or_default().push(it.clone());
        }
        m
    };
    let (a, b) = (group(set_a), group(set_b));
    let mut per_video = BTreeMap::new();
    let mut failed = BTreeMap::new();
    for (video, qa_a) in &a {
        let Some(qa_b) = b.get(video) else {
            log::warn!("{video}: only in set A, not judged");
            continue;
        };
        match judge_qa_quality(qa_a, qa_b, &client.scoped(video, client.recorder()), runs) {
            Ok(r) => {
                per_video.insert(video.clone(), r);
            }
            Err(e) => {
                failed.insert(video.clone(), e.to_string());
            }
        }
    }
    if per_video.is_empty() {
        return Err(match failed.into_values().next() {
            Some(e) => EvalError::NoJudgeRuns(e),
            None => EvalError::EmptyBenchmark,
        });
    }
    let n = per_video.len() as f64;
    let mean_of = |pick: fn(&JudgeResult) -> [f64; 5]| {
        let mut s = [0.0; 5];
        for r in per_video.values() {
            for (acc, v) in s.iter_mut().zip(pick(r)) {
                *acc += v;
            }
        }
        QualityScore::from_values(s.map(|x| x / n))
    };
    let mean = JudgeResult {
        set_a: mean_of(|r| r.set_a.values()),
        set_b: mean_of(|r| r.set_b.values()),
        runs_used: per_video.values().map(|r| r.runs_used).sum(),
        runs_failed: per_video.values().map(|r| r.runs_failed).sum(),
    };
    Ok(DatasetJudgement {
        per_video,
        failed,
        mean,
    })
}

pub fn render_judge_table(r: &JudgeResult) -> String {
    let mut out = String::from("| Evaluation Dimension | Set A | Set B | Gain |\n|---|---|---|---|\n");
    for ((label, a), b) in QualityScore::LABELS.iter().zip(r.set_a.values()).zip(r.set_b.values()) {
        let _ = writeln!(out, "| {label} | {a:.1} | {b:.1} | {:+.1} |", b - a);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub videos: usize,
    pub questions: usize,
    pub avg_duration_s: f64,
    pub questions_per_video: f64,
    pub questions_per_second: f64,
    pub avg_question_chars: f64,
    pub answer_positions: [usize; 4],
    /// Bin start (characters, width 10) → count.
    pub question_length_hist: BTreeMap<usize, usize>,
    /// Bin start (whole seconds) → count.
    pub duration_hist: BTreeMap<u64, usize>,
}

pub const LENGTH_BIN: usize = 10;

fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

/// `durations` maps each video to its duration in seconds. Sums run over
/// sorted values so the result does not depend on input order.
pub fn dataset_stats(items: &[BenchItem], durations: &BTreeMap<String, f64>) -> Result<DatasetStats, EvalError> {
    let videos = durations.len();
    let questions = items.len();
    let mut answer_positions = [0usize; 4];
    let mut question_length_hist = BTreeMap::new();
    let mut total_chars = 0usize;
    for it in items {
        if let Some(v) = &it.video_id {
            if !durations.contains_key(v) {
                return Err(EvalError::UnknownVideo(v.clone()));
            }
        }
        if it.answer_index < 4 {
            answer_positions[it.answer_index] += 1;
        }
        let n = it.question.chars().count();
        total_chars += n;
        *question_length_hist.entry(n / LENGTH_BIN * LENGTH_BIN).or_insert(0) += 1;
    }
    let mut duration_hist = BTreeMap::new();
    for d in durations.values() {
        *duration_hist.entry(d.floor().max(0.0) as u64).or_insert(0) += 1;
    }
    let total_duration = sorted_sum(durations.values().copied().collect());
    let div = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(DatasetStats {
        videos,
        questions,
        avg_duration_s: div(total_duration, videos as f64),
        questions_per_video: div(questions as f64, videos as f64),
        questions_per_second: div(questions as f64, total_duration),
        avg_question_chars: div(total_chars as f64, questions as f64),
        answer_positions,
        question_length_hist,
        duration_hist,
    })
}

pub fn render_stats_table(s: &DatasetStats) -> String {
    format!(
        "| Metric | Value |\n|---|---|\n\
         | Average video duration | {:.2} seconds |\n\
         | Average questions per video | {:.2} |\n\
         | Average annotation density | {:.3} questions/second |\n\
         | Average question length | {:.1} characters |\n",
        s.avg_duration_s, s.questions_per_video, s.questions_per_second, s.avg_question_chars
    )
}
