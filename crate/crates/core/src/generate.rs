//! Caption and multiple-choice QA generation: prompt assembly from the
//! versioned templates, LLM calls, output parsing, answer shuffling,
//! category tagging and validation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::{serialize_motion, MotionAnnotation, OverlayPlan};
use crate::backends::protocol::{FrameRef, TextRequest};
use crate::backends::{BackendClient, BackendError};
use crate::model::PipelineConfig;

pub const CAPTION_TEMPLATE: &str = include_str!("../prompts/caption_v1.txt");
pub const CAPTION_TEMPLATE_VERSION: &str = "caption_v1";
pub const QA_TEMPLATE: &str = include_str!("../prompts/qa_v1.txt");
pub const QA_TEMPLATE_VERSION: &str = "qa_v1";

const MOTION_PLACEHOLDER: &str = "{motion_info}";

pub fn template_hash(template: &str) -> String {
    hex::encode(Sha256::digest(template.as_bytes()))
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("caption backend returned an empty reply")]
    EmptyCaption,
    #[error("no parseable QA items in the reply ({dropped} malformed)")]
    QaParse { dropped: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Everything sent to the LLM for one call.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPayload {
    pub template_version: &'static str,
    pub prompt: String,
    pub frames: Vec<FrameRef>,
    pub overlay: Option<OverlayPlan>,
    /// Stride applied to the motion JSON frame entries (1 = untouched).
    pub json_stride: usize,
    pub fingerprint: String,
}

impl PromptPayload {
    fn new(
        template_version: &'static str,
        template: &str,
        prompt: String,
        frames: Vec<FrameRef>,
        overlay: Option<OverlayPlan>,
        json_stride: usize,
    ) -> Self {
        let mut h = Sha256::new();
        h.update(template_version.as_bytes());
        h.update(template_hash(template).as_bytes());
        h.update(prompt.as_bytes());
        h.update(serde_json::to_vec(&frames).expect("frames serialize"));
        h.update(serde_json::to_vec(&overlay).expect("overlay serializes"));
        let fingerprint = hex::encode(h.finalize());
        Self {
            template_version,
            prompt,
            frames,
            overlay,
            json_stride,
            fingerprint,
        }
    }

    pub fn request(&self) -> TextRequest {
        TextRequest {
            prompt: self.prompt.clone(),
            frames: self.frames.clone(),
            overlay: self.overlay.clone(),
            model: None,
        }
    }
}

/// Keeps every `stride`-th frame entry of each object.
pub fn thin_motion(doc: &MotionAnnotation, stride: usize) -> MotionAnnotation {
    let stride = stride.max(1);
    let mut out = doc.clone();
    for e in out.objects.values_mut() {
        e.bbox = e.bbox.iter().step_by(stride).cloned().collect();
        e.interactions = e.interactions.iter().step_by(stride).cloned().collect();
    }
    out
}

fn caption_text(motion_json: &str) -> String {
    CAPTION_TEMPLATE.replacen(MOTION_PLACEHOLDER, motion_json, 1)
}

/// Substitutes the canonical motion JSON into the caption template. When
/// the prompt would exceed the character budget, the JSON is thinned to
/// every k-th frame for the smallest k that fits.
pub fn build_caption_prompt(
    doc: &MotionAnnotation,
    caption_frames: Vec<FrameRef>,
    overlay: Option<OverlayPlan>,
    cfg: &PipelineConfig,
) -> PromptPayload {
    let frames_total = doc.objects.values().map(|e| e.bbox.len()).max().unwrap_or(1).max(1);
    let mut stride = 1;
    let mut prompt = caption_text(&serialize_motion(doc));
    while prompt.chars().count() > cfg.max_prompt_chars && stride < frames_total {
        stride += 1;
        prompt = caption_text(&serialize_motion(&thin_motion(doc, stride)));
    }
    if stride > 1 {
        log::info!("motion JSON thinned to every {stride}th frame to fit the prompt budget");
    }
    PromptPayload::new(
        CAPTION_TEMPLATE_VERSION,
        CAPTION_TEMPLATE,
        prompt,
        caption_frames,
        overlay,
        stride,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub video_id: String,
    pub caption: String,
    pub template: String,
    pub fingerprint: String,
    pub json_stride: usize,
    #[serde(default)]
    pub model: Option<String>,
}

pub fn generate_caption(
    client: &BackendClient,
    video_id: &str,
    payload: &PromptPayload,
) -> Result<CaptionRecord, GenerateError> {
    let caption = client.llm(payload.request())?;
    if caption.trim().is_empty() {
        return Err(GenerateError::EmptyCaption);
    }
    Ok(CaptionRecord {
        video_id: video_id.to_string(),
        caption,
        template: payload.template_version.to_string(),
        fingerprint: payload.fingerprint.clone(),
        json_stride: payload.json_stride,
        model: None,
    })
}

pub fn build_qa_prompt(caption: &str, caption_frames: Vec<FrameRef>) -> PromptPayload {
    let prompt = format!("{}\nVideo caption:\n{caption}\n", QA_TEMPLATE);
    PromptPayload::new(QA_TEMPLATE_VERSION, QA_TEMPLATE, prompt, caption_frames, None, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    MotionRecognition,
    ActionOrder,
    MotionRelatedObject,
    LocationRelatedMotion,
    RepetitionCount,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::MotionRecognition,
        Category::ActionOrder,
        Category::MotionRelatedObject,
        Category::LocationRelatedMotion,
        Category::RepetitionCount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::MotionRecognition => "motion_recognition",
            Category::ActionOrder => "action_order",
            Category::MotionRelatedObject => "motion_related_object",
            Category::LocationRelatedMotion => "location_related_motion",
            Category::RepetitionCount => "repetition_count",
        }
    }

    pub fn abbreviation(self) -> &'static str {
        match self {
            Category::MotionRecognition => "MR",
            Category::ActionOrder => "AO",
            Category::MotionRelatedObject => "MO",
            Category::LocationRelatedMotion => "LM",
            Category::RepetitionCount => "RC",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        let s = s.trim().to_lowercase().replace([' ', '-'], "_");
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s || c.abbreviation().eq_ignore_ascii_case(&s))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A parsed item before shuffling; the correct answer is option 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RawQa {
    pub number: u32,
    pub question: String,
    pub options: Vec<String>,
}

impl RawQa {
    /// Renders the item back into the labeled `Q1:`/`A:`/`Answer:` block format.
    pub fn render(&self) -> String {
        let mut s = format!("Q{}: {}", self.number, self.question);
        for (letter, o) in ['A', 'B', 'C', 'D'].iter().zip(&self.options) {
            s.push_str(&format!("\n{letter}: {o}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedQa {
    pub items: Vec<RawQa>,
    /// Question blocks that did not yield exactly options A, B, C, D.
    pub dropped: usize,
}

static QUESTION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^\s*\[?\s*['"]?\s*Q(\d+)\s*[:.)]\s*(.*)$"#).expect("regex"));
static OPTION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^\s*['"]?\s*([A-H])\s*[:.)]\s*(.*)$"#).expect("regex"));

fn clean_tail(s: &str) -> String {
    s.trim_end_matches(|c: char| c.is_whitespace() || matches!(c, ']' | ',' | '\'' | '"'))
        .trim()
        .to_string()
}

struct Block {
    number: u32,
    question: String,
    options: Vec<(char, String)>,
    extra_lines: bool,
}

impl Block {
    fn finish(self) -> Option<RawQa> {
        let letters: Vec<char> = self.options.iter().map(|(l, _)| *l).collect();
        if letters != ['A', 'B', 'C', 'D'] || self.extra_lines || self.question.is_empty() {
            return None;
        }
        if self.options.iter().any(|(_, t)| t.is_empty()) {
            return None;
        }
        Some(RawQa {
            number: self.number,
            question: self.question,
            options: self.options.into_iter().map(|(_, t)| t).collect(),
        })
    }
}

/// Parses the list-of-strings reply format. Tolerates surrounding
/// brackets and quotes, escaped newlines, and blank-line variation.
/// Continuation lines extend the preceding question or option.
pub fn parse_qa_output(raw: &str) -> Result<ParsedQa, GenerateError> {
    let text = if raw.contains("\\n") {
        raw.replace("\\n", "\n")
    } else {
        raw.to_string()
    };
    let mut out = ParsedQa::default();
    let mut current: Option<Block> = None;
    let close = |b: Option<Block>, out: &mut ParsedQa| {
        if let Some(b) = b {
            match b.finish() {
                Some(item) => out.items.push(item),
                None => out.dropped += 1,
            }
        }
    };
    for line in text.lines() {
        if let Some(c) = QUESTION_RE.captures(line) {
            close(current.take(), &mut out);
            current = Some(Block {
                number: c[1].parse().unwrap_or(0),
                question: clean_tail(&c[2]),
                options: Vec::new(),
                extra_lines: false,
            });
            continue;
        }
        let Some(block) = current.as_mut() else { continue };
        if let Some(c) = OPTION_RE.captures(line) {
            let letter = c[1].chars().next().expect("one letter");
            block.options.push((letter, clean_tail(&c[2])));
            continue;
        }
        let rest = clean_tail(line.trim_start_matches(|c: char| c.is_whitespace() || c == '\'' || c == '"'));
        if rest.is_empty() || rest == "..." || rest == "[" {
            continue;
        }
        match block.options.last_mut() {
            Some((_, t)) => {
                t.push(' ');
                t.push_str(&rest);
            }
            None if block.question.is_empty() => block.question = rest,
            None => {
                block.question.push(' ');
                block.question.push_str(&rest);
            }
        }
        if block.options.len() > 4 {
            block.extra_lines = true;
        }
    }
    close(current.take(), &mut out);
    if out.items.is_empty() {
        return Err(GenerateError::QaParse { dropped: out.dropped });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub video_id: String,
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    pub category: Category,
    pub provenance: String,
}

impl QAItem {
    pub fn correct_text(&self) -> &str {
        &self.options[self.answer_index]
    }
}

/// Applies `perm`, where `perm[new_position] = old_position`.
pub fn apply_permutation(item: &QAItem, perm: [usize; 4]) -> QAItem {
    let options = perm.iter().map(|&old| item.options[old].clone()).collect();
    let answer_index = perm
        .iter()
        .position(|&old| old == item.answer_index)
        .expect("perm is a permutation");
    QAItem {
        options,
        answer_index,
        ..item.clone()
    }
}

/// Uniformly permutes the four options and tracks the correct one.
pub fn shuffle_choices<R: Rng + ?Sized>(item: &QAItem, rng: &mut R) -> QAItem {
    let mut perm = [0usize, 1, 2, 3];
    perm.shuffle(rng);
    apply_permutation(item, perm)
}

static REPETITION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bhow many times\b|\bhow often\b").expect("regex"));
static ORDER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(first|before|after|order)\b").expect("regex"));
static LOCATION_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\bwhere\b|\bwhich part\b|\b(left|right) side\b|\b(side|part|area) of the (scene|frame)\b")
        .expect("regex")
});
static OBJECT_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(which|what) (object|person)\b|\bwho (performs|is responsible)\b|\bwho\b").expect("regex")
});

/// Keyword classifier. Returns the category and whether a rule fired.
pub fn categorize_by_rules(question: &str) -> (Category, bool) {
    let q = question.to_lowercase();
    let rules: [(&LazyLock<Regex>, Category); 4] = [
        (&REPETITION_RE, Category::RepetitionCount),
        (&ORDER_RE, Category::ActionOrder),
        (&LOCATION_RE, Category::LocationRelatedMotion),
        (&OBJECT_RE, Category::MotionRelatedObject),
    ];
    for (re, cat) in rules {
        if re.is_match(&q) {
            return (cat, true);
        }
    }
    (Category::MotionRecognition, false)
}

pub fn category_prompt(question: &str) -> String {
    format!(
        "Classify the following video question into exactly one category: \
         motion_recognition, action_order, motion_related_object, location_related_motion, repetition_count.\n\
         Question: {question}\nReply with the category name only."
    )
}

/// Rules first; when none fires and a client is given, the LLM decides.
/// An unusable LLM reply falls back to motion recognition.
pub fn categorize_qa(question: &str, fallback: Option<&BackendClient>) -> Category {
    let (cat, fired) = categorize_by_rules(question);
    if fired {
        return cat;
    }
    let Some(client) = fallback else { return cat };
    match client.llm(TextRequest::prompt(category_prompt(question))) {
        Ok(reply) => Category::from_name(&reply).unwrap_or(cat),
        Err(e) => {
            log::warn!("category fallback failed: {e}");
            cat
        }
    }
}

pub fn normalize_option(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedQa {
    pub item: QAItem,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QaValidation {
    pub accepted: Vec<QAItem>,
    pub rejected: Vec<RejectedQa>,
    pub position_counts: [usize; 4],
    pub category_counts: BTreeMap<Category, usize>,
    /// Answer positions whose share deviates from 25% by more than 10 points.
    pub flagged_positions: Vec<usize>,
}

pub const POSITION_DEVIATION_POINTS: f64 = 10.0;

fn rejection_reason(item: &QAItem) -> Option<String> {
    if item.options.len() != 4 {
        return Some(format!("{} options", item.options.len()));
    }
    if item.answer_index >= 4 {
        return Some(format!("answer index {}", item.answer_index));
    }
    if item.question.trim().is_empty() || item.options.iter().any(|o| normalize_option(o).is_empty()) {
        return Some("empty text".into());
    }
    let norm: Vec<String> = item.options.iter().map(|o| normalize_option(o)).collect();
    for i in 0..4 {
        for j in i + 1..4 {
            if norm[i] == norm[j] {
                return Some(format!("options {i} and {j} are indistinguishable"));
            }
        }
    }
    if normalize_option(item.correct_text()) == normalize_option(&item.question) {
        return Some("answer repeats the question".into());
    }
    None
}

pub fn validate_qa(items: Vec<QAItem>) -> QaValidation {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for item in items {
        match rejection_reason(&item) {
            Some(reason) => rejected.push(RejectedQa { item, reason }),
            None => accepted.push(item),
        }
    }
    let mut position_counts = [0usize; 4];
    let mut category_counts = BTreeMap::new();
    for q in &accepted {
        position_counts[q.answer_index] += 1;
        *category_counts.entry(q.category).or_insert(0) += 1;
    }
    let total = accepted.len();
    let flagged_positions = if total == 0 {
        Vec::new()
    } else {
        (0..4)
            .filter(|&p| (100.0 * position_counts[p] as f64 / total as f64 - 25.0).abs() > POSITION_DEVIATION_POINTS)
            .collect()
    };
    QaValidation {
        accepted,
        rejected,
        position_counts,
        category_counts,
        flagged_positions,
    }
}

/// Result of the QA stage for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct QaOutcome {
    pub raw: String,
    pub fingerprint: String,
    pub dropped: usize,
    pub validation: QaValidation,
}

/// Calls the LLM with the QA prompt, parses, categorizes, shuffles with
/// `rng` (one permutation per item, in reply order) and validates.
pub fn generate_qa<R: Rng + ?Sized>(
    client: &BackendClient,
    video_id: &str,
    payload: &PromptPayload,
    rng: &mut R,
    cfg: &PipelineConfig,
) -> Result<QaOutcome, GenerateError> {
    let raw = client.llm(payload.request())?;
    let parsed = parse_qa_output(&raw)?;
    let fallback = cfg.llm_category_fallback.then_some(client);
    let items = parsed
        .items
        .iter()
        .map(|r| {
            let item = QAItem {
                video_id: video_id.to_string(),
                question: r.question.clone(),
                options: r.options.clone(),
                answer_index: 0,
                category: categorize_qa(&r.question, fallback),
                provenance: format!("{video_id}.qa_raw.txt#Q{}", r.number),
            };
            shuffle_choices(&item, rng)
        })
        .collect();
    Ok(QaOutcome {
        raw,
        fingerprint: payload.fingerprint.clone(),
        dropped: parsed.dropped,
        validation: validate_qa(items),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TWO: &str = "[\n'Q1: What action is the person performing with their right hand?\nA: Raising the right hand.\nB: Waving the left hand.\nC: Sitting still.\nD: Clapping.', \n\n'Q2: Which action happens first in the video?\nA: The person picks up the cup.\nB: The person stirs.\nC: The person drinks.\nD: The person leaves.'\n]";

    fn item(options: [&str; 4]) -> QAItem {
        QAItem {
            video_id: "v".into(),
            question: "What happens?".into(),
            options: options.iter().map(|s| s.to_string()).collect(),
            answer_index: 0,
            category: Category::MotionRecognition,
            provenance: "p".into(),
        }
    }

    #[test]
    fn caption_prompt_substitutes_json() {
        let cfg = PipelineConfig::default();
        let p = build_caption_prompt(&MotionAnnotation::default(), vec![], None, &cfg);
        assert!(p
            .prompt
            .contains("The motion information for the video in JSON format is as follows {}."));
        assert_eq!(p.json_stride, 1);
        assert!(!p.prompt.contains(MOTION_PLACEHOLDER));
    }

    #[test]
    fn qa_prompt_keeps_template_and_caption() {
        let p = build_qa_prompt("A ball rolls left.", vec![]);
        assert!(p.prompt.contains("Always put the correct answer at the first choice."));
        assert!(p.prompt.contains("A ball rolls left."));
        assert_ne!(
            p.fingerprint,
            build_qa_prompt("A ball rolls right.", vec![]).fingerprint
        );
    }

    #[test]
    fn parses_bracketed_and_plain_alike() {
        let a = parse_qa_output(TWO).unwrap();
        assert_eq!(a.items.len(), 2);
        assert_eq!(a.dropped, 0);
        assert_eq!(a.items[0].options[0], "Raising the right hand.");
        assert_eq!(a.items[1].options[3], "The person leaves.");
        let plain = TWO.replace(['[', ']', '\''], "");
        assert_eq!(parse_qa_output(&plain).unwrap(), a);
    }

    #[test]
    fn three_option_item_dropped() {
        let raw = "Q1: What moves?\nA: a\nB: b\nC: c\n\nQ2: What else?\nA: a\nB: b\nC: c\nD: d";
        let p = parse_qa_output(raw).unwrap();
        assert_eq!((p.items.len(), p.dropped), (1, 1));
        assert!(matches!(
            parse_qa_output("nothing here"),
            Err(GenerateError::QaParse { dropped: 0 })
        ));
    }

    #[test]
    fn fifth_option_is_not_a_continuation() {
        let raw = "Q1: Where?\nA: a\nB: b\nC: c\nD: d\nE: e\n\nQ2: What?\nA: a\nB: b\nC: c\nD: d";
        let p = parse_qa_output(raw).unwrap();
        assert_eq!((p.items.len(), p.dropped), (1, 1));
        assert_eq!(p.items[0].number, 2);
    }

    #[test]
    fn render_round_trips() {
        let p = parse_qa_output(TWO).unwrap();
        for it in &p.items {
            assert_eq!(parse_qa_output(&it.render()).unwrap().items, vec![it.clone()]);
        }
    }

    #[test]
    fn permutation_tracks_answer() {
        let it = item(["right", "w1", "w2", "w3"]);
        assert_eq!(apply_permutation(&it, [0, 1, 2, 3]).answer_index, 0);
        let moved = apply_permutation(&it, [1, 2, 0, 3]);
        assert_eq!(moved.answer_index, 2);
        assert_eq!(moved.correct_text(), "right");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = shuffle_choices(&it, &mut rng);
            assert_eq!(s.correct_text(), "right");
            let mut sorted = s.options.clone();
            sorted.sort();
            assert_eq!(sorted, ["right", "w1", "w2", "w3"]);
        }
    }

    #[test]
    fn categories_from_keywords() {
        let c = |q: &str| categorize_by_rules(q).0;
        assert_eq!(c("How many times does the person wave?"), Category::RepetitionCount);
        assert_eq!(c("Which action happens first in the video?"), Category::ActionOrder);
        assert_eq!(
            c("What action is the person performing with their right hand?"),
            Category::MotionRecognition
        );
        assert_eq!(
            c("Where in the scene does the walking action take place?"),
            Category::LocationRelatedMotion
        );
        assert_eq!(
            c("What object performs the cutting motion?"),
            Category::MotionRelatedObject
        );
        assert_eq!(c("Which direction does the car move?"), Category::MotionRecognition);
        assert_eq!(Category::from_name("Action Order"), Some(Category::ActionOrder));
    }

    #[test]
    fn validation_rules() {
        let v = validate_qa(vec![
            item(["same", "Same.", "x", "y"]),
            QAItem {
                question: "Jump".into(),
                ..item(["jump!", "a", "b", "c"])
            },
            item(["a", "b", "c", "d"]),
        ]);
        assert_eq!(v.accepted.len(), 1);
        assert_eq!(v.rejected.len(), 2);

        let skewed: Vec<QAItem> = [(0, 40), (1, 10), (2, 25), (3, 25)]
            .iter()
            .flat_map(|&(pos, n)| {
                (0..n).map(move |_| QAItem {
                    answer_index: pos,
                    ..item(["a", "b", "c", "d"])
                })
            })
            .collect();
        let v = validate_qa(skewed);
        assert_eq!(v.position_counts, [40, 10, 25, 25]);
        assert_eq!(v.flagged_positions, [0, 1]);
    }
}
