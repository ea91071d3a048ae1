//! Dataset curation driver: runs every stage per video on a worker pool,
//! writes per-video artifacts plus dataset-level files, and supports resume
//! through a manifest keyed by the configuration hash.
//!
//! Output layout under the output directory:
//! `<id>.motion.json`, `<id>.idmap.json`, `<id>.overlay.json`,
//! `<id>.caption.json`, `<id>.qa_raw.txt`, `<id>.qa.jsonl`,
//! `<id>.qa_report.json`, then `qa.jsonl`, `videos.jsonl` and
//! `manifest.json`. Nothing written depends on wall-clock time or on the
//! output path, so identical inputs give identical trees.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::{
    build_idmap, build_motion_annotation, compute_interactions, render_overlay_plan, serialize_motion, validate_motion,
};
use crate::backends::{BackendClient, CallPolicy, FrameMode, Recorder, Transport};
use crate::camera::{filter_video, pose_sample_positions};
use crate::detect::detect_first_frame;
use crate::evaluate::BenchItem;
use crate::generate::{
    build_caption_prompt, build_qa_prompt, generate_caption, generate_qa, template_hash, CAPTION_TEMPLATE, QA_TEMPLATE,
};
use crate::model::PipelineConfig;
use crate::preprocess::{extract_frames, sample_segment, DecoderRegistry, FrameDecoder};
use crate::track::{assemble_tracklets, init_tracks, run_tracking, TrackError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no supported videos under {0}")]
    NoVideos(PathBuf),
    #[error("two inputs map to video id {0:?}")]
    DuplicateVideo(String),
    #[error("cannot resume: {0}")]
    Resume(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    /// Base URL of the model services for HTTP mode.
    pub base_url: Option<String>,
    /// Environment variable holding the bearer token.
    pub token_env: Option<String>,
    pub max_attempts: u32,
    pub in_flight: usize,
    pub timeout_ms: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        let p = CallPolicy::default();
        Self {
            base_url: None,
            token_env: None,
            max_attempts: p.max_attempts,
            in_flight: p.in_flight,
            timeout_ms: p.timeout_ms,
        }
    }
}

impl BackendSection {
    pub fn policy(&self) -> CallPolicy {
        CallPolicy {
            max_attempts: self.max_attempts,
            in_flight: self.in_flight,
            timeout_ms: self.timeout_ms,
        }
    }
}

/// Configuration file layout (TOML): `workers`, `[pipeline]`, `[backend]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurateConfig {
    pub workers: Option<usize>,
    pub pipeline: PipelineConfig,
    pub backend: BackendSection,
}

impl CurateConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: CurateConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.pipeline
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// Hash of everything that influences outputs. Worker count and backend
/// transport settings are excluded.
pub fn config_hash(cfg: &PipelineConfig) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.update(template_hash(CAPTION_TEMPLATE).as_bytes());
    h.update(template_hash(QA_TEMPLATE).as_bytes());
    hex::encode(h.finalize())
}

/// Independent RNG stream per (seed, video, purpose).
pub fn stream_rng(seed: u64, video_id: &str, purpose: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(video_id.as_bytes());
    h.update([0]);
    h.update(purpose.as_bytes());
    let d = h.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(d[..8].try_into().expect("8 bytes")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoStatus {
    Done,
    Excluded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub source: String,
    pub config_hash: String,
    pub status: VideoStatus,
    /// Why the video is excluded or failed, e.g. `camera_motion`.
    #[serde(default)]
    pub reason: Option<String>,
    /// Stage name → `ok`, `skipped` or an error message, in run order.
    pub stages: IndexMap<String, String>,
    #[serde(default)]
    pub source_duration: Option<f64>,
    #[serde(default)]
    pub t_start: Option<f64>,
    /// Segment duration; the per-video duration used in statistics.
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub frame_count: Option<usize>,
    #[serde(default)]
    pub frame_gaps: Vec<usize>,
    #[serde(default)]
    pub camera_score: Option<f64>,
    #[serde(default)]
    pub track_aborted_at: Option<usize>,
    #[serde(default)]
    pub keyframes_refined: Vec<usize>,
    #[serde(default)]
    pub entities: usize,
    #[serde(default)]
    pub questions: usize,
    #[serde(default)]
    pub qa_dropped: usize,
    #[serde(default)]
    pub qa_rejected: usize,
    /// Output file name → sha256 of its bytes.
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
}

impl VideoRecord {
    fn new(video_id: &str, source: &str, config_hash: &str) -> Self {
        Self {
            video_id: video_id.to_string(),
            source: source.to_string(),
            config_hash: config_hash.to_string(),
            status: VideoStatus::Failed,
            reason: None,
            stages: IndexMap::new(),
            source_duration: None,
            t_start: None,
            duration: None,
            frame_count: None,
            frame_gaps: Vec::new(),
            camera_score: None,
            track_aborted_at: None,
            keyframes_refined: Vec::new(),
            entities: 0,
            questions: 0,
            qa_dropped: 0,
            qa_rejected: 0,
            outputs: BTreeMap::new(),
        }
    }

    fn ok(&mut self, stage: &str) {
        self.stages.insert(stage.into(), "ok".into());
    }

    fn fail(mut self, stage: &str, err: impl std::fmt::Display) -> Self {
        self.stages.insert(stage.into(), format!("error: {err}"));
        self.status = VideoStatus::Failed;
        self.reason = Some(format!("{stage}: {err}"));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub templates: BTreeMap<String, String>,
    /// Input file names in processing order.
    pub inputs: Vec<String>,
    pub videos: BTreeMap<String, VideoRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    fn new(cfg: &PipelineConfig, inputs: Vec<String>) -> Self {
        Self {
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            templates: BTreeMap::from([
                ("caption".to_string(), template_hash(CAPTION_TEMPLATE)),
                ("qa".to_string(), template_hash(QA_TEMPLATE)),
            ]),
            inputs,
            videos: BTreeMap::new(),
        }
    }

    pub fn load(out: &Path) -> Result<Option<Self>, PipelineError> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| PipelineError::Resume(format!("unreadable manifest: {e}")))
    }

    fn save(&self, out: &Path) -> Result<(), PipelineError> {
        write_json_pretty(&out.join(MANIFEST_FILE), self)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_json_pretty<T: Serialize>(path: &Path, v: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

/// Supported inputs under `input` (a directory or a single file), sorted by
/// video id.
pub fn discover_videos(input: &Path, registry: &DecoderRegistry) -> Result<Vec<(String, PathBuf)>, PipelineError> {
    let mut out = Vec::new();
    if input.is_dir() {
        for entry in fs::read_dir(input).map_err(io_err(input))? {
            let p = entry.map_err(io_err(input))?.path();
            if p.is_file() {
                if let Some(id) = registry.video_id(&p) {
                    out.push((id, p));
                }
            }
        }
    } else if let Some(id) = registry.video_id(input) {
        out.push((id, input.to_path_buf()));
    }
    out.sort();
    for w in out.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(PipelineError::DuplicateVideo(w[0].0.clone()));
        }
    }
    if out.is_empty() {
        return Err(PipelineError::NoVideos(input.to_path_buf()));
    }
    Ok(out)
}

pub struct CurateOptions {
    pub input: PathBuf,
    pub out: PathBuf,
    pub config: PipelineConfig,
    pub workers: usize,
    pub policy: CallPolicy,
    pub frame_mode: FrameMode,
    pub transcript_dir: Option<PathBuf>,
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurateReport {
    pub manifest: Manifest,
    /// Videos taken from a previous run.
    pub resumed: Vec<String>,
    pub qa_items: usize,
}

struct VideoJob<'a> {
    video_id: &'a str,
    path: &'a Path,
    out: &'a Path,
    cfg: &'a PipelineConfig,
    config_hash: &'a str,
    decoder: &'a dyn FrameDecoder,
    client: BackendClient,
}

fn record_output(rec: &mut VideoRecord, out: &Path, name: String, bytes: &[u8]) -> Result<(), PipelineError> {
    write_bytes(&out.join(&name), bytes)?;
    rec.outputs.insert(name, sha256_hex(bytes));
    Ok(())
}

fn json_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("serializable");
    s.push('\n');
    s
}

fn json_pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Runs every stage for one video. Stage failures are recorded in the
/// returned record; only output I/O errors abort.
fn process_video(job: VideoJob<'_>) -> Result<VideoRecord, PipelineError> {
    let VideoJob {
        video_id,
        path,
        out,
        cfg,
        config_hash,
        decoder,
        client,
    } = job;
    let source = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut rec = VideoRecord::new(video_id, &source, config_hash);

    let meta = match decoder.probe(path) {
        Ok(m) => m,
        Err(e) => return Ok(rec.fail("probe", e)),
    };
    rec.source_duration = Some(meta.duration);
    rec.ok("probe");

    let plan = match sample_segment(&meta, cfg, &mut stream_rng(cfg.seed, video_id, "segment")) {
        Ok(p) => p,
        Err(e) => return Ok(rec.fail("segment", e)),
    };
    rec.t_start = Some(plan.t_start);
    rec.duration = Some(plan.t_s);
    rec.ok("segment");

    let frames = match extract_frames(decoder, path, &meta, &plan) {
        Ok(f) => f,
        Err(e) => return Ok(rec.fail("frames", e)),
    };
    rec.frame_count = Some(frames.len());
    rec.frame_gaps = frames.gaps.clone();
    rec.ok("frames");

    let present: Vec<usize> = (0..frames.len()).filter(|&i| frames.get(i).is_some()).collect();
    let sampled: Vec<usize> = pose_sample_positions(present.len(), cfg.pose_sample_frames)
        .into_iter()
        .map(|p| present[p])
        .collect();
    let refs: Result<Vec<_>, _> = sampled
        .iter()
        .map(|&i| client.frame_ref(frames.get(i).expect("present frame")))
        .collect();
    let report = refs
        .and_then(|r| client.camera_poses(r))
        .map_err(|e| e.to_string())
        .and_then(|poses| filter_video(&poses, cfg).map_err(|e| e.to_string()));
    match report {
        Ok(r) => {
            rec.camera_score = Some(r.score);
            if r.excluded {
                rec.stages.insert(
                    "camera".into(),
                    format!("excluded: camera_motion (score {:.6})", r.score),
                );
                rec.status = VideoStatus::Excluded;
                rec.reason = Some("camera_motion".into());
                return Ok(rec);
            }
            rec.ok("camera");
        }
        Err(e) => return Ok(rec.fail("camera", e)),
    }

    let Some(first) = frames.get(0) else {
        return Ok(rec.fail("detect", "first frame is missing"));
    };
    let detections = match client
        .frame_ref(first)
        .and_then(|f| detect_first_frame(&client, f, &meta, cfg))
    {
        Ok(d) => d,
        Err(e) => return Ok(rec.fail("detect", e)),
    };
    rec.ok("detect");

    let mut session = match init_tracks(video_id, &detections, frames.len(), cfg) {
        Ok(s) => s,
        Err(e) => return Ok(rec.fail("track", e)),
    };
    match run_tracking(&client, &frames, &mut session, cfg) {
        Ok(()) => rec.ok("track"),
        Err(TrackError::Abort { frame, source }) => {
            log::warn!("{video_id}: tracking aborted at frame {frame}: {source}");
            rec.track_aborted_at = Some(frame);
            rec.stages
                .insert("track".into(), format!("partial: aborted at frame {frame}: {source}"));
        }
        Err(e) => return Ok(rec.fail("track", e)),
    }
    rec.keyframes_refined = session.refined_keyframes().to_vec();

    let tracklets = assemble_tracklets(&session);
    let interactions = compute_interactions(&tracklets, cfg);
    let doc = match build_motion_annotation(&tracklets, &interactions, frames.len())
        .and_then(|d| validate_motion(&d).map(|_| d))
    {
        Ok(d) => d,
        Err(e) => return Ok(rec.fail("annotate", e)),
    };
    rec.entities = doc.objects.len();
    let mut motion = serialize_motion(&doc);
    motion.push('\n');
    record_output(&mut rec, out, format!("{video_id}.motion.json"), motion.as_bytes())?;
    record_output(
        &mut rec,
        out,
        format!("{video_id}.idmap.json"),
        &json_pretty(&build_idmap(&tracklets)),
    )?;
    let overlay = render_overlay_plan(&tracklets, frames.len(), cfg);
    record_output(
        &mut rec,
        out,
        format!("{video_id}.overlay.json"),
        &json_pretty(&overlay),
    )?;
    rec.ok("annotate");

    let caption_frames: Result<Vec<_>, _> = frames
        .caption_frames()
        .into_iter()
        .map(|f| client.frame_ref(f))
        .collect();
    let caption_frames = match caption_frames {
        Ok(f) => f,
        Err(e) => return Ok(rec.fail("caption", e)),
    };
    let shown: Vec<usize> = caption_frames.iter().map(|f| f.index).collect();
    let payload = build_caption_prompt(&doc, caption_frames.clone(), Some(overlay.subset(&shown)), cfg);
    let caption = match generate_caption(&client, video_id, &payload) {
        Ok(c) => c,
        Err(e) => return Ok(rec.fail("caption", e)),
    };
    let mut caption_doc = serde_json::to_value(&caption).expect("serializable");
    caption_doc["config_hash"] = config_hash.into();
    record_output(
        &mut rec,
        out,
        format!("{video_id}.caption.json"),
        &json_pretty(&caption_doc),
    )?;
    rec.ok("caption");

    let qa_payload = build_qa_prompt(&caption.caption, caption_frames);
    let mut rng = stream_rng(cfg.seed, video_id, "qa_shuffle");
    let outcome = match generate_qa(&client, video_id, &qa_payload, &mut rng, cfg) {
        Ok(o) => o,
        Err(e) => return Ok(rec.fail("qa", e)),
    };
    record_output(&mut rec, out, format!("{video_id}.qa_raw.txt"), outcome.raw.as_bytes())?;
    let lines: String = outcome.validation.accepted.iter().map(json_line).collect();
    record_output(&mut rec, out, format!("{video_id}.qa.jsonl"), lines.as_bytes())?;
    let report = serde_json::json!({
        "video_id": video_id,
        "config_hash": config_hash,
        "fingerprint": outcome.fingerprint,
        "parsed": outcome.validation.accepted.len() + outcome.validation.rejected.len(),
        "dropped": outcome.dropped,
        "accepted": outcome.validation.accepted.len(),
        "rejected": outcome.validation.rejected.iter().map(|r| serde_json::json!({
            "question": r.item.question, "reason": r.reason
        })).collect::<Vec<_>>(),
        "position_counts": outcome.validation.position_counts,
        "category_counts": outcome.validation.category_counts,
        "flagged_positions": outcome.validation.flagged_positions,
    });
    record_output(
        &mut rec,
        out,
        format!("{video_id}.qa_report.json"),
        &json_pretty(&report),
    )?;
    rec.questions = outcome.validation.accepted.len();
    rec.qa_dropped = outcome.dropped;
    rec.qa_rejected = outcome.validation.rejected.len();
    rec.ok("qa");
    rec.status = VideoStatus::Done;
    Ok(rec)
}

/// A previous record is reusable when it finished (done or excluded) and
/// all its outputs are still on disk with matching hashes.
fn reusable(rec: &VideoRecord, out: &Path) -> bool {
    rec.status != VideoStatus::Failed
        && rec.outputs.iter().all(|(name, hash)| {
            fs::read(out.join(name))
                .map(|b| &sha256_hex(&b) == hash)
                .unwrap_or(false)
        })
}

pub fn curate(
    opts: &CurateOptions,
    transport: Arc<dyn Transport>,
    registry: &DecoderRegistry,
) -> Result<CurateReport, PipelineError> {
    opts.config
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let videos = discover_videos(&opts.input, registry)?;
    fs::create_dir_all(&opts.out).map_err(io_err(&opts.out))?;
    if let Some(dir) = &opts.transcript_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }

    let inputs = videos
        .iter()
        .map(|(_, p)| {
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect();
    let mut manifest = Manifest::new(&opts.config, inputs);
    let hash = manifest.config_hash.clone();
    let mut resumed = Vec::new();
    if opts.resume {
        if let Some(prev) = Manifest::load(&opts.out)? {
            if prev.config_hash != manifest.config_hash {
                return Err(PipelineError::Resume(format!(
                    "output was produced with config {} but the current config is {}",
                    prev.config_hash, manifest.config_hash
                )));
            }
            for (id, rec) in prev.videos {
                if videos.iter().any(|(v, _)| *v == id) && reusable(&rec, &opts.out) {
                    resumed.push(id.clone());
                    manifest.videos.insert(id, rec);
                }
            }
            for id in &resumed {
                log::info!("{id}: reusing previous results");
            }
        }
    }

    let todo: Vec<&(String, PathBuf)> = videos
        .iter()
        .filter(|(id, _)| !manifest.videos.contains_key(id))
        .collect();
    let client = BackendClient::with_frame_mode(transport, opts.policy.clone(), opts.frame_mode.clone());
    let shared = Mutex::new(manifest);
    let next = AtomicUsize::new(0);
    let first_error: Mutex<Option<PipelineError>> = Mutex::new(None);
    let workers = opts.workers.max(1).min(todo.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((video_id, path)) = todo.get(i) else { break };
                if first_error.lock().unwrap().is_some() {
                    break;
                }
                let result = (|| {
                    let recorder = match &opts.transcript_dir {
                        Some(dir) => {
                            let p = dir.join(format!("{video_id}.jsonl"));
                            Some(Arc::new(Recorder::create(&p).map_err(io_err(&p))?))
                        }
                        None => None,
                    };
                    let rec = process_video(VideoJob {
                        video_id,
                        path,
                        out: &opts.out,
                        cfg: &opts.config,
                        config_hash: &hash,
                        decoder: registry,
                        client: client.scoped(video_id, recorder.clone()),
                    })?;
                    if let Some(r) = recorder {
                        if let Err(e) = r.finish() {
                            log::warn!("{video_id}: transcript incomplete: {e}");
                        }
                    }
                    log::info!("{video_id}: {:?}", rec.status);
                    let mut m = shared.lock().unwrap();
                    m.videos.insert(video_id.clone(), rec);
                    m.save(&opts.out)
                })();
                if let Err(e) = result {
                    first_error.lock().unwrap().get_or_insert(e);
                    break;
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    let manifest = shared.into_inner().unwrap();

    let mut qa = String::new();
    let mut qa_items = 0;
    let mut video_lines = String::new();
    for (id, rec) in &manifest.videos {
        video_lines.push_str(&json_line(rec));
        if rec.status == VideoStatus::Done {
            let p = opts.out.join(format!("{id}.qa.jsonl"));
            let text = fs::read_to_string(&p).map_err(io_err(&p))?;
            qa_items += text.lines().filter(|l| !l.trim().is_empty()).count();
            qa.push_str(&text);
        }
    }
    write_bytes(&opts.out.join("qa.jsonl"), qa.as_bytes())?;
    write_bytes(&opts.out.join("videos.jsonl"), video_lines.as_bytes())?;
    manifest.save(&opts.out)?;
    Ok(CurateReport {
        manifest,
        resumed,
        qa_items,
    })
}

/// Reads `qa.jsonl` and `videos.jsonl` from a curated output directory:
/// the questions and the segment duration of every finished video.
pub fn load_dataset(out: &Path) -> Result<(Vec<BenchItem>, BTreeMap<String, f64>), PipelineError> {
    let read = |name: &str| -> Result<String, PipelineError> {
        let p = out.join(name);
        fs::read_to_string(&p).map_err(io_err(&p))
    };
    let mut items = Vec::new();
    for (n, line) in read("qa.jsonl")?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(line).map_err(|e| PipelineError::Config(format!("qa.jsonl:{}: {e}", n + 1)))?);
    }
    let mut durations = BTreeMap::new();
    for (n, line) in read("videos.jsonl")?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: VideoRecord =
            serde_json::from_str(line).map_err(|e| PipelineError::Config(format!("videos.jsonl:{}: {e}", n + 1)))?;
        if rec.status == VideoStatus::Done {
            if let Some(d) = rec.duration {
                durations.insert(rec.video_id, d);
            }
        }
    }
    Ok((items, durations))
}
