//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always print; exits non-zero on any failure.
//!
//! Every expected value here comes from an independent oracle written in
//! this file (raster counting, literal arithmetic, exhaustive enumeration)
//! or from a fixture with hand-written expectations.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use motion_curate::annotate::{parse_motion_json, serialize_motion};
use motion_curate::backends::mock::{EndpointScript, ScriptedReply};
use motion_curate::backends::{BackendClient, CallPolicy, Endpoint, MockBackend, MockScript};
use motion_curate::camera::{filter_video, motion_score, CameraPose, PoseDeltas};
use motion_curate::evaluate::{dataset_stats, extract_answer_letter, render_stats_table, run_benchmark, BenchItem};
use motion_curate::generate::{parse_qa_output, shuffle_choices, Category, QAItem};
use motion_curate::pipeline::load_dataset;
use motion_curate::preprocess::sample_segment;
use motion_curate::{
    allocate_entity_ids, iou, EntityKind, NormalizedBBox, PipelineConfig, TranslationNormalization, VideoMeta,
};

// Pinned tolerances and limits.
const SEGMENT_DRAWS: usize = 10_000;
const SEGMENT_MEAN_RANGE: (f64, f64) = (7.4, 7.6);
const SEGMENT_BUDGET: Duration = Duration::from_secs(5);
const CAMERA_TOL: f64 = 1e-9;
const CAMERA_PERTURBATIONS: usize = 1_000;
const IOU_INTEGER_PAIRS: usize = 10_000;
const IOU_REAL_PAIRS: usize = 200;
const IOU_RASTER: usize = 1024;
const IOU_REAL_TOL: f64 = 2e-3;
const IOU_BUDGET: Duration = Duration::from_secs(30);
const ID_ROOTS: u32 = 100;
const ID_OBJECTS: u32 = 10_000;
const SHUFFLES: usize = 10_000;
const SHUFFLE_BAND: (f64, f64) = (0.235, 0.265);
const E2E_BUDGET: Duration = Duration::from_secs(60);
const STATS_REL_TOL: f64 = 1e-9;

type Outcome = Result<String, String>;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(rel: &str) -> PathBuf {
    workspace().join("fixtures").join(rel)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn segment_sampler() -> Outcome {
    let cfg = PipelineConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    for t_v in [4.0, 6.0, 20.0, 600.0] {
        let meta = VideoMeta::new("v.synth.json".into(), 64, 48, 2.0, t_v, (2.0 * t_v) as u64).unwrap();
        for _ in 0..SEGMENT_DRAWS {
            let p = sample_segment(&meta, &cfg, &mut rng).map_err(|e| e.to_string())?;
            if t_v <= 5.0 {
                ensure(p.t_s == t_v && p.t_start == 0.0, || {
                    format!("t_v={t_v}: short video not passed through: ({}, {})", p.t_start, p.t_s)
                })?;
            } else {
                ensure(p.t_s >= 5.0 && p.t_s <= t_v.min(10.0), || {
                    format!("t_v={t_v}: t_s={}", p.t_s)
                })?;
                ensure(p.t_start >= 0.0 && p.t_start <= t_v - p.t_s, || {
                    format!("t_v={t_v}: t_start={} with t_s={}", p.t_start, p.t_s)
                })?;
            }
        }
    }
    let meta = VideoMeta::new("v.synth.json".into(), 64, 48, 2.0, 60.0, 120).unwrap();
    let mut sum = 0.0;
    for _ in 0..SEGMENT_DRAWS {
        sum += sample_segment(&meta, &cfg, &mut rng).map_err(|e| e.to_string())?.t_s;
    }
    let mean = sum / SEGMENT_DRAWS as f64;
    let elapsed = start.elapsed();
    ensure((SEGMENT_MEAN_RANGE.0..=SEGMENT_MEAN_RANGE.1).contains(&mean), || {
        format!("mean t_s at t_v=60 is {mean:.4}")
    })?;
    ensure(elapsed < SEGMENT_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "4x{SEGMENT_DRAWS} draws valid, mean t_s(60)={mean:.4}, {elapsed:.2?}"
    ))
}

fn camera_filter() -> Outcome {
    let cfg = PipelineConfig {
        motion_alpha: 1.0,
        motion_beta: 1.0,
        motion_gamma: 0.5,
        motion_delta: 0.5,
        motion_threshold: 0.3,
        ..Default::default()
    };
    let still = vec![CameraPose::identity(); 16];
    let r = filter_video(&still, &cfg).map_err(|e| e.to_string())?;
    ensure(r.score.abs() <= CAMERA_TOL && !r.excluded, || {
        format!("static: score {} excluded {}", r.score, r.excluded)
    })?;

    // Translation steps 0.1, 0.2, 0.3 along x: mean 0.2, max 0.3, no rotation.
    let raw = PipelineConfig {
        translation_normalization: TranslationNormalization::None,
        ..cfg.clone()
    };
    let worked: Vec<CameraPose> = [0.0, 0.1, 0.3, 0.6]
        .iter()
        .map(|&x| CameraPose::yaw(0.0, [x, 0.0, 0.0]))
        .collect();
    let r = filter_video(&worked, &raw).map_err(|e| e.to_string())?;
    ensure((r.score - 0.35).abs() <= CAMERA_TOL && r.excluded, || {
        format!("worked example: score {} excluded {}", r.score, r.excluded)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..CAMERA_PERTURBATIONS {
        let n = rng.random_range(1..12);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let rot: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::PI)).collect();
        let base = motion_score(&PoseDeltas::new(t.clone(), rot.clone()).unwrap(), &cfg);
        let (mut t2, mut r2) = (t.clone(), rot.clone());
        let k = rng.random_range(0..n);
        let bump = rng.random_range(0.0..1.0);
        if rng.random_bool(0.5) {
            t2[k] += bump;
        } else {
            r2[k] += bump;
        }
        let bumped = motion_score(&PoseDeltas::new(t2, r2).unwrap(), &cfg);
        ensure(bumped >= base - CAMERA_TOL, || {
            format!("perturbation {i}: {base} -> {bumped}")
        })?;
    }
    Ok(format!(
        "static 0, worked example {:.9} excluded, {CAMERA_PERTURBATIONS} perturbations monotone",
        r.score
    ))
}

/// Cell-center counting on the integer grid.
fn raster_iou_int(a: [u32; 4], b: [u32; 4]) -> f64 {
    let (mut inter, mut union) = (0u32, 0u32);
    for y in 0..64 {
        for x in 0..64 {
            let ina = x >= a[0] && x < a[2] && y >= a[1] && y < a[3];
            let inb = x >= b[0] && x < b[2] && y >= b[1] && y < b[3];
            inter += (ina && inb) as u32;
            union += (ina || inb) as u32;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Summed per-cell coverage on an n×n raster of the unit square.
fn raster_iou_real(a: [f64; 4], b: [f64; 4], n: usize) -> f64 {
    let cell = 1.0 / n as f64;
    let overlap = |lo: f64, hi: f64, i: usize| {
        let (c0, c1) = (i as f64 * cell, (i + 1) as f64 * cell);
        (hi.min(c1) - lo.max(c0)).max(0.0) / cell
    };
    let inter_box = [a[0].max(b[0]), a[1].max(b[1]), a[2].min(b[2]), a[3].min(b[3])];
    let lo_x = (a[0].min(b[0]) * n as f64).floor() as usize;
    let hi_x = ((a[2].max(b[2]) * n as f64).ceil() as usize).min(n);
    let lo_y = (a[1].min(b[1]) * n as f64).floor() as usize;
    let hi_y = ((a[3].max(b[3]) * n as f64).ceil() as usize).min(n);
    let (mut ca, mut cb, mut ci) = (0.0, 0.0, 0.0);
    for j in lo_y..hi_y {
        for i in lo_x..hi_x {
            ca += overlap(a[0], a[2], i) * overlap(a[1], a[3], j);
            cb += overlap(b[0], b[2], i) * overlap(b[1], b[3], j);
            if inter_box[0] < inter_box[2] && inter_box[1] < inter_box[3] {
                ci += overlap(inter_box[0], inter_box[2], i) * overlap(inter_box[1], inter_box[3], j);
            }
        }
    }
    let union = ca + cb - ci;
    if union <= 0.0 {
        0.0
    } else {
        ci / union
    }
}

fn iou_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let int_box = |rng: &mut ChaCha8Rng| {
        let (x0, x1) = (rng.random_range(0..64u32), rng.random_range(0..64u32));
        let (y0, y1) = (rng.random_range(0..64u32), rng.random_range(0..64u32));
        [x0.min(x1), y0.min(y1), x0.max(x1) + 1, y0.max(y1) + 1]
    };
    let norm = |b: [u32; 4]| {
        NormalizedBBox::new(
            b[0] as f64 / 64.0,
            b[1] as f64 / 64.0,
            b[2] as f64 / 64.0,
            b[3] as f64 / 64.0,
        )
        .unwrap()
    };
    let mut overlapping = 0;
    for i in 0..IOU_INTEGER_PAIRS {
        let (a, b) = (int_box(&mut rng), int_box(&mut rng));
        let want = raster_iou_int(a, b);
        let got = iou(&norm(a), &norm(b));
        ensure(got == want, || {
            format!("integer pair {i} {a:?} {b:?}: analytic {got} raster {want}")
        })?;
        overlapping += (want > 0.0) as usize;
    }
    let real_box = |rng: &mut ChaCha8Rng| {
        let w: f64 = rng.random_range(0.05..0.6);
        let h: f64 = rng.random_range(0.05..0.6);
        let x = rng.random_range(0.0..1.0 - w);
        let y = rng.random_range(0.0..1.0 - h);
        [x, y, x + w, y + h]
    };
    let mut worst: f64 = 0.0;
    for i in 0..IOU_REAL_PAIRS {
        let a = real_box(&mut rng);
        // Half the pairs are placed near each other so most overlap.
        let b = if i % 2 == 0 {
            let w = rng.random_range(0.05..0.6f64);
            let h = rng.random_range(0.05..0.6f64);
            let x = (a[0] + rng.random_range(-0.1..0.1f64)).clamp(0.0, 1.0 - w);
            let y = (a[1] + rng.random_range(-0.1..0.1f64)).clamp(0.0, 1.0 - h);
            [x, y, x + w, y + h]
        } else {
            real_box(&mut rng)
        };
        let want = raster_iou_real(a, b, IOU_RASTER);
        let got = iou(
            &NormalizedBBox::new(a[0], a[1], a[2], a[3]).unwrap(),
            &NormalizedBBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        );
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= IOU_REAL_TOL, || {
            format!("real pair {i}: analytic {got} raster {want}")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < IOU_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{IOU_INTEGER_PAIRS} integer pairs exact ({overlapping} overlapping), {IOU_REAL_PAIRS} real pairs max err {worst:.2e}, {elapsed:.2?}"
    ))
}

fn id_scheme() -> Outcome {
    let roots: Vec<u32> = (0..ID_ROOTS).collect();
    let ids = allocate_entity_ids(&roots, ID_OBJECTS).map_err(|e| e.to_string())?;
    let mut seen = HashSet::new();
    for p in &ids.persons {
        let r = p.root.get();
        let want = [
            (p.person, r * 10, EntityKind::Person),
            (p.left_hand, r * 10 + 1, EntityKind::LeftHand),
            (p.right_hand, r * 10 + 4, EntityKind::RightHand),
        ];
        for (id, raw, kind) in want {
            ensure(id.raw() == raw && id.kind() == kind, || {
                format!("root {r}: {kind:?} is {}", id.raw())
            })?;
            ensure(id.raw() < 1000, || {
                format!("person-derived id {} in object range", id.raw())
            })?;
            ensure(id.root().map(|x| x.get()) == Some(r), || {
                format!("id {raw} does not map back to root {r}")
            })?;
        }
    }
    for (i, id) in ids.objects.iter().enumerate() {
        ensure(id.raw() == 1000 + i as u32 && id.kind() == EntityKind::Object, || {
            format!("object {i} is {}", id.raw())
        })?;
    }
    for id in ids.all() {
        ensure(seen.insert(id.raw()), || format!("duplicate id {}", id.raw()))?;
        let back = motion_curate::EntityId::from_raw(id.raw()).map_err(|e| e.to_string())?;
        ensure(back == id, || format!("from_raw({}) differs", id.raw()))?;
    }
    let expected = (ID_ROOTS * 3 + ID_OBJECTS) as usize;
    ensure(seen.len() == expected, || {
        format!("{} ids, expected {expected}", seen.len())
    })?;
    ensure(
        allocate_entity_ids(&(0..=ID_ROOTS).collect::<Vec<_>>(), 0).is_err(),
        || "101 roots accepted".into(),
    )?;
    Ok(format!(
        "{expected} ids injective, codes x10/x10+1/x10+4, person range below 1000"
    ))
}

fn annotation_schema() -> Outcome {
    let mut files: Vec<PathBuf> = fs::read_dir(fixture("golden"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".motion.json"))
        .collect();
    files.sort();
    ensure(files.len() >= 4, || format!("only {} golden files", files.len()))?;
    let mut nulls = (0, 0);
    for f in &files {
        let name = f.file_name().unwrap().to_string_lossy().into_owned();
        let text = fs::read_to_string(f).map_err(|e| e.to_string())?;
        let doc = parse_motion_json(&text).map_err(|e| format!("{name}: {e}"))?;
        let again = format!("{}\n", serialize_motion(&doc));
        ensure(again == text, || format!("{name}: round trip differs"))?;

        let v: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let objects = v.as_object().ok_or("top level is not an object")?;
        let keys: HashSet<&str> = objects.keys().map(String::as_str).collect();
        let mut frames = None;
        for (k, entry) in objects {
            let fields: Vec<&str> = entry
                .as_object()
                .ok_or("entry is not an object")?
                .keys()
                .map(String::as_str)
                .collect();
            ensure(fields == ["bbox", "object_type", "interactions"], || {
                format!("{name}/{k}: fields {fields:?}")
            })?;
            let bbox = entry["bbox"].as_array().ok_or("bbox is not a list")?;
            let inter = entry["interactions"].as_array().ok_or("interactions is not a list")?;
            ensure(
                *frames.get_or_insert(bbox.len()) == bbox.len() && bbox.len() == inter.len(),
                || format!("{name}/{k}: per-frame lengths differ"),
            )?;
            for b in bbox {
                if b.is_null() {
                    nulls.0 += 1;
                } else {
                    ensure(
                        b.as_array()
                            .is_some_and(|a| a.len() == 4 && a.iter().all(Value::is_f64)),
                        || format!("{name}/{k}: bad box {b}"),
                    )?;
                }
            }
            for i in inter {
                if i.is_null() {
                    nulls.1 += 1;
                } else {
                    let list = i
                        .as_array()
                        .ok_or_else(|| format!("{name}/{k}: interactions entry {i}"))?;
                    ensure(!list.is_empty(), || format!("{name}/{k}: empty interaction list"))?;
                    ensure(
                        list.iter()
                            .all(|x| x.as_str().is_some_and(|s| keys.contains(s) && s != k)),
                        || format!("{name}/{k}: bad link {i}"),
                    )?;
                }
            }
        }
    }
    ensure(nulls.0 > 0 && nulls.1 > 0, || {
        "corpus exercises no null boxes or null interactions".into()
    })?;

    let mut rejected = 0;
    for e in fs::read_dir(fixture("golden/invalid")).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        let text = fs::read_to_string(&p).map_err(|e| e.to_string())?;
        ensure(parse_motion_json(&text).is_err(), || {
            format!("{} accepted", p.display())
        })?;
        rejected += 1;
    }
    Ok(format!(
        "{} golden files valid and byte-identical after round trip ({} null boxes, {} null interactions); {rejected} invalid files rejected",
        files.len(),
        nulls.0,
        nulls.1
    ))
}

fn qa_shuffle() -> Outcome {
    let item = QAItem {
        video_id: "v".into(),
        question: "Which way does the ball roll?".into(),
        options: ["Left", "Right", "Up", "Down"].map(String::from).to_vec(),
        answer_index: 0,
        category: Category::MotionRecognition,
        provenance: "v.qa_raw.txt#Q1".into(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts = [0usize; 4];
    for _ in 0..SHUFFLES {
        let s = shuffle_choices(&item, &mut rng);
        ensure(s.options[s.answer_index] == "Left", || {
            "answer index does not follow the correct option".into()
        })?;
        let mut sorted = s.options.clone();
        sorted.sort();
        ensure(sorted == ["Down", "Left", "Right", "Up"], || {
            format!("options changed: {:?}", s.options)
        })?;
        counts[s.answer_index] += 1;
    }
    let freqs = counts.map(|c| c as f64 / SHUFFLES as f64);
    for (i, f) in freqs.iter().enumerate() {
        ensure((SHUFFLE_BAND.0..=SHUFFLE_BAND.1).contains(f), || {
            format!("position {i} frequency {f:.4}")
        })?;
    }
    Ok(format!(
        "position frequencies {:?}",
        freqs.map(|f| (f * 1000.0).round() / 10.0)
    ))
}

fn parser_fidelity() -> Outcome {
    let text = fs::read_to_string(fixture("qa/labeled_output.txt")).map_err(|e| e.to_string())?;
    let expected: Value = serde_json::from_str(
        &fs::read_to_string(fixture("qa/labeled_output.expected.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let parsed = parse_qa_output(&text).map_err(|e| e.to_string())?;
    let want_items = expected["items"].as_array().unwrap();
    ensure(parsed.items.len() == want_items.len(), || {
        format!("{} items parsed, expected {}", parsed.items.len(), want_items.len())
    })?;
    for (got, want) in parsed.items.iter().zip(want_items) {
        ensure(got.number as u64 == want["number"].as_u64().unwrap(), || {
            format!("item number {}", got.number)
        })?;
        ensure(got.question == want["question"].as_str().unwrap(), || {
            format!("Q{}: question {:?}", got.number, got.question)
        })?;
        let opts: Vec<&str> = want["options"]
            .as_array()
            .unwrap()
            .iter()
            .map(|o| o.as_str().unwrap())
            .collect();
        ensure(got.options == opts, || {
            format!("Q{}: options {:?}", got.number, got.options)
        })?;
    }
    let want_dropped = expected["dropped"].as_u64().unwrap() as usize;
    ensure(parsed.dropped == want_dropped, || {
        format!("dropped {} expected {want_dropped}", parsed.dropped)
    })?;
    Ok(format!(
        "{} items exact, {} malformed dropped",
        parsed.items.len(),
        parsed.dropped
    ))
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let run = |name: &str| -> Result<PathBuf, String> {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_motion-curate"))
            .arg("curate")
            .arg("--config")
            .arg(fixture("config.toml"))
            .arg("--input")
            .arg(fixture("videos"))
            .arg("--mock")
            .arg(fixture("mock"))
            .arg("--out")
            .arg(out.join("data"))
            .arg("--transcript")
            .arg(out.join("transcripts"))
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            String::from_utf8_lossy(&status.stderr).into_owned()
        })?;
        Ok(out)
    };
    let (a, b) = (run("a")?, run("b")?);
    let elapsed = start.elapsed();
    let (ta, tb) = (tree(&a), tree(&b));
    ensure(ta.keys().eq(tb.keys()), || "file lists differ".into())?;
    for (k, v) in &ta {
        ensure(tb[k] == *v, || format!("{k} differs between runs"))?;
    }
    for v in ["kitchen", "desk"] {
        for suffix in ["motion.json", "caption.json", "qa.jsonl"] {
            let k = format!("data/{v}.{suffix}");
            ensure(ta.get(&k).is_some_and(|b| !b.is_empty()), || {
                format!("{k} missing or empty")
            })?;
        }
    }
    ensure(ta.get("data/qa.jsonl").is_some_and(|b| !b.is_empty()), || {
        "qa.jsonl empty".into()
    })?;

    let mut frame_counts = BTreeMap::new();
    for line in String::from_utf8_lossy(&ta["data/videos.jsonl"]).lines() {
        let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        frame_counts.insert(
            v["video_id"].as_str().unwrap().to_string(),
            v["frame_count"].as_u64().unwrap() as usize,
        );
    }
    let mut observed = Vec::new();
    for (video, n) in &frame_counts {
        let text = String::from_utf8_lossy(&ta[&format!("transcripts/{video}.jsonl")]).into_owned();
        let frames: BTreeSet<usize> = text
            .lines()
            .map(|l| serde_json::from_str::<Value>(l).unwrap())
            .filter(|e| e["endpoint"] == "hands")
            .map(|e| e["request"]["payload"]["frame"]["index"].as_u64().unwrap() as usize)
            .collect();
        let want: BTreeSet<usize> = (0..*n).step_by(5).collect();
        ensure(frames == want, || {
            format!("{video}: hand detections at {frames:?}, expected {want:?}")
        })?;
        observed.push(format!("{video}: {} keyframes over {n} frames", frames.len()));
    }
    ensure(elapsed < E2E_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} files byte-identical; {}; {elapsed:.2?}",
        ta.len(),
        observed.join(", ")
    ))
}

fn bench_items(n: usize) -> Vec<BenchItem> {
    (0..n)
        .map(|i| BenchItem {
            question: format!("Question {i}: which way does object {i} move?"),
            options: ["Left", "Right", "Up", "Down"].map(String::from).to_vec(),
            answer_index: i % 4,
            category: None,
            video_id: None,
        })
        .collect()
}

fn scripted_model(replies: Vec<String>) -> BackendClient {
    let mut endpoints = BTreeMap::new();
    endpoints.insert(
        Endpoint::Answer,
        EndpointScript {
            sequence: replies
                .into_iter()
                .map(|r| ScriptedReply::Ok(json!({ "text": r })))
                .collect(),
            ..Default::default()
        },
    );
    let mock = MockBackend::new(MockScript {
        endpoints,
        ..Default::default()
    });
    BackendClient::new(Arc::new(mock), CallPolicy::default())
}

fn evaluation() -> Outcome {
    const L: [&str; 4] = ["A", "B", "C", "D"];
    let items = bench_items(100);
    let accuracy = |replies: Vec<String>| -> Result<f64, String> {
        run_benchmark("fixture", "scripted", &items, &scripted_model(replies))
            .map(|r| r.accuracy)
            .map_err(|e| e.to_string())
    };
    let mixed = accuracy(
        items
            .iter()
            .enumerate()
            .map(|(i, it)| {
                L[if i < 73 {
                    it.answer_index
                } else {
                    (it.answer_index + 1) % 4
                }]
                .to_string()
            })
            .collect(),
    )?;
    let oracle = accuracy(
        items
            .iter()
            .map(|it| format!("The answer is {}.", L[it.answer_index]))
            .collect(),
    )?;
    let anti = accuracy(
        items
            .iter()
            .map(|it| L[(it.answer_index + 2) % 4].to_string())
            .collect(),
    )?;
    ensure(mixed == 73.0 && oracle == 100.0 && anti == 0.0, || {
        format!("accuracies {mixed} / {oracle} / {anti}")
    })?;

    let fx: Value =
        serde_json::from_str(&fs::read_to_string(fixture("eval/letter_styles.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let options: Vec<String> = fx["options"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o.as_str().unwrap().to_string())
        .collect();
    let cases = fx["cases"].as_array().unwrap();
    ensure(cases.len() >= 12, || format!("only {} reply styles", cases.len()))?;
    let mut matched = 0;
    for c in cases {
        let want = c["expected"].as_str().map(|s| s.chars().next().unwrap());
        let got = extract_answer_letter(c["reply"].as_str().unwrap(), &options);
        ensure(got == want, || {
            format!("style {:?}: got {got:?}, expected {want:?}", c["style"])
        })?;
        matched += 1;
    }
    Ok(format!(
        "73/100 -> {mixed:.1}, oracle {oracle:.1}, anti-oracle {anti:.1}; {matched}/{} reply styles",
        cases.len()
    ))
}

fn stats() -> Outcome {
    let (items, durations) = load_dataset(&fixture("stats")).map_err(|e| e.to_string())?;
    let s = dataset_stats(&items, &durations).map_err(|e| e.to_string())?;
    // Done videos: 5.0 + 7.5 + 9.25 = 21.75 s; 6 questions; lengths
    // 10 + 22 + 17 + 26 + 19 + 47 = 141 characters. The excluded video is
    // not counted.
    let expected = [
        ("duration", s.avg_duration_s, 21.75 / 3.0),
        ("questions/video", s.questions_per_video, 6.0 / 3.0),
        ("questions/second", s.questions_per_second, 6.0 / 21.75),
        ("question length", s.avg_question_chars, 141.0 / 6.0),
    ];
    for (name, got, want) in expected {
        ensure(((got - want) / want).abs() <= STATS_REL_TOL, || {
            format!("{name}: {got} expected {want}")
        })?;
    }
    ensure(s.videos == 3 && s.questions == 6, || {
        format!("{} videos, {} questions", s.videos, s.questions)
    })?;
    let table = render_stats_table(&s);
    let rows: Vec<(String, String)> = table
        .lines()
        .skip(2)
        .map(|l| {
            let cells: Vec<&str> = l.split('|').map(str::trim).filter(|c| !c.is_empty()).collect();
            let unit = cells[1].split_once(' ').map(|(_, u)| u.to_string()).unwrap_or_default();
            (cells[0].to_string(), unit)
        })
        .collect();
    let want_rows = [
        ("Average video duration", "seconds"),
        ("Average questions per video", ""),
        ("Average annotation density", "questions/second"),
        ("Average question length", "characters"),
    ];
    ensure(rows.len() == want_rows.len(), || format!("table rows: {rows:?}"))?;
    for ((metric, unit), (wm, wu)) in rows.iter().zip(want_rows) {
        ensure(metric == wm && unit == wu, || {
            format!("row {metric:?} [{unit}] expected {wm:?} [{wu}]")
        })?;
    }
    Ok(format!(
        "averages {:.4} s, {:.2} q/video, {:.6} q/s, {:.2} chars; 4 report rows match",
        s.avg_duration_s, s.questions_per_video, s.questions_per_second, s.avg_question_chars
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("segment sampler", segment_sampler),
        ("camera filter", camera_filter),
        ("IoU oracle equivalence", iou_oracle),
        ("ID scheme", id_scheme),
        ("annotation schema", annotation_schema),
        ("QA shuffle balance", qa_shuffle),
        ("parser fidelity", parser_fidelity),
        ("end-to-end determinism", end_to_end),
        ("evaluation harness", evaluation),
        ("stats", stats),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
