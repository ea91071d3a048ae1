use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::Value;

use motion_curate::backends::mock::{EndpointScript, MockRule, TrackerMode};
use motion_curate::backends::protocol::{WireError, WireErrorKind};
use motion_curate::backends::{CallPolicy, Endpoint, FrameMode, MockBackend, MockScript, ReplayTransport, Transport};
use motion_curate::pipeline::{curate, CurateOptions, CurateReport, PipelineError, VideoStatus};
use motion_curate::preprocess::DecoderRegistry;
use motion_curate::PipelineConfig;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn script() -> MockScript {
    MockScript::load_dir(&fixtures().join("mock")).unwrap()
}

fn options(input: &str, out: &Path) -> CurateOptions {
    CurateOptions {
        input: fixtures().join(input),
        out: out.join("data"),
        config: PipelineConfig {
            seed: 11,
            ..Default::default()
        },
        workers: 2,
        policy: CallPolicy::default(),
        frame_mode: FrameMode::Encoded,
        transcript_dir: Some(out.join("transcripts")),
        resume: false,
    }
}

fn run(opts: &CurateOptions, t: Arc<dyn Transport>) -> CurateReport {
    curate(opts, t, &DecoderRegistry::default()).unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn transcript(out: &Path, video: &str) -> Vec<Value> {
    fs::read_to_string(out.join("transcripts").join(format!("{video}.jsonl")))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn entry_of<'a>(motion: &'a Value, object_type: &str) -> &'a Value {
    motion
        .as_object()
        .unwrap()
        .values()
        .find(|e| e["object_type"] == object_type)
        .unwrap_or_else(|| panic!("no {object_type} in motion json"))
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn tracker_drift_is_repinned_at_keyframes() {
    const DRIFT: f64 = 0.004;
    let mut s = script();
    s.endpoints.insert(
        Endpoint::TrackAdvance,
        EndpointScript::rule(MockRule::Tracker {
            mode: TrackerMode::Echo,
            velocity: [DRIFT, 0.0],
            lose: BTreeMap::new(),
        }),
    );
    let tmp = tempfile::tempdir().unwrap();
    let opts = options("videos/kitchen.synth.json", tmp.path());
    run(&opts, Arc::new(MockBackend::new(s)));

    let motion = read_json(&opts.out.join("kitchen.motion.json"));
    let hand: Vec<Option<[f64; 4]>> = serde_json::from_value(entry_of(&motion, "left_hand")["bbox"].clone()).unwrap();
    let detected: BTreeMap<usize, [f64; 4]> = transcript(tmp.path(), "kitchen")
        .iter()
        .filter(|e| e["endpoint"] == "hands")
        .map(|e| {
            let t = e["request"]["payload"]["frame"]["index"].as_u64().unwrap() as usize;
            let b = serde_json::from_value(e["response"]["payload"]["hands"][0]["bbox"].clone()).unwrap();
            (t, b)
        })
        .collect();
    assert_eq!(
        detected.keys().copied().collect::<Vec<_>>(),
        (0..hand.len()).step_by(5).collect::<Vec<_>>()
    );

    for (t, b) in hand.iter().enumerate() {
        let b = b.expect("hand tracked in every frame");
        if let Some(d) = detected.get(&t) {
            for k in 0..4 {
                assert!((b[k] - d[k]).abs() <= 5e-7, "frame {t}: {b:?} vs detection {d:?}");
            }
        } else {
            let prev = hand[t - 1].unwrap();
            assert!(
                (b[0] - prev[0] - DRIFT).abs() <= 2e-6,
                "frame {t}: drift {}",
                b[0] - prev[0]
            );
        }
    }
    // The echo tracker drifts right while the scene object moves slower, so
    // each re-pin pulls the box back.
    assert!(hand[4].unwrap()[0] > hand[5].unwrap()[0]);
}

#[test]
fn grounding_runs_once_per_class_on_the_first_frame() {
    let mock = Arc::new(MockBackend::new(script()));
    let tmp = tempfile::tempdir().unwrap();
    run(&options("videos", tmp.path()), mock.clone());
    let log = mock.call_log();
    for video in ["kitchen", "desk"] {
        let mut grounded: Vec<(String, usize)> = log
            .iter()
            .filter(|c| c.endpoint == Endpoint::Ground && c.video_id.as_deref() == Some(video))
            .map(|c| (c.class_name.clone().unwrap(), c.frame_index.unwrap()))
            .collect();
        grounded.sort();
        assert_eq!(
            grounded,
            vec![("ball".to_string(), 0), ("cup".to_string(), 0)],
            "{video}"
        );
        let described = log
            .iter()
            .filter(|c| c.endpoint == Endpoint::Describe && c.video_id.as_deref() == Some(video))
            .count();
        assert_eq!(described, 1);
    }
}

#[test]
fn lost_object_becomes_null_and_stays_linked_only_while_present() {
    let mut s = script();
    s.endpoints.insert(
        Endpoint::TrackAdvance,
        EndpointScript::rule(MockRule::Tracker {
            mode: TrackerMode::ColorFollow,
            velocity: [0.0, 0.0],
            lose: BTreeMap::from([(1000, 7)]),
        }),
    );
    let tmp = tempfile::tempdir().unwrap();
    let opts = options("videos/kitchen.synth.json", tmp.path());
    run(&opts, Arc::new(MockBackend::new(s)));
    let idmap = read_json(&opts.out.join("kitchen.idmap.json"));
    let key = idmap
        .as_object()
        .unwrap()
        .iter()
        .find(|(_, v)| **v == 1000)
        .unwrap()
        .0
        .clone();
    let motion = read_json(&opts.out.join("kitchen.motion.json"));
    let bbox = motion[&key]["bbox"].as_array().unwrap();
    assert!(bbox[..7].iter().all(|b| !b.is_null()));
    assert!(bbox[7..].iter().all(Value::is_null));
    let inter = motion[&key]["interactions"].as_array().unwrap();
    assert!(inter[7..].iter().all(Value::is_null));
}

#[test]
fn camera_motion_excludes_a_video_without_failing_the_run() {
    let mut s = script();
    s.per_video.entry("kitchen".into()).or_default().insert(
        Endpoint::CameraPoses,
        EndpointScript::rule(MockRule::CameraTrajectory {
            translation_step: [0.0; 3],
            yaw_step: 0.3,
        }),
    );
    let tmp = tempfile::tempdir().unwrap();
    let opts = options("videos", tmp.path());
    let report = run(&opts, Arc::new(MockBackend::new(s)));
    let kitchen = &report.manifest.videos["kitchen"];
    assert_eq!(kitchen.status, VideoStatus::Excluded);
    assert_eq!(kitchen.reason.as_deref(), Some("camera_motion"));
    assert!(kitchen.stages["camera"].starts_with("excluded: camera_motion"));
    assert!(kitchen.camera_score.unwrap() > 0.3);
    assert!(!opts.out.join("kitchen.motion.json").exists());
    assert_eq!(report.manifest.videos["desk"].status, VideoStatus::Done);
    let qa = fs::read_to_string(opts.out.join("qa.jsonl")).unwrap();
    assert!(qa.lines().all(|l| l.contains("\"video_id\":\"desk\"")));
    assert_eq!(report.qa_items, qa.lines().count());
}

#[test]
fn caption_failure_is_recorded_and_later_stages_skipped() {
    let mut s = script();
    s.per_video.entry("desk".into()).or_default().insert(
        Endpoint::Llm,
        EndpointScript::rule(MockRule::Fail {
            error: WireError {
                kind: WireErrorKind::Fatal,
                message: "model unavailable".into(),
            },
        }),
    );
    let tmp = tempfile::tempdir().unwrap();
    let opts = options("videos", tmp.path());
    let report = run(&opts, Arc::new(MockBackend::new(s)));
    let desk = &report.manifest.videos["desk"];
    assert_eq!(desk.status, VideoStatus::Failed);
    assert!(desk.reason.as_deref().unwrap().contains("model unavailable"));
    assert!(!desk.stages.contains_key("qa"));
    assert!(opts.out.join("desk.motion.json").exists());
    assert!(!opts.out.join("desk.caption.json").exists());
    assert_eq!(report.manifest.videos["kitchen"].status, VideoStatus::Done);
}

#[test]
fn resume_skips_finished_videos_and_rejects_a_changed_config() {
    let tmp = tempfile::tempdir().unwrap();
    let mut opts = options("videos", tmp.path());
    run(&opts, Arc::new(MockBackend::new(script())));
    let before = tree(&opts.out);

    opts.resume = true;
    let idle = Arc::new(MockBackend::new(script()));
    let report = run(&opts, idle.clone());
    assert_eq!(report.resumed, vec!["desk".to_string(), "kitchen".to_string()]);
    assert!(idle.call_log().is_empty());
    assert_eq!(tree(&opts.out), before);

    // A tampered output is redone.
    fs::write(opts.out.join("desk.qa.jsonl"), "").unwrap();
    let again = Arc::new(MockBackend::new(script()));
    let report = run(&opts, again.clone());
    assert_eq!(report.resumed, vec!["kitchen".to_string()]);
    assert!(again.call_log().iter().all(|c| c.video_id.as_deref() == Some("desk")));
    assert_eq!(tree(&opts.out), before);

    opts.config.seed += 1;
    let err = curate(&opts, Arc::new(MockBackend::new(script())), &DecoderRegistry::default()).unwrap_err();
    assert!(matches!(err, PipelineError::Resume(_)), "{err}");
}

#[test]
fn replayed_transcripts_reproduce_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = options("videos", tmp.path());
    run(&opts, Arc::new(MockBackend::new(script())));

    let replay = ReplayTransport::load(&tmp.path().join("transcripts")).unwrap();
    let out2 = tempfile::tempdir().unwrap();
    let opts2 = CurateOptions {
        transcript_dir: None,
        workers: 1,
        ..options("videos", out2.path())
    };
    run(&opts2, Arc::new(replay));
    assert_eq!(tree(&opts.out), tree(&opts2.out));
}

#[test]
fn shared_path_frames_give_the_same_annotations() {
    let tmp = tempfile::tempdir().unwrap();
    let encoded = options("videos/desk.synth.json", tmp.path());
    run(&encoded, Arc::new(MockBackend::new(script())));

    let tmp2 = tempfile::tempdir().unwrap();
    let shared = CurateOptions {
        frame_mode: FrameMode::SharedPath(tmp2.path().join("frames")),
        ..options("videos/desk.synth.json", tmp2.path())
    };
    run(&shared, Arc::new(MockBackend::new(script())));
    for f in ["desk.motion.json", "desk.idmap.json", "desk.qa.jsonl"] {
        assert_eq!(
            fs::read(encoded.out.join(f)).unwrap(),
            fs::read(shared.out.join(f)).unwrap(),
            "{f}"
        );
    }
}
