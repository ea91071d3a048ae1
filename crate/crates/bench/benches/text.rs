use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, Criterion};

use motion_curate::annotate::{parse_motion_json, serialize_motion};
use motion_curate::evaluate::extract_answer_letter;
use motion_curate::generate::parse_qa_output;

fn fixture(rel: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)).unwrap()
}

fn bench_motion_json(c: &mut Criterion) {
    let text = fixture("golden/kitchen.motion.json");
    let doc = parse_motion_json(&text).unwrap();
    c.bench_function("motion_json_parse", |b| {
        b.iter(|| parse_motion_json(black_box(&text)).unwrap())
    });
    c.bench_function("motion_json_serialize", |b| {
        b.iter(|| serialize_motion(black_box(&doc)))
    });
}

fn bench_qa(c: &mut Criterion) {
    let raw = fixture("qa/labeled_output.txt");
    c.bench_function("parse_qa_output", |b| {
        b.iter(|| parse_qa_output(black_box(&raw)).unwrap())
    });

    let options: Vec<String> = ["Left.", "Right.", "Up.", "Down."].map(String::from).to_vec();
    let replies = [
        "C",
        "(B) Right.",
        "The answer is D because the cup ends at the bottom.",
        "I think it moves Right.",
        "none of these",
    ];
    c.bench_function("extract_answer_letter", |b| {
        b.iter(|| {
            replies
                .iter()
                .filter_map(|r| extract_answer_letter(black_box(r), &options))
                .count()
        })
    });
}

criterion_group!(benches, bench_motion_json, bench_qa);
criterion_main!(benches);
