//! Frame decoding behind a small trait so the pipeline can run on real
//! containers or on generated rasters.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::raster::{Raster, Rgb};
use crate::model::VideoMeta;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("frame {index} of {path} is undecodable: {reason}")]
    BadFrame { path: PathBuf, index: u64, reason: String },
    #[error("no decoder for {0}")]
    Unsupported(PathBuf),
}

pub trait FrameDecoder: Send + Sync {
    fn probe(&self, path: &Path) -> Result<VideoMeta, DecodeError>;
    fn decode(&self, path: &Path, index: u64) -> Result<Raster, DecodeError>;
}

fn unreadable(path: &Path, reason: impl ToString) -> DecodeError {
    DecodeError::Unreadable {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// A rectangle moving at constant velocity in a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    #[serde(default)]
    pub name: String,
    pub color: Rgb,
    /// `[left, top, right, bottom]` in pixels at t = 0.
    #[serde(rename = "box")]
    pub rect: [f64; 4],
    /// Pixels per second.
    #[serde(default)]
    pub velocity: [f64; 2],
}

/// Description of a generated clip: flat background plus colored
/// rectangles, drawn in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub duration: f64,
    #[serde(default = "default_background")]
    pub background: Rgb,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    /// Source frame indices that fail to decode.
    #[serde(default)]
    pub corrupt_frames: Vec<u64>,
}

fn default_background() -> Rgb {
    [32, 32, 32]
}

impl SyntheticScene {
    pub fn frame_count(&self) -> u64 {
        (self.fps * self.duration).round() as u64
    }

    pub fn render(&self, index: u64) -> Raster {
        let t = index as f64 / self.fps;
        let mut r = Raster::filled(self.width, self.height, self.background);
        for o in &self.objects {
            let (dx, dy) = (o.velocity[0] * t, o.velocity[1] * t);
            r.fill_rect(o.rect[0] + dx, o.rect[1] + dy, o.rect[2] + dx, o.rect[3] + dy, o.color);
        }
        r
    }
}

/// Decodes `*.synth.json` scene files.
#[derive(Debug, Default)]
pub struct SyntheticDecoder {
    cache: Mutex<HashMap<PathBuf, Arc<SyntheticScene>>>,
}

impl SyntheticDecoder {
    fn scene(&self, path: &Path) -> Result<Arc<SyntheticScene>, DecodeError> {
        let mut cache = self.cache.lock().unwrap();
        if let Some(s) = cache.get(path) {
            return Ok(s.clone());
        }
        let text = std::fs::read_to_string(path).map_err(|e| unreadable(path, e))?;
        let scene: SyntheticScene = serde_json::from_str(&text).map_err(|e| unreadable(path, e))?;
        let scene = Arc::new(scene);
        cache.insert(path.to_path_buf(), scene.clone());
        Ok(scene)
    }
}

impl FrameDecoder for SyntheticDecoder {
    fn probe(&self, path: &Path) -> Result<VideoMeta, DecodeError> {
        let s = self.scene(path)?;
        VideoMeta::new(
            path.to_path_buf(),
            s.width,
            s.height,
            s.fps,
            s.duration,
            s.frame_count(),
        )
        .map_err(|e| unreadable(path, e))
    }

    fn decode(&self, path: &Path, index: u64) -> Result<Raster, DecodeError> {
        let s = self.scene(path)?;
        if index >= s.frame_count() || s.corrupt_frames.contains(&index) {
            return Err(DecodeError::BadFrame {
                path: path.to_path_buf(),
                index,
                reason: "frame unavailable".into(),
            });
        }
        Ok(s.render(index))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Chroma {
    C420,
    C444,
    Mono,
}

#[derive(Debug, Clone)]
struct Y4mIndex {
    width: u32,
    height: u32,
    fps: f64,
    chroma: Chroma,
    /// Byte offset of each frame's pixel data.
    offsets: Vec<u64>,
}

impl Y4mIndex {
    fn frame_size(&self) -> u64 {
        let (w, h) = (self.width as u64, self.height as u64);
        match self.chroma {
            Chroma::C420 => w * h + 2 * w.div_ceil(2) * h.div_ceil(2),
            Chroma::C444 => 3 * w * h,
            Chroma::Mono => w * h,
        }
    }
}

/// Decoder for uncompressed YUV4MPEG2 (`.y4m`) streams.
#[derive(Debug, Default)]
pub struct Y4mDecoder {
    cache: Mutex<HashMap<PathBuf, Arc<Y4mIndex>>>,
}

impl Y4mDecoder {
    fn index(&self, path: &Path) -> Result<Arc<Y4mIndex>, DecodeError> {
        if let Some(i) = self.cache.lock().unwrap().get(path) {
            return Ok(i.clone());
        }
        let idx = Arc::new(build_y4m_index(path)?);
        self.cache.lock().unwrap().insert(path.to_path_buf(), idx.clone());
        Ok(idx)
    }
}

fn build_y4m_index(path: &Path) -> Result<Y4mIndex, DecodeError> {
    let file = File::open(path).map_err(|e| unreadable(path, e))?;
    let len = file.metadata().map_err(|e| unreadable(path, e))?.len();
    let mut rd = BufReader::new(file);
    let mut header = String::new();
    rd.read_line(&mut header).map_err(|e| unreadable(path, e))?;
    let mut fields = header.trim_end().split(' ');
    if fields.next() != Some("YUV4MPEG2") {
        return Err(unreadable(path, "missing YUV4MPEG2 signature"));
    }
    let (mut width, mut height, mut fps, mut chroma) = (0u32, 0u32, 0.0f64, Chroma::C420);
    for f in fields {
        let (tag, val) = f.split_at(1.min(f.len()));
        match tag {
            "W" => width = val.parse().map_err(|_| unreadable(path, "bad width"))?,
            "H" => height = val.parse().map_err(|_| unreadable(path, "bad height"))?,
            "F" => {
                let (n, d) = val.split_once(':').ok_or_else(|| unreadable(path, "bad rate"))?;
                let n: f64 = n.parse().map_err(|_| unreadable(path, "bad rate"))?;
                let d: f64 = d.parse().map_err(|_| unreadable(path, "bad rate"))?;
                fps = n / d;
            }
            "C" => {
                chroma = if val.starts_with("420") {
                    Chroma::C420
                } else if val.starts_with("444") && !val.contains("alpha") {
                    Chroma::C444
                } else if val == "mono" {
                    Chroma::Mono
                } else {
                    return Err(unreadable(path, format!("unsupported colorspace C{val}")));
                }
            }
            _ => {}
        }
    }
    if width == 0 || height == 0 || !(fps > 0.0) {
        return Err(unreadable(path, "incomplete header"));
    }
    let mut idx = Y4mIndex {
        width,
        height,
        fps,
        chroma,
        offsets: Vec::new(),
    };
    let size = idx.frame_size();
    let mut pos = header.len() as u64;
    loop {
        let mut line = String::new();
        let n = rd.read_line(&mut line).map_err(|e| unreadable(path, e))?;
        if n == 0 {
            break;
        }
        if !line.starts_with("FRAME") {
            return Err(unreadable(path, format!("expected FRAME marker at byte {pos}")));
        }
        let data_at = pos + n as u64;
        if data_at + size > len {
            // truncated trailing frame
            break;
        }
        idx.offsets.push(data_at);
        pos = data_at + size;
        rd.seek(SeekFrom::Start(pos)).map_err(|e| unreadable(path, e))?;
    }
    Ok(idx)
}

fn yuv_to_rgb(y: u8, u: u8, v: u8) -> Rgb {
    let c = 1.164 * (y as f64 - 16.0);
    let d = u as f64 - 128.0;
    let e = v as f64 - 128.0;
    let px = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    [px(c + 1.596 * e), px(c - 0.392 * d - 0.813 * e), px(c + 2.017 * d)]
}

impl FrameDecoder for Y4mDecoder {
    fn probe(&self, path: &Path) -> Result<VideoMeta, DecodeError> {
        let i = self.index(path)?;
        let n = i.offsets.len() as u64;
        VideoMeta::new(path.to_path_buf(), i.width, i.height, i.fps, n as f64 / i.fps, n)
            .map_err(|e| unreadable(path, e))
    }

    fn decode(&self, path: &Path, index: u64) -> Result<Raster, DecodeError> {
        let idx = self.index(path)?;
        let bad = |reason: String| DecodeError::BadFrame {
            path: path.to_path_buf(),
            index,
            reason,
        };
        let offset = *idx
            .offsets
            .get(index as usize)
            .ok_or_else(|| bad("index past end of stream".into()))?;
        let mut f = File::open(path).map_err(|e| unreadable(path, e))?;
        f.seek(SeekFrom::Start(offset)).map_err(|e| bad(e.to_string()))?;
        let mut buf = vec![0u8; idx.frame_size() as usize];
        f.read_exact(&mut buf).map_err(|e| bad(e.to_string()))?;
        let (w, h) = (idx.width as usize, idx.height as usize);
        let mut out = Raster::filled(idx.width, idx.height, [0, 0, 0]);
        let luma = &buf[..w * h];
        for y in 0..h {
            for x in 0..w {
                let yy = luma[y * w + x];
                let (u, v) = match idx.chroma {
                    Chroma::C420 => {
                        let cw = w.div_ceil(2);
                        let ch = h.div_ceil(2);
                        let ci = (y / 2) * cw + x / 2;
                        (buf[w * h + ci], buf[w * h + cw * ch + ci])
                    }
                    Chroma::C444 => (buf[w * h + y * w + x], buf[2 * w * h + y * w + x]),
                    Chroma::Mono => (128, 128),
                };
                out.set_pixel(x as u32, y as u32, yuv_to_rgb(yy, u, v));
            }
        }
        Ok(out)
    }
}

/// Dispatches on file name: `*.synth.json` and `*.y4m` are built in, other
/// extensions can be registered.
pub struct DecoderRegistry {
    decoders: Vec<(String, Arc<dyn FrameDecoder>)>,
}

impl Default for DecoderRegistry {
    fn default() -> Self {
        Self {
            decoders: vec![
                (".synth.json".into(), Arc::new(SyntheticDecoder::default())),
                (".y4m".into(), Arc::new(Y4mDecoder::default())),
            ],
        }
    }
}

impl DecoderRegistry {
    pub fn register(&mut self, suffix: &str, decoder: Arc<dyn FrameDecoder>) {
        self.decoders.insert(0, (suffix.to_string(), decoder));
    }

    pub fn supports(&self, path: &Path) -> bool {
        self.lookup(path).is_some()
    }

    fn lookup(&self, path: &Path) -> Option<&Arc<dyn FrameDecoder>> {
        let name = path.file_name()?.to_str()?;
        self.decoders
            .iter()
            .find(|(suffix, _)| name.ends_with(suffix.as_str()))
            .map(|(_, d)| d)
    }

    /// Video identifier: the file name with the matched suffix stripped.
    pub fn video_id(&self, path: &Path) -> Option<String> {
        let name = path.file_name()?.to_str()?;
        self.decoders
            .iter()
            .find(|(suffix, _)| name.ends_with(suffix.as_str()))
            .map(|(suffix, _)| name[..name.len() - suffix.len()].to_string())
    }
}

impl FrameDecoder for DecoderRegistry {
    fn probe(&self, path: &Path) -> Result<VideoMeta, DecodeError> {
        self.lookup(path)
            .ok_or_else(|| DecodeError::Unsupported(path.to_path_buf()))?
            .probe(path)
    }

    fn decode(&self, path: &Path, index: u64) -> Result<Raster, DecodeError> {
        self.lookup(path)
            .ok_or_else(|| DecodeError::Unsupported(path.to_path_buf()))?
            .decode(path, index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn y4m_420_roundtrip_flat_gray() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.y4m");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "YUV4MPEG2 W4 H2 F25:1 Ip A1:1 C420jpeg").unwrap();
        for _ in 0..3 {
            f.write_all(b"FRAME\n").unwrap();
            f.write_all(&[126u8; 8]).unwrap(); // luma
            f.write_all(&[128u8; 4]).unwrap(); // 2x1 chroma planes
        }
        drop(f);
        let d = Y4mDecoder::default();
        let meta = d.probe(&path).unwrap();
        assert_eq!((meta.width, meta.height, meta.frame_count), (4, 2, 3));
        assert!((meta.fps - 25.0).abs() < 1e-12);
        let r = d.decode(&path, 2).unwrap();
        assert_eq!(r.pixel(0, 0), [128, 128, 128]);
        assert!(d.decode(&path, 3).is_err());
    }

    #[test]
    fn registry_picks_by_suffix() {
        let reg = DecoderRegistry::default();
        assert_eq!(
            reg.video_id(Path::new("/a/b/clip_01.synth.json")).as_deref(),
            Some("clip_01")
        );
        assert_eq!(reg.video_id(Path::new("x.y4m")).as_deref(), Some("x"));
        assert!(!reg.supports(Path::new("x.mp4")));
        assert!(matches!(
            reg.probe(Path::new("x.mp4")),
            Err(DecodeError::Unsupported(_))
        ));
    }

    #[test]
    fn synthetic_scene_moves_objects() {
        let scene = SyntheticScene {
            width: 20,
            height: 10,
            fps: 10.0,
            duration: 1.0,
            background: [0, 0, 0],
            objects: vec![SceneObject {
                name: "cup".into(),
                color: [9, 9, 9],
                rect: [0.0, 0.0, 2.0, 2.0],
                velocity: [10.0, 0.0],
            }],
            corrupt_frames: vec![],
        };
        let r = scene.render(5);
        assert_eq!(r.pixel(5, 0), [9, 9, 9]);
        assert_eq!(r.pixel(0, 0), [0, 0, 0]);
    }
}
