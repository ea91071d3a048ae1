use serde::{Deserialize, Serialize};

pub type Rgb = [u8; 3];

/// Packed 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Raster {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..(width as usize * height as usize) {
            data.extend_from_slice(&color);
        }
        Self { width, height, data }
    }

    /// Wraps raw RGB bytes; `None` if the length does not match.
    pub fn from_rgb(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * 3).then_some(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_rgb(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, c: Rgb) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Fills every pixel whose center lies inside the pixel-space rectangle.
    pub fn fill_rect(&mut self, left: f64, top: f64, right: f64, bottom: f64, c: Rgb) {
        let x0 = (left - 0.5).ceil().max(0.0) as u32;
        let y0 = (top - 0.5).ceil().max(0.0) as u32;
        let x1 = ((right - 0.5).ceil().max(0.0) as u32).min(self.width);
        let y1 = ((bottom - 0.5).ceil().max(0.0) as u32).min(self.height);
        for y in y0..y1 {
            for x in x0..x1 {
                self.set_pixel(x, y, c);
            }
        }
    }
}

/// Pixel-space bounds of a connected region, inclusive min and exclusive max.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub pixels: usize,
}

/// 4-connected components of pixels exactly equal to `color`, in scan order
/// of their first pixel.
pub fn color_regions(raster: &Raster, color: Rgb) -> Vec<Region> {
    let (w, h) = (raster.width as usize, raster.height as usize);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || raster.pixel((start % w) as u32, (start / w) as u32) != color {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut r = Region {
            x0: u32::MAX,
            y0: u32::MAX,
            x1: 0,
            y1: 0,
            pixels: 0,
        };
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            r.x0 = r.x0.min(x as u32);
            r.y0 = r.y0.min(y as u32);
            r.x1 = r.x1.max(x as u32 + 1);
            r.y1 = r.y1.max(y as u32 + 1);
            r.pixels += 1;
            let mut visit = |j: usize| {
                if !seen[j] && raster.pixel((j % w) as u32, (j / w) as u32) == color {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        out.push(r);
    }
    out
}


/// Lossless PNG encoding. Output bytes are deterministic for a given raster.
pub fn encode_png(raster: &Raster) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, raster.width, raster.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(&raster.data).expect("in-memory PNG data");
    }
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<Raster, String> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or("PNG too large")?];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width, info.height);
    let rgb = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err("unexpanded palette image".into()),
    };
    Raster::from_rgb(w, h, rgb).ok_or_else(|| "PNG size mismatch".to_string())
}

#[cfg(test)]
mod png_tests {
    use super::*;

    #[test]
    fn png_roundtrip() {
        let mut r = Raster::filled(7, 5, [10, 20, 30]);
        r.set_pixel(3, 2, [255, 0, 128]);
        let bytes = encode_png(&r);
        assert_eq!(decode_png(&bytes).unwrap(), r);
        assert_eq!(bytes, encode_png(&r));
    }
}
