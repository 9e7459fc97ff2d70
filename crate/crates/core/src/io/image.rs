use super::atomic_write;
use crate::{Error, Result};
use std::path::Path;

/// RGB image with interleaved `f64` samples, row-major from the top row.
/// LDR images hold values in `[0, 1]` (multiples of 1/255 when read from PNG),
/// HDR images hold linear radiance.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{} samples for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        ImageBuffer {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }
}

fn is_pfm(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"))
}

/// Reads a PNG or PFM image, chosen by extension.
pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    if is_pfm(path) {
        read_pfm(path)
    } else {
        read_png(path)
    }
}

/// Writes a PNG (values clamped to `[0, 1]` and quantized) or a PFM, chosen by extension.
pub fn write_image(path: &Path, img: &ImageBuffer) -> Result<()> {
    if is_pfm(path) {
        write_pfm(path, img)
    } else {
        write_png(path, img)
    }
}

pub fn read_png(path: &Path) -> Result<ImageBuffer> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let fmt = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(fmt)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    if info.bit_depth != png::BitDepth::Eight || info.color_type != png::ColorType::Rgb {
        return Err(Error::Format(format!(
            "{}: expected 8-bit RGB, found {:?} {:?}",
            path.display(),
            info.bit_depth,
            info.color_type
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data = buf[..w * h * 3].iter().map(|&b| b as f64 / 255.0).collect();
    ImageBuffer::new(w, h, data)
}

/// Quantizes `[0, 1]` values to 8 bits.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
        let mut w = enc.write_header().map_err(fmt)?;
        let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
        w.write_image_data(&bytes).map_err(fmt)?;
    }
    atomic_write(path, &out)
}

/// Little-endian PFM with rows stored bottom to top.
pub fn write_pfm(path: &Path, img: &ImageBuffer) -> Result<()> {
    let mut out = format!("PF\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    out.reserve(img.data.len() * 4);
    for row in (0..img.height).rev() {
        let start = row * img.width * 3;
        for &v in &img.data[start..start + img.width * 3] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    atomic_write(path, &out)
}

pub fn read_pfm(path: &Path) -> Result<ImageBuffer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pfm(&bytes).map_err(|m| Error::Format(format!("{}: {m}", path.display())))
}

fn parse_pfm(bytes: &[u8]) -> std::result::Result<ImageBuffer, String> {
    // three whitespace-terminated header tokens after the magic line
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        let t = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        Ok(t)
    };
    let magic = token()?;
    if magic != "PF" {
        return Err(format!("expected RGB PFM magic \"PF\", found {magic:?}"));
    }
    let w: usize = token()?.parse().map_err(|_| "bad width".to_string())?;
    let h: usize = token()?.parse().map_err(|_| "bad height".to_string())?;
    let scale: f64 = token()?.parse().map_err(|_| "bad scale".to_string())?;
    drop(token);
    if !(scale < 0.0) {
        return Err(format!(
            "scale {scale} declares big-endian data, only little-endian (negative scale) is supported"
        ));
    }
    // exactly one whitespace byte ends the header
    pos += 1;
    let n = w * h * 3;
    if w == 0 || h == 0 || bytes.len() < pos + n * 4 {
        return Err(format!("payload too short for {w}x{h}"));
    }
    if bytes.len() != pos + n * 4 {
        return Err("trailing bytes after payload".into());
    }
    let floats: Vec<f32> = bytes[pos..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut data = Vec::with_capacity(n);
    for row in (0..h).rev() {
        data.extend(floats[row * w * 3..(row + 1) * w * 3].iter().map(|&v| v as f64));
    }
    ImageBuffer::new(w, h, data).map_err(|e| e.to_string())
}
