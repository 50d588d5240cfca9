//! JSON-lines, PPM images and metrics CSV.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use visionunite_core::forge::{FundusRecord, Image, ImageRef};
use visionunite_core::train::StepMetrics;

use crate::error::{Error, Result};

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    for item in items {
        let line = serde_json::to_string(item).expect("serializable value");
        writeln!(w, "{line}").map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

/// Creates `path`, making parent directories as needed.
pub fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::File::create(path).map_err(Error::io(path))
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    create(path)?.write_all(text.as_bytes()).map_err(Error::io(path))
}

fn channel_byte(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (P6), 8-bit channels.
pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|&x| channel_byte(x)));
    out
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    create(path)?.write_all(&encode_ppm(image)).map_err(Error::io(path))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode_ppm(&bytes).map_err(|message| Error::Image { path: path.into(), message })
}

/// Parses a P6 file with maxval up to 255.
pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(format!("unsupported magic {:?}, expected P6", fields[0]));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} {s:?}"));
    let (w, h, max) = (num(&fields[1], "width")?, num(&fields[2], "height")?, num(&fields[3], "maxval")?);
    if max == 0 || max > 255 {
        return Err(format!("maxval {max} not in 1..=255"));
    }
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() < w * h * 3 {
        return Err(format!("expected {} pixel bytes, found {}", w * h * 3, data.len()));
    }
    let pixels = data[..w * h * 3].iter().map(|&b| b as f64 / max as f64).collect();
    Image::new(w, h, pixels).map_err(|e| e.to_string())
}

/// Resolves a record's image; paths are relative to `base`.
pub fn load_image(image: &ImageRef, base: &Path) -> Result<Image> {
    match image {
        ImageRef::Inline(img) => Ok(img.clone()),
        ImageRef::Path(p) => read_ppm(&base.join(p)),
    }
}

/// Reads a record corpus and the images it points at.
pub fn load_corpus(path: &Path) -> Result<Vec<(FundusRecord, Image)>> {
    let base = parent_dir(path);
    read_jsonl::<FundusRecord>(path)?
        .into_iter()
        .map(|r| {
            let img = load_image(&r.image, &base)?;
            Ok((r, img))
        })
        .collect()
}

pub fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub const METRICS_HEADER: &str = "step,lr,clip,cls,llm,total";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(metrics: &[StepMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        out.push_str(&format!("{},{},{},{},{},{}\n", m.step, m.lr, opt(m.clip), opt(m.cls), m.llm, m.total));
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> std::result::Result<Vec<StepMetrics>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        other => return Err(format!("expected header {METRICS_HEADER:?}, found {other:?}")),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(format!("line {}: expected 6 fields", i + 2));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| format!("line {}: bad number {s:?}", i + 2));
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            Ok(StepMetrics {
                step: f[0].parse().map_err(|_| format!("line {}: bad step", i + 2))?,
                lr: num(f[1])?,
                clip: opt(f[2])?,
                cls: opt(f[3])?,
                llm: num(f[4])?,
                total: num(f[5])?,
            })
        })
        .collect()
}
