//! Datasets on disk: a JSON manifest next to PGM images or CSV vectors.
//!
//! ```json
//! { "sequences": [ { "frames": ["seq000/frame0000.pgm", ...], "ground_truth": "seq000/ground_truth.csv" } ] }
//! ```
//!
//! A `.pgm` entry is one grayscale frame of shape `[1, H, W]`, scaled to
//! `[0, 1]`. A `.csv` entry holds one vector frame per row. Ground truth is a
//! CSV with one column (rotation angle) or two (centroid row, col). Relative
//! paths are resolved against the manifest's directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tcoh_core::data::{DataError, DatasetMeta, GroundTruth, Sequence, SequenceDataset};
use tcoh_core::nn::Tensor;
use thiserror::Error;

use crate::config::{DatasetSource, ResolvedSource};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: malformed manifest: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("{path}: malformed PGM: {msg}")]
    Pgm { path: PathBuf, msg: String },
    #[error("{path}:{line}: {msg}")]
    Csv { path: PathBuf, line: usize, msg: String },
    #[error("{path}: frame shape {actual:?} differs from {expected:?}")]
    Shape {
        path: PathBuf,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("{path}: unsupported frame file (expected .pgm or .csv)")]
    Extension { path: PathBuf },
    #[error("frames of shape {0:?} cannot be stored (need a vector or a 1 × H × W image)")]
    Unsupported(Vec<usize>),
    #[error("{path}: {source}")]
    Data { path: PathBuf, source: DataError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sequences: Vec<ManifestSequence>,
    /// Generator spec the data came from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<DatasetSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSequence {
    pub frames: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetIoError + '_ {
    move |source| DatasetIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses a binary (P5) PGM with `maxval ≤ 255` into a `[1, H, W]` frame in `[0, 1]`.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Tensor, DatasetIoError> {
    let err = |msg: &str| DatasetIoError::Pgm {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if !bytes.starts_with(b"P5") {
        return Err(err("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and `#` comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(err("expected a number in the header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| err("header number out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err("header must end with a single whitespace byte"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(err("zero width or height"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(err("only 8-bit images (maxval 1..=255) are supported"));
    }
    let pixels = &bytes[pos..];
    if pixels.len() != width * height {
        return Err(err(&format!(
            "expected {} pixel bytes, found {}",
            width * height,
            pixels.len()
        )));
    }
    let scale = maxval as f64;
    if let Some(&v) = pixels.iter().find(|&&v| v as usize > maxval) {
        return Err(err(&format!("pixel value {v} exceeds maxval {maxval}")));
    }
    let data = pixels.iter().map(|&v| v as f64 / scale).collect();
    Ok(Tensor::new(vec![1, height, width], data).expect("size checked"))
}

/// Encodes a `[1, H, W]` frame with values in `[0, 1]` as an 8-bit PGM,
/// rounding to the nearest level.
pub fn encode_pgm(frame: &Tensor) -> Result<Vec<u8>, DatasetIoError> {
    let &[1, h, w] = frame.shape() else {
        return Err(DatasetIoError::Unsupported(frame.shape().to_vec()));
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(frame.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Rows of comma-separated floats; blank lines are skipped.
pub fn parse_csv(text: &str, path: &Path) -> Result<Vec<Vec<f64>>, DatasetIoError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DatasetIoError::Csv {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        if let Some(first) = rows.first().map(Vec::len) {
            if row.len() != first {
                return Err(DatasetIoError::Csv {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("{} columns, expected {first}", row.len()),
                });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Shortest text that parses back to the same `f64`, in exponent form for
/// very small or large magnitudes.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// Formats rows so that every value parses back to the same `f64`.
pub fn format_csv<R: AsRef<[f64]>>(rows: &[R]) -> String {
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row.as_ref().iter().map(|&v| format_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn read_csv(path: &Path) -> Result<Vec<Vec<f64>>, DatasetIoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_csv(&text, path)
}

/// `path` may be the manifest itself or a directory containing `manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

/// Loads a dataset from a manifest (or a directory holding one).
pub fn load_image_sequence(path: &Path) -> Result<SequenceDataset, DatasetIoError> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DatasetIoError::Manifest {
        path: mpath.clone(),
        msg: e.to_string(),
    })?;
    let base = mpath.parent().unwrap_or(Path::new("."));

    let mut expected: Option<Vec<usize>> = None;
    let mut check = |path: &Path, t: &Tensor| match &expected {
        None => {
            expected = Some(t.shape().to_vec());
            Ok(())
        }
        Some(e) if e.as_slice() != t.shape() => Err(DatasetIoError::Shape {
            path: path.to_path_buf(),
            expected: e.clone(),
            actual: t.shape().to_vec(),
        }),
        _ => Ok(()),
    };

    let mut sequences = Vec::with_capacity(manifest.sequences.len());
    for seq in &manifest.sequences {
        let mut frames = Vec::new();
        for rel in &seq.frames {
            let path = base.join(rel);
            match path.extension().and_then(|e| e.to_str()) {
                Some("pgm") => {
                    let bytes = fs::read(&path).map_err(io_err(&path))?;
                    let t = parse_pgm(&bytes, &path)?;
                    check(&path, &t)?;
                    frames.push(t);
                }
                Some("csv") => {
                    for row in read_csv(&path)? {
                        let t = Tensor::from_vec(row);
                        check(&path, &t)?;
                        frames.push(t);
                    }
                }
                _ => return Err(DatasetIoError::Extension { path }),
            }
        }
        let ground_truth = match &seq.ground_truth {
            None => None,
            Some(rel) => {
                let path = base.join(rel);
                let rows = read_csv(&path)?;
                let csv_err = |msg: String| DatasetIoError::Csv {
                    path: path.clone(),
                    line: 1,
                    msg,
                };
                match rows.first().map(Vec::len) {
                    None => None,
                    Some(1) => Some(GroundTruth::Angles(rows.iter().map(|r| r[0]).collect())),
                    Some(2) => Some(GroundTruth::Centroids(rows.iter().map(|r| (r[0], r[1])).collect())),
                    Some(n) => return Err(csv_err(format!("ground truth needs 1 or 2 columns, found {n}"))),
                }
            }
        };
        sequences.push(Sequence { frames, ground_truth });
    }
    let meta = match manifest.generator.as_ref().map(|g| g.resolve(base)) {
        Some(ResolvedSource::RotatingPoints(s)) => DatasetMeta::RotatingPoints(s),
        Some(ResolvedSource::MovingSquare(s)) => DatasetMeta::MovingSquare(s),
        _ => DatasetMeta::External,
    };
    SequenceDataset::new(sequences, meta).map_err(|source| DatasetIoError::Data { path: mpath, source })
}

/// Writes `ds` under `dir`: `manifest.json`, one `seqNNN/` directory per
/// sequence with PGM frames (images) or `frames.csv` (vectors), and
/// `ground_truth.csv` when labels exist.
pub fn save_dataset(ds: &SequenceDataset, dir: &Path) -> Result<(), DatasetIoError> {
    let image = match ds.frame_shape() {
        None => false,
        Some([_]) => false,
        Some([1, _, _]) => true,
        Some(s) => return Err(DatasetIoError::Unsupported(s.to_vec())),
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(ds.sequences.len());
    for (si, seq) in ds.sequences.iter().enumerate() {
        let name = format!("seq{si:03}");
        let sdir = dir.join(&name);
        fs::create_dir_all(&sdir).map_err(io_err(&sdir))?;
        let mut frames = Vec::new();
        if image {
            for (fi, f) in seq.frames.iter().enumerate() {
                let file = format!("frame{fi:04}.pgm");
                let path = sdir.join(&file);
                fs::write(&path, encode_pgm(f)?).map_err(io_err(&path))?;
                frames.push(PathBuf::from(&name).join(file));
            }
        } else if !seq.frames.is_empty() {
            let path = sdir.join("frames.csv");
            let rows: Vec<&[f64]> = seq.frames.iter().map(|f| f.data()).collect();
            fs::write(&path, format_csv(&rows)).map_err(io_err(&path))?;
            frames.push(PathBuf::from(&name).join("frames.csv"));
        }
        let ground_truth = match &seq.ground_truth {
            None => None,
            Some(gt) => {
                let rows: Vec<Vec<f64>> = match gt {
                    GroundTruth::Angles(a) => a.iter().map(|&v| vec![v]).collect(),
                    GroundTruth::Centroids(c) => c.iter().map(|&(r, col)| vec![r, col]).collect(),
                };
                let path = sdir.join("ground_truth.csv");
                fs::write(&path, format_csv(&rows)).map_err(io_err(&path))?;
                Some(PathBuf::from(&name).join("ground_truth.csv"))
            }
        };
        entries.push(ManifestSequence { frames, ground_truth });
    }
    let generator = match ds.meta {
        DatasetMeta::RotatingPoints(s) => Some(s.into()),
        DatasetMeta::MovingSquare(s) => Some(s.into()),
        DatasetMeta::External => None,
    };
    let manifest = Manifest {
        sequences: entries,
        generator,
    };
    let path = dir.join(MANIFEST_NAME);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))
}
