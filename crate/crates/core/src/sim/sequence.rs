//! JSON-lines sequence files.
//!
//! One frame per line:
//! `{"seq": str, "id": int, "t": float, "pose": [x, y, yaw], "feature": [..]}`.
//! `"image"` may replace `"feature"` for frames that still need embedding.
//! Blank lines and lines starting with `#` are skipped.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::map::{l2_normalize, Pose2};

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub seq: String,
    pub frame_id: u64,
    pub t: f64,
    pub pose: Pose2,
    /// Unit-norm signature; absent when only an image path is known.
    pub feature: Option<Vec<f64>>,
    pub image_path: Option<String>,
    /// Ground-truth zone of synthetic frames.
    pub zone: Option<usize>,
}

impl Frame {
    pub fn feature(&self) -> Result<&[f64], SimError> {
        self.feature
            .as_deref()
            .ok_or(SimError::FeatureUnavailable(self.frame_id))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameLine {
    seq: String,
    id: u64,
    t: f64,
    pose: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    zone: Option<usize>,
}

pub fn load_sequence(path: &Path) -> Result<Vec<Frame>, SimError> {
    let file = File::open(path).map_err(|e| SimError::io(path, e))?;
    parse_sequence(BufReader::new(file))
}

/// Parses and validates a sequence. Line numbers in errors are 1-based and
/// count every physical line.
pub fn parse_sequence<R: BufRead>(input: R) -> Result<Vec<Frame>, SimError> {
    let mut frames: Vec<Frame> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut last_t: HashMap<String, f64> = HashMap::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| SimError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let raw: FrameLine = serde_json::from_str(text).map_err(|e| SimError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if raw.feature.is_none() && raw.image.is_none() {
            return Err(SimError::MissingFeature { line: line_no });
        }
        let [x, y, yaw] = raw.pose;
        let pose = Pose2::new(x, y, yaw);
        if !pose.is_finite() || !raw.t.is_finite() {
            return Err(SimError::Parse {
                line: line_no,
                msg: "non-finite pose or time".into(),
            });
        }
        match last_t.get_mut(&raw.seq) {
            Some(prev) if raw.t <= *prev => return Err(SimError::NonMonotoneTime { line: line_no }),
            Some(prev) => *prev = raw.t,
            None => {
                last_t.insert(raw.seq.clone(), raw.t);
            }
        }
        let feature = match raw.feature {
            Some(f) => {
                let expected = *dim.get_or_insert(f.len());
                if f.len() != expected {
                    return Err(SimError::DimensionMismatch {
                        line: line_no,
                        expected,
                        got: f.len(),
                    });
                }
                let f: Vec<f64> = f.into_iter().map(f64::from).collect();
                Some(l2_normalize(&f).map_err(|e| SimError::Parse {
                    line: line_no,
                    msg: e.to_string(),
                })?)
            }
            None => None,
        };
        frames.push(Frame {
            seq: raw.seq,
            frame_id: raw.id,
            t: raw.t,
            pose,
            feature,
            image_path: raw.image,
            zone: raw.zone,
        });
    }
    if frames.is_empty() {
        return Err(SimError::NoFrames);
    }
    Ok(frames)
}

/// Writes frames in the sequence format; features are stored as f32.
pub fn write_sequence<W: Write>(frames: &[Frame], out: W) -> Result<(), SimError> {
    let mut out = BufWriter::new(out);
    for f in frames {
        let line = FrameLine {
            seq: f.seq.clone(),
            id: f.frame_id,
            t: f.t,
            pose: [f.pose.x, f.pose.y, f.pose.yaw],
            feature: f
                .feature
                .as_ref()
                .map(|v| v.iter().map(|&c| c as f32).collect()),
            image: f.image_path.clone(),
            zone: f.zone,
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| SimError::io(Path::new("<output>"), e.into()))?;
        writeln!(out).map_err(|e| SimError::io(Path::new("<output>"), e))?;
    }
    out.flush().map_err(|e| SimError::io(Path::new("<output>"), e))
}

pub fn save_sequence(frames: &[Frame], path: &Path) -> Result<(), SimError> {
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    write_sequence(frames, file)
}
