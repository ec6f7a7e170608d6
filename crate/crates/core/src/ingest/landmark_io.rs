//! Landmark CSV: header `x0,y0,...,x161,y161`, then one row per frame.
//! Values are written in shortest round-trip decimal form so reads are
//! bit-exact. The file carries no timing; sequences read back at 25 FPS
//! unless a rate is given.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::facs::{LandmarkFrame, LandmarkSequence, LANDMARK_DIM, NUM_LANDMARKS};

pub const DEFAULT_LANDMARK_FPS: f64 = 25.0;

pub fn landmark_header() -> String {
    (0..NUM_LANDMARKS)
        .map(|i| format!("x{i},y{i}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn read_landmark_file(path: &Path) -> Result<LandmarkSequence> {
    read_landmark_file_at(path, DEFAULT_LANDMARK_FPS)
}

pub fn read_landmark_file_at(path: &Path, fps: f64) -> Result<LandmarkSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&text, fps)
}

pub fn parse_landmarks(text: &str, fps: f64) -> Result<LandmarkSequence> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let width = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .len();
    if width != LANDMARK_DIM {
        return Err(Error::Schema(format!(
            "landmark file has {width} columns, expected {LANDMARK_DIM} (162 points)"
        )));
    }
    let mut flat = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse(format!("line {row}: {e}")))?;
        if rec.len() != LANDMARK_DIM {
            return Err(Error::Schema(format!(
                "line {row} has {} values, expected {LANDMARK_DIM}",
                rec.len()
            )));
        }
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {row}: `{field}` is not a number")))?;
            flat.push(v);
        }
    }
    if flat.is_empty() {
        return Err(Error::Parse("landmark file has no frames".into()));
    }
    LandmarkSequence::from_flat(&flat, fps)
}

pub fn format_landmarks(seq: &LandmarkSequence) -> String {
    let mut out = landmark_header();
    out.push('\n');
    for frame in seq.frames() {
        write_frame_row(&mut out, frame);
    }
    out
}

fn write_frame_row(out: &mut String, frame: &LandmarkFrame) {
    for (i, v) in frame.to_flat().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v:?}").expect("writing to a String cannot fail");
    }
    out.push('\n');
}

pub fn write_landmark_file(seq: &LandmarkSequence, path: &Path) -> Result<()> {
    std::fs::write(path, format_landmarks(seq)).map_err(|e| Error::io(path, e))
}
