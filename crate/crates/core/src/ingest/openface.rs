//! OpenFace-style AU CSV: header row, `frame, timestamp, AUxx_r..., AU28_c`.
//! OpenFace only reports presence for AU28, so `AU28_c` is read as
//! `0 -> 0.0`, `1 -> 5.0`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::facs::{canonical_au_catalogue, ActionUnitId, AuSequence, AuVector, NUM_AUS};

pub const AU28_PRESENCE_COLUMN: &str = "AU28_c";
const DEFAULT_FPS: f64 = 25.0;

fn column_for(au: ActionUnitId) -> String {
    if au == ActionUnitId::AU28 {
        AU28_PRESENCE_COLUMN.to_string()
    } else {
        au.intensity_column()
    }
}

pub fn read_openface_au_csv(path: &Path) -> Result<AuSequence> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_openface_au_csv(file)
}

pub fn parse_openface_au_csv<R: std::io::Read>(reader: R) -> Result<AuSequence> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let mut cols = [0usize; NUM_AUS];
    for au in canonical_au_catalogue() {
        let name = column_for(*au);
        cols[au.ordinal()] =
            find(&name).ok_or_else(|| Error::Schema(format!("missing required column {name}")))?;
    }
    let ts_col = find("timestamp");
    let au28 = ActionUnitId::AU28.ordinal();

    let mut frames = Vec::new();
    let mut stamps = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // Header is line 1, so data row i is line i + 2.
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse(format!("line {row}: {e}")))?;
        let mut values = [0.0; NUM_AUS];
        for (ord, &col) in cols.iter().enumerate() {
            let raw = record.get(col).ok_or_else(|| Error::Data {
                row,
                message: "row is shorter than header".into(),
            })?;
            let v: f64 = raw.parse().map_err(|_| Error::Data {
                row,
                message: format!("`{raw}` in column {} is not a number", &headers[col]),
            })?;
            values[ord] = if ord == au28 {
                match v {
                    x if x == 0.0 => 0.0,
                    x if x == 1.0 => 5.0,
                    _ => {
                        return Err(Error::Data {
                            row,
                            message: format!("{AU28_PRESENCE_COLUMN} must be 0 or 1, got {v}"),
                        })
                    }
                }
            } else {
                if !(v.is_finite() && (0.0..=5.0).contains(&v)) {
                    return Err(Error::Data {
                        row,
                        message: format!("{} = {v} outside [0, 5]", &headers[col]),
                    });
                }
                v
            };
        }
        frames.push(AuVector::new(&values).expect("values validated above"));
        if let Some(c) = ts_col {
            stamps.push(record.get(c).and_then(|s| s.parse::<f64>().ok()));
        }
    }
    if frames.is_empty() {
        return Err(Error::Data {
            row: 2,
            message: "no data rows".into(),
        });
    }
    let fps = estimate_fps(&stamps).unwrap_or(DEFAULT_FPS);
    AuSequence::new(frames, fps)
}

fn estimate_fps(stamps: &[Option<f64>]) -> Option<f64> {
    if stamps.len() < 2 {
        return None;
    }
    let first = stamps[0]?;
    let last = stamps[stamps.len() - 1]?;
    let span = last - first;
    if !(span > 0.0) {
        return None;
    }
    let fps = (stamps.len() - 1) as f64 / span;
    Some((fps * 1000.0).round() / 1000.0)
}

/// Writes the layout read by [`read_openface_au_csv`]. AU28 is written as
/// presence (`intensity > 0`).
pub fn write_openface_au_csv(seq: &AuSequence, path: &Path) -> Result<()> {
    let mut out = String::from("frame,timestamp");
    for au in canonical_au_catalogue() {
        out.push(',');
        out.push_str(&column_for(*au));
    }
    out.push('\n');
    let au28 = ActionUnitId::AU28.ordinal();
    for (i, frame) in seq.frames().iter().enumerate() {
        out.push_str(&format!("{},{:.3}", i + 1, i as f64 / seq.fps()));
        for (ord, v) in frame.as_slice().iter().enumerate() {
            if ord == au28 {
                out.push_str(if *v > 0.0 { ",1" } else { ",0" });
            } else {
                out.push_str(&format!(",{v}"));
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
