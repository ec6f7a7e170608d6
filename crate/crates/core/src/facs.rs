//! Facial Action Coding vocabulary: the 18-AU catalogue, AU intensity
//! vectors, 162-point landmark containers, the emotion to AU map and the
//! mouth/face landmark partition.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const NUM_AUS: usize = 18;
pub const NUM_LANDMARKS: usize = 162;
/// Flattened landmark width, `x0, y0, ..., x161, y161`.
pub const LANDMARK_DIM: usize = NUM_LANDMARKS * 2;
pub const MAX_INTENSITY: f64 = 5.0;

const AU_NUMBERS: [u8; NUM_AUS] = [1, 2, 4, 5, 6, 7, 9, 10, 12, 14, 15, 17, 20, 23, 25, 26, 28, 45];

const AU_NAMES: [&str; NUM_AUS] = [
    "Inner Brow Raiser",
    "Outer Brow Raiser",
    "Brow Lowerer",
    "Upper Lid Raiser",
    "Cheek Raiser",
    "Lid Tightener",
    "Nose Wrinkler",
    "Upper Lip Raiser",
    "Lip Corner Puller",
    "Dimpler",
    "Lip Corner Depressor",
    "Chin Raiser",
    "Lip Stretcher",
    "Lip Tightener",
    "Lips Part",
    "Jaw Drop",
    "Lip Suck",
    "Blink",
];

/// One member of the 18-AU catalogue. Construction validates membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionUnitId(u8);

impl ActionUnitId {
    pub const AU1: Self = Self(1);
    pub const AU2: Self = Self(2);
    pub const AU4: Self = Self(4);
    pub const AU5: Self = Self(5);
    pub const AU6: Self = Self(6);
    pub const AU7: Self = Self(7);
    pub const AU9: Self = Self(9);
    pub const AU10: Self = Self(10);
    pub const AU12: Self = Self(12);
    pub const AU14: Self = Self(14);
    pub const AU15: Self = Self(15);
    pub const AU17: Self = Self(17);
    pub const AU20: Self = Self(20);
    pub const AU23: Self = Self(23);
    pub const AU25: Self = Self(25);
    pub const AU26: Self = Self(26);
    pub const AU28: Self = Self(28);
    pub const AU45: Self = Self(45);

    pub fn new(number: u8) -> Result<Self> {
        if AU_NUMBERS.contains(&number) {
            Ok(Self(number))
        } else {
            Err(Error::InvalidInput(format!(
                "AU{number} is not in the 18-AU catalogue"
            )))
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }

    /// Position of this AU in every [`AuVector`].
    pub fn ordinal(self) -> usize {
        AU_NUMBERS
            .iter()
            .position(|&n| n == self.0)
            .expect("catalogue membership is checked at construction")
    }

    pub fn from_ordinal(ordinal: usize) -> Option<Self> {
        AU_NUMBERS.get(ordinal).map(|&n| Self(n))
    }

    pub fn name(self) -> &'static str {
        AU_NAMES[self.ordinal()]
    }

    /// OpenFace intensity column, e.g. `AU04_r`.
    pub fn intensity_column(self) -> String {
        format!("AU{:02}_r", self.0)
    }
}

impl fmt::Display for ActionUnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AU{}", self.0)
    }
}

impl FromStr for ActionUnitId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches("AU").trim_start_matches("au");
        let n: u8 = digits
            .parse()
            .map_err(|_| Error::InvalidInput(format!("cannot parse action unit `{s}`")))?;
        Self::new(n)
    }
}

static CATALOGUE: [ActionUnitId; NUM_AUS] = {
    let mut out = [ActionUnitId(0); NUM_AUS];
    let mut i = 0;
    while i < NUM_AUS {
        out[i] = ActionUnitId(AU_NUMBERS[i]);
        i += 1;
    }
    out
};

/// The ordered 18-AU catalogue. Index `i` is the AU at ordinal `i`.
pub fn canonical_au_catalogue() -> &'static [ActionUnitId; NUM_AUS] {
    &CATALOGUE
}

/// Per-frame AU intensities, one slot per catalogue ordinal, each in `[0, 5]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuVector([f64; NUM_AUS]);

impl AuVector {
    pub fn zeros() -> Self {
        Self([0.0; NUM_AUS])
    }

    pub fn new(values: &[f64]) -> Result<Self> {
        if values.len() != NUM_AUS {
            return Err(Error::InvalidInput(format!(
                "AU vector needs {NUM_AUS} entries, got {}",
                values.len()
            )));
        }
        let mut out = [0.0; NUM_AUS];
        for (i, (&v, slot)) in values.iter().zip(out.iter_mut()).enumerate() {
            check_intensity(v).map_err(|msg| {
                Error::InvalidInput(format!("{} {msg}", CATALOGUE[i]))
            })?;
            *slot = v;
        }
        Ok(Self(out))
    }

    pub fn get(&self, au: ActionUnitId) -> f64 {
        self.0[au.ordinal()]
    }

    pub fn set(&mut self, au: ActionUnitId, value: f64) -> Result<()> {
        check_intensity(value).map_err(|msg| Error::InvalidInput(format!("{au} {msg}")))?;
        self.0[au.ordinal()] = value;
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_intensity(v: f64) -> std::result::Result<(), String> {
    if v.is_finite() && (0.0..=MAX_INTENSITY).contains(&v) {
        Ok(())
    } else {
        Err(format!("intensity {v} outside [0, {MAX_INTENSITY}]"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuSequence {
    frames: Vec<AuVector>,
    fps: f64,
}

impl AuSequence {
    pub fn new(frames: Vec<AuVector>, fps: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidInput("AU sequence needs at least one frame".into()));
        }
        check_fps(fps)?;
        Ok(Self { frames, fps })
    }

    /// `len` copies of the same vector.
    pub fn constant(v: AuVector, len: usize, fps: f64) -> Result<Self> {
        Self::new(vec![v; len], fps)
    }

    pub fn frames(&self) -> &[AuVector] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }
}

pub(crate) fn check_fps(fps: f64) -> Result<()> {
    if fps.is_finite() && fps > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("fps must be positive, got {fps}")))
    }
}

/// 162 keypoints in normalized image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    points: Vec<[f64; 2]>,
}

impl LandmarkFrame {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::Schema(format!(
                "landmark frame needs {NUM_LANDMARKS} points, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite landmark coordinate".into()));
        }
        Ok(Self { points })
    }

    /// From `x0, y0, x1, y1, ...`.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != LANDMARK_DIM {
            return Err(Error::Schema(format!(
                "flattened landmark frame needs {LANDMARK_DIM} values, got {}",
                flat.len()
            )));
        }
        Self::new(flat.chunks_exact(2).map(|p| [p[0], p[1]]).collect())
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSequence {
    frames: Vec<LandmarkFrame>,
    fps: f64,
}

impl LandmarkSequence {
    pub fn new(frames: Vec<LandmarkFrame>, fps: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidInput(
                "landmark sequence needs at least one frame".into(),
            ));
        }
        check_fps(fps)?;
        Ok(Self { frames, fps })
    }

    /// From a row-major `T x 324` buffer.
    pub fn from_flat(flat: &[f64], fps: f64) -> Result<Self> {
        if flat.is_empty() || flat.len() % LANDMARK_DIM != 0 {
            return Err(Error::Shape(format!(
                "flat landmark buffer of length {} is not a multiple of {LANDMARK_DIM}",
                flat.len()
            )));
        }
        let frames = flat
            .chunks_exact(LANDMARK_DIM)
            .map(LandmarkFrame::from_flat)
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames, fps)
    }

    pub fn frames(&self) -> &[LandmarkFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.to_flat()).collect()
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::Shape(format!(
                "slice {start}..{} out of range for {} frames",
                start + len,
                self.len()
            )));
        }
        Self::new(self.frames[start..start + len].to_vec(), self.fps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EmotionLabel {
    Angry,
    Disgust,
    Fear,
    Happy,
    Sad,
    Surprised,
    Contempt,
    Neutral,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 8] = [
        EmotionLabel::Angry,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Happy,
        EmotionLabel::Sad,
        EmotionLabel::Surprised,
        EmotionLabel::Contempt,
        EmotionLabel::Neutral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Angry => "angry",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Surprised => "surprised",
            EmotionLabel::Contempt => "contempt",
            EmotionLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        EmotionLabel::ALL
            .into_iter()
            .find(|e| e.as_str() == key)
            .ok_or_else(|| Error::InvalidInput(format!("unknown emotion label `{s}`")))
    }
}

/// Canonical AU combination for an emotion category. Neutral maps to no AUs.
pub fn emotion_to_aus(label: EmotionLabel) -> BTreeSet<ActionUnitId> {
    use ActionUnitId as A;
    let aus: &[ActionUnitId] = match label {
        EmotionLabel::Angry => &[A::AU4, A::AU7, A::AU10, A::AU23],
        EmotionLabel::Disgust => &[A::AU7, A::AU14, A::AU17],
        EmotionLabel::Fear => &[A::AU2, A::AU4, A::AU5, A::AU7, A::AU26],
        EmotionLabel::Happy => &[A::AU6, A::AU12],
        EmotionLabel::Sad => &[A::AU4, A::AU7, A::AU15],
        EmotionLabel::Surprised => &[A::AU1, A::AU2, A::AU5, A::AU26],
        EmotionLabel::Contempt => &[A::AU12, A::AU14],
        EmotionLabel::Neutral => &[],
    };
    aus.iter().copied().collect()
}

/// AU vector with `intensity` at every AU of the emotion's combination.
pub fn emotion_to_au_vector(label: EmotionLabel, intensity: f64) -> Result<AuVector> {
    check_intensity(intensity).map_err(Error::InvalidInput)?;
    let mut v = AuVector::zeros();
    for au in emotion_to_aus(label) {
        v.0[au.ordinal()] = intensity;
    }
    Ok(v)
}

/// Index layout of the 162-point face used by the synthetic rig and the
/// default partition. Real landmark sources should ship their own
/// partition file.
pub mod layout {
    use std::ops::Range;

    pub const JAW: Range<usize> = 0..33;
    pub const LEFT_BROW: Range<usize> = 33..43;
    pub const RIGHT_BROW: Range<usize> = 43..53;
    pub const LEFT_EYE: Range<usize> = 53..69;
    pub const RIGHT_EYE: Range<usize> = 69..85;
    pub const NOSE: Range<usize> = 85..112;
    pub const CHEEKS: Range<usize> = 112..122;
    pub const MOUTH_OUTER: Range<usize> = 122..146;
    pub const MOUTH_INNER: Range<usize> = 146..162;
    pub const MOUTH: Range<usize> = 122..162;
    /// Left and right outer-lip corners.
    pub const MOUTH_CORNERS: [usize; 2] = [122, 134];
}

/// Disjoint split of the 162 landmark indices into mouth and face sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LandmarkPartition {
    mouth: Vec<usize>,
    face: Vec<usize>,
}

impl LandmarkPartition {
    /// Mouth set given explicitly, face set is the complement.
    pub fn from_mouth(mouth: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mouth: BTreeSet<usize> = mouth.into_iter().collect();
        let face: Vec<usize> = (0..NUM_LANDMARKS).filter(|i| !mouth.contains(i)).collect();
        Self::from_sets(mouth.into_iter().collect(), face)
    }

    /// Both sets given; they must be disjoint, nonempty mouth, and cover 0..162.
    pub fn from_sets(mouth: Vec<usize>, face: Vec<usize>) -> Result<Self> {
        if mouth.is_empty() {
            return Err(Error::Invariant("mouth index set is empty".into()));
        }
        let mut seen = [false; NUM_LANDMARKS];
        for &i in mouth.iter().chain(face.iter()) {
            if i >= NUM_LANDMARKS {
                return Err(Error::Invariant(format!("landmark index {i} out of range")));
            }
            if seen[i] {
                return Err(Error::Invariant(format!(
                    "landmark index {i} assigned twice"
                )));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Invariant(format!(
                "landmark index {missing} assigned to neither set"
            )));
        }
        Ok(Self { mouth, face })
    }

    /// Plain text, one mouth index per line, `#` starts a comment.
    pub fn from_index_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_index_text(&text)
    }

    pub fn from_index_text(text: &str) -> Result<Self> {
        let mut mouth = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let idx: usize = body.parse().map_err(|_| {
                Error::Parse(format!("line {}: `{body}` is not an index", lineno + 1))
            })?;
            mouth.push(idx);
        }
        let unique: BTreeSet<usize> = mouth.iter().copied().collect();
        if unique.len() != mouth.len() {
            return Err(Error::Invariant("duplicate index in partition file".into()));
        }
        Self::from_mouth(mouth)
    }

    pub fn to_index_text(&self) -> String {
        let mut out = String::from("# mouth landmark indices, one per line\n");
        for i in &self.mouth {
            out.push_str(&format!("{i}\n"));
        }
        out
    }

    pub fn mouth(&self) -> &[usize] {
        &self.mouth
    }

    pub fn face(&self) -> &[usize] {
        &self.face
    }

    pub fn indices(&self, region: Region) -> &[usize] {
        match region {
            Region::Mouth => &self.mouth,
            Region::Face => &self.face,
        }
    }
}

impl Default for LandmarkPartition {
    /// Contiguous mouth block `122..162` (outer then inner lip).
    fn default() -> Self {
        Self::from_mouth(layout::MOUTH).expect("built-in partition is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Mouth,
    Face,
}

/// A landmark sequence restricted to a subset of indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSubsequence {
    pub indices: Vec<usize>,
    /// `frames[t][j]` is the point at `indices[j]` in frame `t`.
    pub frames: Vec<Vec<[f64; 2]>>,
}

pub fn split_landmarks(
    seq: &LandmarkSequence,
    part: &LandmarkPartition,
) -> (PointSubsequence, PointSubsequence) {
    let take = |idx: &[usize]| PointSubsequence {
        indices: idx.to_vec(),
        frames: seq
            .frames()
            .iter()
            .map(|f| idx.iter().map(|&i| f.points()[i]).collect())
            .collect(),
    };
    (take(part.mouth()), take(part.face()))
}

/// Inverse of [`split_landmarks`].
pub fn merge_landmarks(
    mouth: &PointSubsequence,
    face: &PointSubsequence,
    fps: f64,
) -> Result<LandmarkSequence> {
    if mouth.frames.len() != face.frames.len() {
        return Err(Error::Alignment(format!(
            "mouth has {} frames, face has {}",
            mouth.frames.len(),
            face.frames.len()
        )));
    }
    LandmarkPartition::from_sets(mouth.indices.clone(), face.indices.clone())?;
    let frames = mouth
        .frames
        .iter()
        .zip(&face.frames)
        .map(|(m, f)| {
            let mut pts = vec![[0.0; 2]; NUM_LANDMARKS];
            for (&i, &p) in mouth.indices.iter().zip(m) {
                pts[i] = p;
            }
            for (&i, &p) in face.indices.iter().zip(f) {
                pts[i] = p;
            }
            LandmarkFrame::new(pts)
        })
        .collect::<Result<Vec<_>>>()?;
    LandmarkSequence::new(frames, fps)
}
