//! Python bindings. Images cross the boundary as nested `[row][col]` grayscale
//! lists, landmark frames as lists of `[x, y]` pairs.

use autalk_core::facs::{
    canonical_au_catalogue, emotion_to_au_vector, emotion_to_aus, ActionUnitId, AuVector, EmotionLabel,
    LandmarkFrame, LandmarkPartition, LandmarkSequence,
};
use autalk_core::geometry::{self, SimilarityTransform};
use autalk_core::image_buf::Image;
use autalk_core::ingest::RigSpec;
use autalk_core::metrics::{self, EmbeddingSet, LmdRegion};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(autalk, AutalkError, PyException);

fn py_err(e: autalk_core::Error) -> PyErr {
    AutalkError::new_err(format!("{}: {}", e.category(), e))
}

fn parse_au(au: &str) -> PyResult<ActionUnitId> {
    au.parse().map_err(py_err)
}

fn parse_emotion(label: &str) -> PyResult<EmotionLabel> {
    label.parse().map_err(py_err)
}

fn image_from_rows(rows: &[Vec<f32>]) -> PyResult<Image> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(AutalkError::new_err("shape: image rows differ in length"));
    }
    Image::new(w, h, 1, rows.concat()).map_err(py_err)
}

fn sequence(frames: Vec<Vec<[f64; 2]>>, fps: f64) -> PyResult<LandmarkSequence> {
    let frames = frames.into_iter().map(LandmarkFrame::new).collect::<autalk_core::Result<Vec<_>>>().map_err(py_err)?;
    LandmarkSequence::new(frames, fps).map_err(py_err)
}

/// Intensities for the 18 canonical AUs, each in `[0, 5]`.
#[pyclass(name = "AuVector", from_py_object)]
#[derive(Clone)]
struct PyAuVector(AuVector);

#[pymethods]
impl PyAuVector {
    #[new]
    #[pyo3(signature = (values=None))]
    fn new(values: Option<Vec<f64>>) -> PyResult<Self> {
        match values {
            None => Ok(Self(AuVector::zeros())),
            Some(v) => AuVector::new(&v).map(Self).map_err(py_err),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (label, intensity=3.0))]
    fn from_emotion(label: &str, intensity: f64) -> PyResult<Self> {
        emotion_to_au_vector(parse_emotion(label)?, intensity).map(Self).map_err(py_err)
    }

    fn get(&self, au: &str) -> PyResult<f64> {
        Ok(self.0.get(parse_au(au)?))
    }

    fn set(&mut self, au: &str, value: f64) -> PyResult<()> {
        self.0.set(parse_au(au)?, value).map_err(py_err)
    }

    fn values(&self) -> Vec<f64> {
        self.0.as_slice().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.as_slice().len()
    }

    fn __repr__(&self) -> String {
        format!("AuVector({:?})", self.0.as_slice())
    }
}

#[pyclass(name = "SimilarityTransform", from_py_object)]
#[derive(Clone)]
struct PyTransform(SimilarityTransform);

#[pymethods]
impl PyTransform {
    #[new]
    #[pyo3(signature = (scale=1.0, angle=0.0, translation=[0.0, 0.0]))]
    fn new(scale: f64, angle: f64, translation: [f64; 2]) -> PyResult<Self> {
        SimilarityTransform::from_angle(scale, angle, translation).map(Self).map_err(py_err)
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.0.scale()
    }

    #[getter]
    fn angle(&self) -> f64 {
        self.0.angle()
    }

    #[getter]
    fn translation(&self) -> [f64; 2] {
        self.0.translation()
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    fn apply(&self, points: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
        points.into_iter().map(|p| self.0.apply_point(p)).collect()
    }
}

/// Procedural landmark rig: base face plus linear AU and audio directions.
#[pyclass(name = "Rig")]
struct PyRig(RigSpec);

#[pymethods]
impl PyRig {
    #[new]
    #[pyo3(signature = (audio_width=16, noise_std=0.0, seed=0))]
    fn new(audio_width: usize, noise_std: f64, seed: u64) -> PyResult<Self> {
        RigSpec::procedural(audio_width, noise_std, seed).map(Self).map_err(py_err)
    }

    fn base_frame(&self) -> Vec<[f64; 2]> {
        self.0.base_frame().points().to_vec()
    }

    /// Noise-free landmarks for one frame.
    #[pyo3(signature = (aus, audio=None))]
    fn evaluate(&self, aus: &PyAuVector, audio: Option<Vec<f64>>) -> PyResult<Vec<[f64; 2]>> {
        let audio = audio.unwrap_or_else(|| vec![0.0; self.0.audio_width]);
        if audio.len() != self.0.audio_width {
            return Err(AutalkError::new_err(format!(
                "shape: audio row has {} values, rig expects {}",
                audio.len(),
                self.0.audio_width
            )));
        }
        let flat = self.0.evaluate(&aus.0, &audio);
        Ok(flat.chunks(2).map(|c| [c[0], c[1]]).collect())
    }
}

/// AU names in canonical order.
#[pyfunction]
fn catalogue() -> Vec<String> {
    canonical_au_catalogue().iter().map(|a| a.to_string()).collect()
}

#[pyfunction]
fn emotion_aus(label: &str) -> PyResult<Vec<String>> {
    Ok(emotion_to_aus(parse_emotion(label)?).into_iter().map(|a| a.to_string()).collect())
}

#[pyfunction]
#[pyo3(signature = (a, b, peak=1.0))]
fn psnr(a: Vec<Vec<f32>>, b: Vec<Vec<f32>>, peak: f64) -> PyResult<f64> {
    metrics::psnr(&image_from_rows(&a)?, &image_from_rows(&b)?, peak).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (a, b, window=11, dynamic_range=1.0))]
fn ssim(a: Vec<Vec<f32>>, b: Vec<Vec<f32>>, window: usize, dynamic_range: f64) -> PyResult<f64> {
    metrics::ssim_with_window(&image_from_rows(&a)?, &image_from_rows(&b)?, window, dynamic_range).map_err(py_err)
}

/// Landmark distance over the mouth points (`mouth=True`) or all points.
#[pyfunction]
#[pyo3(signature = (pred, gt, mouth=true))]
fn lmd(pred: Vec<Vec<[f64; 2]>>, gt: Vec<Vec<[f64; 2]>>, mouth: bool) -> PyResult<f64> {
    let region = if mouth { LmdRegion::Mouth } else { LmdRegion::Full };
    metrics::lmd(&sequence(pred, 25.0)?, &sequence(gt, 25.0)?, &LandmarkPartition::default(), region).map_err(py_err)
}

#[pyfunction]
fn frechet_distance(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<f64> {
    let x = EmbeddingSet::from_rows(&x).map_err(py_err)?;
    let y = EmbeddingSet::from_rows(&y).map_err(py_err)?;
    metrics::frechet_distance(&x, &y).map_err(py_err)
}

/// Similarity transform taking `src` onto `reference` in the least-squares sense.
#[pyfunction]
fn procrustes(src: Vec<[f64; 2]>, reference: Vec<[f64; 2]>) -> PyResult<PyTransform> {
    geometry::procrustes_points(&src, &reference).map(PyTransform).map_err(py_err)
}

/// Gaussian keypoint raster as `[row][col]`.
#[pyfunction]
fn rasterize(points: Vec<[f64; 2]>, resolution: usize) -> PyResult<Vec<Vec<f32>>> {
    let r = geometry::rasterize_points(&points, resolution).map_err(py_err)?;
    Ok(r.data().chunks(resolution).map(<[f32]>::to_vec).collect())
}

/// Runs the command-line tool in-process and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    autalk_core::cli::main_with_args(std::iter::once("autalk".to_string()).chain(args))
}

#[pymodule]
fn autalk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AutalkError", m.py().get_type::<AutalkError>())?;
    m.add("NUM_AUS", autalk_core::facs::NUM_AUS)?;
    m.add("NUM_LANDMARKS", autalk_core::facs::NUM_LANDMARKS)?;
    m.add_class::<PyAuVector>()?;
    m.add_class::<PyTransform>()?;
    m.add_class::<PyRig>()?;
    m.add_function(wrap_pyfunction!(catalogue, m)?)?;
    m.add_function(wrap_pyfunction!(emotion_aus, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(lmd, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(procrustes, m)?)?;
    m.add_function(wrap_pyfunction!(rasterize, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
