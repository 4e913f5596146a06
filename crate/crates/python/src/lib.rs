//! Python bindings for `stereomag`.
//!
//! Images cross the boundary as nested lists `rows[y][x][c]` of floats in
//! `[0, 1]`; cameras, MPIs and images are wrapped as opaque classes.

use std::path::PathBuf;

use nalgebra::{Matrix3, Vector3};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use stereomag::fit::{fit_mpi, AlphaInit, FitConfig};
use stereomag::geometry::make_depth_planes;
use stereomag::oracle::SyntheticScene;
use stereomag::{dataset, io, metrics, oracle, render};

fn err(e: stereomag::Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyArithmeticError::new_err(e.to_string())
    }
}

#[pyclass(name = "Camera", frozen)]
struct PyCamera {
    inner: stereomag::Camera,
}

#[pymethods]
impl PyCamera {
    /// Pinhole camera in pixel units; `rotation` (row-major 3x3) and
    /// `translation` give the world-from-camera pose.
    #[new]
    #[pyo3(signature = (fx, fy, cx, cy, width, height, rotation=None, translation=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Option<[[f64; 3]; 3]>,
        translation: Option<[f64; 3]>,
    ) -> PyResult<Self> {
        let k = stereomag::Intrinsics::new(fx, fy, cx, cy, width, height).map_err(err)?;
        let r = rotation.unwrap_or([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let r = Matrix3::from_fn(|i, j| r[i][j]);
        let t = Vector3::from(translation.unwrap_or([0.0; 3]));
        let pose = stereomag::Pose::new(r, t).map_err(err)?;
        Ok(Self {
            inner: stereomag::Camera::new(k, pose).map_err(err)?,
        })
    }

    /// Identity-pose camera with the principal point at the image center.
    #[staticmethod]
    fn centered(focal: f64, width: usize, height: usize) -> PyResult<Self> {
        let k = stereomag::Intrinsics::centered(focal, width, height).map_err(err)?;
        Ok(Self {
            inner: stereomag::Camera {
                intrinsics: k,
                pose: stereomag::Pose::identity(),
            },
        })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        self.inner.center().into()
    }

    fn with_center(&self, center: [f64; 3]) -> Self {
        Self {
            inner: self.inner.with_center(Vector3::from(center)),
        }
    }

    /// Pixel coordinates and depth of a world point, or `None` behind the camera.
    fn project(&self, point: [f64; 3]) -> Option<(f64, f64, f64)> {
        self.inner.project(&Vector3::from(point))
    }

    fn __repr__(&self) -> String {
        let c = self.inner.center();
        format!(
            "Camera({}x{}, f={:.3}, center=({:.4}, {:.4}, {:.4}))",
            self.inner.width(),
            self.inner.height(),
            self.inner.intrinsics.fx,
            c.x,
            c.y,
            c.z
        )
    }
}

#[pyclass(name = "Image", frozen)]
struct PyImage {
    inner: stereomag::Image<f32>,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(rows: Vec<Vec<[f32; 3]>>) -> PyResult<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, Vec::len);
        if w == 0 || rows.iter().any(|r| r.len() != w) {
            return Err(PyValueError::new_err("rows must be a non-empty rectangle of RGB triples"));
        }
        let img = stereomag::Image::from_fn(w, h, 3, |c, x, y| rows[y][x][c]);
        Ok(Self { inner: img })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_image(&path).map_err(err)?,
        })
    }

    #[pyo3(signature = (path, bits16=false))]
    fn save(&self, path: PathBuf, bits16: bool) -> PyResult<()> {
        io::write_image(&path, &self.inner, bits16).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn pixel(&self, x: usize, y: usize) -> PyResult<[f32; 3]> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err(format!("pixel ({x}, {y}) out of bounds")));
        }
        Ok([0, 1, 2].map(|c| self.inner.get(c, x, y)))
    }

    fn to_list(&self) -> Vec<Vec<[f32; 3]>> {
        let img = &self.inner;
        (0..img.height())
            .map(|y| (0..img.width()).map(|x| [0, 1, 2].map(|c| img.get(c, x, y))).collect())
            .collect()
    }

    fn mean_abs_diff(&self, other: &PyImage) -> PyResult<f64> {
        self.inner.mean_abs_diff(&other.inner).map_err(err)
    }
}

#[pyclass(name = "Mpi", frozen)]
struct PyMpi {
    inner: stereomag::MultiplaneImage<f32>,
}

#[pymethods]
impl PyMpi {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_mpi(&dir).map_err(err)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        io::save_mpi(&dir, &self.inner).map_err(err)
    }

    #[getter]
    fn depths(&self) -> Vec<f64> {
        self.inner.depth_planes().depths().to_vec()
    }

    #[getter]
    fn ref_camera(&self) -> PyCamera {
        PyCamera {
            inner: *self.inner.ref_camera(),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.count()
    }

    fn render(&self, py: Python<'_>, camera: &PyCamera) -> PyResult<PyImage> {
        let cam = camera.inner;
        let out = py.detach(|| render::render_view(&self.inner, &cam)).map_err(err)?;
        Ok(PyImage { inner: out.image })
    }
}

/// Depths of `count` planes between `near` and `far`, far to near, equally
/// spaced in disparity.
#[pyfunction]
fn depth_planes(near: f64, far: f64, count: usize) -> PyResult<Vec<f64>> {
    Ok(make_depth_planes(near, far, count).map_err(err)?.depths().to_vec())
}

/// Homography mapping target pixels to source pixels through the
/// fronto-parallel plane at `depth` in the source frame.
#[pyfunction]
fn inverse_homography(source: &PyCamera, target: &PyCamera, depth: f64) -> PyResult<[[f64; 3]; 3]> {
    let h = stereomag::geometry::inverse_homography(&source.inner, &target.inner, depth).map_err(err)?;
    Ok([0, 1, 2].map(|i| [0, 1, 2].map(|j| h[(i, j)])))
}

/// Fit an MPI from a stereo pair. Returns the MPI and the JSON report.
#[pyfunction]
#[pyo3(signature = (left, right, left_camera, right_camera, variant="bg-blend", planes=32, steps=2000, learning_rate=0.05, near=1.0, far=100.0, seed=0, alpha_init="plane-sweep"))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    left: &PyImage,
    right: &PyImage,
    left_camera: &PyCamera,
    right_camera: &PyCamera,
    variant: &str,
    planes: usize,
    steps: usize,
    learning_rate: f64,
    near: f64,
    far: f64,
    seed: u64,
    alpha_init: &str,
) -> PyResult<(PyMpi, String)> {
    let config = FitConfig {
        variant: variant.parse().map_err(err)?,
        planes,
        steps,
        learning_rate,
        near,
        far,
        seed,
        alpha_init: alpha_init.parse::<AlphaInit>().map_err(err)?,
        ..FitConfig::default()
    };
    let (i1, i2) = (&left.inner, &right.inner);
    let (c1, c2) = (left_camera.inner, right_camera.inner);
    let (mpi, report) = py
        .detach(|| fit_mpi(i1, i2, &c1, &c2, &[(i1.clone(), c1), (i2.clone(), c2)], &config))
        .map_err(err)?;
    Ok((PyMpi { inner: mpi }, report.to_json()))
}

#[pyfunction]
fn psnr(pred: &PyImage, truth: &PyImage) -> PyResult<f64> {
    metrics::psnr(&pred.inner, &truth.inner).map_err(err)
}

#[pyfunction]
fn ssim(pred: &PyImage, truth: &PyImage) -> PyResult<f64> {
    metrics::ssim(&pred.inner, &truth.inner).map_err(err)
}

/// Ray-cast render of a scene description (the `range`/`background`/`layer`
/// text format).
#[pyfunction]
fn oracle_render(py: Python<'_>, scene: &str, camera: &PyCamera) -> PyResult<PyImage> {
    let scene = SyntheticScene::parse(scene, "<scene>".as_ref()).map_err(err)?;
    let cam = camera.inner;
    Ok(PyImage {
        inner: py.detach(|| oracle::oracle_render(&scene, &cam)),
    })
}

/// Exact MPI of a scene whose layers sit on planes of the given stack.
#[pyfunction]
fn scene_to_mpi(scene: &str, near: f64, far: f64, planes: usize, camera: &PyCamera) -> PyResult<PyMpi> {
    let scene = SyntheticScene::parse(scene, "<scene>".as_ref()).map_err(err)?;
    let dp = make_depth_planes(near, far, planes).map_err(err)?;
    Ok(PyMpi {
        inner: oracle::scene_to_mpi(&scene, &dp, &camera.inner).map_err(err)?,
    })
}

/// Linear-interpolated percentile, `p` in `[0, 100]`.
#[pyfunction]
fn percentile(values: Vec<f64>, p: f64) -> Option<f64> {
    dataset::percentile(&values, p)
}

/// Per-frame smoothness flags for a camera trajectory.
#[pyfunction]
fn smooth_flags(positions: Vec<[f64; 3]>) -> PyResult<Vec<bool>> {
    let pts: Vec<_> = positions.into_iter().map(Vector3::from).collect();
    dataset::smooth_flags(&pts).map_err(err)
}

/// Sample a training triplet from a sequence file; returns it as JSON.
#[pyfunction]
fn sample_triplet(sequence: PathBuf, seed: u64) -> PyResult<String> {
    let text = io::read_text(&sequence).map_err(err)?;
    let seq = dataset::parse_sequence(&text, &sequence).map_err(err)?;
    let t = dataset::sample_triplet(&seq, seed).map_err(err)?;
    serde_json::to_string(&t).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn parameter_count(variant: &str, planes: usize, height: usize, width: usize) -> PyResult<usize> {
    Ok(stereomag::mpi::parameter_count(variant.parse().map_err(err)?, planes, height, width))
}

#[pymodule]
fn pystereomag(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCamera>()?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyMpi>()?;
    m.add_function(wrap_pyfunction!(depth_planes, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_homography, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_render, m)?)?;
    m.add_function(wrap_pyfunction!(scene_to_mpi, m)?)?;
    m.add_function(wrap_pyfunction!(percentile, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_flags, m)?)?;
    m.add_function(wrap_pyfunction!(sample_triplet, m)?)?;
    m.add_function(wrap_pyfunction!(parameter_count, m)?)?;
    Ok(())
}
