//! Python bindings: latents, the diffusion world, watermark keys, the CSI
//! attack and the benchmark.

use std::path::PathBuf;
use std::sync::Arc;

use csi_core::attack::{run_csi, AttackConfig, Attacker};
use csi_core::diffusion::NoiseSource;
use csi_core::eval::{detect_image, frechet_distance as frechet, run_benchmark as bench, BenchConfig, Providers};
use csi_core::semantic::{AnchorSet, AttackIntent, GenerationLedger, MockCaptioner, MockProposer, Prompt};
use csi_core::tensor::{sample_latent as sample, LatentTensor, Shape};
use csi_core::watermark::{keygen, KeyFile, Scheme, SchemeConfig};
use csi_core::world::{DiffusionConfig, World as CoreWorld};
use csi_core::{latfile, Error};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py_json(py: Python<'_>, json: String) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (json,))?.unbind())
}

/// A `[C, H, W]` float32 latent.
#[pyclass(module = "csi_lab")]
#[derive(Clone)]
struct Latent(LatentTensor);

#[pymethods]
impl Latent {
    #[new]
    fn new(shape: (usize, usize, usize), data: Vec<f32>) -> PyResult<Self> {
        LatentTensor::new(Shape::new(shape.0, shape.1, shape.2), data).map(Latent).map_err(err)
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        latfile::read(&path).map(Latent).map_err(err)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        latfile::write(&path, &self.0).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let s = self.0.shape();
        (s.channels, s.height, s.width)
    }

    fn tolist(&self) -> Vec<f32> {
        self.0.data().to_vec()
    }

    fn max_abs_diff(&self, other: &Latent) -> PyResult<f32> {
        self.0.max_abs_diff(&other.0).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Standard normal latent for `seed`.
#[pyfunction]
#[pyo3(signature = (seed, shape = (4, 32, 32)))]
fn sample_latent(seed: u64, shape: (usize, usize, usize)) -> PyResult<Latent> {
    sample(seed, Shape::new(shape.0, shape.1, shape.2)).map(Latent).map_err(err)
}

/// Toy latent diffusion model with its text and latent encoders.
#[pyclass(module = "csi_lab", frozen)]
struct World(Arc<CoreWorld>);

#[pymethods]
impl World {
    /// `config_json` overrides fields of the default diffusion configuration.
    #[new]
    #[pyo3(signature = (config_json = None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        let cfg: DiffusionConfig = match config_json {
            Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => DiffusionConfig::default(),
        };
        CoreWorld::new(cfg).map(|w| World(Arc::new(w))).map_err(err)
    }

    fn embed_text(&self, prompt: &str) -> PyResult<Vec<f64>> {
        let p = Prompt::new(prompt).map_err(err)?;
        Ok(self.0.embed_text(&p).map_err(err)?.values().to_vec())
    }

    fn embed_image(&self, x: &Latent) -> PyResult<Vec<f64>> {
        Ok(self.0.embed_image(&x.0).map_err(err)?.values().to_vec())
    }

    #[pyo3(signature = (z, prompt, seed = 0))]
    fn generate(&self, z: &Latent, prompt: &str, seed: u64) -> PyResult<Latent> {
        let c = self.0.embed_text(&Prompt::new(prompt).map_err(err)?).map_err(err)?;
        Ok(Latent(self.0.generate(&z.0, &c, NoiseSource::Fresh(seed)).map_err(err)?.0))
    }

    fn invert(&self, x: &Latent, prompt: &str) -> PyResult<Latent> {
        let c = self.0.embed_text(&Prompt::new(prompt).map_err(err)?).map_err(err)?;
        self.0.invert(&x.0, &c).map(Latent).map_err(err)
    }
}

/// A calibrated watermark key.
#[pyclass(module = "csi_lab")]
struct Key(KeyFile);

#[pymethods]
impl Key {
    #[staticmethod]
    #[pyo3(signature = (scheme, seed, n_null = 1000, fpr = 0.01))]
    fn generate(scheme: &str, seed: u64, n_null: usize, fpr: f64) -> PyResult<Self> {
        let scheme: Scheme = scheme.parse().map_err(err)?;
        let mut cfg = SchemeConfig::default();
        cfg.calibration.n_null = n_null;
        cfg.calibration.fpr_target = fpr;
        keygen(scheme, &cfg, Shape::default(), seed).map(Key).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        KeyFile::read(&path).map(Key).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.write(&path).map_err(err)
    }

    #[getter]
    fn scheme(&self) -> String {
        self.0.key.scheme().to_string()
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.0.key.threshold()
    }

    /// Watermarked initial latent; `prompt` feeds content-aware schemes.
    fn embed(&self, world: &World, seed: u64, prompt: &str) -> PyResult<Latent> {
        let c = world.0.embed_text(&Prompt::new(prompt).map_err(err)?).map_err(err)?;
        self.0.key.embed(seed, &c).map(Latent).map_err(err)
    }

    /// Inverts `x` under `caption` and runs the detector.
    fn detect(&self, py: Python<'_>, world: &World, x: &Latent, caption: &str) -> PyResult<Py<PyAny>> {
        let c = world.0.embed_text(&Prompt::new(caption).map_err(err)?).map_err(err)?;
        let z = world.0.invert(&x.0, &c).map_err(err)?;
        let o = self.0.key.detect(&z, &c).map_err(err)?;
        to_py_json(py, serde_json::to_string(&o).expect("outcome serializes"))
    }
}

/// Runs CSI with mock providers on `x0` generated from `prompt`. Returns the
/// attack result, the top candidate latent (or None) and its detection.
#[pyfunction]
#[pyo3(signature = (world, key, x0, prompt, anchors, target, replace = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn attack_csi<'py>(
    py: Python<'py>,
    world: &World,
    key: &Key,
    x0: &Latent,
    prompt: &str,
    anchors: &str,
    target: &str,
    replace: Option<&str>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let ledger = Arc::new(GenerationLedger::new());
    let t0 = Prompt::new(prompt).map_err(err)?;
    ledger.register(&x0.0, t0.raw(), seed, None);
    let captioner = MockCaptioner::new(ledger.clone()).with_seed(seed);
    let proposer = MockProposer::bundled(seed);
    let a = Attacker {
        world: &world.0,
        captioner: &captioner,
        proposer: &proposer,
        ledger: &ledger,
        config: AttackConfig {
            seed,
            ..AttackConfig::default()
        },
    };
    let g = AnchorSet::parse(anchors).map_err(err)?;
    let r = run_csi(&a, &x0.0, &t0, &g, &AttackIntent::new(target, replace)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("result", to_py_json(py, r.to_json().map_err(err)?)?)?;
    match r.top().and_then(|c| c.image.clone()) {
        Some(x) => {
            let o = detect_image(&world.0, &key.0.key, &captioner, &x).map_err(err)?;
            out.set_item("detection", to_py_json(py, serde_json::to_string(&o).expect("outcome serializes"))?)?;
            out.set_item("image", Latent(x))?;
        }
        None => {
            out.set_item("detection", py.None())?;
            out.set_item("image", py.None())?;
        }
    }
    Ok(out)
}

/// Benchmark with mock providers; `config_json` overrides the default configuration.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn run_benchmark(py: Python<'_>, config_json: Option<&str>) -> PyResult<Py<PyAny>> {
    let cfg: BenchConfig = match config_json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => BenchConfig::default(),
    };
    let report = py.detach(|| bench(&cfg, &Providers::mock(cfg.seed))).map_err(err)?;
    to_py_json(py, serde_json::to_string(&report).expect("report serializes"))
}

#[pyfunction]
fn frechet_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    frechet(&a, &b).map_err(err)
}

#[pymodule]
fn csi_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Latent>()?;
    m.add_class::<World>()?;
    m.add_class::<Key>()?;
    m.add_function(wrap_pyfunction!(sample_latent, m)?)?;
    m.add_function(wrap_pyfunction!(attack_csi, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    Ok(())
}
