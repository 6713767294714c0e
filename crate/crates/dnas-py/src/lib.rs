//! Python bindings for the denoising-NAS engine: metrics, cost model,
//! Pareto front and a ready-to-run network wrapper.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dnas_core::blocks::{BlockKind, CandidateSpec, StageId, UNet, UNetConfig};
use dnas_core::cost::{candidate_cost, network_cost, pareto_front, ParetoPoint};
use dnas_core::data::{add_gaussian_noise, psnr, ssim};
use dnas_core::params::{Fwd, ParamStore};
use dnas_core::search::lambda_schedule;
use dnas_core::{Real, Tape};

fn err(e: dnas_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn all_stages() -> impl Iterator<Item = StageId> {
    StageId::SEARCHABLE.into_iter().chain([StageId::Mid])
}

fn parse_spec(s: &str) -> PyResult<CandidateSpec> {
    let (count, kind) = s
        .split_once('x')
        .ok_or_else(|| PyValueError::new_err(format!("expected COUNTxKIND, got {s:?}")))?;
    let count: usize = count
        .parse()
        .map_err(|_| PyValueError::new_err(format!("bad block count in {s:?}")))?;
    let kind = match kind {
        "alt0" => BlockKind::Alt0,
        "alt1" => BlockKind::Alt1,
        "alt2" => BlockKind::Alt2,
        "alt3" => BlockKind::Alt3,
        other => return Err(PyValueError::new_err(format!("unknown block kind {other:?}"))),
    };
    Ok(CandidateSpec::new(kind, count))
}

/// A denoising U-Net with its parameters, ready for inference.
#[pyclass]
struct Network {
    unet: UNet,
    store: ParamStore,
}

#[pymethods]
impl Network {
    /// Builds a network. `stages` optionally overrides per-stage block
    /// choices, e.g. `{"enc1": "2xalt0", "dec1": "1xalt3"}`; unset stages
    /// keep the full-size default. Starts at identity initialization.
    #[new]
    #[pyo3(signature = (width, input_channels, stages=None, seed=0))]
    fn new(
        width: usize,
        input_channels: usize,
        stages: Option<std::collections::HashMap<String, String>>,
        seed: u64,
    ) -> PyResult<Self> {
        let mut config = UNetConfig::base(width, input_channels);
        for (name, spec) in stages.unwrap_or_default() {
            let id = all_stages()
                .find(|s| s.name() == name)
                .ok_or_else(|| PyValueError::new_err(format!("unknown stage {name:?}")))?;
            config.set_stage(id, parse_spec(&spec)?);
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unet = UNet::build(&mut store, &mut rng, &config).map_err(err)?;
        unet.identity_init(&mut store);
        Ok(Network { unet, store })
    }

    fn load_params(&mut self, path: &str) -> PyResult<()> {
        self.store.load_into(std::path::Path::new(path)).map_err(err)
    }

    fn save_params(&self, path: &str) -> PyResult<()> {
        self.store.save(std::path::Path::new(path)).map_err(err)
    }

    /// Runs the network on a flattened [C,H,W] image in [0,1].
    fn denoise(&self, image: Vec<Real>, h: usize, w: usize) -> PyResult<Vec<Real>> {
        let c = self.unet.config.input_channels;
        if image.len() != c * h * w {
            return Err(PyValueError::new_err(format!(
                "expected {} values for {c}x{h}x{w}, got {}",
                c * h * w,
                image.len()
            )));
        }
        let tape = Tape::new();
        let mut fwd = Fwd::new(&tape, false);
        let x = tape.leaf(image, vec![1, c, h, w]).map_err(err)?;
        let y = self.unet.forward(&mut fwd, &self.store, x).map_err(err)?;
        Ok(tape.data(y).to_vec())
    }

    fn stages(&self) -> std::collections::HashMap<String, String> {
        all_stages()
            .map(|id| (id.name().to_string(), self.unet.config.stage(id).to_string()))
            .collect()
    }

    fn gmacs(&self, h: usize, w: usize) -> f64 {
        network_cost(&self.unet.config, h, w).gmacs()
    }

    fn param_count(&self) -> u64 {
        network_cost(&self.unet.config, 1, 1).params
    }
}

/// MACs and parameter count for a stack of `spec` blocks (e.g. "2xalt0")
/// at channel width `c` on an `h` by `w` feature map.
#[pyfunction]
fn block_cost(spec: &str, c: usize, h: usize, w: usize) -> PyResult<(u64, u64)> {
    let cost = candidate_cost(parse_spec(spec)?, c, h, w);
    Ok((cost.macs, cost.params))
}

/// Non-dominated subset of `(label, quality, cost)` points; higher quality
/// and lower cost are better.
#[pyfunction]
fn pareto(points: Vec<(String, f64, f64)>) -> PyResult<Vec<(String, f64, f64)>> {
    let points: Vec<ParetoPoint> = points
        .into_iter()
        .map(|(label, quality, cost)| ParetoPoint { label, quality, cost })
        .collect();
    Ok(pareto_front(&points)
        .map_err(err)?
        .into_iter()
        .map(|p| (p.label, p.quality, p.cost))
        .collect())
}

#[pyfunction]
#[pyo3(name = "psnr", signature = (a, b, peak=1.0))]
fn psnr_py(a: Vec<Real>, b: Vec<Real>, peak: Real) -> PyResult<Real> {
    psnr(&a, &b, peak).map_err(err)
}

#[pyfunction]
#[pyo3(name = "ssim")]
fn ssim_py(a: Vec<Real>, b: Vec<Real>, channels: usize, h: usize, w: usize) -> PyResult<Real> {
    ssim(&a, &b, channels, h, w).map_err(err)
}

/// Adds Gaussian read noise of standard deviation `sigma` (on the 0..255
/// scale) to a [0,1] image, deterministically per seed.
#[pyfunction]
#[pyo3(name = "add_gaussian_noise")]
fn add_gaussian_noise_py(clean: Vec<Real>, sigma: Real, seed: u64) -> PyResult<Vec<Real>> {
    add_gaussian_noise(&clean, sigma, seed).map_err(err)
}

/// Entropy coefficient at `epoch` on the geometric schedule from
/// `start` to `end` over `epochs` epochs.
#[pyfunction]
#[pyo3(name = "lambda_schedule")]
fn lambda_schedule_py(start: Real, end: Real, epoch: usize, epochs: usize) -> PyResult<Real> {
    lambda_schedule(start, end, epoch, epochs).map_err(err)
}

#[pymodule]
fn dnas(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_function(wrap_pyfunction!(block_cost, m)?)?;
    m.add_function(wrap_pyfunction!(pareto, m)?)?;
    m.add_function(wrap_pyfunction!(psnr_py, m)?)?;
    m.add_function(wrap_pyfunction!(ssim_py, m)?)?;
    m.add_function(wrap_pyfunction!(add_gaussian_noise_py, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_schedule_py, m)?)?;
    Ok(())
}
