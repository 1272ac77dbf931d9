use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kernel::KernelSpec;
use super::model::{gp_fit, GpHyper, TrainedGp};
use crate::error::{Error, Result};

const FORMAT: &str = "adprog-gp";
const VERSION: u32 = 1;

/// On-disk form of a trained GP. The factorization is recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GpFile {
    format: String,
    version: u32,
    noise_variance: f64,
    prior_mean: f64,
    kernel: KernelSpec,
    x_train: Vec<Vec<f64>>,
    y_train: Vec<f64>,
}

pub fn gp_to_toml(model: &TrainedGp<KernelSpec>) -> String {
    let file = GpFile {
        format: FORMAT.into(),
        version: VERSION,
        noise_variance: model.hyper().noise_variance,
        prior_mean: model.hyper().prior_mean,
        kernel: model.hyper().kernel.clone(),
        x_train: model.x_train().to_vec(),
        y_train: model.y_train().to_vec(),
    };
    toml::to_string(&file).expect("gp file serializes")
}

pub fn gp_from_toml(text: &str) -> Result<TrainedGp<KernelSpec>> {
    let file: GpFile = toml::from_str(text).map_err(|e| Error::Config(format!("gp model: {e}")))?;
    if file.format != FORMAT {
        return Err(Error::Config(format!("not a GP model file (format `{}`)", file.format)));
    }
    if file.version != VERSION {
        return Err(Error::Config(format!("unsupported GP model version {}", file.version)));
    }
    let hyper = GpHyper::new(file.kernel, file.noise_variance, file.prior_mean)?;
    gp_fit(&file.x_train, &file.y_train, &hyper)
}

pub fn save_gp(model: &TrainedGp<KernelSpec>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, gp_to_toml(model)).map_err(|e| Error::io(path, e))
}

pub fn load_gp(path: impl AsRef<Path>) -> Result<TrainedGp<KernelSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    gp_from_toml(&text)
}
