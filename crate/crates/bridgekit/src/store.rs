//! Model checkpoints and fitted projectors on disk.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use bridgekit_core::encoder::{PcaProjector, RetinaFilter};
use bridgekit_core::model::{NetConfig, VelocityNet};
use bridgekit_core::{Schedule, ScheduleKind};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::tensor_file::{Dtype, TensorFile};

const MODEL_KIND: &str = "velocity_net";
const PROJECTOR_KIND: &str = "pca_projector";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub architecture: NetConfig,
    pub schedule: ScheduleKind,
    pub seed: u64,
}

pub fn save_model(net: &VelocityNet, path: &Path) -> Result<()> {
    let cfg = net.config();
    let meta = ModelMeta {
        seed: cfg.seed,
        architecture: cfg,
        schedule: net.schedule().kind(),
    };
    let mut file = TensorFile::new(MODEL_KIND, Dtype::F32, serde_json::to_value(&meta)?);
    for (name, shape, data) in net.tensors() {
        file.push(name, shape, data.to_vec());
    }
    file.write(path)
}

pub fn load_model(path: &Path) -> Result<VelocityNet> {
    let file = TensorFile::read(path)?;
    ensure!(
        file.kind == MODEL_KIND,
        "{} holds a {}, not a model",
        path.display(),
        file.kind
    );
    let meta: ModelMeta = serde_json::from_value(file.meta.clone()).context("model header")?;
    let schedule = Schedule::new(meta.schedule)?;
    let tensors: Vec<(&str, Vec<f64>)> = file
        .tensors
        .iter()
        .map(|(info, data)| (info.name.as_str(), data.clone()))
        .collect();
    Ok(VelocityNet::from_tensors(&meta.architecture, schedule, &tensors)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorMeta {
    pub filter: RetinaFilter,
    pub patch: usize,
    pub image_size: usize,
}

pub fn save_projector(p: &PcaProjector, meta: &ProjectorMeta, path: &Path) -> Result<()> {
    let (b, dim) = (p.rank(), p.dim());
    let mut file = TensorFile::new(PROJECTOR_KIND, Dtype::F64, json!(meta));
    file.push("mean", [1, dim], p.mean.clone());
    file.push("components", [b, dim], p.components.concat());
    file.push("eigenvalues", [1, b], p.eigenvalues.clone());
    file.push("total_variance", [1, 1], vec![p.total_variance]);
    file.write(path)
}

pub fn load_projector(path: &Path) -> Result<(PcaProjector, ProjectorMeta)> {
    let file = TensorFile::read(path)?;
    ensure!(
        file.kind == PROJECTOR_KIND,
        "{} holds a {}, not a projector",
        path.display(),
        file.kind
    );
    let meta: ProjectorMeta = serde_json::from_value(file.meta.clone()).context("projector header")?;
    let mean = file.get("mean")?.to_vec();
    let dim = mean.len();
    let components = file
        .get("components")?
        .chunks(dim.max(1))
        .map(<[f64]>::to_vec)
        .collect();
    let projector = PcaProjector {
        mean,
        components,
        eigenvalues: file.get("eigenvalues")?.to_vec(),
        total_variance: file.get("total_variance")?[0],
    };
    Ok((projector, meta))
}
