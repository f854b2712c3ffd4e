//! The trained-model document: a versioned JSON file whose floating-point
//! payload is hex-encoded, so that loading reproduces every bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::SelectKResult;
use crate::error::{Error, Result};
use crate::numerics::SampledCurve;
use crate::pipeline::{PipelineConfig, TrainOutcome};
use crate::predict::MixtureModel;

pub const FORMAT: &str = "trajmix-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub id: String,
    #[serde(with = "crate::hexfloat::vec")]
    pub values: Vec<f64>,
    /// 0-based cluster.
    pub cluster: usize,
    #[serde(with = "crate::hexfloat::vec")]
    pub posterior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub select_k: Option<SelectKResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub version: u32,
    pub mixture: MixtureModel,
    /// Single-cluster fit for the FP and FPCP baselines.
    pub pooled: Option<MixtureModel>,
    /// Kept so that bootstrap bands can be drawn from a saved model.
    pub training: Vec<TrainingCurve>,
    pub config: PipelineConfig,
    pub metadata: FitMetadata,
}

impl ModelArtifact {
    pub fn new(curves: &[SampledCurve], outcome: TrainOutcome, config: PipelineConfig, seed: u64) -> Self {
        let training = curves
            .iter()
            .zip(&outcome.assignments)
            .zip(&outcome.posterior)
            .map(|((c, &cluster), p)| TrainingCurve {
                id: c.id.clone(),
                values: c.values.clone(),
                cluster,
                posterior: p.clone(),
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            mixture: outcome.mixture,
            pooled: outcome.pooled,
            training,
            config,
            metadata: FitMetadata {
                seed,
                iterations: outcome.iterations,
                converged: outcome.converged,
                select_k: outcome.select_k,
            },
        }
    }

    pub fn training_curves(&self) -> Result<(Vec<SampledCurve>, Vec<usize>)> {
        let grid = self.mixture.grid().clone();
        let curves = self
            .training
            .iter()
            .map(|t| SampledCurve::new(grid.clone(), t.values.clone(), t.id.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok((curves, self.training.iter().map(|t| t.cluster).collect()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_str(text)
            .map_err(|e| Error::Artifact(format!("not a model document: {e}")))?;
        if header.format != FORMAT {
            return Err(Error::Artifact(format!("unknown document format {:?}", header.format)));
        }
        if header.version != VERSION {
            return Err(Error::Artifact(format!(
                "model version {} is not supported (expected {VERSION})",
                header.version
            )));
        }
        serde_json::from_str(text).map_err(|e| Error::Artifact(format!("malformed model document: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Artifact(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
