//! CNP, AdaCNP and Gaussian-process conditional predictors.

mod bundle;
pub mod gp;
pub mod graph;
mod ops;
mod types;

pub use bundle::{BundleNodes, ModelBundle, ModelConfig, VARIANCE_FLOOR};
pub use gp::{fit_gp, gp_predict, GpConfig, GpGrid};
pub use ops::{
    adacnp_predict, cnp_predict, decode, embed, encode_context, gaussian_nll, score, softmax_weights,
    uniform_aggregate, weighted_aggregate,
};
pub use types::{ContextSet, GaussianPrediction, TargetBatch, WeightMatrix};

use crate::error::{Error, Result};

/// The two trainable model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NeuralKind {
    Cnp,
    AdaCnp,
}

/// Every model the toolkit can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    AdaCnp,
    Cnp,
    Gp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::AdaCnp => "adacnp",
            ModelKind::Cnp => "cnp",
            ModelKind::Gp => "gp",
        }
    }

    pub fn neural(self) -> Option<NeuralKind> {
        match self {
            ModelKind::AdaCnp => Some(NeuralKind::AdaCnp),
            ModelKind::Cnp => Some(NeuralKind::Cnp),
            ModelKind::Gp => None,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adacnp" => Ok(ModelKind::AdaCnp),
            "cnp" => Ok(ModelKind::Cnp),
            "gp" => Ok(ModelKind::Gp),
            other => Err(Error::contract(format!("unknown model `{other}` (adacnp, cnp, gp)"))),
        }
    }
}

/// Anything that maps a context set and target inputs to a Gaussian prediction.
pub trait ConditionalPredictor: Sync {
    fn predict(&self, ctx: &ContextSet, targets: &TargetBatch) -> Result<GaussianPrediction>;
}

/// A trained CNP or AdaCNP bundle.
#[derive(Debug, Clone)]
pub struct NeuralPredictor {
    pub kind: NeuralKind,
    pub bundle: ModelBundle,
}

impl ConditionalPredictor for NeuralPredictor {
    fn predict(&self, ctx: &ContextSet, targets: &TargetBatch) -> Result<GaussianPrediction> {
        match self.kind {
            NeuralKind::Cnp => cnp_predict(&self.bundle, ctx, targets),
            NeuralKind::AdaCnp => adacnp_predict(&self.bundle, ctx, targets).map(|(p, _)| p),
        }
    }
}

/// GP baseline refit on every context set; variances are floored like the
/// neural models'.
#[derive(Debug, Clone, Default)]
pub struct GpPredictor {
    pub grid: GpGrid,
}

impl ConditionalPredictor for GpPredictor {
    fn predict(&self, ctx: &ContextSet, targets: &TargetBatch) -> Result<GaussianPrediction> {
        let cfg = fit_gp(ctx, &self.grid)?;
        let p = gp_predict(&cfg, ctx, targets)?;
        let var = p.var().map(|v| v.max(VARIANCE_FLOOR));
        GaussianPrediction::new(p.mean().clone(), var)
    }
}
