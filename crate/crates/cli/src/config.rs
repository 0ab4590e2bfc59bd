//! Run configuration read from `--config`.
//!
//! Every block rejects unknown keys. The model block is parsed as raw
//! parameters first so that a malformed file (exit 2) is told apart from a
//! well-formed model that violates the modelling assumptions (exit 3).

use serde::{Deserialize, Serialize};
use spectral_distill::montecarlo::EntryDist;
use spectral_distill::spectra::ModelParams;
use spectral_distill::{SdParams, ShrinkageFn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    /// Quadrature nodes; falls back to `SPECTRAL_DISTILL_NODES`, then the library default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<RiskBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub federated: Option<FederatedBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureBlock {
    /// Number of equispaced interior points of the bulk.
    pub points: usize,
}

impl Default for MeasureBlock {
    fn default() -> Self {
        MeasureBlock { points: 200 }
    }
}

/// Grid of hyperparameter values: explicit, or `points` values from `lo` to `hi`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub lo: f64,
    #[serde(default)]
    pub hi: f64,
    #[serde(default)]
    pub points: usize,
    #[serde(default)]
    pub log: bool,
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>, String> {
        if let Some(v) = &self.values {
            if v.is_empty() {
                return Err("grid.values is empty".into());
            }
            return Ok(v.clone());
        }
        let (lo, hi, n) = (self.lo, self.hi, self.points);
        if n == 0 || !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(format!("grid needs points >= 1 and lo <= hi, got lo={lo} hi={hi} points={n}"));
        }
        if self.log && lo <= 0.0 {
            return Err("a log grid needs lo > 0".into());
        }
        if n == 1 {
            return Ok(vec![lo]);
        }
        Ok((0..n)
            .map(|k| {
                let t = k as f64 / (n - 1) as f64;
                if self.log {
                    lo * (hi / lo).powf(t)
                } else {
                    lo + (hi - lo) * t
                }
            })
            .collect())
    }
}

/// One-parameter rule family swept by the `risk` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    Ridge,
    /// Upper-tail fraction `τ` of the PCR surrogate.
    Pcr,
    /// Step count at fixed step size.
    GdSteps { eta: f64 },
    /// Step size at fixed step count.
    GdEta { steps: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
    /// Extra fixed rules, one row each.
    #[serde(default)]
    pub rules: Vec<ShrinkageFn>,
    /// Add rows for the optimal prediction and estimation rules.
    #[serde(default)]
    pub include_optimal: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederatedBlock {
    pub k: usize,
}

/// Estimator in a simulation; the limiting target is derived from the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SimEstimator {
    Ridge { lambda: f64 },
    /// Ridge at the limiting-risk minimiser over a 400-point log grid on [1e-3, 1e3].
    TunedRidge,
    /// Self-distillation with the parameters of the optimal prediction rule.
    OptimalSd,
    Sd { params: SdParams },
    Pcr { m: usize },
    MinNorm,
    Gd { eta: f64, steps: usize },
    Rule { rule: ShrinkageFn },
}

impl SimEstimator {
    pub fn label(&self) -> String {
        match self {
            SimEstimator::Ridge { lambda } => format!("ridge_{lambda}"),
            SimEstimator::TunedRidge => "tuned_ridge".into(),
            SimEstimator::OptimalSd => "optimal_sd".into(),
            SimEstimator::Sd { .. } => "sd".into(),
            SimEstimator::Pcr { m } => format!("pcr_{m}"),
            SimEstimator::MinNorm => "min_norm".into(),
            SimEstimator::Gd { eta, steps } => format!("gd_{eta}_{steps}"),
            SimEstimator::Rule { .. } => "rule".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub n: usize,
    pub p: usize,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_dist: Option<EntryDist>,
    /// Estimators for `simulate`; `sweep` reads its own list.
    #[serde(default)]
    pub estimators: Vec<SimEstimator>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Delta,
    SigmaEpsSq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub parameter: SweepParameter,
    /// Spike whose `delta` is swept.
    #[serde(default)]
    pub spike: usize,
    pub grid: Grid,
    #[serde(default)]
    pub estimators: Vec<SimEstimator>,
    /// Emit the optimal self-distillation parameters and outlier locations.
    #[serde(default)]
    pub optimal_params: bool,
    /// Pair each limiting risk with a Monte Carlo estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SweepSim>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSim {
    pub n: usize,
    pub p: usize,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

