//! Experiment configuration: a single JSON schema shared by every
//! subcommand. Parsing rejects unknown keys, and each command pulls out the
//! sections it needs with errors that name the missing field.

use assoc_clt::cltlab::{NormalizationMode, Thresholds};
use assoc_clt::covariance::CovarianceModel;
use assoc_clt::fields::{constant_double, make_gaussian, make_iid, make_moving_average, IidLaw};
use assoc_clt::fields::FieldSampler;
use assoc_clt::lattice::MultiIndex;
use assoc_clt::slowvar::SlowVaryFn;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a run might need; commands validate the subset they use.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Covariance model for analytic commands (`variance`, `kfun`, ...).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelCfg>,
    /// Field sampler for Monte Carlo commands (`simulate`, `clt`, ...).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerCfg>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<Vec<i64>>>,
    /// Ball radii for the ball-susceptibility table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_grid: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Thresholds<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ui_n_grid: Option<Vec<Vec<i64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ui_replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lindeberg_epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lindeberg_replicates: Option<usize>,
    /// Slowly varying function under test for `svcheck`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slowvar: Option<SlowVarCfg>,
    /// Per-axis scale of the slow-variation probe; default 2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale_factor: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_min_exp: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_max_exp: Option<u32>,
    /// `svcheck` flags non-convergence when the final ratio strays from 1
    /// by more than this; default 0.06.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio_tolerance: Option<f64>,
    /// Single box for `blocking` and `simulate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<i64>>,
    /// Default output directory; the `--out` flag overrides it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelCfg {
    Finite(FiniteModelCfg),
    RadialPower(RadialPowerCfg),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FiniteModelCfg {
    pub dimension: usize,
    pub entries: Vec<LagValue>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct LagValue {
    pub lag: Vec<i64>,
    pub value: f64,
}

/// `R(m) = scale / (1 + |m|)^exponent` with the Euclidean norm.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RadialPowerCfg {
    pub dimension: usize,
    pub exponent: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplerCfg {
    IidNormal(IidCfg),
    IidBoundedUniform(IidCfg),
    MovingAverage(MaCfg),
    Gaussian(GaussianCfg),
    /// Degenerate associated field whose normalized sums stay two-valued;
    /// kept as a negative control for the verdict machinery.
    ConstantDouble(ConstantCfg),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct IidCfg {
    pub dimension: usize,
    pub variance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct MaCfg {
    pub dimension: usize,
    pub taps: Vec<LagValue>,
    pub noise_variance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GaussianCfg {
    pub model: ModelCfg,
    pub torus: Vec<i64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConstantCfg {
    pub dimension: usize,
    pub scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SlowVarCfg {
    LogProduct(DimensionCfg),
    /// `L(x) = prod x_k`: not slowly varying; the negative probe.
    CoordinateProduct(DimensionCfg),
    /// Rectangular susceptibility of the configured `model`.
    ModelSusceptibility(EmptyCfg),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DimensionCfg {
    pub dimension: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EmptyCfg {}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn require_model(&self) -> Result<CovarianceModel<f64>, CliError> {
        let cfg = self
            .model
            .as_ref()
            .ok_or_else(|| CliError::Config("config field `model` is required".into()))?;
        build_model(cfg)
    }

    pub fn require_sampler(&self) -> Result<FieldSampler<f64>, CliError> {
        let cfg = self
            .sampler
            .as_ref()
            .ok_or_else(|| CliError::Config("config field `sampler` is required".into()))?;
        build_sampler(cfg)
    }

    pub fn require_n_grid(&self) -> Result<Vec<MultiIndex>, CliError> {
        let grid = self
            .n_grid
            .as_ref()
            .ok_or_else(|| CliError::Config("config field `n-grid` is required".into()))?;
        if grid.is_empty() {
            return Err(CliError::Config("config field `n-grid` must be nonempty".into()));
        }
        grid.iter()
            .map(|coords| {
                MultiIndex::new(coords.clone())
                    .map_err(|e| CliError::Config(format!("config field `n-grid`: {e}")))
            })
            .collect()
    }

    pub fn require_box(&self, field: &'static str) -> Result<MultiIndex, CliError> {
        let coords = match field {
            "n" => &self.n,
            "p" => &self.p,
            "q" => &self.q,
            other => unreachable!("unknown box field {other}"),
        };
        let coords = coords
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("config field `{field}` is required")))?;
        MultiIndex::new(coords.clone())
            .map_err(|e| CliError::Config(format!("config field `{field}`: {e}")))
    }

    pub fn require_slowvar(&self) -> Result<SlowVaryFn<f64>, CliError> {
        let cfg = self
            .slowvar
            .as_ref()
            .ok_or_else(|| CliError::Config("config field `slowvar` is required".into()))?;
        match cfg {
            SlowVarCfg::LogProduct(c) => check_dim(c.dimension, "slowvar.dimension")
                .map(|_| SlowVaryFn::log_product(c.dimension)),
            SlowVarCfg::CoordinateProduct(c) => check_dim(c.dimension, "slowvar.dimension")
                .map(|_| SlowVaryFn::coordinate_product(c.dimension)),
            SlowVarCfg::ModelSusceptibility(_) => {
                let model = self.require_model()?;
                Ok(SlowVaryFn::from_kx(&model))
            }
        }
    }

    pub fn replicates_or(&self, default: usize) -> usize {
        self.replicates.unwrap_or(default)
    }

    pub fn normalization_or_exact(&self) -> NormalizationMode {
        self.normalization
            .unwrap_or(NormalizationMode::ExactVariance)
    }
}

/// Dimensions above 4 make every box sum astronomically wide; reject them
/// at the config boundary where the message can name the field.
const MAX_DIMENSION: usize = 4;

fn check_dim(d: usize, field: &str) -> Result<(), CliError> {
    if d == 0 || d > MAX_DIMENSION {
        return Err(CliError::Config(format!(
            "config field `{field}` must lie in 1..={MAX_DIMENSION}, got {d}"
        )));
    }
    Ok(())
}

pub fn build_model(cfg: &ModelCfg) -> Result<CovarianceModel<f64>, CliError> {
    match cfg {
        ModelCfg::Finite(c) => {
            check_dim(c.dimension, "model.dimension")?;
            let entries: Vec<(Vec<i64>, f64)> =
                c.entries.iter().map(|e| (e.lag.clone(), e.value)).collect();
            CovarianceModel::finite(c.dimension, entries)
                .map_err(|e| CliError::Config(format!("config field `model.entries`: {e}")))
        }
        ModelCfg::RadialPower(c) => {
            check_dim(c.dimension, "model.dimension")?;
            CovarianceModel::radial_power(c.dimension, c.exponent, c.scale)
                .map_err(|e| CliError::Config(format!("config field `model`: {e}")))
        }
    }
}

pub fn build_sampler(cfg: &SamplerCfg) -> Result<FieldSampler<f64>, CliError> {
    match cfg {
        SamplerCfg::IidNormal(c) => {
            check_dim(c.dimension, "sampler.dimension")?;
            make_iid(c.dimension, c.variance, IidLaw::Normal)
                .map_err(|e| CliError::Config(format!("config field `sampler`: {e}")))
        }
        SamplerCfg::IidBoundedUniform(c) => {
            check_dim(c.dimension, "sampler.dimension")?;
            make_iid(c.dimension, c.variance, IidLaw::BoundedUniform)
                .map_err(|e| CliError::Config(format!("config field `sampler`: {e}")))
        }
        SamplerCfg::MovingAverage(c) => {
            check_dim(c.dimension, "sampler.dimension")?;
            let taps = c.taps.iter().map(|t| (t.lag.clone(), t.value));
            make_moving_average(c.dimension, taps, c.noise_variance)
                .map_err(|e| CliError::Config(format!("config field `sampler.taps`: {e}")))
        }
        SamplerCfg::Gaussian(c) => {
            let model = build_model(&c.model)?;
            let torus = MultiIndex::new(c.torus.clone())
                .map_err(|e| CliError::Config(format!("config field `sampler.torus`: {e}")))?;
            // Embeddability is a synthesis failure, not a config typo.
            make_gaussian(&model, &torus).map_err(|e| CliError::Module(e.to_string()))
        }
        SamplerCfg::ConstantDouble(c) => {
            check_dim(c.dimension, "sampler.dimension")?;
            constant_double(c.dimension, c.scale)
                .map_err(|e| CliError::Config(format!("config field `sampler.scale`: {e}")))
        }
    }
}
