//! Run configuration files.
//!
//! Every command is driven by a JSON config; flags only override. A run
//! writes its fully-resolved config (defaults expanded, dimensions inferred,
//! paths absolutized) next to its outputs, and rerunning from that file
//! reproduces the run bit for bit. All randomness funnels through the single
//! top-level `seed`.
//!
//! Dataset paths resolve relative to the config file's directory, so recipe
//! files committed in the repo work from any working directory. A relative
//! `output_dir` resolves under `POLYNET_OUTPUT_ROOT` when that is set, else
//! under the working directory.

use polynet::blocks::{Activation, InitScheme, PolyBlockSpec, Stabilizer, Variant};
use polynet::data::{
    load_csv, load_mnist, make_synthetic, quadratic_target_poly, seeded_target_poly, split,
    CsvSchema, CsvTask, Dataset, SyntheticKind,
};
use polynet::train::{LossKind, LrSchedule, OptimizerConfig};
use polynet::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const OUTPUT_ROOT_ENV: &str = "POLYNET_OUTPUT_ROOT";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    /// Pinned numbers a recipe is expected to reproduce (informational; the
    /// acceptance suite asserts them).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Expected>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_mse: Option<f64>,
}

fn default_split() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    Xor {
        n: usize,
        #[serde(default)]
        jitter: f64,
        #[serde(default = "default_split")]
        split: [f64; 3],
    },
    Circles {
        n: usize,
        radius0: f64,
        radius1: f64,
        #[serde(default)]
        jitter: f64,
        #[serde(default = "default_split")]
        split: [f64; 3],
    },
    /// The fixed quadratic target `y = 0.5 + 3 z1^2 + 2 z1 z2 - z2`.
    QuadraticRegression {
        n: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default = "default_split")]
        split: [f64; 3],
    },
    /// Targets from a seeded dense polynomial of the declared degree.
    PolynomialRegression {
        n: usize,
        dim: usize,
        degree: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default = "default_split")]
        split: [f64; 3],
    },
    Mnist {
        dir: PathBuf,
        /// Restrict to these digit classes (labels re-encoded in order).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classes: Option<Vec<usize>>,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        /// Number of classes for classification; omit for regression.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classes: Option<usize>,
        #[serde(default = "default_split")]
        split: [f64; 3],
    },
}

impl DatasetConfig {
    /// Make file paths absolute relative to the config file location.
    fn absolutize(&mut self, base: &Path) {
        let target = match self {
            DatasetConfig::Mnist { dir, .. } => dir,
            DatasetConfig::Csv { path, .. } => path,
            _ => return,
        };
        if target.is_relative() {
            *target = base.join(&target);
        }
    }

    /// Build (train, val, test); val/test may be empty.
    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
        match self {
            DatasetConfig::Xor { n, jitter, split: fr } => {
                let ds = make_synthetic(&SyntheticKind::Xor { jitter: *jitter }, *n, seed)?;
                split(&ds, (fr[0], fr[1], fr[2]), seed ^ 0x5917)
            }
            DatasetConfig::Circles { n, radius0, radius1, jitter, split: fr } => {
                let ds = make_synthetic(
                    &SyntheticKind::Circles {
                        radius0: *radius0,
                        radius1: *radius1,
                        jitter: *jitter,
                    },
                    *n,
                    seed,
                )?;
                split(&ds, (fr[0], fr[1], fr[2]), seed ^ 0x5917)
            }
            DatasetConfig::QuadraticRegression { n, noise, split: fr } => {
                let ds = make_synthetic(
                    &SyntheticKind::PolynomialRegression {
                        poly: quadratic_target_poly(),
                        noise: *noise,
                    },
                    *n,
                    seed,
                )?;
                split(&ds, (fr[0], fr[1], fr[2]), seed ^ 0x5917)
            }
            DatasetConfig::PolynomialRegression { n, dim, degree, noise, split: fr } => {
                let poly = seeded_target_poly(*dim, *degree, seed)?;
                let ds = make_synthetic(&SyntheticKind::PolynomialRegression { poly, noise: *noise }, *n, seed)?;
                split(&ds, (fr[0], fr[1], fr[2]), seed ^ 0x5917)
            }
            DatasetConfig::Mnist { dir, classes } => {
                let (mut train, mut test) = load_mnist(dir)?;
                if let Some(classes) = classes {
                    train = train.filter_classes(classes)?;
                    test = test.filter_classes(classes)?;
                }
                let val = test.gather(&[], "val")?;
                Ok((train, val, test))
            }
            DatasetConfig::Csv { path, label_column, classes, split: fr } => {
                let schema = CsvSchema {
                    label_column: label_column.clone(),
                    task: match classes {
                        Some(c) => CsvTask::Classification { classes: *c },
                        None => CsvTask::Regression,
                    },
                };
                let ds = load_csv(path, &schema)?;
                split(&ds, (fr[0], fr[1], fr[2]), seed ^ 0x5917)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub blocks: Vec<BlockConfig>,
    #[serde(default)]
    pub init: InitScheme,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub variant: Variant,
    pub order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_dim: Option<usize>,
    #[serde(default)]
    pub stabilizer: Stabilizer,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelConfig {
    /// Infer missing dimensions from the dataset and the chain, producing
    /// concrete block specs. The resolved config carries the inferred values.
    pub fn resolve(&mut self, feature_dim: usize, label_dim: usize) -> Result<Vec<PolyBlockSpec>> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidArgument("model.blocks must not be empty".to_string()));
        }
        let mut specs = Vec::with_capacity(self.blocks.len());
        let mut current = feature_dim;
        let count = self.blocks.len();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let input_dim = match b.input_dim {
                Some(d) if d == current => d,
                Some(d) => {
                    return Err(Error::InvalidArgument(format!(
                        "model.blocks[{i}].input_dim = {d} but the chain provides {current}"
                    )))
                }
                None => current,
            };
            let is_residual = b.variant == Variant::HighOrderResidual;
            let output_dim = match (b.output_dim, is_residual, i + 1 == count) {
                (Some(o), true, _) if o != input_dim => {
                    return Err(Error::InvalidArgument(format!(
                        "model.blocks[{i}].output_dim = {o} but high-order-residual is square ({input_dim})"
                    )))
                }
                (_, true, _) => input_dim,
                (Some(o), false, _) => o,
                (None, false, true) => label_dim,
                (None, false, false) => {
                    return Err(Error::InvalidArgument(format!(
                        "model.blocks[{i}].output_dim required for interior blocks"
                    )))
                }
            };
            let rank = match (b.rank, is_residual) {
                (_, true) => 1,
                (Some(k), false) => k,
                (None, false) => {
                    return Err(Error::InvalidArgument(format!(
                        "model.blocks[{i}].rank required for variant {:?}",
                        b.variant
                    )))
                }
            };
            let bias_dim = b.bias_dim.unwrap_or(rank);
            b.input_dim = Some(input_dim);
            b.output_dim = Some(output_dim);
            b.rank = Some(rank);
            b.bias_dim = Some(bias_dim);
            let spec = PolyBlockSpec {
                variant: b.variant,
                order: b.order,
                rank,
                input_dim,
                output_dim,
                bias_dim,
                stabilizer: b.stabilizer,
                activation: b.activation,
            };
            spec.validate()?;
            specs.push(spec);
            current = output_dim;
        }
        Ok(specs)
    }
}

/// Training section: the library's optimizer/loss/schedule types with the
/// run seed injected at build time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub optimizer: OptimizerConfig,
    pub loss: LossKind,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub epochs: usize,
    /// Absent: clip at 5. Explicit null: clipping off.
    #[serde(default = "default_grad_clip")]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    /// Write a checkpoint every k epochs in addition to the final one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

fn default_batch_size() -> usize {
    64
}

fn default_grad_clip() -> Option<f64> {
    Some(5.0)
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> polynet::train::TrainConfig {
        polynet::train::TrainConfig {
            optimizer: self.optimizer.clone(),
            loss: self.loss,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            grad_clip: self.grad_clip,
            lr_schedule: self.lr_schedule.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_instances: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<DegreeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "grid_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "grid_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "grid_ranks")]
    pub ranks: Vec<usize>,
    #[serde(default = "grid_out_dims")]
    pub out_dims: Vec<usize>,
    #[serde(default = "grid_bias_dims")]
    pub bias_dims: Vec<usize>,
    #[serde(default = "grid_orders")]
    pub orders: Vec<usize>,
    #[serde(default = "grid_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "grid_tolerance")]
    pub tolerance: f64,
    #[serde(default = "grid_holdout")]
    pub holdout_points: usize,
}

fn grid_variants() -> Vec<Variant> {
    vec![Variant::Ccp, Variant::Ncp, Variant::NcpSkip, Variant::HighOrderResidual]
}
fn grid_dims() -> Vec<usize> {
    vec![1, 2, 3]
}
fn grid_ranks() -> Vec<usize> {
    vec![1, 2, 4]
}
fn grid_out_dims() -> Vec<usize> {
    vec![1, 2]
}
fn grid_bias_dims() -> Vec<usize> {
    vec![1, 2]
}
fn grid_orders() -> Vec<usize> {
    vec![1, 2, 3]
}
fn grid_seeds() -> Vec<u64> {
    (0..5).collect()
}
fn grid_tolerance() -> f64 {
    polynet::verify::EQUIVALENCE_TOLERANCE
}
fn grid_holdout() -> usize {
    200
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            variants: grid_variants(),
            dims: grid_dims(),
            ranks: grid_ranks(),
            out_dims: grid_out_dims(),
            bias_dims: grid_bias_dims(),
            orders: grid_orders(),
            seeds: grid_seeds(),
            tolerance: grid_tolerance(),
            holdout_points: grid_holdout(),
        }
    }
}

impl GridSection {
    pub fn to_lib(&self) -> polynet::verify::OracleGridConfig {
        polynet::verify::OracleGridConfig {
            variants: self.variants.clone(),
            dims: self.dims.clone(),
            ranks: self.ranks.clone(),
            out_dims: self.out_dims.clone(),
            bias_dims: self.bias_dims.clone(),
            orders: self.orders.clone(),
            seeds: self.seeds.clone(),
            tolerance: self.tolerance,
            holdout_points: self.holdout_points,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegreeSection {
    #[serde(default = "degree_degrees")]
    pub degrees: Vec<usize>,
    #[serde(default = "degree_max_blocks")]
    pub max_blocks: usize,
    #[serde(default = "degree_max_total")]
    pub max_total: usize,
    #[serde(default = "grid_seeds")]
    pub seeds: Vec<u64>,
}

fn degree_degrees() -> Vec<usize> {
    vec![1, 2, 3]
}
fn degree_max_blocks() -> usize {
    3
}
fn degree_max_total() -> usize {
    8
}

impl Default for DegreeSection {
    fn default() -> Self {
        DegreeSection {
            degrees: degree_degrees(),
            max_blocks: degree_max_blocks(),
            max_total: degree_max_total(),
            seeds: grid_seeds(),
        }
    }
}

impl RunConfig {
    /// Parse a config file, resolving dataset paths against its directory
    /// and the output dir against [`OUTPUT_ROOT_ENV`]/cwd.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = serde_json::from_str(&text).map_err(|e| {
            Error::InvalidArgument(format!("{}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        if let Some(ds) = &mut config.dataset {
            ds.absolutize(&base);
        }
        if let Some(VerifySection { checkpoint: Some(ck), .. }) = &mut config.verify {
            if ck.is_relative() {
                *ck = base.join(&ck);
            }
        }
        if config.output_dir.is_relative() {
            let root = std::env::var_os(OUTPUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("."));
            config.output_dir = root.join(&config.output_dir);
        }
        Ok(config)
    }

    pub fn to_pretty_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
