//! Reproducible experiment drivers.
//!
//! Every experiment is a pure function of its [`ExperimentConfig`]: the
//! master seed fixes the generator pool, target images, reconstruction
//! streams and perturbations, so re-running a config reproduces every
//! report byte for byte on one platform. Reports embed the paper-scale
//! reference numbers as annotation columns where the original experiment
//! has them; those columns are context, never assertions.

mod output;
pub mod runs;

pub use output::write_outputs;
pub use runs::run_experiment;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{AttributionError, Candidate, NoiseMode, ReconstructionConfig};
use crate::dataset::{DatasetError, ToyDatasetSpec};
use crate::distance::DistanceKind;
use crate::generators::{GeneratorArch, GeneratorError, GeneratorModel};
use crate::perturb::{AugmentationKind, PerturbError, SubstituteConfig};
use crate::training::{DiscriminatorArch, DiscriminatorModel, TrainConfig, TrainingError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Distance(#[from] crate::distance::DistanceError),
}

/// One generator in the pool: architecture, init seed, optional training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntrySpec {
    pub id: String,
    pub arch: GeneratorArch,
    pub init_seed: u64,
    #[serde(default)]
    pub train: Option<PoolTrainSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolTrainSpec {
    pub dataset: ToyDatasetSpec,
    pub config: TrainConfig,
    pub disc_init_seed: u64,
}

/// Experiment family plus its specific knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Unperturbed attribution over the pool.
    Benign,
    /// Error rate versus the number of reconstruction attempts, with the
    /// attempt pool shared across budgets so the monotonicity is exact.
    AttemptsSweep { attempts_grid: Vec<usize> },
    /// Error rate per augmentation, at several attempt budgets.
    Augmentation {
        kinds: Vec<AugmentationKind>,
        attempt_budgets: Vec<usize>,
    },
    /// Error rate per JPEG-style quality, with the matching benign baseline.
    Compression { qualities: Vec<u32> },
    /// The three attack families with their parameter grids.
    Adversarial {
        fgsm_image_eps: Vec<f32>,
        fgsm_seed_eps: Vec<f32>,
        cw_c: Vec<f32>,
        cw_steps: usize,
        cw_lr: f32,
    },
    /// Substitute-classifier transferability study.
    Transfer {
        substitute: SubstituteConfig,
        train_per_generator: usize,
        test_per_generator: usize,
        fgsm_eps: Vec<f32>,
        cw_c: f32,
        cw_steps: usize,
        cw_lr: f32,
    },
    /// Parent/child fine-tuned families, with optional leave-one-out pass.
    Finetune {
        finetune_steps: Vec<usize>,
        #[serde(default)]
        leave_one_out: bool,
    },
    /// The fine-tuned family protocol with the true model excluded from
    /// every attribution (success = same-family winner).
    LeaveOneOut { finetune_steps: Vec<usize> },
    /// Two-architecture attribution analog (raw pixel distance).
    TwoArchAnalog,
    /// Force a style generator to emit arbitrary targets and win.
    ForceOutputDemo { targets: usize },
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Benign => "benign",
            ExperimentKind::AttemptsSweep { .. } => "attempts-sweep",
            ExperimentKind::Augmentation { .. } => "augmentation",
            ExperimentKind::Compression { .. } => "compression",
            ExperimentKind::Adversarial { .. } => "adversarial",
            ExperimentKind::Transfer { .. } => "transfer",
            ExperimentKind::Finetune { .. } => "finetune",
            ExperimentKind::LeaveOneOut { .. } => "leave-one-out",
            ExperimentKind::TwoArchAnalog => "two-arch-analog",
            ExperimentKind::ForceOutputDemo { .. } => "force-output-demo",
        }
    }
}

/// Full experiment description; echoed verbatim into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub pool: Vec<PoolEntrySpec>,
    pub images_per_generator: usize,
    pub reconstruction: ReconstructionConfig,
    /// How target images are generated: zero noise follows the dataset
    /// protocol (all randomness from the seed); sampled noise exercises the
    /// general algorithm.
    #[serde(default)]
    pub dataset_noise: NoiseMode,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.pool.is_empty() {
            return Err(HarnessError::InvalidConfig("empty pool".into()));
        }
        if self.images_per_generator == 0 {
            return Err(HarnessError::InvalidConfig(
                "images_per_generator must be positive".into(),
            ));
        }
        if self.dataset_noise == NoiseMode::Optimized {
            return Err(HarnessError::InvalidConfig(
                "dataset_noise cannot be `optimized`".into(),
            ));
        }
        self.reconstruction.validate()?;
        match &self.kind {
            ExperimentKind::AttemptsSweep { attempts_grid } if attempts_grid.is_empty() => Err(
                HarnessError::InvalidConfig("attempts grid is empty".into()),
            ),
            ExperimentKind::Finetune { finetune_steps, .. }
            | ExperimentKind::LeaveOneOut { finetune_steps }
                if finetune_steps.is_empty() =>
            {
                Err(HarnessError::InvalidConfig(
                    "finetune steps grid is empty".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    /// The standard three-generator pool: one plain-deconv and two
    /// style-injection models with distinct init seeds.
    pub fn standard_pool(master_seed: u64) -> Vec<PoolEntrySpec> {
        vec![
            PoolEntrySpec {
                id: "g0-plain".into(),
                arch: GeneratorArch::plain_default(),
                init_seed: crate::rng::derive_seed(master_seed, &[crate::rng::tag("pool"), 0]),
                train: None,
            },
            PoolEntrySpec {
                id: "g1-style".into(),
                arch: GeneratorArch::style_default(),
                init_seed: crate::rng::derive_seed(master_seed, &[crate::rng::tag("pool"), 1]),
                train: None,
            },
            PoolEntrySpec {
                id: "g2-style".into(),
                arch: GeneratorArch::style_default(),
                init_seed: crate::rng::derive_seed(master_seed, &[crate::rng::tag("pool"), 2]),
                train: None,
            },
        ]
    }

    fn standard_recon(master_seed: u64) -> ReconstructionConfig {
        ReconstructionConfig {
            rng_seed: crate::rng::derive_seed(master_seed, &[crate::rng::tag("recon")]),
            noise_mode: NoiseMode::Zero,
            ..Default::default()
        }
    }

    /// Desk-scale default config for a named experiment kind.
    pub fn default_for(kind: &str, master_seed: u64) -> Option<ExperimentConfig> {
        let pool = Self::standard_pool(master_seed);
        let recon = Self::standard_recon(master_seed);
        let cfg = match kind {
            "benign" => ExperimentConfig {
                kind: ExperimentKind::Benign,
                pool,
                images_per_generator: 100,
                reconstruction: recon,
                dataset_noise: NoiseMode::Zero,
                master_seed,
            },
            "attempts-sweep" => ExperimentConfig {
                kind: ExperimentKind::AttemptsSweep {
                    attempts_grid: vec![1, 3, 5, 10],
                },
                pool,
                images_per_generator: 12,
                reconstruction: recon,
                dataset_noise: NoiseMode::Zero,
                master_seed,
            },
            "augmentation" => ExperimentConfig {
                kind: ExperimentKind::Augmentation {
                    kinds: AugmentationKind::ALL.to_vec(),
                    attempt_budgets: vec![3, 10],
                },
                pool,
                images_per_generator: 5,
                reconstruction: recon,
                dataset_noise: NoiseMode::Zero,
                master_seed,
            },
            "compression" => ExperimentConfig {
                kind: ExperimentKind::Compression {
                    qualities: vec![50, 70, 90, 100],
                },
                pool,
                images_per_generator: 10,
                reconstruction: recon,
                dataset_noise: NoiseMode::Zero,
                master_seed,
            },
            "adversarial" => ExperimentConfig {
                kind: ExperimentKind::Adversarial {
                    fgsm_image_eps: vec![0.0, 0.01, 0.0588, 0.1],
                    fgsm_seed_eps: vec![0.0169, 0.039, 0.078, 0.196],
                    cw_c: vec![0.1, 1.0, 10.0],
                    cw_steps: 100,
                    cw_lr: 0.01,
                },
                pool,
                images_per_generator: 8,
                reconstruction: recon,
                dataset_noise: NoiseMode::Zero,
                master_seed,
            },
            "transfer" => ExperimentConfig {
                kind: ExperimentKind::Transfer {
                    substitute: SubstituteConfig::default(),
                    train_per_generator: 800,
                    test_per_generator: 100,
                    fgsm_eps: vec![0.01, 0.05, 0.1],
                    cw_c: 5.0,
                    cw_steps: 60,
                    cw_lr: 0.01,
                },
                pool,
                images_per_generator: 8,
                reconstruction: recon,
                dataset_noise: NoiseMode::Zero,
                master_seed,
            },
            "leave-one-out" => ExperimentConfig {
                kind: ExperimentKind::LeaveOneOut {
                    finetune_steps: vec![20, 100, 500],
                },
                pool: Self::finetune_pool(master_seed),
                images_per_generator: 8,
                reconstruction: ReconstructionConfig {
                    steps: 400,
                    ..Self::standard_recon(master_seed)
                },
                dataset_noise: NoiseMode::Zero,
                master_seed,
            },
            "finetune" => ExperimentConfig {
                kind: ExperimentKind::Finetune {
                    finetune_steps: vec![20, 100, 500],
                    leave_one_out: true,
                },
                pool: Self::finetune_pool(master_seed),
                images_per_generator: 8,
                reconstruction: ReconstructionConfig {
                    steps: 400,
                    ..Self::standard_recon(master_seed)
                },
                dataset_noise: NoiseMode::Zero,
                master_seed,
            },
            "two-arch-analog" => ExperimentConfig {
                kind: ExperimentKind::TwoArchAnalog,
                pool: vec![
                    PoolEntrySpec {
                        id: "deep-deconv".into(),
                        arch: GeneratorArch::plain_default(),
                        init_seed: crate::rng::derive_seed(
                            master_seed,
                            &[crate::rng::tag("two-arch"), 0],
                        ),
                        train: None,
                    },
                    PoolEntrySpec {
                        id: "shallow-deconv".into(),
                        arch: GeneratorArch::plain_shallow(),
                        init_seed: crate::rng::derive_seed(
                            master_seed,
                            &[crate::rng::tag("two-arch"), 1],
                        ),
                        train: None,
                    },
                ],
                images_per_generator: 100,
                reconstruction: ReconstructionConfig {
                    steps: 500,
                    attempts: 1,
                    distance: DistanceKind::RawL2,
                    ..Self::standard_recon(master_seed)
                },
                dataset_noise: NoiseMode::Zero,
                master_seed,
            },
            "force-output-demo" => ExperimentConfig {
                kind: ExperimentKind::ForceOutputDemo { targets: 20 },
                pool,
                images_per_generator: 1,
                reconstruction: ReconstructionConfig {
                    steps: 400,
                    ..Self::standard_recon(master_seed)
                },
                dataset_noise: NoiseMode::Zero,
                master_seed,
            },
            _ => return None,
        };
        Some(cfg)
    }

    /// Three trained parents on blob faces (used by the finetune family).
    pub fn finetune_pool(master_seed: u64) -> Vec<PoolEntrySpec> {
        let archs = [
            GeneratorArch::plain_default(),
            GeneratorArch::style_default(),
            GeneratorArch::plain_shallow(),
        ];
        archs
            .into_iter()
            .enumerate()
            .map(|(i, arch)| PoolEntrySpec {
                id: format!("parent{i}"),
                arch,
                init_seed: crate::rng::derive_seed(
                    master_seed,
                    &[crate::rng::tag("ft-parent"), i as u64],
                ),
                train: Some(PoolTrainSpec {
                    dataset: ToyDatasetSpec::blob_faces(
                        64,
                        crate::rng::derive_seed(master_seed, &[crate::rng::tag("ft-data")]),
                    ),
                    config: TrainConfig {
                        steps: 600,
                        batch_size: 6,
                        rng_seed: crate::rng::derive_seed(
                            master_seed,
                            &[crate::rng::tag("ft-train"), i as u64],
                        ),
                        ..Default::default()
                    },
                    disc_init_seed: crate::rng::derive_seed(
                        master_seed,
                        &[crate::rng::tag("ft-disc"), i as u64],
                    ),
                }),
            })
            .collect()
    }
}

/// Candidate pool plus the training artifacts needed by fine-tuning.
pub struct BuiltPool {
    pub candidates: Vec<Candidate>,
    /// Hex digest per candidate id, captured at build time.
    pub digests: BTreeMap<String, String>,
    /// Training artifacts per id, when the entry was trained.
    pub trained: BTreeMap<String, TrainedArtifacts>,
}

pub struct TrainedArtifacts {
    pub discriminator: DiscriminatorModel,
    pub dataset: Vec<crate::tensor::Tensor>,
    pub train_config: TrainConfig,
}

/// Build (and optionally train) every pool entry.
pub fn build_pool(specs: &[PoolEntrySpec]) -> Result<BuiltPool, HarnessError> {
    let mut candidates = Vec::new();
    let mut digests = BTreeMap::new();
    let mut trained = BTreeMap::new();
    for spec in specs {
        let mut model = GeneratorModel::build(spec.arch.clone(), spec.init_seed)?;
        if let Some(ts) = &spec.train {
            let data = crate::dataset::make_toy_dataset(&ts.dataset)?;
            let disc = DiscriminatorModel::build(
                DiscriminatorArch {
                    image_shape: spec.arch.image_shape(),
                    ..DiscriminatorArch::standard()
                },
                ts.disc_init_seed,
            )?;
            let (g, d, _) = crate::training::train_gan(&model, &disc, &data, &ts.config)?;
            model = g;
            trained.insert(
                spec.id.clone(),
                TrainedArtifacts {
                    discriminator: d,
                    dataset: data,
                    train_config: ts.config.clone(),
                },
            );
        }
        digests.insert(spec.id.clone(), model.digest_hex());
        candidates.push(Candidate::new(spec.id.clone(), model));
    }
    Ok(BuiltPool {
        candidates,
        digests,
        trained,
    })
}

/// true-label x attributed-label count grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn record(&mut self, true_label: &str, attributed: &str) {
        let ti = self.index_of(true_label);
        let ai = self.index_of(attributed);
        self.counts[ti][ai] += 1;
    }

    fn index_of(&self, label: &str) -> usize {
        self.labels
            .iter()
            .position(|l| l == label)
            .expect("label registered in the matrix")
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f32 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.trace() as f32 / total as f32
    }

    pub fn error_rate(&self) -> f32 {
        1.0 - self.accuracy()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Per-class accuracy (diagonal over row sum).
    pub fn per_class_accuracy(&self) -> Vec<f32> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let sum: u64 = row.iter().sum();
                if sum == 0 {
                    0.0
                } else {
                    row[i] as f32 / sum as f32
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\attributed");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}
