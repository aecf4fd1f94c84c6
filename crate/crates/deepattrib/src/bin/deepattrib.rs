//! Command-line front end. All functionality lives in the library; this
//! binary parses arguments, wires files to library calls, and maps errors
//! to exit codes: 0 success, 1 usage error, 2 experiment assertion
//! failure, 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deepattrib::attribution::{attribute, Candidate, ReconstructionConfig};
use deepattrib::distance::FeatureExtractor;
use deepattrib::generators::{GeneratorModel, NoiseInput};
use deepattrib::harness::{run_experiment, write_outputs, ExperimentConfig};
use deepattrib::imageio;
use deepattrib::ledger::{now_datetime, KeyPair, Ledger, ModelDatabase};
use deepattrib::perturb::{
    augment, cw_image, fgsm_image, jpeg_like_compress, AttackNorm, AugmentationKind,
    AugmentationSpec,
};
use deepattrib::rng::DetRng;
use deepattrib::tensor::Tensor;

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "DEEPATTRIB_OUT";

#[derive(Parser)]
#[command(
    name = "deepattrib",
    about = "Seed-reconstruction attribution of synthetic images, with robustness attacks and a provenance ledger",
    version
)]
struct Cli {
    /// Worker threads for parallel sections (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutArg {
    /// Output directory (falls back to $DEEPATTRIB_OUT, then `./out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArg {
    fn resolve(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a toy GAN and write generator/discriminator checkpoints.
    Train {
        /// JSON training job; omit for the built-in blob-faces default.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Build a generator and write images (PGM) plus the model file.
    Generate {
        /// Existing model file; omit to build a fresh default model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Architecture when building fresh: plain-deconv | style-injection.
        #[arg(long, default_value = "plain-deconv")]
        arch: String,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Attribute one image (PGM/PPM) against a pool of model files.
    Attribute {
        #[arg(long)]
        image: PathBuf,
        /// Model files; each becomes a candidate named by its file stem.
        #[arg(long, required = true, num_args = 1..)]
        models: Vec<PathBuf>,
        /// Reconstruction config JSON; omit for defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Apply a non-adversarial manipulation to an image.
    Perturb {
        #[arg(long)]
        image: PathBuf,
        /// identity | gaussian-blur | gaussian-noise | mirror | random-crop
        /// | random-rotate | zoom-in | jpeg
        #[arg(long)]
        kind: String,
        /// JPEG quality when kind = jpeg.
        #[arg(long, default_value_t = 90)]
        quality: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Craft an adversarial example against the feature extractor.
    Attack {
        #[arg(long)]
        image: PathBuf,
        /// fgsm-linf | fgsm-l2 | cw
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 0.05)]
        eps: f32,
        #[arg(long, default_value_t = 1.0)]
        c: f32,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Provenance ledger operations.
    Ledger {
        #[command(subcommand)]
        action: LedgerCmd,
    },
    /// Run a full experiment and write report.json plus CSV tables.
    Experiment {
        /// Experiment config JSON; or use --kind for a built-in default.
        #[arg(long)]
        config: Option<PathBuf>,
        /// benign | attempts-sweep | augmentation | compression |
        /// adversarial | transfer | finetune | two-arch-analog |
        /// force-output-demo
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Print the resolved config and exit without running.
        #[arg(long)]
        emit_config: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Re-check and pretty-print a saved experiment report.
    Report {
        /// Directory containing report.json.
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum LedgerCmd {
    /// Generate an image from a model and append a signed record.
    Register {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Stream seed for the latent seed vector.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stream seed for the noise input.
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long, default_value_t = 0.7)]
        psi: f32,
        /// Stream seed for the signing keypair.
        #[arg(long, default_value_t = 1)]
        key_seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Verify one entry (by record id) against the model database.
    Verify {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        record: u64,
    },
    /// Look up an image (PGM/PPM) in the chain.
    Query {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Full-history audit including regeneration of every record.
    Audit {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        db: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Assertion(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Assertion(_) => 2,
            CliError::Io(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Assertion(m) | CliError::Io(m) => m,
        }
    }
}

fn io_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Io(e.to_string())
}

fn usage_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err)?;
    serde_json::from_str(&text).map_err(usage_err)
}

fn load_model(path: &Path) -> Result<GeneratorModel, CliError> {
    let bytes = std::fs::read(path).map_err(io_err)?;
    GeneratorModel::deserialize(&bytes).map_err(usage_err)
}

fn load_image(path: &Path) -> Result<Tensor, CliError> {
    imageio::load_image(path).map_err(io_err)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version are not usage errors.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("warning: could not size worker pool: {e}");
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TrainJob {
    generator_arch: deepattrib::generators::GeneratorArch,
    generator_init_seed: u64,
    discriminator_init_seed: u64,
    dataset: deepattrib::dataset::ToyDatasetSpec,
    config: deepattrib::training::TrainConfig,
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train { config, seed, out } => {
            let job: TrainJob = match config {
                Some(path) => read_json(&path)?,
                None => TrainJob {
                    generator_arch: deepattrib::generators::GeneratorArch::plain_default(),
                    generator_init_seed: seed,
                    discriminator_init_seed: seed.wrapping_add(1),
                    dataset: deepattrib::dataset::ToyDatasetSpec::blob_faces(64, seed),
                    config: deepattrib::training::TrainConfig {
                        rng_seed: seed,
                        ..Default::default()
                    },
                },
            };
            let out_dir = out.resolve();
            ensure_dir(&out_dir)?;
            let gen = GeneratorModel::build(job.generator_arch.clone(), job.generator_init_seed)
                .map_err(usage_err)?;
            let disc = deepattrib::training::DiscriminatorModel::build(
                deepattrib::training::DiscriminatorArch {
                    image_shape: job.generator_arch.image_shape(),
                    ..deepattrib::training::DiscriminatorArch::standard()
                },
                job.discriminator_init_seed,
            )
            .map_err(usage_err)?;
            let data =
                deepattrib::dataset::make_toy_dataset(&job.dataset).map_err(usage_err)?;
            let (gen, disc, trace) =
                deepattrib::training::train_gan(&gen, &disc, &data, &job.config)
                    .map_err(|e| CliError::Assertion(e.to_string()))?;
            std::fs::write(out_dir.join("generator.datr"), gen.serialize()).map_err(io_err)?;
            std::fs::write(out_dir.join("discriminator.datr"), disc.serialize())
                .map_err(io_err)?;
            std::fs::write(out_dir.join("losses.csv"), trace.loss_csv()).map_err(io_err)?;
            for (step, ckpt) in &trace.checkpoints {
                std::fs::write(
                    out_dir.join(format!("generator_step_{step:06}.datr")),
                    ckpt.serialize(),
                )
                .map_err(io_err)?;
            }
            println!(
                "trained generator {} -> {}",
                gen.digest_hex(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Generate {
            model,
            arch,
            count,
            seed,
            out,
        } => {
            let out_dir = out.resolve();
            ensure_dir(&out_dir)?;
            let g = match model {
                Some(path) => load_model(&path)?,
                None => {
                    let arch = match arch.as_str() {
                        "plain-deconv" => deepattrib::generators::GeneratorArch::plain_default(),
                        "style-injection" => deepattrib::generators::GeneratorArch::style_default(),
                        other => {
                            return Err(CliError::Usage(format!("unknown arch {other:?}")));
                        }
                    };
                    let g = GeneratorModel::build(arch, seed).map_err(usage_err)?;
                    std::fs::write(out_dir.join("model.datr"), g.serialize()).map_err(io_err)?;
                    g
                }
            };
            let mut rng = DetRng::new(seed);
            for i in 0..count {
                let s = rng.standard_normal_tensor(&[g.arch().seed_dim()]);
                let noise = NoiseInput::zeros(g.arch(), 0.7);
                let img = g.generate(&s, &noise).map_err(usage_err)?;
                imageio::save_image(&out_dir.join(format!("image_{i:04}.pgm")), &img)
                    .map_err(io_err)?;
            }
            println!(
                "wrote {count} image(s) from model {} to {}",
                g.digest_hex(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Attribute {
            image,
            models,
            config,
            seed,
            out,
        } => {
            let x = load_image(&image)?;
            let mut pool: Vec<Candidate> = Vec::new();
            for (i, path) in models.iter().enumerate() {
                let mut id = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("model")
                    .to_string();
                if pool.iter().any(|c| c.id == id) {
                    id = format!("{id}-{i}");
                }
                pool.push(Candidate::new(id, load_model(path)?));
            }
            let mut cfg: ReconstructionConfig = match config {
                Some(path) => read_json(&path)?,
                None => ReconstructionConfig::default(),
            };
            cfg.rng_seed = seed;
            let fx = FeatureExtractor::standard();
            let outcome =
                attribute(&x, &pool, &cfg, &fx).map_err(|e| CliError::Assertion(e.to_string()))?;
            let json = deepattrib::canonical_json(&outcome.report).map_err(io_err)?;
            let out_dir = out.resolve();
            ensure_dir(&out_dir)?;
            std::fs::write(out_dir.join("attribution.json"), &json).map_err(io_err)?;
            println!("{json}");
            Ok(())
        }
        Command::Perturb {
            image,
            kind,
            quality,
            seed,
            out,
        } => {
            let x = load_image(&image)?;
            let y = if kind == "jpeg" {
                jpeg_like_compress(&x, quality).map_err(usage_err)?
            } else {
                let k: AugmentationKind =
                    serde_json::from_value(serde_json::Value::String(kind.clone()))
                        .map_err(|_| CliError::Usage(format!("unknown perturbation {kind:?}")))?;
                augment(&x, &AugmentationSpec { kind: k, rng_seed: seed }).map_err(usage_err)?
            };
            let out_dir = out.resolve();
            ensure_dir(&out_dir)?;
            let path = out_dir.join("perturbed.pgm");
            imageio::save_image(&path, &y).map_err(io_err)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Attack {
            image,
            kind,
            eps,
            c,
            steps,
            lr,
            seed,
            out,
        } => {
            let x = load_image(&image)?;
            let fx = FeatureExtractor::standard();
            let y = match kind.as_str() {
                "fgsm-linf" => fgsm_image(&fx, &x, eps, AttackNorm::LInf, seed).map_err(usage_err)?,
                "fgsm-l2" => fgsm_image(&fx, &x, eps, AttackNorm::L2, seed).map_err(usage_err)?,
                "cw" => {
                    let r = cw_image(&fx, &x, c, steps, lr, seed).map_err(usage_err)?;
                    println!(
                        "cw: delta_norm = {}, feature_distance = {}, diverged = {}",
                        r.delta_norm, r.feature_distance, r.diverged
                    );
                    r.image
                }
                other => return Err(CliError::Usage(format!("unknown attack {other:?}"))),
            };
            let out_dir = out.resolve();
            ensure_dir(&out_dir)?;
            let path = out_dir.join("adversarial.pgm");
            imageio::save_image(&path, &y).map_err(io_err)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Ledger { action } => ledger_dispatch(action),
        Command::Experiment {
            config,
            kind,
            seed,
            emit_config,
            out,
        } => {
            let cfg: ExperimentConfig = match (config, kind) {
                (Some(path), _) => read_json(&path)?,
                (None, Some(kind)) => ExperimentConfig::default_for(&kind, seed)
                    .ok_or_else(|| CliError::Usage(format!("unknown experiment kind {kind:?}")))?,
                (None, None) => {
                    return Err(CliError::Usage(
                        "either --config or --kind is required".into(),
                    ))
                }
            };
            if emit_config {
                println!("{}", deepattrib::canonical_json(&cfg).map_err(io_err)?);
                return Ok(());
            }
            let report = run_experiment(&cfg).map_err(|e| CliError::Assertion(e.to_string()))?;
            let out_dir = out.resolve().join(cfg.kind.name());
            write_outputs(&out_dir, &report).map_err(io_err)?;
            println!("experiment {} -> {}", cfg.kind.name(), out_dir.display());
            Ok(())
        }
        Command::Report { dir } => {
            let report: deepattrib::harness::runs::ExperimentReport =
                read_json(&dir.join("report.json"))?;
            verify_report(&report)?;
            println!(
                "{} experiment, schema v{}, pool of {}",
                report.config.kind.name(),
                report.schema_version,
                report.pool_digests.len()
            );
            summarize(&report);
            Ok(())
        }
    }
}

fn ledger_dispatch(cmd: LedgerCmd) -> Result<(), CliError> {
    match cmd {
        LedgerCmd::Register {
            chain,
            db,
            model,
            seed,
            noise_seed,
            psi,
            key_seed,
            out,
        } => {
            let mut ledger = Ledger::open(&chain).map_err(io_err)?;
            let database = ModelDatabase::open(&db).map_err(io_err)?;
            let g = load_model(&model)?;
            let mut rng = DetRng::new(seed);
            let s = rng.standard_normal_tensor(&[g.arch().seed_dim()]);
            let keys = KeyPair::generate(key_seed);
            let entry = ledger
                .register_generation(&database, &g, &s, noise_seed, psi, &keys, &now_datetime())
                .map_err(|e| CliError::Assertion(e.to_string()))?;
            let record_id = entry.record_id;
            let image = g
                .generate(&s, &NoiseInput::sample(g.arch(), noise_seed, psi))
                .map_err(usage_err)?;
            ledger
                .append_block(vec![entry], &database)
                .map_err(|e| CliError::Assertion(e.to_string()))?;
            let out_dir = out.resolve();
            ensure_dir(&out_dir)?;
            let img_path = out_dir.join(format!("record_{record_id:06}.pgm"));
            imageio::save_image(&img_path, &image).map_err(io_err)?;
            println!(
                "registered record {record_id}; image at {}",
                img_path.display()
            );
            Ok(())
        }
        LedgerCmd::Verify { chain, db, record } => {
            let ledger = Ledger::open(&chain).map_err(io_err)?;
            let database = ModelDatabase::open(&db).map_err(io_err)?;
            let entry = ledger
                .blocks()
                .iter()
                .flat_map(|b| b.entries.iter())
                .find(|e| e.record_id == record)
                .ok_or_else(|| CliError::Usage(format!("no record {record} in chain")))?;
            match deepattrib::ledger::verify_entry(entry, &database) {
                Ok(()) => {
                    println!("record {record}: verified (regeneration + signature)");
                    Ok(())
                }
                Err(f) => Err(CliError::Assertion(format!("record {record}: {f}"))),
            }
        }
        LedgerCmd::Query { chain, image } => {
            let ledger = Ledger::open(&chain).map_err(io_err)?;
            let x = load_image(&image)?;
            let matches = ledger.validate_image(&x);
            if matches.is_empty() {
                println!("no registered record matches this image");
            } else {
                for e in matches {
                    println!(
                        "record {} at {} under model {}",
                        e.record_id,
                        e.datetime,
                        hex::encode(&e.model_hash)
                    );
                }
            }
            Ok(())
        }
        LedgerCmd::Audit { chain, db } => {
            let ledger = Ledger::open(&chain).map_err(io_err)?;
            let database = ModelDatabase::open(&db).map_err(io_err)?;
            ledger
                .audit(&database)
                .map_err(|e| CliError::Assertion(e.to_string()))?;
            println!(
                "audit passed: {} block(s), {} record(s) regenerated and verified",
                ledger.blocks().len(),
                ledger.entry_count()
            );
            Ok(())
        }
    }
}

/// Internal-consistency checks on a saved report; failures exit with the
/// experiment-assertion code.
fn verify_report(report: &deepattrib::harness::runs::ExperimentReport) -> Result<(), CliError> {
    use deepattrib::harness::runs::ExperimentResults;
    let check_confusion = |m: &deepattrib::harness::ConfusionMatrix| -> Result<(), CliError> {
        let total = m.total();
        let trace = m.trace();
        if trace > total {
            return Err(CliError::Assertion("confusion trace exceeds total".into()));
        }
        if (m.accuracy() - trace as f32 / total.max(1) as f32).abs() > 1e-6 {
            return Err(CliError::Assertion("confusion accuracy mismatch".into()));
        }
        Ok(())
    };
    match &report.results {
        ExperimentResults::Benign(r) => {
            check_confusion(&r.confusion)?;
            let n = r.per_image.len() as u64;
            if r.confusion.total() != n {
                return Err(CliError::Assertion(format!(
                    "confusion total {} != per-image rows {n}",
                    r.confusion.total()
                )));
            }
        }
        ExperimentResults::AttemptsSweep(r) => {
            for w in r.errors.windows(2) {
                if w[1] > w[0] + 1e-6 {
                    return Err(CliError::Assertion(
                        "attempt-sweep errors are not non-increasing".into(),
                    ));
                }
            }
        }
        ExperimentResults::Finetune(r) => check_confusion(&r.confusion)?,
        ExperimentResults::TwoArchAnalog(r) => check_confusion(&r.confusion)?,
        _ => {}
    }
    Ok(())
}

fn summarize(report: &deepattrib::harness::runs::ExperimentReport) {
    use deepattrib::harness::runs::ExperimentResults;
    match &report.results {
        ExperimentResults::Benign(r) => {
            println!(
                "accuracy {:.4} (error {:.4}, paper-scale reference {:.4})",
                r.accuracy, r.error_rate, r.paper_reference_accuracy
            );
        }
        ExperimentResults::AttemptsSweep(r) => {
            for (m, e) in r.attempts_grid.iter().zip(&r.errors) {
                println!("attempts {m}: error {e:.4}");
            }
        }
        ExperimentResults::Augmentation(r) => {
            for row in &r.rows {
                let cells: Vec<String> = row
                    .errors
                    .iter()
                    .map(|(m, e)| format!("m={m}: {e:.4}"))
                    .collect();
                println!("{}: {}", row.kind, cells.join(", "));
            }
        }
        ExperimentResults::Compression(r) => {
            println!("benign error {:.4}", r.benign_error);
            for (q, e, _) in &r.rows {
                println!("quality {q}: error {e:.4}");
            }
        }
        ExperimentResults::Adversarial(r) => {
            for (name, points) in [
                ("fgsm-image", &r.fgsm_image),
                ("fgsm-seed", &r.fgsm_seed),
                ("cw", &r.cw),
            ] {
                for p in points {
                    println!(
                        "{name} param {}: error {:.4}, ssim {:.4}, |delta| {:.4}",
                        p.param, p.error, p.mean_ssim, p.mean_delta_norm
                    );
                }
            }
        }
        ExperimentResults::Transfer(r) => {
            println!(
                "substitute test accuracy {:.4}; clean attribution {:.4}",
                r.substitute_test_accuracy, r.clean_attribution_accuracy
            );
            for row in &r.rows {
                println!(
                    "{} {}: clf {:.4}, attribution {:.4}",
                    row.attack, row.param, row.clf_accuracy, row.attribution_accuracy
                );
            }
        }
        ExperimentResults::Finetune(r) => {
            println!(
                "12-model accuracy {:.4} (paper-scale reference {:.4})",
                r.accuracy, r.paper_reference_accuracy
            );
            if let Some(loo) = &r.leave_one_out {
                println!(
                    "leave-one-out family accuracy {:.4} (random floor {:.4})",
                    loo.family_accuracy, loo.random_guess_floor
                );
            }
        }
        ExperimentResults::TwoArchAnalog(r) => {
            println!(
                "two-arch accuracy {:.4} (paper-scale reference {:.4})",
                r.accuracy, r.paper_reference_accuracy
            );
        }
        ExperimentResults::ForceOutputDemo(r) => {
            println!(
                "forced candidate won {}/{} (baseline {}/{}); max pixel error {:.2e}",
                r.forced_wins, r.targets, r.baseline_wins, r.targets, r.max_pixel_error
            );
            println!("{}", r.note);
        }
    }
}
