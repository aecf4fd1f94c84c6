//! Seed reconstruction and argmin attribution.
//!
//! Reconstruction searches a generator's latent space for a seed whose
//! output matches a target image: the seed starts from a standard-normal
//! draw, the generator's noise input is sampled once and held fixed, and
//! Adam minimizes the (squared) reconstruction distance for a fixed number
//! of steps. Attribution runs several such attempts per candidate
//! generator, keeps each candidate's best final distance, and picks the
//! candidate with the smallest one.
//!
//! Reported distances are norms; the optimizer works on the squared form,
//! which is better conditioned near zero and has the same minimizers.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adam::AdamState;
use crate::autodiff::{AutodiffError, NodeId, Tape};
use crate::distance::{DistanceError, DistanceKind, FeatureExtractor};
use crate::generators::{GeneratorError, GeneratorModel, NoiseInput, DEFAULT_PSI};
use crate::rng::{derive_seed, tag, DetRng};
use crate::tensor::{quantize8, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("invalid reconstruction config: {0}")]
    InvalidConfig(String),
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("duplicate candidate id {0:?}")]
    DuplicateId(String),
    #[error("candidate {id:?} has image shape {got:?}, pool uses {expected:?}")]
    MismatchedImageShape {
        id: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("target image must be finite and within [0,1]")]
    InvalidTarget,
    #[error("true model {0:?} is not in the pool")]
    TrueModelMissing(String),
    #[error("seed tensors have different lengths: {a} vs {b}")]
    SeedDimMismatch { a: usize, b: usize },
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How the generator's noise input is handled during reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Sample once per attempt and hold fixed during optimization.
    #[default]
    Sampled,
    /// All-zero noise (the noise-injection-disabled regime).
    Zero,
    /// Optimize the noise tensors jointly with the seed.
    Optimized,
}

fn default_steps() -> usize {
    1000
}
fn default_lr() -> f32 {
    0.1
}
fn default_attempts() -> usize {
    3
}
fn default_distance() -> DistanceKind {
    DistanceKind::L2Feature
}
fn default_psi() -> f32 {
    DEFAULT_PSI
}

/// Reconstruction hyperparameters; defaults are 1000 steps, lr 0.1,
/// 3 attempts, feature-space distance, sampled noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f32,
    #[serde(default = "default_attempts")]
    pub attempts: usize,
    #[serde(default = "default_distance")]
    pub distance: DistanceKind,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    #[serde(default = "default_psi")]
    pub psi: f32,
    /// Master seed from which per-attempt streams are derived.
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub record_trace: bool,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            steps: default_steps(),
            lr: default_lr(),
            attempts: default_attempts(),
            distance: default_distance(),
            noise_mode: NoiseMode::Sampled,
            psi: default_psi(),
            rng_seed: 0,
            record_trace: false,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<(), AttributionError> {
        if self.steps == 0 {
            return Err(AttributionError::InvalidConfig("steps must be >= 1".into()));
        }
        if self.attempts == 0 {
            return Err(AttributionError::InvalidConfig(
                "attempts must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(AttributionError::InvalidConfig("lr must be > 0".into()));
        }
        Ok(())
    }
}

/// One reconstruction attempt for one generator.
#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub generator_id: String,
    pub attempt: usize,
    pub initial_seed: Tensor,
    /// Seed after the final optimization step.
    pub seed: Tensor,
    /// d(g(seed, noise), x); infinite if the attempt failed.
    pub final_distance: f32,
    /// Per-step distances, length steps+1; last entry equals
    /// `final_distance`. Recorded only when the config asks for it.
    pub trace: Option<Vec<f32>>,
    pub noise: NoiseInput,
    /// Step at which the loss became non-finite, if it did.
    pub failed_at_step: Option<usize>,
}

impl ReconstructionResult {
    pub fn failed(&self) -> bool {
        self.failed_at_step.is_some()
    }
}

/// A named candidate generator.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub id: String,
    pub model: GeneratorModel,
}

impl Candidate {
    pub fn new(id: impl Into<String>, model: GeneratorModel) -> Self {
        Candidate {
            id: id.into(),
            model,
        }
    }
}

/// Result of attributing one image over a candidate pool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionReport {
    /// Hex SHA-256 of the 8-bit quantized target image.
    pub target_digest: String,
    /// Best (minimum over attempts) final distance per candidate.
    pub distances: BTreeMap<String, f32>,
    /// Candidate ids by ascending distance; ties broken by id.
    pub ranking: Vec<String>,
    pub winner: String,
    /// Second-best distance minus best; absent for singleton pools.
    pub margin: Option<f32>,
    /// Candidates whose attempts all failed (distance reported infinite).
    pub flagged: Vec<String>,
    pub config: ReconstructionConfig,
}

/// Attribution report plus every underlying attempt.
#[derive(Debug)]
pub struct AttributionOutcome {
    pub report: AttributionReport,
    pub attempts: Vec<ReconstructionResult>,
}

pub fn image_digest_hex(image: &Tensor) -> String {
    let mut h = Sha256::new();
    for &d in image.shape() {
        h.update((d as u32).to_le_bytes());
    }
    h.update(quantize8(image));
    hex::encode(h.finalize())
}

fn check_target(x: &Tensor) -> Result<(), AttributionError> {
    if !x.all_finite() {
        return Err(AttributionError::InvalidTarget);
    }
    if x.data().iter().any(|&v| !(-1e-6..=1.0 + 1e-6).contains(&v)) {
        return Err(AttributionError::InvalidTarget);
    }
    Ok(())
}

/// Reconstruct a seed for `x` on generator `g` from one random
/// initialization. Deterministic in every input, including `attempt_rng`.
pub fn reconstruct(
    g: &GeneratorModel,
    x: &Tensor,
    cfg: &ReconstructionConfig,
    attempt_rng: u64,
    fx: &FeatureExtractor,
) -> Result<ReconstructionResult, AttributionError> {
    cfg.validate()?;
    check_target(x)?;
    let seed_dim = g.arch().seed_dim();
    let mut init_rng = DetRng::derived(attempt_rng, &[tag("seed-init")]);
    let initial_seed = init_rng.standard_normal_tensor(&[seed_dim]);

    // Algorithm order: the noise input is sampled before the seed search
    // begins and stays fixed for the whole attempt.
    let noise = match cfg.noise_mode {
        NoiseMode::Sampled | NoiseMode::Optimized => {
            NoiseInput::sample(g.arch(), derive_seed(attempt_rng, &[tag("noise")]), cfg.psi)
        }
        NoiseMode::Zero => NoiseInput::zeros(g.arch(), cfg.psi),
    };

    // Target side of the objective, computed once.
    let target_ref: Tensor = match cfg.distance {
        DistanceKind::RawL2 => x.clone(),
        DistanceKind::L2Feature => fx.extract(x)?,
    };

    let mut seed = initial_seed.clone();
    let mut noise_layers = noise.layers.clone();
    let optimize_noise = cfg.noise_mode == NoiseMode::Optimized;
    let mut adam = AdamState::new(&[seed_dim], cfg.lr);
    let mut noise_adams: Vec<AdamState> = if optimize_noise {
        noise_layers
            .iter()
            .map(|t| AdamState::new(t.shape(), cfg.lr))
            .collect()
    } else {
        Vec::new()
    };

    let mut trace: Vec<f32> = Vec::with_capacity(cfg.steps + 1);
    let mut failed_at_step = None;
    let mut final_distance = f32::INFINITY;

    for step in 0..=cfg.steps {
        let mut tape = Tape::new();
        let s_node = tape.variable(seed.clone());
        let noise_nodes: Vec<NodeId> = noise_layers
            .iter()
            .map(|t| {
                if optimize_noise {
                    tape.variable(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let img = g.forward_on_tape(&mut tape, s_node, &noise_nodes, cfg.psi, &[], None)?;
        let objective = match cfg.distance {
            DistanceKind::RawL2 => {
                let t = tape.constant(target_ref.clone());
                let diff = tape.sub(img, t)?;
                tape.l2_norm_sq(diff)?
            }
            DistanceKind::L2Feature => {
                let feats = fx.features_on_tape(&mut tape, img)?;
                let t = tape.constant(target_ref.clone());
                let diff = tape.sub(feats, t)?;
                tape.l2_norm_sq(diff)?
            }
        };
        let sq = tape.value(objective).item();
        if !sq.is_finite() {
            log::warn!("reconstruction attempt diverged at step {step}");
            failed_at_step = Some(step);
            break;
        }
        let d = sq.sqrt();
        if cfg.record_trace {
            trace.push(d);
        }
        if step == cfg.steps {
            final_distance = d;
            break;
        }
        let mut grads = tape.backward(objective)?;
        if let Some(gs) = grads.take(s_node) {
            seed = adam.step(&seed, &gs)?;
        }
        if optimize_noise {
            for (i, &nid) in noise_nodes.iter().enumerate() {
                if let Some(gn) = grads.take(nid) {
                    noise_layers[i] = noise_adams[i].step(&noise_layers[i], &gn)?;
                }
            }
        }
    }

    Ok(ReconstructionResult {
        generator_id: g.digest_hex(),
        attempt: 0,
        initial_seed,
        seed,
        final_distance,
        trace: if cfg.record_trace { Some(trace) } else { None },
        noise: NoiseInput {
            layers: noise_layers,
            psi: cfg.psi,
        },
        failed_at_step,
    })
}

/// Deterministic per-attempt stream seed for one (image, candidate,
/// attempt) cell; independent of the number of attempts so that sweeps over
/// the attempt budget can share pools.
pub fn attempt_stream(cfg_seed: u64, target_digest: &str, candidate_id: &str, attempt: usize) -> u64 {
    derive_seed(
        cfg_seed,
        &[
            tag("attempt"),
            tag(target_digest),
            tag(candidate_id),
            attempt as u64,
        ],
    )
}

fn check_pool(pool: &[Candidate]) -> Result<(), AttributionError> {
    if pool.is_empty() {
        return Err(AttributionError::EmptyPool);
    }
    let mut seen = std::collections::HashSet::new();
    let expected = pool[0].model.arch().image_shape().to_vec();
    for c in pool {
        if !seen.insert(c.id.as_str()) {
            return Err(AttributionError::DuplicateId(c.id.clone()));
        }
        let got = c.model.arch().image_shape().to_vec();
        if got != expected {
            return Err(AttributionError::MismatchedImageShape {
                id: c.id.clone(),
                expected,
                got,
            });
        }
    }
    Ok(())
}

/// Rank candidates by ascending best distance, ties broken by id.
/// Returns (ranking, winner, margin).
pub fn rank_distances(distances: &BTreeMap<String, f32>) -> (Vec<String>, String, Option<f32>) {
    let mut ranking: Vec<String> = distances.keys().cloned().collect();
    ranking.sort_by(|a, b| {
        distances[a]
            .total_cmp(&distances[b])
            .then_with(|| a.cmp(b))
    });
    let winner = ranking[0].clone();
    let margin = ranking
        .get(1)
        .map(|second| distances[second] - distances[&winner]);
    (ranking, winner, margin)
}

/// Attribute `x` to one of the pool's generators (argmin over each
/// candidate's best-of-attempts distance). Attempts run in parallel; the
/// result is a deterministic reduction independent of completion order.
pub fn attribute(
    x: &Tensor,
    pool: &[Candidate],
    cfg: &ReconstructionConfig,
    fx: &FeatureExtractor,
) -> Result<AttributionOutcome, AttributionError> {
    cfg.validate()?;
    check_pool(pool)?;
    check_target(x)?;
    let target_digest = image_digest_hex(x);

    let cells: Vec<(usize, usize)> = (0..pool.len())
        .flat_map(|gi| (0..cfg.attempts).map(move |a| (gi, a)))
        .collect();
    let mut attempts: Vec<ReconstructionResult> = cells
        .par_iter()
        .map(|&(gi, a)| {
            let c = &pool[gi];
            let stream = attempt_stream(cfg.rng_seed, &target_digest, &c.id, a);
            reconstruct(&c.model, x, cfg, stream, fx).map(|mut r| {
                r.generator_id = c.id.clone();
                r.attempt = a;
                r
            })
        })
        .collect::<Result<_, _>>()?;
    attempts.sort_by(|p, q| {
        p.generator_id
            .cmp(&q.generator_id)
            .then(p.attempt.cmp(&q.attempt))
    });

    let mut distances = BTreeMap::new();
    let mut flagged = Vec::new();
    for c in pool {
        let best = attempts
            .iter()
            .filter(|r| r.generator_id == c.id && !r.failed())
            .map(|r| r.final_distance)
            .fold(f32::INFINITY, f32::min);
        if best.is_infinite() {
            log::warn!("all attempts failed for candidate {}", c.id);
            flagged.push(c.id.clone());
        }
        distances.insert(c.id.clone(), best);
    }
    let (ranking, winner, margin) = rank_distances(&distances);

    Ok(AttributionOutcome {
        report: AttributionReport {
            target_digest,
            distances,
            ranking,
            winner,
            margin,
            flagged,
            config: cfg.clone(),
        },
        attempts,
    })
}

/// Attribution with the true model excluded from the pool; used to ask
/// which relative wins when the exact source is absent.
pub fn attribute_leave_one_out(
    x: &Tensor,
    pool: &[Candidate],
    true_model_id: &str,
    cfg: &ReconstructionConfig,
    fx: &FeatureExtractor,
) -> Result<AttributionOutcome, AttributionError> {
    if !pool.iter().any(|c| c.id == true_model_id) {
        return Err(AttributionError::TrueModelMissing(true_model_id.into()));
    }
    let reduced: Vec<Candidate> = pool
        .iter()
        .filter(|c| c.id != true_model_id)
        .cloned()
        .collect();
    if reduced.is_empty() {
        return Err(AttributionError::EmptyPool);
    }
    attribute(x, &reduced, cfg, fx)
}

/// l2 distance between an original and a reconstructed seed.
pub fn seed_discrepancy(original: &Tensor, reconstructed: &Tensor) -> Result<f32, AttributionError> {
    if original.numel() != reconstructed.numel() {
        return Err(AttributionError::SeedDimMismatch {
            a: original.numel(),
            b: reconstructed.numel(),
        });
    }
    let mut acc = 0.0f32;
    for (a, b) in original.data().iter().zip(reconstructed.data()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::GeneratorArch;

    fn fast_cfg() -> ReconstructionConfig {
        ReconstructionConfig {
            steps: 120,
            attempts: 1,
            rng_seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn reachable_target_distance_strictly_decreases() {
        let g = GeneratorModel::build(GeneratorArch::plain_default(), 1).unwrap();
        let fx = FeatureExtractor::standard();
        let mut rng = DetRng::new(2);
        let s0 = rng.standard_normal_tensor(&[64]);
        let x = g.generate(&s0, &NoiseInput::empty(DEFAULT_PSI)).unwrap();
        let mut cfg = fast_cfg();
        cfg.record_trace = true;
        let r = reconstruct(&g, &x, &cfg, 3, &fx).unwrap();
        assert!(!r.failed());
        let trace = r.trace.as_ref().unwrap();
        assert_eq!(trace.len(), cfg.steps + 1);
        assert_eq!(*trace.last().unwrap(), r.final_distance);
        assert!(
            r.final_distance < trace[0],
            "no descent: {} -> {}",
            trace[0],
            r.final_distance
        );
    }

    #[test]
    fn reconstruction_is_deterministic() {
        let g = GeneratorModel::build(GeneratorArch::style_default(), 4).unwrap();
        let fx = FeatureExtractor::standard();
        let mut rng = DetRng::new(5);
        let s0 = rng.standard_normal_tensor(&[64]);
        let x = g
            .generate(&s0, &NoiseInput::sample(g.arch(), 9, DEFAULT_PSI))
            .unwrap();
        let cfg = fast_cfg();
        let a = reconstruct(&g, &x, &cfg, 11, &fx).unwrap();
        let b = reconstruct(&g, &x, &cfg, 11, &fx).unwrap();
        assert_eq!(a.final_distance.to_bits(), b.final_distance.to_bits());
        assert_eq!(a.seed.data(), b.seed.data());
        assert_eq!(a.initial_seed.data(), b.initial_seed.data());
    }

    #[test]
    fn singleton_pool_attributes_to_its_only_member() {
        let g = GeneratorModel::build(GeneratorArch::plain_default(), 6).unwrap();
        let fx = FeatureExtractor::standard();
        let mut rng = DetRng::new(7);
        let s0 = rng.standard_normal_tensor(&[64]);
        let x = g.generate(&s0, &NoiseInput::empty(DEFAULT_PSI)).unwrap();
        let pool = vec![Candidate::new("only", g)];
        let out = attribute(&x, &pool, &fast_cfg(), &fx).unwrap();
        assert_eq!(out.report.winner, "only");
        assert_eq!(out.report.ranking, vec!["only"]);
        assert!(out.report.margin.is_none());
    }

    #[test]
    fn ranking_is_argmin_with_id_tiebreak() {
        let mut d = BTreeMap::new();
        d.insert("b".to_string(), 1.0f32);
        d.insert("a".to_string(), 1.0);
        d.insert("c".to_string(), 0.5);
        let (ranking, winner, margin) = rank_distances(&d);
        assert_eq!(ranking, vec!["c", "a", "b"]);
        assert_eq!(winner, "c");
        assert_eq!(margin, Some(0.5));
    }

    #[test]
    fn adding_a_candidate_only_changes_winner_if_strictly_smaller() {
        let mut d = BTreeMap::new();
        d.insert("a".to_string(), 0.4f32);
        d.insert("b".to_string(), 0.9);
        let (_, winner_before, _) = rank_distances(&d);
        // Equal distance: tie-break keeps ordering among ids, and since
        // "z" > "a" the winner is unchanged.
        d.insert("z".to_string(), 0.4);
        let (_, winner_tie, _) = rank_distances(&d);
        assert_eq!(winner_before, winner_tie);
        // Strictly smaller distance takes over.
        d.insert("y".to_string(), 0.39);
        let (_, winner_after, _) = rank_distances(&d);
        assert_eq!(winner_after, "y");
    }

    #[test]
    fn min_over_attempts_is_monotone_in_attempt_budget() {
        // Exact superset property on a fixed attempt pool.
        let finals = [0.8f32, 0.5, 0.9, 0.45, 0.7];
        let best_m = |m: usize| finals[..m].iter().cloned().fold(f32::INFINITY, f32::min);
        let mut prev = f32::INFINITY;
        for m in 1..=finals.len() {
            let b = best_m(m);
            assert!(b <= prev);
            prev = b;
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let g = GeneratorModel::build(GeneratorArch::plain_default(), 8).unwrap();
        let fx = FeatureExtractor::standard();
        let x = Tensor::full(&[1, 32, 32], 0.5);
        let pool = vec![
            Candidate::new("same", g.clone()),
            Candidate::new("same", g),
        ];
        assert!(matches!(
            attribute(&x, &pool, &fast_cfg(), &fx),
            Err(AttributionError::DuplicateId(_))
        ));
    }

    #[test]
    fn leave_one_out_requires_true_model_in_pool() {
        let g = GeneratorModel::build(GeneratorArch::plain_default(), 9).unwrap();
        let fx = FeatureExtractor::standard();
        let x = Tensor::full(&[1, 32, 32], 0.5);
        let pool = vec![Candidate::new("a", g)];
        assert!(matches!(
            attribute_leave_one_out(&x, &pool, "nope", &fast_cfg(), &fx),
            Err(AttributionError::TrueModelMissing(_))
        ));
        // Excluding the only member empties the pool.
        assert!(matches!(
            attribute_leave_one_out(&x, &pool, "a", &fast_cfg(), &fx),
            Err(AttributionError::EmptyPool)
        ));
    }

    #[test]
    fn ranking_is_invariant_under_positive_scaling() {
        // Argmin invariance: scaling every distance by c > 0 cannot change
        // the ranking.
        let mut rng = DetRng::new(12);
        for _ in 0..200 {
            let mut d = BTreeMap::new();
            let n = rng.int_range(1, 6);
            for i in 0..n {
                d.insert(format!("g{i}"), rng.uniform_range(1e-6, 10.0));
            }
            let (ranking, winner, _) = rank_distances(&d);
            let c = rng.uniform_range(1e-3, 1e3);
            let scaled: BTreeMap<String, f32> =
                d.iter().map(|(k, v)| (k.clone(), v * c)).collect();
            let (ranking2, winner2, _) = rank_distances(&scaled);
            assert_eq!(ranking, ranking2);
            assert_eq!(winner, winner2);
        }
    }

    #[test]
    fn seed_discrepancy_basics() {
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(seed_discrepancy(&a, &a).unwrap(), 0.0);
        let b = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            seed_discrepancy(&a, &b),
            Err(AttributionError::SeedDimMismatch { .. })
        ));
        let c = Tensor::from_vec(vec![4.0, 6.0, 3.0]);
        assert_eq!(seed_discrepancy(&a, &c).unwrap(), 5.0);
    }

    #[test]
    fn eq3_objective_is_differentiable_through_generator_and_extractor() {
        // Gradient of the full reconstruction objective w.r.t. the seed.
        let build = |seed: u64| {
            let g = GeneratorModel::build(GeneratorArch::plain_default(), 10).unwrap();
            let fx = FeatureExtractor::standard();
            let mut rng = DetRng::new(seed);
            let target = g
                .generate(
                    &rng.standard_normal_tensor(&[64]),
                    &NoiseInput::empty(DEFAULT_PSI),
                )
                .unwrap();
            let tf = fx.extract(&target).unwrap();
            let mut tape = Tape::new();
            let s = tape.variable(rng.standard_normal_tensor(&[64]));
            let img = g.forward_on_tape(&mut tape, s, &[], DEFAULT_PSI, &[], None).unwrap();
            let feats = fx.features_on_tape(&mut tape, img).unwrap();
            let t = tape.constant(tf);
            let diff = tape.sub(feats, t).unwrap();
            let loss = tape.l2_norm_sq(diff).unwrap();
            (tape, loss, vec![s])
        };
        let err = crate::gradcheck::check_resampled(
            build,
            &[1, 2, 3],
            crate::gradcheck::DEFAULT_H,
            crate::gradcheck::DEFAULT_TOL,
        )
        .unwrap();
        assert!(err < crate::gradcheck::DEFAULT_TOL);
    }
}
