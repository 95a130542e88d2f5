//! End-to-end training schema and the assembled recognition system.
//!
//! One environment traversal trains everything: q baseline classifiers are
//! trained on the raw frames (seeds base_seed + 0 .. base_seed + q - 1),
//! frozen, and then queried with augmented copies of the same frames to
//! build the merger's training set. The baselines are perfect on the raw
//! frames, so augmentation is what injects the disagreement the merger
//! needs; without it every sample would carry an identical score pattern
//! and merger training would be degenerate.

use crate::augment::augment_pipeline;
use crate::baseline::{BaselineClassifier, BaselineConfig, FrozenBaseline, ScoreVector};
use crate::data::Traversal;
use crate::error::{Error, Result};
use crate::gray::GrayImage;
use crate::merger::{MergerNet, ScoreMatrix};
use crate::nn::{derive_seed, Rng};

// Stream labels for deriving independent seeds from base_seed.
const SEED_AUGMENT: u64 = 0x6175_67;
const SEED_MERGER_INIT: u64 = 0x6d67_69;
const SEED_MERGER_TRAIN: u64 = 0x6d67_74;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Baseline layer width a.
    pub neurons: usize,
    /// Baseline training dropout on the expanded vector.
    pub baseline_dropout: f64,
    /// Baseline epoch budget (early-stopped at perfect training accuracy).
    pub baseline_epochs: usize,
    /// Number of baseline classifiers q.
    pub models: usize,
    /// Merger kernel width w.
    pub kernel_width: usize,
    pub merger_dropout: f64,
    pub merger_epochs: usize,
    /// Augmented copies per frame K in the merger training set.
    pub copies_per_frame: usize,
    pub base_seed: u64,
    /// Keep f32 latents in the frozen classifiers (and the model file) so
    /// training can resume later. Costs 32x the packed weight memory.
    pub retain_latents: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            neurons: 192,
            baseline_dropout: 0.75,
            baseline_epochs: 30,
            models: 2,
            kernel_width: 4,
            merger_dropout: 0.30,
            merger_epochs: 100,
            copies_per_frame: 5,
            base_seed: 0,
            retain_latents: false,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self, places: usize) -> Result<()> {
        if self.models == 0 {
            return Err(Error::config("system needs at least one baseline model"));
        }
        if self.kernel_width == 0 || self.kernel_width > places {
            return Err(Error::config(format!(
                "kernel width {} must be in 1..={places}",
                self.kernel_width
            )));
        }
        if self.copies_per_frame == 0 {
            return Err(Error::config("copies_per_frame must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.merger_dropout) {
            return Err(Error::config(format!(
                "merger dropout must be in [0, 1), got {}",
                self.merger_dropout
            )));
        }
        self.baseline_config(places, 0).validate()
    }

    pub fn baseline_config(&self, places: usize, model_index: usize) -> BaselineConfig {
        BaselineConfig {
            neurons: self.neurons,
            places,
            dropout: self.baseline_dropout,
            epochs: self.baseline_epochs,
            learning_rate: crate::baseline::LATENT_LEARNING_RATE,
            seed: self.base_seed.wrapping_add(model_index as u64),
        }
    }
}

/// What training produced, for the report file and for the degeneracy
/// check.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Raw-traversal training accuracy per baseline (expected 1.0).
    pub baseline_train_accuracy: Vec<f64>,
    pub baseline_epochs_run: Vec<usize>,
    /// Accuracy of each baseline on the augmented merger training set.
    pub baseline_augmented_accuracy: Vec<f64>,
    /// Fraction of augmented samples on which not all baselines agree.
    pub disagreement_rate: f64,
    /// True when the augmented set carries no disagreement at all, which
    /// makes merger training equivalent to single-class training.
    pub merger_training_degenerate: bool,
    pub merger_train_accuracy: f64,
    pub merger_epoch_loss: Vec<f64>,
    pub places: usize,
    pub augmented_samples: usize,
}

impl TrainReport {
    /// Flat key/value lines, the machine-readable half of the report.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("places={}\n", self.places));
        out.push_str(&format!("augmented_samples={}\n", self.augmented_samples));
        for (i, acc) in self.baseline_train_accuracy.iter().enumerate() {
            out.push_str(&format!("baseline{i}_train_accuracy={acc}\n"));
            out.push_str(&format!(
                "baseline{i}_epochs_run={}\n",
                self.baseline_epochs_run[i]
            ));
            out.push_str(&format!(
                "baseline{i}_augmented_accuracy={}\n",
                self.baseline_augmented_accuracy[i]
            ));
        }
        out.push_str(&format!("disagreement_rate={}\n", self.disagreement_rate));
        out.push_str(&format!(
            "merger_training_degenerate={}\n",
            self.merger_training_degenerate
        ));
        out.push_str(&format!(
            "merger_train_accuracy={}\n",
            self.merger_train_accuracy
        ));
        if let Some(last) = self.merger_epoch_loss.last() {
            out.push_str(&format!("merger_final_loss={last}\n"));
        }
        out
    }

    /// Plain-text table, the human-readable half.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "training report: {} places, {} augmented samples\n",
            self.places, self.augmented_samples
        ));
        out.push_str("model  train-acc  epochs  augmented-acc\n");
        for i in 0..self.baseline_train_accuracy.len() {
            out.push_str(&format!(
                "{:<5}  {:<9.4}  {:<6}  {:<13.4}\n",
                i,
                self.baseline_train_accuracy[i],
                self.baseline_epochs_run[i],
                self.baseline_augmented_accuracy[i]
            ));
        }
        out.push_str(&format!(
            "disagreement rate: {:.4}\nmerger train accuracy: {:.4}\n",
            self.disagreement_rate, self.merger_train_accuracy
        ));
        if self.merger_training_degenerate {
            out.push_str("warning: merger training degenerate (no disagreement in the augmented set)\n");
        }
        out
    }
}

/// The assembled system: q frozen classifiers and the trained merger.
#[derive(Debug, Clone)]
pub struct VprSystem {
    classifiers: Vec<FrozenBaseline>,
    merger: MergerNet,
    config: SystemConfig,
    places: usize,
}

impl VprSystem {
    pub(crate) fn from_parts(
        classifiers: Vec<FrozenBaseline>,
        merger: MergerNet,
        config: SystemConfig,
    ) -> Result<Self> {
        if classifiers.is_empty() {
            return Err(Error::config("system needs at least one classifier"));
        }
        let places = classifiers[0].places();
        for c in &classifiers {
            if c.places() != places {
                return Err(Error::dim("classifier place count", places, c.places()));
            }
            if c.neurons() != config.neurons {
                return Err(Error::dim("classifier neurons", config.neurons, c.neurons()));
            }
        }
        if merger.models() != classifiers.len()
            || merger.places() != places
            || merger.width() != config.kernel_width
        {
            return Err(Error::config(
                "merger dimensions inconsistent with classifiers and config",
            ));
        }
        Ok(VprSystem {
            classifiers,
            merger,
            config,
            places,
        })
    }

    /// System with random weights at the given shape; the weights never
    /// matter for latency or size measurements.
    pub fn random(config: &SystemConfig, places: usize, seed: u64) -> Result<Self> {
        config.validate(places)?;
        let classifiers: Vec<FrozenBaseline> = (0..config.models)
            .map(|m| FrozenBaseline::random(config.neurons, places, seed.wrapping_add(m as u64)))
            .collect();
        let mut merger = MergerNet::init(
            config.models,
            config.kernel_width,
            places,
            config.merger_dropout,
            derive_seed(seed, SEED_MERGER_INIT),
        )?;
        merger.round_to_f32();
        Self::from_parts(classifiers, merger, config.clone())
    }

    pub fn places(&self) -> usize {
        self.places
    }

    pub fn models(&self) -> usize {
        self.classifiers.len()
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn classifiers(&self) -> &[FrozenBaseline] {
        &self.classifiers
    }

    pub fn merger(&self) -> &MergerNet {
        &self.merger
    }

    /// Full prediction for one query frame: every classifier's forward
    /// pass, the stacked score matrix, and the merger's verdict.
    pub fn predict(&self, query: &GrayImage) -> Result<(usize, f64, ScoreMatrix)> {
        let rows: Vec<ScoreVector> = self
            .classifiers
            .iter()
            .map(|c| c.forward(query.pixels()))
            .collect::<Result<_>>()?;
        let stacked = ScoreMatrix::from_rows(&rows)?;
        let (place, confidence) = self.merger.predict(&stacked)?;
        Ok((place, confidence, stacked))
    }

    /// Prediction with caller-owned scratch buffers; no per-query weight
    /// copies and no allocation beyond the returned score matrix parts.
    /// This is the path the latency benchmark measures.
    pub(crate) fn predict_into(&self, query: &GrayImage, scratch: &mut PredictScratch) -> Result<(usize, f64)> {
        for (m, c) in self.classifiers.iter().enumerate() {
            let row = &mut scratch.stacked[m * self.places..(m + 1) * self.places];
            c.forward_into(query.pixels(), row);
        }
        let s = ScoreMatrix::from_raw(
            self.classifiers.len(),
            self.places,
            std::mem::take(&mut scratch.stacked),
        )?;
        let out = self.merger.predict(&s);
        scratch.stacked = s.into_data();
        out
    }
}

pub(crate) struct PredictScratch {
    stacked: Vec<f64>,
}

impl PredictScratch {
    pub(crate) fn new(models: usize, places: usize) -> Self {
        PredictScratch {
            stacked: vec![0.0; models * places],
        }
    }
}

/// Builds the merger's training set: for every frame and each of K copies,
/// augment the frame, run every frozen classifier in inference mode, stack
/// the score vectors and label them with the true frame index. The set is
/// generated once, before merger training, and each (frame, copy) pair
/// draws from its own derived stream.
pub fn build_merger_set(
    classifiers: &[FrozenBaseline],
    frames: &[GrayImage],
    copies: usize,
    seed: u64,
) -> Result<Vec<(ScoreMatrix, usize)>> {
    build_merger_set_with(classifiers, frames, copies, seed, |img, s| {
        augment_pipeline(img, &mut Rng::new(s))
    })
}

/// As [`build_merger_set`] but with a caller-chosen augmentation, which the
/// degenerate-identity tests use.
pub fn build_merger_set_with(
    classifiers: &[FrozenBaseline],
    frames: &[GrayImage],
    copies: usize,
    seed: u64,
    augment: impl Fn(&GrayImage, u64) -> GrayImage,
) -> Result<Vec<(ScoreMatrix, usize)>> {
    let mut set = Vec::with_capacity(frames.len() * copies);
    for (frame_idx, frame) in frames.iter().enumerate() {
        for copy in 0..copies {
            let stream = derive_seed(seed, (frame_idx * copies + copy) as u64);
            let augmented = augment(frame, stream);
            let rows: Vec<ScoreVector> = classifiers
                .iter()
                .map(|c| {
                    c.forward(augmented.pixels()).map(|mut sv| {
                        sv.query_frame = Some(frame_idx);
                        sv
                    })
                })
                .collect::<Result<_>>()?;
            set.push((ScoreMatrix::from_rows(&rows)?, frame_idx));
        }
    }
    Ok(set)
}

/// Fraction of samples on which the stacked rows do not all agree on the
/// argmax place. Zero for a single-model system.
pub fn disagreement_rate(samples: &[(ScoreMatrix, usize)]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let disagreements = samples
        .iter()
        .filter(|(s, _)| {
            let first = crate::baseline::argmax(s.row(0));
            (1..s.models()).any(|m| crate::baseline::argmax(s.row(m)) != first)
        })
        .count();
    disagreements as f64 / samples.len() as f64
}

/// Trains the whole system from a single traversal. Baselines first (on
/// the raw frames), then the fixed augmented score set, then the merger
/// with the baselines frozen.
pub fn train_system(traversal: &Traversal, config: &SystemConfig) -> Result<(VprSystem, TrainReport)> {
    let places = traversal.len();
    if places == 0 {
        return Err(Error::config("training traversal is empty"));
    }
    config.validate(places)?;
    let frames = traversal.frames();

    let mut classifiers = Vec::with_capacity(config.models);
    let mut baseline_train_accuracy = Vec::new();
    let mut baseline_epochs_run = Vec::new();
    for m in 0..config.models {
        let mut model = BaselineClassifier::init(config.baseline_config(places, m))?;
        let history = model.train(frames)?;
        baseline_train_accuracy.push(history.train_accuracy);
        baseline_epochs_run.push(history.epochs_run);
        classifiers.push(model.freeze(config.retain_latents));
    }

    let aug_seed = derive_seed(config.base_seed, SEED_AUGMENT);
    let samples = build_merger_set(&classifiers, frames, config.copies_per_frame, aug_seed)?;

    let baseline_augmented_accuracy: Vec<f64> = (0..config.models)
        .map(|m| {
            let correct = samples
                .iter()
                .filter(|(s, label)| crate::baseline::argmax(s.row(m)) == *label)
                .count();
            correct as f64 / samples.len() as f64
        })
        .collect();
    let disagreement = disagreement_rate(&samples);

    let mut merger = MergerNet::init(
        config.models,
        config.kernel_width,
        places,
        config.merger_dropout,
        derive_seed(config.base_seed, SEED_MERGER_INIT),
    )?;
    let merger_epoch_loss = merger.train(
        &samples,
        config.merger_epochs,
        derive_seed(config.base_seed, SEED_MERGER_TRAIN),
    )?;
    merger.round_to_f32();
    let merger_train_accuracy = merger.accuracy(&samples)?;

    let report = TrainReport {
        baseline_train_accuracy,
        baseline_epochs_run,
        baseline_augmented_accuracy,
        disagreement_rate: disagreement,
        merger_training_degenerate: disagreement == 0.0,
        merger_train_accuracy,
        merger_epoch_loss,
        places,
        augmented_samples: samples.len(),
    };
    let system = VprSystem::from_parts(classifiers, merger, config.clone())?;
    Ok((system, report))
}
