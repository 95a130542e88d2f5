//! The binary-weighted place classifier.
//!
//! A 2048-pixel grayscale frame drives two bit-packed weight layers. The
//! first layer has one column of 2048 weights per neuron; its output is the
//! expanded vector `e[j*2048 + i] = image[i] * sign(fc1[i, j])` of length
//! `b = 2048 * a`, which is exactly the weight count of the layer. Dropout
//! is applied to `e` at training time. The second layer maps the expanded
//! vector to one score per reference place: `score[n] = sum_k e[k] *
//! sign(fc2[k, n])`. There is no hidden activation and there are no biases.
//!
//! For a frozen classifier the two sign layers collapse algebraically:
//! `score[n] = sum_i image[i] * count[i, n]` where `count[i, n] = sum_j
//! sign(fc1[i, j]) * sign(fc2[j*2048 + i, n])` is a small integer in
//! [-a, +a] derived from the packed bits alone. Inference folds the bits
//! into that count matrix once and then runs a single 2048 x N product per
//! query, which is what keeps per-query latency in the low milliseconds.
//! Training keeps the expanded form because dropout and the per-weight
//! latent updates act on individual weights.

use crate::error::{Error, Result};
use crate::gray::{GrayImage, IMAGE_PIXELS};
use crate::nn::{self, AdamState, BinaryLatentMatrix, PackedBits, Rng};

/// Adam step size for the binary latent weights. Much larger than the
/// usual 1e-3: cross-entropy gradients through the saturated score scale
/// are bounded, so per-step latent movement is capped near the learning
/// rate, and latents must be able to traverse their whole [-1, +1] range
/// within a training run of tens of epochs.
pub const LATENT_LEARNING_RATE: f64 = 3e-2;

/// Argmax with ties broken toward the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in xs.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    /// Neuron count of the first layer (the paper's ablation plateaus at
    /// 192).
    pub neurons: usize,
    /// Number of reference places N; equals the training traversal length.
    pub places: usize,
    /// Training-time dropout on the expanded vector. High by design: it is
    /// the main source of disagreement between identically-shaped models.
    pub dropout: f64,
    /// Epoch budget; training stops early once the training set is
    /// predicted perfectly.
    pub epochs: usize,
    /// Adam step size for the latent weights.
    pub learning_rate: f64,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn new(places: usize) -> Self {
        BaselineConfig {
            neurons: 192,
            places,
            dropout: 0.75,
            epochs: 30,
            learning_rate: LATENT_LEARNING_RATE,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.neurons == 0 {
            return Err(Error::config("baseline neurons must be >= 1"));
        }
        if self.places < 2 {
            return Err(Error::config("baseline needs at least 2 places"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "baseline dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Expanded-vector length b = 2048 * a, which is also the second
    /// layer's row count.
    pub fn expanded_len(&self) -> usize {
        IMAGE_PIXELS * self.neurons
    }
}

/// Scores over all N places for one query, as produced by one classifier.
#[derive(Debug, Clone)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    /// Seed of the classifier that produced this vector.
    pub source_model: u64,
    /// Frame index the query came from, when known.
    pub query_frame: Option<usize>,
}

impl ScoreVector {
    pub fn argmax(&self) -> usize {
        argmax(&self.scores)
    }
}

/// Per-epoch training trace.
#[derive(Debug, Clone)]
pub struct BaselineTrainHistory {
    /// Mean sample loss per completed epoch.
    pub epoch_loss: Vec<f64>,
    /// Training-set accuracy after the last completed epoch.
    pub train_accuracy: f64,
    pub epochs_run: usize,
}

/// Trainable classifier: latent weights plus their packed sign views.
#[derive(Debug, Clone)]
pub struct BaselineClassifier {
    config: BaselineConfig,
    fc1: BinaryLatentMatrix, // 2048 x a
    fc2: BinaryLatentMatrix, // b x N
}

impl BaselineClassifier {
    /// Fresh classifier with latents drawn uniform on [-1, +1] from the
    /// config seed. Two inits with different seeds give different bit
    /// patterns, which is one of the ensemble's sources of diversity.
    pub fn init(config: BaselineConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let fc1 = BinaryLatentMatrix::random(IMAGE_PIXELS, config.neurons, &mut rng);
        let fc2 = BinaryLatentMatrix::random(config.expanded_len(), config.places, &mut rng);
        Ok(BaselineClassifier { config, fc1, fc2 })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn fc1(&self) -> &BinaryLatentMatrix {
        &self.fc1
    }

    pub fn fc2(&self) -> &BinaryLatentMatrix {
        &self.fc2
    }

    /// Tight byte count of the packed binary weights.
    pub fn packed_weight_bytes(&self) -> usize {
        let b = self.config.expanded_len();
        (IMAGE_PIXELS * self.config.neurons).div_ceil(8) + (b * self.config.places).div_ceil(8)
    }

    fn check_image(&self, image: &[f64]) -> Result<()> {
        if image.len() != IMAGE_PIXELS {
            return Err(Error::dim("baseline input image", IMAGE_PIXELS, image.len()));
        }
        debug_assert!(image.iter().all(|p| (0.0..=1.0).contains(p)));
        Ok(())
    }

    /// Expanded first-layer output `e[j*2048 + i] = image[i] * sign1[i, j]`.
    fn expand(&self, image: &[f64]) -> Vec<f64> {
        let a = self.config.neurons;
        let mut e = vec![0.0; self.config.expanded_len()];
        for j in 0..a {
            let chunk = &mut e[j * IMAGE_PIXELS..(j + 1) * IMAGE_PIXELS];
            for (i, slot) in chunk.iter_mut().enumerate() {
                *slot = image[i] * self.fc1.sign(i, j);
            }
        }
        e
    }

    /// `scores[n] += sum_k d[k] * sign2[k, n]`, skipping zeroed rows.
    fn accumulate_scores(fc2: &PackedBits, d: &[f64], scores: &mut [f64]) {
        let n = scores.len();
        for (k, &dk) in d.iter().enumerate() {
            if dk == 0.0 {
                continue;
            }
            for (wi, &word) in fc2.row_words(k).iter().enumerate() {
                let base = wi * 64;
                let hi = (base + 64).min(n);
                for (bit, slot) in scores[base..hi].iter_mut().enumerate() {
                    if (word >> bit) & 1 == 1 {
                        *slot += dk;
                    } else {
                        *slot -= dk;
                    }
                }
            }
        }
    }

    /// Full forward pass. With `training` set, dropout is drawn from `rng`
    /// and applied to the expanded vector; at inference the pass is
    /// deterministic and `rng` is not consumed.
    pub fn forward(&self, image: &[f64], training: bool, rng: &mut Rng) -> Result<ScoreVector> {
        self.check_image(image)?;
        let e = self.expand(image);
        let d = if training {
            nn::dropout(&e, self.config.dropout, rng, true)?
        } else {
            e
        };
        let mut scores = vec![0.0; self.config.places];
        Self::accumulate_scores(self.fc2.packed(), &d, &mut scores);
        Ok(ScoreVector {
            scores,
            source_model: self.config.seed,
            query_frame: None,
        })
    }

    /// Inference-mode prediction: the argmax place and the raw scores.
    pub fn predict(&self, image: &[f64]) -> Result<(usize, ScoreVector)> {
        let mut unused = Rng::new(0);
        let sv = self.forward(image, false, &mut unused)?;
        Ok((sv.argmax(), sv))
    }

    /// Trains on one traversal where frame index equals place label:
    /// shuffled single-frame steps of forward-with-dropout, softmax
    /// cross-entropy, straight-through gradients into both latent layers,
    /// one Adam step each and a re-clamp to [-1, +1]. Stops early when the
    /// training set is predicted perfectly.
    pub fn train(&mut self, traversal: &[GrayImage]) -> Result<BaselineTrainHistory> {
        if traversal.len() != self.config.places {
            return Err(Error::dim(
                "training traversal length",
                self.config.places,
                traversal.len(),
            ));
        }
        let places = self.config.places;
        let a = self.config.neurons;
        let b = self.config.expanded_len();
        let mut history = BaselineTrainHistory {
            epoch_loss: Vec::new(),
            train_accuracy: self.training_accuracy(traversal),
            epochs_run: 0,
        };
        if self.config.epochs == 0 {
            return Ok(history);
        }

        let mut rng = Rng::new(nn::derive_seed(self.config.seed, 0x7261_696e));
        let mut adam1 = AdamState::new(IMAGE_PIXELS * a);
        adam1.learning_rate = self.config.learning_rate;
        // The second layer's latents and Adam moments are the per-step
        // memory traffic bottleneck, so training holds them in f32 (the
        // precision the model file stores latents at anyway). The packed
        // bit view is rewritten in the same pass, so every read path stays
        // live; the f64 latents are written back once at the end.
        let mut fc2_state = Fc2TrainState::new(&self.fc2, self.config.learning_rate as f32);
        // Rows of fc2 whose moments are still identically zero can be
        // skipped while their gradient is zero; the skipped update is a
        // no-op by the Adam equations.
        let mut row_dirty = vec![false; b];
        let mut order: Vec<usize> = (0..places).collect();
        let mut grad1 = vec![0.0; IMAGE_PIXELS * a];
        let mut go32 = vec![0.0f32; places];

        let trace = std::env::var_os("BMVR_TRACE").is_some();
        let mut t_expand = 0.0f64;
        let mut t_fwd = 0.0f64;
        let mut t_bwd = 0.0f64;
        let mut t_fc2 = 0.0f64;
        let mut t_fc1 = 0.0f64;
        let mut t_eval = 0.0f64;
        macro_rules! lap {
            ($acc:ident, $body:expr) => {{
                let t0 = std::time::Instant::now();
                let out = $body;
                $acc += t0.elapsed().as_secs_f64();
                out
            }};
        }
        for _epoch in 0..self.config.epochs {
            rng.shuffle(&mut order);
            let mut loss_sum = 0.0;
            for &frame in &order {
                let image = traversal[frame].pixels();
                let (e, mask) = lap!(t_expand, {
                    let e = self.expand(image);
                    let mask = nn::dropout_mask(b, self.config.dropout, &mut rng);
                    (e, mask)
                });
                let d: Vec<f64> = e.iter().zip(&mask).map(|(&ev, &mv)| ev * mv).collect();

                let (loss, go) = lap!(t_fwd, {
                    let mut scores = vec![0.0; places];
                    Self::accumulate_scores(self.fc2.packed(), &d, &mut scores);
                    nn::softmax_ce(&scores, frame)?
                });
                loss_sum += loss;

                // Backward to the expanded vector (survivor rows only),
                // before the second layer's weights move.
                let ge_d = lap!(t_bwd, backward_to_expanded(self.fc2.packed(), &mask, &go));

                lap!(t_fc2, {
                    for (dst, &src) in go32.iter_mut().zip(&go) {
                        *dst = src as f32;
                    }
                    let (_, packed) = self.fc2.parts_mut();
                    fc2_state.step(packed, &d, &go32, &mut row_dirty);
                });

                // First-layer latent gradient: straight-through, so the
                // upstream value times the pixel.
                lap!(t_fc1, {
                    for j in 0..a {
                        for i in 0..IMAGE_PIXELS {
                            grad1[i * a + j] = ge_d[j * IMAGE_PIXELS + i] * image[i];
                        }
                    }
                    let adam = &mut adam1;
                    let g1 = &grad1;
                    self.fc1.update_latent(|lat| {
                        adam.update(lat, g1).expect("fc1 gradient shape");
                    });
                });
            }
            history.epoch_loss.push(loss_sum / places as f64);
            history.epochs_run += 1;
            history.train_accuracy = lap!(t_eval, self.training_accuracy(traversal));
            if history.train_accuracy == 1.0 {
                break;
            }
        }
        // Publish the trained second layer back into the latent matrix;
        // the repack reproduces the live packed bits sign-for-sign.
        let final_latents: Vec<f64> = fc2_state.latent.iter().map(|&v| v as f64).collect();
        self.fc2.update_latent(|l| l.copy_from_slice(&final_latents));
        if trace {
            eprintln!(
                "train trace: expand={t_expand:.2}s fwd={t_fwd:.2}s bwd={t_bwd:.2}s fc2={t_fc2:.2}s fc1={t_fc1:.2}s eval={t_eval:.2}s"
            );
        }
        Ok(history)
    }

    /// Inference-mode accuracy over the traversal, computed through the
    /// folded weights.
    pub fn training_accuracy(&self, traversal: &[GrayImage]) -> f64 {
        use rayon::prelude::*;

        let folded = fold_counts(self.fc1.packed(), self.fc2.packed());
        let n = self.config.places;
        let correct = traversal
            .par_iter()
            .enumerate()
            .filter(|(idx, frame)| {
                let mut scores = vec![0.0; n];
                fold_gemv(&folded, n, frame.pixels(), &mut scores);
                argmax(&scores) == *idx
            })
            .count();
        correct as f64 / traversal.len() as f64
    }

    /// Freezes the classifier for inference: packed bits plus the folded
    /// per-pixel count matrix. Latents are carried along only when resuming
    /// training later is wanted; they dominate the memory footprint.
    pub fn freeze(&self, keep_latents: bool) -> FrozenBaseline {
        let latents = keep_latents.then(|| FrozenLatents {
            fc1: self.fc1.latent().iter().map(|&v| v as f32).collect(),
            fc2: self.fc2.latent().iter().map(|&v| v as f32).collect(),
        });
        FrozenBaseline::from_parts(
            self.config.neurons,
            self.config.places,
            self.config.seed,
            self.fc1.packed().clone(),
            self.fc2.packed().clone(),
            latents,
        )
        .expect("classifier invariants guarantee consistent shapes")
    }
}

/// dL/de masked by dropout: `mask[k] * sum_n go[n] * sign2[k, n]` for
/// surviving rows, zero elsewhere. Rows are independent.
fn backward_to_expanded(fc2: &PackedBits, mask: &[f64], go: &[f64]) -> Vec<f64> {
    use rayon::prelude::*;

    let n = fc2.cols();
    let mut ge = vec![0.0; mask.len()];
    ge.par_chunks_mut(2048)
        .zip(mask.par_chunks(2048))
        .enumerate()
        .for_each(|(chunk, (ge_c, mask_c))| {
            let base_row = chunk * 2048;
            for (r, slot) in ge_c.iter_mut().enumerate() {
                let mk = mask_c[r];
                if mk == 0.0 {
                    continue;
                }
                let mut acc = 0.0;
                for (wi, &word) in fc2.row_words(base_row + r).iter().enumerate() {
                    let base = wi * 64;
                    let hi = (base + 64).min(n);
                    for (bit, &g) in go[base..hi].iter().enumerate() {
                        if (word >> bit) & 1 == 1 {
                            acc += g;
                        } else {
                            acc -= g;
                        }
                    }
                }
                *slot = mk * acc;
            }
        });
    ge
}

/// Second-layer training state: latents plus Adam moments, all f32. One
/// [`step`](Self::step) applies the Adam rule with gradient `d[k] * go[n]`
/// to every entry, clamps, and rewrites the packed bits, row-parallel in
/// coarse chunks with branch-free inner loops.
struct Fc2TrainState {
    latent: Vec<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
    step: u64,
    lr: f32,
    places: usize,
}

impl Fc2TrainState {
    fn new(fc2: &BinaryLatentMatrix, lr: f32) -> Self {
        Fc2TrainState {
            latent: fc2.latent().iter().map(|&v| v as f32).collect(),
            m: vec![0.0; fc2.rows() * fc2.cols()],
            v: vec![0.0; fc2.rows() * fc2.cols()],
            step: 0,
            lr,
            places: fc2.cols(),
        }
    }

    fn step(&mut self, packed: &mut PackedBits, d: &[f64], go: &[f32], row_dirty: &mut [bool]) {
        use rayon::prelude::*;

        // Rows per parallel task; coarse enough that scheduling overhead
        // stays negligible next to the arithmetic.
        const CHUNK_ROWS: usize = 2048;

        self.step += 1;
        let places = self.places;
        let lr = self.lr;
        let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
        let c1 = 1.0 / (1.0 - b1.powi(self.step.min(i32::MAX as u64) as i32));
        let c2 = 1.0 / (1.0 - b2.powi(self.step.min(i32::MAX as u64) as i32));
        let wpr = packed.words_per_row();
        self.latent
            .par_chunks_mut(places * CHUNK_ROWS)
            .zip(self.m.par_chunks_mut(places * CHUNK_ROWS))
            .zip(self.v.par_chunks_mut(places * CHUNK_ROWS))
            .zip(packed.all_words_mut().par_chunks_mut(wpr * CHUNK_ROWS))
            .zip(d.par_chunks(CHUNK_ROWS))
            .zip(row_dirty.par_chunks_mut(CHUNK_ROWS))
            .for_each(|(((((lat_c, m_c), v_c), words_c), d_c), dirty_c)| {
                for (r, &dk) in d_c.iter().enumerate() {
                    if dk == 0.0 && !dirty_c[r] {
                        // Moments are still zero and the gradient is zero,
                        // so the whole update is the identity.
                        continue;
                    }
                    dirty_c[r] = true;
                    let dk = dk as f32;
                    let lrow = &mut lat_c[r * places..(r + 1) * places];
                    let mrow = &mut m_c[r * places..(r + 1) * places];
                    let vrow = &mut v_c[r * places..(r + 1) * places];
                    for (((p, mm), vv), &g0) in
                        lrow.iter_mut().zip(mrow.iter_mut()).zip(vrow.iter_mut()).zip(go)
                    {
                        let g = dk * g0;
                        let m_new = b1 * *mm + (1.0 - b1) * g;
                        let v_new = b2 * *vv + (1.0 - b2) * g * g;
                        *mm = m_new;
                        *vv = v_new;
                        let step = lr * (m_new * c1) / ((v_new * c2).sqrt() + eps);
                        *p = (*p - step).clamp(-1.0, 1.0);
                    }
                    let wrow = &mut words_c[r * wpr..(r + 1) * wpr];
                    for (wi, word_slot) in wrow.iter_mut().enumerate() {
                        let base = wi * 64;
                        let hi = (base + 64).min(places);
                        let mut word = 0u64;
                        for (bit, &p) in lrow[base..hi].iter().enumerate() {
                            if p >= 0.0 {
                                word |= 1 << bit;
                            }
                        }
                        *word_slot = word;
                    }
                }
            });
    }
}

/// Folds the two packed sign layers into the per-pixel, per-place count
/// matrix `count[i, n] = sum_j sign1[i, j] * sign2[j*2048 + i, n]`,
/// row-major by pixel. Integer sums, so the result is exact and
/// independent of iteration order; pixels fold in parallel.
pub(crate) fn fold_counts(fc1: &PackedBits, fc2: &PackedBits) -> Vec<f64> {
    use rayon::prelude::*;

    let a = fc1.cols();
    let n = fc2.cols();
    debug_assert_eq!(fc1.rows(), IMAGE_PIXELS);
    debug_assert_eq!(fc2.rows(), IMAGE_PIXELS * a);
    let mut counts = vec![0i32; IMAGE_PIXELS * n];
    counts
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            for j in 0..a {
                let s1: i32 = if fc1.get(i, j) { 1 } else { -1 };
                for (wi, &word) in fc2.row_words(j * IMAGE_PIXELS + i).iter().enumerate() {
                    let base = wi * 64;
                    let hi = (base + 64).min(n);
                    for (bit, slot) in row[base..hi].iter_mut().enumerate() {
                        if (word >> bit) & 1 == 1 {
                            *slot += s1;
                        } else {
                            *slot -= s1;
                        }
                    }
                }
            }
        });
    counts.into_iter().map(f64::from).collect()
}

/// `out[n] = sum_i image[i] * folded[i * n_places + n]`.
pub(crate) fn fold_gemv(folded: &[f64], n_places: usize, image: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), n_places);
    out.fill(0.0);
    for (i, &xi) in image.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &folded[i * n_places..(i + 1) * n_places];
        for (slot, &c) in out.iter_mut().zip(row) {
            *slot += xi * c;
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FrozenLatents {
    pub(crate) fc1: Vec<f32>,
    pub(crate) fc2: Vec<f32>,
}

/// Immutable inference-ready classifier: packed weights and their folded
/// count matrix. Shareable across threads; forward passes are read-only.
#[derive(Debug, Clone)]
pub struct FrozenBaseline {
    neurons: usize,
    places: usize,
    seed: u64,
    fc1_bits: PackedBits,
    fc2_bits: PackedBits,
    folded: Vec<f64>,
    pub(crate) latents: Option<FrozenLatents>,
}

impl FrozenBaseline {
    pub(crate) fn from_parts(
        neurons: usize,
        places: usize,
        seed: u64,
        fc1_bits: PackedBits,
        fc2_bits: PackedBits,
        latents: Option<FrozenLatents>,
    ) -> Result<Self> {
        if fc1_bits.rows() != IMAGE_PIXELS || fc1_bits.cols() != neurons {
            return Err(Error::dim(
                "frozen fc1 shape",
                IMAGE_PIXELS * neurons,
                fc1_bits.rows() * fc1_bits.cols(),
            ));
        }
        if fc2_bits.rows() != IMAGE_PIXELS * neurons || fc2_bits.cols() != places {
            return Err(Error::dim(
                "frozen fc2 shape",
                IMAGE_PIXELS * neurons * places,
                fc2_bits.rows() * fc2_bits.cols(),
            ));
        }
        let folded = fold_counts(&fc1_bits, &fc2_bits);
        Ok(FrozenBaseline {
            neurons,
            places,
            seed,
            fc1_bits,
            fc2_bits,
            folded,
            latents,
        })
    }

    /// Random frozen classifier (bits drawn directly, no latents). Used for
    /// size and latency measurements where trained weights are irrelevant.
    pub fn random(neurons: usize, places: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let fc1 = random_bits(IMAGE_PIXELS, neurons, &mut rng);
        let fc2 = random_bits(IMAGE_PIXELS * neurons, places, &mut rng);
        Self::from_parts(neurons, places, seed, fc1, fc2, None)
            .expect("shapes are consistent by construction")
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn places(&self) -> usize {
        self.places
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fc1_bits(&self) -> &PackedBits {
        &self.fc1_bits
    }

    pub fn fc2_bits(&self) -> &PackedBits {
        &self.fc2_bits
    }

    pub fn has_latents(&self) -> bool {
        self.latents.is_some()
    }

    pub fn packed_weight_bytes(&self) -> usize {
        (IMAGE_PIXELS * self.neurons).div_ceil(8)
            + (IMAGE_PIXELS * self.neurons * self.places).div_ceil(8)
    }

    /// Inference forward pass through the folded weights.
    pub fn forward(&self, image: &[f64]) -> Result<ScoreVector> {
        if image.len() != IMAGE_PIXELS {
            return Err(Error::dim("baseline input image", IMAGE_PIXELS, image.len()));
        }
        let mut scores = vec![0.0; self.places];
        fold_gemv(&self.folded, self.places, image, &mut scores);
        Ok(ScoreVector {
            scores,
            source_model: self.seed,
            query_frame: None,
        })
    }

    /// Forward into a caller-provided buffer; the allocation-free path the
    /// latency benchmark times.
    pub fn forward_into(&self, image: &[f64], scores: &mut [f64]) {
        debug_assert_eq!(image.len(), IMAGE_PIXELS);
        debug_assert_eq!(scores.len(), self.places);
        fold_gemv(&self.folded, self.places, image, scores);
    }

    pub fn predict(&self, image: &[f64]) -> Result<(usize, ScoreVector)> {
        let sv = self.forward(image)?;
        Ok((sv.argmax(), sv))
    }

    /// Reconstructs a trainable classifier from retained latents. The
    /// packed views are regenerated from the latents, which the sign
    /// convention keeps consistent with the stored bits.
    pub fn thaw(&self, dropout: f64, epochs: usize) -> Result<BaselineClassifier> {
        let latents = self
            .latents
            .as_ref()
            .ok_or_else(|| Error::config("model file was saved without latent weights"))?;
        let config = BaselineConfig {
            neurons: self.neurons,
            places: self.places,
            dropout,
            epochs,
            learning_rate: LATENT_LEARNING_RATE,
            seed: self.seed,
        };
        config.validate()?;
        let fc1 = BinaryLatentMatrix::from_latent(
            IMAGE_PIXELS,
            self.neurons,
            latents.fc1.iter().map(|&v| v as f64).collect(),
        );
        let fc2 = BinaryLatentMatrix::from_latent(
            IMAGE_PIXELS * self.neurons,
            self.places,
            latents.fc2.iter().map(|&v| v as f64).collect(),
        );
        Ok(BaselineClassifier { config, fc1, fc2 })
    }
}

fn random_bits(rows: usize, cols: usize, rng: &mut Rng) -> PackedBits {
    let mut bits = PackedBits::zeros(rows, cols);
    let wpr = bits.words_per_row();
    let tail_bits = cols - (wpr - 1) * 64;
    let tail_mask = if tail_bits == 64 {
        u64::MAX
    } else {
        (1u64 << tail_bits) - 1
    };
    for r in 0..rows {
        let words = bits.row_words_mut(r);
        for (wi, w) in words.iter_mut().enumerate() {
            let raw = rng.next_u64();
            *w = if wi + 1 == wpr { raw & tail_mask } else { raw };
        }
    }
    bits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gray::GrayImage;

    fn small_config(neurons: usize, places: usize, seed: u64) -> BaselineConfig {
        BaselineConfig {
            neurons,
            places,
            dropout: 0.75,
            epochs: 30,
            seed,
        }
    }

    /// Reference implementation: the literal triple loop over places,
    /// neurons and pixels.
    fn naive_forward(model: &BaselineClassifier, image: &[f64]) -> Vec<f64> {
        let a = model.config().neurons;
        let n = model.config().places;
        let mut scores = vec![0.0; n];
        for (place, slot) in scores.iter_mut().enumerate() {
            for j in 0..a {
                for (i, &px) in image.iter().enumerate() {
                    *slot += px * model.fc1().sign(i, j) * model.fc2().sign(j * IMAGE_PIXELS + i, place);
                }
            }
        }
        scores
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = BaselineClassifier::init(small_config(2, 4, 9)).unwrap();
        let b = BaselineClassifier::init(small_config(2, 4, 9)).unwrap();
        assert_eq!(a.fc1().packed(), b.fc1().packed());
        assert_eq!(a.fc2().packed(), b.fc2().packed());
        assert_eq!(a.fc1().latent(), b.fc1().latent());
    }

    #[test]
    fn different_seeds_give_different_bits() {
        let a = BaselineClassifier::init(small_config(2, 4, 1)).unwrap();
        let b = BaselineClassifier::init(small_config(2, 4, 2)).unwrap();
        assert_ne!(a.fc1().packed(), b.fc1().packed());
    }

    #[test]
    fn second_layer_height_is_total_first_layer_weight_count() {
        // At the paper's full scale the structural law gives 393216 rows;
        // checked here without materializing gigabytes of latents.
        let cfg = BaselineConfig::new(1000);
        assert_eq!(cfg.neurons, 192);
        assert_eq!(cfg.expanded_len(), 393_216);
        let frozen = FrozenBaseline::random(192, 1000, 5);
        assert_eq!(frozen.fc2_bits().rows(), 393_216);
        assert_eq!(frozen.fc2_bits().cols(), 1000);

        let small = BaselineClassifier::init(small_config(3, 5, 0)).unwrap();
        assert_eq!(small.fc2().rows(), IMAGE_PIXELS * 3);
    }

    #[test]
    fn all_ones_chain_sums_the_image() {
        let mut model = BaselineClassifier::init(small_config(1, 2, 0)).unwrap();
        model.fc1.update_latent(|l| l.fill(1.0));
        model.fc2.update_latent(|l| l.fill(1.0));
        let image = vec![1.0; IMAGE_PIXELS];
        let (_, sv) = model.predict(&image).unwrap();
        assert_eq!(sv.scores, vec![2048.0, 2048.0]);
    }

    #[test]
    fn zero_image_gives_zero_scores() {
        let model = BaselineClassifier::init(small_config(3, 6, 4)).unwrap();
        let (_, sv) = model.predict(&vec![0.0; IMAGE_PIXELS]).unwrap();
        assert!(sv.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn forward_matches_naive_triple_loop() {
        let model = BaselineClassifier::init(small_config(4, 8, 11)).unwrap();
        let mut rng = Rng::new(50);
        let image: Vec<f64> = (0..IMAGE_PIXELS).map(|_| rng.next_f64()).collect();
        let fast = model.forward(&image, false, &mut rng).unwrap();
        let slow = naive_forward(&model, &image);
        for (f, s) in fast.scores.iter().zip(&slow) {
            assert!((f - s).abs() <= 1e-9 * s.abs().max(1.0));
        }
    }

    #[test]
    fn folded_path_matches_naive_triple_loop() {
        let model = BaselineClassifier::init(small_config(4, 8, 12)).unwrap();
        let frozen = model.freeze(false);
        let mut rng = Rng::new(51);
        let image: Vec<f64> = (0..IMAGE_PIXELS).map(|_| rng.next_f64()).collect();
        let fast = frozen.forward(&image).unwrap();
        let slow = naive_forward(&model, &image);
        for (f, s) in fast.scores.iter().zip(&slow) {
            assert!((f - s).abs() <= 1e-9 * s.abs().max(1.0));
        }
    }

    #[test]
    fn predict_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn argmax_invariant_under_positive_affine_transforms() {
        let mut rng = Rng::new(8);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..12).map(|_| rng.uniform(-5.0, 5.0)).collect();
            let scale = rng.uniform(0.1, 10.0);
            let shift = rng.uniform(-100.0, 100.0);
            let mapped: Vec<f64> = scores.iter().map(|&s| scale * s + shift).collect();
            assert_eq!(argmax(&scores), argmax(&mapped));
        }
    }

    #[test]
    fn wrong_image_length_is_an_error() {
        let model = BaselineClassifier::init(small_config(1, 2, 0)).unwrap();
        assert!(model.predict(&[0.5; 100]).is_err());
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let mut cfg = small_config(2, 4, 3);
        cfg.epochs = 0;
        let mut model = BaselineClassifier::init(cfg).unwrap();
        let before = model.fc2().latent().to_vec();
        let frames: Vec<GrayImage> = (0..4)
            .map(|f| GrayImage::from_fn(|x, y| ((x + y + f) % 7) as f64 / 6.0))
            .collect();
        model.train(&frames).unwrap();
        assert_eq!(model.fc2().latent(), &before[..]);
    }

    #[test]
    fn inference_path_is_deterministic() {
        let model = BaselineClassifier::init(small_config(2, 5, 21)).unwrap();
        let image: Vec<f64> = (0..IMAGE_PIXELS).map(|i| (i % 9) as f64 / 8.0).collect();
        let mut r1 = Rng::new(1);
        let mut r2 = Rng::new(999);
        let a = model.forward(&image, false, &mut r1).unwrap();
        let b = model.forward(&image, false, &mut r2).unwrap();
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn packed_weight_bytes_follow_the_formula() {
        let model = BaselineClassifier::init(small_config(3, 7, 0)).unwrap();
        let b = IMAGE_PIXELS * 3;
        assert_eq!(
            model.packed_weight_bytes(),
            (IMAGE_PIXELS * 3usize).div_ceil(8) + (b * 7usize).div_ceil(8)
        );
        assert_eq!(
            model.freeze(false).packed_weight_bytes(),
            model.packed_weight_bytes()
        );
    }

    #[test]
    fn freeze_thaw_round_trips_the_weights() {
        let model = BaselineClassifier::init(small_config(2, 4, 77)).unwrap();
        let frozen = model.freeze(true);
        let thawed = frozen.thaw(0.75, 30).unwrap();
        assert_eq!(thawed.fc1().packed(), model.fc1().packed());
        assert_eq!(thawed.fc2().packed(), model.fc2().packed());
    }
}
