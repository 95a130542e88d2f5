//! The score-fusion network: a full-height 1-D convolution over stacked
//! score vectors, ReLU, then a dense layer to the final per-place scores.
//!
//! The kernel is q x w where q is the classifier count, so it spans all
//! stacked rows and slides only horizontally over the N place columns.
//! With width w the valid sweep produces `l = N + 1 - w` outputs: one
//! convolution both combines the classifiers and relates w adjacent
//! places. Both parameter tensors are real-valued; gradients here are
//! exact, unlike the straight-through baseline layers.

use crate::baseline::{argmax, ScoreVector};
use crate::error::{Error, Result};
use crate::nn::{self, AdamState, RealMatrix, Rng};

/// q score vectors stacked in fixed model order: shape q x N.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    models: usize,
    places: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn from_rows(rows: &[ScoreVector]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::config("score matrix needs at least one row"));
        }
        let places = rows[0].scores.len();
        let mut data = Vec::with_capacity(rows.len() * places);
        for row in rows {
            if row.scores.len() != places {
                return Err(Error::dim("score matrix row", places, row.scores.len()));
            }
            data.extend_from_slice(&row.scores);
        }
        Ok(ScoreMatrix {
            models: rows.len(),
            places,
            data,
        })
    }

    pub fn from_raw(models: usize, places: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != models * places {
            return Err(Error::dim("score matrix data", models * places, data.len()));
        }
        Ok(ScoreMatrix {
            models,
            places,
            data,
        })
    }

    pub fn models(&self) -> usize {
        self.models
    }

    pub fn places(&self) -> usize {
        self.places
    }

    #[inline]
    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.places..(m + 1) * self.places]
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.data[m * self.places + n]
    }

    pub(crate) fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Valid full-height cross-correlation: `t[i] = sum_a sum_k theta[a, k] *
/// s[a, i + k]` for i in 0..N+1-w, the kernel sliding left to right.
pub fn conv1d_full_height(s: &ScoreMatrix, theta: &RealMatrix) -> Result<Vec<f64>> {
    if theta.rows() != s.models() {
        return Err(Error::dim("conv kernel height", s.models(), theta.rows()));
    }
    let w = theta.cols();
    let n = s.places();
    if w > n || w == 0 {
        return Err(Error::config(format!(
            "conv kernel width {w} must be in 1..={n}"
        )));
    }
    let l = n + 1 - w;
    let mut t = vec![0.0; l];
    for a in 0..s.models() {
        let row = s.row(a);
        let krow = theta.row(a);
        for (i, slot) in t.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &kv) in krow.iter().enumerate() {
                acc += kv * row[i + k];
            }
            *slot += acc;
        }
    }
    Ok(t)
}

/// Everything one merger forward pass produces.
#[derive(Debug, Clone)]
pub struct MergerOutput {
    /// Convolution output before the activation, length N + 1 - w.
    pub pre_activation: Vec<f64>,
    /// Final per-place scores, length N.
    pub scores: Vec<f64>,
    pub predicted: usize,
    /// Max softmax over the final scores, in (0, 1].
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub struct MergerNet {
    models: usize,
    width: usize,
    places: usize,
    theta: RealMatrix, // q x w
    dense: RealMatrix, // l x N
    dropout: f64,
}

impl MergerNet {
    /// Uniform init on [-s, +s] with s = 1/sqrt(fan-in) for each tensor.
    pub fn init(models: usize, width: usize, places: usize, dropout: f64, seed: u64) -> Result<Self> {
        if models == 0 {
            return Err(Error::config("merger needs at least one model row"));
        }
        if width == 0 || width > places {
            return Err(Error::config(format!(
                "merger kernel width {width} must be in 1..={places}"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::config(format!(
                "merger dropout must be in [0, 1), got {dropout}"
            )));
        }
        let l = places + 1 - width;
        let mut rng = Rng::new(seed);
        let ts = 1.0 / ((models * width) as f64).sqrt();
        let theta = RealMatrix::from_vec(
            models,
            width,
            (0..models * width).map(|_| rng.uniform(-ts, ts)).collect(),
        );
        let fs = 1.0 / (l as f64).sqrt();
        let dense = RealMatrix::from_vec(
            l,
            places,
            (0..l * places).map(|_| rng.uniform(-fs, fs)).collect(),
        );
        Ok(MergerNet {
            models,
            width,
            places,
            theta,
            dense,
            dropout,
        })
    }

    pub fn models(&self) -> usize {
        self.models
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn places(&self) -> usize {
        self.places
    }

    /// Convolution output length l = N + 1 - w.
    pub fn conv_len(&self) -> usize {
        self.places + 1 - self.width
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn theta(&self) -> &RealMatrix {
        &self.theta
    }

    pub fn dense(&self) -> &RealMatrix {
        &self.dense
    }

    pub(crate) fn from_parts(
        models: usize,
        width: usize,
        places: usize,
        dropout: f64,
        theta: RealMatrix,
        dense: RealMatrix,
    ) -> Result<Self> {
        if width == 0 || width > places {
            return Err(Error::config(format!(
                "merger kernel width {width} must be in 1..={places}"
            )));
        }
        if theta.rows() != models || theta.cols() != width {
            return Err(Error::dim(
                "merger kernel shape",
                models * width,
                theta.rows() * theta.cols(),
            ));
        }
        let l = places + 1 - width;
        if dense.rows() != l || dense.cols() != places {
            return Err(Error::dim(
                "merger dense shape",
                l * places,
                dense.rows() * dense.cols(),
            ));
        }
        Ok(MergerNet {
            models,
            width,
            places,
            theta,
            dense,
            dropout,
        })
    }

    fn check_input(&self, s: &ScoreMatrix) -> Result<()> {
        if s.models() != self.models {
            return Err(Error::dim("score matrix rows", self.models, s.models()));
        }
        if s.places() != self.places {
            return Err(Error::dim("score matrix cols", self.places, s.places()));
        }
        Ok(())
    }

    /// Forward pass with an explicit dropout mask over the hidden vector
    /// (None means no dropout). The mask holds the multipliers, so the
    /// backward pass can reuse it verbatim.
    pub fn forward_masked(&self, s: &ScoreMatrix, mask: Option<&[f64]>) -> Result<MergerOutput> {
        self.check_input(s)?;
        let t = conv1d_full_height(s, &self.theta)?;
        let l = t.len();
        if let Some(m) = mask {
            if m.len() != l {
                return Err(Error::dim("merger dropout mask", l, m.len()));
            }
        }
        let mut hidden: Vec<f64> = t.iter().map(|&v| v.max(0.0)).collect();
        if let Some(m) = mask {
            for (h, &mv) in hidden.iter_mut().zip(m) {
                *h *= mv;
            }
        }
        let mut scores = vec![0.0; self.places];
        for (i, &h) in hidden.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            let row = self.dense.row(i);
            for (slot, &f) in scores.iter_mut().zip(row) {
                *slot += h * f;
            }
        }
        let predicted = argmax(&scores);
        let confidence = nn::softmax(&scores)[predicted];
        Ok(MergerOutput {
            pre_activation: t,
            scores,
            predicted,
            confidence,
        })
    }

    /// Forward pass; at training time a fresh dropout mask is drawn from
    /// `rng` and applied to the ReLU output.
    pub fn forward(&self, s: &ScoreMatrix, training: bool, rng: &mut Rng) -> Result<MergerOutput> {
        if training && self.dropout > 0.0 {
            let mask = nn::dropout_mask(self.conv_len(), self.dropout, rng);
            self.forward_masked(s, Some(&mask))
        } else {
            self.forward_masked(s, None)
        }
    }

    /// Inference-mode prediction: place and softmax confidence.
    pub fn predict(&self, s: &ScoreMatrix) -> Result<(usize, f64)> {
        let out = self.forward_masked(s, None)?;
        Ok((out.predicted, out.confidence))
    }

    /// Loss plus exact gradients for both tensors, under an optional fixed
    /// dropout mask. Shared by training and by the finite-difference tests.
    pub fn loss_and_grads(
        &self,
        s: &ScoreMatrix,
        label: usize,
        mask: Option<&[f64]>,
    ) -> Result<(f64, RealMatrix, RealMatrix)> {
        let out = self.forward_masked(s, mask)?;
        let (loss, go) = nn::softmax_ce(&out.scores, label)?;
        let l = self.conv_len();

        // Recover the masked hidden vector from t and the mask.
        let keep = |i: usize| mask.map_or(1.0, |m| m[i]);
        let hidden: Vec<f64> = (0..l)
            .map(|i| out.pre_activation[i].max(0.0) * keep(i))
            .collect();

        let mut grad_dense = RealMatrix::zeros(l, self.places);
        for i in 0..l {
            if hidden[i] == 0.0 {
                continue;
            }
            let gd = &mut grad_dense.as_mut_slice()[i * self.places..(i + 1) * self.places];
            for (slot, &g) in gd.iter_mut().zip(&go) {
                *slot = hidden[i] * g;
            }
        }

        // dL/dt: back through the dense layer, the mask and the ReLU gate.
        let mut gt = vec![0.0; l];
        for (i, slot) in gt.iter_mut().enumerate() {
            if out.pre_activation[i] <= 0.0 {
                continue;
            }
            let row = self.dense.row(i);
            let acc: f64 = row.iter().zip(&go).map(|(&f, &g)| f * g).sum();
            *slot = acc * keep(i);
        }

        let mut grad_theta = RealMatrix::zeros(self.models, self.width);
        for a in 0..self.models {
            let srow = s.row(a);
            let grow = &mut grad_theta.as_mut_slice()[a * self.width..(a + 1) * self.width];
            for (k, slot) in grow.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, &g) in gt.iter().enumerate() {
                    acc += g * srow[i + k];
                }
                *slot = acc;
            }
        }
        Ok((loss, grad_theta, grad_dense))
    }

    /// Trains on (score matrix, true place) pairs: shuffled per-sample
    /// steps of forward with dropout, softmax cross-entropy and one Adam
    /// step on both tensors. Returns mean loss per epoch.
    pub fn train(
        &mut self,
        samples: &[(ScoreMatrix, usize)],
        epochs: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        for (s, label) in samples {
            self.check_input(s)?;
            if *label >= self.places {
                return Err(Error::dim("merger training label", self.places, *label));
            }
        }
        let mut history = Vec::with_capacity(epochs);
        if epochs == 0 || samples.is_empty() {
            return Ok(history);
        }
        let mut rng = Rng::new(seed);
        let mut adam_theta = AdamState::new(self.models * self.width);
        let mut adam_dense = AdamState::new(self.conv_len() * self.places);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for _ in 0..epochs {
            rng.shuffle(&mut order);
            let mut loss_sum = 0.0;
            for &idx in &order {
                let (s, label) = &samples[idx];
                let mask = if self.dropout > 0.0 {
                    Some(nn::dropout_mask(self.conv_len(), self.dropout, &mut rng))
                } else {
                    None
                };
                let (loss, g_theta, g_dense) = self.loss_and_grads(s, *label, mask.as_deref())?;
                loss_sum += loss;
                adam_theta.update(self.theta.as_mut_slice(), g_theta.as_slice())?;
                adam_dense.update(self.dense.as_mut_slice(), g_dense.as_slice())?;
            }
            history.push(loss_sum / samples.len() as f64);
        }
        debug_assert!(self.theta.is_finite() && self.dense.is_finite());
        Ok(history)
    }

    /// Inference accuracy over labelled score matrices.
    pub fn accuracy(&self, samples: &[(ScoreMatrix, usize)]) -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for (s, label) in samples {
            if self.predict(s)?.0 == *label {
                correct += 1;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }

    /// Rounds both tensors to f32-representable values. Called when a
    /// system is frozen so that the f32 on-disk format round-trips
    /// bit-exactly.
    pub fn round_to_f32(&mut self) {
        for v in self.theta.as_mut_slice() {
            *v = *v as f32 as f64;
        }
        for v in self.dense.as_mut_slice() {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_scores(models: usize, places: usize, rng: &mut Rng) -> ScoreMatrix {
        ScoreMatrix::from_raw(
            models,
            places,
            (0..models * places).map(|_| rng.uniform(-2.0, 2.0)).collect(),
        )
        .unwrap()
    }

    /// Literal double-loop evaluation of the convolution definition.
    fn naive_conv(s: &ScoreMatrix, theta: &RealMatrix) -> Vec<f64> {
        let l = s.places() + 1 - theta.cols();
        (0..l)
            .map(|i| {
                let mut acc = 0.0;
                for a in 0..s.models() {
                    for k in 0..theta.cols() {
                        acc += theta.get(a, k) * s.get(a, i + k);
                    }
                }
                acc
            })
            .collect()
    }

    #[test]
    fn output_length_follows_the_shape_law() {
        let s = ScoreMatrix::from_raw(2, 1000, vec![0.0; 2000]).unwrap();
        let theta = RealMatrix::zeros(2, 4);
        assert_eq!(conv1d_full_height(&s, &theta).unwrap().len(), 997);
    }

    #[test]
    fn width_one_all_ones_kernel_is_column_sum() {
        let mut rng = Rng::new(4);
        let s = random_scores(3, 9, &mut rng);
        let theta = RealMatrix::from_vec(3, 1, vec![1.0; 3]);
        let t = conv1d_full_height(&s, &theta).unwrap();
        for (i, &v) in t.iter().enumerate() {
            let col: f64 = (0..3).map(|a| s.get(a, i)).sum();
            assert!((v - col).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_matches_naive_double_loop() {
        let mut rng = Rng::new(17);
        let s = random_scores(2, 9, &mut rng);
        let theta = RealMatrix::from_vec(2, 4, (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let fast = conv1d_full_height(&s, &theta).unwrap();
        let slow = naive_conv(&s, &theta);
        for (f, sl) in fast.iter().zip(&slow) {
            assert!((f - sl).abs() <= 1e-12 * sl.abs().max(1.0));
        }
    }

    #[test]
    fn conv_width_equal_places_is_one_inner_product() {
        let mut rng = Rng::new(23);
        let s = random_scores(2, 6, &mut rng);
        let theta = RealMatrix::from_vec(2, 6, (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let t = conv1d_full_height(&s, &theta).unwrap();
        assert_eq!(t.len(), 1);
        let inner: f64 = (0..2)
            .flat_map(|a| (0..6).map(move |k| (a, k)))
            .map(|(a, k)| theta.get(a, k) * s.get(a, k))
            .sum();
        assert!((t[0] - inner).abs() < 1e-12);
    }

    #[test]
    fn conv_is_linear_in_the_input() {
        let mut rng = Rng::new(31);
        let s1 = random_scores(2, 12, &mut rng);
        let s2 = random_scores(2, 12, &mut rng);
        let theta = RealMatrix::from_vec(2, 3, (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let (alpha, beta) = (rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
        let mixed_data: Vec<f64> = s1
            .data
            .iter()
            .zip(&s2.data)
            .map(|(&x, &y)| alpha * x + beta * y)
            .collect();
        let mixed = ScoreMatrix::from_raw(2, 12, mixed_data).unwrap();
        let t1 = conv1d_full_height(&s1, &theta).unwrap();
        let t2 = conv1d_full_height(&s2, &theta).unwrap();
        let tm = conv1d_full_height(&mixed, &theta).unwrap();
        for i in 0..tm.len() {
            assert!((tm[i] - (alpha * t1[i] + beta * t2[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn oversized_kernel_is_a_config_error() {
        let s = ScoreMatrix::from_raw(1, 3, vec![0.0; 3]).unwrap();
        let theta = RealMatrix::zeros(1, 4);
        assert!(conv1d_full_height(&s, &theta).is_err());
        assert!(MergerNet::init(1, 4, 3, 0.0, 0).is_err());
    }

    #[test]
    fn zero_kernel_predicts_place_zero_by_tie_rule() {
        let mut net = MergerNet::init(2, 4, 10, 0.0, 1).unwrap();
        for v in net.theta.as_mut_slice() {
            *v = 0.0;
        }
        let mut rng = Rng::new(2);
        let s = random_scores(2, 10, &mut rng);
        let out = net.forward(&s, false, &mut rng).unwrap();
        assert!(out.pre_activation.iter().all(|&t| t == 0.0));
        assert!(out.scores.iter().all(|&o| o == 0.0));
        assert_eq!(out.predicted, 0);
        assert!((out.confidence - 0.1).abs() < 1e-12);
    }

    #[test]
    fn dominant_column_wins_with_aligned_weights() {
        // Make place 5's column huge in both rows, with summing kernel and
        // an identity-like dense layer (each conv tap votes its own place).
        let mut net = MergerNet::init(2, 1, 8, 0.0, 3).unwrap();
        for v in net.theta.as_mut_slice() {
            *v = 1.0;
        }
        for v in net.dense.as_mut_slice() {
            *v = 0.0;
        }
        for i in 0..8 {
            net.dense.set(i, i, 1.0);
        }
        let mut data = vec![0.1; 16];
        data[5] = 50.0;
        data[8 + 5] = 50.0;
        let s = ScoreMatrix::from_raw(2, 8, data).unwrap();
        let (place, conf) = net.predict(&s).unwrap();
        assert_eq!(place, 5);
        assert!(conf > 0.99);
    }

    #[test]
    fn forward_matches_reference_evaluation() {
        // From-scratch re-evaluation of conv + ReLU + dense, structured
        // differently from the implementation.
        let mut rng = Rng::new(55);
        let net = MergerNet::init(3, 4, 11, 0.0, 90).unwrap();
        let s = random_scores(3, 11, &mut rng);
        let out = net.forward_masked(&s, None).unwrap();
        let l = 11 + 1 - 4;
        for n in 0..11 {
            let mut expect = 0.0;
            for i in 0..l {
                let mut t = 0.0;
                for a in 0..3 {
                    for k in 0..4 {
                        t += net.theta().get(a, k) * s.get(a, i + k);
                    }
                }
                expect += t.max(0.0) * net.dense().get(i, n);
            }
            assert!(
                (out.scores[n] - expect).abs() <= 1e-9 * expect.abs().max(1.0),
                "place {n}"
            );
        }
    }

    #[test]
    fn zero_epochs_leaves_net_unchanged() {
        let mut net = MergerNet::init(2, 2, 5, 0.3, 7).unwrap();
        let before = net.clone();
        let mut rng = Rng::new(0);
        let samples = vec![(random_scores(2, 5, &mut rng), 3usize)];
        net.train(&samples, 0, 1).unwrap();
        assert_eq!(net.theta.as_slice(), before.theta.as_slice());
        assert_eq!(net.dense.as_slice(), before.dense.as_slice());
    }

    #[test]
    fn separable_samples_reach_full_training_accuracy() {
        // Samples where the true label's column dominates in both rows are
        // linearly separable for the merger.
        let mut rng = Rng::new(12);
        let n = 20;
        let samples: Vec<(ScoreMatrix, usize)> = (0..50)
            .map(|i| {
                let label = i % n;
                let mut data: Vec<f64> = (0..2 * n).map(|_| rng.uniform(-0.5, 0.5)).collect();
                data[label] = 3.0 + rng.next_f64();
                data[n + label] = 3.0 + rng.next_f64();
                (ScoreMatrix::from_raw(2, n, data).unwrap(), label)
            })
            .collect();
        let mut net = MergerNet::init(2, 4, n, 0.3, 5).unwrap();
        net.train(&samples, 100, 99).unwrap();
        let acc = net.accuracy(&samples).unwrap();
        assert_eq!(acc, 1.0, "training accuracy {acc}");
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let mut rng = Rng::new(71);
        let net = MergerNet::init(2, 4, 9, 0.0, 41).unwrap();
        let s = random_scores(2, 9, &mut rng);
        let label = 4;
        let (_, g_theta, g_dense) = net.loss_and_grads(&s, label, None).unwrap();
        let h = 1e-5;

        let mut check = |which: &str, rows: usize, cols: usize, analytic: &RealMatrix| {
            let mut num = 0.0;
            let mut den = 0.0;
            for r in 0..rows {
                for c in 0..cols {
                    let eval = |delta: f64| {
                        let mut copy = net.clone();
                        let tensor = if which == "theta" {
                            &mut copy.theta
                        } else {
                            &mut copy.dense
                        };
                        let old = tensor.get(r, c);
                        tensor.set(r, c, old + delta);
                        copy.loss_and_grads(&s, label, None).unwrap().0
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let d = analytic.get(r, c) - fd;
                    num += d * d;
                    den += fd * fd;
                }
            }
            let rel = (num / den.max(1e-300)).sqrt();
            assert!(rel < 1e-4, "{which}: rel err {rel}");
        };
        check("theta", 2, 4, &g_theta);
        check("dense", 6, 9, &g_dense);
    }

    #[test]
    fn uniform_scores_give_uniform_confidence() {
        let net = MergerNet::init(1, 1, 7, 0.0, 8).unwrap();
        let s = ScoreMatrix::from_raw(1, 7, vec![0.0; 7]).unwrap();
        let (place, conf) = net.predict(&s).unwrap();
        assert_eq!(place, 0);
        assert!((conf - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn predicted_invariant_under_positive_affine_on_scores() {
        let mut rng = Rng::new(13);
        for _ in 0..20 {
            let o: Vec<f64> = (0..15).map(|_| rng.uniform(-4.0, 4.0)).collect();
            let scale = rng.uniform(0.01, 12.0);
            let shift = rng.uniform(-50.0, 50.0);
            let mapped: Vec<f64> = o.iter().map(|&v| scale * v + shift).collect();
            assert_eq!(argmax(&o), argmax(&mapped));
        }
    }
}
