//! Evaluation: tolerance-based match correctness, precision-recall curves
//! with trapezoidal AUC, and wall-clock inference benchmarking.
//!
//! Place recognition is heavily unbalanced (one correct place among N), so
//! results are summarized as a precision-recall sweep over the prediction
//! confidence rather than accuracy alone.

use std::time::Instant;

use rayon::prelude::*;

use crate::data::Traversal;
use crate::error::{Error, Result};
use crate::gray::GrayImage;
use crate::model_file;
use crate::pipeline::{PredictScratch, VprSystem};

/// One evaluated query: predicted place, sweep confidence and whether the
/// prediction landed within the ground-truth tolerance window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub query_frame: usize,
    pub predicted_place: usize,
    pub confidence: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    /// Confidence threshold that produced this point.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision-recall sweep with its area under the curve. `degenerate` is
/// set when no result is correct, in which case recall is undefined and
/// the AUC is reported as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub auc: f64,
    pub degenerate: bool,
}

impl PrCurve {
    /// CSV rows `threshold,precision,recall`, one per sweep step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
        }
        out
    }
}

/// Sweeps a confidence threshold over the results, highest first. Results
/// tied on confidence enter in one step so the curve does not depend on
/// their order. At each step precision is correct-accepted over accepted
/// and recall is correct-accepted over all-correct; the area is the
/// trapezoid over recall with the curve extended to recall zero at the
/// first point's precision.
pub fn pr_curve(results: &[MatchResult]) -> Result<PrCurve> {
    if results.is_empty() {
        return Err(Error::config("pr_curve needs at least one result"));
    }
    if results.iter().any(|r| !r.confidence.is_finite()) {
        return Err(Error::config("pr_curve confidences must be finite"));
    }
    let mut sorted: Vec<&MatchResult> = results.iter().collect();
    sorted.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());
    let total_correct = sorted.iter().filter(|r| r.correct).count();

    let mut points = Vec::new();
    let mut accepted = 0usize;
    let mut correct_accepted = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].confidence;
        // Everything tied at this confidence crosses the threshold together.
        while i < sorted.len() && sorted[i].confidence == threshold {
            accepted += 1;
            if sorted[i].correct {
                correct_accepted += 1;
            }
            i += 1;
        }
        let precision = correct_accepted as f64 / accepted as f64;
        let recall = if total_correct == 0 {
            0.0
        } else {
            correct_accepted as f64 / total_correct as f64
        };
        points.push(PrPoint {
            threshold,
            precision,
            recall,
        });
    }

    if total_correct == 0 {
        return Ok(PrCurve {
            points,
            auc: 0.0,
            degenerate: true,
        });
    }

    let mut auc = 0.0;
    let mut prev_recall = 0.0;
    let mut prev_precision = points[0].precision;
    for p in &points {
        auc += (p.recall - prev_recall) * 0.5 * (p.precision + prev_precision);
        prev_recall = p.recall;
        prev_precision = p.precision;
    }
    Ok(PrCurve {
        points,
        auc,
        degenerate: false,
    })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub pr: PrCurve,
    pub accuracy: f64,
    pub results: Vec<MatchResult>,
}

impl Evaluation {
    /// Key/value summary lines (`summary.kv`).
    pub fn to_kv(&self, tolerance: usize) -> String {
        format!(
            "auc={}\naccuracy={}\nqueries={}\ntolerance={}\ndegenerate={}\n",
            self.pr.auc,
            self.accuracy,
            self.results.len(),
            tolerance,
            self.pr.degenerate
        )
    }
}

/// Evaluates a system against an aligned query traversal: query frame i has
/// ground-truth place i, and a prediction within `tolerance` frames counts
/// as correct. The reference traversal the system was trained on is taken
/// along to validate the alignment.
pub fn evaluate(
    system: &VprSystem,
    reference: &Traversal,
    query: &Traversal,
    tolerance: usize,
) -> Result<Evaluation> {
    if reference.len() != system.places() {
        return Err(Error::dim(
            "reference traversal length",
            system.places(),
            reference.len(),
        ));
    }
    if query.len() != system.places() {
        return Err(Error::dim(
            "query traversal length",
            system.places(),
            query.len(),
        ));
    }
    let results = match_results(system, query.frames(), tolerance)?;
    let accuracy = results.iter().filter(|r| r.correct).count() as f64 / results.len() as f64;
    let pr = pr_curve(&results)?;
    Ok(Evaluation {
        pr,
        accuracy,
        results,
    })
}

/// Per-frame match results with ground truth = frame index. Queries are
/// independent, so they run in parallel; the output order is by frame
/// index regardless of scheduling.
pub fn match_results(
    system: &VprSystem,
    frames: &[GrayImage],
    tolerance: usize,
) -> Result<Vec<MatchResult>> {
    frames
        .par_iter()
        .enumerate()
        .map(|(idx, frame)| {
            let (predicted, confidence, _) = system.predict(frame)?;
            Ok(MatchResult {
                query_frame: idx,
                predicted_place: predicted,
                confidence,
                correct: predicted.abs_diff(idx) <= tolerance,
            })
        })
        .collect()
}

/// Latency and size statistics for the full predict path.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub frames_per_second: f64,
    pub model_size_bytes: u64,
    pub warmup: usize,
    pub iters: usize,
}

impl BenchReport {
    pub fn to_kv(&self) -> String {
        format!(
            "mean_ms={}\nmedian_ms={}\np99_ms={}\nfps={}\nmodel_size_bytes={}\nwarmup={}\niters={}\n",
            self.mean_ms,
            self.median_ms,
            self.p99_ms,
            self.frames_per_second,
            self.model_size_bytes,
            self.warmup,
            self.iters
        )
    }

    pub fn to_table(&self) -> String {
        format!(
            "inference latency over {} iterations ({} warmup)\n\
             mean   {:>9.4} ms\nmedian {:>9.4} ms\np99    {:>9.4} ms\n\
             fps    {:>9.1}\nmodel  {:>9} bytes\n",
            self.iters, self.warmup, self.mean_ms, self.median_ms, self.p99_ms,
            self.frames_per_second, self.model_size_bytes
        )
    }
}

/// Times the full predict path (all classifier forwards plus the merger)
/// one query at a time on the calling thread. Warmup iterations are run
/// and discarded first.
pub fn bench_inference(
    system: &VprSystem,
    images: &[GrayImage],
    warmup: usize,
    iters: usize,
) -> Result<BenchReport> {
    if iters == 0 {
        return Err(Error::config("bench needs at least one iteration"));
    }
    if images.is_empty() {
        return Err(Error::config("bench needs at least one image"));
    }
    let mut scratch = PredictScratch::new(system.models(), system.places());
    for w in 0..warmup {
        let img = &images[w % images.len()];
        std::hint::black_box(system.predict_into(img, &mut scratch)?);
    }
    let mut samples_ms = Vec::with_capacity(iters);
    for i in 0..iters {
        let img = &images[i % images.len()];
        let start = Instant::now();
        std::hint::black_box(system.predict_into(img, &mut scratch)?);
        samples_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    samples_ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean_ms = samples_ms.iter().sum::<f64>() / samples_ms.len() as f64;
    let median_ms = samples_ms[samples_ms.len() / 2];
    let p99_idx = ((samples_ms.len() as f64 * 0.99).ceil() as usize).clamp(1, samples_ms.len()) - 1;
    Ok(BenchReport {
        mean_ms,
        median_ms,
        p99_ms: samples_ms[p99_idx],
        frames_per_second: 1000.0 / mean_ms,
        model_size_bytes: model_file::serialized_len(system),
        warmup,
        iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(confidence: f64, correct: bool) -> MatchResult {
        MatchResult {
            query_frame: 0,
            predicted_place: 0,
            confidence,
            correct,
        }
    }

    #[test]
    fn all_correct_gives_unit_auc() {
        let results: Vec<MatchResult> =
            (0..5).map(|i| result(1.0 - 0.1 * i as f64, true)).collect();
        let curve = pr_curve(&results).unwrap();
        assert!(!curve.degenerate);
        assert!((curve.auc - 1.0).abs() < 1e-12);
        assert!(curve.points.iter().all(|p| p.precision == 1.0));
    }

    #[test]
    fn all_incorrect_is_degenerate_with_zero_auc() {
        let results: Vec<MatchResult> =
            (0..4).map(|i| result(0.9 - 0.1 * i as f64, false)).collect();
        let curve = pr_curve(&results).unwrap();
        assert!(curve.degenerate);
        assert_eq!(curve.auc, 0.0);
    }

    #[test]
    fn six_sample_curve_matches_hand_computed_value() {
        // Correct flags [1, 1, 0, 1, 0, 0] by descending confidence.
        // Sweep: (P, R) = (1, 1/3), (1, 2/3), (2/3, 2/3), (3/4, 1),
        // (3/5, 1), (1/2, 1); extended to recall 0 at precision 1.
        // Trapezoids: 1/3 + 1/3 + 0 + (1/3)(2/3 + 3/4)/2 = 65/72.
        let flags = [true, true, false, true, false, false];
        let results: Vec<MatchResult> = flags
            .iter()
            .enumerate()
            .map(|(i, &c)| result(1.0 - 0.1 * i as f64, c))
            .collect();
        let curve = pr_curve(&results).unwrap();
        assert!(
            (curve.auc - 65.0 / 72.0).abs() < 1e-12,
            "auc = {}",
            curve.auc
        );
        assert_eq!(curve.points.len(), 6);
    }

    #[test]
    fn recall_is_monotone_and_bounds_hold() {
        let mut rng = crate::nn::Rng::new(5);
        let results: Vec<MatchResult> = (0..200)
            .map(|_| result(rng.next_f64(), rng.chance(0.4)))
            .collect();
        let curve = pr_curve(&results).unwrap();
        let mut prev = 0.0;
        for p in &curve.points {
            assert!((0.0..=1.0).contains(&p.precision));
            assert!((0.0..=1.0).contains(&p.recall));
            assert!(p.recall >= prev);
            prev = p.recall;
        }
        assert!((0.0..=1.0).contains(&curve.auc));
    }

    #[test]
    fn curve_invariant_under_monotone_confidence_transforms() {
        let mut rng = crate::nn::Rng::new(9);
        let results: Vec<MatchResult> = (0..100)
            .map(|_| result(rng.next_f64(), rng.chance(0.5)))
            .collect();
        let mapped: Vec<MatchResult> = results
            .iter()
            .map(|r| MatchResult {
                confidence: 3.0 * r.confidence + 10.0,
                ..*r
            })
            .collect();
        let a = pr_curve(&results).unwrap();
        let b = pr_curve(&mapped).unwrap();
        assert_eq!(a.auc, b.auc);
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert_eq!(pa.precision, pb.precision);
            assert_eq!(pa.recall, pb.recall);
        }
    }

    #[test]
    fn ties_collapse_into_one_step() {
        let results = vec![
            result(0.9, true),
            result(0.5, false),
            result(0.5, true),
            result(0.5, true),
            result(0.1, false),
        ];
        let curve = pr_curve(&results).unwrap();
        assert_eq!(curve.points.len(), 3);
        assert_eq!(curve.points[1].threshold, 0.5);
        assert!((curve.points[1].precision - 3.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn empty_results_are_rejected() {
        assert!(pr_curve(&[]).is_err());
    }
}
