//! Uncertainty metrics over posterior sample sets.
//!
//! A [`PosteriorSampleSet`] holds S function draws over N evaluation points
//! with C output channels. Conventions are pinned here and frozen by tests:
//! quantiles interpolate linearly on the (n-1)p index (the "type 7" rule, R's
//! default), variances use the unbiased n-1 estimator and sum over channels,
//! interval membership is inclusive at both ends, entropies are in nats, and
//! the in- vs out-of-distribution AUC uses midranks so ties count half.

use ndarray::{Array1, Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// What the channel axis of a sample set means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    /// Raw real-valued outputs.
    RegressionValues,
    /// Probabilities over classes: each draw at each point sums to one.
    ClassProbabilities,
    /// Pre-softmax class scores.
    Logits,
}

/// S posterior function draws at N points with C channels (S x N x C).
#[derive(Debug, Clone)]
pub struct PosteriorSampleSet<T> {
    samples: Array3<T>,
    kind: SampleKind,
}

impl<T: Scalar> PosteriorSampleSet<T> {
    pub fn new(samples: Array3<T>, kind: SampleKind) -> Result<Self> {
        let (s, n, c) = samples.dim();
        if s == 0 || n == 0 || c == 0 {
            return Err(Error::invalid(format!(
                "sample set must be nonempty in every axis, got {s}x{n}x{c}"
            )));
        }
        if let Some(idx) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric("posterior samples", Some(idx)));
        }
        if kind == SampleKind::ClassProbabilities {
            for si in 0..s {
                for ni in 0..n {
                    let mut total = 0.0;
                    for ci in 0..c {
                        let p = samples[(si, ni, ci)].to_f64c();
                        if !(-1e-9..=1.0 + 1e-9).contains(&p) {
                            return Err(Error::invalid(format!(
                                "class probability {p} out of [0,1] at draw {si}, point {ni}"
                            )));
                        }
                        total += p;
                    }
                    if (total - 1.0).abs() > 1e-6 {
                        return Err(Error::invalid(format!(
                            "class probabilities sum to {total} at draw {si}, point {ni}"
                        )));
                    }
                }
            }
        }
        Ok(Self { samples, kind })
    }

    /// S x N regression draws as an S x N x 1 set.
    pub fn from_regression_draws(draws: Array2<T>) -> Result<Self> {
        let (s, n) = draws.dim();
        let samples = draws
            .into_shape_with_order((s, n, 1))
            .map_err(|e| Error::invalid(format!("reshape regression draws: {e}")))?;
        Self::new(samples, SampleKind::RegressionValues)
    }

    pub fn kind(&self) -> SampleKind {
        self.kind
    }

    pub fn n_draws(&self) -> usize {
        self.samples.dim().0
    }

    pub fn n_points(&self) -> usize {
        self.samples.dim().1
    }

    pub fn n_channels(&self) -> usize {
        self.samples.dim().2
    }

    pub fn samples(&self) -> &Array3<T> {
        &self.samples
    }

    /// Row-wise stable softmax turning a logit set into class probabilities.
    pub fn softmax(&self) -> Result<Self> {
        if self.kind != SampleKind::Logits {
            return Err(Error::invalid("softmax expects a logit sample set"));
        }
        let (s, n, c) = self.samples.dim();
        let mut out = self.samples.clone();
        for si in 0..s {
            for ni in 0..n {
                let mut row_max = out[(si, ni, 0)];
                for ci in 1..c {
                    if out[(si, ni, ci)] > row_max {
                        row_max = out[(si, ni, ci)];
                    }
                }
                let mut total = T::zero();
                for ci in 0..c {
                    let e = (out[(si, ni, ci)] - row_max).exp();
                    out[(si, ni, ci)] = e;
                    total += e;
                }
                for ci in 0..c {
                    out[(si, ni, ci)] = out[(si, ni, ci)] / total;
                }
            }
        }
        Self::new(out, SampleKind::ClassProbabilities)
    }

    /// Per-point, per-channel mean over draws (N x C).
    pub fn mean_prediction(&self) -> Array2<T> {
        self.samples.mean_axis(Axis(0)).expect("draw axis is nonempty")
    }

    /// Per-point, per-channel unbiased variance over draws (N x C).
    /// Needs at least two draws.
    pub fn channel_variances(&self) -> Result<Array2<T>> {
        let (s, n, c) = self.samples.dim();
        if s < 2 {
            return Err(Error::invalid(
                "sample variance needs at least two draws",
            ));
        }
        let mean = self.mean_prediction();
        let mut out = Array2::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                let mut acc = T::zero();
                for si in 0..s {
                    let d = self.samples[(si, ni, ci)] - mean[(ni, ci)];
                    acc += d * d;
                }
                out[(ni, ci)] = acc / T::cast((s - 1) as f64);
            }
        }
        Ok(out)
    }

    /// Square roots of [`variance_score`].
    pub fn predictive_std(&self) -> Result<Array1<T>> {
        Ok(variance_score(self)?.mapv(T::sqrt))
    }
}

/// Interval report: mean width, inclusive hit fraction, and the level used.
#[derive(Debug, Clone)]
pub struct CiReport<T> {
    pub mean_width: f64,
    pub ci_correct: f64,
    pub level: f64,
    /// Per-point bounds backing the summary (each N x C).
    pub lower: Array2<T>,
    pub upper: Array2<T>,
}

/// Central interval at `level` per point via type-7 quantiles over draws;
/// `ci_correct` counts targets inside the interval, boundaries included.
pub fn confidence_intervals<T: Scalar>(
    set: &PosteriorSampleSet<T>,
    y_true: &Array2<T>,
    level: f64,
) -> Result<CiReport<T>> {
    if set.kind() != SampleKind::RegressionValues {
        return Err(Error::invalid(
            "confidence_intervals expects regression samples",
        ));
    }
    if set.n_draws() < 2 {
        return Err(Error::invalid(
            "confidence_intervals needs at least two draws",
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!(
            "interval level must lie in (0, 1), got {level}"
        )));
    }
    let (bounds_lower, bounds_upper) = interval_bounds(set, level);
    if y_true.dim() != bounds_lower.dim() {
        return Err(Error::shape(
            "confidence_intervals",
            format!("targets {}x{}", bounds_lower.nrows(), bounds_lower.ncols()),
            format!("{}x{}", y_true.nrows(), y_true.ncols()),
        ));
    }
    let total = y_true.len();
    let hits = y_true
        .iter()
        .zip(bounds_lower.iter())
        .zip(bounds_upper.iter())
        .filter(|((t, lo), up)| **t >= **lo && **t <= **up)
        .count();
    let width_sum: f64 = bounds_upper
        .iter()
        .zip(bounds_lower.iter())
        .map(|(u, l)| (*u - *l).to_f64c())
        .sum();
    Ok(CiReport {
        mean_width: width_sum / total as f64,
        ci_correct: hits as f64 / total as f64,
        level,
        lower: bounds_lower,
        upper: bounds_upper,
    })
}

/// Lower/upper type-7 quantile bounds (each N x C) at the given level.
pub fn interval_bounds<T: Scalar>(
    set: &PosteriorSampleSet<T>,
    level: f64,
) -> (Array2<T>, Array2<T>) {
    let (s, n, c) = set.samples().dim();
    // Rank positions for the central interval, in type-7 form (n-1)p with
    // p = (1 -/+ level)/2. Factoring out (n-1) first keeps the pair exactly
    // symmetric (they sum to n-1) and reproduces hand-computed examples
    // like integer draws at level 0.95 without roundoff.
    let span = (s - 1) as f64;
    let scaled = span * level;
    let h_lo = (span - scaled) / 2.0;
    let h_hi = (span + scaled) / 2.0;
    let mut lower = Array2::zeros((n, c));
    let mut upper = Array2::zeros((n, c));
    let mut buf: Vec<T> = Vec::with_capacity(s);
    for ni in 0..n {
        for ci in 0..c {
            buf.clear();
            buf.extend((0..s).map(|si| set.samples()[(si, ni, ci)]));
            buf.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
            lower[(ni, ci)] = value_at_rank(&buf, h_lo);
            upper[(ni, ci)] = value_at_rank(&buf, h_hi);
        }
    }
    (lower, upper)
}

/// Per-point sample variance (unbiased, n-1) summed over channels,
/// length N. Needs at least two draws.
pub fn variance_score<T: Scalar>(set: &PosteriorSampleSet<T>) -> Result<Array1<T>> {
    Ok(set.channel_variances()?.sum_axis(Axis(1)))
}

/// Mean over points of the entropy (nats) of the mean class probabilities.
pub fn mean_entropy<T: Scalar>(set: &PosteriorSampleSet<T>) -> Result<f64> {
    if set.kind() != SampleKind::ClassProbabilities {
        return Err(Error::invalid(
            "mean_entropy is only defined for class-probability samples",
        ));
    }
    let mean = set.mean_prediction();
    let (n, c) = mean.dim();
    let mut total = 0.0;
    for ni in 0..n {
        let mut h = 0.0;
        for ci in 0..c {
            let p = mean[(ni, ci)].to_f64c();
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        total += h;
    }
    Ok(total / n as f64)
}

/// AUC plus the ROC polyline behind it.
#[derive(Debug, Clone)]
pub struct OodReport {
    /// P(ood score > in score) + half the tie probability.
    pub auc: f64,
    /// (false positive rate, true positive rate) from (0,0) to (1,1),
    /// non-decreasing in both coordinates; trapezoidal area equals `auc`
    /// up to round-off.
    pub roc_points: Vec<(f64, f64)>,
}

/// Separability of two uncertainty-score samples under the "large score means
/// out-of-distribution" detector. Swapping the argument lists complements the
/// AUC exactly: the two values always sum to 1.0 bit-for-bit.
pub fn ood_auc<T: Scalar>(in_scores: &[T], ood_scores: &[T]) -> Result<OodReport> {
    if in_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::invalid("ood_auc needs nonempty score lists"));
    }
    if in_scores.iter().chain(ood_scores).any(|v| !v.is_finite()) {
        return Err(Error::numeric("ood_auc scores", None));
    }
    let mut inside: Vec<f64> = in_scores.iter().map(|v| v.to_f64c()).collect();
    let mut outside: Vec<f64> = ood_scores.iter().map(|v| v.to_f64c()).collect();
    inside.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    outside.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    // Integer count of 2*wins + ties via a two-pointer sweep, so the
    // complement identity holds exactly.
    let mut twice_wins_plus_ties: u128 = 0;
    let mut below = 0usize; // in-scores strictly below the current ood score
    let mut tied_upto = 0usize; // in-scores <= current ood score
    for &o in &outside {
        while below < inside.len() && inside[below] < o {
            below += 1;
        }
        if tied_upto < below {
            tied_upto = below;
        }
        while tied_upto < inside.len() && inside[tied_upto] <= o {
            tied_upto += 1;
        }
        twice_wins_plus_ties += (below + tied_upto) as u128;
    }
    let denom: u128 = 2 * inside.len() as u128 * outside.len() as u128;
    let canonical = twice_wins_plus_ties.min(denom - twice_wins_plus_ties);
    let q = canonical as f64 / denom as f64;
    let auc = if twice_wins_plus_ties * 2 <= denom { q } else { 1.0 - q };
    Ok(OodReport {
        auc,
        roc_points: roc_points(&inside, &outside),
    })
}

/// Threshold sweep over the pooled distinct scores; inputs ascending.
fn roc_points(inside: &[f64], outside: &[f64]) -> Vec<(f64, f64)> {
    let mut thresholds: Vec<f64> = inside.iter().chain(outside).cloned().collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    thresholds.dedup();
    let n_in = inside.len() as f64;
    let n_ood = outside.len() as f64;
    let mut points = vec![(0.0, 0.0)];
    for t in thresholds {
        let fpr = inside.iter().filter(|v| **v >= t).count() as f64 / n_in;
        let tpr = outside.iter().filter(|v| **v >= t).count() as f64 / n_ood;
        points.push((fpr, tpr));
    }
    if *points.last().expect("nonempty") != (1.0, 1.0) {
        points.push((1.0, 1.0));
    }
    points
}

/// Agreement between two posterior sample sets' uncertainty profiles.
#[derive(Debug, Clone)]
pub struct OracleComparison {
    /// Pearson correlation of per-point stds over the usable points.
    pub std_correlation: f64,
    /// Mean |std_a - std_b| over all points.
    pub mean_abs_std_gap: f64,
    pub n_used: usize,
    /// Points dropped from the correlation because either side had zero
    /// spread.
    pub n_excluded: usize,
}

/// Compares per-point predictive stds: Pearson correlation (zero-spread
/// points excluded, with the count reported) and the mean absolute gap over
/// all points.
pub fn oracle_compare<T: Scalar>(
    set_a: &PosteriorSampleSet<T>,
    set_b: &PosteriorSampleSet<T>,
) -> Result<OracleComparison> {
    if set_a.n_points() != set_b.n_points() {
        return Err(Error::shape(
            "oracle_compare",
            format!("{} points", set_a.n_points()),
            format!("{} points", set_b.n_points()),
        ));
    }
    let std_a = set_a.predictive_std()?.mapv(|v| v.to_f64c());
    let std_b = set_b.predictive_std()?.mapv(|v| v.to_f64c());
    let gap: f64 = std_a
        .iter()
        .zip(std_b.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / std_a.len() as f64;
    let pairs: Vec<(f64, f64)> = std_a
        .iter()
        .zip(std_b.iter())
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (*a, *b))
        .collect();
    let n_excluded = std_a.len() - pairs.len();
    if pairs.len() < 3 {
        return Err(Error::invalid(format!(
            "oracle_compare needs at least 3 points with spread, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mean_a = pairs.iter().map(|(a, _)| a).sum::<f64>() / n;
    let mean_b = pairs.iter().map(|(_, b)| b).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (a, b) in &pairs {
        let da = a - mean_a;
        let db = b - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::invalid(
            "oracle_compare: constant std profile has no correlation",
        ));
    }
    Ok(OracleComparison {
        std_correlation: cov / (var_a.sqrt() * var_b.sqrt()),
        mean_abs_std_gap: gap,
        n_used: pairs.len(),
        n_excluded,
    })
}

/// Linear interpolation of an ascending slice at fractional rank `h`
/// (the type-7 quantile evaluated at `h = (n-1)p`).
fn value_at_rank<T: Scalar>(sorted: &[T], h: f64) -> T {
    debug_assert!(!sorted.is_empty());
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = T::cast(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
