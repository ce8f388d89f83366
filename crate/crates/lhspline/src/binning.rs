//! Log-scale histograms with an extended break range.
//!
//! The positive sample is log-transformed and binned into equal-width
//! intervals whose midpoints become the spline knots. Extending the break
//! range beyond the sample extremes surrounds the boundary counts with
//! genuine zero-count bins, which keeps the smoother from steepening the
//! boundary slopes around isolated extreme observations.

use crate::numerics::simpson;
use crate::{Error, Result};

/// Histogram of log-transformed amounts. Bins are `[b_j, b_{j+1})` with
/// the final bin closed on both sides.
#[derive(Debug, Clone)]
pub struct LogHistogram {
    /// `n_bins + 1` strictly increasing log-scale break points.
    pub breaks: Vec<f64>,
    /// Per-bin counts.
    pub counts: Vec<u64>,
    /// Bin midpoints; the spline knots.
    pub knots: Vec<f64>,
    /// Total sample size (sum of counts).
    pub n_total: u64,
    /// Common bin width in log units.
    pub bin_width: f64,
    /// Ratio of break range length to data range length.
    pub extension_factor: f64,
    /// Log of a hard lower support bound (left-censored analyses); the
    /// first break is pinned there and carries no mass below it.
    pub support_log_low: Option<f64>,
}

impl LogHistogram {
    /// Assemble a histogram from explicit breaks and counts (used by
    /// simulated-count studies and tests).
    pub fn from_breaks_counts(
        breaks: Vec<f64>,
        counts: Vec<u64>,
        extension_factor: f64,
    ) -> Result<Self> {
        if breaks.len() != counts.len() + 1 || counts.is_empty() {
            return Err(Error::InvalidInput(
                "need n_bins + 1 breaks for n_bins counts".into(),
            ));
        }
        for w in breaks.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput("breaks must be increasing".into()));
            }
        }
        let knots = breaks.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        let n_total = counts.iter().sum();
        let bin_width = (breaks[breaks.len() - 1] - breaks[0]) / counts.len() as f64;
        Ok(Self {
            breaks,
            counts,
            knots,
            n_total,
            bin_width,
            extension_factor,
            support_log_low: None,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }
}

fn log_transform(amounts: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = amounts.iter().find(|&&a| !(a > 0.0) || !a.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "amounts must be strictly positive and finite; got {bad}"
        )));
    }
    Ok(amounts.iter().map(|a| a.ln()).collect())
}

fn fill_bins(xs: &[f64], lo: f64, hi: f64, n_bins: usize) -> Vec<u64> {
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0u64; n_bins];
    for &x in xs {
        let idx = ((x - lo) / width).floor() as i64;
        // Left-closed bins; the last bin also takes its right endpoint.
        let idx = idx.clamp(0, n_bins as i64 - 1) as usize;
        counts[idx] += 1;
    }
    counts
}

fn assemble(
    xs: &[f64],
    lo: f64,
    hi: f64,
    n_bins: usize,
    extension_factor: f64,
    support_log_low: Option<f64>,
) -> LogHistogram {
    let mut breaks: Vec<f64> = (0..=n_bins)
        .map(|i| lo + (hi - lo) * (i as f64 / n_bins as f64))
        .collect();
    breaks[0] = lo;
    breaks[n_bins] = hi;
    let knots = breaks.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    let counts = fill_bins(xs, lo, hi, n_bins);
    LogHistogram {
        n_total: counts.iter().sum(),
        bin_width: (hi - lo) / n_bins as f64,
        breaks,
        counts,
        knots,
        extension_factor,
        support_log_low,
    }
}

/// Bin the log-transformed amounts into `n_bins` equal-width intervals.
/// The break range is the data range expanded symmetrically about its
/// midpoint to `extension_factor` times its length.
pub fn build_histogram(
    amounts: &[f64],
    n_bins: usize,
    extension_factor: f64,
) -> Result<LogHistogram> {
    if n_bins < 2 {
        return Err(Error::InvalidInput("need at least 2 bins".into()));
    }
    if !(extension_factor >= 1.0) {
        return Err(Error::InvalidInput(format!(
            "extension factor must be >= 1, got {extension_factor}"
        )));
    }
    let xs = log_transform(amounts)?;
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(Error::InvalidInput(
            "need at least 2 distinct amounts to bin".into(),
        ));
    }
    let (lo, hi) = if extension_factor == 1.0 {
        (min, max)
    } else {
        let mid = 0.5 * (min + max);
        let half = 0.5 * (max - min) * extension_factor;
        (mid - half, mid + half)
    };
    Ok(assemble(&xs, lo, hi, n_bins, extension_factor, None))
}

/// Histogram for a left-censored analysis: the first break is pinned to
/// `log(censor_bound)` (the exact support edge) and only the right side
/// is extended, by half the usual two-sided allowance.
pub fn build_histogram_censored(
    amounts: &[f64],
    censor_bound: f64,
    n_bins: usize,
    extension_factor: f64,
) -> Result<LogHistogram> {
    if n_bins < 2 {
        return Err(Error::InvalidInput("need at least 2 bins".into()));
    }
    if !(censor_bound > 0.0) {
        return Err(Error::InvalidInput(
            "censor bound must be positive for a censored histogram".into(),
        ));
    }
    if !(extension_factor >= 1.0) {
        return Err(Error::InvalidInput(format!(
            "extension factor must be >= 1, got {extension_factor}"
        )));
    }
    let xs = log_transform(amounts)?;
    let lo = censor_bound.ln();
    if let Some(bad) = xs.iter().find(|&&x| x <= lo) {
        return Err(Error::InvalidInput(format!(
            "amount {} at or below the censor bound {censor_bound}",
            bad.exp()
        )));
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > lo) {
        return Err(Error::InvalidInput(
            "need at least 2 distinct amounts to bin".into(),
        ));
    }
    let hi = max + 0.5 * (extension_factor - 1.0) * (max - lo);
    Ok(assemble(&xs, lo, hi, n_bins, extension_factor, Some(lo)))
}

/// Diagnostic: maximum over bins of the relative error of the midpoint
/// approximation `exp(g(knot)) * width` to `integral of exp(g)` over the
/// bin. Small values justify the per-bin Poisson intensity model.
pub fn poisson_cell_intensity_check<F: Fn(f64) -> f64>(hist: &LogHistogram, g: F) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..hist.n_bins() {
        let (a, b) = (hist.breaks[j], hist.breaks[j + 1]);
        let integral = simpson(|x| g(x).exp(), a, b, 32);
        let midpoint = g(hist.knots[j]).exp() * (b - a);
        worst = worst.max((integral - midpoint).abs() / integral);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_datum_per_equal_third() {
        let amounts = vec![0.5f64.exp(), 1.5f64.exp(), 2.5f64.exp()];
        let h = build_histogram(&amounts, 3, 1.0).unwrap();
        assert_eq!(h.counts, vec![1, 1, 1]);
        let expected = [0.5, 0.5 + 2.0 / 3.0, 0.5 + 4.0 / 3.0, 2.5];
        for (b, e) in h.breaks.iter().zip(expected) {
            assert!((b - e).abs() < 1e-12, "{b} vs {e}");
        }
        assert_eq!(h.n_total, 3);
    }

    #[test]
    fn extension_grows_range_and_adds_zero_bins() {
        let amounts: Vec<f64> = (1..=200).map(|i| i as f64 * 0.37 + 0.2).collect();
        let h = build_histogram(&amounts, 50, 1.5).unwrap();
        let xs: Vec<f64> = amounts.iter().map(|a| a.ln()).collect();
        let data_len = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - xs.iter().copied().fold(f64::INFINITY, f64::min);
        let range = h.breaks[50] - h.breaks[0];
        assert!(
            (range - 1.5 * data_len).abs() < 1e-12 * range,
            "{range} vs {}",
            1.5 * data_len
        );
        assert_eq!(h.counts[0], 0);
        assert_eq!(*h.counts.last().unwrap(), 0);
        assert_eq!(h.n_total, 200);
    }

    #[test]
    fn factor_one_keeps_boundary_counts_nonzero() {
        let amounts: Vec<f64> = (1..=500).map(|i| (i as f64 * 0.013).exp()).collect();
        let h = build_histogram(&amounts, 40, 1.0).unwrap();
        assert!(h.counts[0] >= 1);
        assert!(*h.counts.last().unwrap() >= 1);
    }

    #[test]
    fn total_count_invariant_under_bin_refinement() {
        let amounts: Vec<f64> = (1..=321).map(|i| 0.1 + (i as f64).sqrt()).collect();
        let a = build_histogram(&amounts, 30, 1.2).unwrap();
        let b = build_histogram(&amounts, 60, 1.2).unwrap();
        assert_eq!(a.n_total, b.n_total);
        assert_eq!(a.counts.iter().sum::<u64>(), b.counts.iter().sum::<u64>());
    }

    #[test]
    fn permutation_invariance() {
        let amounts: Vec<f64> = (1..=97).map(|i| (i as f64 * 1.618).fract() + 0.3).collect();
        let mut reversed = amounts.clone();
        reversed.reverse();
        let a = build_histogram(&amounts, 20, 1.3).unwrap();
        let b = build_histogram(&reversed, 20, 1.3).unwrap();
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.breaks, b.breaks);
    }

    #[test]
    fn larger_factor_strictly_contains_smaller() {
        let amounts: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let a = build_histogram(&amounts, 20, 1.2).unwrap();
        let b = build_histogram(&amounts, 20, 1.6).unwrap();
        assert!(b.breaks[0] < a.breaks[0]);
        assert!(b.breaks[20] > a.breaks[20]);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(build_histogram(&[1.0, 1.0, 1.0], 10, 1.0).is_err());
        assert!(build_histogram(&[1.0, -2.0], 10, 1.0).is_err());
        assert!(build_histogram(&[1.0, 0.0], 10, 1.0).is_err());
        assert!(build_histogram(&[1.0, 2.0], 10, 0.9).is_err());
    }

    #[test]
    fn censored_pins_left_break() {
        let bound = 2.0f64;
        let amounts: Vec<f64> = (1..=80).map(|i| bound + i as f64 * 0.25).collect();
        let h = build_histogram_censored(&amounts, bound, 25, 1.5).unwrap();
        assert_eq!(h.breaks[0], bound.ln());
        assert_eq!(h.support_log_low, Some(bound.ln()));
        let max_x = amounts.last().unwrap().ln();
        assert!(h.breaks[25] > max_x);
        assert_eq!(h.n_total, 80);
    }

    #[test]
    fn intensity_check_zero_for_constant_g() {
        let amounts: Vec<f64> = (1..=64).map(|i| i as f64 * 0.5).collect();
        let h = build_histogram(&amounts, 16, 1.0).unwrap();
        let err = poisson_cell_intensity_check(&h, |_| 1.25);
        assert!(err < 1e-14, "{err}");
    }

    #[test]
    fn intensity_check_midpoint_rate_for_linear_g() {
        // Halving the bin width should cut the midpoint-rule error by
        // about four (second-order accuracy).
        let amounts: Vec<f64> = (1..=64).map(|i| (0.05 * i as f64).exp()).collect();
        let coarse = build_histogram(&amounts, 16, 1.0).unwrap();
        let fine = build_histogram(&amounts, 32, 1.0).unwrap();
        let g = |x: f64| 0.8 * x - 0.3;
        let e_coarse = poisson_cell_intensity_check(&coarse, g);
        let e_fine = poisson_cell_intensity_check(&fine, g);
        let ratio = e_coarse / e_fine;
        assert!(
            (3.5..4.5).contains(&ratio),
            "expected ~4x reduction, got {ratio} ({e_coarse} -> {e_fine})"
        );
    }
}
