//! Threshold-selection diagnostics: mean residual life and shape
//! stability across a threshold grid.

use super::gpd::gpd_fit_pot;
use crate::Result;

/// One diagnostic point with a Gaussian 95% band.
#[derive(Debug, Clone)]
pub struct DiagnosticPoint {
    pub threshold: f64,
    pub value: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_exceed: usize,
}

/// Diagnostic series over a threshold grid; thresholds with too few
/// exceedances are dropped and reported in `skipped`.
#[derive(Debug, Clone)]
pub struct DiagnosticSeries {
    pub points: Vec<DiagnosticPoint>,
    pub skipped: Vec<f64>,
}

const Z95: f64 = 1.959_963_984_540_054;
const MIN_EXCEEDANCES: usize = 30;

/// Mean excess over each threshold with its standard-error band. A GPD
/// with shape `xi` gives a mean excess linear in `u` with slope
/// `xi / (1 - xi)`, so a flat or linear stretch marks usable thresholds.
pub fn mean_residual_life(amounts: &[f64], u_grid: &[f64]) -> Result<DiagnosticSeries> {
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &u in u_grid {
        let excesses: Vec<f64> = amounts
            .iter()
            .filter(|&&y| y > u)
            .map(|&y| y - u)
            .collect();
        let n = excesses.len();
        if n < MIN_EXCEEDANCES {
            skipped.push(u);
            continue;
        }
        let mean = excesses.iter().sum::<f64>() / n as f64;
        let var = excesses
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        points.push(DiagnosticPoint {
            threshold: u,
            value: mean,
            se,
            lo: mean - Z95 * se,
            hi: mean + Z95 * se,
            n_exceed: n,
        });
    }
    Ok(DiagnosticSeries { points, skipped })
}

/// Refitted GPD shape estimate over each threshold with a delta-method
/// band; stable estimates above a threshold support choosing it.
pub fn shape_stability(amounts: &[f64], u_grid: &[f64]) -> Result<DiagnosticSeries> {
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &u in u_grid {
        let n = amounts.iter().filter(|&&y| y > u).count();
        if n < MIN_EXCEEDANCES {
            skipped.push(u);
            continue;
        }
        match gpd_fit_pot(amounts, u, None) {
            Ok(fit) => {
                let xi = fit.params[1];
                let se = fit.cov[1][1].max(0.0).sqrt();
                points.push(DiagnosticPoint {
                    threshold: u,
                    value: xi,
                    se,
                    lo: xi - Z95 * se,
                    hi: xi + Z95 * se,
                    n_exceed: n,
                });
            }
            Err(_) => skipped.push(u),
        }
    }
    Ok(DiagnosticSeries { points, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evt::gpd_simulate;
    use crate::numerics::rng_from_seed;
    use rand::Rng;

    /// Least-squares slope with its standard error.
    fn slope_with_se(xs: &[f64], ys: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let r = y - intercept - slope * x;
                r * r
            })
            .sum();
        let se = (rss / (n - 2.0) / sxx).sqrt();
        (slope, se)
    }

    #[test]
    fn exponential_mean_excess_is_flat() {
        let mut rng = rng_from_seed(15);
        let data: Vec<f64> = (0..20_000)
            .map(|_| -rng.random::<f64>().ln() * 2.0)
            .collect();
        let grid: Vec<f64> = (0..10).map(|i| i as f64 * 0.4).collect();
        let series = mean_residual_life(&data, &grid).unwrap();
        assert!(series.points.len() >= 8);
        let xs: Vec<f64> = series.points.iter().map(|p| p.threshold).collect();
        let ys: Vec<f64> = series.points.iter().map(|p| p.value).collect();
        let (slope, _) = slope_with_se(&xs, &ys);
        // Successive mean excesses share observations, so the OLS slope
        // error is optimistic; compare the total drift across the grid
        // with the noise of the sparsest point instead.
        let drift = slope.abs() * (xs.last().unwrap() - xs[0]);
        let max_se = series.points.iter().map(|p| p.se).fold(0.0f64, f64::max);
        assert!(
            drift < 2.5 * max_se,
            "memoryless data should give flat mean excess: drift {drift} vs point se {max_se}"
        );
        // And every point's band contains the true mean excess (= 2).
        for p in &series.points {
            assert!(
                (p.value - 2.0).abs() < 4.0 * p.se,
                "u={}: mean excess {} vs 2.0",
                p.threshold,
                p.value
            );
        }
    }

    #[test]
    fn gpd_mean_excess_linear_with_known_slope() {
        let (sigma, xi) = (2.0, 0.25);
        let mut rng = rng_from_seed(16);
        let data = gpd_simulate(sigma, xi, 200_000, &mut rng);
        let grid: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        let series = mean_residual_life(&data, &grid).unwrap();
        // Analytic mean excess: (sigma + xi u) / (1 - xi).
        for p in &series.points {
            let truth = (sigma + xi * p.threshold) / (1.0 - xi);
            assert!(
                (p.value - truth).abs() < 4.0 * p.se + 1e-9,
                "u={}: {} vs {truth} (se {})",
                p.threshold,
                p.value,
                p.se
            );
        }
        let xs: Vec<f64> = series.points.iter().map(|p| p.threshold).collect();
        let ys: Vec<f64> = series.points.iter().map(|p| p.value).collect();
        let (slope, se) = slope_with_se(&xs, &ys);
        let expected = xi / (1.0 - xi);
        assert!(
            (slope - expected).abs() < 4.0 * se.max(0.005),
            "slope {slope} vs {expected}"
        );
    }

    #[test]
    fn stability_flat_on_exact_gpd_and_skips_thin_thresholds() {
        let mut rng = rng_from_seed(17);
        let data = gpd_simulate(3.0, 0.2, 50_000, &mut rng);
        let max = data.iter().cloned().fold(0.0f64, f64::max);
        let grid: Vec<f64> = (0..8)
            .map(|i| i as f64 * 1.0)
            .chain([max * 1.1])
            .collect();
        let series = shape_stability(&data, &grid).unwrap();
        assert_eq!(series.skipped, vec![max * 1.1]);
        let mut covered = 0;
        for p in &series.points {
            if p.lo <= 0.2 && 0.2 <= p.hi {
                covered += 1;
            }
        }
        assert!(
            covered >= series.points.len() - 1,
            "true shape outside the band at too many thresholds"
        );
    }
}
