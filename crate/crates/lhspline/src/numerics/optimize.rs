//! 1-D bracketing optimizers and a BFGS quasi-Newton minimizer.

use crate::{Error, Result};

/// Brent's method for 1-D minimization on `[a, b]`.
pub fn brent_minimize<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    const GOLDEN: f64 = 0.381_966_011_250_105;
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut x = a + GOLDEN * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for _ in 0..max_iter {
        let mid = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut use_golden = true;
        let mut u = x;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_old = e;
            e = d;
            if p.abs() < (0.5 * q * e_old).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if mid > x { tol1 } else { -tol1 };
                    u = x + d;
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < mid { b - x } else { a - x };
            d = GOLDEN * e;
            u = x + if d.abs() >= tol1 {
                d
            } else if d > 0.0 {
                tol1
            } else {
                -tol1
            };
        }
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Brent root finding on a bracketing interval: requires
/// `f(a)` and `f(b)` of opposite sign.
pub fn brent_root<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(Error::Numeric(format!(
            "root not bracketed on [{a}, {b}]: f = ({fa}, {fb})"
        )));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.abs() > fc.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min(e.abs() * q.abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 {
            d
        } else if xm > 0.0 {
            tol1
        } else {
            -tol1
        };
        fb = f(b);
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }
    Ok(b)
}

/// Outcome of a BFGS minimization.
#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// BFGS with backtracking Armijo line search. `f` returns the objective
/// and its gradient; infeasible points may return `f64::INFINITY`, which
/// the line search treats as a rejection.
pub fn bfgs_minimize<F>(mut f: F, x0: &[f64], gtol: f64, max_iter: usize) -> Result<BfgsResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() {
        return Err(Error::NonConvergence(
            "objective not finite at the starting point".into(),
        ));
    }
    // Inverse Hessian approximation, dense row-major; started at a
    // gradient-scaled identity and rescaled after the first step
    // (Shanno-Phua), which keeps the line search productive when the
    // objective curvature is far from unit scale.
    let g0_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0 / g0_norm.max(1.0);
    }
    let mut scaled = false;

    let mut iterations = 0;
    for iter in 0..max_iter {
        iterations = iter + 1;
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < gtol {
            return Ok(BfgsResult {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations: iter,
                converged: true,
            });
        }
        // Search direction p = -H g.
        let mut p = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += h[i * n + j] * g[j];
            }
            p[i] = -s;
        }
        let mut slope: f64 = p.iter().zip(&g).map(|(pi, gi)| pi * gi).sum();
        if slope >= 0.0 {
            // Reset to scaled steepest descent if H lost positive
            // definiteness.
            let scale = 1.0 / gnorm.max(1.0);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { scale } else { 0.0 };
                }
            }
            for i in 0..n {
                p[i] = -scale * g[i];
            }
            slope = -scale * g.iter().map(|v| v * v).sum::<f64>();
            scaled = false;
        }

        // Backtracking Armijo.
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xt: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + t * pi).collect();
            let (ft, gt) = f(&xt);
            if ft.is_finite() && ft <= fx + 1e-4 * t * slope {
                accepted = Some((xt, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((xt, ft, gt)) = accepted else {
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            return Ok(BfgsResult {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations,
                converged: gnorm < gtol * 100.0,
            });
        };

        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let yy = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-12 * ss * yy {
            if !scaled {
                let factor = sy / (yy * yy);
                for v in h.iter_mut() {
                    *v = 0.0;
                }
                for i in 0..n {
                    h[i * n + i] = factor;
                }
                scaled = true;
            }
            // h = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let rho = 1.0 / sy;
            let mut hy = vec![0.0; n];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += h[i * n + j] * y[j];
                }
                hy[i] = acc;
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + rho * rho * yhy * s[i] * s[j]
                        + rho * s[i] * s[j];
                }
            }
        }
        x = xt;
        fx = ft;
        g = gt;
    }
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(BfgsResult {
        x,
        value: fx,
        grad_norm: gnorm,
        iterations,
        converged: gnorm < gtol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_min_quadratic() {
        let (x, fx) = brent_minimize(|x| (x - 1.3) * (x - 1.3) + 2.0, -4.0, 5.0, 1e-10, 200);
        assert!((x - 1.3).abs() < 1e-8);
        assert!((fx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn brent_root_cubic() {
        let r = brent_root(|x| x * x * x - 2.0, 0.0, 2.0, 1e-14, 200).unwrap();
        assert!((r - 2.0f64.powf(1.0 / 3.0)).abs() < 1e-10);
    }

    #[test]
    fn bfgs_rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            (v, g)
        };
        let res = bfgs_minimize(f, &[-1.2, 1.0], 1e-8, 500).unwrap();
        assert!(res.converged, "grad norm {}", res.grad_norm);
        assert!((res.x[0] - 1.0).abs() < 1e-5);
        assert!((res.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn bfgs_handles_infeasible_region() {
        // Minimize -log(x) + x with x > 0; infeasible for x <= 0.
        let f = |x: &[f64]| {
            if x[0] <= 0.0 {
                (f64::INFINITY, vec![0.0])
            } else {
                (-x[0].ln() + x[0], vec![-1.0 / x[0] + 1.0])
            }
        };
        let res = bfgs_minimize(f, &[3.0], 1e-10, 200).unwrap();
        assert!((res.x[0] - 1.0).abs() < 1e-7);
    }
}
