//! BFGS minimisation with a strong-Wolfe line search.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    /// Stop when the largest absolute gradient entry falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Relative change in the objective treated as stalled progress.
    pub f_rel_tol: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 2000,
            f_rel_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl Minimum {
    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Objective returning `f(x)` and writing `grad f(x)`; `None` when `x` is
/// outside the region where the objective is finite.
pub trait Objective {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> Option<f64>;
}

impl<F: Fn(&[f64], &mut [f64]) -> Option<f64>> Objective for F {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> Option<f64> {
        self(x, grad)
    }
}

pub fn minimize_bfgs<O: Objective>(obj: &O, x0: &[f64], opts: &OptimizerOptions) -> Minimum {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut g = DVector::zeros(n);
    let Some(mut f) = obj.eval(x.as_slice(), g.as_mut_slice()) else {
        return Minimum {
            x: x0.to_vec(),
            f: f64::INFINITY,
            grad: vec![f64::NAN; n],
            iterations: 0,
            converged: false,
        };
    };
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut first_step = true;
    let mut iterations = 0;
    let mut converged = false;
    let mut stalls = 0;

    while iterations < opts.max_iter {
        if g.amax() < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut d = -(&h_inv * &g);
        if d.dot(&g) >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            d = -g.clone();
        }
        let alpha0 = if first_step {
            (1.0 / g.norm()).min(1.0)
        } else {
            1.0
        };
        let Some((alpha, f_new, g_new)) = line_search(obj, &x, f, &g, &d, alpha0) else {
            if first_step {
                break;
            }
            // Restart from steepest descent once before giving up.
            h_inv = DMatrix::identity(n, n);
            first_step = true;
            stalls += 1;
            if stalls > 2 {
                break;
            }
            continue;
        };
        let s = &d * alpha;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first_step {
                h_inv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H <- (I - rho s y') H (I - rho y s') + rho s s'
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        first_step = false;
        x += s;
        let f_change = (f - f_new).abs();
        f = f_new;
        g = g_new;
        if f_change <= opts.f_rel_tol * f.abs().max(1.0) && g.amax() < 1e3 * opts.grad_tol {
            stalls += 1;
            if stalls > 5 {
                break;
            }
        }
    }
    if g.amax() < opts.grad_tol {
        converged = true;
    }
    Minimum {
        x: x.as_slice().to_vec(),
        f,
        grad: g.as_slice().to_vec(),
        iterations,
        converged,
    }
}

/// Strong-Wolfe line search (bracketing then zoom with safeguarded cubic
/// interpolation). Returns the accepted step, value and gradient.
fn line_search<O: Objective>(
    obj: &O,
    x: &DVector<f64>,
    f0: f64,
    g0: &DVector<f64>,
    d: &DVector<f64>,
    alpha0: f64,
) -> Option<(f64, f64, DVector<f64>)> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let dphi0 = g0.dot(d);
    let n = x.len();
    let eval = |alpha: f64| -> (f64, f64, DVector<f64>) {
        let xa = x + d * alpha;
        let mut g = DVector::zeros(n);
        match obj.eval(xa.as_slice(), g.as_mut_slice()) {
            Some(f) if f.is_finite() => {
                let dphi = g.dot(d);
                (f, dphi, g)
            }
            _ => (f64::INFINITY, f64::NAN, g),
        }
    };

    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut dphi_prev = dphi0;
    let mut alpha = alpha0;
    for i in 0..60 {
        let (fa, dphi, ga) = eval(alpha);
        if !fa.is_finite() {
            // Step left the finite region: shrink towards the last good point.
            alpha = alpha_prev + 0.25 * (alpha - alpha_prev);
            if alpha - alpha_prev < 1e-16 {
                return None;
            }
            continue;
        }
        if fa > f0 + C1 * alpha * dphi0 || (i > 0 && fa >= f_prev) {
            return zoom(
                &eval, f0, dphi0, alpha_prev, f_prev, dphi_prev, alpha, fa, dphi,
            );
        }
        if dphi.abs() <= -C2 * dphi0 {
            return Some((alpha, fa, ga));
        }
        if dphi >= 0.0 {
            return zoom(
                &eval, f0, dphi0, alpha, fa, dphi, alpha_prev, f_prev, dphi_prev,
            );
        }
        alpha_prev = alpha;
        f_prev = fa;
        dphi_prev = dphi;
        alpha *= 2.0;
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn zoom<E: Fn(f64) -> (f64, f64, DVector<f64>)>(
    eval: &E,
    f0: f64,
    dphi0: f64,
    mut lo: f64,
    mut f_lo: f64,
    mut dphi_lo: f64,
    mut hi: f64,
    mut f_hi: f64,
    mut dphi_hi: f64,
) -> Option<(f64, f64, DVector<f64>)> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for _ in 0..60 {
        let width = hi - lo;
        let mut alpha = cubic_min(lo, f_lo, dphi_lo, hi, f_hi, dphi_hi).unwrap_or(lo + 0.5 * width);
        let (a, b) = if lo < hi { (lo, hi) } else { (hi, lo) };
        let margin = 0.1 * (b - a);
        if !(alpha > a + margin && alpha < b - margin) {
            alpha = 0.5 * (lo + hi);
        }
        let (fa, dphi, ga) = eval(alpha);
        if !fa.is_finite() {
            hi = alpha;
            f_hi = f64::INFINITY;
            dphi_hi = f64::NAN;
            continue;
        }
        if fa > f0 + C1 * alpha * dphi0 || fa >= f_lo {
            hi = alpha;
            f_hi = fa;
            dphi_hi = dphi;
        } else {
            if dphi.abs() <= -C2 * dphi0 {
                return Some((alpha, fa, ga));
            }
            if dphi * (hi - lo) >= 0.0 {
                hi = lo;
                f_hi = f_lo;
                dphi_hi = dphi_lo;
            }
            lo = alpha;
            f_lo = fa;
            dphi_lo = dphi;
            best = Some((alpha, fa, ga));
        }
        if (hi - lo).abs() < 1e-14 * lo.abs().max(1.0) {
            break;
        }
    }
    // Accept any sufficient-decrease point if the curvature condition never held.
    best.filter(|(_, f, _)| *f < f0)
}

fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    if !(fa.is_finite() && fb.is_finite() && da.is_finite() && db.is_finite()) {
        return None;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let x = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    x.is_finite().then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            Some((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
        };
        let m = minimize_bfgs(&f, &[-1.2, 1.0], &OptimizerOptions::default());
        assert!(m.converged, "{m:?}");
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn respects_infeasible_region() {
        // -log(x) + x has its minimum at 1 and is undefined for x <= 0.
        let f = |x: &[f64], g: &mut [f64]| {
            if x[0] <= 0.0 {
                return None;
            }
            g[0] = -1.0 / x[0] + 1.0;
            Some(-x[0].ln() + x[0])
        };
        let m = minimize_bfgs(&f, &[20.0], &OptimizerOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_in_many_dimensions() {
        let n = 25;
        let f = move |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..n {
                let c = (i + 1) as f64;
                v += 0.5 * c * (x[i] - 1.0).powi(2);
                g[i] = c * (x[i] - 1.0);
            }
            Some(v)
        };
        let m = minimize_bfgs(&f, &vec![0.0; n], &OptimizerOptions::default());
        assert!(m.converged);
        assert!(m.grad_norm() < 1e-6);
    }
}
