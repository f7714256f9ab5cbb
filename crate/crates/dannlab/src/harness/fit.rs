//! Multi-start damped Gauss-Newton (Levenberg-Marquardt) fits for the
//! degradation curve and the gain surface.
//!
//! Both models are linear in some parameters once the nonlinear ones are
//! fixed, so each start fixes the nonlinear parameters on a grid, solves the
//! linear ones by least squares, then refines everything jointly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FIT_STARTS: usize = 16;
const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitParams {
    /// `y = baseline + amplitude / (1 + exp(-steepness * (x - midpoint)))`,
    /// canonicalized so that `steepness >= 0`.
    Sigmoid {
        baseline: f64,
        amplitude: f64,
        steepness: f64,
        midpoint: f64,
    },
    /// `g(x, y) = amplitude * exp(-(x - mean)^2 / (2 sigma^2)) * (c0 + c1 y + c2 y^2)`,
    /// canonicalized so that `amplitude >= 0`, `sigma > 0` and
    /// `c0^2 + c1^2 + c2^2 = 1` (all zero when `amplitude == 0`).
    GaussianQuadratic {
        amplitude: f64,
        mean: f64,
        sigma: f64,
        c0: f64,
        c1: f64,
        c2: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FitParams,
    pub rmse: f64,
    /// Whether the returned candidate met the convergence test.
    pub converged: bool,
    /// RMSE of every finite candidate, in start order.
    pub candidate_rmse: Vec<f64>,
    /// Location `(x, y)` of the fitted maximum; surface fits only.
    pub peak: Option<[f64; 2]>,
}

impl FitResult {
    pub fn predict(&self, x: f64, y: f64) -> f64 {
        match self.params {
            FitParams::Sigmoid {
                baseline,
                amplitude,
                steepness,
                midpoint,
            } => baseline + amplitude * logistic(steepness * (x - midpoint)),
            FitParams::GaussianQuadratic {
                amplitude,
                mean,
                sigma,
                c0,
                c1,
                c2,
            } => amplitude * gaussian(x, mean, sigma) * (c0 + c1 * y + c2 * y * y),
        }
    }
}

/// Fits a four-parameter sigmoid to `(xs, ys)`.
pub fn fit_sigmoid(xs: &[f64], ys: &[f64]) -> Result<FitResult> {
    if xs.len() != ys.len() {
        return Err(Error::input(format!(
            "{} x values for {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 4 {
        return Err(Error::input("sigmoid fit needs at least 4 points"));
    }
    check_finite(xs.iter().chain(ys))?;
    let (lo, hi) = bounds(xs);
    let span = (hi - lo).max(1e-12);

    let model = |p: &[f64]| -> (Vec<f64>, Vec<Vec<f64>>) {
        let (b, l, k, x0) = (p[0], p[1], p[2], p[3]);
        let mut r = Vec::with_capacity(xs.len());
        let mut jac = Vec::with_capacity(xs.len());
        for (&x, &y) in xs.iter().zip(ys) {
            let s = logistic(k * (x - x0));
            let ds = s * (1.0 - s);
            r.push(b + l * s - y);
            jac.push(vec![1.0, s, l * ds * (x - x0), -l * ds * k]);
        }
        (r, jac)
    };

    let mut starts = Vec::with_capacity(FIT_STARTS);
    for q in [0.2, 0.4, 0.6, 0.8] {
        for k in [-16.0, -4.0, 4.0, 16.0] {
            let x0 = lo + q * span;
            let k = k / span;
            let basis: Vec<[f64; 2]> = xs.iter().map(|&x| [1.0, logistic(k * (x - x0))]).collect();
            let [b, l] = linear_least_squares(&basis, ys);
            starts.push(vec![b, l, k, x0]);
        }
    }
    let best = multi_start(starts, &model, xs.len())?;
    let mut p = best.params;
    if p[2] < 0.0 {
        p = vec![p[0] + p[1], -p[1], -p[2], p[3]];
    }
    let result = FitResult {
        params: FitParams::Sigmoid {
            baseline: p[0],
            amplitude: p[1],
            steepness: p[2],
            midpoint: p[3],
        },
        rmse: best.rmse,
        converged: best.converged,
        candidate_rmse: best.candidate_rmse,
        peak: None,
    };
    finish(result, best.any_converged)
}

/// Fits `a * gaussian(x) * quadratic(y)` to a grid with rows indexed by `xs`
/// (test shift) and columns by `ys` (DA shift).
pub fn fit_gain_surface(xs: &[f64], ys: &[f64], grid: &[Vec<f64>]) -> Result<FitResult> {
    if xs.len() < 3 || ys.len() < 3 {
        return Err(Error::input(format!(
            "gain surface fit needs at least a 3x3 grid, got {}x{}",
            xs.len(),
            ys.len()
        )));
    }
    if grid.len() != xs.len() || grid.iter().any(|row| row.len() != ys.len()) {
        return Err(Error::input(format!(
            "grid is not {}x{}",
            xs.len(),
            ys.len()
        )));
    }
    check_finite(xs.iter().chain(ys).chain(grid.iter().flatten()))?;
    let points: Vec<(f64, f64, f64)> = xs
        .iter()
        .zip(grid)
        .flat_map(|(&x, row)| ys.iter().zip(row).map(move |(&y, &z)| (x, y, z)))
        .collect();
    let values: Vec<f64> = points.iter().map(|p| p.2).collect();
    let (lo, hi) = bounds(xs);
    let span = (hi - lo).max(1e-12);

    let model = |p: &[f64]| -> (Vec<f64>, Vec<Vec<f64>>) {
        let (mu, s, b0, b1, b2) = (p[0], p[1], p[2], p[3], p[4]);
        let mut r = Vec::with_capacity(points.len());
        let mut jac = Vec::with_capacity(points.len());
        for &(x, y, z) in &points {
            let g = gaussian(x, mu, s);
            let q = b0 + b1 * y + b2 * y * y;
            let d = x - mu;
            r.push(g * q - z);
            jac.push(vec![
                g * q * d / (s * s),
                g * q * d * d / (s * s * s),
                g,
                g * y,
                g * y * y,
            ]);
        }
        (r, jac)
    };

    let mut starts = Vec::with_capacity(FIT_STARTS);
    for q in [0.125, 0.375, 0.625, 0.875] {
        for w in [0.1, 0.2, 0.4, 0.8] {
            let mu = lo + q * span;
            let s = w * span;
            let basis: Vec<[f64; 3]> = points
                .iter()
                .map(|&(x, y, _)| {
                    let g = gaussian(x, mu, s);
                    [g, g * y, g * y * y]
                })
                .collect();
            let [b0, b1, b2] = linear_least_squares(&basis, &values);
            starts.push(vec![mu, s, b0, b1, b2]);
        }
    }
    let best = multi_start(starts, &model, points.len())?;
    let p = &best.params;
    let norm = (p[2] * p[2] + p[3] * p[3] + p[4] * p[4]).sqrt();
    let (amplitude, c) = if norm > 0.0 {
        (norm, [p[2] / norm, p[3] / norm, p[4] / norm])
    } else {
        (0.0, [0.0; 3])
    };
    let (ylo, yhi) = bounds(ys);
    let quad = |y: f64| c[0] + c[1] * y + c[2] * y * y;
    let mut y_peak = ylo;
    let mut candidates = vec![ylo, yhi];
    if c[2] != 0.0 {
        let v = -c[1] / (2.0 * c[2]);
        if v > ylo && v < yhi {
            candidates.push(v);
        }
    }
    for y in candidates {
        if quad(y) > quad(y_peak) {
            y_peak = y;
        }
    }
    let result = FitResult {
        params: FitParams::GaussianQuadratic {
            amplitude,
            mean: p[0],
            sigma: p[1].abs(),
            c0: c[0],
            c1: c[1],
            c2: c[2],
        },
        rmse: best.rmse,
        converged: best.converged,
        candidate_rmse: best.candidate_rmse,
        peak: Some([p[0], y_peak]),
    };
    finish(result, best.any_converged)
}

fn finish(result: FitResult, any_converged: bool) -> Result<FitResult> {
    if any_converged {
        Ok(result)
    } else {
        Err(Error::FitFailed {
            best: Box::new(result),
        })
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn gaussian(x: f64, mean: f64, sigma: f64) -> f64 {
    let d = (x - mean) / sigma;
    (-0.5 * d * d).exp()
}

fn bounds(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

fn check_finite<'a>(mut values: impl Iterator<Item = &'a f64>) -> Result<()> {
    if values.all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::input("fit data contains non-finite values"))
    }
}

struct MultiStart {
    params: Vec<f64>,
    rmse: f64,
    converged: bool,
    any_converged: bool,
    candidate_rmse: Vec<f64>,
}

fn multi_start<F>(starts: Vec<Vec<f64>>, model: &F, n: usize) -> Result<MultiStart>
where
    F: Fn(&[f64]) -> (Vec<f64>, Vec<Vec<f64>>),
{
    let mut best: Option<MultiStart> = None;
    let mut candidate_rmse = Vec::new();
    let mut any_converged = false;
    for start in starts {
        if start.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let outcome = levenberg_marquardt(start, model);
        if outcome.params.iter().any(|v| !v.is_finite()) || !outcome.cost.is_finite() {
            continue;
        }
        let rmse = (2.0 * outcome.cost / n as f64).sqrt();
        candidate_rmse.push(rmse);
        any_converged |= outcome.converged;
        if best.as_ref().is_none_or(|b| rmse < b.rmse) {
            best = Some(MultiStart {
                params: outcome.params,
                rmse,
                converged: outcome.converged,
                any_converged: false,
                candidate_rmse: Vec::new(),
            });
        }
    }
    let mut best = best.ok_or_else(|| Error::input("no fit start produced finite parameters"))?;
    best.candidate_rmse = candidate_rmse;
    best.any_converged = any_converged;
    Ok(best)
}

struct LmOutcome {
    params: Vec<f64>,
    cost: f64,
    converged: bool,
}

fn half_sum_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn levenberg_marquardt<F>(mut p: Vec<f64>, model: &F) -> LmOutcome
where
    F: Fn(&[f64]) -> (Vec<f64>, Vec<Vec<f64>>),
{
    let m = p.len();
    let (mut r, mut jac) = model(&p);
    let mut cost = half_sum_sq(&r);
    let mut damping = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        if cost < 1e-30 {
            return LmOutcome {
                params: p,
                cost,
                converged: true,
            };
        }
        let mut a = vec![vec![0.0; m]; m];
        let mut g = vec![0.0; m];
        for (row, &ri) in jac.iter().zip(&r) {
            for i in 0..m {
                g[i] += row[i] * ri;
                for j in 0..m {
                    a[i][j] += row[i] * row[j];
                }
            }
        }
        loop {
            let mut lhs = a.clone();
            for (i, row) in lhs.iter_mut().enumerate() {
                row[i] += damping * a[i][i].max(1e-12);
            }
            let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
            let step = solve(lhs, rhs);
            if let Some(step) = step {
                let candidate: Vec<f64> = p.iter().zip(&step).map(|(a, b)| a + b).collect();
                let (r_new, jac_new) = model(&candidate);
                let cost_new = half_sum_sq(&r_new);
                if cost_new.is_finite() && cost_new < cost {
                    let decrease = (cost - cost_new) / cost;
                    let step_norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let p_norm = candidate.iter().map(|v| v * v).sum::<f64>().sqrt();
                    p = candidate;
                    r = r_new;
                    jac = jac_new;
                    cost = cost_new;
                    damping = (damping / 3.0).max(1e-15);
                    if decrease < 1e-12 || step_norm <= 1e-12 * (p_norm + 1e-12) {
                        return LmOutcome {
                            params: p,
                            cost,
                            converged: true,
                        };
                    }
                    break;
                }
            }
            damping *= 4.0;
            if damping > 1e16 {
                // No descent direction left: a stationary point.
                return LmOutcome {
                    params: p,
                    cost,
                    converged: true,
                };
            }
        }
    }
    LmOutcome {
        params: p,
        cost,
        converged: false,
    }
}

/// Least squares for `basis * coeffs ~ values` through the normal equations
/// with a tiny ridge, so a rank-deficient basis still yields finite values.
fn linear_least_squares<const K: usize>(basis: &[[f64; K]], values: &[f64]) -> [f64; K] {
    let mut a = vec![vec![0.0; K]; K];
    let mut b = vec![0.0; K];
    for (row, &v) in basis.iter().zip(values) {
        for i in 0..K {
            b[i] += row[i] * v;
            for j in 0..K {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    let scale = (0..K).map(|i| a[i][i]).fold(0.0, f64::max).max(1e-300);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1e-12 * scale;
    }
    let mut out = [0.0; K];
    if let Some(x) = solve(a, b) {
        out.copy_from_slice(&x);
    }
    out
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 || !a[pivot][col].is_finite() {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            let (top, rest) = a.split_at_mut(row);
            for (x, p) in rest[0][col..].iter_mut().zip(&top[col][col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    fn sigmoid_params(fit: &FitResult) -> [f64; 4] {
        match fit.params {
            FitParams::Sigmoid {
                baseline,
                amplitude,
                steepness,
                midpoint,
            } => [baseline, amplitude, steepness, midpoint],
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn exact_sigmoid_is_recovered() {
        let truth = [0.2, 0.78, 8.0, 0.6];
        let xs = grid(0.0, 1.2, 13);
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| truth[0] + truth[1] * logistic(truth[2] * (x - truth[3])))
            .collect();
        let fit = fit_sigmoid(&xs, &ys).unwrap();
        assert!(fit.rmse < 1e-6, "rmse {}", fit.rmse);
        for (got, want) in sigmoid_params(&fit).iter().zip(truth) {
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn decreasing_sigmoid_is_canonicalized() {
        // accuracy-style curve: falls from 0.98 to 0.2
        let xs = grid(0.0, 1.2, 13);
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| 0.98 - 0.78 * logistic(9.0 * (x - 0.7)))
            .collect();
        let fit = fit_sigmoid(&xs, &ys).unwrap();
        let [b, l, k, x0] = sigmoid_params(&fit);
        assert!(k >= 0.0);
        assert!((b - 0.98).abs() < 1e-3 && (l + 0.78).abs() < 1e-3);
        assert!((k - 9.0).abs() < 1e-3 && (x0 - 0.7).abs() < 1e-3);
    }

    #[test]
    fn constant_data_gives_flat_fit() {
        let xs = grid(0.0, 1.0, 6);
        let ys = vec![0.4; 6];
        let fit = fit_sigmoid(&xs, &ys).unwrap();
        let [b, l, _, _] = sigmoid_params(&fit);
        assert!(fit.rmse < 1e-9);
        assert!(l.abs() < 1e-6, "amplitude {l}");
        assert!((b - 0.4).abs() < 1e-6);
    }

    #[test]
    fn noisy_sigmoid_fits_within_noise() {
        let mut rng = Rng::seed(3);
        let xs = grid(0.0, 1.2, 25);
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| {
                // Box-Muller, sigma = 0.01
                let u1 = rng.uniform_f64().max(1e-300);
                let u2 = rng.uniform_f64();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                0.1 + 0.8 * logistic(6.0 * (x - 0.5)) + 0.01 * z
            })
            .collect();
        let fit = fit_sigmoid(&xs, &ys).unwrap();
        assert!(fit.rmse <= 0.02, "rmse {}", fit.rmse);
    }

    #[test]
    fn returned_fit_is_best_candidate() {
        let xs = grid(0.0, 1.2, 9);
        let ys: Vec<f64> = xs.iter().map(|&x| (3.0 * x).sin()).collect();
        let fit = fit_sigmoid(&xs, &ys).unwrap();
        assert!(!fit.candidate_rmse.is_empty());
        assert!(fit.candidate_rmse.iter().all(|&r| fit.rmse <= r));
    }

    #[test]
    fn too_few_points() {
        assert!(fit_sigmoid(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).is_err());
        assert!(fit_gain_surface(&[0.0, 1.0], &[0.0, 1.0, 2.0], &[vec![0.0; 3], vec![0.0; 3]]).is_err());
    }

    #[test]
    fn exact_surface_is_recovered() {
        let xs = grid(0.0, 1.2, 13);
        let ys = grid(0.0, 1.2, 13);
        let c: [f64; 3] = [0.3, 0.9, -0.5];
        let norm = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
        let c = c.map(|v| v / norm.sqrt());
        let (a, mu, sigma) = (0.6, 1.05, 0.2);
        let grid_vals: Vec<Vec<f64>> = xs
            .iter()
            .map(|&x| {
                ys.iter()
                    .map(|&y| a * gaussian(x, mu, sigma) * (c[0] + c[1] * y + c[2] * y * y))
                    .collect()
            })
            .collect();
        let fit = fit_gain_surface(&xs, &ys, &grid_vals).unwrap();
        let FitParams::GaussianQuadratic {
            amplitude,
            mean,
            sigma: s,
            c0,
            c1,
            c2,
        } = fit.params
        else {
            panic!("wrong kind")
        };
        let rel = |got: f64, want: f64| (got - want).abs() / want.abs();
        assert!(rel(amplitude, a) < 1e-2, "amplitude {amplitude}");
        assert!(rel(mean, mu) < 1e-2, "mean {mean}");
        assert!(rel(s, sigma) < 1e-2, "sigma {s}");
        assert!(rel(c0, c[0]) < 1e-2 && rel(c1, c[1]) < 1e-2 && rel(c2, c[2]) < 1e-2);
        let [px, py] = fit.peak.unwrap();
        assert!((px - mu).abs() < 1e-3);
        // vertex of the quadratic: -c1 / (2 c2) = 0.9
        assert!((py - 0.9).abs() < 1e-3, "peak y {py}");
    }

    #[test]
    fn zero_surface() {
        let xs = grid(0.0, 1.2, 5);
        let ys = grid(0.0, 1.2, 4);
        let zeros = vec![vec![0.0; 4]; 5];
        let fit = fit_gain_surface(&xs, &ys, &zeros).unwrap();
        let FitParams::GaussianQuadratic { amplitude, .. } = fit.params else {
            panic!("wrong kind")
        };
        assert!(amplitude.abs() < 1e-9);
        assert!(fit.rmse < 1e-9);
    }

    #[test]
    fn solve_small_system() {
        let x = solve(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
        assert!(solve(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).is_none());
    }
}
