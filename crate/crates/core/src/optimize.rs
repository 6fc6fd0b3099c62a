//! Box-constrained minimisation: projected BFGS with finite-difference
//! gradients, and a clamped Nelder-Mead simplex as fallback.

#[derive(Debug, Clone, Copy)]
pub struct OptSettings {
    pub max_iter: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    pub g_tol: f64,
}

impl Default for OptSettings {
    fn default() -> Self {
        Self {
            max_iter: 500,
            f_tol: 1e-10,
            x_tol: 1e-8,
            g_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Objective wrapper that maps errors and NaN to +inf.
fn eval<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> f64 {
    let v = f(x);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Central differences, one-sided where a bound is within reach.
pub fn numeric_gradient<F: Fn(&[f64]) -> f64>(
    f: &F,
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    let f0 = eval(f, x);
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        let up = x[i] + h <= hi[i];
        let down = x[i] - h >= lo[i];
        g[i] = if up && down {
            xp[i] = x[i] + h;
            let fp = eval(f, &xp);
            xp[i] = x[i] - h;
            let fm = eval(f, &xp);
            (fp - fm) / (2.0 * h)
        } else if up {
            xp[i] = x[i] + h;
            (eval(f, &xp) - f0) / h
        } else if down {
            xp[i] = x[i] - h;
            (f0 - eval(f, &xp)) / h
        } else {
            0.0
        };
        xp[i] = x[i];
    }
    g
}

fn active_set(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<bool> {
    (0..x.len())
        .map(|i| {
            let eps = 1e-10 * x[i].abs().max(1.0);
            (x[i] <= lo[i] + eps && g[i] > 0.0) || (x[i] >= hi[i] - eps && g[i] < 0.0)
        })
        .collect()
}

fn projected_grad_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let active = active_set(x, g, lo, hi);
    g.iter()
        .zip(&active)
        .map(|(gi, a)| if *a { 0.0 } else { gi.abs() })
        .fold(0.0, f64::max)
}

/// Projected BFGS on `lo <= x <= hi`.
pub fn minimize_box<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    s: OptSettings,
) -> OptResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut fx = eval(f, &x);
    if !fx.is_finite() {
        return OptResult {
            x,
            fx,
            iterations: 0,
            converged: false,
        };
    }
    let mut g = numeric_gradient(f, &x, lo, hi);
    let mut h = identity(n);
    let mut prev_active = active_set(&x, &g, lo, hi);
    let mut small_steps = 0;

    for iter in 0..s.max_iter {
        if projected_grad_norm(&x, &g, lo, hi) <= s.g_tol {
            return OptResult {
                x,
                fx,
                iterations: iter,
                converged: true,
            };
        }
        let active = active_set(&x, &g, lo, hi);
        if active != prev_active {
            h = identity(n);
            prev_active = active.clone();
        }
        let mut d = vec![0.0; n];
        for i in 0..n {
            if active[i] {
                continue;
            }
            for j in 0..n {
                if !active[j] {
                    d[i] -= h[i][j] * g[j];
                }
            }
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            // not a descent direction: fall back to steepest descent
            h = identity(n);
            for i in 0..n {
                d[i] = if active[i] { 0.0 } else { -g[i] };
            }
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            project(&mut xn, lo, hi);
            let fnew = eval(f, &xn);
            let decrease: f64 = x
                .iter()
                .zip(&xn)
                .zip(&g)
                .map(|((a, b), gi)| (b - a) * gi)
                .sum();
            if fnew.is_finite() && fnew <= fx + 1e-4 * decrease.min(alpha * slope).min(0.0) {
                accepted = Some((xn, fnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            let pg = projected_grad_norm(&x, &g, lo, hi);
            return OptResult {
                x,
                fx,
                iterations: iter,
                converged: pg <= 1e3 * s.g_tol,
            };
        };
        let gn = numeric_gradient(f, &xn, lo, hi);
        let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = step.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * norm(&step) * norm(&yv) {
            bfgs_update(&mut h, &step, &yv, sy);
        }
        let df = fx - fnew;
        let dx = step
            .iter()
            .zip(&xn)
            .map(|(d, v)| d.abs() / v.abs().max(1.0))
            .fold(0.0, f64::max);
        x = xn;
        fx = fnew;
        g = gn;
        if df <= s.f_tol * (1.0 + fx.abs()) && dx <= s.x_tol {
            small_steps += 1;
            if small_steps >= 2 {
                let pg = projected_grad_norm(&x, &g, lo, hi);
                return OptResult {
                    x,
                    fx,
                    iterations: iter + 1,
                    converged: pg <= 1e3 * s.g_tol,
                };
            }
        } else {
            small_steps = 0;
        }
    }
    let pg = projected_grad_norm(&x, &g, lo, hi);
    OptResult {
        x,
        fx,
        iterations: s.max_iter,
        converged: pg <= s.g_tol,
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Inverse-Hessian BFGS update.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h[i][j] * y[j]).sum())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    let rho = 1.0 / sy;
    for i in 0..n {
        for j in 0..n {
            h[i][j] += (1.0 + yhy * rho) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Nelder-Mead with vertices clamped to the box.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    s: OptSettings,
) -> OptResult {
    let n = x0.len();
    let mut start = x0.to_vec();
    project(&mut start, lo, hi);
    let mut simplex = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        let step = 0.1 * (hi[i] - lo[i]).min(v[i].abs().max(1.0));
        v[i] = if v[i] + step <= hi[i] {
            v[i] + step
        } else {
            v[i] - step
        };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(f, v)).collect();
    let clamp = |mut v: Vec<f64>| {
        project(&mut v, lo, hi);
        v
    };

    let max_iter = s.max_iter * 4;
    for iter in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = (values[n] - values[0]).abs();
        let size = (1..=n)
            .map(|k| {
                simplex[k]
                    .iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread <= s.f_tol * (1.0 + values[0].abs()) && size <= s.x_tol.max(1e-7) {
            return OptResult {
                x: simplex[0].clone(),
                fx: values[0],
                iterations: iter,
                converged: values[0].is_finite(),
            };
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let toward = |t: f64| -> Vec<f64> {
            clamp(
                centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (c - w))
                    .collect(),
            )
        };
        let xr = toward(1.0);
        let fr = eval(f, &xr);
        if fr < values[0] {
            let xe = toward(2.0);
            let fe = eval(f, &xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = toward(0.5);
                let fc = eval(f, &xc);
                (xc, fc)
            } else {
                let xc = toward(-0.5);
                let fc = eval(f, &xc);
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for k in 1..=n {
                    let v: Vec<f64> = simplex[k]
                        .iter()
                        .zip(&simplex[0])
                        .map(|(a, b)| b + 0.5 * (a - b))
                        .collect();
                    simplex[k] = v;
                    values[k] = eval(f, &simplex[k]);
                }
            }
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    OptResult {
        x: simplex[best].clone(),
        fx: values[best],
        iterations: max_iter,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_optimum() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2);
        let r = minimize_box(&f, &[0.0], &[-10.0], &[10.0], OptSettings::default());
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize_box(
            &f,
            &[-1.2, 1.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            OptSettings::default(),
        );
        assert!(
            (r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4,
            "{:?}",
            r
        );
    }

    #[test]
    fn bound_is_respected() {
        let f = |x: &[f64]| (x[0] + 2.0).powi(2) + (x[1] - 0.5).powi(2);
        let r = minimize_box(
            &f,
            &[0.5, 0.0],
            &[0.0, -1.0],
            &[1.0, 1.0],
            OptSettings::default(),
        );
        assert_eq!(r.x[0], 0.0);
        assert!((r.x[1] - 0.5).abs() < 1e-6);
        assert!(r.converged);
    }

    #[test]
    fn simplex_fallback() {
        let f = |x: &[f64]| (x[0] - 1.0).abs() + (x[1] + 2.0).powi(2);
        let r = nelder_mead(
            &f,
            &[0.0, 0.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            OptSettings::default(),
        );
        assert!(
            (r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] + 2.0).abs() < 1e-4,
            "{:?}",
            r
        );
    }
}
