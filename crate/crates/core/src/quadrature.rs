//! Gauss-Hermite rules and a mode-centred (adaptive) log-integrator.
//!
//! Integrands are supplied on the log scale together with their first two
//! derivatives. The rule is recentred at the mode of the log integrand and
//! rescaled by its curvature, which keeps the node set on the bulk of the
//! mass even when a study likelihood is far narrower than the random-effects
//! density.

use crate::distributions::log_sum_exp;

/// Nodes and weights for ∫ f(x) e^{-x²} dx.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// ln w + x², the weight for integrands not carrying e^{-x²}.
    log_scaled: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "at least one node is required");
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let nf = n as f64;
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let m = n.div_ceil(2);
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let jf = j as f64;
                    let p3 = p2;
                    p2 = p1;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[m - 1] = 0.0;
        }
        let log_scaled = x.iter().zip(&w).map(|(xi, wi)| wi.ln() + xi * xi).collect();
        Self {
            nodes: x,
            weights: w,
            log_scaled,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// log ∫ exp(g(t)) dt with `g` returning (g, g', g'').
    ///
    /// `start` seeds the mode search. g must be strictly concave.
    pub fn log_integrate<F>(&self, start: f64, g: F) -> f64
    where
        F: Fn(f64) -> (f64, f64, f64),
    {
        let (mode, curv) = find_mode(start, &g);
        let sigma = (-1.0 / curv).sqrt();
        let scale = std::f64::consts::SQRT_2 * sigma;
        let mut terms = Vec::with_capacity(self.nodes.len());
        for (x, lw) in self.nodes.iter().zip(&self.log_scaled) {
            terms.push(lw + g(mode + scale * x).0);
        }
        scale.ln() + log_sum_exp(&terms)
    }
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_352,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_5,
    0.149_445_554_002_916_9,
];
// 10-point Gauss weights at XGK[1], XGK[3], ..., XGK[9]
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

/// 21-point Kronrod estimate and |Kronrod - Gauss| on [a, b].
fn kronrod21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[10] * fc;
    let mut g = 0.0;
    for j in 0..10 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// log ∫ exp(g(t)) dt by adaptive Gauss-Kronrod over the bulk of a
/// log-concave integrand.
///
/// The integration range extends from the mode until g has dropped by 46
/// (relative mass below 1e-20) on each side. Subintervals are bisected
/// largest-error first until the error estimate is below `rel_tol` times
/// the integral.
pub fn log_integrate_adaptive<F>(start: f64, rel_tol: f64, g: F) -> f64
where
    F: Fn(f64) -> (f64, f64, f64),
{
    const DROP: f64 = 46.0;
    const MAX_PANELS: usize = 400;
    let (mode, curv) = find_mode(start, &g);
    let peak = g(mode).0;
    if !peak.is_finite() {
        return peak;
    }
    let sigma = (-1.0 / curv).sqrt();
    let reach = |dir: f64| {
        let mut step = sigma;
        for _ in 0..80 {
            let v = g(mode + dir * step).0;
            if !(v > peak - DROP) {
                return mode + dir * step;
            }
            step *= 2.0;
        }
        mode + dir * step
    };
    let lo = reach(-1.0);
    let hi = reach(1.0);
    let f = |t: f64| {
        let v = g(t).0 - peak;
        if v.is_nan() {
            0.0
        } else {
            v.exp()
        }
    };

    let mut panels: Vec<(f64, f64, f64, f64)> = [(lo, mode), (mode, hi)]
        .iter()
        .map(|&(a, b)| {
            let (v, e) = kronrod21(&f, a, b);
            (a, b, v, e)
        })
        .collect();
    loop {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= rel_tol * total || panels.len() >= MAX_PANELS {
            return peak + total.ln();
        }
        let worst = (0..panels.len())
            .max_by(|&i, &j| panels[i].3.total_cmp(&panels[j].3))
            .unwrap_or(0);
        let (a, b, _, _) = panels.swap_remove(worst);
        let m = 0.5 * (a + b);
        let (v1, e1) = kronrod21(&f, a, m);
        let (v2, e2) = kronrod21(&f, m, b);
        panels.push((a, m, v1, e1));
        panels.push((m, b, v2, e2));
    }
}

/// Safeguarded Newton ascent; returns the mode and g'' there.
fn find_mode<F>(start: f64, g: &F) -> (f64, f64)
where
    F: Fn(f64) -> (f64, f64, f64),
{
    let mut t = start;
    let (mut v, mut d1, mut d2) = g(t);
    for _ in 0..200 {
        if !(d2 < 0.0) || !v.is_finite() {
            break;
        }
        let step = -d1 / d2;
        let mut lambda = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = t + lambda * step;
            let (cv, c1, c2) = g(cand);
            if cv.is_finite() && cv >= v - 1e-14 * v.abs() {
                t = cand;
                v = cv;
                d1 = c1;
                d2 = c2;
                moved = true;
                break;
            }
            lambda *= 0.5;
        }
        let sigma = (-1.0 / d2).sqrt();
        if !moved || (lambda * step).abs() <= 1e-11 * sigma {
            break;
        }
    }
    if !(d2 < 0.0) || !d2.is_finite() {
        d2 = -1.0;
    }
    (t, d2)
}

/// Adaptive Simpson on [a, b]. Used as an independent oracle in tests.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for n in [1usize, 2, 5, 20, 41, 61] {
            let rule = GaussHermite::new(n);
            let s: f64 = rule.weights().iter().sum();
            assert!(
                (s - std::f64::consts::PI.sqrt()).abs() < 1e-12,
                "n={n} s={s}"
            );
        }
    }

    #[test]
    fn moments_are_exact() {
        // ∫ x^4 e^{-x²} = 3√π/4
        let rule = GaussHermite::new(11);
        let m4: f64 = rule
            .nodes()
            .iter()
            .zip(rule.weights())
            .map(|(x, w)| w * x.powi(4))
            .sum();
        assert!((m4 - 0.75 * std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn nodes_symmetric_and_sorted() {
        let rule = GaussHermite::new(41);
        let x = rule.nodes();
        for i in 0..41 {
            assert!((x[i] + x[40 - i]).abs() < 1e-13);
        }
        assert!(x.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn gaussian_log_integral() {
        // log ∫ exp(-(t-3)²/(2·0.01)) dt = log(√(2π)·0.1)
        let rule = GaussHermite::new(41);
        let r = rule.log_integrate(-5.0, |t| {
            let d = t - 3.0;
            (-d * d / 0.02, -d / 0.01, -1.0 / 0.01)
        });
        let want = ((2.0 * std::f64::consts::PI).sqrt() * 0.1).ln();
        assert!((r - want).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_near_step_factor() {
        // normal density times a sharp probit factor: closed form
        // ∫ φ(t) Φ(a + b t) dt = Φ(a / √(1 + b²))
        let (a, b) = (-1.3, 7.0);
        let g = |t: f64| {
            let u = a + b * t;
            let lam = crate::distributions::inverse_mills(u);
            (
                crate::distributions::std_normal_log_pdf(t)
                    + crate::distributions::std_normal_log_cdf(u),
                -t + b * lam,
                -1.0 - b * b * lam * (u + lam),
            )
        };
        let want = crate::distributions::std_normal_log_cdf(a / (1.0f64 + b * b).sqrt());
        let got = log_integrate_adaptive(0.0, 1e-12, g);
        assert!((got - want).abs() < 1e-10, "{got} {want}");
        let gh = GaussHermite::new(41).log_integrate(0.0, g);
        assert!((gh - want).abs() > 1e-8);
    }

    #[test]
    fn skewed_integrand_matches_simpson() {
        // binomial-times-normal shape with a sharp likelihood
        let g = |t: f64| {
            let e = 30.0 * t - 500.0 * crate::distributions::softplus(t) - 0.5 * (t + 1.0).powi(2);
            let p = crate::distributions::expit(t);
            (
                e,
                30.0 - 500.0 * p - (t + 1.0),
                -500.0 * p * (1.0 - p) - 1.0,
            )
        };
        let rule = GaussHermite::new(41);
        let gh = rule.log_integrate(0.0, g);
        let (mode, _) = find_mode(0.0, &g);
        let gm = g(mode).0;
        let simpson =
            adaptive_simpson(&|t: f64| (g(t).0 - gm).exp(), mode - 3.0, mode + 3.0, 1e-13);
        assert!((gh - (gm + simpson.ln())).abs() < 1e-9);
    }
}
