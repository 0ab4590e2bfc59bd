//! Test-side oracles, written against the closed-form densities in `x`
//! rather than the library's angle-mapped quadrature.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use spectral_distill::SpikedModel;

/// `∫_lo^hi f(x) dx` by tanh-sinh. `f` gets `(x, x − lo, hi − x)` so that
/// endpoint factors can be formed without cancellation.
pub fn tanh_sinh(lo: f64, hi: f64, f: impl Fn(f64, f64, f64) -> f64) -> f64 {
    let half = 0.5 * (hi - lo);
    let h = 1.0 / 128.0;
    let mut total = 0.0;
    let kmax = (4.5 / h) as i64;
    for k in -kmax..=kmax {
        let t = k as f64 * h;
        let u = std::f64::consts::FRAC_PI_2 * t.sinh();
        // 1 - tanh(u) and 1 + tanh(u), each computed without cancellation.
        let minus = 2.0 / (1.0 + (2.0 * u).exp());
        let plus = 2.0 / (1.0 + (-2.0 * u).exp());
        if minus == 0.0 || plus == 0.0 {
            continue;
        }
        let from_lo = half * plus;
        let to_hi = half * minus;
        let x = lo + from_lo;
        let w = half * std::f64::consts::FRAC_PI_2 * t.cosh() / u.cosh().powi(2);
        let v = f(x, from_lo, to_hi);
        if w > 0.0 && v.is_finite() {
            total += w * v;
        }
    }
    total * h
}

pub struct Law {
    pub s2: f64,
    pub c: f64,
    pub delta: f64,
}

impl Law {
    pub fn of(model: &SpikedModel, delta: f64) -> Self {
        Law { s2: model.sigma0_sq(), c: model.c(), delta }
    }

    pub fn edges(&self) -> (f64, f64) {
        let rc = self.c.sqrt();
        (self.s2 * (1.0 - rc).powi(2), self.s2 * (1.0 + rc).powi(2))
    }

    pub fn x_star(&self) -> f64 {
        (self.delta + self.s2) * (self.delta + self.c * self.s2) / self.delta
    }

    /// `dF_MP/dF_δ`, in expanded form.
    pub fn nu(&self, x: f64) -> f64 {
        if self.delta == 0.0 {
            return 1.0;
        }
        let cs = self.c * self.s2;
        (self.delta + cs) / cs - self.delta * x / (cs * (self.delta + self.s2))
    }

    /// Bulk density of `F_δ` at `x`, from the two distances to the edges.
    pub fn density(&self, x: f64, from_a: f64, to_b: f64) -> f64 {
        (from_a * to_b).sqrt() / (2.0 * std::f64::consts::PI * self.s2 * self.c * x) / self.nu(x)
    }

    pub fn atoms(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        if self.c > 1.0 {
            out.push((0.0, self.s2 * (self.c - 1.0) / (self.c * self.s2 + self.delta)));
        }
        if self.delta > self.s2 * self.c.sqrt() {
            let m = (self.delta.powi(2) - self.c * self.s2 * self.s2) / (self.delta * (self.delta + self.c * self.s2));
            out.push((self.x_star(), m));
        }
        out
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let (a, b) = self.edges();
        let bulk = tanh_sinh(a, b, |x, fa, tb| f(x) * self.density(x, fa, tb));
        bulk + self.atoms().iter().map(|&(x, m)| m * f(x)).sum::<f64>()
    }
}

/// Uniform draw on `[lo, hi]`.
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Aspect ratio away from 1, or exactly 1 with probability 1/5.
pub fn aspect_ratio(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen::<f64>() < 0.2 {
        return 1.0;
    }
    loop {
        let c = uniform(rng, 0.2, 4.0);
        if (c - 1.0).abs() > 0.15 {
            return c;
        }
    }
}

/// Spike strength at least 10% away from the BBP threshold.
pub fn spike_delta(rng: &mut ChaCha8Rng, s2: f64, c: f64) -> f64 {
    let bbp = s2 * c.sqrt();
    loop {
        let d = bbp * uniform(rng, 0.2, 6.0);
        if (d / bbp - 1.0).abs() > 0.1 {
            return d;
        }
    }
}

/// A random model with `s` spikes, well-separated outliers and positive noise.
pub fn random_model(rng: &mut ChaCha8Rng, s: usize) -> SpikedModel {
    loop {
        let s2 = uniform(rng, 0.5, 2.0);
        let c = aspect_ratio(rng);
        let r = uniform(rng, 0.5, 3.0);
        let se2 = uniform(rng, 0.25, 4.0);
        let deltas: Vec<f64> = (0..s).map(|_| spike_delta(rng, s2, c)).collect();
        let law = |d: f64| Law { s2, c, delta: d };
        let mut keys: Vec<f64> = deltas.iter().map(|&d| law(d).x_star()).collect();
        keys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if keys.windows(2).any(|w| w[1] - w[0] < 0.05 * w[1]) {
            continue;
        }
        if deltas.iter().enumerate().any(|(i, &di)| {
            deltas.iter().skip(i).any(|&dj| ((di * dj) / (c * s2 * s2) - 1.0).abs() < 0.1)
        }) {
            continue;
        }
        let share = uniform(rng, 0.2, 0.9);
        let raw: Vec<f64> = (0..s).map(|_| uniform(rng, 0.2, 1.0)).collect();
        let total: f64 = raw.iter().sum();
        let pairs: Vec<(f64, f64)> = deltas
            .iter()
            .zip(&raw)
            .map(|(&d, &w)| {
                let a = r * (share * w / total).sqrt();
                (d, if rng.gen::<bool>() { a } else { -a })
            })
            .collect();
        if let Ok(m) = SpikedModel::with_pairs(s2, c, &pairs, r, se2) {
            return m;
        }
    }
}

pub fn two_spike_model() -> SpikedModel {
    SpikedModel::with_pairs(1.0, 3.0, &[(2.0, 3.0), (3.0, 2.5)], 5.0, 4.0).unwrap()
}

pub fn sweep_model(delta: f64) -> SpikedModel {
    SpikedModel::with_pairs(1.0, 3.0, &[(delta, 6.0)], 8.0, 16.0).unwrap()
}
