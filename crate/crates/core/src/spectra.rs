//! Marchenko–Pastur law, one-spike limiting measures and bulk quadrature.
//!
//! Every integral over the bulk `[a, b]` is taken in the angle variable of
//! `x = (a+b)/2 + ((b−a)/2)·cos θ`. In that variable the MP density times
//! `dx` is a smooth, even, 2π-periodic function of θ, so an equispaced
//! midpoint rule converges spectrally and no node ever touches an edge.
//!
//! For `c` slightly away from 1 the factor `1/x` has a complex pole close to
//! θ = π and spectral convergence stalls. Writing the integrand as
//! `(a+b) − x − ab/x` and subtracting `F(a)·ab/x`, whose integral is known in
//! closed form, leaves a remainder that is smaller by a factor of order `a`.
//! The subtraction shows up as one extra node at `x = a` whose weight is the
//! rule's own error on `ab/x`.

use std::sync::{Arc, OnceLock};

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of bulk nodes.
pub const DEFAULT_NODES: usize = 2048;

/// Environment variable overriding [`DEFAULT_NODES`].
pub const NODES_ENV: &str = "SPECTRAL_DISTILL_NODES";

/// Relative tolerance used to reject near-coincident spike parameters.
const DEGENERACY_RTOL: f64 = 1e-12;

/// One spike: strength `delta` and signal alignment `alpha = β₀ᵀv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spike {
    pub delta: f64,
    pub alpha: f64,
}

/// Unvalidated model parameters; the serialized form of [`SpikedModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub sigma0_sq: f64,
    pub c: f64,
    #[serde(default)]
    pub spikes: Vec<Spike>,
    pub r: f64,
    pub sigma_eps_sq: f64,
}

/// A validated spiked covariance regression model.
///
/// Population covariance `σ₀²I + Σ δ_j v_j v_jᵀ`, aspect ratio `c = p/n`,
/// signal norm `r`, noise variance `σ_ε²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelParams", into = "ModelParams")]
pub struct SpikedModel {
    p: ModelParams,
}

impl TryFrom<ModelParams> for SpikedModel {
    type Error = Error;
    fn try_from(p: ModelParams) -> Result<Self> {
        SpikedModel::from_params(p)
    }
}

impl From<SpikedModel> for ModelParams {
    fn from(m: SpikedModel) -> Self {
        m.p
    }
}

fn positive_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("{name} must be positive and finite, got {v}")))
    }
}

impl SpikedModel {
    pub fn new(sigma0_sq: f64, c: f64, spikes: Vec<Spike>, r: f64, sigma_eps_sq: f64) -> Result<Self> {
        Self::from_params(ModelParams { sigma0_sq, c, spikes, r, sigma_eps_sq })
    }

    /// Convenience constructor from `(delta, alpha)` pairs.
    pub fn with_pairs(sigma0_sq: f64, c: f64, pairs: &[(f64, f64)], r: f64, sigma_eps_sq: f64) -> Result<Self> {
        let spikes = pairs.iter().map(|&(delta, alpha)| Spike { delta, alpha }).collect();
        Self::new(sigma0_sq, c, spikes, r, sigma_eps_sq)
    }

    pub fn from_params(p: ModelParams) -> Result<Self> {
        positive_finite("sigma0_sq", p.sigma0_sq)?;
        positive_finite("c", p.c)?;
        positive_finite("r", p.r)?;
        if !(p.sigma_eps_sq.is_finite() && p.sigma_eps_sq >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "sigma_eps_sq must be nonnegative and finite, got {}",
                p.sigma_eps_sq
            )));
        }
        let crit = p.c * p.sigma0_sq * p.sigma0_sq;
        for (j, s) in p.spikes.iter().enumerate() {
            positive_finite(&format!("spikes[{j}].delta"), s.delta)?;
            if !(s.alpha.is_finite() && s.alpha != 0.0) {
                return Err(Error::InvalidModel(format!("spikes[{j}].alpha must be nonzero and finite")));
            }
        }
        for (i, si) in p.spikes.iter().enumerate() {
            for (j, sj) in p.spikes.iter().enumerate().skip(i) {
                if j > i && (si.delta - sj.delta).abs() <= DEGENERACY_RTOL * si.delta.max(sj.delta) {
                    return Err(Error::InvalidModel(format!("spikes {i} and {j} have equal delta")));
                }
                let prod = si.delta * sj.delta;
                if (prod - crit).abs() <= DEGENERACY_RTOL * crit {
                    return Err(Error::InvalidModel(format!(
                        "delta_{i}*delta_{j} equals c*sigma0^4 = {crit}; outliers would coincide or sit on the bulk edge"
                    )));
                }
            }
        }
        let a2: f64 = p.spikes.iter().map(|s| s.alpha * s.alpha).sum();
        if a2 >= p.r * p.r {
            return Err(Error::InvalidModel(format!(
                "sum of alpha_j^2 = {a2} must be below r^2 = {}",
                p.r * p.r
            )));
        }
        Ok(SpikedModel { p })
    }

    pub fn sigma0_sq(&self) -> f64 {
        self.p.sigma0_sq
    }
    pub fn c(&self) -> f64 {
        self.p.c
    }
    pub fn spikes(&self) -> &[Spike] {
        &self.p.spikes
    }
    pub fn s(&self) -> usize {
        self.p.spikes.len()
    }
    pub fn r(&self) -> f64 {
        self.p.r
    }
    pub fn sigma_eps_sq(&self) -> f64 {
        self.p.sigma_eps_sq
    }
    pub fn params(&self) -> &ModelParams {
        &self.p
    }

    /// Same model with a different aspect ratio.
    pub fn with_c(&self, c: f64) -> Result<Self> {
        Self::from_params(ModelParams { c, ..self.p.clone() })
    }

    pub fn with_sigma_eps_sq(&self, sigma_eps_sq: f64) -> Result<Self> {
        Self::from_params(ModelParams { sigma_eps_sq, ..self.p.clone() })
    }

    pub fn with_delta(&self, j: usize, delta: f64) -> Result<Self> {
        let mut p = self.p.clone();
        let spike = p
            .spikes
            .get_mut(j)
            .ok_or_else(|| Error::Argument(format!("no spike with index {j}")))?;
        spike.delta = delta;
        Self::from_params(p)
    }

    /// `δ > σ₀²√c`: the spike produces an outlier eigenvalue.
    pub fn above_bbp(&self, delta: f64) -> bool {
        delta > self.p.sigma0_sq * self.p.c.sqrt()
    }

    /// Outlier locations `x⋆_j` of all spikes, in spike order.
    pub fn outliers(&self) -> Vec<f64> {
        self.p
            .spikes
            .iter()
            .map(|s| x_star(self.p.sigma0_sq, self.p.c, s.delta))
            .collect()
    }
}

fn x_star(s2: f64, c: f64, delta: f64) -> f64 {
    (delta + s2) * (delta + c * s2) / delta
}

/// Bulk edges `(a, b) = (σ₀²(1−√c)², σ₀²(1+√c)²)`.
pub fn mp_support(model: &SpikedModel) -> (f64, f64) {
    support(model.sigma0_sq(), model.c())
}

fn support(s2: f64, c: f64) -> (f64, f64) {
    let rc = c.sqrt();
    (s2 * (1.0 - rc) * (1.0 - rc), s2 * (1.0 + rc) * (1.0 + rc))
}

/// MP density on the open bulk; zero outside.
pub fn mp_density(model: &SpikedModel, x: f64) -> f64 {
    let (a, b) = mp_support(model);
    if x <= a || x >= b {
        return 0.0;
    }
    ((b - x) * (x - a)).sqrt() / (2.0 * std::f64::consts::PI * model.sigma0_sq() * model.c() * x)
}

fn check_off_axis(z: Complex64) -> Result<()> {
    if !(z.re.is_finite() && z.im.is_finite()) || (z.im == 0.0 && z.re >= 0.0) {
        return Err(Error::Domain(format!("z = {z} must lie off [0, inf)")));
    }
    Ok(())
}

/// Stieltjes transform `m(z) = ∫ (x−z)⁻¹ dF_MP(x)`, zero atom included.
///
/// `√((z−a)(z−b))` is taken as `√(z−a)·√(z−b)` with principal factors,
/// which is analytic off `[a, b]` and behaves like `z` at infinity. A final
/// sign check against `Im m > 0` (upper half plane) or `m > 0` (negative
/// axis) guards against rounding at the cut.
pub fn mp_stieltjes(model: &SpikedModel, z: Complex64) -> Result<Complex64> {
    check_off_axis(z)?;
    Ok(mp_stieltjes_unchecked(model.sigma0_sq(), model.c(), z))
}

fn mp_stieltjes_unchecked(s2: f64, c: f64, z: Complex64) -> Complex64 {
    let (a, b) = support(s2, c);
    let root = (z - a).sqrt() * (z - b).sqrt();
    let num0 = Complex64::new(s2 * (1.0 - c), 0.0) - z;
    let den = 2.0 * c * s2 * z;
    let m = (num0 + root) / den;
    let bad = if z.im > 0.0 {
        m.im < 0.0
    } else if z.im < 0.0 {
        m.im > 0.0
    } else {
        m.re < 0.0
    };
    if bad {
        (num0 - root) / den
    } else {
        m
    }
}

/// Companion transform `m̲(z) = −(1−c)/z + c·m(z)`.
pub fn companion_stieltjes(model: &SpikedModel, z: Complex64) -> Result<Complex64> {
    let m = mp_stieltjes(model, z)?;
    Ok(-(1.0 - model.c()) / z + model.c() * m)
}

/// Boundary value `m(x + i0)` for `x` inside the open bulk.
pub fn mp_stieltjes_boundary(model: &SpikedModel, x: f64) -> Result<Complex64> {
    let (a, b) = mp_support(model);
    if !(x > a && x < b) {
        return Err(Error::Domain(format!("x = {x} is not inside the bulk ({a}, {b})")));
    }
    let s2 = model.sigma0_sq();
    let c = model.c();
    let re = s2 * (1.0 - c) - x;
    let im = ((x - a) * (b - x)).sqrt();
    Ok(Complex64::new(re, im) / (2.0 * c * x * s2))
}

/// Boundary value of the companion transform, `m̲(x + i0)`.
pub fn companion_stieltjes_boundary(model: &SpikedModel, x: f64) -> Result<Complex64> {
    let m = mp_stieltjes_boundary(model, x)?;
    Ok(-(1.0 - model.c()) / x + model.c() * m)
}

/// Stieltjes transform of the one-spike measure `F_δ`.
pub fn spiked_stieltjes(model: &SpikedModel, delta: f64, z: Complex64) -> Result<Complex64> {
    if !(delta >= 0.0) {
        return Err(Error::Domain(format!("delta = {delta} must be nonnegative")));
    }
    let m = mp_stieltjes(model, z)?;
    let s2 = model.sigma0_sq();
    Ok(s2 * m / (s2 + delta + delta * z * m))
}

/// Outlier location `x⋆ = (δ+σ₀²)(δ+cσ₀²)/δ`.
pub fn outlier_location(model: &SpikedModel, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!("delta = {delta} must be positive")));
    }
    Ok(x_star(model.sigma0_sq(), model.c(), delta))
}

/// Radon–Nikodym derivative `dF_MP/dF_δ = δ(x⋆ − x)/(cσ₀²(δ+σ₀²))`.
///
/// Written as a product with `x⋆ − x` so that it vanishes exactly at `x⋆`.
pub fn rn_affine(s2: f64, c: f64, delta: f64, x: f64) -> f64 {
    if delta == 0.0 {
        return 1.0;
    }
    rn_slope(s2, c, delta) * (x_star(s2, c, delta) - x)
}

/// `δ/(cσ₀²(δ+σ₀²))`, the magnitude of the slope of [`rn_affine`].
pub fn rn_slope(s2: f64, c: f64, delta: f64) -> f64 {
    delta / (c * s2 * (delta + s2))
}

/// A point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

/// Bulk quadrature nodes on `(a, b)`.
///
/// `weights` integrate against Lebesgue measure, `mp_weights` against the
/// bulk part of `F_MP` (the MP density is folded in analytically, which is
/// what keeps the rule exact at `c = 1` where the density blows up at 0).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub n_nodes: usize,
    pub a: f64,
    pub b: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub mp_weights: Vec<f64>,
}

/// Node count from [`NODES_ENV`], falling back to [`DEFAULT_NODES`].
pub fn default_nodes() -> usize {
    std::env::var(NODES_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 16)
        .unwrap_or(DEFAULT_NODES)
}

/// MP density times `dx/dθ` under the Chebyshev map.
fn mp_theta_density(s2: f64, c: f64, mid: f64, half: f64, theta: f64) -> (f64, f64) {
    let x = mid + half * theta.cos();
    let sin = theta.sin();
    let dens = half * half * sin * sin / (2.0 * std::f64::consts::PI * s2 * c * x);
    (x, dens)
}

/// Build the Chebyshev-mapped midpoint rule with `n_nodes` interior nodes.
pub fn make_quadrature(model: &SpikedModel, n_nodes: usize) -> Result<QuadratureRule> {
    if n_nodes < 16 {
        return Err(Error::Argument(format!("n_nodes = {n_nodes} must be at least 16")));
    }
    let (s2, c) = (model.sigma0_sq(), model.c());
    let (a, b) = support(s2, c);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let step = std::f64::consts::PI / n_nodes as f64;
    let mut nodes = Vec::with_capacity(n_nodes);
    let mut weights = Vec::with_capacity(n_nodes);
    let mut mp_weights = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        let theta = (i as f64 + 0.5) * step;
        let (x, dens) = mp_theta_density(s2, c, mid, half, theta);
        nodes.push(x);
        weights.push(step * half * theta.sin());
        mp_weights.push(step * dens);
    }
    let inv_sum: f64 = nodes.iter().map(|x| 1.0 / x).sum();
    if let Some(w) = edge_weight(s2, c, step * inv_sum) {
        nodes.push(a);
        weights.push(0.0);
        mp_weights.push(w);
    }
    Ok(QuadratureRule { n_nodes, a, b, nodes, weights, mp_weights })
}

/// MP weight of the lower-edge node, given a rule's value of `∫₀^π dθ/x`.
///
/// `None` when the correction is lost in rounding (always the case unless
/// `c` is near, but not equal to, 1).
fn edge_weight(s2: f64, c: f64, inv_integral: f64) -> Option<f64> {
    let (a, b) = support(s2, c);
    let ab = a * b;
    if ab <= 0.0 {
        return None;
    }
    let exact = std::f64::consts::PI * ab.sqrt();
    let err = ab * inv_integral - exact;
    (err.abs() > 1e-13 * exact).then(|| err / (2.0 * std::f64::consts::PI * s2 * c))
}

fn gl_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        GaussLegendre::new(32)
            .expect("degree 32 is valid")
            .as_node_weight_pairs()
            .to_vec()
    })
}

/// Composite 32-point Gauss–Legendre integral of `f` over `[lo, hi]`,
/// with panels no longer than `max_panel`.
pub(crate) fn gl_composite(lo: f64, hi: f64, max_panel: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let panels = ((hi - lo) / max_panel).ceil().max(1.0) as usize;
    let width = (hi - lo) / panels as f64;
    let rule = gl_rule();
    let mut total = 0.0;
    for k in 0..panels {
        let p_lo = lo + k as f64 * width;
        let centre = p_lo + 0.5 * width;
        let mut acc = 0.0;
        for &(t, w) in rule {
            acc += w * f(centre + 0.5 * width * t);
        }
        total += 0.5 * width * acc;
    }
    total
}

/// A limiting spectral measure: a weighted combination of `F_δ` laws sharing
/// one MP bulk, plus explicit atoms.
///
/// The bulk density is `f_MP(x) · Σ_k w_k / ν_{δ_k}(x)`, where each `ν` is the
/// affine derivative from [`rn_affine`] (identically 1 for `δ = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasure {
    pub sigma0_sq: f64,
    pub c: f64,
    pub bulk_lo: f64,
    pub bulk_hi: f64,
    /// `(weight, delta)` pairs.
    pub components: Vec<(f64, f64)>,
    pub atoms: Vec<Atom>,
}

impl SpectralMeasure {
    /// Ratio of this measure's bulk density to the MP density at `x`.
    pub fn bulk_factor(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|&(w, d)| w / rn_affine(self.sigma0_sq, self.c, d, x))
            .sum()
    }

    pub fn bulk_density(&self, x: f64) -> f64 {
        if x <= self.bulk_lo || x >= self.bulk_hi {
            return 0.0;
        }
        let (a, b) = (self.bulk_lo, self.bulk_hi);
        let mp = ((b - x) * (x - a)).sqrt() / (2.0 * std::f64::consts::PI * self.sigma0_sq * self.c * x);
        mp * self.bulk_factor(x)
    }

    /// Bulk weights of this measure on the nodes of `rule`.
    pub fn bulk_weights(&self, rule: &QuadratureRule) -> Vec<f64> {
        rule.nodes
            .iter()
            .zip(&rule.mp_weights)
            .map(|(&x, &w)| w * self.bulk_factor(x))
            .collect()
    }

    /// `∫ f dμ` with the shared rule on the bulk plus exact atom terms.
    pub fn integrate(&self, rule: &QuadratureRule, f: impl Fn(f64) -> f64) -> f64 {
        let bulk: f64 = rule
            .nodes
            .iter()
            .zip(&rule.mp_weights)
            .map(|(&x, &w)| w * self.bulk_factor(x) * f(x))
            .sum();
        bulk + self.atoms.iter().map(|a| a.mass * f(a.location)).sum::<f64>()
    }

    /// `∫ f dμ` for integrands with kinks or steep ramps at `breaks`.
    ///
    /// The bulk is split at the breakpoints in the angle variable and each
    /// piece is integrated with composite Gauss–Legendre panels.
    pub fn integrate_split(&self, f: impl Fn(f64) -> f64, breaks: &[f64]) -> f64 {
        let (a, b) = (self.bulk_lo, self.bulk_hi);
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut cuts: Vec<f64> = vec![0.0, std::f64::consts::PI];
        for &x in breaks {
            if x > a && x < b {
                cuts.push(((x - mid) / half).clamp(-1.0, 1.0).acos());
            }
        }
        cuts.sort_by(|p, q| p.partial_cmp(q).expect("finite cut"));
        let max_panel = std::f64::consts::PI / 64.0;
        let mut bulk = 0.0;
        let mut inv = 0.0;
        for win in cuts.windows(2) {
            bulk += gl_composite(win[0], win[1], max_panel, |theta| {
                let (x, dens) = mp_theta_density(self.sigma0_sq, self.c, mid, half, theta);
                dens * self.bulk_factor(x) * f(x)
            });
            inv += gl_composite(win[0], win[1], max_panel, |theta| 1.0 / (mid + half * theta.cos()));
        }
        if let Some(w) = edge_weight(self.sigma0_sq, self.c, inv) {
            bulk += w * self.bulk_factor(a) * f(a);
        }
        bulk + self.atoms.iter().map(|a| a.mass * f(a.location)).sum::<f64>()
    }

    pub fn bulk_mass(&self, rule: &QuadratureRule) -> f64 {
        self.bulk_weights(rule).iter().sum()
    }

    pub fn atom_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn total_mass(&self, rule: &QuadratureRule) -> f64 {
        self.bulk_mass(rule) + self.atom_mass()
    }
}

/// Mass of `F_δ` at 0; positive only when `c > 1`.
pub fn zero_atom_mass(model: &SpikedModel, delta: f64) -> f64 {
    let (s2, c) = (model.sigma0_sq(), model.c());
    if c > 1.0 {
        s2 * (c - 1.0) / (c * s2 + delta)
    } else {
        0.0
    }
}

/// Mass of `F_δ` at `x⋆`; positive only above the BBP threshold.
pub fn outlier_atom_mass(model: &SpikedModel, delta: f64) -> f64 {
    let (s2, c) = (model.sigma0_sq(), model.c());
    if delta > 0.0 && model.above_bbp(delta) {
        (delta * delta - c * s2 * s2) / (delta * (delta + c * s2))
    } else {
        0.0
    }
}

/// The MP law of the model.
pub fn mp_measure(model: &SpikedModel) -> SpectralMeasure {
    combined_measure(model, &[(1.0, 0.0)])
}

/// `F_δ`; `δ = 0` gives the MP law itself.
pub fn spiked_measure(model: &SpikedModel, delta: f64) -> Result<SpectralMeasure> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!("delta = {delta} must be nonnegative")));
    }
    Ok(combined_measure(model, &[(1.0, delta)]))
}

/// `Σ w_k F_{δ_k}` with atoms merged by location.
pub(crate) fn combined_measure(model: &SpikedModel, components: &[(f64, f64)]) -> SpectralMeasure {
    let (a, b) = mp_support(model);
    let mut atoms = Vec::new();
    let zero: f64 = components.iter().map(|&(w, d)| w * zero_atom_mass(model, d)).sum();
    if zero > 0.0 {
        atoms.push(Atom { location: 0.0, mass: zero });
    }
    for &(w, d) in components {
        let m = outlier_atom_mass(model, d);
        if m > 0.0 && w > 0.0 {
            atoms.push(Atom { location: x_star(model.sigma0_sq(), model.c(), d), mass: w * m });
        }
    }
    SpectralMeasure {
        sigma0_sq: model.sigma0_sq(),
        c: model.c(),
        bulk_lo: a,
        bulk_hi: b,
        components: components.to_vec(),
        atoms,
    }
}

/// Upper-tail MP bulk mass above the point at angle `theta`.
fn mp_upper_tail_theta(s2: f64, c: f64, theta: f64) -> f64 {
    let (a, b) = support(s2, c);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    // Antiderivative of ((a+b) − x − ab/x) in θ.
    let (sh, ch) = (0.5 * theta).sin_cos();
    let pole = 2.0 * (a * b).sqrt() * (a.sqrt() * sh).atan2(b.sqrt() * ch);
    (mid * theta - half * theta.sin() - pole) / (2.0 * std::f64::consts::PI * s2 * c)
}

/// The bulk point whose upper-tail MP mass equals `tau`.
pub fn mp_quantile_inverse(model: &SpikedModel, tau: f64) -> Result<f64> {
    let (s2, c) = (model.sigma0_sq(), model.c());
    let cap = 1.0f64.min(1.0 / c);
    if !(tau >= 0.0 && tau < cap) {
        return Err(Error::Domain(format!("tau = {tau} must lie in [0, {cap})")));
    }
    let (a, b) = support(s2, c);
    if tau == 0.0 {
        return Ok(b);
    }
    let (mut lo, mut hi) = (0.0, std::f64::consts::PI);
    for _ in 0..200 {
        let t = 0.5 * (lo + hi);
        let mass = mp_upper_tail_theta(s2, c, t);
        if (mass - tau).abs() < 1e-13 || hi - lo < 1e-15 {
            lo = t;
            hi = t;
            break;
        }
        if mass < tau {
            lo = t;
        } else {
            hi = t;
        }
    }
    let theta = 0.5 * (lo + hi);
    Ok(0.5 * (a + b) + 0.5 * (b - a) * theta.cos())
}

/// The shared quadrature rule and every measure a model needs.
#[derive(Debug, Clone)]
pub struct MeasureSet {
    pub rule: Arc<QuadratureRule>,
    pub mp: SpectralMeasure,
    pub spiked: Vec<SpectralMeasure>,
}

impl MeasureSet {
    pub fn new(model: &SpikedModel, n_nodes: usize) -> Result<Self> {
        let rule = Arc::new(make_quadrature(model, n_nodes)?);
        let mp = mp_measure(model);
        let spiked = model
            .spikes()
            .iter()
            .map(|s| spiked_measure(model, s.delta))
            .collect::<Result<Vec<_>>>()?;
        Ok(MeasureSet { rule, mp, spiked })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(s2: f64, c: f64) -> SpikedModel {
        SpikedModel::new(s2, c, vec![], 1.0, 1.0).unwrap()
    }

    #[test]
    fn support_examples() {
        assert_eq!(mp_support(&model(1.0, 1.0)), (0.0, 4.0));
        assert_eq!(mp_support(&model(1.0, 4.0)), (1.0, 9.0));
        assert_eq!(mp_support(&model(2.0, 1.0)), (0.0, 8.0));
    }

    #[test]
    fn stieltjes_at_minus_one() {
        let m = mp_stieltjes(&model(1.0, 1.0), Complex64::new(-1.0, 0.0)).unwrap();
        assert!((m.re - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-14);
        assert_eq!(m.im, 0.0);
    }

    #[test]
    fn stieltjes_rejects_positive_axis() {
        assert!(mp_stieltjes(&model(1.0, 2.0), Complex64::new(0.5, 0.0)).is_err());
        assert!(mp_stieltjes(&model(1.0, 2.0), Complex64::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn outlier_examples() {
        assert_eq!(outlier_location(&model(1.0, 1.0), 2.0).unwrap(), 4.5);
        assert_eq!(outlier_location(&model(1.0, 3.0), 3.0).unwrap(), 8.0);
        assert!(outlier_location(&model(1.0, 3.0), 0.0).is_err());
    }

    #[test]
    fn rejects_degenerate_models() {
        assert!(SpikedModel::with_pairs(1.0, 4.0, &[(2.0, 0.1)], 1.0, 1.0).is_err());
        assert!(SpikedModel::with_pairs(1.0, 4.0, &[(1.0, 0.1), (4.0, 0.1)], 1.0, 1.0).is_err());
        assert!(SpikedModel::with_pairs(1.0, 1.0, &[(3.0, 0.1), (3.0, 0.2)], 1.0, 1.0).is_err());
        assert!(SpikedModel::with_pairs(1.0, 1.0, &[(3.0, 1.0)], 1.0, 1.0).is_err());
        assert!(SpikedModel::with_pairs(1.0, 1.0, &[(3.0, 0.0)], 1.0, 1.0).is_err());
        assert!(SpikedModel::new(1.0, 1.0, vec![], 1.0, -1.0).is_err());
    }
}
