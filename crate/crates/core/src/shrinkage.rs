//! Spectral shrinkage rules and their limiting prediction and estimation
//! risks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{ModelContext, PointKind};
use crate::poly::Poly;
use crate::spectra::{mp_quantile_inverse, mp_support, SpikedModel};

/// Self-distillation parameters: ridge levels `λ₀..λ_k` and teacher
/// weights `ξ₁..ξ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdParams {
    pub lambdas: Vec<f64>,
    pub xis: Vec<f64>,
}

impl SdParams {
    pub fn new(lambdas: Vec<f64>, xis: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() || xis.len() + 1 != lambdas.len() {
            return Err(Error::Argument(format!(
                "need k+1 lambdas and k xis, got {} and {}",
                lambdas.len(),
                xis.len()
            )));
        }
        if lambdas.iter().chain(&xis).any(|v| !v.is_finite()) {
            return Err(Error::Argument("SD parameters must be finite".into()));
        }
        Ok(SdParams { lambdas, xis })
    }

    /// Number of distillation steps `k`.
    pub fn steps(&self) -> usize {
        self.xis.len()
    }
}

/// A spectral shrinkage rule `f`, applied to sample eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShrinkageFn {
    Ridge { lambda: f64 },
    Rational { num: Poly, den: Poly },
    SdChain { params: SdParams },
    GdPoly { eta: f64, steps: usize },
    /// `0` below `threshold`, `1/x` above, joined by a C¹ ramp centred on it.
    PcrSurrogate { threshold: f64, ramp_width: f64 },
    /// `0` near the origin, `1/x` beyond `cut`, joined by a C¹ ramp centred on it.
    MinNormSurrogate { cut: f64, ramp_width: f64 },
    /// Values at sorted abscissae, linearly interpolated in between.
    Tabulated { xs: Vec<f64>, values: Vec<f64> },
}

/// `1/d`, with an exact pole sent to 0 as in the pseudoinverse.
fn pinv(d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        1.0 / d
    }
}

/// C¹ cubic smoothstep on `[0, 1]`.
fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * (3.0 - 2.0 * t)
    }
}

fn ramp_over_x(x: f64, centre: f64, width: f64) -> f64 {
    let s = smoothstep((x - (centre - 0.5 * width)) / width);
    if s == 0.0 {
        0.0
    } else {
        s / x
    }
}

/// Closed form of the `k`-step self-distillation rule.
fn sd_eval(p: &SdParams, x: f64) -> f64 {
    let k = p.steps();
    // prod = Π_{t>j} ξ_t·x/(x+λ_t), accumulated from the last stage back.
    let mut prod = 1.0;
    let mut total = 0.0;
    for j in (0..=k).rev() {
        let xi_j = if j == 0 { 0.0 } else { p.xis[j - 1] };
        total += (1.0 - xi_j) * prod * pinv(x + p.lambdas[j]);
        if j > 0 {
            prod *= xi_j * x * pinv(x + p.lambdas[j]);
        }
    }
    total
}

fn gd_eval(eta: f64, steps: usize, x: f64) -> f64 {
    let q = 1.0 - eta * x;
    if (eta * x).abs() < 1e-6 {
        // Direct sum avoids cancellation in (1 − q^T)/x near the origin.
        let mut acc = 0.0;
        let mut pow = 1.0;
        for _ in 0..steps {
            acc += pow;
            pow *= q;
        }
        eta * acc
    } else {
        (1.0 - q.powi(steps as i32)) / x
    }
}

impl ShrinkageFn {
    /// `f(x)`; poles evaluate to 0.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ShrinkageFn::Ridge { lambda } => pinv(x + lambda),
            ShrinkageFn::Rational { num, den } => {
                let d = den.eval(x);
                if d == 0.0 {
                    0.0
                } else {
                    num.eval(x) / d
                }
            }
            ShrinkageFn::SdChain { params } => sd_eval(params, x),
            ShrinkageFn::GdPoly { eta, steps } => gd_eval(*eta, *steps, x),
            ShrinkageFn::PcrSurrogate { threshold, ramp_width } => ramp_over_x(x, *threshold, *ramp_width),
            ShrinkageFn::MinNormSurrogate { cut, ramp_width } => ramp_over_x(x, *cut, *ramp_width),
            ShrinkageFn::Tabulated { xs, values } => interpolate(xs, values, x),
        }
    }

    /// Points where the rule changes character sharply.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            ShrinkageFn::PcrSurrogate { threshold: c, ramp_width: w }
            | ShrinkageFn::MinNormSurrogate { cut: c, ramp_width: w } => vec![c - 0.5 * w, c + 0.5 * w],
            _ => Vec::new(),
        }
    }

    /// Check that `f` is finite and pole-free on `S_c⁺` for this model.
    pub fn validate(&self, ctx: &ModelContext) -> Result<()> {
        match self {
            ShrinkageFn::Ridge { lambda } => check_pole(ctx, -lambda, "ridge"),
            ShrinkageFn::SdChain { params } => {
                for (t, l) in params.lambdas.iter().enumerate() {
                    check_pole(ctx, -l, &format!("self-distillation stage {t}"))?;
                }
                Ok(())
            }
            ShrinkageFn::Rational { num, den } => {
                if num.coeffs().iter().chain(den.coeffs()).any(|c| !c.is_finite()) {
                    return Err(Error::Argument("rational rule has non-finite coefficients".into()));
                }
                for root in den.complex_roots() {
                    if root.im.abs() <= 1e-10 * root.norm().max(1.0) {
                        check_pole(ctx, root.re, "rational denominator")?;
                    }
                }
                let (a, b) = mp_support(&ctx.model);
                let mut sign = 0.0;
                for &x in ctx.xs.iter().chain([a, b].iter()) {
                    let d = den.eval(x);
                    if d == 0.0 || !d.is_finite() || (sign != 0.0 && d.signum() != sign && x >= a && x <= b) {
                        return Err(Error::Domain(format!("rational denominator vanishes or changes sign near x = {x}")));
                    }
                    if x >= a && x <= b {
                        sign = d.signum();
                    }
                }
                Ok(())
            }
            ShrinkageFn::GdPoly { eta, steps } => {
                if !(eta.is_finite() && *eta > 0.0) || *steps == 0 {
                    return Err(Error::Argument("gradient descent needs eta > 0 and at least one step".into()));
                }
                Ok(())
            }
            ShrinkageFn::PcrSurrogate { threshold, ramp_width }
            | ShrinkageFn::MinNormSurrogate { cut: threshold, ramp_width } => {
                if !(threshold.is_finite() && *threshold > 0.0 && ramp_width.is_finite() && *ramp_width > 0.0) {
                    return Err(Error::Argument("surrogate needs a positive threshold and ramp width".into()));
                }
                if threshold - 0.5 * ramp_width <= 0.0 {
                    return Err(Error::Argument("surrogate ramp must stay clear of the origin".into()));
                }
                Ok(())
            }
            ShrinkageFn::Tabulated { xs, values } => {
                if xs.len() != values.len() || xs.is_empty() {
                    return Err(Error::Argument("tabulated rule needs matching, nonempty xs and values".into()));
                }
                if xs.windows(2).any(|w| !(w[0] < w[1])) || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Argument("tabulated rule needs increasing xs and finite values".into()));
                }
                Ok(())
            }
        }
    }
}

fn interpolate(xs: &[f64], values: &[f64], x: f64) -> f64 {
    match xs.binary_search_by(|p| p.partial_cmp(&x).expect("finite abscissa")) {
        Ok(i) => values[i],
        Err(0) => values[0],
        Err(i) if i == xs.len() => values[xs.len() - 1],
        Err(i) => {
            let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
            values[i - 1] + t * (values[i] - values[i - 1])
        }
    }
}

/// `x` is a bulk point, the zero atom (when present) or an outlier atom.
pub(crate) fn in_support(ctx: &ModelContext, x: f64) -> bool {
    match ctx.classify(x) {
        Ok(PointKind::Zero) => ctx.kinds.contains(&PointKind::Zero),
        Ok(_) => true,
        Err(_) => false,
    }
}

fn check_pole(ctx: &ModelContext, pole: f64, what: &str) -> Result<()> {
    if in_support(ctx, pole) {
        Err(Error::Domain(format!("{what} has a pole at {pole}, inside the limiting spectrum")))
    } else {
        Ok(())
    }
}

/// `ShrinkageFn::SdChain` from parameters.
pub fn sd_chain_fn(params: SdParams) -> ShrinkageFn {
    ShrinkageFn::SdChain { params }
}

/// Limiting risk split into its bias and variance parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskBreakdown {
    pub bias_bulk: f64,
    pub bias_spikes: Vec<f64>,
    pub variance: f64,
    pub total: f64,
}

impl RiskBreakdown {
    fn new(bias_bulk: f64, bias_spikes: Vec<f64>, variance: f64) -> Result<Self> {
        let total = bias_bulk + bias_spikes.iter().sum::<f64>() + variance;
        if !total.is_finite() {
            return Err(Error::Numerical("limiting risk integral is not finite".into()));
        }
        Ok(RiskBreakdown { bias_bulk, bias_spikes, variance, total })
    }
}

/// The three families of integrals a risk needs.
struct RiskIntegrals {
    /// `∫ (1 − xf)² dF_α`
    alpha_sq: f64,
    /// `∫ (1 − xf) dF_δj`
    spike_lin: Vec<f64>,
    /// `∫ x f² dF_MP`
    mp_var: f64,
}

fn integrals_tabulated(ctx: &ModelContext, f: &[f64]) -> RiskIntegrals {
    let mut alpha_sq = 0.0;
    let mut mp_var = 0.0;
    let mut spike_lin = vec![0.0; ctx.s()];
    for (i, (&x, &fi)) in ctx.xs.iter().zip(f).enumerate() {
        let res = 1.0 - x * fi;
        alpha_sq += ctx.w_alpha[i] * res * res;
        mp_var += ctx.w_mp[i] * x * fi * fi;
        for (j, acc) in spike_lin.iter_mut().enumerate() {
            *acc += ctx.w_spike[j][i] * res;
        }
    }
    RiskIntegrals { alpha_sq, spike_lin, mp_var }
}

fn integrals_split(ctx: &ModelContext, f: &ShrinkageFn, breaks: &[f64]) -> RiskIntegrals {
    let res = |x: f64| 1.0 - x * f.eval(x);
    RiskIntegrals {
        alpha_sq: ctx.mixture.integrate_split(|x| res(x).powi(2), breaks),
        spike_lin: ctx.measures.spiked.iter().map(|m| m.integrate_split(res, breaks)).collect(),
        mp_var: ctx.measures.mp.integrate_split(|x| x * f.eval(x).powi(2), breaks),
    }
}

fn integrals(ctx: &ModelContext, f: &ShrinkageFn) -> Result<RiskIntegrals> {
    f.validate(ctx)?;
    let (a, b) = mp_support(&ctx.model);
    let breaks: Vec<f64> = f.breakpoints().into_iter().filter(|&x| x > a && x < b).collect();
    if breaks.is_empty() {
        Ok(integrals_tabulated(ctx, &ctx.tabulate(|x| f.eval(x))))
    } else {
        Ok(integrals_split(ctx, f, &breaks))
    }
}

fn pred_from(ctx: &ModelContext, it: RiskIntegrals) -> Result<RiskBreakdown> {
    let m = &ctx.model;
    let s2 = m.sigma0_sq();
    let bias_spikes = m
        .spikes()
        .iter()
        .zip(&it.spike_lin)
        .map(|(s, l)| s.delta * s.alpha * s.alpha * l * l)
        .collect();
    RiskBreakdown::new(
        s2 * m.r() * m.r() * it.alpha_sq,
        bias_spikes,
        m.c() * s2 * m.sigma_eps_sq() * it.mp_var,
    )
}

fn est_from(ctx: &ModelContext, it: RiskIntegrals) -> Result<RiskBreakdown> {
    let m = &ctx.model;
    RiskBreakdown::new(m.r() * m.r() * it.alpha_sq, vec![0.0; m.s()], m.c() * m.sigma_eps_sq() * it.mp_var)
}

/// Limiting out-of-sample prediction risk of `f`.
pub fn limiting_pred_risk(ctx: &ModelContext, f: &ShrinkageFn) -> Result<RiskBreakdown> {
    let it = integrals(ctx, f)?;
    pred_from(ctx, it)
}

/// Limiting estimation risk `‖β̂ − β₀‖²` of `f`.
pub fn limiting_est_risk(ctx: &ModelContext, f: &ShrinkageFn) -> Result<RiskBreakdown> {
    let it = integrals(ctx, f)?;
    est_from(ctx, it)
}

/// Prediction risk of a rule given by its values at the context's support points.
pub fn pred_risk_tabulated(ctx: &ModelContext, values: &[f64]) -> Result<RiskBreakdown> {
    if values.len() != ctx.n_points() {
        return Err(Error::Argument("values must cover every support point".into()));
    }
    pred_from(ctx, integrals_tabulated(ctx, values))
}

/// Estimation risk of a rule given by its values at the context's support points.
pub fn est_risk_tabulated(ctx: &ModelContext, values: &[f64]) -> Result<RiskBreakdown> {
    if values.len() != ctx.n_points() {
        return Err(Error::Argument("values must cover every support point".into()));
    }
    est_from(ctx, integrals_tabulated(ctx, values))
}

/// Default ramp width for surrogates: a thousandth of the bulk width.
pub fn default_ramp_width(model: &SpikedModel) -> f64 {
    let (a, b) = mp_support(model);
    1e-3 * (b - a)
}

/// Smooth stand-in for the minimum-norm interpolator.
///
/// The ramp fills the middle half of `(0, a)`: it is zero up to `a/4` and
/// equals `1/x` from `3a/4` on, so on the support it is `1/x` except at the
/// zero atom.
pub fn min_norm_surrogate(model: &SpikedModel) -> Result<ShrinkageFn> {
    let (a, _) = mp_support(model);
    if model.c() == 1.0 || a <= 0.0 {
        return Err(Error::Unsupported("the min-norm interpolator has infinite limiting risk at c = 1".into()));
    }
    Ok(ShrinkageFn::MinNormSurrogate { cut: 0.5 * a, ramp_width: 0.5 * a })
}

/// Smooth stand-in for PCR keeping the top fraction `tau` of the bulk.
pub fn pcr_surrogate(model: &SpikedModel, tau: f64, ramp_width: Option<f64>) -> Result<ShrinkageFn> {
    let cap = 1.0f64.min(1.0 / model.c());
    if !(tau > 0.0 && tau < cap) {
        return Err(Error::Domain(format!("tau = {tau} must lie in (0, {cap})")));
    }
    let threshold = mp_quantile_inverse(model, tau)?;
    let ramp_width = ramp_width.unwrap_or_else(|| default_ramp_width(model));
    Ok(ShrinkageFn::PcrSurrogate { threshold, ramp_width })
}

/// PCR keeping only the outlier components: `1/x` at every outlier, zero on
/// the bulk and at the origin.
pub fn pcr_outliers(model: &SpikedModel) -> ShrinkageFn {
    let (_, b) = mp_support(model);
    let lowest = model
        .spikes()
        .iter()
        .filter(|s| model.above_bbp(s.delta))
        .map(|s| (s.delta + model.sigma0_sq()) * (s.delta + model.c() * model.sigma0_sq()) / s.delta)
        .fold(f64::INFINITY, f64::min);
    let gap = if lowest.is_finite() { lowest - b } else { b };
    ShrinkageFn::PcrSurrogate { threshold: b + 0.5 * gap, ramp_width: 0.5 * gap }
}

/// The surrogate rules of the non-optimal estimators.
#[derive(Debug, Clone)]
pub struct NamedSurrogates {
    model: SpikedModel,
    /// `None` when `c = 1`.
    pub min_norm: Option<ShrinkageFn>,
}

impl NamedSurrogates {
    pub fn pcr(&self, tau: f64) -> Result<ShrinkageFn> {
        pcr_surrogate(&self.model, tau, None)
    }

    pub fn pcr_outliers(&self) -> ShrinkageFn {
        pcr_outliers(&self.model)
    }
}

pub fn named_surrogates(model: &SpikedModel) -> NamedSurrogates {
    NamedSurrogates { model: model.clone(), min_norm: min_norm_surrogate(model).ok() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ridge_value() {
        assert_eq!(ShrinkageFn::Ridge { lambda: 0.5 }.eval(1.5), 0.5);
        assert_eq!(ShrinkageFn::Ridge { lambda: -2.0 }.eval(2.0), 0.0);
    }

    #[test]
    fn sd_limits() {
        let p = SdParams::new(vec![0.7, 1.3], vec![0.0]).unwrap();
        let x = 2.2;
        assert!((sd_eval(&p, x) - 1.0 / (x + 1.3)).abs() < 1e-15);
        let p = SdParams::new(vec![0.7, 1.3], vec![1.0]).unwrap();
        assert!((sd_eval(&p, x) - x / ((x + 1.3) * (x + 0.7))).abs() < 1e-15);
        let p = SdParams::new(vec![0.7], vec![]).unwrap();
        assert_eq!(sd_eval(&p, x), ShrinkageFn::Ridge { lambda: 0.7 }.eval(x));
    }

    #[test]
    fn gd_matches_sum() {
        for &x in &[0.0, 1e-9, 0.3, 4.0] {
            let direct: f64 = (0..50).map(|k| 0.1 * (1.0f64 - 0.1 * x).powi(k)).sum();
            assert!((gd_eval(0.1, 50, x) - direct).abs() < 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn sd_params_shape() {
        assert!(SdParams::new(vec![], vec![]).is_err());
        assert!(SdParams::new(vec![1.0], vec![0.5]).is_err());
    }
}
