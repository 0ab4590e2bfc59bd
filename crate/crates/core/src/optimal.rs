//! Optimal prediction and estimation rules and their self-distillation
//! realisations.
//!
//! Both optimal rules are `Q/P` with `P` monic of degree `s+1` and `Q` monic
//! of degree `s`. The roots of `P` are bracketed by the outlier locations,
//! which is what makes the root search and the SD synthesis robust.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::ModelContext;
use crate::poly::Poly;
use crate::shrinkage::{in_support, SdParams, ShrinkageFn};
use crate::spectra::SpikedModel;

/// Relative distance below which two outlier locations count as coincident.
const OUTLIER_DEGENERACY: f64 = 1e-9;

/// Largest fixed-point residual accepted before reporting a numerical failure.
const FIXED_POINT_LIMIT: f64 = 1e-6;

/// Partial sums below this fraction of `Σ|t_i|` make an ordering inadmissible.
const PARTIAL_SUM_RTOL: f64 = 1e-8;

/// Solution of the Gram system and its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalCoefficients {
    /// `b_0..b_s`.
    pub b: Vec<f64>,
    /// `A_j = ⟨f*, h_j⟩_w`.
    pub a: Vec<f64>,
    /// `max |𝒜f* − g|` over the support points.
    pub fixed_point_residual: f64,
}

/// `gain · Q(x) / P(x)` with monic `P` and `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalRule {
    pub p: Poly,
    pub q: Poly,
    /// Roots of `P`, ascending.
    pub roots: Vec<f64>,
    pub gain: f64,
}

impl RationalRule {
    pub fn eval(&self, x: f64) -> f64 {
        let den: f64 = self.roots.iter().map(|r| x - r).product();
        if den == 0.0 {
            0.0
        } else {
            self.gain * self.q.eval(x) / den
        }
    }

    pub fn to_shrinkage(&self) -> ShrinkageFn {
        ShrinkageFn::Rational { num: self.q.scale(self.gain), den: self.p.clone() }
    }

    /// Same rule with unit gain.
    pub fn normalized(&self) -> RationalRule {
        RationalRule { gain: 1.0, ..self.clone() }
    }

    pub fn coprime(&self) -> bool {
        coprimality_check(&self.q, &self.p)
    }
}

/// `Q⁰ = b₀ν + Σ b_j ν_{−j}` as a polynomial.
fn q0_poly(ctx: &ModelContext, b: &[f64]) -> Poly {
    ctx.rn
        .nu_minus
        .iter()
        .zip(&b[1..])
        .fold(ctx.rn.nu.scale(b[0]), |acc, (p, &bj)| acc.add(&p.scale(bj)))
}

/// `P⁰ = σ₀²r²x·D + cσ₀²σ_ε²ν` as a polynomial.
fn p0_poly(ctx: &ModelContext) -> Poly {
    let m = &ctx.model;
    let s2 = m.sigma0_sq();
    Poly::x()
        .mul(&ctx.rn.mix_den(&ctx.weights))
        .scale(s2 * m.r() * m.r())
        .add(&ctx.rn.nu.scale(m.c() * s2 * m.sigma_eps_sq()))
}

/// `P⁰(x)` in product form, accurate near the outliers.
fn p0_at(ctx: &ModelContext, x: f64) -> f64 {
    let m = &ctx.model;
    let s2 = m.sigma0_sq();
    s2 * m.r() * m.r() * x * ctx.rn.mix_den_at(&ctx.weights, x) + m.c() * s2 * m.sigma_eps_sq() * ctx.rn.nu_at(x)
}

/// Solve `(I + 𝔇H) b = γ` for a diagonal `𝔇`.
pub(crate) fn solve_gram(h: &DMatrix<f64>, diag: &[f64], gamma: &[f64]) -> Result<Vec<f64>> {
    let n = gamma.len();
    let mut m = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += diag[i] * h[(i, j)];
        }
    }
    let sol = m
        .lu()
        .solve(&DVector::from_column_slice(gamma))
        .ok_or_else(|| Error::Numerical("the Gram system I + DH is singular".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("the Gram system produced non-finite coefficients".into()));
    }
    Ok(sol.iter().copied().collect())
}

fn sorted_outliers(ctx: &ModelContext) -> Result<Vec<f64>> {
    let mut xs = ctx.rn.x_stars.clone();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite outlier"));
    for w in xs.windows(2) {
        if (w[1] - w[0]) <= OUTLIER_DEGENERACY * w[1] {
            return Err(Error::Structural(format!(
                "outlier locations {} and {} nearly coincide",
                w[0], w[1]
            )));
        }
    }
    Ok(xs)
}

/// Bisection on a sign change, then Newton steps kept inside the bracket.
fn bracketed_root(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Structural(format!("no sign change of P on [{lo}, {hi}]")));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || (hi - lo) <= 1e-10 * mid.abs().max(1e-300) {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..8 {
        let d = df(x);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        let next = x - f(x) / d;
        if !(next >= lo && next <= hi) || next == x {
            break;
        }
        x = next;
    }
    Ok(x)
}

/// The `s+1` real roots of the shared denominator, ascending.
///
/// Brackets: `(−B, 0)` for the negative root, `(x⋆_(i), x⋆_(i+1))` between
/// consecutive sorted outliers and `(x⋆_(s), B)` above, with `B` doubled
/// until the sign changes.
pub fn denominator_roots(ctx: &ModelContext) -> Result<Vec<f64>> {
    if !(ctx.model.sigma_eps_sq() > 0.0) {
        return Err(Error::Unsupported(
            "the optimal rule needs positive noise variance; with none its denominator vanishes at 0".into(),
        ));
    }
    let outliers = sorted_outliers(ctx)?;
    let p0 = p0_poly(ctx);
    let dp0 = p0.derivative();
    let f = |x: f64| p0_at(ctx, x);
    let df = |x: f64| dp0.eval(x);

    let mut brackets = Vec::with_capacity(outliers.len() + 1);
    let mut neg = -1.0;
    while f(neg) > 0.0 {
        neg *= 2.0;
        if neg < -1e300 {
            return Err(Error::Structural("no negative root of P".into()));
        }
    }
    brackets.push((neg, 0.0));
    for w in outliers.windows(2) {
        brackets.push((w[0], w[1]));
    }
    if let Some(&top) = outliers.last() {
        let base = f(top).signum();
        let mut up = 2.0 * top;
        while f(up).signum() == base {
            up *= 2.0;
            if up > 1e300 {
                return Err(Error::Structural("no root of P above the largest outlier".into()));
            }
        }
        brackets.push((top, up));
    }
    let roots = brackets
        .into_iter()
        .map(|(lo, hi)| bracketed_root(f, df, lo, hi))
        .collect::<Result<Vec<_>>>()?;
    for w in roots.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Structural("denominator roots are not distinct".into()));
        }
    }
    Ok(roots)
}

/// `Q⁰/P⁰` for coefficients `b`, split into gain and monic parts.
pub(crate) fn assemble_rule(ctx: &ModelContext, b: &[f64], roots: &[f64]) -> Result<RationalRule> {
    let q0 = q0_poly(ctx, b);
    let lead_p = p0_poly(ctx).leading();
    if q0.degree() != ctx.s() || q0.leading() == 0.0 {
        return Err(Error::Structural("numerator lost its leading term".into()));
    }
    Ok(RationalRule {
        p: Poly::from_roots(roots),
        q: q0.monic(),
        roots: roots.to_vec(),
        gain: q0.leading() / lead_p,
    })
}

/// `max |f + Σ δ_jα_j²⟨f,h_j⟩_w h_j − g|` over the support points, and the `A_j`.
pub fn fixed_point_residual(ctx: &ModelContext, f_vals: &[f64]) -> Result<(f64, Vec<f64>)> {
    let m = &ctx.model;
    let g = ctx.g_values();
    let hs: Vec<Vec<f64>> = (1..=m.s()).map(|j| ctx.h_values(j)).collect();
    let a = hs.iter().map(|h| ctx.inner_w(f_vals, h)).collect::<Result<Vec<_>>>()?;
    let mut worst: f64 = 0.0;
    for i in 0..ctx.n_points() {
        let mut v = f_vals[i] - g[i];
        for (j, s) in m.spikes().iter().enumerate() {
            v += s.delta * s.alpha * s.alpha * a[j] * hs[j][i];
        }
        worst = worst.max(v.abs());
    }
    Ok((worst, a))
}

/// The risk-minimising prediction rule `f*_pred`.
pub fn optimal_pred_rule(ctx: &ModelContext) -> Result<(RationalRule, OptimalCoefficients)> {
    let gram = ctx.gram_system()?;
    let mut diag = vec![0.0];
    diag.extend(ctx.model.spikes().iter().map(|s| s.delta * s.alpha * s.alpha));
    let b = solve_gram(&gram.h, &diag, &gram.gamma)?;
    let roots = denominator_roots(ctx)?;
    let rule = assemble_rule(ctx, &b, &roots)?;
    let f_vals = ctx.tabulate(|x| rule.eval(x));
    let (residual, a) = fixed_point_residual(ctx, &f_vals)?;
    if !(residual < FIXED_POINT_LIMIT) {
        return Err(Error::Numerical(format!("fixed-point residual {residual:e} of the optimal rule is too large")));
    }
    Ok((rule, OptimalCoefficients { b, a, fixed_point_residual: residual }))
}

/// The risk-minimising estimation rule `f*_est = r²D/(r²xD + cσ_ε²ν)`.
pub fn optimal_est_rule(ctx: &ModelContext) -> Result<RationalRule> {
    let m = &ctx.model;
    let r2 = m.r() * m.r();
    let d = ctx.rn.mix_den(&ctx.weights);
    let num = d.scale(r2);
    let den = Poly::x().mul(&d).scale(r2).add(&ctx.rn.nu.scale(m.c() * m.sigma_eps_sq()));
    let roots = denominator_roots(ctx)?;
    Ok(RationalRule { p: Poly::from_roots(&roots), q: num.monic(), roots, gain: num.leading() / den.leading() })
}

/// Ridge at `λ* = cσ_ε²/r²`, optimal when there are no spikes.
pub fn isotropic_optimal(model: &SpikedModel) -> Result<ShrinkageFn> {
    if model.s() != 0 {
        return Err(Error::Argument("the model has spikes; use optimal_pred_rule".into()));
    }
    Ok(ShrinkageFn::Ridge { lambda: model.c() * model.sigma_eps_sq() / (model.r() * model.r()) })
}

/// Structural checks on an optimal rule: one negative root, positive roots
/// interlacing the sorted outliers, no root on the limiting spectrum.
pub fn check_root_structure(ctx: &ModelContext, rule: &RationalRule) -> Result<()> {
    let s = ctx.s();
    if rule.roots.len() != s + 1 {
        return Err(Error::Structural(format!("expected {} roots, found {}", s + 1, rule.roots.len())));
    }
    if rule.roots.iter().filter(|&&r| r < 0.0).count() != 1 {
        return Err(Error::Structural("P must have exactly one negative root".into()));
    }
    let outliers = sorted_outliers(ctx)?;
    for (i, &g) in rule.roots[1..].iter().enumerate() {
        let above = g > outliers[i];
        let below = outliers.get(i + 1).is_none_or(|&next| g < next);
        if !(above && below) {
            return Err(Error::Structural(format!("root {g} does not interlace the outliers")));
        }
    }
    for &g in &rule.roots {
        if in_support(ctx, g) || g == 0.0 {
            return Err(Error::Structural(format!("root {g} lies on the limiting spectrum")));
        }
    }
    Ok(())
}

/// Result of the self-distillation synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdSynthesis {
    pub params: SdParams,
    /// Nested-product weights `t_0..t_s`; they sum to 1.
    pub t: Vec<f64>,
    /// Index into the ascending roots of `P` used at each stage.
    pub order: Vec<usize>,
}

/// `γ^e Π_{l<i} (γ − γ_l)` for the first `i` chosen roots.
fn nested_basis(gamma: f64, exp: usize, chosen: &[f64]) -> f64 {
    gamma.powi(exp as i32) * chosen.iter().map(|g| gamma - g).product::<f64>()
}

/// Write `Q/P` as an `s`-step self-distillation chain.
///
/// With roots `γ_0..γ_s` taken in some order, `Q(x) = Σ_i t_i x^{s−i} Π_{l<i}(x−γ_l)`
/// is triangular in the `t_i` when evaluated at the roots. The chain is then
/// `λ_i = −γ_i` and `ξ_i = S_{i−1}/S_i` with partial sums `S_i = t_0+…+t_i`.
///
/// Roots are tried largest first at every stage, so the teacher stages carry
/// the positive roots (negative `λ`) and the final stage the ridge-like
/// negative root. A root is skipped when it would make a partial sum
/// vanish; if every remaining root does, the one with the largest partial
/// sum is used.
pub fn synthesize_sd(rule: &RationalRule) -> Result<SdSynthesis> {
    let s = rule.q.degree();
    if rule.roots.len() != s + 1 || (rule.q.leading() - 1.0).abs() > 1e-12 {
        return Err(Error::Argument("synthesis needs monic Q of degree s and s+1 roots of P".into()));
    }
    let mut unused: Vec<usize> = (0..=s).rev().collect();
    let mut chosen: Vec<f64> = Vec::with_capacity(s + 1);
    let mut order = Vec::with_capacity(s + 1);
    let mut t: Vec<f64> = Vec::with_capacity(s + 1);
    let mut partial = 0.0;

    for k in 0..=s {
        let mut best: Option<(usize, f64)> = None;
        let mut pick: Option<(usize, f64)> = None;
        for (pos, &idx) in unused.iter().enumerate() {
            let g = rule.roots[idx];
            let mut resid = rule.q.eval(g);
            for (i, ti) in t.iter().enumerate() {
                resid -= ti * nested_basis(g, s - i, &chosen[..i]);
            }
            let tk = resid / nested_basis(g, s - k, &chosen);
            if !tk.is_finite() {
                continue;
            }
            let sum = partial + tk;
            let scale = t.iter().map(|v| v.abs()).sum::<f64>() + tk.abs();
            let ok = k == 0 || k == s || sum.abs() > PARTIAL_SUM_RTOL * scale.max(1e-300);
            if ok {
                pick = Some((pos, tk));
                break;
            }
            if best.is_none_or(|(_, b)| sum.abs() > (partial + b).abs()) {
                best = Some((pos, tk));
            }
        }
        let (pos, tk) = pick
            .or(best.filter(|&(_, b)| partial + b != 0.0))
            .ok_or_else(|| Error::Structural(format!("no admissible root at synthesis stage {k}")))?;
        let idx = unused.remove(pos);
        chosen.push(rule.roots[idx]);
        order.push(idx);
        t.push(tk);
        partial += tk;
    }
    if (partial - 1.0).abs() > 1e-6 {
        return Err(Error::Numerical(format!("nested-product weights sum to {partial}, expected 1")));
    }
    let lambdas: Vec<f64> = chosen.iter().map(|g| -g).collect();
    let mut xis = Vec::with_capacity(s);
    let mut prev = t[0];
    for ti in &t[1..] {
        let cur = prev + ti;
        xis.push(prev / cur);
        prev = cur;
    }
    Ok(SdSynthesis { params: SdParams::new(lambdas, xis)?, t, order })
}

/// Self-distillation parameters realising `Q/P`.
pub fn synthesize_sd_params(rule: &RationalRule) -> Result<SdParams> {
    Ok(synthesize_sd(rule)?.params)
}

fn poly_scale_at(p: &Poly, z: num_complex::Complex64) -> f64 {
    let r = z.norm();
    p.coeffs().iter().enumerate().map(|(k, c)| c.abs() * r.powi(k as i32)).sum()
}

/// `true` when `num` and `den` share no root.
///
/// A root `z` of either polynomial counts as shared when the other one
/// vanishes there to relative precision `1e−8`, measured against
/// `Σ |c_k| |z|^k`.
pub fn coprimality_check(num: &Poly, den: &Poly) -> bool {
    let shared = |roots_of: &Poly, other: &Poly| {
        roots_of.complex_roots().into_iter().any(|z| {
            let scale = poly_scale_at(other, z);
            scale > 0.0 && other.eval_complex(z).norm() <= 1e-8 * scale
        })
    };
    !(shared(den, num) || shared(num, den))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coprime_examples() {
        let lam = 0.7;
        let num = Poly::new(vec![lam, 1.0]);
        let den = num.mul(&num);
        assert!(!coprimality_check(&num, &den));
        assert!(coprimality_check(&Poly::one(), &num));
    }

    #[test]
    fn synthesis_of_ridge() {
        let rule = RationalRule { p: Poly::from_roots(&[-0.5]), q: Poly::one(), roots: vec![-0.5], gain: 1.0 };
        let p = synthesize_sd_params(&rule).unwrap();
        assert_eq!(p.lambdas, vec![0.5]);
        assert!(p.xis.is_empty());
    }
}
