//! Federated aggregation: `K` clients fit the same spectral rule on
//! independent samples and a server averages them with weights `ρ_ℓ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::ModelContext;
use crate::optimal::{assemble_rule, denominator_roots, solve_gram, synthesize_sd_params, RationalRule};
use crate::shrinkage::{SdParams, ShrinkageFn};
use crate::spectra::{mp_measure, spiked_measure, SpectralMeasure, SpikedModel};

/// Name reported when the leading aggregation coefficient vanishes.
pub const B0_NONZERO: &str = "b0_nonzero";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedOptimum {
    pub k: usize,
    /// `b^(K)`.
    pub b: Vec<f64>,
    pub rho_star: f64,
    /// Optimal aggregate rule `f_K*`; its gain is `ρ*`.
    pub f_k: RationalRule,
    /// Rule each client applies, `f_K*/ρ*`.
    pub local_rule: RationalRule,
    pub sd_params: SdParams,
}

/// `𝔇_K = diag(σ₀²r²ω₀(K−1), ((K−1)σ₀² + Kδ_j)α_j²)`.
fn federated_diag(ctx: &ModelContext, k: usize) -> Vec<f64> {
    let m = &ctx.model;
    let s2 = m.sigma0_sq();
    let km1 = k as f64 - 1.0;
    let mut d = vec![s2 * m.r() * m.r() * ctx.weights.omega0 * km1];
    d.extend(m.spikes().iter().map(|sp| (km1 * s2 + k as f64 * sp.delta) * sp.alpha * sp.alpha));
    d
}

/// `b^(K)` solving `(I + 𝔇_K H) b = γ`.
pub fn federated_coefficients(ctx: &ModelContext, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Argument("K must be at least 1".into()));
    }
    let gram = ctx.gram_system()?;
    solve_gram(&gram.h, &federated_diag(ctx, k), &gram.gamma)
}

/// The `K`-client optimum, its split into `(ρ*, local rule)` and the local
/// rule's self-distillation parameters.
pub fn federated_optimum(ctx: &ModelContext, k: usize) -> Result<FederatedOptimum> {
    let b = federated_coefficients(ctx, k)?;
    let gamma = crate::measures::gram_rhs(&ctx.model, &ctx.weights);
    let gnorm = gamma.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !(b[0].abs() >= 1e-10 * gnorm) {
        return Err(Error::Assumption {
            name: B0_NONZERO,
            detail: format!("b0^(K) = {:e} vanishes for K = {k}; the aggregation weight is undefined", b[0]),
        });
    }
    let m = &ctx.model;
    let rho_star = b[0] / (m.sigma0_sq() * m.r() * m.r() * ctx.weights.omega0);
    let roots = denominator_roots(ctx)?;
    let f_k = assemble_rule(ctx, &b, &roots)?;
    let local_rule = f_k.normalized();
    let sd_params = synthesize_sd_params(&local_rule)?;
    Ok(FederatedOptimum { k, b, rho_star, f_k, local_rule, sd_params })
}

/// `σ₀²r²ω₀`, the large-noise limit of `b₀^(K)`, with the check values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B0NoiseLimit {
    pub limit: f64,
    /// `|b₀^(K)(σ_ε² = 10³) − limit|`.
    pub gap_1e3: f64,
    /// `|b₀^(K)(σ_ε² = 10⁶) − limit|`.
    pub gap_1e6: f64,
}

pub fn b0_noise_limit(model: &SpikedModel, k: usize, n_nodes: usize) -> Result<B0NoiseLimit> {
    let ctx = ModelContext::with_nodes(model, n_nodes)?;
    let limit = model.sigma0_sq() * model.r() * model.r() * ctx.weights.omega0;
    let gap = |v: f64| -> Result<f64> {
        let c = ModelContext::with_nodes(&model.with_sigma_eps_sq(v)?, n_nodes)?;
        Ok((federated_coefficients(&c, k)?[0] - limit).abs())
    };
    let (gap_1e3, gap_1e6) = (gap(1e3)?, gap(1e6)?);
    if gap_1e6 > gap_1e3 {
        return Err(Error::Numerical(format!(
            "b0^(K) does not approach its large-noise limit: gaps {gap_1e3:e} then {gap_1e6:e}"
        )));
    }
    Ok(B0NoiseLimit { limit, gap_1e3, gap_1e6 })
}

fn integrate(m: &SpectralMeasure, f: &ShrinkageFn, n_nodes: usize, model: &SpikedModel) -> Result<f64> {
    let breaks = f.breakpoints();
    let v = if breaks.is_empty() {
        let rule = crate::spectra::make_quadrature(model, n_nodes)?;
        m.integrate(&rule, |x| f.eval(x))
    } else {
        m.integrate_split(|x| f.eval(x), &breaks)
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical("non-finite integral in the product-form limit".into()))
    }
}

/// `ω₀ ∫φ dF_MP,c_l ∫ψ dF_MP,c_k + Σ ω_j ∫φ dF_δj,c_l ∫ψ dF_δj,c_k`: the limit
/// of `β₀ᵀφ(Σ̂_ℓ)ψ(Σ̂_k)β₀/‖β₀‖²` for independent clients with aspect
/// ratios `c_l` and `c_k`.
pub fn product_form_limit(
    model: &SpikedModel,
    phi: &ShrinkageFn,
    psi: &ShrinkageFn,
    c_l: f64,
    c_k: f64,
    n_nodes: usize,
) -> Result<f64> {
    let ml = model.with_c(c_l)?;
    let mk = model.with_c(c_k)?;
    let w = crate::measures::mixture_weights(model);
    let mut total = w.omega0 * integrate(&mp_measure(&ml), phi, n_nodes, &ml)? * integrate(&mp_measure(&mk), psi, n_nodes, &mk)?;
    for (sp, &om) in model.spikes().iter().zip(&w.omegas) {
        total += om
            * integrate(&spiked_measure(&ml, sp.delta)?, phi, n_nodes, &ml)?
            * integrate(&spiked_measure(&mk, sp.delta)?, psi, n_nodes, &mk)?;
    }
    Ok(total)
}

/// Limiting prediction risk of `Σ_ℓ ρ_ℓ β̂_ℓ` where client `ℓ` applies
/// `rules[ℓ]` to its own sample of the common aspect ratio.
///
/// Expanded in the weighted inner product with `f̃_ℓ = Kρ_ℓ f_ℓ`; the
/// expansion is `K²` times the risk, which is what gets divided out.
pub fn federated_risk(ctx: &ModelContext, k: usize, rules: &[ShrinkageFn], rhos: &[f64]) -> Result<f64> {
    if k == 0 || rules.len() != k || rhos.len() != k {
        return Err(Error::Argument(format!(
            "need K = {k} rules and weights, got {} and {}",
            rules.len(),
            rhos.len()
        )));
    }
    for f in rules {
        f.validate(ctx)?;
    }
    let m = &ctx.model;
    let s = m.s();
    let s2 = m.sigma0_sq();
    let r2 = m.r() * m.r();
    let kf = k as f64;
    let g = ctx.g_values();
    let hs: Vec<Vec<f64>> = (0..=s).map(|j| ctx.h_values(j)).collect();

    let mut quad = 0.0;
    let mut lin = 0.0;
    // proj[j][ℓ] = ⟨h_j, f̃_ℓ⟩_w
    let mut proj = vec![Vec::with_capacity(k); s + 1];
    for (f, &rho) in rules.iter().zip(rhos) {
        let ft = ctx.tabulate(|x| kf * rho * f.eval(x));
        quad += ctx.inner_w(&ft, &ft)?;
        lin += ctx.inner_w(&g, &ft)?;
        for j in 0..=s {
            proj[j].push(ctx.inner_w(&hs[j], &ft)?);
        }
    }
    let cross = |v: &[f64]| {
        let sum: f64 = v.iter().sum();
        0.5 * (sum * sum - v.iter().map(|a| a * a).sum::<f64>())
    };
    let mut total = quad - 2.0 * kf * lin + 2.0 * s2 * r2 * ctx.weights.omega0 * cross(&proj[0]);
    let mut constant = s2 * r2;
    for (j, sp) in m.spikes().iter().enumerate() {
        let a2 = sp.alpha * sp.alpha;
        let sum: f64 = proj[j + 1].iter().sum();
        total += 2.0 * s2 * a2 * cross(&proj[j + 1]) + sp.delta * a2 * sum * sum;
        constant += sp.delta * a2;
    }
    total += kf * kf * constant;
    let risk = total / (kf * kf);
    if risk.is_finite() {
        Ok(risk)
    } else {
        Err(Error::Numerical("federated risk is not finite".into()))
    }
}
