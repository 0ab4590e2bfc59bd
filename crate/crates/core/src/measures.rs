//! Mixture measure `F_α`, Radon–Nikodym polynomials and the weighted
//! inner product that every risk functional reduces to.
//!
//! [`ModelContext`] fixes one set of support points per model: the bulk
//! quadrature nodes followed by the atoms of `F_α`. Each point carries its
//! weight under `F_MP`, every `F_δj` and `F_α`, together with cached values
//! of `μ_0..μ_s` and `w`. All integrals in the crate are dot products over
//! these points.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Poly;
use crate::spectra::{
    combined_measure, default_nodes, mp_support, rn_slope, MeasureSet, SpectralMeasure, SpikedModel,
};

/// Relative tolerance for recognising an outlier location.
const ATOM_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pub omega0: f64,
    pub omegas: Vec<f64>,
}

/// `ω₀ = 1 − Σα_j²/r²`, `ω_j = α_j²/r²`.
pub fn mixture_weights(model: &SpikedModel) -> MixtureWeights {
    let r2 = model.r() * model.r();
    let omegas: Vec<f64> = model.spikes().iter().map(|s| s.alpha * s.alpha / r2).collect();
    let omega0 = 1.0 - model.spikes().iter().map(|s| s.alpha * s.alpha).sum::<f64>() / r2;
    MixtureWeights { omega0, omegas }
}

/// `F_α = ω₀F_MP + Σ ω_j F_δj`.
pub fn mixture_measure(model: &SpikedModel) -> SpectralMeasure {
    let w = mixture_weights(model);
    let mut comps = vec![(w.omega0, 0.0)];
    comps.extend(model.spikes().iter().zip(&w.omegas).map(|(s, &o)| (o, s.delta)));
    combined_measure(model, &comps)
}

/// The affine factors `ν_j(x) = κ_j(x⋆_j − x)` and their products.
#[derive(Debug, Clone, PartialEq)]
pub struct RnPolynomials {
    pub slopes: Vec<f64>,
    pub x_stars: Vec<f64>,
    /// `ν = Π ν_j`.
    pub nu: Poly,
    /// `ν_{−j} = Π_{i≠j} ν_i`.
    pub nu_minus: Vec<Poly>,
}

pub fn rn_polynomials(model: &SpikedModel) -> RnPolynomials {
    let (s2, c) = (model.sigma0_sq(), model.c());
    let slopes: Vec<f64> = model.spikes().iter().map(|s| rn_slope(s2, c, s.delta)).collect();
    let x_stars = model.outliers();
    let factor = |j: usize| Poly::new(vec![slopes[j] * x_stars[j], -slopes[j]]);
    let s = slopes.len();
    let nu = (0..s).fold(Poly::one(), |acc, j| acc.mul(&factor(j)));
    let nu_minus = (0..s)
        .map(|j| (0..s).filter(|&i| i != j).fold(Poly::one(), |acc, i| acc.mul(&factor(i))))
        .collect();
    RnPolynomials { slopes, x_stars, nu, nu_minus }
}

impl RnPolynomials {
    pub fn nu_j(&self, j: usize, x: f64) -> f64 {
        self.slopes[j] * (self.x_stars[j] - x)
    }

    /// `ν(x)` in product form.
    pub fn nu_at(&self, x: f64) -> f64 {
        (0..self.slopes.len()).map(|j| self.nu_j(j, x)).product()
    }

    /// `ν_{−j}(x)` in product form.
    pub fn nu_minus_at(&self, j: usize, x: f64) -> f64 {
        (0..self.slopes.len()).filter(|&i| i != j).map(|i| self.nu_j(i, x)).product()
    }

    /// `D(x) = ω₀ν(x) + Σ ω_i ν_{−i}(x)`.
    pub fn mix_den_at(&self, w: &MixtureWeights, x: f64) -> f64 {
        w.omega0 * self.nu_at(x)
            + w.omegas.iter().enumerate().map(|(i, &o)| o * self.nu_minus_at(i, x)).sum::<f64>()
    }

    /// `D` as a polynomial.
    pub fn mix_den(&self, w: &MixtureWeights) -> Poly {
        self.nu_minus
            .iter()
            .zip(&w.omegas)
            .fold(self.nu.scale(w.omega0), |acc, (p, &o)| acc.add(&p.scale(o)))
    }
}

/// Where a support point comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Bulk,
    Zero,
    /// Outlier atom of spike `j`.
    Outlier(usize),
}

/// The Gram system `(I + 𝔇H) b = γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSystem {
    pub h: DMatrix<f64>,
    pub gamma: Vec<f64>,
}

/// A model together with its support points and cached weights.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub model: SpikedModel,
    pub measures: MeasureSet,
    pub mixture: SpectralMeasure,
    pub weights: MixtureWeights,
    pub rn: RnPolynomials,
    /// Locations: bulk nodes first, then atoms.
    pub xs: Vec<f64>,
    pub kinds: Vec<PointKind>,
    /// Weight of each point under `F_MP`.
    pub w_mp: Vec<f64>,
    /// `w_spike[j][i]`: weight of point `i` under `F_δj`.
    pub w_spike: Vec<Vec<f64>>,
    /// Weight of each point under `F_α`.
    pub w_alpha: Vec<f64>,
    /// `mu[j][i] = μ_j(x_i)` for `j = 0..=s`.
    pub mu: Vec<Vec<f64>>,
    /// `w(x_i)`.
    pub w: Vec<f64>,
}

impl ModelContext {
    /// Context with the default node count.
    pub fn new(model: &SpikedModel) -> Result<Self> {
        Self::with_nodes(model, default_nodes())
    }

    pub fn with_nodes(model: &SpikedModel, n_nodes: usize) -> Result<Self> {
        let measures = MeasureSet::new(model, n_nodes)?;
        let mixture = mixture_measure(model);
        let weights = mixture_weights(model);
        let rn = rn_polynomials(model);
        let s = model.s();
        let rule = measures.rule.clone();

        let mut xs = rule.nodes.clone();
        let mut kinds = vec![PointKind::Bulk; xs.len()];
        let mut w_mp = measures.mp.bulk_weights(&rule);
        let mut w_spike: Vec<Vec<f64>> = measures.spiked.iter().map(|m| m.bulk_weights(&rule)).collect();
        let mut w_alpha = mixture.bulk_weights(&rule);

        let zero_mp = atom_at(&measures.mp, 0.0);
        if zero_mp > 0.0 {
            xs.push(0.0);
            kinds.push(PointKind::Zero);
            w_mp.push(zero_mp);
            for (j, m) in measures.spiked.iter().enumerate() {
                w_spike[j].push(atom_at(m, 0.0));
            }
            w_alpha.push(atom_at(&mixture, 0.0));
        }
        for (j, m) in measures.spiked.iter().enumerate() {
            let xj = rn.x_stars[j];
            let mass = atom_at(m, xj);
            if mass > 0.0 {
                xs.push(xj);
                kinds.push(PointKind::Outlier(j));
                w_mp.push(0.0);
                for (i, ws) in w_spike.iter_mut().enumerate() {
                    ws.push(if i == j { mass } else { 0.0 });
                }
                w_alpha.push(weights.omegas[j] * mass);
            }
        }

        let mut mu = vec![Vec::with_capacity(xs.len()); s + 1];
        let mut w = Vec::with_capacity(xs.len());
        for (&x, &kind) in xs.iter().zip(&kinds) {
            let vals = mu_values(&rn, &weights, x, kind);
            w.push(weight_from_mu0(model, x, vals[0]));
            for (j, v) in vals.into_iter().enumerate() {
                mu[j].push(v);
            }
        }

        Ok(ModelContext {
            model: model.clone(),
            measures,
            mixture,
            weights,
            rn,
            xs,
            kinds,
            w_mp,
            w_spike,
            w_alpha,
            mu,
            w,
        })
    }

    pub fn s(&self) -> usize {
        self.model.s()
    }

    pub fn n_points(&self) -> usize {
        self.xs.len()
    }

    /// Values of `f` at every support point.
    pub fn tabulate(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.xs.iter().map(|&x| f(x)).collect()
    }

    /// Classify `x` as a point of `S_c⁺ = [a, b] ∪ {0} ∪ {x⋆_j above BBP}`.
    pub fn classify(&self, x: f64) -> Result<PointKind> {
        let (a, b) = mp_support(&self.model);
        if x == 0.0 {
            return Ok(PointKind::Zero);
        }
        let tol = ATOM_RTOL * b.max(1.0);
        if x >= a - tol && x <= b + tol {
            return Ok(PointKind::Bulk);
        }
        for (j, s) in self.model.spikes().iter().enumerate() {
            let xj = self.rn.x_stars[j];
            if self.model.above_bbp(s.delta) && (x - xj).abs() <= ATOM_RTOL * xj {
                return Ok(PointKind::Outlier(j));
            }
        }
        Err(Error::Domain(format!("x = {x} is outside the support [{a}, {b}] plus atoms")))
    }

    /// `g` at every support point.
    pub fn g_values(&self) -> Vec<f64> {
        let base = self.model.sigma0_sq() * self.model.r() * self.model.r();
        (0..self.n_points())
            .map(|i| {
                let spikes: f64 = self
                    .model
                    .spikes()
                    .iter()
                    .enumerate()
                    .map(|(j, s)| s.delta * s.alpha * s.alpha * self.mu[j + 1][i])
                    .sum();
                (base + spikes) / self.w[i]
            })
            .collect()
    }

    /// `h_j = μ_j / w` at every support point.
    pub fn h_values(&self, j: usize) -> Vec<f64> {
        self.mu[j].iter().zip(&self.w).map(|(m, w)| m / w).collect()
    }

    /// `⟨φ, ψ⟩_w = ∫ φψ·x·w dF_α` for tabulated arguments.
    pub fn inner_w(&self, phi: &[f64], psi: &[f64]) -> Result<f64> {
        if phi.len() != self.n_points() || psi.len() != self.n_points() {
            return Err(Error::Argument("tabulated functions must cover every support point".into()));
        }
        let mut acc = 0.0;
        for i in 0..self.n_points() {
            if self.kinds[i] == PointKind::Zero {
                continue;
            }
            acc += self.w_alpha[i] * self.xs[i] * self.w[i] * phi[i] * psi[i];
        }
        if acc.is_finite() {
            Ok(acc)
        } else {
            Err(Error::Numerical("non-finite weighted inner product".into()))
        }
    }

    /// `⟨φ, ψ⟩_w` for function handles.
    pub fn inner_w_fn(&self, phi: impl Fn(f64) -> f64, psi: impl Fn(f64) -> f64) -> Result<f64> {
        self.inner_w(&self.tabulate(phi), &self.tabulate(psi))
    }

    /// `H_ij = ⟨h_i, h_j⟩_w` and `γ`.
    pub fn gram_system(&self) -> Result<GramSystem> {
        let s = self.s();
        let hs: Vec<Vec<f64>> = (0..=s).map(|j| self.h_values(j)).collect();
        let mut h = DMatrix::zeros(s + 1, s + 1);
        for i in 0..=s {
            for j in i..=s {
                let v = self.inner_w(&hs[i], &hs[j])?;
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Ok(GramSystem { h, gamma: gram_rhs(&self.model, &self.weights) })
    }

    /// `μ_j(x)` for a point of `S_c⁺`.
    pub fn mu_j(&self, j: usize, x: f64) -> Result<f64> {
        if j > self.s() {
            return Err(Error::Argument(format!("index {j} exceeds the number of spikes")));
        }
        let kind = self.classify(x)?;
        Ok(mu_values(&self.rn, &self.weights, x, kind)[j])
    }

    /// `w(x) = σ₀²r²x + cσ₀²σ_ε²μ₀(x)`.
    pub fn weight_w(&self, x: f64) -> Result<f64> {
        let mu0 = self.mu_j(0, x)?;
        Ok(weight_from_mu0(&self.model, x, mu0))
    }

    /// `g(x) = (σ₀²r² + Σ δ_jα_j²μ_j(x)) / w(x)`.
    pub fn target_g(&self, x: f64) -> Result<f64> {
        let kind = self.classify(x)?;
        let mu = mu_values(&self.rn, &self.weights, x, kind);
        let m = &self.model;
        let num = m.sigma0_sq() * m.r() * m.r()
            + m.spikes().iter().enumerate().map(|(j, s)| s.delta * s.alpha * s.alpha * mu[j + 1]).sum::<f64>();
        Ok(num / weight_from_mu0(m, x, mu[0]))
    }

    /// `h_j(x) = μ_j(x)/w(x)`.
    pub fn basis_h(&self, j: usize, x: f64) -> Result<f64> {
        Ok(self.mu_j(j, x)? / self.weight_w(x)?)
    }
}

fn atom_at(m: &SpectralMeasure, loc: f64) -> f64 {
    m.atoms.iter().filter(|a| a.location == loc).map(|a| a.mass).sum()
}

fn weight_from_mu0(model: &SpikedModel, x: f64, mu0: f64) -> f64 {
    let s2 = model.sigma0_sq();
    s2 * model.r() * model.r() * x + model.c() * s2 * model.sigma_eps_sq() * mu0
}

/// `γ = (σ₀²r²ω₀, (δ_j+σ₀²)α_j²)`.
pub fn gram_rhs(model: &SpikedModel, w: &MixtureWeights) -> Vec<f64> {
    let s2 = model.sigma0_sq();
    let mut g = vec![s2 * model.r() * model.r() * w.omega0];
    g.extend(model.spikes().iter().map(|s| (s.delta + s2) * s.alpha * s.alpha));
    g
}

/// `(μ_0, μ_1, …, μ_s)` at `x`, exact at outlier atoms.
fn mu_values(rn: &RnPolynomials, w: &MixtureWeights, x: f64, kind: PointKind) -> Vec<f64> {
    let s = rn.slopes.len();
    if let PointKind::Outlier(j) = kind {
        let mut v = vec![0.0; s + 1];
        v[j + 1] = 1.0 / w.omegas[j];
        return v;
    }
    let d = rn.mix_den_at(w, x);
    let mut v = Vec::with_capacity(s + 1);
    v.push(rn.nu_at(x) / d);
    for j in 0..s {
        v.push(rn.nu_minus_at(j, x) / d);
    }
    v
}
