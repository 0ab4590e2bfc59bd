//! Finite-sample simulator for the spiked regression model.
//!
//! Randomness comes from ChaCha streams keyed by `(seed, replicate, role)`,
//! so a replicate's data does not depend on how replicates are scheduled
//! across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shrinkage::{SdParams, ShrinkageFn};
use crate::spectra::SpikedModel;

/// Pseudoinverse cutoff relative to the largest sample eigenvalue.
pub const PINV_RTOL: f64 = 1e-10;

/// Distribution of the entries of `Z` in `X = ZΣ^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EntryDist {
    Gaussian,
    Rademacher,
    /// Student t rescaled to unit variance; `df > 8`.
    StudentT { df: f64 },
}

impl EntryDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            EntryDist::Gaussian => rng.sample(StandardNormal),
            EntryDist::Rademacher => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            EntryDist::StudentT { df } => {
                let t: f64 = StudentT::new(df).expect("df validated").sample(rng);
                t * ((df - 2.0) / df).sqrt()
            }
        }
    }
}

/// Spike directions: drawn at random or supplied as columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeDirections {
    RandomOrthonormal,
    /// One length-`p` vector per spike; orthonormalised on use.
    Provided(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub model: SpikedModel,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub entry_dist: EntryDist,
    pub n_replicates: usize,
    pub spike_directions: SpikeDirections,
}

impl SimConfig {
    /// Gaussian entries, random directions.
    pub fn new(model: SpikedModel, n: usize, p: usize, seed: u64, n_replicates: usize) -> Self {
        SimConfig {
            model,
            n,
            p,
            seed,
            entry_dist: EntryDist::Gaussian,
            n_replicates,
            spike_directions: SpikeDirections::RandomOrthonormal,
        }
    }

    /// Check the configuration; returns warnings that do not prevent a run.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.n == 0 || self.p == 0 || self.n_replicates == 0 {
            return Err(Error::Argument("n, p and n_replicates must be positive".into()));
        }
        if self.model.s() >= self.p {
            return Err(Error::Argument("need more features than spikes".into()));
        }
        if let EntryDist::StudentT { df } = self.entry_dist {
            if !(df > 8.0) {
                return Err(Error::Argument(format!("student_t needs df > 8 for the moment condition, got {df}")));
            }
        }
        if let SpikeDirections::Provided(cols) = &self.spike_directions {
            if cols.len() != self.model.s() || cols.iter().any(|c| c.len() != self.p) {
                return Err(Error::Argument("provided spike directions must be s vectors of length p".into()));
            }
        }
        let ratio = self.p as f64 / self.n as f64;
        let mut warnings = Vec::new();
        if (ratio - self.model.c()).abs() > 0.01 {
            warnings.push(format!("p/n = {ratio} differs from c = {} by more than 0.01", self.model.c()));
        }
        Ok(warnings)
    }
}

/// Stream roles within one replicate.
const ROLE_DIRECTIONS: u64 = 0;
const ROLE_RESIDUAL: u64 = 1;
/// Client `ℓ` uses roles `ROLE_CLIENT + 2ℓ` (design) and `+ 1` (noise).
const ROLE_CLIENT: u64 = 2;

fn stream(seed: u64, replicate: u64, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replicate << 24) | role);
    rng
}

/// One simulated data set.
#[derive(Debug, Clone)]
pub struct SimData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta0: DVector<f64>,
    /// `p × s`, orthonormal columns.
    pub v: DMatrix<f64>,
}

fn gram_schmidt(mut v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    for j in 0..v.ncols() {
        for i in 0..j {
            let proj = v.column(i).dot(&v.column(j));
            let ci = v.column(i).clone_owned();
            v.column_mut(j).axpy(-proj, &ci, 1.0);
        }
        let norm = v.column(j).norm();
        if !(norm > 1e-12) {
            return Err(Error::Argument("spike directions are linearly dependent".into()));
        }
        v.column_mut(j).scale_mut(1.0 / norm);
    }
    Ok(v)
}

/// Spike directions and `β₀` shared by every client of a replicate.
pub fn draw_truth(cfg: &SimConfig, replicate: u64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (p, s) = (cfg.p, cfg.model.s());
    let raw = match &cfg.spike_directions {
        SpikeDirections::RandomOrthonormal => {
            let mut rng = stream(cfg.seed, replicate, ROLE_DIRECTIONS);
            DMatrix::from_fn(p, s, |_, _| rng.sample::<f64, _>(StandardNormal))
        }
        SpikeDirections::Provided(cols) => DMatrix::from_fn(p, s, |i, j| cols[j][i]),
    };
    let v = gram_schmidt(raw)?;

    let mut rng = stream(cfg.seed, replicate, ROLE_RESIDUAL);
    let mut u = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let coef = v.transpose() * &u;
    u -= &v * coef;
    let norm = u.norm();
    let alpha2: f64 = cfg.model.spikes().iter().map(|s| s.alpha * s.alpha).sum();
    let rest = (cfg.model.r() * cfg.model.r() - alpha2).sqrt();
    let mut beta0 = u * (rest / norm);
    for (j, sp) in cfg.model.spikes().iter().enumerate() {
        beta0.axpy(sp.alpha, &v.column(j).clone_owned(), 1.0);
    }
    Ok((beta0, v))
}

/// Design and response for one client given the shared truth.
pub fn draw_sample(
    cfg: &SimConfig,
    replicate: u64,
    client: u64,
    beta0: &DVector<f64>,
    v: &DMatrix<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let (n, p) = (cfg.n, cfg.p);
    let m = &cfg.model;
    let sigma0 = m.sigma0_sq().sqrt();
    let mut rng = stream(cfg.seed, replicate, ROLE_CLIENT + 2 * client);
    let z = DMatrix::from_fn(n, p, |_, _| cfg.entry_dist.sample(&mut rng));
    // X = Z Σ^{1/2} with Σ^{1/2} = σ₀I + Σ_j (√(δ_j+σ₀²) − σ₀) v_j v_jᵀ.
    let mut x = &z * sigma0;
    for (j, sp) in m.spikes().iter().enumerate() {
        let scale = (sp.delta + m.sigma0_sq()).sqrt() - sigma0;
        let vj = v.column(j);
        let zv = &z * vj;
        x.ger(scale, &zv, &vj.clone_owned(), 1.0);
    }
    let mut rng = stream(cfg.seed, replicate, ROLE_CLIENT + 2 * client + 1);
    let noise_sd = m.sigma_eps_sq().sqrt();
    let noise = DVector::from_fn(n, |_, _| noise_sd * rng.sample::<f64, _>(StandardNormal));
    let y = &x * beta0 + noise;
    (x, y)
}

/// Data set `replicate` of the configuration.
pub fn gen_data_replicate(cfg: &SimConfig, replicate: u64) -> Result<SimData> {
    cfg.validate()?;
    let (beta0, v) = draw_truth(cfg, replicate)?;
    let (x, y) = draw_sample(cfg, replicate, 0, &beta0, &v);
    Ok(SimData { x, y, beta0, v })
}

/// The first data set of the configuration.
pub fn gen_data(cfg: &SimConfig) -> Result<SimData> {
    gen_data_replicate(cfg, 0)
}

enum Basis {
    /// Eigenvectors of `Σ̂` as columns (used when `p ≤ n`).
    Primal(DMatrix<f64>),
    /// Eigenvectors `U` of `XXᵀ/n`; `Σ̂`'s are `Xᵀu_j/√(n d_j)`.
    Dual { u: DMatrix<f64>, x: DMatrix<f64> },
}

/// Eigendecomposition of `Σ̂ = XᵀX/n` restricted to its row space, with the
/// response already projected onto it.
pub struct SampleSpectrum {
    pub n: usize,
    pub p: usize,
    /// Nonzero-space eigenvalues `d_j`, descending.
    pub evals: Vec<f64>,
    /// `w_jᵀXᵀy/n`.
    pub coords: Vec<f64>,
    basis: Basis,
}

impl SampleSpectrum {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(Error::Argument("y length must match the rows of X".into()));
        }
        let nf = n as f64;
        let (mat, dual) = if p > n {
            ((x * x.transpose()) / nf, true)
        } else {
            ((x.transpose() * x) / nf, false)
        };
        let dim = mat.nrows();
        let eig = mat.symmetric_eigen();
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("sample eigendecomposition failed".into()));
        }
        let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).expect("finite"));
        let evals: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let vecs = DMatrix::from_fn(dim, idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
        let lmax = evals.first().copied().unwrap_or(0.0);
        let (coords, basis) = if dual {
            let uy = vecs.transpose() * y;
            let coords = evals
                .iter()
                .zip(uy.iter())
                .map(|(&d, &v)| if d > PINV_RTOL * lmax { (d / nf).sqrt() * v } else { 0.0 })
                .collect();
            (coords, Basis::Dual { u: vecs, x: x.clone() })
        } else {
            let xty = x.transpose() * y / nf;
            let coords = (vecs.transpose() * xty).iter().copied().collect();
            (coords, Basis::Primal(vecs))
        };
        Ok(SampleSpectrum { n, p, evals, coords, basis })
    }

    pub fn lambda_max(&self) -> f64 {
        self.evals.first().copied().unwrap_or(0.0)
    }

    fn null_cut(&self) -> f64 {
        PINV_RTOL * self.lambda_max()
    }

    /// `Σ_j c_j w_j` over the nonzero eigen-directions.
    fn combine(&self, c: &[f64]) -> DVector<f64> {
        match &self.basis {
            Basis::Primal(w) => w * DVector::from_column_slice(c),
            Basis::Dual { u, x } => {
                let nf = self.n as f64;
                let cut = self.null_cut();
                let scaled = DVector::from_iterator(
                    c.len(),
                    c.iter()
                        .zip(&self.evals)
                        .map(|(&cj, &d)| if d > cut { cj / (nf * d).sqrt() } else { 0.0 }),
                );
                x.transpose() * (u * scaled)
            }
        }
    }

    /// `w_jᵀ v` for every nonzero eigen-direction.
    fn project(&self, v: &DVector<f64>) -> Vec<f64> {
        match &self.basis {
            Basis::Primal(w) => (w.transpose() * v).iter().copied().collect(),
            Basis::Dual { u, x } => {
                let nf = self.n as f64;
                let cut = self.null_cut();
                let ux = u.transpose() * (x * v);
                ux.iter()
                    .zip(&self.evals)
                    .map(|(&val, &d)| if d > cut { val / (nf * d).sqrt() } else { 0.0 })
                    .collect()
            }
        }
    }

    /// `β̂ = Σ_j f_j · w_j w_jᵀ Xᵀy/n` for per-direction multipliers `f_j`.
    /// Non-finite multipliers contribute nothing.
    fn fit_multipliers(&self, mult: impl Fn(usize, f64) -> f64) -> DVector<f64> {
        let c: Vec<f64> = self
            .evals
            .iter()
            .enumerate()
            .zip(&self.coords)
            .map(|((j, &d), &z)| {
                let m = mult(j, d);
                if m.is_finite() {
                    m * z
                } else {
                    0.0
                }
            })
            .collect();
        self.combine(&c)
    }

    pub fn fit(&self, f: &ShrinkageFn) -> DVector<f64> {
        self.fit_multipliers(|_, d| f.eval(d))
    }

    /// Self-distillation by its stage recursion, run in the eigenbasis where
    /// `Σ̂` is diagonal.
    pub fn fit_sd(&self, params: &SdParams) -> DVector<f64> {
        let cut = self.null_cut();
        let pinv = |d: f64| if d.abs() < cut { 0.0 } else { 1.0 / d };
        let mut c: Vec<f64> = self
            .evals
            .iter()
            .zip(&self.coords)
            .map(|(&d, &z)| pinv(d + params.lambdas[0]) * z)
            .collect();
        for t in 1..=params.steps() {
            let (lam, xi) = (params.lambdas[t], params.xis[t - 1]);
            for (j, cj) in c.iter_mut().enumerate() {
                let d = self.evals[j];
                *cj = pinv(d + lam) * ((1.0 - xi) * self.coords[j] + xi * d * *cj);
            }
        }
        self.combine(&c)
    }

    /// Least squares on the top `m` sample principal components.
    pub fn fit_pcr(&self, m: usize) -> Result<DVector<f64>> {
        if m == 0 || m > self.n.min(self.p) {
            return Err(Error::Argument(format!("PCR needs 1 <= m <= min(n, p), got {m}")));
        }
        let cut = self.null_cut();
        Ok(self.fit_multipliers(|j, d| if j < m && d > cut { 1.0 / d } else { 0.0 }))
    }

    /// Minimum-norm interpolator `Σ̂⁺Xᵀy/n`.
    pub fn fit_minnorm(&self) -> DVector<f64> {
        let cut = self.null_cut();
        self.fit_multipliers(|_, d| if d > cut { 1.0 / d } else { 0.0 })
    }

    /// `f(Σ̂) v`, including the null space of `Σ̂` where `f` is `f(0)`.
    pub fn apply(&self, f: &ShrinkageFn, v: &DVector<f64>) -> DVector<f64> {
        let proj = self.project(v);
        match &self.basis {
            Basis::Primal(_) => {
                let c: Vec<f64> = proj.iter().zip(&self.evals).map(|(&w, &d)| f.eval(d) * w).collect();
                self.combine(&c)
            }
            Basis::Dual { .. } => {
                let f0 = f.eval(0.0);
                let c: Vec<f64> = proj.iter().zip(&self.evals).map(|(&w, &d)| (f.eval(d) - f0) * w).collect();
                v * f0 + self.combine(&c)
            }
        }
    }
}

/// A fitted coefficient vector with a label.
#[derive(Debug, Clone)]
pub struct FittedEstimator {
    pub label: String,
    pub coefficients: DVector<f64>,
}

pub fn fit_shrinkage(x: &DMatrix<f64>, y: &DVector<f64>, f: &ShrinkageFn) -> Result<FittedEstimator> {
    let sp = SampleSpectrum::new(x, y)?;
    Ok(FittedEstimator { label: format!("{f:?}"), coefficients: sp.fit(f) })
}

pub fn fit_sd(x: &DMatrix<f64>, y: &DVector<f64>, params: &SdParams) -> Result<FittedEstimator> {
    let sp = SampleSpectrum::new(x, y)?;
    Ok(FittedEstimator { label: "sd".into(), coefficients: sp.fit_sd(params) })
}

pub fn fit_pcr(x: &DMatrix<f64>, y: &DVector<f64>, m: usize) -> Result<FittedEstimator> {
    let sp = SampleSpectrum::new(x, y)?;
    Ok(FittedEstimator { label: format!("pcr_{m}"), coefficients: sp.fit_pcr(m)? })
}

pub fn fit_minnorm(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<FittedEstimator> {
    let sp = SampleSpectrum::new(x, y)?;
    Ok(FittedEstimator { label: "min_norm".into(), coefficients: sp.fit_minnorm() })
}

pub fn fit_gd(x: &DMatrix<f64>, y: &DVector<f64>, eta: f64, steps: usize) -> Result<FittedEstimator> {
    let sp = SampleSpectrum::new(x, y)?;
    let f = ShrinkageFn::GdPoly { eta, steps };
    Ok(FittedEstimator { label: format!("gd_{eta}_{steps}"), coefficients: sp.fit(&f) })
}

/// `‖β̂ − β₀‖²_Σ = σ₀²‖d‖² + Σ δ_j (v_jᵀd)²`.
pub fn sigma_risk(beta_hat: &DVector<f64>, beta0: &DVector<f64>, model: &SpikedModel, v: &DMatrix<f64>) -> f64 {
    let d = beta_hat - beta0;
    let mut risk = model.sigma0_sq() * d.norm_squared();
    for (j, s) in model.spikes().iter().enumerate() {
        let proj = v.column(j).dot(&d);
        risk += s.delta * proj * proj;
    }
    risk
}

/// `Σ_ℓ ρ_ℓ β̂_ℓ` over `rules.len()` clients sharing `β₀` and `V`; each client
/// draws its own design and noise from the replicate's client streams.
pub fn fit_aggregated(
    cfg: &SimConfig,
    replicate: u64,
    rules: &[ShrinkageFn],
    rhos: &[f64],
) -> Result<(FittedEstimator, DVector<f64>, DMatrix<f64>)> {
    if rules.len() != rhos.len() || rules.is_empty() {
        return Err(Error::Argument("need one weight per client rule".into()));
    }
    cfg.validate()?;
    let (beta0, v) = draw_truth(cfg, replicate)?;
    let mut agg = DVector::zeros(cfg.p);
    for (l, (f, &rho)) in rules.iter().zip(rhos).enumerate() {
        let (x, y) = draw_sample(cfg, replicate, l as u64, &beta0, &v);
        let sp = SampleSpectrum::new(&x, &y)?;
        agg.axpy(rho, &sp.fit(f), 1.0);
    }
    Ok((FittedEstimator { label: "aggregated".into(), coefficients: agg }, beta0, v))
}

/// An estimator the harness can fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    Shrinkage { rule: ShrinkageFn },
    Sd { params: SdParams },
    Pcr { m: usize },
    MinNorm,
    Gd { eta: f64, steps: usize },
}

impl EstimatorSpec {
    fn fit(&self, sp: &SampleSpectrum) -> Result<DVector<f64>> {
        Ok(match self {
            EstimatorSpec::Shrinkage { rule } => sp.fit(rule),
            EstimatorSpec::Sd { params } => sp.fit_sd(params),
            EstimatorSpec::Pcr { m } => sp.fit_pcr(*m)?,
            EstimatorSpec::MinNorm => sp.fit_minnorm(),
            EstimatorSpec::Gd { eta, steps } => sp.fit(&ShrinkageFn::GdPoly { eta: *eta, steps: *steps }),
        })
    }
}

/// Replicate summary for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub label: String,
    pub target: f64,
    pub mean: f64,
    pub std_error: f64,
    /// `(mean − target)/target`.
    pub rel_gap: f64,
    pub risks: Vec<f64>,
}

pub(crate) fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Fit every estimator on `n_replicates` independent data sets and compare
/// the replicate-averaged Σ-risk with its limiting target.
///
/// Replicates run in parallel; results are reduced in replicate order.
pub fn converge_harness(cfg: &SimConfig, estimators: &[(String, EstimatorSpec, f64)]) -> Result<Vec<HarnessReport>> {
    cfg.validate()?;
    let per_rep: Vec<Vec<f64>> = (0..cfg.n_replicates as u64)
        .into_par_iter()
        .map(|rep| -> Result<Vec<f64>> {
            let data = gen_data_replicate(cfg, rep)?;
            let sp = SampleSpectrum::new(&data.x, &data.y)?;
            estimators
                .iter()
                .map(|(_, spec, _)| Ok(sigma_risk(&spec.fit(&sp)?, &data.beta0, &cfg.model, &data.v)))
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(estimators
        .iter()
        .enumerate()
        .map(|(k, (label, _, target))| {
            let risks: Vec<f64> = per_rep.iter().map(|r| r[k]).collect();
            let (mean, std_error) = mean_stderr(&risks);
            HarnessReport {
                label: label.clone(),
                target: *target,
                mean,
                std_error,
                rel_gap: (mean - target) / target,
                risks,
            }
        })
        .collect())
}

/// Replicate-averaged `β₀ᵀφ(Σ̂_ℓ)ψ(Σ̂_k)β₀/‖β₀‖²` for two independent
/// clients with `n_l` and `n_k` samples.
pub fn product_form_mc(
    cfg: &SimConfig,
    n_l: usize,
    n_k: usize,
    phi: &ShrinkageFn,
    psi: &ShrinkageFn,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    let vals: Vec<f64> = (0..cfg.n_replicates as u64)
        .into_par_iter()
        .map(|rep| -> Result<f64> {
            let (beta0, v) = draw_truth(cfg, rep)?;
            let cfg_l = SimConfig { n: n_l, ..cfg.clone() };
            let cfg_k = SimConfig { n: n_k, ..cfg.clone() };
            let (xl, yl) = draw_sample(&cfg_l, rep, 0, &beta0, &v);
            let (xk, yk) = draw_sample(&cfg_k, rep, 1, &beta0, &v);
            let a = SampleSpectrum::new(&xl, &yl)?.apply(phi, &beta0);
            let b = SampleSpectrum::new(&xk, &yk)?.apply(psi, &beta0);
            Ok(a.dot(&b) / beta0.norm_squared())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_stderr(&vals))
}
