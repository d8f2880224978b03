//! Gaussian-process regression with an intrinsic coregionalization kernel.
//!
//! The covariance between output `i` at `a` and output `j` at `b` is
//! `B[i][j] * k(a, b)` where `k` is a Matérn-5/2 kernel with one lengthscale
//! per input dimension and `B = L Lᵀ` is parametrized by its lower-triangular
//! factor. Stacked vectors and Gram matrices are output-major: entry
//! `(i, u)` lives at `i * N + u`, so the noise covariance is block-diagonal.

mod fit;
mod nelder_mead;

pub use fit::{fit_map, FitOptions, FitOutcome};
pub use nelder_mead::{nelder_mead, NelderMeadResult};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::ControllerGains;

const SQRT5: f64 = 2.236_067_977_499_79;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal jitter schedule: start here, grow ×10 per failure.
pub const JITTER_START: f64 = 1e-8;
pub const JITTER_MAX: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_std: f64,
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty()
            || self
                .lengthscales
                .iter()
                .chain(std::iter::once(&self.signal_std))
                .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::invalid(
                "kernel lengthscales and signal std must be finite and > 0",
            ));
        }
        Ok(())
    }
}

/// Lower-triangular factor `L` of the output covariance `B = L Lᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoregionalizationMatrix {
    factor: Vec<Vec<f64>>,
}

impl CoregionalizationMatrix {
    /// Builds from the rows of `L`; entries above the diagonal must be zero.
    pub fn from_factor(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("coregionalization factor must be square"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) || row[i + 1..].iter().any(|v| *v != 0.0) {
                return Err(Error::invalid(
                    "coregionalization factor must be finite and lower-triangular",
                ));
            }
        }
        Ok(CoregionalizationMatrix { factor: rows })
    }

    pub fn identity(d: usize) -> Self {
        CoregionalizationMatrix {
            factor: (0..d)
                .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.factor.len()
    }

    pub fn factor(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.factor[i][j])
    }

    pub fn b(&self) -> DMatrix<f64> {
        let l = self.factor();
        &l * l.transpose()
    }

    /// Lower-triangular entries in row-major order.
    pub fn lower_entries(&self) -> Vec<f64> {
        (0..self.dim())
            .flat_map(|i| (0..=i).map(move |j| (i, j)))
            .map(|(i, j)| self.factor[i][j])
            .collect()
    }

    fn from_lower_entries(d: usize, entries: &[f64]) -> Self {
        let mut factor = vec![vec![0.0; d]; d];
        let mut k = 0;
        for (i, row) in factor.iter_mut().enumerate() {
            for v in row.iter_mut().take(i + 1) {
                *v = entries[k];
                k += 1;
            }
        }
        CoregionalizationMatrix { factor }
    }
}

/// Per-output observation noise variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoiseModel {
    pub per_output_variance: Vec<f64>,
}

/// Full hyperparameter set; serializes with keys `lengthscales`,
/// `signal_std`, `coreg_factor`, `noise_var`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    #[serde(flatten)]
    pub kernel: KernelParams,
    #[serde(rename = "coreg_factor")]
    pub coreg: CoregionalizationMatrix,
    #[serde(rename = "noise_var")]
    pub noise: NoiseModel,
}

impl GpHyperparams {
    pub fn output_dim(&self) -> usize {
        self.coreg.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.noise.per_output_variance.len() != self.coreg.dim() {
            return Err(Error::invalid(
                "noise model and coregionalization disagree on output count",
            ));
        }
        if self
            .noise
            .per_output_variance
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::invalid("noise variances must be finite and >= 0"));
        }
        Ok(())
    }

    /// Whether `B` is free. A single-output model keeps `B = [1]` and lets the
    /// signal std carry the scale.
    pub fn learns_coregionalization(&self) -> bool {
        self.output_dim() > 1
    }

    /// Number of free parameters in [`Self::to_vector`].
    pub fn n_free(input_dim: usize, output_dim: usize) -> usize {
        let coreg = if output_dim > 1 {
            output_dim * (output_dim + 1) / 2
        } else {
            0
        };
        input_dim + 1 + coreg + output_dim
    }

    /// Unconstrained coordinates: log lengthscales, log signal std, the
    /// lower-triangular entries of `L` (multi-output only), log noise variances.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.kernel.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.kernel.signal_std.ln());
        if self.learns_coregionalization() {
            v.extend(self.coreg.lower_entries());
        }
        v.extend(
            self.noise
                .per_output_variance
                .iter()
                .map(|n| n.max(1e-300).ln()),
        );
        v
    }

    pub fn from_vector(v: &[f64], input_dim: usize, output_dim: usize) -> Self {
        let mut k = 0;
        let mut take = |n: usize| {
            let s = &v[k..k + n];
            k += n;
            s
        };
        let lengthscales = take(input_dim).iter().map(|x| x.exp()).collect();
        let signal_std = take(1)[0].exp();
        let coreg = if output_dim > 1 {
            CoregionalizationMatrix::from_lower_entries(
                output_dim,
                take(output_dim * (output_dim + 1) / 2),
            )
        } else {
            CoregionalizationMatrix::identity(1)
        };
        let noise = NoiseModel {
            per_output_variance: take(output_dim).iter().map(|x| x.exp()).collect(),
        };
        GpHyperparams {
            kernel: KernelParams {
                lengthscales,
                signal_std,
            },
            coreg,
            noise,
        }
    }
}

/// Training data: controllers and their `D`-dimensional scaled observations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MultiOutputDataset {
    inputs: Vec<ControllerGains>,
    observations: Vec<Vec<f64>>,
    output_dim: usize,
    #[serde(default = "bounded_default")]
    bounded: bool,
}

fn bounded_default() -> bool {
    true
}

impl MultiOutputDataset {
    /// Dataset of scaled objectives; observations must lie in `[0, 1]`.
    pub fn new(output_dim: usize) -> Self {
        MultiOutputDataset {
            inputs: Vec::new(),
            observations: Vec::new(),
            output_dim,
            bounded: true,
        }
    }

    /// Dataset for general regression; observations need only be finite.
    pub fn unbounded(output_dim: usize) -> Self {
        MultiOutputDataset {
            bounded: false,
            ..Self::new(output_dim)
        }
    }

    pub fn push(&mut self, input: ControllerGains, observation: Vec<f64>) -> Result<()> {
        if observation.len() != self.output_dim {
            return Err(Error::invalid(format!(
                "observation has {} outputs, dataset expects {}",
                observation.len(),
                self.output_dim
            )));
        }
        if observation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observations must be finite"));
        }
        if self.bounded && observation.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("scaled observations must lie in [0, 1]"));
        }
        if input.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite controller gains"));
        }
        self.inputs.push(input);
        self.observations.push(observation);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn inputs(&self) -> &[ControllerGains] {
        &self.inputs
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.observations
    }

    /// Output-major concatenation of the observations.
    pub fn stacked_targets(&self) -> DVector<f64> {
        let n = self.len();
        DVector::from_fn(n * self.output_dim, |k, _| self.observations[k % n][k / n])
    }
}

/// Predictive mean and covariance over the outputs at one input.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorGaussian {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl PosteriorGaussian {
    pub fn std(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }
}

fn scaled_distance(a: &[f64], b: &[f64], lengthscales: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(lengthscales)
        .map(|((x, y), l)| {
            let d = (x - y) / l;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn matern52_at(r: f64, signal_var: f64) -> f64 {
    let s = SQRT5 * r;
    signal_var * (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Matérn-5/2 ARD kernel value.
pub fn matern52(a: &[f64], b: &[f64], p: &KernelParams) -> Result<f64> {
    if a.len() != b.len() || a.len() != p.lengthscales.len() {
        return Err(Error::invalid("kernel input dimensions disagree"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite kernel input"));
    }
    p.validate()?;
    let r = scaled_distance(a, b, &p.lengthscales);
    Ok(matern52_at(r, p.signal_std * p.signal_std))
}

/// ICM covariance `B[i][j] k(a, b)`.
pub fn icm_cov(
    a: &[f64],
    b: &[f64],
    i: usize,
    j: usize,
    p: &KernelParams,
    coreg: &CoregionalizationMatrix,
) -> Result<f64> {
    let d = coreg.dim();
    if i >= d || j >= d {
        return Err(Error::invalid(format!(
            "output index out of range for {d} outputs"
        )));
    }
    Ok(coreg.b()[(i, j)] * matern52(a, b, p)?)
}

/// Input Gram matrix `k(θ_u, θ_v)`.
pub fn input_gram(inputs: &[ControllerGains], p: &KernelParams) -> DMatrix<f64> {
    let n = inputs.len();
    let var = p.signal_std * p.signal_std;
    let mut k = DMatrix::zeros(n, n);
    for u in 0..n {
        k[(u, u)] = var;
        for v in 0..u {
            let val = matern52_at(
                scaled_distance(&inputs[u].0, &inputs[v].0, &p.lengthscales),
                var,
            );
            k[(u, v)] = val;
            k[(v, u)] = val;
        }
    }
    k
}

/// `B ⊗ K` in output-major order.
pub fn kron(b: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, n) = (b.nrows(), k.nrows());
    let mut out = DMatrix::zeros(d * n, d * n);
    for i in 0..d {
        for j in 0..d {
            let bij = b[(i, j)];
            out.view_mut((i * n, j * n), (n, n)).copy_from(&(k * bij));
        }
    }
    out
}

/// `B ⊗ K(θ,θ) + Σ ⊗ I_N`, without jitter.
pub fn noisy_gram(data: &MultiOutputDataset, hyper: &GpHyperparams) -> DMatrix<f64> {
    let n = data.len();
    let mut g = kron(&hyper.coreg.b(), &input_gram(data.inputs(), &hyper.kernel));
    for (i, nv) in hyper.noise.per_output_variance.iter().enumerate() {
        for u in 0..n {
            g[(i * n + u, i * n + u)] += nv;
        }
    }
    g
}

/// Cholesky factor with escalating diagonal jitter.
pub fn jittered_cholesky(mut g: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = JITTER_START;
    let mut added = 0.0;
    loop {
        for i in 0..g.nrows() {
            g[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Some(ch) = Cholesky::new(g.clone()) {
            return Ok((ch, jitter));
        }
        if jitter >= JITTER_MAX {
            return Err(Error::Numerical(format!(
                "Gram matrix of size {} not positive definite even with diagonal jitter {jitter:e}",
                g.nrows()
            )));
        }
        jitter *= 10.0;
    }
}

/// A Gaussian process conditioned on a dataset, ready for prediction.
#[derive(Clone, Debug)]
pub struct GpModel {
    inputs: Vec<ControllerGains>,
    hyper: GpHyperparams,
    b: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    pub fn condition(data: &MultiOutputDataset, hyper: &GpHyperparams) -> Result<Self> {
        hyper.validate()?;
        if data.output_dim() != hyper.output_dim() {
            return Err(Error::invalid(
                "dataset and hyperparameters disagree on output count",
            ));
        }
        let b = hyper.coreg.b();
        if data.is_empty() {
            return Ok(GpModel {
                inputs: Vec::new(),
                hyper: hyper.clone(),
                b,
                chol: None,
                alpha: DVector::zeros(0),
                jitter: 0.0,
            });
        }
        let (chol, jitter) = jittered_cholesky(noisy_gram(data, hyper))?;
        let alpha = chol.solve(&data.stacked_targets());
        Ok(GpModel {
            inputs: data.inputs().to_vec(),
            hyper: hyper.clone(),
            b,
            chol: Some(chol),
            alpha,
            jitter,
        })
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    /// Diagonal jitter that made the Gram matrix factorizable.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn predict(&self, q: &ControllerGains) -> PosteriorGaussian {
        let d = self.b.nrows();
        let var = self.hyper.kernel.signal_std.powi(2);
        let prior_cov = &self.b * var;
        let Some(chol) = &self.chol else {
            return PosteriorGaussian {
                mean: DVector::zeros(d),
                covariance: prior_cov,
            };
        };
        let n = self.inputs.len();
        let kq: Vec<f64> = self
            .inputs
            .iter()
            .map(|x| {
                matern52_at(
                    scaled_distance(&q.0, &x.0, &self.hyper.kernel.lengthscales),
                    var,
                )
            })
            .collect();
        // K_* as an (ND x D) matrix: column i holds the cross-covariances of output i
        let cross = DMatrix::from_fn(n * d, d, |row, i| self.b[(i, row / n)] * kq[row % n]);
        let mean = cross.transpose() * &self.alpha;
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&cross)
            .expect("Cholesky factor has a positive diagonal");
        let mut covariance = prior_cov - v.transpose() * v;
        // symmetrize away rounding
        let c = covariance.clone();
        covariance = (&c + c.transpose()) * 0.5;
        PosteriorGaussian { mean, covariance }
    }
}

/// Posterior at `q`; the prior when `data` is empty.
pub fn gp_posterior(
    data: &MultiOutputDataset,
    q: &ControllerGains,
    hyper: &GpHyperparams,
) -> Result<PosteriorGaussian> {
    Ok(GpModel::condition(data, hyper)?.predict(q))
}

/// Lognormal density parameters `(mu, sigma)` of the underlying normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogNormal {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormal {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = (x.ln() - self.mu) / self.sigma;
        -x.ln() - self.sigma.ln() - 0.5 * LN_2PI - 0.5 * z * z
    }

    /// Density of `ln x`, i.e. the normal `N(mu, sigma²)`; this is the
    /// lognormal density times the Jacobian `x` of the log transform.
    pub fn ln_pdf_of_log(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = (x.ln() - self.mu) / self.sigma;
        -self.sigma.ln() - 0.5 * LN_2PI - 0.5 * z * z
    }

    /// d/d(ln x) of [`Self::ln_pdf_of_log`]
    fn d_ln_pdf_of_log(&self, x: f64) -> f64 {
        -(x.ln() - self.mu) / (self.sigma * self.sigma)
    }

    pub fn median(&self) -> f64 {
        self.mu.exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normal {
    pub mean: f64,
    pub std: f64,
}

impl Normal {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        -self.std.ln() - 0.5 * LN_2PI - 0.5 * z * z
    }
}

/// Hyperpriors for MAP estimation. Noise variances carry a flat prior.
///
/// Positive parameters are optimized in log coordinates, and their prior
/// density is taken in those coordinates (the lognormal density times its
/// log-transform Jacobian). Without the Jacobian the `1/x` factor of the
/// lognormal rewards vanishing lengthscales and MAP collapses to white noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperpriors {
    pub lengthscale: LogNormal,
    pub signal_std: LogNormal,
    pub coreg_entry: Normal,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Hyperpriors {
            lengthscale: LogNormal {
                mu: 1.0,
                sigma: 3.0,
            },
            signal_std: LogNormal {
                mu: 0.35,
                sigma: 1.0,
            },
            coreg_entry: Normal {
                mean: 0.0,
                std: 1.0,
            },
        }
    }
}

impl Hyperpriors {
    pub fn ln_density(&self, hyper: &GpHyperparams) -> f64 {
        let mut lp: f64 = hyper
            .kernel
            .lengthscales
            .iter()
            .map(|l| self.lengthscale.ln_pdf_of_log(*l))
            .sum();
        lp += self.signal_std.ln_pdf_of_log(hyper.kernel.signal_std);
        if hyper.learns_coregionalization() {
            lp += hyper
                .coreg
                .lower_entries()
                .iter()
                .map(|v| self.coreg_entry.ln_pdf(*v))
                .sum::<f64>();
        }
        lp
    }

    /// Gradient of [`Self::ln_density`] in the coordinates of [`GpHyperparams::to_vector`].
    pub fn ln_density_gradient(&self, hyper: &GpHyperparams) -> Vec<f64> {
        let mut g: Vec<f64> = hyper
            .kernel
            .lengthscales
            .iter()
            .map(|l| self.lengthscale.d_ln_pdf_of_log(*l))
            .collect();
        g.push(self.signal_std.d_ln_pdf_of_log(hyper.kernel.signal_std));
        if hyper.learns_coregionalization() {
            let s2 = self.coreg_entry.std * self.coreg_entry.std;
            g.extend(
                hyper
                    .coreg
                    .lower_entries()
                    .iter()
                    .map(|v| -(v - self.coreg_entry.mean) / s2),
            );
        }
        g.extend(std::iter::repeat_n(0.0, hyper.output_dim()));
        g
    }

    /// Prior medians (identity factor for `B`).
    pub fn medians(&self, input_dim: usize, output_dim: usize, noise_var: f64) -> GpHyperparams {
        GpHyperparams {
            kernel: KernelParams {
                lengthscales: vec![self.lengthscale.median(); input_dim],
                signal_std: self.signal_std.median(),
            },
            coreg: CoregionalizationMatrix::identity(output_dim),
            noise: NoiseModel {
                per_output_variance: vec![noise_var; output_dim],
            },
        }
    }
}

/// Gaussian log marginal likelihood `log N(ȳ | 0, K + Σ)`.
pub fn log_marginal_likelihood(data: &MultiOutputDataset, hyper: &GpHyperparams) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid(
            "log marginal likelihood needs a nonempty dataset",
        ));
    }
    hyper.validate()?;
    let y = data.stacked_targets();
    let (chol, _) = jittered_cholesky(noisy_gram(data, hyper))?;
    let alpha = chol.solve(&y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let nd = y.len() as f64;
    Ok(-0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * nd * LN_2PI)
}

/// Log marginal likelihood plus log hyperprior density.
pub fn log_posterior_density(
    data: &MultiOutputDataset,
    hyper: &GpHyperparams,
    priors: &Hyperpriors,
) -> Result<f64> {
    Ok(log_marginal_likelihood(data, hyper)? + priors.ln_density(hyper))
}

/// Analytic gradient of [`log_marginal_likelihood`] in the coordinates of
/// [`GpHyperparams::to_vector`]: `½ tr((α αᵀ − K⁻¹) ∂K)` per coordinate.
pub fn log_marginal_likelihood_gradient(
    data: &MultiOutputDataset,
    hyper: &GpHyperparams,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::invalid("gradient needs a nonempty dataset"));
    }
    hyper.validate()?;
    let n = data.len();
    let d = hyper.output_dim();
    let y = data.stacked_targets();
    let (chol, _) = jittered_cholesky(noisy_gram(data, hyper))?;
    let alpha = chol.solve(&y);
    let w = &alpha * alpha.transpose() - chol.inverse();

    // S[i][j] = Σ_uv W_block(i,j)[u,v] M[u,v] for a given input matrix M
    let block_contract = |m: &DMatrix<f64>| -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |i, j| {
            w.view((i * n, j * n), (n, n)).component_mul(m).sum()
        })
    };
    let b = hyper.coreg.b();
    let contract_kron = |c: &DMatrix<f64>, m: &DMatrix<f64>| -> f64 {
        0.5 * block_contract(m).component_mul(c).sum()
    };

    let p = &hyper.kernel;
    let var = p.signal_std * p.signal_std;
    let inputs = data.inputs();
    let mut grad = Vec::with_capacity(GpHyperparams::n_free(p.lengthscales.len(), d));

    for (dim, l) in p.lengthscales.iter().enumerate() {
        let dk = DMatrix::from_fn(n, n, |u, v| {
            if u == v {
                return 0.0;
            }
            let r = scaled_distance(&inputs[u].0, &inputs[v].0, &p.lengthscales);
            let s = SQRT5 * r;
            let delta = (inputs[u].0[dim] - inputs[v].0[dim]) / l;
            var * (5.0 / 3.0) * (1.0 + s) * (-s).exp() * delta * delta
        });
        grad.push(contract_kron(&b, &dk));
    }
    let kx = input_gram(inputs, p);
    grad.push(contract_kron(&b, &(&kx * 2.0)));

    if hyper.learns_coregionalization() {
        let l = hyper.coreg.factor();
        let s = block_contract(&kx);
        for a in 0..d {
            for c in 0..=a {
                // ∂B/∂L[a][c] = E_ac Lᵀ + L E_ca
                let db = DMatrix::from_fn(d, d, |i, j| {
                    let mut v = 0.0;
                    if i == a {
                        v += l[(j, c)];
                    }
                    if j == a {
                        v += l[(i, c)];
                    }
                    v
                });
                grad.push(0.5 * s.component_mul(&db).sum());
            }
        }
    }

    for (i, nv) in hyper.noise.per_output_variance.iter().enumerate() {
        let tr: f64 = (0..n).map(|u| w[(i * n + u, i * n + u)]).sum();
        grad.push(0.5 * nv * tr);
    }
    Ok(grad)
}

/// Gradient of [`log_posterior_density`] in unconstrained coordinates.
pub fn log_posterior_gradient(
    data: &MultiOutputDataset,
    hyper: &GpHyperparams,
    priors: &Hyperpriors,
) -> Result<Vec<f64>> {
    let mut g = log_marginal_likelihood_gradient(data, hyper)?;
    for (gi, pi) in g.iter_mut().zip(priors.ln_density_gradient(hyper)) {
        *gi += pi;
    }
    Ok(g)
}
