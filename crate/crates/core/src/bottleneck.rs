//! Variational information-bottleneck layer.
//!
//! A span vector `t` is mapped through one shared hidden layer to the mean and
//! raw scale of a diagonal Gaussian `p(z | t)`. Scales pass through
//! `softplus(x) + SCALE_FLOOR`. Closed-form divergences are provided both on
//! plain [`GaussianPosterior`] values and as tape operations over batches of
//! posteriors (one posterior per row), so that training gradients and the
//! reference values come from independent code.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{Bound, ModelParams};
use crate::tensor::{softplus, Matrix};

/// Lower bound added to every softplus scale.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl GaussianPosterior {
    pub fn new(mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if mean.len() != scale.len() {
            return Err(Error::Contract(format!(
                "mean has {} dims but scale has {}",
                mean.len(),
                scale.len()
            )));
        }
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::Contract(format!("scale must be positive, got {s}")));
        }
        Ok(Self { mean, scale })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let mut acc = -0.5 * self.dim() as f64 * (2.0 * PI).ln();
        for ((&m, &s), &x) in self.mean.iter().zip(&self.scale).zip(z) {
            let d = (x - m) / s;
            acc -= 0.5 * d * d + s.ln();
        }
        acc
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.dim())
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect();
        reparameterize(self, &eps)
    }
}

fn same_dims(p: &GaussianPosterior, q: &GaussianPosterior) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::Contract(format!(
            "posterior dimension mismatch: {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    Ok(())
}

/// `mean + scale * eps`
pub fn reparameterize(post: &GaussianPosterior, eps: &[f64]) -> Vec<f64> {
    post.mean
        .iter()
        .zip(&post.scale)
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect()
}

/// Closed-form `KL(p || q)` for diagonal Gaussians.
pub fn kl_diag_gaussians(p: &GaussianPosterior, q: &GaussianPosterior) -> Result<f64> {
    same_dims(p, q)?;
    Ok(p.mean
        .iter()
        .zip(&p.scale)
        .zip(q.mean.iter().zip(&q.scale))
        .map(|((&mp, &sp), (&mq, &sq))| {
            (sq / sp).ln() + (sp * sp + (mp - mq).powi(2)) / (2.0 * sq * sq) - 0.5
        })
        .sum())
}

pub fn kl_to_standard_normal(p: &GaussianPosterior) -> f64 {
    kl_diag_gaussians(p, &GaussianPosterior::standard(p.dim())).expect("dims match by construction")
}

/// `KL(p||q) + KL(q||p)`
pub fn symmetric_kl(p: &GaussianPosterior, q: &GaussianPosterior) -> Result<f64> {
    Ok(kl_diag_gaussians(p, q)? + kl_diag_gaussians(q, p)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum JsMode {
    /// Monte-Carlo Jensen-Shannon with reparameterized samples.
    #[default]
    Mc,
    /// `KL(p||q) + KL(q||p)` in closed form.
    SymmetricKl,
}

/// Monte-Carlo Jensen-Shannon estimate and its standard error.
///
/// Each of the `n_samples` draws takes one sample from `p` and one from `q`
/// and contributes `(log p/m (z_p) + log q/m (z_q)) / 2`, with `m` the
/// equal-weight mixture.
pub fn js_mc_estimate<R: Rng + ?Sized>(
    p: &GaussianPosterior,
    q: &GaussianPosterior,
    n_samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    same_dims(p, q)?;
    if n_samples == 0 {
        return Err(Error::Contract("n_samples must be at least 1".into()));
    }
    let log_ratio = |own: &GaussianPosterior, other: &GaussianPosterior, z: &[f64]| {
        LN_2 - softplus(other.log_density(z) - own.log_density(z))
    };
    let terms: Vec<f64> = (0..n_samples)
        .map(|_| {
            let zp = p.sample(rng);
            let zq = q.sample(rng);
            0.5 * (log_ratio(p, q, &zp) + log_ratio(q, p, &zq))
        })
        .collect();
    let n = n_samples as f64;
    let mean = terms.iter().sum::<f64>() / n;
    let stderr = if n_samples > 1 {
        let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        f64::NAN
    };
    Ok((mean, stderr))
}

pub fn js_divergence<R: Rng + ?Sized>(
    p: &GaussianPosterior,
    q: &GaussianPosterior,
    mode: JsMode,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    match mode {
        JsMode::Mc => js_mc_estimate(p, q, n_samples, rng).map(|(m, _)| m),
        JsMode::SymmetricKl => symmetric_kl(p, q),
    }
}

/// Batched posterior on a tape: row `i` holds span `i`'s mean and scale.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorVars {
    pub mean: Var,
    pub scale: Var,
}

impl PosteriorVars {
    pub fn rows(&self, tape: &Tape) -> usize {
        tape.value(self.mean).rows()
    }

    /// Reads row `i` back as a plain posterior.
    pub fn extract(&self, tape: &Tape, i: usize) -> GaussianPosterior {
        GaussianPosterior {
            mean: tape.value(self.mean).row(i).to_vec(),
            scale: tape.value(self.scale).row(i).to_vec(),
        }
    }

    pub fn select(&self, tape: &mut Tape, rows: &[usize]) -> PosteriorVars {
        PosteriorVars {
            mean: tape.gather_rows(self.mean, rows),
            scale: tape.gather_rows(self.scale, rows),
        }
    }

    pub fn constant(tape: &mut Tape, posts: &[GaussianPosterior]) -> PosteriorVars {
        let mean = Matrix::from_rows(&posts.iter().map(|p| p.mean.clone()).collect::<Vec<_>>());
        let scale = Matrix::from_rows(&posts.iter().map(|p| p.scale.clone()).collect::<Vec<_>>());
        PosteriorVars {
            mean: tape.param(mean),
            scale: tape.param(scale),
        }
    }
}

/// `p(z | t)` for a batch of span vectors `t` (`m x span_dim`).
pub fn posterior_graph(tape: &mut Tape, bound: &Bound, t: Var) -> PosteriorVars {
    let hidden = tape.matmul(t, bound.var("ib.hidden"));
    let hidden = tape.add_row(hidden, bound.var("ib.hidden_bias"));
    let hidden = tape.tanh(hidden);
    let mean = tape.matmul(hidden, bound.var("ib.mean"));
    let mean = tape.add_row(mean, bound.var("ib.mean_bias"));
    let raw = tape.matmul(hidden, bound.var("ib.scale"));
    let raw = tape.add_row(raw, bound.var("ib.scale_bias"));
    let scale = tape.softplus(raw);
    let scale = tape.add_scalar(scale, SCALE_FLOOR);
    PosteriorVars { mean, scale }
}

/// Deterministic posterior of one span vector.
pub fn posterior(t: &[f64], params: &ModelParams) -> GaussianPosterior {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let tv = tape.constant(Matrix::row_vector(t.to_vec()));
    posterior_graph(&mut tape, &bound, tv).extract(&tape, 0)
}

/// `z = mean + scale * eps` with `eps` a constant noise matrix.
pub fn sample_graph(tape: &mut Tape, post: PosteriorVars, eps: Matrix) -> Var {
    let eps = tape.constant(eps);
    let noise = tape.mul(post.scale, eps);
    tape.add(post.mean, noise)
}

pub fn draw_noise<R: Rng + ?Sized>(tape: &Tape, post: PosteriorVars, rng: &mut R) -> Matrix {
    let (r, c) = tape.value(post.mean).shape();
    Matrix::standard_normal(r, c, rng)
}

/// Row-wise `KL(p_i || q_i)` (`m x 1`).
pub fn kl_rows_graph(tape: &mut Tape, p: PosteriorVars, q: PosteriorVars) -> Var {
    let log_sq = tape.ln(q.scale);
    let log_sp = tape.ln(p.scale);
    let log_ratio = tape.sub(log_sq, log_sp);
    let var_p = tape.square(p.scale);
    let diff = tape.sub(p.mean, q.mean);
    let diff2 = tape.square(diff);
    let num = tape.add(var_p, diff2);
    let var_q = tape.square(q.scale);
    let den = tape.scale(var_q, 2.0);
    let frac = tape.div(num, den);
    let terms = tape.add(log_ratio, frac);
    let terms = tape.add_scalar(terms, -0.5);
    tape.sum_cols(terms)
}

/// Row-wise `KL(p_i || N(0, I))`.
pub fn kl_std_rows_graph(tape: &mut Tape, p: PosteriorVars) -> Var {
    // -ln s + (s^2 + m^2) / 2 - 1/2
    let log_s = tape.ln(p.scale);
    let var = tape.square(p.scale);
    let m2 = tape.square(p.mean);
    let num = tape.add(var, m2);
    let half = tape.scale(num, 0.5);
    let terms = tape.sub(half, log_s);
    let terms = tape.add_scalar(terms, -0.5);
    tape.sum_cols(terms)
}

pub fn symmetric_kl_rows_graph(tape: &mut Tape, p: PosteriorVars, q: PosteriorVars) -> Var {
    let a = kl_rows_graph(tape, p, q);
    let b = kl_rows_graph(tape, q, p);
    tape.add(a, b)
}

/// Row-wise `log N(z_i; mean_i, diag(scale_i^2))`.
pub fn log_density_rows_graph(tape: &mut Tape, post: PosteriorVars, z: Var) -> Var {
    let k = tape.value(z).cols() as f64;
    let diff = tape.sub(z, post.mean);
    let std = tape.div(diff, post.scale);
    let sq = tape.square(std);
    let half = tape.scale(sq, -0.5);
    let log_s = tape.ln(post.scale);
    let terms = tape.sub(half, log_s);
    let summed = tape.sum_cols(terms);
    tape.add_scalar(summed, -0.5 * k * (2.0 * PI).ln())
}

fn log_mixture_ratio(tape: &mut Tape, own: PosteriorVars, other: PosteriorVars, z: Var) -> Var {
    let lo = log_density_rows_graph(tape, own, z);
    let lt = log_density_rows_graph(tape, other, z);
    // log p - log m = ln 2 - softplus(log q - log p)
    let gap = tape.sub(lt, lo);
    let sp = tape.softplus(gap);
    let neg = tape.scale(sp, -1.0);
    tape.add_scalar(neg, LN_2)
}

/// Row-wise Monte-Carlo Jensen-Shannon with one reparameterized draw from each
/// side per entry of `noise` (pairs of `m x K` standard-normal matrices).
pub fn js_mc_rows_graph(
    tape: &mut Tape,
    p: PosteriorVars,
    q: PosteriorVars,
    noise: Vec<(Matrix, Matrix)>,
) -> Var {
    assert!(!noise.is_empty(), "at least one noise sample is required");
    let n = noise.len() as f64;
    let mut terms = Vec::with_capacity(noise.len());
    for (eps_p, eps_q) in noise {
        let zp = sample_graph(tape, p, eps_p);
        let zq = sample_graph(tape, q, eps_q);
        let rp = log_mixture_ratio(tape, p, q, zp);
        let rq = log_mixture_ratio(tape, q, p, zq);
        terms.push(tape.add(rp, rq));
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    tape.scale(acc, 0.5 / n)
}

/// Row-wise divergence under `mode`, drawing MC noise from `rng`.
pub fn divergence_rows_graph<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: PosteriorVars,
    q: PosteriorVars,
    mode: JsMode,
    n_samples: usize,
    rng: &mut R,
) -> Var {
    match mode {
        JsMode::SymmetricKl => symmetric_kl_rows_graph(tape, p, q),
        JsMode::Mc => {
            let noise = (0..n_samples.max(1))
                .map(|_| (draw_noise(tape, p, rng), draw_noise(tape, q, rng)))
                .collect();
            js_mc_rows_graph(tape, p, q, noise)
        }
    }
}
