//! Training objectives: span classification, the InfoNCE generalizing loss,
//! the superfluous-information divergence loss and the vanilla-IB penalty.
//!
//! Each loss exists twice: a plain function over concrete values and a tape
//! builder used by training. Tests cross-check the two.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::bottleneck::{
    divergence_rows_graph, js_divergence, kl_std_rows_graph, kl_to_standard_normal, GaussianPosterior,
    JsMode, PosteriorVars,
};
use crate::error::{Error, Result};
use crate::model::{Bound, ModelParams};
use crate::tensor::{dot, log_sum_exp, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CriticKind {
    /// `z1' W z2`
    #[default]
    Bilinear,
    /// `w' tanh(A' z1 + B' z2 + b)`
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub gamma: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            beta: 1e-5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative, got gamma={} beta={}",
                self.gamma, self.beta
            )));
        }
        Ok(())
    }
}

/// One row `y^k` per label, in [`crate::model::LabelSet`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbeddings {
    pub table: Matrix,
}

impl LabelEmbeddings {
    pub fn from_params(params: &ModelParams) -> Self {
        Self {
            table: params.get("labels").clone(),
        }
    }

    pub fn logits(&self, z: &[f64]) -> Vec<f64> {
        (0..self.table.rows()).map(|k| dot(z, self.table.row(k))).collect()
    }

    /// Softmax over labels.
    pub fn probabilities(&self, z: &[f64]) -> Vec<f64> {
        let logits = self.logits(z);
        let lse = log_sum_exp(&logits);
        logits.iter().map(|l| (l - lse).exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CriticParams {
    Bilinear(Matrix),
    Mlp {
        left: Matrix,
        right: Matrix,
        bias: Matrix,
        out: Matrix,
    },
}

impl CriticParams {
    pub fn from_params(params: &ModelParams, kind: CriticKind) -> Self {
        match kind {
            CriticKind::Bilinear => Self::Bilinear(params.get("critic.bilinear").clone()),
            CriticKind::Mlp => Self::Mlp {
                left: params.get("critic.left").clone(),
                right: params.get("critic.right").clone(),
                bias: params.get("critic.bias").clone(),
                out: params.get("critic.out").clone(),
            },
        }
    }

    pub fn score(&self, z1: &[f64], z2: &[f64]) -> f64 {
        match self {
            Self::Bilinear(w) => {
                let wz2 = w.matmul(&Matrix::from_vec(z2.len(), 1, z2.to_vec()));
                dot(z1, wz2.data())
            }
            Self::Mlp {
                left,
                right,
                bias,
                out,
            } => {
                let a = Matrix::row_vector(z1.to_vec()).matmul(left);
                let b = Matrix::row_vector(z2.to_vec()).matmul(right);
                (0..bias.cols())
                    .map(|c| (a.get(0, c) + b.get(0, c) + bias.get(0, c)).tanh() * out.get(c, 0))
                    .sum()
            }
        }
    }

    /// `scores[i][j] = g(z1_i, z2_j)`
    pub fn score_matrix(&self, z1: &[Vec<f64>], z2: &[Vec<f64>]) -> Matrix {
        let mut m = Matrix::zeros(z1.len(), z2.len());
        for (i, a) in z1.iter().enumerate() {
            for (j, b) in z2.iter().enumerate() {
                m.set(i, j, self.score(a, b));
            }
        }
        m
    }
}

/// `exp(z . y^k)`
pub fn span_score(z: &[f64], label: usize, labels: &LabelEmbeddings) -> f64 {
    dot(z, labels.table.row(label)).exp()
}

/// Mean negative log-likelihood of the gold labels.
pub fn base_loss(zs: &[Vec<f64>], gold: &[usize], labels: &LabelEmbeddings) -> Result<f64> {
    if zs.len() != gold.len() {
        return Err(Error::Contract(format!(
            "{} latent vectors but {} gold labels",
            zs.len(),
            gold.len()
        )));
    }
    if zs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = zs
        .iter()
        .zip(gold)
        .map(|(z, &g)| {
            let logits = labels.logits(z);
            log_sum_exp(&logits) - logits[g]
        })
        .sum();
    Ok(total / zs.len() as f64)
}

/// Row-anchored InfoNCE over a square score matrix whose diagonal holds the
/// positives.
pub fn infonce_from_scores(scores: &Matrix) -> Result<f64> {
    let n = scores.rows();
    if scores.cols() != n {
        return Err(Error::Contract(format!(
            "score matrix must be square, got {}x{}",
            n,
            scores.cols()
        )));
    }
    if n < 2 {
        return Err(Error::Contract("InfoNCE needs at least 2 pairs for negatives".into()));
    }
    let total: f64 = (0..n)
        .map(|i| log_sum_exp(scores.row(i)) - scores.get(i, i))
        .sum();
    Ok(total / n as f64)
}

/// InfoNCE over aligned `(z1, z2)` pairs, with in-batch negatives. When
/// `symmetric`, the loss anchored on `z2` is averaged in.
pub fn gi_loss(pairs: &[(Vec<f64>, Vec<f64>)], critic: &CriticParams, symmetric: bool) -> Result<f64> {
    let z1: Vec<Vec<f64>> = pairs.iter().map(|p| p.0.clone()).collect();
    let z2: Vec<Vec<f64>> = pairs.iter().map(|p| p.1.clone()).collect();
    let scores = critic.score_matrix(&z1, &z2);
    let forward = infonce_from_scores(&scores)?;
    if symmetric {
        Ok(0.5 * (forward + infonce_from_scores(&scores.transpose())?))
    } else {
        Ok(forward)
    }
}

/// Mean divergence between aligned posteriors.
pub fn si_loss<R: Rng + ?Sized>(
    pairs: &[(GaussianPosterior, GaussianPosterior)],
    mode: JsMode,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if pairs.is_empty() {
        log::warn!("si loss over an empty pair list is 0");
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, q) in pairs {
        total += js_divergence(p, q, mode, n_samples, rng)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Mean KL to the standard normal prior.
pub fn vanilla_ib_loss(posteriors: &[GaussianPosterior]) -> f64 {
    if posteriors.is_empty() {
        return 0.0;
    }
    posteriors.iter().map(kl_to_standard_normal).sum::<f64>() / posteriors.len() as f64
}

pub fn total_loss(base: f64, gi: f64, si: f64, w: &LossWeights) -> f64 {
    base + w.gamma * gi + w.beta * si
}

/// `z . y^k` for every row of `z` (`m x |Y|`).
pub fn label_logits_graph(tape: &mut Tape, bound: &Bound, z: Var) -> Var {
    tape.matmul_t(z, bound.var("labels"))
}

pub fn base_loss_graph(tape: &mut Tape, bound: &Bound, z: Var, gold: &[usize]) -> Var {
    let logits = label_logits_graph(tape, bound, z);
    let logp = tape.log_softmax_rows(logits);
    let picked = tape.pick_per_row(logp, gold);
    let mean = tape.mean(picked);
    tape.scale(mean, -1.0)
}

/// `scores[i][j] = g(z1_i, z2_j)` on the tape.
pub fn critic_scores_graph(tape: &mut Tape, bound: &Bound, kind: CriticKind, z1: Var, z2: Var) -> Var {
    match kind {
        CriticKind::Bilinear => {
            let left = tape.matmul(z1, bound.var("critic.bilinear"));
            tape.matmul_t(left, z2)
        }
        CriticKind::Mlp => {
            let n1 = tape.value(z1).rows();
            let n2 = tape.value(z2).rows();
            let a = tape.matmul(z1, bound.var("critic.left"));
            let b = tape.matmul(z2, bound.var("critic.right"));
            let rows_a: Vec<usize> = (0..n1).flat_map(|i| std::iter::repeat_n(i, n2)).collect();
            let rows_b: Vec<usize> = (0..n1).flat_map(|_| 0..n2).collect();
            let a = tape.gather_rows(a, &rows_a);
            let b = tape.gather_rows(b, &rows_b);
            let pre = tape.add(a, b);
            let pre = tape.add_row(pre, bound.var("critic.bias"));
            let act = tape.tanh(pre);
            let flat = tape.matmul(act, bound.var("critic.out"));
            tape.reshape(flat, n1, n2)
        }
    }
}

pub fn infonce_graph(tape: &mut Tape, scores: Var, symmetric: bool) -> Var {
    let n = tape.value(scores).rows();
    let diag: Vec<usize> = (0..n).collect();
    let one_way = |tape: &mut Tape, s: Var| {
        let logp = tape.log_softmax_rows(s);
        let picked = tape.pick_per_row(logp, &diag);
        let mean = tape.mean(picked);
        tape.scale(mean, -1.0)
    };
    let forward = one_way(tape, scores);
    if symmetric {
        let t = tape.transpose(scores);
        let backward = one_way(tape, t);
        let s = tape.add(forward, backward);
        tape.scale(s, 0.5)
    } else {
        forward
    }
}

pub fn gi_loss_graph(
    tape: &mut Tape,
    bound: &Bound,
    kind: CriticKind,
    z1: Var,
    z2: Var,
    symmetric: bool,
) -> Result<Var> {
    let n = tape.value(z1).rows();
    if n < 2 {
        return Err(Error::Contract("InfoNCE needs at least 2 pairs for negatives".into()));
    }
    if tape.value(z2).rows() != n {
        return Err(Error::Contract("gi loss needs aligned pair batches".into()));
    }
    let scores = critic_scores_graph(tape, bound, kind, z1, z2);
    Ok(infonce_graph(tape, scores, symmetric))
}

pub fn si_loss_graph<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: PosteriorVars,
    q: PosteriorVars,
    mode: JsMode,
    n_samples: usize,
    rng: &mut R,
) -> Var {
    let rows = divergence_rows_graph(tape, p, q, mode, n_samples, rng);
    tape.mean(rows)
}

pub fn vanilla_ib_graph(tape: &mut Tape, p: PosteriorVars) -> Var {
    let rows = kl_std_rows_graph(tape, p);
    tape.mean(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels(rows: &[Vec<f64>]) -> LabelEmbeddings {
        LabelEmbeddings {
            table: Matrix::from_rows(rows),
        }
    }

    #[test]
    fn span_scores() {
        let y = labels(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        for k in 0..3 {
            assert_eq!(span_score(&[0.0, 0.0], k, &y), 1.0);
        }
        assert!((span_score(&[1.0, 0.0], 0, &y) - std::f64::consts::E).abs() < 1e-12);
        let probs = y.probabilities(&[0.3, -1.2]);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn base_loss_values() {
        let y = labels(&vec![vec![0.0; 3]; 5]);
        let l = base_loss(&[vec![1.0, 2.0, 3.0]], &[2], &y).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        let y3 = labels(&[vec![1.0], vec![0.0], vec![0.0]]);
        let l = base_loss(&[vec![1.0]], &[0], &y3).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.551).abs() < 1e-3);
        let confident = base_loss(&[vec![60.0]], &[0], &y3).unwrap();
        assert!(confident < 1e-20);
        assert!(base_loss(&[vec![1.0]], &[], &y3).is_err());
    }

    #[test]
    fn infonce_values() {
        for n in [2, 8, 64] {
            let l = infonce_from_scores(&Matrix::zeros(n, n)).unwrap();
            assert!((l - (n as f64).ln()).abs() < 1e-12);
        }
        let s = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]);
        let l = infonce_from_scores(&s).unwrap();
        let expected = -(2.0 - (2f64.exp() + 1.0).ln());
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.127).abs() < 1e-3);
        let mut perfect = Matrix::filled(4, 4, -1e3);
        for i in 0..4 {
            perfect.set(i, i, 1e3);
        }
        assert!(infonce_from_scores(&perfect).unwrap() < 1e-12);
        assert!(infonce_from_scores(&Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn gi_loss_with_zero_critic_is_log_n() {
        let critic = CriticParams::Bilinear(Matrix::zeros(3, 3));
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..8)
            .map(|i| (vec![i as f64, 1.0, -1.0], vec![0.5, i as f64, 2.0]))
            .collect();
        let l = gi_loss(&pairs, &critic, true).unwrap();
        assert!((l - 8f64.ln()).abs() < 1e-12);
        assert!(gi_loss(&pairs[..1], &critic, false).is_err());
    }

    #[test]
    fn si_and_vanilla_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GaussianPosterior::new(vec![0.4, -0.2], vec![0.9, 1.1]).unwrap();
        let same = vec![(p.clone(), p.clone()); 3];
        assert_eq!(si_loss(&same, JsMode::Mc, 4, &mut rng).unwrap(), 0.0);
        assert_eq!(si_loss(&[], JsMode::Mc, 4, &mut rng).unwrap(), 0.0);
        let mut last = -1.0;
        for i in 1..10 {
            let q = GaussianPosterior::new(vec![0.4 + i as f64 * 0.3, -0.2], vec![0.9, 1.1]).unwrap();
            let l = si_loss(&[(p.clone(), q)], JsMode::SymmetricKl, 1, &mut rng).unwrap();
            assert!(l > last);
            last = l;
        }
        assert_eq!(vanilla_ib_loss(&[GaussianPosterior::standard(3)]), 0.0);
        let one = GaussianPosterior::new(vec![1.0], vec![1.0]).unwrap();
        assert!((vanilla_ib_loss(&[one]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn total_loss_values() {
        let w = LossWeights::default();
        assert!((total_loss(1.0, 2.0, 3.0, &w) - 1.02003).abs() < 1e-12);
        let zero = LossWeights { gamma: 0.0, beta: 0.0 };
        assert_eq!(total_loss(1.7, 5.0, 9.0, &zero), 1.7);
        assert!(LossWeights { gamma: -1.0, beta: 0.0 }.validate().is_err());
    }

    #[test]
    fn graph_losses_match_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = 4;
        for kind in [CriticKind::Bilinear, CriticKind::Mlp] {
            let mut params = ModelParams::default();
            params.insert("labels", Matrix::uniform(3, k, 1.0, &mut rng));
            params.insert("critic.bilinear", Matrix::uniform(k, k, 1.0, &mut rng));
            params.insert("critic.left", Matrix::uniform(k, 5, 1.0, &mut rng));
            params.insert("critic.right", Matrix::uniform(k, 5, 1.0, &mut rng));
            params.insert("critic.bias", Matrix::uniform(1, 5, 1.0, &mut rng));
            params.insert("critic.out", Matrix::uniform(5, 1, 1.0, &mut rng));
            let z1 = Matrix::standard_normal(6, k, &mut rng);
            let z2 = Matrix::standard_normal(6, k, &mut rng);
            let gold = [0, 1, 2, 2, 1, 0];

            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false);
            let v1 = tape.constant(z1.clone());
            let v2 = tape.constant(z2.clone());
            let base = base_loss_graph(&mut tape, &bound, v1, &gold);
            let gi = gi_loss_graph(&mut tape, &bound, kind, v1, v2, true).unwrap();

            let rows = |m: &Matrix| (0..m.rows()).map(|i| m.row(i).to_vec()).collect::<Vec<_>>();
            let y = LabelEmbeddings::from_params(&params);
            let critic = CriticParams::from_params(&params, kind);
            let plain_base = base_loss(&rows(&z1), &gold, &y).unwrap();
            let pairs: Vec<_> = rows(&z1).into_iter().zip(rows(&z2)).collect();
            let plain_gi = gi_loss(&pairs, &critic, true).unwrap();
            assert!((tape.scalar(base) - plain_base).abs() < 1e-12);
            assert!((tape.scalar(gi) - plain_gi).abs() < 1e-12, "{kind:?}");
        }
    }
}
