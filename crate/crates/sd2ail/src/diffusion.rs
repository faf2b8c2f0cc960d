//! DDPM machinery over concatenated state-action vectors: variance
//! schedule, forward noising, denoising loss, reverse-process sampling,
//! and the affine normalization between environment coordinates and
//! diffusion space.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::Matrix;
use crate::nn::{Activation, DenseNet};
use crate::{Error, Result};

/// Per-step variance schedule. Arrays are indexed by `t - 1` internally;
/// accessors take the 1-based diffusion step.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn t_max(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product of alphas; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Reverse-step noise scale, `sqrt(beta(t))`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.beta(t).sqrt()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if beta.iter().any(|&b| !(0.0 < b && b < 1.0)) {
            return Err(Error::Config("every beta must lie in (0, 1)".into()));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut prod = 1.0;
        for a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        Ok(DiffusionSchedule {
            beta,
            alpha,
            alpha_bar,
        })
    }
}

/// Linear beta schedule from `beta_start` to `beta_end` inclusive.
pub fn build_schedule(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if t_steps < 1 {
        return Err(Error::Config("t_steps must be at least 1".into()));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "beta range must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    let beta = if t_steps == 1 {
        vec![beta_start]
    } else {
        (0..t_steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64)
            .collect()
    };
    DiffusionSchedule::from_betas(beta)
}

/// One-shot forward noising: `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_noise(
    x0: &[f64],
    t: usize,
    eps: &[f64],
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    if t < 1 || t > sched.t_max() {
        return Err(Error::Config(format!(
            "diffusion step {t} outside 1..={}",
            sched.t_max()
        )));
    }
    if eps.len() != x0.len() {
        return Err(Error::Dim {
            what: "forward noise eps",
            expected: x0.len(),
            got: eps.len(),
        });
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(x, e)| a * x + b * e)
        .collect())
}

/// Anything that predicts the injected noise from a noised sample and a
/// step index. Implemented by [`NoisePredictor`]; test stubs implement it
/// to pin down the algebra around it.
pub trait EpsModel {
    fn data_dim(&self) -> usize;
    fn predict(&self, x: &[f64], t: usize) -> Vec<f64>;
}

/// Denoising loss for one sample and step: squared L2 distance between
/// the injected and the predicted noise.
pub fn diffusion_loss<M: EpsModel + ?Sized>(
    model: &M,
    x0: &[f64],
    t: usize,
    eps: &[f64],
    sched: &DiffusionSchedule,
) -> Result<f64> {
    let xt = forward_noise(x0, t, eps, sched)?;
    let pred = model.predict(&xt, t);
    if pred.len() != eps.len() {
        return Err(Error::Dim {
            what: "noise prediction",
            expected: eps.len(),
            got: pred.len(),
        });
    }
    let loss: f64 = eps
        .iter()
        .zip(&pred)
        .map(|(e, p)| (e - p) * (e - p))
        .sum();
    if !loss.is_finite() {
        return Err(Error::NonFinite("diffusion loss".into()));
    }
    Ok(loss)
}

/// Noise-prediction network: a dense net over the noised sample
/// concatenated with a learned per-step embedding row.
#[derive(Debug, Clone)]
pub struct NoisePredictor {
    net: DenseNet,
    t_embed: Matrix,
    data_dim: usize,
}

/// Cache of one batched forward pass through the predictor.
pub struct PredictorCache {
    inputs: Matrix,
    acts: Vec<Matrix>,
    ts: Vec<usize>,
}

impl NoisePredictor {
    pub fn new<R: Rng + ?Sized>(
        data_dim: usize,
        t_steps: usize,
        embed_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if data_dim == 0 || t_steps == 0 || embed_dim == 0 {
            return Err(Error::Config(
                "predictor dimensions must be positive".into(),
            ));
        }
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(data_dim + embed_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(data_dim);
        let net = DenseNet::new(&sizes, activation, rng)?;
        let mut t_embed = Matrix::zeros(t_steps, embed_dim);
        for v in t_embed.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        Ok(NoisePredictor {
            net,
            t_embed,
            data_dim,
        })
    }

    /// Rebuild a predictor from a deserialized net and embedding table.
    pub fn from_parts(net: DenseNet, t_embed: Matrix) -> Result<Self> {
        let data_dim = net.output_dim();
        if t_embed.rows() == 0 || t_embed.cols() == 0 {
            return Err(Error::Config("empty time embedding".into()));
        }
        if net.input_dim() != data_dim + t_embed.cols() {
            return Err(Error::Config(format!(
                "net input {} does not match data {} + embed {}",
                net.input_dim(),
                data_dim,
                t_embed.cols()
            )));
        }
        Ok(NoisePredictor {
            net,
            t_embed,
            data_dim,
        })
    }

    pub fn t_embed(&self) -> &Matrix {
        &self.t_embed
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn t_steps(&self) -> usize {
        self.t_embed.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.t_embed.cols()
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count() + self.t_embed.rows() * self.t_embed.cols()
    }

    /// Flat parameters: network first, then the embedding rows.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = self.net.params_flat();
        p.extend_from_slice(self.t_embed.data());
        p
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Dim {
                what: "predictor parameters",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let net_len = self.net.param_count();
        self.net.set_params_flat(&params[..net_len])?;
        self.t_embed.data_mut().copy_from_slice(&params[net_len..]);
        Ok(())
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.t_steps() {
            return Err(Error::Config(format!(
                "step {t} outside 1..={}",
                self.t_steps()
            )));
        }
        Ok(())
    }

    /// Batched forward over noised rows with their step indices.
    pub fn forward_rows(&self, noised: &Matrix, ts: &[usize]) -> Result<(Matrix, PredictorCache)> {
        if noised.rows() != ts.len() {
            return Err(Error::Dim {
                what: "step indices",
                expected: noised.rows(),
                got: ts.len(),
            });
        }
        if noised.cols() != self.data_dim {
            return Err(Error::Dim {
                what: "noised rows",
                expected: self.data_dim,
                got: noised.cols(),
            });
        }
        let embed_dim = self.embed_dim();
        let mut inputs = Matrix::zeros(noised.rows(), self.data_dim + embed_dim);
        for i in 0..noised.rows() {
            self.check_t(ts[i])?;
            let row = inputs.row_mut(i);
            row[..self.data_dim].copy_from_slice(noised.row(i));
            row[self.data_dim..].copy_from_slice(self.t_embed.row(ts[i] - 1));
        }
        let acts = self.net.forward_batch_cached(&inputs)?;
        let preds = acts.last().unwrap().clone();
        let cache = PredictorCache {
            inputs,
            acts,
            ts: ts.to_vec(),
        };
        Ok((preds, cache))
    }

    /// Backward through a cached forward pass. Returns flat gradients in
    /// the layout of [`NoisePredictor::params_flat`]. Gradients w.r.t.
    /// the embedding rows are scattered by step index.
    pub fn backward_rows(&self, cache: &PredictorCache, upstream: &Matrix) -> Result<Vec<f64>> {
        let (net_grads, input_grads) =
            self.net
                .backward_batch(&cache.inputs, &cache.acts, upstream)?;
        let mut grads = net_grads;
        grads.resize(self.param_count(), 0.0);
        let net_len = self.net.param_count();
        let embed_dim = self.embed_dim();
        for (i, &t) in cache.ts.iter().enumerate() {
            let src = &input_grads.row(i)[self.data_dim..];
            let dst = &mut grads[net_len + (t - 1) * embed_dim..net_len + t * embed_dim];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(grads)
    }
}

impl EpsModel for NoisePredictor {
    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn predict(&self, x: &[f64], t: usize) -> Vec<f64> {
        let mut input = Vec::with_capacity(x.len() + self.embed_dim());
        input.extend_from_slice(x);
        input.extend_from_slice(self.t_embed.row(t - 1));
        self.net.forward(&input).expect("predictor input dims")
    }
}

/// Run the reverse process for `n` chains and return the final samples.
///
/// Each chain starts from a standard-normal draw; the step down to `t=0`
/// adds no noise. Deterministic given a seeded noise source; draws happen
/// chain by chain, within a chain the initial noise first and then one
/// vector per reverse step above 1.
pub fn reverse_sample<M: EpsModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    sched: &DiffusionSchedule,
    rng: &mut R,
    n: usize,
) -> Result<Vec<Vec<f64>>> {
    let dim = model.data_dim();
    let t_max = sched.t_max();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for t in (1..=t_max).rev() {
            let pred = model.predict(&x, t);
            let a = sched.alpha(t);
            let scale = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
            let inv_sqrt_a = 1.0 / a.sqrt();
            for (xi, pi) in x.iter_mut().zip(&pred) {
                *xi = inv_sqrt_a * (*xi - scale * pi);
            }
            if t > 1 {
                let sigma = sched.sigma(t);
                for xi in x.iter_mut() {
                    let e: f64 = rng.sample(StandardNormal);
                    *xi += sigma * e;
                }
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reverse sample".into()));
        }
        out.push(x);
    }
    Ok(out)
}

/// Affine map between environment coordinates and diffusion space,
/// fitted on the expert dataset and frozen afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalizer {
    /// Per-dimension mean and population standard deviation, floored at
    /// 1e-8 so constant dimensions stay usable.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("normalizer fit data"));
        }
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::Dim {
                    what: "normalizer row",
                    expected: dim,
                    got: r.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt().max(1e-8)).collect();
        Ok(Normalizer { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn from_parts(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Dim {
                what: "normalizer parts",
                expected: mean.len(),
                got: std.len(),
            });
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("normalizer std must be positive".into()));
        }
        Ok(Normalizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| x * s + m)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    struct StubEps {
        dim: usize,
        value: Vec<f64>,
    }

    impl EpsModel for StubEps {
        fn data_dim(&self) -> usize {
            self.dim
        }
        fn predict(&self, _x: &[f64], _t: usize) -> Vec<f64> {
            self.value.clone()
        }
    }

    #[test]
    fn single_step_schedule_alpha_bar() {
        let s = build_schedule(1, 0.1, 0.1).unwrap();
        assert_eq!(s.alpha_bar(1), 0.9);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn schedule_identities_hold_exactly() {
        let s = build_schedule(10, 0.05, 0.45).unwrap();
        assert_eq!(s.t_max(), 10);
        assert_eq!(s.beta(1), 0.05);
        assert_eq!(s.beta(10), 0.45);
        for t in 1..=10 {
            assert_eq!(s.alpha(t), 1.0 - s.beta(t));
            let prod = s.alpha_bar(t - 1) * s.alpha(t);
            assert_eq!(s.alpha_bar(t), prod);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
        }
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(build_schedule(0, 0.1, 0.2).is_err());
        assert!(build_schedule(5, 0.0, 0.2).is_err());
        assert!(build_schedule(5, 0.3, 0.2).is_err());
        assert!(build_schedule(5, 0.3, 1.0).is_err());
    }

    #[test]
    fn forward_noise_degenerate_cases() {
        let s = build_schedule(4, 0.1, 0.4).unwrap();
        let x0 = vec![1.0, -2.0, 0.5];
        let zero = vec![0.0; 3];
        let t = 3;
        let got = forward_noise(&x0, t, &zero, &s).unwrap();
        let a = s.alpha_bar(t).sqrt();
        for (g, x) in got.iter().zip(&x0) {
            assert_eq!(*g, a * x);
        }
        let eps = vec![0.3, 0.3, -0.9];
        let got = forward_noise(&zero, t, &eps, &s).unwrap();
        let b = (1.0 - s.alpha_bar(t)).sqrt();
        for (g, e) in got.iter().zip(&eps) {
            assert_eq!(*g, b * e);
        }
        assert!(forward_noise(&x0, 0, &zero, &s).is_err());
        assert!(forward_noise(&x0, 5, &zero, &s).is_err());
        assert!(forward_noise(&x0, 2, &[0.0], &s).is_err());
    }

    #[test]
    fn loss_is_zero_for_perfect_predictor() {
        let s = build_schedule(3, 0.1, 0.3).unwrap();
        let eps = vec![0.7, -0.2];
        let stub = StubEps {
            dim: 2,
            value: eps.clone(),
        };
        let loss = diffusion_loss(&stub, &[1.0, 1.0], 2, &eps, &s).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_equals_eps_norm_for_zero_predictor() {
        let s = build_schedule(3, 0.1, 0.3).unwrap();
        let eps = vec![3.0, 4.0];
        let stub = StubEps {
            dim: 2,
            value: vec![0.0, 0.0],
        };
        let loss = diffusion_loss(&stub, &[0.0, 0.0], 1, &eps, &s).unwrap();
        assert_eq!(loss, 25.0);
    }

    #[test]
    fn reverse_sample_shapes_and_determinism() {
        let s = build_schedule(5, 0.05, 0.45).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let pred =
            NoisePredictor::new(4, 5, 3, &[8], Activation::Tanh, &mut rng).unwrap();
        let empty = reverse_sample(&pred, &s, &mut rng, 0).unwrap();
        assert!(empty.is_empty());

        let mut r1 = ChaCha12Rng::seed_from_u64(99);
        let mut r2 = ChaCha12Rng::seed_from_u64(99);
        let a = reverse_sample(&pred, &s, &mut r1, 7).unwrap();
        let b = reverse_sample(&pred, &s, &mut r2, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.len() == 4));
    }

    #[test]
    fn predictor_flat_params_roundtrip() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut pred =
            NoisePredictor::new(3, 4, 2, &[6, 6], Activation::Relu, &mut rng).unwrap();
        let p = pred.params_flat();
        assert_eq!(p.len(), pred.param_count());
        let doubled: Vec<f64> = p.iter().map(|v| v * 2.0).collect();
        pred.set_params_flat(&doubled).unwrap();
        assert_eq!(pred.params_flat(), doubled);
    }

    #[test]
    fn normalizer_roundtrips() {
        let rows = vec![
            vec![1.0, 10.0, 5.0],
            vec![2.0, 10.0, 7.0],
            vec![3.0, 10.0, 9.0],
        ];
        let n = Normalizer::fit(&rows).unwrap();
        let v = vec![2.5, 10.0, 6.0];
        let round = n.denormalize(&n.normalize(&v));
        for (a, b) in round.iter().zip(&v) {
            assert!((a - b).abs() < 1e-9);
        }
        // constant dimension maps to zero and back
        assert_eq!(n.normalize(&v)[1], 0.0);
    }
}
