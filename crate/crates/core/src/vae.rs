//! Variational autoencoder over bit-encoded tuples.
//!
//! ```text
//! x ─► tanh(W_e x + b_e) ─┬─► μ = W_μ h + b_μ
//!                         └─► log σ² = clamp(W_v h + b_v, ±10)
//! z = μ + exp(log σ² / 2) ⊙ ε,  ε ~ N(0, I)
//! z ─► tanh(W_d z + b_d) ─► logits = W_o h + b_o ─► p = sigmoid(logits)
//! ```
//!
//! The prior is standard normal and the likelihood is a product of
//! Bernoullis. Training maximises the single-draw ELBO by minibatch SGD with
//! gradients derived by hand below (no autodiff).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::relation::EncodedDataset;
use crate::scalar::Scalar;

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VaeDims {
    pub input: usize,
    pub hidden: usize,
    pub latent: usize,
}

/// Offsets of each weight block inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layout {
    enc_w: usize,
    enc_b: usize,
    mu_w: usize,
    mu_b: usize,
    lv_w: usize,
    lv_b: usize,
    dec_w: usize,
    dec_b: usize,
    out_w: usize,
    out_b: usize,
    total: usize,
}

impl Layout {
    fn new(d: VaeDims) -> Self {
        let (x, h, z) = (d.input, d.hidden, d.latent);
        let enc_w = 0;
        let enc_b = enc_w + h * x;
        let mu_w = enc_b + h;
        let mu_b = mu_w + z * h;
        let lv_w = mu_b + z;
        let lv_b = lv_w + z * h;
        let dec_w = lv_b + z;
        let dec_b = dec_w + h * z;
        let out_w = dec_b + h;
        let out_b = out_w + x * h;
        let total = out_b + x;
        Self { enc_w, enc_b, mu_w, mu_b, lv_w, lv_b, dec_w, dec_b, out_w, out_b, total }
    }
}

/// Number of scalar parameters of a model with the given shape.
pub fn parameter_count(dims: VaeDims) -> usize {
    Layout::new(dims).total
}

/// Encoder and decoder weights, stored as one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams<S> {
    dims: VaeDims,
    layout: Layout,
    theta: Vec<S>,
}

/// Diagonal Gaussian `q(z|x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorParams<S> {
    pub mu: Vec<S>,
    pub log_var: Vec<S>,
}

/// Intermediate values of one encoder pass.
struct EncoderPass<S> {
    hidden: Vec<S>,
    mu: Vec<S>,
    log_var: Vec<S>,
    /// Whether the log-variance clamp was inactive for each coordinate.
    lv_free: Vec<bool>,
}

// y[r] += Σ_c w[r*cols + c] * x[c]
fn matvec_acc<S: Scalar>(w: &[S], cols: usize, x: &[S], y: &mut [S]) {
    for (r, yr) in y.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = S::zero();
        for (a, b) in row.iter().zip(x) {
            acc += *a * *b;
        }
        *yr += acc;
    }
}

// y[c] += Σ_r w[r*cols + c] * g[r]
fn matvec_t_acc<S: Scalar>(w: &[S], cols: usize, g: &[S], y: &mut [S]) {
    for (r, &gr) in g.iter().enumerate() {
        if gr == S::zero() {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (yc, a) in y.iter_mut().zip(row) {
            *yc += *a * gr;
        }
    }
}

// dw[r*cols + c] += g[r] * x[c]
fn outer_acc<S: Scalar>(g: &[S], x: &[S], dw: &mut [S]) {
    let cols = x.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == S::zero() {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, &xc) in row.iter_mut().zip(x) {
            *d += gr * xc;
        }
    }
}

fn all_finite<S: Scalar>(v: &[S]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// `Σ_i x_i log p_i + (1 - x_i) log(1 - p_i)` from logits, computed stably.
pub fn bernoulli_log_likelihood<S: Scalar>(logits: &[S], x: &[u8]) -> S {
    logits
        .iter()
        .zip(x)
        .map(|(&a, &b)| if b != 0 { -(-a).softplus() } else { -a.softplus() })
        .sum()
}

/// Closed-form `KL(N(μ, σ²) || N(0, I))`.
pub fn kl_to_standard_normal<S: Scalar>(post: &PosteriorParams<S>) -> S {
    let half = S::of(0.5);
    post.mu
        .iter()
        .zip(&post.log_var)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - S::one() - lv))
        .sum()
}

/// `log N(z; 0, I)`.
pub fn standard_normal_log_density<S: Scalar>(z: &[S]) -> S {
    let c = S::of(-0.5 * (2.0 * std::f64::consts::PI).ln());
    z.iter().map(|&v| c - S::of(0.5) * v * v).sum()
}

/// `log N(z; μ, diag(exp(log_var)))`.
pub fn gaussian_log_density<S: Scalar>(post: &PosteriorParams<S>, z: &[S]) -> S {
    let c = S::of(-0.5 * (2.0 * std::f64::consts::PI).ln());
    let half = S::of(0.5);
    post.mu
        .iter()
        .zip(&post.log_var)
        .zip(z)
        .map(|((&m, &lv), &v)| {
            let d = v - m;
            c - half * lv - half * d * d / lv.exp()
        })
        .sum()
}

/// `z = μ + exp(log_var / 2) ⊙ ε`.
pub fn reparameterize<S: Scalar>(post: &PosteriorParams<S>, eps: &[S]) -> Vec<S> {
    let half = S::of(0.5);
    post.mu
        .iter()
        .zip(&post.log_var)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect()
}

/// Fills `out` with independent standard normal draws.
pub fn standard_normal<S: Scalar, R: Rng + ?Sized>(rng: &mut R, out: &mut [S]) {
    for v in out {
        *v = S::of(rng.sample::<f64, _>(StandardNormal));
    }
}

impl<S: Scalar> VaeParams<S> {
    /// All-zero parameters.
    pub fn zeros(dims: VaeDims) -> Self {
        let layout = Layout::new(dims);
        Self { dims, layout, theta: vec![S::zero(); layout.total] }
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) initialisation for every block.
    pub fn init<R: Rng + ?Sized>(dims: VaeDims, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        let l = p.layout;
        let blocks = [
            (l.enc_w, l.mu_w, dims.input),
            (l.mu_w, l.lv_w, dims.hidden),
            (l.lv_w, l.dec_w, dims.hidden),
            (l.dec_w, l.out_w, dims.latent),
            (l.out_w, l.total, dims.hidden),
        ];
        for (start, end, fan_in) in blocks {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for v in &mut p.theta[start..end] {
                *v = S::of(rng.random_range(-bound..bound));
            }
        }
        p
    }

    pub fn from_vec(dims: VaeDims, theta: Vec<S>) -> Result<Self> {
        let layout = Layout::new(dims);
        if theta.len() != layout.total {
            return Err(Error::Dimension { expected: layout.total, actual: theta.len() });
        }
        Ok(Self { dims, layout, theta })
    }

    pub fn dims(&self) -> VaeDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[S] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.theta
    }

    /// Converts to another scalar type.
    pub fn cast<T: Scalar>(&self) -> VaeParams<T> {
        VaeParams {
            dims: self.dims,
            layout: self.layout,
            theta: self.theta.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }

    fn block(&self, start: usize, end: usize) -> &[S] {
        &self.theta[start..end]
    }

    fn check_input(&self, x: &[u8]) -> Result<()> {
        if x.len() != self.dims.input {
            return Err(Error::Dimension { expected: self.dims.input, actual: x.len() });
        }
        Ok(())
    }

    fn check_latent(&self, z: &[S]) -> Result<()> {
        if z.len() != self.dims.latent {
            return Err(Error::Dimension { expected: self.dims.latent, actual: z.len() });
        }
        Ok(())
    }

    fn encoder_pass(&self, x: &[u8]) -> EncoderPass<S> {
        let VaeDims { input, hidden, latent } = self.dims;
        let l = &self.layout;
        let w = self.block(l.enc_w, l.enc_b);
        let mut h: Vec<S> = self.block(l.enc_b, l.mu_w).to_vec();
        // x is a bit vector, so accumulate only the set columns
        for (c, &bit) in x.iter().enumerate() {
            if bit != 0 {
                for (r, hr) in h.iter_mut().enumerate() {
                    *hr += w[r * input + c];
                }
            }
        }
        for v in &mut h {
            *v = v.tanh();
        }
        let mut mu = self.block(l.mu_b, l.lv_w).to_vec();
        matvec_acc(self.block(l.mu_w, l.mu_b), hidden, &h, &mut mu);
        let mut lv = self.block(l.lv_b, l.dec_w).to_vec();
        matvec_acc(self.block(l.lv_w, l.lv_b), hidden, &h, &mut lv);
        let (lo, hi) = (S::of(LOG_VAR_MIN), S::of(LOG_VAR_MAX));
        let mut lv_free = vec![true; latent];
        for (v, free) in lv.iter_mut().zip(&mut lv_free) {
            if *v < lo {
                *v = lo;
                *free = false;
            } else if *v > hi {
                *v = hi;
                *free = false;
            }
        }
        EncoderPass { hidden: h, mu, log_var: lv, lv_free }
    }

    /// Parameters of `q(z|x)`.
    pub fn posterior_params(&self, x: &[u8]) -> Result<PosteriorParams<S>> {
        self.check_input(x)?;
        let pass = self.encoder_pass(x);
        if !all_finite(&pass.mu) || !all_finite(&pass.log_var) {
            return Err(Error::NonFinite("encoder output"));
        }
        Ok(PosteriorParams { mu: pass.mu, log_var: pass.log_var })
    }

    fn decoder_pass(&self, z: &[S]) -> (Vec<S>, Vec<S>) {
        let VaeDims { hidden, latent, .. } = self.dims;
        let l = &self.layout;
        let mut h = self.block(l.dec_b, l.out_w).to_vec();
        matvec_acc(self.block(l.dec_w, l.dec_b), latent, z, &mut h);
        for v in &mut h {
            *v = v.tanh();
        }
        let mut logits = self.block(l.out_b, l.total).to_vec();
        matvec_acc(self.block(l.out_w, l.out_b), hidden, &h, &mut logits);
        (h, logits)
    }

    /// Output logits of the decoder.
    pub fn decoder_logits(&self, z: &[S]) -> Result<Vec<S>> {
        self.check_latent(z)?;
        let (_, logits) = self.decoder_pass(z);
        if !all_finite(&logits) {
            return Err(Error::NonFinite("decoder logits"));
        }
        Ok(logits)
    }

    /// Bernoulli means `p(x_i = 1 | z)`.
    pub fn decoder_bernoulli(&self, z: &[S]) -> Result<Vec<S>> {
        Ok(self.decoder_logits(z)?.into_iter().map(S::sigmoid).collect())
    }

    /// `log p(x | z)`.
    pub fn log_likelihood(&self, x: &[u8], z: &[S]) -> Result<S> {
        self.check_input(x)?;
        Ok(bernoulli_log_likelihood(&self.decoder_logits(z)?, x))
    }

    /// `(log p(x, z), log q(z | x))`.
    pub fn log_densities(&self, x: &[u8], z: &[S]) -> Result<(S, S)> {
        let post = self.posterior_params(x)?;
        self.log_densities_with(x, &post, z)
    }

    /// As [`log_densities`](Self::log_densities) with a precomputed posterior.
    pub fn log_densities_with(
        &self,
        x: &[u8],
        post: &PosteriorParams<S>,
        z: &[S],
    ) -> Result<(S, S)> {
        let log_joint = self.log_likelihood(x, z)? + standard_normal_log_density(z);
        Ok((log_joint, gaussian_log_density(post, z)))
    }

    /// Monte Carlo ELBO: mean of `log p(x|z)` over `n_draws` reparameterised
    /// draws, minus the closed-form KL term.
    pub fn elbo_estimate<R: Rng + ?Sized>(&self, x: &[u8], n_draws: usize, rng: &mut R) -> Result<S> {
        if n_draws == 0 {
            return Err(Error::InvalidArgument("n_draws must be at least 1".into()));
        }
        let post = self.posterior_params(x)?;
        let mut eps = vec![S::zero(); self.dims.latent];
        let mut total = S::zero();
        for _ in 0..n_draws {
            standard_normal(rng, &mut eps);
            let z = reparameterize(&post, &eps);
            total += self.log_likelihood(x, &z)?;
        }
        Ok(total / S::of_usize(n_draws) - kl_to_standard_normal(&post))
    }

    /// Single-draw ELBO for a fixed noise vector (the training objective).
    pub fn elbo_with_noise(&self, x: &[u8], eps: &[S]) -> Result<S> {
        self.check_input(x)?;
        self.check_latent(eps)?;
        let pass = self.encoder_pass(x);
        let post = PosteriorParams { mu: pass.mu, log_var: pass.log_var };
        let z = reparameterize(&post, eps);
        let (_, logits) = self.decoder_pass(&z);
        Ok(bernoulli_log_likelihood(&logits, x) - kl_to_standard_normal(&post))
    }

    /// Single-draw ELBO and its gradient, added into `grad`.
    pub fn elbo_gradient(&self, x: &[u8], eps: &[S], grad: &mut [S]) -> Result<S> {
        self.check_input(x)?;
        self.check_latent(eps)?;
        if grad.len() != self.theta.len() {
            return Err(Error::Dimension { expected: self.theta.len(), actual: grad.len() });
        }
        let VaeDims { input, hidden, latent } = self.dims;
        let l = self.layout;
        let half = S::of(0.5);

        // forward
        let enc = self.encoder_pass(x);
        let sigma: Vec<S> = enc.log_var.iter().map(|&lv| (half * lv).exp()).collect();
        let z: Vec<S> = (0..latent).map(|j| enc.mu[j] + sigma[j] * eps[j]).collect();
        let (dh, logits) = self.decoder_pass(&z);
        let post = PosteriorParams { mu: enc.mu, log_var: enc.log_var };
        let elbo = bernoulli_log_likelihood(&logits, x) - kl_to_standard_normal(&post);

        // ∂/∂logits of Σ x a − softplus(a) is x − sigmoid(a)
        let g_logits: Vec<S> = logits
            .iter()
            .zip(x)
            .map(|(&a, &b)| if b != 0 { S::one() } else { S::zero() } - a.sigmoid())
            .collect();
        outer_acc(&g_logits, &dh, &mut grad[l.out_w..l.out_b]);
        for (g, v) in grad[l.out_b..l.total].iter_mut().zip(&g_logits) {
            *g += *v;
        }

        let mut g_dh = vec![S::zero(); hidden];
        matvec_t_acc(self.block(l.out_w, l.out_b), hidden, &g_logits, &mut g_dh);
        let g_dpre: Vec<S> = g_dh.iter().zip(&dh).map(|(&g, &h)| g * (S::one() - h * h)).collect();
        outer_acc(&g_dpre, &z, &mut grad[l.dec_w..l.dec_b]);
        for (g, v) in grad[l.dec_b..l.out_w].iter_mut().zip(&g_dpre) {
            *g += *v;
        }

        let mut g_z = vec![S::zero(); latent];
        matvec_t_acc(self.block(l.dec_w, l.dec_b), latent, &g_dpre, &mut g_z);

        // KL contributes −μ to ∂/∂μ and −½(exp(lv) − 1) to ∂/∂lv
        let g_mu: Vec<S> = (0..latent).map(|j| g_z[j] - post.mu[j]).collect();
        let g_lv: Vec<S> = (0..latent)
            .map(|j| {
                if enc.lv_free[j] {
                    g_z[j] * eps[j] * half * sigma[j] - half * (post.log_var[j].exp() - S::one())
                } else {
                    S::zero()
                }
            })
            .collect();

        outer_acc(&g_mu, &enc.hidden, &mut grad[l.mu_w..l.mu_b]);
        for (g, v) in grad[l.mu_b..l.lv_w].iter_mut().zip(&g_mu) {
            *g += *v;
        }
        outer_acc(&g_lv, &enc.hidden, &mut grad[l.lv_w..l.lv_b]);
        for (g, v) in grad[l.lv_b..l.dec_w].iter_mut().zip(&g_lv) {
            *g += *v;
        }

        let mut g_eh = vec![S::zero(); hidden];
        matvec_t_acc(self.block(l.mu_w, l.mu_b), hidden, &g_mu, &mut g_eh);
        matvec_t_acc(self.block(l.lv_w, l.lv_b), hidden, &g_lv, &mut g_eh);
        let g_epre: Vec<S> =
            g_eh.iter().zip(&enc.hidden).map(|(&g, &h)| g * (S::one() - h * h)).collect();
        {
            let gw = &mut grad[l.enc_w..l.enc_b];
            for (c, &bit) in x.iter().enumerate() {
                if bit != 0 {
                    for (r, &g) in g_epre.iter().enumerate() {
                        gw[r * input + c] += g;
                    }
                }
            }
        }
        for (g, v) in grad[l.enc_b..l.mu_w].iter_mut().zip(&g_epre) {
            *g += *v;
        }
        Ok(elbo)
    }
}

/// Hyperparameters for [`train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Latent dimension as a fraction of the input dimension.
    pub latent_fraction: f64,
    /// Hidden width; defaults to the input dimension.
    pub hidden: Option<usize>,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-2,
            seed: 0,
            latent_fraction: 0.5,
            hidden: None,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.latent_fraction > 0.0 && self.latent_fraction <= 1.0) {
            return Err(Error::InvalidArgument("latent fraction must be in (0, 1]".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument("clip norm must be positive".into()));
        }
        Ok(())
    }

    pub fn dims_for(&self, input: usize) -> VaeDims {
        let latent = ((self.latent_fraction * input as f64).round() as usize).clamp(1, input.max(1));
        VaeDims { input, hidden: self.hidden.unwrap_or(input).max(1), latent }
    }
}

/// Trained parameters plus the per-epoch mean training ELBO.
#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub params: VaeParams<S>,
    pub epoch_elbo: Vec<f64>,
}

/// Minibatch gradient ascent on the single-draw ELBO.
pub fn train<S: Scalar>(data: &EncodedDataset, cfg: &TrainConfig) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let dims = cfg.dims_for(data.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = VaeParams::<S>::init(dims, &mut rng);
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![S::zero(); params.theta.len()];
    let mut eps = vec![S::zero(); dims.latent];
    let lr = S::of(cfg.learning_rate);
    let clip = S::of(cfg.clip_norm);
    let mut epoch_elbo = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        let mut sum = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(S::zero());
            for &i in batch {
                standard_normal(&mut rng, &mut eps);
                let e = params.elbo_gradient(data.row(i), &eps, &mut grad)?;
                sum += e.as_f64();
            }
            let scale = S::one() / S::of_usize(batch.len());
            let mut norm2 = S::zero();
            for g in grad.iter_mut() {
                *g *= scale;
                norm2 += *g * *g;
            }
            let norm = norm2.sqrt();
            if !norm.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let step = if norm > clip { lr * clip / norm } else { lr };
            for (p, g) in params.theta.iter_mut().zip(&grad) {
                *p += step * *g;
            }
        }
        let mean = sum / n as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        epoch_elbo.push(mean);
    }
    Ok(TrainOutcome { params, epoch_elbo })
}

fn shuffle<T, R: Rng + ?Sized>(v: &mut [T], rng: &mut R) {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relation::{AttributeSchema, EncodingMode, Relation};

    fn small_dims() -> VaeDims {
        VaeDims { input: 6, hidden: 4, latent: 2 }
    }

    #[test]
    fn zero_model_posterior_equals_biases() {
        let dims = small_dims();
        let mut p = VaeParams::<f64>::zeros(dims);
        let l = p.layout;
        p.theta[l.mu_b] = 0.3;
        p.theta[l.mu_b + 1] = -0.7;
        p.theta[l.lv_b] = 1.5;
        p.theta[l.lv_b + 1] = -2.0;
        let post = p.posterior_params(&[1, 0, 1, 1, 0, 0]).unwrap();
        assert_eq!(post.mu, vec![0.3, -0.7]);
        assert_eq!(post.log_var, vec![1.5, -2.0]);
    }

    #[test]
    fn log_var_is_clamped() {
        let dims = small_dims();
        let mut p = VaeParams::<f64>::zeros(dims);
        let l = p.layout;
        p.theta[l.lv_b] = 40.0;
        p.theta[l.lv_b + 1] = -40.0;
        let post = p.posterior_params(&[0; 6]).unwrap();
        assert_eq!(post.log_var, vec![LOG_VAR_MAX, LOG_VAR_MIN]);
    }

    #[test]
    fn posterior_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = VaeParams::<f64>::init(small_dims(), &mut rng);
        let x = [1, 1, 0, 0, 1, 0];
        assert_eq!(p.posterior_params(&x).unwrap(), p.posterior_params(&x).unwrap());
    }

    #[test]
    fn input_dimension_is_checked() {
        let p = VaeParams::<f64>::zeros(small_dims());
        assert!(matches!(p.posterior_params(&[0; 5]), Err(Error::Dimension { .. })));
        assert!(matches!(p.decoder_logits(&[0.0; 3]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn non_finite_weights_are_reported() {
        let mut p = VaeParams::<f64>::zeros(small_dims());
        let l = p.layout;
        p.theta[l.mu_b] = f64::NAN;
        assert!(matches!(p.posterior_params(&[0; 6]), Err(Error::NonFinite(_))));
        p.theta[l.out_b] = f64::INFINITY;
        assert!(matches!(p.decoder_bernoulli(&[0.0; 2]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn reparameterize_identities() {
        let post = PosteriorParams { mu: vec![1.0, -2.0], log_var: vec![0.4, -1.0] };
        assert_eq!(reparameterize(&post, &[0.0, 0.0]), post.mu);
        let std = PosteriorParams { mu: vec![0.0, 0.0], log_var: vec![0.0, 0.0] };
        assert_eq!(reparameterize(&std, &[0.25, -1.5]), vec![0.25, -1.5]);
    }

    #[test]
    fn reparameterize_moments_match() {
        let post = PosteriorParams { mu: vec![0.7], log_var: vec![-0.6] };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut eps = [0.0f64];
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                standard_normal(&mut rng, &mut eps);
                reparameterize(&post, &eps)[0]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let true_var = (-0.6f64).exp();
        let se_mean = (true_var / n as f64).sqrt();
        // var of the sample variance for a normal is 2σ⁴/(n−1)
        let se_var = (2.0 * true_var * true_var / (n - 1) as f64).sqrt();
        assert!((mean - 0.7).abs() < 3.0 * se_mean, "mean {mean}");
        assert!((var - true_var).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn zero_model_decodes_to_one_half() {
        let p = VaeParams::<f64>::zeros(small_dims());
        assert_eq!(p.decoder_bernoulli(&[0.3, -1.0]).unwrap(), vec![0.5; 6]);
    }

    #[test]
    fn bernoulli_likelihood_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = VaeParams::<f64>::init(small_dims(), &mut rng);
        let z = [0.4, -0.9];
        let x = [1u8, 0, 0, 1, 1, 0];
        let probs = p.decoder_bernoulli(&z).unwrap();
        assert!(probs.iter().all(|&q| q > 0.0 && q < 1.0));
        let direct: f64 = probs
            .iter()
            .zip(&x)
            .map(|(&q, &b)| if b == 1 { q.ln() } else { (1.0 - q).ln() })
            .sum();
        assert!((p.log_likelihood(&x, &z).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn standard_normal_log_density_at_zero() {
        let post = PosteriorParams { mu: vec![0.0], log_var: vec![0.0] };
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((gaussian_log_density(&post, &[0.0]) - expected).abs() < 1e-15);
        assert!((standard_normal_log_density(&[0.0f64]) - expected).abs() < 1e-15);
    }

    /// Hand-set model with d = 2, h = 1, d' = 1, evaluated in closed form.
    #[test]
    fn log_densities_match_hand_computation() {
        let dims = VaeDims { input: 2, hidden: 1, latent: 1 };
        // enc_w(2) enc_b(1) mu_w(1) mu_b(1) lv_w(1) lv_b(1) dec_w(1) dec_b(1) out_w(2) out_b(2)
        let theta = vec![0.5, -0.25, 0.1, 2.0, 0.3, -1.0, -0.4, 1.5, 0.0, 0.8, -1.2, 0.2, -0.1];
        let p = VaeParams::from_vec(dims, theta).unwrap();
        let x = [1u8, 0];
        let z = 0.35;

        let he = (0.5f64 + 0.1).tanh();
        let mu = 2.0 * he + 0.3;
        let lv = -he - 0.4;
        let hd = (1.5f64 * z + 0.0).tanh();
        let a0 = 0.8 * hd + 0.2;
        let a1 = -1.2 * hd - 0.1;
        let p0 = 1.0 / (1.0 + (-a0).exp());
        let p1 = 1.0 / (1.0 + (-a1).exp());
        let log_px_z = p0.ln() + (1.0 - p1).ln();
        let log_pz = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z;
        let log_q = -0.5 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * lv
            - 0.5 * (z - mu) * (z - mu) / lv.exp();

        let (lj, lq) = p.log_densities(&x, &[z]).unwrap();
        assert!((lj - (log_px_z + log_pz)).abs() < 1e-12);
        assert!((lq - log_q).abs() < 1e-12);
    }

    #[test]
    fn kl_is_zero_only_at_standard_normal() {
        let zero = PosteriorParams { mu: vec![0.0; 3], log_var: vec![0.0; 3] };
        assert_eq!(kl_to_standard_normal(&zero), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let post = PosteriorParams {
                mu: (0..3).map(|_| rng.random_range(-3.0..3.0)).collect(),
                log_var: (0..3).map(|_| rng.random_range(-5.0..5.0)).collect(),
            };
            assert!(kl_to_standard_normal(&post) > 0.0);
        }
    }

    fn repeated_tuple_dataset(n: usize) -> EncodedDataset {
        let schema = vec![
            AttributeSchema::categorical("a", (0..4).map(|i| i.to_string()).collect()),
            AttributeSchema::categorical("b", (0..3).map(|i| i.to_string()).collect()),
            AttributeSchema::categorical("c", (0..2).map(|i| i.to_string()).collect()),
        ];
        let rel = Relation::new(schema, vec![vec![2, 1, 1]; n]).unwrap();
        crate::relation::encode_dataset(&rel, EncodingMode::Binary).unwrap()
    }

    #[test]
    fn training_is_deterministic() {
        let data = repeated_tuple_dataset(50);
        let cfg = TrainConfig { epochs: 3, batch_size: 8, seed: 42, ..Default::default() };
        let a = train::<f64>(&data, &cfg).unwrap();
        let b = train::<f64>(&data, &cfg).unwrap();
        assert_eq!(a.params.as_slice(), b.params.as_slice());
        assert_eq!(a.epoch_elbo, b.epoch_elbo);
    }

    #[test]
    fn repeated_tuple_is_reconstructed() {
        let data = repeated_tuple_dataset(256);
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 16,
            learning_rate: 0.05,
            seed: 7,
            ..Default::default()
        };
        let out = train::<f64>(&data, &cfg).unwrap();
        let x = data.row(0);
        let post = out.params.posterior_params(x).unwrap();
        let ll = out.params.log_likelihood(x, &post.mu).unwrap();
        assert!(ll.exp() >= 0.99, "reconstruction probability {}", ll.exp());
    }

    #[test]
    fn train_rejects_bad_config() {
        let data = repeated_tuple_dataset(4);
        let bad = TrainConfig { epochs: 0, ..Default::default() };
        assert!(train::<f64>(&data, &bad).is_err());
        let bad = TrainConfig { latent_fraction: 0.0, ..Default::default() };
        assert!(train::<f64>(&data, &bad).is_err());
    }

    #[test]
    fn runs_in_single_precision() {
        let data = repeated_tuple_dataset(32);
        let cfg = TrainConfig { epochs: 2, batch_size: 8, ..Default::default() };
        let out = train::<f32>(&data, &cfg).unwrap();
        assert!(out.epoch_elbo.iter().all(|e| e.is_finite()));
    }
}
