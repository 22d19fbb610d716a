//! Conditional denoising diffusion over trial signals.
//!
//! The forward process noisifies a signal to step `t`; a small 1-D
//! convolutional network predicts the injected noise given the step (and
//! optionally the class label). Inference either refines the input from a
//! mid-range step or samples from pure noise, walking the learned reverse
//! process down to step zero.

use crate::error::{Error, Result};
use crate::nn::{kernels, Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::scalar::{s, Scalar};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// What the noise predictor is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    None,
    Class,
}

/// Reverse-process entry point at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    /// Noisify the input to `round(refine_strength * n_steps)` and denoise.
    Refine,
    /// Start from pure noise at step `n_steps`.
    Sample,
}

/// Diffusion schedule and noise-predictor hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiffusionConfig {
    pub n_steps: usize,
    /// Per-step noise variances, nondecreasing in `(0, 1)`.
    pub betas: Vec<f64>,
    pub conditioning: Conditioning,
    pub hidden: usize,
    pub kernel: usize,
    pub refine_strength: f64,
    pub mode: InferenceMode,
    /// Weight of the auxiliary `|x0_estimate - x|` term in the DDPM loss.
    pub lambda_aux: f64,
}

impl DiffusionConfig {
    /// Linear beta schedule from `start` to `end` over `n_steps`.
    pub fn linear(n_steps: usize, start: f64, end: f64) -> Self {
        let betas = (0..n_steps)
            .map(|i| {
                if n_steps == 1 {
                    start
                } else {
                    start + (end - start) * i as f64 / (n_steps - 1) as f64
                }
            })
            .collect();
        Self {
            n_steps,
            betas,
            conditioning: Conditioning::Class,
            hidden: 32,
            kernel: 5,
            refine_strength: 0.5,
            mode: InferenceMode::Refine,
            lambda_aux: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 1 || self.betas.len() != self.n_steps {
            return Err(Error::Config(format!(
                "need one beta per step: {} betas for {} steps",
                self.betas.len(),
                self.n_steps
            )));
        }
        let mut prev = 0.0;
        for (i, &b) in self.betas.iter().enumerate() {
            if !(0.0 < b && b < 1.0) || b < prev {
                return Err(Error::Config(format!(
                    "betas must be nondecreasing within (0,1); beta[{i}] = {b}"
                )));
            }
            prev = b;
        }
        if !(0.0..=1.0).contains(&self.refine_strength) {
            return Err(Error::Config("refine_strength must lie in [0,1]".into()));
        }
        if self.hidden < 1 || self.kernel < 1 {
            return Err(Error::Config("hidden and kernel must be >= 1".into()));
        }
        if self.lambda_aux < 0.0 {
            return Err(Error::Config("lambda_aux must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self::linear(50, 1e-4, 0.02)
    }
}

/// Cumulative products of `(1 - beta)` for `t = 1..=n_steps`.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(config: &DiffusionConfig) -> Result<Self> {
        config.validate()?;
        let mut alpha_bars = Vec::with_capacity(config.n_steps);
        let mut acc = 1.0;
        for &b in &config.betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas: config.betas.clone(),
            alpha_bars,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.betas.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.n_steps() {
            return Err(Error::Config(format!(
                "diffusion step {t} outside 1..={}",
                self.n_steps()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// `x_t = sqrt(abar_t) x + sqrt(1 - abar_t) noise`.
    pub fn forward_noise<S: Scalar>(
        &self,
        x: &Array2<S>,
        t: usize,
        noise: &Array2<S>,
    ) -> Result<Array2<S>> {
        self.check_t(t)?;
        if x.dim() != noise.dim() {
            return Err(Error::Dimension(format!(
                "noise shape {:?} must match signal shape {:?}",
                noise.dim(),
                x.dim()
            )));
        }
        let ab = self.alpha_bar(t);
        let a = s::<S>(ab.sqrt());
        let b = s::<S>((1.0 - ab).sqrt());
        Ok(x.mapv(|v| v * a) + &noise.mapv(|v| v * b))
    }
}

pub(crate) fn sample_normal<S: Scalar>(rng: &mut ChaCha8Rng, dim: (usize, usize)) -> Array2<S> {
    Array2::from_shape_fn(dim, |_| {
        let z: f64 = rng.sample(StandardNormal);
        s::<S>(z)
    })
}

/// One presampled training item for the DDPM loss.
pub struct DdpmItem<S: Scalar> {
    pub signal: Array2<S>,
    pub label: Option<usize>,
    pub t: usize,
    pub noise: Array2<S>,
}

/// Presampled randomness for one reverse pass.
pub struct DenoiseNoises<S: Scalar> {
    pub t_start: usize,
    pub initial: Array2<S>,
    pub reverse: Vec<Array2<S>>,
}

/// The noise-prediction network plus its schedule.
pub struct NoisePredictor {
    pub config: DiffusionConfig,
    pub schedule: DiffusionSchedule,
    channels: usize,
    pw_in: ParamId,
    b_in: ParamId,
    t_emb: ParamId,
    c_emb: Option<ParamId>,
    dw: ParamId,
    pw_mid: ParamId,
    b_mid: ParamId,
    pw_out: ParamId,
    b_out: ParamId,
}

impl NoisePredictor {
    pub fn new<S: Scalar>(
        config: DiffusionConfig,
        channels: usize,
        n_classes: usize,
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let schedule = DiffusionSchedule::new(&config)?;
        let h = config.hidden;
        let pw_in = store.register_glorot("ddpm.in.w", ParamGroup::Ddpm, h, channels, rng);
        let b_in = store.register_zeros("ddpm.in.b", ParamGroup::Ddpm, h, 1);
        let t_emb = store.register_glorot("ddpm.t_emb", ParamGroup::Ddpm, config.n_steps, h, rng);
        let c_emb = match config.conditioning {
            Conditioning::Class => {
                Some(store.register_glorot("ddpm.c_emb", ParamGroup::Ddpm, n_classes, h, rng))
            }
            Conditioning::None => None,
        };
        let dw = store.register_glorot("ddpm.dw", ParamGroup::Ddpm, h, config.kernel, rng);
        let pw_mid = store.register_glorot("ddpm.mid.w", ParamGroup::Ddpm, h, h, rng);
        let b_mid = store.register_zeros("ddpm.mid.b", ParamGroup::Ddpm, h, 1);
        let pw_out = store.register_glorot("ddpm.out.w", ParamGroup::Ddpm, channels, h, rng);
        let b_out = store.register_zeros("ddpm.out.b", ParamGroup::Ddpm, channels, 1);
        Ok(Self {
            config,
            schedule,
            channels,
            pw_in,
            b_in,
            t_emb,
            c_emb,
            dw,
            pw_mid,
            b_mid,
            pw_out,
            b_out,
        })
    }

    /// All parameter ids, for gradient checks.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.pw_in,
            self.b_in,
            self.t_emb,
            self.dw,
            self.pw_mid,
            self.b_mid,
            self.pw_out,
            self.b_out,
        ];
        if let Some(c) = self.c_emb {
            ids.push(c);
        }
        ids
    }

    fn predict_plain<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        x_t: &Array2<S>,
        t: usize,
        label: Option<usize>,
    ) -> Array2<S> {
        let timepoints = x_t.ncols();
        let mut h = store.value(self.pw_in).dot(x_t);
        h += &store.value(self.b_in).broadcast(h.dim()).unwrap();
        let temb = store.value(self.t_emb).row(t - 1).to_owned();
        for (mut row, &e) in h.rows_mut().into_iter().zip(temb.iter()) {
            row.mapv_inplace(|v| v + e);
        }
        if let (Some(c_emb), Some(y)) = (self.c_emb, label) {
            let cemb = store.value(c_emb).row(y).to_owned();
            for (mut row, &e) in h.rows_mut().into_iter().zip(cemb.iter()) {
                row.mapv_inplace(|v| v + e);
            }
        }
        let h = kernels::elu(&h);
        let d = kernels::conv_time_depthwise(&h, store.value(self.dw), 1);
        let mut m = store.value(self.pw_mid).dot(&d);
        m += &store.value(self.b_mid).broadcast(m.dim()).unwrap();
        let m = kernels::elu(&m);
        let mut out = store.value(self.pw_out).dot(&m);
        out += &store
            .value(self.b_out)
            .broadcast((self.channels, timepoints))
            .unwrap();
        out
    }

    fn predict_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x_t: Var,
        t: usize,
        label: Option<usize>,
    ) -> Var {
        let w_in = g.param(store, self.pw_in);
        let b_in = g.param(store, self.b_in);
        let mut h = g.matmul(w_in, x_t);
        h = g.add_colvec(h, b_in);
        let temb_table = g.param(store, self.t_emb);
        let temb_row = g.select_row(temb_table, t - 1);
        let temb_col = g.transpose(temb_row);
        h = g.add_colvec(h, temb_col);
        if let (Some(c_emb), Some(y)) = (self.c_emb, label) {
            let table = g.param(store, c_emb);
            let row = g.select_row(table, y);
            let col = g.transpose(row);
            h = g.add_colvec(h, col);
        }
        let h = g.elu(h);
        let dw = g.param(store, self.dw);
        let d = g.conv_time_depthwise(h, dw, 1);
        let w_mid = g.param(store, self.pw_mid);
        let b_mid = g.param(store, self.b_mid);
        let mut m = g.matmul(w_mid, d);
        m = g.add_colvec(m, b_mid);
        let m = g.elu(m);
        let w_out = g.param(store, self.pw_out);
        let b_out = g.param(store, self.b_out);
        let out = g.matmul(w_out, m);
        g.add_colvec(out, b_out)
    }

    /// Differentiable DDPM loss over presampled items:
    /// `mean_i [ mean((eps_hat - eps)^2) + lambda_aux * mean|x0_estimate - x| ]`
    /// with the one-step estimate `x0 = (x_t - sqrt(1-abar) eps_hat)/sqrt(abar)`.
    pub fn loss_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        items: &[DdpmItem<S>],
    ) -> Result<Var> {
        if items.is_empty() {
            return Err(Error::Dimension("ddpm batch must be nonempty".into()));
        }
        let lambda = s::<S>(self.config.lambda_aux);
        let mut total: Option<Var> = None;
        for item in items {
            let x_t = self
                .schedule
                .forward_noise(&item.signal, item.t, &item.noise)?;
            let x_t_var = g.constant(x_t);
            let eps_hat = self.predict_graph(g, store, x_t_var, item.t, item.label);
            let eps = g.constant(item.noise.clone());
            let diff = g.sub(eps_hat, eps);
            let sq = g.mul(diff, diff);
            let mut item_loss = g.mean_all(sq);

            if self.config.lambda_aux > 0.0 {
                let ab = self.schedule.alpha_bar(item.t);
                let scaled_eps = g.scale(eps_hat, s::<S>((1.0 - ab).sqrt()));
                let num = g.sub(x_t_var, scaled_eps);
                let x0 = g.scale(num, s::<S>(1.0 / ab.sqrt()));
                let x_clean = g.constant(item.signal.clone());
                let l1 = crate::objective::l1_graph(g, x0, x_clean);
                let weighted = g.scale(l1, lambda);
                item_loss = g.add(item_loss, weighted);
            }
            total = Some(match total {
                Some(t) => g.add(t, item_loss),
                None => item_loss,
            });
        }
        let sum = total.unwrap();
        Ok(g.scale(sum, S::one() / s::<S>(items.len() as f64)))
    }

    /// Presample every noise draw one reverse pass will need, so the same
    /// chain can be replayed on or off the tape.
    pub fn sample_denoise_noises<S: Scalar>(
        &self,
        dim: (usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> DenoiseNoises<S> {
        let n = self.schedule.n_steps();
        let t_start = match self.config.mode {
            InferenceMode::Refine => {
                ((self.config.refine_strength * n as f64).round() as usize).min(n)
            }
            InferenceMode::Sample => n,
        };
        DenoiseNoises {
            t_start,
            initial: sample_normal(rng, dim),
            reverse: (0..t_start.saturating_sub(1))
                .map(|_| sample_normal(rng, dim))
                .collect(),
        }
    }

    /// Reverse pass on the tape: gradients flow through every step into the
    /// predictor parameters. Noise draws must be presampled.
    pub fn denoise_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: &Array2<S>,
        label: Option<usize>,
        noises: &DenoiseNoises<S>,
    ) -> Result<Var> {
        let t_start = noises.t_start;
        if t_start == 0 {
            return Ok(g.constant(x.clone()));
        }
        let mut x_t = match self.config.mode {
            InferenceMode::Refine => {
                let noisy = self.schedule.forward_noise(x, t_start, &noises.initial)?;
                g.constant(noisy)
            }
            InferenceMode::Sample => g.constant(noises.initial.clone()),
        };
        for t in (1..=t_start).rev() {
            let eps = self.predict_graph(g, store, x_t, t, label);
            let beta = self.schedule.beta(t);
            let ab = self.schedule.alpha_bar(t);
            let alpha = 1.0 - beta;
            let scaled_eps = g.scale(eps, s::<S>(beta / (1.0 - ab).sqrt()));
            let centered = g.sub(x_t, scaled_eps);
            let mut next = g.scale(centered, s::<S>(1.0 / alpha.sqrt()));
            if t > 1 {
                let ab_prev = self.schedule.alpha_bar(t - 1);
                let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
                let z = &noises.reverse[t_start - t];
                let noise = g.constant(z.mapv(|v| v * s::<S>(sigma)));
                next = g.add(next, noise);
            }
            x_t = next;
        }
        Ok(x_t)
    }

    /// Denoise a signal. In refine mode the input is noisified to
    /// `round(refine_strength * n_steps)` first; in sample mode the chain
    /// starts from pure noise. All stochasticity flows from `rng`. Passing
    /// `label = None` runs the predictor unconditioned.
    pub fn denoise<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        x: &Array2<S>,
        label: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<S>> {
        if x.nrows() != self.channels {
            return Err(Error::Dimension(format!(
                "denoise input has {} channels, model expects {}",
                x.nrows(),
                self.channels
            )));
        }
        let n = self.schedule.n_steps();
        let t_start = match self.config.mode {
            InferenceMode::Refine => {
                ((self.config.refine_strength * n as f64).round() as usize).min(n)
            }
            InferenceMode::Sample => n,
        };
        if t_start == 0 {
            return Ok(x.clone());
        }
        let mut x_t = match self.config.mode {
            InferenceMode::Refine => {
                let noise = sample_normal(rng, x.dim());
                self.schedule.forward_noise(x, t_start, &noise)?
            }
            InferenceMode::Sample => sample_normal(rng, x.dim()),
        };
        for t in (1..=t_start).rev() {
            let eps = self.predict_plain(store, &x_t, t, label);
            let beta = self.schedule.beta(t);
            let ab = self.schedule.alpha_bar(t);
            let alpha = 1.0 - beta;
            let coeff = s::<S>(beta / (1.0 - ab).sqrt());
            let inv_sqrt_alpha = s::<S>(1.0 / alpha.sqrt());
            let mut next = (&x_t - &eps.mapv(|v| v * coeff)).mapv(|v| v * inv_sqrt_alpha);
            if t > 1 {
                let ab_prev = self.schedule.alpha_bar(t - 1);
                let sigma = s::<S>((beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt());
                let z = sample_normal::<S>(rng, x.dim());
                next += &z.mapv(|v| v * sigma);
            }
            x_t = next;
        }
        Ok(x_t)
    }
}
