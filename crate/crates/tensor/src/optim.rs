use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::params::ParamSet;

/// Learning rate and weight decay for one parameter group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupConfig {
    pub lr: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Indexed by `Param::group`.
    pub groups: Vec<GroupConfig>,
}

impl AdamWConfig {
    pub fn single(lr: f64, weight_decay: f64) -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, groups: vec![GroupConfig { lr, weight_decay }] }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TensorError::Param("betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(TensorError::Param("eps must be positive".into()));
        }
        if self.groups.is_empty() {
            return Err(TensorError::Param("no parameter groups".into()));
        }
        for g in &self.groups {
            if !ok(g.lr) || !ok(g.weight_decay) {
                return Err(TensorError::Param(format!("invalid group hyperparameters {g:?}")));
            }
        }
        Ok(())
    }
}

/// AdamW moments and step counter.
#[derive(Clone, Debug)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Float> AdamW<F> {
    pub fn new(config: AdamWConfig, params: &ParamSet<F>) -> Result<Self> {
        config.validate()?;
        let m = params.iter().map(|(_, p)| vec![F::zero(); p.value.numel()]).collect::<Vec<_>>();
        let v = m.clone();
        Ok(AdamW { config, step: 0, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Sets the learning rate of every group to `base[g] * factor`.
    pub fn set_lr_scale(&mut self, base: &[f64], factor: f64) {
        for (g, b) in self.config.groups.iter_mut().zip(base) {
            g.lr = b * factor;
        }
    }

    /// One decoupled-weight-decay update of every trainable parameter.
    /// Gradients are checked for NaN/inf before anything is modified.
    pub fn step(&mut self, params: &mut ParamSet<F>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(TensorError::Contract(format!(
                "optimizer tracks {} parameters, set has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (_, p) in params.iter() {
            if !p.frozen && p.grad.iter().any(|g| !g.is_finite()) {
                return Err(TensorError::NonFinite(p.name.clone()));
            }
            if p.group >= self.config.groups.len() {
                return Err(TensorError::Param(format!("`{}` uses undefined group {}", p.name, p.group)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let (fb1, fb2) = (F::from_f64(b1), F::from_f64(b2));
        let (one, eps) = (F::one(), F::from_f64(self.config.eps));
        for (i, p) in params.iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let g = self.config.groups[p.group];
            let lr = F::from_f64(g.lr);
            let decay = F::from_f64(1.0 - g.lr * g.weight_decay);
            let (c1, c2) = (F::from_f64(1.0 / bc1), F::from_f64(1.0 / bc2));
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let gr = p.grad[j];
                m[j] = fb1 * m[j] + (one - fb1) * gr;
                v[j] = fb2 * v[j] + (one - fb2) * gr * gr;
                let mhat = m[j] * c1;
                let vhat = v[j] * c2;
                *w = *w * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup followed by cosine decay to zero; returns a multiplier in [0, 1].
pub fn warmup_cosine(step: usize, warmup: usize, total: usize) -> f64 {
    if total == 0 {
        return 1.0;
    }
    if step < warmup {
        return (step + 1) as f64 / warmup as f64;
    }
    let span = (total - warmup.min(total)).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
