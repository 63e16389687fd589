//! Two-group optimizer: the embedding network and the lattice kernels each get
//! their own learning rate and update rule. The normalization kernel is
//! stored as log-weights, so every update keeps it positive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Embed,
    Kernel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr_embed: f64,
    pub lr_kernel: f64,
    pub clip_threshold: f64,
    pub embed_method: Method,
    pub kernel_method: Method,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_embed: 0.001,
            lr_kernel: 0.01,
            clip_threshold: 0.1,
            embed_method: Method::Adam,
            kernel_method: Method::Sgd,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lr_embed", self.lr_embed)?;
        positive("lr_kernel", self.lr_kernel)?;
        positive("clip_threshold", self.clip_threshold)?;
        positive("eps", self.eps)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(())
    }

    pub fn lr(&self, group: Group) -> f64 {
        match group {
            Group::Embed => self.lr_embed,
            Group::Kernel => self.lr_kernel,
        }
    }

    pub fn method(&self, group: Group) -> Method {
        match group {
            Group::Embed => self.embed_method,
            Group::Kernel => self.kernel_method,
        }
    }
}

/// Rescales `grad` in place so its l2 norm is at most `threshold`.
/// Returns the norm before clipping.
pub fn clip(grad: &mut [f64], threshold: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > threshold {
        let s = threshold / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// One named parameter tensor together with its gradient.
pub struct Param<'a> {
    pub name: &'a str,
    pub group: Group,
    pub values: &'a mut [f64],
    pub grad: &'a [f64],
}

/// Adam moments for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    config: OptimConfig,
    moments: BTreeMap<String, Moments>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, moments: BTreeMap::new(), steps: 0 })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn moments(&self) -> &BTreeMap<String, Moments> {
        &self.moments
    }

    /// Restores state saved from [`Optimizer::steps`] and [`Optimizer::moments`].
    pub fn restore(&mut self, steps: u64, moments: BTreeMap<String, Moments>) -> Result<()> {
        if moments.values().any(|m| m.m.len() != m.v.len()) {
            return Err(shape_err("optimizer moments of unequal length"));
        }
        self.steps = steps;
        self.moments = moments;
        Ok(())
    }

    /// Applies one update to every tensor. The embedding group gradient is
    /// clipped by its joint l2 norm first. Any non-finite gradient refuses
    /// the whole step without touching parameters or state.
    pub fn step(&mut self, params: &mut [Param<'_>]) -> Result<()> {
        for p in params.iter() {
            if p.values.len() != p.grad.len() {
                return Err(shape_err(format!(
                    "{}: {} values, {} gradient entries",
                    p.name,
                    p.values.len(),
                    p.grad.len()
                )));
            }
            if let Some(m) = self.moments.get(p.name) {
                if m.m.len() != p.values.len() {
                    return Err(shape_err(format!("{}: optimizer state has a different size", p.name)));
                }
            }
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(format!("{}[{i}] = {}", p.name, p.grad[i])));
            }
        }

        let embed_norm = params
            .iter()
            .filter(|p| p.group == Group::Embed)
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let embed_scale =
            if embed_norm > self.config.clip_threshold { self.config.clip_threshold / embed_norm } else { 1.0 };

        self.steps += 1;
        let t = self.steps as f64;
        let c = self.config.clone();
        for p in params.iter_mut() {
            let scale = if p.group == Group::Embed { embed_scale } else { 1.0 };
            let lr = c.lr(p.group);
            match c.method(p.group) {
                Method::Sgd => {
                    for (x, g) in p.values.iter_mut().zip(p.grad) {
                        *x -= lr * scale * g;
                    }
                }
                Method::Adam => {
                    let n = p.values.len();
                    let mo = self
                        .moments
                        .entry(p.name.to_string())
                        .or_insert_with(|| Moments { m: vec![0.0; n], v: vec![0.0; n] });
                    let bc1 = 1.0 - c.beta1.powf(t);
                    let bc2 = 1.0 - c.beta2.powf(t);
                    for i in 0..n {
                        let g = scale * p.grad[i];
                        mo.m[i] = c.beta1 * mo.m[i] + (1.0 - c.beta1) * g;
                        mo.v[i] = c.beta2 * mo.v[i] + (1.0 - c.beta2) * g * g;
                        let mhat = mo.m[i] / bc1;
                        let vhat = mo.v[i] / bc2;
                        p.values[i] -= lr * mhat / (vhat.sqrt() + c.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sgd() -> OptimConfig {
        OptimConfig { embed_method: Method::Sgd, kernel_method: Method::Sgd, ..Default::default() }
    }

    #[test]
    fn clip_examples() {
        let mut g = vec![0.03, 0.04];
        assert!((clip(&mut g, 0.1) - 0.05).abs() < 1e-15);
        assert_eq!(g, vec![0.03, 0.04]);
        let mut g = vec![0.6, 0.8];
        clip(&mut g, 0.1);
        assert!((g[0] - 0.06).abs() < 1e-15 && (g[1] - 0.08).abs() < 1e-15);
        let mut g = vec![0.0; 3];
        clip(&mut g, 0.1);
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn sgd_kernel_step() {
        let mut opt = Optimizer::new(sgd()).unwrap();
        let mut w = vec![1.0, -2.0];
        opt.step(&mut [Param { name: "k", group: Group::Kernel, values: &mut w, grad: &[0.5, 1.0] }]).unwrap();
        assert_eq!(w, vec![1.0 - 0.01 * 0.5, -2.0 - 0.01]);
    }

    #[test]
    fn log_domain_update() {
        let mut opt = Optimizer::new(OptimConfig { lr_kernel: 1.0, ..sgd() }).unwrap();
        let mut logw = vec![0.0];
        opt.step(&mut [Param { name: "norm", group: Group::Kernel, values: &mut logw, grad: &[-0.1] }]).unwrap();
        assert!((logw[0].exp() - 1.1051709180756477).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        let mut opt = Optimizer::new(OptimConfig::default()).unwrap();
        let mut w = vec![0.3, -0.7, 1.0];
        let before = w.clone();
        opt.step(&mut [Param { name: "e", group: Group::Embed, values: &mut w, grad: &[0.02, -0.01, 0.05] }]).unwrap();
        for (a, b) in w.iter().zip(&before) {
            // |m̂| / sqrt(v̂) = 1 on the first step
            assert!(((a - b).abs() - 0.001).abs() < 1e-8);
        }
    }

    #[test]
    fn embed_group_is_clipped_jointly() {
        let mut opt = Optimizer::new(OptimConfig { lr_embed: 1.0, lr_kernel: 1.0, ..sgd() }).unwrap();
        let (mut a, mut b, mut k) = (vec![0.0], vec![0.0], vec![0.0]);
        opt.step(&mut [
            Param { name: "a", group: Group::Embed, values: &mut a, grad: &[0.6] },
            Param { name: "b", group: Group::Embed, values: &mut b, grad: &[0.8] },
            Param { name: "k", group: Group::Kernel, values: &mut k, grad: &[5.0] },
        ])
        .unwrap();
        assert!((a[0] + 0.06).abs() < 1e-15 && (b[0] + 0.08).abs() < 1e-15);
        assert_eq!(k[0], -5.0);
    }

    #[test]
    fn non_finite_gradient_refuses_step() {
        let mut opt = Optimizer::new(OptimConfig::default()).unwrap();
        let (mut a, mut k) = (vec![1.0], vec![2.0]);
        let err = opt
            .step(&mut [
                Param { name: "a", group: Group::Embed, values: &mut a, grad: &[0.1] },
                Param { name: "k", group: Group::Kernel, values: &mut k, grad: &[f64::NAN] },
            ])
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(_)));
        assert_eq!((a[0], k[0], opt.steps()), (1.0, 2.0, 0));
        assert!(opt.moments().is_empty());
    }

    #[test]
    fn invalid_config() {
        assert!(Optimizer::new(OptimConfig { lr_embed: 0.0, ..Default::default() }).is_err());
        assert!(Optimizer::new(OptimConfig { clip_threshold: -1.0, ..Default::default() }).is_err());
    }
}
