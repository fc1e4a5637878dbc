use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with decoupled weight decay:
/// `θ ← θ − α·(m̂/(√v̂ + ε) + λθ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64, eps: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.eps = eps;
        self
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// Restores state previously read from [`moments`](Self::moments).
    pub fn set_state(&mut self, step: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<()> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Checkpoint("optimizer moments disagree in shape".into()));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One update of raw slices. Slot `slot` holds this parameter's moments.
    fn update(&mut self, slot: usize, theta: &mut [f64], grad: Option<&[f64]>) {
        let (b1, b2) = (self.beta1, self.beta2);
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..theta.len() {
            let g = grad.map_or(0.0, |g| g[i]);
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            theta[i] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * theta[i]);
        }
    }

    fn ensure_slots(&mut self, sizes: impl Iterator<Item = usize>) -> Result<()> {
        let sizes: Vec<usize> = sizes.collect();
        if self.m.is_empty() {
            self.m = sizes.iter().map(|&n| vec![0.0; n]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != sizes.len() || self.m.iter().zip(&sizes).any(|(m, &n)| m.len() != n) {
            return Err(Error::Config("optimizer used with a different parameter set".into()));
        }
        Ok(())
    }

    /// Updates each parameter from its stored gradient (missing gradient = zero).
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        self.ensure_slots(params.iter().map(Tensor::numel))?;
        self.step += 1;
        for (slot, p) in params.iter().enumerate() {
            let g = p.grad();
            let mut theta = p.data_mut();
            self.update(slot, &mut theta, g.as_deref());
        }
        Ok(())
    }

    /// Same recurrence on plain vectors.
    pub fn step_values(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::shape("adamw", "parameter and gradient sizes differ"));
        }
        self.ensure_slots(params.iter().map(Vec::len))?;
        self.step += 1;
        for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(slot, p, Some(g));
        }
        Ok(())
    }
}

/// Rescales gradients so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(params: &[Tensor], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(Tensor::grad)
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let c = max_norm / norm;
        params.iter().for_each(|p| p.scale_grad(c));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-stepped Adam(W) on a scalar.
    fn oracle(theta0: f64, grads: &[f64], lr: f64, wd: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut th) = (0.0, 0.0, theta0);
        let mut out = Vec::new();
        for (t, &g) in grads.iter().enumerate() {
            let t = t as i32 + 1;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            th -= lr * (mh / (vh.sqrt() + eps) + wd * th);
            out.push(th);
        }
        out
    }

    #[test]
    fn first_step_hand_value() {
        let mut opt = AdamW::new(0.1, 0.0);
        let mut p = vec![vec![1.0]];
        opt.step_values(&mut p, &[vec![1.0]]).unwrap();
        assert!((p[0][0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn decay_only_path() {
        let mut opt = AdamW::new(0.1, 0.01);
        let mut p = vec![vec![2.0]];
        opt.step_values(&mut p, &[vec![0.0]]).unwrap();
        assert!((p[0][0] - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
    }

    #[test]
    fn three_steps_track_oracle() {
        let grads = [0.5, -1.25, 2.0];
        for wd in [0.0, 0.01] {
            let t = Tensor::param(&[1], vec![1.5]).unwrap();
            let mut opt = AdamW::new(0.05, wd);
            let expect = oracle(1.5, &grads, 0.05, wd);
            for (g, e) in grads.iter().zip(expect) {
                t.zero_grad();
                t.scale(*g).sum().backward().unwrap();
                opt.step(std::slice::from_ref(&t)).unwrap();
                assert!((t.data()[0] - e).abs() <= 1e-12);
            }
            assert_eq!(opt.steps(), 3);
        }
    }

    #[test]
    fn clipping_bounds_norm() {
        let a = Tensor::param(&[2], vec![3.0, 4.0]).unwrap();
        a.mul(&a).unwrap().sum().scale(0.5).backward().unwrap();
        assert_eq!(clip_grad_norm(std::slice::from_ref(&a), 1.0), 5.0);
        let g = a.grad().unwrap();
        assert!(((g[0] * g[0] + g[1] * g[1]).sqrt() - 1.0).abs() < 1e-12);
    }
}
