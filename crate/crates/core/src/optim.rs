//! Rectified Adam with decoupled weight decay, global-norm clipping and the
//! step-decay learning-rate schedule.

use crate::error::{Error, Result};
use crate::net::Params;
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RAdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for RAdamHyper {
    fn default() -> Self {
        RAdamHyper {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl RAdamHyper {
    /// Maximum length of the approximated simple moving average.
    pub fn rho_inf(&self) -> f64 {
        2.0 / (1.0 - self.beta2) - 1.0
    }

    /// Length of the approximated SMA at step `t` (1-based).
    pub fn rho(&self, t: u64) -> f64 {
        let b2t = self.beta2.powi(t as i32);
        self.rho_inf() - 2.0 * t as f64 * b2t / (1.0 - b2t)
    }

    /// Variance rectification factor, or `None` while the adaptive
    /// learning rate is intractable (rho <= 4) and the update is
    /// momentum-only.
    pub fn rectification(&self, t: u64) -> Option<f64> {
        let rho = self.rho(t);
        let ri = self.rho_inf();
        (rho > 4.0).then(|| ((rho - 4.0) * (rho - 2.0) * ri / ((ri - 4.0) * (ri - 2.0) * rho)).sqrt())
    }
}

/// First and second moments for every parameter, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub hyper: RAdamHyper,
    pub t: u64,
    m: Vec<Tensor4>,
    v: Vec<Tensor4>,
}

impl OptimState {
    pub fn new(params: &Params, hyper: RAdamHyper) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor4::zeros(p.shape())).collect();
        OptimState {
            hyper,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn first_moment(&self, i: usize) -> &Tensor4 {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor4 {
        &self.v[i]
    }

    /// One RAdam step with learning rate `lr`. `grads` must list the same
    /// names with the same shapes, in the same order, as `params`.
    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "radam: {} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, ((pn, p), (gn, g))) in params.iter().zip(grads.iter()).enumerate() {
            if pn != gn || p.shape() != g.shape() || self.m[i].shape() != p.shape() {
                return Err(Error::Contract(format!(
                    "radam: gradient `{gn}` {} does not match parameter `{pn}` {}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.t += 1;
        let h = self.hyper;
        let t = self.t;
        let bc1 = 1.0 - h.beta1.powi(t as i32);
        let bc2 = 1.0 - h.beta2.powi(t as i32);
        let rect = h.rectification(t);
        for (i, ((_, p), (_, g))) in params.iter_mut().zip(grads.iter()).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = h.beta1 * *mv + (1.0 - h.beta1) * gv;
                *vv = h.beta2 * *vv + (1.0 - h.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let update = match rect {
                    Some(r) => r * m_hat / ((*vv / bc2).sqrt() + h.eps),
                    None => m_hat,
                };
                *pv -= lr * h.weight_decay * *pv + lr * update;
            }
        }
        Ok(())
    }
}

/// Global L2 norm over every gradient tensor.
pub fn global_norm(grads: &Params) -> f64 {
    grads.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt()
}

/// Scale all gradients by `max_norm / norm` when the global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut Params, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Contract(format!("max_norm must be > 0, got {max_norm}")));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(norm)
}

/// `lr0 * factor^(number of decay steps <= step)`.
pub fn lr_at(lr0: f64, decay_steps: &[usize], factor: f64, step: usize) -> f64 {
    let n = decay_steps.iter().filter(|&&d| d <= step).count();
    lr0 * factor.powi(n as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> Params {
        Params::from_entries([("x".to_string(), Tensor4::scalar(v))]).unwrap()
    }

    #[test]
    fn first_step_is_momentum_only() {
        let h = RAdamHyper::default();
        assert!((h.rho(1) - 1.0).abs() < 1e-9);
        assert!(h.rectification(1).is_none());
        let mut p = single(1.0);
        let mut st = OptimState::new(&p, RAdamHyper { weight_decay: 0.0, ..h });
        st.step(&mut p, &single(3.0), 0.1).unwrap();
        // m_hat equals the gradient on the first step
        assert!((p.get("x").unwrap().item().unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let h = RAdamHyper { weight_decay: 0.0, ..Default::default() };
        let mut p = single(2.0);
        let mut st = OptimState::new(&p, h);
        st.step(&mut p, &single(1.0), 0.0).unwrap();
        let m1 = st.first_moment(0).item().unwrap();
        let v1 = st.second_moment(0).item().unwrap();
        st.step(&mut p, &single(0.0), 0.1).unwrap();
        assert_eq!(st.t, 2);
        assert!((st.first_moment(0).item().unwrap() - 0.9 * m1).abs() < 1e-15);
        assert!((st.second_moment(0).item().unwrap() - 0.99 * v1).abs() < 1e-15);
        let before = p.get("x").unwrap().item().unwrap();
        let mut q = p.clone();
        let mut st0 = OptimState::new(&q, h);
        st0.step(&mut q, &single(0.0), 0.1).unwrap();
        assert_eq!(q.get("x").unwrap().item().unwrap(), before);
    }

    #[test]
    fn mismatched_gradients_rejected() {
        let mut p = single(1.0);
        let mut st = OptimState::new(&p, RAdamHyper::default());
        let g = Params::from_entries([("y".to_string(), Tensor4::scalar(1.0))]).unwrap();
        assert!(matches!(st.step(&mut p, &g, 0.1), Err(Error::Contract(_))));
        assert_eq!(st.t, 0);
    }

    #[test]
    fn clipping() {
        let mut g = Params::from_entries([
            ("a".to_string(), Tensor4::from_vec((1, 1, 1, 2), vec![1.2, 0.0]).unwrap()),
            ("b".to_string(), Tensor4::scalar(1.6)),
        ])
        .unwrap();
        assert!((clip_grad_norm(&mut g, 0.5).unwrap() - 2.0).abs() < 1e-12);
        assert!((g.get("b").unwrap().item().unwrap() - 0.4).abs() < 1e-12);
        assert!((global_norm(&g) - 0.5).abs() < 1e-12);
        let mut small = single(0.3);
        clip_grad_norm(&mut small, 0.5).unwrap();
        assert_eq!(small.get("x").unwrap().item().unwrap(), 0.3);
        assert!(clip_grad_norm(&mut small, 0.0).is_err());
    }

    #[test]
    fn minimises_a_parabola() {
        let mut p = single(1.0);
        let mut st = OptimState::new(&p, RAdamHyper::default());
        for _ in 0..200 {
            let x = p.get("x").unwrap().item().unwrap();
            st.step(&mut p, &single(2.0 * x), 0.05).unwrap();
        }
        assert!(p.get("x").unwrap().item().unwrap().abs() < 0.1);
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_at(1e-4, &[], 0.5, 1_000_000), 1e-4);
        let d = [500_000, 550_000];
        assert_eq!(lr_at(1e-4, &d, 0.5, 499_999), 1e-4);
        assert_eq!(lr_at(1e-4, &d, 0.5, 500_000), 5e-5);
        assert_eq!(lr_at(1e-4, &d, 0.5, 550_000), 2.5e-5);
    }
}
