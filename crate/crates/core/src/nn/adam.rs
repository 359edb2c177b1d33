//! Adam with bias correction.

use super::{NnError, Tensor2};
use ndarray::Array2;

/// Hyperparameters; defaults β1=0.9, β2=0.999, ε=1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self::with_lr(1e-3)
    }
}

/// Per-block first and second moments plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    /// Fresh state with zero moments matching the given block shapes.
    pub fn new(shapes: &[(usize, usize)], hyper: AdamHyper) -> Self {
        Self {
            m: shapes.iter().map(|&(r, c)| Array2::zeros((r, c))).collect(),
            v: shapes.iter().map(|&(r, c)| Array2::zeros((r, c))).collect(),
            t: 0,
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update over all parameter blocks.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor2],
        grads: &[Tensor2],
    ) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::ShapeMismatch {
                op: "adam_step",
                detail: format!(
                    "state has {} blocks, got {} params / {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != (self.m[i].nrows(), self.m[i].ncols()) || g.shape() != p.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "adam_step",
                    detail: format!(
                        "block {i}: state {:?}, param {:?}, grad {:?}",
                        self.m[i].dim(),
                        p.shape(),
                        g.shape()
                    ),
                });
            }
        }
        self.t += 1;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.t as i32);
        let bc2 = 1.0 - h.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let pv = p.values_mut();
            for (e, gv) in g.values().iter().enumerate() {
                let ms = m.as_slice_mut().expect("standard layout");
                let vs = v.as_slice_mut().expect("standard layout");
                ms[e] = h.beta1 * ms[e] + (1.0 - h.beta1) * gv;
                vs[e] = h.beta2 * vs[e] + (1.0 - h.beta2) * gv * gv;
                let m_hat = ms[e] / bc1;
                let v_hat = vs[e] / bc2;
                pv[e] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(values: &[f64]) -> Tensor2 {
        Tensor2::from_vec(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = block(&[1.0, -2.0, 3.0]);
        let before = p.clone();
        let mut state = AdamState::new(&[(1, 3)], AdamHyper::with_lr(0.1));
        state
            .step(&mut [&mut p], &[block(&[0.0, 0.0, 0.0])])
            .unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let lr = 0.05;
        let mut p = block(&[1.0, 1.0, 1.0]);
        let g = block(&[0.3, -2.0, 1e-6]);
        let mut state = AdamState::new(&[(1, 3)], AdamHyper::with_lr(lr));
        state.step(&mut [&mut p], &[g.clone()]).unwrap();
        // At t=1, m̂ = g and v̂ = g², so the update is −lr·g/(|g|+ε·adj).
        for e in 0..3 {
            let gv = g.values()[e];
            let expected = 1.0 - lr * gv.signum() * (gv.abs() / (gv.abs() + 1e-8 * (1e-3f64)));
            // ε-correction bound: |Δ − (−lr·sign(g))| ≤ lr·ε/(|g|+ε)
            let delta = p.values()[e] - 1.0;
            assert!(
                (delta + lr * gv.signum()).abs() <= lr * 1e-8 / (gv.abs() + 1e-8) + 1e-15,
                "entry {e}: delta {delta}, expected near {}",
                expected - 1.0
            );
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let grads: Vec<Tensor2> = (0..5)
            .map(|k| block(&[(k as f64 - 2.0) * 0.7, (k as f64) * 0.1]))
            .collect();
        let run = || {
            let mut p = block(&[0.4, -0.9]);
            let mut state = AdamState::new(&[(1, 2)], AdamHyper::default());
            for g in &grads {
                state.step(&mut [&mut p], std::slice::from_ref(g)).unwrap();
            }
            (p.values().to_vec(), state.m[0].clone(), state.v[0].clone())
        };
        let (p1, m1, v1) = run();
        let (p2, m2, v2) = run();
        assert_eq!(p1, p2);
        assert_eq!(m1, m2);
        assert_eq!(v1, v2);
        // second moments stay non-negative
        assert!(v1.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = block(&[1.0, 2.0]);
        let mut state = AdamState::new(&[(1, 2)], AdamHyper::default());
        let bad = block(&[1.0, 2.0, 3.0]);
        assert!(state.step(&mut [&mut p], &[bad]).is_err());
    }
}
