//! Adam optimizer over flat parameter slices, plus global-norm clipping.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdamError {
    #[error("non-finite gradient encountered; step rejected")]
    NonFiniteGradient,
    #[error("gradient shape mismatch: param slice {idx} has len {plen}, grad len {glen}")]
    ShapeMismatch { idx: usize, plen: usize, glen: usize },
}

/// Bias-corrected Adam state. Moment buffers mirror the parameter
/// slices they were created from.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, shapes: &[usize]) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_slices(lr: f64, params: &[&[f64]]) -> AdamState {
        let shapes: Vec<usize> = params.iter().map(|s| s.len()).collect();
        Self::new(lr, &shapes)
    }

    /// One update. Rejects the whole step (no state mutated) if any
    /// gradient value is non-finite.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), AdamError> {
        for (idx, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(AdamError::ShapeMismatch {
                    idx,
                    plen: p.len(),
                    glen: g.len(),
                });
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(AdamError::NonFiniteGradient);
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.iter() {
        for v in g.iter() {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
