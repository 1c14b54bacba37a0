//! GRU and fully connected layers with exact reverse-mode gradients.
//!
//! Gate convention (fixed; the parameter count below depends on it):
//!
//! ```text
//! z_t = sigmoid(W_z x_t + b_zx + U_z h_prev + b_zh)        update gate
//! r_t = sigmoid(W_r x_t + b_rx + U_r h_prev + b_rh)        reset gate
//! s_t = U_c h_prev + b_ch
//! c_t = tanh(W_c x_t + b_cx + r_t .* s_t)                  candidate
//! h_t = (1 - z_t) .* h_prev + z_t .* c_t
//! ```
//!
//! Each gate carries two bias vectors (input-side and recurrent-side),
//! so a layer holds `3h(in + h + 2)` parameters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor2;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Single GRU layer: three gates, each with input weights, recurrent
/// weights, and two bias vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: Tensor2,
    pub u_z: Tensor2,
    pub b_zx: Vec<f64>,
    pub b_zh: Vec<f64>,
    pub w_r: Tensor2,
    pub u_r: Tensor2,
    pub b_rx: Vec<f64>,
    pub b_rh: Vec<f64>,
    pub w_c: Tensor2,
    pub u_c: Tensor2,
    pub b_cx: Vec<f64>,
    pub b_ch: Vec<f64>,
}

/// Per-timestep values saved by the forward pass for BPTT.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub inputs: Vec<Vec<f64>>,
    /// Hidden states h_0..h_T (one more entry than timesteps).
    pub hidden: Vec<Vec<f64>>,
    pub update: Vec<Vec<f64>>,
    pub reset: Vec<Vec<f64>>,
    pub cand: Vec<Vec<f64>>,
    /// Recurrent candidate pre-term s_t = U_c h_prev + b_ch.
    pub rec_pre: Vec<Vec<f64>>,
}

impl GruLayer {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GruLayer {
            input_dim,
            hidden_dim,
            w_z: Tensor2::zeros(hidden_dim, input_dim),
            u_z: Tensor2::zeros(hidden_dim, hidden_dim),
            b_zx: vec![0.0; hidden_dim],
            b_zh: vec![0.0; hidden_dim],
            w_r: Tensor2::zeros(hidden_dim, input_dim),
            u_r: Tensor2::zeros(hidden_dim, hidden_dim),
            b_rx: vec![0.0; hidden_dim],
            b_rh: vec![0.0; hidden_dim],
            w_c: Tensor2::zeros(hidden_dim, input_dim),
            u_c: Tensor2::zeros(hidden_dim, hidden_dim),
            b_cx: vec![0.0; hidden_dim],
            b_ch: vec![0.0; hidden_dim],
        }
    }

    /// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = Self::zeros(input_dim, hidden_dim);
        for slice in layer.param_slices_mut() {
            init_slice(slice, input_dim, hidden_dim, rng);
        }
        layer
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim)
    }

    pub fn param_count(&self) -> usize {
        3 * self.hidden_dim * (self.input_dim + self.hidden_dim + 2)
    }

    /// Parameters in checkpoint order:
    /// `w_z u_z b_zx b_zh  w_r u_r b_rx b_rh  w_c u_c b_cx b_ch`.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.w_z.as_slice(),
            self.u_z.as_slice(),
            &self.b_zx,
            &self.b_zh,
            self.w_r.as_slice(),
            self.u_r.as_slice(),
            &self.b_rx,
            &self.b_rh,
            self.w_c.as_slice(),
            self.u_c.as_slice(),
            &self.b_cx,
            &self.b_ch,
        ]
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_z.as_mut_slice(),
            self.u_z.as_mut_slice(),
            &mut self.b_zx,
            &mut self.b_zh,
            self.w_r.as_mut_slice(),
            self.u_r.as_mut_slice(),
            &mut self.b_rx,
            &mut self.b_rh,
            self.w_c.as_mut_slice(),
            self.u_c.as_mut_slice(),
            &mut self.b_cx,
            &mut self.b_ch,
        ]
    }

    /// One recurrent step; `h_prev` may be `None` for the zero start state.
    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
        let (h, _, _, _, _) = self.step_full(x, h_prev);
        h
    }

    fn step_full(
        &self,
        x: &[f64],
        h_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        assert_eq!(x.len(), self.input_dim, "input width mismatch");
        assert_eq!(h_prev.len(), self.hidden_dim, "state width mismatch");
        let h = self.hidden_dim;

        let mut z = vec![0.0; h];
        self.w_z.matvec(x, &mut z);
        self.u_z.matvec_add(h_prev, &mut z);
        for i in 0..h {
            z[i] = sigmoid(z[i] + self.b_zx[i] + self.b_zh[i]);
        }

        let mut r = vec![0.0; h];
        self.w_r.matvec(x, &mut r);
        self.u_r.matvec_add(h_prev, &mut r);
        for i in 0..h {
            r[i] = sigmoid(r[i] + self.b_rx[i] + self.b_rh[i]);
        }

        let mut s = vec![0.0; h];
        self.u_c.matvec(h_prev, &mut s);
        for i in 0..h {
            s[i] += self.b_ch[i];
        }

        let mut c = vec![0.0; h];
        self.w_c.matvec(x, &mut c);
        for i in 0..h {
            c[i] = (c[i] + self.b_cx[i] + r[i] * s[i]).tanh();
        }

        let mut h_t = vec![0.0; h];
        for i in 0..h {
            h_t[i] = (1.0 - z[i]) * h_prev[i] + z[i] * c[i];
        }
        (h_t, z, r, c, s)
    }

    /// Run the layer over a sequence, caching everything BPTT needs.
    pub fn forward_seq(&self, xs: &[Vec<f64>], h0: Option<&[f64]>) -> GruCache {
        let t_len = xs.len();
        let start = match h0 {
            Some(h) => h.to_vec(),
            None => vec![0.0; self.hidden_dim],
        };
        let mut cache = GruCache {
            inputs: xs.to_vec(),
            hidden: Vec::with_capacity(t_len + 1),
            update: Vec::with_capacity(t_len),
            reset: Vec::with_capacity(t_len),
            cand: Vec::with_capacity(t_len),
            rec_pre: Vec::with_capacity(t_len),
        };
        cache.hidden.push(start);
        for x in xs {
            let (h_t, z, r, c, s) = self.step_full(x, cache.hidden.last().unwrap());
            cache.hidden.push(h_t);
            cache.update.push(z);
            cache.reset.push(r);
            cache.cand.push(c);
            cache.rec_pre.push(s);
        }
        cache
    }

    /// Hidden states h_1..h_T from a cache.
    pub fn states(cache: &GruCache) -> &[Vec<f64>] {
        &cache.hidden[1..]
    }

    /// BPTT. `d_out[t]` is the gradient flowing into h_t from outside
    /// (upper layers or the loss). Returns parameter gradients and,
    /// when requested, gradients w.r.t. the inputs.
    pub fn backward_seq(
        &self,
        cache: &GruCache,
        d_out: &[Vec<f64>],
        want_dx: bool,
    ) -> (GruLayer, Option<Vec<Vec<f64>>>) {
        let t_len = cache.inputs.len();
        assert_eq!(d_out.len(), t_len, "gradient sequence length mismatch");
        let h = self.hidden_dim;
        let mut grads = self.zeros_like();
        let mut dxs = if want_dx {
            vec![vec![0.0; self.input_dim]; t_len]
        } else {
            Vec::new()
        };

        let mut carry = vec![0.0; h];
        for t in (0..t_len).rev() {
            let x = &cache.inputs[t];
            let h_prev = &cache.hidden[t];
            let z = &cache.update[t];
            let r = &cache.reset[t];
            let c = &cache.cand[t];
            let s = &cache.rec_pre[t];

            // Total gradient into h_t.
            let mut dh = carry;
            for i in 0..h {
                dh[i] += d_out[t][i];
            }

            let mut dz_pre = vec![0.0; h];
            let mut dr_pre = vec![0.0; h];
            let mut da = vec![0.0; h];
            let mut ds = vec![0.0; h];
            let mut dh_prev = vec![0.0; h];
            for i in 0..h {
                let dc = dh[i] * z[i];
                let dz = dh[i] * (c[i] - h_prev[i]);
                dh_prev[i] = dh[i] * (1.0 - z[i]);
                da[i] = dc * (1.0 - c[i] * c[i]);
                let dr = da[i] * s[i];
                ds[i] = da[i] * r[i];
                dz_pre[i] = dz * z[i] * (1.0 - z[i]);
                dr_pre[i] = dr * r[i] * (1.0 - r[i]);
            }

            grads.w_z.add_outer(&dz_pre, x);
            grads.u_z.add_outer(&dz_pre, h_prev);
            grads.w_r.add_outer(&dr_pre, x);
            grads.u_r.add_outer(&dr_pre, h_prev);
            grads.w_c.add_outer(&da, x);
            grads.u_c.add_outer(&ds, h_prev);
            for i in 0..h {
                grads.b_zx[i] += dz_pre[i];
                grads.b_zh[i] += dz_pre[i];
                grads.b_rx[i] += dr_pre[i];
                grads.b_rh[i] += dr_pre[i];
                grads.b_cx[i] += da[i];
                grads.b_ch[i] += ds[i];
            }

            self.u_z.matvec_t_add(&dz_pre, &mut dh_prev);
            self.u_r.matvec_t_add(&dr_pre, &mut dh_prev);
            self.u_c.matvec_t_add(&ds, &mut dh_prev);

            if want_dx {
                let dx = &mut dxs[t];
                self.w_z.matvec_t_add(&dz_pre, dx);
                self.w_r.matvec_t_add(&dr_pre, dx);
                self.w_c.matvec_t_add(&da, dx);
            }

            carry = dh_prev;
        }

        (grads, if want_dx { Some(dxs) } else { None })
    }
}

/// Fully connected layer `y = W x + b` (activation applied by the caller).
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer {
    pub w: Tensor2,
    pub b: Vec<f64>,
}

impl FcLayer {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        FcLayer {
            w: Tensor2::zeros(output_dim, input_dim),
            b: vec![0.0; output_dim],
        }
    }

    pub fn init(input_dim: usize, output_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = Self::zeros(input_dim, output_dim);
        let bound = 1.0 / (input_dim as f64).sqrt();
        for v in layer.w.as_mut_slice() {
            *v = rng.random_range(-bound..bound);
        }
        layer
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim())
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn param_count(&self) -> usize {
        self.w.rows() * self.w.cols() + self.b.len()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice(), &self.b]
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), &mut self.b]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.clone();
        self.w.matvec_add(x, &mut y);
        y
    }

    /// Accumulate parameter gradients for one frame and return dx.
    pub fn backward_frame(&self, x: &[f64], dy: &[f64], grads: &mut FcLayer) -> Vec<f64> {
        grads.w.add_outer(dy, x);
        for (g, d) in grads.b.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![0.0; self.input_dim()];
        self.w.matvec_t_add(dy, &mut dx);
        dx
    }
}

fn init_slice(slice: &mut [f64], input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) {
    // Weight matrices get fan-in scaled uniform draws; biases stay zero.
    let n = slice.len();
    if n == hidden_dim * input_dim {
        let bound = 1.0 / (input_dim as f64).sqrt();
        for v in slice.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
    } else if n == hidden_dim * hidden_dim {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        for v in slice.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
    }
    // bias slices (length hidden_dim) are left at zero
}
