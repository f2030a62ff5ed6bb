//! Small fully connected color networks with explicit backward passes.

use serde::{Deserialize, Serialize};

use crate::rng::KeyedRng;
use crate::{Error, Result};

/// Coarse net input: point 3, view 3, f_geo 2, normal 3, f_cse 8.
pub const COARSE_INPUTS: usize = 19;
/// Fine net input: point 3, reflected view 3, coarse rgb 3, f_geo 2,
/// entry/exit normals 6, f_fine 8.
pub const FINE_INPUTS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { hidden_layers: 2, hidden_width: 64 }
    }
}

/// Dense layers with ReLU hidden activations and a sigmoid output. Parameters
/// are stored flat, layer by layer: weights (row-major, out × in) then biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations of one forward pass (layer inputs, then the output).
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], |v| v.as_slice())
    }
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(sizes: Vec<usize>) -> Self {
        let n = Self::param_count(&sizes);
        Mlp { sizes, params: vec![0.0; n] }
    }

    /// He-uniform weights, zero biases.
    pub fn init(sizes: Vec<usize>, key: &[u64]) -> Self {
        let mut m = Self::zeros(sizes);
        let mut rng = KeyedRng::new(key);
        let mut off = 0;
        for w in m.sizes.clone().windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            for x in &mut m.params[off..off + w[0] * w[1]] {
                *x = rng.range(-bound, bound);
            }
            off += w[0] * w[1] + w[1];
        }
        m
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn forward(&self, x: &[f64], cache: &mut MlpCache) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs());
        cache.acts.clear();
        cache.acts.push(x.to_vec());
        let n_layers = self.sizes.len() - 1;
        let mut off = 0;
        for l in 0..n_layers {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + nin * nout];
            let b = &self.params[off + nin * nout..off + nin * nout + nout];
            let input = cache.acts.last().unwrap();
            let mut y: Vec<f64> = (0..nout).map(|o| b[o] + dot(&w[o * nin..(o + 1) * nin], input)).collect();
            if l + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            } else {
                y.iter_mut().for_each(|v| *v = super::sigmoid(*v));
            }
            cache.acts.push(y);
            off += nin * nout + nout;
        }
        cache.acts.last().unwrap().clone()
    }

    /// Accumulates `dL/dparams` into `dparams` and returns `dL/dx`.
    pub fn backward(&self, cache: &MlpCache, dy: &[f64], dparams: &mut [f64]) -> Vec<f64> {
        let n_layers = self.sizes.len() - 1;
        let out = cache.acts.last().unwrap();
        // through the output sigmoid
        let mut delta: Vec<f64> = dy.iter().zip(out).map(|(d, y)| d * y * (1.0 - y)).collect();
        let mut off = self.params.len();
        for l in (0..n_layers).rev() {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            off -= nin * nout + nout;
            let input = &cache.acts[l];
            let w = &self.params[off..off + nin * nout];
            {
                let (dw, db) = dparams[off..off + nin * nout + nout].split_at_mut(nin * nout);
                for o in 0..nout {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    db[o] += d;
                    for (g, xi) in dw[o * nin..(o + 1) * nin].iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
            }
            let mut dx = vec![0.0; nin];
            for o in 0..nout {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (g, wi) in dx.iter_mut().zip(&w[o * nin..(o + 1) * nin]) {
                    *g += d * wi;
                }
            }
            if l > 0 {
                // ReLU mask of the hidden layer feeding this one
                for (g, a) in dx.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = dx;
        }
        delta
    }
}

/// Activations of a batched forward pass: row-major `n × width` matrices,
/// layer inputs first, output last.
#[derive(Debug, Clone, Default)]
pub struct BatchCache {
    pub n: usize,
    acts: Vec<Vec<f64>>,
}

impl BatchCache {
    /// Row-major `n × outputs` result of the forward pass.
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], |v| v.as_slice())
    }
}

/// `C (m×n) += A (m×k) · B (k×n)` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, c: &mut [f64], rsc: usize) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: callers pass slices whose extents cover the strided index
    // ranges of the three matrices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

impl Mlp {
    /// Forward pass over `n` row-major input rows.
    pub fn forward_batch(&self, x: Vec<f64>, n: usize, cache: &mut BatchCache) {
        debug_assert_eq!(x.len(), n * self.inputs());
        cache.n = n;
        cache.acts.clear();
        cache.acts.push(x);
        let n_layers = self.sizes.len() - 1;
        let mut off = 0;
        for l in 0..n_layers {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + nin * nout];
            let b = &self.params[off + nin * nout..off + nin * nout + nout];
            let mut y: Vec<f64> = Vec::with_capacity(n * nout);
            for _ in 0..n {
                y.extend_from_slice(b);
            }
            // Y += X · Wᵀ
            gemm(n, nin, nout, cache.acts.last().unwrap(), nin, 1, w, 1, nin, &mut y, nout);
            if l + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            } else {
                y.iter_mut().for_each(|v| *v = super::sigmoid(*v));
            }
            cache.acts.push(y);
            off += nin * nout + nout;
        }
    }

    /// Batched [`Mlp::backward`]: `dy` is `n × outputs`; returns `n × inputs`.
    pub fn backward_batch(&self, cache: &BatchCache, dy: &[f64], dparams: &mut [f64]) -> Vec<f64> {
        let n = cache.n;
        let n_layers = self.sizes.len() - 1;
        let out = cache.acts.last().unwrap();
        let mut delta: Vec<f64> = dy.iter().zip(out).map(|(d, y)| d * y * (1.0 - y)).collect();
        let mut off = self.params.len();
        for l in (0..n_layers).rev() {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            off -= nin * nout + nout;
            let input = &cache.acts[l];
            let w = &self.params[off..off + nin * nout];
            let (dw, db) = dparams[off..off + nin * nout + nout].split_at_mut(nin * nout);
            for row in delta.chunks_exact(nout) {
                db.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
            // dW += Δᵀ · X
            gemm(nout, n, nin, &delta, 1, nout, input, nin, 1, dw, nin);
            // dX = Δ · W
            let mut dx = vec![0.0; n * nin];
            gemm(n, nout, nin, &delta, nout, 1, w, nin, 1, &mut dx, nin);
            if l > 0 {
                for (g, a) in dx.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = dx;
        }
        delta
    }
}

/// Dot product with four interleaved partial sums (fixed order, so still
/// deterministic, but vectorizable).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// The coarse and refinement color networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub coarse: Mlp,
    pub fine: Mlp,
}

impl NetworkParams {
    pub fn new(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        if cfg.hidden_width == 0 {
            return Err(Error::invalid("network hidden_width must be positive"));
        }
        let sizes = |n_in: usize| {
            let mut s = vec![n_in];
            s.extend(std::iter::repeat_n(cfg.hidden_width, cfg.hidden_layers));
            s.push(3);
            s
        };
        Ok(NetworkParams {
            coarse: Mlp::init(sizes(COARSE_INPUTS), &[seed, 0xC0A5]),
            fine: Mlp::init(sizes(FINE_INPUTS), &[seed, 0xF1AE]),
        })
    }

    pub fn zeros_like(&self) -> NetworkParams {
        NetworkParams { coarse: Mlp::zeros(self.coarse.sizes.clone()), fine: Mlp::zeros(self.fine.sizes.clone()) }
    }
}
