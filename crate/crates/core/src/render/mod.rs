//! Differentiable volumetric rendering over marched segments: S-density
//! opacity, alpha compositing, the two color networks and the photometric
//! loss, all with hand-written reverse-mode derivatives.

mod network;
mod ray;

pub use network::{BatchCache, Mlp, MlpCache, NetworkConfig, NetworkParams, COARSE_INPUTS, FINE_INPUTS};
pub use ray::{render_batch, render_ray, RayGrads, RayItem, RayOutput, RenderConfig, RenderContext};

use serde::{Deserialize, Serialize};

use crate::geom::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMode {
    /// `clip(1 − Φ(sdf_out)/Φ(sdf_in))`: one minus the segment transmittance.
    #[default]
    Normalized,
    /// The ratio `Φ(sdf_out)/Φ(sdf_in)` used directly as opacity.
    Printed,
}

/// `log σ(x)`, stable for large |x|.
#[inline]
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Segment opacity from the SDF at its ends.
pub fn alpha(sdf_in: f64, sdf_out: f64, beta: f64) -> f64 {
    alpha_with_grad(sdf_in, sdf_out, beta, AlphaMode::Normalized).0
}

/// Opacity and its partial derivatives `(α, ∂α/∂sdf_in, ∂α/∂sdf_out)`.
/// Clamped values have zero derivatives.
pub fn alpha_with_grad(sdf_in: f64, sdf_out: f64, beta: f64, mode: AlphaMode) -> (f64, f64, f64) {
    let log_ratio = log_sigmoid(beta * sdf_out) - log_sigmoid(beta * sdf_in);
    // d log σ(βx)/dx = β σ(−βx)
    let d_in = -beta * sigmoid(-beta * sdf_in);
    let d_out = beta * sigmoid(-beta * sdf_out);
    match mode {
        AlphaMode::Normalized => {
            if log_ratio >= 0.0 {
                return (0.0, 0.0, 0.0);
            }
            let ratio = log_ratio.exp();
            (-log_ratio.exp_m1(), -ratio * d_in, -ratio * d_out)
        }
        AlphaMode::Printed => {
            if log_ratio >= 0.0 {
                return (1.0, 0.0, 0.0);
            }
            let ratio = log_ratio.exp();
            (ratio, ratio * d_in, ratio * d_out)
        }
    }
}

/// Front-to-back compositing. Returns the color, the weights
/// `ω_t = α_t Π_{i<t}(1 − α_i)` and the final transmittance.
pub fn composite(alphas: &[f64], colors: &[[f64; 3]]) -> ([f64; 3], Vec<f64>, f64) {
    let mut c = [0.0; 3];
    let mut w = Vec::with_capacity(alphas.len());
    let mut trans = 1.0;
    for (a, col) in alphas.iter().zip(colors) {
        let wt = a * trans;
        for k in 0..3 {
            c[k] += wt * col[k];
        }
        w.push(wt);
        trans *= 1.0 - a;
    }
    (c, w, trans)
}

/// Reverse pass of [`composite`]: given `dL/dC`, returns `dL/dα_t` and
/// `dL/dc_t`. Uses the back-to-front recursion `R_t = α_t c_t + (1 − α_t)
/// R_{t+1}` so no division by `1 − α` is needed.
pub fn composite_backward(alphas: &[f64], colors: &[[f64; 3]], weights: &[f64], dc: &[f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let n = alphas.len();
    let mut d_alpha = vec![0.0; n];
    let d_color: Vec<[f64; 3]> = weights.iter().map(|w| [w * dc[0], w * dc[1], w * dc[2]]).collect();
    let mut trans = Vec::with_capacity(n);
    let mut acc = 1.0;
    for a in alphas {
        trans.push(acc);
        acc *= 1.0 - a;
    }
    let mut behind = [0.0; 3];
    for t in (0..n).rev() {
        let a = alphas[t];
        let mut g = 0.0;
        for k in 0..3 {
            g += (colors[t][k] - behind[k]) * dc[k];
            behind[k] = a * colors[t][k] + (1.0 - a) * behind[k];
        }
        d_alpha[t] = trans[t] * g;
    }
    (d_alpha, d_color)
}

/// Mirror of `v` about the plane with normal `n`.
pub fn reflect(v: &Vec3, n: &Vec3) -> Vec3 {
    v - 2.0 * v.dot(n) * n
}

/// `E = [λ‖C − C_geo‖² + ‖C − C_fine‖²] / (‖C‖ + ε)` for one ray, with
/// gradients with respect to both predictions.
pub fn photometric_loss(c_geo: &[f64; 3], c_fine: &[f64; 3], c_gt: &[f64; 3], lambda: f64, eps: f64) -> (f64, [f64; 3], [f64; 3]) {
    let norm = (c_gt[0] * c_gt[0] + c_gt[1] * c_gt[1] + c_gt[2] * c_gt[2]).sqrt() + eps;
    let mut e_geo = 0.0;
    let mut e_fine = 0.0;
    let mut d_geo = [0.0; 3];
    let mut d_fine = [0.0; 3];
    for k in 0..3 {
        let rg = c_gt[k] - c_geo[k];
        let rf = c_gt[k] - c_fine[k];
        e_geo += rg * rg;
        e_fine += rf * rf;
        d_geo[k] = -2.0 * lambda * rg / norm;
        d_fine[k] = -2.0 * rf / norm;
    }
    ((lambda * e_geo + e_fine) / norm, d_geo, d_fine)
}

/// `β = min(β₀ g^(iter/1000), β_max 2^level)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub beta0: f64,
    pub growth: f64,
    pub beta_max: f64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule { beta0: 30.0, growth: 1.3, beta_max: 200.0 }
    }
}

impl BetaSchedule {
    pub fn beta(&self, iteration: u64, level: u32) -> f64 {
        let grown = self.beta0 * self.growth.powf(iteration as f64 / 1000.0);
        grown.min(self.beta_max * 2f64.powi(level as i32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::KeyedRng;

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha(0.3, 0.3, 10.0), 0.0);
        let expect = 1.0 - sigmoid(-2.0) / sigmoid(2.0);
        assert!((alpha(0.2, -0.2, 10.0) - expect).abs() < 1e-15);
        assert!((alpha(0.2, -0.2, 10.0) - 0.8647).abs() < 1e-4);
        assert_eq!(alpha(-0.1, 0.3, 10.0), 0.0);
        let (a, _, _) = alpha_with_grad(0.2, -0.2, 10.0, AlphaMode::Printed);
        assert!((a - sigmoid(-2.0) / sigmoid(2.0)).abs() < 1e-15);
        // extreme arguments stay finite
        assert!((alpha(50.0, -50.0, 200.0) - 1.0).abs() < 1e-12);
        assert_eq!(alpha(-50.0, -51.0, 200.0), alpha(-50.0, -51.0, 200.0));
        assert!(alpha(-50.0, -51.0, 200.0).is_finite());
    }

    #[test]
    fn alpha_monotonicity_on_grid() {
        let grid: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.05).collect();
        for &a in &grid {
            for w in grid.windows(2) {
                assert!(alpha(a, w[1], 7.0) <= alpha(a, w[0], 7.0));
                assert!(alpha(w[1], a, 7.0) >= alpha(w[0], a, 7.0));
            }
        }
    }

    #[test]
    fn alpha_gradient_matches_fd() {
        let mut rng = KeyedRng::new(&[1]);
        for mode in [AlphaMode::Normalized, AlphaMode::Printed] {
            for _ in 0..200 {
                let (a, b, beta) = (rng.range(-0.5, 0.5), rng.range(-0.5, 0.5), rng.range(1.0, 50.0));
                let (v, da, db) = alpha_with_grad(a, b, beta, mode);
                if v <= 1e-9 || v >= 1.0 - 1e-9 {
                    continue;
                }
                let h = 1e-6;
                let f = |x: f64, y: f64| alpha_with_grad(x, y, beta, mode).0;
                let fa = (f(a + h, b) - f(a - h, b)) / (2.0 * h);
                let fb = (f(a, b + h) - f(a, b - h)) / (2.0 * h);
                assert!((fa - da).abs() <= 1e-5 * fa.abs().max(1e-3), "{fa} {da}");
                assert!((fb - db).abs() <= 1e-5 * fb.abs().max(1e-3), "{fb} {db}");
            }
        }
    }

    #[test]
    fn composite_examples() {
        let (c, w, t) = composite(&[1.0], &[[0.2, 0.4, 0.6]]);
        assert_eq!(c, [0.2, 0.4, 0.6]);
        assert_eq!(w, vec![1.0]);
        assert_eq!(t, 0.0);
        let (_, w, t) = composite(&[0.5, 0.5], &[[1.0; 3]; 2]);
        assert_eq!(w, vec![0.5, 0.25]);
        assert_eq!(t, 0.25);
        let (c, w, _) = composite(&[0.0; 4], &[[1.0; 3]; 4]);
        assert_eq!(c, [0.0; 3]);
        assert_eq!(w.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn composite_backward_matches_fd() {
        let mut rng = KeyedRng::new(&[2]);
        for _ in 0..50 {
            let n = 1 + rng.below(8) as usize;
            let mut alphas: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            if n > 2 {
                alphas[1] = 0.0;
                alphas[n - 1] = 1.0;
            }
            let colors: Vec<[f64; 3]> = (0..n).map(|_| [rng.uniform(), rng.uniform(), rng.uniform()]).collect();
            let dc = [rng.normal(), rng.normal(), rng.normal()];
            let (_, w, _) = composite(&alphas, &colors);
            let (da, dcol) = composite_backward(&alphas, &colors, &w, &dc);
            let obj = |a: &[f64], c: &[[f64; 3]]| {
                let (col, _, _) = composite(a, c);
                col[0] * dc[0] + col[1] * dc[1] + col[2] * dc[2]
            };
            let h = 1e-6;
            for t in 0..n {
                let mut ap = alphas.clone();
                ap[t] += h;
                let mut am = alphas.clone();
                am[t] -= h;
                let fd = (obj(&ap, &colors) - obj(&am, &colors)) / (2.0 * h);
                assert!((fd - da[t]).abs() < 1e-8, "alpha {t}: {fd} {}", da[t]);
                for k in 0..3 {
                    let mut cp = colors.clone();
                    cp[t][k] += h;
                    let mut cm = colors.clone();
                    cm[t][k] -= h;
                    let fd = (obj(&alphas, &cp) - obj(&alphas, &cm)) / (2.0 * h);
                    assert!((fd - dcol[t][k]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn reflect_examples() {
        assert_eq!(reflect(&Vec3::new(0.0, 0.0, -1.0), &Vec3::z()), Vec3::z());
        assert_eq!(reflect(&Vec3::x(), &Vec3::z()), Vec3::x());
        let mut rng = KeyedRng::new(&[3]);
        for _ in 0..100 {
            let v = Vec3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
            let n = Vec3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
            assert!((reflect(&v, &n).norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn photometric_loss_examples_and_gradient() {
        let c = [0.3, 0.5, 0.7];
        assert_eq!(photometric_loss(&c, &c, &c, 1.0, 0.1).0, 0.0);
        let (e, _, _) = photometric_loss(&[0.0; 3], &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], 0.5, 0.1);
        assert!((e - 0.5 / 1.1).abs() < 1e-15);
        let mut rng = KeyedRng::new(&[4]);
        let g: [f64; 3] = std::array::from_fn(|_| rng.uniform());
        let f: [f64; 3] = std::array::from_fn(|_| rng.uniform());
        let gt: [f64; 3] = std::array::from_fn(|_| rng.uniform());
        let (_, dg, df) = photometric_loss(&g, &f, &gt, 0.5, 0.1);
        let h = 1e-6;
        for k in 0..3 {
            let mut p = g;
            p[k] += h;
            let mut m = g;
            m[k] -= h;
            let fd = (photometric_loss(&p, &f, &gt, 0.5, 0.1).0 - photometric_loss(&m, &f, &gt, 0.5, 0.1).0) / (2.0 * h);
            assert!((fd - dg[k]).abs() <= 1e-5 * fd.abs().max(1e-6));
            let mut p = f;
            p[k] += h;
            let mut m = f;
            m[k] -= h;
            let fd = (photometric_loss(&g, &p, &gt, 0.5, 0.1).0 - photometric_loss(&g, &m, &gt, 0.5, 0.1).0) / (2.0 * h);
            assert!((fd - df[k]).abs() <= 1e-5 * fd.abs().max(1e-6));
        }
    }

    #[test]
    fn beta_schedule_is_monotone_and_capped() {
        let s = BetaSchedule::default();
        assert_eq!(s.beta(0, 0), 30.0);
        assert!((s.beta(1000, 0) - 39.0).abs() < 1e-12);
        assert_eq!(s.beta(100_000, 0), 200.0);
        assert_eq!(s.beta(100_000, 2), 800.0);
        let mut prev = 0.0;
        for it in (0..40_000).step_by(500) {
            let b = s.beta(it, (it / 10_000) as u32);
            assert!(b >= prev);
            prev = b;
        }
    }
}
