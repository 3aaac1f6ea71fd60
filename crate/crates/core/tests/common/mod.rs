//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's numerics.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `-Σ ln Σ r_k N(z; 0, v_k)` by a plain double loop.
pub fn nll_oracle(residual: &[f64], ratios: &[f64], variances: &[f64]) -> f64 {
    let mut total = 0.0;
    for &z in residual {
        let mut p = 0.0;
        for (r, v) in ratios.iter().zip(variances) {
            p += r * (-z * z / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        }
        total -= p.ln();
    }
    total
}

/// Forward differences with zero last column / row, row-major.
pub fn grad(v: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                gx[i] = v[i + 1] - v[i];
            }
            if y + 1 < h {
                gy[i] = v[i + w] - v[i];
            }
        }
    }
    (gx, gy)
}

/// Minus the transpose of [`grad`], assembled entry by entry.
pub fn div(px: &[f64], py: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            // grad_x[i] = v[i+1] - v[i]  =>  (grad_x)^T p puts -p[i] at i and +p[i] at i+1
            if x + 1 < w {
                out[i] += px[i];
                out[i + 1] -= px[i];
            }
            if y + 1 < h {
                out[i] += py[i];
                out[i + w] -= py[i];
            }
        }
    }
    out
}

pub fn tv(v: &[f64], w: usize, h: usize) -> f64 {
    let (gx, gy) = grad(v, w, h);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).sum()
}

/// A weighted synthesis problem
/// `½ Σ a (v − f)² + λ₂ TV(v) + η/2 ‖t − v‖²`.
pub struct Weighted {
    pub w: usize,
    pub h: usize,
    pub a: Vec<f64>,
    pub f: Vec<f64>,
    pub t: Vec<f64>,
    pub eta: f64,
    pub lambda2: f64,
}

impl Weighted {
    pub fn energy(&self, v: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..v.len() {
            e += 0.5 * self.a[i] * (v[i] - self.f[i]).powi(2) + 0.5 * self.eta * (self.t[i] - v[i]).powi(2);
        }
        e + self.lambda2 * tv(v, self.w, self.h)
    }

    /// Subgradient descent with diminishing steps, keeping the best iterate.
    pub fn subgradient_min(&self, iters: usize) -> (Vec<f64>, f64) {
        let n = self.w * self.h;
        let lipschitz = self.a.iter().cloned().fold(0.0, f64::max) + self.eta;
        let mut v = self.f.clone();
        let mut best = v.clone();
        let mut best_e = self.energy(&v);
        let mut g = vec![0.0; n];
        for k in 0..iters {
            let (gx, gy) = grad(&v, self.w, self.h);
            let mut nx = vec![0.0; n];
            let mut ny = vec![0.0; n];
            for i in 0..n {
                let m = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
                if m > 1e-15 {
                    nx[i] = gx[i] / m;
                    ny[i] = gy[i] / m;
                }
            }
            let d = div(&nx, &ny, self.w, self.h);
            for i in 0..n {
                g[i] = self.a[i] * (v[i] - self.f[i]) - self.eta * (self.t[i] - v[i]) - self.lambda2 * d[i];
            }
            let step = 1.0 / (lipschitz * (1.0 + k as f64 / 50.0).sqrt());
            for i in 0..n {
                v[i] -= step * g[i];
            }
            let e = self.energy(&v);
            if e < best_e {
                best_e = e;
                best.copy_from_slice(&v);
            }
        }
        (best, best_e)
    }
}

/// Chambolle's projection algorithm for `min ½‖u − f‖² + α TV(u)`.
pub fn chambolle_rof(f: &[f64], w: usize, h: usize, alpha: f64, iters: usize) -> Vec<f64> {
    let n = w * h;
    let tau = 0.124;
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    for _ in 0..iters {
        let d = div(&px, &py, w, h);
        let q: Vec<f64> = (0..n).map(|i| d[i] - f[i] / alpha).collect();
        let (gx, gy) = grad(&q, w, h);
        for i in 0..n {
            let m = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
            px[i] = (px[i] + tau * gx[i]) / (1.0 + tau * m);
            py[i] = (py[i] + tau * gy[i]) / (1.0 + tau * m);
        }
    }
    let d = div(&px, &py, w, h);
    (0..n).map(|i| f[i] - alpha * d[i]).collect()
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Random points on the open simplex, one per pixel, as component maps.
pub fn random_simplex_maps(rng: &mut impl Rng, k: usize, n: usize) -> Vec<Vec<f64>> {
    let mut maps = vec![vec![0.0; n]; k];
    for i in 0..n {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        for c in 0..k {
            maps[c][i] = raw[c] / s;
        }
    }
    maps
}

/// Fraction of `truth` positives flagged in `mask`, and fraction of flags
/// that are true positives.
pub fn recall_precision(mask: &[bool], truth: &[bool]) -> (f64, f64) {
    let tp = mask.iter().zip(truth).filter(|(m, t)| **m && **t).count() as f64;
    let pos = truth.iter().filter(|t| **t).count() as f64;
    let flagged = mask.iter().filter(|m| **m).count() as f64;
    (tp / pos.max(1.0), if flagged == 0.0 { 1.0 } else { tp / flagged })
}

/// Exact posterior component probabilities, no clamping.
pub fn posterior_oracle(residual: &[f64], ratios: &[f64], variances: &[f64]) -> Vec<Vec<f64>> {
    let k = ratios.len();
    let mut maps = vec![vec![0.0; residual.len()]; k];
    for (i, &z) in residual.iter().enumerate() {
        let logs: Vec<f64> = (0..k)
            .map(|c| ratios[c].ln() - 0.5 * variances[c].ln() - z * z / (2.0 * variances[c]))
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logs.iter().map(|l| (l - m).exp()).sum();
        for c in 0..k {
            maps[c][i] = (logs[c] - m).exp() / s;
        }
    }
    maps
}

/// The surrogate with the `½ ln 2π` constants, summed term by term.
pub fn surrogate_oracle(residual: &[f64], ratios: &[f64], variances: &[f64], maps: &[Vec<f64>]) -> f64 {
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for (c, map) in maps.iter().enumerate() {
        for (i, &w) in map.iter().enumerate() {
            let z = residual[i];
            let ent = if w > 0.0 { w * w.ln() } else { 0.0 };
            total += w * (z * z / (2.0 * variances[c]) - ratios[c].ln() + 0.5 * variances[c].ln() + half_ln_2pi) + ent;
        }
    }
    total
}
