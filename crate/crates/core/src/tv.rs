//! Weighted-fidelity ROF synthesis solved by split Bregman.
//!
//! The synthesis problem is
//!
//! ```text
//! min_v  ½ Σ a(x) (v − f)²  +  λ₂ Σ ‖∇v(x)‖  +  η/2 ‖u − v − μ‖²,   a = Σ_k w_k / σ_k²
//! ```
//!
//! with `d = ∇v` split off and enforced by a Bregman variable `b`. Each
//! Bregman iteration solves `[a − λΔ + η] v = a f + λ div(b − d) + η (u − μ)`
//! with lexicographic Gauss–Seidel, then shrinks `∇v + b` and updates `b`.
//!
//! Gradients are forward differences with a zero last row/column (Neumann);
//! the divergence is built as the exact negative adjoint, so `div ∘ ∇` is the
//! usual 5-point Laplacian with mirrored borders.

use serde::{Deserialize, Serialize};

use crate::em::{fidelity_weights, NoiseParams, WeightField};
use crate::error::{arg, Result};
use crate::image::{Image, VectorField};

/// How the Bregman variable is advanced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BregmanStep {
    /// `b ← b + (∇v − d)`
    #[default]
    Unit,
    /// `b ← b + λ (∇v − d)`
    Penalty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvConfig {
    /// TV weight λ₂; zero disables the TV term.
    pub lambda2: f64,
    /// Split penalty λ.
    pub lambda: f64,
    /// Coupling η to the denoised image. Filled from the solver config.
    #[serde(skip)]
    pub eta: f64,
    pub inner_bregman_iters: usize,
    pub gauss_seidel_sweeps: usize,
    pub linear_tol: f64,
    pub bregman_step: BregmanStep,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            lambda2: 1.0,
            lambda: 10.0,
            eta: 0.8,
            inner_bregman_iters: 5,
            gauss_seidel_sweeps: 20,
            linear_tol: 1e-6,
            bregman_step: BregmanStep::Unit,
        }
    }
}

impl TvConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda2, self.lambda, self.eta, self.linear_tol]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(arg("TV parameters must be finite"));
        }
        if self.lambda2 < 0.0 || self.lambda < 0.0 || self.eta < 0.0 {
            return Err(arg("lambda2, lambda and eta must be non-negative"));
        }
        if self.lambda2 > 0.0 && self.lambda == 0.0 {
            return Err(arg("lambda must be positive when lambda2 > 0"));
        }
        if self.inner_bregman_iters == 0 || self.gauss_seidel_sweeps == 0 {
            return Err(arg("iteration counts must be at least 1"));
        }
        if self.linear_tol <= 0.0 {
            return Err(arg("linear_tol must be positive"));
        }
        Ok(())
    }
}

/// The split-Bregman iterate `(v, d, b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitState {
    pub v: Image,
    pub d: VectorField,
    pub b: VectorField,
}

impl SplitState {
    /// Cold start: `v = f`, `d = ∇f`, `b = 0`.
    pub fn cold(f: &Image) -> Self {
        Self {
            v: f.clone(),
            d: gradient(f),
            b: VectorField::zeros(f.width(), f.height()),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TvDiagnostics {
    /// Objective before the first Bregman iteration.
    pub initial_energy: f64,
    /// Objective after each Bregman iteration.
    pub energies: Vec<f64>,
    /// Largest diagonally scaled linear residual seen at the end of any
    /// Gauss–Seidel solve, in intensity units.
    pub linear_residual: f64,
    pub sweeps: usize,
}

pub fn gradient(v: &Image) -> VectorField {
    let (w, h) = (v.width(), v.height());
    let d = v.data();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        let row = y * w;
        for x in 0..w {
            let i = row + x;
            if x + 1 < w {
                gx[i] = d[i + 1] - d[i];
            }
            if y + 1 < h {
                gy[i] = d[i + w] - d[i];
            }
        }
    }
    VectorField::from_components(w, h, gx, gy).expect("extent matches")
}

fn divergence_into(px: &[f64], py: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        let row = y * w;
        for x in 0..w {
            let i = row + x;
            let mut s = 0.0;
            if x + 1 < w {
                s += px[i];
            }
            if x > 0 {
                s -= px[i - 1];
            }
            if y + 1 < h {
                s += py[i];
            }
            if y > 0 {
                s -= py[i - w];
            }
            out[i] = s;
        }
    }
}

/// Backward-difference divergence, the negative adjoint of [`gradient`].
pub fn divergence(p: &VectorField) -> Image {
    let (w, h) = (p.width(), p.height());
    let mut out = vec![0.0; w * h];
    divergence_into(&p.x, &p.y, w, h, &mut out);
    Image::from_vec_unchecked(w, h, out)
}

/// Vector soft-thresholding: `q/‖q‖ · max(‖q‖ − t, 0)`, zero at `q = 0`.
#[inline]
pub fn shrink(q: [f64; 2], threshold: f64) -> [f64; 2] {
    let norm = q[0].hypot(q[1]);
    if norm <= threshold || norm == 0.0 {
        return [0.0, 0.0];
    }
    let s = (norm - threshold) / norm;
    [q[0] * s, q[1] * s]
}

/// Isotropic total variation `Σ ‖∇v(x)‖`.
pub fn total_variation(v: &Image) -> f64 {
    let g = gradient(v);
    g.x.iter().zip(&g.y).map(|(a, b)| a.hypot(*b)).sum()
}

/// Objective of the synthesis problem at `v`.
#[allow(clippy::too_many_arguments)]
pub fn synthesis_energy(
    v: &Image,
    f: &Image,
    u_next: &Image,
    mu: &Image,
    w: &WeightField,
    params: &NoiseParams,
    lambda2: f64,
    eta: f64,
) -> f64 {
    let a = fidelity_weights(w, params);
    let target: Vec<f64> = u_next.data().iter().zip(mu.data()).map(|(u, m)| u - m).collect();
    quadratic_energy(v.data(), &a, f.data(), eta, &target) + lambda2 * total_variation(v)
}

fn quadratic_energy(v: &[f64], a: &[f64], f: &[f64], eta: f64, target: &[f64]) -> f64 {
    let mut e = 0.0;
    for i in 0..v.len() {
        let df = v[i] - f[i];
        let dt = target[i] - v[i];
        e += 0.5 * a[i] * df * df + 0.5 * eta * dt * dt;
    }
    e
}

struct Problem<'a> {
    width: usize,
    height: usize,
    a: &'a [f64],
    f: &'a [f64],
    eta: f64,
    target: &'a [f64],
    lambda2: f64,
    lambda: f64,
    iters: usize,
    sweeps: usize,
    tol: f64,
    step: BregmanStep,
}

impl Problem<'_> {
    fn energy(&self, v: &Image) -> f64 {
        quadratic_energy(v.data(), self.a, self.f, self.eta, self.target)
            + self.lambda2 * total_variation(v)
    }

    fn solve(&self, mut state: SplitState) -> (SplitState, TvDiagnostics) {
        let (w, h) = (self.width, self.height);
        let n = w * h;
        let lam = self.lambda;
        let qw: Vec<f64> = self.a.iter().map(|a| a + self.eta).collect();
        let qr: Vec<f64> = (0..n)
            .map(|i| self.a[i] * self.f[i] + self.eta * self.target[i])
            .collect();

        // diagonal includes λ times the number of in-image neighbours
        let mut diag = vec![0.0; n];
        for y in 0..h {
            for x in 0..w {
                let count = (x > 0) as usize + (x + 1 < w) as usize + (y > 0) as usize + (y + 1 < h) as usize;
                diag[y * w + x] = qw[y * w + x] + lam * count as f64;
            }
        }

        let mut diag_out = TvDiagnostics {
            initial_energy: self.energy(&state.v),
            ..Default::default()
        };
        let mut rhs = vec![0.0; n];
        let mut div = vec![0.0; n];
        let mut diff_x = vec![0.0; n];
        let mut diff_y = vec![0.0; n];
        let mut delta = vec![0.0; n];

        for _ in 0..self.iters {
            for i in 0..n {
                diff_x[i] = state.b.x[i] - state.d.x[i];
                diff_y[i] = state.b.y[i] - state.d.y[i];
            }
            divergence_into(&diff_x, &diff_y, w, h, &mut div);
            for i in 0..n {
                rhs[i] = qr[i] + lam * div[i];
            }

            let v = state.v.data_mut();
            let mut residual = f64::INFINITY;
            for _ in 0..self.sweeps {
                diag_out.sweeps += 1;
                for y in 0..h {
                    let row = y * w;
                    for x in 0..w {
                        let i = row + x;
                        let mut nb = 0.0;
                        if x > 0 {
                            nb += v[i - 1];
                        }
                        if x + 1 < w {
                            nb += v[i + 1];
                        }
                        if y > 0 {
                            nb += v[i - w];
                        }
                        if y + 1 < h {
                            nb += v[i + w];
                        }
                        let new = (rhs[i] + lam * nb) / diag[i];
                        delta[i] = new - v[i];
                        v[i] = new;
                    }
                }
                // After a lexicographic sweep only the right and lower
                // neighbours changed since pixel i was updated.
                residual = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        let i = y * w + x;
                        let mut r = 0.0;
                        if x + 1 < w {
                            r += delta[i + 1];
                        }
                        if y + 1 < h {
                            r += delta[i + w];
                        }
                        residual = f64::max(residual, (lam * r).abs() / diag[i]);
                    }
                }
                if residual < self.tol {
                    break;
                }
            }
            diag_out.linear_residual = diag_out.linear_residual.max(residual);

            if lam > 0.0 {
                let grad = gradient(&state.v);
                let t = self.lambda2 / lam;
                let scale = match self.step {
                    BregmanStep::Unit => 1.0,
                    BregmanStep::Penalty => lam,
                };
                for i in 0..n {
                    let q = [grad.x[i] + state.b.x[i], grad.y[i] + state.b.y[i]];
                    let [dx, dy] = shrink(q, t);
                    state.d.x[i] = dx;
                    state.d.y[i] = dy;
                    state.b.x[i] += scale * (grad.x[i] - dx);
                    state.b.y[i] += scale * (grad.y[i] - dy);
                }
            }
            diag_out.energies.push(self.energy(&state.v));
        }
        (state, diag_out)
    }
}

fn check_finite(img: &Image, name: &str) -> Result<()> {
    if img.is_finite() {
        Ok(())
    } else {
        Err(arg(format!("{name} contains non-finite values")))
    }
}

/// Solves the synthesis subproblem for `v`, warm-started from `warm` when
/// given (otherwise `v = f`, `d = ∇f`, `b = 0`).
#[allow(clippy::too_many_arguments)]
pub fn solve_v(
    f: &Image,
    u_next: &Image,
    mu: &Image,
    w: &WeightField,
    params: &NoiseParams,
    cfg: &TvConfig,
    warm: Option<&SplitState>,
) -> Result<(SplitState, TvDiagnostics)> {
    cfg.validate()?;
    if !f.same_shape(u_next) || !f.same_shape(mu) || w.pixels() != f.len() || w.width() != f.width() {
        return Err(arg("solve_v inputs have mismatched extents"));
    }
    if w.components() != params.components() {
        return Err(arg("weight field and parameters disagree on component count"));
    }
    check_finite(f, "f")?;
    check_finite(u_next, "u")?;
    check_finite(mu, "mu")?;
    let state = match warm {
        Some(s) => {
            if !s.v.same_shape(f) || !s.d.matches(f) || !s.b.matches(f) {
                return Err(arg("warm start has mismatched extent"));
            }
            s.clone()
        }
        None => SplitState::cold(f),
    };
    let a = fidelity_weights(w, params);
    let target: Vec<f64> = u_next.data().iter().zip(mu.data()).map(|(u, m)| u - m).collect();
    let problem = Problem {
        width: f.width(),
        height: f.height(),
        a: &a,
        f: f.data(),
        eta: cfg.eta,
        target: &target,
        lambda2: cfg.lambda2,
        lambda: cfg.lambda,
        iters: cfg.inner_bregman_iters,
        sweeps: cfg.gauss_seidel_sweeps,
        tol: cfg.linear_tol,
        step: cfg.bregman_step,
    };
    Ok(problem.solve(state))
}

/// Plain ROF denoising `min ½‖u − f‖² + alpha·TV(u)` with the same solver.
pub fn rof_denoise(f: &Image, alpha: f64, penalty: f64, iters: usize, sweeps: usize) -> Image {
    if alpha <= 0.0 {
        return f.clone();
    }
    let ones = vec![1.0; f.len()];
    let problem = Problem {
        width: f.width(),
        height: f.height(),
        a: &ones,
        f: f.data(),
        eta: 0.0,
        target: f.data(),
        lambda2: alpha,
        lambda: penalty,
        iters,
        sweeps,
        tol: 1e-9,
        step: BregmanStep::Unit,
    };
    problem.solve(SplitState::cold(f)).0.v
}
