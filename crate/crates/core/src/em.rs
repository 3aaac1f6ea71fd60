//! Likelihood, surrogate functional and closed-form EM updates for a
//! zero-mean Gaussian mixture noise model.
//!
//! All sums run sequentially in pixel order, so results do not depend on
//! thread scheduling.

use crate::error::{arg, Result};
use crate::image::{Image, PEAK};

/// Lower bound applied to every variance (normalized scale).
pub const VARIANCE_FLOOR: f64 = 1e-10;
/// Weights are clamped to `[WEIGHT_EPS, 1 - WEIGHT_EPS]`.
pub const WEIGHT_EPS: f64 = 1e-12;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Mixture ratios and variances, components sorted by increasing variance.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseParams {
    ratios: Vec<f64>,
    variances: Vec<f64>,
}

impl NoiseParams {
    /// Validates, floors the variances and sorts components into canonical
    /// order. Ratios within 1e-9 of summing to one are renormalized.
    pub fn new(ratios: &[f64], variances: &[f64]) -> Result<Self> {
        Self::new_with_order(ratios, variances).map(|(p, _)| p)
    }

    /// Like [`NoiseParams::new`], also returning `order` such that canonical
    /// component `k` was input component `order[k]`.
    pub fn new_with_order(ratios: &[f64], variances: &[f64]) -> Result<(Self, Vec<usize>)> {
        if ratios.is_empty() || ratios.len() != variances.len() {
            return Err(arg(format!(
                "need matching non-empty ratios/variances, got {} and {}",
                ratios.len(),
                variances.len()
            )));
        }
        if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0 && *r <= 1.0)) {
            return Err(arg(format!("ratios must lie in (0, 1]: {ratios:?}")));
        }
        if variances.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(arg(format!("variances must be finite and >= 0: {variances:?}")));
        }
        let sum: f64 = ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(arg(format!("ratios sum to {sum}, expected 1")));
        }
        let mut order: Vec<usize> = (0..ratios.len()).collect();
        order.sort_by(|&a, &b| variances[a].total_cmp(&variances[b]));
        let params = Self {
            ratios: order.iter().map(|&i| ratios[i] / sum).collect(),
            variances: order.iter().map(|&i| variances[i].max(VARIANCE_FLOOR)).collect(),
        };
        Ok((params, order))
    }

    /// Ratios plus standard deviations on the 0–255 scale.
    pub fn from_sigmas_255(ratios: &[f64], sigmas: &[f64]) -> Result<Self> {
        let vars: Vec<f64> = sigmas.iter().map(|s| (s / PEAK) * (s / PEAK)).collect();
        Self::new(ratios, &vars)
    }

    /// Ratios plus variances on the 0–255 scale.
    pub fn from_variances_255(ratios: &[f64], variances: &[f64]) -> Result<Self> {
        let vars: Vec<f64> = variances.iter().map(|v| v / (PEAK * PEAK)).collect();
        Self::new(ratios, &vars)
    }

    pub fn components(&self) -> usize {
        self.ratios.len()
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn sigmas_255(&self) -> Vec<f64> {
        self.variances.iter().map(|v| v.sqrt() * PEAK).collect()
    }

    pub fn is_valid(&self) -> bool {
        let sum: f64 = self.ratios.iter().sum();
        (sum - 1.0).abs() <= 1e-12
            && self.ratios.iter().all(|r| *r > 0.0 && *r <= 1.0)
            && self.variances.iter().all(|v| *v >= VARIANCE_FLOOR && v.is_finite())
            && self.variances.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Per-pixel soft assignment of each pixel to a noise component, stored
/// component-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightField {
    components: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl WeightField {
    pub fn uniform(components: usize, width: usize, height: usize) -> Self {
        assert!(components >= 1);
        Self {
            components,
            width,
            height,
            data: vec![1.0 / components as f64; components * width * height],
        }
    }

    /// Builds a field from one map per component; each pixel must already lie
    /// on the simplex (within 1e-10) and is clamped into the open interval.
    pub fn from_maps(width: usize, height: usize, maps: &[Vec<f64>]) -> Result<Self> {
        let n = width * height;
        if maps.is_empty() || maps.iter().any(|m| m.len() != n) {
            return Err(arg("weight maps must be non-empty and match the image extent"));
        }
        let components = maps.len();
        let mut data = Vec::with_capacity(components * n);
        for m in maps {
            data.extend_from_slice(m);
        }
        let mut field = Self {
            components,
            width,
            height,
            data,
        };
        for i in 0..n {
            let s: f64 = (0..components).map(|k| field.data[k * n + i]).sum();
            if (s - 1.0).abs() > 1e-10 || (0..components).any(|k| field.data[k * n + i] < 0.0) {
                return Err(arg(format!("weights at pixel {i} are not on the simplex")));
            }
        }
        field.clamp_and_normalize();
        Ok(field)
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn map(&self, k: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.pixels() + i]
    }

    pub fn map_image(&self, k: usize) -> Image {
        Image::from_vec_unchecked(self.width, self.height, self.map(k).to_vec())
    }

    /// True when every pixel lies on the simplex with entries clamped away
    /// from 0 and 1.
    pub fn is_valid(&self) -> bool {
        let n = self.pixels();
        (0..n).all(|i| {
            let s: f64 = (0..self.components).map(|k| self.get(k, i)).sum();
            (s - 1.0).abs() <= 1e-10
                && (0..self.components).all(|k| {
                    let w = self.get(k, i);
                    self.components == 1 || (WEIGHT_EPS * 0.999..=1.0 - WEIGHT_EPS * 0.999).contains(&w)
                })
        })
    }

    /// Reorders components so that new component `k` is old `order[k]`.
    pub fn permute(&mut self, order: &[usize]) {
        assert_eq!(order.len(), self.components);
        if order.iter().enumerate().all(|(k, &o)| k == o) {
            return;
        }
        let n = self.pixels();
        let mut data = Vec::with_capacity(self.data.len());
        for &o in order {
            data.extend_from_slice(&self.data[o * n..(o + 1) * n]);
        }
        self.data = data;
    }

    fn clamp_and_normalize(&mut self) {
        if self.components == 1 {
            self.data.iter_mut().for_each(|w| *w = 1.0);
            return;
        }
        let n = self.pixels();
        let k = self.components;
        for i in 0..n {
            let mut s = 0.0;
            for c in 0..k {
                let w = &mut self.data[c * n + i];
                *w = w.clamp(WEIGHT_EPS, 1.0 - WEIGHT_EPS);
                s += *w;
            }
            for c in 0..k {
                self.data[c * n + i] /= s;
            }
        }
    }
}

fn check_shapes(u: &Image, f: &Image) -> Result<()> {
    if !u.same_shape(f) {
        return Err(arg("u and f extents differ"));
    }
    Ok(())
}

fn residual(u: &Image, f: &Image) -> Vec<f64> {
    u.data().iter().zip(f.data()).map(|(a, b)| a - b).collect()
}

/// Log of `r_k p_k(z)` including the `½ ln 2π` constant.
#[inline]
fn log_component(z: f64, ratio: f64, variance: f64) -> f64 {
    ratio.ln() - HALF_LN_2PI - 0.5 * variance.ln() - z * z / (2.0 * variance)
}

pub(crate) fn nll_of_residual(res: &[f64], ratios: &[f64], variances: &[f64]) -> f64 {
    let k = ratios.len();
    let mut logs = vec![0.0; k];
    let mut total = 0.0;
    for &z in res {
        let mut m = f64::NEG_INFINITY;
        for c in 0..k {
            logs[c] = log_component(z, ratios[c], variances[c]);
            m = m.max(logs[c]);
        }
        let s: f64 = logs.iter().map(|l| (l - m).exp()).sum();
        total -= m + s.ln();
    }
    total
}

/// `−Σ_x ln Σ_k r_k p_k(u(x) − f(x))`.
pub fn neg_log_likelihood(u: &Image, f: &Image, params: &NoiseParams) -> Result<f64> {
    check_shapes(u, f)?;
    Ok(nll_of_residual(&residual(u, f), &params.ratios, &params.variances))
}

/// The surrogate `H(u, Θ, w)`. With `include_constants` the per-pixel
/// `½ ln 2π` is added so that `H` at the optimal `w` equals the negative
/// log-likelihood exactly.
pub fn surrogate_h(
    u: &Image,
    f: &Image,
    params: &NoiseParams,
    w: &WeightField,
    include_constants: bool,
) -> Result<f64> {
    check_shapes(u, f)?;
    if w.components() != params.components() || w.pixels() != u.len() {
        return Err(arg("weight field does not match image or parameter count"));
    }
    let res = residual(u, f);
    let n = res.len();
    let mut total = 0.0;
    for (c, (&r, &var)) in params.ratios.iter().zip(&params.variances).enumerate() {
        let map = w.map(c);
        let (ln_r, half_ln_var) = (r.ln(), 0.5 * var.ln());
        for i in 0..n {
            let wk = map[i];
            let z = res[i];
            let entropy = if wk > 0.0 { wk * wk.ln() } else { 0.0 };
            total += 0.5 * z * z * wk / var - wk * ln_r + wk * half_ln_var + entropy;
        }
    }
    if include_constants {
        let mass: f64 = (0..params.components()).map(|c| w.map(c).iter().sum::<f64>()).sum();
        total += HALF_LN_2PI * mass;
    }
    Ok(total)
}

pub(crate) fn posterior_weights(
    res: &[f64],
    width: usize,
    height: usize,
    ratios: &[f64],
    variances: &[f64],
) -> WeightField {
    let k = ratios.len();
    let n = res.len();
    let mut field = WeightField {
        components: k,
        width,
        height,
        data: vec![1.0; k * n],
    };
    if k == 1 {
        return field;
    }
    let mut logs = vec![0.0; k];
    for (i, &z) in res.iter().enumerate() {
        let mut m = f64::NEG_INFINITY;
        for c in 0..k {
            // the 2π constant cancels in the normalization
            logs[c] = ratios[c].ln() - 0.5 * variances[c].ln() - z * z / (2.0 * variances[c]);
            m = m.max(logs[c]);
        }
        let mut s = 0.0;
        for l in logs.iter_mut() {
            *l = (*l - m).exp();
            s += *l;
        }
        for (c, l) in logs.iter().enumerate() {
            field.data[c * n + i] = l / s;
        }
    }
    field.clamp_and_normalize();
    field
}

/// Closed-form E-step: posterior component probabilities per pixel.
pub fn update_weights(u: &Image, f: &Image, params: &NoiseParams) -> Result<WeightField> {
    check_shapes(u, f)?;
    Ok(posterior_weights(
        &residual(u, f),
        u.width(),
        u.height(),
        &params.ratios,
        &params.variances,
    ))
}

/// Raw M-step statistics in the labeling of `w` (no sorting).
pub(crate) fn moment_estimates(res: &[f64], w: &WeightField) -> (Vec<f64>, Vec<f64>) {
    let n = res.len() as f64;
    let mut ratios = Vec::with_capacity(w.components());
    let mut variances = Vec::with_capacity(w.components());
    for c in 0..w.components() {
        let map = w.map(c);
        let mass: f64 = map.iter().sum();
        let sq: f64 = map.iter().zip(res).map(|(wk, z)| wk * z * z).sum();
        ratios.push(mass / n);
        variances.push(if mass > 0.0 { sq / mass } else { VARIANCE_FLOOR });
    }
    let total: f64 = ratios.iter().sum();
    ratios.iter_mut().for_each(|r| *r /= total);
    (ratios, variances)
}

/// Closed-form M-step. Components are re-sorted by variance and `w` is
/// permuted in lockstep.
pub fn update_params(u: &Image, f: &Image, w: &mut WeightField) -> Result<NoiseParams> {
    check_shapes(u, f)?;
    if w.pixels() != u.len() {
        return Err(arg("weight field does not match image extent"));
    }
    let (ratios, variances) = moment_estimates(&residual(u, f), w);
    let (params, order) = NoiseParams::new_with_order(&ratios, &variances)?;
    w.permute(&order);
    Ok(params)
}

/// Result of [`em_fit`].
#[derive(Clone, Debug)]
pub struct EmFit {
    pub params: NoiseParams,
    pub weights: WeightField,
    /// Negative log-likelihood of `init` followed by the value after each sweep.
    pub nll_history: Vec<f64>,
    pub sweeps: usize,
}

/// Alternates E- and M-steps on a fixed residual until the relative change of
/// the negative log-likelihood drops below `tol` or `max_iter` sweeps ran.
pub fn em_fit(residual: &Image, init: &NoiseParams, max_iter: usize, tol: f64) -> Result<EmFit> {
    if max_iter == 0 {
        return Err(arg("em_fit needs at least one sweep"));
    }
    let res = residual.data();
    let (width, height) = (residual.width(), residual.height());
    let mut params = init.clone();
    let mut prev = nll_of_residual(res, &params.ratios, &params.variances);
    let mut history = vec![prev];
    let mut weights = WeightField::uniform(params.components(), width, height);
    let mut sweeps = 0;
    while sweeps < max_iter {
        weights = posterior_weights(res, width, height, &params.ratios, &params.variances);
        let (ratios, variances) = moment_estimates(res, &weights);
        let (next, order) = NoiseParams::new_with_order(&ratios, &variances)?;
        weights.permute(&order);
        params = next;
        sweeps += 1;
        let cur = nll_of_residual(res, &params.ratios, &params.variances);
        history.push(cur);
        let rel = (prev - cur).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = cur;
        if rel < tol {
            break;
        }
    }
    Ok(EmFit {
        params,
        weights,
        nll_history: history,
        sweeps,
    })
}

/// Per-pixel data-fidelity weight `Σ_k w_k / σ_k²`.
pub fn fidelity_weights(w: &WeightField, params: &NoiseParams) -> Vec<f64> {
    let n = w.pixels();
    let mut out = vec![0.0; n];
    for (c, var) in params.variances.iter().enumerate() {
        for (o, wk) in out.iter_mut().zip(w.map(c)) {
            *o += wk / var;
        }
    }
    out
}
