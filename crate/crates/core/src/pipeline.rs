//! The outer augmented-Lagrangian loop and the impulse-noise initialization.
//!
//! One outer iteration runs
//!
//! 1. `u ← D(v + μ)` at the effective noise level of `Θ`,
//! 2. `(v, d, b) ← solve_v(f, u, μ, w, Θ)`,
//! 3. `μ ← μ + ε (v − u)`,
//! 4. the EM pair `Θ ← M(u, f, w)` and `w ← E(u, f, Θ)` in the configured order,
//! 5. the check `‖uⁿ⁺¹ − uⁿ‖² / ‖uⁿ‖² < ζ`.
//!
//! Gaussian-impulse mode differs only in how `w` and `Θ` are initialized.

use std::time::Instant;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::denoiser::{denoise, effective_level, DenoiserKind};
use crate::em::{neg_log_likelihood, update_params, update_weights, NoiseParams, WeightField, WEIGHT_EPS};
use crate::error::{Error, Result};
use crate::image::{psnr, Image, VectorField, PEAK};
use crate::noise::{estimate_noise_variance, VarianceEstimator};
use crate::tv::{solve_v, synthesis_energy, SplitState, TvConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    GaussianMixture,
    GaussianImpulse,
}

/// Order of the two EM half-steps inside an outer iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmOrder {
    /// `Θ` from the previous `w`, then `w` from the new `Θ`.
    ThetaFirst,
    /// `w` from the current `Θ`, then `Θ` from the new `w`.
    WeightsFirst,
}

/// Thresholds of the adaptive center-weighted median detector. Stage `k`
/// (center weight `2k + 1`) flags a pixel when its distance to the weighted
/// median exceeds `mad_weights[k] · MAD + offsets[k]`, MAD being the local
/// median absolute deviation. Offsets are on the 0–255 scale. Each further
/// pass reruns detection on the output of the previous one and adds its
/// detections to the mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcwmfConfig {
    pub mad_weights: [f64; 4],
    pub offsets: [f64; 4],
    pub passes: usize,
}

impl Default for AcwmfConfig {
    fn default() -> Self {
        Self {
            mad_weights: [0.3, 0.4, 0.5, 0.6],
            offsets: [25.0, 15.0, 10.0, 10.0],
            passes: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub mode: Mode,
    pub eta: f64,
    pub epsilon: f64,
    pub zeta: f64,
    pub max_outer_iters: usize,
    pub components: usize,
    /// Initial variances on the 0–255 scale.
    pub init_variances: Vec<f64>,
    /// Initial ratios; uniform when absent.
    pub init_ratios: Option<Vec<f64>>,
    /// Defaults to weights-first for Gaussian mixtures (a uniform `w⁰`
    /// carries no information) and theta-first for the impulse mode.
    pub em_order: Option<EmOrder>,
    pub warm_start: bool,
    pub variance_estimator: VarianceEstimator,
    pub denoiser: DenoiserKind,
    pub tv: TvConfig,
    pub acwmf: AcwmfConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: Mode::GaussianMixture,
            eta: 0.8,
            epsilon: 1e-2,
            zeta: 1e-5,
            max_outer_iters: 30,
            components: 2,
            init_variances: vec![500.0, 50.0],
            init_ratios: None,
            em_order: None,
            warm_start: true,
            variance_estimator: VarianceEstimator::Immerkaer,
            denoiser: DenoiserKind::default(),
            tv: TvConfig::default(),
            acwmf: AcwmfConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.eta, self.epsilon, self.zeta];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!(
                "eta, epsilon and zeta must be positive, got {positive:?}"
            )));
        }
        if self.components == 0 || self.max_outer_iters == 0 {
            return Err(Error::Config("components and max_outer_iters must be at least 1".into()));
        }
        if self.mode == Mode::GaussianImpulse && self.components != 2 {
            return Err(Error::Config("gaussian-impulse mode uses exactly 2 components".into()));
        }
        if self.mode == Mode::GaussianMixture {
            self.init_params()?;
        }
        self.denoiser.validate()?;
        self.tv_config().validate().map_err(config)?;
        let a = &self.acwmf;
        if a.mad_weights.iter().chain(&a.offsets).any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config("ACWMF thresholds must be finite and >= 0".into()));
        }
        if a.passes == 0 {
            return Err(Error::Config("ACWMF needs at least one pass".into()));
        }
        Ok(())
    }

    /// `Θ⁰` for the Gaussian-mixture mode.
    pub fn init_params(&self) -> Result<NoiseParams> {
        if self.init_variances.len() != self.components {
            return Err(Error::Config(format!(
                "{} initial variances given for {} components",
                self.init_variances.len(),
                self.components
            )));
        }
        let ratios = match &self.init_ratios {
            Some(r) => r.clone(),
            None => vec![1.0 / self.components as f64; self.components],
        };
        NoiseParams::from_variances_255(&ratios, &self.init_variances).map_err(config)
    }

    pub fn em_order(&self) -> EmOrder {
        self.em_order.unwrap_or(match self.mode {
            Mode::GaussianMixture => EmOrder::WeightsFirst,
            Mode::GaussianImpulse => EmOrder::ThetaFirst,
        })
    }

    fn tv_config(&self) -> TvConfig {
        TvConfig {
            eta: self.eta,
            ..self.tv.clone()
        }
    }
}

fn config(e: Error) -> Error {
    match e {
        Error::Argument(m) => Error::Config(m),
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub neg_log_likelihood: f64,
    pub synthesis_energy: f64,
    /// `‖uⁿ⁺¹ − uⁿ‖² / ‖uⁿ‖²`; infinite on the first iteration.
    pub relative_change: f64,
    pub psnr: Option<f64>,
    /// Level handed to the denoiser (0–255 std).
    pub level: f64,
    pub ratios: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct SolverState {
    pub u: Image,
    pub v: Image,
    pub mu: Image,
    pub d: VectorField,
    pub b: VectorField,
    pub params: NoiseParams,
    pub w: WeightField,
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
}

impl SolverState {
    pub fn converged(&self, zeta: f64) -> bool {
        self.history.last().is_some_and(|r| r.relative_change < zeta)
    }
}

fn ensure_finite(ok: bool, step: &'static str, iteration: usize) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::NonFinite { step, iteration })
    }
}

/// Restores `f`. When `clean_ref` is given its PSNR against `u` is recorded
/// every iteration.
pub fn restore(f: &Image, cfg: &SolverConfig, clean_ref: Option<&Image>) -> Result<(Image, SolverState)> {
    cfg.validate()?;
    let (w0, params0) = match cfg.mode {
        Mode::GaussianMixture => (
            WeightField::uniform(cfg.components, f.width(), f.height()),
            cfg.init_params()?,
        ),
        Mode::GaussianImpulse => init_impulse(f, cfg)?,
    };
    restore_with_init(f, cfg, w0, params0, clean_ref)
}

/// The outer loop from an explicit `(w⁰, Θ⁰)`. `cfg.mode` is not consulted.
pub fn restore_with_init(
    f: &Image,
    cfg: &SolverConfig,
    w0: WeightField,
    params0: NoiseParams,
    clean_ref: Option<&Image>,
) -> Result<(Image, SolverState)> {
    cfg.validate()?;
    ensure_finite(f.is_finite(), "input", 0)?;
    if let Some(c) = clean_ref {
        if !c.same_shape(f) {
            return Err(Error::Argument("clean reference extent differs from input".into()));
        }
    }
    if w0.width() != f.width() || w0.height() != f.height() || w0.components() != params0.components() {
        return Err(Error::Argument("initial weights do not match the image or the parameters".into()));
    }
    let tv = cfg.tv_config();
    let order = cfg.em_order();
    let split = SplitState::cold(f);
    let mut state = SolverState {
        u: f.clone(),
        v: split.v,
        mu: Image::zeros(f.width(), f.height()),
        d: split.d,
        b: split.b,
        params: params0,
        w: w0,
        iteration: 0,
        history: Vec::new(),
    };

    while state.iteration < cfg.max_outer_iters {
        let it = state.iteration + 1;
        let start = Instant::now();

        let level = effective_level(&state.params);
        let u = denoise(&state.v.add(&state.mu), level, &cfg.denoiser)?;
        ensure_finite(u.is_finite(), "denoise", it)?;

        let warm = SplitState {
            v: state.v.clone(),
            d: state.d.clone(),
            b: state.b.clone(),
        };
        let warm = if cfg.warm_start { Some(&warm) } else { None };
        let (split, _) = solve_v(f, &u, &state.mu, &state.w, &state.params, &tv, warm)?;
        ensure_finite(split.v.is_finite() && split.d.is_finite() && split.b.is_finite(), "solve_v", it)?;

        let mu = state.mu.zip_map(&split.v.sub(&u), |m, r| m + cfg.epsilon * r);
        ensure_finite(mu.is_finite(), "multiplier", it)?;

        let (params, w) = match order {
            EmOrder::ThetaFirst => {
                let mut w = state.w.clone();
                let params = update_params(&u, f, &mut w)?;
                let w = update_weights(&u, f, &params)?;
                (params, w)
            }
            EmOrder::WeightsFirst => {
                let mut w = update_weights(&u, f, &state.params)?;
                let params = update_params(&u, f, &mut w)?;
                (params, w)
            }
        };
        ensure_finite(params.is_valid() && w.is_valid(), "em", it)?;

        let relative_change = if it == 1 {
            f64::INFINITY
        } else {
            u.sub(&state.u).norm_sq() / state.u.norm_sq().max(f64::MIN_POSITIVE)
        };
        let record = IterationRecord {
            iteration: it,
            neg_log_likelihood: neg_log_likelihood(&u, f, &params)?,
            synthesis_energy: synthesis_energy(&split.v, f, &u, &state.mu, &state.w, &state.params, tv.lambda2, tv.eta),
            relative_change,
            psnr: clean_ref.map(|c| psnr(c, &u)).transpose()?,
            level,
            ratios: params.ratios().to_vec(),
            sigmas: params.sigmas_255(),
            seconds: start.elapsed().as_secs_f64(),
        };
        debug!(
            "iter {it}: level {level:.3} nll {:.6e} change {relative_change:.3e} psnr {:?}",
            record.neg_log_likelihood, record.psnr
        );

        state.u = u;
        state.v = split.v;
        state.d = split.d;
        state.b = split.b;
        state.mu = mu;
        state.params = params;
        state.w = w;
        state.iteration = it;
        state.history.push(record);
        if relative_change < cfg.zeta {
            break;
        }
    }
    Ok((state.u.clone(), state))
}

/// Initial `(w⁰, Θ⁰)` for Gaussian-plus-impulse noise: ACWMF detections
/// seed component 2, the global variance estimate is split 1:9 between the
/// components, and `r⁰` is the detected fraction.
pub fn init_impulse(f: &Image, cfg: &SolverConfig) -> Result<(WeightField, NoiseParams)> {
    let mask = acwmf_detect(f, &cfg.acwmf)?;
    let n = f.len();
    let hits = mask.iter().filter(|&&m| m).count();
    let frac = (hits as f64 / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let w2: Vec<f64> = mask.iter().map(|&m| if m { 1.0 - WEIGHT_EPS } else { WEIGHT_EPS }).collect();
    let w1: Vec<f64> = w2.iter().map(|w| 1.0 - w).collect();
    let w = WeightField::from_maps(f.width(), f.height(), &[w1, w2])?;

    let s = estimate_noise_variance(f, cfg.variance_estimator)?.max(0.0);
    let (v1, v2) = impulse_variance_split(s);
    // the sort is stable, so ties at the variance floor keep this labeling
    let params = NoiseParams::from_variances_255(&[1.0 - frac, frac], &[v1, v2])?;
    Ok((w, params))
}

/// `σ² ↦ (σ²/10, 9σ²/10)`.
pub fn impulse_variance_split(s: f64) -> (f64, f64) {
    (s / 10.0, 9.0 * s / 10.0)
}

fn reflect(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Per-pixel ACWMF quantities: the plain 3×3 median, and whether the pixel is
/// flagged as an impulse.
fn acwmf_scan(f: &Image, cfg: &AcwmfConfig) -> Result<(Vec<f64>, Vec<bool>)> {
    let (w, h) = (f.width(), f.height());
    if w < 3 || h < 3 {
        return Err(Error::Argument(format!("ACWMF needs at least 3x3, got {w}x{h}")));
    }
    let mut medians = vec![0.0; w * h];
    let mut flags = vec![false; w * h];
    let mut nb = [0.0; 8];
    let mut window = [0.0; 9];
    for y in 0..h {
        for x in 0..w {
            let c = f.get(x, y);
            let mut j = 0;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let v = f.get(reflect(x as isize + dx, w), reflect(y as isize + dy, h));
                    window[(dy * 3 + dx + 4) as usize] = v;
                    if dx != 0 || dy != 0 {
                        nb[j] = v;
                        j += 1;
                    }
                }
            }
            nb.sort_by(f64::total_cmp);
            window.sort_by(f64::total_cmp);
            let median = window[4];
            let mut dev = window.map(|v| (v - median).abs());
            dev.sort_by(f64::total_cmp);
            let mad = dev[4];

            // center weight 2k+1 over the 8 sorted neighbours
            let flagged = (0..4).any(|k| {
                let cwm = median3(c, nb[3 - k], nb[4 + k]);
                (cwm - c).abs() > cfg.mad_weights[k] * mad + cfg.offsets[k] / PEAK
            });
            let i = y * w + x;
            medians[i] = median;
            flags[i] = flagged;
        }
    }
    Ok((medians, flags))
}

fn median3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

/// Runs all passes, returning the filtered image and the accumulated mask.
fn acwmf_passes(f: &Image, cfg: &AcwmfConfig) -> Result<(Image, Vec<bool>)> {
    let mut img = f.clone();
    let mut mask = vec![false; f.len()];
    for _ in 0..cfg.passes.max(1) {
        let (medians, flags) = acwmf_scan(&img, cfg)?;
        if !flags.iter().any(|&h| h) {
            break;
        }
        for (i, hit) in flags.into_iter().enumerate() {
            if hit {
                img.data_mut()[i] = medians[i];
                mask[i] = true;
            }
        }
    }
    Ok((img, mask))
}

/// Impulse mask from the adaptive center-weighted median detector.
pub fn acwmf_detect(f: &Image, cfg: &AcwmfConfig) -> Result<Vec<bool>> {
    acwmf_passes(f, cfg).map(|(_, mask)| mask)
}

/// Replaces detected impulses by the 3×3 median and keeps every other pixel.
pub fn acwmf(f: &Image, cfg: &AcwmfConfig) -> Result<Image> {
    acwmf_passes(f, cfg).map(|(img, _)| img)
}
