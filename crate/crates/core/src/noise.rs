//! Noise synthesis, mixture densities and fast variance estimation.
//!
//! Random draws come from ChaCha20 seeded with `seed_from_u64(seed)`. A
//! uniform variate is `(next_u64 >> 11) * 2^-53`; normal variates use the
//! cosine branch of Box–Muller, `sqrt(-2 ln(1 - u1)) * cos(2π u2)`. Every
//! pixel consumes a fixed number of uniforms (3 for Gaussian mixtures, 4 for
//! the impulse kinds) so a pixel's draw never depends on earlier branches.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::em::NoiseParams;
use crate::error::{arg, Result};
use crate::image::{Image, PEAK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    GaussianMixture,
    GaussianPlusRandomValued,
    GaussianPlusSaltPepper,
}

/// Description of a synthetic noise model.
///
/// For the impulse kinds `ratios` is `[1 - r, r]` and `sigmas` holds the
/// single Gaussian standard deviation. Sigmas are on the 0–255 scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub ratios: Vec<f64>,
    pub sigmas: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian_mixture(ratios: &[f64], sigmas: &[f64], seed: u64) -> Self {
        Self {
            kind: NoiseKind::GaussianMixture,
            ratios: ratios.to_vec(),
            sigmas: sigmas.to_vec(),
            seed,
        }
    }

    pub fn random_valued(r: f64, sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::GaussianPlusRandomValued,
            ratios: vec![1.0 - r, r],
            sigmas: vec![sigma],
            seed,
        }
    }

    pub fn salt_pepper(r: f64, sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::GaussianPlusSaltPepper,
            ratios: vec![1.0 - r, r],
            sigmas: vec![sigma],
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Impulse density `r` for the impulse kinds.
    pub fn impulse_ratio(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::GaussianMixture => None,
            _ => self.ratios.get(1).copied(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(arg("noise spec needs at least one component"));
        }
        if self.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(arg(format!("ratios must lie in [0, 1]: {:?}", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(arg(format!("ratios sum to {sum}, expected 1")));
        }
        if self.sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(arg(format!("sigmas must be finite and >= 0: {:?}", self.sigmas)));
        }
        match self.kind {
            NoiseKind::GaussianMixture => {
                if self.sigmas.len() != self.ratios.len() {
                    return Err(arg("gaussian mixture needs one sigma per ratio"));
                }
            }
            _ => {
                if self.ratios.len() != 2 || self.sigmas.len() != 1 {
                    return Err(arg("impulse noise needs ratios [1-r, r] and a single sigma"));
                }
            }
        }
        Ok(())
    }
}

/// Noisy image plus the ground-truth component index of every pixel. For
/// impulse kinds label 1 marks replaced pixels.
#[derive(Clone, Debug)]
pub struct Synthesized {
    pub noisy: Image,
    pub labels: Vec<u8>,
}

struct Uniforms(ChaCha20Rng);

impl Uniforms {
    fn new(seed: u64) -> Self {
        Self(ChaCha20Rng::seed_from_u64(seed))
    }

    #[inline]
    fn next(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

#[inline]
fn box_muller(u1: f64, u2: f64) -> f64 {
    (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Corrupts `clean` according to `spec`. Gaussian-corrupted pixels are not
/// clamped; impulse replacements take exact values in `[0, 1]`.
pub fn synthesize(clean: &Image, spec: &NoiseSpec) -> Result<Synthesized> {
    spec.validate()?;
    let mut rng = Uniforms::new(spec.seed);
    let n = clean.len();
    let mut out = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    match spec.kind {
        NoiseKind::GaussianMixture => {
            let sigmas: Vec<f64> = spec.sigmas.iter().map(|s| s / PEAK).collect();
            for &x in clean.data() {
                let pick = rng.next();
                let g = box_muller(rng.next(), rng.next());
                let mut acc = 0.0;
                let mut k = spec.ratios.len() - 1;
                for (i, r) in spec.ratios.iter().enumerate() {
                    acc += r;
                    if pick < acc {
                        k = i;
                        break;
                    }
                }
                // skip zero-ratio trailing components picked by rounding
                while spec.ratios[k] == 0.0 && k > 0 {
                    k -= 1;
                }
                out.push(x + sigmas[k] * g);
                labels.push(k as u8);
            }
        }
        NoiseKind::GaussianPlusRandomValued | NoiseKind::GaussianPlusSaltPepper => {
            let r = spec.ratios[1];
            let sigma = spec.sigmas[0] / PEAK;
            let salt_pepper = spec.kind == NoiseKind::GaussianPlusSaltPepper;
            for &x in clean.data() {
                let pick = rng.next();
                let value = rng.next();
                let g = box_muller(rng.next(), rng.next());
                if pick < r {
                    let v = if salt_pepper {
                        if value < 0.5 {
                            0.0
                        } else {
                            1.0
                        }
                    } else {
                        value
                    };
                    out.push(v);
                    labels.push(1);
                } else {
                    out.push(x + sigma * g);
                    labels.push(0);
                }
            }
        }
    }
    Ok(Synthesized {
        noisy: Image::new(clean.width(), clean.height(), out)?,
        labels,
    })
}

#[inline]
pub(crate) fn gaussian_density(z: f64, variance: f64) -> f64 {
    (-(z * z) / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
}

/// Density of the Gaussian mixture at residual `z` (normalized scale).
pub fn mixture_pdf(z: f64, params: &NoiseParams) -> f64 {
    params
        .ratios()
        .iter()
        .zip(params.variances())
        .map(|(&r, &v)| r * gaussian_density(z, v))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImpulseKind {
    RandomValued,
    SaltPepper,
}

/// Density of Gaussian-plus-impulse noise at `z` (noise value `f - u` on
/// the 0–255 scale).
///
/// Random-valued noise assumes a uniform clean-intensity distribution, which
/// turns the impulse part into a triangle on `[-255, 255]`. Salt-and-pepper
/// needs the intensity histogram `p2` (256 bins summing to 1).
pub fn impulse_mixture_pdf(
    z: f64,
    r: f64,
    sigma: f64,
    kind: ImpulseKind,
    histogram: Option<&[f64]>,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(arg(format!("impulse ratio {r} outside [0, 1]")));
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(arg(format!("sigma must be positive, got {sigma}")));
    }
    let gauss = (1.0 - r) * gaussian_density(z, sigma * sigma);
    match kind {
        ImpulseKind::RandomValued => {
            let tri = if (-PEAK..=0.0).contains(&z) {
                (PEAK + z) / (PEAK * PEAK)
            } else if (0.0..=PEAK).contains(&z) {
                (PEAK - z) / (PEAK * PEAK)
            } else {
                0.0
            };
            Ok(gauss + r * tri)
        }
        ImpulseKind::SaltPepper => {
            let hist = histogram
                .ok_or_else(|| arg("salt-and-pepper density needs an intensity histogram"))?;
            if hist.len() != 256 {
                return Err(arg(format!("histogram must have 256 bins, got {}", hist.len())));
            }
            let p2 = |t: f64| {
                if (0.0..=PEAK).contains(&t) {
                    hist[t.round() as usize]
                } else {
                    0.0
                }
            };
            Ok(gauss + 0.5 * r * p2(-z) + 0.5 * r * p2(PEAK - z))
        }
    }
}

/// Normalized 256-bin histogram of the quantized intensities.
pub fn intensity_histogram(img: &Image) -> Vec<f64> {
    let mut hist = vec![0.0; 256];
    for &v in img.data() {
        hist[crate::image::quantize_u8(v) as usize] += 1.0;
    }
    let n = img.len() as f64;
    hist.iter_mut().for_each(|h| *h /= n);
    hist
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceEstimator {
    /// Mean squared response of the 3×3 Laplacian-difference mask
    /// `[1 -2 1; -2 4 -2; 1 -2 1]`, divided by the mask energy 36.
    #[default]
    Immerkaer,
    /// `Σ Δf / (10 N1 N2)` with the interior 5-point Laplacian. Can be
    /// negative; kept for comparison only.
    Literal,
}

/// Global noise-variance estimate on the 0–255 scale.
pub fn estimate_noise_variance(f: &Image, estimator: VarianceEstimator) -> Result<f64> {
    let (w, h) = (f.width(), f.height());
    if w < 3 || h < 3 {
        return Err(arg(format!("variance estimation needs at least 3x3, got {w}x{h}")));
    }
    let px = |x: usize, y: usize| f.get(x, y) * PEAK;
    match estimator {
        VarianceEstimator::Immerkaer => {
            let mut sum = 0.0;
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let r = px(x - 1, y - 1) - 2.0 * px(x, y - 1) + px(x + 1, y - 1)
                        - 2.0 * px(x - 1, y)
                        + 4.0 * px(x, y)
                        - 2.0 * px(x + 1, y)
                        + px(x - 1, y + 1)
                        - 2.0 * px(x, y + 1)
                        + px(x + 1, y + 1);
                    sum += r * r;
                }
            }
            Ok(sum / (36.0 * ((w - 2) * (h - 2)) as f64))
        }
        VarianceEstimator::Literal => {
            let mut sum = 0.0;
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    sum += px(x - 1, y) + px(x + 1, y) + px(x, y - 1) + px(x, y + 1) - 4.0 * px(x, y);
                }
            }
            Ok(sum / (10.0 * (w * h) as f64))
        }
    }
}

/// `Σ r_k σ_k²` in the scale of `params` (normalized).
pub fn effective_variance(params: &NoiseParams) -> f64 {
    params
        .ratios()
        .iter()
        .zip(params.variances())
        .map(|(r, v)| r * v)
        .sum()
}
