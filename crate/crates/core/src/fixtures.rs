//! Deterministic procedural stand-ins for the usual grayscale test images.
//!
//! The standard photographs are not redistributable. Each fixture here is a
//! piecewise-smooth scene (shaded background, occluding shapes, striped
//! fabric-like patches and a faint band-limited texture) generated from a
//! fixed seed, then affinely matched to the first two moments of the image it
//! stands in for and quantized to 8 bits. Set `MIXNOISE_IMAGES` to a
//! directory holding `<name>.pgm` files to use real images instead.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::image::{load_pgm, Image, PEAK};

pub const FIXTURE_NAMES: [&str; 5] = ["lena", "barbara", "boat", "house", "peppers"];
pub const IMAGES_ENV: &str = "MIXNOISE_IMAGES";

struct Recipe {
    size: usize,
    seed: u64,
    shapes: usize,
    stripe_patches: usize,
    texture: f64,
    mean: f64,
    std: f64,
}

fn recipe(name: &str) -> Option<Recipe> {
    let r = match name {
        "lena" => Recipe { size: 512, seed: 11, shapes: 14, stripe_patches: 1, texture: 0.15, mean: 124.0, std: 47.9 },
        "barbara" => Recipe { size: 512, seed: 23, shapes: 12, stripe_patches: 6, texture: 0.25, mean: 117.0, std: 54.5 },
        "boat" => Recipe { size: 512, seed: 37, shapes: 20, stripe_patches: 2, texture: 0.2, mean: 129.0, std: 46.0 },
        "house" => Recipe { size: 256, seed: 41, shapes: 9, stripe_patches: 2, texture: 0.1, mean: 139.0, std: 52.0 },
        "peppers" => Recipe { size: 256, seed: 53, shapes: 11, stripe_patches: 0, texture: 0.1, mean: 118.0, std: 55.0 },
        _ => return None,
    };
    Some(r)
}

/// The procedural fixture `name`, one of [`FIXTURE_NAMES`].
pub fn fixture(name: &str) -> Result<Image> {
    let r = recipe(name).ok_or_else(|| Error::Argument(format!("unknown fixture {name:?}")))?;
    Ok(generate(&r))
}

/// `name` from `$MIXNOISE_IMAGES/<name>.pgm` when that file exists, else
/// the procedural fixture.
pub fn standard_image(name: &str) -> Result<Image> {
    if let Some(dir) = std::env::var_os(IMAGES_ENV) {
        let path = PathBuf::from(dir).join(format!("{name}.pgm"));
        if path.is_file() {
            return load_pgm(path);
        }
    }
    fixture(name)
}

/// Smooth scene of arbitrary size for tests: shaded background plus a few
/// flat shapes, values in `[0, 1]`.
pub fn scene(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut img = vec![0.0; width * height];
    paint_background(&mut img, width, height, &mut rng);
    for _ in 0..4 {
        paint_shape(&mut img, width, height, &mut rng);
    }
    finish(img, width, height, 120.0, 50.0)
}

fn generate(r: &Recipe) -> Image {
    let n = r.size;
    let mut rng = ChaCha20Rng::seed_from_u64(r.seed);
    let mut img = vec![0.0; n * n];
    paint_background(&mut img, n, n, &mut rng);
    for _ in 0..r.shapes {
        paint_shape(&mut img, n, n, &mut rng);
    }
    for _ in 0..r.stripe_patches {
        paint_stripes(&mut img, n, n, &mut rng);
    }
    add_texture(&mut img, n, n, r.texture, &mut rng);
    finish(img, n, n, r.mean, r.std)
}

fn paint_background(img: &mut [f64], w: usize, h: usize, rng: &mut ChaCha20Rng) {
    let (gx, gy) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.1..0.4),
            )
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x as f64 / w as f64, y as f64 / h as f64);
            let mut v = gx * sx + gy * sy;
            for &(fx, fy, ph, a) in &waves {
                v += a * (2.0 * PI * (fx * sx + fy * sy) + ph).sin();
            }
            img[y * w + x] = v;
        }
    }
}

fn paint_shape(img: &mut [f64], w: usize, h: usize, rng: &mut ChaCha20Rng) {
    let cx = rng.gen_range(0.0..w as f64);
    let cy = rng.gen_range(0.0..h as f64);
    let scale = w.min(h) as f64;
    let rx = rng.gen_range(0.05..0.25) * scale;
    let ry = rng.gen_range(0.05..0.25) * scale;
    let angle = rng.gen_range(0.0..PI);
    let level = rng.gen_range(-1.5..1.5);
    let shade = rng.gen_range(-0.6..0.6);
    let ellipse = rng.gen_bool(0.6);
    let (c, s) = (angle.cos(), angle.sin());
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let u = (c * dx + s * dy) / rx;
            let v = (-s * dx + c * dy) / ry;
            let inside = if ellipse {
                u * u + v * v <= 1.0
            } else {
                u.abs() <= 1.0 && v.abs() <= 1.0
            };
            if inside {
                img[y * w + x] = level + shade * u;
            }
        }
    }
}

fn paint_stripes(img: &mut [f64], w: usize, h: usize, rng: &mut ChaCha20Rng) {
    let scale = w.min(h) as f64;
    let x0 = rng.gen_range(0.0..w as f64 * 0.8);
    let y0 = rng.gen_range(0.0..h as f64 * 0.8);
    let pw = rng.gen_range(0.1..0.25) * scale;
    let ph = rng.gen_range(0.1..0.25) * scale;
    let period = rng.gen_range(5.0..12.0);
    let angle = rng.gen_range(0.0..PI);
    let amp = rng.gen_range(0.4..0.9);
    let base = rng.gen_range(-0.8..0.8);
    let (c, s) = (angle.cos(), angle.sin());
    let (x1, y1) = ((x0 + pw).min(w as f64) as usize, (y0 + ph).min(h as f64) as usize);
    for y in y0 as usize..y1 {
        for x in x0 as usize..x1 {
            let t = (c * x as f64 + s * y as f64) / period;
            img[y * w + x] = base + amp * (2.0 * PI * t).sin();
        }
    }
}

fn add_texture(img: &mut [f64], w: usize, h: usize, amplitude: f64, rng: &mut ChaCha20Rng) {
    if amplitude == 0.0 {
        return;
    }
    let waves: Vec<(f64, f64, f64)> = (0..24)
        .map(|_| {
            let f = rng.gen_range(0.05..0.25);
            let a = rng.gen_range(0.0..PI);
            (f * a.cos(), f * a.sin(), rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let norm = amplitude / (waves.len() as f64 / 2.0).sqrt();
    for y in 0..h {
        for x in 0..w {
            let mut t = 0.0;
            for &(fx, fy, ph) in &waves {
                t += (2.0 * PI * (fx * x as f64 + fy * y as f64) + ph).sin();
            }
            img[y * w + x] += norm * t;
        }
    }
}

/// Matches mean and standard deviation (0–255 scale), clamps and quantizes.
fn finish(mut img: Vec<f64>, w: usize, h: usize, mean: f64, std: f64) -> Image {
    let n = img.len() as f64;
    let m = img.iter().sum::<f64>() / n;
    let sd = (img.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt().max(1e-12);
    for v in &mut img {
        let q = (mean + (*v - m) / sd * std).clamp(0.0, PEAK).round();
        *v = q / PEAK;
    }
    Image::new(w, h, img).expect("finite by construction")
}
