//! The u-step: a denoising operator applied to `v + μ`.
//!
//! Built-in operators are the identity, explicit heat diffusion (the
//! `−Δ` operator), and ROF total-variation denoising. Any other denoiser can
//! be plugged in as a subprocess speaking the bridge protocol below.
//!
//! # Bridge protocol
//!
//! One process is spawned per call. Both directions carry the same layout,
//! all little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `MXNZ`                            |
//! | 4      | 2    | width (`u16`)                           |
//! | 6      | 2    | height (`u16`)                          |
//! | 8      | 8    | noise level, std on the 0–255 scale (`f64`) |
//! | 16     | 8·W·H | pixels, row-major `f64`, `[0, 1]` scale |
//!
//! The process reads the request from stdin and writes the response to
//! stdout, then exits with status 0. An echo (`cat`) is a valid identity
//! denoiser.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::em::NoiseParams;
use crate::error::{Error, Result};
use crate::image::{Image, PEAK};
use crate::noise::effective_variance;
use crate::tv::{divergence, gradient, rof_denoise};

pub const BRIDGE_MAGIC: [u8; 4] = *b"MXNZ";
pub const BRIDGE_HEADER_LEN: usize = 16;

/// Split penalty used by the ROF denoiser, relative to its TV weight.
const ROF_PENALTY_RATIO: f64 = 2.0;
const ROF_SWEEPS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DenoiserKind {
    Identity,
    HeatDiffusion {
        steps: usize,
        dt: f64,
    },
    /// ROF with TV weight `strength · level / 255`.
    TvRof {
        strength: f64,
        iters: usize,
    },
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

fn default_timeout() -> f64 {
    60.0
}

impl Default for DenoiserKind {
    fn default() -> Self {
        DenoiserKind::TvRof {
            strength: 0.8,
            iters: 40,
        }
    }
}

impl DenoiserKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            DenoiserKind::Identity => Ok(()),
            DenoiserKind::HeatDiffusion { dt, .. } => {
                if !(dt.is_finite() && *dt > 0.0 && *dt <= 0.25) {
                    return Err(Error::Config(format!(
                        "heat diffusion needs 0 < dt <= 0.25 for stability, got {dt}"
                    )));
                }
                Ok(())
            }
            DenoiserKind::TvRof { strength, iters } => {
                if !(strength.is_finite() && *strength >= 0.0) {
                    return Err(Error::Config(format!("tv-rof strength must be >= 0, got {strength}")));
                }
                if *iters == 0 {
                    return Err(Error::Config("tv-rof needs at least one iteration".into()));
                }
                Ok(())
            }
            DenoiserKind::External { command, timeout_secs } => {
                if command.is_empty() {
                    return Err(Error::Config("external denoiser command is empty".into()));
                }
                if timeout_secs.is_nan() || *timeout_secs <= 0.0 {
                    return Err(Error::Config("external denoiser timeout must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

/// `sqrt(Σ r_k σ_k²)` on the 0–255 scale: the single-Gaussian level handed
/// to the denoiser.
pub fn effective_level(params: &NoiseParams) -> f64 {
    effective_variance(params).sqrt() * PEAK
}

/// Denoises `noisy` assuming Gaussian noise of standard deviation `level`
/// (0–255 scale).
pub fn denoise(noisy: &Image, level: f64, kind: &DenoiserKind) -> Result<Image> {
    if !(level.is_finite() && level >= 0.0) {
        return Err(Error::Argument(format!("noise level must be >= 0, got {level}")));
    }
    kind.validate()?;
    match kind {
        DenoiserKind::Identity => Ok(noisy.clone()),
        DenoiserKind::HeatDiffusion { steps, dt } => Ok(heat_diffusion(noisy, *steps, *dt)),
        DenoiserKind::TvRof { strength, iters } => {
            let alpha = strength * level / PEAK;
            Ok(rof_denoise(noisy, alpha, ROF_PENALTY_RATIO * alpha, *iters, ROF_SWEEPS))
        }
        DenoiserKind::External {
            command,
            timeout_secs,
        } => run_bridge(command, *timeout_secs, noisy, level),
    }
}

/// Explicit Euler steps of `u_t = Δu` with Neumann borders.
pub fn heat_diffusion(img: &Image, steps: usize, dt: f64) -> Image {
    let mut u = img.clone();
    for _ in 0..steps {
        let lap = divergence(&gradient(&u));
        for (v, l) in u.data_mut().iter_mut().zip(lap.data()) {
            *v += dt * l;
        }
    }
    u
}

pub fn encode_bridge(img: &Image, level: f64) -> Result<Vec<u8>> {
    let (w, h) = (img.width(), img.height());
    let (w16, h16) = match (u16::try_from(w), u16::try_from(h)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(Error::Bridge(format!("image {w}x{h} exceeds the 65535 bridge limit"))),
    };
    let mut out = Vec::with_capacity(BRIDGE_HEADER_LEN + 8 * img.len());
    out.extend_from_slice(&BRIDGE_MAGIC);
    out.extend_from_slice(&w16.to_le_bytes());
    out.extend_from_slice(&h16.to_le_bytes());
    out.extend_from_slice(&level.to_le_bytes());
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses a bridge message into `(image, level)`.
pub fn decode_bridge(bytes: &[u8]) -> Result<(Image, f64)> {
    if bytes.len() < BRIDGE_HEADER_LEN {
        return Err(Error::Bridge(format!("short reply: {} bytes", bytes.len())));
    }
    if bytes[..4] != BRIDGE_MAGIC {
        return Err(Error::Bridge(format!("bad magic {:?}", &bytes[..4])));
    }
    let w = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let h = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let level = f64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[BRIDGE_HEADER_LEN..];
    if body.len() != 8 * w * h {
        return Err(Error::Bridge(format!(
            "payload has {} bytes, expected {} for {w}x{h}",
            body.len(),
            8 * w * h
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let img = Image::new(w, h, data).map_err(|e| Error::Bridge(format!("invalid pixels: {e}")))?;
    Ok((img, level))
}

fn run_bridge(command: &[String], timeout_secs: f64, noisy: &Image, level: f64) -> Result<Image> {
    let payload = encode_bridge(noisy, level)?;
    let mut child = Command::new(&command[0])
        .args(&command[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Bridge(format!("cannot spawn {:?}: {e}", command[0])))?;

    let mut stdin = child.stdin.take().expect("piped stdin");
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    // a child that exits early closes the pipe; its status is reported instead
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(&payload);
    });
    let reader = thread::spawn(move || {
        let mut buf = Vec::new();
        stdout.read_to_end(&mut buf).map(|_| buf)
    });
    let err_reader = thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr.read_to_string(&mut buf);
        buf
    });

    let deadline = Instant::now() + Duration::from_secs_f64(timeout_secs);
    let status = loop {
        match child.try_wait()? {
            Some(status) => break status,
            None if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Bridge(format!(
                    "{:?} timed out after {timeout_secs}s",
                    command[0]
                )));
            }
            None => thread::sleep(Duration::from_millis(2)),
        }
    };
    let _ = writer.join();
    let reply = reader
        .join()
        .map_err(|_| Error::Bridge("stdout reader panicked".into()))??;
    let diagnostics = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(Error::Bridge(format!(
            "{:?} exited with {status}: {}",
            command[0],
            diagnostics.trim()
        )));
    }
    let (img, _) = decode_bridge(&reply)?;
    if !img.same_shape(noisy) {
        return Err(Error::Bridge(format!(
            "reply is {}x{}, expected {}x{}",
            img.width(),
            img.height(),
            noisy.width(),
            noisy.height()
        )));
    }
    Ok(img)
}
