use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Share of the multisine length faded in at the start and out at the end.
pub const FADE_FRACTION: f64 = 0.05;

/// i.i.d. uniform samples on `[lo, hi)`.
pub fn gen_uniform_input(n: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<f64>> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!("uniform input needs lo < hi, got [{lo}, {hi}]")));
    }
    let mut rng = Stream::new(seed);
    Ok((0..n).map(|_| rng.uniform_range(lo, hi)).collect())
}

/// `u_k = sin(2kπ/10) + sin(2kπ/5)`.
pub fn gen_test_sine(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let k = k as f64;
            (2.0 * k * PI / 10.0).sin() + (2.0 * k * PI / 5.0).sin()
        })
        .collect()
}

/// Unit-RMS sum of `n_tones` equal-amplitude cosines on DFT bins inside
/// `band` (cycles per sample), with seeded phases and a linear fade over
/// [`FADE_FRACTION`] of the length at both ends.
pub fn gen_multisine(n: usize, band: (f64, f64), n_tones: usize, seed: u64) -> Result<Vec<f64>> {
    let tones = multisine_tones(n, band, n_tones, seed)?;
    let mut u = unfaded(n, &tones);
    let ramp = ((n as f64) * FADE_FRACTION).round() as usize;
    for k in 0..ramp.min(n) {
        let g = k as f64 / ramp as f64;
        u[k] *= g;
        u[n - 1 - k] *= g;
    }
    Ok(u)
}

/// The multisine before fading (unit RMS).
#[cfg(test)]
pub(crate) fn gen_multisine_unfaded(n: usize, band: (f64, f64), n_tones: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(unfaded(n, &multisine_tones(n, band, n_tones, seed)?))
}

fn multisine_tones(n: usize, band: (f64, f64), n_tones: usize, seed: u64) -> Result<Vec<(usize, f64)>> {
    let (lo, hi) = band;
    if !(0.0 <= lo && lo < hi && hi < 0.5) || n_tones == 0 || n == 0 {
        return Err(Error::InvalidInput(format!(
            "multisine band {band:?} with {n_tones} tones over {n} samples"
        )));
    }
    let first = ((lo * n as f64).ceil() as usize).max(1);
    let last = (hi * n as f64).floor() as usize;
    if last < first || last - first + 1 < n_tones {
        return Err(Error::InvalidInput(format!(
            "multisine band {band:?} holds fewer than {n_tones} bins at length {n}"
        )));
    }
    let span = last - first;
    let mut rng = Stream::new(seed);
    Ok((0..n_tones)
        .map(|i| {
            let bin = if n_tones == 1 {
                first
            } else {
                first + (i * span) / (n_tones - 1)
            };
            (bin, 2.0 * PI * rng.uniform())
        })
        .collect())
}

fn unfaded(n: usize, tones: &[(usize, f64)]) -> Vec<f64> {
    let mut u: Vec<f64> = (0..n)
        .map(|k| {
            tones
                .iter()
                .map(|&(bin, phase)| (2.0 * PI * (bin * k % n) as f64 / n as f64 + phase).cos())
                .sum()
        })
        .collect();
    let rms = (u.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    u.iter_mut().for_each(|v| *v /= rms);
    u
}

/// Linear chirp from `f0` to `f1` cycles per sample over `n` samples.
pub fn gen_swept_sine(n: usize, f0: f64, f1: f64) -> Result<Vec<f64>> {
    if !((0.0..0.5).contains(&f0) && (0.0..0.5).contains(&f1)) {
        return Err(Error::InvalidInput(format!(
            "swept sine frequencies must lie in [0, 0.5): {f0}, {f1}"
        )));
    }
    let rate = if n > 0 { (f1 - f0) / n as f64 } else { 0.0 };
    Ok((0..n)
        .map(|k| {
            let k = k as f64;
            (2.0 * PI * (f0 * k + 0.5 * rate * k * k)).sin()
        })
        .collect())
}
