//! Seeded benchmark simulators, excitation signals and datasets.
//!
//! All simulators start from a zero state unless told otherwise and draw their
//! noise from one [`Stream`] seeded by the caller, in a fixed per-step order.

mod dataset;
mod signals;

pub use dataset::{load_csv_dataset, save_csv_dataset, IoDataset, Split};
pub use signals::{gen_multisine, gen_swept_sine, gen_test_sine, gen_uniform_input, FADE_FRACTION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Which noise sources a simulation draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Noise {
    pub process: bool,
    pub measurement: bool,
}

impl Noise {
    pub const ON: Noise = Noise {
        process: true,
        measurement: true,
    };
    pub const OFF: Noise = Noise {
        process: false,
        measurement: false,
    };

    pub fn all(on: bool) -> Self {
        if on {
            Self::ON
        } else {
            Self::OFF
        }
    }
}

/// Simulator output. `y_clean` is `y` without measurement noise; process
/// noise, where present, is part of both.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub y: Vec<f64>,
    pub y_clean: Vec<f64>,
    pub states: Vec<[f64; 2]>,
}

impl Trajectory {
    fn with_capacity(n: usize) -> Self {
        Self {
            y: Vec::with_capacity(n),
            y_clean: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
        }
    }
}

fn check_input(u: &[f64]) -> Result<()> {
    match u.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(Error::NonFinite {
            what: format!("input sample {k}"),
        }),
        None => Ok(()),
    }
}

/// `x_{k+1} = A x_k + B u_k + w_k`, `y_k = x_k[0] + v_k` with
/// `A = [[0.7, 0.8], [0, 0.1]]`, `B = [-1, 0.1]ᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lgssm {
    pub x0: [f64; 2],
    /// Per-component variance of `w_k`.
    pub process_var: f64,
    pub measurement_std: f64,
}

impl Default for Lgssm {
    fn default() -> Self {
        Self {
            x0: [0.0, 0.0],
            process_var: 0.5,
            measurement_std: 1.0,
        }
    }
}

impl Lgssm {
    /// Per step: `v_k`, then both components of `w_k`.
    pub fn simulate(&self, u: &[f64], seed: u64, noise: Noise) -> Result<Trajectory> {
        check_input(u)?;
        let mut rng = Stream::new(seed);
        let w_std = self.process_var.sqrt();
        let mut x = self.x0;
        let mut out = Trajectory::with_capacity(u.len());
        for (k, &uk) in u.iter().enumerate() {
            let clean = x[0];
            let y = if noise.measurement {
                clean + self.measurement_std * rng.normal()
            } else {
                clean
            };
            out.states.push(x);
            out.y_clean.push(clean);
            out.y.push(y);
            let (w0, w1) = if noise.process {
                (w_std * rng.normal(), w_std * rng.normal())
            } else {
                (0.0, 0.0)
            };
            x = [0.7 * x[0] + 0.8 * x[1] - uk + w0, 0.1 * x[1] + 0.1 * uk + w1];
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::SimulationOverflow { step: k });
            }
        }
        Ok(out)
    }
}

pub fn simulate_lgssm(u: &[f64], seed: u64, noise_on: bool) -> Result<Trajectory> {
    Lgssm::default().simulate(u, seed, Noise::all(noise_on))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NarendraLi {
    pub measurement_std: f64,
}

impl Default for NarendraLi {
    fn default() -> Self {
        Self { measurement_std: 0.1 }
    }
}

impl NarendraLi {
    pub fn step(x: [f64; 2], u: f64) -> [f64; 2] {
        let [a, b] = x;
        [
            a / (1.0 + a * a) * b.sin(),
            b * b.cos() + a * (-(a * a + b * b) / 8.0).exp() + u.powi(3) / (1.0 + u * u + 0.5 * (a + b).cos()),
        ]
    }

    pub fn output(x: [f64; 2]) -> f64 {
        let [a, b] = x;
        a / (1.0 + 0.5 * b.sin()) + b / (1.0 + 0.5 * a.sin())
    }

    pub fn simulate(&self, u: &[f64], seed: u64, noise: Noise) -> Result<Trajectory> {
        check_input(u)?;
        let mut rng = Stream::new(seed);
        let mut x = [0.0, 0.0];
        let mut out = Trajectory::with_capacity(u.len());
        for (k, &uk) in u.iter().enumerate() {
            let clean = Self::output(x);
            let y = if noise.measurement {
                clean + self.measurement_std * rng.normal()
            } else {
                clean
            };
            out.states.push(x);
            out.y_clean.push(clean);
            out.y.push(y);
            x = Self::step(x, uk);
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::SimulationOverflow { step: k });
            }
        }
        Ok(out)
    }
}

pub fn simulate_narendra_li(u: &[f64], seed: u64, noise_on: bool) -> Result<Trajectory> {
    NarendraLi::default().simulate(u, seed, Noise::all(noise_on))
}

/// Wiener-Hammerstein surrogate: `v_k = 0.6 v_{k-1} + 0.4 u_k`, process noise
/// added before `f(v) = v - 0.6 max(v, 0)`, then `y_k = 0.5 y_{k-1} + 0.5 f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WhSurrogate {
    pub process_std: f64,
    pub measurement_std: f64,
}

impl Default for WhSurrogate {
    fn default() -> Self {
        Self {
            process_std: 0.1,
            measurement_std: 0.0,
        }
    }
}

impl WhSurrogate {
    pub fn nonlinearity(v: f64) -> f64 {
        v - 0.6 * v.max(0.0)
    }

    /// Per step: `w_k`, then the measurement noise.
    pub fn simulate(&self, u: &[f64], seed: u64, noise: Noise) -> Result<Trajectory> {
        check_input(u)?;
        let mut rng = Stream::new(seed);
        let (mut v, mut y) = (0.0, 0.0);
        let mut out = Trajectory::with_capacity(u.len());
        for (k, &uk) in u.iter().enumerate() {
            v = 0.6 * v + 0.4 * uk;
            let w = if noise.process {
                self.process_std * rng.normal()
            } else {
                0.0
            };
            y = 0.5 * y + 0.5 * Self::nonlinearity(v + w);
            if !(v.is_finite() && y.is_finite()) {
                return Err(Error::SimulationOverflow { step: k });
            }
            out.states.push([v, v + w]);
            out.y_clean.push(y);
            out.y.push(if noise.measurement && self.measurement_std > 0.0 {
                y + self.measurement_std * rng.normal()
            } else {
                y
            });
        }
        Ok(out)
    }
}

pub fn simulate_wh_surrogate(u: &[f64], seed: u64, noise_on: bool) -> Result<Trajectory> {
    WhSurrogate::default().simulate(u, seed, Noise::all(noise_on))
}
