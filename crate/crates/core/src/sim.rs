//! Data-generating processes for the simulation studies.
//!
//! Random numbers come from SplitMix64, a counter-based 64-bit generator
//! (the state is a counter advanced by a fixed odd constant and each output
//! is a bijective mix of it). Normal variates use the Marsaglia polar
//! method and both variates of each accepted pair are consumed in order.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::panel::DesignSplit;

/// AR(1) persistence of every simulated unit.
pub const AR_COEF: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    counter: u64,
    spare_normal: Option<f64>,
}

impl SplitMix64 {
    const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

    pub fn new(seed: u64) -> Self {
        SplitMix64 { counter: seed, spare_normal: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(Self::GAMMA);
        let mut z = self.counter;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..bound` by rejection, `bound > 0`.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// Standard normal variate.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = libm::sqrt(-2.0 * libm::log(s) / s);
                self.spare_normal = Some(v * f);
                return u * f;
            }
        }
    }
}

/// Long-run mean `c_i = (i mod 10) + 1` of unit `i`.
pub fn unit_intercept(i: usize) -> f64 {
    ((i % 10) + 1) as f64
}

/// `t_total x n_units` panel of independent AR(1) chains
/// `y_t = 0.1 c_i + 0.9 y_{t-1} + z_t`, `z_t ~ N(0, 1)`. Each chain starts at
/// its long-run mean and is advanced `burn_in` steps before recording.
pub fn gen_ar1_panel(n_units: usize, t_total: usize, seed: u64, burn_in: usize) -> Matrix {
    let mut rng = SplitMix64::new(seed);
    ar1_panel(&mut rng, n_units, t_total, burn_in, 1.0)
}

/// [`gen_ar1_panel`] with innovations scaled by `innovation_sd`; zero gives
/// the deterministic fixed point.
pub fn gen_ar1_panel_scaled(n_units: usize, t_total: usize, seed: u64, burn_in: usize, innovation_sd: f64) -> Matrix {
    let mut rng = SplitMix64::new(seed);
    ar1_panel(&mut rng, n_units, t_total, burn_in, innovation_sd)
}

fn ar1_panel(rng: &mut SplitMix64, n_units: usize, t_total: usize, burn_in: usize, sd: f64) -> Matrix {
    let mut out = Matrix::zeros(t_total, n_units);
    for i in 0..n_units {
        let c = unit_intercept(i);
        let drift = (1.0 - AR_COEF) * c;
        let mut y = c;
        for _ in 0..burn_in {
            y = drift + AR_COEF * y + sd * rng.normal();
        }
        for t in 0..t_total {
            y = drift + AR_COEF * y + sd * rng.normal();
            out[(t, i)] = y;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Setting {
    /// Treated paths are independent AR(1) chains like the donors.
    Independent = 1,
    /// Treated paths are `X Theta + E` for a sparse column-stochastic `Theta`.
    SparseLinear = 2,
}

impl Setting {
    pub fn from_number(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Setting::Independent),
            2 => Ok(Setting::SparseLinear),
            _ => Err(Error::arg("setting must be 1 or 2")),
        }
    }

    pub fn number(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub setting: Setting,
    pub m: usize,
    pub n: usize,
    pub t0: usize,
    pub t1: usize,
    /// Nonzeros of the true weight matrix (sparse-linear setting).
    pub s: usize,
    pub noise_sd: f64,
    /// Effect added to treated outcomes after treatment.
    pub tau: f64,
    pub replications: usize,
    pub seed: u64,
    pub burn_in: usize,
}

impl SimConfig {
    pub fn new(setting: Setting, m: usize, seed: u64) -> Self {
        SimConfig {
            setting,
            m,
            n: 400,
            t0: 100,
            t1: 10,
            s: 1000,
            noise_sd: 0.5,
            tau: 1.0,
            replications: 50,
            seed,
            burn_in: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.t0 == 0 {
            return Err(Error::arg("m, n and t0 must be at least 1"));
        }
        if self.replications == 0 {
            return Err(Error::arg("replications must be at least 1"));
        }
        if !(self.noise_sd >= 0.0) || !self.tau.is_finite() {
            return Err(Error::arg("noise_sd must be nonnegative and tau finite"));
        }
        if self.setting == Setting::SparseLinear {
            if self.s < self.m {
                return Err(Error::arg(alloc::format!(
                    "s = {} cannot give each of the m = {} columns a nonzero",
                    self.s, self.m
                )));
            }
            if self.s > self.n * self.m {
                return Err(Error::arg("s exceeds the number of weight cells n * m"));
            }
        }
        Ok(())
    }

    /// Seed of replication `r`: the base seed xor the replication index.
    pub fn replication_seed(&self, r: usize) -> u64 {
        self.seed ^ r as u64
    }
}

/// One simulated data set with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDraw {
    pub split: DesignSplit,
    /// Untreated post-period outcomes of the treated units.
    pub true_y0_post: Matrix,
    pub true_delta: f64,
    /// True weights in the sparse-linear setting.
    pub theta: Option<Matrix>,
}

/// Draws one data set from `cfg.seed`.
pub fn gen_setting(cfg: &SimConfig) -> Result<SimDraw> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed);
    let total = cfg.t0 + cfg.t1;
    let (x_all, y0_all, theta) = match cfg.setting {
        Setting::Independent => {
            let all = ar1_panel(&mut rng, cfg.m + cfg.n, total, cfg.burn_in, 1.0);
            let treated: Vec<usize> = (0..cfg.m).collect();
            let controls: Vec<usize> = (cfg.m..cfg.m + cfg.n).collect();
            (all.select_cols(&controls), all.select_cols(&treated), None)
        }
        Setting::SparseLinear => {
            let x = ar1_panel(&mut rng, cfg.n, total, cfg.burn_in, 1.0);
            let theta = sparse_stochastic(&mut rng, cfg.n, cfg.m, cfg.s);
            let mut y = x.matmul(&theta)?;
            for v in y.as_mut_slice() {
                *v += cfg.noise_sd * rng.normal();
            }
            (x, y, Some(theta))
        }
    };
    let x_pre = x_all.row_range(0, cfg.t0);
    let x_post = x_all.row_range(cfg.t0, total);
    let y_pre = y0_all.row_range(0, cfg.t0);
    let true_y0_post = y0_all.row_range(cfg.t0, total);
    let y_post = true_y0_post.map(|v| v + cfg.tau);
    Ok(SimDraw {
        split: DesignSplit::new(y_pre, x_pre, y_post, x_post)?,
        true_y0_post,
        true_delta: cfg.tau,
        theta,
    })
}

/// `n x m` matrix with exactly `s` nonzeros, at least one per column, values
/// Uniform(0, 1) rescaled so each column sums to one.
fn sparse_stochastic(rng: &mut SplitMix64, n: usize, m: usize, s: usize) -> Matrix {
    let mut used = vec![false; n * m];
    for j in 0..m {
        let i = rng.below(n as u64) as usize;
        used[i * m + j] = true;
    }
    let mut remaining = s - m;
    while remaining > 0 {
        let cell = rng.below((n * m) as u64) as usize;
        if !used[cell] {
            used[cell] = true;
            remaining -= 1;
        }
    }
    let mut theta = Matrix::zeros(n, m);
    for (cell, v) in theta.as_mut_slice().iter_mut().enumerate() {
        if used[cell] {
            *v = rng.uniform();
        }
    }
    let sums = theta.col_sums();
    for i in 0..n {
        for (v, s) in theta.row_mut(i).iter_mut().zip(&sums) {
            *v /= s;
        }
    }
    theta
}
