//! Speedup and weak-scaling models for Parareal.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::parareal::{PararealTrace, SerialRun};

/// Per-subinterval coarse and fine costs γ^c_n, γ^f_n.
#[derive(Debug, Clone, PartialEq)]
pub struct CostProfile {
    pub gamma_c: Vec<f64>,
    pub gamma_f: Vec<f64>,
}

impl CostProfile {
    pub fn new(gamma_c: Vec<f64>, gamma_f: Vec<f64>) -> Result<Self> {
        if gamma_c.len() != gamma_f.len() || gamma_c.is_empty() {
            return Err(Error::InvalidInput(format!(
                "profile lengths {} and {} must be equal and non-zero",
                gamma_c.len(),
                gamma_f.len()
            )));
        }
        if gamma_c.iter().chain(&gamma_f).any(|&g| !(g >= 0.0 && g.is_finite())) {
            return Err(Error::InvalidInput("costs must be non-negative and finite".into()));
        }
        Ok(Self { gamma_c, gamma_f })
    }

    /// `γ^c_n = N_c τ^c`, `γ^f_n = N_f τ^f` for every subinterval.
    pub fn constant(n_sub: usize, coarse: f64, fine: f64) -> Result<Self> {
        Self::new(vec![coarse; n_sub], vec![fine; n_sub])
    }

    pub fn len(&self) -> usize {
        self.gamma_c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma_c.is_empty()
    }

    pub fn total_coarse(&self) -> f64 {
        self.gamma_c.iter().sum()
    }

    pub fn total_fine(&self) -> f64 {
        self.gamma_f.iter().sum()
    }

    /// γ^x = max_n (γ^c_n + γ^f_n).
    pub fn gamma_x(&self) -> f64 {
        self.gamma_c
            .iter()
            .zip(&self.gamma_f)
            .map(|(c, f)| c + f)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Simple,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupEstimate {
    pub model: Model,
    pub n_sub: usize,
    pub n_iter: usize,
    pub value: f64,
    pub total_coarse: f64,
    pub total_fine: f64,
    pub gamma_x: f64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    crate::error::ensure_positive(name, v)
}

fn at_least_one(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::InvalidInput(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

/// `1 / ((1 + N_i/N_t)(N_c/N_f)(τ^c/τ^f) + N_i/N_t)`.
///
/// Ratios may be zero (free coarse propagator).
pub fn speedup_simple(n_iter: usize, n_sub: usize, nc_over_nf: f64, tauc_over_tauf: f64) -> Result<f64> {
    at_least_one("n_iter", n_iter)?;
    at_least_one("n_sub", n_sub)?;
    for (name, v) in [("nc_over_nf", nc_over_nf), ("tauc_over_tauf", tauc_over_tauf)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!("{name} must be non-negative, got {v}")));
        }
    }
    let q = n_iter as f64 / n_sub as f64;
    Ok(1.0 / ((1.0 + q) * nc_over_nf * tauc_over_tauf + q))
}

/// `Γ_f / (Γ_c + N_i γ^x)`.
pub fn speedup_general(profile: &CostProfile, n_iter: usize) -> Result<SpeedupEstimate> {
    at_least_one("n_iter", n_iter)?;
    let total_fine = profile.total_fine();
    if total_fine <= 0.0 {
        return Err(Error::InvalidInput("profile has no fine cost".into()));
    }
    let total_coarse = profile.total_coarse();
    let gamma_x = profile.gamma_x();
    Ok(SpeedupEstimate {
        model: Model::General,
        n_sub: profile.len(),
        n_iter,
        value: total_fine / (total_coarse + n_iter as f64 * gamma_x),
        total_coarse,
        total_fine,
        gamma_x,
    })
}

/// γ^c_n = 1 and γ^f_n = 10, except γ^f_2 = (1 − b)·10 and γ^f_3 = (1 + b)·10.
pub fn imbalance_scenario(n_sub: usize, b: f64) -> Result<CostProfile> {
    if n_sub < 4 {
        return Err(Error::InvalidInput(format!("imbalance scenario needs n_sub ≥ 4, got {n_sub}")));
    }
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::InvalidInput(format!("imbalance b must be in [0, 1], got {b}")));
    }
    let mut fine = vec![10.0; n_sub];
    fine[2] = (1.0 - b) * 10.0;
    fine[3] = (1.0 + b) * 10.0;
    CostProfile::new(vec![1.0; n_sub], fine)
}

/// `(N_t σ + N_i(1 + σ)) / (2 N_t σ + N_i(1 + σ))`.
pub fn weak_scaling_efficiency(n_sub: usize, n_iter: usize, sigma: f64) -> Result<f64> {
    at_least_one("n_sub", n_sub)?;
    at_least_one("n_iter", n_iter)?;
    positive("sigma", sigma)?;
    let nt = n_sub as f64;
    let ni = n_iter as f64;
    Ok((nt * sigma + ni * (1.0 + sigma)) / (2.0 * nt * sigma + ni * (1.0 + sigma)))
}

/// Default ratio below which measured speedup is flagged.
pub const DEFAULT_FLAG_RATIO: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    /// Serial fine cost Γ_f over the Parareal wall time.
    pub measured: f64,
    pub predicted: SpeedupEstimate,
    /// `measured / predicted`.
    pub ratio: f64,
    /// Set when the ratio falls below the threshold.
    pub flagged: bool,
    pub parareal_seconds: f64,
    /// Pipelined replay of the same profile; never above the lockstep time.
    pub pipelined_seconds: f64,
}

/// Compares a run with the general model built from γ^c_n (initial coarse
/// sweep) and γ^f_n (serial fine run). With `simulated`, the Parareal wall
/// time is the lockstep schedule clocked with that profile; otherwise the
/// measured wall time is used. The event-driven pipelined replay is
/// reported alongside either way.
pub fn validate_model(
    trace: &PararealTrace,
    serial: &SerialRun,
    simulated: bool,
    flag_ratio: f64,
) -> Result<ModelReport> {
    if serial.costs.len() != trace.config.n_sub {
        return Err(Error::MissingCost(format!(
            "serial run has {} subintervals, trace has {}",
            serial.costs.len(),
            trace.config.n_sub
        )));
    }
    let coarse = trace.profile()?.gamma_c;
    let profile = CostProfile::new(coarse, serial.subinterval_seconds())?;
    let n_iter = trace.iterations();
    let predicted = speedup_general(&profile, n_iter.max(1))?;
    let parareal_seconds = if simulated {
        trace.lockstep_wall(&profile)?
    } else {
        trace.wall_seconds
    };
    if parareal_seconds <= 0.0 {
        return Err(Error::MissingCost("Parareal wall time is zero".into()));
    }
    let pipelined_seconds = trace.simulate_wall(&profile)?;
    let measured = serial.total_seconds() / parareal_seconds;
    let ratio = measured / predicted.value;
    Ok(ModelReport {
        measured,
        predicted,
        ratio,
        flagged: ratio < flag_ratio,
        parareal_seconds,
        pipelined_seconds,
    })
}

pub const MODEL_CURVE_HEADER: &str = "n_sub,b,n_iter,speedup_ideal,speedup_imbalanced";

/// Ideal and imbalanced speedup for every `n_sub` and `b`.
pub fn model_curves(n_subs: &[usize], bs: &[f64], n_iter: usize) -> Result<String> {
    let mut out = String::new();
    for &b in bs {
        for &n in n_subs {
            let ideal = speedup_general(&imbalance_scenario(n, 0.0)?, n_iter)?.value;
            let imbalanced = speedup_general(&imbalance_scenario(n, b)?, n_iter)?.value;
            let _ = writeln!(out, "{n},{b},{n_iter},{ideal:.15e},{imbalanced:.15e}");
        }
    }
    Ok(out)
}

pub const EFFICIENCY_HEADER: &str = "n_sub,n_iter,sigma,efficiency";

pub fn efficiency_table(n_subs: &[usize], n_iters: &[usize], sigmas: &[f64]) -> Result<String> {
    let mut out = String::new();
    for &s in sigmas {
        for &k in n_iters {
            for &n in n_subs {
                let e = weak_scaling_efficiency(n, k, s)?;
                let _ = writeln!(out, "{n},{k},{s},{e:.15e}");
            }
        }
    }
    Ok(out)
}
