//! Goodness-of-fit via the time-rescaling theorem.
//!
//! Under a correctly specified model the compensator increments between
//! consecutive same-stream events are i.i.d. Exp(1) per stream. This module
//! computes those residuals in O(N), tests them against Exp(1) with a
//! one-sample Kolmogorov–Smirnov test, tests serial independence with
//! Ljung–Box, and emits Q-Q plot data.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::hawkes::{compensator_increment, HawkesParams, IntensityState, MarkedEvent, Stream};

/// Per-stream time-rescaled residuals `V_k^i = Lambda^i(tau_k^i) - Lambda^i(tau_{k-1}^i)`.
#[derive(Debug, Clone)]
pub struct ResidualSeries {
    pub per_stream: [Vec<f64>; 2],
}

impl ResidualSeries {
    pub fn stream(&self, stream: Stream) -> &[f64] {
        &self.per_stream[stream.index()]
    }

    /// Both streams concatenated (A then B).
    pub fn pooled(&self) -> Vec<f64> {
        let mut all = self.per_stream[0].clone();
        all.extend_from_slice(&self.per_stream[1]);
        all
    }
}

/// Computes the residual series in one pass. Between consecutive events of
/// the merged sequence the compensator increment is closed-form, so the
/// total work is O(total events).
pub fn residuals(events: &[MarkedEvent], params: &HawkesParams) -> Result<ResidualSeries> {
    params.validate()?;
    let mut state = IntensityState::new();
    let mut pending = [0.0f64; 2];
    let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut prev = 0.0f64;
    for event in events {
        for stream in Stream::ALL {
            pending[stream.index()] += compensator_increment(prev, event.time, stream, &state, params)?;
        }
        let i = event.stream.index();
        out[i].push(pending[i]);
        pending[i] = 0.0;
        state.observe(event, params)?;
        prev = event.time;
    }
    Ok(ResidualSeries { per_stream: out })
}

/// One-sample Kolmogorov–Smirnov test against Exp(1). The p-value uses the
/// asymptotic Kolmogorov distribution (20-term alternating series).
pub fn ks_exp1(sample: &[f64]) -> Result<(f64, f64)> {
    if sample.is_empty() {
        return Err(Error::InsufficientData { required: 1, actual: 0 });
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut statistic = 0.0f64;
    for (k, &x) in sorted.iter().enumerate() {
        let cdf = 1.0 - (-x).exp();
        let upper = (k + 1) as f64 / n - cdf;
        let lower = cdf - k as f64 / n;
        statistic = statistic.max(upper).max(lower);
    }
    Ok((statistic, kolmogorov_sf(n.sqrt() * statistic)))
}

/// Survival function of the Kolmogorov distribution,
/// `P(sup |B(t)| > lambda) = 2 sum_{k>=1} (-1)^{k-1} e^{-2 k^2 lambda^2}`.
/// Below lambda = 1.18 the alternating series needs too many terms, so the
/// Jacobi-theta dual series for the CDF is used there instead (both are
/// 20-term evaluations of the same asymptotic law).
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let mut cdf = 0.0f64;
        for j in 1..=20u32 {
            let odd = (2 * j - 1) as f64;
            cdf += (-odd * odd * std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / lambda;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut p = 0.0f64;
    for k in 1..=20 {
        let term = 2.0 * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        if k % 2 == 1 {
            p += term;
        } else {
            p -= term;
        }
    }
    p.clamp(0.0, 1.0)
}

/// Ljung–Box portmanteau test for serial independence:
/// `Q = n (n + 2) sum_{k=1}^{h} r_k^2 / (n - k)` with a chi-square(h)
/// reference distribution.
pub fn ljung_box(sample: &[f64], lags: usize) -> Result<(f64, f64)> {
    if lags == 0 {
        return Err(Error::InvalidConfig("ljung_box needs lags >= 1".into()));
    }
    let n = sample.len();
    if n <= lags {
        return Err(Error::InsufficientData { required: lags, actual: n });
    }
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let variance: f64 = sample.iter().map(|&x| (x - mean).powi(2)).sum();
    if variance == 0.0 {
        // Degenerate constant sample: no serial structure measurable.
        return Ok((0.0, 1.0));
    }
    let mut q = 0.0f64;
    for k in 1..=lags {
        let mut autocov = 0.0f64;
        for t in k..n {
            autocov += (sample[t] - mean) * (sample[t - k] - mean);
        }
        let r = autocov / variance;
        q += r * r / (nf - k as f64);
    }
    q *= nf * (nf + 2.0);
    let chi = ChiSquared::new(lags as f64).expect("lags >= 1");
    Ok((q, 1.0 - chi.cdf(q)))
}

/// Order statistics vs Exp(1) quantiles at plotting positions `(k - 0.5)/n`.
pub fn qq_data(sample: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(k, x)| {
            let p = (k as f64 + 0.5) / n;
            (-(1.0 - p).ln(), x)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PassFlags {
    pub at_1pct: bool,
    pub at_2_5pct: bool,
    pub at_5pct: bool,
}

impl PassFlags {
    fn from_p(p: f64) -> Self {
        Self {
            at_1pct: p >= 0.01,
            at_2_5pct: p >= 0.025,
            at_5pct: p >= 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleGof {
    pub n: usize,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub ks_pass: PassFlags,
    /// Absent when the sample is too short for the requested lag count.
    pub lb_statistic: Option<f64>,
    pub lb_p_value: Option<f64>,
    pub lb_pass: Option<PassFlags>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GofReport {
    pub lags: usize,
    pub stream_a: SampleGof,
    pub stream_b: SampleGof,
    pub pooled: SampleGof,
}

fn sample_gof(sample: &[f64], lags: usize) -> Result<SampleGof> {
    let (ks_statistic, ks_p_value) = ks_exp1(sample)?;
    let lb = if sample.len() > lags {
        Some(ljung_box(sample, lags)?)
    } else {
        None
    };
    Ok(SampleGof {
        n: sample.len(),
        ks_statistic,
        ks_p_value,
        ks_pass: PassFlags::from_p(ks_p_value),
        lb_statistic: lb.map(|(q, _)| q),
        lb_p_value: lb.map(|(_, p)| p),
        lb_pass: lb.map(|(_, p)| PassFlags::from_p(p)),
    })
}

/// Full report: per-stream and pooled residual tests with pass flags at the
/// 1/2.5/5% levels.
pub fn gof_report(events: &[MarkedEvent], params: &HawkesParams, lags: usize) -> Result<GofReport> {
    let series = residuals(events, params)?;
    Ok(GofReport {
        lags,
        stream_a: sample_gof(series.stream(Stream::A), lags)?,
        stream_b: sample_gof(series.stream(Stream::B), lags)?,
        pooled: sample_gof(&series.pooled(), lags)?,
    })
}
