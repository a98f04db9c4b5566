//! Marked bivariate Hawkes model.
//!
//! Two mutually exciting streams `A` (ask-side trades-through) and `B`
//! (bid-side) with conditional ground intensities
//!
//! ```text
//! lambda_g^i(t) = mu^i(t) + sum_j alpha_ij * sum_{tau_k^j < t} e^{-beta_ij (t - tau_k^j)} g_j(v_k^j)
//! ```
//!
//! where the mark impact is the normalized power law
//! `g_j(v) = beta_j^{eta_j} v^{eta_j} / Gamma(1 + eta_j)`, which has unit
//! expectation when marks are Exp(beta_j). Baselines are piecewise-constant
//! over equal bins of `[0, T]`.
//!
//! The module provides O(N) recursive intensity/compensator evaluation, exact
//! log-likelihood relative to the unit-rate Poisson process, simulation by
//! thinning, maximum-likelihood fitting ([`fit::fit_mle`]) and the branching
//! stability diagnostic.

pub mod fit;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const PARAMS_SCHEMA_VERSION: u32 = 1;

/// Event stream label: `A` = ask side consumed, `B` = bid side consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stream {
    A,
    B,
}

impl Stream {
    pub const ALL: [Stream; 2] = [Stream::A, Stream::B];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Stream::A => 0,
            Stream::B => 1,
        }
    }
}

/// One point of the marked process: time in seconds from session open,
/// stream label, positive mark (volume).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkedEvent {
    pub time: f64,
    pub stream: Stream,
    pub mark: f64,
}

/// Full parameter set. `alpha[i][j]` excites stream `i` from events of
/// stream `j`; `decay[i][j]` is the matching exponential rate. Serialized
/// as versioned JSON (`"schema": 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HawkesParams {
    pub schema: u32,
    /// Session length T in seconds; baselines are binned over [0, T].
    pub horizon: f64,
    pub baseline_a: Vec<f64>,
    pub baseline_b: Vec<f64>,
    pub alpha: [[f64; 2]; 2],
    pub decay: [[f64; 2]; 2],
    pub mark_exponent: [f64; 2],
    pub mark_rate: [f64; 2],
}

pub const DEFAULT_BASELINE_BINS: usize = 14;

impl HawkesParams {
    /// Homogeneous-baseline constructor (single bin per stream).
    pub fn constant(
        mu: [f64; 2],
        alpha: [[f64; 2]; 2],
        decay: [[f64; 2]; 2],
        mark_exponent: [f64; 2],
        mark_rate: [f64; 2],
        horizon: f64,
    ) -> Self {
        Self {
            schema: PARAMS_SCHEMA_VERSION,
            horizon,
            baseline_a: vec![mu[0]],
            baseline_b: vec![mu[1]],
            alpha,
            decay,
            mark_exponent,
            mark_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("hawkes params: {what}")));
        if self.schema != PARAMS_SCHEMA_VERSION {
            return bad(&format!("unsupported schema {}", self.schema));
        }
        if !(self.horizon > 0.0) {
            return bad("horizon must be > 0");
        }
        if self.baseline_a.is_empty() || self.baseline_b.is_empty() {
            return bad("baselines need at least one bin");
        }
        for mu in self.baseline_a.iter().chain(&self.baseline_b) {
            if !(*mu >= 0.0) || !mu.is_finite() {
                return bad("baseline rates must be finite and >= 0");
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                if !(self.alpha[i][j] >= 0.0) || !self.alpha[i][j].is_finite() {
                    return bad("alpha must be finite and >= 0");
                }
                if !(self.decay[i][j] > 0.0) || !self.decay[i][j].is_finite() {
                    return bad("decay must be finite and > 0");
                }
            }
        }
        for j in 0..2 {
            if !(self.mark_exponent[j] >= 0.0) || !self.mark_exponent[j].is_finite() {
                return bad("mark exponents must be finite and >= 0");
            }
            if !(self.mark_rate[j] > 0.0) || !self.mark_rate[j].is_finite() {
                return bad("mark rates must be finite and > 0");
            }
        }
        Ok(())
    }

    fn baseline_bins(&self, stream: Stream) -> &[f64] {
        match stream {
            Stream::A => &self.baseline_a,
            Stream::B => &self.baseline_b,
        }
    }

    /// Baseline rate at time `t`; times beyond the horizon clamp to the last
    /// bin.
    pub fn baseline(&self, stream: Stream, t: f64) -> f64 {
        let bins = self.baseline_bins(stream);
        let width = self.horizon / bins.len() as f64;
        let idx = ((t / width).floor() as isize).clamp(0, bins.len() as isize - 1) as usize;
        bins[idx]
    }

    /// `\int_{t0}^{t1} mu^i(s) ds` over the piecewise-constant baseline.
    pub fn baseline_integral(&self, stream: Stream, t0: f64, t1: f64) -> f64 {
        let bins = self.baseline_bins(stream);
        let width = self.horizon / bins.len() as f64;
        let bin_end_of = |idx: usize| {
            if idx + 1 == bins.len() {
                f64::INFINITY
            } else {
                (idx + 1) as f64 * width
            }
        };
        let mut total = 0.0;
        let mut left = t0;
        while left < t1 {
            let mut idx = ((left / width).floor() as isize).clamp(0, bins.len() as isize - 1) as usize;
            // `left / width` can round just below an exact boundary, putting
            // `left` at the end of bin `idx`; step to the bin that actually
            // starts here or the walk would never advance.
            while bin_end_of(idx) <= left {
                idx += 1;
            }
            let right = t1.min(bin_end_of(idx));
            total += bins[idx] * (right - left);
            left = right;
        }
        total
    }

    /// Next baseline-bin boundary strictly after `t`, across both streams
    /// (used to refresh thinning bounds).
    fn next_bin_boundary(&self, t: f64) -> f64 {
        let mut next = f64::INFINITY;
        for bins in [&self.baseline_a, &self.baseline_b] {
            let width = self.horizon / bins.len() as f64;
            let mut idx = (t / width).floor() as usize + 1;
            // Rounding in `t / width` can yield a boundary at or before `t`.
            while (idx as f64) * width <= t {
                idx += 1;
            }
            if idx < bins.len() {
                next = next.min(idx as f64 * width);
            }
        }
        next
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("params JSON: {e}")))?;
        params.validate()?;
        Ok(params)
    }
}

/// Mark impact `g_j(v) = beta_j^eta v^eta / Gamma(1 + eta)`.
pub fn impact(v: f64, stream: Stream, params: &HawkesParams) -> f64 {
    let j = stream.index();
    let eta = params.mark_exponent[j];
    if eta == 0.0 {
        return 1.0;
    }
    let beta = params.mark_rate[j];
    (eta * (beta.ln() + v.ln()) - ln_gamma(1.0 + eta)).exp()
}

/// Branching-matrix spectral radius and the stability flag (radius < 1).
/// For the 2x2 non-negative matrix with entries `a = alpha_AA/beta_AA` etc.
/// the radius is `(a + d + sqrt((a-d)^2 + 4bc)) / 2`.
pub fn stability(params: &HawkesParams) -> (f64, bool) {
    let ratio = |i: usize, j: usize| params.alpha[i][j] / params.decay[i][j];
    let (a, b, c, d) = (ratio(0, 0), ratio(0, 1), ratio(1, 0), ratio(1, 1));
    let radius = 0.5 * (a + d + ((a - d).powi(2) + 4.0 * b * c).sqrt());
    (radius, radius.is_finite() && radius < 1.0)
}

/// Decayed excitation accumulators: `accum[i][j]` equals
/// `sum_{tau_k^j <= time} e^{-beta_ij (time - tau_k^j)} g_j(v_k^j)`.
/// Feeding events in time order keeps every query O(1).
#[derive(Debug, Clone)]
pub struct IntensityState {
    accum: [[f64; 2]; 2],
    time: f64,
}

impl Default for IntensityState {
    fn default() -> Self {
        Self::new()
    }
}

impl IntensityState {
    pub fn new() -> Self {
        Self {
            accum: [[0.0; 2]; 2],
            time: 0.0,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn accumulator(&self, i: Stream, j: Stream) -> f64 {
        self.accum[i.index()][j.index()]
    }

    /// Folds one event into the state. Events must arrive in time order.
    pub fn observe(&mut self, event: &MarkedEvent, params: &HawkesParams) -> Result<()> {
        if event.time < self.time {
            return Err(Error::StaleState {
                state_time: self.time,
                query_time: event.time,
            });
        }
        let dt = event.time - self.time;
        for i in 0..2 {
            for j in 0..2 {
                self.accum[i][j] *= (-params.decay[i][j] * dt).exp();
            }
        }
        let g = impact(event.mark, event.stream, params);
        let j = event.stream.index();
        for i in 0..2 {
            self.accum[i][j] += g;
        }
        self.time = event.time;
        Ok(())
    }
}

/// `lambda_g^i(t)` given a state current as of some `s <= t` with no events
/// in `(s, t]`. Events folded at exactly `s` are part of the strict past.
pub fn ground_intensity(t: f64, stream: Stream, state: &IntensityState, params: &HawkesParams) -> Result<f64> {
    if t < state.time() {
        return Err(Error::StaleState {
            state_time: state.time(),
            query_time: t,
        });
    }
    let i = stream.index();
    let dt = t - state.time();
    let mut rate = params.baseline(stream, t);
    for j in 0..2 {
        rate += params.alpha[i][j] * (-params.decay[i][j] * dt).exp() * state.accum[i][j];
    }
    Ok(rate)
}

/// `\int_{t0}^{t1} lambda_g^i` in closed form, valid when no events fall in
/// `(t0, t1]` and the state is current as of some `s <= t0`.
pub fn compensator_increment(
    t0: f64,
    t1: f64,
    stream: Stream,
    state: &IntensityState,
    params: &HawkesParams,
) -> Result<f64> {
    if t0 < state.time() || t1 < t0 {
        return Err(Error::StaleState {
            state_time: state.time(),
            query_time: t0.min(t1),
        });
    }
    let i = stream.index();
    let mut total = params.baseline_integral(stream, t0, t1);
    for j in 0..2 {
        let beta = params.decay[i][j];
        let weight = (params.alpha[i][j] / beta) * state.accum[i][j];
        total += weight * ((-beta * (t0 - state.time())).exp() - (-beta * (t1 - state.time())).exp());
    }
    Ok(total)
}

/// Exact log-likelihood of a sorted event sequence on `[0, T]`,
/// `T = params.horizon`, relative to the unit-rate Poisson process:
///
/// ```text
/// l = T - sum_i Lambda_g^i(T) + sum_k ln lambda_g^{i_k}(tau_k) + sum_k ln f_{i_k}(v_k)
/// ```
///
/// with exponential mark densities `f_i(v) = beta_i e^{-beta_i v}`. Runs in
/// O(N) via the decayed accumulators.
pub fn log_likelihood(events: &[MarkedEvent], params: &HawkesParams) -> Result<f64> {
    params.validate()?;
    let t_end = params.horizon;
    let mut state = IntensityState::new();
    let mut ll = t_end;

    // Baseline part of the compensator.
    for stream in Stream::ALL {
        ll -= params.baseline_integral(stream, 0.0, t_end);
    }

    for event in events {
        let rate = ground_intensity(event.time, event.stream, &state, params)?;
        if rate <= 0.0 {
            return Err(Error::NonPositiveIntensity { time: event.time });
        }
        ll += rate.ln();

        // Mark density term.
        let beta_mark = params.mark_rate[event.stream.index()];
        ll += beta_mark.ln() - beta_mark * event.mark;

        // This event's total contribution to sum_i Lambda^i(T): the kernel
        // integral over (tau, T] for both excited streams.
        let g = impact(event.mark, event.stream, params);
        let j = event.stream.index();
        for i in 0..2 {
            let beta = params.decay[i][j];
            ll -= (params.alpha[i][j] / beta) * g * (1.0 - (-beta * (t_end - event.time)).exp());
        }

        state.observe(event, params)?;
    }
    Ok(ll)
}

/// Total compensators `Lambda_g^i(T)` per stream, O(N).
pub fn total_compensator(events: &[MarkedEvent], params: &HawkesParams) -> [f64; 2] {
    let t_end = params.horizon;
    let mut totals = [
        params.baseline_integral(Stream::A, 0.0, t_end),
        params.baseline_integral(Stream::B, 0.0, t_end),
    ];
    for event in events {
        let g = impact(event.mark, event.stream, params);
        let j = event.stream.index();
        for (i, total) in totals.iter_mut().enumerate() {
            let beta = params.decay[i][j];
            *total += (params.alpha[i][j] / beta) * g * (1.0 - (-beta * (t_end - event.time)).exp());
        }
    }
    totals
}

/// Simulates the model on `[0, horizon]` by thinning. The dominating rate is
/// refreshed at every event and at baseline bin boundaries, where the total
/// intensity is non-increasing. Deterministic per seed; refuses unstable
/// parameter sets.
pub fn simulate(params: &HawkesParams, horizon: f64, seed: u64) -> Result<Vec<MarkedEvent>> {
    params.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidConfig("simulation horizon must be > 0".into()));
    }
    let (radius, stable) = stability(params);
    if !stable {
        return Err(Error::UnstableParams { radius });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mark_dists = [
        Exp::new(params.mark_rate[0]).expect("validated rate"),
        Exp::new(params.mark_rate[1]).expect("validated rate"),
    ];
    let mut state = IntensityState::new();
    let mut events: Vec<MarkedEvent> = Vec::new();
    let mut t = 0.0f64;

    while t < horizon {
        // Within (t, boundary] both baselines are constant and excitation
        // decays, so the total intensity just after t dominates.
        let boundary = params.next_bin_boundary(t).min(horizon);
        let bound = ground_intensity(t, Stream::A, &state, params)?
            + ground_intensity(t, Stream::B, &state, params)?;
        if bound <= 0.0 {
            t = boundary;
            if t >= horizon {
                break;
            }
            continue;
        }
        let gap: f64 = Exp::new(bound).expect("positive bound").sample(&mut rng);
        let candidate = t + gap;
        if candidate > boundary {
            t = boundary;
            continue;
        }
        let rate_a = ground_intensity(candidate, Stream::A, &state, params)?;
        let rate_b = ground_intensity(candidate, Stream::B, &state, params)?;
        let u: f64 = rng.gen_range(0.0..bound);
        t = candidate;
        let stream = if u < rate_a {
            Stream::A
        } else if u < rate_a + rate_b {
            Stream::B
        } else {
            continue; // thinned
        };
        let mark = mark_dists[stream.index()].sample(&mut rng).max(f64::MIN_POSITIVE);
        let event = MarkedEvent { time: t, stream, mark };
        state.observe(&event, params)?;
        events.push(event);
    }
    Ok(events)
}
