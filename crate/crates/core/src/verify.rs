//! Empirical validation machinery: the ε-shift constructions that separate
//! simultaneous jumps, and Monte-Carlo oracles for the run-length formulas.
//!
//! For `D` streams with pooled ordered arrivals (the origin `tau_0 = 0`
//! included), the forward shift moves the k-th arrival of stream `i` by
//! `(i/D) * eps * (minimum pairwise gap among the distinct ordered arrivals
//! up to that point)`; the backward shift subtracts the same amount with a
//! floor at 0. Shifts are strictly ordered across streams, so simultaneous
//! arrivals come apart.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::cusum::{CusumConfig, Detector};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ShiftedStreams {
    pub streams: Vec<Vec<f64>>,
    /// Set when a shifted time overtakes (forward) or falls behind
    /// (backward) a neighbouring original arrival of the same stream — the
    /// event whose probability vanishes as eps -> 0.
    pub collision: bool,
}

/// Minimum consecutive gap among the distinct values of
/// `{0} ∪ {pooled arrivals <= each time}`, exposed as a lookup.
struct GapTable {
    times: Vec<f64>,
    prefix_min_gap: Vec<f64>,
}

impl GapTable {
    fn new(streams: &[Vec<f64>]) -> Self {
        let mut times: Vec<f64> = std::iter::once(0.0)
            .chain(streams.iter().flatten().copied())
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        let mut prefix_min_gap = Vec::with_capacity(times.len());
        let mut current = f64::INFINITY;
        for (idx, &t) in times.iter().enumerate() {
            if idx > 0 {
                current = current.min(t - times[idx - 1]);
            }
            prefix_min_gap.push(current);
        }
        Self { times, prefix_min_gap }
    }

    fn min_gap_up_to(&self, t: f64) -> f64 {
        match self.times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
            Ok(idx) => self.prefix_min_gap[idx],
            Err(idx) => self.prefix_min_gap[idx.saturating_sub(1)],
        }
    }
}

fn shift(streams: &[Vec<f64>], eps: f64, forward: bool) -> ShiftedStreams {
    let gaps = GapTable::new(streams);
    let d = streams.len() as f64;
    let mut collision = false;
    let shifted: Vec<Vec<f64>> = streams
        .iter()
        .enumerate()
        .map(|(idx, arrivals)| {
            let weight = (idx + 1) as f64 / d;
            arrivals
                .iter()
                .enumerate()
                .map(|(k, &tau)| {
                    let gap = gaps.min_gap_up_to(tau);
                    let magnitude = if gap.is_finite() { weight * eps * gap } else { 0.0 };
                    if forward {
                        let moved = tau + magnitude;
                        if let Some(&next) = arrivals.get(k + 1) {
                            if moved >= next {
                                collision = true;
                            }
                        }
                        moved
                    } else {
                        let moved = (tau - magnitude).max(0.0);
                        if k > 0 && moved <= arrivals[k - 1] {
                            collision = true;
                        }
                        moved
                    }
                })
                .collect()
        })
        .collect();
    ShiftedStreams { streams: shifted, collision }
}

pub fn shift_forward(streams: &[Vec<f64>], eps: f64) -> ShiftedStreams {
    shift(streams, eps, true)
}

pub fn shift_backward(streams: &[Vec<f64>], eps: f64) -> ShiftedStreams {
    shift(streams, eps, false)
}

fn per_rep_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Monte-Carlo average run length: simulates homogeneous Poisson input with
/// rate `lambda` (unit jumps), runs the detector matching `rho` against the
/// exact constant-rate compensator, and averages the cumulative event count
/// at the first alarm. Deterministic per `(seed, rep)` pair; replications
/// run in parallel. Returns (mean, standard error).
pub fn mc_arl(rho: f64, m: f64, lambda: f64, reps: usize, seed: u64) -> Result<(f64, f64)> {
    if reps == 0 {
        return Err(Error::InvalidConfig("mc_arl needs reps >= 1".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig("lambda must be > 0".into()));
    }
    let config = CusumConfig::new(rho, m, 1)?;
    let counts: Result<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<f64> {
            let mut rng = per_rep_rng(seed, rep as u64);
            let gap_dist = Exp::new(lambda).expect("positive rate");
            let mut detector = Detector::new(config)?;
            let mut t = 0.0f64;
            loop {
                t += gap_dist.sample(&mut rng);
                let fired = detector.advance_linear(t, lambda)?;
                if let Some(alarm) = fired.first() {
                    return Ok(alarm.event_count as f64);
                }
                if let Some(alarm) = detector.jump(1)? {
                    return Ok(alarm.event_count as f64);
                }
            }
        })
        .collect();
    let counts = counts?;
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let variance = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, (variance / n).sqrt()))
}

/// Reflected statistics (U~, U^) of a unit-jump point sequence evaluated at
/// checkpoints, against a constant-rate compensator and without any alarm
/// threshold.
pub fn reflected_at_checkpoints(
    points: &[f64],
    rho_down: f64,
    rho_up: f64,
    comp_rate: f64,
    checkpoints: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let unbounded = f64::MAX;
    let mut down = Detector::new(CusumConfig::new(rho_down, unbounded, 1)?)?;
    let mut up = Detector::new(CusumConfig::new(rho_up, unbounded, 1)?)?;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut idx = 0usize;
    for &checkpoint in checkpoints {
        while idx < points.len() && points[idx] <= checkpoint {
            let t = points[idx];
            down.advance_linear(t, comp_rate)?;
            up.advance_linear(t, comp_rate)?;
            down.jump(1)?;
            up.jump(1)?;
            idx += 1;
        }
        down.advance_linear(checkpoint, comp_rate)?;
        up.advance_linear(checkpoint, comp_rate)?;
        out.push((down.reflected(), up.reflected()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct EpsilonPoint {
    pub eps: f64,
    pub mean_gap_down: f64,
    pub se_down: f64,
    pub mean_gap_up: f64,
    pub se_up: f64,
    pub collision_rate: f64,
}

#[derive(Debug, Clone)]
pub struct EpsilonReport {
    pub points: Vec<EpsilonPoint>,
    /// Gaps non-increasing along the grid within 2 standard errors.
    pub decreasing: bool,
    /// Gap at the smallest eps below `tol`.
    pub final_below_tol: bool,
    pub tol: f64,
}

/// Monte-Carlo check that the reflected processes of the eps-shifted streams
/// converge to the unshifted ones as eps decreases. Input paths are `d`
/// streams driven by a pooled Poisson clock of rate `lambda` in which half
/// the arrivals hit all streams simultaneously (exercising the simultaneous
/// jumps the shift construction exists for). Gaps `|U~^eps - U~|` and the
/// `U^` analogue are averaged over decile checkpoints of `[0, horizon]`.
#[allow(clippy::too_many_arguments)]
pub fn check_reflected_convergence(
    rho_down: f64,
    rho_up: f64,
    lambda: f64,
    horizon: f64,
    d: usize,
    eps_grid: &[f64],
    paths: usize,
    seed: u64,
    tol: f64,
) -> Result<EpsilonReport> {
    if eps_grid.is_empty() || paths == 0 || d == 0 || !(horizon > 0.0) {
        return Err(Error::InvalidConfig("empty epsilon grid, paths, streams or horizon".into()));
    }
    for pair in eps_grid.windows(2) {
        if pair[1] >= pair[0] {
            return Err(Error::InvalidConfig("epsilon grid must be strictly decreasing".into()));
        }
    }
    let checkpoints: Vec<f64> = (1..=10).map(|k| horizon * k as f64 / 10.0).collect();
    // Arrival intensity of the pooled count process: half the clock ticks
    // carry d simultaneous jumps, half carry one.
    let comp_rate = lambda * (d as f64 + 1.0) / 2.0;

    struct PathGaps {
        down: Vec<f64>,
        up: Vec<f64>,
        collisions: Vec<f64>,
    }

    let per_path: Result<Vec<PathGaps>> = (0..paths)
        .into_par_iter()
        .map(|path| -> Result<PathGaps> {
            let mut rng = per_rep_rng(seed, path as u64);
            let gap_dist = Exp::new(lambda).expect("positive rate");
            let mut streams: Vec<Vec<f64>> = vec![Vec::new(); d];
            let mut t = 0.0f64;
            loop {
                t += gap_dist.sample(&mut rng);
                if t >= horizon {
                    break;
                }
                if rng.gen_bool(0.5) {
                    for stream in streams.iter_mut() {
                        stream.push(t);
                    }
                } else {
                    streams[rng.gen_range(0..d)].push(t);
                }
            }
            let mut pooled: Vec<f64> = streams.iter().flatten().copied().collect();
            pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let base = reflected_at_checkpoints(&pooled, rho_down, rho_up, comp_rate, &checkpoints)?;

            let mut gaps = PathGaps {
                down: Vec::with_capacity(eps_grid.len()),
                up: Vec::with_capacity(eps_grid.len()),
                collisions: Vec::with_capacity(eps_grid.len()),
            };
            for &eps in eps_grid {
                let shifted = shift_forward(&streams, eps);
                let mut pooled_eps: Vec<f64> = shifted.streams.iter().flatten().copied().collect();
                pooled_eps.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let moved = reflected_at_checkpoints(&pooled_eps, rho_down, rho_up, comp_rate, &checkpoints)?;
                let (mut gap_down, mut gap_up) = (0.0f64, 0.0f64);
                for (b, m) in base.iter().zip(&moved) {
                    gap_down += (b.0 - m.0).abs();
                    gap_up += (b.1 - m.1).abs();
                }
                gaps.down.push(gap_down / checkpoints.len() as f64);
                gaps.up.push(gap_up / checkpoints.len() as f64);
                gaps.collisions.push(if shifted.collision { 1.0 } else { 0.0 });
            }
            Ok(gaps)
        })
        .collect();
    let per_path = per_path?;

    let n = paths as f64;
    let mut points = Vec::with_capacity(eps_grid.len());
    for (k, &eps) in eps_grid.iter().enumerate() {
        let summarize = |pick: &dyn Fn(&PathGaps) -> f64| -> (f64, f64) {
            let mean = per_path.iter().map(|p| pick(p)).sum::<f64>() / n;
            let var = per_path.iter().map(|p| (pick(p) - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            (mean, (var / n).sqrt())
        };
        let (mean_gap_down, se_down) = summarize(&|p: &PathGaps| p.down[k]);
        let (mean_gap_up, se_up) = summarize(&|p: &PathGaps| p.up[k]);
        let collision_rate = per_path.iter().map(|p| p.collisions[k]).sum::<f64>() / n;
        points.push(EpsilonPoint {
            eps,
            mean_gap_down,
            se_down,
            mean_gap_up,
            se_up,
            collision_rate,
        });
    }

    let decreasing = points.windows(2).all(|pair| {
        let band = 2.0 * (pair[0].se_down + pair[1].se_down);
        let band_up = 2.0 * (pair[0].se_up + pair[1].se_up);
        pair[1].mean_gap_down <= pair[0].mean_gap_down + band
            && pair[1].mean_gap_up <= pair[0].mean_gap_up + band_up
    });
    let last = points.last().expect("non-empty grid");
    let final_below_tol = last.mean_gap_down < tol && last.mean_gap_up < tol;
    Ok(EpsilonReport {
        points,
        decreasing,
        final_below_tol,
        tol,
    })
}
