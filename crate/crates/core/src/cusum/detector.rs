//! Streaming CUSUM detectors.
//!
//! A [`Detector`] owns the LSPR path `U = N - beta(rho) Lambda` and its
//! running extremum; the reflected statistic is `U~ = max U - U` for
//! `rho < 1` and `U^ = U - min U` for `rho > 1`. Alarms are strict
//! (`> m`). The decrease detector can alarm between events, so quiet
//! advances take the compensator as a monotone closed-form function of time
//! and locate the crossing by bisection; the increase detector only alarms
//! at events.

use crate::error::{Error, Result};

use super::scale::beta_of_rho;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy)]
pub struct CusumConfig {
    pub rho: f64,
    pub m: f64,
    /// Largest admissible simultaneous jump (per-limit depth cap).
    pub max_jump: u32,
}

impl CusumConfig {
    pub fn new(rho: f64, m: f64, max_jump: u32) -> Result<Self> {
        beta_of_rho(rho)?;
        if !(m > 0.0) {
            return Err(Error::InvalidConfig(format!("threshold m = {m} must be > 0")));
        }
        if max_jump == 0 {
            return Err(Error::InvalidConfig("max_jump must be >= 1".into()));
        }
        Ok(Self { rho, m, max_jump })
    }

    pub fn direction(&self) -> Direction {
        if self.rho < 1.0 {
            Direction::Down
        } else {
            Direction::Up
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alarm {
    pub time: f64,
    /// Cumulative event count at the alarm (including a triggering jump).
    pub event_count: u64,
    pub direction: Direction,
}

/// Increment of `U` for one step: `dN - beta(rho) dLambda`.
pub fn llr_increment(delta_n: u32, delta_lambda: f64, rho: f64) -> Result<f64> {
    if !(delta_lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "compensator increment {delta_lambda} must be >= 0"
        )));
    }
    Ok(delta_n as f64 - beta_of_rho(rho)? * delta_lambda)
}

#[derive(Debug, Clone)]
pub struct Detector {
    config: CusumConfig,
    beta: f64,
    u: f64,
    /// Running max of `U` (down detector) or running min (up detector).
    extremum: f64,
    event_count: u64,
    last_time: f64,
    alarms: Vec<Alarm>,
}

/// Bisection tolerance for alarm times of the decrease detector, seconds.
const CROSSING_TOL: f64 = 1e-9;

impl Detector {
    pub fn new(config: CusumConfig) -> Result<Self> {
        Ok(Self {
            beta: beta_of_rho(config.rho)?,
            config,
            u: 0.0,
            extremum: 0.0,
            event_count: 0,
            last_time: 0.0,
            alarms: Vec::new(),
        })
    }

    pub fn config(&self) -> &CusumConfig {
        &self.config
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn reflected(&self) -> f64 {
        match self.config.direction() {
            Direction::Down => self.extremum - self.u,
            Direction::Up => self.u - self.extremum,
        }
    }

    pub fn last_time(&self) -> f64 {
        self.last_time
    }

    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    pub fn alarms(&self) -> &[Alarm] {
        &self.alarms
    }

    /// Re-bases the running extremum so the reflected statistic restarts
    /// at 0 (used when a companion detector alarms).
    pub fn reset_reflection(&mut self) {
        self.extremum = self.u;
    }

    /// Advances through an event-free interval `(last_time, t]`.
    /// `compensator(s)` must return `Lambda(s) - Lambda(last_time)` for
    /// `s` in the interval, non-decreasing in `s`. The decrease detector may
    /// alarm (possibly repeatedly, restarting from 0 after each alarm);
    /// alarm times are located by bisection to 1e-9 s.
    pub fn advance(&mut self, t: f64, compensator: &dyn Fn(f64) -> f64) -> Result<Vec<Alarm>> {
        if t < self.last_time {
            return Err(Error::TimeRegression {
                state_time: self.last_time,
                step_time: t,
            });
        }
        let total = compensator(t);
        if !(total >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "compensator increment {total} must be >= 0"
            )));
        }
        let mut fired = Vec::new();
        match self.config.direction() {
            Direction::Up => {
                // U^ decays by beta dLambda with reflection at 0; no alarm
                // between events.
                self.u -= self.beta * total;
                self.extremum = self.extremum.min(self.u);
            }
            Direction::Down => {
                // U~ grows continuously by beta dLambda; find each crossing
                // of m inside the interval.
                let t0 = self.last_time;
                let mut consumed = 0.0f64; // compensator mass already applied
                loop {
                    let headroom = self.config.m - self.reflected();
                    let needed = consumed + headroom / self.beta;
                    if total <= needed {
                        self.u -= self.beta * (total - consumed);
                        break;
                    }
                    // Bisect for the first s with compensator(s) >= needed.
                    let (mut lo, mut hi) = (t0.max(self.last_time), t);
                    while hi - lo > CROSSING_TOL {
                        let mid = 0.5 * (lo + hi);
                        if compensator(mid) >= needed {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    let alarm_time = hi;
                    self.u -= self.beta * (needed - consumed);
                    consumed = needed;
                    let alarm = Alarm {
                        time: alarm_time,
                        event_count: self.event_count,
                        direction: Direction::Down,
                    };
                    self.alarms.push(alarm);
                    fired.push(alarm);
                    self.extremum = self.u; // restart from 0
                }
            }
        }
        self.last_time = t;
        Ok(fired)
    }

    /// Quiet advance under a constant reference rate.
    pub fn advance_linear(&mut self, t: f64, rate: f64) -> Result<Vec<Alarm>> {
        let t0 = self.last_time;
        self.advance(t, &move |s: f64| rate * (s - t0))
    }

    /// Applies a simultaneous jump of size `delta_n` at the current time.
    /// Only the increase detector can alarm here.
    pub fn jump(&mut self, delta_n: u32) -> Result<Option<Alarm>> {
        if delta_n == 0 || delta_n > self.config.max_jump {
            return Err(Error::InvalidConfig(format!(
                "jump size {delta_n} outside 1..={}",
                self.config.max_jump
            )));
        }
        self.event_count += delta_n as u64;
        self.u += delta_n as f64;
        match self.config.direction() {
            Direction::Down => {
                self.extremum = self.extremum.max(self.u);
                Ok(None)
            }
            Direction::Up => {
                if self.reflected() > self.config.m {
                    let alarm = Alarm {
                        time: self.last_time,
                        event_count: self.event_count,
                        direction: Direction::Up,
                    };
                    self.alarms.push(alarm);
                    self.extremum = self.u; // restart from 0
                    Ok(Some(alarm))
                } else {
                    Ok(None)
                }
            }
        }
    }

    /// Convenience: quiet advance to `t`, then a jump of `delta_n`.
    pub fn step(&mut self, t: f64, delta_n: u32, compensator: &dyn Fn(f64) -> f64) -> Result<Vec<Alarm>> {
        let mut alarms = self.advance(t, compensator)?;
        if let Some(alarm) = self.jump(delta_n)? {
            alarms.push(alarm);
        }
        Ok(alarms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn config_validation_and_direction() {
        assert!(CusumConfig::new(1.0, 5.0, 1).is_err());
        assert!(CusumConfig::new(0.5, 0.0, 1).is_err());
        assert!(CusumConfig::new(0.5, 5.0, 0).is_err());
        assert_eq!(CusumConfig::new(0.5, 5.0, 1).unwrap().direction(), Direction::Down);
        assert_eq!(CusumConfig::new(1.5, 5.0, 4).unwrap().direction(), Direction::Up);
    }

    #[test]
    fn llr_increment_cases() {
        let beta = beta_of_rho(0.5).unwrap();
        assert_relative_eq!(llr_increment(0, 2.0, 0.5).unwrap(), -2.0 * beta);
        assert_relative_eq!(llr_increment(3, 0.0, 0.5).unwrap(), 3.0);

        // Path sum of increments telescopes to U(t).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut detector = Detector::new(CusumConfig::new(1.5, 1e12, 4).unwrap()).unwrap();
        let mut direct = 0.0f64;
        let mut t = 0.0f64;
        for _ in 0..200 {
            let dt: f64 = rng.gen_range(0.01..0.5);
            let rate: f64 = rng.gen_range(0.1..3.0);
            let dn: u32 = rng.gen_range(1..=4);
            t += dt;
            detector.advance_linear(t, rate).unwrap();
            detector.jump(dn).unwrap();
            direct += llr_increment(dn, rate * dt, 1.5).unwrap();
        }
        assert_relative_eq!(detector.u(), direct, max_relative = 1e-10);
    }

    #[test]
    fn up_detector_jump_crossing() {
        // U^ = m - 0.5, unit jump: alarm at the event.
        let mut detector = Detector::new(CusumConfig::new(1.5, 5.0, 4).unwrap()).unwrap();
        for _ in 0..4 {
            detector.jump(1).unwrap(); // 4 jumps, no decay: U^ = 4
        }
        assert_relative_eq!(detector.reflected(), 4.0);
        let beta = beta_of_rho(1.5).unwrap();
        detector.advance_linear(1.0, 0.5 / beta).unwrap(); // decay by 0.5
        assert_relative_eq!(detector.reflected(), 3.5);
        detector.jump(1).unwrap(); // 4.5, no alarm
        let alarm = detector.jump(1).unwrap().expect("5.5 > 5"); // strict crossing
        assert_relative_eq!(alarm.time, 1.0);
        assert_eq!(alarm.event_count, 6);
        assert_relative_eq!(detector.reflected(), 0.0); // restart
    }

    #[test]
    fn up_alarm_is_strict() {
        let mut detector = Detector::new(CusumConfig::new(1.5, 5.0, 8).unwrap()).unwrap();
        assert!(detector.jump(5).unwrap().is_none()); // exactly m: no alarm
        assert!(detector.jump(1).unwrap().is_some());
    }

    #[test]
    fn down_detector_linear_drift_crossing_time() {
        // Fresh state, constant rate lambda: crossing at m / (beta lambda).
        let (rho, m, lambda) = (0.5f64, 3.0f64, 2.0f64);
        let beta = beta_of_rho(rho).unwrap();
        let mut detector = Detector::new(CusumConfig::new(rho, m, 1).unwrap()).unwrap();
        let horizon = 2.0 * m / (beta * lambda);
        let alarms = detector.advance_linear(horizon, lambda).unwrap();
        assert_eq!(alarms.len(), 1);
        assert_relative_eq!(alarms[0].time, m / (beta * lambda), epsilon = 1e-7);
        assert_eq!(alarms[0].event_count, 0);
    }

    #[test]
    fn down_detector_can_alarm_repeatedly_in_one_advance() {
        let (rho, m, lambda) = (0.5f64, 1.0f64, 1.0f64);
        let beta = beta_of_rho(rho).unwrap();
        let mut detector = Detector::new(CusumConfig::new(rho, m, 1).unwrap()).unwrap();
        let horizon = 3.5 * m / (beta * lambda);
        let alarms = detector.advance_linear(horizon, lambda).unwrap();
        assert_eq!(alarms.len(), 3);
        for (k, alarm) in alarms.iter().enumerate() {
            assert_relative_eq!(alarm.time, (k + 1) as f64 * m / (beta * lambda), epsilon = 1e-6);
        }
    }

    #[test]
    fn time_regression_is_an_error() {
        let mut detector = Detector::new(CusumConfig::new(0.5, 5.0, 1).unwrap()).unwrap();
        detector.advance_linear(2.0, 1.0).unwrap();
        assert!(matches!(
            detector.advance_linear(1.0, 1.0),
            Err(Error::TimeRegression { .. })
        ));
    }

    #[test]
    fn reflection_invariants_on_random_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for rho in [0.5f64, 1.5] {
            let mut detector = Detector::new(CusumConfig::new(rho, 4.0, 4).unwrap()).unwrap();
            let gap_dist = Exp::new(1.0).unwrap();
            let mut t = 0.0f64;
            for _ in 0..3000 {
                let gap: f64 = gap_dist.sample(&mut rng);
                let before = detector.reflected();
                assert!(before >= -1e-12);
                t += gap;
                let fired = detector.advance_linear(t, 1.0).unwrap();
                let beta = beta_of_rho(rho).unwrap();
                let after_advance = detector.reflected();
                if rho < 1.0 {
                    if fired.is_empty() {
                        assert_relative_eq!(after_advance, before + beta * gap, max_relative = 1e-9, epsilon = 1e-9);
                    }
                } else {
                    assert_relative_eq!(after_advance, (before - beta * gap).max(0.0), epsilon = 1e-9);
                }
                let dn: u32 = rng.gen_range(1..=4);
                let pre_jump = detector.reflected();
                let alarm = detector.jump(dn).unwrap();
                let post = detector.reflected();
                if rho < 1.0 {
                    assert!(alarm.is_none());
                    assert_relative_eq!(post, (pre_jump - dn as f64).max(0.0), epsilon = 1e-9);
                } else if alarm.is_none() {
                    assert_relative_eq!(post, pre_jump + dn as f64, max_relative = 1e-9);
                } else {
                    assert_relative_eq!(post, 0.0, epsilon = 1e-12);
                }
                assert!(post >= -1e-12);
            }
        }
    }
}
