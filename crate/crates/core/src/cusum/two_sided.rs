//! Two-sided regime monitoring over a trading session.
//!
//! Runs the decrease (`rho_down < 1`) and increase (`rho_up > 1`) detectors
//! on the same trade-through stream. The H0 compensator is the reference-day
//! fitted model applied to the test day's own event history; under PER_LIMIT
//! multiplicity jumps are event depths and the compensator is scaled by the
//! reference-day mean depth. Both detectors restart (reflected value 0) when
//! either one alarms.

use std::io::Write;

use crate::error::{Error, Result};
use crate::hawkes::{compensator_increment, HawkesParams, IntensityState, MarkedEvent, Stream};
use crate::trades_through::{Multiplicity, TradeThrough};

use super::detector::{Alarm, CusumConfig, Detector, Direction};
use super::scale::beta_of_rho;

#[derive(Debug, Clone, Copy)]
pub struct TwoSidedConfig {
    pub rho_up: f64,
    pub rho_down: f64,
    pub m: f64,
    pub multiplicity: Multiplicity,
    /// Reference-day mean event depth; scales the PER_LIMIT compensator.
    pub mean_depth: f64,
    /// Depth cap D (jumps are clamped to it).
    pub max_jump: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Neutral,
    Up,
    Down,
}

/// One output sample. `u` is the LSPR path of the increase detector
/// (the decrease detector's path differs only by its `beta(rho)` factor);
/// `u_tilde`/`u_hat` are the reflected decrease/increase statistics.
#[derive(Debug, Clone, Copy)]
pub struct RegimeRow {
    pub ts_ns: i64,
    pub u: f64,
    pub u_tilde: f64,
    pub u_hat: f64,
    pub alarm: Option<Direction>,
    pub regime: Regime,
}

#[derive(Debug, Clone)]
pub struct RegimeReport {
    pub rows: Vec<RegimeRow>,
    pub alarms: Vec<Alarm>,
}

fn stream_of(side: i8) -> Stream {
    // +1 = bid side consumed, -1 = ask side consumed.
    if side == 1 {
        Stream::B
    } else {
        Stream::A
    }
}

/// Runs both detectors over `[0, ref_params.horizon]`. `t0_ns` anchors the
/// nanosecond timestamps to session time zero. Down alarms emit their own
/// rows at the crossing time; every event emits a row after processing.
pub fn run_two_sided(
    events: &[TradeThrough],
    t0_ns: i64,
    ref_params: &HawkesParams,
    config: &TwoSidedConfig,
) -> Result<RegimeReport> {
    if !(config.rho_down < 1.0 && 1.0 < config.rho_up) {
        return Err(Error::InvalidConfig(format!(
            "need rho_down < 1 < rho_up, got {} and {}",
            config.rho_down, config.rho_up
        )));
    }
    ref_params.validate()?;
    let scale = match config.multiplicity {
        Multiplicity::Ground => 1.0,
        Multiplicity::PerLimit => {
            if !(config.mean_depth > 0.0) {
                return Err(Error::InvalidConfig("mean_depth must be > 0 for PER_LIMIT".into()));
            }
            config.mean_depth
        }
    };

    let mut down = Detector::new(CusumConfig::new(config.rho_down, config.m, config.max_jump)?)?;
    let mut up = Detector::new(CusumConfig::new(config.rho_up, config.m, config.max_jump)?)?;
    let beta_up = beta_of_rho(config.rho_up)?;

    let mut state = IntensityState::new();
    let mut rows = Vec::new();
    let mut alarms = Vec::new();
    let mut regime = Regime::Neutral;
    let mut prev_time = 0.0f64;

    let to_ns = |time: f64| t0_ns + (time * 1e9).round() as i64;

    let process_interval = |t: f64,
                                state: &IntensityState,
                                down: &mut Detector,
                                up: &mut Detector,
                                rows: &mut Vec<RegimeRow>,
                                alarms: &mut Vec<Alarm>,
                                regime: &mut Regime,
                                prev_time: &mut f64|
     -> Result<()> {
        let anchor = *prev_time;
        let compensator = |s: f64| -> f64 {
            let a = compensator_increment(anchor, s, Stream::A, state, ref_params).unwrap_or(0.0);
            let b = compensator_increment(anchor, s, Stream::B, state, ref_params).unwrap_or(0.0);
            scale * (a + b)
        };
        let u_before = up.u();
        let refl_before = up.reflected();
        let fired = down.advance(t, &compensator)?;
        up.advance(t, &compensator)?;
        if !fired.is_empty() {
            up.reset_reflection();
            for alarm in fired {
                *regime = Regime::Down;
                alarms.push(alarm);
                let drop = beta_up * compensator(alarm.time);
                rows.push(RegimeRow {
                    ts_ns: to_ns(alarm.time),
                    u: u_before - drop,
                    u_tilde: config.m,
                    u_hat: (refl_before - drop).max(0.0),
                    alarm: Some(Direction::Down),
                    regime: *regime,
                });
            }
        }
        *prev_time = t;
        Ok(())
    };

    for event in events {
        let time = (event.ts_ns - t0_ns) as f64 * 1e-9;
        if time < prev_time {
            return Err(Error::TimeRegression {
                state_time: prev_time,
                step_time: time,
            });
        }
        process_interval(time, &state, &mut down, &mut up, &mut rows, &mut alarms, &mut regime, &mut prev_time)?;

        let jump = match config.multiplicity {
            Multiplicity::Ground => 1,
            Multiplicity::PerLimit => event.depth.min(config.max_jump),
        };
        down.jump(jump)?;
        let up_alarm = up.jump(jump)?;
        if let Some(alarm) = up_alarm {
            down.reset_reflection();
            regime = Regime::Up;
            alarms.push(alarm);
        }
        rows.push(RegimeRow {
            ts_ns: event.ts_ns,
            u: up.u(),
            u_tilde: down.reflected(),
            u_hat: up.reflected(),
            alarm: up_alarm.map(|_| Direction::Up),
            regime,
        });

        state.observe(
            &MarkedEvent {
                time,
                stream: stream_of(event.side),
                mark: event.volume as f64,
            },
            ref_params,
        )?;
    }

    // Quiet tail of the session.
    let horizon = ref_params.horizon;
    if horizon > prev_time {
        process_interval(horizon, &state, &mut down, &mut up, &mut rows, &mut alarms, &mut regime, &mut prev_time)?;
        rows.push(RegimeRow {
            ts_ns: to_ns(horizon),
            u: up.u(),
            u_tilde: down.reflected(),
            u_hat: up.reflected(),
            alarm: None,
            regime,
        });
    }

    Ok(RegimeReport { rows, alarms })
}

/// Emits the `ts_ns,U,U_tilde,U_hat,alarm,regime` schema
/// (alarm in {0, UP, DOWN}).
pub fn write_regimes_csv<W: Write>(writer: W, report: &RegimeReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["ts_ns", "U", "U_tilde", "U_hat", "alarm", "regime"])?;
    for row in &report.rows {
        out.write_record([
            row.ts_ns.to_string(),
            format!("{:.9}", row.u),
            format!("{:.9}", row.u_tilde),
            format!("{:.9}", row.u_hat),
            match row.alarm {
                None => "0".to_string(),
                Some(Direction::Up) => "UP".to_string(),
                Some(Direction::Down) => "DOWN".to_string(),
            },
            match row.regime {
                Regime::Neutral => "NEUTRAL".to_string(),
                Regime::Up => "UP".to_string(),
                Regime::Down => "DOWN".to_string(),
            },
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cusum::scale::arl_decrease;

    fn flat_params(mu: f64, horizon: f64) -> HawkesParams {
        HawkesParams::constant(
            [mu, mu],
            [[0.0; 2]; 2],
            [[1.0; 2]; 2],
            [0.0, 0.0],
            [1.0, 1.0],
            horizon,
        )
    }

    fn base_config() -> TwoSidedConfig {
        TwoSidedConfig {
            rho_up: 1.5,
            rho_down: 0.5,
            m: 5.0,
            multiplicity: Multiplicity::Ground,
            mean_depth: 1.0,
            max_jump: 4,
        }
    }

    #[test]
    fn rejects_misordered_rhos() {
        let params = flat_params(0.5, 100.0);
        let config = TwoSidedConfig { rho_up: 0.5, rho_down: 1.5, ..base_config() };
        assert!(run_two_sided(&[], 0, &params, &config).is_err());
    }

    #[test]
    fn empty_stream_yields_only_down_alarms() {
        // Total rate 1.0 over 10 ARL-crossings worth of time.
        let params = flat_params(0.5, 40.0);
        let report = run_two_sided(&[], 0, &params, &base_config()).unwrap();
        assert!(!report.alarms.is_empty());
        assert!(report.alarms.iter().all(|a| a.direction == Direction::Down));
        // First crossing at m / (beta * lambda_total).
        let beta = beta_of_rho(0.5).unwrap();
        let expected = 5.0 / (beta * 1.0);
        assert!((report.alarms[0].time - expected).abs() < 1e-6);
        assert_eq!(report.rows.last().unwrap().regime, Regime::Down);
    }

    #[test]
    fn burst_of_events_raises_up_alarm_and_resets_down() {
        let params = flat_params(0.05, 1000.0); // very quiet reference model
        let events: Vec<TradeThrough> = (0..7)
            .map(|k| TradeThrough { ts_ns: 1_000_000 * (k + 1), side: 1, depth: 1, volume: 10 })
            .collect();
        let report = run_two_sided(&events, 0, &params, &base_config()).unwrap();
        let ups: Vec<&Alarm> = report.alarms.iter().filter(|a| a.direction == Direction::Up).collect();
        assert_eq!(ups.len(), 1);
        assert_eq!(ups[0].event_count, 6); // sixth jump strictly exceeds m = 5
        let alarm_row = report.rows.iter().find(|r| r.alarm == Some(Direction::Up)).unwrap();
        assert_eq!(alarm_row.regime, Regime::Up);
        assert_eq!(alarm_row.u_hat, 0.0); // restart
        assert_eq!(alarm_row.u_tilde, 0.0); // companion reset
    }

    #[test]
    fn no_change_day_matches_theoretical_false_alarm_rate() {
        // Events simulated from the reference model itself (Poisson here):
        // alarm count per day should be close to events / ARL.
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        use rand_distr::{Distribution, Exp};

        let horizon = 40_000.0;
        let params = flat_params(0.5, horizon);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let gap = Exp::new(1.0).unwrap();
        let mut t = 0.0f64;
        let mut events = Vec::new();
        let mut flip = false;
        loop {
            t += gap.sample(&mut rng);
            if t >= horizon {
                break;
            }
            flip = !flip;
            events.push(TradeThrough {
                ts_ns: (t * 1e9).round() as i64,
                side: if flip { 1 } else { -1 },
                depth: 1,
                volume: 10,
            });
        }
        let report = run_two_sided(&events, 0, &params, &base_config()).unwrap();
        let downs = report.alarms.iter().filter(|a| a.direction == Direction::Down).count() as f64;
        let ups = report.alarms.iter().filter(|a| a.direction == Direction::Up).count() as f64;
        let n = events.len() as f64;
        let expected_downs = n / arl_decrease(0.0, 5.0, 0.5).unwrap();
        let expected_ups = n / crate::cusum::scale::arl_increase(0.0, 5.0, 1.5).unwrap();
        // Loose bands: the cross-resets couple the two detectors, shortening
        // both empirical run lengths relative to the isolated formulas (the
        // tight 2% check on isolated detectors lives in verify::mc_arl).
        assert!(
            ups > 0.4 * expected_ups && ups < 1.3 * expected_ups,
            "ups {ups} vs {expected_ups}"
        );
        assert!(
            downs > 0.2 * expected_downs && downs < 1.3 * expected_downs,
            "downs {downs} vs {expected_downs}"
        );
    }

    #[test]
    fn regimes_csv_schema() {
        let params = flat_params(0.5, 30.0);
        let events = vec![TradeThrough { ts_ns: 2_000_000_000, side: 1, depth: 2, volume: 25 }];
        let report = run_two_sided(&events, 0, &params, &base_config()).unwrap();
        let mut buf = Vec::new();
        write_regimes_csv(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "ts_ns,U,U_tilde,U_hat,alarm,regime");
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 6);
            fields[0].parse::<i64>().unwrap();
            for f in &fields[1..4] {
                f.parse::<f64>().unwrap();
            }
            assert!(["0", "UP", "DOWN"].contains(&fields[4]));
            assert!(["NEUTRAL", "UP", "DOWN"].contains(&fields[5]));
        }
    }
}
