//! Trade-through extraction: detects market events that exhaust one or more
//! displayed price levels and converts them into detector-ready point
//! streams.
//!
//! Prints sharing a nanosecond timestamp and aggressor are treated as the
//! fills of one market order. Against the pre-trade snapshot with attacked
//! levels `q1..qK` and aggregated executed volume `V`, the event depth is
//! `max { n : V >= q1 + ... + qn }`; depth 0 means no trade-through and no
//! event. A depth-`n` event exhausts every shallower level too, which is what
//! the PER_LIMIT multiplicity below counts.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lob::{Aggressor, BookSnapshot, TradePrint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeThrough {
    pub ts_ns: i64,
    /// +1: bid side consumed (aggressor sold), -1: ask side consumed.
    pub side: i8,
    pub depth: u32,
    pub volume: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideMode {
    Bid,
    Ask,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Multiplicity {
    /// One point per event, jump size 1, mark = volume.
    Ground,
    /// Jump size = depth: simultaneous arrivals in per-limit streams.
    PerLimit,
}

/// A detector-facing point: possibly multiple simultaneous unit jumps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamPoint {
    pub ts_ns: i64,
    pub side: i8,
    pub jump: u32,
    pub mark: f64,
}

/// Extracts trade-through events from a time-sorted session.
pub fn extract(snapshots: &[BookSnapshot], prints: &[TradePrint]) -> Result<Vec<TradeThrough>> {
    let mut events = Vec::new();
    let mut snap_idx = 0usize;

    let mut group_start = 0usize;
    while group_start < prints.len() {
        let head = prints[group_start];
        let mut group_end = group_start + 1;
        while group_end < prints.len()
            && prints[group_end].ts_ns == head.ts_ns
            && prints[group_end].aggressor == head.aggressor
        {
            group_end += 1;
        }
        let volume: u64 = prints[group_start..group_end].iter().map(|p| p.size).sum();

        // Latest snapshot strictly before the group: the pre-trade book.
        while snap_idx + 1 < snapshots.len() && snapshots[snap_idx + 1].ts_ns < head.ts_ns {
            snap_idx += 1;
        }
        if snapshots.is_empty() || snapshots[snap_idx].ts_ns >= head.ts_ns {
            return Err(Error::MissingSnapshot { ts_ns: head.ts_ns });
        }
        let pre = &snapshots[snap_idx];

        let mut depth = 0u32;
        let mut cumulative = 0u64;
        for level in pre.attacked_side(head.aggressor) {
            cumulative += level.size;
            if volume >= cumulative {
                depth += 1;
            } else {
                break;
            }
        }
        if depth >= 1 {
            events.push(TradeThrough {
                ts_ns: head.ts_ns,
                side: match head.aggressor {
                    Aggressor::Sell => 1,
                    Aggressor::Buy => -1,
                },
                depth,
                volume,
            });
        }
        group_start = group_end;
    }
    Ok(events)
}

/// Converts events into a merged, time-sorted point sequence under the given
/// side filter and multiplicity convention.
pub fn to_streams(events: &[TradeThrough], mode: SideMode, multiplicity: Multiplicity) -> Vec<StreamPoint> {
    events
        .iter()
        .filter(|e| match mode {
            SideMode::Bid => e.side == 1,
            SideMode::Ask => e.side == -1,
            SideMode::Both => true,
        })
        .map(|e| StreamPoint {
            ts_ns: e.ts_ns,
            side: e.side,
            jump: match multiplicity {
                Multiplicity::Ground => 1,
                Multiplicity::PerLimit => e.depth,
            },
            mark: e.volume as f64,
        })
        .collect()
}

pub fn write_trades_through_csv<W: std::io::Write>(writer: W, events: &[TradeThrough]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["ts_ns", "side", "depth", "volume"])?;
    for e in events {
        out.write_record([
            e.ts_ns.to_string(),
            e.side.to_string(),
            e.depth.to_string(),
            e.volume.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_trades_through_reader<R: Read>(reader: R) -> Result<Vec<TradeThrough>> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = csv_reader.headers()?;
        let expected = ["ts_ns", "side", "depth", "volume"];
        if headers.iter().map(str::trim).ne(expected) {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!("expected header `{}`", expected.join(",")),
            });
        }
    }
    let mut events = Vec::new();
    let mut last_ts = i64::MIN;
    for record in csv_reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize, what: &str| -> Result<i64> {
            record[idx].trim().parse().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("bad {what} `{}`", &record[idx]),
            })
        };
        let ts_ns = field(0, "ts_ns")?;
        let side = field(1, "side")?;
        let depth = field(2, "depth")?;
        let volume = field(3, "volume")?;
        if side != 1 && side != -1 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("side must be +1 or -1, got {side}"),
            });
        }
        if depth < 1 || volume < 1 {
            return Err(Error::MalformedRow {
                line,
                reason: "depth and volume must be >= 1".into(),
            });
        }
        if ts_ns < last_ts {
            return Err(Error::NonMonotoneTime { line });
        }
        last_ts = ts_ns;
        events.push(TradeThrough {
            ts_ns,
            side: side as i8,
            depth: depth as u32,
            volume: volume as u64,
        });
    }
    Ok(events)
}

pub fn parse_trades_through_csv<P: AsRef<std::path::Path>>(path: P) -> Result<Vec<TradeThrough>> {
    parse_trades_through_reader(std::fs::File::open(path)?)
}
