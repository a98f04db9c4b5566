//! Tick-level order-book and trade ingestion.
//!
//! Books are kept as top-`K` snapshots (default `K = 4`). Prices are integer
//! ticks and times integer nanoseconds so that level-consumption arithmetic is
//! exact. Parsing is total: every line either contributes to a record or
//! produces an error carrying its line number.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BookSide {
    Bid,
    Ask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggressor {
    Buy,
    Sell,
}

/// One displayed price level: price in integer ticks, size in shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BookLevel {
    pub price_ticks: i64,
    pub size: u64,
}

/// Top-`K` book state at one instant. Bids best-first (strictly decreasing
/// prices), asks best-first (strictly increasing prices), best bid < best ask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BookSnapshot {
    pub ts_ns: i64,
    pub bids: Vec<BookLevel>,
    pub asks: Vec<BookLevel>,
}

impl BookSnapshot {
    /// Checks the level-ordering and positivity invariants. `line` is the
    /// first CSV line of the snapshot, used to locate errors.
    pub fn validate(&self, line: u64) -> Result<()> {
        for side in [&self.bids, &self.asks] {
            for level in side.iter() {
                if level.size == 0 {
                    return Err(Error::MalformedRow {
                        line,
                        reason: "zero size at displayed level".into(),
                    });
                }
            }
        }
        for pair in self.bids.windows(2) {
            if pair[1].price_ticks >= pair[0].price_ticks {
                return Err(Error::MalformedRow {
                    line,
                    reason: "bid prices not strictly decreasing".into(),
                });
            }
        }
        for pair in self.asks.windows(2) {
            if pair[1].price_ticks <= pair[0].price_ticks {
                return Err(Error::MalformedRow {
                    line,
                    reason: "ask prices not strictly increasing".into(),
                });
            }
        }
        if let (Some(bid), Some(ask)) = (self.bids.first(), self.asks.first()) {
            if bid.price_ticks >= ask.price_ticks {
                return Err(Error::CrossedBook { line });
            }
        }
        Ok(())
    }

    /// Displayed levels on the side consumed by the given aggressor:
    /// a buyer lifts asks, a seller hits bids.
    pub fn attacked_side(&self, aggressor: Aggressor) -> &[BookLevel] {
        match aggressor {
            Aggressor::Buy => &self.asks,
            Aggressor::Sell => &self.bids,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TradePrint {
    pub ts_ns: i64,
    pub price_ticks: i64,
    pub size: u64,
    pub aggressor: Aggressor,
}

/// Half-open trading window `[start_ns, end_ns)` in nanoseconds since
/// midnight; used to drop auction phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionWindow {
    pub start_ns: i64,
    pub end_ns: i64,
}

impl SessionWindow {
    pub fn new(start_ns: i64, end_ns: i64) -> Result<Self> {
        if start_ns < 0 || end_ns <= start_ns {
            return Err(Error::InvalidConfig(format!(
                "empty session window [{start_ns}, {end_ns})"
            )));
        }
        Ok(Self { start_ns, end_ns })
    }

    /// Parses `"HH:MM:SS-HH:MM:SS"`.
    pub fn parse(text: &str) -> Result<Self> {
        fn time_ns(part: &str) -> Option<i64> {
            let mut fields = part.split(':');
            let h: i64 = fields.next()?.parse().ok()?;
            let m: i64 = fields.next()?.parse().ok()?;
            let s: i64 = fields.next()?.parse().ok()?;
            if fields.next().is_some() || !(0..24).contains(&h) || !(0..60).contains(&m) || !(0..60).contains(&s) {
                return None;
            }
            Some(((h * 60 + m) * 60 + s) * 1_000_000_000)
        }
        let (a, b) = text
            .split_once('-')
            .ok_or_else(|| Error::InvalidConfig(format!("bad session window `{text}`")))?;
        match (time_ns(a), time_ns(b)) {
            (Some(start), Some(end)) => Self::new(start, end),
            _ => Err(Error::InvalidConfig(format!("bad session window `{text}`"))),
        }
    }

    pub fn contains(&self, ts_ns: i64) -> bool {
        self.start_ns <= ts_ns && ts_ns < self.end_ns
    }

    pub fn duration_seconds(&self) -> f64 {
        (self.end_ns - self.start_ns) as f64 * 1e-9
    }
}

fn parse_field<T: std::str::FromStr>(raw: &str, line: u64, what: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::MalformedRow {
        line,
        reason: format!("bad {what} `{raw}`"),
    })
}

/// Parses the book CSV schema `ts_ns,side,level,price_ticks,size`
/// (side B/A, level 1..). Rows sharing a timestamp form one snapshot;
/// levels beyond `depth` are discarded.
pub fn parse_book_reader<R: Read>(reader: R, depth: usize) -> Result<Vec<BookSnapshot>> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = csv_reader.headers()?;
        let expected = ["ts_ns", "side", "level", "price_ticks", "size"];
        if headers.iter().map(str::trim).ne(expected) {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!("expected header `{}`", expected.join(",")),
            });
        }
    }

    let mut snapshots: Vec<BookSnapshot> = Vec::new();
    // (price, size) per level index, staged until the timestamp changes
    let mut pending: Option<(i64, u64, Vec<Option<BookLevel>>, Vec<Option<BookLevel>>)> = None;

    fn finish(
        staged: (i64, u64, Vec<Option<BookLevel>>, Vec<Option<BookLevel>>),
        out: &mut Vec<BookSnapshot>,
    ) -> Result<()> {
        let (ts_ns, line, bids, asks) = staged;
        let collapse = |levels: Vec<Option<BookLevel>>| -> Result<Vec<BookLevel>> {
            let mut out = Vec::new();
            let mut gap = false;
            for slot in levels {
                match slot {
                    Some(level) if !gap => out.push(level),
                    Some(_) => {
                        return Err(Error::MalformedRow {
                            line,
                            reason: "gap in level numbering".into(),
                        })
                    }
                    None => gap = true,
                }
            }
            Ok(out)
        };
        let snapshot = BookSnapshot {
            ts_ns,
            bids: collapse(bids)?,
            asks: collapse(asks)?,
        };
        snapshot.validate(line)?;
        out.push(snapshot);
        Ok(())
    }

    for record in csv_reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 5 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 5 fields, got {}", record.len()),
            });
        }
        let ts_ns: i64 = parse_field(&record[0], line, "ts_ns")?;
        let side = match record[1].trim() {
            "B" => BookSide::Bid,
            "A" => BookSide::Ask,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("bad side `{other}` (want B or A)"),
                })
            }
        };
        let level: usize = parse_field(&record[2], line, "level")?;
        let price_ticks: i64 = parse_field(&record[3], line, "price_ticks")?;
        let size: u64 = parse_field(&record[4], line, "size")?;
        if level == 0 {
            return Err(Error::MalformedRow {
                line,
                reason: "level numbering starts at 1".into(),
            });
        }

        let staged = match pending.as_mut() {
            Some(staged) if staged.0 == ts_ns => staged,
            Some(_) => {
                let done = pending.take().unwrap();
                if ts_ns < done.0 {
                    return Err(Error::NonMonotoneTime { line });
                }
                finish(done, &mut snapshots)?;
                pending = Some((ts_ns, line, vec![None; depth], vec![None; depth]));
                pending.as_mut().unwrap()
            }
            None => {
                pending = Some((ts_ns, line, vec![None; depth], vec![None; depth]));
                pending.as_mut().unwrap()
            }
        };
        if level <= depth {
            let slots = match side {
                BookSide::Bid => &mut staged.2,
                BookSide::Ask => &mut staged.3,
            };
            if slots[level - 1].is_some() {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("duplicate level {level}"),
                });
            }
            slots[level - 1] = Some(BookLevel { price_ticks, size });
        }
    }
    if let Some(staged) = pending.take() {
        finish(staged, &mut snapshots)?;
    }
    Ok(snapshots)
}

pub fn parse_book_csv<P: AsRef<Path>>(path: P, depth: usize) -> Result<Vec<BookSnapshot>> {
    parse_book_reader(std::fs::File::open(path)?, depth)
}

/// Parses the trades CSV schema `ts_ns,price_ticks,size,aggressor` (B/S).
pub fn parse_trades_reader<R: Read>(reader: R) -> Result<Vec<TradePrint>> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = csv_reader.headers()?;
        let expected = ["ts_ns", "price_ticks", "size", "aggressor"];
        if headers.iter().map(str::trim).ne(expected) {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!("expected header `{}`", expected.join(",")),
            });
        }
    }
    let mut prints = Vec::new();
    let mut last_ts = i64::MIN;
    for record in csv_reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let ts_ns: i64 = parse_field(&record[0], line, "ts_ns")?;
        let price_ticks: i64 = parse_field(&record[1], line, "price_ticks")?;
        let size: u64 = parse_field(&record[2], line, "size")?;
        let aggressor = match record[3].trim() {
            "B" => Aggressor::Buy,
            "S" => Aggressor::Sell,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("bad aggressor `{other}` (want B or S)"),
                })
            }
        };
        if size == 0 {
            return Err(Error::MalformedRow {
                line,
                reason: "zero trade size".into(),
            });
        }
        if ts_ns < last_ts {
            return Err(Error::NonMonotoneTime { line });
        }
        last_ts = ts_ns;
        prints.push(TradePrint {
            ts_ns,
            price_ticks,
            size,
            aggressor,
        });
    }
    Ok(prints)
}

pub fn parse_trades_csv<P: AsRef<Path>>(path: P) -> Result<Vec<TradePrint>> {
    parse_trades_reader(std::fs::File::open(path)?)
}

pub fn write_book_csv<W: std::io::Write>(writer: W, snapshots: &[BookSnapshot]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["ts_ns", "side", "level", "price_ticks", "size"])?;
    for snapshot in snapshots {
        for (side, levels) in [("B", &snapshot.bids), ("A", &snapshot.asks)] {
            for (idx, level) in levels.iter().enumerate() {
                out.write_record([
                    snapshot.ts_ns.to_string(),
                    side.to_string(),
                    (idx + 1).to_string(),
                    level.price_ticks.to_string(),
                    level.size.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_trades_csv<W: std::io::Write>(writer: W, prints: &[TradePrint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["ts_ns", "price_ticks", "size", "aggressor"])?;
    for print in prints {
        out.write_record([
            print.ts_ns.to_string(),
            print.price_ticks.to_string(),
            print.size.to_string(),
            match print.aggressor {
                Aggressor::Buy => "B".to_string(),
                Aggressor::Sell => "S".to_string(),
            },
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Keeps only records inside the session window. Generic over anything with a
/// timestamp so the same call works for snapshots, prints and events; an
/// extra `filter` predicate covers venue-specific row flags the schemas do
/// not standardize.
pub fn filter_session<T, F>(records: Vec<T>, ts_ns: impl Fn(&T) -> i64, window: SessionWindow, mut filter: F) -> Vec<T>
where
    F: FnMut(&T) -> bool,
{
    records
        .into_iter()
        .filter(|r| window.contains(ts_ns(r)) && filter(r))
        .collect()
}

/// Configuration for the synthetic book generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Book depth K.
    pub depth: usize,
    /// Trade arrival rate, events per second (one market order per arrival).
    pub trade_rate: f64,
    /// Probability that a market order is sized to exhaust at least level 1.
    pub through_prob: f64,
    /// Given a trade-through, probability of extending one level deeper
    /// (geometric depth, capped at K).
    pub deepen_prob: f64,
    /// Mean displayed size per level, shares.
    pub mean_level_size: f64,
    /// Initial mid price, ticks.
    pub mid_ticks: i64,
    /// Session start, nanoseconds since midnight.
    pub session_start_ns: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            depth: DEFAULT_DEPTH,
            trade_rate: 0.5,
            through_prob: 0.25,
            deepen_prob: 0.35,
            mean_level_size: 120.0,
            mid_ticks: 10_000,
            session_start_ns: 34_200_000_000_000, // 09:30:00
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidConfig("depth must be >= 1".into()));
        }
        if !(self.trade_rate >= 0.0) {
            return Err(Error::InvalidConfig("trade_rate must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.through_prob) || !(0.0..1.0).contains(&self.deepen_prob) {
            return Err(Error::InvalidConfig("probabilities must lie in [0,1)".into()));
        }
        if !(self.mean_level_size >= 1.0) {
            return Err(Error::InvalidConfig("mean_level_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Generates a synthetic session: an initial snapshot at the session start,
/// Poisson market orders, one print per consumed level (prints of one order
/// share timestamp and aggressor), and a post-trade snapshot with consumed
/// levels replenished behind the new touch. Deterministic per seed.
pub fn synth_book(seed: u64, duration_s: f64, config: &SynthConfig) -> Result<(Vec<BookSnapshot>, Vec<TradePrint>)> {
    config.validate()?;
    if !(duration_s > 0.0) {
        return Err(Error::InvalidConfig("duration must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = config.depth;

    let level_size = |rng: &mut ChaCha8Rng| -> u64 {
        let draw = Exp::new(1.0 / config.mean_level_size).unwrap().sample(rng);
        (draw.ceil() as u64).max(1)
    };
    let fresh_book = |rng: &mut ChaCha8Rng, ts_ns: i64, mid: i64| -> BookSnapshot {
        let bids = (0..k)
            .map(|i| BookLevel {
                price_ticks: mid - 1 - i as i64,
                size: level_size(rng),
            })
            .collect();
        let asks = (0..k)
            .map(|i| BookLevel {
                price_ticks: mid + 1 + i as i64,
                size: level_size(rng),
            })
            .collect();
        BookSnapshot { ts_ns, bids, asks }
    };

    let mut snapshots = Vec::new();
    let mut prints = Vec::new();
    let mut mid = config.mid_ticks;
    let mut book = fresh_book(&mut rng, config.session_start_ns, mid);
    snapshots.push(book.clone());

    if config.trade_rate == 0.0 {
        return Ok((snapshots, prints));
    }
    let gap_dist = Exp::new(config.trade_rate).unwrap();
    let mut t = 0.0f64;
    loop {
        t += gap_dist.sample(&mut rng);
        if t >= duration_s {
            break;
        }
        let ts_ns = config.session_start_ns + (t * 1e9).round() as i64;
        if ts_ns <= book.ts_ns {
            continue; // sub-nanosecond gap; skip rather than collide
        }
        let aggressor = if rng.gen_bool(0.5) { Aggressor::Buy } else { Aggressor::Sell };
        let levels: Vec<BookLevel> = book.attacked_side(aggressor).to_vec();

        // Choose a target depth, then a size consistent with it.
        let volume = if rng.gen_bool(config.through_prob) {
            let mut depth = 1usize;
            while depth < k && rng.gen_bool(config.deepen_prob) {
                depth += 1;
            }
            let exhausted: u64 = levels[..depth].iter().map(|l| l.size).sum();
            let partial = if depth < k {
                rng.gen_range(0..levels[depth].size)
            } else {
                0
            };
            exhausted + partial
        } else {
            rng.gen_range(1..=levels[0].size.saturating_sub(1).max(1))
        };

        // One print per touched level.
        let mut remaining = volume;
        for level in &levels {
            if remaining == 0 {
                break;
            }
            let filled = remaining.min(level.size);
            prints.push(TradePrint {
                ts_ns,
                price_ticks: level.price_ticks,
                size: filled,
                aggressor,
            });
            remaining -= filled;
        }

        // Rebuild the attacked side: drop exhausted levels, keep the partial
        // touch, replenish behind it; drift the mid with the consumed levels.
        let mut consumed = 0usize;
        let mut leftover = volume;
        for level in &levels {
            if leftover >= level.size {
                leftover -= level.size;
                consumed += 1;
            } else {
                break;
            }
        }
        if consumed == k {
            mid += match aggressor {
                Aggressor::Buy => 1,
                Aggressor::Sell => -1,
            };
            book = fresh_book(&mut rng, ts_ns, mid);
        } else {
            let mut side: Vec<BookLevel> = levels[consumed..].to_vec();
            if leftover > 0 {
                side[0].size -= leftover;
            }
            let dir: i64 = match aggressor {
                Aggressor::Buy => 1,
                Aggressor::Sell => -1,
            };
            while side.len() < k {
                let last_price = side.last().unwrap().price_ticks;
                side.push(BookLevel {
                    price_ticks: last_price + dir,
                    size: level_size(&mut rng),
                });
            }
            book = match aggressor {
                Aggressor::Buy => BookSnapshot {
                    ts_ns,
                    bids: book.bids.clone(),
                    asks: side,
                },
                Aggressor::Sell => BookSnapshot {
                    ts_ns,
                    bids: side,
                    asks: book.asks.clone(),
                },
            };
        }
        book.validate(0).expect("generator preserves book invariants");
        snapshots.push(book.clone());
    }
    Ok((snapshots, prints))
}
