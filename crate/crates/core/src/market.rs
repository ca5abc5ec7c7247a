//! Price series ingestion, difference features and synthetic markets.
//!
//! A [`PriceSeries`] is the only market input. The network never sees raw
//! prices: it sees a window of the `H` most recent one-step differences plus
//! the position held going into the step, packed into a [`MarketState`].

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Epoch seconds of 2020-01-01T00:00:00Z; synthetic series start here.
pub const SYNTHETIC_START: i64 = 1_577_836_800;
/// Synthetic bars are one minute apart.
pub const SYNTHETIC_STEP_SECS: i64 = 60;

/// Position / action: short, flat or long one fixed unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Action {
    Short,
    Flat,
    Long,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Short, Action::Flat, Action::Long];

    pub fn value(self) -> i8 {
        match self {
            Action::Short => -1,
            Action::Flat => 0,
            Action::Long => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }

    /// Position 0..3 in Q-value vectors: short, flat, long.
    pub fn index(self) -> usize {
        (self.value() + 1) as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn from_value(v: i8) -> Option<Action> {
        match v {
            -1 => Some(Action::Short),
            0 => Some(Action::Flat),
            1 => Some(Action::Long),
            _ => None,
        }
    }

    /// Units of position change between two actions (0, 1 or 2).
    pub fn change(self, prev: Action) -> u8 {
        (self.value() - prev.value()).unsigned_abs()
    }
}

impl TryFrom<i8> for Action {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, Self::Error> {
        Action::from_value(v).ok_or_else(|| format!("action must be -1, 0 or 1, got {v}"))
    }
}

impl From<Action> for i8 {
    fn from(a: Action) -> i8 {
        a.value()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub timestamp: i64,
    pub close: f64,
}

/// Close prices with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    points: Vec<PricePoint>,
}

impl PriceSeries {
    pub fn new(points: Vec<PricePoint>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.close.is_finite() && p.close > 0.0) {
                return Err(Error::Config(format!(
                    "close at index {i} must be finite and positive, got {}",
                    p.close
                )));
            }
            if i > 0 && p.timestamp <= points[i - 1].timestamp {
                return Err(Error::Config(format!(
                    "timestamps must be strictly increasing (index {i})"
                )));
            }
        }
        Ok(Self { points })
    }

    /// Builds a series from closes on a one-minute grid starting at [`SYNTHETIC_START`].
    pub fn from_closes(closes: &[f64]) -> Result<Self> {
        let points = closes
            .iter()
            .enumerate()
            .map(|(i, &close)| PricePoint {
                timestamp: SYNTHETIC_START + SYNTHETIC_STEP_SECS * i as i64,
                close,
            })
            .collect();
        Self::new(points)
    }

    pub fn points(&self) -> &[PricePoint] {
        &self.points
    }

    pub fn closes(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.close).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Writes the `timestamp,close` CSV schema with epoch-second timestamps.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("timestamp,close\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.timestamp, p.close));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

fn parse_timestamp(raw: &str) -> std::result::Result<i64, String> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(format!("unrecognised timestamp {raw:?}"))
}

/// Loads a `timestamp,close` CSV. Timestamps may be epoch seconds or ISO-8601
/// (naive values are read as UTC). Line numbers in errors are 1-based file lines.
pub fn load_csv(path: &Path) -> Result<PriceSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

pub(crate) fn parse_csv(text: &str, path: &Path) -> Result<PriceSeries> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (ts_col, close_col) = match (col("timestamp"), col("close")) {
        (Some(t), Some(c)) => (t, c),
        _ => {
            return Err(parse_err(
                1,
                "header must contain `timestamp` and `close`".to_string(),
            ))
        }
    };

    let mut points: Vec<PricePoint> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let ts_raw = record
            .get(ts_col)
            .ok_or_else(|| parse_err(line, "missing timestamp field".into()))?;
        let close_raw = record
            .get(close_col)
            .ok_or_else(|| parse_err(line, "missing close field".into()))?;
        let timestamp = parse_timestamp(ts_raw).map_err(|m| parse_err(line, m))?;
        let close: f64 = close_raw
            .parse()
            .map_err(|_| parse_err(line, format!("bad close value {close_raw:?}")))?;
        if !(close.is_finite() && close > 0.0) {
            return Err(parse_err(line, format!("close must be positive, got {close}")));
        }
        if let Some(prev) = points.last() {
            if timestamp <= prev.timestamp {
                return Err(Error::NonMonotonic {
                    path: path.to_path_buf(),
                    line,
                    timestamp,
                });
            }
        }
        points.push(PricePoint { timestamp, close });
    }
    PriceSeries::new(points)
}

/// One-step differences `close[i+1] - close[i]`.
pub fn diff_series(series: &PriceSeries) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::InsufficientHistory(format!(
            "need at least 2 prices to difference, got {}",
            series.len()
        )));
    }
    Ok(series
        .points
        .windows(2)
        .map(|w| w[1].close - w[0].close)
        .collect())
}

/// Network input: `H` differences (oldest first) and the position held going in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub diffs: Vec<f64>,
    pub prev_action: Action,
}

impl MarketState {
    pub fn horizon(&self) -> usize {
        self.diffs.len()
    }

    /// Dimension of the flattened feature vector, `H + 1`.
    pub fn feature_dim(&self) -> usize {
        self.diffs.len() + 1
    }

    pub fn to_features(&self) -> Vec<f64> {
        let mut v = self.diffs.clone();
        v.push(self.prev_action.as_f64());
        v
    }
}

/// Window of the `horizon` diffs ending at index `t` (inclusive).
pub fn make_state(diffs: &[f64], t: usize, horizon: usize, prev_action: Action) -> Result<MarketState> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if t + 1 < horizon {
        return Err(Error::InsufficientHistory(format!(
            "t={t} has fewer than H={horizon} diffs behind it"
        )));
    }
    if t >= diffs.len() {
        return Err(Error::InsufficientHistory(format!(
            "t={t} is past the end of {} diffs",
            diffs.len()
        )));
    }
    let window = &diffs[t + 1 - horizon..=t];
    if let Some(bad) = window.iter().find(|d| !d.is_finite()) {
        return Err(Error::NonFinite(format!("diff {bad} in window ending at t={t}")));
    }
    Ok(MarketState {
        diffs: window.to_vec(),
        prev_action,
    })
}

/// Causal z-score: element `t` is standardised with the mean and standard
/// deviation of `diffs[..=t]` (Welford). Leading elements with too little
/// history, or zero spread, are passed through centred but unscaled.
pub fn zscore_causal(diffs: &[f64]) -> Vec<f64> {
    const MIN_STD: f64 = 1e-12;
    let mut out = Vec::with_capacity(diffs.len());
    let (mut n, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
    for &d in diffs {
        n += 1.0;
        let delta = d - mean;
        mean += delta / n;
        m2 += delta * (d - mean);
        let std = if n > 1.0 { (m2 / n).sqrt() } else { 0.0 };
        out.push(if std > MIN_STD { (d - mean) / std } else { d - mean });
    }
    out
}

/// Synthetic market families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// `base + amplitude * sin(2 pi t / period)`
    Sine { base: f64, amplitude: f64, period: f64 },
    /// i.i.d. `+step` / `-step` increments with equal probability
    RandomWalk { base: f64, step: f64 },
    /// `base + drift * t + N(0, noise^2)`
    Trend { base: f64, drift: f64, noise: f64 },
}

impl SyntheticKind {
    pub fn sine(amplitude: f64, period: f64) -> Self {
        SyntheticKind::Sine {
            base: 100.0,
            amplitude,
            period,
        }
    }

    pub fn random_walk(step: f64) -> Self {
        SyntheticKind::RandomWalk { base: 100.0, step }
    }

    pub fn trend(drift: f64, noise: f64) -> Self {
        SyntheticKind::Trend {
            base: 100.0,
            drift,
            noise,
        }
    }
}

/// Generates `n` synthetic closes; a pure function of `(kind, n, seed)`.
pub fn gen_synthetic(kind: &SyntheticKind, n: usize, seed: u64) -> Result<PriceSeries> {
    if n < 2 {
        return Err(Error::Config(format!("synthetic series needs n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let closes: Vec<f64> = match *kind {
        SyntheticKind::Sine {
            base,
            amplitude,
            period,
        } => {
            if period.is_nan() || period <= 0.0 {
                return Err(Error::Config(format!("sine period must be positive, got {period}")));
            }
            (0..n)
                .map(|t| base + amplitude * (std::f64::consts::TAU * t as f64 / period).sin())
                .collect()
        }
        SyntheticKind::RandomWalk { base, step } => {
            let mut p = base;
            let mut out = Vec::with_capacity(n);
            out.push(p);
            for _ in 1..n {
                p += if rng.gen::<bool>() { step } else { -step };
                out.push(p);
            }
            out
        }
        SyntheticKind::Trend { base, drift, noise } => (0..n)
            .map(|t| base + drift * t as f64 + noise * standard_normal(&mut rng))
            .collect(),
    };
    if let Some((i, p)) = closes.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::Config(format!(
            "synthetic price at index {i} is {p}; raise the base price"
        )));
    }
    PriceSeries::from_closes(&closes)
}

// Box-Muller; keeps the generator independent of distribution-crate versions.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
