//! Round-trip trade segmentation and per-trade backtest statistics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Action;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub entry_index: usize,
    pub exit_index: usize,
    /// `Long` or `Short`.
    pub direction: Action,
    /// `direction * (p_exit - p_entry)`, price units.
    pub gross_pnl: f64,
    pub cost_paid: f64,
    /// `100 * (gross_pnl - cost_paid) / p_entry`
    pub net_return_pct: f64,
}

impl TradeRecord {
    pub fn length(&self) -> usize {
        self.exit_index - self.entry_index
    }

    pub fn net_pnl(&self) -> f64 {
        self.gross_pnl - self.cost_paid
    }
}

/// Splits a position sequence into round-trip trades.
///
/// `actions[j]` is the position held from `prices[j]` to `prices[j + 1]`,
/// starting flat before index 0. A trade opens when the position leaves flat
/// or reverses and closes when it returns to flat or reverses; a reversal
/// closes one trade and opens the next at the same index. Each unit of
/// position change costs `cost`: entering charges the new trade, exiting
/// charges the closing trade. A position still open at the last index is
/// marked to market there without an exit charge, and a position first taken
/// at the last index has no price after it and is not recorded.
pub fn segment_trades(actions: &[Action], prices: &[f64], cost: f64) -> Result<Vec<TradeRecord>> {
    if actions.len() != prices.len() {
        return Err(Error::Config(format!(
            "{} actions but {} prices",
            actions.len(),
            prices.len()
        )));
    }
    if let Some(p) = prices.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::Config(format!("prices must be positive, got {p}")));
    }
    let last = match prices.len() {
        0 => return Ok(Vec::new()),
        n => n - 1,
    };

    struct Open {
        entry: usize,
        direction: Action,
        cost: f64,
    }
    let close = |o: Open, exit: usize, exit_cost: f64| {
        let gross = o.direction.as_f64() * (prices[exit] - prices[o.entry]);
        let cost_paid = o.cost + exit_cost;
        TradeRecord {
            entry_index: o.entry,
            exit_index: exit,
            direction: o.direction,
            gross_pnl: gross,
            cost_paid,
            net_return_pct: 100.0 * (gross - cost_paid) / prices[o.entry],
        }
    };

    let mut trades = Vec::new();
    let mut open: Option<Open> = None;
    let mut prev = Action::Flat;
    for (j, &a) in actions.iter().enumerate() {
        if a == prev {
            continue;
        }
        if let Some(o) = open.take() {
            trades.push(close(o, j, cost * f64::from(prev.value().unsigned_abs())));
        }
        if a != Action::Flat && j < last {
            open = Some(Open {
                entry: j,
                direction: a,
                cost: cost * f64::from(a.value().unsigned_abs()),
            });
        }
        prev = a;
    }
    if let Some(o) = open.take() {
        trades.push(close(o, last, 0.0));
    }
    Ok(trades)
}

/// Pairs a run's per-step actions with the prices they are paid on.
///
/// The step at diff index `first_t + k` holds its position from
/// `closes[first_t + k + 1]` to `closes[first_t + k + 2]`; the final action
/// is repeated so the last position is marked to market at no charge.
pub fn align_run(actions: &[Action], closes: &[f64], first_t: usize) -> Result<(Vec<Action>, Vec<f64>)> {
    let start = first_t + 1;
    let end = start + actions.len();
    if actions.is_empty() || end >= closes.len() {
        return Err(Error::Config(format!(
            "{} actions from diff index {first_t} do not fit {} closes",
            actions.len(),
            closes.len()
        )));
    }
    let mut padded = actions.to_vec();
    padded.push(*actions.last().expect("non-empty"));
    Ok((padded, closes[start..=end].to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub trade_num: usize,
    /// Mean net return per trade, percent.
    pub return_avg: f64,
    /// Mean steps per trade.
    pub trade_length: f64,
    /// Percent of trades with positive net return.
    pub win_rate: f64,
    pub sharpe_ratio: f64,
    /// Sum of net trade PnL, price units.
    pub cumulative_pnl: f64,
    /// Set when the ratio is undefined (fewer than two trades or zero
    /// spread) and reported as 0.
    #[serde(skip)]
    pub sharpe_degenerate: bool,
}

impl MetricsReport {
    pub fn zero() -> Self {
        Self {
            trade_num: 0,
            return_avg: 0.0,
            trade_length: 0.0,
            win_rate: 0.0,
            sharpe_ratio: 0.0,
            cumulative_pnl: 0.0,
            sharpe_degenerate: true,
        }
    }
}

pub fn compute_report(trades: &[TradeRecord]) -> MetricsReport {
    if trades.is_empty() {
        return MetricsReport::zero();
    }
    let n = trades.len() as f64;
    let returns: Vec<f64> = trades.iter().map(|t| t.net_return_pct).collect();
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let degenerate = trades.len() < 2 || std == 0.0;
    MetricsReport {
        trade_num: trades.len(),
        return_avg: mean,
        trade_length: trades.iter().map(|t| t.length() as f64).sum::<f64>() / n,
        win_rate: 100.0 * trades.iter().filter(|t| t.net_return_pct > 0.0).count() as f64 / n,
        sharpe_ratio: if degenerate { 0.0 } else { mean / std },
        cumulative_pnl: trades.iter().map(TradeRecord::net_pnl).sum(),
        sharpe_degenerate: degenerate,
    }
}

/// One line of a report: the cost level a run used and its statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cost: f64,
    #[serde(flatten)]
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

pub const REPORT_HEADER: &str = "cost,trade_num,return_avg,trade_length,win_rate,sharpe_ratio,cumulative_pnl";

pub fn emit_report(rows: &[ReportRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from(REPORT_HEADER);
            out.push('\n');
            for row in rows {
                let r = &row.report;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    row.cost, r.trade_num, r.return_avg, r.trade_length, r.win_rate, r.sharpe_ratio, r.cumulative_pnl
                );
            }
            out
        }
        ReportFormat::Json => {
            let mut out = serde_json::to_string_pretty(rows).expect("report serialization is infallible");
            out.push('\n');
            out
        }
    }
}

pub fn parse_report(text: &str, format: ReportFormat) -> Result<Vec<ReportRow>> {
    let mut rows: Vec<ReportRow> = match format {
        ReportFormat::Json => {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad JSON report: {e}")))?
        }
        ReportFormat::Csv => {
            let mut lines = text.lines();
            if lines.next().map(str::trim) != Some(REPORT_HEADER) {
                return Err(Error::Config(format!("report must start with `{REPORT_HEADER}`")));
            }
            let mut out = Vec::new();
            for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let bad = || Error::Config(format!("report line {}: malformed row", i + 2));
                let f: Vec<&str> = line.split(',').map(str::trim).collect();
                if f.len() != 7 {
                    return Err(bad());
                }
                let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad());
                out.push(ReportRow {
                    cost: num(0)?,
                    report: MetricsReport {
                        trade_num: f[1].parse().map_err(|_| bad())?,
                        return_avg: num(2)?,
                        trade_length: num(3)?,
                        win_rate: num(4)?,
                        sharpe_ratio: num(5)?,
                        cumulative_pnl: num(6)?,
                        sharpe_degenerate: false,
                    },
                });
            }
            out
        }
    };
    for row in &mut rows {
        let r = &mut row.report;
        r.sharpe_degenerate = r.trade_num < 2 || r.sharpe_ratio == 0.0;
    }
    Ok(rows)
}
