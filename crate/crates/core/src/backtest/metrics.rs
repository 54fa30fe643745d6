//! Equity-curve statistics.
//!
//! Annualization: daily quantities scale by 252 (Sharpe by its square root),
//! monthly by 12, yearly by 1. Months and years are calendar periods; the
//! first period's return is measured from the curve's first point.

use chrono::{Datelike, NaiveDate};

use crate::portfolio::{sharpe_ratio, Sharpe};

use super::BacktestError;

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// Portfolio value index over time, starting at 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct EquityCurve {
    points: Vec<(NaiveDate, f64)>,
}

impl EquityCurve {
    pub fn new(points: Vec<(NaiveDate, f64)>) -> Result<Self, BacktestError> {
        if points.is_empty() {
            return Err(BacktestError::InvalidCurve("curve is empty".into()));
        }
        for p in points.windows(2) {
            if p[1].0 <= p[0].0 {
                return Err(BacktestError::InvalidCurve(format!(
                    "dates not increasing at {}",
                    p[1].0
                )));
            }
        }
        if let Some(bad) = points.iter().find(|p| !(p.1 > 0.0 && p.1.is_finite())) {
            return Err(BacktestError::InvalidCurve(format!(
                "non-positive value {} on {}",
                bad.1, bad.0
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(NaiveDate, f64)] {
        &self.points
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn first(&self) -> (NaiveDate, f64) {
        self.points[0]
    }

    pub fn last(&self) -> (NaiveDate, f64) {
        self.points[self.points.len() - 1]
    }

    pub fn daily_returns(&self) -> Vec<f64> {
        self.points
            .windows(2)
            .map(|p| (p[1].1 - p[0].1) / p[0].1)
            .collect()
    }

    /// Returns over consecutive groups of points sharing `key`.
    fn period_returns<K: PartialEq>(&self, key: impl Fn(NaiveDate) -> K) -> Vec<f64> {
        let mut out = Vec::new();
        let mut base = self.points[0].1;
        let mut i = 0;
        while i < self.points.len() {
            let k = key(self.points[i].0);
            let mut j = i;
            while j + 1 < self.points.len() && key(self.points[j + 1].0) == k {
                j += 1;
            }
            let end = self.points[j].1;
            out.push((end - base) / base);
            base = end;
            i = j + 1;
        }
        out
    }

    pub fn monthly_returns(&self) -> Vec<f64> {
        self.period_returns(|d| (d.year(), d.month()))
    }

    pub fn yearly_returns(&self) -> Vec<(i32, f64)> {
        let years: Vec<i32> = {
            let mut y: Vec<i32> = self.points.iter().map(|p| p.0.year()).collect();
            y.dedup();
            y
        };
        years
            .into_iter()
            .zip(self.period_returns(|d| d.year()))
            .collect()
    }
}

/// Worst relative decline from a running peak; `0` for a curve that never falls.
pub fn max_drawdown(values: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in values {
        if v > peak {
            peak = v;
        }
        let dd = (v - peak) / peak;
        if dd < worst {
            worst = dd;
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub total_return: f64,
    pub daily_sharpe: Sharpe,
    pub max_drawdown: f64,
    pub mean_return_daily: f64,
    pub mean_return_monthly: f64,
    pub mean_return_yearly: f64,
    pub win_years: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn report_metrics(curve: &EquityCurve) -> Metrics {
    let daily = curve.daily_returns();
    let daily_sharpe = match sharpe_ratio(&daily) {
        Ok(Sharpe::Defined(s)) => Sharpe::Defined(s * TRADING_DAYS_PER_YEAR.sqrt()),
        _ => Sharpe::Undefined,
    };
    let yearly = curve.yearly_returns();
    let yearly_values: Vec<f64> = yearly.iter().map(|y| y.1).collect();
    let wins = yearly.iter().filter(|y| y.1 > 0.0).count();
    Metrics {
        total_return: curve.last().1 / curve.first().1 - 1.0,
        daily_sharpe,
        max_drawdown: max_drawdown(&curve.values()),
        mean_return_daily: mean(&daily) * TRADING_DAYS_PER_YEAR,
        mean_return_monthly: mean(&curve.monthly_returns()) * 12.0,
        mean_return_yearly: mean(&yearly_values),
        win_years: if yearly.is_empty() {
            0.0
        } else {
            wins as f64 / yearly.len() as f64
        },
    }
}
