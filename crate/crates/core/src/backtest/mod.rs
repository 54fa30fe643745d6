//! Rolling formation / holding backtest.
//!
//! At each rebalance date `t` (every `stride` trading days) the universe is
//! every symbol with a complete, gap-free formation window ending at `t`.
//! Those windows are embedded, clustered and scored; `allocate` picks the
//! portfolio. It is then held for `holding_period` days without
//! intra-period rebalancing: the portfolio value on day `t + d` is the
//! equal-weight mean of each holding's price relative to its close at `t`,
//! so the period return is the mean of the holdings' compound returns.
//! A holding with no price on some day is marked at its last close.
//! Nothing after `t` is read when forming the portfolio at `t`.

mod metrics;
pub mod report;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{max_drawdown, report_metrics, EquityCurve, Metrics, TRADING_DAYS_PER_YEAR};

use crate::autoencoder::{Checkpoint, Embedding};
use crate::chart_render::{render, RenderConfig};
use crate::graph_cluster::{build_graph, center_embeddings, cluster, ClusterAssignment, GraphError};
use crate::market_data::{OhlcSeries, PriceWindow, TradingCalendar};
use crate::portfolio::{allocate, score_window, Portfolio, PortfolioError, Sharpe};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid backtest config: {0}")]
    Config(String),
    #[error("no rebalance date fits between the first formation window and the end date")]
    NoRebalanceDates,
    #[error("{date}: only {available} stocks have a complete formation window, need {needed}")]
    ThinUniverse {
        date: NaiveDate,
        available: usize,
        needed: usize,
    },
    #[error("embedding {symbol} window starting {start}: {reason}")]
    Embedding {
        symbol: String,
        start: NaiveDate,
        reason: String,
    },
    #[error("{date}: {source}")]
    Graph {
        date: NaiveDate,
        #[source]
        source: GraphError,
    },
    #[error("{date}: {source}")]
    Portfolio {
        date: NaiveDate,
        #[source]
        source: PortfolioError,
    },
    #[error("equity curve: {0}")]
    InvalidCurve(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub formation_window: usize,
    pub holding_period: usize,
    pub stride: usize,
    pub k2: usize,
    /// First eligible rebalance date; defaults to the first date with a full formation window.
    pub start_date: Option<NaiveDate>,
    pub end_date: Option<NaiveDate>,
    /// Hold cash through periods whose universe is too small instead of failing.
    pub skip_thin_dates: bool,
    /// Remove the cross-sectional mean embedding before building each graph.
    pub center_embeddings: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            formation_window: 20,
            holding_period: 10,
            stride: 10,
            k2: 5,
            start_date: None,
            end_date: None,
            skip_thin_dates: false,
            center_embeddings: true,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        let bad = |m: &str| Err(BacktestError::Config(m.to_string()));
        if self.formation_window < 3 {
            return bad("formation_window must be at least 3 (two returns for a Sharpe ratio)");
        }
        if self.holding_period == 0 || self.stride == 0 || self.k2 == 0 {
            return bad("holding_period, stride and k2 must be positive");
        }
        if self.holding_period > self.stride {
            return bad("holding_period longer than stride would overlap holding periods");
        }
        if let (Some(s), Some(e)) = (self.start_date, self.end_date) {
            if s >= e {
                return bad("start_date must be before end_date");
            }
        }
        Ok(())
    }
}

/// Maps a formation window to an embedding vector.
pub trait WindowEmbedder {
    fn model_id(&self) -> String;
    fn embed(&self, window: &PriceWindow) -> Result<Vec<f64>, String>;
}

/// Renders the window and runs it through a trained encoder.
pub struct CaeEmbedder<'a> {
    pub checkpoint: &'a Checkpoint,
    pub render: RenderConfig,
}

impl WindowEmbedder for CaeEmbedder<'_> {
    fn model_id(&self) -> String {
        self.checkpoint.model_id().to_string()
    }

    fn embed(&self, window: &PriceWindow) -> Result<Vec<f64>, String> {
        let img = render(window, &self.render).map_err(|e| e.to_string())?;
        self.checkpoint.encode_image(&img).map_err(|e| e.to_string())
    }
}

/// Looks embeddings up by `(symbol, window start)`.
pub struct StoreEmbedder {
    model_id: String,
    vectors: BTreeMap<(String, NaiveDate), Vec<f64>>,
}

impl StoreEmbedder {
    pub fn new(embeddings: &[Embedding]) -> Self {
        Self {
            model_id: embeddings.first().map(|e| e.model_id.clone()).unwrap_or_default(),
            vectors: embeddings
                .iter()
                .map(|e| ((e.symbol.clone(), e.window_start), e.vector.clone()))
                .collect(),
        }
    }
}

impl WindowEmbedder for StoreEmbedder {
    fn model_id(&self) -> String {
        self.model_id.clone()
    }

    fn embed(&self, window: &PriceWindow) -> Result<Vec<f64>, String> {
        self.vectors
            .get(&(window.symbol.clone(), window.start_date()))
            .cloned()
            .ok_or_else(|| "not in the embedding store".to_string())
    }
}

/// Any closure over windows is an embedder; useful for baselines.
pub struct FnEmbedder<F>(pub String, pub F);

impl<F: Fn(&PriceWindow) -> Vec<f64>> WindowEmbedder for FnEmbedder<F> {
    fn model_id(&self) -> String {
        self.0.clone()
    }

    fn embed(&self, window: &PriceWindow) -> Result<Vec<f64>, String> {
        Ok((self.1)(window))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRecord {
    pub rebalance_date: NaiveDate,
    pub hold_end: NaiveDate,
    /// `None` when the date was skipped for a thin universe.
    pub clusters: Option<ClusterAssignment>,
    pub portfolio: Option<Portfolio>,
    /// Compound return of each holding, aligned with `portfolio.holdings`.
    pub compound_returns: Vec<f64>,
    pub period_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub metrics: Metrics,
    pub periods: Vec<PeriodRecord>,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestOutcome {
    pub report: BacktestReport,
    pub curve: EquityCurve,
}

/// Calendar indices of the rebalance dates for `cfg` over `calendar`.
pub fn rebalance_schedule(calendar: &TradingCalendar, cfg: &BacktestConfig) -> Vec<usize> {
    let dates = calendar.dates();
    let first_full = cfg.formation_window - 1;
    let start = cfg
        .start_date
        .map_or(0, |s| dates.partition_point(|d| *d < s))
        .max(first_full);
    let Some(end) = (match cfg.end_date {
        Some(e) => dates.partition_point(|d| *d <= e).checked_sub(1),
        None => dates.len().checked_sub(1),
    }) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut t = start;
    while t + cfg.holding_period <= end {
        out.push(t);
        t += cfg.stride;
    }
    out
}

/// Per-series lookup from calendar index to bar index.
fn align(series: &OhlcSeries, calendar: &TradingCalendar) -> Vec<Option<usize>> {
    let mut out = vec![None; calendar.len()];
    for (i, bar) in series.bars().iter().enumerate() {
        if let Some(c) = calendar.index_of(bar.date) {
            out[c] = Some(i);
        }
    }
    out
}

/// Formation windows ending at calendar index `t`, one per eligible symbol.
pub fn formation_windows(
    data: &[OhlcSeries],
    calendar: &TradingCalendar,
    t: usize,
    window: usize,
) -> Vec<PriceWindow> {
    if t + 1 < window {
        return Vec::new();
    }
    let mut out: Vec<PriceWindow> = data
        .iter()
        .filter_map(|s| {
            let first = calendar.dates()[t + 1 - window];
            let last = calendar.dates()[t];
            let start = s.position(first)?;
            let end = s.position(last)?;
            (end - start + 1 == window).then(|| PriceWindow {
                symbol: s.symbol().to_string(),
                start_index: start,
                bars: s.bars()[start..=end].to_vec(),
            })
        })
        .collect();
    out.sort_by(|a, b| a.symbol.cmp(&b.symbol));
    out
}

/// Forms the portfolio for calendar index `t` using only data up to `t`.
pub fn form_portfolio(
    data: &[OhlcSeries],
    calendar: &TradingCalendar,
    t: usize,
    embedder: &dyn WindowEmbedder,
    cfg: &BacktestConfig,
) -> Result<(ClusterAssignment, Portfolio), BacktestError> {
    let date = calendar.dates()[t];
    let windows = formation_windows(data, calendar, t, cfg.formation_window);
    let needed = cfg.k2.max(2);
    if windows.len() < needed {
        return Err(BacktestError::ThinUniverse {
            date,
            available: windows.len(),
            needed,
        });
    }
    let model_id = embedder.model_id();
    let mut embeddings = Vec::with_capacity(windows.len());
    let mut scores = Vec::with_capacity(windows.len());
    for w in &windows {
        let vector = embedder.embed(w).map_err(|reason| BacktestError::Embedding {
            symbol: w.symbol.clone(),
            start: w.start_date(),
            reason,
        })?;
        embeddings.push(Embedding {
            symbol: w.symbol.clone(),
            window_start: w.start_date(),
            vector,
            model_id: model_id.clone(),
        });
        scores.push(
            score_window(w).map_err(|source| BacktestError::Portfolio { date, source })?,
        );
    }
    if cfg.center_embeddings {
        embeddings = center_embeddings(&embeddings);
    }
    let graph = build_graph(&embeddings).map_err(|source| BacktestError::Graph { date, source })?;
    let clusters = cluster(&graph).with_date(date);
    let portfolio =
        allocate(&clusters, &scores, cfg.k2).map_err(|source| BacktestError::Portfolio { date, source })?;
    Ok((clusters, portfolio))
}

pub fn run(
    data: &[OhlcSeries],
    embedder: &dyn WindowEmbedder,
    cfg: &BacktestConfig,
    calendar: Option<&TradingCalendar>,
) -> Result<BacktestOutcome, BacktestError> {
    cfg.validate()?;
    let owned;
    let calendar = match calendar {
        Some(c) => c,
        None => {
            owned = TradingCalendar::from_series(data);
            &owned
        }
    };
    let schedule = rebalance_schedule(calendar, cfg);
    if schedule.is_empty() {
        return Err(BacktestError::NoRebalanceDates);
    }
    let aligned: BTreeMap<&str, (Vec<Option<usize>>, &OhlcSeries)> = data
        .iter()
        .map(|s| (s.symbol(), (align(s, calendar), s)))
        .collect();
    let dates = calendar.dates();

    let mut value = 1.0;
    let mut points = vec![(dates[schedule[0]], value)];
    let mut periods = Vec::with_capacity(schedule.len());
    for (k, &t) in schedule.iter().enumerate() {
        let hold_end = t + cfg.holding_period;
        let formed = match form_portfolio(data, calendar, t, embedder, cfg) {
            Ok(f) => Some(f),
            Err(BacktestError::ThinUniverse { .. }) if cfg.skip_thin_dates => None,
            Err(e) => return Err(e),
        };
        let start_value = value;
        let (clusters, portfolio, compound) = match formed {
            None => {
                for d in t + 1..=hold_end {
                    points.push((dates[d], value));
                }
                (None, None, Vec::new())
            }
            Some((clusters, portfolio)) => {
                // Price relative to the close at t, carried forward over gaps.
                let paths: Vec<Vec<f64>> = portfolio
                    .holdings
                    .iter()
                    .map(|h| {
                        let (idx, series) = &aligned[h.symbol.as_str()];
                        let bars = series.bars();
                        let base = bars[idx[t].expect("holding has a close at t")].close;
                        let mut last = base;
                        (t + 1..=hold_end)
                            .map(|d| {
                                if let Some(i) = idx[d] {
                                    last = bars[i].close;
                                }
                                last / base
                            })
                            .collect()
                    })
                    .collect();
                for (step, d) in (t + 1..=hold_end).enumerate() {
                    let rel = paths.iter().map(|p| p[step]).sum::<f64>() / paths.len() as f64;
                    points.push((dates[d], start_value * rel));
                }
                let compound: Vec<f64> = paths.iter().map(|p| p[p.len() - 1] - 1.0).collect();
                (Some(clusters), Some(portfolio), compound)
            }
        };
        let period_return = if compound.is_empty() {
            0.0
        } else {
            compound.iter().sum::<f64>() / compound.len() as f64
        };
        value = start_value * (1.0 + period_return);
        if let Some(last) = points.last_mut() {
            last.1 = value;
        }
        // Cash between the end of this hold and the next rebalance.
        let next = schedule.get(k + 1).copied().unwrap_or(hold_end);
        for d in hold_end + 1..=next {
            points.push((dates[d], value));
        }
        periods.push(PeriodRecord {
            rebalance_date: dates[t],
            hold_end: dates[hold_end],
            clusters,
            portfolio,
            compound_returns: compound,
            period_return,
        });
    }

    let curve = EquityCurve::new(points)?;
    let metrics = report_metrics(&curve);
    Ok(BacktestOutcome {
        report: BacktestReport {
            metrics,
            periods,
            model_id: embedder.model_id(),
        },
        curve,
    })
}

impl BacktestReport {
    /// Undefined Sharpe values are written as `undefined`.
    pub fn sharpe_text(s: Sharpe) -> String {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::OhlcBar;

    fn calendar(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
        (0..n).map(|i| start + chrono::Days::new(i as u64)).collect()
    }

    fn series(symbol: &str, closes: &[f64]) -> OhlcSeries {
        let dates = calendar(closes.len());
        OhlcSeries::new(
            symbol,
            closes
                .iter()
                .zip(dates)
                .map(|(&c, d)| OhlcBar::new(d, c, c, c, c).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn one_hot(window: &PriceWindow) -> Vec<f64> {
        // Two planted groups by ticker prefix.
        if window.symbol.starts_with('U') {
            vec![1.0, 0.0]
        } else {
            vec![0.0, 1.0]
        }
    }

    #[test]
    fn schedule_tiles_the_calendar() {
        let cal = TradingCalendar::new(calendar(60));
        let cfg = BacktestConfig::default();
        assert_eq!(rebalance_schedule(&cal, &cfg), vec![19, 29, 39, 49]);
        let cfg = BacktestConfig {
            start_date: Some(cal.dates()[30]),
            ..BacktestConfig::default()
        };
        assert_eq!(rebalance_schedule(&cal, &cfg), vec![30, 40]);
    }

    #[test]
    fn single_stock_constant_growth() {
        let closes: Vec<f64> = (0..30)
            .map(|i| if i < 20 { 100.0 + (i % 2) as f64 } else { 101.0 * 1.01f64.powi(i - 19) })
            .collect();
        let data = vec![series("UP", &closes), series("ZZ", &[50.0; 30])];
        let cfg = BacktestConfig {
            k2: 1,
            ..BacktestConfig::default()
        };
        let out = run(&data, &FnEmbedder("t".into(), one_hot), &cfg, None).unwrap();
        assert_eq!(out.report.periods.len(), 1);
        let p = &out.report.periods[0];
        assert_eq!(p.portfolio.as_ref().unwrap().symbols(), vec!["UP"]);
        assert!((p.period_return - (1.01f64.powi(10) - 1.0)).abs() < 1e-12);
        assert!((p.period_return - 0.10462).abs() < 1e-5);
    }

    #[test]
    fn mean_of_compound_returns() {
        // Two holdings, +10% and -10% over the hold: period return 0.
        let mut up = vec![100.0; 20];
        up.extend((1..=10).map(|i| 100.0 + i as f64));
        let mut down = vec![100.0; 20];
        down.extend((1..=10).map(|i| 100.0 - i as f64));
        // Make Sharpe defined in the formation window.
        up[5] = 101.0;
        down[7] = 99.0;
        let data = vec![series("UA", &up), series("DB", &down)];
        let cfg = BacktestConfig {
            k2: 2,
            ..BacktestConfig::default()
        };
        let out = run(&data, &FnEmbedder("t".into(), one_hot), &cfg, None).unwrap();
        let p = &out.report.periods[0];
        assert!(p.period_return.abs() < 1e-15);
        assert_eq!(out.curve.last().1, 1.0);
    }

    #[test]
    fn thin_universe_errors_or_is_skipped() {
        let data = vec![series("UA", &[1.0; 40]), series("UB", &[1.0; 40])];
        let cfg = BacktestConfig::default();
        let err = run(&data, &FnEmbedder("t".into(), one_hot), &cfg, None).unwrap_err();
        assert!(matches!(err, BacktestError::ThinUniverse { available: 2, needed: 5, .. }));
        let cfg = BacktestConfig {
            skip_thin_dates: true,
            ..cfg
        };
        let out = run(&data, &FnEmbedder("t".into(), one_hot), &cfg, None).unwrap();
        assert!(out.report.periods.iter().all(|p| p.portfolio.is_none()));
        assert_eq!(out.report.metrics.total_return, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(BacktestConfig::default().validate().is_ok());
        let c = BacktestConfig {
            holding_period: 11,
            ..BacktestConfig::default()
        };
        assert!(c.validate().is_err());
        let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let c = BacktestConfig {
            start_date: Some(d),
            end_date: Some(d),
            ..BacktestConfig::default()
        };
        assert!(c.validate().is_err());
        let data = vec![series("UA", &[1.0; 25])];
        assert!(matches!(
            run(&data, &FnEmbedder("t".into(), one_hot), &BacktestConfig::default(), None),
            Err(BacktestError::NoRebalanceDates)
        ));
    }
}
