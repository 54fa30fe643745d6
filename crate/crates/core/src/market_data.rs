//! Adjusted OHLC price series: CSV ingestion, validation, windowing and returns.
//!
//! The input format is a UTF-8 CSV with a header row naming the columns
//! `date,symbol,open,high,low,close` (any order, extra columns ignored).
//! Dates are ISO-8601 (`YYYY-MM-DD`). Prices are adjusted upstream; nothing
//! here corrects for splits or dividends.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

/// Why a single bar fails validation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BarError {
    #[error("{field} is not a finite number")]
    NonFinite { field: &'static str },
    #[error("{field} must be strictly positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("low {low} exceeds high {high}")]
    LowAboveHigh { low: f64, high: f64 },
    #[error("low {low} exceeds min(open, close) {body_low}")]
    LowAboveBody { low: f64, body_low: f64 },
    #[error("high {high} is below max(open, close) {body_high}")]
    HighBelowBody { high: f64, body_high: f64 },
}

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}: missing required column `{column}` in header")]
    MissingColumn {
        source_name: String,
        column: &'static str,
    },
    #[error("{source_name}:{line}: {reason}")]
    Unparseable {
        source_name: String,
        line: u64,
        reason: String,
    },
    #[error("{source_name}: no valid rows")]
    Empty { source_name: String },
    #[error("series {symbol}: dates must be strictly increasing ({prev} then {next})")]
    UnorderedDates {
        symbol: String,
        prev: NaiveDate,
        next: NaiveDate,
    },
    #[error("series {symbol}: bar on {date}: {source}")]
    InvalidBar {
        symbol: String,
        date: NaiveDate,
        #[source]
        source: BarError,
    },
    #[error("{what} must be at least 1")]
    ZeroParameter { what: &'static str },
    #[error("series {symbol} has {bars} bars; at least 2 are needed for returns")]
    TooShort { symbol: String, bars: usize },
    #[error("csv write failed: {0}")]
    Write(#[from] csv::Error),
}

/// One trading day of adjusted prices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OhlcBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl OhlcBar {
    pub fn new(
        date: NaiveDate,
        open: f64,
        high: f64,
        low: f64,
        close: f64,
    ) -> Result<Self, BarError> {
        let bar = Self {
            date,
            open,
            high,
            low,
            close,
        };
        bar.validate()?;
        Ok(bar)
    }

    pub fn validate(&self) -> Result<(), BarError> {
        for (field, value) in [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
        ] {
            if !value.is_finite() {
                return Err(BarError::NonFinite { field });
            }
            if value <= 0.0 {
                return Err(BarError::NonPositive { field, value });
            }
        }
        if self.low > self.high {
            return Err(BarError::LowAboveHigh {
                low: self.low,
                high: self.high,
            });
        }
        let body_low = self.open.min(self.close);
        let body_high = self.open.max(self.close);
        if self.low > body_low {
            return Err(BarError::LowAboveBody {
                low: self.low,
                body_low,
            });
        }
        if self.high < body_high {
            return Err(BarError::HighBelowBody {
                high: self.high,
                body_high,
            });
        }
        Ok(())
    }

    /// The same bar with every price passed through `f`.
    pub fn map_prices(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            date: self.date,
            open: f(self.open),
            high: f(self.high),
            low: f(self.low),
            close: f(self.close),
        }
    }
}

/// Date-ordered bars for one ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct OhlcSeries {
    symbol: String,
    bars: Vec<OhlcBar>,
}

impl OhlcSeries {
    pub fn new(symbol: impl Into<String>, bars: Vec<OhlcBar>) -> Result<Self, MarketDataError> {
        let symbol = symbol.into();
        for bar in &bars {
            bar.validate()
                .map_err(|source| MarketDataError::InvalidBar {
                    symbol: symbol.clone(),
                    date: bar.date,
                    source,
                })?;
        }
        for pair in bars.windows(2) {
            if pair[1].date <= pair[0].date {
                return Err(MarketDataError::UnorderedDates {
                    symbol,
                    prev: pair[0].date,
                    next: pair[1].date,
                });
            }
        }
        Ok(Self { symbol, bars })
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn bars(&self) -> &[OhlcBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    /// Index of the bar dated `date`, if any.
    pub fn position(&self, date: NaiveDate) -> Option<usize> {
        self.bars.binary_search_by_key(&date, |b| b.date).ok()
    }
}

/// The ordered set of trading days against which gaps are detected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradingCalendar {
    dates: Vec<NaiveDate>,
}

impl TradingCalendar {
    pub fn new(mut dates: Vec<NaiveDate>) -> Self {
        dates.sort_unstable();
        dates.dedup();
        Self { dates }
    }

    /// Union of every date seen in `series`.
    pub fn from_series(series: &[OhlcSeries]) -> Self {
        Self::new(
            series
                .iter()
                .flat_map(|s| s.bars.iter().map(|b| b.date))
                .collect(),
        )
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.index_of(date).is_some()
    }
}

/// `len` consecutive trading-day bars cut from a parent series.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceWindow {
    pub symbol: String,
    /// Offset of the first bar in the parent series.
    pub start_index: usize,
    pub bars: Vec<OhlcBar>,
}

impl PriceWindow {
    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn start_date(&self) -> NaiveDate {
        self.bars[0].date
    }

    pub fn end_date(&self) -> NaiveDate {
        self.bars[self.bars.len() - 1].date
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }
}

/// A row that was read but rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct RowDiagnostic {
    pub source_name: String,
    /// 1-based line number in the file, header included.
    pub line: u64,
    pub reason: String,
}

impl fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.source_name, self.line, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    /// One series per symbol, sorted by symbol.
    pub series: Vec<OhlcSeries>,
    pub rejected: Vec<RowDiagnostic>,
}

pub fn load_csv(
    path: impl AsRef<Path>,
    calendar: Option<&TradingCalendar>,
) -> Result<LoadedData, MarketDataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MarketDataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(text.as_bytes(), &path.display().to_string(), calendar)
}

const REQUIRED: [&str; 6] = ["date", "symbol", "open", "high", "low", "close"];

/// Parses CSV bytes from any reader. `source_name` only labels diagnostics.
pub fn parse_csv<R: Read>(
    reader: R,
    source_name: &str,
    calendar: Option<&TradingCalendar>,
) -> Result<LoadedData, MarketDataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);

    let unparseable = |line: u64, reason: String| MarketDataError::Unparseable {
        source_name: source_name.to_string(),
        line,
        reason,
    };

    let headers = rdr.headers().map_err(|e| unparseable(1, e.to_string()))?.clone();
    let mut cols = [0usize; 6];
    for (slot, name) in cols.iter_mut().zip(REQUIRED) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or(MarketDataError::MissingColumn {
                source_name: source_name.to_string(),
                column: name,
            })?;
    }
    let [c_date, c_symbol, c_open, c_high, c_low, c_close] = cols;

    let mut by_symbol: BTreeMap<String, BTreeMap<NaiveDate, OhlcBar>> = BTreeMap::new();
    let mut rejected = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            unparseable(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| {
            record
                .get(i)
                .ok_or_else(|| unparseable(line, format!("row has only {} fields", record.len())))
        };
        let date_text = field(c_date)?;
        let date = NaiveDate::parse_from_str(date_text, "%Y-%m-%d")
            .map_err(|e| unparseable(line, format!("bad date `{date_text}`: {e}")))?;
        let symbol = field(c_symbol)?;
        if symbol.is_empty() {
            return Err(unparseable(line, "empty symbol".to_string()));
        }
        let price = |i: usize, name: &str| -> Result<f64, MarketDataError> {
            let text = field(i)?;
            text.parse::<f64>()
                .map_err(|_| unparseable(line, format!("bad {name} `{text}`")))
        };
        let open = price(c_open, "open")?;
        let high = price(c_high, "high")?;
        let low = price(c_low, "low")?;
        let close = price(c_close, "close")?;

        let mut reject = |reason: String| {
            rejected.push(RowDiagnostic {
                source_name: source_name.to_string(),
                line,
                reason,
            })
        };
        let bar = match OhlcBar::new(date, open, high, low, close) {
            Ok(bar) => bar,
            Err(e) => {
                reject(e.to_string());
                continue;
            }
        };
        if let Some(cal) = calendar {
            if !cal.contains(date) {
                reject(format!("{date} is not a trading day in the calendar"));
                continue;
            }
        }
        let bars = by_symbol.entry(symbol.to_string()).or_default();
        if bars.contains_key(&date) {
            reject(format!("duplicate bar for {symbol} on {date}"));
            continue;
        }
        bars.insert(date, bar);
    }

    if by_symbol.is_empty() {
        return Err(MarketDataError::Empty {
            source_name: source_name.to_string(),
        });
    }
    let series = by_symbol
        .into_iter()
        .map(|(symbol, bars)| OhlcSeries {
            symbol,
            bars: bars.into_values().collect(),
        })
        .collect();
    Ok(LoadedData { series, rejected })
}

/// Writes series in the ingestion format, grouped by symbol then date.
pub fn write_csv<W: Write>(series: &[OhlcSeries], writer: W) -> Result<(), MarketDataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(REQUIRED)?;
    for s in series {
        for b in &s.bars {
            wtr.write_record([
                b.date.to_string(),
                s.symbol.clone(),
                b.open.to_string(),
                b.high.to_string(),
                b.low.to_string(),
                b.close.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Cuts complete windows at bar offsets `0, stride, 2*stride, ...`.
///
/// With a calendar, a window whose bars are not consecutive calendar days is
/// dropped. Without one every window is taken as contiguous.
pub fn extract_windows(
    series: &OhlcSeries,
    window: usize,
    stride: usize,
    calendar: Option<&TradingCalendar>,
) -> Result<Vec<PriceWindow>, MarketDataError> {
    if window == 0 {
        return Err(MarketDataError::ZeroParameter { what: "window" });
    }
    if stride == 0 {
        return Err(MarketDataError::ZeroParameter { what: "stride" });
    }
    let positions: Option<Vec<Option<usize>>> =
        calendar.map(|cal| series.bars.iter().map(|b| cal.index_of(b.date)).collect());
    let contiguous = |start: usize| match &positions {
        None => true,
        Some(pos) => pos[start..start + window]
            .windows(2)
            .all(|p| matches!((p[0], p[1]), (Some(a), Some(b)) if b == a + 1))
            && pos[start].is_some(),
    };

    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= series.bars.len() {
        if contiguous(start) {
            out.push(PriceWindow {
                symbol: series.symbol.clone(),
                start_index: start,
                bars: series.bars[start..start + window].to_vec(),
            });
        }
        start += stride;
    }
    Ok(out)
}

/// Simple close-to-close returns, `(date of later close, fraction)`.
pub fn daily_returns(series: &OhlcSeries) -> Result<Vec<(NaiveDate, f64)>, MarketDataError> {
    if series.bars.len() < 2 {
        return Err(MarketDataError::TooShort {
            symbol: series.symbol.clone(),
            bars: series.bars.len(),
        });
    }
    Ok(series
        .bars
        .windows(2)
        .map(|p| (p[1].date, simple_return(p[0].close, p[1].close)))
        .collect())
}

/// `(final - initial) / initial`.
pub fn simple_return(initial: f64, final_value: f64) -> f64 {
    (final_value - initial) / initial
}

/// Close-to-close returns of a plain price slice.
pub fn returns_from_closes(closes: &[f64]) -> Vec<f64> {
    closes
        .windows(2)
        .map(|p| simple_return(p[0], p[1]))
        .collect()
}
