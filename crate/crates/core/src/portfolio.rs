//! Sharpe scoring and cluster-diversified, equally weighted portfolio selection.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use chrono::NaiveDate;
use thiserror::Error;

use crate::graph_cluster::ClusterAssignment;
use crate::market_data::{returns_from_closes, PriceWindow};

#[derive(Debug, Error, PartialEq)]
pub enum PortfolioError {
    #[error("need at least 2 returns for a Sharpe ratio, got {0}")]
    TooFewReturns(usize),
    #[error("k2 must be positive")]
    ZeroK2,
    #[error("universe of {universe} stocks is smaller than k2 = {k2}")]
    UniverseTooSmall { universe: usize, k2: usize },
    #[error("no score for {0}")]
    MissingScore(String),
    #[error("clustering is empty")]
    NoClusters,
}

/// Sharpe ratio with an explicit undefined state for zero-variance returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sharpe {
    Defined(f64),
    Undefined,
}

impl Sharpe {
    pub fn value(self) -> Option<f64> {
        match self {
            Sharpe::Defined(v) => Some(v),
            Sharpe::Undefined => None,
        }
    }

    /// Total order: undefined ranks below every defined value.
    pub fn rank_cmp(self, other: Sharpe) -> Ordering {
        match (self, other) {
            (Sharpe::Defined(a), Sharpe::Defined(b)) => a.total_cmp(&b),
            (Sharpe::Defined(_), Sharpe::Undefined) => Ordering::Greater,
            (Sharpe::Undefined, Sharpe::Defined(_)) => Ordering::Less,
            (Sharpe::Undefined, Sharpe::Undefined) => Ordering::Equal,
        }
    }
}

impl fmt::Display for Sharpe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sharpe::Defined(v) => write!(f, "{v:?}"),
            Sharpe::Undefined => f.write_str("undefined"),
        }
    }
}

/// Mean and sample standard deviation (`n - 1` denominator).
pub fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `mean / sd` with zero risk-free rate.
///
/// Identical returns, or a deviation that is pure rounding noise relative to
/// the mean, give [`Sharpe::Undefined`].
pub fn sharpe_ratio(returns: &[f64]) -> Result<Sharpe, PortfolioError> {
    if returns.len() < 2 {
        return Err(PortfolioError::TooFewReturns(returns.len()));
    }
    if returns.iter().all(|&r| r == returns[0]) {
        return Ok(Sharpe::Undefined);
    }
    let (mean, sd) = mean_and_sd(returns);
    if sd == 0.0 || sd <= 1e-12 * mean.abs() || !sd.is_finite() {
        return Ok(Sharpe::Undefined);
    }
    Ok(Sharpe::Defined(mean / sd))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StockScore {
    pub symbol: String,
    pub sharpe: Sharpe,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
}

/// Scores a window by the Sharpe ratio of its close-to-close returns.
pub fn score_window(window: &PriceWindow) -> Result<StockScore, PortfolioError> {
    let returns = returns_from_closes(&window.closes());
    Ok(StockScore {
        symbol: window.symbol.clone(),
        sharpe: sharpe_ratio(&returns)?,
        window_start: window.start_date(),
        window_end: window.end_date(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Holding {
    pub symbol: String,
    pub weight: f64,
    pub community_id: usize,
    pub sharpe: Sharpe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    /// In selection order: per-community picks first, then the remainder.
    pub holdings: Vec<Holding>,
    pub formation_date: Option<NaiveDate>,
}

impl Portfolio {
    pub fn symbols(&self) -> Vec<&str> {
        self.holdings.iter().map(|h| h.symbol.as_str()).collect()
    }

    pub fn source_clusters(&self) -> BTreeMap<&str, usize> {
        self.holdings
            .iter()
            .map(|h| (h.symbol.as_str(), h.community_id))
            .collect()
    }

    /// Rows of `formation_date,symbol,weight,community_id,sharpe`.
    pub fn write_csv<W: Write>(&self, mut out: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(out, "formation_date,symbol,weight,community_id,sharpe")?;
        }
        let date = self.formation_date.map(|d| d.to_string()).unwrap_or_default();
        for h in &self.holdings {
            writeln!(
                out,
                "{date},{},{:?},{},{}",
                h.symbol, h.weight, h.community_id, h.sharpe
            )?;
        }
        Ok(())
    }
}

/// Best first: higher Sharpe, then lexicographically smaller ticker.
fn by_rank(a: &(&str, Sharpe), b: &(&str, Sharpe)) -> Ordering {
    b.1.rank_cmp(a.1).then_with(|| a.0.cmp(b.0))
}

/// Picks `k2` stocks across `K1` clusters and weights them `1/k2`.
///
/// With `Q = k2 / K1` and `R = k2 % K1`: the top `Q` of every community,
/// then the best `R` of what is left across the whole universe. Slots a
/// small community cannot fill are added to the remainder. When `Q = 0`
/// (more communities than slots) the remainder is drawn from each
/// community's best stock only, so every pick comes from a distinct community.
pub fn allocate(
    clusters: &ClusterAssignment,
    scores: &[StockScore],
    k2: usize,
) -> Result<Portfolio, PortfolioError> {
    if k2 == 0 {
        return Err(PortfolioError::ZeroK2);
    }
    let k1 = clusters.community_count();
    if k1 == 0 {
        return Err(PortfolioError::NoClusters);
    }
    let score_of: BTreeMap<&str, Sharpe> =
        scores.iter().map(|s| (s.symbol.as_str(), s.sharpe)).collect();
    for sym in clusters.labels.keys() {
        if !score_of.contains_key(sym.as_str()) {
            return Err(PortfolioError::MissingScore(sym.clone()));
        }
    }
    let universe = clusters.labels.len();
    if universe < k2 {
        return Err(PortfolioError::UniverseTooSmall { universe, k2 });
    }

    let q = k2 / k1;
    let r = k2 % k1;
    let mut ranked: Vec<Vec<(&str, Sharpe)>> = clusters
        .communities()
        .iter()
        .map(|members| {
            let mut m: Vec<(&str, Sharpe)> = members
                .iter()
                .map(|s| {
                    let key = score_of
                        .get_key_value(s.as_str())
                        .expect("checked above");
                    (*key.0, *key.1)
                })
                .collect();
            m.sort_by(by_rank);
            m
        })
        .collect();

    let mut chosen: Vec<(&str, Sharpe, usize)> = Vec::with_capacity(k2);
    let mut shortfall = 0;
    for (cid, members) in ranked.iter_mut().enumerate() {
        let take = q.min(members.len());
        shortfall += q - take;
        chosen.extend(members.drain(..take).map(|(s, sh)| (s, sh, cid)));
    }

    let remainder = r + shortfall;
    let mut pool: Vec<(&str, Sharpe, usize)> = if q == 0 {
        ranked
            .iter()
            .enumerate()
            .filter_map(|(cid, m)| m.first().map(|&(s, sh)| (s, sh, cid)))
            .collect()
    } else {
        ranked
            .iter()
            .enumerate()
            .flat_map(|(cid, m)| m.iter().map(move |&(s, sh)| (s, sh, cid)))
            .collect()
    };
    pool.sort_by(|a, b| by_rank(&(a.0, a.1), &(b.0, b.1)));
    chosen.extend(pool.into_iter().take(remainder));

    debug_assert_eq!(
        chosen.iter().map(|c| c.0).collect::<BTreeSet<_>>().len(),
        chosen.len()
    );
    if chosen.len() < k2 {
        return Err(PortfolioError::UniverseTooSmall { universe, k2 });
    }
    let weight = 1.0 / k2 as f64;
    Ok(Portfolio {
        holdings: chosen
            .into_iter()
            .map(|(s, sh, cid)| Holding {
                symbol: s.to_string(),
                weight,
                community_id: cid,
                sharpe: sh,
            })
            .collect(),
        formation_date: clusters.rebalance_date,
    })
}
