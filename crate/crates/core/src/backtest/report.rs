//! Report writers: metrics table, equity curve, trades, SVG plot.

use std::io::{Read, Write};

use chrono::NaiveDate;

use super::{BacktestError, BacktestReport, EquityCurve};

/// Header line noting the annualization conventions.
pub const METRICS_NOTE: &str =
    "annualized: daily mean x252, monthly mean x12, yearly mean x1, daily sharpe x sqrt(252)";

fn comments<W: Write>(out: &mut W, comments: &[String]) -> std::io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    Ok(())
}

pub fn write_metrics<W: Write>(
    report: &BacktestReport,
    provenance: &[String],
    mut out: W,
) -> std::io::Result<()> {
    comments(&mut out, provenance)?;
    writeln!(out, "# {METRICS_NOTE}")?;
    let m = &report.metrics;
    writeln!(out, "metric,value")?;
    writeln!(out, "total_return,{:?}", m.total_return)?;
    writeln!(out, "daily_sharpe,{}", m.daily_sharpe)?;
    writeln!(out, "max_drawdown,{:?}", m.max_drawdown)?;
    writeln!(out, "mean_return_daily,{:?}", m.mean_return_daily)?;
    writeln!(out, "mean_return_monthly,{:?}", m.mean_return_monthly)?;
    writeln!(out, "mean_return_yearly,{:?}", m.mean_return_yearly)?;
    writeln!(out, "win_years,{:?}", m.win_years)?;
    Ok(())
}

pub fn write_equity_curve<W: Write>(
    curve: &EquityCurve,
    provenance: &[String],
    mut out: W,
) -> std::io::Result<()> {
    comments(&mut out, provenance)?;
    writeln!(out, "date,value")?;
    for (d, v) in curve.points() {
        writeln!(out, "{d},{v:?}")?;
    }
    Ok(())
}

/// Reads a `date,value` curve, e.g. a benchmark index. `#` lines are skipped.
pub fn read_curve<R: Read>(input: R) -> Result<EquityCurve, BacktestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let bad = |m: String| BacktestError::InvalidCurve(m);
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() < 2 {
            return Err(bad(format!("line {line}: expected date,value")));
        }
        let d = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| bad(format!("line {line}: {e}")))?;
        let v: f64 = rec[1]
            .parse()
            .map_err(|e| bad(format!("line {line}: {e}")))?;
        points.push((d, v));
    }
    EquityCurve::new(points)
}

/// One row per holding per period.
pub fn write_trades<W: Write>(
    report: &BacktestReport,
    provenance: &[String],
    mut out: W,
) -> std::io::Result<()> {
    comments(&mut out, provenance)?;
    writeln!(
        out,
        "rebalance_date,hold_end,symbol,weight,community_id,sharpe,compound_return"
    )?;
    for p in &report.periods {
        let Some(portfolio) = &p.portfolio else {
            continue;
        };
        for (h, r) in portfolio.holdings.iter().zip(&p.compound_returns) {
            writeln!(
                out,
                "{},{},{},{:?},{},{},{:?}",
                p.rebalance_date, p.hold_end, h.symbol, h.weight, h.community_id, h.sharpe, r
            )?;
        }
    }
    Ok(())
}

pub fn write_periods<W: Write>(
    report: &BacktestReport,
    provenance: &[String],
    mut out: W,
) -> std::io::Result<()> {
    comments(&mut out, provenance)?;
    writeln!(out, "rebalance_date,hold_end,communities,modularity,holdings,period_return")?;
    for p in &report.periods {
        let (k, q) = p
            .clusters
            .as_ref()
            .map_or((0, 0.0), |c| (c.community_count(), c.modularity));
        let n = p.portfolio.as_ref().map_or(0, |x| x.holdings.len());
        writeln!(
            out,
            "{},{},{k},{q:?},{n},{:?}",
            p.rebalance_date, p.hold_end, p.period_return
        )?;
    }
    Ok(())
}

/// Line plot of the strategy curve, optionally against a benchmark rebased to 1.0
/// at the strategy's first date.
pub fn equity_svg(curve: &EquityCurve, benchmark: Option<&EquityCurve>) -> String {
    const W: f64 = 800.0;
    const H: f64 = 400.0;
    const PAD: f64 = 40.0;
    let start = curve.first().0;
    let end = curve.last().0;
    let bench: Vec<(NaiveDate, f64)> = benchmark
        .map(|b| {
            let inside: Vec<_> = b
                .points()
                .iter()
                .copied()
                .filter(|(d, _)| *d >= start && *d <= end)
                .collect();
            let base = inside.first().map_or(1.0, |p| p.1);
            inside.into_iter().map(|(d, v)| (d, v / base)).collect()
        })
        .unwrap_or_default();
    let all = curve.points().iter().chain(bench.iter());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.1), hi.max(p.1))
    });
    let span_v = if hi > lo { hi - lo } else { 1.0 };
    let span_d = ((end - start).num_days().max(1)) as f64;
    let xy = |d: NaiveDate, v: f64| {
        let x = PAD + (d - start).num_days() as f64 / span_d * (W - 2.0 * PAD);
        let y = H - PAD - (v - lo) / span_v * (H - 2.0 * PAD);
        format!("{x:.2},{y:.2}")
    };
    let line = |pts: &[(NaiveDate, f64)], color: &str| {
        let p: Vec<String> = pts.iter().map(|&(d, v)| xy(d, v)).collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            p.join(" ")
        )
    };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"20\" font-size=\"12\">portfolio {start} to {end}, min {lo:.3} max {hi:.3}</text>\n"
    );
    if !bench.is_empty() {
        svg.push_str(&line(&bench, "gray"));
    }
    svg.push_str(&line(curve.points(), "steelblue"));
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_round_trip() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let c = EquityCurve::new(vec![(d, 1.0), (d.succ_opt().unwrap(), 1.0 / 3.0)]).unwrap();
        let mut buf = Vec::new();
        write_equity_curve(&c, &["seed=1".into()], &mut buf).unwrap();
        assert_eq!(read_curve(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn svg_contains_both_lines() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let c = EquityCurve::new(vec![(d, 1.0), (d.succ_opt().unwrap(), 1.1)]).unwrap();
        let b = EquityCurve::new(vec![(d, 50.0), (d.succ_opt().unwrap(), 40.0)]).unwrap();
        let svg = equity_svg(&c, Some(&b));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(equity_svg(&c, None).matches("<polyline").count(), 1);
    }
}
