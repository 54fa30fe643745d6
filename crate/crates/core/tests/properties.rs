mod common;

use std::collections::BTreeSet;

use chartfolio::autoencoder::Embedding;
use chartfolio::backtest::{self, BacktestConfig, FnEmbedder};
use chartfolio::chart_render::{render, RenderConfig, BLACK, GREEN, RED, WHITE};
use chartfolio::graph_cluster::{build_graph, cluster, cluster_with_trace, modularity, SimilarityGraph};
use chartfolio::market_data::{extract_windows, parse_csv, write_csv, OhlcBar, OhlcSeries, PriceWindow, TradingCalendar};
use chartfolio::portfolio::{allocate, Sharpe, StockScore};
use chrono::{Days, NaiveDate};
use proptest::prelude::*;

fn day0() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
}

/// Bars from `(open, close, up_wick, down_wick)` in integer ticks.
fn bars_from(raw: &[(u32, u32, u32, u32)], gaps: &[u32]) -> Vec<OhlcBar> {
    let mut date = day0();
    raw.iter()
        .enumerate()
        .map(|(i, &(o, c, up, down))| {
            date = date + Days::new(1 + gaps.get(i).copied().unwrap_or(0) as u64);
            let (o, c) = (o as f64 + 50.0, c as f64 + 50.0);
            OhlcBar::new(date, o, o.max(c) + up as f64, o.min(c) - down as f64, c).unwrap()
        })
        .collect()
}

fn bars(len: impl Into<prop::collection::SizeRange>) -> impl Strategy<Value = Vec<(u32, u32, u32, u32)>> {
    prop::collection::vec((0u32..40, 0u32..40, 0u32..6, 0u32..6), len)
}

fn embedding(symbol: &str, vector: Vec<f64>) -> Embedding {
    Embedding {
        symbol: symbol.into(),
        window_start: day0(),
        vector,
        model_id: "m".into(),
    }
}

fn graph_from(w: &[f64], n: usize, order: &[usize]) -> SimilarityGraph {
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = w[order[i] * n + order[j]];
        }
    }
    let names = (0..n).map(|i| format!("p{i:02}")).collect();
    SimilarityGraph::from_weights(names, p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn price_csv_round_trips(raw in bars(1..30), gaps in prop::collection::vec(0u32..3, 30), hundredths in any::<bool>()) {
        let scale = if hundredths { 0.01 } else { 1.0 };
        let bars: Vec<OhlcBar> = bars_from(&raw, &gaps).iter().map(|b| b.map_prices(|p| p * scale)).collect();
        let series = vec![
            OhlcSeries::new("AAA", bars.clone()).unwrap(),
            OhlcSeries::new("BBB", bars.iter().map(|b| b.map_prices(|p| p * 2.0)).collect()).unwrap(),
        ];
        let mut buf = Vec::new();
        write_csv(&series, &mut buf).unwrap();
        let loaded = parse_csv(&buf[..], "t", None).unwrap();
        prop_assert!(loaded.rejected.is_empty());
        prop_assert_eq!(loaded.series, series);
    }

    #[test]
    fn windows_are_complete_and_contiguous(
        raw in bars(1..60),
        gaps in prop::collection::vec(prop_oneof![4 => Just(0u32), 1 => 1u32..3], 60),
        window in 1usize..25,
        stride in 1usize..12,
    ) {
        let series = OhlcSeries::new("S", bars_from(&raw, &gaps)).unwrap();
        // The calendar holds every day, so a gap in the series breaks contiguity.
        let span: Vec<NaiveDate> = (0..200).map(|d| day0() + Days::new(d)).collect();
        let calendar = TradingCalendar::new(span);
        let free = extract_windows(&series, window, stride, None).unwrap();
        let expected = if raw.len() >= window { (raw.len() - window) / stride + 1 } else { 0 };
        prop_assert_eq!(free.len(), expected);
        let strict = extract_windows(&series, window, stride, Some(&calendar)).unwrap();
        for w in &free {
            prop_assert_eq!(w.len(), window);
            prop_assert_eq!(w.start_index % stride, 0);
            prop_assert_eq!(&w.bars[..], &series.bars()[w.start_index..w.start_index + window]);
            let consecutive = w.bars.windows(2).all(|p| p[1].date == p[0].date + Days::new(1));
            prop_assert_eq!(consecutive, strict.contains(w));
        }
    }

    #[test]
    fn render_is_deterministic_and_invariant(
        raw in bars(20),
        shift in 0u32..1000,
        power in -4i32..12,
        size in prop_oneof![Just(32u32), Just(64), Just(97)],
    ) {
        let window = PriceWindow { symbol: "S".into(), start_index: 0, bars: bars_from(&raw, &[]) };
        let cfg = RenderConfig::square(size);
        let img = render(&window, &cfg).unwrap();
        prop_assert_eq!(&render(&window, &cfg).unwrap(), &img);
        // Integer shifts and power-of-two scales are exact in binary floating point.
        let factor = 2f64.powi(power);
        let moved = PriceWindow {
            bars: window.bars.iter().map(|b| b.map_prices(|p| (p + shift as f64) * factor)).collect(),
            ..window.clone()
        };
        prop_assert_eq!(render(&moved, &cfg).unwrap().pixels, img.pixels.clone());
        let palette = [WHITE, GREEN, RED, BLACK];
        let counts: usize = palette.iter().map(|c| img.count_color(*c)).sum();
        prop_assert_eq!(counts, (size * size) as usize);
        let up = window.bars.iter().filter(|b| b.close >= b.open).count();
        prop_assert_eq!(img.count_color(GREEN) > 0, up > 0);
        prop_assert_eq!(img.count_color(RED) > 0, up < window.bars.len());
    }

    #[test]
    fn clustering_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..10, rot in 0usize..10) {
        let w = common::random_weights(&mut common::rng(seed), n);
        let identity: Vec<usize> = (0..n).collect();
        let mut order = identity.clone();
        order.rotate_left(rot % n);
        order.reverse();
        let a = cluster(&graph_from(&w, n, &identity));
        let b = cluster(&graph_from(&w, n, &order));
        prop_assert!((a.modularity - b.modularity).abs() <= 1e-12);
        // Communities as sets of original node ids.
        let sets = |c: &chartfolio::graph_cluster::ClusterAssignment, order: &[usize]| -> BTreeSet<BTreeSet<usize>> {
            c.communities()
                .into_iter()
                .map(|m| m.iter().map(|name| order[name[1..].parse::<usize>().unwrap()]).collect())
                .collect()
        };
        prop_assert_eq!(sets(&a, &identity), sets(&b, &order));
    }

    #[test]
    fn merge_gains_match_recomputed_modularity(seed in any::<u64>(), n in 2usize..12) {
        let w = common::random_weights(&mut common::rng(seed), n);
        let graph = SimilarityGraph::from_weights((0..n).map(|i| format!("s{i:02}")).collect(), w.clone()).unwrap();
        let (result, merges) = cluster_with_trace(&graph);
        let mut labels: Vec<usize> = (0..n).collect();
        let mut q = common::brute_modularity(&w, n, &labels);
        for m in &merges {
            prop_assert!(m.delta_q > 0.0);
            for l in labels.iter_mut() {
                if *l == m.absorbed {
                    *l = m.kept;
                }
            }
            let next = common::brute_modularity(&w, n, &labels);
            prop_assert!((next - q - m.delta_q).abs() <= 1e-12, "gain {} vs {}", m.delta_q, next - q);
            q = next;
        }
        prop_assert!((q - result.modularity).abs() <= 1e-12);
        prop_assert!((modularity(&graph, &labels).unwrap() - q).abs() <= 1e-12);
    }

    #[test]
    fn graph_ignores_input_order(vectors in prop::collection::vec(prop::collection::vec(0.1f64..1.0, 4), 2..8)) {
        let embs: Vec<Embedding> = vectors.iter().enumerate().map(|(i, v)| embedding(&format!("s{i:02}"), v.clone())).collect();
        let mut reversed = embs.clone();
        reversed.reverse();
        let a = build_graph(&embs).unwrap();
        let b = build_graph(&reversed).unwrap();
        prop_assert_eq!(a.nodes(), b.nodes());
        for i in 0..a.len() {
            for j in 0..a.len() {
                prop_assert_eq!(a.weight(i, j), b.weight(i, j));
            }
        }
    }

    #[test]
    fn allocation_depends_only_on_sharpe_ranks(
        labels in prop::collection::vec(0usize..4, 5..14),
        sharpes in prop::collection::vec(-2.0f64..2.0, 14),
        k2 in 1usize..6,
    ) {
        // Relabel to dense community ids.
        let ids: BTreeSet<usize> = labels.iter().copied().collect();
        let dense: Vec<usize> = labels.iter().map(|l| ids.iter().position(|x| x == l).unwrap()).collect();
        let clusters = chartfolio::graph_cluster::ClusterAssignment {
            labels: dense.iter().enumerate().map(|(i, c)| (format!("s{i:02}"), *c)).collect(),
            modularity: 0.0,
            rebalance_date: None,
        };
        let scores = |f: &dyn Fn(f64) -> f64| -> Vec<StockScore> {
            (0..labels.len())
                .map(|i| StockScore {
                    symbol: format!("s{i:02}"),
                    sharpe: Sharpe::Defined(f(sharpes[i])),
                    window_start: day0(),
                    window_end: day0(),
                })
                .collect()
        };
        let base = allocate(&clusters, &scores(&|x| x), k2).unwrap();
        let moved = allocate(&clusters, &scores(&|x| (3.0 * x).exp() + 7.0), k2).unwrap();
        prop_assert_eq!(base.symbols(), moved.symbols());
        prop_assert_eq!(base.holdings.len(), k2);
        let total: f64 = base.holdings.iter().map(|h| h.weight).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        let distinct: BTreeSet<&str> = base.symbols().into_iter().collect();
        prop_assert_eq!(distinct.len(), k2);
    }
}

/// Random-walk universe: `n` symbols over `days` consecutive calendar days.
fn universe(seed: u64, n: usize, days: usize) -> Vec<OhlcSeries> {
    use rand::Rng;
    let mut r = common::rng(seed);
    (0..n)
        .map(|s| {
            let mut close = 100.0;
            let bars = (0..days)
                .map(|d| {
                    let open = close;
                    close *= 1.0 + r.random_range(-0.03..0.03);
                    OhlcBar::new(day0() + Days::new(d as u64), open, open.max(close) * 1.01, open.min(close) * 0.99, close).unwrap()
                })
                .collect();
            OhlcSeries::new(format!("S{s:02}"), bars).unwrap()
        })
        .collect()
}

/// A content-dependent embedding so the clustering varies with prices.
fn shape_embedder() -> FnEmbedder<impl Fn(&PriceWindow) -> Vec<f64>> {
    FnEmbedder("shape".into(), |w: &PriceWindow| {
        let c = w.closes();
        let base = c[0];
        vec![c[c.len() / 3] / base, c[2 * c.len() / 3] / base, c[c.len() - 1] / base, 1.0]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn equity_curve_compounds_period_returns(seed in any::<u64>()) {
        let data = universe(seed, 9, 90);
        let cfg = BacktestConfig { k2: 4, ..BacktestConfig::default() };
        let out = backtest::run(&data, &shape_embedder(), &cfg, None).unwrap();
        let product: f64 = out.report.periods.iter().map(|p| 1.0 + p.period_return).product();
        let values = out.curve.values();
        prop_assert!((values[values.len() - 1] / values[0] - product).abs() <= 1e-9);
        for p in &out.report.periods {
            let h = &p.portfolio.as_ref().unwrap().holdings;
            let mean = p.compound_returns.iter().zip(h).map(|(r, h)| r * h.weight).sum::<f64>();
            prop_assert!((mean - p.period_return).abs() <= 1e-12);
        }
    }

    #[test]
    fn later_prices_do_not_change_earlier_decisions(seed in any::<u64>(), cut in 40usize..70) {
        let data = universe(seed, 9, 90);
        let cutoff = day0() + Days::new(cut as u64);
        let mutated: Vec<OhlcSeries> = data
            .iter()
            .map(|s| {
                let bars = s.bars().iter().map(|b| if b.date > cutoff { b.map_prices(|p| p * 1.7) } else { *b });
                OhlcSeries::new(s.symbol(), bars.collect()).unwrap()
            })
            .collect();
        let cfg = BacktestConfig { k2: 4, ..BacktestConfig::default() };
        let a = backtest::run(&data, &shape_embedder(), &cfg, None).unwrap();
        let b = backtest::run(&mutated, &shape_embedder(), &cfg, None).unwrap();
        prop_assert_eq!(a.report.periods.len(), b.report.periods.len());
        for (pa, pb) in a.report.periods.iter().zip(&b.report.periods) {
            if pa.rebalance_date <= cutoff {
                prop_assert_eq!(&pa.clusters, &pb.clusters);
                prop_assert_eq!(&pa.portfolio, &pb.portfolio);
            }
            if pa.hold_end <= cutoff {
                prop_assert_eq!(pa.period_return, pb.period_return);
            }
        }
    }
}
