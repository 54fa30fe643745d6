#![allow(dead_code)]

use std::path::{Path, PathBuf};

use chartfolio::market_data::{OhlcBar, PriceWindow};
use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture(name: &str) -> PathBuf {
    manifest_dir().join("tests/fixtures").join(name)
}

pub fn golden(name: &str) -> PathBuf {
    manifest_dir().join("tests/golden").join(name)
}

/// Reads a golden file, or writes `actual` to it when `CHARTFOLIO_BLESS=1`.
pub fn golden_bytes(path: &Path, actual: &[u8]) -> Vec<u8> {
    if std::env::var("CHARTFOLIO_BLESS").as_deref() == Ok("1") {
        std::fs::write(path, actual).unwrap();
    }
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Closes 100..119, low = close - 1, high = close + 1, open = previous close (99 first).
pub fn reference_window() -> PriceWindow {
    let start = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
    let bars = (0..20)
        .map(|i| {
            let close = 100.0 + i as f64;
            OhlcBar::new(
                start + chrono::Days::new(i),
                close - 1.0,
                close + 1.0,
                close - 1.0,
                close,
            )
            .unwrap()
        })
        .collect();
    PriceWindow {
        symbol: "REF".into(),
        start_index: 0,
        bars,
    }
}

/// Pixel payload of a binary PPM (P6, maxval 255).
pub fn read_ppm(path: &Path) -> (u32, u32, Vec<u8>) {
    let bytes = std::fs::read(path).unwrap();
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8(bytes[start..pos].to_vec()).unwrap());
    }
    assert_eq!(fields[0], "P6");
    assert_eq!(fields[3], "255");
    let w: u32 = fields[1].parse().unwrap();
    let h: u32 = fields[2].parse().unwrap();
    (w, h, bytes[pos + 1..].to_vec())
}

/// Random symmetric non-negative weights with zero diagonal, some edges absent.
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() };
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    w
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Direct double sum `(1/2m) sum_ij [w_ij - s_i s_j / 2m] delta(c_i, c_j)`.
pub fn brute_modularity(w: &[f64], n: usize, labels: &[usize]) -> f64 {
    let s: Vec<f64> = (0..n).map(|i| (0..n).map(|j| w[i * n + j]).sum()).collect();
    let two_m: f64 = s.iter().sum();
    if two_m == 0.0 {
        return 0.0;
    }
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                q += w[i * n + j] - s[i] * s[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Every set partition of `0..n` as restricted-growth label strings.
pub fn all_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(i: usize, n: usize, cur: &mut Vec<usize>, max: usize, out: &mut Vec<Vec<usize>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for l in 0..=max + 1 {
            cur.push(l);
            rec(i + 1, n, cur, max.max(l), out);
            cur.pop();
        }
    }
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    let mut cur = vec![0];
    rec(1, n, &mut cur, 0, &mut out);
    out
}

/// Minimum over `i <= j` of `(v_j - v_i) / v_i` where `v_i` is the running maximum at `j`.
pub fn brute_drawdown(v: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..v.len() {
        if v[..i].iter().any(|&x| x > v[i]) {
            continue;
        }
        for j in i..v.len() {
            if v[j] > v[i] {
                break;
            }
            worst = worst.min((v[j] - v[i]) / v[i]);
        }
    }
    worst
}

/// Sample Sharpe ratio with an `n - 1` denominator, `None` when the spread is zero.
pub fn oracle_sharpe(closes: &[f64]) -> Option<f64> {
    let r: Vec<f64> = closes.windows(2).map(|p| p[1] / p[0] - 1.0).collect();
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (var > 0.0).then(|| mean / var.sqrt())
}

/// Cleaned closes per symbol from a fixture CSV, in date order.
pub fn fixture_closes(path: &Path) -> (Vec<NaiveDate>, std::collections::BTreeMap<String, Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut dates = std::collections::BTreeSet::new();
    let mut closes: std::collections::BTreeMap<String, Vec<(NaiveDate, f64)>> = Default::default();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let d = NaiveDate::parse_from_str(f[0], "%Y-%m-%d").unwrap();
        dates.insert(d);
        closes.entry(f[1].to_string()).or_default().push((d, f[5].parse().unwrap()));
    }
    let closes = closes
        .into_iter()
        .map(|(s, mut v)| {
            v.sort_by_key(|p| p.0);
            (s, v.into_iter().map(|p| p.1).collect())
        })
        .collect();
    (dates.into_iter().collect(), closes)
}
