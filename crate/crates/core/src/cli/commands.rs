use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use super::{CliError, Command};
use crate::autoencoder::{
    encode, load_manifest_images, read_embedding_store, train, write_embedding_store, Checkpoint,
};
use crate::backtest::{
    self, formation_windows, rebalance_schedule, report, StoreEmbedder,
};
use crate::chart_render::{read_manifest, render_universe, write_manifest, ManifestEntry};
use crate::graph_cluster::{build_graph, center_embeddings, cluster};
use crate::market_data::{extract_windows, load_csv, write_csv, OhlcSeries, TradingCalendar};

pub const TRAIN_MANIFEST: &str = "train_manifest.csv";
pub const FORMATION_MANIFEST: &str = "formation_manifest.csv";

/// Exclusive lock held as `<dir>/.lock` for the life of the value.
#[derive(Debug)]
pub struct DirLock(PathBuf);

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn require(path: &Path, producer: &'static str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact {
            path: path.to_path_buf(),
            producer,
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| io(path, e))
}

/// Value of a leading `# key=value` comment line.
fn comment_value(path: &Path, key: &str) -> Option<String> {
    let f = File::open(path).ok()?;
    let prefix = format!("# {key}=");
    BufReader::new(f)
        .lines()
        .map_while(Result::ok)
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix(&prefix).map(str::to_string))
}

fn warn_if_foreign(what: &Path, hash: Option<String>, cfg: &PipelineConfig) {
    let current = cfg.config_hash();
    if let Some(h) = hash.filter(|h| *h != current) {
        eprintln!(
            "warning: {} was produced with config_hash={h}, current config_hash={current}",
            what.display()
        );
    }
}

fn hex(digest: &[u8]) -> String {
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a manifest's entries and the bytes of every chart it names.
fn hash_charts(hasher: &mut Sha256, entries: &[ManifestEntry]) -> Result<(), CliError> {
    for e in entries {
        let bytes = fs::read(&e.path).map_err(|err| io(&e.path, err))?;
        hasher.update(e.symbol.as_bytes());
        hasher.update(e.start_date.to_string().as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(())
}

fn load_data(cfg: &PipelineConfig) -> Result<(Vec<OhlcSeries>, TradingCalendar), CliError> {
    require(&cfg.paths.data, "ingest")?;
    warn_if_foreign(&cfg.paths.data, comment_value(&cfg.paths.data, "config_hash"), cfg);
    let loaded = load_csv(&cfg.paths.data, None)?;
    for r in &loaded.rejected {
        eprintln!("warning: {r}");
    }
    let calendar = TradingCalendar::from_series(&loaded.series);
    Ok((loaded.series, calendar))
}

fn load_manifest(cfg: &PipelineConfig, name: &str) -> Result<Vec<ManifestEntry>, CliError> {
    let path = cfg.paths.charts.join(name);
    require(&path, "render")?;
    warn_if_foreign(&path, comment_value(&path, "config_hash"), cfg);
    let f = File::open(&path).map_err(|e| io(&path, e))?;
    Ok(read_manifest(f, Some(&cfg.paths.charts))?)
}

pub fn dispatch(command: &Command, cfg: &PipelineConfig) -> Result<(), CliError> {
    let _lock = DirLock::acquire(&cfg.paths.report)?;
    match command {
        Command::Ingest(_) => ingest(cfg),
        Command::Render(_) => render(cfg),
        Command::Train(_) => train_cmd(cfg),
        Command::Encode(_) => encode_cmd(cfg),
        Command::Cluster(_) => cluster_cmd(cfg),
        Command::Backtest(_) => backtest_cmd(cfg),
        Command::Report(_) => report_cmd(cfg),
    }
}

fn ingest(cfg: &PipelineConfig) -> Result<(), CliError> {
    let input = &cfg.paths.input;
    if !input.exists() {
        return Err(CliError::Config(format!(
            "paths.input: {} does not exist",
            input.display()
        )));
    }
    let loaded = load_csv(input, None)?;
    for r in &loaded.rejected {
        eprintln!("warning: rejected {r}");
    }
    let out_path = &cfg.paths.data;
    let mut out = create(out_path)?;
    for c in cfg.provenance() {
        writeln!(out, "# {c}").map_err(|e| io(out_path, e))?;
    }
    write_csv(&loaded.series, &mut out)?;
    finish(out, out_path)?;
    let bars: usize = loaded.series.iter().map(OhlcSeries::len).sum();
    println!(
        "ingested {} series, {bars} bars, {} rows rejected -> {}",
        loaded.series.len(),
        loaded.rejected.len(),
        out_path.display()
    );
    Ok(())
}

fn render(cfg: &PipelineConfig) -> Result<(), CliError> {
    let (data, calendar) = load_data(cfg)?;
    let bt = &cfg.backtest;
    let schedule = rebalance_schedule(&calendar, bt);
    let Some(&first) = schedule.first() else {
        return Err(backtest::BacktestError::NoRebalanceDates.into());
    };
    let start = calendar.dates()[first];

    let mut formation = Vec::new();
    for &t in &schedule {
        formation.extend(formation_windows(&data, &calendar, t, bt.formation_window));
    }
    let mut training = Vec::new();
    for s in &data {
        if s.len() < bt.formation_window {
            continue;
        }
        for w in extract_windows(s, bt.formation_window, cfg.charts.train_stride, Some(&calendar))? {
            if cfg.paper_mode || w.end_date() < start {
                training.push(w);
            }
        }
    }
    if training.is_empty() {
        eprintln!(
            "warning: no training window ends before {start}; set backtest.start_date later or use --paper-mode"
        );
    }

    let hash = cfg.config_hash();
    let seed = cfg.seed.to_string();
    let text = [("config_hash", hash.as_str()), ("seed", seed.as_str())];
    let mut all = formation.clone();
    all.extend(training.iter().cloned());
    let entries = render_universe(&all, &cfg.render, &cfg.paths.charts, &text)?;
    let by_key: BTreeMap<(&str, NaiveDate), &ManifestEntry> = entries
        .iter()
        .map(|e| ((e.symbol.as_str(), e.start_date), e))
        .collect();
    let relative = |windows: &[crate::market_data::PriceWindow]| -> Vec<ManifestEntry> {
        let keys: BTreeSet<(&str, NaiveDate)> =
            windows.iter().map(|w| (w.symbol.as_str(), w.start_date())).collect();
        keys.into_iter()
            .map(|k| {
                let e = by_key[&k];
                ManifestEntry {
                    symbol: e.symbol.clone(),
                    start_date: e.start_date,
                    path: PathBuf::from(e.path.file_name().expect("chart file name")),
                }
            })
            .collect()
    };
    let mut comments = cfg.provenance();
    comments.push(format!("backtest_start={start}"));
    comments.push(format!("paper_mode={}", cfg.paper_mode));
    comments.push(format!(
        "render={}",
        serde_json::to_string(&cfg.render).expect("render config serializes")
    ));
    for (name, windows) in [(TRAIN_MANIFEST, &training), (FORMATION_MANIFEST, &formation)] {
        let path = cfg.paths.charts.join(name);
        let mut out = create(&path)?;
        write_manifest(&relative(windows), &comments, &mut out)?;
        finish(out, &path)?;
    }
    println!(
        "rendered {} charts ({} training, {} formation over {} rebalance dates) -> {}",
        entries.len(),
        relative(&training).len(),
        relative(&formation).len(),
        schedule.len(),
        cfg.paths.charts.display()
    );
    Ok(())
}

fn train_cmd(cfg: &PipelineConfig) -> Result<(), CliError> {
    let entries = load_manifest(cfg, TRAIN_MANIFEST)?;
    let arch = cfg.architecture();
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&arch).expect("arch serializes"));
    hasher.update(serde_json::to_vec(&cfg.train).expect("train config serializes"));
    hash_charts(&mut hasher, &entries)?;
    let input_hash = hex(&hasher.finalize());

    let path = &cfg.paths.checkpoint;
    if let Ok(existing) = Checkpoint::load(path) {
        if existing.provenance().get("input_hash") == Some(&input_hash) {
            println!("checkpoint {} is up to date (model {})", path.display(), existing.model_id());
            return Ok(());
        }
    }
    let images = load_manifest_images(&entries)?;
    let (ckpt, log) = train(&images, &arch, &cfg.train)?;
    let provenance = BTreeMap::from([
        ("config_hash".to_string(), cfg.config_hash()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("input_hash".to_string(), input_hash.clone()),
    ]);
    let ckpt = Checkpoint::with_provenance(ckpt.model().clone(), cfg.train.clone(), provenance);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    ckpt.save(path)?;

    let log_path = path.with_extension("log.csv");
    let mut out = create(&log_path)?;
    for c in cfg.provenance() {
        writeln!(out, "# {c}").map_err(|e| io(&log_path, e))?;
    }
    log.write_csv(&mut out).map_err(|e| io(&log_path, e))?;
    finish(out, &log_path)?;
    let first = log.epochs.first().map_or(f64::NAN, |e| e.mean_loss);
    let last = log.epochs.last().map_or(f64::NAN, |e| e.mean_loss);
    println!(
        "trained on {} charts for {} epochs: loss {first:.6} -> {last:.6}; model {} -> {}",
        images.len(),
        log.epochs.len(),
        ckpt.model_id(),
        path.display()
    );
    Ok(())
}

fn encode_cmd(cfg: &PipelineConfig) -> Result<(), CliError> {
    require(&cfg.paths.checkpoint, "train")?;
    let entries = load_manifest(cfg, FORMATION_MANIFEST)?;
    let ckpt = Checkpoint::load(&cfg.paths.checkpoint)?;
    warn_if_foreign(
        &cfg.paths.checkpoint,
        ckpt.provenance().get("config_hash").cloned(),
        cfg,
    );
    let mut hasher = Sha256::new();
    hasher.update(ckpt.model_id().as_bytes());
    hash_charts(&mut hasher, &entries)?;
    let input_hash = hex(&hasher.finalize());

    let path = &cfg.paths.embeddings;
    if comment_value(path, "input_hash").as_deref() == Some(input_hash.as_str()) {
        println!("embedding store {} is up to date", path.display());
        return Ok(());
    }
    let images = load_manifest_images(&entries)?;
    let embeddings = encode(&images, &ckpt)?;
    let mut comments = cfg.provenance();
    comments.push(format!("model_id={}", ckpt.model_id()));
    comments.push(format!("input_hash={input_hash}"));
    let mut out = create(path)?;
    write_embedding_store(&embeddings, &comments, &mut out)?;
    finish(out, path)?;
    println!(
        "encoded {} charts with model {} -> {}",
        embeddings.len(),
        ckpt.model_id(),
        path.display()
    );
    Ok(())
}

fn load_store(cfg: &PipelineConfig) -> Result<Vec<crate::autoencoder::Embedding>, CliError> {
    let path = &cfg.paths.embeddings;
    require(path, "encode")?;
    warn_if_foreign(path, comment_value(path, "config_hash"), cfg);
    let f = File::open(path).map_err(|e| io(path, e))?;
    Ok(read_embedding_store(f)?)
}

fn cluster_cmd(cfg: &PipelineConfig) -> Result<(), CliError> {
    let store = load_store(cfg)?;
    let (_, calendar) = load_data(cfg)?;
    let mut by_start: BTreeMap<NaiveDate, Vec<_>> = BTreeMap::new();
    for e in store {
        by_start.entry(e.window_start).or_default().push(e);
    }
    let path = &cfg.paths.clusters;
    let mut out = create(path)?;
    for c in cfg.provenance() {
        writeln!(out, "# {c}").map_err(|e| io(path, e))?;
    }
    let mut header = true;
    for (start, group) in by_start {
        let end = calendar
            .index_of(start)
            .map(|i| i + cfg.backtest.formation_window - 1)
            .and_then(|i| calendar.dates().get(i).copied())
            .ok_or_else(|| {
                CliError::Data(format!("window start {start} does not fit the price calendar"))
            })?;
        if group.len() < 2 {
            eprintln!("warning: {end}: only {} embedding, skipped", group.len());
            continue;
        }
        let group = if cfg.backtest.center_embeddings {
            center_embeddings(&group)
        } else {
            group
        };
        let assignment = cluster(&build_graph(&group)?).with_date(end);
        assignment.write_csv(&mut out, header).map_err(|e| io(path, e))?;
        header = false;
        println!(
            "{end}: {} stocks, {} communities, Q={:.6}",
            assignment.labels.len(),
            assignment.community_count(),
            assignment.modularity
        );
    }
    finish(out, path)
}

fn backtest_cmd(cfg: &PipelineConfig) -> Result<(), CliError> {
    let store = load_store(cfg)?;
    let (data, calendar) = load_data(cfg)?;
    let models: BTreeSet<&str> = store.iter().map(|e| e.model_id.as_str()).collect();
    if models.len() > 1 {
        return Err(CliError::Data(format!(
            "embedding store mixes models {models:?}; rerun `chartfolio encode`"
        )));
    }
    let embedder = StoreEmbedder::new(&store);
    let outcome = match backtest::run(&data, &embedder, &cfg.backtest, Some(&calendar)) {
        Err(backtest::BacktestError::Embedding { symbol, start, reason }) => {
            return Err(CliError::MissingArtifact {
                path: cfg
                    .paths
                    .embeddings
                    .join(format!("{symbol}@{start}: {reason}")),
                producer: "encode",
            })
        }
        other => other?,
    };
    let dir = &cfg.paths.report;
    let mut prov = cfg.provenance();
    prov.push(format!("model_id={}", outcome.report.model_id));
    let files: [(&str, &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>); 5] = [
        ("metrics.csv", &|w| report::write_metrics(&outcome.report, &prov, w)),
        ("equity_curve.csv", &|w| report::write_equity_curve(&outcome.curve, &prov, w)),
        ("trades.csv", &|w| report::write_trades(&outcome.report, &prov, w)),
        ("periods.csv", &|w| report::write_periods(&outcome.report, &prov, w)),
        ("clusters.csv", &|w| {
            for c in &prov {
                writeln!(w, "# {c}")?;
            }
            let mut header = true;
            for p in &outcome.report.periods {
                if let Some(c) = &p.clusters {
                    c.write_csv(&mut *w, header)?;
                    header = false;
                }
            }
            Ok(())
        }),
    ];
    for (name, write) in files {
        let path = dir.join(name);
        let mut out = create(&path)?;
        write(&mut out).map_err(|e| io(&path, e))?;
        finish(out, &path)?;
    }
    let m = &outcome.report.metrics;
    println!(
        "{} periods: total return {:.4}, daily sharpe {}, max drawdown {:.4} -> {}",
        outcome.report.periods.len(),
        m.total_return,
        m.daily_sharpe,
        m.max_drawdown,
        dir.display()
    );
    Ok(())
}

/// `(metric, value)` rows of a metrics CSV, in file order.
pub fn read_metrics(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let (k, v) = line
            .split_once(',')
            .ok_or_else(|| CliError::Data(format!("{}: bad row `{line}`", path.display())))?;
        rows.push((k.to_string(), v.to_string()));
    }
    Ok(rows)
}

fn report_cmd(cfg: &PipelineConfig) -> Result<(), CliError> {
    let dir = &cfg.paths.report;
    let metrics_path = dir.join("metrics.csv");
    let curve_path = dir.join("equity_curve.csv");
    require(&metrics_path, "backtest")?;
    require(&curve_path, "backtest")?;
    warn_if_foreign(&metrics_path, comment_value(&metrics_path, "config_hash"), cfg);
    let metrics = read_metrics(&metrics_path)?;
    let curve = {
        let f = File::open(&curve_path).map_err(|e| io(&curve_path, e))?;
        report::read_curve(f)?
    };
    let benchmark = match &cfg.paths.benchmark {
        Some(p) => {
            let f = File::open(p)
                .map_err(|e| CliError::Config(format!("paths.benchmark: {}: {e}", p.display())))?;
            Some(report::read_curve(f)?)
        }
        None => None,
    };
    let width = metrics.iter().map(|m| m.0.len()).max().unwrap_or(0);
    println!("# {}", report::METRICS_NOTE);
    for (k, v) in &metrics {
        println!("{k:<width$}  {v}");
    }
    let svg_path = dir.join("equity_curve.svg");
    let mut svg = format!(
        "<!-- {} -->\n",
        cfg.provenance().join(" ")
    );
    svg.push_str(&report::equity_svg(&curve, benchmark.as_ref()));
    fs::write(&svg_path, svg).map_err(|e| io(&svg_path, e))?;
    println!("plot -> {}", svg_path.display());
    Ok(())
}
