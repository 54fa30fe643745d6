//! Deterministic candlestick rasterizer.
//!
//! Each window is drawn into a margin-inset plot area whose price axis spans
//! exactly `min(low)..=max(high)` of that window. Day `d` owns the `d`-th of
//! `W` equal-width columns. Continuous coordinates are mapped to pixels with
//! round-half-away-from-zero, so the output is bit-exact across platforms.
//! There are no axes, labels or anti-aliasing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::PriceWindow;

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const GREEN: Rgb = [0, 255, 0];
pub const RED: Rgb = [255, 0, 0];
pub const BLACK: Rgb = [0, 0, 0];

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid render config: {0}")]
    Config(String),
    #[error("window is empty")]
    EmptyWindow,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("png encoding failed: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decoding failed: {0}")]
    Decode(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    /// Share of each day's column covered by the candle body.
    pub candle_body_fraction: f64,
    /// Blank border on every side, as a share of the image size.
    pub margin_fraction: f64,
    pub up_color: Rgb,
    pub down_color: Rgb,
    pub wick_color: Rgb,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 224,
            height: 224,
            candle_body_fraction: 0.8,
            margin_fraction: 0.05,
            up_color: GREEN,
            down_color: RED,
            wick_color: BLACK,
        }
    }
}

impl RenderConfig {
    /// Default styling at a square size.
    pub fn square(size: u32) -> Self {
        Self {
            width: size,
            height: size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: String| Err(RenderError::Config(m));
        if self.width == 0 || self.height == 0 || self.width > 8192 || self.height > 8192 {
            return bad(format!("image size {}x{} out of range", self.width, self.height));
        }
        if !(self.candle_body_fraction > 0.0 && self.candle_body_fraction <= 1.0) {
            return bad(format!(
                "candle_body_fraction {} not in (0, 1]",
                self.candle_body_fraction
            ));
        }
        if !(self.margin_fraction >= 0.0 && self.margin_fraction < 0.5) {
            return bad(format!("margin_fraction {} not in [0, 0.5)", self.margin_fraction));
        }
        let colors = [self.up_color, self.down_color, self.wick_color];
        if colors.contains(&WHITE) {
            return bad("candle colors must differ from the white background".into());
        }
        if colors[0] == colors[1] || colors[0] == colors[2] || colors[1] == colors[2] {
            return bad("up, down and wick colors must be distinct".into());
        }
        Ok(())
    }
}

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChartImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    pub source: Option<(String, NaiveDate)>,
}

impl ChartImage {
    pub fn blank(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![255; width as usize * height as usize * 3],
            source: None,
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: i64, y: i64, color: Rgb) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    pub fn count_color(&self, color: Rgb) -> usize {
        self.pixels.chunks_exact(3).filter(|p| *p == color).count()
    }

    /// Channel-major `[3, h, w]` tensor scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Vec<f64> {
        let plane = self.width as usize * self.height as usize;
        let mut out = vec![0.0; plane * 3];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = px[c] as f64 / 255.0;
            }
        }
        out
    }

    /// PNG bytes, 8-bit RGB, no alpha. `text` entries become tEXt chunks.
    pub fn encode_png(&self, text: &[(&str, &str)]) -> Result<Vec<u8>, RenderError> {
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut buf, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_compression(png::Compression::Balanced);
            enc.set_filter(png::Filter::NoFilter);
            for (k, v) in text {
                enc.add_text_chunk(k.to_string(), v.to_string())?;
            }
            let mut writer = enc.write_header()?;
            writer.write_image_data(&self.pixels)?;
            writer.finish()?;
        }
        Ok(buf)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, RenderError> {
        let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder
            .read_info()
            .map_err(|e| RenderError::Decode(e.to_string()))?;
        let (w, h) = {
            let info = reader.info();
            (info.width, info.height)
        };
        if w == 0 || h == 0 || w > 8192 || h > 8192 {
            return Err(RenderError::Decode(format!("unsupported size {w}x{h}")));
        }
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| RenderError::Decode("image too large".into()))?;
        let mut raw = vec![0u8; size];
        let frame = reader
            .next_frame(&mut raw)
            .map_err(|e| RenderError::Decode(e.to_string()))?;
        raw.truncate(frame.buffer_size());
        let pixels = match frame.color_type {
            png::ColorType::Rgb => raw,
            png::ColorType::Rgba => raw
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
            png::ColorType::Grayscale => raw.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => raw
                .chunks_exact(2)
                .flat_map(|p| [p[0], p[0], p[0]])
                .collect(),
            png::ColorType::Indexed => {
                return Err(RenderError::Decode("palette not expanded".into()))
            }
        };
        if pixels.len() != w as usize * h as usize * 3 {
            return Err(RenderError::Decode("truncated pixel data".into()));
        }
        Ok(Self {
            width: w,
            height: h,
            pixels,
            source: None,
        })
    }

    pub fn read_png(path: &Path) -> Result<Self, RenderError> {
        let bytes = fs::read(path).map_err(|source| RenderError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode_png(&bytes)
    }
}

pub fn round_half_away(x: f64) -> i64 {
    let r = (x.abs() + 0.5).floor();
    if x < 0.0 {
        -(r as i64)
    } else {
        r as i64
    }
}

/// Pixel geometry shared by every candle of one image.
struct Layout {
    x0: i64,
    y0: i64,
    y1: i64,
    column_width: f64,
    body_half: i64,
}

impl Layout {
    fn new(cfg: &RenderConfig, days: usize) -> Self {
        let x0 = round_half_away(cfg.margin_fraction * cfg.width as f64);
        let y0 = round_half_away(cfg.margin_fraction * cfg.height as f64);
        let x1 = cfg.width as i64 - 1 - x0;
        let y1 = cfg.height as i64 - 1 - y0;
        let column_width = (x1 - x0 + 1) as f64 / days as f64;
        let mut body_half = (cfg.candle_body_fraction * column_width / 2.0).floor() as i64;
        // Keep neighbouring bodies from touching.
        while body_half > 0 && 2 * body_half + 1 > column_width.floor() as i64 {
            body_half -= 1;
        }
        Self {
            x0,
            y0,
            y1,
            column_width,
            body_half,
        }
    }

    fn center_x(&self, day: usize) -> i64 {
        self.x0 + ((day as f64 + 0.5) * self.column_width).floor() as i64
    }
}

/// Rasterizes one window. Never fails on a valid, non-empty window.
pub fn render(window: &PriceWindow, cfg: &RenderConfig) -> Result<ChartImage, RenderError> {
    cfg.validate()?;
    if window.bars.is_empty() {
        return Err(RenderError::EmptyWindow);
    }
    let mut img = ChartImage::blank(cfg.width, cfg.height);
    img.source = Some((window.symbol.clone(), window.start_date()));

    let layout = Layout::new(cfg, window.bars.len());
    let lo = window.bars.iter().map(|b| b.low).fold(f64::INFINITY, f64::min);
    let hi = window.bars.iter().map(|b| b.high).fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let rows = (layout.y1 - layout.y0) as f64;
    let row_of = |p: f64| -> i64 {
        if span > 0.0 {
            round_half_away(layout.y1 as f64 - (p - lo) / span * rows)
        } else {
            round_half_away((layout.y0 + layout.y1) as f64 / 2.0)
        }
    };

    for (day, bar) in window.bars.iter().enumerate() {
        let cx = layout.center_x(day);
        for y in row_of(bar.high)..=row_of(bar.low) {
            img.put(cx, y, cfg.wick_color);
        }
        let left = cx - layout.body_half;
        let right = cx + layout.body_half;
        if bar.close == bar.open {
            let y = row_of(bar.open);
            for x in left..=right {
                img.put(x, y, cfg.wick_color);
            }
            continue;
        }
        let color = if bar.close > bar.open {
            cfg.up_color
        } else {
            cfg.down_color
        };
        let top = row_of(bar.open.max(bar.close));
        let bottom = row_of(bar.open.min(bar.close));
        for y in top..=bottom {
            for x in left..=right {
                img.put(x, y, color);
            }
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub symbol: String,
    pub start_date: NaiveDate,
    pub path: PathBuf,
}

/// File stem for a chart: symbol characters outside `[A-Za-z0-9._-]` become `_`.
pub fn chart_file_name(symbol: &str, start: NaiveDate) -> String {
    let clean: String = symbol
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{clean}_{start}.png")
}

/// Renders every window to `<out_dir>/<symbol>_<start>.png`.
///
/// Output is sorted by `(symbol, start_date)` and independent of input order.
/// `text` is embedded in every PNG as tEXt metadata.
pub fn render_universe(
    windows: &[PriceWindow],
    cfg: &RenderConfig,
    out_dir: &Path,
    text: &[(&str, &str)],
) -> Result<Vec<ManifestEntry>, RenderError> {
    cfg.validate()?;
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| RenderError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut order: Vec<&PriceWindow> = windows.iter().collect();
    order.sort_by(|a, b| (&a.symbol, a.start_date()).cmp(&(&b.symbol, b.start_date())));
    order.dedup_by(|a, b| a.symbol == b.symbol && a.start_date() == b.start_date());

    let mut manifest = Vec::with_capacity(order.len());
    for w in order {
        let img = render(w, cfg)?;
        let path = out_dir.join(chart_file_name(&w.symbol, w.start_date()));
        let bytes = img.encode_png(text)?;
        write_if_changed(&path, &bytes)?;
        manifest.push(ManifestEntry {
            symbol: w.symbol.clone(),
            start_date: w.start_date(),
            path,
        });
    }
    Ok(manifest)
}

fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<(), RenderError> {
    if fs::read(path).ok().as_deref() == Some(bytes) {
        return Ok(());
    }
    fs::write(path, bytes).map_err(|source| RenderError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `symbol,start_date,path`. Comment lines (`# ...`) are written first.
pub fn write_manifest<W: Write>(
    entries: &[ManifestEntry],
    comments: &[String],
    mut out: W,
) -> Result<(), RenderError> {
    let err = |e: std::io::Error| RenderError::Manifest(e.to_string());
    for c in comments {
        writeln!(out, "# {c}").map_err(err)?;
    }
    let mut wtr = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| RenderError::Manifest(e.to_string());
    wtr.write_record(["symbol", "start_date", "path"]).map_err(csv_err)?;
    for e in entries {
        wtr.write_record([
            e.symbol.as_str(),
            &e.start_date.to_string(),
            &e.path.display().to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(err)?;
    Ok(())
}

/// Reads a manifest. Relative paths are resolved against `base`.
pub fn read_manifest<R: std::io::Read>(
    input: R,
    base: Option<&Path>,
) -> Result<Vec<ManifestEntry>, RenderError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| RenderError::Manifest(e.to_string()))?;
        if rec.len() != 3 {
            return Err(RenderError::Manifest(format!(
                "row {}: expected 3 fields, got {}",
                i + 1,
                rec.len()
            )));
        }
        let start_date = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d")
            .map_err(|e| RenderError::Manifest(format!("row {}: {e}", i + 1)))?;
        let mut path = PathBuf::from(&rec[2]);
        if let (Some(base), true) = (base, path.is_relative()) {
            path = base.join(path);
        }
        out.push(ManifestEntry {
            symbol: rec[0].to_string(),
            start_date,
            path,
        });
    }
    Ok(out)
}
