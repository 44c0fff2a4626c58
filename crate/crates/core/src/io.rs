//! Event CSV ingestion, trade merging, model documents and result tables.
//!
//! Reals are written with 17 significant digits so every `f64` survives a
//! write/read cycle unchanged.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::density::MarkDensity;
use crate::error::{Error, Result};
use crate::evaluate::{Forecast, KernelGrid, QqCurve};
use crate::model::{
    EventSequence, HawkesModel, KernelNet, MarkedEvent, ModelKind, ScalingTransform,
};
use crate::train::{FitConfig, TrainTrace};

pub const SCHEMA_VERSION: u32 = 1;

/// Lossless decimal rendering of a real.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_real(s: &str, what: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: bad {what} '{s}'")))
}

/// Writes `dim,time,mark` rows preceded by a `# horizon=..,dims=..` comment.
pub fn write_events_csv<W: Write>(seq: &EventSequence, mut w: W) -> Result<()> {
    writeln!(
        w,
        "# horizon={},dims={}",
        fmt_real(seq.horizon()),
        seq.dims()
    )?;
    writeln!(w, "dim,time,mark")?;
    for e in seq.events() {
        writeln!(w, "{},{},{}", e.dim, fmt_real(e.time), fmt_real(e.mark))?;
    }
    Ok(())
}

/// Reads a generic event CSV. Without a horizon comment the horizon is the
/// next representable value after the last time; without `dims`, one more
/// than the largest dimension index.
pub fn read_events_csv<R: Read>(r: R) -> Result<EventSequence> {
    let mut horizon = None;
    let mut dims = None;
    let mut events = Vec::new();
    let mut header_seen = false;
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let no = i + 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(meta) = text.strip_prefix('#') {
            for kv in meta.split(',') {
                match kv.trim().split_once('=') {
                    Some(("horizon", v)) => horizon = Some(parse_real(v, "horizon", no)?),
                    Some(("dims", v)) => {
                        dims = Some(
                            v.trim()
                                .parse::<usize>()
                                .map_err(|_| Error::Parse(format!("line {no}: bad dims '{v}'")))?,
                        )
                    }
                    _ => {}
                }
            }
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = text.split(',').map(str::trim).collect();
            if cols != ["dim", "time", "mark"] {
                return Err(Error::Parse(format!(
                    "line {no}: expected header 'dim,time,mark', found '{text}'"
                )));
            }
            header_seen = true;
            continue;
        }
        let cols: Vec<&str> = text.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Parse(format!(
                "line {no}: expected 3 fields, found {}",
                cols.len()
            )));
        }
        let dim = cols[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("line {no}: bad dim '{}'", cols[0])))?;
        events.push(MarkedEvent::new(
            dim,
            parse_real(cols[1], "time", no)?,
            parse_real(cols[2], "mark", no)?,
        ));
    }
    if events.is_empty() {
        return Err(Error::InvalidSequence("the file contains no events".into()));
    }
    let dims = dims.unwrap_or_else(|| events.iter().map(|e| e.dim).max().unwrap_or(0) + 1);
    let horizon =
        horizon.unwrap_or_else(|| events.iter().map(|e| e.time).fold(0.0, f64::max).next_up());
    EventSequence::new(dims, horizon, events)
}

pub fn read_events_file(path: &Path) -> Result<EventSequence> {
    read_events_csv(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

/// One exchange trade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTradeRecord {
    pub timestamp: f64,
    pub side: Side,
    pub instrument: String,
    pub volume: f64,
    pub price: f64,
    #[serde(default)]
    pub buyer_id: String,
    #[serde(default)]
    pub seller_id: String,
}

/// A dimension label: instrument and side.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DimLabel {
    pub instrument: String,
    pub side: Side,
}

impl DimLabel {
    pub fn new(instrument: &str, side: Side) -> Self {
        Self {
            instrument: instrument.to_string(),
            side,
        }
    }

    /// `instrument:side`, e.g. `BTC-USD:sell`.
    pub fn parse(s: &str) -> Result<Self> {
        let (inst, side) = s.rsplit_once(':').ok_or_else(|| {
            Error::Parse(format!("dimension label '{s}' is not 'instrument:side'"))
        })?;
        let side = match side.to_ascii_lowercase().as_str() {
            "buy" => Side::Buy,
            "sell" => Side::Sell,
            other => return Err(Error::Parse(format!("unknown side '{other}' in '{s}'"))),
        };
        Ok(Self::new(inst, side))
    }
}

/// BTC sell, BTC buy, ETH sell, ETH buy.
pub fn default_trade_dims() -> Vec<DimLabel> {
    vec![
        DimLabel::new("BTC-USD", Side::Sell),
        DimLabel::new("BTC-USD", Side::Buy),
        DimLabel::new("ETH-USD", Side::Sell),
        DimLabel::new("ETH-USD", Side::Buy),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Seconds,
    Milliseconds,
}

/// Result of trade ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeIngest {
    pub sequence: EventSequence,
    pub unit: TimeUnit,
    /// Absolute time (seconds) of the first event; sequence times are relative to it.
    pub origin: f64,
    pub counts: Vec<usize>,
    pub volumes: Vec<f64>,
}

/// Timestamps above this magnitude are read as epoch milliseconds.
const MILLIS_THRESHOLD: f64 = 1e11;

/// Merges trades sharing (instrument, side, timestamp) into one event whose
/// mark is the summed volume. Rows must be in non-decreasing time order.
pub fn ingest_trades<R: Read>(r: R, labels: &[DimLabel]) -> Result<TradeIngest> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<RawTradeRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)))?;
        if !(rec.volume > 0.0 && rec.volume.is_finite()) {
            return Err(Error::Parse(format!(
                "row {}: volume {} must be positive",
                i + 1,
                rec.volume
            )));
        }
        if !rec.timestamp.is_finite() {
            return Err(Error::Parse(format!("row {}: non-finite timestamp", i + 1)));
        }
        rows.push(rec);
    }
    if rows.is_empty() {
        return Err(Error::InvalidSequence("trade file has no rows".into()));
    }
    let unsorted: Vec<usize> = rows
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].timestamp < w[0].timestamp)
        .map(|(i, _)| i + 2)
        .collect();
    if !unsorted.is_empty() {
        let shown: Vec<String> = unsorted.iter().take(20).map(|r| r.to_string()).collect();
        return Err(Error::InvalidSequence(format!(
            "trade timestamps decrease at data rows {}{}",
            shown.join(", "),
            if unsorted.len() > 20 { ", ..." } else { "" }
        )));
    }
    let index: HashMap<&DimLabel, usize> = labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let max_abs = rows.iter().map(|r| r.timestamp.abs()).fold(0.0, f64::max);
    let unit = if max_abs > MILLIS_THRESHOLD {
        TimeUnit::Milliseconds
    } else {
        TimeUnit::Seconds
    };
    let to_secs = |t: f64| {
        if unit == TimeUnit::Milliseconds {
            t / 1000.0
        } else {
            t
        }
    };
    log::info!("trade timestamps read as {unit:?} (largest magnitude {max_abs})");
    let origin = to_secs(rows[0].timestamp);

    // (dim, raw timestamp) -> index into merged
    let mut merged: Vec<(usize, f64, f64)> = Vec::new();
    let mut open: HashMap<(usize, u64), usize> = HashMap::new();
    for (i, rec) in rows.iter().enumerate() {
        let label = DimLabel {
            instrument: rec.instrument.clone(),
            side: rec.side,
        };
        let dim = *index.get(&label).ok_or_else(|| {
            Error::InvalidSequence(format!(
                "row {}: unknown dimension {}:{:?}",
                i + 1,
                rec.instrument,
                rec.side
            ))
        })?;
        match open.get(&(dim, rec.timestamp.to_bits())) {
            Some(&k) => merged[k].2 += rec.volume,
            None => {
                open.insert((dim, rec.timestamp.to_bits()), merged.len());
                merged.push((dim, rec.timestamp, rec.volume));
            }
        }
    }
    let mut counts = vec![0; labels.len()];
    let mut volumes = vec![0.0; labels.len()];
    let events: Vec<MarkedEvent> = merged
        .iter()
        .map(|&(d, t, v)| {
            counts[d] += 1;
            volumes[d] += v;
            MarkedEvent::new(d, to_secs(t) - origin, v)
        })
        .collect();
    let last = events.iter().map(|e| e.time).fold(0.0, f64::max);
    let sequence = EventSequence::from_unsorted(labels.len(), last.next_up(), events)?;
    Ok(TradeIngest {
        sequence,
        unit,
        origin,
        counts,
        volumes,
    })
}

/// Summary of a fit stored alongside the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub config: FitConfig,
    pub selected_epoch: usize,
    pub epochs_run: usize,
    pub best_valid_ll: Option<f64>,
    pub split_points: (usize, usize),
}

impl FitMetadata {
    pub fn new(config: &FitConfig, trace: &TrainTrace) -> Self {
        Self {
            config: config.clone(),
            selected_epoch: trace.selected_epoch,
            epochs_run: trace.records.len().saturating_sub(1),
            best_valid_ll: trace.best_valid_ll(),
            split_points: trace.split_points,
        }
    }
}

/// Serialized model with its mark densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub dims: usize,
    pub mu: Vec<f64>,
    pub kernels: Vec<KernelNet>,
    pub scaling: ScalingTransform,
    #[serde(default)]
    pub lookback: Option<f64>,
    #[serde(default)]
    pub mark_densities: Vec<MarkDensity>,
    #[serde(default)]
    pub fit: Option<FitMetadata>,
}

impl ModelDocument {
    pub fn from_model(model: &HawkesModel) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: model.kind(),
            dims: model.dims(),
            mu: model.mu().to_vec(),
            kernels: model.kernels().to_vec(),
            scaling: model.scaling().clone(),
            lookback: model.lookback(),
            mark_densities: Vec::new(),
            fit: None,
        }
    }

    pub fn to_model(&self) -> Result<HawkesModel> {
        if self.dims != self.mu.len() {
            return Err(Error::InvalidModel(format!(
                "dims {} but {} base rates",
                self.dims,
                self.mu.len()
            )));
        }
        HawkesModel::new(self.kind, self.mu.clone(), self.kernels.clone())?
            .with_scaling(self.scaling.clone())?
            .with_lookback(self.lookback)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Parse(format!(
                    "unsupported schema_version {v}, expected {SCHEMA_VERSION}"
                )))
            }
            None => return Err(Error::Parse("missing schema_version".into())),
        }
        let doc: Self = serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
        doc.to_model()?;
        if !doc.mark_densities.is_empty() && doc.mark_densities.len() != doc.dims {
            return Err(Error::Parse(
                "one mark density per dimension is required".into(),
            ));
        }
        for m in &doc.mark_densities {
            m.gmm.validate()?;
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }
}

pub fn write_qq_csv<W: Write>(curve: &QqCurve, mut w: W) -> Result<()> {
    writeln!(w, "q,coverage")?;
    for (q, c) in &curve.points {
        writeln!(w, "{},{}", fmt_real(*q), fmt_real(*c))?;
    }
    Ok(())
}

/// `index,dim,time,u` for PIT values of events `start..`.
pub fn write_pit_csv<W: Write>(
    seq: &EventSequence,
    start: usize,
    u: &[f64],
    mut w: W,
) -> Result<()> {
    writeln!(w, "index,dim,time,u")?;
    for (k, (e, u)) in seq.events()[start..].iter().zip(u).enumerate() {
        writeln!(
            w,
            "{},{},{},{}",
            start + k,
            e.dim,
            fmt_real(e.time),
            fmt_real(*u)
        )?;
    }
    Ok(())
}

/// `theoretical,empirical` uniform quantile pairs.
pub fn write_quantile_pairs_csv<W: Write>(pairs: &[(f64, f64)], mut w: W) -> Result<()> {
    writeln!(w, "theoretical,empirical")?;
    for (a, b) in pairs {
        writeln!(w, "{},{}", fmt_real(*a), fmt_real(*b))?;
    }
    Ok(())
}

/// `t,m,value`, t-major.
pub fn write_grid_csv<W: Write>(grid: &KernelGrid, mut w: W) -> Result<()> {
    writeln!(w, "t,m,value")?;
    for (t, row) in grid.t.iter().zip(&grid.values) {
        for (m, v) in grid.m.iter().zip(row) {
            writeln!(w, "{},{},{}", fmt_real(*t), fmt_real(*m), fmt_real(*v))?;
        }
    }
    Ok(())
}

pub fn write_trace_csv<W: Write>(trace: &TrainTrace, mut w: W) -> Result<()> {
    writeln!(w, "epoch,train_ll,valid_ll,wall_secs")?;
    for r in &trace.records {
        writeln!(
            w,
            "{},{},{},{}",
            r.epoch,
            fmt_real(r.train_ll),
            fmt_real(r.valid_ll),
            fmt_real(r.wall_secs)
        )?;
    }
    Ok(())
}

/// One row per dimension; `median_next` is empty when censored.
pub fn write_forecast_csv<W: Write>(f: &Forecast, mut w: W) -> Result<()> {
    writeln!(w, "dim,delta,sims,p_event,mean_count,sd_count,median_next")?;
    for (d, x) in f.dims.iter().enumerate() {
        let med = x.median_next().map(fmt_real).unwrap_or_default();
        writeln!(
            w,
            "{d},{},{},{},{},{},{med}",
            fmt_real(f.delta),
            f.sims,
            fmt_real(x.p_event),
            fmt_real(x.mean_count),
            fmt_real(x.sd_count)
        )?;
    }
    Ok(())
}
