//! File formats: CSV observations, the TOML run configuration, the NDJSON
//! draws file, checkpoints and JSON reports.
//!
//! # Observation CSV
//!
//! A header row of channel names followed by one numeric row per time point.
//! A leading column named `t` or `time` is treated as an index and dropped.
//! Floats are written in shortest round-trip form, so reading back what was
//! written reproduces every value exactly.
//!
//! # Draws file
//!
//! Newline-delimited JSON. The first record is a header carrying the format
//! name and version together with the configuration, priors and channel
//! names; every retained draw follows as its own record, and a trailer with
//! the draw count and acceptance rates closes the file. Every record has a
//! `kind` field (`header`, `draw` or `trailer`).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ConfigError, Error, Result};
use crate::impulse::ImpulseRequest;
use crate::model::{
    default_priors, Draw, ModelConfig, ObservationMatrix, PosteriorDraws, PriorSpec, ResolvedPrior,
};
use crate::sampler::ChainState;
use crate::simulate::SimulationSpec;

pub const DRAWS_FORMAT: &str = "ltfm-draws";
pub const DRAWS_VERSION: u32 = 1;

/// Parses observations from CSV text.
pub fn parse_csv<R: Read>(reader: R) -> Result<ObservationMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse {
        row: 1,
        col: 0,
        msg: e.to_string(),
    })?;
    let skip = header
        .get(0)
        .is_some_and(|h| h.eq_ignore_ascii_case("t") || h.eq_ignore_ascii_case("time"));
    let names: Vec<String> = header.iter().skip(usize::from(skip)).map(str::to_string).collect();
    let width = header.len();
    let mut values = Vec::new();
    let mut n_time = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse {
                row,
                col: 0,
                msg: e.to_string(),
            }
        })?;
        let row = rec.position().map_or(n_time + 2, |p| p.line() as usize);
        if rec.len() != width {
            return Err(Error::Parse {
                row,
                col: rec.len().min(width) + 1,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate().skip(usize::from(skip)) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                col: j + 1,
                msg: format!("not a number: {field:?}"),
            })?;
            values.push(v);
        }
        n_time += 1;
    }
    Ok(ObservationMatrix::new(n_time, names, values)?)
}

pub fn read_csv(path: &Path) -> Result<ObservationMatrix> {
    parse_csv(File::open(path)?)
}

/// Writes observations with a leading `t` index column.
pub fn write_csv_to<W: Write>(writer: W, data: &ObservationMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend(data.channel_names().iter().cloned());
    w.write_record(&header)?;
    for t in 1..=data.n_time() {
        let mut rec = vec![t.to_string()];
        rec.extend(data.row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: &Path, data: &ObservationMatrix) -> Result<()> {
    write_csv_to(BufWriter::new(File::create(path)?), data)
}

/// Writes a long-format table.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Settings for the exported summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarySettings {
    #[serde(default = "default_level")]
    pub level: f64,
    /// Trajectories to export; empty means `x`, `w`, every `delta[j]` and
    /// every `sigma2[i]`.
    #[serde(default)]
    pub series: Vec<String>,
}

fn default_level() -> f64 {
    0.95
}

impl Default for SummarySettings {
    fn default() -> Self {
        Self {
            level: default_level(),
            series: Vec::new(),
        }
    }
}

/// Everything a command reads from the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub prior: PriorSpec,
    /// Settings for `simulate`; `None` uses [`SimulationSpec::demo`].
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
    #[serde(default)]
    pub impulse: Option<ImpulseRequest>,
    #[serde(default)]
    pub summaries: SummarySettings,
}

impl RunConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            prior: default_priors(&model),
            model,
            simulation: None,
            impulse: None,
            summaries: SummarySettings::default(),
        }
    }

    /// Validates everything that does not depend on data.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.prior.validate(self.model.tvar_order)?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configuration serializes");
        hex(&Sha256::digest(&json))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a configuration. `[model]` is required; `[prior]` entries override
/// the defaults for the model's dimensions key by key.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let invalid = |e: &dyn std::fmt::Display| Error::Config(ConfigError::Invalid(e.to_string()));
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| invalid(&e))?;
    let model_v = doc
        .remove("model")
        .ok_or_else(|| invalid(&"missing [model] table"))?;
    let model: ModelConfig = model_v.try_into().map_err(|e: toml::de::Error| invalid(&e))?;
    model.validate()?;
    let mut prior_v = toml::Value::try_from(default_priors(&model)).map_err(|e| invalid(&e))?;
    if let Some(over) = doc.remove("prior") {
        merge(&mut prior_v, over);
    }
    let prior: PriorSpec = prior_v.try_into().map_err(|e: toml::de::Error| invalid(&e))?;
    let get = |doc: &mut toml::Table, key: &str| doc.remove(key);
    let simulation = get(&mut doc, "simulation")
        .map(|v| v.try_into::<SimulationSpec>())
        .transpose()
        .map_err(|e| invalid(&e))?;
    let impulse = get(&mut doc, "impulse")
        .map(|v| v.try_into::<ImpulseRequest>())
        .transpose()
        .map_err(|e| invalid(&e))?;
    let summaries = get(&mut doc, "summaries")
        .map(|v| v.try_into::<SummarySettings>())
        .transpose()
        .map_err(|e| invalid(&e))?
        .unwrap_or_default();
    if let Some(key) = doc.keys().next() {
        return Err(invalid(&format!("unknown table [{key}]")));
    }
    let cfg = RunConfig {
        model,
        prior,
        simulation,
        impulse,
        summaries,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a configuration file. IO failures surface as [`Error::Io`].
pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

/// Renders a configuration as TOML.
pub fn config_to_toml(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(ConfigError::Invalid(e.to_string())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsHeader {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub prior: PriorSpec,
    pub resolved: ResolvedPrior,
    pub channel_names: Vec<String>,
}

impl DrawsHeader {
    pub fn new(config: &ModelConfig, prior: &PriorSpec, resolved: &ResolvedPrior, channel_names: &[String]) -> Self {
        Self {
            format: DRAWS_FORMAT.into(),
            version: DRAWS_VERSION,
            config: config.clone(),
            prior: prior.clone(),
            resolved: resolved.clone(),
            channel_names: channel_names.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsTrailer {
    pub count: usize,
    pub acceptance: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Header(DrawsHeader),
    Draw(Draw),
    Trailer(DrawsTrailer),
}

/// Streaming writer for the draws file.
pub struct DrawWriter<W: Write> {
    out: W,
    count: usize,
}

fn write_record<W: Write>(out: &mut W, rec: &Record) -> Result<()> {
    serde_json::to_writer(&mut *out, rec)?;
    out.write_all(b"\n")?;
    Ok(())
}

impl DrawWriter<BufWriter<File>> {
    pub fn create(path: &Path, header: &DrawsHeader) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), header)
    }

    /// Reopens a file to continue after `keep` draws, discarding anything
    /// written after them.
    pub fn resume(path: &Path, keep: usize) -> Result<Self> {
        let file = File::open(path)?;
        let mut offset = 0u64;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        for _ in 0..keep + 1 {
            line.clear();
            let n = reader.read_line(&mut line)?;
            if n == 0 || !line.ends_with('\n') {
                return Err(Error::DrawsFormat(format!(
                    "draws file holds fewer than the {keep} draws recorded in the checkpoint"
                )));
            }
            offset += n as u64;
        }
        let file = fs::OpenOptions::new().write(true).open(path)?;
        file.set_len(offset)?;
        let mut out = BufWriter::new(file);
        std::io::Seek::seek(&mut out, std::io::SeekFrom::End(0))?;
        Ok(Self { out, count: keep })
    }
}

impl<W: Write> DrawWriter<W> {
    pub fn new(mut out: W, header: &DrawsHeader) -> Result<Self> {
        write_record(&mut out, &Record::Header(header.clone()))?;
        Ok(Self { out, count: 0 })
    }

    pub fn write(&mut self, draw: &Draw) -> Result<()> {
        write_record(&mut self.out, &Record::Draw(draw.clone()))?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn finish(mut self, acceptance: BTreeMap<String, f64>) -> Result<W> {
        let count = self.count;
        write_record(&mut self.out, &Record::Trailer(DrawsTrailer { count, acceptance }))?;
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Writes a complete draw set.
pub fn write_draws(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let header = DrawsHeader::new(&draws.config, &draws.prior, &draws.resolved, &draws.channel_names);
    let mut w = DrawWriter::create(path, &header)?;
    for d in &draws.draws {
        w.write(d)?;
    }
    w.finish(draws.acceptance.clone())?;
    Ok(())
}

/// Reads a draws file, checking format, version and completeness.
pub fn parse_draws<R: BufRead>(reader: R) -> Result<PosteriorDraws> {
    let mut lines = reader.lines().enumerate();
    let bad = |line: usize, msg: String| Error::DrawsFormat(format!("line {}: {msg}", line + 1));
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::DrawsFormat("empty draws file".into()))?;
    let first = first?;
    let head: serde_json::Value = serde_json::from_str(&first).map_err(|e| bad(0, e.to_string()))?;
    if head.get("kind").and_then(|v| v.as_str()) != Some("header")
        || head.get("format").and_then(|v| v.as_str()) != Some(DRAWS_FORMAT)
    {
        return Err(bad(0, "not a draws file header".into()));
    }
    match head.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(DRAWS_VERSION) => {}
        Some(v) => {
            return Err(Error::DrawsFormat(format!(
                "draws file version {v} is not supported (expected {DRAWS_VERSION})"
            )))
        }
        None => return Err(bad(0, "missing version".into())),
    }
    let header = match serde_json::from_value::<Record>(head).map_err(|e| bad(0, e.to_string()))? {
        Record::Header(h) => h,
        _ => unreachable!("kind checked above"),
    };
    let mut draws = Vec::new();
    let mut trailer = None;
    for (n, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if trailer.is_some() {
            return Err(bad(n, "records after trailer".into()));
        }
        match serde_json::from_str::<Record>(&line).map_err(|e| bad(n, e.to_string()))? {
            Record::Draw(d) => draws.push(d),
            Record::Trailer(t) => trailer = Some(t),
            Record::Header(_) => return Err(bad(n, "repeated header".into())),
        }
    }
    let trailer = trailer.ok_or_else(|| Error::DrawsFormat("draws file has no trailer (incomplete run?)".into()))?;
    if trailer.count != draws.len() {
        return Err(Error::DrawsFormat(format!(
            "trailer records {} draws but the file holds {}",
            trailer.count,
            draws.len()
        )));
    }
    Ok(PosteriorDraws {
        config: header.config,
        prior: header.prior,
        resolved: header.resolved,
        channel_names: header.channel_names,
        draws,
        acceptance: trailer.acceptance,
    })
}

pub fn read_draws(path: &Path) -> Result<PosteriorDraws> {
    parse_draws(BufReader::new(File::open(path)?))
}

/// Saved sampler position, written alongside a partially complete draws
/// file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Hash of the configuration and data the chain belongs to.
    pub run_hash: String,
    pub draws_written: usize,
    pub resolved: ResolvedPrior,
    pub chain: ChainState,
}

/// Writes JSON through a temporary file and a rename so a crash never
/// leaves a truncated file behind.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
