//! The `ltfm` command line: `simulate`, `fit` and `postprocess`.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | usage error (bad flags or arguments) |
//! | 3 | invalid configuration, priors or request settings |
//! | 4 | file system error |
//! | 5 | malformed CSV data |
//! | 6 | sampler or numerical failure |
//! | 7 | malformed or unsupported draws file |
//! | 8 | unknown postprocess request |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::decomposition::component_posterior;
use crate::error::{ConfigError, Error, Result};
use crate::impulse::{impulse_response, ImpulseRequest};
use crate::io::{self, Checkpoint, DrawWriter, DrawsHeader, RunConfig};
use crate::model::{validate_config, Draw, ObservationMatrix, PosteriorDraws, Variant};
use crate::sampler::Sampler;
use crate::simulate::{simulate_dataset, SimulationSpec};
use crate::summaries::{compute_dic, estimated_loadings, shrinkage_probabilities, summarize_trajectories};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_PARSE: i32 = 5;
pub const EXIT_SAMPLER: i32 = 6;
pub const EXIT_DRAWS: i32 = 7;
pub const EXIT_REQUEST: i32 = 8;

#[derive(Debug, Parser)]
#[command(name = "ltfm", version, about = "Latent threshold dynamic factor models")]
pub struct Cli {
    /// Worker threads for parallel steps (default: all cores).
    #[arg(long, global = true, env = "LTFM_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with its ground truth.
    Simulate(SimulateArgs),
    /// Run the MCMC sampler on a data file.
    Fit(FitArgs),
    /// Export summaries, components, impulse responses or DIC from draws.
    Postprocess(PostprocessArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `model.mcmc.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `model.variant` (`M` or `M+`).
    #[arg(long)]
    pub variant: Option<Variant>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of time points when the configuration has no `[simulation]`.
    #[arg(long, default_value_t = 500)]
    pub n_time: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Observation CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Keep every `stride`-th row after dropping the leading rows.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Rows dropped from the start of the data before subsampling.
    #[arg(long, default_value_t = 0)]
    pub drop_leading: usize,
    /// Write a checkpoint every this many sweeps (0 disables).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many sweeps in this invocation, leaving a checkpoint.
    #[arg(long)]
    pub max_sweeps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    /// Draws file written by `fit`.
    #[arg(long)]
    pub draws: PathBuf,
    /// One of `summaries`, `components`, `impulse`, `dic`.
    #[arg(long)]
    pub request: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Observation CSV; defaults to `data.csv` next to the draws file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Configuration supplying `[impulse]` and `[summaries]` settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for impulse-response simulation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Impulse origins (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub origins: Option<Vec<usize>>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Shock size; default is the mean posterior innovation s.d.
    #[arg(long)]
    pub shock: Option<f64>,
}

/// Maps an error to its documented exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Domain(_) | Error::UnknownSelector(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        Error::Parse { .. } | Error::Csv(_) => EXIT_PARSE,
        Error::Numerical { .. }
        | Error::Sampler { .. }
        | Error::Explosive { .. }
        | Error::DegenerateDecomposition { .. } => EXIT_SAMPLER,
        Error::DrawsFormat(_) | Error::MissingLikelihood | Error::Json(_) => EXIT_DRAWS,
    }
}

#[derive(Debug)]
pub struct UnknownRequest(pub String);

enum Failure {
    Run(Error),
    Request(UnknownRequest),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Run(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            code
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        // Fails only if a pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let res = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Postprocess(a) => cmd_postprocess(&a),
    };
    match res {
        Ok(()) => 0,
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        Err(Failure::Request(UnknownRequest(r))) => {
            eprintln!("error: unknown request {r:?} (expected summaries, components, impulse or dic)");
            EXIT_REQUEST
        }
    }
}

fn load_run_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = io::load_config(&common.config).map_err(|e| match e {
        Error::Io(io) => Error::Config(ConfigError::Invalid(format!(
            "cannot read {}: {io}",
            common.config.display()
        ))),
        other => other,
    })?;
    if let Some(seed) = common.seed {
        cfg.model.mcmc.seed = seed;
    }
    if let Some(v) = common.variant {
        cfg.model.variant = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_hash: String,
    variant: Variant,
    files: BTreeMap<String, String>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &RunConfig,
    files: &[&str],
    extra: BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for f in files {
        hashes.insert(f.to_string(), io::sha256_hex(&fs::read(out.join(f))?));
    }
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.model.mcmc.seed,
        config_hash: cfg.hash(),
        variant: cfg.model.variant,
        files: hashes,
        extra,
    };
    io::write_json_atomic(&out.join("manifest.json"), &m)
}

pub fn cmd_simulate_inner(a: &SimulateArgs) -> Result<()> {
    let cfg = load_run_config(&a.common)?;
    let spec = cfg
        .simulation
        .clone()
        .unwrap_or_else(|| SimulationSpec::demo(&cfg.model, a.n_time));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.model.mcmc.seed);
    let rec = simulate_dataset(&cfg.model, &cfg.prior, &spec, &mut rng)?;

    let out = &a.common.out;
    fs::create_dir_all(out)?;
    io::write_csv(&out.join("data.csv"), &rec.data)?;
    let truth = PosteriorDraws {
        config: cfg.model.clone(),
        prior: cfg.prior.clone(),
        resolved: crate::sampler::initial_state(&cfg.model, &cfg.prior, &rec.data).1,
        channel_names: rec.data.channel_names().to_vec(),
        draws: vec![Draw {
            sweep: 0,
            loglik: rec.state.conditional_loglik(&rec.data),
            state: rec.state.clone(),
        }],
        acceptance: BTreeMap::new(),
    };
    io::write_draws(&out.join("truth.ndjson"), &truth)?;
    let extra = BTreeMap::from([
        ("n_time".to_string(), json!(rec.data.n_time())),
        ("channels".to_string(), json!(rec.data.n_channels())),
        ("regenerations".to_string(), json!(rec.regenerations)),
    ]);
    write_manifest(out, "simulate", &cfg, &["data.csv", "truth.ndjson"], extra)?;
    println!(
        "simulated T={} m={} into {}",
        rec.data.n_time(),
        rec.data.n_channels(),
        out.display()
    );
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> std::result::Result<(), Failure> {
    Ok(cmd_simulate_inner(a)?)
}

fn load_data(path: &Path, stride: usize, drop_leading: usize) -> Result<ObservationMatrix> {
    let data = io::read_csv(path)?;
    if stride == 1 && drop_leading == 0 {
        return Ok(data);
    }
    Ok(data.subsample(stride, drop_leading)?)
}

fn run_hash(cfg: &RunConfig, data: &ObservationMatrix) -> String {
    let mut buf = Vec::new();
    io::write_csv_to(&mut buf, data).expect("in-memory write");
    io::sha256_hex(format!("{}:{}", cfg.hash(), io::sha256_hex(&buf)).as_bytes())
}

fn cmd_fit(a: &FitArgs) -> std::result::Result<(), Failure> {
    let cfg = load_run_config(&a.common)?;
    if a.stride == 0 {
        return Err(Error::Config(ConfigError::Invalid("stride must be at least 1".into())).into());
    }
    let data = load_data(&a.data, a.stride, a.drop_leading)?;
    let model = validate_config(cfg.model.clone(), cfg.prior.clone(), data.clone())?;
    let hash = run_hash(&cfg, &data);
    let out = &a.common.out;
    let draws_path = out.join("draws.ndjson");
    let ckpt_path = out.join("checkpoint.json");

    let (mut sampler, mut writer) = if a.resume {
        let ck: Checkpoint = io::read_json(&ckpt_path)?;
        if ck.run_hash != hash {
            return Err(Error::Config(ConfigError::Invalid(
                "checkpoint belongs to a different configuration or data set".into(),
            ))
            .into());
        }
        let writer = DrawWriter::resume(&draws_path, ck.draws_written)?;
        let s = Sampler::resume(cfg.model.clone(), cfg.prior.clone(), ck.resolved, data.clone(), ck.chain);
        (s, writer)
    } else {
        let s = Sampler::new(model);
        fs::create_dir_all(out)?;
        io::write_csv(&out.join("data.csv"), &data)?;
        let header = DrawsHeader::new(&s.config, &s.prior, &s.resolved, data.channel_names());
        (s, DrawWriter::create(&draws_path, &header)?)
    };

    let started = Instant::now();
    let mut last_good = sampler.chain.clone();
    let mut this_run = 0usize;
    let save = |s: &Sampler, chain: &crate::sampler::ChainState, w: &mut DrawWriter<_>| -> Result<()> {
        w.flush()?;
        io::write_json_atomic(
            &ckpt_path,
            &Checkpoint {
                run_hash: hash.clone(),
                draws_written: w.count(),
                resolved: s.resolved.clone(),
                chain: chain.clone(),
            },
        )
    };
    while !sampler.is_done() {
        if a.max_sweeps.is_some_and(|n| this_run >= n) {
            save(&sampler, &sampler.chain, &mut writer)?;
            println!(
                "stopped after {} sweeps ({} of {}); continue with --resume",
                this_run,
                sampler.chain.sweep,
                sampler.total_sweeps()
            );
            return Ok(());
        }
        if let Err(e) = sampler.sweep() {
            save(&sampler, &last_good, &mut writer)?;
            eprintln!("checkpoint of the last completed sweep written to {}", ckpt_path.display());
            return Err(e.into());
        }
        this_run += 1;
        if let Some(idx) = sampler.retained_index() {
            writer.write(&Draw {
                sweep: idx,
                loglik: sampler.chain.state.conditional_loglik(&sampler.data),
                state: sampler.chain.state.clone(),
            })?;
        }
        if a.checkpoint_every > 0 && sampler.chain.sweep % a.checkpoint_every == 0 {
            save(&sampler, &sampler.chain, &mut writer)?;
        }
        last_good.clone_from(&sampler.chain);
    }
    let acceptance = sampler.acceptance();
    let n_draws = writer.count();
    writer.finish(acceptance.clone())?;
    if ckpt_path.exists() {
        fs::remove_file(&ckpt_path)?;
    }
    let report = json!({
        "seed": cfg.model.mcmc.seed,
        "config_hash": cfg.hash(),
        "variant": cfg.model.variant,
        "n_time": data.n_time(),
        "channels": data.n_channels(),
        "sweeps": sampler.total_sweeps(),
        "draws": n_draws,
        "acceptance": acceptance,
        "elapsed_seconds": started.elapsed().as_secs_f64(),
        "threads": rayon::current_num_threads(),
    });
    io::write_json_atomic(&out.join("report.json"), &report)?;
    let extra = BTreeMap::from([("draws".to_string(), json!(n_draws))]);
    write_manifest(out, "fit", &cfg, &["data.csv", "draws.ndjson"], extra)?;
    println!("wrote {n_draws} draws to {}", draws_path.display());
    Ok(())
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn cmd_postprocess(a: &PostprocessArgs) -> std::result::Result<(), Failure> {
    let request = a.request.as_str();
    if !matches!(request, "summaries" | "components" | "impulse" | "dic") {
        return Err(Failure::Request(UnknownRequest(a.request.clone())));
    }
    let cfg = match &a.config {
        Some(p) => Some(io::load_config(p)?),
        None => None,
    };
    let draws = io::read_draws(&a.draws)?;
    if draws.is_empty() {
        return Err(Error::DrawsFormat("draws file holds no draws".into()).into());
    }
    let data_path = a
        .data
        .clone()
        .unwrap_or_else(|| a.draws.parent().unwrap_or(Path::new(".")).join("data.csv"));
    let load = || -> Result<ObservationMatrix> {
        let d = io::read_csv(&data_path)?;
        let dims = draws.dims().expect("nonempty");
        if d.n_time() != dims.t || d.n_channels() != dims.m {
            return Err(Error::Config(ConfigError::DimensionMismatch {
                what: "data rows for these draws",
                expected: dims.t,
                found: d.n_time(),
            }));
        }
        Ok(d)
    };
    let out = &a.out;
    match request {
        "summaries" => {
            let settings = cfg.as_ref().map(|c| c.summaries.clone()).unwrap_or_default();
            let dims = draws.dims().expect("nonempty");
            let series: Vec<String> = if settings.series.is_empty() {
                let mut s = vec!["x".to_string(), "w".to_string()];
                s.extend((1..=dims.p).map(|j| format!("delta[{j}]")));
                s.extend((1..=dims.m).map(|i| format!("sigma2[{i}]")));
                s
            } else {
                settings.series.clone()
            };
            let sums = series
                .iter()
                .map(|s| summarize_trajectories(&draws, s, settings.level))
                .collect::<Result<Vec<_>>>()?;
            let probs = shrinkage_probabilities(&draws)?;
            let bhat = estimated_loadings(&draws)?;
            fs::create_dir_all(out)?;
            let mut rows = Vec::new();
            for s in &sums {
                for (n, p) in s.points.iter().enumerate() {
                    let t = (n + 1).to_string();
                    for (stat, v) in [("mean", p.mean), ("lower", p.lower), ("upper", p.upper)] {
                        rows.push(vec![t.clone(), s.series.clone(), stat.to_string(), fmt(v)]);
                    }
                }
            }
            io::write_table(&out.join("trajectories.csv"), &["t", "series", "statistic", "value"], rows)?;
            let grid_rows = |g: &crate::summaries::ProcessGrid, first_row: usize| {
                let mut rows = Vec::with_capacity(g.n_proc * g.n_time);
                for j in 0..g.n_proc {
                    let (i, k) = (j / g.width + first_row, j % g.width + 1);
                    for t in 1..=g.n_time {
                        rows.push(vec![i.to_string(), k.to_string(), t.to_string(), fmt(g.get(j, t))]);
                    }
                }
                rows
            };
            io::write_table(&out.join("shrinkage.csv"), &["i", "k", "t", "prob"], grid_rows(&probs.loadings, 2))?;
            io::write_table(&out.join("loadings.csv"), &["i", "k", "t", "estimate"], grid_rows(&bhat, 2))?;
            if let Some(tv) = &probs.tvvar {
                io::write_table(&out.join("shrinkage_tvvar.csv"), &["i", "j", "t", "prob"], grid_rows(tv, 1))?;
            }
            println!("wrote summaries to {}", out.display());
        }
        "components" => {
            let level = cfg.as_ref().map_or(0.95, |c| c.summaries.level);
            let post = component_posterior(&draws, level)?;
            fs::create_dir_all(out)?;
            let mut rows = Vec::new();
            for (n, at) in post.times.iter().enumerate() {
                let t = (n + 1).to_string();
                let mut push = |series: String, s: &crate::summaries::IntervalSummary| {
                    for (stat, v) in [("mean", s.mean), ("lower", s.lower), ("upper", s.upper)] {
                        rows.push(vec![t.clone(), series.clone(), stat.to_string(), fmt(v)]);
                    }
                };
                for (g, slot) in at.quasi.iter().enumerate() {
                    if let Some(f) = &slot.frequency {
                        push(format!("quasi[{}].frequency", g + 1), f);
                    }
                    push(format!("quasi[{}].modulus", g + 1), &slot.modulus);
                    push(format!("quasi[{}].value", g + 1), &slot.value);
                }
                for (h, slot) in at.real.iter().enumerate() {
                    push(format!("real[{}].modulus", h + 1), &slot.modulus);
                    push(format!("real[{}].value", h + 1), &slot.value);
                }
            }
            io::write_table(&out.join("components.csv"), &["t", "series", "statistic", "value"], rows)?;
            io::write_json_atomic(
                &out.join("components_meta.json"),
                &json!({ "level": post.level, "used_draws": post.used, "skipped_draws": post.skipped }),
            )?;
            println!("wrote components to {}", out.display());
        }
        "impulse" => {
            let data = load()?;
            let dims = draws.dims().expect("nonempty");
            let mut req = cfg
                .as_ref()
                .and_then(|c| c.impulse.clone())
                .unwrap_or_else(|| ImpulseRequest::new(vec![dims.t / 4, dims.t / 2, 3 * dims.t / 4], 80));
            if let Some(o) = &a.origins {
                req.origins = o.clone();
            }
            if let Some(h) = a.horizon {
                req.horizon = h;
            }
            if let Some(r) = a.replicates {
                req.replicates = r;
            }
            if let Some(e) = a.shock {
                req.shock = Some(e);
            }
            if let Some(s) = a.seed {
                req.seed = s;
            }
            req.origins.iter_mut().for_each(|o| *o = (*o).max(1));
            let surf = impulse_response(&draws, &data, &req)?;
            fs::create_dir_all(out)?;
            let mut rows = Vec::with_capacity(surf.responses.len());
            for (o, &t0) in surf.origins.iter().enumerate() {
                for i in 0..surf.channels {
                    for h in 1..=surf.horizon {
                        rows.push(vec![(i + 1).to_string(), t0.to_string(), h.to_string(), fmt(surf.get(o, i, h))]);
                    }
                }
            }
            io::write_table(&out.join("impulse.csv"), &["channel", "t0", "horizon", "response"], rows)?;
            io::write_json_atomic(
                &out.join("impulse_meta.json"),
                &json!({
                    "shock": surf.shock,
                    "replicates": req.replicates,
                    "seed": req.seed,
                    "channel_names": draws.channel_names,
                    "divergent_paths": surf.divergent,
                }),
            )?;
            println!("wrote impulse responses to {}", out.display());
        }
        "dic" => {
            let data = load()?;
            let dic = compute_dic(&draws, &data)?;
            fs::create_dir_all(out)?;
            io::write_json_atomic(&out.join("dic.json"), &dic)?;
            println!("DIC {} (p_D {})", dic.dic, dic.effective_parameters);
        }
        _ => unreachable!("request checked above"),
    }
    Ok(())
}
