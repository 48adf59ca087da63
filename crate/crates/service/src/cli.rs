//! Command line interface.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};
use serde::Deserialize;
use serde_json::json;
use vecest::config::AppConfig;
use vecest::evaluation::{baseline_report, run_variant, sensitivity_sweep, write_sweep_csv, EvalReport, SWEEP_TOP_K, SWEEP_WINDOW};
use vecest::ingest::{ingest_records, read_csv, LabelMode};
use vecest::model::Variant;
use vecest::synthetic::{generate, SyntheticConfig};
use vecest::types::{validate_trip, RoadNetwork};
use vecest::Error;

use crate::api::{serve, AppState, JobHooks};
use crate::store::ModelStore;
use crate::workflow::{self, Departure, EstimateError, EstimateRequest, Snapshot};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_MODEL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vecest", version, about = "Personalized trip energy estimation")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for training, trip sampling and data generation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Model store directory; the PEC_STORE environment variable takes
    /// precedence.
    #[arg(long, global = true, default_value = "store")]
    pub store: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse raw log CSVs into labeled trips.
    Ingest {
        /// Raw log CSV files.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        /// Road network JSON.
        #[arg(long)]
        network: PathBuf,
        /// Overrides `data.label_mode`.
        #[arg(long)]
        label_mode: Option<LabelMode>,
    },
    /// Write a synthetic network and trips into the store.
    Generate {
        #[arg(long)]
        drivers: Option<usize>,
        /// Also write the raw records as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train the global model.
    Train {
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Fine-tune per-driver models from the global checkpoint.
    Finetune {
        /// Only this driver; all drivers when omitted.
        #[arg(long)]
        driver: Option<String>,
    },
    /// Train and evaluate variants on the store's data.
    Evaluate {
        #[arg(long = "variant")]
        variants: Vec<Variant>,
        /// Run the top-k and window sensitivity sweep.
        #[arg(long)]
        sweep: bool,
        /// Report directory; defaults to `<store>/reports`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate one trip and print JSON.
    Estimate {
        #[arg(long)]
        driver: String,
        /// JSON list of segment ids, or an object with `segment_ids`.
        #[arg(long)]
        route: PathBuf,
        /// Departure as local `YYYY-MM-DDTHH:MM[:SS]`, RFC 3339, or epoch
        /// seconds.
        #[arg(long)]
        depart: String,
        #[arg(long)]
        vehicle_type: Option<String>,
        /// Use the global model for unknown drivers.
        #[arg(long)]
        fallback: bool,
    },
    /// Serve the HTTP API.
    Serve {
        /// Overrides `serve.addr`.
        #[arg(long)]
        addr: Option<String>,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }

    fn model(message: impl Into<String>) -> Self {
        Self { code: EXIT_MODEL, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_USAGE,
            Error::Io(_) => EXIT_DATA,
            e if e.is_data_error() => EXIT_DATA,
            _ => EXIT_MODEL,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::UnknownDriver(_) | EstimateError::UnknownSegment(_) | EstimateError::BadRequest(_) => {
                CliError::data(e.to_string())
            }
            EstimateError::NoModel | EstimateError::Model(_) => CliError::model(e.to_string()),
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>, variant: Option<Variant>) -> Result<AppConfig, CliError> {
    let cfg = match path {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::usage(format!("config file {} does not exist", p.display())));
            }
            AppConfig::load(p)?
        }
        None => AppConfig::default(),
    };
    Ok(workflow::with_overrides(cfg, seed, variant)?)
}

fn store_path(flag: PathBuf) -> PathBuf {
    match std::env::var_os("PEC_STORE") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag,
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RouteFile {
    List(Vec<String>),
    Object { segment_ids: Vec<String> },
}

fn print_json(value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::model(e.to_string()))?;
    println!("{text}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let store = ModelStore::new(store_path(cli.store));
    let variant = match &cli.command {
        Command::Train { variant } => *variant,
        _ => None,
    };
    let cfg = load_config(cli.config.as_deref(), cli.seed, variant)?;
    match cli.command {
        Command::Ingest { inputs, network, label_mode } => {
            let text = fs::read_to_string(&network)
                .map_err(|e| CliError::data(format!("cannot read {}: {e}", network.display())))?;
            let network = RoadNetwork::from_json(&text)?;
            let mut records = Vec::new();
            for path in &inputs {
                let f = fs::File::open(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
                records.extend(read_csv(BufReader::new(f), cfg.data.utc_offset_s)?);
            }
            let mode = label_mode.unwrap_or(cfg.data.label_mode);
            let trips = ingest_records(records, mode, &cfg.data.vehicle, cfg.data.utc_offset_s)?;
            let total = trips.len();
            let valid: Vec<_> = trips
                .into_iter()
                .filter(|t| {
                    let v = validate_trip(t, &network);
                    if !v.is_empty() {
                        warn!("dropping trip {}: {v:?}", t.id);
                    }
                    v.is_empty()
                })
                .collect();
            store.save_network(&network)?;
            store.save_trips(&valid)?;
            print_json(&json!({ "trips": valid.len(), "dropped": total - valid.len(), "store": store.root() }))
        }
        Command::Generate { drivers, csv } => {
            let mut syn = SyntheticConfig { seed: cli.seed.unwrap_or(0), ..SyntheticConfig::default() };
            if let Some(n) = drivers {
                syn.drivers = n;
            }
            let data = generate(&syn)?;
            if let Some(path) = csv {
                let f = fs::File::create(&path).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
                vecest::ingest::write_csv(f, &data.records)?;
            }
            let trips = data.trips()?;
            store.save_network(&data.network)?;
            store.save_trips(&trips)?;
            print_json(&json!({ "drivers": data.profiles.len(), "trips": trips.len(), "segments": data.network.len() }))
        }
        Command::Train { .. } => {
            let meta = workflow::train(&store, &cfg)?;
            print_json(&json!({
                "model_version": meta.tensor_sha256,
                "epoch": meta.epoch,
                "val_loss": meta.val_loss,
                "variant": meta.model.variant,
            }))
        }
        Command::Finetune { driver } => {
            let global = store.load_global()?;
            let network = store.load_network()?;
            let histories = workflow::histories(store.load_trips()?, cfg.data.split_seed);
            let selected: Vec<_> = match &driver {
                Some(id) => {
                    let h = histories.iter().find(|h| &h.driver_id == id);
                    vec![h.ok_or_else(|| CliError::data(format!("unknown driver {id:?}")))?]
                }
                None => histories.iter().collect(),
            };
            let mut done = Vec::new();
            for h in selected {
                match workflow::finetune(&store, &cfg, &global, &network, h)? {
                    Some(meta) => done.push(json!({ "driver_id": h.driver_id, "model_version": meta.tensor_sha256 })),
                    None => info!("driver {}: no labeled training trips, skipped", h.driver_id),
                }
            }
            print_json(&json!({ "parent": global.meta.tensor_sha256, "drivers": done }))
        }
        Command::Evaluate { variants, sweep, out } => {
            let out = out.unwrap_or_else(|| store.root().join("reports"));
            fs::create_dir_all(&out).map_err(|e| CliError::data(format!("cannot create {}: {e}", out.display())))?;
            let data = store.dataset(cfg.data.split_seed, cfg.data.utc_offset_s)?;
            let exp = cfg.experiment();
            let variants = if variants.is_empty() { vec![cfg.model.variant] } else { variants };
            let mut summary = Vec::new();
            let mut write = |report: &EvalReport| -> Result<(), CliError> {
                write_report(&out, report)?;
                summary.push(json!({ "variant": report.variant, "test": report.test, "long_tail": report.long_tail }));
                Ok(())
            };
            write(&baseline_report(&data, exp.long_tail_threshold)?)?;
            for v in variants {
                info!("evaluating {v}");
                write(&run_variant(v, &data, &exp)?.report)?;
            }
            if sweep {
                let rows = sensitivity_sweep(&data, &exp, &SWEEP_TOP_K, &SWEEP_WINDOW)?;
                let path = out.join("sweep.csv");
                let f = fs::File::create(&path).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
                write_sweep_csv(f, &rows)?;
            }
            print_json(&summary)
        }
        Command::Estimate { driver, route, depart, vehicle_type, fallback } => {
            let text =
                fs::read_to_string(&route).map_err(|e| CliError::data(format!("cannot read {}: {e}", route.display())))?;
            let segment_ids = match serde_json::from_str::<RouteFile>(&text) {
                Ok(RouteFile::List(ids)) | Ok(RouteFile::Object { segment_ids: ids }) => ids,
                Err(e) => return Err(CliError::data(format!("{}: {e}", route.display()))),
            };
            let snap = Snapshot::load(&store, &cfg)?;
            let req = EstimateRequest { driver_id: driver, segment_ids, departure_time: Departure::Text(depart), vehicle_type };
            print_json(&snap.estimate(&req, fallback)?)
        }
        Command::Serve { addr } => {
            let addr = addr.unwrap_or_else(|| cfg.serve.addr.clone());
            let state = AppState::start(store, cfg, JobHooks::default())?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::model(e.to_string()))?;
            rt.block_on(serve(state, &addr)).map_err(|e| CliError::usage(format!("cannot serve on {addr}: {e}")))
        }
    }
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<(), CliError> {
    let json_path = dir.join(format!("{}.json", report.variant));
    fs::write(&json_path, report.to_json()?).map_err(|e| CliError::data(format!("cannot write {}: {e}", json_path.display())))?;
    let csv_path = dir.join(format!("{}.csv", report.variant));
    let f = fs::File::create(&csv_path).map_err(|e| CliError::data(format!("cannot write {}: {e}", csv_path.display())))?;
    report.write_csv(f)?;
    Ok(())
}
