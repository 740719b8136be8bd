//! Command-line front end for the post-processing toolkit.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{NaiveDate, SecondsFormat};
use clap::{Args, Parser, Subcommand};

use solarpp::cn0::quantile_ensemble;
use solarpp::data::{select_window, PairedCase, RollingWindow, Station};
use solarpp::emos::{append_model_store, model_from_store, train_semilocal};
use solarpp::nnet::{
    aggregate_runs, feature_row, load_checkpoint, save_checkpoint, train_runs, training_arrays,
    Prediction, TrainedModel,
};
use solarpp::pipeline::{
    audit_no_leakage, generate, load_config, load_dataset, load_report, render_report,
    run_experiment, write_files, ConfigFile, Dataset, ExperimentConfig, LeadRange, Method,
};
use solarpp::rng::substream;
use solarpp::{Error, Result};

#[derive(Parser)]
#[command(
    name = "solarpp",
    version,
    about = "Statistical post-processing and verification of solar irradiance ensemble forecasts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration file (JSON); built-in defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the root random seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Keep only forecast cases with lead hours in A:B (inclusive).
    #[arg(long, value_name = "A:B")]
    lead_range: Option<LeadRange>,

    /// Override the headline minimum observed irradiance (W/m²).
    #[arg(long, value_name = "WM2")]
    min_obs: Option<f64>,

    /// Override the method set, comma separated
    /// (raw,emos,emos_q,drn,drn_q,corrected).
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    methods: Option<Vec<Method>>,

    /// Output directory.
    #[arg(long, default_value = "out", value_name = "DIR")]
    out: PathBuf,

    /// Skip malformed data rows instead of failing.
    #[arg(long)]
    lax: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset and write its CSV files.
    Synth(Common),

    /// Fit the semi-local EMOS for one day and append it to the model store.
    TrainEmos {
        #[command(flatten)]
        common: Common,
        /// Target day; training uses data strictly before it.
        #[arg(long, value_name = "DATE")]
        date: NaiveDate,
    },

    /// Train the distribution network for one day and save its run checkpoints.
    TrainDrn {
        #[command(flatten)]
        common: Common,
        /// Target day; training uses data strictly before it.
        #[arg(long, value_name = "DATE")]
        date: NaiveDate,
    },

    /// Train the member-correction network for one day and save its run checkpoints.
    TrainCorrected {
        #[command(flatten)]
        common: Common,
        /// Target day; training uses data strictly before it.
        #[arg(long, value_name = "DATE")]
        date: NaiveDate,
    },

    /// Predict one day's forecasts from previously stored models.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Day whose forecasts should be predicted.
        #[arg(long, value_name = "DATE")]
        date: NaiveDate,
        /// Method whose stored model produces the predictions.
        #[arg(long)]
        method: Method,
        /// Directory holding the model stores (defaults to OUT/models).
        #[arg(long, value_name = "DIR")]
        models: Option<PathBuf>,
    },

    /// Score all configured methods over the verification period and render the report.
    Verify(Common),

    /// Re-render the delimited tables from a stored structured report.
    Report {
        /// Structured report written by verify or run.
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out", value_name = "DIR")]
        out: PathBuf,
    },

    /// End to end: generate configured synthetic data, verify, render the report.
    Run(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Synth(common) => synth_cmd(&common),
        Command::TrainEmos { common, date } => train_emos_cmd(&common, date),
        Command::TrainDrn { common, date } => train_net_cmd(&common, date, Method::Drn),
        Command::TrainCorrected { common, date } => {
            train_net_cmd(&common, date, Method::Corrected)
        }
        Command::Predict {
            common,
            date,
            method,
            models,
        } => predict_cmd(&common, date, method, models),
        Command::Verify(common) => verify_cmd(&common),
        Command::Report { report, out } => report_cmd(&report, &out),
        Command::Run(common) => run_cmd(&common),
    }
}

/// Loads the config file (or defaults) and applies the command-line overrides.
fn effective_config(common: &Common) -> Result<ConfigFile> {
    let mut file = match &common.config {
        Some(path) => load_config(path)?,
        None => ConfigFile::default(),
    };
    let exp = &mut file.experiment;
    if let Some(seed) = common.seed {
        exp.seed = seed;
    }
    if let Some(min_obs) = common.min_obs {
        exp.min_obs = min_obs;
    }
    if let Some(methods) = &common.methods {
        exp.methods = methods.clone();
    }
    exp.validate()?;
    Ok(file)
}

/// Loads and pairs the input files, applying the lead-range filter.
fn load_cases(exp: &ExperimentConfig, common: &Common) -> Result<Dataset> {
    let mut data = load_dataset(&exp.data, common.lax)?;
    if let Some(range) = common.lead_range {
        data.cases.retain(|c| range.contains(c.lead_h));
    }
    if data.cases.is_empty() {
        return Err(Error::Data(
            "no forecast cases remain after pairing and filtering".into(),
        ));
    }
    Ok(data)
}

fn station_index(data: &Dataset) -> BTreeMap<u32, Station> {
    data.stations.iter().map(|s| (s.id, s.clone())).collect()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn synth_cmd(common: &Common) -> Result<ExitCode> {
    let file = effective_config(common)?;
    let spec = file
        .synthetic
        .ok_or_else(|| Error::Config("config has no synthetic section".into()))?;
    let data = generate(&spec)?;
    let paths = write_files(&data, &common.out.join("data"))?;
    println!("wrote {}", paths.stations.display());
    println!("wrote {}", paths.forecasts.display());
    println!("wrote {}", paths.observations.display());
    Ok(ExitCode::SUCCESS)
}

fn train_emos_cmd(common: &Common, date: NaiveDate) -> Result<ExitCode> {
    let file = effective_config(common)?;
    let exp = &file.experiment;
    let data = load_cases(exp, common)?;
    let window = RollingWindow::new(date, exp.emos.window_days);
    let training = select_window(&data.cases, &window);
    audit_no_leakage(&training, date)?;
    let leads: BTreeSet<u32> = training.iter().map(|c| c.lead_h).collect();
    if leads.is_empty() {
        return Err(Error::Data(format!(
            "no training cases in the {} days before {date}",
            exp.emos.window_days
        )));
    }
    let leads: Vec<u32> = leads.into_iter().collect();
    let mut rng = substream(exp.seed, &format!("emos/{date}"));
    let model = train_semilocal(&training, date, &leads, &exp.emos, &mut rng)?;
    let dir = common.out.join("models");
    ensure_dir(&dir)?;
    let coefficients = dir.join("emos_coefficients.csv");
    let assignments = dir.join("emos_assignments.csv");
    append_model_store(&coefficients, &assignments, &model)?;
    println!(
        "stored semi-local EMOS for {date}: {} lead x cluster fits in {}",
        model.coefficients.len(),
        coefficients.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train_net_cmd(common: &Common, date: NaiveDate, which: Method) -> Result<ExitCode> {
    let file = effective_config(common)?;
    let exp = &file.experiment;
    let data = load_cases(exp, common)?;
    let (settings, stream) = match which {
        Method::Corrected => (&exp.corrected, "corrected"),
        _ => (&exp.drn, "drn"),
    };
    let window = RollingWindow::new(date, settings.window_days);
    let training = select_window(&data.cases, &window);
    audit_no_leakage(&training, date)?;
    let stations = station_index(&data);
    let (rows, obs) = training_arrays(&training, |id| {
        stations
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::Data(format!("unknown station {id} in training window")))
    })?;
    let mut rng = substream(exp.seed, &format!("{stream}/{date}"));
    let outcomes = train_runs(&settings.net, &rows, &obs, &mut rng)?;
    let dir = common.out.join("models").join(stream);
    ensure_dir(&dir)?;
    for (i, outcome) in outcomes.iter().enumerate() {
        let path = dir.join(format!("{date}-run{:02}.json", i + 1));
        save_checkpoint(&path, &outcome.model)?;
    }
    println!(
        "saved {} {stream} checkpoints for {date} in {}",
        outcomes.len(),
        dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Loads every run checkpoint saved for one day, in run order.
fn load_run_checkpoints(dir: &Path, date: NaiveDate) -> Result<Vec<TrainedModel>> {
    let prefix = format!("{date}-run");
    let entries = std::fs::read_dir(dir).map_err(|e| {
        Error::Data(format!("cannot read model directory {}: {e}", dir.display()))
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|r| r.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&prefix) && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "no checkpoints for {date} in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| load_checkpoint(p)).collect()
}

fn members_line(case: &PairedCase, members: &[f64]) -> String {
    let mut line = format!(
        "{},{},{}",
        case.station_id,
        case.init_time.to_rfc3339_opts(SecondsFormat::Secs, true),
        case.lead_h
    );
    for m in members {
        let _ = write!(line, ",{m}");
    }
    line.push('\n');
    line
}

fn distribution_line(case: &PairedCase, mu: f64, sigma: f64) -> String {
    format!(
        "{},{},{},{mu},{sigma}\n",
        case.station_id,
        case.init_time.to_rfc3339_opts(SecondsFormat::Secs, true),
        case.lead_h
    )
}

fn predict_cmd(
    common: &Common,
    date: NaiveDate,
    method: Method,
    models: Option<PathBuf>,
) -> Result<ExitCode> {
    let file = effective_config(common)?;
    let exp = &file.experiment;
    let data = load_cases(exp, common)?;
    let mut day_cases: Vec<&PairedCase> = data
        .cases
        .iter()
        .filter(|c| c.init_date() == date)
        .collect();
    day_cases.sort_by_key(|c| (c.station_id, c.lead_h));
    if day_cases.is_empty() {
        return Err(Error::Data(format!(
            "no forecast cases initialized on {date}"
        )));
    }
    let models_dir = models.unwrap_or_else(|| common.out.join("models"));
    let stations = station_index(&data);

    let ensemble_header = {
        let mut h = String::from("station_id,init_time,lead_h");
        for k in 1..=solarpp::data::ENSEMBLE_SIZE {
            let _ = write!(h, ",m{k}");
        }
        h.push('\n');
        h
    };
    let mut text = match method {
        Method::Emos | Method::Drn => String::from("station_id,init_time,lead_h,mu,sigma\n"),
        _ => ensemble_header,
    };

    match method {
        Method::Raw => {
            for case in &day_cases {
                text.push_str(&members_line(case, &case.members));
            }
        }
        Method::Emos | Method::EmosQ => {
            let model = model_from_store(
                &models_dir.join("emos_coefficients.csv"),
                &models_dir.join("emos_assignments.csv"),
                date,
            )?;
            for case in &day_cases {
                let record = solarpp::data::ForecastRecord {
                    station_id: case.station_id,
                    init_time: case.init_time,
                    lead_h: case.lead_h,
                    members: case.members,
                };
                let params = model.predict(&record)?;
                if method == Method::Emos {
                    text.push_str(&distribution_line(case, params.mu, params.sigma));
                } else {
                    let members = quantile_ensemble(&params, exp.quantile_members);
                    text.push_str(&members_line(case, &members));
                }
            }
        }
        Method::Drn | Method::DrnQ | Method::Corrected => {
            let subdir = if method == Method::Corrected {
                "corrected"
            } else {
                "drn"
            };
            let runs = load_run_checkpoints(&models_dir.join(subdir), date)?;
            for case in &day_cases {
                let station = stations.get(&case.station_id).ok_or_else(|| {
                    Error::Data(format!("unknown station {}", case.station_id))
                })?;
                let row = feature_row(case, station);
                let per_run: Vec<Prediction> = runs
                    .iter()
                    .map(|m| m.predict(&row))
                    .collect::<Result<_>>()?;
                match (method, aggregate_runs(&per_run)?) {
                    (Method::Drn, Prediction::Distribution(p)) => {
                        text.push_str(&distribution_line(case, p.mu, p.sigma));
                    }
                    (Method::DrnQ, Prediction::Distribution(p)) => {
                        let members = quantile_ensemble(&p, exp.quantile_members);
                        text.push_str(&members_line(case, &members));
                    }
                    (Method::Corrected, Prediction::Members(m)) => {
                        text.push_str(&members_line(case, &m));
                    }
                    _ => {
                        return Err(Error::Data(format!(
                            "checkpoints in {subdir} do not match method {method}"
                        )))
                    }
                }
            }
        }
    }

    ensure_dir(&common.out)?;
    let out_path = common
        .out
        .join(format!("predictions-{}-{date}.csv", method.name()));
    std::fs::write(&out_path, text)?;
    println!("wrote {} predictions to {}", day_cases.len(), out_path.display());
    Ok(ExitCode::SUCCESS)
}

fn finish_experiment(exp: &ExperimentConfig, data: &Dataset, out: &Path) -> Result<ExitCode> {
    let report = run_experiment(exp, data)?;
    ensure_dir(out)?;
    let files = render_report(&report, out)?;
    println!(
        "scored {} cases over {} days; wrote {} files to {}",
        report.total_cases,
        report.days_with_cases,
        files.len(),
        out.display()
    );
    if !report.day_log.is_empty() {
        eprintln!(
            "note: {} day-level incidents logged (see day_log.csv)",
            report.day_log.len()
        );
    }
    if !report.failed_methods.is_empty() {
        let names: Vec<&str> = report.failed_methods.iter().map(|m| m.name()).collect();
        eprintln!(
            "error: methods failed on every attempted day: {}",
            names.join(", ")
        );
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(common: &Common) -> Result<ExitCode> {
    let file = effective_config(common)?;
    let data = load_cases(&file.experiment, common)?;
    finish_experiment(&file.experiment, &data, &common.out)
}

fn report_cmd(report_path: &Path, out: &Path) -> Result<ExitCode> {
    let report = load_report(report_path)?;
    ensure_dir(out)?;
    let files = render_report(&report, out)?;
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_cmd(common: &Common) -> Result<ExitCode> {
    let mut file = effective_config(common)?;
    if let Some(spec) = &file.synthetic {
        let data = generate(spec)?;
        let paths = write_files(&data, &common.out.join("data"))?;
        file.experiment.data.stations = paths.stations;
        file.experiment.data.forecasts = paths.forecasts;
        file.experiment.data.observations = paths.observations;
        println!(
            "generated synthetic dataset in {}",
            common.out.join("data").display()
        );
    }
    let data = load_cases(&file.experiment, common)?;
    finish_experiment(&file.experiment, &data, &common.out)
}
