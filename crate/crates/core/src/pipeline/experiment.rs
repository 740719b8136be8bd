//! The rolling-origin verification experiment: for every verification day,
//! fit each method on data strictly before that day, predict the day's
//! forecasts, score them, and aggregate the scores into a report.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cn0::{self, CN0Params};
use crate::data::{
    load_forecasts, load_observations, load_stations, pair_cases, select_window, ForecastRecord,
    PairedCase, RollingWindow, Station, ENSEMBLE_SIZE,
};
use crate::emos::train_semilocal;
use crate::error::{Error, Result};
use crate::nnet::{aggregate_runs, feature_row, train_runs, training_arrays, Prediction};
use crate::pipeline::config::{DataPaths, ExperimentConfig, Method, NetworkSettings};
use crate::pipeline::report::{
    CoverageRow, DayLogEntry, HistogramKind, HistogramRow, LeadScoreRow, LowIrradianceRow,
    PooledCoverageRow, PooledScoreRow, PooledSkillRow, SkillRow, VerificationReport,
    COMBINED_LEAD_SET,
};
use crate::rng::substream;
use crate::scoring::{
    bootstrap_skill_ci, cn0_central_interval, crps_ensemble, ensemble_interval, ensemble_median,
    nominal_coverage_pct, pit_histogram, reliability_index, verification_rank, CaseKey,
    RankHistogram,
};

/// Input data ready for the experiment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub stations: Vec<Station>,
    pub cases: Vec<PairedCase>,
    pub unmatched_forecasts: usize,
    pub dropped_rows: usize,
}

/// Loads and pairs the three input files.
pub fn load_dataset(paths: &DataPaths, lax: bool) -> Result<Dataset> {
    let stations = load_stations(&paths.stations, lax)?;
    let forecasts = load_forecasts(&paths.forecasts, lax)?;
    let observations = load_observations(&paths.observations, lax)?;
    let outcome = pair_cases(&forecasts.rows, &observations.rows);
    Ok(Dataset {
        stations,
        cases: outcome.cases,
        unmatched_forecasts: outcome.unmatched_forecasts,
        dropped_rows: forecasts.dropped_rows + observations.dropped_rows,
    })
}

/// Every score derived from one forecast case.
#[derive(Debug, Clone)]
struct CaseScore {
    obs: f64,
    crps: f64,
    abs_median_err: f64,
    rank: Option<usize>,
    pit: Option<f64>,
    interval: Option<(f64, f64)>,
}

fn case_key(case: &PairedCase) -> CaseKey {
    CaseKey {
        date: case.init_date(),
        station_id: case.station_id,
        lead_h: case.lead_h,
    }
}

fn forecast_record(case: &PairedCase) -> ForecastRecord {
    ForecastRecord {
        station_id: case.station_id,
        init_time: case.init_time,
        lead_h: case.lead_h,
        members: case.members,
    }
}

/// Hands out named substreams of the root seed and remembers every name, so
/// the report can list the experiment's full random surface.
struct StreamLog {
    seed: u64,
    names: RefCell<BTreeSet<String>>,
}

impl StreamLog {
    fn new(seed: u64) -> Self {
        Self {
            seed,
            names: RefCell::new(BTreeSet::new()),
        }
    }

    fn get(&self, name: String) -> ChaCha8Rng {
        let rng = substream(self.seed, &name);
        self.names.borrow_mut().insert(name);
        rng
    }

    fn into_names(self) -> Vec<String> {
        self.names.into_inner().into_iter().collect()
    }
}

/// No training case may be initialized on or after the verification day.
pub fn audit_no_leakage(training: &[PairedCase], verification_day: NaiveDate) -> Result<()> {
    for case in training {
        if case.init_date() >= verification_day {
            return Err(Error::Data(format!(
                "leakage: training case initialized {} is not strictly before verification day {}",
                case.init_date(),
                verification_day
            )));
        }
    }
    Ok(())
}

fn score_distribution(params: &CN0Params, obs: f64, u: f64, alpha: f64) -> Result<CaseScore> {
    let median = cn0::quantile(params, 0.5)?;
    Ok(CaseScore {
        obs,
        crps: cn0::crps(params, obs),
        abs_median_err: (median - obs).abs(),
        rank: None,
        pit: Some(cn0::pit(params, obs, u)?),
        interval: Some(cn0_central_interval(params, alpha)?),
    })
}

fn score_ensemble(
    members: &[f64],
    obs: f64,
    tie_rng: &mut impl Rng,
    with_interval: bool,
) -> Result<CaseScore> {
    Ok(CaseScore {
        obs,
        crps: crps_ensemble(members, obs)?,
        abs_median_err: (ensemble_median(members) - obs).abs(),
        rank: Some(verification_rank(members, obs, tie_rng)),
        pit: None,
        interval: with_interval.then(|| ensemble_interval(members)),
    })
}

type MethodScores = BTreeMap<CaseKey, CaseScore>;

/// Fits the semi-local EMOS for one day and returns per-case parameters.
fn emos_day<'c>(
    data: &Dataset,
    day_cases: &[&'c PairedCase],
    day: NaiveDate,
    config: &ExperimentConfig,
    streams: &StreamLog,
) -> Result<Vec<(&'c PairedCase, CN0Params)>> {
    let window = RollingWindow::new(day, config.emos.window_days);
    let training = select_window(&data.cases, &window);
    audit_no_leakage(&training, day)?;
    let leads: BTreeSet<u32> = day_cases.iter().map(|c| c.lead_h).collect();
    let leads: Vec<u32> = leads.into_iter().collect();
    let mut rng = streams.get(format!("emos/{day}"));
    let model = train_semilocal(&training, day, &leads, &config.emos, &mut rng)?;
    day_cases
        .iter()
        .map(|case| Ok((*case, model.predict(&forecast_record(case))?)))
        .collect()
}

/// Trains one network family for one day and returns per-case aggregated
/// predictions.
fn net_day<'c>(
    data: &Dataset,
    stations: &BTreeMap<u32, Station>,
    day_cases: &[&'c PairedCase],
    day: NaiveDate,
    settings: &NetworkSettings,
    stream: &str,
    streams: &StreamLog,
) -> Result<Vec<(&'c PairedCase, Prediction)>> {
    let window = RollingWindow::new(day, settings.window_days);
    let training = select_window(&data.cases, &window);
    audit_no_leakage(&training, day)?;
    let (rows, obs) = training_arrays(&training, |id| {
        stations
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::Data(format!("unknown station {id} in training window")))
    })?;
    let mut rng = streams.get(format!("{stream}/{day}"));
    let outcomes = train_runs(&settings.net, &rows, &obs, &mut rng)?;
    day_cases
        .iter()
        .map(|case| {
            let station = stations
                .get(&case.station_id)
                .ok_or_else(|| Error::Data(format!("unknown station {}", case.station_id)))?;
            let row = feature_row(case, station);
            let per_run: Vec<Prediction> = outcomes
                .iter()
                .map(|o| o.model.predict(&row))
                .collect::<Result<_>>()?;
            Ok((*case, aggregate_runs(&per_run)?))
        })
        .collect()
}

/// Scores a distribution method's fits into its per-case map.
fn record_distribution(
    target: &mut MethodScores,
    method: Method,
    fits: &[(&PairedCase, CN0Params)],
    alpha: f64,
    day: NaiveDate,
    streams: &StreamLog,
) -> Result<()> {
    let mut u_rng = streams.get(format!("pit/{}/{day}", method.name()));
    for (case, params) in fits {
        let u: f64 = u_rng.gen();
        let score = score_distribution(params, case.obs, u, alpha)?;
        target.insert(case_key(case), score);
    }
    Ok(())
}

/// Scores a quantile-sample method's fits into its per-case map.
fn record_quantile_sample(
    target: &mut MethodScores,
    method: Method,
    fits: &[(&PairedCase, CN0Params)],
    k: usize,
    day: NaiveDate,
    streams: &StreamLog,
) -> Result<()> {
    let mut tie_rng = streams.get(format!("rank/{}/{day}", method.name()));
    for (case, params) in fits {
        let members = cn0::quantile_ensemble(params, k);
        // quantile samples share the parent distribution's interval, so
        // they carry no interval of their own
        let score = score_ensemble(&members, case.obs, &mut tie_rng, false)?;
        target.insert(case_key(case), score);
    }
    Ok(())
}

struct DailyMeans {
    dates: Vec<NaiveDate>,
    forecast: Vec<f64>,
    reference: Vec<f64>,
}

/// Paired daily mean CRPS over the cases both maps scored, restricted by a
/// lead predicate and the observation threshold.
fn paired_daily_means(
    method: &MethodScores,
    reference: &MethodScores,
    min_obs: f64,
    lead_ok: impl Fn(u32) -> bool,
) -> DailyMeans {
    let mut per_day: BTreeMap<NaiveDate, (f64, f64, u64)> = BTreeMap::new();
    for (key, score) in method {
        if !lead_ok(key.lead_h) || score.obs < min_obs {
            continue;
        }
        let Some(ref_score) = reference.get(key) else { continue };
        let e = per_day.entry(key.date).or_insert((0.0, 0.0, 0));
        e.0 += score.crps;
        e.1 += ref_score.crps;
        e.2 += 1;
    }
    let mut out = DailyMeans {
        dates: Vec::with_capacity(per_day.len()),
        forecast: Vec::with_capacity(per_day.len()),
        reference: Vec::with_capacity(per_day.len()),
    };
    for (date, (f, r, n)) in per_day {
        out.dates.push(date);
        out.forecast.push(f / n as f64);
        out.reference.push(r / n as f64);
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> Option<(f64, u64)> {
    let mut sum = 0.0;
    let mut n = 0u64;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| (sum / n as f64, n))
}

/// Runs the full verification experiment.
pub fn run_experiment(config: &ExperimentConfig, data: &Dataset) -> Result<VerificationReport> {
    let mut config = config.clone();
    config.validate()?;
    let seed = config.seed;
    let streams = StreamLog::new(seed);
    let alpha = 2.0 / (ENSEMBLE_SIZE as f64 + 1.0);

    let stations: BTreeMap<u32, Station> =
        data.stations.iter().map(|s| (s.id, s.clone())).collect();
    for case in &data.cases {
        if !stations.contains_key(&case.station_id) {
            return Err(Error::Data(format!(
                "forecast case references unknown station {}",
                case.station_id
            )));
        }
    }

    if let (Some(window), Some(earliest)) = (
        config.max_window_days(),
        data.cases.iter().map(|c| c.init_date()).min(),
    ) {
        let min_start = earliest + Duration::days(i64::from(window));
        if config.verification_start < min_start {
            return Err(Error::Config(format!(
                "verification start {} leaves less than the {window}-day training window: \
                 data begins {earliest}, earliest admissible start is {min_start}",
                config.verification_start
            )));
        }
    }

    let mut by_day: BTreeMap<NaiveDate, Vec<&PairedCase>> = BTreeMap::new();
    for case in &data.cases {
        let d = case.init_date();
        if d >= config.verification_start && d <= config.verification_end {
            by_day.entry(d).or_default().push(case);
        }
    }
    for cases in by_day.values_mut() {
        cases.sort_by_key(|c| (c.station_id, c.lead_h));
    }

    let enabled = |m: Method| config.methods.contains(&m);
    let mut scores: BTreeMap<Method, MethodScores> = config
        .methods
        .iter()
        .map(|&m| (m, MethodScores::new()))
        .collect();
    let mut day_log: Vec<DayLogEntry> = Vec::new();
    let mut attempted: BTreeMap<Method, u32> = BTreeMap::new();
    let mut succeeded: BTreeMap<Method, u32> = BTreeMap::new();

    let mut days_with_cases = 0u32;
    let mut total_cases = 0u64;
    let mut day = config.verification_start;
    while day <= config.verification_end {
        let Some(day_cases) = by_day.get(&day) else {
            day_log.push(DayLogEntry {
                date: day,
                scope: "data".into(),
                error: "no forecasts initialized on this day".into(),
            });
            day += Duration::days(1);
            continue;
        };
        days_with_cases += 1;
        total_cases += day_cases.len() as u64;

        // raw ensemble
        if enabled(Method::Raw) {
            *attempted.entry(Method::Raw).or_default() += 1;
            let mut tie_rng = streams.get(format!("rank/raw/{day}"));
            let result: Result<Vec<(CaseKey, CaseScore)>> = day_cases
                .iter()
                .map(|case| {
                    let score = score_ensemble(&case.members, case.obs, &mut tie_rng, true)?;
                    Ok((case_key(case), score))
                })
                .collect();
            match result {
                Ok(list) => {
                    scores.get_mut(&Method::Raw).expect("enabled").extend(list);
                    *succeeded.entry(Method::Raw).or_default() += 1;
                }
                Err(e) => day_log.push(DayLogEntry {
                    date: day,
                    scope: Method::Raw.name().into(),
                    error: e.to_string(),
                }),
            }
        }

        // EMOS family: one semi-local fit feeds both variants
        if config.uses_emos() {
            for m in [Method::Emos, Method::EmosQ] {
                if enabled(m) {
                    *attempted.entry(m).or_default() += 1;
                }
            }
            match emos_day(data, day_cases, day, &config, &streams) {
                Ok(fits) => {
                    let mut record = |method: Method| -> Result<()> {
                        match method {
                            Method::Emos => record_distribution(
                                scores.get_mut(&Method::Emos).expect("enabled"),
                                Method::Emos,
                                &fits,
                                alpha,
                                day,
                                &streams,
                            ),
                            _ => record_quantile_sample(
                                scores.get_mut(&Method::EmosQ).expect("enabled"),
                                Method::EmosQ,
                                &fits,
                                config.quantile_members,
                                day,
                                &streams,
                            ),
                        }
                    };
                    for m in [Method::Emos, Method::EmosQ] {
                        if !enabled(m) {
                            continue;
                        }
                        match record(m) {
                            Ok(()) => *succeeded.entry(m).or_default() += 1,
                            Err(e) => day_log.push(DayLogEntry {
                                date: day,
                                scope: m.name().into(),
                                error: e.to_string(),
                            }),
                        }
                    }
                }
                Err(e) => {
                    for m in [Method::Emos, Method::EmosQ] {
                        if enabled(m) {
                            day_log.push(DayLogEntry {
                                date: day,
                                scope: m.name().into(),
                                error: e.to_string(),
                            });
                        }
                    }
                }
            }
        }

        // DRN family: one regional training feeds both variants
        if config.uses_drn() {
            for m in [Method::Drn, Method::DrnQ] {
                if enabled(m) {
                    *attempted.entry(m).or_default() += 1;
                }
            }
            match net_day(data, &stations, day_cases, day, &config.drn, "drn", &streams) {
                Ok(predictions) => {
                    let fits: Result<Vec<(&PairedCase, CN0Params)>> = predictions
                        .iter()
                        .map(|(case, p)| match p {
                            Prediction::Distribution(params) => Ok((*case, *params)),
                            Prediction::Members(_) => Err(Error::Numerical(
                                "distribution network produced member output".into(),
                            )),
                        })
                        .collect();
                    match fits {
                        Ok(fits) => {
                            if enabled(Method::Drn) {
                                match record_distribution(
                                    scores.get_mut(&Method::Drn).expect("enabled"),
                                    Method::Drn,
                                    &fits,
                                    alpha,
                                    day,
                                    &streams,
                                ) {
                                    Ok(()) => *succeeded.entry(Method::Drn).or_default() += 1,
                                    Err(e) => day_log.push(DayLogEntry {
                                        date: day,
                                        scope: Method::Drn.name().into(),
                                        error: e.to_string(),
                                    }),
                                }
                            }
                            if enabled(Method::DrnQ) {
                                match record_quantile_sample(
                                    scores.get_mut(&Method::DrnQ).expect("enabled"),
                                    Method::DrnQ,
                                    &fits,
                                    config.quantile_members,
                                    day,
                                    &streams,
                                ) {
                                    Ok(()) => *succeeded.entry(Method::DrnQ).or_default() += 1,
                                    Err(e) => day_log.push(DayLogEntry {
                                        date: day,
                                        scope: Method::DrnQ.name().into(),
                                        error: e.to_string(),
                                    }),
                                }
                            }
                        }
                        Err(e) => {
                            for m in [Method::Drn, Method::DrnQ] {
                                if enabled(m) {
                                    day_log.push(DayLogEntry {
                                        date: day,
                                        scope: m.name().into(),
                                        error: e.to_string(),
                                    });
                                }
                            }
                        }
                    }
                }
                Err(e) => {
                    for m in [Method::Drn, Method::DrnQ] {
                        if enabled(m) {
                            day_log.push(DayLogEntry {
                                date: day,
                                scope: m.name().into(),
                                error: e.to_string(),
                            });
                        }
                    }
                }
            }
        }

        // corrected ensemble
        if enabled(Method::Corrected) {
            *attempted.entry(Method::Corrected).or_default() += 1;
            let run = || -> Result<Vec<(CaseKey, CaseScore)>> {
                let predictions = net_day(
                    data,
                    &stations,
                    day_cases,
                    day,
                    &config.corrected,
                    "corrected",
                    &streams,
                )?;
                let mut tie_rng = streams.get(format!("rank/corrected/{day}"));
                predictions
                    .iter()
                    .map(|(case, p)| match p {
                        Prediction::Members(members) => {
                            let score =
                                score_ensemble(members, case.obs, &mut tie_rng, true)?;
                            Ok((case_key(case), score))
                        }
                        Prediction::Distribution(_) => Err(Error::Numerical(
                            "member network produced distribution output".into(),
                        )),
                    })
                    .collect()
            };
            match run() {
                Ok(list) => {
                    scores
                        .get_mut(&Method::Corrected)
                        .expect("enabled")
                        .extend(list);
                    *succeeded.entry(Method::Corrected).or_default() += 1;
                }
                Err(e) => day_log.push(DayLogEntry {
                    date: day,
                    scope: Method::Corrected.name().into(),
                    error: e.to_string(),
                }),
            }
        }

        day += Duration::days(1);
    }

    let failed_methods: Vec<Method> = config
        .methods
        .iter()
        .copied()
        .filter(|m| attempted.get(m).copied().unwrap_or(0) > 0 && succeeded.get(m).copied().unwrap_or(0) == 0)
        .collect();

    // ---- aggregation ----

    let low_signal = |lead: u32| config.low_signal_leads.iter().any(|r| r.contains(lead));
    let in_headline = |lead: u32| config.headline_lead_sets.iter().any(|r| r.contains(lead));
    let headline_cases = scores
        .get(&config.methods[0])
        .map(|m| {
            m.iter()
                .filter(|(k, s)| in_headline(k.lead_h) && s.obs >= config.min_obs)
                .count() as u64
        })
        .unwrap_or(0);

    let mut per_lead = Vec::new();
    let mut low_irradiance = Vec::new();
    let mut pooled = Vec::new();
    let mut coverage_by_lead = Vec::new();
    let mut coverage_pooled = Vec::new();
    let mut histograms = Vec::new();

    // pooled scopes: each headline set, plus their union
    let scopes: Vec<(String, Box<dyn Fn(u32) -> bool>)> = {
        let mut v: Vec<(String, Box<dyn Fn(u32) -> bool>)> = config
            .headline_lead_sets
            .iter()
            .map(|r| {
                let r = *r;
                (
                    r.label(),
                    Box::new(move |lead: u32| r.contains(lead)) as Box<dyn Fn(u32) -> bool>,
                )
            })
            .collect();
        let sets = config.headline_lead_sets.clone();
        v.push((
            COMBINED_LEAD_SET.to_string(),
            Box::new(move |lead: u32| sets.iter().any(|r| r.contains(lead))),
        ));
        v
    };

    for &method in &config.methods {
        let map = &scores[&method];

        let mut leads: BTreeSet<u32> = BTreeSet::new();
        for key in map.keys() {
            leads.insert(key.lead_h);
        }
        for &lead in &leads {
            let at_lead = map.iter().filter(|(k, _)| k.lead_h == lead);
            let (scored, low): (Vec<&CaseScore>, Vec<&CaseScore>) = at_lead
                .map(|(_, s)| s)
                .partition(|s| s.obs >= config.min_obs);
            if let Some((crps, n)) = mean(scored.iter().map(|s| s.crps)) {
                let (mae, _) = mean(scored.iter().map(|s| s.abs_median_err)).expect("same set");
                per_lead.push(LeadScoreRow {
                    method,
                    lead_h: lead,
                    low_signal: low_signal(lead),
                    n,
                    crps,
                    mae,
                });
                if method.in_coverage_tables() {
                    let covered = scored
                        .iter()
                        .filter(|s| {
                            let (lo, hi) = s.interval.expect("interval-bearing method");
                            s.obs >= lo && s.obs <= hi
                        })
                        .count();
                    let (avg_width, _) = mean(
                        scored
                            .iter()
                            .map(|s| s.interval.map(|(lo, hi)| hi - lo).expect("interval")),
                    )
                    .expect("same set");
                    coverage_by_lead.push(CoverageRow {
                        method,
                        lead_h: lead,
                        n,
                        coverage_pct: covered as f64 / n as f64 * 100.0,
                        avg_width,
                    });
                }
            }
            if let Some((crps, n)) = mean(low.iter().map(|s| s.crps)) {
                low_irradiance.push(LowIrradianceRow {
                    method,
                    lead_h: lead,
                    n,
                    crps,
                });
            }
        }

        for (label, lead_ok) in &scopes {
            let sel: Vec<&CaseScore> = map
                .iter()
                .filter(|(k, s)| lead_ok(k.lead_h) && s.obs >= config.min_obs)
                .map(|(_, s)| s)
                .collect();
            if let Some((crps, n)) = mean(sel.iter().map(|s| s.crps)) {
                let (mae, _) = mean(sel.iter().map(|s| s.abs_median_err)).expect("same set");
                pooled.push(PooledScoreRow {
                    method,
                    lead_set: label.clone(),
                    n,
                    crps,
                    mae,
                });
                if method.in_coverage_tables() {
                    let covered = sel
                        .iter()
                        .filter(|s| {
                            let (lo, hi) = s.interval.expect("interval-bearing method");
                            s.obs >= lo && s.obs <= hi
                        })
                        .count();
                    let (avg_width, _) = mean(
                        sel.iter()
                            .map(|s| s.interval.map(|(lo, hi)| hi - lo).expect("interval")),
                    )
                    .expect("same set");
                    let coverage_pct = covered as f64 / n as f64 * 100.0;
                    coverage_pooled.push(PooledCoverageRow {
                        method,
                        lead_set: label.clone(),
                        n,
                        coverage_pct,
                        avg_width,
                        abs_dev_pct: (coverage_pct - nominal_coverage_pct(ENSEMBLE_SIZE)).abs(),
                    });
                }
            }
        }

        // histograms per headline lead set
        for range in &config.headline_lead_sets {
            let sel: Vec<&CaseScore> = map
                .iter()
                .filter(|(k, s)| range.contains(k.lead_h) && s.obs >= config.min_obs)
                .map(|(_, s)| s)
                .collect();
            if sel.is_empty() {
                continue;
            }
            let bins = match method {
                Method::EmosQ | Method::DrnQ => config.quantile_members + 1,
                _ => ENSEMBLE_SIZE + 1,
            };
            let hist = if method.is_ensemble() {
                let ranks: Vec<usize> = sel
                    .iter()
                    .map(|s| s.rank.expect("ensemble method scores carry ranks"))
                    .collect();
                RankHistogram::from_ranks(&ranks, bins)?
            } else {
                let pits: Vec<f64> = sel
                    .iter()
                    .map(|s| s.pit.expect("distribution method scores carry PIT"))
                    .collect();
                pit_histogram(&pits, bins)?
            };
            histograms.push(HistogramRow {
                method,
                lead_set: range.label(),
                kind: if method.is_ensemble() {
                    HistogramKind::Rank
                } else {
                    HistogramKind::Pit
                },
                n: sel.len() as u64,
                counts: hist.counts.clone(),
                relative: hist.relative(),
                reliability_index: reliability_index(&hist),
            });
        }
    }

    // ---- skill vs the raw ensemble ----

    let mut skill_by_lead = Vec::new();
    let mut skill_pooled = Vec::new();
    if let Some(raw_scores) = scores.get(&Method::Raw) {
        for &method in &config.methods {
            if method == Method::Raw {
                continue;
            }
            let map = &scores[&method];

            let leads: BTreeSet<u32> = map.keys().map(|k| k.lead_h).collect();
            for &lead in &leads {
                let daily =
                    paired_daily_means(map, raw_scores, config.min_obs, |l| l == lead);
                let ref_total: f64 = daily.reference.iter().sum();
                if daily.dates.is_empty() || ref_total <= 0.0 {
                    continue;
                }
                let point = 1.0 - daily.forecast.iter().sum::<f64>() / ref_total;
                let mut ci = (None, None);
                if let Some(settings) = &config.bootstrap {
                    let mut rng =
                        streams.get(format!("bootstrap/{}/lead-{lead}", method.name()));
                    if let Ok(b) =
                        bootstrap_skill_ci(&daily.forecast, &daily.reference, settings, &mut rng)
                    {
                        ci = (Some(b.lower), Some(b.upper));
                    }
                }
                skill_by_lead.push(SkillRow {
                    method,
                    lead_h: lead,
                    low_signal: low_signal(lead),
                    n_days: daily.dates.len() as u64,
                    crpss: point,
                    ci_lo: ci.0,
                    ci_hi: ci.1,
                });
            }

            for (label, lead_ok) in &scopes {
                let daily = paired_daily_means(map, raw_scores, config.min_obs, lead_ok);
                let ref_total: f64 = daily.reference.iter().sum();
                if daily.dates.is_empty() || ref_total <= 0.0 {
                    continue;
                }
                let point = 1.0 - daily.forecast.iter().sum::<f64>() / ref_total;
                let mut ci = (None, None);
                if let Some(settings) = &config.bootstrap {
                    let mut rng =
                        streams.get(format!("bootstrap/{}/set-{label}", method.name()));
                    if let Ok(b) =
                        bootstrap_skill_ci(&daily.forecast, &daily.reference, settings, &mut rng)
                    {
                        ci = (Some(b.lower), Some(b.upper));
                    }
                }
                skill_pooled.push(PooledSkillRow {
                    method,
                    lead_set: label.clone(),
                    n_days: daily.dates.len() as u64,
                    crpss: point,
                    ci_lo: ci.0,
                    ci_hi: ci.1,
                });
            }
        }
    }

    let zero_cases = scores.values().all(|m| m.is_empty());
    Ok(VerificationReport {
        root_seed: seed,
        methods: config.methods.clone(),
        verification_start: config.verification_start,
        verification_end: config.verification_end,
        min_obs: config.min_obs,
        headline_lead_sets: config.headline_lead_sets.clone(),
        nominal_coverage_pct: nominal_coverage_pct(ENSEMBLE_SIZE),
        bootstrap_level: config.bootstrap.as_ref().map(|b| b.level),
        days_in_period: (config.verification_end - config.verification_start).num_days() as u32
            + 1,
        days_with_cases,
        total_cases,
        headline_cases,
        zero_cases,
        per_lead,
        low_irradiance,
        pooled,
        skill_by_lead,
        skill_pooled,
        histograms,
        coverage_by_lead,
        coverage_pooled,
        day_log,
        failed_methods,
        substreams: streams.into_names(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Head, MlpConfig};
    use crate::pipeline::config::LeadRange;
    use crate::pipeline::synth::{generate, SyntheticSpec};
    use crate::scoring::BootstrapSettings;

    /// Small but complete setup: pathological forecasts, reduced windows,
    /// tiny networks, a handful of verification days, and a restricted lead
    /// subset to keep the EMOS fit count down.
    fn small_setup() -> (ExperimentConfig, Dataset) {
        let spec = SyntheticSpec {
            stations: 4,
            days: 56,
            bias: 0.25,
            dispersion: 0.5,
            ..SyntheticSpec::default()
        };
        let data = generate(&spec).unwrap();
        let outcome = pair_cases(&data.forecasts, &data.observations);
        let keep = |lead: u32| (12..=16).contains(&lead) || (36..=40).contains(&lead);
        let cases: Vec<PairedCase> = outcome
            .cases
            .into_iter()
            .filter(|c| keep(c.lead_h))
            .collect();
        let dataset = Dataset {
            stations: data.stations,
            cases,
            unmatched_forecasts: 0,
            dropped_rows: 0,
        };

        let tiny_net = |head: Head| MlpConfig {
            input_dim: crate::nnet::INPUT_DIM,
            hidden: vec![12],
            head,
            batch_size: 128,
            learning_rate: 5e-3,
            max_epochs: 8,
            validation_fraction: 0.2,
            patience: 3,
            runs: 2,
        };
        let start = spec.start_date + Duration::days(40);
        let config = ExperimentConfig {
            verification_start: start,
            verification_end: start + Duration::days(10),
            emos: crate::emos::SemilocalConfig {
                window_days: 40,
                k: 2,
                min_per_cluster: 2,
            },
            drn: NetworkSettings {
                window_days: 12,
                net: tiny_net(Head::Distribution),
            },
            corrected: NetworkSettings {
                window_days: 12,
                net: tiny_net(Head::Members),
            },
            headline_lead_sets: vec![LeadRange(12, 24), LeadRange(36, 48)],
            bootstrap: Some(BootstrapSettings {
                replicates: 200,
                ..BootstrapSettings::default()
            }),
            seed: 424242,
            ..ExperimentConfig::default()
        };
        (config, dataset)
    }

    #[test]
    fn experiment_produces_a_complete_and_deterministic_report() {
        let (config, dataset) = small_setup();
        let report = run_experiment(&config, &dataset).unwrap();

        assert!(!report.zero_cases);
        assert!(report.failed_methods.is_empty(), "{:?}", report.day_log);
        assert_eq!(report.days_with_cases, 11);
        // 4 stations × 10 leads × 11 days
        assert_eq!(report.total_cases, 440);

        // every method produced per-lead rows for the daytime leads
        for &m in &report.methods {
            let leads: Vec<u32> = report
                .per_lead
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.lead_h)
                .collect();
            assert!(leads.contains(&12) && leads.contains(&36), "{m}: {leads:?}");
        }
        // quantile variants never appear in coverage tables
        assert!(report
            .coverage_by_lead
            .iter()
            .all(|r| r.method.in_coverage_tables()));
        // histograms: ranks for ensembles, PIT for distributions, counts sum to n
        for h in &report.histograms {
            assert_eq!(h.counts.iter().sum::<u64>(), h.n);
            assert_eq!(h.counts.len(), 9);
            match h.method {
                Method::Emos | Method::Drn => assert_eq!(h.kind, HistogramKind::Pit),
                _ => assert_eq!(h.kind, HistogramKind::Rank),
            }
        }
        // skill rows exist for every non-raw method, pooled over the union
        for &m in &report.methods {
            if m == Method::Raw {
                continue;
            }
            assert!(report
                .skill_pooled
                .iter()
                .any(|r| r.method == m && r.lead_set == COMBINED_LEAD_SET));
        }
        // bootstrap CIs were requested and bracket their point estimates
        for r in &report.skill_pooled {
            let (lo, hi) = (r.ci_lo.unwrap(), r.ci_hi.unwrap());
            assert!(lo <= r.crpss && r.crpss <= hi);
        }
        // the random surface is recorded by substream name
        for prefix in ["emos/", "drn/", "corrected/", "rank/raw/", "pit/emos/", "bootstrap/"] {
            assert!(
                report.substreams.iter().any(|s| s.starts_with(prefix)),
                "no substream named {prefix}*"
            );
        }

        // bit-for-bit reproducibility
        let again = run_experiment(&config, &dataset).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn raw_only_config_scores_without_skill_sections() {
        let (mut config, dataset) = small_setup();
        config.methods = vec![Method::Raw];
        let report = run_experiment(&config, &dataset).unwrap();
        assert!(report.skill_by_lead.is_empty());
        assert!(report.skill_pooled.is_empty());
        assert!(!report.per_lead.is_empty());
        assert!(report.failed_methods.is_empty());
        // raw coverage intervals are the ensemble range
        assert!(!report.coverage_by_lead.is_empty());
    }

    #[test]
    fn post_processing_beats_the_pathological_raw_ensemble() {
        let (mut config, dataset) = small_setup();
        // EMOS only: the cheapest method is enough for a quality smoke test
        config.methods = vec![Method::Raw, Method::Emos];
        let report = run_experiment(&config, &dataset).unwrap();
        let pooled: Vec<_> = report
            .skill_pooled
            .iter()
            .filter(|r| r.method == Method::Emos && r.lead_set == COMBINED_LEAD_SET)
            .collect();
        assert_eq!(pooled.len(), 1);
        assert!(
            pooled[0].crpss > 0.2,
            "EMOS should strongly beat biased underdispersed raw, got {}",
            pooled[0].crpss
        );
        // calibration improves: EMOS PIT histogram flatter than raw ranks
        let ri = |m: Method, set: &str| {
            report
                .histograms
                .iter()
                .find(|h| h.method == m && h.lead_set == set)
                .map(|h| h.reliability_index)
                .unwrap()
        };
        assert!(ri(Method::Emos, "12-24") < ri(Method::Raw, "12-24"));
        assert!(ri(Method::Emos, "36-48") < ri(Method::Raw, "36-48"));
    }

    #[test]
    fn too_early_verification_start_is_a_config_error() {
        let (mut config, dataset) = small_setup();
        config.verification_start = config.verification_start - Duration::days(10);
        let err = run_experiment(&config, &dataset).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("training window"), "{err}");
    }

    #[test]
    fn an_impossible_method_is_logged_and_the_rest_proceed() {
        let (mut config, dataset) = small_setup();
        config.methods = vec![Method::Raw, Method::Emos];
        // a 3-day window can never reach the 25-case fitting minimum
        config.emos.window_days = 3;
        // the window invariant must still hold for the shrunken window
        let report = run_experiment(&config, &dataset).unwrap();
        assert_eq!(report.failed_methods, vec![Method::Emos]);
        assert!(report.day_log.iter().any(|e| e.scope == "emos"));
        assert!(!report.per_lead.is_empty());
        assert!(report
            .per_lead
            .iter()
            .all(|r| r.method == Method::Raw));
    }

    #[test]
    fn verification_period_without_data_yields_zero_case_report() {
        let (mut config, dataset) = small_setup();
        config.verification_start += Duration::days(400);
        config.verification_end = config.verification_start + Duration::days(3);
        let report = run_experiment(&config, &dataset).unwrap();
        assert!(report.zero_cases);
        assert_eq!(report.total_cases, 0);
        assert_eq!(report.days_with_cases, 0);
        assert!(report.per_lead.is_empty());
        assert_eq!(report.day_log.len(), 4);
    }

    #[test]
    fn headline_filter_tracks_min_obs_and_lead_sets() {
        let (mut config, dataset) = small_setup();
        config.methods = vec![Method::Raw];
        let report = run_experiment(&config, &dataset).unwrap();
        let raw_lead_rows: Vec<_> = report
            .per_lead
            .iter()
            .filter(|r| r.method == Method::Raw)
            .collect();
        // headline cases = sum of per-lead n over headline leads
        let from_rows: u64 = raw_lead_rows
            .iter()
            .filter(|r| {
                config
                    .headline_lead_sets
                    .iter()
                    .any(|s| s.contains(r.lead_h))
            })
            .map(|r| r.n)
            .sum();
        assert_eq!(report.headline_cases, from_rows);

        // raising the threshold can only shrink headline counts
        config.min_obs = 300.0;
        let strict = run_experiment(&config, &dataset).unwrap();
        assert!(strict.headline_cases < report.headline_cases);
        // excluded cases land in the low-irradiance table instead
        let low_n: u64 = strict.low_irradiance.iter().map(|r| r.n).sum();
        let total_n: u64 = strict
            .per_lead
            .iter()
            .map(|r| r.n)
            .chain(strict.low_irradiance.iter().map(|r| r.n))
            .sum();
        assert_eq!(total_n, strict.total_cases);
        assert!(low_n > 0);
    }
}
