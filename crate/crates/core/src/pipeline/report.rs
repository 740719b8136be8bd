//! The verification report: a single structured document plus plot-ready
//! delimited tables, written without timestamps so identical experiments
//! render byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::config::{LeadRange, Method};

/// Which calibration diagnostic a histogram row holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramKind {
    /// Verification ranks of an ensemble forecast.
    Rank,
    /// Probability integral transforms of a predictive distribution.
    Pit,
}

impl HistogramKind {
    pub fn name(self) -> &'static str {
        match self {
            HistogramKind::Rank => "rank",
            HistogramKind::Pit => "pit",
        }
    }
}

/// Mean scores for one method at one lead time (cases at or above the
/// observation threshold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadScoreRow {
    pub method: Method,
    pub lead_h: u32,
    pub low_signal: bool,
    pub n: u64,
    pub crps: f64,
    /// Mean absolute error of the forecast median.
    pub mae: f64,
}

/// Scores over the low-irradiance cases excluded from headline tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowIrradianceRow {
    pub method: Method,
    pub lead_h: u32,
    pub n: u64,
    pub crps: f64,
}

/// Scores pooled over a headline lead set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledScoreRow {
    pub method: Method,
    pub lead_set: String,
    pub n: u64,
    pub crps: f64,
    pub mae: f64,
}

/// CRPS skill against the raw ensemble at one lead time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRow {
    pub method: Method,
    pub lead_h: u32,
    pub low_signal: bool,
    /// Verification days entering the daily-mean series.
    pub n_days: u64,
    pub crpss: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

/// CRPS skill pooled over a headline lead set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledSkillRow {
    pub method: Method,
    pub lead_set: String,
    pub n_days: u64,
    pub crpss: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

/// A rank or PIT histogram over one headline lead set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub method: Method,
    pub lead_set: String,
    pub kind: HistogramKind,
    pub n: u64,
    pub counts: Vec<u64>,
    pub relative: Vec<f64>,
    pub reliability_index: f64,
}

/// Central-interval coverage and width at one lead time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: Method,
    pub lead_h: u32,
    pub n: u64,
    pub coverage_pct: f64,
    pub avg_width: f64,
}

/// Coverage pooled over a headline lead set, with the absolute deviation
/// from the nominal level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledCoverageRow {
    pub method: Method,
    pub lead_set: String,
    pub n: u64,
    pub coverage_pct: f64,
    pub avg_width: f64,
    pub abs_dev_pct: f64,
}

/// One logged per-day incident (a skipped method-day, or a day without
/// forecasts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayLogEntry {
    pub date: NaiveDate,
    pub scope: String,
    pub error: String,
}

/// Everything the experiment produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Root seed; every random draw in the experiment derives from it.
    pub root_seed: u64,
    pub methods: Vec<Method>,
    pub verification_start: NaiveDate,
    pub verification_end: NaiveDate,
    pub min_obs: f64,
    pub headline_lead_sets: Vec<LeadRange>,
    pub nominal_coverage_pct: f64,
    /// Bootstrap confidence level, when CIs were requested.
    pub bootstrap_level: Option<f64>,
    pub days_in_period: u32,
    pub days_with_cases: u32,
    /// Forecast cases available for scoring over the verification period.
    pub total_cases: u64,
    /// Cases entering headline tables (lead sets ∩ obs ≥ min_obs).
    pub headline_cases: u64,
    /// True when no case was scored at all.
    pub zero_cases: bool,
    pub per_lead: Vec<LeadScoreRow>,
    pub low_irradiance: Vec<LowIrradianceRow>,
    pub pooled: Vec<PooledScoreRow>,
    pub skill_by_lead: Vec<SkillRow>,
    pub skill_pooled: Vec<PooledSkillRow>,
    pub histograms: Vec<HistogramRow>,
    pub coverage_by_lead: Vec<CoverageRow>,
    pub coverage_pooled: Vec<PooledCoverageRow>,
    pub day_log: Vec<DayLogEntry>,
    /// Methods that produced no scored day at all.
    pub failed_methods: Vec<Method>,
    /// Names of every random substream drawn from the root seed.
    pub substreams: Vec<String>,
}

/// Label for the combined headline lead sets in pooled tables.
pub const COMBINED_LEAD_SET: &str = "headline";

fn quote_csv(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, content)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(path)
}

/// Reads a previously saved structured report.
pub fn load_report(path: &Path) -> Result<VerificationReport> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read report {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("report {}: {e}", path.display())))
}

/// Renders the report into `outdir`: one delimited table per diagnostic, a
/// long-format metrics table for plotting, and the structured document
/// itself. Returns the files written.
pub fn render_report(report: &VerificationReport, outdir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(outdir).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot create output directory {}: {e}", outdir.display()),
        ))
    })?;
    let with_ci = report.bootstrap_level.is_some();
    let mut files = Vec::new();

    let json = serde_json::to_string_pretty(report)?;
    files.push(write_file(outdir, "report.json", &(json + "\n"))?);

    let mut t = String::from("method,lead_h,low_signal,n,crps,mae\n");
    for r in &report.per_lead {
        let _ = writeln!(
            t,
            "{},{},{},{},{},{}",
            r.method, r.lead_h, r.low_signal, r.n, r.crps, r.mae
        );
    }
    files.push(write_file(outdir, "scores_by_lead.csv", &t)?);

    let mut t = String::from("method,lead_h,n,crps\n");
    for r in &report.low_irradiance {
        let _ = writeln!(t, "{},{},{},{}", r.method, r.lead_h, r.n, r.crps);
    }
    files.push(write_file(outdir, "low_irradiance.csv", &t)?);

    let mut t = String::from("method,lead_set,n,crps,mae\n");
    for r in &report.pooled {
        let _ = writeln!(t, "{},{},{},{},{}", r.method, r.lead_set, r.n, r.crps, r.mae);
    }
    files.push(write_file(outdir, "pooled_scores.csv", &t)?);

    let mut t = if with_ci {
        String::from("method,lead_h,low_signal,n_days,crpss,ci_lo,ci_hi\n")
    } else {
        String::from("method,lead_h,low_signal,n_days,crpss\n")
    };
    for r in &report.skill_by_lead {
        if with_ci {
            let _ = writeln!(
                t,
                "{},{},{},{},{},{},{}",
                r.method,
                r.lead_h,
                r.low_signal,
                r.n_days,
                r.crpss,
                opt(r.ci_lo),
                opt(r.ci_hi)
            );
        } else {
            let _ = writeln!(
                t,
                "{},{},{},{},{}",
                r.method, r.lead_h, r.low_signal, r.n_days, r.crpss
            );
        }
    }
    files.push(write_file(outdir, "skill_by_lead.csv", &t)?);

    let mut t = if with_ci {
        String::from("method,lead_set,n_days,crpss,ci_lo,ci_hi\n")
    } else {
        String::from("method,lead_set,n_days,crpss\n")
    };
    for r in &report.skill_pooled {
        if with_ci {
            let _ = writeln!(
                t,
                "{},{},{},{},{},{}",
                r.method,
                r.lead_set,
                r.n_days,
                r.crpss,
                opt(r.ci_lo),
                opt(r.ci_hi)
            );
        } else {
            let _ = writeln!(t, "{},{},{},{}", r.method, r.lead_set, r.n_days, r.crpss);
        }
    }
    files.push(write_file(outdir, "skill_pooled.csv", &t)?);

    let mut t = String::from("method,lead_set,kind,bin,count,relative,reliability_index,n\n");
    for r in &report.histograms {
        for (i, (&c, &rel)) in r.counts.iter().zip(&r.relative).enumerate() {
            let _ = writeln!(
                t,
                "{},{},{},{},{},{},{},{}",
                r.method,
                r.lead_set,
                r.kind.name(),
                i + 1,
                c,
                rel,
                r.reliability_index,
                r.n
            );
        }
    }
    files.push(write_file(outdir, "histograms.csv", &t)?);

    let mut t = String::from("method,lead_h,n,coverage_pct,avg_width\n");
    for r in &report.coverage_by_lead {
        let _ = writeln!(
            t,
            "{},{},{},{},{}",
            r.method, r.lead_h, r.n, r.coverage_pct, r.avg_width
        );
    }
    files.push(write_file(outdir, "coverage_by_lead.csv", &t)?);

    let mut t = String::from("method,lead_set,n,coverage_pct,avg_width,abs_dev_pct\n");
    for r in &report.coverage_pooled {
        let _ = writeln!(
            t,
            "{},{},{},{},{},{}",
            r.method, r.lead_set, r.n, r.coverage_pct, r.avg_width, r.abs_dev_pct
        );
    }
    files.push(write_file(outdir, "coverage_pooled.csv", &t)?);

    let mut t = String::from("date,scope,error\n");
    for r in &report.day_log {
        let _ = writeln!(t, "{},{},{}", r.date, quote_csv(&r.scope), quote_csv(&r.error));
    }
    files.push(write_file(outdir, "day_log.csv", &t)?);

    files.push(write_file(outdir, "metrics_long.csv", &metrics_long(report, with_ci))?);
    Ok(files)
}

/// The plot-ready long table: every metric keyed by method and lead
/// (numeric lead hours, or a lead-set label for pooled rows).
fn metrics_long(report: &VerificationReport, with_ci: bool) -> String {
    let mut t = if with_ci {
        String::from("method,lead_h,metric,value,ci_lo,ci_hi\n")
    } else {
        String::from("method,lead_h,metric,value\n")
    };
    let mut push = |method: Method, lead: String, metric: &str, value: f64, lo: Option<f64>, hi: Option<f64>| {
        if with_ci {
            let _ = writeln!(t, "{method},{lead},{metric},{value},{},{}", opt(lo), opt(hi));
        } else {
            let _ = writeln!(t, "{method},{lead},{metric},{value}");
        }
    };
    for r in &report.per_lead {
        push(r.method, r.lead_h.to_string(), "crps", r.crps, None, None);
        push(r.method, r.lead_h.to_string(), "mae", r.mae, None, None);
    }
    for r in &report.skill_by_lead {
        push(r.method, r.lead_h.to_string(), "crpss", r.crpss, r.ci_lo, r.ci_hi);
    }
    for r in &report.coverage_by_lead {
        push(r.method, r.lead_h.to_string(), "coverage_pct", r.coverage_pct, None, None);
        push(r.method, r.lead_h.to_string(), "avg_width", r.avg_width, None, None);
    }
    for r in &report.pooled {
        push(r.method, r.lead_set.clone(), "crps", r.crps, None, None);
        push(r.method, r.lead_set.clone(), "mae", r.mae, None, None);
    }
    for r in &report.skill_pooled {
        push(r.method, r.lead_set.clone(), "crpss", r.crpss, r.ci_lo, r.ci_hi);
    }
    for r in &report.coverage_pooled {
        push(r.method, r.lead_set.clone(), "coverage_pct", r.coverage_pct, None, None);
        push(r.method, r.lead_set.clone(), "avg_width", r.avg_width, None, None);
        push(r.method, r.lead_set.clone(), "coverage_abs_dev_pct", r.abs_dev_pct, None, None);
    }
    for r in &report.histograms {
        push(
            r.method,
            r.lead_set.clone(),
            &format!("reliability_index_{}", r.kind.name()),
            r.reliability_index,
            None,
            None,
        );
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_report() -> VerificationReport {
        VerificationReport {
            root_seed: 7,
            methods: vec![Method::Raw],
            verification_start: NaiveDate::from_ymd_opt(2021, 4, 1).unwrap(),
            verification_end: NaiveDate::from_ymd_opt(2021, 4, 2).unwrap(),
            min_obs: 7.5,
            headline_lead_sets: vec![LeadRange(12, 24)],
            nominal_coverage_pct: 700.0 / 9.0,
            bootstrap_level: Some(0.95),
            days_in_period: 2,
            days_with_cases: 0,
            total_cases: 0,
            headline_cases: 0,
            zero_cases: true,
            per_lead: vec![],
            low_irradiance: vec![],
            pooled: vec![],
            skill_by_lead: vec![],
            skill_pooled: vec![],
            histograms: vec![],
            coverage_by_lead: vec![],
            coverage_pooled: vec![],
            day_log: vec![],
            failed_methods: vec![],
            substreams: vec![],
        }
    }

    #[test]
    fn empty_report_renders_headers_and_zero_marker() {
        let dir = tempfile::tempdir().unwrap();
        let files = render_report(&empty_report(), dir.path()).unwrap();
        assert!(files.iter().any(|p| p.ends_with("report.json")));
        let scores = std::fs::read_to_string(dir.path().join("scores_by_lead.csv")).unwrap();
        assert_eq!(scores, "method,lead_h,low_signal,n,crps,mae\n");
        let long = std::fs::read_to_string(dir.path().join("metrics_long.csv")).unwrap();
        assert_eq!(long, "method,lead_h,metric,value,ci_lo,ci_hi\n");
        let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        assert!(json.contains("\"zero_cases\": true"));
        assert!(json.contains("\"total_cases\": 0"));
    }

    #[test]
    fn report_roundtrips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = empty_report();
        report.zero_cases = false;
        report.per_lead.push(LeadScoreRow {
            method: Method::Raw,
            lead_h: 14,
            low_signal: false,
            n: 31,
            crps: 41.25,
            mae: 52.125,
        });
        report.skill_by_lead.push(SkillRow {
            method: Method::Emos,
            lead_h: 14,
            low_signal: false,
            n_days: 20,
            crpss: 0.4375,
            ci_lo: Some(0.25),
            ci_hi: Some(0.5),
        });
        render_report(&report, dir.path()).unwrap();
        let loaded = load_report(&dir.path().join("report.json")).unwrap();
        assert_eq!(loaded, report);
    }

    #[test]
    fn ci_columns_follow_the_bootstrap_request() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = empty_report();
        report.bootstrap_level = None;
        report.skill_by_lead.push(SkillRow {
            method: Method::Drn,
            lead_h: 13,
            low_signal: false,
            n_days: 5,
            crpss: 0.5,
            ci_lo: None,
            ci_hi: None,
        });
        render_report(&report, dir.path()).unwrap();
        let skill = std::fs::read_to_string(dir.path().join("skill_by_lead.csv")).unwrap();
        assert_eq!(skill, "method,lead_h,low_signal,n_days,crpss\ndrn,13,false,5,0.5\n");
        let long = std::fs::read_to_string(dir.path().join("metrics_long.csv")).unwrap();
        assert!(long.starts_with("method,lead_h,metric,value\n"));
        assert!(!long.contains("ci_lo"));
    }

    #[test]
    fn long_table_keys_every_row_by_method_and_lead() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = empty_report();
        report.zero_cases = false;
        report.pooled.push(PooledScoreRow {
            method: Method::Corrected,
            lead_set: "12-24".into(),
            n: 100,
            crps: 30.5,
            mae: 40.25,
        });
        report.histograms.push(HistogramRow {
            method: Method::Corrected,
            lead_set: "12-24".into(),
            kind: HistogramKind::Rank,
            n: 100,
            counts: vec![50, 50],
            relative: vec![0.5, 0.5],
            reliability_index: 0.0,
        });
        render_report(&report, dir.path()).unwrap();
        let long = std::fs::read_to_string(dir.path().join("metrics_long.csv")).unwrap();
        for line in long.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 6, "row: {line}");
            assert!(!fields[0].is_empty() && !fields[1].is_empty() && !fields[2].is_empty());
        }
        assert!(long.contains("corrected,12-24,reliability_index_rank,0"));
    }

    #[test]
    fn unwritable_outdir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("occupied");
        std::fs::write(&blocker, "file, not a directory").unwrap();
        let err = render_report(&empty_report(), &blocker).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn log_entries_with_commas_stay_one_field() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = empty_report();
        report.day_log.push(DayLogEntry {
            date: NaiveDate::from_ymd_opt(2021, 4, 1).unwrap(),
            scope: "emos".into(),
            error: "lead 13 h, cluster 2: too thin".into(),
        });
        render_report(&report, dir.path()).unwrap();
        let log = std::fs::read_to_string(dir.path().join("day_log.csv")).unwrap();
        assert!(log.contains("\"lead 13 h, cluster 2: too thin\""));
    }
}
