//! Typed containers, CSV ingestion, and structural validation for the
//! reference study (with outcomes), monitoring-study snapshots (surrogates
//! only), and the analysis schedule.
//!
//! CSV conventions: comma-separated, UTF-8, header row required, '.' decimal
//! point, empty cell = missing. The reference study uses columns
//! `id,group,y,s_1,...,s_J`; snapshots use `id,group,s_1,...,s_k`. Rows with
//! a missing value in any required column are dropped (complete case) and
//! counted in the ingestion report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Treatment arm. Group labels are fixed to {0, 1} with 0 = control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    pub fn from_label(label: &str, row: usize) -> Result<Arm> {
        match label.trim() {
            "0" => Ok(Arm::Control),
            "1" => Ok(Arm::Treatment),
            other => Err(Error::InvalidGroupLabel {
                label: other.to_string(),
                row,
            }),
        }
    }

    pub fn label(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }
}

/// One subject in the reference study: outcome plus all J surrogate values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectA {
    pub id: String,
    pub arm: Arm,
    pub outcome: f64,
    pub surrogates: Vec<f64>,
}

/// The completed reference study: outcomes and surrogates at J time points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyADataset {
    pub subjects: Vec<SubjectA>,
    /// Measurement times for the J surrogate columns, strictly increasing.
    pub schedule_times: Vec<f64>,
}

impl StudyADataset {
    pub fn new(subjects: Vec<SubjectA>, schedule_times: Vec<f64>) -> Result<Self> {
        let j = schedule_times.len();
        if j == 0 {
            return Err(Error::InvalidSchedule("no surrogate columns".into()));
        }
        if !strictly_increasing(&schedule_times) {
            return Err(Error::ScheduleNotIncreasing);
        }
        for s in &subjects {
            if s.surrogates.len() != j {
                return Err(Error::Config(format!(
                    "subject {} has {} surrogate values, expected {}",
                    s.id,
                    s.surrogates.len(),
                    j
                )));
            }
        }
        let ds = StudyADataset {
            subjects,
            schedule_times,
        };
        if ds.arm_size(Arm::Control) == 0 {
            return Err(Error::EmptyArm { arm: "control" });
        }
        if ds.arm_size(Arm::Treatment) == 0 {
            return Err(Error::EmptyArm { arm: "treatment" });
        }
        Ok(ds)
    }

    pub fn n_columns(&self) -> usize {
        self.schedule_times.len()
    }

    pub fn arm_size(&self, arm: Arm) -> usize {
        self.subjects.iter().filter(|s| s.arm == arm).count()
    }

    /// (surrogate at `column`, outcome) pairs for one arm; `column` is 1-based.
    pub fn arm_pairs(&self, arm: Arm, column: usize) -> Vec<(f64, f64)> {
        self.subjects
            .iter()
            .filter(|s| s.arm == arm)
            .map(|s| (s.surrogates[column - 1], s.outcome))
            .collect()
    }

    pub fn arm_surrogates(&self, arm: Arm, column: usize) -> Vec<f64> {
        self.subjects
            .iter()
            .filter(|s| s.arm == arm)
            .map(|s| s.surrogates[column - 1])
            .collect()
    }

    pub fn arm_outcomes(&self, arm: Arm) -> Vec<f64> {
        self.subjects
            .iter()
            .filter(|s| s.arm == arm)
            .map(|s| s.outcome)
            .collect()
    }
}

/// One subject in a monitoring snapshot: surrogates through the current
/// analysis, never an outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectB {
    pub id: String,
    pub arm: Arm,
    pub surrogates: Vec<f64>,
}

/// Monitoring-study data observed through analysis `j_obs`. Subjects carry
/// surrogate columns 1..=j_obs and no outcome field exists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyBSnapshot {
    pub subjects: Vec<SubjectB>,
    pub j_obs: usize,
}

impl StudyBSnapshot {
    pub fn new(subjects: Vec<SubjectB>, j_obs: usize) -> Result<Self> {
        if j_obs == 0 {
            return Err(Error::Config("j_obs must be at least 1".into()));
        }
        for s in &subjects {
            if s.surrogates.len() != j_obs {
                return Err(Error::Config(format!(
                    "subject {} has {} surrogate values, expected {}",
                    s.id,
                    s.surrogates.len(),
                    j_obs
                )));
            }
        }
        let snap = StudyBSnapshot { subjects, j_obs };
        if snap.arm_size(Arm::Control) == 0 {
            return Err(Error::EmptyArm { arm: "control" });
        }
        if snap.arm_size(Arm::Treatment) == 0 {
            return Err(Error::EmptyArm { arm: "treatment" });
        }
        Ok(snap)
    }

    pub fn arm_size(&self, arm: Arm) -> usize {
        self.subjects.iter().filter(|s| s.arm == arm).count()
    }

    /// (subject id, surrogate at `column`) for one arm; `column` is 1-based.
    pub fn arm_column(&self, arm: Arm, column: usize) -> Vec<(&str, f64)> {
        self.subjects
            .iter()
            .filter(|s| s.arm == arm)
            .map(|s| (s.id.as_str(), s.surrogates[column - 1]))
            .collect()
    }
}

/// Monitoring schedule: analysis times for the new study, the reference-study
/// surrogate column borrowed at each analysis, and the first analysis at
/// which futility stopping is allowed (if any).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSchedule {
    pub analysis_times: Vec<f64>,
    /// 1-based reference-study column per analysis.
    pub study_a_column_map: Vec<usize>,
    pub j0: Option<usize>,
}

impl AnalysisSchedule {
    pub fn new(
        analysis_times: Vec<f64>,
        study_a_column_map: Vec<usize>,
        j0: Option<usize>,
        study_a_columns: usize,
    ) -> Result<Self> {
        let j = analysis_times.len();
        if j == 0 {
            return Err(Error::InvalidSchedule("no analyses".into()));
        }
        if !strictly_increasing(&analysis_times) {
            return Err(Error::ScheduleNotIncreasing);
        }
        if study_a_column_map.len() != j {
            return Err(Error::InvalidSchedule(format!(
                "column map has {} entries for {} analyses",
                study_a_column_map.len(),
                j
            )));
        }
        if let Some(&bad) = study_a_column_map
            .iter()
            .find(|&&c| c == 0 || c > study_a_columns)
        {
            return Err(Error::InvalidSchedule(format!(
                "column map entry {bad} outside 1..={study_a_columns}"
            )));
        }
        if let Some(j0) = j0 {
            if j0 == 0 || j0 > j {
                return Err(Error::InvalidSchedule(format!(
                    "j0 = {j0} outside 1..={j}"
                )));
            }
        }
        Ok(AnalysisSchedule {
            analysis_times,
            study_a_column_map,
            j0,
        })
    }

    /// Equally spaced analyses 1..=J borrowing column j at analysis j.
    pub fn equally_spaced(j: usize, j0: Option<usize>) -> Result<Self> {
        let times: Vec<f64> = (1..=j).map(|i| i as f64).collect();
        let map: Vec<usize> = (1..=j).collect();
        AnalysisSchedule::new(times, map, j0, j)
    }

    pub fn n_analyses(&self) -> usize {
        self.analysis_times.len()
    }

    /// Information fractions t_j / t_J.
    pub fn fractions(&self) -> Vec<f64> {
        let last = *self.analysis_times.last().unwrap();
        self.analysis_times.iter().map(|t| t / last).collect()
    }

    pub fn column_for(&self, analysis: usize) -> usize {
        self.study_a_column_map[analysis - 1]
    }
}

/// Row accounting from CSV ingestion.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                Error::io(path, std::io::Error::other(e.to_string()))
            }
            _ => Error::Csv {
                path: path.display().to_string(),
                message: e.to_string(),
            },
        })
}

/// Locate `id`, `group`, optional `y`, and the contiguous run s_1, s_2, ...
/// in a header row. Returns (id idx, group idx, y idx, s column idxs).
fn header_layout(
    headers: &csv::StringRecord,
    path: &Path,
    need_outcome: bool,
) -> Result<(usize, usize, Option<usize>, Vec<usize>)> {
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let id = find("id").ok_or(Error::MissingColumn {
        column: "id".into(),
    })?;
    let group = find("group").ok_or(Error::MissingColumn {
        column: "group".into(),
    })?;
    let y = find("y");
    if need_outcome && y.is_none() {
        return Err(Error::MissingColumn { column: "y".into() });
    }
    let mut s_cols = Vec::new();
    loop {
        let name = format!("s_{}", s_cols.len() + 1);
        match headers.iter().position(|h| h.eq_ignore_ascii_case(&name)) {
            Some(idx) => s_cols.push(idx),
            None => break,
        }
    }
    if s_cols.is_empty() {
        return Err(Error::Csv {
            path: path.display().to_string(),
            message: "no surrogate columns s_1, s_2, ... found in header".into(),
        });
    }
    Ok((id, group, y, s_cols))
}

fn parse_cell(record: &csv::StringRecord, idx: usize) -> Option<&str> {
    match record.get(idx) {
        Some(v) if !v.is_empty() => Some(v),
        _ => None,
    }
}

fn parse_number(
    record: &csv::StringRecord,
    idx: usize,
    path: &Path,
    row: usize,
    column: &str,
) -> Result<Option<f64>> {
    match parse_cell(record, idx) {
        None => Ok(None),
        Some(v) => v.parse::<f64>().map(Some).map_err(|_| Error::Csv {
            path: path.display().to_string(),
            message: format!("row {row}: column {column} value {v:?} is not a number"),
        }),
    }
}

/// Load the reference study from CSV (`id,group,y,s_1,...,s_J`). Rows with
/// any missing surrogate or outcome are dropped and counted in the report.
/// `schedule_times` gives the measurement times of the J columns; defaults
/// to 1..=J when `None`.
pub fn load_study_a(
    path: &Path,
    schedule_times: Option<Vec<f64>>,
) -> Result<(StudyADataset, IngestReport)> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .clone();
    let (id_idx, group_idx, y_idx, s_cols) = header_layout(&headers, path, true)?;
    let y_idx = y_idx.unwrap();
    let j = s_cols.len();

    let times = match schedule_times {
        Some(t) => {
            if t.len() != j {
                return Err(Error::InvalidSchedule(format!(
                    "{} schedule times given for {} surrogate columns",
                    t.len(),
                    j
                )));
            }
            t
        }
        None => (1..=j).map(|i| i as f64).collect(),
    };

    let mut report = IngestReport::default();
    let mut subjects = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let row = row_no + 2; // 1-based, after header
        let record = record.map_err(|e| Error::Csv {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        report.rows_read += 1;

        let group_cell = parse_cell(&record, group_idx).ok_or(Error::InvalidGroupLabel {
            label: String::new(),
            row,
        })?;
        let arm = Arm::from_label(group_cell, row)?;

        let outcome = parse_number(&record, y_idx, path, row, "y")?;
        let mut surrogates = Vec::with_capacity(j);
        let mut complete = outcome.is_some();
        for (k, &idx) in s_cols.iter().enumerate() {
            match parse_number(&record, idx, path, row, &format!("s_{}", k + 1))? {
                Some(v) => surrogates.push(v),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete {
            report.rows_dropped += 1;
            continue;
        }
        let id = parse_cell(&record, id_idx)
            .map(str::to_string)
            .unwrap_or_else(|| format!("row{row}"));
        subjects.push(SubjectA {
            id,
            arm,
            outcome: outcome.unwrap(),
            surrogates,
        });
    }

    Ok((StudyADataset::new(subjects, times)?, report))
}

/// Load a monitoring snapshot from CSV (`id,group,s_1,...`), keeping exactly
/// columns 1..=j_obs and dropping rows incomplete over those columns.
pub fn load_study_b(path: &Path, j_obs: usize) -> Result<(StudyBSnapshot, IngestReport)> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .clone();
    let (id_idx, group_idx, _, s_cols) = header_layout(&headers, path, false)?;
    if j_obs == 0 {
        return Err(Error::Config("j_obs must be at least 1".into()));
    }
    if j_obs > s_cols.len() {
        return Err(Error::AnalysisColumnMissing {
            requested: j_obs,
            available: s_cols.len(),
        });
    }

    let mut report = IngestReport::default();
    let mut subjects = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let row = row_no + 2;
        let record = record.map_err(|e| Error::Csv {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        report.rows_read += 1;

        let group_cell = parse_cell(&record, group_idx).ok_or(Error::InvalidGroupLabel {
            label: String::new(),
            row,
        })?;
        let arm = Arm::from_label(group_cell, row)?;

        let mut surrogates = Vec::with_capacity(j_obs);
        let mut complete = true;
        for (k, &idx) in s_cols.iter().take(j_obs).enumerate() {
            match parse_number(&record, idx, path, row, &format!("s_{}", k + 1))? {
                Some(v) => surrogates.push(v),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete {
            report.rows_dropped += 1;
            continue;
        }
        let id = parse_cell(&record, id_idx)
            .map(str::to_string)
            .unwrap_or_else(|| format!("row{row}"));
        subjects.push(SubjectB {
            id,
            arm,
            surrogates,
        });
    }

    Ok((StudyBSnapshot::new(subjects, j_obs)?, report))
}

/// Count contiguous s_1, s_2, ... columns present in a snapshot CSV header.
pub fn snapshot_columns(path: &Path) -> Result<usize> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .clone();
    let (_, _, _, s_cols) = header_layout(&headers, path, false)?;
    Ok(s_cols.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportStatus {
    Pass,
    Warn,
    Fail,
}

/// Support containment result at one analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportCheck {
    pub analysis: usize,
    pub study_a_column: usize,
    pub range_lo: f64,
    pub range_hi: f64,
    pub n_checked: usize,
    pub n_outside: usize,
    pub fraction_outside: f64,
    pub status: SupportStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportReport {
    pub tolerance: f64,
    pub checks: Vec<SupportCheck>,
}

impl SupportReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status == SupportStatus::Pass)
    }
}

/// Check that monitoring-study surrogate values (both arms) fall inside the
/// closed [min, max] range of the reference control arm at the mapped
/// column, per analysis 1..=snapshot.j_obs. A fraction above `tolerance`
/// fails; a nonzero fraction at or below it warns.
pub fn check_support_c5(
    a: &StudyADataset,
    b: &StudyBSnapshot,
    schedule: &AnalysisSchedule,
    tolerance: f64,
) -> SupportReport {
    let mut checks = Vec::with_capacity(b.j_obs);
    for analysis in 1..=b.j_obs {
        let column = schedule.column_for(analysis);
        let ref_values = a.arm_surrogates(Arm::Control, column);
        let lo = ref_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ref_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut n_outside = 0usize;
        let mut n_checked = 0usize;
        for subject in &b.subjects {
            let v = subject.surrogates[analysis - 1];
            n_checked += 1;
            if v < lo || v > hi {
                n_outside += 1;
            }
        }
        let fraction = if n_checked == 0 {
            0.0
        } else {
            n_outside as f64 / n_checked as f64
        };
        let status = if fraction > tolerance {
            SupportStatus::Fail
        } else if fraction > 0.0 {
            SupportStatus::Warn
        } else {
            SupportStatus::Pass
        };
        checks.push(SupportCheck {
            analysis,
            study_a_column: column,
            range_lo: lo,
            range_hi: hi,
            n_checked,
            n_outside,
            fraction_outside: fraction,
            status,
        });
    }
    SupportReport { tolerance, checks }
}
