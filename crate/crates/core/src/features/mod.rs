//! Weekly activity logs to Score Ranking Point (SRP) sequences.
//!
//! Each student-week yields 12 SRPs on a 0-10 scale, stored divided by 10:
//!
//! | feature | rule |
//! |---|---|
//! | attendance | present 10, late 5, absent 0 |
//! | report | on time 10, late 5, none 0; averaged over the week's assignments |
//! | the ten activity counts | within-course-week decile rank among active students, 10 (top) .. 1 |
//!
//! A zero activity value always scores 0.

mod io;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    course_year, load_course, read_activity_csv, read_features_csv, read_grades_csv,
    write_activity_csv, write_features_csv, write_grades_csv, FEATURES_HEADER,
};

pub const NUM_FEATURES: usize = 12;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "attendance",
    "report",
    "course_accesses",
    "reading_time",
    "markers",
    "memos",
    "total_actions",
    "open",
    "next",
    "prev",
    "page_jump",
    "close",
];

/// Number of rank-scored activity features (everything but attendance and report).
pub const NUM_RANKED: usize = NUM_FEATURES - 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attendance {
    Present,
    Late,
    Absent,
}

impl Attendance {
    pub fn as_str(self) -> &'static str {
        match self {
            Attendance::Present => "present",
            Attendance::Late => "late",
            Attendance::Absent => "absent",
        }
    }
}

impl FromStr for Attendance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "present" => Ok(Attendance::Present),
            "late" => Ok(Attendance::Late),
            "absent" => Ok(Attendance::Absent),
            other => Err(Error::unknown("attendance status", other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    OnTime,
    Late,
    None,
}

impl ReportStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportStatus::OnTime => "on_time",
            ReportStatus::Late => "late",
            ReportStatus::None => "none",
        }
    }
}

impl FromStr for ReportStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "on_time" => Ok(ReportStatus::OnTime),
            "late" => Ok(ReportStatus::Late),
            "none" => Ok(ReportStatus::None),
            other => Err(Error::unknown("report status", other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Grade {
    A,
    B,
    C,
    D,
    F,
}

impl Grade {
    pub const ALL: [Grade; 5] = [Grade::A, Grade::B, Grade::C, Grade::D, Grade::F];

    /// C, D and F are at-risk.
    pub fn is_at_risk(self) -> bool {
        matches!(self, Grade::C | Grade::D | Grade::F)
    }

    pub fn label(self) -> u8 {
        u8::from(self.is_at_risk())
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Grade {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Grade::A),
            "B" | "b" => Ok(Grade::B),
            "C" | "c" => Ok(Grade::C),
            "D" | "d" => Ok(Grade::D),
            "F" | "f" => Ok(Grade::F),
            other => Err(Error::unknown("grade", other)),
        }
    }
}

/// One student's raw activity in one week.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityRecord {
    pub student_id: String,
    /// 1-based week index.
    pub week: usize,
    pub attendance: Attendance,
    /// Statuses of the week's assignments; empty when nothing was due.
    pub reports: Vec<ReportStatus>,
    pub course_accesses: u64,
    /// Seconds.
    pub reading_time: f64,
    pub markers: u64,
    pub memos: u64,
    pub total_actions: u64,
    pub open: u64,
    pub next: u64,
    pub prev: u64,
    pub page_jump: u64,
    pub close: u64,
}

impl ActivityRecord {
    /// A week with no activity at all.
    pub fn inactive(student_id: impl Into<String>, week: usize) -> Self {
        ActivityRecord {
            student_id: student_id.into(),
            week,
            attendance: Attendance::Absent,
            reports: Vec::new(),
            course_accesses: 0,
            reading_time: 0.0,
            markers: 0,
            memos: 0,
            total_actions: 0,
            open: 0,
            next: 0,
            prev: 0,
            page_jump: 0,
            close: 0,
        }
    }

    /// Raw values of the rank-scored features, in [`FEATURE_NAMES`] order.
    pub fn ranked_values(&self) -> [f64; NUM_RANKED] {
        [
            self.course_accesses as f64,
            self.reading_time,
            self.markers as f64,
            self.memos as f64,
            self.total_actions as f64,
            self.open as f64,
            self.next as f64,
            self.prev as f64,
            self.page_jump as f64,
            self.close as f64,
        ]
    }
}

pub type WeekFeatures = [f64; NUM_FEATURES];

/// Student ids with their final grades.
pub type Roster = Vec<(String, Grade)>;

/// Normalised SRP matrix (weeks x 12) of one student.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentSequence {
    pub student_id: String,
    pub weeks: Vec<WeekFeatures>,
    pub label: u8,
    /// Known when built from a grade roster; absent when read back from a
    /// featurised file, which stores only the label.
    pub grade: Option<Grade>,
}

impl StudentSequence {
    pub fn len(&self) -> usize {
        self.weeks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weeks.is_empty()
    }
}

pub fn srp_attendance(status: Attendance) -> f64 {
    match status {
        Attendance::Present => 10.0,
        Attendance::Late => 5.0,
        Attendance::Absent => 0.0,
    }
}

/// Mean report score over the week's assignments; 0 when none were due.
pub fn srp_report(statuses: &[ReportStatus]) -> f64 {
    if statuses.is_empty() {
        return 0.0;
    }
    let total: f64 = statuses
        .iter()
        .map(|s| match s {
            ReportStatus::OnTime => 10.0,
            ReportStatus::Late => 5.0,
            ReportStatus::None => 0.0,
        })
        .sum();
    total / statuses.len() as f64
}

/// Decile scores for one feature across the students of one course-week.
///
/// Zero values score 0. The remaining `N` active students are ranked by
/// descending value; rank position `j` (1-based, ties share the smallest
/// position of their block) scores `10 - floor(10 (j - 1) / N)`.
pub fn srp_percentile(values: &[f64]) -> Vec<u8> {
    let mut scores = vec![0u8; values.len()];
    let mut active: Vec<usize> = (0..values.len()).filter(|&i| values[i] > 0.0).collect();
    let n = active.len();
    if n == 0 {
        return scores;
    }
    active.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut position = 1;
    for (k, &i) in active.iter().enumerate() {
        if k > 0 && values[i] != values[active[k - 1]] {
            position = k + 1;
        }
        scores[i] = (10 - (10 * (position - 1)) / n) as u8;
    }
    scores
}

/// Featurises one course offering of `weeks` weeks.
///
/// Students come from the roster, in roster order; weeks without a record
/// count as zero activity. Records for students missing from the roster are
/// an error.
pub fn build_sequences(
    records: &[ActivityRecord],
    roster: &[(String, Grade)],
    weeks: usize,
) -> Result<Vec<StudentSequence>> {
    if weeks == 0 {
        return Err(Error::invalid("course must have at least one week"));
    }
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(roster.len());
    for (i, (id, _)) in roster.iter().enumerate() {
        if index.insert(id.as_str(), i).is_some() {
            return Err(Error::invalid(format!(
                "student `{id}` appears twice in the grade roster"
            )));
        }
    }

    // table[week][student]
    let mut table: Vec<Vec<Option<&ActivityRecord>>> = vec![vec![None; roster.len()]; weeks];
    for rec in records {
        let &s = index.get(rec.student_id.as_str()).ok_or_else(|| {
            Error::invalid(format!(
                "student `{}` has activity but no grade",
                rec.student_id
            ))
        })?;
        if rec.week == 0 || rec.week > weeks {
            return Err(Error::invalid(format!(
                "student `{}` has a record for week {} outside 1..={weeks}",
                rec.student_id, rec.week
            )));
        }
        if rec.reading_time < 0.0 || !rec.reading_time.is_finite() {
            return Err(Error::invalid(format!(
                "student `{}` week {}: reading time must be a nonnegative number",
                rec.student_id, rec.week
            )));
        }
        let slot = &mut table[rec.week - 1][s];
        if slot.is_some() {
            return Err(Error::invalid(format!(
                "duplicate record for student `{}` week {}",
                rec.student_id, rec.week
            )));
        }
        *slot = Some(rec);
    }

    let mut matrices = vec![vec![[0.0; NUM_FEATURES]; weeks]; roster.len()];
    for (w, row) in table.iter().enumerate() {
        for (s, rec) in row.iter().enumerate() {
            if let Some(rec) = rec {
                matrices[s][w][0] = srp_attendance(rec.attendance) / 10.0;
                matrices[s][w][1] = srp_report(&rec.reports) / 10.0;
            }
        }
        for f in 0..NUM_RANKED {
            let column: Vec<f64> = row
                .iter()
                .map(|rec| rec.map_or(0.0, |r| r.ranked_values()[f]))
                .collect();
            for (s, score) in srp_percentile(&column).into_iter().enumerate() {
                matrices[s][w][2 + f] = f64::from(score) / 10.0;
            }
        }
    }

    Ok(roster
        .iter()
        .zip(matrices)
        .map(|((id, grade), weeks)| StudentSequence {
            student_id: id.clone(),
            weeks,
            label: grade.label(),
            grade: Some(*grade),
        })
        .collect())
}

/// First `n` weeks of a sequence.
pub fn truncate(seq: &StudentSequence, n: usize) -> Result<StudentSequence> {
    if n == 0 || n > seq.weeks.len() {
        return Err(Error::invalid(format!(
            "truncation length {n} outside 1..={}",
            seq.weeks.len()
        )));
    }
    Ok(StudentSequence {
        student_id: seq.student_id.clone(),
        weeks: seq.weeks[..n].to_vec(),
        label: seq.label,
        grade: seq.grade,
    })
}

/// One featurised course offering.
#[derive(Debug, Clone, PartialEq)]
pub struct Course {
    pub name: String,
    pub year: u32,
    pub sequences: Vec<StudentSequence>,
}

/// A train-on-earlier-years / test-on-later-year split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub train: Vec<String>,
    pub test: String,
}

/// Course naming used by the benchmark: `PT<year>`.
pub fn course_name(year: u32) -> String {
    format!("PT{year}")
}

impl SplitSpec {
    /// Parses names of the form `T<yy>[<yy>..]P<yy>`, e.g. `T1920P21`.
    pub fn from_name(name: &str) -> Result<Self> {
        let bad = || Error::unknown("split name", name);
        let rest = name.strip_prefix('T').ok_or_else(bad)?;
        let (train, test) = rest.split_once('P').ok_or_else(bad)?;
        if train.is_empty() || train.len() % 2 != 0 || test.len() != 2 {
            return Err(bad());
        }
        let year =
            |s: &str| -> Result<u32> { s.parse::<u32>().map(|y| 2000 + y).map_err(|_| bad()) };
        let train = (0..train.len() / 2)
            .map(|i| year(&train[2 * i..2 * i + 2]).map(course_name))
            .collect::<Result<Vec<_>>>()?;
        Ok(SplitSpec {
            name: name.to_string(),
            train,
            test: course_name(year(test)?),
        })
    }
}

/// The six dataset splits over the four benchmark courses.
pub fn standard_splits() -> Vec<SplitSpec> {
    [
        "T19P20",
        "T20P21",
        "T21P22",
        "T1920P21",
        "T2021P22",
        "T192021P22",
    ]
    .iter()
    .map(|n| SplitSpec::from_name(n).expect("valid built-in split name"))
    .collect()
}

/// Train and test sets for a split.
///
/// SRPs are computed within each course, so the test course's features do
/// not depend on the training courses.
pub fn make_split(
    spec: &SplitSpec,
    courses: &[Course],
) -> Result<(Vec<StudentSequence>, Vec<StudentSequence>)> {
    let find = |name: &str| {
        courses
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::unknown("course", name))
    };
    let test = find(&spec.test)?;
    let mut train = Vec::new();
    for name in &spec.train {
        if name == &spec.test {
            return Err(Error::invalid(format!(
                "split {}: course {name} is both train and test",
                spec.name
            )));
        }
        let c = find(name)?;
        if c.year >= test.year {
            return Err(Error::invalid(format!(
                "split {}: train course {} is not earlier than test course {}",
                spec.name, c.name, test.name
            )));
        }
        train.extend(c.sequences.iter().cloned());
    }
    Ok((train, test.sequences.clone()))
}

#[cfg(test)]
mod tests;
