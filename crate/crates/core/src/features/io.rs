//! CSV formats for activity logs, grade rosters and featurised datasets.
//!
//! Activity log columns: `student_id, week, attendance, reports,
//! course_accesses, reading_time, markers, memos, total_actions, open, next,
//! prev, page_jump, close`. `reports` holds `;`-separated statuses
//! (`on_time`, `late`, `none`) and is empty when no assignment was due.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActivityRecord, Attendance, Grade, ReportStatus, StudentSequence, NUM_FEATURES};
use crate::error::{Error, Result};

pub const FEATURES_HEADER: [&str; 3 + NUM_FEATURES] = [
    "student_id",
    "label",
    "week",
    "srp_attendance",
    "srp_report",
    "srp_course_accesses",
    "srp_reading_time",
    "srp_markers",
    "srp_memos",
    "srp_total_actions",
    "srp_open",
    "srp_next",
    "srp_prev",
    "srp_page_jump",
    "srp_close",
];

#[derive(Debug, Serialize, Deserialize)]
struct ActivityRow {
    student_id: String,
    week: usize,
    attendance: String,
    reports: String,
    course_accesses: u64,
    reading_time: f64,
    markers: u64,
    memos: u64,
    total_actions: u64,
    open: u64,
    next: u64,
    prev: u64,
    page_jump: u64,
    close: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GradeRow {
    student_id: String,
    grade: String,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e)
}

pub fn read_activity_csv<R: Read>(reader: R, origin: &Path) -> Result<Vec<ActivityRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<ActivityRow>().enumerate() {
        let row = row.map_err(|e| csv_err(origin, e))?;
        let at = |e: Error| Error::parse(origin, format!("row {}: {e}", line + 2));
        let attendance: Attendance = row.attendance.parse().map_err(at)?;
        let reports = row
            .reports
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse::<ReportStatus>)
            .collect::<Result<Vec<_>>>()
            .map_err(at)?;
        out.push(ActivityRecord {
            student_id: row.student_id,
            week: row.week,
            attendance,
            reports,
            course_accesses: row.course_accesses,
            reading_time: row.reading_time,
            markers: row.markers,
            memos: row.memos,
            total_actions: row.total_actions,
            open: row.open,
            next: row.next,
            prev: row.prev,
            page_jump: row.page_jump,
            close: row.close,
        });
    }
    Ok(out)
}

pub fn write_activity_csv<W: Write>(writer: W, records: &[ActivityRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in records {
        let row = ActivityRow {
            student_id: r.student_id.clone(),
            week: r.week,
            attendance: r.attendance.as_str().to_string(),
            reports: r
                .reports
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(";"),
            course_accesses: r.course_accesses,
            reading_time: r.reading_time,
            markers: r.markers,
            memos: r.memos,
            total_actions: r.total_actions,
            open: r.open,
            next: r.next,
            prev: r.prev,
            page_jump: r.page_jump,
            close: r.close,
        };
        wtr.serialize(row)
            .map_err(|e| csv_err(Path::new("<output>"), e))?;
    }
    wtr.flush().map_err(|e| Error::io("<output>", e))
}

pub fn read_grades_csv<R: Read>(reader: R, origin: &Path) -> Result<super::Roster> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize::<GradeRow>()
        .enumerate()
        .map(|(line, row)| {
            let row = row.map_err(|e| csv_err(origin, e))?;
            let grade = row
                .grade
                .parse()
                .map_err(|e| Error::parse(origin, format!("row {}: {e}", line + 2)))?;
            Ok((row.student_id, grade))
        })
        .collect()
}

pub fn write_grades_csv<W: Write>(writer: W, roster: &[(String, Grade)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (id, grade) in roster {
        wtr.serialize(GradeRow {
            student_id: id.clone(),
            grade: grade.to_string(),
        })
        .map_err(|e| csv_err(Path::new("<output>"), e))?;
    }
    wtr.flush().map_err(|e| Error::io("<output>", e))
}

/// One row per student-week.
pub fn write_features_csv<W: Write>(writer: W, sequences: &[StudentSequence]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| csv_err(Path::new("<output>"), e);
    wtr.write_record(FEATURES_HEADER).map_err(fail)?;
    for seq in sequences {
        for (w, week) in seq.weeks.iter().enumerate() {
            let mut record = vec![
                seq.student_id.clone(),
                seq.label.to_string(),
                (w + 1).to_string(),
            ];
            record.extend(week.iter().map(|v| v.to_string()));
            wtr.write_record(&record).map_err(fail)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<output>", e))
}

/// Reads a featurised dataset; students keep their first-appearance order
/// and must have contiguous weeks starting at 1.
pub fn read_features_csv<R: Read>(reader: R, origin: &Path) -> Result<Vec<StudentSequence>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    if header.iter().ne(FEATURES_HEADER.iter().copied()) {
        return Err(Error::parse(
            origin,
            "unexpected header for a features file",
        ));
    }
    let mut out: Vec<StudentSequence> = Vec::new();
    let mut positions = std::collections::HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let bad = |msg: String| Error::parse(origin, format!("row {}: {msg}", line + 2));
        let id = rec[0].to_string();
        let label: u8 = rec[1]
            .parse()
            .map_err(|_| bad(format!("bad label `{}`", &rec[1])))?;
        if label > 1 {
            return Err(bad(format!("label must be 0 or 1, got {label}")));
        }
        let week: usize = rec[2]
            .parse()
            .map_err(|_| bad(format!("bad week `{}`", &rec[2])))?;
        let mut values = [0.0; NUM_FEATURES];
        for (k, v) in values.iter_mut().enumerate() {
            *v = rec[3 + k]
                .parse()
                .map_err(|_| bad(format!("bad value `{}`", &rec[3 + k])))?;
            if !(0.0..=1.0).contains(v) {
                return Err(bad(format!("feature value {v} outside [0, 1]")));
            }
        }
        let i = *positions.entry(id.clone()).or_insert_with(|| {
            out.push(StudentSequence {
                student_id: id.clone(),
                weeks: Vec::new(),
                label,
                grade: None,
            });
            out.len() - 1
        });
        let seq = &mut out[i];
        if seq.label != label {
            return Err(bad(format!("student `{id}` has inconsistent labels")));
        }
        if week != seq.weeks.len() + 1 {
            return Err(bad(format!(
                "student `{id}`: expected week {}, found {week}",
                seq.weeks.len() + 1
            )));
        }
        seq.weeks.push(values);
    }
    if let Some(first) = out.first() {
        let m = first.weeks.len();
        if let Some(s) = out.iter().find(|s| s.weeks.len() != m) {
            return Err(Error::parse(
                origin,
                format!(
                    "student `{}` has {} weeks, expected {m}",
                    s.student_id,
                    s.weeks.len()
                ),
            ));
        }
    }
    Ok(out)
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Year encoded in a course name such as `PT2019`.
pub fn course_year(name: &str) -> Result<u32> {
    let digits: String = name
        .chars()
        .rev()
        .take_while(char::is_ascii_digit)
        .collect();
    let digits: String = digits.chars().rev().collect();
    digits
        .parse()
        .map_err(|_| Error::invalid(format!("course name `{name}` does not end in a year")))
}

/// Loads `<dir>/<name>/`: `features.csv` when present, otherwise
/// `activity.csv` + `grades.csv` featurised over the weeks they cover.
pub fn load_course(dir: &Path, name: &str) -> Result<super::Course> {
    let sub = dir.join(name);
    if !sub.is_dir() {
        return Err(Error::invalid(format!(
            "course directory {} not found (expected <data>/{name}/)",
            sub.display()
        )));
    }
    let year = course_year(name)?;
    let features = sub.join("features.csv");
    let sequences = if features.is_file() {
        read_features_csv(open(&features)?, &features)?
    } else {
        let logs = sub.join("activity.csv");
        let grades = sub.join("grades.csv");
        let records = read_activity_csv(open(&logs)?, &logs)?;
        let roster = read_grades_csv(open(&grades)?, &grades)?;
        let weeks = records.iter().map(|r| r.week).max().unwrap_or(0);
        super::build_sequences(&records, &roster, weeks)?
    };
    Ok(super::Course {
        name: name.to_string(),
        year,
        sequences,
    })
}
