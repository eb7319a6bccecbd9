use std::path::Path;

use proptest::prelude::*;

use super::*;

fn record(
    id: &str,
    week: usize,
    attendance: Attendance,
    reports: &[ReportStatus],
    counts: [u64; 10],
) -> ActivityRecord {
    // counts: accesses, reading_time, markers, memos, total, open, next, prev, jump, close
    ActivityRecord {
        student_id: id.to_string(),
        week,
        attendance,
        reports: reports.to_vec(),
        course_accesses: counts[0],
        reading_time: counts[1] as f64,
        markers: counts[2],
        memos: counts[3],
        total_actions: counts[4],
        open: counts[5],
        next: counts[6],
        prev: counts[7],
        page_jump: counts[8],
        close: counts[9],
    }
}

#[test]
fn attendance_scores() {
    assert_eq!(srp_attendance(Attendance::Present), 10.0);
    assert_eq!(srp_attendance(Attendance::Late), 5.0);
    assert_eq!(srp_attendance(Attendance::Absent), 0.0);
    assert!("tardy".parse::<Attendance>().is_err());
}

#[test]
fn report_scores_average_over_the_week() {
    use ReportStatus::*;
    assert_eq!(srp_report(&[OnTime]), 10.0);
    assert_eq!(srp_report(&[Late]), 5.0);
    assert_eq!(srp_report(&[None]), 0.0);
    assert_eq!(srp_report(&[OnTime, Late]), 7.5);
    assert_eq!(srp_report(&[]), 0.0);
    assert!("missing".parse::<ReportStatus>().is_err());
}

#[test]
fn percentile_zero_column_scores_zero() {
    assert_eq!(srp_percentile(&[0.0; 6]), vec![0; 6]);
}

#[test]
fn percentile_deciles_for_ten_distinct_values() {
    let values: Vec<f64> = (1..=10).map(|v| v as f64 * 3.5).collect();
    let scores = srp_percentile(&values);
    assert_eq!(scores, vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
}

#[test]
fn percentile_single_active_student_is_top_decile() {
    assert_eq!(srp_percentile(&[0.0, 5.0, 0.0]), vec![0, 10, 0]);
}

#[test]
fn percentile_ties_share_best_rank() {
    // active: 9, 9, 4, 1 -> positions 1, 1, 3, 4 of N = 4
    assert_eq!(
        srp_percentile(&[9.0, 0.0, 9.0, 4.0, 1.0]),
        vec![10, 0, 10, 5, 3]
    );
}

#[test]
fn percentile_scores_against_formula_enumeration() {
    // independent enumeration: count strictly greater active values
    let values = [
        3.0, 0.0, 7.0, 7.0, 1.0, 12.0, 0.0, 5.0, 5.0, 5.0, 2.0, 8.0, 0.5,
    ];
    let active: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    let n = active.len();
    let expected: Vec<u8> = values
        .iter()
        .map(|&v| {
            if v == 0.0 {
                0
            } else {
                let j = 1 + active.iter().filter(|&&o| o > v).count();
                (10 - (10 * (j - 1)) / n) as u8
            }
        })
        .collect();
    assert_eq!(srp_percentile(&values), expected);
}

fn fixture() -> (Vec<ActivityRecord>, Vec<(String, Grade)>) {
    use Attendance::*;
    use ReportStatus::*;
    let records = vec![
        record(
            "s1",
            1,
            Present,
            &[OnTime],
            [5, 300, 0, 0, 40, 2, 30, 5, 1, 2],
        ),
        record(
            "s2",
            1,
            Attendance::Late,
            &[ReportStatus::Late, OnTime],
            [5, 120, 3, 0, 40, 1, 10, 0, 0, 1],
        ),
        record("s3", 1, Absent, &[None], [0, 0, 1, 0, 10, 1, 8, 1, 0, 0]),
        // s1 has no week-2 record
        record("s2", 2, Present, &[], [0, 50, 0, 0, 0, 0, 0, 0, 0, 0]),
        record("s3", 2, Present, &[OnTime], [2, 50, 0, 0, 0, 0, 0, 0, 0, 0]),
    ];
    let roster = vec![
        ("s1".to_string(), Grade::A),
        ("s2".to_string(), Grade::C),
        ("s3".to_string(), Grade::F),
    ];
    (records, roster)
}

#[test]
fn hand_worked_three_student_fixture() {
    let (records, roster) = fixture();
    let seqs = build_sequences(&records, &roster, 2).unwrap();
    let expected: [[WeekFeatures; 2]; 3] = [
        [
            [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            [0.0; 12],
        ],
        [
            [0.5, 0.75, 1.0, 0.5, 1.0, 0.0, 1.0, 0.7, 0.7, 0.0, 0.0, 0.5],
            [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ],
        [
            [0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.4, 0.7, 0.4, 0.5, 0.0, 0.0],
            [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ],
    ];
    for (seq, exp) in seqs.iter().zip(expected.iter()) {
        for (got, want) in seq.weeks.iter().zip(exp.iter()) {
            let got_bits: Vec<u64> = got.iter().map(|v| v.to_bits()).collect();
            let want_bits: Vec<u64> = want.iter().map(|v| v.to_bits()).collect();
            assert_eq!(got_bits, want_bits, "student {}", seq.student_id);
        }
    }
    assert_eq!(
        seqs.iter().map(|s| s.label).collect::<Vec<_>>(),
        vec![0, 1, 1]
    );
}

#[test]
fn fully_inactive_failing_student() {
    let roster = vec![("x".to_string(), Grade::F), ("y".to_string(), Grade::B)];
    let records = vec![record("y", 1, Attendance::Present, &[], [1; 10])];
    let seqs = build_sequences(&records, &roster, 3).unwrap();
    assert_eq!(seqs[0].weeks, vec![[0.0; 12]; 3]);
    assert_eq!(seqs[0].label, 1);
    assert_eq!(seqs[1].label, 0);
}

#[test]
fn label_rule_is_total() {
    let labels: Vec<u8> = Grade::ALL.iter().map(|g| g.label()).collect();
    assert_eq!(labels, vec![0, 0, 1, 1, 1]);
}

#[test]
fn build_errors() {
    let (mut records, roster) = fixture();
    records.push(record("ghost", 1, Attendance::Present, &[], [0; 10]));
    assert!(build_sequences(&records, &roster, 2).is_err());

    let (records, roster) = fixture();
    assert!(
        build_sequences(&records, &roster, 1).is_err(),
        "week 2 outside course"
    );

    let (mut records, roster) = fixture();
    records.push(records[0].clone());
    assert!(
        build_sequences(&records, &roster, 2).is_err(),
        "duplicate record"
    );
}

#[test]
fn truncation() {
    let (records, roster) = fixture();
    let seq = &build_sequences(&records, &roster, 2).unwrap()[1];
    assert_eq!(&truncate(seq, 2).unwrap(), seq);
    let one = truncate(seq, 1).unwrap();
    assert_eq!(one.weeks.len(), 1);
    assert_eq!(one.label, seq.label);
    assert!(truncate(seq, 0).is_err());
    assert!(truncate(seq, 3).is_err());

    let long = StudentSequence {
        student_id: "z".into(),
        weeks: (0..7).map(|w| [w as f64 / 10.0; 12]).collect(),
        label: 1,
        grade: Option::None,
    };
    let three = truncate(&long, 3).unwrap();
    assert_eq!(three.weeks.len(), 3);
    assert_eq!(truncate(&truncate(&long, 5).unwrap(), 3).unwrap(), three);
}

fn course(year: u32, ids: &[&str]) -> Course {
    Course {
        name: course_name(year),
        year,
        sequences: ids
            .iter()
            .map(|id| StudentSequence {
                student_id: id.to_string(),
                weeks: vec![[0.0; 12]; 7],
                label: 0,
                grade: Some(Grade::A),
            })
            .collect(),
    }
}

#[test]
fn standard_splits_are_constructible() {
    let courses = vec![
        course(2019, &["a1", "a2"]),
        course(2020, &["b1"]),
        course(2021, &["c1", "c2", "c3"]),
        course(2022, &["d1"]),
    ];
    let splits = standard_splits();
    let names: Vec<&str> = splits.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "T19P20",
            "T20P21",
            "T21P22",
            "T1920P21",
            "T2021P22",
            "T192021P22"
        ]
    );
    for spec in &splits {
        let (train, test) = make_split(spec, &courses).unwrap();
        let train_ids: Vec<&str> = train.iter().map(|s| s.student_id.as_str()).collect();
        assert!(test
            .iter()
            .all(|s| !train_ids.contains(&s.student_id.as_str())));
    }
    let big = SplitSpec::from_name("T192021P22").unwrap();
    assert_eq!(big.train, vec!["PT2019", "PT2020", "PT2021"]);
    assert_eq!(big.test, "PT2022");
    assert_eq!(make_split(&big, &courses).unwrap().0.len(), 6);
}

#[test]
fn split_errors() {
    let courses = vec![course(2019, &["a"]), course(2020, &["b"])];
    assert!(SplitSpec::from_name("X19P20").is_err());
    assert!(SplitSpec::from_name("T1P20").is_err());
    let missing = SplitSpec::from_name("T19P21").unwrap();
    assert!(make_split(&missing, &courses).is_err());
    let backwards = SplitSpec::from_name("T20P19").unwrap();
    assert!(make_split(&backwards, &courses).is_err());
}

#[test]
fn csv_round_trips() {
    let (records, roster) = fixture();
    let mut buf = Vec::new();
    write_activity_csv(&mut buf, &records).unwrap();
    let back = read_activity_csv(buf.as_slice(), Path::new("mem")).unwrap();
    assert_eq!(back, records);

    let mut buf = Vec::new();
    write_grades_csv(&mut buf, &roster).unwrap();
    assert_eq!(
        read_grades_csv(buf.as_slice(), Path::new("mem")).unwrap(),
        roster
    );

    let seqs = build_sequences(&records, &roster, 2).unwrap();
    let mut buf = Vec::new();
    write_features_csv(&mut buf, &seqs).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("student_id,label,week,srp_attendance,srp_report,"));
    let back = read_features_csv(buf.as_slice(), Path::new("mem")).unwrap();
    for (a, b) in back.iter().zip(&seqs) {
        assert_eq!(a.weeks, b.weeks);
        assert_eq!(a.label, b.label);
        assert_eq!(a.student_id, b.student_id);
    }
}

#[test]
fn csv_rejects_bad_tokens() {
    let text = "student_id,week,attendance,reports,course_accesses,reading_time,markers,memos,total_actions,open,next,prev,page_jump,close\n\
                s1,1,present,on_time;sometimes,0,0,0,0,0,0,0,0,0,0\n";
    assert!(read_activity_csv(text.as_bytes(), Path::new("mem")).is_err());
    let grades = "student_id,grade\ns1,E\n";
    assert!(read_grades_csv(grades.as_bytes(), Path::new("mem")).is_err());
}

proptest! {
    #[test]
    fn percentile_is_rank_based(values in prop::collection::vec(0u32..50, 1..40)) {
        let raw: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        // strictly increasing transform that keeps zero at zero
        let transformed: Vec<f64> = raw.iter().map(|&v| if v == 0.0 { 0.0 } else { (v + 1.0).ln() * 7.0 + v * v }).collect();
        prop_assert_eq!(srp_percentile(&raw), srp_percentile(&transformed));
        prop_assert!(srp_percentile(&raw).iter().all(|&s| s <= 10));
    }

    #[test]
    fn emitted_values_lie_on_the_srp_grid(
        rows in prop::collection::vec((0u8..3, prop::collection::vec(0u8..3, 0..3), prop::collection::vec(0u64..20, 10)), 1..12)
    ) {
        let atts = [Attendance::Present, Attendance::Late, Attendance::Absent];
        let reps = [ReportStatus::OnTime, ReportStatus::Late, ReportStatus::None];
        let roster: Vec<(String, Grade)> = (0..rows.len()).map(|i| (format!("s{i}"), Grade::ALL[i % 5])).collect();
        let records: Vec<ActivityRecord> = rows.iter().enumerate().map(|(i, (a, r, c))| {
            let counts: [u64; 10] = c.clone().try_into().unwrap();
            let statuses: Vec<ReportStatus> = r.iter().map(|&k| reps[k as usize]).collect();
            record(&format!("s{i}"), 1, atts[*a as usize], &statuses, counts)
        }).collect();
        let seqs = build_sequences(&records, &roster, 1).unwrap();
        for s in &seqs {
            let w = &s.weeks[0];
            for (k, v) in w.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(v));
                if k != 1 {
                    // everything except the averaged report feature is a multiple of 0.1
                    prop_assert!(((v * 10.0).round() - v * 10.0).abs() < 1e-12);
                }
            }
        }
        let again = build_sequences(&records, &roster, 1).unwrap();
        prop_assert_eq!(seqs, again);
    }
}
