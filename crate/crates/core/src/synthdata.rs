//! Synthetic course cohorts with a planted, late-growing at-risk signal.
//!
//! All constants come from a TOML profile; the default one ships with the
//! crate (`profiles/default.toml`) and documents every key.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    build_sequences, standard_splits, write_activity_csv, write_grades_csv, ActivityRecord,
    Attendance, Course, Grade, ReportStatus, Roster, SplitSpec,
};

pub const DEFAULT_PROFILE: &str = include_str!("../profiles/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Onsite,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountModel {
    pub mean: f64,
    pub dispersion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureModels {
    pub course_accesses: CountModel,
    pub open: CountModel,
    pub next: CountModel,
    pub prev: CountModel,
    pub page_jump: CountModel,
    pub close: CountModel,
    pub other_actions: CountModel,
}

impl FeatureModels {
    fn all(&self) -> [(&'static str, CountModel); 7] {
        [
            ("course_accesses", self.course_accesses),
            ("open", self.open),
            ("next", self.next),
            ("prev", self.prev),
            ("page_jump", self.page_jump),
            ("close", self.close),
            ("other_actions", self.other_actions),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngagementModel {
    pub shape: f64,
    pub decay_jitter: f64,
    pub seconds_per_page: f64,
    pub markers_per_page: f64,
    pub memos_per_page: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttendanceModel {
    pub present: f64,
    pub elasticity: f64,
    pub late_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportModel {
    pub due: Vec<usize>,
    pub on_time: f64,
    pub elasticity: f64,
    pub late_share: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandModel {
    pub decay: f64,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bands {
    #[serde(rename = "A")]
    pub a: BandModel,
    #[serde(rename = "B")]
    pub b: BandModel,
    #[serde(rename = "C")]
    pub c: BandModel,
    #[serde(rename = "D")]
    pub d: BandModel,
    #[serde(rename = "F")]
    pub f: BandModel,
}

impl Bands {
    pub fn get(&self, grade: Grade) -> BandModel {
        match grade {
            Grade::A => self.a,
            Grade::B => self.b,
            Grade::C => self.c,
            Grade::D => self.d,
            Grade::F => self.f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityModel {
    /// Multiplier on every activity mean.
    pub activity: f64,
    /// Multiplier on the attendance probability.
    pub attendance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modalities {
    pub onsite: ModalityModel,
    pub online: ModalityModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CourseEntry {
    pub name: String,
    pub year: u32,
    pub modality: Modality,
    pub students: usize,
    /// Probabilities in A..F order.
    pub grades: [f64; 5],
}

/// Contents of a profile file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorProfile {
    pub version: String,
    pub seed: u64,
    pub weeks: usize,
    pub engagement: EngagementModel,
    pub features: FeatureModels,
    pub attendance: AttendanceModel,
    pub reports: ReportModel,
    pub bands: Bands,
    pub modality: Modalities,
    pub courses: Vec<CourseEntry>,
}

/// Everything needed to generate one course.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortProfile {
    pub name: String,
    pub year: u32,
    pub students: usize,
    pub grades: [f64; 5],
    pub weeks: usize,
    pub modality: Modality,
    pub modality_model: ModalityModel,
    pub engagement: EngagementModel,
    pub features: FeatureModels,
    pub attendance: AttendanceModel,
    pub reports: ReportModel,
    pub bands: Bands,
    pub seed: u64,
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!(
            "{name} must be a probability, got {p}"
        )));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn check_grades(name: &str, grades: &[f64; 5]) -> Result<()> {
    for (g, &p) in Grade::ALL.iter().zip(grades) {
        check_prob(&format!("{name} grade {g} probability"), p)?;
    }
    let total: f64 = grades.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "{name}: grade probabilities sum to {total}, expected 1"
        )));
    }
    Ok(())
}

impl GeneratorProfile {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let profile: GeneratorProfile =
            toml::from_str(text).map_err(|e| Error::parse(origin, e.message()))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    /// The profile shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_toml_str(DEFAULT_PROFILE, Path::new("<builtin profile>"))
            .expect("built-in profile is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.weeks == 0 {
            return Err(Error::invalid("profile must have at least one week"));
        }
        let e = &self.engagement;
        check_positive("engagement.shape", e.shape)?;
        check_prob("engagement.decay_jitter", e.decay_jitter)?;
        for (name, v) in [
            ("engagement.seconds_per_page", e.seconds_per_page),
            ("engagement.markers_per_page", e.markers_per_page),
            ("engagement.memos_per_page", e.memos_per_page),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        for (name, m) in self.features.all() {
            check_positive(&format!("features.{name}.mean"), m.mean)?;
            check_positive(&format!("features.{name}.dispersion"), m.dispersion)?;
        }
        check_prob("attendance.present", self.attendance.present)?;
        check_prob("attendance.late_share", self.attendance.late_share)?;
        check_positive("attendance.elasticity", self.attendance.elasticity)?;
        check_prob("reports.on_time", self.reports.on_time)?;
        check_prob("reports.late_share", self.reports.late_share)?;
        check_positive("reports.elasticity", self.reports.elasticity)?;
        if self.reports.due.len() != self.weeks {
            return Err(Error::invalid(format!(
                "reports.due lists {} weeks, profile has {}",
                self.reports.due.len(),
                self.weeks
            )));
        }
        for g in Grade::ALL {
            let b = self.bands.get(g);
            if !(0.0..1.0).contains(&b.decay) {
                return Err(Error::invalid(format!("bands.{g}.decay must be in [0, 1)")));
            }
            check_prob(&format!("bands.{g}.dropout"), b.dropout)?;
        }
        let slowest_at_risk = [Grade::C, Grade::D, Grade::F]
            .iter()
            .map(|&g| self.bands.get(g).decay)
            .fold(f64::INFINITY, f64::min);
        let fastest_safe = [Grade::A, Grade::B]
            .iter()
            .map(|&g| self.bands.get(g).decay)
            .fold(f64::NEG_INFINITY, f64::max);
        if slowest_at_risk <= fastest_safe {
            return Err(Error::invalid(
                "at-risk bands (C/D/F) must decay strictly faster than A/B",
            ));
        }
        for (name, m) in [
            ("onsite", self.modality.onsite),
            ("online", self.modality.online),
        ] {
            check_positive(&format!("modality.{name}.activity"), m.activity)?;
            check_positive(&format!("modality.{name}.attendance"), m.attendance)?;
        }
        let mut seen = HashMap::new();
        for c in &self.courses {
            if seen.insert(c.name.as_str(), ()).is_some() {
                return Err(Error::invalid(format!("course {} listed twice", c.name)));
            }
            if c.students == 0 {
                return Err(Error::invalid(format!(
                    "course {} has zero students",
                    c.name
                )));
            }
            check_grades(&c.name, &c.grades)?;
        }
        Ok(())
    }

    /// One cohort per listed course; course `i` draws from ChaCha stream `i`
    /// of the profile seed.
    pub fn cohorts(&self) -> Vec<CohortProfile> {
        self.courses
            .iter()
            .map(|c| CohortProfile {
                name: c.name.clone(),
                year: c.year,
                students: c.students,
                grades: c.grades,
                weeks: self.weeks,
                modality: c.modality,
                modality_model: match c.modality {
                    Modality::Onsite => self.modality.onsite,
                    Modality::Online => self.modality.online,
                },
                engagement: self.engagement,
                features: self.features.clone(),
                attendance: self.attendance,
                reports: self.reports.clone(),
                bands: self.bands,
                seed: self.seed,
            })
            .collect()
    }
}

impl CohortProfile {
    pub fn validate(&self) -> Result<()> {
        if self.students == 0 {
            return Err(Error::invalid(format!(
                "course {} has zero students",
                self.name
            )));
        }
        check_grades(&self.name, &self.grades)?;
        check_positive("modality activity", self.modality_model.activity)?;
        check_positive("modality attendance", self.modality_model.attendance)
    }

    fn stream(&self) -> u64 {
        // Stable per-course stream so cohorts are independent of list order.
        self.name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

fn negative_binomial<R: Rng + ?Sized>(rng: &mut R, mean: f64, dispersion: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let rate = Gamma::new(dispersion, mean / dispersion)
        .expect("validated gamma parameters")
        .sample(rng);
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate)
        .expect("positive poisson rate")
        .sample(rng) as u64
}

fn sample_grade<R: Rng + ?Sized>(rng: &mut R, probs: &[f64; 5]) -> Grade {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (g, p) in Grade::ALL.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *g;
        }
    }
    // rounding slack in the cumulative sum
    *Grade::ALL
        .iter()
        .rev()
        .zip(probs.iter().rev())
        .find(|(_, &p)| p > 0.0)
        .unwrap()
        .0
}

/// Samples one course: grades first, then each student's weekly records.
pub fn generate_course(profile: &CohortProfile) -> Result<(Vec<ActivityRecord>, Roster)> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    rng.set_stream(profile.stream());
    let width = profile.students.to_string().len().max(3);
    let roster: Roster = (1..=profile.students)
        .map(|i| {
            let id = format!("{}-s{:0width$}", profile.name, i);
            (id, sample_grade(&mut rng, &profile.grades))
        })
        .collect();

    let e = &profile.engagement;
    let f = &profile.features;
    let m = profile.modality_model;
    let engagement = Gamma::new(e.shape, 1.0 / e.shape).expect("validated shape");
    let mut records = Vec::with_capacity(profile.students * profile.weeks);
    for (id, grade) in &roster {
        let band = profile.bands.get(*grade);
        let level = engagement.sample(&mut rng);
        let jitter = rng.random_range(1.0 - e.decay_jitter..=1.0 + e.decay_jitter);
        let retention = (1.0 - band.decay * jitter).clamp(0.0, 1.0);
        let mut dropped = false;
        for week in 1..=profile.weeks {
            if week > 1 && !dropped && rng.random_bool(band.dropout) {
                dropped = true;
            }
            if dropped {
                let mut r = ActivityRecord::inactive(id.clone(), week);
                r.reports = vec![ReportStatus::None; profile.reports.due[week - 1]];
                records.push(r);
                continue;
            }
            let a = level * retention.powi(week as i32 - 1);
            let nb = |rng: &mut ChaCha8Rng, c: CountModel| {
                negative_binomial(rng, c.mean * m.activity * a, c.dispersion)
            };

            let p_present = (profile.attendance.present
                * m.attendance
                * a.min(1.0).powf(profile.attendance.elasticity))
            .clamp(0.0, 1.0);
            let u: f64 = rng.random();
            let attendance = if u < p_present {
                Attendance::Present
            } else if u < p_present + (1.0 - p_present) * profile.attendance.late_share {
                Attendance::Late
            } else {
                Attendance::Absent
            };

            let p_on_time = (profile.reports.on_time * a.min(1.0).powf(profile.reports.elasticity))
                .clamp(0.0, 1.0);
            let reports = (0..profile.reports.due[week - 1])
                .map(|_| {
                    let u: f64 = rng.random();
                    if u < p_on_time {
                        ReportStatus::OnTime
                    } else if u < p_on_time + (1.0 - p_on_time) * profile.reports.late_share {
                        ReportStatus::Late
                    } else {
                        ReportStatus::None
                    }
                })
                .collect();

            let course_accesses = nb(&mut rng, f.course_accesses);
            let open = nb(&mut rng, f.open);
            let next = nb(&mut rng, f.next);
            let prev = nb(&mut rng, f.prev);
            let page_jump = nb(&mut rng, f.page_jump);
            let close = nb(&mut rng, f.close);
            let other = nb(&mut rng, f.other_actions);
            let pages = (next + prev + page_jump) as f64;
            let markers = poisson(&mut rng, pages * e.markers_per_page);
            let memos = poisson(&mut rng, pages * e.memos_per_page);
            let reading_time = if pages > 0.0 && e.seconds_per_page > 0.0 {
                Gamma::new(2.0, pages * e.seconds_per_page / 2.0)
                    .expect("positive reading scale")
                    .sample(&mut rng)
                    .round()
            } else {
                0.0
            };
            records.push(ActivityRecord {
                student_id: id.clone(),
                week,
                attendance,
                reports,
                course_accesses,
                reading_time,
                markers,
                memos,
                total_actions: open + next + prev + page_jump + close + markers + memos + other,
                open,
                next,
                prev,
                page_jump,
                close,
            });
        }
    }
    Ok((records, roster))
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate)
        .expect("positive poisson rate")
        .sample(rng) as u64
}

/// Raw logs and roster of one generated course.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCourse {
    pub profile: CohortProfile,
    pub records: Vec<ActivityRecord>,
    pub roster: Roster,
}

impl GeneratedCourse {
    pub fn featurize(&self) -> Result<Course> {
        Ok(Course {
            name: self.profile.name.clone(),
            year: self.profile.year,
            sequences: build_sequences(&self.records, &self.roster, self.profile.weeks)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub version: String,
    pub seed: u64,
    pub courses: Vec<GeneratedCourse>,
    pub splits: Vec<SplitSpec>,
}

/// Generates every course in the profile plus the six standard splits.
pub fn benchmark_suite(profile: &GeneratorProfile) -> Result<Benchmark> {
    profile.validate()?;
    let courses = profile
        .cohorts()
        .into_iter()
        .map(|c| {
            let (records, roster) = generate_course(&c)?;
            Ok(GeneratedCourse {
                profile: c,
                records,
                roster,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Benchmark {
        version: profile.version.clone(),
        seed: profile.seed,
        courses,
        splits: standard_splits(),
    })
}

impl Benchmark {
    pub fn featurize(&self) -> Result<Vec<Course>> {
        self.courses
            .iter()
            .map(GeneratedCourse::featurize)
            .collect()
    }

    /// Writes `<dir>/<course>/activity.csv` and `grades.csv` for every
    /// course and `<dir>/splits.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for c in &self.courses {
            let sub = dir.join(&c.profile.name);
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let path = sub.join("activity.csv");
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_activity_csv(std::io::BufWriter::new(file), &c.records)?;
            let path = sub.join("grades.csv");
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_grades_csv(std::io::BufWriter::new(file), &c.roster)?;
        }
        let path = dir.join("splits.csv");
        let mut text = String::from("split,train,test\n");
        for s in &self.splits {
            text.push_str(&format!("{},{},{}\n", s.name, s.train.join(";"), s.test));
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
