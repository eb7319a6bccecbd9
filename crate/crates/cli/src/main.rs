//! `earlykd` command-line interface.
//!
//! Exit status: 0 on success, 1 for invalid input or configuration, 2 for
//! runtime failures such as unreadable files.

mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use earlykd::distill::{distill_student, write_trace_csv, Phase, TraceEntry};
use earlykd::eval::{
    self, ablation_suite, baseline_suite, confusion, default_grid, grid_search, metrics,
    teacher_report, GridPoint, Report, SplitData,
};
use earlykd::features::{
    build_sequences, load_course, read_activity_csv, read_grades_csv, standard_splits,
    write_features_csv, Course, SplitSpec,
};
use earlykd::model::{load_checkpoint, save_checkpoint, ModelParams};
use earlykd::synthdata::{benchmark_suite, GeneratorProfile};
use earlykd::train;

use settings::{Losses, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "earlykd",
    version,
    about = "Early at-risk student prediction with attention RNNs and knowledge distillation"
)]
struct Cli {
    /// Worker threads for independent runs (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic four-course benchmark.
    GenData(GenDataArgs),
    /// Turn an activity log and grade roster into SRP sequences.
    Featurize(FeaturizeArgs),
    /// Train the full-length RNN-Attention teacher on a split's training courses.
    TrainTeacher(TrainTeacherArgs),
    /// Distil a truncated student from a trained teacher.
    Distill(DistillArgs),
    /// Cross-validated search over cell type, hidden size and learning rate.
    GridSearch(GridSearchArgs),
    /// Compare the baselines with the distilled student over week ranges.
    Baselines(SuiteArgs),
    /// Run the seven loss-subset ablations over week ranges.
    Ablate(SuiteArgs),
    /// Score a checkpoint on a split's test course.
    Evaluate(EvaluateArgs),
    /// Train one teacher per split and report their full-length metrics.
    TeacherReport(TeacherReportArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Profile TOML; the built-in default profile when omitted.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the profile's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    /// Weekly activity CSV.
    #[arg(long)]
    logs: PathBuf,
    /// Grade roster CSV.
    #[arg(long)]
    grades: PathBuf,
    /// Output features CSV; a config snapshot goes next to it.
    #[arg(long)]
    out: PathBuf,
    /// Course length; defaults to the last week present in the log.
    #[arg(long)]
    weeks: Option<usize>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory with one sub-directory per course.
    #[arg(long)]
    data: PathBuf,
    /// Split name such as T19P20 or T1920P21.
    #[arg(long)]
    split: String,
}

#[derive(Debug, Args)]
struct TrainTeacherArgs {
    #[command(flatten)]
    data: DataArgs,
    /// TOML file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    /// Checkpoint path; the loss trace and config snapshot go next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DistillArgs {
    /// Teacher checkpoint from train-teacher.
    #[arg(long)]
    teacher: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Student truncation length n.
    #[arg(long)]
    weeks: usize,
    /// Comma-separated subset of hint, context, soft (or `none`).
    #[arg(long, default_value = "hint,context,soft")]
    losses: Losses,
    /// TOML file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    /// Output directory for the student checkpoint, loss trace, metrics and config snapshot.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GridSearchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Week range 1..=n to train on; the full course when omitted.
    #[arg(long)]
    weeks: Option<usize>,
    /// Stratified cross-validation folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// TOML file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    /// Directory for grid scores and the chosen point.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SuiteArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Week ranges 1..=n to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "3,4,5,6")]
    weeks: Vec<usize>,
    /// Existing teacher checkpoint; trained with the base seed when omitted.
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// TOML file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    /// Output directory for the report (CSV and text) and config snapshot.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Checkpoint to score.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Week range 1..=n; the model's own length when omitted.
    #[arg(long)]
    weeks: Option<usize>,
    /// Write the metrics JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TeacherReportArgs {
    #[arg(long)]
    data: PathBuf,
    /// Splits to include; all six standard splits when omitted.
    #[arg(long, value_delimiter = ',')]
    splits: Vec<String>,
    /// TOML file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    /// Output directory for the report (CSV and text) and config snapshot.
    #[arg(long)]
    out: PathBuf,
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    earlykd::Error::Invalid(msg.into()).into()
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

/// `<dir>/<stem>.<suffix>` for a file output.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn load_split(data: &Path, name: &str) -> Result<SplitData> {
    let spec = SplitSpec::from_name(name)?;
    let mut courses: Vec<Course> = Vec::new();
    for course in spec.train.iter().chain(std::iter::once(&spec.test)) {
        courses.push(load_course(data, course)?);
    }
    Ok(SplitData::new(&spec, &courses)?)
}

fn profile_version(data: &Path) -> Option<String> {
    let text = fs::read_to_string(data.join("profile.toml")).ok()?;
    let value: toml::Table = toml::from_str(&text).ok()?;
    value.get("version")?.as_str().map(str::to_string)
}

fn trace_csv(trace: &[TraceEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_trace_csv(&mut out, trace)?;
    Ok(out)
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut profile = match &args.profile {
        Some(p) => GeneratorProfile::load(p)?,
        None => GeneratorProfile::builtin(),
    };
    if let Some(seed) = args.seed {
        profile.seed = seed;
    }
    let bench = benchmark_suite(&profile)?;
    bench.write(&args.out)?;
    write_file(&args.out.join("profile.toml"), toml::to_string(&profile)?)?;
    write_json(
        &args.out.join("config.json"),
        &json!({
            "command": "gen-data",
            "profile": args.profile,
            "profile_version": profile.version,
            "seed": profile.seed,
            "courses": bench.courses.iter().map(|c| &c.profile.name).collect::<Vec<_>>(),
            "splits": bench.splits.iter().map(|s| &s.name).collect::<Vec<_>>(),
        }),
    )?;
    for c in &bench.courses {
        let at_risk = c.roster.iter().filter(|(_, g)| g.is_at_risk()).count();
        println!(
            "{}: {} students, {} at risk",
            c.profile.name,
            c.roster.len(),
            at_risk
        );
    }
    Ok(())
}

fn featurize(args: FeaturizeArgs) -> Result<()> {
    let open = |p: &Path| fs::File::open(p).with_context(|| format!("opening {}", p.display()));
    let records = read_activity_csv(open(&args.logs)?, &args.logs)?;
    let roster = read_grades_csv(open(&args.grades)?, &args.grades)?;
    let weeks = args
        .weeks
        .unwrap_or_else(|| records.iter().map(|r| r.week).max().unwrap_or(0));
    let sequences = build_sequences(&records, &roster, weeks)?;
    let mut buf = Vec::new();
    write_features_csv(&mut buf, &sequences)?;
    write_file(&args.out, buf)?;
    write_json(
        &sibling(&args.out, "config.json"),
        &json!({
            "command": "featurize",
            "logs": args.logs,
            "grades": args.grades,
            "weeks": weeks,
            "students": sequences.len(),
        }),
    )?;
    println!(
        "{} students x {weeks} weeks -> {}",
        sequences.len(),
        args.out.display()
    );
    Ok(())
}

fn train_teacher_cmd(args: TrainTeacherArgs) -> Result<()> {
    let r = args.settings.resolve(args.config.as_deref())?;
    let split = load_split(&args.data.data, &args.data.split)?;
    let trained = r.experiment().train_teacher(&split)?;
    save_checkpoint(&trained.params, &args.out)?;
    write_file(
        &sibling(&args.out, "losses.csv"),
        trace_csv(&trained.trace)?,
    )?;
    let test = eval::evaluate(&trained.params, &split.test, split.weeks)?;
    write_json(
        &sibling(&args.out, "config.json"),
        &json!({
            "command": "train-teacher",
            "data": args.data.data,
            "split": split.name,
            "weeks": split.weeks,
            "settings": r,
            "profile_version": profile_version(&args.data.data),
        }),
    )?;
    println!(
        "teacher {} on {}: test precision {:.4} recall {:.4} f1 {:.4}",
        r.cell, split.name, test.precision, test.recall, test.f1
    );
    Ok(())
}

fn distill_cmd(args: DistillArgs) -> Result<()> {
    let teacher = load_checkpoint(&args.teacher)?;
    let mut r = args.settings.resolve(args.config.as_deref())?;
    for (flag, matches) in [
        (
            "--cell",
            args.settings.cell.is_none_or(|c| c == teacher.config.cell),
        ),
        (
            "--hidden-size",
            args.settings
                .hidden_size
                .is_none_or(|h| h == teacher.config.hidden_size),
        ),
    ] {
        if !matches {
            return Err(invalid(format!("{flag} must match the teacher checkpoint")));
        }
    }
    r.cell = teacher.config.cell;
    r.hidden_size = teacher.config.hidden_size;
    let split = load_split(&args.data.data, &args.data.split)?;
    if split.weeks != teacher.config.seq_len {
        return Err(invalid(format!(
            "teacher was trained on {} weeks but {} has {}",
            teacher.config.seq_len, split.name, split.weeks
        )));
    }
    if args.weeks == 0 || args.weeks > split.weeks {
        return Err(invalid(format!(
            "--weeks must be within 1..={} for this data, got {}",
            split.weeks, args.weeks
        )));
    }
    let config = r.distill(args.weeks, args.losses);
    let pair = distill_student(&teacher, &split.train, &config)?;
    let preds = train::predict(&pair.student, &split.test, args.weeks)?;
    let labels: Vec<u8> = split.test.iter().map(|s| s.label).collect();
    let cm = confusion(&preds, &labels)?;
    let m = metrics(&cm);

    save_checkpoint(&pair.student, &args.out.join("student.json"))?;
    write_file(&args.out.join("losses.csv"), trace_csv(&pair.trace)?)?;
    write_json(
        &args.out.join("metrics.json"),
        &json!({
            "split": split.name,
            "weeks": args.weeks,
            "losses": config.loss_label(),
            "confusion": cm,
            "metrics": m,
            "loss_calls": pair.calls,
        }),
    )?;
    write_json(
        &args.out.join("config.json"),
        &json!({
            "command": "distill",
            "teacher": args.teacher,
            "data": args.data.data,
            "split": split.name,
            "distill": config,
            "settings": r,
            "profile_version": profile_version(&args.data.data),
        }),
    )?;
    let last = |phase: Phase| {
        pair.trace
            .iter()
            .rev()
            .find(|e| e.phase == phase)
            .map(|e| e.loss)
    };
    println!(
        "student weeks 1-{} ({}): test precision {:.4} recall {:.4} f1 {:.4}; final distill loss {:.4}",
        args.weeks,
        config.loss_label(),
        m.precision,
        m.recall,
        m.f1,
        last(Phase::Distill).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn grid_search_cmd(args: GridSearchArgs) -> Result<()> {
    let r = args.settings.resolve(args.config.as_deref())?;
    let split = load_split(&args.data.data, &args.data.split)?;
    let weeks = args.weeks.unwrap_or(split.weeks);
    if weeks == 0 || weeks > split.weeks {
        return Err(invalid(format!(
            "--weeks must be within 1..={}",
            split.weeks
        )));
    }
    let grid = default_grid();
    let result = grid_search(&split.train, &grid, args.folds, weeks, &r.train())?;
    let best = json!({
        "split": split.name,
        "weeks": weeks,
        "folds": args.folds,
        "cell": result.best.cell,
        "hidden_size": result.best.hidden_size,
        "lr": result.best.lr,
    });
    if let Some(out) = &args.out {
        let mut csv = String::from("cell,hidden_size,lr,mean_f1\n");
        for (
            GridPoint {
                cell,
                hidden_size,
                lr,
            },
            f1,
        ) in &result.scores
        {
            csv.push_str(&format!("{cell},{hidden_size},{lr},{f1}\n"));
        }
        write_file(&out.join("grid.csv"), csv)?;
        write_json(&out.join("best.json"), &best)?;
        write_json(
            &out.join("config.json"),
            &json!({
                "command": "grid-search",
                "data": args.data.data,
                "split": split.name,
                "weeks": weeks,
                "folds": args.folds,
                "settings": r,
                "profile_version": profile_version(&args.data.data),
            }),
        )?;
    }
    println!("{}", serde_json::to_string_pretty(&best)?);
    Ok(())
}

fn suite_cmd(args: SuiteArgs, ablation: bool) -> Result<()> {
    let r = args.settings.resolve(args.config.as_deref())?;
    let split = load_split(&args.data.data, &args.data.split)?;
    let experiment = r.experiment();
    let teacher: ModelParams = match &args.teacher {
        Some(path) => {
            let t = load_checkpoint(path)?;
            if t.config.cell != r.cell || t.config.hidden_size != r.hidden_size {
                return Err(invalid(format!(
                    "teacher checkpoint is {} r={}, settings ask for {} r={}",
                    t.config.cell, t.config.hidden_size, r.cell, r.hidden_size
                )));
            }
            t
        }
        None => experiment.train_teacher(&split)?.params,
    };
    if teacher.config.seq_len != split.weeks {
        return Err(invalid("teacher length does not match the data"));
    }
    let (name, mut report) = if ablation {
        (
            "ablation",
            ablation_suite(&split, &teacher, &experiment, &args.weeks)?,
        )
    } else {
        (
            "baselines",
            baseline_suite(&split, &teacher, &experiment, &args.weeks)?,
        )
    };
    finish_report(&mut report, &args.data.data);
    write_file(&args.out.join(format!("{name}.csv")), report.to_csv())?;
    write_file(&args.out.join(format!("{name}.txt")), report.to_text())?;
    if args.teacher.is_none() {
        save_checkpoint(&teacher, &args.out.join("teacher.json"))?;
    }
    write_json(
        &args.out.join("config.json"),
        &json!({
            "command": if ablation { "ablate" } else { "baselines" },
            "data": args.data.data,
            "split": split.name,
            "weeks": args.weeks,
            "teacher": args.teacher,
            "settings": r,
            "profile_version": profile_version(&args.data.data),
        }),
    )?;
    print!("{}", report.to_text());
    Ok(())
}

fn finish_report(report: &mut Report, data: &Path) {
    if let Some(v) = profile_version(data) {
        report.meta("profile_version", v);
    }
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let model = load_checkpoint(&args.model)?;
    let split = load_split(&args.data.data, &args.data.split)?;
    let weeks = args.weeks.unwrap_or(model.config.seq_len);
    if weeks == 0 || weeks > split.weeks {
        return Err(invalid(format!(
            "--weeks must be within 1..={} for this data, got {weeks}",
            split.weeks
        )));
    }
    let preds = train::predict(&model, &split.test, weeks)?;
    let labels: Vec<u8> = split.test.iter().map(|s| s.label).collect();
    let cm = confusion(&preds, &labels)?;
    let value = json!({
        "model": args.model,
        "split": split.name,
        "weeks": weeks,
        "students": labels.len(),
        "confusion": cm,
        "metrics": metrics(&cm),
    });
    match &args.out {
        Some(path) => {
            write_json(path, &value)?;
            write_json(
                &sibling(path, "config.json"),
                &json!({
                    "command": "evaluate",
                    "model": args.model,
                    "data": args.data.data,
                    "split": split.name,
                    "weeks": weeks,
                }),
            )?;
        }
        None => println!("{}", serde_json::to_string_pretty(&value)?),
    }
    Ok(())
}

fn teacher_report_cmd(args: TeacherReportArgs) -> Result<()> {
    let r = args.settings.resolve(args.config.as_deref())?;
    let names: Vec<String> = if args.splits.is_empty() {
        standard_splits().into_iter().map(|s| s.name).collect()
    } else {
        args.splits.clone()
    };
    let experiment = r.experiment();
    let mut trained = Vec::new();
    for name in &names {
        let split = load_split(&args.data, name)?;
        let teacher = experiment.train_teacher(&split)?.params;
        trained.push((split, teacher));
    }
    let mut report = teacher_report(&trained)?;
    report
        .meta("cell", r.cell)
        .meta("hidden_size", r.hidden_size)
        .meta("lr", r.lr)
        .meta("epochs", r.epochs)
        .meta("seed", r.seed);
    finish_report(&mut report, &args.data);
    write_file(&args.out.join("teachers.csv"), report.to_csv())?;
    write_file(&args.out.join("teachers.txt"), report.to_text())?;
    write_json(
        &args.out.join("config.json"),
        &json!({
            "command": "teacher-report",
            "data": args.data,
            "splits": names,
            "settings": r,
            "profile_version": profile_version(&args.data),
        }),
    )?;
    print!("{}", report.to_text());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(invalid("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Featurize(a) => featurize(a),
        Command::TrainTeacher(a) => train_teacher_cmd(a),
        Command::Distill(a) => distill_cmd(a),
        Command::GridSearch(a) => grid_search_cmd(a),
        Command::Baselines(a) => suite_cmd(a, false),
        Command::Ablate(a) => suite_cmd(a, true),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::TeacherReport(a) => teacher_report_cmd(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<earlykd::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
