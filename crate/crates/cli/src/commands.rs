use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tracebench_core::dispatch::{build_index as build, samples_from_dataset, ApplyConfig};
use tracebench_core::engine::{solution_hash, Engine, EngineConfig, Launchers, WorkerHandle};
use tracebench_core::metrics::{
    aggregate_leaderboard, entries_from_dataset, leaderboard_summary, run_feedback_loop, standard_grid, write_curve_csv,
    write_leaderboard_csv, CommandProvider, MetricsError, DirectoryProvider, EngineBenchmarker, LoopError, LoopOptions, SolutionProvider,
};
use tracebench_core::sched::{CostModel, EngineRunner, Job, Scheduler, SchedulerConfig};
use tracebench_core::trace::{Dataset, DefinitionRef, EvalStatus, EvaluationRecord, SolutionRecord, SolutionRef, TraceRecord, WorkloadRecord};
use tracebench_core::validate::Tolerance;

use crate::{BenchArgs, EngineArgs, LoopArgs, Outcome};

/// Plugins with the `native` language are served by this executable.
pub fn launchers() -> Result<Launchers> {
    let exe = std::env::current_exe().context("locating the tracebench executable")?;
    Ok(Launchers::default().with_native(vec![exe.to_string_lossy().into_owned(), "native-plugin".into()]))
}

/// Loads a dataset, refusing one with violations.
pub fn load_valid(dir: &Path) -> Result<Dataset> {
    let (ds, violations) = Dataset::load(dir)?;
    if let Some(v) = violations.first() {
        bail!("dataset has {} violation(s), first: {v} (run `tracebench validate`)", violations.len());
    }
    Ok(ds)
}

/// An engine staging into `stage` and timing baselines named on the command line.
pub fn engine(a: &EngineArgs, ds: &Dataset, stage: &Path) -> Result<Engine> {
    let tolerance = match (a.atol, a.rtol) {
        (Some(abs), Some(rel)) => Some(Tolerance::new(abs, rel)?),
        _ => None,
    };
    let cfg = EngineConfig {
        mode: a.mode,
        timing: a.timing(),
        seed: a.seed,
        tolerance,
        rho: a.rho,
        ..EngineConfig::default()
    };
    let mut engine = Engine::new(cfg, stage, ds.root(), launchers()?);
    for name in &a.baseline {
        let s = ds.solutions.get(name).with_context(|| format!("baseline solution `{name}` not in the dataset"))?;
        engine.set_baseline(&s.definition, s.clone());
    }
    Ok(engine)
}

fn workers(a: &EngineArgs) -> Vec<WorkerHandle> {
    (0..a.workers).map(|i| WorkerHandle::new(format!("w{i}"))).collect()
}

fn scheduler_config(a: &EngineArgs) -> SchedulerConfig {
    SchedulerConfig {
        mode: a.mode,
        ..SchedulerConfig::default()
    }
}

fn evaluated(definition: &str, w: &WorkloadRecord, solution: &str, e: &EvaluationRecord) -> TraceRecord {
    TraceRecord {
        definition: DefinitionRef::Name(definition.to_string()),
        workload: w.clone(),
        solution: Some(SolutionRef::Name(solution.to_string())),
        evaluation: Some(e.clone()),
    }
}

fn summary_line(t: &TraceRecord) -> String {
    let e = t.evaluation.as_ref().expect("evaluated trace");
    let speed = e.speedup().map(|s| format!(" speedup {s:.3}")).unwrap_or_default();
    format!(
        "{:<22} {} / {} / {}{speed}",
        e.status.to_string(),
        t.definition.name(),
        t.solution_name().unwrap_or("-"),
        t.workload.uuid
    )
}

pub fn validate(dir: &Path) -> Result<Outcome> {
    let (ds, violations) = Dataset::load(dir)?;
    for v in &violations {
        println!("{v}");
    }
    println!(
        "{} definition(s), {} solution(s), {} trace(s), {} violation(s)",
        ds.definitions.len(),
        ds.solutions.len(),
        ds.traces.len(),
        violations.len()
    );
    Ok(if violations.is_empty() { Outcome::Clean } else { Outcome::Failures })
}

fn selected(filter: &[String], name: &str) -> bool {
    filter.is_empty() || filter.iter().any(|f| f == name)
}

pub fn bench(a: &BenchArgs) -> Result<Outcome> {
    let mut ds = load_valid(&a.engine.dataset)?;
    let stage = tempfile::tempdir()?;
    let engine = engine(&a.engine, &ds, stage.path())?;
    let mut runner = EngineRunner::new(&engine);
    let mut jobs = Vec::new();
    let mut lookup = Vec::new();
    for d in ds.definitions.values().filter(|d| selected(&a.filter_definition, &d.name)) {
        runner.add_definition(d.clone());
        let workloads = ds.workloads(&d.name);
        for s in ds.solutions_for(&d.name).filter(|s| selected(&a.filter_solution, &s.name)) {
            runner.add_solution(s.clone());
            let hash = solution_hash(s);
            for w in &workloads {
                runner.add_workload(&d.name, (*w).clone());
                jobs.push(Job::new(jobs.len(), &d.name, &w.uuid, &s.name, &hash));
                lookup.push((*w).clone());
            }
        }
    }
    if jobs.is_empty() {
        println!("no solution x workload pairs match the filters");
        return Ok(Outcome::Clean);
    }
    println!("running {} job(s) on {} worker(s), {} mode", jobs.len(), a.engine.workers, a.engine.mode);

    let mut scheduler = Scheduler::new(scheduler_config(&a.engine), workers(&a.engine), CostModel::default())?;
    let mut written: Vec<TraceRecord> = Vec::new();
    let mut io_error = None;
    let result = scheduler.run_with(jobs, &runner, &mut |r| {
        let t = evaluated(&r.job.definition, &lookup[r.job.index], &r.job.solution, &r.outcome.record);
        println!("{}", summary_line(&t));
        if let Err(e) = ds.append_trace(&t) {
            io_error.get_or_insert(e);
        }
        written.push(t);
    });
    if let Some(e) = io_error {
        return Err(e).context("writing traces");
    }
    if let Some(out) = &a.out {
        let docs: Vec<serde_json::Value> = written.iter().map(|t| serde_json::to_value(t).expect("trace is JSON")).collect();
        fs::write(out, serde_json::to_string_pretty(&docs)?).with_context(|| format!("writing {}", out.display()))?;
    }
    let report = result.map_err(|stalled| anyhow::anyhow!("{stalled}"))?;
    let failed = report.records.iter().filter(|r| r.outcome.record.status != EvalStatus::Passed).count();
    println!("{} record(s), {failed} not passed, {} round(s)", report.records.len(), report.rounds);
    Ok(if failed == 0 { Outcome::Clean } else { Outcome::Failures })
}

fn file_stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

pub fn report(dir: &Path, out: &Path) -> Result<Outcome> {
    let ds = load_valid(dir)?;
    let entries = entries_from_dataset(&ds);
    if entries.is_empty() {
        return Err(MetricsError::EmptyEvalSet.into());
    }
    let rows = aggregate_leaderboard(&entries, &standard_grid())?;
    fs::create_dir_all(out.join("curves"))?;
    write_leaderboard_csv(&rows, BufWriter::new(File::create(out.join("leaderboard.csv"))?))?;
    for r in &rows {
        let path = out.join("curves").join(format!("{}__{}.csv", file_stem(&r.author), file_stem(&r.definition)));
        write_curve_csv(&r.curve, BufWriter::new(File::create(path)?))?;
    }
    fs::write(out.join("leaderboard.json"), serde_json::to_string_pretty(&leaderboard_summary(&rows))?)?;
    println!("{:<20} {:<32} {:>6} {:>9} {:>8}", "author", "definition", "evals", "correct", "auc");
    for r in &rows {
        println!(
            "{:<20} {:<32} {:>6} {:>9.3} {:>8.4}",
            r.author,
            r.definition,
            r.evaluations,
            r.correctness_rate,
            r.auc()
        );
    }
    Ok(Outcome::Clean)
}

pub fn build_index(dir: &Path, out: &Path, error_threshold: Option<f64>) -> Result<Outcome> {
    let ds = load_valid(dir)?;
    let (samples, features) = samples_from_dataset(&ds);
    let cfg = ApplyConfig {
        error_threshold,
        ..ApplyConfig::default()
    };
    let index = build(&samples, &features, &cfg)?;
    index.require_entries()?;
    index.save(out)?;
    println!("{} entr{} from {} evaluation(s) written to {}", index.len(), if index.len() == 1 { "y" } else { "ies" }, samples.len(), out.display());
    Ok(Outcome::Clean)
}

fn provider(spec: &str) -> Result<Box<dyn SolutionProvider>> {
    if let Some(cmd) = spec.strip_prefix("cmd:") {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next().context("`cmd:` provider needs a program")?;
        return Ok(Box::new(CommandProvider::new(program, parts.collect())));
    }
    let p = DirectoryProvider::new(PathBuf::from(spec)).with_context(|| format!("reading candidate directory {spec}"))?;
    Ok(Box::new(p))
}

fn persist_solution(ds: &mut Dataset, s: &SolutionRecord) -> Result<()> {
    match ds.solutions.get(&s.name) {
        Some(existing) if existing == s => Ok(()),
        Some(_) => bail!("a different solution named `{}` is already in the dataset", s.name),
        None => {
            ds.write_solution(s)?;
            Ok(())
        }
    }
}

pub fn feedback_loop(a: &LoopArgs) -> Result<Outcome> {
    let mut ds = load_valid(&a.engine.dataset)?;
    let d = ds
        .definitions
        .get(&a.definition)
        .with_context(|| format!("definition `{}` not in the dataset", a.definition))?
        .clone();
    let workloads: Vec<WorkloadRecord> = ds.workloads(&d.name).into_iter().cloned().collect();
    let stage = tempfile::tempdir()?;
    let engine = engine(&a.engine, &ds, stage.path())?;
    let mut bench = EngineBenchmarker::new(&engine, scheduler_config(&a.engine), workers(&a.engine))?;
    let mut provider = provider(&a.provider)?;
    let result = run_feedback_loop(provider.as_mut(), &mut bench, &d, &workloads, a.iterations, &LoopOptions::default());
    match result {
        Ok(r) => {
            for h in &r.history {
                println!("{}", h.digest());
            }
            persist_solution(&mut ds, &r.best.solution)?;
            for (w, e) in &r.best.records {
                ds.append_trace(&evaluated(&d.name, w, &r.best.solution.name, e))?;
            }
            println!(
                "best: {} (iteration {}, mean speedup {:.3})",
                r.best.solution.name, r.best.iteration, r.best.mean_speedup
            );
            Ok(Outcome::Clean)
        }
        Err(LoopError::NoPassingSolution { digest, .. }) => {
            println!("{digest}");
            println!("no candidate passed every workload");
            Ok(Outcome::Failures)
        }
        Err(e) => Err(e.into()),
    }
}
