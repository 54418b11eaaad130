use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use tracebench_core::dispatch::{build_index, enabled_from_env, samples_from_dataset, ApplyConfig, DispatchIndex, Dispatcher, ImplFn, Registry};
use tracebench_core::engine::{Engine, EngineConfig};
use tracebench_core::reference::{run_reference, TensorMap};
use tracebench_core::trace::{InputSpec, WorkloadRecord};
use tracebench_core::validate::{check_deterministic, Tolerance};

use crate::commands::{launchers, load_valid};
use crate::Outcome;

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub definition: String,
    /// Var axis values as `name=value`, repeatable or comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_axis)]
    pub axes: Vec<(String, i64)>,
    /// Load this index instead of building one from the dataset.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Timed calls per path; the medians are reported.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub reps: u64,
    /// Register the fallback itself as every indexed solution, so the
    /// difference between the two paths is the routing cost alone.
    #[arg(long)]
    pub substitute_fallback: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_axis(s: &str) -> Result<(String, i64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("`{s}` is not name=value"))?;
    let v = v.trim().parse().map_err(|e| format!("axis `{k}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn run(a: &DemoArgs) -> Result<Outcome> {
    let ds = load_valid(&a.dataset)?;
    let d = ds
        .definitions
        .get(&a.definition)
        .with_context(|| format!("definition `{}` not in the dataset", a.definition))?
        .clone();
    let index = match &a.index {
        Some(p) => DispatchIndex::load(p)?,
        None => {
            let (samples, features) = samples_from_dataset(&ds);
            build_index(&samples, &features, &ApplyConfig::default())?
        }
    };
    index.require_entries()?;

    let axes: BTreeMap<String, i64> = a.axes.iter().cloned().collect();
    for name in d.var_axes() {
        if !axes.contains_key(name) {
            bail!("missing --axes {name}=<value>");
        }
    }
    let w = WorkloadRecord {
        uuid: "apply-demo".into(),
        axes: axes.clone(),
        inputs: d.inputs.keys().map(|k| (k.clone(), InputSpec::Random { seed: None })).collect(),
    };
    let stage = tempfile::tempdir()?;
    let cfg = EngineConfig {
        seed: a.seed,
        ..EngineConfig::default()
    };
    let engine = Arc::new(Engine::new(cfg, stage.path(), ds.root(), launchers()?));
    let prepared = engine.prepare(&d, &w)?;

    let reference = {
        let d = d.clone();
        move |inputs: &TensorMap| run_reference(&d, inputs).map_err(|e| e.to_string())
    };
    let mut registry = Registry::new();
    let outputs: Vec<String> = d.outputs.keys().cloned().collect();
    for s in ds.solutions_for(&d.name) {
        if a.substitute_fallback {
            let f = reference.clone();
            let imp: ImplFn = Arc::new(move |inputs, _| f(inputs));
            registry.register_fn(&s.name, imp);
        } else {
            registry.register_plugin(Arc::clone(&engine), s.clone(), outputs.clone());
        }
    }
    let enabled = enabled_from_env();
    let dispatcher = Dispatcher::new(&index, &registry, enabled);
    // Read from the index so the dispatcher's probe counter only sees real calls.
    let indexed = index.lookup(&d.name, &axes).map(|e| e.solution.clone());

    // One untimed call per path bootstraps plugins and warms caches.
    let via_fallback = reference(&prepared.inputs).map_err(anyhow::Error::msg)?;
    let via_apply = dispatcher
        .apply(&d.name, &prepared.inputs, &axes, &reference)
        .map_err(anyhow::Error::msg)?;

    let mut fallback_us = Vec::new();
    let mut apply_us = Vec::new();
    for _ in 0..a.reps {
        let t = Instant::now();
        std::hint::black_box(reference(&prepared.inputs).map_err(anyhow::Error::msg)?);
        fallback_us.push(t.elapsed().as_secs_f64() * 1e6);
        let t = Instant::now();
        std::hint::black_box(dispatcher.apply(&d.name, &prepared.inputs, &axes, &reference).map_err(anyhow::Error::msg)?);
        apply_us.push(t.elapsed().as_secs_f64() * 1e6);
    }
    let (fb, ap) = (median(fallback_us), median(apply_us));
    let stats = dispatcher.stats();

    println!("enabled: {enabled}");
    println!("indexed: {}", indexed.as_deref().unwrap_or("(none)"));
    println!("fallback_us: {fb:.3}");
    println!("apply_us: {ap:.3}");
    println!("overhead_us: {:.3}", ap - fb);
    println!("ratio: {:.4}", ap / fb);
    println!(
        "calls: {} probes: {} routed: {} fallbacks: {} demotions: {}",
        stats.calls, stats.probes, stats.routed, stats.fallbacks, stats.demotions
    );

    if d.op_type.is_stochastic() {
        println!("outputs: not compared (stochastic definition)");
        return Ok(Outcome::Clean);
    }
    let mut agree = true;
    for name in &outputs {
        let (Some(x), Some(r)) = (via_apply.get(name), via_fallback.get(name)) else {
            println!("output {name}: missing");
            agree = false;
            continue;
        };
        let v = check_deterministic(x, r, Tolerance::default_for(r.dtype()))?;
        println!("output {name}: {} (max abs err {:.3e})", if v.passed { "agrees" } else { "DIFFERS" }, v.max_absolute_error);
        agree &= v.passed;
    }
    Ok(if agree { Outcome::Clean } else { Outcome::Failures })
}
