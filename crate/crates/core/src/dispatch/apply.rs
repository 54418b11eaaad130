use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use rustc_hash::FxHashMap;

use super::index::{bucket, Bootstrap, DispatchIndex};
use crate::engine::Engine;
use crate::reference::TensorMap;
use crate::trace::SolutionRecord;

/// A callable implementation. Receives the inputs and the runtime axes.
pub type ImplFn = Arc<dyn Fn(&TensorMap, &BTreeMap<String, i64>) -> Result<TensorMap, String> + Send + Sync>;

type Factory = Arc<dyn Fn() -> Result<ImplFn, String> + Send + Sync>;

/// How each solution name is brought up on first use.
#[derive(Default, Clone)]
pub struct Registry {
    factories: HashMap<String, Factory>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a lazily constructed implementation.
    pub fn register<F>(&mut self, solution: impl Into<String>, factory: F)
    where
        F: Fn() -> Result<ImplFn, String> + Send + Sync + 'static,
    {
        self.factories.insert(solution.into(), Arc::new(factory));
    }

    /// Registers an in-process function that needs no bootstrap.
    pub fn register_fn(&mut self, solution: impl Into<String>, f: ImplFn) {
        self.register(solution, move || Ok(Arc::clone(&f)));
    }

    /// Registers a plugin solution served by its own process.
    pub fn register_plugin(&mut self, engine: Arc<Engine>, s: SolutionRecord, outputs: Vec<String>) {
        let name = s.name.clone();
        self.register(name, move || {
            let kernel = engine
                .bootstrap_kernel(&s, outputs.clone())
                .map_err(|f| format!("{}: {}", f.status, f.detail))?;
            let f: ImplFn = Arc::new(move |inputs, axes| kernel.call(inputs, axes).map_err(|f| f.detail));
            Ok(f)
        });
    }

    pub fn contains(&self, solution: &str) -> bool {
        self.factories.contains_key(solution)
    }
}

struct Route {
    solution: usize,
    demoted: AtomicBool,
}

/// Buckets are powers of two, so each fits in a 6-bit exponent and up to
/// ten feature axes pack into one integer key.
const PACKED_AXES: usize = 10;

enum Routes {
    Packed(FxHashMap<u64, Route>),
    Wide(FxHashMap<Vec<u64>, Route>),
}

fn pack(buckets: &[u64]) -> u64 {
    buckets.iter().fold(0, |k, b| k << 6 | u64::from(b.trailing_zeros()))
}

struct Plan {
    axes: Vec<String>,
    routes: Routes,
}

struct Slot {
    name: String,
    bootstrap: Bootstrap,
    factory: Option<Factory>,
    kernel: OnceLock<Result<ImplFn, String>>,
}

impl Slot {
    /// Bootstraps once; concurrent callers wait for the first.
    fn kernel(&self) -> Result<&ImplFn, &str> {
        let r = self.kernel.get_or_init(|| match &self.factory {
            Some(f) => f(),
            None => Err(format!("no implementation registered for `{}`", self.name)),
        });
        r.as_ref().map_err(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DispatchStats {
    pub calls: u64,
    pub probes: u64,
    pub routed: u64,
    pub fallbacks: u64,
    pub demotions: u64,
    pub bootstraps: u64,
}

#[derive(Default)]
struct Counters {
    probes: AtomicU64,
    routed: AtomicU64,
    fallbacks: AtomicU64,
    demotions: AtomicU64,
}

/// Online router over an immutable index. Safe to share across threads.
pub struct Dispatcher {
    enabled: bool,
    plans: FxHashMap<String, Plan>,
    slots: Vec<Slot>,
    stats: Counters,
}

impl Dispatcher {
    /// Builds routing tables and bootstraps every ahead-of-time entry now.
    pub fn new(index: &DispatchIndex, registry: &Registry, enabled: bool) -> Self {
        let mut slots: Vec<Slot> = Vec::new();
        let mut slot_of: HashMap<&str, usize> = HashMap::new();
        let mut plans: FxHashMap<String, Plan> = FxHashMap::default();
        for (key, entry) in &index.entries {
            let si = *slot_of.entry(entry.solution.as_str()).or_insert_with(|| {
                slots.push(Slot {
                    name: entry.solution.clone(),
                    bootstrap: entry.bootstrap,
                    factory: registry.factories.get(&entry.solution).cloned(),
                    kernel: OnceLock::new(),
                });
                slots.len() - 1
            });
            let plan = plans.entry(key.definition.clone()).or_insert_with(|| {
                let axes = index.features.get(&key.definition).cloned().unwrap_or_default();
                let routes = if axes.len() <= PACKED_AXES {
                    Routes::Packed(FxHashMap::default())
                } else {
                    Routes::Wide(FxHashMap::default())
                };
                Plan { axes, routes }
            });
            let route = Route {
                solution: si,
                demoted: AtomicBool::new(false),
            };
            match &mut plan.routes {
                Routes::Packed(m) => m.insert(pack(&key.buckets), route),
                Routes::Wide(m) => m.insert(key.buckets.clone(), route),
            };
        }
        let d = Dispatcher {
            enabled,
            plans,
            slots,
            stats: Counters::default(),
        };
        if enabled {
            for s in d.slots.iter().filter(|s| s.bootstrap == Bootstrap::Aot) {
                if let Err(e) = s.kernel() {
                    log::warn!("ahead-of-time bootstrap of {} failed: {e}", s.name);
                }
            }
        }
        d
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn stats(&self) -> DispatchStats {
        let c = &self.stats;
        DispatchStats {
            calls: c.routed.load(Ordering::Relaxed) + c.fallbacks.load(Ordering::Relaxed),
            probes: c.probes.load(Ordering::Relaxed),
            routed: c.routed.load(Ordering::Relaxed),
            fallbacks: c.fallbacks.load(Ordering::Relaxed),
            demotions: c.demotions.load(Ordering::Relaxed),
            bootstraps: self.slots.iter().filter(|s| s.kernel.get().is_some()).count() as u64,
        }
    }

    /// Solution the call would route to, without running anything.
    pub fn route(&self, definition: &str, axes: &BTreeMap<String, i64>) -> Option<&str> {
        let route = self.probe(definition, axes)?;
        (!route.demoted.load(Ordering::Relaxed)).then(|| self.slots[route.solution].name.as_str())
    }

    fn probe(&self, definition: &str, axes: &BTreeMap<String, i64>) -> Option<&Route> {
        let plan = self.plans.get(definition)?;
        match &plan.routes {
            Routes::Packed(m) => {
                let mut key = 0u64;
                for a in &plan.axes {
                    key = key << 6 | u64::from(bucket(*axes.get(a)?).trailing_zeros());
                }
                self.stats.probes.fetch_add(1, Ordering::Relaxed);
                m.get(&key)
            }
            Routes::Wide(m) => {
                let key = plan.axes.iter().map(|a| axes.get(a).map(|&v| bucket(v))).collect::<Option<Vec<_>>>()?;
                self.stats.probes.fetch_add(1, Ordering::Relaxed);
                m.get(&key)
            }
        }
    }

    /// Routes to the indexed implementation, or calls `fallback` on a miss,
    /// when disabled, or after the plugin fails twice (the key is then
    /// demoted for the rest of the session).
    pub fn apply<F>(&self, definition: &str, inputs: &TensorMap, axes: &BTreeMap<String, i64>, fallback: F) -> Result<TensorMap, String>
    where
        F: FnOnce(&TensorMap) -> Result<TensorMap, String>,
    {
        if self.enabled {
            if let Some(route) = self.probe(definition, axes) {
                if !route.demoted.load(Ordering::Relaxed) {
                    let slot = &self.slots[route.solution];
                    match slot.kernel() {
                        Ok(k) => {
                            let out = k(inputs, axes).or_else(|_| k(inputs, axes));
                            match out {
                                Ok(out) => {
                                    self.stats.routed.fetch_add(1, Ordering::Relaxed);
                                    return Ok(out);
                                }
                                Err(e) => log::warn!("{} failed twice on {definition}: {e}", slot.name),
                            }
                        }
                        Err(e) => log::warn!("bootstrap of {} failed: {e}", slot.name),
                    }
                    if !route.demoted.swap(true, Ordering::Relaxed) {
                        self.stats.demotions.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
        }
        self.stats.fallbacks.fetch_add(1, Ordering::Relaxed);
        fallback(inputs)
    }
}
