//! Property tests for the schema, tensor, validator, scheduler, metrics and
//! dispatch invariants.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use proptest::prelude::*;
use tracebench_core::dispatch::{bucket, build_index, ApplyConfig, DispatchKey, IndexSample};
use tracebench_core::engine::{timestamp_now, EvalOutcome, ExecutorMode, WorkerHandle};
use tracebench_core::metrics::{aggregate_leaderboard, fast_p, fast_p_curve, standard_grid, EvalEntry};
use tracebench_core::sched::{
    assignment_cost, solve, solve_canonical, CostModel, Fault, Job, JobRunner, Scheduler, SchedulerConfig,
};
use tracebench_core::tensor::{read_archive, write_archive, DType, Tensor, TensorArchive};
use tracebench_core::trace::*;
use tracebench_core::validate::{check_deterministic, check_matched_ratio, tvd, Tolerance};

const FLOATS: [DType; 4] = [DType::F32, DType::F16, DType::BF16, DType::F8E4M3];
const ALL_DTYPES: [DType; 6] = [DType::F32, DType::F16, DType::BF16, DType::F8E4M3, DType::I32, DType::I64];

fn text() -> impl Strategy<Value = String> {
    prop_oneof![Just(String::new()), "[a-zA-Z0-9 _.,:/\"\\\\é→\n-]{0,24}"]
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,8}"
}

fn dtype() -> impl Strategy<Value = DType> {
    prop::sample::select(ALL_DTYPES.to_vec())
}

fn op_type() -> impl Strategy<Value = OpType> {
    prop_oneof![
        Just(OpType::Gemm),
        Just(OpType::FusedAddRmsnorm),
        Just(OpType::GqaPagedDecode),
        Just(OpType::SamplingTopKTopP),
        ident().prop_map(|s| OpType::parse(&format!("custom_{s}"))),
    ]
}

/// A definition with 1-3 var axes, 0-2 const axes, tensors over those axes
/// and an optional axis-only constraint.
fn definition() -> impl Strategy<Value = DefinitionRecord> {
    let axes = (1usize..=3, prop::collection::vec(1u64..4096, 0..=2));
    (ident(), text(), op_type(), prop::collection::vec(ident(), 0..3), axes, text(), any::<bool>())
        .prop_flat_map(|(name, description, op_type, tags, (nvar, consts), reference, constrained)| {
            let mut ax: BTreeMap<String, AxisSpec> = (0..nvar).map(|i| (format!("V{i}"), AxisSpec::var())).collect();
            for (i, v) in consts.iter().enumerate() {
                ax.insert(format!("C{i}"), AxisSpec::constant(*v));
            }
            let names: Vec<String> = ax.keys().cloned().collect();
            let tensor = move || {
                (prop::sample::subsequence(names.clone(), 0..=names.len().min(3)), dtype()).prop_map(|(shape, d)| {
                    TensorSpec {
                        shape,
                        dtype: d,
                        description: None,
                    }
                })
            };
            (
                prop::collection::vec(tensor(), 1..4),
                prop::collection::vec(tensor(), 1..3),
                Just((name, description, op_type, tags, ax, reference, constrained)),
            )
        })
        .prop_map(|(ins, outs, (name, description, op_type, tags, axes, reference, constrained))| {
            let inputs: IndexMap<String, TensorSpec> =
                ins.into_iter().enumerate().map(|(i, t)| (format!("in{i}"), t)).collect();
            let outputs: IndexMap<String, TensorSpec> =
                outs.into_iter().enumerate().map(|(i, t)| (format!("out{i}"), t)).collect();
            let constraints = if constrained {
                vec![ConstraintExpr::parse("V0 <= V0 * 2 + 1").unwrap()]
            } else {
                vec![]
            };
            DefinitionRecord {
                name,
                description,
                op_type,
                tags,
                axes,
                constraints,
                inputs,
                outputs,
                reference,
            }
        })
}

fn workload_for(d: &DefinitionRecord) -> impl Strategy<Value = WorkloadRecord> {
    let vars: Vec<String> = d.var_axes().map(str::to_string).collect();
    let inputs: Vec<(String, bool)> = d.inputs.iter().map(|(n, t)| (n.clone(), t.shape.is_empty())).collect();
    let n = inputs.len();
    (
        "[0-9a-f]{8}-[0-9a-f]{4}",
        prop::collection::vec(1i64..100_000, vars.len()),
        prop::collection::vec((any::<Option<u64>>(), -1e6f64..1e6), n),
    )
        .prop_map(move |(uuid, vals, specs)| WorkloadRecord {
            uuid,
            axes: vars.iter().cloned().zip(vals).collect(),
            inputs: inputs
                .iter()
                .zip(specs)
                .map(|((name, scalar), (seed, value))| {
                    let spec = if *scalar { InputSpec::Scalar { value } } else { InputSpec::Random { seed } };
                    (name.clone(), spec)
                })
                .collect(),
        })
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![0.0f64..1.0, 1e-6f64..1e6, Just(0.0)]
}

fn evaluation() -> impl Strategy<Value = EvaluationRecord> {
    let status = prop::sample::select(vec![
        EvalStatus::Passed,
        EvalStatus::FailedCompile,
        EvalStatus::FailedRuntime,
        EvalStatus::FailedCorrectness,
        EvalStatus::Timeout,
    ]);
    (
        status,
        text(),
        prop::collection::btree_map(ident(), ident(), 0..3),
        text(),
        prop::option::of((finite(), finite())),
        (1e-4f64..1e4, 1e-4f64..1e4),
    )
        .prop_map(|(status, hardware, libs, log, corr, (lat, reference))| EvaluationRecord {
            status,
            environment: Environment { hardware, libs },
            timestamp: "2025-06-01T12:00:00Z".into(),
            log,
            correctness: corr.or(status.is_passed().then_some((0.0, 0.0))).map(|(r, a)| Correctness {
                max_relative_error: r,
                max_absolute_error: a,
                extra: None,
            }),
            performance: status.is_passed().then(|| Performance::new(lat, reference)),
        })
}

fn trace() -> impl Strategy<Value = TraceRecord> {
    definition().prop_flat_map(|d| {
        let w = workload_for(&d);
        (Just(d), w, prop::option::of(ident()), prop::option::of(evaluation()), any::<bool>())
    })
    .prop_map(|(d, workload, sol, eval, inline)| {
        let evaluation = sol.as_ref().and(eval);
        TraceRecord {
            definition: if inline {
                DefinitionRef::Inline(Box::new(d))
            } else {
                DefinitionRef::Name(d.name)
            },
            workload,
            solution: sol.map(SolutionRef::Name),
            evaluation,
        }
    })
}

fn solution() -> impl Strategy<Value = SolutionRecord> {
    (ident(), ident(), ident(), prop::option::of(text()), text(), text()).prop_map(
        |(name, definition, author, description, lang, content)| SolutionRecord {
            name,
            definition,
            author,
            description,
            spec: BuildSpec {
                language: if lang.is_empty() { "python".into() } else { lang },
                target_hardware: vec!["cpu".into()],
                entry_point: "main.py::run".into(),
                dependencies: vec![],
            },
            sources: vec![SourceFile {
                path: "main.py".into(),
                content,
            }],
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn definition_round_trips(d in definition()) {
        let text = serialize_definition(&d);
        let back = parse_definition(&text).unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(serialize_definition(&back), text);
    }

    #[test]
    fn solution_round_trips(s in solution()) {
        let back = parse_solution(&serialize_solution(&s)).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn trace_round_trips(t in trace()) {
        let text = serialize_trace(&t);
        let back = parse_trace(&text).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(serialize_trace(&back), text);
    }

    #[test]
    fn binding_is_deterministic_and_total(d in definition().prop_flat_map(|d| { let w = workload_for(&d); (Just(d), w) })) {
        let (d, w) = d;
        let a = bind_workload(&d, &w);
        let b = bind_workload(&d, &w);
        prop_assert_eq!(&a, &b);
        if let Ok(bound) = a {
            for (name, spec) in &d.inputs {
                let shape = bound.shape(name).unwrap();
                prop_assert_eq!(shape.len(), spec.shape.len());
                for (axis, &dim) in spec.shape.iter().zip(shape) {
                    let expected = d.const_value(axis).map(|v| v as i64).unwrap_or_else(|| w.axes[axis]);
                    prop_assert_eq!(dim as i64, expected);
                }
            }
        }
    }
}

/// Definitions drawn from a tiny space so that equivalent pairs are common.
fn small_definition() -> impl Strategy<Value = DefinitionRecord> {
    (
        ident(),
        prop::sample::select(vec![OpType::Gemm, OpType::FusedAddRmsnorm]),
        prop::sample::select(vec!["ref_a", "ref_b"]),
        prop::option::of(prop::sample::select(vec![4u64, 8])),
        prop::sample::select(vec![DType::F16, DType::F32]),
        any::<bool>(),
        text(),
    )
        .prop_map(|(name, op_type, reference, c, dt, two_inputs, description)| {
            let mut axes = BTreeMap::from([("M".to_string(), AxisSpec::var())]);
            axes.insert("K".into(), c.map(AxisSpec::constant).unwrap_or_else(AxisSpec::var));
            let mut inputs = IndexMap::from([("A".to_string(), TensorSpec::new(&["M", "K"], dt))]);
            if two_inputs {
                inputs.insert("B".into(), TensorSpec::new(&["K"], dt));
            }
            DefinitionRecord {
                name,
                description,
                op_type,
                tags: vec![],
                axes,
                constraints: vec![],
                inputs,
                outputs: IndexMap::from([("C".to_string(), TensorSpec::new(&["M"], dt))]),
                reference: reference.into(),
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn equivalence_is_an_equivalence_relation(a in small_definition(), b in small_definition(), c in small_definition()) {
        let eq = definitions_equivalent;
        prop_assert!(eq(&a, &a));
        prop_assert_eq!(eq(&a, &b), eq(&b, &a));
        if eq(&a, &b) && eq(&b, &c) {
            prop_assert!(eq(&a, &c));
        }
        // Renaming never matters.
        let mut renamed = a.clone();
        renamed.name.push_str("_copy");
        prop_assert!(eq(&a, &renamed));
    }
}

fn f32_value() -> impl Strategy<Value = f32> {
    prop_oneof![
        -10.0f32..10.0,
        -1e5f32..1e5,
        -1e-3f32..1e-3,
        Just(0.0),
        Just(-0.0),
        Just(f32::INFINITY),
        Just(f32::NEG_INFINITY),
        any::<f32>(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn requantization_is_identity(xs in prop::collection::vec(f32_value(), 0..64), d in prop::sample::select(FLOATS.to_vec())) {
        let t = Tensor::from_f32(DType::F32, vec![xs.len()], xs).unwrap();
        let once = t.quantize(d);
        let twice = once.quantize(d);
        prop_assert!(once.bitwise_eq(&twice));
        // Construction in the target dtype lands on the same grid.
        let direct = Tensor::from_f32(d, vec![once.numel()], once.floats().unwrap().to_vec()).unwrap();
        prop_assert!(direct.bitwise_eq(&once));
    }

    #[test]
    fn archive_round_trip_is_bitwise(
        tensors in prop::collection::vec((dtype(), prop::collection::vec(0usize..4, 0..3), any::<u64>()), 0..6)
    ) {
        let mut a = TensorArchive::new();
        for (i, (d, shape, seed)) in tensors.into_iter().enumerate() {
            a.insert(format!("t{i}"), tracebench_core::tensor::random_tensor(&shape, d, seed, "x"));
        }
        let bytes = write_archive(&a);
        let back = read_archive(&bytes).unwrap();
        prop_assert!(back.bitwise_eq(&a));
        let ranges = a.byte_ranges();
        let mut at = 0;
        for (_, (b, e)) in ranges {
            prop_assert_eq!(b, at);
            at = e;
        }
    }

    #[test]
    fn materialization_is_pure(shape in prop::collection::vec(0usize..5, 0..3), d in dtype(), seed in any::<u64>(), name in ident()) {
        let a = tracebench_core::tensor::random_tensor(&shape, d, seed, &name);
        let b = tracebench_core::tensor::random_tensor(&shape, d, seed, &name);
        prop_assert!(a.bitwise_eq(&b));
    }
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|mut v| {
        let s: f64 = v.iter().sum();
        if s <= 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= s);
        }
        v
    })
}

fn three_distributions() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| (distribution(n), distribution(n), distribution(n)))
}

fn value_pairs() -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
    (0usize..32).prop_flat_map(|n| {
        (
            prop::collection::vec(f32_value(), n),
            prop::collection::vec(prop_oneof![4 => -1e-3f32..1e-3, 1 => -1.0f32..1.0, 1 => Just(f32::NAN)], n),
        )
            .prop_map(|(r, delta)| {
                let s = r.iter().zip(&delta).map(|(a, d)| a + d).collect();
                (s, r)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn tvd_is_a_bounded_metric((p, q, r) in three_distributions()) {
        let d = tvd(&p, &q).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert_eq!(tvd(&p, &p).unwrap(), 0.0);
        prop_assert!((d - tvd(&q, &p).unwrap()).abs() < 1e-15);
        prop_assert!(tvd(&p, &r).unwrap() <= d + tvd(&q, &r).unwrap() + 1e-12);
    }

    #[test]
    fn matched_ratio_at_one_is_deterministic((s, r) in value_pairs(), ea in prop::sample::select(vec![0.0, 1e-5, 1e-3, 1.0]), er in prop::sample::select(vec![0.0, 1e-5, 1e-2])) {
        let n = s.len();
        let sol = Tensor::from_f32(DType::F32, vec![n], s).unwrap();
        let reference = Tensor::from_f32(DType::F32, vec![n], r).unwrap();
        let tol = Tolerance::new(ea, er).unwrap();
        let det = check_deterministic(&sol, &reference, tol).unwrap();
        let mr = check_matched_ratio(&sol, &reference, tol, 1.0).unwrap();
        prop_assert_eq!(det.passed, mr.passed);
    }
}

fn record(status: EvalStatus, speedup: f64) -> EvaluationRecord {
    EvaluationRecord {
        status,
        environment: Environment::default(),
        timestamp: "2025-06-01T12:00:00Z".into(),
        log: String::new(),
        correctness: None,
        performance: status.is_passed().then(|| Performance::new(1.0, speedup)),
    }
}

fn records() -> impl Strategy<Value = Vec<EvaluationRecord>> {
    let status = prop::sample::select(vec![EvalStatus::Passed, EvalStatus::Passed, EvalStatus::FailedCorrectness, EvalStatus::Timeout]);
    prop::collection::vec((status, prop_oneof![0.01f64..10.0, Just(1.0), Just(2.0)]), 1..40)
        .prop_map(|v| v.into_iter().map(|(s, x)| record(s, x)).collect())
}

/// `(author, definition, solution, record)` tuples over small name pools.
fn leaderboard_input() -> impl Strategy<Value = Vec<(String, String, String, EvaluationRecord)>> {
    let name = |pool: &'static [&'static str]| prop::sample::select(pool).prop_map(str::to_string);
    prop::collection::vec(
        (name(&["alice", "bob", "carol"]), name(&["gemm", "norm"]), name(&["s1", "s2", "s3"]), records().prop_map(|mut v| v.remove(0))),
        1..30,
    )
}

fn board(input: &[(String, String, String, EvaluationRecord)]) -> Vec<tracebench_core::LeaderboardRow> {
    let entries: Vec<EvalEntry<'_>> = input
        .iter()
        .map(|(a, d, s, r)| EvalEntry { author: a, definition: d, solution: s, record: r })
        .collect();
    aggregate_leaderboard(&entries, &standard_grid()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fast_p_is_non_increasing(recs in records(), ps in prop::collection::vec(0.0f64..8.0, 2..10)) {
        let mut ps = ps;
        ps.sort_by(f64::total_cmp);
        let vals: Vec<f64> = ps.iter().map(|&p| fast_p(&recs, p).unwrap()).collect();
        prop_assert!(vals.windows(2).all(|w| w[1] <= w[0]));
        let curve = fast_p_curve(&recs.iter().collect::<Vec<_>>(), &standard_grid()).unwrap();
        prop_assert!(curve.values().windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fast_p_at_zero_is_correctness_rate(recs in records()) {
        let passed = recs.iter().filter(|r| r.status.is_passed()).count();
        prop_assert_eq!(fast_p(&recs, 0.0).unwrap(), passed as f64 / recs.len() as f64);
    }

    #[test]
    fn leaderboard_is_permutation_invariant(input in leaderboard_input().prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()))) {
        let (a, b) = input;
        prop_assert_eq!(board(&a), board(&b));
    }
}

fn perms(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in perms(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=6).prop_flat_map(|n| {
        let cell = prop_oneof![(0u32..5).prop_map(f64::from), 0.0f64..1000.0];
        prop::collection::vec(prop::collection::vec(cell, n), n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn hungarian_matches_brute_force(m in matrix()) {
        let n = m.len();
        let all = perms(n);
        let best = all.iter().map(|p| assignment_cost(&m, p)).fold(f64::INFINITY, f64::min);
        let tol = 1e-9 * (1.0 + best.abs());
        let a = solve(&m);
        prop_assert!((assignment_cost(&m, &a) - best).abs() <= tol);
        let c = solve_canonical(&m);
        prop_assert!((assignment_cost(&m, &c) - best).abs() <= tol);
        // Lexicographically smallest among optimal assignments.
        let lex = all.iter().filter(|p| (assignment_cost(&m, p) - best).abs() <= tol).min().unwrap();
        prop_assert_eq!(&c, lex);
    }

    #[test]
    fn cost_model_stays_positive_and_finite(updates in prop::collection::vec((0usize..3, 0usize..3, prop_oneof![1e-9f64..1e9, Just(0.0), Just(-1.0), Just(f64::NAN), Just(f64::INFINITY), Just(f64::MAX)]), 0..60)) {
        let mut cm = CostModel::default();
        for (s, w, obs) in updates {
            let (s, w) = (format!("s{s}"), format!("w{w}"));
            let before = cm.get(&s, &w);
            match cm.update(&s, &w, obs) {
                Ok(v) => prop_assert!(v.is_finite() && v > 0.0),
                Err(_) => prop_assert_eq!(cm.get(&s, &w), before),
            }
        }
        for s in 0..3 {
            for w in 0..3 {
                let e = cm.estimate(&format!("s{s}"), &format!("w{w}"));
                prop_assert!(e.is_finite() && e > 0.0);
            }
        }
    }

    #[test]
    fn bucketing_is_monotone(a in -10i64..1 << 40, b in -10i64..1 << 40) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(bucket(lo) <= bucket(hi));
        prop_assert!(bucket(a).is_power_of_two());
        prop_assert!(bucket(a) as i64 >= a);
        prop_assert!(a <= 1 || (bucket(a) / 2) < a as u64);
    }
}

/// Passes every job unless its worker has a pending kill.
struct Runner;

impl JobRunner for Runner {
    fn run(&self, _job: &Job, worker: &WorkerHandle, mode: ExecutorMode) -> EvalOutcome {
        let killed = worker.take_pending_kill();
        if killed {
            worker.kill();
        }
        EvalOutcome {
            record: EvaluationRecord {
                status: if killed { EvalStatus::FailedRuntime } else { EvalStatus::Passed },
                environment: Environment::default(),
                timestamp: timestamp_now(),
                log: String::new(),
                correctness: None,
                performance: None,
            },
            retryable: killed,
            worker_fault: killed,
            mode,
            elapsed_ms: 1.0 + worker.id().len() as f64,
        }
    }
}

fn fault_script() -> impl Strategy<Value = (usize, usize, Vec<(usize, String)>)> {
    (1usize..4, 1usize..20).prop_flat_map(|(nw, nj)| {
        let names: Vec<String> = (0..nw).map(|i| format!("w{i}")).chain((0..4).map(|i| format!("spare-{i}"))).collect();
        (Just(nw), Just(nj), prop::collection::vec((0usize..8, prop::sample::select(names)), 0..8))
    })
}

fn schedule(nw: usize, nj: usize, faults: &[(usize, String)], spares: usize) -> Result<Vec<(usize, String)>, (usize, usize)> {
    let cfg = SchedulerConfig { spare_budget: spares, ..SchedulerConfig::default() };
    let workers = (0..nw).map(|i| WorkerHandle::new(format!("w{i}"))).collect();
    let faults = faults.iter().map(|(r, w)| Fault { round: *r, worker: w.clone() }).collect();
    let mut s = Scheduler::new(cfg, workers, CostModel::default()).unwrap().with_faults(faults);
    let jobs = (0..nj).map(|i| Job::new(i, "d", format!("wl{i}"), format!("s{}", i % 3), format!("h{}", i % 3))).collect();
    match s.run(jobs, &Runner) {
        Ok(r) => {
            let mut seen: Vec<usize> = r.records.iter().map(|e| e.job.index).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..nj).collect::<Vec<_>>(), "one record per job");
            for e in &r.attempts {
                assert!(e.attempt as usize <= SchedulerConfig::default().max_retries as usize + 1);
            }
            let mut per_round: BTreeSet<(usize, String)> = BTreeSet::new();
            for e in &r.attempts {
                assert!(per_round.insert((e.round, e.worker.clone())), "worker ran two jobs in one round");
            }
            Ok(r.attempts.iter().map(|e| (e.job, e.worker.clone())).collect())
        }
        Err(stall) => {
            let done: BTreeSet<usize> = stall.report.records.iter().map(|e| e.job.index).collect();
            let pending: BTreeSet<usize> = stall.pending.iter().map(|j| j.index).collect();
            assert_eq!(done.len(), stall.report.records.len(), "duplicate records");
            assert!(done.is_disjoint(&pending));
            assert_eq!(done.len() + pending.len(), nj, "a job was lost");
            Err((done.len(), pending.len()))
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn every_job_gets_exactly_one_record((nw, nj, faults) in fault_script(), spares in 0usize..3) {
        let first = schedule(nw, nj, &faults, spares);
        // Scheduling is deterministic given jobs, workers, costs and faults.
        prop_assert_eq!(first, schedule(nw, nj, &faults, spares));
    }
}

fn samples() -> impl Strategy<Value = Vec<IndexSample>> {
    let status = prop::sample::select(vec![EvalStatus::Passed, EvalStatus::Passed, EvalStatus::Passed, EvalStatus::FailedCorrectness]);
    prop::collection::vec(
        (prop::sample::select(vec!["d0", "d1"]), 1i64..300, prop::sample::select(vec!["a", "b", "c"]), status, 0.01f64..5.0),
        0..40,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(d, m, s, status, lat)| IndexSample {
                definition: d.into(),
                axes: BTreeMap::from([("M".to_string(), m)]),
                solution: s.into(),
                status,
                latency_ms: status.is_passed().then_some(lat),
                max_relative_error: Some(0.0),
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn index_is_pure_and_picks_the_fastest(samples in samples()) {
        let features = BTreeMap::from([("d0".to_string(), vec!["M".to_string()]), ("d1".to_string(), vec!["M".to_string()])]);
        let cfg = ApplyConfig::default();
        let Ok(idx) = build_index(&samples, &features, &cfg) else {
            prop_assert!(samples.iter().all(|s| !s.status.is_passed()));
            return Ok(());
        };
        prop_assert_eq!(idx.to_json(), build_index(&samples, &features, &cfg).unwrap().to_json());

        // Oracle: per key, mean latency of solutions with no rejected evaluation.
        let mut groups: BTreeMap<DispatchKey, BTreeMap<&str, Vec<Option<f64>>>> = BTreeMap::new();
        for s in &samples {
            let key = DispatchKey::new(&s.definition, &features[&s.definition], &s.axes).unwrap();
            groups.entry(key).or_default().entry(&s.solution).or_default().push(s.latency_ms);
        }
        for (key, sols) in &groups {
            let eligible: Vec<(&str, f64)> = sols
                .iter()
                .filter_map(|(name, lats)| {
                    let all: Option<Vec<f64>> = lats.iter().copied().collect();
                    all.map(|v| (*name, v.iter().sum::<f64>() / v.len() as f64))
                })
                .collect();
            let axes = BTreeMap::from([("M".to_string(), key.buckets[0] as i64)]);
            let entry = idx.lookup(&key.definition, &axes);
            match entry {
                None => prop_assert!(eligible.is_empty()),
                Some(e) => {
                    prop_assert!(eligible.iter().any(|(n, _)| *n == e.solution));
                    for (_, lat) in &eligible {
                        prop_assert!(e.latency_ms <= lat + 1e-12);
                    }
                }
            }
        }
    }
}
