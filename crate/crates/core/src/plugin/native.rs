//! Built-in kernels served by the `native` launcher.
//!
//! The staged entry file is a JSON parameter document; the entry symbol
//! picks the kernel:
//!
//! | symbol          | behaviour                                                   |
//! |-----------------|-------------------------------------------------------------|
//! | `identity`      | echoes its inputs                                           |
//! | `reference`     | runs the built-in evaluator for `params.definition`         |
//! | `gemm`          | `A · Bᵀ`                                                    |
//! | `gemm_offset`   | gemm plus `params.offset` on every element                  |
//! | `gemm_perturb`  | gemm with the first `params.fraction` of elements shifted by `params.delta` |
//! | `rmsnorm`       | fused add + RMSNorm                                         |
//! | `sampler`       | top-k / top-p sampler seeded from the RUN trailer           |
//! | `sampler_leaky` | as `sampler`, but emits a masked-out token with probability `params.leak` |
//! | `sleep`         | sleeps `params.sleep_ms`, then echoes                       |
//! | `crash`         | exits with status 3 on RUN number `params.after + 1`        |
//! | `error`         | answers every RUN with ERROR                                |
//! | `garbage`       | writes bytes that are not a frame                           |
//! | `counter`       | gemm plus (number of earlier RUNs in this process)          |
//! | `fail_hello`    | rejects the handshake                                       |
//!
//! Every kernel first busy-waits `params.delay_us` microseconds.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{serve, Kernel};
use crate::engine::{sampling_targets, HostHello, RunTrailer};
use crate::reference::{ref_fused_add_rmsnorm, ref_gemm, run_reference_seeded, sample_index, TensorMap};
use crate::tensor::{Tensor, TensorArchive};
use crate::trace::{parse_definition, DefinitionRecord};

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct Params {
    delay_us: u64,
    offset: f32,
    fraction: f64,
    delta: f32,
    leak: f64,
    sleep_ms: u64,
    after: u64,
    definition: Option<serde_json::Value>,
}

struct Native {
    symbol: String,
    params: Params,
    definition: Option<DefinitionRecord>,
    runs: u64,
}

fn busy_wait(us: u64) {
    if us == 0 {
        return;
    }
    let until = Instant::now() + Duration::from_micros(us);
    while Instant::now() < until {
        std::hint::spin_loop();
    }
}

fn input(a: &TensorArchive, i: usize) -> Result<&Tensor, String> {
    a.iter().nth(i).map(|(_, t)| t).ok_or_else(|| format!("missing input #{i}"))
}

fn out_name(t: &RunTrailer, i: usize, default: &str) -> String {
    t.outputs.get(i).cloned().unwrap_or_else(|| default.to_string())
}

fn shifted(t: &Tensor, upto: usize, delta: f32) -> Tensor {
    let mut v = t.floats().expect("float tensor").to_vec();
    for x in v.iter_mut().take(upto) {
        *x += delta;
    }
    Tensor::from_f32(t.dtype(), t.shape().to_vec(), v).expect("same shape")
}

impl Native {
    fn gemm(&self, a: &TensorArchive) -> Result<Tensor, String> {
        ref_gemm(input(a, 0)?, input(a, 1)?).map_err(|e| e.to_string())
    }

    fn sample(&self, a: &TensorArchive, t: &RunTrailer, leak: f64) -> Result<TensorArchive, String> {
        let inputs: TensorMap = a.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let targets = sampling_targets(&inputs).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
        let mut out = Vec::with_capacity(targets.len());
        for row in &targets {
            let excluded = row.mask.iter().rposition(|&m| !m);
            let leak_now = leak > 0.0 && rng.random::<f64>() < leak;
            let tok = match (leak_now, excluded) {
                (true, Some(x)) => x,
                _ => sample_index(&row.q, rng.random()),
            };
            out.push(tok as i64);
        }
        let n = out.len();
        let samples = Tensor::from_i64(crate::tensor::DType::I64, vec![n], out).map_err(|e| e.to_string())?;
        Ok([(out_name(t, 0, "samples"), samples)].into_iter().collect())
    }
}

impl Kernel for Native {
    fn run(&mut self, a: TensorArchive, t: &RunTrailer) -> Result<TensorArchive, String> {
        self.runs += 1;
        busy_wait(self.params.delay_us);
        let single = |name: String, x: Tensor| -> TensorArchive { [(name, x)].into_iter().collect() };
        match self.symbol.as_str() {
            "identity" => Ok(a),
            "sleep" => {
                std::thread::sleep(Duration::from_millis(self.params.sleep_ms));
                Ok(a)
            }
            "reference" => {
                let d = self.definition.as_ref().ok_or("params.definition is required")?;
                let inputs: TensorMap = a.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
                let out = run_reference_seeded(d, &inputs, t.seed).map_err(|e| e.to_string())?;
                Ok(out.into_iter().collect())
            }
            "gemm" => Ok(single(out_name(t, 0, "C"), self.gemm(&a)?)),
            "gemm_offset" => {
                let c = self.gemm(&a)?;
                let n = c.numel();
                Ok(single(out_name(t, 0, "C"), shifted(&c, n, self.params.offset)))
            }
            "gemm_perturb" => {
                let c = self.gemm(&a)?;
                let k = (self.params.fraction * c.numel() as f64).round() as usize;
                Ok(single(out_name(t, 0, "C"), shifted(&c, k, self.params.delta)))
            }
            "counter" => {
                let c = self.gemm(&a)?;
                let n = c.numel();
                Ok(single(out_name(t, 0, "C"), shifted(&c, n, (self.runs - 1) as f32)))
            }
            "rmsnorm" => {
                let eps = input(&a, 3)?.item().ok_or("eps must be a scalar")? as f32;
                let (y, r) = ref_fused_add_rmsnorm(input(&a, 0)?, input(&a, 1)?, input(&a, 2)?, eps)
                    .map_err(|e| e.to_string())?;
                Ok([(out_name(t, 0, "y"), y), (out_name(t, 1, "new_residual"), r)]
                    .into_iter()
                    .collect())
            }
            "sampler" => self.sample(&a, t, 0.0),
            "sampler_leaky" => self.sample(&a, t, self.params.leak),
            "crash" => {
                if self.runs > self.params.after {
                    std::process::exit(3);
                }
                Ok(a)
            }
            "error" => Err("deliberate failure".into()),
            "garbage" => {
                let mut out = std::io::stdout().lock();
                let _ = out.write_all(b"\xff\xff\xff\xffnot a frame");
                let _ = out.flush();
                std::process::exit(0);
            }
            other => Err(format!("unknown symbol `{other}`")),
        }
    }
}

fn bind(h: &HostHello) -> Result<Box<dyn Kernel>, String> {
    if h.symbol == "fail_hello" {
        return Err("bootstrap refused".into());
    }
    const KNOWN: &[&str] = &[
        "identity", "reference", "gemm", "gemm_offset", "gemm_perturb", "rmsnorm", "sampler", "sampler_leaky",
        "sleep", "crash", "error", "garbage", "counter",
    ];
    if !KNOWN.contains(&h.symbol.as_str()) {
        return Err(format!("no native kernel named `{}`", h.symbol));
    }
    let text = std::fs::read_to_string(&h.file).map_err(|e| format!("reading {}: {e}", h.file))?;
    let params: Params = if text.trim().is_empty() {
        Params::default()
    } else {
        serde_json::from_str(&text).map_err(|e| format!("parameters in {}: {e}", h.file))?
    };
    let definition = match &params.definition {
        Some(v) => Some(parse_definition(&v.to_string()).map_err(|e| e.to_string())?),
        None => None,
    };
    Ok(Box::new(Native {
        symbol: h.symbol.clone(),
        params,
        definition,
        runs: 0,
    }))
}

/// Runs the native plugin on this process's standard streams.
pub fn main() -> i32 {
    let runtime = BTreeMap::from([("native-plugin".to_string(), crate::engine::VERSION.to_string())]);
    let stdin = std::io::stdin().lock();
    let stdout = std::io::BufWriter::new(std::io::stdout().lock());
    serve(stdin, stdout, runtime, bind)
}
