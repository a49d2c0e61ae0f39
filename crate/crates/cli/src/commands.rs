use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use koed::dataset::{generate_dataset, split_sizes, GenProfile};
use koed::dynamics::min_control_cost;
use koed::fixtures::{published_n5, published_n7};
use koed::json::{to_json_pretty, write_atomic};
use koed::mocu::{derive_seed, estimate_mocu_with, EstimateOptions};
use koed::oed::{mean_curve, run_oed_with, write_curve_csv, write_trace_csv, Evaluator, OedPolicy, OedSettings};
use koed::surrogate::{predict, predict_batch};
use koed::{Dataset, KuramotoInstance, UncertaintyClass, WeightBundle};

use crate::config::FileConfig;
use crate::manifest::{beside, Recorder};
use crate::{Cli, CliError, Command, Mode};

const DEFAULT_K: usize = 2048;

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let ctx = Context {
        file,
        seed,
        manifest: cli.manifest,
        config_path: cli.config,
    };
    match cli.command {
        Command::Xi { model, control_omega, out } => xi(&ctx, &model, control_omega, out),
        Command::Mocu {
            class,
            k,
            control_omega,
            keep_samples,
            out,
        } => mocu(&ctx, &class, k, control_omega, keep_samples, out),
        Command::GenData {
            profile,
            count,
            k,
            split,
            out,
        } => gen_data(&ctx, &profile, count, k, split, &out),
        Command::Oed {
            class,
            method,
            k,
            weights,
            trials,
            eval_k,
            eval_repeats,
            simulate_outcomes,
            out,
        } => {
            let o = &ctx.file.oed;
            let settings = OedSettings {
                trials: trials.or(o.trials).unwrap_or(10),
                truth_seed: derive_seed(seed, 0),
                eval_k: eval_k.or(o.eval_k).unwrap_or(DEFAULT_K),
                eval_repeats: eval_repeats.or(o.eval_repeats).unwrap_or(10),
                eval_seed: derive_seed(seed, 1),
                config: ctx.file.sim,
                simulate_outcomes: simulate_outcomes || o.simulate_outcomes.unwrap_or(false),
            };
            let k = k.or(o.k).unwrap_or(DEFAULT_K);
            oed(&ctx, &class, &method, k, weights.as_deref(), settings, &out)
        }
        Command::RankCheck {
            weights,
            data,
            mode,
            strict,
            out,
        } => rank_check(&ctx, &weights, &data, mode, strict, out),
        Command::EvalSurrogate { weights, data, out } => eval_surrogate(&ctx, &weights, &data, out),
    }
}

struct Context {
    file: FileConfig,
    seed: u64,
    manifest: Option<PathBuf>,
    config_path: Option<PathBuf>,
}

impl Context {
    fn recorder(&self, command: &'static str) -> Recorder {
        let mut r = Recorder::new(command);
        if let Some(p) = &self.config_path {
            r.input(p);
        }
        r
    }

    /// Prints `result`, writes it to `out` if given, and writes the manifest
    /// beside it (or to `--manifest`).
    fn emit(
        &self,
        result: &serde_json::Value,
        out: Option<PathBuf>,
        mut rec: Recorder,
        config: serde_json::Value,
    ) -> Result<(), CliError> {
        let text = to_json_pretty(result)?;
        println!("{text}");
        let manifest = match out {
            Some(path) => {
                write_atomic(&path, format!("{text}\n").as_bytes())?;
                rec.output(&path);
                Some(self.manifest.clone().unwrap_or_else(|| beside(&path)))
            }
            None => self.manifest.clone(),
        };
        if let Some(m) = manifest {
            rec.finish(config, &m)?;
        }
        Ok(())
    }
}

fn read_json<V: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<V, CliError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| koed::Error::Format(format!("{what} {}: {e}", path.display())).into())
}

fn load_class(spec: &str, rec: &mut Recorder) -> Result<UncertaintyClass, CliError> {
    match spec {
        "n5" => {
            rec.builtin_input("n5");
            Ok(published_n5())
        }
        "n7" => {
            rec.builtin_input("n7");
            Ok(published_n7())
        }
        path => {
            let path = Path::new(path);
            rec.input(path);
            read_json(path, "class")
        }
    }
}

fn load_dataset(path: &Path, rec: &mut Recorder) -> Result<Dataset, CliError> {
    rec.input(path);
    let file = std::fs::File::open(path)?;
    Ok(Dataset::read_jsonl(std::io::BufReader::new(file))?)
}

fn load_bundle(path: &Path, rec: &mut Recorder) -> Result<WeightBundle, CliError> {
    rec.input(path);
    Ok(WeightBundle::load(path)?)
}

fn xi(ctx: &Context, model: &Path, control_omega: Option<f64>, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut rec = ctx.recorder("xi");
    rec.input(model);
    let inst: KuramotoInstance = read_json(model, "model")?;
    let w = control_omega.unwrap_or_else(|| inst.mean_frequency());
    let sim = ctx.file.sim;
    let xi = min_control_cost(&inst, w, &sim)?;
    let result = json!({ "xi": xi, "control_omega": w, "bisect_tol": sim.bisect_tol });
    ctx.emit(&result, out, rec, json!({ "sim": sim, "control_omega": w }))
}

fn mocu(
    ctx: &Context,
    class: &str,
    k: Option<usize>,
    control_omega: Option<f64>,
    keep_samples: bool,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut rec = ctx.recorder("mocu");
    let class = load_class(class, &mut rec)?;
    let k = k.or(ctx.file.k).unwrap_or(DEFAULT_K);
    let w = control_omega.unwrap_or_else(|| class.mean_frequency());
    let sim = ctx.file.sim;
    rec.seed("seed", ctx.seed);
    let estimate = estimate_mocu_with(&class, k, w, &sim, ctx.seed, EstimateOptions { keep_samples })?;
    let result = serde_json::to_value(&estimate).map_err(koed::Error::from)?;
    ctx.emit(&result, out, rec, json!({ "sim": sim, "k": k, "control_omega": w }))
}

fn gen_data(
    ctx: &Context,
    profile: &str,
    count: Option<usize>,
    k: Option<usize>,
    split: Option<f64>,
    out: &Path,
) -> Result<(), CliError> {
    let mut rec = ctx.recorder("gen-data");
    let base = match profile {
        "custom" => ctx
            .file
            .profile
            .clone()
            .ok_or_else(|| CliError::Usage("`--profile custom` needs a `profile` object in --config".into()))?,
        name => GenProfile::named(name)
            .ok_or_else(|| CliError::Usage(format!("unknown profile `{name}` (use n5, n7 or custom)")))?,
    };
    if let Some(s) = split {
        if !(0.0..=1.0).contains(&s) {
            return Err(CliError::Usage(format!("--split must lie in [0, 1], got {s}")));
        }
    }
    let profile = GenProfile {
        count: count.unwrap_or(base.count),
        label_k: k.or(ctx.file.k).unwrap_or(base.label_k),
        seed: ctx.seed,
        ..base
    };
    rec.seed("seed", ctx.seed);
    let sim = ctx.file.sim;
    let data = generate_dataset(&profile, &sim)?;
    write_atomic(out, &data.to_jsonl()?)?;
    rec.output(out);

    let mut result = json!({
        "count": data.header.count,
        "failed": data.header.failed.len(),
        "mean": data.header.mean,
        "std": data.header.std,
        "std_substituted": data.header.std_substituted,
    });
    if let Some(fraction) = split {
        let (train, val) = data.split(fraction);
        let stem = out.with_extension("");
        for (part, samples) in [("train", train), ("val", val)] {
            let path = PathBuf::from(format!("{}.{part}.jsonl", stem.display()));
            let mut header = data.header.clone();
            header.count = samples.len();
            let piece = Dataset {
                header,
                samples: samples.to_vec(),
            };
            write_atomic(&path, &piece.to_jsonl()?)?;
            rec.output(&path);
        }
        let (t, v) = split_sizes(data.samples.len(), fraction);
        result["split"] = json!({ "train": t, "val": v });
    }
    println!("{}", to_json_pretty(&result)?);
    let manifest = ctx.manifest.clone().unwrap_or_else(|| beside(out));
    rec.finish(json!({ "profile": profile, "sim": sim, "split": split }), &manifest)?;
    Ok(())
}

fn oed(
    ctx: &Context,
    class: &str,
    methods: &[koed::oed::PolicyKind],
    k: usize,
    weights: Option<&Path>,
    settings: OedSettings<f64>,
    out: &Path,
) -> Result<(), CliError> {
    let mut rec = ctx.recorder("oed");
    let class = load_class(class, &mut rec)?;
    let bundle = weights
        .map(|p| load_bundle(p, &mut rec).map(Arc::new))
        .transpose()?;
    let policy_seed = derive_seed(ctx.seed, 2);
    rec.seed("seed", ctx.seed);
    rec.seed("truth", settings.truth_seed);
    rec.seed("eval", settings.eval_seed);
    rec.seed("policy", policy_seed);

    let policies = methods
        .iter()
        .map(|&m| OedPolicy::from_kind(m, k, policy_seed, bundle.clone()))
        .collect::<koed::Result<Vec<_>>>()?;
    std::fs::create_dir_all(out)?;
    let evaluator = Evaluator::new(&settings);
    let mut curves = Vec::new();
    for policy in &policies {
        let name = policy.kind().name();
        let started = Instant::now();
        let traces = run_oed_with(&class, policy, &settings, &evaluator)?;
        eprintln!("{name}: {} trials in {:.1} s", traces.len(), started.elapsed().as_secs_f64());
        let mut buf = Vec::new();
        write_trace_csv(&traces, &mut buf)?;
        let path = out.join(format!("trace_{name}.csv"));
        write_atomic(&path, &buf)?;
        rec.output(&path);
        curves.push((name.to_string(), mean_curve(&traces)));
    }
    let mut buf = Vec::new();
    write_curve_csv(&curves, &mut buf)?;
    let path = out.join("curves.csv");
    write_atomic(&path, &buf)?;
    rec.output(&path);

    let summary: serde_json::Map<_, _> = curves.iter().map(|(n, c)| (n.clone(), json!(c))).collect();
    println!("{}", to_json_pretty(&summary)?);
    let config = json!({
        "methods": methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "k": k,
        "trials": settings.trials,
        "eval_k": settings.eval_k,
        "eval_repeats": settings.eval_repeats,
        "simulate_outcomes": settings.simulate_outcomes,
        "sim": settings.config,
    });
    let manifest = ctx.manifest.clone().unwrap_or_else(|| out.join("manifest.json"));
    rec.finish(config, &manifest)?;
    Ok(())
}

fn rank_check(
    ctx: &Context,
    weights: &Path,
    data: &Path,
    mode: Mode,
    strict: bool,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut rec = ctx.recorder("rank-check");
    let bundle = load_bundle(weights, &mut rec)?;
    let data = load_dataset(data, &mut rec)?;
    // (successes, trials) per sample
    let counts: Vec<(usize, usize)> = data
        .samples
        .par_iter()
        .map(|s| {
            let c = &s.class;
            let before = predict(&bundle, c);
            let mut hits = 0;
            let mut total = 0;
            for k in 0..c.pair_count() {
                let (lo, hi) = c.bounds(k);
                if hi <= lo {
                    continue;
                }
                let mid = (lo + hi) / 2.0;
                let tightened = match mode {
                    Mode::Lower => c.with_bounds(k, mid, hi),
                    Mode::Upper => c.with_bounds(k, lo, mid),
                }
                .expect("midpoint lies inside the interval");
                let after = predict(&bundle, &tightened);
                total += 1;
                if after < before || (!strict && after == before) {
                    hits += 1;
                }
            }
            (hits, total)
        })
        .collect();
    let hits: usize = counts.iter().map(|c| c.0).sum();
    let total: usize = counts.iter().map(|c| c.1).sum();
    let rate = if total == 0 { 1.0 } else { hits as f64 / total as f64 };
    let result = json!({ "mode": mode, "strict": strict, "tightenings": total, "successes": hits, "rate": rate });
    ctx.emit(&result, out, rec, json!({ "mode": mode, "strict": strict }))
}

fn eval_surrogate(ctx: &Context, weights: &Path, data: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut rec = ctx.recorder("eval-surrogate");
    let bundle = load_bundle(weights, &mut rec)?;
    let data = load_dataset(data, &mut rec)?;
    if data.samples.is_empty() {
        return Err(koed::Error::Format("dataset has no samples".into()).into());
    }
    let classes: Vec<UncertaintyClass> = data.samples.iter().map(|s| s.class.clone()).collect();
    let started = Instant::now();
    let predictions = predict_batch(&bundle, &classes);
    let seconds = started.elapsed().as_secs_f64();
    let n = predictions.len() as f64;
    let mse_raw = predictions
        .iter()
        .zip(&data.samples)
        .map(|(p, s)| (p - s.mocu_label).powi(2))
        .sum::<f64>()
        / n;
    let std = bundle.meta().label_std;
    let per_1000 = seconds / n * 1000.0;
    eprintln!("{per_1000:.4} s per 1000 predictions");
    let result = json!({
        "count": predictions.len(),
        "mse_raw": mse_raw,
        "mse_normalized": mse_raw / (std * std),
        "seconds_per_1000": per_1000,
    });
    ctx.emit(&result, out, rec, json!({}))
}
