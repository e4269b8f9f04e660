//! `table`: gathers finished runs into the results tables, training any
//! missing run when asked to.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use abco::envs::EnvId;
use abco::training::{IterationReport, RunConfig, SamplingMode};
use serde_json::json;

use crate::args::{required, CollectArgs, Labels, Suite, Switch, TableArgs, TrainArgs};
use crate::artifacts::{create_dir, fmt_f64, write_atomic, Manifest, Status};
use crate::commands::{collect_run, dataset_manifest_path, train_run};
use crate::{CliError, CliResult};

/// One row of a results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Method {
    /// Prefix of the run id.
    pub id: &'static str,
    pub label: &'static str,
    pub attention: bool,
    pub sampling: SamplingMode,
    /// Behavioral cloning from expert actions, single iteration.
    pub cloning: bool,
}

const fn method(id: &'static str, label: &'static str, attention: bool, sampling: SamplingMode) -> Method {
    Method {
        id,
        label,
        attention,
        sampling,
        cloning: false,
    }
}

pub const BC: Method = Method {
    cloning: true,
    ..method("bc", "BC", false, SamplingMode::None)
};
pub const BCO: Method = method("bco", "BCO", false, SamplingMode::None);
pub const ABCO: Method = method("abco", "ABCO", true, SamplingMode::Partial);

pub const MAIN_METHODS: [Method; 3] = [BC, BCO, ABCO];

pub const ABLATION_METHODS: [Method; 6] = [
    BCO,
    method("attention", "Attention", true, SamplingMode::None),
    method("partial", "Partial Sampling", false, SamplingMode::Partial),
    method("whole", "Whole Sampling", false, SamplingMode::Whole),
    method("abco", "ABCO-partial", true, SamplingMode::Partial),
    method("abco_whole", "ABCO-whole", true, SamplingMode::Whole),
];

pub const ABLATION_ENV: EnvId = EnvId::Maze(5);

pub fn run_id(m: &Method, env: EnvId, seed: u64) -> String {
    format!("{}-{env}-s{seed}", m.id)
}

/// A completed run as recorded in its manifest.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub id: String,
    pub method: Method,
    pub env: EnvId,
    pub seed: u64,
    pub reports: Vec<IterationReport>,
    pub manifest_path: PathBuf,
}

impl RunResult {
    pub fn last(&self) -> &IterationReport {
        self.reports.last().expect("complete runs have reports")
    }
}

/// Reads a run's manifest; `None` if it is absent or unfinished.
pub fn read_run(runs: &Path, m: &Method, env: EnvId, seed: u64) -> CliResult<Option<RunResult>> {
    let id = run_id(m, env, seed);
    let path = runs.join(&id).join("manifest.json");
    if !path.exists() {
        return Ok(None);
    }
    let manifest = Manifest::load(&path)?;
    if manifest.status != Status::Complete {
        return Ok(None);
    }
    let reports: Vec<IterationReport> = serde_json::from_value(manifest.results["reports"].clone())
        .map_err(|e| CliError::Validation(format!("manifest {}: {e}", path.display())))?;
    if reports.is_empty() {
        return Ok(None);
    }
    Ok(Some(RunResult {
        id,
        method: *m,
        env,
        seed,
        reports,
        manifest_path: path,
    }))
}

fn ensure_dataset(args: CollectArgs, log: &mut dyn Write) -> CliResult<PathBuf> {
    let out = args.out.clone().expect("dataset path set");
    let done = Manifest::load(&dataset_manifest_path(&out))
        .map(|m| m.status == Status::Complete && out.exists())
        .unwrap_or(false);
    if !done {
        let _ = writeln!(log, "collecting {}", out.display());
        collect_run(&args)?;
    }
    Ok(out)
}

fn train_missing(args: &TableArgs, runs: &Path, m: &Method, env: EnvId, seed: u64, log: &mut dyn Write) -> CliResult<()> {
    let defaults = RunConfig::for_env(env);
    let data = runs.join("data");
    create_dir(&data)?;
    let pre = ensure_dataset(
        CollectArgs {
            env: Some(env),
            pre: Some(args.n_pre.unwrap_or(defaults.n_pre)),
            seed: Some(seed),
            out: Some(data.join(format!("{env}-s{seed}-pre.jsonl"))),
            ..CollectArgs::default()
        },
        log,
    )?;
    let suffix = if m.cloning { "demos-labelled" } else { "demos" };
    let demos = ensure_dataset(
        CollectArgs {
            env: Some(env),
            expert: Some(args.n_demos.unwrap_or(defaults.n_demos)),
            with_actions: Some(m.cloning),
            seed: Some(seed),
            out: Some(data.join(format!("{env}-s{seed}-{suffix}.jsonl"))),
            ..CollectArgs::default()
        },
        log,
    )?;
    let id = run_id(m, env, seed);
    let _ = writeln!(log, "training {id}");
    let train = TrainArgs {
        env: Some(env),
        alpha: Some(if m.cloning { 0 } else { args.alpha.unwrap_or(defaults.alpha) }),
        attention: Some(if m.attention { Switch::On } else { Switch::Off }),
        sampling: Some(m.sampling),
        labels: Some(if m.cloning { Labels::Expert } else { Labels::Idm }),
        seed: Some(seed),
        pre: Some(pre),
        demos: Some(demos),
        out: Some(runs.join(&id)),
        idm_epochs: args.idm_epochs,
        policy_epochs: args.policy_epochs,
        rollouts: args.rollouts,
        eval_episodes: args.eval_episodes,
        ..TrainArgs::default()
    };
    train_run(&train, log)?;
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Writes `<suite>.csv`, `<suite>-distribution.csv` and
/// `<suite>.manifest.json` under `args.out`.
pub fn table(args: TableArgs, log: &mut dyn Write) -> CliResult<()> {
    let start = Instant::now();
    let suite = required(args.suite, "suite")?;
    let out = required(args.out.clone(), "out")?;
    let runs = args.runs.clone().unwrap_or_else(|| out.join("runs"));
    let seeds = args.seeds.clone().unwrap_or_else(|| vec![0, 1, 2]);
    if seeds.is_empty() {
        return Err(CliError::Usage("--seeds must name at least one seed".into()));
    }
    let (methods, envs): (&[Method], Vec<EnvId>) = match suite {
        Suite::Main => (&MAIN_METHODS, args.envs.clone().unwrap_or_else(|| EnvId::ALL.to_vec())),
        Suite::Ablation => {
            if args.envs.as_ref().is_some_and(|e| e != &[ABLATION_ENV]) {
                return Err(CliError::Usage(format!("the ablation suite runs on {ABLATION_ENV} only")));
            }
            (&ABLATION_METHODS, vec![ABLATION_ENV])
        }
    };

    let mut results = Vec::new();
    let mut missing = Vec::new();
    for m in methods {
        for &env in &envs {
            for &seed in &seeds {
                let mut r = read_run(&runs, m, env, seed)?;
                if r.is_none() && args.run_missing.unwrap_or(false) {
                    train_missing(&args, &runs, m, env, seed, log)?;
                    r = read_run(&runs, m, env, seed)?;
                }
                match r {
                    Some(r) => results.push(r),
                    None => missing.push(run_id(m, env, seed)),
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Validation(format!(
            "missing runs (use --run-missing to train them): {}",
            missing.join(", ")
        )));
    }

    create_dir(&out)?;
    let name = match suite {
        Suite::Main => "main",
        Suite::Ablation => "ablation",
    };
    let cell = |m: &Method, env: EnvId| -> Option<(f64, f64)> {
        let rs: Vec<&RunResult> = results.iter().filter(|r| r.method.id == m.id && r.env == env).collect();
        (!rs.is_empty()).then(|| {
            (
                mean(rs.iter().map(|r| r.last().performance)),
                mean(rs.iter().map(|r| r.last().aer)),
            )
        })
    };
    let mut csv = String::new();
    match suite {
        Suite::Main => {
            csv.push_str("model,metric");
            for env in EnvId::ALL {
                csv.push_str(&format!(",{env}"));
            }
            csv.push('\n');
            for m in methods {
                for (metric, pick) in [("P", 0), ("AER", 1)] {
                    csv.push_str(&format!("{},{metric}", m.label));
                    for env in EnvId::ALL {
                        let v = cell(m, env).map(|c| fmt_f64(if pick == 0 { c.0 } else { c.1 }));
                        csv.push_str(&format!(",{}", v.unwrap_or_default()));
                    }
                    csv.push('\n');
                }
            }
        }
        Suite::Ablation => {
            csv.push_str("model,P,AER\n");
            for m in methods {
                let (p, aer) = cell(m, ABLATION_ENV).expect("all runs present");
                csv.push_str(&format!("{},{},{}\n", m.label, fmt_f64(p), fmt_f64(aer)));
            }
        }
    }
    let mut dist = String::from("run,model,env,seed,iteration,action,frequency\n");
    for r in &results {
        for rep in &r.reports {
            for (a, p) in rep.action_prediction_histogram.probs.iter().enumerate() {
                dist.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.id,
                    r.method.label,
                    r.env,
                    r.seed,
                    rep.iteration,
                    r.env.action_names()[a],
                    fmt_f64(*p)
                ));
            }
        }
    }
    let csv_path = out.join(format!("{name}.csv"));
    let dist_path = out.join(format!("{name}-distribution.csv"));
    write_atomic(&csv_path, csv.as_bytes())?;
    write_atomic(&dist_path, dist.as_bytes())?;

    let mut manifest = Manifest::new(
        "table",
        serde_json::to_value(&args).expect("config serializes"),
        json!({ "seeds": seeds }),
    );
    for r in &results {
        Manifest::record(&mut manifest.inputs, &out, &r.manifest_path)?;
    }
    Manifest::record(&mut manifest.outputs, &out, &csv_path)?;
    Manifest::record(&mut manifest.outputs, &out, &dist_path)?;
    manifest.status = Status::Complete;
    manifest.timings = json!({ "total_seconds": start.elapsed().as_secs_f64() });
    manifest.results = json!({ "runs": results.iter().map(|r| r.id.clone()).collect::<Vec<_>>() });
    manifest.save(&out.join(format!("{name}.manifest.json")))?;
    writeln!(log, "wrote {}", csv_path.display()).map_err(|e| CliError::io(&csv_path, e))
}
