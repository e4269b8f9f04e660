//! `collect`, `train` and `eval`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use abco::dataset::{self, InteractionSet, Trajectory};
use abco::envs::EnvId;
use abco::experts;
use abco::seeds::stream;
use abco::training::{
    abco_alpha, evaluate, Actor, Baseline, IterationOutcome, IterationReport, LabelSource, RunConfig,
};
use serde_json::{json, Value};

use crate::args::{required, CollectArgs, EvalArgs, Labels, Switch, TrainArgs};
use crate::artifacts::{create_dir, fmt_f64, parent_dir, Checkpoint, Manifest, PolicyKind, Status};
use crate::{CliError, CliResult};

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config serializes")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

/// Manifest path written next to a dataset file.
pub fn dataset_manifest_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

/// Writes the requested dataset and its manifest.
pub fn collect_run(args: &CollectArgs) -> CliResult<Manifest> {
    let env = required(args.env, "env")?;
    let seed = args.seed.unwrap_or(0);
    let out = required(args.out.clone(), "out")?;
    let with_actions = args.with_actions.unwrap_or(false);
    let dir = parent_dir(&out);
    create_dir(&dir)?;
    let start = Instant::now();
    let (kind, count) = match (args.pre, args.expert) {
        (Some(n), None) => {
            if with_actions {
                return Err(CliError::Usage("--with-actions applies to --expert only".into()));
            }
            let set = experts::collect_pre_demos(env, n, seed)?;
            dataset::save(&set, &out)?;
            ("pre", set.len())
        }
        (None, Some(n)) => {
            let demos = if with_actions {
                experts::collect_labelled_expert_demos(env, n, seed)?
            } else {
                experts::collect_expert_demos(env, n, seed)?
            };
            dataset::save_demos(env, &demos, &out)?;
            ("expert", demos.len())
        }
        _ => return Err(CliError::Usage("exactly one of --pre N or --expert N is required".into())),
    };
    let mut m = Manifest::new(
        "collect",
        to_value(args),
        json!({ "master": seed, "streams": collect_streams(kind) }),
    );
    Manifest::record(&mut m.outputs, &dir, &out)?;
    m.status = Status::Complete;
    m.timings = json!({ "total_seconds": start.elapsed().as_secs_f64() });
    m.results = json!({ "kind": kind, "env": env, "count": count, "with_actions": with_actions });
    m.save(&dataset_manifest_path(&out))?;
    Ok(m)
}

fn collect_streams(kind: &str) -> Value {
    if kind == "pre" {
        json!({ "pre_demos": stream::PRE_DEMOS })
    } else {
        json!({ "expert_episodes": stream::EXPERT_EPISODES, "expert_ties": stream::EXPERT_TIES })
    }
}

pub fn collect(args: CollectArgs, out: &mut dyn Write) -> CliResult<()> {
    let m = collect_run(&args)?;
    writeln!(
        out,
        "wrote {} {} records to {}",
        m.results["count"],
        m.results["kind"].as_str().unwrap_or_default(),
        m.outputs[0].path
    )
    .map_err(io_err(Path::new("<stdout>")))
}

/// Resolves the effective run configuration from flags and the datasets.
pub fn run_config(args: &TrainArgs, pre: &InteractionSet, demos: &[Trajectory]) -> CliResult<RunConfig> {
    let env = required(args.env, "env")?;
    if pre.env != env {
        return Err(CliError::Validation(format!(
            "pre-demonstrations are for {} but --env is {env}",
            pre.env
        )));
    }
    if let Some(d) = demos.iter().find(|d| d.env != env) {
        return Err(CliError::Validation(format!(
            "demonstrations are for {} but --env is {env}",
            d.env
        )));
    }
    let mut c = RunConfig::for_env(env);
    if let Some(a) = args.alpha {
        c.alpha = a;
    }
    if let Some(a) = args.attention {
        c.attention = a == Switch::On;
    }
    if let Some(s) = args.sampling {
        c.sampling = s;
    }
    if let Some(l) = args.labels {
        c.labels = match l {
            Labels::Idm => LabelSource::Idm,
            Labels::Expert => LabelSource::GroundTruth,
        };
    }
    c.seed = args.seed.unwrap_or(0);
    c.n_pre = pre.len();
    c.n_demos = demos.len();
    if let Some(v) = args.rollouts {
        c.rollouts = v;
    }
    if let Some(v) = args.eval_episodes {
        c.eval_episodes = v;
    }
    if let Some(v) = args.hidden {
        c.hidden = v;
    }
    if let Some(v) = args.idm_epochs {
        c.idm_fit.epochs = v;
    }
    if let Some(v) = args.policy_epochs {
        c.policy_fit.epochs = v;
    }
    for fit in [&mut c.idm_fit, &mut c.policy_fit] {
        if let Some(v) = args.batch_size {
            fit.batch_size = v;
        }
        if let Some(v) = args.learning_rate {
            fit.adam.learning_rate = v;
        }
    }
    c.validate()?;
    Ok(c)
}

fn csv_header(k: usize) -> String {
    let mut h = String::from(
        "iteration,idm_validation_accuracy,idm_degenerate,win_probability,aer,performance,successes,idm_set_size,idm_post_fraction",
    );
    for a in 0..k {
        h.push_str(&format!(",pred_{a}"));
    }
    h
}

fn csv_row(r: &IterationReport) -> String {
    let mut row = format!(
        "{},{},{},{},{},{},{},{},{}",
        r.iteration,
        r.idm_validation_accuracy.map(fmt_f64).unwrap_or_default(),
        r.idm_degenerate,
        fmt_f64(r.win_probability),
        fmt_f64(r.aer),
        fmt_f64(r.performance),
        r.successes,
        r.idm_set_size,
        fmt_f64(r.idm_post_fraction),
    );
    for p in &r.action_prediction_histogram.probs {
        row.push(',');
        row.push_str(&fmt_f64(*p));
    }
    row
}

fn checkpoint_name(iteration: usize) -> String {
    format!("checkpoints/iteration-{iteration:03}.json")
}

struct TrainSink {
    dir: PathBuf,
    manifest_path: PathBuf,
    manifest: Manifest,
    csv: BufWriter<File>,
    events: BufWriter<File>,
    env: EnvId,
    clock: Instant,
    iteration_seconds: Vec<f64>,
    setup_seconds: f64,
}

impl TrainSink {
    fn event(&mut self, v: Value) -> CliResult<()> {
        let path = self.dir.join("events.jsonl");
        writeln!(self.events, "{v}").map_err(io_err(&path))?;
        self.events.flush().map_err(io_err(&path))
    }

    fn timings(&self) -> Value {
        json!({
            "setup_seconds": self.setup_seconds,
            "iteration_seconds": self.iteration_seconds,
            "total_seconds": self.setup_seconds + self.iteration_seconds.iter().sum::<f64>(),
        })
    }

    fn record_outputs(&mut self) -> CliResult<()> {
        for name in ["iterations.csv", "events.jsonl"] {
            Manifest::record(&mut self.manifest.outputs, &self.dir, &self.dir.join(name))?;
        }
        Ok(())
    }

    fn iteration(&mut self, o: IterationOutcome) -> CliResult<()> {
        let r = o.report;
        let csv_path = self.dir.join("iterations.csv");
        writeln!(self.csv, "{}", csv_row(r)).map_err(io_err(&csv_path))?;
        self.csv.flush().map_err(io_err(&csv_path))?;
        if r.idm_degenerate {
            self.event(json!({
                "event": "warning",
                "iteration": r.iteration,
                "message": "IDM training labels are all one action; its predictions carry no information",
            }))?;
        }
        self.event(json!({ "event": "iteration", "report": r }))?;
        let ck = self.dir.join(checkpoint_name(r.iteration));
        let idm = (r.idm_validation_accuracy.is_some()).then_some(&o.idm.net);
        Checkpoint::learned(self.env, r.iteration, &o.policy.net, idm).save(&ck)?;
        Manifest::record(&mut self.manifest.outputs, &self.dir, &ck)?;
        self.record_outputs()?;
        self.iteration_seconds.push(self.clock.elapsed().as_secs_f64());
        self.clock = Instant::now();
        self.manifest.last_completed_iteration = Some(r.iteration);
        self.manifest.timings = self.timings();
        let reports = self.manifest.results["reports"].as_array_mut().expect("reports array");
        reports.push(to_value(r));
        self.manifest.save(&self.manifest_path)
    }
}

/// Runs training into `args.out` and returns the final manifest. The
/// manifest is rewritten after every iteration, so an interrupted run
/// leaves a valid manifest naming its last completed iteration.
pub fn train_run(args: &TrainArgs, log: &mut dyn Write) -> CliResult<Manifest> {
    let start = Instant::now();
    let pre_path = required(args.pre.clone(), "pre")?;
    let demos_path = required(args.demos.clone(), "demos")?;
    let dir = required(args.out.clone(), "out")?;
    let pre = dataset::load(&pre_path)?;
    let (demo_env, demos) = dataset::load_demos(&demos_path)?;
    if let Some(env) = args.env {
        if demo_env != env {
            return Err(CliError::Validation(format!(
                "demonstrations file is for {demo_env} but --env is {env}"
            )));
        }
    }
    let config = run_config(args, &pre, &demos)?;
    create_dir(&dir.join("checkpoints"))?;
    // stale checkpoints from a longer earlier run would be unreferenced
    for e in fs::read_dir(dir.join("checkpoints")).map_err(io_err(&dir))?.flatten() {
        fs::remove_file(e.path()).map_err(io_err(&e.path()))?;
    }
    let baseline = Baseline::measure(config.env, config.eval_episodes, config.seed)?;

    let mut manifest = Manifest::new(
        "train",
        json!({ "flags": to_value(args), "run": to_value(&config) }),
        json!({
            "master": config.seed,
            "streams": {
                "idm_init": stream::IDM_INIT, "policy_init": stream::POLICY_INIT,
                "train_shuffle": stream::TRAIN_SHUFFLE, "rollouts": stream::ROLLOUTS,
                "sampling": stream::SAMPLING, "eval": stream::EVAL, "split": stream::SPLIT,
            },
        }),
    );
    Manifest::record(&mut manifest.inputs, &dir, &pre_path)?;
    Manifest::record(&mut manifest.inputs, &dir, &demos_path)?;
    manifest.results = json!({ "baseline": baseline, "reports": [] });

    let csv_path = dir.join("iterations.csv");
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(io_err(&csv_path))?);
    writeln!(csv, "{}", csv_header(config.env.action_count())).map_err(io_err(&csv_path))?;
    csv.flush().map_err(io_err(&csv_path))?;
    let events_path = dir.join("events.jsonl");
    let events = BufWriter::new(File::create(&events_path).map_err(io_err(&events_path))?);
    let mut sink = TrainSink {
        manifest_path: dir.join("manifest.json"),
        dir: dir.clone(),
        manifest,
        csv,
        events,
        env: config.env,
        clock: Instant::now(),
        iteration_seconds: Vec::new(),
        setup_seconds: start.elapsed().as_secs_f64(),
    };
    sink.event(json!({ "event": "start", "config": to_value(&config), "baseline": baseline }))?;
    sink.record_outputs()?;
    sink.manifest.timings = sink.timings();
    sink.manifest.save(&sink.manifest_path)?;

    let mut failure = None;
    let result = abco_alpha(&config, &pre, &demos, baseline, &mut |o| {
        let line = format!(
            "iteration {} aer={} performance={} successes={}",
            o.report.iteration, o.report.aer, o.report.performance, o.report.successes
        );
        if let Err(e) = sink.iteration(o) {
            let msg = e.to_string();
            failure = Some(e);
            return Err(abco::Error::Contract(msg));
        }
        let _ = writeln!(log, "{line}");
        Ok(())
    });
    if let Err(e) = result {
        let err = failure.unwrap_or_else(|| e.into());
        sink.manifest.status = Status::Failed;
        sink.manifest.error = Some(err.to_string());
        let _ = sink.manifest.save(&sink.manifest_path);
        return Err(err);
    }
    sink.event(json!({ "event": "complete", "iterations": config.alpha + 1 }))?;
    sink.record_outputs()?;
    sink.manifest.status = Status::Complete;
    sink.manifest.timings = sink.timings();
    sink.manifest.save(&sink.manifest_path)?;
    Ok(sink.manifest)
}

pub fn train(args: TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let m = train_run(&args, out)?;
    let dir = args.out.unwrap_or_default();
    writeln!(out, "wrote {}", dir.join("manifest.json").display()).map_err(io_err(&dir))?;
    debug_assert_eq!(m.status, Status::Complete);
    Ok(())
}

/// Evaluation result of one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub aer: f64,
    pub performance: f64,
    pub successes: usize,
    pub baseline: Baseline,
}

pub fn evaluate_checkpoint(ck: &Checkpoint, episodes: usize, seed: u64) -> CliResult<EvalResult> {
    if episodes == 0 {
        return Err(CliError::Validation("--episodes must be positive".into()));
    }
    let env = ck.body.env;
    let baseline = Baseline::measure(env, episodes, seed)?;
    let (aer, successes) = match ck.body.kind {
        PolicyKind::Expert => experts::expert_aer(env, episodes, seed)?,
        PolicyKind::Random => evaluate(Actor::Random, env, episodes, seed)?,
        PolicyKind::Learned => {
            let net = ck.body.policy.as_ref().expect("validated on load");
            evaluate(Actor::Greedy(net), env, episodes, seed)?
        }
    };
    Ok(EvalResult {
        aer,
        performance: baseline.performance(aer)?,
        successes,
        baseline,
    })
}

pub fn eval(args: EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let start = Instant::now();
    let spec = required(args.checkpoint.clone(), "checkpoint")?;
    let episodes = args.episodes.unwrap_or(100);
    let seed = args.seed.unwrap_or(0);
    let (ck, file) = match Checkpoint::parse_sentinel(&spec)? {
        Some(c) => (c, None),
        None => (Checkpoint::load(Path::new(&spec))?, Some(PathBuf::from(&spec))),
    };
    let r = evaluate_checkpoint(&ck, episodes, seed)?;
    let json_path = match (&args.out, &file) {
        (Some(p), _) => p.clone(),
        (None, Some(f)) => PathBuf::from(format!("{}.eval.json", f.display())),
        (None, None) => PathBuf::from(format!("{}-{}.eval.json", format!("{:?}", ck.body.kind).to_lowercase(), ck.body.env)),
    };
    let dir = parent_dir(&json_path);
    create_dir(&dir)?;
    let mut m = Manifest::new(
        "eval",
        json!({ "checkpoint": spec, "episodes": episodes, "seed": seed }),
        json!({ "master": seed, "streams": { "eval": stream::EVAL, "expert_ties": stream::EXPERT_TIES } }),
    );
    if let Some(f) = &file {
        Manifest::record(&mut m.inputs, &dir, f)?;
    }
    m.status = Status::Complete;
    m.timings = json!({ "total_seconds": start.elapsed().as_secs_f64() });
    m.results = json!({
        "env": ck.body.env,
        "kind": ck.body.kind,
        "aer": r.aer,
        "performance": r.performance,
        "successes": r.successes,
        "episodes": episodes,
        "baseline": r.baseline,
    });
    // the result file is its own manifest
    m.save(&json_path)?;
    writeln!(out, "aer={} performance={}", r.aer, r.performance).map_err(io_err(&json_path))
}
