use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mixverify_core::backend::{
    dual_generate, Backend, HttpClient, MockBackend, RemoteBackend, RemoteConfig, RemoteTextModel, ScriptedTextModel,
    TextModel,
};
use mixverify_core::curation::{load_records, run_pipeline, write_jsonl};
use mixverify_core::eval::{
    alpha_sweep, emit_report, emit_sweep, load_benchmark, render_summary, render_sweep, run_eval, AlphaGrid,
    BenchmarkInstance, EvalConfig, Strategy, TraceCache,
};
use mixverify_core::selfverify::{self_verify, AuditRecord, ChoiceOption, ScoredResponse};
use mixverify_core::tensor::GradCheckReport;
use mixverify_core::trainer::{run_stage1, stage1_gradcheck, synth_batch, task_for, TrainConfig};
use mixverify_core::gatemixer::GateMixerParams;
use mixverify_core::{Error, Result};

use crate::args::{
    BackendArgs, Cli, Command, CurateArgs, EvalArgs, GradcheckArgs, SweepArgs, TrainArgs, VerifyArgs,
};
use crate::config::{BackendSpec, CliConfig};

pub fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        1
    } else {
        2
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = CliConfig::load(cli.config.as_deref())?;
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    match cli.command {
        Command::Gradcheck(a) => gradcheck(cfg, a),
        Command::TrainAlign(a) => train(cfg, a),
        Command::Verify(a) => verify(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Sweep(a) => sweep(cfg, a),
        Command::Curate(a) => curate(cfg, a),
    }
}

fn out_dir(cfg: &CliConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

fn apply_backend_args(cfg: &mut CliConfig, a: &BackendArgs) {
    if let Some(b) = &a.backend {
        cfg.backend = Some(b.clone());
    }
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
}

fn open_backend(cfg: &CliConfig) -> Result<Box<dyn Backend>> {
    Ok(match cfg.backend_spec()? {
        BackendSpec::Mock(path) => Box::new(MockBackend::from_file(&path)?),
        BackendSpec::Remote(url) => Box::new(RemoteBackend::new(remote_client(cfg, url)?)),
    })
}

fn remote_client(cfg: &CliConfig, endpoint: String) -> Result<HttpClient> {
    HttpClient::from_env(RemoteConfig {
        endpoint,
        ..cfg.remote.clone()
    })
}

#[derive(Serialize)]
struct GradcheckOutput {
    eps: f64,
    tolerance: f64,
    batch_size: usize,
    max_rel_err: f64,
    passed: bool,
    seeds: Vec<SeedCheck>,
}

#[derive(Serialize)]
struct SeedCheck {
    seed: u64,
    #[serde(flatten)]
    report: GradCheckReport,
}

fn gradcheck(mut cfg: CliConfig, a: GradcheckArgs) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.eps {
        t.gradcheck_eps = v;
    }
    if let Some(v) = a.tol {
        t.gradcheck_tol = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    cfg.validate()?;
    cfg.train.validate()?;
    if a.seeds == 0 {
        return Err(Error::Config("--seeds must be >= 1".into()));
    }
    let mut seeds = Vec::new();
    let mut worst: f64 = 0.0;
    for seed in cfg.train.seed..cfg.train.seed + a.seeds {
        let tc = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let task = task_for(&tc)?;
        let params = GateMixerParams::init(&tc.connector, seed)?;
        let batch = synth_batch(&task, seed, tc.batch_size)?;
        let report = stage1_gradcheck(&task, &batch, &params, &tc)?;
        println!(
            "seed {seed}: max rel err {:.3e} over {} coordinates",
            report.max_rel_err, report.n_coords
        );
        worst = worst.max(report.max_rel_err);
        seeds.push(SeedCheck { seed, report });
    }
    let passed = worst <= cfg.train.gradcheck_tol;
    let out = GradcheckOutput {
        eps: cfg.train.gradcheck_eps,
        tolerance: cfg.train.gradcheck_tol,
        batch_size: cfg.train.batch_size,
        max_rel_err: worst,
        passed,
        seeds,
    };
    write_json(&out_dir(&cfg)?.join("gradcheck.json"), &out)?;
    println!("max rel err {worst:.3e} (tolerance {:.1e})", cfg.train.gradcheck_tol);
    if passed {
        Ok(())
    } else {
        Err(Error::GradCheck {
            max_rel_err: worst,
            tolerance: cfg.train.gradcheck_tol,
        })
    }
}

fn train(mut cfg: CliConfig, a: TrainArgs) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(v) = a.steps {
        t.steps = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.lambda {
        t.lambda = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    cfg.validate()?;
    let run = run_stage1(&cfg.train)?;
    let dir = out_dir(&cfg)?;
    write_json(&dir.join("training_report.json"), &run.report)?;
    run.params.save(&dir.join("gatemixer.ckpt"))?;
    let r = &run.report;
    println!("steps          {}", r.steps);
    println!("initial loss   {:.6}", r.initial_loss);
    println!("final loss     {:.6}", r.final_loss);
    println!("reduction      {:.2}%", 100.0 * r.reduction());
    println!("gradcheck      {:.3e}", r.gradcheck_max_rel_err);
    println!("wall time      {:.2}s", r.wall_time_secs);
    Ok(())
}

fn parse_option(s: &str) -> Result<ChoiceOption> {
    match s.split_once('=') {
        Some((l, t)) if !l.trim().is_empty() => Ok(ChoiceOption::new(l.trim(), t.trim())),
        _ => Err(Error::Config(format!("option must be LETTER=text, got {s:?}"))),
    }
}

fn verify(mut cfg: CliConfig, a: VerifyArgs) -> Result<()> {
    apply_backend_args(&mut cfg, &a.backend);
    cfg.validate()?;
    let options = a.options.iter().map(|s| parse_option(s)).collect::<Result<Vec<_>>>()?;
    let backend = open_backend(&cfg)?;
    let (d, c) = dual_generate(&backend, &a.image, &a.question, &options, &cfg.inference)?;
    let direct = ScoredResponse::score(d, &options, cfg.alpha)?;
    let cot = ScoredResponse::score(c, &options, cfg.alpha)?;
    let decision = self_verify(&direct, &cot, cfg.alpha)?;
    let audit = AuditRecord::from(&decision);
    write_json(&out_dir(&cfg)?.join("verify.json"), &audit)?;
    println!("answer  {}", decision.final_answer);
    println!("branch  {}", decision.branch.as_str());
    println!("direct  answer={} S={:.4} C={:.4} SC={:.4}", direct.answer, audit.direct.s, audit.direct.c, audit.direct.sc);
    println!("cot     answer={} S={:.4} C={:.4} SC={:.4}", cot.answer, audit.cot.s, audit.cot.c, audit.cot.sc);
    Ok(())
}

fn load(path: &Path) -> Result<Vec<BenchmarkInstance>> {
    let b = load_benchmark(path)?;
    if !b.rejected.is_empty() {
        eprintln!("{} malformed line(s) skipped in {}", b.rejected.len(), path.display());
        for r in &b.rejected {
            eprintln!("  {r}");
        }
    }
    Ok(b.instances)
}

fn cache(dir: Option<&PathBuf>) -> Result<TraceCache> {
    match dir {
        Some(d) => TraceCache::with_dir(d),
        None => Ok(TraceCache::in_memory()),
    }
}

fn eval(mut cfg: CliConfig, a: EvalArgs) -> Result<()> {
    apply_backend_args(&mut cfg, &a.backend);
    if let Some(w) = a.workers {
        cfg.eval.workers = w;
    }
    if a.cache_dir.is_some() {
        cfg.eval.cache_dir = a.cache_dir;
    }
    let strategy = match &a.strategy {
        Some(s) => s.parse()?,
        None => Strategy::Sv,
    };
    cfg.validate()?;
    let instances = load(&a.benchmark)?;
    let backend = open_backend(&cfg)?;
    let ec = EvalConfig {
        strategy,
        alpha: cfg.alpha,
        inference: cfg.inference,
        workers: cfg.eval.workers,
    };
    let cache = cfg.eval.cache_dir.as_ref().map(|d| TraceCache::with_dir(d)).transpose()?;
    let report = run_eval(&backend, &instances, &ec, cache.as_ref())?;
    emit_report(&report, &out_dir(&cfg)?.join(format!("eval_{strategy}.json")))?;
    print!("{}", render_summary(&report));
    Ok(())
}

fn sweep(mut cfg: CliConfig, a: SweepArgs) -> Result<()> {
    apply_backend_args(&mut cfg, &a.backend);
    if let Some(w) = a.workers {
        cfg.eval.workers = w;
    }
    if let Some(g) = a.grid {
        cfg.eval.grid = g;
    }
    if a.cache_dir.is_some() {
        cfg.eval.cache_dir = a.cache_dir;
    }
    cfg.validate()?;
    let grid: AlphaGrid = cfg.eval.grid.parse()?;
    let instances = load(&a.benchmark)?;
    let backend = open_backend(&cfg)?;
    let ec = EvalConfig {
        strategy: Strategy::Sv,
        alpha: cfg.alpha,
        inference: cfg.inference,
        workers: cfg.eval.workers,
    };
    let cache = cache(cfg.eval.cache_dir.as_ref())?;
    let report = alpha_sweep(&backend, &instances, &grid, &ec, Some(&cache))?;
    emit_sweep(&report, &out_dir(&cfg)?.join("sweep.json"))?;
    print!("{}", render_sweep(&report));
    Ok(())
}

fn curate(mut cfg: CliConfig, a: CurateArgs) -> Result<()> {
    if let Some(j) = a.judge {
        cfg.judge = Some(j);
    }
    if let Some(t) = a.threshold {
        cfg.curation.threshold = t;
    }
    if let Some(m) = a.max_in_flight {
        cfg.curation.max_in_flight = m;
    }
    cfg.validate()?;
    let model: Box<dyn TextModel> = match cfg.judge_spec()? {
        BackendSpec::Mock(path) => Box::new(ScriptedTextModel::load(&path)?),
        BackendSpec::Remote(url) => Box::new(RemoteTextModel::new(
            remote_client(&cfg, url)?,
            0.0,
            cfg.inference.cot.max_tokens,
        )),
    };
    let (records, rejected) = load_records(&a.input)?;
    for r in &rejected {
        eprintln!("rejected {r}");
    }
    let mut output = run_pipeline(&records, model.as_ref(), &cfg.curation)?;
    output.stats.input += rejected.len();
    output.stats.rejected += rejected.len();
    let dir = out_dir(&cfg)?;
    write_jsonl(&dir.join("curated.jsonl"), &output.instances)?;
    write_jsonl(&dir.join("curation_outcomes.jsonl"), &output.outcomes)?;
    write_json(&dir.join("curation_stats.json"), &output.stats)?;
    let s = &output.stats;
    println!(
        "input {} kept {} dropped {} rejected {} errored {}",
        s.input, s.kept, s.dropped, s.rejected, s.errored
    );
    Ok(())
}
