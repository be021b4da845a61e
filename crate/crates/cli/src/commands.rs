//! Input resolution and the body of each subcommand.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use serde_json::{json, Value};
use stablesde::engine::{record_path, write_paths_csv, Domain, PathScheme, DEFAULT_MAX_STEPS};
use stablesde::estimate::{
    estimate_exit_moments, estimate_harmonic, estimate_hitting, estimate_occupation, estimate_single_jump_steering,
    exit_moments_refined, fit_hoelder, occupation_refined, steering_scheme, tube_deviations, Batch, BoundaryFunction,
    HarmonicEstimate, SteeringSpec, CAP_FLAG_FRACTION,
};
use stablesde::harnack::{occupation_scaling, ratio_curve, RatioRow};
use stablesde::stats::{empirical_cf, run_paths, sha256_hex, MCEstimate};
use stablesde::steering::TubeSpec;
use stablesde::{checks, MatrixField, Region, StableParams};

use crate::config::{resolve_seed, RunConfig, TaskValue, SEED_ENV};
use crate::output::{to_json_bytes, verify, Outputs};
use crate::{parse, Cli, CliError, Command};

type Res<T> = Result<T, CliError>;

const DEFAULT_ALPHA: f64 = 1.0;
const DEFAULT_DIM: usize = 2;
const DEFAULT_REGION_HALF_WIDTH: f64 = 1e6;
const DEFAULT_DT: f64 = 1e-3;
const DEFAULT_BETA: f64 = 0.1;
const DEFAULT_T_CAP: f64 = 1000.0;
const DEFAULT_OUT: &str = "out";

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Runs a parsed command line. `Ok(false)` means the outputs were written
/// but the result is flagged unreliable.
pub fn run(cli: Cli) -> Res<bool> {
    if let Command::Verify(a) = &cli.command {
        let v = verify(&a.dir)?;
        println!("{}", serde_json::to_string_pretty(&v)?);
        if !v.ok() {
            return Err(usage(format!(
                "verification failed: {} mismatched, {} missing",
                v.mismatched.len(),
                v.missing.len()
            )));
        }
        return Ok(true);
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let threads = cli.threads.or(cfg.run.threads);
    if threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| usage(format!("thread pool: {e}")))?;
    pool.install(|| execute(cli, cfg, threads))
}

fn op_name(c: &Command) -> &'static str {
    match c {
        Command::Sample(_) => "sample",
        Command::Simulate(_) => "simulate",
        Command::ExitTime(_) => "exit-time",
        Command::Occupation(_) => "occupation",
        Command::Steering(_) => "steering",
        Command::Tube(_) => "tube",
        Command::Hitting(_) => "hitting",
        Command::Harmonic(_) => "harmonic",
        Command::Hoelder(_) => "hoelder",
        Command::Harnack(_) => "harnack",
        Command::ScalingCheck(_) => "scaling-check",
        Command::GeneratorCheck(_) => "generator-check",
        Command::Verify(_) => "verify",
    }
}

fn default_n(c: &Command) -> u64 {
    match c {
        Command::Simulate(_) => 10,
        Command::Steering(_) => 100_000,
        Command::Sample(_) => 100_000,
        Command::Harmonic(_) | Command::Hoelder(_) => 4_000,
        _ => 10_000,
    }
}

/// Resolved inputs of one run.
struct Ctx {
    op: &'static str,
    file: RunConfig,
    resolved: RunConfig,
    field: MatrixField,
    params: StableParams,
    scheme: PathScheme,
    seed: u64,
    n: u64,
    t_cap: f64,
    out_dir: PathBuf,
    json: bool,
    csv: bool,
    timing: bool,
    used: Vec<String>,
    started: Instant,
}

#[derive(Default)]
struct Report {
    estimate: Option<MCEstimate>,
    flags: Vec<String>,
    result: Value,
    csv: Vec<(&'static str, String)>,
    json: Vec<(&'static str, Value)>,
}

impl Ctx {
    fn new(cli: &Cli, file: RunConfig, threads: Option<usize>) -> Res<Self> {
        let op = op_name(&cli.command);
        let m = &cli.model;
        let alpha = m.alpha.or(file.model.alpha).unwrap_or(DEFAULT_ALPHA);
        let scale = file.model.scale.unwrap_or(1.0);
        let entries: Option<Vec<String>> = m
            .entries
            .as_ref()
            .map(|e| e.split(';').map(|s| s.trim().to_string()).collect())
            .or_else(|| file.model.entries.clone());
        let dim = m
            .dim
            .or(file.model.dimension)
            .or_else(|| entries.as_ref().map(|e| (e.len() as f64).sqrt().round() as usize))
            .unwrap_or(DEFAULT_DIM);
        if dim == 0 {
            return Err(usage("dimension must be at least 1"));
        }
        let entries = entries.unwrap_or_else(|| {
            (0..dim * dim).map(|k| if k / dim == k % dim { "1".into() } else { "0".into() }).collect()
        });
        if entries.len() != dim * dim {
            return Err(usage(format!("expected {} matrix entries for dimension {dim}, got {}", dim * dim, entries.len())));
        }
        let region = file.model.region.clone().unwrap_or_else(|| Region::cube(dim, DEFAULT_REGION_HALF_WIDTH));
        if region.dim() != dim {
            return Err(usage("model.region dimension differs from the model dimension"));
        }
        let field = MatrixField::parse(dim, &entries, region.clone())?;
        let params = StableParams::new(alpha, scale)?;

        let mode = m.mode.clone().or_else(|| file.scheme.mode.clone()).unwrap_or_else(|| "fixed-step".into());
        let dt = m.dt.or(file.scheme.dt).unwrap_or(DEFAULT_DT);
        let max_steps = m.max_steps.or(file.scheme.max_steps).unwrap_or(DEFAULT_MAX_STEPS);
        let t_cap = m.t_cap.or(file.scheme.t_cap).unwrap_or(DEFAULT_T_CAP);
        let (scheme, beta) = match mode.as_str() {
            "fixed-step" => (PathScheme::fixed_step(dt)?, None),
            "jump-adapted" => {
                let beta = m.beta.or(file.scheme.beta).unwrap_or(DEFAULT_BETA);
                (PathScheme::jump_adapted(dt, beta)?, Some(beta))
            }
            other => return Err(usage(format!("unknown mode '{other}'; use fixed-step or jump-adapted"))),
        };
        let scheme = scheme.with_max_steps(max_steps)?;
        if !(t_cap > 0.0) {
            return Err(usage("t_cap must be positive"));
        }

        let env = std::env::var(SEED_ENV).ok();
        let seed = resolve_seed(cli.seed, file.run.seed, env.as_deref())?;
        let n = cli.n.or(file.run.n).unwrap_or_else(|| default_n(&cli.command));
        if n == 0 {
            return Err(usage("n must be at least 1"));
        }
        let out_dir = cli
            .out
            .clone()
            .or_else(|| file.output.directory.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let formats = file.output.formats.clone().unwrap_or_else(|| vec!["json".into(), "csv".into()]);

        let mut resolved = RunConfig::default();
        resolved.model.dimension = Some(dim);
        resolved.model.alpha = Some(alpha);
        resolved.model.scale = Some(scale);
        resolved.model.entries = Some(entries);
        resolved.model.region = Some(region);
        resolved.scheme.mode = Some(mode);
        resolved.scheme.dt = Some(dt);
        resolved.scheme.beta = beta;
        resolved.scheme.max_steps = Some(max_steps);
        resolved.scheme.t_cap = Some(t_cap);
        resolved.run.seed = Some(seed);
        resolved.run.n = Some(n);
        resolved.run.threads = threads;
        resolved.output.directory = Some(out_dir.display().to_string());
        resolved.output.formats = Some(formats.clone());

        Ok(Self {
            op,
            file,
            resolved,
            field,
            params,
            scheme,
            seed,
            n,
            t_cap,
            out_dir,
            json: formats.iter().any(|f| f == "json"),
            csv: formats.iter().any(|f| f == "csv"),
            timing: cli.timing,
            used: Vec::new(),
            started: Instant::now(),
        })
    }

    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn batch(&self) -> Res<Batch> {
        Ok(Batch::new(self.n, self.seed, self.t_cap)?)
    }

    fn raw(&mut self, key: &str, flag: Option<String>) -> Option<String> {
        self.used.push(key.to_string());
        flag.or_else(|| self.file.task_text(key))
    }

    fn record(&mut self, key: &str, v: TaskValue) {
        self.resolved.task.insert(key.to_string(), v);
    }

    fn text(&mut self, key: &str, flag: Option<String>, default: &str) -> String {
        let v = self.raw(key, flag).unwrap_or_else(|| default.to_string());
        self.record(key, TaskValue::Text(v.clone()));
        v
    }

    fn optional_text(&mut self, key: &str, flag: Option<String>) -> Option<String> {
        let v = self.raw(key, flag);
        if let Some(t) = &v {
            self.record(key, TaskValue::Text(t.clone()));
        }
        v
    }

    fn number(&mut self, key: &str, flag: Option<f64>, default: f64) -> Res<f64> {
        let v = match flag {
            Some(v) => v,
            None => match self.file.task_text(key) {
                Some(t) => t.trim().parse().map_err(|_| usage(format!("task.{key}: expected a number, got '{t}'")))?,
                None => default,
            },
        };
        if !v.is_finite() {
            return Err(usage(format!("{key} must be finite")));
        }
        self.used.push(key.to_string());
        self.record(key, TaskValue::Number(v));
        Ok(v)
    }

    fn integer(&mut self, key: &str, flag: Option<u64>, default: u64) -> Res<u64> {
        let v = match flag {
            Some(v) => v,
            None => match self.file.task_text(key) {
                Some(t) => t.trim().parse().map_err(|_| usage(format!("task.{key}: expected an integer, got '{t}'")))?,
                None => default,
            },
        };
        self.used.push(key.to_string());
        self.record(key, TaskValue::Integer(v as i64));
        Ok(v)
    }

    fn switch(&mut self, key: &str, flag: bool) -> Res<bool> {
        let v = flag
            || match self.file.task.get(key) {
                None => false,
                Some(TaskValue::Bool(b)) => *b,
                Some(_) => return Err(usage(format!("task.{key} must be true or false"))),
            };
        self.used.push(key.to_string());
        self.record(key, TaskValue::Bool(v));
        Ok(v)
    }

    fn point(&mut self, key: &str, flag: Option<String>, default: &[f64]) -> Res<Vec<f64>> {
        let p = parse::point(&self.text(key, flag, &join(default, ",")))?;
        if p.len() != self.dim() {
            return Err(usage(format!("{key} has {} coordinates, expected {}", p.len(), self.dim())));
        }
        Ok(p)
    }

    fn domain(&mut self, key: &str, flag: Option<String>, default: &str) -> Res<Domain> {
        let text = self.text(key, flag, default);
        parse::domain(&text, self.dim())
    }

    fn origin(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    /// Rejects `[task]` keys the subcommand did not read.
    fn check_task_keys(&self) -> Res<()> {
        match self.file.task.keys().find(|k| !self.used.contains(k)) {
            Some(k) => Err(usage(format!("task.{k} is not an input of {}", self.op))),
            None => Ok(()),
        }
    }

    /// The resolved config minus settings that cannot change any output.
    fn echo(&self) -> RunConfig {
        let mut c = self.resolved.clone();
        c.output.directory = None;
        c.run.threads = None;
        c
    }

    fn config_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(&json!({ "op": self.op, "config": self.echo() })).expect("config serializes"))
    }

    fn finish(self, report: Report) -> Res<bool> {
        let hash = self.config_hash();
        let mut out = Outputs::default();
        if self.json {
            let e = report.estimate.as_ref();
            let runtime = self.timing.then(|| self.started.elapsed().as_secs_f64());
            let summary = json!({
                "op": self.op,
                "params": self.resolved.task,
                "mean": e.map(|e| e.mean),
                "stderr": e.map(|e| e.stderr),
                "ci95": e.map(|e| [e.ci95.0, e.ci95.1]),
                "n": e.map_or(self.n, |e| e.n),
                "seed": self.seed,
                "flags": report.flags,
                "runtime_s": runtime,
                "config_hash": hash,
                "config": self.echo(),
                "result": report.result,
            });
            out.add("summary.json", to_json_bytes(&summary));
            for (name, mut doc) in report.json {
                if let Value::Object(m) = &mut doc {
                    m.insert("config_hash".into(), json!(hash));
                    m.insert("seed".into(), json!(self.seed));
                }
                out.add(name, to_json_bytes(&doc));
            }
        }
        if self.csv {
            for (name, body) in report.csv {
                out.add(name, body.into_bytes());
            }
        }
        for path in out.write(&self.out_dir, &hash, self.seed)? {
            println!("wrote {}", path.display());
        }
        if let Some(e) = &report.estimate {
            println!("{}: mean {} stderr {} n {}", self.op, e.mean, e.stderr, e.n);
        }
        for f in &report.flags {
            eprintln!("flagged: {f}");
        }
        Ok(report.flags.is_empty())
    }
}

fn join(v: &[f64], sep: &str) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(sep)
}

fn cap_flag(capped: u64, n: u64) -> Vec<String> {
    if capped as f64 > CAP_FLAG_FRACTION * n as f64 {
        vec![format!("capped: {capped} of {n} paths hit the time or step cap")]
    } else {
        Vec::new()
    }
}

fn execute(cli: Cli, file: RunConfig, threads: Option<usize>) -> Res<bool> {
    let mut ctx = Ctx::new(&cli, file, threads)?;
    let report = match cli.command {
        Command::Sample(a) => sample(&mut ctx, a)?,
        Command::Simulate(a) => simulate(&mut ctx, a)?,
        Command::ExitTime(a) => exit_time(&mut ctx, a)?,
        Command::Occupation(a) => occupation(&mut ctx, a)?,
        Command::Steering(a) => steering(&mut ctx, a)?,
        Command::Tube(a) => tube(&mut ctx, a)?,
        Command::Hitting(a) => hitting(&mut ctx, a)?,
        Command::Harmonic(a) => harmonic(&mut ctx, a)?,
        Command::Hoelder(a) => hoelder(&mut ctx, a)?,
        Command::Harnack(a) => harnack(&mut ctx, a)?,
        Command::ScalingCheck(a) => scaling(&mut ctx, a)?,
        Command::GeneratorCheck(a) => generator(&mut ctx, a)?,
        Command::Verify(_) => unreachable!("handled before resolution"),
    };
    ctx.finish(report)
}

fn sample(ctx: &mut Ctx, a: crate::SampleArgs) -> Res<Report> {
    let t = ctx.number("time", a.time, 1.0)?;
    let us = parse::list(&ctx.text("u", a.u, "0.5,1.0,2.0"))?;
    if !(t > 0.0) {
        return Err(usage("time must be positive"));
    }
    ctx.check_task_keys()?;
    let p = ctx.params;
    let samples = run_paths(ctx.n, ctx.seed, |_, mut rng| p.sample_increment(t, &mut rng));
    let mut cf = String::from("u,empirical,stderr,exact\n");
    let mut rows = Vec::new();
    for &u in &us {
        let e = empirical_cf(&samples, u)?;
        let exact = (-t * (p.scale() * u.abs()).powf(p.alpha())).exp();
        writeln!(cf, "{u:?},{:?},{:?},{exact:?}", e.mean, e.stderr).expect("string write");
        rows.push(json!({ "u": u, "empirical": e.mean, "stderr": e.stderr, "exact": exact }));
    }
    let mut body = String::from("index,value\n");
    for (i, x) in samples.iter().enumerate() {
        writeln!(body, "{i},{x:?}").expect("string write");
    }
    Ok(Report {
        result: json!({ "time": t, "characteristic_function": rows }),
        csv: vec![("samples.csv", body), ("cf.csv", cf)],
        ..Report::default()
    })
}

fn simulate(ctx: &mut Ctx, a: crate::SimulateArgs) -> Res<Report> {
    let x0 = ctx.point("x0", a.x0, &ctx.origin())?;
    let horizon = ctx.number("horizon", a.horizon, 1.0)?;
    let domain = match ctx.optional_text("domain", a.domain) {
        Some(t) => Some(parse::domain(&t, ctx.dim())?),
        None => None,
    };
    ctx.check_task_keys()?;
    let (field, params, scheme, seed) = (&ctx.field, &ctx.params, &ctx.scheme, ctx.seed);
    let paths = run_paths(ctx.n, seed, |i, rng| {
        record_path(field, params, &x0, horizon, scheme, rng, domain.as_ref()).map(|mut p| {
            p.metadata.seed = Some(seed);
            p.metadata.path_index = Some(i);
            (i, p)
        })
    });
    let paths = paths.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut body = Vec::new();
    write_paths_csv(&mut body, &paths)?;
    let capped = paths.iter().filter(|p| p.1.metadata.capped).count() as u64;
    let outside: u64 = paths.iter().map(|p| p.1.metadata.out_of_region_evaluations).sum();
    let mut flags = cap_flag(capped, ctx.n);
    if outside > 0 {
        flags.push(format!("region: the field was evaluated {outside} times outside its region"));
    }
    let meta: Vec<Value> = paths
        .iter()
        .map(|(i, p)| {
            json!({
                "path_id": i,
                "events": p.states.len() - 1,
                "jumps": p.jumps.len(),
                "exit_index": p.exit_index,
                "capped": p.metadata.capped,
                "gaussian_surrogate": p.metadata.gaussian_surrogate,
                "out_of_region_evaluations": p.metadata.out_of_region_evaluations,
            })
        })
        .collect();
    let exited = paths.iter().filter(|p| p.1.exit_index.is_some()).count();
    Ok(Report {
        flags,
        result: json!({ "horizon": horizon, "paths": ctx.n, "exited": exited, "capped": capped }),
        csv: vec![("paths.csv", String::from_utf8(body).expect("csv is utf-8"))],
        json: vec![("paths.json", json!({ "scheme": ctx.scheme, "field": ctx.field.hash(), "paths": meta }))],
        ..Report::default()
    })
}

fn exit_time(ctx: &mut Ctx, a: crate::ExitArgs) -> Res<Report> {
    let x0 = ctx.point("x0", a.x0, &ctx.origin())?;
    let domain = ctx.domain("domain", a.domain, "ball:1")?;
    let max_m = ctx.integer("max_m", a.max_m.map(u64::from), 5)?;
    let max_m = u32::try_from(max_m).map_err(|_| usage("max_m is too large"))?;
    let refine = ctx.switch("refine", a.refine)?;
    ctx.check_task_keys()?;
    let batch = ctx.batch()?;
    let tail_csv = |rows: &[stablesde::estimate::TailRow]| {
        let mut s = String::from("m,probability,stderr\n");
        for r in rows {
            writeln!(s, "{},{:?},{:?}", r.m, r.probability, r.stderr).expect("string write");
        }
        s
    };
    if refine {
        let r = exit_moments_refined(&ctx.field, &ctx.params, &x0, &domain, &ctx.scheme, &batch, max_m)?;
        let mut flags = r.coarse.flags.clone();
        flags.extend(r.fine.flags.iter().map(|f| format!("dt/2 run: {f}")));
        if !r.stable() {
            flags.push(format!(
                "refinement: halving dt moved the mean by {:?} (joint stderr {:?})",
                r.difference, r.joint_stderr
            ));
        }
        Ok(Report {
            estimate: Some(r.coarse.mean_tau.clone()),
            flags,
            csv: vec![("tail.csv", tail_csv(&r.coarse.tail)), ("tail_refined.csv", tail_csv(&r.fine.tail))],
            result: serde_json::to_value(&r)?,
            ..Report::default()
        })
    } else {
        let e = estimate_exit_moments(&ctx.field, &ctx.params, &x0, &domain, &ctx.scheme, &batch, max_m)?;
        Ok(Report {
            estimate: Some(e.mean_tau.clone()),
            flags: e.flags.clone(),
            csv: vec![("tail.csv", tail_csv(&e.tail))],
            result: serde_json::to_value(&e)?,
            ..Report::default()
        })
    }
}

fn occupation(ctx: &mut Ctx, a: crate::OccupationArgs) -> Res<Report> {
    let x0 = ctx.point("x0", a.x0, &ctx.origin())?;
    let domain = ctx.domain("domain", a.domain, "ball:1")?;
    let region = match ctx.optional_text("region", a.region) {
        Some(t) => Some(parse::domain(&t, ctx.dim())?),
        None => None,
    };
    let refine = ctx.switch("refine", a.refine)?;
    ctx.check_task_keys()?;
    let batch = ctx.batch()?;
    let (f, p, s) = (&ctx.field, &ctx.params, &ctx.scheme);
    let (estimate, flags, result) = if refine {
        let r = occupation_refined(f, p, &domain, region.as_ref(), &x0, s, &batch)?;
        let mut flags = r.coarse.flags.clone();
        flags.extend(r.fine.flags.iter().map(|f| format!("dt/2 run: {f}")));
        if !r.stable() {
            flags.push(format!(
                "refinement: halving dt moved the mean by {:?} (joint stderr {:?})",
                r.difference, r.joint_stderr
            ));
        }
        (r.coarse.estimate.clone(), flags, serde_json::to_value(&r)?)
    } else {
        let o = estimate_occupation(f, p, &domain, region.as_ref(), &x0, s, &batch)?;
        (o.estimate.clone(), o.flags.clone(), serde_json::to_value(&o)?)
    };
    let csv = format!("mean,stderr,n\n{:?},{:?},{}\n", estimate.mean, estimate.stderr, estimate.n);
    Ok(Report { estimate: Some(estimate), flags, result, csv: vec![("occupation.csv", csv)], ..Report::default() })
}

fn steering(ctx: &mut Ctx, a: crate::SteeringArgs) -> Res<Report> {
    let x0 = ctx.point("x0", a.x0, &ctx.origin())?;
    let axis = ctx.integer("axis", a.axis.map(|k| k as u64), 1)? as usize;
    let r = ctx.number("r", a.r, 0.5)?;
    let gamma = ctx.number("gamma", a.gamma, 0.1)?;
    let t0 = ctx.number("t0", a.t0, 0.1)?;
    ctx.check_task_keys()?;
    let spec = SteeringSpec::new(axis, r, gamma, t0)?;
    let scheme = steering_scheme(&ctx.params, ctx.dim(), &spec)?.with_max_steps(ctx.scheme.max_steps)?;
    let e = estimate_single_jump_steering(&ctx.field, &ctx.params, &x0, &spec, &scheme, &ctx.batch()?)?;
    let csv = format!("axis,r,gamma,t0,probability,stderr,n\n{axis},{r:?},{gamma:?},{t0:?},{:?},{:?},{}\n", e.mean, e.stderr, e.n);
    Ok(Report {
        result: json!({ "spec": spec, "scheme": scheme }),
        estimate: Some(e),
        csv: vec![("steering.csv", csv)],
        ..Report::default()
    })
}

fn tube(ctx: &mut Ctx, a: crate::TubeArgs) -> Res<Report> {
    let mut end = ctx.origin();
    end[0] = 1.0;
    let default_vertices = format!("{};{}", join(&ctx.origin(), ","), join(&end, ","));
    let vertices = parse::points(&ctx.text("vertices", a.vertices, &default_vertices))?;
    let times = parse::list(&ctx.text("times", a.times, "0.0,1.0"))?;
    let eps = ctx.number("eps", a.eps, 0.5)?;
    let last = times.last().copied().unwrap_or(0.0);
    let t0 = ctx.number("t0", a.t0, last)?;
    ctx.check_task_keys()?;
    if vertices.iter().any(|v| v.len() != ctx.dim()) {
        return Err(usage(format!("tube vertices must have {} coordinates", ctx.dim())));
    }
    let spec = TubeSpec::new(vertices, times, eps, t0)?;
    let run = tube_deviations(&ctx.field, &ctx.params, &spec, &ctx.scheme, &ctx.batch()?, eps)?;
    let mut profile = String::from("eps,probability,stderr\n");
    let mut rows = Vec::new();
    for k in 1..=8 {
        let e_k = eps * f64::from(k) / 8.0;
        let p = run.probability(e_k);
        writeln!(profile, "{e_k:?},{:?},{:?}", p.mean, p.stderr).expect("string write");
        rows.push(json!({ "eps": e_k, "probability": p.mean, "stderr": p.stderr }));
    }
    Ok(Report {
        estimate: Some(run.probability(eps)),
        result: json!({ "spec": spec, "profile": rows }),
        csv: vec![("tube.csv", profile)],
        ..Report::default()
    })
}

fn hitting(ctx: &mut Ctx, a: crate::HittingArgs) -> Res<Report> {
    let x0 = ctx.point("x0", a.x0, &ctx.origin())?;
    let mut c = ctx.origin();
    c[0] = 0.5;
    let target = ctx.domain("target", a.target, &format!("ball:{}:0.2", join(&c, ",")))?;
    let container = ctx.domain("container", a.container, "ball:1")?;
    ctx.check_task_keys()?;
    let h = estimate_hitting(&ctx.field, &ctx.params, &target, &container, &x0, &ctx.scheme, &ctx.batch()?)?;
    let csv = format!("probability,stderr,n,capped\n{:?},{:?},{},{}\n", h.estimate.mean, h.estimate.stderr, h.estimate.n, h.capped);
    Ok(Report {
        estimate: Some(h.estimate.clone()),
        flags: h.flags.clone(),
        result: serde_json::to_value(&h)?,
        csv: vec![("hitting.csv", csv)],
        ..Report::default()
    })
}

fn harmonic_csv(est: &HarmonicEstimate) -> String {
    let d = est.points.first().map_or(0, Vec::len);
    let mut s = (1..=d).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",");
    s.push_str(",value,stderr,capped\n");
    for ((p, v), c) in est.points.iter().zip(&est.values).zip(&est.capped) {
        writeln!(s, "{},{:?},{:?},{c}", join(p, ","), v.mean, v.stderr).expect("string write");
    }
    s
}

fn harmonic_inputs(ctx: &mut Ctx, domain: Option<String>, boundary: Option<String>) -> Res<(Domain, BoundaryFunction)> {
    let domain = ctx.domain("domain", domain, "ball:1")?;
    let g = BoundaryFunction::parse(&ctx.text("boundary", boundary, "upper:1"))?;
    Ok((domain, g))
}

fn harmonic(ctx: &mut Ctx, a: crate::HarmonicArgs) -> Res<Report> {
    let (domain, g) = harmonic_inputs(ctx, a.domain, a.boundary)?;
    let default_grid = (-2..=2)
        .map(|k| {
            let mut p = ctx.origin();
            p[0] = 0.25 * f64::from(k);
            join(&p, ",")
        })
        .collect::<Vec<_>>()
        .join(";");
    let grid = parse::points(&ctx.text("grid", a.grid, &default_grid))?;
    ctx.check_task_keys()?;
    let est = estimate_harmonic(&ctx.field, &ctx.params, &domain, &g, &grid, &ctx.scheme, &ctx.batch()?)?;
    Ok(Report {
        flags: est.flags.clone(),
        csv: vec![("harmonic.csv", harmonic_csv(&est))],
        result: serde_json::to_value(&est)?,
        ..Report::default()
    })
}

fn hoelder(ctx: &mut Ctx, a: crate::HoelderArgs) -> Res<Report> {
    let (domain, g) = harmonic_inputs(ctx, a.domain, a.boundary)?;
    let center = ctx.point("center", a.center, &ctx.origin())?;
    let radius = ctx.number("radius", a.radius, 0.5)?;
    let default_grid = (0..=12)
        .map(|k| {
            let mut p = center.clone();
            p[0] += 0.04 * f64::from(k);
            join(&p, ",")
        })
        .collect::<Vec<_>>()
        .join(";");
    let grid = parse::points(&ctx.text("grid", a.grid, &default_grid))?;
    ctx.check_task_keys()?;
    let est = estimate_harmonic(&ctx.field, &ctx.params, &domain, &g, &grid, &ctx.scheme, &ctx.batch()?)?;
    let mut flags = est.flags.clone();
    let fit = match fit_hoelder(&est, &center, radius) {
        Ok(f) => Some(f),
        Err(e) => {
            flags.push(format!("fit: {e}"));
            None
        }
    };
    Ok(Report {
        flags,
        csv: vec![("harmonic.csv", harmonic_csv(&est))],
        result: json!({ "fit": fit, "harmonic": est }),
        ..Report::default()
    })
}

fn harnack(ctx: &mut Ctx, a: crate::HarnackArgs) -> Res<Report> {
    let eps = parse::list(&ctx.text("eps", a.eps, "0.2,0.1,0.05"))?;
    let substep = ctx.number("substep", a.substep, 0.05)?;
    let with_occupation = ctx.switch("occupation", a.occupation)?;
    let horizon = if with_occupation { Some(ctx.number("horizon", a.horizon, 50.0)?) } else { None };
    ctx.check_task_keys()?;
    let batch = ctx.batch()?;
    let rows = ratio_curve(&eps, &ctx.params, &batch, substep)?;
    let mut csv = format!("{}\n", RatioRow::CSV_HEADER);
    for r in &rows {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    let capped: u64 = rows.iter().map(|r| r.h0.capped + r.hw0.capped).sum();
    let mut flags = cap_flag(capped, 2 * batch.n * rows.len() as u64);
    let mut files = vec![("ratio.csv", csv)];
    let mut result = json!({ "rows": rows });
    if let Some(h) = horizon {
        let occ = occupation_scaling(&eps, &ctx.params, batch.n, batch.seed, h)?;
        if occ.horizon_sensitive {
            flags.push(format!("occupation: doubling the horizon moved the slope from {:?} to {:?}", occ.slope, occ.slope_doubled));
        }
        let mut s = String::from("eps,value,stderr,tail_correction,value_doubled\n");
        for r in &occ.rows {
            writeln!(s, "{:?},{:?},{:?},{:?},{:?}", r.eps, r.value, r.stderr, r.tail_correction, r.value_doubled)
                .expect("string write");
        }
        files.push(("occupation.csv", s));
        result["occupation"] = serde_json::to_value(&occ)?;
    }
    Ok(Report { flags, result, csv: files, ..Report::default() })
}

fn scaling(ctx: &mut Ctx, a: crate::ScalingArgs) -> Res<Report> {
    let lambda = ctx.number("lambda", a.lambda, 2.0)?;
    let t = ctx.number("t", a.t, 1.0)?;
    let x0 = ctx.point("x0", a.x0, &ctx.origin())?;
    ctx.check_task_keys()?;
    let c = checks::scaling_check(&ctx.field, &ctx.params, &x0, lambda, t, ctx.scheme.dt, ctx.n, ctx.seed)?;
    let flags = if c.passes {
        Vec::new()
    } else {
        vec![format!("ks: statistic {:?} exceeds the 1% critical value {:?}", c.ks.statistic, c.ks.critical_1pct)]
    };
    let csv = format!(
        "lambda,t,n,statistic,critical_1pct,passes\n{lambda:?},{t:?},{},{:?},{:?},{}\n",
        c.n, c.ks.statistic, c.ks.critical_1pct, c.passes
    );
    Ok(Report { flags, result: serde_json::to_value(&c)?, csv: vec![("scaling.csv", csv)], ..Report::default() })
}

/// Residual above which the generator check is flagged.
const GENERATOR_TOLERANCE: f64 = 1e-3;

fn generator(ctx: &mut Ctx, a: crate::GeneratorArgs) -> Res<Report> {
    let count = ctx.integer("probes", a.probes.map(|p| p as u64), 32)? as usize;
    ctx.check_task_keys()?;
    if count == 0 {
        return Err(usage("probes must be at least 1"));
    }
    let c = checks::generator_check(&ctx.params, count, ctx.seed)?;
    let mut csv = String::from("dim,x,u,quadrature,symbol,residual\n");
    for p in &c.probes {
        writeln!(
            csv,
            "{},{},{},{:?},{:?},{:?}",
            p.dim,
            join(&p.x, " "),
            join(&p.u, " "),
            p.quadrature,
            p.symbol,
            p.residual
        )
        .expect("string write");
    }
    println!("generator-check: max residual {:e} over {} probes", c.max_residual, c.probes.len());
    let flags = if c.max_residual < GENERATOR_TOLERANCE {
        Vec::new()
    } else {
        vec![format!("generator: max residual {:e} is not below {GENERATOR_TOLERANCE:e}", c.max_residual)]
    };
    Ok(Report { flags, result: serde_json::to_value(&c)?, csv: vec![("probes.csv", csv)], ..Report::default() })
}
