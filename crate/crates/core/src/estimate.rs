//! Monte Carlo estimators for exit times, occupation, steering, tube,
//! hitting and harmonic-function quantities.
//!
//! Path `i` of a batch always uses stream `(seed, i)`, so estimates are
//! bit-identical across reruns and thread counts, and estimators run on
//! the same batch share their randomness.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::engine::{exit_check, first_exit, first_hit_before_exit, Domain, EventKind, HitOutcome, PathScheme, Walker};
use crate::error::{invalid, Error, Result};
use crate::expr::{parse_entry_expression, Expr};
use crate::field::MatrixField;
use crate::rng::derive_seed;
use crate::stable::{choose_beta, StableParams};
use crate::stats::{fit_line, params_hash, run_paths, MCEstimate};
use crate::steering::{subdivide_tube, TubeSpec};

/// Fraction of capped paths above which a result is flagged unreliable.
pub const CAP_FLAG_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub n: u64,
    pub seed: u64,
    /// Time horizon after which a path counts as capped.
    pub t_cap: f64,
}

impl Batch {
    pub fn new(n: u64, seed: u64, t_cap: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        if !(t_cap > 0.0) {
            return Err(invalid("t_cap must be positive"));
        }
        Ok(Self { n, seed, t_cap })
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

fn cap_flags(capped: u64, n: u64) -> Vec<String> {
    if capped as f64 > CAP_FLAG_FRACTION * n as f64 {
        vec![format!("capped: {capped} of {n} paths hit the time or step cap")]
    } else {
        Vec::new()
    }
}

fn model_json(field: &MatrixField, params: &StableParams, scheme: &PathScheme) -> serde_json::Value {
    json!({ "field": field.hash(), "alpha": params.alpha(), "scale": params.scale(), "scheme": scheme })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub m: u32,
    pub probability: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitMoments {
    pub mean_tau: MCEstimate,
    /// `P(τ > m)` for `m = 1..M`; capped paths count as `τ > M`.
    pub tail: Vec<TailRow>,
    pub capped: u64,
    pub flags: Vec<String>,
}

pub fn estimate_exit_moments(
    field: &MatrixField,
    params: &StableParams,
    x0: &[f64],
    domain: &Domain,
    scheme: &PathScheme,
    batch: &Batch,
    max_m: u32,
) -> Result<ExitMoments> {
    let records = run_paths(batch.n, batch.seed, |_, rng| first_exit(field, params, x0, domain, scheme, rng, batch.t_cap));
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    let hash = params_hash(&json!({
        "op": "exit-moments", "model": model_json(field, params, scheme), "x0": x0,
        "domain": domain, "batch": batch, "max_m": max_m,
    }));
    let taus: Vec<f64> = records.iter().map(|r| r.tau).collect();
    let capped = records.iter().filter(|r| !r.exited).count() as u64;
    let tail = (1..=max_m)
        .map(|m| {
            let hits = records.iter().filter(|r| !r.exited || r.tau > m as f64).count() as u64;
            let e = MCEstimate::from_counts(hits, batch.n, batch.seed, "")?;
            Ok(TailRow { m, probability: e.mean, stderr: e.stderr })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExitMoments {
        mean_tau: MCEstimate::from_samples(&taus, batch.seed, hash)?,
        tail,
        capped,
        flags: cap_flags(capped, batch.n),
    })
}

/// Paired runs at `dt` and `dt/2` on independent streams.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Refined<T> {
    pub coarse: T,
    pub fine: T,
    /// Fine minus coarse mean.
    pub difference: f64,
    pub joint_stderr: f64,
}

impl<T> Refined<T> {
    /// The dt-halving moved the estimate by less than 3 joint stderr.
    pub fn stable(&self) -> bool {
        self.difference.abs() < 3.0 * self.joint_stderr
    }
}

fn refine<T>(
    scheme: &PathScheme,
    batch: &Batch,
    value: impl Fn(&T) -> &MCEstimate,
    run: impl Fn(&PathScheme, &Batch) -> Result<T>,
) -> Result<Refined<T>> {
    let coarse = run(scheme, batch)?;
    let fine_scheme = scheme.with_dt(scheme.dt / 2.0)?;
    let fine = run(&fine_scheme, &batch.with_seed(derive_seed(batch.seed, "dt-refine")))?;
    let (a, b) = (value(&coarse), value(&fine));
    Ok(Refined { difference: b.mean - a.mean, joint_stderr: a.stderr.hypot(b.stderr), coarse, fine })
}

pub fn exit_moments_refined(
    field: &MatrixField,
    params: &StableParams,
    x0: &[f64],
    domain: &Domain,
    scheme: &PathScheme,
    batch: &Batch,
    max_m: u32,
) -> Result<Refined<ExitMoments>> {
    refine(scheme, batch, |e: &ExitMoments| &e.mean_tau, |s, b| {
        estimate_exit_moments(field, params, x0, domain, s, b, max_m)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Occupation {
    pub estimate: MCEstimate,
    pub capped: u64,
    pub flags: Vec<String>,
}

/// `E ∫₀^τ 1_C(X_s) ds` by the left-endpoint rule over recorded events.
/// `region` should lie inside `domain`.
pub fn estimate_occupation(
    field: &MatrixField,
    params: &StableParams,
    domain: &Domain,
    region: Option<&Domain>,
    x0: &[f64],
    scheme: &PathScheme,
    batch: &Batch,
) -> Result<Occupation> {
    if !domain.contains(x0) {
        return Err(invalid("start point must lie in the domain"));
    }
    let per_path = run_paths(batch.n, batch.seed, |_, rng| -> Result<(f64, bool)> {
        let mut w = Walker::new(field, params, scheme, x0, rng)?;
        let mut occ = 0.0;
        let mut t_prev = 0.0;
        while let Some(kind) = w.advance(batch.t_cap) {
            if region.is_some_and(|c| c.contains(w.previous())) {
                occ += w.time() - t_prev;
            }
            t_prev = w.time();
            if exit_check(&w, kind, domain).is_some() {
                return Ok((occ, true));
            }
        }
        Ok((occ, false))
    });
    let per_path = per_path.into_iter().collect::<Result<Vec<_>>>()?;
    let capped = per_path.iter().filter(|p| !p.1).count() as u64;
    let samples: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let hash = params_hash(&json!({
        "op": "occupation", "model": model_json(field, params, scheme), "x0": x0,
        "domain": domain, "region": region, "batch": batch,
    }));
    Ok(Occupation {
        estimate: MCEstimate::from_samples(&samples, batch.seed, hash)?,
        capped,
        flags: cap_flags(capped, batch.n),
    })
}

pub fn occupation_refined(
    field: &MatrixField,
    params: &StableParams,
    domain: &Domain,
    region: Option<&Domain>,
    x0: &[f64],
    scheme: &PathScheme,
    batch: &Batch,
) -> Result<Refined<Occupation>> {
    refine(scheme, batch, |o: &Occupation| &o.estimate, |s, b| {
        estimate_occupation(field, params, domain, region, x0, s, b)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringSpec {
    /// 1-based axis.
    pub axis: usize,
    pub r: f64,
    pub gamma: f64,
    pub t0: f64,
}

impl SteeringSpec {
    pub fn new(axis: usize, r: f64, gamma: f64, t0: f64) -> Result<Self> {
        if axis == 0 {
            return Err(invalid("axis is 1-based"));
        }
        if !(gamma > 0.0 && gamma < 1.0) || !(-1.0..=1.0).contains(&r) || !(t0 > 0.0) {
            return Err(invalid("need γ ∈ (0,1), r ∈ [−1,1] and t0 > 0"));
        }
        Ok(Self { axis, r, gamma, t0 })
    }
}

/// Jump-adapted scheme for the steering event: β solves
/// `t0 β^{2−α} = (γ/6)²/(2d)`, capped at `|r|/2` so the steering jump is
/// resolved exactly, and `dt = t0/100`.
pub fn steering_scheme(params: &StableParams, d: usize, spec: &SteeringSpec) -> Result<PathScheme> {
    let mut beta = choose_beta(spec.t0, spec.gamma / 6.0, d, params, 1.0)?;
    if spec.r != 0.0 {
        beta = beta.min(spec.r.abs() / 2.0);
    }
    PathScheme::jump_adapted(spec.t0 / 100.0, beta)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Fraction of paths that stay within `γ` of `x0` before some time `T` and
/// within `γ` of `x0 + r A(x0) e_k` on `[T, t0]`. Candidate switch times are
/// `0` and the large jumps of driver `k`.
pub fn estimate_single_jump_steering(
    field: &MatrixField,
    params: &StableParams,
    x0: &[f64],
    spec: &SteeringSpec,
    scheme: &PathScheme,
    batch: &Batch,
) -> Result<MCEstimate> {
    let d = field.dim();
    if spec.axis > d {
        return Err(invalid(format!("axis {} exceeds dimension {d}", spec.axis)));
    }
    let col = field.column(x0, spec.axis - 1);
    let y: Vec<f64> = x0.iter().zip(&col).map(|(x, c)| x + spec.r * c).collect();
    let hits = run_paths(batch.n, batch.seed, |_, rng| -> Result<bool> {
        let mut w = Walker::new(field, params, scheme, x0, rng)?;
        // Valid switch times are those before the path first strays γ from
        // x0. The latest of them has the smallest later deviation from y, so
        // only its running maximum is kept.
        let mut prefix = 0.0f64;
        let mut since_switch = Some(dist(x0, &y));
        let mut visit = |d0: f64, d1: f64, candidate: bool| {
            if candidate && prefix < spec.gamma {
                since_switch = Some(d1);
            } else {
                since_switch = since_switch.map(|m| m.max(d1));
            }
            prefix = prefix.max(d0);
            prefix < spec.gamma || since_switch.is_some_and(|m| m < spec.gamma)
        };
        while let Some(kind) = w.advance(spec.t0) {
            let mut candidate = false;
            if let EventKind::Jump(ev) = kind {
                let pre = w.pre_state();
                if !visit(dist(pre, x0), dist(pre, &y), false) {
                    return Ok(false);
                }
                candidate = ev.coordinate == spec.axis;
            }
            let s = w.state();
            if !visit(dist(s, x0), dist(s, &y), candidate) {
                return Ok(false);
            }
        }
        Ok(since_switch.is_some_and(|m| m < spec.gamma))
    });
    let hits = hits.into_iter().collect::<Result<Vec<_>>>()?.iter().filter(|h| **h).count() as u64;
    let hash = params_hash(&json!({
        "op": "steering", "model": model_json(field, params, scheme), "x0": x0, "spec": spec, "batch": batch,
    }));
    MCEstimate::from_counts(hits, batch.n, batch.seed, hash)
}

/// Largest distance from the tube path over each simulated path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TubeRun {
    pub deviations: Vec<f64>,
    pub seed: u64,
    pub params_hash: String,
}

impl TubeRun {
    /// Fraction of paths with maximal deviation below `eps`. Valid for
    /// `eps` up to the cutoff the run used.
    pub fn probability(&self, eps: f64) -> MCEstimate {
        let hits = self.deviations.iter().filter(|d| **d < eps).count() as u64;
        MCEstimate::from_counts(hits, self.deviations.len() as u64, self.seed, self.params_hash.clone())
            .expect("nonempty run")
    }
}

/// Simulates up to `spec.t0` and records each path's largest distance to
/// `φ` at event times, including pre-jump states. A path is abandoned once
/// its deviation exceeds `cutoff`.
pub fn tube_deviations(
    field: &MatrixField,
    params: &StableParams,
    spec: &TubeSpec,
    scheme: &PathScheme,
    batch: &Batch,
    cutoff: f64,
) -> Result<TubeRun> {
    let d = field.dim();
    if spec.start().len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: spec.start().len() });
    }
    if spec.vertices.iter().any(|v| !field.region().contains(v)) {
        return Err(invalid("tube path leaves the field region"));
    }
    let segments = subdivide_tube(spec);
    let mut vertices = vec![spec.start().to_vec()];
    let mut times = vec![0.0];
    for s in &segments {
        vertices.push(s.end.clone());
        times.push(s.t_end);
    }
    let phi = if segments.is_empty() { spec.clone() } else { TubeSpec::new(vertices, times, spec.eps, spec.t0)? };
    let x0 = phi.start();
    let devs = run_paths(batch.n, batch.seed, |_, rng| -> Result<f64> {
        let mut w = Walker::new(field, params, scheme, x0, rng)?;
        let mut target = vec![0.0; d];
        let mut dev = 0.0f64;
        while let Some(kind) = w.advance(phi.t0) {
            phi.point_at(w.time(), &mut target);
            if let EventKind::Jump(_) = kind {
                dev = dev.max(dist(w.pre_state(), &target));
            }
            dev = dev.max(dist(w.state(), &target));
            if dev > cutoff {
                break;
            }
        }
        Ok(dev)
    });
    let hash = params_hash(&json!({
        "op": "tube", "model": model_json(field, params, scheme), "tube": spec, "batch": batch, "cutoff": cutoff,
    }));
    Ok(TubeRun { deviations: devs.into_iter().collect::<Result<Vec<_>>>()?, seed: batch.seed, params_hash: hash })
}

/// Probability that the path stays within `spec.eps` of `φ` up to `spec.t0`.
pub fn estimate_tube_probability(
    field: &MatrixField,
    params: &StableParams,
    spec: &TubeSpec,
    x0: &[f64],
    scheme: &PathScheme,
    batch: &Batch,
) -> Result<MCEstimate> {
    if spec.start() != x0 {
        return Err(invalid("the tube path must start at x0"));
    }
    Ok(tube_deviations(field, params, spec, scheme, batch, spec.eps)?.probability(spec.eps))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingEstimate {
    pub estimate: MCEstimate,
    /// Paths that neither hit nor exited; they count as misses.
    pub capped: u64,
    pub flags: Vec<String>,
}

pub fn estimate_hitting(
    field: &MatrixField,
    params: &StableParams,
    target: &Domain,
    container: &Domain,
    x0: &[f64],
    scheme: &PathScheme,
    batch: &Batch,
) -> Result<HittingEstimate> {
    let outcomes = run_paths(batch.n, batch.seed, |_, rng| {
        first_hit_before_exit(field, params, x0, target, container, scheme, rng, batch.t_cap).map(|o| o.0)
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let hits = outcomes.iter().filter(|o| **o == HitOutcome::Hit).count() as u64;
    let capped = outcomes.iter().filter(|o| **o == HitOutcome::Capped).count() as u64;
    let hash = params_hash(&json!({
        "op": "hitting", "model": model_json(field, params, scheme), "x0": x0,
        "target": target, "container": container, "batch": batch,
    }));
    Ok(HittingEstimate {
        estimate: MCEstimate::from_counts(hits, batch.n, batch.seed, hash)?,
        capped,
        flags: cap_flags(capped, batch.n),
    })
}

#[derive(Debug, Clone, PartialEq)]
enum BoundaryKind {
    Constant(f64),
    Upper(usize),
    RightOf(usize, f64),
    Expression(Expr),
}

/// Boundary data `g` for harmonic estimates.
///
/// Textual forms: `const:c`, `upper:k` (indicator of `x_k > 0`),
/// `right-of:k:a` (indicator of `x_k ≥ a`) and `expr:<expression>`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFunction {
    id: String,
    kind: BoundaryKind,
}

impl BoundaryFunction {
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || invalid(format!("unrecognized boundary function '{text}'"));
        let axis = |s: &str| -> Result<usize> {
            match s.trim().parse::<usize>() {
                Ok(k) if k >= 1 => Ok(k - 1),
                _ => Err(bad()),
            }
        };
        let (head, rest) = text.split_once(':').ok_or_else(bad)?;
        let kind = match head.trim() {
            "const" => BoundaryKind::Constant(rest.trim().parse().map_err(|_| bad())?),
            "upper" => BoundaryKind::Upper(axis(rest)?),
            "right-of" => {
                let (k, a) = rest.split_once(':').ok_or_else(bad)?;
                BoundaryKind::RightOf(axis(k)?, a.trim().parse().map_err(|_| bad())?)
            }
            "expr" => BoundaryKind::Expression(parse_entry_expression(rest)?),
            _ => return Err(bad()),
        };
        Ok(Self { id: text.trim().to_string(), kind })
    }

    pub fn constant(c: f64) -> Self {
        Self { id: format!("const:{c:?}"), kind: BoundaryKind::Constant(c) }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            BoundaryKind::Constant(c) => *c,
            BoundaryKind::Upper(k) => f64::from(u8::from(x[*k] > 0.0)),
            BoundaryKind::RightOf(k, a) => f64::from(u8::from(x[*k] >= *a)),
            BoundaryKind::Expression(e) => e.eval(x),
        }
    }

    /// Largest variable index used, 0-based.
    pub fn max_axis(&self) -> Option<usize> {
        match &self.kind {
            BoundaryKind::Constant(_) => None,
            BoundaryKind::Upper(k) | BoundaryKind::RightOf(k, _) => Some(*k),
            BoundaryKind::Expression(e) => e.max_var(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarmonicEstimate {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<MCEstimate>,
    pub boundary: String,
    pub domain: Option<Domain>,
    pub capped: Vec<u64>,
    pub flags: Vec<String>,
    /// Per-path `g(X_τ)` for each point, `None` when capped. Paths share
    /// streams across points, so differences can be paired.
    #[serde(skip)]
    pub samples: Vec<Vec<Option<f64>>>,
}

impl HarmonicEstimate {
    /// Noise-free values, for checking the fit.
    pub fn exact(points: Vec<Vec<f64>>, values: &[f64]) -> Self {
        Self {
            capped: vec![0; points.len()],
            points,
            values: values.iter().map(|v| MCEstimate::exact(*v)).collect(),
            boundary: "exact".into(),
            domain: None,
            flags: Vec::new(),
            samples: Vec::new(),
        }
    }

    /// Standard error of `h(points[a]) − h(points[b])`, paired over shared
    /// paths when samples are available.
    pub fn difference_stderr(&self, a: usize, b: usize) -> f64 {
        if self.samples.is_empty() {
            return self.values[a].stderr.hypot(self.values[b].stderr);
        }
        let diffs: Vec<f64> =
            self.samples[a].iter().zip(&self.samples[b]).filter_map(|(x, y)| Some((*x)? - (*y)?)).collect();
        MCEstimate::from_samples(&diffs, 0, "").map_or(f64::INFINITY, |e| e.stderr)
    }
}

/// `h(x) = E^x g(X_τ)` at each grid point, using `X_τ` from [`first_exit`].
/// Every point uses the same path streams.
pub fn estimate_harmonic(
    field: &MatrixField,
    params: &StableParams,
    domain: &Domain,
    g: &BoundaryFunction,
    grid: &[Vec<f64>],
    scheme: &PathScheme,
    batch: &Batch,
) -> Result<HarmonicEstimate> {
    if grid.is_empty() {
        return Err(invalid("grid is empty"));
    }
    if let Some(k) = g.max_axis() {
        if k >= field.dim() {
            return Err(invalid(format!("boundary function uses x{} in dimension {}", k + 1, field.dim())));
        }
    }
    let mut est = HarmonicEstimate {
        points: grid.to_vec(),
        values: Vec::new(),
        boundary: g.id().to_string(),
        domain: Some(domain.clone()),
        capped: Vec::new(),
        flags: Vec::new(),
        samples: Vec::new(),
    };
    for x in grid {
        let hash = params_hash(&json!({
            "op": "harmonic", "model": model_json(field, params, scheme), "x0": x,
            "domain": domain, "boundary": g.id(), "batch": batch,
        }));
        let runs = run_paths(batch.n, batch.seed, |_, rng| first_exit(field, params, x, domain, scheme, rng, batch.t_cap));
        let vals: Vec<Option<f64>> = runs
            .into_iter()
            .map(|r| r.map(|r| r.exited.then(|| g.value(&r.state_post))))
            .collect::<Result<_>>()?;
        let kept: Vec<f64> = vals.iter().flatten().copied().collect();
        let capped = batch.n - kept.len() as u64;
        if kept.is_empty() {
            return Err(invalid(format!("every path from {x:?} was capped")));
        }
        est.values.push(MCEstimate::from_samples(&kept, batch.seed, hash)?);
        for f in cap_flags(capped, batch.n) {
            est.flags.push(format!("{x:?}: {f}"));
        }
        est.capped.push(capped);
        est.samples.push(vals);
    }
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoelderFit {
    pub beta_hat: f64,
    /// `exp(intercept)` of the log-log line.
    pub c_hat: f64,
    pub r_squared: f64,
    pub pairs_used: usize,
    pub pairs_considered: usize,
}

/// Fits `log|h(x) − h(center)|` against `log(|x − center|/radius)` over
/// grid points within `radius`, keeping only differences larger than three
/// standard errors.
pub fn fit_hoelder(estimate: &HarmonicEstimate, center: &[f64], radius: f64) -> Result<HoelderFit> {
    if !(radius > 0.0) {
        return Err(invalid("radius must be positive"));
    }
    let c = estimate
        .points
        .iter()
        .position(|p| dist(p, center) < 1e-12)
        .ok_or_else(|| invalid("center must be one of the grid points"))?;
    let near: Vec<usize> = (0..estimate.points.len())
        .filter(|&i| i != c)
        .filter(|&i| dist(&estimate.points[i], center) < radius)
        .collect();
    if near.len() < 8 {
        return Err(invalid(format!("need at least 8 grid points within the radius, found {}", near.len())));
    }
    let hc = estimate.values[c].mean;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &i in &near {
        let diff = (estimate.values[i].mean - hc).abs();
        if diff > 0.0 && diff > 3.0 * estimate.difference_stderr(i, c) {
            xs.push((dist(&estimate.points[i], center) / radius).ln());
            ys.push(diff.ln());
        }
    }
    if xs.len() < 4 {
        return Err(Error::FitRefused(format!("only {} of {} differences exceed noise", xs.len(), near.len())));
    }
    let line = fit_line(&xs, &ys, None).map_err(|e| Error::FitRefused(e.to_string()))?;
    Ok(HoelderFit {
        beta_hat: line.slope,
        c_hat: line.intercept.exp(),
        r_squared: line.r_squared,
        pairs_used: xs.len(),
        pairs_considered: near.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Region;

    fn id(d: usize) -> MatrixField {
        MatrixField::identity(d, Region::cube(d, 1e9)).unwrap()
    }

    fn cauchy() -> StableParams {
        StableParams::standard(1.0).unwrap()
    }

    #[test]
    fn tiny_domain_exits_immediately() {
        let dom = Domain::ball(vec![0.0], 1e-6).unwrap();
        let s = PathScheme::fixed_step(1e-4).unwrap();
        let e = estimate_exit_moments(&id(1), &cauchy(), &[0.0], &dom, &s, &Batch::new(2000, 1, 10.0).unwrap(), 3).unwrap();
        assert!(e.mean_tau.mean < 1.1e-4);
        assert!(e.tail.iter().all(|r| r.probability == 0.0));
    }

    #[test]
    fn center_outlasts_boundary() {
        let dom = Domain::ball(vec![0.0], 1.0).unwrap();
        let s = PathScheme::fixed_step(1e-3).unwrap();
        let b = Batch::new(4000, 2, 100.0).unwrap();
        let c = estimate_exit_moments(&id(1), &cauchy(), &[0.0], &dom, &s, &b, 3).unwrap();
        let e = estimate_exit_moments(&id(1), &cauchy(), &[0.9], &dom, &s, &b, 3).unwrap();
        let joint = c.mean_tau.stderr.hypot(e.mean_tau.stderr);
        assert!(c.mean_tau.mean - e.mean_tau.mean > 2.0 * joint);
        assert!(c.flags.is_empty());
    }

    #[test]
    fn cap_fraction_is_flagged() {
        let dom = Domain::ball(vec![0.0], 100.0).unwrap();
        let s = PathScheme::fixed_step(0.01).unwrap();
        let e = estimate_exit_moments(&id(1), &cauchy(), &[0.0], &dom, &s, &Batch::new(200, 3, 1.0).unwrap(), 2).unwrap();
        assert!(e.capped > 100);
        assert_eq!(e.flags.len(), 1);
        assert_eq!(e.tail[1].probability, e.tail[0].probability.min(e.tail[1].probability));
    }

    #[test]
    fn occupation_of_whole_domain_is_exit_time() {
        let dom = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let s = PathScheme::fixed_step(1e-3).unwrap();
        let b = Batch::new(500, 4, 100.0).unwrap();
        let occ = estimate_occupation(&id(2), &cauchy(), &dom, Some(&dom), &[0.2, 0.0], &s, &b).unwrap();
        let tau = estimate_exit_moments(&id(2), &cauchy(), &[0.2, 0.0], &dom, &s, &b, 1).unwrap();
        assert!((occ.estimate.mean - tau.mean_tau.mean).abs() < 1e-9 * tau.mean_tau.mean);
        let none = estimate_occupation(&id(2), &cauchy(), &dom, None, &[0.2, 0.0], &s, &b).unwrap();
        assert_eq!(none.estimate.mean, 0.0);
    }

    #[test]
    fn occupation_grows_sublinearly_with_volume() {
        let dom = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let s = PathScheme::fixed_step(1e-3).unwrap();
        let b = Batch::new(4000, 5, 100.0).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for vol in [1e-1f64, 1e-2, 1e-3] {
            let c = Domain::cube(vec![0.0, 0.0], vol.sqrt() / 2.0).unwrap();
            let o = estimate_occupation(&id(2), &cauchy(), &dom, Some(&c), &[0.0, 0.0], &s, &b).unwrap();
            xs.push(f64::ln(vol));
            ys.push(o.estimate.mean.ln());
        }
        let slope = fit_line(&xs, &ys, None).unwrap().slope;
        assert!(slope > 0.0 && slope <= 1.0, "slope {slope}");
    }

    #[test]
    fn steering_examples() {
        let p = cauchy();
        let spec = SteeringSpec::new(1, 0.0, 0.5, 0.01).unwrap();
        let s = steering_scheme(&p, 2, &spec).unwrap();
        let e = estimate_single_jump_steering(&id(2), &p, &[0.0, 0.0], &spec, &s, &Batch::new(2000, 6, 1.0).unwrap()).unwrap();
        assert!(e.positive_at_99());
        let small = SteeringSpec::new(1, 0.5, 0.3, 1.0).unwrap();
        let s = steering_scheme(&p, 2, &small).unwrap();
        let b = Batch::new(100_000, 7, 1.0).unwrap();
        let a = estimate_single_jump_steering(&id(2), &p, &[0.0, 0.0], &small, &s, &b).unwrap();
        assert!(a.positive_at_99(), "{a:?}");
        let wide = SteeringSpec { gamma: 0.6, ..small };
        let w = estimate_single_jump_steering(&id(2), &p, &[0.0, 0.0], &wide, &s, &b).unwrap();
        assert!(w.mean >= a.mean);
        assert!(SteeringSpec::new(1, 2.0, 0.3, 1.0).is_err());
    }

    #[test]
    fn tube_examples() {
        let p = cauchy();
        let s = PathScheme::fixed_step(1e-3).unwrap();
        let b = Batch::new(2000, 8, 1.0).unwrap();
        let wide = TubeSpec::straight(vec![0.0, 0.0], vec![0.5, 0.0], 1e3, 1.0).unwrap();
        let e = estimate_tube_probability(&id(2), &p, &wide, &[0.0, 0.0], &s, &b).unwrap();
        assert!(e.ci95.0 > 0.99);
        let tube = TubeSpec::straight(vec![0.0, 0.0], vec![0.5, 0.0], 0.5, 1.0).unwrap();
        let run = tube_deviations(&id(2), &p, &tube, &s, &b, f64::INFINITY).unwrap();
        assert!(run.probability(0.5).positive_at_99());
        let mut last = 0.0;
        for eps in [0.1, 0.2, 0.4, 0.8, 1.6] {
            let m = run.probability(eps).mean;
            assert!(m >= last);
            last = m;
        }
        assert!(estimate_tube_probability(&id(2), &p, &tube, &[0.1, 0.0], &s, &b).is_err());
    }

    #[test]
    fn hitting_examples() {
        let p = cauchy();
        let s = PathScheme::fixed_step(1e-3).unwrap();
        let b = Batch::new(1000, 9, 50.0).unwrap();
        let q = Domain::cube(vec![0.0, 0.0], 0.5).unwrap();
        let same = estimate_hitting(&id(2), &p, &q, &q, &[0.1, 0.2], &s, &b).unwrap();
        assert_eq!(same.estimate.mean, 1.0);
        let r = Domain::cube(vec![0.0, 0.0], 0.05).unwrap();
        let inside = estimate_hitting(&id(2), &p, &r, &q, &[0.01, 0.0], &s, &b).unwrap();
        assert_eq!(inside.estimate.mean, 1.0);
        let small = estimate_hitting(&id(2), &p, &r, &q, &[0.2, 0.2], &s, &b).unwrap();
        let big = estimate_hitting(&id(2), &p, &Domain::cube(vec![0.0, 0.0], 0.1).unwrap(), &q, &[0.2, 0.2], &s, &b).unwrap();
        assert!(small.estimate.positive_at_99());
        assert!(big.estimate.mean >= small.estimate.mean);
    }

    #[test]
    fn boundary_functions() {
        assert_eq!(BoundaryFunction::parse("const:2.5").unwrap().value(&[9.0]), 2.5);
        let u = BoundaryFunction::parse("upper:2").unwrap();
        assert_eq!((u.value(&[0.0, 1.0]), u.value(&[0.0, -1.0])), (1.0, 0.0));
        let r = BoundaryFunction::parse("right-of:1:1").unwrap();
        assert_eq!((r.value(&[1.0]), r.value(&[0.99])), (1.0, 0.0));
        let e = BoundaryFunction::parse("expr: sin(x1)").unwrap();
        assert_eq!(e.value(&[0.5]), 0.5f64.sin());
        for bad in ["", "const:x", "upper:0", "right-of:1", "nope:1", "expr:1/x1"] {
            assert!(BoundaryFunction::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn harmonic_examples() {
        let p = cauchy();
        let s = PathScheme::fixed_step(1e-3).unwrap();
        let b = Batch::new(2000, 10, 100.0).unwrap();
        let dom = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let grid = vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![0.0, -0.7]];
        let one = estimate_harmonic(&id(2), &p, &dom, &BoundaryFunction::constant(1.0), &grid, &s, &b).unwrap();
        assert!(one.values.iter().all(|v| v.ci95.0 <= 1.0 && 1.0 <= v.ci95.1));
        let up = BoundaryFunction::parse("upper:2").unwrap();
        let h = estimate_harmonic(&id(2), &p, &dom, &up, &grid[..1], &s, &b).unwrap();
        assert!(h.values[0].ci95.0 <= 0.5 && 0.5 <= h.values[0].ci95.1);
    }

    #[test]
    fn hoelder_on_exact_powers() {
        let center = vec![0.0, 0.0];
        let mut points = vec![center.clone()];
        for k in 1..=10 {
            let r = 0.05 * k as f64;
            let a = k as f64;
            points.push(vec![r * a.cos(), r * a.sin()]);
        }
        let lin: Vec<f64> = points.iter().map(|p| dist(p, &center)).collect();
        let f = fit_hoelder(&HarmonicEstimate::exact(points.clone(), &lin), &center, 1.0).unwrap();
        assert!((f.beta_hat - 1.0).abs() < 1e-6 && (f.r_squared - 1.0).abs() < 1e-6);
        let root: Vec<f64> = lin.iter().map(|v| v.sqrt()).collect();
        let f = fit_hoelder(&HarmonicEstimate::exact(points.clone(), &root), &center, 1.0).unwrap();
        assert!((f.beta_hat - 0.5).abs() < 1e-6);
        let flat = vec![1.0; points.len()];
        assert!(matches!(
            fit_hoelder(&HarmonicEstimate::exact(points.clone(), &flat), &center, 1.0),
            Err(Error::FitRefused(_))
        ));
        assert!(fit_hoelder(&HarmonicEstimate::exact(points, &lin), &center, 0.2).is_err());
    }

    #[test]
    fn estimators_are_deterministic() {
        let p = cauchy();
        let s = PathScheme::jump_adapted(1e-2, 0.2).unwrap();
        let dom = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let b = Batch::new(300, 11, 100.0).unwrap();
        let a = estimate_exit_moments(&id(2), &p, &[0.0, 0.0], &dom, &s, &b, 3).unwrap();
        let c = estimate_exit_moments(&id(2), &p, &[0.0, 0.0], &dom, &s, &b, 3).unwrap();
        assert_eq!(a, c);
        let other = estimate_exit_moments(&id(2), &p, &[0.0, 0.0], &dom, &s, &b.with_seed(12), 3).unwrap();
        assert_ne!(a.mean_tau.mean, other.mean_tau.mean);
        assert_ne!(a.mean_tau.params_hash, other.mean_tau.params_hash);
    }
}
