//! Path simulation for `dX = A(X−) dZ`.
//!
//! Two schemes are available. Fixed-step mode applies exact stable
//! increments on a regular grid. Jump-adapted mode places every driver
//! jump larger than β at its exact Poisson time and moves the state
//! between jumps with a Gaussian surrogate whose variance matches the
//! small-jump part; paths from this mode are flagged accordingly.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::MatrixField;
use crate::stable::{JumpEvent, StableParams, TruncationScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    FixedStep,
    JumpAdapted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathScheme {
    pub mode: Mode,
    pub dt: f64,
    pub truncation: Option<TruncationScheme>,
    pub max_steps: u64,
}

pub const DEFAULT_MAX_STEPS: u64 = 50_000_000;

impl PathScheme {
    pub fn fixed_step(dt: f64) -> Result<Self> {
        let s = Self { mode: Mode::FixedStep, dt, truncation: None, max_steps: DEFAULT_MAX_STEPS };
        s.validate()?;
        Ok(s)
    }

    pub fn jump_adapted(dt: f64, beta: f64) -> Result<Self> {
        let s = Self {
            mode: Mode::JumpAdapted,
            dt,
            truncation: Some(TruncationScheme::new(beta)?),
            max_steps: DEFAULT_MAX_STEPS,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Result<Self> {
        self.max_steps = max_steps;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dt(mut self, dt: f64) -> Result<Self> {
        self.dt = dt;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps must be at least 1"));
        }
        match (self.mode, &self.truncation) {
            (Mode::FixedStep, Some(_)) => Err(invalid("truncation is only used in jump-adapted mode")),
            (Mode::JumpAdapted, None) => Err(invalid("jump-adapted mode needs a truncation threshold")),
            (_, Some(t)) if !(t.beta > 0.0) => Err(invalid("beta must be positive")),
            _ => Ok(()),
        }
    }

    pub fn uses_gaussian_surrogate(&self) -> bool {
        self.mode == Mode::JumpAdapted
    }
}

/// Open ball or open box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Domain {
    Ball { center: Vec<f64>, radius: f64 },
    Box { center: Vec<f64>, half_widths: Vec<f64> },
}

impl Domain {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let d = Domain::Ball { center, radius };
        d.validate()?;
        Ok(d)
    }

    pub fn cube(center: Vec<f64>, half_width: f64) -> Result<Self> {
        let half_widths = vec![half_width; center.len()];
        let d = Domain::Box { center, half_widths };
        d.validate()?;
        Ok(d)
    }

    pub fn boxed(center: Vec<f64>, half_widths: Vec<f64>) -> Result<Self> {
        let d = Domain::Box { center, half_widths };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Ball { center, radius } => {
                if center.is_empty() || !(*radius > 0.0) {
                    return Err(invalid("ball needs a center and a positive radius"));
                }
            }
            Domain::Box { center, half_widths } => {
                if center.is_empty() || center.len() != half_widths.len() || half_widths.iter().any(|h| !(*h > 0.0)) {
                    return Err(invalid("box needs matching center and positive half-widths"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { center, .. } | Domain::Box { center, .. } => center.len(),
        }
    }

    pub fn center(&self) -> &[f64] {
        match self {
            Domain::Ball { center, .. } | Domain::Box { center, .. } => center,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Ball { center, radius } => {
                x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() < radius * radius
            }
            Domain::Box { center, half_widths } => {
                x.iter().zip(center).zip(half_widths).all(|((a, c), h)| (a - c).abs() < *h)
            }
        }
    }

    /// Lebesgue measure.
    pub fn volume(&self) -> f64 {
        match self {
            Domain::Ball { center, radius } => {
                let d = center.len() as f64;
                std::f64::consts::PI.powf(d / 2.0) / statrs::function::gamma::gamma(d / 2.0 + 1.0) * radius.powf(d)
            }
            Domain::Box { half_widths, .. } => half_widths.iter().map(|h| 2.0 * h).product(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Step,
    Jump(JumpEvent),
}

/// Steps one path forward event by event.
///
/// After each call to [`advance`](Walker::advance), `state()` holds `X_t`,
/// `pre_state()` holds `X_{t−}` and `previous()` the state recorded at the
/// preceding event. In fixed-step mode, and for Gaussian sub-steps,
/// `pre_state() == previous()`. For a large jump the pre-jump state is the
/// result of the Gaussian motion up to the jump time.
pub struct Walker<'a, R: Rng> {
    field: &'a MatrixField,
    params: &'a StableParams,
    scheme: &'a PathScheme,
    rng: R,
    d: usize,
    time: f64,
    steps: u64,
    state: Vec<f64>,
    pre: Vec<f64>,
    prev: Vec<f64>,
    matrix: Vec<f64>,
    noise: Vec<f64>,
    next_jump: f64,
    jump_rate: f64,
    small_var_rate: f64,
    out_of_region: u64,
}

impl<'a, R: Rng> Walker<'a, R> {
    pub fn new(field: &'a MatrixField, params: &'a StableParams, scheme: &'a PathScheme, x0: &[f64], mut rng: R) -> Result<Self> {
        scheme.validate()?;
        let d = field.dim();
        if x0.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x0.len() });
        }
        let mut matrix = vec![0.0; d * d];
        if field.is_constant() {
            field.evaluate_into(x0, &mut matrix);
        }
        let (jump_rate, small_var_rate, next_jump) = match scheme.truncation {
            Some(t) if scheme.mode == Mode::JumpAdapted => {
                let rate = d as f64 * params.large_jump_rate(&t);
                let first: f64 = Exp1.sample(&mut rng);
                (rate, params.small_jump_variance(&t, 1.0), first / rate)
            }
            _ => (0.0, 0.0, f64::INFINITY),
        };
        Ok(Self {
            field,
            params,
            scheme,
            rng,
            d,
            time: 0.0,
            steps: 0,
            state: x0.to_vec(),
            pre: x0.to_vec(),
            prev: x0.to_vec(),
            matrix,
            noise: vec![0.0; d],
            next_jump,
            jump_rate,
            small_var_rate,
            out_of_region: 0,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn pre_state(&self) -> &[f64] {
        &self.pre
    }

    pub fn previous(&self) -> &[f64] {
        &self.prev
    }

    /// Evaluations of `A` at points outside the field's region so far.
    pub fn out_of_region_evaluations(&self) -> u64 {
        self.out_of_region
    }

    /// True if the last event was stopped by the step cap.
    pub fn capped(&self) -> bool {
        self.steps >= self.scheme.max_steps
    }

    fn load_matrix(&mut self, at_pre: bool) {
        if self.field.is_constant() {
            return;
        }
        let x = if at_pre { &self.pre } else { &self.state };
        if !self.field.region().contains(x) {
            self.out_of_region += 1;
        }
        self.field.evaluate_into(x, &mut self.matrix);
    }

    /// `state += A · noise`, with `A` evaluated at the current state.
    fn apply_noise(&mut self) {
        if self.field.is_identity() {
            for (s, n) in self.state.iter_mut().zip(&self.noise) {
                *s += n;
            }
            return;
        }
        self.load_matrix(false);
        let d = self.d;
        for i in 0..d {
            let row = &self.matrix[i * d..(i + 1) * d];
            let inc: f64 = row.iter().zip(&self.noise).map(|(a, n)| a * n).sum();
            self.state[i] += inc;
        }
    }

    /// Step to the next grid point, absorbing a remainder below `1e-9·dt`.
    fn grid_step(&self, t_limit: f64) -> f64 {
        let rest = t_limit - self.time;
        if rest <= self.scheme.dt * (1.0 + 1e-9) {
            rest
        } else {
            self.scheme.dt
        }
    }

    /// Advances to the next event not later than `t_limit`. Returns `None`
    /// when `t_limit` is reached or the step cap is exhausted.
    pub fn advance(&mut self, t_limit: f64) -> Option<EventKind> {
        if self.time >= t_limit || self.steps >= self.scheme.max_steps {
            return None;
        }
        self.steps += 1;
        self.prev.copy_from_slice(&self.state);
        match self.scheme.mode {
            Mode::FixedStep => {
                let h = self.grid_step(t_limit);
                for j in 0..self.d {
                    self.noise[j] = self.params.sample_increment(h, &mut self.rng);
                }
                self.apply_noise();
                self.time += h;
                self.pre.copy_from_slice(&self.prev);
                Some(EventKind::Step)
            }
            Mode::JumpAdapted => {
                let grid_end = self.time + self.grid_step(t_limit);
                let jumps = self.next_jump <= grid_end;
                let target = if jumps { self.next_jump } else { grid_end };
                let h = target - self.time;
                if self.small_var_rate > 0.0 && h > 0.0 {
                    let sd = (self.small_var_rate * h).sqrt();
                    for j in 0..self.d {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        self.noise[j] = sd * z;
                    }
                    self.apply_noise();
                }
                self.time = target;
                if !jumps {
                    self.pre.copy_from_slice(&self.prev);
                    return Some(EventKind::Step);
                }
                self.pre.copy_from_slice(&self.state);
                let truncation = self.scheme.truncation.expect("validated");
                let k = self.rng.random_range(0..self.d);
                let size = self.params.sample_large_jump_size(&truncation, &mut self.rng);
                self.load_matrix(true);
                let d = self.d;
                if self.field.is_identity() {
                    self.state[k] = self.pre[k] + size;
                } else {
                    for i in 0..d {
                        self.state[i] = self.pre[i] + self.matrix[i * d + k] * size;
                    }
                }
                let gap: f64 = Exp1.sample(&mut self.rng);
                self.next_jump = self.time + gap / self.jump_rate;
                Some(EventKind::Jump(JumpEvent { time: self.time, coordinate: k + 1, size }))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppliedJump {
    pub event: JumpEvent,
    /// Index into `PathSample::states` of the post-jump state.
    pub index: usize,
    pub pre_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathMetadata {
    pub scheme: PathScheme,
    pub seed: Option<u64>,
    pub path_index: Option<u64>,
    pub gaussian_surrogate: bool,
    pub capped: bool,
    pub out_of_region_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub jumps: Vec<AppliedJump>,
    /// Index of the first state outside the exit domain, if one was given and left.
    pub exit_index: Option<usize>,
    pub metadata: PathMetadata,
}

fn check_start(field: &MatrixField, x0: &[f64]) -> Result<()> {
    if x0.len() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), got: x0.len() });
    }
    if !field.region().contains(x0) {
        return Err(invalid(format!("start point {x0:?} lies outside the field region")));
    }
    Ok(())
}

/// Simulates `X` on `[0, horizon]`, recording every event.
pub fn simulate_path<R: Rng>(
    field: &MatrixField,
    params: &StableParams,
    x0: &[f64],
    horizon: f64,
    scheme: &PathScheme,
    rng: R,
) -> Result<PathSample> {
    record_path(field, params, x0, horizon, scheme, rng, None)
}

/// As [`simulate_path`], stopping at the first exit from `domain` if given.
pub fn record_path<R: Rng>(
    field: &MatrixField,
    params: &StableParams,
    x0: &[f64],
    horizon: f64,
    scheme: &PathScheme,
    rng: R,
    domain: Option<&Domain>,
) -> Result<PathSample> {
    check_start(field, x0)?;
    if !(horizon > 0.0) {
        return Err(invalid("horizon must be positive"));
    }
    let mut w = Walker::new(field, params, scheme, x0, rng)?;
    let mut times = vec![0.0];
    let mut states = vec![x0.to_vec()];
    let mut jumps = Vec::new();
    let mut exit_index = None;
    while let Some(kind) = w.advance(horizon) {
        times.push(w.time());
        states.push(w.state().to_vec());
        if let EventKind::Jump(event) = kind {
            jumps.push(AppliedJump { event, index: states.len() - 1, pre_state: w.pre_state().to_vec() });
        }
        if let Some(dom) = domain {
            if !dom.contains(w.pre_state()) || !dom.contains(w.state()) {
                exit_index = Some(states.len() - 1);
                break;
            }
        }
    }
    let capped = w.capped() && w.time() < horizon && exit_index.is_none();
    Ok(PathSample {
        times,
        states,
        jumps,
        exit_index,
        metadata: PathMetadata {
            scheme: *scheme,
            seed: None,
            path_index: None,
            gaussian_surrogate: scheme.uses_gaussian_surrogate(),
            capped,
            out_of_region_evaluations: w.out_of_region_evaluations(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitRecord {
    pub exited: bool,
    pub tau: f64,
    /// `X_{τ−}`: last in-domain state.
    pub state_pre: Vec<f64>,
    /// `X_τ`: first state outside the domain.
    pub state_post: Vec<f64>,
    pub steps_used: u64,
    /// Step cap reached before `t_cap`.
    pub capped: bool,
    /// The large jump that caused the exit, if any.
    pub exit_jump: Option<JumpEvent>,
}

/// Runs until `X` leaves `domain` or `t_cap` is reached.
///
/// In fixed-step mode exit is only detected at grid points, which biases
/// `τ` upward by at most one step per detection.
pub fn first_exit<R: Rng>(
    field: &MatrixField,
    params: &StableParams,
    x0: &[f64],
    domain: &Domain,
    scheme: &PathScheme,
    rng: R,
    t_cap: f64,
) -> Result<ExitRecord> {
    if !domain.contains(x0) {
        return Err(invalid(format!("start point {x0:?} is not inside the domain")));
    }
    if domain.dim() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), got: domain.dim() });
    }
    let mut w = Walker::new(field, params, scheme, x0, rng)?;
    Ok(run_to_exit(&mut w, domain, t_cap))
}

pub(crate) fn run_to_exit<R: Rng>(w: &mut Walker<'_, R>, domain: &Domain, t_cap: f64) -> ExitRecord {
    while let Some(kind) = w.advance(t_cap) {
        if let Some(rec) = exit_check(w, kind, domain) {
            return rec;
        }
    }
    ExitRecord {
        exited: false,
        tau: w.time(),
        state_pre: w.state().to_vec(),
        state_post: w.state().to_vec(),
        steps_used: w.steps(),
        capped: w.capped() && w.time() < t_cap,
        exit_jump: None,
    }
}

pub(crate) fn exit_check<R: Rng>(w: &Walker<'_, R>, kind: EventKind, domain: &Domain) -> Option<ExitRecord> {
    let record = |pre: &[f64], post: &[f64], jump| ExitRecord {
        exited: true,
        tau: w.time(),
        state_pre: pre.to_vec(),
        state_post: post.to_vec(),
        steps_used: w.steps(),
        capped: false,
        exit_jump: jump,
    };
    if let EventKind::Jump(ev) = kind {
        if !domain.contains(w.pre_state()) {
            return Some(record(w.previous(), w.pre_state(), None));
        }
        if !domain.contains(w.state()) {
            return Some(record(w.pre_state(), w.state(), Some(ev)));
        }
        return None;
    }
    (!domain.contains(w.state())).then(|| record(w.pre_state(), w.state(), None))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HitOutcome {
    Hit,
    Exited,
    /// Neither happened before `t_cap` or the step cap.
    Capped,
}

/// Whether `X` enters `target` strictly before leaving `container`.
///
/// The returned record describes the exit when the outcome is `Exited`;
/// for `Hit` its `tau` is the hitting time and `state_post` the first
/// state inside the target.
pub fn first_hit_before_exit<R: Rng>(
    field: &MatrixField,
    params: &StableParams,
    x0: &[f64],
    target: &Domain,
    container: &Domain,
    scheme: &PathScheme,
    rng: R,
    t_cap: f64,
) -> Result<(HitOutcome, ExitRecord)> {
    if !container.contains(x0) {
        return Err(invalid("start point must lie in the container"));
    }
    if target.contains(x0) {
        return Ok((
            HitOutcome::Hit,
            ExitRecord {
                exited: false,
                tau: 0.0,
                state_pre: x0.to_vec(),
                state_post: x0.to_vec(),
                steps_used: 0,
                capped: false,
                exit_jump: None,
            },
        ));
    }
    let mut w = Walker::new(field, params, scheme, x0, rng)?;
    while let Some(kind) = w.advance(t_cap) {
        // Check X_{t−} first when it is a distinct intermediate point.
        let mut points: [Option<(&[f64], &[f64])>; 2] = [None, None];
        if let EventKind::Jump(_) = kind {
            points[0] = Some((w.previous(), w.pre_state()));
        }
        points[1] = Some((w.pre_state(), w.state()));
        for (before, point) in points.into_iter().flatten() {
            let rec = |exited| ExitRecord {
                exited,
                tau: w.time(),
                state_pre: before.to_vec(),
                state_post: point.to_vec(),
                steps_used: w.steps(),
                capped: false,
                exit_jump: None,
            };
            if target.contains(point) {
                return Ok((HitOutcome::Hit, rec(false)));
            }
            if !container.contains(point) {
                return Ok((HitOutcome::Exited, rec(true)));
            }
        }
    }
    Ok((
        HitOutcome::Capped,
        ExitRecord {
            exited: false,
            tau: w.time(),
            state_pre: w.state().to_vec(),
            state_post: w.state().to_vec(),
            steps_used: w.steps(),
            capped: w.capped() && w.time() < t_cap,
            exit_jump: None,
        },
    ))
}

/// The field `x ↦ A(x/λ)` driving `λ X_{t/λ^α}`.
pub fn scaled_field(field: &MatrixField, lambda: f64) -> Result<MatrixField> {
    field.scaled(lambda)
}

/// Writes paths as CSV: `path_id,t,x1,...,xd,event`.
pub fn write_paths_csv<W: Write>(mut out: W, paths: &[(u64, PathSample)]) -> Result<()> {
    let d = paths.first().map(|(_, p)| p.states[0].len()).unwrap_or(0);
    let mut header = String::from("path_id,t");
    for i in 1..=d {
        header.push_str(&format!(",x{i}"));
    }
    header.push_str(",event");
    writeln!(out, "{header}")?;
    for (id, path) in paths {
        let mut jump_at = path.jumps.iter().peekable();
        for (k, (t, x)) in path.times.iter().zip(&path.states).enumerate() {
            let mut event = String::from("step");
            if let Some(j) = jump_at.peek() {
                if j.index == k {
                    event = format!("jump:{}", j.event.coordinate);
                    jump_at.next();
                }
            }
            if path.exit_index == Some(k) {
                event = "exit".to_string();
            }
            write!(out, "{id},{t:?}")?;
            for v in x {
                write!(out, ",{v:?}")?;
            }
            writeln!(out, ",{event}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Region;
    use crate::rng::path_stream;
    use nalgebra::{DMatrix, DVector};

    fn id(d: usize) -> MatrixField {
        MatrixField::identity(d, Region::cube(d, 1e9)).unwrap()
    }

    #[test]
    fn identity_path_reproduces_driver() {
        let p = StableParams::standard(1.3).unwrap();
        let scheme = PathScheme::fixed_step(0.01).unwrap();
        let path = simulate_path(&id(1), &p, &[0.5], 1.0, &scheme, path_stream(1, 0)).unwrap();
        let mut rng = path_stream(1, 0);
        let mut x = 0.5;
        for k in 1..path.times.len() {
            let rest = 1.0 - path.times[k - 1];
            let h = if rest <= 0.01 * (1.0 + 1e-9) { rest } else { 0.01 };
            x += p.sample_increment(h, &mut rng);
            assert_eq!(path.states[k][0], x);
        }
        assert_eq!(path.times.len(), 101);
        assert!(path.times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(path.states[0], vec![0.5]);
    }

    #[test]
    fn constant_field_is_linear_in_the_driver() {
        let p = StableParams::standard(0.9).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.25, 2.0]);
        let field = MatrixField::constant(&m, Region::cube(2, 1e9)).unwrap();
        let scheme = PathScheme::fixed_step(0.05).unwrap();
        let path = simulate_path(&field, &p, &[0.0, 0.0], 1.0, &scheme, path_stream(2, 5)).unwrap();
        let mut rng = path_stream(2, 5);
        let mut z = DVector::zeros(2);
        let mut x = [0.0, 0.0];
        for k in 1..path.times.len() {
            let dz = DVector::from_iterator(2, (0..2).map(|_| p.sample_increment(0.05, &mut rng)));
            for i in 0..2 {
                x[i] += m[(i, 0)] * dz[0] + m[(i, 1)] * dz[1];
            }
            z += dz;
            assert_eq!(path.states[k], x.to_vec());
            let mz = &m * &z;
            for i in 0..2 {
                assert!((mz[i] - x[i]).abs() <= 1e-9 * (1.0 + mz[i].abs()));
            }
        }
    }

    #[test]
    fn huge_beta_means_no_jumps() {
        let p = StableParams::standard(1.0).unwrap();
        let scheme = PathScheme::jump_adapted(0.01, 1e6).unwrap();
        let with_jumps = (0..1000)
            .filter(|&i| !simulate_path(&id(2), &p, &[0.0, 0.0], 1.0, &scheme, path_stream(3, i)).unwrap().jumps.is_empty())
            .count();
        assert!(with_jumps <= 1);
    }

    #[test]
    fn jump_adapted_records_exact_jumps() {
        let p = StableParams::standard(1.0).unwrap();
        let scheme = PathScheme::jump_adapted(0.05, 0.2).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 0.7]);
        let field = MatrixField::constant(&m, Region::cube(2, 1e9)).unwrap();
        let path = simulate_path(&field, &p, &[0.0, 0.0], 3.0, &scheme, path_stream(4, 0)).unwrap();
        assert!(path.metadata.gaussian_surrogate);
        assert!(!path.jumps.is_empty());
        assert!(path.times.windows(2).all(|w| w[0] < w[1]));
        for j in &path.jumps {
            assert!(j.event.size.abs() > 0.2);
            let k = j.event.coordinate - 1;
            let post = &path.states[j.index];
            for i in 0..2 {
                assert_eq!(post[i], j.pre_state[i] + m[(i, k)] * j.event.size);
            }
        }
    }

    #[test]
    fn far_boundary_is_not_reached() {
        let p = StableParams::standard(1.0).unwrap();
        let scheme = PathScheme::fixed_step(0.01).unwrap();
        let dom = Domain::ball(vec![0.0], 1e6).unwrap();
        for i in 0..100 {
            let rec = first_exit(&id(1), &p, &[0.0], &dom, &scheme, path_stream(5, i), 1.0).unwrap();
            assert!(!rec.exited);
            assert!(!rec.capped);
        }
    }

    #[test]
    fn exit_record_invariants() {
        let p = StableParams::standard(1.0).unwrap();
        let dom = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let field = MatrixField::parse(2, &["1", "0.2*sin(x2)", "0", "1+0.1*cos(x1)"], Region::cube(2, 1e9)).unwrap();
        for scheme in [PathScheme::fixed_step(0.01).unwrap(), PathScheme::jump_adapted(0.01, 0.3).unwrap()] {
            let mut by_jump = 0;
            for i in 0..300 {
                let rec = first_exit(&field, &p, &[0.1, 0.0], &dom, &scheme, path_stream(6, i), 100.0).unwrap();
                assert!(rec.exited);
                assert!(!dom.contains(&rec.state_post));
                assert!(dom.contains(&rec.state_pre));
                if let Some(j) = rec.exit_jump {
                    by_jump += 1;
                    let a = field.evaluate(&rec.state_pre);
                    let k = j.coordinate - 1;
                    for i in 0..2 {
                        assert_eq!(rec.state_post[i], rec.state_pre[i] + a[(i, k)] * j.size);
                    }
                }
            }
            if scheme.mode == Mode::JumpAdapted {
                assert!(by_jump > 0);
            }
        }
    }

    #[test]
    fn exit_is_monotone_in_the_domain() {
        let p = StableParams::standard(1.2).unwrap();
        let scheme = PathScheme::fixed_step(0.01).unwrap();
        let small = Domain::ball(vec![0.0, 0.0], 0.5).unwrap();
        let large = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        for i in 0..200 {
            let a = first_exit(&id(2), &p, &[0.1, 0.1], &small, &scheme, path_stream(7, i), 50.0).unwrap();
            let b = first_exit(&id(2), &p, &[0.1, 0.1], &large, &scheme, path_stream(7, i), 50.0).unwrap();
            assert!(b.tau >= a.tau);
        }
    }

    #[test]
    fn step_cap_is_reported() {
        let p = StableParams::standard(1.0).unwrap();
        let scheme = PathScheme::fixed_step(0.001).unwrap().with_max_steps(10).unwrap();
        let dom = Domain::ball(vec![0.0], 1e6).unwrap();
        let rec = first_exit(&id(1), &p, &[0.0], &dom, &scheme, path_stream(1, 1), 1.0).unwrap();
        assert!(rec.capped && !rec.exited);
        assert_eq!(rec.steps_used, 10);
        let path = simulate_path(&id(1), &p, &[0.0], 1.0, &scheme, path_stream(1, 1)).unwrap();
        assert!(path.metadata.capped);
        assert_eq!(path.states.len(), 11);
    }

    #[test]
    fn hitting_edge_cases() {
        let p = StableParams::standard(1.0).unwrap();
        let scheme = PathScheme::fixed_step(0.01).unwrap();
        let container = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let target = Domain::ball(vec![0.0, 0.0], 0.25).unwrap();
        let (o, rec) =
            first_hit_before_exit(&id(2), &p, &[0.1, 0.0], &target, &container, &scheme, path_stream(1, 0), 10.0).unwrap();
        assert_eq!(o, HitOutcome::Hit);
        assert_eq!(rec.tau, 0.0);
        let (o, _) =
            first_hit_before_exit(&id(2), &p, &[0.9, 0.0], &container, &container, &scheme, path_stream(1, 0), 10.0)
                .unwrap();
        assert_eq!(o, HitOutcome::Hit);
        let mut hits = 0;
        for i in 0..500 {
            let (o, rec) =
                first_hit_before_exit(&id(2), &p, &[0.5, 0.0], &target, &container, &scheme, path_stream(2, i), 10.0)
                    .unwrap();
            match o {
                HitOutcome::Hit => {
                    hits += 1;
                    assert!(target.contains(&rec.state_post));
                }
                HitOutcome::Exited => assert!(!container.contains(&rec.state_post)),
                HitOutcome::Capped => panic!("unexpected cap"),
            }
        }
        assert!(hits > 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = StableParams::standard(1.0).unwrap();
        assert!(PathScheme::fixed_step(0.0).is_err());
        assert!(PathScheme::fixed_step(0.1).unwrap().with_max_steps(0).is_err());
        assert!(PathScheme::jump_adapted(0.1, -1.0).is_err());
        let scheme = PathScheme::fixed_step(0.1).unwrap();
        let small = MatrixField::identity(1, Region::cube(1, 1.0)).unwrap();
        assert!(simulate_path(&small, &p, &[2.0], 1.0, &scheme, path_stream(0, 0)).is_err());
        let dom = Domain::ball(vec![0.0], 1.0).unwrap();
        assert!(first_exit(&small, &p, &[1.5], &dom, &scheme, path_stream(0, 0), 1.0).is_err());
        assert!(Domain::ball(vec![0.0], 0.0).is_err());
        assert!(Domain::boxed(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn csv_dump_format() {
        let p = StableParams::standard(1.0).unwrap();
        let scheme = PathScheme::jump_adapted(0.25, 0.1).unwrap();
        let dom = Domain::ball(vec![0.0, 0.0], 0.8).unwrap();
        let path = record_path(&id(2), &p, &[0.0, 0.0], 5.0, &scheme, path_stream(9, 9), Some(&dom)).unwrap();
        let mut buf = Vec::new();
        write_paths_csv(&mut buf, &[(3, path.clone())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("path_id,t,x1,x2,event"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), path.times.len());
        assert!(rows.iter().all(|r| r.starts_with("3,") && r.split(',').count() == 5));
        if path.exit_index.is_some() {
            assert!(rows.last().unwrap().ends_with(",exit"));
        }
        assert_eq!(rows.iter().filter(|r| r.contains(",jump:")).count() + path.exit_index.map_or(0, |k| {
            usize::from(path.jumps.iter().any(|j| j.index == k))
        }), path.jumps.len());
    }
}
