//! The coefficient matrix `A(x)` and the operators built from it.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::expr::{parse_entry_expression, Expr};
use crate::quad::{gl16, panel};
use crate::stable::StableParams;

/// Axis-aligned box on which the field is declared valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(invalid("region bounds must be nonempty and of equal length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(invalid("region needs finite lower < upper in every coordinate"));
        }
        Ok(Self { lower, upper })
    }

    pub fn cube(d: usize, half_width: f64) -> Self {
        Self { lower: vec![-half_width; d], upper: vec![half_width; d] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lower: self.lower.iter().map(|v| v * factor).collect(),
            upper: self.upper.iter().map(|v| v * factor).collect(),
        }
    }

    fn lerp(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, u))| l + t * (u - l))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    General,
    Constant,
    Identity,
}

/// Continuous, bounded, non-degenerate `d × d` coefficient field.
#[derive(Debug, Clone)]
pub struct MatrixField {
    dim: usize,
    entries: Vec<Expr>,
    region: Region,
    shape: Shape,
    constant: Vec<f64>,
}

impl MatrixField {
    /// Builds a field from row-major entry expressions in `x1..xd`.
    pub fn parse<S: AsRef<str>>(dim: usize, entries: &[S], region: Region) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: entries.len() });
        }
        let exprs = entries
            .iter()
            .enumerate()
            .map(|(k, s)| {
                parse_entry_expression(s.as_ref()).map_err(|source| Error::Expression {
                    row: k / dim + 1,
                    col: k % dim + 1,
                    source,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_exprs(dim, exprs, region)
    }

    pub fn from_exprs(dim: usize, entries: Vec<Expr>, region: Region) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: entries.len() });
        }
        if region.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: region.dim() });
        }
        if let Some(k) = entries.iter().filter_map(Expr::max_var).max() {
            if k >= dim {
                return Err(invalid(format!("entry refers to x{} but dimension is {dim}", k + 1)));
            }
        }
        let mut field = Self { dim, entries, region, shape: Shape::General, constant: Vec::new() };
        if field.entries.iter().all(Expr::is_constant) {
            field.constant = field.entries.iter().map(|e| e.eval(&[])).collect();
            let identity = (0..dim * dim).all(|k| field.constant[k] == if k / dim == k % dim { 1.0 } else { 0.0 });
            field.shape = if identity { Shape::Identity } else { Shape::Constant };
        }
        Ok(field)
    }

    pub fn identity(dim: usize, region: Region) -> Result<Self> {
        let entries = (0..dim * dim)
            .map(|k| Expr::Const(if k / dim == k % dim { 1.0 } else { 0.0 }))
            .collect();
        Self::from_exprs(dim, entries, region)
    }

    pub fn constant(m: &DMatrix<f64>, region: Region) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(invalid("constant field needs a square matrix"));
        }
        let d = m.nrows();
        let entries = (0..d * d).map(|k| Expr::Const(m[(k / d, k % d)])).collect();
        Self::from_exprs(d, entries, region)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn entries(&self) -> &[Expr] {
        &self.entries
    }

    pub fn is_constant(&self) -> bool {
        self.shape != Shape::General
    }

    pub fn is_identity(&self) -> bool {
        self.shape == Shape::Identity
    }

    /// Row-major entry sources in canonical printed form.
    pub fn entry_strings(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.to_string()).collect()
    }

    /// Stable digest of entries and region, used in output metadata.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.dim.to_le_bytes());
        for e in &self.entries {
            h.update(e.to_string().as_bytes());
            h.update([0]);
        }
        for v in self.region.lower.iter().chain(&self.region.upper) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Writes `A(x)` row-major into `out` (length `d²`).
    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) {
        match self.shape {
            Shape::General => {
                for (o, e) in out.iter_mut().zip(&self.entries) {
                    *o = e.eval(x);
                }
            }
            _ => out.copy_from_slice(&self.constant),
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.dim * self.dim];
        self.evaluate_into(x, &mut buf);
        DMatrix::from_row_slice(self.dim, self.dim, &buf)
    }

    /// Like [`evaluate`](Self::evaluate) but also reports probes outside the region.
    pub fn evaluate_checked(&self, x: &[f64]) -> (DMatrix<f64>, Option<RegionWarning>) {
        let warning = (!self.region.contains(x)).then(|| RegionWarning { point: x.to_vec() });
        (self.evaluate(x), warning)
    }

    /// Column `j` of `A(x)`.
    pub fn column(&self, x: &[f64], j: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.entries[i * self.dim + j].eval(x)).collect()
    }

    /// `ℓ(x, u) = Σ_j |u · a_j(x)|^α`.
    pub fn symbol(&self, x: &[f64], u: &[f64], params: &StableParams) -> f64 {
        let a = self.evaluate(x);
        (0..self.dim)
            .map(|j| {
                let dot: f64 = (0..self.dim).map(|i| u[i] * a[(i, j)]).sum();
                dot.abs().powf(params.alpha())
            })
            .sum()
    }

    /// Field `x ↦ A(x/λ)` on the region scaled by `λ`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("scaling factor must be positive, got {lambda}")));
        }
        let entries = self.entries.iter().map(|e| e.scale_variables(1.0 / lambda)).collect();
        Self::from_exprs(self.dim, entries, self.region.scaled(lambda))
    }

    /// Largest entrywise range `max - min` over a grid with `per_axis` points per axis.
    pub fn oscillation(&self, region: &Region, per_axis: usize) -> f64 {
        let per_axis = per_axis.max(2);
        let total = per_axis.pow(self.dim as u32);
        let mut lo = vec![f64::INFINITY; self.dim * self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim * self.dim];
        let mut buf = vec![0.0; self.dim * self.dim];
        let mut unit = vec![0.0; self.dim];
        for idx in 0..total {
            let mut rem = idx;
            for u in unit.iter_mut() {
                *u = (rem % per_axis) as f64 / (per_axis - 1) as f64;
                rem /= per_axis;
            }
            self.evaluate_into(&region.lerp(&unit), &mut buf);
            for k in 0..buf.len() {
                lo[k] = lo[k].min(buf[k]);
                hi[k] = hi[k].max(buf[k]);
            }
        }
        lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0, f64::max)
    }

    /// Probes `det A` at quasi-random points of the region.
    ///
    /// Fails if any probe has `|det| < 1e-12`, or if the determinant
    /// changes sign between probes (by continuity it then vanishes
    /// somewhere in the box).
    pub fn assert_nondegenerate<R: Rng + ?Sized>(&self, sample_count: usize, rng: &mut R) -> Result<NondegeneracyReport> {
        if sample_count == 0 {
            return Err(invalid("sample_count must be at least 1"));
        }
        let d = self.dim;
        let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let mut probes: Vec<Vec<f64>> = Vec::with_capacity(sample_count + (1 << d.min(10)) + 1);
        probes.push(self.region.lerp(&vec![0.5; d]));
        if d <= 10 {
            for corner in 0..(1usize << d) {
                let unit: Vec<f64> = (0..d).map(|i| ((corner >> i) & 1) as f64).collect();
                probes.push(self.region.lerp(&unit));
            }
        }
        for k in 0..sample_count {
            let unit: Vec<f64> = (0..d)
                .map(|i| (radical_inverse(k as u64 + 1, PRIMES[i % PRIMES.len()]) + shift[i]).fract())
                .collect();
            probes.push(self.region.lerp(&unit));
        }

        let mut report = NondegeneracyReport {
            min_abs_det: f64::INFINITY,
            argmin: probes[0].clone(),
            lambda_estimate: 0.0,
            probes: probes.len(),
        };
        let mut sign = 0.0f64;
        for p in &probes {
            let a = self.evaluate(p);
            let det = a.determinant();
            if !(det.abs() >= 1e-12) {
                return Err(Error::Degenerate { point: p.clone(), det });
            }
            if sign != 0.0 && det.signum() != sign {
                return Err(Error::Degenerate { point: p.clone(), det: 0.0 });
            }
            sign = det.signum();
            if det.abs() < report.min_abs_det {
                report.min_abs_det = det.abs();
                report.argmin = p.clone();
            }
            let inv = a.clone().try_inverse().ok_or(Error::Singular)?;
            let bound = a.iter().chain(inv.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
            report.lambda_estimate = report.lambda_estimate.max(bound);
        }
        Ok(report)
    }

    /// Evaluates the generator `ℒf(x)` by quadrature, one axis at a time.
    pub fn apply_generator(
        &self,
        f: &dyn ScalarFunction,
        x: &[f64],
        params: &StableParams,
        quad: &QuadratureSpec,
    ) -> Result<GeneratorValue> {
        quad.validate()?;
        let grad = f.gradient(x).unwrap_or_else(|| central_gradient(f, x, quad.fd_step));
        let levels: Vec<f64> = (0..3)
            .map(|level| {
                (0..self.dim)
                    .map(|j| {
                        let a = self.column(x, j);
                        axis_integral(f, x, &a, &grad, params, quad, 1 << level)
                    })
                    .sum()
            })
            .collect();
        let (q1, q2, q4) = (levels[0], levels[1], levels[2]);
        let coarse = (q2 - q1).abs();
        let fine = (q4 - q2).abs();
        let floor = 1e-11 * (1.0 + q4.abs());
        if fine > floor && coarse > 0.0 && fine / coarse > 0.5 {
            return Err(Error::QuadratureDiverged { ratio: fine / coarse });
        }
        Ok(GeneratorValue { value: q4, error_estimate: fine })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionWarning {
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NondegeneracyReport {
    pub min_abs_det: f64,
    pub argmin: Vec<f64>,
    /// Largest absolute entry of `A` or `A⁻¹` over the probes.
    pub lambda_estimate: f64,
    pub probes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorValue {
    pub value: f64,
    pub error_estimate: f64,
}

/// Test function for the generator. Closures work directly; implement
/// [`gradient`](Self::gradient) to bypass finite differences.
pub trait ScalarFunction: Sync {
    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> ScalarFunction for F {
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Discretization of the generator integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSpec {
    /// Below this `|w|` the integrand is replaced by its second-order Taylor term.
    pub inner_cutoff: f64,
    /// Panels on `[inner_cutoff, 1]`, equally spaced in `log w`.
    pub log_panels: usize,
    /// Panels per unit length on `[1, tail_radius]`.
    pub panels_per_unit: usize,
    /// Beyond this radius the Lévy mass is integrated in closed form.
    pub tail_radius: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { inner_cutoff: 1e-3, log_panels: 16, panels_per_unit: 2, tail_radius: 1000.0, fd_step: 1e-5 }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.log_panels < 16 {
            return Err(invalid("log_panels must be at least 16"));
        }
        if (self.panels_per_unit as f64) * (self.tail_radius - 1.0) < 16.0 {
            return Err(invalid("middle region needs at least 16 panels"));
        }
        if !(self.tail_radius >= 10.0) {
            return Err(invalid("tail_radius must be at least 10"));
        }
        if !(self.inner_cutoff > 0.0 && self.inner_cutoff < 1.0) {
            return Err(invalid("inner_cutoff must lie in (0, 1)"));
        }
        if !(self.fd_step > 0.0) {
            return Err(invalid("fd_step must be positive"));
        }
        Ok(())
    }
}

fn central_gradient(f: &dyn ScalarFunction, x: &[f64], rel_step: f64) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = rel_step * norm.max(1.0);
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f.value(&y);
            y[i] = x[i] - h;
            let down = f.value(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// One axis of the generator, `refine` times the base panel counts.
fn axis_integral(
    f: &dyn ScalarFunction,
    x: &[f64],
    a: &[f64],
    grad: &[f64],
    params: &StableParams,
    quad: &QuadratureSpec,
    refine: usize,
) -> f64 {
    let alpha = params.alpha();
    let c = params.levy_density_constant();
    let rule = gl16();
    let fx = f.value(x);
    let slope: f64 = grad.iter().zip(a).map(|(g, a)| g * a).sum();
    let a_norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut y = vec![0.0; x.len()];
    let mut at = |w: f64| {
        for ((yi, xi), ai) in y.iter_mut().zip(x).zip(a) {
            *yi = xi + ai * w;
        }
        f.value(&y)
    };

    // Inner disc: ½ f''_a w², integrated against the density.
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let t = quad.fd_step * x_norm.max(1.0) / a_norm.max(f64::MIN_POSITIVE);
    let second = (at(t) - 2.0 * fx + at(-t)) / (t * t);
    let eps = quad.inner_cutoff;
    let mut total = 0.5 * second * 2.0 * c * eps.powf(2.0 - alpha) / (2.0 - alpha);

    // [eps, 1] in log w, both signs, compensated.
    let n_log = quad.log_panels * refine;
    let (s0, s1) = (eps.ln(), 0.0);
    let hs = (s1 - s0) / n_log as f64;
    for k in 0..n_log {
        let (a0, b0) = (s0 + k as f64 * hs, s0 + (k + 1) as f64 * hs);
        total += panel(a0, b0, rule, |s| {
            let w = s.exp();
            let g = (at(w) - fx - w * slope) + (at(-w) - fx + w * slope);
            g * c * (-alpha * s).exp()
        });
    }

    // [1, R], both signs, uncompensated.
    let r = quad.tail_radius;
    let n_mid = ((r - 1.0) * quad.panels_per_unit as f64).ceil() as usize * refine;
    let hm = (r - 1.0) / n_mid as f64;
    for k in 0..n_mid {
        let (a0, b0) = (1.0 + k as f64 * hm, 1.0 + (k + 1) as f64 * hm);
        total += panel(a0, b0, rule, |w| (at(w) + at(-w) - 2.0 * fx) * c * w.powf(-1.0 - alpha));
    }

    // [R, ∞): exact Lévy mass c R^{-α}/α per side, with f replaced by its
    // mean over [R/2, R] on that side.
    let n_far = n_mid / 2;
    let hf = 0.5 * r / n_far as f64;
    let mut mean = 0.0;
    for k in 0..n_far {
        let (a0, b0) = (0.5 * r + k as f64 * hf, 0.5 * r + (k + 1) as f64 * hf);
        mean += panel(a0, b0, rule, |w| at(w) + at(-w));
    }
    mean /= 0.5 * r;
    total += (mean - 2.0 * fx) * c * r.powf(-alpha) / alpha;
    total
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while k > 0 {
        out += (k % base) as f64 * f;
        k /= base;
        f *= inv;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::path_stream;
    use std::f64::consts::PI;

    fn square(d: usize, h: f64) -> Region {
        Region::cube(d, h)
    }

    #[test]
    fn evaluates_entries() {
        let f = MatrixField::parse(2, &["1", "0", "0", "1+0.1*sin(x1)"], square(2, 4.0)).unwrap();
        let m = f.evaluate(&[PI / 2.0, 0.0]);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.1]));
        let id = MatrixField::identity(3, square(3, 1.0)).unwrap();
        assert!(id.is_identity());
        assert_eq!(id.evaluate(&[0.3, -0.2, 0.9]), DMatrix::identity(3, 3));
    }

    #[test]
    fn constant_field_is_bit_identical_everywhere() {
        let m = DMatrix::from_row_slice(2, 2, &[1.3, -0.2, 0.7, 2.1]);
        let f = MatrixField::constant(&m, square(2, 5.0)).unwrap();
        assert!(f.is_constant() && !f.is_identity());
        let mut rng = path_stream(1, 0);
        for _ in 0..100 {
            let x = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            assert_eq!(f.evaluate(&x), m);
        }
    }

    #[test]
    fn out_of_region_probe_warns() {
        let f = MatrixField::identity(2, square(2, 1.0)).unwrap();
        assert!(f.evaluate_checked(&[0.5, 0.5]).1.is_none());
        let (m, w) = f.evaluate_checked(&[2.0, 0.0]);
        assert_eq!(m, DMatrix::identity(2, 2));
        assert_eq!(w.unwrap().point, vec![2.0, 0.0]);
    }

    #[test]
    fn rejects_bad_entries() {
        let r = square(2, 1.0);
        assert!(matches!(
            MatrixField::parse(2, &["1", "0", "0", "1/x1"], r.clone()),
            Err(Error::Expression { row: 2, col: 2, .. })
        ));
        assert!(MatrixField::parse(2, &["1", "0", "0"], r.clone()).is_err());
        assert!(MatrixField::parse(2, &["x3", "0", "0", "1"], r).is_err());
    }

    #[test]
    fn nondegeneracy_report() {
        let mut rng = path_stream(4, 0);
        let id = MatrixField::identity(2, square(2, 1.0)).unwrap();
        let rep = id.assert_nondegenerate(100, &mut rng).unwrap();
        assert_eq!(rep.min_abs_det, 1.0);
        assert_eq!(rep.lambda_estimate, 1.0);

        let f = MatrixField::parse(2, &["1", "0", "0", "1 + 0.1*sin(x1)"], square(2, PI)).unwrap();
        let rep = f.assert_nondegenerate(4096, &mut rng).unwrap();
        // Oracle: minimize 1 + 0.1 sin on a fine grid of [-π, π].
        let grid_min = (0..=100_000)
            .map(|k| 1.0 + 0.1 * (-PI + 2.0 * PI * k as f64 / 100_000.0).sin())
            .fold(f64::INFINITY, f64::min);
        assert!((rep.min_abs_det - grid_min).abs() < 1e-4, "{} vs {grid_min}", rep.min_abs_det);

        let bad = MatrixField::parse(2, &["x1", "0", "0", "1"], square(2, 1.0)).unwrap();
        assert!(matches!(bad.assert_nondegenerate(64, &mut rng), Err(Error::Degenerate { .. })));
        assert!(id.assert_nondegenerate(0, &mut rng).is_err());
    }

    #[test]
    fn symbol_examples_and_homogeneity() {
        let p1 = StableParams::standard(1.0).unwrap();
        let p15 = StableParams::standard(1.5).unwrap();
        let id = MatrixField::identity(2, square(2, 1.0)).unwrap();
        assert_eq!(id.symbol(&[0.0, 0.0], &[1.0, 0.0], &p15), 1.0);
        assert_eq!(id.symbol(&[0.0, 0.0], &[1.0, 1.0], &p1), 2.0);
        let two = MatrixField::constant(&(DMatrix::identity(2, 2) * 2.0), square(2, 1.0)).unwrap();
        assert!((two.symbol(&[0.0, 0.0], &[1.0, 0.0], &p15) - 2.828427).abs() < 1e-6);

        let f = MatrixField::parse(2, &["1+0.2*cos(x2)", "0.3", "sin(x1)", "2"], square(2, 3.0)).unwrap();
        let mut rng = path_stream(9, 0);
        for _ in 0..50 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let u = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let lam: f64 = rng.random_range(0.1..10.0);
            let lu = [lam * u[0], lam * u[1]];
            let lhs = f.symbol(&x, &lu, &p15);
            let rhs = lam.powf(1.5) * f.symbol(&x, &u, &p15);
            assert!(((lhs - rhs) / rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_field_substitutes() {
        let f = MatrixField::parse(1, &["sin(x1)"], square(1, 4.0)).unwrap();
        let g = f.scaled(2.0).unwrap();
        assert!((g.evaluate(&[PI])[(0, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(g.region().upper, vec![8.0]);
        let id = MatrixField::identity(2, square(2, 1.0)).unwrap().scaled(3.0).unwrap();
        assert!(id.is_identity());
        assert!(f.scaled(0.0).is_err());
    }

    #[test]
    fn scaling_up_never_increases_oscillation() {
        let f = MatrixField::parse(2, &["1+0.3*sin(3*x1)", "0.2*cos(x2)", "0", "1+abs(x1*x2)*0.1"], square(2, 2.0)).unwrap();
        let region = f.region().clone();
        let base = f.oscillation(&region, 201);
        for lambda in [1.0, 1.5, 2.0, 4.0] {
            let g = f.scaled(lambda).unwrap();
            assert!(g.oscillation(&region, 201) <= base + 1e-3, "lambda={lambda}");
        }
    }

    #[test]
    fn generator_kills_constants_and_linear_functions() {
        let quad = QuadratureSpec::default();
        let id = MatrixField::identity(2, square(2, 5.0)).unwrap();
        for alpha in [0.6, 1.0, 1.7] {
            let p = StableParams::standard(alpha).unwrap();
            let c = id.apply_generator(&|_: &[f64]| 3.0, &[0.2, 0.1], &p, &quad).unwrap();
            assert!(c.value.abs() < 1e-10);
            let lin = id.apply_generator(&|x: &[f64]| 2.0 * x[0] - x[1], &[0.2, 0.1], &p, &quad).unwrap();
            // Residual is finite-difference roundoff in the Taylor term.
            assert!(lin.value.abs() < 1e-6, "alpha={alpha}: {}", lin.value);
        }
    }

    #[test]
    fn generator_on_cosine_matches_symbol() {
        let quad = QuadratureSpec::default();
        let id = MatrixField::identity(2, square(2, 5.0)).unwrap();
        for alpha in [0.5, 0.8, 1.0, 1.3, 1.8] {
            let p = StableParams::standard(alpha).unwrap();
            let v = id.apply_generator(&|x: &[f64]| x[0].cos(), &[0.0, 0.0], &p, &quad).unwrap();
            assert!((v.value + 1.0).abs() < 1e-3, "alpha={alpha}: {}", v.value);
        }
    }

    struct CosWithGradient;

    impl ScalarFunction for CosWithGradient {
        fn value(&self, x: &[f64]) -> f64 {
            (x[0] - 2.0 * x[1]).cos()
        }

        fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
            let s = (x[0] - 2.0 * x[1]).sin();
            Some(vec![-s, 2.0 * s])
        }
    }

    #[test]
    fn analytic_gradient_handle_is_used() {
        let quad = QuadratureSpec::default();
        let p = StableParams::standard(1.2).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, -0.3, 0.8]);
        let f = MatrixField::constant(&m, square(2, 5.0)).unwrap();
        let x = [0.3, -0.4];
        let v = f.apply_generator(&CosWithGradient, &x, &p, &quad).unwrap();
        let expected = -f.symbol(&x, &[1.0, -2.0], &p) * CosWithGradient.value(&x);
        assert!((v.value - expected).abs() < 1e-3);
    }

    #[test]
    fn quadrature_spec_bounds() {
        let mut q = QuadratureSpec::default();
        assert!(q.validate().is_ok());
        q.log_panels = 8;
        assert!(q.validate().is_err());
        let q = QuadratureSpec { tail_radius: 5.0, ..Default::default() };
        assert!(q.validate().is_err());
    }
}
