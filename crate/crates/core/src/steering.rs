//! Projection steps and the greedy path-following planner.
//!
//! A target displacement `v` is reduced by repeatedly projecting it onto the
//! column `A e_k` best aligned with it. Each such step is what a single
//! large jump of driver `k` can achieve, and the residual shrinks by a
//! factor bounded away from one.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::MatrixField;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Projection of `v` onto the line spanned by `u`.
pub fn project(v: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    if v.len() != u.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let uu = dot(u, u);
    if !(uu > 0.0) {
        return Err(invalid("cannot project onto the zero vector"));
    }
    let c = dot(v, u) / uu;
    Ok(u.iter().map(|x| c * x).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionStep {
    /// Chosen axis, 1-based.
    pub k: usize,
    /// Coefficient `r` with `p = r · A e_k`.
    pub coefficient: f64,
    pub p: Vec<f64>,
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    /// `|v − p| / |v|`.
    pub contraction: f64,
    /// `|(Aᵀv)_k|`, the largest entry of `|Aᵀv|`.
    pub alignment: f64,
}

/// Largest absolute entry of `A` and of `A⁻¹`.
pub fn entry_bound(a: &DMatrix<f64>) -> Result<f64> {
    let inv = a.clone().try_inverse().ok_or(Error::Singular)?;
    Ok(a.iter().chain(inv.iter()).fold(0.0f64, |m, x| m.max(x.abs())))
}

/// A-priori contraction bound `√(1 − η²)` with `η = 1/(d^{5/2} Λ²)`, valid
/// for any `A` whose entries and inverse entries are bounded by `Λ`.
///
/// `|Aᵀv| ≥ |v|/(dΛ)`, the best coordinate carries at least `1/d` of it
/// and `|A e_k| ≤ √d Λ`, so the projection keeps at least `η |v|`.
pub fn contraction_bound(d: usize, lambda: f64) -> f64 {
    let eta = 1.0 / ((d as f64).powf(2.5) * lambda * lambda);
    (1.0 - eta * eta).max(0.0).sqrt()
}

/// Projects `v` onto the column of `A` maximizing `|(Aᵀv)_k|`. Ties go to
/// the lowest index.
pub fn best_column_step(a: &DMatrix<f64>, v: &[f64]) -> Result<ProjectionStep> {
    let d = a.nrows();
    if a.ncols() != d || v.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: v.len() });
    }
    let det = a.determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(Error::Singular);
    }
    let vnorm = norm(v);
    if !(vnorm > 0.0) {
        return Err(invalid("displacement must be nonzero"));
    }
    let mut best = (0, -1.0);
    for k in 0..d {
        let b = (0..d).map(|i| a[(i, k)] * v[i]).sum::<f64>().abs();
        if b > best.1 {
            best = (k, b);
        }
    }
    let (k, alignment) = best;
    let u: Vec<f64> = a.column(k).iter().copied().collect();
    let coefficient = dot(v, &u) / dot(&u, &u);
    let p: Vec<f64> = u.iter().map(|x| coefficient * x).collect();
    let residual: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a - b).collect();
    let residual_norm = norm(&residual);
    Ok(ProjectionStep {
        k: k + 1,
        coefficient,
        p,
        residual,
        residual_norm,
        contraction: residual_norm / vnorm,
        alignment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stage {
    /// 1-based axis.
    pub axis: usize,
    /// Signed jump size along `A e_axis`.
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentPlan {
    pub stages: Vec<Stage>,
    /// `|target − predicted|` before the first stage and after each stage.
    pub residuals: Vec<f64>,
    pub max_contraction: f64,
}

impl SegmentPlan {
    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().expect("at least the initial residual")
    }
}

/// Residuals below this fraction of the initial one end the plan.
const PLAN_TOLERANCE: f64 = 1e-15;

/// Greedy plan of up to `n_stages` axis moves taking `x_now` to `target`.
///
/// Each stage evaluates `A` at the predicted location, applies
/// [`best_column_step`] to the remaining displacement and moves the
/// prediction by the projection.
pub fn plan_segment(field: &MatrixField, x_now: &[f64], target: &[f64], n_stages: usize) -> Result<SegmentPlan> {
    let d = field.dim();
    if x_now.len() != d || target.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: target.len() });
    }
    if !field.region().contains(target) {
        return Err(invalid("target lies outside the field region"));
    }
    let mut v: Vec<f64> = target.iter().zip(x_now).map(|(t, x)| t - x).collect();
    let initial = norm(&v);
    let mut plan = SegmentPlan { stages: Vec::new(), residuals: vec![initial], max_contraction: 0.0 };
    let mut at = vec![0.0; d];
    for _ in 0..n_stages {
        let current = norm(&v);
        if current == 0.0 || current <= PLAN_TOLERANCE * initial {
            break;
        }
        for i in 0..d {
            at[i] = target[i] - v[i];
        }
        let step = best_column_step(&field.evaluate(&at), &v)?;
        plan.stages.push(Stage { axis: step.k, length: step.coefficient });
        plan.residuals.push(step.residual_norm);
        plan.max_contraction = plan.max_contraction.max(step.contraction);
        v = step.residual;
    }
    Ok(plan)
}

/// Polygonal path `φ` with vertex times, tube radius and horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TubeSpec {
    pub vertices: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub eps: f64,
    pub t0: f64,
}

impl TubeSpec {
    pub fn new(vertices: Vec<Vec<f64>>, times: Vec<f64>, eps: f64, t0: f64) -> Result<Self> {
        if vertices.is_empty() || vertices.len() != times.len() {
            return Err(invalid("tube needs one time per vertex"));
        }
        let d = vertices[0].len();
        if d == 0 || vertices.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
            return Err(invalid("tube vertices must share a dimension and be finite"));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("vertex times must start at 0 and increase"));
        }
        if !(eps > 0.0) || !(t0 > 0.0) {
            return Err(invalid("eps and t0 must be positive"));
        }
        Ok(Self { vertices, times, eps, t0 })
    }

    /// Straight segment from `a` to `b` traversed over `[0, t0]`.
    pub fn straight(a: Vec<f64>, b: Vec<f64>, eps: f64, t0: f64) -> Result<Self> {
        Self::new(vec![a, b], vec![0.0, t0], eps, t0)
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::new(self.vertices.clone(), self.times.clone(), eps, self.t0)
    }

    pub fn start(&self) -> &[f64] {
        &self.vertices[0]
    }

    /// `φ(t)`, held constant after the last vertex.
    pub fn point_at(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        if t <= 0.0 || n == 1 {
            out.copy_from_slice(&self.vertices[0]);
            return;
        }
        if t >= self.times[n - 1] {
            out.copy_from_slice(&self.vertices[n - 1]);
            return;
        }
        let j = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[j]) / (self.times[j + 1] - self.times[j]);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.vertices[j][i] + w * (self.vertices[j + 1][i] - self.vertices[j][i]);
        }
    }

    /// Largest `|φ(t)|` over the vertices.
    pub fn max_radius(&self) -> f64 {
        self.vertices.iter().map(|v| norm(v)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TubeSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl TubeSegment {
    pub fn length(&self) -> f64 {
        self.start.iter().zip(&self.end).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
    }
}

/// Splits every edge of the tube path into pieces shorter than `eps/4`,
/// dividing time proportionally. Original vertices are kept exactly.
pub fn subdivide_tube(spec: &TubeSpec) -> Vec<TubeSegment> {
    let quarter = spec.eps / 4.0;
    let mut out = Vec::new();
    for j in 0..spec.vertices.len().saturating_sub(1) {
        let (a, b) = (&spec.vertices[j], &spec.vertices[j + 1]);
        let (ta, tb) = (spec.times[j], spec.times[j + 1]);
        let len = a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().sqrt();
        let pieces = (len / quarter).floor() as usize + 1;
        let point = |m: usize| -> Vec<f64> {
            if m == 0 {
                a.clone()
            } else if m == pieces {
                b.clone()
            } else {
                let w = m as f64 / pieces as f64;
                a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
            }
        };
        let time = |m: usize| -> f64 {
            if m == pieces {
                tb
            } else {
                ta + (tb - ta) * m as f64 / pieces as f64
            }
        };
        for m in 0..pieces {
            out.push(TubeSegment { t_start: time(m), t_end: time(m + 1), start: point(m), end: point(m + 1) });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Region;
    use crate::rng::path_stream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn project_examples() {
        assert_eq!(project(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let p = project(&[2.0, 4.0], &[1.0, 2.0]).unwrap();
        assert_eq!(p, vec![2.0, 4.0]);
        assert!(project(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn wl1_inequality_on_random_triples() {
        let mut rng = path_stream(11, 0);
        let mut checked = 0;
        for _ in 0..100_000 {
            let d = rng.random_range(1..=5);
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eta: f64 = rng.random_range(0.0..1.0);
            let p = project(&v, &u).unwrap();
            let r: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a - b).collect();
            let (nv, np, nr) = (norm(&v), norm(&p), norm(&r));
            assert!((nv * nv - np * np - nr * nr).abs() <= 1e-12 * nv * nv.max(1.0));
            if np >= eta * nv {
                checked += 1;
                assert!(nr <= (1.0 - eta * eta).sqrt() * nv + 1e-9);
            }
        }
        assert!(checked > 10_000);
    }

    #[test]
    fn best_column_examples() {
        let s = best_column_step(&DMatrix::identity(3, 3), &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!((s.k, s.residual_norm, s.contraction), (1, 0.0, 0.0));
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]));
        let s = best_column_step(&a, &[1.0, 1.0]).unwrap();
        assert_eq!(s.k, 2);
        assert_eq!(s.p, vec![0.0, 1.0]);
        assert_eq!(s.residual, vec![1.0, 0.0]);
        assert!((s.contraction - 0.5f64.sqrt()).abs() < 1e-15);
        // Brute force over both columns agrees.
        let other = project(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!(norm(&[1.0 - other[0], 1.0 - other[1]]) > s.residual_norm - 1e-15);
        let tie = best_column_step(&DMatrix::identity(2, 2), &[1.0, 1.0]).unwrap();
        assert_eq!(tie.k, 1);
        assert!(matches!(best_column_step(&DMatrix::zeros(2, 2), &[1.0, 0.0]), Err(Error::Singular)));
    }

    fn random_bounded_matrix(rng: &mut impl Rng, d: usize, lambda: f64) -> DMatrix<f64> {
        loop {
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-lambda..lambda));
            if let Ok(b) = entry_bound(&a) {
                if b <= lambda {
                    return a;
                }
            }
        }
    }

    #[test]
    fn wl2_contraction_and_pigeonhole() {
        let mut rng = path_stream(12, 0);
        let lambda = 4.0;
        let mut worst: f64 = 0.0;
        for _ in 0..100_000 {
            let d = rng.random_range(2..=3);
            let a = random_bounded_matrix(&mut rng, d, lambda);
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = best_column_step(&a, &v).unwrap();
            let atv = a.transpose() * nalgebra::DVector::from_column_slice(&v);
            assert!(s.alignment >= atv.norm() / d as f64 - 1e-12);
            assert!(s.contraction < 1.0);
            assert!(s.contraction <= contraction_bound(d, lambda) + 1e-9);
            assert!(dot(&s.residual, &s.p).abs() < 1e-9 * norm(&v) * norm(&s.p).max(f64::MIN_POSITIVE));
            worst = worst.max(s.contraction);
        }
        assert!(worst <= 0.9999, "worst contraction {worst}");
    }

    #[test]
    fn plan_examples() {
        let id = MatrixField::identity(2, Region::cube(2, 10.0)).unwrap();
        let p = plan_segment(&id, &[0.1, 0.1], &[0.1, 0.1], 5).unwrap();
        assert!(p.stages.is_empty());
        assert_eq!(p.final_residual(), 0.0);
        let p = plan_segment(&id, &[0.0, 0.0], &[0.3, 0.4], 5).unwrap();
        assert_eq!(p.stages.iter().map(|s| s.axis).collect::<Vec<_>>(), vec![2, 1]);
        assert_eq!(p.stages[0].length, 0.4);
        assert_eq!(p.stages[1].length, 0.3);
        assert_eq!(p.final_residual(), 0.0);
        assert!(plan_segment(&id, &[0.0, 0.0], &[30.0, 0.0], 5).is_err());
    }

    fn check_plan(m: &DMatrix<f64>, seed: u64, reach: Option<f64>) {
        let mut rng = path_stream(seed, 0);
        let field = MatrixField::constant(m, Region::cube(3, 10.0)).unwrap();
        for _ in 0..100 {
            let target: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let plan = plan_segment(&field, &[0.0; 3], &target, 20).unwrap();
            if let Some(r) = reach {
                assert!(plan.final_residual() <= r * plan.residuals[0]);
            }
            let n = plan.stages.len() as i32;
            assert!(plan.final_residual() <= plan.max_contraction.powi(n) * plan.residuals[0] * (1.0 + 1e-9));
            // Replaying the plan with exact linear algebra reaches the predicted point.
            let mut x = nalgebra::DVector::zeros(3);
            for s in &plan.stages {
                x += m.column(s.axis - 1) * s.length;
            }
            let miss = (nalgebra::DVector::from_vec(target.clone()) - x).norm();
            assert!((miss - plan.final_residual()).abs() < 1e-12);
            assert!(log_slope(&plan.residuals) < 0.0);
        }
    }

    #[test]
    fn plan_converges_for_constant_fields() {
        let near = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, -0.05, 0.08, 1.1, 0.1, -0.1, 0.05, 0.9]);
        check_plan(&near, 13, Some(1e-3));
        // Skewed columns contract slowly; only the geometric bound applies.
        let skew = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, -0.2, 0.3, 1.2, 0.5, -0.6, 0.1, 0.9]);
        check_plan(&skew, 14, None);
    }

    fn log_slope(r: &[f64]) -> f64 {
        let pts: Vec<(f64, f64)> = r.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, v)| (i as f64, v.ln())).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        sxy / sxx
    }

    #[test]
    fn plan_for_varying_field_decays() {
        let field = MatrixField::parse(2, &["1+0.3*sin(x2)", "0.2", "0.1*cos(x1)", "1"], Region::cube(2, 10.0)).unwrap();
        let plan = plan_segment(&field, &[0.0, 0.0], &[0.7, -0.4], 30).unwrap();
        assert!(plan.max_contraction < 1.0);
        assert!(log_slope(&plan.residuals) < 0.0);
        assert!(plan.final_residual() < 1e-3);
    }

    #[test]
    fn subdivision_examples() {
        let t = TubeSpec::straight(vec![0.0, 0.0], vec![0.0625, 0.0], 0.5, 1.0).unwrap();
        assert_eq!(subdivide_tube(&t).len(), 1);
        let t = TubeSpec::straight(vec![0.0, 0.0], vec![1.0, 0.0], 0.5, 1.0).unwrap();
        let segs = subdivide_tube(&t);
        assert!(segs.len() >= 8);
        assert!(segs.iter().all(|s| s.length() < 0.125));
        assert_eq!(segs[0].start, vec![0.0, 0.0]);
        assert_eq!(segs.last().unwrap().end, vec![1.0, 0.0]);
        assert_eq!(segs.last().unwrap().t_end, 1.0);
        assert!(TubeSpec::new(vec![vec![0.0]], vec![1.0], 0.1, 1.0).is_err());
        assert!(TubeSpec::new(vec![vec![0.0], vec![1.0]], vec![0.0, 0.0], 0.1, 1.0).is_err());
    }

    #[test]
    fn point_at_interpolates() {
        let t = TubeSpec::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]], vec![0.0, 0.5, 1.0], 0.2, 2.0).unwrap();
        let mut x = [0.0; 2];
        t.point_at(0.25, &mut x);
        assert_eq!(x, [0.5, 0.0]);
        t.point_at(0.75, &mut x);
        assert_eq!(x, [1.0, 0.5]);
        t.point_at(1.5, &mut x);
        assert_eq!(x, [1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn subdivision_keeps_vertices(
            pts in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 2..6),
            eps in 0.01f64..3.0,
        ) {
            let n = pts.len();
            let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let spec = TubeSpec::new(pts.clone(), times, eps, n as f64).unwrap();
            let segs = subdivide_tube(&spec);
            prop_assert_eq!(&segs[0].start, &pts[0]);
            prop_assert_eq!(&segs.last().unwrap().end, &pts[n - 1]);
            for w in segs.windows(2) {
                prop_assert_eq!(&w[0].end, &w[1].start);
                prop_assert_eq!(w[0].t_end, w[1].t_start);
            }
            for s in &segs {
                prop_assert!(s.length() < eps / 4.0 * (1.0 + 1e-12));
            }
        }

        #[test]
        fn residual_orthogonal_to_projection(
            v in proptest::collection::vec(-10.0f64..10.0, 3),
            entries in proptest::collection::vec(-2.0f64..2.0, 9),
        ) {
            let a = DMatrix::from_row_slice(3, 3, &entries);
            prop_assume!(a.determinant().abs() > 1e-3 && norm(&v) > 1e-6);
            let s = best_column_step(&a, &v).unwrap();
            prop_assert!(dot(&s.residual, &s.p).abs() <= 1e-9 * norm(&v) * norm(&s.p).max(1e-300));
            prop_assert!(s.contraction < 1.0);
        }
    }
}
