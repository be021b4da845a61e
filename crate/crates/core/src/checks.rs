//! Self-checks of the model: generator against symbol, and distributional
//! scaling of paths.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::engine::{simulate_path, scaled_field, PathScheme};
use crate::error::Result;
use crate::field::{MatrixField, QuadratureSpec, Region};
use crate::rng::{derive_seed, path_stream};
use crate::stable::StableParams;
use crate::stats::{ks_two_sample, run_paths, KsResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorProbe {
    pub dim: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub quadrature: f64,
    pub symbol: f64,
    /// `|ℒf(x) + symbol · f(x)|` for `f = cos(u · ·)`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorCheck {
    pub alpha: f64,
    pub probes: Vec<GeneratorProbe>,
    pub max_residual: f64,
}

fn probe_fields() -> Result<Vec<MatrixField>> {
    let big = Region::cube(3, 1e6);
    Ok(vec![
        MatrixField::identity(1, Region::cube(1, 1e6))?,
        MatrixField::identity(2, Region::cube(2, 1e6))?,
        MatrixField::constant(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 0.8]), Region::cube(2, 1e6))?,
        MatrixField::constant(
            &DMatrix::from_row_slice(3, 3, &[1.2, 0.1, 0.0, -0.2, 0.9, 0.3, 0.1, 0.0, 1.1]),
            big,
        )?,
    ])
}

/// Compares the quadrature generator applied to `cos(u·x)` with
/// `−symbol(x, u) cos(u·x)` for constant fields, at `count` random
/// `(field, x, u)` probes.
pub fn generator_check(params: &StableParams, count: usize, seed: u64) -> Result<GeneratorCheck> {
    let fields = probe_fields()?;
    let quad = QuadratureSpec::default();
    let mut rng = path_stream(seed, 0);
    let mut probes = Vec::with_capacity(count);
    for i in 0..count {
        let field = &fields[i % fields.len()];
        let d = field.dim();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let uu = u.clone();
        let f = move |y: &[f64]| y.iter().zip(&uu).map(|(a, b)| a * b).sum::<f64>().cos();
        let q = field.apply_generator(&f, &x, params, &quad)?.value;
        let s = field.symbol(&x, &u, params);
        let residual = (q + s * f(&x)).abs();
        probes.push(GeneratorProbe { dim: d, x, u, quadrature: q, symbol: s, residual });
    }
    let max_residual = probes.iter().map(|p| p.residual).fold(0.0, f64::max);
    Ok(GeneratorCheck { alpha: params.alpha(), probes, max_residual })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingCheck {
    pub lambda: f64,
    pub t: f64,
    pub n: u64,
    pub ks: KsResult,
    pub passes: bool,
}

/// Compares the first coordinate of `X_t` with that of `λ X̂_{t/λ^α}`,
/// where `X̂` is driven by the field `A(·/λ)` started at `x0/λ`, using a
/// two-sample KS test on independent batches.
pub fn scaling_check(
    field: &MatrixField,
    params: &StableParams,
    x0: &[f64],
    lambda: f64,
    t: f64,
    dt: f64,
    n: u64,
    seed: u64,
) -> Result<ScalingCheck> {
    let scaled = scaled_field(field, lambda)?;
    let alpha = params.alpha();
    let direct_scheme = PathScheme::fixed_step(dt)?;
    let scaled_scheme = PathScheme::fixed_step(dt / lambda.powf(alpha))?;
    let start: Vec<f64> = x0.iter().map(|v| v / lambda).collect();
    let direct = run_paths(n, derive_seed(seed, "direct"), |_, rng| {
        simulate_path(field, params, x0, t, &direct_scheme, rng).map(|p| p.states.last().expect("nonempty")[0])
    });
    let via_scaling = run_paths(n, derive_seed(seed, "scaled"), |_, rng| {
        simulate_path(&scaled, params, &start, t / lambda.powf(alpha), &scaled_scheme, rng)
            .map(|p| lambda * p.states.last().expect("nonempty")[0])
    });
    let a = direct.into_iter().collect::<Result<Vec<_>>>()?;
    let b = via_scaling.into_iter().collect::<Result<Vec<_>>>()?;
    let ks = ks_two_sample(&a, &b)?;
    Ok(ScalingCheck { lambda, t, n, passes: ks.passes(), ks })
}
