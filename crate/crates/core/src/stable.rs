//! Symmetric α-stable driving noise.
//!
//! Unit-time increments have characteristic function `exp(-t σ^α |u|^α)`.
//! Under this normalization the Lévy density of each coordinate is
//! `c₁ σ^α |h|^{-1-α}`, with `c₁` fixed by
//! `∫ (1 - cos h) c₁ |h|^{-1-α} dh = 1` and obtained here by quadrature.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::{Mutex, OnceLock};

use rand::Rng;
use rand_distr::{Distribution, Exp1, Open01};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quad::{gl16, panel};

/// Distance from 1 below which the Cauchy branch of the sampler is used.
pub const CAUCHY_BRANCH_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StableParams {
    alpha: f64,
    scale: f64,
    #[serde(rename = "levy_density_constant")]
    levy: f64,
}

impl StableParams {
    pub fn new(alpha: f64, scale: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(invalid(format!("alpha must lie in (0, 2), got {alpha}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("scale must be positive, got {scale}")));
        }
        Ok(Self {
            alpha,
            scale,
            levy: levy_constant(alpha) * scale.powf(alpha),
        })
    }

    /// Unit scale: increments over `t` have characteristic function `exp(-t|u|^α)`.
    pub fn standard(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1.0)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Constant `c` of the Lévy density `c |h|^{-1-α}` (includes the scale).
    pub fn levy_density_constant(&self) -> f64 {
        self.levy
    }

    /// One increment of the driver over a time step `dt > 0`.
    pub fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> f64 {
        debug_assert!(dt > 0.0);
        self.scale * dt.powf(1.0 / self.alpha) * sample_standard(self.alpha, rng)
    }

    /// Intensity of jumps with `|size| > beta`: `2 c β^{-α} / α`.
    pub fn large_jump_rate(&self, scheme: &TruncationScheme) -> f64 {
        2.0 * self.levy * scheme.beta.powf(-self.alpha) / self.alpha
    }

    /// `E[Z̄, Z̄]_t = t ∫_{-β}^{β} x² c |x|^{-1-α} dx = 2 c t β^{2-α} / (2-α)`.
    pub fn small_jump_variance(&self, scheme: &TruncationScheme, t: f64) -> f64 {
        2.0 * self.levy * t * scheme.beta.powf(2.0 - self.alpha) / (2.0 - self.alpha)
    }

    /// Draws the size of one jump exceeding `beta` in absolute value.
    pub fn sample_large_jump_size<R: Rng + ?Sized>(&self, scheme: &TruncationScheme, rng: &mut R) -> f64 {
        let u: f64 = Open01.sample(rng);
        let magnitude = scheme.beta * u.powf(-1.0 / self.alpha);
        if rng.random::<bool>() {
            magnitude
        } else {
            -magnitude
        }
    }
}

/// Chambers-Mallows-Stuck draw with characteristic function `exp(-|u|^α)`.
pub fn sample_standard<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u: f64 = Open01.sample(rng);
    let v = PI * (u - 0.5);
    if (alpha - 1.0).abs() < CAUCHY_BRANCH_TOLERANCE {
        return v.tan();
    }
    let w: f64 = Exp1.sample(rng);
    let cos_v = v.cos();
    (alpha * v).sin() / cos_v.powf(1.0 / alpha) * ((v - alpha * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Jump-size threshold β splitting the driver into large and small jumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationScheme {
    pub beta: f64,
}

impl TruncationScheme {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { beta })
    }
}

/// A jump of one driving coordinate. `coordinate` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub coordinate: usize,
    pub size: f64,
}

/// Jumps of a single driver with `|size| > β` on `[0, horizon]`.
pub fn sample_large_jumps<R: Rng + ?Sized>(
    params: &StableParams,
    scheme: &TruncationScheme,
    horizon: f64,
    rng: &mut R,
) -> Vec<JumpEvent> {
    let rate = params.large_jump_rate(scheme);
    let mut events = Vec::new();
    let mut t = 0.0;
    loop {
        let gap: f64 = Exp1.sample(rng);
        t += gap / rate;
        if t > horizon {
            break;
        }
        events.push(JumpEvent {
            time: t,
            coordinate: 1,
            size: params.sample_large_jump_size(scheme, rng),
        });
    }
    events
}

/// Threshold β at which `c4 t0 β^{2-α} = δ² / (2d)` holds with equality.
pub fn choose_beta(t0: f64, delta: f64, d: usize, params: &StableParams, c4: f64) -> Result<f64> {
    if !(t0 > 0.0 && delta > 0.0 && c4 > 0.0 && d > 0) {
        return Err(invalid("choose_beta needs positive t0, delta, d and c4"));
    }
    let rhs = delta * delta / (2.0 * d as f64);
    Ok((rhs / (c4 * t0)).powf(1.0 / (2.0 - params.alpha)))
}

/// Lévy density constant `c₁(α)` for unit scale, computed once per α by
/// quadrature of `2 ∫_0^∞ (1 - cos h) h^{-1-α} dh = 1 / c₁`.
pub fn levy_constant(alpha: f64) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(c) = cache.lock().unwrap().get(&alpha.to_bits()) {
        return *c;
    }
    let c = 1.0 / (2.0 * one_minus_cos_moment(alpha));
    cache.lock().unwrap().insert(alpha.to_bits(), c);
    c
}

/// `∫_0^∞ (1 - cos h) h^{-1-α} dh`.
fn one_minus_cos_moment(alpha: f64) -> f64 {
    let rule = gl16();
    let integrand = |h: f64| {
        // 1 - cos h without cancellation for small h.
        let s = (0.5 * h).sin();
        2.0 * s * s * h.powf(-1.0 - alpha)
    };
    // (0, 2^-60]: Taylor term h²/2.
    let floor = 2f64.powi(-60);
    let mut total = floor.powf(2.0 - alpha) / (2.0 * (2.0 - alpha));
    for k in (0..60).rev() {
        let a = 2f64.powi(-(k + 1));
        let b = 2f64.powi(-k);
        total += panel(a, b, rule, integrand);
    }
    // [1, 2πN] in quarter periods.
    let periods = 400;
    let upper = 2.0 * PI * periods as f64;
    let mut a = 1.0;
    let step = FRAC_PI_2;
    while a < upper {
        let b = (a + step).min(upper);
        total += panel(a, b, rule, integrand);
        a = b;
    }
    // Tail: ∫_R^∞ h^{-1-α} - ∫_R^∞ cos h h^{-1-α}, the latter by parts with sin R = 0.
    let tail_cos = (1.0 + alpha) * upper.powf(-2.0 - alpha);
    total + upper.powf(-alpha) / alpha - tail_cos
}
