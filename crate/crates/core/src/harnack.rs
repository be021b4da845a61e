//! The three-dimensional counterexample to the Harnack inequality.
//!
//! With `A ≡ I` in `R³`, `B` the unit ball, `F = (−ε,ε)²`,
//! `C = (R×F) ∩ B` and `E = (2,4) × F`, the harmonic function
//! `h(w) = P^w(W_τ ∈ E)` satisfies `h(0) ≍ ε^α` while `h(w₀)` at
//! `w₀ = (0, 1/2, 0)` is much smaller, so `h(0)/h(w₀)` is unbounded as
//! `ε → 0`. The process can only land in `E` by a single jump along the
//! first axis from a point of `C`.

use serde::Serialize;
use serde_json::json;
use statrs::function::gamma::gamma;

use crate::engine::{first_exit, Domain, PathScheme};
use crate::error::{invalid, Result};
use crate::estimate::Batch;
use crate::field::{MatrixField, Region};
use crate::rng::derive_seed;
use crate::stable::StableParams;
use crate::stats::{fit_line, params_hash, run_paths, MCEstimate};

pub const W0: [f64; 3] = [0.0, 0.5, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarnackGeometry {
    pub eps: f64,
}

impl HarnackGeometry {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid("eps must be positive"));
        }
        Ok(Self { eps })
    }

    pub fn in_b(&self, w: &[f64]) -> bool {
        w.iter().map(|x| x * x).sum::<f64>() < 1.0
    }

    pub fn in_f(&self, y: f64, z: f64) -> bool {
        y.abs() < self.eps && z.abs() < self.eps
    }

    pub fn in_c(&self, w: &[f64]) -> bool {
        self.in_f(w[1], w[2]) && self.in_b(w)
    }

    pub fn in_c_prime(&self, w: &[f64]) -> bool {
        self.in_c(w) && w[0].abs() < 0.5
    }

    pub fn in_e(&self, w: &[f64]) -> bool {
        w[0] > 2.0 && w[0] < 4.0 && self.in_f(w[1], w[2])
    }

    /// Bounds of `E` per axis.
    fn e_box(&self) -> [(f64, f64); 3] {
        [(2.0, 4.0), (-self.eps, self.eps), (-self.eps, self.eps)]
    }

    pub fn ball(&self) -> Domain {
        Domain::Ball { center: vec![0.0; 3], radius: 1.0 }
    }
}

/// Whether some axis-parallel line through `w` meets `E`.
///
/// A line along axis `a` meets the open box `E` exactly when every other
/// coordinate of `w` lies in the corresponding interval of `E`.
pub fn single_jump_reachability(g: &HarnackGeometry, w: &[f64]) -> bool {
    let e = g.e_box();
    (0..3).any(|a| (0..3).filter(|&i| i != a).all(|i| e[i].0 < w[i] && w[i] < e[i].1))
}

/// Scheme for `h` estimates: jump-adapted with `β = min(1/2, ε/10)`.
///
/// Below `β` the motion is Gaussian, so `β` must be small against `ε` for
/// the time spent near the axis to keep its stable scaling.
pub fn harnack_scheme(eps: f64, dt: f64) -> Result<PathScheme> {
    PathScheme::jump_adapted(dt, (eps / 10.0).min(0.5))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HEstimate {
    pub estimate: MCEstimate,
    /// Paths counted in the numerator.
    pub hits: u64,
    /// Counted paths whose pre-exit state lies in `C`.
    pub hits_from_c: u64,
    pub capped: u64,
}

/// `h_ε(start) = P^start(W_τ ∈ E)` for `A ≡ I`, `d = 3`.
pub fn estimate_h(
    g: &HarnackGeometry,
    params: &StableParams,
    start: &[f64],
    scheme: &PathScheme,
    batch: &Batch,
) -> Result<HEstimate> {
    if start.len() != 3 || !g.in_b(start) {
        return Err(invalid("start must be a point of the unit ball in R³"));
    }
    let field = MatrixField::identity(3, Region::cube(3, 1e12))?;
    let ball = g.ball();
    let outcomes = run_paths(batch.n, batch.seed, |_, rng| -> Result<(bool, bool, bool)> {
        let r = first_exit(&field, params, start, &ball, scheme, rng, batch.t_cap)?;
        let hit = r.exited && g.in_e(&r.state_post);
        Ok((hit, hit && g.in_c(&r.state_pre), !r.exited))
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let hits = outcomes.iter().filter(|o| o.0).count() as u64;
    let hits_from_c = outcomes.iter().filter(|o| o.1).count() as u64;
    let capped = outcomes.iter().filter(|o| o.2).count() as u64;
    let hash = params_hash(&json!({
        "op": "harnack-h", "eps": g.eps, "alpha": params.alpha(), "start": start, "scheme": scheme, "batch": batch,
    }));
    Ok(HEstimate { estimate: MCEstimate::from_counts(hits, batch.n, batch.seed, hash)?, hits, hits_from_c, capped })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub eps: f64,
    pub h0: HEstimate,
    pub hw0: HEstimate,
    pub ratio: f64,
    /// Delta-method standard error; zero when `ratio` is only a bound.
    pub ratio_se: f64,
    /// The interval for `h(w₀)` reaches zero, so `ratio` is the lower bound
    /// `h(0)` over the upper end of that interval.
    pub lower_bound: bool,
    pub n: u64,
    pub seed: u64,
}

impl RatioRow {
    pub const CSV_HEADER: &'static str = "eps,h0,h0_se,hw0,hw0_se,ratio,ratio_se,n,seed";

    pub fn csv(&self) -> String {
        format!(
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{}",
            self.eps,
            self.h0.estimate.mean,
            self.h0.estimate.stderr,
            self.hw0.estimate.mean,
            self.hw0.estimate.stderr,
            self.ratio,
            self.ratio_se,
            self.n,
            self.seed
        )
    }
}

/// `h(0)` and `h(w₀)` for each `ε`, on independent streams per entry.
pub fn ratio_curve(eps_list: &[f64], params: &StableParams, batch: &Batch, dt: f64) -> Result<Vec<RatioRow>> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(invalid("eps list must be nonempty and strictly decreasing"));
    }
    eps_list
        .iter()
        .map(|&eps| {
            let g = HarnackGeometry::new(eps)?;
            let scheme = harnack_scheme(eps, dt)?;
            let b0 = batch.with_seed(derive_seed(batch.seed, &format!("h0:{eps:?}")));
            let bw = batch.with_seed(derive_seed(batch.seed, &format!("hw0:{eps:?}")));
            let h0 = estimate_h(&g, params, &[0.0; 3], &scheme, &b0)?;
            let hw0 = estimate_h(&g, params, &W0, &scheme, &bw)?;
            let (a, b) = (&h0.estimate, &hw0.estimate);
            let lower_bound = b.ci95.0 <= 0.0;
            let (ratio, ratio_se) = if lower_bound {
                (a.mean / b.ci95.1, 0.0)
            } else {
                let r = a.mean / b.mean;
                (r, r * ((a.stderr / a.mean).powi(2) + (b.stderr / b.mean).powi(2)).sqrt())
            };
            Ok(RatioRow { eps, h0, hw0, ratio, ratio_se, lower_bound, n: batch.n, seed: batch.seed })
        })
        .collect()
}

/// `∫_T^∞ P((Y_t, Z_t) ∈ F_ε) dt` from the density at the origin,
/// `p_t(0) = Γ(1+1/α) / (π t^{1/α})`, valid once `t^{1/α} ≫ ε`.
pub fn occupation_tail(eps: f64, alpha: f64, horizon: f64) -> f64 {
    let a = 2.0 * eps * gamma(1.0 + 1.0 / alpha) / std::f64::consts::PI;
    a * a * horizon.powf(1.0 - 2.0 / alpha) / (2.0 / alpha - 1.0)
}

/// Geometric time grid from `t_min` with ratio `q`, containing every
/// horizon exactly.
pub fn occupation_grid(t_min: f64, q: f64, horizons: &[f64]) -> Vec<f64> {
    let last = horizons.iter().copied().fold(0.0, f64::max);
    let mut grid = vec![0.0];
    let mut t = t_min;
    while t < last {
        grid.push(t);
        t *= q;
    }
    grid.extend_from_slice(horizons);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

pub const OCCUPATION_T_MIN: f64 = 1e-6;
pub const OCCUPATION_RATIO: f64 = 1.05;

/// Raw `E ∫₀^T 1_F(Y_s, Z_s) ds` for every `(ε, T)`, with `(Y, Z)` two
/// independent stable processes from the origin sampled exactly on a
/// geometric grid and integrated by the trapezoid rule. Every entry uses
/// the same paths.
pub fn occupation_integrals(
    eps_list: &[f64],
    horizons: &[f64],
    params: &StableParams,
    n: u64,
    seed: u64,
) -> Result<Vec<Vec<MCEstimate>>> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(invalid("eps values must be positive"));
    }
    if horizons.is_empty() || horizons.iter().any(|h| !(*h > OCCUPATION_T_MIN)) || n == 0 {
        return Err(invalid("horizons must exceed the first grid time and n ≥ 1"));
    }
    let grid = occupation_grid(OCCUPATION_T_MIN, OCCUPATION_RATIO, horizons);
    let marks: Vec<usize> = horizons.iter().map(|h| grid.iter().position(|t| t == h).expect("in grid")).collect();
    let (ne, nh) = (eps_list.len(), horizons.len());
    let per_path = run_paths(n, seed, |_, mut rng| {
        let mut acc = vec![0.0; ne];
        let mut out = vec![0.0; ne * nh];
        let (mut y, mut z) = (0.0f64, 0.0f64);
        let mut prev = vec![1.0; ne];
        let mut next_mark = 0;
        for k in 1..grid.len() {
            let h = grid[k] - grid[k - 1];
            y += params.sample_increment(h, &mut rng);
            z += params.sample_increment(h, &mut rng);
            let m = y.abs().max(z.abs());
            for (e, eps) in eps_list.iter().enumerate() {
                let now = f64::from(u8::from(m < *eps));
                acc[e] += 0.5 * h * (prev[e] + now);
                prev[e] = now;
            }
            while next_mark < nh && marks[next_mark] == k {
                for e in 0..ne {
                    out[e * nh + next_mark] = acc[e];
                }
                next_mark += 1;
            }
        }
        out
    });
    let hash = params_hash(&json!({
        "op": "occupation-integrals", "eps": eps_list, "horizons": horizons, "alpha": params.alpha(), "n": n,
    }));
    let mut table = Vec::with_capacity(ne);
    for e in 0..ne {
        let mut row = Vec::with_capacity(nh);
        for j in 0..nh {
            let samples: Vec<f64> = per_path.iter().map(|p| p[e * nh + j]).collect();
            row.push(MCEstimate::from_samples(&samples, seed, hash.clone())?);
        }
        table.push(row);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupationRow {
    pub eps: f64,
    /// Integral to the horizon plus the tail correction.
    pub value: f64,
    pub stderr: f64,
    pub tail_correction: f64,
    /// Same at twice the horizon.
    pub value_doubled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupationScaling {
    pub rows: Vec<OccupationRow>,
    pub horizon: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub slope_doubled: f64,
    /// Doubling the horizon moved the slope by more than 0.1.
    pub horizon_sensitive: bool,
}

/// Slope of `log E∫₀^∞ 1_{F_ε}(Y_s, Z_s) ds` against `log ε`.
pub fn occupation_scaling(
    eps_list: &[f64],
    params: &StableParams,
    n: u64,
    seed: u64,
    horizon: f64,
) -> Result<OccupationScaling> {
    if eps_list.len() < 2 {
        return Err(invalid("need at least two eps values"));
    }
    let alpha = params.alpha();
    let table = occupation_integrals(eps_list, &[horizon, 2.0 * horizon], params, n, seed)?;
    let rows: Vec<OccupationRow> = eps_list
        .iter()
        .zip(&table)
        .map(|(&eps, est)| {
            let tail = occupation_tail(eps, alpha, horizon);
            OccupationRow {
                eps,
                value: est[0].mean + tail,
                stderr: est[0].stderr,
                tail_correction: tail,
                value_doubled: est[1].mean + occupation_tail(eps, alpha, 2.0 * horizon),
            }
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.eps.ln()).collect();
    let w: Vec<f64> = rows.iter().map(|r| (r.value / r.stderr.max(1e-300)).powi(2)).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.value.ln()).collect();
    let y2: Vec<f64> = rows.iter().map(|r| r.value_doubled.ln()).collect();
    let fit = fit_line(&x, &y, Some(&w))?;
    let fit2 = fit_line(&x, &y2, Some(&w))?;
    // Propagated from the per-point relative errors.
    let sxx: f64 = {
        let sw: f64 = w.iter().sum();
        let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
        x.iter().zip(&w).map(|(a, b)| b * (a - mx).powi(2)).sum()
    };
    Ok(OccupationScaling {
        horizon,
        slope: fit.slope,
        slope_stderr: (1.0 / sxx).sqrt(),
        slope_doubled: fit2.slope,
        horizon_sensitive: (fit.slope - fit2.slope).abs() > 0.1,
        rows,
    })
}
