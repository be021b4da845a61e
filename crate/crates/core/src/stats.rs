//! Monte Carlo summaries, the parallel batch runner and small statistical
//! tools (two-sample KS, least-squares lines).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::rng::{path_stream, PathRng};

/// Two-sided normal quantile for 95% intervals.
pub const Z95: f64 = 1.959_963_984_540_054;
/// Two-sided normal quantile for 99% intervals.
pub const Z99: f64 = 2.575_829_303_548_901;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√n`.
    pub stderr: f64,
    pub ci95: (f64, f64),
    pub n: u64,
    pub seed: u64,
    pub params_hash: String,
}

impl MCEstimate {
    pub fn from_samples(samples: &[f64], seed: u64, params_hash: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("an estimate needs at least one sample"));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(Self::from_moments(mean, (var / n).sqrt(), samples.len() as u64, seed, params_hash))
    }

    /// Estimate of a probability from `hits` successes in `n` trials.
    pub fn from_counts(hits: u64, n: u64, seed: u64, params_hash: impl Into<String>) -> Result<Self> {
        if n == 0 || hits > n {
            return Err(invalid("need 0 ≤ hits ≤ n and n ≥ 1"));
        }
        let p = hits as f64 / n as f64;
        let nf = n as f64;
        let var = if n > 1 { p * (1.0 - p) * nf / (nf - 1.0) } else { 0.0 };
        Ok(Self::from_moments(p, (var / nf).sqrt(), n, seed, params_hash))
    }

    pub fn from_moments(mean: f64, stderr: f64, n: u64, seed: u64, params_hash: impl Into<String>) -> Self {
        Self {
            mean,
            stderr,
            ci95: (mean - Z95 * stderr, mean + Z95 * stderr),
            n,
            seed,
            params_hash: params_hash.into(),
        }
    }

    /// A value known without sampling error.
    pub fn exact(value: f64) -> Self {
        Self::from_moments(value, 0.0, 1, 0, "")
    }

    pub fn ci99(&self) -> (f64, f64) {
        (self.mean - Z99 * self.stderr, self.mean + Z99 * self.stderr)
    }

    /// Lower end of the 99% interval lies above zero.
    pub fn positive_at_99(&self) -> bool {
        self.mean > 0.0 && self.ci99().0 > 0.0
    }
}

/// `√(a² + b²)` for independent (or conservatively treated) estimates.
pub fn joint_stderr(a: &MCEstimate, b: &MCEstimate) -> f64 {
    a.stderr.hypot(b.stderr)
}

/// sha256 of `bytes` as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// sha256 of the JSON encoding of `value`, as lowercase hex.
pub fn params_hash<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("parameters serialize"))
}

/// Runs `f` for path indices `0..n`, each with its own stream, and returns
/// the results in index order regardless of scheduling.
pub fn run_paths<T, F>(n: u64, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, PathRng) -> T + Sync,
{
    (0..n).into_par_iter().map(|i| f(i, path_stream(seed, i))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    /// Asymptotic 1% critical value `1.628 √((n+m)/(nm))`.
    pub critical_1pct: f64,
}

impl KsResult {
    pub fn passes(&self) -> bool {
        self.statistic < self.critical_1pct
    }
}

/// Two-sample Kolmogorov–Smirnov statistic. Inputs need not be sorted.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() || a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(invalid("KS test needs two nonempty samples without NaN"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let (nf, mf) = (n as f64, m as f64);
    Ok(KsResult { statistic: d, critical_1pct: 1.628 * ((nf + mf) / (nf * mf)).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
}

/// Weighted least squares `y ≈ intercept + slope·x`. Equal weights when
/// `weights` is `None`.
pub fn fit_line(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(invalid("line fit needs at least two matching points"));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..n).map(w).sum();
    let mx = (0..n).map(|i| w(i) * x[i]).sum::<f64>() / sw;
    let my = (0..n).map(|i| w(i) * y[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|i| w(i) * (x[i] - mx).powi(2)).sum();
    let sxy: f64 = (0..n).map(|i| w(i) * (x[i] - mx) * (y[i] - my)).sum();
    let syy: f64 = (0..n).map(|i| w(i) * (y[i] - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(invalid("line fit needs at least two distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = (0..n).map(|i| w(i) * (y[i] - intercept - slope * x[i]).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    let slope_stderr = if n > 2 { (sse / (n as f64 - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(LineFit { slope, intercept, r_squared, slope_stderr })
}

/// Empirical `E cos(uX)` with its standard error. For a symmetric law this
/// estimates the characteristic function at `u`.
pub fn empirical_cf(samples: &[f64], u: f64) -> Result<MCEstimate> {
    let c: Vec<f64> = samples.iter().map(|x| (u * x).cos()).collect();
    MCEstimate::from_samples(&c, 0, "")
}
