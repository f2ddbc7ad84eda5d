//! Induced `l_{sigma inf}` norms of frozen-time snapshots.
//!
//! For a kernel `K_0, K_1, ...` the snapshot norm is
//! `sup { |sum_k K_k v_k| : |v_k| <= sigma^k }`. Under the max-abs vector norm
//! this is exactly the largest weighted absolute row sum. Under the Euclidean
//! norm it is bracketed: an alternating ascent gives an attained (lower)
//! value, Cauchy-Schwarz and the triangle inequality give the upper value.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Kernel, LoopFunction};
use crate::error::{Error, Result};
use crate::io::extended_f64;
use crate::linalg::{spectral_norm, VectorNorm};
use crate::signals::{Shifted, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    /// Exact evaluation of a finite kernel.
    ExactRowsum,
    /// Impulse response summed to a lag with a rigorous geometric tail.
    ImpulseTruncation,
    RandomSearch,
    LipschitzBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub lower: f64,
    #[serde(with = "extended_f64")]
    pub upper: f64,
    pub method: NormMethod,
}

impl NormEstimate {
    pub fn exact(v: f64) -> Self {
        Self {
            lower: v,
            upper: v,
            method: NormMethod::ExactRowsum,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.lower == self.upper
    }

    pub fn is_finite(&self) -> bool {
        self.upper.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormOptions {
    pub norm: VectorNorm,
    /// Absolute tolerance on truncated impulse-response tails.
    pub tol: f64,
    /// Random inputs tried per lower-bound search.
    pub samples: usize,
    pub seed: u64,
}

impl Default for NormOptions {
    fn default() -> Self {
        Self {
            norm: VectorNorm::Euclidean,
            tol: 1e-10,
            samples: 64,
            seed: 0x5eed,
        }
    }
}

impl NormOptions {
    pub fn with_norm(norm: VectorNorm) -> Self {
        Self {
            norm,
            ..Self::default()
        }
    }
}

/// Largest absolute row sum of `sum_k w_k |M_k|`.
fn weighted_rowsum(kernel: &[DMatrix<f64>], weights: impl Fn(usize) -> f64) -> f64 {
    let Some(first) = kernel.first() else { return 0.0 };
    let mut rows = vec![0.0; first.nrows()];
    for (k, m) in kernel.iter().enumerate() {
        let w = weights(k);
        for (i, r) in m.row_iter().enumerate() {
            rows[i] += w * r.iter().map(|x| x.abs()).sum::<f64>();
        }
    }
    rows.into_iter().fold(0.0, f64::max)
}

/// Attained value of `sup_{|y|=1} sum_k |M_k' y|` by alternating ascent.
fn euclidean_ascent(ms: &[DMatrix<f64>]) -> f64 {
    let rows = ms[0].nrows();
    let total = ms.iter().fold(DMatrix::zeros(rows, ms[0].ncols()), |acc, m| acc + m);
    let mut best = spectral_norm(&total);
    let mut y = if best > 0.0 {
        total.clone().svd(true, false).u.map(|u| u.column(0).into_owned()).unwrap_or_else(|| unit(rows))
    } else {
        unit(rows)
    };
    for _ in 0..50 {
        let mut z = DVector::zeros(rows);
        for m in ms {
            let g = m.transpose() * &y;
            let n = g.norm();
            if n > 0.0 {
                z += m * (g / n);
            }
        }
        let val = z.norm();
        if val <= best * (1.0 + 1e-15) {
            best = best.max(val);
            break;
        }
        best = val;
        y = z / val;
    }
    best
}

fn unit(n: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[0] = 1.0;
    v
}

/// Bracket of the norm of `sum_k M_k v_k` over `|v_k| <= 1` (Euclidean).
fn euclidean_bracket(ms: &[DMatrix<f64>]) -> (f64, f64) {
    let nz: Vec<DMatrix<f64>> = ms.iter().filter(|m| m.iter().any(|x| *x != 0.0)).cloned().collect();
    match nz.len() {
        0 => (0.0, 0.0),
        1 => {
            let v = spectral_norm(&nz[0]);
            (v, v)
        }
        n => {
            let tri: f64 = nz.iter().map(spectral_norm).sum();
            let gram = nz.iter().fold(DMatrix::zeros(nz[0].nrows(), nz[0].nrows()), |acc, m| acc + m * m.transpose());
            let cs = (n as f64 * spectral_norm(&gram)).sqrt();
            let upper = tri.min(cs);
            let lower = euclidean_ascent(&nz).min(upper);
            (lower, upper)
        }
    }
}

/// `||h||_{sigma inf}` of a finite linear kernel.
pub fn kernel_norm(kernel: &[DMatrix<f64>], sigma: f64, norm: VectorNorm) -> NormEstimate {
    match norm {
        VectorNorm::Max => NormEstimate::exact(weighted_rowsum(kernel, |k| sigma.powi(k as i32))),
        VectorNorm::Euclidean => {
            let ms: Vec<DMatrix<f64>> = kernel.iter().enumerate().map(|(k, m)| m * sigma.powi(k as i32)).collect();
            let (lower, upper) = if ms.is_empty() { (0.0, 0.0) } else { euclidean_bracket(&ms) };
            NormEstimate {
                lower,
                upper,
                method: if lower == upper {
                    NormMethod::ExactRowsum
                } else {
                    NormMethod::ImpulseTruncation
                },
            }
        }
    }
}

/// Sum of weighted induced norms, the bound implied by a Lipschitz profile.
fn profile_sum(profile: &[f64], sigma: f64) -> f64 {
    profile.iter().enumerate().map(|(k, a)| sigma.powi(k as i32) * a).sum()
}

/// Seeded random search for `sup |f(u)| / ||u||_{sigma inf, t}` over inputs
/// supported on the last `memory + 1` steps. Always a valid lower bound.
pub fn random_search_lower(
    f: impl Fn(&Window) -> DVector<f64>,
    dim: usize,
    memory: usize,
    sigma: f64,
    opts: &NormOptions,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let len = memory + 1;
    let mut best = 0.0_f64;
    let scales = [1.0, 10.0, 1e3, 1e6];
    for s in 0..opts.samples {
        let scale = scales[s % scales.len()];
        // values at t - memory .. t, weighted so that every lag saturates
        let values: Vec<DVector<f64>> = (0..len)
            .map(|i| {
                let lag = (len - 1 - i) as i32;
                let v = DVector::from_fn(dim, |_, _| {
                    if rng.random_bool(0.5) {
                        rng.random_range(-1.0..=1.0)
                    } else if rng.random_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                });
                let n = opts.norm.of(&v);
                if n == 0.0 {
                    v
                } else {
                    v * (scale * sigma.powi(lag) / n)
                }
            })
            .collect();
        let w = Window {
            start: -(memory as i64),
            dim,
            values: &values,
        };
        let input_norm = (0..len)
            .map(|i| sigma.powi(-((len - 1 - i) as i32)) * opts.norm.of(&values[i]))
            .fold(0.0, f64::max);
        if input_norm > 0.0 {
            let out = opts.norm.of(&f(&w));
            if out.is_finite() {
                best = best.max(out / input_norm);
            }
        }
    }
    best
}

/// `||h_tau||_{sigma inf}`.
pub fn induced_norm_frozen(h: &LoopFunction, tau: i64, sigma: f64, opts: &NormOptions) -> Result<NormEstimate> {
    check_sigma(sigma)?;
    if let Some(k) = h.linear_kernel(tau) {
        return Ok(kernel_norm(&k, sigma, opts.norm));
    }
    let upper = match h {
        LoopFunction::DeadZoneComposite { inner } => induced_norm_frozen(inner, tau, sigma, opts)?.upper,
        LoopFunction::TimeInvariant { inner, frozen_at } => return induced_norm_frozen(inner, *frozen_at, sigma, opts),
        _ => profile_sum(&h.gain_profile(tau, opts.norm), sigma),
    };
    let lower = random_search_lower(
        |w| h.eval(tau, &Shifted { inner: w, by: tau }),
        h.input_dim(),
        h.memory(),
        sigma,
        opts,
    )
    .min(upper);
    Ok(NormEstimate {
        lower,
        upper,
        method: NormMethod::LipschitzBound,
    })
}

/// `||h_{t-1} - h_t||_{sigma inf}` on a common re-anchored history.
pub fn snapshot_delta_estimate(h: &LoopFunction, t: i64, sigma: f64, opts: &NormOptions) -> Result<NormEstimate> {
    check_sigma(sigma)?;
    if let Some(k) = h.delta_kernel(t) {
        return Ok(kernel_norm(&k, sigma, opts.norm));
    }
    let upper = match h {
        LoopFunction::TimeInvariant { .. } => return Ok(NormEstimate::exact(0.0)),
        LoopFunction::DeadZoneComposite { inner } => snapshot_delta_estimate(inner, t, sigma, opts)?.upper,
        _ => profile_sum(&h.delta_profile(t, opts.norm), sigma),
    };
    if upper == 0.0 {
        return Ok(NormEstimate::exact(0.0));
    }
    let lower = random_search_lower(
        |w| {
            let s = Shifted { inner: w, by: t };
            h.nabla_snapshot_eval(t, &s, t)
        },
        h.input_dim(),
        h.memory(),
        sigma,
        opts,
    )
    .min(upper);
    Ok(NormEstimate {
        lower,
        upper,
        method: NormMethod::LipschitzBound,
    })
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 1.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be >= 1, got {sigma}")));
    }
    Ok(())
}

pub(crate) fn kernel_is_zero(k: &Kernel) -> bool {
    k.iter().all(|m| m.iter().all(|x| *x == 0.0))
}
