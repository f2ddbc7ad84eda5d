//! Frozen closed loops `(I - G_tau T)^{-1}` and `(I - G_tau T)^{-1} G_tau T`.
//!
//! With the frozen kernel `K_0..K_{L-1}` of `G_tau`, the loop
//! `x(t) = sum_k K_k x(t-1-k) + w(t)` has the companion matrix
//!
//! ```text
//! C = [K_0 K_1 ... K_{L-1}]
//!     [ I   0  ...   0    ]
//!     [ ...               ]
//! ```
//!
//! whose powers carry the impulse response `P_n` in their top-left block.
//! Dead-zone composites are handled through the entrywise-absolute kernel,
//! which dominates the nonlinear loop componentwise.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::norms::{kernel_is_zero, kernel_norm};
use super::{Kernel, LoopFunction, NormEstimate, NormMethod, NormOptions};
use crate::error::{Error, Result};
use crate::io::extended_f64;
use crate::linalg::spectral_radius;

const STABILITY_MARGIN: f64 = 1e-9;
const MAX_LAGS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stabilizing,
    Destabilizing,
}

/// Everything the certificates need about one frozen loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenClosedLoop {
    pub time: i64,
    pub spectral_radius: f64,
    pub stability: Stability,
    /// Whether the companion form was built from a positive majorant.
    pub majorant: bool,
    /// `||s_t||_{inf}`
    pub s_norm: NormEstimate,
    /// `||s_t||_{sigma inf}`
    pub s_norm_sigma: NormEstimate,
    /// `||l_t||_{sigma0 inf}`
    pub l_norm: NormEstimate,
    #[serde(with = "extended_f64")]
    pub threshold: f64,
}

struct Companion {
    m: usize,
    kernel: Kernel,
    exact: bool,
    matrix: DMatrix<f64>,
    radius: f64,
}

fn companion(g: &LoopFunction, tau: i64) -> Result<Companion> {
    let (kernel, exact) = g.majorant_kernel(tau).ok_or_else(|| {
        Error::Unclassifiable(format!(
            "no linear companion form for the frozen loop at t = {tau} (nonlinear composition)"
        ))
    })?;
    let m = g.output_dim();
    if g.input_dim() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: g.input_dim(),
        });
    }
    let l = kernel.len();
    let mut c = DMatrix::zeros(m * l, m * l);
    for (k, km) in kernel.iter().enumerate() {
        c.view_mut((0, k * m), (m, m)).copy_from(km);
    }
    for k in 1..l {
        c.view_mut((k * m, (k - 1) * m), (m, m)).fill_with_identity();
    }
    let radius = if kernel_is_zero(&kernel) { 0.0 } else { spectral_radius(&c)? };
    Ok(Companion {
        m,
        kernel,
        exact,
        matrix: c,
        radius,
    })
}

/// Stabilizing iff the frozen closed loop's companion spectral radius is
/// below `1/sigma0` by a fixed margin.
pub fn classify_frozen(g: &LoopFunction, tau: i64, sigma0: f64) -> Result<Stability> {
    let c = companion(g, tau)?;
    Ok(if c.radius < 1.0 / sigma0 - STABILITY_MARGIN {
        Stability::Stabilizing
    } else {
        Stability::Destabilizing
    })
}

/// Weighted induced norm of the closed-loop impulse response, from lag
/// `first_lag` on, with a rigorous tail.
fn loop_norm(c: &Companion, weight: f64, first_lag: usize, opts: &NormOptions) -> NormEstimate {
    if kernel_is_zero(&c.kernel) {
        let v = if first_lag == 0 { 1.0 } else { 0.0 };
        return NormEstimate::exact(v);
    }
    if !(c.radius < 1.0 / weight - STABILITY_MARGIN) {
        return NormEstimate {
            lower: 0.0,
            upper: f64::INFINITY,
            method: NormMethod::ImpulseTruncation,
        };
    }
    let m = c.m;
    let d = &c.matrix * weight;
    let tail_norm = |x: &DMatrix<f64>| opts.norm.induced_upper(x);

    // dpow = D^n; norms[n] = ||D^n||
    let mut dpow = DMatrix::identity(d.nrows(), d.ncols());
    let mut blocks: Vec<DMatrix<f64>> = Vec::new();
    let mut norms: Vec<f64> = Vec::new();
    let mut contraction: Option<(usize, f64)> = None;
    let mut cut = None;
    for n in 0..MAX_LAGS {
        if n > 0 {
            dpow = &d * &dpow;
        }
        blocks.push(dpow.view((0, 0), (m, m)).into_owned());
        norms.push(tail_norm(&dpow));
        if contraction.is_none() && n >= 1 && norms[n] < 1.0 {
            contraction = Some((n, norms[n]));
        }
        if let Some((p, q)) = contraction {
            if n >= 2 * p {
                let k = n - p;
                let tail: f64 = norms[k + 1..=n].iter().sum::<f64>() / (1.0 - q);
                if tail <= opts.tol || n + 1 == MAX_LAGS {
                    cut = Some((k, tail));
                    break;
                }
            }
        }
    }
    let Some((k, tail)) = cut else {
        return NormEstimate {
            lower: 0.0,
            upper: f64::INFINITY,
            method: NormMethod::ImpulseTruncation,
        };
    };
    // blocks already carry the weight^n factor
    let terms: Vec<DMatrix<f64>> = (0..=k)
        .map(|n| if n < first_lag { DMatrix::zeros(m, m) } else { blocks[n].clone() })
        .collect();
    let partial = kernel_norm(&terms, 1.0, opts.norm);
    let lower = if c.exact { partial.lower } else { 0.0 };
    NormEstimate {
        lower,
        upper: partial.upper + tail,
        method: if c.exact {
            NormMethod::ImpulseTruncation
        } else {
            NormMethod::LipschitzBound
        },
    }
}

/// `(||s_tau||_inf, ||l_tau||_{sigma0 inf})`.
pub fn closed_loop_frozen_norms(
    g: &LoopFunction,
    tau: i64,
    sigma: f64,
    sigma0: f64,
    opts: &NormOptions,
) -> Result<(NormEstimate, NormEstimate)> {
    let f = frozen_loop(g, tau, sigma, sigma0, opts)?;
    Ok((f.s_norm, f.l_norm))
}

/// Classification plus all closed-loop norms at `tau`.
pub fn frozen_loop(
    g: &LoopFunction,
    tau: i64,
    sigma: f64,
    sigma0: f64,
    opts: &NormOptions,
) -> Result<FrozenClosedLoop> {
    if !(1.0 <= sigma && sigma < sigma0) {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= sigma < sigma0, got sigma = {sigma}, sigma0 = {sigma0}"
        )));
    }
    let c = companion(g, tau)?;
    let threshold = 1.0 / sigma0 - STABILITY_MARGIN;
    let stability = if c.radius < threshold {
        Stability::Stabilizing
    } else {
        Stability::Destabilizing
    };
    Ok(FrozenClosedLoop {
        time: tau,
        spectral_radius: c.radius,
        stability,
        majorant: !c.exact,
        s_norm: loop_norm(&c, 1.0, 0, opts),
        s_norm_sigma: loop_norm(&c, sigma, 0, opts),
        l_norm: loop_norm(&c, sigma0, 1, opts),
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::VectorNorm;
    use crate::operators::MatrixSchedule;

    fn scalar(g: f64) -> LoopFunction {
        LoopFunction::constant_matrix(DMatrix::from_element(1, 1, g))
    }

    #[test]
    fn open_loop() {
        let g = LoopFunction::constant_matrix(DMatrix::zeros(2, 2));
        let (s, l) = closed_loop_frozen_norms(&g, 0, 1.2, 1.4, &NormOptions::default()).unwrap();
        assert_eq!((s.upper, l.upper), (1.0, 0.0));
        assert!(s.is_exact() && l.is_exact());
    }

    #[test]
    fn scalar_geometric_series() {
        for g in [0.1, -0.3, 0.6] {
            let sigma0 = 1.44;
            let f = frozen_loop(&scalar(g), 0, 1.2, sigma0, &NormOptions::default()).unwrap();
            let l_exact = sigma0 * g.abs() / (1.0 - sigma0 * g.abs());
            let s_exact = 1.0 / (1.0 - g.abs());
            assert!(f.l_norm.lower <= l_exact + 1e-12 && l_exact <= f.l_norm.upper + 1e-12);
            assert!((f.l_norm.upper - l_exact).abs() < 1e-8, "{g}: {:?} vs {l_exact}", f.l_norm);
            assert!((f.s_norm.upper - s_exact).abs() < 1e-8);
            assert_eq!(f.stability, Stability::Stabilizing);
        }
    }

    #[test]
    fn unstable_pole() {
        let f = frozen_loop(&scalar(2.0), 0, 1.2, 1.4, &NormOptions::default()).unwrap();
        assert_eq!(f.l_norm.upper, f64::INFINITY);
        assert_eq!(f.s_norm.upper, f64::INFINITY);
        assert_eq!(f.stability, Stability::Destabilizing);
        for sigma0 in [1.0 + 1e-6, 1.4, 10.0] {
            assert_eq!(classify_frozen(&scalar(2.0), 0, sigma0).unwrap(), Stability::Destabilizing);
        }
    }

    #[test]
    fn small_memoryless_is_stabilizing() {
        let g = LoopFunction::constant_matrix(DMatrix::identity(2, 2) * 0.1);
        assert_eq!(classify_frozen(&g, 0, 1.4).unwrap(), Stability::Stabilizing);
    }

    #[test]
    fn pole_between_thresholds() {
        // stable at sigma = 1 but not at sigma0
        let f = frozen_loop(&scalar(0.8), 0, 1.1, 1.4, &NormOptions::default()).unwrap();
        assert_eq!(f.stability, Stability::Destabilizing);
        assert!((f.s_norm.upper - 5.0).abs() < 1e-8);
        assert_eq!(f.l_norm.upper, f64::INFINITY);
    }

    #[test]
    fn one_step_loop_matches_simulated_impulse_response() {
        let a = DMatrix::from_row_slice(2, 2, &[0.2, 0.1, -0.1, 0.3]);
        let b = DMatrix::from_row_slice(2, 2, &[0.05, 0.0, 0.02, -0.04]);
        let g = LoopFunction::one_step(MatrixSchedule::constant(a.clone()), MatrixSchedule::constant(b.clone())).unwrap();
        let opts = NormOptions::with_norm(VectorNorm::Max);
        let f = frozen_loop(&g, 0, 1.2, 1.4, &opts).unwrap();
        // P_0 = I, P_n = A P_{n-1} + B P_{n-2}
        let mut p = vec![DMatrix::identity(2, 2)];
        for n in 1..400 {
            let prev2 = if n >= 2 { p[n - 2].clone() } else { DMatrix::zeros(2, 2) };
            p.push(&a * &p[n - 1] + &b * prev2);
        }
        let l_direct = kernel_norm(&p.iter().enumerate().map(|(n, m)| if n == 0 { m * 0.0 } else { m.clone() }).collect::<Vec<_>>(), 1.4, VectorNorm::Max);
        assert!((f.l_norm.upper - l_direct.upper).abs() < 1e-8);
        assert!(f.l_norm.lower <= l_direct.upper + 1e-12);
    }

    #[test]
    fn dead_zone_uses_absolute_majorant() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -0.3, 0.3, 0.3]);
        let g = LoopFunction::dead_zone_over(LoopFunction::constant_matrix(a));
        let f = frozen_loop(&g, 0, 1.2, 1.4, &NormOptions::default()).unwrap();
        assert!(f.majorant);
        assert!((f.spectral_radius - 0.6).abs() < 1e-12);
        assert_eq!(f.l_norm.method, NormMethod::LipschitzBound);
    }

    #[test]
    fn nonlinear_composition_is_unclassifiable() {
        let inner = LoopFunction::dead_zone_over(LoopFunction::identity(1));
        let g = LoopFunction::compose(scalar(0.5), inner).unwrap();
        assert!(matches!(classify_frozen(&g, 0, 1.4), Err(Error::Unclassifiable(_))));
    }
}
