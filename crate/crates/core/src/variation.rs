//! Snapshot-difference traces and the coefficients built on them.
//!
//! ```text
//! d_{sigma,N}(t)          = (1/N) sum_{i=t-N+1}^{t} ||nabla g_i||
//! c_{sigma,sigma0}(G, t)  = sup_{i>=1} (sigma/sigma0)^i sum_{q=t-i+1}^{t} ||nabla g_q||
//! c_{sigma,N}(G)          = (e ln(sigma0/sigma))^-1 (sigma0/sigma)^(N-1) dbar_{sigma,N}
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{snapshot_delta_estimate, LoopFunction, NormEstimate, NormOptions};

/// Entry `k` is `||nabla g_{start_time + k}||_{sigma inf}`; zero outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationTrace {
    pub sigma: f64,
    pub start_time: i64,
    pub values: Vec<f64>,
}

impl VariationTrace {
    pub fn new(sigma: f64, start_time: i64, values: Vec<f64>) -> Result<Self> {
        if !(sigma >= 1.0) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 1, got {sigma}")));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter("variation values must be finite and nonnegative".into()));
        }
        Ok(Self {
            sigma,
            start_time,
            values,
        })
    }

    pub fn end(&self) -> i64 {
        self.start_time + self.values.len() as i64 - 1
    }

    pub fn at(&self, t: i64) -> f64 {
        if t < self.start_time {
            return 0.0;
        }
        self.values.get((t - self.start_time) as usize).copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// The rate of the prior worst-case analysis, `sigma * sup ||nabla g||`,
    /// which differs from [`VariationTrace::max`] by the factor `sigma`.
    pub fn prior_work_rate(&self) -> f64 {
        self.sigma * self.max()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value\n");
        for (k, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.start_time + k as i64, crate::io::fmt_f64(*v)));
        }
        out
    }
}

/// `||nabla h_t||_{sigma inf}`.
pub fn snapshot_delta_norm(h: &LoopFunction, t: i64, sigma: f64, opts: &NormOptions) -> Result<NormEstimate> {
    snapshot_delta_estimate(h, t, sigma, opts)
}

/// Upper bounds of `||nabla g_t||` for `t` in `[t0, t1]`.
pub fn variation_trace(g: &LoopFunction, t0: i64, t1: i64, sigma: f64, opts: &NormOptions) -> Result<VariationTrace> {
    let values = (t0..=t1)
        .into_par_iter()
        .map(|t| snapshot_delta_estimate(g, t, sigma, opts).map(|e| e.upper))
        .collect::<Result<Vec<f64>>>()?;
    VariationTrace::new(sigma, t0, values)
}

fn check_width(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("window width N must be positive".into()));
    }
    Ok(())
}

/// `d_{sigma,N}(t)`.
pub fn n_width_average(trace: &VariationTrace, n: usize, t: i64) -> Result<f64> {
    check_width(n)?;
    let sum: f64 = (t - n as i64 + 1..=t).map(|i| trace.at(i)).sum();
    Ok(sum / n as f64)
}

/// `dbar_{sigma,N}`: the largest `d_{sigma,N}(t)` over the trace support.
pub fn sup_n_width(trace: &VariationTrace, n: usize) -> Result<f64> {
    check_width(n)?;
    let mut best = 0.0_f64;
    for t in trace.start_time..=trace.end() {
        best = best.max(n_width_average(trace, n, t)?);
    }
    Ok(best)
}

fn check_sigmas(sigma: f64, sigma0: f64) -> Result<()> {
    if !(1.0 <= sigma && sigma < sigma0 && sigma0.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= sigma < sigma0, got sigma = {sigma}, sigma0 = {sigma0}"
        )));
    }
    Ok(())
}

/// `c_{sigma,sigma0}(G, t)`, exact. Partial sums stop growing once the
/// window reaches back past the trace start, so the supremum over all
/// `i >= 1` is attained within the first `t - start + 1` terms.
pub fn c_sigma_sigma0(trace: &VariationTrace, sigma0: f64, t: i64) -> Result<f64> {
    check_sigmas(trace.sigma, sigma0)?;
    let r = trace.sigma / sigma0;
    let last = (t - trace.start_time + 1).max(1);
    let total: f64 = (t - last + 1..=t).map(|q| trace.at(q)).sum();
    let mut best = 0.0_f64;
    let mut partial = 0.0;
    let mut weight = 1.0;
    for i in 1..=last {
        partial += trace.at(t - i + 1);
        weight *= r;
        best = best.max(weight * partial);
        if weight * total <= best {
            break;
        }
    }
    Ok(best)
}

/// `c_{sigma,sigma0}(G, t)` for every `t` of the trace.
pub fn c_sigma_sigma0_trace(trace: &VariationTrace, sigma0: f64) -> Result<Vec<f64>> {
    check_sigmas(trace.sigma, sigma0)?;
    (trace.start_time..=trace.end())
        .into_par_iter()
        .map(|t| c_sigma_sigma0(trace, sigma0, t))
        .collect()
}

/// `c_{sigma,N}(G)`.
pub fn c_sigma_n(d_bar: f64, sigma: f64, sigma0: f64, n: usize) -> Result<f64> {
    check_sigmas(sigma, sigma0)?;
    check_width(n)?;
    if !(d_bar >= 0.0) {
        return Err(Error::InvalidParameter(format!("d_bar must be >= 0, got {d_bar}")));
    }
    let y = sigma0 / sigma;
    Ok(y.powi(n as i32 - 1) * d_bar / (std::f64::consts::E * y.ln()))
}

/// Upper bound `||K|| dbar(G)` on the variation rate of `G K` with `K`
/// time-invariant.
pub fn product_variation_bound(d_bar_g: f64, k_norm: f64) -> Result<f64> {
    if !(d_bar_g >= 0.0 && k_norm >= 0.0) {
        return Err(Error::InvalidParameter("variation and norm must be >= 0".into()));
    }
    Ok(k_norm * d_bar_g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::VectorNorm;
    use crate::operators::MatrixSchedule;
    use nalgebra::DMatrix;

    fn tr(values: &[f64]) -> VariationTrace {
        VariationTrace::new(1.2, 0, values.to_vec()).unwrap()
    }

    #[test]
    fn n_width_examples() {
        let z = tr(&[0.0; 5]);
        assert_eq!(n_width_average(&z, 3, 4).unwrap(), 0.0);
        assert_eq!(sup_n_width(&z, 2).unwrap(), 0.0);

        let t = tr(&[0.0, 0.0, 3.0, 0.0]);
        assert_eq!(n_width_average(&t, 4, 3).unwrap(), 0.75);
        assert_eq!(sup_n_width(&t, 4).unwrap(), 0.75);
        assert_eq!(sup_n_width(&t, 1).unwrap(), 3.0);
        for s in 0..4 {
            assert_eq!(n_width_average(&t, 1, s).unwrap(), t.at(s));
        }
        assert!(n_width_average(&t, 0, 3).is_err());
    }

    #[test]
    fn c_sigma_sigma0_examples() {
        let sigma0 = 1.44;
        assert_eq!(c_sigma_sigma0(&tr(&[0.0; 6]), sigma0, 5).unwrap(), 0.0);

        let jump = tr(&[0.0, 0.0, 0.7, 0.0, 0.0]);
        let c = c_sigma_sigma0(&jump, sigma0, 2).unwrap();
        assert!((c - 1.2 / 1.44 * 0.7).abs() < 1e-15);

        // constant trace: enumerate i directly
        let d = 0.3;
        let long = tr(&vec![d; 400]);
        let t = 200;
        let r: f64 = 1.2 / 1.44;
        let brute = (1..=1000).map(|i| r.powi(i) * (i.min(t as i32 + 1) as f64) * d).fold(0.0, f64::max);
        let c = c_sigma_sigma0(&long, sigma0, t as i64).unwrap();
        assert!((c - brute).abs() < 1e-14);
        assert!(c <= d / (std::f64::consts::E * (1.44_f64 / 1.2).ln()));
        assert!(c_sigma_sigma0(&long, 1.2, 3).is_err());
    }

    #[test]
    fn c_sigma_sigma0_before_and_after_support() {
        let t = VariationTrace::new(1.1, 10, vec![0.5, 0.2]).unwrap();
        assert_eq!(c_sigma_sigma0(&t, 1.3, 5).unwrap(), 0.0);
        let r: f64 = 1.1 / 1.3;
        // at t = 14 the nearest nonzero entry is 3 steps back
        let expect = (r.powi(4) * 0.2).max(r.powi(5) * 0.7);
        assert!((c_sigma_sigma0(&t, 1.3, 14).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn c_sigma_n_examples() {
        assert_eq!(c_sigma_n(0.0, 1.2, 1.44, 3).unwrap(), 0.0);
        let c1 = c_sigma_n(0.0913, 1.2, 1.44, 1).unwrap();
        let oracle = 0.0913 / (std::f64::consts::E * 1.2_f64.ln());
        assert!((c1 - oracle).abs() < 1e-15);
        assert!((c1 - 0.18420).abs() < 5e-5);
        let c2 = c_sigma_n(0.0913, 1.2, 1.44, 2).unwrap();
        assert!((c2 - c1 * 1.2).abs() < 1e-15);
        assert!(c_sigma_n(0.1, 1.44, 1.2, 1).is_err());
    }

    #[test]
    fn product_bound_examples() {
        assert_eq!(product_variation_bound(0.4, 1.0).unwrap(), 0.4);
        assert_eq!(product_variation_bound(0.4, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn trace_of_ti_system_is_zero() {
        let g = LoopFunction::constant_matrix(DMatrix::identity(2, 2) * 0.3);
        let tr = variation_trace(&g, 0, 20, 1.2, &NormOptions::default()).unwrap();
        assert!(tr.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn memoryless_trace_values() {
        let sched = MatrixSchedule::new(0, vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 0.5]).unwrap();
        let g = LoopFunction::memoryless(sched);
        let tr = variation_trace(&g, 0, 3, 1.2, &NormOptions::with_norm(VectorNorm::Max)).unwrap();
        assert_eq!(tr.values, vec![0.0, 0.5, 0.0, 0.0]);
        assert_eq!(tr.prior_work_rate(), 0.6);
    }
}
