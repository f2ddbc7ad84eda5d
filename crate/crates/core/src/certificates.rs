//! Sufficient conditions for stability of `x = F u + G T x` and the gain
//! bounds they certify.
//!
//! All window conditions have the shape
//!
//! ```text
//! rho^(t_i - t) >= prod_{j=t+1}^{t_i} psi(j)   for t in [t_{i-1}, t_i - 1]
//! ```
//!
//! and are evaluated in log space. A window margin is the smallest
//! `(t_i - t) ln rho - sum ln psi(j)` over its start times.

use std::collections::BTreeMap;
use std::f64::consts::E;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{extended_f64, extended_f64_vec};
use crate::variation::{c_sigma_n, sup_n_width, VariationTrace};

/// Log margins down to this value still count as holding, so exact
/// boundary cases are not lost to rounding.
pub const MARGIN_TOL: f64 = 1e-12;

/// `a * b` with `0 * inf = 0`: a vanishing factor kills the term it scales.
fn mul0(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateInputs {
    pub sigma: f64,
    pub sigma0: f64,
    pub rho: f64,
    /// `||F||_inf`
    pub f_norm: f64,
    /// Time of the first entry of every trace.
    pub start_time: i64,
    #[serde(default)]
    pub time_sequence: Vec<i64>,
    /// `||s_t||_{inf}`
    #[serde(with = "extended_f64_vec")]
    pub s_norm: Vec<f64>,
    /// `||s_t||_{sigma inf}`
    #[serde(with = "extended_f64_vec")]
    pub s_norm_sigma: Vec<f64>,
    /// `||l_t||_{sigma0 inf}`
    #[serde(with = "extended_f64_vec")]
    pub l_norm: Vec<f64>,
    /// `||g_t||_{sigma inf}`
    #[serde(with = "extended_f64_vec")]
    pub g_norm: Vec<f64>,
    /// `c_{sigma,sigma0}(G, t)`
    pub c_coeff: Vec<f64>,
    pub stabilizing: Vec<bool>,
    /// `||nabla g_t||_{sigma inf}`
    pub variation: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Theorem1,
    Corollary1,
    Corollary2,
    #[serde(rename = "lemma9_cN")]
    Lemma9CN,
    #[serde(rename = "lemma10_special")]
    Lemma10Special,
    Corollary3Bound,
    ZamesWang,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Theorem1,
        Variant::Corollary1,
        Variant::Corollary2,
        Variant::Lemma9CN,
        Variant::Lemma10Special,
        Variant::Corollary3Bound,
        Variant::ZamesWang,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Theorem1 => "theorem1",
            Variant::Corollary1 => "corollary1",
            Variant::Corollary2 => "corollary2",
            Variant::Lemma9CN => "lemma9_cN",
            Variant::Lemma10Special => "lemma10_special",
            Variant::Corollary3Bound => "corollary3_bound",
            Variant::ZamesWang => "zames_wang",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(s))
    }

    /// Variants whose condition uses a window width `N`.
    pub fn uses_width(self) -> bool {
        matches!(self, Variant::Corollary1 | Variant::Lemma9CN | Variant::Corollary3Bound)
    }

    /// Variants evaluated over a time sequence.
    pub fn uses_sequence(self) -> bool {
        matches!(
            self,
            Variant::Theorem1 | Variant::Corollary1 | Variant::Corollary2 | Variant::Lemma9CN
        )
    }
}

/// A float that serializes `inf` as a string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Value(#[serde(with = "extended_f64")] pub f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMargin {
    /// `t_{i-1}`
    pub start: i64,
    /// `t_i`
    pub end: i64,
    /// `rho^(t_i - t)` at the worst start time `t`.
    #[serde(with = "extended_f64")]
    pub required: f64,
    /// `prod_{j=t+1}^{t_i} psi(j)` at the worst start time.
    #[serde(with = "extended_f64")]
    pub achieved: f64,
    /// `ln required - ln achieved`, minimized over start times.
    #[serde(with = "extended_f64")]
    pub margin: f64,
    pub worst_t: i64,
}

impl WindowMargin {
    pub fn holds(&self) -> bool {
        self.margin >= -MARGIN_TOL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub variant: Variant,
    pub holds: bool,
    pub windows: Vec<WindowMargin>,
    pub constants: BTreeMap<String, Value>,
    /// Certified gain bound, `inf` when nothing is claimed.
    #[serde(with = "extended_f64")]
    pub gain_bound: f64,
    /// Whether `gain_bound` is backed by the condition.
    pub gain_claimed: bool,
    pub failure_locations: Vec<i64>,
    pub notes: Vec<String>,
}

impl CertificateReport {
    fn new(variant: Variant) -> Self {
        Self {
            variant,
            holds: false,
            windows: Vec::new(),
            constants: BTreeMap::new(),
            gain_bound: f64::INFINITY,
            gain_claimed: false,
            failure_locations: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn constant(&mut self, name: &str, v: f64) {
        self.constants.insert(name.to_string(), Value(v));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.constants.get(name).map(|v| v.0)
    }

    /// Smallest window margin (`inf` without windows).
    pub fn min_margin(&self) -> f64 {
        self.windows.iter().map(|w| w.margin).fold(f64::INFINITY, f64::min)
    }

    /// Margin trace as CSV: `start,end,worst_t,required,achieved,margin`.
    pub fn margins_csv(&self) -> String {
        use crate::io::fmt_f64;
        let mut out = String::from("start,end,worst_t,required,achieved,margin\n");
        for w in &self.windows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                w.start,
                w.end,
                w.worst_t,
                fmt_f64(w.required),
                fmt_f64(w.achieved),
                fmt_f64(w.margin)
            ));
        }
        out
    }
}

impl CertificateInputs {
    pub fn len(&self) -> usize {
        self.s_norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_norm.is_empty()
    }

    pub fn end_time(&self) -> i64 {
        self.start_time + self.len() as i64 - 1
    }

    pub fn times(&self) -> std::ops::RangeInclusive<i64> {
        self.start_time..=self.end_time()
    }

    fn idx(&self, t: i64) -> usize {
        debug_assert!(t >= self.start_time && t <= self.end_time(), "time {t} outside traces");
        (t - self.start_time) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(1.0 <= self.sigma && self.sigma < self.sigma0 && self.sigma0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= sigma < sigma0, got sigma = {}, sigma0 = {}",
                self.sigma, self.sigma0
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.f_norm >= 0.0 && self.f_norm.is_finite()) {
            return Err(Error::InvalidParameter(format!("||F|| must be finite and >= 0, got {}", self.f_norm)));
        }
        let n = self.s_norm.len();
        let lens = [
            ("s_norm_sigma", self.s_norm_sigma.len()),
            ("l_norm", self.l_norm.len()),
            ("g_norm", self.g_norm.len()),
            ("c_coeff", self.c_coeff.len()),
            ("stabilizing", self.stabilizing.len()),
            ("variation", self.variation.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(Error::InvalidParameter(format!("trace {name} has length {len}, expected {n}")));
            }
        }
        let nonneg = |xs: &[f64], name: &str| -> Result<()> {
            if xs.iter().any(|x| x.is_nan() || *x < 0.0) {
                return Err(Error::InvalidParameter(format!("trace {name} must be >= 0")));
            }
            Ok(())
        };
        nonneg(&self.s_norm, "s_norm")?;
        nonneg(&self.s_norm_sigma, "s_norm_sigma")?;
        nonneg(&self.l_norm, "l_norm")?;
        nonneg(&self.g_norm, "g_norm")?;
        nonneg(&self.c_coeff, "c_coeff")?;
        nonneg(&self.variation, "variation")?;
        if self.variation.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("variation trace".into()));
        }
        if self.time_sequence.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("time sequence must be strictly increasing".into()));
        }
        if let (Some(&first), Some(&last)) = (self.time_sequence.first(), self.time_sequence.last()) {
            if first < self.start_time - 1 || last > self.end_time() {
                return Err(Error::InvalidParameter(format!(
                    "time sequence [{first}, {last}] leaves the horizon [{}, {}]",
                    self.start_time - 1,
                    self.end_time()
                )));
            }
        }
        Ok(())
    }

    pub fn variation_trace(&self) -> VariationTrace {
        VariationTrace {
            sigma: self.sigma,
            start_time: self.start_time,
            values: self.variation.clone(),
        }
    }

    pub fn sup_l(&self) -> f64 {
        self.l_norm.iter().copied().fold(0.0, f64::max)
    }

    pub fn sup_s(&self) -> f64 {
        self.s_norm.iter().copied().fold(0.0, f64::max)
    }

    fn first_destabilizing(&self) -> Option<i64> {
        self.stabilizing.iter().position(|s| !s).map(|k| self.start_time + k as i64)
    }

    /// Inputs with a different time sequence.
    pub fn with_sequence(&self, seq: Vec<i64>) -> Self {
        Self {
            time_sequence: seq,
            ..self.clone()
        }
    }

    /// Singleton windows covering the whole horizon.
    pub fn every_time(&self) -> Vec<i64> {
        (self.start_time - 1..=self.end_time()).collect()
    }
}

fn floor(inputs: &CertificateInputs) -> f64 {
    1.0 / inputs.sigma
}

/// `psi(t) = max{ min{ ||l_t|| c(t), ||g_t|| }, 1/sigma }`.
pub fn psi(inputs: &CertificateInputs, t: i64) -> f64 {
    let k = inputs.idx(t);
    mul0(inputs.l_norm[k], inputs.c_coeff[k]).min(inputs.g_norm[k]).max(floor(inputs))
}

/// `psi` with the constant coefficient `c_{sigma,N}` in place of `c(t)`.
pub fn psi_n(inputs: &CertificateInputs, t: i64, c_n: f64) -> f64 {
    let k = inputs.idx(t);
    mul0(inputs.l_norm[k], c_n).min(inputs.g_norm[k]).max(floor(inputs))
}

/// Branching `psi`: `||l_t|| c(t)` where `G_t` is stabilizing, `||g_t||`
/// where it is not, floored at `1/sigma`.
pub fn psi_hat(inputs: &CertificateInputs, t: i64) -> f64 {
    let k = inputs.idx(t);
    let inner = if inputs.stabilizing[k] {
        mul0(inputs.l_norm[k], inputs.c_coeff[k])
    } else {
        inputs.g_norm[k]
    };
    inner.max(floor(inputs))
}

pub fn psi_hat_n(inputs: &CertificateInputs, t: i64, c_n: f64) -> f64 {
    let k = inputs.idx(t);
    let inner = if inputs.stabilizing[k] {
        mul0(inputs.l_norm[k], c_n)
    } else {
        inputs.g_norm[k]
    };
    inner.max(floor(inputs))
}

/// `c_{sigma,N}(G)` from the inputs' own variation trace.
pub fn width_coefficient(inputs: &CertificateInputs, n: usize) -> Result<(f64, f64)> {
    let d_bar = sup_n_width(&inputs.variation_trace(), n)?;
    Ok((d_bar, c_sigma_n(d_bar, inputs.sigma, inputs.sigma0, n)?))
}

/// Window margins for `psi` values given on `[start_time, ...]`.
pub fn check_window_condition(psi: &[f64], start_time: i64, rho: f64, seq: &[i64]) -> Result<Vec<WindowMargin>> {
    if seq.len() < 2 {
        return Err(Error::EmptyTimeSequence);
    }
    let end = start_time + psi.len() as i64 - 1;
    if seq[0] < start_time - 1 || *seq.last().unwrap() > end {
        return Err(Error::InvalidParameter("time sequence leaves the psi trace".into()));
    }
    if seq.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("time sequence must be strictly increasing".into()));
    }
    let ln_rho = rho.ln();
    Ok(seq
        .par_windows(2)
        .map(|w| {
            let (t0, t1) = (w[0], w[1]);
            let mut sum_ln = 0.0;
            let mut best = (f64::INFINITY, t1 - 1, 0.0);
            for t in (t0..t1).rev() {
                sum_ln += psi[(t + 1 - start_time) as usize].ln();
                let m = (t1 - t) as f64 * ln_rho - sum_ln;
                if m < best.0 {
                    best = (m, t, sum_ln);
                }
            }
            let (margin, worst_t, ln_prod) = best;
            WindowMargin {
                start: t0,
                end: t1,
                required: rho.powi((t1 - worst_t) as i32),
                achieved: ln_prod.exp(),
                margin,
                worst_t,
            }
        })
        .collect())
}

fn failure_locations(psi: &[f64], start_time: i64, rho: f64, windows: &[WindowMargin]) -> Vec<i64> {
    let ln_rho = rho.ln();
    windows
        .iter()
        .filter(|w| !w.holds())
        .map(|w| {
            // shortest violated suffix: the first break scanning back from t_i
            let mut sum_ln = 0.0;
            for t in (w.start..w.end).rev() {
                sum_ln += psi[(t + 1 - start_time) as usize].ln();
                if (w.end - t) as f64 * ln_rho - sum_ln < -MARGIN_TOL {
                    return t;
                }
            }
            w.worst_t
        })
        .collect()
}

/// `(t_bar, beta, c)`.
pub fn constants_theorem1(inputs: &CertificateInputs) -> Result<(usize, f64, f64)> {
    let seq = &inputs.time_sequence;
    if seq.len() < 2 {
        return Err(Error::EmptyTimeSequence);
    }
    let t_bar = seq.windows(2).map(|w| (w[1] - w[0]) as usize).max().unwrap();
    let mut sup = 0.0_f64;
    for w in seq.windows(2) {
        for t in w[0] + 1..=w[1] {
            sup = sup.max(inputs.s_norm[inputs.idx(t)] * inputs.rho.powi((w[1] - t) as i32));
        }
    }
    let beta = mul0(t_bar as f64 * inputs.f_norm, sup);
    let c = mul0(inputs.sigma.powi(t_bar as i32 - 1) / (1.0 - inputs.rho), beta);
    Ok((t_bar, beta, c))
}

fn psi_trace(inputs: &CertificateInputs, f: impl Fn(i64) -> f64 + Sync) -> Vec<f64> {
    inputs.times().map(f).collect()
}

fn window_report(
    variant: Variant,
    inputs: &CertificateInputs,
    psi: &[f64],
) -> Result<CertificateReport> {
    inputs.validate()?;
    let windows = check_window_condition(psi, inputs.start_time, inputs.rho, &inputs.time_sequence)?;
    let mut r = CertificateReport::new(variant);
    r.holds = windows.iter().all(WindowMargin::holds);
    r.failure_locations = failure_locations(psi, inputs.start_time, inputs.rho, &windows);
    r.windows = windows;
    Ok(r)
}

fn attach_theorem1_constants(r: &mut CertificateReport, inputs: &CertificateInputs) -> Result<()> {
    let (t_bar, beta, c) = constants_theorem1(inputs)?;
    r.constant("t_bar", t_bar as f64);
    r.constant("beta", beta);
    r.constant("c", c);
    if inputs.rho <= 1.0 / inputs.sigma {
        r.notes.push(format!(
            "rho = {} <= 1/sigma = {}: the gain clause does not apply, gain bound not claimed",
            inputs.rho,
            1.0 / inputs.sigma
        ));
    } else if r.holds {
        r.gain_bound = c;
        r.gain_claimed = true;
        r.notes.push("gain bound holds at the sequence times t_i only".into());
    }
    Ok(())
}

/// Window condition with `psi`; gain bound `c` at the sequence times.
pub fn check_theorem1(inputs: &CertificateInputs) -> Result<CertificateReport> {
    let psi = psi_trace(inputs, |t| psi(inputs, t));
    let mut r = window_report(Variant::Theorem1, inputs, &psi)?;
    attach_theorem1_constants(&mut r, inputs)?;
    Ok(r)
}

/// Window condition with `psi_N`.
pub fn check_corollary1(inputs: &CertificateInputs, n: usize) -> Result<CertificateReport> {
    inputs.validate()?;
    let (d_bar, c_n) = width_coefficient(inputs, n)?;
    let psi = psi_trace(inputs, |t| psi_n(inputs, t, c_n));
    let mut r = window_report(Variant::Corollary1, inputs, &psi)?;
    r.constant("n_width", n as f64);
    r.constant("d_bar", d_bar);
    r.constant("c_sigma_n", c_n);
    attach_theorem1_constants(&mut r, inputs)?;
    Ok(r)
}

/// `(t_bar, gamma_max, beta_hat, c_hat)`.
pub fn constants_corollary2(inputs: &CertificateInputs) -> Result<(usize, f64, f64, f64)> {
    let seq = &inputs.time_sequence;
    if seq.len() < 2 {
        return Err(Error::EmptyTimeSequence);
    }
    let t_bar = seq.windows(2).map(|w| (w[1] - w[0]) as usize).max().unwrap();
    let gamma_max = (0..inputs.len())
        .map(|k| {
            if inputs.stabilizing[k] {
                mul0(inputs.f_norm, inputs.s_norm_sigma[k])
            } else {
                inputs.f_norm
            }
        })
        .fold(0.0, f64::max);
    let sr = (inputs.sigma * inputs.rho).powi(t_bar as i32);
    let beta_hat = 1.0 + mul0(sr * inputs.rho / (1.0 - inputs.rho), gamma_max);
    let c_hat = (sr / (1.0 - inputs.rho) + 1.0) * beta_hat;
    Ok((t_bar, gamma_max, beta_hat, c_hat))
}

fn attach_corollary2_constants(r: &mut CertificateReport, inputs: &CertificateInputs) -> Result<()> {
    let (t_bar, gamma_max, beta_hat, c_hat) = constants_corollary2(inputs)?;
    r.constant("t_bar", t_bar as f64);
    r.constant("gamma_max", gamma_max);
    r.constant("beta_hat", beta_hat);
    r.constant("c_hat", c_hat);
    if r.holds && c_hat.is_finite() {
        r.gain_bound = c_hat;
        r.gain_claimed = true;
    }
    Ok(())
}

/// Branching window condition with `psi_hat`; all-time gain bound `c_hat`.
pub fn check_corollary2(inputs: &CertificateInputs) -> Result<CertificateReport> {
    let psi = psi_trace(inputs, |t| psi_hat(inputs, t));
    let mut r = window_report(Variant::Corollary2, inputs, &psi)?;
    attach_corollary2_constants(&mut r, inputs)?;
    Ok(r)
}

/// Branching window condition with `psi_hat_N`.
pub fn check_lemma9(inputs: &CertificateInputs, n: usize) -> Result<CertificateReport> {
    inputs.validate()?;
    let (d_bar, c_n) = width_coefficient(inputs, n)?;
    let psi = psi_trace(inputs, |t| psi_hat_n(inputs, t, c_n));
    let mut r = window_report(Variant::Lemma9CN, inputs, &psi)?;
    r.constant("n_width", n as f64);
    r.constant("d_bar", d_bar);
    r.constant("c_sigma_n", c_n);
    attach_corollary2_constants(&mut r, inputs)?;
    Ok(r)
}

/// `c_bar = ||F|| sup s / (1 - rho)`.
pub fn c_bar(inputs: &CertificateInputs) -> f64 {
    mul0(inputs.f_norm, inputs.sup_s()) / (1.0 - inputs.rho)
}

fn require_stabilizing(inputs: &CertificateInputs) -> Result<()> {
    match inputs.first_destabilizing() {
        Some(t) => Err(Error::RequiresStabilizing { t }),
        None => Ok(()),
    }
}

/// `c(t) <= rho / ||l_t||` at every time; gain bound `c_bar`.
pub fn check_lemma10(inputs: &CertificateInputs) -> Result<CertificateReport> {
    inputs.validate()?;
    require_stabilizing(inputs)?;
    let mut r = CertificateReport::new(Variant::Lemma10Special);
    let ln_rho = inputs.rho.ln();
    r.windows = inputs
        .times()
        .map(|t| {
            let k = inputs.idx(t);
            let achieved = mul0(inputs.l_norm[k], inputs.c_coeff[k]);
            WindowMargin {
                start: t - 1,
                end: t,
                required: inputs.rho,
                achieved,
                margin: ln_rho - achieved.ln(),
                worst_t: t - 1,
            }
        })
        .collect();
    r.failure_locations = r.windows.iter().filter(|w| !w.holds()).map(|w| w.end).collect();
    r.holds = r.failure_locations.is_empty();
    let cb = c_bar(inputs);
    r.constant("sup_s", inputs.sup_s());
    r.constant("c_bar", cb);
    if inputs.rho <= 1.0 / inputs.sigma {
        r.notes.push("rho <= 1/sigma: gain bound not claimed".into());
    } else if r.holds {
        r.gain_bound = cb;
        r.gain_claimed = true;
    }
    Ok(r)
}

/// `(sigma0/sigma)^(1-N) e ln(sigma0/sigma) rho / sup ||l_t||`.
pub fn tolerable_variation_bound(sup_l: f64, sigma: f64, sigma0: f64, rho: f64, n: usize) -> Result<f64> {
    check_bound_inputs(sup_l, sigma, sigma0, rho)?;
    if n == 0 {
        return Err(Error::InvalidParameter("window width N must be positive".into()));
    }
    let y = sigma0 / sigma;
    Ok(y.powi(1 - n as i32) * (E * y.ln()) / sup_l * rho)
}

/// `e ln(sigma0/sigma) rho / sup ||l_t||`, the worst-case per-step bound.
pub fn zames_wang_bound(sup_l: f64, sigma: f64, sigma0: f64, rho: f64) -> Result<f64> {
    check_bound_inputs(sup_l, sigma, sigma0, rho)?;
    let y = sigma0 / sigma;
    Ok((E * y.ln()) / sup_l * rho)
}

fn check_bound_inputs(sup_l: f64, sigma: f64, sigma0: f64, rho: f64) -> Result<()> {
    if !(1.0 <= sigma && sigma < sigma0 && sigma0.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= sigma < sigma0, got sigma = {sigma}, sigma0 = {sigma0}"
        )));
    }
    if !(sup_l > 0.0) {
        return Err(Error::InvalidParameter(format!("sup ||l_t|| must be positive, got {sup_l}")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("rho must lie in (0, 1), got {rho}")));
    }
    Ok(())
}

/// Plant variation bound for an adaptive loop: the tolerable bound with
/// `sigma0 = lambda`, divided by the controller factor norm.
pub fn adaptive_plant_bound(
    controller_factor_norm: f64,
    sup_l_lambda: f64,
    sigma: f64,
    lambda: f64,
    rho: f64,
    n: usize,
) -> Result<f64> {
    if !(controller_factor_norm > 0.0 && controller_factor_norm.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "controller factor norm must be positive, got {controller_factor_norm}"
        )));
    }
    Ok(tolerable_variation_bound(sup_l_lambda, sigma, lambda, rho, n)? / controller_factor_norm)
}

fn per_time_report(variant: Variant, trace: &VariationTrace, bound: f64) -> CertificateReport {
    let mut r = CertificateReport::new(variant);
    r.windows = trace
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let t = trace.start_time + k as i64;
            WindowMargin {
                start: t - 1,
                end: t,
                required: bound,
                achieved: *v,
                margin: bound.ln() - v.ln(),
                worst_t: t - 1,
            }
        })
        .collect();
    r.failure_locations = r.windows.iter().filter(|w| w.achieved > bound).map(|w| w.end).collect();
    r.holds = r.failure_locations.is_empty();
    r
}

/// `||nabla g_t|| <= dbarbar_1` at every time. A destabilizing frozen loop
/// (`sup_l = inf`) makes the bound zero.
pub fn zames_wang_check(trace: &VariationTrace, sup_l: f64, sigma: f64, sigma0: f64, rho: f64) -> Result<CertificateReport> {
    let bound = if sup_l.is_infinite() {
        check_bound_inputs(1.0, sigma, sigma0, rho)?;
        0.0
    } else {
        zames_wang_bound(sup_l, sigma, sigma0, rho)?
    };
    let mut r = per_time_report(Variant::ZamesWang, trace, bound);
    r.constant("d_bar_bar_1", bound);
    r.constant("sup_l", sup_l);
    r.constant("sup_variation", trace.max());
    r.constant("prior_work_rate", trace.prior_work_rate());
    if sup_l.is_infinite() {
        r.notes.push("some frozen loop is destabilizing: tolerable variation is zero".into());
    }
    Ok(r)
}

/// [`zames_wang_check`] on certificate inputs, with `c_bar` as gain bound.
pub fn check_zames_wang(inputs: &CertificateInputs) -> Result<CertificateReport> {
    inputs.validate()?;
    let mut r = zames_wang_check(&inputs.variation_trace(), inputs.sup_l(), inputs.sigma, inputs.sigma0, inputs.rho)?;
    let cb = c_bar(inputs);
    r.constant("c_bar", cb);
    if r.holds && cb.is_finite() {
        r.gain_bound = cb;
        r.gain_claimed = true;
    }
    Ok(r)
}

/// `dbar_{sigma,N} <= dbarbar_{sigma,N}` on a bare trace. Returns
/// `(holds, dbar, dbarbar)`.
pub fn corollary3_condition(
    trace: &VariationTrace,
    sup_l: f64,
    sigma0: f64,
    rho: f64,
    n: usize,
) -> Result<(bool, f64, f64)> {
    let bound = tolerable_variation_bound(sup_l, trace.sigma, sigma0, rho, n)?;
    let d_bar = sup_n_width(trace, n)?;
    Ok((d_bar <= bound, d_bar, bound))
}

/// Average-rate condition; gain bound `c_bar`.
pub fn check_corollary3(inputs: &CertificateInputs, n: usize) -> Result<CertificateReport> {
    inputs.validate()?;
    require_stabilizing(inputs)?;
    let trace = inputs.variation_trace();
    let (holds, d_bar, bound) = corollary3_condition(&trace, inputs.sup_l(), inputs.sigma0, inputs.rho, n)?;
    let mut r = CertificateReport::new(Variant::Corollary3Bound);
    r.holds = holds;
    r.constant("n_width", n as f64);
    r.constant("d_bar", d_bar);
    r.constant("d_bar_bar", bound);
    let cb = c_bar(inputs);
    r.constant("c_bar", cb);
    // per-time N-width averages against the bound
    r.windows = inputs
        .times()
        .map(|t| {
            let avg = crate::variation::n_width_average(&trace, n, t).unwrap_or(0.0);
            WindowMargin {
                start: t - n as i64,
                end: t,
                required: bound,
                achieved: avg,
                margin: bound.ln() - avg.ln(),
                worst_t: t - n as i64,
            }
        })
        .collect();
    r.failure_locations = r.windows.iter().filter(|w| w.achieved > bound).map(|w| w.end).collect();
    if inputs.rho <= 1.0 / inputs.sigma {
        r.notes.push("rho <= 1/sigma: gain bound not claimed".into());
    } else if holds {
        r.gain_bound = cb;
        r.gain_claimed = true;
    }
    Ok(r)
}

/// Evaluate one variant. `n` is the window width for the `N` variants.
pub fn check(inputs: &CertificateInputs, variant: Variant, n: usize) -> Result<CertificateReport> {
    match variant {
        Variant::Theorem1 => check_theorem1(inputs),
        Variant::Corollary1 => check_corollary1(inputs, n),
        Variant::Corollary2 => check_corollary2(inputs),
        Variant::Lemma9CN => check_lemma9(inputs, n),
        Variant::Lemma10Special => check_lemma10(inputs),
        Variant::Corollary3Bound => check_corollary3(inputs, n),
        Variant::ZamesWang => check_zames_wang(inputs),
    }
}

/// The psi trace a sequence-based variant is evaluated on.
pub fn psi_for(inputs: &CertificateInputs, variant: Variant, n: usize) -> Result<Vec<f64>> {
    Ok(match variant {
        Variant::Theorem1 => psi_trace(inputs, |t| psi(inputs, t)),
        Variant::Corollary2 => psi_trace(inputs, |t| psi_hat(inputs, t)),
        Variant::Corollary1 => {
            let (_, c_n) = width_coefficient(inputs, n)?;
            psi_trace(inputs, |t| psi_n(inputs, t, c_n))
        }
        Variant::Lemma9CN => {
            let (_, c_n) = width_coefficient(inputs, n)?;
            psi_trace(inputs, |t| psi_hat_n(inputs, t, c_n))
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "variant {} has no window condition",
                other.name()
            )))
        }
    })
}

/// Greedy time sequence: from `t_0 = start_time - 1`, close each window at
/// the earliest `t_i` for which the window condition holds. Closing early
/// never hurts: once every suffix product is within its `rho` power, the
/// next window starts from the same state it would have inherited.
pub fn propose_time_sequence(psi: &[f64], start_time: i64, rho: f64, max_gap: usize) -> Result<Vec<i64>> {
    if max_gap == 0 {
        return Err(Error::InvalidParameter("max_gap must be positive".into()));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("rho must lie in (0, 1), got {rho}")));
    }
    let ln_rho = rho.ln();
    let end = start_time + psi.len() as i64 - 1;
    let mut seq = vec![start_time - 1];
    let mut prev = start_time - 1;
    // largest suffix sum of ln psi(j) - ln rho over the open window
    let mut worst: Option<f64> = None;
    for t in start_time..=end {
        let a = psi[(t - start_time) as usize].ln() - ln_rho;
        let m = a + worst.map_or(0.0, |w| w.max(0.0));
        if m <= MARGIN_TOL {
            seq.push(t);
            prev = t;
            worst = None;
        } else if (t - prev) as usize >= max_gap {
            return Err(Error::InfeasibleSequence { after: prev, max_gap });
        } else {
            worst = Some(m);
        }
    }
    if prev != end {
        return Err(Error::InfeasibleSequence { after: prev, max_gap });
    }
    Ok(seq)
}

/// `v(t) = decay(t) v(t-1) + forcing(t)` in closed form:
/// `v(t) = (prod_{j<=t} decay(j)) v_init + sum_{tau<=t} (prod_{tau<j<=t} decay(j)) forcing(tau)`.
pub fn unroll_recursion(decay: &[f64], forcing: &[f64], initial: f64) -> Result<Vec<f64>> {
    if decay.len() != forcing.len() {
        return Err(Error::DimensionMismatch {
            expected: decay.len(),
            found: forcing.len(),
        });
    }
    let n = decay.len();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let mut prod = 1.0;
        let mut acc = 0.0;
        for tau in (0..=t).rev() {
            acc += prod * forcing[tau];
            prod *= decay[tau];
        }
        out.push(prod * initial + acc);
    }
    Ok(out)
}

/// One row of a side-by-side comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub condition: Variant,
    pub holds: bool,
    #[serde(with = "extended_f64")]
    pub margin: f64,
    #[serde(with = "extended_f64")]
    pub gain_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ComparisonRow {
    pub fn from_report(r: &CertificateReport) -> Self {
        Self {
            condition: r.variant,
            holds: r.holds,
            margin: r.min_margin(),
            gain_bound: r.gain_bound,
            error: None,
        }
    }
}

/// The listed variants side by side with the worst-case baseline appended.
/// Variants that cannot be evaluated on these inputs are reported as not
/// holding, with the reason.
pub fn compare(inputs: &CertificateInputs, variants: &[Variant], n: usize) -> Result<Vec<ComparisonRow>> {
    inputs.validate()?;
    let mut list: Vec<Variant> = variants.to_vec();
    if !list.contains(&Variant::ZamesWang) {
        list.push(Variant::ZamesWang);
    }
    Ok(list
        .into_iter()
        .map(|v| match check(inputs, v, n) {
            Ok(r) => ComparisonRow::from_report(&r),
            Err(e) => ComparisonRow {
                condition: v,
                holds: false,
                margin: f64::NEG_INFINITY,
                gain_bound: f64::INFINITY,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(n: usize) -> CertificateInputs {
        CertificateInputs {
            sigma: 1.2,
            sigma0: 1.44,
            rho: 0.9,
            f_norm: 1.0,
            start_time: 0,
            time_sequence: vec![],
            s_norm: vec![1.0; n],
            s_norm_sigma: vec![1.0; n],
            l_norm: vec![1.0; n],
            g_norm: vec![0.0; n],
            c_coeff: vec![0.0; n],
            stabilizing: vec![true; n],
            variation: vec![0.0; n],
        }
    }

    #[test]
    fn psi_examples() {
        let mut i = inputs(3);
        assert_eq!(psi(&i, 0), 1.0 / 1.2);

        i.l_norm[1] = f64::INFINITY;
        i.g_norm[1] = 2.0;
        i.c_coeff[1] = 0.3;
        assert_eq!(psi(&i, 1), 2.0);

        i.l_norm[2] = 4.8839;
        i.c_coeff[2] = 0.01;
        i.g_norm[2] = 10.0;
        assert!((psi(&i, 2) - 1.0 / 1.2).abs() < 1e-15);
        assert!(4.8839 * 0.01 < 1.0 / 1.2);

        // l = inf with zero variation: the variation term vanishes
        i.c_coeff[1] = 0.0;
        assert_eq!(psi(&i, 1), 1.0 / 1.2);
    }

    #[test]
    fn psi_hat_examples() {
        let mut i = inputs(3);
        assert_eq!(psi_hat(&i, 0), 1.0 / 1.2);
        i.stabilizing[1] = false;
        i.g_norm[1] = 1.5;
        assert_eq!(psi_hat(&i, 1), 1.5);
        i.l_norm[2] = 2.0;
        i.c_coeff[2] = 0.5;
        assert_eq!(psi_hat(&i, 2), 1.0);
        assert_eq!(psi_hat_n(&inputs(1), 0, 0.0), 1.0 / 1.2);
    }

    #[test]
    fn window_condition_examples() {
        let rho = 0.9;
        let small = vec![0.85; 6];
        let w = check_window_condition(&small, 0, rho, &[-1, 2, 5]).unwrap();
        assert!(w.iter().all(WindowMargin::holds));
        let w = check_window_condition(&small, 0, rho, &[-1, 0, 1, 2, 3, 4, 5]).unwrap();
        assert!(w.iter().all(WindowMargin::holds));

        let mut burst = vec![0.5; 6];
        burst[2] = 1.0 / rho;
        let w = check_window_condition(&burst, 0, rho, &[-1, 0, 1, 2, 3, 4, 5]).unwrap();
        assert!(!w[2].holds());
        assert!(w.iter().enumerate().all(|(k, m)| k == 2 || m.holds()));
        assert!(check_window_condition(&burst, 0, rho, &[3]).is_err());
    }

    #[test]
    fn theorem1_constants_examples() {
        let mut i = inputs(4);
        i.s_norm = vec![2.0, 1.0, 1.5, 1.2];
        i.time_sequence = vec![-1, 0, 1, 2, 3];
        let (t_bar, beta, c) = constants_theorem1(&i).unwrap();
        assert_eq!(t_bar, 1);
        assert_eq!(beta, 2.0);
        assert!((c - 2.0 / 0.1).abs() < 1e-12);
        assert!((c - c_bar(&i)).abs() < 1e-12);

        i.f_norm = 0.0;
        let (_, beta, c) = constants_theorem1(&i).unwrap();
        assert_eq!((beta, c), (0.0, 0.0));

        // t_bar = 3, sup term 2
        let mut i = inputs(3);
        i.s_norm = vec![1.0, 1.0, 2.0];
        i.time_sequence = vec![-1, 2];
        let (t_bar, beta, c) = constants_theorem1(&i).unwrap();
        assert_eq!(t_bar, 3);
        assert!((beta - 6.0).abs() < 1e-12);
        assert!((c - 86.4).abs() < 1e-10);

        assert!(matches!(constants_theorem1(&inputs(2)), Err(Error::EmptyTimeSequence)));
    }

    #[test]
    fn corollary2_constants_examples() {
        let mut i = inputs(3);
        i.time_sequence = vec![-1, 0, 1, 2];
        let (t_bar, gamma, beta_hat, c_hat) = constants_corollary2(&i).unwrap();
        assert_eq!((t_bar, gamma), (1, 1.0));
        assert!((beta_hat - 10.72).abs() < 1e-12);
        assert!((c_hat - (1.08 / 0.1 + 1.0) * 10.72).abs() < 1e-10);
        assert!((c_hat - 126.5).abs() < 0.01);

        i.f_norm = 0.0;
        let (_, _, beta_hat, c_hat) = constants_corollary2(&i).unwrap();
        assert_eq!(beta_hat, 1.0);
        assert!((c_hat - (1.08 / 0.1 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn theorem1_holds_for_quiet_loop() {
        let mut i = inputs(20);
        i.time_sequence = i.every_time();
        let r = check_theorem1(&i).unwrap();
        assert!(r.holds);
        assert!(r.gain_claimed && r.gain_bound.is_finite());

        i.g_norm = vec![1.5; 20];
        i.c_coeff = vec![1.5; 20];
        i.time_sequence = vec![-1, 9, 19];
        let r = check_theorem1(&i).unwrap();
        assert!(!r.holds);
        assert!(!r.gain_claimed);
        assert_eq!(r.failure_locations, vec![8, 18]);
    }

    #[test]
    fn theorem1_gain_clause_needs_rho_above_floor() {
        let mut i = inputs(5);
        i.rho = 0.8;
        i.time_sequence = i.every_time();
        let r = check_theorem1(&i).unwrap();
        assert!(!r.gain_claimed);
        assert!(!r.notes.is_empty());
    }

    #[test]
    fn lemma10_examples() {
        let mut i = inputs(6);
        let r = check_lemma10(&i).unwrap();
        assert!(r.holds);
        assert!((r.gain_bound - 1.0 / 0.1).abs() < 1e-12);

        i.l_norm = vec![2.0; 6];
        i.c_coeff = vec![0.45; 6];
        let r = check_lemma10(&i).unwrap();
        assert!(r.holds, "{:?}", r.windows[0]);
        assert!(r.min_margin().abs() < 1e-12);

        i.stabilizing[3] = false;
        assert!(matches!(check_lemma10(&i), Err(Error::RequiresStabilizing { t: 3 })));
    }

    #[test]
    fn lemma10_agrees_with_singleton_theorem1() {
        let mut i = inputs(8);
        i.s_norm = vec![1.1, 1.3, 1.2, 1.0, 1.05, 1.4, 1.2, 1.1];
        i.l_norm = vec![2.0, 1.5, 1.0, 3.0, 2.5, 1.0, 0.5, 2.0];
        i.c_coeff = vec![0.1, 0.2, 0.3, 0.05, 0.1, 0.2, 0.4, 0.1];
        i.g_norm = vec![5.0; 8];
        i.time_sequence = i.every_time();
        let l10 = check_lemma10(&i).unwrap();
        let t1 = check_theorem1(&i).unwrap();
        assert!(l10.holds && t1.holds);
        assert!((l10.gain_bound - t1.gain_bound).abs() < 1e-12);
    }

    #[test]
    fn variation_bounds() {
        let b1 = zames_wang_bound(4.8839, 1.2, 1.44, 0.9).unwrap();
        assert!((b1 - 0.0913).abs() < 5e-4);
        assert_eq!(tolerable_variation_bound(4.8839, 1.2, 1.44, 0.9, 1).unwrap(), b1);
        let b2 = tolerable_variation_bound(4.8839, 1.2, 1.44, 0.9, 2).unwrap();
        assert!((b2 - b1 / 1.2).abs() < 1e-15);
        assert!(tolerable_variation_bound(4.8839, 1.44, 1.2, 0.9, 1).is_err());

        let a = adaptive_plant_bound(1.0, 4.8839, 1.2, 1.44, 0.9, 1).unwrap();
        assert_eq!(a, b1);
        let a2 = adaptive_plant_bound(2.0, 4.8839, 1.2, 1.44, 0.9, 1).unwrap();
        assert!((a2 - 0.04567).abs() < 5e-5);
        assert_eq!(a2, a / 2.0);
    }

    #[test]
    fn zames_wang_examples() {
        let z = VariationTrace::new(1.2, 0, vec![0.0; 10]).unwrap();
        assert!(zames_wang_check(&z, 4.8839, 1.2, 1.44, 0.9).unwrap().holds);

        let mut v = vec![0.0; 10];
        v[4] = 0.12;
        let spike = VariationTrace::new(1.2, 0, v).unwrap();
        let r = zames_wang_check(&spike, 4.8839, 1.2, 1.44, 0.9).unwrap();
        assert!(!r.holds);
        assert_eq!(r.failure_locations, vec![4]);
        let (holds, d_bar, bound) = corollary3_condition(&spike, 4.8839, 1.44, 0.9, 2).unwrap();
        assert!(holds && d_bar <= bound);

        let r = zames_wang_check(&spike, f64::INFINITY, 1.2, 1.44, 0.9).unwrap();
        assert_eq!(r.get("d_bar_bar_1"), Some(0.0));
        assert!(!r.holds);
    }

    #[test]
    fn propose_examples() {
        let quiet = vec![1.0 / 1.2; 8];
        assert_eq!(propose_time_sequence(&quiet, 0, 0.9, 3).unwrap(), (-1..8).collect::<Vec<_>>());

        let mut burst = vec![1.0 / 1.2; 30];
        burst[3] = 1.5;
        let seq = propose_time_sequence(&burst, 0, 0.9, 30).unwrap();
        let w = check_window_condition(&burst, 0, 0.9, &seq).unwrap();
        assert!(w.iter().all(WindowMargin::holds));
        assert!(seq.windows(2).any(|p| p[0] < 3 && p[1] > 3));

        let bad = vec![1.1; 5];
        assert!(matches!(
            propose_time_sequence(&bad, 0, 0.9, 4),
            Err(Error::InfeasibleSequence { after: -1, .. })
        ));
    }

    #[test]
    fn unroll_examples() {
        let f = [1.0, 2.0, -3.0];
        assert_eq!(unroll_recursion(&[0.0; 3], &f, 7.0).unwrap(), f.to_vec());
        let v = unroll_recursion(&vec![0.5; 200], &vec![1.0; 200], 0.0).unwrap();
        assert!((v[199] - 2.0).abs() < 1e-12);
        assert!(unroll_recursion(&[1.0], &[], 0.0).is_err());
    }

    #[test]
    fn report_json_is_stable() {
        let mut i = inputs(3);
        i.l_norm[0] = f64::INFINITY;
        i.stabilizing[0] = false;
        i.time_sequence = i.every_time();
        let r = check_corollary2(&i).unwrap();
        let j = serde_json::to_string(&r).unwrap();
        assert!(j.contains("\"variant\":\"corollary2\""));
        let back: CertificateReport = serde_json::from_str(&j).unwrap();
        assert_eq!(back, r);
        let ij = serde_json::to_string(&i).unwrap();
        assert!(ij.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<CertificateInputs>(&ij).unwrap(), i);
    }
}
