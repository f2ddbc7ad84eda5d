//! Causal time-varying operators and their frozen-time snapshots.
//!
//! Snapshots use a common re-anchored input history: `h_i` applied to a
//! history `w` whose "present" is time `t` evaluates the operator with its
//! parameters as they are at `i`, reading `w(t - k)` for lag `k`. Under that
//! convention
//!
//! ```text
//! (H u)(t) - (H_tau u)(t) = sum_{i=t+1}^{tau} (h_{i-1} - h_i) applied to u at t
//! ```
//!
//! telescopes exactly.

mod frozen;
mod norms;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, VectorNorm};
use crate::signals::{History, Shifted, Signal, Window};

pub use frozen::{classify_frozen, closed_loop_frozen_norms, frozen_loop, FrozenClosedLoop, Stability};
pub use norms::{
    induced_norm_frozen, kernel_norm, random_search_lower, snapshot_delta_estimate, NormEstimate, NormMethod,
    NormOptions,
};

/// Time-indexed matrices. Times outside the stored range read the nearest
/// stored matrix, so a single matrix is a constant schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSchedule {
    start: i64,
    matrices: Vec<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleJson {
    #[serde(default)]
    start_time: i64,
    matrices: Vec<Vec<Vec<f64>>>,
}

impl MatrixSchedule {
    pub fn new(start: i64, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::InvalidParameter("matrix schedule is empty".into()))?;
        let shape = first.shape();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::InvalidParameter("matrix schedule has empty matrices".into()));
        }
        for m in &matrices {
            if m.shape() != shape {
                return Err(Error::DimensionMismatch {
                    expected: shape.0 * shape.1,
                    found: m.nrows() * m.ncols(),
                });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("matrix schedule".into()));
            }
        }
        Ok(Self { start, matrices })
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self::new(0, vec![m]).expect("constant schedule needs a finite non-empty matrix")
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn rows(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrices[0].ncols()
    }

    pub fn at(&self, t: i64) -> &DMatrix<f64> {
        let k = (t - self.start).clamp(0, self.matrices.len() as i64 - 1);
        &self.matrices[k as usize]
    }

    fn is_constant(&self) -> bool {
        self.matrices.windows(2).all(|w| w[0] == w[1])
    }
}

impl Serialize for MatrixSchedule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ScheduleJson {
            start_time: self.start,
            matrices: self.matrices.iter().map(linalg::to_rows).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MatrixSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ScheduleJson::deserialize(d)?;
        let ms = j
            .matrices
            .iter()
            .map(|rows| linalg::from_rows(rows))
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        MatrixSchedule::new(j.start_time, ms).map_err(serde::de::Error::custom)
    }
}

/// A causal time-varying operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoopFunction {
    /// `(Hx)(t) = A_t x(t)`
    MemorylessMatrix { schedule: MatrixSchedule },
    /// `(Hx)(t) = A_t x(t) + B_t x(t-1)`
    OneStepLinear {
        current: MatrixSchedule,
        delayed: MatrixSchedule,
    },
    /// Componentwise dead-zone applied to the inner operator's output.
    DeadZoneComposite { inner: Box<LoopFunction> },
    /// `outer` applied to the output of `inner`.
    Composition {
        outer: Box<LoopFunction>,
        inner: Box<LoopFunction>,
    },
    /// The inner operator with its parameters frozen at `frozen_at`.
    TimeInvariant { inner: Box<LoopFunction>, frozen_at: i64 },
}

/// `v - 0.5` above 0.5, `v + 0.5` below -0.5, zero in between.
pub fn dead_zone(v: &DVector<f64>) -> DVector<f64> {
    v.map(dead_zone_scalar)
}

pub fn dead_zone_scalar(v: f64) -> f64 {
    if v >= 0.5 {
        v - 0.5
    } else if v <= -0.5 {
        v + 0.5
    } else {
        0.0
    }
}

/// Impulse-response coefficient lists, `kernel[k]` multiplies `u(t - k)`.
pub type Kernel = Vec<DMatrix<f64>>;

fn convolve_at(outer: &LoopFunction, inner: &LoopFunction, t: i64) -> Option<Kernel> {
    let ko = outer.linear_kernel(t)?;
    let len = ko.len() + inner.memory();
    let rows = outer.output_dim();
    let cols = inner.input_dim();
    let mut out = vec![DMatrix::zeros(rows, cols); len];
    for (k, o) in ko.iter().enumerate() {
        let ki = inner.linear_kernel(t - k as i64)?;
        for (j, i) in ki.iter().enumerate() {
            out[k + j] += o * i;
        }
    }
    Some(out)
}

fn pad(mut k: Kernel, len: usize) -> Kernel {
    if let Some(z) = k.first().map(|m| DMatrix::zeros(m.nrows(), m.ncols())) {
        k.resize(len, z);
    }
    k
}

impl LoopFunction {
    pub fn memoryless(schedule: MatrixSchedule) -> Self {
        LoopFunction::MemorylessMatrix { schedule }
    }

    pub fn constant_matrix(m: DMatrix<f64>) -> Self {
        Self::memoryless(MatrixSchedule::constant(m))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant_matrix(DMatrix::identity(n, n))
    }

    pub fn one_step(current: MatrixSchedule, delayed: MatrixSchedule) -> Result<Self> {
        let f = LoopFunction::OneStepLinear { current, delayed };
        f.validate()?;
        Ok(f)
    }

    pub fn dead_zone_over(inner: LoopFunction) -> Self {
        LoopFunction::DeadZoneComposite { inner: Box::new(inner) }
    }

    pub fn compose(outer: LoopFunction, inner: LoopFunction) -> Result<Self> {
        let f = LoopFunction::Composition {
            outer: Box::new(outer),
            inner: Box::new(inner),
        };
        f.validate()?;
        Ok(f)
    }

    /// The frozen-time extension `H_tau`, as an operator in its own right.
    pub fn frozen(&self, tau: i64) -> Self {
        LoopFunction::TimeInvariant {
            inner: Box::new(self.clone()),
            frozen_at: tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LoopFunction::MemorylessMatrix { .. } => Ok(()),
            LoopFunction::OneStepLinear { current, delayed } => {
                if current.rows() != delayed.rows() || current.cols() != delayed.cols() {
                    return Err(Error::DimensionMismatch {
                        expected: current.rows() * current.cols(),
                        found: delayed.rows() * delayed.cols(),
                    });
                }
                Ok(())
            }
            LoopFunction::DeadZoneComposite { inner } | LoopFunction::TimeInvariant { inner, .. } => {
                inner.validate()
            }
            LoopFunction::Composition { outer, inner } => {
                outer.validate()?;
                inner.validate()?;
                if outer.input_dim() != inner.output_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: outer.input_dim(),
                        found: inner.output_dim(),
                    });
                }
                Ok(())
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            LoopFunction::MemorylessMatrix { schedule } => schedule.cols(),
            LoopFunction::OneStepLinear { current, .. } => current.cols(),
            LoopFunction::DeadZoneComposite { inner } | LoopFunction::TimeInvariant { inner, .. } => {
                inner.input_dim()
            }
            LoopFunction::Composition { inner, .. } => inner.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            LoopFunction::MemorylessMatrix { schedule } => schedule.rows(),
            LoopFunction::OneStepLinear { current, .. } => current.rows(),
            LoopFunction::DeadZoneComposite { inner } | LoopFunction::TimeInvariant { inner, .. } => {
                inner.output_dim()
            }
            LoopFunction::Composition { outer, .. } => outer.output_dim(),
        }
    }

    /// Largest input lag the output depends on.
    pub fn memory(&self) -> usize {
        match self {
            LoopFunction::MemorylessMatrix { .. } => 0,
            LoopFunction::OneStepLinear { .. } => 1,
            LoopFunction::DeadZoneComposite { inner } | LoopFunction::TimeInvariant { inner, .. } => inner.memory(),
            LoopFunction::Composition { outer, inner } => outer.memory() + inner.memory(),
        }
    }

    pub fn is_linear(&self) -> bool {
        match self {
            LoopFunction::MemorylessMatrix { .. } | LoopFunction::OneStepLinear { .. } => true,
            LoopFunction::DeadZoneComposite { .. } => false,
            LoopFunction::Composition { outer, inner } => outer.is_linear() && inner.is_linear(),
            LoopFunction::TimeInvariant { inner, .. } => inner.is_linear(),
        }
    }

    /// True when the operator provably does not vary with time.
    pub fn is_time_invariant(&self) -> bool {
        match self {
            LoopFunction::MemorylessMatrix { schedule } => schedule.is_constant(),
            LoopFunction::OneStepLinear { current, delayed } => current.is_constant() && delayed.is_constant(),
            LoopFunction::DeadZoneComposite { inner } => inner.is_time_invariant(),
            LoopFunction::Composition { outer, inner } => outer.is_time_invariant() && inner.is_time_invariant(),
            LoopFunction::TimeInvariant { .. } => true,
        }
    }

    /// `(H u)(t)` for a history `u`. Dimensions are assumed to match.
    pub fn eval(&self, t: i64, u: &dyn History) -> DVector<f64> {
        match self {
            LoopFunction::MemorylessMatrix { schedule } => schedule.at(t) * u.at(t),
            LoopFunction::OneStepLinear { current, delayed } => {
                current.at(t) * u.at(t) + delayed.at(t) * u.at(t - 1)
            }
            LoopFunction::DeadZoneComposite { inner } => dead_zone(&inner.eval(t, u)),
            LoopFunction::Composition { outer, inner } => {
                let m = outer.memory() as i64;
                let ys: Vec<DVector<f64>> = (t - m..=t).map(|s| inner.eval(s, u)).collect();
                let w = Window {
                    start: t - m,
                    dim: inner.output_dim(),
                    values: &ys,
                };
                outer.eval(t, &w)
            }
            LoopFunction::TimeInvariant { inner, frozen_at } => inner.eval(
                *frozen_at,
                &Shifted {
                    inner: u,
                    by: frozen_at - t,
                },
            ),
        }
    }

    fn check_input(&self, u: &Signal) -> Result<()> {
        if u.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: u.dim(),
            });
        }
        Ok(())
    }

    /// `y = H u` on `[t0, t1]`.
    pub fn apply(&self, u: &Signal, t0: i64, t1: i64) -> Result<Signal> {
        self.check_input(u)?;
        if t1 < t0 {
            return Ok(Signal::zero(self.output_dim()));
        }
        let values = (t0..=t1).map(|t| self.eval(t, u)).collect();
        Signal::with_dim(t0, self.output_dim(), values)
    }

    /// `h_tau u = (H u)(tau)`.
    pub fn snapshot_apply(&self, tau: i64, u: &Signal) -> Result<DVector<f64>> {
        self.check_input(u)?;
        Ok(self.eval(tau, u))
    }

    /// `(H_tau u)(t) = h_tau T^{tau - t} u`.
    pub fn frozen_extension_apply(&self, tau: i64, u: &Signal, t: i64) -> Result<DVector<f64>> {
        self.check_input(u)?;
        Ok(self.eval(tau, &Shifted { inner: u, by: tau - t }))
    }

    /// `(h_{i-1} - h_i)` applied to `u` with present at `t`.
    pub fn nabla_snapshot_eval(&self, i: i64, u: &dyn History, t: i64) -> DVector<f64> {
        if let (Some(prev), Some(cur)) = (self.linear_kernel(i - 1), self.linear_kernel(i)) {
            let len = prev.len().max(cur.len());
            let (prev, cur) = (pad(prev, len), pad(cur, len));
            let mut out = DVector::zeros(self.output_dim());
            for k in 0..len {
                out += (&prev[k] - &cur[k]) * u.at(t - k as i64);
            }
            return out;
        }
        self.eval(i - 1, &Shifted { inner: u, by: i - 1 - t }) - self.eval(i, &Shifted { inner: u, by: i - t })
    }

    /// `(nabla H_tau u)(t) = (sum_{i=t+1}^{tau} nabla h_i) T^{tau - t} u`,
    /// summed in ascending `i`.
    pub fn nabla_extension_apply(&self, tau: i64, u: &Signal, t: i64) -> Result<DVector<f64>> {
        self.check_input(u)?;
        if t > tau {
            return Err(Error::Domain(format!("nabla extension needs t <= tau, got t = {t}, tau = {tau}")));
        }
        let mut acc = DVector::zeros(self.output_dim());
        for i in t + 1..=tau {
            acc += self.nabla_snapshot_eval(i, u, t);
        }
        Ok(acc)
    }

    /// Impulse response of the frozen snapshot at `t`, when linear.
    pub fn linear_kernel(&self, t: i64) -> Option<Kernel> {
        match self {
            LoopFunction::MemorylessMatrix { schedule } => Some(vec![schedule.at(t).clone()]),
            LoopFunction::OneStepLinear { current, delayed } => {
                Some(vec![current.at(t).clone(), delayed.at(t).clone()])
            }
            LoopFunction::DeadZoneComposite { .. } => None,
            LoopFunction::Composition { outer, inner } => convolve_at(outer, inner, t),
            LoopFunction::TimeInvariant { inner, frozen_at } => inner.linear_kernel(*frozen_at),
        }
    }

    /// A kernel `M` with `|(h_t u)|_i <= (sum_k M_k |u(t-k)|)_i`
    /// componentwise. Exact (signed) for linear kinds, entrywise-absolute
    /// for dead-zone composites. The flag reports exactness.
    pub fn majorant_kernel(&self, t: i64) -> Option<(Kernel, bool)> {
        if let Some(k) = self.linear_kernel(t) {
            return Some((k, true));
        }
        match self {
            LoopFunction::DeadZoneComposite { inner } => {
                let (k, _) = inner.majorant_kernel(t)?;
                Some((k.iter().map(linalg::abs_matrix).collect(), false))
            }
            LoopFunction::TimeInvariant { inner, frozen_at } => inner.majorant_kernel(*frozen_at),
            _ => None,
        }
    }

    /// Per-lag Lipschitz constants `a_k` with
    /// `|h_t u - h_t v| <= sum_k a_k |u(t-k) - v(t-k)|`.
    pub fn gain_profile(&self, t: i64, norm: VectorNorm) -> Vec<f64> {
        if let Some(k) = self.linear_kernel(t) {
            return k.iter().map(|m| norm.induced_upper(m)).collect();
        }
        match self {
            LoopFunction::DeadZoneComposite { inner } => inner.gain_profile(t, norm),
            LoopFunction::TimeInvariant { inner, frozen_at } => inner.gain_profile(*frozen_at, norm),
            LoopFunction::Composition { outer, inner } => {
                let ao = outer.gain_profile(t, norm);
                let mut out = vec![0.0; self.memory() + 1];
                for (k, a) in ao.iter().enumerate() {
                    for (j, b) in inner.gain_profile(t - k as i64, norm).iter().enumerate() {
                        out[k + j] += a * b;
                    }
                }
                out
            }
            _ => unreachable!("linear kinds handled above"),
        }
    }

    /// Per-lag constants `b_k` with `|(h_{t-1} - h_t) w| <= sum_k b_k |w(-k)|`.
    pub fn delta_profile(&self, t: i64, norm: VectorNorm) -> Vec<f64> {
        if let (Some(prev), Some(cur)) = (self.linear_kernel(t - 1), self.linear_kernel(t)) {
            let len = prev.len().max(cur.len());
            let (prev, cur) = (pad(prev, len), pad(cur, len));
            return prev.iter().zip(&cur).map(|(p, c)| norm.induced_upper(&(p - c))).collect();
        }
        match self {
            LoopFunction::DeadZoneComposite { inner } => inner.delta_profile(t, norm),
            LoopFunction::TimeInvariant { .. } => vec![0.0; self.memory() + 1],
            LoopFunction::Composition { outer, inner } => {
                let mut out = vec![0.0; self.memory() + 1];
                let ao = outer.gain_profile(t - 1, norm);
                let bo = outer.delta_profile(t, norm);
                for k in 0..=outer.memory() {
                    let tk = t - k as i64;
                    let bi = inner.delta_profile(tk, norm);
                    let ai = inner.gain_profile(tk, norm);
                    for j in 0..=inner.memory() {
                        out[k + j] += ao.get(k).copied().unwrap_or(0.0) * bi.get(j).copied().unwrap_or(0.0)
                            + bo.get(k).copied().unwrap_or(0.0) * ai.get(j).copied().unwrap_or(0.0);
                    }
                }
                out
            }
            _ => unreachable!("linear kinds handled above"),
        }
    }

    /// Kernel of `h_{t-1} - h_t`, when linear.
    pub fn delta_kernel(&self, t: i64) -> Option<Kernel> {
        let prev = self.linear_kernel(t - 1)?;
        let cur = self.linear_kernel(t)?;
        let len = prev.len().max(cur.len());
        let (prev, cur) = (pad(prev, len), pad(cur, len));
        Some(prev.iter().zip(&cur).map(|(p, c)| p - c).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    fn sig2(start: i64, rows: &[[f64; 2]]) -> Signal {
        Signal::from_rows(start, &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_is_identity() {
        let u = sig2(0, &[[1.0, 2.0], [-3.0, 0.5]]);
        let y = LoopFunction::identity(2).apply(&u, 0, 1).unwrap();
        assert_eq!(y, u);
    }

    #[test]
    fn dead_zone_examples() {
        assert_eq!(dead_zone_scalar(0.0), 0.0);
        assert!((dead_zone_scalar(0.7) - 0.2).abs() < 1e-15);
        assert_eq!(dead_zone_scalar(-1.0), -0.5);
        assert_eq!(dead_zone_scalar(0.5), 0.0);
        assert_eq!(dead_zone_scalar(-0.5), 0.0);

        let h = LoopFunction::dead_zone_over(LoopFunction::identity(2));
        let u = sig2(0, &[[0.7, -1.0]]);
        let y = h.apply(&u, 0, 0).unwrap();
        assert!((y.at(0)[0] - 0.2).abs() < 1e-15);
        assert_eq!(y.at(0)[1], -0.5);
    }

    #[test]
    fn pure_delay() {
        let h = LoopFunction::one_step(
            MatrixSchedule::constant(DMatrix::zeros(2, 2)),
            MatrixSchedule::constant(DMatrix::identity(2, 2)),
        )
        .unwrap();
        let u = sig2(0, &[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let y = h.apply(&u, 0, 3).unwrap();
        let delayed = u.shift(1);
        for t in 0..=3 {
            assert_eq!(y.at(t), delayed.at(t));
        }
    }

    #[test]
    fn snapshot_and_extension() {
        let a = MatrixSchedule::new(0, vec![m2(1.0, 0.0, 0.0, 1.0), m2(0.5, 0.1, 0.0, 0.2), m2(0.0, 1.0, 1.0, 0.0)]).unwrap();
        let b = MatrixSchedule::new(0, vec![m2(0.3, 0.0, 0.0, 0.3), m2(0.0, -0.2, 0.4, 0.0), m2(0.1, 0.1, 0.1, 0.1)]).unwrap();
        let h = LoopFunction::one_step(a.clone(), b.clone()).unwrap();
        let u = sig2(0, &[[1.0, -1.0], [2.0, 0.5], [-0.5, 3.0]]);
        for tau in 0..3 {
            let direct = a.at(tau) * u.at(tau) + b.at(tau) * u.at(tau - 1);
            assert_eq!(h.snapshot_apply(tau, &u).unwrap(), direct);
            assert_eq!(h.frozen_extension_apply(tau, &u, tau).unwrap(), direct);
            for t in 0..3 {
                let frozen = a.at(tau) * u.at(t) + b.at(tau) * u.at(t - 1);
                assert!((h.frozen_extension_apply(tau, &u, t).unwrap() - frozen).norm() < 1e-15);
            }
        }
        let m = LoopFunction::memoryless(a.clone());
        assert_eq!(m.frozen_extension_apply(2, &u, 0).unwrap(), a.at(2) * u.at(0));
    }

    #[test]
    fn time_invariant_wrapper() {
        let a = MatrixSchedule::new(0, vec![m2(1.0, 0.0, 0.0, 1.0), m2(0.5, 0.1, 0.0, 0.2)]).unwrap();
        let b = MatrixSchedule::new(0, vec![m2(0.3, 0.0, 0.0, 0.3), m2(0.0, -0.2, 0.4, 0.0)]).unwrap();
        let ti = LoopFunction::one_step(a, b).unwrap().frozen(1);
        let u = sig2(0, &[[1.0, -1.0], [2.0, 0.5], [-0.5, 3.0], [0.0, 1.0]]);
        let y = ti.apply(&u, 0, 3).unwrap();
        for tau in 0..4 {
            assert_eq!(ti.snapshot_apply(tau, &u).unwrap(), y.at(tau));
            for t in 0..=tau {
                assert_eq!(ti.frozen_extension_apply(tau, &u, t).unwrap(), y.at(t));
                assert_eq!(ti.nabla_extension_apply(tau, &u, t).unwrap(), DVector::zeros(2));
            }
        }
    }

    #[test]
    fn nabla_matches_direct_difference() {
        let a = MatrixSchedule::new(0, vec![m2(1.0, 0.0, 0.0, 1.0), m2(0.5, 0.1, 0.0, 0.2), m2(0.0, 1.0, 1.0, 0.0)]).unwrap();
        let b = MatrixSchedule::new(0, vec![m2(0.3, 0.0, 0.0, 0.3), m2(0.0, -0.2, 0.4, 0.0), m2(0.1, 0.1, 0.1, 0.1)]).unwrap();
        let lin = LoopFunction::one_step(a, b).unwrap();
        let dz = LoopFunction::dead_zone_over(lin.clone());
        let u = sig2(0, &[[1.0, -1.0], [2.0, 0.5], [-0.5, 3.0]]);
        for h in [&lin, &dz] {
            for tau in 0..3 {
                assert_eq!(h.nabla_extension_apply(tau, &u, tau).unwrap(), DVector::zeros(2));
                for t in 0..=tau {
                    let direct = h.snapshot_apply(t, &u).unwrap() - h.frozen_extension_apply(tau, &u, t).unwrap();
                    let lemma = h.nabla_extension_apply(tau, &u, t).unwrap();
                    assert!((direct - lemma).norm() < 1e-12);
                }
            }
        }
        assert!(lin.nabla_extension_apply(0, &u, 1).is_err());
    }

    #[test]
    fn composition_kernel_matches_eval() {
        let a = MatrixSchedule::new(0, vec![m2(1.0, 2.0, 0.0, 1.0), m2(0.5, 0.1, 0.0, 0.2)]).unwrap();
        let b = MatrixSchedule::new(0, vec![m2(0.3, 0.0, 0.0, 0.3), m2(0.0, -0.2, 0.4, 0.0)]).unwrap();
        let inner = LoopFunction::one_step(a.clone(), b.clone()).unwrap();
        let outer = LoopFunction::one_step(b, a).unwrap();
        let h = LoopFunction::compose(outer, inner).unwrap();
        assert_eq!(h.memory(), 2);
        let u = sig2(-1, &[[1.0, -1.0], [2.0, 0.5], [-0.5, 3.0], [0.25, 0.0]]);
        for t in -1..=2 {
            let k = h.linear_kernel(t).unwrap();
            let mut y = DVector::zeros(2);
            for (lag, m) in k.iter().enumerate() {
                y += m * u.at(t - lag as i64);
            }
            assert!((y - h.eval(t, &u)).norm() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_reported() {
        let u = Signal::from_scalars(0, &[1.0]).unwrap();
        assert!(matches!(
            LoopFunction::identity(2).apply(&u, 0, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let a = MatrixSchedule::new(3, vec![m2(1.0, 2.0, 0.0, 1.0), m2(0.5, 0.1, 0.0, 0.2)]).unwrap();
        let h = LoopFunction::dead_zone_over(LoopFunction::one_step(a.clone(), a).unwrap());
        let s = serde_json::to_string(&h).unwrap();
        assert!(s.contains("\"kind\":\"dead_zone_composite\""));
        let back: LoopFunction = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
    }
}
