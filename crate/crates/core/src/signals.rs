//! Finite discrete-time signals and the moving-window fading-memory
//! semi-norms built on them.
//!
//! A [`Signal`] stores values on `[start_time, start_time + len - 1]` and is
//! the zero vector everywhere else, so every norm over any window is a finite
//! computation. The `p = inf` family
//!
//! ```text
//! ||x||_{sigma inf,[t1,t2]} = max_{t1 <= tau <= t2} sigma^-(t2 - tau) |x(tau)|
//! ```
//!
//! is the one consumed by the certificates; finite `p` is provided for
//! completeness.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::VectorNorm;

/// Read access to a signal's value at an arbitrary time.
pub trait History {
    fn dim(&self) -> usize;
    fn at(&self, t: i64) -> DVector<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    start: i64,
    dim: usize,
    values: Vec<DVector<f64>>,
}

/// Exponent of a weighted norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub sigma: f64,
    pub p: Exponent,
    #[serde(default)]
    pub norm: VectorNorm,
}

impl WeightSpec {
    pub fn new(sigma: f64, p: Exponent) -> Result<Self> {
        if !(sigma >= 1.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma must be >= 1, got {sigma}")));
        }
        if let Exponent::Finite(p) = p {
            if !(p >= 1.0) || !p.is_finite() {
                return Err(Error::InvalidParameter(format!("p must be >= 1, got {p}")));
            }
        }
        Ok(Self {
            sigma,
            p,
            norm: VectorNorm::default(),
        })
    }

    /// The `l_{sigma inf}` weight.
    pub fn sup(sigma: f64) -> Result<Self> {
        Self::new(sigma, Exponent::Infinity)
    }

    pub fn with_norm(mut self, norm: VectorNorm) -> Self {
        self.norm = norm;
        self
    }
}

impl Signal {
    pub fn new(start: i64, values: Vec<DVector<f64>>) -> Result<Self> {
        let dim = values.first().map(|v| v.len()).ok_or_else(|| {
            Error::InvalidParameter("signal needs at least one value to infer its dimension".into())
        })?;
        Self::with_dim(start, dim, values)
    }

    pub fn with_dim(start: i64, dim: usize, values: Vec<DVector<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("signal dimension must be positive".into()));
        }
        for v in &values {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("signal values".into()));
            }
        }
        Ok(Self { start, dim, values })
    }

    pub fn from_scalars(start: i64, xs: &[f64]) -> Result<Self> {
        Self::new(start, xs.iter().map(|&x| DVector::from_element(1, x)).collect())
    }

    pub fn from_rows(start: i64, rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(start, rows.iter().map(|r| DVector::from_column_slice(r)).collect())
    }

    /// The identically zero signal of a given dimension (empty support).
    pub fn zero(dim: usize) -> Self {
        Self {
            start: 0,
            dim,
            values: Vec::new(),
        }
    }

    pub fn from_fn(start: i64, len: usize, dim: usize, mut f: impl FnMut(i64) -> DVector<f64>) -> Result<Self> {
        let values = (0..len as i64).map(|k| f(start + k)).collect();
        Self::with_dim(start, dim, values)
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    /// Last time of the stored support (`start - 1` when empty).
    pub fn end(&self) -> i64 {
        self.start + self.values.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn times(&self) -> std::ops::RangeInclusive<i64> {
        self.start..=self.end()
    }

    fn get(&self, t: i64) -> Option<&DVector<f64>> {
        if t < self.start {
            return None;
        }
        self.values.get((t - self.start) as usize)
    }

    /// `|x(t)|` under the given spatial norm, zero outside the support.
    pub fn magnitude(&self, t: i64, norm: VectorNorm) -> f64 {
        self.get(t).map_or(0.0, |v| norm.of(v))
    }

    pub(crate) fn push(&mut self, v: DVector<f64>) {
        debug_assert_eq!(v.len(), self.dim);
        self.values.push(v);
    }

    /// Backward shift: `(T^theta x)(t) = x(t - theta)`.
    pub fn shift(&self, theta: i64) -> Signal {
        Signal {
            start: self.start + theta,
            dim: self.dim,
            values: self.values.clone(),
        }
    }

    /// `x(t)` for `t <= tau`, zero after.
    pub fn truncate(&self, tau: i64) -> Signal {
        let keep = (tau - self.start + 1).clamp(0, self.values.len() as i64) as usize;
        Signal {
            start: self.start,
            dim: self.dim,
            values: self.values[..keep].to_vec(),
        }
    }

    /// Moving-window fading-memory semi-norm over `[t1, t2]`.
    pub fn weighted_norm(&self, w: &WeightSpec, t1: i64, t2: i64) -> Result<f64> {
        if t1 > t2 {
            return Err(Error::Domain(format!("empty window [{t1}, {t2}]")));
        }
        let lo = t1.max(self.start);
        let hi = t2.min(self.end());
        if lo > hi {
            return Ok(0.0);
        }
        let sigma = w.sigma;
        Ok(match w.p {
            Exponent::Infinity => (lo..=hi)
                .map(|tau| sigma.powi((tau - t2) as i32) * self.magnitude(tau, w.norm))
                .fold(0.0, f64::max),
            Exponent::Finite(p) => {
                let mut acc = 0.0;
                for tau in lo..=hi {
                    let m = self.magnitude(tau, w.norm);
                    if m > 0.0 {
                        acc += sigma.powf(-p * (t2 - tau) as f64) * m.powf(p);
                    }
                }
                acc.powf(1.0 / p)
            }
        })
    }

    /// `||x||_{w,t}`: the window extends back to the start of the support.
    pub fn weighted_norm_to(&self, w: &WeightSpec, t: i64) -> f64 {
        if t < self.start {
            return 0.0;
        }
        self.weighted_norm(w, self.start, t)
            .expect("window starting at the support start is non-empty")
    }

    /// `||x||_{sigma inf,t}` for every `t` of the support, via the exact
    /// recursion `n(t) = max(n(t-1)/sigma, |x(t)|)`.
    pub fn running_sup_norm(&self, sigma: f64, norm: VectorNorm) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0_f64;
        for v in &self.values {
            acc = (acc / sigma).max(norm.of(v));
            out.push(acc);
        }
        out
    }

    pub fn to_json_value(&self) -> SignalJson {
        SignalJson {
            start_time: self.start,
            dim: Some(self.dim),
            values: self.values.iter().map(|v| v.iter().copied().collect()).collect(),
        }
    }

    /// CSV with header `t,x_1,...,x_n`, one row per stored time step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 1..=self.dim {
            out.push_str(&format!(",x_{i}"));
        }
        out.push('\n');
        for (k, v) in self.values.iter().enumerate() {
            out.push_str(&(self.start + k as i64).to_string());
            for x in v.iter() {
                out.push(',');
                out.push_str(&crate::io::fmt_f64(*x));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
        let dim = header.split(',').count().saturating_sub(1);
        if dim == 0 {
            return Err(Error::Parse("CSV header needs a time column and at least one value column".into()));
        }
        let mut start = None;
        let mut values = Vec::new();
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(Error::Parse(format!("row {}: expected {} fields, got {}", row + 1, dim + 1, fields.len())));
            }
            let t: i64 = fields[0]
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad time '{}'", row + 1, fields[0])))?;
            let s = *start.get_or_insert(t);
            if t != s + values.len() as i64 {
                return Err(Error::Parse(format!("row {}: times must be consecutive", row + 1)));
            }
            let v = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| Error::Parse(format!("row {}: bad value '{f}'", row + 1))))
                .collect::<Result<Vec<f64>>>()?;
            values.push(DVector::from_vec(v));
        }
        Self::with_dim(start.unwrap_or(0), dim, values)
    }
}

impl History for Signal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn at(&self, t: i64) -> DVector<f64> {
        self.get(t).cloned().unwrap_or_else(|| DVector::zeros(self.dim))
    }
}

/// A history read through a backward shift, without copying.
pub struct Shifted<'a> {
    pub inner: &'a dyn History,
    pub by: i64,
}

impl History for Shifted<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn at(&self, t: i64) -> DVector<f64> {
        self.inner.at(t - self.by)
    }
}

/// Unvalidated contiguous history, used for intermediate values that may
/// grow without bound (e.g. a diverging closed loop).
pub struct Window<'a> {
    pub start: i64,
    pub dim: usize,
    pub values: &'a [DVector<f64>],
}

impl History for Window<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn at(&self, t: i64) -> DVector<f64> {
        if t < self.start {
            return DVector::zeros(self.dim);
        }
        self.values
            .get((t - self.start) as usize)
            .cloned()
            .unwrap_or_else(|| DVector::zeros(self.dim))
    }
}

/// JSON array form of a signal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalJson {
    pub start_time: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub values: Vec<Vec<f64>>,
}

impl TryFrom<SignalJson> for Signal {
    type Error = Error;

    fn try_from(j: SignalJson) -> Result<Self> {
        let dim = j
            .dim
            .or_else(|| j.values.first().map(Vec::len))
            .ok_or_else(|| Error::Parse("signal has neither values nor dim".into()))?;
        Signal::with_dim(
            j.start_time,
            dim,
            j.values.into_iter().map(DVector::from_vec).collect(),
        )
    }
}

impl Serialize for Signal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Signal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = SignalJson::deserialize(d)?;
        Signal::try_from(j).map_err(serde::de::Error::custom)
    }
}
