//! Closed-loop simulation of `x = F u + G T x` and scenario generators.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::CertificateInputs;
use crate::error::{Error, Result};
use crate::io::{extended_f64, fmt_f64};
use crate::linalg::VectorNorm;
use crate::operators::{
    classify_frozen, frozen_loop, induced_norm_frozen, LoopFunction, MatrixSchedule, NormOptions, Stability,
};
use crate::signals::{Shifted, Signal};
use crate::variation::{c_sigma_sigma0_trace, variation_trace};

pub const SCHEMA_VERSION: u32 = 1;

/// A run is cut off once `|x(t)|` exceeds this multiple of `max(1, ||u||_{inf,t})`.
pub const DIVERGENCE_RATIO: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    /// `amplitude * exp(t / growth) * cos(t / period)` in every component.
    /// Without `growth` the exponential factor is dropped.
    ExpCos {
        amplitude: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        growth: Option<f64>,
        period: f64,
        dim: usize,
    },
    /// Constant `amplitude` in every component from the horizon start on.
    Step { amplitude: f64, dim: usize },
    Explicit { signal: Signal },
}

impl InputSpec {
    pub fn dim(&self) -> usize {
        match self {
            InputSpec::ExpCos { dim, .. } | InputSpec::Step { dim, .. } => *dim,
            InputSpec::Explicit { signal } => signal.dim(),
        }
    }

    pub fn generate(&self, start: i64, end: i64) -> Result<Signal> {
        let len = (end - start + 1).max(0) as usize;
        match self {
            InputSpec::ExpCos {
                amplitude,
                growth,
                period,
                dim,
            } => Signal::from_fn(start, len, *dim, |t| {
                let t = t as f64;
                let g = growth.map_or(1.0, |tau| (t / tau).exp());
                DVector::from_element(*dim, amplitude * g * (t / period).cos())
            }),
            InputSpec::Step { amplitude, dim } => {
                Signal::from_fn(start, len, *dim, |_| DVector::from_element(*dim, *amplitude))
            }
            InputSpec::Explicit { signal } => {
                Signal::from_fn(start, len, signal.dim(), |t| crate::signals::History::at(signal, t))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizon {
    pub start: i64,
    pub end: i64,
}

impl Horizon {
    pub fn len(&self) -> usize {
        (self.end - self.start + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn times(&self) -> std::ops::RangeInclusive<i64> {
        self.start..=self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub f: LoopFunction,
    pub g: LoopFunction,
    pub input: InputSpec,
    pub horizon: Horizon,
    pub sigma: f64,
    pub sigma0: f64,
    pub rho: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_sequence: Option<Vec<i64>>,
    #[serde(default)]
    pub norm: VectorNorm,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.f.validate()?;
        self.g.validate()?;
        if self.g.input_dim() != self.g.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.g.output_dim(),
                found: self.g.input_dim(),
            });
        }
        if self.f.output_dim() != self.g.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.g.output_dim(),
                found: self.f.output_dim(),
            });
        }
        if self.input.dim() != self.f.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.f.input_dim(),
                found: self.input.dim(),
            });
        }
        if self.horizon.is_empty() {
            return Err(Error::InvalidParameter("empty horizon".into()));
        }
        if !(1.0 <= self.sigma && self.sigma < self.sigma0 && self.sigma0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= sigma < sigma0, got sigma = {}, sigma0 = {}",
                self.sigma, self.sigma0
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        Ok(())
    }

    /// Norm options for this scenario; lower-bound searches draw from its seed.
    pub fn options(&self) -> NormOptions {
        NormOptions {
            seed: self.seed,
            ..NormOptions::with_norm(self.norm)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub x: Signal,
    pub u: Signal,
    pub norm: VectorNorm,
    /// `||x||_{inf,t}` for every simulated `t`.
    pub state_sup: Vec<f64>,
    /// `||u||_{inf,t}` over the whole horizon.
    pub input_sup: Vec<f64>,
    /// `||x||_{inf,t} / ||u||_{inf,t}`, `None` where the input is still zero.
    pub gain_trace: Vec<Option<f64>>,
    pub divergent: bool,
    pub diverged_at: Option<i64>,
}

impl SimResult {
    pub fn start(&self) -> i64 {
        self.u.start()
    }

    /// Last simulated time.
    pub fn last(&self) -> i64 {
        self.start() + self.state_sup.len() as i64 - 1
    }

    pub fn gain_at(&self, t: i64) -> Option<f64> {
        if t < self.start() {
            return None;
        }
        self.gain_trace.get((t - self.start()) as usize).copied().flatten()
    }

    pub fn max_gain(&self) -> f64 {
        self.gain_trace.iter().flatten().copied().fold(0.0, f64::max)
    }

    /// `t,gain,state_sup,input_sup`; an undefined gain is left empty.
    pub fn gain_csv(&self) -> String {
        let mut out = String::from("t,gain,state_sup,input_sup\n");
        for (k, g) in self.gain_trace.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.start() + k as i64,
                g.map(fmt_f64).unwrap_or_default(),
                fmt_f64(self.state_sup[k]),
                fmt_f64(self.input_sup[k])
            ));
        }
        out
    }

    pub fn summary(&self, name: &str) -> SimSummary {
        SimSummary {
            schema_version: SCHEMA_VERSION,
            name: name.to_string(),
            start: self.start(),
            last: self.last(),
            steps: self.state_sup.len(),
            divergent: self.divergent,
            diverged_at: self.diverged_at,
            max_gain: self.max_gain(),
            final_gain: self.gain_trace.last().copied().flatten(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub schema_version: u32,
    pub name: String,
    pub start: i64,
    pub last: i64,
    pub steps: usize,
    pub divergent: bool,
    pub diverged_at: Option<i64>,
    #[serde(with = "extended_f64")]
    pub max_gain: f64,
    pub final_gain: Option<f64>,
}

/// Forward simulation from zero initial conditions. The delay in the loop
/// makes `x(t)` a function of `u` and `x(tau)`, `tau < t`.
pub fn simulate(s: &Scenario) -> Result<SimResult> {
    s.validate()?;
    let h = s.horizon;
    let u = s.input.generate(h.start, h.end)?;
    let fu = s.f.apply(&u, h.start, h.end)?;
    let dim = s.g.output_dim();
    let norm = s.norm;

    let mut x = Signal::with_dim(h.start, dim, Vec::with_capacity(h.len()))?;
    let mut state_sup = Vec::with_capacity(h.len());
    let mut input_sup = Vec::with_capacity(h.len());
    let mut gain_trace = Vec::with_capacity(h.len());
    let (mut xs, mut us) = (0.0_f64, 0.0_f64);
    let mut diverged_at = None;

    for t in h.times() {
        us = us.max(u.magnitude(t, norm));
        let gx = s.g.eval(t, &Shifted { inner: &x, by: 1 });
        let v = crate::signals::History::at(&fu, t) + gx;
        let m = norm.of(&v);
        if !m.is_finite() || m > DIVERGENCE_RATIO * us.max(1.0) {
            diverged_at = Some(t);
            break;
        }
        xs = xs.max(m);
        x.push(v);
        state_sup.push(xs);
        input_sup.push(us);
        gain_trace.push((us > 0.0).then(|| xs / us));
    }
    let full_input_sup = u.running_sup_norm(1.0, norm);
    debug_assert!(full_input_sup.iter().zip(&input_sup).all(|(a, b)| a == b));

    Ok(SimResult {
        x,
        u,
        norm,
        state_sup,
        input_sup,
        gain_trace,
        divergent: diverged_at.is_some(),
        diverged_at,
    })
}

/// Times at which a gain bound is compared with the measured gain.
#[derive(Debug, Clone, PartialEq)]
pub enum GainCheckTimes {
    AllTimes,
    Sequence(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainVerification {
    pub ok: bool,
    #[serde(with = "extended_f64")]
    pub bound: f64,
    pub worst_ratio: f64,
    pub worst_t: Option<i64>,
    /// Checked times where the input was still zero.
    pub skipped: Vec<i64>,
}

pub fn verify_gain_bound(result: &SimResult, bound: f64, at: &GainCheckTimes) -> GainVerification {
    let times: Vec<i64> = match at {
        GainCheckTimes::AllTimes => (result.start()..=result.last()).collect(),
        GainCheckTimes::Sequence(ts) => ts
            .iter()
            .copied()
            .filter(|t| *t >= result.start() && *t <= result.last())
            .collect(),
    };
    let mut worst_ratio = 0.0_f64;
    let mut worst_t = None;
    let mut skipped = Vec::new();
    for t in times {
        match result.gain_at(t) {
            Some(g) => {
                if g > worst_ratio || worst_t.is_none() {
                    worst_ratio = worst_ratio.max(g);
                    worst_t = Some(t);
                }
            }
            None => skipped.push(t),
        }
    }
    // a diverged run has unbounded gain
    if result.divergent {
        worst_ratio = f64::INFINITY;
        worst_t = result.diverged_at;
    }
    GainVerification {
        ok: bound == f64::INFINITY || worst_ratio <= bound,
        bound,
        worst_ratio,
        worst_t,
        skipped,
    }
}

/// Frozen-loop norms, snapshot norms and the variation coefficients of
/// `G` at every horizon time, plus the global `||F||_inf`.
pub fn collect_certificate_inputs(s: &Scenario) -> Result<CertificateInputs> {
    s.validate()?;
    let opts = s.options();
    let h = s.horizon;
    struct PerTime {
        s: f64,
        s_sigma: f64,
        l: f64,
        g: f64,
        f: f64,
        stabilizing: bool,
    }
    let per: Vec<PerTime> = h
        .times()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|t| {
            let fl = frozen_loop(&s.g, t, s.sigma, s.sigma0, &opts)?;
            let g = induced_norm_frozen(&s.g, t, s.sigma, &opts)?.upper;
            let f = induced_norm_frozen(&s.f, t, 1.0, &opts)?.upper;
            Ok(PerTime {
                s: fl.s_norm.upper,
                s_sigma: fl.s_norm_sigma.upper,
                l: fl.l_norm.upper,
                g,
                f,
                stabilizing: fl.stability == Stability::Stabilizing,
            })
        })
        .collect::<Result<_>>()?;
    let trace = variation_trace(&s.g, h.start, h.end, s.sigma, &opts)?;
    let c_coeff = c_sigma_sigma0_trace(&trace, s.sigma0)?;
    let inputs = CertificateInputs {
        sigma: s.sigma,
        sigma0: s.sigma0,
        rho: s.rho,
        f_norm: per.iter().map(|p| p.f).fold(0.0, f64::max),
        start_time: h.start,
        time_sequence: s.time_sequence.clone().unwrap_or_default(),
        s_norm: per.iter().map(|p| p.s).collect(),
        s_norm_sigma: per.iter().map(|p| p.s_sigma).collect(),
        l_norm: per.iter().map(|p| p.l).collect(),
        g_norm: per.iter().map(|p| p.g).collect(),
        c_coeff,
        stabilizing: per.iter().map(|p| p.stabilizing).collect(),
        variation: trace.values,
    };
    inputs.validate()?;
    Ok(inputs)
}

fn rotation(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// `R diag(a, b) R'`: symmetric with eigenvalues `a`, `b`.
fn sym2(theta: f64, a: f64, b: f64) -> DMatrix<f64> {
    let r = rotation(theta);
    &r * DMatrix::from_diagonal(&DVector::from_vec(vec![a, b])) * r.transpose()
}

fn noise2(rng: &mut ChaCha8Rng, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |_, _| rng.random_range(-scale..scale))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example1Params {
    pub horizon: usize,
    /// `true` marks a destabilizing time.
    pub indicator: Vec<bool>,
}

impl Example1Params {
    /// Episodes of `len` steps every `every` steps, the first at `first`.
    pub fn periodic(horizon: usize, first: usize, every: usize, len: usize) -> Self {
        let indicator = (0..horizon)
            .map(|t| t >= first && every > 0 && (t - first) % every < len)
            .collect();
        Self { horizon, indicator }
    }

    pub fn without_episodes(horizon: usize) -> Self {
        Self {
            horizon,
            indicator: vec![false; horizon],
        }
    }

    pub fn episode_count(&self) -> usize {
        self.indicator
            .iter()
            .enumerate()
            .filter(|(k, on)| **on && (*k == 0 || !self.indicator[k - 1]))
            .count()
    }
}

impl Default for Example1Params {
    fn default() -> Self {
        Self::periodic(1000, 40, 60, 3)
    }
}

/// Dead zone over `A_t x(t-1) + B_t x(t-2)`: small slowly drifting
/// matrices, with `A_t` pushed past spectral radius 1 on the indicated
/// episodes. Every time is classified to match the indicator.
pub fn build_example1(seed: u64, params: &Example1Params) -> Result<Scenario> {
    const SIGMA0: f64 = 1.4;
    if params.indicator.len() != params.horizon || params.horizon == 0 {
        return Err(Error::InvalidParameter("indicator must cover a nonempty horizon".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a_mats = Vec::with_capacity(params.horizon);
    let mut b_mats = Vec::with_capacity(params.horizon);
    let mut base_a = sym2(rng.random_range(0.0..3.2), 0.2, -0.1);
    let mut base_b = sym2(rng.random_range(0.0..3.2), 0.08, -0.05);
    for (t, &on) in params.indicator.iter().enumerate() {
        if t == 0 || on != params.indicator[t - 1] {
            if on {
                let big = rng.random_range(1.1..1.3);
                let small = rng.random_range(-0.2..0.2);
                base_a = sym2(rng.random_range(0.0..3.2), big, small);
            } else {
                let a = rng.random_range(-0.22..0.22);
                let b = rng.random_range(-0.22..0.22);
                base_a = sym2(rng.random_range(0.0..3.2), a, b);
                let c = rng.random_range(-0.1..0.1);
                let d = rng.random_range(-0.1..0.1);
                base_b = sym2(rng.random_range(0.0..3.2), c, d);
            }
        }
        loop {
            let a = &base_a + noise2(&mut rng, 0.01);
            let b = &base_b + noise2(&mut rng, 0.005);
            let g = LoopFunction::dead_zone_over(LoopFunction::one_step(
                MatrixSchedule::constant(a.clone()),
                MatrixSchedule::constant(b.clone()),
            )?);
            let destab = classify_frozen(&g, 0, SIGMA0)? == Stability::Destabilizing;
            if destab == on {
                a_mats.push(a);
                b_mats.push(b);
                break;
            }
        }
    }
    let g = LoopFunction::dead_zone_over(LoopFunction::one_step(
        MatrixSchedule::new(0, a_mats)?,
        MatrixSchedule::new(0, b_mats)?,
    )?);
    Ok(Scenario {
        schema_version: SCHEMA_VERSION,
        name: "example1".into(),
        f: LoopFunction::identity(2),
        g,
        input: InputSpec::ExpCos {
            amplitude: 2.0,
            growth: Some(20.0),
            period: 2.0,
            dim: 2,
        },
        horizon: Horizon {
            start: 0,
            end: params.horizon as i64 - 1,
        },
        sigma: 1.2,
        sigma0: SIGMA0,
        rho: 0.94,
        seed,
        time_sequence: None,
        norm: VectorNorm::Euclidean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example2Params {
    pub horizon: usize,
    /// Length of each abruptly varying stretch.
    pub busy: usize,
    /// Steps of each quiet approach, ramp up, hold and ramp down.
    pub quiet: usize,
    pub ramp: usize,
    pub hold: usize,
    /// Largest eigenvalue reached during a hold.
    pub peak: f64,
}

impl Default for Example2Params {
    fn default() -> Self {
        Self {
            horizon: 1000,
            busy: 60,
            quiet: 5,
            ramp: 5,
            hold: 5,
            peak: 0.5,
        }
    }
}

/// Memoryless `H_t`, 2x2 symmetric. Busy stretches redraw the matrix every
/// step (eigenvalues within 0.3); between them the matrix settles, ramps to
/// an eigenvalue near `peak`, holds and ramps back.
pub fn build_example2(seed: u64) -> Result<Scenario> {
    build_example2_with(seed, &Example2Params::default())
}

pub fn build_example2_with(seed: u64, p: &Example2Params) -> Result<Scenario> {
    if p.horizon == 0 || !(p.peak.abs() < 1.0 / 1.44) {
        return Err(Error::InvalidParameter("need a nonempty horizon and |peak| < 1/sigma0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mats: Vec<DMatrix<f64>> = Vec::with_capacity(p.horizon);
    let draw = |rng: &mut ChaCha8Rng| {
        (
            rng.random_range(0.0..std::f64::consts::PI),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        )
    };
    let mut state = draw(&mut rng);
    while mats.len() < p.horizon {
        for _ in 0..p.busy {
            state = draw(&mut rng);
            mats.push(sym2(state.0, state.1, state.2));
        }
        let (theta, a, b) = state;
        let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-1e-3..1e-3);
        for _ in 0..p.quiet {
            mats.push(sym2(theta, a + jitter(&mut rng), b + jitter(&mut rng)));
        }
        let lerp = |k: usize, from: f64, to: f64| from + (to - from) * k as f64 / p.ramp as f64;
        for k in 1..=p.ramp {
            mats.push(sym2(theta, lerp(k, a, p.peak), b + jitter(&mut rng)));
        }
        for _ in 0..p.hold {
            mats.push(sym2(theta, p.peak + jitter(&mut rng), b + jitter(&mut rng)));
        }
        for k in 1..=p.ramp {
            mats.push(sym2(theta, lerp(k, p.peak, a), b + jitter(&mut rng)));
        }
    }
    mats.truncate(p.horizon);
    Ok(Scenario {
        schema_version: SCHEMA_VERSION,
        name: "example2".into(),
        f: LoopFunction::identity(2),
        g: LoopFunction::memoryless(MatrixSchedule::new(0, mats)?),
        input: InputSpec::ExpCos {
            amplitude: 1.0,
            growth: None,
            period: 2.0,
            dim: 2,
        },
        horizon: Horizon {
            start: 0,
            end: p.horizon as i64 - 1,
        },
        sigma: 1.2,
        sigma0: 1.44,
        rho: 0.9,
        seed,
        time_sequence: None,
        norm: VectorNorm::Euclidean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomParams {
    pub dim: usize,
    pub horizon: usize,
    /// Largest eigenvalue magnitude of the loop matrices.
    pub radius: f64,
    /// Largest entry of the per-step perturbation.
    pub step: f64,
    /// Use `A_t x(t-1) + B_t x(t-2)` instead of a memoryless loop.
    pub one_step: bool,
}

impl Default for RandomParams {
    fn default() -> Self {
        Self {
            dim: 2,
            horizon: 150,
            radius: 0.6,
            step: 0.05,
            one_step: false,
        }
    }
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = m.qr().q();
    let d = DVector::from_fn(n, |_, _| rng.random_range(-radius..radius));
    &q * DMatrix::from_diagonal(&d) * q.transpose()
}

/// Random linear time-varying loop with a random constant `F` and a random
/// bounded input.
pub fn build_random_linear(seed: u64, p: &RandomParams) -> Result<Scenario> {
    if p.dim == 0 || p.horizon == 0 {
        return Err(Error::InvalidParameter("dimension and horizon must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p.dim;
    let walk = |rng: &mut ChaCha8Rng, radius: f64| {
        let mut base = random_symmetric(rng, n, radius);
        (0..p.horizon)
            .map(|_| {
                if rng.random_bool(0.05) {
                    base = random_symmetric(rng, n, radius);
                }
                let m = &base + DMatrix::from_fn(n, n, |_, _| rng.random_range(-p.step..=p.step));
                let scale = crate::linalg::spectral_norm(&m).max(1e-300);
                if scale > radius {
                    m * (radius / scale)
                } else {
                    m
                }
            })
            .collect::<Vec<_>>()
    };
    let g = if p.one_step {
        let a = walk(&mut rng, p.radius * 0.7);
        let b = walk(&mut rng, p.radius * 0.3);
        LoopFunction::one_step(MatrixSchedule::new(0, a)?, MatrixSchedule::new(0, b)?)?
    } else {
        LoopFunction::memoryless(MatrixSchedule::new(0, walk(&mut rng, p.radius))?)
    };
    let f = LoopFunction::constant_matrix(DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)));
    let values = (0..p.horizon)
        .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    Ok(Scenario {
        schema_version: SCHEMA_VERSION,
        name: format!("random-{seed}"),
        f,
        g,
        input: InputSpec::Explicit {
            signal: Signal::with_dim(0, n, values)?,
        },
        horizon: Horizon {
            start: 0,
            end: p.horizon as i64 - 1,
        },
        sigma: 1.2,
        sigma0: 1.44,
        rho: 0.9,
        seed,
        time_sequence: None,
        norm: VectorNorm::Euclidean,
    })
}
