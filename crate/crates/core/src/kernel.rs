//! Time stepping for the coupled system, the frozen equation, the Khasminskii
//! auxiliary process and the ε-rescaled block process.
//!
//! The coupled system is integrated with a multirate Euler scheme: within a
//! slow step of size `h_slow` the slow state is held fixed while the fast
//! component takes `h_slow / h_fast` substeps of size `h_fast` (real time) with
//! drift `f/ε` and diffusion `g/√ε`. The slow drift for the step is the mean of
//! `b` over the substeps. Both components use tamed Euler–Maruyama by default.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoefficientSystem, Coefficients, Dims, FrozenSystem};
use crate::noise::{integer_ratio, NoiseBundle};

/// States with a component beyond this magnitude count as exploded.
pub const EXPLOSION_BOUND: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Explicit,
    Tamed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepScheme {
    pub kind: SchemeKind,
    pub h: f64,
}

impl StepScheme {
    pub fn tamed(h: f64) -> Self {
        StepScheme {
            kind: SchemeKind::Tamed,
            h,
        }
    }

    pub fn explicit(h: f64) -> Self {
        StepScheme {
            kind: SchemeKind::Explicit,
            h,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "step size must be positive, got {}",
                self.h
            )));
        }
        Ok(())
    }
}

/// Tamed Euler step `y + h·d/(1 + h|d|) + diff`.
pub fn step_tamed(y: &[f64], drift: &[f64], diff: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidParams(format!(
            "step size must be positive, got {h}"
        )));
    }
    if y.len() != drift.len() || y.len() != diff.len() {
        return Err(Error::DimensionMismatch {
            what: "step_tamed",
            expected: y.len(),
            got: drift.len().min(diff.len()),
        });
    }
    let mut out = y.to_vec();
    if advance(SchemeKind::Tamed, &mut out, drift, diff, h) {
        Ok(out)
    } else {
        Err(Error::NonFiniteState)
    }
}

/// The drift part of a tamed step, `h·d/(1 + h|d|)`.
pub fn tamed_increment(drift: &[f64], h: f64) -> Vec<f64> {
    let factor = h / (1.0 + h * norm(drift));
    drift.iter().map(|d| factor * d).collect()
}

#[inline]
fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// One Euler step in place; returns false if the new state is not usable.
#[inline]
pub(crate) fn advance(
    kind: SchemeKind,
    y: &mut [f64],
    drift: &[f64],
    diff: &[f64],
    h: f64,
) -> bool {
    let factor = match kind {
        SchemeKind::Explicit => h,
        SchemeKind::Tamed => {
            if y.len() == 1 {
                h / (1.0 + h * drift[0].abs())
            } else {
                h / (1.0 + h * norm(drift))
            }
        }
    };
    let mut ok = true;
    for ((yi, di), si) in y.iter_mut().zip(drift).zip(diff) {
        *yi += factor * di + si;
        ok &= yi.is_finite() && yi.abs() < EXPLOSION_BOUND;
    }
    ok
}

/// `out = scale · A·v` with `A` row-major `rows × cols`.
#[inline]
pub(crate) fn matvec(a: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    let cols = v.len();
    if cols == 1 {
        for (o, ai) in out.iter_mut().zip(a) {
            *o = scale * ai * v[0];
        }
        return;
    }
    for (r, o) in out.iter_mut().enumerate() {
        let row = &a[r * cols..(r + 1) * cols];
        *o = scale * row.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    }
}

/// Initial condition `(x0, y0)` of the coupled system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
}

impl InitialState {
    pub fn new(x0: Vec<f64>, y0: Vec<f64>) -> Self {
        InitialState { x0, y0 }
    }

    pub(crate) fn check(&self, dims: Dims) -> Result<()> {
        if self.x0.len() != dims.n {
            return Err(Error::DimensionMismatch {
                what: "x0",
                expected: dims.n,
                got: self.x0.len(),
            });
        }
        if self.y0.len() != dims.m {
            return Err(Error::DimensionMismatch {
                what: "y0",
                expected: dims.m,
                got: self.y0.len(),
            });
        }
        if self.x0.iter().chain(&self.y0).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("initial state must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplosionInfo {
    pub step: usize,
    pub t: f64,
}

impl ExplosionInfo {
    pub fn into_error(self) -> Error {
        Error::Explosion {
            step: self.step,
            t: self.t,
        }
    }
}

/// Slow and fast paths of one coupled run on the slow grid.
///
/// `x`, `y`, `w1` are flattened (`n`, `m`, `d1` values per stored time). `y` is
/// stored every `y_every` slow steps. After an explosion the path is cut at
/// the last finite state.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPair {
    pub dims: Dims,
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_every: usize,
    pub w1: Vec<f64>,
    pub explosion: Option<ExplosionInfo>,
}

impl PathPair {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn exploded(&self) -> bool {
        self.explosion.is_some()
    }

    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x[i * self.dims.n..(i + 1) * self.dims.n]
    }

    pub fn w1_at(&self, i: usize) -> &[f64] {
        &self.w1[i * self.dims.d1..(i + 1) * self.dims.d1]
    }

    /// Fast state at stored index `j` (slow-grid index `j * y_every`).
    pub fn y_at(&self, j: usize) -> &[f64] {
        &self.y[j * self.dims.m..(j + 1) * self.dims.m]
    }

    pub fn y_len(&self) -> usize {
        self.y.len() / self.dims.m
    }
}

/// A single fast path on its own clock.
#[derive(Debug, Clone, PartialEq)]
pub struct FastPath {
    pub m: usize,
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    pub explosion: Option<ExplosionInfo>,
}

impl FastPath {
    pub fn y_at(&self, i: usize) -> &[f64] {
        &self.y[i * self.m..(i + 1) * self.m]
    }
}

/// Khasminskii auxiliary paths `(X̂, Ŷ)` on the slow grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxPaths {
    pub dims: Dims,
    pub times: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub explosion: Option<ExplosionInfo>,
}

impl AuxPaths {
    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x_hat[i * self.dims.n..(i + 1) * self.dims.n]
    }

    pub fn y_at(&self, i: usize) -> &[f64] {
        &self.y_hat[i * self.dims.m..(i + 1) * self.dims.m]
    }
}

pub(crate) fn steps_in(horizon: f64, h: f64, what: &str) -> Result<usize> {
    integer_ratio(horizon, h)
        .map(|k| k as usize)
        .ok_or_else(|| {
            Error::GridMismatch(format!("{what}: {horizon} is not a multiple of step {h}"))
        })
}

fn check_eps(system: &CoefficientSystem, eps: f64) -> Result<()> {
    let eps0 = system.epsilon0();
    if !(eps > 0.0 && eps < eps0) {
        return Err(Error::EpsilonOutOfRange { eps, eps0 });
    }
    Ok(())
}

/// Scratch buffers for the fast integrator.
struct FastBuffers {
    f: Vec<f64>,
    g: Vec<f64>,
    diff: Vec<f64>,
    dw: Vec<f64>,
    block: Vec<f64>,
}

impl FastBuffers {
    fn new(dims: Dims) -> Self {
        FastBuffers {
            f: vec![0.0; dims.m],
            g: vec![0.0; dims.m * dims.d2],
            diff: vec![0.0; dims.m],
            dw: vec![0.0; dims.d2],
            block: Vec::new(),
        }
    }
}

/// Fast-clock settings shared by the coupled, auxiliary and block runs.
struct FastClock<'a> {
    coeffs: &'a dyn Coefficients,
    dims: Dims,
    kind: SchemeKind,
    h: f64,
    inv_eps: f64,
    inv_sqrt_eps: f64,
    noise: &'a NoiseBundle,
    w2_stride: u64,
}

impl<'a> FastClock<'a> {
    fn new(
        system: &'a CoefficientSystem,
        eps: f64,
        fast: StepScheme,
        noise: &'a NoiseBundle,
    ) -> Result<Self> {
        let w2_stride = noise.w2_stride(fast.h).ok_or_else(|| {
            Error::GridMismatch(format!(
                "fast step {} is not a multiple of the W² base step {}",
                fast.h,
                noise.dt_w2()
            ))
        })?;
        if noise.d2() != system.dims().d2 || noise.d1() != system.dims().d1 {
            return Err(Error::DimensionMismatch {
                what: "noise",
                expected: system.dims().d2,
                got: noise.d2(),
            });
        }
        Ok(FastClock {
            coeffs: system.coefficients(),
            dims: system.dims(),
            kind: fast.kind,
            h: fast.h,
            inv_eps: 1.0 / eps,
            inv_sqrt_eps: 1.0 / eps.sqrt(),
            noise,
            w2_stride,
        })
    }

    /// Run `count` fast steps starting at global fast-step index `first`,
    /// with coefficients evaluated at `(time(k), x)`. `visit` sees the state
    /// before every step. Returns the offset of the failing step on explosion.
    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        time: impl Fn(usize) -> f64,
        x: &[f64],
        y: &mut [f64],
        first: u64,
        count: usize,
        bufs: &mut FastBuffers,
        mut visit: impl FnMut(f64, &[f64]),
    ) -> std::result::Result<(), usize> {
        let d2 = self.dims.d2;
        if self.w2_stride == 1 {
            bufs.block.resize(count * d2, 0.0);
            self.noise.w2_fine_block(first, &mut bufs.block);
        }
        for k in 0..count {
            let t = time(k);
            visit(t, y);
            self.coeffs.fast_drift(t, x, y, &mut bufs.f);
            self.coeffs.fast_diffusion(t, x, y, &mut bufs.g);
            if self.w2_stride == 1 {
                bufs.dw.copy_from_slice(&bufs.block[k * d2..(k + 1) * d2]);
            } else {
                self.noise
                    .w2_increment(first + k as u64, self.w2_stride, &mut bufs.dw);
            }
            matvec(&bufs.g, &bufs.dw, self.inv_sqrt_eps, &mut bufs.diff);
            bufs.f.iter_mut().for_each(|v| *v *= self.inv_eps);
            if !advance(self.kind, y, &bufs.f, &bufs.diff, self.h) {
                return Err(k);
            }
        }
        Ok(())
    }
}

/// Simulate the coupled slow-fast system on `[0, horizon]`.
///
/// `fast.h` is the real-time fast step and must divide `slow.h`. A fast step
/// larger than `eps · slow.h` is allowed but logged.
#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled(
    system: &CoefficientSystem,
    eps: f64,
    horizon: f64,
    init: &InitialState,
    slow: StepScheme,
    fast: StepScheme,
    noise: &NoiseBundle,
) -> Result<PathPair> {
    simulate_coupled_thinned(system, eps, horizon, init, slow, fast, noise, 1)
}

/// [`simulate_coupled`] storing `Y` only every `y_every` slow steps.
#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled_thinned(
    system: &CoefficientSystem,
    eps: f64,
    horizon: f64,
    init: &InitialState,
    slow: StepScheme,
    fast: StepScheme,
    noise: &NoiseBundle,
    y_every: usize,
) -> Result<PathPair> {
    check_eps(system, eps)?;
    slow.check()?;
    fast.check()?;
    let dims = system.dims();
    init.check(dims)?;
    if y_every == 0 {
        return Err(Error::InvalidParams("y_every must be at least 1".into()));
    }
    let n_slow = steps_in(horizon, slow.h, "horizon")?;
    let substeps = steps_in(slow.h, fast.h, "slow step")?;
    if fast.h > eps * slow.h * (1.0 + 1e-12) {
        log::warn!(
            "fast step {} exceeds eps * h_slow = {}; the fast clock is under-resolved",
            fast.h,
            eps * slow.h
        );
    }
    let w1_stride = noise.w1_stride(slow.h).ok_or_else(|| {
        Error::GridMismatch(format!(
            "slow step {} is not a multiple of the W¹ base step {}",
            slow.h,
            noise.dt_w1()
        ))
    })?;
    let clock = FastClock::new(system, eps, fast, noise)?;
    let c = system.coefficients();

    let mut path = PathPair {
        dims,
        times: Vec::with_capacity(n_slow + 1),
        x: Vec::with_capacity((n_slow + 1) * dims.n),
        y: Vec::with_capacity((n_slow / y_every + 1) * dims.m),
        y_every,
        w1: Vec::with_capacity((n_slow + 1) * dims.d1),
        explosion: None,
    };
    let mut x = init.x0.clone();
    let mut y = init.y0.clone();
    let mut w1 = vec![0.0; dims.d1];
    let mut bufs = FastBuffers::new(dims);
    let mut b = vec![0.0; dims.n];
    let mut b_acc = vec![0.0; dims.n];
    let mut sigma = vec![0.0; dims.n * dims.d1];
    let mut dw1 = vec![0.0; dims.d1];
    let mut diff = vec![0.0; dims.n];
    let inv_k = 1.0 / substeps as f64;

    path.times.push(0.0);
    path.x.extend_from_slice(&x);
    path.y.extend_from_slice(&y);
    path.w1.extend_from_slice(&w1);

    for n in 0..n_slow {
        let t_n = n as f64 * slow.h;
        b_acc.iter_mut().for_each(|v| *v = 0.0);
        let res = clock.run(
            |k| t_n + k as f64 * fast.h,
            &x,
            &mut y,
            (n * substeps) as u64,
            substeps,
            &mut bufs,
            |_, yk| {
                c.slow_drift(t_n, &x, yk, &w1, &mut b);
                b_acc.iter_mut().zip(&b).for_each(|(a, v)| *a += v);
            },
        );
        if let Err(k) = res {
            path.explosion = Some(ExplosionInfo {
                step: n,
                t: t_n + k as f64 * fast.h,
            });
            return Ok(path);
        }
        b_acc.iter_mut().for_each(|v| *v *= inv_k);
        c.slow_diffusion(t_n, &x, &w1, &mut sigma);
        noise.w1_increment(n as u64, w1_stride, &mut dw1);
        matvec(&sigma, &dw1, 1.0, &mut diff);
        if !advance(slow.kind, &mut x, &b_acc, &diff, slow.h) {
            path.explosion = Some(ExplosionInfo {
                step: n,
                t: t_n + slow.h,
            });
            return Ok(path);
        }
        w1.iter_mut().zip(&dw1).for_each(|(w, d)| *w += d);
        path.times.push((n + 1) as f64 * slow.h);
        path.x.extend_from_slice(&x);
        path.w1.extend_from_slice(&w1);
        if (n + 1) % y_every == 0 {
            path.y.extend_from_slice(&y);
        }
    }
    Ok(path)
}

/// Stateful integrator for the frozen equation driven by the `W²` stream of
/// `noise`; exposes `f` and `g` at the current state before each step.
pub struct FrozenStepper<'a, 'b> {
    frozen: &'b FrozenSystem<'a>,
    kind: SchemeKind,
    h: f64,
    noise: &'b NoiseBundle,
    stride: u64,
    y: Vec<f64>,
    step: u64,
    f: Vec<f64>,
    g: Vec<f64>,
    dw: Vec<f64>,
    diff: Vec<f64>,
}

impl<'a, 'b> FrozenStepper<'a, 'b> {
    pub fn new(
        frozen: &'b FrozenSystem<'a>,
        y0: &[f64],
        scheme: StepScheme,
        noise: &'b NoiseBundle,
    ) -> Result<Self> {
        scheme.check()?;
        let dims = frozen.dims();
        if y0.len() != dims.m {
            return Err(Error::DimensionMismatch {
                what: "y0",
                expected: dims.m,
                got: y0.len(),
            });
        }
        if noise.d2() != dims.d2 {
            return Err(Error::DimensionMismatch {
                what: "noise",
                expected: dims.d2,
                got: noise.d2(),
            });
        }
        let stride = noise.w2_stride(scheme.h).ok_or_else(|| {
            Error::GridMismatch(format!(
                "frozen step {} is not a multiple of the noise base step {}",
                scheme.h,
                noise.dt_w2()
            ))
        })?;
        Ok(FrozenStepper {
            frozen,
            kind: scheme.kind,
            h: scheme.h,
            noise,
            stride,
            y: y0.to_vec(),
            step: 0,
            f: vec![0.0; dims.m],
            g: vec![0.0; dims.m * dims.d2],
            dw: vec![0.0; dims.d2],
            diff: vec![0.0; dims.m],
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.y
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Advance one step; `visit(y, f(y), g(y))` runs first.
    #[inline]
    pub fn step_with(&mut self, visit: impl FnOnce(&[f64], &[f64], &[f64])) -> Result<()> {
        self.frozen.drift(&self.y, &mut self.f);
        self.frozen.diffusion(&self.y, &mut self.g);
        visit(&self.y, &self.f, &self.g);
        if self.stride == 1 {
            self.noise.w2_fine_block(self.step, &mut self.dw);
        } else {
            self.noise
                .w2_increment(self.step, self.stride, &mut self.dw);
        }
        matvec(&self.g, &self.dw, 1.0, &mut self.diff);
        let step = self.step as usize;
        self.step += 1;
        if advance(self.kind, &mut self.y, &self.f, &self.diff, self.h) {
            Ok(())
        } else {
            Err(Error::Explosion {
                step,
                t: self.step as f64 * self.h,
            })
        }
    }

    #[inline]
    pub fn step(&mut self) -> Result<()> {
        self.step_with(|_, _, _| {})
    }
}

/// Simulate the frozen equation on `[0, horizon]`, storing every
/// `record_every`-th state.
pub fn simulate_frozen(
    frozen: &FrozenSystem<'_>,
    y0: &[f64],
    horizon: f64,
    scheme: StepScheme,
    noise: &NoiseBundle,
    record_every: usize,
) -> Result<FastPath> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParams(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if record_every == 0 {
        return Err(Error::InvalidParams(
            "record_every must be at least 1".into(),
        ));
    }
    let n = steps_in(horizon, scheme.h, "frozen horizon")?;
    let m = frozen.dims().m;
    let mut stepper = FrozenStepper::new(frozen, y0, scheme, noise)?;
    let mut out = FastPath {
        m,
        times: vec![0.0],
        y: y0.to_vec(),
        explosion: None,
    };
    for k in 0..n {
        if let Err(Error::Explosion { step, t }) = stepper.step() {
            out.explosion = Some(ExplosionInfo { step, t });
            break;
        }
        if (k + 1) % record_every == 0 {
            out.times.push((k + 1) as f64 * scheme.h);
            out.y.extend_from_slice(stepper.state());
        }
    }
    Ok(out)
}

/// Khasminskii auxiliary process for a completed coupled run.
///
/// On block `[kδ, (k+1)δ)` the fast coefficients are frozen at
/// `(kδ, X^ε_{kδ})`; `X̂` uses `b` at the same frozen arguments and `σ` at the
/// live `(s, X^ε_s)`. Both reuse the coupled run's `W¹` and `W²`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_auxiliary(
    system: &CoefficientSystem,
    eps: f64,
    delta: f64,
    horizon: f64,
    init: &InitialState,
    slow: StepScheme,
    fast: StepScheme,
    noise: &NoiseBundle,
    coupled: &PathPair,
) -> Result<AuxPaths> {
    check_eps(system, eps)?;
    slow.check()?;
    fast.check()?;
    let dims = system.dims();
    init.check(dims)?;
    if !(delta > 0.0) {
        return Err(Error::InvalidParams(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let n_slow = steps_in(horizon, slow.h, "horizon")?;
    let block = if delta >= horizon {
        n_slow.max(1)
    } else {
        integer_ratio(delta, slow.h)
            .map(|k| k as usize)
            .ok_or_else(|| {
                Error::GridMismatch(format!(
                    "delta {delta} is not a multiple of the slow step {}",
                    slow.h
                ))
            })?
    };
    let substeps = steps_in(slow.h, fast.h, "slow step")?;
    if let Some(e) = coupled.explosion {
        return Err(e.into_error());
    }
    if coupled.len() != n_slow + 1 {
        return Err(Error::GridMismatch(format!(
            "coupled path has {} grid points, expected {}",
            coupled.len(),
            n_slow + 1
        )));
    }
    let w1_stride = noise.w1_stride(slow.h).ok_or_else(|| {
        Error::GridMismatch("slow step is not a multiple of the W¹ base step".into())
    })?;
    let clock = FastClock::new(system, eps, fast, noise)?;
    let c = system.coefficients();

    let mut out = AuxPaths {
        dims,
        times: coupled.times.clone(),
        x_hat: Vec::with_capacity((n_slow + 1) * dims.n),
        y_hat: Vec::with_capacity((n_slow + 1) * dims.m),
        explosion: None,
    };
    let mut xh = init.x0.clone();
    let mut yh = init.y0.clone();
    out.x_hat.extend_from_slice(&xh);
    out.y_hat.extend_from_slice(&yh);
    let mut bufs = FastBuffers::new(dims);
    let mut b = vec![0.0; dims.n];
    let mut b_acc = vec![0.0; dims.n];
    let mut sigma = vec![0.0; dims.n * dims.d1];
    let mut dw1 = vec![0.0; dims.d1];
    let mut diff = vec![0.0; dims.n];
    let inv_k = 1.0 / substeps as f64;

    for n in 0..n_slow {
        let start = (n / block) * block;
        let t_blk = start as f64 * slow.h;
        let x_blk = coupled.x_at(start);
        let w1_blk = coupled.w1_at(start);
        b_acc.iter_mut().for_each(|v| *v = 0.0);
        let res = clock.run(
            |_| t_blk,
            x_blk,
            &mut yh,
            (n * substeps) as u64,
            substeps,
            &mut bufs,
            |_, yk| {
                c.slow_drift(t_blk, x_blk, yk, w1_blk, &mut b);
                b_acc.iter_mut().zip(&b).for_each(|(a, v)| *a += v);
            },
        );
        let t_n = n as f64 * slow.h;
        if let Err(k) = res {
            out.explosion = Some(ExplosionInfo {
                step: n,
                t: t_n + k as f64 * fast.h,
            });
            return Ok(out);
        }
        b_acc.iter_mut().for_each(|v| *v *= inv_k);
        c.slow_diffusion(t_n, coupled.x_at(n), coupled.w1_at(n), &mut sigma);
        noise.w1_increment(n as u64, w1_stride, &mut dw1);
        matvec(&sigma, &dw1, 1.0, &mut diff);
        if !advance(slow.kind, &mut xh, &b_acc, &diff, slow.h) {
            out.explosion = Some(ExplosionInfo {
                step: n,
                t: t_n + slow.h,
            });
            return Ok(out);
        }
        out.x_hat.extend_from_slice(&xh);
        out.y_hat.extend_from_slice(&yh);
    }
    out.times.truncate(out.x_hat.len() / dims.n);
    Ok(out)
}

/// Fast process on one Khasminskii block, frozen at `(t0, x0)`, run for real
/// time `duration` with drift `f/ε` and diffusion `g/√ε`. `fast.h` is the real
/// time step; stored times are on the real clock.
#[allow(clippy::too_many_arguments)]
pub fn simulate_block_fast(
    system: &CoefficientSystem,
    t0: f64,
    x0: &[f64],
    y0: &[f64],
    eps: f64,
    duration: f64,
    fast: StepScheme,
    noise: &NoiseBundle,
    record_every: usize,
) -> Result<FastPath> {
    if !(eps > 0.0) {
        return Err(Error::EpsilonOutOfRange {
            eps,
            eps0: system.epsilon0(),
        });
    }
    fast.check()?;
    if record_every == 0 {
        return Err(Error::InvalidParams(
            "record_every must be at least 1".into(),
        ));
    }
    let dims = system.dims();
    InitialState::new(x0.to_vec(), y0.to_vec()).check(dims)?;
    let n = steps_in(duration, fast.h, "block duration")?;
    let clock = FastClock::new(system, eps, fast, noise)?;
    let mut bufs = FastBuffers::new(dims);
    let mut y = y0.to_vec();
    let mut out = FastPath {
        m: dims.m,
        times: vec![0.0],
        y: y.clone(),
        explosion: None,
    };
    let mut done = 0usize;
    while done < n {
        let chunk = record_every.min(n - done);
        if let Err(k) = clock.run(|_| t0, x0, &mut y, done as u64, chunk, &mut bufs, |_, _| {}) {
            out.explosion = Some(ExplosionInfo {
                step: done + k,
                t: (done + k) as f64 * fast.h,
            });
            break;
        }
        done += chunk;
        if done.is_multiple_of(record_every) {
            out.times.push(done as f64 * fast.h);
            out.y.extend_from_slice(&y);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BuiltinModel;

    fn params() -> crate::model::HypothesisParams {
        BuiltinModel::Example2 { lambda1: 0.0 }.params()
    }

    #[test]
    fn tamed_zero_drift_identity() {
        assert_eq!(step_tamed(&[1.0], &[0.0], &[0.0], 0.1).unwrap(), vec![1.0]);
    }

    #[test]
    fn tamed_hand_value() {
        let y = step_tamed(&[1.0], &[-1.0], &[0.0], 0.5).unwrap();
        assert!((y[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tamed_large_drift_is_bounded() {
        let y = step_tamed(&[0.0], &[1e6], &[0.0], 1.0).unwrap();
        assert!((y[0] - 1e6 / (1.0 + 1e6)).abs() < 1e-15);
        assert!(y[0] < 1.0);
    }

    #[test]
    fn tamed_rejects_nan() {
        assert!(matches!(
            step_tamed(&[0.0], &[0.0], &[f64::NAN], 0.1),
            Err(Error::NonFiniteState)
        ));
    }

    #[test]
    fn decoupled_deterministic_decay() {
        let sys = CoefficientSystem::scalar(
            "decay",
            params(),
            |_, _, _, _| 0.0,
            |_, _, _| 0.0,
            |_, _, y| -y,
            |_, _, _| 0.0,
        )
        .unwrap();
        let noise = NoiseBundle::coupled(1, 0, 0.01, 0.001, 1, 1);
        let init = InitialState::new(vec![0.0], vec![1.0]);
        let p = simulate_coupled(
            &sys,
            0.1,
            1.0,
            &init,
            StepScheme::tamed(0.01),
            StepScheme::tamed(0.001),
            &noise,
        )
        .unwrap();
        assert!(!p.exploded());
        assert_eq!(p.len(), 101);
        assert!(p.x.iter().all(|v| *v == 0.0));
        for j in 1..p.y_len() {
            assert!(p.y_at(j)[0] < p.y_at(j - 1)[0]);
        }
        // fast clock covers 10 units: y ≈ e^{-10}
        assert!((p.y_at(100)[0] - (-10f64).exp()).abs() < 1e-4);
    }

    #[test]
    fn coupled_is_deterministic() {
        let sys = BuiltinModel::Example1.system();
        let noise = NoiseBundle::coupled(9, 3, 0.01, 0.0001, 1, 1);
        let init = InitialState::new(vec![1.0], vec![0.5]);
        let run = || {
            simulate_coupled(
                &sys,
                0.1,
                0.5,
                &init,
                StepScheme::tamed(0.01),
                StepScheme::tamed(0.0001),
                &noise,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn epsilon_range_is_enforced() {
        let sys = BuiltinModel::Example3.system(); // eps0 = 0.25
        let noise = NoiseBundle::coupled(9, 3, 0.01, 0.001, 1, 1);
        let init = InitialState::new(vec![1.0], vec![0.5]);
        let r = simulate_coupled(
            &sys,
            0.3,
            0.1,
            &init,
            StepScheme::tamed(0.01),
            StepScheme::tamed(0.001),
            &noise,
        );
        assert!(matches!(r, Err(Error::EpsilonOutOfRange { .. })));
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let sys = BuiltinModel::Example1.system();
        let noise = NoiseBundle::coupled(9, 3, 0.01, 0.003, 1, 1);
        let init = InitialState::new(vec![1.0], vec![0.5]);
        let r = simulate_coupled(
            &sys,
            0.5,
            0.1,
            &init,
            StepScheme::tamed(0.01),
            StepScheme::tamed(0.003),
            &noise,
        );
        assert!(matches!(r, Err(Error::GridMismatch(_))));
    }

    #[test]
    fn explosion_truncates_path() {
        // Explicit Euler on dx = x^3 from x = 10 blows up quickly.
        let sys = CoefficientSystem::scalar(
            "blowup",
            params(),
            |_, x, _, _| x * x * x,
            |_, _, _| 0.0,
            |_, _, y| -y,
            |_, _, _| 0.0,
        )
        .unwrap();
        let noise = NoiseBundle::coupled(1, 0, 0.1, 0.01, 1, 1);
        let init = InitialState::new(vec![10.0], vec![0.0]);
        let p = simulate_coupled(
            &sys,
            0.5,
            10.0,
            &init,
            StepScheme::explicit(0.1),
            StepScheme::tamed(0.01),
            &noise,
        )
        .unwrap();
        assert!(p.exploded());
        assert!(p.len() < 101);
        assert!(p.x.iter().all(|v| v.is_finite()));
        assert_eq!(p.x.len(), p.len());
    }

    #[test]
    fn frozen_zero_coefficients_keep_start() {
        let sys = CoefficientSystem::scalar(
            "still",
            params(),
            |_, _, _, _| 0.0,
            |_, _, _| 0.0,
            |_, _, _| 0.0,
            |_, _, _| 0.0,
        )
        .unwrap();
        let fr = sys.frozen(0.0, &[0.0]).unwrap();
        let noise = NoiseBundle::frozen(1, 0, 0.01, 1);
        let p = simulate_frozen(&fr, &[2.5], 1.0, StepScheme::tamed(0.01), &noise, 10).unwrap();
        assert_eq!(p.times.len(), 11);
        assert!(p.y.iter().all(|v| *v == 2.5));
    }

    #[test]
    fn auxiliary_matches_coupled_for_constant_fast_coefficients() {
        let sys = CoefficientSystem::scalar(
            "const-fast",
            params(),
            |_, x, y, _| -x + y,
            |_, _, _| 0.3,
            |_, _, y| 1.0 - 2.0 * y,
            |_, _, _| 0.5,
        )
        .unwrap();
        let noise = NoiseBundle::coupled(4, 1, 0.01, 0.0001, 1, 1);
        let init = InitialState::new(vec![0.2], vec![0.1]);
        let (slow, fast) = (StepScheme::tamed(0.01), StepScheme::tamed(0.0001));
        let p = simulate_coupled(&sys, 0.05, 0.5, &init, slow, fast, &noise).unwrap();
        let a = simulate_auxiliary(&sys, 0.05, 0.01, 0.5, &init, slow, fast, &noise, &p).unwrap();
        assert_eq!(a.y_hat, p.y);
        assert!(a.explosion.is_none());
    }

    #[test]
    fn auxiliary_rejects_off_grid_delta() {
        let sys = BuiltinModel::Example2 { lambda1: 0.0 }.system();
        let noise = NoiseBundle::coupled(4, 1, 0.01, 0.0001, 1, 1);
        let init = InitialState::new(vec![1.0], vec![1.0]);
        let (slow, fast) = (StepScheme::tamed(0.01), StepScheme::tamed(0.0001));
        let p = simulate_coupled(&sys, 0.05, 0.1, &init, slow, fast, &noise).unwrap();
        let r = simulate_auxiliary(&sys, 0.05, 0.015, 0.1, &init, slow, fast, &noise, &p);
        assert!(matches!(r, Err(Error::GridMismatch(_))));
    }
}
