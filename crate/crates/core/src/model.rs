//! Coefficient systems for slow-fast SDEs
//!
//! ```text
//! dX = b(t, X, Y, W¹_t) dt + σ(t, X, W¹_t) dW¹
//! dY = ε⁻¹ f(t, X, Y) dt + ε^{-1/2} g(t, X, Y) dW²
//! ```
//!
//! The slow coefficients may read the current value of the driving noise
//! `W¹_t` (this is how ω-dependence enters); the fast coefficients never do,
//! and the [`Coefficients`] trait makes that impossible by construction.
//!
//! Matrices are stored row-major: `σ` is `n × d1`, `g` is `m × d2`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoefficientKind, Error, Result};

/// State and noise dimensions of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub d1: usize,
    pub d2: usize,
}

impl Dims {
    pub const SCALAR: Dims = Dims {
        n: 1,
        m: 1,
        d1: 1,
        d2: 1,
    };

    pub fn new(n: usize, m: usize, d1: usize, d2: usize) -> Result<Self> {
        if n == 0 || m == 0 || d1 == 0 || d2 == 0 {
            return Err(Error::InvalidParams(format!(
                "dimensions must be positive, got n={n}, m={m}, d1={d1}, d2={d2}"
            )));
        }
        Ok(Dims { n, m, d1, d2 })
    }
}

/// The four coefficient maps. Implementations must be pure.
pub trait Coefficients: Send + Sync {
    /// `b(t, x, y, w1)`, written into `out` (length `n`).
    fn slow_drift(&self, t: f64, x: &[f64], y: &[f64], w1: &[f64], out: &mut [f64]);
    /// `σ(t, x, w1)`, row-major `n × d1`.
    fn slow_diffusion(&self, t: f64, x: &[f64], w1: &[f64], out: &mut [f64]);
    /// `f(t, x, y)`, length `m`.
    fn fast_drift(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]);
    /// `g(t, x, y)`, row-major `m × d2`.
    fn fast_diffusion(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]);
}

/// Declared regularity and dissipativity constants of a model.
///
/// `theta[i]` holds θ_{i+1}, `alpha[i]` holds α_{i+1}. `beta_k[j]` is the
/// claimed coercivity gap for `k = j + 2`, so `beta_k.len() == k_max - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisParams {
    pub theta: [f64; 6],
    pub alpha: [f64; 4],
    pub gamma1: f64,
    pub gamma2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
    pub beta_k: Vec<f64>,
}

impl HypothesisParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.theta.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad(format!("theta must be nonnegative, got {:?}", self.theta));
        }
        if self.theta[3] < 2.0 {
            return bad(format!("theta4 must be >= 2, got {}", self.theta[3]));
        }
        if self.theta[1] < 1.0 || self.theta[2] < 1.0 {
            return bad("theta2 and theta3 must be >= 1".into());
        }
        if self.alpha.iter().any(|v| !(*v >= 1.0)) {
            return bad(format!("alpha must be >= 1, got {:?}", self.alpha));
        }
        for (name, g) in [("gamma1", self.gamma1), ("gamma2", self.gamma2)] {
            if !(g > 0.0 && g <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {g}"));
            }
        }
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return bad("lambda1, lambda2 must be nonnegative".into());
        }
        if (self.lambda1 == 0.0) != (self.lambda2 == 0.0) {
            return bad(format!(
                "lambda2 must vanish exactly when lambda1 does (lambda1={}, lambda2={})",
                self.lambda1, self.lambda2
            ));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.beta_k.is_empty() {
            return bad("at least (A_2) must be claimed".into());
        }
        if self.beta_k.iter().any(|b| !(*b > 0.0)) {
            return bad("claimed beta_k must be positive".into());
        }
        Ok(())
    }

    pub fn theta4(&self) -> f64 {
        self.theta[3]
    }

    /// Largest k for which (A_k) is claimed.
    pub fn k_max(&self) -> u32 {
        self.beta_k.len() as u32 + 1
    }

    pub fn beta_k(&self, k: u32) -> Option<f64> {
        if k < 2 {
            return None;
        }
        self.beta_k.get((k - 2) as usize).copied()
    }

    /// ε₀ = λ₂/λ₁ when λ₁ > 0, else 1.
    pub fn epsilon0(&self) -> f64 {
        if self.lambda1 > 0.0 {
            self.lambda2 / self.lambda1
        } else {
            1.0
        }
    }

    /// Block exponent γ̃ = 1 / (1 + min{2γ₁, γ₂, ½}).
    pub fn gamma_tilde(&self) -> f64 {
        1.0 / (1.0 + (2.0 * self.gamma1).min(self.gamma2).min(0.5))
    }

    /// Largest admissible moment exponent p for the strong error, if bounded.
    pub fn p_bound(&self) -> Option<f64> {
        if self.lambda1 > 0.0 {
            Some(2.0 * self.k_max() as f64 / self.theta4())
        } else {
            None
        }
    }
}

/// The three example systems shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "lowercase")]
pub enum BuiltinModel {
    /// `b = −x³ + x + y³`, `σ = x`, `f = −x²y³ − 3y − y⁵`, `g = sin x + sin y`.
    Example1,
    /// `b = t²x − x³y² + λ₁y`, `σ = t² + x`, `f = √t·x − 8y`, `g = t + x + y`.
    Example2 { lambda1: f64 },
    /// `b = −|sin W¹_t|·x³ + y`, `σ = x`, `f = x − 8y`, `g = y`.
    Example3,
}

impl BuiltinModel {
    pub fn from_tag(tag: &str, lambda1: f64) -> Result<Self> {
        match tag {
            "example1" => Ok(BuiltinModel::Example1),
            "example2" => Ok(BuiltinModel::Example2 { lambda1 }),
            "example3" => Ok(BuiltinModel::Example3),
            other => Err(Error::InvalidConfig(format!(
                "unknown built-in model `{other}`"
            ))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            BuiltinModel::Example1 => "example1",
            BuiltinModel::Example2 { .. } => "example2",
            BuiltinModel::Example3 => "example3",
        }
    }

    pub fn params(&self) -> HypothesisParams {
        // (A_k) for the affine examples: the |y|² coefficient of the left side
        // is k − 17, split between beta_k and lambda2.
        let affine_beta_k = |lambda2: f64| -> Vec<f64> {
            (2..=16u32)
                .map(|k| (17 - k) as f64 / 2.0 - lambda2)
                .collect()
        };
        match *self {
            BuiltinModel::Example1 => HypothesisParams {
                theta: [0.0, 2.0, 1.0, 6.0, 3.0, 3.0],
                alpha: [2.0, 6.0, 4.0, 6.0],
                gamma1: 1.0,
                gamma2: 1.0,
                lambda1: 1.0,
                lambda2: 1.0,
                beta: 3.0,
                beta_k: vec![3.0; 31],
            },
            BuiltinModel::Example2 { lambda1 } => {
                let lambda2 = if lambda1 > 0.0 { 0.25 } else { 0.0 };
                HypothesisParams {
                    theta: [2.0, 1.0, 3.0, 2.0, 6.0, 4.0],
                    alpha: [1.0; 4],
                    gamma1: 1.0,
                    gamma2: 0.5,
                    lambda1,
                    lambda2,
                    beta: 14.0,
                    beta_k: affine_beta_k(lambda2),
                }
            }
            BuiltinModel::Example3 => HypothesisParams {
                theta: [0.0, 1.0, 3.0, 2.0, 3.0, 1.0],
                alpha: [1.0; 4],
                gamma1: 0.49,
                gamma2: 1.0,
                lambda1: 1.0,
                lambda2: 0.25,
                beta: 14.0,
                beta_k: affine_beta_k(0.25),
            },
        }
    }

    /// Instantiate as a [`CoefficientSystem`].
    pub fn system(self) -> CoefficientSystem {
        let descriptor = match self {
            BuiltinModel::Example2 { lambda1 } => format!("example2(lambda1={lambda1:e})"),
            other => other.tag().to_string(),
        };
        let mut sys = CoefficientSystem {
            tag: self.tag().to_string(),
            descriptor,
            dims: Dims::SCALAR,
            params: self.params(),
            coeffs: Arc::new(self),
            omega_dependent: false,
            closed_form_bbar: None,
            k_process: None,
        };
        match self {
            BuiltinModel::Example1 => {
                sys.k_process = Some(Arc::new(|_t, r| 6.0 * r * r + 3.0));
            }
            BuiltinModel::Example2 { lambda1 } => {
                sys.k_process = Some(Arc::new(|t, r| 6.0 * r * r + 2.0 * t.powi(4) + 2.0));
                sys.closed_form_bbar = Some(Arc::new(move |t, x, _w1, out| {
                    // Stationary moments of dY = (a − 8Y)ds + (c + Y)dW.
                    let (x, a, c) = (x[0], t.sqrt() * x[0], t + x[0]);
                    let mean = a / 8.0;
                    let second = (2.0 * a * mean + c * c + 2.0 * c * mean) / 15.0;
                    out[0] = t * t * x - x.powi(3) * second + lambda1 * mean;
                }));
            }
            BuiltinModel::Example3 => {
                sys.omega_dependent = true;
                sys.k_process = Some(Arc::new(|_t, r| 6.0 * r * r + 1.0));
                sys.closed_form_bbar = Some(Arc::new(|_t, x, w1, out| {
                    out[0] = -w1[0].sin().abs() * x[0].powi(3) + x[0] / 8.0;
                }));
            }
        }
        sys
    }
}

impl Coefficients for BuiltinModel {
    fn slow_drift(&self, t: f64, x: &[f64], y: &[f64], w1: &[f64], out: &mut [f64]) {
        let (x, y) = (x[0], y[0]);
        out[0] = match *self {
            BuiltinModel::Example1 => -x * x * x + x + y * y * y,
            BuiltinModel::Example2 { lambda1 } => t * t * x - x * x * x * y * y + lambda1 * y,
            BuiltinModel::Example3 => -w1[0].sin().abs() * x * x * x + y,
        };
    }

    fn slow_diffusion(&self, t: f64, x: &[f64], _w1: &[f64], out: &mut [f64]) {
        out[0] = match *self {
            BuiltinModel::Example1 | BuiltinModel::Example3 => x[0],
            BuiltinModel::Example2 { .. } => t * t + x[0],
        };
    }

    fn fast_drift(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        let (x, y) = (x[0], y[0]);
        out[0] = match *self {
            BuiltinModel::Example1 => {
                let y2 = y * y;
                -x * x * y2 * y - 3.0 * y - y2 * y2 * y
            }
            BuiltinModel::Example2 { .. } => t.sqrt() * x - 8.0 * y,
            BuiltinModel::Example3 => x - 8.0 * y,
        };
    }

    fn fast_diffusion(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        let (x, y) = (x[0], y[0]);
        out[0] = match *self {
            BuiltinModel::Example1 => x.sin() + y.sin(),
            BuiltinModel::Example2 { .. } => t + x + y,
            BuiltinModel::Example3 => y,
        };
    }
}

/// Scalar (n = m = d1 = d2 = 1) model built from closures.
pub struct ScalarCoefficients<B, S, F, G> {
    pub b: B,
    pub sigma: S,
    pub f: F,
    pub g: G,
}

impl<B, S, F, G> Coefficients for ScalarCoefficients<B, S, F, G>
where
    B: Fn(f64, f64, f64, f64) -> f64 + Send + Sync,
    S: Fn(f64, f64, f64) -> f64 + Send + Sync,
    F: Fn(f64, f64, f64) -> f64 + Send + Sync,
    G: Fn(f64, f64, f64) -> f64 + Send + Sync,
{
    fn slow_drift(&self, t: f64, x: &[f64], y: &[f64], w1: &[f64], out: &mut [f64]) {
        out[0] = (self.b)(t, x[0], y[0], w1[0]);
    }
    fn slow_diffusion(&self, t: f64, x: &[f64], w1: &[f64], out: &mut [f64]) {
        out[0] = (self.sigma)(t, x[0], w1[0]);
    }
    fn fast_drift(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = (self.f)(t, x[0], y[0]);
    }
    fn fast_diffusion(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = (self.g)(t, x[0], y[0]);
    }
}

/// Closed-form averaged drift `(t, x, w1, out)`.
pub type ClosedFormBbar = dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync;
/// `K_t(R)` as a function of `(t, R)`.
pub type KProcess = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// One slow-fast model: coefficient maps, dimensions and declared constants.
///
/// Immutable after construction and cheap to clone.
#[derive(Clone)]
pub struct CoefficientSystem {
    tag: String,
    descriptor: String,
    dims: Dims,
    params: HypothesisParams,
    coeffs: Arc<dyn Coefficients>,
    omega_dependent: bool,
    closed_form_bbar: Option<Arc<ClosedFormBbar>>,
    k_process: Option<Arc<KProcess>>,
}

impl fmt::Debug for CoefficientSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSystem")
            .field("tag", &self.tag)
            .field("descriptor", &self.descriptor)
            .field("dims", &self.dims)
            .field("params", &self.params)
            .field("omega_dependent", &self.omega_dependent)
            .field("closed_form_bbar", &self.closed_form_bbar.is_some())
            .field("k_process", &self.k_process.is_some())
            .finish()
    }
}

impl CoefficientSystem {
    /// A user-defined model. `tag` should identify the model uniquely; it
    /// feeds the fingerprint of any table built from it.
    pub fn custom(
        tag: impl Into<String>,
        dims: Dims,
        params: HypothesisParams,
        coeffs: impl Coefficients + 'static,
    ) -> Result<Self> {
        params.validate()?;
        let tag = tag.into();
        Ok(CoefficientSystem {
            descriptor: format!("custom:{tag}"),
            tag,
            dims,
            params,
            coeffs: Arc::new(coeffs),
            omega_dependent: false,
            closed_form_bbar: None,
            k_process: None,
        })
    }

    /// Convenience constructor for one-dimensional models.
    pub fn scalar<B, S, F, G>(
        tag: impl Into<String>,
        params: HypothesisParams,
        b: B,
        sigma: S,
        f: F,
        g: G,
    ) -> Result<Self>
    where
        B: Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        S: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        F: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self::custom(
            tag,
            Dims::SCALAR,
            params,
            ScalarCoefficients { b, sigma, f, g },
        )
    }

    pub fn with_closed_form_bbar(
        mut self,
        bbar: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.closed_form_bbar = Some(Arc::new(bbar));
        self
    }

    pub fn with_k_process(mut self, k: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.k_process = Some(Arc::new(k));
        self
    }

    /// Mark the slow coefficients as reading `w1`.
    pub fn with_omega_dependence(mut self, dependent: bool) -> Self {
        self.omega_dependent = dependent;
        self
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn params(&self) -> &HypothesisParams {
        &self.params
    }

    pub fn coefficients(&self) -> &dyn Coefficients {
        self.coeffs.as_ref()
    }

    pub fn is_omega_dependent(&self) -> bool {
        self.omega_dependent
    }

    pub fn closed_form_bbar(&self) -> Option<&ClosedFormBbar> {
        self.closed_form_bbar.as_deref()
    }

    pub fn k_process(&self) -> Option<&KProcess> {
        self.k_process.as_deref()
    }

    pub fn epsilon0(&self) -> f64 {
        self.params.epsilon0()
    }

    /// Stable identifier of the model and its declared parameters.
    pub fn fingerprint(&self) -> String {
        let params = serde_json::to_string(&self.params).expect("params serialize");
        fingerprint_of(&[self.descriptor.as_bytes(), params.as_bytes()])
    }

    fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected != got {
            return Err(Error::DimensionMismatch {
                what,
                expected,
                got,
            });
        }
        Ok(())
    }

    /// Evaluate all four coefficients, rejecting non-finite output.
    pub fn evaluate(&self, t: f64, x: &[f64], y: &[f64], w1: &[f64]) -> Result<CoefficientValues> {
        let d = self.dims;
        Self::check_dim("x", d.n, x.len())?;
        Self::check_dim("y", d.m, y.len())?;
        Self::check_dim("w1", d.d1, w1.len())?;
        if !t.is_finite() || x.iter().chain(y).chain(w1).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(
                "coefficient arguments must be finite".into(),
            ));
        }
        let mut v = CoefficientValues {
            b: vec![0.0; d.n],
            sigma: vec![0.0; d.n * d.d1],
            f: vec![0.0; d.m],
            g: vec![0.0; d.m * d.d2],
        };
        let c = self.coefficients();
        c.slow_drift(t, x, y, w1, &mut v.b);
        c.slow_diffusion(t, x, w1, &mut v.sigma);
        c.fast_drift(t, x, y, &mut v.f);
        c.fast_diffusion(t, x, y, &mut v.g);
        for (which, vals) in [
            (CoefficientKind::SlowDrift, &v.b),
            (CoefficientKind::SlowDiffusion, &v.sigma),
            (CoefficientKind::FastDrift, &v.f),
            (CoefficientKind::FastDiffusion, &v.g),
        ] {
            if vals.iter().any(|z| !z.is_finite()) {
                return Err(Error::NonFiniteCoefficient {
                    which,
                    t,
                    x: x.to_vec(),
                    y: y.to_vec(),
                });
            }
        }
        Ok(v)
    }

    /// Fast coefficients with `(t, x)` held fixed.
    pub fn frozen(&self, t: f64, x: &[f64]) -> Result<FrozenSystem<'_>> {
        Self::check_dim("x", self.dims.n, x.len())?;
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(
                "frozen arguments must be finite".into(),
            ));
        }
        Ok(FrozenSystem {
            system: self,
            t,
            x: x.to_vec(),
        })
    }
}

/// Output of [`CoefficientSystem::evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientValues {
    pub b: Vec<f64>,
    pub sigma: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

/// The fast dynamics `y ↦ f(t, x, y)`, `y ↦ g(t, x, y)` at fixed `(t, x)`.
#[derive(Debug, Clone)]
pub struct FrozenSystem<'a> {
    system: &'a CoefficientSystem,
    t: f64,
    x: Vec<f64>,
}

impl<'a> FrozenSystem<'a> {
    pub fn system(&self) -> &'a CoefficientSystem {
        self.system
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn dims(&self) -> Dims {
        self.system.dims
    }

    #[inline]
    pub fn drift(&self, y: &[f64], out: &mut [f64]) {
        self.system
            .coefficients()
            .fast_drift(self.t, &self.x, y, out);
    }

    #[inline]
    pub fn diffusion(&self, y: &[f64], out: &mut [f64]) {
        self.system
            .coefficients()
            .fast_diffusion(self.t, &self.x, y, out);
    }
}

/// Name → model lookup used when models are selected by tag.
#[derive(Default, Clone)]
pub struct ModelRegistry {
    custom: BTreeMap<String, CoefficientSystem>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, system: CoefficientSystem) {
        self.custom.insert(name.into(), system);
    }

    /// Resolve a built-in tag, or `custom` plus a registered name.
    pub fn resolve(
        &self,
        tag: &str,
        lambda1: f64,
        custom_name: Option<&str>,
    ) -> Result<CoefficientSystem> {
        if tag == "custom" {
            let name = custom_name.ok_or_else(|| {
                Error::InvalidConfig("model = \"custom\" requires a custom name".into())
            })?;
            return self.custom.get(name).cloned().ok_or_else(|| {
                Error::InvalidConfig(format!("no custom model registered as `{name}`"))
            });
        }
        Ok(BuiltinModel::from_tag(tag, lambda1)?.system())
    }
}

/// Hex SHA-256 (first 16 bytes) over the concatenated parts.
pub(crate) fn fingerprint_of(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(&h.finalize()[..16])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(model: BuiltinModel, t: f64, x: f64, y: f64, w1: f64) -> CoefficientValues {
        model.system().evaluate(t, &[x], &[y], &[w1]).unwrap()
    }

    #[test]
    fn example1_vanishes_at_origin() {
        let v = eval(BuiltinModel::Example1, 0.0, 0.0, 0.0, 0.0);
        assert_eq!((v.b[0], v.sigma[0], v.f[0], v.g[0]), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn example1_at_unit_point() {
        let v = eval(BuiltinModel::Example1, 0.0, 1.0, 1.0, 0.0);
        assert_eq!(v.b[0], 1.0);
        assert_eq!(v.sigma[0], 1.0);
        assert_eq!(v.f[0], -5.0);
        assert_eq!(v.g[0], 1f64.sin() + 1f64.sin());
    }

    #[test]
    fn example2_hand_values() {
        let v = eval(BuiltinModel::Example2 { lambda1: 0.0 }, 1.0, 1.0, 2.0, 0.0);
        assert_eq!(v.b[0], -3.0);
        assert_eq!(v.sigma[0], 2.0);
        assert_eq!(v.f[0], -15.0);
        assert_eq!(v.g[0], 4.0);
    }

    #[test]
    fn example3_reads_w1() {
        let sys = BuiltinModel::Example3.system();
        let a = sys.evaluate(0.3, &[1.0], &[0.5], &[0.0]).unwrap();
        let b = sys.evaluate(0.3, &[1.0], &[0.5], &[1.0]).unwrap();
        assert_eq!(a.b[0], 0.5);
        assert!((b.b[0] - (0.5 - 1f64.sin())).abs() < 1e-15);
        assert!(sys.is_omega_dependent());
    }

    #[test]
    fn frozen_example2_at_origin() {
        let sys = BuiltinModel::Example2 { lambda1: 0.7 }.system();
        let fr = sys.frozen(0.0, &[0.0]).unwrap();
        for y in [-2.0, -0.5, 0.0, 1.5, 3.0] {
            let (mut f, mut g) = ([0.0], [0.0]);
            fr.drift(&[y], &mut f);
            fr.diffusion(&[y], &mut g);
            assert_eq!(f[0], -8.0 * y);
            assert_eq!(g[0], y);
        }
    }

    #[test]
    fn frozen_example1_at_zero_slow_state() {
        let sys = BuiltinModel::Example1.system();
        let fr = sys.frozen(0.4, &[0.0]).unwrap();
        for y in [0.3, 1.0, 1.7] {
            let (mut f, mut g) = ([0.0], [0.0]);
            fr.drift(&[y], &mut f);
            fr.diffusion(&[y], &mut g);
            assert_eq!(f[0], -3.0 * y - y.powi(5));
            assert_eq!(g[0], y.sin());
        }
    }

    #[test]
    fn non_finite_output_is_rejected() {
        let sys = CoefficientSystem::scalar(
            "blowup",
            BuiltinModel::Example2 { lambda1: 0.0 }.params(),
            |_, x, _, _| 1.0 / x,
            |_, _, _| 0.0,
            |_, _, _| 0.0,
            |_, _, _| 0.0,
        )
        .unwrap();
        match sys.evaluate(0.0, &[0.0], &[0.0], &[0.0]) {
            Err(Error::NonFiniteCoefficient { which, .. }) => {
                assert_eq!(which, CoefficientKind::SlowDrift)
            }
            other => panic!("expected NonFiniteCoefficient, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let sys = BuiltinModel::Example1.system();
        assert!(matches!(
            sys.evaluate(0.0, &[0.0, 1.0], &[0.0], &[0.0]),
            Err(Error::DimensionMismatch { what: "x", .. })
        ));
    }

    #[test]
    fn params_invariants() {
        for m in [
            BuiltinModel::Example1,
            BuiltinModel::Example2 { lambda1: 0.0 },
            BuiltinModel::Example2 { lambda1: 1.0 },
            BuiltinModel::Example3,
        ] {
            m.params().validate().unwrap();
        }
        let mut p = BuiltinModel::Example2 { lambda1: 0.0 }.params();
        p.lambda1 = 1.0;
        assert!(p.validate().is_err());
        p.lambda2 = 0.5;
        p.validate().unwrap();
        assert_eq!(p.epsilon0(), 0.5);
        p.theta[3] = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn example2_derived_constants() {
        let p = BuiltinModel::Example2 { lambda1: 0.0 }.params();
        assert_eq!(p.epsilon0(), 1.0);
        assert_eq!(p.k_max(), 16);
        assert!((p.gamma_tilde() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.p_bound(), None);
        let p1 = BuiltinModel::Example2 { lambda1: 1.0 }.params();
        assert_eq!(p1.p_bound(), Some(16.0));
    }

    #[test]
    fn example2_closed_form_bbar() {
        let sys = BuiltinModel::Example2 { lambda1: 0.0 }.system();
        let mut out = [0.0];
        sys.closed_form_bbar().unwrap()(1.0, &[1.0], &[0.0], &mut out);
        assert!((out[0] - 41.0 / 60.0).abs() < 1e-15);
        let sys = BuiltinModel::Example2 { lambda1: 1.0 }.system();
        sys.closed_form_bbar().unwrap()(1.0, &[1.0], &[0.0], &mut out);
        assert!((out[0] - 97.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn fingerprints_distinguish_parameters() {
        let a = BuiltinModel::Example2 { lambda1: 0.0 }
            .system()
            .fingerprint();
        let b = BuiltinModel::Example2 { lambda1: 1.0 }
            .system()
            .fingerprint();
        let a2 = BuiltinModel::Example2 { lambda1: 0.0 }
            .system()
            .fingerprint();
        assert_ne!(a, b);
        assert_eq!(a, a2);
        assert_eq!(a.len(), 32);
    }

    #[test]
    fn registry_resolves_builtin_and_custom() {
        let mut reg = ModelRegistry::new();
        let custom = CoefficientSystem::scalar(
            "ou",
            BuiltinModel::Example2 { lambda1: 0.0 }.params(),
            |_, x, _, _| -x,
            |_, _, _| 0.0,
            |_, _, y| -y,
            |_, _, _| 1.0,
        )
        .unwrap();
        reg.register("ou", custom);
        assert_eq!(
            reg.resolve("example1", 0.0, None).unwrap().tag(),
            "example1"
        );
        assert_eq!(reg.resolve("custom", 0.0, Some("ou")).unwrap().tag(), "ou");
        assert!(reg.resolve("custom", 0.0, Some("nope")).is_err());
        assert!(reg.resolve("example9", 0.0, None).is_err());
    }
}
