//! Randomized checks of the structural conditions (H1), (H2) and (A_k)
//! against the constants a model declares.
//!
//! Samples come from a deterministic Kronecker sequence over the user box,
//! with a fixed fraction of heavy-tail samples in a widened `y` box. Sample
//! `i` does not depend on the total count, so more samples can only sharpen a
//! verdict. A pass means "no counterexample found in N samples", nothing more.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::frozen::ols;
use crate::model::CoefficientSystem;
use crate::noise::{hash_key, standard_normal, uniform};

/// Searched constants range over `2^-4 ..= 2^20`.
pub const C_GRID_MIN_EXP: i32 = -4;
pub const C_GRID_MAX_EXP: i32 = 20;
/// Candidate coercivity gaps `2^-4 ..= 2^8`.
const BETA_GRID: std::ops::RangeInclusive<i32> = -4..=8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    H1i,
    H1ii,
    H1iii,
    H2i,
    H2ii,
    Ak(u32),
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::H1i => f.write_str("H1i"),
            Condition::H1ii => f.write_str("H1ii"),
            Condition::H1iii => f.write_str("H1iii"),
            Condition::H2i => f.write_str("H2i"),
            Condition::H2ii => f.write_str("H2ii"),
            Condition::Ak(k) => write!(f, "Ak({k})"),
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    /// Accepts `h1i`, `h1ii`, `h1iii`, `h2i`, `h2ii` and `ak:K`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "h1i" => Condition::H1i,
            "h1ii" => Condition::H1ii,
            "h1iii" => Condition::H1iii,
            "h2i" => Condition::H2i,
            "h2ii" => Condition::H2ii,
            other => {
                let k = other
                    .strip_prefix("ak:")
                    .and_then(|k| k.parse::<u32>().ok())
                    .filter(|k| *k >= 2)
                    .ok_or_else(|| Error::InvalidParams(format!("unknown condition `{s}`")))?;
                Condition::Ak(k)
            }
        })
    }
}

impl Serialize for Condition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Where and how densely to sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSpec {
    pub t_range: (f64, f64),
    /// Half-width of the `x` box (every component).
    pub x_half: f64,
    pub y_half: f64,
    /// Half-width for sampled `W¹` values of ω-dependent models.
    pub w1_half: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub heavy_tail_fraction: f64,
    pub heavy_tail_factor: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            t_range: (0.0, 1.0),
            x_half: 10.0,
            y_half: 10.0,
            w1_half: 3.0,
            n_samples: 100_000,
            seed: 0,
            heavy_tail_fraction: 0.2,
            heavy_tail_factor: 10.0,
        }
    }
}

impl SampleSpec {
    /// Box `|x|, |y| <= half` with everything else default.
    pub fn with_box(half: f64, n_samples: usize, seed: u64) -> Self {
        SampleSpec {
            x_half: half,
            y_half: half,
            n_samples,
            seed,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = self.t_range;
        if !(a.is_finite() && b.is_finite() && a <= b && a >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "bad t_range {:?}",
                self.t_range
            )));
        }
        if !(self.x_half >= 0.0 && self.y_half > 0.0 && self.w1_half >= 0.0) {
            return Err(Error::InvalidParams(
                "box half-widths must be nonnegative (y_half > 0)".into(),
            ));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParams("n_samples must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.heavy_tail_fraction) || !(self.heavy_tail_factor >= 1.0) {
            return Err(Error::InvalidParams("bad heavy-tail settings".into()));
        }
        Ok(())
    }
}

/// A sample point; `x2`/`y2` are the partners for difference conditions,
/// `z` a standard normal used for Brownian increments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub x2: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub y2: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub w1: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Sample {
    t: f64,
    x: Vec<f64>,
    x2: Vec<f64>,
    y: Vec<f64>,
    y2: Vec<f64>,
    w1: Vec<f64>,
    z: Vec<f64>,
}

impl Sample {
    fn witness(&self, pair_x: bool, pair_y: bool) -> Witness {
        Witness {
            t: self.t,
            x: self.x.clone(),
            y: self.y.clone(),
            x2: if pair_x { self.x2.clone() } else { Vec::new() },
            y2: if pair_y { self.y2.clone() } else { Vec::new() },
            w1: self.w1.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub condition: Condition,
    pub n_samples: usize,
    /// Largest `LHS − RHS` over the samples (`<= 0` everywhere means pass).
    pub worst_margin: f64,
    pub witness: Witness,
    pub pass: bool,
    pub label: String,
    /// Declared, searched or fitted constants.
    pub constants: BTreeMap<String, f64>,
}

impl CheckReport {
    fn new(
        condition: Condition,
        n: usize,
        worst: f64,
        witness: Witness,
        constants: BTreeMap<String, f64>,
    ) -> Self {
        let pass = worst <= 0.0;
        let label = if pass {
            format!("no counterexample found in {n} samples")
        } else {
            format!("counterexample found among {n} samples")
        };
        CheckReport {
            condition,
            n_samples: n,
            worst_margin: worst,
            witness,
            pass,
            label,
            constants,
        }
    }
}

/// Golden-ratio generalization: root of `φ^{d+1} = φ + 1`.
fn kronecker_alphas(dim: usize) -> Vec<f64> {
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
    }
    (1..=dim)
        .map(|j| (1.0 / phi.powi(j as i32)).fract())
        .collect()
}

struct Sampler {
    spec: SampleSpec,
    n: usize,
    m: usize,
    d1: usize,
    alphas: Vec<f64>,
    offset: Vec<f64>,
    key: u64,
}

impl Sampler {
    fn new(spec: &SampleSpec, n: usize, m: usize, d1: usize) -> Self {
        let dim = 1 + 2 * n + 2 * m + d1;
        let key = hash_key(&[spec.seed, 0x5a4d_504c]);
        Sampler {
            spec: spec.clone(),
            n,
            m,
            d1,
            alphas: kronecker_alphas(dim),
            offset: (0..dim).map(|j| uniform(key, j as u64)).collect(),
            key,
        }
    }

    fn is_heavy(&self, i: usize) -> bool {
        let f = self.spec.heavy_tail_fraction;
        ((i + 1) as f64 * f).floor() > (i as f64 * f).floor()
    }

    fn sample(&self, i: usize) -> Sample {
        let u: Vec<f64> = self
            .alphas
            .iter()
            .zip(&self.offset)
            .map(|(a, o)| (o + (i as f64 + 1.0) * a).fract())
            .collect();
        let s = &self.spec;
        let sym = |v: f64, h: f64| (2.0 * v - 1.0) * h;
        let yh = if self.is_heavy(i) {
            s.y_half * s.heavy_tail_factor
        } else {
            s.y_half
        };
        let (t0, t1) = s.t_range;
        // Every 16th sample sits on the left end of the time range, where
        // Hölder-type behaviour in t is usually worst.
        let t = if i % 16 == 15 {
            t0
        } else {
            t0 + u[0] * (t1 - t0)
        };
        let mut k = 1;
        let mut take = |len: usize, h: f64| {
            let v: Vec<f64> = u[k..k + len].iter().map(|v| sym(*v, h)).collect();
            k += len;
            v
        };
        let x = take(self.n, s.x_half);
        let x2 = take(self.n, s.x_half);
        let y = take(self.m, yh);
        let y2 = take(self.m, yh);
        let w1 = take(self.d1, s.w1_half);
        let z = (0..self.d1)
            .map(|c| standard_normal(self.key, (i * self.d1 + c) as u64))
            .collect();
        Sample {
            t,
            x,
            x2,
            y,
            y2,
            w1,
            z,
        }
    }

    fn all(&self) -> Vec<Sample> {
        (0..self.spec.n_samples)
            .into_par_iter()
            .map(|i| self.sample(i))
            .collect()
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn powi_grid(e: i32) -> f64 {
    2f64.powi(e)
}

/// Smallest grid constant `C` with `num_i <= C · den_i` for all `i`, and the
/// resulting worst margin and its index. Falls back to the largest grid value.
fn search_constant(num: &[f64], den: &[f64]) -> (f64, bool, f64, usize) {
    let mut required = f64::NEG_INFINITY;
    for (a, b) in num.iter().zip(den) {
        let r = if *b > 0.0 {
            a / b
        } else if *a > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        required = required.max(r);
    }
    let mut c = powi_grid(C_GRID_MAX_EXP);
    let mut ok = false;
    for e in C_GRID_MIN_EXP..=C_GRID_MAX_EXP {
        if powi_grid(e) >= required {
            c = powi_grid(e);
            ok = true;
            break;
        }
    }
    let (worst, at) = worst_of(num.iter().zip(den).map(|(a, b)| a - c * b));
    (c, ok, worst, at)
}

fn worst_of(it: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut worst = f64::NEG_INFINITY;
    let mut at = 0;
    for (i, v) in it.enumerate() {
        // NaN counts as a violation.
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v > worst {
            worst = v;
            at = i;
        }
    }
    (worst, at)
}

struct Evaluator<'a> {
    sys: &'a CoefficientSystem,
}

impl<'a> Evaluator<'a> {
    fn b(&self, t: f64, x: &[f64], y: &[f64], w1: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.sys.dims().n];
        self.sys.coefficients().slow_drift(t, x, y, w1, &mut out);
        out
    }

    fn sigma(&self, t: f64, x: &[f64], w1: &[f64]) -> Vec<f64> {
        let d = self.sys.dims();
        let mut out = vec![0.0; d.n * d.d1];
        self.sys.coefficients().slow_diffusion(t, x, w1, &mut out);
        out
    }

    fn f(&self, t: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.sys.dims().m];
        self.sys.coefficients().fast_drift(t, x, y, &mut out);
        out
    }

    fn g(&self, t: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
        let d = self.sys.dims();
        let mut out = vec![0.0; d.m * d.d2];
        self.sys.coefficients().fast_diffusion(t, x, y, &mut out);
        out
    }
}

fn w1_for(sys: &CoefficientSystem, s: &Sample) -> Vec<f64> {
    if sys.is_omega_dependent() {
        s.w1.clone()
    } else {
        vec![0.0; sys.dims().d1]
    }
}

/// Strict monotonicity (H2)(i) with the declared β. Also reports the largest
/// β consistent with every sample (`beta_best`).
pub fn check_monotonicity(system: &CoefficientSystem, spec: &SampleSpec) -> Result<CheckReport> {
    check_monotonicity_with(system, spec, system.params().beta)
}

/// [`check_monotonicity`] against an explicit β.
pub fn check_monotonicity_with(
    system: &CoefficientSystem,
    spec: &SampleSpec,
    beta: f64,
) -> Result<CheckReport> {
    spec.validate()?;
    let d = system.dims();
    let ev = Evaluator { sys: system };
    let samples = Sampler::new(spec, d.n, d.m, d.d1).all();
    // (expression, |Δy|²) per sample
    let vals: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let dy: Vec<f64> = s.y.iter().zip(&s.y2).map(|(a, b)| a - b).collect();
            let f1 = ev.f(s.t, &s.x, &s.y);
            let f2 = ev.f(s.t, &s.x, &s.y2);
            let df: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a - b).collect();
            let g1 = ev.g(s.t, &s.x, &s.y);
            let g2 = ev.g(s.t, &s.x, &s.y2);
            (2.0 * dot(&df, &dy) + dist2(&g1, &g2), norm2(&dy))
        })
        .collect();
    let best = vals
        .iter()
        .filter(|(_, d2)| *d2 > 0.0)
        .map(|(e, d2)| -e / d2)
        .fold(f64::INFINITY, f64::min);
    let (worst, at) = worst_of(vals.iter().map(|(e, d2)| e + beta * d2));
    let mut constants = BTreeMap::new();
    constants.insert("beta".into(), beta);
    constants.insert("beta_best".into(), best);
    Ok(CheckReport::new(
        Condition::H2i,
        samples.len(),
        worst,
        samples[at].witness(false, true),
        constants,
    ))
}

/// Far-field probes along rays: `y = r·u` for unit directions `u` and radii
/// growing geometrically from `10·y_half`, at a few `(t, x)` positions.
fn ray_probes(spec: &SampleSpec, n: usize, m: usize, d1: usize) -> Vec<Sample> {
    let key = hash_key(&[spec.seed, 0x7261_7973]);
    let dirs: Vec<Vec<f64>> = if m == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        (0..32u64)
            .map(|j| {
                let v: Vec<f64> = (0..m as u64)
                    .map(|c| standard_normal(key, j * m as u64 + c))
                    .collect();
                let r = norm2(&v).sqrt();
                v.iter().map(|a| a / r).collect()
            })
            .collect()
    };
    let (t0, t1) = spec.t_range;
    let xs = [0.0, 0.5, -0.5, 1.0, -1.0];
    let mut out = Vec::new();
    for t in [t0, t1] {
        for xf in xs {
            for u in &dirs {
                for j in 1..=8 {
                    let r = 10.0 * spec.y_half * 4f64.powi(j);
                    out.push(Sample {
                        t,
                        x: vec![xf * spec.x_half; n],
                        x2: vec![xf * spec.x_half; n],
                        y: u.iter().map(|a| a * r).collect(),
                        y2: vec![0.0; m],
                        w1: vec![0.0; d1],
                        z: vec![0.0; d1],
                    });
                }
            }
        }
    }
    out
}

/// Strict coercivity (A_k): searches `β_k` over `2^-4..2^8` and `C` over
/// `2^-4..2^20` with the declared `λ2`, `θ4`. Ray probes far outside the box
/// are added to the quasi-random samples.
pub fn check_coercivity(
    system: &CoefficientSystem,
    k: u32,
    spec: &SampleSpec,
) -> Result<CheckReport> {
    spec.validate()?;
    if k < 2 {
        return Err(Error::InvalidParams(format!(
            "coercivity needs k >= 2, got {k}"
        )));
    }
    let d = system.dims();
    let p = system.params();
    let theta4 = p.theta4();
    let lambda2 = p.lambda2;
    let ev = Evaluator { sys: system };
    let mut samples = Sampler::new(spec, d.n, d.m, d.d1).all();
    samples.extend(ray_probes(spec, d.n, d.m, d.d1));
    let km1 = (k - 1) as f64;
    // (LHS, |y|², |y|^θ4, |x|^{4/θ4} + 1)
    let rows: Vec<[f64; 4]> = samples
        .par_iter()
        .map(|s| {
            let f = ev.f(s.t, &s.x, &s.y);
            let g = ev.g(s.t, &s.x, &s.y);
            let y2 = norm2(&s.y);
            [
                2.0 * dot(&s.y, &f) + km1 * norm2(&g),
                y2,
                y2.powf(theta4 / 2.0),
                norm2(&s.x).powf(2.0 / theta4) + 1.0,
            ]
        })
        .collect();
    let mut chosen: Option<(f64, f64, f64, usize)> = None;
    for e in BETA_GRID.rev() {
        let beta = powi_grid(e);
        let num: Vec<f64> = rows
            .iter()
            .map(|r| r[0] + beta * r[1] + lambda2 * r[2])
            .collect();
        let den: Vec<f64> = rows.iter().map(|r| r[3]).collect();
        let (c, ok, worst, at) = search_constant(&num, &den);
        if ok {
            chosen = Some((beta, c, worst, at));
            break;
        }
        if e == *BETA_GRID.start() {
            chosen = Some((beta, c, worst, at));
        }
    }
    let (beta, c, worst, at) = chosen.expect("beta grid is not empty");
    let mut constants = BTreeMap::new();
    constants.insert("k".into(), k as f64);
    constants.insert("beta_k".into(), beta);
    constants.insert("lambda2".into(), lambda2);
    constants.insert("C".into(), c);
    if let Some(b) = p.beta_k(k) {
        constants.insert("beta_k_declared".into(), b);
    }
    Ok(CheckReport::new(
        Condition::Ak(k),
        samples.len(),
        worst,
        samples[at].witness(false, false),
        constants,
    ))
}

fn k_process(system: &CoefficientSystem) -> Result<&crate::model::KProcess> {
    system
        .k_process()
        .ok_or_else(|| Error::MissingKProcess(system.tag().to_string()))
}

/// Merge sub-checks: the report fails if any part fails; the witness is the
/// first failing part's, or the worst part's when all pass.
fn merge(
    condition: Condition,
    n: usize,
    parts: Vec<(&str, f64, Witness)>,
    constants: BTreeMap<String, f64>,
) -> CheckReport {
    let mut worst = f64::NEG_INFINITY;
    let mut witness = parts[0].2.clone();
    let mut constants = constants;
    for (name, margin, w) in parts {
        constants.insert(format!("margin_{name}"), margin);
        if margin > worst {
            worst = margin;
            witness = w;
        }
    }
    CheckReport::new(condition, n, worst, witness, constants)
}

/// Growth condition (H1)(iii): the one-sided bound on `⟨x, b⟩` with the
/// model's `K_t(1)` and `λ1`, plus `|b| <= K + C(|x|^θ5 + |y|^θ6)` and
/// `‖σ‖² <= K + C|x|²` with searched `C`.
pub fn check_h1_growth(system: &CoefficientSystem, spec: &SampleSpec) -> Result<CheckReport> {
    spec.validate()?;
    let k = k_process(system)?;
    let d = system.dims();
    let p = system.params();
    let ev = Evaluator { sys: system };
    let samples = Sampler::new(spec, d.n, d.m, d.d1).all();
    let rows: Vec<[f64; 7]> = samples
        .par_iter()
        .map(|s| {
            let w1 = w1_for(system, s);
            let b = ev.b(s.t, &s.x, &s.y, &w1);
            let sig = ev.sigma(s.t, &s.x, &w1);
            let k1 = k(s.t, 1.0);
            let x2 = norm2(&s.x);
            let y2 = norm2(&s.y);
            [
                2.0 * dot(&s.x, &b) - k1 * (1.0 + x2) - p.lambda1 * y2.powf(p.theta[3] / 2.0),
                norm2(&b).sqrt() - k1,
                x2.powf(p.theta[4] / 2.0) + y2.powf(p.theta[5] / 2.0),
                norm2(&sig) - k1,
                x2,
                0.0,
                0.0,
            ]
        })
        .collect();
    let (m1, a1) = worst_of(rows.iter().map(|r| r[0]));
    let (c2, _, m2, a2) = search_constant(
        &rows.iter().map(|r| r[1]).collect::<Vec<_>>(),
        &rows.iter().map(|r| r[2]).collect::<Vec<_>>(),
    );
    let (c3, _, m3, a3) = search_constant(
        &rows.iter().map(|r| r[3]).collect::<Vec<_>>(),
        &rows.iter().map(|r| r[4]).collect::<Vec<_>>(),
    );
    let mut constants = BTreeMap::new();
    constants.insert("lambda1".into(), p.lambda1);
    constants.insert("C_drift".into(), c2);
    constants.insert("C_diffusion".into(), c3);
    Ok(merge(
        Condition::H1iii,
        samples.len(),
        vec![
            ("inner_product", m1, samples[a1].witness(false, false)),
            ("drift_growth", m2, samples[a2].witness(false, false)),
            ("diffusion_growth", m3, samples[a3].witness(false, false)),
        ],
        constants,
    ))
}

/// Results of the local Lipschitz / Hölder probes.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub radius: f64,
    pub h1i: CheckReport,
    pub h1ii: CheckReport,
    pub h2ii: CheckReport,
    /// Largest sampled difference quotients.
    pub lip_x_f: f64,
    pub lip_y_f: f64,
    pub lip_x_g: f64,
    pub lip_y_g: f64,
    /// Hölder exponents in `t` fitted over dyadic lags (`None` when the
    /// coefficient does not depend on `t`).
    pub fitted_gamma1: Option<f64>,
    pub fitted_gamma2: Option<f64>,
    pub declared_gamma1: f64,
    pub declared_gamma2: f64,
}

impl LipschitzReport {
    pub fn get(&self, c: Condition) -> Option<&CheckReport> {
        match c {
            Condition::H1i => Some(&self.h1i),
            Condition::H1ii => Some(&self.h1ii),
            Condition::H2ii => Some(&self.h2ii),
            _ => None,
        }
    }
}

/// Slack below the declared exponent tolerated in fitted Hölder exponents.
pub const HOLDER_SLACK: f64 = 0.1;

fn clip_to_ball(x: &[f64], r: f64) -> Vec<f64> {
    let n = norm2(x).sqrt();
    if n > r {
        x.iter().map(|v| v * r / n).collect()
    } else {
        x.to_vec()
    }
}

/// Log-log slope of the largest sampled `|Δ|` against the lag.
fn fit_holder(lags: &[f64], sups: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = lags
        .iter()
        .zip(sups)
        .filter(|(_, s)| **s > 1e-300)
        .map(|(l, s)| (l.ln(), s.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(ols(&xs, &ys).0)
}

/// Local Lipschitz conditions (H1)(i), (H1)(ii) and the regularity bounds
/// (H2)(ii) inside the ball `|x| <= R`.
pub fn check_h1_local_lipschitz(
    system: &CoefficientSystem,
    radius: f64,
    spec: &SampleSpec,
) -> Result<LipschitzReport> {
    spec.validate()?;
    if !(radius > 0.0) {
        return Err(Error::InvalidParams(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let kp = k_process(system)?;
    let d = system.dims();
    let p = system.params().clone();
    let ev = Evaluator { sys: system };
    let spec_r = SampleSpec {
        x_half: radius,
        ..spec.clone()
    };
    let samples: Vec<Sample> = Sampler::new(&spec_r, d.n, d.m, d.d1)
        .all()
        .into_iter()
        .map(|mut s| {
            s.x = clip_to_ball(&s.x, radius);
            s.x2 = clip_to_ball(&s.x2, radius);
            s
        })
        .collect();
    let (t0, t1) = spec.t_range;
    let span = (t1 - t0).max(1e-12);
    let lags: Vec<f64> = (4..=14).map(|j| span * 2f64.powi(-j)).collect();
    let ta = |s: &Sample, tau: f64| {
        if s.t + tau <= t1 {
            (s.t, s.t + tau)
        } else {
            (s.t - tau, s.t)
        }
    };
    // Brownian value at the later time of a pair, for ω-dependent drifts.
    let w_shift = |s: &Sample, tau: f64| -> Vec<f64> {
        s.w1.iter()
            .zip(&s.z)
            .map(|(w, z)| w + tau.sqrt() * z)
            .collect()
    };

    struct Row {
        h1i: f64,
        h1ii_num: f64,
        h1ii_den: f64,
        f_num: f64,
        f_den: f64,
        g_num: f64,
        g_den: f64,
        fg_num: f64,
        fg_den: f64,
        gg_num: f64,
        gg_den: f64,
        lip: [f64; 4],
        holder_b: Vec<f64>,
        holder_fg: Vec<f64>,
        holder_b_ratio_num: f64,
        holder_b_ratio_den: f64,
    }

    let rows: Vec<Row> = samples
        .par_iter()
        .map(|s| {
            let w1 = w1_for(system, s);
            let t = s.t;
            let dx2 = dist2(&s.x, &s.x2);
            let dx = dx2.sqrt();
            let dy = dist2(&s.y, &s.y2).sqrt();
            let y2n = norm2(&s.y);
            // (H1)(i)
            let b1 = ev.b(t, &s.x, &s.y, &w1);
            let b2 = ev.b(t, &s.x2, &s.y, &w1);
            let s1 = ev.sigma(t, &s.x, &w1);
            let s2 = ev.sigma(t, &s.x2, &w1);
            let lhs = 2.0 * dist2(&b1, &b2).sqrt() * dx + dist2(&s1, &s2);
            let h1i = lhs - kp(t, radius) * (1.0 + y2n.powf(p.theta[0] / 2.0)) * dx2;
            // (H1)(ii), y-part
            let by2 = ev.b(t, &s.x, &s.y2, &w1);
            let h1ii_num = dist2(&b1, &by2).sqrt();
            let xn = norm2(&s.x).sqrt();
            let h1ii_den = dy
                * (y2n.sqrt().powf(p.theta[1])
                    + norm2(&s.y2).sqrt().powf(p.theta[1])
                    + kp(t, 1.0)
                    + xn.powf(p.theta[2]));
            // (H2)(ii) bounds at the coarsest lag
            let tau = lags[0];
            let (ta0, ta1) = ta(s, tau);
            let fa = ev.f(ta0, &s.x, &s.y);
            let fb = ev.f(ta1, &s.x2, &s.y);
            let x2n = norm2(&s.x2).sqrt();
            let f_num = dist2(&fa, &fb).sqrt();
            let f_den = (tau.powf(p.gamma2) + dx)
                * (1.0 + xn.powf(p.alpha[0]) + x2n.powf(p.alpha[0]) + y2n.sqrt().powf(p.alpha[1]));
            let ga = ev.g(ta0, &s.x, &s.y);
            let gb = ev.g(ta1, &s.x2, &s.y2);
            let g_num = dist2(&ga, &gb).sqrt();
            let g_den = tau.powf(p.gamma2) + dx + dy;
            let f0 = ev.f(t, &s.x, &s.y);
            let g0 = ev.g(t, &s.x, &s.y);
            let fg_num = norm2(&f0).sqrt();
            let fg_den = 1.0 + xn.powf(p.alpha[2]) + y2n.sqrt().powf(p.alpha[3]);
            let gg_num = norm2(&g0).sqrt();
            let gg_den = 1.0 + xn + y2n.sqrt();
            // difference quotients
            let fx2 = ev.f(t, &s.x2, &s.y);
            let gx2 = ev.g(t, &s.x2, &s.y);
            let fy2 = ev.f(t, &s.x, &s.y2);
            let gy2 = ev.g(t, &s.x, &s.y2);
            let q =
                |a: &[f64], b: &[f64], h: f64| if h > 0.0 { dist2(a, b).sqrt() / h } else { 0.0 };
            let lip = [
                q(&f0, &fx2, dx),
                q(&f0, &fy2, dy),
                q(&g0, &gx2, dx),
                q(&g0, &gy2, dy),
            ];
            // Hölder in t along dyadic lags
            let mut holder_b = Vec::with_capacity(lags.len());
            let mut holder_fg = Vec::with_capacity(lags.len());
            for &tau in &lags {
                let (u0, u1) = ta(s, tau);
                let wa = w1.clone();
                let wb = if system.is_omega_dependent() {
                    w_shift(s, tau)
                } else {
                    w1.clone()
                };
                let ba = ev.b(u0, &s.x, &s.y, &wa);
                let bb = ev.b(u1, &s.x, &s.y, &wb);
                holder_b.push(dist2(&ba, &bb).sqrt());
                let fa = ev.f(u0, &s.x, &s.y);
                let fb = ev.f(u1, &s.x, &s.y);
                let ga = ev.g(u0, &s.x, &s.y);
                let gb = ev.g(u1, &s.x, &s.y);
                holder_fg.push(dist2(&fa, &fb).sqrt().max(dist2(&ga, &gb).sqrt()));
            }
            let tau = lags[0];
            let holder_b_ratio_num = holder_b[0];
            let holder_b_ratio_den =
                tau.powf(p.gamma1) * (y2n.sqrt().powf(p.theta[1]) + xn.powf(p.theta[2]) + 1.0);
            Row {
                h1i,
                h1ii_num,
                h1ii_den,
                f_num,
                f_den,
                g_num,
                g_den,
                fg_num,
                fg_den,
                gg_num,
                gg_den,
                lip,
                holder_b,
                holder_fg,
                holder_b_ratio_num,
                holder_b_ratio_den,
            }
        })
        .collect();

    let col = |f: &dyn Fn(&Row) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let n = samples.len();

    let (m_h1i, a_h1i) = worst_of(rows.iter().map(|r| r.h1i));
    let mut c_h1i = BTreeMap::new();
    c_h1i.insert("radius".into(), radius);
    c_h1i.insert("K_R".into(), kp(t0, radius));
    let h1i = CheckReport::new(
        Condition::H1i,
        n,
        m_h1i,
        samples[a_h1i].witness(true, false),
        c_h1i,
    );

    let sups = |pick: &dyn Fn(&Row) -> &Vec<f64>| -> Vec<f64> {
        (0..lags.len())
            .map(|j| rows.iter().map(|r| pick(r)[j]).fold(0.0, f64::max))
            .collect()
    };
    let fitted_gamma1 = fit_holder(&lags, &sups(&|r| &r.holder_b));
    let fitted_gamma2 = fit_holder(&lags, &sups(&|r| &r.holder_fg));

    let (c_y, _, m_y, a_y) = search_constant(&col(&|r| r.h1ii_num), &col(&|r| r.h1ii_den));
    let mut parts = vec![("y_lipschitz", m_y, samples[a_y].witness(false, true))];
    let mut c_h1ii = BTreeMap::new();
    c_h1ii.insert("C_y".into(), c_y);
    if !system.is_omega_dependent() {
        // Z_T is a constant for drifts that do not read the noise; it is
        // folded into the searched constant.
        let (c_t, _, m_t, a_t) = search_constant(
            &col(&|r| r.holder_b_ratio_num),
            &col(&|r| r.holder_b_ratio_den),
        );
        c_h1ii.insert("C_t".into(), c_t);
        parts.push(("t_holder", m_t, samples[a_t].witness(false, false)));
    }
    let holder_margin = |fitted: Option<f64>, declared: f64| match fitted {
        Some(g) => (declared - HOLDER_SLACK) - g,
        None => f64::NEG_INFINITY,
    };
    parts.push((
        "gamma1_fit",
        holder_margin(fitted_gamma1, p.gamma1),
        samples[0].witness(false, false),
    ));
    c_h1ii.insert("gamma1_declared".into(), p.gamma1);
    if let Some(g) = fitted_gamma1 {
        c_h1ii.insert("gamma1_fitted".into(), g);
    }
    let h1ii = merge(Condition::H1ii, n, parts, c_h1ii);

    let (c_f, _, m_f, a_f) = search_constant(&col(&|r| r.f_num), &col(&|r| r.f_den));
    let (c_g, _, m_g, a_g) = search_constant(&col(&|r| r.g_num), &col(&|r| r.g_den));
    let (c_fg, _, m_fg, a_fg) = search_constant(&col(&|r| r.fg_num), &col(&|r| r.fg_den));
    let (c_gg, _, m_gg, a_gg) = search_constant(&col(&|r| r.gg_num), &col(&|r| r.gg_den));
    let mut c_h2 = BTreeMap::new();
    c_h2.insert("C_f_regularity".into(), c_f);
    c_h2.insert("C_g_regularity".into(), c_g);
    c_h2.insert("C_f_growth".into(), c_fg);
    c_h2.insert("C_g_growth".into(), c_gg);
    c_h2.insert("gamma2_declared".into(), p.gamma2);
    if let Some(g) = fitted_gamma2 {
        c_h2.insert("gamma2_fitted".into(), g);
    }
    let h2ii = merge(
        Condition::H2ii,
        n,
        vec![
            ("f_regularity", m_f, samples[a_f].witness(true, false)),
            ("g_regularity", m_g, samples[a_g].witness(true, true)),
            ("f_growth", m_fg, samples[a_fg].witness(false, false)),
            ("g_growth", m_gg, samples[a_gg].witness(false, false)),
            (
                "gamma2_fit",
                holder_margin(fitted_gamma2, p.gamma2),
                samples[0].witness(false, false),
            ),
        ],
        c_h2,
    );

    let lipmax = |j: usize| rows.iter().map(|r| r.lip[j]).fold(0.0, f64::max);
    Ok(LipschitzReport {
        radius,
        h1i,
        h1ii,
        h2ii,
        lip_x_f: lipmax(0),
        lip_y_f: lipmax(1),
        lip_x_g: lipmax(2),
        lip_y_g: lipmax(3),
        fitted_gamma1,
        fitted_gamma2,
        declared_gamma1: p.gamma1,
        declared_gamma2: p.gamma2,
    })
}

/// Run the check named by `condition`.
pub fn check(
    system: &CoefficientSystem,
    condition: Condition,
    spec: &SampleSpec,
) -> Result<CheckReport> {
    match condition {
        Condition::H2i => check_monotonicity(system, spec),
        Condition::Ak(k) => check_coercivity(system, k, spec),
        Condition::H1iii => check_h1_growth(system, spec),
        c @ (Condition::H1i | Condition::H1ii | Condition::H2ii) => {
            let r = check_h1_local_lipschitz(system, spec.x_half.max(1.0), spec)?;
            Ok(r.get(c).expect("lipschitz condition").clone())
        }
    }
}
