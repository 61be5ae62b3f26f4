//! Long-run simulation of the frozen equation: averaged-drift estimation and
//! contraction, ergodicity and moment diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{steps_in, FrozenStepper, SchemeKind, StepScheme};
use crate::model::{CoefficientSystem, FrozenSystem};
use crate::noise::NoiseBundle;

/// Gap values below this are excluded from contraction fits.
pub const GAP_FLOOR: f64 = 1e-12;

/// Between-chain spread above this multiple of the within-chain spread
/// triggers a non-ergodicity warning.
pub const NON_ERGODIC_RATIO: f64 = 10.0;

const N_BATCHES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationOpts {
    /// Discarded initial time; `None` picks it from the claimed β.
    pub burn_in: Option<f64>,
    pub sample_time: f64,
    pub n_chains: usize,
    pub h: f64,
    pub scheme: SchemeKind,
    pub seed: u64,
    /// Use `|y|²` through the discrete generator as a control variate.
    pub control_variate: bool,
}

impl Default for EstimationOpts {
    fn default() -> Self {
        EstimationOpts {
            burn_in: None,
            sample_time: 50.0,
            n_chains: 8,
            h: 1e-3,
            scheme: SchemeKind::Tamed,
            seed: 0,
            control_variate: true,
        }
    }
}

impl EstimationOpts {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.burn_in {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "burn_in must be positive, got {b}"
                )));
            }
        }
        if !(self.sample_time > 0.0 && self.sample_time.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "sample_time must be positive, got {}",
                self.sample_time
            )));
        }
        if self.n_chains < 2 {
            return Err(Error::InvalidParams(
                "at least 2 chains are needed for a standard error".into(),
            ));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "step must be positive, got {}",
                self.h
            )));
        }
        Ok(())
    }

    pub fn scheme(&self) -> StepScheme {
        StepScheme {
            kind: self.scheme,
            h: self.h,
        }
    }

    /// Burn-in actually used for a chain started at `y0`.
    pub fn resolved_burn_in(&self, beta: f64, y0: &[f64]) -> f64 {
        self.burn_in.unwrap_or_else(|| default_burn_in(beta, y0))
    }
}

/// Time after which `e^{-β s / 2} · max(1, |y0|)` drops below 10⁻³.
pub fn default_burn_in(beta: f64, y0: &[f64]) -> f64 {
    let scale = y0.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let beta = if beta > 0.0 { beta } else { 1.0 };
    2.0 / beta * (1000.0 * scale).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenEstimate {
    pub t: f64,
    pub x: Vec<f64>,
    pub bbar: Vec<f64>,
    pub stderr: Vec<f64>,
    pub burn_in: f64,
    pub sample_time: f64,
    pub n_chains: usize,
    /// Time average of the discrete generator applied to `|y|²`; zero in
    /// stationarity.
    pub generator_residual: f64,
    pub generator_stderr: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
struct ChainStats {
    mean_b: Vec<f64>,
    mean_psi: f64,
    /// Centered co-moments Σ(b−b̄)(ψ−ψ̄) and Σ(ψ−ψ̄)².
    c_bpsi: Vec<f64>,
    m2_psi: f64,
    /// Within-chain standard error of `mean_b` from batch means.
    batch_se: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn run_chain(
    frozen: &FrozenSystem<'_>,
    w1: &[f64],
    y0: &[f64],
    opts: &EstimationOpts,
    chain: usize,
    burn_steps: usize,
    sample_steps: usize,
) -> Result<ChainStats> {
    let dims = frozen.dims();
    let n = dims.n;
    let noise = NoiseBundle::frozen(opts.seed, chain as u64, opts.h, dims.d2);
    let mut stepper = FrozenStepper::new(frozen, y0, opts.scheme(), &noise)?;
    for _ in 0..burn_steps {
        stepper.step()?;
    }
    let coeffs = frozen.system().coefficients();
    let (t, x, h) = (frozen.t(), frozen.x(), opts.h);
    let tamed = opts.scheme == SchemeKind::Tamed;
    let mut b = vec![0.0; n];
    let mut mean_b = vec![0.0; n];
    let mut mean_psi = 0.0;
    let mut c_bpsi = vec![0.0; n];
    let mut m2_psi = 0.0;
    let batch_len = (sample_steps / N_BATCHES).max(1);
    let mut batch_sum = vec![0.0; n];
    let mut batch_means: Vec<Vec<f64>> = Vec::with_capacity(N_BATCHES);
    for k in 0..sample_steps {
        let mut psi = 0.0;
        stepper.step_with(|y, f, g| {
            coeffs.slow_drift(t, x, y, w1, &mut b);
            let fnorm2: f64 = f.iter().map(|v| v * v).sum();
            let damp = if tamed {
                1.0 / (1.0 + h * fnorm2.sqrt())
            } else {
                1.0
            };
            let yf: f64 = y.iter().zip(f).map(|(a, c)| a * c).sum();
            let gg: f64 = g.iter().map(|v| v * v).sum();
            psi = 2.0 * damp * yf + h * damp * damp * fnorm2 + gg;
        })?;
        // Welford update of means and co-moments.
        let cnt = (k + 1) as f64;
        let dpsi = psi - mean_psi;
        mean_psi += dpsi / cnt;
        m2_psi += dpsi * (psi - mean_psi);
        for i in 0..n {
            let db = b[i] - mean_b[i];
            mean_b[i] += db / cnt;
            c_bpsi[i] += db * (psi - mean_psi);
            batch_sum[i] += b[i];
        }
        if (k + 1) % batch_len == 0 && batch_means.len() < N_BATCHES {
            batch_means.push(batch_sum.iter().map(|s| s / batch_len as f64).collect());
            batch_sum.iter_mut().for_each(|s| *s = 0.0);
        }
    }
    let nb = batch_means.len();
    let batch_se = (0..n)
        .map(|i| {
            if nb < 2 {
                return 0.0;
            }
            let vals: Vec<f64> = batch_means.iter().map(|m| m[i]).collect();
            let (_, sd) = mean_sd(&vals);
            sd / (nb as f64).sqrt()
        })
        .collect();
    Ok(ChainStats {
        mean_b,
        mean_psi,
        c_bpsi,
        m2_psi,
        batch_se,
    })
}

/// Sample mean and (n−1)-normalized standard deviation.
pub(crate) fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Estimate `b̄(t, x)` with `W¹ = 0` in the slow drift.
pub fn estimate_bbar(
    system: &CoefficientSystem,
    t: f64,
    x: &[f64],
    y0: &[f64],
    opts: &EstimationOpts,
) -> Result<FrozenEstimate> {
    let w1 = vec![0.0; system.dims().d1];
    estimate_bbar_at(system, t, x, &w1, y0, opts)
}

/// Estimate `b̄(t, x)` as a post-burn-in time average over independent chains
/// of the frozen equation. `w1` is the value of `W¹` passed to `b`.
pub fn estimate_bbar_at(
    system: &CoefficientSystem,
    t: f64,
    x: &[f64],
    w1: &[f64],
    y0: &[f64],
    opts: &EstimationOpts,
) -> Result<FrozenEstimate> {
    opts.validate()?;
    let dims = system.dims();
    if w1.len() != dims.d1 {
        return Err(Error::DimensionMismatch {
            what: "w1",
            expected: dims.d1,
            got: w1.len(),
        });
    }
    let frozen = system.frozen(t, x)?;
    let burn_in = opts.resolved_burn_in(system.params().beta, y0);
    let burn_steps = (burn_in / opts.h).round() as usize;
    let sample_steps = steps_in(opts.sample_time, opts.h, "sample_time")?;

    let chains: Vec<ChainStats> = (0..opts.n_chains)
        .into_par_iter()
        .map(|c| run_chain(&frozen, w1, y0, opts, c, burn_steps, sample_steps))
        .collect::<Result<Vec<_>>>()?;

    let n = dims.n;
    let nc = chains.len() as f64;
    let mut bbar = vec![0.0; n];
    let mut stderr = vec![0.0; n];
    let mut warnings = Vec::new();
    for i in 0..n {
        let coef = if opts.control_variate {
            let num: f64 = chains.iter().map(|c| c.c_bpsi[i]).sum();
            let den: f64 = chains.iter().map(|c| c.m2_psi).sum();
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        } else {
            0.0
        };
        let adjusted: Vec<f64> = chains
            .iter()
            .map(|c| c.mean_b[i] - coef * c.mean_psi)
            .collect();
        let (m, sd) = mean_sd(&adjusted);
        bbar[i] = m;
        stderr[i] = sd / nc.sqrt();

        let raw: Vec<f64> = chains.iter().map(|c| c.mean_b[i]).collect();
        let (_, between) = mean_sd(&raw);
        let within = (chains.iter().map(|c| c.batch_se[i].powi(2)).sum::<f64>() / nc).sqrt();
        if between > NON_ERGODIC_RATIO * within && between > 0.0 {
            let msg = format!(
                "NonErgodicWarning: component {i} between-chain sd {between:.3e} exceeds {NON_ERGODIC_RATIO}x within-chain sd {within:.3e} at t={t}, x={x:?}"
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    if bbar.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState);
    }
    let psi: Vec<f64> = chains.iter().map(|c| c.mean_psi).collect();
    let (gen_mean, gen_sd) = mean_sd(&psi);
    Ok(FrozenEstimate {
        t,
        x: x.to_vec(),
        bbar,
        stderr,
        burn_in,
        sample_time: opts.sample_time,
        n_chains: opts.n_chains,
        generator_residual: gen_mean,
        generator_stderr: gen_sd / nc.sqrt(),
        warnings,
    })
}

/// Least-squares line through `(xs, ys)`: returns `(slope, intercept, slope_se)`.
pub(crate) fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let se = if xs.len() > 2 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, intercept, se)
}

fn record_stride(n_steps: usize, n_points: usize) -> usize {
    (n_steps / n_points.max(1)).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub s: Vec<f64>,
    /// Mean of `|Y^{y1}_s − Y^{y2}_s|²` over pairs.
    pub gap: Vec<f64>,
    pub gap_stderr: Vec<f64>,
    /// Fitted exponential decay rate of the mean-square gap.
    pub rate: f64,
    pub rate_stderr: f64,
    pub fit_points: usize,
    pub claimed_beta: f64,
    pub n_paths: usize,
}

/// Synchronous-coupling test: both starts share each pair's `W²`.
#[allow(clippy::too_many_arguments)]
pub fn contraction_test(
    frozen: &FrozenSystem<'_>,
    y1: &[f64],
    y2: &[f64],
    horizon: f64,
    n_paths: usize,
    scheme: StepScheme,
    seed: u64,
    n_points: usize,
) -> Result<ContractionReport> {
    if y1 == y2 {
        return Err(Error::InvalidParams(
            "contraction test needs distinct starts".into(),
        ));
    }
    if n_paths < 2 {
        return Err(Error::InvalidParams("n_paths must be at least 2".into()));
    }
    let n_steps = steps_in(horizon, scheme.h, "horizon")?;
    let every = record_stride(n_steps, n_points);
    let n_rec = n_steps / every + 1;
    let d2 = frozen.dims().d2;

    let gaps: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let noise = NoiseBundle::frozen(seed, p as u64, scheme.h, d2);
            let mut a = FrozenStepper::new(frozen, y1, scheme, &noise)?;
            let mut b = FrozenStepper::new(frozen, y2, scheme, &noise)?;
            let mut out = Vec::with_capacity(n_rec);
            let gap = |a: &FrozenStepper, b: &FrozenStepper| -> f64 {
                a.state()
                    .iter()
                    .zip(b.state())
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum()
            };
            out.push(gap(&a, &b));
            for k in 0..n_rec.saturating_sub(1) * every {
                a.step()?;
                b.step()?;
                if (k + 1) % every == 0 {
                    out.push(gap(&a, &b));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let s: Vec<f64> = (0..n_rec).map(|j| (j * every) as f64 * scheme.h).collect();
    let (gap, gap_stderr) = column_stats(&gaps, n_rec);
    let mut fs = Vec::new();
    let mut fy = Vec::new();
    for j in 0..n_rec {
        if gap[j] <= GAP_FLOOR {
            break;
        }
        fs.push(s[j]);
        fy.push(gap[j].ln());
    }
    if fs.len() < 3 {
        return Err(Error::DegenerateGap);
    }
    let (slope, _, se) = ols(&fs, &fy);
    Ok(ContractionReport {
        s,
        gap,
        gap_stderr,
        rate: -slope,
        rate_stderr: se,
        fit_points: fs.len(),
        claimed_beta: frozen.system().params().beta,
        n_paths,
    })
}

fn column_stats(rows: &[Vec<f64>], n_cols: usize) -> (Vec<f64>, Vec<f64>) {
    let np = rows.len() as f64;
    let mut mean = vec![0.0; n_cols];
    let mut se = vec![0.0; n_cols];
    for j in 0..n_cols {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let (m, sd) = mean_sd(&col);
        mean[j] = m;
        se[j] = sd / np.sqrt();
    }
    (mean, se)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicCurve {
    pub s: Vec<f64>,
    /// `|Ê b(t, x, Y_s) − b̄|` (Euclidean norm over components).
    pub deviation: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Exponential rate fitted to the points above `3·stderr`, if at least
    /// two such points exist.
    pub rate: Option<f64>,
}

/// Decay of `|Ê b(t,x,Y_s) − b̄(t,x)|` along an ensemble started at `y0`.
#[allow(clippy::too_many_arguments)]
pub fn ergodic_convergence_test(
    system: &CoefficientSystem,
    t: f64,
    x: &[f64],
    y0: &[f64],
    s_grid: &[f64],
    n_paths: usize,
    estimate: &FrozenEstimate,
    scheme: StepScheme,
    seed: u64,
) -> Result<ErgodicCurve> {
    if n_paths < 2 {
        return Err(Error::InvalidParams("n_paths must be at least 2".into()));
    }
    if s_grid.windows(2).any(|w| w[1] <= w[0]) || s_grid.first().is_some_and(|s| *s < 0.0) {
        return Err(Error::InvalidParams(
            "s_grid must be increasing and nonnegative".into(),
        ));
    }
    let idx: Vec<usize> = s_grid
        .iter()
        .map(|&s| {
            if s == 0.0 {
                Ok(0)
            } else {
                steps_in(s, scheme.h, "s_grid point")
            }
        })
        .collect::<Result<_>>()?;
    let frozen = system.frozen(t, x)?;
    let dims = system.dims();
    let n = dims.n;
    let w1 = vec![0.0; dims.d1];
    let coeffs = system.coefficients();

    let rows: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let noise = NoiseBundle::frozen(seed, p as u64, scheme.h, dims.d2);
            let mut st = FrozenStepper::new(&frozen, y0, scheme, &noise)?;
            let mut out = Vec::with_capacity(idx.len() * n);
            let mut b = vec![0.0; n];
            for &target in &idx {
                while (st.steps_taken() as usize) < target {
                    st.step()?;
                }
                coeffs.slow_drift(t, x, st.state(), &w1, &mut b);
                out.extend_from_slice(&b);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let (mean, se) = column_stats(&rows, idx.len() * n);
    let mut deviation = Vec::with_capacity(idx.len());
    let mut stderr = Vec::with_capacity(idx.len());
    for j in 0..idx.len() {
        let mut d2 = 0.0;
        let mut s2 = 0.0;
        for i in 0..n {
            d2 += (mean[j * n + i] - estimate.bbar[i]).powi(2);
            s2 += se[j * n + i].powi(2) + estimate.stderr[i].powi(2);
        }
        deviation.push(d2.sqrt());
        stderr.push(s2.sqrt());
    }
    let (fs, fy): (Vec<f64>, Vec<f64>) = s_grid
        .iter()
        .zip(deviation.iter().zip(&stderr))
        .filter(|(_, (d, e))| **d > 3.0 * **e && **d > 0.0)
        .map(|(s, (d, _))| (*s, d.ln()))
        .unzip();
    let rate = if fs.len() >= 2 {
        Some(-ols(&fs, &fy).0)
    } else {
        None
    };
    Ok(ErgodicCurve {
        s: s_grid.to_vec(),
        deviation,
        stderr,
        rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCurve {
    pub k: u32,
    pub s: Vec<f64>,
    pub moment: Vec<f64>,
    pub stderr: Vec<f64>,
    pub sup: f64,
    /// Mean of the last quarter of the curve.
    pub stationary_level: f64,
    /// Rate of an envelope `A e^{-r s} + level` fitted to the excess over the
    /// stationary level, when it is resolvable.
    pub envelope_rate: Option<f64>,
}

/// Running estimate of `E|Y_s|^k` for the frozen equation.
#[allow(clippy::too_many_arguments)]
pub fn moment_bound_test(
    frozen: &FrozenSystem<'_>,
    y0: &[f64],
    k: u32,
    horizon: f64,
    n_paths: usize,
    scheme: StepScheme,
    seed: u64,
    n_points: usize,
) -> Result<MomentCurve> {
    let k_max = frozen.system().params().k_max();
    if k < 2 || k > k_max {
        return Err(Error::UnclaimedCoercivity { k, k_max });
    }
    if n_paths < 2 {
        return Err(Error::InvalidParams("n_paths must be at least 2".into()));
    }
    let n_steps = steps_in(horizon, scheme.h, "horizon")?;
    let every = record_stride(n_steps, n_points);
    let n_rec = n_steps / every + 1;
    let d2 = frozen.dims().d2;
    let kf = k as f64;
    let norm_k = |y: &[f64]| y.iter().map(|v| v * v).sum::<f64>().powf(kf / 2.0);

    let rows: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let noise = NoiseBundle::frozen(seed, p as u64, scheme.h, d2);
            let mut st = FrozenStepper::new(frozen, y0, scheme, &noise)?;
            let mut out = Vec::with_capacity(n_rec);
            out.push(norm_k(st.state()));
            for j in 0..n_rec.saturating_sub(1) * every {
                st.step()?;
                if (j + 1) % every == 0 {
                    out.push(norm_k(st.state()));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let s: Vec<f64> = (0..n_rec).map(|j| (j * every) as f64 * scheme.h).collect();
    let (moment, stderr) = column_stats(&rows, n_rec);
    let sup = moment.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tail = &moment[n_rec - n_rec.div_ceil(4)..];
    let level = tail.iter().sum::<f64>() / tail.len() as f64;
    let (fs, fy): (Vec<f64>, Vec<f64>) = s
        .iter()
        .zip(moment.iter().zip(&stderr))
        .take_while(|(_, (m, e))| **m - level > 3.0 * **e && **m > level)
        .map(|(s, (m, _))| (*s, (m - level).ln()))
        .unzip();
    let envelope_rate = if fs.len() >= 3 {
        Some(-ols(&fs, &fy).0)
    } else {
        None
    };
    Ok(MomentCurve {
        k,
        s,
        moment,
        stderr,
        sup,
        stationary_level: level,
        envelope_rate,
    })
}
