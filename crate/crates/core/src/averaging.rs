//! The averaged equation `dX̄ = b̄(t, X̄) dt + σ(t, X̄) dW¹` and the providers
//! of `b̄`: interpolation tables, memoized on-demand estimates and closed forms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frozen::{estimate_bbar_at, EstimationOpts};
use crate::kernel::{advance, matvec, steps_in, ExplosionInfo, PathPair, StepScheme};
use crate::model::{fingerprint_of, CoefficientSystem};
use crate::noise::NoiseBundle;

pub const TABLE_FORMAT_VERSION: u32 = 1;
const TABLE_MAGIC: &str = "# slowfast averaged-drift table";

/// Relative slack when deciding whether a point lies in the table box.
const BOX_SLACK: f64 = 1e-12;

/// Uniform grid sizes: `t_points` nodes on `[0, T]` and `x_points[i]` nodes on
/// the `i`-th side of the box. A single node sits at the midpoint and makes
/// that axis constant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t_points: usize,
    pub x_points: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableHeader {
    pub format_version: u32,
    pub model_tag: String,
    pub model_fingerprint: String,
    pub fingerprint: String,
    pub horizon: f64,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub grid: GridSpec,
    pub opts: EstimationOpts,
    pub y0: Vec<f64>,
}

impl TableHeader {
    fn compute_fingerprint(&self) -> String {
        let payload = serde_json::json!({
            "model": self.model_fingerprint,
            "horizon": self.horizon,
            "box_lo": self.box_lo,
            "box_hi": self.box_hi,
            "grid": self.grid,
            "opts": self.opts,
            "y0": self.y0,
        })
        .to_string();
        fingerprint_of(&[payload.as_bytes()])
    }
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    count: usize,
}

impl Axis {
    fn node(&self, j: usize) -> f64 {
        if self.count == 1 {
            0.5 * (self.lo + self.hi)
        } else if j == self.count - 1 {
            self.hi
        } else {
            self.lo + j as f64 * (self.hi - self.lo) / (self.count - 1) as f64
        }
    }

    fn spacing(&self) -> f64 {
        if self.count > 1 {
            (self.hi - self.lo) / (self.count - 1) as f64
        } else {
            self.hi - self.lo
        }
    }

    /// Cell index and weight of `v`, or `None` outside `[lo, hi]`.
    fn locate(&self, v: f64) -> Option<(usize, f64)> {
        let slack = BOX_SLACK * (self.hi - self.lo).abs().max(1.0);
        if !(v >= self.lo - slack && v <= self.hi + slack) {
            return None;
        }
        if self.count == 1 {
            return Some((0, 0.0));
        }
        let dx = self.spacing();
        let mut r = ((v - self.lo) / dx).clamp(0.0, (self.count - 1) as f64);
        let near = r.round();
        if (r - near).abs() < 1e-9 {
            r = near;
        }
        let i = (r.floor() as usize).min(self.count - 2);
        Some((i, r - i as f64))
    }
}

/// Averaged drift on a uniform `(t, x)` grid with multilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedDriftTable {
    header: TableHeader,
    /// Node-major values, `n` per node; `t` varies slowest, the last `x` axis
    /// fastest.
    values: Vec<f64>,
    stderr: Vec<f64>,
}

impl AveragedDriftTable {
    pub fn header(&self) -> &TableHeader {
        &self.header
    }

    pub fn fingerprint(&self) -> &str {
        &self.header.fingerprint
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stderrs(&self) -> &[f64] {
        &self.stderr
    }

    pub fn n(&self) -> usize {
        self.header.box_lo.len()
    }

    pub fn node_count(&self) -> usize {
        self.header.grid.t_points * self.header.grid.x_points.iter().product::<usize>()
    }

    fn axes(&self) -> Vec<Axis> {
        axes_of(&self.header)
    }

    /// Coordinates `(t, x)` of node `idx`.
    pub fn node(&self, idx: usize) -> (f64, Vec<f64>) {
        node_coords(&self.axes(), idx)
    }

    /// Largest node stderr over all components.
    pub fn max_stderr(&self) -> f64 {
        self.stderr.iter().cloned().fold(0.0, f64::max)
    }

    /// Multilinear interpolation of values and stderrs at `(t, x)`.
    pub fn lookup(&self, t: f64, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                what: "x",
                expected: n,
                got: x.len(),
            });
        }
        let axes = self.axes();
        let mut cells = Vec::with_capacity(axes.len());
        for (a, v) in axes.iter().zip(std::iter::once(&t).chain(x)) {
            match a.locate(*v) {
                Some(c) => cells.push(c),
                None => return Err(Error::OutOfTableRange { t, x: x.to_vec() }),
            }
        }
        let mut val = vec![0.0; n];
        let mut se = vec![0.0; n];
        let dims = axes.len();
        for corner in 0..(1usize << dims) {
            let mut w = 1.0;
            let mut idx = 0usize;
            for (d, (a, (i, frac))) in axes.iter().zip(&cells).enumerate() {
                let up = (corner >> (dims - 1 - d)) & 1 == 1;
                let j = if a.count == 1 {
                    if up {
                        w = 0.0;
                    }
                    0
                } else if up {
                    w *= frac;
                    i + 1
                } else {
                    w *= 1.0 - frac;
                    *i
                };
                idx = idx * a.count + j;
            }
            if w == 0.0 {
                continue;
            }
            for c in 0..n {
                val[c] += w * self.values[idx * n + c];
                se[c] += w * self.stderr[idx * n + c];
            }
        }
        Ok((val, se))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "{TABLE_MAGIC}").unwrap();
        writeln!(out, "# format_version={TABLE_FORMAT_VERSION}").unwrap();
        writeln!(out, "# header={}", serde_json::to_string(&self.header)?).unwrap();
        let n = self.n();
        let mut cols = vec!["t".to_string()];
        cols.extend((0..n).map(|i| format!("x{i}")));
        cols.extend((0..n).map(|i| format!("bbar{i}")));
        cols.extend((0..n).map(|i| format!("stderr{i}")));
        writeln!(out, "{}", cols.join(",")).unwrap();
        let axes = self.axes();
        for idx in 0..self.node_count() {
            let (t, x) = node_coords(&axes, idx);
            let mut row = vec![format!("{t:e}")];
            row.extend(x.iter().map(|v| format!("{v:e}")));
            row.extend(
                self.values[idx * n..(idx + 1) * n]
                    .iter()
                    .map(|v| format!("{v:e}")),
            );
            row.extend(
                self.stderr[idx * n..(idx + 1) * n]
                    .iter()
                    .map(|v| format!("{v:e}")),
            );
            writeln!(out, "{}", row.join(",")).unwrap();
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Load a table, checking its internal fingerprint.
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::TableFormat("unexpected end of file".into()))
        };
        if next()?.trim() != TABLE_MAGIC {
            return Err(Error::TableFormat("missing table marker".into()));
        }
        let version = next()?;
        let version: u32 = version
            .trim()
            .strip_prefix("# format_version=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::TableFormat("bad format_version line".into()))?;
        if version != TABLE_FORMAT_VERSION {
            return Err(Error::TableFormat(format!(
                "unsupported format_version {version}"
            )));
        }
        let header_line = next()?;
        let header_json = header_line
            .strip_prefix("# header=")
            .ok_or_else(|| Error::TableFormat("bad header line".into()))?;
        let header: TableHeader = serde_json::from_str(header_json)?;
        let recomputed = header.compute_fingerprint();
        if recomputed != header.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: recomputed,
                found: header.fingerprint.clone(),
            });
        }
        let n = header.box_lo.len();
        let _columns = next()?;
        let axes = axes_of(&header);
        let count = header.grid.t_points * header.grid.x_points.iter().product::<usize>();
        let mut values = Vec::with_capacity(count * n);
        let mut stderr = Vec::with_capacity(count * n);
        for idx in 0..count {
            let line = next()?;
            let fields: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::TableFormat(format!("row {idx}: {e}")))?;
            if fields.len() != 1 + 3 * n {
                return Err(Error::TableFormat(format!(
                    "row {idx}: expected {} fields",
                    1 + 3 * n
                )));
            }
            let (t, x) = node_coords(&axes, idx);
            if fields[0] != t || fields[1..=n] != x[..] {
                return Err(Error::TableFormat(format!(
                    "row {idx}: node coordinates do not match the header"
                )));
            }
            values.extend_from_slice(&fields[1 + n..1 + 2 * n]);
            stderr.extend_from_slice(&fields[1 + 2 * n..]);
        }
        Ok(AveragedDriftTable {
            header,
            values,
            stderr,
        })
    }

    /// Load and require the fingerprint `expected`.
    pub fn load_checked(path: &Path, expected: &str) -> Result<Self> {
        let t = Self::load(path)?;
        if t.header.fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                expected: expected.to_string(),
                found: t.header.fingerprint.clone(),
            });
        }
        Ok(t)
    }

    /// The fingerprint a table built with these arguments would carry.
    pub fn expected_fingerprint(
        system: &CoefficientSystem,
        box_lo: &[f64],
        box_hi: &[f64],
        horizon: f64,
        grid: &GridSpec,
        opts: &EstimationOpts,
        y0: &[f64],
    ) -> String {
        header_for(system, box_lo, box_hi, horizon, grid, opts, y0).fingerprint
    }
}

fn axes_of(h: &TableHeader) -> Vec<Axis> {
    let mut axes = vec![Axis {
        lo: 0.0,
        hi: h.horizon,
        count: h.grid.t_points,
    }];
    for i in 0..h.box_lo.len() {
        axes.push(Axis {
            lo: h.box_lo[i],
            hi: h.box_hi[i],
            count: h.grid.x_points[i],
        });
    }
    axes
}

fn node_coords(axes: &[Axis], mut idx: usize) -> (f64, Vec<f64>) {
    let mut coords = vec![0.0; axes.len()];
    for d in (0..axes.len()).rev() {
        coords[d] = axes[d].node(idx % axes[d].count);
        idx /= axes[d].count;
    }
    let t = coords[0];
    (t, coords[1..].to_vec())
}

#[allow(clippy::too_many_arguments)]
fn header_for(
    system: &CoefficientSystem,
    box_lo: &[f64],
    box_hi: &[f64],
    horizon: f64,
    grid: &GridSpec,
    opts: &EstimationOpts,
    y0: &[f64],
) -> TableHeader {
    let mut h = TableHeader {
        format_version: TABLE_FORMAT_VERSION,
        model_tag: system.tag().to_string(),
        model_fingerprint: system.fingerprint(),
        fingerprint: String::new(),
        horizon,
        box_lo: box_lo.to_vec(),
        box_hi: box_hi.to_vec(),
        grid: grid.clone(),
        opts: opts.clone(),
        y0: y0.to_vec(),
    };
    h.fingerprint = h.compute_fingerprint();
    h
}

/// Estimate `b̄` at every node of the grid over `[0, horizon] × box`.
///
/// All nodes share the chain seeds in `opts`, so neighbouring estimates use
/// common random numbers and the interpolant stays smooth.
#[allow(clippy::too_many_arguments)]
pub fn build_table(
    system: &CoefficientSystem,
    box_lo: &[f64],
    box_hi: &[f64],
    horizon: f64,
    grid: &GridSpec,
    opts: &EstimationOpts,
    y0: &[f64],
) -> Result<AveragedDriftTable> {
    let dims = system.dims();
    if system.is_omega_dependent() {
        return Err(Error::InvalidParams(
            "b depends on W¹; tabulating b̄ over (t, x) alone is not possible, use an on-demand or analytic provider"
                .into(),
        ));
    }
    if box_lo.len() != dims.n || box_hi.len() != dims.n || grid.x_points.len() != dims.n {
        return Err(Error::DimensionMismatch {
            what: "table box",
            expected: dims.n,
            got: box_lo.len(),
        });
    }
    if box_lo
        .iter()
        .zip(box_hi)
        .any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite())
    {
        return Err(Error::InvalidParams(
            "table box must satisfy lo <= hi".into(),
        ));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidParams(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if grid.t_points == 0 || grid.x_points.contains(&0) {
        return Err(Error::InvalidParams(
            "grid counts must be at least 1".into(),
        ));
    }
    if y0.len() != dims.m {
        return Err(Error::DimensionMismatch {
            what: "y0",
            expected: dims.m,
            got: y0.len(),
        });
    }
    opts.validate()?;
    let header = header_for(system, box_lo, box_hi, horizon, grid, opts, y0);
    let axes = axes_of(&header);
    let count = grid.t_points * grid.x_points.iter().product::<usize>();
    let w1 = vec![0.0; dims.d1];
    let nodes: Vec<(Vec<f64>, Vec<f64>)> = (0..count)
        .into_par_iter()
        .map(|idx| {
            let (t, x) = node_coords(&axes, idx);
            estimate_bbar_at(system, t, &x, &w1, y0, opts)
                .map(|e| (e.bbar, e.stderr))
                .map_err(|e| {
                    let mut node = vec![t];
                    node.extend_from_slice(&x);
                    Error::NodeEstimation {
                        node,
                        source: Box::new(e),
                    }
                })
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(count * dims.n);
    let mut stderr = Vec::with_capacity(count * dims.n);
    for (v, s) in nodes {
        values.extend(v);
        stderr.extend(s);
    }
    Ok(AveragedDriftTable {
        header,
        values,
        stderr,
    })
}

type MemoKey = (i64, Vec<i64>, Vec<i64>);

/// `(b̄, stderr)` at a quantized point.
type MemoValue = (Vec<f64>, Vec<f64>);

/// Memoized frozen-equation estimates at quantized `(t, x, w1)`.
///
/// Estimates are pure functions of the quantized key, so concurrent misses on
/// the same key compute identical values and the cache content never depends
/// on scheduling.
#[derive(Debug)]
pub struct OnDemand {
    system: CoefficientSystem,
    opts: EstimationOpts,
    y0: Vec<f64>,
    t_quantum: f64,
    x_quantum: f64,
    cache: Mutex<BTreeMap<MemoKey, MemoValue>>,
}

impl OnDemand {
    pub fn new(
        system: CoefficientSystem,
        opts: EstimationOpts,
        y0: Vec<f64>,
        t_quantum: f64,
        x_quantum: f64,
    ) -> Result<Self> {
        opts.validate()?;
        if !(t_quantum > 0.0 && x_quantum > 0.0) {
            return Err(Error::InvalidParams(
                "quantization steps must be positive".into(),
            ));
        }
        if y0.len() != system.dims().m {
            return Err(Error::DimensionMismatch {
                what: "y0",
                expected: system.dims().m,
                got: y0.len(),
            });
        }
        Ok(OnDemand {
            system,
            opts,
            y0,
            t_quantum,
            x_quantum,
            cache: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn t_quantum(&self) -> f64 {
        self.t_quantum
    }

    pub fn x_quantum(&self) -> f64 {
        self.x_quantum
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("memo lock").len()
    }

    fn lookup(&self, t: f64, x: &[f64], w1: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let q = |v: f64, s: f64| (v / s).round() as i64;
        let key: MemoKey = (
            q(t, self.t_quantum),
            x.iter().map(|v| q(*v, self.x_quantum)).collect(),
            if self.system.is_omega_dependent() {
                w1.iter().map(|v| q(*v, self.x_quantum)).collect()
            } else {
                Vec::new()
            },
        );
        if let Some(hit) = self.cache.lock().expect("memo lock").get(&key) {
            return Ok(hit.clone());
        }
        let tq = key.0 as f64 * self.t_quantum;
        let xq: Vec<f64> = key.1.iter().map(|k| *k as f64 * self.x_quantum).collect();
        let wq: Vec<f64> = if key.2.is_empty() {
            vec![0.0; self.system.dims().d1]
        } else {
            key.2.iter().map(|k| *k as f64 * self.x_quantum).collect()
        };
        let e = estimate_bbar_at(&self.system, tq, &xq, &wq, &self.y0, &self.opts)?;
        let val = (e.bbar, e.stderr);
        self.cache
            .lock()
            .expect("memo lock")
            .entry(key)
            .or_insert_with(|| val.clone());
        Ok(val)
    }
}

/// Source of `b̄` values for the averaged equation.
#[derive(Debug, Clone)]
pub enum BbarProvider {
    Table(Arc<AveragedDriftTable>),
    OnDemand(Arc<OnDemand>),
    Analytic(Box<CoefficientSystem>),
}

impl BbarProvider {
    pub fn table(table: AveragedDriftTable) -> Self {
        BbarProvider::Table(Arc::new(table))
    }

    pub fn on_demand(od: OnDemand) -> Self {
        BbarProvider::OnDemand(Arc::new(od))
    }

    /// Closed-form provider; fails for models without a closed-form `b̄`.
    pub fn analytic(system: &CoefficientSystem) -> Result<Self> {
        if system.closed_form_bbar().is_none() {
            return Err(Error::InvalidParams(format!(
                "model `{}` has no closed-form averaged drift",
                system.tag()
            )));
        }
        Ok(BbarProvider::Analytic(Box::new(system.clone())))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BbarProvider::Table(_) => "table",
            BbarProvider::OnDemand(_) => "ondemand",
            BbarProvider::Analytic(_) => "analytic",
        }
    }
}

/// `b̄(t, x)` and its standard error from `provider`. `w1` only matters for
/// models whose slow drift reads the Brownian path.
pub fn bbar_lookup(
    provider: &BbarProvider,
    t: f64,
    x: &[f64],
    w1: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    match provider {
        BbarProvider::Table(tab) => tab.lookup(t, x),
        BbarProvider::OnDemand(od) => od.lookup(t, x, w1),
        BbarProvider::Analytic(sys) => {
            let f = sys.closed_form_bbar().expect("checked at construction");
            let mut out = vec![0.0; sys.dims().n];
            f(t, x, w1, &mut out);
            let zeros = vec![0.0; out.len()];
            Ok((out, zeros))
        }
    }
}

/// Discrete path of the averaged equation.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedPath {
    pub n: usize,
    pub d1: usize,
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub w1: Vec<f64>,
    pub explosion: Option<ExplosionInfo>,
}

impl AveragedPath {
    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x[i * self.n..(i + 1) * self.n]
    }

    pub fn w1_at(&self, i: usize) -> &[f64] {
        &self.w1[i * self.d1..(i + 1) * self.d1]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Solve the averaged equation on `[0, horizon]` with the `W¹` stream of
/// `noise`, using the same slow grid and increments as the coupled system.
pub fn simulate_averaged(
    system: &CoefficientSystem,
    provider: &BbarProvider,
    horizon: f64,
    x0: &[f64],
    scheme: StepScheme,
    noise: &NoiseBundle,
) -> Result<AveragedPath> {
    let dims = system.dims();
    if x0.len() != dims.n {
        return Err(Error::DimensionMismatch {
            what: "x0",
            expected: dims.n,
            got: x0.len(),
        });
    }
    if !(scheme.h > 0.0) {
        return Err(Error::InvalidParams(format!(
            "step must be positive, got {}",
            scheme.h
        )));
    }
    let n_steps = steps_in(horizon, scheme.h, "horizon")?;
    let stride = noise.w1_stride(scheme.h).ok_or_else(|| {
        Error::GridMismatch("slow step is not a multiple of the W¹ base step".into())
    })?;
    let c = system.coefficients();
    let mut out = AveragedPath {
        n: dims.n,
        d1: dims.d1,
        times: Vec::with_capacity(n_steps + 1),
        x: Vec::with_capacity((n_steps + 1) * dims.n),
        w1: Vec::with_capacity((n_steps + 1) * dims.d1),
        explosion: None,
    };
    let mut x = x0.to_vec();
    let mut w1 = vec![0.0; dims.d1];
    let mut sigma = vec![0.0; dims.n * dims.d1];
    let mut dw1 = vec![0.0; dims.d1];
    let mut diff = vec![0.0; dims.n];
    out.times.push(0.0);
    out.x.extend_from_slice(&x);
    out.w1.extend_from_slice(&w1);
    for n in 0..n_steps {
        let t = n as f64 * scheme.h;
        let (drift, _) = bbar_lookup(provider, t, &x, &w1)?;
        c.slow_diffusion(t, &x, &w1, &mut sigma);
        noise.w1_increment(n as u64, stride, &mut dw1);
        matvec(&sigma, &dw1, 1.0, &mut diff);
        if !advance(scheme.kind, &mut x, &drift, &diff, scheme.h) {
            out.explosion = Some(ExplosionInfo {
                step: n,
                t: t + scheme.h,
            });
            break;
        }
        w1.iter_mut().zip(&dw1).for_each(|(w, d)| *w += d);
        out.times.push((n + 1) as f64 * scheme.h);
        out.x.extend_from_slice(&x);
        out.w1.extend_from_slice(&w1);
    }
    Ok(out)
}

/// Table box covering three times the per-component range of the slow paths
/// (centred on the range midpoint, at least ±1 wide).
pub fn pilot_box(paths: &[PathPair]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = paths
        .first()
        .ok_or_else(|| Error::InvalidParams("pilot box needs at least one path".into()))?;
    let n = first.dims.n;
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for p in paths {
        for i in 0..p.len() {
            for (c, v) in p.x_at(i).iter().enumerate() {
                lo[c] = lo[c].min(*v);
                hi[c] = hi[c].max(*v);
            }
        }
    }
    let mut blo = vec![0.0; n];
    let mut bhi = vec![0.0; n];
    for c in 0..n {
        let mid = 0.5 * (lo[c] + hi[c]);
        let half = (1.5 * (hi[c] - lo[c])).max(1.0);
        blo[c] = mid - half;
        bhi[c] = mid + half;
    }
    Ok((blo, bhi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BuiltinModel;

    fn tiny_opts() -> EstimationOpts {
        EstimationOpts {
            burn_in: Some(0.5),
            sample_time: 2.0,
            n_chains: 2,
            h: 1e-2,
            ..Default::default()
        }
    }

    #[test]
    fn axis_locate_snaps_to_nodes() {
        let a = Axis {
            lo: -1.0,
            hi: 1.0,
            count: 5,
        };
        assert_eq!(a.locate(0.5), Some((3, 0.0)));
        assert_eq!(a.locate(1.0), Some((3, 1.0)));
        assert_eq!(a.locate(-1.0), Some((0, 0.0)));
        assert_eq!(a.locate(1.5), None);
    }

    #[test]
    fn single_node_table_is_constant() {
        let sys = BuiltinModel::Example2 { lambda1: 0.0 }.system();
        let grid = GridSpec {
            t_points: 1,
            x_points: vec![1],
        };
        let tab = build_table(&sys, &[-1.0], &[1.0], 1.0, &grid, &tiny_opts(), &[0.0]).unwrap();
        let (v0, _) = tab.lookup(0.0, &[-1.0]).unwrap();
        let (v1, _) = tab.lookup(1.0, &[0.7]).unwrap();
        assert_eq!(v0, v1);
        assert_eq!(v0, tab.values().to_vec());
    }

    #[test]
    fn omega_dependent_models_cannot_be_tabulated() {
        let sys = BuiltinModel::Example3.system();
        let grid = GridSpec {
            t_points: 2,
            x_points: vec![2],
        };
        assert!(build_table(&sys, &[-1.0], &[1.0], 1.0, &grid, &tiny_opts(), &[0.0]).is_err());
    }

    #[test]
    fn analytic_requires_closed_form() {
        assert!(BbarProvider::analytic(&BuiltinModel::Example1.system()).is_err());
        assert!(BbarProvider::analytic(&BuiltinModel::Example2 { lambda1: 0.0 }.system()).is_ok());
    }
}
