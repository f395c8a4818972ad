//! Trust-region refinement of a prototype and the random-perturbation
//! tolerance study.
//!
//! The optimizer works in coordinates scaled to `[0, 1]` per parameter. Each
//! step takes a forward-difference gradient, combines it with a BFGS
//! curvature estimate built from earlier gradients, moves to the dogleg
//! minimizer of that model inside the trust region (projected onto the
//! bounds) and adapts the radius from the ratio of actual to predicted
//! reduction.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{assemble_model, AntennaModel, ComponentDims, ComponentPos, DimensionSet};
use crate::scoring::{score, FrequencyResponse, Score, TargetSpec};
use crate::seed::stage_rng;
use crate::sim::{SimRequest, Simulator};
use crate::{Error, Result};

/// Smallest component width or height the tuner may produce, mm.
pub const MIN_SIZE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    W,
    H,
    X,
    Y,
}

/// Free geometric parameters of a model: `(w, h, x, y)` per component,
/// without component 1's anchored `y`, and without sizes when dimensions
/// are frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub layout: Vec<(usize, Field)>,
}

impl ParamVector {
    pub fn from_model(model: &AntennaModel, freeze_dims: bool) -> Self {
        let s = &model.space;
        let ext = s.extended();
        let mut pv = ParamVector {
            values: Vec::new(),
            lo: Vec::new(),
            hi: Vec::new(),
            layout: Vec::new(),
        };
        for (i, (d, p)) in model.dims.dims.iter().zip(&model.positions).enumerate() {
            let mut push = |f: Field, v: f64, lo: f64, hi: f64| {
                pv.layout.push((i, f));
                pv.values.push(v);
                pv.lo.push(lo);
                pv.hi.push(hi.max(lo));
            };
            if !freeze_dims {
                push(Field::W, d.width, MIN_SIZE, ext.w);
                push(Field::H, d.height, MIN_SIZE, ext.h);
            }
            push(Field::X, p.x, ext.x, ext.right() - if freeze_dims { d.width } else { MIN_SIZE });
            if i > 0 {
                push(Field::Y, p.y, ext.y, ext.top() - if freeze_dims { d.height } else { MIN_SIZE });
            }
        }
        pv
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.layout
            .iter()
            .map(|(i, f)| {
                let f = match f {
                    Field::W => "w",
                    Field::H => "h",
                    Field::X => "x",
                    Field::Y => "y",
                };
                format!("{f}{}", i + 1)
            })
            .collect()
    }

    /// Clamps into the bounds, then pulls positions back so every component
    /// stays inside the extended area with its current size.
    pub fn repair(&self, template: &AntennaModel, values: &mut [f64]) {
        for (v, (lo, hi)) in values.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*lo, *hi);
        }
        let (dims, _) = self.unpack(template, values);
        let ext = template.space.extended();
        for (k, &(i, f)) in self.layout.iter().enumerate() {
            match f {
                Field::X => values[k] = values[k].min(ext.right() - dims[i].width),
                Field::Y => values[k] = values[k].min(ext.top() - dims[i].height),
                _ => {}
            }
        }
    }

    fn unpack(&self, template: &AntennaModel, values: &[f64]) -> (Vec<ComponentDims>, Vec<ComponentPos>) {
        let mut dims = template.dims.dims.clone();
        let mut pos = template.positions.clone();
        for (&(i, f), &v) in self.layout.iter().zip(values) {
            match f {
                Field::W => dims[i].width = v,
                Field::H => dims[i].height = v,
                Field::X => pos[i].x = v,
                Field::Y => pos[i].y = v,
            }
        }
        (dims, pos)
    }

    /// The model for `values`, with component 1 re-anchored.
    pub fn to_model(&self, template: &AntennaModel, values: &[f64]) -> Result<AntennaModel> {
        let (dims, pos) = self.unpack(template, values);
        let set = DimensionSet::new(template.dims.id.clone(), dims);
        assemble_model(&template.space, &set, &pos)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustRegionConfig {
    /// Initial radius as a fraction of each parameter's bound range.
    pub initial_radius: f64,
    pub shrink: f64,
    pub grow: f64,
    pub eta_low: f64,
    pub eta_high: f64,
    pub budget: usize,
    /// Stop once the radius falls below this fraction of the initial one.
    pub min_radius: f64,
    /// Finite-difference step as a fraction of the current radius.
    pub fd_fraction: f64,
    /// Lower limit on the finite-difference step, in parameter units. Keeps
    /// differences above the simulator's geometric resolution.
    pub min_fd_step: f64,
    pub freeze_dims: bool,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        TrustRegionConfig {
            initial_radius: 0.05,
            shrink: 0.5,
            grow: 2.0,
            eta_low: 0.25,
            eta_high: 0.75,
            budget: 700,
            min_radius: 1e-3,
            fd_fraction: 0.03,
            min_fd_step: 0.0,
            freeze_dims: false,
        }
    }
}

impl TrustRegionConfig {
    pub fn check(&self) -> Result<()> {
        let ok = self.initial_radius > 0.0
            && 0.0 < self.shrink
            && self.shrink < 1.0
            && self.grow > 1.0
            && 0.0 <= self.eta_low
            && self.eta_low <= self.eta_high
            && self.budget >= 1
            && self.min_radius > 0.0
            && self.fd_fraction > 0.0
            && self.min_fd_step >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(String::from("invalid trust-region settings")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalKind {
    Start,
    Gradient,
    Step,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub eval: usize,
    pub kind: EvalKind,
    pub value: f64,
    pub best: f64,
    /// Trust radius (scaled units) when the point was evaluated.
    pub radius: f64,
    pub accepted: bool,
    pub x: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    TargetMet,
    Converged,
    Budget,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub trace: Vec<TraceEntry>,
    pub stop: StopReason,
}

/// Generic bound-constrained trust-region minimizer.
///
/// `f` evaluates a batch of points (all inside the bounds, already passed
/// through `repair`). Evaluation stops as soon as a value at or below
/// `stop_at` is found. Every evaluated point counts against the budget.
pub fn minimize<F, P>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    repair: P,
    cfg: &TrustRegionConfig,
    stop_at: Option<f64>,
) -> Result<Minimum>
where
    F: FnMut(&[Vec<f64>]) -> Result<Vec<f64>>,
    P: Fn(&mut [f64]),
{
    cfg.check()?;
    let n = x0.len();
    if cfg.budget < n + 1 {
        return Err(Error::Budget {
            budget: cfg.budget,
            needed: n + 1,
        });
    }
    let span: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (b - a).max(1e-12)).collect();
    let to_x = |z: &[f64]| -> Vec<f64> {
        let mut x: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(i, v)| (lo[i] + v * span[i]).clamp(lo[i], hi[i].max(lo[i])))
            .collect();
        repair(&mut x);
        x
    };
    let to_z = |x: &[f64]| -> Vec<f64> { x.iter().enumerate().map(|(i, v)| (v - lo[i]) / span[i]).collect() };

    let mut trace = Vec::new();
    let mut used = 0usize;
    let mut eval = |pts: Vec<Vec<f64>>, kind: EvalKind, radius: f64, best: &mut f64, trace: &mut Vec<TraceEntry>| -> Result<Vec<f64>> {
        for p in &pts {
            for (i, v) in p.iter().enumerate() {
                assert!(*v >= lo[i] - 1e-9 && *v <= hi[i] + 1e-9, "parameter {i} out of bounds");
            }
        }
        let vals = f(&pts)?;
        for (p, &v) in pts.into_iter().zip(&vals) {
            used += 1;
            if v < *best {
                *best = v;
            }
            trace.push(TraceEntry {
                eval: used,
                kind,
                value: v,
                best: *best,
                radius,
                accepted: false,
                x: p,
            });
        }
        Ok(vals)
    };

    let mut x = to_x(&to_z(x0));
    let mut best = f64::INFINITY;
    let mut fx = eval(vec![x.clone()], EvalKind::Start, cfg.initial_radius, &mut best, &mut trace)?[0];
    trace[0].accepted = true;
    let met = |v: f64| stop_at.is_some_and(|t| v <= t);
    if met(fx) {
        return Ok(Minimum {
            x,
            value: fx,
            evaluations: trace.len(),
            trace,
            stop: StopReason::TargetMet,
        });
    }

    let mut radius = cfg.initial_radius;
    // curvature estimate in scaled coordinates, refined from successive gradients
    let mut hess = identity(n);
    let mut first_update = true;
    let mut last_grad: Option<(Vec<f64>, Vec<f64>)> = None;
    // gradient at the current point, kept while the point does not move
    let mut grad: Option<Vec<f64>> = None;
    let mut grad_width = 0.0;
    // length of the last accepted move; difference widths follow it down
    let mut last_step = f64::INFINITY;
    let stop = loop {
        if radius < cfg.min_radius * cfg.initial_radius {
            break StopReason::Converged;
        }
        let needed = if grad.is_some() { 1 } else { n + 1 };
        if cfg.budget - trace.len() < needed {
            break StopReason::Budget;
        }
        let z = to_z(&x);

        // forward differences, backward where the forward point hits a bound,
        // less the second-order bias predicted by the curvature estimate
        let (g, probe) = match grad.take() {
            Some(g) => (g, None),
            None => {
                let mut pts = Vec::with_capacity(n);
                let mut widths = Vec::with_capacity(n);
                for i in 0..n {
                    let h = (cfg.fd_fraction * radius.min(last_step)).max(cfg.min_fd_step / span[i]);
                    grad_width = cfg.fd_fraction * radius.min(last_step);
                    let mut zi = z.clone();
                    zi[i] += h;
                    let mut xi = to_x(&zi);
                    if (xi[i] - x[i]).abs() < 1e-12 * span[i] {
                        zi[i] = z[i] - h;
                        xi = to_x(&zi);
                    }
                    widths.push((xi[i] - x[i]) / span[i]);
                    pts.push(xi);
                }
                let vals = eval(pts, EvalKind::Gradient, radius, &mut best, &mut trace)?;
                let g: Vec<f64> = (0..n)
                    .map(|i| {
                        if widths[i] != 0.0 {
                            (vals[i] - fx) / widths[i]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                // the best probe is the fallback when the model step fails
                let probe = vals
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .filter(|(_, &v)| v < fx)
                    .map(|(i, &v)| (trace.len() - n + i, v));
                if let Some((zp, gp)) = last_grad.take() {
                    let sv: Vec<f64> = z.iter().zip(&zp).map(|(a, b)| a - b).collect();
                    let yv: Vec<f64> = g.iter().zip(&gp).map(|(a, b)| a - b).collect();
                    let sy = dot(&sv, &yv);
                    if first_update && sy > 0.0 {
                        hess = identity(n);
                        hess.iter_mut().enumerate().for_each(|(i, r)| r[i] = dot(&yv, &yv) / sy);
                        first_update = false;
                    }
                    bfgs_update(&mut hess, &sv, &yv);
                }
                last_grad = Some((z.clone(), g.clone()));
                (g, probe)
            }
        };
        if let Some((k, v)) = probe.filter(|&(_, v)| met(v)) {
            trace[k].accepted = true;
            x = trace[k].x.clone();
            fx = v;
            break StopReason::TargetMet;
        }

        if g.iter().all(|v| *v == 0.0) {
            radius *= cfg.shrink;
            grad = Some(g);
            continue;
        }
        let step = dogleg(&hess, &g, radius);
        let zt: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a + b).collect();
        let xt = to_x(&zt);
        let sp: Vec<f64> = to_z(&xt).iter().zip(&z).map(|(a, b)| a - b).collect();
        let predicted = -(dot(&g, &sp) + 0.5 * dot(&sp, &mat_vec(&hess, &sp)));
        if !(predicted > 0.0) {
            if let Some((k, v)) = probe {
                trace[k].accepted = true;
                // a one-axis move of difference width says little about curvature
                last_grad = None;
                last_step = norm(&to_z(&trace[k].x).iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>());
                x = trace[k].x.clone();
                fx = v;
            } else {
                grad = Some(g);
            }
            radius *= cfg.shrink;
            if grad_width > cfg.fd_fraction * radius * (1.0 + 1e-12) {
                grad = None;
            }
            continue;
        }
        let ft = eval(vec![xt], EvalKind::Step, radius, &mut best, &mut trace)?[0];
        let rho = (fx - ft) / predicted;
        log::trace!(
            "radius {radius:.3e} |g| {:.3e} |s| {:.3e} predicted {predicted:.3e} actual {:.3e}",
            norm(&g),
            norm(&sp),
            fx - ft
        );
        let winner = match probe {
            Some((k, v)) if v < ft => {
                last_grad = None;
                Some(k)
            }
            _ => (ft < fx).then(|| trace.len() - 1),
        };
        if let Some(k) = winner {
            trace[k].accepted = true;
            last_step = norm(&to_z(&trace[k].x).iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>());
            x = trace[k].x.clone();
            fx = trace[k].value;
            if met(fx) {
                break StopReason::TargetMet;
            }
        } else {
            grad = Some(g);
        }
        if rho < cfg.eta_low {
            radius *= cfg.shrink;
        } else if rho > cfg.eta_high {
            radius = (radius * cfg.grow).min(1.0);
        }
        // a gradient differenced wider than the new radius allows is redone
        if grad_width > cfg.fd_fraction * radius * (1.0 + 1e-12) {
            grad = None;
        }
    };
    Ok(Minimum {
        x,
        value: fx,
        evaluations: trace.len(),
        trace,
        stop,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Solves `m x = b` for symmetric positive definite `m`.
fn cholesky_solve(m: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s = m[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = libm::sqrt(s);
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}

/// BFGS update, skipped when the curvature condition fails.
fn bfgs_update(b: &mut [Vec<f64>], s: &[f64], y: &[f64]) {
    let sy = dot(s, y);
    if !(sy > 1e-10 * norm(s) * norm(y)) {
        return;
    }
    let bs = mat_vec(b, s);
    let sbs = dot(s, &bs);
    if !(sbs > 0.0) {
        return;
    }
    for i in 0..s.len() {
        for j in 0..s.len() {
            b[i][j] += y[i] * y[j] / sy - bs[i] * bs[j] / sbs;
        }
    }
}

/// Dogleg minimizer of `g.s + s.B.s / 2` over `|s| <= radius`.
fn dogleg(b: &[Vec<f64>], g: &[f64], radius: f64) -> Vec<f64> {
    let gn = norm(g);
    let steepest = |len: f64| g.iter().map(|v| -len * v / gn).collect::<Vec<f64>>();
    let newton = cholesky_solve(b, g).map(|v| v.into_iter().map(|x| -x).collect::<Vec<f64>>());
    let Some(pb) = newton else {
        return steepest(radius);
    };
    if norm(&pb) <= radius {
        return pb;
    }
    let gbg = dot(g, &mat_vec(b, g));
    if !(gbg > 0.0) {
        return steepest(radius);
    }
    let pu: Vec<f64> = g.iter().map(|v| -v * gn * gn / gbg).collect();
    let un = norm(&pu);
    if un >= radius {
        return steepest(radius);
    }
    // walk from pu toward pb until the boundary
    let d: Vec<f64> = pb.iter().zip(&pu).map(|(a, b)| a - b).collect();
    let (a, bq, c) = (dot(&d, &d), 2.0 * dot(&pu, &d), un * un - radius * radius);
    let tau = (-bq + libm::sqrt(bq * bq - 4.0 * a * c)) / (2.0 * a);
    pu.iter().zip(&d).map(|(p, q)| p + tau * q).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub best: AntennaModel,
    pub score: Score,
    pub response: FrequencyResponse,
    pub params: ParamVector,
    pub evaluations: usize,
    pub trace: Vec<TraceEntry>,
    pub stop: StopReason,
}

/// Refines `start` over its free parameters. Stops at the budget, on
/// convergence of the radius, or as soon as a model meets the target.
pub fn optimize<S: Simulator + ?Sized>(
    start: &AntennaModel,
    cfg: &TrustRegionConfig,
    backend: &S,
    target: &TargetSpec,
    freqs: &[f64],
) -> Result<OptimizeResult> {
    target.check()?;
    let pv = ParamVector::from_model(start, cfg.freeze_dims);
    let mut responses: Vec<(Vec<f64>, FrequencyResponse)> = Vec::new();
    let objective = |pts: &[Vec<f64>]| -> Result<Vec<f64>> {
        let models = pts
            .iter()
            .map(|p| pv.to_model(start, p))
            .collect::<Result<Vec<_>>>()?;
        let reqs = models
            .iter()
            .map(|m| SimRequest::new(m, freqs))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(pts.len());
        for (p, r) in pts.iter().zip(backend.simulate_batch(&reqs)) {
            let r = r?;
            out.push(score(&r, target)?.0);
            responses.push((p.clone(), r));
        }
        Ok(out)
    };
    let repair = |v: &mut [f64]| pv.repair(start, v);
    let m = minimize(objective, &pv.values, &pv.lo, &pv.hi, repair, cfg, Some(0.0))?;
    let best = pv.to_model(start, &m.x)?;
    let response = responses
        .into_iter()
        .rev()
        .find(|(p, _)| *p == m.x)
        .map(|(_, r)| r)
        .ok_or(Error::Config(String::from("best point has no recorded response")))?;
    let mut params = pv;
    params.values = m.x;
    Ok(OptimizeResult {
        best,
        score: Score(m.value),
        response,
        params,
        evaluations: m.evaluations,
        trace: m.trace,
        stop: m.stop,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    /// Each parameter times a factor drawn from `[1 - f, 1 + f]`.
    #[default]
    Multiplicative,
    /// Each parameter plus `f` times its bound range times a draw from `[-1, 1]`.
    Additive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToleranceConfig {
    pub perturb_fraction: f64,
    pub n_runs: usize,
    pub mode: PerturbMode,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            perturb_fraction: 0.10,
            n_runs: 20,
            mode: PerturbMode::Multiplicative,
            max_attempts: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedRun {
    pub model: AntennaModel,
    pub response: FrequencyResponse,
    pub score: Score,
    /// Draws needed to get a legal model.
    pub attempts: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToleranceResult {
    pub baseline: FrequencyResponse,
    pub baseline_score: Score,
    pub runs: Vec<PerturbedRun>,
    pub passed: usize,
}

impl ToleranceResult {
    pub fn pass_fraction(&self) -> f64 {
        if self.runs.is_empty() {
            0.0
        } else {
            self.passed as f64 / self.runs.len() as f64
        }
    }
}

/// Simulates `n_runs` randomly perturbed copies of `model`. Draws that give
/// an illegal model are redrawn up to `max_attempts` times.
pub fn tolerance_study<S: Simulator + ?Sized>(
    model: &AntennaModel,
    cfg: &ToleranceConfig,
    backend: &S,
    target: &TargetSpec,
    freqs: &[f64],
) -> Result<ToleranceResult> {
    target.check()?;
    if !(cfg.perturb_fraction >= 0.0) || cfg.max_attempts == 0 {
        return Err(Error::Config(String::from("invalid tolerance settings")));
    }
    let pv = ParamVector::from_model(model, false);
    let mut rng = stage_rng(cfg.seed, "tolerance");
    let f = cfg.perturb_fraction;

    let mut models = Vec::with_capacity(cfg.n_runs);
    for run in 0..cfg.n_runs {
        let mut attempt = 0;
        let m = loop {
            attempt += 1;
            let vals: Vec<f64> = pv
                .values
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let u = if f > 0.0 { rng.gen_range(-f..=f) } else { 0.0 };
                    match cfg.mode {
                        PerturbMode::Multiplicative => v * (1.0 + u),
                        PerturbMode::Additive => v + u * (pv.hi[i] - pv.lo[i]),
                    }
                })
                .collect();
            match pv.to_model(model, &vals) {
                Ok(m) => break m,
                Err(e) if attempt < cfg.max_attempts => {
                    log::debug!("tolerance run {run}: redraw after {e}");
                }
                Err(e) => return Err(e.at_sample(run)),
            }
        };
        if attempt > 1 {
            log::info!("tolerance run {run}: legal after {attempt} draws");
        }
        models.push((m, attempt));
    }

    let mut reqs = vec![SimRequest::new(model, freqs)?];
    for (m, _) in &models {
        reqs.push(SimRequest::new(m, freqs)?);
    }
    let mut results = backend.simulate_batch(&reqs).into_iter();
    let baseline = results.next().unwrap()?;
    let baseline_score = score(&baseline, target)?;
    let mut runs = Vec::with_capacity(models.len());
    for (run, ((m, attempts), r)) in models.into_iter().zip(results).enumerate() {
        let response = r.map_err(|e| e.at_sample(run))?;
        let s = score(&response, target)?;
        runs.push(PerturbedRun {
            model: m,
            response,
            score: s,
            attempts,
        });
    }
    let passed = runs.iter().filter(|r| r.score.meets_target()).count();
    Ok(ToleranceResult {
        baseline,
        baseline_score,
        runs,
        passed,
    })
}

/// Closed-form test backend: a flat response at
/// `min(floor_db + |p - center|^2, 0.5)` dB, where `p` are the model's free
/// parameters. Against a target at `floor_db - 0.5` the score is
/// `0.5 + |p - center|^2`, minimized exactly at `center`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticBowl {
    pub center: Vec<f64>,
    pub freeze_dims: bool,
    pub floor_db: f64,
}

impl QuadraticBowl {
    pub fn new(center: Vec<f64>, freeze_dims: bool) -> Self {
        QuadraticBowl {
            center,
            freeze_dims,
            floor_db: -39.5,
        }
    }

    pub fn distance(&self, model: &AntennaModel) -> f64 {
        let p = ParamVector::from_model(model, self.freeze_dims).values;
        libm::sqrt(p.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum())
    }
}

impl Simulator for QuadraticBowl {
    fn simulate(&self, req: &SimRequest<'_>) -> Result<FrequencyResponse> {
        let d = self.distance(req.model);
        let v = (self.floor_db + d * d).min(crate::scoring::S11_SLACK_DB);
        FrequencyResponse::new(req.freqs.to_vec(), vec![v; req.freqs.len()])
    }

    fn name(&self) -> &str {
        "quadratic"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DesignSpace;
    use crate::scoring::Band;
    use crate::sim::FrequencyGrid;

    fn quad_cfg() -> TrustRegionConfig {
        TrustRegionConfig {
            budget: 300,
            ..TrustRegionConfig::default()
        }
    }

    #[test]
    fn minimizes_quadratic_in_box() {
        let target = [0.3, -1.2, 2.5];
        let f = |pts: &[Vec<f64>]| -> Result<Vec<f64>> {
            Ok(pts
                .iter()
                .map(|p| p.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect())
        };
        let m = minimize(f, &[4.0, 4.0, -4.0], &[-5.0; 3], &[5.0; 3], |_| {}, &quad_cfg(), None).unwrap();
        assert!(m.evaluations <= 300);
        for (a, b) in m.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-2, "{:?}", m.x);
        }
        assert!(m.trace.windows(2).all(|w| w[1].best <= w[0].best));
    }

    #[test]
    fn stops_on_bound_optimum() {
        // minimizer outside the box: the solution sits on the bound
        let f = |pts: &[Vec<f64>]| -> Result<Vec<f64>> { Ok(pts.iter().map(|p| (p[0] - 9.0).powi(2)).collect()) };
        let m = minimize(f, &[0.0], &[-1.0], &[2.0], |_| {}, &quad_cfg(), None).unwrap();
        assert!((m.x[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn budget_rules() {
        let f = |pts: &[Vec<f64>]| -> Result<Vec<f64>> { Ok(pts.iter().map(|p| p[0] * p[0] + p[1].abs()).collect()) };
        let small = TrustRegionConfig {
            budget: 2,
            ..TrustRegionConfig::default()
        };
        assert_eq!(
            minimize(f, &[1.0, 1.0], &[-2.0; 2], &[2.0; 2], |_| {}, &small, None).unwrap_err(),
            Error::Budget { budget: 2, needed: 3 }
        );
        let cfg = TrustRegionConfig {
            budget: 17,
            min_radius: 1e-12,
            ..TrustRegionConfig::default()
        };
        let m = minimize(f, &[1.0, 1.0], &[-2.0; 2], &[2.0; 2], |_| {}, &cfg, None).unwrap();
        assert!(m.evaluations <= 17);
        assert_eq!(m.evaluations, m.trace.len());
    }

    #[test]
    fn early_exit_when_start_meets_target() {
        let mut calls = 0;
        let f = |pts: &[Vec<f64>]| -> Result<Vec<f64>> {
            calls += pts.len();
            Ok(vec![-1.0; pts.len()])
        };
        let m = minimize(f, &[0.0, 0.0], &[-1.0; 2], &[1.0; 2], |_| {}, &quad_cfg(), Some(0.0)).unwrap();
        assert_eq!(m.stop, StopReason::TargetMet);
        assert_eq!(m.evaluations, 1);
        assert_eq!(calls, 1);
    }

    fn model() -> AntennaModel {
        let space = DesignSpace::new(30.0, 6.0);
        let dims = DimensionSet::from_pairs("t", &[(1.0, 4.0), (12.0, 1.0), (2.0, 2.0)]);
        assemble_model(
            &space,
            &dims,
            &[
                ComponentPos::new(3.0, 0.0),
                ComponentPos::new(3.5, 3.0),
                ComponentPos::new(20.0, 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn param_vector_round_trip() {
        let m = model();
        let pv = ParamVector::from_model(&m, false);
        assert_eq!(pv.len(), 11);
        assert_eq!(pv.names()[..3], ["w1", "h1", "x1"]);
        assert_eq!(pv.to_model(&m, &pv.values).unwrap(), m);
        let frozen = ParamVector::from_model(&m, true);
        assert_eq!(frozen.len(), 5);
        assert_eq!(frozen.to_model(&m, &frozen.values).unwrap(), m);

        let mut v = pv.values.clone();
        v[2] = 1e3;
        v[3] = 29.0; // w2 grows so x2 must come back
        pv.repair(&m, &mut v);
        let r = pv.to_model(&m, &v).unwrap();
        assert!(r.positions[1].x + r.dims.dims[1].width <= 31.0 + 1e-9);
    }

    #[test]
    fn zero_perturbation_reproduces_baseline() {
        let m = model();
        let target = TargetSpec::new(vec![Band::new(2.4, 2.5, -6.0)]).unwrap();
        let freqs = FrequencyGrid::default().freqs().unwrap();
        let cfg = ToleranceConfig {
            perturb_fraction: 0.0,
            n_runs: 4,
            ..ToleranceConfig::default()
        };
        let res = tolerance_study(&m, &cfg, &crate::sim::Surrogate::default(), &target, &freqs).unwrap();
        assert!(res.runs.iter().all(|r| r.response == res.baseline && r.model == m));
        let cfg = ToleranceConfig {
            perturb_fraction: 0.1,
            ..cfg
        };
        let a = tolerance_study(&m, &cfg, &crate::sim::Surrogate::default(), &target, &freqs).unwrap();
        let b = tolerance_study(&m, &cfg, &crate::sim::Surrogate::default(), &target, &freqs).unwrap();
        assert_eq!(a, b);
        assert!(a.runs.iter().any(|r| r.model != m));
    }
}

