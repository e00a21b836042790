//! Data-driven security index.
//!
//! Every coefficient vector `g ∈ R^d` stands for the data window `W g`, with
//! `W = [Up; Uf; Yp; Yf]`. All constraints of the index problem (zero rows,
//! the shift relation `H g(k+1) = T g(k)`, the anchor `[Up; Yp] g(0) = 0`) only
//! see `W g`, and `H`, `T` are row selections of `W`. Hence every set in the
//! `V`/`R` recursions contains `ker W` and is determined by its image in the
//! window space `Im W`. [`DataModel`] runs the recursions in orthonormal
//! coordinates of `Im W` (dimension `rank W`) and lifts results back to
//! `R^d` on request; reported dimensions always refer to `R^d`.
//!
//! The recursion for the reachable set uses the subspace sum for
//! `R_t ∪ Post(R_t)`. A linear map vanishes on a span iff it vanishes on each
//! generator, so feasibility and `s(Γ)` are the same under either reading.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hankel::HankelBlocks;
use crate::index::{level_search, IndexResult, IndexValue};
use crate::linalg;
use crate::linsys::{AttackSignal, ComponentLayout, Role};
use crate::model_index::fmt_set;
use crate::subspace::{self, Subspace};

/// `Γ` and its actuator/sensor split.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GammaSets {
    /// Components (0-based, sorted, deduplicated).
    pub gamma: Vec<usize>,
    /// Attacked actuators (0-based input channels).
    pub gamma_u: Vec<usize>,
    /// Actuators outside `Γ`.
    pub gamma_u_bar: Vec<usize>,
    /// Attacked unprotected sensors (0-based output channels).
    pub gamma_y: Vec<usize>,
    /// Unprotected sensors outside `Γ`.
    pub gamma_y_bar: Vec<usize>,
}

impl GammaSets {
    pub fn new(layout: &ComponentLayout, gamma: &[usize]) -> Result<Self> {
        let mut g = gamma.to_vec();
        g.sort_unstable();
        g.dedup();
        for &j in &g {
            layout.role(j)?;
        }
        let gamma_u: Vec<usize> = g.iter().copied().filter(|&j| j < layout.m()).collect();
        let gamma_y: Vec<usize> = g.iter().filter(|&&j| j >= layout.m()).map(|&j| j - layout.m()).collect();
        let gamma_u_bar = (0..layout.m()).filter(|c| !gamma_u.contains(c)).collect();
        let gamma_y_bar = (0..layout.unprotected()).filter(|s| !gamma_y.contains(s)).collect();
        Ok(Self {
            gamma: g,
            gamma_u,
            gamma_u_bar,
            gamma_y,
            gamma_y_bar,
        })
    }

    pub fn contains(&self, j: usize) -> bool {
        self.gamma.binary_search(&j).is_ok()
    }
}

/// Dimension history of one fixed-point recursion (dimensions in `R^d`).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FixedPointTrace {
    pub dims: Vec<usize>,
    /// First `t` with `X_{t+1} = X_t`.
    pub steps_to_converge: usize,
}

/// Reduced-coordinate results of the two recursions for one `Γ`.
#[derive(Clone, Debug)]
pub struct GammaAnalysis {
    pub gamma: GammaSets,
    pub v_inf: Subspace,
    pub r_inf: Subspace,
    pub v_trace: FixedPointTrace,
    pub r_trace: FixedPointTrace,
    /// `R_0`, the anchored part of `V_∞`.
    pub r0: Subspace,
}

/// Window-coordinate realization of a data set.
#[derive(Clone, Debug)]
pub struct DataModel {
    blocks: HankelBlocks,
    /// Orthonormal basis of the channel-normalized window space (rows of `W`).
    q: DMatrix<f64>,
    /// Per-row normalization applied to `W` before factoring.
    row_scale: DVector<f64>,
    /// `g = v1 * diag(1 / sigma) * c`.
    v1: DMatrix<f64>,
    sigma: DVector<f64>,
    /// Orthonormal basis of `ker W`.
    w_kernel: DMatrix<f64>,
    /// One-step shift on window coordinates: `H P = T` with `P = H⁺T`.
    shift: DMatrix<f64>,
    shift_norm: f64,
    /// Orthonormal basis of `ker H` (the newest input sample).
    fresh: DMatrix<f64>,
}

impl DataModel {
    pub fn new(blocks: &HankelBlocks) -> Result<Self> {
        let w = blocks.stacked();
        let (rows, d) = w.shape();
        let row_scale = channel_scales(blocks);
        let mut ws = w.clone();
        for (r, s) in row_scale.iter().enumerate() {
            ws.row_mut(r).scale_mut(*s);
        }
        let svd = linalg::svd(&ws);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let thr = linalg::rank_threshold(rows, d, smax);
        let rank = svd.singular_values.iter().filter(|&&s| s > thr).count();
        if rank == 0 {
            return Err(Error::Numerical("data matrix is numerically zero".into()));
        }
        let q = svd.u.columns(0, rank).into_owned();
        let v1 = svd.v_t.rows(0, rank).transpose();
        let sigma = svd.singular_values.rows(0, rank).into_owned();
        let w_kernel = linalg::null_space(&v1.transpose(), Some(1.0));

        let (h_rows, t_rows) = shift_rows(blocks);
        let hq = linalg::select_rows(&q, &h_rows);
        let tq = linalg::select_rows(&q, &t_rows);
        let shift = linalg::min_norm_solve(&hq, &tq);
        let shift_norm = linalg::spectral_norm(&shift);
        let fresh = linalg::null_space(&hq, Some(1.0));
        let mismatch = linalg::max_abs(&(&hq * &shift - &tq));
        if mismatch > subspace::containment_threshold(hq.nrows(), rank) || fresh.ncols() != blocks.m() {
            log::warn!(
                "data window space is not shift-consistent (residual {mismatch:.1e}, {} free input directions for {} inputs); \
                 the input is probably not persistently exciting",
                fresh.ncols(),
                blocks.m()
            );
        }
        Ok(Self {
            blocks: blocks.clone(),
            q,
            row_scale,
            v1,
            sigma,
            w_kernel,
            shift,
            shift_norm,
            fresh,
        })
    }

    pub fn blocks(&self) -> &HankelBlocks {
        &self.blocks
    }
    pub fn layout(&self) -> &ComponentLayout {
        &self.blocks.layout
    }
    /// `rank W`: the dimension of the coordinates the recursions run in.
    pub fn rank(&self) -> usize {
        self.q.ncols()
    }
    /// State dimension implied by the data, `rank W - 2 L m`; exact when the
    /// input is persistently exciting and the plant is minimal.
    pub fn state_dim_estimate(&self) -> usize {
        self.rank().saturating_sub(2 * self.blocks.l * self.blocks.m())
    }
    /// `dim ker W`, added to every reduced dimension when reporting in `R^d`.
    pub fn nullity(&self) -> usize {
        self.blocks.d - self.rank()
    }

    fn q_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        linalg::select_rows(&self.q, rows)
    }

    /// Rows of `W` holding the future samples of output channel `s`.
    fn future_output_rows(&self, s: usize) -> Vec<usize> {
        let (m, p, l) = (self.blocks.m(), self.blocks.p(), self.blocks.l);
        (l..2 * l).map(|tau| 2 * l * m + tau * p + s).collect()
    }

    fn future_input_rows(&self, c: usize) -> Vec<usize> {
        let (m, l) = (self.blocks.m(), self.blocks.l);
        (l..2 * l).map(|tau| tau * m + c).collect()
    }

    fn past_rows(&self) -> Vec<usize> {
        let (m, p, l) = (self.blocks.m(), self.blocks.p(), self.blocks.l);
        (0..l * m).chain((0..l * p).map(|r| 2 * l * m + r)).collect()
    }

    /// `L^f_j` in window coordinates.
    pub fn selector_rows(&self, j: usize) -> Result<DMatrix<f64>> {
        Ok(match self.layout().role(j)? {
            Role::Actuator(c) => self.q_rows(&self.future_input_rows(c)),
            Role::Sensor(s) => self.q_rows(&self.future_output_rows(s)),
        })
    }

    /// `V_0`: zero future for protected sensors and every channel outside `Γ`.
    fn v0(&self, gs: &GammaSets) -> Subspace {
        let layout = self.layout();
        let mut rows = Vec::new();
        for s in layout.protected_outputs() {
            rows.extend(self.future_output_rows(s));
        }
        for &c in &gs.gamma_u_bar {
            rows.extend(self.future_input_rows(c));
        }
        for &s in &gs.gamma_y_bar {
            rows.extend(self.future_output_rows(s));
        }
        if rows.is_empty() {
            return Subspace::full(self.rank());
        }
        Subspace::kernel_scaled(&self.q_rows(&rows), 1.0)
    }

    fn lift_dim(&self, reduced: usize) -> usize {
        reduced + self.nullity()
    }

    /// `V_∞` and its trace in reduced coordinates.
    fn v_recursion(&self, gs: &GammaSets) -> Result<(Subspace, FixedPointTrace)> {
        let mut v = self.v0(gs);
        let mut dims = vec![self.lift_dim(v.dim())];
        let cap = self.blocks.d;
        let mut steps = cap;
        for t in 0..cap {
            // V_t ∩ Pre(V_t) equals V_0 ∩ Pre(V_t) because the chain is
            // nested, and keeps the computed chain nested too.
            let next = self.pre_within(&v, &v);
            dims.push(self.lift_dim(next.dim()));
            let stable = next.dim() == v.dim();
            v = next;
            if stable {
                steps = t;
                break;
            }
        }
        Ok((v, FixedPointTrace { dims, steps_to_converge: steps }))
    }

    /// `within ∩ Pre(V)`. A window `g` has a successor in `V` iff
    /// `P g ∈ V + ker H`.
    fn pre_within(&self, v: &Subspace, within: &Subspace) -> Subspace {
        if within.is_zero() {
            return within.clone();
        }
        let target = Subspace::span_scaled(&linalg::hcat(v.basis(), &self.fresh), 1.0);
        let constrained = target.reject(&(&self.shift * within.basis()));
        let k = linalg::null_space(&constrained, Some(self.shift_norm));
        Subspace::from_orthonormal(within.basis() * k)
    }

    /// `Post(R) = P R + ker H`.
    fn post(&self, r: &Subspace) -> Subspace {
        let img = &self.shift * r.basis();
        Subspace::span_scaled(&linalg::hcat(&img, &self.fresh), self.shift_norm.max(1.0))
    }

    fn r0(&self, v_inf: &Subspace) -> Result<Subspace> {
        v_inf.intersect_kernel(&self.q_rows(&self.past_rows()), 1.0)
    }

    /// `R_∞` (and `R_0`) inside a given `V_∞`, reduced coordinates.
    fn r_recursion(&self, v_inf: &Subspace) -> Result<(Subspace, Subspace, FixedPointTrace)> {
        let r0 = self.r0(v_inf)?;
        let mut r = r0.clone();
        let mut dims = vec![self.lift_dim(r.dim())];
        let cap = self.blocks.d;
        let mut steps = cap;
        for t in 0..cap {
            // V∞ ∩ (R + Post(R)) = R + (V∞ ∩ Post(R)) because R ⊆ V∞.
            let grown = self.post(&r).intersect(v_inf)?;
            let next = r.sum(&grown)?;
            dims.push(self.lift_dim(next.dim()));
            let stable = next.dim() == r.dim();
            r = next;
            if stable {
                steps = t;
                break;
            }
        }
        Ok((r, r0, FixedPointTrace { dims, steps_to_converge: steps }))
    }

    /// Both recursions for `Γ`.
    pub fn analyze(&self, gamma: &[usize]) -> Result<GammaAnalysis> {
        let gs = GammaSets::new(self.layout(), gamma)?;
        let (v_inf, v_trace) = self.v_recursion(&gs)?;
        let (r_inf, r0, r_trace) = self.r_recursion(&v_inf)?;
        Ok(GammaAnalysis {
            gamma: gs,
            v_inf,
            r_inf,
            v_trace,
            r_trace,
            r0,
        })
    }

    /// `s(Γ) = dim(L^f_i R_∞(Γ))`.
    pub fn s_value(&self, r_inf: &Subspace, i: usize) -> Result<usize> {
        mapped_dim_unit(&self.selector_rows(i)?, r_inf)
    }

    /// Lifts a reduced subspace to `R^d` (adds `ker W`).
    pub fn lift(&self, reduced: &Subspace) -> Subspace {
        let mut g = self.v1.clone();
        for (k, s) in self.sigma.iter().enumerate() {
            g.column_mut(k).unscale_mut(*s);
        }
        let part = Subspace::span_scaled(&(g * reduced.basis()), 0.0);
        Subspace::span_scaled(&linalg::hcat(part.basis(), &self.w_kernel), 1.0)
    }

    /// Reduced coordinates of a subspace of `R^d` (drops `ker W`).
    pub fn reduce(&self, full: &Subspace) -> Result<Subspace> {
        if full.ambient() != self.blocks.d {
            return Err(crate::error::dim_err("subspace ambient dimension", self.blocks.d, full.ambient()));
        }
        let mut c = self.v1.transpose() * full.basis();
        for (k, s) in self.sigma.iter().enumerate() {
            c.row_mut(k).scale_mut(*s);
        }
        let scale = self.sigma.iter().cloned().fold(0.0, f64::max);
        Ok(Subspace::span_scaled(&c, scale))
    }

    /// Coefficient vector `g` of reduced coordinates `c`.
    pub fn coefficients(&self, c: &DVector<f64>) -> DVector<f64> {
        let scaled = c.component_div(&self.sigma);
        &self.v1 * scaled
    }

    /// Data window (unnormalized rows of `W`) of reduced coordinates `c`.
    pub fn window(&self, c: &DVector<f64>) -> DVector<f64> {
        (&self.q * c).component_div(&self.row_scale)
    }
}

/// `rank(L * basis)` for an `L` whose rows come from an orthonormal basis, so
/// the natural scale is one.
fn mapped_dim_unit(l: &DMatrix<f64>, v: &Subspace) -> Result<usize> {
    if l.ncols() != v.ambient() {
        return Err(crate::error::dim_err("selector columns", v.ambient(), l.ncols()));
    }
    if v.is_zero() || l.nrows() == 0 {
        return Ok(0);
    }
    Ok(linalg::rank_scaled(&(l * v.basis()), 1.0))
}

/// Reciprocal RMS of each channel, repeated over every row of `W` for that channel.
fn channel_scales(b: &HankelBlocks) -> DVector<f64> {
    let (m, p, l) = (b.m(), b.p(), b.l);
    let rms = |rows: &DMatrix<f64>, stride: usize, c: usize| {
        let mut acc = 0.0;
        let mut cnt = 0usize;
        let mut r = c;
        while r < rows.nrows() {
            acc += rows.row(r).norm_squared();
            cnt += rows.ncols();
            r += stride;
        }
        let v = (acc / cnt.max(1) as f64).sqrt();
        if v > 0.0 && v.is_finite() {
            1.0 / v
        } else {
            1.0
        }
    };
    let su: Vec<f64> = (0..m).map(|c| rms(&b.up, m, c)).collect();
    let sy: Vec<f64> = (0..p).map(|s| rms(&b.yp, p, s)).collect();
    let mut out = DVector::zeros(2 * l * (m + p));
    for tau in 0..2 * l {
        for c in 0..m {
            out[tau * m + c] = su[c];
        }
        for s in 0..p {
            out[2 * l * m + tau * p + s] = sy[s];
        }
    }
    out
}

/// Rows of `W` forming `H` (lags `0..2L-1`) and `T` (lags `1..2L`), in the
/// same order as [`HankelBlocks::h`] / [`HankelBlocks::t`].
fn shift_rows(b: &HankelBlocks) -> (Vec<usize>, Vec<usize>) {
    let (m, p, l) = (b.m(), b.p(), b.l);
    let lags = 2 * l - 1;
    let pick = |first: usize| -> Vec<usize> {
        let u = (first * m..(first + lags) * m).collect::<Vec<_>>();
        let y = (first * p..(first + lags) * p).map(|r| 2 * l * m + r);
        u.into_iter().chain(y).collect()
    };
    (pick(0), pick(1))
}

/// Lifted view of a [`GammaAnalysis`] in `R^d`.
#[derive(Clone, Debug)]
pub struct LiftedAnalysis {
    pub v_inf: Subspace,
    pub r_inf: Subspace,
    pub v_trace: FixedPointTrace,
    pub r_trace: FixedPointTrace,
}

/// Greedy-search trace entry: the set after each round and its `s` value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GreedyStep {
    pub gamma: Vec<usize>,
    pub s: usize,
}

/// Index computations on one data set, with an optional memo of `R_∞(Γ)`
/// shared across components.
pub struct DataIndexer {
    model: DataModel,
    cache: Option<Mutex<HashMap<Vec<usize>, Arc<Subspace>>>>,
}

impl DataIndexer {
    pub fn new(blocks: &HankelBlocks) -> Result<Self> {
        Ok(Self {
            model: DataModel::new(blocks)?,
            cache: None,
        })
    }

    /// Memoize `R_∞(Γ)` across calls. Per-component timings then depend on
    /// evaluation order.
    pub fn with_cache(mut self) -> Self {
        self.cache = Some(Mutex::new(HashMap::new()));
        self
    }

    pub fn model(&self) -> &DataModel {
        &self.model
    }

    pub fn layout(&self) -> &ComponentLayout {
        self.model.layout()
    }

    fn r_inf(&self, gamma: &[usize]) -> Result<Arc<Subspace>> {
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.lock().expect("cache poisoned").get(gamma) {
                return Ok(hit.clone());
            }
        }
        let r = Arc::new(self.model.analyze(gamma)?.r_inf);
        if let Some(cache) = &self.cache {
            cache.lock().expect("cache poisoned").insert(gamma.to_vec(), r.clone());
        }
        Ok(r)
    }

    /// `s(Γ)` for target `i`.
    pub fn s_value(&self, gamma: &[usize], i: usize) -> Result<usize> {
        let mut g = gamma.to_vec();
        g.sort_unstable();
        g.dedup();
        let r = self.r_inf(&g)?;
        self.model.s_value(&r, i)
    }

    pub fn feasible(&self, gamma: &[usize], i: usize) -> Result<bool> {
        if !gamma.contains(&i) {
            return Err(Error::InvalidArgument(format!("component {i} is not in the attack set")));
        }
        Ok(self.s_value(gamma, i)? >= 1)
    }

    /// Exhaustive level-wise search for `ρ(i)`.
    pub fn rho(&self, i: usize, max_card: Option<usize>) -> Result<IndexResult> {
        let start = Instant::now();
        self.layout().role(i)?;
        let (value, witness_set) = level_search(self.layout().len(), i, max_card, |g| self.feasible(g, i))?;
        Ok(IndexResult {
            component: i,
            value,
            witness_set,
            witness_attack: None,
            elapsed: start.elapsed().as_secs_f64(),
        })
    }

    /// Greedy upper bound `ρ̄(i)`; also returns the growth trace.
    pub fn rho_upper_traced(&self, i: usize) -> Result<(IndexResult, Vec<GreedyStep>)> {
        let start = Instant::now();
        let count = self.layout().len();
        self.layout().role(i)?;
        let mut gamma = vec![i];
        let mut s = self.s_value(&gamma, i)?;
        let mut trace = vec![GreedyStep { gamma: gamma.clone(), s }];
        while s == 0 && gamma.len() < count {
            let mut best: Option<(usize, usize)> = None;
            for j in (0..count).filter(|j| !gamma.contains(j)) {
                let mut cand = gamma.clone();
                cand.push(j);
                cand.sort_unstable();
                let sj = self.s_value(&cand, i)?;
                // strict '>' keeps the smallest j among ties
                if best.is_none_or(|(_, bs)| sj > bs) {
                    best = Some((j, sj));
                }
            }
            let (j, sj) = best.expect("at least one candidate remains");
            gamma.push(j);
            gamma.sort_unstable();
            s = sj;
            trace.push(GreedyStep { gamma: gamma.clone(), s });
        }
        let (value, witness_set) = if s >= 1 {
            (IndexValue::Finite(gamma.len()), Some(gamma))
        } else {
            (IndexValue::Infinite, None)
        };
        Ok((
            IndexResult {
                component: i,
                value,
                witness_set,
                witness_attack: None,
                elapsed: start.elapsed().as_secs_f64(),
            },
            trace,
        ))
    }

    pub fn rho_upper(&self, i: usize) -> Result<IndexResult> {
        Ok(self.rho_upper_traced(i)?.0)
    }

    /// Lifted `V_∞`, `R_∞` and traces for `Γ`.
    pub fn analyze_lifted(&self, gamma: &[usize]) -> Result<LiftedAnalysis> {
        let a = self.model.analyze(gamma)?;
        Ok(LiftedAnalysis {
            v_inf: self.model.lift(&a.v_inf),
            r_inf: self.model.lift(&a.r_inf),
            v_trace: a.v_trace,
            r_trace: a.r_trace,
        })
    }

    /// Builds a concrete coefficient sequence and the attack it encodes.
    pub fn witness(&self, gamma: &[usize], i: usize, horizon: Option<usize>) -> Result<WitnessSequence> {
        synthesize(&self.model, gamma, i, horizon)
    }
}

/// Coefficient sequence satisfying the index constraints, with the attack
/// reconstructed from it.
#[derive(Clone, Debug)]
pub struct WitnessSequence {
    /// Column `k` is `g(k) ∈ R^d`, `k = 0..=K`.
    pub g: DMatrix<f64>,
    pub gamma: GammaSets,
    pub component: usize,
    /// Step at which component `i` is active in the future window.
    pub active_step: usize,
    /// Reconstructed input `ũ(0..K+L)` (columns are time steps).
    pub u: DMatrix<f64>,
    /// Reconstructed output `ỹ(0..K+L)`.
    pub y: DMatrix<f64>,
    /// `ã = col(ũ, -ỹ)` in the `m + p` attack layout.
    pub attack: AttackSignal,
}

/// Constraint residuals of a coefficient sequence, relative to the largest
/// window magnitude.
#[derive(Clone, Copy, Debug, Default)]
pub struct WitnessResiduals {
    /// `[Up; Yp] g(0)`
    pub anchor: f64,
    /// `max_k ‖H g(k+1) - T g(k)‖_∞`
    pub shift: f64,
    /// `max_k ‖Y^f_S g(k)‖_∞`
    pub protected: f64,
    /// `max_k ‖L^f_j g(k)‖_∞` over components outside `Γ`.
    pub outside: f64,
    /// `‖L^f_i g(k*)‖_∞`
    pub active: f64,
}

impl WitnessResiduals {
    pub fn max_violation(&self) -> f64 {
        self.anchor.max(self.shift).max(self.protected).max(self.outside)
    }
}

impl WitnessSequence {
    pub fn horizon(&self) -> usize {
        self.g.ncols() - 1
    }

    /// Re-evaluates every constraint on the raw data blocks.
    pub fn residuals(&self, blocks: &HankelBlocks) -> Result<WitnessResiduals> {
        let w = blocks.stacked();
        if self.g.nrows() != blocks.d {
            return Err(crate::error::dim_err("witness coefficient length", blocks.d, self.g.nrows()));
        }
        let windows = &w * &self.g;
        let scale = linalg::max_abs(&windows).max(f64::MIN_POSITIVE);
        let inf = |m: &[f64]| m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) / scale;
        let g0 = self.g.column(0).into_owned();
        let past = linalg::vstack(&[&blocks.up, &blocks.yp], blocks.d);
        let anchor = inf((&past * &g0).as_slice());
        let kk = self.g.ncols();
        let shift = if kk > 1 {
            inf((&blocks.h * self.g.columns(1, kk - 1) - &blocks.t * self.g.columns(0, kk - 1)).as_slice())
        } else {
            0.0
        };
        let protected = inf((blocks.protected_rows() * &self.g).as_slice());
        let mut outside = 0.0f64;
        for j in blocks.layout.components().filter(|&j| !self.gamma.contains(j)) {
            outside = outside.max(inf((blocks.selector(j)? * &self.g).as_slice()));
        }
        let sel_i = blocks.selector(self.component)?;
        let active = inf((sel_i * self.g.column(self.active_step)).as_slice());
        Ok(WitnessResiduals {
            anchor,
            shift,
            protected,
            outside,
            active,
        })
    }
}

/// Default witness horizon: the reachable-set convergence step plus `2L`.
pub fn default_witness_horizon(r_steps: usize, l: usize) -> usize {
    r_steps + 2 * l
}

fn synthesize(model: &DataModel, gamma: &[usize], i: usize, horizon: Option<usize>) -> Result<WitnessSequence> {
    let layout = *model.layout();
    let analysis = model.analyze(gamma)?;
    if !analysis.gamma.contains(i) {
        return Err(Error::InvalidArgument(format!("component {i} is not in the attack set")));
    }
    let sel = model.selector_rows(i)?;
    if mapped_dim_unit(&sel, &analysis.r_inf)? == 0 {
        return Err(Error::Infeasible(format!(
            "no data trajectory on {} activates {}",
            fmt_set(&layout, &analysis.gamma.gamma),
            layout.label(i)
        )));
    }
    let v_inf = &analysis.v_inf;
    let shift = &model.shift;
    let fresh = &model.fresh;
    let scale = model.shift_norm.max(1.0);

    // Chain space: columns are stacked sequences c(0..=k) with c(0) in R_0 and
    // c(t+1) = P c(t) + E ν(t) in V∞. Grow until component i moves.
    let r_dim = model.rank();
    let mut chain: DMatrix<f64> = analysis.r0.basis().clone();
    let mut k = 0usize;
    let limit = analysis.r_trace.steps_to_converge + model.blocks.d + 1;
    loop {
        let last = chain.rows(k * r_dim, r_dim).into_owned();
        if linalg::rank_scaled(&(&sel * &last), 1.0) > 0 {
            break;
        }
        if k >= limit || chain.ncols() == 0 {
            return Err(Error::Numerical(format!(
                "no chain activating {} within {limit} steps",
                layout.label(i)
            )));
        }
        let step = linalg::hcat(&(shift * &last), fresh);
        let ker = linalg::null_space(&v_inf.reject(&step), Some(scale));
        let (alpha, nu) = (ker.rows(0, chain.ncols()).into_owned(), ker.rows(chain.ncols(), fresh.ncols()).into_owned());
        let mut next = DMatrix::zeros(chain.nrows() + r_dim, ker.ncols());
        next.rows_mut(0, chain.nrows()).copy_from(&(&chain * &alpha));
        next.rows_mut(chain.nrows(), r_dim).copy_from(&(shift * &last * &alpha + fresh * &nu));
        chain = linalg::range_space(&next, Some(1.0));
        k += 1;
    }
    let active_step = k;
    let last = chain.rows(k * r_dim, r_dim).into_owned();
    let w = linalg::svd(&(&sel * &last)).v_t.row(0).transpose();
    let seq = &chain * w;

    let r_steps = analysis.r_trace.steps_to_converge;
    let horizon = horizon
        .unwrap_or_else(|| default_witness_horizon(r_steps, model.blocks.l))
        .max(active_step);
    let mut cs: Vec<DVector<f64>> = (0..=active_step)
        .map(|t| seq.rows(t * r_dim, r_dim).into_owned())
        .collect();
    // Forward extension inside V∞ with minimum-norm fresh inputs.
    let e_out = v_inf.reject(fresh);
    while cs.len() <= horizon {
        let pc = shift * cs.last().expect("non-empty");
        let rhs = -v_inf.reject(&DMatrix::from_column_slice(pc.len(), 1, pc.as_slice()));
        let nu = linalg::min_norm_solve(&e_out, &rhs);
        cs.push(pc + fresh * nu.column(0));
    }
    let peak = cs.iter().map(|c| model.window(c).amax()).fold(0.0, f64::max);
    if peak > 0.0 {
        for c in cs.iter_mut() {
            c.unscale_mut(peak);
        }
    }

    let d = model.blocks.d;
    let mut g = DMatrix::zeros(d, cs.len());
    for (t, c) in cs.iter().enumerate() {
        g.set_column(t, &model.coefficients(c));
    }
    let (m, p, l) = (layout.m(), layout.p(), model.blocks.l);
    let steps = horizon + l;
    let mut u = DMatrix::zeros(m, steps);
    let mut y = DMatrix::zeros(p, steps);
    for t in 0..steps {
        let (k_src, lag) = if t <= horizon { (t, l) } else { (horizon, l + t - horizon) };
        let win = model.window(&cs[k_src]);
        for c in 0..m {
            u[(c, t)] = win[lag * m + c];
        }
        for s in 0..p {
            y[(s, t)] = win[2 * l * m + lag * p + s];
        }
    }
    let mut a = DMatrix::zeros(m + p, steps);
    a.rows_mut(0, m).copy_from(&u);
    for s in 0..layout.unprotected() {
        let col = layout.attack_column(m + s)?;
        for t in 0..steps {
            a[(col, t)] = -y[(s, t)];
        }
    }
    let attack = AttackSignal::new(a, &layout)?;
    Ok(WitnessSequence {
        g,
        gamma: analysis.gamma,
        component: i,
        active_step,
        u,
        y,
        attack,
    })
}

/// `V_∞(Γ)` in `R^d` with its dimension trace.
pub fn v_infinity(blocks: &HankelBlocks, gamma: &[usize]) -> Result<(Subspace, FixedPointTrace)> {
    let model = DataModel::new(blocks)?;
    let gs = GammaSets::new(model.layout(), gamma)?;
    let (v, trace) = model.v_recursion(&gs)?;
    Ok((model.lift(&v), trace))
}

/// `R_∞(Γ)` in `R^d` for a `V_∞` given in `R^d`.
pub fn r_infinity(blocks: &HankelBlocks, vinf: &Subspace) -> Result<(Subspace, FixedPointTrace)> {
    let model = DataModel::new(blocks)?;
    let reduced = model.reduce(vinf)?;
    let (r, _, trace) = model.r_recursion(&reduced)?;
    Ok((model.lift(&r), trace))
}

/// Whether some data trajectory supported in `Γ` activates component `i`.
pub fn data_feasible(blocks: &HankelBlocks, gamma: &[usize], i: usize) -> Result<bool> {
    DataIndexer::new(blocks)?.feasible(gamma, i)
}

/// Exhaustive `ρ(i)`.
pub fn rho(blocks: &HankelBlocks, i: usize, max_card: Option<usize>) -> Result<IndexResult> {
    DataIndexer::new(blocks)?.rho(i, max_card)
}

/// Greedy `ρ̄(i)`.
pub fn rho_upper(blocks: &HankelBlocks, i: usize) -> Result<IndexResult> {
    DataIndexer::new(blocks)?.rho_upper(i)
}

pub fn synthesize_data_witness(
    blocks: &HankelBlocks,
    gamma: &[usize],
    i: usize,
    horizon: Option<usize>,
) -> Result<WitnessSequence> {
    synthesize(&DataModel::new(blocks)?, gamma, i, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hankel::build_blocks;
    use crate::linsys::{random_excitation, simulate_attacked, LtiSystem};

    fn scalar(nu: usize) -> (LtiSystem, HankelBlocks) {
        let sys = LtiSystem::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let layout = ComponentLayout::for_system(&sys, nu).unwrap();
        let ex = random_excitation(&sys, 40, 3, 1).unwrap();
        let blocks = build_blocks(&ex.trajectory, 1, &layout).unwrap();
        (sys, blocks)
    }

    fn two_state() -> (LtiSystem, HankelBlocks) {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 0.7]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        let layout = ComponentLayout::for_system(&sys, 0).unwrap();
        let ex = random_excitation(&sys, 80, 6, 3).unwrap();
        (sys, build_blocks(&ex.trajectory, 2, &layout).unwrap())
    }

    #[test]
    fn gamma_sets_split_roles() {
        let layout = ComponentLayout::new(2, 3, 1).unwrap();
        let gs = GammaSets::new(&layout, &[3, 0, 3]).unwrap();
        assert_eq!(gs.gamma, vec![0, 3]);
        assert_eq!(gs.gamma_u, vec![0]);
        assert_eq!(gs.gamma_u_bar, vec![1]);
        assert_eq!(gs.gamma_y, vec![1]);
        assert_eq!(gs.gamma_y_bar, vec![0]);
        assert!(GammaSets::new(&layout, &[4]).is_err());
    }

    #[test]
    fn scalar_plant_needs_actuator_and_sensor() {
        let (_, blocks) = scalar(0);
        let idx = DataIndexer::new(&blocks).unwrap();
        assert!(!idx.feasible(&[0], 0).unwrap());
        assert!(!idx.feasible(&[1], 1).unwrap());
        assert!(idx.feasible(&[0, 1], 0).unwrap());
        assert_eq!(idx.rho(0, None).unwrap().value, IndexValue::Finite(2));
        assert_eq!(idx.rho(1, None).unwrap().value, IndexValue::Finite(2));
    }

    #[test]
    fn protected_sensor_blocks_every_attack() {
        let (_, blocks) = scalar(1);
        let idx = DataIndexer::new(&blocks).unwrap();
        let r = idx.rho(0, None).unwrap();
        assert_eq!(r.value, IndexValue::Infinite);
        assert!(r.witness_set.is_none());
        assert!(matches!(idx.witness(&[0], 0, None), Err(Error::Infeasible(_))));
    }

    #[test]
    fn feasibility_requires_target_in_gamma() {
        let (_, blocks) = scalar(0);
        let idx = DataIndexer::new(&blocks).unwrap();
        assert!(matches!(idx.feasible(&[0], 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn traces_are_monotone_and_nested() {
        let (_, blocks) = two_state();
        let idx = DataIndexer::new(&blocks).unwrap();
        for gamma in [vec![0], vec![0, 1], vec![0, 2], vec![0, 1, 2]] {
            let a = idx.analyze_lifted(&gamma).unwrap();
            assert!(a.v_trace.dims.windows(2).all(|w| w[1] <= w[0]), "{:?}", a.v_trace);
            assert!(a.r_trace.dims.windows(2).all(|w| w[1] >= w[0]), "{:?}", a.r_trace);
            assert!(a.v_trace.steps_to_converge <= blocks.d);
            assert!(a.v_inf.contains(&a.r_inf).unwrap());
            assert_eq!(*a.v_trace.dims.last().unwrap(), a.v_inf.dim());
            assert_eq!(*a.r_trace.dims.last().unwrap(), a.r_inf.dim());
        }
    }

    #[test]
    fn kernel_of_data_matrix_lies_in_every_fixed_point() {
        let (_, blocks) = two_state();
        let idx = DataIndexer::new(&blocks).unwrap();
        let a = idx.analyze_lifted(&[0]).unwrap();
        assert!(a.r_inf.dim() >= idx.model().nullity());
        let ker = Subspace::kernel(&blocks.stacked());
        assert!(a.r_inf.contains(&ker).unwrap());
    }

    #[test]
    fn witness_satisfies_constraints_and_replays_silently() {
        let (sys, blocks) = two_state();
        let idx = DataIndexer::new(&blocks).unwrap();
        let layout = *idx.layout();
        for i in layout.components() {
            let r = idx.rho(i, None).unwrap();
            let Some(g) = r.witness_set else { continue };
            let w = idx.witness(&g, i, None).unwrap();
            let res = w.residuals(&blocks).unwrap();
            assert!(res.max_violation() < 1e-9, "{res:?}");
            assert!(res.active > 1e-3);
            let steps = w.attack.len();
            let y = simulate_attacked(&sys, &layout, &DVector::zeros(2), &DMatrix::zeros(1, steps), &w.attack).unwrap();
            assert!(y.amax() <= 1e-9 * w.attack.norm_inf());
            assert!(w.attack.support.contains(&i));
        }
    }

    #[test]
    fn greedy_bound_dominates_exhaustive_search() {
        let (_, blocks) = two_state();
        let idx = DataIndexer::new(&blocks).unwrap().with_cache();
        for i in idx.layout().components() {
            let exact = idx.rho(i, None).unwrap().value;
            let (upper, trace) = idx.rho_upper_traced(i).unwrap();
            assert_eq!(exact.le(&upper.value), Some(true));
            assert_eq!(trace[0].gamma, vec![i]);
            assert!(trace.windows(2).all(|w| w[1].gamma.len() == w[0].gamma.len() + 1));
        }
    }

    #[test]
    fn capped_search_reports_cap() {
        let (_, blocks) = scalar(0);
        let idx = DataIndexer::new(&blocks).unwrap();
        let full = idx.rho(0, None).unwrap();
        let capped = idx.rho(0, Some(1)).unwrap();
        assert_eq!(full.value, IndexValue::Finite(2));
        assert_eq!(capped.value, IndexValue::Exceeds(1));
        assert!(capped.witness_set.is_none());
    }

    #[test]
    fn state_dimension_is_recovered_from_data() {
        assert_eq!(DataModel::new(&scalar(0).1).unwrap().state_dim_estimate(), 1);
        assert_eq!(DataModel::new(&two_state().1).unwrap().state_dim_estimate(), 2);
    }

    #[test]
    fn default_horizon_adds_two_windows() {
        assert_eq!(default_witness_horizon(3, 4), 11);
    }
}
