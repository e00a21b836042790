//! Model-based security index: feasibility of perfectly undetectable attacks
//! on a component set via the normal rank of the attack transfer matrix, the
//! brute-force minimum-cardinality search, and finite-support witness attacks.
//!
//! Feasibility rule. With `G_Γ(z) = C (zI - A)^{-1} B_a^Γ + D_a^Γ`, an
//! undetectable attack supported in `Γ` that uses component `i` exists iff a
//! rational kernel vector of `G_Γ` has a nonzero `i`-th entry. If every kernel
//! vector had `v_i = 0`, the kernels of `G_Γ` and `G_{Γ \ i}` would coincide and
//! the normal ranks would differ by one. So the test is
//! `normal_rank(G_Γ) == normal_rank(G_{Γ \ i})`.

use std::time::Instant;

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::index::{level_search, IndexResult};
use crate::linalg;
use crate::subspace::containment_threshold;
use crate::linsys::{check_layout, AttackSignal, AttackStructure, ComponentLayout, LtiSystem};

type C64 = Complex<f64>;

/// Sample points used to evaluate the normal rank.
#[derive(Clone, Copy, Debug)]
pub struct RankSampling {
    pub points: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for RankSampling {
    fn default() -> Self {
        Self {
            points: 7,
            radius: 1.05,
            seed: 0x5ec1d,
        }
    }
}

const COLLISION_RETRIES: usize = 100;

/// Pointwise samples `G(z_k)` of the full `p x (m + p)` attack transfer matrix.
#[derive(Clone, Debug)]
pub struct TransferSamples {
    samples: Vec<DMatrix<C64>>,
    layout: ComponentLayout,
}

impl TransferSamples {
    pub fn new(sys: &LtiSystem, layout: &ComponentLayout, sampling: RankSampling) -> Result<Self> {
        let structure = AttackStructure::new(sys, layout)?;
        let eig = sys.a().clone().complex_eigenvalues();
        let n = sys.n();
        let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
        let mut samples = Vec::with_capacity(sampling.points);
        let c = sys.c().map(|v| C64::new(v, 0.0));
        let ba = structure.ba.map(|v| C64::new(v, 0.0));
        let da = structure.da.map(|v| C64::new(v, 0.0));
        let a = sys.a().map(|v| C64::new(v, 0.0));
        for _ in 0..sampling.points {
            let mut z = None;
            for _ in 0..COLLISION_RETRIES {
                let theta = rng.random::<f64>() * std::f64::consts::TAU;
                let cand = C64::from_polar(sampling.radius, theta);
                if eig.iter().all(|l| (cand - l).norm() > 1e-6 * (1.0 + l.norm())) {
                    z = Some(cand);
                    break;
                }
            }
            let z = z.ok_or_else(|| Error::Numerical("could not draw a sample point away from the plant poles".into()))?;
            let pencil = DMatrix::<C64>::identity(n, n) * z - &a;
            let resolvent = pencil
                .lu()
                .solve(&ba)
                .ok_or_else(|| Error::Numerical("singular resolvent at sample point".into()))?;
            samples.push(&c * resolvent + &da);
        }
        Ok(Self { samples, layout: *layout })
    }

    /// Normal rank of the columns of `G` mapped from the components in `gamma`.
    pub fn normal_rank(&self, gamma: &[usize]) -> Result<usize> {
        if gamma.is_empty() {
            return Ok(0);
        }
        let cols = gamma
            .iter()
            .map(|&j| self.layout.attack_column(j))
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .samples
            .iter()
            .map(|g| complex_rank(&g.select_columns(&cols)))
            .max()
            .unwrap_or(0))
    }

    pub fn feasible(&self, gamma: &[usize], i: usize) -> Result<bool> {
        if !gamma.contains(&i) {
            return Err(Error::InvalidArgument(format!("component {i} is not in the attack set")));
        }
        let rest: Vec<usize> = gamma.iter().copied().filter(|&j| j != i).collect();
        Ok(self.normal_rank(gamma)? == self.normal_rank(&rest)?)
    }
}

fn complex_rank(m: &DMatrix<C64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = linalg::complex_singular_values(m);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let thr = linalg::rank_threshold(m.nrows(), m.ncols(), smax);
    sv.iter().filter(|&&s| s > thr).count()
}

/// Normal rank of `G_Γ(z)`.
pub fn normal_rank(sys: &LtiSystem, layout: &ComponentLayout, gamma: &[usize]) -> Result<usize> {
    normal_rank_with(sys, layout, gamma, RankSampling::default())
}

pub fn normal_rank_with(
    sys: &LtiSystem,
    layout: &ComponentLayout,
    gamma: &[usize],
    sampling: RankSampling,
) -> Result<usize> {
    TransferSamples::new(sys, layout, sampling)?.normal_rank(gamma)
}

/// Whether a perfectly undetectable attack supported in `gamma` with
/// component `i` active exists.
pub fn model_feasible(sys: &LtiSystem, layout: &ComponentLayout, gamma: &[usize], i: usize) -> Result<bool> {
    TransferSamples::new(sys, layout, RankSampling::default())?.feasible(gamma, i)
}

/// Brute-force `δ(i)`: the smallest feasible set containing `i`, with a
/// verified witness attack for finite values.
pub fn delta(sys: &LtiSystem, layout: &ComponentLayout, i: usize, max_card: Option<usize>) -> Result<IndexResult> {
    let start = Instant::now();
    layout.role(i)?;
    let samples = TransferSamples::new(sys, layout, RankSampling::default())?;
    let (value, witness_set) = level_search(layout.len(), i, max_card, |g| samples.feasible(g, i))?;
    let witness_attack = match &witness_set {
        Some(g) => Some(synthesize_model_attack(sys, layout, g, i, default_horizon(sys))?),
        None => None,
    };
    Ok(IndexResult {
        component: i,
        value,
        witness_set,
        witness_attack,
        elapsed: start.elapsed().as_secs_f64(),
    })
}

/// `δ(i)` for every component.
pub fn delta_all(sys: &LtiSystem, layout: &ComponentLayout, max_card: Option<usize>) -> Result<Vec<IndexResult>> {
    layout.components().map(|i| delta(sys, layout, i, max_card)).collect()
}

/// Relative size below which a pencil eigenvalue's denominator counts as zero.
const INFINITE_EIGENVALUE: f64 = 1e-10;

fn finite_eigenvalues(m: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<Vec<C64>> {
    let k = m.nrows();
    let fm = faer::Mat::<f64>::from_fn(k, k, |r, c| m[(r, c)]);
    let fe = faer::Mat::<f64>::from_fn(k, k, |r, c| e[(r, c)]);
    let ev = fm
        .generalized_eigen(&fe)
        .map_err(|e| Error::Numerical(format!("generalized eigenvalues: {e:?}")))?;
    let (sa, sb) = (ev.S_a(), ev.S_b());
    Ok((0..k)
        .filter_map(|j| {
            let (a, b) = (sa[j], sb[j]);
            let (a, b) = (C64::new(a.re, a.im), C64::new(b.re, b.im));
            (b.norm() > INFINITE_EIGENVALUE * a.norm().max(f64::MIN_POSITIVE)).then(|| a / b)
        })
        .collect())
}

/// Finite invariant zeros of the attack subsystem `(A, B_a^Γ, C, D_a^Γ)`.
///
/// `None` when `G_Γ` is column-rank deficient, where every `z` drops the rank.
/// Tall subsystems are squared down by two seeded random output combinations;
/// the zeros are the eigenvalues the two square pencils share.
pub fn invariant_zeros(sys: &LtiSystem, layout: &ComponentLayout, gamma: &[usize]) -> Result<Option<Vec<C64>>> {
    let (n, p, k) = (sys.n(), sys.p(), gamma.len());
    if k == 0 || k > p || normal_rank(sys, layout, gamma)? < k {
        return Ok(None);
    }
    let structure = AttackStructure::new(sys, layout)?;
    let (bs, ds) = structure.restrict(layout, gamma)?;
    let mut e = DMatrix::zeros(n + k, n + k);
    e.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut rng = ChaCha8Rng::seed_from_u64(0x2e205);
    let draws = if k == p { 1 } else { 2 };
    let mut sets = Vec::with_capacity(draws);
    for _ in 0..draws {
        let t = if k == p {
            DMatrix::identity(p, p)
        } else {
            DMatrix::from_fn(k, p, |_, _| rng.random::<f64>() * 2.0 - 1.0)
        };
        let mut pencil = DMatrix::zeros(n + k, n + k);
        pencil.view_mut((0, 0), (n, n)).copy_from(sys.a());
        pencil.view_mut((0, n), (n, k)).copy_from(&bs);
        pencil.view_mut((n, 0), (k, n)).copy_from(&(&t * sys.c()));
        pencil.view_mut((n, n), (k, k)).copy_from(&(&t * &ds));
        sets.push(finite_eigenvalues(&pencil, &e)?);
    }
    let first = sets.remove(0);
    Ok(Some(match sets.pop() {
        None => first,
        Some(other) => first
            .into_iter()
            .filter(|z| other.iter().any(|w| (z - w).norm() <= 1e-6 * z.norm().max(1.0)))
            .collect(),
    }))
}

/// Largest invariant-zero magnitude over every attack subsystem with full
/// column normal rank. Enumerates all component subsets, so it is meant for
/// small systems.
pub fn largest_invariant_zero(sys: &LtiSystem, layout: &ComponentLayout) -> Result<f64> {
    let comps: Vec<usize> = layout.components().collect();
    let mut largest = 0.0f64;
    for mask in 1u64..(1u64 << comps.len()) {
        let gamma: Vec<usize> = comps.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &j)| j).collect();
        if let Some(zeros) = invariant_zeros(sys, layout, &gamma)? {
            largest = zeros.iter().map(|z| z.norm()).fold(largest, f64::max);
        }
    }
    Ok(largest)
}

/// Longest finite attack pulse tried by the synthesizer.
fn max_pulse_len(sys: &LtiSystem) -> usize {
    2 * sys.n() + 2
}

/// Horizon used for the witnesses attached to [`delta`] results.
pub fn default_horizon(sys: &LtiSystem) -> usize {
    max_pulse_len(sys) + sys.n() + 1
}

/// Perfectly undetectable attack supported in `gamma` with component `i`
/// active, as a finite pulse padded with zeros to `horizon` steps.
///
/// For pulse lengths `k = 1, 2, ...` the attack samples `a(0..k)` on the
/// columns of `gamma` are constrained by `y(0..k) = 0` and `x(k) = 0` from
/// `x(0) = 0`; after the pulse the state is zero and the output stays zero.
/// The first length whose solution space moves component `i` is used, taking
/// the direction that maximizes component `i`'s energy.
pub fn synthesize_model_attack(
    sys: &LtiSystem,
    layout: &ComponentLayout,
    gamma: &[usize],
    i: usize,
    horizon: usize,
) -> Result<AttackSignal> {
    check_layout(sys, layout)?;
    if !gamma.contains(&i) {
        return Err(Error::InvalidArgument(format!("component {i} is not in the attack set")));
    }
    let structure = AttackStructure::new(sys, layout)?;
    let (ba, da) = structure.restrict(layout, gamma)?;
    let q = gamma.len();
    let pos_i = gamma.iter().position(|&j| j == i).expect("checked above");
    let p = sys.p();
    for k in 1..=max_pulse_len(sys) {
        let m = pulse_constraints(sys.a(), sys.c(), &ba, &da, k);
        let ker = linalg::null_space(&m, None);
        if ker.ncols() == 0 {
            continue;
        }
        let rows_i: Vec<usize> = (0..k).map(|s| s * q + pos_i).collect();
        let ki = linalg::select_rows(&ker, &rows_i);
        // ker is orthonormal: component i moves iff ki is not numerically zero.
        let thr = containment_threshold(ki.nrows(), ki.ncols());
        if linalg::singular_values(&ki).iter().all(|&s| s <= thr) {
            continue;
        }
        if horizon < k {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} is shorter than the shortest witness pulse ({k} steps)"
            )));
        }
        let w = linalg::svd(&ki).v_t.row(0).transpose();
        let coeffs = &ker * w;
        let mut a = DMatrix::zeros(layout.m() + p, horizon);
        for s in 0..k {
            for (pos, &j) in gamma.iter().enumerate() {
                a[(layout.attack_column(j)?, s)] = coeffs[s * q + pos];
            }
        }
        return AttackSignal::new(a, layout);
    }
    Err(Error::Infeasible(format!(
        "no undetectable attack on {} uses component {}",
        fmt_set(layout, gamma),
        layout.label(i)
    )))
}

/// Stacked conditions `[y(0); ...; y(k-1); x(k)] = M a(0..k)` for `x(0) = 0`.
fn pulse_constraints(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    ba: &DMatrix<f64>,
    da: &DMatrix<f64>,
    k: usize,
) -> DMatrix<f64> {
    let (n, q, p) = (a.nrows(), ba.ncols(), c.nrows());
    let mut m = DMatrix::zeros(p * k + n, q * k);
    // powers[t] = A^t B_a
    let mut powers = Vec::with_capacity(k);
    let mut blk = ba.clone();
    for _ in 0..k {
        powers.push(blk.clone());
        blk = a * blk;
    }
    for t in 0..k {
        m.view_mut((t * p, t * q), (p, q)).copy_from(da);
        for s in 0..t {
            m.view_mut((t * p, s * q), (p, q)).copy_from(&(c * &powers[t - 1 - s]));
        }
    }
    for s in 0..k {
        m.view_mut((p * k, s * q), (n, q)).copy_from(&powers[k - 1 - s]);
    }
    m
}

pub(crate) fn fmt_set(layout: &ComponentLayout, gamma: &[usize]) -> String {
    let labels: Vec<String> = gamma.iter().map(|&j| layout.label(j)).collect();
    format!("{{{}}}", labels.join(","))
}
