//! Discrete-time LTI plants, the attack channel structure, simulation, the
//! vehicle-platoon benchmark and persistently exciting data generation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::hankel::{is_persistently_exciting, PeReport};
use crate::linalg;

/// `x(k+1) = A x(k) + B u(k)`, `y(k) = C x(k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl LtiSystem {
    /// Builds a plant after checking shapes and that `B` has full column rank.
    /// Loss of controllability or observability is only logged: user-supplied
    /// plants are allowed to be degenerate.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("state dimension must be positive".into()));
        }
        if a.ncols() != n {
            return Err(dim_err("A columns", n, a.ncols()));
        }
        if b.nrows() != n {
            return Err(dim_err("B rows", n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(dim_err("C columns", n, c.ncols()));
        }
        if b.ncols() == 0 || c.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "input and output dimensions must be positive".into(),
            ));
        }
        let rb = linalg::rank(&b);
        if rb != b.ncols() {
            return Err(Error::InvalidArgument(format!(
                "B must have full column rank {}, found rank {rb}",
                b.ncols()
            )));
        }
        let sys = Self { a, b, c };
        if !sys.is_controllable() {
            log::warn!("(A, B) is not controllable");
        }
        if !sys.is_observable() {
            log::warn!("(A, C) is not observable");
        }
        Ok(sys)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut out = DMatrix::zeros(n, n * m);
        let mut blk = self.b.clone();
        for k in 0..n {
            out.columns_mut(k * m, m).copy_from(&blk);
            blk = &self.a * blk;
        }
        out
    }

    pub fn observability_matrix(&self) -> DMatrix<f64> {
        let (n, p) = (self.n(), self.p());
        let mut out = DMatrix::zeros(n * p, n);
        let mut blk = self.c.clone();
        for k in 0..n {
            out.rows_mut(k * p, p).copy_from(&blk);
            blk *= &self.a;
        }
        out
    }

    pub fn is_controllable(&self) -> bool {
        linalg::rank(&self.controllability_matrix()) == self.n()
    }

    pub fn is_observable(&self) -> bool {
        linalg::rank(&self.observability_matrix()) == self.n()
    }
}

/// Role of an attackable component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    /// Actuator, 0-based input channel.
    Actuator(usize),
    /// Unprotected sensor, 0-based output channel.
    Sensor(usize),
}

/// Index bookkeeping for actuators, unprotected sensors and protected sensors.
///
/// Components are numbered `0..m + p - nu` (0-based): the first `m` are the
/// actuators, the rest the unprotected sensors in output order. The last `nu`
/// outputs are protected and are not components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentLayout {
    m: usize,
    p: usize,
    nu: usize,
}

impl ComponentLayout {
    pub fn new(m: usize, p: usize, nu: usize) -> Result<Self> {
        if nu > p {
            return Err(Error::InvalidArgument(format!(
                "protected sensor count {nu} exceeds output count {p}"
            )));
        }
        Ok(Self { m, p, nu })
    }

    pub fn for_system(sys: &LtiSystem, nu: usize) -> Result<Self> {
        Self::new(sys.m(), sys.p(), nu)
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn nu(&self) -> usize {
        self.nu
    }
    /// Number of unprotected sensors.
    pub fn unprotected(&self) -> usize {
        self.p - self.nu
    }
    /// `|I| = m + p - nu`.
    pub fn len(&self) -> usize {
        self.m + self.p - self.nu
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn components(&self) -> std::ops::Range<usize> {
        0..self.len()
    }
    /// 0-based output channels of the protected sensors.
    pub fn protected_outputs(&self) -> std::ops::Range<usize> {
        self.unprotected()..self.p
    }

    pub fn role(&self, j: usize) -> Result<Role> {
        if j < self.m {
            Ok(Role::Actuator(j))
        } else if j < self.len() {
            Ok(Role::Sensor(j - self.m))
        } else {
            Err(Error::NotAComponent(j))
        }
    }

    /// Column of the `m + p` attack vector driven by component `j`.
    pub fn attack_column(&self, j: usize) -> Result<usize> {
        match self.role(j)? {
            Role::Actuator(c) => Ok(c),
            Role::Sensor(s) => Ok(self.m + self.nu + s),
        }
    }

    /// Component driving attack column `col`, or `None` for protected columns.
    pub fn component_of_column(&self, col: usize) -> Option<usize> {
        if col < self.m {
            Some(col)
        } else if col < self.m + self.nu || col >= self.m + self.p {
            None
        } else {
            Some(col - self.nu)
        }
    }

    /// `u_k` / `y_k` label with 1-based channel numbers.
    pub fn label(&self, j: usize) -> String {
        match self.role(j) {
            Ok(Role::Actuator(c)) => format!("u_{}", c + 1),
            Ok(Role::Sensor(s)) => format!("y_{}", s + 1),
            Err(_) => format!("?{j}"),
        }
    }

    /// Parses `u_3`, `u3`, `y_10`, `y10` (1-based channels) into a component.
    pub fn parse_label(&self, text: &str) -> Result<usize> {
        let t = text.trim();
        let bad = || Error::Parse(format!("bad component label {t:?}"));
        let (kind, rest) = t.split_at(t.char_indices().nth(1).map(|(i, _)| i).ok_or_else(bad)?);
        let rest = rest.strip_prefix('_').unwrap_or(rest);
        let k: usize = rest.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match kind {
            "u" | "U" if k <= self.m => Ok(k - 1),
            "y" | "Y" if k <= self.unprotected() => Ok(self.m + k - 1),
            "y" | "Y" if k <= self.p => Err(Error::InvalidArgument(format!(
                "{t} is a protected sensor"
            ))),
            _ => Err(bad()),
        }
    }
}

/// `B_a = [B, 0]` and `D_a` with `I_{p-nu}` in its top-right block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackStructure {
    pub ba: DMatrix<f64>,
    pub da: DMatrix<f64>,
}

impl AttackStructure {
    pub fn new(sys: &LtiSystem, layout: &ComponentLayout) -> Result<Self> {
        check_layout(sys, layout)?;
        let (n, m, p, nu) = (sys.n(), sys.m(), sys.p(), layout.nu());
        let mut ba = DMatrix::zeros(n, m + p);
        ba.columns_mut(0, m).copy_from(sys.b());
        let mut da = DMatrix::zeros(p, m + p);
        for l in 0..p - nu {
            da[(l, m + nu + l)] = 1.0;
        }
        Ok(Self { ba, da })
    }

    /// Columns of `(B_a, D_a)` belonging to the components in `gamma`.
    pub fn restrict(&self, layout: &ComponentLayout, gamma: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let cols = gamma
            .iter()
            .map(|&j| layout.attack_column(j))
            .collect::<Result<Vec<_>>>()?;
        Ok((self.ba.select_columns(&cols), self.da.select_columns(&cols)))
    }
}

pub(crate) fn check_layout(sys: &LtiSystem, layout: &ComponentLayout) -> Result<()> {
    if layout.m() != sys.m() {
        return Err(dim_err("layout actuator count", sys.m(), layout.m()));
    }
    if layout.p() != sys.p() {
        return Err(dim_err("layout sensor count", sys.p(), layout.p()));
    }
    Ok(())
}

/// Input/output record; column `k` of `u` (`y`) is `u(k)` (`y(k)`).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(u: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if u.ncols() != y.ncols() {
            return Err(dim_err("trajectory length", u.ncols(), y.ncols()));
        }
        Ok(Self { u, y })
    }
    pub fn len(&self) -> usize {
        self.u.ncols()
    }
    pub fn is_empty(&self) -> bool {
        self.u.ncols() == 0
    }
    pub fn m(&self) -> usize {
        self.u.nrows()
    }
    pub fn p(&self) -> usize {
        self.y.nrows()
    }
}

/// Attack sequence in the full `m + p` layout; column `k` is `a(k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackSignal {
    pub a: DMatrix<f64>,
    /// Components (0-based, sorted) that are active at some step.
    pub support: Vec<usize>,
}

impl AttackSignal {
    /// Relative magnitude below which an entry counts as inactive.
    pub const SUPPORT_THRESHOLD: f64 = 1e-8;

    /// Wraps `a`, rejecting nonzero protected entries and computing the support.
    pub fn new(a: DMatrix<f64>, layout: &ComponentLayout) -> Result<Self> {
        if a.nrows() != layout.m() + layout.p() {
            return Err(dim_err("attack vector length", layout.m() + layout.p(), a.nrows()));
        }
        for k in 0..a.ncols() {
            for col in layout.m()..layout.m() + layout.nu() {
                if a[(col, k)] != 0.0 {
                    return Err(Error::ProtectedChannel { channel: col, step: k });
                }
            }
        }
        let scale = linalg::max_abs(&a);
        let thr = Self::SUPPORT_THRESHOLD * scale;
        let support = (0..a.nrows())
            .filter(|&col| scale > 0.0 && a.row(col).iter().any(|v| v.abs() > thr))
            .filter_map(|col| layout.component_of_column(col))
            .collect();
        Ok(Self { a, support })
    }

    pub fn len(&self) -> usize {
        self.a.ncols()
    }
    pub fn is_empty(&self) -> bool {
        self.a.ncols() == 0
    }
    pub fn norm_inf(&self) -> f64 {
        linalg::max_abs(&self.a)
    }
}

/// Free response plus forced response of the nominal plant.
pub fn simulate(sys: &LtiSystem, x0: &DVector<f64>, u: &DMatrix<f64>) -> Result<Trajectory> {
    let (_, y) = simulate_states(sys, x0, u)?;
    Trajectory::new(u.clone(), y)
}

/// Like [`simulate`], also returning the state sequence `x(0..N)` (N+1 columns).
pub fn simulate_states(
    sys: &LtiSystem,
    x0: &DVector<f64>,
    u: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if x0.len() != sys.n() {
        return Err(dim_err("initial state", sys.n(), x0.len()));
    }
    if u.nrows() != sys.m() {
        return Err(dim_err("input dimension", sys.m(), u.nrows()));
    }
    let steps = u.ncols();
    let mut xs = DMatrix::zeros(sys.n(), steps + 1);
    let mut y = DMatrix::zeros(sys.p(), steps);
    xs.set_column(0, x0);
    for k in 0..steps {
        let x = xs.column(k).into_owned();
        y.set_column(k, &(sys.c() * &x));
        let next = sys.a() * &x + sys.b() * u.column(k);
        xs.set_column(k + 1, &next);
    }
    Ok((xs, y))
}

/// Output of the attacked plant `x+ = Ax + Bu + B_a a`, `y = Cx + D_a a`.
/// Runs for `u.ncols()` steps; `a` must be at least that long.
pub fn simulate_attacked(
    sys: &LtiSystem,
    layout: &ComponentLayout,
    x0: &DVector<f64>,
    u: &DMatrix<f64>,
    attack: &AttackSignal,
) -> Result<DMatrix<f64>> {
    let structure = AttackStructure::new(sys, layout)?;
    if x0.len() != sys.n() {
        return Err(dim_err("initial state", sys.n(), x0.len()));
    }
    if u.nrows() != sys.m() {
        return Err(dim_err("input dimension", sys.m(), u.nrows()));
    }
    let a = &attack.a;
    if a.nrows() != sys.m() + sys.p() {
        return Err(dim_err("attack vector length", sys.m() + sys.p(), a.nrows()));
    }
    if a.ncols() < u.ncols() {
        return Err(dim_err("attack length", u.ncols(), a.ncols()));
    }
    for k in 0..a.ncols() {
        for col in layout.m()..layout.m() + layout.nu() {
            if a[(col, k)] != 0.0 {
                return Err(Error::ProtectedChannel { channel: col, step: k });
            }
        }
    }
    let steps = u.ncols();
    let mut x = x0.clone();
    let mut y = DMatrix::zeros(sys.p(), steps);
    for k in 0..steps {
        let ak = a.column(k);
        y.set_column(k, &(sys.c() * &x + &structure.da * ak));
        x = sys.a() * &x + sys.b() * u.column(k) + &structure.ba * ak;
    }
    Ok(y)
}

/// Desired per-vehicle trajectory for the platoon excitation.
#[derive(Clone, Debug, PartialEq)]
pub enum Reference {
    /// Vehicle `l` (0-based) tracks position `-spacing * l + velocity * t`
    /// with velocity `velocity`.
    ConstantSpacing { spacing: f64, velocity: f64 },
    /// Explicit `2 N_v x N` reference, state-ordered like the plant.
    Explicit(DMatrix<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlatoonConfig {
    pub n_vehicles: usize,
    pub ts: f64,
    pub kp: f64,
    pub noise_var: f64,
    pub reference: Reference,
    pub seed: u64,
    pub n_samples: usize,
}

impl Default for PlatoonConfig {
    fn default() -> Self {
        Self {
            n_vehicles: 5,
            ts: 0.1,
            kp: 1.0,
            noise_var: 1.0,
            reference: Reference::ConstantSpacing {
                spacing: 10.0,
                velocity: 1.0,
            },
            seed: 0,
            n_samples: 200,
        }
    }
}

impl PlatoonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles == 0 {
            return Err(Error::InvalidArgument("platoon needs at least one vehicle".into()));
        }
        if !(self.ts > 0.0) {
            return Err(Error::InvalidArgument("sampling time must be positive".into()));
        }
        if !(self.noise_var >= 0.0) {
            return Err(Error::InvalidArgument("noise variance must be non-negative".into()));
        }
        if let Reference::Explicit(r) = &self.reference {
            if r.nrows() != 2 * self.n_vehicles || r.ncols() < self.n_samples {
                return Err(dim_err("reference rows", 2 * self.n_vehicles, r.nrows()));
            }
        }
        Ok(())
    }

    fn reference_at(&self, k: usize) -> DVector<f64> {
        match &self.reference {
            Reference::ConstantSpacing { spacing, velocity } => {
                let t = k as f64 * self.ts;
                DVector::from_iterator(
                    2 * self.n_vehicles,
                    (0..self.n_vehicles).flat_map(|l| [-spacing * l as f64 + velocity * t, *velocity]),
                )
            }
            Reference::Explicit(r) => r.column(k).into_owned(),
        }
    }
}

/// Double-integrator platoon. State `(pos_1, vel_1, pos_2, vel_2, ...)`;
/// outputs `y_1 = pos_1`, `y_2 = vel_1` and for vehicle `l >= 2` (1-based)
/// `y_{2l-1} = pos_l`, `y_{2l} = pos_l - pos_{l-1}`. No protected sensors.
pub fn build_platoon(cfg: &PlatoonConfig) -> Result<(LtiSystem, ComponentLayout)> {
    cfg.validate()?;
    let nv = cfg.n_vehicles;
    let n = 2 * nv;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, nv);
    let mut c = DMatrix::zeros(n, n);
    for l in 0..nv {
        let (pi, vi) = (2 * l, 2 * l + 1);
        a[(pi, pi)] = 1.0;
        a[(pi, vi)] = cfg.ts;
        a[(vi, vi)] = 1.0;
        b[(vi, l)] = cfg.ts;
        c[(2 * l, pi)] = 1.0;
        if l == 0 {
            c[(1, vi)] = 1.0;
        } else {
            c[(2 * l + 1, pi)] = 1.0;
            c[(2 * l + 1, pi - 2)] = -1.0;
        }
    }
    let sys = LtiSystem::new(a, b, c)?;
    let layout = ComponentLayout::for_system(&sys, 0)?;
    Ok((sys, layout))
}

/// Data set produced by an excitation run.
#[derive(Clone, Debug)]
pub struct Excitation {
    pub trajectory: Trajectory,
    pub x0: DVector<f64>,
    pub pe: PeReport,
    /// Seed that produced the accepted data (differs from the requested one after retries).
    pub seed: u64,
    pub attempts: usize,
}

/// Regeneration attempts before giving up on persistency of excitation.
pub const PE_RETRY_CAP: usize = 8;

/// Closed-loop platoon data `u_l = K_p (x*_l - x_l) + w`, with `K_p` acting on
/// both position and velocity errors and `w ~ N(0, noise_var)` i.i.d.
/// The input is checked for persistency of excitation of `order`; failures are
/// retried with derived seeds up to [`PE_RETRY_CAP`] times.
pub fn generate_excitation(sys: &LtiSystem, cfg: &PlatoonConfig, order: usize) -> Result<Excitation> {
    cfg.validate()?;
    if sys.n() != 2 * cfg.n_vehicles || sys.m() != cfg.n_vehicles {
        return Err(dim_err("platoon state dimension", 2 * cfg.n_vehicles, sys.n()));
    }
    let noise = Normal::new(0.0, cfg.noise_var.sqrt())
        .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
    let steps = cfg.n_samples;
    let mut last = PeReport::default();
    for attempt in 0..PE_RETRY_CAP {
        let seed = cfg.seed.wrapping_add(attempt as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = cfg.reference_at(0);
        let mut x = x0.clone();
        let mut u = DMatrix::zeros(sys.m(), steps);
        let mut y = DMatrix::zeros(sys.p(), steps);
        for k in 0..steps {
            let err = cfg.reference_at(k) - &x;
            for l in 0..cfg.n_vehicles {
                u[(l, k)] = cfg.kp * (err[2 * l] + err[2 * l + 1]) + noise.sample(&mut rng);
            }
            y.set_column(k, &(sys.c() * &x));
            x = sys.a() * &x + sys.b() * u.column(k);
        }
        let pe = is_persistently_exciting(&u, order);
        if pe.exciting {
            return Ok(Excitation {
                trajectory: Trajectory::new(u, y)?,
                x0,
                pe,
                seed,
                attempts: attempt + 1,
            });
        }
        log::info!("seed {seed}: input not persistently exciting of order {order} (rank {} < {})", pe.rank, pe.needed);
        last = pe;
    }
    Err(Error::NotPersistentlyExciting {
        order,
        rank: last.rank,
        needed: last.needed,
        attempts: PE_RETRY_CAP,
    })
}

/// Smallest data length for which an `m`-input signal can be persistently
/// exciting of `order`: `(m + 1) * order - 1`.
pub fn min_samples_for_order(m: usize, order: usize) -> usize {
    (m + 1) * order - 1
}

/// Open-loop i.i.d. standard-normal input from a random initial state, with
/// the same persistency check and retry policy as [`generate_excitation`].
pub fn random_excitation(sys: &LtiSystem, n_samples: usize, order: usize, seed: u64) -> Result<Excitation> {
    let mut last = PeReport::default();
    for attempt in 0..PE_RETRY_CAP {
        let s = seed.wrapping_add(attempt as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let x0 = DVector::from_fn(sys.n(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = DMatrix::from_fn(sys.m(), n_samples, |_, _| rng.sample::<f64, _>(StandardNormal));
        let pe = is_persistently_exciting(&u, order);
        if pe.exciting {
            let trajectory = simulate(sys, &x0, &u)?;
            return Ok(Excitation {
                trajectory,
                x0,
                pe,
                seed: s,
                attempts: attempt + 1,
            });
        }
        last = pe;
    }
    Err(Error::NotPersistentlyExciting {
        order,
        rank: last.rank,
        needed: last.needed,
        attempts: PE_RETRY_CAP,
    })
}

/// Seeded random plant with sparse Gaussian entries, rescaled to spectral
/// radius in `[0.6, 1.0]`, redrawn until `B` has full column rank and the
/// pair is controllable and observable.
pub fn random_system(n: usize, m: usize, p: usize, density: f64, seed: u64) -> Result<LtiSystem> {
    if n == 0 || m == 0 || p == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "random system needs 0 < m <= n and p > 0 (got n={n}, m={m}, p={p})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        DMatrix::from_fn(rows, cols, |_, _| {
            if rng.random::<f64>() < density {
                rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            }
        })
    };
    for _ in 0..1000 {
        let mut a = draw(n, n, &mut rng);
        let radius = a
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let target = 0.6 + 0.4 * rng.random::<f64>();
        if radius > 1e-9 {
            a *= target / radius;
        }
        let b = draw(n, m, &mut rng);
        let c = draw(p, n, &mut rng);
        if linalg::rank(&b) != m {
            continue;
        }
        let sys = LtiSystem { a, b, c };
        if sys.is_controllable() && sys.is_observable() {
            return Ok(sys);
        }
    }
    Err(Error::Numerical("could not draw a controllable and observable system".into()))
}
