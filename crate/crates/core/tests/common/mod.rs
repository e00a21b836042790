#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secidx::hankel::{build_blocks, HankelBlocks};
use secidx::linalg::DEFAULT_RELATIVE_TOLERANCE;
use secidx::linsys::{
    build_platoon, generate_excitation, min_samples_for_order, random_excitation, random_system, simulate_attacked,
    AttackSignal, ComponentLayout, Excitation, LtiSystem, PlatoonConfig,
};
use secidx::model_index::largest_invariant_zero;

/// A plant, its layout and one data set with its Hankel blocks.
pub struct Case {
    pub seed: u64,
    pub sys: LtiSystem,
    pub layout: ComponentLayout,
    pub excitation: Excitation,
    pub blocks: HankelBlocks,
    pub l: usize,
}

/// Platoon data with PE order `n + 2L`.
pub fn platoon(n_vehicles: usize, l: usize, n_samples: usize, seed: u64) -> Case {
    let cfg = PlatoonConfig {
        n_vehicles,
        n_samples,
        seed,
        ..Default::default()
    };
    let (sys, layout) = build_platoon(&cfg).unwrap();
    let excitation = generate_excitation(&sys, &cfg, sys.n() + 2 * l).unwrap();
    let blocks = build_blocks(&excitation.trajectory, l, &layout).unwrap();
    Case {
        seed,
        sys,
        layout,
        excitation,
        blocks,
        l,
    }
}

pub fn platoon5() -> Case {
    platoon(5, 10, 200, 7)
}

/// Largest invariant-zero magnitude that a length-`2L` window still
/// separates from an exact zero-output attack at the default rank tolerance.
pub fn zero_limit(l: usize) -> f64 {
    DEFAULT_RELATIVE_TOLERANCE.powf(-1.0 / (2.0 * l as f64))
}

/// Dimensions drawn for suite case `seed`: `n <= 4`, `m <= 2`, `p <= 3`, any `ν`.
pub fn suite_dims(seed: u64) -> (usize, usize, usize, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4);
    let m = rng.random_range(1..=2.min(n));
    let p = rng.random_range(1..=3);
    let nu = rng.random_range(0..=p);
    let density = 0.5 + 0.5 * rng.random::<f64>();
    (n, m, p, nu, density)
}

/// Random plant with `L = n` and data persistently exciting of order
/// `n + 2L`. `None` when an attack subsystem has an invariant zero beyond
/// [`zero_limit`].
pub fn random_case(seed: u64) -> Option<Case> {
    let (n, m, p, nu, density) = suite_dims(seed);
    let sys = random_system(n, m, p, density, 1000 + seed).unwrap();
    let layout = ComponentLayout::for_system(&sys, nu).unwrap();
    let l = n;
    if largest_invariant_zero(&sys, &layout).unwrap() > zero_limit(l) {
        return None;
    }
    let order = n + 2 * l;
    let n_samples = 2 * min_samples_for_order(m, order) + 10;
    let excitation = random_excitation(&sys, n_samples, order, 5000 + seed).unwrap();
    let blocks = build_blocks(&excitation.trajectory, l, &layout).unwrap();
    Some(Case {
        seed,
        sys,
        layout,
        excitation,
        blocks,
        l,
    })
}

/// The first `count` accepted cases from seed `base` on, plus the number of
/// rejected draws.
pub fn random_suite(count: usize, base: u64) -> (Vec<Case>, usize) {
    let mut cases = Vec::with_capacity(count);
    let mut rejected = 0;
    let mut seed = base;
    while cases.len() < count {
        match random_case(seed) {
            Some(c) => cases.push(c),
            None => rejected += 1,
        }
        seed += 1;
    }
    (cases, rejected)
}

/// `max |y| / max |a|` when the attack drives the plant from rest.
pub fn replay_ratio(sys: &LtiSystem, layout: &ComponentLayout, attack: &AttackSignal) -> f64 {
    let steps = attack.len();
    let y = simulate_attacked(sys, layout, &DVector::zeros(sys.n()), &DMatrix::zeros(sys.m(), steps), attack).unwrap();
    y.amax() / attack.norm_inf()
}

/// Random matrix with i.i.d. entries in `[-1, 1)`.
pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

pub fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}
