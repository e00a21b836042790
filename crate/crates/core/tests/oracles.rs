//! Derived quantities checked against independent constructions.

mod common;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secidx::data_index::DataIndexer;
use secidx::hankel::hankel_matrix;
use secidx::linalg;
use secidx::linsys::{simulate, simulate_attacked, AttackSignal, AttackStructure, ComponentLayout, LtiSystem};
use secidx::model_index;

use common::{platoon5, random_suite, replay_ratio, Case};

type C64 = Complex<f64>;

fn random_gamma(rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
    let mut g: Vec<usize> = (0..k).filter(|_| rng.random_bool(0.5)).collect();
    if g.is_empty() {
        g.push(rng.random_range(0..k));
    }
    g
}

fn complex_qr_rank(m: &DMatrix<C64>, rel: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let r = m.clone().col_piv_qr().r();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols())).map(|i| r[(i, i)].norm()).collect();
    let top = diag.iter().cloned().fold(0.0, f64::max);
    diag.iter().filter(|&&v| v > rel * top).count()
}

/// Majority vote over random points of `rank [zI - A, -B_Γ; C, D_Γ] - n`.
fn rosenbrock_normal_rank(sys: &LtiSystem, layout: &ComponentLayout, gamma: &[usize], rng: &mut ChaCha8Rng) -> usize {
    let s = AttackStructure::new(sys, layout).unwrap();
    let (b, d) = s.restrict(layout, gamma).unwrap();
    let (n, p, k) = (sys.n(), sys.p(), gamma.len());
    let mut votes = vec![0usize; n + k + 1];
    for _ in 0..9 {
        let z = C64::from_polar(rng.random_range(0.5..2.0), rng.random::<f64>() * std::f64::consts::TAU);
        let mut r = DMatrix::<C64>::zeros(n + p, n + k);
        for i in 0..n {
            for j in 0..n {
                r[(i, j)] = C64::new(-sys.a()[(i, j)], 0.0) + if i == j { z } else { C64::new(0.0, 0.0) };
            }
            for j in 0..k {
                r[(i, n + j)] = C64::new(-b[(i, j)], 0.0);
            }
        }
        for i in 0..p {
            for j in 0..n {
                r[(n + i, j)] = C64::new(sys.c()[(i, j)], 0.0);
            }
            for j in 0..k {
                r[(n + i, n + j)] = C64::new(d[(i, j)], 0.0);
            }
        }
        votes[complex_qr_rank(&r, 1e-9) - n] += 1;
    }
    (0..votes.len()).max_by_key(|&v| votes[v]).unwrap()
}

#[test]
fn normal_rank_matches_rosenbrock_pencil() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (cases, _) = random_suite(20, 100);
    for case in &cases {
        for _ in 0..6 {
            let gamma = random_gamma(&mut rng, case.layout.len());
            let ours = model_index::normal_rank(&case.sys, &case.layout, &gamma).unwrap();
            let oracle = rosenbrock_normal_rank(&case.sys, &case.layout, &gamma, &mut rng);
            assert_eq!(ours, oracle, "seed {} Γ={gamma:?}", case.seed);
        }
    }
}

fn real_qr_rank(m: &DMatrix<f64>, rel: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let r = m.clone().col_piv_qr().r();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols())).map(|i| r[(i, i)].abs()).collect();
    let top = diag.iter().cloned().fold(0.0, f64::max);
    diag.iter().filter(|&&v| v > rel * top).count()
}

/// Some attack supported on `gamma` during `[0, K)` that uses component `i`
/// leaves the output at zero over `[0, K + n)`. Responses come from
/// simulating unit impulses, not from Markov parameters.
fn pulse_feasible(sys: &LtiSystem, layout: &ComponentLayout, gamma: &[usize], i: usize) -> bool {
    let n = sys.n();
    let width = layout.m() + layout.p();
    for k in 1..=2 * n + 2 {
        let steps = k + n;
        let mut columns = Vec::new();
        let mut owners = Vec::new();
        for s in 0..k {
            for &j in gamma {
                let mut a = DMatrix::zeros(width, steps);
                a[(layout.attack_column(j).unwrap(), s)] = 1.0;
                let att = AttackSignal::new(a, layout).unwrap();
                let y = simulate_attacked(sys, layout, &DVector::zeros(n), &DMatrix::zeros(sys.m(), steps), &att).unwrap();
                columns.push(DVector::from_column_slice(y.as_slice()));
                owners.push(j);
            }
        }
        let full = DMatrix::from_columns(&columns);
        let rest: Vec<_> = columns.iter().zip(&owners).filter(|(_, &o)| o != i).map(|(c, _)| c.clone()).collect();
        let rest = if rest.is_empty() { DMatrix::zeros(full.nrows(), 0) } else { DMatrix::from_columns(&rest) };
        // a kernel vector touches component i iff its columns are dependent modulo the rest
        if real_qr_rank(&full, 1e-9) < real_qr_rank(&rest, 1e-9) + k {
            return true;
        }
    }
    false
}

#[test]
fn model_feasibility_matches_finite_pulse_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (cases, _) = random_suite(15, 200);
    let mut feasible = 0;
    for case in &cases {
        for _ in 0..6 {
            let gamma = random_gamma(&mut rng, case.layout.len());
            let i = gamma[rng.random_range(0..gamma.len())];
            let ours = model_index::model_feasible(&case.sys, &case.layout, &gamma, i).unwrap();
            assert_eq!(ours, pulse_feasible(&case.sys, &case.layout, &gamma, i), "seed {} Γ={gamma:?} i={i}", case.seed);
            feasible += usize::from(ours);
        }
    }
    assert!(feasible > 0);
}

#[test]
fn data_feasibility_matches_model_on_platoon_subsets() {
    let case = platoon5();
    let idx = DataIndexer::new(&case.blocks).unwrap().with_cache();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut agree, mut feasible) = (0, 0);
    for _ in 0..60 {
        let gamma = random_gamma(&mut rng, 15);
        let i = gamma[rng.random_range(0..gamma.len())];
        let model = model_index::model_feasible(&case.sys, &case.layout, &gamma, i).unwrap();
        assert_eq!(idx.feasible(&gamma, i).unwrap(), model, "Γ={gamma:?} i={i}");
        agree += 1;
        feasible += usize::from(model);
    }
    assert_eq!(agree, 60);
    assert!(feasible > 5 && feasible < 55);
}

/// Every length-2L trajectory window of the plant lies in the column space of
/// the stacked data matrix, and a generic vector does not.
fn check_willems(case: &Case, rng: &mut ChaCha8Rng) {
    let w = case.blocks.stacked();
    let rank = linalg::rank(&w);
    let l = case.l;
    let (m, p) = (case.layout.m(), case.layout.p());
    let x0 = DVector::from_fn(case.sys.n(), |_, _| rng.random::<f64>() - 0.5);
    let u = DMatrix::from_fn(m, 2 * l, |_, _| rng.random::<f64>() - 0.5);
    let traj = simulate(&case.sys, &x0, &u).unwrap();
    let uh = hankel_matrix(&traj.u, 2 * l).unwrap();
    let yh = hankel_matrix(&traj.y, 2 * l).unwrap();
    // W = [Up; Uf; Yp; Yf] with time-major blocks
    let mut window = DVector::zeros(2 * l * (m + p));
    window.rows_mut(0, 2 * l * m).copy_from(&uh.column(0));
    window.rows_mut(2 * l * m, 2 * l * p).copy_from(&yh.column(0));
    let scale = w.amax().max(1.0);
    let with = DMatrix::from_fn(w.nrows(), w.ncols() + 1, |r, c| if c < w.ncols() { w[(r, c)] } else { window[r] * scale });
    assert_eq!(linalg::rank(&with), rank, "seed {}", case.seed);
    let noise = DVector::from_fn(w.nrows(), |_, _| rng.random::<f64>() - 0.5) * scale;
    let generic = DMatrix::from_fn(w.nrows(), w.ncols() + 1, |r, c| if c < w.ncols() { w[(r, c)] } else { noise[r] });
    assert_eq!(linalg::rank(&generic), rank + 1);
    assert_eq!(rank, 2 * l * m + case.sys.n());
}

#[test]
fn data_windows_match_plant_trajectories() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    check_willems(&platoon5(), &mut rng);
    let (cases, _) = random_suite(10, 300);
    for case in &cases {
        check_willems(case, &mut rng);
    }
}

#[test]
fn model_witnesses_replay_silently() {
    let case = platoon5();
    for i in case.layout.components() {
        let r = model_index::delta(&case.sys, &case.layout, i, None).unwrap();
        let att = r.witness_attack.expect("platoon components are all attackable");
        assert!(att.support.contains(&i));
        assert!(replay_ratio(&case.sys, &case.layout, &att) < 1e-9);
    }
}

#[test]
fn data_witness_constraints_hold_on_raw_blocks() {
    let case = platoon5();
    let idx = DataIndexer::new(&case.blocks).unwrap();
    for label in ["u_1", "u_5", "y_4", "y_10"] {
        let i = case.layout.parse_label(label).unwrap();
        let r = idx.rho(i, None).unwrap();
        let w = idx.witness(r.witness_set.as_ref().unwrap(), i, None).unwrap();
        let res = w.residuals(&case.blocks).unwrap();
        assert!(res.max_violation() < 1e-9, "{label}: {res:?}");
        assert!(res.active > 1e-3);
        assert_eq!(w.g.nrows(), case.blocks.d);
    }
}

#[test]
fn svd_survives_clustered_spectrum() {
    let text = include_str!("data/clustered_60x35.txt");
    let mut lines = text.lines();
    let dims: Vec<usize> = lines.next().unwrap().split(' ').map(|v| v.parse().unwrap()).collect();
    let values: Vec<f64> = lines.map(|v| v.parse().unwrap()).collect();
    let a = DMatrix::from_column_slice(dims[0], dims[1], &values);
    let s = linalg::svd(&a);
    let rebuilt = &s.u * DMatrix::from_diagonal(&s.singular_values) * &s.v_t;
    assert!((rebuilt - &a).norm() < 1e-12);
    assert!((s.u.transpose() * &s.u - DMatrix::identity(35, 35)).norm() < 1e-12);
    // oracle: the Gram matrix eigenvalues
    let mut gram: Vec<f64> = (a.transpose() * &a).symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).collect();
    gram.sort_by(|x, y| y.partial_cmp(x).unwrap());
    for (sv, g) in s.singular_values.iter().zip(&gram) {
        assert!((sv - g).abs() < 1e-7);
    }
    assert_eq!(linalg::rank(&a), 32);
}
