use super::*;
use alloc::sync::Arc;
use proptest::prelude::*;
use rand::Rng;

use crate::kernels::{causal_mask, convolutional, symmetrize, Direction};
use crate::pde::{make_dataset, PdeKind, PdeProblem, SamplerSpec};
use crate::stochastic::{FunctionSample, RngState};

fn unit(m: usize) -> Arc<Grid> {
    Arc::new(Grid::uniform((0.0, 1.0), m).unwrap())
}

fn poisson_data(m: usize, n: usize, seed: u64) -> Dataset {
    let p = PdeProblem::new(PdeKind::Poisson1d { u0: 5.0, u1: -5.0 }, m, 0);
    let s = SamplerSpec::BrownianBridge {
        modes: 20,
        scale: 100.0,
        offset_sigma: 50.0,
    };
    make_dataset(&p, &s, n, 0.0, &RngState::new(seed)).unwrap()
}

fn randomize(model: &mut GreensModel, seed: u64) {
    let mut rng = RngState::new(seed);
    let mut p = model.params();
    for b in p.blocks_mut() {
        for v in b.iter_mut() {
            *v = rng.normal();
        }
    }
    model.set_params(p).unwrap();
}

/// Random data for models whose grids are not produced by a PDE problem.
fn random_data(model: &GreensModel, n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = RngState::new(seed);
    let f = DMatrix::from_fn(n, model.x_grid().len(), |_, _| rng.normal());
    let u = DMatrix::from_fn(n, model.y_grid().len(), |_, _| rng.normal());
    (f, u)
}

fn flat_get(p: &Params, k: usize) -> f64 {
    let all: Vec<f64> = p.w_g.iter().chain(&p.w_b).chain(&p.d).chain(&p.q).copied().collect();
    all[k]
}

fn flat_add(p: &mut Params, k: usize, h: f64) {
    let mut k = k;
    for b in p.blocks_mut() {
        if k < b.len() {
            b[k] += h;
            return;
        }
        k -= b.len();
    }
    panic!("coordinate out of range");
}

/// Central differences on 20 random coordinates. The risk is quadratic, so the
/// only error is rounding in the risk itself, bounded relative to the largest
/// gradient entry.
fn check_gradient(mut model: GreensModel, f: &DMatrix<f64>, u: &DMatrix<f64>) {
    let g = gradients(&model, f, u).unwrap();
    let base = model.params();
    let total = base.w_g.len() + base.w_b.len() + base.d.len() + base.q.len();
    let scale = g.norm_inf();
    let mut rng = RngState::new(99);
    let mut coords: Vec<usize> = (0..20).map(|_| rng.gen_range(0..total)).collect();
    // make sure every block is probed when present
    let mut off = 0;
    for len in [base.w_g.len(), base.w_b.len(), base.d.len(), base.q.len()] {
        if len > 0 {
            coords.push(off);
        }
        off += len;
    }
    let h = 1e-5;
    for k in coords {
        let mut p = base.clone();
        flat_add(&mut p, k, h);
        model.set_params(p).unwrap();
        let up = penalized_risk(&model, f, u).unwrap();
        let mut p = base.clone();
        flat_add(&mut p, k, -h);
        model.set_params(p).unwrap();
        let down = penalized_risk(&model, f, u).unwrap();
        let fd = (up - down) / (2.0 * h);
        let an = flat_get(&g, k);
        assert!(
            (fd - an).abs() <= 1e-5 * an.abs().max(scale),
            "coordinate {k}: fd {fd} vs analytic {an}"
        );
    }
}

#[test]
fn mse_examples() {
    let g = unit(10);
    let a = DMatrix::from_fn(3, 10, |i, j| (i * 10 + j) as f64);
    assert_eq!(mse(&a, &a, &g).unwrap(), 0.0);
    let c = 0.7;
    let one = DMatrix::from_element(1, 10, 1.0);
    let err = mse(&(&one * (1.0 + c)), &one, &g).unwrap();
    assert!((err - c * c).abs() < 1e-14);
    let b = a.map(|v| v + libm::sin(v));
    let b2 = a.map(|v| v + 2.0 * libm::sin(v));
    let ratio = mse(&b2, &a, &g).unwrap() / mse(&b, &a, &g).unwrap();
    assert!((ratio - 4.0).abs() < 1e-12);
    let empty = DMatrix::<f64>::zeros(0, 10);
    assert!(mse(&empty, &empty, &g).is_err());
}

#[test]
fn rse_examples() {
    let g = unit(6);
    let u = DMatrix::from_fn(4, 6, |i, j| 1.0 + (i + j) as f64);
    assert_eq!(rse(&u, &u, &g).unwrap(), 0.0);
    assert_eq!(rse(&DMatrix::zeros(4, 6), &u, &g).unwrap(), 1.0);
    let mut z = u.clone();
    z.row_mut(2).fill(0.0);
    assert_eq!(rse(&u, &z, &g), Err(Error::ZeroNorm { index: 2 }));
}

#[test]
fn gradient_vanishes_at_the_trivial_minimum() {
    let m = GreensModel::new(
        KernelSpec::gaussian(&[0.01, 0.01]),
        Some(KernelSpec::gaussian(&[0.01])),
        unit(7),
        unit(5),
        1e-3,
        1e-3,
    )
    .unwrap();
    let g = gradients(&m, &DMatrix::from_element(3, 7, 1.0), &DMatrix::zeros(3, 5)).unwrap();
    assert_eq!(g.norm_inf(), 0.0);
}

#[test]
fn gradients_match_finite_differences_gaussian() {
    let data = poisson_data(12, 15, 3);
    let mut m = GreensModel::new(
        KernelSpec::gaussian(&[0.01, 0.01]),
        None,
        data.x_grid.clone(),
        data.y_grid.clone(),
        1e-2,
        0.0,
    )
    .unwrap();
    randomize(&mut m, 1);
    check_gradient(m, &data.input_matrix(), &data.output_matrix());
}

#[test]
fn gradients_match_finite_differences_with_bias_and_null_spaces() {
    let data = poisson_data(10, 12, 4);
    let mut m = GreensModel::with_null_spaces(
        KernelSpec::gaussian(&[0.02, 0.02]),
        Some(KernelSpec::gaussian(&[0.02])),
        NullBasis::total_degree(2, 2),
        NullBasis::monomials_1d(2),
        data.x_grid.clone(),
        data.y_grid.clone(),
        1e-3,
        1e-2,
    )
    .unwrap();
    randomize(&mut m, 2);
    check_gradient(m, &data.input_matrix(), &data.output_matrix());
}

#[test]
fn gradients_match_finite_differences_structured_kernels() {
    let sym = symmetrize(&KernelSpec::gaussian(&[0.01, 0.01]), &[0], &[1]).unwrap();
    let heat = {
        let g = KernelSpec::gaussian(&[0.01, 0.01, 0.01, 0.01]);
        let s = symmetrize(&symmetrize(&g, &[0], &[2]).unwrap(), &[1], &[3]).unwrap();
        causal_mask(&s, 1, 3, Direction::Causal).unwrap()
    };
    let st = Arc::new(Grid::tensor(&[Grid::uniform((0.0, 1.0), 4).unwrap(), Grid::uniform((0.0, 1.0), 5).unwrap()]).unwrap());
    let cases: Vec<(KernelSpec, Option<KernelSpec>, Arc<Grid>, Arc<Grid>)> = vec![
        (sym, Some(KernelSpec::gaussian(&[0.05])), unit(9), unit(9)),
        (KernelSpec::sobolev1_dirichlet(2), None, unit(8), unit(8)),
        (
            convolutional(&KernelSpec::gaussian(&[0.02]), 1, 1).unwrap(),
            Some(KernelSpec::SobolevTail { order: 1 }),
            unit(7),
            unit(9),
        ),
        (heat, None, st.clone(), st),
    ];
    for (i, (kg, kb, x, y)) in cases.into_iter().enumerate() {
        let mut m = GreensModel::new(kg, kb, x, y, 1e-2, 1e-2).unwrap();
        randomize(&mut m, 10 + i as u64);
        let (f, u) = random_data(&m, 6, 20 + i as u64);
        check_gradient(m, &f, &u);
    }
}

#[test]
fn penalty_only_gradient() {
    let mut m = GreensModel::new(KernelSpec::gaussian(&[0.02, 0.02]), None, unit(6), unit(5), 0.3, 0.0).unwrap();
    randomize(&mut m, 5);
    let f = DMatrix::from_fn(4, 6, |i, j| libm::cos((i * 6 + j) as f64));
    // targets equal to the predictions leave only the penalty
    let u = m.assemble_training().forward_matrix(&f).unwrap();
    let g = gradients(&m, &f, &u).unwrap();
    let dense = KernelOperator::between(m.kernel_g(), &Grid::product(&unit(6), &unit(5)), &Grid::product(&unit(6), &unit(5)))
        .unwrap()
        .to_dense();
    let wts = m.xy_weights().to_vec();
    let wt: DVector<f64> = DVector::from_iterator(30, m.w_g.iter().zip(&wts).map(|(w, c)| w * c));
    let expect = &dense * wt * (2.0 * 0.3);
    for k in 0..30 {
        let e = expect[k] * wts[k];
        assert!((g.w_g[k] - e).abs() < 1e-12 * e.abs().max(1e-3), "{} vs {e}", g.w_g[k]);
    }
}

#[test]
fn adam_first_step_and_zero_gradient() {
    let cfg = TrainConfig::default();
    let mut p = Params {
        w_g: vec![1.0, -2.0],
        w_b: vec![],
        d: vec![0.5],
        q: vec![],
    };
    let start = p.clone();
    let mut st = AdamState::new(&p);
    let g = Params {
        w_g: vec![3.0, -0.02],
        w_b: vec![],
        d: vec![0.0],
        q: vec![],
    };
    adam_step(&mut st, &mut p, &g, &cfg).unwrap();
    assert!((p.w_g[0] - (1.0 - 1e-3 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
    assert!((p.w_g[1] - (-2.0 + 1e-3 * 0.02 / (0.02 + 1e-8))).abs() < 1e-15);
    assert_eq!(p.d[0], 0.5);

    let mut p = start.clone();
    let mut st = AdamState::new(&p);
    let zero = zeros_like(&p);
    for _ in 0..10 {
        adam_step(&mut st, &mut p, &zero, &cfg).unwrap();
    }
    assert_eq!(p, start);
    let bad = Params {
        w_g: vec![1.0],
        w_b: vec![],
        d: vec![],
        q: vec![],
    };
    assert!(adam_step(&mut st, &mut p, &bad, &cfg).is_err());
}

#[test]
fn one_epoch_full_batch_is_one_step() {
    let data = poisson_data(8, 6, 1);
    let m = GreensModel::new(KernelSpec::gaussian(&[0.02, 0.02]), None, data.x_grid.clone(), data.y_grid.clone(), 1e-3, 0.0)
        .unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 6,
        ..TrainConfig::default()
    };
    let (trained, hist) = train(m.clone(), &data, &cfg).unwrap();
    assert_eq!(hist.risk.len(), 1);
    let mut p = m.params();
    let mut st = AdamState::new(&p);
    let g = gradients(&m, &data.input_matrix(), &data.output_matrix()).unwrap();
    adam_step(&mut st, &mut p, &g, &cfg).unwrap();
    assert_eq!(trained.params(), p);
}

#[test]
fn training_is_deterministic_and_decreases_risk() {
    let data = poisson_data(10, 40, 2);
    let m = GreensModel::new(
        KernelSpec::gaussian(&[0.01, 0.01]),
        Some(KernelSpec::gaussian(&[0.01])),
        data.x_grid.clone(),
        data.y_grid.clone(),
        1e-4,
        1e-4,
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 10,
        learning_rate: 1e-2,
        seed: 8,
        ..TrainConfig::default()
    };
    let (_, a) = train(m.clone(), &data, &cfg).unwrap();
    let (_, b) = train(m, &data, &cfg).unwrap();
    let bits = |h: &TrainHistory| h.risk.iter().chain(&h.mse).chain(&h.rse).map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert!(a.risk.last().unwrap() < &a.risk[0]);
    let window = |k: usize| a.risk[k * 10..(k + 1) * 10].iter().sum::<f64>();
    for k in 1..6 {
        assert!(window(k) <= window(k - 1), "window {k}");
    }
}

#[test]
fn config_validation() {
    let c = TrainConfig::default();
    assert!(c.validate(100).is_ok());
    assert!(c.validate(50).is_err());
    assert!(TrainConfig { epochs: 0, ..c.clone() }.validate(100).is_err());
    assert!(TrainConfig { adam_beta1: 1.0, ..c.clone() }.validate(100).is_err());
    assert!(TrainConfig { batch_size: 0, ..c }.validate(100).is_err());
}

fn ridge_model(data: &Dataset, lambda: f64, null_g: NullBasis) -> GreensModel {
    GreensModel::with_null_spaces(
        KernelSpec::gaussian(&[0.02, 0.02]),
        None,
        null_g,
        NullBasis::empty(),
        data.x_grid.clone(),
        data.y_grid.clone(),
        lambda,
        0.0,
    )
    .unwrap()
}

#[test]
fn ridge_without_null_space() {
    let data = poisson_data(10, 8, 6);
    let kg = KernelSpec::gaussian(&[0.02, 0.02]);
    let sol = solve_ridge_exact(&kg, &NullBasis::empty(), &data, 1e-3).unwrap();
    assert!(sol.d.is_empty());
    assert!(sol.residual < 1e-10, "{}", sol.residual);
    // prediction error equals -n lambda c at the optimum
    let mut m = ridge_model(&data, 1e-3, NullBasis::empty());
    m.w_g = sol.weight_field(&data);
    let preds = m.assemble_training().forward_matrix(&data.input_matrix()).unwrap();
    let diff = preds - data.output_matrix();
    let expect = &sol.c * (-8.0 * 1e-3);
    assert!((diff - &expect).amax() < 1e-8 * expect.amax().max(1.0));
}

#[test]
fn ridge_with_huge_lambda_shrinks() {
    let data = poisson_data(8, 5, 7);
    let kg = KernelSpec::gaussian(&[0.02, 0.02]);
    let lambda = 1e6;
    let sol = solve_ridge_exact(&kg, &NullBasis::empty(), &data, lambda).unwrap();
    let u = data.output_matrix();
    assert!(sol.c.norm() <= u.norm() / (5.0 * lambda) * 1.01);
    assert!(solve_ridge_exact(&kg, &NullBasis::empty(), &data, 0.0).is_err());
}

#[test]
fn ridge_solution_is_stationary() {
    for null in [NullBasis::empty(), NullBasis::total_degree(2, 2)] {
        let data = poisson_data(9, 10, 8);
        let kg = KernelSpec::gaussian(&[0.02, 0.02]);
        let sol = solve_ridge_exact(&kg, &null, &data, 1e-3).unwrap();
        let mut m = ridge_model(&data, 1e-3, null.clone());
        m.w_g = sol.weight_field(&data);
        m.d = sol.d.clone();
        let g = gradients(&m, &data.input_matrix(), &data.output_matrix()).unwrap();
        let scale = data.output_matrix().amax();
        assert!(g.norm() <= 1e-6 * scale, "{} vs {scale}", g.norm());
    }
}

#[test]
fn exact_weights_are_stationary_and_agree_with_ridge() {
    let data = poisson_data(9, 10, 9);
    let mut m = GreensModel::with_null_spaces(
        KernelSpec::gaussian(&[0.02, 0.02]),
        Some(KernelSpec::gaussian(&[0.02])),
        NullBasis::empty(),
        NullBasis::monomials_1d(1),
        data.x_grid.clone(),
        data.y_grid.clone(),
        1e-3,
        1e-3,
    )
    .unwrap();
    let p = solve_exact_weights(&m, &data).unwrap();
    m.set_params(p).unwrap();
    let (f, u) = (data.input_matrix(), data.output_matrix());
    let g = gradients(&m, &f, &u).unwrap();
    assert!(g.norm() <= 1e-6 * u.amax(), "{}", g.norm());

    let mut plain = ridge_model(&data, 1e-3, NullBasis::empty());
    let exact = solve_exact_weights(&plain, &data).unwrap();
    plain.set_params(exact).unwrap();
    let r_exact = penalized_risk(&plain, &f, &u).unwrap();
    let sol = solve_ridge_exact(plain.kernel_g(), &NullBasis::empty(), &data, 1e-3).unwrap();
    plain.w_g = sol.weight_field(&data);
    let r_ridge = penalized_risk(&plain, &f, &u).unwrap();
    assert!((r_exact - r_ridge).abs() < 1e-8 * r_ridge, "{r_exact} vs {r_ridge}");
}

#[test]
fn adam_converges_to_the_exact_risk() {
    // narrow kernel: wide ones make the weight-space problem too ill-conditioned
    // for per-coordinate steps to finish in a test budget
    let data = poisson_data(12, 16, 10);
    let m = GreensModel::new(
        KernelSpec::gaussian(&[1e-3, 1e-3]),
        None,
        data.x_grid.clone(),
        data.y_grid.clone(),
        1e-3,
        0.0,
    )
    .unwrap();
    let (f, u) = (data.input_matrix(), data.output_matrix());
    let mut best = m.clone();
    best.set_params(solve_exact_weights(&m, &data).unwrap()).unwrap();
    let target = penalized_risk(&best, &f, &u).unwrap();
    let sol = solve_ridge_exact(m.kernel_g(), &NullBasis::empty(), &data, 1e-3).unwrap();
    let mut ridge = m.clone();
    ridge.w_g = sol.weight_field(&data);
    assert!((penalized_risk(&ridge, &f, &u).unwrap() - target).abs() < 1e-8 * target);
    let cfg = TrainConfig {
        epochs: 3000,
        batch_size: 16,
        learning_rate: 1e-1,
        ..TrainConfig::default()
    };
    let (trained, _) = train(m, &data, &cfg).unwrap();
    let risk = penalized_risk(&trained, &f, &u).unwrap();
    assert!(risk >= target * (1.0 - 1e-10));
    assert!((risk - target) / target < 1e-4, "{risk} vs {target}");
}

#[test]
fn forward_input_sample_matches_matrix_path() {
    let data = poisson_data(8, 3, 11);
    let mut m = ridge_model(&data, 1e-3, NullBasis::empty());
    randomize(&mut m, 3);
    let a = m.assemble_training();
    let p = a.forward_matrix(&data.input_matrix()).unwrap();
    let s: FunctionSample = m.forward(&data.inputs[1]).unwrap();
    for t in 0..8 {
        assert!((p[(1, t)] - s.values[t]).abs() < 1e-12 * p.amax());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rse_is_scale_invariant(seed in 0u64..1000, scales in proptest::collection::vec(0.01f64..100.0, 4)) {
        let g = unit(7);
        let mut rng = RngState::new(seed);
        let u = DMatrix::from_fn(4, 7, |_, _| rng.normal());
        let p = DMatrix::from_fn(4, 7, |_, _| rng.normal());
        let mut us = u.clone();
        let mut ps = p.clone();
        for (i, a) in scales.iter().enumerate() {
            let a = if i % 2 == 0 { *a } else { -*a };
            us.row_mut(i).scale_mut(a);
            ps.row_mut(i).scale_mut(a);
        }
        let r0 = rse(&p, &u, &g).unwrap();
        prop_assert!((rse(&ps, &us, &g).unwrap() - r0).abs() <= 1e-12 * r0.max(1.0));
    }

    #[test]
    fn metrics_ignore_sample_order(seed in 0u64..1000) {
        let g = unit(5);
        let mut rng = RngState::new(seed);
        let u = DMatrix::from_fn(6, 5, |_, _| rng.normal());
        let p = DMatrix::from_fn(6, 5, |_, _| rng.normal());
        let perm = [3usize, 0, 5, 1, 4, 2];
        let up = DMatrix::from_fn(6, 5, |i, j| u[(perm[i], j)]);
        let pp = DMatrix::from_fn(6, 5, |i, j| p[(perm[i], j)]);
        prop_assert!((mse(&p, &u, &g).unwrap() - mse(&pp, &up, &g).unwrap()).abs() < 1e-12);
        prop_assert!((rse(&p, &u, &g).unwrap() - rse(&pp, &up, &g).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn amsgrad_second_moment_never_decreases(seed in 0u64..1000, steps in 1usize..40) {
        let cfg = TrainConfig::default();
        let mut rng = RngState::new(seed);
        let mut p = Params { w_g: vec![0.0; 5], w_b: vec![0.0; 2], d: vec![], q: vec![0.0] };
        let mut st = AdamState::new(&p);
        let mut prev = st.v_max.clone();
        for _ in 0..steps {
            let scale = libm::exp(3.0 * rng.normal());
            let g = Params {
                w_g: (0..5).map(|_| scale * rng.normal()).collect(),
                w_b: (0..2).map(|_| rng.normal()).collect(),
                d: vec![],
                q: vec![rng.normal()],
            };
            adam_step(&mut st, &mut p, &g, &cfg).unwrap();
            let now = st.v_max.clone();
            let a: Vec<f64> = now.w_g.iter().chain(&now.w_b).chain(&now.q).copied().collect();
            let b: Vec<f64> = prev.w_g.iter().chain(&prev.w_b).chain(&prev.q).copied().collect();
            prop_assert!(a.iter().zip(&b).all(|(x, y)| x >= y));
            prev = now;
        }
    }
}
