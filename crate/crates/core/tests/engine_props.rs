use hamgnn::engine::{
    check_gradient, forward, grad, jacobian, relative_error, Activation, Binder, Bindings, Expr, MlpParams, Program,
    Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A smooth scalar composite of a random tanh layer, sines, a softplus and
/// a product term.
fn composite(x: &Expr<f64>, d: usize, rng: &mut ChaCha8Rng) -> Expr<f64> {
    let net = MlpParams::<f64>::init(&[d, 5, 3], &[Activation::Tanh, Activation::Sin], rng);
    let h = net.bind(&mut Binder::frozen(), "n").apply(x);
    let first = x.slice_cols(0, 1);
    let last = x.slice_cols(d - 1, 1);
    h.softplus()
        .sum()
        .add(&first.mul(&last).sin().sum())
        .add(&x.square().sum().scale(0.3).exp())
}

fn run(program: &Program<f64>, x: &Expr<f64>, v: &[f64]) -> Vec<f64> {
    let b = Bindings::new().with(x, Tensor::new(&[1, v.len()], v.to_vec()).unwrap());
    program.run(&b).unwrap().remove(0).into_data()
}

#[test]
fn nested_gradient_matches_second_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for trial in 0..100 {
        let d = rng.gen_range(1..=16);
        let x = Expr::<f64>::leaf("x", &[1, d]);
        let f = composite(&x, d, &mut rng);
        let g = grad(&f, &x).unwrap();
        // Hessian row i = grad(g_i)
        let rows: Vec<Expr<f64>> = (0..d).map(|i| grad(&g.slice_cols(i, 1).sum(), &x).unwrap()).collect();
        let hess = Program::new(&rows);
        let value = Program::new(&[f]);
        let point: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = Bindings::new().with(&x, Tensor::new(&[1, d], point.clone()).unwrap());
        let analytic: Vec<Vec<f64>> = hess.run(&b).unwrap().into_iter().map(Tensor::into_data).collect();
        let h = 1e-4;
        let at = |di: usize, si: f64, dj: usize, sj: f64| {
            let mut p = point.clone();
            p[di] += si * h;
            p[dj] += sj * h;
            run(&value, &x, &p)[0]
        };
        let mut worst = 0.0f64;
        let mut scale = 1e-8f64;
        for i in 0..d {
            for j in 0..d {
                let fd = (at(i, 1.0, j, 1.0) - at(i, 1.0, j, -1.0) - at(i, -1.0, j, 1.0) + at(i, -1.0, j, -1.0))
                    / (4.0 * h * h);
                worst = worst.max((analytic[i][j] - fd).abs());
                scale = scale.max(analytic[i][j].abs());
            }
        }
        assert!(worst / scale <= 1e-4, "trial {trial} (d = {d}): {}", worst / scale);
    }
}

#[test]
fn two_layer_tanh_jacobian_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..20 {
        let (n, m) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let net = MlpParams::<f64>::init(&[n, 8, m], &[Activation::Tanh, Activation::Tanh], &mut rng);
        let x = Expr::<f64>::leaf("x", &[1, n]);
        let f = net.bind(&mut Binder::frozen(), "n").apply(&x);
        let point: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = Bindings::new().with(&x, Tensor::new(&[1, n], point.clone()).unwrap());
        let j = jacobian(&f, &x, &b).unwrap();
        assert_eq!(j.shape(), &[m, n]);
        let program = Program::new(&[f]);
        let h = 1e-5;
        for c in 0..n {
            let mut up = point.clone();
            let mut down = point.clone();
            up[c] += h;
            down[c] -= h;
            let (fu, fd) = (run(&program, &x, &up), run(&program, &x, &down));
            for r in 0..m {
                let numeric = (fu[r] - fd[r]) / (2.0 * h);
                let err = relative_error(j.at(r, c), numeric);
                assert!(err <= 1e-6, "entry ({r}, {c}): {err}");
            }
        }
    }
}

#[test]
fn convex_network_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    // kappa nets have tiny gradient entries, so roundoff needs a larger step
    for (act, step) in [(Activation::Rehu, 1e-6), (Activation::Kappa, 1e-4)] {
        for _ in 0..10 {
            let mut net = MlpParams::<f64>::init(&[4, 6, 6, 1], &[act, act, act], &mut rng);
            net.clamp_nonnegative_after_first();
            let x = Expr::<f64>::leaf("x", &[3, 4]);
            let f = net.bind(&mut Binder::frozen(), "n").apply(&x).sum();
            let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b = Bindings::new().with(&x, Tensor::new(&[3, 4], data).unwrap());
            let report = check_gradient(&f, &x, &b, step, 1e-5).unwrap();
            assert!(report.passed, "{act:?}: {report:?}");
        }
    }
}

#[test]
fn parameter_gradients_through_binder() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = MlpParams::<f64>::init(&[3, 4, 2], &[Activation::Tanh, Activation::Sigmoid], &mut rng);
    let mut binder = Binder::new();
    let vars = net.bind(&mut binder, "n");
    let x = Expr::constant(Tensor::from_f64(&[2, 3], &[0.1, 0.2, -0.3, 0.5, -1.0, 0.7]).unwrap());
    let f = vars.apply(&x).square().sum();
    for leaf in binder.leaves() {
        let report = check_gradient(&f, leaf, binder.bindings(), 1e-6, 1e-6).unwrap();
        assert!(report.passed, "{report:?}");
    }
}

fn mlp_scalar(x: &Expr<f64>, d: usize, rng: &mut ChaCha8Rng) -> Expr<f64> {
    let net = MlpParams::<f64>::init(&[d, 6, 1], &[Activation::Tanh, Activation::Sin], rng);
    net.bind(&mut Binder::frozen(), "n").apply(x).sum()
}

type Builder = fn(&Expr<f64>, usize, &mut ChaCha8Rng) -> Expr<f64>;

fn pair(coef_a: f64, coef_b: f64, seed: u64, build: Builder) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 5;
    let x = Expr::<f64>::leaf("x", &[1, d]);
    let f = build(&x, d, &mut rng);
    let g = build(&x, d, &mut rng);
    let combined = grad(&f.scale(coef_a).add(&g.scale(coef_b)), &x).unwrap();
    let separate = grad(&f, &x)
        .unwrap()
        .scale(coef_a)
        .add(&grad(&g, &x).unwrap().scale(coef_b));
    let point: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b = Bindings::new().with(&x, Tensor::new(&[1, d], point).unwrap());
    (
        forward(&combined, &b).unwrap().into_data(),
        forward(&separate, &b).unwrap().into_data(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_is_linear_exactly_for_power_of_two_weights(
        ea in -4i32..4, eb in -4i32..4, sa in prop::bool::ANY, sb in prop::bool::ANY, seed in 0u64..1000,
    ) {
        let a = if sa { -1.0 } else { 1.0 } * 2f64.powi(ea);
        let b = if sb { -1.0 } else { 1.0 } * 2f64.powi(eb);
        let (combined, separate) = pair(a, b, seed, mlp_scalar);
        prop_assert_eq!(combined, separate);
    }

    #[test]
    fn gradient_is_linear_to_rounding(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let (combined, separate) = pair(a, b, seed, composite);
        for (x, y) in combined.iter().zip(&separate) {
            prop_assert!((x - y).abs() <= 1e-13 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn tensor_construction_checks_length(rows in 0usize..5, cols in 0usize..5, extra in 1usize..3) {
        prop_assert!(Tensor::<f64>::new(&[rows, cols], vec![0.0; rows * cols]).is_ok());
        prop_assert!(Tensor::<f64>::new(&[rows, cols], vec![0.0; rows * cols + extra]).is_err());
    }
}
