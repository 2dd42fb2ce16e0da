use super::*;
use rand::Rng;

fn scalar(tape: &mut Tape, v: f64, trainable: bool) -> ValueId {
    let t = Tensor::scalar(v).unwrap();
    if trainable {
        tape.param(t)
    } else {
        tape.input(t)
    }
}

#[test]
fn square_gradient_closed_form() {
    let mut tape = Tape::new();
    let x = scalar(&mut tape, 3.0, true);
    let y = tape.mul(x, x).unwrap();
    let grads = tape.backward(y).unwrap();
    assert!((grads.wrt(x).data()[0] - 6.0).abs() < 1e-15);
}

#[test]
fn tanh_gradient_at_zero_is_one() {
    let mut tape = Tape::new();
    let x = scalar(&mut tape, 0.0, true);
    let y = tape.tanh(x).unwrap();
    let grads = tape.backward(y).unwrap();
    assert_eq!(grads.wrt(x).data()[0], 1.0);
}

#[test]
fn non_participating_parameters_get_zero_gradients() {
    let mut tape = Tape::new();
    let x = scalar(&mut tape, 2.0, true);
    let unused = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
    let y = tape.mul(x, x).unwrap();
    let grads = tape.backward(y).unwrap();
    assert_eq!(grads.wrt(unused).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn swish_identities() {
    let mut tape = Tape::new();
    let zero = scalar(&mut tape, 0.0, false);
    let s0 = tape.swish(zero).unwrap();
    assert_eq!(tape.value(s0).data()[0], 0.0);
    let big = scalar(&mut tape, 50.0, false);
    let s50 = tape.swish(big).unwrap();
    assert!((tape.value(s50).data()[0] / 50.0 - 1.0).abs() <= 1e-12);
}

#[test]
fn random_composition_matches_finite_differences() {
    // A three-layer composition of matmul/add/tanh/swish/mul reduced to a
    // scalar; every parameter's gradient is checked against central
    // differences.
    let mut rng = seeded_rng(99);
    let dims = [4usize, 5, 3];
    let mk = |rng: &mut SeedRng, r: usize, c: usize| {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-0.8..0.8)).collect()).unwrap()
    };
    let w1 = mk(&mut rng, dims[1], dims[0]);
    let w2 = mk(&mut rng, dims[2], dims[1]);
    let b1 = Tensor::vector((0..dims[1]).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
    let b2 = Tensor::vector((0..dims[2]).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
    let x = Tensor::vector((0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

    let eval = |w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor, grad: bool| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let (w1i, b1i, w2i, b2i) = if grad {
            (
                tape.param(w1.clone()),
                tape.param(b1.clone()),
                tape.param(w2.clone()),
                tape.param(b2.clone()),
            )
        } else {
            (
                tape.input(w1.clone()),
                tape.input(b1.clone()),
                tape.input(w2.clone()),
                tape.input(b2.clone()),
            )
        };
        let xi = tape.input(x.clone());
        let a1 = tape.matmul(w1i, xi).unwrap();
        let a1 = tape.add(a1, b1i).unwrap();
        let h1 = tape.tanh(a1).unwrap();
        let s1 = tape.swish(h1).unwrap();
        let a2 = tape.matmul(w2i, s1).unwrap();
        let a2 = tape.add(a2, b2i).unwrap();
        let h2 = tape.sigmoid(a2).unwrap();
        let sq = tape.mul(h2, h2).unwrap();
        let loss = tape.mean(sq).unwrap();
        let grads = if grad {
            let g = tape.backward(loss).unwrap();
            vec![
                g.wrt(w1i).clone(),
                g.wrt(b1i).clone(),
                g.wrt(w2i).clone(),
                g.wrt(b2i).clone(),
            ]
        } else {
            Vec::new()
        };
        (tape.value(loss).item(), grads)
    };

    let (_, analytic) = eval(&w1, &b1, &w2, &b2, true);
    let h = 1e-6;
    let tensors = [&w1, &b1, &w2, &b2];
    for (pi, base) in tensors.iter().enumerate() {
        for k in 0..base.len() {
            let bump = |delta: f64| {
                let mut c: Vec<Tensor> = tensors.iter().map(|t| (*t).clone()).collect();
                c[pi].data_mut()[k] += delta;
                eval(&c[0], &c[1], &c[2], &c[3], false).0
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let an = analytic[pi].data()[k];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(
                (an - fd).abs() / denom <= 1e-6,
                "tensor {pi} elem {k}: analytic {an} vs fd {fd}"
            );
        }
    }
}

#[test]
fn every_primitive_passes_finite_difference_checks() {
    // Scalar-in, scalar-out probes for each differentiable primitive at 10
    // random points, relative tolerance 1e-6.
    type Build = fn(&mut Tape, ValueId) -> ValueId;
    let cases: Vec<(&str, Build, (f64, f64))> = vec![
        ("tanh", |t, x| t.tanh(x).unwrap(), (-2.0, 2.0)),
        ("sigmoid", |t, x| t.sigmoid(x).unwrap(), (-3.0, 3.0)),
        ("swish", |t, x| t.swish(x).unwrap(), (-3.0, 3.0)),
        ("exp", |t, x| t.exp(x).unwrap(), (-2.0, 2.0)),
        ("ln", |t, x| t.ln(x).unwrap(), (0.5, 3.0)),
        ("sqrt", |t, x| t.sqrt(x).unwrap(), (0.5, 3.0)),
        ("abs", |t, x| t.abs(x).unwrap(), (0.2, 2.0)),
        ("neg", |t, x| t.neg(x).unwrap(), (-2.0, 2.0)),
        ("scale", |t, x| t.scale(x, 2.5).unwrap(), (-2.0, 2.0)),
        ("offset", |t, x| t.offset(x, -1.25).unwrap(), (-2.0, 2.0)),
        ("clamp", |t, x| t.clamp(x, -5.0, 5.0).unwrap(), (-2.0, 2.0)),
        ("mul_self", |t, x| t.mul(x, x).unwrap(), (-2.0, 2.0)),
        ("sum", |t, x| t.sum(x).unwrap(), (-2.0, 2.0)),
        ("mean", |t, x| t.mean(x).unwrap(), (-2.0, 2.0)),
    ];
    let mut rng = seeded_rng(314);
    for (name, build, range) in cases {
        for _ in 0..10 {
            let x0: f64 = rng.random_range(range.0..range.1);
            let eval = |v: f64, grad: bool| -> (f64, f64) {
                let mut tape = Tape::new();
                let x = scalar(&mut tape, v, grad);
                let y = build(&mut tape, x);
                let loss = tape.sum(y).unwrap();
                let g = if grad {
                    tape.backward(loss).unwrap().wrt(x).data()[0]
                } else {
                    0.0
                };
                (tape.value(loss).item(), g)
            };
            let (_, analytic) = eval(x0, true);
            let h = 1e-6;
            let fd = (eval(x0 + h, false).0 - eval(x0 - h, false).0) / (2.0 * h);
            let denom = analytic.abs().max(fd.abs()).max(1e-8);
            assert!(
                (analytic - fd).abs() / denom <= 1e-6,
                "{name} at {x0}: analytic {analytic} vs fd {fd}"
            );
        }
    }
}

#[test]
fn concat_and_slice_gradients_route_correctly() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
    let b = tape.param(Tensor::vector(vec![3.0]).unwrap());
    let c = tape.concat(&[a, b]).unwrap();
    let s = tape.slice(c, 1, 2).unwrap(); // [2.0, 3.0]
    let sq = tape.mul(s, s).unwrap();
    let loss = tape.sum(sq).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.wrt(a).data(), &[0.0, 4.0]);
    assert_eq!(grads.wrt(b).data(), &[6.0]);
}

#[test]
fn matmul_matrix_matrix_gradients_match_fd() {
    let mut rng = seeded_rng(5);
    let a0 = Tensor::matrix(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let b0 = Tensor::matrix(3, 2, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let eval = |a: &Tensor, b: &Tensor, grad: bool| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let (ai, bi) = if grad {
            (tape.param(a.clone()), tape.param(b.clone()))
        } else {
            (tape.input(a.clone()), tape.input(b.clone()))
        };
        let c = tape.matmul(ai, bi).unwrap();
        let sq = tape.mul(c, c).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = if grad {
            let g = tape.backward(loss).unwrap();
            vec![g.wrt(ai).clone(), g.wrt(bi).clone()]
        } else {
            Vec::new()
        };
        (tape.value(loss).item(), g)
    };
    let (_, analytic) = eval(&a0, &b0, true);
    let h = 1e-6;
    for (pi, base) in [&a0, &b0].iter().enumerate() {
        for k in 0..base.len() {
            let bump = |delta: f64| {
                let mut a = a0.clone();
                let mut b = b0.clone();
                if pi == 0 {
                    a.data_mut()[k] += delta;
                } else {
                    b.data_mut()[k] += delta;
                }
                eval(&a, &b, false).0
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let an = analytic[pi].data()[k];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!((an - fd).abs() / denom <= 1e-6);
        }
    }
}

#[test]
fn shape_mismatches_are_rejected() {
    let mut tape = Tape::new();
    let a = tape.input(Tensor::vector(vec![1.0, 2.0]).unwrap());
    let b = tape.input(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
    assert!(matches!(tape.add(a, b), Err(SubstrateError::ShapeMismatch { .. })));
    let m = tape.input(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
    assert!(matches!(tape.matmul(m, b), Err(SubstrateError::ShapeMismatch { .. })));
    assert!(matches!(tape.matmul(b, b), Err(SubstrateError::ShapeMismatch { .. })));
    assert!(tape.slice(a, 1, 2).is_err());
}

#[test]
fn numeric_faults_surface_where_they_occur() {
    let mut tape = Tape::new();
    let big = tape.input(Tensor::scalar(1e308).unwrap());
    match tape.exp(big) {
        Err(SubstrateError::NumericFault { op }) => assert_eq!(op, "exp"),
        other => panic!("expected NumericFault, got {other:?}"),
    }
    // ln of a negative number is NaN.
    let neg = tape.input(Tensor::scalar(-1.0).unwrap());
    assert!(matches!(tape.ln(neg), Err(SubstrateError::NumericFault { .. })));
    // Tensor construction rejects non-finite values outright.
    assert!(Tensor::vector(vec![f64::NAN]).is_err());
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut tape = Tape::new();
        let mut rng = seeded_rng(7);
        let x = tape.input(gaussian_sample(&mut rng, &[32]));
        let s = tape.swish(x).unwrap();
        let t = tape.tanh(s).unwrap();
        let loss = tape.mean(t).unwrap();
        tape.value(loss).item()
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

#[test]
fn rollback_discards_nodes() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::scalar(1.0).unwrap());
    let mark = tape.mark();
    for _ in 0..10 {
        let y = tape.tanh(x).unwrap();
        let _ = tape.sum(y).unwrap();
        tape.rollback(mark);
    }
    assert_eq!(tape.len(), 1);
}

mod adam_tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut state = AdamState::new(AdamConfig::default(), &[vec![3]]);
        let mut params = vec![Tensor::vector(vec![1.0, -2.0, 0.5]).unwrap()];
        let grads = vec![Tensor::zeros(&[3])];
        state.step(&mut params, &grads).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamConfig::with_lr(0.01);
        let mut state = AdamState::new(cfg, &[vec![2]]);
        let mut params = vec![Tensor::vector(vec![0.0, 0.0]).unwrap()];
        let grads = vec![Tensor::vector(vec![0.4, -3.0]).unwrap()];
        state.step(&mut params, &grads).unwrap();
        // Bias-corrected m = g, v = g^2, so the update is lr * sign(g) up to
        // the epsilon in the denominator.
        assert!((params[0].data()[0] + 0.01).abs() < 0.01 * 1e-6);
        assert!((params[0].data()[1] - 0.01).abs() < 0.01 * 1e-6);
    }

    #[test]
    fn two_steps_match_hand_computed_trajectory() {
        // Quadratic f(x) = x^2 / 2, gradient x, starting at x = 1.
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        let mut state = AdamState::new(cfg, &[vec![1]]);
        let mut params = vec![Tensor::scalar(1.0).unwrap()];

        // By hand, step 1: g = 1; m = 0.1, v = 0.001; m^ = 1, v^ = 1;
        // x <- 1 - 0.1 * 1 / (1 + 1e-8).
        let g1 = params[0].data()[0];
        state.step(&mut params, &[Tensor::scalar(g1).unwrap()]).unwrap();
        let x1_hand = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((params[0].data()[0] - x1_hand).abs() < 1e-12);

        // Step 2: g = x1; m = 0.09 + 0.1 g, v = 0.000999 + 0.001 g^2;
        // bias corrections 1 - 0.9^2 and 1 - 0.999^2.
        let g2 = params[0].data()[0];
        state.step(&mut params, &[Tensor::scalar(g2).unwrap()]).unwrap();
        let m2 = 0.9 * 0.1 + 0.1 * g2;
        let v2 = 0.999 * 0.001 + 0.001 * g2 * g2;
        let m_hat = m2 / (1.0 - 0.9f64.powi(2));
        let v_hat = v2 / (1.0 - 0.999f64.powi(2));
        let x2_hand = x1_hand - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((params[0].data()[0] - x2_hand).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut state = AdamState::new(AdamConfig::default(), &[vec![2]]);
        let mut params = vec![Tensor::vector(vec![0.0, 0.0]).unwrap()];
        let grads = vec![Tensor::vector(vec![1.0]).unwrap()];
        assert!(state.step(&mut params, &grads).is_err());
    }
}

mod rng_tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = seeded_rng(123);
        let mut b = seeded_rng(123);
        assert_eq!(gaussian_sample(&mut a, &[16]), gaussian_sample(&mut b, &[16]));
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = seeded_rng(123);
        let mut b = seeded_rng(124);
        assert_ne!(gaussian_sample(&mut a, &[16]), gaussian_sample(&mut b, &[16]));
    }

    #[test]
    fn moments_of_large_sample() {
        let mut rng = seeded_rng(777);
        let t = gaussian_sample(&mut rng, &[100_000]);
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() <= 0.02, "mean {mean}");
        assert!((var - 1.0).abs() <= 0.03, "variance {var}");
    }

    #[test]
    fn child_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..1000u64 {
            assert!(seen.insert(child_seed(42, i)));
        }
        assert_ne!(child_seed(1, 0), child_seed(2, 0));
    }
}
