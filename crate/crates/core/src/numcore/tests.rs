use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// Compares tape gradients of `f(inputs)` with central differences (ε = 1e-5).
fn gradcheck(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars);
    let mut grads = GradStore::default();
    tape.backward(out, &mut grads).unwrap();
    let eval = |xs: &[Tensor]| {
        let mut tp = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| tp.leaf(x.clone())).collect();
        let o = f(&mut tp, &vs);
        tp.value(o).item()
    };
    let eps = 1e-5;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).map(|g| g.to_vec()).unwrap_or(vec![0.0; x.numel()]);
        for j in 0..x.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                rel < 1e-4,
                "input {k} entry {j}: analytic {a} numeric {numeric} rel {rel}"
            );
        }
    }
}

/// Reduces a matrix output to a scalar with fixed, non-uniform weights so
/// that every output entry reaches the loss with a distinct coefficient.
fn weighted_sum(tape: &mut Tape, v: Var) -> Var {
    let shape = tape.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(&shape, (0..n).map(|i| 0.3 + (i as f64 * 0.77).sin()).collect()).unwrap();
    let w = tape.constant(w);
    let p = tape.mul(v, w).unwrap();
    tape.sum(p).unwrap()
}

#[test]
fn matmul_hand_computed() {
    // [1 2 3; 4 5 6] · [7 8; 9 10; 11 12] = [58 64; 139 154]
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
    let b = tape.constant(t(&[3, 2], &[7., 8., 9., 10., 11., 12.]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[58., 64., 139., 154.]);
    assert_eq!(tape.value(c).shape(), &[2, 2]);
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("[2, 3] vs [2, 3]"));
}

#[test]
fn softmax_uniform_and_one_hot() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::filled(&[2, 4], 0.7));
    let zeros: Rc<[f64]> = vec![0.0; 8].into();
    let y = tape.softmax_masked(x, &zeros).unwrap();
    assert!(tape.value(y).data().iter().all(|v| (v - 0.25).abs() < 1e-15));

    let mut mask = vec![MASK_NEG; 8];
    mask[2] = 0.0;
    mask[4] = 0.0;
    let mask: Rc<[f64]> = mask.into();
    let y = tape.softmax_masked(x, &mask).unwrap();
    assert_eq!(tape.value(y).data(), &[0., 0., 1., 0., 1., 0., 0., 0.]);
}

#[test]
fn fully_masked_row_is_zero_with_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2, 2], &[0.3, -0.2, 1.0, 2.0]));
    let mask: Rc<[f64]> = vec![MASK_NEG, MASK_NEG, 0.0, 0.0].into();
    let y = tape.softmax_masked(x, &mask).unwrap();
    assert_eq!(&tape.value(y).data()[..2], &[0.0, 0.0]);
    let s = weighted_sum(&mut tape, y);
    tape.backward(s, &mut GradStore::default()).unwrap();
    let g = tape.grad(x).unwrap();
    assert_eq!(&g[..2], &[0.0, 0.0]);
    assert!(g[2] != 0.0);
}

#[test]
fn backward_sum_and_square() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]));
    let s = tape.sum(x).unwrap();
    tape.backward(s, &mut GradStore::default()).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    tape.backward(s, &mut GradStore::default()).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 1.0]);
}

#[test]
fn repeated_backward_accumulates() {
    let mut params = ParamStore::new();
    let id = params.add("w", t(&[2], &[1.0, 2.0]));
    let mut tape = Tape::with_params(&params);
    let w = tape.param(id);
    let s = tape.sum(w).unwrap();
    let mut grads = GradStore::new(&params);
    tape.backward(s, &mut grads).unwrap();
    tape.backward(s, &mut grads).unwrap();
    assert_eq!(grads.get(id).unwrap(), &[2.0, 2.0]);
    assert_eq!(tape.grad(w).unwrap(), &[2.0, 2.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[2, 2]));
    assert!(matches!(
        tape.backward(x, &mut GradStore::default()),
        Err(TensorError::NonScalarLoss { .. })
    ));
}

#[test]
fn checked_mode_catches_non_finite() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1], &[1e200]));
    let y = tape.mul(x, x);
    assert!(matches!(y, Err(TensorError::NonFinite { op: "mul" })));
}

#[test]
fn silog_examples() {
    assert_eq!(silog(&[1.0, 3.0], &[1.0, 3.0], 0.7).unwrap(), 0.0);
    // d = [-ln 2, 0]: ln²2/2 - 0.5·(ln2/2)²
    let v = silog(&[1.0, 2.0], &[2.0, 2.0], 0.5).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((v - (ln2 * ln2 / 2.0 - 0.5 * (ln2 / 2.0).powi(2))).abs() < 1e-15);
    assert!((v - 0.1801).abs() < 1e-4);
    assert!(silog(&[0.0, 1.0], &[1.0, 1.0], 0.5).is_err());
    assert!(silog(&[1.0, 1.0], &[-1.0, 1.0], 0.5).is_err());

    let mut tape = Tape::new();
    let p = tape.leaf(t(&[2], &[1.0, -1.0]));
    assert!(matches!(
        tape.silog_loss(p, &[1.0, 1.0], 0.5),
        Err(TensorError::NonPositive { .. })
    ));
}

#[test]
fn cross_entropy_and_mse_values() {
    let mut tape = Tape::new();
    let z = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
    let l = tape.cross_entropy(z, 1).unwrap();
    assert!((tape.value(l).item() - 3f64.ln()).abs() < 1e-15);
    let p = tape.constant(t(&[2], &[1.0, 3.0]));
    let l = tape.mse_loss(p, &[0.0, 1.0]).unwrap();
    assert_eq!(tape.value(l).item(), 2.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn silog_joint_scale_invariance(
        vals in prop::collection::vec((0.1f64..20.0, 0.1f64..20.0), 1..40),
        c in 0.1f64..10.0,
        lambda in 0.0f64..1.0,
    ) {
        let (p, y): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
        let base = silog(&p, &y, lambda).unwrap();
        let cp: Vec<f64> = p.iter().map(|v| v * c).collect();
        let cy: Vec<f64> = y.iter().map(|v| v * c).collect();
        prop_assert!((silog(&cp, &cy, lambda).unwrap() - base).abs() < 1e-9);
        // λ = 1: scaling only the prediction leaves the loss unchanged.
        let b1 = silog(&p, &y, 1.0).unwrap();
        prop_assert!((silog(&cp, &y, 1.0).unwrap() - b1).abs() < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one_over_visible(
        logits in prop::collection::vec(-5.0f64..5.0, 12),
        visible in prop::collection::vec(any::<bool>(), 12),
    ) {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3, 4], &logits));
        let mask: Rc<[f64]> = visible.iter().map(|&v| if v { 0.0 } else { MASK_NEG }).collect();
        let y = tape.softmax_masked(x, &mask).unwrap();
        for r in 0..3 {
            let row = tape.value(y).row(r);
            let any = visible[r * 4..r * 4 + 4].iter().any(|v| *v);
            let s: f64 = row.iter().sum();
            if any {
                prop_assert!((s - 1.0).abs() < 1e-12);
            } else {
                prop_assert_eq!(s, 0.0);
            }
            for j in 0..4 {
                if !visible[r * 4 + j] {
                    prop_assert_eq!(row[j], 0.0);
                }
            }
        }
    }
}

#[test]
fn gradcheck_every_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let bt = random(&[2, 4], &mut rng);
    let c = random(&[3, 4], &mut rng);
    let row = random(&[4], &mut rng);
    let ids = [2usize, 0, 2, 1];

    gradcheck(&[a.clone(), b.clone()], |tp, v| {
        let y = tp.matmul(v[0], v[1]).unwrap();
        weighted_sum(tp, y)
    });
    gradcheck(&[a.clone(), bt.clone()], |tp, v| {
        let y = tp.matmul_nt(v[0], v[1]).unwrap();
        weighted_sum(tp, y)
    });
    gradcheck(&[a.clone(), c.clone()], |tp, v| {
        let s = tp.add(v[0], v[1]).unwrap();
        let m = tp.mul(s, v[1]).unwrap();
        let d = tp.sub(m, v[0]).unwrap();
        let y = tp.scale(d, -0.7).unwrap();
        weighted_sum(tp, y)
    });
    gradcheck(&[a.clone(), row.clone()], |tp, v| {
        let y = tp.add_row(v[0], v[1]).unwrap();
        weighted_sum(tp, y)
    });
    gradcheck(&[a.clone()], |tp, v| {
        let y = tp.transpose(v[0]).unwrap();
        let y = tp.reshape(y, &[2, 6]).unwrap();
        weighted_sum(tp, y)
    });
    gradcheck(&[a.clone(), c.clone()], |tp, v| {
        let r = tp.concat_rows(&[v[0], v[1]]).unwrap();
        let s = tp.slice_rows(r, 2, 5).unwrap();
        let k = tp.concat_cols(&[s, v[0]]).unwrap();
        let y = tp.slice_cols(k, 1, 6).unwrap();
        weighted_sum(tp, y)
    });
    gradcheck(&[random(&[3, 4], &mut rng)], |tp, v| {
        let y = tp.embedding(v[0], &ids).unwrap();
        weighted_sum(tp, y)
    });
    gradcheck(&[a.clone(), row.clone(), random(&[4], &mut rng)], |tp, v| {
        let y = tp.layer_norm(v[0], v[1], v[2]).unwrap();
        weighted_sum(tp, y)
    });
    gradcheck(&[a.clone()], |tp, v| {
        let g = tp.gelu(v[0]).unwrap();
        let s = tp.sigmoid(g).unwrap();
        let p = tp.softplus(s).unwrap();
        weighted_sum(tp, p)
    });
    gradcheck(&[t(&[5], &[0.4, -0.3, 1.2, -2.0, 0.05])], |tp, v| {
        let y = tp.relu(v[0]).unwrap();
        weighted_sum(tp, y)
    });
    let mut mvals: Vec<f64> = (0..12).map(|i| if i % 5 == 3 { MASK_NEG } else { 0.0 }).collect();
    mvals[0] = -0.3;
    let mask: Rc<[f64]> = mvals.into();
    gradcheck(&[a.clone()], move |tp, v| {
        let y = tp.softmax_masked(v[0], &mask).unwrap();
        weighted_sum(tp, y)
    });
    gradcheck(&[a.clone()], |tp, v| {
        let y = tp.normalize_rows(v[0]).unwrap();
        weighted_sum(tp, y)
    });
    gradcheck(&[a.clone()], |tp, v| {
        let s = tp.sum(v[0]).unwrap();
        let m = tp.mean(v[0]).unwrap();
        let p = tp.mul(s, m).unwrap();
        tp.scale(p, 0.5).unwrap()
    });
    let target: Vec<f64> = (0..12).map(|i| (i as f64 * 0.3).cos()).collect();
    gradcheck(&[a.clone()], move |tp, v| tp.mse_loss(v[0], &target).unwrap());
    let pos = Tensor::new(&[6], (0..6).map(|_| rng.gen_range(0.2..5.0)).collect()).unwrap();
    let depth_t: Vec<f64> = (0..6).map(|i| 0.5 + i as f64).collect();
    gradcheck(&[pos], move |tp, v| tp.silog_loss(v[0], &depth_t, 0.5).unwrap());
    gradcheck(&[row], |tp, v| tp.cross_entropy(v[0], 2).unwrap());
}
