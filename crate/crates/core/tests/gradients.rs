//! Central-difference gradient checks for every differentiable primitive.
//! Probes avoid kinks (|x| at 0, clamp boundaries) by sampling offset ranges.

use rand::Rng;
use vstain_core::rng::stream;
use vstain_core::tensor::grad_check;
use vstain_core::Tensor;

fn randt(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = stream(seed, 0);
    let n: usize = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn assert_pass(name: &str, err: f64) {
    assert!(err < 1e-4, "{name}: grad check error {err:.3e} >= 1e-4");
    // Smooth primitives should in fact do much better than the gate.
    assert!(err.is_finite());
}

#[test]
fn elementwise_unary_ops() {
    let x = randt(&[3, 4], 0.2, 1.5, 1);
    for (name, f) in [
        ("neg", Box::new(|t: &Tensor<f64>| t.neg()) as Box<dyn Fn(&Tensor<f64>) -> Tensor<f64>>),
        ("abs", Box::new(|t| t.abs())),
        ("exp", Box::new(|t| t.exp())),
        ("ln_clamped", Box::new(|t| t.ln_clamped(1e-7))),
        ("sqrt", Box::new(|t| t.sqrt())),
        ("sigmoid", Box::new(|t| t.sigmoid())),
        ("leaky_relu", Box::new(|t| t.leaky_relu(0.2))),
        ("relu", Box::new(|t| t.relu())),
        ("scale", Box::new(|t| t.scale(-2.5))),
        ("add_const", Box::new(|t| t.add_const(0.7))),
        ("clamp_min", Box::new(|t| t.clamp_min(0.05))),
    ] {
        let err = grad_check(|| Ok(f(&x).sum_all()), &[x.clone()]).unwrap();
        assert_pass(name, err);
    }
    // abs on strictly negative values
    let xn = randt(&[5], -1.5, -0.2, 2);
    let err = grad_check(|| Ok(xn.abs().mean_all()), &[xn.clone()]).unwrap();
    assert_pass("abs(neg)", err);
}

#[test]
fn elementwise_binary_ops() {
    let a = randt(&[2, 5], -1.0, 1.0, 3);
    let b = randt(&[2, 5], 0.3, 2.0, 4);
    for (name, f) in [
        (
            "add",
            Box::new(|x: &Tensor<f64>, y: &Tensor<f64>| x.add(y).unwrap())
                as Box<dyn Fn(&Tensor<f64>, &Tensor<f64>) -> Tensor<f64>>,
        ),
        ("sub", Box::new(|x, y| x.sub(y).unwrap())),
        ("mul", Box::new(|x, y| x.mul(y).unwrap())),
    ] {
        let err = grad_check(|| Ok(f(&a, &b).sum_all()), &[a.clone(), b.clone()]).unwrap();
        assert_pass(name, err);
    }
}

#[test]
fn bias_and_scalar_broadcast_ops() {
    let x3 = randt(&[2, 3, 3], -1.0, 1.0, 5);
    let bc = randt(&[2], -0.5, 0.5, 6);
    let err = grad_check(
        || Ok(x3.add_chan_bias(&bc)?.sum_all()),
        &[x3.clone(), bc.clone()],
    )
    .unwrap();
    assert_pass("add_chan_bias", err);

    let x2 = randt(&[4, 3], -1.0, 1.0, 7);
    let br = randt(&[3], -0.5, 0.5, 8);
    let err = grad_check(
        || Ok(x2.add_row_bias(&br)?.sum_all()),
        &[x2.clone(), br.clone()],
    )
    .unwrap();
    assert_pass("add_row_bias", err);

    let s = randt(&[1], 0.5, 1.5, 9);
    for (name, f) in [
        (
            "mul_scalar_t",
            Box::new(|x: &Tensor<f64>, s: &Tensor<f64>| x.mul_scalar_t(s).unwrap())
                as Box<dyn Fn(&Tensor<f64>, &Tensor<f64>) -> Tensor<f64>>,
        ),
        ("div_scalar_t", Box::new(|x, s| x.div_scalar_t(s).unwrap())),
        ("sub_scalar_t", Box::new(|x, s| x.sub_scalar_t(s).unwrap())),
    ] {
        let err = grad_check(|| Ok(f(&x2, &s).sum_all()), &[x2.clone(), s.clone()]).unwrap();
        assert_pass(name, err);
    }
}

#[test]
fn movement_ops() {
    let x = randt(&[3, 4], -1.0, 1.0, 10);
    let err = grad_check(
        || Ok(x.reshape(&[2, 6])?.transpose2d()?.mul(&randt(&[6, 2], -1.0, 1.0, 999).detach())?.sum_all()),
        &[x.clone()],
    )
    .unwrap();
    assert_pass("reshape+transpose", err);

    let a = randt(&[2, 3], -1.0, 1.0, 11);
    let b = randt(&[2, 3], -1.0, 1.0, 12);
    let err = grad_check(
        || {
            let cat = Tensor::concat(&[a.clone(), b.clone()], 0)?;
            Ok(cat.narrow(0, 1, 2)?.mul(&cat.narrow(0, 2, 2)?)?.sum_all())
        },
        &[a.clone(), b.clone()],
    )
    .unwrap();
    assert_pass("concat+narrow", err);
}

#[test]
fn reduce_and_softmax_ops() {
    let x = randt(&[3, 5], -2.0, 2.0, 13);
    let w = randt(&[3, 5], -1.0, 1.0, 14).detach();
    for axis in [0usize, 1] {
        let err = grad_check(
            || Ok(x.softmax(axis)?.mul(&w)?.sum_all()),
            &[x.clone()],
        )
        .unwrap();
        assert_pass(&format!("softmax axis {axis}"), err);
    }
    let err = grad_check(|| Ok(x.mean_all()), &[x.clone()]).unwrap();
    assert_pass("mean_all", err);
}

#[test]
fn matmul_and_conv_ops() {
    let a = randt(&[4, 3], -1.0, 1.0, 15);
    let b = randt(&[3, 5], -1.0, 1.0, 16);
    let err = grad_check(|| Ok(a.matmul(&b)?.sum_all()), &[a.clone(), b.clone()]).unwrap();
    assert!(err < 1e-7, "matmul: {err}");

    let x = randt(&[2, 6, 6], -1.0, 1.0, 17);
    let w = randt(&[3, 2, 3, 3], -0.5, 0.5, 18);
    let probe = randt(&[3, 6, 6], -1.0, 1.0, 998).detach();
    let err = grad_check(
        || Ok(x.conv2d(&w, 1, 1)?.mul(&probe)?.sum_all()),
        &[x.clone(), w.clone()],
    )
    .unwrap();
    assert_pass("conv2d s1 p1", err);

    let probe2 = randt(&[3, 4, 4], -1.0, 1.0, 997).detach();
    let x7 = randt(&[2, 7, 7], -1.0, 1.0, 19);
    let w7 = randt(&[3, 2, 3, 3], -0.5, 0.5, 20);
    let err = grad_check(
        || Ok(x7.conv2d(&w7, 2, 1)?.mul(&probe2)?.sum_all()),
        &[x7.clone(), w7.clone()],
    )
    .unwrap();
    assert_pass("conv2d s2", err);
}

#[test]
fn sampling_ops() {
    // Non-lattice coordinates keep the check away from the bilinear kinks.
    let img = randt(&[2, 5, 5], 0.0, 1.0, 21);
    let mut rng = stream(22, 0);
    let coords: Vec<f64> = (0..3 * 3 * 2)
        .map(|_| rng.gen_range(-0.83..0.83) + 0.013)
        .collect();
    let coords = Tensor::param(&[3, 3, 2], coords).unwrap();
    let target = randt(&[2, 3, 3], 0.0, 1.0, 996).detach();
    let err = grad_check(
        || {
            let s = img.bilinear_sample(&coords)?;
            Ok(s.sub(&target)?.abs().mean_all())
        },
        &[img.clone(), coords.clone()],
    )
    .unwrap();
    assert_pass("bilinear_sample L1", err);

    let x = randt(&[2, 4, 4], -1.0, 1.0, 23);
    let err = grad_check(|| Ok(x.resize_down(2)?.sum_all()), &[x.clone()]).unwrap();
    assert_pass("resize_down", err);
    let probe = randt(&[2, 8, 8], -1.0, 1.0, 995).detach();
    let err = grad_check(
        || Ok(x.resize_up(2)?.mul(&probe)?.sum_all()),
        &[x.clone()],
    )
    .unwrap();
    assert_pass("resize_up", err);
}

#[test]
fn normalization_ops() {
    let x = randt(&[3, 6], -1.0, 1.0, 24);
    let w = randt(&[3, 6], -1.0, 1.0, 994).detach();
    let err = grad_check(
        || Ok(x.norm_rows(1e-5)?.mul(&w)?.sum_all()),
        &[x.clone()],
    )
    .unwrap();
    assert_pass("norm_rows", err);

    let x3 = randt(&[2, 3, 4], -1.0, 1.0, 25);
    let w3 = randt(&[2, 3, 4], -1.0, 1.0, 993).detach();
    let err = grad_check(
        || Ok(x3.norm_chans(1e-5)?.mul(&w3)?.sum_all()),
        &[x3.clone()],
    )
    .unwrap();
    assert_pass("norm_chans", err);

    let err = grad_check(|| Ok(x3.std_all(1e-6)), &[x3.clone()]).unwrap();
    assert_pass("std_all", err);
}

#[test]
fn inv3_op() {
    // Diagonally dominant so the probe stays far from singularity.
    let base = vec![4.0, 0.3, -0.2, 0.1, 3.5, 0.4, -0.3, 0.2, 5.0];
    let m = Tensor::param(&[3, 3], base).unwrap();
    let w = randt(&[3, 3], -1.0, 1.0, 992).detach();
    let err = grad_check(|| Ok(m.inv3()?.mul(&w)?.sum_all()), &[m.clone()]).unwrap();
    assert_pass("inv3", err);
}
