//! Central finite differences against every hand-written backward pass, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttpoint_core::geometry::{farthest_point_sampling, gather_group_features, gather_group_features_backward, knn_group};
use ttpoint_core::model::{GroupedLinear, Model, ModelConfig};
use ttpoint_core::nn::{
    max_pool_backward, max_pool_groups, relu, relu_backward, softmax_cross_entropy, BatchNorm, Linear, Mode, Module,
    ResBlock, TtExecution, TtLinear,
};
use ttpoint_core::Tensor;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, r)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

/// A bias feeding batch norm has an identically zero gradient; compare those absolutely.
fn agree(a: &[f64], n: &[f64]) -> (bool, f64) {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm(a) < 1e-12 && norm(n) < 1e-8 {
        return (true, norm(n));
    }
    let e = rel_err(a, n);
    (e < TOL, e)
}

fn numeric(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += H;
            let mut m = x.clone();
            m.data_mut()[i] -= H;
            (f(&p) - f(&m)) / (2.0 * H)
        })
        .collect()
}

/// Checks `dL/dx` and `dL/dθ` for `L = <layer(x), r>`.
fn check_layer<M: Module<f64>>(
    name: &str,
    layer: &mut M,
    x: &Tensor<f64>,
    fwd: impl Fn(&mut M, &Tensor<f64>) -> Tensor<f64>,
    bwd: impl Fn(&mut M, &Tensor<f64>) -> Tensor<f64>,
) {
    let mut r = rng(99);
    let y = fwd(layer, x);
    let probe = randn(y.shape(), &mut r);
    layer.zero_grad();
    let _ = fwd(layer, x);
    let dx = bwd(layer, &probe);
    let num_dx = numeric(x, |xp| dot(&fwd(layer, xp), &probe));
    let e = rel_err(dx.data(), &num_dx);
    assert!(e < TOL, "{name}: input gradient rel err {e:e}");

    let analytic: Vec<(String, Vec<f64>)> =
        layer.params_mut_vec().into_iter().map(|p| (p.name, p.grad.data().to_vec())).collect();
    for (pi, (pname, grad)) in analytic.iter().enumerate() {
        let mut num = Vec::with_capacity(grad.len());
        for i in 0..grad.len() {
            let eval = |delta: f64, layer: &mut M| {
                layer.params_mut_vec()[pi].value.data_mut()[i] += delta;
                let v = dot(&fwd(layer, x), &probe);
                layer.params_mut_vec()[pi].value.data_mut()[i] -= delta;
                v
            };
            num.push((eval(H, layer) - eval(-H, layer)) / (2.0 * H));
        }
        let (ok, e) = agree(grad, &num);
        assert!(ok, "{name}: {pname} err {e:e}");
    }
}

#[test]
fn linear() {
    let mut r = rng(1);
    let mut l = Linear::<f64>::new(7, 5, &mut r);
    let x = randn(&[4, 7], &mut r);
    check_layer("linear", &mut l, &x, |l, x| l.forward(x, Mode::Train).unwrap(), |l, dy| l.backward(dy).unwrap());
}

#[test]
fn tt_linear_both_routes() {
    for exec in [TtExecution::Sequential, TtExecution::Materialized] {
        for (i, o, rank) in [(16, 16, 2), (16, 32, 4), (32, 16, 3)] {
            let mut r = rng(2 + rank as u64);
            let mut l = TtLinear::<f64>::new(i, o, rank, &mut r).unwrap();
            l.execution = exec;
            let x = randn(&[3, i], &mut r);
            check_layer(
                &format!("tt {i}x{o} r{rank} {exec:?}"),
                &mut l,
                &x,
                |l, x| l.forward(x, Mode::Train).unwrap(),
                |l, dy| l.backward(dy).unwrap(),
            );
        }
    }
}

#[test]
fn batchnorm_train() {
    let mut r = rng(3);
    let mut bn = BatchNorm::<f64>::new(6);
    for p in bn.params_mut_vec() {
        for v in p.value.data_mut() {
            *v += r.random_range(-0.5..0.5);
        }
    }
    let x = randn(&[5, 6], &mut r);
    check_layer("batchnorm", &mut bn, &x, |b, x| b.forward(x, Mode::Train).unwrap(), |b, dy| b.backward(dy).unwrap());
}

#[test]
fn relu_matches() {
    let mut r = rng(4);
    let x = randn(&[40], &mut r);
    let probe = randn(&[40], &mut r);
    let dx = relu_backward(&relu(&x), &probe).unwrap();
    let num = numeric(&x, |xp| dot(&relu(xp), &probe));
    assert!(rel_err(dx.data(), &num) < TOL);
}

#[test]
fn resblocks() {
    for rank in [0usize, 2, 4] {
        let mut r = rng(5 + rank as u64);
        let mut b = ResBlock::<f64>::new(16, rank, &mut r).unwrap();
        let x = randn(&[6, 16], &mut r);
        check_layer(
            &format!("resblock r{rank}"),
            &mut b,
            &x,
            |b, x| b.forward(x, Mode::Train).unwrap(),
            |b, dy| b.backward(dy).unwrap(),
        );
    }
}

#[test]
fn max_pool() {
    let mut r = rng(6);
    let x = randn(&[3, 5, 4], &mut r);
    let (y, idx) = max_pool_groups(&x).unwrap();
    let probe = randn(y.shape(), &mut r);
    let dx = max_pool_backward(&probe, &idx).unwrap();
    let num = numeric(&x, |xp| dot(&max_pool_groups(xp).unwrap().0, &probe));
    assert!(rel_err(dx.data(), &num) < TOL);
}

#[test]
fn cross_entropy() {
    let mut r = rng(7);
    let logits = randn(&[4, 5], &mut r);
    let labels = [0, 3, 4, 1];
    let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
    let num = numeric(&logits, |l| softmax_cross_entropy(l, &labels).unwrap().0);
    assert!(rel_err(g.data(), &num) < TOL);
}

fn cloud(n: usize, r: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..n).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect()
}

#[test]
fn gather() {
    let mut r = rng(8);
    let pts = cloud(20, &mut r);
    let centers = farthest_point_sampling(&pts, 6, 0).unwrap();
    let groups = knn_group(&pts, &centers, 4).unwrap();
    let f = randn(&[20, 3], &mut r);
    let y = gather_group_features(Some(&f), &pts, &groups).unwrap();
    let probe = randn(y.shape(), &mut r);
    let dx = gather_group_features_backward(&probe, 20, &groups).unwrap();
    let num = numeric(&f, |fp| dot(&gather_group_features(Some(fp), &pts, &groups).unwrap(), &probe));
    assert!(rel_err(dx.data(), &num) < TOL);
}

#[test]
fn grouped_linear() {
    let mut r = rng(9);
    let mut g = GroupedLinear::<f64>::new(5, 7, &mut r);
    let sources: Vec<usize> = (0..12).map(|_| r.random_range(0..8)).collect();
    let offsets: Vec<f64> = (0..36).map(|_| r.random_range(-1.0..1.0)).collect();
    let f = randn(&[8, 5], &mut r);
    check_layer(
        "grouped",
        &mut g,
        &f,
        |g, f| g.forward(f, &offsets, &sources, Mode::Train).unwrap(),
        |g, dy| g.backward(dy).unwrap(),
    );
}

fn model_loss(m: &mut Model<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    let logits = m.forward(x, Mode::Train).unwrap();
    softmax_cross_entropy(&logits, labels).unwrap().0
}

#[test]
fn full_model_spot_check() {
    let cfg = ModelConfig::tiny(64, 3);
    let mut r = rng(10);
    let mut m = Model::<f64>::build(&cfg, &mut r).unwrap();
    let b = 3;
    let x = Tensor::from_vec(&[b, 64, 3], (0..b * 64 * 3).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let labels = [0, 2, 1];

    m.zero_grad();
    let logits = m.forward(&x, Mode::Train).unwrap();
    let (_, dl) = softmax_cross_entropy(&logits, &labels).unwrap();
    m.backward(&dl).unwrap();

    let sizes: Vec<usize> = m.params_vec().iter().map(|p| p.value.len()).collect();
    let grads: Vec<Vec<f64>> = m.params_mut_vec().iter().map(|p| p.grad.data().to_vec()).collect();
    let total: usize = sizes.iter().sum();
    let mut analytic = Vec::new();
    let mut num = Vec::new();
    for _ in 0..50 {
        let mut flat = r.random_range(0..total);
        let mut pi = 0;
        while flat >= sizes[pi] {
            flat -= sizes[pi];
            pi += 1;
        }
        let at = |delta: f64, m: &mut Model<f64>| {
            m.params_mut_vec()[pi].value.data_mut()[flat] += delta;
            let v = model_loss(m, &x, &labels);
            m.params_mut_vec()[pi].value.data_mut()[flat] -= delta;
            v
        };
        let n = (at(H, &mut m) - at(-H, &mut m)) / (2.0 * H);
        analytic.push(grads[pi][flat]);
        num.push(n);
    }
    let e = rel_err(&analytic, &num);
    assert!(e < 1e-4, "model gradient rel err {e:e}");
}
