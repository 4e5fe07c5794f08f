use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scopenet::tensor::gradcheck::{check, objective, DEFAULT_STEP};
use scopenet::tensor::{Tape, Tensor, TensorError, Var};

const TOL: f64 = 1e-4;
const INSTANCES: usize = 100;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

fn assert_grads<F>(name: &str, inputs: &[Tensor], f: &F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, TensorError>,
{
    let errors = check(inputs, DEFAULT_STEP, 0.0, f).unwrap();
    for (i, e) in errors.iter().enumerate() {
        assert!(*e < TOL, "{name}: input {i} relative error {e:e}");
    }
}

#[test]
fn matmul_relu_sum_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = objective(|_, v| Ok(v[0].matmul(v[1])?.relu().sum()));
    for _ in 0..INSTANCES {
        let a = random(&mut rng, &[4, 4], -1.0, 1.0);
        let b = random(&mut rng, &[4, 4], -1.0, 1.0);
        assert_grads("matmul→relu→sum", &[a, b], &f);
    }
}

#[test]
fn unary_elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let weights = random(&mut rng, &[6], -1.0, 1.0);
    // Weighted sums keep the upstream gradient non-uniform.
    fn weighted<'t>(w: &Tensor, x: Var<'t>) -> Var<'t> {
        let c = x
            .tape()
            .leaf(Tensor::new(x.shape(), w.data()[..x.numel()].to_vec()).unwrap());
        x.mul(c).unwrap().sum()
    }
    let sig = objective(|_, v| Ok(weighted(&weights, v[0].sigmoid())));
    let exp = objective(|_, v| Ok(weighted(&weights, v[0].exp())));
    let log = objective(|_, v| Ok(weighted(&weights, v[0].ln()?)));
    let scale = objective(|_, v| Ok(weighted(&weights, v[0].scale(-2.5).add_const(0.7))));
    let relu = objective(|_, v| Ok(weighted(&weights, v[0].relu())));
    let clamp = objective(|_, v| Ok(weighted(&weights, v[0].clamp_min(-0.5))));
    for _ in 0..INSTANCES {
        let x = random(&mut rng, &[6], -2.0, 2.0);
        assert_grads("sigmoid", std::slice::from_ref(&x), &sig);
        assert_grads("exp", std::slice::from_ref(&x), &exp);
        assert_grads("scale", std::slice::from_ref(&x), &scale);
        assert_grads("relu", std::slice::from_ref(&x), &relu);
        assert_grads("clamp_min", std::slice::from_ref(&x), &clamp);
        let pos = random(&mut rng, &[6], 0.2, 3.0);
        assert_grads("log", &[pos], &log);
    }
}

#[test]
fn binary_elementwise_ops_with_scalar_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let add = objective(|_, v| Ok(v[0].add(v[1])?.mul(v[0])?.sum()));
    let sub = objective(|_, v| Ok(v[0].sub(v[1])?.exp().sum()));
    let mul = objective(|_, v| Ok(v[0].mul(v[1])?.sigmoid().sum()));
    let lae = objective(|_, v| Ok(v[0].log_add_exp(v[1])?.mul(v[0])?.sum()));
    for _ in 0..INSTANCES {
        let a = random(&mut rng, &[2, 3], -1.0, 1.0);
        let b = random(&mut rng, &[2, 3], -1.0, 1.0);
        let s = random(&mut rng, &[], -1.0, 1.0);
        assert_grads("add", &[a.clone(), b.clone()], &add);
        assert_grads("add-scalar", &[a.clone(), s.clone()], &add);
        assert_grads("sub", &[a.clone(), b.clone()], &sub);
        assert_grads("sub-scalar", &[a.clone(), s.clone()], &sub);
        assert_grads("mul", &[a.clone(), b.clone()], &mul);
        assert_grads("mul-scalar", &[s.clone(), a.clone()], &mul);
        assert_grads("log_add_exp", &[a, b], &lae);
    }
}

#[test]
fn row_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let weights = random(&mut rng, &[3, 4], -1.0, 1.0);
    let softmax = objective(|t, v| Ok(v[0].softmax_rows().mul(t.leaf(weights.clone()))?.sum()));
    let log_softmax =
        objective(|t, v| Ok(v[0].log_softmax_rows().mul(t.leaf(weights.clone()))?.sum()));
    let lse = objective(|_, v| {
        Ok(v[0]
            .log_sum_exp_rows()
            .mul(v[0].row(0)?.gather(&[0, 1, 2])?)?
            .sum())
    });
    let add_row = objective(|_, v| Ok(v[0].add_row(v[1])?.relu().sum()));
    let transpose = objective(|_, v| Ok(v[0].transpose().matmul(v[0])?.sum()));
    let select = objective(|_, v| Ok(v[0].select_rows(&[2, 0, 2])?.exp().sum()));
    let concat = objective(|_, v| {
        let c = Var::concat(&[v[0], v[0].scale(2.0)])?;
        Ok(c.sigmoid().sum())
    });
    for _ in 0..INSTANCES {
        let x = random(&mut rng, &[3, 4], -2.0, 2.0);
        let b = random(&mut rng, &[4], -1.0, 1.0);
        assert_grads("softmax_rows", std::slice::from_ref(&x), &softmax);
        assert_grads("log_softmax_rows", std::slice::from_ref(&x), &log_softmax);
        assert_grads("log_sum_exp_rows", std::slice::from_ref(&x), &lse);
        assert_grads("add_row", &[x.clone(), b], &add_row);
        assert_grads("transpose", std::slice::from_ref(&x), &transpose);
        assert_grads("select_rows", std::slice::from_ref(&x), &select);
        assert_grads("concat", &[x], &concat);
    }
}

#[test]
fn cosine_and_pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let cos = objective(|_, v| Ok(v[0].cosine_sim(v[1])?.exp()));
    let cosm = objective(|_, v| {
        Ok(v[0]
            .cosine_matrix(v[1])?
            .scale(3.0)
            .log_sum_exp_rows()
            .sum())
    });
    let pool = objective(|_, v| {
        let p = v[0].masked_mean_pool(&[true, false, true, true])?;
        Ok(p.mul(p)?.sum())
    });
    for _ in 0..INSTANCES {
        let u = random(&mut rng, &[5], -1.0, 1.0);
        let w = random(&mut rng, &[5], -1.0, 1.0);
        assert_grads("cosine_sim", &[u, w], &cos);
        let a = random(&mut rng, &[3, 4], -1.0, 1.0);
        let b = random(&mut rng, &[4, 4], -1.0, 1.0);
        assert_grads("cosine_matrix", &[a, b.clone()], &cosm);
        assert_grads("masked_mean_pool", &[b], &pool);
    }
}

#[test]
fn softmax_rows_sum_to_one_on_random_3x3() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let tape = Tape::new();
    let y = tape
        .leaf(random(&mut rng, &[3, 3], -5.0, 5.0))
        .softmax_rows()
        .value();
    for r in 0..3 {
        assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn replayed_tapes_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let a = random(&mut rng, &[4, 3], -1.0, 1.0);
    let b = random(&mut rng, &[3, 4], -1.0, 1.0);
    let run = || {
        let tape = Tape::new();
        let (x, y) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
        let z = x
            .matmul(y)
            .unwrap()
            .softmax_rows()
            .cosine_matrix(x.matmul(y).unwrap())
            .unwrap();
        let loss = z.sum();
        tape.backward(loss).unwrap();
        (z.value(), x.grad(), y.grad())
    };
    let (first, second) = (run(), run());
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&first.0), bits(&second.0));
    assert_eq!(bits(&first.1), bits(&second.1));
    assert_eq!(bits(&first.2), bits(&second.2));
}

proptest! {
    #[test]
    fn softmax_rows_normalized_for_large_inputs(data in prop::collection::vec(-1000.0f64..1000.0, 12)) {
        let tape = Tape::new();
        let y = tape.leaf(Tensor::new(vec![3, 4], data).unwrap()).softmax_rows().value();
        for r in 0..3 {
            prop_assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn value_shape_matches_data(rows in 1usize..5, cols in 1usize..5) {
        let t = Tensor::zeros(&[rows, cols]);
        prop_assert_eq!(t.shape().iter().product::<usize>(), t.data().len());
        prop_assert!(Tensor::new(vec![rows, cols], vec![0.0; rows * cols + 1]).is_err());
    }
}
