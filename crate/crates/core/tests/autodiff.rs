use proptest::prelude::*;
use skiplab_core::autodiff::gradcheck::{op_suite, GradCheckOptions};
use skiplab_core::autodiff::ops::softmax_rows;
use skiplab_core::autodiff::{Graph, Tensor};

#[test]
fn every_operation_matches_finite_differences() {
    for seed in [0, 1] {
        for (name, r) in op_suite(seed, GradCheckOptions { max_probes: Some(50), ..Default::default() }).unwrap() {
            assert!(r.max_rel_err < 1e-5, "{name} seed {seed}: {r:?}");
            assert!(r.probes > r.kinks.len(), "{name}: only kinks probed");
        }
    }
}

fn tensor(shape: &'static [usize]) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-3.0..3.0f64, n).prop_map(move |d| Tensor::new(shape, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn two_uses_sum_their_path_gradients(x in tensor(&[2, 3]), w in tensor(&[3, 2]), b in tensor(&[2])) {
        let g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
        let both = xv.linear(wv, bv).unwrap().tanh().sum().add(xv.sigmoid().sum()).unwrap();
        let joint = g.backward(both).unwrap().get(xv).unwrap().clone();

        let g1 = Graph::new();
        let x1 = g1.leaf(x.clone(), true);
        let p1 = x1.linear(g1.constant(w), g1.constant(b)).unwrap().tanh().sum();
        let a = g1.backward(p1).unwrap().get(x1).unwrap().clone();
        let g2 = Graph::new();
        let x2 = g2.leaf(x, true);
        let p2 = x2.sigmoid().sum();
        let c = g2.backward(p2).unwrap().get(x2).unwrap().clone();
        for ((j, a), c) in joint.data().iter().zip(a.data()).zip(c.data()) {
            prop_assert!((j - (a + c)).abs() <= 1e-14 * (1.0 + j.abs()));
        }
    }

    #[test]
    fn forward_is_deterministic(x in tensor(&[1, 2, 4, 4]), w in tensor(&[3, 2, 3, 3])) {
        let run = || {
            let g = Graph::new();
            let y = g.constant(x.clone()).conv2d(g.constant(w.clone()), 1, 1).unwrap().relu().max_pool2d(2).unwrap();
            y.value().clone()
        };
        let (a, b) = (run(), run());
        prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn softmax_sums_to_one_and_losses_are_nonnegative(x in tensor(&[4, 5]), scale in 1.0..300.0f64, labels in prop::collection::vec(0usize..5, 4)) {
        let x = x.map(|v| v * scale);
        for row in softmax_rows(x.data(), 5).chunks(5) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let g = Graph::new();
        let (per, _) = g.constant(x).softmax_cross_entropy(&labels).unwrap();
        prop_assert!(per.value().data().iter().all(|&l| l >= 0.0 && l.is_finite()));
    }
}

#[test]
fn suite_is_seed_deterministic() {
    let opts = GradCheckOptions { max_probes: Some(5), ..Default::default() };
    let a = op_suite(7, opts).unwrap();
    let b = op_suite(7, opts).unwrap();
    for ((n, x), (_, y)) in a.iter().zip(&b) {
        assert_eq!(x.max_rel_err.to_bits(), y.max_rel_err.to_bits(), "{n}");
    }
}
