//! Autodiff vs central differences for every layer primitive, 20 random
//! instances each, double precision, h = 1e-5.

use gean_tensor::gradcheck::{primitive_names, primitive_suite};
use gean_tensor::init::gaussian;
use gean_tensor::rng::rng;
use gean_tensor::Tensor;
use proptest::prelude::*;

#[test]
fn every_primitive_within_tolerance() {
    let results = primitive_suite(20, 7).unwrap();
    assert_eq!(results.len(), primitive_names().len());
    for (name, err) in &results {
        assert!(*err <= 1e-4, "{name}: max relative error {err:e}");
    }
}

#[test]
fn suite_covers_the_model_layers() {
    let names = primitive_names();
    for needed in ["conv2d", "conv_transpose2d", "avg_pool", "sigmoid", "tanh", "stanh", "log_softmax", "matvec", "column"] {
        assert!(names.contains(&needed), "{needed} missing");
    }
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(
        xs in proptest::collection::vec(-30.0f64..30.0, 1..40),
        c in -50.0f64..50.0,
    ) {
        let x = Tensor::vector(xs.clone());
        let s = gean_tensor::kernels::softmax(&x);
        prop_assert!((s.sum() - 1.0).abs() <= 1e-9);
        prop_assert!(s.data().iter().all(|&v| v > 0.0));
        let shifted = gean_tensor::kernels::softmax(&x.map(|v| v + c));
        for (a, b) in s.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn conv_adjoint_identity(seed in 0u64..1000, stride in 1usize..3, pad in 0usize..2) {
        let mut r = rng(seed);
        let x = gaussian(&[3, 3, 2], 1.0, &mut r);
        let k = gaussian(&[3, 3, 4, 2], 1.0, &mut r);
        let y = gean_tensor::kernels::conv_transpose2d(&x, &k, stride, pad).unwrap();
        let probe = gaussian(y.shape(), 1.0, &mut r);
        let lhs = gean_tensor::kernels::conv2d(&probe, &k, stride, pad).unwrap().dot(&x).unwrap();
        prop_assert!((lhs - y.dot(&probe).unwrap()).abs() <= 1e-10);
    }
}
