mod common;

use common::gradcheck::{architecture_gradient_check, check, primitive_errors, project, randn, TOL};
use ecgnet::models::Architecture;
use ecgnet::tensor::{Padding, Pool2d};
use proptest::prelude::*;

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, e) in primitive_errors() {
        assert!(e < TOL, "{name}: {e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn conv_gradients_on_random_geometry(
        c_in in 1usize..3, c_out in 1usize..3, h in 1usize..4, w in 3usize..8,
        kh in 1usize..3, kw in 1usize..4, sh in 1usize..3, sw in 1usize..3, seed in 0u64..1000,
    ) {
        let kh = kh.min(h);
        let x = randn(&[2, c_in, h, w], seed);
        let k = randn(&[c_out, c_in, kh, kw], seed + 1);
        let b = randn(&[c_out], seed + 2);
        for pad in [Padding::Same, Padding::Valid] {
            let e = check(&[x.clone(), k.clone(), b.clone()], |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], (sh, sw), pad)?;
                project(t, y)
            });
            prop_assert!(e < TOL, "{pad:?}: {e}");
        }
    }

    #[test]
    fn pool_gradients_on_random_geometry(
        h in 1usize..4, w in 2usize..10, ph in 1usize..3, pw in 1usize..4, ceil: bool, seed in 0u64..1000,
    ) {
        let pool = Pool2d { window: (ph.min(h), pw.min(w)), ceil };
        let x = randn(&[2, 2, h, w], seed);
        let e = check(&[x.clone()], |t, v| { let y = t.maxpool(v[0], pool)?; project(t, y) });
        prop_assert!(e < TOL, "max: {e}");
        let e = check(&[x], |t, v| { let y = t.avgpool(v[0], pool)?; project(t, y) });
        prop_assert!(e < TOL, "avg: {e}");
    }
}

#[test]
fn full_architectures_match_finite_differences() {
    for arch in Architecture::ALL {
        let c = architecture_gradient_check(arch);
        println!(
            "{arch}: max rel err {:.2e} over {} tensors, {} probes redrawn, data seed {}",
            c.worst, c.tensors, c.redrawn, c.data_seed
        );
        assert!(c.worst < TOL, "{arch}: {} at {}", c.worst, c.worst_at);
    }
}
