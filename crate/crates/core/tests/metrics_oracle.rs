//! Cross-implementation oracle for the structural similarity metric: the
//! production separable-filter SSIM must agree with an independent direct
//! window implementation.

mod common;

use rectangling::rng::SplitMix64;
use rectangling::ssim;

#[test]
fn ssim_agrees_with_direct_window_reference() {
    let mut worst = 0.0_f64;
    for k in 0..10u64 {
        let a = common::textured_image(72, 56, SplitMix64::derive(61000, k));
        let b = common::textured_image(72, 56, SplitMix64::derive(62000, k));
        let ours = ssim(&a, &b).unwrap();
        let reference = common::reference_ssim(&a, &b);
        let diff = (ours - reference).abs();
        assert!(diff <= 1e-4, "pair {k}: {ours} vs {reference}");
        worst = worst.max(diff);
        // also check the near-identical regime
        let ours_same = ssim(&a, &a).unwrap();
        assert!((ours_same - 1.0).abs() < 1e-12);
    }
    println!("ssim cross-implementation agreement: worst diff {worst:.2e}");
}
