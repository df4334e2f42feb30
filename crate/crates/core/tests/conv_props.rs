mod common;

use common::{exact_conv, exact_dot, expect_raw, q};
use pasm::convref::{conv2d_ref, dot_ref, ConvError};
use pasm::fxp::{guard_bits, Fxp, QFormat};
use pasm::tensor::{KernelSet, Tensor3};
use pasm::workload::Workload;
use proptest::prelude::*;

fn fmt_strategy() -> impl Strategy<Value = QFormat> {
    (2u32..=32).prop_flat_map(|w| (Just(w), 0..w)).prop_map(|(w, f)| q(w, f))
}

fn full_range(fmt: QFormat, n: usize) -> impl Strategy<Value = Vec<Fxp>> {
    proptest::collection::vec(
        (fmt.min_raw()..=fmt.max_raw()).prop_map(move |r| Fxp::from_raw(r, fmt).unwrap()),
        n,
    )
}

fn layer(seed: u64, w: usize, h: usize, c: usize, k: usize, o: usize, fmt: QFormat) -> (Tensor3, KernelSet) {
    let mut wl = Workload::new(seed);
    let input = Tensor3::from_raw(w, h, c, fmt, wl.raws(fmt, w * h * c)).unwrap();
    let kernels = KernelSet::from_raw(o, k, c, fmt, wl.raws(fmt, o * k * k * c)).unwrap();
    (input, kernels)
}

proptest! {
    // full-range operands, so every product is as large as it can be
    #[test]
    fn guard_bits_suffice_against_exact_sum(
        (fmt, images, weights) in (fmt_strategy(), 0usize..300)
            .prop_flat_map(|(f, n)| (Just(f), full_range(f, n), full_range(f, n)))
    ) {
        let p = fmt.product(fmt).unwrap();
        let acc = p.widened(guard_bits(images.len())).unwrap();
        let got = dot_ref(&images, &weights, acc).unwrap();
        let exact = exact_dot(&images, &weights);
        prop_assert_eq!(common::big(got.raw()), exact.clone());
        prop_assert_eq!(got.raw(), expect_raw(&exact, p.frac_bits(), acc));
    }

    #[test]
    fn conv_matches_exact_oracle(
        seed in any::<u64>(), w in 1usize..8, h in 1usize..8, c in 1usize..5,
        k in prop::sample::select(vec![1usize, 3, 5]), o in 1usize..4, fmt in fmt_strategy()
    ) {
        prop_assume!(k <= w && k <= h);
        let (input, kernels) = layer(seed, w, h, c, k, o, fmt);
        let acc = fmt.product(fmt).unwrap().widened(guard_bits(k * k * c)).unwrap();
        let out = conv2d_ref(&input, &kernels, acc).unwrap();
        let exact = exact_conv(&input, &kernels);
        prop_assert_eq!(out.format(), fmt);
        for (x, col) in exact.iter().enumerate() {
            for (y, cell) in col.iter().enumerate() {
                for (oc, e) in cell.iter().enumerate() {
                    prop_assert_eq!(out.get(x, y, oc).raw(), expect_raw(e, 2 * fmt.frac_bits(), fmt));
                }
            }
        }
    }

    #[test]
    fn pointwise_kernel_is_a_per_pixel_dot(seed in any::<u64>(), w in 1usize..6, h in 1usize..6, c in 1usize..9) {
        let fmt = q(16, 8);
        let (input, kernels) = layer(seed, w, h, c, 1, 1, fmt);
        let acc = fmt.product(fmt).unwrap().widened(guard_bits(c)).unwrap();
        let out = conv2d_ref(&input, &kernels, acc).unwrap();
        let weights: Vec<Fxp> = kernels.values().collect();
        for x in 0..w {
            for y in 0..h {
                let pixel: Vec<Fxp> = (0..c).map(|i| input.get(x, y, i)).collect();
                prop_assert_eq!(out.get(x, y, 0), dot_ref(&pixel, &weights, acc).unwrap().resize(fmt));
            }
        }
    }

    #[test]
    fn integer_scaling_is_linear(seed in any::<u64>(), a in -64i128..=64, k in prop::sample::select(vec![1usize, 3, 5])) {
        // small values in a wide format: nothing can overflow
        let (small_in, small_k) = layer(seed, 6, 6, 3, k, 2, q(12, 0));
        let fmt = q(40, 0);
        let input = Tensor3::from_raw(6, 6, 3, fmt, small_in.raw().to_vec()).unwrap();
        let scaled = Tensor3::from_raw(6, 6, 3, fmt, small_in.raw().iter().map(|r| r * a).collect()).unwrap();
        let kernels = KernelSet::from_raw(2, k, 3, fmt, small_k.raw().to_vec()).unwrap();
        let acc = fmt.product(fmt).unwrap().widened(guard_bits(k * k * 3)).unwrap();
        let base = conv2d_ref(&input, &kernels, acc).unwrap();
        let out = conv2d_ref(&scaled, &kernels, acc).unwrap();
        for (x, y) in base.raw().iter().zip(out.raw()) {
            prop_assert_eq!(x * a, *y);
        }
    }
}

#[test]
fn narrow_accumulator_is_rejected() {
    let f = q(8, 0);
    let xs = vec![Fxp::zero(f); 5];
    let p = f.product(f).unwrap();
    assert!(matches!(
        dot_ref(&xs, &xs, p.widened(2).unwrap()),
        Err(ConvError::AccumulatorTooNarrow { .. })
    ));
    assert!(dot_ref(&xs, &xs, p.widened(3).unwrap()).is_ok());
}
