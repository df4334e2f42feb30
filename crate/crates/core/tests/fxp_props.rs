mod common;

use common::{big, q, wrap_big};
use num::rational::BigRational;
use num::{BigInt, One};
use pasm::fxp::{Fxp, QFormat};
use proptest::prelude::*;

fn value(x: Fxp) -> BigRational {
    BigRational::new(big(x.raw()), BigInt::one() << x.format().frac_bits())
}

fn all(fmt: QFormat) -> impl Iterator<Item = Fxp> {
    (fmt.min_raw()..=fmt.max_raw()).map(move |r| Fxp::from_raw(r, fmt).unwrap())
}

fn fmt_strategy(max_total: u32) -> impl Strategy<Value = QFormat> {
    (2..=max_total).prop_flat_map(|w| (Just(w), 0..w)).prop_map(|(w, f)| q(w, f))
}

fn fxp_in(fmt: QFormat) -> impl Strategy<Value = Fxp> {
    (fmt.min_raw()..=fmt.max_raw()).prop_map(move |r| Fxp::from_raw(r, fmt).unwrap())
}

fn fmt_and_values(max_total: u32, count: usize) -> impl Strategy<Value = (QFormat, Vec<Fxp>)> {
    fmt_strategy(max_total)
        .prop_flat_map(move |f| (Just(f), proptest::collection::vec(fxp_in(f), count)))
}

#[test]
fn addition_commutes_exhaustively_up_to_10_bits() {
    for w in 2..=10 {
        let f = q(w, w / 2);
        for a in all(f) {
            for b in all(f) {
                let s = a.wrapping_add(b).unwrap();
                assert_eq!(s, b.wrapping_add(a).unwrap());
                assert_eq!(big(s.raw()), wrap_big(&(big(a.raw()) + big(b.raw())), w));
            }
        }
    }
}

#[test]
fn addition_associates_exhaustively_up_to_8_bits() {
    for w in 2..=8 {
        let f = q(w, 0);
        for a in all(f) {
            for b in all(f) {
                let ab = a.wrapping_add(b).unwrap();
                for c in all(f) {
                    assert_eq!(
                        ab.wrapping_add(c).unwrap(),
                        a.wrapping_add(b.wrapping_add(c).unwrap()).unwrap()
                    );
                }
            }
        }
    }
}

#[test]
fn mixed_formats_do_not_add() {
    let a = Fxp::zero(q(8, 4));
    assert!(a.wrapping_add(Fxp::zero(q(8, 3))).is_err());
}

proptest! {
    #[test]
    fn addition_is_a_wrapping_ring_at_any_width((f, v) in fmt_and_values(128, 3)) {
        let (a, b, c) = (v[0], v[1], v[2]);
        prop_assert_eq!(a.wrapping_add(b).unwrap(), b.wrapping_add(a).unwrap());
        prop_assert_eq!(
            a.wrapping_add(b).unwrap().wrapping_add(c).unwrap(),
            a.wrapping_add(b.wrapping_add(c).unwrap()).unwrap()
        );
        let exact = big(a.raw()) + big(b.raw());
        prop_assert_eq!(big(a.wrapping_add(b).unwrap().raw()), wrap_big(&exact, f.total_bits()));
        let fits = a.checked_add(b).is_ok();
        prop_assert_eq!(fits, wrap_big(&exact, f.total_bits()) == exact);
    }

    #[test]
    fn mul_full_is_exact((fa, a) in fmt_strategy(64).prop_flat_map(|f| (Just(f), fxp_in(f))),
                         (fb, b) in fmt_strategy(64).prop_flat_map(|f| (Just(f), fxp_in(f)))) {
        let p = a.mul_full(b).unwrap();
        prop_assert_eq!(p.format(), q(fa.total_bits() + fb.total_bits(), fa.frac_bits() + fb.frac_bits()));
        prop_assert_eq!(value(p), value(a) * value(b));
    }

    #[test]
    fn from_real_round_trips(f in fmt_strategy(52), t in -0.999f64..0.999) {
        let x = t * (f.max_raw() as f64) * f.step();
        let v = Fxp::from_real(x, f).unwrap();
        prop_assert!((v.to_f64() - x).abs() <= f.step() / 2.0);
    }

    #[test]
    fn distributes_at_full_product_width((_, v) in fmt_and_values(40, 2),
                                         (_, c) in fmt_and_values(40, 1),
                                         out in fmt_strategy(60)) {
        let (a, b, c) = (v[0], v[1], c[0]);
        let wide = a.format().widened(1).unwrap();
        let sum = a.resize(wide).wrapping_add(b.resize(wide)).unwrap();
        let lhs = sum.mul_full(c).unwrap().resize(out);
        let pa = a.mul_full(c).unwrap();
        let pb = b.mul_full(c).unwrap();
        let pwide = pa.format().widened(1).unwrap();
        let rhs = pa.resize(pwide).wrapping_add(pb.resize(pwide)).unwrap().resize(out);
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn resize_floors_and_wraps((f, v) in fmt_and_values(100, 1), out in fmt_strategy(100)) {
        let x = v[0];
        let want = common::expect_raw(&big(x.raw()), f.frac_bits(), out);
        prop_assert_eq!(x.resize(out).raw(), want);
    }

    #[test]
    fn format_strings_round_trip(f in fmt_strategy(128)) {
        prop_assert_eq!(f.to_string().parse::<QFormat>().unwrap(), f);
    }
}
