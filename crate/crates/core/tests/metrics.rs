mod common;

use prefseg_core::metrics::{dice, evaluate, hd95, iou, Summary};
use prefseg_core::Mask;
use proptest::prelude::*;

#[test]
fn dice_and_iou_match_counted_pairs() {
    for (i, (a, b, inter, na, nb)) in common::counted_pairs().into_iter().enumerate() {
        let want_dice = if na + nb == 0 { 1.0 } else { 2.0 * inter as f64 / (na + nb) as f64 };
        let union = na + nb - inter;
        let want_iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        assert_eq!(dice(&a, &b).unwrap(), want_dice, "pair {i}");
        assert_eq!(iou(&a, &b).unwrap(), want_iou, "pair {i}");
    }
}

#[test]
fn offset_squares_hd95() {
    let sq = |c0| Mask::from_fn(32, 32, move |r, c| (8..16).contains(&r) && (c0..c0 + 8).contains(&c));
    let (a, b) = (sq(8), sq(11));
    let got = hd95(&a, &b).unwrap().unwrap();
    assert!((got - common::brute_hd95(&a, &b).unwrap()).abs() < 1e-9);
    assert!(got > 0.0 && got <= 3.0 + 1e-12);
}

#[test]
fn hd95_matches_brute_force_on_random_masks() {
    let mut r = common::rng(11);
    for i in 0..60 {
        let (h, w) = (rand::Rng::random_range(&mut r, 1..=32), rand::Rng::random_range(&mut r, 1..=32));
        let a = common::random_blocky_mask(&mut r, h, w);
        let b = common::random_blocky_mask(&mut r, h, w);
        let fast = hd95(&a, &b).unwrap();
        let slow = common::brute_hd95(&a, &b);
        match (fast, slow) {
            (Some(x), Some(y)) => assert!((x - y).abs() < 1e-9, "case {i}: {x} vs {y}"),
            (x, y) => assert_eq!(x, y, "case {i}"),
        }
    }
}

#[test]
fn empty_conventions() {
    let e = Mask::empty(4, 4);
    let full = Mask::filled(4, 4, true);
    let m = evaluate(&e, &e).unwrap();
    assert_eq!((m.dice, m.iou, m.hd95), (1.0, 1.0, None));
    assert_eq!(evaluate(&e, &full).unwrap().hd95, None);
    assert_eq!(dice(&e, &full).unwrap(), 0.0);
}

#[test]
fn grid_mismatch_is_an_error() {
    assert!(dice(&Mask::empty(4, 4), &Mask::empty(4, 5)).is_err());
    assert!(hd95(&Mask::empty(4, 4), &Mask::empty(5, 4)).is_err());
}

#[test]
fn summary_of_known_values() {
    let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(s.mean, 2.5);
    assert_eq!(s.median, 2.5);
    assert!((s.std - 1.25f64.sqrt()).abs() < 1e-12);
}

fn mask_pair() -> impl Strategy<Value = (Mask, Mask)> {
    (1usize..=16, 1usize..=16).prop_flat_map(|(h, w)| {
        (
            proptest::collection::vec(any::<bool>(), h * w),
            proptest::collection::vec(any::<bool>(), h * w),
        )
            .prop_map(move |(a, b)| (Mask::new(h, w, a).unwrap(), Mask::new(h, w, b).unwrap()))
    })
}

proptest! {
    #[test]
    fn metric_ranges_and_symmetry((a, b) in mask_pair()) {
        let d = dice(&a, &b).unwrap();
        let j = iou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&j));
        prop_assert_eq!(d, dice(&b, &a).unwrap());
        prop_assert_eq!(hd95(&a, &b).unwrap(), hd95(&b, &a).unwrap());
        // dice = 2·iou / (1 + iou)
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
        if let Some(h) = hd95(&a, &b).unwrap() {
            prop_assert!(h >= 0.0);
        }
    }

    #[test]
    fn self_comparison_is_perfect((a, _b) in mask_pair()) {
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        if !a.is_empty() {
            prop_assert_eq!(hd95(&a, &a).unwrap(), Some(0.0));
        }
    }
}
