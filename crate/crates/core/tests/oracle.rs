mod common;

use prefseg_core::oracle::{judge_simulated, PreferenceOracle, SimulatedOracle, StepContext};
use prefseg_core::Mask;

#[test]
fn reward_is_plus_one_iff_dice_strictly_rises() {
    let mut r = common::rng(5);
    let mut seen = [0usize; 2];
    for i in 0..1000 {
        let (m_new, current, gt) = common::oracle_triple(&mut r, i);
        let v = judge_simulated(&m_new, &current, &gt).unwrap();
        let want = common::dice_strictly_rises(&m_new, &current, &gt);
        assert_eq!(v.reward == 1, want, "triple {i}");
        assert!(v.reward == 1 || v.reward == -1);
        seen[want as usize] += 1;
    }
    assert!(seen.iter().all(|&n| n > 100), "{seen:?}");
}

#[test]
fn half_square_to_full_square() {
    let gt = Mask::from_fn(32, 32, |r, c| (8..24).contains(&r) && (8..24).contains(&c));
    let left = Mask::from_fn(32, 32, |r, c| gt.get(r, c) && c < 16);
    let v = judge_simulated(&gt, &left, &gt).unwrap();
    assert_eq!(v.reward, 1);
    assert!((v.dice_before.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(v.dice_after, Some(1.0));
    assert_eq!(judge_simulated(&left, &left, &gt).unwrap().reward, -1);
}

#[test]
fn grid_mismatch_is_an_error() {
    let m = Mask::empty(4, 4);
    assert!(judge_simulated(&m, &Mask::empty(4, 5), &m).is_err());
    assert!(judge_simulated(&m, &m, &Mask::empty(3, 4)).is_err());
}

#[test]
fn flips_are_keyed_by_position() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = {
        let cfg = prefseg_core::feature_provider::SyntheticWorldConfig { image_size: 16, ..common::bench_world_config() };
        prefseg_core::feature_provider::generate_world(&cfg, 1, tmp.path()).unwrap()
    };
    let rec = &ds.records[0];
    let gt = rec.gt_mask.clone().unwrap();
    let worse = Mask::from_fn(gt.height(), gt.width(), |r, c| !gt.get(r, c));
    let verdicts = |o: &mut SimulatedOracle| -> Vec<i8> {
        (1..=200)
            .map(|step| {
                let ctx = StepContext { round: 1, image_index: 0, step };
                match o.judge(rec, ctx, &gt, &worse).unwrap() {
                    prefseg_core::oracle::Judgement::Verdict(v) => v.reward,
                    _ => unreachable!(),
                }
            })
            .collect()
    };
    assert!(verdicts(&mut SimulatedOracle::new()).iter().all(|&v| v == 1));
    let a = verdicts(&mut SimulatedOracle::with_flip(0.3, 9));
    assert_eq!(a, verdicts(&mut SimulatedOracle::with_flip(0.3, 9)));
    let flipped = a.iter().filter(|&&v| v == -1).count();
    assert!((30..=90).contains(&flipped), "{flipped} flips");
}

proptest::proptest! {
    #[test]
    fn verdict_is_the_sign_of_the_dice_change(seed in 0u64..u64::MAX, i in 0usize..3) {
        let (m_new, current, gt) = common::oracle_triple(&mut common::rng(seed), i);
        let v = judge_simulated(&m_new, &current, &gt).unwrap();
        let delta = prefseg_core::metrics::dice(&m_new, &gt).unwrap() - prefseg_core::metrics::dice(&current, &gt).unwrap();
        proptest::prop_assert_eq!(v.reward, if delta > 0.0 { 1 } else { -1 });
        proptest::prop_assert_eq!(v, judge_simulated(&m_new, &current, &gt).unwrap());
    }
}
