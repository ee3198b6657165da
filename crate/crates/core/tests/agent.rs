mod common;

use prefseg_core::checkpoint::Checkpoint;
use prefseg_core::clicking_agent::{
    action_probabilities, policy_forward, reinforce_update, sample_action, AgentState, ClickAction, PolicyParams,
    Transition, GRAD_CLIP_NORM,
};
use prefseg_core::propagation::Label;
use prefseg_core::types::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn state(seed: u64, h: usize, w: usize) -> AgentState<f64> {
    let mut r = common::rng(seed);
    let mut data: Vec<f64> = (0..2 * h * w).map(|_| r.random()).collect();
    for v in &mut data[h * w..] {
        *v = (*v > 0.5) as u8 as f64;
    }
    AgentState { tensor: Tensor::new(vec![2, h, w], data).unwrap() }
}

/// Input rows that can reach output row `r`: conv3 reads upsampled rows
/// r±1, each upsampled row q is conv2 output ⌊q/2⌋, which reads conv1 rows
/// 2k−1..=2k+1, which read input rows one further out.
fn reach(r: usize, n: usize) -> Vec<bool> {
    let mut out = vec![false; n];
    for q in r.saturating_sub(1)..=(r + 1).min(n - 1) {
        let k = (q / 2) as isize;
        for i in 2 * k - 2..=2 * k + 2 {
            if (0..n as isize).contains(&i) {
                out[i as usize] = true;
            }
        }
    }
    out
}

#[test]
fn perturbation_stays_inside_receptive_field() {
    let n = 12;
    let p = PolicyParams::<f64>::random(1, 9);
    let s = state(1, n, n);
    let base = policy_forward(&p, &s).unwrap();
    let mut touched_outside = 0;
    let mut touched_inside = 0;
    for (pr, pc) in [(0, 0), (5, 6), (6, 5), (11, 3), (7, 11)] {
        let mut t = s.clone();
        t.tensor.data_mut()[pr * n + pc] += 0.7;
        let out = policy_forward(&p, &t).unwrap();
        for ch in 0..2 {
            for r in 0..n {
                for c in 0..n {
                    let i = (ch * n + r) * n + c;
                    let changed = out.data()[i] != base.data()[i];
                    let inside = reach(r, n)[pr] && reach(c, n)[pc];
                    if changed && !inside {
                        touched_outside += 1;
                    }
                    touched_inside += (changed && inside) as usize;
                }
            }
        }
    }
    assert_eq!(touched_outside, 0);
    assert!(touched_inside > 0);
}

#[test]
fn uniform_policy_label_frequency_within_three_sigma() {
    let p = PolicyParams::<f32>::new(1, 2);
    let s = AgentState { tensor: state(2, 4, 4).tensor.cast::<f32>() };
    let mut r = common::rng(77);
    let n = 100_000;
    let fg = (0..n)
        .filter(|_| sample_action(&p, &s, &mut r, false).unwrap().label == Label::Foreground)
        .count() as f64;
    let sigma = (0.25 / n as f64).sqrt();
    assert!((fg / n as f64 - 0.5).abs() <= 3.0 * sigma, "fg fraction {}", fg / n as f64);
}

fn sample_entropy(p: &PolicyParams<f64>, s: &AgentState<f64>, seed: u64) -> f64 {
    let mut r = common::rng(seed);
    let cells = 2 * s.grid().0 * s.grid().1;
    let mut hist = vec![0usize; cells];
    let n = 20_000;
    for _ in 0..n {
        let a = sample_action(p, s, &mut r, false).unwrap();
        hist[a.index(s.grid().1, s.grid().0)] += 1;
    }
    hist.iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let q = k as f64 / n as f64;
            -q * q.ln()
        })
        .sum()
}

#[test]
fn hotter_sampling_has_more_entropy() {
    let mut p = PolicyParams::<f64>::random(1, 4);
    p.conv3.weight.data_mut().iter_mut().for_each(|w| *w *= 4.0);
    let s = state(3, 4, 4);
    p.temperature = 10.0;
    let hot = sample_entropy(&p, &s, 1);
    p.temperature = 0.1;
    let cold = sample_entropy(&p, &s, 1);
    assert!(hot > cold, "hot {hot} cold {cold}");
}

#[test]
fn reinforce_gradient_matches_finite_differences() {
    let (mut excluded, mut total) = (0, 0);
    for seed in 0..20 {
        let c = common::reinforce_grad_check(seed);
        assert!(c.worst() < 1e-3, "seed {seed}: block errors {:?}", c.block_errors);
        assert!(c.kink_error < 1e-4, "seed {seed}: kink error {}", c.kink_error);
        excluded += c.excluded;
        total += c.total;
    }
    eprintln!("{excluded} of {total} coordinates straddled a kink");
}

#[test]
fn long_trajectory_is_clipped_to_global_norm() {
    let p = PolicyParams::<f64>::random(1, 5);
    let s = state(5, 6, 6);
    let action = ClickAction { row: 1, col: 2, label: Label::Foreground, log_prob: 0.0 };
    let traj: Vec<Transition<f64>> = (0..200).map(|_| Transition { state: s.clone(), action, reward: 1.0 }).collect();
    let (next, diag) = reinforce_update(&p, &traj).unwrap();
    assert!(diag.clipped && diag.grad_norm > GRAD_CLIP_NORM);
    let moved: f64 = next
        .blocks()
        .iter()
        .zip(p.blocks())
        .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).collect::<Vec<_>>())
        .sum::<f64>()
        .sqrt();
    let want = p.learning_rate * GRAD_CLIP_NORM;
    assert!((moved - want).abs() < 1e-9 * want.max(1.0), "moved {moved} want {want}");
    assert_eq!(next.updates, 1);
}

#[test]
fn baseline_tracks_mean_reward() {
    let mut p = PolicyParams::<f64>::new(1, 6);
    p.baseline = Some(0.0);
    let s = state(6, 4, 4);
    let action = ClickAction { row: 0, col: 0, label: Label::Background, log_prob: 0.0 };
    let traj = vec![Transition { state: s, action, reward: -1.0 }];
    let (next, _) = reinforce_update(&p, &traj).unwrap();
    assert!((next.baseline.unwrap() + 0.1).abs() < 1e-12);
}

/// Rewarded region: the top-left 2×2 cells, either label.
fn in_region(a: &ClickAction) -> bool {
    a.row < 2 && a.col < 2
}

fn region_mass(p: &PolicyParams<f64>, s: &AgentState<f64>) -> f64 {
    let logits = policy_forward(p, s).unwrap();
    let probs = action_probabilities(logits.data(), p.temperature);
    let (gh, gw) = s.grid();
    let mut mass = 0.0;
    for ch in 0..2 {
        for r in 0..2 {
            for c in 0..2 {
                mass += probs[ch * gh * gw + r * gw + c];
            }
        }
    }
    mass
}

#[test]
fn bandit_region_mass_grows_over_episodes() {
    let seeds = 5;
    let checkpoints = 10;
    let mut curve = vec![0.0; checkpoints + 1];
    for seed in 0..seeds {
        let mut p = PolicyParams::<f64>::new(1, seed);
        p.learning_rate = 0.05;
        let s = state(100 + seed, 8, 8);
        let mut r = common::rng(seed);
        curve[0] += region_mass(&p, &s) / seeds as f64;
        for ep in 0..500 {
            let traj: Vec<Transition<f64>> = (0..5)
                .map(|_| {
                    let a = sample_action(&p, &s, &mut r, false).unwrap();
                    Transition { state: s.clone(), action: a, reward: if in_region(&a) { 1.0 } else { -1.0 } }
                })
                .collect();
            p = reinforce_update(&p, &traj).unwrap().0;
            if (ep + 1) % 50 == 0 {
                curve[(ep + 1) / 50] += region_mass(&p, &s) / seeds as f64;
            }
        }
    }
    for w in curve.windows(2) {
        assert!(w[1] > w[0], "mass curve not increasing: {curve:?}");
    }
    assert!(curve[checkpoints] > 0.5, "{curve:?}");
}

#[test]
fn checkpoint_keeps_the_policy_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = PolicyParams::<f32>::random(3, 1);
    p.temperature = 0.7;
    let path = dir.path().join("agent.ckpt");
    Checkpoint::from(&p).save(&path).unwrap();
    let back = PolicyParams::try_from(&Checkpoint::<f32>::load(&path).unwrap()).unwrap();
    assert_eq!(back, p);
}

proptest! {
    #[test]
    fn softmax_sums_to_one(logits in proptest::collection::vec(-50.0f64..50.0, 1..300), t in 0.05f64..20.0) {
        let p = action_probabilities(&logits, t);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(p.iter().all(|&q| (0.0..=1.0).contains(&q)));
    }

    #[test]
    fn sampled_log_prob_is_consistent(seed in 0u64..1000) {
        let p = PolicyParams::<f64>::random(1, seed);
        let s = state(seed, 4, 6);
        let a = sample_action(&p, &s, &mut common::rng(seed), false).unwrap();
        prop_assert!(a.log_prob <= 0.0);
        let probs = action_probabilities(policy_forward(&p, &s).unwrap().data(), p.temperature);
        prop_assert!((probs[a.index(6, 4)].ln() - a.log_prob).abs() < 1e-9);
    }
}
