/// Indices (ascending) of the `ceil(k · n)` best-scoring entries. Equal
/// scores rank the lexicographically smaller id first.
pub fn filter_top_k(scored: &[(&str, f64)], k: f64) -> Vec<usize> {
    let n = scored.len();
    if n == 0 {
        return Vec::new();
    }
    // guard against k·n landing a hair above an integer
    let keep = ((k * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scored[b]
            .1
            .total_cmp(&scored[a].1)
            .then_with(|| scored[a].0.cmp(scored[b].0))
    });
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn keeps_everything_at_one() {
        let s = [("b", 0.1), ("a", 0.9), ("c", 0.5)];
        assert_eq!(filter_top_k(&s, 1.0), vec![0, 1, 2]);
        assert_eq!(filter_top_k(&s, 0.34), vec![1, 2]);
        assert_eq!(filter_top_k(&s, 0.3), vec![1]);
        assert_eq!(filter_top_k(&s, 0.01), vec![1]);
        assert_eq!(filter_top_k(&[("x", 0.0), ("y", 0.0)], 0.5), vec![0]);
        assert_eq!(filter_top_k(&[("y", 0.0), ("x", 0.0)], 0.5), vec![1]);
    }

    proptest! {
        #[test]
        fn selection_is_a_threshold(scores in proptest::collection::vec(0u8..5, 1..40), k in 0.01f64..=1.0) {
            let ids: Vec<String> = (0..scores.len()).map(|i| format!("r{i:03}")).collect();
            let scored: Vec<(&str, f64)> = ids.iter().zip(&scores).map(|(i, &s)| (i.as_str(), s as f64)).collect();
            let kept = filter_top_k(&scored, k);
            prop_assert_eq!(kept.len(), ((k * scored.len() as f64 - 1e-9).ceil() as usize).max(1));
            for i in 0..scored.len() {
                if kept.contains(&i) { continue; }
                for &j in &kept {
                    let (a, b) = (scored[j], scored[i]);
                    prop_assert!(a.1 > b.1 || (a.1 == b.1 && a.0 < b.0));
                }
            }
        }
    }
}
