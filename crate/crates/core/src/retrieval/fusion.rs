use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

/// Reciprocal rank fusion settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrfConfig {
    /// Smoothing constant added to every rank.
    pub k: u32,
}

impl Default for RrfConfig {
    fn default() -> Self {
        Self { k: 60 }
    }
}

/// Fuse ranked id lists: `score(d) = Σ 1 / (k + rank(d))` over the lists that
/// contain `d`, with 1-based ranks.
///
/// Output is sorted by score descending, ties by ascending id. A repeated id
/// within one list only counts at its first position. Contributions are added
/// smallest-rank first so that documents with the same multiset of ranks get
/// bit-identical scores regardless of list order.
pub fn rrf_fuse<S: AsRef<str>>(rankings: &[Vec<S>], cfg: RrfConfig) -> Vec<(String, f64)> {
    let k = f64::from(cfg.k.max(1));
    let mut ranks: HashMap<&str, Vec<usize>> = HashMap::new();
    for list in rankings {
        let mut seen = HashSet::new();
        for (i, id) in list.iter().enumerate() {
            let id = id.as_ref();
            if seen.insert(id) {
                ranks.entry(id).or_default().push(i + 1);
            }
        }
    }
    let mut fused: Vec<(String, f64)> = ranks
        .into_iter()
        .map(|(id, mut rs)| {
            rs.sort_unstable();
            let score = rs.iter().map(|&r| 1.0 / (k + r as f64)).sum();
            (id.to_owned(), score)
        })
        .collect();
    fused.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    fused
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn two_lists() {
        let out = rrf_fuse(&[ids(&["d", "x"]), ids(&["y", "d"])], RrfConfig::default());
        assert_eq!(out[0].0, "d");
        assert!((out[0].1 - (1.0 / 61.0 + 1.0 / 62.0)).abs() < 1e-15);
        assert!((out[0].1 - 0.032_522_474_881_015_34).abs() < 1e-12);
    }

    #[test]
    fn single_list_contribution() {
        let out = rrf_fuse(&[ids(&["d"]), ids(&[])], RrfConfig::default());
        assert_eq!(out, vec![("d".to_string(), 1.0 / 61.0)]);
        assert!((out[0].1 - 0.016_393_442_622_950_82).abs() < 1e-12);
    }

    #[test]
    fn identical_lists() {
        let out = rrf_fuse(&[ids(&["d"]), ids(&["d"])], RrfConfig { k: 60 });
        assert_eq!(out[0].1, 2.0 / 61.0);
    }

    #[test]
    fn empty() {
        assert!(rrf_fuse::<String>(&[], RrfConfig::default()).is_empty());
    }

    #[test]
    fn ties_by_id() {
        let out = rrf_fuse(&[ids(&["b"]), ids(&["a"])], RrfConfig::default());
        assert_eq!(out[0].0, "a");
        assert_eq!(out[1].0, "b");
    }

    #[test]
    fn duplicate_ids_count_once() {
        let out = rrf_fuse(&[ids(&["a", "a"])], RrfConfig::default());
        assert_eq!(out, vec![("a".to_string(), 1.0 / 61.0)]);
    }
}
