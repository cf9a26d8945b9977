use serde::{Deserialize, Serialize};

use super::{Dataset, LearnerConfig, ModelParams};

/// Smallest Gini decrease that justifies a split; also the margin by which a
/// later candidate must beat the incumbent, so exact ties keep the lowest
/// (feature, threshold).
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        positive_rate: f64,
        count: usize,
    },
    /// Rows with `x[feature] <= threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

pub(crate) fn score(nodes: &[TreeNode], x: &[f64]) -> f64 {
    let mut at = 0;
    loop {
        match nodes[at] {
            TreeNode::Leaf { positive_rate, .. } => return positive_rate,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => at = if x[feature] <= threshold { left } else { right },
        }
    }
}

/// Depth of the deepest leaf (a lone root leaf has depth 0).
pub fn depth(nodes: &[TreeNode]) -> usize {
    fn walk(nodes: &[TreeNode], at: usize) -> usize {
        match nodes[at] {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
        }
    }
    walk(nodes, 0)
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: Vec<Vec<f64>>,
    y: &'a [bool],
    cfg: &'a LearnerConfig,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let pos = rows.iter().filter(|&&i| self.y[i]).count();
        self.nodes.push(TreeNode::Leaf {
            positive_rate: if rows.is_empty() {
                0.0
            } else {
                pos as f64 / rows.len() as f64
            },
            count: rows.len(),
        });
        self.nodes.len() - 1
    }

    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let total_pos = rows.iter().filter(|&&i| self.y[i]).count();
        let parent = gini(total_pos, n);
        let min_leaf = self.cfg.min_leaf;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.to_vec();
        for f in 0..self.x[0].len() {
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_pos = 0;
            for k in 1..n {
                if self.y[sorted[k - 1]] {
                    left_pos += 1;
                }
                let (lo, hi) = (self.x[sorted[k - 1]][f], self.x[sorted[k]][f]);
                if lo == hi || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let child = (k as f64 * gini(left_pos, k)
                    + (n - k) as f64 * gini(total_pos - left_pos, n - k))
                    / n as f64;
                let gain = parent - child;
                if gain > best.map_or(MIN_GAIN, |b| b.0 + MIN_GAIN) {
                    best = Some((gain, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let pos = rows.iter().filter(|&&i| self.y[i]).count();
        let pure = pos == 0 || pos == rows.len();
        if depth >= self.cfg.max_depth || pure || rows.len() < 2 * self.cfg.min_leaf {
            return self.leaf(&rows);
        }
        let Some((feature, threshold)) = self.best_split(&rows) else {
            return self.leaf(&rows);
        };
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            positive_rate: 0.0,
            count: 0,
        });
        let (l, r): (Vec<_>, Vec<_>) = rows
            .into_iter()
            .partition(|&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

/// Greedy CART on Gini impurity with midpoint thresholds.
pub(crate) fn fit(ds: &Dataset, cfg: &LearnerConfig) -> ModelParams {
    let mut row = Vec::new();
    let x = (0..ds.len())
        .map(|i| {
            ds.input_row(i, cfg.use_protected_feature, &mut row);
            row.clone()
        })
        .collect();
    let mut b = Builder {
        x,
        y: ds.labels(),
        cfg,
        nodes: Vec::new(),
    };
    b.grow((0..ds.len()).collect(), 0);
    ModelParams::Tree { nodes: b.nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::Group;
    use crate::learners::{train, LearnerConfig};
    use proptest::prelude::*;

    #[test]
    fn picks_the_lowest_feature_on_ties() {
        // Both columns separate the labels equally well.
        let ds = Dataset::new(
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
            vec![Group::Zero; 4],
            vec![false, false, true, true],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let cfg = LearnerConfig {
            min_leaf: 1,
            use_protected_feature: false,
            ..LearnerConfig::tree()
        };
        let m = train(&ds, &cfg, 0).unwrap();
        let ModelParams::Tree { nodes } = m.params else {
            unreachable!()
        };
        assert_eq!(
            nodes[0],
            TreeNode::Split {
                feature: 0,
                threshold: 0.5,
                left: 1,
                right: 2
            }
        );
    }

    proptest! {
        #[test]
        fn respects_depth_and_leaf_bounds(
            seed in 0u64..500,
            n in 10usize..120,
            max_depth in 1usize..6,
            min_leaf in 1usize..8,
        ) {
            let mut state = seed ^ 0x9E37_79B9_7F4A_7C15;
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let mut f = Vec::new();
            let mut g = Vec::new();
            let mut y = Vec::new();
            for _ in 0..n {
                let (a, b) = ((next() * 10.0).floor(), next());
                f.extend_from_slice(&[a, b]);
                g.push(if next() < 0.5 { Group::Zero } else { Group::One });
                y.push(next() < 0.3 + 0.05 * a);
            }
            let ds = Dataset::new(f, g, y, vec!["a".into(), "b".into()]).unwrap();
            let cfg = LearnerConfig { max_depth, min_leaf, ..LearnerConfig::tree() };
            let m = train(&ds, &cfg, 0).unwrap();
            let ModelParams::Tree { nodes } = &m.params else { unreachable!() };
            prop_assert!(depth(nodes) <= max_depth);
            let mut total = 0;
            for node in nodes {
                if let TreeNode::Leaf { count, .. } = node {
                    prop_assert!(*count >= min_leaf || nodes.len() == 1);
                    total += count;
                }
            }
            prop_assert_eq!(total, n);
        }
    }
}
