//! Weighted CART regression tree with the squared-error criterion.

use serde::{Deserialize, Serialize};

/// Column-major copy of a design matrix; trees scan one feature at a time.
pub(crate) struct Columns {
    cols: Vec<Vec<f64>>,
    n_rows: usize,
}

impl Columns {
    pub(crate) fn from_rows(rows: &[&[f64]]) -> Self {
        let n_features = rows.first().map_or(0, |r| r.len());
        let cols = (0..n_features)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        Columns {
            cols,
            n_rows: rows.len(),
        }
    }

    pub(crate) fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub(crate) fn width(&self) -> usize {
        self.cols.len()
    }

    pub(crate) fn row_into(&self, i: usize, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.cols) {
            *o = c[i];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 10,
            min_samples_split: 2,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl RegressionTree {
    /// A single-leaf tree predicting `value`.
    pub fn constant(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// Fit on the samples listed in `indices`. Samples with zero weight are
    /// ignored.
    pub(crate) fn fit(
        cols: &Columns,
        y: &[f64],
        weights: &[f64],
        indices: Vec<usize>,
        params: &TreeParams,
    ) -> Self {
        let indices: Vec<usize> = indices.into_iter().filter(|&i| weights[i] > 0.0).collect();
        let mut tree = RegressionTree { nodes: Vec::new() };
        if indices.is_empty() {
            tree.nodes.push(Node::Leaf { value: 0.0 });
            return tree;
        }
        tree.grow(cols, y, weights, indices, 0, params);
        tree
    }

    fn grow(
        &mut self,
        cols: &Columns,
        y: &[f64],
        w: &[f64],
        indices: Vec<usize>,
        depth: usize,
        params: &TreeParams,
    ) -> usize {
        let id = self.nodes.len();
        let (sw, swy) = indices
            .iter()
            .fold((0.0, 0.0), |(a, b), &i| (a + w[i], b + w[i] * y[i]));
        let mean = swy / sw;
        self.nodes.push(Node::Leaf { value: mean });

        if depth >= params.max_depth || indices.len() < params.min_samples_split.max(2) {
            return id;
        }
        let impurity: f64 = indices.iter().map(|&i| w[i] * (y[i] - mean).powi(2)).sum();
        if impurity <= 1e-14 * sw * (1.0 + mean * mean) {
            return id;
        }
        let Some(best) = best_split(cols, y, w, &indices, params) else {
            return id;
        };

        let column = &cols.cols[best.feature];
        let (left, right): (Vec<usize>, Vec<usize>) =
            indices.into_iter().partition(|&i| column[i] <= best.threshold);
        let left_id = self.grow(cols, y, w, left, depth + 1, params);
        let right_id = self.grow(cols, y, w, right, depth + 1, params);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: left_id,
            right: right_id,
        };
        id
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            match self.nodes[node] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Scan features in index order and thresholds in ascending order; a later
/// candidate wins only when strictly better, so ties resolve to the lowest
/// feature and then the lowest threshold.
fn best_split(cols: &Columns, y: &[f64], w: &[f64], indices: &[usize], params: &TreeParams) -> Option<BestSplit> {
    let n = indices.len();
    let min_leaf = params.min_samples_leaf.max(1);
    let (total_w, total_wy) = indices
        .iter()
        .fold((0.0, 0.0), |(a, b), &i| (a + w[i], b + w[i] * y[i]));
    let mut best: Option<BestSplit> = None;
    let mut order = indices.to_vec();

    for (feature, column) in cols.cols.iter().enumerate() {
        order.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));
        let mut left_w = 0.0;
        let mut left_wy = 0.0;
        for pos in 1..n {
            let prev = order[pos - 1];
            left_w += w[prev];
            left_wy += w[prev] * y[prev];
            let lo = column[prev];
            let hi = column[order[pos]];
            if !(lo < hi) || pos < min_leaf || n - pos < min_leaf {
                continue;
            }
            let right_w = total_w - left_w;
            if left_w <= 0.0 || right_w <= 0.0 {
                continue;
            }
            let right_wy = total_wy - left_wy;
            // maximising this proxy minimises the children's weighted SSE
            let score = left_wy * left_wy / left_w + right_wy * right_wy / right_w;
            let better = match &best {
                None => true,
                Some(b) => score > b.score + 1e-12 * b.score.abs(),
            };
            if better {
                let mut threshold = 0.5 * (lo + hi);
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(BestSplit {
                    feature,
                    threshold,
                    score,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit_rows(rows: &[Vec<f64>], y: &[f64], params: TreeParams) -> RegressionTree {
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let cols = Columns::from_rows(&refs);
        let w = vec![1.0; y.len()];
        RegressionTree::fit(&cols, y, &w, (0..y.len()).collect(), &params)
    }

    #[test]
    fn step_function_is_split_at_midpoint() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let y = [1.0, 1.0, 1.0, 5.0, 5.0, 5.0];
        let tree = fit_rows(&rows, &y, TreeParams::default());
        assert_eq!(
            tree.nodes[0],
            Node::Split {
                feature: 0,
                threshold: 2.5,
                left: 1,
                right: 2
            }
        );
        assert_eq!(tree.predict_row(&[-3.0]), 1.0);
        assert_eq!(tree.predict_row(&[9.0]), 5.0);
    }

    #[test]
    fn ties_break_to_lowest_feature() {
        // both columns separate y identically
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, i as f64 * 10.0]).collect();
        let tree = fit_rows(&rows, &[0.0, 0.0, 1.0, 1.0], TreeParams::default());
        assert!(matches!(tree.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn depth_zero_is_weighted_mean() {
        let rows: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let cols = Columns::from_rows(&refs);
        let params = TreeParams {
            max_depth: 0,
            ..TreeParams::default()
        };
        let tree = RegressionTree::fit(&cols, &[0.0, 3.0, 6.0], &[1.0, 1.0, 0.5], vec![0, 1, 2], &params);
        assert_eq!(tree.nodes.len(), 1);
        assert!((tree.predict_row(&[1.0]) - 6.0 / 2.5).abs() < 1e-15);
    }

    #[test]
    fn respects_max_depth() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64).collect();
        let tree = fit_rows(
            &rows,
            &y,
            TreeParams {
                max_depth: 3,
                ..TreeParams::default()
            },
        );
        assert!(tree.depth() <= 3);
        assert!(tree.n_leaves() <= 8);
    }

    #[test]
    fn xor_needs_zero_gain_splits() {
        let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let y = [0.0, 1.0, 1.0, 0.0];
        let tree = fit_rows(&rows, &y, TreeParams::default());
        for (r, t) in rows.iter().zip(y) {
            assert_eq!(tree.predict_row(r), t);
        }
    }
}
