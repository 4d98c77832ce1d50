//! Axis-aligned regression tree on the two site coordinates.
//!
//! Impurity is the within-node sum of squared errors and leaves predict the
//! mean of their targets. A node that may still grow two more levels scores
//! each candidate split by its own SSE reduction plus the best reductions its
//! two children could achieve with one further split each. This makes depth-2
//! trees globally optimal and lets the tree find checkerboard-like structure
//! where no single split helps on its own.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub min_improvement: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 6,
            min_leaf: 10,
            min_improvement: 1e-6,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_leaf == 0 {
            return Err(Error::invalid("tree min_leaf must be at least 1"));
        }
        if !(self.min_improvement >= 0.0) {
            return Err(Error::invalid("tree min_improvement must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn predict(&self, s: [f64; 2]) -> f64 {
        self.nodes[self.leaf_index(s)].leaf_value()
    }

    fn leaf_index(&self, s: [f64; 2]) -> usize {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { .. } => return idx,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if s[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

impl Node {
    fn leaf_value(&self) -> f64 {
        match self {
            Node::Leaf { value } => *value,
            Node::Split { .. } => unreachable!("leaf_index always ends on a leaf"),
        }
    }
}

/// Coordinates with per-axis sort orders computed once and reused across fits.
#[derive(Debug, Clone)]
pub struct TreeFitter {
    coords: Vec<[f64; 2]>,
    orders: [Vec<usize>; 2],
    params: TreeParams,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    /// Number of samples sent left, in the feature's sort order.
    pos: usize,
    threshold: f64,
    gain: f64,
}

impl TreeFitter {
    pub fn new(coords: &[[f64; 2]], params: TreeParams) -> Result<Self> {
        params.validate()?;
        if coords.is_empty() {
            return Err(Error::invalid("regression tree needs at least one site"));
        }
        let order_by = |f: usize| {
            let mut o: Vec<usize> = (0..coords.len()).collect();
            o.sort_by(|&a, &b| coords[a][f].total_cmp(&coords[b][f]).then(a.cmp(&b)));
            o
        };
        Ok(TreeFitter {
            coords: coords.to_vec(),
            orders: [order_by(0), order_by(1)],
            params,
        })
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn fit(&self, targets: &[f64]) -> Result<RegressionTree> {
        if targets.len() != self.coords.len() {
            return Err(Error::Shape {
                expected: self.coords.len(),
                found: targets.len(),
            });
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("non-finite regression target"));
        }
        let mut nodes = Vec::new();
        let mut scratch = vec![false; self.coords.len()];
        self.grow(
            &mut nodes,
            [self.orders[0].clone(), self.orders[1].clone()],
            targets,
            self.params.max_depth,
            &mut scratch,
        );
        Ok(RegressionTree { nodes })
    }

    fn grow(
        &self,
        nodes: &mut Vec<Node>,
        orders: [Vec<usize>; 2],
        targets: &[f64],
        depth_left: usize,
        in_left: &mut [bool],
    ) -> usize {
        let me = nodes.len();
        let mean = orders[0].iter().map(|&i| targets[i]).sum::<f64>() / orders[0].len() as f64;
        nodes.push(Node::Leaf { value: mean });

        let choice = match depth_left {
            0 => None,
            1 => self
                .best_stump(&orders, targets)
                .filter(|c| c.gain >= self.params.min_improvement),
            _ => self
                .best_lookahead(&orders, targets, in_left)
                .filter(|(_, total)| *total >= self.params.min_improvement)
                .map(|(c, _)| c),
        };
        let Some(cand) = choice else {
            return me;
        };

        let (left_orders, right_orders) = self.partition(&orders, cand, in_left);
        let left = self.grow(nodes, left_orders, targets, depth_left - 1, in_left);
        let right = self.grow(nodes, right_orders, targets, depth_left - 1, in_left);
        nodes[me] = Node::Split {
            feature: cand.feature,
            threshold: cand.threshold,
            left,
            right,
        };
        me
    }

    fn partition(
        &self,
        orders: &[Vec<usize>; 2],
        cand: Candidate,
        in_left: &mut [bool],
    ) -> ([Vec<usize>; 2], [Vec<usize>; 2]) {
        let split_order = &orders[cand.feature];
        for &i in &split_order[..cand.pos] {
            in_left[i] = true;
        }
        let mut left: [Vec<usize>; 2] = Default::default();
        let mut right: [Vec<usize>; 2] = Default::default();
        for f in 0..2 {
            for &i in &orders[f] {
                if in_left[i] {
                    left[f].push(i);
                } else {
                    right[f].push(i);
                }
            }
        }
        for &i in &split_order[..cand.pos] {
            in_left[i] = false;
        }
        (left, right)
    }

    /// Best single split of a node, by SSE reduction.
    fn best_stump(&self, orders: &[Vec<usize>; 2], targets: &[f64]) -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        for f in 0..2 {
            if let Some(c) = self.best_on_feature(f, &orders[f], targets) {
                if best.is_none_or(|b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn best_on_feature(&self, feature: usize, order: &[usize], targets: &[f64]) -> Option<Candidate> {
        let m = order.len();
        let min_leaf = self.params.min_leaf;
        if m < 2 * min_leaf || m < 2 {
            return None;
        }
        let total: f64 = order.iter().map(|&i| targets[i]).sum();
        let base = total * total / m as f64;
        let mut left_sum = 0.0;
        let mut best: Option<Candidate> = None;
        for k in 1..m {
            left_sum += targets[order[k - 1]];
            if k < min_leaf || m - k < min_leaf {
                continue;
            }
            let lo = self.coords[order[k - 1]][feature];
            let hi = self.coords[order[k]][feature];
            if lo >= hi {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / k as f64 + right_sum * right_sum / (m - k) as f64 - base;
            if best.is_none_or(|b| gain > b.gain) {
                best = Some(Candidate {
                    feature,
                    pos: k,
                    threshold: 0.5 * (lo + hi),
                    gain,
                });
            }
        }
        best
    }

    /// Split maximizing its own gain plus the best follow-up gain in each child.
    fn best_lookahead(
        &self,
        orders: &[Vec<usize>; 2],
        targets: &[f64],
        in_left: &mut [bool],
    ) -> Option<(Candidate, f64)> {
        let m = orders[0].len();
        let min_leaf = self.params.min_leaf;
        if m < 2 * min_leaf || m < 2 {
            return None;
        }
        let follow_up = |c: Option<Candidate>| {
            c.map_or(0.0, |c| if c.gain >= self.params.min_improvement { c.gain } else { 0.0 })
        };
        let total: f64 = orders[0].iter().map(|&i| targets[i]).sum();
        let base = total * total / m as f64;

        let mut best: Option<(Candidate, f64)> = None;
        let mut left: [Vec<usize>; 2] = [Vec::with_capacity(m), Vec::with_capacity(m)];
        let mut right: [Vec<usize>; 2] = [Vec::with_capacity(m), Vec::with_capacity(m)];
        for f in 0..2 {
            let order = &orders[f];
            let other = &orders[1 - f];
            let mut left_sum = 0.0;
            for k in 1..m {
                left_sum += targets[order[k - 1]];
                in_left[order[k - 1]] = true;
                if k < min_leaf || m - k < min_leaf {
                    continue;
                }
                let lo = self.coords[order[k - 1]][f];
                let hi = self.coords[order[k]][f];
                if lo >= hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain =
                    left_sum * left_sum / k as f64 + right_sum * right_sum / (m - k) as f64 - base;

                left[f].clear();
                left[f].extend_from_slice(&order[..k]);
                right[f].clear();
                right[f].extend_from_slice(&order[k..]);
                left[1 - f].clear();
                right[1 - f].clear();
                for &i in other {
                    if in_left[i] {
                        left[1 - f].push(i);
                    } else {
                        right[1 - f].push(i);
                    }
                }
                let combined = gain
                    + follow_up(self.best_stump(&left, targets))
                    + follow_up(self.best_stump(&right, targets));
                // near-ties go to the larger immediate reduction
                let better = best.is_none_or(|(b, total)| {
                    let tol = 1e-12 * (1.0 + total.abs());
                    combined > total + tol || (combined >= total - tol && gain > b.gain)
                });
                if better {
                    best = Some((
                        Candidate {
                            feature: f,
                            pos: k,
                            threshold: 0.5 * (lo + hi),
                            gain,
                        },
                        combined,
                    ));
                }
            }
            for &i in order {
                in_left[i] = false;
            }
        }
        best
    }
}

/// Fits a regression tree to `targets` observed at `coords`.
pub fn fit_tree(coords: &[[f64; 2]], targets: &[f64], params: TreeParams) -> Result<RegressionTree> {
    TreeFitter::new(coords, params)?.fit(targets)
}
