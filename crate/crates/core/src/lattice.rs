//! Recombining binomial approximation of a one-dimensional Brownian motion.
//!
//! Layer `i` holds `i + 1` states; state `j` sits at `B(i, j) = (2j - i) * sqrt(dt)`.
//! From `(i, j)` the walk moves to `(i + 1, j)` (down) or `(i + 1, j + 1)` (up)
//! with probability one half each, so conditional expectations are exact
//! two-point averages and the discrete martingale representation is a single
//! finite difference.

use serde::Serialize;
use thiserror::Error;

/// Hard limit for explicit path enumeration (2^24 paths).
pub const MAX_ENUMERATION_STEPS: usize = 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("lattice needs at least one time step")]
    ZeroSteps,
    #[error("field has {found} values on layer {layer}, lattice expects {expected}")]
    LayerMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("node ({layer}, {state}) is outside a lattice with {steps} steps")]
    OutOfRange {
        layer: usize,
        state: usize,
        steps: usize,
    },
    #[error("path enumeration refused: {steps} steps exceeds the limit of {limit}")]
    TooManyPaths { steps: usize, limit: usize },
}

/// A node address `(layer, state)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Node {
    pub layer: usize,
    pub state: usize,
}

impl Node {
    pub fn new(layer: usize, state: usize) -> Self {
        Self { layer, state }
    }
}

impl std::fmt::Display for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.layer, self.state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeModel {
    horizon: f64,
    steps: usize,
    dt: f64,
    sqrt_dt: f64,
}

impl LatticeModel {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, LatticeError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(LatticeError::InvalidHorizon(horizon));
        }
        if steps == 0 {
            return Err(LatticeError::ZeroSteps);
        }
        let dt = horizon / steps as f64;
        Ok(Self {
            horizon,
            steps,
            dt,
            sqrt_dt: dt.sqrt(),
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    /// `(N + 1)(N + 2) / 2`
    pub fn node_count(&self) -> usize {
        (self.steps + 1) * (self.steps + 2) / 2
    }

    /// Time of layer `i`. The last layer returns the horizon exactly.
    pub fn time(&self, layer: usize) -> f64 {
        if layer == self.steps {
            self.horizon
        } else {
            layer as f64 * self.dt
        }
    }

    pub fn brownian(&self, layer: usize, state: usize) -> f64 {
        (2.0 * state as f64 - layer as f64) * self.sqrt_dt
    }

    /// Flat index of a node in layer-major order.
    pub fn index(&self, layer: usize, state: usize) -> usize {
        layer * (layer + 1) / 2 + state
    }

    pub fn check_node(&self, node: Node) -> Result<(), LatticeError> {
        if node.layer > self.steps || node.state > node.layer {
            return Err(LatticeError::OutOfRange {
                layer: node.layer,
                state: node.state,
                steps: self.steps,
            });
        }
        Ok(())
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        (0..=self.steps).flat_map(|i| (0..=i).map(move |j| Node::new(i, j)))
    }

    /// Node field whose value at `(i, j)` is `f(t_i, B(i, j))`.
    pub fn field_from_fn(&self, f: impl Fn(f64, f64) -> f64) -> NodeField {
        let mut field = NodeField::zeros(self.steps);
        for i in 0..=self.steps {
            let t = self.time(i);
            for (j, v) in field.layer_mut(i).iter_mut().enumerate() {
                *v = f(t, self.brownian(i, j));
            }
        }
        field
    }

    /// Reachability probability of each node: `C(i, j) / 2^i`.
    pub fn node_probabilities(&self) -> NodeField {
        let mut p = NodeField::zeros(self.steps);
        p.layer_mut(0)[0] = 1.0;
        for i in 0..self.steps {
            let (prev, next) = p.two_layers_mut(i);
            for (j, &pj) in prev.iter().enumerate() {
                next[j] += 0.5 * pj;
                next[j + 1] += 0.5 * pj;
            }
        }
        p
    }

    /// Conditional expectation at `(i, j)` of a field given on layer `i + 1`.
    pub fn cond_expect(&self, next_layer: &[f64], at: Node) -> Result<f64, LatticeError> {
        self.check_next_layer(next_layer, at)?;
        Ok(0.5 * (next_layer[at.state] + next_layer[at.state + 1]))
    }

    /// Discrete martingale-representation coefficient at `(i, j)`:
    /// `(v(i+1, j+1) - v(i+1, j)) / (2 sqrt(dt))`.
    pub fn extract_z(&self, next_layer: &[f64], at: Node) -> Result<f64, LatticeError> {
        self.check_next_layer(next_layer, at)?;
        Ok((next_layer[at.state + 1] - next_layer[at.state]) / (2.0 * self.sqrt_dt))
    }

    fn check_next_layer(&self, next_layer: &[f64], at: Node) -> Result<(), LatticeError> {
        if at.layer >= self.steps || at.state > at.layer {
            return Err(LatticeError::OutOfRange {
                layer: at.layer,
                state: at.state,
                steps: self.steps,
            });
        }
        if next_layer.len() != at.layer + 2 {
            return Err(LatticeError::LayerMismatch {
                layer: at.layer + 1,
                expected: at.layer + 2,
                found: next_layer.len(),
            });
        }
        Ok(())
    }

    /// Iterator over all `2^N` paths. Refuses lattices deeper than
    /// [`MAX_ENUMERATION_STEPS`].
    pub fn enumerate_paths(&self) -> Result<PathIter, LatticeError> {
        if self.steps > MAX_ENUMERATION_STEPS {
            return Err(LatticeError::TooManyPaths {
                steps: self.steps,
                limit: MAX_ENUMERATION_STEPS,
            });
        }
        Ok(PathIter {
            steps: self.steps,
            next: 0,
            end: 1u64 << self.steps,
        })
    }

    /// Sum of a per-node increment field along a path, over layers `0..N`.
    pub fn path_sum(&self, field: &NodeField, path: &LatticePath) -> f64 {
        (0..self.steps)
            .map(|i| field.get(i, path.state_at(i)))
            .sum()
    }
}

/// A single lattice path, encoded as a bit string of up-moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticePath {
    bits: u64,
    steps: usize,
}

impl LatticePath {
    pub fn from_bits(bits: u64, steps: usize) -> Self {
        Self { bits, steps }
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// `true` if the move from layer `i` to `i + 1` goes up.
    pub fn goes_up(&self, layer: usize) -> bool {
        (self.bits >> layer) & 1 == 1
    }

    /// State index at `layer`: the number of up-moves taken before it.
    pub fn state_at(&self, layer: usize) -> usize {
        let mask = if layer >= 64 {
            u64::MAX
        } else {
            (1u64 << layer) - 1
        };
        (self.bits & mask).count_ones() as usize
    }

    pub fn probability(&self) -> f64 {
        0.5f64.powi(self.steps as i32)
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        (0..=self.steps).map(move |i| Node::new(i, self.state_at(i)))
    }
}

#[derive(Debug, Clone)]
pub struct PathIter {
    steps: usize,
    next: u64,
    end: u64,
}

impl Iterator for PathIter {
    type Item = LatticePath;

    fn next(&mut self) -> Option<LatticePath> {
        if self.next >= self.end {
            return None;
        }
        let path = LatticePath::from_bits(self.next, self.steps);
        self.next += 1;
        Some(path)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.end - self.next) as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for PathIter {}

/// Real values on every node of a lattice with `steps` layers beyond the root.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    steps: usize,
    values: Vec<f64>,
}

impl NodeField {
    pub fn zeros(steps: usize) -> Self {
        Self::constant(steps, 0.0)
    }

    pub fn constant(steps: usize, value: f64) -> Self {
        Self {
            steps,
            values: vec![value; (steps + 1) * (steps + 2) / 2],
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn offset(layer: usize) -> usize {
        layer * (layer + 1) / 2
    }

    pub fn get(&self, layer: usize, state: usize) -> f64 {
        debug_assert!(state <= layer && layer <= self.steps);
        self.values[Self::offset(layer) + state]
    }

    pub fn set(&mut self, layer: usize, state: usize, value: f64) {
        debug_assert!(state <= layer && layer <= self.steps);
        self.values[Self::offset(layer) + state] = value;
    }

    pub fn at(&self, node: Node) -> f64 {
        self.get(node.layer, node.state)
    }

    pub fn layer(&self, layer: usize) -> &[f64] {
        let start = Self::offset(layer);
        &self.values[start..start + layer + 1]
    }

    pub fn layer_mut(&mut self, layer: usize) -> &mut [f64] {
        let start = Self::offset(layer);
        &mut self.values[start..start + layer + 1]
    }

    /// Layer `i` and layer `i + 1` borrowed together.
    pub fn two_layers_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let start = Self::offset(layer);
        let mid = Self::offset(layer + 1);
        let (head, tail) = self.values[start..].split_at_mut(mid - start);
        (head, &mut tail[..layer + 2])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Pointwise map over `(node, value)`.
    pub fn map(&self, f: impl Fn(Node, f64) -> f64) -> NodeField {
        let mut out = self.clone();
        for i in 0..=self.steps {
            for (j, v) in out.layer_mut(i).iter_mut().enumerate() {
                *v = f(Node::new(i, j), *v);
            }
        }
        out
    }

    /// Largest `|self - other|` over all nodes, with the node where it occurs.
    /// Equal infinities count as zero distance.
    pub fn sup_distance(&self, other: &NodeField) -> (f64, Node) {
        assert_eq!(self.steps, other.steps, "fields live on different lattices");
        let mut worst = (0.0, Node::new(0, 0));
        for i in 0..=self.steps {
            for (j, (a, b)) in self.layer(i).iter().zip(other.layer(i)).enumerate() {
                let d = if a == b { 0.0 } else { (a - b).abs() };
                if d > worst.0 || d.is_nan() {
                    worst = (d, Node::new(i, j));
                }
            }
        }
        worst
    }

    /// Expectation `sum_j p(i, j) v(i, j)` over a single layer.
    pub fn layer_expectation(&self, probabilities: &NodeField, layer: usize) -> f64 {
        self.layer(layer)
            .iter()
            .zip(probabilities.layer(layer))
            .map(|(v, p)| v * p)
            .sum()
    }
}
