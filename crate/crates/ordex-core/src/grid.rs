//! Uniform time grid carrying all sampled objects.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Minimum number of nodes a grid must have. Finite-difference stencils and
/// edge extrapolation assume at least this many nodes.
pub const MIN_NODES: usize = 8;

/// Uniform discretization of a closed interval `[a, b]` with `n` nodes.
///
/// Nodes are `t_i = a + i * h` with `h = (b - a) / (n - 1)`, so `t_0 = a` and
/// `t_{n-1} = b` exactly (the last node is pinned to `b` to avoid drift).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    a: f64,
    b: f64,
    n: usize,
    h: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Arc<Self>> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidGrid(format!("endpoints not finite: [{a}, {b}]")));
        }
        if b <= a {
            return Err(Error::InvalidGrid(format!("need b > a, got [{a}, {b}]")));
        }
        if n < MIN_NODES {
            return Err(Error::InvalidGrid(format!("need at least {MIN_NODES} nodes, got {n}")));
        }
        let h = (b - a) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| a + i as f64 * h).collect();
        nodes[n - 1] = b;
        Ok(Arc::new(TimeGrid { a, b, n, h, nodes }))
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Structural grid identity: two grids are interchangeable when they
    /// discretize the same interval with the same node count.
    pub fn same_as(&self, other: &Self) -> bool {
        self.a == other.a && self.b == other.b && self.n == other.n
    }
}

/// Convenience constructor mirroring the library-level operation name.
pub fn make_grid(a: f64, b: f64, n: usize) -> Result<Arc<TimeGrid>> {
    TimeGrid::new(a, b, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_on_unit_interval() {
        let g = make_grid(0.0, 1.0, 11).unwrap();
        assert_eq!(g.n(), 11);
        assert!((g.h() - 0.1).abs() < 1e-15);
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(10), 1.0);
        for i in 0..11 {
            assert!((g.node(i) - 0.1 * i as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_too_few_nodes() {
        assert!(make_grid(0.0, 1.0, 7).is_err());
    }

    #[test]
    fn rejects_empty_interval() {
        assert!(make_grid(1.0, 1.0, 11).is_err());
        assert!(make_grid(2.0, 1.0, 11).is_err());
    }

    #[test]
    fn symmetric_grid() {
        let g = make_grid(-1.0, 1.0, 21).unwrap();
        assert!((g.h() - 0.1).abs() < 1e-15);
        assert!(g.node(10).abs() < 1e-15);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
    }
}
