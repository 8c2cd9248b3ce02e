//! Uniform right-triangle mesh of the state triangle and P1 interpolation.

use crate::dynamics::State;
use crate::error::{Error, Result};

/// Nodes `(j/n, k/n)` with `j + k <= n`, ordered row by row in `k`.
///
/// Each unit square `[j, j+1] × [k, k+1]` below the hypotenuse holds a lower
/// cell `(j,k) (j+1,k) (j,k+1)` and, when `j + k + 2 <= n`, an upper cell
/// `(j+1,k+1) (j,k+1) (j+1,k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularGrid {
    n: usize,
    h: f64,
    row_offsets: Vec<usize>,
}

/// Containing cell of a point and its barycentric weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub cell: usize,
    pub nodes: [u32; 3],
    pub weights: [f64; 3],
}

impl TriangularGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::GridSize(n));
        }
        let mut row_offsets = Vec::with_capacity(n + 2);
        let mut acc = 0;
        for k in 0..=n {
            row_offsets.push(acc);
            acc += n + 1 - k;
        }
        row_offsets.push(acc);
        Ok(Self {
            n,
            h: 1.0 / n as f64,
            row_offsets,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn node_count(&self) -> usize {
        (self.n + 1) * (self.n + 2) / 2
    }

    pub fn cell_count(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn index(&self, j: usize, k: usize) -> usize {
        debug_assert!(j + k <= self.n);
        self.row_offsets[k] + j
    }

    /// Inverse of [`Self::index`].
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        let k = self.row_offsets.partition_point(|&o| o <= idx) - 1;
        (idx - self.row_offsets[k], k)
    }

    #[inline]
    pub fn node_state(&self, j: usize, k: usize) -> State {
        State {
            s: j as f64 / self.n as f64,
            i: k as f64 / self.n as f64,
        }
    }

    /// `(j, k)` for every node, in index order.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..=self.n).flat_map(move |k| (0..=self.n - k).map(move |j| (j, k)))
    }

    /// Vertices of a cell, lower cells first.
    pub fn cell_vertices(&self, cell: usize) -> [usize; 3] {
        let lower = self.n * (self.n + 1) / 2;
        if cell < lower {
            let (j, k) = self.lower_coords(cell);
            [self.index(j, k), self.index(j + 1, k), self.index(j, k + 1)]
        } else {
            let (j, k) = self.upper_coords(cell - lower);
            [self.index(j + 1, k + 1), self.index(j, k + 1), self.index(j + 1, k)]
        }
    }

    fn lower_id(&self, j: usize, k: usize) -> usize {
        // Row k holds n - k lower cells.
        k * self.n - k * (k.saturating_sub(1)) / 2 + j
    }

    fn upper_id(&self, j: usize, k: usize) -> usize {
        // Row k holds n - 1 - k upper cells.
        self.n * (self.n + 1) / 2 + k * (self.n - 1) - k * (k.saturating_sub(1)) / 2 + j
    }

    fn lower_coords(&self, id: usize) -> (usize, usize) {
        let mut k = 0;
        while self.lower_id(0, k + 1) <= id && k + 1 < self.n {
            k += 1;
        }
        (id - self.lower_id(0, k), k)
    }

    fn upper_coords(&self, id: usize) -> (usize, usize) {
        let base = self.n * (self.n + 1) / 2;
        let mut k = 0;
        while k + 2 < self.n && self.upper_id(0, k + 1) <= id + base {
            k += 1;
        }
        (id + base - self.upper_id(0, k), k)
    }

    /// Finds the cell containing `x`. Points within the clamping tolerance
    /// of the triangle are projected onto it first.
    pub fn locate(&self, x: State) -> Result<Location> {
        let x = x.clamped()?;
        let n = self.n;
        let nf = n as f64;
        let a = x.s * nf;
        let b = x.i * nf;
        let mut j = (a.floor() as usize).min(n - 1);
        let mut k = (b.floor() as usize).min(n - 1);
        if j + k > n - 1 {
            // Only reachable on the hypotenuse: slide into the lower cell.
            let excess = j + k - (n - 1);
            let dj = excess.min(j);
            j -= dj;
            k -= excess - dj;
        }
        let fa = a - j as f64;
        let fb = b - k as f64;
        if fa + fb <= 1.0 || j + k + 2 > n {
            let w0 = (1.0 - fa - fb).max(0.0);
            let scale = 1.0 / (w0 + fa + fb);
            Ok(Location {
                cell: self.lower_id(j, k),
                nodes: [
                    self.index(j, k) as u32,
                    self.index(j + 1, k) as u32,
                    self.index(j, k + 1) as u32,
                ],
                weights: [w0 * scale, fa * scale, fb * scale],
            })
        } else {
            let ga = 1.0 - fa;
            let gb = 1.0 - fb;
            Ok(Location {
                cell: self.upper_id(j, k),
                nodes: [
                    self.index(j + 1, k + 1) as u32,
                    self.index(j, k + 1) as u32,
                    self.index(j + 1, k) as u32,
                ],
                weights: [1.0 - ga - gb, ga, gb],
            })
        }
    }

    pub fn interpolate(&self, values: &[f64], x: State) -> Result<f64> {
        let loc = self.locate(x)?;
        Ok(loc.apply(values))
    }
}

impl Location {
    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.weights[0] * values[self.nodes[0] as usize]
            + self.weights[1] * values[self.nodes[1] as usize]
            + self.weights[2] * values[self.nodes[2] as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn node_counts() {
        assert_eq!(TriangularGrid::new(2).unwrap().node_count(), 6);
        assert_eq!(TriangularGrid::new(200).unwrap().node_count(), 20301);
        assert!(matches!(TriangularGrid::new(1), Err(Error::GridSize(1))));
    }

    #[test]
    fn indexing_is_a_bijection() {
        let g = TriangularGrid::new(7).unwrap();
        let all: Vec<_> = g.nodes().collect();
        assert_eq!(all.len(), g.node_count());
        for (idx, &(j, k)) in all.iter().enumerate() {
            assert!(j + k <= 7);
            assert_eq!(g.index(j, k), idx);
            assert_eq!(g.coords(idx), (j, k));
        }
    }

    #[test]
    fn cells_tile_the_triangle() {
        let g = TriangularGrid::new(5).unwrap();
        let mut seen = vec![false; g.cell_count()];
        for c in 0..g.cell_count() {
            let v = g.cell_vertices(c);
            let centroid = v.iter().fold(State { s: 0.0, i: 0.0 }, |acc, &idx| {
                let (j, k) = g.coords(idx);
                let p = g.node_state(j, k);
                State {
                    s: acc.s + p.s / 3.0,
                    i: acc.i + p.i / 3.0,
                }
            });
            let loc = g.locate(centroid).unwrap();
            assert_eq!(loc.cell, c);
            assert_eq!(loc.nodes.map(|n| n as usize), v);
            assert!(!seen[c]);
            seen[c] = true;
        }
    }

    #[test]
    fn exact_on_nodes_and_edge_midpoints() {
        let g = TriangularGrid::new(4).unwrap();
        let values: Vec<f64> = (0..g.node_count()).map(|k| (k as f64 * 0.37).sin()).collect();
        for (j, k) in g.nodes() {
            let v = g.interpolate(&values, g.node_state(j, k)).unwrap();
            assert!((v - values[g.index(j, k)]).abs() < 1e-15);
        }
        let mid = State { s: 0.125, i: 0.25 };
        let v = g.interpolate(&values, mid).unwrap();
        let expect = 0.5 * (values[g.index(0, 1)] + values[g.index(1, 1)]);
        assert!((v - expect).abs() < 1e-15);
    }

    #[test]
    fn rejects_points_outside() {
        let g = TriangularGrid::new(4).unwrap();
        assert!(g.locate(State { s: 0.6, i: 0.5 }).is_err());
        assert!(g.locate(State { s: -1e-3, i: 0.5 }).is_err());
        assert!(g.locate(State { s: 0.5, i: 0.5 + 1e-12 }).is_ok());
    }

    proptest! {
        #[test]
        fn reproduces_affine_fields(
            n in 2usize..40,
            a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0,
            u in 0.0f64..1.0, v in 0.0f64..1.0,
        ) {
            let g = TriangularGrid::new(n).unwrap();
            let values: Vec<f64> = g.nodes().map(|(j, k)| {
                let x = g.node_state(j, k);
                a + b * x.s + c * x.i
            }).collect();
            let (s, i) = if u + v <= 1.0 { (u, v) } else { (1.0 - u, 1.0 - v) };
            let got = g.interpolate(&values, State { s, i }).unwrap();
            prop_assert!((got - (a + b * s + c * i)).abs() < 1e-12);
        }

        #[test]
        fn weights_are_a_partition_of_unity(u in 0.0f64..1.0, v in 0.0f64..1.0) {
            let g = TriangularGrid::new(13).unwrap();
            let (s, i) = if u + v <= 1.0 { (u, v) } else { (1.0 - u, 1.0 - v) };
            let loc = g.locate(State { s, i }).unwrap();
            prop_assert!(loc.weights.iter().all(|w| *w >= -1e-12));
            prop_assert!((loc.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
