//! Structured meshes on the unit square.
//!
//! The fine mesh splits every square cell along its rising diagonal into two
//! right triangles. Nodes are numbered lexicographically with x₁ fastest.
//! A coarse mesh nests over the fine one; each coarse node owns the
//! neighborhood made of the (up to four) coarse cells touching it.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone)]
pub struct FineGrid {
    nx: usize,
    ny: usize,
    nodes: Vec<Point>,
    elements: Vec<[usize; 3]>,
    boundary: Vec<usize>,
    is_boundary: Vec<bool>,
}

pub fn build_fine_grid(nx: usize, ny: usize) -> Result<FineGrid> {
    FineGrid::new(nx, ny)
}

impl FineGrid {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(format!(
                "fine grid needs positive cell counts, got {nx}x{ny}"
            )));
        }
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([i as f64 / nx as f64, j as f64 / ny as f64]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut elements = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                elements.push([a, b, c]);
                elements.push([a, c, d]);
            }
        }
        let is_boundary: Vec<bool> = (0..nodes.len())
            .map(|k| {
                let (i, j) = (k % (nx + 1), k / (nx + 1));
                i == 0 || j == 0 || i == nx || j == ny
            })
            .collect();
        let boundary = (0..nodes.len()).filter(|&k| is_boundary[k]).collect();
        Ok(Self {
            nx,
            ny,
            nodes,
            elements,
            boundary,
            is_boundary,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> Point {
        self.nodes[k]
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn element(&self, e: usize) -> [usize; 3] {
        self.elements[e]
    }

    pub fn node_id(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    /// Lattice position `(i, j)` of a node.
    pub fn node_ij(&self, k: usize) -> (usize, usize) {
        (k % (self.nx + 1), k / (self.nx + 1))
    }

    /// Fine cell `(i, j)` containing element `e`.
    pub fn element_cell(&self, e: usize) -> (usize, usize) {
        let c = e / 2;
        (c % self.nx, c / self.nx)
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        self.is_boundary[k]
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&k| !self.is_boundary[k])
            .collect()
    }

    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    pub fn element_vertices(&self, e: usize) -> [Point; 3] {
        let [a, b, c] = self.elements[e];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn signed_area(&self, e: usize) -> f64 {
        triangle_signed_area(&self.element_vertices(e))
    }

    pub fn centroid(&self, e: usize) -> Point {
        let v = self.element_vertices(e);
        [
            (v[0][0] + v[1][0] + v[2][0]) / 3.0,
            (v[0][1] + v[1][1] + v[2][1]) / 3.0,
        ]
    }

    pub fn centroids(&self) -> Vec<Point> {
        (0..self.num_elements()).map(|e| self.centroid(e)).collect()
    }

    /// Boundary nodes in counter-clockwise order starting at the origin.
    pub fn boundary_cycle(&self) -> Vec<usize> {
        let (nx, ny) = (self.nx, self.ny);
        let mut cyc = Vec::with_capacity(2 * (nx + ny));
        cyc.extend((0..nx).map(|i| self.node_id(i, 0)));
        cyc.extend((0..ny).map(|j| self.node_id(nx, j)));
        cyc.extend((1..=nx).rev().map(|i| self.node_id(i, ny)));
        cyc.extend((1..=ny).rev().map(|j| self.node_id(0, j)));
        cyc
    }

    /// Node ids of the bottom edge, left to right.
    pub fn bottom_nodes(&self) -> Vec<usize> {
        (0..=self.nx).map(|i| self.node_id(i, 0)).collect()
    }

    /// Text dump with `node,<id>,<x1>,<x2>` and `tri,<id>,<n1>,<n2>,<n3>` rows.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (k, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "node,{k},{},{}", p[0], p[1]);
        }
        for (e, t) in self.elements.iter().enumerate() {
            let _ = writeln!(s, "tri,{e},{},{},{}", t[0], t[1], t[2]);
        }
        s
    }
}

pub fn triangle_signed_area(v: &[Point; 3]) -> f64 {
    0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]))
}

/// Neighborhood ω_i of one coarse node, in fine-lattice terms.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub coarse_node: usize,
    /// Inclusive fine-lattice node ranges covered by ω_i.
    pub i_range: (usize, usize),
    pub j_range: (usize, usize),
    pub elements: Vec<usize>,
    pub nodes: Vec<usize>,
    /// Fine nodes on ∂ω_i (including any lying on ∂Ω).
    pub boundary_nodes: Vec<usize>,
    pub interior_nodes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CoarseGrid {
    ncx: usize,
    ncy: usize,
    factor: (usize, usize),
    nodes: Vec<Point>,
    neighborhoods: Vec<Neighborhood>,
}

pub fn build_coarse_grid(fine: &FineGrid, ncx: usize, ncy: usize) -> Result<CoarseGrid> {
    CoarseGrid::new(fine, ncx, ncy)
}

impl CoarseGrid {
    pub fn new(fine: &FineGrid, ncx: usize, ncy: usize) -> Result<Self> {
        if ncx == 0 || ncy == 0 {
            return Err(Error::InvalidArgument(
                "coarse grid needs positive cell counts".into(),
            ));
        }
        if !fine.nx().is_multiple_of(ncx) || !fine.ny().is_multiple_of(ncy) {
            return Err(Error::InvalidArgument(format!(
                "fine grid {}x{} is not a refinement of coarse grid {ncx}x{ncy}",
                fine.nx(),
                fine.ny()
            )));
        }
        let (fx, fy) = (fine.nx() / ncx, fine.ny() / ncy);
        let mut nodes = Vec::with_capacity((ncx + 1) * (ncy + 1));
        let mut neighborhoods = Vec::with_capacity((ncx + 1) * (ncy + 1));
        for cj in 0..=ncy {
            for ci in 0..=ncx {
                let id = cj * (ncx + 1) + ci;
                nodes.push([ci as f64 / ncx as f64, cj as f64 / ncy as f64]);
                let i0 = ci.saturating_sub(1) * fx;
                let i1 = (ci + 1).min(ncx) * fx;
                let j0 = cj.saturating_sub(1) * fy;
                let j1 = (cj + 1).min(ncy) * fy;
                let mut elements = Vec::new();
                for j in j0..j1 {
                    for i in i0..i1 {
                        let c = j * fine.nx() + i;
                        elements.push(2 * c);
                        elements.push(2 * c + 1);
                    }
                }
                let mut nodes_w = Vec::new();
                let mut bnd = Vec::new();
                let mut int = Vec::new();
                for j in j0..=j1 {
                    for i in i0..=i1 {
                        let k = fine.node_id(i, j);
                        nodes_w.push(k);
                        if i == i0 || i == i1 || j == j0 || j == j1 {
                            bnd.push(k);
                        } else {
                            int.push(k);
                        }
                    }
                }
                neighborhoods.push(Neighborhood {
                    coarse_node: id,
                    i_range: (i0, i1),
                    j_range: (j0, j1),
                    elements,
                    nodes: nodes_w,
                    boundary_nodes: bnd,
                    interior_nodes: int,
                });
            }
        }
        Ok(Self {
            ncx,
            ncy,
            factor: (fx, fy),
            nodes,
            neighborhoods,
        })
    }

    pub fn ncx(&self) -> usize {
        self.ncx
    }

    pub fn ncy(&self) -> usize {
        self.ncy
    }

    pub fn nesting_factor(&self) -> (usize, usize) {
        self.factor
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn neighborhoods(&self) -> &[Neighborhood] {
        &self.neighborhoods
    }

    pub fn neighborhood(&self, i: usize) -> &Neighborhood {
        &self.neighborhoods[i]
    }

    pub fn hx(&self) -> f64 {
        1.0 / self.ncx as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / self.ncy as f64
    }

    /// Value of the bilinear coarse hat of node `i` at `x`.
    pub fn hat(&self, i: usize, x: Point) -> f64 {
        let c = self.nodes[i];
        let wx = (1.0 - (x[0] - c[0]).abs() / self.hx()).max(0.0);
        let wy = (1.0 - (x[1] - c[1]).abs() / self.hy()).max(0.0);
        wx * wy
    }

    /// Gradient of the bilinear hat of node `i` at `x` (one-sided on kinks).
    pub fn hat_gradient(&self, i: usize, x: Point) -> [f64; 2] {
        let c = self.nodes[i];
        let (hx, hy) = (self.hx(), self.hy());
        let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
        let wx = (1.0 - dx.abs() / hx).max(0.0);
        let wy = (1.0 - dy.abs() / hy).max(0.0);
        if wx == 0.0 && wy == 0.0 {
            return [0.0, 0.0];
        }
        let dwx = if dx.abs() < hx {
            -dx.signum() / hx
        } else {
            0.0
        };
        let dwy = if dy.abs() < hy {
            -dy.signum() / hy
        } else {
            0.0
        };
        [dwx * wy, wx * dwy]
    }
}

/// Coarse bilinear hats sampled at fine nodes, one sparse vector per coarse node.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    functions: Vec<Vec<(usize, f64)>>,
    num_fine_nodes: usize,
}

pub fn partition_of_unity(coarse: &CoarseGrid, fine: &FineGrid) -> PartitionOfUnity {
    PartitionOfUnity::new(coarse, fine)
}

impl PartitionOfUnity {
    pub fn new(coarse: &CoarseGrid, fine: &FineGrid) -> Self {
        let functions = coarse
            .neighborhoods()
            .iter()
            .map(|nb| {
                nb.nodes
                    .iter()
                    .map(|&k| (k, coarse.hat(nb.coarse_node, fine.node(k))))
                    .collect()
            })
            .collect();
        Self {
            functions,
            num_fine_nodes: fine.num_nodes(),
        }
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Sparse `(fine node, χ_i)` pairs over ω_i.
    pub fn function(&self, i: usize) -> &[(usize, f64)] {
        &self.functions[i]
    }

    pub fn dense(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_fine_nodes];
        for &(k, x) in &self.functions[i] {
            v[k] = x;
        }
        v
    }

    pub fn sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.num_fine_nodes];
        for f in &self.functions {
            for &(k, x) in f {
                s[k] += x;
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_mesh() {
        let g = build_fine_grid(1, 1).unwrap();
        assert_eq!(g.num_nodes(), 4);
        assert_eq!(g.num_elements(), 2);
        assert_eq!(g.boundary_nodes().len(), 4);
    }

    #[test]
    fn experiment_sized_meshes() {
        let g = build_fine_grid(120, 120).unwrap();
        assert_eq!(g.num_nodes(), 14641);
        assert_eq!(g.num_elements(), 28800);
        assert_eq!(build_fine_grid(100, 100).unwrap().num_nodes(), 10201);
    }

    #[test]
    fn zero_cells_rejected() {
        assert!(build_fine_grid(0, 3).is_err());
        assert!(build_fine_grid(3, 0).is_err());
    }

    #[test]
    fn areas_positive_and_sum_to_one() {
        let g = build_fine_grid(7, 5).unwrap();
        let mut total = 0.0;
        for e in 0..g.num_elements() {
            let a = g.signed_area(e);
            assert!(a > 0.0);
            total += a;
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_set_matches_coordinates() {
        let g = build_fine_grid(6, 4).unwrap();
        for k in 0..g.num_nodes() {
            let [x, y] = g.node(k);
            let on = x == 0.0 || x == 1.0 || y == 0.0 || y == 1.0;
            assert_eq!(on, g.is_boundary(k));
        }
        assert_eq!(g.boundary_cycle().len(), g.boundary_nodes().len());
    }

    #[test]
    fn coarse_node_counts() {
        let f = build_fine_grid(10, 10).unwrap();
        let c = build_coarse_grid(&f, 5, 5).unwrap();
        assert_eq!(c.num_nodes(), 36);
        assert!(build_coarse_grid(&f, 3, 3).is_err());
    }

    #[test]
    fn neighborhood_element_counts() {
        let f = build_fine_grid(120, 120).unwrap();
        let c = build_coarse_grid(&f, 10, 10).unwrap();
        // corner: one coarse cell of 12x12 fine cells
        assert_eq!(c.neighborhood(0).elements.len(), 2 * 12 * 12);
        // interior: four coarse cells
        let mid = 5 * 11 + 5;
        assert_eq!(c.neighborhood(mid).elements.len(), 1152);
    }

    #[test]
    fn every_element_in_one_to_four_neighborhoods() {
        let f = build_fine_grid(12, 8).unwrap();
        let c = build_coarse_grid(&f, 3, 2).unwrap();
        let mut count = vec![0usize; f.num_elements()];
        for nb in c.neighborhoods() {
            for &e in &nb.elements {
                count[e] += 1;
            }
        }
        assert!(count.iter().all(|&n| (1..=4).contains(&n)));
    }

    #[test]
    fn partition_of_unity_properties() {
        let f = build_fine_grid(12, 12).unwrap();
        let c = build_coarse_grid(&f, 4, 3).unwrap();
        let pou = partition_of_unity(&c, &f);
        for s in pou.sum() {
            assert!((s - 1.0).abs() < 1e-14);
        }
        let mut support = vec![0usize; f.num_nodes()];
        for i in 0..pou.len() {
            for &(k, v) in pou.function(i) {
                assert!((0.0..=1.0).contains(&v));
                if v > 0.0 {
                    support[k] += 1;
                }
            }
        }
        assert!(support.iter().all(|&n| n <= 4));
        // nodal basis at coarse nodes
        for i in 0..c.num_nodes() {
            for j in 0..c.num_nodes() {
                let v = c.hat(i, c.nodes()[j]);
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn hat_is_half_at_adjacent_edge_midpoint() {
        let f = build_fine_grid(8, 8).unwrap();
        let c = build_coarse_grid(&f, 4, 4).unwrap();
        let i = 5 + 1; // coarse node (0.25, 0.25)
        let pou = partition_of_unity(&c, &f);
        let mid = f.node_id(3, 2); // (0.375, 0.25): midpoint of edge to (0.5, 0.25)
        let v = pou.function(i).iter().find(|(k, _)| *k == mid).unwrap().1;
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn refinement_keeps_hat_values() {
        let f1 = build_fine_grid(8, 8).unwrap();
        let f2 = build_fine_grid(16, 16).unwrap();
        let c1 = build_coarse_grid(&f1, 4, 4).unwrap();
        let c2 = build_coarse_grid(&f2, 4, 4).unwrap();
        let p1 = partition_of_unity(&c1, &f1);
        let p2 = partition_of_unity(&c2, &f2);
        for i in 0..c1.num_nodes() {
            let d1 = p1.dense(i);
            let d2 = p2.dense(i);
            for j in 0..=8 {
                for ii in 0..=8 {
                    assert_eq!(d1[f1.node_id(ii, j)], d2[f2.node_id(2 * ii, 2 * j)]);
                }
            }
        }
    }

    #[test]
    fn dump_rows() {
        let g = build_fine_grid(1, 1).unwrap();
        let d = g.dump();
        assert!(d.starts_with("node,0,0,0\n"));
        assert!(d.contains("tri,1,0,3,2\n"));
        assert_eq!(d.lines().count(), 6);
    }
}
