//! Harmonic map from the reference square onto a domain with a perturbed
//! bottom edge, and the pullback of the diffusion operator.

use crate::assembly::{assemble_stiffness, p1_gradients, DofLayout, ElementCoefficient};
use crate::error::{check_len, Error, Result};
use crate::grid::{FineGrid, Point};
use crate::linalg::SparseCholesky;
use crate::par;
use crate::sparse::CsrMatrix;

/// Side of the reference square a boundary node belongs to (corners go to the
/// bottom/top edge).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundarySide {
    Left,
    Top,
    Right,
    Bottom,
}

#[derive(Debug, Clone)]
pub struct DomainMap {
    /// Physical coordinates of every fine node.
    pub coords: Vec<Point>,
    /// Per-element Jacobian `∂x/∂ξ` as `[[j11, j12], [j21, j22]]`.
    pub jacobians: Vec<[[f64; 2]; 2]>,
    pub dets: Vec<f64>,
}

/// Prefactored discrete Laplacian on the reference square; reused across draws.
pub struct HarmonicMapper {
    nx: usize,
    ny: usize,
    stiffness: CsrMatrix,
    interior: SparseCholesky,
    boundary: Vec<usize>,
}

pub fn boundary_side(grid: &FineGrid, k: usize) -> Option<BoundarySide> {
    let (i, j) = grid.node_ij(k);
    if j == 0 {
        Some(BoundarySide::Bottom)
    } else if j == grid.ny() {
        Some(BoundarySide::Top)
    } else if i == 0 {
        Some(BoundarySide::Left)
    } else if i == grid.nx() {
        Some(BoundarySide::Right)
    } else {
        None
    }
}

/// Points at arclength fractions `i/n`, `i = 0..=n`, along the polyline through
/// `(i/n, s_i)`.
fn arclength_uniform(s: &[f64]) -> Vec<Point> {
    let n = s.len() - 1;
    let verts: Vec<Point> = (0..=n).map(|i| [i as f64 / n as f64, s[i]]).collect();
    let mut cum = vec![0.0; n + 1];
    for i in 0..n {
        let d = [verts[i + 1][0] - verts[i][0], verts[i + 1][1] - verts[i][1]];
        cum[i + 1] = cum[i] + d[0].hypot(d[1]);
    }
    let total = cum[n];
    let mut out = Vec::with_capacity(n + 1);
    let mut seg = 0;
    for i in 0..=n {
        let target = total * i as f64 / n as f64;
        while seg + 1 < n && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 {
            ((target - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (verts[seg], verts[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    // endpoints exactly
    out[0] = verts[0];
    out[n] = verts[n];
    out
}

impl HarmonicMapper {
    pub fn new(grid: &FineGrid) -> Result<Self> {
        let stiffness = assemble_stiffness(grid, &vec![1.0; grid.num_elements()])?;
        let layout = DofLayout::dirichlet(grid, &vec![0.0; grid.boundary_nodes().len()])?;
        let interior = SparseCholesky::new(
            &layout.restrict_matrix(&stiffness),
            "harmonic map Laplacian",
        )?;
        Ok(Self {
            nx: grid.nx(),
            ny: grid.ny(),
            stiffness,
            interior,
            boundary: grid.boundary_nodes().to_vec(),
        })
    }

    /// Physical boundary positions for a bottom-edge realization `s` sampled at
    /// `x1 = i/nx`, ordered like [`FineGrid::boundary_nodes`].
    pub fn boundary_positions(&self, grid: &FineGrid, s: &[f64]) -> Result<Vec<Point>> {
        check_len("bottom boundary realization", self.nx + 1, s.len())?;
        if s.iter().any(|v| !v.is_finite() || *v >= 1.0) {
            return Err(Error::OutOfDomain {
                value: s.to_vec(),
                reason: "bottom boundary must stay below the top edge".into(),
            });
        }
        let bottom = arclength_uniform(s);
        let (s0, s1) = (s[0], s[self.nx]);
        Ok(self
            .boundary
            .iter()
            .map(|&k| {
                let (i, j) = grid.node_ij(k);
                let xi = grid.node(k);
                match boundary_side(grid, k).expect("boundary node") {
                    BoundarySide::Bottom => bottom[i],
                    BoundarySide::Top => [xi[0], 1.0],
                    BoundarySide::Left => [0.0, s0 + (j as f64 / self.ny as f64) * (1.0 - s0)],
                    BoundarySide::Right => [1.0, s1 + (j as f64 / self.ny as f64) * (1.0 - s1)],
                }
            })
            .collect())
    }

    /// Two Laplace solves with the prescribed boundary coordinates.
    pub fn map(&self, grid: &FineGrid, s: &[f64]) -> Result<DomainMap> {
        let positions = self.boundary_positions(grid, s)?;
        let mut coords = grid.nodes().to_vec();
        for c in 0..2 {
            let g: Vec<f64> = positions.iter().map(|p| p[c]).collect();
            let layout = DofLayout::dirichlet(grid, &g)?;
            let x = self.interior.solve(&layout.lift(&self.stiffness))?;
            for (k, v) in layout.expand(&x).into_iter().enumerate() {
                coords[k][c] = v;
            }
        }
        DomainMap::from_coords(grid, coords)
    }
}

/// Harmonic map for one realization; see [`HarmonicMapper`] to amortize the
/// factorization over many draws.
pub fn stochastic_map(s: &[f64], grid: &FineGrid) -> Result<DomainMap> {
    HarmonicMapper::new(grid)?.map(grid, s)
}

impl DomainMap {
    /// Piecewise-linear map through `coords`; rejects folded elements.
    pub fn from_coords(grid: &FineGrid, coords: Vec<Point>) -> Result<Self> {
        check_len("mapped coordinates", grid.num_nodes(), coords.len())?;
        let jd: Vec<([[f64; 2]; 2], f64)> = par::map_range(grid.num_elements(), |e| {
            let (g, _) = p1_gradients(&grid.element_vertices(e));
            let n = grid.element(e);
            let mut j = [[0.0; 2]; 2];
            for a in 0..3 {
                for r in 0..2 {
                    for c in 0..2 {
                        j[r][c] += coords[n[a]][r] * g[a][c];
                    }
                }
            }
            (j, j[0][0] * j[1][1] - j[0][1] * j[1][0])
        });
        if let Some((e, (_, det))) = jd.iter().enumerate().find(|(_, (_, d))| !(*d > 0.0)) {
            return Err(Error::InvalidGeometry {
                element: e,
                det: *det,
            });
        }
        let (jacobians, dets) = jd.into_iter().unzip();
        Ok(Self {
            coords,
            jacobians,
            dets,
        })
    }

    pub fn identity(grid: &FineGrid) -> Self {
        Self::from_coords(grid, grid.nodes().to_vec()).expect("identity map is valid")
    }

    /// Physical centroid of element `e`.
    pub fn centroid(&self, grid: &FineGrid, e: usize) -> Point {
        let n = grid.element(e);
        let mut c = [0.0; 2];
        for a in n {
            c[0] += self.coords[a][0] / 3.0;
            c[1] += self.coords[a][1] / 3.0;
        }
        c
    }

    pub fn min_det(&self) -> f64 {
        self.dets.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Reference-square data for a physical problem: the diffusion tensor
/// `κ J⁻¹ J⁻ᵀ |det J|` and the volume weights `|det J|`.
pub struct PulledBack {
    pub coefficient: ElementCoefficient,
    pub weights: Vec<f64>,
}

/// Pulls `kappa` (evaluated at physical element centroids) back to the
/// reference square.
pub fn transform_coefficients(
    grid: &FineGrid,
    map: &DomainMap,
    kappa: impl Fn(Point) -> f64 + Sync,
) -> Result<PulledBack> {
    check_len("domain map elements", grid.num_elements(), map.dets.len())?;
    let tensors = par::try_map_range(grid.num_elements(), |e| {
        let [[a, b], [c, d]] = map.jacobians[e];
        let det = map.dets[e];
        if !(det > 0.0) {
            return Err(Error::InvalidGeometry { element: e, det });
        }
        let k = kappa(map.centroid(grid, e));
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidCoefficient {
                element: e,
                value: k,
            });
        }
        // J⁻¹ = [d, -b; -c, a] / det, so J⁻¹J⁻ᵀ |det| = [[d²+b², -(cd+ab)], [.., c²+a²]] / det
        let s = k / det;
        Ok([
            s * (d * d + b * b),
            -s * (c * d + a * b),
            s * (c * c + a * a),
        ])
    })?;
    Ok(PulledBack {
        coefficient: ElementCoefficient::Tensor(tensors),
        weights: map.dets.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_coefficient_stiffness, assemble_weighted_load, Field};
    use crate::stochastic::kl::{kl_expand, realize_boundary, uniform_points};
    use crate::stochastic::params::{sample_parameters, ParamDomain};

    #[test]
    fn flat_boundary_gives_identity() {
        let grid = FineGrid::new(12, 10).unwrap();
        let map = stochastic_map(&[0.0; 13], &grid).unwrap();
        for (p, q) in map.coords.iter().zip(grid.nodes()) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
        for j in &map.jacobians {
            assert!(
                (j[0][0] - 1.0).abs() < 1e-10 && j[0][1].abs() < 1e-10 && j[1][0].abs() < 1e-10
            );
        }
        let pb = transform_coefficients(&grid, &map, |_| 2.0).unwrap();
        let a = assemble_coefficient_stiffness(&grid, &pb.coefficient).unwrap();
        let b = assemble_stiffness(&grid, &vec![2.0; grid.num_elements()]).unwrap();
        let diff = CsrMatrix::linear_combination(&[(1.0, &a), (-1.0, &b)]);
        assert!(diff.max_abs() < 1e-12);
    }

    #[test]
    fn boundary_data_reproduced() {
        let grid = FineGrid::new(10, 10).unwrap();
        let s: Vec<f64> = (0..=10).map(|i| 0.05 * (i as f64 * 0.7).sin()).collect();
        let mapper = HarmonicMapper::new(&grid).unwrap();
        let map = mapper.map(&grid, &s).unwrap();
        let pos = mapper.boundary_positions(&grid, &s).unwrap();
        for (&k, p) in grid.boundary_nodes().iter().zip(&pos) {
            assert_eq!(map.coords[k], *p);
        }
        // bottom nodes lie on the polyline through (i/n, s_i)
        for &k in &grid.bottom_nodes() {
            let [x, y] = map.coords[k];
            let i = ((x * 10.0).floor() as usize).min(9);
            let t = x * 10.0 - i as f64;
            assert!((y - ((1.0 - t) * s[i] + t * s[i + 1])).abs() < 1e-12);
        }
    }

    #[test]
    fn random_draws_have_positive_jacobians_and_spd_tensors() {
        let grid = FineGrid::new(20, 20).unwrap();
        let kl = kl_expand(&uniform_points(21), 5, 0.1).unwrap();
        let mapper = HarmonicMapper::new(&grid).unwrap();
        let domain = ParamDomain::uniform_cube(5, -1.0, 1.0).unwrap();
        for xi in sample_parameters(&domain, 20, 0).unwrap() {
            let s = realize_boundary(&kl, &xi).unwrap();
            let map = mapper.map(&grid, &s).unwrap();
            assert!(map.min_det() > 0.0);
            let pb = transform_coefficients(&grid, &map, |x| (x[0] * x[1]).abs() + 1.0).unwrap();
            pb.coefficient.check_positive().unwrap();
        }
    }

    #[test]
    fn folded_map_rejected() {
        let grid = FineGrid::new(4, 4).unwrap();
        let mut coords = grid.nodes().to_vec();
        coords[grid.node_id(2, 2)] = [0.9, 0.9];
        match DomainMap::from_coords(&grid, coords) {
            Err(Error::InvalidGeometry { det, .. }) => assert!(det <= 0.0),
            other => panic!("expected invalid geometry, got {other:?}"),
        }
    }

    /// Pulled-back assembly equals direct P1 assembly on the deformed mesh.
    #[test]
    fn pullback_matches_deformed_mesh_assembly() {
        let grid = FineGrid::new(16, 16).unwrap();
        let s: Vec<f64> = (0..=16)
            .map(|i| 0.08 * (std::f64::consts::PI * i as f64 / 16.0).sin())
            .collect();
        let map = stochastic_map(&s, &grid).unwrap();
        let kappa = |x: Point| (x[0] * x[1]).abs() + 1.0;
        let pb = transform_coefficients(&grid, &map, kappa).unwrap();
        let a = assemble_coefficient_stiffness(&grid, &pb.coefficient).unwrap();
        let n = grid.num_nodes();
        let mut t = Vec::new();
        for e in 0..grid.num_elements() {
            let nodes = grid.element(e);
            let v = nodes.map(|k| map.coords[k]);
            let (g, area) = p1_gradients(&v);
            let k = kappa(map.centroid(&grid, e));
            for i in 0..3 {
                for j in 0..3 {
                    t.push((
                        nodes[i],
                        nodes[j],
                        k * area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]),
                    ));
                }
            }
        }
        let direct = CsrMatrix::from_triplets(n, n, &t);
        let diff = CsrMatrix::linear_combination(&[(1.0, &a), (-1.0, &direct)]);
        assert!(diff.max_abs() < 1e-10 * direct.max_abs());
        let ones = Field::Nodal(vec![1.0; n]);
        let area: f64 = assemble_weighted_load(&grid, &ones, &pb.weights)
            .unwrap()
            .iter()
            .sum();
        let cyc = grid.boundary_cycle();
        let shoelace: f64 = (0..cyc.len())
            .map(|i| {
                let (p, q) = (map.coords[cyc[i]], map.coords[cyc[(i + 1) % cyc.len()]]);
                0.5 * (p[0] * q[1] - q[0] * p[1])
            })
            .sum();
        assert!((area - shoelace).abs() < 1e-12);
    }
}
