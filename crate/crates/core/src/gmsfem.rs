//! Generalized multiscale local reduction.
//!
//! For each coarse neighborhood ω_i: harmonic extensions of nodal deltas on
//! ∂ω_i span a snapshot space; a spectral problem `A v = λ S v` on that space
//! selects the smoothest modes; the modes multiplied by the partition of unity
//! χ_i become global basis functions, collected as the columns of `R`.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::assembly::{
    assemble_local_mass, assemble_local_stiffness, p1_gradients, DofLayout, ElementCoefficient,
};
use crate::error::{check_len, Error, Result};
use crate::fullorder::{solve_saddle, KktBlocks, KktSystem, OptimalTriple};
use crate::grid::{CoarseGrid, FineGrid, Neighborhood, PartitionOfUnity};
use crate::linalg::{generalized_symmetric_eigen, SparseCholesky};
use crate::par;
use crate::sparse::CsrMatrix;

/// Relative drop tolerance for dependent multiscale columns (squared
/// residual norm over squared column norm in the mass inner product).
pub const DEPENDENCE_TOLERANCE: f64 = 1e-10;

/// Harmonic snapshots on one neighborhood, in local node numbering
/// (the order of [`Neighborhood::nodes`]).
#[derive(Debug, Clone)]
pub struct SnapshotSpace {
    pub neighborhood: usize,
    /// `n_ω × l_i`, column `j` is the extension of the delta at the `j`-th
    /// boundary node of ω_i.
    pub snapshots: DMatrix<f64>,
    /// Local stiffness on ω_i (all local nodes).
    pub local_stiffness: CsrMatrix,
}

impl SnapshotSpace {
    pub fn count(&self) -> usize {
        self.snapshots.ncols()
    }
}

fn local_node_map(grid: &FineGrid, nb: &Neighborhood) -> Vec<usize> {
    let mut map = vec![usize::MAX; grid.num_nodes()];
    for (l, &k) in nb.nodes.iter().enumerate() {
        map[k] = l;
    }
    map
}

pub fn harmonic_snapshots(
    grid: &FineGrid,
    nb: &Neighborhood,
    coeff: &ElementCoefficient,
) -> Result<SnapshotSpace> {
    check_len("coefficient length", grid.num_elements(), coeff.len())?;
    let map = local_node_map(grid, nb);
    let n = nb.nodes.len();
    let a = assemble_local_stiffness(grid, &nb.elements, &map, n, coeff);
    let int: Vec<usize> = nb.interior_nodes.iter().map(|&k| map[k]).collect();
    let bnd: Vec<usize> = nb.boundary_nodes.iter().map(|&k| map[k]).collect();
    let mut snaps = DMatrix::zeros(n, bnd.len());
    for (j, &b) in bnd.iter().enumerate() {
        snaps[(b, j)] = 1.0;
    }
    if !int.is_empty() {
        let a_ii = a.submatrix(&int, &int);
        let a_ib = a.submatrix(&int, &bnd);
        let chol = SparseCholesky::new(&a_ii, "local harmonic extension").map_err(|e| {
            Error::SolverFailure {
                context: format!("neighborhood {}: {e}", nb.coarse_node),
                condition_estimate: f64::INFINITY,
            }
        })?;
        let rhs: Vec<Vec<f64>> = (0..bnd.len())
            .map(|j| (0..int.len()).map(|i| -a_ib.get(i, j)).collect())
            .collect();
        let refs: Vec<&[f64]> = rhs.iter().map(|v| v.as_slice()).collect();
        for (j, x) in chol.solve_many(&refs).into_iter().enumerate() {
            for (i, &v) in x.iter().enumerate() {
                snaps[(int[i], j)] = v;
            }
        }
    }
    Ok(SnapshotSpace {
        neighborhood: nb.coarse_node,
        snapshots: snaps,
        local_stiffness: a,
    })
}

/// Per-element `Σ_i H² |∇χ_i|²` with gradients of the P1 interpolants of the
/// coarse hats.
pub fn energy_weight(grid: &FineGrid, coarse: &CoarseGrid) -> Vec<f64> {
    let (fx, fy) = coarse.nesting_factor();
    let h2 = coarse.hx().max(coarse.hy()).powi(2);
    (0..grid.num_elements())
        .map(|e| {
            let (ci, cj) = grid.element_cell(e);
            let (cx, cy) = (ci / fx, cj / fy);
            let v = grid.element_vertices(e);
            let (g, _) = p1_gradients(&v);
            let mut s = 0.0;
            for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let node = (cy + dj) * (coarse.ncx() + 1) + cx + di;
                let vals = v.map(|p| coarse.hat(node, p));
                let gx: f64 = (0..3).map(|a| vals[a] * g[a][0]).sum();
                let gy: f64 = (0..3).map(|a| vals[a] * g[a][1]).sum();
                s += gx * gx + gy * gy;
            }
            h2 * s
        })
        .collect()
}

/// Eigenpairs of one neighborhood's spectral problem.
#[derive(Debug, Clone)]
pub struct LocalBasis {
    pub neighborhood: usize,
    pub eigenvalues: Vec<f64>,
    /// `n_ω × M_i` local nodal modes (before multiplication by χ_i).
    pub modes: DMatrix<f64>,
    /// Coefficients of the modes in the snapshot basis (`S^lr`-orthonormal).
    pub coefficients: DMatrix<f64>,
}

/// Solves `A^lr v = λ S^lr v` and keeps the `count` smallest eigenpairs.
pub fn local_spectral_basis(
    grid: &FineGrid,
    nb: &Neighborhood,
    snap: &SnapshotSpace,
    weight: &[f64],
    count: usize,
) -> Result<LocalBasis> {
    let l = snap.count();
    if count == 0 || count > l {
        return Err(Error::InvalidArgument(format!(
            "neighborhood {} has {l} snapshots, cannot keep {count} modes",
            nb.coarse_node
        )));
    }
    let map = local_node_map(grid, nb);
    let n = nb.nodes.len();
    let s = assemble_local_mass(grid, &nb.elements, &map, n, weight);
    let a_lr = snap
        .local_stiffness
        .project(&snap.snapshots, &snap.snapshots);
    let s_lr = s.project(&snap.snapshots, &snap.snapshots);
    let a_lr = (&a_lr + a_lr.transpose()) * 0.5;
    let s_lr = (&s_lr + s_lr.transpose()) * 0.5;
    let (vals, vecs) = generalized_symmetric_eigen(&a_lr, &s_lr)?;
    let coefficients = vecs.columns(0, count).into_owned();
    let modes = &snap.snapshots * &coefficients;
    Ok(LocalBasis {
        neighborhood: nb.coarse_node,
        eigenvalues: vals[..count].to_vec(),
        modes,
        coefficients,
    })
}

/// Global multiscale space.
#[derive(Debug, Clone)]
pub struct MultiscaleSpace {
    /// Nodal basis `N_h × M` (before any restriction to free dofs).
    pub nodal_basis: CsrMatrix,
    /// Basis on the state dofs of `layout`, dependent columns removed.
    pub basis: CsrMatrix,
    pub locals: Vec<LocalBasis>,
    /// Neighborhood of every retained column.
    pub column_owner: Vec<usize>,
    pub dropped: Vec<usize>,
}

impl MultiscaleSpace {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Trivial reduction `R = I` over the free dofs.
    pub fn identity(layout: &DofLayout) -> Self {
        Self {
            nodal_basis: layout.prolongation(),
            basis: CsrMatrix::identity(layout.num_free()),
            locals: Vec::new(),
            column_owner: Vec::new(),
            dropped: Vec::new(),
        }
    }

    /// Per-neighborhood eigenvalue CSV `i,ell,lambda`.
    pub fn eigenvalue_csv(&self) -> String {
        let mut s = String::from("i,ell,lambda\n");
        for lb in &self.locals {
            for (l, v) in lb.eigenvalues.iter().enumerate() {
                let _ = writeln!(s, "{},{},{v:e}", lb.neighborhood, l + 1);
            }
        }
        s
    }
}

/// Pastes local modes with the partition of unity and removes near-dependent
/// columns in the `mass` inner product (on the free dofs of `layout`).
pub fn multiscale_space(
    grid: &FineGrid,
    coarse: &CoarseGrid,
    pou: &PartitionOfUnity,
    locals: Vec<LocalBasis>,
    layout: &DofLayout,
    mass: &CsrMatrix,
) -> Result<MultiscaleSpace> {
    let mut t = Vec::new();
    let mut owner = Vec::new();
    let mut col = 0;
    for lb in &locals {
        let nb = coarse.neighborhood(lb.neighborhood);
        let chi = pou.function(lb.neighborhood);
        debug_assert_eq!(chi.len(), nb.nodes.len());
        for m in 0..lb.modes.ncols() {
            for (l, &(k, c)) in chi.iter().enumerate() {
                let v = c * lb.modes[(l, m)];
                if v != 0.0 {
                    t.push((k, col, v));
                }
            }
            owner.push(lb.neighborhood);
            col += 1;
        }
    }
    if col == 0 {
        return Err(Error::DegenerateBasis("empty multiscale basis".into()));
    }
    let nodal = CsrMatrix::from_triplets(grid.num_nodes(), col, &t);
    let restricted = layout.restrict_rows(&nodal);
    let keep = independent_columns(&restricted, mass, DEPENDENCE_TOLERANCE)?;
    let dropped: Vec<usize> = (0..col).filter(|c| !keep.contains(c)).collect();
    if !dropped.is_empty() {
        log::info!(
            "multiscale space: dropped {} dependent columns",
            dropped.len()
        );
    }
    let rows: Vec<usize> = (0..restricted.nrows()).collect();
    let basis = restricted.submatrix(&rows, &keep);
    let nodal_rows: Vec<usize> = (0..nodal.nrows()).collect();
    let nodal_basis = nodal.submatrix(&nodal_rows, &keep);
    Ok(MultiscaleSpace {
        nodal_basis,
        basis,
        locals,
        column_owner: keep.iter().map(|&c| owner[c]).collect(),
        dropped,
    })
}

/// Columns kept by an in-order Cholesky of the Gram matrix that skips any
/// column whose residual is below `tol` relative to its own norm.
pub fn independent_columns(basis: &CsrMatrix, mass: &CsrMatrix, tol: f64) -> Result<Vec<usize>> {
    let gram = mass.congruence(basis).to_dense();
    let n = gram.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut keep = Vec::new();
    for j in 0..n {
        let gjj = gram[(j, j)];
        if gjj <= 0.0 {
            continue;
        }
        // row j of L against the kept columns
        let mut row = vec![0.0; keep.len()];
        for (a, &ka) in keep.iter().enumerate() {
            let mut s = gram[(j, ka)];
            for b in 0..a {
                s -= row[b] * l[(ka, b)];
            }
            row[a] = s / l[(ka, a)];
        }
        let d = gjj - row.iter().map(|r| r * r).sum::<f64>();
        if d > tol * gjj {
            let pos = keep.len();
            for (a, r) in row.into_iter().enumerate() {
                l[(j, a)] = r;
            }
            l[(j, pos)] = d.sqrt();
            keep.push(j);
        }
    }
    if keep.is_empty() {
        return Err(Error::DegenerateBasis(
            "all multiscale columns vanish".into(),
        ));
    }
    Ok(keep)
}

/// Settings of the local reduction.
#[derive(Debug, Clone, Copy)]
pub struct GmsfemOptions {
    pub ncx: usize,
    pub ncy: usize,
    /// Modes per neighborhood.
    pub modes: usize,
}

/// Full pipeline: snapshots, spectral problems, pasting.
pub fn build_multiscale_space(
    grid: &FineGrid,
    coeff: &ElementCoefficient,
    options: GmsfemOptions,
    layout: &DofLayout,
    mass: &CsrMatrix,
) -> Result<MultiscaleSpace> {
    let coarse = CoarseGrid::new(grid, options.ncx, options.ncy)?;
    let pou = PartitionOfUnity::new(&coarse, grid);
    let mag = coeff.magnitude();
    let weight: Vec<f64> = energy_weight(grid, &coarse)
        .iter()
        .zip(&mag)
        .map(|(w, k)| w * k)
        .collect();
    let locals = par::try_map(coarse.neighborhoods(), |nb| {
        let snap = harmonic_snapshots(grid, nb, coeff)?;
        local_spectral_basis(grid, nb, &snap, &weight, options.modes)
    })?;
    multiscale_space(grid, &coarse, &pou, locals, layout, mass)
}

/// Locally reduced KKT blocks: the state space replaced by the columns of `R`.
pub fn project_kkt_local(blocks: &KktBlocks, space: &MultiscaleSpace) -> Result<KktBlocks> {
    blocks.project_state(&space.basis)
}

/// Solution of a locally reduced system together with its fine-grid image.
#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub reduced: OptimalTriple,
    /// State/adjoint on free fine dofs, control unchanged.
    pub fine: OptimalTriple,
}

pub fn solve_local_kkt(local: &KktSystem, space: &MultiscaleSpace) -> Result<LocalSolution> {
    let matrix = local.matrix();
    let x = solve_saddle(&matrix, &local.rhs(), "local KKT solve")?;
    let reduced = OptimalTriple::from_stacked(local, &x);
    let fine = OptimalTriple {
        control: reduced.control.clone(),
        state: space.basis.mul_vec(&reduced.state),
        adjoint: space.basis.mul_vec(&reduced.adjoint),
        cost: reduced.cost,
    };
    Ok(LocalSolution { reduced, fine })
}
