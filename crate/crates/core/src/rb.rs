//! Global reduced-basis layer on top of a (locally reduced) KKT system.
//!
//! The state and adjoint share one basis `Z₁` spanned by both state and
//! adjoint snapshots; the control has its own basis `Z₂`. Both are
//! orthonormal in L² (mass matrices). The reduced saddle system has size
//! `n₂ + 2n₁` (= 5N when nothing is dropped).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::AffineCoefficients;
use crate::error::{check_len, Error, Result};
use crate::fullorder::{CostOffset, KktBlocks, KktSystem, OptimalTriple};
use crate::linalg::dense_solve;
use crate::sparse::CsrMatrix;

/// Snapshots whose orthogonal remainder is below this fraction of their
/// norm are dropped.
pub const DROP_TOLERANCE: f64 = 1e-10;

fn ip(inner: &CsrMatrix, a: &[f64], b: &[f64]) -> f64 {
    inner.bilinear(a, b)
}

/// Gram–Schmidt step with one re-orthogonalization pass. Returns the
/// normalized remainder, or `None` if it is negligible.
fn orthogonalize_against(
    basis: &[Vec<f64>],
    v: &[f64],
    inner: &CsrMatrix,
    tol: f64,
) -> Option<Vec<f64>> {
    let norm0 = ip(inner, v, v).max(0.0).sqrt();
    if norm0 == 0.0 || !norm0.is_finite() {
        return None;
    }
    let mut w = v.to_vec();
    for _ in 0..2 {
        let mw = inner.mul_vec(&w);
        for q in basis {
            let c: f64 = q.iter().zip(&mw).map(|(a, b)| a * b).sum();
            w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
    }
    let norm = ip(inner, &w, &w).max(0.0).sqrt();
    if norm <= tol * norm0 {
        return None;
    }
    w.iter_mut().for_each(|x| *x /= norm);
    Some(w)
}

/// Orthonormal basis (columns) of `span(vectors)` in the `inner` product.
pub fn orthonormalize(vectors: &[Vec<f64>], inner: &CsrMatrix) -> Result<DMatrix<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        check_len("snapshot length", inner.nrows(), v.len())?;
        if let Some(q) = orthogonalize_against(&basis, v, inner, DROP_TOLERANCE) {
            basis.push(q);
        }
    }
    if basis.is_empty() {
        return Err(Error::DegenerateBasis("all snapshots vanish".into()));
    }
    Ok(columns_to_matrix(inner.nrows(), &basis))
}

fn columns_to_matrix(n: usize, cols: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Reduced spaces `Z₁` (state = adjoint space) and `Z₂` (control space).
#[derive(Debug, Clone)]
pub struct ReducedSpaces {
    pub samples: Vec<Vec<f64>>,
    state: Vec<Vec<f64>>,
    control: Vec<Vec<f64>>,
    state_inner: CsrMatrix,
    control_inner: CsrMatrix,
    pub dropped: usize,
}

/// How many basis vectors an enrichment actually contributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Enrichment {
    pub state: usize,
    pub control: usize,
}

impl ReducedSpaces {
    pub fn new(state_inner: CsrMatrix, control_inner: CsrMatrix) -> Self {
        Self {
            samples: Vec::new(),
            state: Vec::new(),
            control: Vec::new(),
            state_inner,
            control_inner,
            dropped: 0,
        }
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state.len()
    }

    pub fn control_dim(&self) -> usize {
        self.control.len()
    }

    /// `Z₁` as columns.
    pub fn state_basis(&self) -> DMatrix<f64> {
        columns_to_matrix(self.state_inner.nrows(), &self.state)
    }

    pub fn control_basis(&self) -> DMatrix<f64> {
        columns_to_matrix(self.control_inner.nrows(), &self.control)
    }

    pub fn state_inner(&self) -> &CsrMatrix {
        &self.state_inner
    }

    pub fn control_inner(&self) -> &CsrMatrix {
        &self.control_inner
    }

    /// Adds `u` and `λ` to the state/adjoint space and `f` to the control
    /// space, orthonormalizing incrementally.
    pub fn enrich(&mut self, mu: &[f64], snapshot: &OptimalTriple) -> Result<Enrichment> {
        check_len(
            "state snapshot",
            self.state_inner.nrows(),
            snapshot.state.len(),
        )?;
        check_len(
            "adjoint snapshot",
            self.state_inner.nrows(),
            snapshot.adjoint.len(),
        )?;
        check_len(
            "control snapshot",
            self.control_inner.nrows(),
            snapshot.control.len(),
        )?;
        self.samples.push(mu.to_vec());
        let mut added = Enrichment {
            state: 0,
            control: 0,
        };
        for v in [&snapshot.state, &snapshot.adjoint] {
            match orthogonalize_against(&self.state, v, &self.state_inner, DROP_TOLERANCE) {
                Some(q) => {
                    self.state.push(q);
                    added.state += 1;
                }
                None => self.dropped += 1,
            }
        }
        match orthogonalize_against(
            &self.control,
            &snapshot.control,
            &self.control_inner,
            DROP_TOLERANCE,
        ) {
            Some(q) => {
                self.control.push(q);
                added.control += 1;
            }
            None => self.dropped += 1,
        }
        Ok(added)
    }

    pub fn from_bases(
        samples: Vec<Vec<f64>>,
        state: &DMatrix<f64>,
        control: &DMatrix<f64>,
        state_inner: CsrMatrix,
        control_inner: CsrMatrix,
    ) -> Result<Self> {
        check_len("state basis rows", state_inner.nrows(), state.nrows())?;
        check_len("control basis rows", control_inner.nrows(), control.nrows())?;
        let cols = |m: &DMatrix<f64>| {
            (0..m.ncols())
                .map(|j| m.column(j).iter().copied().collect())
                .collect()
        };
        Ok(Self {
            samples,
            state: cols(state),
            control: cols(control),
            state_inner,
            control_inner,
            dropped: 0,
        })
    }
}

/// Dense reduced KKT data at one parameter.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub beta: f64,
    pub control_mass: DMatrix<f64>,
    pub coupling: DMatrix<f64>,
    pub state_mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub state_rhs: DVector<f64>,
    pub target_rhs: DVector<f64>,
    pub cost_offset: f64,
}

fn tr_mul_vec(z: &DMatrix<f64>, v: &[f64]) -> DVector<f64> {
    z.tr_mul(&DVector::from_column_slice(v))
}

impl ReducedSystem {
    /// Galerkin projection of a sparse system with dense state basis `w`
    /// and control basis `z`.
    pub fn project(sys: &KktSystem, w: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Self> {
        check_len("state basis rows", sys.num_state(), w.nrows())?;
        check_len("control basis rows", sys.num_control(), z.nrows())?;
        let bz = sys.coupling.mul_dense(z);
        Ok(Self {
            beta: sys.beta,
            control_mass: sys.control_mass.project(z, z),
            coupling: w.tr_mul(&bz),
            state_mass: sys.state_mass.project(w, w),
            stiffness: sys.stiffness.project(w, w),
            state_rhs: tr_mul_vec(w, &sys.state_rhs),
            target_rhs: tr_mul_vec(w, &sys.target_rhs),
            cost_offset: sys.cost_offset,
        })
    }

    pub fn num_state(&self) -> usize {
        self.state_mass.nrows()
    }

    pub fn num_control(&self) -> usize {
        self.control_mass.nrows()
    }

    pub fn dim(&self) -> usize {
        self.num_control() + 2 * self.num_state()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let (nc, ns) = (self.num_control(), self.num_state());
        let n = self.dim();
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (nc, nc))
            .copy_from(&(&self.control_mass * (2.0 * self.beta)));
        a.view_mut((0, nc + ns), (nc, ns))
            .copy_from(&(-self.coupling.transpose()));
        a.view_mut((nc, nc), (ns, ns)).copy_from(&self.state_mass);
        a.view_mut((nc, nc + ns), (ns, ns))
            .copy_from(&self.stiffness.transpose());
        a.view_mut((nc + ns, 0), (ns, nc))
            .copy_from(&(-&self.coupling));
        a.view_mut((nc + ns, nc), (ns, ns))
            .copy_from(&self.stiffness);
        a
    }

    pub fn rhs(&self) -> DVector<f64> {
        let (nc, ns) = (self.num_control(), self.num_state());
        let mut b = DVector::zeros(self.dim());
        b.rows_mut(nc, ns).copy_from(&self.target_rhs);
        b.rows_mut(nc + ns, ns).copy_from(&self.state_rhs);
        b
    }

    pub fn cost(&self, state: &DVector<f64>, control: &DVector<f64>) -> f64 {
        0.5 * state.dot(&(&self.state_mass * state)) - state.dot(&self.target_rhs)
            + self.cost_offset
            + self.beta * control.dot(&(&self.control_mass * control))
    }
}

/// Reduced coefficients `(F̄, ū, λ̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSolution {
    pub control: DVector<f64>,
    pub state: DVector<f64>,
    pub adjoint: DVector<f64>,
    pub cost: f64,
}

impl ReducedSolution {
    pub fn zeros(num_state: usize, num_control: usize) -> Self {
        Self {
            control: DVector::zeros(num_control),
            state: DVector::zeros(num_state),
            adjoint: DVector::zeros(num_state),
            cost: 0.0,
        }
    }

    pub fn scaled_sum(&self, a: f64, other: &Self, b: f64) -> Self {
        Self {
            control: &self.control * a + &other.control * b,
            state: &self.state * a + &other.state * b,
            adjoint: &self.adjoint * a + &other.adjoint * b,
            cost: f64::NAN,
        }
    }
}

pub fn online_solve(sys: &ReducedSystem) -> Result<ReducedSolution> {
    let x = dense_solve(&sys.matrix(), &sys.rhs(), "reduced KKT")?;
    let (nc, ns) = (sys.num_control(), sys.num_state());
    let control = x.rows(0, nc).into_owned();
    let state = x.rows(nc, ns).into_owned();
    let adjoint = x.rows(nc + ns, ns).into_owned();
    let cost = sys.cost(&state, &control);
    Ok(ReducedSolution {
        control,
        state,
        adjoint,
        cost,
    })
}

/// Maps reduced coefficients back through state basis `w` and control basis
/// `z` (use `w = R Z₁` to land on fine dofs, `w = Z₁` for local dofs).
pub fn downscale(w: &DMatrix<f64>, z: &DMatrix<f64>, sol: &ReducedSolution) -> OptimalTriple {
    let to_vec = |v: DVector<f64>| v.iter().copied().collect::<Vec<f64>>();
    OptimalTriple {
        control: to_vec(z * &sol.control),
        state: to_vec(w * &sol.state),
        adjoint: to_vec(w * &sol.adjoint),
        cost: sol.cost,
    }
}

/// μ-independent reduced pieces of an affine problem.
#[derive(Clone)]
pub struct ReducedModel {
    pub beta: f64,
    pub control_mass: DMatrix<f64>,
    pub coupling: DMatrix<f64>,
    pub state_mass: DMatrix<f64>,
    pub stiffness: Vec<DMatrix<f64>>,
    pub state_rhs_constant: DVector<f64>,
    pub state_rhs: Vec<DVector<f64>>,
    pub target_rhs_constant: DVector<f64>,
    pub target_rhs: Vec<DVector<f64>>,
    pub cost_offset: CostOffset,
    pub stiffness_coefficients: Arc<dyn AffineCoefficients>,
    pub target_coefficients: Arc<dyn AffineCoefficients>,
}

impl std::fmt::Debug for ReducedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReducedModel")
            .field("state_dim", &self.state_mass.nrows())
            .field("control_dim", &self.control_mass.nrows())
            .field("stiffness_terms", &self.stiffness.len())
            .field("target_terms", &self.target_rhs.len())
            .finish()
    }
}

/// Projects affine blocks (fine or local) onto the reduced spaces.
pub fn project_reduced(
    blocks: &KktBlocks,
    w: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<ReducedModel> {
    check_len("state basis rows", blocks.num_state(), w.nrows())?;
    check_len("control basis rows", blocks.num_control(), z.nrows())?;
    let bz = blocks.coupling.mul_dense(z);
    Ok(ReducedModel {
        beta: blocks.beta,
        control_mass: blocks.control_mass.project(z, z),
        coupling: w.tr_mul(&bz),
        state_mass: blocks.state_mass.project(w, w),
        stiffness: crate::par::map(blocks.stiffness.pieces(), |k| k.project(w, w)),
        state_rhs_constant: tr_mul_vec(w, &blocks.state_rhs.constant),
        state_rhs: blocks
            .state_rhs
            .pieces
            .iter()
            .map(|p| tr_mul_vec(w, p))
            .collect(),
        target_rhs_constant: tr_mul_vec(w, &blocks.target_rhs.constant),
        target_rhs: blocks
            .target_rhs
            .pieces
            .iter()
            .map(|p| tr_mul_vec(w, p))
            .collect(),
        cost_offset: blocks.cost_offset.clone(),
        stiffness_coefficients: blocks.stiffness.coefficients().clone(),
        target_coefficients: blocks.target_rhs.coefficients.clone(),
    })
}

impl ReducedModel {
    pub fn num_state(&self) -> usize {
        self.state_mass.nrows()
    }

    pub fn num_control(&self) -> usize {
        self.control_mass.nrows()
    }

    /// Stiffness pieces + three masses + target loads.
    pub fn piece_count(&self) -> usize {
        self.stiffness.len() + 3 + self.target_rhs.len()
    }

    pub fn evaluate_with(&self, theta: &[f64], phi: &[f64]) -> ReducedSystem {
        let n = self.num_state();
        let mut k = DMatrix::zeros(n, n);
        for (t, p) in theta.iter().zip(&self.stiffness) {
            k += p * *t;
        }
        let mut d = self.state_rhs_constant.clone();
        for (t, p) in theta.iter().zip(&self.state_rhs) {
            d += p * *t;
        }
        let mut tr = self.target_rhs_constant.clone();
        for (t, p) in phi.iter().zip(&self.target_rhs) {
            tr += p * *t;
        }
        ReducedSystem {
            beta: self.beta,
            control_mass: self.control_mass.clone(),
            coupling: self.coupling.clone(),
            state_mass: self.state_mass.clone(),
            stiffness: k,
            state_rhs: d,
            target_rhs: tr,
            cost_offset: self.cost_offset.value(phi),
        }
    }

    pub fn evaluate(&self, mu: &[f64]) -> Result<ReducedSystem> {
        let theta = self.stiffness_coefficients.evaluate(mu)?;
        let phi = self.target_coefficients.evaluate(mu)?;
        Ok(self.evaluate_with(&theta, &phi))
    }

    pub fn solve(&self, mu: &[f64]) -> Result<ReducedSolution> {
        online_solve(&self.evaluate(mu)?)
    }

    pub fn to_pieces(&self) -> ReducedPieces {
        let mat = |m: &DMatrix<f64>| DenseMatrixData::from(m);
        let vec = |v: &DVector<f64>| v.iter().copied().collect::<Vec<f64>>();
        ReducedPieces {
            beta: self.beta,
            control_mass: mat(&self.control_mass),
            coupling: mat(&self.coupling),
            state_mass: mat(&self.state_mass),
            stiffness: self.stiffness.iter().map(mat).collect(),
            state_rhs_constant: vec(&self.state_rhs_constant),
            state_rhs: self.state_rhs.iter().map(vec).collect(),
            target_rhs_constant: vec(&self.target_rhs_constant),
            target_rhs: self.target_rhs.iter().map(vec).collect(),
            cost_constant: self.cost_offset.constant,
            cost_linear: self.cost_offset.linear.clone(),
            cost_quadratic: self.cost_offset.quadratic.clone(),
        }
    }

    pub fn from_pieces(
        p: &ReducedPieces,
        stiffness_coefficients: Arc<dyn AffineCoefficients>,
        target_coefficients: Arc<dyn AffineCoefficients>,
    ) -> Result<Self> {
        check_len(
            "stiffness pieces",
            stiffness_coefficients.num_terms(),
            p.stiffness.len(),
        )?;
        check_len(
            "target pieces",
            target_coefficients.num_terms(),
            p.target_rhs.len(),
        )?;
        let vec = |v: &Vec<f64>| DVector::from_column_slice(v);
        Ok(Self {
            beta: p.beta,
            control_mass: p.control_mass.to_matrix()?,
            coupling: p.coupling.to_matrix()?,
            state_mass: p.state_mass.to_matrix()?,
            stiffness: p
                .stiffness
                .iter()
                .map(|m| m.to_matrix())
                .collect::<Result<_>>()?,
            state_rhs_constant: vec(&p.state_rhs_constant),
            state_rhs: p.state_rhs.iter().map(vec).collect(),
            target_rhs_constant: vec(&p.target_rhs_constant),
            target_rhs: p.target_rhs.iter().map(vec).collect(),
            cost_offset: CostOffset {
                constant: p.cost_constant,
                linear: p.cost_linear.clone(),
                quadratic: p.cost_quadratic.clone(),
            },
            stiffness_coefficients,
            target_coefficients,
        })
    }
}

/// Row-major dense matrix for JSON persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for DenseMatrixData {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl DenseMatrixData {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        check_len("dense matrix data", self.rows * self.cols, self.data.len())?;
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Serializable form of [`ReducedModel`] (coefficient functions excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedPieces {
    pub beta: f64,
    pub control_mass: DenseMatrixData,
    pub coupling: DenseMatrixData,
    pub state_mass: DenseMatrixData,
    pub stiffness: Vec<DenseMatrixData>,
    pub state_rhs_constant: Vec<f64>,
    pub state_rhs: Vec<Vec<f64>>,
    pub target_rhs_constant: Vec<f64>,
    pub target_rhs: Vec<Vec<f64>>,
    pub cost_constant: f64,
    pub cost_linear: Vec<f64>,
    pub cost_quadratic: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::*;
    use crate::fullorder::*;
    use crate::grid::build_fine_grid;
    use crate::linalg::smallest_singular_value;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn affine_blocks(n: usize) -> KktBlocks {
        let g = build_fine_grid(n, n).unwrap();
        let c = g.centroids();
        let k1: Vec<f64> = c
            .iter()
            .map(|p| if (p[1] - 0.5).abs() < 0.1 { 50.0 } else { 1.0 })
            .collect();
        let k2: Vec<f64> = c
            .iter()
            .map(|p| if (p[0] - 0.3).abs() < 0.1 { 20.0 } else { 1.0 })
            .collect();
        let stiffness = AffineOperatorFamily::new(
            vec![
                assemble_stiffness(&g, &k1).unwrap(),
                assemble_stiffness(&g, &k2).unwrap(),
            ],
            Arc::new(
                FnCoefficients::new(2, |m: &[f64]| vec![1.0 + m[0], 2.0 - m[0]])
                    .with_bounds(vec![(0.0, 1.0)]),
            ),
        )
        .unwrap();
        let b1: Vec<f64> = g.nodes().iter().map(|p| p[0] * p[1]).collect();
        let b2: Vec<f64> = g
            .nodes()
            .iter()
            .map(|p| (3.0 * p[0]).sin() * p[1])
            .collect();
        let target = AffineVectorFamily::new(
            vec![0.0; g.num_nodes()],
            vec![b1, b2],
            Arc::new(FnCoefficients::new(2, |m: &[f64]| {
                vec![m[0], (2.0 * m[0]).cos()]
            })),
        )
        .unwrap();
        let p = NodalProblem {
            beta: 1e-3,
            control_mass: assemble_control_mass(&g),
            coupling: assemble_coupling(&g),
            state_mass: assemble_state_mass(&g),
            stiffness,
            source: vec![0.0; g.num_nodes()],
            target,
        };
        let bc: Vec<f64> = g.boundary_nodes().iter().map(|&k| g.node(k)[0]).collect();
        apply_dirichlet(&p, &DofLayout::dirichlet(&g, &bc).unwrap()).unwrap()
    }

    fn train(blocks: &KktBlocks, mus: &[f64]) -> ReducedSpaces {
        let mut spaces = ReducedSpaces::new(blocks.state_mass.clone(), blocks.control_mass.clone());
        for &m in mus {
            let t = solve_kkt(&build_kkt(blocks, &[m]).unwrap()).unwrap();
            spaces.enrich(&[m], &t).unwrap();
        }
        spaces
    }

    #[test]
    fn orthonormalize_contract() {
        let m = CsrMatrix::from_diagonal(&[1.0, 2.0, 3.0, 4.0]);
        let v = vec![
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0, 1.0],
        ];
        let q = orthonormalize(&v, &m).unwrap();
        let g = q.transpose() * m.to_dense() * &q;
        assert!((g - DMatrix::identity(3, 3)).abs().max() < 1e-10);
        let md = m.to_dense();
        for x in &v {
            let xv = DVector::from_column_slice(x);
            let proj = &q * (q.transpose() * &md * &xv);
            assert!((proj - xv).abs().max() < 1e-10);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v1 = vec![1.0, 2.0, 3.0, 4.0];
        let v2: Vec<f64> = v1
            .iter()
            .map(|x| x + 1e-14 * rng.random_range(-1.0..1.0))
            .collect();
        assert_eq!(orthonormalize(&[v1, v2], &m).unwrap().ncols(), 1);
        assert!(orthonormalize(&[vec![0.0; 4]], &m).is_err());
    }

    #[test]
    fn reduced_system_dimensions_and_symmetry() {
        let blocks = affine_blocks(10);
        let spaces = train(&blocks, &[0.1, 0.5, 0.9]);
        assert_eq!(spaces.state_dim(), 6);
        assert_eq!(spaces.control_dim(), 3);
        let model =
            project_reduced(&blocks, &spaces.state_basis(), &spaces.control_basis()).unwrap();
        assert_eq!(model.piece_count(), 2 + 3 + 2);
        let sys = model.evaluate(&[0.3]).unwrap();
        assert_eq!(sys.dim(), 15);
        let a = sys.matrix();
        assert!((&a - a.transpose()).abs().max() < 1e-12);
        for k in &model.stiffness {
            assert!((k - k.transpose()).abs().max() < 1e-14 * k.abs().max());
        }
    }

    #[test]
    fn duplicate_sample_adds_nothing() {
        let blocks = affine_blocks(8);
        let mut spaces = train(&blocks, &[0.2, 0.7]);
        let t = solve_kkt(&build_kkt(&blocks, &[0.2]).unwrap()).unwrap();
        let e = spaces.enrich(&[0.2], &t).unwrap();
        assert_eq!(
            e,
            Enrichment {
                state: 0,
                control: 0
            }
        );
        assert_eq!(spaces.state_dim(), 4);
    }

    #[test]
    fn training_samples_reproduced() {
        let blocks = affine_blocks(10);
        let mus = [0.05, 0.4, 0.95];
        let spaces = train(&blocks, &mus);
        let (w, z) = (spaces.state_basis(), spaces.control_basis());
        let model = project_reduced(&blocks, &w, &z).unwrap();
        for &m in &mus {
            let truth = solve_kkt(&build_kkt(&blocks, &[m]).unwrap()).unwrap();
            let rb = downscale(&w, &z, &model.solve(&[m]).unwrap());
            let rel = |a: &[f64], b: &[f64]| {
                let d: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                d / b.iter().map(|x| x * x).sum::<f64>().sqrt()
            };
            assert!(rel(&rb.state, &truth.state) < 1e-8);
            assert!(rel(&rb.control, &truth.control) < 1e-8);
            assert!(rel(&rb.adjoint, &truth.adjoint) < 1e-8);
            assert!((rb.cost - truth.cost).abs() < 1e-8 * truth.cost.abs());
        }
    }

    #[test]
    fn identity_projection_matches_fine() {
        let blocks = affine_blocks(5);
        let w = DMatrix::identity(blocks.num_state(), blocks.num_state());
        let z = DMatrix::identity(blocks.num_control(), blocks.num_control());
        let model = project_reduced(&blocks, &w, &z).unwrap();
        let fine = blocks.evaluate(&[0.6]).unwrap();
        let red = model.evaluate(&[0.6]).unwrap();
        assert!((red.stiffness - fine.stiffness.to_dense()).abs().max() < 1e-12);
        assert!((red.coupling - fine.coupling.to_dense()).abs().max() < 1e-14);
    }

    #[test]
    fn accuracy_improves_and_system_invertible() {
        let blocks = affine_blocks(12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let test: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
        let truths: Vec<_> = test
            .iter()
            .map(|&m| solve_kkt(&build_kkt(&blocks, &[m]).unwrap()).unwrap())
            .collect();
        let order = [0.5, 0.0, 1.0, 0.25, 0.75];
        let mut prev = f64::INFINITY;
        for n in 1..=order.len() {
            let spaces = train(&blocks, &order[..n]);
            let (w, z) = (spaces.state_basis(), spaces.control_basis());
            let model = project_reduced(&blocks, &w, &z).unwrap();
            let mut err = 0.0;
            for (m, t) in test.iter().zip(&truths) {
                let sys = model.evaluate(&[*m]).unwrap();
                assert!(smallest_singular_value(&sys.matrix()) > 0.0);
                let rb = downscale(&w, &z, &online_solve(&sys).unwrap());
                let d: Vec<f64> = rb.state.iter().zip(&t.state).map(|(a, b)| a - b).collect();
                err += (blocks.state_mass.bilinear(&d, &d)
                    / blocks.state_mass.bilinear(&t.state, &t.state))
                .sqrt();
            }
            assert!(err <= prev * (1.0 + 1e-6), "n={n}: {err} > {prev}");
            prev = err;
        }
    }

    #[test]
    fn downscale_is_linear() {
        let w = DMatrix::from_fn(5, 2, |i, j| (i + 2 * j) as f64);
        let z = DMatrix::from_fn(3, 1, |i, _| i as f64 + 1.0);
        let zero = downscale(&w, &z, &ReducedSolution::zeros(2, 1));
        assert!(zero.state.iter().chain(&zero.control).all(|&v| v == 0.0));
        let c1 = ReducedSolution {
            control: DVector::from_vec(vec![1.0]),
            state: DVector::from_vec(vec![1.0, -2.0]),
            adjoint: DVector::from_vec(vec![0.5, 0.5]),
            cost: 0.0,
        };
        let c2 = ReducedSolution {
            control: DVector::from_vec(vec![-3.0]),
            state: DVector::from_vec(vec![0.0, 1.0]),
            adjoint: DVector::from_vec(vec![2.0, 0.0]),
            cost: 0.0,
        };
        let lhs = downscale(&w, &z, &c1.scaled_sum(2.0, &c2, -1.5));
        let (d1, d2) = (downscale(&w, &z, &c1), downscale(&w, &z, &c2));
        for i in 0..5 {
            assert!((lhs.state[i] - (2.0 * d1.state[i] - 1.5 * d2.state[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn pieces_round_trip() {
        let blocks = affine_blocks(6);
        let spaces = train(&blocks, &[0.3, 0.6]);
        let model =
            project_reduced(&blocks, &spaces.state_basis(), &spaces.control_basis()).unwrap();
        let json = serde_json::to_string(&model.to_pieces()).unwrap();
        let back: ReducedPieces = serde_json::from_str(&json).unwrap();
        let model2 = ReducedModel::from_pieces(
            &back,
            model.stiffness_coefficients.clone(),
            model.target_coefficients.clone(),
        )
        .unwrap();
        assert_eq!(
            model.solve(&[0.45]).unwrap(),
            model2.solve(&[0.45]).unwrap()
        );
    }
}
