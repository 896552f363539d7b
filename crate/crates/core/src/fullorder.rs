//! Full-order optimality system.
//!
//! Unknowns are ordered `[f; u; λ]` (control, state, adjoint) and the saddle
//! matrix is
//!
//! ```text
//! [ 2βM_c   0    −Bᵀ ] [f]   [0]
//! [  0      M    Kᵀ  ] [u] = [t]
//! [ −B      K    0   ] [λ]   [d]
//! ```
//!
//! with `t` the target load and `d` the state right-hand side (sources plus
//! the Dirichlet lift). The cost is `J = ½‖u − û‖²_M + β‖f‖²_{M_c}`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::assembly::{AffineOperatorFamily, AffineVectorFamily, DofLayout, FnCoefficients};
use crate::error::{check_len, Error, Result};
use crate::linalg::{dense_solve, SparseLu};
use crate::sparse::{block_matrix, dot, norm2, CsrMatrix};

/// Problem data on all nodes, before boundary conditions are imposed.
#[derive(Debug, Clone)]
pub struct NodalProblem {
    pub beta: f64,
    /// Control-space mass (element P0 mass or boundary trace mass).
    pub control_mass: CsrMatrix,
    /// Nodes × control dofs.
    pub coupling: CsrMatrix,
    pub state_mass: CsrMatrix,
    pub stiffness: AffineOperatorFamily,
    /// Load from a fixed source term in the state equation.
    pub source: Vec<f64>,
    /// Nodal target field `û(μ)`.
    pub target: AffineVectorFamily,
}

/// Quadratic `c₀ + lᵀθ + ½θᵀQθ` in the target coefficients: the part of the
/// cost that does not depend on the free unknowns.
#[derive(Debug, Clone, Default)]
pub struct CostOffset {
    pub constant: f64,
    pub linear: Vec<f64>,
    pub quadratic: Vec<Vec<f64>>,
}

impl CostOffset {
    pub fn value(&self, theta: &[f64]) -> f64 {
        let mut v = self.constant + dot(&self.linear, theta);
        for (i, row) in self.quadratic.iter().enumerate() {
            v += 0.5 * theta[i] * dot(row, theta);
        }
        v
    }
}

/// μ-independent KKT pieces on the free dofs.
#[derive(Debug, Clone)]
pub struct KktBlocks {
    pub beta: f64,
    pub control_mass: CsrMatrix,
    pub coupling: CsrMatrix,
    pub state_mass: CsrMatrix,
    pub stiffness: AffineOperatorFamily,
    /// `d(μ)`; shares coefficients with the stiffness.
    pub state_rhs: AffineVectorFamily,
    /// `t(μ)`; coefficients of the target field.
    pub target_rhs: AffineVectorFamily,
    pub cost_offset: CostOffset,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidRegularization(beta));
    }
    Ok(())
}

/// Eliminates the constrained nodes of `layout`, folding the boundary values
/// into the state and target right-hand sides. With no constrained nodes this
/// only reorganizes the data (pure Neumann problems).
pub fn apply_dirichlet(problem: &NodalProblem, layout: &DofLayout) -> Result<KktBlocks> {
    check_beta(problem.beta)?;
    let n = layout.num_nodes();
    check_len("stiffness size", n, problem.stiffness.dim())?;
    check_len("state mass size", n, problem.state_mass.nrows())?;
    check_len("coupling rows", n, problem.coupling.nrows())?;
    check_len(
        "coupling columns",
        problem.control_mass.nrows(),
        problem.coupling.ncols(),
    )?;
    check_len("source size", n, problem.source.len())?;
    check_len("target size", n, problem.target.dim())?;

    let stiffness = problem.stiffness.map_pieces(|k| layout.restrict_matrix(k));
    let lifts: Vec<Vec<f64>> = problem
        .stiffness
        .pieces()
        .iter()
        .map(|k| layout.lift(k))
        .collect();
    let state_rhs = AffineVectorFamily::new(
        layout.restrict_vec(&problem.source),
        lifts,
        problem.stiffness.coefficients().clone(),
    )?;

    let m = &problem.state_mass;
    let mut t0 = layout.restrict_vec(&m.mul_vec(&problem.target.constant));
    for (a, b) in t0.iter_mut().zip(layout.lift(m)) {
        *a += b;
    }
    let target_pieces: Vec<Vec<f64>> = problem
        .target
        .pieces
        .iter()
        .map(|p| layout.restrict_vec(&m.mul_vec(p)))
        .collect();
    let target_rhs =
        AffineVectorFamily::new(t0, target_pieces, problem.target.coefficients.clone())?;

    // ½‖g_ext − û₀ − Σθ_p b_p‖²_M
    let w0: Vec<f64> = layout
        .boundary_extension()
        .iter()
        .zip(&problem.target.constant)
        .map(|(g, u)| g - u)
        .collect();
    let mw0 = m.mul_vec(&w0);
    let mb: Vec<Vec<f64>> = problem.target.pieces.iter().map(|p| m.mul_vec(p)).collect();
    let cost_offset = CostOffset {
        constant: 0.5 * dot(&w0, &mw0),
        linear: problem
            .target
            .pieces
            .iter()
            .map(|p| -dot(p, &mw0))
            .collect(),
        quadratic: problem
            .target
            .pieces
            .iter()
            .map(|p| mb.iter().map(|q| dot(p, q)).collect())
            .collect(),
    };

    Ok(KktBlocks {
        beta: problem.beta,
        control_mass: problem.control_mass.clone(),
        coupling: layout.restrict_rows(&problem.coupling),
        state_mass: layout.restrict_matrix(m),
        stiffness,
        state_rhs,
        target_rhs,
        cost_offset,
    })
}

impl KktBlocks {
    pub fn num_control(&self) -> usize {
        self.control_mass.nrows()
    }

    pub fn num_state(&self) -> usize {
        self.state_mass.nrows()
    }

    pub fn evaluate(&self, mu: &[f64]) -> Result<KktSystem> {
        let theta = self.stiffness.theta(mu)?;
        let phi = self.target_rhs.coefficients.evaluate(mu)?;
        Ok(KktSystem {
            beta: self.beta,
            control_mass: self.control_mass.clone(),
            coupling: self.coupling.clone(),
            state_mass: self.state_mass.clone(),
            stiffness: self.stiffness.combine(&theta),
            state_rhs: self.state_rhs.combine(&theta),
            target_rhs: self.target_rhs.combine(&phi),
            cost_offset: self.cost_offset.value(&phi),
        })
    }

    /// Congruence by a state-space basis `R` (columns = new state dofs).
    /// The control block is left untouched.
    pub fn project_state(&self, basis: &CsrMatrix) -> Result<KktBlocks> {
        check_len("state basis rows", self.num_state(), basis.nrows())?;
        let rt = basis.transpose();
        Ok(KktBlocks {
            beta: self.beta,
            control_mass: self.control_mass.clone(),
            coupling: rt.matmul(&self.coupling),
            state_mass: self.state_mass.congruence(basis),
            stiffness: self.stiffness.map_pieces(|k| rt.matmul(&k.matmul(basis))),
            state_rhs: self.state_rhs.map_vectors(|v| basis.tr_mul_vec(v)),
            target_rhs: self.target_rhs.map_vectors(|v| basis.tr_mul_vec(v)),
            cost_offset: self.cost_offset.clone(),
        })
    }

    pub fn with_beta(&self, beta: f64) -> Result<KktBlocks> {
        check_beta(beta)?;
        let mut b = self.clone();
        b.beta = beta;
        Ok(b)
    }
}

/// KKT data evaluated at one parameter.
#[derive(Debug, Clone)]
pub struct KktSystem {
    pub beta: f64,
    pub control_mass: CsrMatrix,
    pub coupling: CsrMatrix,
    pub state_mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub state_rhs: Vec<f64>,
    pub target_rhs: Vec<f64>,
    pub cost_offset: f64,
}

impl KktSystem {
    /// Builds a system from a single fully evaluated nodal problem (used for
    /// scenarios that reassemble per sample).
    pub fn from_nodal(problem: &NodalProblem, layout: &DofLayout, mu: &[f64]) -> Result<KktSystem> {
        apply_dirichlet(problem, layout)?.evaluate(mu)
    }

    pub fn num_control(&self) -> usize {
        self.control_mass.nrows()
    }

    pub fn num_state(&self) -> usize {
        self.state_mass.nrows()
    }

    pub fn dim(&self) -> usize {
        self.num_control() + 2 * self.num_state()
    }

    pub fn matrix(&self) -> CsrMatrix {
        let (nc, ns) = (self.num_control(), self.num_state());
        let bt = self.coupling.transpose();
        let kt = self.stiffness.transpose();
        let n = nc + 2 * ns;
        block_matrix(
            n,
            n,
            &[
                (0, 0, &self.control_mass, 2.0 * self.beta),
                (0, nc + ns, &bt, -1.0),
                (nc, nc, &self.state_mass, 1.0),
                (nc, nc + ns, &kt, 1.0),
                (nc + ns, 0, &self.coupling, -1.0),
                (nc + ns, nc, &self.stiffness, 1.0),
            ],
        )
    }

    pub fn rhs(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.num_control()];
        b.extend_from_slice(&self.target_rhs);
        b.extend_from_slice(&self.state_rhs);
        b
    }

    /// `J` for unknowns expressed in this system's coordinates.
    pub fn cost(&self, state: &[f64], control: &[f64]) -> f64 {
        0.5 * self.state_mass.bilinear(state, state) - dot(state, &self.target_rhs)
            + self.cost_offset
            + self.beta * self.control_mass.bilinear(control, control)
    }

    pub fn project_state(&self, basis: &CsrMatrix) -> Result<KktSystem> {
        check_len("state basis rows", self.num_state(), basis.nrows())?;
        let rt = basis.transpose();
        Ok(KktSystem {
            beta: self.beta,
            control_mass: self.control_mass.clone(),
            coupling: rt.matmul(&self.coupling),
            state_mass: self.state_mass.congruence(basis),
            stiffness: rt.matmul(&self.stiffness.matmul(basis)),
            state_rhs: basis.tr_mul_vec(&self.state_rhs),
            target_rhs: basis.tr_mul_vec(&self.target_rhs),
            cost_offset: self.cost_offset,
        })
    }
}

/// Assembled saddle matrix with its right-hand side.
#[derive(Debug, Clone)]
pub struct FullKkt {
    pub system: KktSystem,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

impl FullKkt {
    pub fn new(system: KktSystem) -> Result<Self> {
        check_beta(system.beta)?;
        let matrix = system.matrix();
        let rhs = system.rhs();
        Ok(Self {
            system,
            matrix,
            rhs,
        })
    }
}

pub fn build_kkt(blocks: &KktBlocks, mu: &[f64]) -> Result<FullKkt> {
    check_beta(blocks.beta)?;
    FullKkt::new(blocks.evaluate(mu)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalTriple {
    pub control: Vec<f64>,
    pub state: Vec<f64>,
    pub adjoint: Vec<f64>,
    pub cost: f64,
}

impl OptimalTriple {
    pub fn from_stacked(system: &KktSystem, x: &[f64]) -> Self {
        let (nc, ns) = (system.num_control(), system.num_state());
        let control = x[..nc].to_vec();
        let state = x[nc..nc + ns].to_vec();
        let adjoint = x[nc + ns..].to_vec();
        let cost = system.cost(&state, &control);
        Self {
            control,
            state,
            adjoint,
            cost,
        }
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut x = self.control.clone();
        x.extend_from_slice(&self.state);
        x.extend_from_slice(&self.adjoint);
        x
    }
}

/// Tolerance on the normwise backward error of a truth solve.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

fn inf_norm(a: &CsrMatrix) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Sparse LU solve with up to three steps of iterative refinement.
pub fn solve_saddle(matrix: &CsrMatrix, rhs: &[f64], context: &str) -> Result<Vec<f64>> {
    let lu = SparseLu::new(matrix, context)?;
    let mut x = lu.solve(rhs)?;
    let a_norm = inf_norm(matrix);
    let b_norm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let backward = |x: &[f64], r: &[f64]| {
        let xn = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let rn = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = a_norm * xn + b_norm;
        if scale == 0.0 {
            0.0
        } else {
            rn / scale
        }
    };
    // Stop on the componentwise backward error: the control rows scale with
    // β·h² and are invisible to a normwise test next to high-contrast stiffness.
    let componentwise = |x: &[f64], r: &[f64]| {
        (0..matrix.nrows())
            .map(|i| {
                let (cols, vals) = matrix.row(i);
                let s = rhs[i].abs()
                    + cols
                        .iter()
                        .zip(vals)
                        .map(|(&j, v)| (v * x[j]).abs())
                        .sum::<f64>();
                if s == 0.0 {
                    0.0
                } else {
                    r[i].abs() / s
                }
            })
            .fold(0.0, f64::max)
    };
    for _ in 0..3 {
        let r: Vec<f64> = rhs
            .iter()
            .zip(matrix.mul_vec(&x))
            .map(|(b, ax)| b - ax)
            .collect();
        if componentwise(&x, &r) <= 4.0 * f64::EPSILON {
            break;
        }
        let dx = lu.solve(&r)?;
        x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
    }
    let r: Vec<f64> = rhs
        .iter()
        .zip(matrix.mul_vec(&x))
        .map(|(b, ax)| b - ax)
        .collect();
    let err = backward(&x, &r);
    if !x.iter().all(|v| v.is_finite()) || err > SOLVE_TOLERANCE {
        return Err(Error::SolverFailure {
            context: format!("{context}: backward error {err:.3e}"),
            condition_estimate: a_norm * norm2(&x) / norm2(rhs).max(f64::MIN_POSITIVE),
        });
    }
    Ok(x)
}

pub fn solve_kkt(sys: &FullKkt) -> Result<OptimalTriple> {
    let x = solve_saddle(&sys.matrix, &sys.rhs, "full KKT solve")?;
    Ok(OptimalTriple::from_stacked(&sys.system, &x))
}

/// Solves a KKT system with a small state space by eliminating the control:
/// `f = (2β M_c)⁻¹ Bᵀλ` leaves a dense `2n_s` system in `(u, λ)`. Used for
/// locally reduced systems whose coupling rows are dense, where a sparse LU
/// of the full saddle matrix fills in badly.
pub fn solve_condensed(sys: &KktSystem, context: &str) -> Result<OptimalTriple> {
    let ns = sys.num_state();
    let mc = SparseLu::new(&sys.control_mass, context)?;
    let coupling_t = sys.coupling.transpose();
    let rows: Vec<Vec<f64>> = (0..ns)
        .map(|i| {
            let mut r = vec![0.0; sys.num_control()];
            let (cols, vals) = sys.coupling.row(i);
            cols.iter().zip(vals).for_each(|(&j, &v)| r[j] = v);
            r
        })
        .collect();
    // columns of M_c⁻¹ Bᵀ
    let lifted = mc.solve_many(&rows.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let scale = 1.0 / (2.0 * sys.beta);
    let mut a = DMatrix::zeros(2 * ns, 2 * ns);
    for (i, j, v) in sys.state_mass.triplets() {
        a[(i, j)] += v;
    }
    for (i, j, v) in sys.stiffness.triplets() {
        a[(j, ns + i)] += v;
        a[(ns + i, j)] += v;
    }
    for (j, col) in lifted.iter().enumerate() {
        let bcol = sys.coupling.mul_vec(col);
        for i in 0..ns {
            a[(ns + i, ns + j)] -= scale * bcol[i];
        }
    }
    let mut rhs = DVector::zeros(2 * ns);
    rhs.rows_mut(0, ns).copy_from_slice(&sys.target_rhs);
    rhs.rows_mut(ns, ns).copy_from_slice(&sys.state_rhs);
    let x = dense_solve(&a, &rhs, context).map_err(|e| Error::SolverFailure {
        context: format!("condensed system: {e}"),
        condition_estimate: f64::INFINITY,
    })?;
    let state = x.rows(0, ns).iter().copied().collect::<Vec<_>>();
    let adjoint = x.rows(ns, ns).iter().copied().collect::<Vec<_>>();
    let bt_l = coupling_t.mul_vec(&adjoint);
    let control = mc
        .solve(&bt_l)?
        .into_iter()
        .map(|v| v * scale)
        .collect::<Vec<_>>();
    let cost = sys.cost(&state, &control);
    Ok(OptimalTriple {
        control,
        state,
        adjoint,
        cost,
    })
}

/// Solves the boundary-control problem: the control lives on boundary trace
/// dofs and no node is constrained, so `K` is singular on constants while the
/// coupled saddle matrix is not.
pub fn solve_neumann_kkt(problem: &NodalProblem, mu: &[f64]) -> Result<OptimalTriple> {
    let layout = DofLayout::all_free(problem.state_mass.nrows());
    solve_kkt(&build_kkt(&apply_dirichlet(problem, &layout)?, mu)?)
}

/// `J = ½(u − û)ᵀM(u − û) + β fᵀM_c f` on full nodal vectors.
pub fn cost(
    state: &[f64],
    control: &[f64],
    target: &[f64],
    beta: f64,
    state_mass: &CsrMatrix,
    control_mass: &CsrMatrix,
) -> f64 {
    let e: Vec<f64> = state.iter().zip(target).map(|(u, t)| u - t).collect();
    0.5 * state_mass.bilinear(&e, &e) + beta * control_mass.bilinear(control, control)
}

/// Block residual vectors `(gradient, adjoint, state)` equations.
pub fn kkt_residual_vectors(sys: &KktSystem, t: &OptimalTriple) -> [Vec<f64>; 3] {
    let bt_l = sys.coupling.tr_mul_vec(&t.adjoint);
    let mc_f = sys.control_mass.mul_vec(&t.control);
    let r1: Vec<f64> = mc_f
        .iter()
        .zip(&bt_l)
        .map(|(a, b)| 2.0 * sys.beta * a - b)
        .collect();
    let mu = sys.state_mass.mul_vec(&t.state);
    let kt_l = sys.stiffness.tr_mul_vec(&t.adjoint);
    let r2: Vec<f64> = (0..sys.num_state())
        .map(|i| sys.target_rhs[i] - mu[i] - kt_l[i])
        .collect();
    let ku = sys.stiffness.mul_vec(&t.state);
    let bf = sys.coupling.mul_vec(&t.control);
    let r3: Vec<f64> = (0..sys.num_state())
        .map(|i| sys.state_rhs[i] + bf[i] - ku[i])
        .collect();
    [r1, r2, r3]
}

/// Euclidean norms of the three block residuals.
pub fn kkt_residual(sys: &KktSystem, t: &OptimalTriple) -> [f64; 3] {
    kkt_residual_vectors(sys, t).map(|r| norm2(&r))
}

/// Block residuals relative to the block right-hand sides (or to the operator
/// scale when a right-hand side vanishes).
pub fn kkt_relative_residual(sys: &KktSystem, t: &OptimalTriple) -> [f64; 3] {
    let r = kkt_residual(sys, t);
    let scale2 = norm2(&sys.target_rhs).max(sys.state_mass.max_abs() * norm2(&t.state));
    let scale3 = norm2(&sys.state_rhs).max(sys.stiffness.max_abs() * norm2(&t.state));
    let scale1 = (2.0 * sys.beta * sys.control_mass.max_abs() * norm2(&t.control))
        .max(sys.coupling.max_abs() * norm2(&t.adjoint));
    let rel = |r: f64, s: f64| if s > 0.0 { r / s } else { r };
    [rel(r[0], scale1), rel(r[1], scale2), rel(r[2], scale3)]
}

/// Reduced gradient `∇J(f) = 2βM_c f − Bᵀλ(f)` where `u(f)`, `λ(f)` solve the
/// state and adjoint equations for the given control.
pub struct ReducedCostEvaluator<'a> {
    system: &'a KktSystem,
    stiffness: SparseLu,
    stiffness_t: SparseLu,
}

impl<'a> ReducedCostEvaluator<'a> {
    pub fn new(system: &'a KktSystem) -> Result<Self> {
        Ok(Self {
            system,
            stiffness: SparseLu::new(&system.stiffness, "state operator")?,
            stiffness_t: SparseLu::new(&system.stiffness.transpose(), "adjoint operator")?,
        })
    }

    pub fn state(&self, control: &[f64]) -> Result<Vec<f64>> {
        let bf = self.system.coupling.mul_vec(control);
        let rhs: Vec<f64> = bf
            .iter()
            .zip(&self.system.state_rhs)
            .map(|(a, b)| a + b)
            .collect();
        self.stiffness.solve(&rhs)
    }

    pub fn cost(&self, control: &[f64]) -> Result<f64> {
        Ok(self.system.cost(&self.state(control)?, control))
    }

    pub fn gradient(&self, control: &[f64]) -> Result<Vec<f64>> {
        let u = self.state(control)?;
        let mu = self.system.state_mass.mul_vec(&u);
        let rhs: Vec<f64> = self
            .system
            .target_rhs
            .iter()
            .zip(&mu)
            .map(|(t, m)| t - m)
            .collect();
        let lambda = self.stiffness_t.solve(&rhs)?;
        let bt = self.system.coupling.tr_mul_vec(&lambda);
        let mf = self.system.control_mass.mul_vec(control);
        Ok(mf
            .iter()
            .zip(&bt)
            .map(|(m, b)| 2.0 * self.system.beta * m - b)
            .collect())
    }
}

/// `id,value` CSV.
pub fn values_csv(values: &[f64]) -> String {
    let mut s = String::from("id,value\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{i},{v:e}");
    }
    s
}

/// Single-term affine helpers for problems evaluated at a fixed parameter.
pub fn constant_operator(a: CsrMatrix) -> AffineOperatorFamily {
    AffineOperatorFamily::new(vec![a], Arc::new(FnCoefficients::constant(vec![1.0])))
        .expect("one piece, one coefficient")
}

pub fn constant_vector(v: Vec<f64>) -> AffineVectorFamily {
    AffineVectorFamily::new(
        v,
        Vec::new(),
        Arc::new(FnCoefficients::constant(Vec::new())),
    )
    .expect("no pieces")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::*;
    use crate::grid::build_fine_grid;
    use crate::grid::FineGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(g: &FineGrid, beta: f64, target: impl Fn(f64, f64) -> f64) -> NodalProblem {
        let kappa: Vec<f64> = g
            .centroids()
            .iter()
            .map(|c| 1.0 + 10.0 * ((4.0 * c[0]).sin() * (3.0 * c[1]).cos()).abs())
            .collect();
        let k = assemble_stiffness(g, &kappa).unwrap();
        let uhat: Vec<f64> = g.nodes().iter().map(|p| target(p[0], p[1])).collect();
        NodalProblem {
            beta,
            control_mass: assemble_control_mass(g),
            coupling: assemble_coupling(g),
            state_mass: assemble_state_mass(g),
            stiffness: constant_operator(k),
            source: vec![0.0; g.num_nodes()],
            target: constant_vector(uhat),
        }
    }

    fn zero_bc(g: &FineGrid) -> DofLayout {
        DofLayout::dirichlet(g, &vec![0.0; g.boundary_nodes().len()]).unwrap()
    }

    fn bump(x: f64, y: f64) -> f64 {
        (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()
    }

    #[test]
    fn matrix_symmetric_with_expected_size() {
        let g = build_fine_grid(6, 6).unwrap();
        let blocks = apply_dirichlet(&problem(&g, 1e-2, bump), &zero_bc(&g)).unwrap();
        let sys = build_kkt(&blocks, &[]).unwrap();
        assert!(sys.matrix.is_symmetric(1e-14));
        assert_eq!(sys.matrix.nrows(), 2 * 25 + 72);
        assert!(sys.rhs[..72].iter().all(|&v| v == 0.0));
        // all nodes free: 2N_h + N_e
        let all = apply_dirichlet(
            &problem(&g, 1e-2, bump),
            &DofLayout::all_free(g.num_nodes()),
        )
        .unwrap();
        assert_eq!(build_kkt(&all, &[]).unwrap().matrix.nrows(), 2 * 49 + 72);
    }

    #[test]
    fn bad_beta_rejected() {
        let g = build_fine_grid(2, 2).unwrap();
        assert!(matches!(
            apply_dirichlet(&problem(&g, 0.0, bump), &zero_bc(&g)),
            Err(Error::InvalidRegularization(_))
        ));
    }

    #[test]
    fn zero_data_zero_solution() {
        let g = build_fine_grid(5, 5).unwrap();
        let blocks = apply_dirichlet(&problem(&g, 1e-2, |_, _| 0.0), &zero_bc(&g)).unwrap();
        let sys = build_kkt(&blocks, &[]).unwrap();
        assert!(sys.rhs.iter().all(|&v| v == 0.0));
        let t = solve_kkt(&sys).unwrap();
        assert!(t.stacked().iter().all(|&v| v == 0.0));
        assert_eq!(t.cost, 0.0);
    }

    #[test]
    fn solution_satisfies_blocks_and_filter() {
        let g = build_fine_grid(10, 10).unwrap();
        let blocks = apply_dirichlet(&problem(&g, 1e-3, bump), &zero_bc(&g)).unwrap();
        let sys = build_kkt(&blocks, &[]).unwrap();
        let t = solve_kkt(&sys).unwrap();
        assert!(kkt_relative_residual(&sys.system, &t)
            .iter()
            .all(|&r| r < 1e-10));
        let m1 = sys.system.control_mass.diagonal();
        let bt = sys.system.coupling.tr_mul_vec(&t.adjoint);
        for j in 0..m1.len() {
            let f = bt[j] / (2.0 * 1e-3 * m1[j]);
            assert!((f - t.control[j]).abs() <= 1e-9 * (1.0 + f.abs()));
        }
        // perturbation grows the residual linearly
        let mut p = t.clone();
        p.state[3] += 1e-3;
        let r1 = kkt_residual(&sys.system, &p);
        p.state[3] += 1e-3;
        let r2 = kkt_residual(&sys.system, &p);
        assert!((r2[2] / r1[2] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn condensed_solve_matches_saddle_lu() {
        let g = build_fine_grid(8, 8).unwrap();
        let blocks = apply_dirichlet(&problem(&g, 1e-3, bump), &zero_bc(&g)).unwrap();
        let sys = build_kkt(&blocks, &[]).unwrap();
        let a = solve_kkt(&sys).unwrap();
        let b = solve_condensed(&sys.system, "test").unwrap();
        let (xa, xb) = (a.stacked(), b.stacked());
        let d: f64 = xa
            .iter()
            .zip(&xb)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(d <= 1e-10 * norm2(&xa));
        assert!((a.cost - b.cost).abs() <= 1e-12 * a.cost.abs().max(1.0));
    }

    #[test]
    fn zero_triple_residual_equals_target_load() {
        let g = build_fine_grid(4, 4).unwrap();
        let blocks = apply_dirichlet(&problem(&g, 1e-2, bump), &zero_bc(&g)).unwrap();
        let sys = blocks.evaluate(&[]).unwrap();
        let z = OptimalTriple {
            control: vec![0.0; sys.num_control()],
            state: vec![0.0; sys.num_state()],
            adjoint: vec![0.0; sys.num_state()],
            cost: 0.0,
        };
        assert!((kkt_residual(&sys, &z)[1] - norm2(&sys.target_rhs)).abs() < 1e-15);
    }

    #[test]
    fn cost_definitions_agree() {
        let g = build_fine_grid(6, 5).unwrap();
        let bc: Vec<f64> = (0..g.boundary_nodes().len())
            .map(|i| 0.1 * i as f64)
            .collect();
        let layout = DofLayout::dirichlet(&g, &bc).unwrap();
        let p = problem(&g, 0.3, |x, y| x * y + 1.0);
        let sys = apply_dirichlet(&p, &layout).unwrap().evaluate(&[]).unwrap();
        let u: Vec<f64> = (0..sys.num_state()).map(|i| (i as f64).cos()).collect();
        let f: Vec<f64> = (0..sys.num_control()).map(|i| (i as f64).sin()).collect();
        let full = cost(
            &layout.expand(&u),
            &f,
            &p.target.constant,
            0.3,
            &p.state_mass,
            &p.control_mass,
        );
        assert!((sys.cost(&u, &f) - full).abs() < 1e-12 * full.abs().max(1.0));
        let uhat = &p.target.constant;
        assert_eq!(
            cost(
                uhat,
                &vec![0.0; f.len()],
                uhat,
                0.3,
                &p.state_mass,
                &p.control_mass
            ),
            0.0
        );
    }

    #[test]
    fn optimum_beats_feasible_points() {
        let g = build_fine_grid(8, 8).unwrap();
        let blocks = apply_dirichlet(&problem(&g, 1e-3, bump), &zero_bc(&g)).unwrap();
        let sys = build_kkt(&blocks, &[]).unwrap();
        let opt = solve_kkt(&sys).unwrap();
        let eval = ReducedCostEvaluator::new(&sys.system).unwrap();
        assert!((eval.cost(&opt.control).unwrap() - opt.cost).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let f: Vec<f64> = opt
                .control
                .iter()
                .map(|c| c + rng.random_range(-1.0..1.0))
                .collect();
            assert!(eval.cost(&f).unwrap() >= opt.cost);
        }
    }

    #[test]
    fn larger_beta_shrinks_control() {
        let g = build_fine_grid(8, 8).unwrap();
        let p = problem(&g, 1.0, bump);
        let blocks = apply_dirichlet(&p, &zero_bc(&g)).unwrap();
        let mut norms = Vec::new();
        for beta in [1e-4, 2e-4, 4e-4] {
            let t = solve_kkt(&build_kkt(&blocks.with_beta(beta).unwrap(), &[]).unwrap()).unwrap();
            norms.push(blocks.control_mass.bilinear(&t.control, &t.control).sqrt());
        }
        assert!(norms[0] >= norms[1] && norms[1] >= norms[2]);
    }

    #[test]
    fn neumann_system_invertible() {
        let g = build_fine_grid(6, 6).unwrap();
        let k = assemble_stiffness(&g, &vec![1.0; g.num_elements()]).unwrap();
        let uhat: Vec<f64> = g.nodes().iter().map(|p| p[0] * p[1] + 1.0).collect();
        let p = NodalProblem {
            beta: 1e-2,
            control_mass: assemble_boundary_mass(&g),
            coupling: assemble_boundary_coupling(&g),
            state_mass: assemble_state_mass(&g),
            stiffness: constant_operator(k),
            source: vec![0.0; g.num_nodes()],
            target: constant_vector(uhat.clone()),
        };
        let t = solve_neumann_kkt(&p, &[]).unwrap();
        let layout = DofLayout::all_free(g.num_nodes());
        let sys = apply_dirichlet(&p, &layout).unwrap().evaluate(&[]).unwrap();
        assert!(kkt_relative_residual(&sys, &t).iter().all(|&r| r < 1e-9));
        let zero = NodalProblem {
            target: constant_vector(vec![0.0; g.num_nodes()]),
            ..p
        };
        let t0 = solve_neumann_kkt(&zero, &[]).unwrap();
        assert!(t0.stacked().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn csv_header() {
        assert_eq!(values_csv(&[1.5]), "id,value\n0,1.5e0\n");
    }
}
