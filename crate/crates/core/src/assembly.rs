//! P1/P0 finite-element assembly on [`FineGrid`].
//!
//! State and adjoint live in continuous piecewise linears; the distributed
//! control lives in piecewise constants per element. All element integrals are
//! exact closed forms; variable coefficients are sampled once per element.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::grid::{FineGrid, Point};
use crate::par;
use crate::sparse::CsrMatrix;

/// Diffusion coefficient sampled per element.
#[derive(Debug, Clone)]
pub enum ElementCoefficient {
    Scalar(Vec<f64>),
    /// Symmetric tensors `[a11, a12, a22]`.
    Tensor(Vec<[f64; 3]>),
}

impl ElementCoefficient {
    pub fn len(&self) -> usize {
        match self {
            Self::Scalar(v) => v.len(),
            Self::Tensor(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn tensor(&self, e: usize) -> [f64; 3] {
        match self {
            Self::Scalar(v) => [v[e], 0.0, v[e]],
            Self::Tensor(v) => v[e],
        }
    }

    /// Scalar magnitude per element (mean eigenvalue for tensors).
    pub fn magnitude(&self) -> Vec<f64> {
        match self {
            Self::Scalar(v) => v.clone(),
            Self::Tensor(v) => v.iter().map(|t| 0.5 * (t[0] + t[2])).collect(),
        }
    }

    pub fn check_positive(&self) -> Result<()> {
        for e in 0..self.len() {
            let [a, b, c] = self.tensor(e);
            let det = a * c - b * b;
            if !(a > 0.0 && det > 0.0) || !a.is_finite() || !c.is_finite() {
                let value = if a > 0.0 { det } else { a };
                return Err(Error::InvalidCoefficient { element: e, value });
            }
        }
        Ok(())
    }
}

/// Gradients of the three barycentric coordinates and the triangle area.
pub fn p1_gradients(v: &[Point; 3]) -> ([[f64; 2]; 3], f64) {
    let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        g[i] = [(v[j][1] - v[k][1]) / det, (v[k][0] - v[j][0]) / det];
    }
    (g, 0.5 * det.abs())
}

fn element_stiffness(v: &[Point; 3], t: [f64; 3]) -> [[f64; 3]; 3] {
    let (g, area) = p1_gradients(v);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        let ag = [
            t[0] * g[i][0] + t[1] * g[i][1],
            t[1] * g[i][0] + t[2] * g[i][1],
        ];
        for j in 0..3 {
            k[i][j] = area * (ag[0] * g[j][0] + ag[1] * g[j][1]);
        }
    }
    k
}

fn element_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// Assembles `Σ_e local(e)` over `elements`, mapping fine nodes through
/// `node_map` (entries `usize::MAX` are skipped) into an `n × n` matrix.
pub fn assemble_on_elements<F>(
    grid: &FineGrid,
    elements: &[usize],
    node_map: Option<&[usize]>,
    n: usize,
    local: F,
) -> CsrMatrix
where
    F: Fn(usize, &[Point; 3]) -> [[f64; 3]; 3] + Sync + Send,
{
    let blocks = par::map(elements, |&e| local(e, &grid.element_vertices(e)));
    let mut t = Vec::with_capacity(9 * elements.len());
    for (&e, k) in elements.iter().zip(&blocks) {
        let nodes = grid.element(e);
        let idx = nodes.map(|a| node_map.map_or(a, |m| m[a]));
        for a in 0..3 {
            if idx[a] == usize::MAX {
                continue;
            }
            for b in 0..3 {
                if idx[b] != usize::MAX {
                    t.push((idx[a], idx[b], k[a][b]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &t)
}

fn all_elements(grid: &FineGrid) -> Vec<usize> {
    (0..grid.num_elements()).collect()
}

/// Stiffness matrix for a positive coefficient.
pub fn assemble_stiffness(grid: &FineGrid, kappa: &[f64]) -> Result<CsrMatrix> {
    check_len("stiffness coefficient", grid.num_elements(), kappa.len())?;
    for (e, &k) in kappa.iter().enumerate() {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidCoefficient {
                element: e,
                value: k,
            });
        }
    }
    Ok(assemble_stiffness_signed(grid, kappa))
}

/// Stiffness with an arbitrary-sign coefficient; used for affine pieces whose
/// weighted sum is positive but which individually need not be.
pub fn assemble_stiffness_signed(grid: &FineGrid, kappa: &[f64]) -> CsrMatrix {
    assemble_on_elements(grid, &all_elements(grid), None, grid.num_nodes(), |e, v| {
        element_stiffness(v, [kappa[e], 0.0, kappa[e]])
    })
}

pub fn assemble_coefficient_stiffness(
    grid: &FineGrid,
    coeff: &ElementCoefficient,
) -> Result<CsrMatrix> {
    check_len("stiffness coefficient", grid.num_elements(), coeff.len())?;
    coeff.check_positive()?;
    Ok(assemble_on_elements(
        grid,
        &all_elements(grid),
        None,
        grid.num_nodes(),
        |e, v| element_stiffness(v, coeff.tensor(e)),
    ))
}

/// Local stiffness over a subset of elements (e.g. a coarse neighborhood).
pub fn assemble_local_stiffness(
    grid: &FineGrid,
    elements: &[usize],
    node_map: &[usize],
    n: usize,
    coeff: &ElementCoefficient,
) -> CsrMatrix {
    assemble_on_elements(grid, elements, Some(node_map), n, |e, v| {
        element_stiffness(v, coeff.tensor(e))
    })
}

pub fn assemble_local_mass(
    grid: &FineGrid,
    elements: &[usize],
    node_map: &[usize],
    n: usize,
    weight: &[f64],
) -> CsrMatrix {
    assemble_on_elements(grid, elements, Some(node_map), n, |e, v| {
        let (_, area) = p1_gradients(v);
        element_mass(area * weight[e])
    })
}

/// State mass matrix `(ψ_i, ψ_j)`.
pub fn assemble_state_mass(grid: &FineGrid) -> CsrMatrix {
    assemble_weighted_mass(grid, &vec![1.0; grid.num_elements()])
}

/// Mass matrix `(w ψ_i, ψ_j)` with `w` constant per element.
pub fn assemble_weighted_mass(grid: &FineGrid, weight: &[f64]) -> CsrMatrix {
    assemble_on_elements(grid, &all_elements(grid), None, grid.num_nodes(), |e, v| {
        let (_, area) = p1_gradients(v);
        element_mass(area * weight[e])
    })
}

/// Diagonal mass of the piecewise-constant control space.
pub fn assemble_control_mass(grid: &FineGrid) -> CsrMatrix {
    assemble_weighted_control_mass(grid, &vec![1.0; grid.num_elements()])
}

pub fn assemble_weighted_control_mass(grid: &FineGrid, weight: &[f64]) -> CsrMatrix {
    let d: Vec<f64> = (0..grid.num_elements())
        .map(|e| grid.signed_area(e).abs() * weight[e])
        .collect();
    CsrMatrix::from_diagonal(&d)
}

/// Coupling `(φ_j, ψ_k)` between P1 nodes (rows) and P0 elements (columns).
pub fn assemble_coupling(grid: &FineGrid) -> CsrMatrix {
    assemble_weighted_coupling(grid, &vec![1.0; grid.num_elements()])
}

pub fn assemble_weighted_coupling(grid: &FineGrid, weight: &[f64]) -> CsrMatrix {
    let mut t = Vec::with_capacity(3 * grid.num_elements());
    for e in 0..grid.num_elements() {
        let w = grid.signed_area(e).abs() * weight[e] / 3.0;
        for a in grid.element(e) {
            t.push((a, e, w));
        }
    }
    CsrMatrix::from_triplets(grid.num_nodes(), grid.num_elements(), &t)
}

#[derive(Debug, Clone)]
pub enum Field {
    Nodal(Vec<f64>),
    Element(Vec<f64>),
}

/// Load vector `∫ field · ψ_k` with exact P1×P1 / P0×P1 integration.
pub fn assemble_load(grid: &FineGrid, field: &Field) -> Result<Vec<f64>> {
    assemble_weighted_load(grid, field, &vec![1.0; grid.num_elements()])
}

pub fn assemble_weighted_load(grid: &FineGrid, field: &Field, weight: &[f64]) -> Result<Vec<f64>> {
    let mut b = vec![0.0; grid.num_nodes()];
    match field {
        Field::Nodal(v) => {
            check_len("nodal load field", grid.num_nodes(), v.len())?;
            for e in 0..grid.num_elements() {
                let n = grid.element(e);
                let area = grid.signed_area(e).abs() * weight[e];
                let s = v[n[0]] + v[n[1]] + v[n[2]];
                for a in n {
                    b[a] += area / 12.0 * (s + v[a]);
                }
            }
        }
        Field::Element(v) => {
            check_len("element load field", grid.num_elements(), v.len())?;
            for e in 0..grid.num_elements() {
                let w = grid.signed_area(e).abs() * weight[e] * v[e] / 3.0;
                for a in grid.element(e) {
                    b[a] += w;
                }
            }
        }
    }
    Ok(b)
}

/// P1 mass matrix on the boundary trace, in boundary-cycle order
/// ([`FineGrid::boundary_cycle`]).
pub fn assemble_boundary_mass(grid: &FineGrid) -> CsrMatrix {
    let cyc = grid.boundary_cycle();
    let nb = cyc.len();
    let mut t = Vec::with_capacity(4 * nb);
    for a in 0..nb {
        let b = (a + 1) % nb;
        let (p, q) = (grid.node(cyc[a]), grid.node(cyc[b]));
        let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
        t.push((a, a, len / 3.0));
        t.push((b, b, len / 3.0));
        t.push((a, b, len / 6.0));
        t.push((b, a, len / 6.0));
    }
    CsrMatrix::from_triplets(nb, nb, &t)
}

/// Coupling `∫_{∂Ω} ψ_k φ_b` between all P1 nodes and boundary trace dofs.
pub fn assemble_boundary_coupling(grid: &FineGrid) -> CsrMatrix {
    let cyc = grid.boundary_cycle();
    let mb = assemble_boundary_mass(grid);
    let t: Vec<_> = mb.triplets().map(|(a, b, v)| (cyc[a], b, v)).collect();
    CsrMatrix::from_triplets(grid.num_nodes(), cyc.len(), &t)
}

/// Split of nodal dofs into free ones and Dirichlet-constrained ones.
#[derive(Debug, Clone)]
pub struct DofLayout {
    num_nodes: usize,
    free: Vec<usize>,
    fixed: Vec<usize>,
    fixed_values: Vec<f64>,
    /// Node → free index, or `usize::MAX` for constrained nodes.
    free_index: Vec<usize>,
}

impl DofLayout {
    /// Every boundary node of `grid` constrained to the matching entry of `g`
    /// (ordered as [`FineGrid::boundary_nodes`]).
    pub fn dirichlet(grid: &FineGrid, g: &[f64]) -> Result<Self> {
        let fixed = grid.boundary_nodes().to_vec();
        if g.len() != fixed.len() {
            return Err(Error::InvalidArgument(format!(
                "Dirichlet data has {} values for {} boundary nodes",
                g.len(),
                fixed.len()
            )));
        }
        Ok(Self::with_fixed(grid.num_nodes(), fixed, g.to_vec()))
    }

    pub fn all_free(num_nodes: usize) -> Self {
        Self::with_fixed(num_nodes, Vec::new(), Vec::new())
    }

    fn with_fixed(num_nodes: usize, fixed: Vec<usize>, fixed_values: Vec<f64>) -> Self {
        let mut is_fixed = vec![false; num_nodes];
        for &k in &fixed {
            is_fixed[k] = true;
        }
        let free: Vec<usize> = (0..num_nodes).filter(|&k| !is_fixed[k]).collect();
        let mut free_index = vec![usize::MAX; num_nodes];
        for (i, &k) in free.iter().enumerate() {
            free_index[k] = i;
        }
        Self {
            num_nodes,
            free,
            fixed,
            fixed_values,
            free_index,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn fixed(&self) -> &[usize] {
        &self.fixed
    }

    pub fn fixed_values(&self) -> &[f64] {
        &self.fixed_values
    }

    pub fn free_index(&self) -> &[usize] {
        &self.free_index
    }

    pub fn restrict_matrix(&self, a: &CsrMatrix) -> CsrMatrix {
        a.submatrix(&self.free, &self.free)
    }

    pub fn restrict_rows(&self, a: &CsrMatrix) -> CsrMatrix {
        let cols: Vec<usize> = (0..a.ncols()).collect();
        a.submatrix(&self.free, &cols)
    }

    pub fn restrict_vec(&self, v: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&k| v[k]).collect()
    }

    /// Nodal vector carrying the Dirichlet values and zeros elsewhere.
    pub fn boundary_extension(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.num_nodes];
        for (&k, &v) in self.fixed.iter().zip(&self.fixed_values) {
            g[k] = v;
        }
        g
    }

    /// Lift `−A_{free,fixed} g`.
    pub fn lift(&self, a: &CsrMatrix) -> Vec<f64> {
        let ag = a.mul_vec(&self.boundary_extension());
        self.free.iter().map(|&k| -ag[k]).collect()
    }

    /// Full nodal vector with the Dirichlet values inserted.
    pub fn expand(&self, u: &[f64]) -> Vec<f64> {
        let mut full = self.boundary_extension();
        for (&k, &v) in self.free.iter().zip(u) {
            full[k] = v;
        }
        full
    }

    /// Full nodal vector with zeros on constrained nodes (adjoint variables).
    pub fn expand_homogeneous(&self, u: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_nodes];
        for (&k, &v) in self.free.iter().zip(u) {
            full[k] = v;
        }
        full
    }

    /// Sparse prolongation from free dofs to all nodes.
    pub fn prolongation(&self) -> CsrMatrix {
        let t: Vec<_> = self
            .free
            .iter()
            .enumerate()
            .map(|(i, &k)| (k, i, 1.0))
            .collect();
        CsrMatrix::from_triplets(self.num_nodes, self.free.len(), &t)
    }
}

/// Scalar coefficient functions `μ ↦ (θ_1(μ), …, θ_Q(μ))`.
pub trait AffineCoefficients: Send + Sync {
    fn num_terms(&self) -> usize;
    fn evaluate(&self, mu: &[f64]) -> Result<Vec<f64>>;
}

type CoefficientFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Closed-form coefficients with an optional box parameter domain.
#[derive(Clone)]
pub struct FnCoefficients {
    terms: usize,
    bounds: Option<Vec<(f64, f64)>>,
    f: Arc<CoefficientFn>,
}

impl FnCoefficients {
    pub fn new(terms: usize, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self {
            terms,
            bounds: None,
            f: Arc::new(f),
        }
    }

    pub fn constant(values: Vec<f64>) -> Self {
        Self::new(values.len(), move |_| values.clone())
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = Some(bounds);
        self
    }
}

impl std::fmt::Debug for FnCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnCoefficients")
            .field("terms", &self.terms)
            .field("bounds", &self.bounds)
            .finish()
    }
}

pub fn check_bounds(mu: &[f64], bounds: &[(f64, f64)]) -> Result<()> {
    if mu.len() != bounds.len() {
        return Err(Error::OutOfDomain {
            value: mu.to_vec(),
            reason: format!("expected {} parameters", bounds.len()),
        });
    }
    for (i, (&m, &(lo, hi))) in mu.iter().zip(bounds).enumerate() {
        if !(m >= lo && m <= hi) {
            return Err(Error::OutOfDomain {
                value: mu.to_vec(),
                reason: format!("component {i} not in [{lo}, {hi}]"),
            });
        }
    }
    Ok(())
}

impl AffineCoefficients for FnCoefficients {
    fn num_terms(&self) -> usize {
        self.terms
    }

    fn evaluate(&self, mu: &[f64]) -> Result<Vec<f64>> {
        if let Some(b) = &self.bounds {
            check_bounds(mu, b)?;
        }
        let c = (self.f)(mu);
        check_len("affine coefficients", self.terms, c.len())?;
        Ok(c)
    }
}

/// `Σ_q θ_q(μ) K^q` with μ-independent pieces.
#[derive(Clone)]
pub struct AffineOperatorFamily {
    pieces: Vec<CsrMatrix>,
    coefficients: Arc<dyn AffineCoefficients>,
}

impl AffineOperatorFamily {
    pub fn new(pieces: Vec<CsrMatrix>, coefficients: Arc<dyn AffineCoefficients>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidArgument(
                "affine family needs at least one piece".into(),
            ));
        }
        check_len(
            "affine pieces vs coefficients",
            coefficients.num_terms(),
            pieces.len(),
        )?;
        let shape = pieces[0].shape();
        for p in &pieces {
            if p.shape() != shape {
                return Err(Error::DimensionMismatch {
                    context: "affine piece shape",
                    expected: shape.0,
                    actual: p.nrows(),
                });
            }
        }
        Ok(Self {
            pieces,
            coefficients,
        })
    }

    pub fn pieces(&self) -> &[CsrMatrix] {
        &self.pieces
    }

    pub fn coefficients(&self) -> &Arc<dyn AffineCoefficients> {
        &self.coefficients
    }

    pub fn num_terms(&self) -> usize {
        self.pieces.len()
    }

    pub fn dim(&self) -> usize {
        self.pieces[0].nrows()
    }

    pub fn theta(&self, mu: &[f64]) -> Result<Vec<f64>> {
        self.coefficients.evaluate(mu)
    }

    pub fn combine(&self, theta: &[f64]) -> CsrMatrix {
        let terms: Vec<_> = theta.iter().copied().zip(&self.pieces).collect();
        CsrMatrix::linear_combination(&terms)
    }

    pub fn map_pieces(&self, f: impl Fn(&CsrMatrix) -> CsrMatrix + Sync + Send) -> Self {
        Self {
            pieces: par::map(&self.pieces, f),
            coefficients: self.coefficients.clone(),
        }
    }
}

impl std::fmt::Debug for AffineOperatorFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AffineOperatorFamily")
            .field("terms", &self.pieces.len())
            .field("dim", &self.pieces[0].shape())
            .finish()
    }
}

pub fn affine_evaluate(family: &AffineOperatorFamily, mu: &[f64]) -> Result<CsrMatrix> {
    Ok(family.combine(&family.theta(mu)?))
}

/// `v(μ) = v₀ + Σ_p θ_p(μ) v^p`.
#[derive(Clone)]
pub struct AffineVectorFamily {
    pub constant: Vec<f64>,
    pub pieces: Vec<Vec<f64>>,
    pub coefficients: Arc<dyn AffineCoefficients>,
}

impl AffineVectorFamily {
    pub fn new(
        constant: Vec<f64>,
        pieces: Vec<Vec<f64>>,
        coefficients: Arc<dyn AffineCoefficients>,
    ) -> Result<Self> {
        check_len(
            "affine vector pieces vs coefficients",
            coefficients.num_terms(),
            pieces.len(),
        )?;
        for p in &pieces {
            check_len("affine vector piece", constant.len(), p.len())?;
        }
        Ok(Self {
            constant,
            pieces,
            coefficients,
        })
    }

    pub fn dim(&self) -> usize {
        self.constant.len()
    }

    pub fn combine(&self, theta: &[f64]) -> Vec<f64> {
        let mut v = self.constant.clone();
        for (c, p) in theta.iter().zip(&self.pieces) {
            for (vi, pi) in v.iter_mut().zip(p) {
                *vi += c * pi;
            }
        }
        v
    }

    pub fn evaluate(&self, mu: &[f64]) -> Result<Vec<f64>> {
        Ok(self.combine(&self.coefficients.evaluate(mu)?))
    }

    pub fn map_vectors(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        Self {
            constant: f(&self.constant),
            pieces: self.pieces.iter().map(|p| f(p)).collect(),
            coefficients: self.coefficients.clone(),
        }
    }
}

impl std::fmt::Debug for AffineVectorFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AffineVectorFamily")
            .field("terms", &self.pieces.len())
            .field("dim", &self.constant.len())
            .finish()
    }
}

/// Coordinate-triplet dump: header `rows cols nnz`, then `i j value` lines.
pub fn dump_matrix(a: &CsrMatrix) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {} {}", a.nrows(), a.ncols(), a.nnz());
    for (i, j, v) in a.triplets() {
        let _ = writeln!(s, "{i} {j} {v:e}");
    }
    s
}

pub fn parse_matrix(text: &str) -> Result<CsrMatrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix dump".into()))?;
    let h: Vec<usize> = header
        .split_whitespace()
        .map(|x| {
            x.parse()
                .map_err(|_| Error::Parse(format!("bad header `{header}`")))
        })
        .collect::<Result<_>>()?;
    if h.len() != 3 {
        return Err(Error::Parse(format!("bad header `{header}`")));
    }
    let mut t = Vec::with_capacity(h[2]);
    for l in lines {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::Parse(format!("bad entry `{l}`")));
        }
        let bad = || Error::Parse(format!("bad entry `{l}`"));
        let i: usize = f[0].parse().map_err(|_| bad())?;
        let j: usize = f[1].parse().map_err(|_| bad())?;
        let v: f64 = f[2].parse().map_err(|_| bad())?;
        if i >= h[0] || j >= h[1] {
            return Err(bad());
        }
        t.push((i, j, v));
    }
    if t.len() != h[2] {
        return Err(Error::Parse(format!(
            "expected {} entries, found {}",
            h[2],
            t.len()
        )));
    }
    Ok(CsrMatrix::from_triplets(h[0], h[1], &t))
}
