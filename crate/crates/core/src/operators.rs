//! Finite-difference operators for the heat equation with memory, the
//! weighted inner product they are measured in, and the spectral checks for
//! monotonicity and coercivity.
//!
//! All checks work on the symmetric part of `D M D⁻¹` where `D² = W` is the
//! diagonal weight of the inner product: for that matrix the Euclidean
//! quadratic form equals `⟨M z, z⟩_w` after the change of variables `y = D z`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal inner product ⟨z, q⟩ = h·Σ wᵢ zᵢ qᵢ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerProduct {
    weights: Vec<f64>,
    mesh_weight: f64,
}

impl InnerProduct {
    pub fn new(weights: Vec<f64>, mesh_weight: f64) -> Result<Self> {
        const OP: &str = "operators::InnerProduct::new";
        if !(mesh_weight.is_finite() && mesh_weight > 0.0) {
            return Err(Error::precondition(OP, format!("mesh weight must be positive, got {mesh_weight}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::precondition(OP, format!("weights must be positive, got {w}")));
        }
        Ok(Self { weights, mesh_weight })
    }

    /// Unit component weights.
    pub fn uniform(dim: usize, mesh_weight: f64) -> Result<Self> {
        Self::new(vec![1.0; dim], mesh_weight)
    }

    /// Weights (η on the v-block, 1 on the w-block) for the stacked state [v; w].
    pub fn heat_memory(n_points: usize, eta_mem: f64, mesh_weight: f64) -> Result<Self> {
        let mut weights = vec![eta_mem; n_points];
        weights.extend(std::iter::repeat_n(1.0, n_points));
        Self::new(weights, mesh_weight)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mesh_weight(&self) -> f64 {
        self.mesh_weight
    }

    pub fn dot(&self, z: &DVector<f64>, q: &DVector<f64>) -> f64 {
        self.mesh_weight
            * self
                .weights
                .iter()
                .zip(z.iter().zip(q.iter()))
                .map(|(w, (a, b))| w * a * b)
                .sum::<f64>()
    }

    pub fn norm_squared(&self, z: &DVector<f64>) -> f64 {
        self.dot(z, z)
    }

    pub fn norm(&self, z: &DVector<f64>) -> f64 {
        self.norm_squared(z).sqrt()
    }

    /// D = diag(√(h·wᵢ))
    fn sqrt_weights(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.weights.iter().map(|w| (w * self.mesh_weight).sqrt()),
        )
    }
}

/// A square matrix standing for A or B, tagged with the inner product it is
/// monotone or coercive against.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator {
    matrix: DMatrix<f64>,
    inner: InnerProduct,
    label: String,
    monotone: bool,
    blocks: usize,
}

impl DiscreteOperator {
    pub fn new(matrix: DMatrix<f64>, inner: InnerProduct, label: impl Into<String>) -> Result<Self> {
        const OP: &str = "operators::DiscreteOperator::new";
        if !matrix.is_square() {
            return Err(Error::dimension(
                OP,
                format!("matrix is {}x{}", matrix.nrows(), matrix.ncols()),
            ));
        }
        if matrix.nrows() != inner.dim() {
            return Err(Error::dimension(
                OP,
                format!("matrix is {0}x{0} but the inner product has {1} weights", matrix.nrows(), inner.dim()),
            ));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::precondition(OP, "matrix has non-finite entries"));
        }
        Ok(Self {
            matrix,
            inner,
            label: label.into(),
            monotone: false,
            blocks: 1,
        })
    }

    pub fn identity(inner: InnerProduct) -> Self {
        let m = inner.dim();
        let mut op = Self {
            matrix: DMatrix::identity(m, m),
            inner,
            label: "identity".into(),
            monotone: false,
            blocks: 1,
        };
        op.monotone = check_monotone(&op, 0.0).pass;
        op
    }

    /// Declares that the state is `blocks` equal-length blocks coupled
    /// pointwise, which lets the time stepper reorder unknowns into a band.
    pub fn with_blocks(mut self, blocks: usize) -> Result<Self> {
        if blocks == 0 || !self.dim().is_multiple_of(blocks) {
            return Err(Error::dimension(
                "operators::DiscreteOperator::with_blocks",
                format!("{} unknowns cannot be split into {blocks} blocks", self.dim()),
            ));
        }
        self.blocks = blocks;
        Ok(self)
    }

    /// Runs `check_monotone` with the default tolerance and records the
    /// verdict; fails if the operator is not monotone.
    pub fn certify_monotone(mut self) -> Result<Self> {
        let verdict = check_monotone(&self, default_monotone_tol(&self));
        if !verdict.pass {
            return Err(Error::precondition(
                "operators::check_monotone",
                format!("{} is not monotone: lambda_min = {:e}", self.label, verdict.lambda_min),
            ));
        }
        self.monotone = true;
        Ok(self)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inner(&self) -> &InnerProduct {
        &self.inner
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_monotone(&self) -> bool {
        self.monotone
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.matrix * z
    }

    fn scaled(&self) -> DMatrix<f64> {
        let d = self.inner.sqrt_weights();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| d[i] * self.matrix[(i, j)] / d[j])
    }

    fn scaled_symmetric_part(&self) -> DMatrix<f64> {
        let s = self.scaled();
        (&s + s.transpose()) * 0.5
    }

    /// Operator norm induced by the weighted inner product.
    pub fn weighted_norm(&self) -> f64 {
        self.scaled()
            .singular_values()
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    }

    /// Max absolute row sum of the raw matrix.
    pub fn inf_norm(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Writes a coordinate-format dump: a comment line with the label, a
    /// `rows cols nnz` line, then one-based `row col value` triples.
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> Result<()> {
        let nnz = self.matrix.iter().filter(|v| **v != 0.0).count();
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "% {}", self.label)?;
        writeln!(out, "{} {} {}", self.dim(), self.dim(), nnz)?;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let v = self.matrix[(i, j)];
                if v != 0.0 {
                    writeln!(out, "{} {} {:e}", i + 1, j + 1, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn dump_matrix_market(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_matrix_market(std::io::BufWriter::new(file))
    }
}

/// Spatial layout of the heat equation with memory on (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatMemoryGeometry {
    /// Interior grid points N; h = 1/(N+1).
    pub n_points: usize,
    /// Memory decay β.
    pub beta: f64,
    /// Memory coupling η.
    pub eta_mem: f64,
    /// Control weight ε on the memory block.
    pub epsilon: f64,
}

impl Default for HeatMemoryGeometry {
    fn default() -> Self {
        Self {
            n_points: 63,
            beta: 1.0,
            eta_mem: 1.0,
            epsilon: 1.0,
        }
    }
}

impl HeatMemoryGeometry {
    pub fn new(n_points: usize, beta: f64, eta_mem: f64, epsilon: f64) -> Result<Self> {
        let g = Self {
            n_points,
            beta,
            eta_mem,
            epsilon,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "operators::HeatMemoryGeometry";
        if self.n_points < 2 {
            return Err(Error::precondition(OP, format!("need N >= 2, got {}", self.n_points)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::precondition(OP, format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.eta_mem.is_finite() && self.eta_mem > 0.0) {
            return Err(Error::precondition(OP, format!("eta must be > 0, got {}", self.eta_mem)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::precondition(OP, format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n_points as f64 + 1.0)
    }

    /// Interior nodes x_j = j·h, j = 1..N.
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.h();
        (1..=self.n_points).map(|j| j as f64 * h).collect()
    }

    pub fn inner_product(&self) -> Result<InnerProduct> {
        InnerProduct::heat_memory(self.n_points, self.eta_mem, self.h())
    }
}

fn laplacian_matrix(n: usize) -> DMatrix<f64> {
    let h = 1.0 / (n as f64 + 1.0);
    let c = 1.0 / (h * h);
    DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0 * c,
        1 => -c,
        _ => 0.0,
    })
}

/// (1/h²)·tridiag(−1, 2, −1): the discrete −∂ₓₓ with homogeneous Dirichlet
/// conditions on N interior nodes.
pub fn build_dirichlet_laplacian(n: usize) -> Result<DiscreteOperator> {
    if n < 2 {
        return Err(Error::precondition(
            "operators::build_dirichlet_laplacian",
            format!("need N >= 2, got {n}"),
        ));
    }
    let h = 1.0 / (n as f64 + 1.0);
    DiscreteOperator::new(laplacian_matrix(n), InnerProduct::uniform(n, h)?, "dirichlet_laplacian")?
        .certify_monotone()
}

/// The 2N×2N memory operator [[L, I], [−η·I, β·I]] acting on [v; w].
pub fn build_memory_operator(geom: &HeatMemoryGeometry) -> Result<DiscreteOperator> {
    geom.validate()?;
    let n = geom.n_points;
    let lap = laplacian_matrix(n);
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&lap);
    for j in 0..n {
        m[(j, n + j)] = 1.0;
        m[(n + j, j)] = -geom.eta_mem;
        m[(n + j, n + j)] = geom.beta;
    }
    DiscreteOperator::new(m, geom.inner_product()?, "memory_operator")?
        .with_blocks(2)?
        .certify_monotone()
}

/// B_ε = diag(I, ε·I).
pub fn build_b_epsilon(geom: &HeatMemoryGeometry) -> Result<DiscreteOperator> {
    geom.validate()?;
    let n = geom.n_points;
    let diag = DVector::from_iterator(
        2 * n,
        (0..2 * n).map(|k| if k < n { 1.0 } else { geom.epsilon }),
    );
    DiscreteOperator::new(DMatrix::from_diagonal(&diag), geom.inner_product()?, "b_epsilon")?
        .with_blocks(2)?
        .certify_monotone()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneVerdict {
    pub pass: bool,
    pub lambda_min: f64,
    pub tol: f64,
    /// Unit-norm (weighted) eigenvector of the most negative direction, when failing.
    pub witness: Option<Vec<f64>>,
}

/// Default tolerance for `check_monotone`: 10⁻¹⁰ times the matrix ∞-norm.
pub fn default_monotone_tol(op: &DiscreteOperator) -> f64 {
    1e-10 * op.inf_norm().max(1.0)
}

fn smallest_eigenpair(sym: DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(sym);
    let (k, lambda) = eig
        .eigenvalues
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (k, v)| if v < best.1 { (k, v) } else { best });
    (lambda, eig.eigenvectors.column(k).into_owned())
}

/// Tests ⟨M z, z⟩_w ≥ −tol·‖z‖²_w via the smallest eigenvalue of the
/// symmetric part in the weighted product.
pub fn check_monotone(op: &DiscreteOperator, tol: f64) -> MonotoneVerdict {
    let (lambda_min, y) = smallest_eigenpair(op.scaled_symmetric_part());
    let pass = lambda_min >= -tol;
    let witness = (!pass).then(|| {
        // back to original coordinates: z = D⁻¹ y has unit weighted norm
        let d = op.inner.sqrt_weights();
        y.iter().zip(d.iter()).map(|(yi, di)| yi / di).collect()
    });
    MonotoneVerdict {
        pass,
        lambda_min,
        tol,
        witness,
    }
}

/// Largest β with ⟨B z, z⟩_w ≥ β‖z‖²_w (clamped at zero).
pub fn coercivity_constant(op: &DiscreteOperator) -> f64 {
    smallest_eigenpair(op.scaled_symmetric_part()).0.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn laplacian_n3_spectrum() {
        let op = build_dirichlet_laplacian(3).unwrap();
        let h = 0.25;
        let mut eig: Vec<f64> = SymmetricEigen::new(op.matrix().clone()).eigenvalues.iter().cloned().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (k, lam) in eig.iter().enumerate() {
            let exact = 2.0 / (h * h) * (1.0 - ((k + 1) as f64 * PI / 4.0).cos());
            assert_relative_eq!(*lam, exact, max_relative = 1e-12);
        }
        assert!(op.is_monotone());
    }

    #[test]
    fn laplacian_rejects_small_grid() {
        assert!(build_dirichlet_laplacian(1).is_err());
    }

    #[test]
    fn zero_maps_to_zero() {
        let g = HeatMemoryGeometry::new(5, 0.7, 1.3, 0.4).unwrap();
        let a = build_memory_operator(&g).unwrap();
        assert_eq!(a.apply(&DVector::zeros(10)), DVector::zeros(10));
        let l = build_dirichlet_laplacian(4).unwrap();
        assert_eq!(l.apply(&DVector::zeros(4)), DVector::zeros(4));
    }

    #[test]
    fn memory_operator_without_decay_is_not_coercive() {
        let g = HeatMemoryGeometry::new(6, 0.0, 1.0, 1.0).unwrap();
        let a = build_memory_operator(&g).unwrap();
        let mut z = DVector::zeros(12);
        for k in 6..12 {
            z[k] = (k as f64).sin();
        }
        assert!(a.inner().dot(&a.apply(&z), &z).abs() < 1e-14);
        assert!(a.is_monotone());
    }

    #[test]
    fn negative_identity_fails_with_witness() {
        let inner = InnerProduct::uniform(4, 0.5).unwrap();
        let op = DiscreteOperator::new(-DMatrix::identity(4, 4), inner, "neg").unwrap();
        let v = check_monotone(&op, 1e-10);
        assert!(!v.pass);
        assert_relative_eq!(v.lambda_min, -1.0, max_relative = 1e-14);
        let w = DVector::from_vec(v.witness.unwrap());
        assert_relative_eq!(op.inner().norm(&w), 1.0, max_relative = 1e-12);
        assert!(op.clone().certify_monotone().is_err());
    }

    #[test]
    fn coercivity_of_b_epsilon() {
        for eps in [0.1, 0.5, 1.0, 2.0, 10.0] {
            let g = HeatMemoryGeometry::new(7, 1.0, 0.8, eps).unwrap();
            let b = build_b_epsilon(&g).unwrap();
            assert!((coercivity_constant(&b) - eps.min(1.0)).abs() <= 1e-10);
        }
        let id = DiscreteOperator::identity(InnerProduct::uniform(3, 1.0).unwrap());
        assert_eq!(coercivity_constant(&id), 1.0);
    }

    #[test]
    fn geometry_validation() {
        assert!(HeatMemoryGeometry::new(1, 1.0, 1.0, 1.0).is_err());
        assert!(HeatMemoryGeometry::new(4, -0.1, 1.0, 1.0).is_err());
        assert!(HeatMemoryGeometry::new(4, 0.0, 0.0, 1.0).is_err());
        assert!(HeatMemoryGeometry::new(4, 0.0, 1.0, 0.0).is_err());
        let g = HeatMemoryGeometry::new(9, 0.0, 1.0, 1.0).unwrap();
        assert!((g.h() * 10.0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn operator_dimension_checks() {
        let inner = InnerProduct::uniform(3, 1.0).unwrap();
        assert!(DiscreteOperator::new(DMatrix::zeros(2, 3), inner.clone(), "x").is_err());
        assert!(DiscreteOperator::new(DMatrix::zeros(2, 2), inner, "x").is_err());
        assert!(InnerProduct::new(vec![1.0, 0.0], 1.0).is_err());
        assert!(InnerProduct::new(vec![1.0], -1.0).is_err());
    }

    #[test]
    fn matrix_market_dump() {
        let op = build_dirichlet_laplacian(3).unwrap();
        let mut buf = Vec::new();
        op.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[2], "3 3 7");
        assert_eq!(lines.len(), 3 + 7);
        assert!(lines[3].starts_with("1 1 3.2e1"));
    }
}
