//! Lifted-model construction and the SVD-based unitary transformation.
//!
//! For `A = U Λ V` the transformed model is `r = U^H y = Φ x + ω` with
//! `Φ = U^H A = Λ V`, so `Φ Φ^H` is diagonal with diagonal
//! `λ = Λ Λ^H 1`. The factorization is obtained from the Hermitian
//! eigendecomposition of `A A^H`, which yields the square unitary `U` and
//! `λ` directly for wide and tall `A` alike and never forms `V`.
//!
//! Everything here is generic over real and complex scalars; the solvers
//! operate on the `f64` instantiation.

use nalgebra::{ComplexField, DMatrix, DVector};

use crate::error::{Error, Result};

/// The horizontally concatenated model `A = [A_1, ..., A_K]`.
#[derive(Clone, Debug)]
pub struct LiftedModel<T: ComplexField> {
    pub blocks: Vec<DMatrix<T>>,
    pub a: DMatrix<T>,
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

/// The unitarily transformed problem consumed by the solvers.
#[derive(Clone, Debug)]
pub struct TransformedModel<T: ComplexField<RealField = f64>> {
    /// Transformed observation `U^H y`, M×L (L = 1 for a single vector).
    pub r: DMatrix<T>,
    /// `Φ = U^H A`, M×NK.
    pub phi: DMatrix<T>,
    /// Column blocks `Φ_k`, each M×N.
    pub phi_blocks: Vec<DMatrix<T>>,
    /// `φ_k = |Φ_k|² 1_N` for each block.
    pub phi_k: Vec<DVector<f64>>,
    /// Row energies `λ = Σ_k φ_k = diag(Φ Φ^H)`.
    pub lambda: DVector<f64>,
    /// The unitary factor, kept for diagnostics and invariant checks.
    pub u: DMatrix<T>,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    /// Generative noise precision when the caller knows it.
    pub beta_true: Option<f64>,
}

/// Concatenates `K ≥ 1` equally sized blocks into a lifted model.
pub fn build_lifted<T: ComplexField>(blocks: Vec<DMatrix<T>>) -> Result<LiftedModel<T>> {
    if blocks.is_empty() {
        return Err(Error::Dimension("need at least one block".into()));
    }
    let (m, n) = (blocks[0].nrows(), blocks[0].ncols());
    if m == 0 || n == 0 {
        return Err(Error::Dimension("blocks must be non-empty matrices".into()));
    }
    for (k, b) in blocks.iter().enumerate() {
        if b.nrows() != m || b.ncols() != n {
            return Err(Error::Dimension(format!(
                "block {k} is {}x{}, expected {m}x{n}",
                b.nrows(),
                b.ncols()
            )));
        }
    }
    let k = blocks.len();
    let mut a = DMatrix::zeros(m, n * k);
    for (i, b) in blocks.iter().enumerate() {
        a.view_mut((0, i * n), (m, n)).copy_from(b);
    }
    Ok(LiftedModel { blocks, a, m, n, k })
}

fn all_finite<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> bool {
    m.iter().all(|v| v.clone().modulus_squared().is_finite())
}

/// Transforms `(A, y)` into `(r, Φ)` with `r = U^H y`, `Φ = U^H A`.
///
/// `U` comes from the eigendecomposition of `A A^H`, sorted by descending
/// eigenvalue with eigenvector phases canonicalized so the output is
/// deterministic. `y` may have any number of columns (MMV).
pub fn unitary_transform<T: ComplexField<RealField = f64>>(
    model: &LiftedModel<T>,
    y: &DMatrix<T>,
) -> Result<TransformedModel<T>> {
    if y.nrows() != model.m {
        return Err(Error::Dimension(format!(
            "y has {} rows, expected {}",
            y.nrows(),
            model.m
        )));
    }
    if !all_finite(&model.a) || !all_finite(y) {
        return Err(Error::Numeric("non-finite entries in A or y".into()));
    }

    let m = model.m;
    let gram = &model.a * model.a.adjoint();
    // Hermitian symmetrization guards against rounding in the product.
    let gram = (&gram + gram.adjoint()).scale(0.5);
    let eig = gram.symmetric_eigen();

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("finite eigenvalues")
    });

    let mut u = DMatrix::<T>::zeros(m, m);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        // Rotate each eigenvector so its largest entry is positive real.
        let mut imax = 0;
        let mut best = -1.0;
        for (i, v) in col.iter().enumerate() {
            let mag = v.clone().modulus_squared();
            if mag > best {
                best = mag;
                imax = i;
            }
        }
        let pivot = col[imax].clone();
        let mag = pivot.clone().modulus();
        if mag > 0.0 {
            let phase = pivot.conjugate().unscale(mag);
            col *= phase;
        }
        u.set_column(dst, &col);
    }

    let r = u.adjoint() * y;
    let phi = u.adjoint() * &model.a;

    let (n, k) = (model.n, model.k);
    let mut phi_blocks = Vec::with_capacity(k);
    let mut phi_k = Vec::with_capacity(k);
    let mut lambda = DVector::zeros(m);
    for i in 0..k {
        let block = phi.view((0, i * n), (m, n)).clone_owned();
        let mut energy = DVector::zeros(m);
        for row in 0..m {
            let mut acc = 0.0;
            for col in 0..n {
                acc += block[(row, col)].clone().modulus_squared();
            }
            energy[row] = acc;
        }
        lambda += &energy;
        phi_blocks.push(block);
        phi_k.push(energy);
    }

    Ok(TransformedModel {
        r,
        phi,
        phi_blocks,
        phi_k,
        lambda,
        u,
        m,
        n,
        k,
        l: y.ncols(),
        beta_true: None,
    })
}

/// Single-measurement-vector convenience wrapper.
pub fn unitary_transform_vec<T: ComplexField<RealField = f64>>(
    model: &LiftedModel<T>,
    y: &DVector<T>,
) -> Result<TransformedModel<T>> {
    let y = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    unitary_transform(model, &y)
}

impl<T: ComplexField<RealField = f64>> TransformedModel<T> {
    /// The transformed observation as a vector (first column).
    pub fn r_vec(&self) -> DVector<T> {
        self.r.column(0).clone_owned()
    }

    pub fn with_beta_true(mut self, beta: Option<f64>) -> Self {
        self.beta_true = beta;
        self
    }
}
