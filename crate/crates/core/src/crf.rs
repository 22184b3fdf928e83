//! Exact continuous-CRF mathematics over a superpixel graph.
//!
//! The energy of a depth assignment `y` given unary regressions `z` is
//!
//! ```text
//! E(y) = Σ_p (y_p − z_p)² + Σ_(p,q) ½ R_pq (y_p − y_q)²,    R_pq = Σ_k β_k S⁽ᵏ⁾_pq
//! ```
//!
//! where the pairwise sum runs over ordered pairs, so an undirected edge
//! contributes `R_pq (y_p − y_q)²` in total. With `A = I + D − R`
//! (`D_pp = Σ_q R_pq`) the energy is the quadratic `yᵀAy − 2zᵀy + zᵀz`, the
//! partition function is a Gaussian integral and the conditional density is
//! `N(A⁻¹z, ½A⁻¹)`. Everything here is closed form: no sampling and no
//! iterative solvers.

use thiserror::Error;

use crate::linalg::{dot, Cholesky, Matrix, SelectedInverse};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrfError {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("instance carries no ground-truth depths")]
    MissingGroundTruth,
    #[error("precision matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("pairwise weight {index} is negative or not finite ({value})")]
    InvalidWeight { index: usize, value: f64 },
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

pub type Result<T, E = CrfError> = std::result::Result<T, E>;

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(CrfError::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

/// One image's graph.
///
/// Similarities are stored per undirected edge (`p < q`), edge-major with `K`
/// values per edge. The dense `K` matrices `S⁽ᵏ⁾` are recovered with
/// [`CrfInstance::similarity_matrix`]; by construction they are symmetric,
/// have a zero diagonal, and vanish off the edge set.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfInstance<T> {
    n: usize,
    k: usize,
    edges: Vec<(usize, usize)>,
    similarity: Vec<T>,
    z: Vec<T>,
    y: Option<Vec<T>>,
}

impl<T: Scalar> CrfInstance<T> {
    /// Validates and builds an instance. Edges may be given in either
    /// orientation; they are normalized to `p < q`.
    pub fn new(
        n: usize,
        k: usize,
        edges: Vec<(usize, usize)>,
        similarity: Vec<T>,
        z: Vec<T>,
        y: Option<Vec<T>>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(CrfError::InvalidInstance("graph has no nodes".into()));
        }
        check_len("similarity values", edges.len() * k, similarity.len())?;
        check_len("unary outputs", n, z.len())?;
        if let Some(y) = &y {
            check_len("ground-truth depths", n, y.len())?;
        }
        let mut norm = Vec::with_capacity(edges.len());
        for &(p, q) in &edges {
            if p >= n || q >= n {
                return Err(CrfError::InvalidInstance(format!(
                    "edge ({p}, {q}) out of range for {n} nodes"
                )));
            }
            if p == q {
                return Err(CrfError::InvalidInstance(format!("self edge at {p}")));
            }
            norm.push((p.min(q), p.max(q)));
        }
        let mut seen = norm.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != norm.len() {
            return Err(CrfError::InvalidInstance("duplicate edge".into()));
        }
        if let Some(bad) = similarity
            .iter()
            .find(|s| !(**s >= T::zero() && **s <= T::one()))
        {
            return Err(CrfError::InvalidInstance(format!(
                "similarity {bad} outside [0, 1]"
            )));
        }
        if z.iter().chain(y.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(CrfError::InvalidInstance("non-finite depth".into()));
        }
        Ok(Self {
            n,
            k,
            edges: norm,
            similarity,
            z,
            y,
        })
    }

    /// Builds an instance from dense similarity matrices, checking the
    /// symmetry, zero-diagonal and edge-support invariants.
    pub fn from_dense(
        similarities: &[Matrix<T>],
        edges: Vec<(usize, usize)>,
        z: Vec<T>,
        y: Option<Vec<T>>,
    ) -> Result<Self> {
        let n = z.len();
        let k = similarities.len();
        let mut on_edge = vec![false; n * n];
        for &(p, q) in &edges {
            if p < n && q < n {
                on_edge[p * n + q] = true;
                on_edge[q * n + p] = true;
            }
        }
        for s in similarities {
            check_len("similarity matrix rows", n, s.rows())?;
            check_len("similarity matrix cols", n, s.cols())?;
            for p in 0..n {
                for q in 0..n {
                    let v = s[(p, q)];
                    if v != s[(q, p)] {
                        return Err(CrfError::NotSymmetric);
                    }
                    if !on_edge[p * n + q] && v != T::zero() {
                        return Err(CrfError::InvalidInstance(format!(
                            "similarity at ({p}, {q}) is off the edge set"
                        )));
                    }
                }
            }
        }
        let mut flat = Vec::with_capacity(edges.len() * k);
        for &(p, q) in &edges {
            flat.extend(similarities.iter().map(|s| s[(p, q)]));
        }
        Self::new(n, k, edges, flat, z, y)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Depth of the similarity stack.
    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn z(&self) -> &[T] {
        &self.z
    }

    pub fn y(&self) -> Option<&[T]> {
        self.y.as_deref()
    }

    /// The `K` similarity values of edge `e`.
    #[inline]
    pub fn edge_similarities(&self, e: usize) -> &[T] {
        &self.similarity[e * self.k..(e + 1) * self.k]
    }

    pub fn similarity_matrix(&self, k: usize) -> Matrix<T> {
        assert!(k < self.k);
        let mut s = Matrix::zeros(self.n, self.n);
        for (e, &(p, q)) in self.edges.iter().enumerate() {
            let v = self.edge_similarities(e)[k];
            s[(p, q)] = v;
            s[(q, p)] = v;
        }
        s
    }

    pub fn with_z(mut self, z: Vec<T>) -> Result<Self> {
        check_len("unary outputs", self.n, z.len())?;
        self.z = z;
        Ok(self)
    }

    pub fn with_y(mut self, y: Option<Vec<T>>) -> Result<Self> {
        if let Some(y) = &y {
            check_len("ground-truth depths", self.n, y.len())?;
        }
        self.y = y;
        Ok(self)
    }

    /// Relabels nodes: node `p` of `self` becomes node `perm[p]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_len("permutation", self.n, perm.len())?;
        let scatter = |v: &[T]| {
            let mut out = vec![T::zero(); v.len()];
            for (p, &x) in v.iter().enumerate() {
                out[perm[p]] = x;
            }
            out
        };
        let edges = self
            .edges
            .iter()
            .map(|&(p, q)| (perm[p], perm[q]))
            .collect();
        Self::new(
            self.n,
            self.k,
            edges,
            self.similarity.clone(),
            scatter(&self.z),
            self.y.as_deref().map(scatter),
        )
    }

    fn ground_truth(&self) -> Result<&[T]> {
        self.y.as_deref().ok_or(CrfError::MissingGroundTruth)
    }

    /// Per-edge coupling `R_e = Σ_k β_k S⁽ᵏ⁾_e`.
    fn edge_couplings(&self, weights: &PairwiseWeights<T>) -> Result<Vec<T>> {
        check_len("pairwise weights", self.k, weights.len())?;
        Ok((0..self.edges.len())
            .map(|e| dot(self.edge_similarities(e), weights.as_slice()))
            .collect())
    }
}

/// Nonnegative pairwise coefficients `β`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseWeights<T> {
    beta: Vec<T>,
}

impl<T: Scalar> PairwiseWeights<T> {
    pub fn new(beta: Vec<T>) -> Result<Self> {
        if let Some((index, v)) = beta
            .iter()
            .enumerate()
            .find(|(_, b)| !(**b >= T::zero()) || !b.is_finite())
        {
            return Err(CrfError::InvalidWeight {
                index,
                value: v.to_f64_lossy(),
            });
        }
        Ok(Self { beta })
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            beta: vec![T::zero(); k],
        }
    }

    /// Projects arbitrary values onto the nonnegative orthant.
    pub fn projected(values: &[T]) -> Self {
        Self {
            beta: values.iter().map(|&b| b.max(T::zero())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.beta
    }
}

/// `A = I + D − R` together with its Cholesky factor and log-determinant.
#[derive(Clone, Debug)]
pub struct PrecisionStructure<T> {
    a: Matrix<T>,
    chol: Cholesky<T>,
    logdet: T,
}

impl<T: Scalar> PrecisionStructure<T> {
    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn cholesky(&self) -> &Cholesky<T> {
        &self.chol
    }

    pub fn log_det(&self) -> T {
        self.logdet
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.chol.solve(b)
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }
}

/// Dense `R` with `R_pq = Σ_k β_k S⁽ᵏ⁾_pq`.
pub fn build_r<T: Scalar>(
    instance: &CrfInstance<T>,
    weights: &PairwiseWeights<T>,
) -> Result<Matrix<T>> {
    let couplings = instance.edge_couplings(weights)?;
    let mut r = Matrix::zeros(instance.n, instance.n);
    for (&(p, q), &c) in instance.edges.iter().zip(&couplings) {
        r[(p, q)] = c;
        r[(q, p)] = c;
    }
    Ok(r)
}

/// Forms `A = I + D − R` and factorizes it.
///
/// Nonnegativity of `R` is not checked here: a coupling matrix that breaks
/// positive definiteness surfaces as [`CrfError::NotPositiveDefinite`].
pub fn build_precision<T: Scalar>(r: &Matrix<T>) -> Result<PrecisionStructure<T>> {
    if !r.is_square() {
        return Err(CrfError::DimensionMismatch {
            what: "coupling matrix columns",
            expected: r.rows(),
            found: r.cols(),
        });
    }
    if !r.is_symmetric(T::zero()) {
        return Err(CrfError::NotSymmetric);
    }
    let n = r.rows();
    let mut a = Matrix::zeros(n, n);
    for p in 0..n {
        let mut degree = T::zero();
        for q in 0..n {
            if q != p {
                degree = degree + r[(p, q)];
                a[(p, q)] = -r[(p, q)];
            }
        }
        a[(p, p)] = T::one() + degree;
    }
    precision_from_a(a)
}

fn precision_from_a<T: Scalar>(a: Matrix<T>) -> Result<PrecisionStructure<T>> {
    let chol =
        Cholesky::factor(&a).map_err(|e| CrfError::NotPositiveDefinite { pivot: e.pivot })?;
    let logdet = chol.log_det();
    Ok(PrecisionStructure { a, chol, logdet })
}

/// Leftmost neighbour of each node at or below the diagonal. Structural, so
/// edges with zero coupling still lie inside the factor's profile.
fn edge_profile(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut first: Vec<usize> = (0..n).collect();
    for &(p, q) in edges {
        first[q] = first[q].min(p);
    }
    first
}

/// Builds the precision directly from the edge list, skipping the dense `R`.
fn precision_from_couplings<T: Scalar>(
    n: usize,
    edges: &[(usize, usize)],
    couplings: &[T],
) -> Result<PrecisionStructure<T>> {
    let mut a = Matrix::identity(n);
    for (&(p, q), &c) in edges.iter().zip(couplings) {
        a[(p, p)] = a[(p, p)] + c;
        a[(q, q)] = a[(q, q)] + c;
        a[(p, q)] = a[(p, q)] - c;
        a[(q, p)] = a[(q, p)] - c;
    }
    let chol = Cholesky::factor_with_profile(&a, edge_profile(n, edges))
        .map_err(|e| CrfError::NotPositiveDefinite { pivot: e.pivot })?;
    let logdet = chol.log_det();
    Ok(PrecisionStructure { a, chol, logdet })
}

pub fn precision<T: Scalar>(
    instance: &CrfInstance<T>,
    weights: &PairwiseWeights<T>,
) -> Result<PrecisionStructure<T>> {
    let couplings = instance.edge_couplings(weights)?;
    precision_from_couplings(instance.n, &instance.edges, &couplings)
}

/// Energy by direct summation of the unary and pairwise potentials.
pub fn energy<T: Scalar>(
    instance: &CrfInstance<T>,
    weights: &PairwiseWeights<T>,
    y: &[T],
) -> Result<T> {
    check_len("depth vector", instance.n, y.len())?;
    let couplings = instance.edge_couplings(weights)?;
    let unary: T = y
        .iter()
        .zip(&instance.z)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    let half = T::lit(0.5);
    // Both orientations of every edge, each with the ½ factor.
    let pairwise: T = instance
        .edges
        .iter()
        .zip(&couplings)
        .map(|(&(p, q), &c)| {
            let d = y[p] - y[q];
            half * c * d * d + half * c * d * d
        })
        .sum();
    Ok(unary + pairwise)
}

/// Energy through the quadratic form `yᵀAy − 2zᵀy + zᵀz`.
pub fn energy_quadratic<T: Scalar>(
    instance: &CrfInstance<T>,
    weights: &PairwiseWeights<T>,
    y: &[T],
) -> Result<T> {
    check_len("depth vector", instance.n, y.len())?;
    let a = build_precision(&build_r(instance, weights)?)?;
    let z = &instance.z;
    let two = T::lit(2.0);
    Ok(a.a.quad_form(y) - two * dot(z, y) + dot(z, z))
}

fn half_n_log_pi<T: Scalar>(n: usize) -> T {
    T::lit(0.5 * n as f64 * std::f64::consts::PI.ln())
}

/// `log Z = (n/2) log π − ½ log|A| + zᵀA⁻¹z − zᵀz`.
pub fn log_partition<T: Scalar>(
    instance: &CrfInstance<T>,
    weights: &PairwiseWeights<T>,
) -> Result<T> {
    let prec = precision(instance, weights)?;
    Ok(log_partition_with(instance, &prec))
}

fn log_partition_with<T: Scalar>(instance: &CrfInstance<T>, prec: &PrecisionStructure<T>) -> T {
    let z = &instance.z;
    let mean = prec.solve(z);
    half_n_log_pi::<T>(instance.n) - T::lit(0.5) * prec.logdet + dot(z, &mean) - dot(z, z)
}

/// Negative log-likelihood of the instance's ground truth,
/// `yᵀAy − 2zᵀy + zᵀA⁻¹z − ½ log|A| + (n/2) log π`.
pub fn nll<T: Scalar>(instance: &CrfInstance<T>, weights: &PairwiseWeights<T>) -> Result<T> {
    let y = instance.ground_truth()?;
    let prec = precision(instance, weights)?;
    Ok(nll_with(instance, &prec, y, &prec.solve(&instance.z)))
}

fn nll_with<T: Scalar>(
    instance: &CrfInstance<T>,
    prec: &PrecisionStructure<T>,
    y: &[T],
    mean: &[T],
) -> T {
    let z = &instance.z;
    prec.a.quad_form(y) - T::lit(2.0) * dot(z, y) + dot(z, mean) - T::lit(0.5) * prec.logdet
        + half_n_log_pi::<T>(instance.n)
}

/// `log Pr(y | x)` for an arbitrary depth vector `y`.
pub fn log_density<T: Scalar>(
    instance: &CrfInstance<T>,
    weights: &PairwiseWeights<T>,
    y: &[T],
) -> Result<T> {
    Ok(-energy(instance, weights, y)? - log_partition(instance, weights)?)
}

/// MAP depths `y* = A⁻¹z`.
pub fn map_infer<T: Scalar>(
    instance: &CrfInstance<T>,
    weights: &PairwiseWeights<T>,
) -> Result<Vec<T>> {
    Ok(precision(instance, weights)?.solve(&instance.z))
}

/// Residual factor `2(A⁻¹z − y)`; the unary chain rule is
/// `∂NLL/∂θ_l = grad_zᵀ ∂z/∂θ_l`.
pub fn grad_z<T: Scalar>(
    instance: &CrfInstance<T>,
    weights: &PairwiseWeights<T>,
) -> Result<Vec<T>> {
    let y = instance.ground_truth()?;
    let mean = map_infer(instance, weights)?;
    Ok(residual(&mean, y))
}

fn residual<T: Scalar>(mean: &[T], y: &[T]) -> Vec<T> {
    let two = T::lit(2.0);
    mean.iter().zip(y).map(|(&m, &t)| two * (m - t)).collect()
}

/// `∂NLL/∂β_k = yᵀJy − zᵀA⁻¹JA⁻¹z − ½ Tr(A⁻¹J)` with `J = ∂A/∂β_k`, the
/// graph Laplacian of `S⁽ᵏ⁾`.
pub fn grad_beta<T: Scalar>(
    instance: &CrfInstance<T>,
    weights: &PairwiseWeights<T>,
) -> Result<Vec<T>> {
    Ok(nll_and_gradients(instance, weights)?.grad_beta)
}

/// Everything a training step needs from one factorization.
#[derive(Clone, Debug)]
pub struct NllGradients<T> {
    pub nll: T,
    /// `A⁻¹z`.
    pub map: Vec<T>,
    pub grad_z: Vec<T>,
    pub grad_beta: Vec<T>,
}

pub fn nll_and_gradients<T: Scalar>(
    instance: &CrfInstance<T>,
    weights: &PairwiseWeights<T>,
) -> Result<NllGradients<T>> {
    let y = instance.ground_truth()?;
    let prec = precision(instance, weights)?;
    let mean = prec.solve(&instance.z);
    let nll = nll_with(instance, &prec, y, &mean);
    let grad_z = residual(&mean, y);

    let k = instance.k;
    let mut grad_beta = vec![T::zero(); k];
    if !instance.edges.is_empty() && k > 0 {
        // For a Laplacian J, vᵀJv = Σ_e S_e (v_p − v_q)² and
        // Tr(A⁻¹J) = Σ_e S_e (A⁻¹_pp + A⁻¹_qq − 2A⁻¹_pq).
        let inv = SelectedInverse::new(&prec.chol);
        let entry = |p, q| inv.get(p, q).expect("edges lie inside the factor profile");
        let diag: Vec<T> = (0..instance.n).map(|p| entry(p, p)).collect();
        let half = T::lit(0.5);
        for (e, &(p, q)) in instance.edges.iter().enumerate() {
            let dy = y[p] - y[q];
            let dm = mean[p] - mean[q];
            let tr = diag[p] + diag[q] - T::lit(2.0) * entry(p, q);
            let factor = dy * dy - dm * dm - half * tr;
            for (g, &s) in grad_beta.iter_mut().zip(instance.edge_similarities(e)) {
                *g = *g + s * factor;
            }
        }
    }
    Ok(NllGradients {
        nll,
        map: mean,
        grad_z,
        grad_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(
        r12: f64,
        z: [f64; 2],
        y: Option<[f64; 2]>,
    ) -> (CrfInstance<f64>, PairwiseWeights<f64>) {
        let inst = CrfInstance::new(
            2,
            1,
            vec![(0, 1)],
            vec![r12.min(1.0)],
            z.to_vec(),
            y.map(|v| v.to_vec()),
        )
        .unwrap();
        let scale = if r12 > 1.0 { r12 } else { 1.0 };
        (inst, PairwiseWeights::new(vec![scale]).unwrap())
    }

    #[test]
    fn build_r_zero_weights() {
        let (inst, _) = pair(0.7, [0.0, 0.0], None);
        let r = build_r(&inst, &PairwiseWeights::zeros(1)).unwrap();
        assert_eq!(r, Matrix::zeros(2, 2));
    }

    #[test]
    fn build_r_weighted_sum() {
        let inst = CrfInstance::<f64>::new(2, 2, vec![(0, 1)], vec![0.3, 0.1], vec![0.0; 2], None)
            .unwrap();
        let r = build_r(&inst, &PairwiseWeights::new(vec![1.0, 2.0]).unwrap()).unwrap();
        assert!((r[(0, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(r[(0, 1)], r[(1, 0)]);
        assert_eq!(r[(0, 0)], 0.0);
    }

    #[test]
    fn build_r_rejects_wrong_k() {
        let (inst, _) = pair(0.5, [0.0, 0.0], None);
        let err = build_r(&inst, &PairwiseWeights::zeros(3)).unwrap_err();
        assert!(matches!(err, CrfError::DimensionMismatch { .. }));
    }

    #[test]
    fn precision_identity_and_pair() {
        let p = build_precision(&Matrix::<f64>::zeros(3, 3)).unwrap();
        assert_eq!(p.a(), &Matrix::identity(3));
        assert_eq!(p.log_det(), 0.0);

        let mut r = Matrix::zeros(2, 2);
        r[(0, 1)] = 0.5;
        r[(1, 0)] = 0.5;
        let p = build_precision(&r).unwrap();
        assert_eq!(
            p.a(),
            &Matrix::from_rows(&[vec![1.5, -0.5], vec![-0.5, 1.5]])
        );
        assert!((p.log_det() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn precision_rejects_negative_coupling() {
        let mut r = Matrix::zeros(2, 2);
        r[(0, 1)] = -5.0;
        r[(1, 0)] = -5.0;
        assert!(matches!(
            build_precision(&r),
            Err(CrfError::NotPositiveDefinite { .. })
        ));
        r[(1, 0)] = 1.0;
        assert_eq!(build_precision(&r).unwrap_err(), CrfError::NotSymmetric);
    }

    #[test]
    fn energy_ordered_pair_convention() {
        let (inst, w) = pair(1.0, [0.0, 0.0], None);
        let e = energy(&inst, &w, &[1.0, 0.0]).unwrap();
        assert!((e - 2.0).abs() < 1e-15);
        let q = energy_quadratic(&inst, &w, &[1.0, 0.0]).unwrap();
        assert!((q - 2.0).abs() < 1e-15);
    }

    #[test]
    fn energy_zero_at_unary_without_coupling() {
        let (inst, _) = pair(0.4, [0.3, -0.2], None);
        let e = energy(&inst, &PairwiseWeights::zeros(1), &[0.3, -0.2]).unwrap();
        assert_eq!(e, 0.0);
        assert!(energy(&inst, &PairwiseWeights::zeros(1), &[0.0]).is_err());
    }

    #[test]
    fn log_partition_single_node() {
        let inst = CrfInstance::new(1, 1, vec![], vec![], vec![0.0], None).unwrap();
        let lz = log_partition(&inst, &PairwiseWeights::zeros(1)).unwrap();
        assert!((lz - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-15);
        assert!((lz - 0.572_364_9).abs() < 1e-7);
    }

    #[test]
    fn log_partition_zero_z() {
        let (inst, w) = pair(0.5, [0.0, 0.0], None);
        let lz = log_partition(&inst, &w).unwrap();
        let expected = std::f64::consts::PI.ln() - 0.5 * 2f64.ln();
        assert!((lz - expected).abs() < 1e-14);
    }

    #[test]
    fn nll_single_node_at_truth() {
        let inst = CrfInstance::new(1, 1, vec![], vec![], vec![0.7], Some(vec![0.7])).unwrap();
        let v = nll(&inst, &PairwiseWeights::zeros(1)).unwrap();
        assert!((v - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-14);
    }

    #[test]
    fn nll_requires_ground_truth() {
        let (inst, w) = pair(0.5, [1.0, -1.0], None);
        assert_eq!(nll(&inst, &w).unwrap_err(), CrfError::MissingGroundTruth);
        assert_eq!(grad_z(&inst, &w).unwrap_err(), CrfError::MissingGroundTruth);
    }

    #[test]
    fn map_examples() {
        let (inst, w) = pair(0.5, [1.0, -1.0], None);
        let y = map_infer(&inst, &w).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-15 && (y[1] + 0.5).abs() < 1e-15);

        let y0 = map_infer(&inst, &PairwiseWeights::zeros(1)).unwrap();
        assert_eq!(y0, vec![1.0, -1.0]);

        let (strong, w) = pair(1e3, [1.0, -1.0], None);
        let y = map_infer(&strong, &w).unwrap();
        assert!((y[0] + y[1]).abs() < 1e-12);
        assert!(y[0].abs() < 1e-2);
    }

    #[test]
    fn grad_z_examples() {
        let inst = CrfInstance::new(1, 1, vec![], vec![], vec![2.0], Some(vec![1.0])).unwrap();
        assert_eq!(
            grad_z(&inst, &PairwiseWeights::zeros(1)).unwrap(),
            vec![2.0]
        );

        let (inst, w) = pair(0.5, [1.0, -1.0], Some([0.5, -0.5]));
        let g = grad_z(&inst, &w).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn grad_beta_vanishes_for_empty_similarity() {
        let inst = CrfInstance::new(
            3,
            2,
            vec![(0, 1), (1, 2)],
            vec![0.0, 0.4, 0.0, 0.9],
            vec![0.1, 0.5, -0.3],
            Some(vec![0.0, 1.0, 0.2]),
        )
        .unwrap();
        let g = grad_beta(&inst, &PairwiseWeights::new(vec![0.3, 0.2]).unwrap()).unwrap();
        assert_eq!(g[0], 0.0);
        assert_ne!(g[1], 0.0);
    }

    #[test]
    fn instance_validation() {
        assert!(CrfInstance::<f64>::new(0, 1, vec![], vec![], vec![], None).is_err());
        assert!(CrfInstance::new(2, 1, vec![(0, 0)], vec![0.5], vec![0.0; 2], None).is_err());
        assert!(CrfInstance::new(2, 1, vec![(0, 2)], vec![0.5], vec![0.0; 2], None).is_err());
        assert!(CrfInstance::new(2, 1, vec![(0, 1)], vec![1.5], vec![0.0; 2], None).is_err());
        assert!(CrfInstance::new(
            2,
            1,
            vec![(0, 1), (1, 0)],
            vec![0.5, 0.5],
            vec![0.0; 2],
            None
        )
        .is_err());
        assert!(PairwiseWeights::new(vec![0.0, -1e-9]).is_err());
        assert!(PairwiseWeights::new(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn dense_round_trip_checks_support() {
        let mut s = Matrix::zeros(3, 3);
        s[(0, 2)] = 0.25;
        s[(2, 0)] = 0.25;
        let inst = CrfInstance::from_dense(&[s.clone()], vec![(0, 2)], vec![0.0; 3], None).unwrap();
        assert_eq!(inst.similarity_matrix(0), s);
        assert!(CrfInstance::from_dense(&[s.clone()], vec![(0, 1)], vec![0.0; 3], None).is_err());
        s[(2, 0)] = 0.3;
        assert_eq!(
            CrfInstance::from_dense(&[s], vec![(0, 2)], vec![0.0; 3], None).unwrap_err(),
            CrfError::NotSymmetric
        );
    }

    #[test]
    fn single_precision_map() {
        let inst =
            CrfInstance::new(2, 1, vec![(0, 1)], vec![0.5f32], vec![1.0, -1.0], None).unwrap();
        let y = map_infer(&inst, &PairwiseWeights::new(vec![1.0f32]).unwrap()).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-6);
    }
}
