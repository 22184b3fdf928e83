//! Brute-force reference computations for the closed-form CRF results.
//!
//! Nothing here goes through the Cholesky path in [`crate::crf`]: couplings,
//! precision matrices, inverses and determinants are rebuilt with plain
//! scalar loops and Gaussian elimination. The only shared piece is
//! [`crf::energy`], the direct sum of potentials.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::crf::{self, CrfError, CrfInstance, PairwiseWeights};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("{what} supports at most {max} nodes, got {n}")]
    TooManyNodes {
        what: &'static str,
        n: usize,
        max: usize,
    },
    #[error("need at least {min} Monte Carlo draws, got {got}")]
    TooFewDraws { min: usize, got: usize },
    #[error("invalid oracle setting: {0}")]
    InvalidSpec(String),
    #[error("reference elimination hit a singular matrix")]
    Singular,
    #[error(transparent)]
    Crf(#[from] CrfError),
}

pub type Result<T, E = OracleError> = std::result::Result<T, E>;

type Dense = Vec<Vec<f64>>;

/// `R_pq = Σ_k β_k S⁽ᵏ⁾_pq`, entry by entry.
pub fn coupling_matrix(instance: &CrfInstance<f64>, weights: &PairwiseWeights<f64>) -> Dense {
    let n = instance.n();
    let mut r = vec![vec![0.0; n]; n];
    for k in 0..instance.k() {
        let s = instance.similarity_matrix(k);
        for p in 0..n {
            for q in 0..n {
                r[p][q] += weights.as_slice()[k] * s[(p, q)];
            }
        }
    }
    r
}

/// `I + D − R` from an explicit coupling matrix.
pub fn precision_matrix(r: &Dense) -> Dense {
    let n = r.len();
    let mut a = vec![vec![0.0; n]; n];
    for p in 0..n {
        let mut degree = 0.0;
        for q in 0..n {
            degree += r[p][q];
            a[p][q] = -r[p][q];
        }
        a[p][p] += 1.0 + degree;
    }
    a
}

/// Determinant by LU elimination with partial pivoting.
pub fn lu_determinant(a: &Dense) -> f64 {
    let n = a.len();
    let mut m = a.clone();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            m.swap(piv, col);
            det = -det;
        }
        det *= m[col][col];
        for row in (col + 1)..n {
            let f = m[row][col] / m[col][col];
            for c in col..n {
                m[row][c] -= f * m[col][c];
            }
        }
    }
    det
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &Dense) -> Result<Dense> {
    let n = a.len();
    let mut m: Dense = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[piv][col].abs() < 1e-300 {
            return Err(OracleError::Singular);
        }
        m.swap(piv, col);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[row][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    Ok(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

fn mat_vec(a: &Dense, v: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

fn dotf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Posterior mean `A⁻¹z` and covariance `½A⁻¹` by elimination.
pub fn gaussian_moments(
    instance: &CrfInstance<f64>,
    weights: &PairwiseWeights<f64>,
) -> Result<(Vec<f64>, Dense)> {
    let a = precision_matrix(&coupling_matrix(instance, weights));
    let inv = gauss_jordan_inverse(&a)?;
    let mean = mat_vec(&inv, instance.z());
    let cov = inv
        .iter()
        .map(|row| row.iter().map(|v| 0.5 * v).collect())
        .collect();
    Ok((mean, cov))
}

/// The closed-form Gaussian density
/// `|A|^½ π^(−n/2) exp(−yᵀAy + 2zᵀy − zᵀA⁻¹z)`, evaluated with LU and
/// Gauss–Jordan instead of a Cholesky factor.
pub fn gaussian_density(
    instance: &CrfInstance<f64>,
    weights: &PairwiseWeights<f64>,
    y: &[f64],
) -> Result<f64> {
    let a = precision_matrix(&coupling_matrix(instance, weights));
    let inv = gauss_jordan_inverse(&a)?;
    let z = instance.z();
    let n = instance.n() as f64;
    let expo = -dotf(y, &mat_vec(&a, y)) + 2.0 * dotf(z, y) - dotf(z, &mat_vec(&inv, z));
    Ok(lu_determinant(&a).sqrt() * std::f64::consts::PI.powf(-n / 2.0) * expo.exp())
}

/// Trapezoid-rule settings for [`quad_log_partition`]. The box is centred on
/// the posterior mean and extends `half_width_sigmas` posterior standard
/// deviations along each axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureSpec {
    pub half_width_sigmas: f64,
    pub points: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            half_width_sigmas: 10.0,
            points: 401,
        }
    }
}

impl QuadratureSpec {
    fn validate(&self) -> Result<()> {
        if !(self.half_width_sigmas > 0.0) {
            return Err(OracleError::InvalidSpec(
                "half-width must be positive".into(),
            ));
        }
        if self.points < 3 {
            return Err(OracleError::InvalidSpec("need at least 3 points".into()));
        }
        Ok(())
    }
}

/// Tensor-product grid over a box, visiting every node with its trapezoid
/// weight.
fn for_each_node(lo: &[f64], step: &[f64], points: usize, mut visit: impl FnMut(&[f64], f64)) {
    let dims = lo.len();
    let mut idx = vec![0usize; dims];
    let mut x = lo.to_vec();
    loop {
        let w: f64 = idx
            .iter()
            .map(|&i| if i == 0 || i + 1 == points { 0.5 } else { 1.0 })
            .product();
        for d in 0..dims {
            x[d] = lo[d] + idx[d] as f64 * step[d];
        }
        visit(&x, w);
        let mut d = 0;
        loop {
            if d == dims {
                return;
            }
            idx[d] += 1;
            if idx[d] < points {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// `log ∫ exp(−E(y)) dy` by the trapezoid rule; at most three nodes.
pub fn quad_log_partition(
    instance: &CrfInstance<f64>,
    weights: &PairwiseWeights<f64>,
    spec: &QuadratureSpec,
) -> Result<f64> {
    const MAX: usize = 3;
    spec.validate()?;
    let n = instance.n();
    if n > MAX {
        return Err(OracleError::TooManyNodes {
            what: "quadrature",
            n,
            max: MAX,
        });
    }
    let (mean, cov) = gaussian_moments(instance, weights)?;
    let half: Vec<f64> = (0..n)
        .map(|i| spec.half_width_sigmas * cov[i][i].sqrt())
        .collect();
    let lo: Vec<f64> = mean.iter().zip(&half).map(|(m, h)| m - h).collect();
    let step: Vec<f64> = half
        .iter()
        .map(|h| 2.0 * h / (spec.points - 1) as f64)
        .collect();

    // Energies are shifted by their value at the mean before exponentiating.
    let shift = crf::energy(instance, weights, &mean)?;
    let mut acc = 0.0;
    let mut err = None;
    for_each_node(&lo, &step, spec.points, |y, w| {
        match crf::energy(instance, weights, y) {
            Ok(e) => acc += w * (shift - e).exp(),
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e.into());
    }
    let volume: f64 = step.iter().product();
    Ok((acc * volume).ln() - shift)
}

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h`.
pub fn fd_gradient<T: Scalar>(mut f: impl FnMut(&[T]) -> T, point: &[T], h: T) -> Vec<T> {
    let mut x = point.to_vec();
    let two = T::lit(2.0);
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + h;
            let up = f(&x);
            x[i] = point[i] - h;
            let down = f(&x);
            x[i] = point[i];
            (up - down) / (two * h)
        })
        .collect()
}

/// Default step for [`fd_gradient`] in double precision.
pub const FD_STEP: f64 = 1e-5;

/// Axis-aligned grid for [`grid_map`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn cell(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }
}

/// The grid node with the highest density (lowest energy); at most two
/// nodes.
pub fn grid_map(
    instance: &CrfInstance<f64>,
    weights: &PairwiseWeights<f64>,
    spec: &GridSpec,
) -> Result<Vec<f64>> {
    const MAX: usize = 2;
    let n = instance.n();
    if n > MAX {
        return Err(OracleError::TooManyNodes {
            what: "grid search",
            n,
            max: MAX,
        });
    }
    if spec.points < 2 || !(spec.hi > spec.lo) {
        return Err(OracleError::InvalidSpec("degenerate grid".into()));
    }
    let lo = vec![spec.lo; n];
    let step = vec![spec.cell(); n];
    let mut best = (f64::INFINITY, lo.clone());
    let mut err = None;
    for_each_node(&lo, &step, spec.points, |y, _| {
        match crf::energy(instance, weights, y) {
            Ok(e) if e < best.0 => best = (e, y.to_vec()),
            Ok(_) => {}
            Err(e) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e.into()),
        None => Ok(best.1),
    }
}

/// Sample moments of draws from `N(A⁻¹z, ½A⁻¹)`.
#[derive(Clone, Debug)]
pub struct MonteCarloMoments {
    pub mean: Vec<f64>,
    pub covariance: Dense,
    pub draws: usize,
}

impl MonteCarloMoments {
    /// Standard error of each mean coordinate, `√(Σ_ii / N)`.
    pub fn mean_standard_errors(&self) -> Vec<f64> {
        let n = self.draws as f64;
        (0..self.mean.len())
            .map(|i| (self.covariance[i][i] / n).sqrt())
            .collect()
    }

    /// Gaussian standard error of each covariance entry,
    /// `√((Σ_ii Σ_jj + Σ_ij²) / N)`.
    pub fn covariance_standard_errors(&self) -> Dense {
        let n = self.draws as f64;
        let c = &self.covariance;
        (0..c.len())
            .map(|i| {
                (0..c.len())
                    .map(|j| ((c[i][i] * c[j][j] + c[i][j] * c[i][j]) / n).sqrt())
                    .collect()
            })
            .collect()
    }
}

/// Minimum number of draws accepted by [`mc_moments`].
pub const MIN_DRAWS: usize = 10_000;

fn lower_cholesky(a: &Dense) -> Result<Dense> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let d = a[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if !(d > 0.0) {
            return Err(OracleError::Singular);
        }
        l[j][j] = d.sqrt();
        for i in (j + 1)..n {
            let s = (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = (a[i][j] - s) / l[j][j];
        }
    }
    Ok(l)
}

pub fn mc_moments(
    instance: &CrfInstance<f64>,
    weights: &PairwiseWeights<f64>,
    draws: usize,
    seed: u64,
) -> Result<MonteCarloMoments> {
    if draws < MIN_DRAWS {
        return Err(OracleError::TooFewDraws {
            min: MIN_DRAWS,
            got: draws,
        });
    }
    let (mu, cov) = gaussian_moments(instance, weights)?;
    let l = lower_cholesky(&cov)?;
    let n = mu.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; n];
    let mut outer = vec![vec![0.0; n]; n];
    let mut eps = vec![0.0; n];
    let mut y = vec![0.0; n];
    for _ in 0..draws {
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(&mut rng);
        }
        for i in 0..n {
            // Centred on μ; the mean is added back after accumulation.
            y[i] = (0..=i).map(|k| l[i][k] * eps[k]).sum();
        }
        for i in 0..n {
            sum[i] += y[i];
            for j in 0..n {
                outer[i][j] += y[i] * y[j];
            }
        }
    }
    let dn = draws as f64;
    let centred: Vec<f64> = sum.iter().map(|s| s / dn).collect();
    let covariance = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (outer[i][j] - dn * centred[i] * centred[j]) / (dn - 1.0))
                .collect()
        })
        .collect();
    Ok(MonteCarloMoments {
        mean: centred.iter().zip(&mu).map(|(c, m)| c + m).collect(),
        covariance,
        draws,
    })
}
