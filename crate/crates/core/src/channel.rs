//! Ground-truth channel generation and observation synthesis.
//!
//! Two channel families are provided: i.i.d. Gaussian-mixture coefficients
//! drawn directly in the real virtual domain, and the one-ring correlated
//! model for a half-wavelength ULA, whose complex virtual coefficients are
//! stacked as `(Re | Im)` so `M` physical antennas become `2M` real ones.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;
use crate::sparc::Codebook;

/// Weights and precisions of a zero-mean scalar Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmParams<T: Real> {
    weights: Vec<T>,
    precisions: Vec<T>,
}

impl<T: Real> GmParams<T> {
    pub fn new(weights: Vec<T>, precisions: Vec<T>) -> Result<Self> {
        if weights.is_empty() || weights.len() != precisions.len() {
            return Err(Error::InvalidParam(format!(
                "mixture needs matching non-empty weights/precisions ({} vs {})",
                weights.len(),
                precisions.len()
            )));
        }
        if weights.iter().any(|&w| w < T::zero() || !w.is_finite()) {
            return Err(Error::InvalidParam("mixture weights must be nonnegative".into()));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-12).max(T::epsilon() * T::lit(8.0)) {
            return Err(Error::InvalidParam(format!("mixture weights sum to {total}, not 1")));
        }
        if precisions.iter().any(|&g| g <= T::zero() || g.is_nan()) {
            return Err(Error::InvalidParam("mixture precisions must be positive".into()));
        }
        Ok(Self {
            weights,
            precisions,
        })
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn precisions(&self) -> &[T] {
        &self.precisions
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// E[h²] = Σ π_g / γ_g.
    pub fn second_moment(&self) -> T {
        self.weights
            .iter()
            .zip(&self.precisions)
            .map(|(&w, &g)| w / g)
            .sum()
    }
}

/// Mixture density Σ_g π_g N(h; 0, 1/γ_g).
pub fn gm_pdf<T: Real>(h: T, params: &GmParams<T>) -> T {
    let two = T::lit(2.0);
    params
        .weights
        .iter()
        .zip(&params.precisions)
        .map(|(&w, &g)| w * (g / (two * T::PI())).sqrt() * (-(g * h * h) / two).exp())
        .sum()
}

/// Draws a `k×m` matrix of independent mixture coefficients.
pub fn sample_gm_channel<T: Real, R: Rng + ?Sized>(
    params: &GmParams<T>,
    k: usize,
    m: usize,
    rng: &mut R,
) -> Array2<T> {
    let stds: Vec<f64> = params
        .precisions
        .iter()
        .map(|&g| 1.0 / g.as_f64().sqrt())
        .collect();
    let last = params.components() - 1;
    Array2::from_shape_simple_fn((k, m), || {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = last;
        for (g, &w) in params.weights.iter().enumerate() {
            acc += w.as_f64();
            if u < acc {
                comp = g;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z * stds[comp])
    })
}

/// Number of Simpson intervals used for the one-ring angular integral.
pub const ONE_RING_QUADRATURE_INTERVALS: usize = 512;

/// Half-wavelength ULA steering phase between antennas `p` and `q`.
#[inline]
fn steering_phase(p: usize, q: usize, angle: f64) -> Complex64 {
    let d = p as f64 - q as f64;
    Complex64::from_polar(1.0, std::f64::consts::PI * d * angle.sin())
}

/// One-ring spatial covariance `(1/2Δ)∫ a(φ)a(φ)ᴴ dφ` over
/// `[azimuth − Δ, azimuth + Δ]`, normalised to trace `m`.
pub fn one_ring_covariance(m: usize, azimuth: f64, angular_spread: f64) -> Result<DMatrix<Complex64>> {
    if !(angular_spread > 0.0) || !azimuth.is_finite() {
        return Err(Error::InvalidParam(format!(
            "one-ring needs a positive angular spread (got {angular_spread})"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidParam("one-ring needs at least one antenna".into()));
    }
    let intervals = ONE_RING_QUADRATURE_INTERVALS;
    let lo = azimuth - angular_spread;
    let h = 2.0 * angular_spread / intervals as f64;
    // Composite Simpson weights over intervals+1 nodes.
    let nodes: Vec<(f64, f64)> = (0..=intervals)
        .map(|i| {
            let w = if i == 0 || i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (lo + i as f64 * h, w * h / 3.0)
        })
        .collect();
    let norm = 1.0 / (2.0 * angular_spread);
    let mut r = DMatrix::<Complex64>::zeros(m, m);
    // Toeplitz: entry (p, q) depends only on p − q.
    for d in 0..m {
        let v: Complex64 = nodes
            .iter()
            .map(|&(phi, w)| steering_phase(d, 0, phi) * w)
            .sum::<Complex64>()
            * norm;
        for p in d..m {
            r[(p, p - d)] = v;
            r[(p - d, p)] = v.conj();
        }
    }
    let trace: f64 = (0..m).map(|i| r[(i, i)].re).sum();
    r *= Complex64::new(m as f64 / trace, 0.0);
    Ok(r)
}

/// Eigen-decomposition of a Hermitian PSD covariance with eigenpairs sorted
/// by decreasing eigenvalue; small negative eigenvalues are clamped to zero.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<Complex64>,
}

impl CovarianceFactor {
    pub fn new(cov: &DMatrix<Complex64>) -> Result<Self> {
        let m = cov.nrows();
        if m == 0 || cov.ncols() != m {
            return Err(Error::Decomposition(format!(
                "covariance must be square and non-empty, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let scale = (0..m).map(|i| cov[(i, i)].norm()).fold(0.0, f64::max).max(1e-300);
        let herm_err = (cov - cov.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm_err > 1e-9 * scale {
            return Err(Error::Decomposition(format!("covariance not Hermitian (error {herm_err:e})")));
        }
        let eig = SymmetricEigen::new(cov.clone());
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -1e-8 * scale * m as f64 {
            return Err(Error::Decomposition(format!("covariance not PSD (eigenvalue {min:e})")));
        }
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let eigenvectors = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    /// Draws `h ~ CN(0, cov)` as `U Λ^{1/2} z` with `z ~ CN(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Complex64> {
        let m = self.eigenvalues.len();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let z: Vec<Complex64> = self
            .eigenvalues
            .iter()
            .map(|&lam| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex64::new(re * s, im * s) * lam.sqrt()
            })
            .collect();
        (0..m)
            .map(|r| (0..m).map(|c| self.eigenvectors[(r, c)] * z[c]).sum())
            .collect()
    }
}

/// Projects `h` onto the columns of `basis` (computes `basisᴴ h`) and stacks
/// the result as `(Re | Im)`.
pub fn to_virtual_real(basis: &DMatrix<Complex64>, h: &[Complex64]) -> Vec<f64> {
    let m = h.len();
    let proj: Vec<Complex64> = (0..m)
        .map(|c| (0..m).map(|r| basis[(r, c)].conj() * h[r]).sum())
        .collect();
    proj.iter().map(|v| v.re).chain(proj.iter().map(|v| v.im)).collect()
}

/// Draws one complex channel `CN(0, cov)` and returns its coordinates in the
/// eigenbasis of `cov`, stacked as a real row of length `2M`.
pub fn sample_one_ring_virtual<R: Rng + ?Sized>(cov: &DMatrix<Complex64>, rng: &mut R) -> Result<Vec<f64>> {
    let factor = CovarianceFactor::new(cov)?;
    let h = factor.sample(rng);
    Ok(to_virtual_real(&factor.eigenvectors, &h))
}

/// Orthogonal basis used to move correlated channels into the virtual domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VirtualBasis {
    /// Eigenvectors of the covariance averaged over users.
    #[default]
    Eigen,
    /// Unitary DFT matrix (angular domain of the ULA).
    Dft,
}

/// Unitary `m×m` DFT matrix.
pub fn dft_basis(m: usize) -> DMatrix<Complex64> {
    let scale = 1.0 / (m as f64).sqrt();
    DMatrix::from_fn(m, m, |r, c| {
        let angle = -2.0 * std::f64::consts::PI * (r * c) as f64 / m as f64;
        Complex64::from_polar(scale, angle)
    })
}

/// A set of one-ring users sharing a single virtual basis.
#[derive(Debug, Clone)]
pub struct OneRingScene {
    antennas: usize,
    factors: Vec<CovarianceFactor>,
    basis: DMatrix<Complex64>,
}

impl OneRingScene {
    pub fn new(antennas: usize, azimuths: &[f64], angular_spread: f64, basis: VirtualBasis) -> Result<Self> {
        let covs = azimuths
            .iter()
            .map(|&az| one_ring_covariance(antennas, az, angular_spread))
            .collect::<Result<Vec<_>>>()?;
        let basis = match basis {
            VirtualBasis::Dft => dft_basis(antennas),
            VirtualBasis::Eigen => {
                let mut avg = DMatrix::<Complex64>::zeros(antennas, antennas);
                for c in &covs {
                    avg += c;
                }
                avg /= Complex64::new(covs.len().max(1) as f64, 0.0);
                CovarianceFactor::new(&avg)?.eigenvectors
            }
        };
        let factors = covs.iter().map(CovarianceFactor::new).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            antennas,
            factors,
            basis,
        })
    }

    pub fn users(&self) -> usize {
        self.factors.len()
    }

    /// Real virtual antenna count, `2M`.
    pub fn virtual_antennas(&self) -> usize {
        2 * self.antennas
    }

    /// Draws all users' channels as a `K×2M` real virtual matrix.
    pub fn sample<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Array2<T> {
        let mut h = Array2::zeros((self.users(), self.virtual_antennas()));
        for (k, f) in self.factors.iter().enumerate() {
            let row = to_virtual_real(&self.basis, &f.sample(rng));
            for (dst, v) in h.row_mut(k).iter_mut().zip(row) {
                *dst = T::lit(v);
            }
        }
        h
    }
}

/// Noisy observation `Y = A X H + W`.
#[derive(Debug, Clone)]
pub struct Observation<T: Real> {
    pub y: Array2<T>,
    pub noise_var: T,
}

/// Synthesises `Y = A X H + W`, `W` i.i.d. `N(0, σ²)`.
pub fn synthesize_observation<T: Real, R: Rng + ?Sized>(
    cb: &Codebook<T>,
    x: &Array2<T>,
    h: &Array2<T>,
    sigma2: T,
    rng: &mut R,
) -> Result<Observation<T>> {
    check_dim("observation: users", x.ncols(), h.nrows())?;
    if !(sigma2 >= T::zero()) {
        return Err(Error::InvalidParam(format!("noise variance must be >= 0, got {sigma2}")));
    }
    let mut y = cb.encode_matrix(x)?.dot(h);
    let std = sigma2.sqrt().as_f64();
    if std > 0.0 {
        for v in y.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += T::lit(z * std);
        }
    }
    Ok(Observation { y, noise_var: sigma2 })
}
