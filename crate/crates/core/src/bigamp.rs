//! Scalar-variance BiG-AMP over the bilinear model `Y ≈ R H`.
//!
//! `R` (N×K) has a Gaussian pseudo-prior supplied by the decoder and `H`
//! (K×M) a zero-mean Gaussian prior with per-entry precision γ̄ supplied by
//! the VMP block. Hatted quantities are fresh estimates, barred ones their
//! damped running versions. Variances are shared across codeword rows and
//! antennas; see [`VarianceSharing`] for how they are shared across users.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::error::{check_dim, Error, Result};
use crate::scalar::{floor_var, Real};

/// Damped scalar update `θ·new + (1−θ)·old`.
#[inline]
pub fn damp<T: Real>(theta: T, new: T, old: T) -> T {
    theta * new + (T::one() - theta) * old
}

/// Entrywise damped update of a matrix.
pub fn damp_matrix<T: Real>(theta: T, new: &Array2<T>, old: &Array2<T>) -> Array2<T> {
    let keep = T::one() - theta;
    Zip::from(new).and(old).map_collect(|&n, &o| theta * n + keep * o)
}

/// Product of two Gaussian densities in `x`: returns the mean and variance
/// of `N(x; m1, v1)·N(x; m2, v2)` after normalisation.
#[inline]
pub fn gaussian_combine<T: Real>(m1: T, v1: T, m2: T, v2: T) -> (T, T) {
    let s = v1 + v2;
    ((m1 * v2 + m2 * v1) / s, v1 * v2 / s)
}

/// Posterior of `z` under `N(z; p̂, V^p)` and observation `y = z + N(0, σ²)`.
pub fn awgn_posterior<T: Real>(y: T, p_hat: T, v_p: T, sigma2: T) -> Result<(T, T)> {
    if !(sigma2 > T::zero()) {
        return Err(Error::InvalidParam(format!("noise variance must be > 0, got {sigma2}")));
    }
    Ok(gaussian_combine(y, sigma2, p_hat, v_p))
}

/// Which estimates feed the plant `P̄ = R H` and its variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlantInputs {
    /// Fresh posterior means `R̂`, `Ĥ`.
    Posterior,
    /// Damped running estimates `R̄`, `H̄`.
    #[default]
    Damped,
}

/// How message variances are shared.
///
/// Every variance is shared across codeword rows and antennas. `PerUser`
/// keeps one value per user; `Pooled` averages those into a single scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceSharing {
    Pooled,
    #[default]
    PerUser,
}

impl VarianceSharing {
    /// Variances that are entry averages: the pooled value is the plain mean.
    pub fn pool_mean<T: Real>(self, v: Array1<T>) -> Array1<T> {
        match self {
            Self::PerUser => v,
            Self::Pooled => {
                let mean = v.mean().unwrap_or_else(T::zero);
                Array1::from_elem(v.len(), mean)
            }
        }
    }

    /// Variances of the form `1/(V^s·energy_k)`: the pooled value uses the
    /// mean energy.
    fn inverse_energy<T: Real>(self, v_s: T, energy: Array1<T>) -> Array1<T> {
        let energy = match self {
            Self::PerUser => energy,
            Self::Pooled => {
                let mean = energy.mean().unwrap_or_else(T::zero);
                Array1::from_elem(energy.len(), mean)
            }
        };
        energy.mapv(|e| T::one() / floor_var(v_s * e))
    }
}

/// Squared norms of the columns.
pub fn column_energy<T: Real>(m: &Array2<T>) -> Array1<T> {
    m.map_axis(Axis(0), |c| c.iter().map(|&v| v * v).sum())
}

/// Squared norms of the rows.
pub fn row_energy<T: Real>(m: &Array2<T>) -> Array1<T> {
    m.map_axis(Axis(1), |r| r.iter().map(|&v| v * v).sum())
}

/// Entrywise damping of per-user variances.
pub fn damp_vec<T: Real>(theta: T, new: &Array1<T>, old: &Array1<T>) -> Array1<T> {
    Zip::from(new).and(old).map_collect(|&n, &o| damp(theta, n, o))
}

/// Equalizer state for one decoding run. `R`-side variances index the
/// columns of `R`, `H`-side variances the rows of `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerState<T: Real> {
    pub r_bar: Array2<T>,
    pub r_hat: Array2<T>,
    pub v_r: Array1<T>,
    pub h_bar: Array2<T>,
    pub h_hat: Array2<T>,
    pub v_h: Array1<T>,
    pub s_hat: Array2<T>,
    pub v_s: T,
    pub p_bar: Array2<T>,
    pub p_hat: Array2<T>,
    pub v_p_bar: T,
    pub v_p: T,
    pub u_hat: Array2<T>,
    pub v_u: Array1<T>,
    pub w_hat: Array2<T>,
    pub v_w: Array1<T>,
    pub sharing: VarianceSharing,
}

impl<T: Real> EqualizerState<T> {
    /// Starts from `R̂ = R̄ = r0`, `Ĥ = H̄ = h0` with the given variances for
    /// every user; every other matrix and variance is zero.
    pub fn new(r0: Array2<T>, h0: Array2<T>, v_r: T, v_h: T) -> Result<Self> {
        check_dim("EqualizerState::new (K)", r0.ncols(), h0.nrows())?;
        if !(v_r >= T::zero() && v_h >= T::zero()) {
            return Err(Error::InvalidParam("initial variances must be >= 0".into()));
        }
        let (n, k) = r0.dim();
        let m = h0.ncols();
        Ok(Self {
            r_bar: r0.clone(),
            r_hat: r0,
            v_r: Array1::from_elem(k, v_r),
            h_bar: h0.clone(),
            h_hat: h0,
            v_h: Array1::from_elem(k, v_h),
            s_hat: Array2::zeros((n, m)),
            v_s: T::zero(),
            p_bar: Array2::zeros((n, m)),
            p_hat: Array2::zeros((n, m)),
            v_p_bar: T::zero(),
            v_p: T::zero(),
            u_hat: Array2::zeros((n, k)),
            v_u: Array1::zeros(k),
            w_hat: Array2::zeros((k, m)),
            v_w: Array1::zeros(k),
            sharing: VarianceSharing::default(),
        })
    }

    pub fn with_sharing(mut self, sharing: VarianceSharing) -> Self {
        self.sharing = sharing;
        self
    }

    /// `(N, K, M)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.r_hat.nrows(), self.r_hat.ncols(), self.h_hat.ncols())
    }

    /// Plant estimate, Onsager-corrected residual and its scaled version,
    /// from the previous iteration's estimates, `V^r`, `V^h` and `Ŝ`.
    pub fn plant_update(&mut self, y: &Array2<T>, sigma2: T, theta1: T, inputs: PlantInputs) -> Result<()> {
        let (n, _, m) = self.dims();
        if y.dim() != (n, m) {
            return Err(Error::Dimension {
                context: "plant_update",
                expected: n * m,
                actual: y.len(),
            });
        }
        if !(sigma2 > T::zero()) {
            return Err(Error::InvalidParam(format!("noise variance must be > 0, got {sigma2}")));
        }
        let (r, h) = match inputs {
            PlantInputs::Posterior => (&self.r_hat, &self.h_hat),
            PlantInputs::Damped => (&self.r_bar, &self.h_bar),
        };
        self.p_bar = r.dot(h);
        let (hn, rn) = (row_energy(h), column_energy(r));
        let (mf, nf) = (T::count(m), T::count(n));
        let mut fresh = T::zero();
        let mut cross = T::zero();
        for k in 0..self.v_r.len() {
            fresh += self.v_r[k] * hn[k] / mf + self.v_h[k] * rn[k] / nf;
            cross += self.v_r[k] * self.v_h[k];
        }
        self.v_p_bar = damp(theta1, fresh, self.v_p_bar);
        self.v_p = damp(theta1, self.v_p_bar + cross, self.v_p);
        let v_p_bar = self.v_p_bar;
        self.p_hat = Zip::from(&self.p_bar)
            .and(&self.s_hat)
            .map_collect(|&p, &s| p - v_p_bar * s);
        let denom = self.v_p + sigma2;
        let keep = T::one() - theta1;
        Zip::from(&mut self.s_hat)
            .and(y)
            .and(&self.p_hat)
            .for_each(|s, &yv, &p| *s = theta1 * ((yv - p) / denom) + keep * *s);
        self.v_s = damp(theta1, T::one() / denom, self.v_s);
        Ok(())
    }

    /// Extrinsic Gaussian message on `R`: `(Û, V^u)`.
    pub fn r_extrinsic(&mut self) -> Result<()> {
        let (_, _, m) = self.dims();
        let energy = row_energy(&self.h_bar);
        if !(energy.sum() > T::zero()) {
            return Err(Error::Degenerate("channel estimate has zero Frobenius norm"));
        }
        self.v_u = self.sharing.inverse_energy(self.v_s, energy);
        let mf = T::count(m);
        let scale = Zip::from(&self.v_u)
            .and(&self.v_h)
            .map_collect(|&vu, &vh| T::one() - mf * vu * self.v_s * vh);
        let mut u = self.s_hat.dot(&self.h_bar.t());
        for ((mut col, r), (&sc, &vu)) in u
            .axis_iter_mut(Axis(1))
            .zip(self.r_bar.axis_iter(Axis(1)))
            .zip(scale.iter().zip(&self.v_u))
        {
            Zip::from(&mut col).and(&r).for_each(|u, &r| *u = sc * r + vu * *u);
        }
        self.u_hat = u;
        Ok(())
    }

    /// Extrinsic Gaussian message on `H`: `(Ŵ, V^w)`.
    pub fn h_extrinsic(&mut self) -> Result<()> {
        let (n, _, _) = self.dims();
        let energy = column_energy(&self.r_bar);
        if !(energy.sum() > T::zero()) {
            return Err(Error::Degenerate("codeword estimate has zero Frobenius norm"));
        }
        self.v_w = self.sharing.inverse_energy(self.v_s, energy);
        let nf = T::count(n);
        let scale = Zip::from(&self.v_w)
            .and(&self.v_r)
            .map_collect(|&vw, &vr| T::one() - nf * vw * self.v_s * vr);
        let mut w = self.r_bar.t().dot(&self.s_hat);
        for ((mut row, h), (&sc, &vw)) in w
            .axis_iter_mut(Axis(0))
            .zip(self.h_bar.axis_iter(Axis(0)))
            .zip(scale.iter().zip(&self.v_w))
        {
            Zip::from(&mut row).and(&h).for_each(|w, &h| *w = sc * h + vw * *w);
        }
        self.w_hat = w;
        Ok(())
    }

    /// Combines `(Û, V^u)` with the pseudo-prior `(Q̂, V^q)` into `R̂`, `V^r`
    /// and damps `R̄`.
    pub fn update_r(&mut self, q_hat: &Array2<T>, v_q: &Array1<T>, theta1: T) -> Result<()> {
        let post = r_posterior(&self.u_hat, &self.v_u, q_hat, v_q)?;
        self.r_bar = damp_matrix(theta1, &post.0, &self.r_bar);
        self.r_hat = post.0;
        self.v_r = post.1;
        Ok(())
    }

    /// Recomputes `R̂`, `V^r` from a new pseudo-prior without touching `R̄`.
    pub fn refresh_r(&mut self, q_hat: &Array2<T>, v_q: &Array1<T>) -> Result<()> {
        let post = r_posterior(&self.u_hat, &self.v_u, q_hat, v_q)?;
        self.r_hat = post.0;
        self.v_r = post.1;
        Ok(())
    }

    /// Channel posterior under the per-entry prior precision γ̄ and damping
    /// of `H̄`.
    pub fn update_h(&mut self, gamma_bar: &Array2<T>, theta1: T) -> Result<()> {
        let (h_hat, v_h) = h_posterior(&self.w_hat, &self.v_w, gamma_bar)?;
        self.h_bar = damp_matrix(theta1, &h_hat, &self.h_bar);
        self.h_hat = h_hat;
        self.v_h = self.sharing.pool_mean(v_h);
        Ok(())
    }
}

/// Gaussian posterior of `R` from the extrinsic `(Û, V^u)` and the
/// pseudo-prior `(Q̂, V^q)`, both with per-column variances: `(R̂, V^r)`.
pub fn r_posterior<T: Real>(
    u_hat: &Array2<T>,
    v_u: &Array1<T>,
    q_hat: &Array2<T>,
    v_q: &Array1<T>,
) -> Result<(Array2<T>, Array1<T>)> {
    if u_hat.dim() != q_hat.dim() {
        return Err(Error::Dimension {
            context: "r_posterior",
            expected: u_hat.len(),
            actual: q_hat.len(),
        });
    }
    check_dim("r_posterior (V^u)", u_hat.ncols(), v_u.len())?;
    check_dim("r_posterior (V^q)", u_hat.ncols(), v_q.len())?;
    let mut r = Array2::zeros(u_hat.dim());
    let mut v_r = Array1::zeros(v_u.len());
    for (k, (&vu, &vq)) in v_u.iter().zip(v_q).enumerate() {
        if !(vu >= T::zero() && vq >= T::zero()) || vu + vq <= T::zero() {
            return Err(Error::Degenerate("both message variances vanish"));
        }
        let s = vu + vq;
        Zip::from(r.column_mut(k))
            .and(u_hat.column(k))
            .and(q_hat.column(k))
            .for_each(|r, &u, &q| *r = (u * vq + q * vu) / s);
        v_r[k] = vq * vu / s;
    }
    Ok((r, v_r))
}

/// Channel posterior under `N(0, γ̄⁻¹)` prior and `N(ŵ, V^w)` message with
/// per-row `V^w`: per-entry means and the entry variance averaged over each
/// row.
pub fn h_posterior<T: Real>(w_hat: &Array2<T>, v_w: &Array1<T>, gamma_bar: &Array2<T>) -> Result<(Array2<T>, Array1<T>)> {
    if w_hat.dim() != gamma_bar.dim() {
        return Err(Error::Dimension {
            context: "h_posterior",
            expected: w_hat.len(),
            actual: gamma_bar.len(),
        });
    }
    check_dim("h_posterior (V^w)", w_hat.nrows(), v_w.len())?;
    let m = T::count(w_hat.ncols().max(1));
    let mut h = Array2::zeros(w_hat.dim());
    let mut v_h = Array1::zeros(v_w.len());
    for (k, &vw) in v_w.iter().enumerate() {
        let mut var_sum = T::zero();
        Zip::from(h.row_mut(k))
            .and(w_hat.row(k))
            .and(gamma_bar.row(k))
            .for_each(|h, &w, &g| {
                let prior_var = T::one() / g;
                let s = prior_var + vw;
                var_sum += prior_var * vw / s;
                *h = w * prior_var / s;
            });
        v_h[k] = var_sum / m;
    }
    Ok((h, v_h))
}
