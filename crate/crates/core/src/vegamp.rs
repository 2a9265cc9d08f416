//! Vector-valued GAMP over `R = A X` with the one-hot section prior.
//!
//! Works column by column of `X` (one column per user) and section by
//! section within a column. Variances are shared by every entry of a
//! column; [`VarianceSharing::Pooled`] also shares them across users.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::bigamp::{damp_matrix, damp_vec, VarianceSharing};
use crate::error::{check_dim, Error, Result};
use crate::scalar::{floor_var, Real};
use crate::sparc::Codebook;
use crate::special::softmax_in_place;

/// Decoder state for one decoding run; variances hold one entry per user.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState<T: Real> {
    pub x_bar: Array2<T>,
    pub x_hat: Array2<T>,
    pub v_x: Array1<T>,
    pub q_hat: Array2<T>,
    pub v_q: Array1<T>,
    pub t_hat: Array2<T>,
    pub v_t: Array1<T>,
    pub d_hat: Array2<T>,
    pub v_d: Array1<T>,
    pub sharing: VarianceSharing,
}

impl<T: Real> DecoderState<T> {
    /// Starts from `X̂ = X̄ = x0` and the given variances for every user;
    /// `T̂`, `D̂`, `V^t` and `V^d` start at zero and `Q̂ = A x0`.
    pub fn new(cb: &Codebook<T>, x0: Array2<T>, v_x: T, v_q: T) -> Result<Self> {
        let q_hat = cb.encode_matrix(&x0)?;
        let (w, k) = x0.dim();
        let n = cb.params().n;
        Ok(Self {
            x_bar: x0.clone(),
            x_hat: x0,
            v_x: Array1::from_elem(k, v_x),
            q_hat,
            v_q: Array1::from_elem(k, v_q),
            t_hat: Array2::zeros((n, k)),
            v_t: Array1::zeros(k),
            d_hat: Array2::zeros((w, k)),
            v_d: Array1::zeros(k),
            sharing: VarianceSharing::default(),
        })
    }

    pub fn with_sharing(mut self, sharing: VarianceSharing) -> Self {
        self.sharing = sharing;
        self
    }

    /// Pseudo-prior on `R` with Onsager correction: `(Q̂, V^q)`.
    pub fn pseudo_prior(&mut self, cb: &Codebook<T>, theta2: T) -> Result<()> {
        let scale = cb.frobenius_sq() / T::count(cb.params().n);
        self.v_q = damp_vec(theta2, &self.v_x.mapv(|v| scale * v), &self.v_q);
        let mut q = cb.encode_matrix(&self.x_hat)?;
        for ((mut col, t), &vq) in q.axis_iter_mut(Axis(1)).zip(self.t_hat.axis_iter(Axis(1))).zip(&self.v_q) {
            Zip::from(&mut col).and(&t).for_each(|q, &t| *q -= vq * t);
        }
        self.q_hat = q;
        Ok(())
    }

    /// Scaled residual between the equalizer message and the pseudo-prior.
    pub fn residual_update(&mut self, u_hat: &Array2<T>, v_u: &Array1<T>, theta2: T) -> Result<()> {
        if u_hat.dim() != self.q_hat.dim() {
            return Err(Error::Dimension {
                context: "residual_update",
                expected: self.q_hat.len(),
                actual: u_hat.len(),
            });
        }
        check_dim("residual_update (V^u)", self.v_q.len(), v_u.len())?;
        let keep = T::one() - theta2;
        for k in 0..v_u.len() {
            let s = floor_var(self.v_q[k] + v_u[k]);
            Zip::from(self.t_hat.column_mut(k))
                .and(u_hat.column(k))
                .and(self.q_hat.column(k))
                .for_each(|t, &u, &q| *t = theta2 * ((u - q) / s) + keep * *t);
            self.v_t[k] = theta2 / s + keep * self.v_t[k];
        }
        Ok(())
    }

    /// Denoiser input `D̂ = X̄ + V^d Aᵀ T̂` with `V^d = J·2^L/(V^t‖A‖²)`.
    pub fn denoiser_input(&mut self, cb: &Codebook<T>) -> Result<()> {
        let width = T::count(cb.params().width());
        let norm = cb.frobenius_sq();
        self.v_d = self.v_t.mapv(|vt| width / floor_var(vt * norm));
        let mut d = cb.matrix().t().dot(&self.t_hat);
        for ((mut col, x), &vd) in d.axis_iter_mut(Axis(1)).zip(self.x_bar.axis_iter(Axis(1))).zip(&self.v_d) {
            Zip::from(&mut col).and(&x).for_each(|d, &x| *d = x + vd * *d);
        }
        self.d_hat = d;
        Ok(())
    }

    /// Section-wise posterior mean, `V^x`, and damping of `X̄`.
    pub fn denoise(&mut self, l_bits: usize, theta2: T) -> Result<()> {
        let (x_hat, v_x) = sparc_denoise(&self.d_hat, &self.v_d, l_bits)?;
        self.x_bar = damp_matrix(theta2, &x_hat, &self.x_bar);
        self.x_hat = x_hat;
        self.v_x = self.sharing.pool_mean(v_x);
        Ok(())
    }
}

/// Posterior mean of a one-hot section vector observed as `N(d̂, V^d·I)`,
/// applied to every `2^L` section of every column of `d_hat`, with `V^d`
/// given per column. Returns `(X̂, V^x)` with `V^x` the per-column mean of
/// `x̂(1−x̂)`.
pub fn sparc_denoise<T: Real>(d_hat: &Array2<T>, v_d: &Array1<T>, l_bits: usize) -> Result<(Array2<T>, Array1<T>)> {
    let section = 1usize << l_bits;
    if !d_hat.nrows().is_multiple_of(section) {
        return Err(Error::Dimension {
            context: "sparc_denoise",
            expected: section * (d_hat.nrows() / section + 1),
            actual: d_hat.nrows(),
        });
    }
    check_dim("sparc_denoise (V^d)", d_hat.ncols(), v_d.len())?;
    if let Some(bad) = v_d.iter().find(|&&v| !(v > T::zero())) {
        return Err(Error::InvalidParam(format!("denoiser variance must be > 0, got {bad}")));
    }
    let two = T::lit(2.0);
    let mut x = d_hat.clone();
    let mut v_x = Array1::zeros(v_d.len());
    let mut buf = vec![T::zero(); section];
    let rows = T::count(d_hat.nrows().max(1));
    for ((mut col, &vd), vx) in x.axis_iter_mut(Axis(1)).zip(v_d).zip(v_x.iter_mut()) {
        let scale = T::one() / (two * vd);
        let mut moment = T::zero();
        for block in 0..col.len() / section {
            for (l, b) in buf.iter_mut().enumerate() {
                // ‖e_l − d‖² differs across l only through −2 d_l, so the
                // logit is (2 d_l − 1)/(2 V^d).
                *b = (two * col[block * section + l] - T::one()) * scale;
            }
            softmax_in_place(&mut buf);
            for (l, &p) in buf.iter().enumerate() {
                col[block * section + l] = p;
                moment += p * (T::one() - p);
            }
        }
        *vx = moment / rows;
    }
    Ok((x, v_x))
}
