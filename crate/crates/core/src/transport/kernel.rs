//! Shifted Gibbs kernels for log-domain Sinkhorn half-steps.
//!
//! A half-step maps potentials `p` on the inner index to
//! `out_i = ε log μ_i − ε LSE_j((p_j − C_ij)/ε)`. Writing the sum as
//! `Σ_j exp(−(C_ij − c_i)/ε) · exp((p_j − p_max)/ε)` with `c_i = min_j C_ij`
//! needs only `inner` exponentials per step. When that sum gets small enough
//! that significant terms may have underflowed, the row is recomputed as an
//! exact log-sum-exp.

/// Sums below this are recomputed exactly.
const TINY: f64 = 1e-200;

pub(crate) struct ShiftedKernel {
    outer: usize,
    inner: usize,
    eps: f64,
    cost: Vec<f64>,
    shift: Vec<f64>,
    kernel: Vec<f64>,
}

impl ShiftedKernel {
    /// `cost` is `outer x inner`, row-major.
    pub(crate) fn new(outer: usize, inner: usize, cost: Vec<f64>, eps: f64) -> Self {
        debug_assert_eq!(cost.len(), outer * inner);
        let mut shift = Vec::with_capacity(outer);
        let mut kernel = Vec::with_capacity(outer * inner);
        for row in cost.chunks_exact(inner) {
            let c_min = row.iter().copied().fold(f64::INFINITY, f64::min);
            shift.push(c_min);
            kernel.extend(row.iter().map(|c| (-(c - c_min) / eps).exp()));
        }
        Self {
            outer,
            inner,
            eps,
            cost,
            shift,
            kernel,
        }
    }

    /// Fills `scaled[j] = exp((p_j − p_max)/ε)` and returns `p_max`.
    fn scale(&self, pot: &[f64], scaled: &mut [f64]) -> f64 {
        let p_max = pot.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (e, p) in scaled.iter_mut().zip(pot) {
            *e = ((p - p_max) / self.eps).exp();
        }
        p_max
    }

    #[inline]
    fn row_sum(&self, i: usize, scaled: &[f64]) -> f64 {
        let k = &self.kernel[i * self.inner..(i + 1) * self.inner];
        k.iter().zip(scaled).map(|(a, b)| a * b).sum()
    }

    /// `ε LSE_j((p_j − C_ij)/ε)` for row `i`, exactly.
    fn exact_lse(&self, i: usize, pot: &[f64]) -> f64 {
        let c = &self.cost[i * self.inner..(i + 1) * self.inner];
        let t_max = pot
            .iter()
            .zip(c)
            .map(|(p, c)| (p - c) / self.eps)
            .fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = pot
            .iter()
            .zip(c)
            .map(|(p, c)| ((p - c) / self.eps - t_max).exp())
            .sum();
        self.eps * (t_max + s.ln())
    }

    /// One Sinkhorn half-step. `log_mass[i] = ε log μ_i`.
    pub(crate) fn soft_min(&self, pot: &[f64], log_mass: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let p_max = self.scale(pot, scratch);
        for i in 0..self.outer {
            let s = self.row_sum(i, scratch);
            let lse = if s > TINY {
                p_max - self.shift[i] + self.eps * s.ln()
            } else {
                self.exact_lse(i, pot)
            };
            out[i] = log_mass[i] - lse;
        }
    }

    /// `out_j += Σ_i w_ij x_i` where `w_i·` is the softmax over `j` of
    /// `(p_j − C_ij)/ε`.
    pub(crate) fn accumulate_transposed(&self, pot: &[f64], x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        self.scale(pot, scratch);
        for i in 0..self.outer {
            if x[i] == 0.0 {
                continue;
            }
            let s = self.row_sum(i, scratch);
            let k = &self.kernel[i * self.inner..(i + 1) * self.inner];
            if s > TINY {
                let coeff = x[i] / s;
                for ((o, kij), e) in out.iter_mut().zip(k).zip(scratch.iter()) {
                    *o += coeff * kij * e;
                }
            } else {
                let lse = self.exact_lse(i, pot) / self.eps;
                let c = &self.cost[i * self.inner..(i + 1) * self.inner];
                for ((o, p), cij) in out.iter_mut().zip(pot).zip(c) {
                    *o += x[i] * ((p - cij) / self.eps - lse).exp();
                }
            }
        }
    }
}
