//! Lock-step RK4 kernel for `L` independent extended Kuramoto networks.
//!
//! Phases are carried as unit phasors `z = (cos θ, sin θ)`, which turns the
//! phase equation into `ż_i = f_i(z) · (−sin θ_i, cos θ_i)` with
//! `f_i = ω_i + cos θ_i · Σ_j a_ij sin θ_j − sin θ_i · Σ_j a_ij cos θ_j = θ̇_i`.
//! The exact flow keeps every `|z_i| = 1`, so RK4 on the phasors is a
//! fourth-order method for the phase trajectories and needs no trigonometry.
//! Phasors are pulled back to the unit circle after every step.
//!
//! Every lane performs exactly the same sequence of IEEE operations as a
//! one-lane kernel, so results do not depend on how queries are batched or
//! on which instruction set the loop is compiled for.

use crate::scalar::Scalar;

/// Number of lanes used for batched control searches.
pub(crate) const LANES: usize = 8;

/// A resolved integration grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct TimeGrid<T> {
    pub h: T,
    pub steps: usize,
    pub window_start: usize,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn window_len(&self) -> usize {
        self.steps - self.window_start + 1
    }
}

/// What to do with each window sample.
pub(crate) enum Observe<'a, T, const L: usize> {
    /// Accumulate the frequency spread; stop early once every active lane's
    /// running total has reached `limit` (the verdict can no longer change).
    Spread { limit: Option<T> },
    /// Record every oscillator's frequency (lane 0 only).
    Record(&'a mut Vec<T>),
}

pub(crate) struct Kernel<T, const L: usize> {
    m: usize,
    omegas: Vec<[T; L]>,
    coupling: Vec<[T; L]>,
    x: Vec<[T; L]>,
    y: Vec<[T; L]>,
    sx: Vec<[T; L]>,
    sy: Vec<[T; L]>,
    kx: [Vec<[T; L]>; 4],
    ky: [Vec<[T; L]>; 4],
    freq: Vec<[T; L]>,
}

/// Outcome of one lock-step run.
pub(crate) struct RunResult<T, const L: usize> {
    /// Sum of the per-sample spreads seen so far, per lane.
    pub total: [T; L],
    /// False when the lane's state or spreads became non-finite.
    pub finite: [bool; L],
}

impl<T: Scalar, const L: usize> Kernel<T, L> {
    /// Kernel for networks of `m` oscillators (model plus control).
    pub fn new(m: usize) -> Self {
        let v = |len: usize| vec![[T::zero(); L]; len];
        Self {
            m,
            omegas: v(m),
            coupling: v(m * m),
            x: v(m),
            y: v(m),
            sx: v(m),
            sy: v(m),
            kx: std::array::from_fn(|_| v(m)),
            ky: std::array::from_fn(|_| v(m)),
            freq: v(m),
        }
    }

    /// Loads lane `lane` with frequencies (control last) and a dense `m × m`
    /// coupling matrix.
    pub fn load(&mut self, lane: usize, omegas: &[T], coupling: &[T]) {
        debug_assert_eq!(omegas.len(), self.m);
        debug_assert_eq!(coupling.len(), self.m * self.m);
        for (dst, &src) in self.omegas.iter_mut().zip(omegas) {
            dst[lane] = src;
        }
        for (dst, &src) in self.coupling.iter_mut().zip(coupling) {
            dst[lane] = src;
        }
    }

    /// Sets the control coupling (last row and column) of one lane.
    pub fn set_control(&mut self, lane: usize, strength: T) {
        let m = self.m;
        let c = m - 1;
        for i in 0..c {
            self.coupling[i * m + c][lane] = strength;
            self.coupling[c * m + i][lane] = strength;
        }
    }

    #[inline(always)]
    fn run_impl(
        &mut self,
        grid: &TimeGrid<T>,
        active: &[bool; L],
        observe: &mut Observe<'_, T, L>,
    ) -> RunResult<T, L> {
        let Kernel {
            m,
            omegas,
            coupling,
            x,
            y,
            sx,
            sy,
            kx,
            ky,
            freq,
        } = self;
        let m = *m;
        let [k1x, k2x, k3x, k4x] = kx;
        let [k1y, k2y, k3y, k4y] = ky;
        x.iter_mut().for_each(|v| *v = [T::one(); L]);
        y.iter_mut().for_each(|v| *v = [T::zero(); L]);
        let h = grid.h;
        let half = h * T::half();
        let sixth = h / T::lit(6.0);
        let three_halves = T::lit(1.5);
        let mut total = [T::zero(); L];

        for s in 0..=grid.steps {
            rhs(m, omegas, coupling, x, y, k1x, k1y, freq);
            if s >= grid.window_start {
                match observe {
                    Observe::Spread { limit } => {
                        let mut lo = freq[0];
                        let mut hi = freq[0];
                        for f in &freq[1..] {
                            for l in 0..L {
                                lo[l] = if f[l] < lo[l] { f[l] } else { lo[l] };
                                hi[l] = if f[l] > hi[l] { f[l] } else { hi[l] };
                            }
                        }
                        for l in 0..L {
                            total[l] += hi[l] - lo[l];
                        }
                        if let Some(limit) = limit {
                            if (0..L).all(|l| !active[l] || total[l] >= *limit) {
                                break;
                            }
                        }
                    }
                    Observe::Record(out) => out.extend(freq.iter().map(|f| f[0])),
                }
            }
            if s == grid.steps {
                break;
            }
            stage(x, y, k1x, k1y, half, sx, sy);
            rhs(m, omegas, coupling, sx, sy, k2x, k2y, freq);
            stage(x, y, k2x, k2y, half, sx, sy);
            rhs(m, omegas, coupling, sx, sy, k3x, k3y, freq);
            stage(x, y, k3x, k3y, h, sx, sy);
            rhs(m, omegas, coupling, sx, sy, k4x, k4y, freq);
            update(x, k1x, k2x, k3x, k4x, sixth);
            update(y, k1y, k2y, k3y, k4y, sixth);
            // |z|² − 1 is O(h⁵) after a step, so one Newton step for
            // 1/|z| renormalizes to rounding level.
            for (xi, yi) in x.as_flattened_mut().iter_mut().zip(y.as_flattened_mut()) {
                let scale = three_halves - T::half() * (*xi * *xi + *yi * *yi);
                *xi *= scale;
                *yi *= scale;
            }
        }
        let mut finite = [true; L];
        for l in 0..L {
            let mut acc = total[l];
            for i in 0..m {
                acc += x[i][l] + y[i][l];
            }
            finite[l] = acc.is_finite();
        }
        RunResult { total, finite }
    }

    /// Integrates all lanes from zero phases over `grid`.
    pub fn run(
        &mut self,
        grid: &TimeGrid<T>,
        active: &[bool; L],
        observe: &mut Observe<'_, T, L>,
    ) -> RunResult<T, L> {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx512f") {
                // SAFETY: the CPU supports the enabled features.
                return unsafe { run_avx512(self, grid, active, observe) };
            }
            if std::is_x86_feature_detected!("avx2") {
                // SAFETY: as above.
                return unsafe { run_avx2(self, grid, active, observe) };
            }
        }
        self.run_impl(grid, active, observe)
    }
}

// Same code, compiled with wider vectors. No FMA is enabled, so the
// arithmetic is identical to the baseline build.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn run_avx2<T: Scalar, const L: usize>(
    k: &mut Kernel<T, L>,
    grid: &TimeGrid<T>,
    active: &[bool; L],
    observe: &mut Observe<'_, T, L>,
) -> RunResult<T, L> {
    k.run_impl(grid, active, observe)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn run_avx512<T: Scalar, const L: usize>(
    k: &mut Kernel<T, L>,
    grid: &TimeGrid<T>,
    active: &[bool; L],
    observe: &mut Observe<'_, T, L>,
) -> RunResult<T, L> {
    k.run_impl(grid, active, observe)
}

/// Phasor derivatives `k = f · (−y, x)` and frequencies `f` at state `(x, y)`.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn rhs<T: Scalar, const L: usize>(
    m: usize,
    omegas: &[[T; L]],
    coupling: &[[T; L]],
    x: &[[T; L]],
    y: &[[T; L]],
    kx: &mut [[T; L]],
    ky: &mut [[T; L]],
    freq: &mut [[T; L]],
) {
    for (i, row) in coupling.chunks_exact(m).enumerate() {
        let mut cs = [T::zero(); L];
        let mut ss = [T::zero(); L];
        for ((a, xj), yj) in row.iter().zip(x).zip(y) {
            for l in 0..L {
                cs[l] += a[l] * xj[l];
                ss[l] += a[l] * yj[l];
            }
        }
        let (xi, yi, om) = (&x[i], &y[i], &omegas[i]);
        let (kxi, kyi, fi) = (&mut kx[i], &mut ky[i], &mut freq[i]);
        for l in 0..L {
            let f = om[l] + xi[l] * ss[l] - yi[l] * cs[l];
            fi[l] = f;
            kxi[l] = -yi[l] * f;
            kyi[l] = xi[l] * f;
        }
    }
}

#[inline(always)]
fn stage<T: Scalar, const L: usize>(
    x: &[[T; L]],
    y: &[[T; L]],
    kx: &[[T; L]],
    ky: &[[T; L]],
    scale: T,
    sx: &mut [[T; L]],
    sy: &mut [[T; L]],
) {
    axpy(sx, x, kx, scale);
    axpy(sy, y, ky, scale);
}

/// `dst = src + scale · k`, elementwise over a contiguous buffer.
#[inline(always)]
fn axpy<T: Scalar, const L: usize>(dst: &mut [[T; L]], src: &[[T; L]], k: &[[T; L]], scale: T) {
    let (dst, src, k) = (dst.as_flattened_mut(), src.as_flattened(), k.as_flattened());
    for (d, (s, k)) in dst.iter_mut().zip(src.iter().zip(k)) {
        *d = *s + scale * *k;
    }
}

/// RK4 combination `v += sixth · (k1 + 2 (k2 + k3) + k4)`.
#[inline(always)]
fn update<T: Scalar, const L: usize>(
    v: &mut [[T; L]],
    k1: &[[T; L]],
    k2: &[[T; L]],
    k3: &[[T; L]],
    k4: &[[T; L]],
    sixth: T,
) {
    let two = T::two();
    let v = v.as_flattened_mut();
    let (k1, k2, k3, k4) = (
        k1.as_flattened(),
        k2.as_flattened(),
        k3.as_flattened(),
        k4.as_flattened(),
    );
    for (i, vi) in v.iter_mut().enumerate() {
        *vi += sixth * (k1[i] + two * (k2[i] + k3[i]) + k4[i]);
    }
}
