//! Euclidean two-proper-time kernel and its proper-time integral.
//!
//! The kernel is estimated as a ratio against the product of free kernels:
//! Brownian bridges carry the free kinetic weight exactly, so
//!
//! ```text
//!     K(S₁,S₂) = K₁⁰(S₁) K₂⁰(S₂) · E_bridge[ √det A · exp(−I_int/ħ) ]
//! ```
//!
//! and the unknown normalization constants of the lattice measure cancel.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::action::{action_terms_with_velocities, interaction_term, Mode, ModelParams};
use crate::grid::{Endpoints, GridSpec, Worldline};
use crate::kernel::{measure_determinants, CouplingOperator};
use crate::quadrature::{bessel_k, gauss_hermite_normal, integrate_gl, log_spaced, trapezoid_weights};
use crate::sampling::run_workers;
use crate::{FokkerError, Result, Vec4};

/// Interacting/free ratio estimate at fixed proper times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropagatorEstimate {
    pub ratio_mean: f64,
    pub ratio_stderr: f64,
    pub n_samples: usize,
    pub skipped: usize,
    pub free_reference: f64,
    pub value: f64,
}

impl PropagatorEstimate {
    fn from_ratio(ratio_mean: f64, ratio_stderr: f64, n_samples: usize, skipped: usize, free_reference: f64) -> Self {
        Self {
            ratio_mean,
            ratio_stderr,
            n_samples,
            skipped,
            free_reference,
            value: free_reference * ratio_mean,
        }
    }

    /// Exact free-limit estimate (ratio identically one).
    pub fn free(free_reference: f64, n_samples: usize) -> Self {
        Self::from_ratio(1.0, 0.0, n_samples.max(1), 0, free_reference)
    }

    pub fn value_stderr(&self) -> f64 {
        self.free_reference * self.ratio_stderr
    }
}

/// Sampling controls shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorConfig {
    pub n_steps1: usize,
    pub n_steps2: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            n_steps1: 8,
            n_steps2: 8,
            n_samples: 10_000,
            seed: 0x5eed,
            workers: 1,
        }
    }
}

/// Brownian bridge from `x_in` to `x_out`: Gaussian increments with
/// per-component variance `ħ Δs`, pinned at both ends. The node law is the
/// normalized free kinetic weight `exp(−Σ Δs v²/2ħ)`.
pub fn sample_bridge<const D: usize, R: Rng + ?Sized>(
    x_in: [f64; D],
    x_out: [f64; D],
    grid: GridSpec,
    hbar: f64,
    particle: u8,
    rng: &mut R,
) -> Result<Worldline<D>> {
    let n = grid.n_steps();
    let sigma = (hbar * grid.ds()).sqrt();
    let mut walk = vec![[0.0; D]; n + 1];
    for i in 1..=n {
        for c in 0..D {
            let z: f64 = rng.sample(StandardNormal);
            walk[i][c] = walk[i - 1][c] + sigma * z;
        }
    }
    let end = walk[n];
    let nodes = (0..=n)
        .map(|i| {
            if i == 0 {
                return x_in;
            }
            if i == n {
                return x_out;
            }
            let t = i as f64 / n as f64;
            std::array::from_fn(|c| x_in[c] + t * (x_out[c] - x_in[c]) + walk[i][c] - t * end[c])
        })
        .collect();
    Worldline::new(grid, nodes, particle)
}

/// Euclidean free kernel `(2πħS)^{−d/2} exp(−(|Δx|²/2S + m²S/2)/ħ)` in `d = x_in.len()` dimensions.
pub fn free_kernel_analytic(x_in: &[f64], x_out: &[f64], s: f64, m: f64, hbar: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(FokkerError::InvalidParameter {
            field: "S",
            reason: format!("proper time must be positive, got {s}"),
        });
    }
    if x_in.len() != x_out.len() {
        return Err(FokkerError::DimensionMismatch {
            expected: x_in.len(),
            got: x_out.len(),
        });
    }
    let d = x_in.len() as f64;
    let r2: f64 = x_in.iter().zip(x_out).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok((2.0 * PI * hbar * s).powf(-0.5 * d) * (-(r2 / (2.0 * s) + 0.5 * m * m * s) / hbar).exp())
}

/// Closed form of `∫_0^∞ dS` of the free kernel:
/// `2 (2πħ)^{−d/2} (m/r)^{d/2−1} K_{d/2−1}(m r/ħ)`.
pub fn free_proper_time_integral(r: f64, m: f64, hbar: f64, d: usize) -> Result<f64> {
    if !(r > 0.0) {
        return Err(FokkerError::InvalidParameter {
            field: "separation",
            reason: "the proper-time integral needs distinct endpoints".into(),
        });
    }
    if !(m > 0.0) {
        return Err(FokkerError::InvalidParameter {
            field: "mass",
            reason: "the proper-time integral diverges for massless particles".into(),
        });
    }
    let nu = 0.5 * d as f64 - 1.0;
    Ok(2.0 * (2.0 * PI * hbar).powf(-0.5 * d as f64) * (m / r).powf(nu) * bessel_k(nu, m * r / hbar))
}

fn require_euclidean(params: &ModelParams) -> Result<()> {
    params.validate()?;
    if params.mode != Mode::Euclidean {
        return Err(FokkerError::InvalidParameter {
            field: "mode",
            reason: "sampling is only defined in euclidean mode".into(),
        });
    }
    Ok(())
}

/// Weight of one sampled worldline pair: `√det A · exp(−I_int/ħ)`.
pub fn sample_weight(wl1: &Worldline, wl2: &Worldline, params: &ModelParams) -> Result<f64> {
    let op = CouplingOperator::build(wl1, wl2, params, 4)?;
    let dets = measure_determinants(&op)?;
    Ok(dets.sqrt_det_a * (-interaction_term(wl1, wl2, params) / params.hbar).exp())
}

/// Monte Carlo estimate of the two-proper-time kernel.
pub fn estimate_kernel(
    ep1: &Endpoints,
    ep2: &Endpoints,
    s1: f64,
    s2: f64,
    params: &ModelParams,
    config: &EstimatorConfig,
) -> Result<PropagatorEstimate> {
    require_euclidean(params)?;
    let free = free_kernel_analytic(&ep1.x_in, &ep1.x_out, s1, params.m1, params.hbar)?
        * free_kernel_analytic(&ep2.x_in, &ep2.x_out, s2, params.m2, params.hbar)?;
    if params.coupling == 0.0 {
        return Ok(PropagatorEstimate::free(free, config.n_samples));
    }
    if config.n_samples == 0 {
        return Err(FokkerError::InvalidParameter {
            field: "samples",
            reason: "at least one sample is required".into(),
        });
    }
    let g1 = GridSpec::new(config.n_steps1, s1)?;
    let g2 = GridSpec::new(config.n_steps2, s2)?;
    let acc = run_workers(config.seed, config.workers, config.n_samples, 1.0, |rng| {
        let wl1 = sample_bridge(ep1.x_in, ep1.x_out, g1, params.hbar, 1, rng)?;
        let wl2 = sample_bridge(ep2.x_in, ep2.x_out, g2, params.hbar, 2, rng)?;
        sample_weight(&wl1, &wl2, params)
    })?;
    Ok(PropagatorEstimate::from_ratio(
        acc.mean(),
        acc.stderr(),
        acc.count(),
        acc.skipped(),
        free,
    ))
}

/// Outcome of the Gaussian momentum-integration check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseSpaceReport {
    pub dim: usize,
    /// Multivariate Gaussian formula on the momentum quadratic form.
    pub closed_form: f64,
    /// `(2πħ)^{N/2} det(W)^{−1/2} √det A exp(−I_v/ħ)` with `I_v` from the action module.
    pub reduced: f64,
    /// Tensor Gauss–Hermite quadrature of the momentum integral.
    pub brute_force: f64,
    /// `det(2M)^{−1/2}` from the momentum quadratic form.
    pub det_factor: f64,
    /// The same factor rebuilt from the measure determinant.
    pub det_factor_from_measure: f64,
}

impl PhaseSpaceReport {
    pub fn max_relative_error(&self) -> f64 {
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        rel(self.brute_force, self.closed_form)
            .max(rel(self.reduced, self.closed_form))
            .max(rel(self.det_factor_from_measure, self.det_factor))
    }
}

/// Largest momentum dimension accepted by [`verify_phase_space_reduction`].
pub const PHASE_SPACE_DIM_CAP: usize = 8;

/// Integrates the discretized Euclidean phase-space weight
/// `exp(−(½ pᵀ(2M)p − i pᵀW v)/ħ)` over the momenta, with `2M = W L⁻¹`,
/// by the Gaussian formula and by brute-force quadrature, and compares both
/// with the configuration-space form `(2πħ)^{N/2} det(2M)^{−1/2} exp(−I/ħ)`.
///
/// Only the first `components` components of each 4-vector take part, so
/// `components * (n₁ + n₂)` must not exceed [`PHASE_SPACE_DIM_CAP`].
pub fn verify_phase_space_reduction(
    wl1: &Worldline,
    wl2: &Worldline,
    params: &ModelParams,
    components: usize,
    quadrature_order: usize,
) -> Result<PhaseSpaceReport> {
    require_euclidean(params)?;
    let (n1, n2) = (wl1.grid().n_steps(), wl2.grid().n_steps());
    let dim = components * (n1 + n2);
    if components == 0 || components > 4 {
        return Err(FokkerError::InvalidParameter {
            field: "components",
            reason: format!("must be in 1..=4, got {components}"),
        });
    }
    if dim > PHASE_SPACE_DIM_CAP {
        return Err(FokkerError::DimensionCap {
            dim,
            cap: PHASE_SPACE_DIM_CAP,
        });
    }
    let hbar = params.hbar;
    let op = CouplingOperator::build(wl1, wl2, params, components)?;
    let mask = |v: Vec<Vec4>| -> Vec<Vec4> {
        v.into_iter()
            .map(|x| std::array::from_fn(|c| if c < components { x[c] } else { 0.0 }))
            .collect()
    };
    let (v1, v2) = (mask(wl1.velocities()), mask(wl2.velocities()));

    // slot-major layout: index = slot * components + c
    let dense_l = op.dense();
    let weights: Vec<f64> = (0..n1 + n2)
        .flat_map(|s| {
            let ds = if s < n1 { wl1.grid().ds() } else { wl2.grid().ds() };
            std::iter::repeat_n(ds, components)
        })
        .collect();
    let velocity = DVector::from_iterator(dim, v1.iter().chain(&v2).flat_map(|v| v[..components].to_vec()));
    let w = DMatrix::from_diagonal(&DVector::from_vec(weights.clone()));
    let l_inv = dense_l
        .clone()
        .try_inverse()
        .ok_or(FokkerError::SingularOperator { condition: f64::INFINITY })?;
    let quad_form = &w * &l_inv;
    let linear = &w * &velocity;

    let norm = (2.0 * PI * hbar).powf(0.5 * dim as f64);
    let det_c = quad_form.clone().lu().determinant();
    if det_c <= 0.0 {
        return Err(FokkerError::NonPositiveDeterminant(det_c));
    }
    let det_factor = det_c.powf(-0.5);
    let exponent = linear.dot(&quad_form.clone().lu().solve(&linear).unwrap());
    let closed_form = norm * det_factor * (-0.5 * exponent / hbar).exp();

    let massless = ModelParams { m1: 0.0, m2: 0.0, ..*params };
    let action = action_terms_with_velocities(wl1, wl2, &v1, &v2, &massless)?.total();
    let det_w: f64 = weights.iter().product();
    let sqrt_det_a = measure_determinants(&op)?.sqrt_det_a;
    let det_factor_from_measure = det_w.powf(-0.5) * sqrt_det_a;
    let reduced = norm * det_factor_from_measure * (-action / hbar).exp();

    let brute_force = gaussian_fourier_quadrature(&quad_form, &linear, hbar, quadrature_order);

    Ok(PhaseSpaceReport {
        dim,
        closed_form,
        reduced,
        brute_force,
        det_factor,
        det_factor_from_measure,
    })
}

/// `∫ dᴺp exp(−pᵀCp/2ħ) cos(bᵀp/ħ)` by tensor-product Gauss–Hermite after
/// scaling each axis by its diagonal width. Cost grows as `orderᴺ`.
fn gaussian_fourier_quadrature(c: &DMatrix<f64>, b: &DVector<f64>, hbar: f64, order: usize) -> f64 {
    let n = c.nrows();
    let sigma: Vec<f64> = (0..n).map(|k| (hbar / c[(k, k)]).sqrt()).collect();
    let off = DMatrix::from_fn(n, n, |k, l| {
        if k == l {
            0.0
        } else {
            sigma[k] * sigma[l] * c[(k, l)] / hbar
        }
    });
    let beta: Vec<f64> = (0..n).map(|k| sigma[k] * b[k] / hbar).collect();
    let (z, w) = gauss_hermite_normal(order);

    struct Walk<'a> {
        off: &'a DMatrix<f64>,
        beta: &'a [f64],
        z: &'a [f64],
        w: &'a [f64],
    }

    impl Walk<'_> {
        // cross[l] = Σ_{j<k} off[l,j] z_j for l ≥ k
        fn go(&self, k: usize, quad: f64, phase: f64, weight: f64, cross: &mut Vec<f64>) -> f64 {
            let n = self.beta.len();
            if k == n {
                return weight * (-0.5 * quad).exp() * phase.cos();
            }
            let mut total = 0.0;
            for (zk, wk) in self.z.iter().zip(self.w) {
                let q = quad + 2.0 * zk * cross[k];
                let ph = phase + self.beta[k] * zk;
                for l in k + 1..n {
                    cross[l] += self.off[(l, k)] * zk;
                }
                total += self.go(k + 1, q, ph, weight * wk, cross);
                for l in k + 1..n {
                    cross[l] -= self.off[(l, k)] * zk;
                }
            }
            total
        }
    }

    let walk = Walk {
        off: &off,
        beta: &beta,
        z: &z,
        w: &w,
    };
    let expectation = walk.go(0, 0.0, 0.0, 1.0, &mut vec![0.0; n]);
    let scale: f64 = sigma.iter().product::<f64>() * (2.0 * PI).powf(0.5 * n as f64);
    scale * expectation
}

/// Log-spaced proper-time abscissae for both particles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProperTimeGrid {
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
}

impl ProperTimeGrid {
    pub fn new(s_min: f64, s_max: f64, n1: usize, n2: usize) -> Result<Self> {
        if !(s_min > 0.0 && s_max > s_min && s_max.is_finite()) {
            return Err(FokkerError::InvalidParameter {
                field: "pt_min",
                reason: format!("need 0 < pt_min < pt_max, got {s_min}, {s_max}"),
            });
        }
        if n1 < 3 || n2 < 3 {
            return Err(FokkerError::InvalidParameter {
                field: "pt_points",
                reason: "at least three points per axis".into(),
            });
        }
        Ok(Self {
            s1: log_spaced(s_min, s_max, n1),
            s2: log_spaced(s_min, s_max, n2),
        })
    }

    /// Grid with twice the density (points interleaved in `ln S`).
    pub fn refined(&self) -> Self {
        let refine = |s: &[f64]| log_spaced(s[0], s[s.len() - 1], 2 * s.len() - 1);
        Self {
            s1: refine(&self.s1),
            s2: refine(&self.s2),
        }
    }
}

/// Trapezoid weights in `u = ln S` for `∫ f(S) dS = ∫ S f(S) du`.
fn log_weights(s: &[f64]) -> Vec<f64> {
    let u: Vec<f64> = s.iter().map(|x| x.ln()).collect();
    trapezoid_weights(&u).iter().zip(s).map(|(w, s)| w * s).collect()
}

/// Every other point, keeping both ends.
fn coarse_indices(n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).step_by(2).collect();
    if *idx.last().unwrap() != n - 1 {
        idx.push(n - 1);
    }
    idx
}

/// Free kernel mass outside `[s_min, s_max]`.
fn free_tail(ep: &Endpoints, m: f64, hbar: f64, s_min: f64, s_max: f64) -> Result<f64> {
    let f = |s: f64| free_kernel_analytic(&ep.x_in, &ep.x_out, s, m, hbar).unwrap_or(0.0);
    // below s_min in u = ln S; above s_max directly in S
    let lower = integrate_gl(|u| u.exp() * f(u.exp()), s_min.ln() - 40.0, s_min.ln(), 80, 16);
    let span = 80.0 * hbar / (m * m) + 10.0 * s_max;
    let upper = integrate_gl(f, s_max, s_max + span, 200, 16);
    Ok(lower + upper)
}

/// Proper-time integrated kernel with its error budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProperTimeResult {
    pub value: f64,
    pub error: f64,
    pub quadrature_error: f64,
    pub statistical_error: f64,
    pub tail: f64,
    pub points: Vec<(f64, f64, PropagatorEstimate)>,
}

/// `∫∫ dS₁ dS₂ K(S₁,S₂)` by trapezoid quadrature in `ln S` over the grid.
///
/// Outside the grid the kernel is replaced by the free envelope scaled with
/// the mean ratio on the grid boundary. Every grid point reuses the same
/// seed, so the statistical errors are fully correlated and add linearly.
pub fn proper_time_integral(
    ep1: &Endpoints,
    ep2: &Endpoints,
    params: &ModelParams,
    ptg: &ProperTimeGrid,
    config: &EstimatorConfig,
) -> Result<ProperTimeResult> {
    require_euclidean(params)?;
    if !(params.m1 > 0.0 && params.m2 > 0.0) {
        return Err(FokkerError::InvalidParameter {
            field: if params.m1 > 0.0 { "m2" } else { "m1" },
            reason: "proper-time integral needs positive masses".into(),
        });
    }
    let (n1, n2) = (ptg.s1.len(), ptg.s2.len());
    let mut points = Vec::with_capacity(n1 * n2);
    for &s1 in &ptg.s1 {
        for &s2 in &ptg.s2 {
            points.push((s1, s2, estimate_kernel(ep1, ep2, s1, s2, params, config)?));
        }
    }
    let at = |i: usize, j: usize| &points[i * n2 + j].2;

    let integrate = |i_idx: &[usize], j_idx: &[usize]| {
        let s1: Vec<f64> = i_idx.iter().map(|&i| ptg.s1[i]).collect();
        let s2: Vec<f64> = j_idx.iter().map(|&j| ptg.s2[j]).collect();
        let (w1, w2) = (log_weights(&s1), log_weights(&s2));
        let mut value = 0.0;
        let mut stat = 0.0;
        let mut free = 0.0;
        for (a, &i) in i_idx.iter().enumerate() {
            for (b, &j) in j_idx.iter().enumerate() {
                let e = at(i, j);
                value += w1[a] * w2[b] * e.value;
                stat += w1[a] * w2[b] * e.value_stderr();
                free += w1[a] * w2[b] * e.free_reference;
            }
        }
        (value, stat, free)
    };
    let all1: Vec<usize> = (0..n1).collect();
    let all2: Vec<usize> = (0..n2).collect();
    let (grid_value, statistical_error, free_grid) = integrate(&all1, &all2);
    let (coarse_value, _, _) = integrate(&coarse_indices(n1), &coarse_indices(n2));
    let quadrature_error = (grid_value - coarse_value).abs();

    let edge: Vec<f64> = (0..n1)
        .flat_map(|i| (0..n2).map(move |j| (i, j)))
        .filter(|&(i, j)| i == 0 || j == 0 || i == n1 - 1 || j == n2 - 1)
        .map(|(i, j)| at(i, j).ratio_mean)
        .collect();
    let edge_ratio = edge.iter().sum::<f64>() / edge.len() as f64;
    let edge_spread = edge.iter().map(|r| (r - edge_ratio).abs()).fold(0.0, f64::max);

    let (lo, hi) = (ptg.s1[0], ptg.s1[n1 - 1]);
    let (lo2, hi2) = (ptg.s2[0], ptg.s2[n2 - 1]);
    let tail1 = free_tail(ep1, params.m1, params.hbar, lo, hi)?;
    let tail2 = free_tail(ep2, params.m2, params.hbar, lo2, hi2)?;
    let grid_weights1 = log_weights(&ptg.s1);
    let grid_weights2 = log_weights(&ptg.s2);
    let f1: f64 = ptg
        .s1
        .iter()
        .zip(&grid_weights1)
        .map(|(&s, w)| w * free_kernel_analytic(&ep1.x_in, &ep1.x_out, s, params.m1, params.hbar).unwrap())
        .sum();
    let f2: f64 = ptg
        .s2
        .iter()
        .zip(&grid_weights2)
        .map(|(&s, w)| w * free_kernel_analytic(&ep2.x_in, &ep2.x_out, s, params.m2, params.hbar).unwrap())
        .sum();
    debug_assert!((f1 * f2 - free_grid).abs() <= 1e-9 * free_grid.abs().max(1e-300));
    let free_tail_mass = (f1 + tail1) * (f2 + tail2) - f1 * f2;
    let tail = edge_ratio * free_tail_mass;
    let tail_error = free_tail_mass.abs() * edge_spread;

    Ok(ProperTimeResult {
        value: grid_value + tail,
        error: quadrature_error + statistical_error + tail_error,
        quadrature_error,
        statistical_error,
        tail,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn euclid(coupling: f64) -> ModelParams {
        ModelParams::new(1.0, 1.0, coupling, 1.0, 1.0, Mode::Euclidean).unwrap()
    }

    #[test]
    fn bridge_without_interior_nodes_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GridSpec::new(1, 1.0).unwrap();
        let wl = sample_bridge([0.0; 4], [0.0; 4], g, 1.0, 1, &mut rng).unwrap();
        assert_eq!(wl.nodes(), &[[0.0; 4], [0.0; 4]]);
    }

    #[test]
    fn bridge_midpoint_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = GridSpec::new(4, 1.0).unwrap();
        let (x_in, x_out) = ([0.0, 1.0, -1.0], [2.0, 1.0, 3.0]);
        let n = 100_000;
        let mut sum = [0.0; 3];
        let mut sum_sq = [0.0; 3];
        for _ in 0..n {
            let wl = sample_bridge(x_in, x_out, g, 1.0, 1, &mut rng).unwrap();
            let mid = wl.nodes()[2];
            for c in 0..3 {
                sum[c] += mid[c];
                sum_sq[c] += mid[c] * mid[c];
            }
        }
        for c in 0..3 {
            let mean = sum[c] / n as f64;
            let var = sum_sq[c] / n as f64 - mean * mean;
            let expected_mean = 0.5 * (x_in[c] + x_out[c]);
            // bridge variance S/4 ħ at the midpoint
            assert!((mean - expected_mean).abs() < 3.0 * (0.25 / n as f64).sqrt());
            // the sample variance of a Gaussian has sd σ²√(2/n)
            assert!((var - 0.25).abs() < 3.0 * 0.25 * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn free_kernel_examples() {
        let k = free_kernel_analytic(&[0.0; 4], &[0.0; 4], 1.0, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(k, 0.025_330_295_91, epsilon = 1e-11);
        let x = [0.3, 0.3, 0.3, 0.3];
        let k4 = free_kernel_analytic(&[0.0; 4], &x, 0.7, 0.0, 1.3).unwrap();
        let k1 = free_kernel_analytic(&[0.0], &[0.3], 0.7, 0.0, 1.3).unwrap();
        assert_relative_eq!(k4, k1.powi(4), max_relative = 1e-14);
        assert!(free_kernel_analytic(&[0.0], &[0.0], 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn free_proper_time_integral_matches_quadrature() {
        for (r, m, d) in [(0.5, 1.0, 4), (1.3, 0.7, 4), (1.0, 1.0, 3), (0.8, 2.0, 1)] {
            let closed = free_proper_time_integral(r, m, 1.0, d).unwrap();
            let x_out: Vec<f64> = (0..d).map(|c| if c == 0 { r } else { 0.0 }).collect();
            let f = |u: f64| {
                let s = u.exp();
                s * free_kernel_analytic(&vec![0.0; d], &x_out, s, m, 1.0).unwrap()
            };
            let numeric = integrate_gl(f, -25.0, 8.0, 400, 16);
            assert_relative_eq!(closed, numeric, max_relative = 1e-10);
        }
    }

    #[test]
    fn free_estimate_is_exact_product() {
        let ep1 = Endpoints::new([0.0; 4], [1.0, 0.2, 0.0, 0.0]).unwrap();
        let ep2 = Endpoints::new([0.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.5, 0.0]).unwrap();
        let p = euclid(0.0);
        let est = estimate_kernel(&ep1, &ep2, 0.8, 1.2, &p, &EstimatorConfig::default()).unwrap();
        let f1 = free_kernel_analytic(&ep1.x_in, &ep1.x_out, 0.8, 1.0, 1.0).unwrap();
        let f2 = free_kernel_analytic(&ep2.x_in, &ep2.x_out, 1.2, 1.0, 1.0).unwrap();
        assert_eq!(est.value, f1 * f2);
        assert_eq!((est.ratio_mean, est.ratio_stderr), (1.0, 0.0));
    }

    #[test]
    fn minkowski_sampling_is_rejected() {
        let ep = Endpoints::new([0.0; 4], [1.0, 0.0, 0.0, 0.0]).unwrap();
        let p = euclid(0.1).with_mode(Mode::Minkowski);
        assert!(estimate_kernel(&ep, &ep, 1.0, 1.0, &p, &EstimatorConfig::default()).is_err());
    }

    #[test]
    fn estimator_is_reproducible_and_worker_dependent_only_by_stream() {
        let ep1 = Endpoints::new([0.0; 4], [1.0, 0.0, 0.0, 0.0]).unwrap();
        let ep2 = Endpoints::new([0.0, 0.5, 0.0, 0.0], [1.0, 0.5, 0.0, 0.0]).unwrap();
        let cfg = EstimatorConfig {
            n_steps1: 4,
            n_steps2: 4,
            n_samples: 2000,
            seed: 9,
            workers: 3,
        };
        let p = euclid(0.2);
        let a = estimate_kernel(&ep1, &ep2, 1.0, 1.0, &p, &cfg).unwrap();
        let b = estimate_kernel(&ep1, &ep2, 1.0, 1.0, &p, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.ratio_stderr > 0.0);
        assert_eq!(a.n_samples, 2000);
    }

    #[test]
    fn phase_space_scalar_gaussian() {
        let g = GridSpec::new(1, 0.5).unwrap();
        let wl1 = Worldline::new(g, vec![[0.0; 4], [0.3, 0.0, 0.0, 0.0]], 1).unwrap();
        let wl2 = Worldline::new(g, vec![[1.0; 4], [1.0; 4]], 2).unwrap();
        let r = verify_phase_space_reduction(&wl1, &wl2, &euclid(0.0), 1, 20).unwrap();
        // ∫dp e^{−Δs p²/2} cos(Δs v p) = √(2π/Δs) e^{−Δs v²/2}, times √(2π/Δs) for the static line
        let v: f64 = 0.6;
        let expected = (2.0 * PI / 0.5) * (-0.5 * 0.5 * v * v).exp();
        assert_relative_eq!(r.closed_form, expected, max_relative = 1e-13);
        assert_relative_eq!(r.brute_force, expected, max_relative = 1e-12);
        assert_relative_eq!(r.reduced, expected, max_relative = 1e-13);
    }

    #[test]
    fn phase_space_dimension_cap() {
        let g = GridSpec::new(2, 1.0).unwrap();
        let wl = Worldline::new(g, vec![[0.0; 4]; 3], 1).unwrap();
        let wl2 = wl.clone().with_particle(2).unwrap();
        assert!(matches!(
            verify_phase_space_reduction(&wl, &wl2, &euclid(0.1), 3, 6),
            Err(FokkerError::DimensionCap { .. })
        ));
    }

    #[test]
    fn proper_time_grid_validation() {
        assert!(ProperTimeGrid::new(0.0, 1.0, 5, 5).is_err());
        assert!(ProperTimeGrid::new(1.0, 0.5, 5, 5).is_err());
        assert!(ProperTimeGrid::new(0.1, 1.0, 2, 5).is_err());
        let g = ProperTimeGrid::new(0.01, 10.0, 5, 7).unwrap();
        assert_eq!(g.refined().s1.len(), 9);
        assert_eq!(g.refined().s2.len(), 13);
    }

    #[test]
    fn massless_proper_time_integral_is_rejected() {
        let ep = Endpoints::new([0.0; 4], [1.0, 0.0, 0.0, 0.0]).unwrap();
        let p = ModelParams::new(0.0, 1.0, 0.0, 1.0, 1.0, Mode::Euclidean).unwrap();
        let g = ProperTimeGrid::new(0.01, 10.0, 5, 5).unwrap();
        assert!(proper_time_integral(&ep, &ep, &p, &g, &EstimatorConfig::default()).is_err());
    }
}
