//! Modified propagator: Minkowski time coordinates as clocks.
//!
//! Each particle carries a time coordinate `x₀` and a self-energy `P` along
//! its proper-time grid, tied together by
//!
//! ```text
//!     ẋ₁₀ = √(2P₁),   Ṗ₁ = −√(2P₁) ẋ₁ₖ F₁ₖ
//!     x₂₀' = √(2P₂),  P₂' = +√(2P₂) x₂ₗ' F₂ₗ
//! ```
//!
//! where the forces come from the derivative of the regularized light-cone
//! delta. Once the flow is solved, the total proper time of each particle is
//! fixed by shooting to a prescribed out-time, which removes the proper-time
//! integration from the modified kernel.

use serde::Serialize;

use crate::action::{dot3, interval_squared, modified_action, regularized_delta_derivative, ModelParams, Mode};
use crate::grid::{GridSpec, Worldline};
use crate::kernel::{build_spatial_coupling_operator, measure_determinants};
use crate::propagator::{free_kernel_analytic, sample_bridge, EstimatorConfig, PropagatorEstimate};
use crate::sampling::run_workers;
use crate::{FokkerError, Result, Vec4};

/// Time coordinate and self-energy at every node of one particle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintState {
    pub x0: Vec<f64>,
    pub p: Vec<f64>,
}

impl ConstraintState {
    /// Free flow: constant `P`, `x₀` affine with slope `√(2P)`.
    pub fn free(grid: &GridSpec, boundary: ClockBoundary) -> Self {
        let rate = (2.0 * boundary.p_in).sqrt();
        Self {
            x0: (0..=grid.n_steps())
                .map(|i| boundary.x0_in + rate * grid.node_time(i))
                .collect(),
            p: vec![boundary.p_in; grid.n_steps() + 1],
        }
    }

    /// Slot averages of `P`.
    pub fn slot_energies(&self) -> Vec<f64> {
        self.p.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// `sup |Δx₀/Δs − √(2P̄)|` over slots.
    pub fn on_shell_residual(&self, ds: f64) -> f64 {
        self.x0
            .windows(2)
            .zip(self.slot_energies())
            .map(|(w, p)| ((w[1] - w[0]) / ds - (2.0 * p).sqrt()).abs())
            .fold(0.0, f64::max)
    }

    pub fn x0_out(&self) -> f64 {
        self.x0[self.x0.len() - 1]
    }

    pub fn p_out(&self) -> f64 {
        self.p[self.p.len() - 1]
    }
}

/// Initial data of one particle's clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClockBoundary {
    pub x0_in: f64,
    pub p_in: f64,
}

/// Spatial forces at the nodes of both worldlines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForceField {
    pub first: Vec<[f64; 3]>,
    pub second: Vec<[f64; 3]>,
}

impl ForceField {
    fn blend(&self, other: &Self, keep: f64) -> Self {
        let mix = |a: &[[f64; 3]], b: &[[f64; 3]]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| std::array::from_fn(|c| keep * x[c] + (1.0 - keep) * y[c]))
                .collect()
        };
        Self {
            first: mix(&self.first, &other.first),
            second: mix(&self.second, &other.second),
        }
    }
}

/// Lattice forces. At node `i` of particle 1,
/// `F₁ₖ = 2e₁e₂ Σⱼ Δs₂ δ_ε'(s₁₂²)[(x₁₀ − x₂₀)v₂ₖ − (x₁ₖ − x₂ₖ)v₂₀]` with particle 2
/// at slot midpoints; `F₂ₗ` mirrors it with `(x₁₀ − x₂₀)v₁ₗ − (x₁ₗ − x₂ₗ)v₁₀`.
pub fn compute_forces(wl1: &Worldline, wl2: &Worldline, params: &ModelParams) -> ForceField {
    let lambda = params.coupling;
    if lambda == 0.0 {
        return ForceField {
            first: vec![[0.0; 3]; wl1.nodes().len()],
            second: vec![[0.0; 3]; wl2.nodes().len()],
        };
    }
    let eps = params.delta_width;
    let one_side = |nodes: &[Vec4], other_mid: &[Vec4], other_vel: &[Vec4], other_ds: f64, sign: f64| {
        nodes
            .iter()
            .map(|x| {
                let mut f = [0.0; 3];
                for (y, v) in other_mid.iter().zip(other_vel) {
                    let d = regularized_delta_derivative(interval_squared(x, y, params.mode).value(), eps);
                    // (x₁₀ − x₂₀) with the node owner's sign convention
                    let dt = sign * (x[0] - y[0]);
                    for k in 0..3 {
                        let dk = sign * (x[k + 1] - y[k + 1]);
                        f[k] += d * (dt * v[k + 1] - dk * v[0]);
                    }
                }
                f.map(|c| 2.0 * lambda * other_ds * c)
            })
            .collect()
    };
    ForceField {
        first: one_side(wl1.nodes(), &wl2.midpoints(), &wl2.velocities(), wl2.grid().ds(), 1.0),
        second: one_side(wl2.nodes(), &wl1.midpoints(), &wl1.velocities(), wl1.grid().ds(), -1.0),
    }
}

/// Fixed-point controls for [`solve_constraints`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Stop when successive `x₀` iterates differ by less than this (sup norm).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Weight of the freshly computed forces in each update.
    pub relaxation: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 200,
            relaxation: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintSolution {
    pub first: ConstraintState,
    pub second: ConstraintState,
    pub iterations: usize,
    pub residual: f64,
}

/// Integrates one particle's clock under frozen node forces. `P` advances by
/// classical RK4 with the force linearly interpolated inside each slot;
/// `x₀` advances by the lattice on-shell relation `Δx₀ = Δs √(2P̄)`.
fn integrate_clock(
    spatial: &Worldline<3>,
    forces: &[[f64; 3]],
    boundary: ClockBoundary,
    sign: f64,
    particle: usize,
) -> Result<ConstraintState> {
    let ds = spatial.grid().ds();
    let velocities = spatial.velocities();
    let n = velocities.len();
    let mut x0 = Vec::with_capacity(n + 1);
    let mut p = Vec::with_capacity(n + 1);
    x0.push(boundary.x0_in);
    p.push(boundary.p_in);
    for (i, v) in velocities.iter().enumerate() {
        let (g0, g1) = (dot3(v, &forces[i]), dot3(v, &forces[i + 1]));
        let g = |t: f64| g0 + (g1 - g0) * t / ds;
        let rhs = |t: f64, e: f64| -> Result<f64> {
            if e <= 0.0 {
                return Err(FokkerError::TurningPoint { particle, node: i });
            }
            Ok(sign * (2.0 * e).sqrt() * g(t))
        };
        let e = p[i];
        let k1 = rhs(0.0, e)?;
        let k2 = rhs(0.5 * ds, e + 0.5 * ds * k1)?;
        let k3 = rhs(0.5 * ds, e + 0.5 * ds * k2)?;
        let k4 = rhs(ds, e + ds * k3)?;
        let next = e + ds / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if next <= 0.0 {
            return Err(FokkerError::TurningPoint { particle, node: i + 1 });
        }
        x0.push(x0[i] + ds * (e + next).sqrt());
        p.push(next);
    }
    Ok(ConstraintState { x0, p })
}

/// Solves the coupled clock equations of both particles by relaxed
/// fixed-point iteration on the forces.
pub fn solve_constraints(
    wl1: &Worldline<3>,
    wl2: &Worldline<3>,
    params: &ModelParams,
    boundary: [ClockBoundary; 2],
    options: &SolverOptions,
) -> Result<ConstraintSolution> {
    for b in boundary {
        if !(b.p_in > 0.0) {
            return Err(FokkerError::InvalidParameter {
                field: "P_in",
                reason: format!("initial self-energy must be positive, got {}", b.p_in),
            });
        }
    }
    let mut first = ConstraintState::free(wl1.grid(), boundary[0]);
    let mut second = ConstraintState::free(wl2.grid(), boundary[1]);
    let mut used: Option<ForceField> = None;
    let mut residual = f64::INFINITY;
    for iteration in 1..=options.max_iterations {
        let fresh = compute_forces(&wl1.with_time(&first.x0)?, &wl2.with_time(&second.x0)?, params);
        let forces = match &used {
            None => fresh,
            Some(prev) => fresh.blend(prev, options.relaxation),
        };
        let next1 = integrate_clock(wl1, &forces.first, boundary[0], -1.0, 1)?;
        let next2 = integrate_clock(wl2, &forces.second, boundary[1], 1.0, 2)?;
        residual = sup_diff(&next1.x0, &first.x0).max(sup_diff(&next2.x0, &second.x0));
        first = next1;
        second = next2;
        used = Some(forces);
        if residual < options.tolerance {
            return Ok(ConstraintSolution {
                first,
                second,
                iterations: iteration,
                residual,
            });
        }
    }
    Err(FokkerError::NonConvergence {
        iterations: options.max_iterations,
        residual,
    })
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A spatial path whose node positions depend on its total proper time:
/// `base + √(ħS) · shape`. A zero shape gives a fixed path.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPath {
    pub base: Vec<[f64; 3]>,
    pub shape: Vec<[f64; 3]>,
    pub hbar: f64,
    pub particle: u8,
}

impl SpatialPath {
    /// A path with fixed nodes.
    pub fn fixed(wl: &Worldline<3>) -> Self {
        Self {
            base: wl.nodes().to_vec(),
            shape: vec![[0.0; 3]; wl.nodes().len()],
            hbar: 0.0,
            particle: wl.particle_index(),
        }
    }

    pub fn n_steps(&self) -> usize {
        self.base.len() - 1
    }

    pub fn at(&self, s: f64) -> Result<Worldline<3>> {
        let grid = GridSpec::new(self.n_steps(), s)?;
        let scale = (self.hbar * s).sqrt();
        let nodes = self
            .base
            .iter()
            .zip(&self.shape)
            .map(|(b, z)| std::array::from_fn(|c| b[c] + scale * z[c]))
            .collect();
        Worldline::new(grid, nodes, self.particle)
    }
}

/// Everything needed to run the clock flow at trial proper times.
#[derive(Debug, Clone)]
pub struct ClockProblem {
    pub paths: [SpatialPath; 2],
    pub boundary: [ClockBoundary; 2],
    pub params: ModelParams,
    pub options: SolverOptions,
}

impl ClockProblem {
    /// Solved clocks at total proper times `(s1, s2)`.
    pub fn forward(&self, s1: f64, s2: f64) -> Result<ConstraintSolution> {
        let wl1 = self.paths[0].at(s1)?;
        let wl2 = self.paths[1].at(s2)?;
        solve_constraints(&wl1, &wl2, &self.params, self.boundary, &self.options)
    }

    fn out_time(&self, particle: usize, s: f64, partner_s: f64) -> Result<f64> {
        let sol = if particle == 1 {
            self.forward(s, partner_s)?
        } else {
            self.forward(partner_s, s)?
        };
        Ok(if particle == 1 { sol.first.x0_out() } else { sol.second.x0_out() })
    }
}

/// Finds the total proper time at which `particle`'s clock reads `target`,
/// with the partner's proper time held at `partner_s`. Bisection on
/// `(0, s_max]` followed by secant polishing; `|x₀(S) − target| < tolerance`.
pub fn shoot_proper_time(
    problem: &ClockProblem,
    particle: usize,
    partner_s: f64,
    target: f64,
    s_max: f64,
    tolerance: f64,
) -> Result<f64> {
    let x0_in = problem.boundary[particle - 1].x0_in;
    let mut tight = problem.clone();
    tight.options.tolerance = tight.options.tolerance.min(1e-3 * tolerance);
    let f = |s: f64| -> Result<f64> { Ok(tight.out_time(particle, s, partner_s)? - target) };

    let (mut lo, mut f_lo) = (0.0, x0_in - target);
    let (mut hi, mut f_hi) = (s_max, f(s_max)?);
    if !(f_lo < 0.0 && f_hi >= 0.0) {
        return Err(FokkerError::NotBracketed { target, s_max });
    }
    // bisection to a narrow bracket, then secant steps kept inside it
    for _ in 0..200 {
        if f_hi.abs() < tolerance {
            return Ok(hi);
        }
        let secant = lo - f_lo * (hi - lo) / (f_hi - f_lo);
        let narrow = hi - lo < 1e-3 * s_max;
        let s = if narrow && secant > lo && secant < hi {
            secant
        } else {
            0.5 * (lo + hi)
        };
        let fs = f(s)?;
        if fs.abs() < tolerance {
            return Ok(s);
        }
        if fs < 0.0 {
            if narrow && fs <= f_lo {
                return Err(FokkerError::TurningPoint { particle, node: 0 });
            }
            lo = s;
            f_lo = fs;
        } else {
            hi = s;
            f_hi = fs;
        }
    }
    Err(FokkerError::NonConvergence {
        iterations: 200,
        residual: f_hi.abs().min(f_lo.abs()),
    })
}

/// Proper times of both particles reaching their out-times, alternating
/// one-particle shots until both hold.
pub fn shoot_both(
    problem: &ClockProblem,
    targets: [f64; 2],
    s_max: f64,
    tolerance: f64,
) -> Result<(f64, f64, ConstraintSolution)> {
    let guess = |k: usize| (targets[k] - problem.boundary[k].x0_in) / (2.0 * problem.boundary[k].p_in).sqrt();
    let mut s2 = guess(1).clamp(0.0, s_max);
    for _ in 0..50 {
        let s1 = shoot_proper_time(problem, 1, s2, targets[0], s_max, tolerance)?;
        s2 = shoot_proper_time(problem, 2, s1, targets[1], s_max, tolerance)?;
        let mut tight = problem.clone();
        tight.options.tolerance = tight.options.tolerance.min(1e-3 * tolerance);
        let sol = tight.forward(s1, s2)?;
        if (sol.first.x0_out() - targets[0]).abs() < tolerance && (sol.second.x0_out() - targets[1]).abs() < tolerance {
            return Ok((s1, s2, sol));
        }
    }
    Err(FokkerError::NonConvergence {
        iterations: 50,
        residual: f64::NAN,
    })
}

/// Spatial boundary data and clock data of one particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModifiedEndpoints {
    pub x_in: [f64; 3],
    pub x_out: [f64; 3],
    pub clock: ClockBoundary,
    pub x0_out: f64,
}

impl ModifiedEndpoints {
    /// Proper time of the free (linear) clock.
    pub fn free_proper_time(&self) -> f64 {
        (self.x0_out - self.clock.x0_in) / (2.0 * self.clock.p_in).sqrt()
    }

    fn free_spatial_kernel(&self, s: f64, hbar: f64) -> Result<f64> {
        free_kernel_analytic(&self.x_in, &self.x_out, s, 0.0, hbar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModifiedEstimate {
    pub estimate: PropagatorEstimate,
    pub free_s1: f64,
    pub free_s2: f64,
    pub mean_s1: f64,
    pub mean_s2: f64,
    pub mean_p1_out: f64,
    pub mean_p2_out: f64,
}

/// Monte Carlo estimate of the modified kernel.
///
/// Spatial paths are bridges whose fluctuation is drawn once per sample in
/// unit proper time and rescaled by `√(ħS)`. For each sample the clocks are
/// solved, both proper times are fixed by shooting to the out-times, and the
/// weight is
///
/// ```text
///     K₁ˢ(S₁) K₂ˢ(S₂) √det Ã exp(−(Ĩ + ½Σ Δs v²)/ħ)
/// ```
///
/// with `Kˢ` the massless spatial free kernels (which carry the spatial
/// kinetic term) and `Ĩ` the lattice modified action. The ratio is taken
/// against the same expression on the free clocks.
pub fn estimate_modified_kernel(
    ep: [ModifiedEndpoints; 2],
    params: &ModelParams,
    config: &EstimatorConfig,
    s_max: f64,
) -> Result<ModifiedEstimate> {
    params.validate()?;
    if params.mode != Mode::Euclidean {
        return Err(FokkerError::InvalidParameter {
            field: "mode",
            reason: "sampling is only defined in euclidean mode".into(),
        });
    }
    if !(params.m1 > 0.0 && params.m2 > 0.0) {
        return Err(FokkerError::InvalidParameter {
            field: if params.m1 > 0.0 { "m2" } else { "m1" },
            reason: "the modified kernel needs positive masses".into(),
        });
    }
    let hbar = params.hbar;
    let free_s = [ep[0].free_proper_time(), ep[1].free_proper_time()];
    for (k, s) in free_s.iter().enumerate() {
        if !(*s > 0.0 && *s < s_max) {
            return Err(FokkerError::NotBracketed {
                target: ep[k].x0_out,
                s_max,
            });
        }
    }
    let masses = [params.m1, params.m2];
    let mut reference = 1.0;
    for k in 0..2 {
        let s = free_s[k];
        reference *= ep[k].free_spatial_kernel(s, hbar)?
            * (-0.5 * (2.0 * ep[k].clock.p_in + masses[k] * masses[k]) * s / hbar).exp();
    }
    let steps = [config.n_steps1, config.n_steps2];
    let linear = |k: usize| -> Vec<[f64; 3]> {
        let n = steps[k];
        (0..=n)
            .map(|i| {
                let t = i as f64 / n as f64;
                std::array::from_fn(|c| ep[k].x_in[c] + t * (ep[k].x_out[c] - ep[k].x_in[c]))
            })
            .collect()
    };
    let bases = [linear(0), linear(1)];

    let sample_once = |rng: &mut dyn rand::RngCore| -> Result<(f64, [f64; 4])> {
        let mut shapes = Vec::with_capacity(2);
        for k in 0..2 {
            let unit = GridSpec::new(steps[k], 1.0)?;
            let wl = sample_bridge([0.0; 3], [0.0; 3], unit, 1.0, (k + 1) as u8, rng)?;
            shapes.push(wl.nodes().to_vec());
        }
        let problem = ClockProblem {
            paths: [
                SpatialPath {
                    base: bases[0].clone(),
                    shape: shapes[0].clone(),
                    hbar,
                    particle: 1,
                },
                SpatialPath {
                    base: bases[1].clone(),
                    shape: shapes[1].clone(),
                    hbar,
                    particle: 2,
                },
            ],
            boundary: [ep[0].clock, ep[1].clock],
            params: *params,
            options: SolverOptions::default(),
        };
        let (s1, s2, sol) = if params.coupling == 0.0 {
            let sol = problem.forward(free_s[0], free_s[1])?;
            (free_s[0], free_s[1], sol)
        } else {
            shoot_both(&problem, [ep[0].x0_out, ep[1].x0_out], s_max, 1e-8)?
        };
        let wl1 = problem.paths[0].at(s1)?;
        let wl2 = problem.paths[1].at(s2)?;
        let action = modified_action(&wl1, &wl2, &sol.first, &sol.second, params)?;
        let spatial_kinetic = |wl: &Worldline<3>| {
            0.5 * wl.grid().ds() * wl.velocities().iter().map(|v| dot3(v, v)).sum::<f64>()
        };
        let reduced = action + spatial_kinetic(&wl1) + spatial_kinetic(&wl2);
        let full1 = wl1.with_time(&sol.first.x0)?;
        let full2 = wl2.with_time(&sol.second.x0)?;
        let sqrt_det = if params.coupling == 0.0 {
            1.0
        } else {
            measure_determinants(&build_spatial_coupling_operator(&full1, &full2, params)?)?.sqrt_det_a
        };
        let w = ep[0].free_spatial_kernel(s1, hbar)?
            * ep[1].free_spatial_kernel(s2, hbar)?
            * sqrt_det
            * (-reduced / hbar).exp();
        Ok((w / reference, [s1, s2, sol.first.p_out(), sol.second.p_out()]))
    };

    // side statistics (mean S and P_out) are gathered on a separate pass of
    // the same streams so the accumulator contract stays scalar
    let acc = run_workers(config.seed, config.workers, config.n_samples, 1.0, |rng| {
        sample_once(rng).map(|(w, _)| w)
    })?;
    let mut means = [0.0; 4];
    for k in 0..4 {
        let side = run_workers(config.seed, config.workers, config.n_samples, 0.0, |rng| {
            sample_once(rng).map(|(_, extra)| extra[k])
        })?;
        means[k] = side.mean();
    }
    let estimate = PropagatorEstimate {
        ratio_mean: acc.mean(),
        ratio_stderr: acc.stderr(),
        n_samples: acc.count(),
        skipped: acc.skipped(),
        free_reference: reference,
        value: reference * acc.mean(),
    };
    Ok(ModifiedEstimate {
        estimate,
        free_s1: free_s[0],
        free_s2: free_s[1],
        mean_s1: means[0],
        mean_s2: means[1],
        mean_p1_out: means[2],
        mean_p2_out: means[3],
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(coupling: f64) -> ModelParams {
        ModelParams::new(1.0, 0.8, coupling, 1.0, 0.5, Mode::Minkowski).unwrap()
    }

    fn spatial(n: usize, s: f64, from: [f64; 3], to: [f64; 3], wiggle: f64, particle: u8) -> Worldline<3> {
        let nodes = (0..=n)
            .map(|i| {
                let t = i as f64 / n as f64;
                let bump = wiggle * (std::f64::consts::PI * t).sin();
                std::array::from_fn(|c| from[c] + t * (to[c] - from[c]) + if c == 1 { bump } else { 0.0 })
            })
            .collect();
        Worldline::new(GridSpec::new(n, s).unwrap(), nodes, particle).unwrap()
    }

    fn pair(n: usize) -> (Worldline<3>, Worldline<3>) {
        (
            spatial(n, 1.0, [0.0; 3], [0.3, 0.1, 0.0], 0.1, 1),
            spatial(n, 1.0, [0.5, 0.0, 0.0], [0.4, -0.2, 0.1], 0.05, 2),
        )
    }

    const CLOCKS: [ClockBoundary; 2] = [
        ClockBoundary { x0_in: 0.0, p_in: 0.5 },
        ClockBoundary { x0_in: 0.1, p_in: 0.6 },
    ];

    #[test]
    fn free_flow_is_affine() {
        let (a, b) = pair(12);
        let sol = solve_constraints(&a, &b, &params(0.0), CLOCKS, &SolverOptions::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        for (state, clock) in [(&sol.first, CLOCKS[0]), (&sol.second, CLOCKS[1])] {
            for (i, (x, p)) in state.x0.iter().zip(&state.p).enumerate() {
                assert_eq!(*p, clock.p_in);
                let s = i as f64 / 12.0;
                assert_abs_diff_eq!(*x, clock.x0_in + (2.0 * clock.p_in).sqrt() * s, epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(sol.first.x0_out() - sol.first.x0[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn forces_vanish_without_coupling_and_at_coincidence() {
        let (a, b) = pair(6);
        let c = ConstraintState::free(a.grid(), CLOCKS[0]);
        let full1 = a.with_time(&c.x0).unwrap();
        let full2 = b.with_time(&ConstraintState::free(b.grid(), CLOCKS[1]).x0).unwrap();
        let f = compute_forces(&full1, &full2, &params(0.0));
        assert!(f.first.iter().chain(&f.second).all(|v| *v == [0.0; 3]));

        let line: Vec<Vec4> = (0..=8).map(|i| [i as f64 * 0.1, 0.02 * i as f64, 0.0, -0.01 * i as f64]).collect();
        let g = GridSpec::new(8, 0.8).unwrap();
        let l1 = Worldline::new(g, line.clone(), 1).unwrap();
        let l2 = Worldline::new(g, line, 2).unwrap();
        let f = compute_forces(&l1, &l2, &params(0.3));
        for v in f.first.iter().chain(&f.second) {
            for c in v {
                assert!(c.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn on_shell_after_solve() {
        let (a, b) = pair(16);
        let sol = solve_constraints(&a, &b, &params(0.05), CLOCKS, &SolverOptions::default()).unwrap();
        assert!(sol.iterations > 1);
        assert!(sol.first.on_shell_residual(a.grid().ds()) < 1e-8);
        assert!(sol.second.on_shell_residual(b.grid().ds()) < 1e-8);
        assert!(sol.first.p.iter().any(|p| *p != 0.5));
    }

    #[test]
    fn rejects_non_positive_energy() {
        let (a, b) = pair(4);
        let bad = [ClockBoundary { x0_in: 0.0, p_in: 0.0 }, CLOCKS[1]];
        assert!(matches!(
            solve_constraints(&a, &b, &params(0.0), bad, &SolverOptions::default()),
            Err(FokkerError::InvalidParameter { field: "P_in", .. })
        ));
    }

    #[test]
    fn too_few_iterations_reports_residual() {
        let (a, b) = pair(8);
        let options = SolverOptions {
            max_iterations: 2,
            ..SolverOptions::default()
        };
        match solve_constraints(&a, &b, &params(0.2), CLOCKS, &options) {
            Err(FokkerError::NonConvergence { iterations: 2, residual }) => assert!(residual > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn strong_force_hits_turning_point() {
        let (a, b) = pair(8);
        let weak = [ClockBoundary { x0_in: 0.0, p_in: 1e-6 }, CLOCKS[1]];
        let err = solve_constraints(&a, &b, &params(50.0), weak, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, FokkerError::TurningPoint { .. } | FokkerError::NonConvergence { .. }), "{err:?}");
    }

    fn problem(coupling: f64, p_in: [f64; 2]) -> ClockProblem {
        let (a, b) = pair(10);
        ClockProblem {
            paths: [SpatialPath::fixed(&a), SpatialPath::fixed(&b)],
            boundary: [
                ClockBoundary { x0_in: 0.0, p_in: p_in[0] },
                ClockBoundary { x0_in: 0.0, p_in: p_in[1] },
            ],
            params: params(coupling),
            options: SolverOptions::default(),
        }
    }

    #[test]
    fn free_clock_inversion() {
        for (p, s) in [(0.5, 2.0), (2.0, 1.0), (0.25, 2.0 * 2f64.sqrt())] {
            let pr = problem(0.0, [p, 0.5]);
            let got = shoot_proper_time(&pr, 1, 1.0, 2.0, 10.0, 1e-8).unwrap();
            assert_abs_diff_eq!(got, s, epsilon = 1e-8);
        }
    }

    #[test]
    fn target_outside_bracket() {
        let pr = problem(0.0, [0.5, 0.5]);
        assert!(matches!(
            shoot_proper_time(&pr, 1, 1.0, 20.0, 5.0, 1e-8),
            Err(FokkerError::NotBracketed { .. })
        ));
        assert!(matches!(
            shoot_proper_time(&pr, 2, 1.0, -1.0, 5.0, 1e-8),
            Err(FokkerError::NotBracketed { .. })
        ));
    }

    #[test]
    fn coupled_shooting_inverts_forward_map() {
        let pr = problem(0.01, [0.5, 0.7]);
        let forward = pr.forward(1.3, 0.9).unwrap();
        let (s1, s2, sol) = shoot_both(&pr, [forward.first.x0_out(), forward.second.x0_out()], 5.0, 1e-8).unwrap();
        assert_abs_diff_eq!(s1, 1.3, epsilon = 1e-7);
        assert_abs_diff_eq!(s2, 0.9, epsilon = 1e-7);
        assert!((sol.first.x0_out() - forward.first.x0_out()).abs() < 1e-8);
    }

    #[test]
    fn rescaled_path_keeps_endpoints() {
        let base = vec![[0.0; 3], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let shape = vec![[0.0; 3], [0.3, -0.2, 0.1], [0.0; 3]];
        let path = SpatialPath {
            base,
            shape,
            hbar: 1.0,
            particle: 1,
        };
        let wl = path.at(4.0).unwrap();
        assert_eq!(wl.nodes()[0], [0.0; 3]);
        assert_eq!(wl.nodes()[2], [1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(wl.nodes()[1][0], 0.5 + 2.0 * 0.3, epsilon = 1e-15);
        assert_eq!(wl.grid().ds(), 2.0);
    }

    fn endpoints() -> [ModifiedEndpoints; 2] {
        [
            ModifiedEndpoints {
                x_in: [0.0; 3],
                x_out: [0.3, 0.0, 0.1],
                clock: ClockBoundary { x0_in: 0.0, p_in: 0.5 },
                x0_out: 1.0,
            },
            ModifiedEndpoints {
                x_in: [0.4, 0.0, 0.0],
                x_out: [0.5, 0.2, 0.0],
                clock: ClockBoundary { x0_in: 0.0, p_in: 0.5 },
                x0_out: 1.2,
            },
        ]
    }

    #[test]
    fn free_modified_kernel_is_the_closed_form() {
        let p = params(0.0).with_mode(Mode::Euclidean);
        let config = EstimatorConfig {
            n_steps1: 6,
            n_steps2: 6,
            n_samples: 200,
            seed: 3,
            workers: 2,
        };
        let est = estimate_modified_kernel(endpoints(), &p, &config, 10.0).unwrap();
        assert_abs_diff_eq!(est.estimate.ratio_mean, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.mean_s1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.mean_s2, 1.2, epsilon = 1e-12);
        let ep = endpoints();
        let expected = free_kernel_analytic(&ep[0].x_in, &ep[0].x_out, 1.0, 0.0, 1.0).unwrap()
            * (-(1.0 + 1.0) * 1.0 / 2.0f64).exp()
            * free_kernel_analytic(&ep[1].x_in, &ep[1].x_out, 1.2, 0.0, 1.0).unwrap()
            * (-(1.0 + 0.64) * 1.2 / 2.0f64).exp();
        assert_abs_diff_eq!(est.estimate.value / expected, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn modified_estimator_needs_euclidean_mode() {
        let config = EstimatorConfig::default();
        assert!(estimate_modified_kernel(endpoints(), &params(0.0), &config, 10.0).is_err());
    }
}
