//! Identity suites that can be verified exactly at finite lattice size.
//!
//! Each suite returns a [`CheckReport`] with the worst residual it saw and
//! the tolerance it is held to.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::action::{interaction_term, ModelParams, Mode};
use crate::grid::{GridSpec, Worldline};
use crate::kernel::{
    build_coupling_operator, hamiltonian, hamiltonian_by_legendre, log_det, log_det_series, measure_determinants,
    velocity_from_momentum_exact, velocity_from_momentum_series, SlotField,
};
use crate::modified::compute_forces;
use crate::propagator::{free_kernel_analytic, verify_phase_space_reduction};
use crate::quadrature::integrate_gl;
use crate::{Result, Vec4};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub trials: usize,
    pub passed: bool,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, residual: f64, tolerance: f64, trials: usize) -> Self {
        Self {
            name: name.into(),
            residual,
            tolerance,
            trials,
            passed: residual.is_finite() && residual < tolerance,
        }
    }
}

/// Random worldline: nodes scattered around a straight line from the origin
/// along the time axis, so the two lines of a pair sit close to each other.
pub fn random_worldline(rng: &mut impl Rng, n_steps: usize, s_total: f64, particle: u8, spread: f64) -> Result<Worldline> {
    let grid = GridSpec::new(n_steps, s_total)?;
    let nodes = (0..=n_steps)
        .map(|i| {
            let t = grid.node_time(i);
            let mut x: Vec4 = std::array::from_fn(|_| spread * rng.random_range(-1.0..1.0));
            x[0] += t;
            x
        })
        .collect();
    Worldline::new(grid, nodes, particle)
}

pub fn random_pair(rng: &mut impl Rng, n1: usize, n2: usize, spread: f64) -> Result<(Worldline, Worldline)> {
    let s1 = rng.random_range(0.6..1.4);
    let s2 = rng.random_range(0.6..1.4);
    Ok((
        random_worldline(rng, n1, s1, 1, spread)?,
        random_worldline(rng, n2, s2, 2, spread)?,
    ))
}

pub fn random_slot_field(rng: &mut impl Rng, n1: usize, n2: usize) -> SlotField {
    let mut v = || std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    SlotField {
        first: (0..n1).map(|_| v()).collect(),
        second: (0..n2).map(|_| v()).collect(),
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// `|det M · det A − 1|` over random configurations with up to `max_nodes`
/// slots per particle.
pub fn determinant_identity(params: &ModelParams, trials: usize, max_nodes: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n1 = rng.random_range(1..=max_nodes);
        let n2 = rng.random_range(1..=max_nodes);
        let (a, b) = random_pair(&mut rng, n1, n2, 0.5)?;
        let dets = measure_determinants(&build_coupling_operator(&a, &b, params)?)?;
        worst = worst.max((dets.det_m * dets.det_a - 1.0).abs());
    }
    Ok(CheckReport::new("determinant identity", worst, 1e-10, trials))
}

/// `H(p) + I(v(p)) − Σ p·v(p)` against the quadratic form, for random momenta.
pub fn legendre_duality(params: &ModelParams, trials: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (n1, n2) = (rng.random_range(2..=12), rng.random_range(2..=12));
        let (a, b) = random_pair(&mut rng, n1, n2, 0.5)?;
        let op = build_coupling_operator(&a, &b, params)?;
        let p = random_slot_field(&mut rng, n1, n2);
        let direct = hamiltonian(&op, &p, params)?;
        let legendre = hamiltonian_by_legendre(&op, &p, &a, &b, params)?;
        worst = worst.max((direct - legendre).abs() / direct.abs().max(1.0));
    }
    Ok(CheckReport::new("legendre duality", worst, 1e-10, trials))
}

/// Gaussian momentum reduction against tensor quadrature, at most eight
/// momentum dimensions.
pub fn phase_space_reduction(params: &ModelParams, trials: usize, seed: u64) -> Result<CheckReport> {
    let params = params.with_mode(Mode::Euclidean);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let shapes = [(1usize, 1usize, 4usize), (2, 2, 2), (3, 1, 2), (4, 4, 1), (2, 1, 2)];
    for t in 0..trials {
        let (n1, n2, comps) = shapes[t % shapes.len()];
        let (a, b) = random_pair(&mut rng, n1, n2, 0.15)?;
        let order = match comps * (n1 + n2) {
            0..=4 => 24,
            5..=6 => 12,
            _ => 8,
        };
        let report = verify_phase_space_reduction(&a, &b, &params, comps, order)?;
        worst = worst.max(report.max_relative_error());
    }
    Ok(CheckReport::new("phase-space reduction", worst, 1e-6, trials))
}

/// Fitted order of the truncation error of the Neumann inverse, minus the
/// expected `order + 1`.
pub fn series_inverse_slope(params: &ModelParams, order: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = random_pair(&mut rng, 6, 5, 0.4)?;
    let p = random_slot_field(&mut rng, 6, 5);
    let couplings = crate::quadrature::log_spaced(1e-3, 1e-1, 9);
    let mut errors = Vec::new();
    for &l in &couplings {
        let op = build_coupling_operator(&a, &b, &params.with_coupling(l))?;
        let exact = velocity_from_momentum_exact(&op, &p)?;
        let series = velocity_from_momentum_series(&op, &p, order)?;
        errors.push(exact.max_abs_diff(&series));
    }
    let slope = log_log_slope(&couplings, &errors);
    Ok((slope, (slope - (order + 1) as f64).abs()))
}

/// Fitted order of the log-det truncation error. The odd traces vanish, so a
/// cut after order `k` leaves the first even order above it.
pub fn log_det_slope(params: &ModelParams, order: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = random_pair(&mut rng, 6, 5, 0.4)?;
    let couplings = crate::quadrature::log_spaced(1e-3, 1e-1, 9);
    let mut errors = Vec::new();
    for &l in &couplings {
        let op = build_coupling_operator(&a, &b, &params.with_coupling(l))?;
        errors.push((log_det(&op)? - log_det_series(&op, order)).abs());
    }
    let slope = log_log_slope(&couplings, &errors);
    let expected = if order.is_multiple_of(2) { order + 2 } else { order + 1 };
    Ok((slope, (slope - expected as f64).abs()))
}

/// Refines a worldline by splitting every slot into `factor` equal slots
/// along the piecewise-linear path.
pub fn refine(wl: &Worldline, factor: usize) -> Result<Worldline> {
    let n = wl.grid().n_steps();
    let grid = GridSpec::new(n * factor, wl.grid().s_total())?;
    let nodes = wl.nodes();
    let mut fine = Vec::with_capacity(n * factor + 1);
    for i in 0..n {
        for k in 0..factor {
            let t = k as f64 / factor as f64;
            fine.push(std::array::from_fn(|c| nodes[i][c] + t * (nodes[i + 1][c] - nodes[i][c])));
        }
    }
    fine.push(nodes[n]);
    Worldline::new(grid, fine, wl.particle_index())
}

/// Time-component sensitivities of the interaction at the interior coarse
/// nodes of both lines, by central differences and from the forces, on a
/// refinement of the piecewise-linear paths.
fn force_duality_pairs(wl1: &Worldline, wl2: &Worldline, params: &ModelParams, factor: usize) -> Result<Vec<(f64, f64)>> {
    let fine1 = refine(wl1, factor)?;
    let fine2 = refine(wl2, factor)?;
    let forces = compute_forces(&fine1, &fine2, params);
    let mut out = Vec::new();
    for particle in 0..2 {
        let (coarse, fine, f, sign) = if particle == 0 {
            (wl1, &fine1, &forces.first, -1.0)
        } else {
            (wl2, &fine2, &forces.second, 1.0)
        };
        let ds = fine.grid().ds();
        let velocities = fine.velocities();
        let n = coarse.grid().n_steps();
        for a in 1..n {
            let hat = |slot: usize| {
                let mid = (slot as f64 + 0.5) / factor as f64;
                (1.0 - (mid - a as f64).abs()).max(0.0)
            };
            let mut contracted = 0.0;
            for (slot, v) in velocities.iter().enumerate() {
                let w = hat(slot);
                if w == 0.0 {
                    continue;
                }
                let g: f64 = (0..3)
                    .map(|k| v[k + 1] * 0.5 * (f[slot][k] + f[slot + 1][k]))
                    .sum();
                contracted += ds * w * g;
            }
            let h = 1e-5;
            let shifted = |delta: f64| -> Result<f64> {
                let mut nodes = coarse.nodes().to_vec();
                nodes[a][0] += delta;
                let moved = refine(&Worldline::new(*coarse.grid(), nodes, coarse.particle_index())?, factor)?;
                Ok(if particle == 0 {
                    interaction_term(&moved, &fine2, params)
                } else {
                    interaction_term(&fine1, &moved, params)
                })
            };
            let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            out.push((fd, sign * contracted));
        }
    }
    Ok(out)
}

/// Largest relative mismatch between the finite-difference time variation of
/// the interaction and the force contraction `∓ ẋₖFₖ`, Richardson-combined over
/// two refinements of the piecewise-linear paths.
pub fn force_duality_error(wl1: &Worldline, wl2: &Worldline, params: &ModelParams, factor: usize) -> Result<f64> {
    let coarse = force_duality_pairs(wl1, wl2, params, factor)?;
    let fine = force_duality_pairs(wl1, wl2, params, 2 * factor)?;
    let extrapolate = |c: f64, f: f64| (4.0 * f - c) / 3.0;
    let pairs: Vec<(f64, f64)> = coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| (extrapolate(c.0, f.0), extrapolate(c.1, f.1)))
        .collect();
    let scale = pairs.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    Ok(pairs.iter().map(|(fd, f)| (fd - f).abs()).fold(0.0, f64::max) / scale)
}

pub fn force_duality(params: &ModelParams, trials: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = params.with_coupling(if params.coupling == 0.0 { 0.1 } else { params.coupling });
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (a, b) = random_pair(&mut rng, 3, 3, 0.3)?;
        worst = worst.max(force_duality_error(&a, &b, &params, 32)?);
    }
    Ok(CheckReport::new("force duality", worst, 1e-4, trials))
}

/// Three-node lattice in one dimension: the middle node integrated by
/// composite Gauss–Legendre against the analytic kernel.
pub fn three_node_free_kernel(a: f64, b: f64, s: f64, m: f64, hbar: f64) -> f64 {
    let ds = 0.5 * s;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * hbar * ds);
    let mass = (-0.5 * m * m * s / hbar).exp();
    let sigma = (hbar * ds / 2.0).sqrt();
    let mid = 0.5 * (a + b);
    let f = |x: f64| norm * (-((x - a).powi(2) + (b - x).powi(2)) / (2.0 * hbar * ds)).exp();
    mass * integrate_gl(f, mid - 14.0 * sigma, mid + 14.0 * sigma, 40, 20)
}

pub fn free_limit(params: &ModelParams) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    let mut trials = 0;
    for &(a, b, s) in &[(0.0, 1.0, 1.0), (-0.3, 0.4, 0.5), (0.2, 2.0, 2.0)] {
        for m in [params.m1, params.m2] {
            let lattice = three_node_free_kernel(a, b, s, m, params.hbar);
            let exact = free_kernel_analytic(&[a], &[b], s, m, params.hbar)?;
            worst = worst.max((lattice - exact).abs() / exact);
            trials += 1;
        }
    }
    Ok(CheckReport::new("free limit", worst, 1e-6, trials))
}

/// All suites on small default grids.
pub fn validation_suite(params: &ModelParams, seed: u64) -> Result<Vec<CheckReport>> {
    let weak = params.with_coupling(params.coupling.clamp(-0.1, 0.1));
    Ok(vec![
        determinant_identity(&weak, 20, 16, seed)?,
        legendre_duality(&weak, 20, seed)?,
        phase_space_reduction(&weak, 5, seed)?,
        force_duality(&weak.with_mode(Mode::Minkowski), 4, seed)?,
        free_limit(params)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::new(1.0, 0.7, 0.05, 1.0, 0.5, Mode::Euclidean).unwrap()
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.1, 0.2, 0.4, 0.8];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(3)).collect();
        assert!((log_log_slope(&x, &y) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_keeps_the_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let wl = random_worldline(&mut rng, 3, 1.0, 1, 0.3).unwrap();
        let fine = refine(&wl, 4).unwrap();
        assert_eq!(fine.nodes().len(), 13);
        for i in 0..=3 {
            assert_eq!(fine.nodes()[4 * i], wl.nodes()[i]);
        }
        assert_eq!(fine.grid().s_total(), wl.grid().s_total());
    }

    #[test]
    fn three_node_lattice_matches_analytic() {
        let lattice = three_node_free_kernel(0.1, 0.9, 0.8, 1.3, 1.0);
        let exact = free_kernel_analytic(&[0.1], &[0.9], 0.8, 1.3, 1.0).unwrap();
        assert!((lattice / exact - 1.0).abs() < 1e-10);
    }

    #[test]
    fn suite_passes_on_defaults() {
        for report in validation_suite(&params(), 11).unwrap() {
            assert!(report.passed, "{report:?}");
        }
    }

    #[test]
    fn force_duality_in_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (a, b) = random_pair(&mut rng, 3, 3, 0.3).unwrap();
        for mode in [Mode::Minkowski, Mode::Euclidean] {
            let err = force_duality_error(&a, &b, &params().with_mode(mode), 32).unwrap();
            assert!(err < 1e-4, "{mode:?}: {err}");
        }
    }
}
