//! Discretized velocity/momentum coupling operator.
//!
//! With velocities on slots, the lattice momentum of particle 1 is
//! `p₁ᵢ = v₁ᵢ + λ Σⱼ Δs₂ δ_ε(s₁₂²(i,j)) v₂ⱼ` and symmetrically for particle 2,
//! i.e. `p = L v` with
//!
//! ```text
//!     L = [[ 1,          λ Δs₂ Δ ],
//!          [ λ Δs₁ Δᵀ,   1       ]] ⊗ 1_D
//! ```
//!
//! where `Δᵢⱼ = δ_ε(s₁₂²(x̄₁ᵢ, x̄₂ⱼ))`. Momenta and velocities carry the same
//! index position, so the metric only enters through contractions `p·v`.
//! Every component sees the same scalar block matrix; the operator stores
//! that block once and the component count `D` (4 for spacetime, 3 for the
//! spatial measure of the modified theory).
//!
//! The measure determinant is `det A = det L`. With `M = ½ W L⁻¹` (`W` the
//! slot weights and metric), the literal inverse of `M` differs from `L` by
//! a field-independent constant that is absorbed into the path measure.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::action::{action_terms_with_velocities, interval_squared, regularized_delta, Mode, ModelParams};
use crate::grid::Worldline;
use crate::{FokkerError, Result, Vec4, MAX_SLOTS};

/// Condition numbers above this are treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Highest supported order of the perturbative inverse.
pub const MAX_SERIES_ORDER: usize = 8;

#[derive(Debug, Clone)]
struct Factorization {
    det_block: f64,
    log_abs_det_block: f64,
    inverse: DMatrix<f64>,
    condition: f64,
}

#[derive(Debug, Clone)]
pub struct CouplingOperator {
    block: DMatrix<f64>,
    components: usize,
    n1: usize,
    n2: usize,
    ds1: f64,
    ds2: f64,
    coupling: f64,
    mode: Mode,
    factorization: OnceLock<Factorization>,
}

/// Per-particle 4-vectors on velocity slots (momenta or velocities).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotField {
    pub first: Vec<Vec4>,
    pub second: Vec<Vec4>,
}

pub type MomentumField = SlotField;
pub type VelocityField = SlotField;

impl SlotField {
    pub fn zeros(n1: usize, n2: usize) -> Self {
        Self {
            first: vec![[0.0; 4]; n1],
            second: vec![[0.0; 4]; n2],
        }
    }

    /// Finite-difference velocities of a worldline pair.
    pub fn velocities_of(wl1: &Worldline, wl2: &Worldline) -> Self {
        Self {
            first: wl1.velocities(),
            second: wl2.velocities(),
        }
    }

    fn column(&self, c: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.first.len() + self.second.len(),
            self.first.iter().chain(&self.second).map(|v| v[c]),
        )
    }

    fn set_column(&mut self, c: usize, col: &DVector<f64>) {
        let n1 = self.first.len();
        for (i, v) in self.first.iter_mut().enumerate() {
            v[c] = col[i];
        }
        for (j, v) in self.second.iter_mut().enumerate() {
            v[c] = col[n1 + j];
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.first
            .iter()
            .chain(&self.second)
            .zip(other.first.iter().chain(&other.second))
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.first
            .iter()
            .chain(&self.second)
            .flatten()
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Spacetime (4-component) coupling operator of a worldline pair.
pub fn build_coupling_operator(
    wl1: &Worldline,
    wl2: &Worldline,
    params: &ModelParams,
) -> Result<CouplingOperator> {
    CouplingOperator::build(wl1, wl2, params, 4)
}

/// Spatial (3-component) coupling operator; the interval inside the delta is
/// still evaluated on full spacetime positions.
pub fn build_spatial_coupling_operator(
    wl1: &Worldline,
    wl2: &Worldline,
    params: &ModelParams,
) -> Result<CouplingOperator> {
    CouplingOperator::build(wl1, wl2, params, 3)
}

impl CouplingOperator {
    pub fn build(
        wl1: &Worldline,
        wl2: &Worldline,
        params: &ModelParams,
        components: usize,
    ) -> Result<Self> {
        let (n1, n2) = (wl1.grid().n_steps(), wl2.grid().n_steps());
        if n1 + n2 > MAX_SLOTS {
            return Err(FokkerError::DimensionCap {
                dim: n1 + n2,
                cap: MAX_SLOTS,
            });
        }
        let (ds1, ds2) = (wl1.grid().ds(), wl2.grid().ds());
        let lambda = params.coupling;
        let mut block = DMatrix::identity(n1 + n2, n1 + n2);
        if lambda != 0.0 {
            let (mid1, mid2) = (wl1.midpoints(), wl2.midpoints());
            for (i, x1) in mid1.iter().enumerate() {
                for (j, x2) in mid2.iter().enumerate() {
                    let s2 = interval_squared(x1, x2, params.mode).value();
                    let d = regularized_delta(s2, params.delta_width);
                    block[(i, n1 + j)] = lambda * ds2 * d;
                    block[(n1 + j, i)] = lambda * ds1 * d;
                }
            }
        }
        Ok(Self {
            block,
            components,
            n1,
            n2,
            ds1,
            ds2,
            coupling: lambda,
            mode: params.mode,
            factorization: OnceLock::new(),
        })
    }

    /// Scalar block matrix acting identically on every component.
    pub fn block(&self) -> &DMatrix<f64> {
        &self.block
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn slots(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    /// Total dimension `D (n₁ + n₂)`.
    pub fn dim(&self) -> usize {
        self.components * (self.n1 + self.n2)
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn steps(&self) -> (f64, f64) {
        (self.ds1, self.ds2)
    }

    /// Full `D(n₁+n₂)` matrix with slot-major ordering (`slot * D + component`).
    pub fn dense(&self) -> DMatrix<f64> {
        let d = self.components;
        let n = self.n1 + self.n2;
        DMatrix::from_fn(n * d, n * d, |r, c| {
            if r % d == c % d {
                self.block[(r / d, c / d)]
            } else {
                0.0
            }
        })
    }

    fn factorization(&self) -> &Factorization {
        self.factorization.get_or_init(|| {
            let lu = self.block.clone().lu();
            let u = lu.u();
            let det_block = lu.determinant();
            let log_abs_det_block = u.diagonal().iter().map(|x| x.abs().ln()).sum();
            match lu.try_inverse() {
                Some(inverse) => {
                    let condition = one_norm(&self.block) * one_norm(&inverse);
                    Factorization {
                        det_block,
                        log_abs_det_block,
                        inverse,
                        condition,
                    }
                }
                None => Factorization {
                    det_block: 0.0,
                    log_abs_det_block: f64::NEG_INFINITY,
                    inverse: DMatrix::zeros(0, 0),
                    condition: f64::INFINITY,
                },
            }
        })
    }

    /// 1-norm condition estimate of the operator.
    pub fn condition(&self) -> f64 {
        self.factorization().condition
    }

    fn checked(&self) -> Result<&Factorization> {
        let f = self.factorization();
        if !(f.condition <= CONDITION_LIMIT) {
            return Err(FokkerError::SingularOperator {
                condition: f.condition,
            });
        }
        Ok(f)
    }

    fn check_field(&self, field: &SlotField) -> Result<()> {
        if self.components != 4 {
            return Err(FokkerError::DimensionMismatch {
                expected: self.components,
                got: 4,
            });
        }
        for (got, expected) in [(field.first.len(), self.n1), (field.second.len(), self.n2)] {
            if got != expected {
                return Err(FokkerError::DimensionMismatch { expected, got });
            }
        }
        Ok(())
    }

    fn map_components(&self, field: &SlotField, f: impl Fn(DVector<f64>) -> DVector<f64>) -> SlotField {
        let mut out = field.clone();
        for c in 0..4 {
            out.set_column(c, &f(field.column(c)));
        }
        out
    }

    /// Weighted contraction `Σ_α Σᵢ Δs_α a_αᵢ·b_αᵢ` with the mode's metric.
    pub fn contract(&self, a: &SlotField, b: &SlotField) -> f64 {
        let dot = |x: &[Vec4], y: &[Vec4]| -> f64 {
            x.iter().zip(y).map(|(u, v)| self.mode.dot(u, v)).sum()
        };
        self.ds1 * dot(&a.first, &b.first) + self.ds2 * dot(&a.second, &b.second)
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `p = L v`.
pub fn momentum_from_velocity(op: &CouplingOperator, v: &VelocityField) -> Result<MomentumField> {
    op.check_field(v)?;
    Ok(op.map_components(v, |col| &op.block * col))
}

/// `v = L⁻¹ p` by a direct dense solve.
pub fn velocity_from_momentum_exact(op: &CouplingOperator, p: &MomentumField) -> Result<VelocityField> {
    op.check_field(p)?;
    let f = op.checked()?;
    Ok(op.map_components(p, |col| &f.inverse * col))
}

/// Truncated Neumann series `v = Σ_{k=0}^{order} (−λK)ᵏ p` with `L = 1 + λK`.
/// Order 1 is the first perturbative correction `v₁ = p₁ − λ Σ Δs₂ δ p₂`.
pub fn velocity_from_momentum_series(
    op: &CouplingOperator,
    p: &MomentumField,
    order: usize,
) -> Result<VelocityField> {
    op.check_field(p)?;
    if order > MAX_SERIES_ORDER {
        return Err(FokkerError::InvalidParameter {
            field: "order",
            reason: format!("at most {MAX_SERIES_ORDER}, got {order}"),
        });
    }
    let n = op.n1 + op.n2;
    let coupling_part = &op.block - DMatrix::<f64>::identity(n, n);
    Ok(op.map_components(p, |col| {
        let mut term = col.clone();
        let mut sum = col;
        for _ in 0..order {
            term = -(&coupling_part * &term);
            sum += &term;
        }
        sum
    }))
}

/// Generalized Hamiltonian as a quadratic form in the momenta,
/// `H = ½ Σ Δs p·L⁻¹p − ½(m₁²S₁ + m₂²S₂)`.
pub fn hamiltonian(op: &CouplingOperator, p: &MomentumField, params: &ModelParams) -> Result<f64> {
    let v = velocity_from_momentum_exact(op, p)?;
    Ok(0.5 * op.contract(p, &v) - mass_term(op, params))
}

/// Hamiltonian from its definition as a Legendre transform,
/// `H = Σ Δs p·v(p) − I_F[v(p)]`, with the action evaluated by the action module.
pub fn hamiltonian_by_legendre(
    op: &CouplingOperator,
    p: &MomentumField,
    wl1: &Worldline,
    wl2: &Worldline,
    params: &ModelParams,
) -> Result<f64> {
    let v = velocity_from_momentum_exact(op, p)?;
    let action = action_terms_with_velocities(wl1, wl2, &v.first, &v.second, params)?;
    Ok(op.contract(p, &v) - action.total())
}

fn mass_term(op: &CouplingOperator, params: &ModelParams) -> f64 {
    let s1 = op.ds1 * op.n1 as f64;
    let s2 = op.ds2 * op.n2 as f64;
    0.5 * (params.m1 * params.m1 * s1 + params.m2 * params.m2 * s2)
}

/// Determinant measure of the path integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureDeterminants {
    pub det_m: f64,
    pub det_a: f64,
    pub sqrt_det_a: f64,
}

/// `det A = det L`; `det M` is evaluated independently from the explicit
/// inverse so that `det M · det A = 1` is a real check.
pub fn measure_determinants(op: &CouplingOperator) -> Result<MeasureDeterminants> {
    let f = op.checked()?;
    let d = op.components as i32;
    let det_a = f.det_block.powi(d);
    if det_a <= 0.0 {
        return Err(FokkerError::NonPositiveDeterminant(det_a));
    }
    let det_m = f.inverse.clone().lu().determinant().powi(d);
    Ok(MeasureDeterminants {
        det_m,
        det_a,
        sqrt_det_a: det_a.sqrt(),
    })
}

/// `ln |det L|`.
pub fn log_det(op: &CouplingOperator) -> Result<f64> {
    Ok(op.components as f64 * op.checked()?.log_abs_det_block)
}

/// Truncated expansion `ln det(1 + λK) = Σ_{k=1}^{order} (−1)^{k+1} tr((λK)ᵏ)/k`.
/// Odd powers have zero trace because `K` only couples different particles.
pub fn log_det_series(op: &CouplingOperator, order: usize) -> f64 {
    let n = op.n1 + op.n2;
    let coupling_part = &op.block - DMatrix::<f64>::identity(n, n);
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut sum = 0.0;
    for k in 1..=order {
        power = &power * &coupling_part;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sum += sign * power.trace() / k as f64;
    }
    op.components as f64 * sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{linear_interpolant, GridSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(coupling: f64, mode: Mode) -> ModelParams {
        ModelParams::new(1.0, 0.5, coupling, 1.0, 0.7, mode).unwrap()
    }

    fn random_worldline(rng: &mut ChaCha8Rng, n: usize, s: f64, particle: u8) -> Worldline {
        let nodes = (0..=n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-0.6..0.6)))
            .collect();
        Worldline::new(GridSpec::new(n, s).unwrap(), nodes, particle).unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, n1: usize, n2: usize) -> SlotField {
        let mut v = || std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        SlotField {
            first: (0..n1).map(|_| v()).collect(),
            second: (0..n2).map(|_| v()).collect(),
        }
    }

    fn pair(seed: u64, n1: usize, n2: usize) -> (Worldline, Worldline) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random_worldline(&mut rng, n1, 1.0, 1), random_worldline(&mut rng, n2, 0.8, 2))
    }

    fn single_node_pair() -> (Worldline, Worldline) {
        let g = GridSpec::new(1, 0.5).unwrap();
        let a = Worldline::new(g, vec![[0.0; 4], [0.0; 4]], 1).unwrap();
        let b = Worldline::new(g, vec![[0.0, 0.4, 0.0, 0.0]; 2], 2).unwrap();
        (a, b)
    }

    #[test]
    fn free_operator_is_identity() {
        let (a, b) = pair(1, 5, 3);
        let op = build_coupling_operator(&a, &b, &params(0.0, Mode::Euclidean)).unwrap();
        assert_eq!(op.dense(), DMatrix::identity(32, 32));
        let dets = measure_determinants(&op).unwrap();
        assert_eq!((dets.det_m, dets.det_a, dets.sqrt_det_a), (1.0, 1.0, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_field(&mut rng, 5, 3);
        assert_eq!(momentum_from_velocity(&op, &p).unwrap(), p);
        assert_eq!(velocity_from_momentum_exact(&op, &p).unwrap(), p);
        assert_eq!(velocity_from_momentum_series(&op, &p, 0).unwrap(), p);
    }

    #[test]
    fn single_node_entries_by_hand() {
        let (a, b) = single_node_pair();
        let lambda = 0.3;
        for mode in [Mode::Euclidean, Mode::Minkowski] {
            let p = ModelParams::new(1.0, 1.0, lambda, 1.0, 0.2, mode).unwrap();
            let op = build_coupling_operator(&a, &b, &p).unwrap();
            // s12² = ∓0.16 for both modes; the Gaussian is even
            let d = (-0.16f64 * 0.16 / (2.0 * 0.04)).exp() / (0.2 * (2.0 * std::f64::consts::PI).sqrt());
            assert_abs_diff_eq!(op.block()[(0, 1)], lambda * 0.5 * d, epsilon = 1e-15);
            assert_abs_diff_eq!(op.block()[(1, 0)], lambda * 0.5 * d, epsilon = 1e-15);

            let dets = measure_determinants(&op).unwrap();
            let k = lambda * 0.5 * d;
            assert_abs_diff_eq!(dets.det_a, (1.0 - k * k).powi(4), epsilon = 1e-14);

            // first-order series reproduces the leading correction
            let pfield = SlotField {
                first: vec![[1.0, 2.0, 0.0, -1.0]],
                second: vec![[0.5, 0.0, 1.0, 3.0]],
            };
            let v = velocity_from_momentum_series(&op, &pfield, 1).unwrap();
            for c in 0..4 {
                assert_abs_diff_eq!(v.first[0][c], pfield.first[0][c] - k * pfield.second[0][c], epsilon = 1e-15);
            }
            let q = momentum_from_velocity(&op, &pfield).unwrap();
            for c in 0..4 {
                assert_abs_diff_eq!(q.second[0][c], pfield.second[0][c] + k * pfield.first[0][c], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn swapping_particles_permutes_blocks() {
        let (a, b) = pair(7, 4, 6);
        let p = params(0.4, Mode::Euclidean);
        let ab = build_coupling_operator(&a, &b, &p).unwrap();
        let ba = build_coupling_operator(&b, &a, &p).unwrap();
        for i in 0..4 {
            for j in 0..6 {
                assert_abs_diff_eq!(ab.block()[(i, 4 + j)], ba.block()[(6 + i, j)], epsilon = 1e-15);
                assert_abs_diff_eq!(ab.block()[(4 + j, i)], ba.block()[(j, 6 + i)], epsilon = 1e-15);
            }
        }
        let (da, db) = (measure_determinants(&ab).unwrap(), measure_determinants(&ba).unwrap());
        assert_abs_diff_eq!(da.det_a, db.det_a, epsilon = 1e-12);
    }

    #[test]
    fn round_trip_and_determinant_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..10 {
            let (a, b) = pair(seed, 6, 5);
            let op = build_coupling_operator(&a, &b, &params(0.5, Mode::Minkowski)).unwrap();
            let p = random_field(&mut rng, 6, 5);
            let v = velocity_from_momentum_exact(&op, &p).unwrap();
            let back = momentum_from_velocity(&op, &v).unwrap();
            assert!(back.max_abs_diff(&p) < 1e-10);
            let d = measure_determinants(&op).unwrap();
            assert_abs_diff_eq!(d.det_m * d.det_a, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn determinant_matches_eigenvalue_product() {
        // equal steps make the block symmetric
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let a = random_worldline(&mut rng, 5, 1.0, 1);
            let b = random_worldline(&mut rng, 5, 1.0, 2);
            let op = build_coupling_operator(&a, &b, &params(0.8, Mode::Euclidean)).unwrap();
            let eig = op.dense().symmetric_eigenvalues();
            let product: f64 = eig.iter().product();
            let d = measure_determinants(&op).unwrap();
            assert_abs_diff_eq!(d.det_a, product, epsilon = 1e-8);
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let g = GridSpec::new(4, 1.0).unwrap();
        let a = linear_interpolant([0.0; 4], [1.0, 0.0, 0.0, 0.0], g, 1).unwrap();
        let b = linear_interpolant([0.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], g, 2).unwrap();
        let p = ModelParams::new(1.0, 0.0, 0.0, 1.0, 0.5, Mode::Minkowski).unwrap();
        let op = build_coupling_operator(&a, &b, &p).unwrap();
        let field = SlotField {
            first: vec![[1.0, 0.0, 0.0, 0.0]; 4],
            second: vec![[0.0; 4]; 4],
        };
        assert_abs_diff_eq!(hamiltonian(&op, &field, &p).unwrap(), 0.0, epsilon = 1e-14);

        let p = ModelParams::new(1.2, 0.7, 0.3, 1.0, 0.5, Mode::Euclidean).unwrap();
        let op = build_coupling_operator(&a, &b, &p).unwrap();
        let zero = SlotField::zeros(4, 4);
        let expected = -0.5 * (1.44 + 0.49);
        assert_abs_diff_eq!(hamiltonian(&op, &zero, &p).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn hamiltonian_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..10 {
            let (a, b) = pair(100 + seed, 5, 4);
            for mode in [Mode::Euclidean, Mode::Minkowski] {
                let p = params(0.05, mode);
                let op = build_coupling_operator(&a, &b, &p).unwrap();
                let field = random_field(&mut rng, 5, 4);
                let h1 = hamiltonian(&op, &field, &p).unwrap();
                let h2 = hamiltonian_by_legendre(&op, &field, &a, &b, &p).unwrap();
                assert_abs_diff_eq!(h1, h2, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn series_order_is_capped() {
        let (a, b) = pair(2, 2, 2);
        let op = build_coupling_operator(&a, &b, &params(0.1, Mode::Euclidean)).unwrap();
        let p = SlotField::zeros(2, 2);
        assert!(velocity_from_momentum_series(&op, &p, MAX_SERIES_ORDER).is_ok());
        assert!(velocity_from_momentum_series(&op, &p, MAX_SERIES_ORDER + 1).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (a, b) = pair(2, 3, 2);
        let op = build_coupling_operator(&a, &b, &params(0.1, Mode::Euclidean)).unwrap();
        let bad = SlotField::zeros(2, 2);
        assert!(matches!(
            momentum_from_velocity(&op, &bad),
            Err(FokkerError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn near_singular_operator_is_rejected() {
        // coincident static lines with a very narrow delta: λΔsδ = 1 makes L singular
        let g = GridSpec::new(1, 1.0).unwrap();
        let a = Worldline::new(g, vec![[0.0; 4]; 2], 1).unwrap();
        let b = Worldline::new(g, vec![[0.0; 4]; 2], 2).unwrap();
        let eps = 0.25;
        let lambda = eps * (2.0 * std::f64::consts::PI).sqrt();
        let p = ModelParams::new(1.0, 1.0, lambda, 1.0, eps, Mode::Euclidean).unwrap();
        let op = build_coupling_operator(&a, &b, &p).unwrap();
        assert!(matches!(measure_determinants(&op), Err(FokkerError::SingularOperator { .. })));
        let field = SlotField::zeros(1, 1);
        assert!(velocity_from_momentum_exact(&op, &field).is_err());
    }

    #[test]
    fn spatial_operator_has_three_components() {
        let (a, b) = pair(9, 3, 3);
        let p = params(0.4, Mode::Euclidean);
        let full = build_coupling_operator(&a, &b, &p).unwrap();
        let spatial = build_spatial_coupling_operator(&a, &b, &p).unwrap();
        assert_eq!(spatial.dim(), 18);
        let d4 = measure_determinants(&full).unwrap().det_a;
        let d3 = measure_determinants(&spatial).unwrap().det_a;
        assert_abs_diff_eq!(d4.powf(0.25), d3.powf(1.0 / 3.0), epsilon = 1e-13);
    }

    #[test]
    fn log_det_series_odd_terms_vanish() {
        let (a, b) = pair(4, 4, 4);
        let op = build_coupling_operator(&a, &b, &params(0.2, Mode::Euclidean)).unwrap();
        assert_eq!(log_det_series(&op, 1), 0.0);
        assert_abs_diff_eq!(log_det_series(&op, 2), log_det_series(&op, 3), epsilon = 1e-16);
        assert_abs_diff_eq!(log_det_series(&op, 8), log_det(&op).unwrap(), epsilon = 1e-10);
    }

    proptest! {
        #[test]
        fn legendre_duality_holds(seed in 0u64..1000, lambda in -0.1f64..0.1, euclid in any::<bool>()) {
            let mode = if euclid { Mode::Euclidean } else { Mode::Minkowski };
            let (a, b) = pair(seed, 4, 3);
            let p = params(lambda, mode);
            let op = build_coupling_operator(&a, &b, &p).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let field = random_field(&mut rng, 4, 3);
            let v = velocity_from_momentum_exact(&op, &field).unwrap();
            let h = hamiltonian(&op, &field, &p).unwrap();
            let action = action_terms_with_velocities(&a, &b, &v.first, &v.second, &p).unwrap().total();
            prop_assert!((h + action - op.contract(&field, &v)).abs() < 1e-10);
        }
    }
}
