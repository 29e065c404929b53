//! Lattice Fokker action and its modified form.
//!
//! The light-cone delta `δ(s₁₂²)` is replaced by a Gaussian nascent delta of
//! width `ε` in the squared-interval variable. Interaction sums pair
//! midpoint velocities with midpoint (node-averaged) positions.
//!
//! Two evaluation modes share the same formulas:
//! - `Minkowski`: signature (+,−,−,−); the action enters as `exp(iI/ħ)`.
//! - `Euclidean`: all components positive; the interval is `−|Δx|²` and the
//!   action enters as `exp(−I/ħ)`. This is the mode used for sampling.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::grid::Worldline;
use crate::modified::ConstraintState;
use crate::{FokkerError, Result, Vec4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Minkowski,
    Euclidean,
}

impl Mode {
    /// Diagonal of the metric used for dot products.
    pub fn metric(self) -> Vec4 {
        match self {
            Mode::Minkowski => [1.0, -1.0, -1.0, -1.0],
            Mode::Euclidean => [1.0; 4],
        }
    }

    pub fn dot(self, a: &Vec4, b: &Vec4) -> f64 {
        match self {
            Mode::Minkowski => minkowski_dot(a, b),
            Mode::Euclidean => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "minkowski" => Ok(Mode::Minkowski),
            "euclidean" => Ok(Mode::Euclidean),
            other => Err(format!("unknown mode `{other}` (expected minkowski or euclidean)")),
        }
    }
}

/// Physical parameters: masses, charge product `e₁e₂`, `ħ`, regulator width
/// `ε` (length² units) and evaluation mode. Units have `c = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub m1: f64,
    pub m2: f64,
    pub coupling: f64,
    pub hbar: f64,
    pub delta_width: f64,
    pub mode: Mode,
}

impl ModelParams {
    pub fn new(
        m1: f64,
        m2: f64,
        coupling: f64,
        hbar: f64,
        delta_width: f64,
        mode: Mode,
    ) -> Result<Self> {
        let params = Self {
            m1,
            m2,
            coupling,
            hbar,
            delta_width,
            mode,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: &str| {
            Err(FokkerError::InvalidParameter {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.m1.is_finite() && self.m1 >= 0.0) {
            return bad("m1", "mass must be finite and non-negative");
        }
        if !(self.m2.is_finite() && self.m2 >= 0.0) {
            return bad("m2", "mass must be finite and non-negative");
        }
        if !self.coupling.is_finite() {
            return bad("coupling", "must be finite");
        }
        if !(self.hbar.is_finite() && self.hbar > 0.0) {
            return bad("hbar", "must be positive");
        }
        if !(self.delta_width.is_finite() && self.delta_width > 0.0) {
            return bad("delta_width", "must be positive");
        }
        Ok(())
    }

    pub fn with_coupling(mut self, coupling: f64) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Parameters with the particle labels exchanged.
    pub fn swapped(mut self) -> Self {
        std::mem::swap(&mut self.m1, &mut self.m2);
        self
    }

    pub fn mass(&self, particle: usize) -> f64 {
        if particle == 1 {
            self.m1
        } else {
            self.m2
        }
    }
}

/// Signed squared separation between two worldline points.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct IntervalSquared(f64);

impl IntervalSquared {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `a₀b₀ − a₁b₁ − a₂b₂ − a₃b₃`.
pub fn minkowski_dot(a: &Vec4, b: &Vec4) -> f64 {
    a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
}

pub fn interval_squared(x1: &Vec4, x2: &Vec4, mode: Mode) -> IntervalSquared {
    let d: Vec4 = std::array::from_fn(|c| x1[c] - x2[c]);
    IntervalSquared(match mode {
        Mode::Minkowski => minkowski_dot(&d, &d),
        Mode::Euclidean => -d.iter().map(|c| c * c).sum::<f64>(),
    })
}

/// Gaussian nascent delta `exp(−u²/2ε²) / (ε√(2π))`.
pub fn regularized_delta(u: f64, eps: f64) -> f64 {
    let z = u / eps;
    (-0.5 * z * z).exp() / (eps * (2.0 * PI).sqrt())
}

/// `d/du` of [`regularized_delta`].
pub fn regularized_delta_derivative(u: f64, eps: f64) -> f64 {
    -u / (eps * eps) * regularized_delta(u, eps)
}

/// The three pieces of the lattice Fokker action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActionTerms {
    pub kinetic1: f64,
    pub kinetic2: f64,
    pub interaction: f64,
}

impl ActionTerms {
    pub fn total(&self) -> f64 {
        self.kinetic1 + self.kinetic2 + self.interaction
    }
}

/// Lattice Fokker action of a worldline pair.
pub fn fokker_action(wl1: &Worldline, wl2: &Worldline, params: &ModelParams) -> Result<f64> {
    Ok(action_terms(wl1, wl2, params)?.total())
}

pub fn action_terms(wl1: &Worldline, wl2: &Worldline, params: &ModelParams) -> Result<ActionTerms> {
    action_terms_with_velocities(wl1, wl2, &wl1.velocities(), &wl2.velocities(), params)
}

/// Action with velocities supplied independently of the positions. Positions
/// only enter through the interval inside the delta; this is the functional
/// `I_F[ẋ₁, x₁, x₂', x₂]` that the Legendre transform acts on.
pub fn action_terms_with_velocities(
    wl1: &Worldline,
    wl2: &Worldline,
    v1: &[Vec4],
    v2: &[Vec4],
    params: &ModelParams,
) -> Result<ActionTerms> {
    let (g1, g2) = (wl1.grid(), wl2.grid());
    if g1.n_steps() == 0 || g2.n_steps() == 0 {
        return Err(FokkerError::InvalidGrid("worldline with zero steps".into()));
    }
    for (v, g) in [(v1, g1), (v2, g2)] {
        if v.len() != g.n_steps() {
            return Err(FokkerError::DimensionMismatch {
                expected: g.n_steps(),
                got: v.len(),
            });
        }
    }
    let mode = params.mode;
    let kinetic = |v: &[Vec4], ds: f64, m: f64| {
        0.5 * ds * v.iter().map(|vi| mode.dot(vi, vi) + m * m).sum::<f64>()
    };
    Ok(ActionTerms {
        kinetic1: kinetic(v1, g1.ds(), params.m1),
        kinetic2: kinetic(v2, g2.ds(), params.m2),
        interaction: interaction_with_velocities(wl1, wl2, v1, v2, params),
    })
}

/// `e₁e₂ ΣᵢΣⱼ Δs₁Δs₂ δ_ε(s₁₂²) (v₁ᵢ·v₂ⱼ)`.
pub fn interaction_term(wl1: &Worldline, wl2: &Worldline, params: &ModelParams) -> f64 {
    interaction_with_velocities(wl1, wl2, &wl1.velocities(), &wl2.velocities(), params)
}

fn interaction_with_velocities(
    wl1: &Worldline,
    wl2: &Worldline,
    v1: &[Vec4],
    v2: &[Vec4],
    params: &ModelParams,
) -> f64 {
    if params.coupling == 0.0 {
        return 0.0;
    }
    let (mid1, mid2) = (wl1.midpoints(), wl2.midpoints());
    let mode = params.mode;
    let mut sum = 0.0;
    for (x1, u1) in mid1.iter().zip(v1) {
        for (x2, u2) in mid2.iter().zip(v2) {
            let s2 = interval_squared(x1, x2, mode).value();
            sum += regularized_delta(s2, params.delta_width) * mode.dot(u1, u2);
        }
    }
    params.coupling * wl1.grid().ds() * wl2.grid().ds() * sum
}

/// Lattice modified action: kinetic pieces `½Σ Δs (2P̄ − v² + m²)` with
/// spatial velocities `v`, plus `e₁e₂ ΣΣ Δs₁Δs₂ δ_ε(s₁₂²) [√(2P̄₁·2P̄₂) − v₁·v₂]`.
/// `P̄` is the slot average of the node self-energies and `s₁₂²` is taken
/// between full spacetime midpoints assembled from `x0` and the spatial nodes.
pub fn modified_action(
    wl1: &Worldline<3>,
    wl2: &Worldline<3>,
    c1: &ConstraintState,
    c2: &ConstraintState,
    params: &ModelParams,
) -> Result<f64> {
    for c in [c1, c2] {
        if let Some((node, &value)) = c.p.iter().enumerate().find(|(_, p)| **p < 0.0) {
            return Err(FokkerError::NegativeSelfEnergy { node, value });
        }
    }
    let full1 = wl1.with_time(&c1.x0)?;
    let full2 = wl2.with_time(&c2.x0)?;
    if c1.p.len() != c1.x0.len() || c2.p.len() != c2.x0.len() {
        return Err(FokkerError::DimensionMismatch {
            expected: c1.x0.len(),
            got: c1.p.len(),
        });
    }
    let (v1, v2) = (wl1.velocities(), wl2.velocities());
    let (p1, p2) = (c1.slot_energies(), c2.slot_energies());
    let kinetic = |v: &[[f64; 3]], p: &[f64], ds: f64, m: f64| {
        0.5 * ds
            * v.iter()
                .zip(p)
                .map(|(vi, pi)| 2.0 * pi - dot3(vi, vi) + m * m)
                .sum::<f64>()
    };
    let mut total = kinetic(&v1, &p1, wl1.grid().ds(), params.m1)
        + kinetic(&v2, &p2, wl2.grid().ds(), params.m2);
    if params.coupling != 0.0 {
        let (mid1, mid2) = (full1.midpoints(), full2.midpoints());
        let mut sum = 0.0;
        for ((x1, u1), e1) in mid1.iter().zip(&v1).zip(&p1) {
            for ((x2, u2), e2) in mid2.iter().zip(&v2).zip(&p2) {
                let s2 = interval_squared(x1, x2, params.mode).value();
                let bracket = (4.0 * e1 * e2).sqrt() - dot3(u1, u2);
                sum += regularized_delta(s2, params.delta_width) * bracket;
            }
        }
        total += params.coupling * wl1.grid().ds() * wl2.grid().ds() * sum;
    }
    Ok(total)
}

pub(crate) fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
