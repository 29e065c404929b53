//! Uniform proper-time grids and discretized worldlines.
//!
//! A worldline over `n_steps` intervals carries `n_steps + 1` nodes. Velocities
//! are forward differences and live on interval midpoints ("slots"), so every
//! velocity-dependent lattice sum is a midpoint rule.

use serde::{Deserialize, Serialize};

use crate::{FokkerError, Result, Vec4};

/// Uniform grid over `[0, s_total]` with `n_steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    n_steps: usize,
    s_total: f64,
    ds: f64,
}

impl GridSpec {
    /// The stored `s_total` is recomputed as `ds * n_steps`, so the product
    /// identity holds exactly (it may differ from the request by one ulp).
    pub fn new(n_steps: usize, s_total: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(FokkerError::InvalidGrid("n_steps must be at least 1".into()));
        }
        if !(s_total.is_finite() && s_total > 0.0) {
            return Err(FokkerError::InvalidGrid(format!(
                "s_total must be positive and finite, got {s_total}"
            )));
        }
        let ds = s_total / n_steps as f64;
        Ok(Self {
            n_steps,
            s_total: ds * n_steps as f64,
            ds,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn s_total(&self) -> f64 {
        self.s_total
    }

    pub fn ds(&self) -> f64 {
        self.ds
    }

    /// Proper time of node `i`.
    pub fn node_time(&self, i: usize) -> f64 {
        i as f64 * self.ds
    }

    /// Proper time of the midpoint of interval `i`.
    pub fn slot_time(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.ds
    }

    /// Midpoint-rule approximation of `∫_0^S f(s) ds`.
    pub fn midpoint_sum(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.ds * (0..self.n_steps).map(|i| f(self.slot_time(i))).sum::<f64>()
    }
}

/// Boundary data of one particle's worldline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    pub x_in: Vec4,
    pub x_out: Vec4,
}

impl Endpoints {
    pub fn new(x_in: Vec4, x_out: Vec4) -> Result<Self> {
        if x_in.iter().chain(x_out.iter()).any(|c| !c.is_finite()) {
            return Err(FokkerError::InvalidParameter {
                field: "endpoints",
                reason: "all components must be finite".into(),
            });
        }
        Ok(Self { x_in, x_out })
    }

    /// Endpoints with particle order in time reversed.
    pub fn reversed(&self) -> Self {
        Self {
            x_in: self.x_out,
            x_out: self.x_in,
        }
    }

    /// The spatial part of the endpoints.
    pub fn spatial(&self) -> ([f64; 3], [f64; 3]) {
        (spatial_part(&self.x_in), spatial_part(&self.x_out))
    }
}

pub(crate) fn spatial_part(x: &Vec4) -> [f64; 3] {
    [x[1], x[2], x[3]]
}

/// A discretized worldline with `D`-component nodes (4 for spacetime paths,
/// 3 for the spatial paths of the modified theory).
#[derive(Debug, Clone, PartialEq)]
pub struct Worldline<const D: usize = 4> {
    grid: GridSpec,
    nodes: Vec<[f64; D]>,
    particle: u8,
}

impl<const D: usize> Worldline<D> {
    pub fn new(grid: GridSpec, nodes: Vec<[f64; D]>, particle: u8) -> Result<Self> {
        if nodes.len() != grid.n_steps() + 1 {
            return Err(FokkerError::DimensionMismatch {
                expected: grid.n_steps() + 1,
                got: nodes.len(),
            });
        }
        if particle != 1 && particle != 2 {
            return Err(FokkerError::InvalidParameter {
                field: "particle_index",
                reason: format!("must be 1 or 2, got {particle}"),
            });
        }
        if nodes.iter().flatten().any(|c| !c.is_finite()) {
            return Err(FokkerError::InvalidParameter {
                field: "nodes",
                reason: "all components must be finite".into(),
            });
        }
        Ok(Self {
            grid,
            nodes,
            particle,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn nodes(&self) -> &[[f64; D]] {
        &self.nodes
    }

    pub fn particle_index(&self) -> u8 {
        self.particle
    }

    pub fn first(&self) -> &[f64; D] {
        &self.nodes[0]
    }

    pub fn last(&self) -> &[f64; D] {
        &self.nodes[self.nodes.len() - 1]
    }

    /// Same nodes on a different grid with the same number of steps. Used
    /// when the total proper time is an unknown (the path shape is kept).
    pub fn with_grid(&self, grid: GridSpec) -> Result<Self> {
        Self::new(grid, self.nodes.clone(), self.particle)
    }

    pub fn with_particle(mut self, particle: u8) -> Result<Self> {
        if particle != 1 && particle != 2 {
            return Err(FokkerError::InvalidParameter {
                field: "particle_index",
                reason: format!("must be 1 or 2, got {particle}"),
            });
        }
        self.particle = particle;
        Ok(self)
    }

    /// Forward-difference velocities, one per interval.
    pub fn velocities(&self) -> Vec<[f64; D]> {
        finite_difference_velocity(self)
    }

    /// Node averages at interval midpoints, paired with [`Self::velocities`].
    pub fn midpoints(&self) -> Vec<[f64; D]> {
        self.nodes
            .windows(2)
            .map(|w| std::array::from_fn(|c| 0.5 * (w[0][c] + w[1][c])))
            .collect()
    }
}

impl Worldline<3> {
    /// Assembles a spacetime worldline from time coordinates and spatial nodes.
    pub fn with_time(&self, x0: &[f64]) -> Result<Worldline<4>> {
        if x0.len() != self.nodes.len() {
            return Err(FokkerError::DimensionMismatch {
                expected: self.nodes.len(),
                got: x0.len(),
            });
        }
        let nodes = self
            .nodes
            .iter()
            .zip(x0)
            .map(|(x, &t)| [t, x[0], x[1], x[2]])
            .collect();
        Worldline::new(self.grid, nodes, self.particle)
    }
}

impl Worldline<4> {
    /// Drops the time components.
    pub fn spatial(&self) -> Worldline<3> {
        Worldline {
            grid: self.grid,
            nodes: self.nodes.iter().map(spatial_part).collect(),
            particle: self.particle,
        }
    }
}

/// `velocity[i] = (nodes[i+1] - nodes[i]) / ds`.
pub fn finite_difference_velocity<const D: usize>(wl: &Worldline<D>) -> Vec<[f64; D]> {
    let inv_ds = 1.0 / wl.grid.ds();
    wl.nodes
        .windows(2)
        .map(|w| std::array::from_fn(|c| (w[1][c] - w[0][c]) * inv_ds))
        .collect()
}

/// Straight path between the boundary points, `nodes[i] = x_in + (i/n)(x_out - x_in)`.
pub fn linear_interpolant<const D: usize>(
    x_in: [f64; D],
    x_out: [f64; D],
    grid: GridSpec,
    particle: u8,
) -> Result<Worldline<D>> {
    let n = grid.n_steps() as f64;
    let nodes = (0..=grid.n_steps())
        .map(|i| {
            if i == grid.n_steps() {
                return x_out;
            }
            let t = i as f64 / n;
            std::array::from_fn(|c| x_in[c] + t * (x_out[c] - x_in[c]))
        })
        .collect();
    Worldline::new(grid, nodes, particle)
}
