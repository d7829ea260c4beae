//! Mutable per-node simulation state: positions, velocities, lumped
//! masses, and Dirichlet (scripted boundary) data.

use crate::math::VecD;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SimState<const D: usize> {
    /// Current nodal positions.
    pub x: Vec<VecD<D>>,
    /// Positions at the previous time step.
    pub x_prev: Vec<VecD<D>>,
    /// Nodal velocities (meaningful in dynamic mode only).
    pub v: Vec<VecD<D>>,
    /// Lumped (diagonal) nodal masses.
    pub mass: Vec<f64>,
    /// Whether each node is Dirichlet-scripted.
    pub dirichlet: Vec<bool>,
    /// Script target for Dirichlet nodes (ignored for free nodes).
    pub target: Vec<VecD<D>>,
}

impl<const D: usize> SimState<D> {
    /// State at rest: positions and targets at the reference configuration,
    /// zero velocity.
    pub fn at_rest(rest: &[VecD<D>], mass: Vec<f64>) -> Self {
        assert_eq!(rest.len(), mass.len());
        Self {
            x: rest.to_vec(),
            x_prev: rest.to_vec(),
            v: vec![VecD::zeros(); rest.len()],
            mass,
            dirichlet: vec![false; rest.len()],
            target: rest.to_vec(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.x.len()
    }

    pub fn is_free(&self, i: usize) -> bool {
        !self.dirichlet[i]
    }

    /// Pin every Dirichlet node exactly onto its target.
    pub fn apply_dirichlet_targets(&mut self) {
        for i in 0..self.x.len() {
            if self.dirichlet[i] {
                self.x[i] = self.target[i];
            }
        }
    }

    /// Dynamic integration needs strictly positive mass on free nodes.
    pub fn check_dynamic_masses(&self) -> Result<()> {
        for i in 0..self.x.len() {
            if !self.dirichlet[i] && self.mass[i] <= 0.0 {
                return Err(Error::ZeroMass {
                    node: i,
                    mass: self.mass[i],
                });
            }
        }
        Ok(())
    }
}
