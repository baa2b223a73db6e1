//! Spatial averaging of per-neuron potentials into the macroscopic potential
//! `v(t)`.
//!
//! Every coefficient of the averaging integral is time independent, so it
//! collapses to one weight per neuron:
//!
//! ```text
//! w[x] = psi(x) * sum_y rho_z(y) * chi_i(y) / (|I| * g(chi(y))) * dy
//! ```
//!
//! with `z` the class and `i` the n-cell of `x`. [`average_naive`] evaluates
//! the integral directly and is kept as the reference.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compartment::{Compartment, ValidationReport, G_EPSILON};
use crate::dynamics::SimulationRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AveragingError {
    #[error("compartment is invalid:\n{0}")]
    InvalidCompartment(ValidationReport),
    #[error("no potential given for neuron {0}")]
    MissingNeuron(usize),
    #[error("expected {expected} neurons, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("record neuron order differs from the weights at position {0}")]
    NeuronOrder(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingWeights {
    /// Sorted ascending; `w[k]` belongs to `neuron_ids[k]`.
    pub neuron_ids: Vec<usize>,
    pub w: Vec<f64>,
    pub g_kind: String,
    pub resolution: Vec<usize>,
    /// Structure digest of the source compartment.
    pub checksum: String,
}

impl AveragingWeights {
    pub fn weight_of(&self, neuron_id: usize) -> Option<f64> {
        self.neuron_ids
            .binary_search(&neuron_id)
            .ok()
            .map(|k| self.w[k])
    }

    pub fn matches(&self, c: &Compartment) -> bool {
        self.checksum == c.structure_digest()
    }
}

/// Lattice values of `1 / (|I| g(chi(y)))`, zero where `g` is below the guard.
fn inverse_normalizer(c: &Compartment) -> Vec<f64> {
    let n_cells = c.ncells.len() as f64;
    (0..c.domain.cell_count())
        .map(|y| {
            let g = c.g_at(y);
            if g < G_EPSILON {
                0.0
            } else {
                1.0 / (n_cells * g)
            }
        })
        .collect()
}

pub fn precompute_weights(c: &Compartment) -> Result<AveragingWeights, AveragingError> {
    let report = c.validate();
    if !report.is_empty() {
        return Err(AveragingError::InvalidCompartment(report));
    }
    let inv_g = inverse_normalizer(c);
    let dy = c.domain.cell_volume();
    // coef[z][i] = sum_y rho_z(y) chi_i(y) / (|I| g(y)) dy
    let coef: Vec<Vec<f64>> = c
        .rho
        .iter()
        .map(|rho| {
            c.chi
                .iter()
                .map(|chi| {
                    rho.iter()
                        .zip(chi)
                        .zip(&inv_g)
                        .map(|((r, x), ig)| r * x * ig)
                        .sum::<f64>()
                        * dy
                })
                .collect()
        })
        .collect();
    let w = c
        .neurons
        .iter()
        .map(|n| {
            let z = c.class_position(n.class_id).unwrap();
            let i = c.ncell_position(n.ncell_id).unwrap();
            c.psi_of(n) * coef[z][i]
        })
        .collect();
    Ok(AveragingWeights {
        neuron_ids: c.neurons.iter().map(|n| n.id).collect(),
        w,
        g_kind: c.g.kind().to_string(),
        resolution: c.domain.axis_sizes(),
        checksum: c.structure_digest(),
    })
}

/// `v = sum_x w[x] u[x]` for a snapshot keyed by neuron id, summed in id order.
pub fn average(wts: &AveragingWeights, u: &BTreeMap<usize, f64>) -> Result<f64, AveragingError> {
    let mut v = 0.0;
    for (id, w) in wts.neuron_ids.iter().zip(&wts.w) {
        let ux = u.get(id).ok_or(AveragingError::MissingNeuron(*id))?;
        v += w * ux;
    }
    Ok(v)
}

/// As [`average`] for a row already ordered like `wts.neuron_ids`.
pub fn average_row(wts: &AveragingWeights, u: &[f64]) -> Result<f64, AveragingError> {
    if u.len() != wts.w.len() {
        return Err(AveragingError::ShapeMismatch {
            expected: wts.w.len(),
            found: u.len(),
        });
    }
    Ok(wts.w.iter().zip(u).map(|(w, x)| w * x).sum())
}

/// Direct evaluation of the averaging integral: loops over classes, lattice
/// points, n-cells and their member neurons with no precomputation.
pub fn average_naive(c: &Compartment, u: &BTreeMap<usize, f64>) -> Result<f64, AveragingError> {
    let report = c.validate();
    if !report.is_empty() {
        return Err(AveragingError::InvalidCompartment(report));
    }
    for n in &c.neurons {
        if !u.contains_key(&n.id) {
            return Err(AveragingError::MissingNeuron(n.id));
        }
    }
    let n_cells = c.ncells.len() as f64;
    let dy = c.domain.cell_volume();
    let mut v = 0.0;
    for (z, class) in c.classes.iter().enumerate() {
        for y in 0..c.domain.cell_count() {
            let g = c.g.eval(c.chi.iter().map(|f| f[y]));
            if g < G_EPSILON {
                continue;
            }
            let mut inner = 0.0;
            for (i, ncell) in c.ncells.iter().enumerate() {
                let mut cell_sum = 0.0;
                for (node, &id) in ncell.nodes.iter().enumerate() {
                    let x = c.neuron(id).unwrap();
                    if x.class_id != class.id {
                        continue;
                    }
                    cell_sum += ncell.psi[node] * u[&id];
                }
                inner += c.chi[i][y] * cell_sum / (n_cells * g);
            }
            v += c.rho[z][y] * inner * dy;
        }
    }
    Ok(v)
}

/// `v(t)` for every recorded row.
pub fn average_trace(wts: &AveragingWeights, record: &SimulationRecord) -> Result<Vec<f64>, AveragingError> {
    if record.neuron_ids.len() != wts.neuron_ids.len() {
        return Err(AveragingError::ShapeMismatch {
            expected: wts.neuron_ids.len(),
            found: record.neuron_ids.len(),
        });
    }
    if let Some(k) = record.neuron_ids.iter().zip(&wts.neuron_ids).position(|(a, b)| a != b) {
        return Err(AveragingError::NeuronOrder(k));
    }
    let rows = record.times.len();
    if record.u.len() != rows * wts.w.len() {
        return Err(AveragingError::ShapeMismatch {
            expected: rows * wts.w.len(),
            found: record.u.len(),
        });
    }
    (0..rows)
        .into_par_iter()
        .map(|k| average_row(wts, record.row(k)))
        .collect()
}
