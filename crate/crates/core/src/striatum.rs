//! Corpus-striatum demo compartment: five populations on a square lattice,
//! the microcircuit edge table, block n-cells and the cholinergic point
//! stimulus.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compartment::{
    build_compartment, sample_positions, BuildError, Compartment, CompartmentParts, GSpec, HhOverrides,
    KineticsOverrides, NCell, Neuron, NeurotransmitterClass, SampleError, Sign, Synapse,
};
use crate::dynamics::{SimulationConfig, StimulusSpec, StimulusTarget, DEFAULT_DT_MS};
use crate::lattice::{distance, SpatialDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Population {
    /// Spiny projection neurons, direct pathway (D1).
    St1A,
    /// Spiny projection neurons, indirect pathway (D2).
    St1B,
    /// Dopaminergic interneurons.
    St2,
    /// GABAergic interneurons.
    St3,
    /// Cholinergic interneurons.
    St4,
}

pub const POPULATIONS: [Population; 5] = [
    Population::St1A,
    Population::St1B,
    Population::St2,
    Population::St3,
    Population::St4,
];

pub const GABA: usize = 0;
pub const DA: usize = 1;
pub const ACH: usize = 2;

impl Population {
    pub fn label(self) -> &'static str {
        match self {
            Population::St1A => "St1A",
            Population::St1B => "St1B",
            Population::St2 => "St2",
            Population::St3 => "St3",
            Population::St4 => "St4",
        }
    }

    /// Transmitter class id.
    pub fn class_id(self) -> usize {
        match self {
            Population::St1A | Population::St1B | Population::St3 => GABA,
            Population::St2 => DA,
            Population::St4 => ACH,
        }
    }

    pub fn is_spiny(self) -> bool {
        matches!(self, Population::St1A | Population::St1B)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Every permitted connection with its action on the target. Ambiguous
/// connections (dopaminergic target of the GABAergic interneurons, any input
/// to the GABAergic interneurons) are left out.
pub const EDGE_TABLE: [(Population, Population, Sign); 12] = {
    use Population::*;
    use Sign::*;
    [
        (St4, St1A, Inhibitory),
        (St4, St1B, Excitatory),
        (St4, St2, Excitatory),
        (St3, St1A, Inhibitory),
        (St3, St1B, Inhibitory),
        (St3, St4, Inhibitory),
        (St2, St1A, Excitatory),
        (St2, St1B, Inhibitory),
        (St1A, St1A, Inhibitory),
        (St1A, St1B, Inhibitory),
        (St1B, St1A, Inhibitory),
        (St1B, St1B, Inhibitory),
    ]
};

pub fn edge_sign(pre: Population, post: Population) -> Option<Sign> {
    EDGE_TABLE
        .iter()
        .find(|(a, b, _)| *a == pre && *b == post)
        .map(|e| e.2)
}

/// Connection rule for one (pre, post) population pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeConfig {
    pub pre: Population,
    pub post: Population,
    /// Probability for a pair inside one n-cell.
    pub within: f64,
    /// Probability for a pair in n-cells sharing an edge.
    pub adjacent: f64,
    /// Synapse weight.
    pub weight: f64,
}

/// Per-class parameter overrides, keyed by class id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassTuning {
    pub hh: HhOverrides,
    pub kinetics: KineticsOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StriatumParams {
    pub total_neurons: usize,
    /// Fraction per population, in [`POPULATIONS`] order.
    pub fractions: [f64; 5],
    /// Lattice cells per axis; the domain is `[0, grid_side]^2`.
    pub grid_side: usize,
    /// n-cells per axis. Each n-cell is a square block of the lattice.
    pub ncell_side: usize,
    pub edges: Vec<EdgeConfig>,
    /// Overrides for the GABA, DA and ACh classes, in that order.
    pub classes: [ClassTuning; 3],
    /// Relative amplitude of the smooth density perturbation.
    pub density_perturbation: f64,
    pub seed: u64,
}

/// Neurons per n-cell at the default size; connection probabilities are
/// tuned for this block population.
const REFERENCE_BLOCK_NEURONS: f64 = 64.0;
const DEFAULT_WITHIN: f64 = 0.15;
const DEFAULT_ADJACENT: f64 = 0.02;

impl Default for StriatumParams {
    fn default() -> Self {
        let edges = EDGE_TABLE
            .iter()
            .map(|&(pre, post, sign)| EdgeConfig {
                pre,
                post,
                within: DEFAULT_WITHIN,
                adjacent: DEFAULT_ADJACENT,
                weight: match sign {
                    Sign::Excitatory => 1.0,
                    Sign::Inhibitory => 0.5,
                },
            })
            .collect();
        // A leak reversal near threshold lets a neuron fire on release from
        // inhibition, and the short decay sets the gamma-range rhythm. A
        // single inhibitory input is just too weak to trigger that rebound,
        // so activity spreads where inputs converge.
        let tuning = ClassTuning {
            hh: HhOverrides {
                e_l: Some(-49.5),
                ..Default::default()
            },
            kinetics: KineticsOverrides {
                tau_decay: Some(3.0),
                ..Default::default()
            },
        };
        StriatumParams {
            total_neurons: 6400,
            fractions: [0.48, 0.48, 0.01, 0.015, 0.015],
            grid_side: 80,
            ncell_side: 10,
            edges,
            classes: [tuning.clone(), tuning.clone(), tuning],
            density_perturbation: 0.2,
            seed: 1,
        }
    }
}

impl StriatumParams {
    /// Defaults resized to `total_neurons`: the lattice side follows the
    /// square root of the count (a multiple of `ncell_side`), and connection
    /// probabilities scale so that the expected number of synapses per
    /// neuron stays as at the default size, capped at 1.
    pub fn scaled(total_neurons: usize) -> StriatumParams {
        let mut p = StriatumParams::default();
        let blocks = ((total_neurons as f64).sqrt() / p.ncell_side as f64).round().max(1.0) as usize;
        p.grid_side = blocks * p.ncell_side;
        p.total_neurons = total_neurons;
        let per_block = total_neurons as f64 / (p.ncell_side * p.ncell_side) as f64;
        let factor = REFERENCE_BLOCK_NEURONS / per_block.max(1e-9);
        for e in &mut p.edges {
            e.within = (e.within * factor).min(1.0);
            e.adjacent = (e.adjacent * factor).min(1.0);
        }
        p
    }

    pub fn block_side(&self) -> usize {
        self.grid_side / self.ncell_side.max(1)
    }

    pub fn check(&self) -> Result<(), StriatumError> {
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(StriatumError::InvalidFractions(format!(
                "every fraction must lie in [0, 1]: {:?}",
                self.fractions
            )));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(StriatumError::InvalidFractions(format!("fractions sum to {sum}, not 1")));
        }
        if self.ncell_side == 0 || self.grid_side < 2 || self.grid_side % self.ncell_side != 0 {
            return Err(StriatumError::InvalidParams(format!(
                "grid_side {} must be at least 2 and a multiple of ncell_side {}",
                self.grid_side, self.ncell_side
            )));
        }
        if !(0.0..1.0).contains(&self.density_perturbation) {
            return Err(StriatumError::InvalidParams(format!(
                "density perturbation {} must lie in [0, 1)",
                self.density_perturbation
            )));
        }
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if edge_sign(e.pre, e.post).is_none() {
                return Err(StriatumError::ForbiddenEdge { pre: e.pre, post: e.post });
            }
            if !seen.insert((e.pre, e.post)) {
                return Err(StriatumError::InvalidParams(format!("edge {} -> {} listed twice", e.pre, e.post)));
            }
            for p in [e.within, e.adjacent] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(StriatumError::InvalidParams(format!(
                        "edge {} -> {}: probability {p} outside [0, 1]",
                        e.pre, e.post
                    )));
                }
            }
            if !(e.weight >= 0.0 && e.weight.is_finite()) {
                return Err(StriatumError::InvalidParams(format!(
                    "edge {} -> {}: weight {} must be finite and nonnegative",
                    e.pre, e.post, e.weight
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StriatumError {
    #[error("invalid population fractions: {0}")]
    InvalidFractions(String),
    #[error("edge {pre} -> {post} is not part of the striatal microcircuit")]
    ForbiddenEdge { pre: Population, post: Population },
    #[error("invalid striatum parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Build(#[from] BuildError),
}

/// A built striatum: the compartment plus the population of every neuron.
#[derive(Debug, Clone)]
pub struct Striatum {
    pub compartment: Compartment,
    /// Indexed like `compartment.neurons`.
    pub populations: Vec<Population>,
    pub params: StriatumParams,
}

impl Striatum {
    pub fn count(&self, pop: Population) -> usize {
        self.populations.iter().filter(|&&p| p == pop).count()
    }
}

/// Population sizes by largest remainder, summing exactly to `total`.
pub fn population_counts(fractions: &[f64; 5], total: usize) -> [usize; 5] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts = [0usize; 5];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..5).collect();
    // Largest remainder first; earlier populations win ties.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

fn seed_for(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Uniform density times `1 + amplitude * p`, with `p` a random sum of low
/// spatial frequencies scaled to `max |p| = 1`, renormalized to unit integral.
fn perturbed_density(domain: &SpatialDomain, amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let side = domain.extent(0);
    let modes: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let kx = rng.random_range(0..=2) as f64;
            let ky = rng.random_range(1..=2) as f64;
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            let amp = 0.5 + rng.random::<f64>();
            (kx, ky, phase, amp)
        })
        .collect();
    let raw: Vec<f64> = (0..domain.cell_count())
        .map(|cell| {
            let c = domain.cell_center(cell);
            modes
                .iter()
                .map(|(kx, ky, ph, a)| {
                    a * (std::f64::consts::TAU * (kx * c[0] + ky * c[1]) / side + ph).sin()
                })
                .sum()
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
    let mut rho: Vec<f64> = raw.iter().map(|p| 1.0 + scale * p).collect();
    let total = domain.integrate(&rho);
    rho.iter_mut().for_each(|v| *v /= total);
    rho
}

/// Block indicator with a half-weight ring one lattice cell wide.
fn block_chi(domain: &SpatialDomain, block_side: usize, bx: usize, by: usize) -> Vec<f64> {
    let (x0, y0) = ((bx * block_side) as i64, (by * block_side) as i64);
    let (x1, y1) = (x0 + block_side as i64 - 1, y0 + block_side as i64 - 1);
    (0..domain.cell_count())
        .map(|cell| {
            let idx = domain.unflatten(cell);
            let (x, y) = (idx[0] as i64, idx[1] as i64);
            let dx = (x0 - x).max(x - x1).max(0);
            let dy = (y0 - y).max(y - y1).max(0);
            match dx.max(dy) {
                0 => 1.0,
                1 => 0.5,
                _ => 0.0,
            }
        })
        .collect()
}

pub fn build_striatum(params: &StriatumParams) -> Result<Striatum, StriatumError> {
    params.check()?;
    let side = params.grid_side;
    let domain = SpatialDomain::cube(2, side as f64, side);
    let counts = population_counts(&params.fractions, params.total_neurons);

    let mut field_rng = ChaCha8Rng::seed_from_u64(seed_for(params.seed, 1));
    let pop_density: Vec<Vec<f64>> = POPULATIONS
        .iter()
        .map(|_| perturbed_density(&domain, params.density_perturbation, &mut field_rng))
        .collect();

    // Neurons in population order, positions drawn from each population's
    // density.
    let mut positions = Vec::with_capacity(params.total_neurons);
    let mut populations = Vec::with_capacity(params.total_neurons);
    for (k, pop) in POPULATIONS.iter().enumerate() {
        let pts = sample_positions(&domain, &pop_density[k], counts[k], seed_for(params.seed, 100 + k as u64))?;
        populations.extend(std::iter::repeat_n(*pop, pts.len()));
        positions.extend(pts);
    }

    // A class density is the count-weighted mixture of its populations.
    let mut rho = vec![vec![0.0; domain.cell_count()]; 3];
    let mut class_counts = [0usize; 3];
    for (k, pop) in POPULATIONS.iter().enumerate() {
        class_counts[pop.class_id()] += counts[k];
    }
    for (k, pop) in POPULATIONS.iter().enumerate() {
        let z = pop.class_id();
        let share = if class_counts[z] > 0 {
            counts[k] as f64 / class_counts[z] as f64
        } else {
            0.0
        };
        for (r, d) in rho[z].iter_mut().zip(&pop_density[k]) {
            *r += share * d;
        }
    }
    for (z, field) in rho.iter_mut().enumerate() {
        if class_counts[z] == 0 {
            *field = domain.uniform_density();
        }
    }

    let block = params.block_side();
    let nb = params.ncell_side;
    let block_of = |p: &[f64; 3]| -> (usize, usize) {
        let bx = ((p[0] / block as f64).floor() as usize).min(nb - 1);
        let by = ((p[1] / block as f64).floor() as usize).min(nb - 1);
        (bx, by)
    };
    let n = positions.len();
    let ncell_of: Vec<usize> = positions
        .iter()
        .map(|p| {
            let (bx, by) = block_of(p);
            by * nb + bx
        })
        .collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nb * nb];
    for (i, &c) in ncell_of.iter().enumerate() {
        members[c].push(i);
    }
    let mut node_index = vec![0usize; n];
    for m in &members {
        for (k, &i) in m.iter().enumerate() {
            node_index[i] = k;
        }
    }

    let mut rule = [[None::<&EdgeConfig>; 5]; 5];
    for e in &params.edges {
        rule[e.pre.index()][e.post.index()] = Some(e);
    }
    let mut edge_rng = ChaCha8Rng::seed_from_u64(seed_for(params.seed, 2));
    let mut synapses: Vec<Vec<Synapse>> = vec![Vec::new(); nb * nb];
    for pre in 0..n {
        let cell = ncell_of[pre];
        let (bx, by) = (cell % nb, cell / nb);
        let mut candidates: Vec<(usize, bool)> = vec![(cell, true)];
        if bx > 0 {
            candidates.push((cell - 1, false));
        }
        if bx + 1 < nb {
            candidates.push((cell + 1, false));
        }
        if by > 0 {
            candidates.push((cell - nb, false));
        }
        if by + 1 < nb {
            candidates.push((cell + nb, false));
        }
        candidates.sort_unstable();
        let pre_pop = populations[pre];
        for (c, same) in candidates {
            for &post in &members[c] {
                if post == pre {
                    continue;
                }
                let Some(e) = rule[pre_pop.index()][populations[post].index()] else {
                    continue;
                };
                let p = if same { e.within } else { e.adjacent };
                if p > 0.0 && edge_rng.random::<f64>() < p {
                    synapses[cell].push(Synapse {
                        pre,
                        post,
                        receptor_class: pre_pop.class_id(),
                        weight: e.weight,
                        sign: edge_sign(pre_pop, populations[post]).unwrap(),
                    });
                }
            }
        }
    }

    let mut classes = vec![
        NeurotransmitterClass::new(GABA, "GABA", -80.0, false),
        NeurotransmitterClass::new(DA, "DA", 0.0, true),
        NeurotransmitterClass::new(ACH, "ACh", 0.0, true),
    ];
    for (class, tuning) in classes.iter_mut().zip(&params.classes) {
        class.hh = tuning.hh.clone();
        class.kinetics = tuning.kinetics.clone();
    }

    let neurons = (0..n)
        .map(|i| Neuron {
            id: i,
            class_id: populations[i].class_id(),
            ncell_id: ncell_of[i],
            node_index: node_index[i],
            position: positions[i],
        })
        .collect();
    // Blocks that received no neurons are not n-cells.
    let mut ncells = Vec::new();
    let mut chi = Vec::new();
    for (id, (m, syn)) in members.iter().zip(synapses).enumerate() {
        if m.is_empty() {
            continue;
        }
        ncells.push(NCell {
            id,
            nodes: m.clone(),
            synapses: syn,
            psi: vec![1.0; m.len()],
        });
        chi.push(block_chi(&domain, block, id % nb, id / nb));
    }

    let compartment = build_compartment(CompartmentParts {
        domain,
        classes,
        ncells,
        neurons,
        rho,
        chi,
        g: GSpec::Sum,
        cross_cell_edges: true,
    })?;
    Ok(Striatum {
        compartment,
        populations,
        params: params.clone(),
    })
}

pub const DEMO_AMPLITUDE: f64 = 10.0;
pub const DEMO_DURATION_MS: f64 = 2000.0;
/// 0.5 ms between recorded rows at the default step.
pub const DEMO_RECORD_EVERY: usize = 20;

/// The cholinergic neuron closest to the domain center (lowest id on ties).
pub fn central_cholinergic(s: &Striatum) -> Option<usize> {
    let center = s.compartment.domain.center();
    s.compartment
        .neurons
        .iter()
        .zip(&s.populations)
        .filter(|(_, &p)| p == Population::St4)
        .map(|(n, _)| (distance(&n.position, &center), n.id))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

/// Tonic current onto the central cholinergic neuron over `[0, duration)`.
pub fn demo_stimulus(s: &Striatum, duration: f64) -> Option<StimulusSpec> {
    central_cholinergic(s).map(|id| StimulusSpec {
        target: StimulusTarget::Neurons(vec![id]),
        amplitude: DEMO_AMPLITUDE,
        onset: 0.0,
        offset: duration,
    })
}

pub fn demo_config(s: &Striatum, duration: f64, dt: f64, seed: u64) -> SimulationConfig {
    SimulationConfig {
        dt,
        duration,
        seed,
        record_every: ((0.5 / dt).round() as usize).max(1),
        stimuli: demo_stimulus(s, duration).into_iter().collect(),
    }
}

impl Default for Striatum {
    fn default() -> Self {
        build_striatum(&StriatumParams::default()).expect("default striatum builds")
    }
}

/// Default step and record stride of the demo.
pub const DEMO_DT_MS: f64 = DEFAULT_DT_MS;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts_follow_fractions() {
        let c = population_counts(&StriatumParams::default().fractions, 6400);
        assert_eq!(c, [3072, 3072, 64, 96, 96]);
        assert_eq!(c[0] + c[1], 6144);
    }

    #[test]
    fn counts_always_sum_to_total() {
        for total in [0, 1, 7, 99, 400, 401] {
            let c = population_counts(&[0.48, 0.48, 0.01, 0.015, 0.015], total);
            assert_eq!(c.iter().sum::<usize>(), total);
        }
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let mut p = StriatumParams::default();
        p.fractions = [0.4, 0.4, 0.05, 0.025, 0.025];
        assert!(matches!(p.check(), Err(StriatumError::InvalidFractions(_))));
    }

    #[test]
    fn edges_outside_the_table_are_rejected() {
        let mut p = StriatumParams::default();
        p.edges.push(EdgeConfig {
            pre: Population::St3,
            post: Population::St2,
            within: 0.1,
            adjacent: 0.0,
            weight: 1.0,
        });
        assert_eq!(
            p.check(),
            Err(StriatumError::ForbiddenEdge {
                pre: Population::St3,
                post: Population::St2
            })
        );
    }

    #[test]
    fn scaled_params_keep_the_ncell_grid() {
        let p = StriatumParams::scaled(400);
        assert_eq!(p.grid_side, 20);
        assert_eq!(p.block_side(), 2);
        let e = &p.edges[0];
        assert_eq!(e.within, 1.0);
        assert!((e.adjacent - 0.32).abs() < 1e-12);
    }

    #[test]
    fn chi_ring_is_half_weight() {
        let d = SpatialDomain::cube(2, 8.0, 8);
        let chi = block_chi(&d, 2, 1, 1);
        assert_eq!(chi[d.flatten([2, 2, 0])], 1.0);
        assert_eq!(chi[d.flatten([1, 1, 0])], 0.5);
        assert_eq!(chi[d.flatten([4, 3, 0])], 0.5);
        assert_eq!(chi[d.flatten([5, 5, 0])], 0.0);
    }

    #[test]
    fn small_build_is_valid_and_stimulus_hits_one_cholinergic_neuron() {
        let s = build_striatum(&StriatumParams::scaled(400)).unwrap();
        assert_eq!(s.compartment.neuron_count(), 400);
        assert!(s.compartment.validate().is_empty());
        let stim = demo_stimulus(&s, 100.0).unwrap();
        let StimulusTarget::Neurons(ids) = &stim.target else {
            panic!("expected explicit target")
        };
        assert_eq!(ids.len(), 1);
        assert_eq!(s.populations[ids[0]], Population::St4);
        assert_eq!((stim.onset, stim.offset), (0.0, 100.0));
    }
}
