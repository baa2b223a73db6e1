//! Seeded generators of small valid compartments, for property tests and
//! oracle comparisons, and a scalar reference neuron.

pub mod hh_reference;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compartment::{
    build_compartment, Compartment, CompartmentParts, GSpec, NCell, Neuron, NeurotransmitterClass, Sign, Synapse,
};
use crate::dynamics::{simulate, ModelParameters, SimulationConfig, StimulusSpec, StimulusTarget};
use crate::lattice::SpatialDomain;

/// Size limits for [`random_compartment`].
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub max_ncells: usize,
    pub max_neurons: usize,
    pub max_resolution: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_ncells: 5,
            max_neurons: 50,
            max_resolution: 16,
        }
    }
}

/// A random valid compartment in 2 or 3 dimensions, up to three classes,
/// random densities, compositions, weights and intra-cell synapses.
pub fn random_compartment(seed: u64, g: GSpec, limits: Limits) -> Compartment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(2..=3);
    // Coarser lattices in 3-D keep the direct quadrature cheap.
    let max_res = match dim {
        3 => limits.max_resolution.min(8),
        _ => limits.max_resolution,
    };
    let mut lower = [0.0; 3];
    let mut upper = [0.0; 3];
    let mut res = [1usize; 3];
    for a in 0..dim {
        lower[a] = rng.random_range(-2.0..2.0);
        upper[a] = lower[a] + rng.random_range(2.0..6.0);
        res[a] = rng.random_range(2..=max_res.max(2));
    }
    let domain = SpatialDomain::new(&lower[..dim], &upper[..dim], &res[..dim]);
    let cells = domain.cell_count();

    let n_classes = rng.random_range(1..=3);
    let classes: Vec<NeurotransmitterClass> = (0..n_classes)
        .map(|z| {
            let inhibitory = rng.random_bool(0.5);
            let reversal = if inhibitory { -80.0 } else { 0.0 };
            NeurotransmitterClass::new(z, &format!("C{z}"), reversal, rng.random_bool(0.3))
        })
        .collect();

    let n_cells = rng.random_range(1..=limits.max_ncells);
    let per_cell_max = (limits.max_neurons / n_cells).max(1);
    let mut neurons = Vec::new();
    let mut ncells = Vec::new();
    for i in 0..n_cells {
        let count = rng.random_range(1..=per_cell_max);
        let first = neurons.len();
        let mut psi = Vec::with_capacity(count);
        for k in 0..count {
            let mut position = [0.0; 3];
            for a in 0..dim {
                position[a] = rng.random_range(lower[a]..upper[a]);
            }
            neurons.push(Neuron {
                id: first + k,
                class_id: rng.random_range(0..n_classes),
                ncell_id: i,
                node_index: k,
                position,
            });
            psi.push(if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.1..2.0) });
        }
        if psi.iter().all(|&p| p == 0.0) {
            psi[0] = 1.0;
        }
        let nodes: Vec<usize> = (first..first + count).collect();
        let mut synapses = Vec::new();
        if count > 1 {
            for _ in 0..rng.random_range(0..=count) {
                let pre = nodes[rng.random_range(0..count)];
                let post = nodes[rng.random_range(0..count)];
                if pre == post {
                    continue;
                }
                let class = &classes[neurons[pre].class_id];
                let sign = if class.is_modulatory && rng.random_bool(0.5) {
                    match class.native_sign() {
                        Sign::Excitatory => Sign::Inhibitory,
                        Sign::Inhibitory => Sign::Excitatory,
                    }
                } else {
                    class.native_sign()
                };
                synapses.push(Synapse {
                    pre,
                    post,
                    receptor_class: class.id,
                    weight: rng.random_range(0.1..2.0),
                    sign,
                });
            }
        }
        ncells.push(NCell {
            id: i,
            nodes,
            synapses,
            psi,
        });
    }

    let vol = domain.cell_volume();
    let rho: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            let raw: Vec<f64> = (0..cells).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum::<f64>() * vol;
            raw.iter().map(|r| r / total).collect()
        })
        .collect();
    let chi: Vec<Vec<f64>> = (0..n_cells)
        .map(|_| {
            let mut f: Vec<f64> = (0..cells)
                .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) })
                .collect();
            if f.iter().all(|&x| x == 0.0) {
                f[0] = 0.5;
            }
            f
        })
        .collect();

    build_compartment(CompartmentParts {
        domain,
        classes,
        ncells,
        neurons,
        rho,
        chi,
        g,
        cross_cell_edges: false,
    })
    .expect("generated compartment is valid")
}

/// One unconnected neuron with default membrane parameters.
pub fn single_neuron() -> Compartment {
    let domain = SpatialDomain::cube(2, 2.0, 2);
    build_compartment(CompartmentParts {
        domain: domain.clone(),
        classes: vec![NeurotransmitterClass::new(0, "Glu", 0.0, false)],
        ncells: vec![NCell {
            id: 0,
            nodes: vec![0],
            synapses: vec![],
            psi: vec![1.0],
        }],
        neurons: vec![Neuron {
            id: 0,
            class_id: 0,
            ncell_id: 0,
            node_index: 0,
            position: domain.center(),
        }],
        rho: vec![domain.uniform_density()],
        chi: vec![vec![1.0; domain.cell_count()]],
        g: GSpec::Sum,
        cross_cell_edges: false,
    })
    .expect("single neuron is valid")
}

/// Membrane potential (mV) of [`single_neuron`] under a constant current
/// over `[0, duration)`, sampled after every step from t = 0.
pub fn single_neuron_v(dt: f64, duration: f64, amplitude: f64) -> Vec<f64> {
    let c = single_neuron();
    let stimuli = if amplitude == 0.0 {
        vec![]
    } else {
        vec![StimulusSpec {
            target: StimulusTarget::Neurons(vec![0]),
            amplitude,
            onset: 0.0,
            offset: duration,
        }]
    };
    let cfg = SimulationConfig {
        dt,
        duration,
        seed: 0,
        record_every: 1,
        stimuli,
    };
    let model = ModelParameters::default();
    let rec = simulate(&c, &cfg, &model).expect("single neuron simulates");
    let rest = model.hh.resting_potential().expect("resting potential");
    rec.u.iter().map(|u| u + rest).collect()
}
