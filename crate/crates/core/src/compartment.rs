//! Compartment data model: neurotransmitter classes, neurons, n-cell graphs
//! and the spatial fields (`rho`, `chi`, `g`) that drive the averaging.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lattice::{Point, SpatialDomain};

/// Lattice points where `g(chi(y))` falls below this contribute nothing.
pub const G_EPSILON: f64 = 1e-12;
/// Tolerance on the unit integral of each `rho` field.
pub const RHO_NORMALIZATION_TOL: f64 = 1e-6;
/// Reversal potentials above this are read as excitatory.
pub const EXCITATORY_SPLIT_MV: f64 = -50.0;
pub const REVERSAL_RANGE_MV: (f64, f64) = (-100.0, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Excitatory,
    Inhibitory,
}

impl Sign {
    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Excitatory => 1,
            Sign::Inhibitory => -1,
        }
    }

    pub fn from_i64(v: i64) -> Option<Sign> {
        match v {
            1 => Some(Sign::Excitatory),
            -1 => Some(Sign::Inhibitory),
            _ => None,
        }
    }

    /// Action implied by a reversal potential.
    pub fn of_reversal(reversal_mv: f64) -> Sign {
        if reversal_mv > EXCITATORY_SPLIT_MV {
            Sign::Excitatory
        } else {
            Sign::Inhibitory
        }
    }
}

impl Serialize for Sign {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.as_i8())
    }
}

impl<'de> Deserialize<'de> for Sign {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Sign::from_i64(v).ok_or_else(|| serde::de::Error::custom("sign must be +1 or -1"))
    }
}

/// Per-class overrides of the membrane model. Unset fields keep the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HhOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_na: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_na: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_l: Option<f64>,
}

impl HhOverrides {
    pub fn is_empty(&self) -> bool {
        *self == HhOverrides::default()
    }
}

/// Per-class overrides of the receptor kinetics used when this class is the
/// transmitter of a synapse.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticsOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_rise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_peak_scale: Option<f64>,
    /// Reversal used by synapses acting against the class's native sign
    /// (only meaningful for modulatory classes).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opposite_reversal_mv: Option<f64>,
}

impl KineticsOverrides {
    pub fn is_empty(&self) -> bool {
        *self == KineticsOverrides::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeurotransmitterClass {
    pub id: usize,
    pub label: String,
    pub synaptic_reversal_mv: f64,
    pub is_modulatory: bool,
    pub hh: HhOverrides,
    pub kinetics: KineticsOverrides,
}

impl NeurotransmitterClass {
    pub fn new(id: usize, label: &str, synaptic_reversal_mv: f64, is_modulatory: bool) -> Self {
        NeurotransmitterClass {
            id,
            label: label.to_string(),
            synaptic_reversal_mv,
            is_modulatory,
            hh: HhOverrides::default(),
            kinetics: KineticsOverrides::default(),
        }
    }

    pub fn native_sign(&self) -> Sign {
        Sign::of_reversal(self.synaptic_reversal_mv)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neuron {
    pub id: usize,
    pub class_id: usize,
    pub ncell_id: usize,
    pub node_index: usize,
    pub position: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Synapse {
    pub pre: usize,
    pub post: usize,
    pub receptor_class: usize,
    pub weight: f64,
    pub sign: Sign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NCell {
    pub id: usize,
    /// Neuron ids, indexed by node index.
    pub nodes: Vec<usize>,
    pub synapses: Vec<Synapse>,
    /// Averaging weight per node index.
    pub psi: Vec<f64>,
}

/// The normalizer `g` applied to the vector of n-cell composition values.
#[derive(Debug, Clone, PartialEq)]
pub enum GSpec {
    Sum,
    Max,
    Const(f64),
}

impl GSpec {
    pub fn eval(&self, chi: impl IntoIterator<Item = f64>) -> f64 {
        match self {
            GSpec::Sum => chi.into_iter().sum(),
            GSpec::Max => chi.into_iter().fold(0.0, f64::max),
            GSpec::Const(c) => *c,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            GSpec::Sum => "sum",
            GSpec::Max => "max",
            GSpec::Const(_) => "const",
        }
    }
}

/// Unchecked inputs of [`Compartment::from_parts`].
#[derive(Debug, Clone)]
pub struct CompartmentParts {
    pub domain: SpatialDomain,
    pub classes: Vec<NeurotransmitterClass>,
    pub ncells: Vec<NCell>,
    pub neurons: Vec<Neuron>,
    pub rho: Vec<Vec<f64>>,
    pub chi: Vec<Vec<f64>>,
    pub g: GSpec,
    pub cross_cell_edges: bool,
}

/// Immutable structural description of one region.
#[derive(Debug, Clone)]
pub struct Compartment {
    pub domain: SpatialDomain,
    pub classes: Vec<NeurotransmitterClass>,
    pub ncells: Vec<NCell>,
    /// Sorted by neuron id.
    pub neurons: Vec<Neuron>,
    /// One lattice field per class, indexed like `classes`.
    pub rho: Vec<Vec<f64>>,
    /// One lattice field per n-cell, indexed like `ncells`.
    pub chi: Vec<Vec<f64>>,
    pub g: GSpec,
    /// Allow a synapse to target a neuron of another n-cell. The synapse is
    /// still owned by the presynaptic neuron's n-cell.
    pub cross_cell_edges: bool,
    index: HashMap<usize, usize>,
    class_index: HashMap<usize, usize>,
    ncell_index: HashMap<usize, usize>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("duplicate {entity} id {id}")]
    DuplicateId { entity: &'static str, id: usize },
    #[error("{from} refers to unknown {entity} {id}")]
    UnresolvedReference {
        from: String,
        entity: &'static str,
        id: usize,
    },
    #[error("spatial domain is empty: {0}")]
    DomainEmpty(String),
    #[error("field {field} has {found} values, lattice has {expected} cells")]
    FieldShape {
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("density for class {class} exceeds 1 at lattice cell {cell} ({value}); refine the lattice")]
    DensityExceedsUnity { class: String, cell: usize, value: f64 },
    #[error("compartment failed validation:\n{0}")]
    Invalid(ValidationReport),
}

impl Compartment {
    /// Assemble a compartment from parts, resolving every id reference.
    /// Numerical constraints are left to [`Compartment::validate`].
    pub fn from_parts(parts: CompartmentParts) -> Result<Compartment, BuildError> {
        let CompartmentParts {
            domain,
            classes,
            ncells,
            mut neurons,
            rho,
            chi,
            g,
            cross_cell_edges,
        } = parts;
        if !(domain.dimension == 2 || domain.dimension == 3) {
            return Err(BuildError::DomainEmpty(format!(
                "dimension {} (expected 2 or 3)",
                domain.dimension
            )));
        }
        for axis in 0..domain.dimension {
            let extent = domain.extent(axis);
            if !(extent > 0.0) || domain.resolution[axis] == 0 {
                return Err(BuildError::DomainEmpty(format!(
                    "axis {axis} has extent {extent} and {} cells",
                    domain.resolution[axis]
                )));
            }
        }

        let mut class_index = HashMap::new();
        for (i, c) in classes.iter().enumerate() {
            if class_index.insert(c.id, i).is_some() {
                return Err(BuildError::DuplicateId {
                    entity: "class",
                    id: c.id,
                });
            }
        }
        let mut ncell_index = HashMap::new();
        for (i, nc) in ncells.iter().enumerate() {
            if ncell_index.insert(nc.id, i).is_some() {
                return Err(BuildError::DuplicateId {
                    entity: "n-cell",
                    id: nc.id,
                });
            }
        }

        neurons.sort_by_key(|n| n.id);
        let mut index = HashMap::with_capacity(neurons.len());
        for (i, n) in neurons.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(BuildError::DuplicateId {
                    entity: "neuron",
                    id: n.id,
                });
            }
            if !class_index.contains_key(&n.class_id) {
                return Err(BuildError::UnresolvedReference {
                    from: format!("neuron {}", n.id),
                    entity: "class",
                    id: n.class_id,
                });
            }
            if !ncell_index.contains_key(&n.ncell_id) {
                return Err(BuildError::UnresolvedReference {
                    from: format!("neuron {}", n.id),
                    entity: "n-cell",
                    id: n.ncell_id,
                });
            }
        }

        for nc in &ncells {
            for &nid in &nc.nodes {
                if !index.contains_key(&nid) {
                    return Err(BuildError::UnresolvedReference {
                        from: format!("n-cell {}", nc.id),
                        entity: "neuron",
                        id: nid,
                    });
                }
            }
            for s in &nc.synapses {
                let from = || format!("synapse {}->{} in n-cell {}", s.pre, s.post, nc.id);
                for id in [s.pre, s.post] {
                    if !index.contains_key(&id) {
                        return Err(BuildError::UnresolvedReference {
                            from: from(),
                            entity: "neuron",
                            id,
                        });
                    }
                }
                if !class_index.contains_key(&s.receptor_class) {
                    return Err(BuildError::UnresolvedReference {
                        from: from(),
                        entity: "class",
                        id: s.receptor_class,
                    });
                }
            }
        }

        let cells = domain.cell_count();
        if rho.len() != classes.len() {
            return Err(BuildError::FieldShape {
                field: "rho (class count)".into(),
                expected: classes.len(),
                found: rho.len(),
            });
        }
        if chi.len() != ncells.len() {
            return Err(BuildError::FieldShape {
                field: "chi (n-cell count)".into(),
                expected: ncells.len(),
                found: chi.len(),
            });
        }
        for (c, f) in classes.iter().zip(&rho) {
            if f.len() != cells {
                return Err(BuildError::FieldShape {
                    field: format!("rho[{}]", c.label),
                    expected: cells,
                    found: f.len(),
                });
            }
        }
        for (nc, f) in ncells.iter().zip(&chi) {
            if f.len() != cells {
                return Err(BuildError::FieldShape {
                    field: format!("chi[{}]", nc.id),
                    expected: cells,
                    found: f.len(),
                });
            }
        }

        Ok(Compartment {
            domain,
            classes,
            ncells,
            neurons,
            rho,
            chi,
            g,
            cross_cell_edges,
            index,
            class_index,
            ncell_index,
        })
    }

    pub fn to_parts(&self) -> CompartmentParts {
        CompartmentParts {
            domain: self.domain.clone(),
            classes: self.classes.clone(),
            ncells: self.ncells.clone(),
            neurons: self.neurons.clone(),
            rho: self.rho.clone(),
            chi: self.chi.clone(),
            g: self.g.clone(),
            cross_cell_edges: self.cross_cell_edges,
        }
    }

    pub fn neuron_count(&self) -> usize {
        self.neurons.len()
    }

    /// Position of a neuron id in `neurons`.
    pub fn neuron_index(&self, id: usize) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn neuron(&self, id: usize) -> Option<&Neuron> {
        self.neuron_index(id).map(|i| &self.neurons[i])
    }

    pub fn class_position(&self, class_id: usize) -> Option<usize> {
        self.class_index.get(&class_id).copied()
    }

    pub fn class(&self, class_id: usize) -> Option<&NeurotransmitterClass> {
        self.class_position(class_id).map(|i| &self.classes[i])
    }

    pub fn class_by_label(&self, label: &str) -> Option<&NeurotransmitterClass> {
        self.classes.iter().find(|c| c.label == label)
    }

    pub fn ncell_position(&self, ncell_id: usize) -> Option<usize> {
        self.ncell_index.get(&ncell_id).copied()
    }

    /// All synapses of all n-cells.
    pub fn synapses(&self) -> impl Iterator<Item = &Synapse> {
        self.ncells.iter().flat_map(|nc| nc.synapses.iter())
    }

    pub fn synapse_count(&self) -> usize {
        self.ncells.iter().map(|nc| nc.synapses.len()).sum()
    }

    /// Averaging weight `psi` of a neuron (its node in its own n-cell).
    pub fn psi_of(&self, neuron: &Neuron) -> f64 {
        let nc = &self.ncells[self.ncell_position(neuron.ncell_id).unwrap()];
        nc.psi.get(neuron.node_index).copied().unwrap_or(0.0)
    }

    /// `g(chi(y))` at one lattice cell.
    pub fn g_at(&self, cell: usize) -> f64 {
        self.g.eval(self.chi.iter().map(|f| f[cell]))
    }

    /// SHA-256 over a canonical encoding of the whole structure.
    pub fn structure_digest(&self) -> String {
        let mut h = Sha256::new();
        let put_f = |h: &mut Sha256, v: f64| h.update(v.to_le_bytes());
        h.update((self.domain.dimension as u64).to_le_bytes());
        for a in 0..3 {
            put_f(&mut h, self.domain.lower[a]);
            put_f(&mut h, self.domain.upper[a]);
            h.update((self.domain.resolution[a] as u64).to_le_bytes());
        }
        for c in &self.classes {
            h.update((c.id as u64).to_le_bytes());
            h.update(c.label.as_bytes());
            h.update([0, c.is_modulatory as u8]);
            put_f(&mut h, c.synaptic_reversal_mv);
            h.update(format!("{:?}{:?}", c.hh, c.kinetics).as_bytes());
        }
        for n in &self.neurons {
            for v in [n.id, n.class_id, n.ncell_id, n.node_index] {
                h.update((v as u64).to_le_bytes());
            }
            for p in n.position {
                put_f(&mut h, p);
            }
        }
        for nc in &self.ncells {
            h.update((nc.id as u64).to_le_bytes());
            for &n in &nc.nodes {
                h.update((n as u64).to_le_bytes());
            }
            for &p in &nc.psi {
                put_f(&mut h, p);
            }
            for s in &nc.synapses {
                for v in [s.pre, s.post, s.receptor_class] {
                    h.update((v as u64).to_le_bytes());
                }
                put_f(&mut h, s.weight);
                h.update([s.sign.as_i8() as u8]);
            }
        }
        for f in self.rho.iter().chain(&self.chi) {
            for &v in f {
                put_f(&mut h, v);
            }
        }
        h.update(self.g.kind().as_bytes());
        if let GSpec::Const(c) = self.g {
            put_f(&mut h, c);
        }
        h.update([self.cross_cell_edges as u8]);
        hex::encode(h.finalize())
    }

    /// Check every structural and numerical invariant. An empty report means
    /// the compartment is valid.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let d = &self.domain;

        for axis in 0..d.dimension {
            if !(d.extent(axis) > 0.0) {
                v.push(Violation::ExtentNotPositive {
                    axis,
                    extent: d.extent(axis),
                });
            }
            if d.resolution[axis] < 2 {
                v.push(Violation::ResolutionTooCoarse {
                    axis,
                    resolution: d.resolution[axis],
                });
            }
        }

        let mut ids: Vec<usize> = self.classes.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, &id)| i != id) {
            v.push(Violation::ClassIdsNotContiguous { ids });
        }
        for c in &self.classes {
            let r = c.synaptic_reversal_mv;
            if !(r >= REVERSAL_RANGE_MV.0 && r <= REVERSAL_RANGE_MV.1) {
                v.push(Violation::ReversalOutOfRange {
                    class: c.label.clone(),
                    value: r,
                });
            }
        }

        for n in &self.neurons {
            if !d.contains(&n.position) {
                v.push(Violation::PositionOutsideDomain {
                    neuron: n.id,
                    position: n.position,
                });
            }
        }

        // Membership: every neuron is exactly one node of exactly one n-cell,
        // consistent with its (ncell_id, node_index).
        let mut membership: HashMap<usize, usize> = HashMap::new();
        let mut seen_nodes: HashSet<(usize, usize)> = HashSet::new();
        for nc in &self.ncells {
            for (node, &nid) in nc.nodes.iter().enumerate() {
                *membership.entry(nid).or_default() += 1;
                if !seen_nodes.insert((nc.id, node)) {
                    v.push(Violation::DuplicateNode {
                        ncell: nc.id,
                        node_index: node,
                    });
                }
                if let Some(n) = self.neuron(nid) {
                    if n.ncell_id != nc.id || n.node_index != node {
                        v.push(Violation::NodeMismatch {
                            neuron: nid,
                            ncell: nc.id,
                            node_index: node,
                        });
                    }
                }
            }
        }
        for n in &self.neurons {
            let count = membership.get(&n.id).copied().unwrap_or(0);
            if count != 1 {
                v.push(Violation::NeuronMembership {
                    neuron: n.id,
                    memberships: count,
                });
            }
        }

        for nc in &self.ncells {
            if nc.psi.len() != nc.nodes.len() {
                v.push(Violation::PsiLength {
                    ncell: nc.id,
                    nodes: nc.nodes.len(),
                    psi: nc.psi.len(),
                });
            }
            for (node, &p) in nc.psi.iter().enumerate() {
                if !(p >= 0.0 && p.is_finite()) {
                    v.push(Violation::PsiInvalid {
                        ncell: nc.id,
                        node_index: node,
                        value: p,
                    });
                }
            }
            if !nc.psi.iter().any(|&p| p > 0.0) {
                v.push(Violation::PsiAllZero { ncell: nc.id });
            }
            let members: HashSet<usize> = nc.nodes.iter().copied().collect();
            for s in &nc.synapses {
                if !(s.weight >= 0.0 && s.weight.is_finite()) {
                    v.push(Violation::SynapseWeight {
                        ncell: nc.id,
                        pre: s.pre,
                        post: s.post,
                        weight: s.weight,
                    });
                }
                if s.pre == s.post {
                    v.push(Violation::SelfSynapse {
                        ncell: nc.id,
                        neuron: s.pre,
                    });
                }
                if !members.contains(&s.pre) {
                    v.push(Violation::EndpointOutsideNCell {
                        ncell: nc.id,
                        neuron: s.pre,
                    });
                }
                if !self.cross_cell_edges && !members.contains(&s.post) {
                    v.push(Violation::EndpointOutsideNCell {
                        ncell: nc.id,
                        neuron: s.post,
                    });
                }
                if let (Some(pre), Some(class)) = (self.neuron(s.pre), self.class(s.receptor_class))
                {
                    if pre.class_id != s.receptor_class {
                        v.push(Violation::ReceptorMismatch {
                            pre: s.pre,
                            post: s.post,
                            receptor_class: s.receptor_class,
                            pre_class: pre.class_id,
                        });
                    }
                    if !class.is_modulatory && s.sign != class.native_sign() {
                        v.push(Violation::SignInconsistent {
                            pre: s.pre,
                            post: s.post,
                            class: class.label.clone(),
                            sign: s.sign.as_i8(),
                        });
                    }
                }
            }
        }

        let cells = d.cell_count();
        for (c, f) in self.classes.iter().zip(&self.rho) {
            if f.len() != cells {
                v.push(Violation::FieldLength {
                    field: format!("rho[{}]", c.label),
                    expected: cells,
                    found: f.len(),
                });
                continue;
            }
            if let Some((cell, &value)) = f
                .iter()
                .enumerate()
                .find(|(_, &x)| !(0.0..=1.0).contains(&x))
            {
                v.push(Violation::RhoOutOfRange {
                    class: c.label.clone(),
                    cell,
                    value,
                });
            }
            let integral = d.integrate(f);
            if !((integral - 1.0).abs() <= RHO_NORMALIZATION_TOL) {
                v.push(Violation::RhoNotNormalized {
                    class: c.label.clone(),
                    integral,
                });
            }
        }

        let mut chi_ok = true;
        for (nc, f) in self.ncells.iter().zip(&self.chi) {
            if f.len() != cells {
                v.push(Violation::FieldLength {
                    field: format!("chi[{}]", nc.id),
                    expected: cells,
                    found: f.len(),
                });
                chi_ok = false;
                continue;
            }
            if let Some((cell, &value)) = f
                .iter()
                .enumerate()
                .find(|(_, &x)| !(x >= 0.0 && x.is_finite()))
            {
                v.push(Violation::ChiNegative {
                    ncell: nc.id,
                    cell,
                    value,
                });
            }
        }
        if let GSpec::Const(c) = self.g {
            if !(c > 0.0) {
                v.push(Violation::GConstNotPositive { value: c });
            }
        }
        if chi_ok && cells > 0 {
            let g: Vec<f64> = (0..cells).map(|y| self.g_at(y)).collect();
            let below = g.iter().filter(|&&x| !(x >= G_EPSILON)).count();
            if below == cells {
                v.push(Violation::GNotPositive {
                    points_below_eps: below,
                    total_points: cells,
                });
            } else {
                for (nc, f) in self.ncells.iter().zip(&self.chi) {
                    let supported = (0..cells).any(|y| f[y] > 0.0 && g[y] >= G_EPSILON);
                    if !supported {
                        v.push(Violation::NCellUnsupported { ncell: nc.id });
                    }
                }
            }
        }

        ValidationReport(v)
    }
}

/// One broken invariant, carrying the entity ids and measured values.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    ExtentNotPositive { axis: usize, extent: f64 },
    ResolutionTooCoarse { axis: usize, resolution: usize },
    ClassIdsNotContiguous { ids: Vec<usize> },
    ReversalOutOfRange { class: String, value: f64 },
    PositionOutsideDomain { neuron: usize, position: Point },
    DuplicateNode { ncell: usize, node_index: usize },
    NodeMismatch { neuron: usize, ncell: usize, node_index: usize },
    NeuronMembership { neuron: usize, memberships: usize },
    PsiLength { ncell: usize, nodes: usize, psi: usize },
    PsiInvalid { ncell: usize, node_index: usize, value: f64 },
    PsiAllZero { ncell: usize },
    SynapseWeight { ncell: usize, pre: usize, post: usize, weight: f64 },
    SelfSynapse { ncell: usize, neuron: usize },
    EndpointOutsideNCell { ncell: usize, neuron: usize },
    ReceptorMismatch { pre: usize, post: usize, receptor_class: usize, pre_class: usize },
    SignInconsistent { pre: usize, post: usize, class: String, sign: i8 },
    FieldLength { field: String, expected: usize, found: usize },
    RhoOutOfRange { class: String, cell: usize, value: f64 },
    RhoNotNormalized { class: String, integral: f64 },
    ChiNegative { ncell: usize, cell: usize, value: f64 },
    GConstNotPositive { value: f64 },
    GNotPositive { points_below_eps: usize, total_points: usize },
    NCellUnsupported { ncell: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            ExtentNotPositive { axis, extent } => write!(f, "domain axis {axis}: extent {extent} is not positive"),
            ResolutionTooCoarse { axis, resolution } => write!(f, "domain axis {axis}: grid resolution {resolution} < 2"),
            ClassIdsNotContiguous { ids } => write!(f, "class ids {ids:?} are not the contiguous range 0..{}", ids.len()),
            ReversalOutOfRange { class, value } => write!(f, "class {class}: synaptic reversal {value} mV outside [-100, 10]"),
            PositionOutsideDomain { neuron, position } => write!(f, "neuron {neuron}: position {position:?} outside the domain"),
            DuplicateNode { ncell, node_index } => write!(f, "n-cell {ncell}: node index {node_index} used twice"),
            NodeMismatch { neuron, ncell, node_index } => write!(f, "neuron {neuron}: listed as node {node_index} of n-cell {ncell} but records a different placement"),
            NeuronMembership { neuron, memberships } => write!(f, "neuron {neuron}: member of {memberships} n-cells (expected 1)"),
            PsiLength { ncell, nodes, psi } => write!(f, "n-cell {ncell}: {psi} psi values for {nodes} nodes"),
            PsiInvalid { ncell, node_index, value } => write!(f, "n-cell {ncell}: psi[{node_index}] = {value} is not a nonnegative number"),
            PsiAllZero { ncell } => write!(f, "n-cell {ncell}: no strictly positive psi value"),
            SynapseWeight { ncell, pre, post, weight } => write!(f, "n-cell {ncell}: synapse {pre}->{post} has weight {weight}"),
            SelfSynapse { ncell, neuron } => write!(f, "n-cell {ncell}: self-synapse on neuron {neuron}"),
            EndpointOutsideNCell { ncell, neuron } => write!(f, "n-cell {ncell}: synapse endpoint {neuron} is not a node of this n-cell"),
            ReceptorMismatch { pre, post, receptor_class, pre_class } => write!(f, "synapse {pre}->{post}: receptor class {receptor_class} differs from presynaptic class {pre_class}"),
            SignInconsistent { pre, post, class, sign } => write!(f, "synapse {pre}->{post}: sign {sign:+} contradicts the action of non-modulatory class {class}"),
            FieldLength { field, expected, found } => write!(f, "field {field}: {found} values, lattice has {expected} cells"),
            RhoOutOfRange { class, cell, value } => write!(f, "rho[{class}]: value {value} at cell {cell} outside [0, 1]"),
            RhoNotNormalized { class, integral } => write!(f, "rho[{class}]: integral {integral} (expected 1 within 1e-6)"),
            ChiNegative { ncell, cell, value } => write!(f, "chi[{ncell}]: value {value} at cell {cell} is negative or not finite"),
            GConstNotPositive { value } => write!(f, "g: constant value {value} is not positive"),
            GNotPositive { points_below_eps, total_points } => write!(f, "g(chi(y)) < 1e-12 at {points_below_eps} of {total_points} lattice points (g must be positive somewhere)"),
            NCellUnsupported { ncell } => write!(f, "n-cell {ncell}: chi has no support where g(chi) > 0"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport(pub Vec<Violation>);

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn violations(&self) -> &[Violation] {
        &self.0
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.0 {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Assemble and validate: the returned compartment always has an empty
/// validation report.
pub fn build_compartment(parts: CompartmentParts) -> Result<Compartment, BuildError> {
    let c = Compartment::from_parts(parts)?;
    let report = c.validate();
    if report.is_empty() {
        Ok(c)
    } else {
        Err(BuildError::Invalid(report))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("density sums to zero; nothing to sample from")]
    ZeroDensity,
    #[error("density value {value} at cell {cell} is negative or not finite")]
    InvalidDensity { cell: usize, value: f64 },
    #[error("density has {found} values, lattice has {expected} cells")]
    Shape { expected: usize, found: usize },
}

/// Draw `count` i.i.d. positions from a lattice density: a lattice cell is
/// chosen by inverse CDF, then the point is placed uniformly inside it.
pub fn sample_positions(
    domain: &SpatialDomain,
    rho: &[f64],
    count: usize,
    seed: u64,
) -> Result<Vec<Point>, SampleError> {
    if rho.len() != domain.cell_count() {
        return Err(SampleError::Shape {
            expected: domain.cell_count(),
            found: rho.len(),
        });
    }
    let mut cdf = Vec::with_capacity(rho.len());
    let mut total = 0.0;
    for (cell, &r) in rho.iter().enumerate() {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(SampleError::InvalidDensity { cell, value: r });
        }
        total += r;
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(SampleError::ZeroDensity);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let target = rng.random::<f64>() * total;
        // First cell whose cumulative mass exceeds the target. Zero-mass cells
        // have a flat CDF step and can never be selected.
        let mut cell = cdf.partition_point(|&c| c <= target);
        if cell >= cdf.len() {
            cell = cdf.len() - 1;
        }
        let origin = domain.cell_origin(cell);
        let mut p = [0.0; 3];
        for a in 0..domain.dimension {
            p[a] = origin[a] + rng.random::<f64>() * domain.cell_width(a);
        }
        out.push(p);
    }
    Ok(out)
}

/// Counts of `positions` per lattice cell.
pub fn histogram(domain: &SpatialDomain, positions: &[Point]) -> Vec<u64> {
    let mut h = vec![0u64; domain.cell_count()];
    for p in positions {
        if let Some(c) = domain.cell_of(p) {
            h[c] += 1;
        }
    }
    h
}

/// Neurons grouped by class id, in id order.
pub fn neurons_by_class(c: &Compartment) -> BTreeMap<usize, Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for n in &c.neurons {
        m.entry(n.class_id).or_default().push(n.id);
    }
    m
}


#[cfg(test)]
mod tests {
    use super::fixtures::minimal;
    use super::*;

    #[test]
    fn minimal_compartment_is_valid() {
        let c = minimal(1.0);
        assert_eq!(c.ncells.len(), 1);
        assert!(c.validate().is_empty(), "{}", c.validate());
    }

    #[test]
    fn scaled_rho_reports_measured_integral() {
        let mut c = minimal(1.0);
        for v in &mut c.rho[0] {
            *v *= 2.0;
        }
        let report = c.validate();
        let integral = report
            .violations()
            .iter()
            .find_map(|v| match v {
                Violation::RhoNotNormalized { integral, .. } => Some(*integral),
                _ => None,
            })
            .expect("normalization violation");
        assert!((integral - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_chi_with_sum_rule_violates_g_positivity() {
        let mut c = minimal(1.0);
        c.g = GSpec::Sum;
        for v in &mut c.chi[0] {
            *v = 0.0;
        }
        let report = c.validate();
        assert!(report
            .violations()
            .iter()
            .any(|v| matches!(v, Violation::GNotPositive { .. })));
    }

    #[test]
    fn missing_post_neuron_is_unresolved() {
        let mut parts = minimal(1.0).to_parts();
        parts.ncells[0].synapses.push(Synapse {
            pre: 0,
            post: 7,
            receptor_class: 0,
            weight: 1.0,
            sign: Sign::Excitatory,
        });
        let err = Compartment::from_parts(parts).unwrap_err();
        assert!(matches!(
            err,
            BuildError::UnresolvedReference { entity: "neuron", id: 7, .. }
        ));
    }

    #[test]
    fn duplicate_neuron_id_is_rejected() {
        let mut parts = minimal(1.0).to_parts();
        parts.neurons.push(parts.neurons[0].clone());
        let err = Compartment::from_parts(parts).unwrap_err();
        assert_eq!(err, BuildError::DuplicateId { entity: "neuron", id: 0 });
    }

    #[test]
    fn inhibitory_sign_on_excitatory_class_is_flagged() {
        let mut parts = minimal(1.0).to_parts();
        parts.neurons.push(Neuron {
            id: 1,
            node_index: 1,
            ..parts.neurons[0].clone()
        });
        parts.ncells = vec![NCell {
            id: 0,
            nodes: vec![0, 1],
            synapses: vec![Synapse {
                pre: 0,
                post: 1,
                receptor_class: 0,
                weight: 1.0,
                sign: Sign::Inhibitory,
            }],
            psi: vec![1.0, 1.0],
        }];
        let c = Compartment::from_parts(parts).unwrap();
        assert!(c
            .validate()
            .violations()
            .iter()
            .any(|v| matches!(v, Violation::SignInconsistent { .. })));
    }

    #[test]
    fn sampling_zero_count_and_zero_density() {
        let d = SpatialDomain::cube(2, 1.0, 4);
        assert!(sample_positions(&d, &d.uniform_density(), 0, 1)
            .unwrap()
            .is_empty());
        assert_eq!(
            sample_positions(&d, &vec![0.0; 16], 5, 1),
            Err(SampleError::ZeroDensity)
        );
    }

    #[test]
    fn spike_density_keeps_every_sample_in_its_cell() {
        let d = SpatialDomain::cube(2, 10.0, 5);
        let mut rho = vec![0.0; 25];
        rho[13] = 0.25;
        let pts = sample_positions(&d, &rho, 500, 9).unwrap();
        assert!(pts.iter().all(|p| d.cell_of(p) == Some(13)));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let d = SpatialDomain::cube(3, 2.0, 4);
        let rho: Vec<f64> = (0..64).map(|i| (i % 7) as f64).collect();
        let a = sample_positions(&d, &rho, 100, 42).unwrap();
        let b = sample_positions(&d, &rho, 100, 42).unwrap();
        let c = sample_positions(&d, &rho, 100, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn digest_changes_with_structure() {
        let a = minimal(1.0);
        let b = minimal(2.0);
        assert_eq!(a.structure_digest(), minimal(1.0).structure_digest());
        assert_ne!(a.structure_digest(), b.structure_digest());
    }
}
