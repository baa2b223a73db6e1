//! Hodgkin-Huxley network integration over a compartment's synapse graph.
//!
//! Each neuron carries `(V, m, h, n)` plus one `(rise, decay)` gate pair per
//! synaptic channel. A channel is a (transmitter class, sign) pair, so a
//! modulatory class acting with both signs occupies two channels. Neurons are
//! coupled only through spike events applied between steps, which makes the
//! per-step update embarrassingly parallel and independent of worker count.

pub mod hh;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compartment::{Compartment, NeurotransmitterClass, Sign};

pub use hh::{GateRates, HhParameters, Membrane};

/// Largest step accepted by [`step_network`].
pub const MAX_DT_MS: f64 = 0.05;
pub const DEFAULT_DT_MS: f64 = 0.025;
/// |V| beyond this aborts the run.
pub const UNSTABLE_V_MV: f64 = 200.0;
/// Rising-edge crossing of this potential counts as a spike.
pub const SPIKE_THRESHOLD_MV: f64 = 0.0;

const MEMBRANE_VARS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("non-finite state for neuron {neuron_id}")]
    NonFiniteState { neuron_id: usize },
    #[error("integration diverged at t = {t_ms} ms: neuron {neuron_id} reached V = {v_mv} mV")]
    UnstableIntegration { t_ms: f64, neuron_id: usize, v_mv: f64 },
}

/// Default receptor kinetics, used wherever a class does not override them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynapseDefaults {
    pub tau_rise: f64,
    pub tau_decay: f64,
    pub e_excitatory: f64,
    pub e_inhibitory: f64,
    pub g_peak_scale: f64,
}

impl Default for SynapseDefaults {
    fn default() -> Self {
        SynapseDefaults {
            tau_rise: 0.5,
            tau_decay: 5.0,
            e_excitatory: 0.0,
            e_inhibitory: -80.0,
            g_peak_scale: 1.0,
        }
    }
}

/// Model parameters shared by every neuron before per-class overrides.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelParameters {
    pub hh: HhParameters,
    pub synapse: SynapseDefaults,
}

/// Kinetics of one synaptic channel.
///
/// A unit increment of the rise gate `r` at time 0 produces
/// `s(t) = tau_d / (tau_d - tau_r) * (exp(-t/tau_d) - exp(-t/tau_r))`, and the
/// conductance is `g_peak_scale * norm * s` with `norm` chosen so that a unit
/// weight peaks at exactly `g_peak_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynapseKinetics {
    pub tau_rise: f64,
    pub tau_decay: f64,
    pub e_syn: f64,
    pub g_peak_scale: f64,
}

impl SynapseKinetics {
    pub fn check(&self) -> Result<(), DynamicsError> {
        let ok = self.tau_rise > 0.0
            && self.tau_decay > self.tau_rise
            && self.tau_decay.is_finite()
            && self.g_peak_scale >= 0.0
            && self.g_peak_scale.is_finite()
            && self.e_syn.is_finite();
        if ok {
            Ok(())
        } else {
            Err(DynamicsError::InvalidParameters(format!(
                "synapse kinetics need 0 < tau_rise < tau_decay and g_peak_scale >= 0: {self:?}"
            )))
        }
    }

    pub fn peak_time(&self) -> f64 {
        let (tr, td) = (self.tau_rise, self.tau_decay);
        tr * td / (td - tr) * (td / tr).ln()
    }

    /// Decay-gate response to a unit rise increment, `t` ms later.
    pub fn unit_response(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let (tr, td) = (self.tau_rise, self.tau_decay);
        td / (td - tr) * ((-t / td).exp() - (-t / tr).exp())
    }

    fn norm(&self) -> f64 {
        1.0 / self.unit_response(self.peak_time())
    }

    /// Conductance per unit of decay gate.
    pub fn conductance_factor(&self) -> f64 {
        self.g_peak_scale * self.norm()
    }
}

/// One synaptic channel: the transmitter class and the sign it acts with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub class_id: usize,
    pub sign: Sign,
    pub kinetics: SynapseKinetics,
}

/// Resolve the kinetics of `class` acting with `sign`.
pub fn channel_kinetics(
    class: &NeurotransmitterClass,
    sign: Sign,
    defaults: &SynapseDefaults,
) -> SynapseKinetics {
    let k = &class.kinetics;
    let e_syn = if sign == class.native_sign() {
        class.synaptic_reversal_mv
    } else {
        k.opposite_reversal_mv.unwrap_or(match sign {
            Sign::Excitatory => defaults.e_excitatory,
            Sign::Inhibitory => defaults.e_inhibitory,
        })
    };
    SynapseKinetics {
        tau_rise: k.tau_rise.unwrap_or(defaults.tau_rise),
        tau_decay: k.tau_decay.unwrap_or(defaults.tau_decay),
        e_syn,
        g_peak_scale: k.g_peak_scale.unwrap_or(defaults.g_peak_scale),
    }
}

/// Single-neuron state: membrane plus one `[rise, decay]` pair per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub membrane: Membrane,
    pub gates: Vec<[f64; 2]>,
}

impl NeuronState {
    fn to_vec(&self) -> Vec<f64> {
        let m = &self.membrane;
        let mut y = vec![m.v, m.m, m.h, m.n];
        for g in &self.gates {
            y.extend_from_slice(g);
        }
        y
    }

    fn from_slice(y: &[f64]) -> NeuronState {
        NeuronState {
            membrane: Membrane {
                v: y[0],
                m: y[1],
                h: y[2],
                n: y[3],
            },
            gates: y[MEMBRANE_VARS..].chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        }
    }
}

/// Time derivative of a single neuron's state under the HH rate functions,
/// synaptic current `sum_c g_c (E_c - V)` and external current `i_ext`.
pub fn hh_derivative(
    state: &NeuronState,
    i_ext: f64,
    hh: &HhParameters,
    channels: &[SynapseKinetics],
) -> Result<NeuronState, DynamicsError> {
    let y = state.to_vec();
    if y.iter().any(|v| !v.is_finite()) || !i_ext.is_finite() {
        return Err(DynamicsError::NonFiniteState { neuron_id: 0 });
    }
    if state.gates.len() != channels.len() {
        return Err(DynamicsError::InvalidParameters(format!(
            "{} gate pairs for {} channels",
            state.gates.len(),
            channels.len()
        )));
    }
    let factors: Vec<ChannelCoef> = channels.iter().map(ChannelCoef::new).collect();
    let mut dy = vec![0.0; y.len()];
    derivative(&y, &mut dy, hh, &factors, i_ext);
    Ok(NeuronState::from_slice(&dy))
}

/// Precomputed per-channel constants for the inner loop.
#[derive(Debug, Clone, Copy)]
struct ChannelCoef {
    inv_tau_rise: f64,
    inv_tau_decay: f64,
    g_factor: f64,
    e_syn: f64,
}

impl ChannelCoef {
    fn new(k: &SynapseKinetics) -> Self {
        ChannelCoef {
            inv_tau_rise: 1.0 / k.tau_rise,
            inv_tau_decay: 1.0 / k.tau_decay,
            g_factor: k.conductance_factor(),
            e_syn: k.e_syn,
        }
    }
}

#[inline]
fn derivative(y: &[f64], dy: &mut [f64], hh: &HhParameters, channels: &[ChannelCoef], i_ext: f64) {
    let (v, m, h, n) = (y[0], y[1], y[2], y[3]);
    let mut i_syn = 0.0;
    for (c, coef) in channels.iter().enumerate() {
        let r = y[MEMBRANE_VARS + 2 * c];
        let s = y[MEMBRANE_VARS + 2 * c + 1];
        let r_out = r * coef.inv_tau_rise;
        dy[MEMBRANE_VARS + 2 * c] = -r_out;
        dy[MEMBRANE_VARS + 2 * c + 1] = r_out - s * coef.inv_tau_decay;
        i_syn += coef.g_factor * s * (coef.e_syn - v);
    }
    let rates = GateRates::at(v);
    dy[0] = (-hh.ionic_current(v, m, h, n) + i_syn + i_ext) / hh.c_m;
    dy[1] = rates.a_m * (1.0 - m) - rates.b_m * m;
    dy[2] = rates.a_h * (1.0 - h) - rates.b_h * h;
    dy[3] = rates.a_n * (1.0 - n) - rates.b_n * n;
}

/// Which neurons a stimulus drives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusTarget {
    ClassLabel(String),
    NCell(usize),
    Neurons(Vec<usize>),
}

/// Constant current injected over `[onset, offset)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusSpec {
    pub target: StimulusTarget,
    /// µA/cm²
    pub amplitude: f64,
    pub onset: f64,
    pub offset: f64,
}

impl StimulusSpec {
    fn active(&self, t: f64) -> bool {
        t >= self.onset && t < self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub dt: f64,
    pub duration: f64,
    /// Recorded in outputs. The dynamics themselves are deterministic.
    pub seed: u64,
    pub record_every: usize,
    #[serde(default)]
    pub stimuli: Vec<StimulusSpec>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            dt: DEFAULT_DT_MS,
            duration: 100.0,
            seed: 0,
            record_every: 1,
            stimuli: Vec::new(),
        }
    }
}

impl SimulationConfig {
    pub fn check(&self) -> Result<(), DynamicsError> {
        let bad = |msg: String| Err(DynamicsError::InvalidConfig(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.dt > MAX_DT_MS {
            return bad(format!("dt = {} ms exceeds the {MAX_DT_MS} ms stability limit", self.dt));
        }
        if !(self.duration >= self.dt && self.duration.is_finite()) {
            return bad(format!("duration {} must be at least dt {}", self.duration, self.dt));
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        for s in &self.stimuli {
            if !s.amplitude.is_finite() {
                return bad(format!("stimulus amplitude {} is not finite", s.amplitude));
            }
            if !(s.onset < s.offset && s.offset <= self.duration + 1e-9) {
                return bad(format!(
                    "stimulus window [{}, {}) must satisfy onset < offset <= duration {}",
                    s.onset, s.offset, self.duration
                ));
            }
        }
        Ok(())
    }

    pub fn step_count(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Counters collected while integrating.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub steps: u64,
    /// Gating variables pulled back into `[0, 1]` (or synaptic gates to 0).
    pub clamp_events: u64,
    pub spike_count: u64,
    pub max_abs_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub times: Vec<f64>,
    pub neuron_ids: Vec<usize>,
    /// Row-major `[recorded step][neuron]`, `u = V - V_rest` in mV.
    pub u: Vec<f64>,
    /// Spike times per neuron, indexed like `neuron_ids`.
    pub spikes: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

impl SimulationRecord {
    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.neuron_ids.len();
        &self.u[k * n..(k + 1) * n]
    }

    pub fn trace(&self, neuron: usize) -> Vec<f64> {
        let n = self.neuron_ids.len();
        self.u.iter().skip(neuron).step_by(n).copied().collect()
    }
}

/// Outgoing connection in the prepared graph.
#[derive(Debug, Clone, Copy)]
struct Edge {
    post: usize,
    channel: usize,
    weight: f64,
}

/// Immutable per-run data: resolved parameters, channels and the spike
/// routing table. Neuron order follows `Compartment::neurons`.
#[derive(Debug, Clone)]
pub struct Network {
    neuron_ids: Vec<usize>,
    channels: Vec<Channel>,
    coefs: Vec<ChannelCoef>,
    /// Membrane parameters per class position.
    class_hh: Vec<HhParameters>,
    class_rest: Vec<Membrane>,
    neuron_class: Vec<usize>,
    out_start: Vec<usize>,
    out_edges: Vec<Edge>,
    /// For every stimulus, the neuron indices it drives.
    stimuli: Vec<(StimulusSpec, Vec<usize>)>,
}

impl Network {
    pub fn new(
        compartment: &Compartment,
        params: &ModelParameters,
        stimuli: &[StimulusSpec],
    ) -> Result<Network, DynamicsError> {
        let mut class_hh = Vec::with_capacity(compartment.classes.len());
        let mut class_rest = Vec::with_capacity(compartment.classes.len());
        for class in &compartment.classes {
            let hh = params.hh.with_overrides(&class.hh);
            class_rest.push(hh.resting_state()?);
            class_hh.push(hh);
        }

        let mut channel_of: BTreeMap<(usize, Sign), usize> = BTreeMap::new();
        for s in compartment.synapses() {
            channel_of.entry((s.receptor_class, s.sign)).or_insert(0);
        }
        let mut channels = Vec::with_capacity(channel_of.len());
        for (k, (&(class_id, sign), slot)) in channel_of.iter_mut().enumerate() {
            *slot = k;
            let class = compartment.class(class_id).ok_or_else(|| {
                DynamicsError::InvalidParameters(format!("synapse uses unknown class {class_id}"))
            })?;
            let kinetics = channel_kinetics(class, sign, &params.synapse);
            kinetics.check()?;
            channels.push(Channel {
                class_id,
                sign,
                kinetics,
            });
        }
        let coefs = channels.iter().map(|c| ChannelCoef::new(&c.kinetics)).collect();

        let n = compartment.neuron_count();
        let neuron_class = compartment
            .neurons
            .iter()
            .map(|nr| compartment.class_position(nr.class_id).unwrap())
            .collect();
        let mut outgoing: Vec<Vec<Edge>> = vec![Vec::new(); n];
        for s in compartment.synapses() {
            let (Some(pre), Some(post)) = (compartment.neuron_index(s.pre), compartment.neuron_index(s.post)) else {
                return Err(DynamicsError::InvalidParameters(format!(
                    "synapse {} -> {} refers to a missing neuron",
                    s.pre, s.post
                )));
            };
            outgoing[pre].push(Edge {
                post,
                channel: channel_of[&(s.receptor_class, s.sign)],
                weight: s.weight,
            });
        }
        let mut out_start = Vec::with_capacity(n + 1);
        let mut out_edges = Vec::new();
        out_start.push(0);
        for edges in outgoing {
            out_edges.extend(edges);
            out_start.push(out_edges.len());
        }

        let mut resolved = Vec::with_capacity(stimuli.len());
        for s in stimuli {
            let targets: Vec<usize> = match &s.target {
                StimulusTarget::ClassLabel(label) => {
                    let class = compartment.class_by_label(label).ok_or_else(|| {
                        DynamicsError::InvalidConfig(format!("stimulus targets unknown class {label:?}"))
                    })?;
                    (0..n).filter(|&i| compartment.neurons[i].class_id == class.id).collect()
                }
                StimulusTarget::NCell(id) => {
                    if compartment.ncell_position(*id).is_none() {
                        return Err(DynamicsError::InvalidConfig(format!(
                            "stimulus targets unknown n-cell {id}"
                        )));
                    }
                    (0..n).filter(|&i| compartment.neurons[i].ncell_id == *id).collect()
                }
                StimulusTarget::Neurons(ids) => ids
                    .iter()
                    .map(|id| {
                        compartment.neuron_index(*id).ok_or_else(|| {
                            DynamicsError::InvalidConfig(format!("stimulus targets unknown neuron {id}"))
                        })
                    })
                    .collect::<Result<_, _>>()?,
            };
            resolved.push((s.clone(), targets));
        }

        Ok(Network {
            neuron_ids: compartment.neurons.iter().map(|n| n.id).collect(),
            channels,
            coefs,
            class_hh,
            class_rest,
            neuron_class,
            out_start,
            out_edges,
            stimuli: resolved,
        })
    }

    pub fn neuron_count(&self) -> usize {
        self.neuron_ids.len()
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    /// Values per neuron in the flat state vector.
    pub fn stride(&self) -> usize {
        MEMBRANE_VARS + 2 * self.channels.len()
    }

    pub fn resting_potential(&self, neuron: usize) -> f64 {
        self.class_rest[self.neuron_class[neuron]].v
    }

    /// Every neuron at its class's resting state, synapses silent.
    pub fn resting_state(&self) -> NetworkState {
        let stride = self.stride();
        let mut y = vec![0.0; stride * self.neuron_count()];
        for (i, chunk) in y.chunks_exact_mut(stride).enumerate() {
            let m = self.class_rest[self.neuron_class[i]];
            chunk[..MEMBRANE_VARS].copy_from_slice(&[m.v, m.m, m.h, m.n]);
        }
        NetworkState { stride, y }
    }

    /// External current per neuron at time `t`.
    fn currents_at(&self, t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (s, targets) in &self.stimuli {
            if s.active(t) {
                for &i in targets {
                    out[i] += s.amplitude;
                }
            }
        }
    }
}

/// Flat state of all neurons, `stride` values each.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    stride: usize,
    y: Vec<f64>,
}

impl NetworkState {
    pub fn neuron(&self, i: usize) -> &[f64] {
        &self.y[i * self.stride..(i + 1) * self.stride]
    }

    pub fn neuron_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.y[i * self.stride..(i + 1) * self.stride]
    }

    pub fn v(&self, i: usize) -> f64 {
        self.y[i * self.stride]
    }

    /// `[rise, decay]` gate of channel `c` on neuron `i`.
    pub fn gate(&self, i: usize, c: usize) -> [f64; 2] {
        let b = i * self.stride + MEMBRANE_VARS + 2 * c;
        [self.y[b], self.y[b + 1]]
    }

    pub fn snapshot(&self, i: usize) -> NeuronState {
        NeuronState::from_slice(self.neuron(i))
    }
}

/// Scratch buffers reused across steps.
#[derive(Debug, Default)]
pub struct StepScratch {
    i_ext: [Vec<f64>; 3],
    prev_v: Vec<f64>,
}

/// Neurons per parallel task; below this the step runs on the calling thread.
const PAR_CHUNK: usize = 256;

/// Advance every neuron by one RK4 step from `t` to `t + dt`, then deliver
/// the spikes detected in this step to their targets' rise gates. Returns
/// the indices of the neurons that spiked, in index order.
pub fn step_network(
    net: &Network,
    state: &mut NetworkState,
    t: f64,
    dt: f64,
    scratch: &mut StepScratch,
    diag: &mut Diagnostics,
) -> Result<Vec<usize>, DynamicsError> {
    if !(dt > 0.0 && dt <= MAX_DT_MS) {
        return Err(DynamicsError::InvalidConfig(format!(
            "dt = {dt} ms outside (0, {MAX_DT_MS}]"
        )));
    }
    let n = net.neuron_count();
    let stride = state.stride;
    for (buf, tt) in scratch.i_ext.iter_mut().zip([t, t + 0.5 * dt, t + dt]) {
        buf.resize(n, 0.0);
        net.currents_at(tt, buf);
    }
    scratch.prev_v.clear();
    scratch.prev_v.extend(state.y.iter().step_by(stride));

    let i_ext = &scratch.i_ext;
    let update = |work: &mut Vec<f64>, (b, y): (usize, &mut [f64])| -> (u64, bool) {
        rk4_block(net, y, b * BLOCK, dt, i_ext, work)
    };
    let (clamps, all_finite) = if n >= 2 * PAR_CHUNK && rayon::current_num_threads() > 1 {
        state
            .y
            .par_chunks_mut(BLOCK * stride)
            .with_min_len(PAR_CHUNK / BLOCK)
            .enumerate()
            .map_init(|| vec![0.0; 5 * BLOCK * stride], update)
            .reduce(|| (0, true), |a, b| (a.0 + b.0, a.1 && b.1))
    } else {
        let mut work = vec![0.0; 5 * BLOCK * stride];
        state
            .y
            .chunks_mut(BLOCK * stride)
            .enumerate()
            .map(|item| update(&mut work, item))
            .fold((0, true), |a, b| (a.0 + b.0, a.1 && b.1))
    };
    diag.steps += 1;
    diag.clamp_events += clamps;

    let mut spiking = Vec::new();
    for i in 0..n {
        let v = state.y[i * stride];
        if !all_finite && !state.neuron(i).iter().all(|x| x.is_finite()) {
            return Err(DynamicsError::NonFiniteState {
                neuron_id: net.neuron_ids[i],
            });
        }
        if v.abs() > UNSTABLE_V_MV {
            return Err(DynamicsError::UnstableIntegration {
                t_ms: t + dt,
                neuron_id: net.neuron_ids[i],
                v_mv: v,
            });
        }
        diag.max_abs_v = diag.max_abs_v.max(v.abs());
        if scratch.prev_v[i] < SPIKE_THRESHOLD_MV && v >= SPIKE_THRESHOLD_MV {
            spiking.push(i);
        }
    }
    for &i in &spiking {
        for e in &net.out_edges[net.out_start[i]..net.out_start[i + 1]] {
            state.y[e.post * stride + MEMBRANE_VARS + 2 * e.channel] += e.weight;
        }
    }
    diag.spike_count += spiking.len() as u64;
    Ok(spiking)
}

/// Neurons integrated together. Their RK4 stages are evaluated stage by
/// stage across the block, so independent work sits next to each other.
const BLOCK: usize = 8;

fn eval_block(net: &Network, src: &[f64], dst: &mut [f64], first: usize, i_ext: &[f64]) {
    let stride = net.stride();
    for (b, (y, dy)) in src.chunks_exact(stride).zip(dst.chunks_exact_mut(stride)).enumerate() {
        let i = first + b;
        derivative(y, dy, &net.class_hh[net.neuron_class[i]], &net.coefs, i_ext[i]);
    }
}

/// One classic RK4 step, in place, of the neurons stored in `y` starting
/// at index `first`. `work` holds five buffers of `y`'s size. Returns the
/// number of clamped variables and whether the result is finite.
fn rk4_block(net: &Network, y: &mut [f64], first: usize, dt: f64, i_ext: &[Vec<f64>; 3], work: &mut [f64]) -> (u64, bool) {
    let len = y.len();
    let (k1, rest) = work.split_at_mut(len);
    let (k2, rest) = rest.split_at_mut(len);
    let (k3, rest) = rest.split_at_mut(len);
    let (k4, rest) = rest.split_at_mut(len);
    let tmp = &mut rest[..len];
    let half = 0.5 * dt;
    eval_block(net, y, k1, first, &i_ext[0]);
    for j in 0..len {
        tmp[j] = y[j] + half * k1[j];
    }
    eval_block(net, tmp, k2, first, &i_ext[1]);
    for j in 0..len {
        tmp[j] = y[j] + half * k2[j];
    }
    eval_block(net, tmp, k3, first, &i_ext[1]);
    for j in 0..len {
        tmp[j] = y[j] + dt * k3[j];
    }
    eval_block(net, tmp, k4, first, &i_ext[2]);
    let sixth = dt / 6.0;
    let mut finite = true;
    for j in 0..len {
        y[j] += sixth * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        finite &= y[j].is_finite();
    }
    let mut clamps = 0;
    for neuron in y.chunks_exact_mut(net.stride()) {
        for g in &mut neuron[1..MEMBRANE_VARS] {
            if *g < 0.0 {
                *g = 0.0;
                clamps += 1;
            } else if *g > 1.0 {
                *g = 1.0;
                clamps += 1;
            }
        }
        for g in &mut neuron[MEMBRANE_VARS..] {
            if *g < 0.0 {
                *g = 0.0;
                clamps += 1;
            }
        }
    }
    (clamps, finite)
}

/// Integrate `0..duration` and record `u = V - V_rest` every
/// `record_every` steps, starting with the initial state at t = 0.
pub fn simulate(
    compartment: &Compartment,
    config: &SimulationConfig,
    params: &ModelParameters,
) -> Result<SimulationRecord, DynamicsError> {
    simulate_with(compartment, config, params, |_, _| {})
}

/// As [`simulate`], calling `on_record(t, u_row)` for every recorded row as it
/// is produced.
pub fn simulate_with(
    compartment: &Compartment,
    config: &SimulationConfig,
    params: &ModelParameters,
    mut on_record: impl FnMut(f64, &[f64]),
) -> Result<SimulationRecord, DynamicsError> {
    config.check()?;
    let net = Network::new(compartment, params, &config.stimuli)?;
    let n = net.neuron_count();
    let steps = config.step_count();
    let rows = steps / config.record_every + 1;
    let rest: Vec<f64> = (0..n).map(|i| net.resting_potential(i)).collect();

    let mut state = net.resting_state();
    let mut scratch = StepScratch::default();
    let mut diag = Diagnostics::default();
    let mut times = Vec::with_capacity(rows);
    let mut u = Vec::with_capacity(rows * n);
    let mut spikes = vec![Vec::new(); n];

    let mut record = |k: usize, state: &NetworkState, times: &mut Vec<f64>, u: &mut Vec<f64>| {
        let t = k as f64 * config.dt;
        let start = u.len();
        u.extend((0..n).map(|i| state.v(i) - rest[i]));
        times.push(t);
        on_record(t, &u[start..]);
    };
    record(0, &state, &mut times, &mut u);
    for k in 0..steps {
        let t = k as f64 * config.dt;
        let fired = step_network(&net, &mut state, t, config.dt, &mut scratch, &mut diag)?;
        let t_next = (k + 1) as f64 * config.dt;
        for i in fired {
            spikes[i].push(t_next);
        }
        if (k + 1) % config.record_every == 0 {
            record(k + 1, &state, &mut times, &mut u);
        }
    }
    Ok(SimulationRecord {
        times,
        neuron_ids: net.neuron_ids.clone(),
        u,
        spikes,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compartment::fixtures::minimal;
    use crate::compartment::{CompartmentParts, NCell, Neuron, NeurotransmitterClass, Synapse};
    use crate::lattice::SpatialDomain;

    fn pair(sign: Sign, weight: f64) -> Compartment {
        let domain = SpatialDomain::cube(2, 1.0, 4);
        let reversal = match sign {
            Sign::Excitatory => 0.0,
            Sign::Inhibitory => -80.0,
        };
        let neuron = |id: usize| Neuron {
            id,
            class_id: 0,
            ncell_id: 0,
            node_index: id,
            position: domain.center(),
        };
        Compartment::from_parts(CompartmentParts {
            domain: domain.clone(),
            classes: vec![NeurotransmitterClass::new(0, "T", reversal, false)],
            ncells: vec![NCell {
                id: 0,
                nodes: vec![0, 1],
                synapses: vec![Synapse {
                    pre: 0,
                    post: 1,
                    receptor_class: 0,
                    weight,
                    sign,
                }],
                psi: vec![1.0, 1.0],
            }],
            neurons: vec![neuron(0), neuron(1)],
            rho: vec![domain.uniform_density()],
            chi: vec![vec![1.0; domain.cell_count()]],
            g: crate::compartment::GSpec::Const(1.0),
            cross_cell_edges: false,
        })
        .unwrap()
    }

    #[test]
    fn unit_weight_peaks_at_g_peak_scale() {
        let k = SynapseKinetics {
            tau_rise: 0.5,
            tau_decay: 5.0,
            e_syn: 0.0,
            g_peak_scale: 2.5,
        };
        let tp = k.peak_time();
        let peak = k.conductance_factor() * k.unit_response(tp);
        assert!((peak - 2.5).abs() < 1e-12);
        assert!(k.unit_response(tp - 0.01) < k.unit_response(tp));
        assert!(k.unit_response(tp + 0.01) < k.unit_response(tp));
    }

    #[test]
    fn kinetics_require_rise_faster_than_decay() {
        let mut k = channel_kinetics(
            &NeurotransmitterClass::new(0, "x", 0.0, false),
            Sign::Excitatory,
            &SynapseDefaults::default(),
        );
        assert!(k.check().is_ok());
        k.tau_rise = k.tau_decay;
        assert!(k.check().is_err());
    }

    #[test]
    fn opposite_sign_uses_default_reversal() {
        let ach = NeurotransmitterClass::new(0, "ACh", 0.0, true);
        let d = SynapseDefaults::default();
        assert_eq!(channel_kinetics(&ach, Sign::Excitatory, &d).e_syn, 0.0);
        assert_eq!(channel_kinetics(&ach, Sign::Inhibitory, &d).e_syn, -80.0);
    }

    #[test]
    fn boundary_gates_are_pushed_inward() {
        let hh = HhParameters::default();
        for &g in &[0.0, 1.0] {
            let s = NeuronState {
                membrane: Membrane { v: -65.0, m: g, h: g, n: g },
                gates: vec![],
            };
            let d = hh_derivative(&s, 0.0, &hh, &[]).unwrap().membrane;
            for x in [d.m, d.h, d.n] {
                if g == 0.0 {
                    assert!(x > 0.0);
                } else {
                    assert!(x < 0.0);
                }
            }
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let s = NeuronState {
            membrane: Membrane { v: f64::NAN, m: 0.1, h: 0.5, n: 0.3 },
            gates: vec![],
        };
        assert!(matches!(
            hh_derivative(&s, 0.0, &HhParameters::default(), &[]),
            Err(DynamicsError::NonFiniteState { .. })
        ));
    }

    #[test]
    fn quiet_single_neuron_stays_at_rest() {
        let c = minimal(1.0);
        let cfg = SimulationConfig {
            duration: 100.0,
            record_every: 40,
            ..Default::default()
        };
        let rec = simulate(&c, &cfg, &ModelParameters::default()).unwrap();
        assert_eq!(rec.times.len(), 101);
        assert!(rec.u.iter().all(|u| u.abs() < 1e-6));
        assert_eq!(rec.diagnostics.clamp_events, 0);
    }

    #[test]
    fn spike_increments_target_rise_gate_in_same_step() {
        let c = pair(Sign::Excitatory, 0.7);
        let stim = StimulusSpec {
            target: StimulusTarget::Neurons(vec![0]),
            amplitude: 10.0,
            onset: 0.0,
            offset: 50.0,
        };
        let net = Network::new(&c, &ModelParameters::default(), &[stim]).unwrap();
        let mut state = net.resting_state();
        let mut scratch = StepScratch::default();
        let mut diag = Diagnostics::default();
        for k in 0..2000 {
            let before = state.gate(1, 0)[0];
            let fired = step_network(&net, &mut state, k as f64 * 0.025, 0.025, &mut scratch, &mut diag).unwrap();
            let after = state.gate(1, 0)[0];
            if fired.contains(&0) {
                assert!(after > before + 0.6, "gate {before} -> {after}");
                return;
            }
            assert!(after <= before);
        }
        panic!("presynaptic neuron never spiked");
    }

    #[test]
    fn dt_above_guard_is_rejected() {
        let cfg = SimulationConfig {
            dt: 0.06,
            ..Default::default()
        };
        assert!(matches!(
            simulate(&minimal(1.0), &cfg, &ModelParameters::default()),
            Err(DynamicsError::InvalidConfig(_))
        ));
    }

    #[test]
    fn stimulus_window_must_fit_duration() {
        let cfg = SimulationConfig {
            duration: 10.0,
            stimuli: vec![StimulusSpec {
                target: StimulusTarget::Neurons(vec![0]),
                amplitude: 1.0,
                onset: 5.0,
                offset: 20.0,
            }],
            ..Default::default()
        };
        assert!(cfg.check().is_err());
    }

    #[test]
    fn inhibitory_pair_hyperpolarizes_target() {
        let c = pair(Sign::Inhibitory, 1.0);
        let cfg = SimulationConfig {
            duration: 60.0,
            record_every: 4,
            stimuli: vec![StimulusSpec {
                target: StimulusTarget::Neurons(vec![0]),
                amplitude: 10.0,
                onset: 0.0,
                offset: 60.0,
            }],
            ..Default::default()
        };
        let rec = simulate(&c, &cfg, &ModelParameters::default()).unwrap();
        assert!(!rec.spikes[0].is_empty());
        let post = rec.trace(1);
        assert!(post.iter().cloned().fold(f64::INFINITY, f64::min) < -1.0);
    }
}
