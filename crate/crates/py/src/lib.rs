//! Python module `ncell`: load or build compartments, simulate them and
//! analyze the averaged potential.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ncell_core::analysis::{self, activation_latencies, latencies_within, radiality_score, AnalysisError};
use ncell_core::averaging::{average_trace as core_average_trace, precompute_weights};
use ncell_core::compartment::{build_compartment, Compartment as CoreCompartment};
use ncell_core::dynamics::{self, ModelParameters, SimulationConfig, StimulusSpec, StimulusTarget};
use ncell_core::specfile::{load_spec, write_spec, FieldStorage};
use ncell_core::striatum::{build_striatum, central_cholinergic, demo_stimulus, StriatumParams};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Analysis errors are prefixed with their variant, e.g. `SignalTooShort: ...`.
fn analysis_err(e: AnalysisError) -> PyErr {
    let debug = format!("{e:?}");
    let name = debug.split(['(', ' ', '{']).next().unwrap_or("AnalysisError");
    PyValueError::new_err(format!("{name}: {e}"))
}

#[pyclass(frozen, name = "Compartment")]
struct PyCompartment {
    inner: CoreCompartment,
}

#[pymethods]
impl PyCompartment {
    /// Load and validate a compartment spec file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let parts = load_spec(&path).map_err(value_err)?;
        let inner = build_compartment(parts).map_err(value_err)?;
        Ok(PyCompartment { inner })
    }

    /// Write the spec, with fields in grid files next to it.
    fn write(&self, path: PathBuf) -> PyResult<Vec<PathBuf>> {
        write_spec(&self.inner, &path, FieldStorage::Files).map_err(value_err)
    }

    #[getter]
    fn neuron_count(&self) -> usize {
        self.inner.neuron_count()
    }

    #[getter]
    fn synapse_count(&self) -> usize {
        self.inner.synapse_count()
    }

    #[getter]
    fn ncell_count(&self) -> usize {
        self.inner.ncells.len()
    }

    #[getter]
    fn neuron_ids(&self) -> Vec<usize> {
        self.inner.neurons.iter().map(|n| n.id).collect()
    }

    fn structure_digest(&self) -> String {
        self.inner.structure_digest()
    }

    /// Neuron id to position.
    fn positions(&self) -> BTreeMap<usize, (f64, f64, f64)> {
        self.inner
            .neurons
            .iter()
            .map(|n| (n.id, (n.position[0], n.position[1], n.position[2])))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Compartment(neurons={}, ncells={}, synapses={})",
            self.inner.neuron_count(),
            self.inner.ncells.len(),
            self.inner.synapse_count()
        )
    }
}

/// Violations of a spec file, one line each; empty when valid.
#[pyfunction]
fn validate_spec(path: PathBuf) -> PyResult<Vec<String>> {
    let parts = load_spec(&path).map_err(value_err)?;
    match CoreCompartment::from_parts(parts) {
        Ok(c) => Ok(c.validate().violations().iter().map(|v| v.to_string()).collect()),
        Err(e) => Ok(vec![e.to_string()]),
    }
}

#[pyclass(frozen, name = "Striatum")]
struct PyStriatum {
    #[pyo3(get)]
    compartment: Py<PyCompartment>,
    /// Population label per neuron, in neuron order.
    #[pyo3(get)]
    populations: Vec<&'static str>,
    /// The central cholinergic neuron driven by the demo stimulus.
    #[pyo3(get)]
    stimulated_neuron: usize,
    stimulus: StimulusSpec,
}

#[pymethods]
impl PyStriatum {
    /// Demo configuration: tonic drive of the stimulated neuron.
    #[pyo3(signature = (duration, dt = dynamics::DEFAULT_DT_MS, record_every = None))]
    fn demo_config(&self, duration: f64, dt: f64, record_every: Option<usize>) -> PySimConfig {
        let mut stimulus = self.stimulus.clone();
        stimulus.offset = duration;
        PySimConfig {
            inner: SimulationConfig {
                dt,
                duration,
                seed: 0,
                record_every: record_every.unwrap_or(((0.5 / dt).round() as usize).max(1)),
                stimuli: vec![stimulus],
            },
        }
    }
}

/// The striatum demo compartment, resized to `total_neurons`.
#[pyfunction]
#[pyo3(signature = (total_neurons = 6400, seed = 1))]
fn striatum(py: Python<'_>, total_neurons: usize, seed: u64) -> PyResult<PyStriatum> {
    let mut params = StriatumParams::scaled(total_neurons);
    params.seed = seed;
    let s = build_striatum(&params).map_err(value_err)?;
    let stimulated_neuron =
        central_cholinergic(&s).ok_or_else(|| PyValueError::new_err("no cholinergic neuron at this size"))?;
    let stimulus = demo_stimulus(&s, 0.0).expect("a cholinergic neuron exists");
    Ok(PyStriatum {
        populations: s.populations.iter().map(|p| p.label()).collect(),
        compartment: Py::new(py, PyCompartment { inner: s.compartment })?,
        stimulated_neuron,
        stimulus,
    })
}

#[pyclass(frozen, name = "SimulationConfig")]
struct PySimConfig {
    inner: SimulationConfig,
}

#[pymethods]
impl PySimConfig {
    /// `stimuli` holds `(neuron_ids, amplitude, onset, offset)` tuples.
    #[new]
    #[pyo3(signature = (duration, dt = dynamics::DEFAULT_DT_MS, record_every = 1, seed = 0, stimuli = Vec::new()))]
    fn new(duration: f64, dt: f64, record_every: usize, seed: u64, stimuli: Vec<(Vec<usize>, f64, f64, f64)>) -> Self {
        let stimuli = stimuli
            .into_iter()
            .map(|(ids, amplitude, onset, offset)| StimulusSpec {
                target: StimulusTarget::Neurons(ids),
                amplitude,
                onset,
                offset,
            })
            .collect();
        PySimConfig {
            inner: SimulationConfig {
                dt,
                duration,
                seed,
                record_every,
                stimuli,
            },
        }
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }
}

#[pyclass(frozen, name = "Record")]
struct PyRecord {
    inner: dynamics::SimulationRecord,
}

#[pymethods]
impl PyRecord {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn neuron_ids(&self) -> Vec<usize> {
        self.inner.neuron_ids.clone()
    }

    /// Spike times per neuron, in `neuron_ids` order.
    #[getter]
    fn spikes(&self) -> Vec<Vec<f64>> {
        self.inner.spikes.clone()
    }

    /// Potential relative to rest of one neuron over time.
    fn trace(&self, neuron: usize) -> PyResult<Vec<f64>> {
        let k = self
            .inner
            .neuron_ids
            .iter()
            .position(|&id| id == neuron)
            .ok_or_else(|| PyValueError::new_err(format!("neuron {neuron} is not recorded")))?;
        Ok(self.inner.trace(k))
    }

    fn __len__(&self) -> usize {
        self.inner.times.len()
    }
}

/// Integrate the network. The GIL is released while it runs.
#[pyfunction]
fn simulate(py: Python<'_>, compartment: &PyCompartment, config: &PySimConfig) -> PyResult<PyRecord> {
    let c = &compartment.inner;
    let cfg = &config.inner;
    let inner = py
        .detach(|| dynamics::simulate(c, cfg, &ModelParameters::default()))
        .map_err(value_err)?;
    Ok(PyRecord { inner })
}

/// The averaged potential v(t) of a record.
#[pyfunction]
fn average_trace(compartment: &PyCompartment, record: &PyRecord) -> PyResult<Vec<f64>> {
    let w = precompute_weights(&compartment.inner).map_err(value_err)?;
    core_average_trace(&w, &record.inner).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (signal, sample_rate, cutoff_hz = analysis::DEFAULT_CUTOFF_HZ))]
fn lowpass(signal: Vec<f64>, sample_rate: f64, cutoff_hz: f64) -> PyResult<Vec<f64>> {
    analysis::lowpass(&signal, sample_rate, cutoff_hz).map_err(analysis_err)
}

/// Low-pass, periodogram and dominant frequency. Returns
/// `(dominant_hz, frequencies, power)`.
#[pyfunction]
#[pyo3(signature = (signal, sample_rate, cutoff_hz = analysis::DEFAULT_CUTOFF_HZ, band = analysis::DEFAULT_BAND_HZ))]
fn analyze_spectrum(
    signal: Vec<f64>,
    sample_rate: f64,
    cutoff_hz: f64,
    band: (f64, f64),
) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
    let r = analysis::analyze_spectrum(&signal, sample_rate, cutoff_hz, band).map_err(analysis_err)?;
    Ok((r.dominant_hz, r.frequencies, r.power))
}

/// Correlation of first-activation latency with distance from a source
/// neuron. Returns `(pearson_r, n_active)`.
#[pyfunction]
#[pyo3(signature = (compartment, record, source_neuron, threshold_mv = analysis::DEFAULT_ACTIVATION_MV, window_ms = 200.0))]
fn radiality(
    compartment: &PyCompartment,
    record: &PyRecord,
    source_neuron: usize,
    threshold_mv: f64,
    window_ms: f64,
) -> PyResult<(f64, usize)> {
    let c = &compartment.inner;
    let positions: BTreeMap<_, _> = c.neurons.iter().map(|n| (n.id, n.position)).collect();
    let source = *positions
        .get(&source_neuron)
        .ok_or_else(|| PyValueError::new_err(format!("unknown neuron {source_neuron}")))?;
    let latencies = latencies_within(&activation_latencies(&record.inner, threshold_mv), window_ms);
    let r = radiality_score(&latencies, &positions, source).map_err(analysis_err)?;
    Ok((r.pearson_r, r.n_active))
}

#[pymodule]
fn ncell(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCompartment>()?;
    m.add_class::<PyStriatum>()?;
    m.add_class::<PySimConfig>()?;
    m.add_class::<PyRecord>()?;
    m.add_function(wrap_pyfunction!(validate_spec, m)?)?;
    m.add_function(wrap_pyfunction!(striatum, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(average_trace, m)?)?;
    m.add_function(wrap_pyfunction!(lowpass, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(radiality, m)?)?;
    Ok(())
}
