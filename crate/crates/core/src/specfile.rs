//! TOML compartment spec files.
//!
//! ```toml
//! [domain]
//! dimension = 2
//! bounds = [[0.0, 1.0], [0.0, 1.0]]
//! grid_resolution = [4, 4]
//!
//! [[classes]]
//! id = 0
//! label = "Glu"
//! synaptic_reversal_mv = 0.0
//! is_modulatory = false
//!
//! [[ncells]]
//! id = 0
//! nodes = [{ id = 0, class = 0, position = [0.5, 0.5] }]
//! psi = [1.0]
//! synapses = []
//!
//! [fields]
//! rho = [{ class = 0, uniform = true }]
//! chi = [{ ncell = 0, constant = 1.0 }]
//!
//! [g]
//! kind = "const"
//! value = 1.0
//! ```
//!
//! A field is given by exactly one of `values` (inline, row-major),
//! `file` (an `NCG1` grid, relative to the spec file), `constant`, or
//! `uniform = true` (the normalized uniform density). Instead of per-n-cell
//! `chi` entries, `fields.chi_stack` may name one grid whose first axis runs
//! over n-cells in declaration order. Node positions may be omitted, in which
//! case they are drawn from the class density with `options.sample_seed`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::compartment::{
    sample_positions, Compartment, CompartmentParts, GSpec, HhOverrides, KineticsOverrides, NCell, Neuron,
    NeurotransmitterClass, SampleError, Sign, Synapse,
};
use crate::lattice::{read_grid, write_grid, GridError, SpatialDomain};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("grid file {path}: {source}")]
    Grid {
        path: PathBuf,
        #[source]
        source: GridError,
    },
    #[error("{0}")]
    Field(String),
    #[error("sampling positions for class {class}: {source}")]
    Sample {
        class: usize,
        #[source]
        source: SampleError,
    },
}

impl SpecError {
    /// True for syntax and schema errors, as opposed to bad content.
    pub fn is_parse_error(&self) -> bool {
        matches!(self, SpecError::Parse(_))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    domain: DomainSpec,
    classes: Vec<ClassSpec>,
    ncells: Vec<NCellSpec>,
    fields: FieldsSpec,
    g: GSpecFile,
    #[serde(default)]
    options: OptionsSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainSpec {
    dimension: usize,
    bounds: Vec<[f64; 2]>,
    grid_resolution: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassSpec {
    id: usize,
    label: String,
    synaptic_reversal_mv: f64,
    #[serde(default)]
    is_modulatory: bool,
    #[serde(default)]
    hh: HhOverrides,
    #[serde(default)]
    kinetics: KineticsOverrides,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NCellSpec {
    id: usize,
    nodes: Vec<NodeSpec>,
    #[serde(default)]
    psi: Option<Vec<f64>>,
    #[serde(default)]
    synapses: Vec<SynapseSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeSpec {
    id: usize,
    class: usize,
    #[serde(default)]
    position: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynapseSpec {
    pre: usize,
    post: usize,
    /// Defaults to the presynaptic neuron's class.
    #[serde(default)]
    receptor_class: Option<usize>,
    weight: f64,
    sign: Sign,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldsSpec {
    rho: Vec<RhoEntry>,
    #[serde(default)]
    chi: Vec<ChiEntry>,
    #[serde(default)]
    chi_stack: Option<String>,
}

struct Source {
    values: Option<Vec<f64>>,
    file: Option<String>,
    constant: Option<f64>,
    uniform: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RhoEntry {
    class: usize,
    #[serde(default)]
    values: Option<Vec<f64>>,
    #[serde(default)]
    file: Option<String>,
    #[serde(default)]
    constant: Option<f64>,
    #[serde(default)]
    uniform: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChiEntry {
    ncell: usize,
    #[serde(default)]
    values: Option<Vec<f64>>,
    #[serde(default)]
    file: Option<String>,
    #[serde(default)]
    constant: Option<f64>,
    #[serde(default)]
    uniform: Option<bool>,
}

impl RhoEntry {
    fn source(self) -> Source {
        Source {
            values: self.values,
            file: self.file,
            constant: self.constant,
            uniform: self.uniform,
        }
    }
}

impl ChiEntry {
    fn source(self) -> Source {
        Source {
            values: self.values,
            file: self.file,
            constant: self.constant,
            uniform: self.uniform,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GSpecFile {
    kind: String,
    #[serde(default)]
    value: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptionsSpec {
    #[serde(default)]
    cross_cell_edges: bool,
    #[serde(default)]
    sample_seed: u64,
}

fn read_grid_file(path: &Path) -> Result<(Vec<usize>, Vec<f64>), SpecError> {
    let f = File::open(path).map_err(|source| SpecError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_grid(BufReader::new(f)).map_err(|source| SpecError::Grid {
        path: path.to_path_buf(),
        source,
    })
}

fn resolve_source(src: Source, what: &str, domain: &SpatialDomain, base: &Path) -> Result<Vec<f64>, SpecError> {
    let given = [
        src.values.is_some(),
        src.file.is_some(),
        src.constant.is_some(),
        src.uniform.is_some(),
    ];
    if given.iter().filter(|&&g| g).count() != 1 {
        return Err(SpecError::Field(format!(
            "{what}: give exactly one of values, file, constant, uniform"
        )));
    }
    let cells = domain.cell_count();
    if let Some(v) = src.values {
        return Ok(v);
    }
    if let Some(c) = src.constant {
        return Ok(vec![c; cells]);
    }
    if let Some(u) = src.uniform {
        if !u {
            return Err(SpecError::Field(format!("{what}: uniform must be true when given")));
        }
        return Ok(domain.uniform_density());
    }
    let path = base.join(src.file.unwrap());
    let (sizes, values) = read_grid_file(&path)?;
    if sizes != domain.axis_sizes() {
        return Err(SpecError::Field(format!(
            "{what}: grid {} has shape {sizes:?}, lattice is {:?}",
            path.display(),
            domain.axis_sizes()
        )));
    }
    Ok(values)
}

/// Parse spec text. Relative grid paths resolve against `base_dir`.
pub fn parse_spec(text: &str, base_dir: &Path) -> Result<CompartmentParts, SpecError> {
    let spec: SpecFile = toml::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))?;

    let d = &spec.domain;
    if d.bounds.len() != d.dimension || d.grid_resolution.len() != d.dimension {
        return Err(SpecError::Parse(format!(
            "domain: dimension {} needs as many bounds ({}) and grid_resolution entries ({})",
            d.dimension,
            d.bounds.len(),
            d.grid_resolution.len()
        )));
    }
    if !(2..=3).contains(&d.dimension) {
        return Err(SpecError::Parse(format!("domain: dimension {} is not supported", d.dimension)));
    }
    let lower: Vec<f64> = d.bounds.iter().map(|b| b[0]).collect();
    let upper: Vec<f64> = d.bounds.iter().map(|b| b[1]).collect();
    let domain = SpatialDomain::new(&lower, &upper, &d.grid_resolution);

    let classes: Vec<NeurotransmitterClass> = spec
        .classes
        .into_iter()
        .map(|c| NeurotransmitterClass {
            id: c.id,
            label: c.label,
            synaptic_reversal_mv: c.synaptic_reversal_mv,
            is_modulatory: c.is_modulatory,
            hh: c.hh,
            kinetics: c.kinetics,
        })
        .collect();

    let mut rho_by_class: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for entry in spec.fields.rho {
        let class = entry.class;
        let what = format!("rho for class {class}");
        let values = resolve_source(entry.source(), &what, &domain, base_dir)?;
        if rho_by_class.insert(class, values).is_some() {
            return Err(SpecError::Field(format!("{what} given twice")));
        }
    }
    let mut rho = Vec::with_capacity(classes.len());
    for c in &classes {
        rho.push(
            rho_by_class
                .remove(&c.id)
                .ok_or_else(|| SpecError::Field(format!("no rho field for class {}", c.id)))?,
        );
    }
    if let Some(extra) = rho_by_class.keys().next() {
        return Err(SpecError::Field(format!("rho given for unknown class {extra}")));
    }

    let chi = match spec.fields.chi_stack {
        Some(file) => {
            if !spec.fields.chi.is_empty() {
                return Err(SpecError::Field("give either chi entries or chi_stack, not both".into()));
            }
            let path = base_dir.join(file);
            let (sizes, values) = read_grid_file(&path)?;
            let mut expected = vec![spec.ncells.len()];
            expected.extend(domain.axis_sizes());
            if sizes != expected {
                return Err(SpecError::Field(format!(
                    "chi_stack {} has shape {sizes:?}, expected {expected:?}",
                    path.display()
                )));
            }
            values.chunks_exact(domain.cell_count()).map(|c| c.to_vec()).collect()
        }
        None => {
            let mut by_ncell: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for entry in spec.fields.chi {
                let id = entry.ncell;
                let what = format!("chi for n-cell {id}");
                let values = resolve_source(entry.source(), &what, &domain, base_dir)?;
                if by_ncell.insert(id, values).is_some() {
                    return Err(SpecError::Field(format!("{what} given twice")));
                }
            }
            let mut chi = Vec::with_capacity(spec.ncells.len());
            for nc in &spec.ncells {
                chi.push(
                    by_ncell
                        .remove(&nc.id)
                        .ok_or_else(|| SpecError::Field(format!("no chi field for n-cell {}", nc.id)))?,
                );
            }
            if let Some(extra) = by_ncell.keys().next() {
                return Err(SpecError::Field(format!("chi given for unknown n-cell {extra}")));
            }
            chi
        }
    };

    let g = match (spec.g.kind.as_str(), spec.g.value) {
        ("sum", None) => GSpec::Sum,
        ("max", None) => GSpec::Max,
        ("const", v) => GSpec::Const(v.unwrap_or(1.0)),
        (kind @ ("sum" | "max"), Some(_)) => {
            return Err(SpecError::Parse(format!("g: kind {kind:?} takes no value")));
        }
        (other, _) => {
            return Err(SpecError::Parse(format!(
                "g: unknown kind {other:?} (expected \"sum\", \"max\" or \"const\")"
            )));
        }
    };

    // Nodes without a position are sampled per class, in declaration order.
    let mut neurons = Vec::new();
    let mut ncells = Vec::with_capacity(spec.ncells.len());
    let mut unplaced: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for nc in spec.ncells {
        let class_of: BTreeMap<usize, usize> = nc.nodes.iter().map(|n| (n.id, n.class)).collect();
        let mut nodes = Vec::with_capacity(nc.nodes.len());
        for (node_index, n) in nc.nodes.into_iter().enumerate() {
            let position = match n.position {
                Some(p) => {
                    if p.len() != domain.dimension {
                        return Err(SpecError::Parse(format!(
                            "neuron {}: position has {} coordinates, domain has {}",
                            n.id,
                            p.len(),
                            domain.dimension
                        )));
                    }
                    let mut q = [0.0; 3];
                    q[..p.len()].copy_from_slice(&p);
                    q
                }
                None => {
                    unplaced.entry(n.class).or_default().push(neurons.len());
                    [0.0; 3]
                }
            };
            nodes.push(n.id);
            neurons.push(Neuron {
                id: n.id,
                class_id: n.class,
                ncell_id: nc.id,
                node_index,
                position,
            });
        }
        let psi = nc.psi.unwrap_or_else(|| vec![1.0; nodes.len()]);
        let synapses = nc
            .synapses
            .into_iter()
            .map(|s| Synapse {
                pre: s.pre,
                post: s.post,
                // An unknown presynaptic id is reported by the builder; keep
                // the receptor as an obviously unresolvable class meanwhile.
                receptor_class: s
                    .receptor_class
                    .or_else(|| class_of.get(&s.pre).copied())
                    .or_else(|| neurons.iter().find(|n| n.id == s.pre).map(|n| n.class_id))
                    .unwrap_or(usize::MAX),
                weight: s.weight,
                sign: s.sign,
            })
            .collect();
        ncells.push(NCell {
            id: nc.id,
            nodes,
            synapses,
            psi,
        });
    }
    for (class, slots) in unplaced {
        let pos = classes.iter().position(|c| c.id == class).ok_or_else(|| {
            SpecError::Field(format!("neuron {} uses unknown class {class}", neurons[slots[0]].id))
        })?;
        let seed = spec.options.sample_seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let points = sample_positions(&domain, &rho[pos], slots.len(), seed)
            .map_err(|source| SpecError::Sample { class, source })?;
        for (slot, p) in slots.into_iter().zip(points) {
            neurons[slot].position = p;
        }
    }

    Ok(CompartmentParts {
        domain,
        classes,
        ncells,
        neurons,
        rho,
        chi,
        g,
        cross_cell_edges: spec.options.cross_cell_edges,
    })
}

pub fn load_spec(path: &Path) -> Result<CompartmentParts, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_spec(&text, base).map_err(|e| match e {
        SpecError::Parse(msg) => SpecError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// How [`write_spec`] stores the lattice fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldStorage {
    /// Every field inline in the TOML text.
    Inline,
    /// `rho` fields and the `chi` stack as `NCG1` files next to the spec.
    Files,
}

/// `f64` in shortest round-trip form, always with a decimal point or exponent.
fn num(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'E', 'n', 'i']) {
        s
    } else {
        format!("{s}.0")
    }
}

fn num_list(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 12);
    s.push('[');
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            s.push_str(", ");
        }
        s.push_str(&num(*v));
    }
    s.push(']');
    s
}

fn overrides_table<T: serde::Serialize>(value: &T) -> String {
    let table = toml::Value::try_from(value).expect("overrides serialize to a table");
    let mut parts = Vec::new();
    if let toml::Value::Table(t) = table {
        for (k, v) in t {
            let v = match v {
                toml::Value::Float(f) => num(f),
                other => other.to_string(),
            };
            parts.push(format!("{k} = {v}"));
        }
    }
    parts.join("\n")
}

fn quote(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Write `c` as a spec file at `path`. With [`FieldStorage::Files`] the grid
/// files are written next to it as `<stem>_rho_<class>.ncg` and
/// `<stem>_chi.ncg`. Returns every file written.
pub fn write_spec(c: &Compartment, path: &Path, storage: FieldStorage) -> Result<Vec<PathBuf>, SpecError> {
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| SpecError::Io { path: p, source }
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "compartment".into());
    let mut written = Vec::new();
    let mut s = String::new();
    let d = &c.domain;
    writeln!(s, "[domain]").unwrap();
    writeln!(s, "dimension = {}", d.dimension).unwrap();
    let bounds: Vec<String> = (0..d.dimension)
        .map(|a| format!("[{}, {}]", num(d.lower[a]), num(d.upper[a])))
        .collect();
    writeln!(s, "bounds = [{}]", bounds.join(", ")).unwrap();
    writeln!(s, "grid_resolution = {:?}", d.axis_sizes()).unwrap();

    for class in &c.classes {
        writeln!(s, "\n[[classes]]").unwrap();
        writeln!(s, "id = {}", class.id).unwrap();
        writeln!(s, "label = {}", quote(&class.label)).unwrap();
        writeln!(s, "synaptic_reversal_mv = {}", num(class.synaptic_reversal_mv)).unwrap();
        writeln!(s, "is_modulatory = {}", class.is_modulatory).unwrap();
        if !class.hh.is_empty() {
            writeln!(s, "[classes.hh]\n{}", overrides_table(&class.hh)).unwrap();
        }
        if !class.kinetics.is_empty() {
            writeln!(s, "[classes.kinetics]\n{}", overrides_table(&class.kinetics)).unwrap();
        }
    }

    for nc in &c.ncells {
        writeln!(s, "\n[[ncells]]").unwrap();
        writeln!(s, "id = {}", nc.id).unwrap();
        s.push_str("nodes = [\n");
        for &id in &nc.nodes {
            let n = c.neuron(id).expect("node refers to a neuron");
            writeln!(
                s,
                "  {{ id = {}, class = {}, position = {} }},",
                n.id,
                n.class_id,
                num_list(&n.position[..d.dimension])
            )
            .unwrap();
        }
        s.push_str("]\n");
        writeln!(s, "psi = {}", num_list(&nc.psi)).unwrap();
        s.push_str("synapses = [\n");
        for syn in &nc.synapses {
            writeln!(
                s,
                "  {{ pre = {}, post = {}, receptor_class = {}, weight = {}, sign = {} }},",
                syn.pre,
                syn.post,
                syn.receptor_class,
                num(syn.weight),
                syn.sign.as_i8()
            )
            .unwrap();
        }
        s.push_str("]\n");
    }

    writeln!(s, "\n[fields]").unwrap();
    match storage {
        FieldStorage::Inline => {
            s.push_str("rho = [\n");
            for (class, f) in c.classes.iter().zip(&c.rho) {
                writeln!(s, "  {{ class = {}, values = {} }},", class.id, num_list(f)).unwrap();
            }
            s.push_str("]\nchi = [\n");
            for (nc, f) in c.ncells.iter().zip(&c.chi) {
                writeln!(s, "  {{ ncell = {}, values = {} }},", nc.id, num_list(f)).unwrap();
            }
            s.push_str("]\n");
        }
        FieldStorage::Files => {
            s.push_str("rho = [\n");
            for (class, f) in c.classes.iter().zip(&c.rho) {
                let name = format!("{stem}_rho_{}.ncg", class.id);
                let p = dir.join(&name);
                let file = File::create(&p).map_err(io_err(&p))?;
                write_grid(BufWriter::new(file), &d.axis_sizes(), f)
                    .map_err(|source| SpecError::Grid { path: p.clone(), source })?;
                written.push(p);
                writeln!(s, "  {{ class = {}, file = {} }},", class.id, quote(&name)).unwrap();
            }
            s.push_str("]\n");
            let name = format!("{stem}_chi.ncg");
            let p = dir.join(&name);
            let mut sizes = vec![c.ncells.len()];
            sizes.extend(d.axis_sizes());
            let stacked: Vec<f64> = c.chi.iter().flatten().copied().collect();
            let file = File::create(&p).map_err(io_err(&p))?;
            write_grid(BufWriter::new(file), &sizes, &stacked)
                .map_err(|source| SpecError::Grid { path: p.clone(), source })?;
            written.push(p);
            writeln!(s, "chi_stack = {}", quote(&name)).unwrap();
        }
    }

    writeln!(s, "\n[g]").unwrap();
    writeln!(s, "kind = {}", quote(c.g.kind())).unwrap();
    if let GSpec::Const(v) = c.g {
        writeln!(s, "value = {}", num(v)).unwrap();
    }
    if c.cross_cell_edges {
        writeln!(s, "\n[options]\ncross_cell_edges = true").unwrap();
    }
    std::fs::write(path, s).map_err(io_err(path))?;
    written.push(path.to_path_buf());
    Ok(written)
}
