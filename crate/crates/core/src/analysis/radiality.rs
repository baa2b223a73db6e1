use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::dynamics::SimulationRecord;
use crate::lattice::{distance, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialityReport {
    pub source: Point,
    /// First-activation time per active neuron id.
    pub latencies: BTreeMap<usize, f64>,
    pub pearson_r: f64,
    pub n_active: usize,
}

/// First upward crossing of `threshold_mv` per neuron, linearly interpolated
/// between recorded samples. Neurons that never cross are absent.
pub fn activation_latencies(record: &SimulationRecord, threshold_mv: f64) -> BTreeMap<usize, f64> {
    let n = record.neuron_ids.len();
    let mut out = BTreeMap::new();
    if n == 0 {
        return out;
    }
    let mut found = vec![false; n];
    for k in 1..record.times.len() {
        let prev = record.row(k - 1);
        let cur = record.row(k);
        for i in 0..n {
            if found[i] || !(prev[i] < threshold_mv && cur[i] >= threshold_mv) {
                continue;
            }
            found[i] = true;
            let (t0, t1) = (record.times[k - 1], record.times[k]);
            let frac = (threshold_mv - prev[i]) / (cur[i] - prev[i]);
            out.insert(record.neuron_ids[i], t0 + frac * (t1 - t0));
        }
    }
    out
}

/// Latencies no later than `max_ms`.
pub fn latencies_within(latencies: &BTreeMap<usize, f64>, max_ms: f64) -> BTreeMap<usize, f64> {
    latencies
        .iter()
        .filter(|(_, &t)| t <= max_ms)
        .map(|(&id, &t)| (id, t))
        .collect()
}

/// Pearson correlation coefficient, or `None` when either sample has zero
/// variance or the lengths differ.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.is_empty() {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation between distance from `source` and activation latency over
/// the active neurons.
pub fn radiality_score(
    latencies: &BTreeMap<usize, f64>,
    positions: &BTreeMap<usize, Point>,
    source: Point,
) -> Result<RadialityReport, AnalysisError> {
    let mut dist = Vec::with_capacity(latencies.len());
    let mut lat = Vec::with_capacity(latencies.len());
    for (id, &t) in latencies {
        let p = positions
            .get(id)
            .ok_or_else(|| AnalysisError::InvalidInput(format!("no position for neuron {id}")))?;
        dist.push(distance(p, &source));
        lat.push(t);
    }
    if lat.len() < 3 {
        return Err(AnalysisError::TooFewActive(lat.len()));
    }
    let pearson_r = pearson(&dist, &lat).ok_or_else(|| {
        AnalysisError::InvalidInput("latencies or distances have zero variance".into())
    })?;
    Ok(RadialityReport {
        source,
        latencies: latencies.clone(),
        pearson_r,
        n_active: lat.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Diagnostics;

    fn record(times: Vec<f64>, columns: Vec<Vec<f64>>) -> SimulationRecord {
        let n = columns.len();
        let mut u = Vec::new();
        for k in 0..times.len() {
            for col in &columns {
                u.push(col[k]);
            }
        }
        SimulationRecord {
            times,
            neuron_ids: (0..n).map(|i| 10 + i).collect(),
            u,
            spikes: vec![Vec::new(); n],
            diagnostics: Diagnostics::default(),
        }
    }

    #[test]
    fn zero_record_has_no_activations() {
        let r = record(vec![0.0, 1.0, 2.0], vec![vec![0.0; 3]; 4]);
        assert!(activation_latencies(&r, 20.0).is_empty());
    }

    #[test]
    fn single_spike_is_timed() {
        let times: Vec<f64> = (0..30).map(|k| k as f64).collect();
        let mut spike = vec![0.0; 30];
        spike[10] = 90.0;
        spike[11] = 40.0;
        spike[20] = 90.0;
        let r = record(times, vec![vec![0.0; 30], spike]);
        let lat = activation_latencies(&r, 20.0);
        assert_eq!(lat.len(), 1);
        let t = lat[&11];
        assert!(t > 9.0 && t <= 10.0, "{t}");
    }

    #[test]
    fn proportional_latencies_are_perfectly_radial() {
        let mut lat = BTreeMap::new();
        let mut pos = BTreeMap::new();
        for i in 0..20 {
            let p = [i as f64 * 0.3, (i % 5) as f64, 0.0];
            pos.insert(i, p);
            lat.insert(i, 2.5 * distance(&p, &[0.0; 3]));
        }
        let rep = radiality_score(&lat, &pos, [0.0; 3]).unwrap();
        assert!((rep.pearson_r - 1.0).abs() < 1e-12);
        assert_eq!(rep.n_active, 20);
    }

    #[test]
    fn too_few_active_is_an_error() {
        let lat = BTreeMap::from([(0, 1.0), (1, 2.0)]);
        let pos = BTreeMap::from([(0, [0.0; 3]), (1, [1.0, 0.0, 0.0])]);
        assert_eq!(
            radiality_score(&lat, &pos, [0.0; 3]),
            Err(AnalysisError::TooFewActive(2))
        );
    }

    #[test]
    fn window_filter_keeps_early_activations() {
        let lat = BTreeMap::from([(0, 1.0), (1, 200.0), (2, 200.5)]);
        assert_eq!(latencies_within(&lat, 200.0).len(), 2);
    }
}
