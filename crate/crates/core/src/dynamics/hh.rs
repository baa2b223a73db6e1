//! Hodgkin-Huxley membrane model (classical squid-axon parameterization,
//! potentials in mV with rest near -65 mV).

use serde::{Deserialize, Serialize};

use crate::compartment::HhOverrides;

use super::DynamicsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HhParameters {
    /// µF/cm²
    pub c_m: f64,
    /// mS/cm²
    pub g_na: f64,
    pub g_k: f64,
    pub g_l: f64,
    /// mV
    pub e_na: f64,
    pub e_k: f64,
    pub e_l: f64,
}

impl Default for HhParameters {
    fn default() -> Self {
        HhParameters {
            c_m: 1.0,
            g_na: 120.0,
            g_k: 36.0,
            g_l: 0.3,
            e_na: 50.0,
            e_k: -77.0,
            e_l: -54.4,
        }
    }
}

impl HhParameters {
    pub fn with_overrides(mut self, o: &HhOverrides) -> Self {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut self.c_m, o.c_m);
        set(&mut self.g_na, o.g_na);
        set(&mut self.g_k, o.g_k);
        set(&mut self.g_l, o.g_l);
        set(&mut self.e_na, o.e_na);
        set(&mut self.e_k, o.e_k);
        set(&mut self.e_l, o.e_l);
        self
    }

    pub fn check(&self) -> Result<(), DynamicsError> {
        let positive = [self.c_m, self.g_na, self.g_k, self.g_l];
        let all_finite = positive
            .iter()
            .chain([self.e_na, self.e_k, self.e_l].iter())
            .all(|v| v.is_finite());
        if !all_finite || positive.iter().any(|&v| !(v > 0.0)) {
            return Err(DynamicsError::InvalidParameters(format!(
                "membrane parameters must be finite with positive capacitance and conductances: {self:?}"
            )));
        }
        Ok(())
    }

    /// Ionic current (outward positive, µA/cm²) with gates at steady state.
    fn steady_ionic_current(&self, v: f64) -> f64 {
        let r = GateRates::at(v);
        let (m, h, n) = r.steady_state();
        self.ionic_current(v, m, h, n)
    }

    #[inline]
    pub fn ionic_current(&self, v: f64, m: f64, h: f64, n: f64) -> f64 {
        let m3h = m * m * m * h;
        let n2 = n * n;
        self.g_na * m3h * (v - self.e_na) + self.g_k * n2 * n2 * (v - self.e_k) + self.g_l * (v - self.e_l)
    }

    /// Resting potential: the lowest root of the steady-state ionic current,
    /// bracketed on a 1 mV scan and refined by bisection to machine precision.
    pub fn resting_potential(&self) -> Result<f64, DynamicsError> {
        self.check()?;
        let mut lo = -120.0;
        let mut f_lo = self.steady_ionic_current(lo);
        let mut bracket = None;
        for step in 1..=150 {
            let hi = -120.0 + step as f64;
            let f_hi = self.steady_ionic_current(hi);
            if f_lo == 0.0 {
                return Ok(lo);
            }
            if f_lo.signum() != f_hi.signum() {
                bracket = Some((lo, hi));
                break;
            }
            lo = hi;
            f_lo = f_hi;
        }
        let (mut a, mut b) = bracket.ok_or_else(|| {
            DynamicsError::InvalidParameters(format!("no resting potential in [-120, 30] mV for {self:?}"))
        })?;
        let mut fa = self.steady_ionic_current(a);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let fm = self.steady_ionic_current(mid);
            if fm == 0.0 {
                return Ok(mid);
            }
            if fm.signum() == fa.signum() {
                a = mid;
                fa = fm;
            } else {
                b = mid;
            }
        }
        // Pick the endpoint with the smaller residual.
        if self.steady_ionic_current(a).abs() <= self.steady_ionic_current(b).abs() {
            Ok(a)
        } else {
            Ok(b)
        }
    }

    /// State at rest: `(v_rest, m_inf, h_inf, n_inf)`.
    pub fn resting_state(&self) -> Result<Membrane, DynamicsError> {
        let v = self.resting_potential()?;
        let (m, h, n) = GateRates::at(v).steady_state();
        Ok(Membrane { v, m, h, n })
    }
}

/// Membrane potential and the three gating variables.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Membrane {
    pub v: f64,
    pub m: f64,
    pub h: f64,
    pub n: f64,
}

/// Opening (`a_*`) and closing (`b_*`) rates in 1/ms.
#[derive(Debug, Clone, Copy)]
pub struct GateRates {
    pub a_m: f64,
    pub b_m: f64,
    pub a_h: f64,
    pub b_h: f64,
    pub a_n: f64,
    pub b_n: f64,
}

impl GateRates {
    #[inline]
    pub fn at(v: f64) -> GateRates {
        // The three rates with a 10 mV slope share one exponential.
        let e40 = (-(v + 40.0) / 10.0).exp();
        let e55 = e40 * (-1.5f64).exp();
        let e35 = e40 * 0.5f64.exp();
        let x = v + 40.0;
        let a_m = if x.abs() < 1e-6 {
            1.0 + x / 20.0
        } else {
            0.1 * x / (1.0 - e40)
        };
        let y = v + 55.0;
        let a_n = if y.abs() < 1e-6 {
            0.1 + y / 200.0
        } else {
            0.01 * y / (1.0 - e55)
        };
        let w = v + 65.0;
        let e80 = (-w / 80.0).exp();
        let e20 = (e80 * e80) * (e80 * e80);
        GateRates {
            a_m,
            b_m: 4.0 * (-w / 18.0).exp(),
            a_h: 0.07 * e20,
            b_h: 1.0 / (1.0 + e35),
            a_n,
            b_n: 0.125 * e80,
        }
    }

    pub fn steady_state(&self) -> (f64, f64, f64) {
        (
            self.a_m / (self.a_m + self.b_m),
            self.a_h / (self.a_h + self.b_h),
            self.a_n / (self.a_n + self.b_n),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classical_rest_is_near_minus_65() {
        let p = HhParameters::default();
        let rest = p.resting_state().unwrap();
        assert!((rest.v + 65.0).abs() < 0.1, "{}", rest.v);
        let dv = -p.ionic_current(rest.v, rest.m, rest.h, rest.n) / p.c_m;
        assert!(dv.abs() < 1e-9, "dV/dt at rest {dv}");
    }

    #[test]
    fn removable_singularities_are_continuous() {
        for v0 in [-40.0, -55.0] {
            let below = GateRates::at(v0 - 1e-5);
            let at = GateRates::at(v0);
            let above = GateRates::at(v0 + 1e-5);
            assert!((below.a_m - at.a_m).abs() < 1e-5);
            assert!((above.a_m - at.a_m).abs() < 1e-5);
            assert!((below.a_n - at.a_n).abs() < 1e-5);
            assert!((above.a_n - at.a_n).abs() < 1e-5);
        }
    }

    #[test]
    fn overrides_move_the_rest_potential() {
        let p = HhParameters::default().with_overrides(&HhOverrides {
            e_l: Some(-50.0),
            ..Default::default()
        });
        let v = p.resting_potential().unwrap();
        assert!(v > -65.0 && v < -60.0, "{v}");
    }

    #[test]
    fn nonpositive_conductance_is_rejected() {
        let p = HhParameters {
            g_k: 0.0,
            ..Default::default()
        };
        assert!(p.resting_potential().is_err());
    }
}
