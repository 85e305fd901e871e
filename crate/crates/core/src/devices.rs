//! Loads and distributed generators, and the bus injections they produce.
//!
//! Powers are in MW (MVAr for reactive) with the injection sign convention:
//! consumption is negative. Curtailment caps use `f64::INFINITY` for "no cap".

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BusKind, NetworkModel};

pub const DEFAULT_LOAD_TAN_PHI: f64 = 0.2;
pub const DEFAULT_GENERATOR_TAN_PHI: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: usize,
    pub bus: usize,
    pub tan_phi: f64,
    pub kind: DeviceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DeviceKind {
    AggregateLoad { load: LoadParams },
    FlexibleLoad { load: LoadParams, flex: FlexParams },
    Wind { wind: WindParams },
    Pv { pv: PvParams },
}

/// A load follows the shared normalized consumption process, multiplied by
/// its own scale: `P_d = −scale_mw · x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    pub scale_mw: f64,
}

impl LoadParams {
    pub fn power(&self, consumption: f64) -> f64 {
        -self.scale_mw * consumption
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindParams {
    pub capacity_mw: f64,
    pub cut_in: f64,
    pub cut_out: f64,
    /// `(speed m/s, power MW)` breakpoints, strictly increasing in speed.
    pub curve: Vec<(f64, f64)>,
}

impl WindParams {
    /// Cubic ramp from cut-in to rated speed, flat to cut-out, sampled every
    /// 0.5 m/s.
    pub fn standard(capacity_mw: f64) -> Self {
        let (cut_in, rated, cut_out) = (3.5, 13.0, 25.0);
        let mut curve = Vec::new();
        let mut v = cut_in;
        while v < rated {
            let frac = (v * v * v - cut_in * cut_in * cut_in) / (rated * rated * rated - cut_in * cut_in * cut_in);
            curve.push((v, capacity_mw * frac));
            v += 0.5;
        }
        curve.push((rated, capacity_mw));
        curve.push((cut_out, capacity_mw));
        WindParams { capacity_mw, cut_in, cut_out, curve }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidDevice(format!("wind power curve: {m}")));
        if !(self.capacity_mw > 0.0 && self.capacity_mw.is_finite()) {
            return bad("capacity must be positive");
        }
        if !(0.0 <= self.cut_in && self.cut_in < self.cut_out) {
            return bad("need 0 <= cut_in < cut_out");
        }
        if self.curve.is_empty() {
            return bad("no breakpoints");
        }
        for w in self.curve.windows(2) {
            if !(w[0].0 < w[1].0) {
                return bad("speeds must be strictly increasing");
            }
        }
        if self.curve.iter().any(|&(v, p)| !v.is_finite() || !(0.0..=self.capacity_mw).contains(&p)) {
            return bad("outputs must lie in [0, capacity]");
        }
        Ok(())
    }
}

/// Output of a wind generator at speed `v`.
pub fn wind_power(params: &WindParams, v: f64) -> f64 {
    if !(v >= params.cut_in) || v >= params.cut_out {
        return 0.0;
    }
    let c = &params.curve;
    let p = if v <= c[0].0 {
        c[0].1
    } else if v >= c[c.len() - 1].0 {
        c[c.len() - 1].1
    } else {
        let k = c.partition_point(|&(s, _)| s <= v);
        let (v0, p0) = c[k - 1];
        let (v1, p1) = c[k];
        p0 + (p1 - p0) * (v - v0) / (v1 - v0)
    };
    p.clamp(0.0, params.capacity_mw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvParams {
    pub efficiency: f64,
    pub surface_m2: f64,
}

/// Output of a PV plant under irradiance `ir` in W/m².
pub fn pv_power(params: &PvParams, ir: f64) -> f64 {
    params.efficiency * params.surface_m2 * ir * 1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulationDirection {
    /// Consumption decreases first, then recovers.
    DownThenUp,
    UpThenDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlexParams {
    /// Service length in periods.
    pub duration: usize,
    pub amplitude_mw: f64,
    pub direction: ModulationDirection,
    pub activation_cost: f64,
}

impl FlexParams {
    /// Offsets for `t_d = 1..=duration`.
    pub fn signal_table(&self) -> Vec<f64> {
        (1..=self.duration).map(|t| modulation_signal(self, t)).collect()
    }
}

/// Injection offset of a flexible load `t_d` periods into its service.
///
/// `sin(1.8π (t_d − (T_d+1)/2) / (T_d − 1))`, scaled by the amplitude and
/// signed so that a down-then-up service first raises the net injection.
pub fn modulation_signal(params: &FlexParams, t_d: usize) -> f64 {
    let td = params.duration;
    if t_d < 1 || t_d > td || td < 2 {
        return 0.0;
    }
    let arg = 1.8 * core::f64::consts::PI * (t_d as f64 - 0.5 * (td as f64 + 1.0)) / (td as f64 - 1.0);
    let s = params.amplitude_mw * arg.sin();
    match params.direction {
        ModulationDirection::DownThenUp => -s,
        ModulationDirection::UpThenDown => s,
    }
}

impl Device {
    pub fn is_generator(&self) -> bool {
        matches!(self.kind, DeviceKind::Wind { .. } | DeviceKind::Pv { .. })
    }

    pub fn is_load(&self) -> bool {
        !self.is_generator()
    }

    pub fn load_params(&self) -> Option<&LoadParams> {
        match &self.kind {
            DeviceKind::AggregateLoad { load } | DeviceKind::FlexibleLoad { load, .. } => Some(load),
            _ => None,
        }
    }

    pub fn flex_params(&self) -> Option<&FlexParams> {
        match &self.kind {
            DeviceKind::FlexibleLoad { flex, .. } => Some(flex),
            _ => None,
        }
    }

    /// Uncurtailed active power of a generator given the weather.
    pub fn generator_potential(&self, wind_speed: f64, irradiance: f64) -> Option<f64> {
        match &self.kind {
            DeviceKind::Wind { wind } => Some(wind_power(wind, wind_speed)),
            DeviceKind::Pv { pv } => Some(pv_power(pv, irradiance)),
            _ => None,
        }
    }

    /// Largest output the generator can ever produce.
    pub fn generator_capacity(&self) -> Option<f64> {
        match &self.kind {
            DeviceKind::Wind { wind } => Some(wind.capacity_mw),
            // Irradiance above 1400 W/m² is not physical at ground level.
            DeviceKind::Pv { pv } => Some(pv_power(pv, 1400.0)),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidDevice(format!("device {}: {m}", self.id)));
        if !self.tan_phi.is_finite() {
            return bad("tan_phi must be finite".into());
        }
        if self.is_generator() && self.tan_phi < 0.0 {
            return bad("generator tan_phi must be non-negative".into());
        }
        if let Some(l) = self.load_params() {
            if !(l.scale_mw >= 0.0 && l.scale_mw.is_finite()) {
                return bad("load scale must be a non-negative number".into());
            }
        }
        if let Some(f) = self.flex_params() {
            if f.duration < 2 {
                return bad("flexibility duration must be at least 2".into());
            }
            if !(f.amplitude_mw > 0.0 && f.amplitude_mw.is_finite()) {
                return bad("flexibility amplitude must be positive".into());
            }
            if !(f.activation_cost >= 0.0 && f.activation_cost.is_finite()) {
                return bad("activation cost must be non-negative".into());
            }
        }
        match &self.kind {
            DeviceKind::Wind { wind } => wind.validate().or_else(|e| bad(format!("{e}"))),
            DeviceKind::Pv { pv } => {
                if !(pv.efficiency > 0.0 && pv.efficiency <= 1.0) || !(pv.surface_m2 > 0.0 && pv.surface_m2.is_finite()) {
                    bad("pv needs 0 < efficiency <= 1 and a positive surface".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Checks device parameters and their attachment to `net`: ids equal their
/// position, each device sits on a non-topological bus, and the buses'
/// `attached_devices` lists agree with the devices' `bus` fields.
pub fn validate_devices(net: &NetworkModel, devices: &[Device]) -> Result<()> {
    for (i, d) in devices.iter().enumerate() {
        if d.id != i {
            return Err(Error::InvalidDevice(format!("device at position {i} has id {}", d.id)));
        }
        let Some(bus) = net.buses.get(d.bus) else {
            return Err(Error::InvalidDevice(format!("device {i} attached to unknown bus {}", d.bus)));
        };
        if bus.kind == BusKind::Topological {
            return Err(Error::InvalidDevice(format!("device {i} attached to topological bus {}", d.bus)));
        }
        if !bus.attached_devices.contains(&i) {
            return Err(Error::InvalidDevice(format!("bus {} does not list device {i}", d.bus)));
        }
        d.validate()?;
    }
    for bus in &net.buses {
        for &k in &bus.attached_devices {
            if devices.get(k).map(|d| d.bus) != Some(bus.id) {
                return Err(Error::InvalidDevice(format!("bus {} lists device {k} which is not attached to it", bus.id)));
            }
        }
    }
    Ok(())
}

/// Per-device quantities needed to compute injections, indexed by device id.
/// Entries for devices of the wrong kind are ignored.
#[derive(Debug, Clone, Copy)]
pub struct DeviceInputs<'a> {
    /// Generator potential or load power `P_d`, MW.
    pub power: &'a [f64],
    /// Generator caps, MW.
    pub cap: &'a [f64],
    /// Flexible-load offsets `ΔP_d`, MW.
    pub flex_offset: &'a [f64],
}

/// `Q = tanφ·min(P̄, P)`, without producing NaN from `0·∞`.
#[inline]
fn curtailed(tan_phi: f64, cap: f64, p: f64) -> (f64, f64) {
    let pe = cap.min(p);
    let qe = if tan_phi == 0.0 { 0.0 } else { (tan_phi * cap).min(tan_phi * p) };
    (pe, qe)
}

/// Net `(P, Q)` injection of the devices listed at one bus, MW / MVAr.
pub fn injections_at_bus(attached: &[usize], devices: &[Device], inp: &DeviceInputs) -> (f64, f64) {
    let mut p = 0.0;
    let mut q = 0.0;
    for &k in attached {
        let d = &devices[k];
        let pk = inp.power[k];
        match &d.kind {
            DeviceKind::Wind { .. } | DeviceKind::Pv { .. } => {
                let (pe, qe) = curtailed(d.tan_phi, inp.cap[k], pk);
                p += pe;
                q += qe;
            }
            DeviceKind::AggregateLoad { .. } => {
                p += pk;
                q += d.tan_phi * pk;
            }
            DeviceKind::FlexibleLoad { .. } => {
                let dp = inp.flex_offset[k];
                p += pk + dp;
                q += d.tan_phi * pk + d.tan_phi * dp;
            }
        }
    }
    (p, q)
}

/// Injections at every bus, per-unit on the network base.
pub fn bus_injections(net: &NetworkModel, devices: &[Device], inp: &DeviceInputs) -> (Vec<f64>, Vec<f64>) {
    let n = net.n_buses();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for bus in &net.buses {
        let (pb, qb) = injections_at_bus(&bus.attached_devices, devices, inp);
        p[bus.id] = pb / net.base_mva;
        q[bus.id] = qb / net.base_mva;
    }
    (p, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn flex(duration: usize, amplitude: f64, direction: ModulationDirection) -> FlexParams {
        FlexParams { duration, amplitude_mw: amplitude, direction, activation_cost: 1.0 }
    }

    #[test]
    fn wind_curve_cases() {
        let w = WindParams::standard(6.0);
        w.validate().unwrap();
        assert_eq!(wind_power(&w, 0.0), 0.0);
        assert_eq!(wind_power(&w, 25.0), 0.0);
        assert_eq!(wind_power(&w, 30.0), 0.0);
        assert_eq!(wind_power(&w, 18.0), 6.0);
        let (v0, p0) = w.curve[3];
        let (v1, p1) = w.curve[4];
        assert_abs_diff_eq!(wind_power(&w, 0.5 * (v0 + v1)), 0.5 * (p0 + p1), epsilon = 1e-12);
    }

    #[test]
    fn pv_sizing() {
        let pv = PvParams { efficiency: 0.2, surface_m2: 98_610.0 };
        assert_eq!(pv_power(&pv, 0.0), 0.0);
        assert_abs_diff_eq!(pv_power(&pv, 1000.0), 19.722, epsilon = 1e-9);
        let pv2 = PvParams { surface_m2: 2.0 * 98_610.0, ..pv };
        assert_abs_diff_eq!(pv_power(&pv2, 640.0), 2.0 * pv_power(&pv, 640.0), epsilon = 1e-12);
    }

    #[test]
    fn modulation_examples() {
        let f = flex(9, 1.0, ModulationDirection::DownThenUp);
        assert_abs_diff_eq!(modulation_signal(&f, 5), 0.0, epsilon = 1e-15);
        let first = modulation_signal(&f, 1);
        assert!(first > 0.0, "consumption decrease raises the injection");
        assert_abs_diff_eq!(first, (0.9 * core::f64::consts::PI).sin(), epsilon = 1e-12);
        let total: f64 = f.signal_table().iter().sum();
        assert_abs_diff_eq!(total, 0.0, epsilon = 1e-12);
        assert_eq!(modulation_signal(&f, 0), 0.0);
        assert_eq!(modulation_signal(&f, 10), 0.0);
        let g = flex(9, 1.0, ModulationDirection::UpThenDown);
        assert_abs_diff_eq!(modulation_signal(&g, 2), -modulation_signal(&f, 2), epsilon = 0.0);
    }

    fn sample_devices() -> Vec<Device> {
        vec![
            Device { id: 0, bus: 1, tan_phi: 0.0, kind: DeviceKind::Wind { wind: WindParams::standard(6.0) } },
            Device { id: 1, bus: 1, tan_phi: 0.2, kind: DeviceKind::AggregateLoad { load: LoadParams { scale_mw: 2.0 } } },
            Device {
                id: 2,
                bus: 1,
                tan_phi: 0.2,
                kind: DeviceKind::FlexibleLoad {
                    load: LoadParams { scale_mw: 1.0 },
                    flex: flex(9, 0.5, ModulationDirection::UpThenDown),
                },
            },
        ]
    }

    #[test]
    fn bus_injection_example() {
        let devs = sample_devices();
        let power = [4.0, -2.0, -1.0];
        let cap = [3.0, f64::INFINITY, f64::INFINITY];
        let off = [0.0, 0.0, 0.5];
        let inp = DeviceInputs { power: &power, cap: &cap, flex_offset: &off };
        let (p, q) = injections_at_bus(&[0, 1, 2], &devs, &inp);
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(q, 0.2 * -2.0 + 0.2 * -1.0 + 0.2 * 0.5, epsilon = 1e-15);

        let cap = [f64::INFINITY; 3];
        let inp = DeviceInputs { power: &power, cap: &cap, flex_offset: &off };
        let (p, q) = injections_at_bus(&[0], &devs, &inp);
        assert_eq!((p, q), (4.0, 0.0));
        assert_eq!(injections_at_bus(&[], &devs, &inp), (0.0, 0.0));
    }

    #[test]
    fn validation_catches_bad_devices() {
        use crate::grid::test_networks::chain;
        use num_complex::Complex64;
        let mut net = chain(3, Complex64::new(0.01, 0.05), 1.0);
        net.buses[1].attached_devices = vec![0, 1, 2];
        let mut devs = sample_devices();
        validate_devices(&net, &devs).unwrap();
        devs[0].tan_phi = -0.1;
        assert!(validate_devices(&net, &devs).is_err());
        devs[0].tan_phi = 0.0;
        devs[1].bus = 2;
        assert!(validate_devices(&net, &devs).is_err());
    }

    proptest! {
        #[test]
        fn signal_integrates_to_zero_with_one_sign_change(
            duration in 2usize..40,
            amp in 0.01f64..10.0,
            up in any::<bool>(),
        ) {
            let dir = if up { ModulationDirection::UpThenDown } else { ModulationDirection::DownThenUp };
            let table = flex(duration, amp, dir).signal_table();
            let sum: f64 = table.iter().sum();
            prop_assert!(sum.abs() <= 1e-9);
            let signs: Vec<bool> = table.iter().filter(|x| x.abs() > 1e-12).map(|&x| x > 0.0).collect();
            let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
            prop_assert_eq!(changes, 1);
        }

        #[test]
        fn injections_monotone_in_caps(
            pot in 0.0f64..10.0,
            c1 in 0.0f64..12.0,
            c2 in 0.0f64..12.0,
            tan_phi in 0.0f64..0.5,
        ) {
            let mut devs = sample_devices();
            devs[0].tan_phi = tan_phi;
            let power = [pot, -2.0, -1.0];
            let off = [0.0; 3];
            let (lo, hi) = if c1 < c2 { (c1, c2) } else { (c2, c1) };
            let at = |c: f64| {
                let cap = [c, f64::INFINITY, f64::INFINITY];
                injections_at_bus(&[0, 1, 2], &devs, &DeviceInputs { power: &power, cap: &cap, flex_offset: &off })
            };
            let (pl, ql) = at(lo);
            let (ph, qh) = at(hi);
            prop_assert!(pl <= ph && ql <= qh);
        }
    }
}
