use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;

use super::ProcessKind;
use crate::rng::{standard_normal, stream, tags};
use crate::QUARTERS_PER_DAY;

/// Hour of the day at the middle of quarter index `q0` (0-based).
fn hour(q0: usize) -> f64 {
    (q0 as f64 + 0.5) * 24.0 / QUARTERS_PER_DAY as f64
}

fn bump(h: f64, centre: f64, width: f64) -> f64 {
    let z = (h - centre) / width;
    (-z * z).exp()
}

/// Normalized daily consumption: a night base with a morning and a larger
/// evening peak, close to 1 at the evening peak.
pub(crate) fn load_profile(h: f64) -> f64 {
    0.42 + 0.28 * bump(h, 7.5, 1.6) + 0.55 * bump(h, 19.0, 2.2)
}

/// Clear-sky irradiance in W/m², zero outside 06:00–18:00.
pub(crate) fn clear_sky(h: f64) -> f64 {
    if h <= 6.0 || h >= 18.0 {
        0.0
    } else {
        1000.0 * (core::f64::consts::PI * (h - 6.0) / 12.0).sin().powf(1.5)
    }
}

/// A synthetic 15-minute series of `days · 96` values starting at midnight.
///
/// - `Load`: normalized consumption, `load_profile × (1 + AR(1) noise)`.
/// - `Wind`: wind speed in m/s, reflected AR(1) around 7.5 m/s.
/// - `Irradiance`: clear-sky bell times a cloudiness factor in `[0.15, 1]`
///   driven by a slow AR(1) process with a per-day level.
pub fn make_synthetic_corpus(kind: ProcessKind, days: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, &[tags::CORPUS, kind.tag()]);
    let len = days * QUARTERS_PER_DAY;
    let mut out = Vec::with_capacity(len);
    match kind {
        ProcessKind::Load => {
            let mut e = 0.0;
            for i in 0..len {
                e = 0.9 * e + 0.035 * standard_normal(&mut rng);
                out.push((load_profile(hour(i % QUARTERS_PER_DAY)) * (1.0 + e)).max(0.0));
            }
        }
        ProcessKind::Wind => {
            let mut y = 0.0;
            for _ in 0..len {
                y = 0.985 * y + 0.55 * standard_normal(&mut rng);
                out.push((7.5 + y).abs());
            }
        }
        ProcessKind::Irradiance => {
            let mut y = 0.0;
            let mut level = 0.0;
            for i in 0..len {
                if i % QUARTERS_PER_DAY == 0 {
                    level = 0.9 * standard_normal(&mut rng);
                }
                y = 0.92 * y + 0.35 * standard_normal(&mut rng);
                let cloud = 0.575 + 0.425 * (1.2 + level + y).tanh();
                let c = cloud.clamp(0.15, 1.0);
                out.push(clear_sky(hour(i % QUARTERS_PER_DAY)) * c);
            }
        }
    }
    out
}
