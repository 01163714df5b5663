//! Synthetic labelled event streams.
//!
//! Each class is a parametric trajectory traced by a small moving emitter. The
//! emitter fires events at a rate proportional to its speed (plus uniform
//! background noise), which reproduces the density skew of real recordings:
//! fast motion floods the window with events while slow motion leaves few.

use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::events::{Event, EventStream};
use crate::rng::{rng_from, DetRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motion {
    HorizontalSweep,
    VerticalSweep,
    Circle,
    ZigZag,
    DiagonalSweep,
    FigureEight,
}

impl Motion {
    pub const ALL: [Motion; 6] = [
        Motion::HorizontalSweep,
        Motion::VerticalSweep,
        Motion::Circle,
        Motion::ZigZag,
        Motion::DiagonalSweep,
        Motion::FigureEight,
    ];

    /// Offset from the trajectory centre at phase `theta` (one cycle per unit),
    /// in `[-1, 1]^2`.
    pub fn offset(self, theta: f64) -> (f64, f64) {
        let a = TAU * theta;
        match self {
            Motion::HorizontalSweep => (libm::sin(a), 0.0),
            Motion::VerticalSweep => (0.0, libm::sin(a)),
            Motion::Circle => (libm::cos(a), libm::sin(a)),
            Motion::ZigZag => (triangle(theta), 0.5 * triangle(4.0 * theta)),
            Motion::DiagonalSweep => (0.7 * libm::sin(a), 0.7 * libm::sin(a)),
            Motion::FigureEight => (libm::sin(a), 0.5 * libm::sin(2.0 * a)),
        }
    }
}

/// Triangle wave with period 1 and range `[-1, 1]`.
fn triangle(theta: f64) -> f64 {
    let f = theta - libm::floor(theta);
    if f < 0.5 {
        4.0 * f - 1.0
    } else {
        3.0 - 4.0 * f
    }
}

/// Time profile of the emitter speed.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum SpeedProfile {
    Constant,
    /// `slow_factor` times nominal speed during the first half, nominal after.
    SlowFast { slow_factor: f64 },
}

/// How class trajectories are assigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ActionFamily {
    /// Class `c` traces motion `c` for the whole stream.
    Distinct,
    /// Class `c` traces motion `c` during the (slow) first half; every class
    /// shares the same circle during the (fast) second half.
    SharedFastTail,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SynthSpec {
    pub num_classes: usize,
    pub streams_per_class: usize,
    pub sensor_width: u16,
    pub sensor_height: u16,
    pub duration_us: u64,
    /// Nominal trajectory cycles per second.
    pub cycles_per_second: f64,
    /// Events per unit of normalized path length.
    pub events_per_unit: f64,
    /// Uniform background events per second.
    pub noise_rate_hz: f64,
    /// Emitter radius (standard deviation, normalized units).
    pub jitter: f64,
    pub profile: SpeedProfile,
    pub family: ActionFamily,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            streams_per_class: 50,
            sensor_width: 128,
            sensor_height: 128,
            duration_us: 750_000,
            cycles_per_second: 2.0,
            events_per_unit: 3000.0,
            noise_rate_hz: 400.0,
            jitter: 0.015,
            profile: SpeedProfile::Constant,
            family: ActionFamily::Distinct,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("synthetic data needs at least two classes".into()));
        }
        if self.streams_per_class == 0 {
            return Err(Error::Config("streams_per_class must be positive".into()));
        }
        if self.duration_us == 0 {
            return Err(Error::Config("duration_us must be positive".into()));
        }
        if self.sensor_width < 2 || self.sensor_height < 2 {
            return Err(Error::Config("sensor must be at least 2x2".into()));
        }
        if !(self.events_per_unit >= 0.0 && self.noise_rate_hz >= 0.0 && self.jitter >= 0.0) {
            return Err(Error::Config("rates and jitter must be non-negative".into()));
        }
        if let SpeedProfile::SlowFast { slow_factor } = self.profile {
            if !(slow_factor > 0.0) {
                return Err(Error::Config("slow_factor must be positive".into()));
            }
        }
        Ok(())
    }

    /// Trajectory for class `c`: the motion and its frequency multiplier.
    fn class_motion(&self, class: usize) -> (Motion, f64) {
        let m = Motion::ALL.len();
        (Motion::ALL[class % m], 1.0 + (class / m) as f64)
    }
}

const STEP_US: u64 = 250;

/// Generates `num_classes * streams_per_class` labelled streams, class-major.
/// Stream `i` of class `c` is drawn from its own source derived from `(seed, c, i)`.
pub fn synth_actions(spec: &SynthSpec, seed: u64) -> Result<Vec<EventStream>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.num_classes * spec.streams_per_class);
    for class in 0..spec.num_classes {
        for i in 0..spec.streams_per_class {
            let mut rng = rng_from(seed, &[class as u64, i as u64]);
            out.push(synth_stream(spec, class, &mut rng)?);
        }
    }
    Ok(out)
}

fn poisson(rng: &mut DetRng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    // Poisson::new only fails for non-positive or non-finite rates.
    Poisson::new(lambda).map(|p| p.sample(rng) as usize).unwrap_or(0)
}

fn synth_stream(spec: &SynthSpec, class: usize, rng: &mut DetRng) -> Result<EventStream> {
    let (motion, freq_mult) = spec.class_motion(class);
    let freq = spec.cycles_per_second * freq_mult * rng.random_range(0.9..1.1);
    let amp = 0.35 * rng.random_range(0.85..1.0);
    let cx = 0.5 + rng.random_range(-0.05..0.05);
    let cy = 0.5 + rng.random_range(-0.05..0.05);
    let mut theta = rng.random_range(0.0..1.0);
    let jitter = Normal::new(0.0, spec.jitter.max(1e-12)).map_err(|_| Error::Config("bad jitter".into()))?;
    let w = spec.sensor_width as f64 - 1.0;
    let h = spec.sensor_height as f64 - 1.0;
    let half = spec.duration_us / 2;
    let dt = STEP_US as f64 * 1e-6;

    let mut events = Vec::new();
    let mut step_events: Vec<Event> = Vec::new();
    let mut t0 = 0;
    while t0 < spec.duration_us {
        let t_mid = t0 + STEP_US / 2;
        let first_half = t_mid < half;
        let speed_factor = match spec.profile {
            SpeedProfile::SlowFast { slow_factor } if first_half => slow_factor,
            _ => 1.0,
        };
        let active = match spec.family {
            ActionFamily::SharedFastTail if !first_half => Motion::Circle,
            _ => motion,
        };
        let dtheta = freq * speed_factor * dt;
        let mid = theta + 0.5 * dtheta;
        let (ox, oy) = active.offset(mid);
        let eps = 1e-4;
        let (ax, ay) = active.offset(mid - eps);
        let (bx, by) = active.offset(mid + eps);
        // |dp/dtheta| * dtheta/dt, in normalized units per second.
        let speed = amp * libm::hypot(bx - ax, by - ay) / (2.0 * eps) * freq * speed_factor;
        let step_len = STEP_US.min(spec.duration_us - t0);

        step_events.clear();
        for _ in 0..poisson(rng, spec.events_per_unit * speed * dt) {
            let px = cx + amp * ox + jitter.sample(rng);
            let py = cy + amp * oy + jitter.sample(rng);
            step_events.push(Event::new(
                t0 + rng.random_range(0..step_len),
                libm::round(px.clamp(0.0, 1.0) * w) as u16,
                libm::round(py.clamp(0.0, 1.0) * h) as u16,
                rng.random_bool(0.5),
            ));
        }
        for _ in 0..poisson(rng, spec.noise_rate_hz * dt) {
            step_events.push(Event::new(
                t0 + rng.random_range(0..step_len),
                rng.random_range(0..spec.sensor_width),
                rng.random_range(0..spec.sensor_height),
                rng.random_bool(0.5),
            ));
        }
        step_events.sort_by_key(|e| e.t_us);
        events.extend_from_slice(&step_events);
        theta += dtheta;
        t0 += STEP_US;
    }
    EventStream::new(events, spec.sensor_width, spec.sensor_height, Some(class as u32))
}

/// Stratified split by stream: within each label, a seeded shuffle puts
/// `round(train_fraction * count)` streams into the training split.
/// Returns `(train, test)` index lists, each sorted.
pub fn stratified_split(labels: &[u32], train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for &c in &classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let mut rng = rng_from(seed, &[0x5eed, c as u64]);
        members.shuffle(&mut rng);
        let k = libm::round(train_fraction * members.len() as f64) as usize;
        train.extend_from_slice(&members[..k.min(members.len())]);
        test.extend_from_slice(&members[k.min(members.len())..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}
