//! Event streams, sliding windows and subwindow point sampling.
//!
//! A window of raw events becomes a fixed-size cloud of `num_points` points
//! `(x, y, z)` in `[0, 1]^3`, where `z` is the event time normalized to the window
//! bounds. With subwindows enabled the window is cut into `ceil(L / L_sub)`
//! equal-duration slices and every slice gets the same share of the point
//! budget, so slow phases of a motion (few events) stay represented next to
//! fast phases (many events).

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// One sensor record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: bool,
}

impl Event {
    pub const fn new(t_us: u64, x: u16, y: u16, polarity: bool) -> Self {
        Self {
            t_us,
            x,
            y,
            polarity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub sensor_width: u16,
    pub sensor_height: u16,
    pub label: Option<u32>,
}

impl EventStream {
    /// Validates sensor bounds. Ordering is not enforced here; see [`Self::sort_stable`].
    pub fn new(events: Vec<Event>, sensor_width: u16, sensor_height: u16, label: Option<u32>) -> Result<Self> {
        if let Some((index, e)) = events
            .iter()
            .enumerate()
            .find(|(_, e)| e.x >= sensor_width || e.y >= sensor_height)
        {
            return Err(Error::OutOfBounds {
                index,
                x: e.x as u32,
                y: e.y as u32,
                width: sensor_width as u32,
                height: sensor_height as u32,
            });
        }
        Ok(Self {
            events,
            sensor_width,
            sensor_height,
            label,
        })
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0].t_us <= w[1].t_us)
    }

    /// Stable sort by timestamp. Returns `true` when the input was out of order.
    pub fn sort_stable(&mut self) -> bool {
        if self.is_sorted() {
            return false;
        }
        self.events.sort_by_key(|e| e.t_us);
        true
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Windowing and sampling parameters. All durations are in microseconds.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct WindowConfig {
    pub window_len_us: u64,
    pub overlap_us: u64,
    /// 0 disables subwindows (plain uniform sampling over the whole window).
    pub subwindow_len_us: u64,
    pub num_points: usize,
    pub min_events: usize,
    /// Windowing starts at `t_first + start_fraction * (t_last - t_first)`.
    pub start_fraction: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_len_us: 500_000,
            overlap_us: 250_000,
            subwindow_len_us: 125_000,
            num_points: 1024,
            min_events: 32,
            start_fraction: 0.0,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len_us == 0 {
            return Err(Error::WindowConfig("window_len_us must be positive"));
        }
        if self.overlap_us >= self.window_len_us {
            return Err(Error::WindowConfig("overlap_us must be smaller than window_len_us"));
        }
        if self.subwindow_len_us > self.window_len_us {
            return Err(Error::WindowConfig("subwindow_len_us must not exceed window_len_us"));
        }
        if self.num_points == 0 {
            return Err(Error::WindowConfig("num_points must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.start_fraction) {
            return Err(Error::WindowConfig("start_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn stride_us(&self) -> u64 {
        self.window_len_us - self.overlap_us
    }

    /// `ceil(L / L_sub)`, or 1 when subwindows are disabled.
    pub fn num_subwindows(&self) -> usize {
        if self.subwindow_len_us == 0 {
            1
        } else {
            self.window_len_us.div_ceil(self.subwindow_len_us) as usize
        }
    }
}

/// One sliding window over a sorted stream.
#[derive(Clone, Copy, Debug)]
pub struct Window<'a> {
    /// Nominal window start; the window covers `[start_us, start_us + L)`.
    pub start_us: u64,
    /// Lower normalization bound (`t_1`).
    pub t1: u64,
    /// Upper normalization bound (`t_n`).
    pub tn: u64,
    pub events: &'a [Event],
}

/// Cuts a sorted, non-empty stream into overlapping windows.
///
/// Windows start at the first event (shifted by `start_fraction`) and advance by
/// `L - overlap`. Emission stops after the first window that reaches past the
/// last event, so a short trailing window is kept once. Full windows normalize
/// time against `[start, start + L]`; the trailing window that runs past the end
/// of the stream normalizes against its own first and last event. Windows with
/// fewer than `min_events` events are dropped.
pub fn slide_windows<'a>(stream: &'a EventStream, cfg: &WindowConfig) -> Result<Vec<Window<'a>>> {
    cfg.validate()?;
    let events = &stream.events[..];
    let (first, last) = match (events.first(), events.last()) {
        (Some(f), Some(l)) => (f.t_us, l.t_us),
        _ => return Err(Error::EmptyStream),
    };
    let origin = first + ((last - first) as f64 * cfg.start_fraction) as u64;
    let len = cfg.window_len_us;
    let stride = cfg.stride_us();
    let mut out = Vec::new();
    let mut start = origin;
    loop {
        let end = start + len;
        let lo = events.partition_point(|e| e.t_us < start);
        let hi = events.partition_point(|e| e.t_us < end);
        let slice = &events[lo..hi];
        let runs_past_end = end > last;
        if !slice.is_empty() && slice.len() >= cfg.min_events {
            let (t1, tn) = if runs_past_end {
                (slice[0].t_us, slice[slice.len() - 1].t_us)
            } else {
                (start, end)
            };
            out.push(Window {
                start_us: start,
                t1,
                tn,
                events: slice,
            });
        }
        if runs_past_end {
            break;
        }
        start += stride;
    }
    Ok(out)
}

/// Subwindow boundaries inside `[t1, tn]`: `n_sub + 1` timestamps, scaled so
/// that boundary `j` sits at normalized time `j * L_sub / L`.
pub fn subwindow_bounds(t1: u64, tn: u64, cfg: &WindowConfig) -> Vec<u64> {
    let n_sub = cfg.num_subwindows();
    let span = (tn - t1) as u128;
    let mut bounds: Vec<u64> = (0..n_sub)
        .map(|j| {
            let offset = if cfg.subwindow_len_us == 0 {
                0
            } else {
                (j as u128 * cfg.subwindow_len_us as u128 * span) / cfg.window_len_us as u128
            };
            t1 + offset.min(span) as u64
        })
        .collect();
    bounds.push(tn);
    bounds
}

/// Splits a window's events into per-subwindow slices. The final subwindow is
/// closed on the right so an event at `tn` is kept.
pub fn split_subwindows<'a>(window: &Window<'a>, cfg: &WindowConfig) -> Vec<&'a [Event]> {
    let bounds = subwindow_bounds(window.t1, window.tn, cfg);
    let n_sub = bounds.len() - 1;
    let ev = window.events;
    let cuts: Vec<usize> = bounds[1..n_sub]
        .iter()
        .map(|&b| ev.partition_point(|e| e.t_us < b))
        .collect();
    let mut out = Vec::with_capacity(n_sub);
    let mut lo = 0;
    for &c in &cuts {
        out.push(&ev[lo..c]);
        lo = c;
    }
    out.push(&ev[lo..]);
    out
}

/// Point budget per subwindow.
///
/// Every subwindow starts with `floor(n / n_sub)`, the remainder goes one each to
/// the earliest subwindows, and the budget of empty subwindows is handed to the
/// non-empty ones in proportion to their event counts with largest-remainder
/// rounding (ties go to the earlier subwindow).
pub fn subwindow_quotas(n: usize, counts: &[usize]) -> Result<Vec<usize>> {
    let n_sub = counts.len();
    if n_sub == 0 {
        return Err(Error::Empty("subwindow counts"));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Empty("window has no events"));
    }
    let base = n / n_sub;
    let rem = n % n_sub;
    let mut quotas: Vec<usize> = (0..n_sub).map(|j| base + usize::from(j < rem)).collect();
    let spare: usize = quotas
        .iter()
        .zip(counts)
        .filter(|(_, &c)| c == 0)
        .map(|(&q, _)| q)
        .sum();
    for (q, &c) in quotas.iter_mut().zip(counts) {
        if c == 0 {
            *q = 0;
        }
    }
    if spare > 0 {
        // Exact integer shares: spare * c / total, with the fractional part kept
        // as a numerator over `total` for the remainder ranking.
        let mut frac: Vec<(usize, usize)> = Vec::new();
        let mut handed = 0;
        for (j, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let num = spare as u128 * c as u128;
            let whole = (num / total as u128) as usize;
            quotas[j] += whole;
            handed += whole;
            frac.push(((num % total as u128) as usize, j));
        }
        frac.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, j) in frac.iter().take(spare - handed) {
            quotas[j] += 1;
        }
    }
    Ok(quotas)
}

/// Sorted sample of `amount` indices from `0..len`: without replacement when
/// `len >= amount`, with replacement otherwise.
fn sample_indices<R: Rng + ?Sized>(rng: &mut R, len: usize, amount: usize) -> Vec<usize> {
    let mut picked = if len >= amount {
        index::sample(rng, len, amount).into_vec()
    } else {
        (0..amount).map(|_| rng.random_range(0..len)).collect()
    };
    picked.sort_unstable();
    picked
}

/// Sampling output for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    pub points: Vec<[f32; 3]>,
    pub label: Option<u32>,
    pub window_start_us: u64,
    pub window_end_us: u64,
    pub source_id: u32,
}

/// Draws `num_points` events from a window and normalizes them.
///
/// Sampled points keep the temporal order of the window.
pub fn subwindow_sample<R: Rng + ?Sized>(
    window: &Window<'_>,
    cfg: &WindowConfig,
    sensor_width: u16,
    sensor_height: u16,
    rng: &mut R,
) -> Result<ClipSample> {
    if window.events.is_empty() {
        return Err(Error::Empty("window has no events"));
    }
    let n = cfg.num_points;
    let mut chosen: Vec<Event> = Vec::with_capacity(n);
    if cfg.subwindow_len_us == 0 {
        for i in sample_indices(rng, window.events.len(), n) {
            chosen.push(window.events[i]);
        }
    } else {
        let parts = split_subwindows(window, cfg);
        let counts: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        let quotas = subwindow_quotas(n, &counts)?;
        for (part, &q) in parts.iter().zip(&quotas) {
            if q == 0 {
                continue;
            }
            for i in sample_indices(rng, part.len(), q) {
                chosen.push(part[i]);
            }
        }
    }
    let points = normalize_points(&chosen, window.t1, window.tn, sensor_width, sensor_height);
    Ok(ClipSample {
        points,
        label: None,
        window_start_us: window.t1,
        window_end_us: window.tn,
        source_id: 0,
    })
}

/// Maps events to `(x, y, z)` in `[0, 1]^3`; polarity is dropped.
///
/// `x / (width - 1)`, `y / (height - 1)` and `z = (t - t1) / (tn - t1)`. A window
/// with `tn == t1` has no time extent and gets `z = 0` everywhere.
pub fn normalize_points(events: &[Event], t1: u64, tn: u64, sensor_width: u16, sensor_height: u16) -> Vec<[f32; 3]> {
    let span = tn.saturating_sub(t1) as f64;
    if span == 0.0 && !events.is_empty() {
        log::warn!("degenerate window [{t1}, {tn}]: all z set to 0");
    }
    let sx = if sensor_width > 1 { 1.0 / (sensor_width as f64 - 1.0) } else { 0.0 };
    let sy = if sensor_height > 1 { 1.0 / (sensor_height as f64 - 1.0) } else { 0.0 };
    events
        .iter()
        .map(|e| {
            let z = if span == 0.0 {
                0.0
            } else {
                (e.t_us.saturating_sub(t1) as f64 / span).clamp(0.0, 1.0)
            };
            [
                (e.x as f64 * sx).clamp(0.0, 1.0) as f32,
                (e.y as f64 * sy).clamp(0.0, 1.0) as f32,
                z as f32,
            ]
        })
        .collect()
}

/// Windows and samples a whole stream. Window `i` draws from its own random
/// source derived from `(seed, source_id, i)`.
pub fn stream_to_clips(stream: &EventStream, source_id: u32, cfg: &WindowConfig, seed: u64) -> Result<Vec<ClipSample>> {
    let windows = slide_windows(stream, cfg)?;
    let mut clips = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        let mut rng = rng_from(seed, &[source_id as u64, i as u64]);
        let mut clip = subwindow_sample(w, cfg, stream.sensor_width, stream.sensor_height, &mut rng)?;
        clip.label = stream.label;
        clip.source_id = source_id;
        clips.push(clip);
    }
    Ok(clips)
}

/// Counts how many points of a clip fall in each subwindow bucket of `z`.
pub fn bucket_by_z(points: &[[f32; 3]], cfg: &WindowConfig) -> Vec<usize> {
    let n_sub = cfg.num_subwindows();
    let mut counts = vec![0; n_sub];
    let frac = if cfg.subwindow_len_us == 0 {
        1.0
    } else {
        cfg.subwindow_len_us as f64 / cfg.window_len_us as f64
    };
    for p in points {
        let j = libm::floor(p[2] as f64 / frac) as usize;
        counts[j.min(n_sub - 1)] += 1;
    }
    counts
}
