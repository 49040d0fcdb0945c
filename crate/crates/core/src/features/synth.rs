//! Synthetic polyphonic clips standing in for a real sound event corpus.
//!
//! Each class owns a frequency band. Even classes emit a steady tone at the
//! band center, odd classes a burst of band-limited noise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::wav::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::eval::events::Event;
use crate::tensor::Tensor;

pub const CLASS_NAMES: [&str; 10] = [
    "Alarm_bell_ringing",
    "Blender",
    "Cat",
    "Dishes",
    "Dog",
    "Electric_shaver_toothbrush",
    "Frying",
    "Running_water",
    "Speech",
    "Vacuum_cleaner",
];

const RAMP_SECS: f64 = 0.01;
const BACKGROUND_LEVEL: f64 = 0.002;
const NOISE_PARTIALS: usize = 24;

pub fn class_index(label: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|&n| n == label)
}

/// Center frequency of class `c` in Hz.
pub fn class_center(c: usize) -> f64 {
    220.0 * 1.38f64.powi(c as i32)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventSpec {
    pub class: usize,
    pub onset: f64,
    pub offset: f64,
}

#[derive(Clone, Debug)]
pub struct SynthClip {
    pub clip_id: String,
    pub audio: AudioClip,
    pub events: Vec<Event>,
    /// `[label_frames, classes]` with 1 where an event overlaps the frame.
    pub labels: Tensor,
}

/// Label frames that fit a clip of `samples` samples: feature frames are
/// cropped down to a multiple of `time_pool`.
pub fn label_frame_count(samples: usize, hop: usize, time_pool: usize) -> usize {
    (samples / hop + 1) / time_pool
}

/// Strong label grid. Frame `i` spans `[i * frame_dur, (i + 1) * frame_dur)`.
pub fn label_grid(events: &[EventSpec], frames: usize, frame_dur: f64, classes: usize) -> Result<Tensor> {
    if frames == 0 {
        return Err(Error::invalid("label_grid", "clip shorter than one label frame"));
    }
    let mut g = vec![0.0; frames * classes];
    for e in events {
        if e.class >= classes {
            return Err(Error::invalid("label_grid", format!("class {} out of range", e.class)));
        }
        let first = (e.onset / frame_dur).floor() as usize;
        let last = ((e.offset / frame_dur).ceil() as usize).min(frames);
        for i in first..last {
            g[i * classes + e.class] = 1.0;
        }
    }
    Tensor::from_vec(&[frames, classes], g)
}

/// Renders `events` into a clip of `duration` seconds.
///
/// Labels use 256-sample hops pooled by 4 (64 ms frames).
pub fn synth_clip(seed: u64, clip_id: &str, duration: f64, events: &[EventSpec]) -> Result<SynthClip> {
    let n = (duration * SAMPLE_RATE as f64).round() as usize;
    if n == 0 {
        return Err(Error::invalid("synth_clip", "duration must be positive"));
    }
    for e in events {
        if e.class >= CLASS_NAMES.len() {
            return Err(Error::invalid("synth_clip", format!("unknown class {}", e.class)));
        }
        if !(e.onset >= 0.0 && e.offset > e.onset && e.offset <= duration) {
            return Err(Error::invalid(
                "synth_clip",
                format!("event [{}, {}] outside clip of {duration} s", e.onset, e.offset),
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = vec![0.0; n];
    let sr = SAMPLE_RATE as f64;
    for e in events {
        let center = class_center(e.class);
        let amp = rng.gen_range(0.08..0.25);
        let partials: Vec<(f64, f64)> = if e.class % 2 == 0 {
            vec![(center * rng.gen_range(0.98..1.02), 0.0)]
        } else {
            (0..NOISE_PARTIALS)
                .map(|_| {
                    (
                        center * rng.gen_range(0.88..1.12),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect()
        };
        let gain = amp / (partials.len() as f64).sqrt();
        let start = (e.onset * sr).round() as usize;
        let stop = ((e.offset * sr).round() as usize).min(n);
        let ramp = (RAMP_SECS * sr) as usize;
        let len = stop - start;
        for i in 0..len {
            let t = i as f64 / sr;
            let edge = i.min(len - 1 - i);
            let env = if edge < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            let v: f64 = partials
                .iter()
                .map(|&(f, ph)| (std::f64::consts::TAU * f * t + ph).sin())
                .sum();
            samples[start + i] += gain * env * v;
        }
    }
    for s in &mut samples {
        *s = s.clamp(-1.0, 1.0);
    }
    let frames = label_frame_count(n, 256, 4);
    let labels = label_grid(events, frames, 0.064, CLASS_NAMES.len())?;
    let events = events
        .iter()
        .map(|e| Event::new(clip_id, CLASS_NAMES[e.class], e.onset, e.offset))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthClip {
        clip_id: clip_id.to_string(),
        audio: AudioClip::new(samples),
        events,
        labels,
    })
}

/// Draws between one and `max_events` events, each 0.25 s or longer,
/// with onsets and offsets on a 1 ms grid.
pub fn random_event_specs(rng: &mut ChaCha8Rng, duration: f64, max_events: usize) -> Vec<EventSpec> {
    let count = rng.gen_range(1..=max_events.max(1));
    let min_len = 0.25f64.min(duration);
    let mut out: Vec<EventSpec> = Vec::with_capacity(count);
    for _ in 0..count {
        let class = rng.gen_range(0..CLASS_NAMES.len());
        let onset = ms(rng.gen_range(0.0..=(duration - min_len)));
        let max_len = (duration - onset).min(duration * 0.6).max(min_len);
        let offset = ms((onset + rng.gen_range(min_len..=max_len)).min(duration));
        if offset <= onset {
            continue;
        }
        // same-class events never overlap so references stay distinct
        if out.iter().any(|o| o.class == class && o.onset < offset && onset < o.offset) {
            continue;
        }
        out.push(EventSpec { class, onset, offset });
    }
    out.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.class.cmp(&b.class)));
    out
}

fn ms(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Adds uniform noise of peak `level`, clamping to `[-1, 1]`.
pub fn add_background(clip: &mut AudioClip, level: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in &mut clip.samples {
        *s = (*s + rng.gen_range(-level..=level)).clamp(-1.0, 1.0);
    }
}

/// `count` random clips named `{prefix}{index:04}.wav` over a faint noise
/// floor; clip `i` is seeded by `seed + i`.
pub fn synth_corpus(seed: u64, prefix: &str, count: usize, duration: f64, max_events: usize) -> Result<Vec<SynthClip>> {
    (0..count)
        .map(|i| {
            let clip_seed = seed.wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(clip_seed ^ 0x5eed_ca11);
            let specs = random_event_specs(&mut rng, duration, max_events);
            let mut clip = synth_clip(clip_seed, &format!("{prefix}{i:04}.wav"), duration, &specs)?;
            add_background(&mut clip.audio, BACKGROUND_LEVEL, clip_seed ^ 0xb6);
            Ok(clip)
        })
        .collect()
}
