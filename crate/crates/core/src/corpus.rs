//! On-disk clip corpora: a directory of WAV files plus `refs.tsv`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::{crop_frames, Sample};
use crate::error::{Error, Result};
use crate::eval::events::{read_events_tsv, write_events_tsv, Event};
use crate::features::mel::{logmel_with, mel_filterbank, MelConfig};
use crate::features::synth::{label_frame_count, label_grid, EventSpec, SynthClip};
use crate::features::wav::{read_wav, write_wav};

pub const REFS_FILE: &str = "refs.tsv";

pub fn write_corpus(dir: &Path, clips: &[SynthClip]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for c in clips {
        write_wav(&c.audio, &dir.join(&c.clip_id))?;
    }
    let events: Vec<Event> = clips.iter().flat_map(|c| c.events.iter().cloned()).collect();
    write_events_tsv(&events, &dir.join(REFS_FILE))
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub refs: Vec<Event>,
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every WAV in `dir` (sorted by name) with labels from `refs.tsv`.
///
/// Features are cropped to a whole number of label frames.
pub fn load_corpus(dir: &Path, cfg: &MelConfig, time_pool: usize, classes: &[String]) -> Result<Corpus> {
    let refs = read_events_tsv(&dir.join(REFS_FILE))?;
    for r in &refs {
        if !classes.contains(&r.label) {
            return Err(Error::Format(format!("{}: unknown class {:?}", REFS_FILE, r.label)));
        }
    }
    let files = wav_files(dir)?;
    if files.is_empty() {
        return Err(Error::Format(format!("no WAV files in {}", dir.display())));
    }
    let fb = mel_filterbank(cfg)?;
    let frame_dur = cfg.frame_duration(time_pool);
    let samples = files
        .par_iter()
        .map(|path| {
            let id = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let audio = read_wav(path)?;
            let frames = label_frame_count(audio.samples.len(), cfg.hop, time_pool);
            let specs: Vec<EventSpec> = refs
                .iter()
                .filter(|e| e.clip_id == id)
                .map(|e| EventSpec {
                    class: classes.iter().position(|c| c == &e.label).expect("checked above"),
                    onset: e.onset,
                    offset: e.offset,
                })
                .collect();
            let strong = label_grid(&specs, frames, frame_dur, classes.len())?;
            let mel = logmel_with(&audio, cfg, &fb)?;
            Sample::new(id, crop_frames(&mel, frames * time_pool)?, strong)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { samples, refs })
}

/// Class names for a model with `n` outputs, taken from the synthetic vocabulary.
pub fn class_names(n: usize) -> Result<Vec<String>> {
    let names = crate::features::synth::CLASS_NAMES;
    if n == 0 || n > names.len() {
        return Err(Error::Config(format!(
            "model.n_classes = {n}; the clip vocabulary has {} names",
            names.len()
        )));
    }
    Ok(names[..n].iter().map(|s| s.to_string()).collect())
}
