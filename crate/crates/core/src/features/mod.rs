//! Audio input, log-mel features and synthetic clips.

pub mod dump;
pub mod mel;
pub mod stft;
pub mod synth;
pub mod wav;

pub use dump::{read_grid, write_grid};
pub use mel::{logmel, mel_filterbank, MelConfig, MelFilterbank};
pub use stft::{stft, Window};
pub use synth::{synth_clip, synth_corpus, EventSpec, SynthClip, CLASS_NAMES};
pub use wav::{read_wav, write_wav, AudioClip, SAMPLE_RATE};
