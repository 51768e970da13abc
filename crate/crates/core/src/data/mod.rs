//! ECG records, their file format, source-dataset label rules, manifests
//! and a synthetic generator.

pub mod ecgb;
pub mod manifest;
pub mod mapping;
pub mod record;
pub mod synth;

pub use ecgb::{load_record, read_record, save_record, write_record};
pub use manifest::{split_dataset, split_records, Manifest, ManifestEntry, Split};
pub use mapping::{map_chapman_rhythm, map_mimic_binary, map_ptbxl_superclass, AliasTable};
pub use record::{batch_signals, batch_targets, EcgRecord, LabelSet, Rhythm, Scheme, Superclass};
pub use synth::{infer_scheme, parse_profiles, synth_corpus, synth_generate, Profile};
