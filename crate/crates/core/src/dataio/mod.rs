//! Annotations, PPM/PGM images, letterboxing, dataset manifests and the
//! synthetic aerial-scene generator.

mod annotations;
mod letterbox;
mod manifest;
mod pnm;
mod synth;

pub use annotations::{format_annotations, parse_annotations, parse_annotations_str, save_annotations};
pub use letterbox::{letterbox, LetterboxTransform};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, ManifestEntry, CLASS_TABLE};
pub use pnm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm, load_pgm, load_ppm, save_pgm, save_ppm};
pub use synth::{synth_scene, write_synthetic_dataset, SynthConfig};
