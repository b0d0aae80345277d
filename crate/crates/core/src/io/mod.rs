//! File formats: PFM disparities, binary PPM/PGM images, text weight files
//! and sequence manifests.

pub mod manifest;
pub mod pfm;
pub mod pnm;
pub mod weights;

pub use manifest::{parse_manifest, ManifestEntry};
pub use pfm::{read_pfm, write_pfm, Pfm};
pub use pnm::{read_pnm, write_pgm, write_ppm, Pnm};
pub use weights::{parse_weights, WeightSet};
