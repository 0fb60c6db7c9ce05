//! Dataset ingestion: manifests, feature files, VA normalization, clip
//! concatenation and caption cleanup.

pub mod captions;
pub mod clips;
pub mod featfile;
pub mod manifest;
pub mod normalize;
pub mod pairs;

pub use captions::{clean_caption, refine_caption, refine_caption_request, FewShotConfig, FixtureTransport, OfflineTransport, RefinementTransport};
pub use clips::{build_clip_specs, BaseClip, ClipSpec};
pub use featfile::FeatureFile;
pub use manifest::{load_dataset, read_manifest, write_manifest, Dataset, DatasetReport, DatasetWriter, ManifestEntry, Split};
pub use normalize::{normalize_va, VaScale};
pub use pairs::{read_pair_list, write_pair_list};
