//! Geometry and image side of the pipeline: orbit camera rigs, procedural
//! meshes, a deterministic software rasterizer, NOCS/CROCS coordinate frames,
//! superimage tiling and evaluation metrics.

pub mod camera;
pub mod crocs;
pub mod error;
pub mod formats;
pub mod image;
pub mod mesh;
pub mod metrics;
pub mod obj;
pub mod raster;
pub mod tiling;

pub use camera::{make_rig, sample_source_pose, CameraPose, PoseRanges, RigSpec};
pub use crocs::{crocs_frame, nocs_frame, render_crocs_set, unproject, CrocsFrame, NocsFrame, PointFrame};
pub use error::{Error, Result};
pub use image::{Image, Pointmap};
pub use mesh::{generate, surface_sample, AssetKind, AssetSpec, Mesh};
pub use raster::{render_nocs, render_pointmap, render_shaded, visible_points};
pub use tiling::{pack, source_superimage, unpack, SuperImage};
