//! Four-quadrant TRUS/MRI composites and MRI contour transport into the
//! TRUS frame.

mod composite;
mod contours;
mod volume;

pub use composite::{
    composite_slice, read_pgm, resample_mri_slice, write_pgm, CompositeImage, CompositeOptions,
    CompositeSidecar, Image2D, Modality, QuadrantLayout, SliceGeometry,
};
pub use contours::{map_mri_contours_to_trus, MappedContours, MAX_FAILED_FRACTION};
pub use volume::{trilinear_sample, ScalarVolume, VolumeHeader};
