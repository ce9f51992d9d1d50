use std::f64::consts::PI;

use super::{Contour, Point3};

/// Traces the cross-section of a star-shaped solid with the plane `z`.
///
/// Casts `rays` rays from `center` in the plane and bisects each one for the
/// inside/outside transition up to `max_radius`. Returns `None` when the
/// centre is outside or any ray fails to leave the solid.
pub fn trace_section(
    inside: impl Fn(&Point3) -> bool,
    center: [f64; 2],
    z: f64,
    slice_index: i64,
    rays: usize,
    max_radius: f64,
) -> Option<Contour> {
    let c = Point3::new(center[0], center[1], z);
    if !inside(&c) {
        return None;
    }
    let mut vertices = Vec::with_capacity(rays);
    for k in 0..rays {
        let t = 2.0 * PI * k as f64 / rays as f64;
        let dir = [t.cos(), t.sin()];
        let at = |r: f64| Point3::new(center[0] + r * dir[0], center[1] + r * dir[1], z);
        if inside(&at(max_radius)) {
            return None;
        }
        let (mut lo, mut hi) = (0.0, max_radius);
        for _ in 0..48 {
            let mid = 0.5 * (lo + hi);
            if inside(&at(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r = 0.5 * (lo + hi);
        vertices.push([center[0] + r * dir[0], center[1] + r * dir[1]]);
    }
    Contour::new(slice_index, z, vertices).ok()
}
