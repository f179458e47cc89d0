//! Orthographic cameras and ray generation.
//!
//! World frame: right-handed, +z up, characters fit a unit cube centered at
//! the origin and face −y. Azimuth 0° is the front view; azimuths rotate
//! counter-clockwise about +z, elevation tilts the view up.

use glam::DVec3;

use crate::error::{Error, Result};

/// Default orthographic scale of the capture rig.
pub const DEFAULT_ORTHO_SCALE: f64 = 1.2;

/// Near/far default: unit-cube bounds padded by 5%, measured along the view
/// axis from the plane through the origin.
pub const DEFAULT_CLIP: f64 = 0.525 * 1.7320508075688772; // half diagonal of the padded cube

/// An orthographic camera. Angles are stored in degrees at this boundary;
/// all internal math is done in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthoCamera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub ortho_scale: f64,
    pub resolution: u32,
    pub near: f64,
    pub far: f64,
}

/// One pixel ray: origin on the camera plane through the world origin,
/// unit direction into the scene.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: DVec3,
    pub dir: DVec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> DVec3 {
        self.origin + self.dir * t
    }

    /// Clips the ray to an axis-aligned box, returning the `t` interval
    /// or `None` when the ray misses.
    pub fn clip_to_box(&self, min: DVec3, max: DVec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for axis in 0..3 {
            let o = self.origin[axis];
            let d = self.dir[axis];
            if d.abs() < 1e-15 {
                if o < min[axis] || o > max[axis] {
                    return None;
                }
            } else {
                let inv = 1.0 / d;
                let (a, b) = ((min[axis] - o) * inv, (max[axis] - o) * inv);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        if t0 < t1 {
            Some((t0, t1))
        } else {
            None
        }
    }
}

/// Orthonormal camera basis: `right`, `up`, `forward` (into the scene).
#[derive(Debug, Clone, Copy)]
pub struct CameraBasis {
    pub right: DVec3,
    pub up: DVec3,
    pub forward: DVec3,
}

impl OrthoCamera {
    pub fn new(azimuth_deg: f64, elevation_deg: f64, ortho_scale: f64, resolution: u32) -> Self {
        OrthoCamera {
            azimuth_deg,
            elevation_deg,
            ortho_scale,
            resolution,
            near: -DEFAULT_CLIP,
            far: DEFAULT_CLIP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ortho_scale > 0.0) {
            return Err(Error::domain("ortho_scale must be > 0"));
        }
        if self.resolution < 1 {
            return Err(Error::domain("resolution must be >= 1"));
        }
        if !(self.near < self.far) {
            return Err(Error::domain("near must be < far"));
        }
        Ok(())
    }

    pub fn basis(&self) -> CameraBasis {
        let az = self.azimuth_deg.to_radians();
        let el = self.elevation_deg.to_radians();
        // Camera sits at azimuth az on the −y side for az = 0 and looks at the origin.
        let to_camera = DVec3::new(
            az.sin() * el.cos(),
            -az.cos() * el.cos(),
            el.sin(),
        );
        let forward = -to_camera;
        let world_up = DVec3::Z;
        let right = forward.cross(world_up).normalize();
        let up = right.cross(forward).normalize();
        CameraBasis { right, up, forward }
    }

    /// Ray through pixel center `(ix, iy)`; row 0 is the top of the image.
    pub fn pixel_ray(&self, ix: u32, iy: u32) -> Ray {
        self.sub_pixel_ray(ix as f64 + 0.5, iy as f64 + 0.5)
    }

    /// Ray through image coordinates in pixels (fractional allowed).
    pub fn sub_pixel_ray(&self, px: f64, py: f64) -> Ray {
        let b = self.basis();
        let res = self.resolution as f64;
        let u = (px / res - 0.5) * self.ortho_scale;
        let v = (0.5 - py / res) * self.ortho_scale;
        Ray {
            origin: b.right * u + b.up * v,
            dir: b.forward,
        }
    }

    /// Projects a world point to fractional pixel coordinates and view depth
    /// (distance along `forward` measured from the plane through the origin).
    pub fn project(&self, p: DVec3) -> (f64, f64, f64) {
        let b = self.basis();
        let u = p.dot(b.right);
        let v = p.dot(b.up);
        let res = self.resolution as f64;
        let px = (u / self.ortho_scale + 0.5) * res;
        let py = (0.5 - v / self.ortho_scale) * res;
        (px, py, p.dot(b.forward))
    }

    /// Transforms a world-space direction into camera space
    /// (x = right, y = up, z = toward the viewer).
    pub fn to_camera_dir(&self, d: DVec3) -> DVec3 {
        let b = self.basis();
        DVec3::new(d.dot(b.right), d.dot(b.up), -d.dot(b.forward))
    }

    /// World-space pixel side length.
    pub fn pixel_size(&self) -> f64 {
        self.ortho_scale / self.resolution as f64
    }
}

/// The six-view capture rig: elevation 0, azimuths −90°, −45°, 0°, 45°, 90°, 180°,
/// ortho scale 1.2.
pub fn default_camera_rig(resolution: u32) -> Vec<OrthoCamera> {
    [-90.0, -45.0, 0.0, 45.0, 90.0, 180.0]
        .iter()
        .map(|&az| OrthoCamera::new(az, 0.0, DEFAULT_ORTHO_SCALE, resolution))
        .collect()
}

/// Eight equidistant evaluation views at 45° azimuth steps, elevation 0.
pub fn evaluation_rig(resolution: u32) -> Vec<OrthoCamera> {
    (0..8)
        .map(|i| OrthoCamera::new(45.0 * i as f64, 0.0, DEFAULT_ORTHO_SCALE, resolution))
        .collect()
}
