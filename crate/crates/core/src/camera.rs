//! Pinhole cameras. Pixel `(u, v)` shoots its ray through the pixel center:
//! camera-frame direction `((u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1)`,
//! camera looking along +z. Directions are left unnormalized, so the ray
//! parameter of a point equals its camera-space depth.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<R: Real> {
    pub origin: Vector3<R>,
    pub dir: Vector3<R>,
}

impl<R: Real> Ray<R> {
    pub fn at(&self, t: R) -> Vector3<R> {
        self.origin + self.dir * t
    }
}

impl Ray<f64> {
    pub fn cast<R: Real>(&self) -> Ray<R> {
        Ray {
            origin: self.origin.map(R::of),
            dir: self.dir.map(R::of),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world rotation.
    pub rotation: Matrix3<f64>,
    /// Camera position in world space.
    pub position: Vector3<f64>,
}

impl Camera {
    pub fn new(
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        position: Vector3<f64>,
    ) -> Result<Self> {
        let cam = Camera {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            position,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image must be non-empty"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        let dev = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        if !(dev <= 1e-4) || self.rotation.determinant() <= 0.0 {
            return Err(Error::invalid(format!(
                "camera rotation is not a proper rotation (orthonormality deviation {dev:.3e})"
            )));
        }
        if self.position.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("camera position is not finite"));
        }
        Ok(())
    }

    /// Builds a camera at `eye` looking at `target`. `up` is the world
    /// direction that should appear upward in the image (image y grows down).
    pub fn look_at(
        width: u32,
        height: u32,
        fov_x_deg: f64,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("look_at with coincident eye and target"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("look_at with up parallel to view direction"))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        let fx = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Camera::new(
            width,
            height,
            fx,
            fx,
            0.5 * width as f64,
            0.5 * height as f64,
            rotation,
            eye,
        )
    }

    /// Row-major 4x4 camera-to-world matrix.
    pub fn c2w(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    pub fn from_c2w(
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        c2w: &Matrix4<f64>,
    ) -> Result<Self> {
        let bottom = c2w.fixed_view::<1, 4>(3, 0);
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > 1e-9 {
            return Err(Error::invalid("c2w bottom row must be [0, 0, 0, 1]"));
        }
        Camera::new(
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            c2w.fixed_view::<3, 3>(0, 0).into_owned(),
            c2w.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Camera +z axis in world space.
    pub fn lookat(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    pub fn fov_x(&self) -> f64 {
        2.0 * (0.5 * self.width as f64 / self.fx).atan()
    }

    /// Ray through pixel `(px, py)`; integer coordinates hit pixel centers.
    pub fn pixel_ray(&self, px: f64, py: f64) -> Ray<f64> {
        let d = Vector3::new(
            (px + 0.5 - self.cx) / self.fx,
            (py + 0.5 - self.cy) / self.fy,
            1.0,
        );
        Ray {
            origin: self.position,
            dir: self.rotation * d,
        }
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.position)
    }

    /// Pixel coordinates (in the [`Camera::pixel_ray`] convention) and depth
    /// of a world point. Depth may be non-positive.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        let c = self.world_to_camera(p);
        (
            self.fx * c.x / c.z + self.cx - 0.5,
            self.fy * c.y / c.z + self.cy - 0.5,
            c.z,
        )
    }

    /// Same view rendered at a different resolution; intrinsics scale with
    /// the image so every pixel keeps its footprint.
    pub fn scaled(&self, width: u32, height: u32) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            width,
            height,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            rotation: self.rotation,
            position: self.position,
        }
    }
}
