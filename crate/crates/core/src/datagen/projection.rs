//! Pullback of a planar canvas onto the sphere by stereographic projection.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{Bandlimit, Rotation, S2Grid};
use crate::repr::angles_to_vector;
use crate::transforms::SphericalSignal;

use super::canvas::{Canvas, CANVAS_SIZE};

/// Default angular half-width of the canvas on the sphere.
pub const DEFAULT_CAP_RADIUS: f64 = PI / 4.0;

/// Point of tangency of the projection plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionPoint {
    /// North pole `θ = 0`.
    Pole,
    /// Equator point `θ = π/2, φ = π`, the middle of the equiangular grid.
    GridCenter,
}

impl ProjectionPoint {
    pub fn code(self) -> u8 {
        match self {
            ProjectionPoint::Pole => 0,
            ProjectionPoint::GridCenter => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(ProjectionPoint::Pole),
            1 => Ok(ProjectionPoint::GridCenter),
            _ => Err(Error::Format(format!("unknown projection point code {c}"))),
        }
    }

    /// `(e1, e2, p)` with `e1 × e2 = p`; canvas columns run along `e1`, rows along `-e2`.
    fn frame(self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        match self {
            ProjectionPoint::Pole => ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
            ProjectionPoint::GridCenter => ([0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]),
        }
    }

    pub fn vector(self) -> [f64; 3] {
        self.frame().2
    }
}

impl fmt::Display for ProjectionPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectionPoint::Pole => "pole",
            ProjectionPoint::GridCenter => "grid_center",
        })
    }
}

impl FromStr for ProjectionPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pole" => Ok(ProjectionPoint::Pole),
            "grid_center" | "grid-center" => Ok(ProjectionPoint::GridCenter),
            _ => Err(Error::Config(format!("projection point must be pole or grid_center, got {s:?}"))),
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Continuous canvas coordinates `(row, col)` of a unit vector, in pixel units
/// with pixel centers at integers, or `None` if it falls outside the canvas.
fn canvas_coords(y: [f64; 3], point: ProjectionPoint, cap_radius: f64) -> Option<(f64, f64)> {
    let (e1, e2, p) = point.frame();
    let denom = 1.0 + dot(y, p);
    if denom <= 1e-12 {
        return None;
    }
    let u = 2.0 * dot(y, e1) / denom;
    let v = 2.0 * dot(y, e2) / denom;
    let a = 2.0 * (cap_radius / 2.0).tan();
    if u.abs() > a || v.abs() > a {
        return None;
    }
    let half = CANVAS_SIZE as f64 / 2.0;
    Some(((-v / a + 1.0) * half - 0.5, (u / a + 1.0) * half - 0.5))
}

fn bilinear(canvas: &Canvas, row: f64, col: f64) -> f64 {
    let max = (CANVAS_SIZE - 1) as f64;
    let (r, c) = (row.clamp(0.0, max), col.clamp(0.0, max));
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(CANVAS_SIZE - 1), (c0 + 1).min(CANVAS_SIZE - 1));
    let (fr, fc) = (r - r0 as f64, c - c0 as f64);
    let top = canvas.pixel(r0, c0) * (1.0 - fc) + canvas.pixel(r0, c1) * fc;
    let bottom = canvas.pixel(r1, c0) * (1.0 - fc) + canvas.pixel(r1, c1) * fc;
    top * (1.0 - fr) + bottom * fr
}

fn nearest(canvas: &Canvas, row: f64, col: f64) -> u8 {
    let max = (CANVAS_SIZE - 1) as f64;
    canvas.class(row.round().clamp(0.0, max) as usize, col.round().clamp(0.0, max) as usize)
}

/// Samples the canvas on the `2L×2L` grid. The returned signal satisfies
/// `signal(x) = base(R⁻¹x)` where `base` is the unrotated projection.
pub fn project_canvas_to_sphere(
    canvas: &Canvas,
    l: Bandlimit,
    point: ProjectionPoint,
    rotation: &Rotation,
    cap_radius: f64,
) -> (SphericalSignal, Vec<u8>) {
    let grid = S2Grid::new(l);
    let inv = rotation.inverse();
    let mut values = Vec::with_capacity(grid.len());
    let mut mask = Vec::with_capacity(grid.len());
    for &t in &grid.thetas {
        for &ph in &grid.phis {
            let y = inv.apply(angles_to_vector(t, ph));
            match canvas_coords(y, point, cap_radius) {
                Some((r, c)) => {
                    values.push(bilinear(canvas, r, c));
                    mask.push(nearest(canvas, r, c));
                }
                None => {
                    values.push(0.0);
                    mask.push(0);
                }
            }
        }
    }
    (SphericalSignal { bandlimit: l, channels: 1, values }, mask)
}
