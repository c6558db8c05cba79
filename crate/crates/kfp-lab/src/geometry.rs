//! Spatial domain: signed distance, outward normals, boundary quadrature, accommodation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for "x lies on the boundary" checks.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Accommodation coefficient: constant, or a table over boundary nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Accommodation {
    Constant(f64),
    /// Piecewise constant per boundary node, in the node order produced by
    /// [`Domain::boundary_quadrature`] at the resolution the table was built for.
    PerNode(Vec<f64>),
}

impl Accommodation {
    fn value(&self, node_index: usize) -> f64 {
        match self {
            Accommodation::Constant(c) => *c,
            Accommodation::PerNode(t) => t[node_index % t.len()],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Accommodation::Constant(c) => (0.0..=1.0).contains(c),
            Accommodation::PerNode(t) => t.iter().all(|c| (0.0..=1.0).contains(c)),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Geometry("accommodation coefficient must lie in [0, 1]".into()))
        }
    }
}

/// The spatial domain: an interval (0, L) or a disk of radius R.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DomainKind {
    Interval { length: f64 },
    Disk { radius: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Domain {
    pub kind: DomainKind,
    pub iota: Accommodation,
}

/// One node of the boundary quadrature.
#[derive(Debug, Clone)]
pub struct BoundaryNode {
    pub position: [f64; 2],
    pub normal: [f64; 2],
    /// Surface quadrature weight; the weights sum to |boundary|.
    pub weight: f64,
    pub iota: f64,
}

impl Domain {
    pub fn interval(length: f64, iota: Accommodation) -> Result<Self> {
        if length <= 0.0 {
            return Err(Error::Geometry("interval length must be positive".into()));
        }
        iota.validate()?;
        Ok(Self { kind: DomainKind::Interval { length }, iota })
    }

    pub fn disk(radius: f64, iota: Accommodation) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::Geometry("disk radius must be positive".into()));
        }
        iota.validate()?;
        Ok(Self { kind: DomainKind::Disk { radius }, iota })
    }

    /// Spatial dimension (1 for the interval, 2 for the disk).
    pub fn dim(&self) -> usize {
        match self.kind {
            DomainKind::Interval { .. } => 1,
            DomainKind::Disk { .. } => 2,
        }
    }

    /// sup of the signed distance: half the interval length, or the disk radius.
    pub fn diameter_bound(&self) -> f64 {
        match self.kind {
            DomainKind::Interval { length } => length / 2.0,
            DomainKind::Disk { radius } => radius,
        }
    }

    /// Volume of the domain (length or area).
    pub fn volume(&self) -> f64 {
        match self.kind {
            DomainKind::Interval { length } => length,
            DomainKind::Disk { radius } => std::f64::consts::PI * radius * radius,
        }
    }

    /// Analytic boundary measure: 2 points for the interval, circumference for the disk.
    pub fn boundary_measure(&self) -> f64 {
        match self.kind {
            DomainKind::Interval { .. } => 2.0,
            DomainKind::Disk { radius } => 2.0 * std::f64::consts::PI * radius,
        }
    }

    /// Signed distance to the boundary: positive inside, zero on the boundary,
    /// negative outside.
    pub fn signed_distance(&self, x: [f64; 2]) -> f64 {
        match self.kind {
            DomainKind::Interval { length } => x[0].min(length - x[0]),
            DomainKind::Disk { radius } => radius - (x[0] * x[0] + x[1] * x[1]).sqrt(),
        }
    }

    /// Unit outward normal at a boundary point. Rejects points farther than
    /// [`BOUNDARY_TOL`] from the boundary.
    pub fn outward_normal(&self, x: [f64; 2]) -> Result<[f64; 2]> {
        let d = self.signed_distance(x);
        if d.abs() > BOUNDARY_TOL {
            return Err(Error::Geometry(format!(
                "point is not on the boundary (signed distance {d:.3e})"
            )));
        }
        Ok(self.normal_direction(x))
    }

    /// Direction of -∇δ: defined on the whole domain (toward the nearest wall),
    /// used by the twisted weights.
    pub fn normal_direction(&self, x: [f64; 2]) -> [f64; 2] {
        match self.kind {
            DomainKind::Interval { length } => {
                if x[0] <= length / 2.0 {
                    [-1.0, 0.0]
                } else {
                    [1.0, 0.0]
                }
            }
            DomainKind::Disk { .. } => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                if r == 0.0 {
                    [0.0, 0.0] // center: -grad delta is not defined; weights treat it as zero
                } else {
                    [x[0] / r, x[1] / r]
                }
            }
        }
    }

    /// Boundary quadrature nodes. The interval always yields its two endpoints
    /// with unit weight (counting measure); the disk yields `resolution`
    /// equally spaced nodes whose arc weights sum to the circumference.
    pub fn boundary_quadrature(&self, resolution: usize) -> Result<Vec<BoundaryNode>> {
        if resolution < 1 {
            return Err(Error::Geometry("boundary resolution must be >= 1".into()));
        }
        match self.kind {
            DomainKind::Interval { length } => Ok(vec![
                BoundaryNode {
                    position: [0.0, 0.0],
                    normal: [-1.0, 0.0],
                    weight: 1.0,
                    iota: self.iota.value(0),
                },
                BoundaryNode {
                    position: [length, 0.0],
                    normal: [1.0, 0.0],
                    weight: 1.0,
                    iota: self.iota.value(1),
                },
            ]),
            DomainKind::Disk { radius } => {
                let n = resolution;
                let dtheta = 2.0 * std::f64::consts::PI / n as f64;
                Ok((0..n)
                    .map(|m| {
                        let th = (m as f64 + 0.5) * dtheta;
                        BoundaryNode {
                            position: [radius * th.cos(), radius * th.sin()],
                            normal: [th.cos(), th.sin()],
                            weight: radius * dtheta,
                            iota: self.iota.value(m),
                        }
                    })
                    .collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cdelta(d: &Domain, x: [f64; 2]) -> f64 {
        d.signed_distance(x)
    }

    #[test]
    fn interval_signed_distance() {
        let d = Domain::interval(1.0, Accommodation::Constant(0.5)).unwrap();
        assert_relative_eq!(d.signed_distance([0.3, 0.0]), 0.3);
        assert_relative_eq!(d.signed_distance([0.9, 0.0]), 0.1);
        assert!(d.signed_distance([-0.2, 0.0]) < 0.0);
    }

    #[test]
    fn disk_signed_distance() {
        let d = Domain::disk(1.0, Accommodation::Constant(1.0)).unwrap();
        assert_relative_eq!(d.signed_distance([0.0, 0.0]), 1.0);
        let d2 = Domain::disk(2.0, Accommodation::Constant(1.0)).unwrap();
        assert_relative_eq!(d2.signed_distance([3.0, 0.0]), -1.0);
    }

    #[test]
    fn interval_normals() {
        let d = Domain::interval(1.0, Accommodation::Constant(0.0)).unwrap();
        assert_eq!(d.outward_normal([0.0, 0.0]).unwrap(), [-1.0, 0.0]);
        assert_eq!(d.outward_normal([1.0, 0.0]).unwrap(), [1.0, 0.0]);
        assert!(d.outward_normal([0.5, 0.0]).is_err());
    }

    #[test]
    fn disk_normal_is_radial() {
        let d = Domain::disk(1.0, Accommodation::Constant(0.0)).unwrap();
        let n = d.outward_normal([0.0, 1.0]).unwrap();
        assert_relative_eq!(n[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(n[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn boundary_quadrature_totals() {
        let d = Domain::interval(1.0, Accommodation::Constant(0.5)).unwrap();
        let nodes = d.boundary_quadrature(1).unwrap();
        assert_eq!(nodes.len(), 2);
        let total: f64 = nodes.iter().map(|n| n.weight).sum();
        assert_relative_eq!(total, 2.0);

        let disk = Domain::disk(1.0, Accommodation::Constant(0.5)).unwrap();
        let nodes = disk.boundary_quadrature(64).unwrap();
        let total: f64 = nodes.iter().map(|n| n.weight).sum();
        assert_relative_eq!(total, 2.0 * std::f64::consts::PI, max_relative = 1e-10);
        assert!(nodes.iter().all(|n| (n.iota - 0.5).abs() < 1e-15));
    }

    #[test]
    fn normal_matches_finite_difference_of_delta() {
        // n . grad(delta) = -1 at boundary nodes, central differences
        let h = 1e-6;
        for dom in [
            Domain::interval(1.0, Accommodation::Constant(0.0)).unwrap(),
            Domain::disk(1.5, Accommodation::Constant(0.0)).unwrap(),
        ] {
            for node in dom.boundary_quadrature(16).unwrap() {
                let n = node.normal;
                let x = node.position;
                let dp = cdelta(&dom, [x[0] + h * n[0], x[1] + h * n[1]]);
                let dm = cdelta(&dom, [x[0] - h * n[0], x[1] - h * n[1]]);
                let deriv = (dp - dm) / (2.0 * h);
                assert_relative_eq!(deriv, -1.0, epsilon = 1e-6);
            }
        }
    }
}
