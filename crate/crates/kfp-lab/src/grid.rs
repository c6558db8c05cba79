//! Phase-space grid: tensor discretization of Ω × {|v| ≤ V_max} with quadrature
//! weights, velocity symmetry maps and boundary-face metadata.
//!
//! Layout convention: phase index = spatial_cell * n_velocity + velocity_node.

use crate::error::{Error, Result};
use crate::geometry::{BoundaryNode, Domain, DomainKind};
use crate::weights::Maxwellians;

/// Discrete distribution on a [`PhaseGrid`], stored row-major (space outer,
/// velocity inner).
pub type Field = Vec<f64>;

#[derive(Debug, Clone)]
pub enum VelocityLayout {
    /// symmetric uniform grid, nodes ±(j+1/2)Δv
    Line { nv: usize, dv: f64 },
    /// polar speed × angle grid, speeds (j+1/2)Δr, angles a·Δθ
    Polar { nr: usize, ntheta: usize, dr: f64, dtheta: f64 },
}

#[derive(Debug, Clone)]
pub struct VelocityGrid {
    pub d: usize,
    pub layout: VelocityLayout,
    pub nodes: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub speeds: Vec<f64>,
    /// permutation v → -v
    pub negation: Vec<usize>,
}

impl VelocityGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone)]
pub enum SpatialLayout {
    Line { nx: usize, dx: f64 },
    Polar { nr: usize, ntheta: usize, dr: f64, dtheta: f64 },
}

#[derive(Debug, Clone)]
pub struct SpatialGrid {
    pub layout: SpatialLayout,
    pub centers: Vec<[f64; 2]>,
    pub volumes: Vec<f64>,
    /// signed distance to the wall at each cell center
    pub delta: Vec<f64>,
}

impl SpatialGrid {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// One wall face of the discretization with its reflection metadata.
#[derive(Debug, Clone)]
pub struct WallFace {
    /// adjacent spatial cell
    pub cell: usize,
    pub node: BoundaryNode,
    /// face area used by the scheme (chord length on the disk, 1 on the interval)
    pub area: f64,
    /// n·v per velocity node (bit-identical across walls of equal shape)
    pub n_dot_v: Vec<f64>,
    /// full velocity permutation v ↦ v − 2n(n·v)
    pub specular: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PhaseGrid {
    pub domain: Domain,
    pub space: SpatialGrid,
    pub velocity: VelocityGrid,
    pub vmax: f64,
    /// discrete Maxwellian, renormalized so that Σ w_v μ_h = 1 exactly
    pub mu: Vec<f64>,
    /// discrete wall Maxwellian ℳ_h = μ_h / K with unit discrete half-flux
    pub m_wall: Vec<f64>,
    /// K = Σ_{n·v>0} μ_h (n·v) w_v (node independent)
    pub half_flux: f64,
    pub walls: Vec<WallFace>,
    /// phase quadrature weights w_x ⊗ w_v
    pub weights: Vec<f64>,
}

/// Trace of a field on one wall, split into outgoing/incoming half-spaces.
/// Outgoing values are the adjacent-cell upwind values; incoming values are
/// produced by the Maxwell reflection closure.
#[derive(Debug, Clone)]
pub struct TraceField {
    pub wall: usize,
    /// (velocity node, n·v, value), n·v > 0
    pub outgoing: Vec<(usize, f64, f64)>,
    /// (velocity node, n·v, value), n·v < 0
    pub incoming: Vec<(usize, f64, f64)>,
}

impl PhaseGrid {
    pub fn n_space(&self) -> usize {
        self.space.len()
    }

    pub fn n_velocity(&self) -> usize {
        self.velocity.len()
    }

    pub fn n_phase(&self) -> usize {
        self.space.len() * self.velocity.len()
    }

    #[inline]
    pub fn idx(&self, ix: usize, iv: usize) -> usize {
        ix * self.velocity.len() + iv
    }

    /// Discrete steady state f∞,h = μ_h / |Ω|_h with the discrete volume.
    pub fn f_inf(&self) -> Field {
        let vol: f64 = self.space.volumes.iter().sum();
        let mut f = vec![0.0; self.n_phase()];
        for ix in 0..self.n_space() {
            for iv in 0..self.n_velocity() {
                f[self.idx(ix, iv)] = self.mu[iv] / vol;
            }
        }
        f
    }

    /// Sample a function of (x, v) at the nodes.
    pub fn project(&self, f: impl Fn([f64; 2], [f64; 2]) -> f64) -> Field {
        let mut out = vec![0.0; self.n_phase()];
        for ix in 0..self.n_space() {
            for iv in 0..self.n_velocity() {
                out[self.idx(ix, iv)] = f(self.space.centers[ix], self.velocity.nodes[iv]);
            }
        }
        out
    }

    /// Total mass Σ f w.
    pub fn mass(&self, f: &[f64]) -> f64 {
        crate::linalg::pairwise_sum(
            &f.iter().zip(&self.weights).map(|(a, w)| a * w).collect::<Vec<_>>(),
        )
    }

    /// Largest stable time step for the explicit upwind transport.
    pub fn cfl_limit(&self) -> f64 {
        match (&self.space.layout, &self.velocity.layout) {
            (SpatialLayout::Line { dx, .. }, _) => dx / self.vmax,
            (SpatialLayout::Polar { nr, ntheta, dr, dtheta }, _) => {
                // min over cells of vol / max_v (sum of outflow face areas * (v.n)+)
                let mut limit = f64::INFINITY;
                let half_chord = (dtheta / 2.0).sin();
                for i in 0..*nr {
                    let r_in = i as f64 * dr;
                    let r_out = (i + 1) as f64 * dr;
                    let vol = 0.5 * (r_out * r_out - r_in * r_in) * dtheta.sin();
                    for v in &self.velocity.nodes {
                        let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
                        // worst orientation: all faces outflow at full speed
                        let area = 2.0 * half_chord * (r_in + r_out) + 2.0 * dr;
                        let out = speed * area;
                        if out > 0.0 {
                            limit = limit.min(vol / out);
                        }
                    }
                    let _ = ntheta;
                }
                limit
            }
        }
    }

    /// Trace of `f` on wall `w`: outgoing from the adjacent cell, incoming from
    /// the Maxwell reflection closure.
    pub fn trace(&self, f: &[f64], w: usize) -> TraceField {
        let wall = &self.walls[w];
        let iota = wall.node.iota;
        let mut outgoing = Vec::new();
        let mut incoming = Vec::new();
        let mut outflux = 0.0;
        for iv in 0..self.n_velocity() {
            let ndv = wall.n_dot_v[iv];
            if ndv > 0.0 {
                let val = f[self.idx(wall.cell, iv)];
                outgoing.push((iv, ndv, val));
                outflux += val * ndv * self.velocity.weights[iv];
            }
        }
        for iv in 0..self.n_velocity() {
            let ndv = wall.n_dot_v[iv];
            if ndv < 0.0 {
                let spec = f[self.idx(wall.cell, wall.specular[iv])];
                let diff = self.m_wall[iv] * outflux;
                incoming.push((iv, ndv, (1.0 - iota) * spec + iota * diff));
            }
        }
        TraceField { wall: w, outgoing, incoming }
    }

    /// Grid moment integrals against a wall normal: K₀ = Σ ℳ_h (n·v̂)₊² w,
    /// K₁(m) = Σ ℳ_h m (n·v)₊ w, K₂(m; q) = Σ m^{q/(1-q)} (n·v)₊ w.
    pub fn moment_integrals(&self, w: usize, weight: &[f64], q: f64) -> (f64, f64, f64) {
        let wall = &self.walls[w];
        let mut k0 = 0.0;
        let mut k1 = 0.0;
        let mut k2 = 0.0;
        for iv in 0..self.n_velocity() {
            let ndv = wall.n_dot_v[iv];
            if ndv > 0.0 {
                let wv = self.velocity.weights[iv];
                let vhat2 = ndv * ndv / (1.0 + self.velocity.speeds[iv].powi(2));
                k0 += self.m_wall[iv] * vhat2 * wv;
                k1 += self.m_wall[iv] * weight[iv] * ndv * wv;
                k2 += weight[iv].powf(q / (1.0 - q)) * ndv * wv;
            }
        }
        (k0, k1, k2)
    }
}

/// Uniform symmetric velocity line; node set exactly closed under v → -v.
fn build_velocity_line(nv: usize, vmax: f64) -> VelocityGrid {
    let dv = 2.0 * vmax / nv as f64;
    let mut nodes = Vec::with_capacity(nv);
    let mut speeds = Vec::with_capacity(nv);
    for j in 0..nv {
        let v = -vmax + (j as f64 + 0.5) * dv;
        nodes.push([v, 0.0]);
        speeds.push(v.abs());
    }
    let negation = (0..nv).map(|j| nv - 1 - j).collect();
    VelocityGrid {
        d: 1,
        layout: VelocityLayout::Line { nv, dv },
        weights: vec![dv; nv],
        nodes,
        speeds,
        negation,
    }
}

/// Polar velocity grid with angles a·Δθ; the angular count matches the spatial
/// one so that specular reflection is an index permutation at every wall.
fn build_velocity_polar(nr: usize, ntheta: usize, vmax: f64) -> VelocityGrid {
    let dr = vmax / nr as f64;
    let dtheta = 2.0 * std::f64::consts::PI / ntheta as f64;
    let mut nodes = Vec::with_capacity(nr * ntheta);
    let mut weights = Vec::with_capacity(nr * ntheta);
    let mut speeds = Vec::with_capacity(nr * ntheta);
    for j in 0..nr {
        let r = (j as f64 + 0.5) * dr;
        for a in 0..ntheta {
            let th = a as f64 * dtheta;
            nodes.push([r * th.cos(), r * th.sin()]);
            weights.push(r * dr * dtheta);
            speeds.push(r);
        }
    }
    let negation = (0..nr * ntheta)
        .map(|i| {
            let (j, a) = (i / ntheta, i % ntheta);
            j * ntheta + (a + ntheta / 2) % ntheta
        })
        .collect();
    VelocityGrid {
        d: 2,
        layout: VelocityLayout::Polar { nr, ntheta, dr, dtheta },
        nodes,
        weights,
        speeds,
        negation,
    }
}

fn renormalized_maxwellian(vg: &VelocityGrid) -> Vec<f64> {
    let m = Maxwellians::new(vg.d);
    let raw: Vec<f64> = vg.speeds.iter().map(|&r| m.full(r)).collect();
    let total: f64 = raw.iter().zip(&vg.weights).map(|(a, w)| a * w).sum();
    raw.iter().map(|a| a / total).collect()
}

/// Build the phase grid for the interval domain.
pub fn build_grid(domain: &Domain, nx: usize, nv: usize, vmax: f64) -> Result<PhaseGrid> {
    if nx < 4 || nv < 4 {
        return Err(Error::Grid("nx and nv must be at least 4".into()));
    }
    if vmax < 4.0 {
        return Err(Error::Grid("velocity truncation radius must be at least 4".into()));
    }
    match domain.kind {
        DomainKind::Interval { length } => build_interval_grid(domain, length, nx, nv, vmax),
        DomainKind::Disk { .. } => {
            // matched angular counts: ntheta = nv angular nodes, nv radial nodes
            build_disk_grid(domain, nx, 2 * nv, nv, vmax)
        }
    }
}

fn build_interval_grid(
    domain: &Domain,
    length: f64,
    nx: usize,
    nv: usize,
    vmax: f64,
) -> Result<PhaseGrid> {
    if nv % 2 != 0 {
        return Err(Error::Grid("nv must be even for the symmetric velocity line".into()));
    }
    let dx = length / nx as f64;
    let velocity = build_velocity_line(nv, vmax);
    let centers: Vec<[f64; 2]> = (0..nx).map(|i| [(i as f64 + 0.5) * dx, 0.0]).collect();
    let delta = centers.iter().map(|&c| domain.signed_distance(c)).collect();
    let space = SpatialGrid {
        layout: SpatialLayout::Line { nx, dx },
        volumes: vec![dx; nx],
        centers,
        delta,
    };
    let mu = renormalized_maxwellian(&velocity);

    let bnodes = domain.boundary_quadrature(1)?;
    let mut walls = Vec::new();
    for (w, node) in bnodes.into_iter().enumerate() {
        let cell = if w == 0 { 0 } else { nx - 1 };
        let n_dot_v: Vec<f64> =
            velocity.nodes.iter().map(|v| node.normal[0] * v[0] + node.normal[1] * v[1]).collect();
        walls.push(WallFace {
            cell,
            area: 1.0,
            n_dot_v,
            specular: velocity.negation.clone(),
            node,
        });
    }
    finish_grid(domain.clone(), space, velocity, vmax, mu, walls)
}

/// Build the disk phase grid: `nr_x` radial cells, `ntheta` angular cells (even),
/// `nr_v` velocity speed shells, velocity angular count = `ntheta`.
pub fn build_disk_grid(
    domain: &Domain,
    nr_x: usize,
    ntheta: usize,
    nr_v: usize,
    vmax: f64,
) -> Result<PhaseGrid> {
    let radius = match domain.kind {
        DomainKind::Disk { radius } => radius,
        _ => return Err(Error::Grid("disk grid requested for a non-disk domain".into())),
    };
    if nr_x < 2 || nr_v < 2 || ntheta < 4 {
        return Err(Error::Grid("disk grid needs nr >= 2 and ntheta >= 4".into()));
    }
    if ntheta % 2 != 0 {
        return Err(Error::Grid(
            "angular count must be even (specular reflection must permute nodes)".into(),
        ));
    }
    if vmax < 4.0 {
        return Err(Error::Grid("velocity truncation radius must be at least 4".into()));
    }
    let dr = radius / nr_x as f64;
    let dtheta = 2.0 * std::f64::consts::PI / ntheta as f64;
    let velocity = build_velocity_polar(nr_v, ntheta, vmax);
    let mu = renormalized_maxwellian(&velocity);

    let mut centers = Vec::with_capacity(nr_x * ntheta);
    let mut volumes = Vec::with_capacity(nr_x * ntheta);
    let mut delta = Vec::with_capacity(nr_x * ntheta);
    for i in 0..nr_x {
        let r_in = i as f64 * dr;
        let r_out = (i + 1) as f64 * dr;
        let rc = 0.5 * (r_in + r_out);
        // polygonal cell: chords at the arcs make the flux closure exact
        let vol = 0.5 * (r_out * r_out - r_in * r_in) * dtheta.sin();
        for m in 0..ntheta {
            let th = (m as f64 + 0.5) * dtheta;
            centers.push([rc * th.cos(), rc * th.sin()]);
            volumes.push(vol);
            delta.push(radius - rc);
        }
    }
    let space = SpatialGrid {
        layout: SpatialLayout::Polar { nr: nr_x, ntheta, dr, dtheta },
        centers,
        volumes,
        delta,
    };

    // relative-angle table: n·v for wall direction m uses cos((a - m - 1/2)Δθ),
    // identical entries across walls so reflection sums agree bitwise
    let nr_shells = match velocity.layout {
        VelocityLayout::Polar { nr, .. } => nr,
        _ => unreachable!(),
    };
    let cos_rel: Vec<f64> =
        (0..ntheta).map(|k| ((k as f64 - 0.5) * dtheta).cos()).collect();

    let bnodes = domain.boundary_quadrature(ntheta)?;
    let mut walls = Vec::new();
    let chord = 2.0 * radius * (dtheta / 2.0).sin();
    for (m, node) in bnodes.into_iter().enumerate() {
        let cell = (nr_x - 1) * ntheta + m;
        let mut n_dot_v = vec![0.0; velocity.len()];
        let mut specular = vec![0usize; velocity.len()];
        for j in 0..nr_shells {
            let speed = velocity.speeds[j * ntheta];
            for a in 0..ntheta {
                let iv = j * ntheta + a;
                let k = (a + ntheta - m) % ntheta;
                n_dot_v[iv] = speed * cos_rel[k];
                // angle reflection: a' = 2m + 1 - a + ntheta/2 (mod ntheta)
                let ap = (2 * m + 1 + ntheta + ntheta / 2 - a) % ntheta;
                specular[iv] = j * ntheta + ap;
            }
        }
        walls.push(WallFace { cell, area: chord, n_dot_v, specular, node });
    }
    finish_grid(domain.clone(), space, velocity, vmax, mu, walls)
}

fn finish_grid(
    domain: Domain,
    space: SpatialGrid,
    velocity: VelocityGrid,
    vmax: f64,
    mu: Vec<f64>,
    walls: Vec<WallFace>,
) -> Result<PhaseGrid> {
    // discrete wall Maxwellian: half-flux exactly one at every wall
    let wall0 = &walls[0];
    let mut k = 0.0;
    for iv in 0..velocity.len() {
        let ndv = wall0.n_dot_v[iv];
        if ndv > 0.0 {
            k += mu[iv] * ndv * velocity.weights[iv];
        }
    }
    let m_wall: Vec<f64> = mu.iter().map(|m| m / k).collect();
    // the polar construction uses a shared relative-angle table, so the flux
    // is identical at every wall; check it anyway
    for wface in &walls {
        let mut kw = 0.0;
        for iv in 0..velocity.len() {
            let ndv = wface.n_dot_v[iv];
            if ndv > 0.0 {
                kw += mu[iv] * ndv * velocity.weights[iv];
            }
        }
        if (kw - k).abs() > 1e-14 * k {
            return Err(Error::Grid("wall half-flux is not node independent".into()));
        }
    }
    let mut weights = Vec::with_capacity(space.len() * velocity.len());
    for vol in &space.volumes {
        for wv in &velocity.weights {
            weights.push(vol * wv);
        }
    }
    Ok(PhaseGrid { domain, space, velocity, vmax, mu, m_wall, half_flux: k, walls, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Accommodation;
    use approx::assert_relative_eq;

    fn interval_grid(nx: usize, nv: usize) -> PhaseGrid {
        let dom = Domain::interval(1.0, Accommodation::Constant(0.5)).unwrap();
        build_grid(&dom, nx, nv, 6.0).unwrap()
    }

    #[test]
    fn velocity_line_closed_under_negation() {
        let g = interval_grid(8, 16);
        for (j, &nj) in g.velocity.negation.iter().enumerate() {
            assert_relative_eq!(g.velocity.nodes[j][0], -g.velocity.nodes[nj][0]);
        }
    }

    #[test]
    fn discrete_maxwellian_unit_mass() {
        let g = interval_grid(8, 16);
        let total: f64 =
            g.mu.iter().zip(&g.velocity.weights).map(|(m, w)| m * w).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-15);
        // half-flux of the discrete wall Maxwellian is exactly one
        for w in 0..2 {
            let mut flux = 0.0;
            for iv in 0..g.n_velocity() {
                let ndv = g.walls[w].n_dot_v[iv];
                if ndv > 0.0 {
                    flux += g.m_wall[iv] * ndv * g.velocity.weights[iv];
                }
            }
            assert_relative_eq!(flux, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn disk_specular_is_a_permutation() {
        let dom = Domain::disk(1.0, Accommodation::Constant(0.0)).unwrap();
        let g = build_disk_grid(&dom, 4, 32, 6, 6.0).unwrap();
        for wall in &g.walls {
            let mut seen = vec![false; g.n_velocity()];
            for iv in 0..g.n_velocity() {
                let s = wall.specular[iv];
                assert!(!seen[s]);
                seen[s] = true;
                // the reflected node is v - 2n(n.v) exactly
                let v = g.velocity.nodes[iv];
                let n = wall.node.normal;
                let ndv = n[0] * v[0] + n[1] * v[1];
                let refl = [v[0] - 2.0 * n[0] * ndv, v[1] - 2.0 * n[1] * ndv];
                let got = g.velocity.nodes[s];
                assert_relative_eq!(got[0], refl[0], epsilon = 1e-12);
                assert_relative_eq!(got[1], refl[1], epsilon = 1e-12);
                // n.v flips sign
                assert_relative_eq!(
                    wall.n_dot_v[s],
                    -wall.n_dot_v[iv],
                    epsilon = 1e-13
                );
                // quadrature weight preserved (same speed shell)
                assert_relative_eq!(g.velocity.weights[s], g.velocity.weights[iv]);
            }
        }
    }

    #[test]
    fn disk_rejects_odd_angular_count() {
        let dom = Domain::disk(1.0, Accommodation::Constant(0.0)).unwrap();
        assert!(build_disk_grid(&dom, 4, 31, 6, 6.0).is_err());
    }

    #[test]
    fn grid_preconditions() {
        let dom = Domain::interval(1.0, Accommodation::Constant(0.5)).unwrap();
        assert!(build_grid(&dom, 2, 16, 6.0).is_err());
        assert!(build_grid(&dom, 16, 16, 2.0).is_err());
    }

    #[test]
    fn interval_cfl_limit() {
        let g = interval_grid(10, 8);
        assert_relative_eq!(g.cfl_limit(), 0.1 / 6.0);
    }

    #[test]
    fn f_inf_has_unit_mass() {
        let g = interval_grid(12, 16);
        assert_relative_eq!(g.mass(&g.f_inf()), 1.0, epsilon = 1e-14);
        let dom = Domain::disk(1.0, Accommodation::Constant(1.0)).unwrap();
        let gd = build_disk_grid(&dom, 4, 16, 6, 6.0).unwrap();
        assert_relative_eq!(gd.mass(&gd.f_inf()), 1.0, epsilon = 1e-13);
    }
}
