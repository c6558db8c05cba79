//! Hypocoercivity machinery: the mean-zero Neumann Poisson solver, macroscopic
//! decomposition, twisted scalar product, Dirichlet form and a numerical
//! coercivity certificate for the generator on the mass-zero subspace.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::moments;
use crate::grid::{Field, PhaseGrid, SpatialLayout};
use crate::linalg::generalized_symmetric_eigenvalues;
use crate::operators::Generator;

/// Solution of -Δu = η₁ + div η₂ with n·(∇u − η₂) = 0 and ⟨u⟩ = 0.
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub u: Vec<f64>,
    /// cell-centered gradient
    pub grad: Vec<[f64; 2]>,
    /// n·∇u at each wall face (equals n·η₂ by the flux closure)
    pub boundary_normal_grad: Vec<f64>,
}

/// Factored mean-zero Neumann solver on the spatial grid.
pub struct PoissonSolver {
    n: usize,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    faces: Vec<FaceGeom>,
    volumes: Vec<f64>,
    layout: SpatialLayout,
}

#[derive(Debug, Clone, Copy)]
struct FaceGeom {
    lo: usize,
    hi: usize,
    area: f64,
    dist: f64,
    normal: [f64; 2],
}

fn spatial_faces(grid: &PhaseGrid) -> Vec<FaceGeom> {
    match grid.space.layout {
        SpatialLayout::Line { nx, dx } => (0..nx - 1)
            .map(|i| FaceGeom { lo: i, hi: i + 1, area: 1.0, dist: dx, normal: [1.0, 0.0] })
            .collect(),
        SpatialLayout::Polar { nr, ntheta, dr, dtheta } => {
            let mut faces = Vec::new();
            let half_chord = (dtheta / 2.0).sin();
            for i in 0..nr {
                for m in 0..ntheta {
                    let c = i * ntheta + m;
                    let th_c = (m as f64 + 0.5) * dtheta;
                    if i + 1 < nr {
                        faces.push(FaceGeom {
                            lo: c,
                            hi: (i + 1) * ntheta + m,
                            area: 2.0 * (i + 1) as f64 * dr * half_chord,
                            dist: dr,
                            normal: [th_c.cos(), th_c.sin()],
                        });
                    }
                    let th_f = (m as f64 + 1.0) * dtheta;
                    let rc = (i as f64 + 0.5) * dr;
                    faces.push(FaceGeom {
                        lo: c,
                        hi: i * ntheta + (m + 1) % ntheta,
                        area: dr,
                        dist: rc * dtheta,
                        normal: [-th_f.sin(), th_f.cos()],
                    });
                }
            }
            faces
        }
    }
}

impl PoissonSolver {
    pub fn new(grid: &PhaseGrid) -> Result<Self> {
        let n = grid.n_space();
        if n > 4096 {
            return Err(Error::Precondition(
                "dense Poisson factorization limited to 4096 spatial cells".into(),
            ));
        }
        let faces = spatial_faces(grid);
        // bordered system: [K, w; w^T, 0] for the mean-zero constraint
        let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
        for f in &faces {
            let c = f.area / f.dist;
            a[(f.lo, f.lo)] += c;
            a[(f.hi, f.hi)] += c;
            a[(f.lo, f.hi)] -= c;
            a[(f.hi, f.lo)] -= c;
        }
        for i in 0..n {
            a[(i, n)] = grid.space.volumes[i];
            a[(n, i)] = grid.space.volumes[i];
        }
        Ok(Self {
            n,
            lu: a.lu(),
            faces,
            volumes: grid.space.volumes.clone(),
            layout: grid.space.layout.clone(),
        })
    }

    /// Solve with volumetric source η₁ (compatibility: ∫η₁ = 0) and flux source η₂.
    pub fn solve(&self, eta1: Option<&[f64]>, eta2: Option<&[[f64; 2]]>) -> Result<PoissonSolution> {
        let n = self.n;
        let mut b = DVector::<f64>::zeros(n + 1);
        if let Some(e1) = eta1 {
            let total: f64 = e1.iter().zip(&self.volumes).map(|(a, v)| a * v).sum();
            let scale: f64 = e1.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-30);
            if total.abs() > 1e-8 * scale {
                return Err(Error::Precondition(format!(
                    "Poisson compatibility violated: mean source {total:.3e}"
                )));
            }
            for i in 0..n {
                b[i] = e1[i] * self.volumes[i];
            }
        }
        if let Some(e2) = eta2 {
            for f in &self.faces {
                let avg = [
                    0.5 * (e2[f.lo][0] + e2[f.hi][0]),
                    0.5 * (e2[f.lo][1] + e2[f.hi][1]),
                ];
                let g2 = avg[0] * f.normal[0] + avg[1] * f.normal[1];
                // -∫ ∇w·η₂ contributes ∓ g2·area to the two adjacent rows
                b[f.lo] += g2 * f.area;
                b[f.hi] -= g2 * f.area;
            }
        }
        let sol = self
            .lu
            .solve(&b)
            .ok_or_else(|| Error::Linalg("Poisson system is singular".into()))?;
        let u: Vec<f64> = sol.as_slice()[..n].to_vec();
        Ok(self.reconstruct(u, eta2))
    }

    fn reconstruct(&self, u: Vec<f64>, eta2: Option<&[[f64; 2]]>) -> PoissonSolution {
        let n = self.n;
        // least-squares cell gradients from face normal-derivatives
        let mut at_a = vec![[0.0f64; 4]; n]; // row-major 2x2
        let mut at_b = vec![[0.0f64; 2]; n];
        let mut push = |cell: usize, nrm: [f64; 2], d: f64, w: f64| {
            at_a[cell][0] += w * nrm[0] * nrm[0];
            at_a[cell][1] += w * nrm[0] * nrm[1];
            at_a[cell][2] += w * nrm[1] * nrm[0];
            at_a[cell][3] += w * nrm[1] * nrm[1];
            at_b[cell][0] += w * d * nrm[0];
            at_b[cell][1] += w * d * nrm[1];
        };
        for f in &self.faces {
            let d = (u[f.hi] - u[f.lo]) / f.dist;
            push(f.lo, f.normal, d, f.area);
            push(f.hi, f.normal, d, f.area);
        }
        // wall faces: the normal derivative is pinned by the Neumann closure
        let boundary_normal_grad = match self.layout {
            SpatialLayout::Line { nx, .. } => {
                let walls = [(0usize, [-1.0, 0.0]), (nx - 1, [1.0, 0.0])];
                let mut out = Vec::with_capacity(2);
                for (cell, nrm) in walls {
                    let d = eta2.map(|e| e[cell][0] * nrm[0] + e[cell][1] * nrm[1]).unwrap_or(0.0);
                    push(cell, nrm, d, 1.0);
                    out.push(d);
                }
                out
            }
            SpatialLayout::Polar { nr, ntheta, dr, dtheta } => {
                let half_chord = (dtheta / 2.0).sin();
                let area = 2.0 * nr as f64 * dr * half_chord;
                let mut out = Vec::with_capacity(ntheta);
                for m in 0..ntheta {
                    let cell = (nr - 1) * ntheta + m;
                    let th = (m as f64 + 0.5) * dtheta;
                    let nrm = [th.cos(), th.sin()];
                    let d = eta2.map(|e| e[cell][0] * nrm[0] + e[cell][1] * nrm[1]).unwrap_or(0.0);
                    push(cell, nrm, d, area);
                    out.push(d);
                }
                out
            }
        };
        let mut grad = vec![[0.0; 2]; n];
        for i in 0..n {
            let [a, b, c, d] = at_a[i];
            let det = a * d - b * c;
            if det.abs() > 1e-300 {
                grad[i] = [
                    (d * at_b[i][0] - b * at_b[i][1]) / det,
                    (-c * at_b[i][0] + a * at_b[i][1]) / det,
                ];
            } else {
                // 1-D line: only the x-component is determined
                grad[i] = [at_b[i][0] / a, 0.0];
            }
        }
        PoissonSolution { u, grad, boundary_normal_grad }
    }
}

// ---------------------------------------------------------------------------
// Macroscopic decomposition
// ---------------------------------------------------------------------------

/// f = πf + f⊥ with πf = ρ_f(x) μ_h(v); the perpendicular part has exactly
/// zero velocity average per cell.
pub fn macro_decompose(grid: &PhaseGrid, f: &[f64]) -> (Field, Field) {
    let nv = grid.n_velocity();
    let m = moments(grid, f);
    let mut pi = vec![0.0; f.len()];
    let mut perp = vec![0.0; f.len()];
    for ix in 0..grid.n_space() {
        for iv in 0..nv {
            let i = grid.idx(ix, iv);
            pi[i] = m.rho[ix] * grid.mu[iv];
            perp[i] = f[i] - pi[i];
        }
    }
    (pi, perp)
}

/// ‖f‖_ℋ² = Σ f² μ_h⁻¹ w.
pub fn h_norm_sq(grid: &PhaseGrid, f: &[f64]) -> f64 {
    let nv = grid.n_velocity();
    let terms: Vec<f64> =
        (0..f.len()).map(|i| f[i] * f[i] / grid.mu[i % nv] * grid.weights[i]).collect();
    crate::linalg::pairwise_sum(&terms)
}

fn h_inner(grid: &PhaseGrid, f: &[f64], g: &[f64]) -> f64 {
    let nv = grid.n_velocity();
    let terms: Vec<f64> =
        (0..f.len()).map(|i| f[i] * g[i] / grid.mu[i % nv] * grid.weights[i]).collect();
    crate::linalg::pairwise_sum(&terms)
}

// ---------------------------------------------------------------------------
// Twisted product and Dirichlet form
// ---------------------------------------------------------------------------

/// The twisted scalar product ((f,g)) = (f,g)_ℋ + ε(∇u_{ρf}, j_g) + ε(∇u_{ρg}, j_f).
pub struct TwistedProduct<'g> {
    pub grid: &'g PhaseGrid,
    pub eps: f64,
    solver: PoissonSolver,
}

impl<'g> TwistedProduct<'g> {
    pub fn new(grid: &'g PhaseGrid, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::Precondition("twisted product needs eps in [0, 1)".into()));
        }
        Ok(Self { grid, eps, solver: PoissonSolver::new(grid)? })
    }

    /// ∇(-Δ)⁻¹ of the mean-removed density of f.
    fn grad_potential(&self, f: &[f64]) -> Result<Vec<[f64; 2]>> {
        let m = moments(self.grid, f);
        let total: f64 =
            m.rho.iter().zip(&self.grid.space.volumes).map(|(r, v)| r * v).sum();
        let vol: f64 = self.grid.space.volumes.iter().sum();
        let mean = total / vol;
        let rho0: Vec<f64> = m.rho.iter().map(|r| r - mean).collect();
        Ok(self.solver.solve(Some(&rho0), None)?.grad)
    }

    fn cross(&self, grad_u: &[[f64; 2]], j: &[[f64; 2]]) -> f64 {
        let terms: Vec<f64> = (0..grad_u.len())
            .map(|x| {
                (grad_u[x][0] * j[x][0] + grad_u[x][1] * j[x][1]) * self.grid.space.volumes[x]
            })
            .collect();
        crate::linalg::pairwise_sum(&terms)
    }

    pub fn product(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        let base = h_inner(self.grid, f, g);
        let gu_f = self.grad_potential(f)?;
        let gu_g = self.grad_potential(g)?;
        let jf = moments(self.grid, f).j;
        let jg = moments(self.grid, g).j;
        Ok(base + self.eps * (self.cross(&gu_f, &jg) + self.cross(&gu_g, &jf)))
    }

    pub fn norm_sq(&self, f: &[f64]) -> Result<f64> {
        self.product(f, f)
    }
}

/// Components of the Dirichlet form D[f] = ((-Lf, f)).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DirichletForm {
    /// (-Lf, f)_ℋ
    pub d1: f64,
    /// -ε (∇u_{ρf}, j[Lf])
    pub d2: f64,
    /// -ε (∇u_{ρ[Lf]}, j_f)
    pub d3: f64,
    pub total: f64,
}

pub fn dirichlet_form(
    gen: &Generator,
    tp: &TwistedProduct<'_>,
    f: &[f64],
) -> Result<DirichletForm> {
    let grid = &gen.grid;
    let lf = gen.full.mul_vec(f);
    let d1 = -h_inner(grid, &lf, f);
    let gu_f = tp.grad_potential(f)?;
    let j_lf = moments(grid, &lf).j;
    let d2 = -tp.eps * tp.cross(&gu_f, &j_lf);
    let gu_lf = tp.grad_potential(&lf)?;
    let j_f = moments(grid, f).j;
    let d3 = -tp.eps * tp.cross(&gu_lf, &j_f);
    Ok(DirichletForm { d1, d2, d3, total: d1 + d2 + d3 })
}

/// Boundary trace term ‖√(ι(2-ι)) D^⊥ γ₊ f‖² in the outgoing half-space
/// product with weight μ_h⁻¹ (n·v) per wall node.
pub fn boundary_microscopic_term(grid: &PhaseGrid, f: &[f64]) -> f64 {
    let mut total = 0.0;
    for w in 0..grid.walls.len() {
        let wall = &grid.walls[w];
        let iota = wall.node.iota;
        let tr = grid.trace(f, w);
        let mut outflux = 0.0;
        for &(iv, ndv, val) in &tr.outgoing {
            outflux += val * ndv * grid.velocity.weights[iv];
        }
        let mut acc = 0.0;
        for &(iv, ndv, val) in &tr.outgoing {
            let dperp = val - grid.m_wall[iv] * outflux;
            acc += dperp * dperp / grid.mu[iv] * ndv * grid.velocity.weights[iv];
        }
        total += iota * (2.0 - iota) * acc * wall.node.weight;
    }
    total
}

// ---------------------------------------------------------------------------
// Coercivity certificate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CertificateEntry {
    pub eps: f64,
    /// smallest pencil eigenvalue on the mass-zero subspace; None when the
    /// twisted Gram matrix is not positive definite at this eps
    pub lambda_h: Option<f64>,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoercivityCertificate {
    pub entries: Vec<CertificateEntry>,
    pub best_eps: f64,
    pub best_lambda: f64,
    pub nx: usize,
    pub nv: usize,
}

/// Dense twisted Gram matrix G with fᵀGg = ((f,g)).
pub fn twisted_gram_dense(grid: &PhaseGrid, eps: f64) -> Result<DMatrix<f64>> {
    let n = grid.n_phase();
    if n > 5000 {
        return Err(Error::Precondition(
            "dense certificate path limited to 5000 phase nodes".into(),
        ));
    }
    let nx = grid.n_space();
    let nv = grid.n_velocity();
    let solver = PoissonSolver::new(grid)?;
    // P: unit mean-removed density -> cell gradient (2nx x nx)
    let mut pg = DMatrix::<f64>::zeros(2 * nx, nx);
    let vol: f64 = grid.space.volumes.iter().sum();
    for k in 0..nx {
        let mut e = vec![0.0; nx];
        let mean = grid.space.volumes[k] / vol;
        for (i, ei) in e.iter_mut().enumerate() {
            *ei = if i == k { 1.0 - mean } else { -mean };
        }
        let sol = solver.solve(Some(&e), None)?;
        for x in 0..nx {
            pg[(x, k)] = sol.grad[x][0];
            pg[(nx + x, k)] = sol.grad[x][1];
        }
    }
    // R (nx x n): density; J (2nx x n): momentum components
    let mut r = DMatrix::<f64>::zeros(nx, n);
    let mut j = DMatrix::<f64>::zeros(2 * nx, n);
    for ix in 0..nx {
        for iv in 0..nv {
            let col = ix * nv + iv;
            let wv = grid.velocity.weights[iv];
            r[(ix, col)] = wv;
            j[(ix, col)] = wv * grid.velocity.nodes[iv][0];
            j[(nx + ix, col)] = wv * grid.velocity.nodes[iv][1];
        }
    }
    // B = Rᵀ Pᵀ W_x J with the volume weights on both gradient components
    let mut wx2 = DMatrix::<f64>::zeros(2 * nx, 2 * nx);
    for x in 0..nx {
        wx2[(x, x)] = grid.space.volumes[x];
        wx2[(nx + x, nx + x)] = grid.space.volumes[x];
    }
    let b = r.transpose() * pg.transpose() * wx2 * j;
    let mut g = b.clone() + b.transpose();
    g *= eps;
    for ix in 0..nx {
        for iv in 0..nv {
            let i = ix * nv + iv;
            g[(i, i)] += grid.weights[i] / grid.mu[iv];
        }
    }
    Ok(g)
}

/// Scan ε over {2⁻¹, ..., 2⁻⁸} and return λ_h(ε) with the norm-equivalence
/// constants; the certificate reports the ε maximizing λ_h.
pub fn coercivity_certificate(gen: &Generator, eps_list: &[f64]) -> Result<CoercivityCertificate> {
    let grid = &gen.grid;
    let n = grid.n_phase();
    if n > 5000 {
        return Err(Error::Precondition(
            "dense certificate path limited to 5000 phase nodes; use a smaller grid".into(),
        ));
    }
    let l = gen.full.to_dense();
    let nv = grid.n_velocity();

    // Householder basis of the mass-zero subspace {w·f = 0}
    let w = DVector::from_column_slice(&grid.weights);
    let c = &w / w.norm();
    let mut u = c.clone();
    u[0] -= 1.0;
    let un = u.norm();
    let q = if un < 1e-14 {
        DMatrix::identity(n, n).columns(1, n - 1).into_owned()
    } else {
        let u = u / un;
        let h = DMatrix::identity(n, n) - 2.0 * &u * u.transpose();
        h.columns(1, n - 1).into_owned()
    };

    let mut entries = Vec::new();
    for &eps in eps_list {
        let g = twisted_gram_dense(grid, eps)?;
        // norm equivalence against the H Gram (diagonal)
        let mut hs = vec![0.0; n];
        for i in 0..n {
            hs[i] = (grid.weights[i] / grid.mu[i % nv]).sqrt();
        }
        let mut m = g.clone();
        for r in 0..n {
            for cc in 0..n {
                m[(r, cc)] /= hs[r] * hs[cc];
            }
        }
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (c1sq, c2sq) = (ev[0], ev[n - 1]);
        if c1sq <= 0.0 {
            entries.push(CertificateEntry { eps, lambda_h: None, c1: 0.0, c2: c2sq.max(0.0).sqrt() });
            continue;
        }
        let s = -0.5 * (&g * &l + l.transpose() * &g);
        let gq = q.transpose() * &g * &q;
        let sq = q.transpose() * s * &q;
        match generalized_symmetric_eigenvalues(&sq, &gq) {
            Ok(evals) => entries.push(CertificateEntry {
                eps,
                lambda_h: Some(evals[0]),
                c1: c1sq.sqrt(),
                c2: c2sq.sqrt(),
            }),
            Err(_) => {
                entries.push(CertificateEntry { eps, lambda_h: None, c1: c1sq.sqrt(), c2: c2sq.sqrt() })
            }
        }
    }
    let best = entries
        .iter()
        .filter_map(|e| e.lambda_h.map(|l| (e.eps, l)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .ok_or(Error::EigenNoConvergence { residual: f64::NAN })?;
    Ok(CoercivityCertificate {
        entries,
        best_eps: best.0,
        best_lambda: best.1,
        nx: grid.n_space(),
        nv: grid.n_velocity(),
    })
}

/// Default ε scan {2⁻¹, ..., 2⁻⁸}.
pub fn default_eps_scan() -> Vec<f64> {
    (1..=8).map(|k| 2f64.powi(-k)).collect()
}
