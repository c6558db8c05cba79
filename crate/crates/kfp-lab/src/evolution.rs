//! Time integration: IMEX and θ-implicit steppers, dense exponential for tiny
//! systems, forward and dual trajectories, absorbed-semigroup decay fits and
//! the Duhamel reconstruction experiment.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::functionals::{fit_rate, RateFit};
use crate::grid::{Field, PhaseGrid, SpatialLayout, VelocityLayout};
use crate::linalg::{expm, Tridiag};
use crate::operators::Generator;
use crate::sparse::CsrMatrix;

/// Time integration scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    /// implicit backward-Euler collision solve + explicit upwind transport;
    /// requires dt within the CFL limit
    Imex,
    /// Strang split: implicit half collision, θ-implicit transport, implicit
    /// half collision; unconditionally stable, θ = 1 is backward Euler
    ThetaImplicit { theta: f64 },
    /// exact one-step exponential of the assembled generator (tiny systems)
    DenseExponential,
}

#[derive(Debug, Clone, Copy)]
pub struct Stepper {
    pub scheme: Scheme,
    pub dt: f64,
}

/// CFL usage report attached to trajectories.
#[derive(Debug, Clone, Copy)]
pub struct CflReport {
    pub dt: f64,
    pub limit: f64,
}

/// Largest state dimension the dense-exponential stepper accepts.
pub const DENSE_EXP_MAX_DIM: usize = 20_000;

/// A norm probe recorded along a trajectory: ‖(f − shift·f∞) ω‖_p on the grid.
#[derive(Debug, Clone)]
pub struct Probe {
    pub label: String,
    pub p: f64,
    /// weight values per velocity node
    pub weight: Vec<f64>,
    /// subtract mass(f0) · f∞ before taking the norm
    pub centered: bool,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub min_value: Vec<f64>,
    pub probe_labels: Vec<String>,
    pub probes: Vec<Vec<f64>>,
    pub snapshots: Vec<(f64, Field)>,
    pub cfl: CflReport,
}

impl Trajectory {
    pub fn probe_series(&self, label: &str) -> Option<(&[f64], &[f64])> {
        let k = self.probe_labels.iter().position(|l| l == label)?;
        Some((&self.times, &self.probes[k]))
    }
}

// ---------------------------------------------------------------------------
// Collision solve machinery
// ---------------------------------------------------------------------------

enum CollisionFactor {
    /// 1-D velocity line: Thomas factorization of (I − dt(C − absorb))
    Line(Tridiag),
    /// polar velocity grid: dense LU of the velocity block
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl CollisionFactor {
    fn factor(grid: &PhaseGrid, cv: &CsrMatrix, absorb: Option<&[f64]>, dt: f64) -> Result<Self> {
        let nv = grid.n_velocity();
        match grid.velocity.layout {
            VelocityLayout::Line { .. } => {
                let mut lower = vec![0.0; nv - 1];
                let mut diag = vec![0.0; nv];
                let mut upper = vec![0.0; nv - 1];
                for r in 0..nv {
                    for (c, v) in cv.row(r) {
                        let m = -dt * v;
                        if c == r {
                            diag[r] += m;
                        } else if c == r + 1 {
                            upper[r] += m;
                        } else if c + 1 == r {
                            lower[c] += m;
                        } else {
                            return Err(Error::Linalg(
                                "collision matrix is not tridiagonal on the velocity line".into(),
                            ));
                        }
                    }
                    diag[r] += 1.0;
                    if let Some(a) = absorb {
                        diag[r] += dt * a[r];
                    }
                }
                Ok(CollisionFactor::Line(Tridiag::factor(&lower, &diag, &upper)?))
            }
            VelocityLayout::Polar { .. } => {
                let mut m = DMatrix::<f64>::zeros(nv, nv);
                for r in 0..nv {
                    for (c, v) in cv.row(r) {
                        m[(r, c)] -= dt * v;
                    }
                    m[(r, r)] += 1.0;
                    if let Some(a) = absorb {
                        m[(r, r)] += dt * a[r];
                    }
                }
                Ok(CollisionFactor::Dense(m.lu()))
            }
        }
    }

    fn solve_block(&self, block: &mut [f64]) {
        match self {
            CollisionFactor::Line(t) => t.solve_in_place(block),
            CollisionFactor::Dense(lu) => {
                let mut b = nalgebra::DVector::from_column_slice(block);
                assert!(lu.solve_mut(&mut b), "collision solve failed");
                block.copy_from_slice(b.as_slice());
            }
        }
    }

    fn solve_field(&self, grid: &PhaseGrid, f: &mut [f64]) {
        let nv = grid.n_velocity();
        for chunk in f.chunks_mut(nv) {
            self.solve_block(chunk);
        }
    }
}

// ---------------------------------------------------------------------------
// Propagator
// ---------------------------------------------------------------------------

/// One-step propagator for a (possibly dual, possibly absorbed) generator.
pub struct Propagator<'a> {
    gen: &'a Generator,
    stepper: Stepper,
    collision: Option<CollisionFactor>,
    half_collision: Option<CollisionFactor>,
    exp_full: Option<DMatrix<f64>>,
    scratch: Vec<f64>,
}

impl<'a> Propagator<'a> {
    pub fn new(gen: &'a Generator, stepper: Stepper) -> Result<Self> {
        let grid = &gen.grid;
        if stepper.dt <= 0.0 || !stepper.dt.is_finite() {
            return Err(Error::Precondition("dt must be positive".into()));
        }
        let absorb = gen.absorb.as_deref();
        let mut p = Propagator {
            gen,
            stepper,
            collision: None,
            half_collision: None,
            exp_full: None,
            scratch: vec![0.0; grid.n_phase()],
        };
        match stepper.scheme {
            Scheme::Imex => {
                let limit = grid.cfl_limit();
                if stepper.dt > limit * (1.0 + 1e-12) {
                    return Err(Error::Cfl { dt: stepper.dt, limit });
                }
                p.collision =
                    Some(CollisionFactor::factor(grid, &gen.collision_v, absorb, stepper.dt)?);
            }
            Scheme::ThetaImplicit { theta } => {
                if !(0.0..=1.0).contains(&theta) {
                    return Err(Error::Precondition("theta must lie in [0, 1]".into()));
                }
                if !matches!(grid.space.layout, SpatialLayout::Line { .. }) {
                    return Err(Error::Precondition(
                        "theta-implicit transport sweeps are implemented on the interval only"
                            .into(),
                    ));
                }
                if gen.adjoint {
                    return Err(Error::Precondition(
                        "theta-implicit stepping of the dual generator is not supported".into(),
                    ));
                }
                p.half_collision =
                    Some(CollisionFactor::factor(grid, &gen.collision_v, absorb, stepper.dt / 2.0)?);
            }
            Scheme::DenseExponential => {
                let n = grid.n_phase();
                if n > DENSE_EXP_MAX_DIM {
                    return Err(Error::Precondition(format!(
                        "dense exponential limited to dimension {DENSE_EXP_MAX_DIM}, got {n}"
                    )));
                }
                let dense = gen.full.to_dense() * stepper.dt;
                p.exp_full = Some(expm(&dense));
            }
        }
        Ok(p)
    }

    pub fn dt(&self) -> f64 {
        self.stepper.dt
    }

    /// Advance the field by one step in place.
    pub fn step(&mut self, f: &mut Field) {
        match self.stepper.scheme {
            Scheme::Imex => {
                let dt = self.stepper.dt;
                if self.gen.adjoint {
                    // adjoint order: collision solve first, then transport
                    self.collision.as_ref().unwrap().solve_field(&self.gen.grid, f);
                    self.scratch.copy_from_slice(f);
                    self.gen.transport.mul_vec_acc(&self.scratch, dt, f);
                } else {
                    self.gen.transport.mul_vec_into(f, &mut self.scratch);
                    for (fi, si) in f.iter_mut().zip(&self.scratch) {
                        *fi += dt * si;
                    }
                    self.collision.as_ref().unwrap().solve_field(&self.gen.grid, f);
                }
            }
            Scheme::ThetaImplicit { theta } => {
                self.half_collision.as_ref().unwrap().solve_field(&self.gen.grid, f);
                self.theta_transport_solve(theta, f);
                self.half_collision.as_ref().unwrap().solve_field(&self.gen.grid, f);
            }
            Scheme::DenseExponential => {
                let e = self.exp_full.as_ref().unwrap();
                let x = nalgebra::DVector::from_column_slice(f);
                let y = e * x;
                f.copy_from_slice(y.as_slice());
            }
        }
    }

    /// Solve (I − θ dt T) f_new = f + (1−θ) dt T f by per-velocity sweeps with
    /// a fixed-point iteration on the wall traces.
    fn theta_transport_solve(&mut self, theta: f64, f: &mut Field) {
        let grid = &self.gen.grid;
        let dt = self.stepper.dt;
        let (nx, dx) = match grid.space.layout {
            SpatialLayout::Line { nx, dx } => (nx, dx),
            _ => unreachable!(),
        };
        let nv = grid.n_velocity();
        // explicit part
        let rhs: Vec<f64> = if theta < 1.0 {
            self.gen.transport.mul_vec_into(f, &mut self.scratch);
            f.iter().zip(&self.scratch).map(|(a, b)| a + (1.0 - theta) * dt * b).collect()
        } else {
            f.clone()
        };
        let mut out = f.clone();
        // wall traces: value of gamma_- for each incoming velocity, per wall
        let mut gamma = vec![vec![0.0; nv]; grid.walls.len()];
        let scale = |v: f64| theta * dt * v.abs() / dx;
        let mut converged = false;
        for _ in 0..60 {
            for (w, wall) in grid.walls.iter().enumerate() {
                let iota = wall.node.iota;
                let mut outflux = 0.0;
                for iv in 0..nv {
                    if wall.n_dot_v[iv] > 0.0 {
                        outflux += out[grid.idx(wall.cell, iv)]
                            * wall.n_dot_v[iv]
                            * grid.velocity.weights[iv];
                    }
                }
                for iv in 0..nv {
                    if wall.n_dot_v[iv] < 0.0 {
                        gamma[w][iv] = (1.0 - iota)
                            * out[grid.idx(wall.cell, wall.specular[iv])]
                            + iota * grid.m_wall[iv] * outflux;
                    }
                }
            }
            let mut delta = 0.0f64;
            let mut scale_ref = 0.0f64;
            for j in 0..nv {
                let v = grid.velocity.nodes[j][0];
                let c = scale(v);
                if v > 0.0 {
                    // inflow at the left wall (wall 0)
                    let mut prev = gamma[0][j];
                    for i in 0..nx {
                        let idx = i * nv + j;
                        let val = (rhs[idx] + c * prev) / (1.0 + c);
                        prev = val;
                        if i + 1 == nx {
                            delta = delta.max((out[idx] - val).abs());
                        }
                        scale_ref = scale_ref.max(val.abs());
                        out[idx] = val;
                    }
                } else if v < 0.0 {
                    // inflow at the right wall (wall 1)
                    let mut prev = gamma[1][j];
                    for i in (0..nx).rev() {
                        let idx = i * nv + j;
                        let val = (rhs[idx] + c * prev) / (1.0 + c);
                        prev = val;
                        if i == 0 {
                            delta = delta.max((out[idx] - val).abs());
                        }
                        scale_ref = scale_ref.max(val.abs());
                        out[idx] = val;
                    }
                }
            }
            if delta <= 1e-13 * scale_ref.max(1e-300) {
                converged = true;
                break;
            }
        }
        assert!(converged, "wall fixed point did not converge in 60 sweeps");
        f.copy_from_slice(&out);
    }
}

// ---------------------------------------------------------------------------
// evolve / evolve_dual
// ---------------------------------------------------------------------------

fn norm_of(grid: &PhaseGrid, f: &[f64], probe: &Probe, shift: Option<(&[f64], f64)>) -> f64 {
    let nv = grid.n_velocity();
    let value = |i: usize| -> f64 {
        let raw = match shift {
            Some((finf, m0)) if probe.centered => f[i] - m0 * finf[i],
            _ => f[i],
        };
        raw * probe.weight[i % nv]
    };
    if probe.p.is_infinite() {
        (0..f.len()).map(|i| value(i).abs()).fold(0.0, f64::max)
    } else {
        let s: f64 =
            (0..f.len()).map(|i| value(i).abs().powf(probe.p) * grid.weights[i]).sum();
        s.powf(1.0 / probe.p)
    }
}

/// Integrate the forward (or absorbed) semigroup, recording scalar probes at
/// every step and field snapshots at a bounded cadence.
pub fn evolve(
    gen: &Generator,
    f0: &Field,
    t_final: f64,
    stepper: Stepper,
    probes: &[Probe],
    snapshot_every: Option<usize>,
) -> Result<Trajectory> {
    let grid = &gen.grid;
    let mut prop = Propagator::new(gen, stepper)?;
    let n_steps = (t_final / stepper.dt).round().max(1.0) as usize;
    let cadence = snapshot_every.unwrap_or_else(|| (n_steps / 200).max(1));
    let finf = grid.f_inf();
    let m0 = grid.mass(f0);

    let mut f = f0.clone();
    let mut traj = Trajectory {
        times: Vec::with_capacity(n_steps + 1),
        mass: Vec::with_capacity(n_steps + 1),
        min_value: Vec::with_capacity(n_steps + 1),
        probe_labels: probes.iter().map(|p| p.label.clone()).collect(),
        probes: vec![Vec::with_capacity(n_steps + 1); probes.len()],
        snapshots: Vec::new(),
        cfl: CflReport { dt: stepper.dt, limit: grid.cfl_limit() },
    };
    let record = |t: f64, f: &Field, traj: &mut Trajectory, snap: bool| {
        traj.times.push(t);
        traj.mass.push(grid.mass(f));
        traj.min_value.push(f.iter().copied().fold(f64::INFINITY, f64::min));
        for (k, p) in probes.iter().enumerate() {
            traj.probes[k].push(norm_of(grid, f, p, Some((&finf, m0))));
        }
        if snap {
            traj.snapshots.push((t, f.clone()));
        }
    };
    record(0.0, &f, &mut traj, true);
    let mut t = 0.0;
    for step in 1..=n_steps {
        prop.step(&mut f);
        t = step as f64 * stepper.dt;
        if !f.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { step, t });
        }
        record(t, &f, &mut traj, step % cadence == 0 || step == n_steps);
    }
    let _ = t;
    Ok(traj)
}

/// Integrate the dual backward problem from the final datum g(T) = g_T down to
/// t = 0 using the exact adjoint of each forward step. Returns the trajectory
/// indexed by backward time s = T − t (s = 0 is the final datum).
pub fn evolve_dual(
    dual_gen: &Generator,
    g_final: &Field,
    t_final: f64,
    stepper: Stepper,
    probes: &[Probe],
) -> Result<Trajectory> {
    if !dual_gen.adjoint {
        return Err(Error::Precondition("evolve_dual needs the dual generator".into()));
    }
    evolve(dual_gen, g_final, t_final, stepper, probes, None)
}

// ---------------------------------------------------------------------------
// Absorbed-semigroup decay
// ---------------------------------------------------------------------------

/// Fit the decay rate of the absorbed semigroup in L^p_ω: least-squares slope
/// of the log norm on [T/2, T], averaged over `n_data` seeded random data.
pub fn decay_rate_of_b(
    b_gen: &Generator,
    weight_values: &[f64],
    p: f64,
    t_final: f64,
    n_data: usize,
    seed: u64,
) -> Result<(f64, Vec<RateFit>)> {
    use rand::{Rng, SeedableRng};
    let grid = &b_gen.grid;
    let stepper = Stepper { scheme: Scheme::Imex, dt: grid.cfl_limit() };
    let probe = Probe {
        label: "decay".into(),
        p,
        weight: weight_values.to_vec(),
        centered: false,
    };
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut fits = Vec::new();
    for _ in 0..n_data {
        let f0: Field = (0..grid.n_phase()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let traj = evolve(b_gen, &f0, t_final, stepper, std::slice::from_ref(&probe), Some(usize::MAX))?;
        let (ts, vals) = traj.probe_series("decay").unwrap();
        fits.push(fit_rate(ts, vals, (t_final / 2.0, t_final))?);
    }
    let mean = fits.iter().map(|f| f.slope).sum::<f64>() / fits.len() as f64;
    Ok((mean, fits))
}

// ---------------------------------------------------------------------------
// Duhamel reconstruction
// ---------------------------------------------------------------------------

/// Report of the factorization check S̄_L = V₂ + W₁ * S̄_L * W₂ applied to one
/// datum, evaluated at a handful of times.
#[derive(Debug, Clone)]
pub struct DuhamelReport {
    pub times: Vec<f64>,
    pub lhs_norm: Vec<f64>,
    pub rel_discrepancy: Vec<f64>,
    pub max_rel_discrepancy: f64,
}

/// Mass projector Π g = g − ⟨⟨g⟩⟩ f∞.
fn project_mass_zero(grid: &PhaseGrid, f: &mut Field, finf: &Field) {
    let m = grid.mass(f);
    for (fi, gi) in f.iter_mut().zip(finf) {
        *fi -= m * gi;
    }
}

/// Trapezoid-in-time convolution recurrence: given y_k (k = 0..K) and the
/// one-step dense propagator E (semigroup S at dt), computes
/// T_k = ∫₀^{t_k} S(t_k − s) y(s) ds with trapezoid weights.
struct ConvAccumulator<'m> {
    e: &'m DMatrix<f64>,
    dt: f64,
    acc: nalgebra::DVector<f64>,
    prev_y: Option<nalgebra::DVector<f64>>,
}

impl<'m> ConvAccumulator<'m> {
    fn new(e: &'m DMatrix<f64>, n: usize, dt: f64) -> Self {
        Self { e, dt, acc: nalgebra::DVector::zeros(n), prev_y: None }
    }

    /// Push y_k and return T_k (T_0 = 0).
    fn push(&mut self, y: nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        match self.prev_y.take() {
            None => {
                self.prev_y = Some(y);
                nalgebra::DVector::zeros(self.acc.len())
            }
            Some(yp) => {
                self.acc = self.e * &self.acc + (self.dt / 2.0) * (self.e * yp + &y);
                self.prev_y = Some(y);
                self.acc.clone()
            }
        }
    }
}

/// Evaluate both sides of the factorization of the mass-projected semigroup
/// through the absorbed part: S̄ = V₂ + W₁ * S̄ * W₂ for n ∈ {1, 2}, where
/// W₁ = (S_B A)^{*n}, W₂ = (A S_B)^{*n}, V₂ = V₁Π + W₁ * ΠV₁ with
/// V₁ = Σ_{j<n} (S_B A)^{*j} * S_B. Time convolutions use the trapezoid rule
/// at the stepper resolution; everything runs on dense exponentials.
pub fn duhamel_reconstruct(
    gen: &Generator,
    a_profile: &[f64],
    b_gen: &Generator,
    f0: &Field,
    t_final: f64,
    dt: f64,
    n: usize,
) -> Result<DuhamelReport> {
    let grid = &gen.grid;
    let nn = grid.n_phase();
    if nn > 5_000 {
        return Err(Error::Precondition("duhamel check limited to dimension 5000".into()));
    }
    if !(n == 1 || n == 2) {
        return Err(Error::Precondition("duhamel iteration order must be 1 or 2".into()));
    }
    let nv = grid.n_velocity();
    let apply_a = |f: &nalgebra::DVector<f64>| -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(nn, (0..nn).map(|i| a_profile[i % nv] * f[i]))
    };
    let e_l = expm(&(gen.full.to_dense() * dt));
    let e_b = expm(&(b_gen.full.to_dense() * dt));
    let finf = grid.f_inf();
    let k_steps = (t_final / dt).round() as usize;

    // s_bar_k = Π S_L(t_k) f0
    let mut fbar = f0.clone();
    project_mass_zero(grid, &mut fbar, &finf);
    let fbar0 = nalgebra::DVector::from_column_slice(&fbar);

    // b-trajectories of the two inputs
    let mut sb_f = nalgebra::DVector::from_column_slice(f0); // S_B(t) f0
    let mut sl_fbar = fbar0.clone(); // S̄_L(t) f0 (projected datum, conserved zero mass)

    // V1 applied to f0: n = 1: S_B f0 ; n = 2: S_B f0 + (S_B A) * S_B f0
    let mut v1_extra = ConvAccumulator::new(&e_b, nn, dt); // (S_B A) * [S_B f0]
    // W2 chain applied to f0: w2_1 = (A S_B) f0 pointwise; w2 = its n-fold convolution
    let mut w2_chain = ConvAccumulator::new(&e_b, nn, dt); // builds (S_B A)*(S_B A f0)-style inner terms

    // We evaluate rhs = V2 f0 + (W1 * S̄ * W2) f0 at every step via nested
    // trapezoid accumulators, all driven by the same dense semigroups.
    //
    // z(t) = (W2 f0)(t): n=1: A S_B(t) f0 ; n=2: (A S_B * A S_B)(t) f0
    // y(t) = (S̄ * W2)(t) f0 = ∫ S̄(t-s) z(s) ds
    // rhs2(t) = (W1 * y)(t): n=1: ∫ S_B(t-s) A y(s) ds ; n=2 nests once more
    let mut y_acc = ConvAccumulator::new(&e_l, nn, dt);
    let mut w1_acc1 = ConvAccumulator::new(&e_b, nn, dt);
    let mut w1_acc2 = ConvAccumulator::new(&e_b, nn, dt);
    // V2 = V1 Π + W1 * (Π V1): second piece needs Π V1 f0 streamed through W1
    let mut w1_pv1_acc1 = ConvAccumulator::new(&e_b, nn, dt);
    let mut w1_pv1_acc2 = ConvAccumulator::new(&e_b, nn, dt);

    let eval_every = (k_steps / 5).max(1);
    let mut report = DuhamelReport {
        times: Vec::new(),
        lhs_norm: Vec::new(),
        rel_discrepancy: Vec::new(),
        max_rel_discrepancy: 0.0,
    };

    for k in 0..=k_steps {
        let t = k as f64 * dt;
        if k > 0 {
            sb_f = &e_b * sb_f;
            sl_fbar = &e_l * sl_fbar;
        }
        // V1 f0 at t
        let conv1 = v1_extra.push(apply_a(&sb_f)); // (S_B A) * S_B f0
        let v1 = match n {
            1 => sb_f.clone(),
            _ => &sb_f + conv1.clone(),
        };
        let _ = &w2_chain;
        // z(t) = W2 f0
        let z = match n {
            1 => apply_a(&sb_f),
            _ => {
                let inner = w2_chain.push(apply_a(&sb_f)); // S_B * (A S_B f0) convolved once
                apply_a(&inner)
            }
        };
        // y(t) = (S̄ * z)(t): drive with the projected semigroup
        let mut zp = z.clone();
        {
            // project z to the mass-zero subspace before propagating (Π S = S̄ on it)
            let mut zv: Field = zp.as_slice().to_vec();
            project_mass_zero(grid, &mut zv, &finf);
            zp = nalgebra::DVector::from_column_slice(&zv);
        }
        let y = y_acc.push(zp);
        // rhs tail = W1 * y
        let w1y = match n {
            1 => w1_acc1.push(apply_a(&y)),
            _ => {
                let inner = w1_acc1.push(apply_a(&y));
                w1_acc2.push(apply_a(&inner))
            }
        };
        // V2 second piece: W1 * (Π V1 f0)
        let mut pv1: Field = v1.as_slice().to_vec();
        project_mass_zero(grid, &mut pv1, &finf);
        let pv1 = nalgebra::DVector::from_column_slice(&pv1);
        let w1pv1 = match n {
            1 => w1_pv1_acc1.push(apply_a(&pv1)),
            _ => {
                let inner = w1_pv1_acc1.push(apply_a(&pv1));
                w1_pv1_acc2.push(apply_a(&inner))
            }
        };
        // V1 Π f0 term: V1 applied to the projected datum — recompute from the
        // projected S_B trajectory: by linearity V1Πf0 = V1 f0 - <<f0>> V1 f∞;
        // we use the identity directly with a parallel f∞ trajectory.
        // (handled below via the cached series)
        if k % eval_every == 0 || k == k_steps {
            // assemble V1 Π f0 using a dedicated propagation of f∞
            // cached lazily: see closure over static-ish state below
            report.times.push(t);
            let lhs = &sl_fbar;
            // rhs = V1Πf0 + W1*(ΠV1 f0) + W1*S̄*W2 f0
            // V1Πf0 computed from v1 and the f∞ branch:
            let rhs = &v1_pi_f0(gen, b_gen, f0, dt, k, n)? + w1pv1 + w1y;
            let diff = (lhs - &rhs).amax();
            let scale = lhs.amax().max(1e-300);
            report.lhs_norm.push(scale);
            report.rel_discrepancy.push(diff / scale);
        }
    }
    report.max_rel_discrepancy =
        report.rel_discrepancy.iter().copied().fold(0.0, f64::max);
    Ok(report)
}

/// V₁ Π f0 at t_k, recomputed by propagating the projected datum under S_B.
/// Small helper kept separate for clarity; quadratic cost is irrelevant at the
/// tiny sizes this check runs at.
fn v1_pi_f0(
    gen: &Generator,
    b_gen: &Generator,
    f0: &Field,
    dt: f64,
    k: usize,
    n: usize,
) -> Result<nalgebra::DVector<f64>> {
    let grid = &gen.grid;
    let nn = grid.n_phase();
    let nv = grid.n_velocity();
    let finf = grid.f_inf();
    let mut pf = f0.clone();
    project_mass_zero(grid, &mut pf, &finf);
    let e_b = expm(&(b_gen.full.to_dense() * dt));
    let a_profile: Vec<f64> = b_gen.absorb.clone().unwrap_or_else(|| vec![0.0; nv]);
    let apply_a = |f: &nalgebra::DVector<f64>| -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(nn, (0..nn).map(|i| a_profile[i % nv] * f[i]))
    };
    let mut sb = nalgebra::DVector::from_column_slice(&pf);
    let mut conv = ConvAccumulator::new(&e_b, nn, dt);
    let mut out = sb.clone();
    for kk in 0..=k {
        if kk > 0 {
            sb = &e_b * sb;
        }
        let c = conv.push(apply_a(&sb));
        if kk == k {
            out = match n {
                1 => sb.clone(),
                _ => &sb + c,
            };
        }
    }
    Ok(out)
}
