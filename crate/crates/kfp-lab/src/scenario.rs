//! Scenario configuration (flat key = value files with dotted sections),
//! report emission and trajectory CSV output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Accommodation, Domain};
use crate::grid::{build_disk_grid, build_grid, Field, PhaseGrid};
use crate::evolution::{Scheme, Stepper, Trajectory};
use crate::weights::{WeightForm, WeightSpec};

/// Initial datum kinds.
#[derive(Debug, Clone, Serialize)]
pub enum InitSpec {
    Equilibrium,
    GaussianPulse { center: f64, sigma_x: f64, sigma_v: f64 },
    /// equilibrium × (1 + smooth random perturbation); the lowest spatial mode
    /// is a density mode with coefficient of order one so that the slow
    /// relaxation mode is always excited, higher modes decay like k⁻³
    RandomSeeded { amplitude: f64, modes: usize },
    /// pulse at `cells` grid cells from the left wall, with slow velocities
    /// scaled to the layer distance
    WallLayer { cells: f64, sigma_x_cells: f64, sigma_v_per_h: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub experiment: String,
    pub seed: u64,
    pub domain_kind: String,
    pub extent: f64,
    pub iota: Vec<f64>,
    pub nx: usize,
    pub nv: usize,
    pub ntheta: usize,
    pub vmax: f64,
    pub scheme: String,
    pub dt: Option<f64>,
    pub theta: f64,
    pub t_final: f64,
    pub fit_window: Option<(f64, f64)>,
    pub init: InitSpec,
    pub weights: Vec<WeightSpec>,
    pub norm_ps: Vec<f64>,
    pub pen_q: f64,
    pub out_csv: Option<String>,
    pub out_json: Option<String>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            experiment: String::new(),
            seed: 0,
            domain_kind: "interval".into(),
            extent: 1.0,
            iota: vec![1.0],
            nx: 24,
            nv: 32,
            ntheta: 32,
            vmax: 6.0,
            scheme: "imex".into(),
            dt: None,
            theta: 1.0,
            t_final: 1.0,
            fit_window: None,
            init: InitSpec::Equilibrium,
            weights: vec![],
            norm_ps: vec![],
            pen_q: 0.9,
            out_csv: None,
            out_json: None,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::Config(format!("key `{key}`: expected a number, got `{v}`")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::Config(format!("key `{key}`: expected an integer, got `{v}`")))
}

/// Weight grammar: `poly:K`, `stretched:K:ZETA:S`, `gauss:ZETA`, `gauss-neg:ZETA`,
/// `maxwell:P`.
pub fn parse_weight(token: &str) -> Result<WeightSpec> {
    let parts: Vec<&str> = token.split(':').collect();
    let num = |s: &str| -> Result<f64> { parse_f64("weights", s) };
    match parts.as_slice() {
        ["poly", k] => Ok(WeightSpec::polynomial(num(k)?)),
        ["stretched", k, z, s] => Ok(WeightSpec::stretched(num(k)?, num(z)?, num(s)?)),
        ["gauss", z] => Ok(WeightSpec::gaussian(num(z)?)),
        ["gauss-neg", z] => Ok(WeightSpec::gaussian_negative(num(z)?)),
        ["maxwell", p] => {
            let p = if *p == "inf" { f64::INFINITY } else { num(p)? };
            Ok(WeightSpec::maxwell_power(p))
        }
        _ => Err(Error::Config(format!("unknown weight `{token}`"))),
    }
}

pub fn weight_token(w: &WeightSpec) -> String {
    match w.form {
        WeightForm::Stretched { k, zeta, s } => {
            if zeta == 0.0 || s == 0.0 {
                format!("poly:{k}")
            } else {
                format!("stretched:{k}:{zeta}:{s}")
            }
        }
        WeightForm::Gaussian { zeta } => format!("gauss:{zeta}"),
        WeightForm::GaussianNegative { zeta } => format!("gauss-neg:{zeta}"),
        WeightForm::MaxwellPower { p } => format!("maxwell:{p}"),
    }
}

impl Scenario {
    /// Parse the flat key = value format. Unknown keys are rejected by name;
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Scenario> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_map(map)
    }

    pub fn from_map(map: BTreeMap<String, String>) -> Result<Scenario> {
        let mut sc = Scenario::default();
        let mut init_kind = String::from("equilibrium");
        let mut init_params: BTreeMap<String, f64> = BTreeMap::new();
        for (k, v) in &map {
            match k.as_str() {
                "experiment" => sc.experiment = v.clone(),
                "seed" => sc.seed = parse_usize(k, v)? as u64,
                "domain.kind" => sc.domain_kind = v.clone(),
                "domain.extent" => sc.extent = parse_f64(k, v)?,
                "domain.iota" => {
                    sc.iota = v
                        .split(',')
                        .map(|t| parse_f64(k, t.trim()))
                        .collect::<Result<Vec<_>>>()?;
                }
                "grid.nx" => sc.nx = parse_usize(k, v)?,
                "grid.nv" => sc.nv = parse_usize(k, v)?,
                "grid.ntheta" => sc.ntheta = parse_usize(k, v)?,
                "grid.vmax" => sc.vmax = parse_f64(k, v)?,
                "stepper.scheme" => sc.scheme = v.clone(),
                "stepper.dt" => {
                    sc.dt = if v == "auto" { None } else { Some(parse_f64(k, v)?) }
                }
                "stepper.theta" => sc.theta = parse_f64(k, v)?,
                "time.horizon" => sc.t_final = parse_f64(k, v)?,
                "fit.window" => {
                    let parts: Vec<&str> = v.split_whitespace().collect();
                    if parts.len() != 2 {
                        return Err(Error::Config("fit.window needs two numbers".into()));
                    }
                    sc.fit_window =
                        Some((parse_f64(k, parts[0])?, parse_f64(k, parts[1])?));
                }
                "init.kind" => init_kind = v.clone(),
                "init.center" | "init.sigma_x" | "init.sigma_v" | "init.amplitude"
                | "init.modes" | "init.cells" | "init.sigma_x_cells" | "init.sigma_v_per_h" => {
                    init_params.insert(k["init.".len()..].to_string(), parse_f64(k, v)?);
                }
                "weights" => {
                    sc.weights = v
                        .split(',')
                        .map(|t| parse_weight(t.trim()))
                        .collect::<Result<Vec<_>>>()?;
                }
                "norms.p" => {
                    sc.norm_ps = v
                        .split(',')
                        .map(|t| {
                            let t = t.trim();
                            if t == "inf" {
                                Ok(f64::INFINITY)
                            } else {
                                parse_f64(k, t)
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                }
                "penalization.q" => sc.pen_q = parse_f64(k, v)?,
                "out.csv" => sc.out_csv = Some(v.clone()),
                "out.json" => sc.out_json = Some(v.clone()),
                other => {
                    return Err(Error::Config(format!("unknown key `{other}`")));
                }
            }
        }
        let get = |name: &str, default: f64| *init_params.get(name).unwrap_or(&default);
        sc.init = match init_kind.as_str() {
            "equilibrium" => InitSpec::Equilibrium,
            "gaussian-pulse" => InitSpec::GaussianPulse {
                center: get("center", sc.extent / 2.0),
                sigma_x: get("sigma_x", 0.06 * sc.extent),
                sigma_v: get("sigma_v", 0.5),
            },
            "random-seeded" => InitSpec::RandomSeeded {
                amplitude: get("amplitude", 0.8),
                modes: get("modes", 4.0) as usize,
            },
            "wall-layer" => InitSpec::WallLayer {
                cells: get("cells", 6.0),
                sigma_x_cells: get("sigma_x_cells", 1.5),
                sigma_v_per_h: get("sigma_v_per_h", 4.0),
            },
            other => return Err(Error::Config(format!("unknown init.kind `{other}`"))),
        };
        if sc.experiment.is_empty() {
            return Err(Error::Config("missing key `experiment`".into()));
        }
        Ok(sc)
    }

    pub fn build_domain(&self) -> Result<Domain> {
        let iota = if self.iota.len() == 1 {
            Accommodation::Constant(self.iota[0])
        } else {
            Accommodation::PerNode(self.iota.clone())
        };
        match self.domain_kind.as_str() {
            "interval" => Domain::interval(self.extent, iota),
            "disk" => Domain::disk(self.extent, iota),
            other => Err(Error::Config(format!("unknown domain.kind `{other}`"))),
        }
    }

    pub fn build_grid(&self) -> Result<Arc<PhaseGrid>> {
        let dom = self.build_domain()?;
        let grid = match self.domain_kind.as_str() {
            "interval" => build_grid(&dom, self.nx, self.nv, self.vmax)?,
            _ => build_disk_grid(&dom, self.nx, self.ntheta, self.nv, self.vmax)?,
        };
        Ok(Arc::new(grid))
    }

    pub fn stepper(&self, grid: &PhaseGrid) -> Result<Stepper> {
        let scheme = match self.scheme.as_str() {
            "imex" => Scheme::Imex,
            "implicit" => Scheme::ThetaImplicit { theta: self.theta },
            "expm" => Scheme::DenseExponential,
            other => return Err(Error::Config(format!("unknown stepper.scheme `{other}`"))),
        };
        let dt = match self.dt {
            Some(dt) => dt,
            None => match scheme {
                Scheme::Imex => grid.cfl_limit(),
                _ => {
                    return Err(Error::Config(
                        "stepper.dt = auto is only defined for the imex scheme".into(),
                    ))
                }
            },
        };
        Ok(Stepper { scheme, dt })
    }

    /// Build the initial datum on the grid, deterministic in the seed.
    pub fn initial_datum(&self, grid: &PhaseGrid, rng: &mut impl rand::Rng) -> Field {
        match &self.init {
            InitSpec::Equilibrium => grid.f_inf(),
            InitSpec::GaussianPulse { center, sigma_x, sigma_v } => {
                gaussian_pulse(grid, *center, *sigma_x, *sigma_v)
            }
            InitSpec::RandomSeeded { amplitude, modes } => {
                random_seeded(grid, *amplitude, *modes, rng)
            }
            InitSpec::WallLayer { cells, sigma_x_cells, sigma_v_per_h } => {
                let dx = grid.space.volumes[0];
                let h = cells * dx;
                gaussian_pulse(grid, h, sigma_x_cells * dx, sigma_v_per_h * h)
            }
        }
    }
}

/// Normalized Gaussian pulse (unit mass on the grid).
pub fn gaussian_pulse(grid: &PhaseGrid, center: f64, sigma_x: f64, sigma_v: f64) -> Field {
    let mut f = grid.project(|x, v| {
        let dx = x[0] - center;
        let v2 = v[0] * v[0] + v[1] * v[1];
        (-dx * dx / (2.0 * sigma_x * sigma_x) - v2 / (2.0 * sigma_v * sigma_v)).exp()
    });
    let m = grid.mass(&f);
    for x in f.iter_mut() {
        *x /= m;
    }
    f
}

/// Equilibrium times (1 + anchored smooth random perturbation).
pub fn random_seeded(
    grid: &PhaseGrid,
    amplitude: f64,
    modes: usize,
    rng: &mut impl rand::Rng,
) -> Field {
    let nv = grid.n_velocity();
    let length: f64 = match grid.space.layout {
        crate::grid::SpatialLayout::Line { nx, dx } => nx as f64 * dx,
        crate::grid::SpatialLayout::Polar { nr, dr, .. } => nr as f64 * dr,
    };
    let coord = |ix: usize| -> f64 {
        match grid.space.layout {
            crate::grid::SpatialLayout::Line { .. } => grid.space.centers[ix][0],
            crate::grid::SpatialLayout::Polar { .. } => {
                let c = grid.space.centers[ix];
                (c[0] * c[0] + c[1] * c[1]).sqrt()
            }
        }
    };
    let mut pert = vec![0.0; grid.n_phase()];
    let mut max_abs = 0.0f64;
    for k in 1..=modes.max(1) {
        // the k = 1 coefficient is anchored away from zero; higher modes decay
        let a = if k == 1 {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.5..1.5)
        } else {
            let g: f64 = gaussian_sample(rng);
            g / (k as f64).powi(3)
        };
        let (b0, b1, b2): (f64, f64, f64) = if k == 1 {
            (1.0, 0.0, 0.0)
        } else {
            (gaussian_sample(rng), gaussian_sample(rng), gaussian_sample(rng))
        };
        let mut vprof: Vec<f64> = (0..nv)
            .map(|iv| {
                let v = grid.velocity.nodes[iv][0];
                b0 + b1 * v + b2 * (v * v - 1.0)
            })
            .collect();
        let vmax_abs = vprof.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-12);
        for x in vprof.iter_mut() {
            *x /= vmax_abs;
        }
        for ix in 0..grid.n_space() {
            let xmode = (std::f64::consts::PI * k as f64 * coord(ix) / length).cos();
            for iv in 0..nv {
                pert[grid.idx(ix, iv)] += a * xmode * vprof[iv];
            }
        }
        max_abs = 0.0;
        for p in &pert {
            max_abs = max_abs.max(p.abs());
        }
    }
    let scale = amplitude / max_abs.max(1e-12);
    let finf = grid.f_inf();
    (0..grid.n_phase()).map(|i| finf[i] * (1.0 + scale * pert[i])).collect()
}

fn gaussian_sample(rng: &mut impl rand::Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    /// comparison the check applies, e.g. "<=" or ">="
    pub cmp: String,
}

impl Check {
    pub fn le(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), pass: value <= threshold, value, threshold, cmp: "<=".into() }
    }

    pub fn ge(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), pass: value >= threshold, value, threshold, cmp: ">=".into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub experiment: String,
    pub version: String,
    pub seed: u64,
    pub scenario: Scenario,
    pub measurements: serde_json::Value,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub wall_clock_s: f64,
}

impl Report {
    pub fn new(
        scenario: &Scenario,
        measurements: serde_json::Value,
        checks: Vec<Check>,
        wall_clock_s: f64,
    ) -> Self {
        Self {
            experiment: scenario.experiment.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: scenario.seed,
            scenario: scenario.clone(),
            measurements,
            pass: checks.iter().all(|c| c.pass),
            checks,
            wall_clock_s,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
        f.write_all(s.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

/// Trajectory CSV: t, mass, min, then one column per probe. Deterministic
/// shortest-roundtrip float formatting keeps reruns byte-identical.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("t,mass,min");
    for label in &traj.probe_labels {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for i in 0..traj.times.len() {
        out.push_str(&format!("{},{},{}", traj.times[i], traj.mass[i], traj.min_value[i]));
        for series in &traj.probes {
            out.push_str(&format!(",{}", series[i]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse a trajectory CSV produced by [`write_trajectory_csv`].
pub fn read_trajectory_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty trajectory file".into()))?;
    let names: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != names.len() {
            return Err(Error::Config(format!(
                "line {}: {} fields, expected {}",
                lineno + 2,
                parts.len(),
                names.len()
            )));
        }
        for (c, p) in parts.iter().enumerate() {
            cols[c].push(
                p.parse()
                    .map_err(|_| Error::Config(format!("line {}: bad number `{p}`", lineno + 2)))?,
            );
        }
    }
    Ok((names, cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    const SAMPLE: &str = "
# relaxation scenario
experiment = relaxation
seed = 42
domain.kind = interval
domain.extent = 5.0
domain.iota = 1.0
grid.nx = 24
grid.nv = 32
grid.vmax = 6.0
stepper.scheme = imex
stepper.dt = auto
time.horizon = 8.0
init.kind = random-seeded
init.amplitude = 0.8
init.modes = 4
weights = poly:3, gauss:0.2
norms.p = 1,2,inf
";

    #[test]
    fn parses_sample_config() {
        let sc = Scenario::parse(SAMPLE).unwrap();
        assert_eq!(sc.experiment, "relaxation");
        assert_eq!(sc.nx, 24);
        assert_eq!(sc.weights.len(), 2);
        assert!(sc.norm_ps[2].is_infinite());
        assert!(matches!(sc.init, InitSpec::RandomSeeded { .. }));
    }

    #[test]
    fn rejects_unknown_key_by_name() {
        let bad = format!("{SAMPLE}\nnot.a.key = 3\n");
        let err = Scenario::parse(&bad).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("not.a.key"), "{msg}");
    }

    #[test]
    fn rejects_malformed_lines_with_position() {
        let err = Scenario::parse("experiment = x\ngrbg\n").unwrap_err();
        assert!(format!("{err}").contains("line 2"));
    }

    #[test]
    fn initial_data_shapes() {
        let sc = Scenario::parse(SAMPLE).unwrap();
        let grid = sc.build_grid().unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(sc.seed);
        let f = sc.initial_datum(&grid, &mut rng);
        assert!(f.iter().all(|x| *x >= 0.0));
        // determinism
        let mut rng2 = rand_chacha::ChaCha12Rng::seed_from_u64(sc.seed);
        let f2 = sc.initial_datum(&grid, &mut rng2);
        assert_eq!(f, f2);
        // pulse normalizes to unit mass
        let pulse = gaussian_pulse(&grid, 2.5, 0.3, 0.5);
        assert!((grid.mass(&pulse) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = std::env::temp_dir().join("kfp_lab_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("traj.csv");
        let traj = Trajectory {
            times: vec![0.0, 0.5],
            mass: vec![1.0, 1.0],
            min_value: vec![0.0, -1e-16],
            probe_labels: vec!["a".into()],
            probes: vec![vec![2.0, 1.5]],
            snapshots: vec![],
            cfl: crate::evolution::CflReport { dt: 0.1, limit: 0.2 },
        };
        write_trajectory_csv(&traj, &path).unwrap();
        let (names, cols) = read_trajectory_csv(&path).unwrap();
        assert_eq!(names, vec!["t", "mass", "min", "a"]);
        assert_eq!(cols[3], vec![2.0, 1.5]);
        // byte reproducibility
        let b1 = std::fs::read(&path).unwrap();
        write_trajectory_csv(&traj, &path).unwrap();
        assert_eq!(b1, std::fs::read(&path).unwrap());
    }
}
