//! Bi-fidelity datasets, synthetic benchmark generators and CSV I/O.
//!
//! CSV schema (UTF-8, header row mandatory, `.` decimal separator):
//!
//! | file    | columns               |
//! |---------|-----------------------|
//! | lofi    | `x1..xd,u,sigma`      |
//! | hifi_u  | `x1..xd,u,sigma`      |
//! | hifi_f  | `x1..xd,f,sigma`      |
//! | hifi_b  | `x1..xd,b,sigma`      |

use std::f64::consts::{PI, SQRT_2};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{residual_1d_value, residual_2d_value, ProblemSpec};
use crate::seed::derive_seed;

/// One sensor reading with its known noise standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BiFidelityDataset {
    pub dim: usize,
    pub lofi: Vec<Observation>,
    pub hifi_u: Vec<Observation>,
    pub hifi_f: Vec<Observation>,
    pub hifi_b: Vec<Observation>,
}

impl BiFidelityDataset {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn hifi_count(&self) -> usize {
        self.hifi_u.len() + self.hifi_f.len() + self.hifi_b.len()
    }

    /// Low-fidelity noise level, taken as the largest per-row sigma.
    pub fn lofi_noise(&self) -> f64 {
        self.lofi.iter().map(|o| o.sigma).fold(0.0, f64::max)
    }

    /// Checks dimensions, noise scales and, when a problem is given, domain bounds.
    pub fn validate(&self, problem: Option<&ProblemSpec>) -> Result<()> {
        let sets = [
            ("lofi", &self.lofi),
            ("hifi_u", &self.hifi_u),
            ("hifi_f", &self.hifi_f),
            ("hifi_b", &self.hifi_b),
        ];
        for (name, set) in sets {
            for (i, o) in set.iter().enumerate() {
                if o.x.len() != self.dim {
                    return Err(Error::config(format!(
                        "{name}[{i}] has dimension {}, dataset has {}",
                        o.x.len(),
                        self.dim
                    )));
                }
                if !o.value.is_finite() || o.x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config(format!("{name}[{i}] is not finite")));
                }
                // Low-fidelity data never enter a likelihood, so noise-free rows are allowed there.
                let sigma_ok = if name == "lofi" {
                    o.sigma >= 0.0
                } else {
                    o.sigma > 0.0
                };
                if !(sigma_ok && o.sigma.is_finite()) {
                    return Err(Error::config(format!(
                        "{name}[{i}] has invalid noise scale {}",
                        o.sigma
                    )));
                }
                if let Some(p) = problem {
                    if !p.contains(&o.x, 1e-9) {
                        return Err(Error::config(format!(
                            "{name}[{i}] at {:?} lies outside the domain",
                            o.x
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Named synthetic problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Benchmark {
    /// `u_L = sin(8x)`, `u_H = (x - sqrt2) u_L^2` on `[0, 1]`.
    #[serde(rename = "fn1d-sinsq")]
    Fn1dSinSq,
    /// `u_L = (x - sqrt2) sin^2(8 pi x) + x - 2`, `u_H = u_L - x + 2` on `[0, 1]`.
    #[serde(rename = "fn1d-bias")]
    Fn1dBias,
    /// `u_H = [0.1 exp(x1 + x2) - x4 sin(12 pi x3) + x3] / 2`, `u_L = 1.2 u_H - 0.5`.
    #[serde(rename = "fn4d")]
    Fn4d,
    /// 1D diffusion-reaction with `u = (x - sqrt2) sin^2(8 pi x)`, `u_L = sin(8 pi x)`.
    #[serde(rename = "inv1d")]
    Inv1d,
    /// 2D diffusion-reaction with `u = sin(2 pi x) sin(2 pi y)`, `u_L = 0.8 u + 0.2`.
    #[serde(rename = "inv2d")]
    Inv2d,
}

impl Benchmark {
    pub const ALL: [Benchmark; 5] = [
        Benchmark::Fn1dSinSq,
        Benchmark::Fn1dBias,
        Benchmark::Fn4d,
        Benchmark::Inv1d,
        Benchmark::Inv2d,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == name)
            .ok_or_else(|| Error::config(format!("unknown generator '{name}'")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Fn1dSinSq => "fn1d-sinsq",
            Benchmark::Fn1dBias => "fn1d-bias",
            Benchmark::Fn4d => "fn4d",
            Benchmark::Inv1d => "inv1d",
            Benchmark::Inv2d => "inv2d",
        }
    }

    pub fn problem(self) -> ProblemSpec {
        match self {
            Benchmark::Fn1dSinSq | Benchmark::Fn1dBias => ProblemSpec::regression(vec![(0.0, 1.0)]),
            Benchmark::Fn4d => ProblemSpec::regression(vec![(0.0, 1.0); 4]),
            Benchmark::Inv1d => ProblemSpec::diffusion_reaction_1d(),
            Benchmark::Inv2d => ProblemSpec::diffusion_reaction_2d(),
        }
    }

    pub fn dim(self) -> usize {
        self.problem().dim()
    }

    pub fn exact_lofi(self, x: &[f64]) -> f64 {
        match self {
            Benchmark::Fn1dSinSq => (8.0 * x[0]).sin(),
            Benchmark::Fn1dBias => {
                let s = (8.0 * PI * x[0]).sin();
                (x[0] - SQRT_2) * s * s + x[0] - 2.0
            }
            Benchmark::Fn4d => 1.2 * self.exact_hifi(x) - 0.5,
            Benchmark::Inv1d => (8.0 * PI * x[0]).sin(),
            Benchmark::Inv2d => 0.8 * self.exact_hifi(x) + 0.2,
        }
    }

    pub fn exact_hifi(self, x: &[f64]) -> f64 {
        match self {
            Benchmark::Fn1dSinSq => {
                let ul = (8.0 * x[0]).sin();
                (x[0] - SQRT_2) * ul * ul
            }
            Benchmark::Fn1dBias => self.exact_lofi(x) - x[0] + 2.0,
            Benchmark::Fn4d => {
                0.5 * (0.1 * (x[0] + x[1]).exp() - x[3] * (12.0 * PI * x[2]).sin() + x[2])
            }
            Benchmark::Inv1d => exact_inv1d(x[0]).0,
            Benchmark::Inv2d => (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin(),
        }
    }

    /// Forcing obtained by applying the operator to the exact solution; `None` for regression.
    pub fn exact_forcing(self, x: &[f64], k: f64) -> Option<f64> {
        match self {
            Benchmark::Inv1d => {
                let (u, ux, uxx) = exact_inv1d(x[0]);
                Some(residual_1d_value(u, ux, uxx, k))
            }
            Benchmark::Inv2d => {
                let (u, uxx, uyy) = exact_inv2d(x[0], x[1]);
                Some(residual_2d_value(u, uxx, uyy, k))
            }
            _ => None,
        }
    }
}

/// `(u, u_x, u_xx)` for `u = (x - sqrt2) sin^2(8 pi x)`.
pub fn exact_inv1d(x: f64) -> (f64, f64, f64) {
    let w = 8.0 * PI;
    let (s, c) = (w * x).sin_cos();
    let a = x - SQRT_2;
    let u = a * s * s;
    let ux = s * s + 2.0 * w * a * s * c;
    let uxx = 4.0 * w * s * c + 2.0 * w * w * a * (c * c - s * s);
    (u, ux, uxx)
}

/// `(u, u_xx, u_yy)` for `u = sin(2 pi x) sin(2 pi y)`.
pub fn exact_inv2d(x: f64, y: f64) -> (f64, f64, f64) {
    let w = 2.0 * PI;
    let u = (w * x).sin() * (w * y).sin();
    (u, -w * w * u, -w * w * u)
}

/// Sensor placement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Evenly spaced including both ends (1D only).
    Uniform,
    /// Independent uniform draws over the domain.
    Random,
    /// 1D random draws with `above` points in `[cut, hi]` and the rest in `[lo, cut)`.
    RandomSplit { cut: f64, above: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub benchmark: Benchmark,
    pub lofi_count: usize,
    pub lofi_noise: f64,
    pub lofi_layout: Layout,
    pub hifi_u_count: usize,
    pub hifi_u_noise: f64,
    pub hifi_u_layout: Layout,
    pub hifi_f_count: usize,
    pub hifi_f_noise: f64,
    /// Extra `u` sensors per boundary facet (endpoint in 1D, edge in 2D), added to `hifi_u`.
    pub boundary_per_facet: usize,
    /// Value of the unknown constant used to synthesize forcing data.
    pub true_k: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Data sizes and noise levels of the reference experiments (noise-free low fidelity).
    pub fn reference(benchmark: Benchmark, seed: u64) -> Self {
        let base = Self {
            benchmark,
            lofi_count: 100,
            lofi_noise: 0.0,
            lofi_layout: Layout::Uniform,
            hifi_u_count: 14,
            hifi_u_noise: 0.01,
            hifi_u_layout: Layout::Uniform,
            hifi_f_count: 0,
            hifi_f_noise: 0.01,
            boundary_per_facet: 0,
            true_k: 1.0,
            seed,
        };
        match benchmark {
            Benchmark::Fn1dSinSq | Benchmark::Fn1dBias => base,
            Benchmark::Fn4d => Self {
                lofi_count: 25_000,
                lofi_layout: Layout::Random,
                hifi_u_count: 150,
                hifi_u_layout: Layout::Random,
                ..base
            },
            Benchmark::Inv1d => Self {
                lofi_count: 500,
                hifi_u_count: 10,
                hifi_u_layout: Layout::Random,
                hifi_f_count: 10,
                boundary_per_facet: 1,
                ..base
            },
            Benchmark::Inv2d => Self {
                lofi_count: 6_000,
                lofi_layout: Layout::Random,
                hifi_u_count: 10,
                hifi_u_layout: Layout::Random,
                hifi_f_count: 20,
                boundary_per_facet: 20,
                ..base
            },
        }
    }
}

fn place(
    layout: Layout,
    n: usize,
    bounds: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    match layout {
        Layout::Uniform => {
            if bounds.len() != 1 {
                return Err(Error::config("uniform layout is only defined in 1D"));
            }
            let (lo, hi) = bounds[0];
            Ok((0..n)
                .map(|i| {
                    let t = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
                    vec![lo + t * (hi - lo)]
                })
                .collect())
        }
        Layout::Random => Ok((0..n)
            .map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect())
            .collect()),
        Layout::RandomSplit { cut, above } => {
            if bounds.len() != 1 {
                return Err(Error::config("split layout is only defined in 1D"));
            }
            let (lo, hi) = bounds[0];
            if !(lo < cut && cut < hi) || above > n {
                return Err(Error::config("split layout needs lo < cut < hi and above <= count"));
            }
            let mut pts: Vec<Vec<f64>> = (0..n - above)
                .map(|_| vec![rng.random_range(lo..cut)])
                .collect();
            pts.extend((0..above).map(|_| vec![rng.random_range(cut..hi)]));
            Ok(pts)
        }
    }
}

/// Evenly spaced interior positions of `n` sensors on each boundary facet.
fn boundary_points(bounds: &[(f64, f64)], per_facet: usize) -> Vec<Vec<f64>> {
    if per_facet == 0 {
        return Vec::new();
    }
    match bounds.len() {
        1 => {
            let (lo, hi) = bounds[0];
            (0..per_facet)
                .flat_map(|_| [vec![lo], vec![hi]])
                .collect()
        }
        2 => {
            let ((x0, x1), (y0, y1)) = (bounds[0], bounds[1]);
            let t = |i: usize| (i as f64 + 0.5) / per_facet as f64;
            let mut pts = Vec::with_capacity(4 * per_facet);
            for i in 0..per_facet {
                pts.push(vec![x0 + t(i) * (x1 - x0), y0]);
            }
            for i in 0..per_facet {
                pts.push(vec![x1, y0 + t(i) * (y1 - y0)]);
            }
            for i in 0..per_facet {
                pts.push(vec![x1 - t(i) * (x1 - x0), y1]);
            }
            for i in 0..per_facet {
                pts.push(vec![x0, y1 - t(i) * (y1 - y0)]);
            }
            pts
        }
        _ => Vec::new(),
    }
}

/// Adds `N(0, sigma^2)` noise; `sigma == 0` leaves values exact.
pub fn add_noise(values: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    if sigma == 0.0 {
        return Ok(());
    }
    let normal =
        Normal::new(0.0, sigma).map_err(|e| Error::config(format!("noise scale {sigma}: {e}")))?;
    for v in values {
        *v += normal.sample(rng);
    }
    Ok(())
}

fn observations(
    points: Vec<Vec<f64>>,
    truth: impl Fn(&[f64]) -> f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Observation>> {
    let mut values: Vec<f64> = points.iter().map(|p| truth(p)).collect();
    add_noise(&mut values, sigma, rng)?;
    Ok(points
        .into_iter()
        .zip(values)
        .map(|(x, value)| Observation { x, value, sigma })
        .collect())
}

/// Deterministic synthetic dataset. Each sensor set draws from its own seed stream.
pub fn generate(spec: &GeneratorSpec) -> Result<BiFidelityDataset> {
    let b = spec.benchmark;
    let problem = b.problem();
    let bounds = &problem.bounds;
    let stream = |tag: &str| ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, tag));

    let mut rng = stream("lofi-x");
    let lofi_x = place(spec.lofi_layout, spec.lofi_count, bounds, &mut rng)?;
    let lofi = observations(lofi_x, |x| b.exact_lofi(x), spec.lofi_noise, &mut stream("lofi-noise"))?;

    let mut rng = stream("hifi-u-x");
    let mut u_x = place(spec.hifi_u_layout, spec.hifi_u_count, bounds, &mut rng)?;
    if spec.boundary_per_facet > 0 && !problem.is_inverse() {
        return Err(Error::config("boundary sensors only apply to inverse problems"));
    }
    u_x.extend(boundary_points(bounds, spec.boundary_per_facet));
    let hifi_u = observations(u_x, |x| b.exact_hifi(x), spec.hifi_u_noise, &mut stream("hifi-u-noise"))?;

    let hifi_f = if spec.hifi_f_count > 0 {
        if !problem.is_inverse() {
            return Err(Error::config(format!("{} has no forcing term", b.name())));
        }
        let mut rng = stream("hifi-f-x");
        let f_x = place(Layout::Random, spec.hifi_f_count, bounds, &mut rng)?;
        let k = spec.true_k;
        observations(
            f_x,
            |x| b.exact_forcing(x, k).expect("inverse benchmark"),
            spec.hifi_f_noise,
            &mut stream("hifi-f-noise"),
        )?
    } else {
        Vec::new()
    };

    let ds = BiFidelityDataset {
        dim: problem.dim(),
        lofi,
        hifi_u,
        hifi_f,
        hifi_b: Vec::new(),
    };
    ds.validate(Some(&problem))?;
    Ok(ds)
}

/// `n` evenly spaced points spanning a 1D interval, or `n` seeded random points otherwise.
pub fn evaluation_points(bounds: &[(f64, f64)], n: usize, seed: u64) -> Vec<Vec<f64>> {
    if bounds.len() == 1 {
        place(Layout::Uniform, n, bounds, &mut ChaCha8Rng::seed_from_u64(seed)).expect("1D layout")
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "evaluation"));
        place(Layout::Random, n, bounds, &mut rng).expect("random layout")
    }
}

/// Paths of a scattered bi-fidelity dataset on disk.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvPaths {
    pub lofi: Option<PathBuf>,
    pub hifi_u: Option<PathBuf>,
    pub hifi_f: Option<PathBuf>,
    pub hifi_b: Option<PathBuf>,
}

/// Parses one sensor file; `value_column` is `u`, `f` or `b`.
pub fn read_observations(reader: impl Read, value_column: &str) -> Result<(usize, Vec<Observation>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let mut dim = 0;
    while names.iter().any(|&n| n == format!("x{}", dim + 1)) {
        dim += 1;
    }
    let find = |col: &str| -> Result<usize> {
        names
            .iter()
            .position(|&n| n == col)
            .ok_or_else(|| Error::config(format!("missing required column '{col}'")))
    };
    if dim == 0 {
        return Err(Error::config("missing required column 'x1'"));
    }
    let x_cols: Vec<usize> = (1..=dim).map(|i| find(&format!("x{i}"))).collect::<Result<_>>()?;
    let v_col = find(value_column)?;
    let s_col = find("sigma")?;

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |c: usize| -> Result<f64> {
            let raw = rec.get(c).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing field {}", c + 1),
            })?;
            raw.trim().parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("'{raw}': {e}"),
            })
        };
        let x = x_cols.iter().map(|&c| field(c)).collect::<Result<Vec<_>>>()?;
        out.push(Observation {
            x,
            value: field(v_col)?,
            sigma: field(s_col)?,
        });
    }
    Ok((dim, out))
}

/// Query locations: columns `x1..xd` (or just `x` when `dim == 1`); other columns are ignored.
pub fn read_points(reader: impl Read, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |c: &str| names.iter().position(|n| n == c);
    let cols: Vec<usize> = if dim == 1 && find("x1").is_none() {
        vec![find("x").ok_or_else(|| Error::config("missing required column 'x'"))?]
    } else {
        (1..=dim)
            .map(|i| find(&format!("x{i}")).ok_or_else(|| Error::config(format!("missing required column 'x{i}'"))))
            .collect::<Result<_>>()?
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let p = cols
            .iter()
            .map(|&c| {
                let raw = rec.get(c).unwrap_or("");
                raw.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("'{raw}': {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_observations(mut w: impl Write, dim: usize, value_column: &str, obs: &[Observation]) -> Result<()> {
    let mut header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    header.push(value_column.to_string());
    header.push("sigma".into());
    writeln!(w, "{}", header.join(","))?;
    for o in obs {
        let mut row: Vec<String> = o.x.iter().map(|v| v.to_string()).collect();
        row.push(o.value.to_string());
        row.push(o.sigma.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn read_file(path: &Path, column: &str) -> Result<(usize, Vec<Observation>)> {
    let f = File::open(path)
        .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
    read_observations(f, column)
}

/// Loads whichever files are given; all of them must agree on the dimension.
pub fn load_bifidelity_csv(paths: &CsvPaths) -> Result<BiFidelityDataset> {
    let mut dim = None;
    let mut load = |p: &Option<PathBuf>, column: &str| -> Result<Vec<Observation>> {
        let Some(p) = p else { return Ok(Vec::new()) };
        let (d, obs) = read_file(p, column)?;
        match dim {
            Some(prev) if prev != d => Err(Error::config(format!(
                "{} has {d} coordinates, other files have {prev}",
                p.display()
            ))),
            _ => {
                dim = Some(d);
                Ok(obs)
            }
        }
    };
    let lofi = load(&paths.lofi, "u")?;
    let hifi_u = load(&paths.hifi_u, "u")?;
    let hifi_f = load(&paths.hifi_f, "f")?;
    let hifi_b = load(&paths.hifi_b, "b")?;
    let ds = BiFidelityDataset {
        dim: dim.ok_or_else(|| Error::config("no data files given"))?,
        lofi,
        hifi_u,
        hifi_f,
        hifi_b,
    };
    ds.validate(None)?;
    Ok(ds)
}

pub fn write_bifidelity_csv(ds: &BiFidelityDataset, paths: &CsvPaths) -> Result<()> {
    let sets = [
        (&paths.lofi, "u", &ds.lofi),
        (&paths.hifi_u, "u", &ds.hifi_u),
        (&paths.hifi_f, "f", &ds.hifi_f),
        (&paths.hifi_b, "b", &ds.hifi_b),
    ];
    for (path, column, obs) in sets {
        if let Some(p) = path {
            write_observations(File::create(p)?, ds.dim, column, obs)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinsq_pair_values() {
        let b = Benchmark::Fn1dSinSq;
        assert_eq!(b.exact_lofi(&[0.0]), 0.0);
        assert_eq!(b.exact_hifi(&[0.0]), 0.0);
        let x = PI / 16.0;
        assert!((b.exact_lofi(&[x]) - 1.0).abs() < 1e-15);
        assert!((b.exact_hifi(&[x]) - (x - SQRT_2)).abs() < 1e-14);
        assert!((b.exact_hifi(&[x]) + 1.217_86).abs() < 1e-5);
    }

    #[test]
    fn fn4d_values() {
        let b = Benchmark::Fn4d;
        let x = [1.0, 1.0, 0.25, 1.0];
        let uh = b.exact_hifi(&x);
        assert!((uh - 0.5 * (0.1 * 2f64.exp() + 0.25)).abs() < 1e-12);
        assert!((uh - 0.494_45).abs() < 1e-5);
        assert!((b.exact_lofi(&x) - 0.093_34).abs() < 1e-5);
    }

    #[test]
    fn bias_pair_is_shifted() {
        let b = Benchmark::Fn1dBias;
        for x in [0.0, 0.3, 0.77] {
            assert!((b.exact_hifi(&[x]) - (b.exact_lofi(&[x]) - x + 2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn forcing_at_reference_points() {
        let f0 = Benchmark::Inv1d.exact_forcing(&[0.0], 1.0).unwrap();
        assert!((f0 + 2.0 * SQRT_2 / 3.0).abs() < 1e-12);
        let f = Benchmark::Inv2d.exact_forcing(&[0.25, 0.25], 1.0).unwrap();
        assert!((f - (-0.08 * PI * PI - 1.0)).abs() < 1e-12);
        assert!(Benchmark::Inv2d.exact_forcing(&[0.0, 0.0], 1.0).unwrap().abs() < 1e-15);
        assert!(Benchmark::Fn4d.exact_forcing(&[0.0; 4], 1.0).is_none());
    }

    #[test]
    fn unknown_generator_is_rejected() {
        assert!(Benchmark::parse("foo").is_err());
        assert_eq!(Benchmark::parse("inv2d").unwrap(), Benchmark::Inv2d);
    }

    #[test]
    fn generation_is_deterministic_and_sized() {
        let spec = GeneratorSpec::reference(Benchmark::Inv2d, 5);
        let spec = GeneratorSpec {
            lofi_count: 50,
            ..spec
        };
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        assert_eq!(a.lofi.len(), 50);
        assert_eq!(a.hifi_u.len(), 10 + 80);
        assert_eq!(a.hifi_f.len(), 20);
        let p = Benchmark::Inv2d.problem();
        assert_eq!(a.hifi_u[10..].iter().filter(|o| p.on_boundary(&o.x, 1e-12)).count(), 80);
    }

    #[test]
    fn inv1d_has_endpoint_sensors() {
        let ds = generate(&GeneratorSpec::reference(Benchmark::Inv1d, 1)).unwrap();
        let xs: Vec<f64> = ds.hifi_u[10..].iter().map(|o| o.x[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0]);
    }

    #[test]
    fn split_layout_respects_cut() {
        let spec = GeneratorSpec {
            hifi_u_count: 10,
            hifi_u_layout: Layout::RandomSplit { cut: 0.44, above: 2 },
            ..GeneratorSpec::reference(Benchmark::Fn1dSinSq, 3)
        };
        let ds = generate(&spec).unwrap();
        assert_eq!(ds.hifi_u.iter().filter(|o| o.x[0] >= 0.44).count(), 2);
    }

    #[test]
    fn noise_spread_matches_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut v = vec![0.0; 100_000];
        add_noise(&mut v, 0.05, &mut rng).unwrap();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 0.05).abs() < 0.02 * 0.05, "sd = {sd}");
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let text = "x1,u\n0.1,0.2\n";
        assert!(matches!(read_observations(text.as_bytes(), "u"), Err(Error::Config(_))));
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "x1,u,sigma\n0.1,0.2,0.01\n0.3,oops,0.01\n";
        match read_observations(text.as_bytes(), "u") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_hifi_file_loads_as_empty_set() {
        let (dim, obs) = read_observations("x1,x2,u,sigma\n".as_bytes(), "u").unwrap();
        assert_eq!(dim, 2);
        assert!(obs.is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&GeneratorSpec::reference(Benchmark::Inv1d, 2)).unwrap();
        let paths = CsvPaths {
            lofi: Some(dir.path().join("lofi.csv")),
            hifi_u: Some(dir.path().join("u.csv")),
            hifi_f: Some(dir.path().join("f.csv")),
            hifi_b: None,
        };
        write_bifidelity_csv(&ds, &paths).unwrap();
        let back = load_bifidelity_csv(&paths).unwrap();
        assert_eq!(back, ds);
    }
}
