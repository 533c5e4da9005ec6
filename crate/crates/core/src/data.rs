//! Point-cloud files, labelled datasets, the synthetic shape set and the
//! rotation augmentation protocols.
//!
//! A dataset directory holds a `labels.csv` manifest of `path,label` rows
//! (paths relative to the directory, optional header), or `train/` and `test/`
//! subdirectories that each hold one. Cloud files are `.csv` or `.xyz`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::PointCloud;
use crate::group::{random_rotation, Rotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// `x,y,z` per line, optional non-numeric header line.
    Csv,
    /// Whitespace-separated triples, `#` comment lines.
    Xyz,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => Ok(Self::Csv),
            Some("xyz") => Ok(Self::Xyz),
            _ => Err(Error::Data(format!("{}: expected a .csv or .xyz file", path.display()))),
        }
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    parse_cloud(&text, format).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Data(format!("{}:{line}: {msg}", path.display())),
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses file contents; errors carry 1-based line numbers.
pub fn parse_cloud(text: &str, format: CloudFormat) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            CloudFormat::Csv => line.split(',').map(str::trim).collect(),
            CloudFormat::Xyz => {
                if line.starts_with('#') {
                    continue;
                }
                line.split_whitespace().collect()
            }
        };
        if format == CloudFormat::Csv && i == 0 && fields[0].parse::<f64>().is_err() {
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::Parse { line: line_no, msg: format!("expected 3 coordinates, found {}", fields.len()) });
        }
        let mut p = [0.0; 3];
        for (slot, f) in p.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse { line: line_no, msg: format!("bad coordinate {f:?}") })?;
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::Data("no points".into()));
    }
    PointCloud::new(points)
}

pub fn write_cloud_csv(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = String::new();
    for p in cloud.points() {
        out.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification { classes: usize },
    Regression { outputs: usize },
}

impl Task {
    /// Width of the network head's last layer.
    pub fn outputs(&self) -> usize {
        match *self {
            Task::Classification { classes } => classes,
            Task::Regression { outputs } => outputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<(PointCloud, Target)>,
    task: Task,
    split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<(PointCloud, Target)>, task: Task, split: Split) -> Result<Self> {
        for (i, (_, t)) in samples.iter().enumerate() {
            match (t, task) {
                (Target::Class(c), Task::Classification { classes }) if *c < classes => {}
                (Target::Values(v), Task::Regression { outputs }) if v.len() == outputs => {}
                _ => return Err(Error::Data(format!("sample {i}: target {t:?} does not fit task {task:?}"))),
            }
        }
        Ok(Self { samples, task, split })
    }

    pub fn samples(&self) -> &[(PointCloud, Target)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Deterministic shuffled split: the first `train_fraction` go to training.
    pub fn split_off(self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut samples = self.samples;
        samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((samples.len() as f64) * train_fraction).round() as usize;
        let test = samples.split_off(cut.min(samples.len()));
        (
            Dataset { samples, task: self.task, split: Split::Train },
            Dataset { samples: test, task: self.task, split: Split::Test },
        )
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples
            .iter()
            .filter_map(|(_, t)| match t {
                Target::Class(c) => Some(*c),
                Target::Values(_) => None,
            })
            .collect()
    }
}

fn read_manifest(dir: &Path, split: Split) -> Result<Vec<(PointCloud, Target)>> {
    let manifest = dir.join("labels.csv");
    let text = fs::read_to_string(&manifest)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest.display())))?;
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (path, label) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::Data(format!("{}:{}: expected path,label", manifest.display(), i + 1)))?;
        let label = match label.trim().parse::<usize>() {
            Ok(l) => l,
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Data(format!("{}:{}: bad label {label:?}", manifest.display(), i + 1)));
            }
        };
        let path: PathBuf = dir.join(path.trim());
        let cloud = load_cloud(&path, CloudFormat::from_path(&path)?)?;
        samples.push((cloud, Target::Class(label)));
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("{}: no samples ({split} split)", manifest.display())));
    }
    Ok(samples)
}

/// Loads a labelled dataset directory. Without `train/` and `test/`
/// subdirectories the single manifest is split 80/20 under `seed`.
pub fn load_dataset(dir: &Path, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = (dir.join("train"), dir.join("test"));
    let (train, test) = if train.join("labels.csv").exists() {
        let tr = read_manifest(&train, Split::Train)?;
        let te = if test.join("labels.csv").exists() { read_manifest(&test, Split::Test)? } else { Vec::new() };
        (tr, te)
    } else {
        let all = read_manifest(dir, Split::Train)?;
        let classes = class_count(&all, &[]);
        let ds = Dataset::new(all, Task::Classification { classes }, Split::Train)?;
        return Ok(ds.split_off(0.8, seed));
    };
    let classes = class_count(&train, &test);
    let task = Task::Classification { classes };
    Ok((Dataset::new(train, task, Split::Train)?, Dataset::new(test, task, Split::Test)?))
}

fn class_count(a: &[(PointCloud, Target)], b: &[(PointCloud, Target)]) -> usize {
    a.iter()
        .chain(b)
        .filter_map(|(_, t)| match t {
            Target::Class(c) => Some(c + 1),
            Target::Values(_) => None,
        })
        .max()
        .unwrap_or(0)
}

/// Writes one `.csv` per sample plus `labels.csv`.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("path,label\n");
    for (i, (cloud, target)) in ds.samples().iter().enumerate() {
        let Target::Class(label) = target else {
            return Err(Error::Data("only classification datasets can be saved".into()));
        };
        let name = format!("cloud_{i:05}.csv");
        write_cloud_csv(&dir.join(&name), cloud)?;
        manifest.push_str(&format!("{name},{label}\n"));
    }
    fs::write(dir.join("labels.csv"), manifest)?;
    Ok(())
}

pub const SYNTH_CLASSES: usize = 4;
pub const SYNTH_NOISE: f64 = 0.02;

/// Four shape classes told apart only by rotation-invariant geometry:
/// sphere, prolate ellipsoid (3:1:1), oblate ellipsoid (3:3:1) and two
/// separated spherical clusters. Points lie on the surfaces; every sample is
/// randomly rotated, permuted and translated, with Gaussian noise added.
pub fn synth_shapes(seed: u64, n_per_class: usize, points_per_cloud: usize) -> Result<Dataset> {
    if points_per_cloud < 8 {
        return Err(Error::Config(format!("need at least 8 points per cloud, got {points_per_cloud}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(SYNTH_CLASSES * n_per_class);
    for _ in 0..n_per_class {
        for class in 0..SYNTH_CLASSES {
            samples.push((synth_cloud(class, points_per_cloud, &mut rng), Target::Class(class)));
        }
    }
    Dataset::new(samples, Task::Classification { classes: SYNTH_CLASSES }, Split::Train)
}

fn unit_sphere_point(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let g: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if norm > 1e-12 {
            return g.map(|v| v / norm);
        }
    }
}

fn synth_cloud(class: usize, n: usize, rng: &mut impl Rng) -> PointCloud {
    let mut pts: Vec<[f64; 3]> = (0..n)
        .map(|j| {
            let u = unit_sphere_point(rng);
            match class {
                0 => u,
                1 => [u[0], u[1] / 3.0, u[2] / 3.0],
                2 => [u[0], u[1], u[2] / 3.0],
                _ => {
                    let side = if j % 2 == 0 { 0.7 } else { -0.7 };
                    [side + 0.3 * u[0], 0.3 * u[1], 0.3 * u[2]]
                }
            }
        })
        .collect();
    pts.shuffle(rng);
    let r = random_rotation(rng);
    let t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let pts = pts
        .into_iter()
        .map(|p| {
            let q = r.apply(p);
            std::array::from_fn(|a| q[a] + t[a] + SYNTH_NOISE * rng.sample::<f64, _>(StandardNormal))
        })
        .collect();
    PointCloud::new(pts).expect("clouds are non-empty")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentProtocol {
    None,
    /// Uniform rotation about the vertical (third) axis.
    Z,
    /// Haar-random rotation, determinant +1.
    So3,
}

impl FromStr for AugmentProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "z" => Ok(Self::Z),
            "so3" => Ok(Self::So3),
            _ => Err(Error::Config(format!("unknown augmentation {s:?}; expected none, z or so3"))),
        }
    }
}

impl fmt::Display for AugmentProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Self::None => "none",
            Self::Z => "z",
            Self::So3 => "so3",
        })
    }
}

/// Applies the protocol's random rotation (before centring).
pub fn augment(x: &PointCloud, protocol: AugmentProtocol, rng: &mut impl Rng) -> PointCloud {
    match protocol {
        AugmentProtocol::None => x.clone(),
        AugmentProtocol::Z => x.rotate(&Rotation::about_z(rng.random_range(0.0..std::f64::consts::TAU))),
        AugmentProtocol::So3 => x.rotate(&random_rotation(rng)),
    }
}
