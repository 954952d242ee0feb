//! Redistribution problems, their JSON-lines file format, and a seeded
//! random generator of problem suites.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Axis, Mesh};
use crate::parse::{parse_mesh, parse_type, ParseError};
use crate::search::{check_problem, SynthesisError};
use crate::types::{DistDim, DistType};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub mesh: Mesh,
    pub source: DistType,
    pub target: DistType,
    pub bytes_per_element: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub mesh: String,
    pub from: String,
    pub to: String,
    #[serde(default = "default_bytes")]
    pub bytes_per_element: u64,
}

fn default_bytes() -> u64 {
    4
}

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("malformed problem line: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{field}: {error}")]
    Parse { field: &'static str, error: ParseError },
    #[error(transparent)]
    Invalid(#[from] SynthesisError),
}

impl Problem {
    pub fn new(mesh: Mesh, source: DistType, target: DistType) -> Self {
        Problem {
            mesh,
            source,
            target,
            bytes_per_element: default_bytes(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        check_problem(&self.mesh, &self.source, &self.target)
    }

    pub fn record(&self) -> ProblemRecord {
        ProblemRecord {
            mesh: self.mesh.to_string(),
            from: self.source.to_string(),
            to: self.target.to_string(),
            bytes_per_element: self.bytes_per_element,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.record()).expect("records serialize")
    }

    pub fn from_record(r: &ProblemRecord) -> Result<Self, ProblemError> {
        let field = |field: &'static str| move |error| ProblemError::Parse { field, error };
        let p = Problem {
            mesh: parse_mesh(&r.mesh).map_err(field("mesh"))?,
            source: parse_type(&r.from).map_err(field("from"))?,
            target: parse_type(&r.to).map_err(field("to"))?,
            bytes_per_element: r.bytes_per_element,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_json_line(line: &str) -> Result<Self, ProblemError> {
        Problem::from_record(&serde_json::from_str(line)?)
    }
}

/// Reads a JSON-lines problem file, skipping blank lines. Errors carry the
/// 1-based line number.
pub fn read_problems(text: &str) -> Vec<(usize, Result<Problem, ProblemError>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, Problem::from_json_line(l)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteConfig {
    pub count: usize,
    pub axes: usize,
    pub max_rank: usize,
    /// Inclusive range of global element counts.
    pub min_elements: u64,
    pub max_elements: u64,
    pub axis_sizes: Vec<u64>,
    pub bytes_per_element: u64,
    pub seed: u64,
}

impl SuiteConfig {
    /// Small arrays that the simulator can check quickly.
    pub fn desk(count: usize, seed: u64) -> Self {
        SuiteConfig {
            count,
            axes: 3,
            max_rank: 6,
            min_elements: 1 << 8,
            max_elements: 1 << 16,
            axis_sizes: vec![2, 3, 4, 5, 6, 8],
            bytes_per_element: 4,
            seed,
        }
    }

    /// 64 MB to 800 MB arrays of 4-byte elements.
    pub fn large(count: usize, seed: u64) -> Self {
        SuiteConfig {
            min_elements: (64 << 20) / 4,
            max_elements: (800 << 20) / 4,
            ..SuiteConfig::desk(count, seed)
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Assigns each axis to a dimension or to nobody, uniformly, and shuffles
/// the order of axes within every dimension.
fn sample_layout(rng: &mut ChaCha8Rng, names: &[String], rank: usize) -> Vec<Vec<String>> {
    let mut dims = vec![Vec::new(); rank];
    for name in names {
        let choice = rng.gen_range(0..=rank);
        if choice < rank {
            dims[choice].push(name.clone());
        }
    }
    for d in &mut dims {
        d.shuffle(rng);
    }
    dims
}

fn build_type(mesh: &Mesh, layout: &[Vec<String>], global: &[u64]) -> DistType {
    DistType::new(
        layout
            .iter()
            .zip(global)
            .map(|(axes, &g)| {
                let n: u64 = axes.iter().map(|a| mesh.size_of(a).expect("mesh axis")).product();
                DistDim::new(g / n, axes.iter().cloned(), g)
            })
            .collect(),
    )
}

fn sample_problem(rng: &mut ChaCha8Rng, config: &SuiteConfig) -> Option<Problem> {
    let names: Vec<String> = (0..config.axes)
        .map(|k| {
            if k < 26 {
                ((b'a' + k as u8) as char).to_string()
            } else {
                format!("a{k}")
            }
        })
        .collect();
    let axes: Vec<Axis> = names
        .iter()
        .map(|n| Axis::new(n.clone(), *config.axis_sizes.choose(rng).expect("axis sizes")))
        .collect();
    let mesh = Mesh::new(axes).ok()?;
    let rank = rng.gen_range(1..=config.max_rank.max(1));
    let src = sample_layout(rng, &names, rank);
    let dst = sample_layout(rng, &names, rank);
    let product = |axes: &[String]| -> u64 { axes.iter().map(|a| mesh.size_of(a).expect("mesh axis")).product() };
    let mut global: Vec<u64> = (0..rank).map(|i| lcm(product(&src[i]), product(&dst[i]))).collect();
    let mut total: u64 = global.iter().product();
    if total > config.max_elements {
        return None;
    }
    // Log-uniform target size, reached by growing random dimensions.
    let lo = (config.min_elements.max(1) as f64).ln();
    let hi = (config.max_elements.max(1) as f64).ln();
    let goal = rng.gen_range(lo..=hi).exp() as u64;
    let mut stuck = 0;
    while total < goal && stuck < 32 {
        let f = *[2u64, 2, 2, 3].choose(rng).expect("nonempty");
        if total * f > config.max_elements {
            stuck += 1;
            continue;
        }
        let i = rng.gen_range(0..rank);
        global[i] *= f;
        total *= f;
    }
    if total < config.min_elements {
        return None;
    }
    let p = Problem {
        source: build_type(&mesh, &src, &global),
        target: build_type(&mesh, &dst, &global),
        mesh,
        bytes_per_element: config.bytes_per_element,
    };
    p.validate().ok()?;
    Some(p)
}

/// Generates `config.count` valid problems; the same config always yields
/// the same problems.
pub fn generate(config: &SuiteConfig) -> Vec<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.count);
    while out.len() < config.count {
        if let Some(p) = sample_problem(&mut rng, config) {
            out.push(p);
        }
    }
    out
}
