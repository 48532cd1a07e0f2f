//! Full-batch classification objectives and the synthetic datasets they run on.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{self, Architecture, OutputHead, ParamVector, Targets};

const HEADER_TAG: &str = "# qgd-dataset v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major `n x d` matrix.
    inputs: Vec<f64>,
    labels: Vec<usize>,
    seed: u64,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("dataset needs at least one sample".into()));
        }
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                what: "dataset inputs",
                expected: labels.len() * dim,
                got: inputs.len(),
            });
        }
        if let Some(i) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation {
                row: i / dim,
                msg: "non-finite input value".into(),
            });
        }
        if let Some((row, &t)) = labels.iter().enumerate().find(|(_, &t)| t >= classes) {
            return Err(Error::Validation {
                row,
                msg: format!("label {t} outside [0, {classes})"),
            });
        }
        Ok(Self {
            inputs,
            labels,
            seed,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{HEADER_TAG}, seed={}, N={}, d={}, K={}\n",
            self.seed,
            self.len(),
            self.dim,
            self.classes
        );
        for (i, &label) in self.labels.iter().enumerate() {
            for v in self.row(i) {
                // 17 significant digits round-trip every f64 exactly.
                let _ = write!(out, "{v:.16e},");
            }
            let _ = writeln!(out, "{label}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
        let meta = parse_header(header)?;
        let mut inputs = Vec::with_capacity(meta.n * meta.d);
        let mut labels = Vec::with_capacity(meta.n);
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != meta.d + 1 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {} fields, found {}", meta.d + 1, fields.len()),
                });
            }
            for f in &fields[..meta.d] {
                let v: f64 = f.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("invalid float {f:?}"),
                })?;
                inputs.push(v);
            }
            let label: usize = fields[meta.d].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid label {:?}", fields[meta.d]),
            })?;
            labels.push(label);
        }
        if labels.len() != meta.n {
            return Err(Error::Parse {
                line: text.lines().count() + 1,
                msg: format!("expected {} rows, found {} (truncated file?)", meta.n, labels.len()),
            });
        }
        Self::new(inputs, labels, meta.d, meta.k, meta.seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    /// SHA-256 of the canonical CSV serialization, hex encoded.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }
}

struct HeaderMeta {
    seed: u64,
    n: usize,
    d: usize,
    k: usize,
}

fn parse_header(line: &str) -> Result<HeaderMeta> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let rest = line
        .strip_prefix(HEADER_TAG)
        .ok_or_else(|| bad(format!("missing `{HEADER_TAG}` header")))?;
    let (mut seed, mut n, mut d, mut k) = (None, None, None, None);
    for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header field {part:?}")))?;
        let parse = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| bad(format!("invalid value for {key}: {v:?}")))
        };
        match key {
            "seed" => seed = Some(parse(value)?),
            "N" => n = Some(parse(value)? as usize),
            "d" => d = Some(parse(value)? as usize),
            "K" => k = Some(parse(value)? as usize),
            _ => return Err(bad(format!("unknown header field {key:?}"))),
        }
    }
    match (seed, n, d, k) {
        (Some(seed), Some(n), Some(d), Some(k)) => Ok(HeaderMeta { seed, n, d, k }),
        _ => Err(bad("header must define seed, N, d and K".into())),
    }
}

/// `k` Gaussian clusters with centers drawn uniformly from `[-1, 1]^d`.
///
/// Sample `i` belongs to class `i % k`, so every class gets `n / k` or
/// `n / k + 1` points.
pub fn generate_dataset(seed: u64, n: usize, d: usize, k: usize, cluster_spread: f64) -> Result<Dataset> {
    if k < 2 || n < k || d == 0 {
        return Err(Error::Config(format!(
            "dataset sizes must satisfy N >= K >= 2 and d >= 1 (N={n}, d={d}, K={k})"
        )));
    }
    if !(cluster_spread.is_finite() && cluster_spread >= 0.0) {
        return Err(Error::Config(format!("invalid cluster spread {cluster_spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let centers: Vec<f64> = (0..k * d).map(|_| unit.sample(&mut rng)).collect();
    let noise = Normal::new(0.0, cluster_spread).map_err(|e| Error::Config(e.to_string()))?;
    let mut inputs = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        for j in 0..d {
            inputs.push(centers[c * d + j] + noise.sample(&mut rng));
        }
        labels.push(c);
    }
    Dataset::new(inputs, labels, d, k, seed)
}

/// `f(x)`: mean cross-entropy of a softmax classifier over a dataset.
#[derive(Debug, Clone)]
pub struct ObjectiveFn {
    arch: Architecture,
    dataset: Dataset,
    f_lb: f64,
}

impl ObjectiveFn {
    pub fn new(arch: Architecture, dataset: Dataset) -> Result<Self> {
        if arch.head() != OutputHead::SoftmaxXent {
            return Err(Error::Config("objective network needs a softmax head".into()));
        }
        if arch.input_width() != dataset.dim() {
            return Err(Error::DimensionMismatch {
                what: "objective input width",
                expected: dataset.dim(),
                got: arch.input_width(),
            });
        }
        if arch.output_width() != dataset.classes() {
            return Err(Error::DimensionMismatch {
                what: "objective output width",
                expected: dataset.classes(),
                got: arch.output_width(),
            });
        }
        Ok(Self {
            arch,
            dataset,
            f_lb: 0.0,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn f_lb(&self) -> f64 {
        self.f_lb
    }

    pub fn dim(&self) -> usize {
        self.arch.param_count()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        nn::loss(
            &self.arch,
            x,
            self.dataset.inputs(),
            Targets::Labels(self.dataset.labels()),
        )
    }

    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, ParamVector)> {
        nn::loss_and_gradient(
            &self.arch,
            x,
            self.dataset.inputs(),
            Targets::Labels(self.dataset.labels()),
        )
    }

    pub fn gradient(&self, x: &[f64]) -> Result<ParamVector> {
        self.value_and_gradient(x).map(|(_, g)| g)
    }

    /// Seeded starting point: each layer's entries uniform in `[-0.5, 0.5] / sqrt(fan_in)`.
    pub fn initial_point(&self, seed: u64) -> ParamVector {
        initial_point(&self.arch, seed)
    }
}

pub fn initial_point(arch: &Architecture, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = ParamVector::zeros(arch.param_count());
    for (range, (fan_in, _)) in arch.layer_ranges().into_iter().zip(arch.fans()) {
        let scale = 1.0 / (fan_in as f64).sqrt();
        for v in &mut x[range] {
            *v = rng.random_range(-0.5..=0.5) * scale;
        }
    }
    x
}
