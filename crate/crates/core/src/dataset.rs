//! Sample containers, the `.dfs` file format and the planted synthetic task.
//!
//! ```text
//! "DFS1"  u32 n  u32 dim  u32 P  f32 samples[n·dim]  u8 labels[n·P]
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::codec::{put_u32, write_atomic, Reader};
use crate::error::{Error, Result};
use crate::net::{make_synthetic_network, Network};
use crate::svm::MultiLabelSet;

const MAGIC: &[u8; 4] = b"DFS1";

/// Input vectors (row-major `n × dim`, single precision) with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    samples: Vec<f32>,
    labels: MultiLabelSet,
}

impl Dataset {
    pub fn new(dim: usize, samples: Vec<f32>, labels: MultiLabelSet) -> Result<Self> {
        if samples.len() != labels.n() * dim {
            return Err(Error::DimensionMismatch {
                op: "dataset samples (n*dim vs length)",
                left: labels.n() * dim,
                right: samples.len(),
            });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset samples"));
        }
        Ok(Dataset { dim, samples, labels })
    }

    pub fn n(&self) -> usize {
        self.labels.n()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.labels.classes()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    /// Sample `i` widened to f64 for the forward pass.
    pub fn input(&self, i: usize) -> Vec<f64> {
        self.sample(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn labels(&self) -> &MultiLabelSet {
        &self.labels
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.samples.len() * 4 + self.labels.raw().len());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.n());
        put_u32(&mut out, self.dim);
        put_u32(&mut out, self.classes());
        for v in &self.samples {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(self.labels.raw());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset file");
        r.magic(MAGIC)?;
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let count = n.checked_mul(dim).ok_or_else(|| r.malformed("n*dim overflows"))?;
        let samples = r.f32s(count)?;
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(r.malformed("non-finite sample value"));
        }
        let at = r.offset();
        let raw = r.take(n.checked_mul(classes).ok_or_else(|| r.malformed("n*P overflows"))?)?;
        if let Some(pos) = raw.iter().position(|&b| b > 1) {
            return Err(Error::Malformed {
                format: "dataset file",
                offset: at + pos,
                reason: format!("label byte {} is not 0 or 1", raw[pos]),
            });
        }
        r.finish()?;
        Dataset::new(dim, samples, MultiLabelSet::new(n, classes, raw.to_vec())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.encode())
    }
}

/// Parameters of the planted multi-label task.
///
/// Each class owns a Gaussian prototype in input space. A sample picks a
/// random non-empty class subset (each class independently with
/// probability `inclusion`), and its input is the sum of the chosen
/// prototypes plus `noise · N(0, I)`. Labels are the chosen subset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub seed: u64,
    pub n: usize,
    pub test_n: usize,
    /// Layer widths of the generated network, input first.
    pub dims: Vec<usize>,
    pub classes: usize,
    pub noise: f64,
    pub inclusion: f64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            seed: 42,
            n: 200,
            test_n: 200,
            dims: vec![64, 48, 32, 16],
            classes: 5,
            noise: 0.0,
            inclusion: 0.35,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub net: Network,
    pub train: Dataset,
    pub test: Dataset,
}

impl SyntheticTask {
    pub fn generate(&self) -> Result<SyntheticData> {
        if self.classes == 0 || self.n == 0 {
            return Err(Error::InvalidArgument("synthetic task needs n ≥ 1 and P ≥ 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise must be finite and ≥ 0, got {}", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.inclusion) {
            return Err(Error::InvalidArgument(format!("inclusion must lie in [0, 1], got {}", self.inclusion)));
        }
        let net = make_synthetic_network(self.seed, &self.dims)?;
        let dim = net.input_dim();

        // stream 0 of this seed belongs to the network weights
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let prototypes: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let train = self.draw(&mut rng, &prototypes, self.n)?;
        let test = self.draw(&mut rng, &prototypes, self.test_n)?;
        Ok(SyntheticData { net, train, test })
    }

    fn draw(&self, rng: &mut ChaCha8Rng, prototypes: &[Vec<f64>], n: usize) -> Result<Dataset> {
        let dim = prototypes[0].len();
        let p = self.classes;
        let mut samples = Vec::with_capacity(n * dim);
        let mut labels = vec![0u8; n * p];
        for i in 0..n {
            let row = &mut labels[i * p..(i + 1) * p];
            for slot in row.iter_mut() {
                *slot = u8::from(rng.random_bool(self.inclusion));
            }
            if row.iter().all(|&v| v == 0) {
                row[rng.random_range(0..p)] = 1;
            }
            let mut x = vec![0.0f64; dim];
            for (j, proto) in prototypes.iter().enumerate() {
                if row[j] == 1 {
                    x.iter_mut().zip(proto).for_each(|(xi, pi)| *xi += pi);
                }
            }
            for xi in &mut x {
                let e: f64 = rng.sample(StandardNormal);
                *xi += self.noise * e;
            }
            samples.extend(x.iter().map(|&v| v as f32));
        }
        Dataset::new(dim, samples, MultiLabelSet::new(n, p, labels)?)
    }
}
