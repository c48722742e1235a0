//! Named trainable parameters and the flat-text checkpoint format.
//!
//! A checkpoint holds one parameter per line:
//!
//! ```text
//! name,dim0 dim1 ...,v0 v1 v2 ...
//! ```
//!
//! Lines are sorted by name. Values use Rust's shortest round-trip float
//! formatting, so save followed by load is bit-exact.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Owns every parameter of one model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad });
        Ok(id)
    }

    /// Glorot-uniform weight in ±sqrt(6 / (fan_in + fan_out)).
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        self.add(name, Tensor::new(vec![fan_in, fan_out], data)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &Tensor) {
        self.params[id.0].grad.add_assign(grad);
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Tensor]) {
        assert_eq!(values.len(), self.params.len());
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v.clone();
        }
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let mut order: Vec<&Parameter> = self.params.iter().collect();
        order.sort_by(|a, b| a.name.cmp(&b.name));
        for p in order {
            let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            let vals: Vec<String> = p.value.data().iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{},{},{}", p.name, dims.join(" "), vals.join(" "))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_checkpoint(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Loads values into the existing parameters. Every parameter must be
    /// present with a matching shape, and no unknown names may appear.
    pub fn read_checkpoint<R: BufRead>(&mut self, input: R) -> Result<()> {
        let mut seen = vec![false; self.params.len()];
        let mut loaded = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (name, shape, data) = parse_record(&line)
                .ok_or_else(|| Error::Checkpoint(format!("malformed line {}", lineno + 1)))?;
            let id = self
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
            let expected = self.params[id.0].value.shape();
            if expected != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {shape:?}, model expects {expected:?}"
                )));
            }
            seen[id.0] = true;
            loaded.push((id, Tensor::new(shape, data)?));
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Checkpoint(format!(
                "parameter `{}` missing from checkpoint",
                self.params[missing].name
            )));
        }
        for (id, value) in loaded {
            self.params[id.0].value = value;
        }
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let file = std::fs::File::open(path)?;
        self.read_checkpoint(std::io::BufReader::new(file))
    }
}

fn parse_record(line: &str) -> Option<(&str, Vec<usize>, Vec<f64>)> {
    let mut fields = line.splitn(3, ',');
    let name = fields.next()?;
    let shape = fields
        .next()?
        .split_whitespace()
        .map(|d| d.parse().ok())
        .collect::<Option<Vec<usize>>>()?;
    let data = fields
        .next()?
        .split_whitespace()
        .map(|v| v.parse().ok())
        .collect::<Option<Vec<f64>>>()?;
    Some((name, shape, data))
}
