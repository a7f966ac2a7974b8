use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::graph::Mat;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named collection of trainable matrices.
///
/// Names are dotted paths (`decoder.lstm0.wx`); the segment before the first
/// dot is the parameter group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Mat>,
    lookup: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.lookup.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.lookup.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Xavier-uniform initialized `rows × cols` matrix.
    pub fn add_xavier<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        self.add_uniform(name, rows, cols, limit, rng)
    }

    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        limit: f64,
        rng: &mut R,
    ) -> ParamId {
        let dist = Uniform::new_inclusive(-limit, limit).expect("valid uniform bounds");
        let value = Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng));
        self.add(name, value)
    }

    pub fn add_const(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, Mat::from_elem((rows, cols), v))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn replace(&mut self, id: ParamId, value: Mat) {
        self.values[id.0] = value;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Parameter group names in first-seen order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for n in &self.names {
            let g = group_of(n);
            if !out.iter().any(|x| x == g) {
                out.push(g.to_string());
            }
        }
        out
    }

    /// Largest absolute element-wise difference per group between two sets
    /// with identical layouts.
    pub fn group_max_abs_diff(&self, other: &ParamSet) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (i, name) in self.names.iter().enumerate() {
            let a = &self.values[i];
            let diff = match other.id(name) {
                Some(j) if other.value(j).dim() == a.dim() => a
                    .iter()
                    .zip(other.value(j).iter())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max),
                _ => f64::INFINITY,
            };
            let e = out.entry(group_of(name).to_string()).or_insert(0.0f64);
            *e = e.max(diff);
        }
        out
    }

    pub fn to_safetensors(&self) -> Result<Vec<u8>> {
        let bytes: Vec<Vec<u8>> = self
            .values
            .iter()
            .map(|m| m.iter().flat_map(|v| v.to_le_bytes()).collect())
            .collect();
        let views = self
            .names
            .iter()
            .zip(&self.values)
            .zip(&bytes)
            .map(|((n, m), b)| {
                let view = TensorView::new(Dtype::F64, vec![m.nrows(), m.ncols()], b)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                Ok((n.clone(), view))
            })
            .collect::<Result<Vec<_>>>()?;
        safetensors::serialize(views, &None).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Restores values from an archive. The archive must contain exactly the
    /// parameters of `self` with matching shapes.
    pub fn load_safetensors(&mut self, bytes: &[u8]) -> Result<()> {
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if st.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "archive holds {} tensors, model expects {}",
                st.len(),
                self.len()
            )));
        }
        for i in 0..self.values.len() {
            let name = &self.names[i];
            let t = st
                .tensor(name)
                .map_err(|_| Error::Checkpoint(format!("missing tensor {name}")))?;
            let want = self.values[i].dim();
            if t.dtype() != Dtype::F64 || t.shape() != [want.0, want.1] {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: expected f64 {:?}, found {:?} {:?}",
                    want,
                    t.dtype(),
                    t.shape()
                )));
            }
            let data: Vec<f64> = t
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            self.values[i] = Array2::from_shape_vec(want, data).expect("shape checked");
        }
        Ok(())
    }
}

fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Gradient buffers aligned with a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Grads {
    values: Vec<Mat>,
}

impl Grads {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            values: params.values.iter().map(|v| Mat::zeros(v.dim())).collect(),
        }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Mat) {
        self.values[id.0] += g;
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            v.mapv_inplace(|x| x * c);
        }
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.global_norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }
}
