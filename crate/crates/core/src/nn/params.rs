use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Real, Tensor};
use crate::container::{Container, Entry};
use crate::error::{Error, Result};

/// A named tensor with its accumulated gradient.
///
/// Non-trainable entries hold buffers such as batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

/// Insertion-ordered parameter collection.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Internal(format!("duplicate parameter `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param { name: name.to_string(), value, grad, trainable });
        Ok(())
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        self.insert(name, value, false)
    }

    /// He-normal initialisation with standard deviation `sqrt(2 / fan_in)`.
    pub fn add_he<R: Rng>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) -> Result<()> {
        self.add_normal(name, shape, (2.0 / fan_in.max(1) as f64).sqrt(), rng)
    }

    /// Standard deviation `sqrt(1 / fan_in)`, for layers not followed by a ReLU.
    pub fn add_lecun<R: Rng>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) -> Result<()> {
        self.add_normal(name, shape, (1.0 / fan_in.max(1) as f64).sqrt(), rng)
    }

    pub fn add_normal<R: Rng>(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut R) -> Result<()> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::Internal(e.to_string()))?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(normal.sample(rng))).collect();
        self.add(name, Tensor::from_vec(shape.to_vec(), data)?)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_ones(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.add(name, Tensor::full(shape, T::one()))
    }

    /// `prefix.{gamma,beta}` parameters and `prefix.running_{mean,var}` buffers.
    pub fn add_batch_norm(&mut self, prefix: &str, channels: usize) -> Result<()> {
        self.add_ones(&format!("{prefix}.gamma"), &[channels])?;
        self.add_zeros(&format!("{prefix}.beta"), &[channels])?;
        self.add_buffer(&format!("{prefix}.running_mean"), Tensor::zeros(&[channels]))?;
        self.add_buffer(&format!("{prefix}.running_var"), Tensor::full(&[channels], T::one()))
    }

    pub fn add_layer_norm(&mut self, prefix: &str, dim: usize) -> Result<()> {
        self.add_ones(&format!("{prefix}.gamma"), &[dim])?;
        self.add_zeros(&format!("{prefix}.beta"), &[dim])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_index(&self, idx: usize) -> &Param<T> {
        &self.params[idx]
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).map(|p| &p.value).ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let idx = self.index_of(name).ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
        let p = &mut self.params[idx];
        if p.value.shape() != value.shape() {
            return Err(Error::Shape(format!("`{name}`: stored {:?}, given {:?}", p.value.shape(), value.shape())));
        }
        p.value = value;
        Ok(())
    }

    pub(crate) fn accumulate_grad(&mut self, idx: usize, g: &[T]) -> Result<()> {
        let p = &mut self.params[idx];
        if p.grad.numel() != g.len() {
            return Err(Error::Internal(format!("gradient size mismatch for `{}`", p.name)));
        }
        for (d, &s) in p.grad.data_mut().iter_mut().zip(g) {
            *d += s;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn apply_buffer_updates(&mut self, updates: Vec<(String, Tensor<T>)>) -> Result<()> {
        for (name, value) in updates {
            self.set_value(&name, value)?;
        }
        Ok(())
    }

    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }
}

impl ParamStore<f32> {
    /// Appends every value, in store order, to `container`.
    pub fn write_into(&self, container: &mut Container) -> Result<()> {
        for p in &self.params {
            container.push(Entry::new(&p.name, p.value.shape().to_vec(), p.value.data().to_vec())?);
        }
        Ok(())
    }

    /// Overwrites every value from `container`; shapes must match exactly.
    pub fn load_from(&mut self, container: &Container) -> Result<()> {
        for p in &mut self.params {
            let e = container.require(&p.name)?;
            if e.dims != p.value.shape() {
                return Err(Error::Container(format!(
                    "`{}`: checkpoint {:?}, model {:?}",
                    p.name,
                    e.dims,
                    p.value.shape()
                )));
            }
            p.value = Tensor::from_vec(e.dims.clone(), e.data.clone())?;
        }
        Ok(())
    }
}
