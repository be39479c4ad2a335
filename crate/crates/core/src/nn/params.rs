use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::scalar::Scalar;

use super::tensor::Tensor;
use super::NnError;

/// Position of a parameter in its store's insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Gradients keyed by parameter; absent entries mean "not touched".
pub type GradMap<T> = BTreeMap<ParamId, Vec<T>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` over a `[fan_in, fan_out]` matrix.
    XavierUniform,
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

/// Named parameters in stable insertion order, with per-parameter
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Tensor<T>>,
    pub(crate) moments: Vec<Option<Moments<T>>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
            moments: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId, NnError> {
        if self.entries.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let (idx, _) = self.entries.insert_full(name.to_string(), tensor);
        self.moments.push(None);
        Ok(ParamId(idx))
    }

    /// Inserts a trainable parameter drawn from `init`.
    pub fn insert_init<R: Rng>(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId, NnError> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| T::lit(dist.sample(rng))).collect()
            }
            Init::XavierUniform => {
                let (fan_in, fan_out) = match shape.as_slice() {
                    [r, c] => (*r, *c),
                    _ => (n, n),
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
                (0..n).map(|_| T::lit(dist.sample(rng))).collect()
            }
        };
        self.insert(name, Tensor::new(shape, data)?.with_grad())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NnError> {
        self.entries
            .get_index_of(name)
            .map(ParamId)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).expect("valid id").0
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, n, _)| n.starts_with(prefix))
            .map(|(id, _, _)| id)
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for t in self.entries.values_mut() {
            t.zero_grad();
        }
    }

    pub fn accumulate(&mut self, grads: &GradMap<T>) {
        for (id, g) in grads {
            self.entries[id.0].accumulate_grad(g);
        }
    }

    /// Copy of the current gradients.
    pub fn grads(&self) -> GradMap<T> {
        self.iter()
            .filter_map(|(id, _, t)| t.grad.clone().map(|g| (id, g)))
            .collect()
    }

    /// New store holding only the entries selected by `keep`, renamed by
    /// `rename`. Moments are dropped.
    pub fn subset(
        &self,
        keep: impl Fn(&str) -> bool,
        rename: impl Fn(&str) -> String,
    ) -> Result<Self, NnError> {
        let mut out = ParamStore::new();
        for (_, name, t) in self.iter() {
            if keep(name) {
                let mut t = t.clone();
                t.grad = None;
                out.insert(&rename(name), t)?;
            }
        }
        Ok(out)
    }
}

/// Adds `src` into `dst`, entry by entry.
pub fn merge_grads<T: Scalar>(dst: &mut GradMap<T>, src: GradMap<T>) {
    for (id, g) in src {
        match dst.get_mut(&id) {
            Some(buf) => {
                for (b, x) in buf.iter_mut().zip(&g) {
                    *b = *b + *x;
                }
            }
            None => {
                dst.insert(id, g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::SplitMix64;

    #[test]
    fn insertion_order_is_stable() {
        let mut rng = SplitMix64::seed_from_u64(0);
        let mut s = ParamStore::<f64>::new();
        for name in ["z", "a", "m"] {
            s.insert_init(name, vec![2, 3], Init::XavierUniform, &mut rng)
                .unwrap();
        }
        let names: Vec<_> = s.iter().map(|(_, n, _)| n.to_string()).collect();
        assert_eq!(names, ["z", "a", "m"]);
        assert_eq!(s.id("a").unwrap(), ParamId(1));
        assert!(matches!(
            s.insert("a", Tensor::zeros(vec![1])),
            Err(NnError::DuplicateParam(_))
        ));
    }

    #[test]
    fn init_is_seeded() {
        let build = |seed| {
            let mut rng = SplitMix64::seed_from_u64(seed);
            let mut s = ParamStore::<f64>::new();
            s.insert_init("w", vec![4, 4], Init::XavierUniform, &mut rng)
                .unwrap();
            s.insert_init("e", vec![3, 4], Init::Normal(0.02), &mut rng)
                .unwrap();
            s
        };
        assert_eq!(build(1), build(1));
        assert_ne!(build(1), build(2));
        let s = build(3);
        let bound = (6.0f64 / 8.0).sqrt();
        assert!(s.get(ParamId(0)).data().iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn grads_accumulate() {
        let mut s = ParamStore::<f64>::new();
        let id = s.insert("w", Tensor::zeros(vec![2]).with_grad()).unwrap();
        let mut g = GradMap::new();
        g.insert(id, vec![1.0, 2.0]);
        s.accumulate(&g);
        s.accumulate(&g);
        assert_eq!(s.get(id).grad.as_deref(), Some(&[2.0, 4.0][..]));
        s.zero_grads();
        assert!(s.get(id).grad.is_none());
    }
}
