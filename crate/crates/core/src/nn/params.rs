//! Named parameter storage and binding into autodiff graphs.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use regionmix_autograd::{Gradients, Graph, Scalar, Tensor, Var};

/// Below this singular-value estimate a weight is used unnormalized.
pub const SIGMA_FLOOR: f64 = 1e-10;

/// Power-iteration vectors for one spectrally normalized weight, viewed as
/// a `[rows, rest]` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Master copy of every parameter, kept in `f64`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor<f64>>,
    spectral: BTreeMap<String, SpectralState>,
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= n);
}

/// One power-iteration step on `w` (`rows × cols`, row-major).
fn power_step(w: &[f64], rows: usize, cols: usize, st: &mut SpectralState) {
    for (c, vc) in st.v.iter_mut().enumerate() {
        *vc = (0..rows).map(|r| w[r * cols + c] * st.u[r]).sum();
    }
    normalize(&mut st.v);
    for (r, ur) in st.u.iter_mut().enumerate() {
        *ur = w[r * cols..(r + 1) * cols]
            .iter()
            .zip(&st.v)
            .map(|(a, b)| a * b)
            .sum();
    }
    normalize(&mut st.u);
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f64>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f64>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<f64>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<f64>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn spectral(&self, name: &str) -> Option<&SpectralState> {
        self.spectral.get(name)
    }

    pub fn spectral_iter(&self) -> impl Iterator<Item = (&String, &SpectralState)> {
        self.spectral.iter()
    }

    pub fn set_spectral(&mut self, name: impl Into<String>, st: SpectralState) {
        self.spectral.insert(name.into(), st);
    }

    /// Registers `name` for spectral normalization with random start
    /// vectors, then runs `iters` power iterations.
    pub fn init_spectral<R: Rng + ?Sized>(&mut self, name: &str, rng: &mut R, iters: usize) {
        let w = &self.tensors[name];
        let rows = w.dim(0);
        let cols = w.numel() / rows;
        let mut u: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        normalize(&mut u);
        let mut st = SpectralState {
            u,
            v: vec![0.0; cols],
        };
        for _ in 0..iters.max(1) {
            power_step(w.data(), rows, cols, &mut st);
        }
        self.spectral.insert(name.to_string(), st);
    }

    /// Advances the power iteration of every normalized weight selected by
    /// `filter`.
    pub fn refresh_spectral(&mut self, filter: impl Fn(&str) -> bool, iters: usize) {
        for (name, st) in self.spectral.iter_mut() {
            if !filter(name) {
                continue;
            }
            let w = &self.tensors[name];
            let rows = w.dim(0);
            for _ in 0..iters {
                power_step(w.data(), rows, w.numel() / rows, st);
            }
        }
    }

    /// Current estimate `uᵀ W v` of the top singular value of `name`.
    pub fn sigma_estimate(&self, name: &str) -> Option<f64> {
        let st = self.spectral.get(name)?;
        let w = self.tensors.get(name)?;
        let cols = w.numel() / w.dim(0);
        Some(
            st.u
                .iter()
                .enumerate()
                .map(|(r, ur)| {
                    ur * w.data()[r * cols..(r + 1) * cols]
                        .iter()
                        .zip(&st.v)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .sum(),
        )
    }

    /// Parameters (with their spectral state) whose names pass `keep`.
    pub fn subset(&self, keep: impl Fn(&str) -> bool) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(n, _)| keep(n))
                .map(|(n, t)| (n.clone(), t.clone()))
                .collect(),
            spectral: self
                .spectral
                .iter()
                .filter(|(n, _)| keep(n))
                .map(|(n, s)| (n.clone(), s.clone()))
                .collect(),
        }
    }

    /// Overwrites parameters and spectral state with every entry of `other`.
    pub fn absorb(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
        self.spectral.extend(other.spectral);
    }

    /// Copies parameters (not spectral state) from `other` for names present
    /// in both.
    pub fn copy_from(&mut self, other: &ParamStore) {
        for (name, t) in self.tensors.iter_mut() {
            if let Some(src) = other.tensors.get(name) {
                if src.shape() == t.shape() {
                    *t = src.clone();
                }
            }
        }
    }
}

/// Binds stored parameters into a graph as leaves (trainable) or constants.
pub struct Binder<'g, T: Scalar> {
    graph: &'g Graph<T>,
    store: &'g ParamStore,
    trainable: Box<dyn Fn(&str) -> bool + 'g>,
    bound: RefCell<BTreeMap<String, Var<'g, T>>>,
    normalized: RefCell<BTreeMap<String, Var<'g, T>>>,
}

impl<'g, T: Scalar> Binder<'g, T> {
    pub fn new(graph: &'g Graph<T>, store: &'g ParamStore, trainable: impl Fn(&str) -> bool + 'g) -> Self {
        Self {
            graph,
            store,
            trainable: Box::new(trainable),
            bound: RefCell::new(BTreeMap::new()),
            normalized: RefCell::new(BTreeMap::new()),
        }
    }

    /// Binder whose parameters are all constants.
    pub fn frozen(graph: &'g Graph<T>, store: &'g ParamStore) -> Self {
        Self::new(graph, store, |_| false)
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn store(&self) -> &'g ParamStore {
        self.store
    }

    pub fn param(&self, name: &str) -> Var<'g, T> {
        if let Some(v) = self.bound.borrow().get(name) {
            return *v;
        }
        let t = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` was never declared"))
            .cast::<T>();
        let v = if (self.trainable)(name) {
            self.graph.leaf(t)
        } else {
            self.graph.constant(t)
        };
        self.bound.borrow_mut().insert(name.to_string(), v);
        v
    }

    /// The parameter divided by its spectral-norm estimate.
    pub fn sn_param(&self, name: &str) -> Var<'g, T> {
        if let Some(v) = self.normalized.borrow().get(name) {
            return *v;
        }
        let st = self
            .store
            .spectral(name)
            .unwrap_or_else(|| panic!("`{name}` has no spectral state"));
        // a (numerically) zero weight has no direction to normalize
        let sigma = self.store.sigma_estimate(name).unwrap_or(0.0);
        let w = if sigma.abs() < SIGMA_FLOOR {
            self.param(name)
        } else {
            let u: Vec<T> = st.u.iter().map(|&x| T::from_f64(x)).collect();
            let v: Vec<T> = st.v.iter().map(|&x| T::from_f64(x)).collect();
            self.param(name).spectral_normalize(&u, &v)
        };
        self.normalized.borrow_mut().insert(name.to_string(), w);
        w
    }

    /// Gradients of trainable bound parameters, mapped to `f64` with `part`
    /// (the primal value for real scalars, the tangent for dual numbers).
    pub fn gradients(&self, grads: &Gradients<T>, part: impl Fn(T) -> f64) -> BTreeMap<String, Tensor<f64>> {
        self.bound
            .borrow()
            .iter()
            .filter(|(name, _)| (self.trainable)(name))
            .map(|(name, &v)| {
                let g = grads.get_or_zeros(v);
                let data = g.data().iter().map(|&x| part(x)).collect();
                (name.clone(), Tensor::new(g.shape(), data))
            })
            .collect()
    }
}

pub(crate) fn normal_tensor<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                std * z
            })
            .collect::<Vec<f64>>(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn power_iteration_finds_top_singular_value() {
        let mut store = ParamStore::new();
        // diag(3, 1) embedded in 2x3
        store.insert("w", Tensor::from_f64(&[2, 3], &[3.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        store.init_spectral("w", &mut rng, 50);
        assert!((store.sigma_estimate("w").unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn binder_reuses_bound_vars_and_reports_trainable_grads() {
        let mut store = ParamStore::new();
        store.insert("a.w", Tensor::from_f64(&[2], &[1.0, 2.0]));
        store.insert("b.w", Tensor::from_f64(&[2], &[3.0, 4.0]));
        let g = Graph::<f64>::new();
        let b = Binder::new(&g, &store, |n| n.starts_with("a."));
        let x = b.param("a.w");
        assert_eq!(b.param("a.w").value().data(), x.value().data());
        let y = b.param("a.w").mul(b.param("b.w")).sum();
        let grads = b.gradients(&g.backward(y), |v| v);
        assert_eq!(grads.len(), 1);
        assert_eq!(grads["a.w"].data(), &[3.0, 4.0]);
    }
}
