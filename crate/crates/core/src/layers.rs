//! Parameter creation and the weight/bias pair shared by convolutions and
//! fully-connected layers.
//!
//! Weight containers are generic over the handle type: `ParamId` while
//! stored, `Var` once bound to a graph.

use mxj_autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Affine<T> {
    pub w: T,
    pub b: T,
}

impl<T: Copy> Affine<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(T) -> U) -> Affine<U> {
        Affine { w: f(self.w), b: f(self.b) }
    }
}

impl Affine<ParamId> {
    pub fn bind(&self, g: &mut Graph) -> Affine<Var> {
        self.map(&mut |id| g.param(id))
    }
}

/// Registers freshly initialised parameters under a name prefix.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let rng = &mut self.rng;
        let value = Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound));
        self.store.add(name, value)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.add(name, Tensor::zeros(shape))
    }

    /// He-uniform weights for a layer feeding a ReLU, zero bias.
    pub fn kaiming(&mut self, name: &str, w_shape: &[usize], fan_in: usize, bias: usize) -> Affine<ParamId> {
        let w = self.uniform(&format!("{name}.weight"), w_shape, (6.0 / fan_in as f64).sqrt());
        let b = self.zeros(&format!("{name}.bias"), &[bias]);
        Affine { w, b }
    }

    /// `1/sqrt(fan_in)` weights for a linear output layer, zero bias.
    pub fn output(&mut self, name: &str, w_shape: &[usize], fan_in: usize, bias: usize) -> Affine<ParamId> {
        let w = self.uniform(&format!("{name}.weight"), w_shape, 1.0 / (fan_in as f64).sqrt());
        let b = self.zeros(&format!("{name}.bias"), &[bias]);
        Affine { w, b }
    }

    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> Affine<ParamId> {
        self.kaiming(name, &[c_out, c_in, k, k], c_in * k * k, c_out)
    }

    pub fn linear(&mut self, name: &str, n_in: usize, n_out: usize) -> Affine<ParamId> {
        self.kaiming(name, &[n_out, n_in], n_in, n_out)
    }
}
