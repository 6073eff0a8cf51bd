//! Per-slot decision features: four fixed-size summaries of the consumed
//! stores are embedded, related to each other by self-attention over the
//! four blocks, pooled, and fed through a recurrent cell.

use eprgail_nn::{Activation, Dense, Graph, LstmCell, ParamSet, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{StoreCatalog, UserHistory};
use crate::error::Result;
use crate::world::World;

/// Scales that map raw history quantities into roughly unit range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub categories: usize,
    pub price_scale: f64,
    pub distance_scale: f64,
    pub horizon: usize,
}

pub const SUMMARY_WIDTH: usize = 3;

impl Normalizer {
    pub fn for_world(world: &World) -> Self {
        Self {
            categories: world.catalog.category_count(),
            price_scale: world.catalog.price_range().1.max(1e-9),
            distance_scale: world.diagonal_km(),
            horizon: world.grid.horizon_slots,
        }
    }

    pub fn block_dims(&self) -> [usize; 4] {
        [self.categories, SUMMARY_WIDTH, SUMMARY_WIDTH, SUMMARY_WIDTH]
    }

    /// Per-store feature width: category one-hot, price, visits, distance.
    pub fn store_feature_dim(&self) -> usize {
        self.categories + 3
    }

    pub fn interval(&self, h: &UserHistory) -> f64 {
        h.interval as f64 / self.horizon as f64
    }

    pub fn visited(&self, h: &UserHistory) -> f64 {
        h.visited_count as f64 / self.horizon as f64
    }

    pub fn visit_count(&self, v: u32) -> f64 {
        (v as f64).ln_1p() / (self.horizon as f64).ln_1p()
    }

    /// Writes `[category one-hot, price, visits, distance]` for `store`.
    pub fn store_features(&self, h: &UserHistory, catalog: &StoreCatalog, store: usize, out: &mut [f64]) {
        let s = catalog.store(store);
        out.fill(0.0);
        if (s.category as usize) < self.categories {
            out[s.category as usize] = 1.0;
        }
        let c = self.categories;
        out[c] = s.avg_price / self.price_scale;
        out[c + 1] = self.visit_count(h.visits[store]);
        out[c + 2] = h.distances[store] / self.distance_scale;
    }

    /// The four summary blocks of the history consumed so far.
    pub fn summary(&self, h: &UserHistory, catalog: &StoreCatalog) -> [Vec<f64>; 4] {
        let total = h.total_purchases.max(1) as f64;
        let mut category = vec![0.0; self.categories];
        for (dst, &n) in category.iter_mut().zip(&h.category_counts) {
            *dst = n as f64 / total;
        }
        let price = h.price_summary(catalog).map(|p| p / self.price_scale).to_vec();
        let n = self.horizon as f64;
        let visit = vec![
            h.total_purchases as f64 / n,
            h.visited_count as f64 / n,
            h.interval as f64 / n,
        ];
        let distance = h.distance_summary().map(|d| d / self.distance_scale).to_vec();
        [category, price, visit, distance]
    }

    /// Stacks the summaries of several histories into four `[B, w]` tensors.
    pub fn summary_batch(&self, hs: &[&UserHistory], catalog: &StoreCatalog) -> [Tensor; 4] {
        let dims = self.block_dims();
        let mut data: [Vec<f64>; 4] = dims.map(|w| Vec::with_capacity(w * hs.len()));
        for h in hs {
            for (dst, block) in data.iter_mut().zip(self.summary(h, catalog)) {
                dst.extend(block);
            }
        }
        let mut k = 0;
        data.map(|d| {
            let t = Tensor::matrix(hs.len(), dims[k], d).expect("summary width");
            k += 1;
            t
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub embed_dim: usize,
    pub attn_dim: usize,
    pub hidden_dim: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            attn_dim: 32,
            hidden_dim: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub cfg: FeatureConfig,
    pub embed: [Dense; 4],
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub lstm: LstmCell,
}

const BLOCK_NAMES: [&str; 4] = ["category", "price", "visit", "distance"];

impl FeatureExtractor {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, norm: &Normalizer, cfg: FeatureConfig, rng: &mut R) -> Self {
        let dims = norm.block_dims();
        let e = cfg.embed_dim;
        let embed = [0, 1, 2, 3].map(|i| {
            Dense::new(
                params,
                &format!("embed.{}", BLOCK_NAMES[i]),
                dims[i],
                e,
                Activation::Relu,
                rng,
            )
        });
        let query = Dense::new(params, "attn.query", e, cfg.attn_dim, Activation::Relu, rng);
        let key = Dense::new(params, "attn.key", e, cfg.attn_dim, Activation::Relu, rng);
        let value = Dense::new(params, "attn.value", e, cfg.attn_dim, Activation::Relu, rng);
        let lstm = LstmCell::new(params, "encoder", cfg.attn_dim, cfg.hidden_dim, rng);
        Self {
            cfg,
            embed,
            query,
            key,
            value,
            lstm,
        }
    }

    /// `x_c`: the four ReLU-embedded blocks side by side, `[B, 4E]`.
    pub fn embed_slot(&self, g: &mut Graph, params: &ParamSet, blocks: [Var; 4]) -> Result<Var> {
        let mut parts = [blocks[0]; 4];
        for (i, (layer, x)) in self.embed.iter().zip(blocks).enumerate() {
            parts[i] = layer.forward(g, params, x)?;
        }
        Ok(g.concat(&parts))
    }

    /// `x_a`: attention across the four blocks, mean-pooled to `[B, d]`.
    /// Also returns the `[B, 4, 4]` attention weights.
    pub fn attend_slot(&self, g: &mut Graph, params: &ParamSet, x_c: Var) -> Result<(Var, Var)> {
        let b = g.shape(x_c)[0];
        let (e, d) = (self.cfg.embed_dim, self.cfg.attn_dim);
        let tokens = g.reshape(x_c, &[b * 4, e]);
        let q = self.query.forward(g, params, tokens)?;
        let k = self.key.forward(g, params, tokens)?;
        let v = self.value.forward(g, params, tokens)?;
        let [q, k, v] = [q, k, v].map(|t| g.reshape(t, &[b, 4, d]));
        let (out, weights) = eprgail_nn::attention(g, q, k, v)?;
        Ok((g.mean_axis1(out), weights))
    }

    pub fn encode_step(&self, g: &mut Graph, params: &ParamSet, x_a: Var, state: (Var, Var)) -> Result<(Var, Var)> {
        Ok(self.lstm.step(g, params, x_a, state.0, state.1)?)
    }

    /// Full per-slot pipeline; the new hidden state is `x_l`.
    pub fn step(&self, g: &mut Graph, params: &ParamSet, blocks: [Var; 4], state: (Var, Var)) -> Result<(Var, Var)> {
        let x_c = self.embed_slot(g, params, blocks)?;
        let (x_a, _) = self.attend_slot(g, params, x_c)?;
        self.encode_step(g, params, x_a, state)
    }

    pub fn initial_state(&self, rows: usize) -> (Tensor, Tensor) {
        let h = self.cfg.hidden_dim;
        (Tensor::zeros(&[rows, h]), Tensor::zeros(&[rows, h]))
    }
}
