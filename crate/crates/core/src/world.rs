//! Synthetic expert world: a store catalog and users scattered over a
//! square, plus expert sequences sampled from a known EPR process.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, ConsumptionSequence, Store, StoreCatalog, TimeGrid, User};
use crate::epr::{self, EprParams};
use crate::error::{CoreError, Result};
use crate::seeding::{rng_for, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_users: usize,
    pub n_stores: usize,
    pub horizon_slots: usize,
    pub slot_length_minutes: u32,
    pub category_count: u16,
    pub price_range: (f64, f64),
    pub area_km: f64,
    pub true_params: EprParams,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_stores: 50,
            horizon_slots: 90,
            slot_length_minutes: 1440,
            category_count: 8,
            price_range: (5.0, 200.0),
            area_km: 10.0,
            true_params: EprParams::default(),
            noise_level: 0.2,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.price_range;
        let fail = |m: &str| Err(CoreError::invalid("world config", m));
        if self.n_stores < 2 {
            return fail("n_stores must be at least 2");
        }
        if self.horizon_slots == 0 || self.slot_length_minutes == 0 || self.category_count == 0 {
            return fail("horizon, slot length and category count must be positive");
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return fail("price range must satisfy 0 < min <= max");
        }
        if !(self.area_km > 0.0 && self.area_km.is_finite()) {
            return fail("area must be positive");
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return fail("noise level must lie in [0, 1]");
        }
        self.true_params.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub grid: TimeGrid,
    pub catalog: StoreCatalog,
    pub users: Vec<User>,
    pub area_km: f64,
    user_index: HashMap<u64, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldManifest {
    slot_length_minutes: u32,
    horizon_slots: usize,
    area_km: f64,
}

impl World {
    pub fn new(grid: TimeGrid, catalog: StoreCatalog, users: Vec<User>, area_km: f64) -> Result<Self> {
        let mut user_index = HashMap::with_capacity(users.len());
        for (i, u) in users.iter().enumerate() {
            if user_index.insert(u.id, i).is_some() {
                return Err(CoreError::DuplicateUser(u.id));
            }
        }
        Ok(Self {
            grid,
            catalog,
            users,
            area_km,
            user_index,
        })
    }

    pub fn user(&self, id: u64) -> Result<&User> {
        self.user_index
            .get(&id)
            .map(|&i| &self.users[i])
            .ok_or(CoreError::UnknownUser(id))
    }

    pub fn diagonal_km(&self) -> f64 {
        self.area_km * std::f64::consts::SQRT_2
    }

    /// Smallest and largest user-store distance.
    pub fn distance_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for u in &self.users {
            for s in self.catalog.stores() {
                let d = data::distance_km(u.location, s.location);
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
        if lo.is_infinite() {
            (0.0, self.diagonal_km())
        } else {
            (lo, hi)
        }
    }

    /// Same users and grid over the first `n` stores.
    pub fn with_truncated_catalog(&self, n: usize) -> Result<Self> {
        Self::new(self.grid, self.catalog.truncated(n)?, self.users.clone(), self.area_km)
    }

    pub fn with_users(&self, users: Vec<User>) -> Result<Self> {
        Self::new(self.grid, self.catalog.clone(), users, self.area_km)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.catalog.save_csv(&dir.join("catalog.csv"))?;
        data::save_users_csv(&self.users, &dir.join("users.csv"))?;
        let manifest = WorldManifest {
            slot_length_minutes: self.grid.slot_length_minutes,
            horizon_slots: self.grid.horizon_slots,
            area_km: self.area_km,
        };
        let text = toml::to_string(&manifest).map_err(|e| CoreError::invalid("world manifest", e.to_string()))?;
        fs::write(dir.join("world.toml"), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("world.toml");
        let text = fs::read_to_string(&path)?;
        let m: WorldManifest = toml::from_str(&text).map_err(|e| CoreError::Parse {
            path: path.clone(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            message: e.message().to_string(),
        })?;
        let grid = TimeGrid::new(m.slot_length_minutes, m.horizon_slots)?;
        let catalog = StoreCatalog::load_csv(&dir.join("catalog.csv"))?;
        let users = data::load_users_csv(&dir.join("users.csv"))?;
        Self::new(grid, catalog, users, m.area_km)
    }
}

/// Uniform locations and categories, log-uniform prices.
pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, stream::WORLD, 0);
    let (lo, hi) = cfg.price_range;
    let point = |rng: &mut crate::seeding::SimRng| (rng.gen_range(0.0..cfg.area_km), rng.gen_range(0.0..cfg.area_km));
    let stores = (0..cfg.n_stores)
        .map(|i| {
            let location = point(&mut rng);
            let category = rng.gen_range(0..cfg.category_count);
            let avg_price = if lo == hi {
                lo
            } else {
                rng.gen_range(lo.ln()..hi.ln()).exp()
            };
            Store {
                id: i as u32 + 1,
                category,
                avg_price,
                location,
            }
        })
        .collect();
    let users = (0..cfg.n_users)
        .map(|i| User {
            id: i as u64,
            location: point(&mut rng),
        })
        .collect();
    World::new(
        TimeGrid::new(cfg.slot_length_minutes, cfg.horizon_slots)?,
        StoreCatalog::new(stores)?,
        users,
        cfg.area_km,
    )
}

pub fn generate_expert_sequences(world: &World, cfg: &WorldConfig) -> Vec<ConsumptionSequence> {
    epr::simulate_epr(
        world,
        &cfg.true_params,
        cfg.horizon_slots,
        cfg.noise_level,
        cfg.seed,
        stream::EXPERT,
    )
}
