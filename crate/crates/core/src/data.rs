//! Consumption data model: stores, users, time-slotted purchase sequences,
//! their file formats, and the rolling per-user history that every model
//! reads its features from.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Store identifier; `0` means "no consumption in this slot".
pub type StoreId = u32;
pub const NO_STORE: StoreId = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub slot_length_minutes: u32,
    pub horizon_slots: usize,
}

impl TimeGrid {
    pub fn new(slot_length_minutes: u32, horizon_slots: usize) -> Result<Self> {
        if slot_length_minutes == 0 || horizon_slots == 0 {
            return Err(CoreError::invalid(
                "time grid",
                "slot length and horizon must be positive",
            ));
        }
        Ok(Self {
            slot_length_minutes,
            horizon_slots,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Store {
    pub id: StoreId,
    pub category: u16,
    pub avg_price: f64,
    /// Planar coordinates in kilometers.
    pub location: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: u64,
    pub location: (f64, f64),
}

pub fn distance_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Stores addressed both by id and by dense index `0..len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct StoreCatalog {
    stores: Vec<Store>,
    index: HashMap<StoreId, usize>,
}

#[derive(Serialize, Deserialize)]
struct StoreRow {
    id: StoreId,
    category: u16,
    avg_price: f64,
    x_km: f64,
    y_km: f64,
}

#[derive(Serialize, Deserialize)]
struct UserRow {
    id: u64,
    x_km: f64,
    y_km: f64,
}

impl StoreCatalog {
    pub fn new(stores: Vec<Store>) -> Result<Self> {
        let mut index = HashMap::with_capacity(stores.len());
        for (i, s) in stores.iter().enumerate() {
            if s.id == NO_STORE {
                return Err(CoreError::invalid("catalog", "store id 0 is reserved"));
            }
            if s.avg_price.is_nan() || s.avg_price < 0.0 {
                return Err(CoreError::invalid(
                    "catalog",
                    format!("store {} has negative price", s.id),
                ));
            }
            if index.insert(s.id, i).is_some() {
                return Err(CoreError::invalid("catalog", format!("duplicate store id {}", s.id)));
            }
        }
        Ok(Self { stores, index })
    }

    pub fn len(&self) -> usize {
        self.stores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stores.is_empty()
    }

    pub fn stores(&self) -> &[Store] {
        &self.stores
    }

    pub fn store(&self, index: usize) -> &Store {
        &self.stores[index]
    }

    pub fn index_of(&self, id: StoreId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn contains(&self, id: StoreId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn category_count(&self) -> usize {
        self.stores.iter().map(|s| s.category as usize + 1).max().unwrap_or(1)
    }

    pub fn price_range(&self) -> (f64, f64) {
        let lo = self.stores.iter().map(|s| s.avg_price).fold(f64::INFINITY, f64::min);
        let hi = self.stores.iter().map(|s| s.avg_price).fold(0.0, f64::max);
        (lo.min(hi), hi)
    }

    /// First `n` stores; models that score stores independently keep working.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(self.stores[..n.min(self.stores.len())].to_vec())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut stores = Vec::new();
        for row in rdr.deserialize() {
            let r: StoreRow = row?;
            stores.push(Store {
                id: r.id,
                category: r.category,
                avg_price: r.avg_price,
                location: (r.x_km, r.y_km),
            });
        }
        Self::new(stores)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for s in &self.stores {
            w.serialize(StoreRow {
                id: s.id,
                category: s.category,
                avg_price: s.avg_price,
                x_km: s.location.0,
                y_km: s.location.1,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn load_users_csv(path: &Path) -> Result<Vec<User>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut users = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for row in rdr.deserialize() {
        let r: UserRow = row?;
        if !seen.insert(r.id) {
            return Err(CoreError::DuplicateUser(r.id));
        }
        users.push(User {
            id: r.id,
            location: (r.x_km, r.y_km),
        });
    }
    Ok(users)
}

pub fn save_users_csv(users: &[User], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for u in users {
        w.serialize(UserRow {
            id: u.id,
            x_km: u.location.0,
            y_km: u.location.1,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConsumptionRecord {
    pub slot_index: usize,
    pub store_id: StoreId,
}

/// One user's record per slot, slots `0..N` in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsumptionSequence {
    pub user_id: u64,
    pub records: Vec<ConsumptionRecord>,
}

impl ConsumptionSequence {
    pub fn from_stores(user_id: u64, stores: &[StoreId]) -> Self {
        Self {
            user_id,
            records: stores
                .iter()
                .enumerate()
                .map(|(slot_index, &store_id)| ConsumptionRecord { slot_index, store_id })
                .collect(),
        }
    }

    pub fn stores(&self) -> impl Iterator<Item = StoreId> + '_ {
        self.records.iter().map(|r| r.store_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn purchase_count(&self) -> usize {
        self.stores().filter(|&s| s != NO_STORE).count()
    }

    pub fn distinct_stores(&self) -> usize {
        let mut ids: Vec<StoreId> = self.stores().filter(|&s| s != NO_STORE).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn prefix(&self, len: usize) -> Self {
        Self {
            user_id: self.user_id,
            records: self.records[..len.min(self.records.len())].to_vec(),
        }
    }

    /// Replays the sequence for `user` and classifies every slot.
    pub fn actions(&self, user: &User, catalog: &StoreCatalog) -> Result<Vec<JointAction>> {
        let mut h = UserHistory::new(user, catalog);
        let mut out = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let store = if r.store_id == NO_STORE {
                None
            } else {
                Some(catalog.index_of(r.store_id).ok_or(CoreError::UnknownStore {
                    user: self.user_id,
                    store: r.store_id,
                })?)
            };
            out.push(h.action_for(store));
            h.observe(store, catalog);
        }
        Ok(out)
    }

    /// Checks slot order, store membership and (optionally) the horizon.
    pub fn validate(&self, horizon: Option<usize>, catalog: &StoreCatalog) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.slot_index != i {
                return Err(CoreError::SlotGap {
                    user: self.user_id,
                    expected: i,
                    found: r.slot_index,
                });
            }
            if r.store_id != NO_STORE && !catalog.contains(r.store_id) {
                return Err(CoreError::UnknownStore {
                    user: self.user_id,
                    store: r.store_id,
                });
            }
        }
        if let Some(n) = horizon {
            if self.records.len() != n {
                return Err(CoreError::HorizonMismatch {
                    user: self.user_id,
                    expected: n,
                    found: self.records.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SequenceLine {
    user_id: u64,
    records: Vec<(usize, StoreId)>,
}

/// Reads line-delimited `{"user_id": .., "records": [[slot, store], ..]}`.
pub fn load_sequences(path: &Path, grid: &TimeGrid, catalog: &StoreCatalog) -> Result<Vec<ConsumptionSequence>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SequenceLine = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let seq = ConsumptionSequence {
            user_id: parsed.user_id,
            records: parsed
                .records
                .into_iter()
                .map(|(slot_index, store_id)| ConsumptionRecord { slot_index, store_id })
                .collect(),
        };
        seq.validate(Some(grid.horizon_slots), catalog)?;
        out.push(seq);
    }
    Ok(out)
}

pub fn write_sequences<W: Write>(seqs: &[ConsumptionSequence], mut w: W) -> Result<()> {
    for s in seqs {
        let line = SequenceLine {
            user_id: s.user_id,
            records: s.records.iter().map(|r| (r.slot_index, r.store_id)).collect(),
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_sequences(seqs: &[ConsumptionSequence], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sequences(seqs, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Per-slot action of the three-level decision: purchase, explore, store.
/// `store` is a catalog index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct JointAction {
    pub purchase: bool,
    pub explore: bool,
    pub store: Option<usize>,
}

impl JointAction {
    pub const NONE: JointAction = JointAction {
        purchase: false,
        explore: false,
        store: None,
    };

    pub fn buy(store: usize, explore: bool) -> Self {
        Self {
            purchase: true,
            explore,
            store: Some(store),
        }
    }
}

/// Rolling state of one user's history at the start of a slot.
///
/// `interval` is the purchase interval `l`: 1 in the slot right after a
/// purchase, `slot + 1` before any purchase.
#[derive(Clone, Debug, PartialEq)]
pub struct UserHistory {
    pub slot: usize,
    pub interval: usize,
    pub visits: Vec<u32>,
    pub visited_count: usize,
    pub distances: Vec<f64>,
    pub total_purchases: usize,
    pub category_counts: Vec<u32>,
    pub last_store: Option<usize>,
    price_sum: f64,
    price_max: f64,
    distance_sum: f64,
    distance_min: f64,
}

impl UserHistory {
    pub fn new(user: &User, catalog: &StoreCatalog) -> Self {
        let distances = catalog
            .stores()
            .iter()
            .map(|s| distance_km(user.location, s.location))
            .collect();
        Self {
            slot: 0,
            interval: 1,
            visits: vec![0; catalog.len()],
            visited_count: 0,
            distances,
            total_purchases: 0,
            category_counts: vec![0; catalog.category_count()],
            last_store: None,
            price_sum: 0.0,
            price_max: 0.0,
            distance_sum: 0.0,
            distance_min: f64::INFINITY,
        }
    }

    pub fn store_count(&self) -> usize {
        self.visits.len()
    }

    pub fn all_visited(&self) -> bool {
        self.visited_count == self.visits.len()
    }

    pub fn is_visited(&self, store: usize) -> bool {
        self.visits[store] > 0
    }

    /// Classifies a store choice against the current history.
    pub fn action_for(&self, store: Option<usize>) -> JointAction {
        match store {
            None => JointAction::NONE,
            Some(s) => JointAction::buy(s, !self.is_visited(s)),
        }
    }

    /// Every joint action consistent with this history.
    pub fn legal_actions(&self) -> Vec<JointAction> {
        let mut out = vec![JointAction::NONE];
        out.extend((0..self.visits.len()).map(|q| self.action_for(Some(q))));
        out
    }

    /// Advances one slot. `store` is a catalog index or `None`.
    pub fn observe(&mut self, store: Option<usize>, catalog: &StoreCatalog) {
        self.slot += 1;
        match store {
            None => self.interval += 1,
            Some(s) => {
                if self.visits[s] == 0 {
                    self.visited_count += 1;
                }
                self.visits[s] += 1;
                self.interval = 1;
                self.total_purchases += 1;
                let info = catalog.store(s);
                if let Some(c) = self.category_counts.get_mut(info.category as usize) {
                    *c += 1;
                }
                self.price_sum += info.avg_price;
                self.price_max = self.price_max.max(info.avg_price);
                let d = self.distances[s];
                self.distance_sum += d;
                self.distance_min = self.distance_min.min(d);
                self.last_store = Some(s);
            }
        }
    }

    pub fn observe_id(&mut self, id: StoreId, catalog: &StoreCatalog) {
        let store = if id == NO_STORE { None } else { catalog.index_of(id) };
        self.observe(store, catalog);
    }

    /// (mean, max, last) price of consumed stores; zeros before any purchase.
    pub fn price_summary(&self, catalog: &StoreCatalog) -> [f64; 3] {
        match self.last_store {
            None => [0.0; 3],
            Some(s) => [
                self.price_sum / self.total_purchases as f64,
                self.price_max,
                catalog.store(s).avg_price,
            ],
        }
    }

    /// (mean, min, last) user-store distance of consumed stores.
    pub fn distance_summary(&self) -> [f64; 3] {
        match self.last_store {
            None => [0.0; 3],
            Some(s) => [
                self.distance_sum / self.total_purchases as f64,
                self.distance_min,
                self.distances[s],
            ],
        }
    }
}

/// Features available when acting at a slot, reconstructed from catalog and
/// history (category and price come from the catalog).
#[derive(Clone, Debug, PartialEq)]
pub struct SlotFeatures {
    pub categories: Vec<u16>,
    pub prices: Vec<f64>,
    pub visits: Vec<u32>,
    pub distances: Vec<f64>,
    pub interval: usize,
    pub visited_count: usize,
}

/// Replays `prefix` (slots `0..i`) and returns the features for slot `i`.
pub fn derive_features(prefix: &ConsumptionSequence, user: &User, catalog: &StoreCatalog) -> SlotFeatures {
    let mut h = UserHistory::new(user, catalog);
    for id in prefix.stores() {
        h.observe_id(id, catalog);
    }
    SlotFeatures {
        categories: catalog.stores().iter().map(|s| s.category).collect(),
        prices: catalog.stores().iter().map(|s| s.avg_price).collect(),
        visits: h.visits,
        distances: h.distances,
        interval: h.interval,
        visited_count: h.visited_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_catalog() -> StoreCatalog {
        StoreCatalog::new(vec![
            Store {
                id: 5,
                category: 2,
                avg_price: 30.0,
                location: (3.0, 4.0),
            },
            Store {
                id: 7,
                category: 0,
                avg_price: 10.0,
                location: (1.0, 0.0),
            },
        ])
        .unwrap()
    }

    fn origin_user() -> User {
        User {
            id: 1,
            location: (0.0, 0.0),
        }
    }

    #[test]
    fn features_after_purchase_then_idle() {
        let cat = toy_catalog();
        let seq = ConsumptionSequence::from_stores(1, &[5, 0]);
        let f = derive_features(&seq, &origin_user(), &cat);
        assert_eq!(f.visits, vec![1, 0]);
        assert_eq!(f.visited_count, 1);
        assert_eq!(f.interval, 2);
    }

    #[test]
    fn features_of_idle_prefix() {
        let cat = toy_catalog();
        let seq = ConsumptionSequence::from_stores(1, &[0, 0, 0]);
        let f = derive_features(&seq, &origin_user(), &cat);
        assert_eq!(f.visited_count, 0);
        assert_eq!(f.interval, 4);
        assert!(f.visits.iter().all(|&v| v == 0));
    }

    #[test]
    fn distance_is_euclidean_km() {
        let cat = toy_catalog();
        let f = derive_features(&ConsumptionSequence::from_stores(1, &[]), &origin_user(), &cat);
        assert_eq!(f.distances[0], 5.0);
        assert_eq!(f.categories, vec![2, 0]);
        assert_eq!(f.prices, vec![30.0, 10.0]);
    }

    #[test]
    fn interval_resets_after_purchase() {
        let cat = toy_catalog();
        let mut h = UserHistory::new(&origin_user(), &cat);
        h.observe(None, &cat);
        h.observe(None, &cat);
        assert_eq!(h.interval, 3);
        h.observe(Some(1), &cat);
        assert_eq!(h.interval, 1);
        assert_eq!(h.price_summary(&cat), [10.0, 10.0, 10.0]);
        assert_eq!(h.distance_summary(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn validate_reports_unknown_store_and_gap() {
        let cat = toy_catalog();
        let bad = ConsumptionSequence::from_stores(3, &[0, 999]);
        match bad.validate(None, &cat) {
            Err(CoreError::UnknownStore { store: 999, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let mut gap = ConsumptionSequence::from_stores(3, &[0, 5]);
        gap.records[1].slot_index = 2;
        assert!(matches!(gap.validate(None, &cat), Err(CoreError::SlotGap { .. })));
    }

    #[test]
    fn catalog_rejects_reserved_id() {
        let s = Store {
            id: 0,
            category: 0,
            avg_price: 1.0,
            location: (0.0, 0.0),
        };
        assert!(StoreCatalog::new(vec![s]).is_err());
    }
}
