//! Implicit-feedback interaction data.
//!
//! Raw `(user-token, item-token)` rows are binarized, filtered to a minimum
//! interaction count, remapped to contiguous ids and split per user into
//! train / validation / test. Entities are numbered users first, then items,
//! matching the row order of the embedding table.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Rng, SeedTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Tsv,
}

impl Format {
    fn delimiter(self) -> u8 {
        match self {
            Format::Csv => b',',
            Format::Tsv => b'\t',
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "tsv" => Ok(Format::Tsv),
            other => Err(Error::Invalid(format!("unknown format `{other}` (expected csv or tsv)"))),
        }
    }
}

pub type RawPair = (String, String);

/// Reads every `(user, item)` row of a delimited file. Extra columns are
/// ignored and duplicates are preserved.
pub fn load_interactions(path: impl AsRef<Path>, format: Format) -> Result<Vec<RawPair>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(file, format)
}

/// Parses delimited interaction rows.
///
/// The first row is treated as a header when its user/item fields are not
/// both integers while the second row's are, e.g. `user_id\titem_id` above
/// numeric ids. Token-valued files (`u1,i1`) therefore keep their first row.
pub fn parse_interactions<R: Read>(reader: R, format: Format) -> Result<Vec<RawPair>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut rows: Vec<RawPair> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() < 2 {
            return Err(Error::Parse {
                row,
                message: format!("expected at least 2 columns, found {}", record.len()),
            });
        }
        let (user, item) = (&record[0], &record[1]);
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse {
                row,
                message: "empty user or item field".into(),
            });
        }
        rows.push((user.to_string(), item.to_string()));
    }

    if rows.len() >= 2 && !is_numeric_pair(&rows[0]) && is_numeric_pair(&rows[1]) {
        rows.remove(0);
    }
    if rows.is_empty() {
        return Err(Error::Empty("no interaction rows".into()));
    }
    Ok(rows)
}

fn is_numeric_pair(pair: &RawPair) -> bool {
    pair.0.parse::<i64>().is_ok() && pair.1.parse::<i64>().is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.5,
            val: 0.25,
            test: 0.25,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Invalid(format!("split ratios must be positive: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("split ratios must sum to 1: {self:?}")));
        }
        Ok(())
    }

    /// (train, val, test) counts for a user with `n >= 3` interactions; every
    /// part gets at least one.
    pub fn partition(&self, n: usize) -> (usize, usize, usize) {
        debug_assert!(n >= 3);
        let nf = n as f64;
        let mut val = ((nf * self.val).round() as usize).max(1);
        let mut test = ((nf * self.test).round() as usize).max(1);
        while val + test + 1 > n {
            if val >= test && val > 1 {
                val -= 1;
            } else {
                test -= 1;
            }
        }
        (n - val - test, val, test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub ratios: SplitRatios,
    pub seed: u64,
    /// Users and items with fewer train+val+test interactions are dropped.
    pub min_interactions: usize,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            ratios: SplitRatios::default(),
            seed: 0,
            min_interactions: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Train,
    Val,
    Test,
}

/// Binarizes, filters and splits raw pairs.
pub fn split(pairs: &[RawPair], opts: &SplitOptions) -> Result<InteractionDataset> {
    opts.ratios.validate()?;
    let min = opts.min_interactions.max(3);

    // Binarize, keeping first-appearance order.
    let mut seen: HashSet<(&str, &str)> = HashSet::with_capacity(pairs.len());
    let mut unique: Vec<(&str, &str)> = Vec::with_capacity(pairs.len());
    for (u, v) in pairs {
        if seen.insert((u.as_str(), v.as_str())) {
            unique.push((u.as_str(), v.as_str()));
        }
    }

    let mut banned_items: HashSet<&str> = HashSet::new();
    loop {
        let kept = k_core(
            unique
                .iter()
                .copied()
                .filter(|(_, v)| !banned_items.contains(v))
                .collect(),
            min,
        );
        if kept.is_empty() {
            return Err(Error::Empty(format!(
                "no interactions survive the {min}-interaction filter"
            )));
        }

        let mut user_ids: HashMap<&str, u32> = HashMap::new();
        let mut item_ids: HashMap<&str, u32> = HashMap::new();
        let mut user_tokens = Vec::new();
        let mut item_tokens = Vec::new();
        let mut by_user: Vec<Vec<u32>> = Vec::new();
        for &(u, v) in &kept {
            let uid = *user_ids.entry(u).or_insert_with(|| {
                user_tokens.push(u.to_string());
                by_user.push(Vec::new());
                (user_tokens.len() - 1) as u32
            });
            let vid = *item_ids.entry(v).or_insert_with(|| {
                item_tokens.push(v.to_string());
                (item_tokens.len() - 1) as u32
            });
            by_user[uid as usize].push(vid);
        }

        let mut rng = SeedTree::new(opts.seed).stream("split");
        let mut assigned: Vec<(Interaction, Part)> = Vec::with_capacity(kept.len());
        for (uid, items) in by_user.iter_mut().enumerate() {
            items.shuffle(&mut rng);
            let (n_train, n_val, _) = opts.ratios.partition(items.len());
            for (j, &item) in items.iter().enumerate() {
                let part = if j < n_train {
                    Part::Train
                } else if j < n_train + n_val {
                    Part::Val
                } else {
                    Part::Test
                };
                assigned.push((
                    Interaction {
                        user: uid as u32,
                        item,
                    },
                    part,
                ));
            }
        }

        let unrepairable = repair_item_coverage(&mut assigned, user_tokens.len(), item_tokens.len());
        if unrepairable.is_empty() {
            let mut train = Vec::new();
            let mut val = Vec::new();
            let mut test = Vec::new();
            for (x, part) in assigned {
                match part {
                    Part::Train => train.push(x),
                    Part::Val => val.push(x),
                    Part::Test => test.push(x),
                }
            }
            return InteractionDataset::from_parts(user_tokens, item_tokens, train, val, test);
        }
        for v in unrepairable {
            let token = item_tokens[v as usize].as_str();
            let original = unique.iter().find(|(_, t)| *t == token).map(|(_, t)| *t);
            banned_items.insert(original.expect("token originates from input"));
        }
    }
}

fn k_core<'a>(mut pairs: Vec<(&'a str, &'a str)>, min: usize) -> Vec<(&'a str, &'a str)> {
    loop {
        let mut user_count: HashMap<&str, usize> = HashMap::new();
        let mut item_count: HashMap<&str, usize> = HashMap::new();
        for &(u, v) in &pairs {
            *user_count.entry(u).or_default() += 1;
            *item_count.entry(v).or_default() += 1;
        }
        let before = pairs.len();
        pairs.retain(|(u, v)| user_count[u] >= min && item_count[v] >= min);
        if pairs.len() == before {
            return pairs;
        }
    }
}

/// Moves interactions so every item has at least one train and one
/// validation interaction, without emptying any user's split. Returns items
/// for which no legal move exists.
fn repair_item_coverage(assigned: &mut [(Interaction, Part)], num_users: usize, num_items: usize) -> Vec<u32> {
    let mut user_counts = vec![[0usize; 3]; num_users];
    let mut item_counts = vec![[0usize; 3]; num_items];
    let mut by_item: Vec<Vec<usize>> = vec![Vec::new(); num_items];
    let slot = |p: Part| match p {
        Part::Train => 0,
        Part::Val => 1,
        Part::Test => 2,
    };
    for (idx, (x, p)) in assigned.iter().enumerate() {
        user_counts[x.user as usize][slot(*p)] += 1;
        item_counts[x.item as usize][slot(*p)] += 1;
        by_item[x.item as usize].push(idx);
    }

    let mut unrepairable = Vec::new();
    for v in 0..num_items {
        // (target part, allowed source parts)
        for (target, sources) in [
            (Part::Train, [Part::Val, Part::Test]),
            (Part::Val, [Part::Test, Part::Train]),
        ] {
            if item_counts[v][slot(target)] > 0 {
                continue;
            }
            let mv = sources.iter().find_map(|&src| {
                by_item[v].iter().copied().find(|&idx| {
                    let (x, p) = assigned[idx];
                    p == src
                        && user_counts[x.user as usize][slot(src)] >= 2
                        && (src != Part::Train || item_counts[v][0] >= 2)
                })
            });
            match mv {
                Some(idx) => {
                    let (x, src) = assigned[idx];
                    user_counts[x.user as usize][slot(src)] -= 1;
                    user_counts[x.user as usize][slot(target)] += 1;
                    item_counts[v][slot(src)] -= 1;
                    item_counts[v][slot(target)] += 1;
                    assigned[idx].1 = target;
                }
                None => {
                    unrepairable.push(v as u32);
                    break;
                }
            }
        }
    }
    unrepairable
}

/// Filtered, remapped and split implicit-feedback data.
#[derive(Debug, Clone)]
pub struct InteractionDataset {
    user_tokens: Vec<String>,
    item_tokens: Vec<String>,
    train: Vec<Interaction>,
    val: Vec<Interaction>,
    test: Vec<Interaction>,
    train_by_user: Vec<Vec<u32>>,
    val_by_user: Vec<Vec<u32>>,
    test_by_user: Vec<Vec<u32>>,
    train_users_by_item: Vec<Vec<u32>>,
    popularity: Vec<u32>,
}

impl InteractionDataset {
    pub fn from_parts(
        user_tokens: Vec<String>,
        item_tokens: Vec<String>,
        mut train: Vec<Interaction>,
        mut val: Vec<Interaction>,
        mut test: Vec<Interaction>,
    ) -> Result<Self> {
        let nu = user_tokens.len();
        let ni = item_tokens.len();
        if train.is_empty() {
            return Err(Error::Empty("training split has no interactions".into()));
        }
        for x in train.iter().chain(&val).chain(&test) {
            if x.user as usize >= nu || x.item as usize >= ni {
                return Err(Error::Invalid(format!(
                    "interaction {x:?} outside id space {nu}x{ni}"
                )));
            }
        }
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();

        let group = |xs: &[Interaction]| {
            let mut out = vec![Vec::new(); nu];
            for x in xs {
                out[x.user as usize].push(x.item);
            }
            out
        };
        let train_by_user = group(&train);
        let val_by_user = group(&val);
        let test_by_user = group(&test);
        let mut train_users_by_item = vec![Vec::new(); ni];
        for x in &train {
            train_users_by_item[x.item as usize].push(x.user);
        }
        let popularity = train_by_user
            .iter()
            .map(|v| v.len() as u32)
            .chain(train_users_by_item.iter().map(|v| v.len() as u32))
            .collect();

        Ok(Self {
            user_tokens,
            item_tokens,
            train,
            val,
            test,
            train_by_user,
            val_by_user,
            test_by_user,
            train_users_by_item,
            popularity,
        })
    }

    pub fn num_users(&self) -> usize {
        self.user_tokens.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_tokens.len()
    }

    pub fn num_entities(&self) -> usize {
        self.num_users() + self.num_items()
    }

    /// Entity index of item `v` in the concatenated user/item numbering.
    pub fn item_entity(&self, item: u32) -> usize {
        self.num_users() + item as usize
    }

    pub fn user_tokens(&self) -> &[String] {
        &self.user_tokens
    }

    pub fn item_tokens(&self) -> &[String] {
        &self.item_tokens
    }

    pub fn train(&self) -> &[Interaction] {
        &self.train
    }

    pub fn val(&self) -> &[Interaction] {
        &self.val
    }

    pub fn test(&self) -> &[Interaction] {
        &self.test
    }

    /// Sorted train items of `user`.
    pub fn train_items(&self, user: u32) -> &[u32] {
        &self.train_by_user[user as usize]
    }

    pub fn val_items(&self, user: u32) -> &[u32] {
        &self.val_by_user[user as usize]
    }

    pub fn test_items(&self, user: u32) -> &[u32] {
        &self.test_by_user[user as usize]
    }

    /// Users that interacted with `item` in the training split.
    pub fn train_users(&self, item: u32) -> &[u32] {
        &self.train_users_by_item[item as usize]
    }

    /// Train-split interaction count per entity, users first.
    pub fn popularity(&self) -> &[u32] {
        &self.popularity
    }

    pub fn user_popularity(&self) -> &[u32] {
        &self.popularity[..self.num_users()]
    }

    pub fn item_popularity(&self) -> &[u32] {
        &self.popularity[self.num_users()..]
    }

    pub fn is_train_pair(&self, user: u32, item: u32) -> bool {
        self.train_items(user).binary_search(&item).is_ok()
    }

    pub fn snapshot(&self) -> DatasetSnapshot {
        let flat = |xs: &[Interaction]| xs.iter().map(|x| [x.user, x.item]).collect();
        DatasetSnapshot {
            version: DatasetSnapshot::VERSION,
            user_tokens: self.user_tokens.clone(),
            item_tokens: self.item_tokens.clone(),
            train: flat(&self.train),
            val: flat(&self.val),
            test: flat(&self.test),
        }
    }

    pub fn from_snapshot(snapshot: DatasetSnapshot) -> Result<Self> {
        if snapshot.version != DatasetSnapshot::VERSION {
            return Err(Error::Invalid(format!(
                "unsupported dataset snapshot version {}",
                snapshot.version
            )));
        }
        let unflat = |xs: Vec<[u32; 2]>| {
            xs.into_iter()
                .map(|[user, item]| Interaction { user, item })
                .collect()
        };
        Self::from_parts(
            snapshot.user_tokens,
            snapshot.item_tokens,
            unflat(snapshot.train),
            unflat(snapshot.val),
            unflat(snapshot.test),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = serde_json::to_vec(&self.snapshot())?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_snapshot(serde_json::from_slice(&bytes)?)
    }

    /// Draws a BPR triple `(u, v_pos, v_neg)`: `(u, v_pos)` uniform over
    /// train pairs, `v_neg` uniform over items `u` has not trained on.
    pub fn sample_bpr_triple(&self, rng: &mut Rng) -> Result<(u32, u32, u32)> {
        const MAX_USER_RETRIES: usize = 64;
        if self.train.is_empty() {
            return Err(Error::Empty("no training interactions to sample".into()));
        }
        let ni = self.num_items();
        for _ in 0..MAX_USER_RETRIES {
            let pos = self.train[rng.random_range(0..self.train.len())];
            let owned = self.train_items(pos.user);
            if owned.len() >= ni {
                continue;
            }
            loop {
                let neg = rng.random_range(0..ni as u32);
                if owned.binary_search(&neg).is_err() {
                    return Ok((pos.user, pos.item, neg));
                }
            }
        }
        Err(Error::Sampling(format!(
            "no user with a non-interacted item after {MAX_USER_RETRIES} draws"
        )))
    }
}

/// Serialized dataset: id maps plus the three splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSnapshot {
    pub version: u32,
    pub user_tokens: Vec<String>,
    pub item_tokens: Vec<String>,
    pub train: Vec<[u32; 2]>,
    pub val: Vec<[u32; 2]>,
    pub test: Vec<[u32; 2]>,
}

impl DatasetSnapshot {
    pub const VERSION: u32 = 1;
}
