//! Full-size embedding table with a per-entity prefix mask.
//!
//! The binary mask is never materialized: entity `n` keeps the first
//! `dims[n]` coordinates of its row and every later coordinate reads as zero.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedEmbeddingTable {
    values: Array2<f64>,
    dims: Vec<usize>,
    num_users: usize,
}

impl MaskedEmbeddingTable {
    /// Zero-valued table with every entity at full size.
    pub fn new(num_users: usize, num_items: usize, d_max: usize) -> Result<Self> {
        if d_max == 0 {
            return Err(Error::Invalid("d_max must be at least 1".into()));
        }
        let n = num_users + num_items;
        Ok(Self {
            values: Array2::zeros((n, d_max)),
            dims: vec![d_max; n],
            num_users,
        })
    }

    pub fn from_values(values: Array2<f64>, num_users: usize) -> Result<Self> {
        let (n, d_max) = values.dim();
        if d_max == 0 || num_users > n {
            return Err(Error::Shape {
                expected: format!("rows >= {num_users}, d_max >= 1"),
                actual: format!("{n}x{d_max}"),
            });
        }
        Ok(Self {
            values,
            dims: vec![d_max; n],
            num_users,
        })
    }

    pub fn d_max(&self) -> usize {
        self.values.ncols()
    }

    pub fn num_entities(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_entities() - self.num_users
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, n: usize) -> usize {
        self.dims[n]
    }

    /// Raw, unmasked values.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    /// Usable coordinates of entity `n`, i.e. the unmasked prefix.
    pub fn prefix(&self, n: usize) -> ArrayView1<'_, f64> {
        self.values.slice(s![n, ..self.dims[n]])
    }

    /// Masked embedding of entity `n`, length `d_max`.
    pub fn lookup(&self, n: usize) -> Result<Array1<f64>> {
        if n >= self.num_entities() {
            return Err(Error::Index {
                index: n,
                len: self.num_entities(),
            });
        }
        let mut out = Array1::zeros(self.d_max());
        let d = self.dims[n];
        out.slice_mut(s![..d]).assign(&self.values.slice(s![n, ..d]));
        Ok(out)
    }

    /// `E ⊙ M` as a dense matrix.
    pub fn masked_values(&self) -> Array2<f64> {
        let mut out = self.values.clone();
        for (n, mut row) in out.rows_mut().into_iter().enumerate() {
            row.slice_mut(s![self.dims[n]..]).fill(0.0);
        }
        out
    }

    pub fn set_dims(&mut self, assignment: &[usize]) -> Result<()> {
        validate_dims(assignment, self.num_entities(), self.d_max())?;
        self.dims.copy_from_slice(assignment);
        Ok(())
    }

    /// Fraction of masked-out parameters, `1 - Σ d_n / (N · d_max)`.
    pub fn sparsity(&self) -> f64 {
        sparsity_of(&self.dims, self.d_max())
    }

    /// Redraws every value i.i.d. from `N(0, scale²)`; dims are untouched.
    pub fn init_values(&mut self, seed: u64, scale: f64) -> Result<()> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::Invalid(format!("init scale must be >= 0, got {scale}")));
        }
        if scale == 0.0 {
            self.values.fill(0.0);
            return Ok(());
        }
        let normal = Normal::new(0.0, scale).map_err(|e| Error::Invalid(e.to_string()))?;
        let mut rng = SeedTree::new(seed).stream("embedding-init");
        self.values.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        Ok(())
    }
}

pub fn validate_dims(assignment: &[usize], num_entities: usize, d_max: usize) -> Result<()> {
    if assignment.len() != num_entities {
        return Err(Error::Shape {
            expected: format!("{num_entities} dims"),
            actual: format!("{} dims", assignment.len()),
        });
    }
    if let Some((n, &d)) = assignment
        .iter()
        .enumerate()
        .find(|(_, &d)| d == 0 || d > d_max)
    {
        return Err(Error::Invalid(format!(
            "entity {n}: dimension {d} outside [1, {d_max}]"
        )));
    }
    Ok(())
}

pub fn sparsity_of(dims: &[usize], d_max: usize) -> f64 {
    // (total - kept) / total: an exact integer ratio, so the result is the
    // correctly rounded value of the pruned fraction.
    let total = dims.len() * d_max;
    let kept: usize = dims.iter().sum();
    (total - kept) as f64 / total as f64
}

/// Per-entity dimension assignment as exchanged between the search and the
/// retraining stages.
///
/// Text layout: a `#`-prefixed header carrying `d_max`, user and item counts,
/// then one `entity_id<TAB>d_n` line per entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskFile {
    pub d_max: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub dims: Vec<usize>,
}

impl MaskFile {
    pub fn new(d_max: usize, num_users: usize, num_items: usize, dims: Vec<usize>) -> Result<Self> {
        validate_dims(&dims, num_users + num_items, d_max)?;
        Ok(Self {
            d_max,
            num_users,
            num_items,
            dims,
        })
    }

    pub fn sparsity(&self) -> f64 {
        sparsity_of(&self.dims, self.d_max)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# d_max={} users={} items={}\n",
            self.d_max, self.num_users, self.num_items
        );
        for (n, d) in self.dims.iter().enumerate() {
            writeln!(out, "{n}\t{d}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Empty("mask file has no header".into()))?;
        let header = header.strip_prefix('#').ok_or_else(|| Error::Parse {
            row: 1,
            message: "missing `#` header".into(),
        })?;
        let mut fields = [None; 3];
        for kv in header.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse {
                row: 1,
                message: format!("bad header field `{kv}`"),
            })?;
            let slot = match k {
                "d_max" => 0,
                "users" => 1,
                "items" => 2,
                _ => continue,
            };
            fields[slot] = Some(v.parse::<usize>().map_err(|e| Error::Parse {
                row: 1,
                message: format!("{k}: {e}"),
            })?);
        }
        let [Some(d_max), Some(num_users), Some(num_items)] = fields else {
            return Err(Error::Parse {
                row: 1,
                message: "header needs d_max, users and items".into(),
            });
        };

        let mut dims = vec![0usize; num_users + num_items];
        let mut seen = 0usize;
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row = i + 1;
            let (id, d) = line.split_once('\t').ok_or_else(|| Error::Parse {
                row,
                message: "expected `entity_id<TAB>d_n`".into(),
            })?;
            let parse = |s: &str| {
                s.trim().parse::<usize>().map_err(|e| Error::Parse {
                    row,
                    message: e.to_string(),
                })
            };
            let (id, d) = (parse(id)?, parse(d)?);
            if id >= dims.len() {
                return Err(Error::Index {
                    index: id,
                    len: dims.len(),
                });
            }
            dims[id] = d;
            seen += 1;
        }
        if seen != dims.len() {
            return Err(Error::Parse {
                row: 0,
                message: format!("expected {} entity lines, found {seen}", dims.len()),
            });
        }
        Self::new(d_max, num_users, num_items, dims)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
