//! Item bank ingestion, validation and seeded synthetic generation.
//!
//! Files use the columns `id,a,b,c` (CSV with header) or an array of
//! `{id, a, b, c}` records (JSON). Information curves of every item are
//! precomputed on the working grid at construction.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::{ItemParams, ThetaGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankFormat {
    Csv,
    Json,
}

impl BankFormat {
    /// Guess from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(BankFormat::Csv),
            "json" => Some(BankFormat::Json),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// One broken invariant found by [`validate_items`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Zero-based item index.
    pub index: usize,
    pub field: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_items(items: &[ItemParams]) -> ValidationReport {
    let violations = items
        .iter()
        .enumerate()
        .flat_map(|(index, item)| {
            item.violations()
                .into_iter()
                .map(move |(field, message)| Violation {
                    index,
                    field,
                    message,
                })
        })
        .collect();
    ValidationReport { violations }
}

#[derive(Debug, Clone)]
pub struct ItemBank {
    items: Vec<ItemParams>,
    ids: Vec<String>,
    grid: ThetaGrid,
    /// Row-major `M x grid.len()` information matrix.
    info: Vec<f64>,
}

impl ItemBank {
    /// Builds a bank, rejecting it if any item is invalid. Missing ids are
    /// filled with one-based positions.
    pub fn new(items: Vec<ItemParams>, ids: Option<Vec<String>>, grid: ThetaGrid) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("item bank is empty".into()));
        }
        if let Some(v) = validate_items(&items).violations.into_iter().next() {
            return Err(Error::InvalidItem {
                row: v.index + 1,
                field: v.field,
                message: v.message,
            });
        }
        let ids = match ids {
            Some(ids) if ids.len() == items.len() => ids,
            Some(ids) => {
                return Err(Error::InvalidArgument(format!(
                    "{} ids for {} items",
                    ids.len(),
                    items.len()
                )))
            }
            None => (1..=items.len()).map(|i| format!("item{i:04}")).collect(),
        };
        let thetas: Vec<f64> = grid.points().collect();
        let mut info = Vec::with_capacity(items.len() * thetas.len());
        for item in &items {
            info.extend(thetas.iter().map(|&t| item.information(t)));
        }
        Ok(ItemBank {
            items,
            ids,
            grid,
            info,
        })
    }

    pub fn from_records(records: Vec<ItemRecord>, grid: ThetaGrid) -> Result<Self> {
        let (ids, items) = records
            .into_iter()
            .map(|r| (r.id, ItemParams { a: r.a, b: r.b, c: r.c }))
            .unzip();
        Self::new(items, Some(ids), grid)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[ItemParams] {
        &self.items
    }

    pub fn item(&self, i: usize) -> &ItemParams {
        &self.items[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn grid(&self) -> &ThetaGrid {
        &self.grid
    }

    /// Precomputed information curve of item `i`.
    #[inline]
    pub fn curve(&self, i: usize) -> &[f64] {
        let n = self.grid.len();
        &self.info[i * n..(i + 1) * n]
    }

    /// Re-samples every item on another grid.
    pub fn with_grid(&self, grid: ThetaGrid) -> ItemBank {
        ItemBank::new(self.items.clone(), Some(self.ids.clone()), grid)
            .expect("items were already validated")
    }

    pub fn validate(&self) -> ValidationReport {
        validate_items(&self.items)
    }

    pub fn records(&self) -> Vec<ItemRecord> {
        self.ids
            .iter()
            .zip(&self.items)
            .map(|(id, it)| ItemRecord {
                id: id.clone(),
                a: it.a,
                b: it.b,
                c: it.c,
            })
            .collect()
    }

    pub fn save(&self, path: &Path, format: BankFormat) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        match format {
            BankFormat::Csv => {
                let mut w = csv::Writer::from_writer(BufWriter::new(file));
                for r in self.records() {
                    w.serialize(r).map_err(|e| Error::csv(path, e))?;
                }
                w.flush().map_err(|e| Error::io(path, e))?;
            }
            BankFormat::Json => {
                let mut w = BufWriter::new(file);
                serde_json::to_writer_pretty(&mut w, &self.records())
                    .map_err(|e| Error::json(path, e))?;
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
                w.flush().map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(())
    }
}

/// Reads a bank file. Row numbers in errors are one-based data rows.
pub fn load_bank(path: &Path, format: BankFormat, grid: ThetaGrid) -> Result<ItemBank> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<ItemRecord> = match format {
        BankFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_reader(BufReader::new(file));
            rdr.deserialize()
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::csv(path, e))?
        }
        BankFormat::Json => {
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(path, e))?
        }
    };
    ItemBank::from_records(records, grid)
}

/// Parameters of a uniformly drawn synthetic bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankRecipe {
    pub m: usize,
    #[serde(default = "default_a_range")]
    pub a_range: (f64, f64),
    #[serde(default = "default_b_range")]
    pub b_range: (f64, f64),
    #[serde(default = "default_c")]
    pub c_value: f64,
    pub seed: u64,
}

fn default_a_range() -> (f64, f64) {
    (1.0, 3.0)
}

fn default_b_range() -> (f64, f64) {
    (-3.0, 3.0)
}

fn default_c() -> f64 {
    0.2
}

impl BankRecipe {
    /// a in [1, 3), b in [-3, 3), c = 0.2.
    pub fn standard(m: usize, seed: u64) -> Self {
        BankRecipe {
            m,
            a_range: default_a_range(),
            b_range: default_b_range(),
            c_value: default_c(),
            seed,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("bank size M must be >= 1".into()));
        }
        let (alo, ahi) = self.a_range;
        if !(alo.is_finite() && ahi.is_finite() && alo > 0.0 && alo <= ahi) {
            return Err(Error::InvalidArgument(format!(
                "a range must satisfy 0 < lo <= hi, got [{alo}, {ahi}]"
            )));
        }
        let (blo, bhi) = self.b_range;
        if !(blo.is_finite() && bhi.is_finite() && blo <= bhi) {
            return Err(Error::InvalidArgument(format!(
                "b range must satisfy lo <= hi, got [{blo}, {bhi}]"
            )));
        }
        if !(self.c_value >= 0.0 && self.c_value < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "c must lie in [0, 1), got {}",
                self.c_value
            )));
        }
        Ok(())
    }
}

fn draw_uniform((lo, hi): (f64, f64), rng: &mut ChaCha8Rng) -> f64 {
    if lo == hi {
        lo
    } else {
        Uniform::new(lo, hi).sample(rng)
    }
}

/// Draws `a` and `b` uniformly on the half-open ranges, with constant `c`.
pub fn generate_bank(recipe: &BankRecipe, grid: ThetaGrid) -> Result<ItemBank> {
    recipe.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let items = (0..recipe.m)
        .map(|_| {
            let a = draw_uniform(recipe.a_range, &mut rng);
            let b = draw_uniform(recipe.b_range, &mut rng);
            ItemParams {
                a,
                b,
                c: recipe.c_value,
            }
        })
        .collect();
    ItemBank::new(items, None, grid)
}
