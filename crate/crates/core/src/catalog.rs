//! Dated pricing catalog: per-model input/output prices per million tokens.
//!
//! Prices are held as exact fixed-point values ([`UnitPrice`], micro-USD per
//! million tokens) so catalog figures never drift. Cost arithmetic downstream
//! converts to `f64` once, at the point of multiplication.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::Serialize;
use thiserror::Error;

/// Columns a catalog file must carry. Anything else is ignored with a warning.
pub const REQUIRED_COLUMNS: [&str; 5] = [
    "model_id",
    "provider",
    "input_price_per_mtok",
    "output_price_per_mtok",
    "snapshot_date",
];

const MICROS: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty catalog")]
    Empty,
    #[error("catalog header is missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("row {row}: negative price {value} for `{column}`")]
    NegativePrice {
        row: usize,
        column: &'static str,
        value: String,
    },
    #[error("row {row}: duplicate model_id \"{model_id}\"")]
    DuplicateModel { row: usize, model_id: String },
    #[error("unknown model_id \"{0}\"")]
    UnknownModel(String),
}

/// Exact USD amount per million tokens, stored in micro-USD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct UnitPrice(u64);

impl UnitPrice {
    pub const ZERO: UnitPrice = UnitPrice(0);

    pub fn from_micros(micros: u64) -> Self {
        UnitPrice(micros)
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    /// USD per million tokens.
    pub fn usd_per_mtok(self) -> f64 {
        self.0 as f64 / MICROS as f64
    }

    /// USD charged for `tokens` tokens at this rate.
    pub fn cost_of(self, tokens: u64) -> f64 {
        self.usd_per_mtok() * tokens as f64 / 1e6
    }

    pub fn checked_add(self, other: UnitPrice) -> Option<UnitPrice> {
        self.0.checked_add(other.0).map(UnitPrice)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PriceParseError {
    #[error("negative price")]
    Negative,
    #[error("not a decimal number")]
    NotDecimal,
    #[error("more than 6 decimal places")]
    TooPrecise,
    #[error("price out of range")]
    Overflow,
}

impl FromStr for UnitPrice {
    type Err = PriceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix('-') {
            // "-0" and "-0.00" are still zero
            return match rest.parse::<UnitPrice>() {
                Ok(p) if p.0 == 0 => Ok(p),
                Ok(_) => Err(PriceParseError::Negative),
                Err(e) => Err(e),
            };
        }
        let s = s.strip_prefix('+').unwrap_or(s);
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        if whole.is_empty() && frac.is_empty() {
            return Err(PriceParseError::NotDecimal);
        }
        let all_digits = |t: &str| t.bytes().all(|b| b.is_ascii_digit());
        if !all_digits(whole) || !all_digits(frac) {
            return Err(PriceParseError::NotDecimal);
        }
        if frac.len() > 6 {
            return Err(PriceParseError::TooPrecise);
        }
        let whole: u64 = if whole.is_empty() {
            0
        } else {
            whole.parse().map_err(|_| PriceParseError::Overflow)?
        };
        let mut frac_micros: u64 = 0;
        for (i, b) in frac.bytes().enumerate() {
            frac_micros += u64::from(b - b'0') * 10u64.pow(5 - i as u32);
        }
        whole
            .checked_mul(MICROS)
            .and_then(|w| w.checked_add(frac_micros))
            .map(UnitPrice)
            .ok_or(PriceParseError::Overflow)
    }
}

impl fmt::Display for UnitPrice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / MICROS;
        let frac = self.0 % MICROS;
        if frac == 0 {
            return write!(f, "{whole}.00");
        }
        let digits = format!("{frac:06}");
        let trimmed = digits.trim_end_matches('0');
        let shown = if trimmed.len() < 2 { &digits[..2] } else { trimmed };
        write!(f, "{whole}.{shown}")
    }
}

impl Serialize for UnitPrice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.usd_per_mtok())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelPricing {
    pub model_id: String,
    pub provider: String,
    pub input_price_per_mtok: UnitPrice,
    pub output_price_per_mtok: UnitPrice,
    pub snapshot_date: NaiveDate,
}

impl ModelPricing {
    pub fn new(
        model_id: impl Into<String>,
        provider: impl Into<String>,
        input: UnitPrice,
        output: UnitPrice,
        snapshot_date: NaiveDate,
    ) -> Self {
        ModelPricing {
            model_id: model_id.into(),
            provider: provider.into(),
            input_price_per_mtok: input,
            output_price_per_mtok: output,
            snapshot_date,
        }
    }

    /// Input plus output unit price, the figure users compare models by.
    pub fn listed_price(&self) -> UnitPrice {
        UnitPrice(self.input_price_per_mtok.0 + self.output_price_per_mtok.0)
    }
}

/// Immutable after load. Entries are keyed and iterated by model id.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingCatalog {
    entries: BTreeMap<String, ModelPricing>,
    snapshot_date: NaiveDate,
    warnings: Vec<String>,
}

impl PricingCatalog {
    /// Builds a catalog from already-validated entries. The catalog date is the
    /// most recent entry date; older entries act as per-entry overrides.
    pub fn from_entries(
        entries: impl IntoIterator<Item = ModelPricing>,
    ) -> Result<Self, CatalogError> {
        let mut map = BTreeMap::new();
        for (i, e) in entries.into_iter().enumerate() {
            if map.contains_key(&e.model_id) {
                return Err(CatalogError::DuplicateModel {
                    row: i + 1,
                    model_id: e.model_id,
                });
            }
            map.insert(e.model_id.clone(), e);
        }
        let snapshot_date = map
            .values()
            .map(|e| e.snapshot_date)
            .max()
            .ok_or(CatalogError::Empty)?;
        Ok(PricingCatalog {
            entries: map,
            snapshot_date,
            warnings: Vec::new(),
        })
    }

    pub fn snapshot_date(&self) -> NaiveDate {
        self.snapshot_date
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Non-fatal issues found while loading (ignored columns and the like).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn get(&self, model_id: &str) -> Result<&ModelPricing, CatalogError> {
        self.entries
            .get(model_id)
            .ok_or_else(|| CatalogError::UnknownModel(model_id.to_string()))
    }

    pub fn contains(&self, model_id: &str) -> bool {
        self.entries.contains_key(model_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ModelPricing> {
        self.entries.values()
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn listed_price(&self, model_id: &str) -> Result<UnitPrice, CatalogError> {
        self.get(model_id).map(ModelPricing::listed_price)
    }

    /// Parses catalog CSV text. Rows are numbered from 1 (the header is row 0).
    pub fn parse_csv(text: &str) -> Result<Self, CatalogError> {
        if text.trim().is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| CatalogError::MalformedRow {
                row: 0,
                message: e.to_string(),
            })?
            .clone();
        let mut columns = [0usize; 5];
        for (slot, name) in columns.iter_mut().zip(REQUIRED_COLUMNS) {
            *slot = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CatalogError::MissingColumn(name.to_string()))?;
        }
        let mut warnings = Vec::new();
        for h in headers.iter().filter(|h| !REQUIRED_COLUMNS.contains(h)) {
            let msg = format!("ignoring unknown catalog column `{h}`");
            log::warn!("{msg}");
            warnings.push(msg);
        }

        let mut entries: BTreeMap<String, ModelPricing> = BTreeMap::new();
        for (i, row) in reader.records().enumerate() {
            let row_no = i + 1;
            let row = row.map_err(|e| CatalogError::MalformedRow {
                row: row_no,
                message: e.to_string(),
            })?;
            let cell = |idx: usize| -> Result<&str, CatalogError> {
                row.get(idx).ok_or_else(|| CatalogError::MalformedRow {
                    row: row_no,
                    message: format!("expected at least {} fields, found {}", idx + 1, row.len()),
                })
            };
            let model_id = cell(columns[0])?.to_string();
            if model_id.is_empty() {
                return Err(CatalogError::MalformedRow {
                    row: row_no,
                    message: "empty model_id".into(),
                });
            }
            let provider = cell(columns[1])?.to_string();
            let price = |idx: usize, column: &'static str| -> Result<UnitPrice, CatalogError> {
                let raw = cell(idx)?;
                raw.parse::<UnitPrice>().map_err(|e| match e {
                    PriceParseError::Negative => CatalogError::NegativePrice {
                        row: row_no,
                        column,
                        value: raw.to_string(),
                    },
                    other => CatalogError::MalformedRow {
                        row: row_no,
                        message: format!("{column} `{raw}`: {other}"),
                    },
                })
            };
            let input = price(columns[2], "input_price_per_mtok")?;
            let output = price(columns[3], "output_price_per_mtok")?;
            let raw_date = cell(columns[4])?;
            let snapshot_date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|e| {
                CatalogError::MalformedRow {
                    row: row_no,
                    message: format!("snapshot_date `{raw_date}`: {e}"),
                }
            })?;
            if entries.contains_key(&model_id) {
                return Err(CatalogError::DuplicateModel {
                    row: row_no,
                    model_id,
                });
            }
            entries.insert(
                model_id.clone(),
                ModelPricing::new(model_id, provider, input, output, snapshot_date),
            );
        }
        let mut catalog = PricingCatalog::from_entries(entries.into_values())?;
        catalog.warnings = warnings;
        Ok(catalog)
    }

    pub fn to_csv(&self) -> String {
        let mut out = REQUIRED_COLUMNS.join(",");
        out.push('\n');
        for e in self.entries.values() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&e.model_id),
                csv_field(&e.provider),
                e.input_price_per_mtok,
                e.output_price_per_mtok,
                e.snapshot_date
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<PricingCatalog, CatalogError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    PricingCatalog::parse_csv(&text)
}

/// Listed price of `model_id`, in USD per million tokens.
pub fn listed_price(catalog: &PricingCatalog, model_id: &str) -> Result<f64, CatalogError> {
    catalog.listed_price(model_id).map(UnitPrice::usd_per_mtok)
}
