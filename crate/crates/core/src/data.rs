//! Multi-domain dataset representation, CSV ingestion and pooled standardization.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of distinct integer levels below which a column is treated as discrete.
pub const DEFAULT_MAX_LEVELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self { name: name.into(), kind }
    }
}

/// Rows of one domain, stored column-major. Discrete entries are integer codes held as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBlock {
    label: i64,
    columns: Vec<Vec<f64>>,
}

impl DomainBlock {
    pub fn new(label: i64, columns: Vec<Vec<f64>>) -> Self {
        Self { label, columns }
    }

    /// Original domain label as it appeared in the input.
    pub fn label(&self) -> i64 {
        self.label
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    /// Gathers the given columns of one row.
    pub fn row_values(&self, row: usize, cols: &[usize]) -> Vec<f64> {
        cols.iter().map(|&c| self.columns[c][row]).collect()
    }
}

/// Joint samples of named columns collected in `m ≥ 1` domains.
///
/// Domains are indexed `0..m` internally, in ascending order of their original
/// labels. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDomainDataset {
    columns: Vec<ColumnSpec>,
    domains: Vec<DomainBlock>,
}

impl MultiDomainDataset {
    /// Builds a dataset, checking that every block matches the column list,
    /// is non-empty and holds finite values (integral ones for discrete columns).
    pub fn new(columns: Vec<ColumnSpec>, mut domains: Vec<DomainBlock>) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let names: BTreeSet<&str> = columns.iter().map(|c| c.name.as_str()).collect();
        if names.len() != columns.len() {
            return Err(Error::InvalidArgument("duplicate column names".into()));
        }
        domains.sort_by_key(|d| d.label);
        for pair in domains.windows(2) {
            if pair[0].label == pair[1].label {
                return Err(Error::InvalidArgument(format!(
                    "domain label {} appears twice",
                    pair[0].label
                )));
            }
        }
        for block in &domains {
            if block.columns.len() != columns.len() {
                return Err(Error::DimensionMismatch {
                    expected: columns.len(),
                    got: block.columns.len(),
                });
            }
            let n = block.n_rows();
            if n == 0 {
                return Err(Error::EmptyDomain(block.label));
            }
            for (spec, col) in columns.iter().zip(&block.columns) {
                if col.len() != n {
                    return Err(Error::InvalidArgument(format!(
                        "ragged block for domain {}",
                        block.label
                    )));
                }
                if let Some(bad) = col.iter().find(|v| {
                    !v.is_finite() || (spec.kind == ColumnKind::Discrete && v.fract() != 0.0)
                }) {
                    return Err(Error::InvalidArgument(format!(
                        "column `{}` holds invalid value {bad}",
                        spec.name
                    )));
                }
            }
        }
        Ok(Self { columns, domains })
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn domains(&self) -> &[DomainBlock] {
        &self.domains
    }

    pub fn domain(&self, i: usize) -> &DomainBlock {
        &self.domains[i]
    }

    pub fn n_rows(&self) -> usize {
        self.domains.iter().map(DomainBlock::n_rows).sum()
    }

    pub fn row_counts(&self) -> Vec<usize> {
        self.domains.iter().map(DomainBlock::n_rows).collect()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_owned()))
    }

    pub fn column_indices<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.column_index(n.as_ref())).collect()
    }

    pub fn kind(&self, j: usize) -> ColumnKind {
        self.columns[j].kind
    }

    /// All values of column `j`, concatenated over domains in order.
    pub fn pooled_column(&self, j: usize) -> Vec<f64> {
        self.domains
            .iter()
            .flat_map(|d| d.column(j).iter().copied())
            .collect()
    }

    /// Sorted distinct integer levels of a discrete column, pooled over domains.
    pub fn levels(&self, j: usize) -> Vec<i64> {
        let set: BTreeSet<i64> = self
            .domains
            .iter()
            .flat_map(|d| d.column(j).iter().map(|&v| v as i64))
            .collect();
        set.into_iter().collect()
    }

    /// Same data with column kinds replaced.
    pub fn with_kinds(&self, kinds: &[ColumnKind]) -> Result<Self> {
        if kinds.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                expected: self.columns.len(),
                got: kinds.len(),
            });
        }
        let columns = self
            .columns
            .iter()
            .zip(kinds)
            .map(|(c, &k)| ColumnSpec::new(c.name.clone(), k))
            .collect();
        Self::new(columns, self.domains.clone())
    }

    /// Writes the dataset as CSV with the domain column first.
    pub fn write_csv_to<W: Write>(&self, writer: W, domain_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![domain_column.to_owned()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for block in &self.domains {
            for row in 0..block.n_rows() {
                record.clear();
                record.push(block.label.to_string());
                for (j, spec) in self.columns.iter().enumerate() {
                    let v = block.value(row, j);
                    record.push(match spec.kind {
                        ColumnKind::Discrete => (v as i64).to_string(),
                        // `{:?}` is the shortest representation that round-trips.
                        ColumnKind::Continuous => format!("{v:?}"),
                    });
                }
                w.write_record(&record)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, domain_column: &str) -> Result<()> {
        let file = File::create(path)?;
        self.write_csv_to(std::io::BufWriter::new(file), domain_column)
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub domain_column: String,
    pub max_levels: usize,
    /// Per-column kinds that bypass inference.
    pub kind_overrides: BTreeMap<String, ColumnKind>,
    /// When given, every listed label must have at least one row.
    pub declared_domains: Option<Vec<i64>>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            domain_column: "domain".into(),
            max_levels: DEFAULT_MAX_LEVELS,
            kind_overrides: BTreeMap::new(),
            declared_domains: None,
        }
    }
}

/// Discrete iff every value is integral and there are at most `max_levels` distinct values.
pub fn infer_column_kind(values: &[f64], max_levels: usize) -> ColumnKind {
    let mut levels = BTreeSet::new();
    for &v in values {
        if !v.is_finite() || v.fract() != 0.0 {
            return ColumnKind::Continuous;
        }
        levels.insert(v as i64);
        if levels.len() > max_levels {
            return ColumnKind::Continuous;
        }
    }
    ColumnKind::Discrete
}

pub fn load_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<MultiDomainDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_csv(std::io::BufReader::new(file), options)
}

pub fn read_csv<R: Read>(reader: R, options: &LoadOptions) -> Result<MultiDomainDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let domain_pos = header
        .iter()
        .position(|h| *h == options.domain_column)
        .ok_or_else(|| Error::UnknownColumn(options.domain_column.clone()))?;
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != domain_pos)
        .map(|(_, h)| h.clone())
        .collect();

    let mut grouped: BTreeMap<i64, Vec<Vec<f64>>> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::MalformedRow { row, reason: e.to_string() })?;
        if record.len() != header.len() {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let label_cell = &record[domain_pos];
        let label: i64 = label_cell.parse().map_err(|_| Error::MalformedRow {
            row,
            reason: format!("domain label `{label_cell}` is not an integer"),
        })?;
        let block = grouped
            .entry(label)
            .or_insert_with(|| vec![Vec::new(); names.len()]);
        let mut j = 0;
        for (pos, cell) in record.iter().enumerate() {
            if pos == domain_pos {
                continue;
            }
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::MalformedRow {
                    row,
                    reason: if cell.is_empty() {
                        format!("missing value in column `{}`", names[j])
                    } else {
                        format!("non-numeric value `{cell}` in column `{}`", names[j])
                    },
                })?;
            block[j].push(v);
            j += 1;
        }
    }
    if grouped.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(declared) = &options.declared_domains {
        if let Some(&missing) = declared.iter().find(|l| !grouped.contains_key(l)) {
            return Err(Error::EmptyDomain(missing));
        }
    }

    let columns = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let kind = options.kind_overrides.get(name).copied().unwrap_or_else(|| {
                let pooled: Vec<f64> =
                    grouped.values().flat_map(|b| b[j].iter().copied()).collect();
                infer_column_kind(&pooled, options.max_levels)
            });
            ColumnSpec::new(name.clone(), kind)
        })
        .collect();
    let domains = grouped
        .into_iter()
        .map(|(label, cols)| DomainBlock::new(label, cols))
        .collect();
    MultiDomainDataset::new(columns, domains)
}

/// `standardized = (raw - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

/// Per-column affine maps produced by [`standardize`]; `None` for discrete columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub params: Vec<Option<Affine>>,
}

impl Standardization {
    pub fn invert(&self, dataset: &MultiDomainDataset) -> MultiDomainDataset {
        self.apply(dataset, |v, a| v * a.scale + a.shift)
    }

    fn apply(&self, dataset: &MultiDomainDataset, f: impl Fn(f64, Affine) -> f64) -> MultiDomainDataset {
        let domains = dataset
            .domains
            .iter()
            .map(|block| {
                let columns = block
                    .columns
                    .iter()
                    .zip(&self.params)
                    .map(|(col, p)| match p {
                        Some(a) => col.iter().map(|&v| f(v, *a)).collect(),
                        None => col.clone(),
                    })
                    .collect();
                DomainBlock::new(block.label, columns)
            })
            .collect();
        MultiDomainDataset { columns: dataset.columns.clone(), domains }
    }
}

/// Shifts and scales every continuous column to pooled mean 0 and (population) variance 1.
///
/// The map is shared by all domains so that densities of the same point stay
/// comparable across domains; per-domain means are left as they fall.
pub fn standardize(dataset: &MultiDomainDataset) -> Result<(MultiDomainDataset, Standardization)> {
    let params = dataset
        .columns
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            if spec.kind == ColumnKind::Discrete {
                return Ok(None);
            }
            let values = dataset.pooled_column(j);
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let scale = var.sqrt();
            if !(scale > 0.0) || scale < 1e-300 {
                return Err(Error::ZeroVariance(spec.name.clone()));
            }
            Ok(Some(Affine { shift: mean, scale }))
        })
        .collect::<Result<Vec<_>>>()?;
    let std = Standardization { params };
    Ok((std.apply(dataset, |v, a| (v - a.shift) / a.scale), std))
}
