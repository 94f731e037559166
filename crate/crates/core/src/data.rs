//! Count and coordinate data: ingestion, filtering and size factors.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use faer::{Mat, Side};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

/// Layout of a count file on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    /// One row per spot, one column per gene.
    #[default]
    GenesInColumns,
    /// One row per gene, one column per spot.
    GenesInRows,
}

/// n×p matrix of read counts with spots as rows and genes as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    values: Vec<u32>,
    spot_ids: Vec<String>,
    gene_ids: Vec<String>,
}

impl CountMatrix {
    /// Builds a count matrix from row-major values (`values[i * p + j]` is
    /// the count of gene `j` at spot `i`).
    pub fn new(values: Vec<u32>, spot_ids: Vec<String>, gene_ids: Vec<String>) -> Result<Self> {
        let (n, p) = (spot_ids.len(), gene_ids.len());
        if n < 2 {
            return Err(Error::Validation(format!("need at least 2 spots, got {n}")));
        }
        if p < 1 {
            return Err(Error::Validation("need at least 1 gene".into()));
        }
        if values.len() != n * p {
            return Err(Error::Validation(format!(
                "count buffer has {} entries, expected {n}x{p}",
                values.len()
            )));
        }
        check_unique("spot", &spot_ids)?;
        check_unique("gene", &gene_ids)?;
        Ok(CountMatrix {
            values,
            spot_ids,
            gene_ids,
        })
    }

    pub fn n_spots(&self) -> usize {
        self.spot_ids.len()
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn spot_ids(&self) -> &[String] {
        &self.spot_ids
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    #[inline]
    pub fn get(&self, spot: usize, gene: usize) -> u32 {
        self.values[spot * self.gene_ids.len() + gene]
    }

    /// Row-major backing buffer.
    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn spot_total(&self, spot: usize) -> u64 {
        let p = self.n_genes();
        self.values[spot * p..(spot + 1) * p]
            .iter()
            .map(|&v| v as u64)
            .sum()
    }

    pub fn gene_column(&self, gene: usize) -> Vec<u32> {
        (0..self.n_spots()).map(|i| self.get(i, gene)).collect()
    }

    /// Fraction of entries equal to zero.
    pub fn zero_fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v == 0).count() as f64 / self.values.len() as f64
    }

    fn select(&self, spots: &[usize], genes: &[usize]) -> Result<Self> {
        let p = self.n_genes();
        let mut values = Vec::with_capacity(spots.len() * genes.len());
        for &i in spots {
            for &j in genes {
                values.push(self.values[i * p + j]);
            }
        }
        CountMatrix::new(
            values,
            spots.iter().map(|&i| self.spot_ids[i].clone()).collect(),
            genes.iter().map(|&j| self.gene_ids[j].clone()).collect(),
        )
    }
}

fn check_unique(what: &str, ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Validation(format!("duplicate {what} id '{id}'")));
        }
    }
    Ok(())
}

/// Planar coordinates of the spots, one row per spot.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCoords {
    coords: Vec<[f64; 2]>,
    spot_ids: Vec<String>,
}

impl SpatialCoords {
    pub fn new(coords: Vec<[f64; 2]>, spot_ids: Vec<String>) -> Result<Self> {
        if coords.len() != spot_ids.len() {
            return Err(Error::Validation(format!(
                "{} coordinate rows but {} spot ids",
                coords.len(),
                spot_ids.len()
            )));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coordinates"));
        }
        check_unique("spot", &spot_ids)?;
        let first = coords.first().copied();
        if coords.len() < 2 || coords.iter().all(|c| Some(*c) == first) {
            return Err(Error::Validation(
                "coordinates need at least two distinct rows".into(),
            ));
        }
        Ok(SpatialCoords { coords, spot_ids })
    }

    /// Coordinates with generated ids `spot_0`, `spot_1`, ...
    pub fn from_points(coords: Vec<[f64; 2]>) -> Result<Self> {
        let ids = (0..coords.len()).map(|i| format!("spot_{i}")).collect();
        SpatialCoords::new(coords, ids)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn spot_ids(&self) -> &[String] {
        &self.spot_ids
    }

    /// Reorders the rows to follow `spot_ids`.
    pub fn aligned_to(&self, spot_ids: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = self
            .spot_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let missing: Vec<String> = spot_ids
            .iter()
            .filter(|id| !index.contains_key(id.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::Alignment(missing));
        }
        let coords = spot_ids.iter().map(|id| self.coords[index[id.as_str()]]).collect();
        SpatialCoords::new(coords, spot_ids.to_vec())
    }
}

/// n×R covariate matrix whose first column is the intercept.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    x: Mat<f64>,
}

impl DesignMatrix {
    pub fn intercept(n: usize) -> Self {
        DesignMatrix {
            x: Mat::from_fn(n, 1, |_, _| 1.0),
        }
    }

    /// Intercept followed by the given covariate columns (each of length n).
    pub fn with_covariates(n: usize, covariates: &[Vec<f64>]) -> Result<Self> {
        if covariates.iter().any(|c| c.len() != n) {
            return Err(Error::Validation("covariate length differs from spot count".into()));
        }
        if covariates.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
        let x = Mat::from_fn(n, covariates.len() + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                covariates[j - 1][i]
            }
        });
        let gram = x.transpose() * &x;
        let rank_ok = gram.llt(Side::Lower).is_ok_and(|llt| {
            let l = llt.L();
            let max = (0..l.nrows()).map(|i| l[(i, i)]).fold(0.0, f64::max);
            (0..l.nrows()).all(|i| l[(i, i)] > 1e-10 * max)
        });
        if !rank_ok || x.ncols() > n {
            return Err(Error::Validation("design matrix is column-rank deficient".into()));
        }
        Ok(DesignMatrix { x })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.x
    }
}

/// Per-spot normalization constants with unit product.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeFactors(Vec<f64>);

impl SizeFactors {
    pub fn ones(n: usize) -> Self {
        SizeFactors(vec![1.0; n])
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Validation("size factors must be positive and finite".into()));
        }
        Ok(SizeFactors(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Spot totals divided by their geometric mean, so that the product is one.
pub fn compute_size_factors(counts: &CountMatrix) -> Result<SizeFactors> {
    let n = counts.n_spots();
    let mut log_totals = Vec::with_capacity(n);
    for i in 0..n {
        let total = counts.spot_total(i);
        if total == 0 {
            return Err(Error::ZeroTotal {
                spot: counts.spot_ids()[i].clone(),
            });
        }
        log_totals.push((total as f64).ln());
    }
    let log_geo_mean = log_totals.iter().sum::<f64>() / n as f64;
    Ok(SizeFactors(
        log_totals.iter().map(|lt| (lt - log_geo_mean).exp()).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterThresholds {
    pub min_spot_total: u64,
    pub min_gene_nonzero_frac: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            min_spot_total: 10,
            min_gene_nonzero_frac: 0.10,
        }
    }
}

/// Drops low-depth spots, then rarely detected genes.
///
/// The spot pass uses totals over the genes still present; the two passes
/// repeat until neither removes anything, which makes the filter idempotent.
/// On typical data the first round is already stable.
pub fn filter(
    counts: &CountMatrix,
    coords: &SpatialCoords,
    thresholds: FilterThresholds,
) -> Result<(CountMatrix, SpatialCoords)> {
    let FilterThresholds {
        min_spot_total,
        min_gene_nonzero_frac,
    } = thresholds;
    if !(0.0..=1.0).contains(&min_gene_nonzero_frac) {
        return Err(Error::Validation(format!(
            "gene non-zero fraction threshold {min_gene_nonzero_frac} outside [0, 1]"
        )));
    }
    if coords.spot_ids() != counts.spot_ids() {
        return Err(Error::Validation(
            "coordinates are not aligned to the count matrix".into(),
        ));
    }

    let p = counts.n_genes();
    let mut spots: Vec<usize> = (0..counts.n_spots()).collect();
    let mut genes: Vec<usize> = (0..p).collect();
    loop {
        let kept_spots: Vec<usize> = spots
            .iter()
            .copied()
            .filter(|&i| {
                genes.iter().map(|&j| counts.values[i * p + j] as u64).sum::<u64>()
                    >= min_spot_total
            })
            .collect();
        if kept_spots.is_empty() {
            return Err(Error::EmptyResult("spot"));
        }
        let kept_genes: Vec<usize> = genes
            .iter()
            .copied()
            .filter(|&j| {
                let nonzero = kept_spots
                    .iter()
                    .filter(|&&i| counts.values[i * p + j] > 0)
                    .count();
                nonzero as f64 >= min_gene_nonzero_frac * kept_spots.len() as f64
            })
            .collect();
        if kept_genes.is_empty() {
            return Err(Error::EmptyResult("gene"));
        }
        let stable = kept_spots.len() == spots.len() && kept_genes.len() == genes.len();
        spots = kept_spots;
        genes = kept_genes;
        if stable {
            break;
        }
    }

    let filtered = counts.select(&spots, &genes)?;
    let points = spots.iter().map(|&i| coords.points()[i]).collect();
    let coords = SpatialCoords::new(points, filtered.spot_ids().to_vec())?;
    Ok((filtered, coords))
}

// ---------------------------------------------------------------------------
// file IO

fn open_text(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if is_gzip(path) {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(reader)))
}

fn create_text(path: &Path) -> Result<Box<dyn Write>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let buffered = BufWriter::new(file);
    if is_gzip(path) {
        Ok(Box::new(GzEncoder::new(buffered, Compression::default())))
    } else {
        Ok(Box::new(buffered))
    }
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Reads every record of a delimited file. The delimiter is taken from
/// `delimiter` or detected from the first line (tab preferred, then comma).
fn read_records(path: &Path, delimiter: Option<u8>) -> Result<Vec<csv::StringRecord>> {
    let mut text = String::new();
    open_text(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    let delimiter = delimiter.unwrap_or_else(|| {
        let first = text.lines().next().unwrap_or("");
        if first.contains('\t') {
            b'\t'
        } else if first.contains(',') {
            b','
        } else {
            b'\t'
        }
    });
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: row + 1,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        records.push(rec);
    }
    Ok(records)
}

/// Loads a delimited count table (header row plus one identifier column).
pub fn load_counts(
    path: impl AsRef<Path>,
    orientation: Orientation,
    delimiter: Option<u8>,
) -> Result<CountMatrix> {
    let path = path.as_ref();
    let records = read_records(path, delimiter)?;
    let (header, body) = records.split_first().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        row: 1,
        column: 1,
        message: "empty file".into(),
    })?;
    let col_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut row_ids = Vec::with_capacity(body.len());
    let mut values = Vec::with_capacity(body.len() * col_ids.len());
    for (r, rec) in body.iter().enumerate() {
        let row = r + 2;
        if rec.len() != col_ids.len() + 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                column: rec.len(),
                message: format!("expected {} fields, found {}", col_ids.len() + 1, rec.len()),
            });
        }
        row_ids.push(rec[0].trim().to_string());
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v = cell.trim().parse::<u32>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: c + 1,
                message: format!("'{cell}' is not a non-negative integer count"),
            })?;
            values.push(v);
        }
    }
    match orientation {
        Orientation::GenesInColumns => CountMatrix::new(values, row_ids, col_ids),
        Orientation::GenesInRows => {
            let (genes, spots) = (row_ids.len(), col_ids.len());
            let mut transposed = vec![0u32; values.len()];
            for g in 0..genes {
                for s in 0..spots {
                    transposed[s * genes + g] = values[g * spots + s];
                }
            }
            CountMatrix::new(transposed, col_ids, row_ids)
        }
    }
}

/// Writes counts as a tab-delimited table with spots as rows.
pub fn write_counts(path: impl AsRef<Path>, counts: &CountMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut out = create_text(path)?;
    let io = |e| Error::io(path, e);
    write!(out, "spot").map_err(io)?;
    for g in counts.gene_ids() {
        write!(out, "\t{g}").map_err(io)?;
    }
    writeln!(out).map_err(io)?;
    for i in 0..counts.n_spots() {
        write!(out, "{}", counts.spot_ids()[i]).map_err(io)?;
        for j in 0..counts.n_genes() {
            write!(out, "\t{}", counts.get(i, j)).map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Loads `(spot_id, x, y)` rows in file order. A leading header row is
/// recognised by non-numeric coordinate cells.
pub fn load_coords(path: impl AsRef<Path>) -> Result<SpatialCoords> {
    let path = path.as_ref();
    let records = read_records(path, None)?;
    let mut ids = Vec::with_capacity(records.len());
    let mut points = Vec::with_capacity(records.len());
    for (r, rec) in records.iter().enumerate() {
        let row = r + 1;
        if rec.len() < 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                column: rec.len(),
                message: "expected spot id and two coordinates".into(),
            });
        }
        let x = rec[1].trim().parse::<f64>();
        let y = rec[2].trim().parse::<f64>();
        if r == 0 && x.is_err() && y.is_err() {
            continue;
        }
        let mut point = [0.0; 2];
        for (k, parsed) in [x, y].into_iter().enumerate() {
            point[k] = match parsed {
                Ok(v) if v.is_finite() => v,
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        row,
                        column: k + 2,
                        message: format!("'{}' is not a finite coordinate", rec[k + 1].trim()),
                    })
                }
            };
        }
        ids.push(rec[0].trim().to_string());
        points.push(point);
    }
    SpatialCoords::new(points, ids)
}

pub fn write_coords(path: impl AsRef<Path>, coords: &SpatialCoords) -> Result<()> {
    let path = path.as_ref();
    let mut out = create_text(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "spot\tx\ty").map_err(io)?;
    for (id, [x, y]) in coords.spot_ids().iter().zip(coords.points()) {
        writeln!(out, "{id}\t{x}\t{y}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Loads covariates (`spot_id, cov1, cov2, ...` with a header row) aligned
/// to `spot_ids`, prepending the intercept column.
pub fn load_design(path: impl AsRef<Path>, spot_ids: &[String]) -> Result<DesignMatrix> {
    let path = path.as_ref();
    let records = read_records(path, None)?;
    let (header, body) = records.split_first().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        row: 1,
        column: 1,
        message: "empty file".into(),
    })?;
    let n_cov = header.len().saturating_sub(1);
    let mut rows: HashMap<String, Vec<f64>> = HashMap::new();
    for (r, rec) in body.iter().enumerate() {
        let mut vals = Vec::with_capacity(n_cov);
        for c in 1..=n_cov {
            let cell = rec.get(c).unwrap_or("").trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => vals.push(v),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        row: r + 2,
                        column: c + 1,
                        message: format!("'{cell}' is not a finite covariate"),
                    })
                }
            }
        }
        rows.insert(rec[0].trim().to_string(), vals);
    }
    let missing: Vec<String> = spot_ids
        .iter()
        .filter(|id| !rows.contains_key(id.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::Alignment(missing));
    }
    let covariates: Vec<Vec<f64>> = (0..n_cov)
        .map(|c| spot_ids.iter().map(|id| rows[id.as_str()][c]).collect())
        .collect();
    DesignMatrix::with_covariates(spot_ids.len(), &covariates)
}
