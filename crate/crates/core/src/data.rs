//! Historical many-arm experiments, the novel arm, fold assignment and CSV I/O.
//!
//! A [`HistoricalDataset`] always has exactly `n` rows in each of its `K`
//! arms. Fold labels, once assigned, split every arm into equal cells.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::kernel::FoldSet;
use crate::rng;

/// `N = n·K` observations `(A_i, S_i, Y_i)` with optional fold labels `V_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalDataset {
    s: DMatrix<f64>,
    y: Vec<f64>,
    arm: Vec<usize>,
    fold: Option<Vec<u8>>,
    num_folds: u8,
    k: usize,
    n: usize,
    arm_labels: Vec<String>,
    meta: BTreeMap<String, f64>,
}

/// Short-term outcomes observed in the novel arm.
#[derive(Debug, Clone, PartialEq)]
pub struct NovelDataset {
    s: DMatrix<f64>,
}

/// A parsed CSV file of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Historical(HistoricalDataset),
    Novel(NovelDataset),
}

fn check_finite(s: &DMatrix<f64>, y: Option<&[f64]>) -> Result<()> {
    for i in 0..s.nrows() {
        if s.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("row {i}: non-finite surrogate value")));
        }
        if let Some(y) = y {
            if !y[i].is_finite() {
                return Err(Error::Validation(format!("row {i}: non-finite outcome value")));
            }
        }
    }
    Ok(())
}

impl HistoricalDataset {
    /// Build from dense arm indices `0..k`; every arm must have the same count.
    pub fn new(s: DMatrix<f64>, y: Vec<f64>, arm: Vec<usize>, k: usize) -> Result<Self> {
        let labels = (0..k).map(|a| a.to_string()).collect();
        Self::with_labels(s, y, arm, labels)
    }

    fn with_labels(s: DMatrix<f64>, y: Vec<f64>, arm: Vec<usize>, arm_labels: Vec<String>) -> Result<Self> {
        let k = arm_labels.len();
        if s.nrows() == 0 {
            return Err(Error::Validation("no rows".into()));
        }
        if s.ncols() == 0 {
            return Err(Error::Validation("surrogates need at least one column".into()));
        }
        if y.len() != s.nrows() || arm.len() != s.nrows() {
            return Err(Error::Input(format!(
                "row count mismatch: S has {}, Y has {}, A has {}",
                s.nrows(),
                y.len(),
                arm.len()
            )));
        }
        check_finite(&s, Some(&y))?;
        let mut counts = vec![0usize; k];
        for (i, &a) in arm.iter().enumerate() {
            if a >= k {
                return Err(Error::Validation(format!("row {i}: arm index {a} outside 0..{k}")));
            }
            counts[a] += 1;
        }
        let n = counts[0];
        for (a, &c) in counts.iter().enumerate() {
            if c != n {
                let mut msg = format!("arm {a} has {c} units, expected {n}");
                if arm_labels[a] != a.to_string() {
                    msg.push_str(&format!(" (label {:?})", arm_labels[a]));
                }
                return Err(Error::Validation(msg));
            }
        }
        Ok(Self { s, y, arm, fold: None, num_folds: 0, k, n, arm_labels, meta: BTreeMap::new() })
    }

    /// Build from arbitrary arm labels, canonicalized to `0..K` in order of
    /// first appearance.
    pub fn from_labeled(s: DMatrix<f64>, y: Vec<f64>, labels: &[String]) -> Result<Self> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut names = Vec::new();
        let arm = labels
            .iter()
            .map(|l| {
                *index.entry(l.as_str()).or_insert_with(|| {
                    names.push(l.clone());
                    names.len() - 1
                })
            })
            .collect();
        Self::with_labels(s, y, arm, names)
    }

    pub fn num_arms(&self) -> usize {
        self.k
    }

    /// Units per arm.
    pub fn per_arm(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.s.ncols()
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn arms(&self) -> &[usize] {
        &self.arm
    }

    pub fn arm_labels(&self) -> &[String] {
        &self.arm_labels
    }

    pub fn folds(&self) -> Option<&[u8]> {
        self.fold.as_deref()
    }

    /// Number of folds the labels were drawn for (0 when unassigned).
    pub fn num_folds(&self) -> u8 {
        self.num_folds
    }

    /// Folds present in the rows of this dataset; `None` when unassigned.
    pub fn fold_set(&self) -> Option<FoldSet> {
        self.fold.as_ref().map(|f| {
            let mut present: Vec<u8> = f.clone();
            present.sort_unstable();
            present.dedup();
            FoldSet::of(&present)
        })
    }

    pub fn meta(&self) -> &BTreeMap<String, f64> {
        &self.meta
    }

    pub fn with_meta(mut self, key: &str, value: f64) -> Self {
        self.meta.insert(key.to_string(), value);
        self
    }

    /// Row indices of every arm, in row order.
    pub fn arm_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::with_capacity(self.n); self.k];
        for (i, &a) in self.arm.iter().enumerate() {
            rows[a].push(i);
        }
        rows
    }

    /// Row indices of cell `(arm, fold)` for every arm, in row order.
    pub fn fold_rows(&self, fold: u8) -> Result<Vec<Vec<usize>>> {
        let labels = self
            .fold
            .as_ref()
            .ok_or_else(|| Error::State("dataset has no fold labels; call assign_folds first".into()))?;
        let mut rows = vec![Vec::new(); self.k];
        for (i, (&a, &v)) in self.arm.iter().zip(labels).enumerate() {
            if v == fold {
                rows[a].push(i);
            }
        }
        Ok(rows)
    }

    /// Subset with the given row indices (which must keep cells balanced).
    fn subset(&self, rows: &[usize], n: usize) -> Self {
        Self {
            s: self.s.select_rows(rows.iter()),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            arm: rows.iter().map(|&i| self.arm[i]).collect(),
            fold: self.fold.as_ref().map(|f| rows.iter().map(|&i| f[i]).collect()),
            num_folds: self.num_folds,
            k: self.k,
            n,
            arm_labels: self.arm_labels.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Rows whose fold label lies in `folds`; labels are kept.
    pub fn restrict_to_folds(&self, folds: FoldSet) -> Result<Self> {
        let labels = self
            .fold
            .as_ref()
            .ok_or_else(|| Error::State("dataset has no fold labels; call assign_folds first".into()))?;
        let rows: Vec<usize> = (0..self.len()).filter(|&i| folds.contains(labels[i])).collect();
        if rows.is_empty() {
            return Err(Error::State(format!("no rows in folds {:?}", folds.folds())));
        }
        let n = rows.len() / self.k;
        Ok(self.subset(&rows, n))
    }

    /// Seeded per-arm fold assignment into `num_folds ∈ {2, 4}` equal cells.
    ///
    /// When `n` is not divisible by `num_folds`, `n mod num_folds` units per
    /// arm are dropped uniformly at random and a warning is logged.
    pub fn assign_folds(&self, num_folds: u8, seed: u64) -> Result<Self> {
        if num_folds != 2 && num_folds != 4 {
            return Err(Error::Input(format!("num_folds must be 2 or 4, got {num_folds}")));
        }
        let f = num_folds as usize;
        if self.n < f {
            return Err(Error::Input(format!("{} units per arm cannot fill {f} folds", self.n)));
        }
        let drop = self.n % f;
        if drop > 0 {
            log::warn!(
                "{} units per arm is not divisible by {f}; dropping {drop} unit(s) per arm",
                self.n
            );
        }
        let cell = (self.n - drop) / f;
        let mut label: Vec<Option<u8>> = vec![None; self.len()];
        for (a, rows) in self.arm_rows().into_iter().enumerate() {
            let mut perm = rows;
            let mut rng = rng::stream(seed, rng::purpose::FOLDS, a as u64);
            perm.shuffle(&mut rng);
            for (pos, &i) in perm.iter().skip(drop).enumerate() {
                label[i] = Some((pos / cell) as u8);
            }
        }
        let keep: Vec<usize> = (0..self.len()).filter(|&i| label[i].is_some()).collect();
        let mut out = self.subset(&keep, self.n - drop);
        out.fold = Some(keep.iter().map(|&i| label[i].unwrap()).collect());
        out.num_folds = num_folds;
        Ok(out)
    }

    /// Same data with fold labels `0 ↔ 1` exchanged.
    pub fn swap_folds01(&self) -> Self {
        let mut out = self.clone();
        if let Some(f) = out.fold.as_mut() {
            for v in f.iter_mut() {
                *v = match *v {
                    0 => 1,
                    1 => 0,
                    other => other,
                };
            }
        }
        out
    }

    /// Attach explicit fold labels (validated for balanced cells).
    pub fn with_folds(&self, folds: Vec<u8>, num_folds: u8) -> Result<Self> {
        if folds.len() != self.len() {
            return Err(Error::Input("fold label count differs from row count".into()));
        }
        if folds.iter().any(|&v| v >= num_folds) {
            return Err(Error::Input(format!("fold label outside 0..{num_folds}")));
        }
        let mut counts = vec![vec![0usize; num_folds as usize]; self.k];
        for (&a, &v) in self.arm.iter().zip(&folds) {
            counts[a][v as usize] += 1;
        }
        let c0 = counts[0][0];
        for (a, row) in counts.iter().enumerate() {
            for (v, &c) in row.iter().enumerate() {
                if c != c0 {
                    return Err(Error::Validation(format!(
                        "cell (arm {a}, fold {v}) has {c} units, expected {c0}"
                    )));
                }
            }
        }
        let mut out = self.clone();
        out.fold = Some(folds);
        out.num_folds = num_folds;
        Ok(out)
    }
}

impl NovelDataset {
    pub fn new(s: DMatrix<f64>) -> Result<Self> {
        if s.nrows() == 0 {
            return Err(Error::Validation("no rows".into()));
        }
        if s.ncols() == 0 {
            return Err(Error::Validation("surrogates need at least one column".into()));
        }
        check_finite(&s, None)?;
        Ok(Self { s })
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn len(&self) -> usize {
        self.s.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.s.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.s.ncols()
    }

    /// Check the novel sample lives in the same space as `hist`.
    pub fn check_compatible(&self, hist: &HistoricalDataset) -> Result<()> {
        if self.dim() != hist.dim() {
            return Err(Error::Validation(format!(
                "novel data has dimension {}, historical has {}",
                self.dim(),
                hist.dim()
            )));
        }
        Ok(())
    }
}

fn parse_field(raw: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::Validation(format!("row {row}: cannot parse {col} value {raw:?}")))?;
    if !v.is_finite() {
        return Err(Error::Validation(format!("row {row}: non-finite {col} value")));
    }
    Ok(v)
}

fn surrogate_columns(headers: &csv::StringRecord) -> Result<Vec<usize>> {
    let mut cols = Vec::new();
    for d in 0.. {
        match headers.iter().position(|h| h.trim() == format!("s_{d}")) {
            Some(c) => cols.push(c),
            None => break,
        }
    }
    if cols.is_empty() {
        return Err(Error::Validation("header declares no s_0 column".into()));
    }
    Ok(cols)
}

/// Parse a historical (`arm, y, s_0..`) or novel (`s_0..`) CSV file.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    if headers.is_empty() || records.is_empty() {
        return Err(Error::Validation("no rows".into()));
    }
    let s_cols = surrogate_columns(&headers)?;
    let arm_col = headers.iter().position(|h| h.trim() == "arm");
    let y_col = headers.iter().position(|h| h.trim() == "y");
    let d = s_cols.len();
    let mut s = DMatrix::zeros(records.len(), d);
    for (i, rec) in records.iter().enumerate() {
        for (c, &col) in s_cols.iter().enumerate() {
            let raw = rec.get(col).ok_or_else(|| Error::Validation(format!("row {i}: missing s_{c}")))?;
            s[(i, c)] = parse_field(raw, i, &format!("s_{c}"))?;
        }
    }
    match (arm_col, y_col) {
        (Some(ac), Some(yc)) => {
            let mut y = Vec::with_capacity(records.len());
            let mut labels = Vec::with_capacity(records.len());
            for (i, rec) in records.iter().enumerate() {
                let raw = rec.get(yc).ok_or_else(|| Error::Validation(format!("row {i}: missing y")))?;
                y.push(parse_field(raw, i, "y")?);
                let label = rec.get(ac).ok_or_else(|| Error::Validation(format!("row {i}: missing arm")))?;
                labels.push(label.trim().to_string());
            }
            Ok(Dataset::Historical(HistoricalDataset::from_labeled(s, y, &labels)?))
        }
        (None, None) => Ok(Dataset::Novel(NovelDataset::new(s)?)),
        _ => Err(Error::Validation("historical files need both arm and y columns".into())),
    }
}

pub fn load_historical_csv(path: impl AsRef<Path>) -> Result<HistoricalDataset> {
    match load_csv(path)? {
        Dataset::Historical(h) => Ok(h),
        Dataset::Novel(_) => Err(Error::Validation("expected a historical file with arm and y columns".into())),
    }
}

pub fn load_novel_csv(path: impl AsRef<Path>) -> Result<NovelDataset> {
    match load_csv(path)? {
        Dataset::Novel(n) => Ok(n),
        Dataset::Historical(_) => Err(Error::Validation("expected a novel file with only s_* columns".into())),
    }
}

fn s_header(d: usize) -> Vec<String> {
    (0..d).map(|c| format!("s_{c}")).collect()
}

/// Write in the `arm, y, s_0..s_{d-1}` format (arm written by label).
pub fn write_historical_csv(path: impl AsRef<Path>, data: &HistoricalDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["arm".to_string(), "y".to_string()];
    header.extend(s_header(data.dim()));
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec = vec![data.arm_labels[data.arm[i]].clone(), format!("{:e}", data.y[i])];
        rec.extend(data.s.row(i).iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_novel_csv(path: impl AsRef<Path>, data: &NovelDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(s_header(data.dim()))?;
    for i in 0..data.len() {
        w.write_record(data.s.row(i).iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}
