//! Data handling, eigen basis of the data scatter, PCA and pair features.
//!
//! The learned metric lives in the span of the top `K` eigenvectors of the
//! (optionally centered and standardized) scatter matrix. A pair `(i, j)` is
//! summarized by its augmented feature
//! `ω = (-1, [(xᵢ-xⱼ)ᵀv₁]², …, [(xᵢ-xⱼ)ᵀv_K]²)`, so that the constraint
//! likelihood only depends on `γᵀω` with `γ = (μ, γ₁, …, γ_K)`.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormality tolerance for basis vectors.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Rows are examples, columns are features, optionally with one class label
/// per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    labels: Option<Vec<i64>>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>, labels: Option<Vec<i64>>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidData(format!(
                "need at least one row and one column, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            // column-major storage
            let row = idx % values.nrows();
            return Err(Error::InvalidData(format!(
                "non-finite value in row {row}"
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != values.nrows() {
                return Err(Error::InvalidData(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    values.nrows()
                )));
            }
        }
        Ok(Self { values, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<i64>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidData("ragged rows".into()));
        }
        let values = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(values, labels)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[i64]> {
        self.labels().ok_or(Error::MissingLabels)
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index < self.nrows() {
            Ok(())
        } else {
            Err(Error::IndexOutOfBounds {
                index,
                rows: self.nrows(),
            })
        }
    }

    /// Copy of the given rows, labels carried along.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            self.check_index(i)?;
        }
        let values = self.values.select_rows(indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(values, labels)
    }

    /// Sorted distinct class labels.
    pub fn classes(&self) -> Result<Vec<i64>> {
        let mut classes = self.require_labels()?.to_vec();
        classes.sort_unstable();
        classes.dedup();
        Ok(classes)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(file)
    }

    /// Parse CSV with a header of `f0..f{d-1}` and an optional integer
    /// `label` column, in any order.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Csv {
                row: 1,
                message: e.to_string(),
            })?
            .clone();

        let mut feature_cols: Vec<Option<usize>> = Vec::new();
        let mut label_col = None;
        for (pos, name) in header.iter().enumerate() {
            if name == "label" {
                if label_col.replace(pos).is_some() {
                    return Err(Error::Csv {
                        row: 1,
                        message: "duplicate label column".into(),
                    });
                }
                continue;
            }
            let k = name
                .strip_prefix('f')
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::Csv {
                    row: 1,
                    message: format!("unexpected column `{name}`"),
                })?;
            if feature_cols.len() <= k {
                feature_cols.resize(k + 1, None);
            }
            if feature_cols[k].replace(pos).is_some() {
                return Err(Error::Csv {
                    row: 1,
                    message: format!("duplicate column `{name}`"),
                });
            }
        }
        let feature_cols: Vec<usize> = feature_cols
            .into_iter()
            .enumerate()
            .map(|(k, c)| {
                c.ok_or_else(|| Error::Csv {
                    row: 1,
                    message: format!("missing column `f{k}`"),
                })
            })
            .collect::<Result<_>>()?;
        if feature_cols.is_empty() {
            return Err(Error::Csv {
                row: 1,
                message: "no feature columns".into(),
            });
        }

        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let row = idx + 2;
            let record = record.map_err(|e| Error::Csv {
                row,
                message: e.to_string(),
            })?;
            let mut values = Vec::with_capacity(feature_cols.len());
            for (k, &c) in feature_cols.iter().enumerate() {
                let field = record.get(c).unwrap_or("");
                let v: f64 = field.parse().map_err(|_| Error::Csv {
                    row,
                    message: format!("f{k}: cannot parse `{field}` as a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Csv {
                        row,
                        message: format!("f{k}: non-finite value `{field}`"),
                    });
                }
                values.push(v);
            }
            if let Some(c) = label_col {
                let field = record.get(c).unwrap_or("");
                let label: i64 = field.parse().map_err(|_| Error::Csv {
                    row,
                    message: format!("label: cannot parse `{field}` as an integer"),
                })?;
                labels.push(label);
            }
            rows.push(values);
        }
        if rows.is_empty() {
            return Err(Error::Csv {
                row: 2,
                message: "no data rows".into(),
            });
        }
        Self::from_rows(&rows, label_col.map(|_| labels))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.ncols()).map(|k| format!("f{k}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        wtr.write_record(&header).map_err(csv_io)?;
        for i in 0..self.nrows() {
            let mut record: Vec<String> = self.values.row(i).iter().map(|v| v.to_string()).collect();
            if let Some(labels) = &self.labels {
                record.push(labels[i].to_string());
            }
            wtr.write_record(&record).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// How many eigenvectors to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KPolicy {
    Explicit(usize),
    /// Smallest `K` whose eigenvalues capture `fraction` of the spectral
    /// energy, capped at `cap`.
    Energy { fraction: f64, cap: usize },
}

impl Default for KPolicy {
    fn default() -> Self {
        KPolicy::Energy {
            fraction: 0.95,
            cap: 50,
        }
    }
}

/// Preprocessing applied before the scatter is formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisOptions {
    pub center: bool,
    pub standardize: bool,
}

impl Default for BasisOptions {
    fn default() -> Self {
        Self {
            center: true,
            standardize: true,
        }
    }
}

impl BasisOptions {
    /// Eigenvectors of the raw `XᵀX`, no centering or scaling.
    pub fn raw() -> Self {
        Self {
            center: false,
            standardize: false,
        }
    }

    pub fn pca() -> Self {
        Self {
            center: true,
            standardize: false,
        }
    }
}

/// Top-`K` orthonormal eigenvectors of the preprocessed scatter matrix,
/// together with the affine map `x ↦ (x - center) / scale` that was applied
/// before the scatter was formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenBasis {
    /// `d × K`, one eigenvector per column.
    #[serde(with = "matrix_serde")]
    vectors: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl EigenBasis {
    /// Assemble a basis from explicit parts. `vectors` holds one basis vector
    /// per column and must be orthonormal.
    pub fn from_parts(
        vectors: DMatrix<f64>,
        eigenvalues: Vec<f64>,
        center: Vec<f64>,
        scale: Vec<f64>,
    ) -> Result<Self> {
        let (d, k) = vectors.shape();
        if k == 0 || d == 0 {
            return Err(Error::InvalidData("empty basis".into()));
        }
        if eigenvalues.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: eigenvalues.len(),
            });
        }
        for len in [center.len(), scale.len()] {
            if len != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: len,
                });
            }
        }
        if scale.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidData("scale entries must be positive".into()));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) || eigenvalues.iter().any(|&e| e < 0.0) {
            return Err(Error::InvalidData(
                "eigenvalues must be nonnegative and nonincreasing".into(),
            ));
        }
        let gram = vectors.transpose() * &vectors;
        let deviation = (gram - DMatrix::identity(k, k)).amax();
        if deviation > ORTHONORMAL_TOL {
            return Err(Error::InvalidData(format!(
                "basis vectors are not orthonormal (max deviation {deviation:.3e})"
            )));
        }
        Ok(Self {
            vectors,
            eigenvalues,
            center,
            scale,
        })
    }

    /// The standard basis of `R^d`: no preprocessing, unit eigenvalues.
    pub fn identity(d: usize) -> Result<Self> {
        Self::from_parts(
            DMatrix::identity(d, d),
            vec![1.0; d],
            vec![0.0; d],
            vec![1.0; d],
        )
    }

    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Coordinates of `x` in the basis, after centering and scaling.
    pub fn transform(&self, x: &DVector<f64>) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |c, _| (x[c] - self.center[c]) / self.scale[c]);
        self.vectors.tr_mul(&z)
    }

    /// Coordinates of a difference vector `x - z`; the center cancels.
    pub fn transform_difference(&self, diff: &DVector<f64>) -> DVector<f64> {
        let scaled = DVector::from_fn(self.dim(), |c, _| diff[c] / self.scale[c]);
        self.vectors.tr_mul(&scaled)
    }

    /// `n × K` coordinates of every row of `data`.
    pub fn project(&self, data: &DataMatrix) -> Result<DMatrix<f64>> {
        if data.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: data.ncols(),
            });
        }
        let (n, d) = (data.nrows(), data.ncols());
        let z = DMatrix::from_fn(n, d, |i, c| {
            (data.values()[(i, c)] - self.center[c]) / self.scale[c]
        });
        Ok(z * &self.vectors)
    }
}

/// Eigen basis of the scatter of `data` after the preprocessing in `options`.
///
/// Eigenvectors are sign-canonicalized (first nonzero component positive) and
/// sorted by nonincreasing eigenvalue; ties are ordered by the canonicalized
/// vectors in descending lexicographic order. Within a degenerate eigenspace
/// the particular vectors are implementation-defined.
pub fn eigen_basis(data: &DataMatrix, k: KPolicy, options: &BasisOptions) -> Result<EigenBasis> {
    let (n, d) = (data.nrows(), data.ncols());
    if n < 2 {
        return Err(Error::InvalidData(format!("need at least 2 rows, got {n}")));
    }
    let max_k = n.min(d);
    if let KPolicy::Explicit(k) = k {
        if k == 0 || k > max_k {
            return Err(Error::RankOutOfRange {
                requested: k,
                max: max_k,
            });
        }
    }
    let x = data.values();
    let first = x.row(0);
    if options.center && (1..n).all(|i| x.row(i) == first) {
        return Err(Error::ZeroScatter);
    }

    let means: Vec<f64> = (0..d).map(|c| x.column(c).mean()).collect();
    let center = if options.center {
        means.clone()
    } else {
        vec![0.0; d]
    };
    let scale = if options.standardize {
        (0..d)
            .map(|c| {
                let var = x.column(c).iter().map(|v| (v - means[c]).powi(2)).sum::<f64>() / n as f64;
                let sd = var.sqrt();
                if sd > 1e-12 * means[c].abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect()
    } else {
        vec![1.0; d]
    };

    let z = DMatrix::from_fn(n, d, |i, c| (x[(i, c)] - center[c]) / scale[c]);
    let scatter = z.tr_mul(&z);
    let trace = scatter.trace();
    if trace.is_nan() || trace <= 0.0 {
        return Err(Error::ZeroScatter);
    }

    let eig = SymmetricEigen::new(scatter);
    let mut pairs: Vec<(f64, DVector<f64>)> = (0..d)
        .map(|c| {
            let mut v = eig.eigenvectors.column(c).clone_owned();
            canonicalize_sign(&mut v);
            (eig.eigenvalues[c].max(0.0), v)
        })
        .collect();
    sort_eigenpairs(&mut pairs, trace);

    let keep = match k {
        KPolicy::Explicit(k) => k,
        KPolicy::Energy { fraction, cap } => {
            let total: f64 = pairs.iter().map(|p| p.0).sum();
            let mut acc = 0.0;
            let mut k = pairs.len();
            for (idx, (val, _)) in pairs.iter().enumerate() {
                acc += val;
                if acc >= fraction * total {
                    k = idx + 1;
                    break;
                }
            }
            k.min(cap).min(max_k).max(1)
        }
    };

    let vectors = DMatrix::from_fn(d, keep, |r, c| pairs[c].1[r]);
    let eigenvalues = pairs[..keep].iter().map(|p| p.0).collect();
    Ok(EigenBasis {
        vectors,
        eigenvalues,
        center,
        scale,
    })
}

fn canonicalize_sign(v: &mut DVector<f64>) {
    if let Some(&lead) = v.iter().find(|x| x.abs() > 1e-12) {
        if lead < 0.0 {
            v.neg_mut();
        }
    }
}

fn sort_eigenpairs(pairs: &mut [(f64, DVector<f64>)], trace: f64) {
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    // order runs of (numerically) tied eigenvalues by their vectors
    let tol = 1e-10 * trace.max(1.0);
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && (pairs[end - 1].0 - pairs[end].0).abs() <= tol {
            end += 1;
        }
        pairs[start..end].sort_by(|a, b| {
            b.1.iter()
                .zip(a.1.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        start = end;
    }
}

/// Project centered `data` onto its top `target_dim` principal axes.
/// Columns are not standardized, so a full-rank projection is an isometry.
pub fn pca_project(data: &DataMatrix, target_dim: usize) -> Result<DataMatrix> {
    let basis = eigen_basis(data, KPolicy::Explicit(target_dim), &BasisOptions::pca())?;
    let projected = basis.project(data)?;
    DataMatrix::new(projected, data.labels().map(<[i64]>::to_vec))
}

/// Augmented pair feature `(-1, ω¹, …, ω^K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeature {
    omega: DVector<f64>,
}

impl PairFeature {
    pub fn new(omega: DVector<f64>) -> Result<Self> {
        if omega.is_empty() || omega[0] != -1.0 {
            return Err(Error::InvalidData("omega[0] must be exactly -1".into()));
        }
        if omega.iter().skip(1).any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidData(
                "omega entries after the first must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { omega })
    }

    /// Feature from the basis coordinates of a difference vector.
    pub fn from_coordinates(coords: &DVector<f64>) -> Self {
        let mut omega = DVector::zeros(coords.len() + 1);
        omega[0] = -1.0;
        for (l, c) in coords.iter().enumerate() {
            omega[l + 1] = c * c;
        }
        Self { omega }
    }

    /// Feature for rows `i` and `j` of a projected matrix (see
    /// [`EigenBasis::project`]).
    pub fn from_projected(projected: &DMatrix<f64>, i: usize, j: usize) -> Self {
        let k = projected.ncols();
        let mut omega = DVector::zeros(k + 1);
        omega[0] = -1.0;
        for l in 0..k {
            let diff = projected[(i, l)] - projected[(j, l)];
            omega[l + 1] = diff * diff;
        }
        Self { omega }
    }

    pub fn omega(&self) -> &DVector<f64> {
        &self.omega
    }

    /// Length `K + 1`.
    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// `γᵀω = Σ γ_l ω^l - μ`.
    pub fn dot(&self, gamma: &DVector<f64>) -> f64 {
        self.omega.dot(gamma)
    }
}

pub fn pair_feature(data: &DataMatrix, basis: &EigenBasis, i: usize, j: usize) -> Result<PairFeature> {
    if i == j {
        return Err(Error::SelfPair(i));
    }
    data.check_index(i)?;
    data.check_index(j)?;
    if data.ncols() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            actual: data.ncols(),
        });
    }
    let diff = data.row(i) - data.row(j);
    Ok(PairFeature::from_coordinates(&basis.transform_difference(&diff)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairLabel {
    /// Equivalence constraint, `y = +1`.
    Similar,
    /// Inequivalence constraint, `y = -1`.
    Dissimilar,
}

impl PairLabel {
    pub fn sign(self) -> f64 {
        match self {
            PairLabel::Similar => 1.0,
            PairLabel::Dissimilar => -1.0,
        }
    }

    pub fn from_sign(y: i32) -> Result<Self> {
        match y {
            1 => Ok(PairLabel::Similar),
            -1 => Ok(PairLabel::Dissimilar),
            other => Err(Error::InvalidConstraints(format!(
                "label must be +1 or -1, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub i: usize,
    pub j: usize,
    pub label: PairLabel,
}

/// Unordered key of a pair.
pub fn pair_key(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Labeled pairs over the rows of one data matrix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    rows: usize,
    items: Vec<Constraint>,
    seen: HashSet<(usize, usize)>,
}

impl ConstraintSet {
    pub fn new(rows: usize) -> Self {
        Self {
            rows,
            items: Vec::new(),
            seen: HashSet::new(),
        }
    }

    pub fn from_items(rows: usize, items: impl IntoIterator<Item = Constraint>) -> Result<Self> {
        let mut set = Self::new(rows);
        for c in items {
            set.push(c)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, c: Constraint) -> Result<()> {
        if c.i == c.j {
            return Err(Error::SelfPair(c.i));
        }
        for index in [c.i, c.j] {
            if index >= self.rows {
                return Err(Error::IndexOutOfBounds {
                    index,
                    rows: self.rows,
                });
            }
        }
        if !self.seen.insert(pair_key(c.i, c.j)) {
            return Err(Error::InvalidConstraints(format!(
                "pair ({}, {}) appears twice",
                c.i, c.j
            )));
        }
        self.items.push(c);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn items(&self) -> &[Constraint] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.seen.contains(&pair_key(i, j))
    }

    /// Equivalence constraints (`S`).
    pub fn similar(&self) -> impl Iterator<Item = &Constraint> {
        self.items.iter().filter(|c| c.label == PairLabel::Similar)
    }

    /// Inequivalence constraints (`D`).
    pub fn dissimilar(&self) -> impl Iterator<Item = &Constraint> {
        self.items.iter().filter(|c| c.label == PairLabel::Dissimilar)
    }

    /// Pair features of every constraint in insertion order.
    pub fn features(&self, data: &DataMatrix, basis: &EigenBasis) -> Result<ConstraintFeatures> {
        if data.nrows() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                actual: data.nrows(),
            });
        }
        let projected = basis.project(data)?;
        Ok(ConstraintFeatures {
            dim: basis.k() + 1,
            features: self
                .items
                .iter()
                .map(|c| PairFeature::from_projected(&projected, c.i, c.j))
                .collect(),
            labels: self.items.iter().map(|c| c.label).collect(),
        })
    }
}

/// Pair features with their labels: everything the learners consume.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintFeatures {
    dim: usize,
    features: Vec<PairFeature>,
    labels: Vec<PairLabel>,
}

impl ConstraintFeatures {
    /// `dim` is `K + 1`; it is needed to size the problem when there are no
    /// constraints.
    pub fn new(dim: usize, features: Vec<PairFeature>, labels: Vec<PairLabel>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidData("feature dimension must be at least 2".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                actual: labels.len(),
            });
        }
        if let Some(f) = features.iter().find(|f| f.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: f.len(),
            });
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[PairFeature] {
        &self.features
    }

    pub fn labels(&self) -> &[PairLabel] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PairFeature, PairLabel)> {
        self.features.iter().zip(self.labels.iter().copied())
    }
}

mod matrix_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Dense {
        rows: usize,
        cols: usize,
        /// Row-major.
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        Dense {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let dense = Dense::deserialize(d)?;
        if dense.data.len() != dense.rows * dense.cols {
            return Err(serde::de::Error::custom("matrix data length mismatch"));
        }
        Ok(DMatrix::from_row_slice(dense.rows, dense.cols, &dense.data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        DataMatrix::new(values, None).unwrap()
    }

    /// Roots of a monic cubic `t³ + a t² + b t + c` with three real roots,
    /// by the trigonometric method, each polished with Newton steps.
    fn real_cubic_roots(a: f64, b: f64, c: f64) -> [f64; 3] {
        let p = b - a * a / 3.0;
        let q = 2.0 * a.powi(3) / 27.0 - a * b / 3.0 + c;
        let mut roots = if p.abs() < 1e-300 {
            [-a / 3.0; 3]
        } else {
            let m = 2.0 * (-p / 3.0).sqrt();
            let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
            let theta = arg.acos() / 3.0;
            let two_pi_3 = 2.0 * std::f64::consts::PI / 3.0;
            [0.0, 1.0, 2.0].map(|k| m * (theta - k * two_pi_3).cos() - a / 3.0)
        };
        for r in roots.iter_mut() {
            for _ in 0..50 {
                let f = ((*r + a) * *r + b) * *r + c;
                let df = (3.0 * *r + 2.0 * a) * *r + b;
                if df.abs() < 1e-14 {
                    break;
                }
                *r -= f / df;
            }
        }
        roots.sort_by(|x, y| y.total_cmp(x));
        roots
    }

    fn char_poly_roots(s: &DMatrix<f64>) -> [f64; 3] {
        let tr = s.trace();
        let minors = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)]
            + s[(0, 0)] * s[(2, 2)] - s[(0, 2)] * s[(2, 0)]
            + s[(1, 1)] * s[(2, 2)] - s[(1, 2)] * s[(2, 1)];
        let det = s[(0, 0)] * (s[(1, 1)] * s[(2, 2)] - s[(1, 2)] * s[(2, 1)])
            - s[(0, 1)] * (s[(1, 0)] * s[(2, 2)] - s[(1, 2)] * s[(2, 0)])
            + s[(0, 2)] * (s[(1, 0)] * s[(2, 1)] - s[(1, 1)] * s[(2, 0)]);
        real_cubic_roots(-tr, minors, -det)
    }

    fn explicit_centered_scatter(rows: &[[f64; 3]]) -> DMatrix<f64> {
        let n = rows.len() as f64;
        let mut mean = [0.0; 3];
        for r in rows {
            for c in 0..3 {
                mean[c] += r[c] / n;
            }
        }
        let mut s = DMatrix::zeros(3, 3);
        for r in rows {
            for a in 0..3 {
                for b in 0..3 {
                    s[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]);
                }
            }
        }
        s
    }

    #[test]
    fn identity_rows_match_characteristic_polynomial() {
        let rows = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let data = DataMatrix::from_rows(&rows.map(|r| r.to_vec()), None).unwrap();
        let basis = eigen_basis(&data, KPolicy::Explicit(3), &BasisOptions::pca()).unwrap();
        let expected = char_poly_roots(&explicit_centered_scatter(&rows));
        for (got, want) in basis.eigenvalues().iter().zip(expected) {
            assert!((got - want.max(0.0)).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn random_3x3_scatter_matches_characteristic_polynomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<[f64; 3]> = (0..6)
            .map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let data = DataMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), None).unwrap();
        let basis = eigen_basis(&data, KPolicy::Explicit(3), &BasisOptions::pca()).unwrap();
        let expected = char_poly_roots(&explicit_centered_scatter(&rows));
        for (got, want) in basis.eigenvalues().iter().zip(expected) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn duplicated_columns_get_equal_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                let a: f64 = rng.random_range(-3.0..3.0);
                let b: f64 = rng.random_range(-0.1..0.1);
                vec![a, a, b]
            })
            .collect();
        let data = DataMatrix::from_rows(&rows, None).unwrap();
        let basis = eigen_basis(&data, KPolicy::Explicit(1), &BasisOptions::pca()).unwrap();
        let v = basis.vectors().column(0);
        assert!((v[0] - v[1]).abs() < 1e-10);
        assert!(v[0] > 0.0);
    }

    #[test]
    fn eigen_basis_rejects_bad_k_and_identical_rows() {
        let data = random_data(4, 3, 1);
        assert!(matches!(
            eigen_basis(&data, KPolicy::Explicit(4), &BasisOptions::default()),
            Err(Error::RankOutOfRange { requested: 4, max: 3 })
        ));
        assert!(eigen_basis(&data, KPolicy::Explicit(0), &BasisOptions::default()).is_err());
        let flat = DataMatrix::from_rows(&vec![vec![0.1, 2.0, -3.0]; 5], None).unwrap();
        let err = eigen_basis(&flat, KPolicy::default(), &BasisOptions::default()).unwrap_err();
        assert!(matches!(err, Error::ZeroScatter));
        assert!(err.to_string().contains("zero scatter"));
    }

    #[test]
    fn energy_policy_picks_smallest_sufficient_k() {
        // variance concentrated in the first two coordinates
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                vec![
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                ]
            })
            .collect();
        let data = DataMatrix::from_rows(&rows, None).unwrap();
        let basis = eigen_basis(&data, KPolicy::default(), &BasisOptions::pca()).unwrap();
        assert_eq!(basis.k(), 2);
        let capped = eigen_basis(
            &data,
            KPolicy::Energy {
                fraction: 0.95,
                cap: 1,
            },
            &BasisOptions::pca(),
        )
        .unwrap();
        assert_eq!(capped.k(), 1);
    }

    #[test]
    fn eigenvalues_sum_to_trace() {
        let data = random_data(7, 5, 9);
        let opts = BasisOptions::default();
        let basis = eigen_basis(&data, KPolicy::Explicit(5), &opts).unwrap();
        let projected_all = {
            let z = DMatrix::from_fn(7, 5, |i, c| {
                (data.values()[(i, c)] - basis.center()[c]) / basis.scale()[c]
            });
            z.tr_mul(&z).trace()
        };
        let sum: f64 = basis.eigenvalues().iter().sum();
        assert!((sum - projected_all).abs() < 1e-8);
    }

    #[test]
    fn standardized_columns_have_unit_variance_scatter() {
        let data = random_data(20, 4, 2);
        let basis = eigen_basis(&data, KPolicy::Explicit(4), &BasisOptions::default()).unwrap();
        let sum: f64 = basis.eigenvalues().iter().sum();
        // trace of the standardized scatter is n * d
        assert!((sum - 80.0).abs() < 1e-8);
    }

    #[test]
    fn pca_full_rank_preserves_distances() {
        let data = random_data(8, 4, 13);
        let proj = pca_project(&data, 4).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let a = (data.row(i) - data.row(j)).norm();
                let b = (proj.row(i) - proj.row(j)).norm();
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pca_rank_one_reconstructs() {
        let dir = DVector::from_vec(vec![0.6, 0.0, -0.8]);
        let rows: Vec<Vec<f64>> = [-2.0, 0.5, 1.0, 3.0, -1.5]
            .iter()
            .map(|t| (&dir * *t).iter().map(|v| v + 1.0).collect())
            .collect();
        let data = DataMatrix::from_rows(&rows, Some(vec![1, 2, 3, 4, 5])).unwrap();
        let basis = eigen_basis(&data, KPolicy::Explicit(1), &BasisOptions::pca()).unwrap();
        let proj = pca_project(&data, 1).unwrap();
        assert_eq!(proj.labels(), data.labels());
        let v = basis.vectors().column(0);
        for i in 0..5 {
            let recon = v * proj.values()[(i, 0)];
            let centered = data.row(i) - DVector::from_column_slice(basis.center());
            assert!((recon - centered).amax() < 1e-8);
        }
    }

    #[test]
    fn pca_axis_variance_matches_eigenvalues() {
        let data = random_data(10, 6, 21);
        let basis = eigen_basis(&data, KPolicy::Explicit(3), &BasisOptions::pca()).unwrap();
        let proj = pca_project(&data, 3).unwrap();
        for l in 0..3 {
            let col = proj.values().column(l);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
            assert!((var - basis.eigenvalues()[l] / 10.0).abs() < 1e-8);
        }
        assert!(pca_project(&data, 7).is_err());
    }

    #[test]
    fn pair_feature_examples() {
        let basis = EigenBasis::from_parts(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            vec![1.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let data = DataMatrix::from_rows(&[vec![3.0, 6.0], vec![1.0, 1.0], vec![1.0, 1.0]], None).unwrap();
        let f = pair_feature(&data, &basis, 0, 1).unwrap();
        assert_eq!(f.omega().as_slice(), &[-1.0, 4.0]);
        let same = pair_feature(&data, &basis, 1, 2).unwrap();
        assert_eq!(same.omega().as_slice(), &[-1.0, 0.0]);
        assert!(matches!(pair_feature(&data, &basis, 1, 1), Err(Error::SelfPair(1))));
        assert!(pair_feature(&data, &basis, 0, 3).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let src = "f1,label,f0\n2.5,1,1.0\n-1,0,3e-2\n";
        let data = DataMatrix::from_csv_reader(src.as_bytes()).unwrap();
        assert_eq!(data.nrows(), 2);
        assert_eq!(data.values()[(0, 0)], 1.0);
        assert_eq!(data.values()[(1, 1)], -1.0);
        assert_eq!(data.labels(), Some(&[1, 0][..]));

        let mut out = Vec::new();
        data.write_csv(&mut out).unwrap();
        let back = DataMatrix::from_csv_reader(out.as_slice()).unwrap();
        assert_eq!(back, data);

        let bad = "f0,f1\n1,2\n3,NaN\n";
        match DataMatrix::from_csv_reader(bad.as_bytes()) {
            Err(Error::Csv { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(DataMatrix::from_csv_reader("f0,f2\n1,2\n".as_bytes()).is_err());
        assert!(DataMatrix::from_csv_reader("f0,x\n1,2\n".as_bytes()).is_err());
        assert!(DataMatrix::from_csv_reader("f0,label\n1,1.5\n".as_bytes()).is_err());
    }

    #[test]
    fn constraint_set_validation() {
        let mut set = ConstraintSet::new(4);
        set.push(Constraint { i: 0, j: 1, label: PairLabel::Similar }).unwrap();
        set.push(Constraint { i: 2, j: 3, label: PairLabel::Dissimilar }).unwrap();
        assert!(set.push(Constraint { i: 1, j: 0, label: PairLabel::Dissimilar }).is_err());
        assert!(set.push(Constraint { i: 2, j: 2, label: PairLabel::Similar }).is_err());
        assert!(set.push(Constraint { i: 0, j: 4, label: PairLabel::Similar }).is_err());
        assert_eq!(set.similar().count(), 1);
        assert_eq!(set.dissimilar().count(), 1);
        assert!(set.contains(1, 0));
    }

    #[test]
    fn basis_serializes_row_major() {
        let basis = eigen_basis(&random_data(6, 3, 4), KPolicy::Explicit(2), &BasisOptions::default()).unwrap();
        let json = serde_json::to_string(&basis).unwrap();
        let back: EigenBasis = serde_json::from_str(&json).unwrap();
        assert_eq!(back, basis);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["vectors"]["data"][1].as_f64().unwrap(), basis.vectors()[(0, 1)]);
    }

    proptest! {
        #[test]
        fn basis_is_orthonormal(seed in 0u64..10_000, n in 3usize..12, d in 1usize..7) {
            let data = random_data(n, d, seed);
            let basis = eigen_basis(&data, KPolicy::Explicit(n.min(d)), &BasisOptions::default()).unwrap();
            let v = basis.vectors();
            let gram = v.transpose() * v;
            prop_assert!((gram - DMatrix::identity(v.ncols(), v.ncols())).amax() < 1e-10);
            prop_assert!(basis.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(basis.eigenvalues().iter().all(|&e| e >= 0.0));
        }

        #[test]
        fn augmented_dot_matches_direct_evaluation(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = random_data(6, 4, seed);
            let basis = eigen_basis(&data, KPolicy::Explicit(3), &BasisOptions::default()).unwrap();
            let gamma = DVector::from_fn(4, |_, _| rng.random_range(0.0..2.0));
            let f = pair_feature(&data, &basis, 0, 5).unwrap();
            let g = pair_feature(&data, &basis, 5, 0).unwrap();
            prop_assert_eq!(f.omega(), g.omega());
            let diff = data.row(0) - data.row(5);
            let mut direct = -gamma[0];
            for l in 0..3 {
                let v = basis.vectors().column(l);
                let proj: f64 = (0..4).map(|c| diff[c] / basis.scale()[c] * v[c]).sum();
                direct += gamma[l + 1] * proj * proj;
            }
            prop_assert!((f.dot(&gamma) - direct).abs() < 1e-10);
        }

        #[test]
        fn basis_invariant_under_row_permutation(seed in 0u64..10_000) {
            let data = random_data(9, 4, seed);
            let mut order: Vec<usize> = (0..9).collect();
            order.reverse();
            order.swap(0, 4);
            let permuted = data.select_rows(&order).unwrap();
            let a = eigen_basis(&data, KPolicy::Explicit(4), &BasisOptions::default()).unwrap();
            let b = eigen_basis(&permuted, KPolicy::Explicit(4), &BasisOptions::default()).unwrap();
            prop_assert!((a.vectors() - b.vectors()).amax() < 1e-8);
        }
    }
}
