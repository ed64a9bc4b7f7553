//! File formats: data CSV, iris preprocessing, constraint and precision
//! files, result JSON and trace CSV. Indices in files are 1-based.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bnb::TraceRecord;
use crate::constraints::{ConstraintSet, SideConstraint};
use crate::error::{Error, Result};
use crate::model::{Assignment, Dataset, MapSolution, Params, Precision};

/// Header of the trace CSV.
pub const TRACE_HEADER: &str = "t_seconds,ubd,glbd,nodes,queue_len";

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCsv {
    pub data: Dataset,
    /// Blank feature cells, read as 0.
    pub missing: usize,
    pub feature_names: Vec<String>,
}

/// Read a data table with a header row. Columns named `id` and `label`
/// (case-insensitive) are identifiers and 1-based known labels (blank for
/// unknown); every other column is a numeric feature.
pub fn read_csv<R: Read>(reader: R) -> Result<LoadedCsv> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut id_col = None;
    let mut label_col = None;
    let mut features = Vec::new();
    for (c, h) in headers.iter().enumerate() {
        match h.to_ascii_lowercase().as_str() {
            "id" => id_col = Some(c),
            "label" => label_col = Some(c),
            _ => features.push(c),
        }
    }
    if features.is_empty() {
        return Err(Error::Input("no feature columns".into()));
    }
    let mut points = Vec::new();
    let mut ids = Vec::new();
    let mut labels = BTreeMap::new();
    let mut missing = 0;
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 2;
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { .. } => {
                Error::Parse { row, col: 0, msg: "row length differs from header".into() }
            }
            _ => Error::Csv(e),
        })?;
        let mut p = Vec::with_capacity(features.len());
        for &c in &features {
            let cell = &rec[c];
            if cell.is_empty() {
                missing += 1;
                p.push(0.0);
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::Parse { row, col: c + 1, msg: format!("'{cell}' is not a number") })?;
                p.push(v);
            }
        }
        points.push(p);
        if let Some(c) = id_col {
            ids.push(rec[c].to_string());
        }
        if let Some(c) = label_col {
            let cell = &rec[c];
            if !cell.is_empty() {
                let lab: usize = cell
                    .parse()
                    .ok()
                    .filter(|&l| l >= 1)
                    .ok_or_else(|| Error::Parse { row, col: c + 1, msg: format!("label '{cell}' is not a positive integer") })?;
                labels.insert(points.len() - 1, lab - 1);
            }
        }
    }
    let mut data = Dataset::new(points)?;
    if id_col.is_some() {
        data = data.with_ids(ids)?;
    }
    data = data.with_known_labels(labels)?;
    let feature_names = features.iter().map(|&c| headers[c].to_string()).collect();
    Ok(LoadedCsv { data, missing, feature_names })
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<LoadedCsv> {
    read_csv(File::open(path)?)
}

/// Write a dataset in the format [`read_csv`] accepts.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = Vec::new();
    if data.ids().is_some() {
        header.push("id".to_string());
    }
    header.extend((1..=data.d()).map(|j| format!("x{j}")));
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = Vec::new();
        if let Some(ids) = data.ids() {
            rec.push(ids[i].clone());
        }
        rec.extend(data.point(i).iter().map(|v| v.to_string()));
        rec.push(data.known_labels().get(&i).map_or(String::new(), |l| (l + 1).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Projection of a dataset onto its first principal component.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub data: Dataset,
    /// Unit loading vector, sign fixed so its largest-magnitude entry is positive.
    pub loading: Vec<f64>,
    /// Top eigenvalue of the feature covariance (divisor `n − 1`).
    pub variance: f64,
}

/// Center the features and project onto the leading eigenvector of their
/// covariance. Ids and known labels carry over.
pub fn first_principal_component(data: &Dataset) -> Result<Projection> {
    let (n, d) = (data.n(), data.d());
    if n < 2 {
        return Err(Error::Input("principal components need at least two samples".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| data.points().iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| data.point(i)[j] - mean[j]);
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.imax();
    let mut v: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let lead = v.iter().enumerate().fold(0, |b, (j, a)| if a.abs() > v[b].abs() { j } else { b });
    if v[lead] < 0.0 {
        v.iter_mut().for_each(|a| *a = -*a);
    }
    let scores: Vec<f64> = (0..n).map(|i| (0..d).map(|j| x[(i, j)] * v[j]).sum()).collect();
    let mut out = Dataset::from_scalars(&scores)?.with_known_labels(data.known_labels().clone())?;
    if let Some(ids) = data.ids() {
        out = out.with_ids(ids.to_vec())?;
    }
    Ok(Projection { data: out, loading: v, variance: eig.eigenvalues[top] })
}

/// One-dimensional iris data: all 150 samples projected on the first
/// principal component of the centred (unscaled) features, optionally
/// restricted to the first `per_class` samples of each class in file order.
pub fn prep_iris1d(path: impl AsRef<Path>, per_class: Option<usize>) -> Result<Dataset> {
    let loaded = load_csv(path)?;
    iris1d_from(&loaded.data, per_class)
}

/// [`prep_iris1d`] on an already loaded table.
pub fn iris1d_from(data: &Dataset, per_class: Option<usize>) -> Result<Dataset> {
    if data.d() != 4 {
        return Err(Error::Input(format!("iris table needs 4 feature columns, found {}", data.d())));
    }
    let proj = first_principal_component(data)?;
    let Some(m) = per_class else {
        return Ok(proj.data);
    };
    if data.known_labels().len() != data.n() {
        return Err(Error::Input("class subsets need a label on every row".into()));
    }
    let mut taken: BTreeMap<usize, usize> = BTreeMap::new();
    let mut keep = Vec::new();
    for (&i, &c) in data.known_labels() {
        let t = taken.entry(c).or_insert(0);
        if *t < m {
            *t += 1;
            keep.push(i);
        }
    }
    if taken.values().any(|&t| t < m) {
        return Err(Error::Input(format!("some class has fewer than {m} samples")));
    }
    proj.data.subset(&keep)
}

/// Precision from the average of the within-label covariance matrices
/// (divisor `n_c`), averaged with equal weight over labels.
pub fn average_within_label_precision(data: &Dataset) -> Result<Precision> {
    let d = data.d();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&i, &c) in data.known_labels() {
        groups.entry(c).or_default().push(i);
    }
    if groups.is_empty() || groups.values().any(|g| g.len() < 2) {
        return Err(Error::Input("within-label precision needs every used label on at least two samples".into()));
    }
    let mut avg = DMatrix::<f64>::zeros(d, d);
    for members in groups.values() {
        let m = members.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| members.iter().map(|&i| data.point(i)[j]).sum::<f64>() / m).collect();
        let x = DMatrix::from_fn(members.len(), d, |r, j| data.point(members[r])[j] - mean[j]);
        avg += (x.transpose() * x) / m;
    }
    avg /= groups.len() as f64;
    let inv = avg
        .try_inverse()
        .ok_or_else(|| Error::Domain("average within-label covariance is singular".into()))?;
    let p = (0..d).map(|i| (0..d).map(|j| 0.5 * (inv[(i, j)] + inv[(j, i)])).collect()).collect();
    Ok(Precision::Matrix(p))
}

/// Precision file: a JSON `d×d` matrix `P` (the inverse covariance).
pub fn load_precision(path: impl AsRef<Path>) -> Result<Precision> {
    let p: Vec<Vec<f64>> = serde_json::from_reader(File::open(path)?)?;
    if p.is_empty() || p.iter().any(|r| r.len() != p.len()) {
        return Err(Error::Input("precision file must hold a square matrix".into()));
    }
    Ok(Precision::Matrix(p))
}

/// One record of the constraint file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintRecord {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<Vec<usize>>,
}

fn build_err(msg: String) -> Error {
    Error::ConstraintBuild(msg)
}

impl ConstraintRecord {
    fn field(&self, name: &str, v: Option<usize>) -> Result<usize> {
        v.ok_or_else(|| build_err(format!("{} record needs field '{name}'", self.kind)))
    }

    fn index(&self, name: &str, v: Option<usize>) -> Result<usize> {
        let v = self.field(name, v)?;
        v.checked_sub(1).ok_or_else(|| build_err(format!("{} record: '{name}' is 1-based, got 0", self.kind)))
    }

    fn set0(&self) -> Result<Vec<usize>> {
        let set = self.set.as_ref().ok_or_else(|| build_err(format!("{} record needs field 'set'", self.kind)))?;
        set.iter()
            .map(|&v| v.checked_sub(1).ok_or_else(|| build_err(format!("{} record: set entries are 1-based", self.kind))))
            .collect()
    }

    pub fn to_constraint(&self) -> Result<SideConstraint> {
        use SideConstraint::*;
        Ok(match self.kind.as_str() {
            "must_link" => MustLink(self.index("i", self.i)?, self.index("j", self.j)?),
            "cannot_link" => CannotLink(self.index("i", self.i)?, self.index("j", self.j)?),
            "assign" => AssignLabel(self.index("i", self.i)?, self.index("k", self.k)?),
            "one_way" => OneWay { i: self.index("i", self.i)?, j: self.index("j", self.j)?, k: self.index("k", self.k)? },
            "min_size" => MinSize { k: self.index("k", self.k)?, l: self.field("l", self.l)? },
            "pack" => Pack { set: self.set0()?, k: self.index("k", self.k)?, l: self.field("l", self.l)? },
            "partition" => Partition { set: self.set0()?, k: self.index("k", self.k)?, l: self.field("l", self.l)? },
            "cover" => Cover { set: self.set0()?, k: self.index("k", self.k)?, l: self.field("l", self.l)? },
            "order_pi" => OrderPi(true),
            "estimator_link" => EstimatorLink(true),
            other => return Err(build_err(format!("unknown constraint type '{other}'"))),
        })
    }

    pub fn from_constraint(c: &SideConstraint) -> Self {
        use SideConstraint::*;
        let rec = |kind: &str| ConstraintRecord { kind: kind.into(), i: None, j: None, k: None, l: None, set: None };
        let one = |s: &[usize]| Some(s.iter().map(|v| v + 1).collect());
        match c {
            MustLink(i, j) => ConstraintRecord { i: Some(i + 1), j: Some(j + 1), ..rec("must_link") },
            CannotLink(i, j) => ConstraintRecord { i: Some(i + 1), j: Some(j + 1), ..rec("cannot_link") },
            AssignLabel(i, k) => ConstraintRecord { i: Some(i + 1), k: Some(k + 1), ..rec("assign") },
            OneWay { i, j, k } => ConstraintRecord { i: Some(i + 1), j: Some(j + 1), k: Some(k + 1), ..rec("one_way") },
            MinSize { k, l } => ConstraintRecord { k: Some(k + 1), l: Some(*l), ..rec("min_size") },
            Pack { set, k, l } => ConstraintRecord { set: one(set), k: Some(k + 1), l: Some(*l), ..rec("pack") },
            Partition { set, k, l } => ConstraintRecord { set: one(set), k: Some(k + 1), l: Some(*l), ..rec("partition") },
            Cover { set, k, l } => ConstraintRecord { set: one(set), k: Some(k + 1), l: Some(*l), ..rec("cover") },
            OrderPi(_) => rec("order_pi"),
            EstimatorLink(_) => rec("estimator_link"),
        }
    }
}

/// Parse a constraint file body for a problem with `n` samples and `k`
/// components.
pub fn parse_constraints(json: &str, n: usize, k: usize) -> Result<ConstraintSet> {
    let records: Vec<ConstraintRecord> = serde_json::from_str(json)?;
    let items = records.iter().map(ConstraintRecord::to_constraint).collect::<Result<Vec<_>>>()?;
    ConstraintSet::new(items, n, k)
}

pub fn load_constraints(path: impl AsRef<Path>, n: usize, k: usize) -> Result<ConstraintSet> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    parse_constraints(&s, n, k)
}

pub fn constraints_to_json(items: &[SideConstraint]) -> Result<String> {
    let records: Vec<ConstraintRecord> = items.iter().map(ConstraintRecord::from_constraint).collect();
    Ok(serde_json::to_string_pretty(&records)?)
}

/// Result file. Non-finite bounds are written as `null`; assignments are
/// 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub status: String,
    pub objective_ubd: Option<f64>,
    pub glbd: Option<f64>,
    pub true_glbd: Option<f64>,
    pub gap: Option<f64>,
    pub e_max: Option<f64>,
    pub assignment: Vec<usize>,
    pub mu: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub nodes: usize,
    pub wall_seconds: f64,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Constant that turns objectives into full negative log posteriors.
    pub objective_offset: Option<f64>,
}

pub fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl ResultFile {
    /// A result carrying no bounds, for solvers that only produce a solution.
    pub fn from_solution(status: &str, s: Option<&MapSolution>, seed: u64, config: serde_json::Value) -> Self {
        Self {
            status: status.into(),
            objective_ubd: s.map(|s| s.objective),
            glbd: None,
            true_glbd: None,
            gap: None,
            e_max: None,
            assignment: s.map_or_else(Vec::new, |s| s.assignment.labels().iter().map(|l| l + 1).collect()),
            mu: s.map_or_else(Vec::new, |s| s.params.mu.clone()),
            pi: s.map_or_else(Vec::new, |s| s.params.pi.clone()),
            nodes: 0,
            wall_seconds: 0.0,
            seed,
            config,
            objective_offset: None,
        }
    }

    /// The stored solution, when there is one.
    pub fn solution(&self) -> Result<Option<MapSolution>> {
        let Some(objective) = self.objective_ubd else {
            return Ok(None);
        };
        let k = self.pi.len();
        let labels = self
            .assignment
            .iter()
            .map(|&l| l.checked_sub(1).ok_or_else(|| Error::Input("assignments are 1-based".into())))
            .collect::<Result<Vec<_>>>()?;
        let assignment = Assignment::new(labels, k)?;
        let params = Params { mu: self.mu.clone(), pi: self.pi.clone() };
        Ok(Some(MapSolution { assignment, params, objective, feasible: true }))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }
}

pub fn write_trace<W: Write>(trace: &[TraceRecord], mut w: W) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(w, "{:.9},{},{},{},{}", r.t, r.ubd, r.glbd, r.nodes, r.queue_len)?;
    }
    Ok(())
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>().join(",") != TRACE_HEADER {
        return Err(Error::Input(format!("trace header must be '{TRACE_HEADER}'")));
    }
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            rec[c].parse().map_err(|_| Error::Parse { row: r + 2, col: c + 1, msg: format!("'{}' is not a number", &rec[c]) })
        };
        let int = |c: usize| -> Result<usize> {
            rec[c].parse().map_err(|_| Error::Parse { row: r + 2, col: c + 1, msg: format!("'{}' is not a count", &rec[c]) })
        };
        out.push(TraceRecord { t: num(0)?, ubd: num(1)?, glbd: num(2)?, nodes: int(3)?, queue_len: int(4)? });
    }
    Ok(out)
}
