//! Graph views of a prediction matrix `B`.
//!
//! `B` (m × n) is the biadjacency of a bipartite graph between examples and
//! classes. Its adjacency is `A* = [[0, B], [Bᵀ, 0]]`, and the diagonal blocks of
//! `A*²` are the two-walk adjacencies `M = BBᵀ` (examples) and `N = BᵀB` (classes).
//! The ideal classifier output makes the graph (1, m/n)-biregular, i.e. `N` is
//! `(m/n)·I`; [`biregularity_report`] measures the distance from that state both
//! softly (α, spread of `diag N`) and by hard argmax edges.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gar::{self, DEFAULT_EPSILON};
use crate::kv;
use crate::matrix::Matrix;

/// A nonnegative biadjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    b: Matrix,
}

impl BipartiteGraph {
    pub fn new(b: Matrix) -> Result<Self> {
        if let Some(x) = b.as_slice().iter().find(|&&x| !(x >= 0.0)) {
            return Err(Error::Config(format!(
                "biadjacency entries must be nonnegative, found {x}"
            )));
        }
        Ok(BipartiteGraph { b })
    }

    pub fn biadjacency(&self) -> &Matrix {
        &self.b
    }

    pub fn m(&self) -> usize {
        self.b.rows()
    }

    pub fn n(&self) -> usize {
        self.b.cols()
    }

    pub fn adjacency(&self) -> Matrix {
        assemble_a_star(&self.b)
    }
}

/// `[[0, B], [Bᵀ, 0]]`.
pub fn assemble_a_star(b: &Matrix) -> Matrix {
    let (m, n) = b.shape();
    let mut a = Matrix::zeros(m + n, m + n);
    for i in 0..m {
        for j in 0..n {
            let x = b.get(i, j);
            a.set(i, m + j, x);
            a.set(m + j, i, x);
        }
    }
    a
}

/// Squares `A*` and splits off the `M` (m×m) and `N` (n×n) blocks.
///
/// The off-diagonal blocks of `A*²` count odd walks between the two sides and
/// must be exactly zero for a bipartite graph; anything else is reported as a
/// consistency failure.
pub fn two_walk_blocks(a_star: &Matrix, m: usize, n: usize) -> Result<(Matrix, Matrix)> {
    if a_star.shape() != (m + n, m + n) {
        return Err(Error::shape("two_walk_blocks", a_star.shape(), (m + n, m + n)));
    }
    let sq = a_star.matmul(a_star);
    for i in 0..m + n {
        for j in 0..m + n {
            if (i < m) != (j < m) && sq.get(i, j) != 0.0 {
                return Err(Error::Consistency(format!(
                    "A*² has nonzero cross-block entry ({i}, {j}) = {}",
                    sq.get(i, j)
                )));
            }
        }
    }
    let m_block = Matrix::from_fn(m, m, |i, j| sq.get(i, j));
    let n_block = Matrix::from_fn(n, n, |i, j| sq.get(m + i, m + j));
    Ok((m_block, n_block))
}

/// `L = D − A` with `D_ii = Σ_j A_ij`.
pub fn laplacian(adj: &Matrix) -> Matrix {
    let mut l = adj.scale(-1.0);
    for (i, d) in adj.row_sums().into_iter().enumerate() {
        l.set(i, i, l.get(i, i) + d);
    }
    l
}

fn check_embedding_shapes(adj: &Matrix, z: &Matrix, op: &'static str) -> Result<()> {
    if adj.rows() != adj.cols() || z.rows() != adj.rows() {
        return Err(Error::shape(op, adj.shape(), z.shape()));
    }
    Ok(())
}

/// `Tr(Zᵀ L Z)` for adjacency `adj`. Equals `½ Σ_ij A_ij ‖z_i − z_j‖²`
/// ([`pairwise_energy`]); the sum over ordered pairs without the ½ is twice this.
pub fn laplacian_energy(adj: &Matrix, z: &Matrix) -> Result<f64> {
    check_embedding_shapes(adj, z, "laplacian_energy")?;
    Ok(z.t_matmul(&laplacian(adj).matmul(z)).trace())
}

/// `½ Σ_ij A_ij ‖z_i − z_j‖²`, the edge-sum form of [`laplacian_energy`].
pub fn pairwise_energy(adj: &Matrix, z: &Matrix) -> Result<f64> {
    check_embedding_shapes(adj, z, "pairwise_energy")?;
    let mut e = 0.0;
    for i in 0..adj.rows() {
        for j in 0..adj.cols() {
            let w = adj.get(i, j);
            if w != 0.0 {
                let d2: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                e += w * d2;
            }
        }
    }
    Ok(0.5 * e)
}

/// `Tr(Bᵀ L_M B)` with `M = BBᵀ`, without forming `M`:
/// `Σ_k (b_k · s) ‖b_k‖² − ‖N‖²_F` where `s` is the column-sum vector of `B`.
pub fn self_embedding_energy(b: &Matrix) -> f64 {
    let s = b.column_sums();
    let s = s.as_slice();
    let degree_term: f64 = b
        .row_iter()
        .map(|r| {
            let d: f64 = r.iter().zip(s).map(|(x, y)| x * y).sum();
            let norm: f64 = r.iter().map(|x| x * x).sum();
            d * norm
        })
        .sum();
    degree_term - gar::compute_n(b).frobenius_sq()
}

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    /// `M` is only materialized when `m` is at most this.
    pub m_cap: usize,
    pub epsilon: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            m_cap: 5000,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphReport {
    pub m: usize,
    pub n: usize,
    /// `BBᵀ`, absent when `m` exceeds the cap.
    pub m_matrix: Option<Matrix>,
    pub n_matrix: Matrix,
    /// Hard degree of each example: 1 if its row has a positive argmax edge, else 0.
    pub example_degrees: Vec<f64>,
    /// Number of examples whose argmax lands on each class.
    pub class_degrees: Vec<usize>,
    pub ideal_class_degree: f64,
    pub max_degree_deviation: f64,
    pub unassigned: usize,
    /// Rows whose maximum is shared by more than one class (assigned to the lowest).
    pub ties: usize,
    /// Soft off-diagonal mass of `N`, identical to the affinity regularizer.
    pub n_offdiag_mass: f64,
    pub balance: f64,
    /// Coefficient of variation of `diag N` (population std / mean; 0 when the mean is 0).
    pub n_diag_cv: f64,
    /// `Tr(Bᵀ L_M B)`.
    pub laplacian_energy: f64,
}

impl GraphReport {
    /// All examples assigned without ties, and every class hit exactly `m/n` times.
    pub fn is_biregular(&self) -> bool {
        self.unassigned == 0 && self.ties == 0 && self.max_degree_deviation == 0.0
    }

    pub fn to_key_value(&self) -> String {
        let degrees = self
            .class_degrees
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        kv::render(&[
            ("m", self.m.to_string()),
            ("n", self.n.to_string()),
            ("ideal_class_degree", self.ideal_class_degree.to_string()),
            ("class_degrees", degrees),
            ("max_degree_deviation", self.max_degree_deviation.to_string()),
            ("unassigned", self.unassigned.to_string()),
            ("ties", self.ties.to_string()),
            ("biregular", self.is_biregular().to_string()),
            ("alpha", self.n_offdiag_mass.to_string()),
            ("balance", self.balance.to_string()),
            ("n_diag_cv", self.n_diag_cv.to_string()),
            ("laplacian_energy", self.laplacian_energy.to_string()),
            ("m_materialized", self.m_matrix.is_some().to_string()),
        ])
    }
}

pub fn biregularity_report(b: &Matrix, opts: &ReportOptions) -> Result<GraphReport> {
    let graph = BipartiteGraph::new(b.clone())?;
    let (m, n) = (graph.m(), graph.n());
    if m < n {
        return Err(Error::Config(format!(
            "biregularity report needs at least as many examples as classes ({m} < {n})"
        )));
    }
    let n_matrix = gar::compute_n(b);
    let n_offdiag_mass = gar::affinity(&n_matrix, opts.epsilon)?;
    let balance = gar::balance(&n_matrix, opts.epsilon)?;

    let mut example_degrees = vec![0.0; m];
    let mut class_degrees = vec![0usize; n];
    let mut unassigned = 0;
    let mut ties = 0;
    for (k, row) in b.row_iter().enumerate() {
        let mut best = 0;
        for (j, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = j;
            }
        }
        let top = row[best];
        if top <= 0.0 {
            unassigned += 1;
            continue;
        }
        if row.iter().filter(|&&x| x == top).count() > 1 {
            ties += 1;
        }
        example_degrees[k] = 1.0;
        class_degrees[best] += 1;
    }
    let ideal = m as f64 / n as f64;
    let max_degree_deviation = class_degrees
        .iter()
        .map(|&d| (d as f64 - ideal).abs())
        .fold(0.0, f64::max);

    let diag = n_matrix.diagonal();
    let mean = diag.iter().sum::<f64>() / n as f64;
    let n_diag_cv = if mean > 0.0 {
        let var = diag.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        var.sqrt() / mean
    } else {
        0.0
    };

    let (m_matrix, laplacian_energy) = if m <= opts.m_cap {
        let mm = b.matmul_t(b);
        let e = laplacian_energy(&mm, b)?;
        (Some(mm), e)
    } else {
        (None, self_embedding_energy(b))
    };

    Ok(GraphReport {
        m,
        n,
        m_matrix,
        n_matrix,
        example_degrees,
        class_degrees,
        ideal_class_degree: ideal,
        max_degree_deviation,
        unassigned,
        ties,
        n_offdiag_mass,
        balance,
        n_diag_cv,
        laplacian_energy,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Writes `B` as CSV with columns `b0..b{n−1}` and an optional `label` column.
pub fn export_embedding(b: &Matrix, labels: Option<&[usize]>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(l) = labels {
        if l.len() != b.rows() {
            return Err(Error::shape("export_embedding", b.shape(), (l.len(), b.cols())));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header: Vec<String> = (0..b.cols()).map(|j| format!("b{j}")).collect();
    if labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, row) in b.row_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        if let Some(l) = labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`export_embedding`].
pub fn read_embedding(path: impl AsRef<Path>) -> Result<(Matrix, Option<Vec<usize>>)> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let has_label = header.iter().last() == Some("label");
    let n = header.len() - has_label as usize;
    for (j, h) in header.iter().take(n).enumerate() {
        if h != format!("b{j}") {
            return Err(Error::format(path, format!("unexpected column {h:?} at {j}")));
        }
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for field in rec.iter().take(n) {
            data.push(parse_field::<f64>(field, path, rows)?);
        }
        if has_label {
            labels.push(parse_field::<usize>(&rec[n], path, rows)?);
        }
        rows += 1;
    }
    Ok((Matrix::new(rows, n, data)?, has_label.then_some(labels)))
}

fn parse_field<T: std::str::FromStr>(s: &str, path: &Path, row: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(path, format!("row {row}: cannot parse {s:?}")))
}

/// Writes a bare numeric matrix as headerless CSV.
pub fn write_matrix_csv(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    for row in m.row_iter() {
        w.write_record(row.iter().map(|x| format!("{x:?}")))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row: Vec<f64> = rec
            .iter()
            .map(|f| parse_field(f, path, i))
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    Ok(Matrix::from_rows(&rows))
}
