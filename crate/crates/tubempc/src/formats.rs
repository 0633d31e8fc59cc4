//! On-disk formats: problem files (JSON), design records (bincode), traces
//! (JSON) and step logs (JSON lines).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;
use tubempc_core::geometry::GeometryError;
use tubempc_core::model::ModelError;
use tubempc_core::problem::ProblemError;
use tubempc_core::{BasisTerm, BoxSet, HPolytope, Matrix, PolytopeSet, ProblemData, QuadraticBasisModel, TerminalParams, VPolytope, Vector};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bincode: {0}")]
    Bincode(#[from] bincode::Error),
    #[error("matrix `{0}` is ragged or empty")]
    Ragged(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Half-space set `normals x <= offsets`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceSpec {
    pub normals: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

/// Box with optional (`null` = infinite) bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermSpec {
    /// `e_row * x_state^2`.
    Quadratic { row: usize, state: usize },
    Constant(Vec<f64>),
}

/// Problem definition as written by hand or by the generator.
///
/// `theta0` and `s_set` hold offsets of the simplex `[-I; 1'] x <= h`.
/// `x_set = null` is the whole space, `v_set = null` leaves the input
/// perturbation unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub terms: Vec<TermSpec>,
    /// Euclidean Lipschitz constant; computed on `x_hat` when absent.
    #[serde(default)]
    pub lipschitz: Option<f64>,
    #[serde(default)]
    pub x_set: Option<HalfspaceSpec>,
    pub u_set: HalfspaceSpec,
    pub theta0: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub s_set: Vec<f64>,
    #[serde(default)]
    pub v_set: Option<BoxSpec>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub horizon: usize,
    pub x_hat: BoxSpec,
    pub u_hat: BoxSpec,
    #[serde(default)]
    pub x_init: Option<Vec<f64>>,
    /// Parameter used by the simulated plant; the nominal one when absent.
    #[serde(default)]
    pub theta_true: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub fn matrix_from_rows(what: &'static str, rows: &[Vec<f64>]) -> Result<Matrix, FormatError> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if nr == 0 || nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(FormatError::Ragged(what));
    }
    Ok(Matrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn bound(v: &[Option<f64>], inf: f64) -> Vector {
    Vector::from_iterator(v.len(), v.iter().map(|x| x.unwrap_or(inf)))
}

impl BoxSpec {
    pub fn symmetric(dim: usize, radius: Option<f64>) -> Self {
        Self {
            lower: vec![radius.map(|r| -r); dim],
            upper: vec![radius; dim],
        }
    }

    pub fn to_box(&self) -> Result<BoxSet, FormatError> {
        Ok(BoxSet::new(bound(&self.lower, f64::NEG_INFINITY), bound(&self.upper, f64::INFINITY))?)
    }

    pub fn from_box(b: &BoxSet) -> Self {
        let opt = |x: f64| x.is_finite().then_some(x);
        Self {
            lower: b.lower.iter().copied().map(opt).collect(),
            upper: b.upper.iter().copied().map(opt).collect(),
        }
    }
}

impl HalfspaceSpec {
    pub fn to_polytope(&self, dim: usize) -> Result<HPolytope, FormatError> {
        if self.normals.is_empty() {
            return Ok(HPolytope::full(dim));
        }
        let normals = matrix_from_rows("normals", &self.normals)?;
        Ok(HPolytope::new(normals, Vector::from_vec(self.offsets.clone()))?)
    }

    pub fn from_polytope(h: &HPolytope) -> Self {
        Self {
            normals: matrix_to_rows(h.normals()),
            offsets: h.offsets().iter().copied().collect(),
        }
    }
}

fn vec_of(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

impl ProblemFile {
    pub fn to_problem(&self) -> Result<ProblemData, FormatError> {
        let a = matrix_from_rows("a", &self.a)?;
        let b = matrix_from_rows("b", &self.b)?;
        let (nx, nu) = (a.nrows(), b.ncols());
        let terms: Vec<BasisTerm> = self
            .terms
            .iter()
            .map(|t| match t {
                TermSpec::Quadratic { row, state } => BasisTerm::Quadratic { row: *row, state: *state },
                TermSpec::Constant(v) => BasisTerm::Constant(Vector::from_vec(v.clone())),
            })
            .collect();
        let x_hat = self.x_hat.to_box()?;
        let lipschitz = self
            .lipschitz
            .unwrap_or_else(|| QuadraticBasisModel::lipschitz_on(&terms, &x_hat));
        let model = QuadraticBasisModel::new(a, b, terms, lipschitz)?;
        let w: Vec<Vector> = self.w.iter().map(|v| Vector::from_vec(v.clone())).collect();
        let pd = ProblemData {
            model,
            x_set: match &self.x_set {
                Some(h) => h.to_polytope(nx)?,
                None => HPolytope::full(nx),
            },
            u_set: self.u_set.to_polytope(nu)?,
            theta0: PolytopeSet::simplex(Vector::from_vec(self.theta0.clone()))?,
            w: VPolytope::new(w)?,
            s_set: PolytopeSet::simplex(Vector::from_vec(self.s_set.clone()))?,
            v_set: match &self.v_set {
                Some(b) => Some(PolytopeSet::from_box(&b.to_box()?)?),
                None => None,
            },
            q: matrix_from_rows("q", &self.q)?,
            r: matrix_from_rows("r", &self.r)?,
            horizon: self.horizon,
            x_hat,
            u_hat: self.u_hat.to_box()?,
        };
        pd.validate()?;
        Ok(pd)
    }

    /// Inverse of [`ProblemFile::to_problem`]. `v_set` must be a box (or
    /// absent) and `theta0`, `s_set` simplices.
    pub fn from_problem(pd: &ProblemData) -> Self {
        let m = &pd.model;
        let v_set = pd.v_set.as_ref().map(|v| {
            let n = v.dim();
            let mut lower = vec![None; n];
            let mut upper = vec![None; n];
            for vert in v.v.vertices() {
                for i in 0..n {
                    lower[i] = Some(lower[i].map_or(vert[i], |l: f64| l.min(vert[i])));
                    upper[i] = Some(upper[i].map_or(vert[i], |u: f64| u.max(vert[i])));
                }
            }
            BoxSpec { lower, upper }
        });
        Self {
            a: matrix_to_rows(m.a()),
            b: matrix_to_rows(m.b()),
            terms: m
                .terms()
                .iter()
                .map(|t| match t {
                    BasisTerm::Quadratic { row, state } => TermSpec::Quadratic { row: *row, state: *state },
                    BasisTerm::Constant(v) => TermSpec::Constant(vec_of(v)),
                })
                .collect(),
            lipschitz: Some(tubempc_core::BasisModel::lipschitz(m)),
            x_set: (pd.x_set.n_rows() > 0).then(|| HalfspaceSpec::from_polytope(&pd.x_set)),
            u_set: HalfspaceSpec::from_polytope(&pd.u_set),
            theta0: vec_of(pd.theta0.h.offsets()),
            w: pd.w.vertices().iter().map(vec_of).collect(),
            s_set: vec_of(pd.s_set.h.offsets()),
            v_set,
            q: matrix_to_rows(&pd.q),
            r: matrix_to_rows(&pd.r),
            horizon: pd.horizon,
            x_hat: BoxSpec::from_box(&pd.x_hat),
            u_hat: BoxSpec::from_box(&pd.u_hat),
            x_init: None,
            theta_true: None,
            seed: None,
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(w.flush()?)
}

pub fn read_problem(path: &Path) -> Result<ProblemFile, FormatError> {
    read_json(path)
}

/// Design record written by `design` and read by `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub format_version: u32,
    pub params: TerminalParams,
}

pub const DESIGN_FORMAT_VERSION: u32 = 1;

pub fn write_design(path: &Path, params: &TerminalParams) -> Result<(), FormatError> {
    let rec = DesignFile {
        format_version: DESIGN_FORMAT_VERSION,
        params: params.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    bincode::serialize_into(&mut w, &rec)?;
    Ok(w.flush()?)
}

pub fn read_design(path: &Path) -> Result<TerminalParams, FormatError> {
    let rec: DesignFile = bincode::deserialize_from(BufReader::new(File::open(path)?))?;
    Ok(rec.params)
}

/// Appends one JSON value per line.
pub struct JsonlWriter<W: Write> {
    out: W,
}

impl JsonlWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self, FormatError> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn append<T: Serialize>(&mut self, value: &T) -> Result<(), FormatError> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n")?;
        Ok(self.out.flush()?)
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
