//! Solver-neutral conic programs and the backend contract.
//!
//! A program minimizes `c'x` subject to affine expressions lying in cones:
//! zero (equalities), nonnegative orthant, second-order cones
//! `e_0 >= ||(e_1, ..., e_m)||`, and PSD cones over symmetric matrices of
//! affine expressions.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::linalg::{self, Matrix, Vector};

/// `sum_i a_i x_i + c`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(i: usize) -> Self {
        Self {
            terms: alloc::vec![(i, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(mut self, i: usize, a: f64) -> Self {
        if a != 0.0 {
            self.terms.push((i, a));
        }
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add_term(&mut self, i: usize, a: f64) {
        if a != 0.0 {
            self.terms.push((i, a));
        }
    }

    /// `self + s * other`.
    pub fn add_scaled(&mut self, other: &LinExpr, s: f64) {
        if s == 0.0 {
            return;
        }
        for &(i, a) in &other.terms {
            self.terms.push((i, a * s));
        }
        self.constant += other.constant * s;
    }

    pub fn scaled(&self, s: f64) -> LinExpr {
        let mut out = LinExpr::zero();
        out.add_scaled(self, s);
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, a)| a * x[i]).sum::<f64>() + self.constant
    }

    /// Merge repeated columns and drop zero coefficients.
    pub fn compact(&mut self) {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(i, a) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += a,
                _ => out.push((i, a)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
    }
}

/// `M x + b` as a vector of expressions, with `x` starting at column `start`.
pub fn affine_map(m: &Matrix, start: usize, b: Option<&Vector>) -> Vec<LinExpr> {
    (0..m.nrows())
        .map(|r| {
            let mut e = LinExpr::constant(b.map_or(0.0, |b| b[r]));
            for c in 0..m.ncols() {
                e.add_term(start + c, m[(r, c)]);
            }
            e
        })
        .collect()
}

/// What a constraint block encodes, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Label {
    pub kind: &'static str,
    pub index: usize,
}

impl Label {
    pub const fn new(kind: &'static str, index: usize) -> Self {
        Self { kind, index }
    }
}

/// Symmetric matrix of affine expressions; entries are stored for `i <= j`
/// in column-major order: `(0,0), (0,1), (1,1), (0,2), ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdBlock {
    pub n: usize,
    pub entries: Vec<LinExpr>,
}

impl PsdBlock {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> LinExpr) -> Self {
        let mut entries = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            for i in 0..=j {
                entries.push(f(i, j));
            }
        }
        Self { n, entries }
    }

    pub fn eval(&self, x: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        let mut k = 0;
        for j in 0..self.n {
            for i in 0..=j {
                let v = self.entries[k].eval(x);
                m[(i, j)] = v;
                m[(j, i)] = v;
                k += 1;
            }
        }
        m
    }
}

/// A named contiguous range of variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarBlock {
    pub name: &'static str,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    n_vars: usize,
    pub objective: Vec<(usize, f64)>,
    pub equalities: Vec<(Label, LinExpr)>,
    pub inequalities: Vec<(Label, LinExpr)>,
    pub socs: Vec<(Label, Vec<LinExpr>)>,
    pub psds: Vec<(Label, PsdBlock)>,
    pub blocks: Vec<VarBlock>,
}

/// Capabilities a backend offers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub lp: bool,
    pub soc: bool,
    pub psd: bool,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Adds `len` variables and returns the first column.
    pub fn add_vars(&mut self, name: &'static str, len: usize) -> usize {
        let start = self.n_vars;
        self.n_vars += len;
        self.blocks.push(VarBlock { name, start, len });
        start
    }

    pub fn block(&self, name: &str) -> Option<&VarBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn minimize(&mut self, i: usize, c: f64) {
        self.objective.push((i, c));
    }

    /// `e = 0`.
    pub fn equal(&mut self, label: Label, mut e: LinExpr) {
        e.compact();
        self.equalities.push((label, e));
    }

    /// `e >= 0`.
    pub fn nonneg(&mut self, label: Label, mut e: LinExpr) {
        e.compact();
        self.inequalities.push((label, e));
    }

    /// `head >= ||tail||`.
    pub fn soc(&mut self, label: Label, head: LinExpr, tail: Vec<LinExpr>) {
        let mut es = Vec::with_capacity(tail.len() + 1);
        es.push(head);
        es.extend(tail);
        for e in es.iter_mut() {
            e.compact();
        }
        self.socs.push((label, es));
    }

    pub fn psd(&mut self, label: Label, mut block: PsdBlock) {
        for e in block.entries.iter_mut() {
            e.compact();
        }
        self.psds.push((label, block));
    }

    pub fn requirements(&self) -> Capabilities {
        Capabilities {
            lp: true,
            soc: !self.socs.is_empty(),
            psd: !self.psds.is_empty(),
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(i, c)| c * x[i]).sum()
    }

    /// Largest constraint violation at `x` and the block it occurs in.
    pub fn max_violation(&self, x: &[f64]) -> (f64, Option<Label>) {
        let mut worst = (0.0f64, None);
        let mut note = |v: f64, l: Label| {
            if v > worst.0 {
                worst = (v, Some(l));
            }
        };
        for (l, e) in &self.equalities {
            note(e.eval(x).abs(), *l);
        }
        for (l, e) in &self.inequalities {
            note(-e.eval(x), *l);
        }
        for (l, es) in &self.socs {
            let head = es[0].eval(x);
            let tail: f64 = es[1..].iter().map(|e| e.eval(x).abs()).map(|a| a * a).sum();
            note(linalg::sqrt(tail) - head, *l);
        }
        for (l, b) in &self.psds {
            note(-linalg::min_eigenvalue(&b.eval(x)), *l);
        }
        worst
    }

    /// Every referenced column is in range and every cone has dimension >= 2.
    pub fn is_well_formed(&self) -> bool {
        let n = self.n_vars;
        let ok = |e: &LinExpr| e.terms.iter().all(|t| t.0 < n);
        self.objective.iter().all(|t| t.0 < n)
            && self.equalities.iter().all(|(_, e)| ok(e))
            && self.inequalities.iter().all(|(_, e)| ok(e))
            && self.socs.iter().all(|(_, es)| es.len() >= 2 && es.iter().all(ok))
            && self.psds.iter().all(|(_, b)| b.entries.len() == b.n * (b.n + 1) / 2 && b.entries.iter().all(ok))
    }

    /// Plain-text listing of columns and cones.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vars {}", self.n_vars);
        for b in &self.blocks {
            let _ = writeln!(s, "block {} {} {}", b.name, b.start, b.len);
        }
        let _ = write!(s, "minimize");
        for (i, c) in &self.objective {
            let _ = write!(s, " {c:+e}*x{i}");
        }
        let _ = writeln!(s);
        let expr = |s: &mut String, e: &LinExpr| {
            for (i, a) in &e.terms {
                let _ = write!(s, " {a:+e}*x{i}");
            }
            let _ = write!(s, " {:+e}", e.constant);
        };
        for (l, e) in &self.equalities {
            let _ = write!(s, "zero {}[{}]:", l.kind, l.index);
            expr(&mut s, e);
            let _ = writeln!(s);
        }
        for (l, e) in &self.inequalities {
            let _ = write!(s, "nonneg {}[{}]:", l.kind, l.index);
            expr(&mut s, e);
            let _ = writeln!(s);
        }
        for (l, es) in &self.socs {
            let _ = writeln!(s, "soc {}[{}] {}", l.kind, l.index, es.len());
            for e in es {
                let _ = write!(s, " ");
                expr(&mut s, e);
                let _ = writeln!(s);
            }
        }
        for (l, b) in &self.psds {
            let _ = writeln!(s, "psd {}[{}] {}", l.kind, l.index, b.n);
            for e in &b.entries {
                let _ = write!(s, " ");
                expr(&mut s, e);
                let _ = writeln!(s);
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SolveStatus {
    Optimal { objective: f64, x: Vector },
    Infeasible,
    Unbounded,
    NumericalFailure,
    TimeLimit,
}

impl SolveStatus {
    pub fn is_optimal(&self) -> bool {
        matches!(self, SolveStatus::Optimal { .. })
    }

    pub fn primal(&self) -> Option<&Vector> {
        match self {
            SolveStatus::Optimal { x, .. } => Some(x),
            _ => None,
        }
    }

    pub fn objective(&self) -> Option<f64> {
        match self {
            SolveStatus::Optimal { objective, .. } => Some(*objective),
            _ => None,
        }
    }

    /// The controller treats numerical failure like infeasibility.
    pub fn is_infeasible_for_control(&self) -> bool {
        !self.is_optimal()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: u32,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: u32,
    pub time_limit: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            time_limit: None,
        }
    }
}

/// Anything that can solve a [`ConicProgram`].
pub trait ConicBackend {
    fn capabilities(&self) -> Capabilities;

    fn solve(&self, cp: &ConicProgram, settings: &SolverSettings) -> SolveReport;

    /// Monotonic seconds for timing; backends without a clock return 0.
    fn clock(&self) -> f64 {
        0.0
    }

    fn solve_lp(&self, cp: &ConicProgram, settings: &SolverSettings) -> SolveReport {
        debug_assert!(cp.socs.is_empty() && cp.psds.is_empty());
        self.solve(cp, settings)
    }

    fn solve_socp(&self, cp: &ConicProgram, settings: &SolverSettings) -> SolveReport {
        debug_assert!(cp.psds.is_empty());
        self.solve(cp, settings)
    }

    fn solve_sdp(&self, cp: &ConicProgram, settings: &SolverSettings) -> SolveReport {
        if !self.capabilities().psd {
            return SolveReport {
                status: SolveStatus::NumericalFailure,
                iterations: 0,
                solve_seconds: 0.0,
            };
        }
        self.solve(cp, settings)
    }
}

impl<B: ConicBackend + ?Sized> ConicBackend for &B {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn solve(&self, cp: &ConicProgram, settings: &SolverSettings) -> SolveReport {
        (**self).solve(cp, settings)
    }

    fn clock(&self) -> f64 {
        (**self).clock()
    }
}
