//! Affine model of a segment-granular kernel.
//!
//! A kernel is described by an [`IterationDomain`] (one point per computation
//! step on a segment), [`AccessFunction`]s mapping a step to the segment
//! indices of a tensor, and a [`Linearization`] that turns those indices into
//! a pool address using row-major segment strides:
//!
//! ```text
//! addr(i) = L · (A · i + V) + b
//! ```
//!
//! Addresses are 64-bit and taken *before* the pool applies its modulo.

use std::cmp::Ordering;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AffineError {
    #[error("bound {index} is inverted: lower {lower} > upper {upper}")]
    InvertedBound {
        index: usize,
        lower: i64,
        upper: i64,
    },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("negative extent {0} in row-major shape")]
    NegativeExtent(i64),
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<(), AffineError> {
    if expected == got {
        Ok(())
    } else {
        Err(AffineError::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

/// Half-open integer interval `[lower, upper)` for one iteration variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bound {
    pub lower: i64,
    pub upper: i64,
}

impl Bound {
    pub fn extent(&self) -> i64 {
        self.upper - self.lower
    }
}

/// `coeffs · i + constant >= 0`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineConstraint {
    pub coeffs: Vec<i64>,
    pub constant: i64,
}

impl AffineConstraint {
    pub fn new(coeffs: Vec<i64>, constant: i64) -> Self {
        Self { coeffs, constant }
    }

    pub fn holds(&self, point: &[i64]) -> bool {
        dot(&self.coeffs, point) + self.constant >= 0
    }
}

/// Rectangular box of iteration points, optionally cut down by extra affine
/// constraints. The constraints are applied by filtering during enumeration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationDomain {
    bounds: Vec<Bound>,
    constraints: Vec<AffineConstraint>,
}

impl IterationDomain {
    pub fn rectangular(bounds: &[(i64, i64)]) -> Result<Self, AffineError> {
        let bounds = bounds
            .iter()
            .enumerate()
            .map(|(index, &(lower, upper))| {
                if lower > upper {
                    Err(AffineError::InvertedBound {
                        index,
                        lower,
                        upper,
                    })
                } else {
                    Ok(Bound { lower, upper })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            bounds,
            constraints: Vec::new(),
        })
    }

    /// Domain `[0, e0) × [0, e1) × ...`.
    pub fn from_extents(extents: &[i64]) -> Result<Self, AffineError> {
        let bounds: Vec<(i64, i64)> = extents.iter().map(|&e| (0, e)).collect();
        Self::rectangular(&bounds)
    }

    pub fn with_constraint(mut self, constraint: AffineConstraint) -> Result<Self, AffineError> {
        check_dim("constraint", self.rank(), constraint.coeffs.len())?;
        self.constraints.push(constraint);
        Ok(self)
    }

    pub fn rank(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    pub fn constraints(&self) -> &[AffineConstraint] {
        &self.constraints
    }

    pub fn is_rectangular(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Number of points in the bounding box, ignoring extra constraints.
    pub fn box_volume(&self) -> u64 {
        self.bounds.iter().map(|b| b.extent() as u64).product()
    }

    pub fn contains(&self, point: &[i64]) -> bool {
        point.len() == self.rank()
            && self
                .bounds
                .iter()
                .zip(point)
                .all(|(b, &x)| b.lower <= x && x < b.upper)
            && self.constraints.iter().all(|c| c.holds(point))
    }

    /// Lexicographic iterator over the in-domain points.
    pub fn points(&self) -> DomainPoints<'_> {
        let empty = self.bounds.iter().any(|b| b.extent() == 0);
        DomainPoints {
            domain: self,
            cursor: self.bounds.iter().map(|b| b.lower).collect(),
            done: empty,
        }
    }

    /// Visit every in-domain point in lexicographic order without allocating
    /// a vector per point.
    pub fn for_each_point(&self, mut f: impl FnMut(&[i64])) {
        if self.bounds.iter().any(|b| b.extent() == 0) {
            return;
        }
        let mut cursor: Vec<i64> = self.bounds.iter().map(|b| b.lower).collect();
        if self.rank() == 0 {
            f(&cursor);
            return;
        }
        loop {
            if self.constraints.iter().all(|c| c.holds(&cursor)) {
                f(&cursor);
            }
            if !advance(&self.bounds, &mut cursor) {
                return;
            }
        }
    }
}

/// Odometer step; returns false once the cursor wraps past the last point.
fn advance(bounds: &[Bound], cursor: &mut [i64]) -> bool {
    for d in (0..bounds.len()).rev() {
        cursor[d] += 1;
        if cursor[d] < bounds[d].upper {
            return true;
        }
        cursor[d] = bounds[d].lower;
    }
    false
}

pub struct DomainPoints<'a> {
    domain: &'a IterationDomain,
    cursor: Vec<i64>,
    done: bool,
}

impl Iterator for DomainPoints<'_> {
    type Item = Vec<i64>;

    fn next(&mut self) -> Option<Vec<i64>> {
        while !self.done {
            let current = self.cursor.clone();
            if self.domain.rank() == 0 || !advance(&self.domain.bounds, &mut self.cursor) {
                self.done = true;
            }
            if self.domain.constraints.iter().all(|c| c.holds(&current)) {
                return Some(current);
            }
        }
        None
    }
}

/// All in-domain points, in strictly increasing lexicographic order.
pub fn enumerate_domain(domain: &IterationDomain) -> Vec<Vec<i64>> {
    domain.points().collect()
}

/// Lexicographic comparison of two iteration points of equal rank.
pub fn lex_cmp(a: &[i64], b: &[i64]) -> Ordering {
    a.cmp(b)
}

/// `u = A · i + V`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessFunction {
    matrix: Vec<Vec<i64>>,
    offset: Vec<i64>,
}

impl AccessFunction {
    pub fn new(matrix: Vec<Vec<i64>>, offset: Vec<i64>) -> Result<Self, AffineError> {
        check_dim("access offset", matrix.len(), offset.len())?;
        if let Some(first) = matrix.first() {
            for row in &matrix {
                check_dim("access matrix row", first.len(), row.len())?;
            }
        }
        Ok(Self { matrix, offset })
    }

    /// Access that picks iteration variables `dims` as tensor indices.
    pub fn select(domain_rank: usize, dims: &[usize]) -> Self {
        let matrix = dims
            .iter()
            .map(|&d| {
                let mut row = vec![0; domain_rank];
                row[d] = 1;
                row
            })
            .collect();
        Self {
            matrix,
            offset: vec![0; dims.len()],
        }
    }

    pub fn tensor_rank(&self) -> usize {
        self.matrix.len()
    }

    pub fn domain_rank(&self) -> Option<usize> {
        self.matrix.first().map(Vec::len)
    }

    pub fn matrix(&self) -> &[Vec<i64>] {
        &self.matrix
    }

    pub fn offset(&self) -> &[i64] {
        &self.offset
    }

    pub fn apply(&self, point: &[i64]) -> Result<Vec<i64>, AffineError> {
        if let Some(rank) = self.domain_rank() {
            check_dim("iteration point", rank, point.len())?;
        }
        Ok(self
            .matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, v)| dot(row, point) + v)
            .collect())
    }
}

/// Row-major mapping vector `L` (segment units) plus base offset `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linearization {
    strides: Vec<i64>,
    base: i64,
}

impl Linearization {
    pub fn new(strides: Vec<i64>, base: i64) -> Self {
        Self { strides, base }
    }

    /// Row-major strides for a segment grid: last stride is 1.
    pub fn row_major(shape: &[i64], base: i64) -> Result<Self, AffineError> {
        let mut strides = vec![0; shape.len()];
        let mut acc = 1i64;
        for (d, &extent) in shape.iter().enumerate().rev() {
            if extent < 0 {
                return Err(AffineError::NegativeExtent(extent));
            }
            strides[d] = acc;
            acc *= extent;
        }
        Ok(Self { strides, base })
    }

    pub fn strides(&self) -> &[i64] {
        &self.strides
    }

    pub fn base(&self) -> i64 {
        self.base
    }

    pub fn with_base(&self, base: i64) -> Self {
        Self {
            strides: self.strides.clone(),
            base,
        }
    }

    pub fn linearize(&self, index: &[i64]) -> Result<i64, AffineError> {
        check_dim("tensor index", self.strides.len(), index.len())?;
        Ok(dot(&self.strides, index) + self.base)
    }
}

/// `L · (A · i + V) + b`, checked.
pub fn segment_address(
    acc: &AccessFunction,
    lin: &Linearization,
    point: &[i64],
) -> Result<i64, AffineError> {
    check_dim("mapping vector", acc.tensor_rank(), lin.strides.len())?;
    lin.linearize(&acc.apply(point)?)
}

/// Access function and linearization folded into one row `c` and constant
/// `c0` so that `addr(i) = c · i + c0`. Used on hot enumeration paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatAddress {
    coeffs: Vec<i64>,
    constant: i64,
}

impl FlatAddress {
    pub fn compose(acc: &AccessFunction, lin: &Linearization) -> Result<Self, AffineError> {
        check_dim("mapping vector", acc.tensor_rank(), lin.strides.len())?;
        let rank = acc.domain_rank().unwrap_or(0);
        let mut coeffs = vec![0; rank];
        for (row, &stride) in acc.matrix.iter().zip(&lin.strides) {
            for (c, &a) in coeffs.iter_mut().zip(row) {
                *c += stride * a;
            }
        }
        let constant = dot(&lin.strides, &acc.offset) + lin.base;
        Ok(Self { coeffs, constant })
    }

    #[inline]
    pub fn eval(&self, point: &[i64]) -> i64 {
        dot(&self.coeffs, point) + self.constant
    }
}

#[inline]
fn dot(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
