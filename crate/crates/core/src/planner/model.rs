//! Statement-level access model and the minimal-offset solvers.
//!
//! Every statement instance reads input segments and then writes output
//! segments. Instances of all statements are merged in lexicographic order of
//! their iteration points; statements that share a point form one instance.

use std::collections::HashMap;

use crate::affine::{AccessFunction, FlatAddress, IterationDomain, Linearization};

use super::PlanError;

/// One access of a tensor: index map plus segment linearization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorAccess {
    pub access: AccessFunction,
    pub lin: Linearization,
}

impl TensorAccess {
    pub fn new(access: AccessFunction, lin: Linearization) -> Self {
        Self { access, lin }
    }

    fn flat(&self) -> Result<FlatAddress, PlanError> {
        Ok(FlatAddress::compose(&self.access, &self.lin.with_base(0))?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub domain: IterationDomain,
    pub reads: Vec<TensorAccess>,
    pub writes: Vec<TensorAccess>,
}

/// Reads always target the layer input, writes the layer output.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AccessModel {
    pub statements: Vec<Statement>,
}

struct Compiled {
    reads: Vec<FlatAddress>,
    writes: Vec<FlatAddress>,
}

impl AccessModel {
    pub fn single(domain: IterationDomain, read: TensorAccess, write: TensorAccess) -> Self {
        Self {
            statements: vec![Statement {
                domain,
                reads: vec![read],
                writes: vec![write],
            }],
        }
    }

    /// Visit instances in lexicographic order with their read and write
    /// addresses (base terms zeroed).
    pub fn visit(&self, mut f: impl FnMut(&[i64], &[i64], &[i64])) -> Result<(), PlanError> {
        let rank = self.statements.first().map(|s| s.domain.rank());
        for s in &self.statements {
            if Some(s.domain.rank()) != rank {
                return Err(PlanError::InvalidSpec(
                    "statements of one model must share a rank".into(),
                ));
            }
        }
        let compiled = self
            .statements
            .iter()
            .map(|s| {
                Ok(Compiled {
                    reads: s
                        .reads
                        .iter()
                        .map(TensorAccess::flat)
                        .collect::<Result<_, _>>()?,
                    writes: s
                        .writes
                        .iter()
                        .map(TensorAccess::flat)
                        .collect::<Result<_, _>>()?,
                })
            })
            .collect::<Result<Vec<_>, PlanError>>()?;

        if self.statements.len() == 1 {
            let c = &compiled[0];
            let mut reads = Vec::with_capacity(c.reads.len());
            let mut writes = Vec::with_capacity(c.writes.len());
            self.statements[0].domain.for_each_point(|p| {
                reads.clear();
                writes.clear();
                reads.extend(c.reads.iter().map(|a| a.eval(p)));
                writes.extend(c.writes.iter().map(|a| a.eval(p)));
                f(p, &reads, &writes);
            });
            return Ok(());
        }

        let mut iters: Vec<_> = self
            .statements
            .iter()
            .map(|s| s.domain.points().peekable())
            .collect();
        let mut reads = Vec::new();
        let mut writes = Vec::new();
        loop {
            let next = iters.iter_mut().filter_map(|it| it.peek().cloned()).min();
            let Some(point) = next else { break };
            reads.clear();
            writes.clear();
            for (it, c) in iters.iter_mut().zip(&compiled) {
                if it.peek() == Some(&point) {
                    it.next();
                    reads.extend(c.reads.iter().map(|a| a.eval(&point)));
                    writes.extend(c.writes.iter().map(|a| a.eval(&point)));
                }
            }
            f(&point, &reads, &writes);
        }
        Ok(())
    }

    /// Number of reads each input segment receives, indexed by the relative
    /// address. Addresses outside `0..in_segments` are an error.
    pub fn read_counts(&self, in_segments: usize) -> Result<Vec<u32>, PlanError> {
        let mut counts = vec![0u32; in_segments];
        let mut bad = None;
        self.visit(|_, reads, _| {
            for &r in reads {
                match usize::try_from(r).ok().filter(|&r| r < in_segments) {
                    Some(r) => counts[r] += 1,
                    None => bad = bad.or(Some(r)),
                }
            }
        })?;
        match bad {
            Some(addr) => Err(PlanError::InvalidSpec(format!(
                "read of segment {addr} outside the input grid of {in_segments}"
            ))),
            None => Ok(counts),
        }
    }
}

/// Least `d >= 0` with `read(i) + d >= write(j)` for all instances `j <= i`.
///
/// Linear in the number of instances: only the running maximum of write
/// addresses matters. Writes of an instance count against its own reads.
pub fn min_offset(model: &AccessModel) -> Result<i64, PlanError> {
    let mut wmax: Option<i64> = None;
    let mut d = 0i64;
    model.visit(|_, reads, writes| {
        if let Some(&w) = writes.iter().max() {
            wmax = Some(wmax.map_or(w, |m| m.max(w)));
        }
        if let Some(m) = wmax {
            for &r in reads {
                d = d.max(m - r);
            }
        }
    })?;
    Ok(d)
}

/// Same quantity by enumerating every ordered instance pair. Quadratic; kept
/// as the reference the fast solver is checked against.
pub fn min_offset_pairwise(model: &AccessModel) -> Result<i64, PlanError> {
    let mut instances: Vec<(Vec<i64>, Vec<i64>)> = Vec::new();
    model.visit(|_, reads, writes| instances.push((reads.to_vec(), writes.to_vec())))?;
    let mut d = 0i64;
    for (i, (reads, _)) in instances.iter().enumerate() {
        for (_, writes) in &instances[..=i] {
            for &w in writes {
                for &r in reads {
                    d = d.max(w - r);
                }
            }
        }
    }
    Ok(d)
}

/// Offset that places every output write at or below the last read of the
/// address it overwrites. Independent of [`min_offset`]: simulates a strict
/// physical schedule (reads, then writes, within an instance) and checks that
/// no write lands on an input address that is read later.
pub fn min_offset_by_liveness(model: &AccessModel) -> Result<i64, PlanError> {
    let mut instances: Vec<(Vec<i64>, Vec<i64>)> = Vec::new();
    model.visit(|_, reads, writes| instances.push((reads.to_vec(), writes.to_vec())))?;
    let mut last_read: HashMap<i64, usize> = HashMap::new();
    for (t, (reads, _)) in instances.iter().enumerate() {
        for &r in reads {
            last_read.insert(r, t);
        }
    }
    let feasible = |d: i64| {
        instances.iter().enumerate().all(|(t, (_, writes))| {
            writes
                .iter()
                .all(|&w| last_read.get(&(w - d)).is_none_or(|&lr| lr <= t))
        })
    };
    let hi = instances
        .iter()
        .flat_map(|(r, w)| r.iter().chain(w))
        .fold(0i64, |m, &a| m.max(a.abs()))
        * 2
        + 1;
    Ok((0..=hi).find(|&d| feasible(d)).unwrap_or(hi))
}
