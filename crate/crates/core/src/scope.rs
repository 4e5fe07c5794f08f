//! Target-specific scopes over a dependency tree.
//!
//! A target's path set is the target, every token below it, and its head.
//! The scope is the contiguous interval spanning that set, so tokens such as
//! a sibling adverb sitting between a subject and its verb are covered by
//! contiguity alone.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::ingest::DepTree;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScopeError {
    #[error("token {index} outside sentence of {len} tokens")]
    OutOfRange { index: usize, len: usize },
    #[error("target span [{start}, {end}] is reversed")]
    ReversedSpan { start: usize, end: usize },
}

/// Inclusive 1-based interval attached to a target token or span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Scope {
    pub target_start: usize,
    pub target_end: usize,
    /// Token standing in for the target in graph losses: for a span, the
    /// token whose head lies outside the span (leftmost on ties).
    pub anchor: usize,
    pub start: usize,
    pub end: usize,
}

impl Scope {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, index: usize) -> bool {
        (self.start..=self.end).contains(&index)
    }

    /// Row of a scope mask over a sentence of `len` tokens.
    pub fn mask(&self, len: usize) -> Vec<bool> {
        (1..=len).map(|i| self.contains(i)).collect()
    }
}

fn check_index(tree: &DepTree, index: usize) -> Result<(), ScopeError> {
    if index == 0 || index > tree.len() {
        Err(ScopeError::OutOfRange {
            index,
            len: tree.len(),
        })
    } else {
        Ok(())
    }
}

/// The target, all of its descendants, and its head (unless it is the root).
pub fn path_set(tree: &DepTree, target: usize) -> Result<BTreeSet<usize>, ScopeError> {
    check_index(tree, target)?;
    let mut set = BTreeSet::new();
    let mut stack = vec![target];
    while let Some(i) = stack.pop() {
        set.insert(i);
        stack.extend_from_slice(tree.children(i));
    }
    let head = tree.head(target);
    if head != 0 {
        set.insert(head);
    }
    Ok(set)
}

/// Scope of the inclusive token span `[start, end]`; a single token is
/// `start == end`. Multi-token spans take the union of their path sets.
pub fn compute_scope(tree: &DepTree, start: usize, end: usize) -> Result<Scope, ScopeError> {
    if end < start {
        return Err(ScopeError::ReversedSpan { start, end });
    }
    check_index(tree, start)?;
    check_index(tree, end)?;
    let mut lo = start;
    let mut hi = end;
    for t in start..=end {
        let set = path_set(tree, t)?;
        lo = lo.min(*set.first().expect("path set holds the target"));
        hi = hi.max(*set.last().expect("path set holds the target"));
    }
    let anchor = (start..=end)
        .find(|&i| {
            let h = tree.head(i);
            h < start || h > end
        })
        .unwrap_or(start);
    Ok(Scope {
        target_start: start,
        target_end: end,
        anchor,
        start: lo,
        end: hi,
    })
}

/// N×S binary matrix, one row per scope.
pub fn scope_mask(scopes: &[Scope], len: usize) -> Vec<Vec<bool>> {
    scopes.iter().map(|s| s.mask(len)).collect()
}
