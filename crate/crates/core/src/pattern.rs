//! Sparsity patterns for node-hyperedge structures.
//!
//! A `Pattern` fixes *which* (node, hyperedge) slots exist; the values living
//! on those slots are ordinary column tensors of length `nnz` inside the
//! autodiff graph. Slots are canonically ordered row-major (node-major), and a
//! column-ordered view is precomputed so kernels can iterate either way
//! deterministically.

use std::sync::Arc;

#[derive(Debug)]
pub struct Pattern {
    n: usize,
    m: usize,
    /// Row starts into the canonical (row-major) slot order; length n+1.
    row_ptr: Vec<u32>,
    /// Hyperedge index of each slot, canonical order; length nnz.
    col_of_slot: Vec<u32>,
    /// Column starts into the column-ordered view; length m+1.
    col_ptr: Vec<u32>,
    /// Node index at each column-ordered position; length nnz.
    row_of_cpos: Vec<u32>,
    /// Canonical slot index at each column-ordered position; length nnz.
    slot_of_cpos: Vec<u32>,
    /// Canonical slot indices where node == hyperedge (needs n == m).
    diag_slots: Vec<u32>,
}

impl Pattern {
    /// Build from (node, hyperedge) pairs. Pairs are deduplicated and sorted.
    pub fn from_pairs(n: usize, m: usize, mut pairs: Vec<(u32, u32)>) -> Arc<Pattern> {
        pairs.sort_unstable();
        pairs.dedup();
        Self::from_sorted_pairs(n, m, &pairs)
    }

    fn from_sorted_pairs(n: usize, m: usize, pairs: &[(u32, u32)]) -> Arc<Pattern> {
        let nnz = pairs.len();
        let mut row_ptr = vec![0u32; n + 1];
        let mut col_of_slot = Vec::with_capacity(nnz);
        let mut diag_slots = Vec::new();
        for (q, &(i, k)) in pairs.iter().enumerate() {
            debug_assert!((i as usize) < n && (k as usize) < m);
            row_ptr[i as usize + 1] += 1;
            col_of_slot.push(k);
            if i == k {
                diag_slots.push(q as u32);
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }

        // Column-ordered view: counting sort by hyperedge, stable in slot order.
        let mut col_ptr = vec![0u32; m + 1];
        for &(_, k) in pairs {
            col_ptr[k as usize + 1] += 1;
        }
        for k in 0..m {
            col_ptr[k + 1] += col_ptr[k];
        }
        let mut cursor = col_ptr.clone();
        let mut row_of_cpos = vec![0u32; nnz];
        let mut slot_of_cpos = vec![0u32; nnz];
        for (q, &(i, k)) in pairs.iter().enumerate() {
            let p = cursor[k as usize] as usize;
            cursor[k as usize] += 1;
            row_of_cpos[p] = i;
            slot_of_cpos[p] = q as u32;
        }

        Arc::new(Pattern {
            n,
            m,
            row_ptr,
            col_of_slot,
            col_ptr,
            row_of_cpos,
            slot_of_cpos,
            diag_slots,
        })
    }

    /// Dense n x n pattern (every node pair, both orientations).
    pub fn dense(n: usize) -> Arc<Pattern> {
        let mut pairs = Vec::with_capacity(n * n);
        for i in 0..n as u32 {
            for k in 0..n as u32 {
                pairs.push((i, k));
            }
        }
        Self::from_sorted_pairs(n, n, &pairs)
    }

    /// Sub-pattern keeping the slots where `keep` is true. Also returns, for
    /// each kept slot, its slot index in `self` (a gather map).
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> (Arc<Pattern>, Vec<u32>) {
        let mut pairs = Vec::new();
        let mut map = Vec::new();
        for i in 0..self.n {
            for q in self.row_range(i) {
                if keep(q) {
                    pairs.push((i as u32, self.col_of_slot[q]));
                    map.push(q as u32);
                }
            }
        }
        (Self::from_sorted_pairs(self.n, self.m, &pairs), map)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn nnz(&self) -> usize {
        self.col_of_slot.len()
    }

    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i] as usize..self.row_ptr[i + 1] as usize
    }

    #[inline]
    pub fn col_range(&self, k: usize) -> std::ops::Range<usize> {
        self.col_ptr[k] as usize..self.col_ptr[k + 1] as usize
    }

    /// Hyperedge of a canonical slot.
    #[inline]
    pub fn col_of(&self, slot: usize) -> usize {
        self.col_of_slot[slot] as usize
    }

    /// (node, canonical slot) at a column-ordered position.
    #[inline]
    pub fn col_entry(&self, cpos: usize) -> (usize, usize) {
        (
            self.row_of_cpos[cpos] as usize,
            self.slot_of_cpos[cpos] as usize,
        )
    }

    pub fn diag_slots(&self) -> &[u32] {
        &self.diag_slots
    }

    /// Node index of a canonical slot (by binary search over row_ptr).
    pub fn row_of(&self, slot: usize) -> usize {
        let s = slot as u32;
        match self.row_ptr.binary_search(&s) {
            // row_ptr may contain repeated values for empty rows; the row is
            // the last index whose start is <= slot and whose end is > slot.
            Ok(mut i) => {
                while i + 1 < self.row_ptr.len() && self.row_ptr[i + 1] == s {
                    i += 1;
                }
                i
            }
            Err(i) => i - 1,
        }
    }

    /// Entries as (node, hyperedge, slot) in canonical order.
    pub fn iter_entries(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.row_range(i)
                .map(move |q| (i, self.col_of(q), q))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_col_views_agree() {
        let pat = Pattern::from_pairs(3, 4, vec![(0, 1), (2, 0), (0, 3), (1, 1), (2, 1)]);
        assert_eq!(pat.nnz(), 5);
        // canonical order: (0,1) (0,3) (1,1) (2,0) (2,1)
        assert_eq!(pat.row_range(0), 0..2);
        assert_eq!(pat.col_of(0), 1);
        assert_eq!(pat.col_of(1), 3);
        // column 1 holds rows 0,1,2
        let entries: Vec<_> = pat.col_range(1).map(|p| pat.col_entry(p)).collect();
        assert_eq!(entries, vec![(0, 0), (1, 2), (2, 4)]);
        for (i, _k, q) in pat.iter_entries() {
            assert_eq!(pat.row_of(q), i);
        }
    }

    #[test]
    fn dense_pattern_diag() {
        let pat = Pattern::dense(3);
        assert_eq!(pat.nnz(), 9);
        assert_eq!(pat.diag_slots(), &[0, 4, 8]);
    }

    #[test]
    fn filter_builds_gather_map() {
        let pat = Pattern::dense(2);
        let (sub, map) = pat.filter(|q| q % 2 == 0);
        assert_eq!(sub.nnz(), 2);
        assert_eq!(map, vec![0, 2]);
        // kept slots: (0,0) and (1,0)
        assert_eq!(sub.col_range(0).len(), 2);
        assert_eq!(sub.col_range(1).len(), 0);
    }

    #[test]
    fn empty_rows_are_handled() {
        let pat = Pattern::from_pairs(4, 2, vec![(3, 0), (0, 1)]);
        assert_eq!(pat.row_range(1), 1..1);
        assert_eq!(pat.row_of(0), 0);
        assert_eq!(pat.row_of(1), 3);
    }
}
