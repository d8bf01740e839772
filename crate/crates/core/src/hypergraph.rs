//! Weighted hypergraph incidence structures and message propagation.
//!
//! Hyperedges follow the node-centered convention: a hypergraph over `n`
//! nodes has `m = n` hyperedges, hyperedge `k` containing node `k` with
//! weight 1 plus its neighbors. That keeps learned and k-NN incidences
//! entrywise alignable for blending. Generic incidences with `m != n` are
//! still supported by every operation below.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};
use crate::pattern::Pattern;
use crate::tensor::{Graph, TensorId};

/// Weighted incidence: entries carry weights in (0, 1]; zero entries are
/// absent by construction.
#[derive(Clone, Debug)]
pub struct Incidence {
    pattern: Arc<Pattern>,
    values: Vec<f64>,
}

/// Weighted vertex and hyperedge degrees (row and column sums).
#[derive(Clone, Debug, PartialEq)]
pub struct Degrees {
    pub vertex: Vec<f64>,
    pub hyperedge: Vec<f64>,
}

impl Incidence {
    /// Finalize an incidence from slot values over a pattern. Zero-weight
    /// slots are dropped; weights must lie in [0, 1]; every node and every
    /// hyperedge must keep at least one entry.
    pub fn new(pattern: &Arc<Pattern>, values: &[f64]) -> Result<Incidence> {
        if values.len() != pattern.nnz() {
            return Err(Error::dim(
                "Incidence::new",
                format!("{} values for {} slots", values.len(), pattern.nnz()),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::dim(
                "Incidence::new",
                format!("weight {bad} outside [0,1]"),
            ));
        }
        let (pat, map) = pattern.filter(|q| values[q] > 0.0);
        let kept: Vec<f64> = map.iter().map(|&q| values[q as usize]).collect();
        let inc = Incidence {
            pattern: pat,
            values: kept,
        };
        for i in 0..inc.pattern.n() {
            if inc.pattern.row_range(i).is_empty() {
                return Err(Error::DegenerateNeighborhood {
                    what: "node",
                    index: i,
                });
            }
        }
        for k in 0..inc.pattern.m() {
            if inc.pattern.col_range(k).is_empty() {
                return Err(Error::DegenerateNeighborhood {
                    what: "hyperedge",
                    index: k,
                });
            }
        }
        Ok(inc)
    }

    pub fn n(&self) -> usize {
        self.pattern.n()
    }

    pub fn m(&self) -> usize {
        self.pattern.m()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weight(&self, node: usize, edge: usize) -> f64 {
        for q in self.pattern.row_range(node) {
            if self.pattern.col_of(q) == edge {
                return self.values[q];
            }
        }
        0.0
    }

    /// Members of hyperedge `k` in ascending node order.
    pub fn members(&self, k: usize) -> Vec<usize> {
        self.pattern
            .col_range(k)
            .map(|p| self.pattern.col_entry(p).0)
            .collect()
    }

    /// Enter the incidence into a graph as a constant slot tensor.
    pub fn to_graph_const(&self, g: &mut Graph) -> Result<TensorId> {
        g.constant(Mat::from_vec(self.nnz(), 1, self.values.clone())?)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {}", self.n(), self.m(), self.nnz())?;
        for (i, k, q) in self.pattern.iter_entries() {
            writeln!(w, "{}\t{}\t{}", i, k, self.values[q])?;
        }
        Ok(())
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_text(std::io::BufWriter::new(f))
    }

    pub fn load_text(path: &Path) -> Result<Incidence> {
        let f = std::fs::File::open(path)?;
        let mut lines = BufReader::new(f).lines();
        let header = lines.next().ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            offset: 0,
            detail: "empty incidence file".to_string(),
        })??;
        let parts: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format {
                path: path.display().to_string(),
                offset: 0,
                detail: format!("bad header: {e}"),
            })?;
        if parts.len() != 3 {
            return Err(Error::Format {
                path: path.display().to_string(),
                offset: 0,
                detail: "header must be `n m nnz`".to_string(),
            });
        }
        let (n, m, nnz) = (parts[0], parts[1], parts[2]);
        let mut pairs = Vec::with_capacity(nnz);
        let mut weights = Vec::with_capacity(nnz);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let bad = |detail: String| Error::Format {
                path: path.display().to_string(),
                offset: (lineno + 1) as u64,
                detail,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let i: u32 = fields[0].parse().map_err(|e| bad(format!("node index: {e}")))?;
            let k: u32 = fields[1].parse().map_err(|e| bad(format!("edge index: {e}")))?;
            let w: f64 = fields[2].parse().map_err(|e| bad(format!("weight: {e}")))?;
            pairs.push((i, k));
            weights.push(w);
        }
        if pairs.len() != nnz {
            return Err(Error::Format {
                path: path.display().to_string(),
                offset: 0,
                detail: format!("header says {} entries, found {}", nnz, pairs.len()),
            });
        }
        // Rebuild in canonical order.
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_unstable_by_key(|&idx| pairs[idx]);
        let sorted_pairs: Vec<(u32, u32)> = order.iter().map(|&idx| pairs[idx]).collect();
        let sorted_weights: Vec<f64> = order.iter().map(|&idx| weights[idx]).collect();
        let pat = Pattern::from_pairs(n, m, sorted_pairs);
        Incidence::new(&pat, &sorted_weights)
    }
}

/// Deterministic nearest-neighbor lists: for each node, the `count` nearest
/// other nodes by squared Euclidean distance, ties broken by ascending index.
pub fn neighbor_lists(features: &Mat, count: usize) -> Vec<Vec<u32>> {
    let n = features.rows();
    debug_assert!(count < n);
    let sq: Vec<f64> = (0..n)
        .map(|i| dot(features.row(i), features.row(i)))
        .collect();
    let mut lists = Vec::with_capacity(n);

    // The Gram-matrix route is exact arithmetic-wise up to rounding and
    // pays off once the quadratic pair loop dominates.
    let chunk = 256;
    let use_gram = n >= 1024;
    let mut buf: Vec<(f64, u32)> = Vec::with_capacity(n - 1);
    let mut row_start = 0;
    while row_start < n {
        let rows = if use_gram { chunk.min(n - row_start) } else { n };
        let gram: Option<Mat> = if use_gram {
            let mut block = Mat::zeros(rows, features.cols());
            for r in 0..rows {
                block
                    .row_mut(r)
                    .copy_from_slice(features.row(row_start + r));
            }
            Some(Mat::matmul(&block, false, features, true).expect("gram"))
        } else {
            None
        };
        for local in 0..rows {
            let i = row_start + local;
            buf.clear();
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d2 = match &gram {
                    Some(gm) => (sq[i] + sq[j] - 2.0 * gm.get(local, j)).max(0.0),
                    None => {
                        let mut acc = 0.0;
                        for (a, b) in features.row(i).iter().zip(features.row(j)) {
                            let d = a - b;
                            acc += d * d;
                        }
                        acc
                    }
                };
                buf.push((d2, j as u32));
            }
            let cmp = |a: &(f64, u32), b: &(f64, u32)| {
                a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
            };
            if count < buf.len() {
                buf.select_nth_unstable_by(count - 1, cmp);
                buf.truncate(count);
            }
            buf.sort_unstable_by(cmp);
            lists.push(buf.iter().map(|&(_, j)| j).collect());
        }
        row_start += rows;
        if !use_gram {
            break;
        }
    }
    lists
}

/// k-NN hypergraph: one hyperedge per node containing the node itself and
/// its `k` nearest neighbors, all with weight 1.
pub fn knn_hypergraph(features: &Mat, k: usize) -> Result<Incidence> {
    let n = features.rows();
    if k >= n {
        return Err(Error::config(format!(
            "knn requires k < n (got k={k}, n={n})"
        )));
    }
    let lists = neighbor_lists(features, k);
    incidence_from_neighbor_lists(n, &lists)
}

/// Build the node-centered incidence from per-node member lists (self added
/// automatically, weight 1 everywhere).
pub fn incidence_from_neighbor_lists(n: usize, lists: &[Vec<u32>]) -> Result<Incidence> {
    let mut pairs = Vec::with_capacity(n * (lists.first().map_or(0, Vec::len) + 1));
    for (center, list) in lists.iter().enumerate() {
        pairs.push((center as u32, center as u32));
        for &j in list {
            pairs.push((j, center as u32));
        }
    }
    let pat = Pattern::from_pairs(n, n, pairs);
    let values = vec![1.0; pat.nnz()];
    Incidence::new(&pat, &values)
}

pub fn degrees(h: &Incidence) -> Degrees {
    let pat = h.pattern();
    let mut vertex = vec![0.0; pat.n()];
    for (i, d) in vertex.iter_mut().enumerate() {
        for q in pat.row_range(i) {
            *d += h.values()[q];
        }
    }
    let mut hyperedge = vec![0.0; pat.m()];
    for (k, d) in hyperedge.iter_mut().enumerate() {
        for p in pat.col_range(k) {
            let (_, q) = pat.col_entry(p);
            *d += h.values()[q];
        }
    }
    Degrees { vertex, hyperedge }
}

/// Slot weights of B = D_v^{-1/2} H D_e^{-1/2}: w_(i,k) = H_(i,k) /
/// (sqrt(d_v(i)) sqrt(d_e(k))). Both hypergraph propagation directions and
/// the Laplacian quadratic form factor through this single tensor, and it is
/// differentiable with respect to the incidence values.
pub fn propagation_weights(
    g: &mut Graph,
    pat: &Arc<Pattern>,
    hvals: TensorId,
) -> Result<TensorId> {
    let dv = g.pattern_row_sum(hvals, pat)?;
    let de = g.pattern_col_sum(hvals, pat)?;
    let dv_inv_sqrt = g.elem_pow(dv, -0.5)?;
    let de_inv_sqrt = g.elem_pow(de, -0.5)?;
    g.pair_scale(hvals, dv_inv_sqrt, de_inv_sqrt, pat)
}

/// E = D_e^{-1/2} H^T D_v^{-1/2} X0: node features gathered into hyperedges.
pub fn propagate_to_hyperedges(g: &mut Graph, h: &Incidence, x0: TensorId) -> Result<TensorId> {
    if g.value(x0).rows() != h.n() {
        return Err(Error::dim(
            "propagate_to_hyperedges",
            format!("{} feature rows for {} nodes", g.value(x0).rows(), h.n()),
        ));
    }
    let hvals = h.to_graph_const(g)?;
    let w = propagation_weights(g, h.pattern(), hvals)?;
    g.agg_cols(w, x0, h.pattern())
}

/// X = D_v^{-1/2} H D_e^{-1/2} E: hyperedge features gathered back to nodes.
pub fn propagate_to_nodes(g: &mut Graph, h: &Incidence, e: TensorId) -> Result<TensorId> {
    if g.value(e).rows() != h.m() {
        return Err(Error::dim(
            "propagate_to_nodes",
            format!("{} feature rows for {} hyperedges", g.value(e).rows(), h.m()),
        ));
    }
    let hvals = h.to_graph_const(g)?;
    let w = propagation_weights(g, h.pattern(), hvals)?;
    g.agg_rows(w, e, h.pattern())
}

/// tr(x^T Hhat x) for the normalized Laplacian Hhat = B B^T, computed as
/// ||B^T x||_F^2 without materializing an n x n matrix. Differentiable with
/// respect to `x` and to `hvals`.
pub fn laplacian_quadratic_values(
    g: &mut Graph,
    pat: &Arc<Pattern>,
    hvals: TensorId,
    x: TensorId,
) -> Result<TensorId> {
    if g.value(x).rows() != pat.n() {
        return Err(Error::dim(
            "laplacian_quadratic",
            format!("{} feature rows for {} nodes", g.value(x).rows(), pat.n()),
        ));
    }
    let w = propagation_weights(g, pat, hvals)?;
    let btx = g.agg_cols(w, x, pat)?;
    g.frobenius_norm_sq(btx)
}

pub fn laplacian_quadratic(g: &mut Graph, h: &Incidence, x: TensorId) -> Result<TensorId> {
    let hvals = h.to_graph_const(g)?;
    laplacian_quadratic_values(g, h.pattern(), hvals, x)
}

/// -(1/n) * sum_i log(max((Hhat 1)_i, eps)). The caller applies its own
/// weight. Hhat 1 = B (B^T 1).
pub fn connectivity_penalty_values(
    g: &mut Graph,
    pat: &Arc<Pattern>,
    hvals: TensorId,
) -> Result<TensorId> {
    let w = propagation_weights(g, pat, hvals)?;
    let bt1 = g.pattern_col_sum(w, pat)?;
    let h1 = g.agg_rows(w, bt1, pat)?;
    let logs = g.log_guard(h1)?;
    let total = g.sum(logs)?;
    g.scale(total, -1.0 / pat.n() as f64)
}

pub fn connectivity_penalty(g: &mut Graph, h: &Incidence) -> Result<TensorId> {
    let hvals = h.to_graph_const(g)?;
    connectivity_penalty_values(g, h.pattern(), hvals)
}
