//! Multi-view hypergraph structure learning.
//!
//! Each view embeds the input features through its own learnable projection,
//! scores pairwise similarity, thresholds, and reads the result as a
//! node-centered weighted incidence (column k of the similarity matrix is
//! hyperedge k, self-weight forced to 1). Views are merged by entrywise mean
//! under a consistency regularizer and blended with the original hypergraph.
//!
//! Similarities live on a fixed candidate pattern: every pair when `n` is
//! small, otherwise the symmetrized union of each node's nearest original-
//! feature neighbors, which keeps the work linear in `n`.

use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hypergraph::{neighbor_lists, Incidence};
use crate::mat::Mat;
use crate::pattern::Pattern;
use crate::rng::xavier;
use crate::tensor::{Graph, TensorId};

/// Full dense similarity is used up to this many nodes; beyond it the
/// candidate-neighbor restriction applies.
pub const DENSE_SIMILARITY_LIMIT: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Similarity {
    Cosine,
    InnerProduct,
}

impl FromStr for Similarity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Similarity::Cosine),
            "inner_product" => Ok(Similarity::InnerProduct),
            other => Err(Error::config(format!(
                "unknown similarity `{other}` (expected cosine|inner_product)"
            ))),
        }
    }
}

impl std::fmt::Display for Similarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Similarity::Cosine => "cosine",
            Similarity::InnerProduct => "inner_product",
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ViewConfig {
    pub similarity: Similarity,
    pub embedding_dim: usize,
}

/// Structure-learning hyperparameters: similarity threshold, blend weight,
/// and the four loss weights.
#[derive(Clone, Copy, Debug)]
pub struct HglParams {
    pub delta1: f64,
    pub eta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
}

impl Default for HglParams {
    fn default() -> Self {
        HglParams {
            delta1: 0.6,
            eta: 0.5,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            mu: 1.0,
        }
    }
}

impl HglParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.delta1) {
            return Err(Error::config(format!("delta1 must be in [0,1), got {}", self.delta1)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::config(format!("eta must be in [0,1], got {}", self.eta)));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("mu", self.mu),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Candidate pattern over which similarities are evaluated. Always contains
/// the diagonal; for restricted mode the given neighbor lists are
/// symmetrized.
pub fn candidate_pattern(n: usize, lists: Option<&[Vec<u32>]>) -> Arc<Pattern> {
    match lists {
        None => Pattern::dense(n),
        Some(lists) => {
            let mut pairs = Vec::with_capacity(n * (2 * lists.first().map_or(0, Vec::len) + 1));
            for (i, list) in lists.iter().enumerate() {
                pairs.push((i as u32, i as u32));
                for &j in list {
                    pairs.push((i as u32, j));
                    pairs.push((j, i as u32));
                }
            }
            Pattern::from_pairs(n, n, pairs)
        }
    }
}

/// Choose dense or neighbor-restricted candidates from raw features.
pub fn candidate_pattern_for(features: &Mat, candidate_k: usize) -> Arc<Pattern> {
    let n = features.rows();
    if n <= DENSE_SIMILARITY_LIMIT {
        candidate_pattern(n, None)
    } else {
        let lists = neighbor_lists(features, candidate_k.min(n - 1));
        candidate_pattern(n, Some(&lists))
    }
}

/// X = row-normalized X0 P: the learnable low-dimensional view embedding.
pub fn embed(g: &mut Graph, x0: TensorId, p: TensorId) -> Result<TensorId> {
    let projected = g.matmul(x0, p)?;
    let zero_rows = {
        let v = g.value(projected);
        (0..v.rows())
            .filter(|&r| v.row(r).iter().all(|&x| x == 0.0))
            .count()
    };
    if zero_rows > 0 {
        log::warn!("embed: {zero_rows} all-zero embedded rows left unnormalized");
    }
    g.row_l2_normalize(projected)
}

/// Similarity values on the candidate pattern, mapped into [0,1] with the
/// diagonal forced to 1. Cosine maps through (s+1)/2; inner product is
/// min-max rescaled per row.
pub fn similarity(
    g: &mut Graph,
    xt: TensorId,
    kind: Similarity,
    pat: &Arc<Pattern>,
) -> Result<TensorId> {
    let raw = g.pair_dot(xt, pat)?;
    let unit = match kind {
        Similarity::Cosine => g.affine(raw, 0.5, 0.5)?,
        Similarity::InnerProduct => g.row_minmax_normalize(raw, pat)?,
    };
    g.set_unit_diag(unit, pat)
}

/// Hard threshold of Eq-style sparse sampling; keeps values >= delta1.
pub fn sparsify(g: &mut Graph, s: TensorId, delta1: f64) -> Result<TensorId> {
    g.threshold(s, delta1)
}

/// Read the sparse similarity as an incidence: hyperedge k is column k with
/// the self-weight pinned to 1.
pub fn view_hypergraph(g: &mut Graph, s_sparse: TensorId, pat: &Arc<Pattern>) -> Result<TensorId> {
    g.set_unit_diag(s_sparse, pat)
}

/// Entrywise mean of per-view incidence values.
pub fn merge_views(g: &mut Graph, views: &[TensorId]) -> Result<TensorId> {
    if views.is_empty() {
        return Err(Error::config("merge_views: no views"));
    }
    let mut acc = views[0];
    for &v in &views[1..] {
        acc = g.add(acc, v)?;
    }
    g.scale(acc, 1.0 / views.len() as f64)
}

/// (1/V) sum_v ||H(v) - H||^2.
pub fn consistency_loss(g: &mut Graph, views: &[TensorId], mean: TensorId) -> Result<TensorId> {
    let mut acc: Option<TensorId> = None;
    for &v in views {
        let diff = g.sub(v, mean)?;
        let sq = g.frobenius_norm_sq(diff)?;
        acc = Some(match acc {
            Some(a) => g.add(a, sq)?,
            None => sq,
        });
    }
    let total = acc.ok_or_else(|| Error::config("consistency_loss: no views"))?;
    g.scale(total, 1.0 / views.len() as f64)
}

/// Convex blend eta*H + (1-eta)*H0 over the candidate pattern. `h0` must be
/// structurally contained in the pattern.
pub fn blend(
    g: &mut Graph,
    h: TensorId,
    h0: &Incidence,
    pat: &Arc<Pattern>,
    eta: f64,
) -> Result<TensorId> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::config(format!("eta must be in [0,1], got {eta}")));
    }
    let aligned = align_values(h0, pat)?;
    let scaled: Vec<f64> = aligned.iter().map(|v| (1.0 - eta) * v).collect();
    let h0_term = g.constant(Mat::from_vec(pat.nnz(), 1, scaled)?)?;
    let h_term = g.scale(h, eta)?;
    g.add(h_term, h0_term)
}

/// Spread incidence values onto the slots of a covering pattern.
pub fn align_values(h: &Incidence, pat: &Pattern) -> Result<Vec<f64>> {
    if h.n() != pat.n() || h.m() != pat.m() {
        return Err(Error::dim(
            "align_values",
            format!("{}x{} incidence vs {}x{} pattern", h.n(), h.m(), pat.n(), pat.m()),
        ));
    }
    let mut out = vec![0.0; pat.nnz()];
    for i in 0..h.n() {
        let mut slots = pat.row_range(i).peekable();
        for hq in h.pattern().row_range(i) {
            let target = h.pattern().col_of(hq);
            let mut placed = false;
            for q in slots.by_ref() {
                match pat.col_of(q).cmp(&target) {
                    std::cmp::Ordering::Less => continue,
                    std::cmp::Ordering::Equal => {
                        out[q] = h.values()[hq];
                        placed = true;
                        break;
                    }
                    std::cmp::Ordering::Greater => break,
                }
            }
            if !placed {
                return Err(Error::dim(
                    "align_values",
                    format!("entry ({i},{target}) missing from candidate pattern"),
                ));
            }
        }
    }
    Ok(out)
}

/// One view: a similarity kind plus its learnable projection.
pub struct View {
    pub config: ViewConfig,
    pub p: Mat,
}

/// The multi-view structure learner's trainable state.
pub struct StructureLearner {
    views: Vec<View>,
}

/// Per-epoch outputs: everything downstream consumers need, as live graph
/// nodes over the candidate pattern.
pub struct StructureOutput {
    /// Blended incidence values on the candidate pattern.
    pub h_tilde: TensorId,
    /// Per-view incidence values (for the consistency term and inspection).
    pub per_view: Vec<TensorId>,
    /// Per-view row-normalized embeddings, n x p.
    pub embeddings: Vec<TensorId>,
    /// Consistency loss scalar.
    pub consistency: TensorId,
}

impl StructureLearner {
    pub fn new(
        input_dim: usize,
        configs: &[ViewConfig],
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::config("structure learner needs at least one view"));
        }
        let views = configs
            .iter()
            .map(|&config| {
                if config.embedding_dim == 0 {
                    return Err(Error::config("embedding_dim must be >= 1"));
                }
                Ok(View {
                    config,
                    p: xavier(rng, input_dim, config.embedding_dim),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StructureLearner { views })
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn params(&self) -> Vec<&Mat> {
        self.views.iter().map(|v| &v.p).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        self.views.iter_mut().map(|v| &mut v.p).collect()
    }

    /// Run the structure-learning forward pass. Returns the outputs plus the
    /// registered parameter ids in `params()` order.
    pub fn forward(
        &self,
        g: &mut Graph,
        x0: TensorId,
        pat: &Arc<Pattern>,
        h0: &Incidence,
        params: &HglParams,
    ) -> Result<(StructureOutput, Vec<TensorId>)> {
        params.validate()?;
        let mut param_ids = Vec::with_capacity(self.views.len());
        let mut embeddings = Vec::with_capacity(self.views.len());
        let mut per_view = Vec::with_capacity(self.views.len());
        for view in &self.views {
            let p_id = g.variable(view.p.clone())?;
            param_ids.push(p_id);
            let xt = embed(g, x0, p_id)?;
            let s = similarity(g, xt, view.config.similarity, pat)?;
            let kept = sparsify(g, s, params.delta1)?;
            let h_v = view_hypergraph(g, kept, pat)?;
            embeddings.push(xt);
            per_view.push(h_v);
        }
        let merged = merge_views(g, &per_view)?;
        let consistency = consistency_loss(g, &per_view, merged)?;
        let h_tilde = blend(g, merged, h0, pat, params.eta)?;
        Ok((
            StructureOutput {
                h_tilde,
                per_view,
                embeddings,
                consistency,
            },
            param_ids,
        ))
    }
}

/// The four-term structure loss:
/// alpha/n^2 * smoothness + beta/n^2 * ||H~||_F^2 + gamma * connectivity
/// + mu/n^2 * consistency, with smoothness averaged over the per-view
/// embeddings. `pat_eff`/`h_eff` carry the nonzero blended incidence the
/// Laplacian and connectivity terms operate on; `h_tilde` may keep zero
/// slots (they contribute nothing to the Frobenius term).
#[allow(clippy::too_many_arguments)]
pub fn hgl_loss(
    g: &mut Graph,
    pat_eff: &Arc<Pattern>,
    h_eff: TensorId,
    h_tilde: TensorId,
    embeddings: &[TensorId],
    consistency: TensorId,
    params: &HglParams,
) -> Result<TensorId> {
    let n = pat_eff.n() as f64;
    let inv_n2 = 1.0 / (n * n);

    let mut smooth: Option<TensorId> = None;
    if params.alpha != 0.0 {
        for &xt in embeddings {
            let q = crate::hypergraph::laplacian_quadratic_values(g, pat_eff, h_eff, xt)?;
            smooth = Some(match smooth {
                Some(acc) => g.add(acc, q)?,
                None => q,
            });
        }
    }

    let mut total = match smooth {
        Some(s) => g.scale(s, params.alpha * inv_n2 / embeddings.len().max(1) as f64)?,
        None => g.constant(Mat::zeros(1, 1))?,
    };

    if params.beta != 0.0 {
        let frob = g.frobenius_norm_sq(h_tilde)?;
        let frob = g.scale(frob, params.beta * inv_n2)?;
        total = g.add(total, frob)?;
    }
    if params.gamma != 0.0 {
        let conn = crate::hypergraph::connectivity_penalty_values(g, pat_eff, h_eff)?;
        let conn = g.scale(conn, params.gamma)?;
        total = g.add(total, conn)?;
    }
    if params.mu != 0.0 {
        let cons = g.scale(consistency, params.mu * inv_n2)?;
        total = g.add(total, cons)?;
    }
    let value = g.scalar(total);
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "hgl_loss" });
    }
    Ok(total)
}
