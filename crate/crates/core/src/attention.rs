//! Density-aware hypergraph attention.
//!
//! One layer runs the node-hyperedge-node transform: per-hyperedge softmax
//! attention gathers member-node features into hyperedge features, then a
//! per-node softmax over incident hyperedges gathers them back. Raw
//! attention logits follow the concatenation score
//! `LeakyReLU(a^T (W x_i || W e_k))`; a density term is added to each logit
//! so that nodes (or hyperedges) sitting in locally dense regions receive
//! more weight, following the density-peak intuition that such nodes are
//! closer to cluster centers.
//!
//! Densities are plain numbers, recomputed once per epoch and excluded from
//! the gradient path.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hypergraph::Incidence;
use crate::mat::{dot, Mat};
use crate::pattern::Pattern;
use crate::rng::xavier;
use crate::tensor::{Axis, Graph, Side, TensorId, EPS};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Raw node and hyperedge densities for one epoch.
#[derive(Clone, Debug)]
pub struct DensityProfile {
    pub node: Vec<f64>,
    pub hyperedge: Vec<f64>,
}

impl DensityProfile {
    pub fn compute(features: &Mat, h: &Incidence, delta2: f64) -> DensityProfile {
        let node = node_density(features, h, delta2);
        let hyperedge = hyperedge_density(&node, h);
        DensityProfile { node, hyperedge }
    }
}

/// Density of a node: the sum of [0,1]-mapped cosine similarities to every
/// distinct co-member (a node sharing at least one hyperedge), counting only
/// similarities strictly above `delta2`.
pub fn node_density(features: &Mat, h: &Incidence, delta2: f64) -> Vec<f64> {
    let n = h.n();
    let mut unit = features.clone();
    for r in 0..n {
        let norm = dot(unit.row(r), unit.row(r)).sqrt();
        if norm >= EPS {
            for v in unit.row_mut(r) {
                *v /= norm;
            }
        }
    }
    let pat = h.pattern();
    let mut rho = vec![0.0; n];
    let mut stamp = vec![u32::MAX; n];
    for i in 0..n {
        let xi = unit.row(i);
        for q in pat.row_range(i) {
            let k = pat.col_of(q);
            for p in pat.col_range(k) {
                let (j, _) = pat.col_entry(p);
                if j == i || stamp[j] == i as u32 {
                    continue;
                }
                stamp[j] = i as u32;
                let sim = 0.5 * (1.0 + dot(xi, unit.row(j)));
                if sim > delta2 {
                    rho[i] += sim;
                }
            }
        }
    }
    rho
}

/// Density of a hyperedge: the sum of its members' node densities.
pub fn hyperedge_density(rho_node: &[f64], h: &Incidence) -> Vec<f64> {
    let pat = h.pattern();
    let mut rho = vec![0.0; pat.m()];
    for (k, out) in rho.iter_mut().enumerate() {
        for p in pat.col_range(k) {
            let (i, _) = pat.col_entry(p);
            *out += rho_node[i];
        }
    }
    rho
}

/// Min-max rescale raw densities into [0, max(cap, 0)]. All-equal densities
/// map to zeros, as does a non-positive cap.
pub fn normalize_density(raw: &[f64], cap: f64) -> Vec<f64> {
    if raw.is_empty() {
        return Vec::new();
    }
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let scale = cap.max(0.0);
    if span <= 0.0 || scale == 0.0 {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|&r| (r - lo) / span * scale).collect()
}

fn split_halves(g: &mut Graph, alpha: TensorId, d_out: usize) -> Result<(TensorId, TensorId)> {
    let v = g.value(alpha);
    if v.shape() != (2 * d_out, 1) {
        return Err(Error::dim(
            "attention",
            format!("attention vector {:?}, expected {}x1", v.shape(), 2 * d_out),
        ));
    }
    let top = g.slice_rows(alpha, 0, d_out)?;
    let bot = g.slice_rows(alpha, d_out, d_out)?;
    Ok((top, bot))
}

/// Per-slot raw logits LeakyReLU(first[i] + second[k]) where the two halves
/// of `alpha` score the row-side and column-side projections.
fn raw_logits(
    g: &mut Graph,
    pat: &Arc<Pattern>,
    row_feats: TensorId,
    col_feats: TensorId,
    alpha: TensorId,
) -> Result<TensorId> {
    let d_out = g.value(row_feats).cols();
    let (a_row, a_col) = split_halves(g, alpha, d_out)?;
    let u = g.matmul(row_feats, a_row)?;
    let v = g.matmul(col_feats, a_col)?;
    let sums = g.pair_logits(u, v, pat)?;
    g.leaky_relu(sums, LEAKY_SLOPE)
}

fn add_density(
    g: &mut Graph,
    logits: TensorId,
    pat: &Arc<Pattern>,
    rho: Option<&[f64]>,
    side: Side,
) -> Result<TensorId> {
    match rho {
        None => Ok(logits),
        Some(raw) => {
            let cap = g
                .value(logits)
                .as_slice()
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let normalized = Arc::new(normalize_density(raw, cap));
            g.add_slot_const(logits, &normalized, pat, side)
        }
    }
}

/// DA_X: for each hyperedge, softmax over its member nodes of the raw
/// node-edge logit plus the node's normalized density. `x_proj`/`e_proj`
/// are the already W-projected node and hyperedge features.
pub fn vertex_attention(
    g: &mut Graph,
    pat: &Arc<Pattern>,
    x_proj: TensorId,
    e_proj: TensorId,
    alpha_x: TensorId,
    rho_node: Option<&[f64]>,
) -> Result<TensorId> {
    let raw = raw_logits(g, pat, x_proj, e_proj, alpha_x)?;
    let logits = add_density(g, raw, pat, rho_node, Side::Row)?;
    g.pattern_softmax(logits, pat, Axis::Cols)
}

/// E~ = row-normalized ELU(DA_X^T (W X)).
pub fn vertex_aggregate(
    g: &mut Graph,
    pat: &Arc<Pattern>,
    da_x: TensorId,
    x_proj: TensorId,
) -> Result<TensorId> {
    let gathered = g.agg_cols(da_x, x_proj, pat)?;
    let activated = g.elu(gathered)?;
    g.row_l2_normalize(activated)
}

/// DA_E: for each node, softmax over its incident hyperedges of the raw
/// edge-node logit plus the hyperedge's normalized density. The hyperedge
/// side scores the aggregated features `e_tilde` directly (they already
/// live in the projected space); the node side scores `x_proj`.
pub fn hyperedge_attention(
    g: &mut Graph,
    pat: &Arc<Pattern>,
    e_tilde: TensorId,
    x_proj: TensorId,
    alpha_e: TensorId,
    rho_edge: Option<&[f64]>,
) -> Result<TensorId> {
    let d_out = g.value(e_tilde).cols();
    let (a_edge, a_node) = split_halves(g, alpha_e, d_out)?;
    let u_edge = g.matmul(e_tilde, a_edge)?;
    let v_node = g.matmul(x_proj, a_node)?;
    let sums = g.pair_logits(v_node, u_edge, pat)?;
    let raw = g.leaky_relu(sums, LEAKY_SLOPE)?;
    let logits = add_density(g, raw, pat, rho_edge, Side::Col)?;
    g.pattern_softmax(logits, pat, Axis::Rows)
}

/// X~ = row-normalized ELU(DA_E^T E~).
pub fn hyperedge_aggregate(
    g: &mut Graph,
    pat: &Arc<Pattern>,
    da_e: TensorId,
    e_tilde: TensorId,
) -> Result<TensorId> {
    let gathered = g.agg_rows(da_e, e_tilde, pat)?;
    let activated = g.elu(gathered)?;
    g.row_l2_normalize(activated)
}

/// One attention head's parameters. W is shared between the vertex- and
/// hyperedge-attention stages.
pub struct AttentionHead {
    pub w: Mat,
    pub alpha_x: Mat,
    pub alpha_e: Mat,
}

impl AttentionHead {
    pub fn new(rng: &mut rand_chacha::ChaCha8Rng, d_in: usize, d_out: usize) -> Self {
        AttentionHead {
            w: xavier(rng, d_in, d_out),
            alpha_x: xavier(rng, 2 * d_out, 1),
            alpha_e: xavier(rng, 2 * d_out, 1),
        }
    }
}

/// One density-aware attention layer: T independent heads whose outputs
/// concatenate along the feature axis.
pub struct DhatLayer {
    pub heads: Vec<AttentionHead>,
}

impl DhatLayer {
    pub fn new(
        rng: &mut rand_chacha::ChaCha8Rng,
        d_in: usize,
        d_out: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::config("attention layer needs at least one head"));
        }
        Ok(DhatLayer {
            heads: (0..heads).map(|_| AttentionHead::new(rng, d_in, d_out)).collect(),
        })
    }
}

/// Registered per-head parameter ids: (w, alpha_x, alpha_e).
pub type HeadIds = (TensorId, TensorId, TensorId);

/// Full node-hyperedge-node transform for one head.
pub fn head_forward(
    g: &mut Graph,
    pat: &Arc<Pattern>,
    x: TensorId,
    e: TensorId,
    ids: HeadIds,
    density: Option<&DensityProfile>,
) -> Result<(TensorId, TensorId)> {
    let (w, alpha_x, alpha_e) = ids;
    let x_proj = g.matmul(x, w)?;
    let e_proj = g.matmul(e, w)?;
    let da_x = vertex_attention(g, pat, x_proj, e_proj, alpha_x, density.map(|d| d.node.as_slice()))?;
    let e_tilde = vertex_aggregate(g, pat, da_x, x_proj)?;
    let da_e = hyperedge_attention(
        g,
        pat,
        e_tilde,
        x_proj,
        alpha_e,
        density.map(|d| d.hyperedge.as_slice()),
    )?;
    let x_tilde = hyperedge_aggregate(g, pat, da_e, e_tilde)?;
    Ok((x_tilde, e_tilde))
}

/// Concatenate the per-head transforms along the feature axis, in head
/// declaration order. Returns node and hyperedge outputs.
pub fn multi_head(
    g: &mut Graph,
    pat: &Arc<Pattern>,
    x: TensorId,
    e: TensorId,
    head_ids: &[HeadIds],
    density: Option<&DensityProfile>,
) -> Result<(TensorId, TensorId)> {
    let mut xs = Vec::with_capacity(head_ids.len());
    let mut es = Vec::with_capacity(head_ids.len());
    for &ids in head_ids {
        let (x_t, e_t) = head_forward(g, pat, x, e, ids, density)?;
        xs.push(x_t);
        es.push(e_t);
    }
    if xs.len() == 1 {
        return Ok((xs[0], es[0]));
    }
    Ok((g.concat_cols(&xs)?, g.concat_cols(&es)?))
}

/// Row softmax turning final-layer node features into class probabilities.
pub fn classify(g: &mut Graph, logits: TensorId) -> Result<TensorId> {
    let v = g.value(logits);
    let mask = Arc::new(crate::tensor::Mask::all(v.rows(), v.cols()));
    g.masked_softmax(logits, &mask, Axis::Rows)
}

/// Cross-entropy over the labeled rows only: -sum_{i in L} ln Z[i, y_i].
pub fn cross_entropy(
    g: &mut Graph,
    z: TensorId,
    labeled: &[(usize, usize)],
) -> Result<TensorId> {
    if labeled.is_empty() {
        return Err(Error::config("cross_entropy: empty labeled set"));
    }
    let (n, c) = g.value(z).shape();
    let mut y = Mat::zeros(n, c);
    for &(node, class) in labeled {
        if node >= n || class >= c {
            return Err(Error::config(format!(
                "label ({node},{class}) outside {n}x{c} prediction matrix"
            )));
        }
        y.set(node, class, 1.0);
    }
    let y_id = g.constant(y)?;
    let logs = g.log_guard(z)?;
    let picked = g.mul(y_id, logs)?;
    let total = g.sum(picked)?;
    g.scale(total, -1.0)
}

/// The two-layer classification network; layer 1 is multi-head, layer 2
/// maps to class scores.
pub struct AttentionNet {
    pub layers: Vec<DhatLayer>,
}

impl AttentionNet {
    pub fn new(
        rng: &mut rand_chacha::ChaCha8Rng,
        d_in: usize,
        hidden: usize,
        heads: usize,
        classes: usize,
    ) -> Result<Self> {
        let layer1 = DhatLayer::new(rng, d_in, hidden, heads)?;
        let layer2 = DhatLayer::new(rng, hidden * heads, classes, 1)?;
        Ok(AttentionNet {
            layers: vec![layer1, layer2],
        })
    }

    pub fn params(&self) -> Vec<&Mat> {
        self.layers
            .iter()
            .flat_map(|l| l.heads.iter().flat_map(|h| [&h.w, &h.alpha_x, &h.alpha_e]))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                l.heads
                    .iter_mut()
                    .flat_map(|h| [&mut h.w, &mut h.alpha_x, &mut h.alpha_e])
            })
            .collect()
    }

    /// Run every layer; returns final node scores (n x classes) and the
    /// registered parameter ids in `params()` order.
    pub fn forward(
        &self,
        g: &mut Graph,
        pat: &Arc<Pattern>,
        x: TensorId,
        e: TensorId,
        density: Option<&DensityProfile>,
    ) -> Result<(TensorId, Vec<TensorId>)> {
        let mut param_ids = Vec::new();
        let mut cur = (x, e);
        for layer in &self.layers {
            let mut head_ids = Vec::with_capacity(layer.heads.len());
            for head in &layer.heads {
                let w = g.variable(head.w.clone())?;
                let ax = g.variable(head.alpha_x.clone())?;
                let ae = g.variable(head.alpha_e.clone())?;
                param_ids.extend([w, ax, ae]);
                head_ids.push((w, ax, ae));
            }
            cur = multi_head(g, pat, cur.0, cur.1, &head_ids, density)?;
        }
        Ok((cur.0, param_ids))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::Pattern;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    fn incidence(n: usize, m: usize, entries: &[(u32, u32, f64)]) -> Incidence {
        let pairs: Vec<(u32, u32)> = entries.iter().map(|&(i, k, _)| (i, k)).collect();
        let pat = Pattern::from_pairs(n, m, pairs.clone());
        let mut vals = vec![0.0; pat.nnz()];
        for &(i, k, w) in entries {
            for q in pat.row_range(i as usize) {
                if pat.col_of(q) == k as usize {
                    vals[q] = w;
                }
            }
        }
        Incidence::new(&pat, &vals).unwrap()
    }

    #[test]
    fn node_density_isolated_node_is_zero() {
        let h = incidence(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]);
        let x = Mat::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let rho = node_density(&x, &h, 0.5);
        assert_eq!(rho, vec![0.0, 0.0]);
    }

    #[test]
    fn node_density_identical_triplet() {
        let h = incidence(3, 1, &[(0, 0, 1.0), (1, 0, 1.0), (2, 0, 1.0)]);
        let x = Mat::from_rows(&[&[2.0, 1.0], &[2.0, 1.0], &[2.0, 1.0]]);
        let rho = node_density(&x, &h, 0.5);
        for r in rho {
            assert!((r - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn node_density_matches_brute_force() {
        let mut rng = stream(13, Stream::Synth);
        let n = 12;
        let mut x = Mat::zeros(n, 3);
        for v in x.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut entries = Vec::new();
        for i in 0..n as u32 {
            entries.push((i, i, 1.0));
            let j = rng.gen_range(0..n) as u32;
            if j != i {
                entries.push((j, i, rng.gen_range(0.2..1.0)));
            }
        }
        entries.sort_by_key(|&(i, k, _)| (i, k));
        entries.dedup_by_key(|e| (e.0, e.1));
        let h = incidence(n, n, &entries);
        let delta2 = 0.55;
        let got = node_density(&x, &h, delta2);

        // brute force: dense incidence scan for co-membership
        let mut dense = vec![vec![0.0f64; n]; n];
        for (i, k, q) in h.pattern().iter_entries() {
            dense[i][k] = h.values()[q];
        }
        let unit: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let norm = dot(x.row(i), x.row(i)).sqrt();
                x.row(i).iter().map(|v| v / norm).collect()
            })
            .collect();
        for i in 0..n {
            let mut want = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let share = (0..n).any(|k| dense[i][k] > 0.0 && dense[j][k] > 0.0);
                if !share {
                    continue;
                }
                let sim = 0.5 * (1.0 + dot(&unit[i], &unit[j]));
                if sim > delta2 {
                    want += sim;
                }
            }
            assert!((got[i] - want).abs() < 1e-12, "node {i}: {} vs {want}", got[i]);
        }
    }

    #[test]
    fn node_density_monotone_in_delta2() {
        let mut rng = stream(17, Stream::Synth);
        let n = 10;
        let mut x = Mat::zeros(n, 4);
        for v in x.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let entries: Vec<(u32, u32, f64)> = (0..n as u32)
            .flat_map(|i| {
                let j = (i + 1) % n as u32;
                [(i, i, 1.0), (j, i, 1.0)]
            })
            .collect();
        let h = incidence(n, n, &entries);
        let mut prev = node_density(&x, &h, 0.0);
        for step in 1..=10 {
            let cur = node_density(&x, &h, step as f64 * 0.1);
            for (p, c) in prev.iter().zip(cur.iter()) {
                assert!(*c <= *p + 1e-15);
            }
            prev = cur;
        }
    }

    #[test]
    fn hyperedge_density_examples() {
        let h = incidence(3, 2, &[(0, 0, 1.0), (1, 0, 0.5), (2, 1, 1.0)]);
        let rho_e = hyperedge_density(&[0.7, 0.2, 0.4], &h);
        assert!((rho_e[0] - 0.9).abs() < 1e-15);
        assert!((rho_e[1] - 0.4).abs() < 1e-15);

        let zero = hyperedge_density(&[0.0, 0.0, 0.0], &h);
        assert_eq!(zero, vec![0.0, 0.0]);
    }

    #[test]
    fn normalize_density_degenerate_and_range() {
        assert_eq!(normalize_density(&[3.0, 3.0, 3.0], 5.0), vec![0.0; 3]);
        let scaled = normalize_density(&[1.0, 3.0], 4.0);
        assert_eq!(scaled, vec![0.0, 4.0]);
        // non-positive cap clamps to zero
        assert_eq!(normalize_density(&[1.0, 3.0], -2.0), vec![0.0, 0.0]);
    }

    fn singleton_setup(g: &mut Graph) -> (Arc<Pattern>, TensorId, TensorId, TensorId) {
        let pat = Pattern::from_pairs(1, 1, vec![(0, 0)]);
        let x = g.constant(Mat::from_rows(&[&[0.7, -0.3]])).unwrap();
        let e = g.constant(Mat::from_rows(&[&[0.1, 0.4]])).unwrap();
        let alpha = g
            .constant(Mat::from_vec(4, 1, vec![0.3, -0.2, 0.5, 0.1]).unwrap())
            .unwrap();
        (pat, x, e, alpha)
    }

    #[test]
    fn vertex_attention_singleton_is_one() {
        let mut g = Graph::new();
        let (pat, x, e, alpha) = singleton_setup(&mut g);
        let da = vertex_attention(&mut g, &pat, x, e, alpha, None).unwrap();
        assert_eq!(g.value(da).as_slice(), &[1.0]);
    }

    #[test]
    fn vertex_attention_symmetric_members_split_evenly() {
        let mut g = Graph::new();
        let pat = Pattern::from_pairs(2, 1, vec![(0, 0), (1, 0)]);
        let x = g
            .constant(Mat::from_rows(&[&[0.5, 0.5], &[0.5, 0.5]]))
            .unwrap();
        let e = g.constant(Mat::from_rows(&[&[1.0, 0.0]])).unwrap();
        let alpha = g
            .constant(Mat::from_vec(4, 1, vec![0.3, -0.2, 0.5, 0.1]).unwrap())
            .unwrap();
        let da = vertex_attention(&mut g, &pat, x, e, alpha, Some(&[1.0, 1.0])).unwrap();
        assert_eq!(g.value(da).as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn vertex_attention_density_gap_closed_form() {
        let mut g = Graph::new();
        let pat = Pattern::from_pairs(2, 1, vec![(0, 0), (1, 0)]);
        let x = g
            .constant(Mat::from_rows(&[&[0.5, 0.5], &[0.5, 0.5]]))
            .unwrap();
        let e = g.constant(Mat::from_rows(&[&[1.0, 0.0]])).unwrap();
        let alpha = g
            .constant(Mat::from_vec(4, 1, vec![0.3, 0.2, 0.5, 0.1]).unwrap())
            .unwrap();
        // raw logits are equal and positive; densities {0, raw} normalize to
        // {0, delta} with delta = max raw logit
        let da = vertex_attention(&mut g, &pat, x, e, alpha, Some(&[0.0, 1.0])).unwrap();
        let xv = g.value(x);
        let raw = 0.3 * xv.get(0, 0) + 0.2 * xv.get(0, 1) + 0.5 * 1.0 + 0.1 * 0.0;
        let delta = raw; // LeakyReLU is identity for positive logits
        let want1 = (delta.exp()) / (1.0 + delta.exp());
        let got = g.value(da).as_slice();
        assert!((got[1] - want1).abs() < 1e-12);
        assert!((got[0] - (1.0 - want1)).abs() < 1e-12);
    }

    #[test]
    fn attention_columns_sum_to_one() {
        let mut rng = stream(31, Stream::Synth);
        let n = 8;
        let entries: Vec<(u32, u32)> = (0..n as u32)
            .flat_map(|i| {
                let j = (i + 3) % n as u32;
                let l = (i + 5) % n as u32;
                [(i, i), (j, i), (l, i)]
            })
            .collect();
        let pat = Pattern::from_pairs(n, n, entries);
        let mut g = Graph::new();
        let mut x = Mat::zeros(n, 3);
        for v in x.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut e = Mat::zeros(n, 3);
        for v in e.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let x_id = g.constant(x).unwrap();
        let e_id = g.constant(e).unwrap();
        let alpha = g
            .constant(Mat::from_vec(6, 1, vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.2]).unwrap())
            .unwrap();
        let rho: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
        let da = vertex_attention(&mut g, &pat, x_id, e_id, alpha, Some(&rho)).unwrap();
        let vals = g.value(da).as_slice();
        for k in 0..n {
            let total: f64 = pat.col_range(k).map(|p| vals[pat.col_entry(p).1]).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn equal_densities_match_no_density_exactly() {
        let mut rng = stream(37, Stream::Synth);
        let n = 6;
        let pat = Pattern::dense(n);
        let mut g = Graph::new();
        let mut x = Mat::zeros(n, 2);
        for v in x.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let e = x.clone();
        let x_id = g.constant(x).unwrap();
        let e_id = g.constant(e).unwrap();
        let alpha = g
            .constant(Mat::from_vec(4, 1, vec![0.4, -0.1, 0.2, 0.3]).unwrap())
            .unwrap();
        let plain = vertex_attention(&mut g, &pat, x_id, e_id, alpha, None).unwrap();
        let equal = vertex_attention(&mut g, &pat, x_id, e_id, alpha, Some(&vec![2.5; n])).unwrap();
        for (a, b) in g.value(plain).as_slice().iter().zip(g.value(equal).as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_and_cross_entropy_examples() {
        // perfect logits (margin 30) -> loss ~ 0
        let mut g = Graph::new();
        let logits = g
            .constant(Mat::from_rows(&[&[30.0, -30.0], &[-30.0, 30.0]]))
            .unwrap();
        let z = classify(&mut g, logits).unwrap();
        let loss = cross_entropy(&mut g, z, &[(0, 0), (1, 1)]).unwrap();
        assert!(g.scalar(loss).abs() < 1e-10);

        // uniform logits, one labeled node, 10 classes -> ln 10
        let mut g2 = Graph::new();
        let logits2 = g2.constant(Mat::zeros(3, 10)).unwrap();
        let z2 = classify(&mut g2, logits2).unwrap();
        let loss2 = cross_entropy(&mut g2, z2, &[(1, 4)]).unwrap();
        assert!((g2.scalar(loss2) - 10.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_scalar_loop() {
        let mut rng = stream(41, Stream::Synth);
        let (n, c) = (4, 3);
        let mut logits = Mat::zeros(n, c);
        for v in logits.as_mut_slice() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let labeled = vec![(0usize, 2usize), (2, 0), (3, 1)];
        let mut g = Graph::new();
        let l_id = g.constant(logits.clone()).unwrap();
        let z = classify(&mut g, l_id).unwrap();
        let loss = cross_entropy(&mut g, z, &labeled).unwrap();

        let mut want = 0.0;
        for &(i, y) in &labeled {
            let row = logits.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let p = (row[y] - max).exp() / total;
            want -= p.ln();
        }
        assert!((g.scalar(loss) - want).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_empty_labeled_set() {
        let mut g = Graph::new();
        let logits = g.constant(Mat::zeros(2, 2)).unwrap();
        let z = classify(&mut g, logits).unwrap();
        assert!(cross_entropy(&mut g, z, &[]).is_err());
    }

    #[test]
    fn multi_head_duplicated_heads_duplicate_output() {
        let mut rng = stream(43, Stream::ParamInit);
        let n = 5;
        let pat = Pattern::dense(n);
        let head = AttentionHead::new(&mut rng, 3, 2);
        let mut g = Graph::new();
        let mut x = Mat::zeros(n, 3);
        for v in x.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let e = x.clone();
        let x_id = g.constant(x).unwrap();
        let e_id = g.constant(e).unwrap();
        let mk = |g: &mut Graph, h: &AttentionHead| -> HeadIds {
            (
                g.constant(h.w.clone()).unwrap(),
                g.constant(h.alpha_x.clone()).unwrap(),
                g.constant(h.alpha_e.clone()).unwrap(),
            )
        };
        let ids1 = mk(&mut g, &head);
        let (single, _) = multi_head(&mut g, &pat, x_id, e_id, &[ids1], None).unwrap();
        let ids_a = mk(&mut g, &head);
        let ids_b = mk(&mut g, &head);
        let (double, _) = multi_head(&mut g, &pat, x_id, e_id, &[ids_a, ids_b], None).unwrap();
        let s = g.value(single).clone();
        let d = g.value(double);
        assert_eq!(d.cols(), 2 * s.cols());
        for r in 0..n {
            assert_eq!(&d.row(r)[..s.cols()], s.row(r));
            assert_eq!(&d.row(r)[s.cols()..], s.row(r));
        }
    }
}
