//! Joint optimization of the structure learner and the attention network.
//!
//! Each epoch rebuilds one computation graph: per-view similarities,
//! threshold, merge, blend; degree-normalized propagation; per-layer
//! density-aware attention; the combined loss `hgl + lambda * ce`; one Adam
//! step. Validation cross-entropy drives early stopping with patience, and
//! test accuracy is evaluated once, after restoring the parameters of the
//! best validation epoch. Test labels are not visible to the fitting loop:
//! it receives labels for the train and val sets only.

use std::sync::Arc;
use std::time::Instant;

use crate::attention::{classify, cross_entropy, AttentionNet, DensityProfile};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::hypergraph::{incidence_from_neighbor_lists, neighbor_lists, propagation_weights, Incidence};
use crate::mat::Mat;
use crate::pattern::Pattern;
use crate::rng::{stream, Stream};
use crate::structure::{
    candidate_pattern, hgl_loss, HglParams, StructureLearner, ViewConfig,
    DENSE_SIMILARITY_LIMIT,
};
use crate::tensor::{Graph, TensorId, EPS};

/// Optimization schedule and run bookkeeping.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub lr_halving_period: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            learning_rate: 0.01,
            lr_halving_period: 100,
            max_epochs: 2000,
            patience: 100,
            seed: 1,
            repeats: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.lr_halving_period == 0 || self.max_epochs == 0 || self.repeats == 0 {
            return Err(Error::config(
                "lr_halving_period, max_epochs and repeats must be positive",
            ));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::config(format!(
                "patience must be in 1..=max_epochs, got {} (max_epochs {})",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// Model architecture and hypergraph hyperparameters.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub views: Vec<ViewConfig>,
    pub hgl: HglParams,
    pub delta2: f64,
    pub heads: usize,
    pub hidden: usize,
    pub k: usize,
    pub candidate_k: usize,
    /// Off = the w/o-HGL ablation: the k-NN hypergraph is used as-is and no
    /// structure parameters exist.
    pub use_structure_learner: bool,
    /// Off = the w/o-density ablation: attention logits carry no density
    /// term.
    pub use_density: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.hgl.validate()?;
        if self.use_structure_learner && self.views.is_empty() {
            return Err(Error::config("at least one view is required"));
        }
        if !(0.0..1.0).contains(&self.delta2) {
            return Err(Error::config(format!("delta2 must be in [0,1), got {}", self.delta2)));
        }
        if self.heads == 0 || self.hidden == 0 || self.k == 0 {
            return Err(Error::config("heads, hidden and k must be positive"));
        }
        Ok(())
    }
}

/// Labels visible to the fitting loop: train and val only.
#[derive(Clone, Debug)]
pub struct LabeledSplits {
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<usize>,
}

impl LabeledSplits {
    pub fn new(ds: &Dataset, split: &Split) -> Result<Self> {
        split.validate(ds.n())?;
        if split.train.is_empty() || split.val.is_empty() {
            return Err(Error::config("train and val sets must be non-empty"));
        }
        Ok(LabeledSplits {
            train: split.train.iter().map(|&i| (i, ds.labels[i])).collect(),
            val: split.val.iter().map(|&i| (i, ds.labels[i])).collect(),
            test: split.test.clone(),
        })
    }
}

/// Dataset-fixed structures shared across runs: the k-NN hypergraph and the
/// similarity candidate pattern (which always contains it).
pub struct Prepared {
    pub x0: Mat,
    pub h0: Incidence,
    pub candidates: Arc<Pattern>,
}

pub fn prepare(features: &Mat, k: usize, candidate_k: usize) -> Result<Prepared> {
    let n = features.rows();
    if k >= n {
        return Err(Error::config(format!("k ({k}) must be below n ({n})")));
    }
    let (h0, candidates) = if n <= DENSE_SIMILARITY_LIMIT {
        let lists = neighbor_lists(features, k);
        (
            incidence_from_neighbor_lists(n, &lists)?,
            candidate_pattern(n, None),
        )
    } else {
        let reach = candidate_k.max(k).min(n - 1);
        let lists = neighbor_lists(features, reach);
        let knn: Vec<Vec<u32>> = lists.iter().map(|l| l[..k].to_vec()).collect();
        (
            incidence_from_neighbor_lists(n, &knn)?,
            candidate_pattern(n, Some(&lists)),
        )
    };
    Ok(Prepared {
        x0: features.clone(),
        h0,
        candidates,
    })
}

/// All trainable state.
pub struct Model {
    pub structure: Option<StructureLearner>,
    pub net: AttentionNet,
}

impl Model {
    pub fn new(
        mcfg: &ModelConfig,
        input_dim: usize,
        classes: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Self> {
        mcfg.validate()?;
        let structure = if mcfg.use_structure_learner {
            Some(StructureLearner::new(input_dim, &mcfg.views, rng)?)
        } else {
            None
        };
        let net = AttentionNet::new(rng, input_dim, mcfg.hidden, mcfg.heads, classes)?;
        Ok(Model { structure, net })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = Vec::new();
        if let Some(s) = self.structure.as_mut() {
            out.extend(s.params_mut());
        }
        out.extend(self.net.params_mut());
        out
    }

    pub fn snapshot(&mut self) -> Vec<Mat> {
        self.params_mut().into_iter().map(|m| m.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Mat]) {
        for (param, saved) in self.params_mut().into_iter().zip(snapshot) {
            *param = saved.clone();
        }
    }
}

/// Adam with bias correction; one state slot per parameter tensor.
pub struct Adam {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u32,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Adam {
            m: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_model(model: &mut Model) -> Self {
        let shapes: Vec<(usize, usize)> =
            model.params_mut().iter().map(|p| p.shape()).collect();
        Adam::new(&shapes)
    }

    pub fn step(&mut self, params: &mut [&mut Mat], grads: &[Mat], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "{} params / {} grads for {} state slots",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if param.shape() != grad.shape() || param.shape() != m.shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!("param {:?} vs grad {:?}", param.shape(), grad.shape()),
                ));
            }
            let pd = param.as_mut_slice();
            let gd = grad.as_slice();
            let md = m.as_mut_slice();
            let vd = v.as_mut_slice();
            for i in 0..pd.len() {
                let g = gd[i];
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * g;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * g * g;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// lr0 * 0.5^floor(epoch / period), epochs counted from 0.
pub fn lr_at(lr0: f64, epoch: usize, period: usize) -> f64 {
    lr0 * 0.5f64.powi((epoch / period) as i32)
}

/// One metrics row per epoch, in CSV column order.
#[derive(Clone, Debug)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_hgl: f64,
    pub loss_ce: f64,
    pub loss_con: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

impl EpochRow {
    pub const HEADER: &'static str =
        "epoch,lr,loss_total,loss_hgl,loss_ce,loss_con,val_loss,val_acc";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.loss_total,
            self.loss_hgl,
            self.loss_ce,
            self.loss_con,
            self.val_loss,
            self.val_acc
        )
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub test_accuracy: f64,
    pub seconds: f64,
    /// Loss decomposition at the best epoch, with lambda applied.
    pub best_row: EpochRow,
}

struct ForwardOutcome {
    g: Graph,
    z: TensorId,
    total: TensorId,
    param_ids: Vec<TensorId>,
    hgl_value: f64,
    ce_value: f64,
    con_value: f64,
}

fn forward(
    model: &Model,
    prepared: &Prepared,
    mcfg: &ModelConfig,
    lambda: f64,
    train_labels: &[(usize, usize)],
) -> Result<ForwardOutcome> {
    let mut g = Graph::new();
    let x0 = g.constant(prepared.x0.clone())?;

    let mut param_ids = Vec::new();
    let (pat_eff, h_eff_id, structure_out) = match &model.structure {
        Some(learner) => {
            let (sout, sids) =
                learner.forward(&mut g, x0, &prepared.candidates, &prepared.h0, &mcfg.hgl)?;
            param_ids.extend(sids);
            let h_vals = g.value(sout.h_tilde).as_slice().to_vec();
            let (pe, map) = prepared.candidates.filter(|q| h_vals[q] > 0.0);
            let map = Arc::new(map);
            let he = g.gather(sout.h_tilde, &map)?;
            (pe, he, Some(sout))
        }
        None => {
            let he = prepared.h0.to_graph_const(&mut g)?;
            (Arc::clone(prepared.h0.pattern()), he, None)
        }
    };

    // Message propagation into hyperedge and node features.
    let w = propagation_weights(&mut g, &pat_eff, h_eff_id)?;
    let e0 = g.agg_cols(w, x0, &pat_eff)?;
    let x = g.agg_rows(w, e0, &pat_eff)?;

    // Densities come from the propagated input features and stay out of the
    // gradient path.
    let density = if mcfg.use_density {
        let h_eff = Incidence::new(&pat_eff, g.value(h_eff_id).as_slice())?;
        let profile = DensityProfile::compute(g.value(x), &h_eff, mcfg.delta2);
        Some(profile)
    } else {
        None
    };

    let (logits, net_ids) = model
        .net
        .forward(&mut g, &pat_eff, x, e0, density.as_ref())?;
    param_ids.extend(net_ids);

    let z = classify(&mut g, logits)?;
    let ce = cross_entropy(&mut g, z, train_labels)?;
    let ce_value = g.scalar(ce);

    let (total, hgl_value, con_value) = match &structure_out {
        Some(sout) => {
            let hgl = hgl_loss(
                &mut g,
                &pat_eff,
                h_eff_id,
                sout.h_tilde,
                &sout.embeddings,
                sout.consistency,
                &mcfg.hgl,
            )?;
            let weighted_ce = g.scale(ce, lambda)?;
            let total = g.add(hgl, weighted_ce)?;
            (total, g.scalar(hgl), g.scalar(sout.consistency))
        }
        None => {
            let total = g.scale(ce, lambda)?;
            (total, 0.0, 0.0)
        }
    };

    Ok(ForwardOutcome {
        g,
        z,
        total,
        param_ids,
        hgl_value,
        ce_value,
        con_value,
    })
}

/// Negative log-likelihood of the given labeled rows under probabilities z.
fn nll(z: &Mat, labeled: &[(usize, usize)]) -> f64 {
    labeled
        .iter()
        .map(|&(i, y)| -z.get(i, y).max(EPS).ln())
        .sum()
}

/// Fraction of `index_set` whose argmax prediction matches `labels`; argmax
/// ties resolve to the lowest class index.
pub fn evaluate(z: &Mat, labels: &[usize], index_set: &[usize]) -> f64 {
    if index_set.is_empty() {
        return 0.0;
    }
    let correct = index_set
        .iter()
        .filter(|&&i| argmax(z.row(i)) == labels[i])
        .count();
    correct as f64 / index_set.len() as f64
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn accuracy_of_labeled(z: &Mat, labeled: &[(usize, usize)]) -> f64 {
    if labeled.is_empty() {
        return 0.0;
    }
    let correct = labeled
        .iter()
        .filter(|&&(i, y)| argmax(z.row(i)) == y)
        .count();
    correct as f64 / labeled.len() as f64
}

struct FitOutcome {
    rows: Vec<EpochRow>,
    best_epoch: usize,
    z_best: Mat,
}

/// The epoch loop. Only train/val labels are reachable from here.
fn fit(
    model: &mut Model,
    prepared: &Prepared,
    labeled: &LabeledSplits,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<FitOutcome> {
    let mut adam = Adam::for_model(model);
    let mut rows: Vec<EpochRow> = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.snapshot();
    let mut since_improve = 0usize;

    for epoch in 0..tcfg.max_epochs {
        let lr = lr_at(tcfg.learning_rate, epoch, tcfg.lr_halving_period);
        let mut out = forward(model, prepared, mcfg, tcfg.lambda, &labeled.train)?;
        let total_value = out.g.scalar(out.total);
        if !total_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                total: total_value,
                hgl: out.hgl_value,
                ce: out.ce_value,
            });
        }
        let val_loss = nll(out.g.value(out.z), &labeled.val);
        let val_acc = accuracy_of_labeled(out.g.value(out.z), &labeled.val);

        out.g.backward(out.total)?;
        let grads: Vec<Mat> = out
            .param_ids
            .iter()
            .map(|&id| match out.g.grad(id) {
                Some(m) => m.clone(),
                None => {
                    let v = out.g.value(id);
                    Mat::zeros(v.rows(), v.cols())
                }
            })
            .collect();
        drop(out.g);
        let mut params = model.params_mut();
        adam.step(&mut params, &grads, lr)?;

        rows.push(EpochRow {
            epoch,
            lr,
            loss_total: total_value,
            loss_hgl: out.hgl_value,
            loss_ce: out.ce_value,
            loss_con: out.con_value,
            val_loss,
            val_acc,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = model.snapshot();
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve >= tcfg.patience {
                break;
            }
        }
    }

    model.restore(&best_params);
    let out = forward(model, prepared, mcfg, tcfg.lambda, &labeled.train)?;
    let z_best = out.g.value(out.z).clone();
    Ok(FitOutcome {
        rows,
        best_epoch,
        z_best,
    })
}

/// Train one run end-to-end and evaluate test accuracy at the
/// best-validation checkpoint.
pub fn train(
    ds: &Dataset,
    split: &Split,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    run_seed: u64,
) -> Result<RunResult> {
    tcfg.validate()?;
    let prepared = prepare(&ds.features, mcfg.k, mcfg.candidate_k)?;
    train_prepared(ds, &prepared, split, mcfg, tcfg, run_seed)
}

/// As [`train`], reusing dataset-fixed structures across runs.
pub fn train_prepared(
    ds: &Dataset,
    prepared: &Prepared,
    split: &Split,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    run_seed: u64,
) -> Result<RunResult> {
    tcfg.validate()?;
    let started = Instant::now();
    let labeled = LabeledSplits::new(ds, split)?;
    let mut rng = stream(run_seed, Stream::ParamInit);
    let mut model = Model::new(mcfg, ds.dim(), ds.classes, &mut rng)?;
    let fit_out = fit(&mut model, prepared, &labeled, mcfg, tcfg)?;
    let test_accuracy = evaluate(&fit_out.z_best, &ds.labels, &labeled.test);
    let best_row = fit_out.rows[fit_out.best_epoch].clone();
    Ok(RunResult {
        epochs_run: fit_out.rows.len(),
        best_epoch: fit_out.best_epoch,
        rows: fit_out.rows,
        test_accuracy,
        seconds: started.elapsed().as_secs_f64(),
        best_row,
    })
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

pub fn format_mean_std(values: &[f64]) -> String {
    let (mean, std) = mean_std(values);
    format!("{mean:.2}\u{b1}{std:.2}")
}

/// Run `repeats` trainings with seeds `seed + 0 .. seed + repeats - 1`,
/// drawing a fresh split per run seed.
#[allow(clippy::too_many_arguments)]
pub fn repeat_runs(
    ds: &Dataset,
    train_count: usize,
    val_count: usize,
    stratified: bool,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<Vec<(u64, RunResult)>> {
    tcfg.validate()?;
    let prepared = prepare(&ds.features, mcfg.k, mcfg.candidate_k)?;
    let mut out = Vec::with_capacity(tcfg.repeats);
    for r in 0..tcfg.repeats {
        let run_seed = tcfg.seed + r as u64;
        let split = crate::data::make_splits(ds, train_count, val_count, run_seed, stratified)?;
        let result = train_prepared(ds, &prepared, &split, mcfg, tcfg, run_seed)?;
        log::info!(
            "run {r} (seed {run_seed}): test acc {:.4}, {} epochs, best {}",
            result.test_accuracy,
            result.epochs_run,
            result.best_epoch
        );
        out.push((run_seed, result));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::structure::Similarity;

    pub fn small_model_config() -> ModelConfig {
        ModelConfig {
            views: vec![
                ViewConfig {
                    similarity: Similarity::Cosine,
                    embedding_dim: 4,
                },
                ViewConfig {
                    similarity: Similarity::InnerProduct,
                    embedding_dim: 4,
                },
            ],
            hgl: HglParams::default(),
            delta2: 0.5,
            heads: 2,
            hidden: 4,
            k: 2,
            candidate_k: 8,
            use_structure_learner: true,
            use_density: true,
        }
    }

    fn small_train_config(max_epochs: usize) -> TrainConfig {
        TrainConfig {
            lambda: 1.0,
            learning_rate: 0.02,
            lr_halving_period: 100,
            max_epochs,
            patience: max_epochs.min(50),
            seed: 3,
            repeats: 1,
        }
    }

    #[test]
    fn adam_first_step_is_sign_scaled() {
        let mut p = Mat::from_vec(1, 1, vec![1.0]).unwrap();
        let g = Mat::from_vec(1, 1, vec![0.5]).unwrap();
        let mut adam = Adam::new(&[(1, 1)]);
        let mut params = vec![&mut p];
        adam.step(&mut params, &[g], 0.1).unwrap();
        // first-step update approaches -lr * g/|g|
        assert!((p.scalar() - 0.9).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_gradient_zero_update() {
        let mut p = Mat::from_vec(1, 2, vec![0.3, -0.7]).unwrap();
        let g = Mat::zeros(1, 2);
        let mut adam = Adam::new(&[(1, 2)]);
        for _ in 0..5 {
            let mut params = vec![&mut p];
            adam.step(&mut params, &[g.clone()], 0.1).unwrap();
        }
        assert_eq!(p.as_slice(), &[0.3, -0.7]);
    }

    #[test]
    fn adam_descends_quadratic_bowl() {
        let mut theta = Mat::from_vec(1, 1, vec![0.0]).unwrap();
        let mut adam = Adam::new(&[(1, 1)]);
        let mut losses = Vec::new();
        for _ in 0..100 {
            let t = theta.scalar();
            losses.push((t - 3.0) * (t - 3.0));
            let grad = Mat::from_vec(1, 1, vec![2.0 * (t - 3.0)]).unwrap();
            let mut params = vec![&mut theta];
            adam.step(&mut params, &[grad], 0.05).unwrap();
        }
        for w in losses[5..].windows(2) {
            assert!(w[1] < w[0], "loss must strictly decrease after step 5");
        }
    }

    #[test]
    fn adam_shape_mismatch_errors() {
        let mut p = Mat::zeros(2, 2);
        let g = Mat::zeros(1, 2);
        let mut adam = Adam::new(&[(2, 2)]);
        let mut params = vec![&mut p];
        assert!(adam.step(&mut params, &[g], 0.1).is_err());
    }

    #[test]
    fn lr_schedule_is_exact() {
        for (epoch, want) in [(0, 0.2), (99, 0.2), (100, 0.1), (199, 0.1), (200, 0.05)] {
            assert_eq!(lr_at(0.2, epoch, 100), want);
        }
    }

    #[test]
    fn evaluate_examples() {
        let z = Mat::from_rows(&[&[0.9, 0.1], &[0.2, 0.8]]);
        assert_eq!(evaluate(&z, &[0, 1], &[0, 1]), 1.0);

        // uniform rows tie-break to class 0
        let uniform = Mat::from_rows(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert_eq!(evaluate(&uniform, &[0, 0], &[0, 1]), 1.0);

        // scalar-loop oracle on random values
        let mut rng = stream(5, Stream::Synth);
        use rand::Rng;
        let mut z = Mat::zeros(20, 4);
        for v in z.as_mut_slice() {
            *v = rng.gen_range(0.0..1.0);
        }
        let labels: Vec<usize> = (0..20).map(|_| rng.gen_range(0..4)).collect();
        let idx: Vec<usize> = (0..20).collect();
        let got = evaluate(&z, &labels, &idx);
        let mut correct = 0;
        for i in 0..20 {
            let mut best = 0;
            for j in 1..4 {
                if z.get(i, j) > z.get(i, best) {
                    best = j;
                }
            }
            if best == labels[i] {
                correct += 1;
            }
        }
        assert_eq!(got, correct as f64 / 20.0);
    }

    #[test]
    fn mean_std_formatting() {
        assert_eq!(format_mean_std(&[0.9, 0.9, 0.9]), "0.90\u{b1}0.00");
        assert_eq!(format_mean_std(&[0.8, 1.0]), "0.90\u{b1}0.10");
        let (_, std) = mean_std(&[0.73]);
        assert_eq!(std, 0.0);
    }

    #[test]
    fn fixed_seed_runs_are_bitwise_identical() {
        let ds = synth_blobs(3, 10, 4, 0.15, 2).unwrap();
        let split = crate::data::make_splits(&ds, 6, 6, 7, true).unwrap();
        let mcfg = small_model_config();
        let tcfg = small_train_config(5);
        let a = train(&ds, &split, &mcfg, &tcfg, 42).unwrap();
        let b = train(&ds, &split, &mcfg, &tcfg, 42).unwrap();
        let series_a: Vec<u64> = a.rows.iter().map(|r| r.loss_total.to_bits()).collect();
        let series_b: Vec<u64> = b.rows.iter().map(|r| r.loss_total.to_bits()).collect();
        assert_eq!(series_a, series_b);
        assert_eq!(a.test_accuracy.to_bits(), b.test_accuracy.to_bits());
    }

    #[test]
    fn zero_weights_keep_parameters_fixed() {
        // lambda = 0 and all HGL weights = 0: the total gradient vanishes,
        // so parameters must not move.
        let ds = synth_blobs(2, 6, 3, 0.2, 4).unwrap();
        let split = crate::data::make_splits(&ds, 4, 4, 3, true).unwrap();
        let mut mcfg = small_model_config();
        mcfg.hgl.alpha = 0.0;
        mcfg.hgl.beta = 0.0;
        mcfg.hgl.gamma = 0.0;
        mcfg.hgl.mu = 0.0;
        let tcfg = TrainConfig {
            lambda: 0.0,
            max_epochs: 3,
            patience: 3,
            ..small_train_config(3)
        };
        let labeled = LabeledSplits::new(&ds, &split).unwrap();
        let prepared = prepare(&ds.features, mcfg.k, mcfg.candidate_k).unwrap();
        let mut rng = stream(9, Stream::ParamInit);
        let mut model = Model::new(&mcfg, ds.dim(), ds.classes, &mut rng).unwrap();
        let before = model.snapshot();
        fit(&mut model, &prepared, &labeled, &mcfg, &tcfg).unwrap();
        let after = model.snapshot();
        for (b, a) in before.iter().zip(after.iter()) {
            assert_eq!(b.as_slice(), a.as_slice());
        }
    }

    #[test]
    fn early_stopping_respects_patience_and_cap() {
        let ds = synth_blobs(3, 8, 4, 0.1, 6).unwrap();
        let split = crate::data::make_splits(&ds, 6, 6, 5, true).unwrap();
        let mcfg = small_model_config();
        let tcfg = TrainConfig {
            patience: 4,
            max_epochs: 60,
            ..small_train_config(60)
        };
        let r = train(&ds, &split, &mcfg, &tcfg, 11).unwrap();
        assert!(r.epochs_run <= 60);
        // stop happens within `patience` epochs of the last improvement
        let best_val = r
            .rows
            .iter()
            .map(|row| row.val_loss)
            .fold(f64::INFINITY, f64::min);
        let last_improve = r
            .rows
            .iter()
            .position(|row| row.val_loss == best_val)
            .unwrap();
        assert!(r.epochs_run <= last_improve + tcfg.patience + 1);
    }

    #[test]
    fn lambda_zero_records_ce_without_weighting() {
        let ds = synth_blobs(2, 6, 3, 0.2, 8).unwrap();
        let split = crate::data::make_splits(&ds, 4, 4, 2, true).unwrap();
        let mcfg = small_model_config();
        let tcfg = TrainConfig {
            lambda: 0.0,
            ..small_train_config(3)
        };
        let r = train(&ds, &split, &mcfg, &tcfg, 5).unwrap();
        for row in &r.rows {
            assert!(row.loss_ce > 0.0, "ce recorded");
            assert!((row.loss_total - row.loss_hgl).abs() < 1e-12, "total excludes ce");
        }
    }

    #[test]
    fn ablation_modes_run() {
        let ds = synth_blobs(3, 8, 4, 0.1, 12).unwrap();
        let split = crate::data::make_splits(&ds, 6, 6, 4, true).unwrap();
        let tcfg = small_train_config(4);

        let mut no_hgl = small_model_config();
        no_hgl.use_structure_learner = false;
        let r = train(&ds, &split, &no_hgl, &tcfg, 3).unwrap();
        assert!(r.rows.iter().all(|row| row.loss_hgl == 0.0));

        let mut no_density = small_model_config();
        no_density.use_density = false;
        let r2 = train(&ds, &split, &no_density, &tcfg, 3).unwrap();
        assert_eq!(r2.rows.len(), 4);
    }
}
