//! Experiment orchestration: run repeats, ablations, and parameter sweeps;
//! write metrics and summary CSVs.
//!
//! Every run writes `config.resolved` with the full effective parameter set;
//! re-running from that file reproduces the outputs byte for byte (runs are
//! deterministic regardless of worker count, but `HYPERDUAL_THREADS=1` is
//! the documented single-threaded mode). Output files are written to a
//! temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::config::{ExperimentConfig, RunMode};
use crate::data::{make_splits, Dataset};
use crate::error::{Error, Result};
use crate::trainer::{self, format_mean_std, prepare, EpochRow, Prepared, RunResult};

pub const THREADS_ENV: &str = "HYPERDUAL_THREADS";

/// Effective worker count: the smaller of `--jobs` and `HYPERDUAL_THREADS`.
pub fn effective_jobs(requested: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(usize::MAX);
    requested.max(1).min(cap)
}

/// Bounded deterministic parallel map: results are ordered by index no
/// matter how workers interleave.
fn parallel_map<T, F>(count: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if jobs <= 1 || count <= 1 {
        return (0..count).map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<T>>> = (0..count).map(|_| None).collect();
    let slot_refs: Vec<_> = slots.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(count) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= count {
                    break;
                }
                let out = f(i);
                *slot_refs[i].lock().unwrap() = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("worker filled every slot"))
        .collect()
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn metrics_csv(rows: &[EpochRow]) -> String {
    let mut s = String::with_capacity(rows.len() * 64);
    s.push_str(EpochRow::HEADER);
    s.push('\n');
    for row in rows {
        s.push_str(&row.to_csv());
        s.push('\n');
    }
    s
}

fn summary_csv(results: &[(u64, RunResult)]) -> String {
    let mut s = String::from("run,seed,best_epoch,epochs_run,test_acc,seconds\n");
    for (r, (seed, res)) in results.iter().enumerate() {
        let _ = writeln!(
            s,
            "{r},{seed},{},{},{},{:.2}",
            res.best_epoch, res.epochs_run, res.test_accuracy, res.seconds
        );
    }
    let accs: Vec<f64> = results.iter().map(|(_, r)| r.test_accuracy).collect();
    let _ = writeln!(s, "summary,,,,{},", format_mean_std(&accs));
    s
}

/// Execute the configured repeats for one pipeline mode. Per-run seeds are
/// `seed + run_index`; each run draws its own split.
pub fn execute(
    ds: &Dataset,
    prepared: &Prepared,
    cfg: &ExperimentConfig,
    mode: RunMode,
    jobs: usize,
) -> Result<Vec<(u64, RunResult)>> {
    let mcfg = cfg.model_config(mode)?;
    let tcfg = cfg.train_config();
    tcfg.validate()?;
    let results = parallel_map(tcfg.repeats, effective_jobs(jobs), |r| {
        let run_seed = tcfg.seed + r as u64;
        let split = make_splits(ds, cfg.train_count, cfg.val_count, run_seed, cfg.stratified)?;
        let res = trainer::train_prepared(ds, prepared, &split, &mcfg, &tcfg, run_seed)?;
        log::info!(
            "{mode} run {r} (seed {run_seed}): acc {:.4} in {} epochs",
            res.test_accuracy,
            res.epochs_run
        );
        Ok((run_seed, res))
    })?;
    Ok(results)
}

fn ensure_out_dir(out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    Ok(())
}

fn write_run_files(
    out_dir: &Path,
    tag: &str,
    results: &[(u64, RunResult)],
) -> Result<()> {
    for (r, (_, res)) in results.iter().enumerate() {
        let name = if tag.is_empty() {
            format!("metrics_run{r}.csv")
        } else {
            format!("metrics_{tag}_run{r}.csv")
        };
        write_atomic(&out_dir.join(name), &metrics_csv(&res.rows))?;
    }
    Ok(())
}

/// `train`: run the full pipeline, write metrics/summary CSVs, return the
/// formatted `mean±std` accuracy line.
pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<String> {
    ensure_out_dir(out_dir)?;
    write_atomic(&out_dir.join("config.resolved"), &cfg.to_resolved_string())?;
    let ds = cfg.load_dataset()?;
    let prepared = prepare(&ds.features, cfg.k, cfg.candidate_k)?;
    let results = execute(&ds, &prepared, cfg, RunMode::Full, jobs)?;
    write_run_files(out_dir, "", &results)?;
    write_atomic(&out_dir.join("summary.csv"), &summary_csv(&results))?;
    let accs: Vec<f64> = results.iter().map(|(_, r)| r.test_accuracy).collect();
    Ok(format_mean_std(&accs))
}

/// `ablate`: run one pipeline variant; rows carry the mode so outputs from
/// different modes concatenate into a comparison table.
pub fn cmd_ablate(
    cfg: &ExperimentConfig,
    mode: RunMode,
    out_dir: &Path,
    jobs: usize,
) -> Result<String> {
    ensure_out_dir(out_dir)?;
    write_atomic(&out_dir.join("config.resolved"), &cfg.to_resolved_string())?;
    let ds = cfg.load_dataset()?;
    let prepared = prepare(&ds.features, cfg.k, cfg.candidate_k)?;
    let results = execute(&ds, &prepared, cfg, mode, jobs)?;
    write_run_files(out_dir, &mode.to_string(), &results)?;

    let mut s = String::from("mode,run,seed,test_acc\n");
    for (r, (seed, res)) in results.iter().enumerate() {
        let _ = writeln!(s, "{mode},{r},{seed},{}", res.test_accuracy);
    }
    let accs: Vec<f64> = results.iter().map(|(_, r)| r.test_accuracy).collect();
    let _ = writeln!(s, "{mode},summary,,{}", format_mean_std(&accs));
    write_atomic(&out_dir.join(format!("ablation_{mode}.csv")), &s)?;
    Ok(format_mean_std(&accs))
}

/// Sweepable hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    Views,
    Delta1,
    Eta,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "views" => Ok(SweepParam::Views),
            "delta1" => Ok(SweepParam::Delta1),
            "eta" => Ok(SweepParam::Eta),
            other => Err(Error::config(format!(
                "unknown sweep parameter `{other}` (expected lambda|views|delta1|eta)"
            ))),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Views => "views",
            SweepParam::Delta1 => "delta1",
            SweepParam::Eta => "eta",
        })
    }
}

/// `sweep`: one summary row per value of the chosen parameter.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[String],
    out_dir: &Path,
    jobs: usize,
) -> Result<String> {
    if values.is_empty() {
        return Err(Error::config("sweep: empty value list"));
    }
    ensure_out_dir(out_dir)?;
    write_atomic(&out_dir.join("config.resolved"), &cfg.to_resolved_string())?;
    let ds = cfg.load_dataset()?;
    let prepared = prepare(&ds.features, cfg.k, cfg.candidate_k)?;

    let name = match param {
        SweepParam::Lambda => "lambda",
        SweepParam::Views => "views",
        SweepParam::Delta1 => "delta1",
        SweepParam::Eta => "eta",
    };
    let mut s = format!("{name},mean_acc,std_acc,mean_std\n");
    for raw in values {
        let mut point = cfg.clone();
        match param {
            SweepParam::Lambda => {
                point.lambda = raw
                    .parse()
                    .map_err(|e| Error::config(format!("sweep value `{raw}`: {e}")))?
            }
            SweepParam::Views => {
                point.views = raw
                    .parse()
                    .map_err(|e| Error::config(format!("sweep value `{raw}`: {e}")))?
            }
            SweepParam::Delta1 => {
                point.delta1 = raw
                    .parse()
                    .map_err(|e| Error::config(format!("sweep value `{raw}`: {e}")))?
            }
            SweepParam::Eta => {
                point.eta = raw
                    .parse()
                    .map_err(|e| Error::config(format!("sweep value `{raw}`: {e}")))?
            }
        }
        point.model_config(RunMode::Full)?.validate()?;
        let results = execute(&ds, &prepared, &point, RunMode::Full, jobs)?;
        let accs: Vec<f64> = results.iter().map(|(_, r)| r.test_accuracy).collect();
        let (mean, std) = trainer::mean_std(&accs);
        let _ = writeln!(s, "{raw},{mean},{std},{}", format_mean_std(&accs));
        log::info!("sweep {name}={raw}: {}", format_mean_std(&accs));
    }
    let path = out_dir.join(format!("sweep_{name}.csv"));
    write_atomic(&path, &s)?;
    Ok(path.display().to_string())
}

pub fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn synth_cfg(extra: &str) -> ExperimentConfig {
        let text = format!(
            "dataset = synth\nsynth_classes = 3\nsynth_per_class = 10\nsynth_dim = 4\n\
             synth_spread = 0.15\ntrain_count = 6\nval_count = 6\nembed_dim = 4\n\
             hidden = 4\nk = 3\nmax_epochs = 5\npatience = 5\nrepeats = 2\nseed = 7\n{extra}"
        );
        let map: BTreeMap<String, String> = crate::config::parse_kv(&text, "test").unwrap();
        ExperimentConfig::from_map(&map).unwrap()
    }

    fn tmp(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("hyperdual_runner_{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn train_writes_expected_files() {
        let cfg = synth_cfg("");
        let out = tmp("train");
        let line = cmd_train(&cfg, &out, 1).unwrap();
        assert!(line.contains('\u{b1}'));
        assert!(out.join("config.resolved").exists());
        assert!(out.join("metrics_run0.csv").exists());
        assert!(out.join("metrics_run1.csv").exists());
        let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
        assert!(summary.starts_with("run,seed,best_epoch"));
        assert!(summary.trim_end().ends_with(','));
        assert_eq!(summary.lines().count(), 1 + 2 + 1);
    }

    #[test]
    fn resolved_config_reproduces_outputs() {
        let cfg = synth_cfg("");
        let out1 = tmp("resolve1");
        cmd_train(&cfg, &out1, 1).unwrap();
        let resolved = out1.join("config.resolved");
        let cfg2 = ExperimentConfig::load(&resolved, &[]).unwrap();
        let out2 = tmp("resolve2");
        cmd_train(&cfg2, &out2, 1).unwrap();
        for name in ["metrics_run0.csv", "metrics_run1.csv", "summary.csv"] {
            let a = std::fs::read(out1.join(name)).unwrap();
            let b = std::fs::read(out2.join(name)).unwrap();
            assert_eq!(a, b, "{name} must be byte-identical");
        }
    }

    #[test]
    fn ablate_full_equals_train() {
        let cfg = synth_cfg("");
        let out_t = tmp("abl_t");
        let out_a = tmp("abl_a");
        cmd_train(&cfg, &out_t, 1).unwrap();
        cmd_ablate(&cfg, RunMode::Full, &out_a, 1).unwrap();
        let a = std::fs::read(out_t.join("metrics_run0.csv")).unwrap();
        let b = std::fs::read(out_a.join("metrics_full_run0.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_writes_one_row_per_value() {
        let cfg = synth_cfg("");
        let out = tmp("sweep");
        cmd_sweep(
            &cfg,
            SweepParam::Eta,
            &["0.0".to_string(), "1.0".to_string()],
            &out,
            1,
        )
        .unwrap();
        let text = std::fs::read_to_string(out.join("sweep_eta.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("eta,"));
    }

    #[test]
    fn sweep_empty_values_is_config_error() {
        let cfg = synth_cfg("");
        let out = tmp("sweep_empty");
        let err = cmd_sweep(&cfg, SweepParam::Lambda, &[], &out, 1).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn parallel_map_preserves_order() {
        let got = parallel_map(8, 4, |i| Ok::<usize, Error>(i * i)).unwrap();
        assert_eq!(got, vec![0, 1, 4, 9, 16, 25, 36, 49]);
    }

    #[test]
    fn jobs_parallel_matches_serial() {
        let cfg = synth_cfg("");
        let out1 = tmp("jobs1");
        let out2 = tmp("jobs2");
        cmd_train(&cfg, &out1, 1).unwrap();
        cmd_train(&cfg, &out2, 2).unwrap();
        let a = std::fs::read(out1.join("summary.csv")).unwrap();
        let b = std::fs::read(out2.join("summary.csv")).unwrap();
        assert_eq!(a, b);
    }
}
