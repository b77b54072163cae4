//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use gar::checkpoint;
use gar::data::{blob_centers, center_samples, load_mnist_dir, partition, sample_blobs, Dataset};
use gar::gradcheck::{self, GradcheckConfig, GradcheckReport};
use gar::graph::{self, biregularity_report, GraphReport, ReportOptions};
use gar::kv;
use gar::network::Network;
use gar::training::{run_pipeline, PipelineInputs, PipelineOutcome};
use gar::Rng;

use crate::config::{DatasetKind, ExperimentConfig};

const DATA_STREAM: u64 = 0xda7a;
const INIT_STREAM: u64 = 0x1417;
const SAMPLE_STREAM: u64 = 0x5a3e;

/// Files `run` writes into the output directory.
pub const RUN_FILES: [&str; 7] = [
    "config.txt",
    "trainlog.csv",
    "pretrain.ckpt",
    "best.ckpt",
    "embedding_epoch0.csv",
    "embedding_final.csv",
    "summary.txt",
];

pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    let (mut train, mut test) = match cfg.dataset {
        DatasetKind::Blobs => {
            let b = &cfg.blobs;
            let mut rng = Rng::new(cfg.seed, DATA_STREAM);
            let centers = blob_centers(b.classes, b.dim, b.separation, &mut rng);
            let train = sample_blobs(&centers, b.per_class, b.noise, &mut rng, "blobs-train")?;
            let test = sample_blobs(&centers, b.test_per_class, b.noise, &mut rng, "blobs-test")?;
            (train, test)
        }
        DatasetKind::Mnist => load_mnist_dir(&cfg.mnist_dir)
            .with_context(|| format!("loading MNIST from {}", cfg.mnist_dir.display()))?,
    };
    if cfg.center {
        train.x = center_samples(&train.x);
        test.x = center_samples(&test.x);
    }
    Ok(Data { train, test })
}

pub fn build_network(cfg: &ExperimentConfig, input_dim: usize) -> Result<Network> {
    let mut rng = Rng::new(cfg.seed, INIT_STREAM);
    Ok(Network::new(input_dim, &cfg.layer_specs()?, &mut rng)?)
}

/// Contents of `summary.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dataset: String,
    pub seed: u64,
    pub pretrain_selected_epoch: usize,
    pub selected_epoch: usize,
    pub baseline_error: f64,
    pub final_error: f64,
    pub alpha_epoch0: f64,
    pub beta_epoch0: f64,
    pub alpha_selected: f64,
    pub beta_selected: f64,
}

impl RunSummary {
    pub fn relative_reduction(&self) -> f64 {
        if self.baseline_error > 0.0 {
            1.0 - self.final_error / self.baseline_error
        } else {
            0.0
        }
    }

    pub fn render(&self) -> String {
        let f = |x: f64| format!("{x:?}");
        let mut s = format!(
            "# Pretraining (Baseline): {:.2}% test error\n# Pretraining + GAR:      {:.2}% test error\n",
            100.0 * self.baseline_error,
            100.0 * self.final_error
        );
        s.push_str(&kv::render(&[
            ("dataset", self.dataset.clone()),
            ("seed", self.seed.to_string()),
            ("pretrain_selected_epoch", self.pretrain_selected_epoch.to_string()),
            ("selected_epoch", self.selected_epoch.to_string()),
            ("baseline_error", f(self.baseline_error)),
            ("final_error", f(self.final_error)),
            ("relative_reduction", f(self.relative_reduction())),
            ("alpha_epoch0", f(self.alpha_epoch0)),
            ("beta_epoch0", f(self.beta_epoch0)),
            ("alpha_selected", f(self.alpha_selected)),
            ("beta_selected", f(self.beta_selected)),
        ]));
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = kv::parse(text)?;
        let get = |k: &str| -> Result<&str> {
            entries
                .iter()
                .find(|e| e.key == k)
                .map(|e| e.value.as_str())
                .with_context(|| format!("summary is missing {k}"))
        };
        let float = |k: &str| -> Result<f64> { get(k)?.parse().with_context(|| format!("summary field {k}")) };
        let int = |k: &str| -> Result<usize> { get(k)?.parse().with_context(|| format!("summary field {k}")) };
        Ok(RunSummary {
            dataset: get("dataset")?.to_string(),
            seed: get("seed")?.parse().context("summary field seed")?,
            pretrain_selected_epoch: int("pretrain_selected_epoch")?,
            selected_epoch: int("selected_epoch")?,
            baseline_error: float("baseline_error")?,
            final_error: float("final_error")?,
            alpha_epoch0: float("alpha_epoch0")?,
            beta_epoch0: float("beta_epoch0")?,
            alpha_selected: float("alpha_selected")?,
            beta_selected: float("beta_selected")?,
        })
    }
}

fn summarize(cfg: &ExperimentConfig, out: &PipelineOutcome) -> Result<RunSummary> {
    let records = &out.unsup.log.records;
    let at = |epoch: usize| {
        records
            .iter()
            .find(|r| r.epoch == epoch)
            .context("selected epoch missing from the log")
    };
    let (first, chosen) = (at(0)?, at(out.unsup.best_epoch)?);
    Ok(RunSummary {
        dataset: cfg.dataset.name().to_string(),
        seed: cfg.seed,
        pretrain_selected_epoch: out.pretrain.best_epoch,
        selected_epoch: out.unsup.best_epoch,
        baseline_error: out.baseline_error.context("no test set")?,
        final_error: out.final_error.context("no test set")?,
        alpha_epoch0: first.alpha.unwrap_or(f64::NAN),
        beta_epoch0: first.beta.unwrap_or(f64::NAN),
        alpha_selected: chosen.alpha.unwrap_or(f64::NAN),
        beta_selected: chosen.beta.unwrap_or(f64::NAN),
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn export_head(net: &Network, ds: &Dataset, path: &Path) -> Result<()> {
    let (b, _) = net.gar_head(&ds.x)?;
    graph::export_embedding(&b, ds.y.as_deref(), path)?;
    Ok(())
}

/// Runs both training phases and writes [`RUN_FILES`] into `cfg.output_dir`.
pub fn cmd_run(cfg: &ExperimentConfig, progress: &mut dyn Write) -> Result<RunSummary> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_file(&dir.join("config.txt"), &cfg.render())?;

    let data = load_data(cfg)?;
    let split = partition(&data.train, &cfg.split_spec())?;
    let net = build_network(cfg, data.train.dim())?;
    writeln!(
        progress,
        "{}: {} train / {} test, m_L={}, validation={}, {} parameters",
        cfg.dataset.name(),
        data.train.len(),
        data.test.len(),
        split.t_l.len(),
        split.t_val.len(),
        net.num_params()
    )?;
    let unsup = cfg.unsup_config()?;
    let test_labels = data.test.labels()?;
    let inputs = PipelineInputs {
        x_l: &split.x_l,
        t_l: &split.t_l,
        x_u: &split.x_u,
        val: (!split.t_val.is_empty()).then_some((&split.x_val, split.t_val.as_slice())),
        test: Some((&data.test.x, test_labels)),
    };
    let out = run_pipeline(net, &inputs, &cfg.pretrain_config(), &unsup)?;

    out.log.write_csv(dir.join("trainlog.csv"))?;
    checkpoint::save(&out.pretrain.best, dir.join("pretrain.ckpt"))?;
    checkpoint::save(&out.unsup.best, dir.join("best.ckpt"))?;
    export_head(&out.pretrain.best, &data.test, &dir.join("embedding_epoch0.csv"))?;
    export_head(&out.unsup.last, &data.test, &dir.join("embedding_final.csv"))?;
    let summary = summarize(cfg, &out)?;
    write_file(&dir.join("summary.txt"), &summary.render())?;
    writeln!(
        progress,
        "baseline {:.2}% (pretrain epoch {}), GAR {:.2}% (unsup epoch {}), artifacts in {}",
        100.0 * summary.baseline_error,
        summary.pretrain_selected_epoch,
        100.0 * summary.final_error,
        summary.selected_epoch,
        dir.display()
    )?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct DiagnoseOptions {
    pub checkpoint: PathBuf,
    pub sample: usize,
    /// Defaults to the checkpoint's directory.
    pub output_dir: Option<PathBuf>,
}

/// Paths `diagnose` writes for a checkpoint named `<stem>.ckpt`.
pub fn diagnose_paths(opts: &DiagnoseOptions) -> (PathBuf, String) {
    let dir = opts.output_dir.clone().unwrap_or_else(|| {
        opts.checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    });
    let stem = opts
        .checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    (dir, stem)
}

/// Graph report for a checkpoint on a seeded sample of the test set.
pub fn cmd_diagnose(cfg: &ExperimentConfig, opts: &DiagnoseOptions, out: &mut dyn Write) -> Result<GraphReport> {
    ensure!(opts.sample > 0, "sample must be at least 1");
    let net = checkpoint::load(&opts.checkpoint)?;
    let data = load_data(cfg)?;
    let test = &data.test;
    if net.input_dim() != test.dim() || net.n_classes() != test.n_classes {
        bail!(
            "checkpoint/model mismatch: {} expects {} inputs and {} classes, dataset has {} and {}",
            opts.checkpoint.display(),
            net.input_dim(),
            net.n_classes(),
            test.dim(),
            test.n_classes
        );
    }
    ensure!(
        opts.sample <= test.len(),
        "sample {} exceeds the {} test examples",
        opts.sample,
        test.len()
    );
    let mut idx = Rng::new(cfg.seed, SAMPLE_STREAM).sample_distinct(test.len(), opts.sample);
    idx.sort_unstable();
    let sample = test.subset(&idx);
    let (b, _) = net.gar_head(&sample.x)?;
    let report = biregularity_report(&b, &ReportOptions::default())?;

    let (dir, stem) = diagnose_paths(opts);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    if let Some(m) = &report.m_matrix {
        graph::write_matrix_csv(m, dir.join(format!("{stem}_M.csv")))?;
    }
    graph::write_matrix_csv(&report.n_matrix, dir.join(format!("{stem}_N.csv")))?;
    graph::export_embedding(&b, sample.y.as_deref(), dir.join(format!("{stem}_embedding.csv")))?;
    let text = report.to_key_value();
    write_file(&dir.join(format!("{stem}_report.txt")), &text)?;
    out.write_all(text.as_bytes())?;
    Ok(report)
}

fn print_gradcheck(report: &GradcheckReport, cfg: &GradcheckConfig, out: &mut dyn Write) -> Result<()> {
    if cfg.trials == 0 {
        writeln!(out, "warning: trials=0, nothing was checked")?;
    }
    for s in &report.suites {
        writeln!(
            out,
            "{:<22} trials={} probes={} skipped_kinks={} max_rel_error={:.3e} {}",
            s.name,
            s.trials,
            s.probes,
            s.skipped_kinks,
            s.max_rel_error,
            if s.passed() { "ok" } else { "FAIL" }
        )?;
        if !s.passed() {
            if let Some(p) = &s.worst {
                writeln!(
                    out,
                    "  worst: trial {} {} analytic={:e} numeric={:e} rel={:e}",
                    p.trial, p.coordinate, p.analytic, p.numeric, p.rel_error
                )?;
            }
        }
    }
    Ok(())
}

/// Runs the finite-difference suites; `Ok(true)` iff every error is below the threshold.
pub fn cmd_gradcheck(cfg: &GradcheckConfig, out: &mut dyn Write) -> Result<bool> {
    let report = gradcheck::run(cfg)?;
    print_gradcheck(&report, cfg, out)?;
    Ok(report.passed())
}
