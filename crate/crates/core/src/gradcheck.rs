//! Finite-difference verification of the analytic gradients.
//!
//! Three suites, each run over independent randomly seeded trials:
//!
//! * `gar_grad`: `∂U/∂B` on random nonnegative `B`, every entry probed (step 1e-6).
//! * `supervised_backward`: cross-entropy parameter gradients through a small
//!   dropout network with frozen masks (step 1e-5).
//! * `gar_batch_objective`: parameter gradients of `U(g(X))` through the whole
//!   pipeline, rectifier included (step 1e-5).
//!
//! A central difference is meaningless across a ReLU kink, so a network probe
//! whose activation pattern differs between `θ + h` and `θ − h` is discarded
//! and another coordinate is drawn.

use crate::error::Result;
use crate::gar::{gar_batch_objective, gar_grad, gar_loss, GarConfig};
use crate::matrix::Matrix;
use crate::network::{
    softmax_cross_entropy, ForwardCache, LayerSpec, Mode, Network, ParamRef,
};
use crate::parallel;
use crate::rng::Rng;

pub const REL_GUARD: f64 = 1e-8;
pub const THRESHOLD: f64 = 1e-4;
pub const STEP_B: f64 = 1e-6;
pub const STEP_PARAMS: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_GUARD)
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub trials: usize,
    pub probes_per_trial: usize,
    /// Test hook: added to every analytic value before comparison.
    pub perturb: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            trials: 100,
            probes_per_trial: 20,
            perturb: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub trial: usize,
    pub coordinate: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub probes: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub worst: Option<Probe>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < THRESHOLD
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub suites: Vec<SuiteReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }
}

#[derive(Default)]
struct TrialOutcome {
    probes: Vec<Probe>,
    skipped: usize,
}

fn summarize(name: &'static str, trials: usize, outcomes: Vec<Result<TrialOutcome>>) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        name,
        trials,
        probes: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for outcome in outcomes {
        let outcome = outcome?;
        report.skipped_kinks += outcome.skipped;
        report.probes += outcome.probes.len();
        for p in outcome.probes {
            // NaN must surface as a failure
            if !(p.rel_error <= report.max_rel_error) {
                report.max_rel_error = if p.rel_error.is_nan() { f64::INFINITY } else { p.rel_error };
                report.worst = Some(p);
            }
        }
    }
    Ok(report)
}

pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    Ok(GradcheckReport {
        suites: vec![
            check_gar_grad(cfg)?,
            check_supervised(cfg)?,
            check_gar_pipeline(cfg)?,
        ],
    })
}

fn trial_rng(cfg: &GradcheckConfig, suite: u64, trial: usize) -> Rng {
    Rng::new(cfg.seed ^ (suite << 56), trial as u64)
}

pub fn check_gar_grad(cfg: &GradcheckConfig) -> Result<SuiteReport> {
    let outcomes = parallel::map_range(cfg.trials, |trial| {
        let mut rng = trial_rng(cfg, 1, trial);
        let b = Matrix::from_fn(8, 4, |_, _| rng.uniform(0.0, 1.0));
        let gar = GarConfig::default();
        let analytic = gar_grad(&b, &gar)?;
        let mut out = TrialOutcome::default();
        for r in 0..b.rows() {
            for i in 0..b.cols() {
                let mut plus = b.clone();
                plus.set(r, i, b.get(r, i) + STEP_B);
                let mut minus = b.clone();
                minus.set(r, i, b.get(r, i) - STEP_B);
                let numeric =
                    (gar_loss(&plus, &gar)?.total - gar_loss(&minus, &gar)?.total) / (2.0 * STEP_B);
                let a = analytic.get(r, i) + cfg.perturb;
                out.probes.push(Probe {
                    trial,
                    coordinate: format!("B[{r},{i}]"),
                    analytic: a,
                    numeric,
                    rel_error: relative_error(a, numeric),
                });
            }
        }
        Ok(out)
    });
    summarize("gar_grad", cfg.trials, outcomes)
}

/// Sign pattern of every pre-activation a central difference must not cross.
fn activity_pattern(cache: &ForwardCache, include_output: bool) -> Vec<bool> {
    let depth = cache.depth();
    let layers = if include_output { depth } else { depth - 1 };
    (0..layers)
        .flat_map(|l| cache.pre_activation(l).as_slice().iter().map(|&z| z > 0.0))
        .collect()
}

fn random_net(rng: &mut Rng, input_dim: usize, specs: &[LayerSpec]) -> Result<Network> {
    let mut net = Network::new(input_dim, specs, rng)?;
    for layer in net.layers_mut() {
        layer.bias = layer.bias.map(|_| rng.uniform(-0.2, 0.5));
    }
    Ok(net)
}

/// Probes `count` coordinates of `net`, redrawing any that straddle a kink.
fn probe_params<F>(
    net: &Network,
    analytic: &crate::network::Gradients,
    count: usize,
    trial: usize,
    perturb: f64,
    rng: &mut Rng,
    eval: F,
) -> Result<TrialOutcome>
where
    F: Fn(&Network) -> Result<(f64, Vec<bool>)>,
{
    let refs: Vec<ParamRef> = net.param_refs();
    let (_, base_pattern) = eval(net)?;
    let mut out = TrialOutcome::default();
    let mut attempts = 0;
    while out.probes.len() < count && attempts < count * 20 {
        attempts += 1;
        let p = refs[rng.below_usize(refs.len())];
        let mut plus = net.clone();
        *plus.param_mut(p) += STEP_PARAMS;
        let mut minus = net.clone();
        *minus.param_mut(p) -= STEP_PARAMS;
        let (fp, pat_p) = eval(&plus)?;
        let (fm, pat_m) = eval(&minus)?;
        if pat_p != base_pattern || pat_m != base_pattern {
            out.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * STEP_PARAMS);
        let a = analytic.get(p) + perturb;
        out.probes.push(Probe {
            trial,
            coordinate: p.to_string(),
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    Ok(out)
}

pub fn check_supervised(cfg: &GradcheckConfig) -> Result<SuiteReport> {
    let specs = [
        LayerSpec::relu(8, 0.2),
        LayerSpec::relu(6, 0.2),
        LayerSpec::linear(3),
    ];
    let outcomes = parallel::map_range(cfg.trials, |trial| {
        let mut rng = trial_rng(cfg, 2, trial);
        let net = random_net(&mut rng, 5, &specs)?;
        let x = Matrix::from_fn(10, 5, |_, _| rng.normal());
        let labels: Vec<usize> = (0..10).map(|_| rng.below_usize(3)).collect();
        let mask_seed = rng.next_u64();
        let eval = |n: &Network| -> Result<(f64, Vec<bool>)> {
            let mut masks = Rng::new(mask_seed, 0);
            let (z, cache) = n.forward(&x, Mode::Train(&mut masks))?;
            let (loss, _) = softmax_cross_entropy(&z, &labels)?;
            Ok((loss, activity_pattern(&cache, false)))
        };
        let mut masks = Rng::new(mask_seed, 0);
        let (z, cache) = net.forward(&x, Mode::Train(&mut masks))?;
        let (_, dz) = softmax_cross_entropy(&z, &labels)?;
        let analytic = net.backward(&cache, &dz)?;
        probe_params(&net, &analytic, cfg.probes_per_trial, trial, cfg.perturb, &mut rng, eval)
    });
    summarize("supervised_backward", cfg.trials, outcomes)
}

pub fn check_gar_pipeline(cfg: &GradcheckConfig) -> Result<SuiteReport> {
    let specs = [LayerSpec::relu(8, 0.0), LayerSpec::linear(4)];
    let outcomes = parallel::map_range(cfg.trials, |trial| {
        let mut rng = trial_rng(cfg, 3, trial);
        let net = random_net(&mut rng, 5, &specs)?;
        let x = Matrix::from_fn(12, 5, |_, _| rng.normal());
        let gar = GarConfig::default();
        let eval = |n: &Network| -> Result<(f64, Vec<bool>)> {
            let (b, cache) = n.gar_head(&x)?;
            Ok((gar_loss(&b, &gar)?.total, activity_pattern(&cache, true)))
        };
        let (_, analytic) = gar_batch_objective(&net, &x, &gar)?;
        probe_params(&net, &analytic, cfg.probes_per_trial, trial, cfg.perturb, &mut rng, eval)
    });
    summarize("gar_batch_objective", cfg.trials, outcomes)
}
