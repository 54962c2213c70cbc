//! One function per CLI subcommand. Each writes its artifacts and returns a
//! [`Report`] listing any invariant violations it observed.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use bridgekit_core::analysis::{self, ESTIMATE_SLACK};
use bridgekit_core::bridge::sample_zt;
use bridgekit_core::domains::{translate_pipeline, ToyWorld};
use bridgekit_core::encoder::{self, build_endpoint, patch_features, toy_image_pair, PcaProjector};
use bridgekit_core::model::{self, moving_average, Example, LossPoint, VelocityNet};
use bridgekit_core::rng::{self, BridgeRng};
use bridgekit_core::sampler::{self, Trajectory};
use bridgekit_core::vector::distance;
use bridgekit_core::{Schedule, ScheduleKind, VelocityField};
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, FieldSpec};
use crate::output::{to_json, OutputDir, Table};
use crate::store::{self, ProjectorMeta};

/// Outcome of a command: a JSON summary and the violated invariants, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: serde_json::Value,
    pub violations: Vec<String>,
}

impl Report {
    fn new(summary: serde_json::Value) -> Self {
        Self {
            summary,
            violations: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, message: impl FnOnce() -> String) {
        if !ok {
            self.violations.push(message());
        }
    }
}

/// Stream index offsets keep the random draws of different purposes apart.
const PAIR_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1 << 32;
const HELD_OUT_STREAM: u64 = 2 << 32;

pub type BoxedField = Box<dyn VelocityField + Send>;

/// The velocity field sampling runs against, per `[field]`.
pub fn target_field(cfg: &ExperimentConfig) -> Result<BoxedField> {
    match &cfg.field {
        FieldSpec::Oracle => Ok(Box::new(
            cfg.world
                .oracle_field(cfg.target(), cfg.schedule())
                .context("the oracle field needs an affine target map")?,
        )),
        FieldSpec::Model { checkpoint } => {
            let net = store::load_model(checkpoint)?;
            ensure!(
                net.config().dim == cfg.world.latent_dim,
                "checkpoint latent dimension {} does not match the world ({})",
                net.config().dim,
                cfg.world.latent_dim
            );
            ensure!(
                net.schedule().kind() == cfg.schedule,
                "checkpoint was trained with schedule {:?}, config asks for {:?}",
                net.schedule().kind(),
                cfg.schedule
            );
            Ok(Box::new(net))
        }
    }
}

fn pairs(cfg: &ExperimentConfig) -> Result<Vec<bridgekit_core::domains::Pair>> {
    Ok(cfg
        .world
        .sample_pairs(cfg.analysis.count, cfg.seed.wrapping_add(PAIR_STREAM))?)
}

fn encode(cfg: &ExperimentConfig, x: &[f64], k: usize) -> Result<Vec<f64>> {
    let mut r = rng::stream(cfg.seed, NOISE_STREAM + k as u64);
    Ok(cfg
        .analysis
        .encoder
        .encode(&cfg.world, x, cfg.analysis.source, &mut r)?)
}

fn prepare(cfg: &ExperimentConfig) -> Result<OutputDir> {
    let out = OutputDir::create(&cfg.output)?;
    out.echo_config(cfg)?;
    Ok(out)
}

/// Writes `summary.json` and returns the report.
fn finish(out: &OutputDir, mut report: Report) -> Result<Report> {
    if let serde_json::Value::Object(map) = &mut report.summary {
        map.insert("invariant_violations".into(), json!(report.violations));
    }
    out.json("summary.json", &report.summary)?;
    Ok(report)
}

pub fn schedule_dump(kind: ScheduleKind, points: usize) -> Result<Table> {
    ensure!(points >= 2, "need at least two points");
    let s = Schedule::new(kind)?;
    let mut table = Table::new([
        "t",
        "alpha",
        "beta",
        "gamma",
        "alpha_dot",
        "beta_dot",
        "gamma_dot",
        "clamped",
    ]);
    for k in 0..points {
        let t = k as f64 / (points - 1) as f64;
        let w = s.eval(t)?;
        let r = s.eval_derivatives(t)?;
        table
            .row()
            .float(t)
            .floats(&[w.alpha, w.beta, w.gamma, r.alpha_dot, r.beta_dot, r.gamma_dot])
            .int(u8::from(r.clamped));
    }
    Ok(table)
}

fn training_example(cfg: &ExperimentConfig, world: &ToyWorld, rng: &mut BridgeRng) -> Example {
    let (src, tgt) = (cfg.analysis.source, cfg.target());
    let pair = world.draw(rng);
    let endpoint = cfg
        .analysis
        .encoder
        .encode(world, &pair.x[src], src, rng)
        .expect("domain maps are validated invertible");
    let condition = (cfg.model.cond_dim > 0).then(|| pair.x[src].clone());
    Example {
        z0: pair.x[tgt].clone(),
        endpoint,
        condition,
    }
}

/// Root-mean-square velocity gap per coordinate on held-out bridge states.
pub fn oracle_rmse(cfg: &ExperimentConfig, net: &VelocityNet) -> Result<Option<f64>> {
    let Ok(oracle) = cfg.world.oracle_field(cfg.target(), cfg.schedule()) else {
        return Ok(None);
    };
    let schedule = cfg.schedule();
    let mut r = rng::stream(cfg.seed, HELD_OUT_STREAM);
    let mut sq = 0.0;
    let mut n = 0usize;
    for ti in 1..=9 {
        let t = ti as f64 / 10.0;
        for _ in 0..32 {
            let ex = training_example(cfg, &cfg.world, &mut r);
            let eps = rng::normal_vec(&mut r, cfg.world.latent_dim);
            let (z, _) = sample_zt(&ex.z0, &ex.endpoint, t, &schedule, &eps)?;
            let a = net.velocity(t, &z, &ex.endpoint, None)?;
            let b = oracle.velocity(t, &z, &ex.endpoint, None)?;
            sq += a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            n += a.len();
        }
    }
    Ok(Some((sq / n as f64).sqrt()))
}

/// Moving-average check on the validation trace: windows of 100 training steps,
/// each at most 5% above the previous one.
pub fn loss_trend_violation(trace: &[LossPoint], eval_every: usize) -> Option<String> {
    let window = 100usize.div_ceil(eval_every).max(1);
    let ma = moving_average(trace, window);
    let sampled: Vec<(usize, f64)> = ma
        .iter()
        .enumerate()
        .skip(window - 1)
        .step_by(window)
        .map(|(i, v)| (trace[i].step, *v))
        .collect();
    sampled.windows(2).find(|w| w[1].1 > w[0].1 * 1.05).map(|w| {
        format!(
            "validation loss moving average rose from {} (step {}) to {} (step {})",
            w[0].1, w[0].0, w[1].1, w[1].0
        )
    })
}

pub fn train(cfg: &ExperimentConfig) -> Result<Report> {
    let out = prepare(cfg)?;
    let mut net = VelocityNet::new(&cfg.model, cfg.schedule())?;
    let data = |r: &mut BridgeRng| training_example(cfg, &cfg.world, r);
    let trace = model::train(&mut net, &data, &cfg.training)?;
    store::save_model(&net, &out.path("model.bin"))?;

    let window = 100usize.div_ceil(cfg.training.eval_every).max(1);
    let ma = moving_average(&trace, window);
    let mut table = Table::new(["step", "train_loss", "val_loss", "val_loss_ma"]);
    for (p, m) in trace.iter().zip(&ma) {
        table.row().int(p.step).float(p.train_loss).float(p.val_loss).float(*m);
    }
    out.csv("loss.csv", &table)?;

    let rmse = oracle_rmse(cfg, &net)?;
    let last = trace.last().context("training produced no evaluation points")?;
    let mut report = Report::new(json!({
        "command": "train",
        "steps": cfg.training.steps,
        "final_train_loss": last.train_loss,
        "final_val_loss": last.val_loss,
        "oracle_rmse": rmse,
        "checkpoint": "model.bin",
    }));
    if let Some(v) = loss_trend_violation(&trace, cfg.training.eval_every) {
        report.violations.push(v);
    }
    finish(&out, report)
}

fn run_reverse(field: &BoxedField, endpoint: &[f64], cfg: &ExperimentConfig, index: usize) -> Result<Trajectory> {
    if cfg.sampler.diffusion.is_zero() {
        Ok(sampler::reverse_ode(field, endpoint, &cfg.sampler)?)
    } else {
        Ok(sampler::reverse_sde(field, endpoint, &cfg.sampler, index as u64)?)
    }
}

pub fn sample(cfg: &ExperimentConfig, trajectories: bool) -> Result<Report> {
    let out = prepare(cfg)?;
    let field = target_field(cfg)?;
    let d = cfg.world.latent_dim;
    let tgt = cfg.target();
    let mut terminals = Table::new(
        ["sample".to_string()]
            .into_iter()
            .chain(Table::indexed("endpoint", d))
            .chain(Table::indexed("z", d))
            .chain(Table::indexed("truth", d)),
    );
    let mut states = Table::new(
        ["sample", "step", "t"]
            .into_iter()
            .map(String::from)
            .chain(Table::indexed("z", d)),
    );
    let mut errors = Vec::new();
    for (k, pair) in pairs(cfg)?.iter().enumerate() {
        let endpoint = encode(cfg, &pair.x[cfg.analysis.source], k)?;
        let tr = run_reverse(&field, &endpoint, cfg, k)?;
        errors.push(distance(tr.terminal(), &pair.x[tgt]));
        terminals
            .row()
            .int(k)
            .floats(&endpoint)
            .floats(tr.terminal())
            .floats(&pair.x[tgt]);
        if trajectories {
            for (step, (t, z)) in tr.states.iter().enumerate() {
                states.row().int(k).int(step).float(*t).floats(z);
            }
        }
    }
    out.csv("samples.csv", &terminals)?;
    if trajectories {
        out.csv("trajectories.csv", &states)?;
    }
    let report = Report::new(json!({
        "command": "sample",
        "count": errors.len(),
        "stochastic": !cfg.sampler.diffusion.is_zero(),
        "mean_distance_to_pair": errors.iter().sum::<f64>() / errors.len() as f64,
    }));
    finish(&out, report)
}

pub fn translate(cfg: &ExperimentConfig) -> Result<Report> {
    let out = prepare(cfg)?;
    let field = target_field(cfg)?;
    let d = cfg.world.latent_dim;
    let (src, tgt) = (cfg.analysis.source, cfg.target());
    let mixing = cfg.sampler.t_end < 1.0;
    let source_field = if mixing {
        Some(
            cfg.world
                .oracle_field(src, cfg.schedule())
                .context("drift mixing needs the source domain's exact field (affine source map)")?,
        )
    } else {
        None
    };
    let mut table = Table::new(
        ["sample".to_string(), "error".to_string()]
            .into_iter()
            .chain(Table::indexed("encoded", d))
            .chain(Table::indexed("output", d))
            .chain(Table::indexed("truth", d)),
    );
    let mut errors = Vec::new();
    for (k, pair) in pairs(cfg)?.iter().enumerate() {
        let (output, encoded) = if let Some(sf) = &source_field {
            let encoded = encode(cfg, &pair.x[src], k)?;
            let tr = sampler::translate(Some(sf), &field, &encoded, None, &cfg.sampler)?;
            (cfg.analysis.decoder.decode(&tr.latent), encoded)
        } else {
            let mut r = rng::stream(cfg.seed, NOISE_STREAM + k as u64);
            let res = translate_pipeline(
                &cfg.world,
                &field,
                &cfg.analysis.encoder,
                &cfg.analysis.decoder,
                pair,
                src,
                &cfg.sampler,
                &mut r,
            )?;
            (res.decoded, res.encoded)
        };
        let err = distance(&output, &pair.x[tgt]);
        errors.push(err);
        table
            .row()
            .int(k)
            .float(err)
            .floats(&encoded)
            .floats(&output)
            .floats(&pair.x[tgt]);
    }
    out.csv("translations.csv", &table)?;
    let report = Report::new(json!({
        "command": "translate",
        "count": errors.len(),
        "mixing": mixing,
        "mean_error": errors.iter().sum::<f64>() / errors.len() as f64,
        "max_error": errors.iter().copied().fold(0.0, f64::max),
    }));
    finish(&out, report)
}

pub fn invert(cfg: &ExperimentConfig) -> Result<Report> {
    let out = prepare(cfg)?;
    ensure!(
        cfg.sampler.diffusion.is_zero(),
        "inversion integrates the PF-ODE; set sampler.diffusion = 0"
    );
    let field = target_field(cfg)?;
    let d = cfg.world.latent_dim;
    let tgt = cfg.target();
    let mut table = Table::new(
        ["sample".to_string(), "round_trip_error".to_string()]
            .into_iter()
            .chain(Table::indexed("z0", d))
            .chain(Table::indexed("inverted", d))
            .chain(Table::indexed("reconstructed", d)),
    );
    let mut errors = Vec::new();
    for (k, pair) in pairs(cfg)?.iter().enumerate() {
        let endpoint = encode(cfg, &pair.x[cfg.analysis.source], k)?;
        let z0 = &pair.x[tgt];
        let zi = sampler::invert(&field, z0, &endpoint, &cfg.sampler)?;
        let back = sampler::reverse_ode_from(&field, &zi, &endpoint, None, &cfg.sampler)?;
        let err = distance(back.terminal(), z0);
        errors.push(err);
        table
            .row()
            .int(k)
            .float(err)
            .floats(z0)
            .floats(&zi)
            .floats(back.terminal());
    }
    out.csv("inversions.csv", &table)?;
    let report = Report::new(json!({
        "command": "invert",
        "count": errors.len(),
        "steps": cfg.sampler.steps,
        "mean_round_trip_error": errors.iter().sum::<f64>() / errors.len() as f64,
        "max_round_trip_error": errors.iter().copied().fold(0.0, f64::max),
    }));
    finish(&out, report)
}

/// Retina-filtered patch features of both renderings of toy scene `k`.
fn scene_features(cfg: &ExperimentConfig, k: u64) -> Result<[Vec<Vec<f64>>; 2]> {
    let e = &cfg.encoder;
    let (a, b) = toy_image_pair(e.image_size, &mut rng::stream(cfg.seed, k))?;
    Ok([
        patch_features(&e.filter.apply(&a)?, e.patch)?,
        patch_features(&e.filter.apply(&b)?, e.patch)?,
    ])
}

pub fn encoder_fit(cfg: &ExperimentConfig) -> Result<Report> {
    let out = prepare(cfg)?;
    let e = &cfg.encoder;
    let mut features = Vec::new();
    for k in 0..e.images as u64 {
        let [a, b] = scene_features(cfg, k)?;
        features.extend(a);
        features.extend(b);
    }
    let projector = PcaProjector::fit(&features, e.components)?;
    let meta = ProjectorMeta {
        filter: e.filter,
        patch: e.patch,
        image_size: e.image_size,
    };
    store::save_projector(&projector, &meta, &out.path("projector.bin"))?;

    let mut worst: f64 = 0.0;
    for (i, u) in projector.components.iter().enumerate() {
        for (j, v) in projector.components.iter().enumerate() {
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            worst = worst.max((dot - f64::from(u8::from(i == j))).abs());
        }
    }
    let mut table = Table::new(["component", "eigenvalue", "explained_variance_ratio"]);
    for (i, (l, r)) in projector
        .eigenvalues
        .iter()
        .zip(projector.explained_variance_ratio())
        .enumerate()
    {
        table.row().int(i).float(*l).float(r);
    }
    out.csv("components.csv", &table)?;
    let mut report = Report::new(json!({
        "command": "encoder fit",
        "samples": features.len(),
        "feature_dim": projector.dim(),
        "components": projector.rank(),
        "orthonormality_error": worst,
        "projector": "projector.bin",
    }));
    report.check(worst <= 1e-10, || {
        format!("projector components deviate from orthonormal by {worst}")
    });
    finish(&out, report)
}

pub fn encoder_apply(cfg: &ExperimentConfig, projector_path: &Path) -> Result<Report> {
    let out = prepare(cfg)?;
    let (projector, meta) = store::load_projector(projector_path)?;
    ensure!(
        meta.filter == cfg.encoder.filter
            && meta.patch == cfg.encoder.patch
            && meta.image_size == cfg.encoder.image_size,
        "projector was fitted with a different filter or patch layout"
    );
    let spec = &cfg.encoder.endpoint;
    let b = encoder::pool(&vec![0.0; projector.rank()], spec.pooling)?.len();
    let mut table = Table::new(
        ["image", "domain", "patch"]
            .into_iter()
            .map(String::from)
            .chain(Table::indexed("z", b)),
    );
    let mut per_domain: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for k in 0..cfg.analysis.count {
        let scene = scene_features(cfg, HELD_OUT_STREAM + k as u64)?;
        for (domain, feats) in scene.iter().enumerate() {
            let mut r = rng::stream(cfg.seed, NOISE_STREAM + (2 * k + domain) as u64);
            for (p, f) in feats.iter().enumerate() {
                let z = build_endpoint(f, &projector, spec, Some(&mut r))?;
                table.row().int(k).int(domain).int(p).floats(&z);
                per_domain[domain].push(z);
            }
        }
    }
    out.csv("endpoints.csv", &table)?;
    let n = per_domain[0].len();
    let knn = cfg.analysis.knn.min(n.saturating_sub(1)).max(1);
    let metrics = analysis::alignment_metrics(&per_domain[0], &per_domain[1], knn)?;
    let report = Report::new(json!({
        "command": "encoder apply",
        "images": cfg.analysis.count,
        "endpoints_per_domain": n,
        "endpoint_dim": b,
        "cross_domain_alignment": metrics,
        "knn": knn,
    }));
    finish(&out, report)
}

pub fn domains_dump(cfg: &ExperimentConfig) -> Result<Report> {
    let out = prepare(cfg)?;
    let d = cfg.world.latent_dim;
    let mut table = Table::new(
        ["pair".to_string()]
            .into_iter()
            .chain(Table::indexed("y", d))
            .chain(Table::indexed("x1", d))
            .chain(Table::indexed("x2", d)),
    );
    let list = pairs(cfg)?;
    let mut mismatch: f64 = 0.0;
    for (k, p) in list.iter().enumerate() {
        table.row().int(k).floats(&p.y).floats(&p.x[0]).floats(&p.x[1]);
        for dom in 0..2 {
            if cfg.world.is_noiseless(dom) {
                mismatch = mismatch.max(distance(&cfg.world.maps[dom].inverse(&p.x[dom])?, &p.y));
            }
        }
    }
    out.csv("pairs.csv", &table)?;

    #[derive(Serialize)]
    struct MapInfo {
        affine: bool,
        lipschitz: f64,
        inverse_lipschitz: f64,
        max_observed_stretch: f64,
    }
    let mut maps = Vec::new();
    let mut report_violations = Vec::new();
    for (i, m) in cfg.world.maps.iter().enumerate() {
        let (l, l_inv) = m.lipschitz();
        let mut stretch: f64 = 0.0;
        for w in list.windows(2) {
            let dy = distance(&w[0].y, &w[1].y);
            if dy > 0.0 {
                stretch = stretch.max(distance(&m.apply(&w[0].y), &m.apply(&w[1].y)) / dy);
            }
        }
        if stretch > l * (1.0 + 1e-12) {
            report_violations.push(format!(
                "map {i} stretches pairs by {stretch}, above its Lipschitz constant {l}"
            ));
        }
        maps.push(MapInfo {
            affine: m.is_affine(),
            lipschitz: l,
            inverse_lipschitz: l_inv,
            max_observed_stretch: stretch,
        });
    }
    let mut report = Report::new(json!({
        "command": "domains dump",
        "count": list.len(),
        "maps": maps,
        "shared_latent_error": mismatch,
    }));
    report.violations = report_violations;
    report.check(mismatch <= 1e-9, || {
        format!("oracle encoder misses the shared latent by {mismatch}")
    });
    finish(&out, report)
}

pub fn verify_bound(cfg: &ExperimentConfig) -> Result<Report> {
    if let FieldSpec::Model { .. } = cfg.field {
        bail!("verify-bound measures the field error against the exact field; set [field] kind = \"oracle\"");
    }
    let out = prepare(cfg)?;
    let (budgets, summary) = analysis::verify_bound(&cfg.world, cfg.schedule(), &cfg.sampler, &cfg.bound_experiment())?;
    let mut table = Table::new([
        "trial",
        "measured_total",
        "bound",
        "encoder_term",
        "field_term",
        "disc_term",
        "decoder_term",
        "encoder_error",
        "field_error_energy",
        "lipschitz_integral",
        "b_hat",
        "bound_holds",
        "holds_with_slack",
    ]);
    for b in &budgets {
        table
            .row()
            .int(b.trial)
            .floats(&[
                b.measured_total,
                b.bound(),
                b.encoder_term,
                b.field_term,
                b.disc_term,
                b.decoder_term,
                b.encoder_error,
                b.field_error_energy,
                b.lipschitz_integral,
                b.b_hat,
            ])
            .int(u8::from(b.bound_holds))
            .int(u8::from(b.holds_with_slack));
    }
    out.csv("budgets.csv", &table)?;
    let mut report = Report::new(json!({
        "command": "verify-bound",
        "trials": summary.trials,
        "violations": summary.violations,
        "violations_with_slack": summary.violations_with_slack,
        "violation_rate": summary.violation_rate,
        "allowed_rate": summary.allowed_rate,
        "stochastic": summary.stochastic,
        "passed": summary.passed,
        "max_ratio": summary.max_ratio,
        "slack": ESTIMATE_SLACK,
    }));
    report.check(summary.passed, || {
        format!(
            "bound violated in {} of {} trials (allowed rate {})",
            summary.violations, summary.trials, summary.allowed_rate
        )
    });
    finish(&out, report)
}

pub fn convergence(cfg: &ExperimentConfig) -> Result<Report> {
    let out = prepare(cfg)?;
    let field = target_field(cfg)?;
    let a = &cfg.analysis;
    let study = analysis::convergence_study(&field, &a.endpoint, &a.steps, &cfg.sampler, a.reference_steps, None)?;
    let mut table = Table::new(["steps", "tau", "error", "ratio_to_next"]);
    for (i, p) in study.points.iter().enumerate() {
        let ratio = study.points.get(i + 1).map_or(f64::NAN, |q| p.error / q.error);
        table.row().int(p.steps).float(p.tau).float(p.error).float(ratio);
    }
    out.csv("convergence.csv", &table)?;
    let mut report = Report::new(json!({
        "command": "convergence",
        "slope": study.slope,
        "intercept": study.intercept,
        "reference_steps": study.reference_steps,
    }));
    report.check((study.slope - 1.0).abs() <= 0.15, || {
        format!("log-log slope {} is outside 1.0 +- 0.15", study.slope)
    });
    finish(&out, report)
}

#[derive(Debug, Serialize)]
struct MetricsSummary {
    rows: usize,
    knn: usize,
    cosine_mean: f64,
    excluded: usize,
    cknna: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_cosine_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_cosim: Option<f64>,
}

/// Alignment of two feature sets, plus the gain over a source set when given.
pub fn metrics(a: &Path, b: &Path, source: Option<&Path>, knn: usize) -> Result<String> {
    let fa = crate::output::read_matrix(a)?;
    let fb = crate::output::read_matrix(b)?;
    let m = analysis::alignment_metrics(&fa, &fb, knn)?;
    let (source_cosine_mean, delta_cosim) = match source {
        Some(p) => {
            let fs = crate::output::read_matrix(p)?;
            let base = analysis::cosine_mean(&fs, &fb)?.0;
            (Some(base), Some(m.cosine_mean - base))
        }
        None => (None, None),
    };
    to_json(&MetricsSummary {
        rows: fa.len(),
        knn,
        cosine_mean: m.cosine_mean,
        excluded: m.excluded,
        cknna: m.cknna,
        source_cosine_mean,
        delta_cosim,
    })
}
