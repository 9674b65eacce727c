use std::path::{Path, PathBuf};

use crate::convergence::{audit_assumptions, measure_contraction, smoothing_audit};
use crate::entanglement::{spectral_certificate, EntangledGraph};
use crate::error::{GraceError, Result};
use crate::feature_context::{
    generate_sample, project_and_assemble, DatasetManifest, Label, SequenceSample, Split,
};
use crate::gcn::{
    evaluate, gcn_layer, mean_feature_l1, train, Ablation, BaselineModel, Checkpoint, Classifier,
    GraceModel, TrainState,
};
use crate::harness::config::ExperimentConfig;
use crate::harness::reports::{
    read_json, write_json, write_text, ConvergenceReport, Divergence, EvalReport, EvalRow,
    HyperReport, HyperRow, SpectralReport, TrainReport, REPORT_VERSION,
};
use crate::numerics::Matrix;

pub const BASELINE_NAME: &str = "baseline";

/// Output locations under the run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn model_dir(&self, model: &str) -> PathBuf {
        self.root.join("models").join(model)
    }

    pub fn checkpoint(&self, model: &str) -> PathBuf {
        self.model_dir(model).join("checkpoint.json")
    }

    pub fn sweep_json(&self) -> PathBuf {
        self.root.join("sweep.json")
    }

    pub fn sweep_csv(&self) -> PathBuf {
        self.root.join("sweep.csv")
    }

    pub fn hyper(&self, axis: HyperAxis, ext: &str) -> PathBuf {
        self.root.join(format!("hyper_{}.{ext}", axis.name()))
    }

    pub fn audit_dir(&self) -> PathBuf {
        self.root.join("audit")
    }
}

fn load_manifest(layout: &Layout) -> Result<DatasetManifest> {
    let path = layout.manifest();
    if !path.exists() {
        return Err(GraceError::MissingInput {
            what: "dataset manifest",
            path: path.display().to_string(),
            hint: "gen-data",
        });
    }
    DatasetManifest::read(&path)
}

fn build_manifest(cfg: &ExperimentConfig) -> Result<DatasetManifest> {
    DatasetManifest::build(
        &cfg.generator,
        cfg.n_samples,
        cfg.seed,
        cfg.train.train_m_r,
        cfg.train_mask_mode,
    )
}

/// Writes the dataset manifest; returns its path.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let manifest = build_manifest(cfg)?;
    let layout = Layout::new(&cfg.output_dir);
    let path = layout.manifest();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| GraceError::io(parent, e))?;
    }
    manifest.write(&path)?;
    Ok(path)
}

fn materialize(manifest: &DatasetManifest, split: Split) -> Result<Vec<SequenceSample>> {
    manifest
        .split(split)
        .iter()
        .map(|e| e.materialize(&manifest.generator))
        .collect()
}

fn check_generator(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<()> {
    if manifest.generator != cfg.generator || manifest.seed != cfg.seed {
        return Err(GraceError::InvalidArgument(
            "manifest was generated from a different generator config or seed; rerun gen-data"
                .into(),
        ));
    }
    Ok(())
}

struct Data {
    manifest: DatasetManifest,
    train: Vec<SequenceSample>,
    val: Vec<SequenceSample>,
}

impl Data {
    fn from_manifest(manifest: DatasetManifest) -> Result<Self> {
        Ok(Self {
            train: materialize(&manifest, Split::Train)?,
            val: materialize(&manifest, Split::Val)?,
            manifest,
        })
    }
}

fn test_row<C: Classifier>(
    cfg: &ExperimentConfig,
    data: &Data,
    name: &str,
    model: &C,
) -> Result<EvalRow> {
    let mode = cfg.eval_modes[0];
    let m = evaluate(
        model,
        &data.manifest.generator,
        &data.manifest.split(Split::Test),
        0.0,
        mode,
    )?;
    Ok(EvalRow::new(
        name,
        0.0,
        mode,
        &m,
        cfg.seed,
        &cfg.fingerprint(),
    ))
}

fn fit<C>(
    cfg: &ExperimentConfig,
    data: &Data,
    name: &str,
    kind: &str,
    init: C,
    resume: bool,
) -> Result<(C, TrainState)>
where
    C: Classifier + serde::Serialize + serde::de::DeserializeOwned + PartialEq + Clone,
{
    let layout = Layout::new(&cfg.output_dir);
    let ck_path = layout.checkpoint(name);
    let (mut model, state) = if resume && ck_path.exists() {
        let ck: Checkpoint<C> = Checkpoint::read(&ck_path)?;
        if ck.kind != kind {
            return Err(GraceError::InvalidArgument(format!(
                "checkpoint {} holds a {} model, expected {kind}",
                ck_path.display(),
                ck.kind
            )));
        }
        if ck.config_fingerprint != cfg.training_fingerprint() {
            return Err(GraceError::InvalidArgument(format!(
                "checkpoint {} was trained under a different configuration",
                ck_path.display()
            )));
        }
        (ck.model, ck.state)
    } else {
        let state = TrainState::fresh(&init);
        (init, state)
    };
    let state = train(&mut model, &data.train, &data.val, &cfg.train, state)?;
    let ck = Checkpoint {
        version: crate::gcn::CHECKPOINT_VERSION,
        kind: kind.to_string(),
        model: model.clone(),
        state: state.clone(),
        train: cfg.train.clone(),
        config_fingerprint: cfg.training_fingerprint(),
    };
    let dir = layout.model_dir(name);
    std::fs::create_dir_all(&dir).map_err(|e| GraceError::io(&dir, e))?;
    ck.write(&ck_path)?;
    write_text(&dir.join("trace.csv"), &state.trace.epochs_csv())?;
    write_text(&dir.join("steps.csv"), &state.trace.steps_csv())?;
    Ok((model, state))
}

fn train_report(
    cfg: &ExperimentConfig,
    name: &str,
    state: &TrainState,
    test: EvalRow,
    feature_l1: Option<f64>,
) -> TrainReport {
    TrainReport {
        version: REPORT_VERSION,
        model: name.to_string(),
        epochs: state.epochs_done,
        optimizer_steps: state.adam.t,
        final_train_loss: state.trace.epochs.last().map(|e| e.train_loss),
        test,
        feature_l1,
        seed: cfg.seed,
        config_fingerprint: cfg.fingerprint(),
    }
}

/// Trains every configured GRACE variant and the baseline; returns the written report paths.
pub fn train_models(cfg: &ExperimentConfig, resume: bool) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    let manifest = load_manifest(&layout)?;
    check_generator(cfg, &manifest)?;
    let data = Data::from_manifest(manifest)?;
    let mut written = Vec::new();

    for &ablation in &cfg.ablations {
        let name = ablation.name();
        let hyper = cfg.hyper.clone().with_ablation(ablation);
        let init = GraceModel::init(cfg.generator.c_in, hyper, cfg.model_seed())?;
        let (model, state) = fit(cfg, &data, name, "grace", init, resume)?;
        let l1 = mean_feature_l1(&model, &data.train)?;
        let report = train_report(
            cfg,
            name,
            &state,
            test_row(cfg, &data, name, &model)?,
            Some(l1),
        );
        let path = layout.model_dir(name).join("test_eval.json");
        write_json(&path, &report)?;
        written.push(path);
    }
    if cfg.baseline {
        let init =
            BaselineModel::init(cfg.generator.c_in, cfg.hyper.channels, cfg.baseline_seed())?;
        let (model, state) = fit(cfg, &data, BASELINE_NAME, BASELINE_NAME, init, resume)?;
        let report = train_report(
            cfg,
            BASELINE_NAME,
            &state,
            test_row(cfg, &data, BASELINE_NAME, &model)?,
            None,
        );
        let path = layout.model_dir(BASELINE_NAME).join("test_eval.json");
        write_json(&path, &report)?;
        written.push(path);
    }
    Ok(written)
}

fn load_checkpoint<M: serde::de::DeserializeOwned + serde::Serialize>(
    layout: &Layout,
    name: &str,
) -> Result<Checkpoint<M>> {
    let path = layout.checkpoint(name);
    if !path.exists() {
        return Err(GraceError::MissingInput {
            what: "checkpoint",
            path: path.display().to_string(),
            hint: "train",
        });
    }
    Checkpoint::read(&path)
}

fn sweep_rows<C: Classifier>(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    name: &str,
    model: &C,
    rows: &mut Vec<EvalRow>,
) -> Result<()> {
    let test = manifest.split(Split::Test);
    let fp = cfg.fingerprint();
    for &m_r in &cfg.eval_m_r_list {
        for &mode in &cfg.eval_modes {
            let m = evaluate(model, &manifest.generator, &test, m_r, mode)?;
            rows.push(EvalRow::new(name, m_r, mode, &m, cfg.seed, &fp));
        }
    }
    Ok(())
}

/// Evaluates every trained variant over the masking-ratio list and both modes.
pub fn sweep(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    let manifest = load_manifest(&layout)?;
    check_generator(cfg, &manifest)?;
    let mut rows = Vec::new();
    for &ablation in &cfg.ablations {
        let ck: Checkpoint<GraceModel> = load_checkpoint(&layout, ablation.name())?;
        ck.model.validate()?;
        sweep_rows(cfg, &manifest, ablation.name(), &ck.model, &mut rows)?;
    }
    if cfg.baseline {
        let ck: Checkpoint<BaselineModel> = load_checkpoint(&layout, BASELINE_NAME)?;
        sweep_rows(cfg, &manifest, BASELINE_NAME, &ck.model, &mut rows)?;
    }
    let report = EvalReport {
        version: REPORT_VERSION,
        seed: cfg.seed,
        config_fingerprint: cfg.fingerprint(),
        rows,
    };
    write_json(&layout.sweep_json(), &report)?;
    write_text(&layout.sweep_csv(), &report.csv())?;
    Ok(report)
}

/// Swept hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HyperAxis {
    /// Frames per sequence.
    N,
    GN,
    Alpha,
    GDim,
    NOut,
}

impl HyperAxis {
    pub fn name(self) -> &'static str {
        match self {
            HyperAxis::N => "N",
            HyperAxis::GN => "g_n",
            HyperAxis::Alpha => "alpha",
            HyperAxis::GDim => "g_dim",
            HyperAxis::NOut => "n_out",
        }
    }

    /// Applies one axis value to a copy of the config.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut out = cfg.clone();
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(GraceError::InvalidArgument(format!(
                    "axis {} needs a positive integer, got {value}",
                    self.name()
                )))
            }
        };
        match self {
            HyperAxis::N => out.generator.n_frames = count()?,
            HyperAxis::GN => out.hyper.g_n = count()?,
            HyperAxis::GDim => out.hyper.g_dim = count()?,
            HyperAxis::NOut => out.hyper.n_out = count()?,
            HyperAxis::Alpha => out.hyper.alpha = value,
        }
        out.validate()?;
        Ok(out)
    }
}

impl std::str::FromStr for HyperAxis {
    type Err = GraceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "N" | "n" | "frames" => Ok(HyperAxis::N),
            "g_n" => Ok(HyperAxis::GN),
            "alpha" => Ok(HyperAxis::Alpha),
            "g_dim" => Ok(HyperAxis::GDim),
            "n_out" => Ok(HyperAxis::NOut),
            other => Err(GraceError::InvalidArgument(format!(
                "unknown hyperparameter axis `{other}` (expected N, g_n, alpha, g_dim or n_out)"
            ))),
        }
    }
}

/// Trains one GRACE model per axis value and evaluates it; data are rebuilt from the config.
pub fn hyper_sweep(cfg: &ExperimentConfig, axis: HyperAxis, values: &[f64]) -> Result<HyperReport> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(GraceError::InvalidArgument(
            "hyper-sweep needs at least one value".into(),
        ));
    }
    let ablation = cfg.ablations.first().copied().unwrap_or(Ablation::Full);
    let mut rows = Vec::new();
    for &value in values {
        let point = axis.apply(cfg, value)?;
        let data = Data::from_manifest(build_manifest(&point)?)?;
        let hyper = point.hyper.clone().with_ablation(ablation);
        let mut model = GraceModel::init(point.generator.c_in, hyper, point.model_seed())?;
        let state = TrainState::fresh(&model);
        train(&mut model, &data.train, &data.val, &point.train, state)?;
        let l1 = mean_feature_l1(&model, &data.train)?;
        let test = data.manifest.split(Split::Test);
        for &m_r in &point.eval_m_r_list {
            for &mode in &point.eval_modes {
                let m = evaluate(&model, &point.generator, &test, m_r, mode)?;
                rows.push(HyperRow {
                    axis: axis.name().to_string(),
                    value,
                    model: ablation.name().to_string(),
                    m_r,
                    mode,
                    accuracy: m.accuracy,
                    macro_f1: m.macro_f1,
                    auc: m.auc,
                    n_samples: m.n_samples,
                    feature_l1: l1,
                    seed: point.seed,
                    config_fingerprint: point.fingerprint(),
                });
            }
        }
    }
    let report = HyperReport {
        version: REPORT_VERSION,
        axis: axis.name().to_string(),
        seed: cfg.seed,
        config_fingerprint: cfg.fingerprint(),
        rows,
    };
    let layout = Layout::new(&cfg.output_dir);
    write_json(&layout.hyper(axis, "json"), &report)?;
    write_text(&layout.hyper(axis, "csv"), &report.csv())?;
    Ok(report)
}

/// Spectral certificate and convergence audit of one sequence's graph.
pub struct AuditOutput {
    pub spectral: SpectralReport,
    pub convergence: ConvergenceReport,
}

/// Audits the graph of a fresh clean sequence under a checkpointed or freshly initialized model.
pub fn audit(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<AuditOutput> {
    cfg.validate()?;
    let (mut model, source) = match checkpoint {
        Some(path) => {
            if !path.exists() {
                return Err(GraceError::MissingInput {
                    what: "checkpoint",
                    path: path.display().to_string(),
                    hint: "train",
                });
            }
            let ck: Checkpoint<GraceModel> = Checkpoint::read(path)?;
            ck.model.validate()?;
            (ck.model, "checkpoint")
        }
        None => (
            GraceModel::init(cfg.generator.c_in, cfg.hyper.clone(), cfg.model_seed())?,
            "fresh",
        ),
    };
    model.scale_gcn_weights(cfg.audit_weight_scale);

    let sample = generate_sample(&cfg.generator, Label::Fake, cfg.audit_seed())?;
    let ctx = project_and_assemble(&sample, &model.projector, &model.bias)?;
    let g = EntangledGraph::from_context(&ctx, model.hyper.q)?;
    let fp = cfg.fingerprint();

    let spectral = SpectralReport {
        version: REPORT_VERSION,
        source: source.to_string(),
        seed: cfg.seed,
        config_fingerprint: fp.clone(),
        certificate: spectral_certificate(&g)?,
    };

    let assumptions = audit_assumptions(&g, &model)?;
    let layer = model.gcn_weights.iter().rposition(|w| w.rows() == w.cols());
    let (contraction, divergence) = match layer {
        Some(l) => {
            // start from the activations that feed the iterated layer
            let mut z0 = ctx.x.clone();
            for w in &model.gcn_weights[..l] {
                z0 = gcn_layer(&z0, &g.m, w)?;
            }
            match measure_contraction(&g, &model.gcn_weights[l], &z0, cfg.audit_iters) {
                Ok(a) => (Some(a), None),
                Err(GraceError::Diverged { iteration, norm }) => {
                    (None, Some(Divergence { iteration, norm }))
                }
                Err(e) => return Err(e),
            }
        }
        None => (None, None),
    };
    let signal: Vec<f64> = (0..ctx.nodes())
        .map(|i| ctx.x.row(i).iter().sum())
        .collect();
    let smoothing = smoothing_audit(&g, &Matrix::column(&signal))?;

    let convergence = ConvergenceReport {
        version: REPORT_VERSION,
        source: source.to_string(),
        seed: cfg.seed,
        config_fingerprint: fp,
        weight_scale: cfg.audit_weight_scale,
        assumptions,
        iterated_layer: layer,
        contraction,
        divergence,
        smoothing,
    };

    let dir = Layout::new(&cfg.output_dir).audit_dir();
    write_json(&dir.join("spectral.json"), &spectral)?;
    write_json(&dir.join("convergence.json"), &convergence)?;
    let ratios = convergence
        .contraction
        .as_ref()
        .map(|a| a.ratios_csv())
        .unwrap_or_else(|| "step,ratio\n".to_string());
    write_text(&dir.join("ratios.csv"), &ratios)?;
    Ok(AuditOutput {
        spectral,
        convergence,
    })
}

/// Reads a sweep report back.
pub fn read_sweep(cfg: &ExperimentConfig) -> Result<EvalReport> {
    read_json(&Layout::new(&cfg.output_dir).sweep_json())
}
