use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use pcsr::linalg::softmax_rows;
use pcsr::pseudolabel::polycentric_pseudolabels;
use pcsr::trainer::{adapt, evaluate, format_sweep, pretrain_source, sweep, write_metrics, Prepared, SweepParam};
use pcsr::{Dataset, Domain, Model, ShiftSpec};

use crate::config::{parse_toggles, ConfigError, RunConfig};
use crate::{AdaptArgs, Cli, Command, DataArgs, GenArgs, ParamArg, PseudolabelArgs, SweepArgs, TaskArg};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(ConfigError),
    Run(pcsr::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<pcsr::Error> for CliError {
    fn from(e: pcsr::Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
        cfg.seeds = vec![s];
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    if cli.metrics.is_some() {
        cfg.metrics = cli.metrics.clone();
    }
    match cli.command {
        Command::Gen(a) => gen(&cfg, &a),
        Command::Pretrain(a) => pretrain(&cfg, &a),
        Command::Adapt(a) => adapt_cmd(cfg, &a),
        Command::Pseudolabel(a) => pseudolabel(cfg, &a),
        Command::Eval(a) => eval(&cfg, &a),
        Command::Sweep(a) => sweep_cmd(&cfg, &a),
    }
}

/// `PCSR_THREADS` sizes the global pool; unset or 0 keeps everything on the
/// calling thread.
fn init_threads() -> Result<()> {
    let n = match std::env::var("PCSR_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("PCSR_THREADS must be a non-negative integer, got `{v}`")))?,
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

fn load_data(flag: &Option<PathBuf>, configured: &Option<PathBuf>, key: &str) -> Result<Dataset> {
    let path = flag.as_ref().or(configured.as_ref());
    let path = require(&path.cloned(), &format!("--data or `{key}` in the config"))?.to_path_buf();
    Ok(Dataset::load_features(path)?)
}

fn load_model(a: &DataArgs, cfg: &RunConfig) -> Result<Model> {
    let path = a.model.clone().or_else(|| cfg.model.clone());
    Ok(Model::load(require(&path, "--model or `model` in the config")?)?)
}

fn gen(cfg: &RunConfig, a: &GenArgs) -> Result<()> {
    let out = require(&cfg.out, "--out directory")?;
    let seed = cfg.adapt.seed;
    let rotation = a.rotation.unwrap_or(0.0);
    let mut spec = match a.task {
        TaskArg::TwoMoons => ShiftSpec::two_moons(rotation, seed),
        TaskArg::Blobs => {
            let k = a.classes.or(a.proportions.as_ref().map(Vec::len)).unwrap_or(6);
            ShiftSpec::blobs(k, rotation, seed)
        }
        TaskArg::Benchmark => {
            let mut s = ShiftSpec::benchmark(seed);
            if let Some(r) = a.rotation {
                s.rotation_deg = r;
            }
            s
        }
    };
    if let Some(t) = &a.translation {
        spec.translation = [t[0], t[1]];
    }
    if let Some(n) = a.noise {
        spec.noise_std = n;
    }
    if let Some(p) = &a.proportions {
        spec.class_proportions = p.clone();
    }
    if let Some(d) = a.dim {
        spec.input_dim = d;
    }
    if let Some(n) = a.n_source {
        spec.n_source = n;
    }
    if let Some(n) = a.n_target {
        spec.n_target = n;
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let (src, tgt) = pcsr::gen_shifted_pair(&spec)?;
    fs::create_dir_all(out)?;
    src.save_features(out.join("source.features"))?;
    tgt.save_features(out.join("target.features"))?;
    for (name, ds) in [("source", &src), ("target", &tgt)] {
        let counts: Vec<String> = ds
            .class_counts()
            .unwrap_or_default()
            .iter()
            .map(|c| c.to_string())
            .collect();
        println!("{name} class counts: {}", counts.join(" "));
    }
    Ok(())
}

fn pretrain(cfg: &RunConfig, a: &DataArgs) -> Result<()> {
    let out = require(&cfg.out, "--out or `out` in the config")?;
    let source = load_data(&a.data, &cfg.source, "source")?;
    let trained = pretrain_source(&source, &cfg.arch(source.class_count()), &cfg.pretrain)?;
    trained.model.save(out)?;
    match trained.test_acc {
        Some(t) => println!("train_acc={:.4} test_acc={t:.4}", trained.train_acc),
        None => println!("train_acc={:.4}", trained.train_acc),
    }
    Ok(())
}

fn adapt_cmd(mut cfg: RunConfig, a: &AdaptArgs) -> Result<()> {
    if let Some(terms) = &a.ablate {
        cfg.adapt.toggles = parse_toggles(terms).map_err(|m| CliError::Usage(format!("--ablate: {m}")))?;
    }
    let out = require(&cfg.out, "--out or `out` in the config")?;
    let model = load_model(&a.data, &cfg)?;
    let target = load_data(&a.data.data, &cfg.target, "target")?.with_domain(Domain::Target);
    let (adapted, history) = adapt(&model, &target, &cfg.adapt)?;
    adapted.save(out)?;
    if let Some(m) = &cfg.metrics {
        write_metrics(m, &history)?;
    }
    if let Some(last) = history.last() {
        println!("{}", last.to_json());
    }
    Ok(())
}

fn pseudolabel(mut cfg: RunConfig, a: &PseudolabelArgs) -> Result<()> {
    if let Some(p) = a.centers {
        cfg.adapt.centers_per_class = p;
    }
    if let Some(r) = a.ratio {
        cfg.adapt.ratio = r;
    }
    cfg.validate()?;
    let out = require(&cfg.out, "--out or `out` in the config")?;
    let model = load_model(&a.data, &cfg)?;
    let data = load_data(&a.data.data, &cfg.target, "target")?;
    let fwd = model.forward(data.x())?;
    let probs = softmax_rows(&fwd.logits)?;
    let result = polycentric_pseudolabels(&fwd.features, &probs, &cfg.adapt.pseudolabel_config(cfg.adapt.seed))?;

    let labeled = Dataset::new(
        data.x().clone(),
        Some(result.labels.labels.clone()),
        data.class_count(),
        Domain::Target,
    )?;
    labeled.save_features(out)?;
    let (centers, classes) = result.centroids.stacked();
    let dump = Dataset::new(centers, Some(classes), data.class_count(), Domain::Unspecified)?;
    let centers_path = a.centers_out.clone().unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".centers");
        PathBuf::from(p)
    });
    dump.save_features(centers_path)?;

    let mut line = format!("mk_overlap={}", result.mk_overlap());
    if let Some(truth) = data.labels() {
        line += &format!(" pseudo_acc={:.4}", result.labels.accuracy(truth));
    }
    println!("{line}");
    Ok(())
}

fn eval(cfg: &RunConfig, a: &DataArgs) -> Result<()> {
    let model = load_model(a, cfg)?;
    let data = load_data(&a.data, &cfg.target, "target")?;
    let ev = evaluate(&model, &data)?;
    println!("accuracy={:.4} per_class_mean={:.4}", ev.accuracy, ev.per_class_mean);
    if let Some(out) = &cfg.out {
        let json = serde_json::to_string(&ev).expect("evaluation serializes");
        fs::write(out, json + "\n")?;
    }
    Ok(())
}

fn sweep_cmd(cfg: &RunConfig, a: &SweepArgs) -> Result<()> {
    let source = load_data(&None, &cfg.source, "source")?;
    let target = load_data(&None, &cfg.target, "target")?.with_domain(Domain::Target);
    let arch = cfg.arch(source.class_count());
    let prepared = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let hp = pcsr::PretrainConfig {
                seed,
                ..cfg.pretrain.clone()
            };
            let trained = pretrain_source(&source, &arch, &hp)?;
            let source_only = evaluate(&trained.model, &target)?;
            Ok(Prepared {
                seed,
                source: trained,
                target: target.clone(),
                source_only,
            })
        })
        .collect::<pcsr::Result<Vec<_>>>()?;
    let param = match a.param {
        ParamArg::P => SweepParam::CentersPerClass,
        ParamArg::Beta => SweepParam::Beta,
    };
    let rows = sweep(param, &a.values, &cfg.adapt, &prepared).map_err(|e| match e {
        pcsr::Error::InvalidParam { .. } => CliError::Usage(e.to_string()),
        other => CliError::Run(other),
    })?;
    print!("{}", format_sweep(param, &rows));
    if let Some(out) = &cfg.out {
        let source_only: Vec<f64> = prepared.iter().map(|p| p.source_only.accuracy).collect();
        let json = serde_json::json!({
            "param": param.name(),
            "seeds": cfg.seeds,
            "source_only": source_only,
            "rows": rows,
        });
        fs::write(out, json.to_string() + "\n")?;
    }
    Ok(())
}
