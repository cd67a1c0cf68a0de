use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use slateq::clustering::ClusterSpec;
use slateq::ingest::{
    generate_synthetic, parse_items, parse_sessions, parse_user_line, serialize_items, serialize_sessions,
    sessions_to_transitions, IngestError, SyntheticConfig,
};
use slateq::metric::{holdout_indices, logged_recommendations, score, tune, MetricConfig, MetricError, TuneGrid};
use slateq::model::{
    digest, read_model, write_model, ModelError, CLUSTERS_FILE, COMPONENTS_FILE, META_FILE, QTABLE_FILE,
};
use slateq::pipeline::{fit, FitReport, FittedPipeline, PipelineError, PipelineParams};
use slateq::qlearning::{train, QTableBank, TrainConfig};
use slateq::slate::Step;
use slateq::{Catalog, Session};

#[derive(Parser)]
#[command(
    name = "slateq",
    version,
    about = "Offline slate recommendation with per-cluster Q-tables"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic catalog, session log and ground truth.
    Generate(GenerateArgs),
    /// Fit features, clusters and Q-tables on the training split.
    Train(TrainArgs),
    /// Score the trained policy and the logged policy on the validation split.
    Evaluate(EvaluateArgs),
    /// Grid-search pipeline hyperparameters.
    Tune(TuneArgs),
    /// Write nine recommended items per user.
    Recommend(RecommendArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 381)]
    items: usize,
    #[arg(long, default_value_t = 1000)]
    users: usize,
    #[arg(long, default_value_t = 10_000)]
    sessions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Planted user groups (0 for none).
    #[arg(long, default_value_t = 4)]
    groups: usize,
    #[arg(long, default_value_t = 8)]
    latent_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    click_rate: f64,
    #[arg(long, default_value_t = 0.3)]
    group_spread: f64,
    #[arg(long, default_value_t = 0.3)]
    popularity_bias: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Item catalog file.
    #[arg(long)]
    items: PathBuf,
    /// Session log file.
    #[arg(long)]
    sessions: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Kmeans,
    Dbscan,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, default_value_t = 16)]
    k_features: usize,
    #[arg(long = "l1", default_value_t = 0.01)]
    l1: f64,
    #[arg(long, value_enum, default_value_t = Method::Kmeans)]
    cluster: Method,
    /// Number of k-means clusters.
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    #[arg(long, default_value_t = 5)]
    min_pts: usize,
    /// Logged transitions a cluster needs before it is merged away.
    #[arg(long, default_value_t = 500)]
    min_cluster_support: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 3)]
    min_visits: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Single-threaded, input-ordered Q-learning updates.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    model_dir: PathBuf,
    /// Also retrain the Q-tables serially and report the speedup.
    #[arg(long)]
    speedup: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model_dir: PathBuf,
    /// Defaults to the model directory.
    #[arg(long)]
    report_dir: Option<PathBuf>,
    #[arg(long, default_value = "1,2,3", value_parser = parse_weights)]
    weights: [f64; 3],
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// JSON grid file.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "1,2,3", value_parser = parse_weights)]
    weights: [f64; 3],
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    model_dir: PathBuf,
    /// One user per line: `<user_id> <clicks> <portraits>`; session lines also work.
    #[arg(long)]
    users: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_weights(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated weights, got {}", parts.len()));
    }
    let mut w = [0.0; 3];
    for (slot, p) in w.iter_mut().zip(parts) {
        *slot = p.trim().parse().map_err(|e| format!("weight {p:?}: {e}"))?;
    }
    MetricConfig {
        step_weights: w,
        keep_per_session: false,
    }
    .validate()
    .map_err(|e| e.to_string())?;
    Ok(w)
}

const DEFAULT_K_FEATURES_GRID: [usize; 4] = [8, 16, 32, 64];

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Ingest { path: PathBuf, source: IngestError },
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Stage(#[from] PipelineError),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Ingest { .. } | CliError::Read { .. } | CliError::Model(_) | CliError::Data(_) => 2,
            CliError::Stage(_) | CliError::Internal(_) => 3,
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::InvalidWeights(_) | MetricError::InvalidFraction(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

struct Data {
    items_text: String,
    sessions_text: String,
    catalog: Catalog,
    sessions: Vec<Session>,
}

fn load_catalog(path: &Path) -> Result<(String, Catalog), CliError> {
    let text = read(path)?;
    let catalog = parse_items(&text).map_err(|source| CliError::Ingest {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((text, catalog))
}

fn load_data(args: &DataArgs) -> Result<Data, CliError> {
    let (items_text, catalog) = load_catalog(&args.items)?;
    let sessions_text = read(&args.sessions)?;
    let sessions = parse_sessions(&sessions_text, &catalog).map_err(|source| CliError::Ingest {
        path: args.sessions.clone(),
        source,
    })?;
    if sessions.is_empty() {
        return Err(CliError::Data(format!("{}: no sessions", args.sessions.display())));
    }
    Ok(Data {
        items_text,
        sessions_text,
        catalog,
        sessions,
    })
}

fn pipeline_params(a: &PipelineArgs) -> Result<(PipelineParams, f64), CliError> {
    let threads = match a.threads {
        Some(0) => return Err(CliError::Usage("--threads must be >= 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let cluster = match a.cluster {
        Method::Kmeans => ClusterSpec::Kmeans { k: a.k },
        Method::Dbscan => ClusterSpec::Dbscan {
            eps: a.eps,
            min_pts: a.min_pts,
        },
    };
    let params = PipelineParams {
        k_features: a.k_features,
        l1_penalty: a.l1,
        cluster,
        min_cluster_support: a.min_cluster_support,
        train: TrainConfig {
            alpha: a.alpha,
            gamma: a.gamma,
            epochs: a.epochs,
            threads,
            deterministic: a.deterministic,
        },
        min_visits: a.min_visits,
        seed: a.seed,
    };
    params.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if params.k_features == 0 {
        return Err(CliError::Usage("--k-features must be >= 1".into()));
    }
    if !(params.l1_penalty >= 0.0 && params.l1_penalty.is_finite()) {
        return Err(CliError::Usage("--l1 must be finite and >= 0".into()));
    }
    match params.cluster {
        ClusterSpec::Kmeans { k } if k == 0 => return Err(CliError::Usage("--k must be >= 1".into())),
        ClusterSpec::Dbscan { eps, min_pts } if !(eps > 0.0) || min_pts == 0 => {
            return Err(CliError::Usage("--eps must be > 0 and --min-pts >= 1".into()))
        }
        _ => {}
    }
    if !(a.train_frac > 0.0 && a.train_frac < 1.0) {
        return Err(CliError::Usage(format!(
            "--train-frac must be in (0, 1), got {}",
            a.train_frac
        )));
    }
    Ok((params, a.train_frac))
}

fn init_threads(n: usize) {
    // a second call only fails if the pool already exists, which is fine
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

/// Written next to the model files; everything needed to reproduce the split.
#[derive(Serialize, Deserialize)]
struct RunMeta {
    params: PipelineParams,
    train_fraction: f64,
    items_digest: String,
    sessions_digest: String,
    n_train: usize,
    n_validation: usize,
}

fn split(data: &Data, frac: f64, seed: u64) -> Result<(Vec<Session>, Vec<Session>), CliError> {
    let (tr, va) = holdout_indices(data.sessions.len(), frac, seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| data.sessions[i].clone()).collect();
    Ok((pick(&tr), pick(&va)))
}

fn fmt_duration(d: Duration) -> String {
    format!("{:.3}s", d.as_secs_f64())
}

fn summary_text(report: &FitReport, fitted: &FittedPipeline<f64>, meta: &RunMeta) -> String {
    let mut s = String::new();
    let p = &meta.params;
    writeln!(
        s,
        "sessions        {} train / {} validation",
        meta.n_train, meta.n_validation
    )
    .unwrap();
    writeln!(
        s,
        "features        {} of {} requested (l1 {})",
        report.k_features, p.k_features, p.l1_penalty
    )
    .unwrap();
    writeln!(
        s,
        "clustering      {} -> {} raw clusters -> {} groups",
        p.cluster, report.raw_clusters, report.n_groups
    )
    .unwrap();
    if matches!(p.cluster, ClusterSpec::Dbscan { .. }) {
        writeln!(s, "dbscan noise    {}", report.noise).unwrap();
    }
    writeln!(
        s,
        "q-learning      alpha {} gamma {} epochs {} ({} transitions, {} updates)",
        p.train.alpha, p.train.gamma, p.train.epochs, report.train.transitions, report.train.updates
    )
    .unwrap();
    writeln!(s, "table cells     {}", fitted.bank.len()).unwrap();
    for g in 0..fitted.bank.n_clusters() {
        let sizes: Vec<String> = Step::ALL
            .iter()
            .map(|&step| {
                let t = fitted
                    .bank
                    .table(slateq::qlearning::ClusterState { cluster_id: g, step })
                    .expect("group in range");
                t.len().to_string()
            })
            .collect();
        writeln!(s, "  group {g:<3}     {} cells per step", sizes.join(" / ")).unwrap();
    }
    s
}

fn cmd_generate(a: GenerateArgs) -> Result<(), CliError> {
    let cfg = SyntheticConfig {
        num_items: a.items,
        num_users: a.users,
        num_sessions: a.sessions,
        latent_dim: a.latent_dim,
        num_groups: a.groups,
        group_spread: a.group_spread,
        popularity_bias: a.popularity_bias,
        click_rate: a.click_rate,
        seed: a.seed,
        ..SyntheticConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let corpus = generate_synthetic::<f64>(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    create_dir(&a.out_dir)?;
    write(&a.out_dir.join("items.txt"), &serialize_items(&corpus.catalog))?;
    write(&a.out_dir.join("sessions.txt"), &serialize_sessions(&corpus.sessions))?;
    write(&a.out_dir.join("truth.jsonl"), &corpus.truth.to_jsonl())?;
    println!(
        "wrote {} items and {} sessions to {}",
        corpus.catalog.len(),
        corpus.sessions.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let (params, frac) = pipeline_params(&a.pipeline)?;
    init_threads(params.train.threads);
    let t0 = Instant::now();
    let data = load_data(&a.data)?;
    let load_time = t0.elapsed();
    let (train_set, valid_set) = split(&data, frac, params.seed)?;
    let (fitted, report) = fit(&train_set, &data.catalog, &params)?;

    let meta = RunMeta {
        params: params.clone(),
        train_fraction: frac,
        items_digest: digest(&[data.items_text.as_bytes()]),
        sessions_digest: digest(&[data.sessions_text.as_bytes()]),
        n_train: train_set.len(),
        n_validation: valid_set.len(),
    };
    let meta_json = serde_json::to_string(&meta).map_err(|e| CliError::Internal(e.to_string()))?;
    let stamp = digest(&[meta_json.as_bytes()]);

    create_dir(&a.model_dir)?;
    let dir = &a.model_dir;
    write_model(dir, META_FILE, "meta", &stamp, &meta)?;
    write_model(dir, COMPONENTS_FILE, "components", &stamp, &fitted.components)?;
    write_model(dir, CLUSTERS_FILE, "clusters", &stamp, &fitted.groups)?;
    write_model(dir, QTABLE_FILE, "qtable", &stamp, &fitted.bank)?;
    write(&dir.join("policy.txt"), &fitted.policy.export())?;
    let summary = summary_text(&report, &fitted, &meta);
    write(&dir.join("summary.txt"), &summary)?;

    print!("{summary}");
    let t = &report.timings;
    println!("wall time       load {}", fmt_duration(load_time));
    println!("                features {}", fmt_duration(t.features));
    println!("                clustering {}", fmt_duration(t.clustering));
    println!(
        "                q-learning {} ({})",
        fmt_duration(t.qlearning),
        if params.train.deterministic {
            "serial".to_string()
        } else {
            format!("{} threads", params.train.threads)
        }
    );
    println!("                policy {}", fmt_duration(t.policy));
    println!("                total {}", fmt_duration(t0.elapsed()));

    if a.speedup {
        let assignments = fitted.assign(&train_set, &data.catalog)?;
        let transitions = sessions_to_transitions(&train_set, &data.catalog);
        let time = |cfg: TrainConfig| -> Result<Duration, CliError> {
            let mut bank = QTableBank::new(fitted.groups.n_groups);
            let t = Instant::now();
            train(&mut bank, &transitions, &assignments, &cfg).map_err(PipelineError::from)?;
            Ok(t.elapsed())
        };
        let serial = time(TrainConfig {
            deterministic: true,
            threads: 1,
            ..params.train.clone()
        })?;
        let parallel = time(TrainConfig {
            deterministic: false,
            ..params.train.clone()
        })?;
        println!(
            "speedup         serial {} / {} threads {} = {:.2}x",
            fmt_duration(serial),
            params.train.threads,
            fmt_duration(parallel),
            serial.as_secs_f64() / parallel.as_secs_f64().max(1e-9)
        );
    }
    Ok(())
}

struct LoadedModel {
    meta: RunMeta,
    fitted: FittedPipeline<f64>,
}

fn load_model(dir: &Path, catalog: &Catalog) -> Result<LoadedModel, CliError> {
    let (stamp, meta): (String, RunMeta) = read_model(dir, META_FILE, "meta", None)?;
    let (_, components) = read_model(dir, COMPONENTS_FILE, "components", Some(&stamp))?;
    let (_, groups) = read_model(dir, CLUSTERS_FILE, "clusters", Some(&stamp))?;
    let (_, bank): (String, QTableBank<f64>) = read_model(dir, QTABLE_FILE, "qtable", Some(&stamp))?;
    let policy = bank
        .policy_table(catalog, meta.params.min_visits)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.join(QTABLE_FILE).display())))?;
    Ok(LoadedModel {
        meta,
        fitted: FittedPipeline {
            components,
            groups,
            bank,
            policy,
        },
    })
}

fn check_digest(expected: &str, text: &str, path: &Path, what: &str) -> Result<(), CliError> {
    if digest(&[text.as_bytes()]) != expected {
        return Err(CliError::Data(format!(
            "{}: {what} differs from the data the model was trained on",
            path.display()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportLine<'a> {
    policy: &'a str,
    weights: [f64; 3],
    #[serde(flatten)]
    report: &'a slateq::metric::ScoreReport<f64>,
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let data = load_data(&a.data)?;
    let model = load_model(&a.model_dir, &data.catalog)?;
    check_digest(
        &model.meta.items_digest,
        &data.items_text,
        &a.data.items,
        "item catalog",
    )?;
    check_digest(
        &model.meta.sessions_digest,
        &data.sessions_text,
        &a.data.sessions,
        "session log",
    )?;
    let (_, valid) = split(&data, model.meta.train_fraction, model.meta.params.seed)?;

    let metric = MetricConfig {
        step_weights: a.weights,
        keep_per_session: false,
    };
    let ours = model.fitted.recommend(&valid, &data.catalog)?;
    let learned = score(&ours, &valid, &data.catalog, &metric)?;
    let logged = score(&logged_recommendations(&valid), &valid, &data.catalog, &metric)?;

    let mut text = String::new();
    writeln!(text, "weights {:?}", a.weights).unwrap();
    writeln!(text, "learned policy  {learned}").unwrap();
    writeln!(text, "logged policy   {logged}").unwrap();
    let mut jsonl = String::new();
    for (policy, report) in [("learned", &learned), ("logged", &logged)] {
        let line = ReportLine {
            policy,
            weights: a.weights,
            report,
        };
        jsonl.push_str(&serde_json::to_string(&line).map_err(|e| CliError::Internal(e.to_string()))?);
        jsonl.push('\n');
    }
    let out = a.report_dir.unwrap_or(a.model_dir);
    create_dir(&out)?;
    write(&out.join("report.txt"), &text)?;
    write(&out.join("report.jsonl"), &jsonl)?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct BestConfig<'a> {
    cell: usize,
    params: &'a PipelineParams,
    score: f64,
    n_groups: usize,
}

fn cmd_tune(a: TuneArgs) -> Result<(), CliError> {
    let (base, frac) = pipeline_params(&a.pipeline)?;
    init_threads(base.train.threads);
    let grid_text = read(&a.grid)?;
    let mut grid: TuneGrid =
        serde_json::from_str(&grid_text).map_err(|e| CliError::Data(format!("{}: {e}", a.grid.display())))?;
    if grid.k_features.is_empty() {
        grid.k_features = DEFAULT_K_FEATURES_GRID.to_vec();
    }
    let data = load_data(&a.data)?;
    let metric = MetricConfig {
        step_weights: a.weights,
        keep_per_session: false,
    };
    let result = tune(&grid, &base, &data.sessions, &data.catalog, frac, &metric)?;
    create_dir(&a.out_dir)?;
    write(&a.out_dir.join("grid.csv"), &result.to_csv())?;
    for (i, c) in result.cells.iter().enumerate() {
        if let slateq::metric::GridOutcome::Failed { stage, message } = &c.outcome {
            eprintln!("cell {i} failed in {stage} stage: {message}");
        }
    }
    let Some(best) = result.best else {
        return Err(CliError::Internal("every grid cell failed".into()));
    };
    let cell = &result.cells[best];
    let slateq::metric::GridOutcome::Scored { n_groups, report } = &cell.outcome else {
        unreachable!("best cell is scored")
    };
    let out = BestConfig {
        cell: best,
        params: &cell.params,
        score: report.score,
        n_groups: *n_groups,
    };
    let json = serde_json::to_string_pretty(&out).map_err(|e| CliError::Internal(e.to_string()))?;
    write(&a.out_dir.join("best.json"), &(json + "\n"))?;
    println!(
        "best cell {best}: k_features {} l1 {} {} -> score {} ({} groups)",
        cell.params.k_features, cell.params.l1_penalty, cell.params.cluster, report.score, n_groups
    );
    Ok(())
}

fn cmd_recommend(a: RecommendArgs) -> Result<(), CliError> {
    let (items_text, catalog) = load_catalog(&a.items)?;
    let model = load_model(&a.model_dir, &catalog)?;
    check_digest(&model.meta.items_digest, &items_text, &a.items, "item catalog")?;
    let users_text = read(&a.users)?;
    let users = users_text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_user_line(i + 1, l.trim(), &catalog))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| CliError::Ingest {
            path: a.users.clone(),
            source,
        })?;
    let recs = model.fitted.recommend(&users, &catalog)?;
    let mut out = String::with_capacity(users.len() * 48);
    for (u, r) in users.iter().zip(&recs) {
        let items: Vec<String> = r.iter().map(u32::to_string).collect();
        writeln!(out, "{} {}", u.user_id, items.join(",")).unwrap();
    }
    write(&a.out, &out)?;
    println!("wrote {} recommendations to {}", recs.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Recommend(a) => cmd_recommend(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
