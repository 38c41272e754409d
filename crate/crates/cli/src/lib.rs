//! Subcommands of the `adadedup` binary. Every stage reads its inputs from and
//! writes its outputs to one output directory, so an externally trained loss
//! table can be dropped in between `prune-init` and `adapt`.

use std::fs;
use std::path::{Path, PathBuf};

use adadedup::adaptation::Adaptation;
use adadedup::benchmark::{generate, SynthSpec};
use adadedup::clustering::ClusterAssignment;
use adadedup::density::DedupOrder;
use adadedup::io::{
    encode_assignment, encode_centroids, encode_loss_table, import_csv_embeddings, read_assignment, read_embeddings,
    read_id_map, read_loss_table, read_manifest, sha256_file, sha256_hex, write_bytes, write_embeddings,
    write_id_map, Manifest,
};
use adadedup::model::{SampleId, SignalMode};
use adadedup::pipeline::{self, Selector};
use adadedup::proxy::{import_losses, knn_distance_report, LossTable};
use adadedup::{validate_config, CheckedConfig, EmbeddingMatrix, Error, PruneConfig, PruneState, Result};
use serde::Serialize;
use serde_json::Value;

pub const ASSIGNMENT_FILE: &str = "assignment.csv";
pub const CENTROIDS_FILE: &str = "centroids.csv";
pub const GAMMA_INIT_FILE: &str = "gamma_init.csv";
pub const MANIFEST_INIT_FILE: &str = "manifest_init.jsonl";
pub const LOSSES_FILE: &str = "losses.csv";
pub const ADAPTATION_FILE: &str = "adaptation.csv";
pub const MANIFEST_FINAL_FILE: &str = "manifest_final.jsonl";
pub const REPORT_CLUSTERS_FILE: &str = "report_clusters.csv";
pub const REPORT_KNN_FILE: &str = "report_knn.csv";
pub const RUN_SUMMARY_FILE: &str = "run_summary.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const LABELS_FILE: &str = "labels.csv";
pub const IDS_FILE: &str = "ids.csv";

/// Marker for an aggregate over an empty side of a cluster.
pub const EMPTY_MARKER: &str = "-";

const PATH_KEYS: [&str; 5] = ["embeddings", "prune_embeddings", "losses", "ids", "out_dir"];

/// A run configuration: algorithm parameters plus file locations. Relative paths
/// resolve against the directory holding the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub prune: PruneConfig,
    pub embeddings: PathBuf,
    /// Second matrix used for de-duplication and the density proxy.
    pub prune_embeddings: Option<PathBuf>,
    /// Externally computed per-sample losses.
    pub losses: Option<PathBuf>,
    /// `sample_id,external_id` table echoed into manifests.
    pub ids: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parses the JSON text of a config. Unknown keys are rejected.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        let Value::Object(mut map) = value else {
            return Err(Error::InvalidConfig("config must be a JSON object".into()));
        };
        let mut paths: Vec<Option<PathBuf>> = Vec::new();
        for key in PATH_KEYS {
            paths.push(match map.remove(key) {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(base.join(s)),
                Some(other) => return Err(Error::InvalidConfig(format!("config: '{key}' must be a path, got {other}"))),
            });
        }
        let prune: PruneConfig = serde_json::from_value(Value::Object(map))
            .map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        let [embeddings, prune_embeddings, losses, ids, out_dir]: [Option<PathBuf>; 5] =
            paths.try_into().expect("one slot per path key");
        let embeddings = embeddings.ok_or_else(|| Error::InvalidConfig("config: 'embeddings' is required".into()))?;
        Ok(Self { prune, embeddings, prune_embeddings, losses, ids, out_dir })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }
}

/// Everything a pipeline subcommand needs: the parsed config and where to write.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Context {
    /// `out` overrides the config's `out_dir`; `seed` overrides its seed.
    pub fn new(mut config: RunConfig, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self> {
        if let Some(seed) = seed {
            config.prune.seed = seed;
        }
        let out = out
            .or_else(|| config.out_dir.clone())
            .ok_or_else(|| Error::InvalidConfig("no output directory: pass --out or set out_dir".into()))?;
        Ok(Self { config, out })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Loaded matrices and validated parameters.
struct Inputs {
    geometry: pipeline::Geometry,
    checked: CheckedConfig,
    embedding_sha256: String,
    ids: Vec<SampleId>,
}

fn load_inputs(ctx: &Context) -> Result<Inputs> {
    let cfg = &ctx.config;
    let emb = read_embeddings(&cfg.embeddings)?;
    let second = cfg.prune_embeddings.as_deref().map(read_embeddings).transpose()?;
    let checked = validate_config(&cfg.prune, emb.n())?;
    let geometry = pipeline::Geometry::new(&emb, second.as_ref(), cfg.prune.normalize)?;
    let external = match &cfg.ids {
        Some(p) => read_id_map(p, emb.n())?,
        None => Vec::new(),
    };
    Ok(Inputs {
        geometry,
        checked,
        embedding_sha256: sha256_file(&cfg.embeddings)?,
        ids: SampleId::dense(emb.n(), &external),
    })
}

fn load_assignment(ctx: &Context, emb: &EmbeddingMatrix) -> Result<ClusterAssignment> {
    read_assignment(&ctx.file(ASSIGNMENT_FILE), &ctx.file(CENTROIDS_FILE), emb)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

fn manifest(ctx: &Context, inputs: &Inputs, selector: &str, state: &PruneState, labels: &[usize]) -> Result<String> {
    Manifest::new(
        selector,
        state,
        labels,
        &ctx.config.prune,
        inputs.checked.m,
        &inputs.embedding_sha256,
        &inputs.ids,
    )?
    .encode()
}

/// Reads a manifest and checks it was built from the configured embeddings.
fn load_manifest(ctx: &Context, name: &str) -> Result<Manifest> {
    let m = read_manifest(&ctx.file(name))?;
    m.verify_embeddings(&ctx.config.embeddings)?;
    Ok(m)
}

pub fn cmd_cluster(ctx: &Context) -> Result<String> {
    let inputs = load_inputs(ctx)?;
    let assignment = pipeline::cluster_stage(&inputs.geometry, &inputs.checked)?;
    write_text(&ctx.file(ASSIGNMENT_FILE), &encode_assignment(&assignment))?;
    write_text(&ctx.file(CENTROIDS_FILE), &encode_centroids(assignment.centroids()))?;
    Ok(format!(
        "K={} seed={} inertia={}",
        assignment.k(),
        inputs.checked.config.seed,
        assignment.inertia()
    ))
}

fn gamma_table(state: &PruneState, labels: &[usize]) -> String {
    let mut out = String::from("cluster,size,kept,gamma\n");
    let sizes = adadedup::model::cluster_sizes(labels, state.gamma().len());
    for (c, (kept, gamma)) in state.kept_per_cluster(labels).iter().zip(state.gamma()).enumerate() {
        out.push_str(&format!("{c},{},{kept},{gamma}\n", sizes[c]));
    }
    out
}

pub fn cmd_prune_init(ctx: &Context) -> Result<String> {
    let inputs = load_inputs(ctx)?;
    let assignment = load_assignment(ctx, &inputs.geometry.cluster)?;
    let (state, selection) = pipeline::initial_stage(&inputs.geometry, &assignment, &inputs.checked)?;
    write_text(&ctx.file(MANIFEST_INIT_FILE), &manifest(ctx, &inputs, "adadedup", &state, assignment.labels())?)?;
    write_text(&ctx.file(GAMMA_INIT_FILE), &gamma_table(&state, assignment.labels()))?;
    Ok(format!("kept={} tau={} greedy_kept={}", state.kept_count(), selection.tau, selection.greedy_kept))
}

pub fn cmd_losses(ctx: &Context) -> Result<String> {
    let inputs = load_inputs(ctx)?;
    let initial = load_manifest(ctx, MANIFEST_INIT_FILE)?.to_state()?;
    let (table, source) = match &ctx.config.losses {
        Some(path) => (import_losses(path, inputs.geometry.n())?, "external"),
        None => (pipeline::proxy_loss_stage(&inputs.geometry, &initial, &inputs.checked)?, "kde"),
    };
    write_text(&ctx.file(LOSSES_FILE), &encode_loss_table(&table))?;
    Ok(format!("losses={} source={source} total={}", table.len(), table.total()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| EMPTY_MARKER.to_string(), |x| x.to_string())
}

/// `cluster,size,kept0,pruned0,loss_kept,loss_pruned,delta,scaled,adjust,gamma0,gamma1,k0,k1`
pub fn adaptation_table(a: &Adaptation) -> String {
    let mut out = String::from("cluster,size,kept0,pruned0,loss_kept,loss_pruned,delta,scaled,adjust,gamma0,gamma1,k0,k1\n");
    for (c, s) in a.summaries.iter().enumerate() {
        out.push_str(&format!(
            "{c},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.size,
            s.kept_count,
            s.pruned_count,
            opt(s.kept_loss),
            opt(s.pruned_loss),
            s.delta,
            s.scaled_delta,
            a.adjustments[c],
            a.gamma[c],
            a.gamma_prime[c],
            a.initial_counts[c],
            a.keep_counts[c]
        ));
    }
    out
}

pub fn cmd_adapt(ctx: &Context) -> Result<String> {
    let inputs = load_inputs(ctx)?;
    let assignment = load_assignment(ctx, &inputs.geometry.cluster)?;
    let initial = load_manifest(ctx, MANIFEST_INIT_FILE)?.to_state()?;
    let losses = read_loss_table(&ctx.file(LOSSES_FILE), inputs.geometry.n())?;
    let (adaptation, final_state) =
        pipeline::adapt_stage(&inputs.geometry, &assignment, &initial, &losses, &inputs.checked)?;
    write_text(&ctx.file(ADAPTATION_FILE), &adaptation_table(&adaptation))?;
    write_text(
        &ctx.file(MANIFEST_FINAL_FILE),
        &manifest(ctx, &inputs, "adadedup", &final_state, assignment.labels())?,
    )?;
    Ok(format!(
        "kept={} beta={} churn={}",
        final_state.kept_count(),
        adaptation.beta,
        adaptation.churn(inputs.checked.m)
    ))
}

#[derive(Serialize)]
struct StageRecord {
    stage: &'static str,
    outputs: Vec<FileHash>,
}

#[derive(Serialize)]
struct FileHash {
    file: &'static str,
    sha256: String,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    embedding_sha256: String,
    prune_embedding_sha256: Option<String>,
    config: &'a PruneConfig,
    stages: Vec<StageRecord>,
}

/// Cluster, initial prune, losses and adaptation in sequence, then a summary of
/// every output's content hash.
pub fn cmd_run(ctx: &Context) -> Result<String> {
    let stages: [(&'static str, fn(&Context) -> Result<String>, &[&'static str]); 4] = [
        ("cluster", cmd_cluster, &[ASSIGNMENT_FILE, CENTROIDS_FILE]),
        ("prune-init", cmd_prune_init, &[MANIFEST_INIT_FILE, GAMMA_INIT_FILE]),
        ("losses", cmd_losses, &[LOSSES_FILE]),
        ("adapt", cmd_adapt, &[ADAPTATION_FILE, MANIFEST_FINAL_FILE]),
    ];
    let mut log = Vec::new();
    let mut records = Vec::new();
    for (stage, run, files) in stages {
        log.push(format!("{stage}: {}", run(ctx)?));
        let outputs = files
            .iter()
            .map(|&file| Ok(FileHash { file, sha256: sha256_file(&ctx.file(file))? }))
            .collect::<Result<_>>()?;
        records.push(StageRecord { stage, outputs });
    }
    let summary = RunSummary {
        embedding_sha256: sha256_file(&ctx.config.embeddings)?,
        prune_embedding_sha256: ctx.config.prune_embeddings.as_deref().map(sha256_file).transpose()?,
        config: &ctx.config.prune,
        stages: records,
    };
    let mut json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Parse(e.to_string()))?;
    json.push('\n');
    write_text(&ctx.file(RUN_SUMMARY_FILE), &json)?;
    log.push(format!("summary: {}", sha256_hex(json.as_bytes())));
    Ok(log.join("\n"))
}

pub fn baseline_file(selector: Selector) -> String {
    format!("baseline_{selector}.jsonl")
}

/// Writes a baseline selection manifest. `sse-uniform` needs the cluster
/// assignment; the others use it for manifest labels when present.
pub fn cmd_baseline(ctx: &Context, selector: Selector) -> Result<String> {
    if selector == Selector::AdaDedup {
        return Err(Error::InvalidConfig("use `run` for the adaptive selector".into()));
    }
    let inputs = load_inputs(ctx)?;
    let n = inputs.geometry.n();
    let order = DedupOrder::ascending(n);
    let assignment = if selector == Selector::SseUniform || ctx.file(ASSIGNMENT_FILE).exists() {
        load_assignment(ctx, &inputs.geometry.cluster)?
    } else {
        ClusterAssignment::from_labels(&inputs.geometry.cluster, vec![0; n], 1)?
    };
    let m = inputs.checked.m;
    let kept = match selector {
        Selector::Random => adadedup::baselines::random_select(n, m, inputs.checked.config.seed)?,
        Selector::GlobalDedup => adadedup::baselines::global_dedup_select(&inputs.geometry.prune, m, &order)?,
        _ => adadedup::baselines::cluster_uniform_dedup_select(&inputs.geometry.prune, &assignment, m, &order)?,
    };
    let state = PruneState::from_kept_indices(n, &kept, assignment.labels(), assignment.k())?;
    let name = baseline_file(selector);
    write_text(&ctx.file(&name), &manifest(ctx, &inputs, selector.as_str(), &state, assignment.labels())?)?;
    Ok(format!("{name}: kept={}", state.kept_count()))
}

/// Generates a synthetic dataset from a JSON spec into `out`.
pub fn cmd_synth(spec_path: &Path, out: &Path) -> Result<String> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let data = generate(&spec)?;
    write_embeddings(&out.join(EMBEDDINGS_FILE), &data.embeddings)?;
    let mut labels = String::from("sample_id,cluster\n");
    for (i, l) in data.labels.iter().enumerate() {
        labels.push_str(&format!("{i},{l}\n"));
    }
    write_text(&out.join(LABELS_FILE), &labels)?;
    Ok(format!("n={} d={}", data.embeddings.n(), data.embeddings.d()))
}

/// Converts a numeric CSV to the binary embedding format, plus an id table when
/// the first column holds ids.
pub fn cmd_embed_import(csv: &Path, out: &Path, has_header: bool, id_column: bool) -> Result<String> {
    let (emb, ids) = import_csv_embeddings(csv, has_header, id_column)?;
    write_embeddings(&out.join(EMBEDDINGS_FILE), &emb)?;
    if id_column {
        write_id_map(&out.join(IDS_FILE), &ids)?;
    }
    Ok(format!("n={} d={}", emb.n(), emb.d()))
}

/// Per-cluster kept/pruned loss summary of the latest manifest plus per-cluster
/// neighbourhood distances.
pub fn cmd_report(ctx: &Context, k_neighbors: usize) -> Result<String> {
    let inputs = load_inputs(ctx)?;
    let assignment = load_assignment(ctx, &inputs.geometry.cluster)?;
    let name = if ctx.file(MANIFEST_FINAL_FILE).exists() { MANIFEST_FINAL_FILE } else { MANIFEST_INIT_FILE };
    let state = load_manifest(ctx, name)?.to_state()?;
    let losses: LossTable = read_loss_table(&ctx.file(LOSSES_FILE), inputs.geometry.n())?;
    let mode: SignalMode = ctx.config.prune.signal_mode;
    let summaries = adadedup::adaptation::differential_loss(&losses, &state, &assignment, mode)?;
    let mut clusters = String::from("cluster,size,kept,pruned,loss_kept,loss_pruned,delta\n");
    for (c, s) in summaries.iter().enumerate() {
        clusters.push_str(&format!(
            "{c},{},{},{},{},{},{}\n",
            s.size,
            s.kept_count,
            s.pruned_count,
            opt(s.kept_loss),
            opt(s.pruned_loss),
            s.delta
        ));
    }
    let mut knn = String::from("cluster,size,mean_knn_distance\n");
    for row in knn_distance_report(&inputs.geometry.prune, &assignment, k_neighbors)? {
        knn.push_str(&format!("{},{},{}\n", row.cluster, row.size, row.mean_knn_distance));
    }
    write_text(&ctx.file(REPORT_CLUSTERS_FILE), &clusters)?;
    write_text(&ctx.file(REPORT_KNN_FILE), &knn)?;
    Ok(format!("{name}: {} clusters", summaries.len()))
}

/// Exit status for an error: 2 configuration, 3 input format, 4 precondition.
pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        adadedup::ErrorClass::Config => 2,
        adadedup::ErrorClass::InputFormat => 3,
        adadedup::ErrorClass::Precondition => 4,
    }
}
