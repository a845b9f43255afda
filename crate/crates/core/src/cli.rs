use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use patchsieve::artifact::{self, RunManifest};
use patchsieve::config::PipelineConfig;
use patchsieve::descriptor::check_homogeneous;
use patchsieve::evaluation::{self, evaluate, sweep_report};
use patchsieve::feature_store::{pca_fit, read_features, write_features, PcaModel};
use patchsieve::lbp::LbpScale;
use patchsieve::pipeline::{self, SweepPlan, SyntheticLayout};
use patchsieve::retrieval::{self, build_index, IndexMetadata, RetrievalIndex};
use patchsieve::selection::{load_selections, save_selections, select_scans, SelectionCriterion, SelectionMethod};
use patchsieve::som::{cluster_scans, ClusterModel};
use patchsieve::synth::{self, CorpusParams};
use patchsieve::tiling::{write_patch_images, PatchManifest};
use patchsieve::{Descriptor, DescriptorKind, Error, PatchRef, Raster, Result};

#[derive(Parser, Debug)]
#[command(name = "patchsieve", version, about = "Patch selection, description and retrieval for large scan images")]
pub struct Cli {
    /// Pipeline configuration JSON. Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker thread cap (config key `jobs`). Results do not depend on it.
    #[arg(long, global = true, env = "PATCHSIEVE_JOBS", value_name = "N")]
    pub jobs: Option<usize>,

    /// Root seed (config key `seed`); every stage expands it by a fixed label.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Cut scans into patches, drop background tiles and write a patch manifest.
    Tile(TileArgs),
    /// Compute 36-bin two-scale LBP descriptors for the patches of a manifest.
    ExtractLbp(ExtractLbpArgs),
    /// Validate an externally produced feature file and copy it into the pipeline.
    IngestFeatures(IngestArgs),
    /// Fit a PCA model on a feature file (or apply a saved one) and write reduced features.
    Pca(PcaArgs),
    /// Train one SOM per scan, assign patches and merge small clusters.
    Cluster(ClusterArgs),
    /// Keep a fraction of each scan's patches, cluster by cluster.
    Select(SelectArgs),
    /// Build an exact nearest-neighbor index over (selected) descriptors.
    Index(IndexArgs),
    /// Query an index and write ranked matches as CSV.
    Search(SearchArgs),
    /// Score top-1 search results against the true scans.
    Eval(EvalArgs),
    /// Run select, index, search and eval over a grid of fractions and methods.
    Sweep(SweepArgs),
    /// Render a procedural multi-scan texture corpus.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct TileArgs {
    /// Scan image; repeat for several scans. The scan id is the file stem.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// Output directory for patch images and `manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Full-resolution tile edge in pixels (tiling.patch_size).
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Step between tiles in pixels (tiling.stride). Follows --patch-size when the
    /// configured stride equals the configured patch size.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Stored patch edge after downsampling (tiling.downsample_to).
    #[arg(long)]
    pub downsample_to: Option<usize>,
    /// Largest background fraction a kept patch may have (tiling.bg_threshold).
    #[arg(long)]
    pub bg_threshold: Option<f64>,
    /// Gray level above which a pixel is background (tiling.bg_brightness_cutoff).
    #[arg(long)]
    pub bg_brightness_cutoff: Option<u8>,
}

#[derive(Args, Debug)]
pub struct ExtractLbpArgs {
    /// Patch manifest written by `tile` (paths.manifest).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output feature file.
    #[arg(long)]
    pub out: PathBuf,
    /// LBP scales as RADIUS:NEIGHBORS, comma separated (lbp.scales).
    #[arg(long, value_delimiter = ',', value_parser = parse_scale)]
    pub scales: Option<Vec<LbpScale>>,
    /// L1-normalize each scale's histogram (lbp.normalize).
    #[arg(long)]
    pub normalize: Option<bool>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Feature file to validate.
    #[arg(long)]
    pub input: PathBuf,
    /// Destination of the validated copy.
    #[arg(long)]
    pub out: PathBuf,
    /// Required descriptor kind (lbp36, deep4096 or pca_reduced).
    #[arg(long)]
    pub kind: Option<DescriptorKind>,
    /// Patch manifest whose retained ids must match the file exactly (paths.manifest).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PcaArgs {
    /// Input feature file (paths.features).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Output feature file of projected descriptors.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to save the fitted model (paths.model).
    #[arg(long, conflicts_with = "apply")]
    pub model: Option<PathBuf>,
    /// Apply this saved model instead of fitting.
    #[arg(long)]
    pub apply: Option<PathBuf>,
    /// Cumulative explained-variance target (pca.retained_fraction).
    #[arg(long)]
    pub retained_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SomFlags {
    /// Units per SOM edge (som.map_side).
    #[arg(long)]
    pub map_side: Option<usize>,
    /// Passes over each scan's patches (som.epochs).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Starting learning rate (som.initial_learning_rate).
    #[arg(long)]
    pub initial_learning_rate: Option<f64>,
    /// Starting neighborhood radius in grid units (som.initial_neighborhood_radius).
    #[arg(long)]
    pub initial_neighborhood_radius: Option<f64>,
    /// Clusters below this fraction of a scan are merged (som.min_cluster_fraction).
    #[arg(long)]
    pub min_cluster_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// Training feature file (paths.features).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Output cluster file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub som: SomFlags,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Training feature file (paths.features).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Cluster file from `cluster` (paths.clusters).
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Output selection file.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of each scan to keep (selection.fraction).
    #[arg(long)]
    pub fraction: Option<f64>,
    /// gmm or random (selection.method).
    #[arg(long)]
    pub method: Option<SelectionMethod>,
    /// density or nearest-mean (selection.criterion).
    #[arg(long)]
    pub criterion: Option<SelectionCriterion>,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    /// Training feature file (paths.features).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Selection file; without it every descriptor is indexed (paths.selection).
    #[arg(long)]
    pub selection: Option<PathBuf>,
    /// Output index file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    /// Index file (paths.index).
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Query feature file (paths.queries).
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Output CSV of ranked matches.
    #[arg(long)]
    pub out: PathBuf,
    /// Matches per query (retrieval.k).
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Search results CSV (paths.results).
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// `query_id,scan_id` CSV; defaults to the scan encoded in each query id (paths.truth).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Output JSON report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Training feature file; repeat once per feature kind (paths.features).
    #[arg(long)]
    pub features: Vec<PathBuf>,
    /// Query feature file, paired with --features by position (paths.queries).
    #[arg(long)]
    pub queries: Vec<PathBuf>,
    /// Cluster file, paired with --features by position (paths.clusters).
    #[arg(long)]
    pub clusters: Vec<PathBuf>,
    /// `query_id,scan_id` CSV; defaults to the scan encoded in each query id (paths.truth).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Output sweep CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Selection fractions, comma separated (eval.fractions).
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Selection methods, comma separated (eval.methods).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<SelectionMethod>>,
    /// Also index every training descriptor (eval.include_full).
    #[arg(long)]
    pub include_full: bool,
    /// density or nearest-mean (selection.criterion).
    #[arg(long)]
    pub criterion: Option<SelectionCriterion>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory; scans go to `train/` and `queries/`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub scans: usize,
    /// Tile edge the corpus is laid out for.
    #[arg(long, default_value_t = 160)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 24)]
    pub cols: usize,
    #[arg(long, default_value_t = 23)]
    pub train_rows: usize,
    #[arg(long, default_value_t = 3)]
    pub query_rows: usize,
}

fn parse_scale(s: &str) -> std::result::Result<LbpScale, String> {
    let (r, p) = s
        .split_once(':')
        .ok_or_else(|| format!("expected RADIUS:NEIGHBORS, got {s:?}"))?;
    let radius: f64 = r.trim().parse().map_err(|e| format!("bad radius {r:?}: {e}"))?;
    let neighbors: usize = p.trim().parse().map_err(|e| format!("bad neighbors {p:?}: {e}"))?;
    Ok(LbpScale::new(radius, neighbors))
}

fn required(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| Error::InvalidArgument(format!("--{name} is required (or set paths.{name})")))
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

struct Run {
    cfg: PipelineConfig,
}

impl Run {
    fn manifest(&self, command: &str) -> Result<RunManifest> {
        Ok(RunManifest::new(command, self.cfg.seed, serde_json::to_value(&self.cfg)?))
    }

    fn finish(&self, mut m: RunManifest, artifact: &Path) -> Result<()> {
        m.output(artifact)?;
        m.write_for(artifact)?;
        info!("wrote {}", artifact.display());
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    let mut command = cli.command;
    apply_flags(&mut cfg, &mut command);
    cfg.validate()?;
    if let Some(n) = cfg.jobs {
        // a pool can only be installed once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let run = Run { cfg };
    match command {
        Command::Tile(a) => tile(&run, a),
        Command::ExtractLbp(a) => extract_lbp(&run, a),
        Command::IngestFeatures(a) => ingest(&run, a),
        Command::Pca(a) => pca(&run, a),
        Command::Cluster(a) => cluster(&run, a),
        Command::Select(a) => select(&run, a),
        Command::Index(a) => index(&run, a),
        Command::Search(a) => search(&run, a),
        Command::Eval(a) => eval(&run, a),
        Command::Sweep(a) => sweep(&run, a),
        Command::Synth(a) => synth_corpus(&run, a),
    }
}

fn apply_som(cfg: &mut PipelineConfig, f: &mut SomFlags) {
    set(&mut cfg.som.map_side, f.map_side);
    set(&mut cfg.som.epochs, f.epochs);
    set(&mut cfg.som.initial_learning_rate, f.initial_learning_rate);
    if f.initial_neighborhood_radius.is_some() {
        cfg.som.initial_neighborhood_radius = f.initial_neighborhood_radius;
    }
    set(&mut cfg.som.min_cluster_fraction, f.min_cluster_fraction);
}

/// Folds command flags into the config so manifests record the effective values.
fn apply_flags(cfg: &mut PipelineConfig, command: &mut Command) {
    match command {
        Command::Tile(a) => {
            if a.stride.is_none() && cfg.tiling.stride == cfg.tiling.patch_size {
                set(&mut cfg.tiling.stride, a.patch_size);
            }
            set(&mut cfg.tiling.patch_size, a.patch_size);
            set(&mut cfg.tiling.stride, a.stride);
            set(&mut cfg.tiling.downsample_to, a.downsample_to);
            set(&mut cfg.tiling.bg_threshold, a.bg_threshold);
            set(&mut cfg.tiling.bg_brightness_cutoff, a.bg_brightness_cutoff);
        }
        Command::ExtractLbp(a) => {
            set(&mut cfg.lbp.scales, a.scales.take());
            set(&mut cfg.lbp.normalize, a.normalize);
        }
        Command::Pca(a) => set(&mut cfg.pca.retained_fraction, a.retained_fraction),
        Command::Cluster(a) => apply_som(cfg, &mut a.som),
        Command::Select(a) => {
            set(&mut cfg.selection.fraction, a.fraction);
            set(&mut cfg.selection.method, a.method);
            set(&mut cfg.selection.criterion, a.criterion);
        }
        Command::Search(a) => set(&mut cfg.retrieval.k, a.k),
        Command::Sweep(a) => {
            set(&mut cfg.eval.fractions, a.fractions.take());
            set(&mut cfg.eval.methods, a.methods.take());
            set(&mut cfg.selection.criterion, a.criterion);
            if a.include_full {
                cfg.eval.include_full = true;
            }
        }
        Command::IngestFeatures(_) | Command::Index(_) | Command::Eval(_) | Command::Synth(_) => {}
    }
}

fn tile(run: &Run, a: TileArgs) -> Result<()> {
    let cfg = &run.cfg.tiling;
    let mut m = run.manifest("tile")?;
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for input in &a.input {
        let scan_id = input
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("cannot derive a scan id from {}", input.display())))?
            .to_string();
        if !seen.insert(scan_id.clone()) {
            return Err(Error::DuplicateId(scan_id));
        }
        m.input(input)?;
        let image = Raster::load(input)?;
        let (scan_entries, kept) = pipeline::tile_filtered(&image, &scan_id, cfg)?;
        info!("{scan_id}: kept {} of {} patches", kept.len(), scan_entries.len());
        write_patch_images(&a.out, &kept)?;
        entries.extend(scan_entries);
    }
    let manifest = PatchManifest {
        tiling: cfg.clone(),
        patches: entries,
    };
    let path = a.out.join("manifest.json");
    artifact::write_json(&path, &manifest)?;
    run.finish(m, &path)
}

fn extract_lbp(run: &Run, a: ExtractLbpArgs) -> Result<()> {
    let manifest_path = required(a.manifest, &run.cfg.paths.manifest, "manifest")?;
    let mut m = run.manifest("extract-lbp")?;
    m.input(&manifest_path)?;
    let manifest = PatchManifest::load(&manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let patches = patchsieve::tiling::load_retained_patches(&manifest, dir)?;
    if patches.is_empty() {
        return Err(Error::Empty(format!("{} retains no patches", manifest_path.display())));
    }
    let descriptors = pipeline::extract_lbp(&patches, &run.cfg.lbp)?;
    write_features(&descriptors, &a.out)?;
    run.finish(m, &a.out)
}

fn ingest(run: &Run, a: IngestArgs) -> Result<()> {
    let mut m = run.manifest("ingest-features")?;
    m.input(&a.input)?;
    let descriptors = read_features(&a.input)?;
    let (kind, _) = check_homogeneous(&descriptors)?;
    if let Some(want) = a.kind {
        if want != kind {
            return Err(Error::Format(format!("expected {want} features, file holds {kind}")));
        }
    }
    if let Some(path) = a.manifest.or_else(|| run.cfg.paths.manifest.clone()) {
        m.input(&path)?;
        let manifest = PatchManifest::load(&path)?;
        let expected: BTreeSet<String> = manifest.retained().map(|e| e.id.clone()).collect();
        let actual: BTreeSet<String> = descriptors.iter().map(Descriptor::id).collect();
        if let Some(id) = actual.difference(&expected).next() {
            return Err(Error::UnknownId(format!("{id} is not a retained patch of {}", path.display())));
        }
        if let Some(id) = expected.difference(&actual).next() {
            return Err(Error::UnknownId(format!("retained patch {id} has no features")));
        }
    }
    write_features(&descriptors, &a.out)?;
    run.finish(m, &a.out)
}

fn pca(run: &Run, a: PcaArgs) -> Result<()> {
    let features = required(a.features, &run.cfg.paths.features, "features")?;
    let mut m = run.manifest("pca")?;
    m.input(&features)?;
    let descriptors = read_features(&features)?;
    let model = match &a.apply {
        Some(p) => {
            m.input(p)?;
            PcaModel::load(p)?
        }
        None => {
            let x = patchsieve::descriptor::to_matrix(&descriptors)?;
            let model = pca_fit(x.view(), run.cfg.pca.retained_fraction)?;
            let path = required(a.model, &run.cfg.paths.model, "model")?;
            model.save(&path)?;
            m.output(&path)?;
            info!("kept {} of {} dimensions", model.output_dim(), model.input_dim());
            model
        }
    };
    write_features(&model.transform_descriptors(&descriptors)?, &a.out)?;
    run.finish(m, &a.out)
}

fn cluster(run: &Run, a: ClusterArgs) -> Result<()> {
    let features = required(a.features, &run.cfg.paths.features, "features")?;
    let mut m = run.manifest("cluster")?;
    m.input(&features)?;
    let descriptors = read_features(&features)?;
    let models = cluster_scans(&descriptors, &run.cfg.som_config())?;
    artifact::write_json(&a.out, &models)?;
    run.finish(m, &a.out)
}

fn load_clusters(path: &Path) -> Result<Vec<ClusterModel>> {
    artifact::read_json(path)
}

fn select(run: &Run, a: SelectArgs) -> Result<()> {
    let features = required(a.features, &run.cfg.paths.features, "features")?;
    let clusters = required(a.clusters, &run.cfg.paths.clusters, "clusters")?;
    let mut m = run.manifest("select")?;
    m.input(&features)?;
    m.input(&clusters)?;
    let descriptors = read_features(&features)?;
    let models = load_clusters(&clusters)?;
    let s = &run.cfg.selection;
    let sets = select_scans(&models, &descriptors, s.method, s.fraction, run.cfg.selection_seed(), s.criterion)?;
    save_selections(&a.out, &sets)?;
    run.finish(m, &a.out)
}

fn index(run: &Run, a: IndexArgs) -> Result<()> {
    let features = required(a.features, &run.cfg.paths.features, "features")?;
    let mut m = run.manifest("index")?;
    m.input(&features)?;
    let descriptors = read_features(&features)?;
    let selection = match a.selection.or_else(|| run.cfg.paths.selection.clone()) {
        Some(p) => {
            m.input(&p)?;
            Some(load_selections(&p)?)
        }
        None => None,
    };
    let mut meta = match &selection {
        Some(sets) => IndexMetadata::from_selection(sets, artifact::timestamp()),
        None => IndexMetadata {
            created_unix: artifact::timestamp(),
            ..IndexMetadata::default()
        },
    };
    meta.seeds.push(run.cfg.seed);
    meta.seeds.sort_unstable();
    meta.seeds.dedup();
    let idx = build_index(&descriptors, selection.as_deref(), meta)?;
    idx.save(&a.out)?;
    run.finish(m, &a.out)
}

fn search(run: &Run, a: SearchArgs) -> Result<()> {
    let index_path = required(a.index, &run.cfg.paths.index, "index")?;
    let queries_path = required(a.queries, &run.cfg.paths.queries, "queries")?;
    let mut m = run.manifest("search")?;
    m.input(&index_path)?;
    m.input(&queries_path)?;
    let idx = RetrievalIndex::load(&index_path)?;
    let queries = read_features(&queries_path)?;
    let results = idx.batch_query(&queries, run.cfg.retrieval.k.min(idx.len()))?;
    let rows = retrieval::search_rows(&queries, &results);
    let mut buf = Vec::new();
    retrieval::write_search_csv(&mut buf, &rows)?;
    artifact::write_atomic(&a.out, &buf)?;
    run.finish(m, &a.out)
}

fn truth_from_query_ids<'a>(ids: impl IntoIterator<Item = &'a String>) -> Result<BTreeMap<String, String>> {
    ids.into_iter()
        .map(|q| {
            let p: PatchRef = q.parse()?;
            Ok((q.clone(), p.scan_id))
        })
        .collect()
}

fn eval(run: &Run, a: EvalArgs) -> Result<()> {
    let results = required(a.results, &run.cfg.paths.results, "results")?;
    let mut m = run.manifest("eval")?;
    m.input(&results)?;
    let rows = retrieval::read_search_csv(&results)?;
    let top1 = evaluation::top1_from_rows(&rows);
    let truth = match a.truth.or_else(|| run.cfg.paths.truth.clone()) {
        Some(p) => {
            m.input(&p)?;
            evaluation::read_truth_csv(&p)?
        }
        None => truth_from_query_ids(top1.keys())?,
    };
    let report = evaluate(&top1, &truth)?;
    artifact::write_json(&a.out, &report)?;
    run.finish(m, &a.out)
}

fn sweep(run: &Run, a: SweepArgs) -> Result<()> {
    let paths = &run.cfg.paths;
    let pick = |flag: Vec<PathBuf>, cfg: &Option<PathBuf>| -> Vec<PathBuf> {
        if flag.is_empty() {
            cfg.iter().cloned().collect()
        } else {
            flag
        }
    };
    let features = pick(a.features, &paths.features);
    let queries = pick(a.queries, &paths.queries);
    let clusters = pick(a.clusters, &paths.clusters);
    if features.is_empty() {
        return Err(Error::InvalidArgument("--features is required (or set paths.features)".into()));
    }
    if queries.len() != features.len() || clusters.len() != features.len() {
        return Err(Error::InvalidArgument(format!(
            "need one --queries and one --clusters per --features: got {} features, {} queries, {} clusters",
            features.len(),
            queries.len(),
            clusters.len()
        )));
    }
    let mut m = run.manifest("sweep")?;
    let truth_file = match a.truth.or_else(|| paths.truth.clone()) {
        Some(p) => {
            m.input(&p)?;
            Some(evaluation::read_truth_csv(&p)?)
        }
        None => None,
    };
    let plan = SweepPlan {
        fractions: run.cfg.eval.fractions.clone(),
        methods: run.cfg.eval.methods.clone(),
        criterion: run.cfg.selection.criterion,
        seed: run.cfg.seed,
        include_full: run.cfg.eval.include_full,
    };
    let mut kinds = BTreeSet::new();
    let mut entries = Vec::new();
    for ((f, q), c) in features.iter().zip(&queries).zip(&clusters) {
        for p in [f, q, c] {
            m.input(p)?;
        }
        let train = read_features(f)?;
        let qs = read_features(q)?;
        let models = load_clusters(c)?;
        let (kind, _) = check_homogeneous(&train)?;
        if !kinds.insert(kind) {
            return Err(Error::DuplicateId(format!("feature kind {kind} given twice")));
        }
        let truth = match &truth_file {
            Some(t) => t.clone(),
            None => pipeline::truth_from_ids(&qs),
        };
        entries.extend(pipeline::sweep_feature(kind.name(), &train, &models, &qs, &truth, &plan)?);
    }
    artifact::write_atomic(&a.out, sweep_report(&entries)?.as_bytes())?;
    run.finish(m, &a.out)
}

fn synth_corpus(run: &Run, a: SynthArgs) -> Result<()> {
    if a.scans == 0 || a.cols == 0 || a.train_rows == 0 || a.query_rows == 0 || a.patch_size == 0 {
        return Err(Error::InvalidArgument("synthetic corpus dimensions must be positive".into()));
    }
    let params = CorpusParams {
        scans: a.scans,
        seed: run.cfg.seed,
        ..CorpusParams::default()
    };
    let layout = SyntheticLayout {
        patch_size: a.patch_size,
        downsample_to: a.patch_size,
        cols: a.cols,
        train_rows: a.train_rows,
        query_rows: a.query_rows,
    };
    let mut m = run.manifest("synth")?;
    for recipe in synth::recipes(&params) {
        let (train, query) = layout.render(&recipe);
        for (sub, img) in [("train", train), ("queries", query)] {
            let path = a.out.join(sub).join(format!("{}.png", recipe.scan_id));
            img.save_png(&path)?;
            m.output(&path)?;
        }
    }
    let index = a.out.join("corpus.json");
    artifact::write_json(
        &index,
        &serde_json::json!({
            "scans": a.scans,
            "patch_size": a.patch_size,
            "cols": a.cols,
            "train_rows": a.train_rows,
            "query_rows": a.query_rows,
        }),
    )?;
    run.finish(m, &index)
}
