use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use maest::benchkit::{self, ProbeBench};
use maest::melfront::{
    center_crop_30s, compute_stats, normalize, read_wav, MelExtractor, MelSpectrogram, NormStats,
    SpectrogramStore,
};
use maest::model::{weights_load, weights_save, EmbeddingSpec, ModelConfig, ModelWeights};
use maest::patchgrid::{edge_rows, PatchoutMode, PatchoutSpec};
use maest::probe::{
    build_dataset, grid_search, mlp_fit, model_segment_frames, sweep_blocks, sweep_espec,
    EmbeddingDataset, GridRow, MetricReport, Split,
};
use maest::synth::{build_toy_store, split_ids};
use maest::train::{center_segment, fit, multi_hot, write_metrics_log, Corpus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{Cli, CliError, Command, PatchoutArgs, StoreArgs};

type Res<T> = Result<T, CliError>;

const MODEL_SIDECAR: &str = "model.json";
const STATS_FILE: &str = "stats.json";
const SPLITS_FILE: &str = "splits.tsv";

/// Output directory that remembers what was written to it.
struct RunDir {
    root: PathBuf,
    outputs: Vec<String>,
}

impl RunDir {
    fn create(root: PathBuf) -> Res<Self> {
        fs::create_dir_all(&root)
            .map_err(|e| CliError::User(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root,
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_owned());
        }
        self.root.join(name)
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Res<()> {
        let p = self.path(name);
        fs::write(p, bytes)?;
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Res<()> {
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        self.write(name, text)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    threads: usize,
    config: &'a str,
    outputs: Vec<String>,
}

pub fn run(cli: Cli) -> Res<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.global.threads {
        cfg.threads = t;
    }
    if cfg.threads == 0 {
        return Err(CliError::User("threads must be >= 1".into()));
    }
    apply_flags(&mut cfg, &cli.cmd)?;
    cfg.resolve();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))?;

    let name = cli.cmd.name();
    let root = cli
        .global
        .run_dir
        .clone()
        .or_else(|| RunConfig::path(&cfg.paths.run_dir))
        .unwrap_or_else(|| PathBuf::from("runs").join(name));
    let mut run = RunDir::create(root)?;
    let resolved = cfg.to_toml()?;
    run.write("resolved-config.toml", &resolved)?;

    match &cli.cmd {
        Command::Synth { .. } => cmd_synth(&cfg, &mut run)?,
        Command::Extract { audio, labels, .. } => {
            cmd_extract(&cfg, audio, labels.as_deref(), &mut run)?
        }
        Command::Stats { split, .. } => cmd_stats(&cfg, split, &mut run)?,
        Command::Train { init, .. } => cmd_train(&cfg, init.as_deref(), &mut run)?,
        Command::Embed { .. } => cmd_embed(&cfg, &mut run)?,
        Command::Probe { grid, .. } => cmd_probe(&cfg, *grid, &mut run)?,
        Command::SweepBlocks { blocks, .. } => cmd_sweep_blocks(&cfg, blocks, &mut run)?,
        Command::Bench { probe, .. } => cmd_bench(&cfg, *probe, &mut run)?,
    }

    let manifest = Manifest {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        threads: cfg.threads,
        config: "resolved-config.toml",
        outputs: run.outputs.clone(),
    };
    run.write_json("manifest.json", &manifest)?;
    Ok(())
}

fn set_path(slot: &mut String, p: &Option<PathBuf>) {
    if let Some(p) = p {
        *slot = p.display().to_string();
    }
}

fn apply_store(cfg: &mut RunConfig, d: &StoreArgs) {
    set_path(&mut cfg.paths.store, &d.store);
    set_path(&mut cfg.paths.splits, &d.splits);
}

fn apply_patchout(cfg: &mut RunConfig, p: &PatchoutArgs) {
    let po = &mut cfg.embed.patchout;
    if p.t_keep.is_none() && p.f_rows.is_none() && p.phase.is_none() {
        return;
    }
    if po.mode == PatchoutMode::None || po.mode == PatchoutMode::TrainingRandom {
        *po = PatchoutSpec::inference(1, Vec::new());
    }
    if let Some(t) = p.t_keep {
        po.t_keep = t;
    }
    if let Some(n) = p.f_rows {
        // resolved against the grid height once the model is known
        po.f_drop = n;
        po.f_rows.clear();
        po.mode = if n == 0 {
            PatchoutMode::InferenceTimeKeep
        } else {
            PatchoutMode::InferenceFreqDrop
        };
    }
    if let Some(ph) = p.phase {
        po.phase = ph;
    }
}

fn apply_flags(cfg: &mut RunConfig, cmd: &Command) -> Res<()> {
    match cmd {
        Command::Synth {
            store,
            clips,
            classes,
        } => {
            set_path(&mut cfg.paths.store, store);
            if let Some(n) = clips {
                cfg.toy.n_clips = *n;
            }
            if let Some(k) = classes {
                cfg.toy.n_classes = *k;
            }
        }
        Command::Extract { store, .. } => set_path(&mut cfg.paths.store, store),
        Command::Stats { data, .. } => apply_store(cfg, data),
        Command::Train { data, epochs, .. } => {
            apply_store(cfg, data);
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
        }
        Command::Embed {
            data,
            weights,
            espec,
            patchout,
        } => {
            apply_store(cfg, data);
            set_path(&mut cfg.paths.weights, weights);
            if let Some(e) = espec {
                cfg.embed.espec = e.clone();
            }
            apply_patchout(cfg, patchout);
        }
        Command::Probe { dataset, .. } => set_path(&mut cfg.paths.dataset, dataset),
        Command::SweepBlocks { data, weights, .. } => {
            apply_store(cfg, data);
            set_path(&mut cfg.paths.weights, weights);
        }
        Command::Bench {
            data,
            weights,
            repetitions,
            ..
        } => {
            apply_store(cfg, data);
            set_path(&mut cfg.paths.weights, weights);
            if let Some(r) = repetitions {
                cfg.bench.repetitions = *r;
            }
        }
    }
    Ok(())
}

fn required(s: &str, what: &str, flag: &str) -> Res<PathBuf> {
    RunConfig::path(s).ok_or_else(|| {
        CliError::User(format!(
            "no {what} given (use {flag} or [paths] in the config)"
        ))
    })
}

fn open_store(cfg: &RunConfig) -> Res<SpectrogramStore> {
    let root = required(&cfg.paths.store, "store", "--store")?;
    if !root.is_dir() {
        return Err(CliError::User(format!(
            "store {} does not exist",
            root.display()
        )));
    }
    Ok(SpectrogramStore::open(root)?)
}

fn write_splits(path: &Path, splits: [&[String]; 3]) -> Res<()> {
    let mut text = String::new();
    for (s, ids) in Split::ALL.iter().zip(splits) {
        for id in ids {
            text.push_str(&format!("{id}\t{}\n", s.name()));
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Track ids per split, in file order.
fn read_splits(cfg: &RunConfig, store: &SpectrogramStore) -> Res<[Vec<String>; 3]> {
    let path = RunConfig::path(&cfg.paths.splits).unwrap_or_else(|| store.root().join(SPLITS_FILE));
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::User(format!("cannot read splits file {}: {e}", path.display())))?;
    let mut out: [Vec<String>; 3] = Default::default();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, split) = line.split_once('\t').ok_or_else(|| {
            CliError::User(format!(
                "{}:{}: expected id<TAB>split",
                path.display(),
                n + 1
            ))
        })?;
        let k = Split::ALL
            .iter()
            .position(|s| s.name() == split.trim())
            .ok_or_else(|| {
                CliError::User(format!(
                    "{}:{}: unknown split {split:?}",
                    path.display(),
                    n + 1
                ))
            })?;
        store.entry(id)?;
        out[k].push(id.to_owned());
    }
    Ok(out)
}

fn split_index(name: &str) -> Res<usize> {
    Split::ALL
        .iter()
        .position(|s| s.name() == name)
        .ok_or_else(|| CliError::User(format!("unknown split {name:?} (train, valid or test)")))
}

fn cmd_synth(cfg: &RunConfig, run: &mut RunDir) -> Res<()> {
    let root = required(&cfg.paths.store, "store", "--store")?;
    let store = build_toy_store(&root, &cfg.toy, &cfg.mel)?;
    let (tr, va, te) = split_ids(store.track_ids(), cfg.toy.n_classes);
    write_splits(&root.join(SPLITS_FILE), [&tr, &va, &te])?;
    run.write_json(
        "synth.json",
        &BTreeMap::from([
            ("tracks", store.len()),
            ("train", tr.len()),
            ("valid", va.len()),
            ("test", te.len()),
        ]),
    )?;
    println!("wrote {} tracks to {}", store.len(), root.display());
    Ok(())
}

fn audio_files(audio: &Path) -> Res<Vec<PathBuf>> {
    let mut files = if audio.is_dir() {
        fs::read_dir(audio)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect::<Vec<_>>()
    } else {
        let text = fs::read_to_string(audio).map_err(|e| {
            CliError::User(format!("cannot read audio list {}: {e}", audio.display()))
        })?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| PathBuf::from(l.trim()))
            .collect()
    };
    files.sort();
    if files.is_empty() {
        return Err(CliError::User(format!(
            "no audio files under {}",
            audio.display()
        )));
    }
    Ok(files)
}

fn read_labels(path: &Path) -> Res<BTreeMap<String, Vec<u32>>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::User(format!("cannot read labels {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, labels) = line.split_once('\t').unwrap_or((line, ""));
        let labels = labels
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::User(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.insert(id.trim().to_owned(), labels);
    }
    Ok(out)
}

fn cmd_extract(cfg: &RunConfig, audio: &Path, labels: Option<&Path>, run: &mut RunDir) -> Res<()> {
    let root = required(&cfg.paths.store, "store", "--store")?;
    let files = audio_files(audio)?;
    let labels = labels.map(read_labels).transpose()?;
    let ex = MelExtractor::new(cfg.mel)?;
    let mut store = SpectrogramStore::open(&root)?;
    let mut ids = Vec::new();
    for f in &files {
        let id = f
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::User(format!("bad file name {}", f.display())))?
            .to_owned();
        let clip = read_wav(f).map_err(|e| CliError::User(format!("{}: {e}", f.display())))?;
        let spec = ex
            .compute(&center_crop_30s(&clip))
            .map_err(|e| CliError::User(format!("{}: {e}", f.display())))?;
        let y = match &labels {
            Some(m) => m
                .get(&id)
                .cloned()
                .ok_or_else(|| CliError::User(format!("no labels for track {id}")))?,
            None => Vec::new(),
        };
        store.write(&spec, &id, &y)?;
        ids.push(id);
    }
    let splits_path = root.join(SPLITS_FILE);
    if !splits_path.exists() {
        let (tr, va, te) = split_ids(store.track_ids(), 1);
        write_splits(&splits_path, [&tr, &va, &te])?;
    }
    run.write("tracks.txt", ids.join("\n") + "\n")?;
    println!("extracted {} tracks into {}", ids.len(), root.display());
    Ok(())
}

fn cmd_stats(cfg: &RunConfig, split: &str, run: &mut RunDir) -> Res<()> {
    let store = open_store(cfg)?;
    let splits = read_splits(cfg, &store)?;
    let stats = compute_stats(&store, &splits[split_index(split)?])?;
    run.write_json(STATS_FILE, &stats)?;
    println!("mean {} std {}", stats.mean, stats.std);
    Ok(())
}

fn cmd_train(cfg: &RunConfig, init: Option<&Path>, run: &mut RunDir) -> Res<()> {
    let store = open_store(cfg)?;
    let splits = read_splits(cfg, &store)?;
    let stats = match RunConfig::path(&cfg.paths.stats) {
        Some(p) => Some(read_stats(&p)?),
        None => None,
    };
    let corpus = Corpus::from_store(&store, &splits[0], &splits[1], stats)?;
    let init = init.map(|p| load_archive(p, &cfg.model)).transpose()?;
    let out = fit(&corpus, &cfg.model, &cfg.train, init, |m| {
        eprintln!(
            "epoch {:>3} lr {:.3e} loss {:.5} val_auc {}",
            m.epoch,
            m.lr,
            m.train_loss,
            m.val_roc_auc.map_or("-".into(), |v| format!("{v:.4}"))
        )
    })?;
    let mut log = Vec::new();
    write_metrics_log(&mut log, &out.log)?;
    run.write("metrics.jsonl", log)?;
    weights_save(&out.final_weights, run.path("final.maestw"))?;
    if let Some(w) = &out.swa_weights {
        weights_save(w, run.path("swa.maestw"))?;
    }
    run.write_json(MODEL_SIDECAR, &cfg.model)?;
    run.write_json(STATS_FILE, &corpus.stats)?;
    println!(
        "trained {} epochs; outputs in {}",
        out.log.len(),
        run.root.display()
    );
    Ok(())
}

fn read_stats(path: &Path) -> Res<NormStats> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::User(format!("cannot read stats {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

/// The model shape comes from `model.json` beside the archive, else from `[model]`.
fn model_config_for(path: &Path, fallback: &ModelConfig) -> Res<ModelConfig> {
    let sidecar = path.with_file_name(MODEL_SIDECAR);
    if !sidecar.exists() {
        return Ok(*fallback);
    }
    let text = fs::read_to_string(&sidecar)?;
    serde_json::from_str(&text).map_err(|e| CliError::User(format!("{}: {e}", sidecar.display())))
}

fn load_archive(path: &Path, fallback: &ModelConfig) -> Res<ModelWeights<f32>> {
    if !path.is_file() {
        return Err(CliError::User(format!(
            "weights archive {} not found; no tensors could be loaded",
            path.display()
        )));
    }
    let mcfg = model_config_for(path, fallback)?;
    Ok(weights_load(path, &mcfg)?)
}

fn load_weights(cfg: &RunConfig) -> Res<(ModelWeights<f32>, PathBuf)> {
    let path = required(&cfg.paths.weights, "weights", "--weights")?;
    Ok((load_archive(&path, &cfg.model)?, path))
}

/// Stats from `--stats`, else `stats.json` beside the weights, else the training split.
fn stats_for(
    cfg: &RunConfig,
    weights: &Path,
    store: &SpectrogramStore,
    train: &[String],
) -> Res<NormStats> {
    if let Some(p) = RunConfig::path(&cfg.paths.stats) {
        return read_stats(&p);
    }
    let beside = weights.with_file_name(STATS_FILE);
    if beside.exists() {
        return read_stats(&beside);
    }
    Ok(compute_stats(store, train)?)
}

fn resolve_patchout(spec: &PatchoutSpec, freq: usize) -> Res<PatchoutSpec> {
    let mut po = spec.clone();
    if po.mode == PatchoutMode::TrainingRandom {
        return Err(CliError::User(
            "embedding extraction needs an inference patchout mode".into(),
        ));
    }
    if po.f_rows.is_empty() && po.f_drop > 0 && po.mode != PatchoutMode::None {
        po.f_rows = edge_rows(freq, po.f_drop)?;
        po.f_drop = 0;
    }
    Ok(po)
}

fn store_n_labels(store: &SpectrogramStore) -> usize {
    store.label_count().max(1)
}

#[allow(clippy::too_many_arguments)]
fn embed_store(
    cfg: &RunConfig,
    store: &SpectrogramStore,
    splits: &[Vec<String>; 3],
    weights: &ModelWeights<f32>,
    wpath: &Path,
    espec: &EmbeddingSpec,
) -> Res<EmbeddingDataset> {
    let stats = stats_for(cfg, wpath, store, &splits[0])?;
    let po = resolve_patchout(&cfg.embed.patchout, weights.cfg.max_grid.freq)?;
    let model_id = wpath
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("model")
        .to_owned();
    Ok(build_dataset(
        store,
        [&splits[0], &splits[1], &splits[2]],
        weights,
        espec,
        &po,
        &stats,
        store_n_labels(store),
        &model_id,
    )?)
}

fn cmd_embed(cfg: &RunConfig, run: &mut RunDir) -> Res<()> {
    let (weights, wpath) = load_weights(cfg)?;
    let store = open_store(cfg)?;
    let splits = read_splits(cfg, &store)?;
    let espec: EmbeddingSpec = cfg.embed.espec.parse()?;
    espec.validate(weights.cfg.n_blocks)?;
    let ds = embed_store(cfg, &store, &splits, &weights, &wpath, &espec)?;
    let dir = run.path("dataset");
    ds.save(&dir)?;
    println!(
        "embedded {}/{}/{} tracks at dim {} into {}",
        ds.train.len(),
        ds.valid.len(),
        ds.test.len(),
        ds.dim,
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ProbeReport {
    config: maest::probe::ProbeConfig,
    seed: u64,
    best_epoch: usize,
    valid_roc_auc: f64,
    test: MetricReport,
}

fn grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::from("batch_size,epochs,dropout,lr_max,seed,valid_roc_auc,best_epoch,test_roc_auc,test_map,error\n");
    for r in rows {
        let t = r.test.as_ref();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.config.batch_size,
            r.config.epochs,
            r.config.dropout,
            r.config.lr_max,
            r.seed,
            r.valid_roc_auc.map_or(String::new(), |v| v.to_string()),
            r.best_epoch.map_or(String::new(), |v| v.to_string()),
            t.map_or(String::new(), |m| m.roc_auc.to_string()),
            t.map_or(String::new(), |m| m.map.to_string()),
            r.error.clone().unwrap_or_default().replace(',', ";"),
        ));
    }
    s
}

fn cmd_probe(cfg: &RunConfig, grid: bool, run: &mut RunDir) -> Res<()> {
    let dir = required(&cfg.paths.dataset, "dataset", "--dataset")?;
    let ds = EmbeddingDataset::load(&dir)?;
    if grid {
        let res = grid_search(&ds, &cfg.probe, &cfg.probe_grid, cfg.seed)?;
        run.write_json("report.json", &res)?;
        run.write("report.csv", grid_csv(&res.rows))?;
        let best = &res.rows[res.best];
        println!(
            "best of {} configs: valid ROC-AUC {:?}, test {:?}",
            res.rows.len(),
            best.valid_roc_auc,
            best.test
        );
    } else {
        let f = mlp_fit(&ds, &cfg.probe, cfg.seed)?;
        let report = ProbeReport {
            config: cfg.probe.clone(),
            seed: cfg.seed,
            best_epoch: f.best_epoch,
            valid_roc_auc: f.valid_roc_auc,
            test: f.test.clone(),
        };
        run.write_json("report.json", &report)?;
        run.write(
            "report.csv",
            format!(
                "best_epoch,valid_roc_auc,test_roc_auc,test_map\n{},{},{},{}\n",
                f.best_epoch, f.valid_roc_auc, f.test.roc_auc, f.test.map
            ),
        )?;
        println!(
            "test ROC-AUC {:.4} mAP {:.4} (epoch {})",
            f.test.roc_auc, f.test.map, f.best_epoch
        );
    }
    Ok(())
}

fn parse_blocks(s: &str) -> Res<Vec<usize>> {
    let bad = || CliError::User(format!("bad block range {s:?}; expected a-b"));
    let (a, b) = match s.split_once('-') {
        Some((a, b)) => (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        ),
        None => {
            let v: usize = s.trim().parse().map_err(|_| bad())?;
            (v, v)
        }
    };
    if a == 0 || b < a {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

fn cmd_sweep_blocks(cfg: &RunConfig, blocks: &str, run: &mut RunDir) -> Res<()> {
    let blocks = parse_blocks(blocks)?;
    let (weights, wpath) = load_weights(cfg)?;
    let store = open_store(cfg)?;
    let splits = read_splits(cfg, &store)?;
    let espec = sweep_espec(&blocks)?;
    espec.validate(weights.cfg.n_blocks)?;
    let ds = embed_store(cfg, &store, &splits, &weights, &wpath, &espec)?;
    let m = sweep_blocks(&ds, &cfg.probe, cfg.seed)?;
    run.write("sweep.csv", m.to_csv())?;
    run.write_json("sweep.json", &m)?;
    print!("{}", m.to_csv());
    Ok(())
}

fn bench_split(
    store: &SpectrogramStore,
    ids: &[String],
    stats: &NormStats,
    n_labels: usize,
) -> Res<Vec<(MelSpectrogram, Vec<u8>)>> {
    ids.iter()
        .map(|id| {
            let spec = normalize(&store.read(id)?, stats)?;
            let y = multi_hot(store.labels(id)?, n_labels)
                .into_iter()
                .map(|v| v as u8)
                .collect();
            Ok((spec, y))
        })
        .collect()
}

fn cmd_bench(cfg: &RunConfig, with_probe: bool, run: &mut RunDir) -> Res<()> {
    let (weights, wpath) = load_weights(cfg)?;
    let seg = model_segment_frames(&weights);
    let store = RunConfig::path(&cfg.paths.store)
        .map(|_| open_store(cfg))
        .transpose()?;
    let (input, probe) = match &store {
        Some(store) => {
            let splits = read_splits(cfg, store)?;
            let stats = stats_for(cfg, &wpath, store, &splits[0])?;
            let first = splits[2]
                .first()
                .or_else(|| splits[0].first())
                .ok_or_else(|| CliError::User("store has no tracks in its splits".into()))?;
            let input = center_segment(&normalize(&store.read(first)?, &stats)?, seg);
            let probe = if with_probe {
                let n_labels = store_n_labels(store);
                Some(ProbeBench {
                    train: bench_split(store, &splits[0], &stats, n_labels)?,
                    valid: bench_split(store, &splits[1], &stats, n_labels)?,
                    test: bench_split(store, &splits[2], &stats, n_labels)?,
                    n_labels,
                    espec: cfg.embed.espec.parse()?,
                    probe: cfg.probe.clone(),
                    seed: cfg.seed,
                })
            } else {
                None
            };
            (input, probe)
        }
        None => {
            if with_probe {
                return Err(CliError::User(
                    "--probe needs a labelled store (--store)".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let data: Vec<f32> = (0..cfg.mel.n_bands * seg)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            (
                MelSpectrogram::new(data, cfg.mel.n_bands, seg, cfg.mel.hop_ms as u16)?,
                None,
            )
        }
    };
    let rows = benchkit::sweep(&weights, &input, &cfg.bench, probe.as_ref())?;
    let (csv, json) = benchkit::emit_report(&rows, &run.root, "bench")?;
    for p in [csv, json] {
        if let Some(n) = p.file_name().and_then(|s| s.to_str()) {
            run.path(n);
        }
    }
    for r in &rows {
        println!(
            "{:<8} tokens {:>5} throughput {:>10.2} iqr {:>8.2}{}",
            r.setting,
            r.kept_tokens,
            r.throughput_median,
            r.throughput_iqr,
            r.map.map_or(String::new(), |m| format!(" mAP {m:.4}"))
        );
    }
    Ok(())
}
