use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use moodshift::catalog::{self, SplitAssignment, SplitName};
use moodshift::eval::{self, EvalReport, Method, OracleMode, RetrievalPool};
use moodshift::linalg::Mat;
use moodshift::model::{self, Mode};
use moodshift::simindex::{self, SimilarityMap};
use moodshift::{rng, synth, train, Catalog, MoodLabel};
use serde::Serialize;

use crate::config::{resolve, ExperimentConfig};
use crate::manifest::Recorder;
use crate::{Cli, Command, EvalArgs, IndexArgs, TransformArgs};

const STREAM_EVAL: u64 = 0x6576_616c;

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, p: impl AsRef<Path>) -> PathBuf {
        resolve(&self.out, p.as_ref())
    }

    fn emb_path(&self) -> PathBuf {
        self.path(&self.cfg.catalog.embeddings)
    }

    fn meta_path(&self) -> PathBuf {
        self.path(&self.cfg.catalog.metadata)
    }

    fn split_path(&self) -> PathBuf {
        self.path(&self.cfg.split.path)
    }

    fn simmap_path(&self, which: SplitName) -> PathBuf {
        self.out.join(format!("simmap_{which}.sim"))
    }

    fn load_catalog(&self, rec: &mut Recorder) -> Result<Catalog> {
        let (emb, meta) = (self.emb_path(), self.meta_path());
        let mut catalog = catalog::load_catalog(&emb, &meta, self.cfg.catalog.mood_count)?;
        let c = &self.cfg.catalog;
        if c.genre_count.is_some() || c.instrument_count.is_some() {
            let g = c.genre_count.unwrap_or(catalog.genre_count());
            let i = c.instrument_count.unwrap_or(catalog.instrument_count());
            catalog = catalog.with_label_counts(g, i)?;
        }
        rec.input(&emb);
        rec.input(&meta);
        Ok(catalog)
    }

    fn load_split(&self, catalog: &Catalog, rec: &mut Recorder) -> Result<SplitAssignment> {
        let path = self.split_path();
        let split = SplitAssignment::load(&path).context("run `index` first")?;
        split.validate(catalog)?;
        rec.input(&path);
        Ok(split)
    }

    fn load_simmap(&self, which: SplitName, rec: &mut Recorder) -> Result<SimilarityMap> {
        let path = self.simmap_path(which);
        let map = SimilarityMap::load(&path).with_context(|| format!("run `index --split {which}` first"))?;
        rec.input(&path);
        Ok(map)
    }

    fn write(&self, name: &str, contents: &str, rec: &mut Recorder) -> Result<PathBuf> {
        let path = self.out.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        rec.output(&path);
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T, rec: &mut Recorder) -> Result<PathBuf> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"), rec)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    let mut cfg = ExperimentConfig::load(g.config.as_deref())?;
    if let Some(seed) = g.seed {
        cfg = cfg.with_seed(seed);
    }
    std::fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display()))?;
    let ctx = Ctx { cfg, out: g.out };
    match cli.command {
        Command::Gen => cmd_gen(&ctx),
        Command::Index(a) => cmd_index(&ctx, &a),
        Command::Train => cmd_train(&ctx),
        Command::Evaluate(a) => cmd_evaluate(&ctx, &a, "evaluate"),
        Command::Compare(a) => cmd_evaluate(&ctx, &EvalArgs { method: "all".into(), ..a }, "compare"),
        Command::Ablate => cmd_ablate(&ctx),
        Command::Transform(a) => cmd_transform(&ctx, &a),
    }
}

/// 1 for invalid input or configuration, 2 for failures during a valid run.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<moodshift::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
        if cause.is::<serde_json::Error>() || cause.is::<clap::Error>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return if e.kind() == std::io::ErrorKind::NotFound { 1 } else { 2 };
        }
    }
    2
}

fn cmd_gen(ctx: &Ctx) -> Result<()> {
    let mut rec = Recorder::new("gen", &ctx.cfg);
    let catalog = synth::generate(&ctx.cfg.synth)?;
    let (emb, meta) = (ctx.emb_path(), ctx.meta_path());
    catalog::save_catalog(&catalog, &emb, &meta)?;
    rec.output(&emb);
    rec.output(&meta);
    log::info!("generated {} tracks, d = {}", catalog.len(), catalog.dim());
    rec.write(&ctx.out)?;
    Ok(())
}

fn cmd_index(ctx: &Ctx, args: &IndexArgs) -> Result<()> {
    let mut rec = Recorder::new("index", &ctx.cfg);
    let catalog = ctx.load_catalog(&mut rec)?;
    let split = catalog::split_catalog(&catalog, ctx.cfg.split.ratios, ctx.cfg.split.seed)?;
    let split_path = ctx.split_path();
    split.save(&split_path)?;
    rec.output(&split_path);
    let k = args.k.unwrap_or(ctx.cfg.train.k);
    for name in &args.splits {
        let which: SplitName = parse_split(name)?;
        let map = simindex::build_similarity_map(&catalog, &split, which, k)?;
        let path = ctx.simmap_path(which);
        map.save(&path)?;
        rec.output(&path);
        log::info!("{which}: {} seeds, K = {k}", map.len());
    }
    rec.write(&ctx.out)?;
    Ok(())
}

#[derive(Serialize)]
struct CheckpointSidecar<'a> {
    checkpoint: String,
    dim: usize,
    mood_count: usize,
    param_count: usize,
    param_checksum: u64,
    best_epoch: usize,
    best_val_mood_p1: f64,
    best_val_genre_p1: f64,
    train: &'a moodshift::TrainConfig,
    version: &'static str,
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let mut rec = Recorder::new("train", &ctx.cfg);
    let catalog = ctx.load_catalog(&mut rec)?;
    let tc = &ctx.cfg.train;
    if let Some(k) = tc.kfold {
        let report = train::train_kfold(&catalog, k, tc)?;
        let mut csv = String::from("fold,seed,mood_p1,genre_p1,inst_j1\n");
        for f in &report.folds {
            csv.push_str(&format!(
                "{},{},{:.6},{:.6},{}\n",
                f.fold,
                f.seed,
                f.test.mood_p1,
                f.test.genre_p1,
                opt(f.test.inst_j1)
            ));
        }
        let m = &report.mean;
        csv.push_str(&format!("mean,,{:.6},{:.6},{}\n", m.mood_p1, m.genre_p1, opt(m.inst_j1)));
        ctx.write("kfold.csv", &csv, &mut rec)?;
        ctx.write_json("kfold_report.json", &report, &mut rec)?;
        log::info!("{k}-fold mean: mood {:.4} genre {:.4}", m.mood_p1, m.genre_p1);
    } else {
        let split = ctx.load_split(&catalog, &mut rec)?;
        let simmap = ctx.load_simmap(SplitName::Train, &mut rec)?;
        let mut outcome = train::train_model(&catalog, &split, &simmap, tc)?;
        let ckpt = ctx.out.join("model.mdl");
        model::save_checkpoint(&outcome.params, &ckpt)?;
        rec.output(&ckpt);
        outcome.report.checkpoint = Some("model.mdl".into());
        let r = &outcome.report;
        ctx.write_json(
            "model.json",
            &CheckpointSidecar {
                checkpoint: "model.mdl".into(),
                dim: outcome.params.dim,
                mood_count: outcome.params.mood_count,
                param_count: outcome.params.param_count(),
                param_checksum: r.param_checksum,
                best_epoch: r.best_epoch,
                best_val_mood_p1: r.best_val_mood_p1,
                best_val_genre_p1: r.best_val_genre_p1,
                train: tc,
                version: env!("CARGO_PKG_VERSION"),
            },
            &mut rec,
        )?;
        ctx.write_json("train_report.json", r, &mut rec)?;
        ctx.write("train_log.csv", &r.to_csv(), &mut rec)?;
        log::info!(
            "best epoch {}: val mood {:.4} genre {:.4}",
            r.best_epoch,
            r.best_val_mood_p1,
            r.best_val_genre_p1
        );
    }
    rec.write(&ctx.out)?;
    Ok(())
}

fn cmd_evaluate(ctx: &Ctx, args: &EvalArgs, command: &str) -> Result<()> {
    let mut rec = Recorder::new(command, &ctx.cfg);
    let which = parse_split(&args.split)?;
    let methods: Vec<Method> = if args.method == "all" {
        Method::ALL.to_vec()
    } else {
        vec![args.method.parse().map_err(|e: moodshift::Error| anyhow::Error::new(e))?]
    };
    let catalog = ctx.load_catalog(&mut rec)?;
    let needs_split = methods.iter().any(|m| *m != Method::Random);
    let split = if needs_split { Some(ctx.load_split(&catalog, &mut rec)?) } else { None };
    let mut oracle_map: Option<SimilarityMap> = None;
    let mut oracle_rng = rng::stream(ctx.cfg.eval_seed, STREAM_EVAL);
    let mut reports: Vec<EvalReport> = Vec::new();
    for method in methods {
        let report = match method {
            Method::Random => eval::baseline_random(&catalog),
            Method::AvgMood => eval::baseline_avg_mood(&catalog, split.as_ref().unwrap(), which)?,
            Method::Model => {
                let path = args.checkpoint.clone().unwrap_or_else(|| ctx.out.join("model.mdl"));
                let params = model::load_checkpoint(&path, Some(ctx.cfg.train.architecture))
                    .context("run `train` first or pass --checkpoint")?;
                rec.input(&path);
                eval::evaluate_model(&params, &catalog, split.as_ref().unwrap(), which)?
            }
            Method::OracleTop1 | Method::OracleTop100 => {
                if oracle_map.is_none() {
                    let path = ctx.simmap_path(which);
                    oracle_map = Some(if path.exists() {
                        ctx.load_simmap(which, &mut rec)?
                    } else {
                        simindex::build_similarity_map(&catalog, split.as_ref().unwrap(), which, ctx.cfg.train.k)?
                    });
                }
                let mode = if method == Method::OracleTop1 { OracleMode::Top1 } else { OracleMode::TopK };
                eval::baseline_oracle(&catalog, oracle_map.as_ref().unwrap(), mode, &mut oracle_rng)?
            }
        };
        log::info!(
            "{method}: mood {:.4} genre {:.4} inst {}",
            report.mood_p1,
            report.genre_p1,
            opt(report.inst_j1)
        );
        if !report.confusion.is_empty() {
            ctx.write(&format!("confusion_{method}_{which}.csv"), &report.confusion_csv(), &mut rec)?;
        }
        reports.push(report);
    }
    let stem = if command == "compare" { format!("compare_{which}") } else { format!("eval_{which}") };
    let mut csv = String::from(EvalReport::csv_header());
    csv.push('\n');
    for r in &reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    ctx.write(&format!("{stem}.csv"), &csv, &mut rec)?;
    ctx.write_json(&format!("{stem}.json"), &reports, &mut rec)?;
    if command == "compare" {
        print!("{csv}");
    }
    rec.write(&ctx.out)?;
    Ok(())
}

fn cmd_ablate(ctx: &Ctx) -> Result<()> {
    let mut rec = Recorder::new("ablate", &ctx.cfg);
    let catalog = ctx.load_catalog(&mut rec)?;
    let split = ctx.load_split(&catalog, &mut rec)?;
    let simmap = ctx.load_simmap(SplitName::Train, &mut rec)?;
    let table = train::run_ablation(&catalog, &split, &simmap, &ctx.cfg.train)?;
    ctx.write("ablation.csv", &table.to_csv(), &mut rec)?;
    ctx.write("ablation_pp.csv", &table.pp_view(), &mut rec)?;
    ctx.write_json("ablation.json", &table, &mut rec)?;
    print!("{}", table.pp_view());
    rec.write(&ctx.out)?;
    Ok(())
}

#[derive(Serialize)]
struct NeighborRecord {
    id: String,
    similarity: f64,
}

#[derive(Serialize)]
struct TransformRecord {
    index: usize,
    seed_mood: u32,
    target_mood: u32,
    vector: Vec<f32>,
    neighbors: Vec<NeighborRecord>,
}

fn cmd_transform(ctx: &Ctx, args: &TransformArgs) -> Result<()> {
    let mut rec = Recorder::new("transform", &ctx.cfg);
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| ctx.out.join("model.mdl"));
    let params = model::load_checkpoint(&ckpt, Some(ctx.cfg.train.architecture))?;
    rec.input(&ckpt);
    let (dim, rows) = catalog::read_embeddings(&args.input)?;
    rec.input(&args.input);
    if dim != params.dim {
        return Err(invalid(format!("input dimension {dim} does not match checkpoint dimension {}", params.dim)));
    }
    let m = params.mood_count as u32;
    let seed_moods: Vec<u32> = match (&args.seed_mood, &args.seed_moods) {
        (Some(s), None) => vec![*s; rows.len()],
        (None, Some(path)) => {
            rec.input(path);
            read_moods(path)?
        }
        _ => return Err(invalid("pass exactly one of --seed-mood or --seed-moods".into())),
    };
    if seed_moods.len() != rows.len() {
        return Err(invalid(format!(
            "{} seed moods for {} input embeddings",
            seed_moods.len(),
            rows.len()
        )));
    }
    for (i, &s) in seed_moods.iter().chain(std::iter::once(&args.target_mood)).enumerate() {
        if s >= m {
            let what = if i == rows.len() { "target mood".to_string() } else { format!("seed mood of row {i}") };
            return Err(invalid(format!("{what} {s} is out of range for {m} moods")));
        }
    }

    let catalog = ctx.load_catalog(&mut rec)?;
    if catalog.dim() != params.dim {
        return Err(invalid(format!(
            "catalog dimension {} does not match checkpoint dimension {}",
            catalog.dim(),
            params.dim
        )));
    }
    let pool_idx: Vec<usize> = match &args.split {
        Some(s) => ctx.load_split(&catalog, &mut rec)?.indices(&catalog, parse_split(s)?),
        None => (0..catalog.len()).collect(),
    };
    let pool = RetrievalPool::new(&catalog, &pool_idx)?;

    let out_path = args.output.clone().unwrap_or_else(|| ctx.out.join("transform.jsonl"));
    let file = std::fs::File::create(&out_path).with_context(|| format!("creating {}", out_path.display()))?;
    let mut w = std::io::BufWriter::new(file);
    const CHUNK: usize = 1024;
    for (c, chunk) in rows.chunks(CHUNK).enumerate() {
        let mut x = Mat::<f32>::zeros(chunk.len(), dim);
        for (r, row) in chunk.iter().enumerate() {
            x.row_mut(r).copy_from_slice(row);
        }
        let base = c * CHUNK;
        let y_s: Vec<MoodLabel> = seed_moods[base..base + chunk.len()].iter().map(|&s| MoodLabel(s)).collect();
        let y_t = vec![MoodLabel(args.target_mood); chunk.len()];
        let (pred, _) = model::forward(&params, &x, &y_s, &y_t, Mode::Eval)?;
        for r in 0..chunk.len() {
            let vector = pred.row(r).to_vec();
            let neighbors = pool
                .top_k(&vector, &[], args.k)?
                .into_iter()
                .map(|(i, s)| NeighborRecord {
                    id: catalog.track(i).id.clone(),
                    similarity: s,
                })
                .collect();
            let record = TransformRecord {
                index: base + r,
                seed_mood: y_s[r].0,
                target_mood: args.target_mood,
                vector,
                neighbors,
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    drop(w);
    rec.output(&out_path);
    log::info!("transformed {} embeddings into {}", rows.len(), out_path.display());
    rec.write(&ctx.out)?;
    Ok(())
}

fn read_moods(path: &Path) -> Result<Vec<u32>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.split_whitespace()
        .enumerate()
        .map(|(i, t)| {
            t.parse::<u32>()
                .map_err(|_| invalid(format!("{}: entry {} ({t:?}) is not a mood index", path.display(), i + 1)))
        })
        .collect()
}

fn parse_split(s: &str) -> Result<SplitName> {
    s.parse::<SplitName>().map_err(anyhow::Error::new)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn invalid(msg: String) -> anyhow::Error {
    anyhow::Error::new(moodshift::Error::InvalidInput(msg))
}
