//! Command-line driver for the generate/retrieve/rerank pipeline.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use genrank::backbone::{init_model, load_checkpoint, save_checkpoint, Model};
use genrank::corpus::Corpus;
use genrank::data::{
    generate_synthetic, load_taobao_mm, read_embeddings, write_embeddings, write_sequences,
    Instance,
};
use genrank::decode::BeamOptions;
use genrank::evaluation::{evaluate, run_ablation, AblationAxis, YhatMode};
use genrank::rerank::{recommend, QueryOptions};
use genrank::serialization::serialize_history;
use genrank::tokenizer::{load_codebook, save_codebook, tokenize_catalog, QUANTIZED_LEVELS};
use genrank::training::{
    metrics_csv, train_stage1, train_stage2, validation_loss_sid, validation_losses,
};

use config::{config_path_for, RunConfig, SplitName};

#[derive(Parser)]
#[command(
    name = "genrank",
    version,
    about = "Generative retrieval and ranking over semantic item IDs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct DataArgs {
    /// Embeddings file (binary, see `gen-data`).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Sequences file: `user<TAB>item,item,...` per line.
    #[arg(long)]
    sequences: Option<PathBuf>,
    /// Codebook written by `tokenize`.
    #[arg(long)]
    codebook: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct EvalArgs {
    /// Model checkpoint
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Beam width.
    #[arg(long)]
    beam: Option<usize>,
    /// Retrieval length.
    #[arg(long)]
    retrieval: Option<usize>,
    /// History window in items.
    #[arg(long)]
    window: Option<usize>,
    /// Source of click probabilities: model, constant or oracle.
    #[arg(long)]
    yhat: Option<YhatMode>,
    #[arg(long, value_enum)]
    split: Option<SplitName>,
    /// Evaluate only the first N instances.
    #[arg(long)]
    limit: Option<usize>,
    /// Decode without the prefix trie.
    #[arg(long)]
    unconstrained: bool,
}

#[derive(Args, Clone, Default)]
struct TrainArgs {
    /// Optimizer steps
    #[arg(long)]
    steps: Option<usize>,
    /// Peak learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Instances per step
    #[arg(long)]
    batch: Option<usize>,
    /// Linear warmup steps
    #[arg(long)]
    warmup: Option<usize>,
    /// History window in items.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic catalog and user sequences.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of users
        #[arg(long)]
        users: Option<usize>,
        /// Catalog size
        #[arg(long)]
        items: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the residual quantizer and assign semantic IDs.
    Tokenize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Codes per level.
        #[arg(long)]
        k: Option<usize>,
        /// Quantized levels; only 3 is supported.
        #[arg(long, default_value_t = QUANTIZED_LEVELS)]
        levels: usize,
        /// Largest number of items sharing one code prefix.
        #[arg(long)]
        s4_max: Option<usize>,
        /// Codebook output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Teacher-forced SID pretraining.
    TrainStage1 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Joint SID and rank training from a Stage I checkpoint.
    TrainStage2 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Stage I checkpoint to start from
        #[arg(long)]
        checkpoint: PathBuf,
        /// Beam width used to form candidates.
        #[arg(long)]
        beam: Option<usize>,
        /// Retrieval length.
        #[arg(long)]
        retrieval: Option<usize>,
        /// Rank-loss gradients reach only the rank head.
        #[arg(long)]
        head_only: bool,
        /// BCE weight on the positive candidate
        #[arg(long)]
        pos_weight: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Base and Rank metrics on a split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        eval: EvalArgs,
        /// Metrics CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a grid of beam widths, window lengths or retrieval lengths.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        eval: EvalArgs,
        /// beam, seq_len or retrieval_len.
        #[arg(long)]
        axis: AblationAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Long-format CSV; an aligned table goes next to it as .txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recommend for one user from their full history.
    Infer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        eval: EvalArgs,
        /// User ID as written in the sequences file.
        #[arg(long)]
        user: u64,
        /// Per-candidate CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Beam trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut RunConfig, d: &DataArgs) {
    if d.embeddings.is_some() {
        cfg.data.embeddings = d.embeddings.clone();
    }
    if d.sequences.is_some() {
        cfg.data.sequences = d.sequences.clone();
    }
    if d.codebook.is_some() {
        cfg.data.codebook = d.codebook.clone();
    }
}

fn apply_eval(cfg: &mut RunConfig, e: &EvalArgs) {
    let s = &mut cfg.eval;
    if e.checkpoint.is_some() {
        s.checkpoint = e.checkpoint.clone();
    }
    s.beam = e.beam.unwrap_or(s.beam);
    s.retrieval = e.retrieval.unwrap_or(s.retrieval);
    s.window = e.window.unwrap_or(s.window);
    s.yhat = e.yhat.unwrap_or(s.yhat);
    s.split = e.split.unwrap_or(s.split);
    s.limit = e.limit.unwrap_or(s.limit);
    if e.unconstrained {
        s.constrained = false;
    }
}

fn apply_train(t: &mut genrank::training::TrainConfig, a: &TrainArgs) {
    t.total_steps = a.steps.unwrap_or(t.total_steps);
    t.lr = a.lr.unwrap_or(t.lr);
    t.batch = a.batch.unwrap_or(t.batch);
    t.warmup = a.warmup.unwrap_or(t.warmup).min(t.total_steps);
    t.window = a.window.unwrap_or(t.window);
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let emb = RunConfig::require(&cfg.data.embeddings, "data.embeddings")?;
    let seqs = RunConfig::require(&cfg.data.sequences, "data.sequences")?;
    let cb = RunConfig::require(&cfg.data.codebook, "data.codebook")?;
    let (catalog, sequences, report) = load_taobao_mm(emb, seqs, cfg.data.max_history)
        .with_context(|| format!("loading {} and {}", emb.display(), seqs.display()))?;
    if report.dropped_events + report.dropped_users > 0 {
        eprintln!(
            "dropped {} events without embeddings and {} users with fewer than two events",
            report.dropped_events, report.dropped_users
        );
    }
    let (codebook, index) =
        load_codebook(cb).with_context(|| format!("loading codebook {}", cb.display()))?;
    codebook.check_dim(catalog.dim())?;
    Ok(Corpus::new(catalog, sequences, codebook, index)?)
}

fn load_model(path: &Path, corpus: &Corpus) -> Result<Model> {
    let model =
        load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if model.config().vocab != corpus.vocab.size() {
        bail!(
            "checkpoint vocabulary {} does not match the codebook's {}",
            model.config().vocab,
            corpus.vocab.size()
        );
    }
    Ok(model)
}

fn instances(corpus: &Corpus, split: SplitName, limit: usize) -> Vec<Instance> {
    let all = match split {
        SplitName::Valid => &corpus.split.valid,
        SplitName::Test => &corpus.split.test,
    };
    let n = if limit == 0 {
        all.len()
    } else {
        limit.min(all.len())
    };
    all[..n].to_vec()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            common,
            users,
            items,
            out,
        } => {
            let mut cfg = base_config(&common)?;
            let syn = &mut cfg.data.synthetic;
            syn.users = users.unwrap_or(syn.users);
            syn.items = items.unwrap_or(syn.items);
            let cfg = cfg.resolve();
            let (catalog, seqs) = generate_synthetic(&cfg.data.synthetic)?;
            create_dir(&out)?;
            write(&out.join("embeddings.bin"), write_embeddings(&catalog))?;
            write(&out.join("sequences.tsv"), write_sequences(&catalog, &seqs))?;
            cfg.write(&out.join("config.toml"))?;
            println!(
                "{} items, {} users written to {}",
                catalog.len(),
                seqs.len(),
                out.display()
            );
        }
        Command::Tokenize {
            common,
            embeddings,
            k,
            levels,
            s4_max,
            out,
        } => {
            if levels != QUANTIZED_LEVELS {
                bail!("only {QUANTIZED_LEVELS} quantized levels are supported, got {levels}");
            }
            let mut cfg = base_config(&common)?;
            if embeddings.is_some() {
                cfg.data.embeddings = embeddings;
            }
            cfg.tokenizer.k = k.unwrap_or(cfg.tokenizer.k);
            cfg.tokenizer.s4_max = s4_max.unwrap_or(cfg.tokenizer.s4_max);
            let cfg = cfg.resolve();
            let path = RunConfig::require(&cfg.data.embeddings, "data.embeddings")?;
            let catalog = read_embeddings(
                &fs::read(path).with_context(|| format!("reading {}", path.display()))?,
            )?;
            let (codebook, index) = tokenize_catalog(
                &catalog.to_f64(),
                catalog.dim(),
                cfg.tokenizer.k,
                cfg.tokenizer.s4_max,
                cfg.seed,
            )?;
            save_codebook(&out, &codebook, &index)?;
            cfg.write(&config_path_for(&out))?;
            let stats = index.collision_stats();
            let mse = codebook.level_mse(&catalog.to_f64())?;
            println!("items               {}", stats.items);
            println!("distinct prefixes   {}", stats.distinct_prefixes);
            println!("colliding groups    {}", stats.colliding_groups);
            println!("largest group       {}", stats.largest_group);
            println!(
                "unique SIDs         {} ({:.2}%)",
                stats.distinct_sids,
                100.0 * stats.distinct_sids as f64 / stats.items.max(1) as f64
            );
            let mse: Vec<String> = mse.iter().map(|m| format!("{m:.6}")).collect();
            println!("level residual MSE  {}", mse.join(" "));
        }
        Command::TrainStage1 {
            common,
            data,
            train,
            out,
        } => {
            let mut cfg = base_config(&common)?;
            apply_data(&mut cfg, &data);
            apply_train(&mut cfg.stage1, &train);
            let corpus = load_corpus(&cfg)?;
            cfg.model.vocab = corpus.vocab.size();
            let cfg = cfg.resolve();
            create_dir(&out)?;
            cfg.write(&out.join("config.toml"))?;
            let mut model = init_model(&cfg.model)?;
            let t = &cfg.stage1;
            let valid = &corpus.split.valid[..t.eval_instances.min(corpus.split.valid.len())];
            let mut val_rows = String::from("step,valid_loss_sid\n");
            let rows = train_stage1(&mut model, &corpus, t, |row, m| {
                if t.eval_every > 0 && (row.step + 1) % t.eval_every == 0 && !valid.is_empty() {
                    let v = validation_loss_sid(m, &corpus, valid, t.window)?;
                    val_rows.push_str(&format!("{},{v:.6}\n", row.step));
                    eprintln!(
                        "step {:>6}  loss_sid {:.4}  valid {:.4}",
                        row.step, row.loss_sid, v
                    );
                } else if row.step % 50 == 0 {
                    eprintln!("step {:>6}  loss_sid {:.4}", row.step, row.loss_sid);
                }
                Ok(())
            })?;
            write(&out.join("metrics.csv"), metrics_csv(&rows))?;
            if t.eval_every > 0 {
                write(&out.join("validation.csv"), val_rows)?;
            }
            save_checkpoint(&model, out.join("model.ckpt"))?;
            println!("checkpoint written to {}", out.join("model.ckpt").display());
        }
        Command::TrainStage2 {
            common,
            data,
            train,
            checkpoint,
            beam,
            retrieval,
            head_only,
            pos_weight,
            out,
        } => {
            let mut cfg = base_config(&common)?;
            apply_data(&mut cfg, &data);
            let t = &mut cfg.stage2;
            apply_train(t, &train);
            t.beam = beam.unwrap_or(t.beam);
            t.retrieval = retrieval.unwrap_or(t.retrieval);
            t.pos_weight = pos_weight.unwrap_or(t.pos_weight);
            if head_only {
                t.head_only = true;
            }
            let corpus = load_corpus(&cfg)?;
            let mut model = load_model(&checkpoint, &corpus)?;
            cfg.model = model.config().clone();
            let cfg = cfg.resolve();
            create_dir(&out)?;
            cfg.write(&out.join("config.toml"))?;
            let t = &cfg.stage2;
            let valid = &corpus.split.valid[..t.eval_instances.min(corpus.split.valid.len())];
            let mut val_rows = String::from("step,valid_loss_sid,valid_loss_rank\n");
            let rows = train_stage2(&mut model, &corpus, t, |row, report, m| {
                if t.eval_every > 0 && (row.step + 1) % t.eval_every == 0 && !valid.is_empty() {
                    let (s, r) = validation_losses(m, &corpus, valid, t)?;
                    val_rows.push_str(&format!("{},{s:.6},{r:.6}\n", row.step));
                    eprintln!(
                        "step {:>6}  valid loss_sid {s:.4}  loss_rank {r:.4}",
                        row.step
                    );
                } else if row.step % 10 == 0 {
                    eprintln!(
                        "step {:>6}  loss_sid {:.4}  loss_rank {:.4}  positives {}/{}",
                        row.step, row.loss_sid, row.loss_rank, report.positives, report.used
                    );
                }
                Ok(())
            })?;
            write(&out.join("metrics.csv"), metrics_csv(&rows))?;
            if t.eval_every > 0 {
                write(&out.join("validation.csv"), val_rows)?;
            }
            save_checkpoint(&model, out.join("model.ckpt"))?;
            println!("checkpoint written to {}", out.join("model.ckpt").display());
        }
        Command::Eval {
            common,
            data,
            eval,
            out,
        } => {
            let mut cfg = base_config(&common)?;
            apply_data(&mut cfg, &data);
            apply_eval(&mut cfg, &eval);
            let cfg = cfg.resolve();
            let corpus = load_corpus(&cfg)?;
            let model = load_model(
                RunConfig::require(&cfg.eval.checkpoint, "eval.checkpoint")?,
                &corpus,
            )?;
            let insts = instances(&corpus, cfg.eval.split, cfg.eval.limit);
            let res = evaluate(&model, &corpus, &insts, &cfg.eval.eval_config())?;
            let label = match cfg.eval.split {
                SplitName::Valid => "valid",
                SplitName::Test => "test",
            };
            write(&out, res.to_csv(label))?;
            cfg.write(&config_path_for(&out))?;
            print!("{}", res.to_csv(label));
            println!(
                "{} instances, {} skipped, beam hit rate {:.4}",
                res.instances,
                res.skipped,
                res.beam_hit_rate()
            );
        }
        Command::Ablate {
            common,
            data,
            eval,
            axis,
            values,
            out,
        } => {
            let mut cfg = base_config(&common)?;
            apply_data(&mut cfg, &data);
            apply_eval(&mut cfg, &eval);
            let cfg = cfg.resolve();
            let corpus = load_corpus(&cfg)?;
            let model = load_model(
                RunConfig::require(&cfg.eval.checkpoint, "eval.checkpoint")?,
                &corpus,
            )?;
            let insts = instances(&corpus, cfg.eval.split, cfg.eval.limit);
            let grid = run_ablation(
                &model,
                &corpus,
                &insts,
                axis,
                &values,
                &cfg.eval.eval_config(),
            )?;
            write(&out, grid.to_csv())?;
            write(&out.with_extension("txt"), grid.to_table())?;
            cfg.write(&config_path_for(&out))?;
            print!("{}", grid.to_table());
        }
        Command::Infer {
            common,
            data,
            eval,
            user,
            out,
            trace,
        } => {
            let mut cfg = base_config(&common)?;
            apply_data(&mut cfg, &data);
            apply_eval(&mut cfg, &eval);
            let cfg = cfg.resolve();
            let corpus = load_corpus(&cfg)?;
            let model = load_model(
                RunConfig::require(&cfg.eval.checkpoint, "eval.checkpoint")?,
                &corpus,
            )?;
            let Some(seq) = corpus.sequences.iter().find(|s| s.user_id == user) else {
                bail!("user {user} not found in the sequences file");
            };
            let e = &cfg.eval;
            let opts = QueryOptions {
                beam: BeamOptions {
                    width: e.beam,
                    constrained: e.constrained,
                },
                m: e.retrieval,
                window: e.window,
            };
            let recent = &seq.events[seq.events.len().saturating_sub(e.window)..];
            let shown = serialize_history(recent, &corpus.index, &corpus.vocab, None)?;
            eprintln!("{}", shown.display(&corpus.vocab));
            let rec = recommend(
                &model,
                &corpus.vocab,
                &corpus.index,
                &corpus.catalog,
                &seq.events,
                opts,
            )?;
            if let Some(t) = &trace {
                write(t, rec.beam.trace_csv())?;
            }
            match &out {
                Some(p) => {
                    write(p, rec.to_csv())?;
                    cfg.write(&config_path_for(p))?;
                }
                None => print!("{}", rec.to_csv()),
            }
        }
    }
    Ok(())
}
