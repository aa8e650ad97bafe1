//! `radgraph-eval`: report scoring, entity-graph inspection, knowledge-graph
//! dumps and graph-embedding diagnostics.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use radgraph_core::captionmetrics::{CiderVariant, Smoothing};
use radgraph_core::chestkg::{dump_graph, DumpFormat};
use radgraph_core::mirqi::{F1Mode, UncertainAs};
use radgraph_core::reportnlp::PolarityRules;
use radgraph_core::{MirqiConfig, MirqiWeights, PropagationKind, PropagationMatrix, ReportParser};
use radgraph_eval::corpus::{read_corpus, CorpusFormat};
use radgraph_eval::nncmd::{self, GradcheckSizes, InitOptions, GRADCHECK_TOLERANCE};
use radgraph_eval::resources::{load_conllu, load_graph, load_lexicon};
use radgraph_eval::score::{corpus_dir, write_report, OutputFormat, ScoreOptions, Scorer};
use radgraph_eval::{exit_code, input_error, EXIT_FAILURE};
use radgraph_nn::io::save_tensor;
use radgraph_nn::synth::{overfit_classifier, overfit_decoder, random_feature_map, ClassifierOverfitConfig, DecoderOverfitConfig};

#[derive(Parser)]
#[command(name = "radgraph-eval", version, about = "Radiology report scoring and graph-embedding diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score generated reports against ground truth (MIRQI, BLEU, ROUGE-L, CIDEr).
    Score(ScoreArgs),
    /// Print the entity graph of one report.
    Parse(ParseArgs),
    /// Inspect the chest knowledge graph.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
    /// Graph-embedding and decoder diagnostics.
    Nn {
        #[command(subcommand)]
        command: NnCommand,
    },
}

#[derive(Args)]
struct Resources {
    /// Lexicon file replacing the built-in lexicon.
    #[arg(long, value_name = "PATH")]
    lexicon: Option<PathBuf>,
    /// Graph definition; defaults to $RADGRAPH_EVAL_GRAPH, then the built-in graph.
    #[arg(long, value_name = "PATH")]
    graph: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum UncertainArg {
    Positive,
    Negative,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreFormat {
    Text,
    JsonLines,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Auto,
    JsonLines,
    Tsv,
}

#[derive(Args)]
struct ScoreArgs {
    /// Paired-report corpus (JSON lines or tab-separated).
    corpus: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    w_pos: f64,
    #[arg(long, default_value_t = 0.2)]
    w_attr: f64,
    /// Use F1 = r·p/(r+p) instead of the harmonic mean.
    #[arg(long)]
    f1_literal: bool,
    /// How uncertain findings are scored.
    #[arg(long, value_enum, default_value = "positive")]
    uncertain_as: UncertainArg,
    #[command(flatten)]
    resources: Resources,
    /// Directory of CoNLL-U parses.
    #[arg(long, value_name = "DIR")]
    parses: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: ScoreFormat,
    #[arg(long, value_enum, default_value = "auto")]
    input_format: InputFormat,
    /// Disable add-one smoothing of BLEU precisions.
    #[arg(long)]
    bleu_unsmoothed: bool,
    /// Plain CIDEr instead of CIDEr-D.
    #[arg(long)]
    cider_plain: bool,
    /// Worker threads; 1 scores serially.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of standard output.
    #[arg(long, short, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    /// Report file; standard input when absent and `--text` is not given.
    file: Option<PathBuf>,
    /// Report text given inline.
    #[arg(long, conflicts_with = "file")]
    text: Option<String>,
    /// CoNLL-U parse of the report's sentences.
    #[arg(long, value_name = "FILE")]
    conllu: Option<PathBuf>,
    #[command(flatten)]
    resources: Resources,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphFormat {
    Matrix,
    Edges,
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Print the propagation matrix or the edge list with 6-decimal values.
    Dump {
        #[arg(long, value_enum, default_value = "matrix")]
        format: GraphFormat,
        /// Use D^-1/2 A D^-1/2 without self-loops.
        #[arg(long)]
        laplacian: bool,
        #[arg(long, value_name = "PATH")]
        graph: Option<PathBuf>,
    },
    /// Node count, global-node degree, symmetry and spectral radius.
    Stats {
        #[arg(long)]
        laplacian: bool,
        #[arg(long, value_name = "PATH")]
        graph: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OverfitTarget {
    Classifier,
    Decoder,
    All,
}

#[derive(Subcommand)]
enum NnCommand {
    /// Compare backward gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        in_channels: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        /// Coordinates probed per parameter tensor.
        #[arg(long, default_value_t = 6)]
        probes: usize,
    },
    /// Train on a toy set until the loss target is met.
    Overfit {
        #[arg(value_enum, default_value = "all")]
        target: OverfitTarget,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the loss every this many steps.
        #[arg(long, default_value_t = 50)]
        trace_every: usize,
    },
    /// Write a freshly initialized checkpoint.
    Init {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long, value_name = "PATH")]
        vocab: PathBuf,
        #[arg(long, default_value_t = 1024)]
        in_channels: usize,
        #[arg(long, default_value_t = 256)]
        hidden: usize,
        #[arg(long, default_value_t = 1)]
        views: usize,
        /// Word LSTM without a previous-token input.
        #[arg(long)]
        literal_gates: bool,
        #[arg(long)]
        laplacian: bool,
        /// All weights zero.
        #[arg(long)]
        zero: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "PATH")]
        graph: Option<PathBuf>,
    },
    /// Write a random feature map `[C, H, W]`.
    Synth {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        channels: usize,
        #[arg(long, default_value_t = 16)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a vocabulary from the ground-truth reports of a corpus.
    Vocab {
        corpus: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        min_count: usize,
    },
    /// Decode one report per group of feature maps.
    Generate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        vocab: PathBuf,
        /// Feature map files; a checkpoint with V views takes them V at a time.
        #[arg(long = "features", value_name = "PATH", required = true)]
        features: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) if closed_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

/// A downstream reader such as `head` went away.
fn closed_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<io::Error>())
        .any(|io| io.kind() == io::ErrorKind::BrokenPipe)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Score(args) => score(args),
        Command::Parse(args) => parse(args),
        Command::Graph { command } => graph(command),
        Command::Nn { command } => nn(command),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn score(args: ScoreArgs) -> Result<i32> {
    let weights = match MirqiWeights::new(args.w_pos, args.w_attr) {
        Ok(w) => w,
        Err(e) => return input_error(e.to_string()),
    };
    let options = ScoreOptions {
        mirqi: MirqiConfig {
            weights,
            f1_mode: if args.f1_literal { F1Mode::Literal } else { F1Mode::Harmonic },
            uncertain_as: match args.uncertain_as {
                UncertainArg::Positive => UncertainAs::Positive,
                UncertainArg::Negative => UncertainAs::Negative,
            },
        },
        bleu_smoothing: if args.bleu_unsmoothed { Smoothing::None } else { Smoothing::AddOne },
        cider: if args.cider_plain { CiderVariant::Plain } else { CiderVariant::D },
        seed: args.seed,
    };
    let (graph, graph_source) = load_graph(args.resources.graph.as_deref())?;
    let (lexicon, lexicon_source) = load_lexicon(args.resources.lexicon.as_deref(), &graph)?;
    if let Some(dir) = &args.parses {
        if !dir.is_dir() {
            return input_error(format!("parse directory {} does not exist", dir.display()));
        }
    }
    let records = read_corpus(
        &args.corpus,
        match args.input_format {
            InputFormat::Auto => CorpusFormat::Auto,
            InputFormat::JsonLines => CorpusFormat::JsonLines,
            InputFormat::Tsv => CorpusFormat::Tsv,
        },
    )?;
    let scorer = Scorer {
        graph,
        parser: ReportParser::new(lexicon, PolarityRules::default()),
        graph_source,
        lexicon_source,
        options,
        corpus_dir: corpus_dir(&args.corpus),
        parses_dir: args.parses,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .context("cannot start worker threads")?;
    let report = pool.install(|| scorer.score(&records))?;
    let mut w = output(args.output.as_deref())?;
    write_report(&mut w, &report, match args.format {
        ScoreFormat::Text => OutputFormat::Text,
        ScoreFormat::JsonLines => OutputFormat::JsonLines,
    })?;
    w.flush()?;
    Ok(0)
}

fn parse(args: ParseArgs) -> Result<i32> {
    let text = match (&args.text, &args.file) {
        (Some(t), _) => t.clone(),
        (None, Some(path)) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return input_error(format!("cannot read report {}: {e}", path.display())),
        },
        (None, None) => {
            let mut t = String::new();
            io::stdin().read_to_string(&mut t).context("cannot read standard input")?;
            t
        }
    };
    let (graph, _) = load_graph(args.resources.graph.as_deref())?;
    let (lexicon, _) = load_lexicon(args.resources.lexicon.as_deref(), &graph)?;
    let parses = args.conllu.as_deref().map(load_conllu).transpose()?;
    let parser = ReportParser::new(lexicon, PolarityRules::default());
    let entities = match parser.parse(&text, parses.as_deref()) {
        Ok(g) => g,
        Err(e) => return input_error(e.to_string()),
    };
    let mut w = output(None)?;
    entities.write_records(&mut w)?;
    w.flush()?;
    Ok(0)
}

fn propagation_kind(laplacian: bool) -> PropagationKind {
    if laplacian {
        PropagationKind::Laplacian
    } else {
        PropagationKind::Renormalized
    }
}

fn graph(command: GraphCommand) -> Result<i32> {
    let mut w = output(None)?;
    match command {
        GraphCommand::Dump { format, laplacian, graph } => {
            let (g, _) = load_graph(graph.as_deref())?;
            let prop = PropagationMatrix::from_adjacency(g.adjacency(), propagation_kind(laplacian));
            let format = match format {
                GraphFormat::Matrix => DumpFormat::Matrix,
                GraphFormat::Edges => DumpFormat::Edges,
            };
            w.write_all(dump_graph(&g, &prop, format).as_bytes())?;
        }
        GraphCommand::Stats { laplacian, graph } => {
            let (g, source) = load_graph(graph.as_deref())?;
            let prop = PropagationMatrix::from_adjacency(g.adjacency(), propagation_kind(laplacian));
            writeln!(w, "source\t{}", source.source)?;
            writeln!(w, "sha256\t{}", source.sha256)?;
            writeln!(w, "nodes\t{}", g.node_count())?;
            writeln!(w, "edges\t{}", g.adjacency().edge_count())?;
            writeln!(w, "global_degree\t{}", g.adjacency().degree(g.global_node()))?;
            writeln!(w, "max_asymmetry\t{:e}", prop.max_asymmetry())?;
            writeln!(w, "spectral_radius\t{:.12}", prop.spectral_radius(10_000, 1e-13))?;
        }
    }
    w.flush()?;
    Ok(0)
}

fn nn(command: NnCommand) -> Result<i32> {
    match command {
        NnCommand::Gradcheck {
            seed,
            in_channels,
            hidden,
            probes,
        } => {
            let sizes = GradcheckSizes {
                channels: in_channels,
                hidden,
                probes,
                ..GradcheckSizes::default()
            };
            if in_channels < 20 || hidden == 0 || probes == 0 {
                return input_error("gradcheck needs --in-channels >= 20 and positive --hidden and --probes");
            }
            let checks = nncmd::gradcheck_all(seed, sizes)?;
            let mut ok = true;
            let mut w = output(None)?;
            for c in &checks {
                writeln!(
                    w,
                    "{}\tmax_rel_error={:.3e}\tworst={} (analytic {:.6e}, numeric {:.6e})\ttensors={}\tprobes={}\t{}",
                    c.component,
                    c.max_rel_error,
                    c.worst_tensor,
                    c.worst_analytic,
                    c.worst_numeric,
                    c.tensors,
                    c.probes,
                    if c.passed { "ok" } else { "FAIL" }
                )?;
                ok &= c.passed;
            }
            writeln!(w, "tolerance {GRADCHECK_TOLERANCE:e}: {}", if ok { "passed" } else { "failed" })?;
            w.flush()?;
            Ok(if ok { 0 } else { EXIT_FAILURE })
        }
        NnCommand::Overfit {
            target,
            seed,
            trace_every,
        } => {
            let every = trace_every.max(1);
            let mut ok = true;
            let mut w = output(None)?;
            if target != OverfitTarget::Decoder {
                let cfg = ClassifierOverfitConfig {
                    seed,
                    ..ClassifierOverfitConfig::default()
                };
                let run = overfit_classifier(&cfg)?;
                for (step, loss) in run.losses.iter().enumerate().filter(|(s, _)| s % every == 0) {
                    writeln!(w, "classifier\tstep {step}\tloss {loss:.6}")?;
                }
                let final_loss = run.final_main_loss();
                let met = final_loss < cfg.target;
                writeln!(
                    w,
                    "classifier\tfinal main loss {final_loss:.6} after {} steps (target < {}): {}",
                    run.steps(),
                    cfg.target,
                    if met { "ok" } else { "FAIL" }
                )?;
                ok &= met;
            }
            if target != OverfitTarget::Classifier {
                let cfg = DecoderOverfitConfig {
                    seed,
                    ..DecoderOverfitConfig::default()
                };
                let run = overfit_decoder(&cfg)?;
                for (step, loss) in run.losses.iter().enumerate().filter(|(s, _)| s % every == 0) {
                    writeln!(w, "decoder\tstep {step}\tloss {loss:.6}")?;
                }
                let final_loss = run.losses.last().copied().unwrap_or(f64::NAN);
                writeln!(
                    w,
                    "decoder\tfinal loss {final_loss:.6} after {} steps, {}/{} reports reproduced: {}",
                    run.losses.len(),
                    run.exact,
                    run.examples.len(),
                    if run.all_exact() { "ok" } else { "FAIL" }
                )?;
                for report in run.decoded()? {
                    let sentences: Vec<String> = report.iter().map(|s| s.join(" ")).collect();
                    writeln!(w, "decoder\t{}", sentences.join(" . "))?;
                }
                ok &= run.all_exact();
            }
            w.flush()?;
            Ok(if ok { 0 } else { EXIT_FAILURE })
        }
        NnCommand::Init {
            out,
            vocab,
            in_channels,
            hidden,
            views,
            literal_gates,
            laplacian,
            zero,
            seed,
            graph,
        } => {
            let (g, _) = load_graph(graph.as_deref())?;
            let vocabulary = nncmd::load_vocabulary(&vocab)?;
            let model = nncmd::init_model(
                &g,
                &vocabulary,
                InitOptions {
                    in_channels,
                    propagation: propagation_kind(laplacian),
                    hidden,
                    views,
                    literal_gates,
                    zero,
                    seed,
                },
            )?;
            model
                .save(&out)
                .with_context(|| format!("cannot write checkpoint {}", out.display()))?;
            Ok(0)
        }
        NnCommand::Synth {
            out,
            channels,
            side,
            seed,
        } => {
            save_tensor(&out, &random_feature_map(channels, side, side, seed))
                .with_context(|| format!("cannot write feature map {}", out.display()))?;
            Ok(0)
        }
        NnCommand::Vocab { corpus, out, min_count } => {
            let records = read_corpus(&corpus, CorpusFormat::Auto)?;
            let vocabulary = nncmd::corpus_vocabulary(&records, min_count);
            std::fs::write(&out, vocabulary.to_text())
                .with_context(|| format!("cannot write vocabulary {}", out.display()))?;
            eprintln!("{} tokens", vocabulary.len());
            Ok(0)
        }
        NnCommand::Generate {
            checkpoint,
            vocab,
            features,
        } => {
            let model = nncmd::load_model(&checkpoint)?;
            let vocabulary = nncmd::load_vocabulary(&vocab)?;
            let mut w = output(None)?;
            for line in nncmd::generate_reports(&model, &vocabulary, &features)? {
                writeln!(w, "{line}")?;
            }
            w.flush()?;
            Ok(0)
        }
    }
}
