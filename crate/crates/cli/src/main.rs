use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use maia4all::chess::parse_fen;
use maia4all::embeddings::{individual_records, read_embeddings, write_embeddings, UnseenEmbedding};
use maia4all::eval::predict_top_moves;
use maia4all::net::load_policy;
use maia4all::pgn::SelectionStrategy;
use maia4all::pipeline::{Pipeline, PipelineConfig, Stage, Summary};
use maia4all::synth::{pipeline_corpus, SynthConfig};
use maia4all::{Error, PopulationTable, Result};

#[derive(Parser)]
#[command(name = "maia4all", version, about = "Individual chess move prediction from small game histories")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set eval.m=[100,800]`. Also accepted
    /// as `--section.key value`.
    #[arg(short = 's', long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output root (same as `--set paths.output=...`).
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Re-run stages whose records were produced with a different config.
    #[arg(long, global = true)]
    force: bool,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and filter PGN inputs into per-player datasets.
    Ingest,
    /// Fix the unseen players and select prototypes.
    Select,
    /// Pre-train the policy network with population embeddings.
    Pretrain,
    /// Jointly train the network and the prototype embeddings.
    Enrich,
    /// Train the prototype matching network.
    TrainPmn,
    /// Initialize embeddings for the unseen players.
    InitEmbedding,
    /// Adapt each unseen player's embedding.
    Democratize,
    /// Evaluate initial and adapted embeddings.
    Eval,
    /// Run every stage, skipping completed ones.
    Pipeline,
    /// Identify prototypes from held-out moves with the trained matcher.
    Stylometry {
        /// Windows averaged per identification.
        #[arg(long, default_value_t = 1)]
        shots: usize,
    },
    /// Repeat selection, enrichment and evaluation over prototype strategies.
    Study {
        #[arg(long, value_delimiter = ',', default_value = "uniform,low-only,mid-only,high-only")]
        strategies: Vec<String>,
        /// Prototypes per bin.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        ns: Vec<usize>,
    },
    /// Write embeddings as JSON lines.
    ExportEmbeddings {
        /// prototypes, init or adapted.
        #[arg(long, default_value = "prototypes")]
        which: String,
        /// Adaptation size for init and adapted embeddings (default: first of eval.m).
        #[arg(long)]
        m: Option<usize>,
        /// Destination; standard output when omitted.
        #[arg(long)]
        to: Option<PathBuf>,
    },
    /// Top moves for one position and player.
    Predict {
        #[arg(long)]
        fen: String,
        /// Prototype id, or a player found in `--embeddings`.
        #[arg(long)]
        player: Option<String>,
        /// Population embedding for this rating instead of a player.
        #[arg(long)]
        rating: Option<u32>,
        #[arg(long, default_value_t = 1500)]
        opponent_rating: u32,
        /// JSON-lines embedding file to look players up in.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Write a synthetic PGN corpus and a matching small config.
    Synth {
        /// Directory for corpus.pgn and config.toml.
        dir: PathBuf,
        #[arg(long, default_value_t = 11)]
        players: usize,
        #[arg(long, default_value_t = 4)]
        clones: usize,
        #[arg(long, default_value_t = 12)]
        games: usize,
        #[arg(long, default_value_t = 6)]
        clone_games: usize,
        #[arg(long, default_value_t = 0.1)]
        clone_noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Rewrites `--section.key value` and `--section.key=value` into `--set`.
fn expand_dotted(args: impl Iterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = args.peekable();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            out.push(a);
            continue;
        };
        let key = body.split('=').next().unwrap_or("");
        if !key.contains('.') {
            out.push(a);
            continue;
        }
        out.push("--set".into());
        if body.contains('=') {
            out.push(body.to_string());
        } else if let Some(v) = it.next() {
            out.push(format!("{body}={v}"));
        } else {
            out.push(body.to_string());
        }
    }
    out
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(o) = &common.output {
        overrides.push(format!("paths.output={}", toml_string(&o.to_string_lossy())));
    }
    PipelineConfig::load(common.config.as_deref(), &overrides)
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn print_summary(summary: &Summary) {
    for s in &summary.stages {
        println!("{:<28} {:<10} {} training steps", s.stage, s.status, s.training_steps);
    }
    println!("total training steps: {}", summary.training_steps());
    for r in &summary.reports {
        println!("report: {}", r.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Synth {
        dir,
        players,
        clones,
        games,
        clone_games,
        clone_noise,
        seed,
    } = &cli.command
    {
        return synth(dir, *players, *clones, *games, *clone_games, *clone_noise, *seed);
    }
    let config = load_config(&cli.common)?;
    let pipeline = Pipeline::new(config, cli.common.force)?;
    let stages: &[Stage] = match &cli.command {
        Command::Ingest => &[Stage::Ingest],
        Command::Select => &[Stage::Holdout, Stage::Select],
        Command::Pretrain => &[Stage::Pretrain],
        Command::Enrich => &[Stage::Enrich],
        Command::TrainPmn => &[Stage::TrainPmn],
        Command::InitEmbedding => &[Stage::Init],
        Command::Democratize => &[Stage::Democratize],
        Command::Eval => &[Stage::Eval],
        Command::Pipeline => &Stage::ALL,
        _ => &[],
    };
    if !stages.is_empty() {
        let summary = pipeline.run(stages)?;
        if stages.contains(&Stage::Ingest) {
            print_ingest(&pipeline)?;
        }
        print_summary(&summary);
        return Ok(());
    }
    match cli.command {
        Command::Stylometry { shots } => {
            let r = pipeline.stylometry(shots)?;
            println!("stylometry accuracy {:.4} over {} trials ({} shots)", r.accuracy, r.trials, r.shots);
        }
        Command::Study { strategies, ns } => {
            let strategies: Vec<SelectionStrategy> = strategies.iter().map(|s| s.parse()).collect::<Result<_>>()?;
            let rows = pipeline.study(&strategies, &ns)?;
            for r in &rows {
                println!(
                    "{:<10} N={:<3} M={:<6} {:<10} accuracy {:.4} perplexity {:.3}",
                    r.strategy,
                    r.n,
                    r.m.map_or("-".into(), |m| m.to_string()),
                    r.init_mode,
                    r.accuracy,
                    r.perplexity
                );
            }
            println!("report: {}", pipeline.reports_dir().join("study.csv").display());
        }
        Command::ExportEmbeddings { which, m, to } => {
            let m = m.or_else(|| pipeline.config.eval.m.first().copied()).unwrap_or(0);
            let records = match which.as_str() {
                "prototypes" => individual_records(&pipeline.enriched()?.2),
                "init" => read_embeddings(BufReader::new(fs::File::open(pipeline.init_embeddings_path(m))?))?,
                "adapted" => read_embeddings(BufReader::new(fs::File::open(pipeline.adapted_embeddings_path(m))?))?,
                other => return Err(Error::Config(format!("unknown embedding set '{other}' (prototypes, init or adapted)"))),
            };
            match to {
                Some(p) => {
                    let mut f = std::io::BufWriter::new(fs::File::create(&p)?);
                    write_embeddings(&mut f, &records)?;
                    f.flush()?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    write_embeddings(&mut lock, &records)?;
                }
            }
        }
        Command::Predict {
            fen,
            player,
            rating,
            opponent_rating,
            embeddings,
            top,
        } => predict(&pipeline, &fen, player, rating, opponent_rating, embeddings, top)?,
        _ => unreachable!("stage commands handled above"),
    }
    Ok(())
}

fn print_ingest(pipeline: &Pipeline) -> Result<()> {
    let s = pipeline.ingest_stats()?;
    println!("games read {}, kept {}, unparseable {}", s.games_seen, s.games_kept, s.games_unparseable);
    for (reason, n) in &s.rejected {
        println!("  rejected ({reason}): {n}");
    }
    println!("positions retained {}", s.examples);
    Ok(())
}

fn predict(
    pipeline: &Pipeline,
    fen: &str,
    player: Option<String>,
    rating: Option<u32>,
    opponent_rating: u32,
    embeddings: Option<PathBuf>,
    top: usize,
) -> Result<()> {
    let pos = parse_fen(fen)?;
    let mut ck = load_policy::<f32>(&pipeline.checkpoint_dir(Stage::Enrich))?;
    let population = PopulationTable::from_tensor(ck.take("embeddings.population")?)?;
    let e_a: Vec<f32> = match (player, rating) {
        (Some(id), _) => {
            let from_file = match &embeddings {
                Some(p) => read_embeddings(BufReader::new(fs::File::open(p)?))?
                    .into_iter()
                    .find(|r| r.player_id == id)
                    .map(|r| UnseenEmbedding::<f32>::from_record(&r))
                    .transpose()?
                    .map(|e| e.vector),
                None => None,
            };
            match from_file {
                Some(v) => v,
                None => {
                    let (_, _, table) = pipeline.enriched()?;
                    let row = table
                        .row_of(&id)
                        .ok_or_else(|| Error::Data(format!("player '{id}' is neither a prototype nor in the embedding file")))?;
                    table.row(row).to_vec()
                }
            }
        }
        (None, Some(r)) => population.for_rating(r).to_vec(),
        (None, None) => return Err(Error::Config("predict needs --player or --rating".into())),
    };
    let e_o = population.for_rating(opponent_rating);
    for p in predict_top_moves(&ck.model, &pos, &e_a, e_o, top)? {
        println!("{:<8} {:<8} {:.4}", p.uci, p.san.as_deref().unwrap_or("-"), p.probability);
    }
    Ok(())
}

const SYNTH_CONFIG: &str = r#"# Small settings for the synthetic demo corpus.
seed = 0

[paths]
pgn = ["corpus.pgn"]
output = "run"

[model]
k_conv = 1
k_att = 1
c_mid = 16
c_patch = 4
d = 8
d_h = 8
heads = 2
d_att = 16
d_ffn = 32

[pretrain]
learning_rate = 1e-3
batch_size = 32
max_steps = 40
eval_every = 20
eval_examples = 64

[enrich]
learning_rate = 1e-3
batch_size = 32
max_steps = 40
eval_every = 20
eval_examples = 64

[pmn]
layers = 1
heads = 2
d_h = 8
d_ffn = 32
window = 16
batch_size = 16
steps = 40
eval_every = 20
max_moves = 256

[select]
n = 1
strategy = "uniform"
min_history = 100

[init]
mode = "prototype"

[democratize]
variant = "frozen"
learning_rate = 1e-2
batch_size = 16
max_steps = 20
eval_every = 5

[eval]
m = [0, 50]
t = 64
"#;

fn synth(dir: &Path, players: usize, clones: usize, games: usize, clone_games: usize, clone_noise: f64, seed: u64) -> Result<()> {
    if players == 0 {
        return Err(Error::Config("--players must be at least 1".into()));
    }
    let cfg = SynthConfig {
        games_per_player: games,
        seed,
        ..SynthConfig::default()
    };
    let corpus = pipeline_corpus(players, clones, clone_noise, clone_games, &cfg);
    fs::create_dir_all(dir)?;
    fs::write(dir.join("corpus.pgn"), &corpus.pgn)?;
    let ids: Vec<String> = corpus.unseen.iter().map(|p| toml_string(&p.id)).collect();
    let config = format!("{SYNTH_CONFIG}players = [{}]\n", ids.join(", "));
    fs::write(dir.join("config.toml"), config)?;
    println!("wrote {} and {}", dir.join("corpus.pgn").display(), dir.join("config.toml").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse_from(expand_dotted(std::env::args())) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
