use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use storyloom::clock::FixedClock;
use storyloom::genai::config::{build_providers, ProvidersFile};
use storyloom::genai::Studio;
use storyloom::playback::{to_ndjson, Player};
use storyloom::screenplay::{compile_screenplay, parse_screenplay};
use storyloom::store::{export_package, open_package, MemoryAssetStore, PackageStore};
use storyloom_server::demo::{blank_story, demo_story, story_from_storyline};
use storyloom_server::ServerConfig;

#[derive(Parser)]
#[command(
    name = "storyloom",
    version,
    about = "Author, store and play branching picture stories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the HTTP service.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Write a new story package archive.
    NewStory {
        title: String,
        #[arg(long)]
        out: PathBuf,
        /// Build the branching demo story instead of a blank one.
        #[arg(long, conflicts_with = "storyline")]
        demo: bool,
        /// Lay the story out from this storyline file.
        #[arg(long)]
        storyline: Option<PathBuf>,
        #[arg(long)]
        providers: Option<PathBuf>,
    },
    /// Turn a storyline into a screenplay and print the parse report as JSON.
    Compile {
        storyline: PathBuf,
        /// Parse this saved model reply instead of calling the text provider.
        #[arg(long)]
        reply: Option<PathBuf>,
        #[arg(long)]
        providers: Option<PathBuf>,
    },
    /// Play a package and print the event trace as NDJSON.
    Play {
        package: PathBuf,
        /// Answers to give, in order, when the story asks.
        #[arg(long, value_delimiter = ',')]
        responses: Vec<String>,
        /// Tick length in seconds.
        #[arg(long, default_value_t = 0.25)]
        dt: f64,
    },
    /// Copy a saved story out of a store as a package archive.
    Export {
        story_id: String,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn studio(providers: Option<&Path>) -> Result<Studio> {
    let configs = match providers {
        None => Vec::new(),
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ProvidersFile::parse(&text)?.providers
        }
    };
    Ok(
        Studio::new(build_providers(&configs)?, Arc::new(MemoryAssetStore::new()))
            .with_seed(0)
            .with_clock(Arc::new(FixedClock::epoch())),
    )
}

fn run(config: Option<PathBuf>, port: Option<u16>, store: Option<PathBuf>) -> Result<()> {
    let mut config = match config {
        Some(path) => ServerConfig::load(&path)?,
        None => ServerConfig::default(),
    };
    if let Some(port) = port {
        config.port = port;
    }
    if let Some(store) = store {
        config.store = store;
    }
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(storyloom_server::serve(&config))?;
    Ok(())
}

fn new_story(title: &str, out: &Path, demo: bool, storyline: Option<&Path>, providers: Option<&Path>) -> Result<()> {
    let studio = studio(providers)?;
    let story = if demo {
        demo_story(&studio)?
    } else if let Some(path) = storyline {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let (story, warnings) = story_from_storyline(title, &text, &studio)?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        story
    } else {
        blank_story(title)
    };
    let story = storyloom::model::Story {
        title: title.to_string(),
        ..story
    };
    export_package(&story, studio.store().as_ref(), out).with_context(|| format!("writing {}", out.display()))?;
    println!("{}", story.story_id);
    Ok(())
}

fn compile(storyline: &Path, reply: Option<&Path>, providers: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(storyline).with_context(|| format!("reading {}", storyline.display()))?;
    let report = match reply {
        Some(path) => {
            parse_screenplay(&std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
        }
        None => compile_screenplay(&text, studio(providers)?.providers().text.as_ref())?,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.rejected {
        bail!("no usable scenes: {}", report.warnings.join("; "));
    }
    Ok(())
}

fn play(package: &Path, responses: &[String], dt: f64) -> Result<()> {
    let package = open_package(package).with_context(|| format!("opening {}", package.display()))?;
    let player = Player::new(package.story)?;
    let answers: Vec<&str> = responses.iter().map(String::as_str).collect();
    let (_, events) = player.run(&answers, dt)?;
    print!("{}", to_ndjson(&events));
    Ok(())
}

fn export(story_id: &str, store: &Path, out: &Path) -> Result<()> {
    let packages = PackageStore::open(store.join("packages"))?;
    let package = packages.load_package(story_id)?;
    export_package(&package.story, &package.assets, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, port, store } => run(config, port, store),
        Command::NewStory {
            title,
            out,
            demo,
            storyline,
            providers,
        } => new_story(&title, &out, demo, storyline.as_deref(), providers.as_deref()),
        Command::Compile {
            storyline,
            reply,
            providers,
        } => compile(&storyline, reply.as_deref(), providers.as_deref()),
        Command::Play { package, responses, dt } => play(&package, &responses, dt),
        Command::Export { story_id, store, out } => export(&story_id, &store, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
