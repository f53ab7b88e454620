//! `csi`: key generation, watermarked generation, detection, attacks and benchmarks.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use csi_core::attack::{run_csi, run_rpm, AttackKind, AttackResult, Attacker};
use csi_core::diffusion::NoiseSource;
use csi_core::eval::{detect_image, run_benchmark, write_report, Providers};
use csi_core::semantic::remote::{RemoteCaptioner, RemoteClient, RemoteProposer};
use csi_core::semantic::{AnchorSet, AttackIntent, GenerationLedger, MockCaptioner, MockProposer, Prompt};
use csi_core::watermark::outcome::DetectionOutcome;
use csi_core::watermark::{keygen, KeyFile, Scheme};
use csi_core::world::World;
use csi_core::{latfile, Error, Result};
use serde::Serialize;

use crate::config::{ProviderKind, RunConfig};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_DETECTED: u8 = 3;

#[derive(Parser)]
#[command(name = "csi", version, about = "Semantic watermark lab: embed, detect and attack latent watermarks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (keygen) or directory (other commands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Caption and proposal provider; overrides the configuration.
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderKind>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and calibrate a watermark key.
    Keygen {
        #[arg(long)]
        scheme: Scheme,
    },
    /// Generate a watermarked latent image from a prompt.
    Generate {
        #[command(flatten)]
        key: KeyArgs,
        #[arg(long)]
        prompt: String,
        /// File name inside the output directory (default image-<seed>.lat).
        #[arg(long)]
        name: Option<String>,
    },
    /// Detect a watermark; exits 0 when detected and 3 when not.
    Detect {
        #[command(flatten)]
        key: KeyArgs,
        #[arg(long)]
        image: PathBuf,
    },
    /// Attack a watermarked image with CSI or the regeneration baseline.
    Attack {
        #[command(flatten)]
        key: KeyArgs,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_parser = parse_attack, default_value = "csi")]
        attack: AttackKind,
        /// Comma-separated anchor tokens (CSI).
        #[arg(long)]
        anchors: Option<String>,
        /// Attribute to inject (CSI).
        #[arg(long)]
        target: Option<String>,
        /// Attribute the target replaces (CSI).
        #[arg(long)]
        replace: Option<String>,
    },
    /// Run the scheme-by-attack benchmark and write report.json and report.csv.
    Bench,
}

#[derive(Args)]
struct KeyArgs {
    /// Key file; defaults to the configured key for --scheme.
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<Scheme>,
}

fn parse_attack(s: &str) -> std::result::Result<AttackKind, String> {
    match s.parse::<AttackKind>() {
        Ok(AttackKind::None) => Err("attack must be csi or rpm".into()),
        Ok(k) => Ok(k),
        Err(e) => Err(e.to_string()),
    }
}

struct Env {
    cfg: RunConfig,
    world: World,
    common: Common,
}

impl Env {
    fn seed(&self) -> u64 {
        self.common.seed.unwrap_or(self.cfg.seed)
    }

    fn out_dir(&self, fallback: &Path) -> PathBuf {
        self.common
            .out
            .clone()
            .or_else(|| self.cfg.out.clone())
            .unwrap_or_else(|| fallback.to_path_buf())
    }

    fn provider(&self) -> ProviderKind {
        self.common.provider.unwrap_or(self.cfg.provider.kind)
    }

    fn key(&self, args: &KeyArgs) -> Result<KeyFile> {
        let path = match (&args.key, args.scheme) {
            (Some(p), _) => p.clone(),
            (None, Some(s)) => self
                .cfg
                .keys
                .get(&s)
                .cloned()
                .ok_or_else(|| Error::config(format!("no key configured for scheme {s}")))?,
            (None, None) => return Err(Error::config("either --key or --scheme is required")),
        };
        let kf = KeyFile::read(&path)?;
        if let Some(s) = args.scheme {
            if s != kf.key.scheme() {
                return Err(Error::config(format!("{} holds a {} key, not {s}", path.display(), kf.key.scheme())));
            }
        }
        kf.key.shape().validate()?;
        if kf.key.shape() != self.world.shape() {
            return Err(Error::config("key shape differs from the configured latent shape"));
        }
        Ok(kf)
    }

    fn providers(&self, ledger: Arc<GenerationLedger>, protected: Vec<String>) -> Result<Providers> {
        let seed = self.seed();
        Ok(match self.provider() {
            ProviderKind::Mock => Providers {
                captioner: Arc::new(
                    MockCaptioner::new(ledger.clone())
                        .with_seed(seed)
                        .with_dropout(self.cfg.provider.mock_dropout, protected)?
                        .with_nearest_fallback(true),
                ),
                proposer: Arc::new(MockProposer::bundled(seed)),
                ledger,
            },
            ProviderKind::Remote => {
                let client = Arc::new(RemoteClient::new(self.cfg.provider.remote.clone()));
                Providers {
                    captioner: Arc::new(RemoteCaptioner::new(client.clone())),
                    proposer: Arc::new(RemoteProposer::new(client)),
                    ledger,
                }
            }
        })
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn print_outcome(o: &DetectionOutcome) {
    println!(
        "{}: statistic {:.6} threshold {:.6} margin {:+.6} -> {}",
        o.scheme,
        o.statistic,
        o.threshold,
        o.margin,
        if o.detected { "detected" } else { "not detected" }
    );
}

fn cmd_keygen(env: &Env, scheme: Scheme) -> Result<ExitCode> {
    let seed = env.seed();
    let kf = keygen(scheme, &env.cfg.watermark, env.world.shape(), seed)?;
    let path = env
        .common
        .out
        .clone()
        .unwrap_or_else(|| env.cfg.out.clone().unwrap_or_default().join(format!("{scheme}-key.json")));
    ensure_dir(&parent_dir(&path))?;
    kf.write(&path)?;
    let cal = kf.calibration.as_ref().expect("keygen calibrates");
    println!(
        "{scheme} key written to {}: threshold {:.6} at target FPR {} from {} null samples{}",
        path.display(),
        cal.threshold,
        cal.fpr_target,
        cal.n_null,
        if cal.degenerate_null { " (constant null)" } else { "" }
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_generate(env: &Env, key: &KeyArgs, prompt: &str, name: Option<&str>) -> Result<ExitCode> {
    let kf = env.key(key)?;
    let seed = env.seed();
    let prompt = Prompt::new(prompt)?;
    let dir = env.out_dir(Path::new("."));
    ensure_dir(&dir)?;
    let cond = env.world.embed_text(&prompt)?;
    let z = kf.key.embed(seed, &cond)?;
    let (x, _) = env.world.generate(&z, &cond, NoiseSource::Fresh(seed))?;
    let name = name.map(str::to_string).unwrap_or_else(|| format!("image-{seed}.lat"));
    let path = dir.join(&name);
    let ledger = GenerationLedger::load(&dir)?;
    ledger.remove_path(&name);
    latfile::write(&path, &x)?;
    ledger.register(&x, prompt.raw(), seed, Some(name));
    ledger.save(&dir)?;
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_detect(env: &Env, key: &KeyArgs, image: &Path) -> Result<ExitCode> {
    let kf = env.key(key)?;
    let x = latfile::read(image)?;
    let ledger = Arc::new(GenerationLedger::load(&parent_dir(image))?);
    let providers = env.providers(ledger, Vec::new())?;
    let outcome = detect_image(&env.world, &kf.key, providers.captioner.as_ref(), &x)?;
    print_outcome(&outcome);
    Ok(if outcome.detected {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NOT_DETECTED)
    })
}

#[derive(Serialize)]
struct AttackReport<'a> {
    image: String,
    result: &'a AttackResult,
    /// Detector outcome on the top accepted candidate.
    top_detection: Option<DetectionOutcome>,
    /// An accepted candidate exists and is still detected as watermarked.
    forged: bool,
}

struct AttackSpec<'a> {
    image: &'a Path,
    attack: AttackKind,
    anchors: Option<&'a str>,
    target: Option<&'a str>,
    replace: Option<&'a str>,
}

fn cmd_attack(env: &Env, key: &KeyArgs, spec: AttackSpec<'_>) -> Result<ExitCode> {
    let kf = env.key(key)?;
    let x0 = latfile::read(spec.image)?;
    let in_dir = parent_dir(spec.image);
    let out_dir = env.out_dir(&in_dir);
    ensure_dir(&out_dir)?;
    let ledger = Arc::new(GenerationLedger::load(&in_dir)?);
    let mut config = env.cfg.attack.clone();
    config.seed = env.seed();

    let (mut result, protected) = match spec.attack {
        AttackKind::Csi => {
            let anchors = AnchorSet::parse(spec.anchors.ok_or_else(|| Error::config("--anchors is required for csi"))?)?;
            let target = spec.target.ok_or_else(|| Error::config("--target is required for csi"))?;
            let intent = AttackIntent::new(target, spec.replace);
            let mut protected: Vec<String> = anchors.iter().map(str::to_string).collect();
            protected.push(intent.target_attribute.clone());
            let providers = env.providers(ledger.clone(), protected.clone())?;
            let attacker = Attacker {
                world: &env.world,
                captioner: providers.captioner.as_ref(),
                proposer: providers.proposer.as_ref(),
                ledger: &ledger,
                config,
            };
            let t0 = providers.captioner.caption(&x0)?;
            (run_csi(&attacker, &x0, &t0, &anchors, &intent)?, protected)
        }
        AttackKind::Rpm | AttackKind::None => {
            let providers = env.providers(ledger.clone(), Vec::new())?;
            let attacker = Attacker {
                world: &env.world,
                captioner: providers.captioner.as_ref(),
                proposer: providers.proposer.as_ref(),
                ledger: &ledger,
                config,
            };
            (run_rpm(&attacker, &x0)?, Vec::new())
        }
    };

    let out_ledger = if out_dir == in_dir {
        ledger.clone()
    } else {
        Arc::new(GenerationLedger::load(&out_dir)?)
    };
    for i in result.accepted.clone() {
        let c = &mut result.candidates[i];
        let name = format!("{}-{i:02}.lat", result.attack);
        let x = c.image.as_ref().expect("accepted candidates carry images");
        out_ledger.remove_path(&name);
        latfile::write(&out_dir.join(&name), x)?;
        out_ledger.register(x, c.prompt.raw(), env.seed(), Some(name.clone()));
        c.image_path = Some(name);
    }
    out_ledger.save(&out_dir)?;

    let top_detection = match result.top().and_then(|c| c.image.as_ref()) {
        Some(x) => {
            let providers = env.providers(out_ledger.clone(), protected)?;
            Some(detect_image(&env.world, &kf.key, providers.captioner.as_ref(), x)?)
        }
        None => None,
    };
    let report = AttackReport {
        image: spec.image.display().to_string(),
        result: &result,
        forged: top_detection.as_ref().is_some_and(|d| d.detected),
        top_detection,
    };
    let report_path = out_dir.join(format!("{}-report.json", result.attack));
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&report_path, e))?;

    let c = result.counts;
    println!(
        "{}: proposed {} text-passed {} regenerated {} accepted {}",
        result.attack, c.proposed, c.text_passed, c.regenerated, c.accepted
    );
    for cand in result.accepted_candidates().take(3) {
        println!(
            "  #{:02} rank {} s_text {:.4} s_vis {} delta_csw {} {:?}",
            cand.index,
            cand.rank_score.map_or("-".into(), |v| format!("{v:+.4}")),
            cand.s_text,
            cand.s_vis.map_or("-".into(), |v| format!("{v:.4}")),
            cand.delta_csw.map_or("-".into(), |v| format!("{v:.6}")),
            cand.prompt.raw()
        );
    }
    match &report.top_detection {
        Some(o) => print_outcome(o),
        None => println!("no accepted candidate"),
    }
    println!("report: {}", report_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(env: &Env) -> Result<ExitCode> {
    let mut bench = env.cfg.bench_config();
    bench.seed = env.seed();
    bench.attack.seed = bench.seed;
    bench.validate()?;
    let dir = env.out_dir(Path::new("bench-out"));
    let providers = env.providers(Arc::new(GenerationLedger::new()), Vec::new())?;
    let report = run_benchmark(&bench, &providers)?;
    let (json, csv) = write_report(&report, &dir)?;
    for r in &report.rows {
        println!(
            "{:<5} {:<5} n={:<4} asr={:.3} injection={:.3} threshold={:.4}",
            r.scheme, r.attack, r.n, r.asr, r.injection_rate, r.threshold
        );
    }
    for f in report.frechet.iter().filter(|f| f.set_a == "original") {
        println!("frechet[{}] original vs {}: {:.6}", f.scope, f.set_b, f.distance);
    }
    println!("report: {} {}", json.display(), csv.display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = RunConfig::load(cli.common.config.as_deref())?;
    let world = cfg.validate()?;
    let env = Env {
        cfg,
        world,
        common: cli.common.clone(),
    };
    match &cli.command {
        Command::Keygen { scheme } => cmd_keygen(&env, *scheme),
        Command::Generate { key, prompt, name } => cmd_generate(&env, key, prompt, name.as_deref()),
        Command::Detect { key, image } => cmd_detect(&env, key, image),
        Command::Attack {
            key,
            image,
            attack,
            anchors,
            target,
            replace,
        } => cmd_attack(
            &env,
            key,
            AttackSpec {
                image,
                attack: *attack,
                anchors: anchors.as_deref(),
                target: target.as_deref(),
                replace: replace.as_deref(),
            },
        ),
        Command::Bench => cmd_bench(&env),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_IO
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
