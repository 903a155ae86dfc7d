use std::io::{BufRead, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lastmeter_cli::{acceptance, default_data_dir};
use lastmeter_core::annotations::{classify, Anchor, AnnotationStore, Category, Filter};
use lastmeter_core::navgrid::{approach_point, plan_route, DEFAULT_CLEARANCE_M, DEFAULT_RESOLUTION_M};
use lastmeter_core::orchestrator::{Ports, RecordedTranscripts};
use lastmeter_core::scene::Strictness;
use lastmeter_core::sim::{self, LoadedScenario, RunReport, Scenario};
use lastmeter_core::{NavGrid, Point2, Pose, SceneGraph};
use lastmeter_server::{AppState, Poi};
use serde_json::{json, Value};

/// Input that failed validation; exits with status 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl std::fmt::Display) -> anyhow::Error {
    Invalid(msg.to_string()).into()
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Format {
    Human,
    Json,
}

#[derive(Parser)]
#[command(name = "lastmeter", version, about = "Last-few-meters guidance and annotation engine")]
struct Cli {
    /// Directory holding the bundled POI, annotations and scenarios.
    #[arg(long, global = true, env = "LASTMETER_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// POI document; defaults to golden_square.json in the data directory.
    #[arg(long, global = true)]
    poi: Option<PathBuf>,
    /// Annotation JSONL; defaults to the POI's bundled notes.
    #[arg(long, global = true)]
    annotations: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "human")]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Plan a route on the POI.
    Plan(PlanArgs),
    /// Run one or more scenarios headlessly.
    Sim(SimArgs),
    /// Recompute a run report from a transcript.
    Replay { transcript: PathBuf },
    /// Serve the WebSocket session endpoint and annotation REST API.
    Serve(ServeArgs),
    /// List or change annotations in the annotation file.
    Annotate {
        #[command(subcommand)]
        cmd: AnnotateCmd,
    },
    /// Classify annotation texts given as arguments or one per stdin line.
    Classify { texts: Vec<String> },
    /// Validate a POI, annotation file or scenario.
    Validate {
        file: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<DocKind>,
    },
    /// Run the acceptance checks.
    Check,
}

#[derive(Args)]
struct PlanArgs {
    /// Start as x,y or x,y,heading.
    #[arg(long, allow_hyphen_values = true)]
    from: String,
    /// Destination point x,y.
    #[arg(long, allow_hyphen_values = true, group = "dest")]
    to: Option<String>,
    /// Destination object id.
    #[arg(long, group = "dest")]
    object: Option<String>,
    /// Destination annotation id.
    #[arg(long, group = "dest")]
    annotation: Option<String>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(required = true)]
    scenarios: Vec<PathBuf>,
    /// Overrides each scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Scenarios run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Transcript path; only with a single scenario.
    #[arg(long, conflicts_with = "out_dir")]
    transcript: Option<PathBuf>,
    /// Writes `<scenario>.transcript.jsonl` per scenario here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Recorded port answers (JSON) instead of the offline stub.
    #[arg(long)]
    ports: Option<PathBuf>,
    /// Write annotation changes back to the annotation file.
    #[arg(long)]
    persist: bool,
    /// Fixed session clock start instead of wall time.
    #[arg(long)]
    epoch: Option<f64>,
}

#[derive(Subcommand)]
enum AnnotateCmd {
    List {
        #[arg(long)]
        category: Option<Category>,
        #[arg(long)]
        author: Option<String>,
        #[arg(long)]
        text: Option<String>,
        /// Only notes within --radius of this point x,y.
        #[arg(long, allow_hyphen_values = true, requires = "radius")]
        near: Option<String>,
        #[arg(long, requires = "near")]
        radius: Option<f64>,
    },
    Add {
        #[arg(long)]
        author: String,
        #[arg(long)]
        text: String,
        #[arg(long, allow_hyphen_values = true, group = "anchor", required = true)]
        at: Option<String>,
        #[arg(long, group = "anchor")]
        object: Option<String>,
        /// Author-chosen category; classified from the text otherwise.
        #[arg(long)]
        category: Option<Category>,
    },
    Edit {
        id: String,
        #[arg(long)]
        author: String,
        #[arg(long)]
        text: Option<String>,
        #[arg(long)]
        category: Option<Category>,
    },
    Delete {
        id: String,
        #[arg(long)]
        author: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DocKind {
    Poi,
    Annotations,
    Scenario,
}

struct Ctx {
    data: PathBuf,
    poi: PathBuf,
    annotations: PathBuf,
    format: Format,
}

impl Ctx {
    fn scene(&self) -> Result<SceneGraph> {
        let text = read(&self.poi)?;
        SceneGraph::load(&text, Strictness::Strict).map_err(|e| invalid(format!("{}: {e}", self.poi.display())))
    }

    fn store(&self, scene: Arc<SceneGraph>) -> Result<AnnotationStore> {
        let text = read(&self.annotations)?;
        AnnotationStore::load_jsonl(&text, scene).map_err(|e| invalid(format!("{}: {e}", self.annotations.display())))
    }

    fn emit(&self, value: &Value, human: impl FnOnce() -> String) {
        match self.format {
            Format::Json => println!("{}", serde_json::to_string_pretty(value).expect("json value")),
            Format::Human => println!("{}", human()),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_point(s: &str) -> Result<Point2> {
    let v = parse_floats(s, 2)?;
    Ok(Point2::new(v[0], v[1]))
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| invalid(format!("expected comma-separated numbers, got '{s}'")))?;
    if v.len() != n || v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(format!("expected {n} numbers, got '{s}'")));
    }
    Ok(v)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let data = cli.data_dir.clone().unwrap_or_else(default_data_dir);
    let ctx = Ctx {
        poi: cli.poi.clone().unwrap_or_else(|| data.join("golden_square.json")),
        annotations: cli
            .annotations
            .clone()
            .unwrap_or_else(|| data.join("golden_square_annotations.jsonl")),
        data,
        format: cli.format,
    };
    match run(&ctx, cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(ctx: &Ctx, cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Plan(a) => plan(ctx, a)?,
        Cmd::Sim(a) => return sim_cmd(ctx, a),
        Cmd::Replay { transcript } => {
            let text = read(&transcript)?;
            let report = sim::replay(&text).map_err(invalid)?;
            print_report(ctx, &transcript.display().to_string(), &report);
        }
        Cmd::Serve(a) => serve(ctx, a)?,
        Cmd::Annotate { cmd } => annotate(ctx, cmd)?,
        Cmd::Classify { texts } => classify_cmd(ctx, texts)?,
        Cmd::Validate { file, kind } => validate(ctx, &file, kind)?,
        Cmd::Check => {
            let results = acceptance::run_all(&ctx.data);
            let failed = results.iter().filter(|r| !r.passed).count();
            let rows: Vec<Value> = results
                .iter()
                .map(|r| json!({"name": r.name, "passed": r.passed, "detail": r.detail}))
                .collect();
            ctx.emit(&json!({"checks": rows, "failed": failed}), || {
                results
                    .iter()
                    .map(|r| format!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
            if failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn plan(ctx: &Ctx, a: PlanArgs) -> Result<()> {
    let scene = ctx.scene()?;
    let grid = NavGrid::build(&scene, DEFAULT_RESOLUTION_M, DEFAULT_CLEARANCE_M)?;
    let from = match parse_floats(&a.from, 3) {
        Ok(v) => Pose::new(Point2::new(v[0], v[1]), v[2]),
        Err(_) => Pose::new(parse_point(&a.from)?, 0.0),
    };
    let to = if let Some(t) = &a.to {
        parse_point(t)?
    } else if let Some(id) = &a.object {
        let o = scene.object(id).ok_or_else(|| invalid(format!("unknown object '{id}'")))?;
        approach_point(&grid, o, from.position).ok_or_else(|| anyhow!("no walkable approach to '{id}'"))?
    } else if let Some(id) = &a.annotation {
        let store = ctx.store(Arc::new(scene.clone()))?;
        let ann = store.get(id).ok_or_else(|| invalid(format!("unknown annotation '{id}'")))?;
        store
            .anchor_position(&ann.anchor)
            .ok_or_else(|| anyhow!("annotation '{id}' has no position"))?
    } else {
        bail!(invalid("one of --to, --object or --annotation is required"));
    };
    let route = plan_route(&scene, &grid, &from, to)?;
    let v = json!({
        "waypoints": route.waypoints,
        "total_length_m": route.total_length_m,
        "turning_points": route.turning_points(),
        "haptic_segments": route.haptic_segments,
    });
    ctx.emit(&v, || {
        let pts: Vec<String> = route.waypoints.iter().map(|p| p.to_string()).collect();
        format!(
            "{:.2} m, {} turning points\n{}",
            route.total_length_m,
            route.turning_points(),
            pts.join(" -> ")
        )
    });
    Ok(())
}

fn print_report(ctx: &Ctx, name: &str, r: &RunReport) {
    let v = serde_json::to_value(r).expect("report serializes");
    ctx.emit(&json!({"scenario": name, "report": v}), || {
        let d = r
            .final_goal_distance_m
            .map(|d| format!("{d:.2} m"))
            .unwrap_or_else(|| "n/a".into());
        format!(
            "{name}: {} after {:.1} s, path {:.2} m, goal distance {d}, engine arrived {}, triggers {}",
            if r.success { "success" } else { "failure" },
            r.elapsed_s,
            r.path_length_m,
            r.engine_arrived,
            r.triggers.len()
        )
    });
}

fn sim_cmd(ctx: &Ctx, a: SimArgs) -> Result<ExitCode> {
    if a.transcript.is_some() && a.scenarios.len() != 1 {
        bail!(invalid("--transcript takes a single scenario; use --out-dir"));
    }
    let loaded: Vec<LoadedScenario> = a
        .scenarios
        .iter()
        .map(|p| LoadedScenario::load(p).map_err(invalid))
        .collect::<Result<_>>()?;
    let jobs = a.jobs.max(1);
    let mut results: Vec<Option<Result<sim::RunOutput>>> = (0..loaded.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        for (chunk_l, chunk_r) in loaded.chunks(loaded.len().div_ceil(jobs)).zip(results.chunks_mut(loaded.len().div_ceil(jobs))) {
            s.spawn(move || {
                for (l, r) in chunk_l.iter().zip(chunk_r.iter_mut()) {
                    *r = Some(sim::run_scenario(l, a.seed).map_err(invalid));
                }
            });
        }
    });
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut all_ok = true;
    for (path, out) in a.scenarios.iter().zip(results) {
        let out = out.expect("every scenario ran")?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        let target = match (&a.transcript, &a.out_dir) {
            (Some(t), _) => Some(t.clone()),
            (None, Some(d)) => Some(d.join(format!("{stem}.transcript.jsonl"))),
            _ => None,
        };
        if let Some(t) = target {
            std::fs::write(&t, &out.transcript).with_context(|| format!("writing {}", t.display()))?;
        }
        all_ok &= out.report.success;
        print_report(ctx, stem, &out.report);
    }
    log::info!("{} scenario(s) run", a.scenarios.len());
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn serve(ctx: &Ctx, a: ServeArgs) -> Result<()> {
    let scene = ctx.scene()?;
    let jsonl = read(&ctx.annotations)?;
    let mut poi = Poi::new(scene, &jsonl).map_err(invalid)?;
    if a.persist {
        poi.annotations_path = Some(ctx.annotations.clone());
    }
    let ports = match &a.ports {
        Some(p) => {
            let t: RecordedTranscripts =
                serde_json::from_str(&read(p)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            Ports::recorded(t)
        }
        None => Ports::default(),
    };
    let state = Arc::new(AppState::new(vec![poi], ports, a.epoch));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        lastmeter_server::serve(listener, state).await?;
        Ok(())
    })
}

fn now_s() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn annotate(ctx: &Ctx, cmd: AnnotateCmd) -> Result<()> {
    let scene = Arc::new(ctx.scene()?);
    let mut store = ctx.store(scene)?;
    let changed = match cmd {
        AnnotateCmd::List {
            category,
            author,
            text,
            near,
            radius,
        } => {
            let pose = near.as_deref().map(parse_point).transpose()?.map(|p| Pose::new(p, 0.0));
            let filter = Filter {
                category,
                author,
                radius_m: radius,
                text,
            };
            let hits = store.query(&filter, pose.as_ref());
            ctx.emit(&json!(hits), || {
                hits.iter()
                    .map(|a| format!("{} [{}] {}: {}", a.id, a.category, a.author, a.text))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
            None
        }
        AnnotateCmd::Add {
            author,
            text,
            at,
            object,
            category,
        } => {
            let anchor = match (at, object) {
                (Some(p), _) => Anchor::Point(parse_point(&p)?),
                (None, Some(o)) => Anchor::Object(o),
                (None, None) => unreachable!("clap requires an anchor"),
            };
            Some(store.create(&author, &text, anchor, category, now_s()).map_err(invalid)?)
        }
        AnnotateCmd::Edit {
            id,
            author,
            text,
            category,
        } => {
            if text.is_none() && category.is_none() {
                bail!(invalid("nothing to change; pass --text or --category"));
            }
            let mut scratch = store.clone();
            let now = now_s();
            let mut last = None;
            if let Some(t) = &text {
                last = Some(scratch.edit(&id, &author, t, now).map_err(invalid)?);
            }
            if let Some(c) = category {
                last = Some(scratch.set_category(&id, &author, c, now).map_err(invalid)?);
            }
            store = scratch;
            last
        }
        AnnotateCmd::Delete { id, author } => Some(store.delete(&id, &author).map_err(invalid)?),
    };
    if let Some(a) = changed {
        std::fs::write(&ctx.annotations, store.to_jsonl())
            .with_context(|| format!("writing {}", ctx.annotations.display()))?;
        ctx.emit(&json!(a), || format!("{} [{}] {}: {}", a.id, a.category, a.author, a.text));
    }
    Ok(())
}

fn classify_cmd(ctx: &Ctx, texts: Vec<String>) -> Result<()> {
    let texts = if texts.is_empty() {
        std::io::stdin()
            .lock()
            .lines()
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|l| !l.trim().is_empty())
            .collect()
    } else {
        texts
    };
    let rows: Vec<(String, Category)> = texts.into_iter().map(|t| (classify(&t), t)).map(|(c, t)| (t, c)).collect();
    let v: Vec<Value> = rows.iter().map(|(t, c)| json!({"text": t, "category": c})).collect();
    ctx.emit(&json!(v), || {
        rows.iter()
            .map(|(t, c)| format!("{c}\t{t}"))
            .collect::<Vec<_>>()
            .join("\n")
    });
    Ok(())
}

fn detect_kind(file: &Path, text: &str) -> DocKind {
    if file.extension().is_some_and(|e| e == "jsonl") {
        return DocKind::Annotations;
    }
    match serde_json::from_str::<Value>(text) {
        Ok(v) if v.get("start").is_some() => DocKind::Scenario,
        _ => DocKind::Poi,
    }
}

fn validate(ctx: &Ctx, file: &Path, kind: Option<DocKind>) -> Result<()> {
    let mut text = String::new();
    std::fs::File::open(file)
        .and_then(|mut f| f.read_to_string(&mut text))
        .with_context(|| format!("reading {}", file.display()))?;
    let kind = kind.unwrap_or_else(|| detect_kind(file, &text));
    let fail = |e: &dyn std::fmt::Display| invalid(format!("{}: {e}", file.display()));
    let summary = match kind {
        DocKind::Poi => {
            let g = SceneGraph::load(&text, Strictness::Strict).map_err(|e| fail(&e))?;
            json!({"kind": "poi", "poi_id": g.poi_id, "objects": g.objects.len()})
        }
        DocKind::Annotations => {
            let scene = Arc::new(ctx.scene()?);
            let s = AnnotationStore::load_jsonl(&text, scene).map_err(|e| fail(&e))?;
            json!({"kind": "annotations", "annotations": s.len()})
        }
        DocKind::Scenario => {
            let sc = Scenario::parse(&text).map_err(|e| fail(&e))?;
            let base = file.parent().unwrap_or(Path::new("."));
            LoadedScenario::from_scenario(sc.clone(), base).map_err(|e| fail(&e))?;
            json!({"kind": "scenario", "name": sc.name})
        }
    };
    ctx.emit(&json!({"valid": true, "document": summary}), || format!("{}: ok", file.display()));
    Ok(())
}
