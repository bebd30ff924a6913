use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use lvamm::amm::{synthesize_amm, Point, Scanline};
use lvamm::detector::{DetectorDescriptor, BASELINE_ID};
use lvamm::formats::{
    amm_png, coordinate_convention, emit_phantom_dataset, load_manifest, phantom_scanline,
    read_annotations, AnnotationRecord, LoadedClip,
};
use lvamm::phantom::PhantomSpec;
use lvamm::pipeline::{
    default_thresholds_mm, evaluate, measure_clip, pair_reports, ClipInfo, MeasurementReport,
    PipelineConfig,
};

/// Left-ventricle measurement along an operator scanline via anatomical M-mode.
///
/// Coordinates everywhere are pixels, origin top-left, x rightward, y downward.
#[derive(Debug, Parser)]
#[command(name = "lvamm", version)]
struct Cli {
    /// Pipeline config (JSON). Flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Samples along the scanline (AMM rows).
    #[arg(long, global = true)]
    v_count: Option<usize>,
    /// Frames in the clip window (AMM columns).
    #[arg(long, global = true)]
    w_count: Option<usize>,
    /// Heatmap Gaussian width in AMM rows.
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset: frames, ED/ES manifests, annotations.
    Phantom(PhantomArgs),
    /// Render the AMM image along a scanline as an 8-bit PNG.
    Amm(AmmArgs),
    /// Measure IVS, LVID and LVPW along a scanline.
    Measure(MeasureArgs),
    /// Score measurement reports against annotations.
    Evaluate(EvaluateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct PhantomArgs {
    #[arg(long)]
    out: PathBuf,
    /// Phantom spec (JSON); missing fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    spacing: f64,
    /// Tilt of the annotation scanline from vertical, degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    angle_deg: f64,
}

#[derive(Debug, Args)]
struct ScanlineArgs {
    /// Scanline endpoints as `x0,y0,x1,y1`.
    #[arg(long, value_parser = parse_scanline, allow_hyphen_values = true)]
    scanline: Option<Scanline>,
    /// Take the scanline from the annotation whose clip_id matches the manifest id.
    #[arg(long, conflicts_with = "scanline")]
    scanline_from: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AmmArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    sl: ScanlineArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write sample-path metadata as JSON.
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MeasureArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Opposite-phase clip; the report then carries cardiac indices.
    #[arg(long)]
    paired_manifest: Option<PathBuf>,
    #[command(flatten)]
    sl: ScanlineArgs,
    /// Detector id; defaults to the built-in baseline, or to the
    /// `--heatmap` detector when that is given.
    #[arg(long)]
    detector: Option<String>,
    /// Extra detector descriptors (JSON object or array).
    #[arg(long)]
    detector_config: Option<PathBuf>,
    /// Heatmap file prefix (`.hmraw` + `.hmmeta`); `{clip_id}` is substituted.
    /// Registers a detector with id `heatmap-file`.
    #[arg(long)]
    heatmap: Option<String>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Report JSON files from `measure`.
    #[arg(long, num_args = 1.., required = true)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    out_summary: PathBuf,
    /// SDR thresholds in mm, comma separated; default 0 to 6 in 0.5 steps.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Origin allowed by CORS (`*` for any).
    #[arg(long)]
    allow_origin: Option<String>,
    #[arg(long, default_value_t = 1800)]
    session_ttl_s: u64,
    #[arg(long, default_value_t = 256)]
    max_upload_mb: usize,
}

const HEATMAP_DETECTOR_ID: &str = "heatmap-file";

#[derive(Debug)]
enum Failure {
    Input(String),
    Processing(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Processing(_) => 3,
        }
    }
}

impl From<lvamm::Error> for Failure {
    fn from(e: lvamm::Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Processing(e.to_string())
        }
    }
}

impl From<lvamm::formats::FormatError> for Failure {
    fn from(e: lvamm::formats::FormatError) -> Self {
        lvamm::Error::from(e).into()
    }
}

type Outcome = Result<(), Failure>;

fn parse_scanline(s: &str) -> Result<Scanline, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x0, y0, x1, y1] => Ok(Scanline {
            p_start: Point::new(x0, y0),
            p_end: Point::new(x1, y1),
        }),
        _ => Err(format!("expected x0,y0,x1,y1, got {} numbers", v.len())),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Input(format!("malformed {what} {}: {e}", path.display())))
}

fn write_out(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::Processing(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::Processing(format!("{}: {e}", path.display())))
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => read_json(p, "config")?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = cli.v_count {
        cfg.v_count = v;
    }
    if let Some(w) = cli.w_count {
        cfg.w_count = w;
    }
    if let Some(s) = cli.sigma {
        cfg.sigma = s;
    }
    if cfg.w_count == 0 || cfg.v_count < 2 || !(cfg.sigma > 0.0) {
        return Err(Failure::Input(format!(
            "invalid config: v_count {} (>= 2), w_count {} (>= 1), sigma {} (> 0)",
            cfg.v_count, cfg.w_count, cfg.sigma
        )));
    }
    Ok(cfg)
}

fn resolve_scanline(args: &ScanlineArgs, clip_id: &str) -> Result<Scanline, Failure> {
    if let Some(sl) = args.scanline {
        return Ok(sl);
    }
    let Some(path) = &args.scanline_from else {
        return Err(Failure::Input(
            "a scanline is required: --scanline or --scanline-from".into(),
        ));
    };
    let anns: Vec<AnnotationRecord> = read_annotations(path)?;
    anns.iter()
        .find(|a| a.clip_id == clip_id)
        .map(|a| a.scanline)
        .ok_or_else(|| {
            Failure::Input(format!("no annotation for clip '{clip_id}' in {}", path.display()))
        })
}

fn load(path: &Path, cfg: &PipelineConfig) -> Result<LoadedClip, Failure> {
    Ok(load_manifest(path, cfg.w_count)?)
}

fn cmd_phantom(args: &PhantomArgs) -> Outcome {
    let mut spec: PhantomSpec = match &args.spec {
        Some(p) => read_json(p, "phantom spec")?,
        None => PhantomSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.noise_sd {
        spec.noise_sd = n;
    }
    if let Some(f) = args.frames {
        spec.frame_count = f;
    }
    if !(args.spacing > 0.0) {
        return Err(Failure::Input("--spacing must be positive".into()));
    }
    let sl = phantom_scanline(&spec, args.angle_deg);
    let out = emit_phantom_dataset(&spec, &args.out, &sl, args.spacing)?;
    println!("{}", out.ed_manifest.display());
    println!("{}", out.es_manifest.display());
    println!("{}", out.annotations.display());
    Ok(())
}

fn cmd_amm(cfg: &PipelineConfig, args: &AmmArgs) -> Outcome {
    let loaded = load(&args.manifest, cfg)?;
    let sl = resolve_scanline(&args.sl, &loaded.manifest.id)?;
    let amm = synthesize_amm(&loaded.clip, &sl, cfg.v_count)
        .map_err(|e| Failure::from(lvamm::Error::from(e).with_clip(&loaded.manifest.id)))?;
    write_out(&args.out, &amm_png(&amm))?;
    if let Some(meta) = &args.meta {
        let v = serde_json::json!({
            "coordinate_convention": coordinate_convention(),
            "clip_id": loaded.manifest.id,
            "v_count": amm.v_count(),
            "w_count": amm.w_count(),
            "anchor_column": amm.anchor_column,
            "p_start": amm.path.start(),
            "p_end": amm.path.end(),
            "spacing_px": amm.path.spacing,
            "spacing_cm": amm.path.spacing * loaded.clip.spacing_cm_per_px,
        });
        let mut s = serde_json::to_string_pretty(&v).expect("json");
        s.push('\n');
        write_out(meta, s.as_bytes())?;
    }
    Ok(())
}

fn detector_for(cfg: &mut PipelineConfig, args: &MeasureArgs) -> Result<DetectorDescriptor, Failure> {
    if let Some(p) = &args.detector_config {
        let v: serde_json::Value = read_json(p, "detector config")?;
        let list = if v.is_array() { v } else { serde_json::Value::Array(vec![v]) };
        let extra: Vec<DetectorDescriptor> = serde_json::from_value(list)
            .map_err(|e| Failure::Input(format!("malformed detector config {}: {e}", p.display())))?;
        cfg.detectors.extend(extra);
    }
    if let Some(prefix) = &args.heatmap {
        cfg.detectors
            .push(DetectorDescriptor::external(HEATMAP_DETECTOR_ID, prefix.clone()));
    }
    let id = match (&args.detector, &args.heatmap) {
        (Some(id), _) => id.as_str(),
        (None, Some(_)) => HEATMAP_DETECTOR_ID,
        (None, None) => BASELINE_ID,
    };
    let registry = cfg.registry()?;
    Ok(registry.resolve(id).map_err(lvamm::Error::from)?.clone())
}

fn cmd_measure(mut cfg: PipelineConfig, args: &MeasureArgs) -> Outcome {
    let det = detector_for(&mut cfg, args)?;
    let primary = load(&args.manifest, &cfg)?;
    let sl = resolve_scanline(&args.sl, &primary.manifest.id)?;
    let run = |c: &LoadedClip| -> Result<MeasurementReport, Failure> {
        let info = ClipInfo {
            id: c.manifest.id.clone(),
            phase: c.manifest.phase,
        };
        Ok(measure_clip(&c.clip, &info, &sl, &det, &cfg)?.report)
    };
    let mut report = run(&primary)?;
    if let Some(p) = &args.paired_manifest {
        let paired = load(p, &cfg)?;
        report = pair_reports(report, run(&paired)?)?;
    }
    let json = report.to_json();
    match &args.out {
        Some(p) => write_out(p, json.as_bytes()),
        None => std::io::stdout()
            .write_all(json.as_bytes())
            .map_err(|e| Failure::Processing(e.to_string())),
    }
}

fn cmd_evaluate(args: &EvaluateArgs) -> Outcome {
    let reports = args
        .predictions
        .iter()
        .map(|p| read_json::<MeasurementReport>(p, "report"))
        .collect::<Result<Vec<_>, _>>()?;
    let annotations = read_annotations(&args.annotations)?;
    let thresholds = args.thresholds.clone().unwrap_or_else(default_thresholds_mm);
    let ev = evaluate(&reports, &annotations, &thresholds)?;
    let mut csv = Vec::new();
    ev.write_csv(&mut csv)?;
    write_out(&args.out_csv, &csv)?;
    write_out(&args.out_summary, ev.summary_json().as_bytes())
}

fn cmd_serve(cfg: PipelineConfig, args: &ServeArgs) -> Outcome {
    let ip: std::net::IpAddr = args
        .host
        .parse()
        .map_err(|e| Failure::Input(format!("bad --host '{}': {e}", args.host)))?;
    let service = lvamm_service::ServiceConfig {
        pipeline: cfg,
        session_ttl: Duration::from_secs(args.session_ttl_s),
        max_upload_bytes: args.max_upload_mb.saturating_mul(1024 * 1024),
        allow_origin: args.allow_origin.clone(),
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Processing(e.to_string()))?;
    rt.block_on(lvamm_service::serve(SocketAddr::new(ip, args.port), service))
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidInput => Failure::Input(e.to_string()),
            _ => Failure::Processing(e.to_string()),
        })
}

fn run(cli: &Cli) -> Outcome {
    match &cli.cmd {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Amm(a) => cmd_amm(&pipeline_config(cli)?, a),
        Command::Measure(a) => cmd_measure(pipeline_config(cli)?, a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Serve(a) => cmd_serve(pipeline_config(cli)?, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Input(m) | Failure::Processing(m)) = &f;
            eprintln!("lvamm: {m}");
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn scanline_argument() {
        let sl = parse_scanline("1, 2.5,-3,4").unwrap();
        assert_eq!(sl.p_start, Point::new(1.0, 2.5));
        assert_eq!(sl.p_end, Point::new(-3.0, 4.0));
        assert!(parse_scanline("1,2,3").is_err());
        assert!(parse_scanline("1,2,3,x").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"v_count": 128, "w_count": 16}"#).unwrap();
        let cli = Cli::parse_from([
            "lvamm", "--config", p.to_str().unwrap(), "--w-count", "8", "evaluate",
            "--predictions", "a.json", "--annotations", "b.json", "--out-csv", "c",
            "--out-summary", "d",
        ]);
        let cfg = pipeline_config(&cli).unwrap();
        assert_eq!((cfg.v_count, cfg.w_count, cfg.sigma), (128, 8, 2.0));
    }
}
