//! The `weakseg` command line. [`cli_main`] returns the process exit code:
//! 0 on success, 1 for usage errors, 2 for data errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::eval::{prf_dice, summarize, write_histogram_csv, write_metrics_csv, write_summary_json, Metrics, Summary};
use crate::gradsuite::gradient_suite;
use crate::imgcore::{encode_mask_pgm, read_pgm, BinaryMask};
use crate::levelset::{cv_evolve, CvConfig};
use crate::model::ModelParams;
use crate::recist::{
    constrained_region, fit_ellipse, rasterize_ellipse, read_annotations_csv, Ellipse, RecistAnnotation,
};
use crate::synthgen::{gen_dataset, read_dataset, write_dataset, SynthConfig};
use crate::weaktrain::{predict_mask, train_rounds, RlsRegion, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "weakseg",
    version,
    about = "Weakly-supervised lesion segmentation from RECIST annotations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic lesion dataset.
    Synth(SynthArgs),
    /// Train a segmenter from RECIST annotations.
    Train(TrainArgs),
    /// Score predictions or a trained model against ground-truth masks.
    Eval(EvalArgs),
    /// Segment one image with the Chan-Vese level set solver.
    SegmentCv(SegmentCvArgs),
    /// Rasterize the ellipse fitted to a RECIST annotation.
    FitEllipse(FitEllipseArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON generator settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    irregularity: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    distractors: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RegionArg {
    Constrained,
    WholeImage,
    Off,
}

impl From<RegionArg> for RlsRegion {
    fn from(r: RegionArg) -> Self {
        match r {
            RegionArg::Constrained => RlsRegion::Constrained,
            RegionArg::WholeImage => RlsRegion::WholeImage,
            RegionArg::Off => RlsRegion::Off,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training configuration JSON; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    rls_region: Option<RegionArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset with ground truth to score after every round.
    #[arg(long)]
    eval_data: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["pred", "model"]))]
struct EvalArgs {
    /// Dataset directory with `gt/` masks.
    #[arg(long)]
    data: PathBuf,
    /// Directory of predicted masks named `ID.pgm`.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Trained model file; masks are predicted and saved under `OUT/pred`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Inference long-side bounds for `--model`.
    #[arg(long, value_parser = parse_long_side, default_value = "32,64")]
    long_side: [usize; 2],
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("start").required(true).args(["init", "ellipse"]))]
struct SegmentCvArgs {
    #[arg(long)]
    image: PathBuf,
    /// Initial mask PGM (nonzero is inside).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Ellipse JSON `{cx, cy, a, b, theta}` used as the initial contour.
    #[arg(long)]
    ellipse: Option<PathBuf>,
    /// Solver settings JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// CSV energy trace `step,energy`.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("annotation").required(true).args(["coords", "recist"]))]
#[command(group = clap::ArgGroup::new("dims").required(true).args(["size", "like"]))]
struct FitEllipseArgs {
    /// `x1,y1,x2,y2,x3,y3,x4,y4`, long axis first.
    #[arg(long, value_parser = parse_coords, allow_hyphen_values = true)]
    coords: Option<[f64; 8]>,
    /// Annotation CSV; requires `--id`.
    #[arg(long, requires = "id")]
    recist: Option<PathBuf>,
    #[arg(long)]
    id: Option<String>,
    /// Output size `WIDTHxHEIGHT`.
    #[arg(long, value_parser = parse_size)]
    size: Option<(usize, usize)>,
    /// Take the output size from this image.
    #[arg(long)]
    like: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the constrained region mask.
    #[arg(long)]
    region_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random instances per check.
    #[arg(long, default_value_t = 3)]
    cases: usize,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w: usize = w.trim().parse().map_err(|_| "bad width")?;
    let h: usize = h.trim().parse().map_err(|_| "bad height")?;
    if w == 0 || h == 0 {
        return Err("dimensions must be positive".into());
    }
    Ok((w, h))
}

fn parse_list<T: std::str::FromStr, const N: usize>(s: &str) -> std::result::Result<[T; N], String> {
    let items: Vec<T> = s
        .split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| format!("bad number {v:?}")))
        .collect::<std::result::Result<_, _>>()?;
    let n = items.len();
    items
        .try_into()
        .map_err(|_| format!("expected {N} comma-separated values, got {n}"))
}

fn parse_coords(s: &str) -> std::result::Result<[f64; 8], String> {
    parse_list(s)
}

fn parse_long_side(s: &str) -> std::result::Result<[usize; 2], String> {
    parse_list(s)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, encode_mask_pgm(mask))?;
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    cfg.seed = a.seed;
    cfg.size = a.size.unwrap_or(cfg.size);
    cfg.irregularity = a.irregularity.unwrap_or(cfg.irregularity);
    cfg.noise = a.noise.unwrap_or(cfg.noise);
    cfg.distractors = a.distractors.unwrap_or(cfg.distractors);
    cfg.validate()?;
    let data = gen_dataset(&cfg, a.n)?;
    write_dataset(&a.out, &data)?;
    println!("wrote {} samples to {}", data.samples.len(), a.out.display());
    Ok(())
}

fn print_summary(label: &str, s: &Summary) {
    println!(
        "{label}: n={} dice {:.4}±{:.4} precision {:.4}±{:.4} recall {:.4}±{:.4}",
        s.n, s.dice.mean, s.dice.std, s.precision.mean, s.precision.std, s.recall.mean, s.recall.std
    );
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(r) = a.rls_region {
        cfg.rls_region = r.into();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let data = read_dataset(&a.data)?;
    let eval_set = match &a.eval_data {
        Some(d) => Some(read_dataset(d)?),
        None => None,
    };
    let out = train_rounds(&data, &cfg, eval_set.as_deref())?;
    std::fs::create_dir_all(&a.out)?;
    out.params.save(a.out.join("model.bin"))?;
    out.history.write_csv(a.out.join("history.csv"))?;
    std::fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    if !out.history.round_summaries.is_empty() {
        out.history.write_rounds_csv(a.out.join("rounds.csv"))?;
        for (round, s) in &out.history.round_summaries {
            print_summary(&format!("round {round}"), s);
        }
    }
    for w in &out.history.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(last) = out.history.records.last() {
        println!(
            "trained {} rounds, final epoch seg loss {:.4}, rls loss {:.4}",
            cfg.rounds, last.mean_seg_loss, last.mean_rls_loss
        );
    }
    println!("model written to {}", a.out.join("model.bin").display());
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let model = match &a.model {
        Some(p) => Some(ModelParams::load(p)?),
        None => None,
    };
    let long_side = a.long_side;
    std::fs::create_dir_all(&a.out)?;
    let mut cases: Vec<(String, Metrics)> = Vec::with_capacity(data.len());
    for s in &data {
        let gt = s
            .gt_mask
            .as_ref()
            .ok_or_else(|| Error::InvalidMask(format!("sample {} has no ground truth", s.id)))?;
        let pred = match (&model, &a.pred) {
            (Some(m), _) => {
                let p = predict_mask(m, &s.image, long_side)?;
                write_mask(&a.out.join("pred").join(format!("{}.pgm", s.id)), &p)?;
                p
            }
            (None, Some(dir)) => read_pgm(dir.join(format!("{}.pgm", s.id)))?.threshold(0.5),
            (None, None) => unreachable!("clap requires --pred or --model"),
        };
        cases.push((s.id.clone(), prf_dice(&pred, gt)?));
    }
    let metrics: Vec<Metrics> = cases.iter().map(|(_, m)| *m).collect();
    let summary = summarize(&metrics)?;
    write_metrics_csv(a.out.join("metrics.csv"), &cases)?;
    write_summary_json(a.out.join("summary.json"), &summary)?;
    write_histogram_csv(a.out.join("histogram.csv"), &summary)?;
    print_summary("eval", &summary);
    Ok(())
}

fn run_segment_cv(a: SegmentCvArgs) -> Result<()> {
    let image = read_pgm(&a.image)?;
    let init = match (&a.init, &a.ellipse) {
        (Some(p), _) => read_pgm(p)?.threshold(0.5),
        (None, Some(p)) => {
            let e: Ellipse = read_json(p)?;
            rasterize_ellipse(&e, image.dims())
        }
        (None, None) => unreachable!("clap requires --init or --ellipse"),
    };
    let mut cfg: CvConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => CvConfig::default(),
    };
    cfg.mu = a.mu.unwrap_or(cfg.mu);
    cfg.nu = a.nu.unwrap_or(cfg.nu);
    cfg.iters = a.iters.unwrap_or(cfg.iters);
    cfg.validate()?;
    let r = cv_evolve(&image, &init, &cfg)?;
    write_mask(&a.out, &r.mask)?;
    if let Some(t) = &a.trace {
        let mut w = csv::Writer::from_path(t)?;
        w.write_record(["step", "energy"])?;
        for (i, e) in r.energies.iter().enumerate() {
            w.write_record([i.to_string(), e.to_string()])?;
        }
        w.flush()?;
    }
    println!(
        "{} steps, converged: {}, final energy {:.6}, foreground {} px",
        r.iterations,
        r.converged,
        r.energies.last().copied().unwrap_or(f64::NAN),
        r.mask.count()
    );
    if r.degenerate {
        eprintln!("warning: a step would have emptied one phase; returned the last valid contour");
    }
    Ok(())
}

fn run_fit_ellipse(a: FitEllipseArgs) -> Result<()> {
    let ann = match (&a.coords, &a.recist) {
        (Some(c), _) => RecistAnnotation::from_coords(*c),
        (None, Some(path)) => {
            let id = a.id.as_deref().unwrap_or_default();
            read_annotations_csv(path)?
                .into_iter()
                .find(|(i, _)| i == id)
                .map(|(_, ann)| ann)
                .ok_or_else(|| Error::InvalidAnnotation(format!("no annotation with id {id}")))?
        }
        (None, None) => unreachable!("clap requires --coords or --recist"),
    };
    let dims = match (a.size, &a.like) {
        (Some(d), _) => d,
        (None, Some(p)) => read_pgm(p)?.dims(),
        (None, None) => unreachable!("clap requires --size or --like"),
    };
    let e = fit_ellipse(&ann)?;
    write_mask(&a.out, &rasterize_ellipse(&e, dims))?;
    if let Some(p) = &a.region_out {
        write_mask(p, &constrained_region(&e, dims))?;
    }
    println!("{}", serde_json::to_string(&e)?);
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> Result<bool> {
    let checks = gradient_suite(a.seed, a.cases.max(1))?;
    let mut ok = true;
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<24} max rel error {:.3e} (tolerance {:.0e}) {verdict}",
            c.name, c.max_rel_error, c.tolerance
        );
        ok &= c.passed();
    }
    Ok(ok)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `argv` (program name first) and runs the chosen subcommand.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::SegmentCv(a) => run_segment_cv(a),
        Command::FitEllipse(a) => run_fit_ellipse(a),
        Command::Gradcheck(a) => match run_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("error: gradient check failed");
                return EXIT_DATA;
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
