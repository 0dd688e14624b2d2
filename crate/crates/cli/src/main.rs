mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use clc::bench::{correlated_corpus, rd_sweep, Sweep, ADAPTIVE_W0, ADAPTIVE_W1, DEFAULT_STEPS};
use clc::codec::{compress, decompress, CodecConfig, DEFAULT_REFS, DEFAULT_STEP};
use clc::conditioning::{DEFAULT_TEMPERATURE, DEFAULT_WINDOW};
use clc::dictionary::{build_dictionary, dict_load, dict_save, BuildConfig, Dictionary, TaggedPatch};
use clc::image::{image_read, image_write};
use clc::metrics::{bd_rate, psnr};
use clc::theory::{robustness_pr, verify_bound, BoundReport, RobustnessPoint, SweepSpec};
use clc::{ClcError, Image};

use report::{write_csv, write_json, BENCH_SCHEMA, EVAL_SCHEMA, THEORY_SCHEMA};

const EXIT_DATA: u8 = 2;
const EXIT_DICT_MISMATCH: u8 = 3;
const EXIT_MALFORMED: u8 = 4;

#[derive(Parser)]
#[command(name = "clc", version, about = "Dictionary-conditioned image codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dictionary from a directory of PPM/PGM images.
    BuildDict(BuildDictArgs),
    /// Compress an image against a dictionary.
    Compress(CompressArgs),
    /// Decompress a bitstream with the dictionary it was coded against.
    Decompress(DecompressArgs),
    /// Report bpp and PSNR for (original, bitstream) pairs.
    Eval(EvalArgs),
    /// Rate-distortion sweeps over references, cluster sizes and toggles.
    Bench(BenchArgs),
    /// Monte-Carlo check of the subspace error bound plus the robustness sweep.
    VerifyTheory(VerifyTheoryArgs),
}

#[derive(Args)]
struct BuildDictArgs {
    corpus: PathBuf,
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    clusters: usize,
    #[arg(long, default_value_t = 64)]
    pca_dim: usize,
    /// Side of the square tiles cut from each corpus image.
    #[arg(long, default_value_t = 256)]
    patch: usize,
    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long, env = "CLC_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct CodecArgs {
    /// Number of dictionary references.
    #[arg(long, default_value_t = DEFAULT_REFS)]
    refs: usize,
    /// Quantization step.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    /// Block search window radius.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    alpha_w0: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    alpha_w1: f64,
    /// Code without dictionary references.
    #[arg(long)]
    no_cond: bool,
    /// Skip offset refinement and gain fitting.
    #[arg(long)]
    no_align: bool,
}

impl CodecArgs {
    fn config(&self) -> CodecConfig {
        CodecConfig {
            refs: self.refs,
            step: self.step,
            window: self.window,
            temperature: self.temperature,
            alpha_w0: self.alpha_w0,
            alpha_w1: self.alpha_w1,
            no_cond: self.no_cond,
            no_align: self.no_align,
            ..CodecConfig::default()
        }
    }
}

#[derive(Args)]
struct CompressArgs {
    input: PathBuf,
    dict: PathBuf,
    out: PathBuf,
    #[command(flatten)]
    codec: CodecArgs,
}

#[derive(Args)]
struct DecompressArgs {
    bitstream: PathBuf,
    dict: PathBuf,
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dict: PathBuf,
    /// Pairs written as ORIGINAL:BITSTREAM.
    pairs: Vec<String>,
    /// File with one "ORIGINAL BITSTREAM" pair per line, paths relative to the file.
    #[arg(long)]
    pairs_file: Option<PathBuf>,
    /// Per-image CSV report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of PPM/PGM images; tiles become the dictionary.
    corpus: PathBuf,
    /// Images to code; defaults to the corpus images themselves.
    #[arg(long)]
    inputs: Option<PathBuf>,
    /// Dictionary sizes to sweep; defaults to one entry per tile.
    #[arg(long, value_delimiter = ',')]
    clusters: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4, 5])]
    refs: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_STEPS)]
    steps: Vec<f64>,
    #[arg(long, default_value_t = 256)]
    patch: usize,
    #[arg(long, default_value_t = 64)]
    pca_dim: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    alpha_w0: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    alpha_w1: f64,
    #[arg(long, env = "CLC_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
    /// Summary with curves and BD-rates.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyTheoryArgs {
    /// JSON sweep specification; omitted fields take their defaults.
    #[arg(long)]
    sweep_spec: Option<PathBuf>,
    /// Output directory for trials.csv and summary.json.
    #[arg(long, default_value = "theory-report")]
    out: PathBuf,
    /// Master seed; overrides the sweep specification's seed.
    #[arg(long, env = "CLC_SEED")]
    seed: Option<u64>,
    /// Skip the dictionary-perturbation robustness sweep.
    #[arg(long)]
    no_robustness: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn with_code(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn context(what: impl std::fmt::Display) -> impl FnOnce(ClcError) -> Failure {
    move |e| Failure::data(format!("{what}: {e}"))
}

fn io_context(what: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> Failure {
    move |e| Failure::data(format!("{what}: {e}"))
}

/// Exit code for a failure while decoding a bitstream.
fn stream_failure(path: &Path, e: ClcError) -> Failure {
    let code = match e {
        ClcError::DictionaryMismatch => EXIT_DICT_MISMATCH,
        ClcError::MalformedBitstream(_) | ClcError::BadMagic { .. } | ClcError::VersionMismatch { .. } => {
            EXIT_MALFORMED
        }
        _ => EXIT_DATA,
    };
    Failure::with_code(code, format!("{}: {e}", path.display()))
}

fn load_dict(path: &Path) -> Result<Dictionary, Failure> {
    dict_load(path).map_err(context(format!("dictionary {}", path.display())))
}

fn read_image(path: &Path) -> Result<Image, Failure> {
    image_read(path).map_err(context(format!("image {}", path.display())))
}

/// PPM/PGM files of a directory in name order.
fn read_image_dir(dir: &Path) -> Result<Vec<(String, Image)>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_context(format!("corpus {}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "ppm" | "pgm" | "pnm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::data(format!("corpus {} contains no PPM/PGM images", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            read_image(p).map(|im| (name, im))
        })
        .collect()
}

/// Non-overlapping tiles of every image; mixed gray/colour corpora are promoted to colour.
fn corpus_tiles(images: &[(String, Image)], patch: usize) -> Result<Vec<TaggedPatch>, Failure> {
    if patch == 0 {
        return Err(Failure::data("--patch must be positive"));
    }
    let channels = images.iter().map(|(_, im)| im.channels()).max().unwrap_or(1);
    let mut out = Vec::new();
    for (name, im) in images {
        let im = im.with_channels(channels).map_err(context(name))?;
        for (t, tile) in im.tiles(patch).into_iter().enumerate() {
            out.push(TaggedPatch::new(tile, format!("{name}#{t}")));
        }
    }
    Ok(out)
}

fn build(patches: Vec<TaggedPatch>, cfg: BuildConfig) -> Result<Dictionary, Failure> {
    if patches.is_empty() {
        return Err(Failure::data("corpus yields no patches at this patch size"));
    }
    if cfg.clusters > patches.len() {
        return Err(Failure::data(format!(
            "{} clusters requested but the corpus yields only {} patches",
            cfg.clusters,
            patches.len()
        )));
    }
    build_dictionary(patches, cfg).map_err(context("dictionary build"))
}

fn cmd_build_dict(a: BuildDictArgs) -> CmdResult {
    let images = read_image_dir(&a.corpus)?;
    let patches = corpus_tiles(&images, a.patch)?;
    let n = patches.len();
    let dict = build(
        patches,
        BuildConfig {
            clusters: a.clusters,
            batch_size: a.batch_size,
            iterations: a.iterations,
            seed: a.seed,
            pca_dim: a.pca_dim,
        },
    )?;
    dict_save(&dict, &a.out).map_err(context(format!("writing {}", a.out.display())))?;
    println!("patches: {n}");
    println!("entries: {}", dict.len());
    println!("feature_dim: {}", dict.feature_dim());
    println!("patch: {}", a.patch);
    println!("hash: {}", dict.hash_hex());
    Ok(ExitCode::SUCCESS)
}

fn cmd_compress(a: CompressArgs) -> CmdResult {
    let start = Instant::now();
    let dict = load_dict(&a.dict)?;
    let image = read_image(&a.input)?;
    let tree = dict.ball_tree().map_err(context("ball tree"))?;
    let enc = compress(&image, &dict, &tree, None, &a.codec.config()).map_err(context("compress"))?;
    fs::write(&a.out, &enc.bytes).map_err(io_context(format!("writing {}", a.out.display())))?;
    let s = &enc.stats;
    let ids: Vec<String> = s.ref_ids.iter().map(|i| i.to_string()).collect();
    println!("bytes: {}", enc.bytes.len());
    println!("bpp: {:.6}", s.bpp());
    println!("side_info_bpp: {:.6}", s.side_info_bpp());
    println!("estimated_bpp: {:.6}", s.estimated_bpp());
    println!("psnr: {:.4}", s.psnr);
    println!("refs: [{}]", ids.join(","));
    println!("time_ms: {:.1}", start.elapsed().as_secs_f64() * 1e3);
    Ok(ExitCode::SUCCESS)
}

fn cmd_decompress(a: DecompressArgs) -> CmdResult {
    let dict = load_dict(&a.dict)?;
    let bytes = fs::read(&a.bitstream).map_err(io_context(format!("reading {}", a.bitstream.display())))?;
    let image = decompress(&bytes, &dict).map_err(|e| stream_failure(&a.bitstream, e))?;
    image_write(&a.out, &image).map_err(context(format!("writing {}", a.out.display())))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EvalRow {
    original: String,
    bitstream: String,
    width: usize,
    height: usize,
    bytes: usize,
    bpp: f64,
    psnr: f64,
}

fn eval_pairs(a: &EvalArgs) -> Result<Vec<(PathBuf, PathBuf)>, Failure> {
    let mut pairs = Vec::new();
    for p in &a.pairs {
        let (orig, stream) = p
            .rsplit_once(':')
            .ok_or_else(|| Failure::data(format!("pair {p:?} is not ORIGINAL:BITSTREAM")))?;
        pairs.push((PathBuf::from(orig), PathBuf::from(stream)));
    }
    if let Some(file) = &a.pairs_file {
        let base = file.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(file).map_err(io_context(file.display()))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(Failure::data(format!("{}:{}: expected two paths", file.display(), i + 1)));
            }
            pairs.push((base.join(parts[0]), base.join(parts[1])));
        }
    }
    if pairs.is_empty() {
        return Err(Failure::data("no pairs to evaluate"));
    }
    Ok(pairs)
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let pairs = eval_pairs(&a)?;
    let dict = load_dict(&a.dict)?;
    let mut rows = Vec::with_capacity(pairs.len());
    for (orig, stream) in &pairs {
        let original = read_image(orig)?;
        let bytes = fs::read(stream).map_err(io_context(format!("reading {}", stream.display())))?;
        let recon = decompress(&bytes, &dict).map_err(|e| stream_failure(stream, e))?;
        let q = psnr(&original, &recon).map_err(context(format!("{} vs {}", orig.display(), stream.display())))?;
        rows.push(EvalRow {
            original: orig.display().to_string(),
            bitstream: stream.display().to_string(),
            width: original.width(),
            height: original.height(),
            bytes: bytes.len(),
            bpp: 8.0 * bytes.len() as f64 / (original.width() * original.height()) as f64,
            psnr: q,
        });
    }
    println!("{:<32} {:>10} {:>10}", "image", "bpp", "psnr");
    for r in &rows {
        println!("{:<32} {:>10.4} {:>10.3}", r.original, r.bpp, r.psnr);
    }
    let k = rows.len() as f64;
    let mean_bpp = rows.iter().map(|r| r.bpp).sum::<f64>() / k;
    let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / k;
    println!("{:<32} {:>10.4} {:>10.3}", "mean", mean_bpp, mean_psnr);
    if let Some(out) = &a.out {
        write_csv(out, EVAL_SCHEMA, &rows).map_err(io_context(out.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct BenchRow {
    clusters: usize,
    config: String,
    refs: usize,
    step: f64,
    bpp: f64,
    psnr: f64,
    side_info_bpp: f64,
    estimated_bpp: f64,
    encode_ms: f64,
    decode_ms: f64,
    build_ms: f64,
    round_trip_ok: bool,
    bytes_match_cached: Option<bool>,
    bd_rate_vs_nocond: Option<f64>,
}

#[derive(Serialize)]
struct BenchCurve {
    clusters: usize,
    config: String,
    refs: usize,
    bd_rate_vs_nocond: Option<f64>,
    points: Vec<clc::bench::SweepPoint>,
}

#[derive(Serialize)]
struct BenchSummary {
    inputs: usize,
    patches: usize,
    steps: Vec<f64>,
    curves: Vec<BenchCurve>,
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    let corpus = read_image_dir(&a.corpus)?;
    let inputs: Vec<Image> = match &a.inputs {
        Some(dir) => read_image_dir(dir)?.into_iter().map(|(_, im)| im).collect(),
        None => corpus.iter().map(|(_, im)| im.clone()).collect(),
    };
    let patches = corpus_tiles(&corpus, a.patch)?;
    if patches.is_empty() {
        return Err(Failure::data("corpus yields no patches at this patch size"));
    }
    if a.steps.is_empty() || a.refs.is_empty() {
        return Err(Failure::data("--steps and --refs must not be empty"));
    }
    let clusters = if a.clusters.is_empty() { vec![patches.len()] } else { a.clusters.clone() };
    let base = CodecConfig {
        alpha_w0: a.alpha_w0,
        alpha_w1: a.alpha_w1,
        ..CodecConfig::default()
    };
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for &k in &clusters {
        let t = Instant::now();
        let dict = build(
            patches.clone(),
            BuildConfig {
                clusters: k,
                seed: a.seed,
                pca_dim: a.pca_dim,
                ..BuildConfig::default()
            },
        )?;
        let build_ms = t.elapsed().as_secs_f64() * 1e3;
        let tree = dict.ball_tree().map_err(context("ball tree"))?;
        let sweep = |cfg: CodecConfig, cache: bool| {
            rd_sweep(&inputs, &dict, &tree, &cfg, &a.steps, cache).map_err(context("sweep"))
        };
        let anchor = sweep(CodecConfig { no_cond: true, ..base.clone() }, false)?;
        let m0 = DEFAULT_REFS.min(dict.len());
        let mut runs: Vec<(String, usize, Sweep, Option<bool>)> = vec![("no-cond".into(), 0, anchor.clone(), None)];
        let mut cached_m0 = None;
        for &m in &a.refs {
            if m == 0 || m > dict.len() {
                eprintln!("skipping refs={m}: dictionary has {} entries", dict.len());
                continue;
            }
            let s = sweep(CodecConfig { refs: m, ..base.clone() }, true)?;
            if m == m0 {
                cached_m0 = Some(s.clone());
            }
            runs.push(("cond".into(), m, s, None));
        }
        let cached_m0 = match cached_m0 {
            Some(s) => s,
            None => sweep(CodecConfig { refs: m0, ..base.clone() }, true)?,
        };
        let no_align = sweep(CodecConfig { refs: m0, no_align: true, ..base.clone() }, true)?;
        runs.push(("no-align".into(), m0, no_align, None));
        let no_cache = sweep(CodecConfig { refs: m0, ..base.clone() }, false)?;
        let same = no_cache.streams == cached_m0.streams;
        runs.push(("no-cache".into(), m0, no_cache, Some(same)));

        let anchor_curve = anchor.curve("no-cond").ok();
        for (name, m, s, same) in runs {
            let bd = match (&anchor_curve, s.curve(&name)) {
                (Some(ac), Ok(c)) if name != "no-cond" => bd_rate(&c, ac).ok(),
                (Some(_), Ok(_)) => Some(0.0),
                _ => None,
            };
            for p in &s.points {
                rows.push(BenchRow {
                    clusters: k,
                    config: name.clone(),
                    refs: m,
                    step: p.step,
                    bpp: p.bpp,
                    psnr: p.psnr,
                    side_info_bpp: p.side_info_bpp,
                    estimated_bpp: p.estimated_bpp,
                    encode_ms: p.encode_ms,
                    decode_ms: p.decode_ms,
                    build_ms,
                    round_trip_ok: p.round_trip_ok,
                    bytes_match_cached: same,
                    bd_rate_vs_nocond: bd,
                });
            }
            let bd_text = bd.map_or("n/a".to_string(), |v| format!("{v:+.2}%"));
            let mean_bpp = s.points.iter().map(|p| p.bpp).sum::<f64>() / s.points.len() as f64;
            let mean_ms = s.points.iter().map(|p| p.encode_ms).sum::<f64>() / s.points.len() as f64;
            println!("K={k:<4} {name:<9} M={m} mean_bpp={mean_bpp:.4} bd_rate={bd_text} encode_ms={mean_ms:.1}");
            curves.push(BenchCurve {
                clusters: k,
                config: name,
                refs: m,
                bd_rate_vs_nocond: bd,
                points: s.points,
            });
        }
    }
    write_csv(&a.out, BENCH_SCHEMA, &rows).map_err(io_context(a.out.display()))?;
    if let Some(path) = &a.json {
        let summary = BenchSummary {
            inputs: inputs.len(),
            patches: patches.len(),
            steps: a.steps.clone(),
            curves,
        };
        write_json(path, BENCH_SCHEMA, &summary).map_err(io_context(path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct RobustnessSummary {
    points: Vec<RobustnessPoint>,
    pr_zero_at_clean: bool,
    pr_monotone: bool,
}

#[derive(Serialize)]
struct TheorySummary<'a> {
    passed: bool,
    #[serde(flatten)]
    bound: &'a BoundReport,
    robustness: Option<RobustnessSummary>,
}

const ROBUSTNESS_EPSILONS: [f64; 4] = [0.0, 0.1, 0.3, 0.5];

fn robustness(seed: u64) -> Result<RobustnessSummary, Failure> {
    let corpus = correlated_corpus(4, 256, 3, seed);
    let n = corpus.patches.len();
    let dict = build_dictionary(
        corpus.patches,
        BuildConfig {
            clusters: n,
            seed,
            ..BuildConfig::default()
        },
    )
    .map_err(context("robustness dictionary"))?;
    let tree = dict.ball_tree().map_err(context("ball tree"))?;
    let cfg = CodecConfig {
        alpha_w0: ADAPTIVE_W0,
        alpha_w1: ADAPTIVE_W1,
        ..CodecConfig::default()
    };
    let points = robustness_pr(&dict, &tree, &corpus.inputs, &cfg, &ROBUSTNESS_EPSILONS, &DEFAULT_STEPS, seed)
        .map_err(context("robustness"))?;
    let pr_zero_at_clean = points.first().is_some_and(|p| p.pr == 0.0);
    let pr_monotone = points.windows(2).all(|w| w[1].pr >= w[0].pr);
    Ok(RobustnessSummary {
        points,
        pr_zero_at_clean,
        pr_monotone,
    })
}

fn cmd_verify_theory(a: VerifyTheoryArgs) -> CmdResult {
    let mut spec = match &a.sweep_spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_context(path.display()))?;
            serde_json::from_str::<SweepSpec>(&text)
                .map_err(|e| Failure::data(format!("sweep spec {}: {e}", path.display())))?
        }
        None => SweepSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let report = verify_bound(&spec).map_err(context("bound verification"))?;
    for s in &report.skipped {
        eprintln!("skipped n={} rho={}: {}", s.n, s.rho, s.reason);
    }
    let rob = if a.no_robustness { None } else { Some(robustness(spec.seed)?) };
    let passed = report.passed() && rob.as_ref().is_none_or(|r| r.pr_zero_at_clean && r.pr_monotone);

    fs::create_dir_all(&a.out).map_err(io_context(a.out.display()))?;
    let csv_path = a.out.join("trials.csv");
    write_csv(&csv_path, THEORY_SCHEMA, &report.trials).map_err(io_context(csv_path.display()))?;
    let json_path = a.out.join("summary.json");
    let summary = TheorySummary {
        passed,
        bound: &report,
        robustness: rob,
    };
    write_json(&json_path, THEORY_SCHEMA, &summary).map_err(io_context(json_path.display()))?;

    println!("fitted_c: {:.4}", report.fitted_c);
    println!("violation_rate: {:.4} (delta {})", report.violation_rate, spec.delta);
    for c in &report.configs {
        println!("n={:<5} rho={:<4} median={:.5} bound={:.5}", c.n, c.rho, c.median, c.bound);
    }
    for d in &report.decay {
        println!(
            "decay rho={} n {}->{}: ratio {:.3} (expected {:.3}) {}",
            d.rho,
            d.n_small,
            d.n_large,
            d.ratio,
            d.expected,
            if d.within_band { "ok" } else { "out of band" }
        );
    }
    println!("monotone_in_n: {}", report.monotone_in_n);
    println!("monotone_in_rho: {}", report.monotone_in_rho);
    if let Some(r) = &summary.robustness {
        for p in &r.points {
            println!("epsilon={:<4} gain_db={:.4} pr={:.4}", p.epsilon, p.gain_db, p.pr);
        }
    }
    println!("{}", if passed { "PASSED" } else { "FAILED" });
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildDict(a) => cmd_build_dict(a),
        Command::Compress(a) => cmd_compress(a),
        Command::Decompress(a) => cmd_decompress(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::VerifyTheory(a) => cmd_verify_theory(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
