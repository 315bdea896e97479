//! `gradfeat` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 a
//! self-check suite failed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gradfeat::check::{self, CheckConfig};
use gradfeat::grad::{fingerprint, load_features, save_features};
use gradfeat::kernel::{load_gram_file, save_cross_gram, save_gram, GramFile};
use gradfeat::net::{load_network, save_network};
use gradfeat::pipeline::{self, compare_modes, evaluate, extract_features, format_comparison};
use gradfeat::{
    cross_gram, decision_scores, dot_kernel, gram, trace_kernel, write_atomic, ApVariant, BlockRef,
    Dataset, FeatureMode, FeatureSet, KernelKind, OvrSvmModel, PipelineConfig, SmoConfig, SyntheticTask,
};

#[derive(Parser, Debug)]
#[command(name = "gradfeat", version, about = "Rank-1 gradient features, trace kernels and one-vs-rest SVM evaluation")]
struct Cli {
    /// Worker threads for per-sample and per-row parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted multi-label task: net.dfn, train.dfs and test.dfs.
    MakeSynthetic(MakeSyntheticArgs),
    /// Extract one feature per sample into a .dff file.
    Extract(ExtractArgs),
    /// Compute a square Gram matrix, or a test × train matrix with --test.
    Gram(GramArgs),
    /// Train one-vs-rest SVMs on a precomputed Gram matrix.
    Train(TrainArgs),
    /// Score test features with a trained model and report AP per class.
    Eval(EvalArgs),
    /// extract → gram → train → eval in one go.
    Run(RunArgs),
    /// Forward / concat / gradient comparison for several layers.
    Compare(CompareArgs),
    /// Run the oracle suites.
    Check(CheckArgs),
    /// Print the header of a .dfn, .dff, .dfg, .dfs or model file.
    Info(InfoArgs),
}

#[derive(Args, Debug)]
struct MakeSyntheticArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Training samples.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Test samples (defaults to n).
    #[arg(long)]
    test_n: Option<usize>,
    /// Network widths, input first, e.g. 64,48,32,16.
    #[arg(long, value_delimiter = ',', default_value = "64,48,32,16")]
    dims: Vec<usize>,
    /// Number of labels P.
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Probability that a sample carries each class.
    #[arg(long, default_value_t = 0.35)]
    inclusion: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Gradient,
    Forward,
    Concat,
}

impl From<ModeArg> for FeatureMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Gradient => FeatureMode::Gradient,
            ModeArg::Forward => FeatureMode::Forward,
            ModeArg::Concat => FeatureMode::Concat,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Trace,
    Dot,
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Trace => KernelKind::Trace,
            KernelArg::Dot => KernelKind::Dot,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ApArg {
    /// Mean precision at each relevant item.
    Full,
    /// 11-point interpolated.
    #[value(name = "11pt")]
    Eleven,
}

impl From<ApArg> for ApVariant {
    fn from(a: ApArg) -> Self {
        match a {
            ApArg::Full => ApVariant::NonInterpolated,
            ApArg::Eleven => ApVariant::Interpolated11,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct FeatureArgs {
    /// 1-based layer index into the fully connected stack.
    #[arg(long)]
    layer: usize,
    /// SoftMax temperature applied at extraction.
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    #[arg(long, value_enum, default_value = "gradient")]
    mode: ModeArg,
    /// Blocks for forward/concat modes, e.g. x1,x2 or y3.
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<String>>,
}

impl FeatureArgs {
    fn config(&self) -> anyhow::Result<PipelineConfig> {
        let mode = FeatureMode::from(self.mode);
        let blocks = match &self.blocks {
            Some(list) if mode == FeatureMode::Gradient => {
                bail!(UsageError(format!("--blocks {list:?} has no effect in gradient mode")))
            }
            Some(list) => Some(list.iter().map(|s| s.parse::<BlockRef>()).collect::<Result<Vec<_>, _>>()?),
            None => None,
        };
        Ok(PipelineConfig {
            tau: self.tau,
            blocks,
            ..PipelineConfig::new(mode, self.layer)
        })
    }
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GramArgs {
    /// Training features (columns of a cross gram).
    #[arg(long)]
    features: PathBuf,
    /// Test features; produces a test × train matrix.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Kernel tag (default: trace for gradient features, dot otherwise).
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SvmArgs {
    #[arg(long = "c", default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_passes: usize,
}

impl SvmArgs {
    fn config(&self) -> SmoConfig {
        SmoConfig {
            c: self.c,
            tol: self.tol,
            max_passes: self.max_passes,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    gram: PathBuf,
    /// The training features the gram was computed from.
    #[arg(long)]
    features: PathBuf,
    /// Training dataset (labels).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    svm: SvmArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Features the model was trained on; checked against its fingerprint.
    #[arg(long)]
    train_features: PathBuf,
    #[arg(long)]
    test_features: PathBuf,
    /// Test dataset (labels).
    #[arg(long)]
    data: PathBuf,
    /// Layer the features came from, recorded in the report.
    #[arg(long)]
    layer: usize,
    /// Feature mode, recorded in the report.
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Temperature used at extraction, recorded in the report.
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    #[arg(long, value_enum, default_value = "full")]
    ap: ApArg,
    /// Also write the test × train kernel matrix.
    #[arg(long)]
    cross_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    #[command(flatten)]
    svm: SvmArgs,
    #[arg(long, value_enum, default_value = "full")]
    ap: ApArg,
    /// Directory for train.dff, test.dff, gram.dfg, cross.dfg, model.json, report.txt.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Layers to compare (default: all).
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    #[command(flatten)]
    svm: SvmArgs,
    #[arg(long, value_enum, default_value = "full")]
    ap: ApArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args, Debug)]
struct InfoArgs {
    path: PathBuf,
}

/// Invalid combination of otherwise well-formed flags.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Raised by `check` after printing its report.
#[derive(Debug)]
struct OracleFailure;

impl std::fmt::Display for OracleFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("one or more check suites failed")
    }
}

impl std::error::Error for OracleFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<OracleFailure>().is_some() {
        return 3;
    }
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<gradfeat::Error>() {
        Some(e) if e.is_usage_error() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: could not start thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            if code != 3 {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::MakeSynthetic(a) => make_synthetic(a),
        Command::Extract(a) => extract(a),
        Command::Gram(a) => gram_cmd(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
        Command::Check(a) => check_cmd(a),
        Command::Info(a) => info(a),
    }
}

fn read_net(p: &Path) -> anyhow::Result<gradfeat::Network> {
    load_network(p).with_context(|| format!("reading network {}", p.display()))
}

fn read_data(p: &Path) -> anyhow::Result<Dataset> {
    Dataset::load(p).with_context(|| format!("reading dataset {}", p.display()))
}

fn read_features(p: &Path) -> anyhow::Result<FeatureSet> {
    load_features(p).with_context(|| format!("reading features {}", p.display()))
}

fn write_context(p: &Path) -> String {
    format!("writing {}", p.display())
}

fn default_kernel(fs: &FeatureSet) -> KernelKind {
    match fs {
        FeatureSet::Gradient(_) => KernelKind::Trace,
        FeatureSet::Forward(_) => KernelKind::Dot,
    }
}

fn make_synthetic(a: MakeSyntheticArgs) -> anyhow::Result<()> {
    let task = SyntheticTask {
        seed: a.seed,
        n: a.n,
        test_n: a.test_n.unwrap_or(a.n),
        dims: a.dims,
        classes: a.classes,
        noise: a.noise,
        inclusion: a.inclusion,
    };
    let data = task.generate()?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let net_path = a.out_dir.join("net.dfn");
    save_network(&data.net, &net_path).with_context(|| write_context(&net_path))?;
    for (name, set) in [("train.dfs", &data.train), ("test.dfs", &data.test)] {
        let p = a.out_dir.join(name);
        set.save(&p).with_context(|| write_context(&p))?;
    }
    println!(
        "wrote {} (dims {:?}), train.dfs (n={}), test.dfs (n={}), P={}",
        net_path.display(),
        data.net.dims(),
        data.train.n(),
        data.test.n(),
        data.train.classes()
    );
    Ok(())
}

fn extract(a: ExtractArgs) -> anyhow::Result<()> {
    let cfg = a.features.config()?;
    let net = read_net(&a.net)?;
    let data = read_data(&a.data)?;
    let fs = extract_features(&net, &data, &cfg).with_context(|| format!("extracting from {}", a.data.display()))?;
    save_features(&fs, &a.out).with_context(|| write_context(&a.out))?;
    let (da, du) = fs.dims();
    println!("wrote {} {} features ({da}, {du}) to {}", fs.len(), cfg.mode, a.out.display());
    Ok(())
}

fn gram_cmd(a: GramArgs) -> anyhow::Result<()> {
    let train = read_features(&a.features)?;
    let kind = a.kernel.map(KernelKind::from).unwrap_or_else(|| default_kernel(&train));
    match &a.test {
        None => {
            let g = gram(&train, kind)?;
            save_gram(&g, &a.out).with_context(|| write_context(&a.out))?;
            println!("wrote {n}x{n} {} gram to {}", kind.name(), a.out.display(), n = g.n());
        }
        Some(test_path) => {
            let test = read_features(test_path)?;
            let g = cross_gram(&train, &test, kind)?;
            save_cross_gram(&g, &a.out).with_context(|| write_context(&a.out))?;
            println!("wrote {}x{} {} cross gram to {}", g.rows(), g.cols(), kind.name(), a.out.display());
        }
    }
    Ok(())
}

fn self_kernel(fs: &FeatureSet, i: usize, j: usize) -> gradfeat::Result<f64> {
    match fs {
        FeatureSet::Gradient(v) => trace_kernel(&v[i], &v[j]),
        FeatureSet::Forward(v) => dot_kernel(&v[i], &v[j]),
    }
}

/// Recomputes the diagonal and the first row of `g` from the features.
fn verify_gram(g: &gradfeat::GramMatrix, fs: &FeatureSet) -> anyhow::Result<()> {
    if g.n() != fs.len() {
        bail!(gradfeat::Error::FeatureMismatch(format!(
            "gram has {} samples but the feature file has {}",
            g.n(),
            fs.len()
        )));
    }
    for i in 0..g.n() {
        for (r, c) in [(i, i), (0, i)] {
            if self_kernel(fs, r, c)? != g.get(r, c) {
                bail!(gradfeat::Error::FeatureMismatch(format!(
                    "gram entry ({r}, {c}) does not match the features; was it computed from another file?"
                )));
            }
        }
    }
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let g = match load_gram_file(&a.gram).with_context(|| format!("reading gram {}", a.gram.display()))? {
        GramFile::Square(g) => g,
        GramFile::Rect(_) => bail!(gradfeat::Error::FeatureMismatch(format!(
            "{} is a rectangular matrix; training needs the square train gram",
            a.gram.display()
        ))),
    };
    let fs = read_features(&a.features)?;
    verify_gram(&g, &fs)?;
    let data = read_data(&a.data)?;
    let model = gradfeat::train_ovr(&g, data.labels(), &a.svm.config(), &fingerprint(&fs))?;
    model.save(&a.out).with_context(|| write_context(&a.out))?;
    println!("trained {} classes on {} samples, wrote {}", model.class_count(), model.train_count(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let model = OvrSvmModel::load(&a.model).with_context(|| format!("reading model {}", a.model.display()))?;
    let train = read_features(&a.train_features)?;
    let given = fingerprint(&train);
    if given != model.fingerprint {
        bail!(gradfeat::Error::FingerprintMismatch {
            model: model.fingerprint.clone(),
            given,
        });
    }
    let test = read_features(&a.test_features)?;
    let data = read_data(&a.data)?;
    if data.n() != test.len() {
        bail!(gradfeat::Error::FeatureMismatch(format!(
            "{} test features but {} labelled samples",
            test.len(),
            data.n()
        )));
    }
    if data.classes() != model.class_count() {
        bail!(gradfeat::Error::FeatureMismatch(format!(
            "model has {} classes, dataset has {}",
            model.class_count(),
            data.classes()
        )));
    }
    let cross = cross_gram(&train, &test, model.kernel)?;
    if let Some(p) = &a.cross_out {
        save_cross_gram(&cross, p).with_context(|| write_context(p))?;
    }
    let scores = decision_scores(&model, &cross)?;
    let cfg = PipelineConfig {
        tau: a.tau,
        kernel: model.kernel,
        ap: a.ap.into(),
        smo: SmoConfig {
            c: model.classes.first().map_or(1.0, |m| m.c),
            ..SmoConfig::default()
        },
        ..PipelineConfig::new(a.mode.into(), a.layer)
    };
    let report = evaluate(&scores, data.labels(), &cfg, model.train_count())?;
    emit(&report.to_text(), a.out.as_deref())
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    print!("{text}");
    if let Some(p) = out {
        write_atomic(p, text.as_bytes()).with_context(|| write_context(p))?;
    }
    Ok(())
}

fn run(a: RunArgs) -> anyhow::Result<()> {
    let mut cfg = a.features.config()?;
    if let Some(k) = a.kernel {
        cfg.kernel = k.into();
    }
    cfg.smo = a.svm.config();
    cfg.ap = a.ap.into();
    let net = read_net(&a.net)?;
    let train = read_data(&a.train)?;
    let test = read_data(&a.test)?;
    let out = pipeline::run(&net, &train, &test, &cfg)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let p = |name: &str| a.out_dir.join(name);
    save_features(&out.train_features, p("train.dff")).with_context(|| write_context(&p("train.dff")))?;
    save_features(&out.test_features, p("test.dff")).with_context(|| write_context(&p("test.dff")))?;
    save_gram(&out.gram, p("gram.dfg")).with_context(|| write_context(&p("gram.dfg")))?;
    save_cross_gram(&out.cross, p("cross.dfg")).with_context(|| write_context(&p("cross.dfg")))?;
    out.model.save(p("model.json")).with_context(|| write_context(&p("model.json")))?;
    emit(&out.report.to_text(), Some(&p("report.txt")))
}

fn compare(a: CompareArgs) -> anyhow::Result<()> {
    let net = read_net(&a.net)?;
    let train = read_data(&a.train)?;
    let test = read_data(&a.test)?;
    let layers = a.layers.unwrap_or_else(|| (1..=net.num_layers()).collect());
    let base = PipelineConfig {
        tau: a.tau,
        smo: a.svm.config(),
        ap: a.ap.into(),
        ..PipelineConfig::default()
    };
    let rows = compare_modes(&net, &train, &test, &layers, &base)?;
    emit(&format_comparison(&rows), a.out.as_deref())
}

fn check_cmd(a: CheckArgs) -> anyhow::Result<()> {
    let report = check::run_all(&CheckConfig {
        seed: a.seed,
        ..CheckConfig::default()
    })?;
    print!("{}", report.to_text());
    if report.passed() {
        Ok(())
    } else {
        Err(anyhow!(OracleFailure))
    }
}

fn info(a: InfoArgs) -> anyhow::Result<()> {
    let bytes = std::fs::read(&a.path).with_context(|| format!("reading {}", a.path.display()))?;
    let ctx = || format!("decoding {}", a.path.display());
    let mut s = String::new();
    match bytes.get(..3) {
        Some(b"DFN") => {
            let net = gradfeat::net::decode_network(&bytes).with_context(ctx)?;
            let _ = writeln!(s, "network: {} layers, input dim {}", net.num_layers(), net.input_dim());
            let _ = writeln!(s, "{:<6} {:>8} {:>8} {:<9} bias", "layer", "in", "out", "activation");
            for (i, l) in net.layers().iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{:<6} {:>8} {:>8} {:<9} {}",
                    i + 1,
                    l.in_dim(),
                    l.out_dim(),
                    l.activation().name(),
                    if l.bias().is_some() { "yes" } else { "no" }
                );
            }
        }
        Some(b"DFF") => {
            let fs = gradfeat::grad::decode_features(&bytes).with_context(ctx)?;
            let (da, du) = fs.dims();
            let kind = match fs {
                FeatureSet::Gradient(_) => "gradient",
                FeatureSet::Forward(_) => "forward",
            };
            let _ = writeln!(s, "features: kind {kind}, samples {}, dim_a {da}, dim_u {du}", fs.len());
            if du > 0 {
                let _ = writeln!(s, "implied gradient size {} per sample, stored {}", da as u64 * du as u64, da + du);
            }
        }
        Some(b"DFG") => match gradfeat::kernel::decode_gram_file(&bytes).with_context(ctx)? {
            GramFile::Square(g) => {
                let _ = writeln!(s, "gram: square {n}x{n}, kernel {}, trace {}", g.kind().name(), g.trace(), n = g.n());
            }
            GramFile::Rect(g) => {
                let _ = writeln!(s, "gram: rectangular {}x{}, kernel {}", g.rows(), g.cols(), g.kind().name());
            }
        },
        Some(b"DFS") => {
            let d = Dataset::decode(&bytes).with_context(ctx)?;
            let _ = writeln!(s, "dataset: samples {}, dim {}, classes {}", d.n(), d.dim(), d.classes());
            let pos: Vec<usize> = (0..d.classes()).map(|j| d.labels().positives(j)).collect();
            let _ = writeln!(s, "positives per class: {pos:?}");
        }
        _ if bytes.first() == Some(&b'{') => {
            let text = String::from_utf8(bytes).map_err(|_| anyhow!(gradfeat::Error::BadModel("not UTF-8".into())))?;
            let m = OvrSvmModel::from_json(&text).with_context(ctx)?;
            let _ = writeln!(
                s,
                "model: {}, kernel {}, classes {}, training samples {}",
                m.format,
                m.kernel.name(),
                m.class_count(),
                m.train_count()
            );
            let _ = writeln!(s, "fingerprint: {}", m.fingerprint);
            for (j, c) in m.classes.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "class {j}: support vectors {}, bias {}, C {}, iterations {}",
                    c.support_indices().len(),
                    c.bias,
                    c.c,
                    c.iterations
                );
            }
        }
        _ => {
            let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
            bail!(gradfeat::Error::BadMagic {
                expected: "DFN1, DFF1, DFG1, DFS1 or a JSON model".into(),
                found,
            });
        }
    }
    print!("{s}");
    Ok(())
}
