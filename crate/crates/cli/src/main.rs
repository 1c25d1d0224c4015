mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndarray::{Array1, Array2, ArrayView2};
use sha2::{Digest, Sha256};
use sid_core::compile::{
    code_size_report, compile_ks_stage, compile_ks_vote, compile_model, compile_ocsvm_ks, compile_vote, parse_symbol_table, CompiledProgram,
    Strategy,
};
use sid_core::data::{hapt_load, hapt_write, synth_generate, GaitParams, UserSequence};
use sid_core::detection::{make_windows, KsDecisionConfig, Reference};
use sid_core::energy::{energy_ratio, find_profile, parse_profiles, DeviceProfile};
use sid_core::isa::{program_from_bytes, program_to_bytes};
use sid_core::machine::{MachineConfig, MachineState, MemoryImage};
use sid_core::models::{train, Dense, KernelSvm, Lstm, Mlp, ModelBundle, ModelKind, TrainConfig, TrainSet};
use sid_core::numerics::FxWord;
use sid_core::pipeline::{error_windows, evaluate_idaas, evaluate_lad, report_csv, window_features, IdaasConfig, LadConfig, LadProfile, PipelineKind, Scenario};

use config::{Common, Settings};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Domain(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error[usage]: {m}"),
            CliError::Io(m) => write!(f, "error[io]: {m}"),
            CliError::Domain(m) => write!(f, "error[domain]: {m}"),
        }
    }
}

macro_rules! domain_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Domain(e.to_string())
            }
        }
    )*};
}

domain_from!(
    sid_core::compile::CompileError,
    sid_core::data::DataError,
    sid_core::detection::DetectionError,
    sid_core::energy::EnergyError,
    sid_core::isa::IsaError,
    sid_core::machine::MachineError,
    sid_core::machine::Trap,
    sid_core::models::ModelError,
    sid_core::pipeline::PipelineError
);

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "sid", version, about = "Impostor detection toolchain for the SID accelerator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic gait recordings in the HAPT directory layout
    GenData {
        #[arg(long, default_value_t = 2)]
        users: u32,
        #[arg(long, default_value_t = 6)]
        sequences: usize,
        #[arg(long, default_value_t = 1200)]
        length: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
    },
    /// Train one model for one owner and write a model bundle
    Train {
        /// lr, linear-svm, kernel-svm, krr, mlp, ocsvm, lstm or gru
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        /// owner user id (default: lowest id in the data)
        #[arg(long)]
        user: Option<u32>,
        #[command(flatten)]
        hyper: Hyper,
    },
    /// Compile a model bundle into a program, memory image and symbol table
    Compile {
        #[arg(long)]
        model: PathBuf,
        /// also fit detection references on this owner's data (LSTM/GRU only)
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        user: Option<u32>,
    },
    /// Run a program on the simulator
    Sim {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// symbol table; enables --input and prints the output symbol
        #[arg(long)]
        symbols: Option<PathBuf>,
        /// comma-separated input values written at the input symbol
        #[arg(long, allow_hyphen_values = true)]
        input: Option<String>,
        #[arg(long)]
        cycle_budget: Option<u64>,
    },
    /// Evaluate detection over a dataset and print a CSV report
    Detect {
        /// model kind, or a bundle whose kind is used
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        hyper: Hyper,
    },
    /// Compare per-period energy of two devices
    Energy {
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long, default_value = "GPU")]
        device_a: String,
        #[arg(long, default_value = "SID")]
        device_b: String,
        #[arg(long, default_value_t = 1.0)]
        t_a_ms: f64,
        /// busy time of device b; measured from --program/--image when omitted
        #[arg(long)]
        t_b_ms: Option<f64>,
        #[arg(long)]
        program: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = 20.0)]
        period_ms: f64,
    },
    /// Code size and cycle report for the reference stage set
    Report,
}

#[derive(clap::Args, Debug, Clone, Default)]
struct Hyper {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// comma-separated hidden sizes
    #[arg(long)]
    hidden: Option<String>,
}

impl Hyper {
    fn apply(&self, mut cfg: TrainConfig) -> Result<TrainConfig> {
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.learning_rate = lr;
        }
        if let Some(h) = &self.hidden {
            cfg.hidden = h
                .split(',')
                .map(|v| v.trim().parse::<usize>().map_err(|e| CliError::Usage(format!("--hidden '{v}': {e}"))))
                .collect::<Result<_>>()?;
        }
        Ok(cfg)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn emit(settings: &Settings, text: &str) -> Result<()> {
    match settings.out()? {
        Some(p) => write(&p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_kind(s: &str) -> Result<ModelKind> {
    s.parse().map_err(CliError::Usage)
}

fn machine_config(settings: &Settings) -> Result<MachineConfig> {
    let mut config = MachineConfig::default();
    if let Some(n) = settings.n_track()? {
        config = config.with_n_track(n);
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn strategies(settings: &Settings) -> Result<Vec<Strategy>> {
    match settings.strategy()?.as_deref() {
        None | Some("looped") => Ok(vec![Strategy::Looped]),
        Some("unrolled") => Ok(vec![Strategy::Unrolled]),
        Some("both") => Ok(vec![Strategy::Looped, Strategy::Unrolled]),
        Some(other) => Err(CliError::Usage(format!("unknown strategy '{other}' (expected looped, unrolled or both)"))),
    }
}

fn scenario_for(settings: &Settings, kind: ModelKind) -> Result<Scenario> {
    let scenario = match settings.scenario()? {
        Some(s) => s.parse::<Scenario>().map_err(CliError::Usage)?,
        None if Scenario::Lad.allows(kind) => Scenario::Lad,
        None => Scenario::Idaas,
    };
    if !scenario.allows(kind) {
        return Err(CliError::Usage(format!("scenario {scenario} does not accept {kind} models")));
    }
    Ok(scenario)
}

fn ks_config(settings: &Settings) -> Result<KsDecisionConfig> {
    let mut ks = KsDecisionConfig::default();
    if let Some(a) = settings.alpha()? {
        ks.alpha = a;
        ks.c_alpha = KsDecisionConfig::c_for_alpha(a);
    }
    if let Some(r) = settings.refs()? {
        ks.refs = r;
        ks.vote_threshold = r.div_ceil(2);
    }
    ks.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(ks)
}

fn lad_config(settings: &Settings, hyper: &Hyper) -> Result<LadConfig> {
    let d = LadConfig::default();
    let cfg = LadConfig {
        window: settings.window()?.unwrap_or(d.window),
        window_step: settings.step()?.unwrap_or(d.window_step),
        bins: settings.bins()?.unwrap_or(d.bins),
        ks: ks_config(settings)?,
        train: hyper.apply(d.train)?,
        seed: settings.seed()?,
        ..d
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn idaas_config(settings: &Settings, hyper: &Hyper) -> Result<IdaasConfig> {
    let d = IdaasConfig::default();
    Ok(IdaasConfig {
        window: settings.window()?.unwrap_or(d.window),
        step: settings.step()?.unwrap_or(d.step),
        train: hyper.apply(d.train)?,
        seed: settings.seed()?,
        ..d
    })
}

fn owner_of(seqs: &[UserSequence], user: Option<u32>) -> Result<u32> {
    let lowest = seqs.iter().map(|s| s.user).min().ok_or_else(|| CliError::Domain("dataset has no walking sequences".into()))?;
    match user {
        Some(u) if seqs.iter().any(|s| s.user == u) => Ok(u),
        Some(u) => Err(CliError::Domain(format!("user {u} not present in the dataset"))),
        None => Ok(lowest),
    }
}

fn windows_of<'a>(seqs: &'a [&UserSequence], window: usize, step: usize) -> Vec<(u32, ArrayView2<'a, f64>)> {
    seqs.iter().flat_map(|s| make_windows(s.readings.view(), window, step).into_iter().map(move |w| (s.user, w))).collect()
}

fn stack(rows: &[Array1<f64>]) -> Result<Array2<f64>> {
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::stack(ndarray::Axis(0), &views).map_err(|e| CliError::Domain(e.to_string()))
}

fn gen_data(settings: &Settings, users: u32, sequences: usize, length: usize, noise: f64) -> Result<()> {
    let out = settings.out()?.ok_or_else(|| CliError::Usage("gen-data needs --out <dir>".into()))?;
    if users == 0 {
        return Err(CliError::Usage("--users must be at least 1".into()));
    }
    let seed = settings.seed()?;
    let params: Vec<GaitParams> = (0..users)
        .map(|u| GaitParams::random(1.4 + (u as f64 + 0.5) / users as f64, noise, seed.wrapping_add(u as u64)))
        .collect();
    let seqs = synth_generate(&params, sequences, length)?;
    fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    hapt_write(&out, &seqs)?;
    println!("users={users}\nsequences={}\nreadings={}", seqs.len(), seqs.iter().map(|s| s.readings.nrows()).sum::<usize>());
    Ok(())
}

fn cmd_train(settings: &Settings, model: &str, data: &Path, user: Option<u32>, hyper: &Hyper) -> Result<()> {
    let kind = parse_kind(model)?;
    let out = settings.out()?.ok_or_else(|| CliError::Usage("train needs --out <model file>".into()))?;
    let scenario = scenario_for(settings, kind)?;
    let seqs = hapt_load(data)?;
    let owner = owner_of(&seqs, user)?;
    let seed = settings.seed()?;
    let trained = match (scenario, kind) {
        (Scenario::Lad, ModelKind::Lstm | ModelKind::Gru) => {
            let cfg = lad_config(settings, hyper)?;
            let series: Vec<Array2<f64>> = seqs.iter().filter(|s| s.user == owner).map(|s| s.readings.clone()).collect();
            train(kind, TrainSet::Series(&series), &cfg.train, seed)?
        }
        _ => {
            let cfg = idaas_config(settings, hyper)?;
            let all: Vec<&UserSequence> = seqs.iter().collect();
            let windows = windows_of(&all, cfg.window, cfg.step);
            let windows: Vec<_> = if scenario == Scenario::Lad { windows.into_iter().filter(|(u, _)| *u == owner).collect() } else { windows };
            let feats = windows.iter().map(|(_, w)| window_features(kind, *w)).collect::<std::result::Result<Vec<_>, _>>()?;
            let x = stack(&feats)?;
            if scenario == Scenario::Lad {
                train(kind, TrainSet::OneClass(x.view()), &cfg.train, seed)?
            } else {
                let y: Vec<i8> = windows.iter().map(|(u, _)| if *u == owner { -1 } else { 1 }).collect();
                train(kind, TrainSet::Labeled { x: x.view(), y: &y }, &cfg.train, seed)?
            }
        }
    };
    write(&out, &trained.model.to_bytes())?;
    println!("model={kind}\nowner={owner}\nscenario={scenario}\nparameters={}", trained.model.flat_params().len());
    if let Some(l) = trained.losses.last() {
        println!("final_loss={l:.6}");
    }
    Ok(())
}

fn load_bundle(path: &Path) -> Result<ModelBundle> {
    Ok(ModelBundle::from_bytes(&read(path)?)?)
}

fn save_program(dir: &Path, stem: &str, p: &CompiledProgram) -> Result<()> {
    write(&dir.join(format!("{stem}.bin")), &program_to_bytes(&p.program)?)?;
    write(&dir.join(format!("{stem}.img")), &p.image.to_bytes())?;
    write(&dir.join(format!("{stem}.sym")), p.symbol_table_text().as_bytes())
}

fn cmd_compile(settings: &Settings, model: &Path, data: Option<&Path>, user: Option<u32>) -> Result<()> {
    let out = settings.out()?.ok_or_else(|| CliError::Usage("compile needs --out <dir>".into()))?;
    let config = machine_config(settings)?;
    let bundle = load_bundle(model)?;
    let stem = model.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
    fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let profile = match data {
        Some(d) => {
            if !matches!(bundle.kind(), ModelKind::Lstm | ModelKind::Gru) {
                return Err(CliError::Usage("--data applies to LSTM and GRU predictors only".into()));
            }
            let cfg = lad_config(settings, &Hyper::default())?;
            let seqs = hapt_load(d)?;
            let owner = owner_of(&seqs, user)?;
            let views: Vec<_> = seqs.iter().filter(|s| s.user == owner).map(|s| s.readings.view()).collect();
            let windows = error_windows(&bundle, &views, &cfg)?;
            Some(LadProfile::fit(bundle.clone(), &windows, &cfg)?)
        }
        None => None,
    };
    let mut stages: Vec<(String, Vec<CompiledProgram>)> = Vec::new();
    let strategies = strategies(settings)?;
    let compiled = strategies.iter().map(|&s| compile_model(&bundle, &config, s)).collect::<std::result::Result<Vec<_>, _>>()?;
    stages.push((stem.clone(), compiled));
    if let Some(p) = &profile {
        let pipeline = settings.pipeline()?.unwrap_or_else(|| "vote".into());
        let (name, progs) = match pipeline.as_str() {
            "vote" => ("ks-vote", strategies.iter().map(|&s| compile_ks_vote(&p.references, &p.ks, &config, s)).collect::<std::result::Result<Vec<_>, _>>()?),
            "ocsvm" => (
                "ocsvm-ks",
                strategies.iter().map(|&s| compile_ocsvm_ks(&p.references, &p.ks, &p.ocsvm, &config, s)).collect::<std::result::Result<Vec<_>, _>>()?,
            ),
            other => return Err(CliError::Usage(format!("pipeline '{other}' has no accelerator stage (expected vote or ocsvm)"))),
        };
        stages.push((format!("{stem}-{name}"), progs));
    }
    let mut rows = Vec::new();
    for (name, progs) in &stages {
        for (s, p) in strategies.iter().zip(progs) {
            save_program(&out, &format!("{name}-{s}"), p)?;
            for w in &p.warnings {
                eprintln!("warning: {name}-{s}: {w}");
            }
        }
        rows.push((name.as_str(), &progs[0], progs.get(1)));
    }
    print!("{}", code_size_report(&rows));
    Ok(())
}

fn parse_input(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("--input '{v}': {e}")))).collect()
}

fn digest(words: &[FxWord]) -> String {
    let mut h = Sha256::new();
    for w in words {
        h.update(w.raw().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn load_machine(settings: &Settings, program: &Path, image: &Path) -> Result<MachineState> {
    let program = program_from_bytes(&read(program)?)?;
    let image = MemoryImage::from_bytes(&read(image)?)?;
    Ok(MachineState::load(machine_config(settings)?, program, &image)?)
}

fn cmd_sim(settings: &Settings, program: &Path, image: &Path, symbols: Option<&Path>, input: Option<&str>, budget: Option<u64>) -> Result<()> {
    let mut m = load_machine(settings, program, image)?;
    let table = match symbols {
        Some(p) => {
            let text = String::from_utf8(read(p)?).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            Some(parse_symbol_table(&text).map_err(|e| CliError::Domain(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    if let Some(text) = input {
        let Some((_, Some(sym), _)) = &table else {
            return Err(CliError::Usage("--input needs --symbols with an @input entry".into()));
        };
        let vals = parse_input(text)?;
        if vals.len() != sym.len {
            return Err(CliError::Domain(format!("input has {} values, program expects {}", vals.len(), sym.len)));
        }
        let words: Vec<FxWord> = vals.iter().map(|&v| FxWord::from_real(v)).collect();
        m.write(sym.addr, &words);
    }
    let report = m.run(budget)?;
    let mut text = format!("{report}\nn_track={}\nmemory_sha256={}\n", m.config().n_track, digest(m.memory()));
    if let Some((_, _, Some(out))) = &table {
        let vals: Vec<String> = m.read(out.addr, out.len).iter().map(|w| format!("{}", w.to_real())).collect();
        text.push_str(&format!("output={}\n", vals.join(",")));
    }
    emit(settings, &text)
}

fn cmd_detect(settings: &Settings, model: &str, data: &Path, hyper: &Hyper) -> Result<()> {
    let kind = if Path::new(model).is_file() { load_bundle(Path::new(model))?.kind() } else { parse_kind(model)? };
    let scenario = scenario_for(settings, kind)?;
    let seqs = hapt_load(data)?;
    let rows = match scenario {
        Scenario::Lad => {
            let pipelines = match settings.pipeline()?.as_deref() {
                None | Some("all") => PipelineKind::ALL.to_vec(),
                Some(p) => vec![p.parse::<PipelineKind>().map_err(CliError::Usage)?],
            };
            evaluate_lad(&seqs, kind, &pipelines, &lad_config(settings, hyper)?)?
        }
        Scenario::Idaas => evaluate_idaas(&seqs, kind, &idaas_config(settings, hyper)?)?,
    };
    emit(settings, &report_csv(&rows))
}

#[allow(clippy::too_many_arguments)]
fn cmd_energy(
    settings: &Settings,
    profiles: Option<&Path>,
    device_a: &str,
    device_b: &str,
    t_a_ms: f64,
    t_b_ms: Option<f64>,
    program: Option<&Path>,
    image: Option<&Path>,
    period_ms: f64,
) -> Result<()> {
    let profiles = match profiles {
        Some(p) => parse_profiles(&String::from_utf8(read(p)?).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?)?,
        None => vec![DeviceProfile::gpu(), DeviceProfile::sid()],
    };
    let (a, b) = (find_profile(&profiles, device_a)?, find_profile(&profiles, device_b)?);
    let t_b = match (t_b_ms, program, image) {
        (Some(t), _, _) => t * 1e-3,
        (None, Some(p), Some(i)) => load_machine(settings, p, i)?.run(None)?.wall_time_s,
        _ => return Err(CliError::Usage("energy needs --t-b-ms or both --program and --image".into())),
    };
    let c = energy_ratio(&[(a, t_a_ms * 1e-3)], &[(b, t_b)], period_ms * 1e-3)?;
    emit(settings, &format!("device_a={}\ndevice_b={}\nt_a_ms={t_a_ms}\nt_b_ms={:.6}\nperiod_ms={period_ms}\n{c}", a.name, b.name, t_b * 1e3))
}

fn dense(rows: usize, cols: usize) -> Dense {
    Dense { w: Array2::zeros((rows, cols)), b: Array1::zeros(rows) }
}

fn mlp(sizes: &[usize]) -> ModelBundle {
    ModelBundle::Mlp(Mlp { layers: sizes.windows(2).map(|w| dense(w[1], w[0])).collect() })
}

/// Evenly spaced reference samples, shifted per reference.
fn ramp_references(ks: &KsDecisionConfig, bins: usize) -> Result<Vec<Reference>> {
    (0..ks.refs)
        .map(|r| Reference::new((0..ks.n).map(|i| (i + r) as f64 / 64.0).collect(), bins).map_err(CliError::from))
        .collect()
}

fn cmd_report(settings: &Settings) -> Result<()> {
    let config = machine_config(settings)?;
    let ks = ks_config(settings)?;
    let bins = settings.bins()?.unwrap_or(16);
    let refs = ramp_references(&ks, bins)?;
    let models = [
        ("mlp-50", mlp(&[384, 50, 2])),
        ("mlp-500", mlp(&[384, 500, 2])),
        ("mlp-50-25", mlp(&[384, 50, 25, 2])),
        ("mlp-200-100", mlp(&[384, 200, 100, 2])),
        ("lstm-200", ModelBundle::Lstm(Lstm::zeros(200, 6, 6))),
        ("kernel-svm-400", ModelBundle::KernelSvm(KernelSvm { support: Array2::zeros((400, 14)), coef: Array1::zeros(400), b: 0.0, gamma: 0.5 })),
    ];
    let mut stages = Vec::new();
    for (name, b) in &models {
        stages.push((name.to_string(), compile_model(b, &config, Strategy::Looped)?, Some(compile_model(b, &config, Strategy::Unrolled)?)));
    }
    stages.push((format!("ks-{}", ks.n), compile_ks_stage(&refs, &ks, &config, Strategy::Looped)?, Some(compile_ks_stage(&refs, &ks, &config, Strategy::Unrolled)?)));
    stages.push(("vote-ks".into(), compile_vote(&ks, &config)?, None));
    stages.push((format!("ks-{}-vote", ks.n), compile_ks_vote(&refs, &ks, &config, Strategy::Looped)?, None));
    let rows: Vec<_> = stages.iter().map(|(n, l, u)| (n.as_str(), l, u.as_ref())).collect();
    let mut text = code_size_report(&rows).to_string();
    text.push_str(&format!("\nn_track={}\n", config.n_track));
    for (name, p, _) in &stages {
        let mut m = p.load(config.clone())?;
        let r = m.run(None)?;
        text.push_str(&format!("{name}.cycles={}\n{name}.wall_ms={:.6}\n", r.cycles, r.wall_time_s * 1e3));
    }
    emit(settings, &text)
}

fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.common)?;
    match cli.command {
        Command::GenData { users, sequences, length, noise } => gen_data(&settings, users, sequences, length, noise),
        Command::Train { model, data, user, hyper } => cmd_train(&settings, &model, &data, user, &hyper),
        Command::Compile { model, data, user } => cmd_compile(&settings, &model, data.as_deref(), user),
        Command::Sim { program, image, symbols, input, cycle_budget } => {
            cmd_sim(&settings, &program, &image, symbols.as_deref(), input.as_deref(), cycle_budget)
        }
        Command::Detect { model, data, hyper } => cmd_detect(&settings, &model, &data, &hyper),
        Command::Energy { profiles, device_a, device_b, t_a_ms, t_b_ms, program, image, period_ms } => cmd_energy(
            &settings,
            profiles.as_deref(),
            &device_a,
            &device_b,
            t_a_ms,
            t_b_ms,
            program.as_deref(),
            image.as_deref(),
            period_ms,
        ),
        Command::Report => cmd_report(&settings),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 1,
                _ => 2,
            })
        }
    }
}
