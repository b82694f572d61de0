//! One function per subcommand. Each resolves its settings, echoes them
//! into the output directory and writes only under that directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::Args;

use eegsynth::cvae::diagnostics::{gradient_check_suite, SuiteOptions};
use eegsynth::cvae::{self, count_parameters, load_checkpoint, save_checkpoint, CvaeConfig, TrainConfig};
use eegsynth::data::{
    self, edf, extract_cue_epochs, extract_resting_epochs, load_store, read_csv_recording, read_events, save_store,
    split_train_val, ClassLabel, ConditionVector, Epoch, EpochStore, Recording, SENSORIMOTOR_CHANNELS,
};
use eegsynth::dsp::{
    average_tfr, bandpower_change, boxstats, common_average_reference, design_butterworth_bandpass, epoch_tfr,
    filter_recording, Multitaper, SpectrogramParams, TfrMap, ALPHA_HZ, BASELINE_S, BETA_HZ, POST_CUE_INTERVAL_S,
};
use eegsynth::generate::{generate_conditioned, ArtificialEpochSet, GenerationRequest, LatentMode, Target};
use eegsynth::synthbench::{self, SynthSpec};

use crate::config::Resolver;
use crate::{CliError, Common};

type Result<T> = std::result::Result<T, CliError>;

/// Order and band edges of the preprocessing filter.
const BANDPASS_ORDER: usize = 3;
const BANDPASS_HZ: [f64; 2] = [4.0, 30.0];
const GRADCHECK_TOLERANCE: f64 = 1e-4;
const DEFAULT_VAL_FRACTION: f64 = 900.0 / 6300.0;

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn open_store(path: &Path) -> Result<EpochStore> {
    load_store(path).map_err(|e| CliError::context(format!("loading store {}", path.display()), e))
}

/// `lo:hi` with `lo < hi`.
pub fn parse_range(s: &str) -> Result<[f64; 2]> {
    let bad = || CliError::Input(format!("`{s}` is not a range `lo:hi`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = a.trim().parse().map_err(|_| bad())?;
    let hi: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(CliError::Input(format!("range `{s}` must satisfy lo < hi")));
    }
    Ok([lo, hi])
}

fn format_range(r: [f64; 2]) -> String {
    format!("{}:{}", r[0], r[1])
}

fn channel_list(r: &mut Resolver, flags: Vec<String>, default: &[String]) -> Vec<String> {
    let v = r.list("channels", flags);
    if v.is_empty() {
        default.to_vec()
    } else {
        v
    }
}

fn subject_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn finish(r: &Resolver, out: &Path) -> Result<()> {
    r.check_unused()?;
    create_dir(out)?;
    r.write_echo(out)
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Recording files (`.edf` or `.csv`); one subject per file.
    #[arg(long)]
    pub input: Vec<String>,
    /// Cue files (`onset_seconds,label`), one per input in the same order.
    #[arg(long)]
    pub events: Vec<String>,
    /// Channels kept after re-referencing (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub channels: Vec<String>,
    /// Cut 2.5 s epochs from a one-minute resting recording.
    #[arg(long, conflicts_with = "cues")]
    pub resting: bool,
    /// Cut cue-locked epochs at the event onsets.
    #[arg(long)]
    pub cues: bool,
    /// Sample rate of CSV recordings (EDF files carry their own).
    #[arg(long)]
    pub sample_rate: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

fn read_recording(path: &Path, fs_hz: f64) -> Result<Recording> {
    let id = subject_id(path);
    let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
    let rec = match ext.as_deref() {
        Some("edf") => {
            let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
            edf::read_edf(&bytes, &id)
        }
        Some("csv") => {
            let f = File::open(path).map_err(|e| io_err(path, e))?;
            read_csv_recording(BufReader::new(f), fs_hz, &id)
        }
        _ => {
            return Err(CliError::Input(format!(
                "{}: unsupported recording format (expected .edf or .csv)",
                path.display()
            )))
        }
    };
    rec.map_err(|e| CliError::context(format!("{}: reading", path.display()), e))
}

/// CAR, band-pass, channel selection; the returned recording is ready to
/// be epoched.
pub fn preprocess(rec: &Recording, channels: &[String], origin: &str) -> Result<Recording> {
    let stage = |s: &str| format!("{origin}: {s}");
    let car = common_average_reference(rec).map_err(|e| CliError::context(stage("re-referencing"), e))?;
    let filter = design_butterworth_bandpass(BANDPASS_ORDER, BANDPASS_HZ[0], BANDPASS_HZ[1], rec.sample_rate_hz())
        .map_err(|e| CliError::context(stage("band-pass design"), e))?;
    let filtered = filter_recording(&filter, &car).map_err(|e| CliError::context(stage("band-pass"), e))?;
    filtered
        .select_channels(channels)
        .map_err(|e| CliError::context(stage("channel selection"), e))
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let mut r = Resolver::new("ingest", a.common.config.as_deref())?;
    let inputs = r.list("input", a.input);
    let events = r.list("events", a.events);
    let default_channels: Vec<String> = SENSORIMOTOR_CHANNELS.iter().map(|s| s.to_string()).collect();
    let channels = channel_list(&mut r, a.channels, &default_channels);
    let resting = r.flag("resting", a.resting)?;
    let cues = r.flag("cues", a.cues)?;
    let fs_hz = r.get("sample-rate", a.sample_rate, data::DEFAULT_SAMPLE_RATE_HZ)?;
    let out = r.required_path("out", a.out)?;

    if inputs.is_empty() {
        return Err(CliError::Input("no --input recordings given".into()));
    }
    if resting == cues {
        return Err(CliError::Input("choose exactly one of --resting or --cues".into()));
    }
    if cues && events.len() != inputs.len() {
        return Err(CliError::Input(format!(
            "--cues needs one --events file per input: {} inputs, {} events files",
            inputs.len(),
            events.len()
        )));
    }
    if resting && !events.is_empty() {
        return Err(CliError::Input("--events only applies with --cues".into()));
    }

    let mut all = Vec::new();
    let mut fs_seen: Option<f64> = None;
    for (i, input) in inputs.iter().enumerate() {
        let path = Path::new(input);
        let rec = read_recording(path, fs_hz)?;
        match fs_seen {
            Some(f) if f != rec.sample_rate_hz() => {
                return Err(CliError::Input(format!(
                    "{input}: sample rate {} Hz differs from earlier inputs ({f} Hz)",
                    rec.sample_rate_hz()
                )))
            }
            _ => fs_seen = Some(rec.sample_rate_hz()),
        }
        let pre = preprocess(&rec, &channels, input)?;
        let epochs = if resting {
            extract_resting_epochs(&pre).map_err(|e| CliError::context(format!("{input}: resting epochs"), e))?
        } else {
            let epath = Path::new(&events[i]);
            let f = File::open(epath).map_err(|e| io_err(epath, e))?;
            let ev = read_events(BufReader::new(f))
                .map_err(|e| CliError::context(format!("{}: events", epath.display()), e))?;
            let mut out = Vec::new();
            for label in ClassLabel::ALL {
                let times: Vec<f64> = ev.iter().filter(|e| e.label == label).map(|e| e.onset_s).collect();
                if !times.is_empty() {
                    out.extend(
                        extract_cue_epochs(&pre, &times, label)
                            .map_err(|e| CliError::context(format!("{input}: {label} epochs"), e))?,
                    );
                }
            }
            out
        };
        println!("{}", subject_summary(&pre.subject_id, &epochs));
        all.extend(epochs);
    }
    let first = all
        .first()
        .ok_or_else(|| CliError::Input("no epochs could be extracted".into()))?;
    let n_samples = first.n_samples();
    let store = EpochStore::new(fs_seen.expect("at least one input"), channels, n_samples, all)?;
    finish(&r, &out)?;
    save_store(&store, &out).map_err(|e| CliError::context(format!("writing store {}", out.display()), e))?;
    println!("wrote {} epochs to {}", store.len(), out.display());
    Ok(())
}

fn subject_summary(subject: &str, epochs: &[Epoch]) -> String {
    let mut s = format!("{subject}: {} epochs", epochs.len());
    let labelled: Vec<String> = ClassLabel::ALL
        .iter()
        .map(|&l| (l, epochs.iter().filter(|e| e.label() == Some(l)).count()))
        .filter(|&(_, n)| n > 0)
        .map(|(l, n)| format!("{l} {n}"))
        .collect();
    if !labelled.is_empty() {
        let _ = write!(s, " ({})", labelled.join(", "));
    }
    s
}

// ------------------------------------------------------------ synth-data

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub trials_per_class: Option<usize>,
    #[arg(long)]
    pub resting_per_subject: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

pub fn synth_data(a: SynthArgs) -> Result<()> {
    let mut r = Resolver::new("synth-data", a.common.config.as_deref())?;
    let d = SynthSpec::default();
    let spec = SynthSpec {
        seed: r.get("seed", a.seed, d.seed)?,
        subjects: r.get("subjects", a.subjects, d.subjects)?,
        trials_per_class: r.get("trials-per-class", a.trials_per_class, d.trials_per_class)?,
        resting_per_subject: r.get("resting-per-subject", a.resting_per_subject, d.resting_per_subject)?,
        ..d
    };
    let out = r.required_path("out", a.out)?;
    let ds = synthbench::make_synthetic_dataset(&spec)?;
    finish(&r, &out)?;
    save_store(&ds.trials, out.join("trials"))?;
    save_store(&ds.resting, out.join("resting"))?;
    write_file(&out.join("trials_truth.csv"), synthbench::truth_csv(&ds.trial_truth))?;
    write_file(&out.join("resting_truth.csv"), synthbench::truth_csv(&ds.resting_truth))?;
    println!(
        "wrote {} trials and {} resting epochs for {} subjects to {}",
        ds.trials.len(),
        ds.resting.len(),
        spec.subjects,
        out.display()
    );
    Ok(())
}

// ----------------------------------------------------------------- train

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labelled training store.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation store; without it a stratified split of --train is used.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, conflicts_with = "val")]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Do not print per-epoch progress.
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub common: Common,
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TIMING_FILE: &str = "timing.csv";

/// Loss log without wall-clock times, so equal seeds give equal files.
fn loss_log(history: &cvae::TrainHistory) -> String {
    history
        .to_csv()
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .fold(String::new(), |mut s, l| {
            s.push_str(l);
            s.push('\n');
            s
        })
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut r = Resolver::new("train", a.common.config.as_deref())?;
    let train_path = r.required_path("train", a.train)?;
    let val_path = r.path("val", a.val)?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        seed: r.get("seed", a.seed, d.seed)?,
        batch_size: r.get("batch-size", a.batch_size, d.batch_size)?,
        max_epochs: r.get("max-epochs", a.max_epochs, d.max_epochs)?,
        patience: r.get("patience", a.patience, d.patience)?,
        ..d
    };
    let dm = CvaeConfig::default();
    let latent_dim = r.get("latent-dim", a.latent_dim, dm.latent_dim)?;
    r.record_value("kernels", dm.kernels.to_string());
    let out = r.required_path("out", a.out)?;
    let quiet = r.flag("quiet", a.quiet)?;

    let frac = r.opt("val-fraction", a.val_fraction)?;
    let full = open_store(&train_path)?;
    let (tr, va) = match (val_path, frac) {
        (Some(_), Some(_)) => return Err(CliError::Input("give either --val or --val-fraction, not both".into())),
        (Some(p), None) => (full, open_store(&p)?),
        (None, frac) => {
            let frac = frac.unwrap_or(DEFAULT_VAL_FRACTION);
            r.record_value("val-fraction", frac.to_string());
            split_train_val(&full, frac, cfg.seed).map_err(|e| CliError::context("splitting --train", e))?
        }
    };
    if tr.channel_names() != va.channel_names() || tr.n_samples() != va.n_samples() {
        return Err(CliError::Input("training and validation stores differ in channels or length".into()));
    }
    let model = CvaeConfig {
        n_channels: tr.n_channels(),
        n_samples: tr.n_samples(),
        latent_dim,
        ..dm
    };
    finish(&r, &out)?;
    println!(
        "training on {} epochs, validating on {}: batch {}, max epochs {}, patience {}, latent {}, {} kernels, seed {}",
        tr.len(),
        va.len(),
        cfg.batch_size,
        cfg.max_epochs,
        cfg.patience,
        model.latent_dim,
        model.kernels,
        cfg.seed
    );
    let mut stderr = io::stderr();
    let log: Option<&mut dyn Write> = if quiet { None } else { Some(&mut stderr) };
    let ckpt = cvae::train(&tr, &va, &model, &cfg, log).map_err(|e| CliError::context("training", e))?;
    save_checkpoint(&ckpt, out.join(CHECKPOINT_FILE))?;
    write_file(&out.join(TRAIN_LOG_FILE), loss_log(&ckpt.history))?;
    let mut timing = String::from("epoch,wall_s\n");
    for e in &ckpt.history.epochs {
        let _ = writeln!(timing, "{},{:.3}", e.epoch, e.wall_s);
    }
    write_file(&out.join(TIMING_FILE), timing)?;
    let h = &ckpt.history;
    println!(
        "initial validation loss {:.4e}; best {:.4e} at epoch {} of {}{}",
        h.initial_val.total,
        h.best_val,
        h.best_epoch,
        h.epochs.len(),
        if h.stopped_early { " (stopped early)" } else { "" }
    );
    Ok(())
}

// -------------------------------------------------------------- generate

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Trained model from `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Resting-state store to transform.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// RIGHT, LEFT or FEET.
    #[arg(long, conflicts_with_all = ["all", "vector"])]
    pub condition: Option<String>,
    /// Generate every condition with the same noise draws.
    #[arg(long)]
    pub all: bool,
    /// Arbitrary condition vector `r,l,f`; needs --exploratory.
    #[arg(long, conflicts_with = "all")]
    pub vector: Option<String>,
    /// Allow non-one-hot condition vectors, outside the trained regime.
    #[arg(long)]
    pub exploratory: bool,
    #[arg(long)]
    pub samples_per_epoch: Option<usize>,
    /// Decode the posterior mean instead of sampling (diagnostic).
    #[arg(long)]
    pub mean_latent: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

pub const PROVENANCE_FILE: &str = "provenance.csv";

fn parse_vector(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || CliError::Input(format!("`{s}` is not a condition vector `r,l,f`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut v = [0.0; 3];
    for (dst, p) in v.iter_mut().zip(parts) {
        *dst = p.parse().map_err(|_| bad())?;
    }
    Ok(v)
}

fn write_set(set: &ArtificialEpochSet, dir: &Path) -> Result<()> {
    save_store(&set.store, dir)?;
    write_file(&dir.join(PROVENANCE_FILE), set.provenance_csv())
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let mut r = Resolver::new("generate", a.common.config.as_deref())?;
    let ckpt_path = r.required_path("checkpoint", a.checkpoint)?;
    let input = r.required_path("input", a.input)?;
    let condition = r.opt::<String>("condition", a.condition)?;
    let all = r.flag("all", a.all)?;
    let vector = r.opt::<String>("vector", a.vector)?;
    let exploratory = r.flag("exploratory", a.exploratory)?;
    let samples = r.get("samples-per-epoch", a.samples_per_epoch, 1usize)?;
    let mean_latent = r.flag("mean-latent", a.mean_latent)?;
    let seed = r.get("seed", a.seed, 0u64)?;
    let out = r.required_path("out", a.out)?;

    let targets: Vec<(String, Target)> = match (condition, all, vector) {
        (Some(c), false, None) => {
            let l: ClassLabel = c.parse()?;
            vec![(l.name().to_string(), Target::Class(l))]
        }
        (None, true, None) => ClassLabel::ALL
            .iter()
            .map(|&l| (l.name().to_string(), Target::Class(l)))
            .collect(),
        (None, false, Some(v)) => {
            let c = ConditionVector::soft(parse_vector(&v)?)?;
            let name = match c.label() {
                Some(l) => l.name().to_string(),
                None => "custom".to_string(),
            };
            vec![(name, Target::Vector(c))]
        }
        _ => {
            return Err(CliError::Input(
                "choose exactly one of --condition RIGHT|LEFT|FEET, --all or --vector".into(),
            ))
        }
    };

    let ckpt = load_checkpoint(&ckpt_path)
        .map_err(|e| CliError::context(format!("loading checkpoint {}", ckpt_path.display()), e))?;
    let resting = open_store(&input)?;
    finish(&r, &out)?;
    for (name, target) in targets {
        let req = GenerationRequest {
            target,
            samples_per_epoch: samples,
            latent: if mean_latent { LatentMode::Mean } else { LatentMode::Sample },
            exploratory,
            ..GenerationRequest::new(&ckpt, &resting, ClassLabel::Right, seed)
        };
        let set = generate_conditioned(&req).map_err(|e| CliError::context(format!("generating {name}"), e))?;
        let dir = out.join(&name);
        write_set(&set, &dir)?;
        println!(
            "{name}: c={:?}, {} epochs -> {}",
            set.metadata.condition,
            set.store.len(),
            dir.display()
        );
    }
    Ok(())
}

// ------------------------------------------------------------------- tfr

#[derive(Debug, Args)]
pub struct TfrArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Only average epochs of this class.
    #[arg(long)]
    pub condition: Option<String>,
    /// Also write a PPM image per electrode.
    #[arg(long)]
    pub images: bool,
    /// Symmetric colour range of the images, in percent.
    #[arg(long)]
    pub image_range: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

const IMAGE_SCALE: usize = 8;

fn tfr_metadata(p: &SpectrogramParams, n_epochs: usize) -> String {
    format!(
        "NW={}, tapers={}, window_s={}, step_s={}, baseline_s={}, epochs={}",
        p.time_bandwidth,
        p.n_tapers,
        p.win_s,
        p.step_s,
        format_range(BASELINE_S),
        n_epochs
    )
}

/// Per-channel ERD/ERS maps averaged over `epochs`.
fn averaged_maps(epochs: &[&Epoch], names: &[String], mt: &Multitaper) -> Result<Vec<TfrMap>> {
    let mut per_channel: Vec<Vec<TfrMap>> = vec![Vec::with_capacity(epochs.len()); names.len()];
    for e in epochs {
        for (c, m) in epoch_tfr(mt, e, names)?.into_iter().enumerate() {
            per_channel[c].push(m);
        }
    }
    per_channel.iter().map(|maps| average_tfr(maps).map_err(CliError::from)).collect()
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

pub fn tfr(a: TfrArgs) -> Result<()> {
    let mut r = Resolver::new("tfr", a.common.config.as_deref())?;
    let input = r.required_path("input", a.input)?;
    let condition = r.opt::<String>("condition", a.condition)?;
    let images = r.flag("images", a.images)?;
    let range = r.get("image-range", a.image_range, 100.0)?;
    let out = r.required_path("out", a.out)?;
    let label = condition.map(|c| c.parse::<ClassLabel>()).transpose()?;
    if !(range.is_finite() && range > 0.0) {
        return Err(CliError::Input(format!("--image-range {range} must be positive")));
    }

    let store = open_store(&input)?;
    let epochs: Vec<&Epoch> = store
        .epochs()
        .iter()
        .filter(|e| label.is_none() || e.label() == label)
        .collect();
    if epochs.is_empty() {
        return Err(CliError::Input("no epochs to average".into()));
    }
    let params = SpectrogramParams::default();
    let mt = Multitaper::new(store.sample_rate_hz(), params)?;
    let maps = averaged_maps(&epochs, store.channel_names(), &mt)?;
    finish(&r, &out)?;
    let meta = tfr_metadata(&params, epochs.len());
    for m in &maps {
        let stem = format!("tfr_{}", file_safe(&m.electrode));
        write_file(&out.join(format!("{stem}.csv")), m.to_csv(Some(&meta)))?;
        if images {
            write_file(&out.join(format!("{stem}.ppm")), m.to_ppm(range, IMAGE_SCALE))?;
        }
    }
    println!(
        "wrote {} maps ({} x {}) averaged over {} epochs to {}",
        maps.len(),
        maps[0].n_freqs(),
        maps[0].n_frames(),
        epochs.len(),
        out.display()
    );
    Ok(())
}

// ------------------------------------------------------------- bandpower

#[derive(Debug, Args)]
pub struct BandpowerArgs {
    /// One or more stores; epochs are grouped by subject and class.
    #[arg(long)]
    pub input: Vec<String>,
    /// Band override `alpha=lo:hi` or `beta=lo:hi`.
    #[arg(long)]
    pub band: Vec<String>,
    /// Post-cue interval `lo:hi` in seconds.
    #[arg(long)]
    pub interval: Option<String>,
    /// Channels to summarise (comma-separated); default all.
    #[arg(long, value_delimiter = ',')]
    pub channels: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

pub const BANDPOWER_FILE: &str = "bandpower.csv";
pub const BANDPOWER_HEADER: &str = "subject,class,channel,alpha_change,beta_change";
pub const BOXSTATS_FILE: &str = "boxstats.csv";
pub const BOXSTATS_HEADER: &str = "class,channel,band,n,median,q1,q3,min,max";

pub fn bandpower(a: BandpowerArgs) -> Result<()> {
    let mut r = Resolver::new("bandpower", a.common.config.as_deref())?;
    let inputs = r.list("input", a.input);
    let band_flags = r.list("band", a.band);
    let interval = r.get("interval", a.interval, format_range(POST_CUE_INTERVAL_S))?;
    let interval = parse_range(&interval)?;
    let out = r.required_path("out", a.out)?;
    let mut alpha = ALPHA_HZ;
    let mut beta = BETA_HZ;
    for b in &band_flags {
        let (name, range) = b
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("band `{b}` must be `alpha=lo:hi` or `beta=lo:hi`")))?;
        match name.trim().to_ascii_lowercase().as_str() {
            "alpha" => alpha = parse_range(range)?,
            "beta" => beta = parse_range(range)?,
            other => return Err(CliError::Input(format!("unknown band `{other}`; expected alpha or beta"))),
        }
    }
    if inputs.is_empty() {
        return Err(CliError::Input("no --input stores given".into()));
    }

    let stores = inputs
        .iter()
        .map(|p| open_store(Path::new(p)))
        .collect::<Result<Vec<_>>>()?;
    let names = stores[0].channel_names().to_vec();
    let fs_hz = stores[0].sample_rate_hz();
    if stores.iter().any(|s| s.channel_names() != names || s.sample_rate_hz() != fs_hz) {
        return Err(CliError::Input("input stores differ in channels or sample rate".into()));
    }
    let channels = channel_list(&mut r, a.channels, &names);
    let channel_idx = channels
        .iter()
        .map(|c| {
            names
                .iter()
                .position(|n| n.eq_ignore_ascii_case(c))
                .ok_or_else(|| CliError::Input(format!("channel `{c}` is not in the input stores")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut groups: BTreeMap<(String, ClassLabel), Vec<&Epoch>> = BTreeMap::new();
    for (s, store) in inputs.iter().zip(&stores) {
        for (i, e) in store.epochs().iter().enumerate() {
            let l = e
                .label()
                .ok_or_else(|| CliError::Input(format!("{s}: epoch {i} has no class label")))?;
            groups.entry((e.subject_id.clone(), l)).or_default().push(e);
        }
    }

    let mt = Multitaper::new(fs_hz, SpectrogramParams::default())?;
    let mut rows = format!("{BANDPOWER_HEADER}\n");
    // (class, channel) -> (alpha values, beta values) over subjects
    let mut per_cell: BTreeMap<(ClassLabel, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((subject, label), epochs) in &groups {
        let maps = averaged_maps(epochs, &names, &mt)?;
        for &c in &channel_idx {
            let a_change = bandpower_change(&maps[c], alpha, interval)?;
            let b_change = bandpower_change(&maps[c], beta, interval)?;
            let _ = writeln!(rows, "{subject},{label},{},{a_change},{b_change}", names[c]);
            let cell = per_cell.entry((*label, c)).or_default();
            cell.0.push(a_change);
            cell.1.push(b_change);
        }
    }
    let mut boxes = format!("{BOXSTATS_HEADER}\n");
    for ((label, c), (a_vals, b_vals)) in &per_cell {
        for (band, vals) in [("alpha", a_vals), ("beta", b_vals)] {
            let b = boxstats(vals)?;
            let _ = writeln!(
                boxes,
                "{label},{},{band},{},{},{},{},{},{}",
                names[*c], b.n, b.median, b.q1, b.q3, b.min, b.max
            );
        }
    }
    r.record_value("alpha-band", format_range(alpha));
    r.record_value("beta-band", format_range(beta));
    finish(&r, &out)?;
    write_file(&out.join(BANDPOWER_FILE), rows)?;
    write_file(&out.join(BOXSTATS_FILE), boxes)?;
    println!(
        "{} subject-class groups x {} channels -> {}",
        groups.len(),
        channel_idx.len(),
        out.display()
    );
    Ok(())
}

// ------------------------------------------------------------- gradcheck

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip the sampled check of the full-size model.
    #[arg(long)]
    pub quick: bool,
    /// Negate every analytic gradient; the check must then fail.
    #[arg(long, hide = true)]
    pub flip_sign: bool,
    /// Also write the report as CSV into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

pub const GRADCHECK_FILE: &str = "gradcheck.csv";

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut r = Resolver::new("gradcheck", a.common.config.as_deref())?;
    let opts = SuiteOptions {
        seed: r.get("seed", a.seed, 0)?,
        full_size: !r.flag("quick", a.quick)?,
        flip_sign: a.flip_sign,
    };
    let out = r.path("out", a.out)?;
    r.check_unused()?;
    let suite = gradient_check_suite(&opts)?;
    let mut csv = String::from("check,checked,excluded,max_rel_error,noise_floor,status\n");
    let mut failed = 0;
    println!("{:<55} {:>8} {:>12}  status", "check", "checked", "max rel err");
    for e in &suite {
        let ok = e.report.passed(GRADCHECK_TOLERANCE);
        failed += usize::from(!ok);
        let status = if ok { "PASS" } else { "FAIL" };
        println!("{:<55} {:>8} {:>12.3e}  {status}", e.name, e.report.checked, e.report.max_rel_error);
        let _ = writeln!(
            csv,
            "{},{},{},{:e},{:e},{status}",
            e.name.replace(',', ";"),
            e.report.checked,
            e.report.excluded,
            e.report.max_rel_error,
            e.report.noise_floor
        );
    }
    if let Some(dir) = &out {
        r.write_echo(dir)?;
        write_file(&dir.join(GRADCHECK_FILE), csv)?;
    }
    if failed > 0 {
        return Err(CliError::Numeric(format!(
            "{failed} of {} gradient checks exceeded relative error {GRADCHECK_TOLERANCE:e}",
            suite.len()
        )));
    }
    println!("all {} checks below {GRADCHECK_TOLERANCE:e}", suite.len());
    Ok(())
}

// ---------------------------------------------------------------- report

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Trained model; without it the default architecture is described.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "checkpoint")]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

pub const REPORT_FILE: &str = "report.txt";

pub fn report(a: ReportArgs) -> Result<()> {
    let mut r = Resolver::new("report", a.common.config.as_deref())?;
    let ckpt_path = r.path("checkpoint", a.checkpoint)?;
    let out = r.path("out", a.out)?;
    let ckpt = ckpt_path
        .as_ref()
        .map(|p| load_checkpoint(p).map_err(|e| CliError::context(format!("loading checkpoint {}", p.display()), e)))
        .transpose()?;
    let config = match &ckpt {
        Some(c) => c.model.clone(),
        None => CvaeConfig {
            latent_dim: r.get("latent-dim", a.latent_dim, CvaeConfig::default().latent_dim)?,
            ..CvaeConfig::default()
        },
    };
    r.check_unused()?;

    let mut text = String::new();
    let _ = writeln!(text, "parameters\n{}", count_parameters(&config)?);
    let mut model = match &ckpt {
        Some(c) => c.to_model()?,
        None => cvae::Cvae::<f32>::new(config.clone(), 0)?,
    };
    let _ = writeln!(text, "layer output shapes (channels x height x width)");
    for (name, s) in model.trace_shapes()? {
        let _ = writeln!(text, "  {name:<28} {} x {} x {}", s[0], s[1], s[2]);
    }
    if let Some(c) = &ckpt {
        let h = &c.history;
        let _ = writeln!(text, "\ntraining");
        let _ = writeln!(
            text,
            "  batch {}, max epochs {}, patience {}, seed {}, input scale {:.6}",
            c.train.batch_size, c.train.max_epochs, c.train.patience, c.train.seed, c.model.input_scale
        );
        let _ = writeln!(text, "  initial validation loss {:.6e}", h.initial_val.total);
        let _ = writeln!(
            text,
            "  best validation loss {:.6e} at epoch {} of {}{}",
            h.best_val,
            h.best_epoch,
            h.epochs.len(),
            if h.stopped_early { " (stopped early)" } else { "" }
        );
    }
    print!("{text}");
    if let Some(dir) = &out {
        r.write_echo(dir)?;
        write_file(&dir.join(REPORT_FILE), text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_parse_and_validate() {
        assert_eq!(parse_range("0.5:1.5").unwrap(), [0.5, 1.5]);
        assert_eq!(parse_range(" 8 : 15 ").unwrap(), [8.0, 15.0]);
        assert!(parse_range("1.5:0.5").is_err());
        assert!(parse_range("8-15").is_err());
        assert!(parse_range("a:1").is_err());
    }

    #[test]
    fn vectors_parse() {
        assert_eq!(parse_vector("0, 1, 0").unwrap(), [0.0, 1.0, 0.0]);
        assert!(parse_vector("1,0").is_err());
        assert!(parse_vector("1,x,0").is_err());
    }

    #[test]
    fn loss_log_drops_only_the_wall_column() {
        let mut h = cvae::TrainHistory::default();
        h.epochs.push(cvae::EpochRecord {
            epoch: 1,
            train: Default::default(),
            val: Default::default(),
            wall_s: 12.5,
        });
        let log = loss_log(&h);
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines[0], "epoch,train_total,train_recon,train_kl,val_total,val_recon,val_kl");
        assert_eq!(lines.len(), 3);
        assert!(!log.contains("12.5"));
    }

    #[test]
    fn subject_summary_counts_classes() {
        assert_eq!(subject_summary("S001", &[]), "S001: 0 epochs");
    }

    #[test]
    fn default_split_is_900_of_6300() {
        assert_eq!((6300.0 * DEFAULT_VAL_FRACTION).round(), 900.0);
    }

    #[test]
    fn metadata_row_names_taper_window_and_step() {
        let m = tfr_metadata(&SpectrogramParams::default(), 3);
        assert_eq!(m, "NW=1.5, tapers=2, window_s=0.5, step_s=0.05, baseline_s=-0.5:0, epochs=3");
    }
}
