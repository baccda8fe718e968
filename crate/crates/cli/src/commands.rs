use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use uuid::Uuid;

use zsdc_core::audio::{load_wav, save_wav, AudioClip};
use zsdc_core::central::{serve, Archive};
use zsdc_core::codec::{train_codec, Codec, LatentCode};
use zsdc_core::datagen::{synth_dataset, synth_generic_corpus};
use zsdc_core::edge::{persist, restore, StoragePolicy, StorageState};
use zsdc_core::experiment::plot::plot_spectrogram;
use zsdc_core::experiment::{run_experiment, run_experiment_with, ExperimentConfig};
use zsdc_core::transport::{default_port, deliver, CostCounter, RetryPolicy, TcpLink};

use crate::{Cli, Command, EdgeArgs};

pub enum Failure {
    Usage(String),
    Stage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Stage(e)
    }
}

pub const LABELS_FILE: &str = "labels.csv";

pub fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        config
            .apply_text(&text)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::GenData { scale, out_dir } => {
            config.scale = scale.unwrap_or(config.scale);
            check(&config)?;
            gen_data(&config, &out_dir)?
        }
        Command::TrainCodec { out, clips } => {
            config.corpus_clips = clips.unwrap_or(config.corpus_clips);
            check(&config)?;
            train(&config, &out)?
        }
        Command::Encode {
            codec_model,
            input,
            output,
            post_id,
            captured_at,
        } => {
            let codec = load_codec(&codec_model)?;
            let mut clip = load_wav(&input).with_context(|| format!("reading {}", input.display()))?;
            clip.post_id = post_id;
            clip.captured_at = captured_at;
            let z = codec.encode(&clip).context("encoding")?;
            fs::write(&output, z.serialize()).with_context(|| format!("writing {}", output.display()))?;
            info!("{} frames, {} bytes", z.header.n_frames, z.serialized_len());
        }
        Command::Decode {
            codec_model,
            input,
            output,
        } => {
            let codec = load_codec(&codec_model)?;
            let bytes = fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let z = LatentCode::deserialize(&bytes).context("parsing latent")?;
            let clip = codec.decode(&z).context("decoding")?;
            save_wav(&clip, &output).with_context(|| format!("writing {}", output.display()))?;
        }
        Command::RunEdge(args) => {
            config.capacity_bytes = args.capacity_bytes.unwrap_or(config.capacity_bytes);
            config.fill_threshold = args.fill_threshold.unwrap_or(config.fill_threshold);
            config.flush_interval_seconds = args.flush_interval_s.unwrap_or(config.flush_interval_seconds);
            config.max_batch_bytes = args.max_batch_bytes.unwrap_or(config.max_batch_bytes);
            let policy = StoragePolicy::new(config.capacity_bytes, config.fill_threshold, config.flush_interval_seconds)
                .map_err(|e| Failure::Usage(e.to_string()))?;
            run_edge(&config, &policy, &args)?
        }
        Command::RunCentral {
            listen_addr,
            archive_dir,
            codec_model,
        } => {
            let codec = load_codec(&codec_model)?;
            let archive = Archive::open(&archive_dir, codec).context("opening archive")?;
            let addr = listen_addr.unwrap_or_else(|| format!("0.0.0.0:{}", default_port()));
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            let server = serve(listener, archive).context("starting server")?;
            // Scripts read the bound address from the first stdout line.
            println!("listening on {}", server.local_addr());
            let archive = server.wait();
            return Err(anyhow!("listener stopped with {} archived clips", archive.manifest().len()).into());
        }
        Command::Evaluate {
            out_dir,
            scale,
            codec_model,
            net,
        } => {
            config.scale = scale.unwrap_or(config.scale);
            config.net |= net;
            if let Some(path) = &codec_model {
                let codec = load_codec(path)?;
                config.codec = *codec.spec();
                check(&config)?;
                let report = run_experiment_with(&config, &codec, None).map_err(anyhow::Error::from)?;
                write_report(&report, &out_dir)?;
            } else {
                check(&config)?;
                let report = run_experiment(&config).map_err(anyhow::Error::from)?;
                write_report(&report, &out_dir)?;
            }
        }
        Command::Plot {
            input,
            output,
            codec_model,
        } => {
            let mut clip = load_wav(&input).with_context(|| format!("reading {}", input.display()))?;
            if let Some(path) = codec_model {
                let codec = load_codec(&path)?;
                clip = codec.decode(&codec.encode(&clip).context("encoding")?).context("decoding")?;
            }
            plot_spectrogram(&clip, &output).with_context(|| format!("plotting {}", output.display()))?;
        }
    }
    Ok(())
}

fn check(config: &ExperimentConfig) -> Result<(), Failure> {
    config.validate().map_err(Failure::Usage)
}

fn load_codec(path: &Path) -> Result<Codec> {
    Codec::load(path).with_context(|| format!("loading codec model {}", path.display()))
}

fn gen_data(config: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let dataset = synth_dataset(config.scale, config.seed).context("generating events")?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut labels = csv::Writer::from_path(out_dir.join(LABELS_FILE)).context("creating labels.csv")?;
    labels.write_record(["uuid", "post", "condition", "path", "captured_at"])?;
    for e in &dataset.events {
        let rel = PathBuf::from(e.post.as_str()).join(e.condition.as_str()).join(format!("{}.wav", e.uuid));
        let path = out_dir.join(&rel);
        fs::create_dir_all(path.parent().expect("nested path"))?;
        save_wav(&e.clip, &path).with_context(|| format!("writing {}", path.display()))?;
        labels.write_record([
            e.uuid.to_string(),
            e.post.as_str().to_string(),
            e.condition.as_str().to_string(),
            rel.to_string_lossy().replace('\\', "/"),
            e.clip.captured_at.unwrap_or(0).to_string(),
        ])?;
    }
    labels.flush()?;
    info!("wrote {} events to {}", dataset.events.len(), out_dir.display());
    Ok(())
}

fn train(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let started = Instant::now();
    let corpus = synth_generic_corpus(config.corpus_clips, config.seed).context("generating corpus")?;
    let trained = train_codec(config.codec, &corpus, config.seed).context("training")?;
    for w in &trained.report.warnings {
        warn!("{w}");
    }
    trained.codec.save(out).with_context(|| format!("writing {}", out.display()))?;
    info!(
        "trained on {} frames in {:.1} s, residual energy per stage {:?}, version {:04x}",
        trained.report.frames,
        started.elapsed().as_secs_f64(),
        trained.report.stage_residual_energy,
        trained.codec.version()
    );
    Ok(())
}

/// One clip queued for ingest.
struct Input {
    path: PathBuf,
    uuid: Option<Uuid>,
    post_id: Option<String>,
    captured_at: Option<i64>,
}

/// Rows of labels.csv if present, else every `.wav` under the directory.
fn list_inputs(dir: &Path) -> Result<Vec<Input>> {
    let labels = dir.join(LABELS_FILE);
    let mut inputs = Vec::new();
    if labels.exists() {
        let mut r = csv::Reader::from_path(&labels).context("reading labels.csv")?;
        let headers = r.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let path_col = col("path").ok_or_else(|| anyhow!("labels.csv has no path column"))?;
        let (uuid_col, post_col, at_col) = (col("uuid"), col("post"), col("captured_at"));
        for row in r.records() {
            let row = row?;
            let field = |c: Option<usize>| c.and_then(|c| row.get(c)).filter(|s| !s.is_empty());
            inputs.push(Input {
                path: dir.join(row.get(path_col).unwrap_or_default()),
                uuid: field(uuid_col).map(str::parse).transpose().context("bad uuid in labels.csv")?,
                post_id: field(post_col).map(String::from),
                captured_at: field(at_col).map(str::parse).transpose().context("bad captured_at in labels.csv")?,
            });
        }
    } else {
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
                    inputs.push(Input {
                        path,
                        uuid: None,
                        post_id: None,
                        captured_at: None,
                    });
                }
            }
        }
        inputs.sort_by(|a, b| a.path.cmp(&b.path));
    }
    inputs.sort_by_key(|i| i.captured_at.unwrap_or(i64::MAX));
    Ok(inputs)
}

fn wall_clock() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64)
}

fn run_edge(config: &ExperimentConfig, policy: &StoragePolicy, args: &EdgeArgs) -> Result<()> {
    let codec = load_codec(&args.codec_model)?;
    let inputs = list_inputs(&args.input_dir)?;
    let start = inputs.first().and_then(|i| i.captured_at).unwrap_or_else(wall_clock);
    let mut state = match &args.state_log {
        Some(p) if p.exists() => {
            let (state, report) = restore(p).with_context(|| format!("restoring {}", p.display()))?;
            if report.discarded_bytes > 0 {
                warn!("ignored {} damaged bytes at the end of {}", report.discarded_bytes, p.display());
            }
            state
        }
        _ => StorageState::new(args.post_id.clone(), start),
    };
    let save = |state: &StorageState| -> Result<()> {
        if let Some(p) = &args.state_log {
            persist(state, p).with_context(|| format!("writing {}", p.display()))?;
        }
        Ok(())
    };
    let addr = args.server_addr.clone().unwrap_or_else(|| format!("127.0.0.1:{}", default_port()));
    let mut link: Option<TcpLink> = None;
    let retry = RetryPolicy::default();
    let mut counter = CostCounter::default();
    let mut batches = 0;
    let mut now = start;

    for input in &inputs {
        let mut clip: AudioClip = load_wav(&input.path).with_context(|| format!("reading {}", input.path.display()))?;
        now = input.captured_at.unwrap_or_else(wall_clock);
        clip.post_id = Some(input.post_id.clone().unwrap_or_else(|| args.post_id.clone()));
        clip.captured_at = Some(now);
        let report = match input.uuid {
            Some(u) => state.ingest_with_uuid(policy, &codec, &clip, now, u),
            None => state.ingest(policy, &codec, &clip, now),
        }
        .with_context(|| format!("ingesting {}", input.path.display()))?;
        counter.add_raw_clip(clip.len());
        if !report.evicted.is_empty() {
            warn!("storage full: evicted {} records", report.evicted.len());
        }
        save(&state)?;
        if state.should_flush(policy, now) {
            batches += flush(&mut state, &mut link, &addr, config, &retry, &mut counter, now);
            save(&state)?;
        }
    }
    if !state.is_empty() {
        batches += flush(&mut state, &mut link, &addr, config, &retry, &mut counter, now.max(start));
        save(&state)?;
    }
    let cost = zsdc_core::transport::cost_report(&counter);
    info!(
        "{} clips, {} batches, {} B sent for {} B of WAV, {} dropped",
        inputs.len(),
        batches,
        cost.bytes_sent,
        cost.raw_equivalent_bytes,
        state.dropped_count
    );
    if !state.is_empty() {
        bail!("{} records left undelivered", state.len());
    }
    Ok(())
}

/// Sends everything stored. Failures are logged and the records stay
/// queued for the next flush.
fn flush(
    state: &mut StorageState,
    link: &mut Option<TcpLink>,
    addr: &str,
    config: &ExperimentConfig,
    retry: &RetryPolicy,
    counter: &mut CostCounter,
    now: i64,
) -> u64 {
    let sent = connect(link, addr).and_then(|l| Ok(deliver(state, l, config.max_batch_bytes, retry, counter, now)?));
    match sent {
        Ok(n) => n,
        Err(e) => {
            warn!("flush failed, keeping {} records: {e:#}", state.len());
            *link = None;
            0
        }
    }
}

fn connect<'a>(link: &'a mut Option<TcpLink>, addr: &str) -> Result<&'a mut TcpLink> {
    if link.is_none() {
        *link = Some(TcpLink::connect(addr).with_context(|| format!("connecting to {addr}"))?);
    }
    Ok(link.as_mut().expect("just connected"))
}

fn write_report(report: &zsdc_core::experiment::ExperimentReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let write = |name: &str, text: &str| -> Result<()> {
        fs::write(out_dir.join(name), text).with_context(|| format!("writing {name}"))
    };
    write("report.json", &report.to_json())?;
    write("report.csv", &report.to_csv())?;
    write("report.txt", &report.to_text())?;
    write("auroc.csv", &report.auroc_table.to_csv())?;
    let mut sizes = String::from("variant,sample_rate,bytes,ratio_size\n");
    for r in &report.size_table {
        sizes.push_str(&format!("{},{},{},{:.6}\n", r.variant.label(), r.sample_rate, r.bytes, r.ratio_size));
    }
    write("size.csv", &sizes)?;
    let mut mse = String::from("source_rate,mse\n");
    for r in &report.mse_table {
        mse.push_str(&format!("{},{:e}\n", r.source_rate, r.mse));
    }
    write("mse.csv", &mse)?;
    print!("{}", report.to_text());
    Ok(())
}
