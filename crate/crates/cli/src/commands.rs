//! One function per subcommand. Each reads its inputs, writes into the run
//! directory and returns a short summary for stdout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use specpred::colormap;
use specpred::ingest::{self, write_ppm, Manifest, Split};
use specpred::metrics::{self, framewise, framewise_csv, horizon_mean, sor_accuracy, FrameMetrics};
use specpred::models::{load_checkpoint, Checkpoint, ModelConfig, ModelKind, SwinLinearModel, SwinStbModel};
use specpred::sor::label_clip;
use specpred::swin::flops::{flops_msa, wmsa_attention_term};
use specpred::tensor::io as spt;
use specpred::training::{self, mmd, sor_samples, TrainLog};
use specpred::{Error, Result, Tensor};

use crate::config::RunConfig;

pub const CONFIG_ECHO: &str = "config.txt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn prepare_out(out: &Path, cfg: &RunConfig, header: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Data(format!("cannot create {}: {e}", out.display())))?;
    let mut s = String::new();
    for (k, v) in header {
        writeln!(s, "# {k}={v}").unwrap();
    }
    s.push_str(&cfg.echo());
    write(&out.join(CONFIG_ECHO), &s)
}

fn split(cfg: &RunConfig) -> Result<Split> {
    cfg.raw("eval.split").parse()
}

fn load_stb(path: &Path) -> Result<SwinStbModel> {
    SwinStbModel::from_checkpoint(&load_checkpoint(path)?)
}

fn load_sor(path: &Path) -> Result<SwinLinearModel> {
    SwinLinearModel::from_checkpoint(&load_checkpoint(path)?)
}

pub enum IngestSource<'a> {
    Synth,
    Files(&'a [PathBuf]),
}

pub fn ingest(cfg: &RunConfig, source: IngestSource<'_>, out: &Path) -> Result<String> {
    let icfg = cfg.ingest()?;
    icfg.validate()?;
    prepare_out(out, cfg, &[("command", "ingest".into())])?;
    let m = match source {
        IngestSource::Synth => ingest::synth_dataset(&cfg.synth()?, &icfg, out)?,
        IngestSource::Files(paths) => ingest::ingest_files(paths, &icfg, out)?,
    };
    Ok(format!(
        "{} clips ({}): train {} val {} test {}, norm [{:.3}, {:.3}] dB",
        m.clips.len(),
        m.source,
        m.train.len(),
        m.val.len(),
        m.test.len(),
        m.norm.db_min,
        m.norm.db_max
    ))
}

fn model_for(cfg: &RunConfig, m: &Manifest) -> Result<ModelConfig> {
    cfg.model(Some([m.input_length, m.height, m.width, m.channels]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Task {
    #[value(name = "3d")]
    Spectrogram,
    Sor,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Spectrogram => "3d",
            Task::Sor => "sor",
        }
    }
}

fn save_run(out: &Path, log: &TrainLog) -> Result<()> {
    write(&out.join(TRAIN_LOG), &log.to_csv())
}

fn sor_targets_csv(m: &Manifest, cfg: &RunConfig) -> Result<String> {
    let labels = cfg.sor()?;
    let mut s = String::from("split,sample,k,sor\n");
    for split in [Split::Train, Split::Val] {
        for (i, (_, y)) in sor_samples(m, split, &labels)?.iter().enumerate() {
            for (k, v) in y.data().iter().enumerate() {
                writeln!(s, "{},{i},{k},{v:.6}", split.as_str()).unwrap();
            }
        }
    }
    Ok(s)
}

pub fn train(cfg: &RunConfig, task: Task, data: &Path, out: &Path) -> Result<String> {
    let m = Manifest::read(data)?;
    let mcfg = model_for(cfg, &m)?;
    let tcfg = cfg.train()?;
    let seed: u64 = cfg.get("model.seed")?;
    prepare_out(
        out,
        cfg,
        &[("command", "train".into()), ("task", task.name().into()), ("data", data.display().to_string())],
    )?;
    let ck = out.join(CHECKPOINT_DIR);
    let log = match task {
        Task::Spectrogram => {
            let mut model = SwinStbModel::new(&mcfg, seed)?;
            let log = training::train_stb(&mut model, &m, &tcfg)?;
            model.save(&ck)?;
            log
        }
        Task::Sor => {
            let labels = cfg.sor()?;
            labels.validate(m.height, m.width)?;
            write(&out.join("sor_targets.csv"), &sor_targets_csv(&m, cfg)?)?;
            let mut model = SwinLinearModel::new(&mcfg, seed)?;
            let log = training::train_sor(&mut model, &m, &labels, &tcfg)?;
            model.save(&ck)?;
            log
        }
    };
    save_run(out, &log)?;
    Ok(format!(
        "{} epochs ({}), loss {:.6} -> {:.6}, best val {:.6} at epoch {}",
        log.epochs.len(),
        log.stop.as_str(),
        log.initial_loss,
        log.final_loss(),
        log.best_val_loss,
        log.best_epoch
    ))
}

pub fn predict(cfg: &RunConfig, checkpoint: &Path, data: &Path, index: usize, out: &Path) -> Result<String> {
    let ck = load_checkpoint(checkpoint)?;
    let m = Manifest::read(data)?;
    training::check_dims(ck.config.input, &m).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let split = split(cfg)?;
    let samples = m.samples(split)?;
    let (x, _) = samples.get(index).ok_or_else(|| {
        Error::Config(format!("sample {index} out of range: {} split has {}", split.as_str(), samples.len()))
    })?;
    prepare_out(
        out,
        cfg,
        &[
            ("command", "predict".into()),
            ("checkpoint", checkpoint.display().to_string()),
            ("data", data.display().to_string()),
            ("index", index.to_string()),
        ],
    )?;
    match ck.kind {
        ModelKind::Stb => {
            let pred = SwinStbModel::from_checkpoint(&ck)?.predict(x)?;
            spt::save(&pred, out.join("prediction.spt"))?;
            for k in 0..pred.shape()[0] {
                write_ppm(&out.join(format!("frame_{k:02}.ppm")), &pred.index_axis0(k))?;
            }
            Ok(format!("{} frames written to {}", pred.shape()[0], out.display()))
        }
        ModelKind::Sor => {
            let rates = SwinLinearModel::from_checkpoint(&ck)?.predict(x)?;
            let mut s = String::from("k,sor\n");
            for (k, r) in rates.iter().enumerate() {
                writeln!(s, "{k},{r:.6}").unwrap();
            }
            write(&out.join("sor_prediction.csv"), &s)?;
            spt::save(&Tensor::new([rates.len()], rates.clone())?, out.join("prediction.spt"))?;
            Ok(format!("{} occupancy rates written to {}", rates.len(), out.display()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Compare {
    #[value(name = "appendixA")]
    Rendering,
    #[value(name = "appendixB")]
    SorPaths,
}

pub struct EvalInputs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub compare: Option<Compare>,
    pub sor_checkpoint: Option<&'a Path>,
    pub gray_checkpoint: Option<&'a Path>,
    pub gray_data: Option<&'a Path>,
}

fn accuracy_csv(rows: &[(&str, &metrics::AccuracyReport)]) -> String {
    let mut s = String::from("path,lambda,k,n_time,correct,accuracy\n");
    for (name, r) in rows {
        writeln!(s, "{name},{:.6},{},{},{},{:.6}", r.lambda, r.k, r.n_time, r.correct, r.accuracy).unwrap();
    }
    s
}

/// Frames reduced to the scalar intensity plane, `(K,H,W,1)`.
fn intensity_clip(t: &Tensor) -> Result<Tensor> {
    let s = t.shape();
    let ch = s[3];
    Tensor::new([s[0], s[1], s[2], 1], colormap::intensity(t.data(), ch))
}

fn intensity_metrics(model: &SwinStbModel, m: &Manifest, split: Split) -> Result<Vec<FrameMetrics>> {
    let (p, t) = metrics::stb_predictions(model, m, split)?;
    let p = p.iter().map(intensity_clip).collect::<Result<Vec<_>>>()?;
    let t = t.iter().map(intensity_clip).collect::<Result<Vec<_>>>()?;
    framewise(&p, &t)
}

pub fn evaluate(cfg: &RunConfig, inp: &EvalInputs<'_>, out: &Path) -> Result<String> {
    let split = split(cfg)?;
    let lambda: f64 = cfg.get("eval.lambda")?;
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("eval.lambda must be nonnegative, got {lambda}")));
    }
    let ck = load_checkpoint(inp.checkpoint)?;
    let m = Manifest::read(inp.data)?;
    training::check_dims(ck.config.input, &m).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut header = vec![
        ("command", "evaluate".to_string()),
        ("checkpoint", inp.checkpoint.display().to_string()),
        ("data", inp.data.display().to_string()),
    ];
    if let Some(c) = inp.compare {
        header.push(("compare", format!("{c:?}")));
    }
    for (k, p) in [("sor_checkpoint", inp.sor_checkpoint), ("gray_checkpoint", inp.gray_checkpoint), ("gray_data", inp.gray_data)] {
        if let Some(p) = p {
            header.push((k, p.display().to_string()));
        }
    }

    let mut report = String::new();
    match inp.compare {
        None if ck.kind == ModelKind::Sor => {
            let labels = cfg.sor()?;
            let model = SwinLinearModel::from_checkpoint(&ck)?;
            let mut pred = Vec::new();
            let mut truth = Vec::new();
            for (x, y) in sor_samples(&m, split, &labels)? {
                pred.push(model.predict(&x)?.into_iter().map(f64::from).collect());
                truth.push(y.data().iter().map(|&v| f64::from(v)).collect());
            }
            let r = sor_accuracy(&pred, &truth, lambda)?;
            prepare_out(out, cfg, &header)?;
            write(&out.join("sor_accuracy.csv"), &accuracy_csv(&[("head", &r)]))?;
            writeln!(report, "accuracy {:.6} ({} of {} frames within {lambda})", r.accuracy, r.correct, r.k * r.n_time).unwrap();
        }
        None => {
            let model = SwinStbModel::from_checkpoint(&ck)?;
            let (p, t) = metrics::stb_predictions(&model, &m, split)?;
            let rows = framewise(&p, &t)?;
            prepare_out(out, cfg, &header)?;
            write(&out.join("framewise.csv"), &framewise_csv(&rows))?;
            let mean = horizon_mean(&rows);
            writeln!(report, "mean over {} frames: mse {:.6} psnr {:.6} ssim {:.6}", rows.len(), mean.mse, mean.psnr.min(metrics::PSNR_CAP_DB), mean.ssim).unwrap();
        }
        Some(Compare::SorPaths) => {
            let sor_path = inp
                .sor_checkpoint
                .ok_or_else(|| Error::Config("--compare appendixB needs --sor-checkpoint".into()))?;
            let stb = SwinStbModel::from_checkpoint(&ck)?;
            let head = load_sor(sor_path)?;
            training::check_dims(head.config.input, &m).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let c = metrics::compare_sor_paths(&stb, &head, &m, split, &cfg.sor()?, lambda)?;
            prepare_out(out, cfg, &header)?;
            write(
                &out.join("appendix_b.csv"),
                &accuracy_csv(&[("head", &c.head), ("from_predicted", &c.from_predicted)]),
            )?;
            writeln!(report, "head accuracy {:.6}", c.head.accuracy).unwrap();
            writeln!(report, "from_predicted accuracy {:.6}", c.from_predicted.accuracy).unwrap();
            writeln!(report, "difference {:.6}", c.difference()).unwrap();
        }
        Some(Compare::Rendering) => {
            let (gck, gdata) = match (inp.gray_checkpoint, inp.gray_data) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Config("--compare appendixA needs --gray-checkpoint and --gray-data".into())),
            };
            let gray = load_stb(gck)?;
            let gm = Manifest::read(gdata)?;
            training::check_dims(gray.config.input, &gm).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let rgb = SwinStbModel::from_checkpoint(&ck)?;
            let a = intensity_metrics(&rgb, &m, split)?;
            let b = intensity_metrics(&gray, &gm, split)?;
            let (ma, mb) = (horizon_mean(&a), horizon_mean(&b));
            prepare_out(out, cfg, &header)?;
            write(&out.join("framewise_rgb.csv"), &framewise_csv(&a))?;
            write(&out.join("framewise_gray.csv"), &framewise_csv(&b))?;
            let mut s = String::from("mode,channels,mse,psnr,ssim\n");
            for (name, ch, r) in [("rgb", m.channels, &ma), ("gray", gm.channels, &mb)] {
                writeln!(s, "{name},{ch},{:.6},{:.6},{:.6}", r.mse, r.psnr.min(metrics::PSNR_CAP_DB), r.ssim).unwrap();
            }
            write(&out.join("appendix_a.csv"), &s)?;
            writeln!(report, "rgb  mse {:.6} ssim {:.6}", ma.mse, ma.ssim).unwrap();
            writeln!(report, "gray mse {:.6} ssim {:.6}", mb.mse, mb.ssim).unwrap();
            if mb.mse > 0.0 {
                writeln!(report, "rgb mse change vs gray {:+.2} %", 100.0 * (ma.mse - mb.mse) / mb.mse).unwrap();
            }
        }
    }
    Ok(report.trim_end().to_string())
}

fn mean_features(model: &SwinStbModel, m: &Manifest, split: Split) -> Result<Vec<Vec<f64>>> {
    m.samples(split)?.iter().map(|(x, _)| model.features(x)).collect()
}

pub fn transfer(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    scratch: bool,
    source_data: Option<&Path>,
    out: &Path,
) -> Result<String> {
    let ck: Checkpoint = load_checkpoint(checkpoint)?;
    let target = Manifest::read(data)?;
    let tcfg = cfg.train()?;
    let mut header = vec![
        ("command", "transfer".to_string()),
        ("checkpoint", checkpoint.display().to_string()),
        ("data", data.display().to_string()),
        ("scratch", scratch.to_string()),
    ];
    if let Some(p) = source_data {
        header.push(("source_data", p.display().to_string()));
    }
    let (model, log) = training::transfer_finetune(&ck, &target, &tcfg)?;
    prepare_out(out, cfg, &header)?;
    model.save(out.join(CHECKPOINT_DIR))?;
    save_run(out, &log)?;
    let mut report = format!("fine-tuned final val loss {:.6} after {} epochs\n", log.final_val_loss(), log.epochs.len());

    if scratch {
        let seed: u64 = cfg.get("model.seed")?;
        let mut fresh = SwinStbModel::new(&ck.config, seed)?;
        let mut scfg = tcfg.clone();
        scfg.freeze_encoder = false;
        let slog = training::train_stb(&mut fresh, &target, &scfg)?;
        write(&out.join("scratch_log.csv"), &slog.to_csv())?;
        let goal = slog.final_val_loss();
        let reach = |l: &TrainLog| l.epochs_to_reach(goal).map_or("never".to_string(), |e| e.to_string());
        let mut s = String::from("model,final_val_loss,epochs_to_scratch_final\n");
        writeln!(s, "finetuned,{:.6},{}", log.final_val_loss(), reach(&log)).unwrap();
        writeln!(s, "scratch,{:.6},{}", goal, reach(&slog)).unwrap();
        write(&out.join("transfer_summary.csv"), &s)?;
        writeln!(report, "scratch final val loss {goal:.6}; epochs to reach it: fine-tuned {}, scratch {}", reach(&log), reach(&slog)).unwrap();
    }
    if let Some(src) = source_data {
        let sm = Manifest::read(src)?;
        let pretrained = SwinStbModel::from_checkpoint(&ck)?;
        training::check_dims(pretrained.config.input, &sm).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let d = mmd(&mean_features(&pretrained, &sm, Split::Train)?, &mean_features(&pretrained, &target, Split::Train)?)?;
        write(&out.join("mmd.csv"), &format!("mmd\n{d:.6}\n"))?;
        writeln!(report, "mmd(source, target) {d:.6}").unwrap();
    }
    Ok(report.trim_end().to_string())
}

/// Per-stage cost table of the configured model.
pub fn flops_table(mcfg: &ModelConfig) -> Vec<FlopsRow> {
    let mut rows = Vec::new();
    let mut push = |name: String, level: usize, pairs: usize| {
        let [p, h, w] = mcfg.stage_grid(level);
        let c = mcfg.stage_width(level);
        let win = [mcfg.window[0].min(p), mcfg.window[1].min(h), mcfg.window[2].min(w)];
        let (p, h, w, c) = (p as u64, h as u64, w as u64, c as u64);
        let n = p * h * w;
        let attn = if win[1] == win[2] {
            wmsa_attention_term(p, h, w, c, win[0] as u64, win[1] as u64)
        } else {
            2 * (win[0] * win[1] * win[2]) as u64 * n * c
        };
        rows.push(FlopsRow {
            stage: name,
            grid: [p, h, w],
            channels: c,
            window: win,
            blocks: 2 * pairs,
            msa: flops_msa(p, h, w, c),
            wmsa: 4 * n * c * c + attn,
        });
    };
    for i in 0..3 {
        push(format!("enc{}", i + 1), i, mcfg.enc_blocks[i]);
    }
    push("bottleneck".into(), 2, mcfg.bottleneck_blocks);
    for d in 0..3 {
        push(format!("dec{}", d + 1), 2 - d, mcfg.dec_blocks[d]);
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsRow {
    pub stage: String,
    pub grid: [u64; 3],
    pub channels: u64,
    pub window: [usize; 3],
    pub blocks: usize,
    pub msa: u64,
    pub wmsa: u64,
}

pub fn flops_csv(rows: &[FlopsRow]) -> String {
    let mut s = String::from("stage,p,h,w,c,window,blocks,flops_msa,flops_wmsa,ratio\n");
    for r in rows {
        let [p, h, w] = r.grid;
        let [a, b, c] = r.window;
        writeln!(
            s,
            "{},{p},{h},{w},{},{a}x{b}x{c},{},{},{},{:.6}",
            r.stage,
            r.channels,
            r.blocks,
            r.msa,
            r.wmsa,
            r.msa as f64 / r.wmsa as f64
        )
        .unwrap();
    }
    s
}

pub fn flops(cfg: &RunConfig, out: Option<&Path>) -> Result<String> {
    let mcfg = cfg.model(None)?;
    let rows = flops_table(&mcfg);
    let csv = flops_csv(&rows);
    if let Some(out) = out {
        prepare_out(out, cfg, &[("command", "flops".into())])?;
        write(&out.join("flops.csv"), &csv)?;
    }
    let mut s = format!(
        "{:<11} {:>14} {:>6} {:>9} {:>18} {:>18} {:>9}\n",
        "stage", "grid", "C", "window", "global", "windowed", "ratio"
    );
    for r in &rows {
        let [p, h, w] = r.grid;
        let [a, b, c] = r.window;
        writeln!(
            s,
            "{:<11} {:>14} {:>6} {:>9} {:>18} {:>18} {:>9.3}",
            r.stage,
            format!("{p}x{h}x{w}"),
            r.channels,
            format!("{a}x{b}x{c}"),
            r.msa,
            r.wmsa,
            r.msa as f64 / r.wmsa as f64
        )
        .unwrap();
    }
    Ok(s.trim_end().to_string())
}

pub fn sor_label(cfg: &RunConfig, data: &Path, out: &Path) -> Result<String> {
    let m = Manifest::read(data)?;
    let labels = cfg.sor()?;
    labels.validate(m.height, m.width)?;
    prepare_out(out, cfg, &[("command", "sor-label".into()), ("data", data.display().to_string())])?;
    let mut s = String::from("clip_index,frame_index,sor_fraction,sor_paper_form,p_f,p_t\n");
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..m.clips.len() {
        for (f, l) in label_clip(&m.load_clip(i)?, &labels)?.iter().enumerate() {
            writeln!(s, "{i},{f},{:.6},{:.6},{:.6},{:.6}", l.fraction, l.union, l.p_f, l.p_t).unwrap();
            total += l.fraction;
            n += 1;
        }
    }
    write(&out.join("sor_labels.csv"), &s)?;
    Ok(format!("{n} frames labelled, mean occupancy {:.6}", total / n as f64))
}
