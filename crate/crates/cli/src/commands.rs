use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::info;

use crate::args::*;
use crate::bench::cmd_bench;
use crate::config::{rcflane_config, train_config};
use crate::error::usage;
use crate::pipeline::{cmd_pipeline, depth_table, summary_table, PipelineOptions};
use crate::table::{fmt4, Table};
use rainlane_core::dataset::{
    build_dataset_with_depth, list_images, load_pairs, resolved_entries, Split,
};
use rainlane_core::kpn::{
    dlkpn_infer, kpn_forward, layer2_pairs, load_checkpoint, save_checkpoint, train_layer_observed,
    DlkpnModel, ImagePair, KpnModel, TrainConfig,
};
use rainlane_core::metrics::{depth_metrics, recon_metrics, DepthMap, DepthMetrics, ReconMetrics};
use rainlane_core::{load_image, save_image, synthesize};

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::BuildDataset(a) => build_dataset(&a),
        Command::Train(a) => train(&a),
        Command::Infer(a) => infer(&a),
        Command::EvalRecon(a) => eval_recon(&a),
        Command::EvalDepth(a) => eval_depth(&a),
        Command::Bench(a) => bench(&a),
        Command::Pipeline(a) => pipeline(&a),
    }
}

pub(crate) fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

pub(crate) fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn emit(table: &Table, csv: Option<&Path>) -> anyhow::Result<()> {
    print!("{}", table.render());
    if let Some(path) = csv {
        table.write_csv(path)?;
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let cfg = rcflane_config(&args.rcflane, args.seed)?;
    let clean = load_image(&args.input)?;
    let s = synthesize(&clean, &cfg)?;
    create_dir(&args.out)?;
    let name = stem(&args.input);
    let rainy = args.out.join(format!("{name}.png"));
    save_image(&s.rainy, &rainy)?;
    if args.emit_intermediates {
        save_image(&s.o1, args.out.join(format!("{name}_o1.png")))?;
        save_image(&s.o2, args.out.join(format!("{name}_o2.png")))?;
        save_image(&s.rain_layer, args.out.join(format!("{name}_rain.png")))?;
        save_image(
            &s.transmission.to_image(),
            args.out.join(format!("{name}_td.png")),
        )?;
    }
    info!("wrote {}", rainy.display());
    Ok(())
}

fn build_dataset(args: &BuildDatasetArgs) -> anyhow::Result<()> {
    let cfg = rcflane_config(&args.rcflane, None)?;
    let manifest = build_dataset_with_depth(
        &args.src,
        &args.out,
        &cfg,
        args.split,
        args.seed,
        args.gt_depth_dir.as_deref(),
    )?;
    println!(
        "{} images: {} train, {} test -> {}",
        manifest.entries.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Test),
        args.out
            .join(rainlane_core::dataset::MANIFEST_FILE)
            .display()
    );
    Ok(())
}

/// `(rainy, clean)` training pairs of one split.
fn split_pairs(manifest: &Path, split: Split) -> anyhow::Result<Vec<ImagePair>> {
    Ok(load_pairs(manifest, split)?
        .into_iter()
        .map(|(clean, rainy)| (rainy, clean))
        .collect())
}

fn mean_recon(model: &KpnModel, pairs: &[ImagePair]) -> rainlane_core::Result<ReconMetrics> {
    let mut acc = ReconMetrics {
        psnr_db: 0.0,
        ssim: 0.0,
    };
    for (input, clean) in pairs {
        let m = recon_metrics(&kpn_forward(model, input)?.restored, clean)?;
        acc.psnr_db += m.psnr_db / pairs.len() as f64;
        acc.ssim += m.ssim / pairs.len() as f64;
    }
    Ok(acc)
}

struct EvalLog {
    every: usize,
    table: Table,
}

impl EvalLog {
    fn train(
        &mut self,
        layer: &str,
        pairs: &[ImagePair],
        test: &[ImagePair],
        cfg: &TrainConfig,
    ) -> anyhow::Result<KpnModel> {
        let mut failure = None;
        let model = train_layer_observed(pairs, cfg, |report, model| {
            let step = report.step + 1;
            if self.every == 0 || test.is_empty() || failure.is_some() || step % self.every != 0 {
                return;
            }
            match mean_recon(model, test) {
                Ok(m) => {
                    info!(
                        "{layer} step {step}: test psnr {:.3} dB, ssim {:.4}",
                        m.psnr_db, m.ssim
                    );
                    self.table.push(vec![
                        layer.into(),
                        step.to_string(),
                        format!("{:.6}", report.loss),
                        fmt4(m.psnr_db),
                        fmt4(m.ssim),
                    ]);
                }
                Err(e) => failure = Some(e),
            }
        })
        .with_context(|| format!("training {layer}"))?;
        if let Some(e) = failure {
            return Err(e).with_context(|| format!("evaluating {layer}"));
        }
        Ok(model)
    }
}

fn train(args: &TrainArgs) -> anyhow::Result<()> {
    if args.layer != LayerChoice::Two && args.init.is_some() {
        bail!(usage("--init is only used with --layer 2"));
    }
    let cfg = train_config(&args.train)?;
    let train_pairs = split_pairs(&args.manifest, Split::Train)?;
    let test_pairs = split_pairs(&args.manifest, Split::Test)?;
    let mut log = EvalLog {
        every: args.eval_every,
        table: Table::new(["layer", "step", "train_loss", "test_psnr_db", "test_ssim"]),
    };

    let model = match args.layer {
        LayerChoice::One => {
            let layer1 = log.train("layer1", &train_pairs, &test_pairs, &cfg)?;
            DlkpnModel::new(layer1, KpnModel::identity(&cfg.arch)?)?
        }
        LayerChoice::Two => {
            let init = args
                .init
                .as_ref()
                .ok_or_else(|| usage("--layer 2 needs --init <checkpoint with layer 1>"))?;
            let layer1 = load_checkpoint(init)?.layer1;
            let stage2 = layer2_pairs(&layer1, &train_pairs)?;
            let test2 = layer2_pairs(&layer1, &test_pairs)?;
            let layer2 = log.train("layer2", &stage2, &test2, &cfg)?;
            DlkpnModel::new(layer1, layer2)?
        }
        LayerChoice::Both => {
            let layer1 = log.train("layer1", &train_pairs, &test_pairs, &cfg)?;
            let stage2 = layer2_pairs(&layer1, &train_pairs)?;
            let test2 = layer2_pairs(&layer1, &test_pairs)?;
            let layer2 = log.train("layer2", &stage2, &test2, &cfg)?;
            DlkpnModel::new(layer1, layer2)?
        }
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_checkpoint(&model, &args.out)?;
    if !log.table.rows.is_empty() {
        print!("{}", log.table.render());
    }
    if let Some(path) = &args.eval_csv {
        log.table.write_csv(path)?;
    }
    info!("wrote {}", args.out.display());
    Ok(())
}

fn infer(args: &InferArgs) -> anyhow::Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    create_dir(&args.out)?;
    for input in &args.inputs {
        let img = load_image(input)?;
        let out =
            dlkpn_infer(&model, &img).with_context(|| format!("restoring {}", input.display()))?;
        let name = stem(input);
        save_image(&out.restored, args.out.join(format!("{name}.png")))?;
        if args.emit_mid {
            save_image(&out.mid, args.out.join(format!("{name}_mid.png")))?;
        }
        info!("restored {}", input.display());
    }
    Ok(())
}

fn recon_row(name: String, m: &ReconMetrics) -> Vec<String> {
    vec![name, fmt4(m.psnr_db), fmt4(m.ssim)]
}

fn eval_recon(args: &EvalReconArgs) -> anyhow::Result<()> {
    let pairs: Vec<(String, PathBuf, PathBuf)> = if let Some(manifest) = &args.manifest {
        let split = args.split.as_deref().map(str::parse::<Split>).transpose()?;
        resolved_entries(manifest, split)?
            .into_iter()
            .map(|(_, e)| {
                let name = stem(&e.rainy_path);
                let restored = match &args.restored_dir {
                    Some(dir) => dir.join(format!("{name}.png")),
                    None => e.rainy_path,
                };
                (name, restored, e.clean_path)
            })
            .collect()
    } else {
        args.pair
            .chunks(2)
            .map(|p| (stem(&p[0]), p[0].clone(), p[1].clone()))
            .collect()
    };
    if pairs.is_empty() {
        bail!(usage(
            "nothing to evaluate: give --pair RESTORED CLEAN or --manifest"
        ));
    }

    let mut table = Table::new(["image", "psnr_db", "ssim"]);
    let mut all = Vec::with_capacity(pairs.len());
    for (name, restored, clean) in pairs {
        let m = recon_metrics(&load_image(&restored)?, &load_image(&clean)?)
            .with_context(|| format!("{} vs {}", restored.display(), clean.display()))?;
        table.push(recon_row(name, &m));
        all.push(m);
    }
    let n = all.len() as f64;
    let mean = ReconMetrics {
        psnr_db: all.iter().map(|m| m.psnr_db).sum::<f64>() / n,
        ssim: all.iter().map(|m| m.ssim).sum::<f64>() / n,
    };
    table.push(recon_row("mean".into(), &mean));
    emit(&table, args.csv.as_deref())
}

pub(crate) fn depth_row(name: String, m: &DepthMetrics) -> Vec<String> {
    std::iter::once(name)
        .chain(m.values().iter().map(|v| fmt4(*v)))
        .collect()
}

fn eval_depth(args: &EvalDepthArgs) -> anyhow::Result<()> {
    let pairs: Vec<(String, PathBuf, PathBuf)> = match (&args.pred_dir, &args.gt_dir) {
        (Some(pred_dir), Some(gt_dir)) => list_images(pred_dir)?
            .into_iter()
            .map(|pred| {
                let file = pred
                    .file_name()
                    .expect("listed files have names")
                    .to_owned();
                (stem(&pred), pred, gt_dir.join(file))
            })
            .collect(),
        _ => args
            .pair
            .chunks(2)
            .map(|p| (stem(&p[0]), p[0].clone(), p[1].clone()))
            .collect(),
    };
    if pairs.is_empty() {
        bail!(usage(
            "nothing to evaluate: give --pair PRED GT or --pred-dir/--gt-dir"
        ));
    }

    let mut table =
        Table::new(std::iter::once("image").chain(DepthMetrics::COLUMNS.iter().copied()));
    let mut all = Vec::with_capacity(pairs.len());
    for (name, pred, gt) in pairs {
        let m = depth_metrics(
            &DepthMap::load_png16(&pred)?,
            &DepthMap::load_png16(&gt)?,
            args.cap,
        )
        .with_context(|| format!("{} vs {}", pred.display(), gt.display()))?;
        table.push(depth_row(name, &m));
        all.push(m);
    }
    let mean = DepthMetrics::mean(&all).expect("at least one pair");
    table.push(depth_row("mean".into(), &mean));
    emit(&table, args.csv.as_deref())
}

fn bench(args: &BenchArgs) -> anyhow::Result<()> {
    let report = cmd_bench(&args.checkpoint, &args.image, args.iterations, args.warmup)?;
    println!(
        "{}x{} image, {} iterations after {} warmup, {} thread(s)",
        report.width, report.height, report.iterations, report.warmup, report.threads
    );
    print!("{}", report.stage_table().render());
    if let Some(path) = &args.csv {
        report.to_table().write_csv(path)?;
    }
    Ok(())
}

fn pipeline(args: &PipelineArgs) -> anyhow::Result<()> {
    let cfg = rcflane_config(&args.rcflane, None)?;
    let opts = PipelineOptions {
        seed: args.seed,
        depth_cmd: args.depth_cmd.clone(),
        gt_depth_dir: args.gt_depth_dir.clone(),
        depth_cap: args.depth_cap,
    };
    let rows = cmd_pipeline(&args.clean_dir, &cfg, &args.checkpoint, &args.out, &opts)?;
    let summary = summary_table(&rows);
    emit(&summary, Some(&args.out.join("summary.csv")))?;
    if let Some(depth) = depth_table(&rows) {
        depth.write_csv(&args.out.join("depth_metrics.csv"))?;
    }
    Ok(())
}
