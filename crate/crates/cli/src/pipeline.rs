//! Directory-level run: synthesize rain, restore, score, and optionally run an
//! external depth model on both the rainy and restored images.

use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{anyhow, Context};
use log::{info, warn};

use crate::commands::{create_dir, depth_row, stem};
use crate::error::usage;
use crate::table::{fmt4, Table};
use rainlane_core::dataset::{image_seed, list_images};
use rainlane_core::kpn::{dlkpn_infer, load_checkpoint};
use rainlane_core::metrics::{depth_metrics, recon_metrics, DepthMap, DepthMetrics, ReconMetrics};
use rainlane_core::{load_image, save_image, synthesize, RcflaneConfig};

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Base rain seed, combined with each file name.
    pub seed: u64,
    /// Shell command with `{in}` and `{out}` placeholders.
    pub depth_cmd: Option<String>,
    pub gt_depth_dir: Option<PathBuf>,
    pub depth_cap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRow {
    pub image: String,
    pub rainy: ReconMetrics,
    pub restored: ReconMetrics,
    pub depth_rainy: Option<DepthMetrics>,
    pub depth_restored: Option<DepthMetrics>,
    /// `ok`, or what went wrong in the depth stage.
    pub status: String,
}

/// Substitutes shell-quoted paths for `{in}` and `{out}`.
pub fn render_depth_cmd(template: &str, input: &Path, output: &Path) -> anyhow::Result<String> {
    if !template.contains("{in}") || !template.contains("{out}") {
        return Err(usage("--depth-cmd must contain both {in} and {out}"));
    }
    let quote = |p: &Path| -> anyhow::Result<String> {
        let s = p.to_string_lossy();
        Ok(shlex::try_quote(&s)
            .map_err(|e| anyhow!("cannot quote {}: {e}", p.display()))?
            .into_owned())
    };
    Ok(template
        .replace("{in}", &quote(input)?)
        .replace("{out}", &quote(output)?))
}

fn run_depth(template: &str, input: &Path, output: &Path) -> anyhow::Result<DepthMap> {
    let cmd = render_depth_cmd(template, input, output)?;
    let out = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .output()
        .with_context(|| format!("spawning `{cmd}`"))?;
    if !out.status.success() {
        let stderr = String::from_utf8_lossy(&out.stderr);
        let last = stderr.lines().last().unwrap_or("").trim();
        return Err(anyhow!("`{cmd}` exited with {}: {last}", out.status));
    }
    Ok(DepthMap::load_png16(output)?)
}

/// Depth of the rainy and restored images, scored against ground truth when given.
fn depth_stage(
    template: &str,
    name: &str,
    rainy: &Path,
    restored: &Path,
    depth_dir: &Path,
    opts: &PipelineOptions,
) -> anyhow::Result<(Option<DepthMetrics>, Option<DepthMetrics>)> {
    let pred_rainy = run_depth(
        template,
        rainy,
        &depth_dir.join(format!("{name}_rainy.png")),
    )?;
    let pred_restored = run_depth(
        template,
        restored,
        &depth_dir.join(format!("{name}_restored.png")),
    )?;
    let Some(gt_dir) = &opts.gt_depth_dir else {
        return Ok((None, None));
    };
    let gt = DepthMap::load_png16(gt_dir.join(format!("{name}.png")))?;
    Ok((
        Some(depth_metrics(&pred_rainy, &gt, opts.depth_cap)?),
        Some(depth_metrics(&pred_restored, &gt, opts.depth_cap)?),
    ))
}

/// Writes `out/rainy`, `out/restored` and (with a depth command) `out/depth`.
/// Depth failures are recorded per image; everything else aborts the run.
pub fn cmd_pipeline(
    clean_dir: &Path,
    cfg: &RcflaneConfig,
    checkpoint: &Path,
    out: &Path,
    opts: &PipelineOptions,
) -> anyhow::Result<Vec<PipelineRow>> {
    let model = load_checkpoint(checkpoint)?;
    let images = list_images(clean_dir)?;
    if images.is_empty() {
        return Err(usage(format!(
            "no PNG/PPM images in {}",
            clean_dir.display()
        )));
    }
    let (rainy_dir, restored_dir, depth_dir) =
        (out.join("rainy"), out.join("restored"), out.join("depth"));
    create_dir(&rainy_dir)?;
    create_dir(&restored_dir)?;
    if opts.depth_cmd.is_some() {
        create_dir(&depth_dir)?;
    }

    let mut rows = Vec::with_capacity(images.len());
    for path in images {
        let name = stem(&path);
        let file_name = path
            .file_name()
            .expect("listed files have names")
            .to_string_lossy();
        let clean = load_image(&path)?;
        let mut cfg = cfg.clone();
        cfg.rain.seed = image_seed(opts.seed, &file_name);

        let rainy_path = rainy_dir.join(format!("{name}.png"));
        save_image(&synthesize(&clean, &cfg)?.rainy, &rainy_path)?;
        let rainy = load_image(&rainy_path)?;
        let restored_path = restored_dir.join(format!("{name}.png"));
        let restored = dlkpn_infer(&model, &rainy)
            .with_context(|| format!("restoring {}", rainy_path.display()))?
            .restored;
        save_image(&restored, &restored_path)?;
        let restored = load_image(&restored_path)?;

        let mut row = PipelineRow {
            rainy: recon_metrics(&rainy, &clean)?,
            restored: recon_metrics(&restored, &clean)?,
            image: name,
            depth_rainy: None,
            depth_restored: None,
            status: "ok".into(),
        };
        if let Some(template) = &opts.depth_cmd {
            match depth_stage(
                template,
                &row.image,
                &rainy_path,
                &restored_path,
                &depth_dir,
                opts,
            ) {
                Ok((r, s)) => (row.depth_rainy, row.depth_restored) = (r, s),
                Err(e) => {
                    warn!("{}: depth stage failed: {e:#}", row.image);
                    row.status = format!("depth failed: {e:#}").replace('\n', " ");
                }
            }
        }
        info!(
            "{}: psnr {:.2} -> {:.2} dB",
            row.image, row.rainy.psnr_db, row.restored.psnr_db
        );
        rows.push(row);
    }
    Ok(rows)
}

fn opt4(v: Option<f64>) -> String {
    v.map(fmt4).unwrap_or_default()
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summary_table(rows: &[PipelineRow]) -> Table {
    let mut table = Table::new([
        "image",
        "rainy_psnr_db",
        "rainy_ssim",
        "restored_psnr_db",
        "restored_ssim",
        "rainy_abs_rel",
        "restored_abs_rel",
        "status",
    ]);
    for r in rows {
        table.push(vec![
            r.image.clone(),
            fmt4(r.rainy.psnr_db),
            fmt4(r.rainy.ssim),
            fmt4(r.restored.psnr_db),
            fmt4(r.restored.ssim),
            opt4(r.depth_rainy.map(|m| m.abs_rel)),
            opt4(r.depth_restored.map(|m| m.abs_rel)),
            r.status.clone(),
        ]);
    }
    if !rows.is_empty() {
        let failed = rows.iter().filter(|r| r.status != "ok").count();
        table.push(vec![
            "mean".into(),
            opt4(mean_of(rows.iter().map(|r| r.rainy.psnr_db))),
            opt4(mean_of(rows.iter().map(|r| r.rainy.ssim))),
            opt4(mean_of(rows.iter().map(|r| r.restored.psnr_db))),
            opt4(mean_of(rows.iter().map(|r| r.restored.ssim))),
            opt4(mean_of(
                rows.iter().filter_map(|r| r.depth_rainy).map(|m| m.abs_rel),
            )),
            opt4(mean_of(
                rows.iter()
                    .filter_map(|r| r.depth_restored)
                    .map(|m| m.abs_rel),
            )),
            format!("{failed} failed"),
        ]);
    }
    table
}

/// Full depth metrics per image and input, or `None` when nothing was scored.
pub fn depth_table(rows: &[PipelineRow]) -> Option<Table> {
    let mut table = Table::new(
        ["image", "input"]
            .into_iter()
            .chain(DepthMetrics::COLUMNS.iter().copied()),
    );
    let (mut rainy, mut restored) = (vec![], vec![]);
    for r in rows {
        for (input, m, acc) in [
            ("rainy", r.depth_rainy, &mut rainy),
            ("restored", r.depth_restored, &mut restored),
        ] {
            if let Some(m) = m {
                let mut row = depth_row(r.image.clone(), &m);
                row.insert(1, input.into());
                table.push(row);
                acc.push(m);
            }
        }
    }
    if table.rows.is_empty() {
        return None;
    }
    for (input, all) in [("rainy", &rainy), ("restored", &restored)] {
        if let Some(m) = DepthMetrics::mean(all) {
            let mut row = depth_row("mean".into(), &m);
            row.insert(1, input.into());
            table.push(row);
        }
    }
    Some(table)
}
