//! Inference latency of one image: each layer, both layers, and the first
//! layer on its own.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::usage;
use crate::table::Table;
use rainlane_core::kpn::{kpn_forward, load_checkpoint, DlkpnModel};
use rainlane_core::{load_image, ImageBuffer};

/// Summary of timed samples in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    /// Nearest-rank 95th percentile.
    pub p95_ms: f64,
}

impl LatencyStats {
    /// Panics on an empty sample.
    pub fn from_samples(samples_ms: &[f64]) -> Self {
        assert!(!samples_ms.is_empty(), "no latency samples");
        let mut sorted = samples_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_ms = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let rank = (0.95 * n as f64).ceil() as usize;
        Self {
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            median_ms,
            p95_ms: sorted[rank.max(1) - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub threads: usize,
    pub layer1: LatencyStats,
    pub layer2: LatencyStats,
    /// Both layers back to back.
    pub total: LatencyStats,
    /// The first layer run as a complete restorer.
    pub single_layer: LatencyStats,
}

impl BenchReport {
    pub const STAGES: [&'static str; 4] = ["layer1", "layer2", "total", "single_layer"];

    pub fn csv_columns() -> Vec<String> {
        let mut cols: Vec<String> = ["width", "height", "iterations", "warmup", "threads"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for stage in Self::STAGES {
            for stat in ["mean_ms", "median_ms", "p95_ms"] {
                cols.push(format!("{stage}_{stat}"));
            }
        }
        cols
    }

    fn stages(&self) -> [LatencyStats; 4] {
        [self.layer1, self.layer2, self.total, self.single_layer]
    }

    /// One-row table in [`BenchReport::csv_columns`] order.
    pub fn to_table(&self) -> Table {
        let mut row = vec![
            self.width.to_string(),
            self.height.to_string(),
            self.iterations.to_string(),
            self.warmup.to_string(),
            self.threads.to_string(),
        ];
        for s in self.stages() {
            row.extend([s.mean_ms, s.median_ms, s.p95_ms].map(|v| format!("{v:.4}")));
        }
        let mut table = Table::new(Self::csv_columns());
        table.push(row);
        table
    }

    /// One row per stage, for humans.
    pub fn stage_table(&self) -> Table {
        let mut table = Table::new(["stage", "mean_ms", "median_ms", "p95_ms"]);
        for (name, s) in Self::STAGES.iter().zip(self.stages()) {
            table.push(vec![
                name.to_string(),
                format!("{:.3}", s.mean_ms),
                format!("{:.3}", s.median_ms),
                format!("{:.3}", s.p95_ms),
            ]);
        }
        table
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Times `model` on `img`: `warmup` untimed passes, then `iterations`
/// timed dual-layer passes, each followed by a timed first-layer-only pass.
pub fn bench_model(
    model: &DlkpnModel,
    img: &ImageBuffer,
    iterations: usize,
    warmup: usize,
) -> anyhow::Result<BenchReport> {
    if iterations == 0 {
        return Err(usage("--iterations must be at least 1"));
    }
    for _ in 0..warmup {
        let mid = kpn_forward(&model.layer1, img)?.restored;
        kpn_forward(&model.layer2, &mid)?;
    }
    let (mut l1, mut l2, mut total, mut single) = (vec![], vec![], vec![], vec![]);
    for _ in 0..iterations {
        let t0 = Instant::now();
        let mid = kpn_forward(&model.layer1, img)?.restored;
        let t1 = Instant::now();
        std::hint::black_box(kpn_forward(&model.layer2, &mid)?);
        l1.push((t1 - t0).as_secs_f64() * 1e3);
        l2.push(elapsed_ms(t1));
        total.push(elapsed_ms(t0));

        let t = Instant::now();
        std::hint::black_box(kpn_forward(&model.layer1, img)?);
        single.push(elapsed_ms(t));
    }
    Ok(BenchReport {
        width: img.width(),
        height: img.height(),
        iterations,
        warmup,
        threads: rayon::current_num_threads(),
        layer1: LatencyStats::from_samples(&l1),
        layer2: LatencyStats::from_samples(&l2),
        total: LatencyStats::from_samples(&total),
        single_layer: LatencyStats::from_samples(&single),
    })
}

pub fn cmd_bench(
    checkpoint: &Path,
    image: &Path,
    iterations: usize,
    warmup: usize,
) -> anyhow::Result<BenchReport> {
    let model = load_checkpoint(checkpoint)?;
    let img = load_image(image)?;
    bench_model(&model, &img, iterations, warmup)
}
