//! Per-block, per-class, per-image and per-scale views of a trained policy.

use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use skiplab_core::data::{ChannelStats, LabeledDataset};
use skiplab_core::network::SkipNet;
use skiplab_core::training::{evaluate, EvalOptions, Evaluation};

use crate::error::{CliError, Result};
use crate::report::{write_csv, write_text};
use crate::svg;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Analysis {
    SkipRatio,
    PerClass,
    EasyHard,
    MultiScale,
}

impl FromStr for Analysis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skip-ratio" => Ok(Analysis::SkipRatio),
            "per-class" => Ok(Analysis::PerClass),
            "easy-hard" => Ok(Analysis::EasyHard),
            "multi-scale" => Ok(Analysis::MultiScale),
            other => Err(CliError::Usage(format!(
                "unknown analysis {other:?}; expected skip-ratio, per-class, easy-hard or multi-scale"
            ))),
        }
    }
}

impl Analysis {
    /// Stem of the files the analysis writes.
    pub fn file_stem(self) -> &'static str {
        match self {
            Analysis::SkipRatio => "skip_ratio",
            Analysis::PerClass => "per_class",
            Analysis::EasyHard => "easy_hard",
            Analysis::MultiScale => "multi_scale",
        }
    }
}

pub const DEFAULT_SCALES: [f64; 5] = [0.5, 0.75, 1.0, 1.25, 1.5];

fn decisions(ev: &Evaluation) -> Result<&Vec<Vec<bool>>> {
    ev.trace
        .decisions
        .as_ref()
        .ok_or_else(|| CliError::Usage("analysis needs hard execution decisions".into()))
}

fn skipped_counts(ev: &Evaluation) -> Result<Vec<usize>> {
    Ok(decisions(ev)?.iter().map(|d| d.iter().filter(|&&g| !g).count()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkipRatioRow {
    pub block: usize,
    pub stage: usize,
    pub skip_ratio: f64,
}

/// Fraction of images skipping each block.
pub fn skip_ratio(ev: &Evaluation, n_per_stage: usize) -> Result<Vec<SkipRatioRow>> {
    let d = decisions(ev)?;
    let blocks = d.first().map_or(0, |r| r.len());
    Ok((0..blocks)
        .map(|i| SkipRatioRow {
            block: i,
            stage: i / n_per_stage,
            skip_ratio: d.iter().filter(|r| !r[i]).count() as f64 / d.len() as f64,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerClassRow {
    pub class: usize,
    pub name: String,
    pub count: usize,
    pub accuracy: f64,
    pub mean_skipped: f64,
    pub median_skipped: f64,
    /// Sample skewness of the skipped-block counts within the class.
    pub skew_skipped: f64,
}

pub fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Linear-interpolated quantile, `q ∈ [0, 1]`.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

pub fn skewness(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.is_empty() {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    if m2 <= 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

pub fn per_class(ev: &Evaluation, data: &LabeledDataset) -> Result<Vec<PerClassRow>> {
    let skipped = skipped_counts(ev)?;
    Ok((0..data.num_classes())
        .map(|c| {
            let idx: Vec<usize> = (0..ev.labels.len()).filter(|&i| ev.labels[i] == c).collect();
            let mut s: Vec<f64> = idx.iter().map(|&i| skipped[i] as f64).collect();
            let correct = idx.iter().filter(|&&i| ev.predictions[i] == c).count();
            let n = idx.len();
            PerClassRow {
                class: c,
                name: data.class_names.as_ref().and_then(|v| v.get(c).cloned()).unwrap_or_else(|| c.to_string()),
                count: n,
                accuracy: if n == 0 { f64::NAN } else { correct as f64 / n as f64 },
                mean_skipped: if n == 0 { f64::NAN } else { s.iter().sum::<f64>() / n as f64 },
                skew_skipped: skewness(&s),
                median_skipped: median(&mut s),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EasyHardRow {
    pub kind: &'static str,
    pub rank: usize,
    pub index: usize,
    pub label: usize,
    pub prediction: usize,
    pub skipped_blocks: usize,
}

/// The `k` most- and `k` least-skipped images; ties go to the lower index.
pub fn easy_hard(ev: &Evaluation, k: usize) -> Result<Vec<EasyHardRow>> {
    let skipped = skipped_counts(ev)?;
    let mut most: Vec<usize> = (0..skipped.len()).collect();
    most.sort_by_key(|&i| (std::cmp::Reverse(skipped[i]), i));
    let mut least: Vec<usize> = (0..skipped.len()).collect();
    least.sort_by_key(|&i| (skipped[i], i));
    let row = |kind, rank, i: usize| EasyHardRow {
        kind,
        rank,
        index: i,
        label: ev.labels[i],
        prediction: ev.predictions[i],
        skipped_blocks: skipped[i],
    };
    let mut rows: Vec<EasyHardRow> = most.iter().take(k).enumerate().map(|(r, &i)| row("most_skipped", r, i)).collect();
    rows.extend(least.iter().take(k).enumerate().map(|(r, &i)| row("least_skipped", r, i)));
    Ok(rows)
}

/// Binary PPM (3 channels) or PGM (1 channel) from a planar C×H×W image.
pub fn netpbm(img: &[u8], shape: (usize, usize, usize)) -> Result<Vec<u8>> {
    let (c, h, w) = shape;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(CliError::Usage(format!("cannot write a {c}-channel image as PPM"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for p in 0..h * w {
        for ch in 0..c {
            out.push(img[ch * h * w + p]);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleRow {
    pub scale: f64,
    pub height: usize,
    pub width: usize,
    pub accuracy: f64,
    pub mean_exec_blocks: f64,
    /// Mean executed blocks divided by the mean at scale 1.
    pub relative_exec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleHistRow {
    pub scale: f64,
    pub executed_blocks: usize,
    pub fraction: f64,
}

pub fn multi_scale(
    net: &SkipNet<f64>,
    data: &LabeledDataset,
    stats: &ChannelStats,
    opts: &EvalOptions,
    scales: &[f64],
) -> Result<(Vec<ScaleRow>, Vec<ScaleHistRow>)> {
    let base = evaluate(net, data, stats, &EvalOptions { scale: 1.0, ..opts.clone() })?.trace.mean_executed();
    let (_, h, w) = data.shape();
    let mut rows = Vec::new();
    let mut hist = Vec::new();
    let divisor = 1usize << (net.config().group_widths.len() - 1);
    for &s in scales {
        let (sh, sw) = (skiplab_core::data::scaled_len(h, s), skiplab_core::data::scaled_len(w, s));
        if sh == 0 || sw == 0 || sh % divisor != 0 || sw % divisor != 0 {
            eprintln!("[analyze] scale {s} gives {sh}x{sw}, not a multiple of {divisor}; skipped");
            continue;
        }
        let ev = evaluate(net, data, stats, &EvalOptions { scale: s, ..opts.clone() })?;
        let mean = ev.trace.mean_executed();
        rows.push(ScaleRow {
            scale: s,
            height: sh,
            width: sw,
            accuracy: ev.accuracy,
            mean_exec_blocks: mean,
            relative_exec: if base > 0.0 { mean / base } else { f64::NAN },
        });
        let n = ev.trace.executed.len() as f64;
        for b in 0..=net.num_blocks() {
            let count = ev.trace.executed.iter().filter(|&&e| e == b).count();
            hist.push(ScaleHistRow { scale: s, executed_blocks: b, fraction: count as f64 / n });
        }
    }
    Ok((rows, hist))
}

/// Runs `which` and writes `<name>.csv` and `<name>.svg` under `dir`.
#[allow(clippy::too_many_arguments)]
pub fn run(
    which: Analysis,
    net: &SkipNet<f64>,
    data: &LabeledDataset,
    stats: &ChannelStats,
    opts: &EvalOptions,
    dir: &Path,
    k: usize,
    dump_ppm: bool,
    scales: &[f64],
) -> Result<()> {
    match which {
        Analysis::MultiScale => {
            let (rows, hist) = multi_scale(net, data, stats, opts, scales)?;
            write_csv(&dir.join("multi_scale.csv"), &rows)?;
            write_csv(&dir.join("multi_scale_hist.csv"), &hist)?;
            let series = rows
                .iter()
                .map(|r| {
                    let pts = hist.iter().filter(|hr| hr.scale == r.scale).map(|hr| (hr.executed_blocks as f64, hr.fraction)).collect();
                    (format!("scale {}", r.scale), pts)
                })
                .collect::<Vec<_>>();
            write_text(
                &dir.join("multi_scale.svg"),
                &svg::line_plot("Executed blocks by input scale", "executed blocks", "fraction of images", &series),
            )
        }
        _ => {
            let ev = evaluate(net, data, stats, opts)?;
            match which {
                Analysis::SkipRatio => {
                    let rows = skip_ratio(&ev, net.config().n)?;
                    write_csv(&dir.join("skip_ratio.csv"), &rows)?;
                    let labels: Vec<String> = rows.iter().map(|r| r.block.to_string()).collect();
                    let values: Vec<f64> = rows.iter().map(|r| r.skip_ratio).collect();
                    let groups: Vec<usize> = rows.iter().map(|r| r.stage).collect();
                    write_text(
                        &dir.join("skip_ratio.svg"),
                        &svg::bar_plot("Skip ratio per block (colour = stage)", "skip ratio", &labels, &values, &groups),
                    )
                }
                Analysis::PerClass => {
                    let rows = per_class(&ev, data)?;
                    write_csv(&dir.join("per_class.csv"), &rows)?;
                    let pts: Vec<(f64, f64, String)> =
                        rows.iter().filter(|r| r.count > 0).map(|r| (r.mean_skipped, r.accuracy, r.name.clone())).collect();
                    write_text(
                        &dir.join("per_class.svg"),
                        &svg::scatter_plot("Per-class accuracy vs skipped blocks", "mean skipped blocks", "accuracy", &pts),
                    )
                }
                Analysis::EasyHard => {
                    let rows = easy_hard(&ev, k)?;
                    write_csv(&dir.join("easy_hard.csv"), &rows)?;
                    if dump_ppm {
                        let ppm = dir.join("easy_hard_images");
                        std::fs::create_dir_all(&ppm).map_err(|e| CliError::io(&ppm, e))?;
                        let ext = if data.shape().0 == 1 { "pgm" } else { "ppm" };
                        for r in &rows {
                            let path = ppm.join(format!("{}_{:03}_{}.{ext}", r.kind, r.rank, r.index));
                            let bytes = netpbm(data.image(r.index), data.shape())?;
                            std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
                        }
                    }
                    let pts: Vec<(f64, f64, String)> =
                        rows.iter().map(|r| (r.rank as f64, r.skipped_blocks as f64, r.kind.chars().next().unwrap().to_string())).collect();
                    write_text(
                        &dir.join("easy_hard.svg"),
                        &svg::scatter_plot("Most (m) and least (l) skipped images", "rank", "skipped blocks", &pts),
                    )
                }
                Analysis::MultiScale => unreachable!("handled above"),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_statistics() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.75), 7.5);
        assert_eq!(skewness(&[1.0, 1.0, 1.0]), 0.0);
        assert!(skewness(&[0.0, 0.0, 0.0, 10.0]) > 0.0);
        assert!((skewness(&[1.0, 2.0, 3.0])).abs() < 1e-15);
    }

    #[test]
    fn netpbm_interleaves_planes() {
        let img = [1u8, 2, 10, 20, 100, 200];
        let out = netpbm(&img, (3, 1, 2)).unwrap();
        assert_eq!(&out[..11], b"P6\n2 1\n255\n");
        assert_eq!(&out[11..], &[1, 10, 100, 2, 20, 200]);
    }

    #[test]
    fn unknown_analysis_named() {
        let err = "skip_ratio".parse::<Analysis>().unwrap_err();
        assert!(err.to_string().contains("skip_ratio"));
    }
}
