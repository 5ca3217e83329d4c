//! Standalone SVG figures and summary tables for a finished run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fairrel_core::desiderata::{audit_consistency, ScoreKind};
use fairrel_core::format_sig;
use fairrel_core::metrics::normalize01;

use crate::compare::Summary;
use crate::error::RunError;
use crate::layout::*;
use crate::run::{audit_inputs, load_seeds, SeedData};

pub const DEFAULT_BINS: usize = 50;
pub const TABLES_DIR: &str = "tables";

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD_L: f64 = 70.0;
const PAD_R: f64 = 20.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Plot area with linear axes.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| {
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        Frame {
            x: widen(x),
            y: widen(y),
        }
    }

    fn px(&self, v: f64) -> f64 {
        PAD_L + (v - self.x.0) / (self.x.1 - self.x.0) * (W - PAD_L - PAD_R)
    }

    fn py(&self, v: f64) -> f64 {
        H - PAD_B - (v - self.y.0) / (self.y.1 - self.y.0) * (H - PAD_T - PAD_B)
    }

    /// SVG header, title, axes, y ticks and axis labels.
    fn open(&self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
             viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
            W / 2.0,
            escape(title)
        );
        let (x0, x1, y0, y1) = (PAD_L, W - PAD_R, PAD_T, H - PAD_B);
        let _ = writeln!(
            s,
            "<path d=\"M{x0},{y0} L{x0},{y1} L{x1},{y1}\" fill=\"none\" stroke=\"black\"/>"
        );
        for i in 0..=4 {
            let v = self.y.0 + (self.y.1 - self.y.0) * i as f64 / 4.0;
            let y = self.py(v);
            let _ = writeln!(
                s,
                "<line x1=\"{}\" y1=\"{y:.1}\" x2=\"{x0}\" y2=\"{y:.1}\" stroke=\"black\"/>\
                 <text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
                x0 - 4.0,
                x0 - 7.0,
                y + 4.0,
                format_sig(v, 3)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
            (x0 + x1) / 2.0,
            H - 12.0,
            escape(xlabel),
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(ylabel)
        );
        s
    }

    fn x_ticks(&self, s: &mut String, ticks: &[(f64, String)]) {
        let y = H - PAD_B;
        for (v, label) in ticks {
            let x = self.px(*v);
            let _ = writeln!(
                s,
                "<line x1=\"{x:.1}\" y1=\"{y}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"black\"/>\
                 <text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                y + 4.0,
                y + 18.0,
                escape(label)
            );
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn legend(s: &mut String, entries: &[(&str, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = PAD_T + 8.0 + 16.0 * i as f64;
        let x = W - PAD_R - 150.0;
        let _ = writeln!(
            s,
            "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\
             <text x=\"{}\" y=\"{y}\" dominant-baseline=\"middle\">{}</text>",
            y - 5.0,
            x + 15.0,
            escape(label)
        );
    }
}

/// Five-number summary used for a box: quartiles by linear interpolation,
/// whiskers at the extremes.
fn five_numbers(values: &[f64]) -> [f64; 5] {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| fairrel_core::dataio::quantile_sorted(&v, p);
    [v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]]
}

/// One box per labelled sample. Empty samples are skipped.
pub fn boxplot_svg(samples: &[(String, Vec<f64>)], title: &str, xlabel: &str, ylabel: &str) -> String {
    let samples: Vec<&(String, Vec<f64>)> = samples.iter().filter(|(_, v)| !v.is_empty()).collect();
    let y = range(samples.iter().flat_map(|(_, v)| v.iter().copied()));
    let f = Frame::new((0.0, samples.len() as f64), if y.0.is_finite() { y } else { (0.0, 1.0) });
    let mut s = f.open(title, xlabel, ylabel);
    let ticks: Vec<(f64, String)> = samples
        .iter()
        .enumerate()
        .map(|(i, (l, _))| (i as f64 + 0.5, l.clone()))
        .collect();
    f.x_ticks(&mut s, &ticks);
    let half = 0.3 * (f.px(1.0) - f.px(0.0));
    for (i, (_, v)) in samples.iter().enumerate() {
        let [lo, q1, med, q3, hi] = five_numbers(v);
        let cx = f.px(i as f64 + 0.5);
        let _ = writeln!(
            s,
            "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
             <rect class=\"box\" x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" \
             fill=\"{}\" fill-opacity=\"0.5\" stroke=\"black\"/>\n\
             <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-width=\"2\"/>",
            f.py(lo),
            f.py(hi),
            cx - half,
            f.py(q3),
            2.0 * half,
            (f.py(q1) - f.py(q3)).max(0.5),
            PALETTE[0],
            cx - half,
            f.py(med),
            cx + half,
            f.py(med)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// A named polyline; `dashed` for reference lines.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

pub fn lines_svg(series: &[Series], title: &str, xlabel: &str, ylabel: &str) -> String {
    let pts = || series.iter().flat_map(|s| s.points.iter().copied());
    let x = range(pts().map(|p| p.0));
    let y = range(pts().map(|p| p.1));
    let ok = |r: (f64, f64)| if r.0.is_finite() { r } else { (0.0, 1.0) };
    let f = Frame::new(ok(x), (ok(y).0.min(0.0), ok(y).1));
    let mut s = f.open(title, xlabel, ylabel);
    let ticks: Vec<(f64, String)> = (0..=4)
        .map(|i| {
            let v = f.x.0 + (f.x.1 - f.x.0) * i as f64 / 4.0;
            (v, format_sig(v, 3))
        })
        .collect();
    f.x_ticks(&mut s, &ticks);
    let mut entries = Vec::new();
    for (i, se) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = se
            .points
            .iter()
            .map(|&(a, b)| format!("{:.1},{:.1}", f.px(a), f.py(b)))
            .collect();
        let dash = if se.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            s,
            "<polyline class=\"series\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>",
            d.join(" ")
        );
        entries.push((se.label.as_str(), color));
    }
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    s
}

/// Counts of `values` in `bins` equal-width bins over `[lo, hi]`; the top
/// edge belongs to the last bin.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        if v.is_finite() && (lo..=hi).contains(&v) {
            let b = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
    }
    counts
}

/// Overlaid histograms on `[0, 1]`, as densities.
pub fn histogram_svg(samples: &[(&str, &[f64])], bins: usize, title: &str) -> String {
    let bins = bins.max(1);
    let hists: Vec<Vec<f64>> = samples
        .iter()
        .map(|(_, v)| {
            let n = v.len().max(1) as f64;
            histogram(v, bins, 0.0, 1.0)
                .into_iter()
                .map(|c| c as f64 / n)
                .collect()
        })
        .collect();
    let top = hists.iter().flatten().copied().fold(0.0, f64::max);
    let f = Frame::new((0.0, 1.0), (0.0, top.max(1e-9)));
    let mut s = f.open(title, "normalized relevance", "share of items");
    let ticks: Vec<(f64, String)> = (0..=4)
        .map(|i| (i as f64 / 4.0, format_sig(i as f64 / 4.0, 2)))
        .collect();
    f.x_ticks(&mut s, &ticks);
    let bw = 1.0 / bins as f64;
    let mut entries = Vec::new();
    for (j, h) in hists.iter().enumerate() {
        let color = PALETTE[j % PALETTE.len()];
        for (b, &v) in h.iter().enumerate() {
            if v > 0.0 {
                let x0 = f.px(b as f64 * bw);
                let x1 = f.px((b + 1) as f64 * bw);
                let _ = writeln!(
                    s,
                    "<rect class=\"bin\" x=\"{x0:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" \
                     fill=\"{color}\" fill-opacity=\"0.45\"/>",
                    f.py(v),
                    (x1 - x0).max(0.5),
                    f.py(0.0) - f.py(v)
                );
            }
        }
        entries.push((samples[j].0, color));
    }
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    s
}

/// Files `render` needs, relative to the run directory.
pub fn expected_files(run: &Path) -> Result<Vec<String>, RunError> {
    let mut files = vec![CONFIG_FILE.to_string(), FAIRNESS_FILE.to_string()];
    if let Ok(cfg) = read_config(run) {
        for &s in &cfg.seeds {
            let dir = format!("seed_{s}");
            files.push(format!("{dir}/{SUMMARY_FILE}"));
            files.push(format!("{dir}/{VAL_LOGITS_FILE}"));
            match read_summary(run, s).ok().and_then(|x| x.best_iteration) {
                Some(b) => files.push(format!("{dir}/{}", predictions_file(b))),
                None => files.push(format!("{dir}/predictions_<best>.csv")),
            }
        }
    }
    Ok(files)
}

fn missing_files(run: &Path) -> Result<Vec<String>, RunError> {
    Ok(expected_files(run)?
        .into_iter()
        .filter(|f| !run.join(f).is_file())
        .collect())
}

fn pooled_by_grade(seeds: &[SeedData], kind: ScoreKind) -> Vec<(String, Vec<f64>)> {
    let mut by: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for d in seeds {
        for (&g, &v) in d.predictions.grade.iter().zip(d.scores(kind)) {
            by.entry(g).or_default().push(v);
        }
    }
    by.into_iter().map(|(g, v)| (format!("grade {g}"), v)).collect()
}

/// Mean ± sd across seeds per (metric, source), from `fairness.csv`.
pub fn fairness_summary(rows: &[FairnessRow]) -> Vec<(String, String, Summary)> {
    let mut by: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = r.value {
            by.entry((r.metric.clone(), r.source.clone())).or_default().push(v);
        }
    }
    by.into_iter()
        .map(|((m, s), v)| (m, s, Summary::of(&v)))
        .collect()
}

/// Writes `plots/*.svg` and `tables/*` for a run and returns their paths.
pub fn render(run: &Path, bins: usize) -> Result<Vec<PathBuf>, RunError> {
    let missing = missing_files(run)?;
    if !missing.is_empty() {
        return Err(RunError::Missing {
            dir: run.to_path_buf(),
            files: missing,
        });
    }
    let cfg = read_config(run)?;
    let seeds = load_seeds(run, &cfg.seeds)?;
    let mut written = Vec::new();
    let mut emit = |rel: &str, text: String| -> Result<(), RunError> {
        let p = run.join(rel);
        write_text(&p, &text)?;
        written.push(p);
        Ok(())
    };

    emit(
        &format!("{PLOTS_DIR}/scores_by_grade.svg"),
        boxplot_svg(
            &pooled_by_grade(&seeds, ScoreKind::Softmax),
            &format!("{}: predicted score by true grade", cfg.name),
            "true grade",
            "softmax score",
        ),
    )?;

    let inputs = audit_inputs(&seeds, &cfg)?;
    if let Ok(c) = audit_consistency(&inputs) {
        let mut series: Vec<Series> = inputs
            .runs
            .iter()
            .enumerate()
            .map(|(j, r)| Series {
                label: format!("seed {}", r.seed),
                points: c.curve.iter().map(|p| (p.iteration as f64, p.per_seed[j])).collect(),
                dashed: false,
            })
            .collect();
        series.truncate(PALETTE.len() - 2);
        series.push(Series {
            label: "mean".into(),
            points: c.curve.iter().map(|p| (p.iteration as f64, p.mean)).collect(),
            dashed: false,
        });
        let xs = range(c.curve.iter().map(|p| p.iteration as f64));
        series.push(Series {
            label: format!("epsilon = {}", format_sig(c.epsilon, 3)),
            points: vec![(xs.0, c.epsilon), (xs.1, c.epsilon)],
            dashed: true,
        });
        emit(
            &format!("{PLOTS_DIR}/consistency.svg"),
            lines_svg(&series, &format!("{}: S_n by checkpoint", cfg.name), "iteration", "S_n"),
        )?;
    }

    if let Some(first) = seeds.first() {
        let n = first.predictions.len();
        let mut mean = vec![0.0; n];
        for d in &seeds {
            for (m, v) in mean.iter_mut().zip(d.scores(cfg.score)) {
                *m += v / seeds.len() as f64;
            }
        }
        let truth = normalize01(&crate::run::true_relevance(&first.predictions.grade));
        let pred = normalize01(&mean);
        emit(
            &format!("{PLOTS_DIR}/relevance_histogram.svg"),
            histogram_svg(
                &[("true", &truth), ("predicted", &pred)],
                bins,
                &format!("{}: true vs predicted relevance", cfg.name),
            ),
        )?;
    }

    let summary = fairness_summary(&read_fairness(&run.join(FAIRNESS_FILE))?);
    let csv_rows: Vec<Vec<String>> = summary
        .iter()
        .map(|(m, s, x)| vec![m.clone(), s.clone(), x.n.to_string(), fmt(x.mean), fmt(x.sd)])
        .collect();
    emit(
        &format!("{TABLES_DIR}/fairness_summary.csv"),
        csv_text(&["metric", "source", "n", "mean", "sd"], &csv_rows),
    )?;
    let mut text = format!("{:<22} {:<10} {:>4} {:>18}\n", "metric", "source", "n", "mean ± sd");
    for (m, s, x) in &summary {
        let _ = writeln!(text, "{m:<22} {s:<10} {:>4} {:>18}", x.n, x.display());
    }
    emit(&format!("{TABLES_DIR}/fairness_summary.txt"), text)?;
    if run.join(DESIDERATA_TXT).is_file() {
        let t = std::fs::read_to_string(run.join(DESIDERATA_TXT))
            .map_err(|e| RunError::io(&run.join(DESIDERATA_TXT), e))?;
        emit(&format!("{TABLES_DIR}/desiderata.txt"), t)?;
    }
    Ok(written)
}
