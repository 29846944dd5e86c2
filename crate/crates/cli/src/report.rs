//! Cross-method comparison: minimum errors, time-to-threshold matrix and
//! speedups, computed on seed-averaged curves.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sgm_core::pde::Trajectory;
use sgm_core::stats::{mean, std_dev};

use crate::svg::{line_plot, Series};
use crate::{CliError, Result};

/// All runs of one method; the flag marks diverged runs.
#[derive(Clone, Debug)]
pub struct MethodRuns {
    pub name: String,
    pub runs: Vec<(Trajectory, bool)>,
}

/// Seed-averaged validation curve.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanCurve {
    pub iterations: Vec<u64>,
    pub wall_time_s: Vec<f64>,
    /// `errors[o][row]`
    pub errors: Vec<Vec<f64>>,
}

impl MeanCurve {
    /// Average of completed runs row by row, truncated to the shortest run.
    pub fn from_runs(runs: &[&Trajectory]) -> Option<Self> {
        let first = runs.first()?;
        let len = runs.iter().map(|t| t.rows.len()).min()?;
        let n_out = first.outputs.len();
        let iterations: Vec<u64> = first.rows[..len].iter().map(|r| r.iteration).collect();
        let wall_time_s = (0..len).map(|i| mean(&runs.iter().map(|t| t.rows[i].wall_time_s).collect::<Vec<_>>())).collect();
        let errors = (0..n_out)
            .map(|o| (0..len).map(|i| mean(&runs.iter().map(|t| t.rows[i].errors[o]).collect::<Vec<_>>())).collect())
            .collect();
        Some(Self { iterations, wall_time_s, errors })
    }

    pub fn min_error(&self, o: usize) -> f64 {
        self.errors[o].iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// First row whose error on output `o` is at or below `threshold`.
    pub fn first_reaching(&self, o: usize, threshold: f64) -> Option<(u64, f64)> {
        let i = self.errors[o].iter().position(|&e| e <= threshold)?;
        Some((self.iterations[i], self.wall_time_s[i]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinErrorRow {
    pub method: String,
    pub output: String,
    /// Mean over completed seeds of each run's minimum error.
    pub mean: f64,
    /// `None` for a single completed seed.
    pub std: Option<f64>,
    pub curve_min: f64,
    pub runs: usize,
    pub dnf_runs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Reached,
    Unreached,
    Dnf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeCell {
    pub method: String,
    /// The method whose best error sets the threshold.
    pub target: String,
    pub output: String,
    pub threshold: f64,
    pub wall_time_s: Option<f64>,
    pub iteration: Option<u64>,
    pub status: CellStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub method: String,
    pub baseline: String,
    pub output: String,
    /// Best error of the worst-performing method.
    pub threshold: f64,
    pub baseline_wall_time_s: Option<f64>,
    pub method_wall_time_s: Option<f64>,
    pub speedup: Option<f64>,
    pub baseline_iteration: Option<u64>,
    pub method_iteration: Option<u64>,
    pub iteration_speedup: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub methods: Vec<String>,
    pub outputs: Vec<String>,
    pub seeds: usize,
    pub min_errors: Vec<MinErrorRow>,
    pub times: Vec<TimeCell>,
    pub speedups: Vec<SpeedupRow>,
}

fn completed(m: &MethodRuns) -> Vec<&Trajectory> {
    m.runs.iter().filter(|(_, d)| !d).map(|(t, _)| t).collect()
}

pub fn build_report(methods: &[MethodRuns]) -> Result<BenchReport> {
    let outputs = methods
        .iter()
        .flat_map(|m| m.runs.first())
        .map(|(t, _)| t.outputs.clone())
        .next()
        .ok_or_else(|| CliError::Config(vec!["bench produced no runs".into()]))?;
    if methods.iter().flat_map(|m| &m.runs).any(|(t, _)| t.outputs != outputs) {
        return Err(CliError::Config(vec!["runs disagree on their output columns".into()]));
    }
    let curves: Vec<Option<MeanCurve>> = methods.iter().map(|m| MeanCurve::from_runs(&completed(m))).collect();
    let dnf: Vec<bool> = methods.iter().map(|m| m.runs.iter().any(|(_, d)| *d)).collect();

    let mut min_errors = Vec::new();
    for (mi, m) in methods.iter().enumerate() {
        let done = completed(m);
        for (o, name) in outputs.iter().enumerate() {
            let mins: Vec<f64> = done.iter().map(|t| t.min_errors()[o]).collect();
            min_errors.push(MinErrorRow {
                method: m.name.clone(),
                output: name.clone(),
                mean: if mins.is_empty() { f64::NAN } else { mean(&mins) },
                std: (mins.len() > 1).then(|| std_dev(&mins)),
                curve_min: curves[mi].as_ref().map_or(f64::NAN, |c| c.min_error(o)),
                runs: m.runs.len(),
                dnf_runs: m.runs.len() - done.len(),
            });
        }
    }

    let cell = |mi: usize, o: usize, threshold: f64| -> (Option<f64>, Option<u64>, CellStatus) {
        if dnf[mi] {
            return (None, None, CellStatus::Dnf);
        }
        match curves[mi].as_ref().and_then(|c| c.first_reaching(o, threshold)) {
            Some((it, w)) => (Some(w), Some(it), CellStatus::Reached),
            None => (None, None, CellStatus::Unreached),
        }
    };

    let mut times = Vec::new();
    for (mi, m) in methods.iter().enumerate() {
        for (ti, target) in methods.iter().enumerate() {
            for (o, name) in outputs.iter().enumerate() {
                let threshold = curves[ti].as_ref().map_or(f64::NAN, |c| c.min_error(o));
                let (w, it, status) =
                    if threshold.is_nan() { (None, None, CellStatus::Unreached) } else { cell(mi, o, threshold) };
                times.push(TimeCell {
                    method: m.name.clone(),
                    target: target.name.clone(),
                    output: name.clone(),
                    threshold,
                    wall_time_s: w,
                    iteration: it,
                    status,
                });
            }
        }
    }

    let mut speedups = Vec::new();
    for (o, name) in outputs.iter().enumerate() {
        let threshold = curves.iter().flatten().map(|c| c.min_error(o)).fold(f64::NEG_INFINITY, f64::max);
        if !threshold.is_finite() {
            continue;
        }
        let (bw, bi, _) = cell(0, o, threshold);
        for (mi, m) in methods.iter().enumerate().skip(1) {
            let (w, it, _) = cell(mi, o, threshold);
            speedups.push(SpeedupRow {
                method: m.name.clone(),
                baseline: methods[0].name.clone(),
                output: name.clone(),
                threshold,
                baseline_wall_time_s: bw,
                method_wall_time_s: w,
                speedup: bw.zip(w).filter(|(_, w)| *w > 0.0).map(|(b, w)| b / w),
                baseline_iteration: bi,
                method_iteration: it,
                iteration_speedup: bi.zip(it).filter(|(_, i)| *i > 0).map(|(b, i)| b as f64 / i as f64),
            });
        }
    }

    Ok(BenchReport {
        methods: methods.iter().map(|m| m.name.clone()).collect(),
        outputs,
        seeds: methods.iter().map(|m| m.runs.len()).max().unwrap_or(0),
        min_errors,
        times,
        speedups,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl BenchReport {
    fn single_seed(&self) -> bool {
        self.min_errors.iter().all(|r| r.std.is_none())
    }

    pub fn min_errors_csv(&self) -> String {
        let single = self.single_seed();
        let mut s = String::from(if single {
            "method,output,min_error,curve_min,runs,dnf_runs\n"
        } else {
            "method,output,min_error_mean,min_error_std,curve_min,runs,dnf_runs\n"
        });
        for r in &self.min_errors {
            if single {
                let _ = writeln!(s, "{},{},{},{},{},{}", r.method, r.output, r.mean, r.curve_min, r.runs, r.dnf_runs);
            } else {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    r.method,
                    r.output,
                    r.mean,
                    opt(r.std),
                    r.curve_min,
                    r.runs,
                    r.dnf_runs
                );
            }
        }
        s
    }

    pub fn times_csv(&self) -> String {
        let mut s = String::from("method,target,output,threshold,wall_time_s,iteration,status\n");
        for c in &self.times {
            let status = match c.status {
                CellStatus::Reached => "reached",
                CellStatus::Unreached => "",
                CellStatus::Dnf => "DNF",
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{status}",
                c.method,
                c.target,
                c.output,
                c.threshold,
                opt(c.wall_time_s),
                opt(c.iteration)
            );
        }
        s
    }

    pub fn speedups_csv(&self) -> String {
        let mut s = String::from(
            "method,baseline,output,threshold,baseline_wall_time_s,method_wall_time_s,speedup,baseline_iteration,method_iteration,iteration_speedup\n",
        );
        for r in &self.speedups {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.baseline,
                r.output,
                r.threshold,
                opt(r.baseline_wall_time_s),
                opt(r.method_wall_time_s),
                opt(r.speedup),
                opt(r.baseline_iteration),
                opt(r.method_iteration),
                opt(r.iteration_speedup)
            );
        }
        s
    }

    /// Markdown summary with the time-to-threshold matrix; blank cells were
    /// never reached, DNF marks methods with a diverged run.
    pub fn markdown(&self) -> String {
        let single = self.single_seed();
        let mut s = format!("# Benchmark report\n\n{} seed(s) per method.\n\n## Minimum validation error\n\n", self.seeds);
        s.push_str("| method |");
        for o in &self.outputs {
            let _ = write!(s, " Min({o}) |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(self.outputs.len()));
        s.push('\n');
        for m in &self.methods {
            let _ = write!(s, "| {m} |");
            for r in self.min_errors.iter().filter(|r| &r.method == m) {
                match (single, r.std) {
                    (false, Some(sd)) => {
                        let _ = write!(s, " {:.4e} ± {:.1e} |", r.mean, sd);
                    }
                    _ => {
                        let _ = write!(s, " {:.4e} |", r.mean);
                    }
                }
            }
            s.push('\n');
        }
        s.push_str("\n## Wall time (s) to reach each method's best error\n\n| method |");
        let cols: Vec<(&String, &String)> = self.methods.iter().flat_map(|t| self.outputs.iter().map(move |o| (t, o))).collect();
        for (t, o) in &cols {
            let _ = write!(s, " T({t}_{o}) |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(cols.len()));
        s.push('\n');
        for m in &self.methods {
            let _ = write!(s, "| {m} |");
            for (t, o) in &cols {
                let c = self.times.iter().find(|c| &c.method == m && &c.target == *t && &c.output == *o);
                let text = match c {
                    Some(TimeCell { status: CellStatus::Reached, wall_time_s: Some(w), .. }) => format!("{w:.2}"),
                    Some(TimeCell { status: CellStatus::Dnf, .. }) => "DNF".to_string(),
                    _ => String::new(),
                };
                let _ = write!(s, " {text} |");
            }
            s.push('\n');
        }
        if !self.speedups.is_empty() {
            s.push_str("\n## Speedup over the baseline at the worst method's best error\n\n");
            for r in &self.speedups {
                let text = match r.speedup {
                    Some(x) => format!("{x:.2}x in wall time"),
                    None => "not reached by both".to_string(),
                };
                let iters = r.iteration_speedup.map(|x| format!(", {x:.2}x in iterations")).unwrap_or_default();
                let _ = writeln!(
                    s,
                    "- {} vs {} on {} (threshold {:.4e}): {text}{iters}",
                    r.method, r.baseline, r.output, r.threshold
                );
            }
        }
        s
    }
}

/// Writes the CSVs, markdown, JSON and SVG plots under `dir`.
pub fn write_report(dir: &Path, report: &BenchReport, methods: &[MethodRuns]) -> Result<()> {
    let rdir = dir.join("report");
    fs::create_dir_all(rdir.join("curves"))?;
    fs::create_dir_all(rdir.join("plots"))?;
    fs::write(rdir.join("min_errors.csv"), report.min_errors_csv())?;
    fs::write(rdir.join("time_to_threshold.csv"), report.times_csv())?;
    fs::write(rdir.join("speedups.csv"), report.speedups_csv())?;
    fs::write(rdir.join("report.md"), report.markdown())?;
    fs::write(rdir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    let curves: Vec<(String, MeanCurve)> = methods
        .iter()
        .filter_map(|m| MeanCurve::from_runs(&completed(m)).map(|c| (m.name.clone(), c)))
        .collect();
    for (name, c) in &curves {
        let mut s = String::from("iteration,wall_time_s");
        for o in &report.outputs {
            let _ = write!(s, ",err_{o}");
        }
        s.push('\n');
        for i in 0..c.iterations.len() {
            let _ = write!(s, "{},{}", c.iterations[i], c.wall_time_s[i]);
            for e in &c.errors {
                let _ = write!(s, ",{}", e[i]);
            }
            s.push('\n');
        }
        fs::write(rdir.join("curves").join(format!("{name}.csv")), s)?;
    }
    for (o, out) in report.outputs.iter().enumerate() {
        for (axis, label) in [("wall", "wall time (s)"), ("iter", "iteration")] {
            let series: Vec<Series> = curves
                .iter()
                .map(|(name, c)| Series {
                    name: name.clone(),
                    points: c
                        .errors[o]
                        .iter()
                        .enumerate()
                        .map(|(i, &e)| (if axis == "wall" { c.wall_time_s[i] } else { c.iterations[i] as f64 }, e))
                        .collect(),
                })
                .collect();
            let svg = line_plot(&format!("relative L2 error in {out}"), label, &series);
            fs::write(rdir.join("plots").join(format!("err_{out}_vs_{axis}.svg")), svg)?;
        }
    }
    Ok(())
}
