//! Subcommand implementations. Every function returns the files it wrote.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use frqmc::clickstats::{
    closely_spaced_fraction, cross_g2_histogram, g2_histogram, histogram_centers, rate, waiting_time,
    window_counts,
};
use frqmc::mastereq::{closed_form_g2_incoherent, spectrum_scan, CascadeSystem, TRUNCATION_TOLERANCE};
use frqmc::mcjump::{fmt_sig, generate_poisson_stream, run_ensemble, ClickStream, PreparedRun, DEFAULT_DT};
use frqmc::models::{CascadeConfig, DetectorConfig, Drive, SourceConfig};
use frqmc::reconstruct::{reconstruct_filtered, reconstruct_unfiltered, PhotonDistribution};
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::spec::{
    AnalysisSpec, ExperimentKind, ExperimentSpec, HistogramSpec, DEFAULT_CLOSELY_SPACED,
    DEFAULT_WAITING_RANGE,
};
use crate::{CliError, Context};

/// Top-level occupancy aimed for in theory curves; two-detector systems
/// that cannot reach it within the dimension cap fall back to the
/// simulator's tolerance.
pub const THEORY_TOLERANCE: f64 = 1e-8;

type Files = Result<Vec<PathBuf>, CliError>;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))
}

fn io<T>(r: std::io::Result<T>, path: &Path) -> Result<T, CliError> {
    r.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_table(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<(), CliError> {
    let file = io(fs::File::create(path), path)?;
    let mut w = BufWriter::new(file);
    io(writeln!(w, "{header}"), path)?;
    for r in rows {
        io(writeln!(w, "{}", r.join(",")), path)?;
    }
    io(w.flush(), path)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(frqmc::Error::from)?;
    io(fs::write(path, text), path)
}

fn grid_suffix(k: usize) -> String {
    if k == 0 {
        String::new()
    } else {
        format!("_{}", k + 1)
    }
}

/// Which correlation of a configuration a curve describes.
#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    /// Autocorrelation of the channel with this label.
    Auto(String),
    /// `xi1` first, `xi2` second.
    Cross,
}

/// Labels of the channels a run records, in channel order.
pub fn recorded_labels(cfg: &CascadeConfig) -> Vec<&'static str> {
    match cfg.detectors.len() {
        0 => vec!["source"],
        1 => vec!["xi"],
        _ => vec!["xi1", "xi2"],
    }
}

/// Steady state of a configuration, solved from a fixed starting truncation
/// so that every caller lands on the same system.
pub struct TheoryModel {
    pub system: CascadeSystem,
}

impl TheoryModel {
    pub fn new(cfg: &CascadeConfig) -> frqmc::Result<Self> {
        let mut cfg = cfg.clone();
        for d in &mut cfg.detectors {
            d.n_max = 2;
        }
        let system = match CascadeSystem::converged(&cfg, THEORY_TOLERANCE) {
            Err(frqmc::Error::TruncationTooSmall { .. }) => {
                CascadeSystem::converged(&cfg, TRUNCATION_TOLERANCE)?
            }
            r => r?,
        };
        Ok(Self { system })
    }

    pub fn curve(&self, obs: &Observable, taus: &[f64]) -> frqmc::Result<Vec<f64>> {
        let s = &self.system;
        let c = match obs {
            Observable::Cross => s.cross_g2(taus)?,
            Observable::Auto(l) => match l.as_str() {
                "xi" | "xi1" => s.g2(0, taus)?,
                "xi2" => s.g2(1, taus)?,
                "source" => s.source_g2(taus)?,
                other => {
                    return Err(frqmc::Error::InvalidConfig(format!(
                        "no theory for channel {other:?}"
                    )));
                }
            },
        };
        Ok(c.values)
    }
}

fn describe(cfg: &CascadeConfig) -> String {
    serde_json::to_string(cfg).unwrap_or_default()
}

fn curve_rows(taus: &[f64], values: &[f64], extra: Option<&[f64]>) -> Vec<Vec<String>> {
    taus.iter()
        .enumerate()
        .map(|(i, t)| {
            let mut r = vec![fmt_sig(*t), fmt_sig(values[i])];
            if let Some(e) = extra {
                r.push(fmt_sig(e[i]));
            }
            r
        })
        .collect()
}

/// `g²_Γ(0)` and `⟨ξ†ξ⟩` of one filter at each `(ω, Γ)`.
fn scan(src: &SourceConfig, chi: [f64; 4], omegas: &[f64], gammas: &[f64]) -> frqmc::Result<Vec<[f64; 4]>> {
    let cells: Vec<(f64, f64)> = omegas
        .iter()
        .flat_map(|&w| gammas.iter().map(move |&g| (w, g)))
        .collect();
    cells
        .par_iter()
        .map(|&(w, g)| {
            let cfg = CascadeConfig::single(*src, DetectorConfig::new(w, g, 2)).with_chi(chi);
            let m = TheoryModel::new(&cfg)?;
            Ok([w, g, m.system.gn_zero(0, 2)?, m.system.detector_population(0)])
        })
        .collect()
}

fn spectrum_rows(src: &SourceConfig, omegas: &[f64], gammas: &[f64]) -> frqmc::Result<Vec<Vec<String>>> {
    let cols = gammas
        .par_iter()
        .map(|&g| spectrum_scan(src, g, omegas))
        .collect::<frqmc::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (gi, g) in gammas.iter().enumerate() {
        for (wi, w) in omegas.iter().enumerate() {
            rows.push(vec![fmt_sig(*w), fmt_sig(*g), fmt_sig(cols[gi][wi])]);
        }
    }
    Ok(rows)
}

fn spectrum_gammas(spec: &ExperimentSpec) -> Vec<f64> {
    if !spec.theory.gamma_grid.is_empty() {
        return spec.theory.gamma_grid.clone();
    }
    let mut g: Vec<f64> = spec
        .runs
        .iter()
        .flat_map(|r| r.cascade.detectors.iter().map(|d| d.gamma))
        .collect();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

pub fn theory(spec: &ExperimentSpec) -> Files {
    let dir = spec.out_dir();
    create_dir(&dir)?;
    let mut files = Vec::new();
    let mut summary = Vec::new();
    let dt = spec.runs.first().and_then(|r| r.dt).unwrap_or(DEFAULT_DT);
    let grids = spec.analysis.histograms(dt, None, None);
    for r in &spec.runs {
        info!("theory for run {}", r.name);
        let model =
            TheoryModel::new(&r.cascade).context(|| format!("run {} ({})", r.name, describe(&r.cascade)))?;
        let labels = recorded_labels(&r.cascade);
        let mut observables: Vec<(String, Observable)> = labels
            .iter()
            .map(|l| {
                let prefix = if labels.len() == 1 {
                    r.name.clone()
                } else {
                    format!("{}_{l}", r.name)
                };
                (prefix, Observable::Auto(l.to_string()))
            })
            .collect();
        if labels.len() == 2 {
            observables.push((format!("{}_cross", r.name), Observable::Cross));
        }
        for (k, h) in grids.iter().enumerate() {
            let taus = histogram_centers(h.tau_max, h.bin_width);
            for (prefix, obs) in &observables {
                let values = model
                    .curve(obs, &taus)
                    .context(|| format!("run {} ({})", r.name, describe(&r.cascade)))?;
                let path = dir.join(format!("{prefix}_theory{}.csv", grid_suffix(k)));
                let closed: Option<Vec<f64>> = match (r.cascade.detectors.len(), r.cascade.source.drive) {
                    (0, Drive::Incoherent { pump }) => Some(
                        taus.iter()
                            .map(|t| closed_form_g2_incoherent(t.abs(), r.cascade.source.gamma_sigma, pump))
                            .collect(),
                    ),
                    _ => None,
                };
                let header = if closed.is_some() {
                    "tau,g2,closed_form"
                } else {
                    "tau,g2"
                };
                write_table(&path, header, &curve_rows(&taus, &values, closed.as_deref()))?;
                files.push(path);
            }
        }
        let s = &model.system;
        let nd = r.cascade.detectors.len();
        let g2_zero: Vec<f64> = if nd == 0 {
            model.curve(&Observable::Auto("source".into()), &[0.0])?
        } else {
            (0..nd).map(|i| s.gn_zero(i, 2)).collect::<frqmc::Result<_>>()?
        };
        summary.push(json!({
            "run": r.name,
            "windows": r.cascade.detectors.iter().map(|d| d.omega_xi).collect::<Vec<_>>(),
            "gammas": r.cascade.detectors.iter().map(|d| d.gamma).collect::<Vec<_>>(),
            "n_max": s.cfg.detectors.iter().map(|d| d.n_max).collect::<Vec<_>>(),
            "source_population": s.source_population(),
            "detector_populations": (0..nd).map(|i| s.detector_population(i)).collect::<Vec<_>>(),
            "g2_zero": g2_zero,
            "channel_rates": s.channel_rates()?,
        }));
    }
    let omegas = &spec.theory.omega_grid;
    if let Some(src) = spec.source() {
        if spec.kind == ExperimentKind::FilteredScan {
            let chi = spec
                .runs
                .first()
                .map(|r| r.cascade.chi)
                .unwrap_or_else(frqmc::models::default_chi);
            let gammas = spectrum_gammas(spec);
            let cells = scan(&src, chi, omegas, &gammas).context(|| "filtered scan".into())?;
            let rows: Vec<Vec<String>> = cells
                .iter()
                .map(|c| c.iter().map(|x| fmt_sig(*x)).collect())
                .collect();
            let path = dir.join("scan.csv");
            write_table(&path, "omega,gamma,g2_0,population", &rows)?;
            files.push(path);
            if let Some((tmax, step)) = spec.theory.map {
                let n = (tmax / step + 1e-9).floor() as usize;
                let taus: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
                let cells: Vec<(f64, f64)> = omegas
                    .iter()
                    .flat_map(|&w| gammas.iter().map(move |&g| (w, g)))
                    .collect();
                let curves = cells
                    .par_iter()
                    .map(|&(w, g)| {
                        let cfg = CascadeConfig::single(src, DetectorConfig::new(w, g, 2)).with_chi(chi);
                        TheoryModel::new(&cfg)?.curve(&Observable::Auto("xi".into()), &taus)
                    })
                    .collect::<frqmc::Result<Vec<_>>>()
                    .context(|| "g2 map".into())?;
                let mut rows = Vec::new();
                for ((w, g), c) in cells.iter().zip(&curves) {
                    for (t, v) in taus.iter().zip(c) {
                        rows.push(vec![fmt_sig(*w), fmt_sig(*g), fmt_sig(*t), fmt_sig(*v)]);
                    }
                }
                let path = dir.join("map.csv");
                write_table(&path, "omega,gamma,tau,g2", &rows)?;
                files.push(path);
            }
        } else if !omegas.is_empty() {
            let rows = spectrum_rows(&src, omegas, &spectrum_gammas(spec)).context(|| "spectrum".into())?;
            let path = dir.join("spectrum.csv");
            write_table(&path, "omega,gamma,population", &rows)?;
            files.push(path);
        }
    }
    let path = dir.join("theory_summary.json");
    write_json(&path, &summary)?;
    files.push(path);
    Ok(files)
}

pub fn spectrum(spec: &ExperimentSpec) -> Files {
    let src = spec
        .source()
        .ok_or_else(|| CliError::Usage("spectrum needs a source".into()))?;
    if spec.theory.omega_grid.is_empty() {
        return Err(CliError::Usage(
            "spectrum needs a non-empty theory.omega_grid".into(),
        ));
    }
    let gammas = spectrum_gammas(spec);
    if gammas.is_empty() {
        return Err(CliError::Usage(
            "spectrum needs theory.gamma_grid or a filtered run".into(),
        ));
    }
    let dir = spec.out_dir();
    create_dir(&dir)?;
    let rows = spectrum_rows(&src, &spec.theory.omega_grid, &gammas).context(|| "spectrum".into())?;
    let path = dir.join("spectrum.csv");
    write_table(&path, "omega,gamma,population", &rows)?;
    Ok(vec![path])
}

pub fn simulate(spec: &ExperimentSpec) -> Files {
    let dir = spec.out_dir();
    create_dir(&dir)?;
    let mut files = Vec::new();
    let path = dir.join("_experiment.json");
    write_json(&path, spec)?;
    files.push(path);
    let mut summary = Vec::new();
    for (i, r) in spec.runs.iter().enumerate() {
        let mut cfg = spec.run_config(r, i);
        let ctx = || format!("run {} ({})", r.name, describe(&r.cascade));
        if r.auto_truncation {
            cfg.cascade = CascadeSystem::converged(&cfg.cascade, TRUNCATION_TOLERANCE)
                .context(ctx)?
                .cfg;
        }
        let start = Instant::now();
        info!(
            "run {}: dimension {}, target {:?} clicks, duration {:?}",
            r.name,
            cfg.cascade.hilbert_dim(),
            cfg.target_clicks,
            cfg.duration
        );
        let streams = if r.trajectories == 1 {
            let prep = PreparedRun::new(&cfg).context(ctx)?;
            vec![prep.trajectory(0).context(ctx)?]
        } else {
            run_ensemble(&cfg, r.trajectories).context(ctx)?.streams
        };
        for (k, s) in streams.iter().enumerate() {
            let name = if streams.len() == 1 {
                r.name.clone()
            } else {
                format!("{}_t{k}", r.name)
            };
            let path = dir.join(format!("{name}.csv"));
            s.write_csv(&path).context(|| path.display().to_string())?;
            info!(
                "run {}: {} clicks over T = {} in {:.1?}",
                name,
                s.len(),
                fmt_sig(s.duration),
                start.elapsed()
            );
            summary.push(json!({
                "run": r.name,
                "file": path.file_name().map(|f| f.to_string_lossy().to_string()),
                "run_id": s.run_id,
                "trajectory": s.trajectory,
                "clicks": s.len(),
                "duration": s.duration,
                "dt": s.dt,
                "counts": s.channels.iter().map(|c| (c.clone(), s.count(c))).filter(|(_, n)| *n > 0).collect::<Vec<_>>(),
            }));
            files.push(path);
        }
    }
    let path = dir.join("_simulate.json");
    write_json(&path, &summary)?;
    files.push(path);
    Ok(files)
}

/// Poisson control stream on a single `source` channel.
pub fn poisson(rate: f64, duration: f64, seed: u64, out: &Path) -> Files {
    create_dir(out)?;
    let s = generate_poisson_stream(rate, duration, seed).context(|| format!("poisson rate {rate}"))?;
    let path = out.join("poisson.csv");
    s.write_csv(&path).context(|| path.display().to_string())?;
    info!(
        "poisson control: {} clicks over T = {}",
        s.len(),
        fmt_sig(duration)
    );
    Ok(vec![path])
}

#[derive(Clone, Debug, Default)]
pub struct AnalyzeOptions {
    pub analysis: AnalysisSpec,
    pub bin: Option<f64>,
    pub tau_max: Option<f64>,
    /// Add the master-equation value on the same grid as a last column.
    pub theory: bool,
    /// Cross-correlate the two given files instead of analysing each.
    pub pair: bool,
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "stream".into())
}

fn write_histograms(
    dir: &Path,
    prefix: &str,
    grids: &[HistogramSpec],
    hist: impl Fn(&HistogramSpec) -> frqmc::Result<frqmc::clickstats::CorrelationHistogram>,
    theory: Option<(&TheoryModel, Observable)>,
    files: &mut Vec<PathBuf>,
) -> Result<serde_json::Value, CliError> {
    let mut zero = serde_json::Value::Null;
    for (k, g) in grids.iter().enumerate() {
        let h = hist(g).context(|| prefix.to_string())?;
        let overlay = match &theory {
            Some((m, obs)) => Some(m.curve(obs, &h.tau_centers).context(|| prefix.to_string())?),
            None => None,
        };
        let path = dir.join(format!("{prefix}{}.csv", grid_suffix(k)));
        h.write_csv(&path, overlay.as_deref())
            .context(|| path.display().to_string())?;
        files.push(path);
        if k == 0 {
            if let Some((v, e, c)) = h.at(0.0) {
                zero = json!({ "g2": v, "stderr": e, "count": c, "bin_width": h.bin_width });
            }
        }
    }
    Ok(zero)
}

pub fn analyze(paths: &[PathBuf], opts: &AnalyzeOptions, out: &Path) -> Files {
    create_dir(out)?;
    let streams = paths
        .iter()
        .map(|p| ClickStream::read_csv(p).context(|| p.display().to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut files = Vec::new();
    if opts.pair {
        let [a, b] = streams.as_slice() else {
            return Err(CliError::Usage("--pair needs exactly two stream files".into()));
        };
        let prefix = format!("{}__{}_cross", stem(&paths[0]), stem(&paths[1]));
        let grids = opts.analysis.histograms(a.dt, opts.bin, opts.tau_max);
        let zero = write_histograms(
            out,
            &prefix,
            &grids,
            |g| cross_g2_histogram(a, b, g.tau_max, g.bin_width),
            None,
            &mut files,
        )?;
        let path = out.join(format!("{prefix}_summary.json"));
        write_json(
            &path,
            &json!({ "run_id": a.run_id, "clicks": [a.len(), b.len()], "g2_zero": zero }),
        )?;
        files.push(path);
        return Ok(files);
    }
    for (path, s) in paths.iter().zip(&streams) {
        let st = stem(path);
        let labels: Vec<String> = s.channels.iter().filter(|c| s.count(c) > 0).cloned().collect();
        if s.len() < 2 {
            return Err(CliError::Run {
                context: path.display().to_string(),
                source: frqmc::Error::TooFewClicks {
                    needed: 2,
                    have: s.len(),
                },
            });
        }
        let model = match (&s.config, opts.theory) {
            (Some(cfg), true) => Some(TheoryModel::new(&cfg.cascade).context(|| describe(&cfg.cascade))?),
            (None, true) => {
                return Err(CliError::Usage(format!(
                    "{}: no configuration sidecar for --theory",
                    path.display()
                )));
            }
            _ => None,
        };
        let grids = opts.analysis.histograms(s.dt, opts.bin, opts.tau_max);
        let mut per_label = serde_json::Map::new();
        for l in &labels {
            let sub = if labels.len() == 1 {
                s.clone()
            } else {
                s.select(&[l.as_str()])
            };
            let prefix = if labels.len() == 1 {
                st.clone()
            } else {
                format!("{st}_{l}")
            };
            let ctx = || format!("{} channel {l}", path.display());
            if sub.len() < 2 {
                return Err(CliError::Run {
                    context: ctx(),
                    source: frqmc::Error::TooFewClicks {
                        needed: 2,
                        have: sub.len(),
                    },
                });
            }
            let theory = model.as_ref().map(|m| (m, Observable::Auto(l.clone())));
            let zero = write_histograms(
                out,
                &format!("{prefix}_g2"),
                &grids,
                |g| g2_histogram(&sub, g.tau_max, g.bin_width),
                theory,
                &mut files,
            )?;
            let (r, r_err) = rate(&sub).context(ctx)?;
            let spacing = 1.0 / r;

            let range = opts.analysis.waiting_range.unwrap_or(DEFAULT_WAITING_RANGE) * spacing;
            let w = waiting_time(&sub, range, range / 100.0).context(ctx)?;
            let p = out.join(format!("{prefix}_waiting.csv"));
            w.write_csv(&p).context(|| p.display().to_string())?;
            files.push(p);

            let window = opts.analysis.counting_window.unwrap_or(spacing);
            let q = window_counts(&sub, window).context(ctx)?;
            let p = out.join(format!("{prefix}_counts.csv"));
            q.write_csv(&p).context(|| p.display().to_string())?;
            files.push(p);

            let tau_c = opts.analysis.closely_spaced.unwrap_or(DEFAULT_CLOSELY_SPACED) * spacing;
            let close = closely_spaced_fraction(&sub, tau_c).context(ctx)?;
            per_label.insert(
                l.clone(),
                json!({
                    "clicks": sub.len(),
                    "rate": r,
                    "rate_stderr": r_err,
                    "g2_zero": zero,
                    "counting_window": window,
                    "fano": q.fano(),
                    "closely_spaced_tau": tau_c,
                    "closely_spaced_fraction": close,
                }),
            );
        }
        let mut cross = serde_json::Value::Null;
        if let [la, lb] = labels.as_slice() {
            let a = s.select(&[la.as_str()]);
            let b = s.select(&[lb.as_str()]);
            let theory = model
                .as_ref()
                .and_then(|m| (la == "xi1" && lb == "xi2").then_some((m, Observable::Cross)));
            cross = write_histograms(
                out,
                &format!("{st}_cross"),
                &grids,
                |g| cross_g2_histogram(&a, &b, g.tau_max, g.bin_width),
                theory,
                &mut files,
            )?;
        }
        let p = out.join(format!("{st}_summary.json"));
        write_json(
            &p,
            &json!({
                "run_id": s.run_id,
                "seed": s.seed,
                "duration": s.duration,
                "dt": s.dt,
                "channels": per_label,
                "cross_g2_zero": cross,
            }),
        )?;
        files.push(p);
    }
    Ok(files)
}

fn distribution_row(gamma: &str, p: &PhotonDistribution) -> Vec<String> {
    let fit = p.fit.as_ref();
    let at = |k: usize| fmt_sig(p.p.get(k).copied().unwrap_or(0.0));
    vec![
        gamma.to_string(),
        fmt_sig(p.mean()),
        at(0),
        at(1),
        at(2),
        fit.map(|f| f.class.name().to_string()).unwrap_or_default(),
        fit.map(|f| fmt_sig(f.class.param())).unwrap_or_default(),
        fit.map(|f| fmt_sig(f.residual)).unwrap_or_default(),
        fit.map(|f| f.nongaussian.nongaussian.to_string())
            .unwrap_or_default(),
        fit.map(|f| fmt_sig(f.nongaussian.margin)).unwrap_or_default(),
    ]
}

pub fn reconstruct(spec: &ExperimentSpec) -> Files {
    let r = spec
        .reconstruct
        .as_ref()
        .ok_or_else(|| CliError::Usage("experiment has no reconstruct section".into()))?;
    let dir = spec.out_dir();
    create_dir(&dir)?;
    let mut files = Vec::new();
    let mut rows = Vec::new();
    if r.unfiltered {
        let p = reconstruct_unfiltered(&r.source).context(|| "unfiltered reconstruction".into())?;
        let path = dir.join("p_unfiltered.csv");
        p.write_csv(&path).context(|| path.display().to_string())?;
        files.push(path);
        rows.push(distribution_row("inf", &p));
    }
    let results = r
        .gammas
        .par_iter()
        .map(|&g| {
            reconstruct_filtered(&r.source, r.omega, g, r.chi2)
                .context(|| format!("reconstruction at gamma {g}, omega {}", r.omega))
        })
        .collect::<Result<Vec<_>, _>>()?;
    for (g, p) in r.gammas.iter().zip(&results) {
        let path = dir.join(format!("p_G{}.csv", fmt_sig(*g)));
        p.write_csv(&path).context(|| path.display().to_string())?;
        files.push(path);
        rows.push(distribution_row(&fmt_sig(*g), p));
    }
    let path = dir.join("reconstruct.csv");
    write_table(
        &path,
        "gamma,mean,p0,p1,p2,fit_class,fit_param,residual,nongaussian,margin",
        &rows,
    )?;
    files.push(path);
    Ok(files)
}
