//! Built-in experiments. Times are in units of `1/γ_σ`.

use frqmc::models::{leapfrog_frequencies, CascadeConfig, DetectorConfig, SourceConfig};

use crate::spec::{
    AnalysisSpec, ExperimentKind, ExperimentSpec, HistogramSpec, ReconstructSpec, RunSpec, TheorySpec,
    SCHEMA_VERSION,
};

/// Incoherent pump shared by the unfiltered and filtered incoherent presets.
const PUMP: f64 = 2.0;
/// Rabi frequency of the Mollow presets.
const RABI: f64 = 5.0;

const FIG2: [(&str, f64, usize); 8] = [
    ("i", 50.0, 9976),
    ("ii", 10.0, 9916),
    ("iii", 4.0, 9974),
    ("iv", 2.0, 9927),
    ("v", 1.0, 9967),
    ("vi", 0.5, 9955),
    ("vii", 0.2, 9860),
    ("viii", 0.1, 25000),
];

const FIG4: [(&str, f64, usize); 5] = [
    ("i", 0.0, 17241),
    ("ii", 2.5, 22836),
    ("iii", 5.0, 9112),
    ("iv", 7.5, 99457),
    ("v", 10.0, 46126),
];

const FIG4_GAMMA: f64 = 1.0;
const FIG5_GAMMA: f64 = 2.0;
const FIG5_DETUNING: f64 = 1.5;

pub fn names() -> Vec<&'static str> {
    let mut v = vec!["fig1"];
    v.extend(
        [
            "fig2-i",
            "fig2-ii",
            "fig2-iii",
            "fig2-iv",
            "fig2-v",
            "fig2-vi",
            "fig2-vii",
            "fig2-viii",
        ]
        .iter(),
    );
    v.extend(["fig3-incoherent", "fig3-coherent"]);
    v.extend(["fig4-i", "fig4-ii", "fig4-iii", "fig4-iv", "fig4-v"]);
    v.extend(["fig5-resonant", "fig5-detuned", "mollow-spectrum"]);
    v
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

fn base(name: &str, kind: ExperimentKind, description: &str) -> ExperimentSpec {
    ExperimentSpec {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        kind,
        description: description.to_string(),
        seed: 1,
        source: None,
        runs: Vec::new(),
        analysis: AnalysisSpec::default(),
        theory: TheorySpec::default(),
        reconstruct: None,
        out: None,
    }
}

fn run(name: &str, cascade: CascadeConfig, clicks: usize) -> RunSpec {
    RunSpec {
        name: name.to_string(),
        cascade,
        clicks: Some(clicks),
        duration: None,
        dt: None,
        transient: None,
        trajectories: 1,
        auto_truncation: true,
    }
}

fn hist(bin_width: f64, tau_max: f64) -> HistogramSpec {
    HistogramSpec { bin_width, tau_max }
}

pub fn preset(name: &str) -> Option<ExperimentSpec> {
    if name == "fig1" {
        // No pump rate is fixed for the unfiltered case; P = 2γ_σ as for the filtered one.
        let mut s = base(
            name,
            ExperimentKind::UnfilteredG2,
            "unfiltered incoherently pumped emitter, P=2",
        );
        s.runs.push(run(
            "tls",
            CascadeConfig::unfiltered(SourceConfig::incoherent(PUMP)),
            1_000_000,
        ));
        s.analysis.histograms = vec![hist(0.02, 3.0), hist(0.2, 20.0)];
        return Some(s);
    }
    if let Some(case) = name.strip_prefix("fig2-") {
        let &(_, gamma, clicks) = FIG2.iter().find(|c| c.0 == case)?;
        let mut s = base(
            name,
            ExperimentKind::FilteredScan,
            "incoherent emitter behind one filter at the emitter line",
        );
        let det = DetectorConfig::new(0.0, gamma, 2);
        s.runs.push(run(
            case,
            CascadeConfig::single(SourceConfig::incoherent(PUMP), det),
            clicks,
        ));
        s.analysis.histograms = vec![hist(0.1, 10.0)];
        if case == "viii" {
            s.analysis.histograms.push(hist(1.0, 100.0));
        }
        s.theory.omega_grid = vec![0.0];
        s.theory.gamma_grid = logspace(0.05, 100.0, 25);
        s.theory.map = Some((10.0, 0.1));
        return Some(s);
    }
    if let Some(case) = name.strip_prefix("fig4-") {
        let &(_, omega, clicks) = FIG4.iter().find(|c| c.0 == case)?;
        let mut s = base(
            name,
            ExperimentKind::MollowWindows,
            "Mollow triplet, Ω=5, one filter of width 1",
        );
        let det = DetectorConfig::new(omega, FIG4_GAMMA, 2);
        s.runs.push(run(
            case,
            CascadeConfig::single(SourceConfig::coherent(RABI, 0.0), det),
            clicks,
        ));
        s.analysis.histograms = vec![hist(0.05, 5.0)];
        s.theory.omega_grid = linspace(-15.0, 15.0, 121);
        s.theory.gamma_grid = vec![0.1, FIG4_GAMMA];
        return Some(s);
    }
    match name {
        "fig3-incoherent" | "fig3-coherent" => {
            let (src, gammas, label) = if name == "fig3-incoherent" {
                (
                    SourceConfig::incoherent(100.0),
                    vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
                    "P=100",
                )
            } else {
                (
                    SourceConfig::coherent(RABI, 0.0),
                    vec![0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0],
                    "Ω=5",
                )
            };
            let mut s = base(
                name,
                ExperimentKind::Reconstruct,
                &format!("effective photon distributions, {label}"),
            );
            s.reconstruct = Some(ReconstructSpec {
                source: src,
                omega: 0.0,
                gammas,
                unfiltered: true,
                chi2: 0.5,
            });
            Some(s)
        }
        "fig5-resonant" | "fig5-detuned" => {
            let detuning = if name == "fig5-detuned" {
                FIG5_DETUNING
            } else {
                0.0
            };
            let src = SourceConfig::coherent(RABI, detuning);
            let wp = leapfrog_frequencies(RABI, detuning).omega_plus;
            let mut s = base(
                name,
                ExperimentKind::CrossWindows,
                "Mollow triplet, two filters of width 2",
            );
            for (label, w) in [("leapfrog", wp / 2.0), ("sideband", wp)] {
                let dets = vec![
                    DetectorConfig::new(w, FIG5_GAMMA, 4),
                    DetectorConfig::new(-w, FIG5_GAMMA, 4),
                ];
                let mut r = run(label, CascadeConfig::new(src, dets), 20_000);
                r.dt = Some(0.02);
                s.runs.push(r);
            }
            s.analysis.histograms = vec![hist(0.1, 5.0)];
            s.theory.omega_grid = linspace(-15.0, 15.0, 121);
            s.theory.gamma_grid = vec![0.1, FIG5_GAMMA];
            Some(s)
        }
        "mollow-spectrum" => {
            let mut s = base(
                name,
                ExperimentKind::Spectrum,
                "Mollow triplet seen through filters of several widths",
            );
            s.source = Some(SourceConfig::coherent(RABI, 0.0));
            s.theory.omega_grid = linspace(-15.0, 15.0, 121);
            s.theory.gamma_grid = vec![0.1, 1.0, 5.0];
            Some(s)
        }
        _ => None,
    }
}
