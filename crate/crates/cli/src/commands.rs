use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use pillar_qed::design::sweep_kappa;
use pillar_qed::estimation::{fit, FitProblem, ModelParams};
use pillar_qed::interferometer::{
    calibrate_bias, channel_table, extract_phase_spectrum, measured_intensity_spectrum, measured_phase_spectrum,
    with_multiplicative_noise, BackgroundModel, ReferenceArm,
};
use pillar_qed::io::{self, RunConfig};
use pillar_qed::tuning::{anticrossing_gap, synthesize_scan, TuningModel};
use pillar_qed::{ComplexAmplitude, Error, QdState, Result};

use crate::{Cli, Command};

pub enum Failure {
    Model(Error),
    NotConverged,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

pub fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth => synth(&cfg)?,
        Command::Fit {
            spectrum,
            phase,
            empty,
            allow_nonconverged,
        } => {
            let converged = fit_spectrum(&cfg, spectrum, phase.as_deref(), !*empty)?;
            if !converged && !allow_nonconverged {
                return Err(Failure::NotConverged);
            }
        }
        Command::Phase { channels } => phase(&cfg, channels)?,
        Command::Scan => scan(&cfg)?,
        Command::Design => design(&cfg)?,
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut map = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => BTreeMap::new(),
    };
    let mut set = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    };
    set("out", cli.out.as_ref().map(|p| p.display().to_string()));
    set("seed", cli.seed.map(|s| s.to_string()));
    set("background", cli.background.map(|b| b.to_string()));
    set("grid", cli.grid.clone());
    RunConfig::from_map(&map)
}

fn background(cfg: &RunConfig) -> Result<BackgroundModel> {
    BackgroundModel::new(cfg.background, cfg.background_phase)
}

fn reference(cfg: &RunConfig) -> Result<ReferenceArm> {
    let beta = ComplexAmplitude::new(cfg.reference_amplitude, 0.0);
    match cfg.sb_offset {
        Some(sb) => ReferenceArm::new(beta, sb),
        None => ReferenceArm::calibrated(beta),
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out.join(name)
}

fn noisy(cfg: &RunConfig, s: pillar_qed::Spectrum, seed: u64) -> pillar_qed::Spectrum {
    if cfg.noise > 0.0 {
        with_multiplicative_noise(&s, cfg.noise, seed)
    } else {
        s
    }
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let bg = background(cfg)?;
    let reference = reference(cfg)?;
    let variants = [
        ("coupled", QdState::coupled(cfg.omega_qd)?, cfg.seed),
        ("empty", QdState::empty(), cfg.seed.wrapping_add(1)),
    ];
    for (name, qd, seed) in variants {
        let intensity = measured_intensity_spectrum(&cfg.params, &qd, &bg, &cfg.grid)?;
        io::write_spectrum(&out_path(cfg, &format!("{name}.csv")), &noisy(cfg, intensity, seed))?;
        let phase = measured_phase_spectrum(&cfg.params, &qd, &bg, &cfg.grid)?;
        io::write_spectrum(&out_path(cfg, &format!("{name}_phase.csv")), &phase)?;
        let channels = channel_table(&cfg.params, &qd, &bg, &reference, &cfg.grid)?;
        io::write_channels(&out_path(cfg, &format!("{name}_channels.csv")), &channels)?;
    }
    let conditional = pillar_qed::design::conditional_phase_spectrum_with(&cfg.params, cfg.omega_qd, &cfg.grid, &bg)?;
    io::write_spectrum(&out_path(cfg, "conditional_phase.csv"), &conditional)?;
    info!("wrote synthetic spectra to {}", cfg.out.display());
    Ok(())
}

fn fit_spectrum(cfg: &RunConfig, spectrum: &Path, phase: Option<&Path>, coupled: bool) -> Result<bool> {
    let observed = io::read_spectrum(spectrum)?;
    let mut guess = ModelParams::new(&cfg.params, cfg.omega_qd, cfg.background);
    for &(p, v) in &cfg.fit_guess {
        guess.set(p, v);
    }
    let mut problem = FitProblem::intensity_only(observed, coupled, cfg.fit_free.clone(), guess);
    if let Some(path) = phase {
        problem = problem.with_phase(io::read_spectrum(path)?);
    }
    for &(p, b) in &cfg.fit_bounds {
        problem.bounds[p.index()] = b;
    }
    problem.config.max_iterations = cfg.fit_max_iterations;
    let result = fit(&problem)?;
    let report = io::format_fit_report(&result);
    io::write_atomic(&out_path(cfg, "fit_report.txt"), &report)?;
    print!("{report}");
    if !result.converged {
        warn!("fit stopped after {} iterations without converging", result.iterations);
    }
    Ok(result.converged)
}

fn phase(cfg: &RunConfig, channels: &Path) -> Result<()> {
    let records = io::read_channels(channels)?;
    let bias = match cfg.sb_offset {
        Some(_) => reference(cfg)?.bias(),
        None => calibrate_bias(&records)?,
    };
    let (spectrum, clamped) = extract_phase_spectrum(&records, bias)?;
    if clamped > 0 {
        warn!(
            "{clamped} of {} rows fell outside the valid arcsine range and were clamped",
            records.len()
        );
    }
    let stem = channels.file_stem().map_or("channels".into(), |s| s.to_string_lossy());
    let name = format!("{stem}_phase.csv");
    io::write_spectrum(&out_path(cfg, &name), &spectrum)
}

fn scan(cfg: &RunConfig) -> Result<()> {
    let tuning = TuningModel::new(
        cfg.qd_slope,
        cfg.cavity_slope,
        cfg.omega_qd,
        cfg.params.omega_c(),
        cfg.t_ref,
    )?;
    let scan = synthesize_scan(&cfg.params, &tuning, &cfg.temperatures, &cfg.grid, &background(cfg)?)?;
    let mut manifest = Vec::with_capacity(scan.temperatures.len());
    for (i, (t, s)) in scan.temperatures.iter().zip(&scan.spectra).enumerate() {
        let name = format!("scan_{i:03}.csv");
        let s = noisy(cfg, s.clone(), cfg.seed.wrapping_add(i as u64));
        io::write_spectrum(&out_path(cfg, &name), &s)?;
        manifest.push((*t, name));
    }
    io::write_atomic(&out_path(cfg, "manifest.csv"), &io::format_manifest(&manifest))?;
    match anticrossing_gap(&scan) {
        Ok(gap) => info!("minimum dip separation {gap} ueV"),
        Err(e) => info!("no anticrossing gap: {e}"),
    }
    Ok(())
}

fn design(cfg: &RunConfig) -> Result<()> {
    if cfg.kappa_values.is_empty() {
        return Err(Error::Config("`kappa_values` is empty".into()));
    }
    let points = sweep_kappa(&cfg.params, &cfg.kappa_values)?;
    io::write_atomic(&out_path(cfg, "design.csv"), &io::format_design_table(&points))
}
