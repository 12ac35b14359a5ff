//! File formats: spectrum and channel CSVs, the flat `key = value` run
//! configuration, fit reports, scan manifests and design tables.
//!
//! CSVs are UTF-8 with LF line endings; floats use Rust's shortest
//! round-trip formatting so re-reading reproduces every value exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::design::DesignPoint;
use crate::error::{Error, Result};
use crate::estimation::{FitParam, FitResult};
use crate::interferometer::ChannelRecord;
use crate::scattering::SystemParams;
use crate::spectrum::{Grid, Spectrum};

pub const SPECTRUM_HEADER: &str = "omega_ueV,value";
pub const CHANNEL_HEADER: &str = "omega_ueV,h,v,d,a";
pub const MANIFEST_HEADER: &str = "temperature_K,file";
pub const DESIGN_HEADER: &str = "kappa,max_phase_rad,argmax_ueV,refl_on_res,feasible";

/// Shortest round-trip representation: plain decimal or exponent notation,
/// whichever is shorter.
pub fn fmt_f64(x: f64) -> String {
    let plain = x.to_string();
    let exp = format!("{x:e}");
    if exp.len() < plain.len() {
        exp
    } else {
        plain
    }
}

/// Write via a temporary sibling file and rename into place, creating the
/// parent directory if needed.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Data rows of a CSV with the expected header, as float columns, each
/// tagged with its 1-based line number.
fn parse_rows(path: &Path, text: &str, header: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let found = reader.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    let expected: Vec<&str> = header.split(',').collect();
    if found.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header `{header}`, found `{}`",
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let fields = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        rows.push((line, fields));
    }
    Ok(rows)
}

/// CSV text with LF line endings; floats use shortest round-trip formatting.
fn format_csv<const N: usize>(header: &str, rows: impl Iterator<Item = [String; N]>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let write = |w: &mut csv::Writer<Vec<u8>>, rec: &[String]| w.write_record(rec).expect("in-memory write");
    write(&mut w, &header.split(',').map(String::from).collect::<Vec<_>>());
    for r in rows {
        write(&mut w, &r);
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

pub fn format_spectrum(s: &Spectrum) -> String {
    format_csv(SPECTRUM_HEADER, s.iter().map(|(w, v)| [fmt_f64(w), fmt_f64(*v)]))
}

pub fn write_spectrum(path: &Path, s: &Spectrum) -> Result<()> {
    write_atomic(path, &format_spectrum(s))
}

pub fn read_spectrum(path: &Path) -> Result<Spectrum> {
    let rows = parse_rows(path, &read(path)?, SPECTRUM_HEADER)?;
    let (omega, values) = rows.into_iter().map(|(_, r)| (r[0], r[1])).unzip();
    Spectrum::new(omega, values).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn format_channels(records: &[ChannelRecord]) -> String {
    format_csv(
        CHANNEL_HEADER,
        records.iter().map(|r| [r.omega, r.h, r.v, r.d, r.a].map(fmt_f64)),
    )
}

pub fn write_channels(path: &Path, records: &[ChannelRecord]) -> Result<()> {
    write_atomic(path, &format_channels(records))
}

pub fn read_channels(path: &Path) -> Result<Vec<ChannelRecord>> {
    let rows = parse_rows(path, &read(path)?, CHANNEL_HEADER)?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        if r[1..].iter().any(|v| *v < 0.0) {
            return Err(parse_err(path, line, "channel intensities must be non-negative"));
        }
        if let Some(prev) = out.last().map(|p: &ChannelRecord| p.omega) {
            if r[0] <= prev {
                return Err(parse_err(path, line, "energies must be strictly increasing"));
            }
        }
        out.push(ChannelRecord {
            omega: r[0],
            h: r[1],
            v: r[2],
            d: r[3],
            a: r[4],
        });
    }
    if out.len() < 2 {
        return Err(parse_err(path, 0, "need at least 2 channel records"));
    }
    Ok(out)
}

pub fn format_manifest(entries: &[(f64, String)]) -> String {
    format_csv(MANIFEST_HEADER, entries.iter().map(|(t, f)| [fmt_f64(*t), f.clone()]))
}

pub fn read_manifest(path: &Path) -> Result<Vec<(f64, String)>> {
    let text = read(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let found = reader.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    if found.iter().collect::<Vec<_>>().join(",") != MANIFEST_HEADER {
        return Err(parse_err(path, 1, format!("expected header `{MANIFEST_HEADER}`")));
    }
    reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| parse_err(path, 0, e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let t = rec[0]
                .parse::<f64>()
                .map_err(|e| parse_err(path, line, e.to_string()))?;
            Ok((t, rec[1].to_string()))
        })
        .collect()
}

pub fn format_design_table(points: &[DesignPoint]) -> String {
    format_csv(
        DESIGN_HEADER,
        points.iter().map(|p| {
            [
                fmt_f64(p.kappa()),
                fmt_f64(p.max_conditional_phase),
                fmt_f64(p.argmax_omega),
                fmt_f64(p.on_resonance_reflectivity),
                p.feasible.to_string(),
            ]
        }),
    )
}

/// Flat `key = value` fit report. Keys: `converged`, `termination`,
/// `iterations`, `residual_norm`, `gradient_norm`, `covariance_condition`,
/// every model parameter by name, and `<name>_stderr` for free parameters.
pub fn format_fit_report(result: &FitResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "converged = {}", result.converged);
    let _ = writeln!(out, "termination = {:?}", result.termination);
    let _ = writeln!(out, "iterations = {}", result.iterations);
    let _ = writeln!(out, "residual_norm = {}", fmt_f64(result.residual_norm));
    let _ = writeln!(out, "gradient_norm = {}", fmt_f64(result.gradient_norm));
    let _ = writeln!(out, "covariance_condition = {}", fmt_f64(result.covariance_condition));
    for p in FitParam::ALL {
        let _ = writeln!(out, "{} = {}", p.key(), fmt_f64(result.params.get(p)));
    }
    for (p, e) in &result.std_errors {
        let _ = writeln!(out, "{}_stderr = {}", p.key(), fmt_f64(*e));
    }
    out
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_key_values(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, i + 1, format!("expected `key = value`, found `{line}`")))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(parse_err(path, i + 1, "empty key"));
        }
        if map.insert(key.to_string(), v.trim().to_string()).is_some() {
            return Err(parse_err(path, i + 1, format!("duplicate key `{key}`")));
        }
    }
    Ok(map)
}

pub fn read_fit_report(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_key_values(path, &read(path)?)
}

/// Energy in ueV from `12.5`, `12.5ueV`, `12.5μeV` or `1333.596meV`.
pub fn parse_energy(s: &str) -> Result<f64> {
    let s = s.trim();
    let (number, scale) = if let Some(n) = s.strip_suffix("meV") {
        (n, 1e3)
    } else if let Some(n) = s.strip_suffix("ueV").or_else(|| s.strip_suffix("μeV")) {
        (n, 1.0)
    } else {
        (s, 1.0)
    };
    let v: f64 = number
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse energy `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::Config(format!("energy `{s}` is not finite")));
    }
    // meV values carry at most ~12 significant digits; snap to the nearest 1e-6 ueV
    Ok(if scale != 1.0 {
        (v * scale * 1e6).round() / 1e6
    } else {
        v
    })
}

fn parse_f64(key: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Config(format!("`{key}`: cannot parse number `{s}`")))
}

/// `START:STOP:N` with optional energy units.
pub fn parse_grid(s: &str) -> Result<Grid> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("grid `{s}` must be START:STOP:N")));
    }
    let n: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("grid point count `{}` is not an integer", parts[2])))?;
    Grid::new(parse_energy(parts[0])?, parse_energy(parts[1])?, n)
}

/// Comma-separated list, or `START:STOP:N` for an evenly spaced one.
fn parse_list(key: &str, s: &str, energy: bool) -> Result<Vec<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let one = |v: &str| if energy { parse_energy(v) } else { parse_f64(key, v) };
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("`{key}`: range must be START:STOP:N")));
        }
        let n: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("`{key}`: bad count `{}`", parts[2])))?;
        let (a, b) = (one(parts[0])?, one(parts[1])?);
        return Ok(match n {
            0 => Vec::new(),
            1 => vec![a],
            _ => (0..n)
                .map(|i| {
                    if i + 1 == n {
                        b
                    } else {
                        a + (b - a) * i as f64 / (n - 1) as f64
                    }
                })
                .collect(),
        });
    }
    s.split(',').map(one).collect()
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::Config(format!("`{key}`: expected true/false, found `{other}`"))),
    }
}

/// Everything a command needs, with a documented default for every key.
///
/// | key | default |
/// |-----|---------|
/// | `g`, `kappa_top`, `kappa_side`, `gamma` | 9.4, 1.2, 24.7, 5 ueV |
/// | `omega_c` | 1333.596 meV |
/// | `omega_qd` | `omega_c` |
/// | `background`, `background_phase` | 0, 0 |
/// | `reference_amplitude`, `sb_offset` | 0.9, calibrated |
/// | `grid` | `omega_c ± 100 ueV`, 2001 points |
/// | `noise` | 0 (relative multiplicative sigma) |
/// | `seed` | 42 |
/// | `out` | `out` |
/// | `qd_slope`, `cavity_slope` | -10, -3 ueV/K (placeholders) |
/// | `t_ref` | 21 K, where `omega_qd`/`omega_c` apply |
/// | `temperatures` | `19:23:41` |
/// | `kappa_values` | `1.2,2.4,5,10,15,20,24.7,30,37.6,50,60` |
/// | `fit_free` | `g,kappa_top,kappa_side,gamma` |
/// | `fit_coupled` | true |
/// | `fit_max_iterations` | 500 |
/// | `guess.<param>` | the model value |
/// | `bound.<param>` | rates `0:1000`, energies inside the grid |
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: SystemParams,
    pub omega_qd: f64,
    pub background: f64,
    pub background_phase: f64,
    pub reference_amplitude: f64,
    pub sb_offset: Option<f64>,
    pub grid: Grid,
    pub noise: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub qd_slope: f64,
    pub cavity_slope: f64,
    pub t_ref: f64,
    pub temperatures: Vec<f64>,
    pub kappa_values: Vec<f64>,
    pub fit_free: Vec<FitParam>,
    pub fit_coupled: bool,
    pub fit_max_iterations: usize,
    pub fit_guess: Vec<(FitParam, f64)>,
    pub fit_bounds: Vec<(FitParam, (f64, f64))>,
}

const PLAIN_KEYS: &[&str] = &[
    "g",
    "kappa_top",
    "kappa_side",
    "gamma",
    "omega_c",
    "omega_qd",
    "background",
    "background_phase",
    "reference_amplitude",
    "sb_offset",
    "grid",
    "noise",
    "seed",
    "out",
    "qd_slope",
    "cavity_slope",
    "t_ref",
    "temperatures",
    "kappa_values",
    "fit_free",
    "fit_coupled",
    "fit_max_iterations",
];

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_map(&BTreeMap::new()).expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<BTreeMap<String, String>> {
        parse_key_values(path, &read(path)?)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        for key in map.keys() {
            let known = PLAIN_KEYS.contains(&key.as_str())
                || key
                    .strip_prefix("guess.")
                    .or_else(|| key.strip_prefix("bound."))
                    .is_some_and(|p| FitParam::from_key(p).is_some());
            if !known {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let energy = |k: &str, d: f64| get(k).map_or(Ok(d), parse_energy);
        let number = |k: &str, d: f64| get(k).map_or(Ok(d), |v| parse_f64(k, v));

        let omega_c = energy("omega_c", 1_333_596.0)?;
        let params = SystemParams::new(
            energy("g", 9.4)?,
            energy("kappa_top", 1.2)?,
            energy("kappa_side", 24.7)?,
            energy("gamma", 5.0)?,
            omega_c,
        )?;
        let grid = match get("grid") {
            Some(g) => parse_grid(g)?,
            None => Grid::centered(omega_c, 100.0, 2001)?,
        };
        let seed = match get("seed") {
            Some(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("`seed`: not an unsigned integer `{s}`")))?,
            None => 42,
        };
        let fit_free = match get("fit_free") {
            Some(s) => s
                .split(',')
                .map(|k| {
                    FitParam::from_key(k.trim())
                        .ok_or_else(|| Error::Config(format!("`fit_free`: unknown parameter `{k}`")))
                })
                .collect::<Result<Vec<_>>>()?,
            None => FitParam::RATES.to_vec(),
        };
        let mut fit_guess = Vec::new();
        let mut fit_bounds = Vec::new();
        for (k, v) in map {
            if let Some(p) = k.strip_prefix("guess.").and_then(FitParam::from_key) {
                fit_guess.push((p, parse_energy(v)?));
            }
            if let Some(p) = k.strip_prefix("bound.").and_then(FitParam::from_key) {
                let (lo, hi) = v
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("`{k}`: bounds must be LO:HI")))?;
                fit_bounds.push((p, (parse_energy(lo)?, parse_energy(hi)?)));
            }
        }
        let cfg = Self {
            params,
            omega_qd: energy("omega_qd", omega_c)?,
            background: number("background", 0.0)?,
            background_phase: number("background_phase", 0.0)?,
            reference_amplitude: number("reference_amplitude", 0.9)?,
            sb_offset: get("sb_offset").map(|v| parse_f64("sb_offset", v)).transpose()?,
            grid,
            noise: number("noise", 0.0)?,
            seed,
            out: PathBuf::from(get("out").unwrap_or("out")),
            qd_slope: number("qd_slope", crate::tuning::TuningModel::DEFAULT_QD_SLOPE)?,
            cavity_slope: number("cavity_slope", crate::tuning::TuningModel::DEFAULT_CAVITY_SLOPE)?,
            t_ref: number("t_ref", 21.0)?,
            temperatures: parse_list("temperatures", get("temperatures").unwrap_or("19:23:41"), false)?,
            kappa_values: parse_list(
                "kappa_values",
                get("kappa_values").unwrap_or("1.2,2.4,5,10,15,20,24.7,30,37.6,50,60"),
                true,
            )?,
            fit_free,
            fit_coupled: get("fit_coupled").map_or(Ok(true), |v| parse_bool("fit_coupled", v))?,
            fit_max_iterations: match get("fit_max_iterations") {
                Some(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("`fit_max_iterations`: bad integer `{v}`")))?,
                None => 500,
            },
            fit_guess,
            fit_bounds,
        };
        if !(0.0..1.0).contains(&cfg.background) {
            return Err(Error::Config(format!(
                "`background` must lie in [0, 1), got {}",
                cfg.background
            )));
        }
        if !(cfg.noise >= 0.0) {
            return Err(Error::Config(format!("`noise` must be >= 0, got {}", cfg.noise)));
        }
        if !(cfg.reference_amplitude > 0.0 && cfg.reference_amplitude <= 1.0) {
            return Err(Error::Config(format!(
                "`reference_amplitude` must lie in (0, 1], got {}",
                cfg.reference_amplitude
            )));
        }
        Ok(cfg)
    }
}
