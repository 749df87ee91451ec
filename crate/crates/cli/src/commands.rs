use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use qmri_core::baselines::{blip_reconstruct, mrf_reconstruct, BlipConfig};
use qmri_core::bloch::PulseSequence;
use qmri_core::dictionary::{Dictionary, GridSpec};
use qmri_core::encoding::{read_kspace, write_kspace, Encoder, KSpaceData, ParameterMap, SamplingMask};
use qmri_core::metrics::{error_rate, error_table_csv, iterate_ratios};
use qmri_core::phantom::{
    calibrate_sigma, desk_phantom, make_phantom, read_map_csv, synthesize_data, write_map_csv, PhantomSpec,
};
use qmri_core::solver::{solve_gauss_newton, solve_lm, SolverConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{config_error, DomainConfig, InitConfig, MethodConfig, PhantomSource, RunConfig};

/// Written next to every output set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub wall_time_s: Option<f64>,
    pub details: serde_json::Value,
    pub config: RunConfig,
}

impl Manifest {
    fn new(command: &str, cfg: &RunConfig, details: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: cfg.digest(),
            seed: cfg.noise.seed,
            threads: rayon::current_num_threads(),
            method: None,
            label: None,
            wall_time_s: None,
            details,
            config: cfg.clone(),
        }
    }

    fn write(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn load_phantom(cfg: &RunConfig) -> anyhow::Result<ParameterMap> {
    let source = cfg.phantom.as_ref().ok_or_else(|| config_error("missing field `phantom`"))?;
    let map = match source {
        PhantomSource::Desk { n } => desk_phantom(*n),
        PhantomSource::Spec(spec) => make_phantom(spec),
        PhantomSource::File(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_error(format!("phantom.file: cannot read {}: {e}", path.display())))?;
            let spec: PhantomSpec = serde_json::from_str(&text)
                .map_err(|e| config_error(format!("phantom.file: {}: {e}", path.display())))?;
            make_phantom(&spec)
        }
        PhantomSource::Maps(dir) => {
            if !dir.is_dir() {
                return Err(config_error(format!("phantom.maps: {} is not a directory", dir.display())));
            }
            read_map_csv(dir)
        }
    };
    map.map_err(|e| config_error(format!("phantom: {e}")))
}

pub fn simulate(cfg: &RunConfig) -> anyhow::Result<()> {
    let truth = load_phantom(cfg)?;
    let seq = cfg.sequence.build()?;
    let mask = SamplingMask::new(truth.n(), seq.len(), cfg.sampling).map_err(|e| config_error(format!("sampling: {e}")))?;
    let sigma = match cfg.noise.snr {
        Some(_) if cfg.noise.sigma != 0.0 => {
            return Err(config_error("noise: give either `sigma` or `snr`, not both"));
        }
        Some(snr) => calibrate_sigma(&truth, &seq, &mask, cfg.noise.seed, snr)?,
        None => cfg.noise.sigma,
    };
    let syn = synthesize_data(&truth, &seq, &mask, sigma, cfg.noise.seed)?;
    fs::create_dir_all(&cfg.output)?;
    write_map_csv(&cfg.output.join("truth"), &truth)?;
    write_kspace(&cfg.output.join("kspace.bin"), &syn.data)?;
    let snr = if syn.snr.is_finite() { json!(syn.snr) } else { json!("inf") };
    Manifest::new("simulate", cfg, json!({ "sigma": sigma, "snr": snr, "coverage": mask.coverage() })).write(&cfg.output)?;
    println!("wrote {} ({}x{}, L={}, sigma={sigma:.6e})", cfg.output.display(), truth.n(), truth.n(), seq.len());
    if syn.snr.is_finite() {
        println!("SNR: {:.4}", syn.snr);
    } else {
        println!("SNR: inf");
    }
    Ok(())
}

/// Loads the cached dictionary when it matches `grid` and `seq`, else builds it.
fn dictionary_for(path: Option<&Path>, grid: &GridSpec, seq: &PulseSequence) -> anyhow::Result<Dictionary> {
    if let Some(path) = path.filter(|p| p.exists()) {
        let dict = Dictionary::load(path).with_context(|| format!("loading {}", path.display()))?;
        if dict.check_sequence(seq).is_ok() && dict.t1_grid() == grid.t1_grid() && dict.t2_grid() == grid.t2_grid() {
            return Ok(dict);
        }
    }
    Ok(grid.build(seq)?)
}

pub fn dict(cfg: &RunConfig) -> anyhow::Result<()> {
    let seq = cfg.sequence.build()?;
    let start = Instant::now();
    let dict = cfg.dictionary.grid.build(&seq).map_err(|e| config_error(format!("dictionary: {e}")))?;
    let path = cfg.dictionary_path();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    dict.save(&path)?;
    println!("wrote {} ({} atoms, L={}) in {:.2} s", path.display(), dict.size(), dict.len(), start.elapsed().as_secs_f64());
    Ok(())
}

fn read_domain(cfg: &RunConfig, data: &KSpaceData) -> anyhow::Result<Option<Vec<bool>>> {
    let n = data.n();
    match &cfg.domain {
        DomainConfig::All => Ok(None),
        DomainConfig::Mask(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_error(format!("domain.mask: cannot read {}: {e}", path.display())))?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            let header = lines.next().unwrap_or_default().trim().to_string();
            let values: Vec<bool> = lines
                .flat_map(|l| l.split(',').map(str::trim).map(String::from).collect::<Vec<_>>())
                .map(|v| v.parse::<f64>().map(|x| x != 0.0))
                .collect::<Result<_, _>>()
                .map_err(|e| config_error(format!("domain.mask: {e}")))?;
            if header != n.to_string() || values.len() != n * n {
                return Err(config_error(format!("domain.mask: expected a {n}x{n} grid")));
            }
            Ok(Some(values))
        }
        DomainConfig::Threshold(frac) => {
            if !(0.0..1.0).contains(frac) {
                return Err(config_error("domain.threshold must lie in [0, 1)"));
            }
            let images = Encoder::new(data.mask())?.adjoint(data);
            let mut energy = vec![0.0; n * n];
            for frame in images.chunks(n * n) {
                for (e, v) in energy.iter_mut().zip(frame) {
                    *e += v.norm();
                }
            }
            let max = energy.iter().copied().fold(0.0, f64::max);
            Ok(Some(energy.iter().map(|&e| e > frac * max).collect()))
        }
    }
}

struct Outcome {
    map: ParameterMap,
    report_csv: String,
    ratios_csv: Option<String>,
    details: serde_json::Value,
}

fn write_run(
    dir: &Path,
    cfg: &RunConfig,
    method: &str,
    label: &str,
    seconds: f64,
    outcome: &Outcome,
) -> anyhow::Result<()> {
    write_map_csv(dir, &outcome.map)?;
    fs::write(dir.join("report.csv"), &outcome.report_csv)?;
    if let Some(r) = &outcome.ratios_csv {
        fs::write(dir.join("ratios.csv"), r)?;
    }
    let mut manifest = Manifest::new("reconstruct", cfg, outcome.details.clone());
    manifest.method = Some(method.into());
    manifest.label = Some(label.into());
    manifest.wall_time_s = Some(seconds);
    manifest.write(dir)
}

fn blip_run(
    data: &KSpaceData,
    dict: &Dictionary,
    blip: &BlipConfig,
    support: Option<&[bool]>,
) -> anyhow::Result<Outcome> {
    let res = blip_reconstruct(data, dict, blip, support)?;
    Ok(Outcome {
        report_csv: res.residual_csv(),
        ratios_csv: None,
        details: json!({ "atoms": dict.size(), "iterations": res.residuals.len() }),
        map: res.map,
    })
}

fn initial_value(
    cfg: &RunConfig,
    init: &InitConfig,
    data: &KSpaceData,
    seq: &PulseSequence,
    support: Option<&[bool]>,
) -> anyhow::Result<(ParameterMap, f64)> {
    if let Some(path) = &init.path {
        if !path.is_dir() {
            return Err(config_error(format!("method.init.path: {} is not a directory", path.display())));
        }
        let mut map = read_map_csv(path).map_err(|e| config_error(format!("method.init.path: {e}")))?;
        if let Some(s) = support {
            map.set_domain(s.to_vec())?;
        }
        return Ok((map, 0.0));
    }
    let start = Instant::now();
    let dict = init.grid.build(seq)?;
    let outcome = blip_run(data, &dict, &init.blip, support)?;
    let seconds = start.elapsed().as_secs_f64();
    write_run(&cfg.output.join("initial"), cfg, "blip", "Initial", seconds, &outcome)?;
    Ok((outcome.map, seconds))
}

pub fn reconstruct(cfg: &RunConfig) -> anyhow::Result<()> {
    let method = cfg.method()?.clone();
    let seq = cfg.sequence.build()?;
    let path = cfg.data_path();
    if !path.exists() {
        return Err(config_error(format!("data: {} does not exist", path.display())));
    }
    let data = read_kspace(&path).map_err(|e| config_error(format!("data: {e}")))?;
    if data.len() != seq.len() {
        return Err(config_error(format!(
            "sequence.L is {} but the data hold {} frames",
            seq.len(),
            data.len()
        )));
    }
    let support = read_domain(cfg, &data)?;
    let support = support.as_deref();
    let label = cfg.label()?;
    let start = Instant::now();
    let (outcome, extra) = match &method {
        MethodConfig::Mrf { rho_mode } => {
            let dict = dictionary_for(cfg.dictionary.path.as_deref(), &cfg.dictionary.grid, &seq)?;
            let map = mrf_reconstruct(&data, &dict, *rho_mode, support)?;
            (Outcome { map, report_csv: String::new(), ratios_csv: None, details: json!({ "atoms": dict.size() }) }, 0.0)
        }
        MethodConfig::Blip { blip } => {
            let dict = dictionary_for(cfg.dictionary.path.as_deref(), &cfg.dictionary.grid, &seq)?;
            (blip_run(&data, &dict, blip, support)?, 0.0)
        }
        MethodConfig::Gn { solver, init } | MethodConfig::Lm { solver, init } => {
            solver.validate().map_err(|e| config_error(format!("method.solver: {e}")))?;
            let (x0, init_time) = initial_value(cfg, init, &data, &seq, support)?;
            let solve_start = Instant::now();
            let run: fn(&ParameterMap, &KSpaceData, &PulseSequence, &SolverConfig) -> _ =
                if method.name() == "gn" { solve_gauss_newton } else { solve_lm };
            let (map, report) = run(&x0, &data, &seq, solver)?;
            let details = json!({
                "iterations": report.iterations(),
                "termination": report.termination,
                "final_residual": report.residuals.last(),
                "init_seconds": init_time,
                "solve_seconds": solve_start.elapsed().as_secs_f64(),
            });
            let ratios = iterate_ratios(&report).to_csv();
            (Outcome { map, report_csv: report.to_csv(), ratios_csv: Some(ratios), details }, init_time)
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    let dir = cfg.output.join(method.name());
    write_run(&dir, cfg, method.name(), &label, seconds, &outcome)?;
    println!("{label}: wrote {} in {seconds:.2} s (initialization {extra:.2} s)", dir.display());
    Ok(())
}

pub fn compare(truth: &Path, runs: &[PathBuf], out: Option<&Path>) -> anyhow::Result<()> {
    let truth_map = read_map_csv(truth).map_err(|e| config_error(format!("truth: {e}")))?;
    let mut rows = Vec::new();
    for dir in runs {
        let map = read_map_csv(dir).map_err(|e| config_error(format!("{}: {e}", dir.display())))?;
        if map.n() != truth_map.n() {
            return Err(config_error(format!(
                "{} is {}x{} but the truth is {}x{}",
                dir.display(),
                map.n(),
                map.n(),
                truth_map.n(),
                truth_map.n()
            )));
        }
        let manifest: Option<Manifest> =
            fs::read_to_string(dir.join("manifest.json")).ok().and_then(|t| serde_json::from_str(&t).ok());
        let label = manifest
            .as_ref()
            .and_then(|m| m.label.clone())
            .unwrap_or_else(|| dir.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default());
        let mut report = error_rate(&map, &truth_map)?;
        if let Some(t) = manifest.and_then(|m| m.wall_time_s) {
            report = report.with_wall_time(t);
        }
        rows.push((label.replace(',', " "), report));
    }
    let table = error_table_csv("method", &rows)?;
    print!("{table}");
    if let Some(out) = out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(out, &table)?;
    }
    Ok(())
}
