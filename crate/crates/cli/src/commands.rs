//! Subcommand implementations.

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use silforge_core::image::{detect_sil, detect_sil_center_profile, emitter_sil_displacement, locate_emitter, Roi};
use silforge_core::io::{
    read_catalog, read_csv, read_map, read_results, read_stream, write_csv, write_map, write_stream, Report,
};
use silforge_core::photon_stats::{
    build_g2, classify_emitter_count, enhancement_factors, fit_power_saturation, g2_background_correct, PowerSample,
    PowerSaturationFit,
};
use silforge_core::physics::{effective_process_energy, fit_saturation_model, saturation_model, SaturationSample};
use silforge_core::simulator::{
    render_map, simulate_hbt, simulate_saturation_sweep, simulate_write_array, HbtSpec, SceneSpec,
};
use silforge_core::spectral::{classify_zpl, ZplCatalog};
use silforge_core::yield_stats::{
    displacement_stats, estimate_lambda_from_occupancy, fit_rayleigh, plan_pulse_energy_with, poisson_pmf, YieldPoint,
};
use silforge_core::{EmitterFit, Point2, SaturationFitParams, SilFit, SilMethod};

use crate::output::{dispatch, emit, Output, Plot, UsageError};
use crate::{
    ClassifyZplArgs, Command, DetectSilArgs, DisplaceArgs, EnhanceArgs, FitPowerSaturationArgs, G2Args,
    LocateEmitterArgs, MethodArg, PlanYieldArgs, SimulateArrayArgs, SimulateHbtArgs, SimulateMapArgs,
    SimulateSaturationArgs, SingleMethod,
};

const MODEL_CURVE_POINTS: usize = 200;

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::SimulateMap(a) => simulate_map_cmd(&a),
        Command::SimulateHbt(a) => simulate_hbt_cmd(&a),
        Command::SimulateArray(a) => simulate_array_cmd(&a),
        Command::SimulateSaturation(a) => simulate_saturation_cmd(&a),
        Command::FitSaturation(a) => {
            let d = &a.dest;
            dispatch(
                "fit-saturation",
                a.data.as_deref(),
                d.batch.as_deref(),
                d.report.out.as_deref(),
                d.report.plot_data.as_deref(),
                |p| fit_saturation_file(p, a.photon_energy_ev),
            )
        }
        Command::DetectSil(a) => detect_sil_cmd(&a),
        Command::LocateEmitter(a) => locate_emitter_cmd(&a),
        Command::Displace(a) => displace_cmd(&a),
        Command::G2(a) => g2_cmd(&a),
        Command::FitPowerSaturation(a) => fit_power_cmd(&a),
        Command::Enhance(a) => enhance_cmd(&a),
        Command::Rayleigh(a) => {
            let d = &a.dest;
            dispatch(
                "rayleigh",
                a.data.as_deref(),
                d.batch.as_deref(),
                d.report.out.as_deref(),
                d.report.plot_data.as_deref(),
                rayleigh_file,
            )
        }
        Command::PlanYield(a) => plan_yield_cmd(&a),
        Command::ClassifyZpl(a) => classify_zpl_cmd(&a),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("analysis types serialise")
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a valid {what}", path.display()))
}

fn write_manifest(report: &Report, manifest: Option<&Path>) -> Result<ExitCode> {
    emit(&Output::new(report.clone()), manifest, None, None)?;
    Ok(ExitCode::SUCCESS)
}

fn simulate_map_cmd(a: &SimulateMapArgs) -> Result<ExitCode> {
    let mut spec: SceneSpec = read_json(&a.spec, "scene spec")?;
    spec.seed = a.seed;
    let map = render_map(&spec)?;
    write_map(&map, &a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    let report = Report::new(
        "simulate-map",
        json!({"spec": path_str(&a.spec), "seed": a.seed}),
        json!({
            "map": path_str(&a.out),
            "rows": map.rows(),
            "cols": map.cols(),
            "pixel_size_um": map.pixel_size(),
            "total_counts": map.counts().iter().sum::<f64>(),
        }),
    )
    .with_ground_truth(json!({
        "sil_center": spec.sil_center,
        "sil_radius": spec.sil_radius,
        "emitters": spec.emitters,
    }));
    write_manifest(&report, a.manifest.as_deref())
}

fn simulate_hbt_cmd(a: &SimulateHbtArgs) -> Result<ExitCode> {
    let mut spec: HbtSpec = read_json(&a.spec, "HBT spec")?;
    spec.seed = a.seed;
    let stream = simulate_hbt(&spec)?;
    write_stream(&stream, &a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    let signal = f64::from(spec.n_emitters) * spec.emitter_rate;
    // N equal emitters with signal fraction ρ: g²(0) = 1 − ρ²/N.
    let expected_g2 = if spec.n_emitters == 0 || signal <= 0.0 {
        1.0
    } else {
        let rho = signal / (signal + spec.background_rate);
        1.0 - rho * rho / f64::from(spec.n_emitters)
    };
    let report = Report::new(
        "simulate-hbt",
        json!({"spec": path_str(&a.spec), "seed": a.seed}),
        json!({
            "stream": path_str(&a.out),
            "events": stream.len(),
            "channel0": stream.channel_times(0).len(),
            "channel1": stream.channel_times(1).len(),
            "duration_ps": stream.duration_ps(),
        }),
    )
    .with_ground_truth(json!({"spec": spec, "expected_g2_zero": expected_g2}));
    write_manifest(&report, a.manifest.as_deref())
}

fn simulate_array_cmd(a: &SimulateArrayArgs) -> Result<ExitCode> {
    let sites = simulate_write_array(a.sites, a.lambda, a.seed)?;
    let n_sites = u32::try_from(a.sites).map_err(|_| UsageError(format!("--sites {} is too large", a.sites)))?;
    let n_empty = sites.iter().filter(|&&k| k == 0).count() as u32;
    let n_multi = sites.iter().filter(|&&k| k > 1).count();
    let estimate = match estimate_lambda_from_occupancy(n_sites, n_empty, a.confidence) {
        Ok(e) => to_value(&e),
        Err(e) => json!({"error": e.to_string()}),
    };
    let report = Report::new(
        "simulate-array",
        json!({"sites": a.sites, "lambda": a.lambda, "seed": a.seed, "confidence": a.confidence}),
        json!({
            "site_counts": sites,
            "n_empty": n_empty,
            "n_single": sites.iter().filter(|&&k| k == 1).count(),
            "n_multi": n_multi,
            "estimate": estimate,
        }),
    )
    .with_ground_truth(json!({"lambda": a.lambda, "poisson": poisson_pmf(a.lambda)?}));
    emit(&Output::new(report), a.out.as_deref(), None, None)?;
    Ok(ExitCode::SUCCESS)
}

fn simulate_saturation_cmd(a: &SimulateSaturationArgs) -> Result<ExitCode> {
    let params = SaturationFitParams::new(a.amplitude, a.exponent, a.saturation_param)?;
    let samples = simulate_saturation_sweep(&params, &a.energies, a.noise, a.seed)?;
    let with_sigma = samples.iter().all(|s| s.sigma.is_some());
    let header: &[&str] = if with_sigma { &["energy_nj", "intensity", "sigma"] } else { &["energy_nj", "intensity"] };
    let rows = samples.iter().map(|s| {
        let mut row = vec![s.energy_nj, s.intensity];
        row.extend(s.sigma);
        row
    });
    write_csv(&a.out, header, rows).with_context(|| format!("cannot write {}", a.out.display()))?;
    let report = Report::new(
        "simulate-saturation",
        json!({"energies_nj": a.energies, "noise": a.noise, "seed": a.seed}),
        json!({"data": path_str(&a.out), "points": samples.len()}),
    )
    .with_ground_truth(
        json!({"amplitude": a.amplitude, "exponent": a.exponent, "saturation_param": a.saturation_param}),
    );
    write_manifest(&report, a.manifest.as_deref())
}

fn fit_saturation_file(path: &Path, photon_energy_ev: f64) -> Result<Output> {
    let rows = read_csv(path, 2, 3)?;
    let samples: Vec<SaturationSample> =
        rows.iter().map(|r| SaturationSample::new(r[0], r[1], r.get(2).copied())).collect();
    let fit = fit_saturation_model(&samples)?;
    let (energy, energy_err) = effective_process_energy(fit.exponent, fit.exponent_err, photon_energy_ev)?;
    let report = Report::new(
        "fit-saturation",
        json!({"data": path_str(path), "photon_energy_ev": photon_energy_ev}),
        json!({
            "fit": fit,
            "plateau": if fit.saturation_param > 0.0 { Some(fit.plateau()) } else { None },
            "effective_process_energy_ev": energy,
            "effective_process_energy_err_ev": energy_err,
        }),
    );
    let data = samples.iter().map(|s| vec![s.energy_nj, s.intensity, saturation_model(s.energy_nj, &fit)]).collect();
    let (lo, hi) =
        samples.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), s| (lo.min(s.energy_nj), hi.max(s.energy_nj)));
    let curve = (0..MODEL_CURVE_POINTS)
        .map(|i| {
            let e = lo + (hi - lo) * i as f64 / (MODEL_CURVE_POINTS - 1) as f64;
            vec![e, saturation_model(e, &fit)]
        })
        .collect();
    Ok(Output::new(report)
        .with_plot(Plot::new("saturation_data", &["energy_nj", "intensity", "model"], data))
        .with_plot(Plot::new("saturation_model", &["energy_nj", "model"], curve)))
}

fn method_of(m: MethodArg) -> Option<SilMethod> {
    match m {
        MethodArg::Circle => Some(SilMethod::Circle),
        MethodArg::Ellipse => Some(SilMethod::Ellipse),
        MethodArg::Profile => Some(SilMethod::Profile),
        MethodArg::All => None,
    }
}

fn detect_sil_cmd(a: &DetectSilArgs) -> Result<ExitCode> {
    let d = &a.dest;
    dispatch(
        "detect-sil",
        a.map.as_deref(),
        d.batch.as_deref(),
        d.report.out.as_deref(),
        d.report.plot_data.as_deref(),
        |p| detect_sil_file(p, a.method),
    )
}

fn detect_sil_file(path: &Path, method: MethodArg) -> Result<Output> {
    let map = read_map(path)?;
    let results = match method_of(method) {
        Some(m) => to_value(&detect_sil(&map, m)?),
        None => {
            let fits: Vec<(SilMethod, Result<SilFit, _>)> =
                SilMethod::ALL.iter().map(|&m| (m, detect_sil(&map, m))).collect();
            let ok: Vec<&SilFit> = fits.iter().filter_map(|(_, f)| f.as_ref().ok()).collect();
            if ok.is_empty() {
                let (_, first) = fits.into_iter().next().expect("three methods");
                return Err(first.unwrap_err().into());
            }
            let spread =
                ok.iter().flat_map(|a| ok.iter().map(move |b| a.center.distance(b.center))).fold(0.0, f64::max);
            let mut obj = serde_json::Map::new();
            for (m, f) in &fits {
                let v = match f {
                    Ok(fit) => to_value(fit),
                    Err(e) => json!({"error": e.to_string()}),
                };
                obj.insert(m.name().into(), v);
            }
            obj.insert("max_center_disagreement_um".into(), json!(spread));
            Value::Object(obj)
        }
    };
    let report = Report::new("detect-sil", json!({"map": path_str(path), "method": method_name(method)}), results);
    let mut output = Output::new(report);
    if let Ok(profile) = detect_sil_center_profile(&map) {
        let px = map.pixel_size();
        let row = (profile.horizontal.line_coordinate / px).round() as usize;
        let col = (profile.vertical.line_coordinate / px).round() as usize;
        let along = |values: &[f64]| values.iter().enumerate().map(|(i, &v)| vec![i as f64 * px, v]).collect();
        output = output
            .with_plot(Plot::new("sil_row_profile", &["x_um", "counts"], along(map.row(row))))
            .with_plot(Plot::new("sil_column_profile", &["y_um", "counts"], along(&map.column(col))));
    }
    Ok(output)
}

fn method_name(m: MethodArg) -> &'static str {
    method_of(m).map_or("all", SilMethod::name)
}

fn locate_emitter_cmd(a: &LocateEmitterArgs) -> Result<ExitCode> {
    let d = &a.dest;
    dispatch(
        "locate-emitter",
        a.map.as_deref(),
        d.batch.as_deref(),
        d.report.out.as_deref(),
        d.report.plot_data.as_deref(),
        |p| locate_emitter_file(p, &a.roi),
    )
}

fn locate_emitter_file(path: &Path, roi: &Roi) -> Result<Output> {
    let map = read_map(path)?;
    let fit = locate_emitter(&map, roi)?;
    let report = Report::new(
        "locate-emitter",
        json!({"map": path_str(path), "roi": [roi.x0, roi.y0, roi.x1, roi.y1]}),
        to_value(&fit),
    );
    let px = map.pixel_size();
    let row = ((fit.center.y / px).round().max(0.0) as usize).min(map.rows() - 1);
    let line = map.row(row).iter().enumerate().map(|(i, &v)| vec![i as f64 * px, v]).collect();
    Ok(Output::new(report).with_plot(Plot::new("emitter_row_profile", &["x_um", "counts"], line)))
}

/// A bare SIL fit, or the named method of a `--method all` report.
fn sil_fit_from(value: Value, method: SingleMethod, path: &Path) -> Result<SilFit> {
    let value = if value.get("center").is_some() {
        value
    } else {
        let name = match method {
            SingleMethod::Circle => "circle",
            SingleMethod::Ellipse => "ellipse",
            SingleMethod::Profile => "profile",
        };
        value.get(name).cloned().ok_or_else(|| anyhow!("{} holds no {name} SIL fit", path.display()))?
    };
    serde_json::from_value(value).with_context(|| format!("{} does not hold a usable SIL fit", path.display()))
}

fn displace_cmd(a: &DisplaceArgs) -> Result<ExitCode> {
    let sil = sil_fit_from(read_results(&a.sil).with_context(|| path_str(&a.sil))?, a.sil_method, &a.sil)?;
    let emitter: EmitterFit = serde_json::from_value(read_results(&a.emitter).with_context(|| path_str(&a.emitter))?)
        .with_context(|| format!("{} does not hold an emitter fit", a.emitter.display()))?;
    let displacement = emitter_sil_displacement(&sil, &emitter, a.magnification)?;
    let report = Report::new(
        "displace",
        json!({"sil": path_str(&a.sil), "emitter": path_str(&a.emitter), "magnification": a.magnification}),
        json!({
            "sil_method": sil.method,
            "apparent_offset_um": emitter.center - sil.center,
            "displacement_um": displacement,
            "distance_um": displacement.norm(),
        }),
    );
    emit(&Output::new(report), a.report.out.as_deref(), a.report.plot_data.as_deref(), None)?;
    Ok(ExitCode::SUCCESS)
}

fn g2_cmd(a: &G2Args) -> Result<ExitCode> {
    if let Some(rho) = a.rho {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(UsageError(format!("--rho must lie in (0, 1], got {rho}")).into());
        }
    }
    let d = &a.dest;
    dispatch(
        "g2",
        a.stream.as_deref(),
        d.batch.as_deref(),
        d.report.out.as_deref(),
        d.report.plot_data.as_deref(),
        |p| g2_file(p, a.bin_ps, a.max_delay_ps, a.rho),
    )
}

fn g2_file(path: &Path, bin_ps: u64, max_delay_ps: u64, rho: Option<f64>) -> Result<Output> {
    let file = read_stream(path)?;
    if file.resorted {
        eprintln!("warning: {}: events were out of order and have been sorted", path.display());
    }
    let stream = &file.stream;
    let hist = build_g2(stream, bin_ps, max_delay_ps)?;
    let (raw, raw_err) = hist.g2_zero();
    let corrected = rho.map(|r| g2_background_correct(raw, r)).transpose()?;
    let class = classify_emitter_count(corrected.map_or(raw, |c| c.value));
    let report = Report::new(
        "g2",
        json!({"stream": path_str(path), "bin_ps": bin_ps, "max_delay_ps": max_delay_ps, "rho": rho}),
        json!({
            "g2_zero_raw": raw,
            "g2_zero_err": raw_err,
            "g2_zero_corrected": corrected.map(|c| c.value),
            "corrected_clamped": corrected.map(|c| c.clamped),
            "classification": class.name(),
            "emitter_count": class,
            "channel0_events": stream.channel_times(0).len(),
            "channel1_events": stream.channel_times(1).len(),
            "duration_ps": stream.duration_ps(),
            "normalization_constant": hist.normalization_constant,
            "resorted": file.resorted,
        }),
    );
    let rows = hist
        .delays_ps
        .iter()
        .zip(&hist.normalized)
        .zip(&hist.raw_coincidences)
        .map(|((&d, &g), &n)| vec![d as f64, g, n as f64])
        .collect();
    Ok(Output::new(report).with_plot(Plot::new("g2", &["delay_ps", "g2", "coincidences"], rows)))
}

fn fit_power_cmd(a: &FitPowerSaturationArgs) -> Result<ExitCode> {
    let d = &a.dest;
    dispatch(
        "fit-power-saturation",
        a.data.as_deref(),
        d.batch.as_deref(),
        d.report.out.as_deref(),
        d.report.plot_data.as_deref(),
        |p| fit_power_file(p, !a.no_background),
    )
}

fn fit_power_file(path: &Path, fit_background: bool) -> Result<Output> {
    let samples: Vec<PowerSample> =
        read_csv(path, 2, 2)?.iter().map(|r| PowerSample { power_mw: r[0], counts: r[1] }).collect();
    let fit = fit_power_saturation(&samples, fit_background)?;
    let report = Report::new(
        "fit-power-saturation",
        json!({"data": path_str(path), "fit_background": fit_background}),
        to_value(&fit),
    );
    let rows = samples.iter().map(|s| vec![s.power_mw, s.counts, fit.evaluate(s.power_mw)]).collect();
    Ok(Output::new(report).with_plot(Plot::new("power_saturation", &["power_mw", "counts", "model"], rows)))
}

fn enhance_cmd(a: &EnhanceArgs) -> Result<ExitCode> {
    let load = |path: &Path| -> Result<PowerSaturationFit> {
        serde_json::from_value(read_results(path).with_context(|| path_str(path))?)
            .with_context(|| format!("{} does not hold a power-saturation fit", path.display()))
    };
    let (sil, bulk) = (load(&a.sil)?, load(&a.bulk)?);
    let report = Report::new(
        "enhance",
        json!({"sil": path_str(&a.sil), "bulk": path_str(&a.bulk)}),
        to_value(&enhancement_factors(&sil, &bulk)),
    );
    emit(&Output::new(report), a.report.out.as_deref(), a.report.plot_data.as_deref(), None)?;
    Ok(ExitCode::SUCCESS)
}

fn rayleigh_file(path: &Path) -> Result<Output> {
    let points: Vec<Point2> = read_csv(path, 2, 2)?.iter().map(|r| Point2::new(r[0], r[1])).collect();
    let stats = displacement_stats(&points)?;
    let fit = fit_rayleigh(&stats.radial)?;
    let rows = points.iter().zip(&stats.radial).map(|(p, &r)| vec![p.x, p.y, r]).collect();
    let report = Report::new("rayleigh", json!({"data": path_str(path)}), json!({"stats": stats, "rayleigh": fit}));
    Ok(Output::new(report).with_plot(Plot::new("radial", &["dx_um", "dy_um", "radial_um"], rows)))
}

fn plan_yield_cmd(a: &PlanYieldArgs) -> Result<ExitCode> {
    let curve: Vec<YieldPoint> = read_csv(&a.curve, 2, 2)
        .with_context(|| path_str(&a.curve))?
        .iter()
        .map(|r| YieldPoint { energy_nj: r[0], lambda: r[1] })
        .collect();
    let plan = plan_pulse_energy_with(&curve, a.max_multi, a.subdivisions)?;
    let rows = curve
        .iter()
        .map(|p| {
            let o = poisson_pmf(p.lambda)?;
            Ok(vec![p.energy_nj, p.lambda, o.p1, o.p_multi, o.multi_fraction()])
        })
        .collect::<Result<_>>()?;
    let report = Report::new(
        "plan-yield",
        json!({"curve": path_str(&a.curve), "max_multi": a.max_multi, "subdivisions": a.subdivisions}),
        to_value(&plan),
    );
    let output = Output::new(report).with_plot(Plot::new(
        "yield_curve",
        &["energy_nj", "lambda", "p1", "p_multi", "multi_fraction"],
        rows,
    ));
    emit(&output, a.report.out.as_deref(), a.report.plot_data.as_deref(), None)?;
    Ok(ExitCode::SUCCESS)
}

fn classify_zpl_cmd(a: &ClassifyZplArgs) -> Result<ExitCode> {
    let catalog = match &a.catalog {
        Some(path) => read_catalog(path).with_context(|| path_str(path))?,
        None => ZplCatalog::default(),
    };
    let result = classify_zpl(a.wavelength_nm, &catalog);
    if result.out_of_window {
        eprintln!("warning: {} nm lies outside the detection window", a.wavelength_nm);
    }
    let report = Report::new(
        "classify-zpl",
        json!({
            "wavelength_nm": a.wavelength_nm,
            "catalog": a.catalog.as_deref().map(path_str),
            "catalog_lines": catalog.entries(),
        }),
        to_value(&result),
    );
    emit(&Output::new(report), a.out.as_deref(), None, None)?;
    Ok(ExitCode::SUCCESS)
}
