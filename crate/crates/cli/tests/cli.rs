//! Black-box tests of the `silforge` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SUBCOMMANDS: [&str; 14] = [
    "simulate-map",
    "simulate-hbt",
    "simulate-array",
    "simulate-saturation",
    "fit-saturation",
    "detect-sil",
    "locate-emitter",
    "displace",
    "g2",
    "fit-power-saturation",
    "enhance",
    "rayleigh",
    "plan-yield",
    "classify-zpl",
];

fn silforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_silforge"))
        .args(args)
        .current_dir(dir)
        .env_remove("SILFORGE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = silforge(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

fn succeed(dir: &Path, args: &[&str]) {
    let out = silforge(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares `--help` output against the stored copy; set `UPDATE_GOLDEN=1`
/// to rewrite the stored copies.
#[test]
fn help_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut names = vec!["silforge"];
    names.extend(SUBCOMMANDS);
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for name in names {
        let args: Vec<&str> = if name == "silforge" { vec!["--help"] } else { vec![name, "--help"] };
        let out = silforge(dir.path(), &args);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let path = golden_dir().join(format!("{name}.txt"));
        if update {
            fs::write(&path, &text).unwrap();
        } else {
            let expected =
                fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
            assert_eq!(text, expected, "help of {name} changed; rerun with UPDATE_GOLDEN=1 if intended");
        }
    }
}

#[test]
fn help_lists_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    let expected: &[(&str, &[&str])] = &[
        ("simulate-map", &["--spec", "--out", "--manifest", "--seed", "--threads"]),
        ("simulate-hbt", &["--spec", "--out", "--manifest", "--seed"]),
        ("simulate-array", &["--sites", "--lambda", "--seed", "--confidence", "--out"]),
        ("fit-saturation", &["--data", "--photon-energy-ev", "--batch", "--out", "--plot-data"]),
        ("detect-sil", &["--map", "--method", "--batch", "--out", "--plot-data"]),
        ("locate-emitter", &["--map", "--roi", "--batch"]),
        ("displace", &["--sil", "--emitter", "--magnification", "--sil-method"]),
        ("g2", &["--stream", "--bin-ps", "--max-delay-ps", "--rho", "--batch"]),
        ("fit-power-saturation", &["--data", "--no-background"]),
        ("enhance", &["--sil", "--bulk"]),
        ("rayleigh", &["--data", "--batch"]),
        ("plan-yield", &["--curve", "--max-multi", "--subdivisions"]),
        ("classify-zpl", &["--wavelength-nm", "--catalog", "--out"]),
    ];
    for (sub, flags) in expected {
        let help = String::from_utf8(silforge(dir.path(), &[sub, "--help"]).stdout).unwrap();
        for flag in *flags {
            assert!(help.contains(flag), "{sub} --help lacks {flag}");
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let usage = silforge(dir.path(), &["detect-sil", "--method", "bogus", "--map", "x"]);
    assert_eq!(usage.status.code(), Some(2));
    // Usage errors come with the flag documentation.
    assert!(String::from_utf8_lossy(&usage.stderr).contains("--plot-data"));

    let missing_seed = silforge(dir.path(), &["simulate-array", "--sites", "30", "--lambda", "0.35"]);
    assert_eq!(missing_seed.status.code(), Some(2));
    assert_eq!(silforge(dir.path(), &["g2", "--stream", "s.hbt", "--rho", "1.5"]).status.code(), Some(2));
    assert_eq!(silforge(dir.path(), &["detect-sil", "--map", "absent.plmap"]).status.code(), Some(1));

    fs::write(dir.path().join("bad.csv"), "1,2\n3,4\n").unwrap();
    assert_eq!(silforge(dir.path(), &["fit-saturation", "--data", "bad.csv"]).status.code(), Some(1));
    assert_eq!(silforge(dir.path(), &[]).status.code(), Some(2));
}

fn write_scene(dir: &Path) {
    // Planted offset (0.26, 0.06) µm seen through a 2.6× lens.
    let scene = r#"{"rows": 80, "cols": 80, "sil_center": {"x": 5.135, "y": 5.135}, "sil_radius": 3.5,
        "ring_amplitude": 100, "ring_width": 0.2, "interface_background": 40, "inner_background": 20,
        "emitters": [{"x": 5.811, "y": 5.291, "peak_counts": 300, "sigma_lat": 0.15, "sigma_ax": 0.5}]}"#;
    fs::write(dir.join("scene.json"), scene).unwrap();
}

#[test]
fn registration_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_scene(d);
    let manifest = ok(d, &["simulate-map", "--spec", "scene.json", "--out", "m.plmap", "--seed", "7"]);
    assert_eq!(manifest["tool"], "simulate-map");
    assert_eq!(manifest["ground_truth"]["sil_radius"], 3.5);

    succeed(d, &["detect-sil", "--map", "m.plmap", "--method", "all", "--out", "sil.json", "--plot-data", "plots"]);
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("sil.json")).unwrap()).unwrap();
    assert!(report["results"]["max_center_disagreement_um"].as_f64().unwrap() < 0.3);
    assert!(d.join("plots/sil_row_profile.csv").exists());

    succeed(d, &["locate-emitter", "--map", "m.plmap", "--roi", "5.16,4.64,6.46,5.94", "--out", "em.json"]);
    for method in ["circle", "ellipse", "profile"] {
        let r = ok(d, &["displace", "--sil", "sil.json", "--emitter", "em.json", "--sil-method", method]);
        let disp = &r["results"]["displacement_um"];
        let (dx, dy) = (disp["x"].as_f64().unwrap(), disp["y"].as_f64().unwrap());
        assert!((dx - 0.26).hypot(dy - 0.06) < 0.05, "{method}: ({dx}, {dy})");
    }
}

#[test]
fn simulators_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_scene(d);
    let run = |out: &str, seed: &str| {
        ok(d, &["simulate-map", "--spec", "scene.json", "--out", out, "--seed", seed]);
        fs::read(d.join(out)).unwrap()
    };
    assert_eq!(run("a.plmap", "5"), run("b.plmap", "5"));
    assert_ne!(run("a.plmap", "5"), run("c.plmap", "6"));
    let array = |seed: &str| ok(d, &["simulate-array", "--sites", "30", "--lambda", "0.35", "--seed", seed]);
    assert_eq!(array("1"), array("1"));
    assert_ne!(array("1")["results"]["site_counts"], array("2")["results"]["site_counts"]);
}

#[test]
fn single_emitter_stream_is_classified_single() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = r#"{"n_emitters": 1, "emitter_rate": 1e5, "background_rate": 0, "antibunching_ns": 5, "duration_s": 2}"#;
    fs::write(d.join("hbt.json"), spec).unwrap();
    succeed(d, &["simulate-hbt", "--spec", "hbt.json", "--out", "s.hbt", "--seed", "3", "--manifest", "man.json"]);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(d.join("man.json")).unwrap()).unwrap();
    assert_eq!(manifest["ground_truth"]["expected_g2_zero"], 0.0);
    let r = ok(d, &["g2", "--stream", "s.hbt", "--bin-ps", "1000", "--max-delay-ps", "20000", "--plot-data", "p"]);
    assert_eq!(r["results"]["classification"], "Single");
    assert!(r["results"]["g2_zero_raw"].as_f64().unwrap() < 0.1);
    assert_eq!(fs::read_to_string(d.join("p/g2.csv")).unwrap().lines().count(), 1 + 41);
}

#[test]
fn saturation_sweep_fits_back() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let energies = "1.4,2.05,2.7,3.35,4.0";
    ok(
        d,
        &[
            "simulate-saturation",
            "--amplitude",
            "7500",
            "--exponent",
            "5.75",
            "--saturation-param",
            "0.0125",
            "--energies",
            energies,
            "--seed",
            "0",
            "--out",
            "sweep.csv",
        ],
    );
    let r = ok(d, &["fit-saturation", "--data", "sweep.csv"]);
    let n = r["results"]["fit"]["exponent"].as_f64().unwrap();
    assert!((n - 5.75).abs() <= 0.2, "{n}");
    let energy = r["results"]["effective_process_energy_ev"].as_f64().unwrap();
    assert!((energy - n * 1.57).abs() < 1e-9);
}

fn write_power_sweep(path: &Path, i_sat: f64, p_sat: f64) {
    let mut text = String::from("power_mw,counts\n");
    for p in [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 4.0, 8.0] {
        text += &format!("{p},{}\n", i_sat * p / (p + p_sat));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn enhancement_from_two_power_fits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_power_sweep(&d.join("sil.csv"), 38800.0, 0.181);
    write_power_sweep(&d.join("bulk.csv"), 8600.0, 1.64);
    succeed(d, &["fit-power-saturation", "--data", "sil.csv", "--no-background", "--out", "sil.json"]);
    succeed(d, &["fit-power-saturation", "--data", "bulk.csv", "--no-background", "--out", "bulk.json"]);
    let r = ok(d, &["enhance", "--sil", "sil.json", "--bulk", "bulk.json"]);
    assert!((r["results"]["collection_enhancement"].as_f64().unwrap() - 4.5116).abs() < 1e-3);
    assert!((r["results"]["power_intensification"].as_f64().unwrap() - 9.0608).abs() < 1e-3);
}

#[test]
fn plan_yield_accepts_unit_lambda_when_unconstrained() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("curve.csv"), "energy_nj,lambda\n10,0.1\n12,0.35\n14,1.0\n").unwrap();
    let r = ok(d, &["plan-yield", "--curve", "curve.csv", "--max-multi", "1"]);
    assert_eq!(r["results"]["lambda"], 1.0);
    assert_eq!(r["results"]["energy_nj"], 14.0);
    let strict = ok(d, &["plan-yield", "--curve", "curve.csv", "--max-multi", "0.1"]);
    assert_eq!(strict["results"]["lambda"], 0.1);
}

#[test]
fn rayleigh_and_zpl() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("offsets.csv"), "dx,dy\n0.1,0.0\n-0.1,0.0\n0.0,0.1\n0.0,-0.1\n").unwrap();
    let r = ok(d, &["rayleigh", "--data", "offsets.csv", "--plot-data", "p"]);
    // σ̂ = √(Σr²/2N) with all radii 0.1.
    assert!((r["results"]["rayleigh"]["sigma"].as_f64().unwrap() - 0.1 / 2f64.sqrt()).abs() < 1e-12);
    assert!(d.join("p/radial.csv").exists());

    let z = ok(d, &["classify-zpl", "--wavelength-nm", "861.4"]);
    assert_eq!(z["results"]["class"]["label"], "V1");
    fs::write(d.join("lines.zplcat"), "# zplcat v1\nX=940,1\n").unwrap();
    let z = ok(d, &["classify-zpl", "--wavelength-nm", "940.5", "--catalog", "lines.zplcat"]);
    assert_eq!(z["results"]["class"]["label"], "X");
}

#[test]
fn batch_mode_is_order_independent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_scene(d);
    fs::create_dir(d.join("maps")).unwrap();
    for seed in ["1", "2", "3", "4"] {
        let out = format!("maps/m{seed}.plmap");
        ok(d, &["simulate-map", "--spec", "scene.json", "--out", &out, "--seed", seed]);
    }
    let run = |out: &str, threads: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_silforge"))
            .args(["detect-sil", "--batch", "maps", "--method", "circle", "--out", out])
            .current_dir(d)
            .env("SILFORGE_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("serial", "1");
    run("parallel", "4");
    for seed in 1..=4 {
        let name = format!("m{seed}.plmap.json");
        assert_eq!(fs::read(d.join("serial").join(&name)).unwrap(), fs::read(d.join("parallel").join(&name)).unwrap());
    }

    fs::write(d.join("maps/broken.plmap"), "not a map\n").unwrap();
    let o = silforge(d, &["detect-sil", "--batch", "maps", "--out", "again"]);
    assert_eq!(o.status.code(), Some(1));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["results"]["failed"], 1);
    assert_eq!(summary["results"]["processed"], 5);
    assert!(d.join("again/m1.plmap.json").exists());
}
