//! End-to-end checks of the analysis routines against simulator ground truth.

use silforge_core::image::{
    detect_sil, detect_sil_center_profile, detect_sil_profile, emitter_sil_displacement, locate_emitter, ImageError,
    ProfileLine, Roi, DEFAULT_MAGNIFICATION,
};
use silforge_core::photon_stats::{build_g2, classify_emitter_count, EmitterCount};
use silforge_core::physics::{fit_saturation_model, saturation_model};
use silforge_core::simulator::{
    render_map, simulate_hbt, simulate_saturation_sweep, simulate_write_array, EmitterSpec, HbtSpec, SceneSpec,
};
use silforge_core::yield_stats::estimate_lambda_from_occupancy;
use silforge_core::{PhotonStream, Point2, SaturationFitParams, SilMethod};

fn ring_scene(seed: u64) -> SceneSpec {
    // Ring five times the inner background.
    let mut spec = SceneSpec::sil_scene(seed);
    spec.ring_amplitude = 5.0 * spec.inner_background;
    spec
}

#[test]
fn profile_radius_within_half_pixel() {
    for seed in 0..10 {
        let map = render_map(&ring_scene(seed)).unwrap();
        let found = detect_sil_center_profile(&map).unwrap();
        assert!((found.fit.radius - 3.5).abs() <= 0.07, "seed {seed}: {:?}", found.fit);
    }
}

#[test]
fn profile_follows_one_pixel_offset() {
    let px = 0.13;
    for seed in 0..10 {
        let mut spec = ring_scene(seed);
        let base = spec.sil_center;
        spec.sil_center = base + Point2::new(px, 0.0);
        let moved = detect_sil_center_profile(&render_map(&spec).unwrap()).unwrap().fit.center;
        let shift = moved - base;
        assert!((shift.x - px).abs() <= 0.5 * px && shift.y.abs() <= 0.5 * px, "seed {seed}: {shift:?}");
    }
}

#[test]
fn no_ring_means_no_peaks() {
    let mut spec = SceneSpec::sil_scene(3);
    spec.ring_amplitude = 0.0;
    spec.interface_background = spec.inner_background;
    let map = render_map(&spec).unwrap();
    let mid = map.rows() / 2;
    assert!(matches!(detect_sil_profile(&map, ProfileLine::Row(mid)), Err(ImageError::PeaksNotFound(_))));
    for method in SilMethod::ALL {
        assert!(matches!(detect_sil(&map, method), Err(ImageError::PeaksNotFound(_))));
    }
}

#[test]
fn methods_agree_exactly_on_symmetric_noiseless_ring() {
    let mut spec = SceneSpec::sil_scene(0);
    spec.noise = false;
    let map = render_map(&spec).unwrap();
    let fits: Vec<_> = SilMethod::ALL.iter().map(|&m| detect_sil(&map, m).unwrap()).collect();
    for fit in &fits {
        assert!(fit.center.distance(spec.sil_center) < 1e-6, "{fit:?}");
    }
}

#[test]
fn methods_agree_on_noisy_maps() {
    for seed in 0..20 {
        let mut spec = SceneSpec::sil_scene(seed);
        spec.sil_center = spec.sil_center + Point2::new(0.05 * (seed % 5) as f64, -0.04 * (seed % 3) as f64);
        let map = render_map(&spec).unwrap();
        let centers: Vec<Point2> = SilMethod::ALL.iter().map(|&m| detect_sil(&map, m).unwrap().center).collect();
        for a in &centers {
            for b in &centers {
                assert!(a.distance(*b) <= 0.3, "seed {seed}: {centers:?}");
            }
            assert!(a.distance(spec.sil_center) <= 0.1, "seed {seed}: {centers:?}");
        }
    }
}

#[test]
fn planted_offset_recovered() {
    let truth = Point2::new(0.26, 0.06);
    for seed in 0..10 {
        let mut spec = SceneSpec::sil_scene(seed);
        let apparent = spec.sil_center + Point2::new(DEFAULT_MAGNIFICATION * truth.x, DEFAULT_MAGNIFICATION * truth.y);
        spec.emitters.push(EmitterSpec {
            x: apparent.x,
            y: apparent.y,
            z: 0.0,
            peak_counts: 300.0,
            sigma_lat: 0.15,
            sigma_ax: 0.5,
        });
        let map = render_map(&spec).unwrap();
        let emitter = locate_emitter(&map, &Roi::centered(apparent, 0.65)).unwrap();
        for method in SilMethod::ALL {
            let sil = detect_sil(&map, method).unwrap();
            let d = emitter_sil_displacement(&sil, &emitter, DEFAULT_MAGNIFICATION).unwrap();
            assert!(d.distance(truth) <= 0.05, "seed {seed} {method:?}: {d:?}");
        }
    }
}

fn hbt(n_emitters: u32, emitter_rate: f64, background_rate: f64, duration_s: f64, seed: u64) -> PhotonStream {
    simulate_hbt(&HbtSpec { n_emitters, emitter_rate, background_rate, antibunching_ns: 5.0, duration_s, seed })
        .unwrap()
}

#[test]
fn background_only_is_flat() {
    let stream = hbt(0, 0.0, 2e5, 10.0, 11);
    let h = build_g2(&stream, 50_000, 500_000).unwrap();
    for (d, g) in h.delays_ps.iter().zip(&h.normalized) {
        assert!((g - 1.0).abs() <= 0.05, "delay {d}: {g}");
    }
}

#[test]
fn single_emitter_is_antibunched() {
    let h = build_g2(&hbt(1, 1e5, 0.0, 2.0, 5), 1_000, 20_000).unwrap();
    assert!(h.g2_zero().0 < 0.1);
    assert_eq!(classify_emitter_count(h.g2_zero().0), EmitterCount::Single);
}

/// Counts cross-channel pairs with |t₁ − t₀| < w/2 by direct enumeration.
fn brute_force_zero_bin(stream: &PhotonStream, w: u64) -> u64 {
    let events = stream.events();
    let mut count = 0;
    for (i, a) in events.iter().enumerate() {
        for b in &events[i + 1..] {
            if 2 * (b.time_ps - a.time_ps) > w {
                break;
            }
            if a.channel != b.channel {
                let d = if a.channel == 1 { -((b.time_ps - a.time_ps) as i64) } else { (b.time_ps - a.time_ps) as i64 };
                // Half-open bin [−w/2, w/2) on τ = t₁ − t₀.
                if 2 * d >= -(w as i64) && 2 * d < w as i64 {
                    count += 1;
                }
            }
        }
    }
    count
}

#[test]
fn two_emitters_match_pair_count_and_theory() {
    let stream = hbt(2, 2e5, 0.0, 10.0, 21);
    let h = build_g2(&stream, 1_000, 10_000).unwrap();
    let (g0, err) = h.g2_zero();
    let centre = h.delays_ps.len() / 2;
    assert_eq!(h.raw_coincidences[centre], brute_force_zero_bin(&stream, 1_000));
    assert!((g0 - 0.5).abs() <= 3.0 * err, "{g0} ± {err}");
}

#[test]
fn stream_rates_match_spec() {
    let stream = hbt(3, 4e4, 1e4, 5.0, 8);
    let expected = 5.0 * (3.0 * 4e4 + 1e4);
    assert!((stream.len() as f64 - expected).abs() <= 3.0 * expected.sqrt());
}

#[test]
fn occupancy_fraction_and_multi_sites() {
    let seeds = 2000;
    let mut occupied = 0usize;
    for seed in 0..seeds {
        occupied += simulate_write_array(30, 0.35, seed).unwrap().iter().filter(|&&k| k > 0).count();
    }
    let frac = occupied as f64 / (30 * seeds) as f64;
    assert!((frac - 0.2953).abs() < 0.005, "{frac}");

    let sites = simulate_write_array(1_000_000, 0.1, 77).unwrap();
    let multi = sites.iter().filter(|&&k| k > 1).count() as f64 / 1e6;
    assert!((multi - 0.004679).abs() < 4.0 * (0.004679f64 / 1e6).sqrt(), "{multi}");
}

/// Exact mean of `−ln(K/n)` for `K ~ Bin(n, e^−λ)`, conditioned on `K > 0`.
fn exact_estimator_mean(n: u32, lambda: f64) -> f64 {
    let p = (-lambda).exp();
    let mut ln_choose = 0.0;
    let (mut total, mut mass) = (0.0, 0.0);
    for k in 1..=n {
        ln_choose += ((n - k + 1) as f64 / k as f64).ln();
        let w = (ln_choose + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp();
        total += w * -(k as f64 / n as f64).ln();
        mass += w;
    }
    total / mass
}

#[test]
fn occupancy_estimator_is_consistent() {
    let mut values = Vec::new();
    for seed in 0..10_000 {
        let sites = simulate_write_array(30, 0.35, seed).unwrap();
        let empty = sites.iter().filter(|&&k| k == 0).count() as u32;
        if let Ok(est) = estimate_lambda_from_occupancy(30, empty, 0.95) {
            values.push(est.lambda);
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    // The estimator carries a +2.07% Jensen bias at 30 sites; the simulated
    // mean must match its exact expectation.
    let exact = exact_estimator_mean(30, 0.35);
    assert!((exact / 0.35 - 1.0 - 0.0207).abs() < 5e-4, "{exact}");
    assert!((mean - exact).abs() < 3.0 * sd / n.sqrt(), "{mean} vs {exact}");
    assert!(mean / 0.35 - 1.0 < 0.03, "{mean}");
}

#[test]
fn write_array_sites_are_exchangeable() {
    // First and second half of each array share their summary statistics.
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for seed in 0..500 {
        let sites = simulate_write_array(40, 0.8, seed).unwrap();
        a.extend(sites[..20].iter().map(|&k| k as f64));
        b.extend(sites[20..].iter().map(|&k| k as f64));
    }
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64)
    };
    let ((ma, va), (mb, vb)) = (stats(&a), stats(&b));
    let se = (0.8f64 * 2.0 / 10_000.0).sqrt();
    assert!((ma - mb).abs() < 4.0 * se);
    assert!((va - vb).abs() < 0.1);
}

#[test]
fn sweep_reaches_plateau_and_fits_back() {
    let truth = SaturationFitParams::new(6e5 * 12.5e-3, 5.75, 12.5e-3).unwrap();
    assert!((truth.plateau() - 6e5).abs() < 1e-6);
    assert!(saturation_model(4.0, &truth) / truth.plateau() > 0.95);
    let energies: Vec<f64> = (0..5).map(|i| 1.4 + 0.65 * i as f64).collect();
    let samples = simulate_saturation_sweep(&truth, &energies, 0.02, 0).unwrap();
    let fit = fit_saturation_model(&samples).unwrap();
    assert!((fit.exponent - 5.75).abs() <= 3.0 * fit.exponent_err, "{fit:?}");
    for s in &samples {
        let rel = saturation_model(s.energy_nj, &fit) / saturation_model(s.energy_nj, &truth) - 1.0;
        assert!(rel.abs() < 0.06, "{rel} at {}", s.energy_nj);
    }
}
