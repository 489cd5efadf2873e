use cochlea_tl::harness::stimulus::StimulusSpec;
use cochlea_tl::lut::FilterLut;
use cochlea_tl::params::ModelParams;
use cochlea_tl::tl::oracle::velocity_response;
use cochlea_tl::tl::solver::{compute_g, history_sum};
use cochlea_tl::tl::*;
use cochlea_tl::Error;
use proptest::prelude::*;

fn small_model(n: usize, fs: f64) -> TlModel {
    let p = ModelParams {
        n,
        fs,
        ..Default::default()
    };
    TlModel::new(p, TlConfig::default()).unwrap()
}

/// Table whose every entry is a one-tap filter `b_1 = g·0.2` with unit DC gain.
fn ramp_lut(p: &ModelParams) -> FilterLut {
    let mut lut = FilterLut::identity(p.n, 30, p.k, p.g_min, p.g_max);
    for n in 0..p.n {
        for gi in 0..lut.n_g {
            let b1 = 0.2 * lut.g_value(gi) / p.g_max;
            let off = (n * lut.n_g + gi) * p.k;
            lut.b[off] = b1;
            lut.eps[n * lut.n_g + gi] = -b1;
        }
    }
    lut
}

fn tone(f: f64, amp: f64, len: usize, fs: f64) -> Vec<f64> {
    (0..len)
        .map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin())
        .collect()
}

fn knees() -> Knees {
    Knees::new(-100.0, -80.0).unwrap()
}

#[test]
fn g_term_examples() {
    let t = Triplet {
        rho: -0.5,
        delta: 0.2,
        psi: 10.0,
    };
    let w = 1000.0;
    assert_eq!(compute_g(w, &t, 1.0, 0.0, 0.0), w * w);
    assert_eq!(compute_g(w, &t, 0.0, 1.0, 0.0), 0.2 * w);
    assert_eq!(compute_g(w, &t, 0.0, 0.0, 1.0), 0.5 * w * w);
    let passive = Triplet::passive(0.3);
    assert_eq!(compute_g(w, &passive, 0.0, 0.0, 123.0), 0.0);
}

#[test]
fn history_sum_examples() {
    let b = [0.5, -0.25, 0.125];
    assert_eq!(history_sum(&[0.0; 3], &[1.0, 2.0, 3.0]), 0.0);
    // sifting: one nonzero sample j steps back picks b_j
    assert_eq!(history_sum(&b, &[0.0, 4.0, 0.0]), -1.0);
    // constant history sums the coefficients
    assert_eq!(history_sum(&b, &[2.0; 3]), 2.0 * 0.375);
}

#[test]
fn zero_input_stays_zero() {
    let m = small_model(60, 200e3);
    let lut = ramp_lut(&m.params);
    let silence = vec![0.0; 400];
    let runs = [
        RunOptions::new(Mechanics::Passive, Filters::None, vec![0, 30, 59]),
        RunOptions::new(Mechanics::Compressive, Filters::Dynamic(&lut), vec![0, 30, 59]).with_knees(knees()),
    ];
    for opts in &runs {
        let tr = m.simulate(&silence, opts).unwrap();
        for row in tr.v.iter().chain(&tr.y) {
            assert!(row.iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn silence_keeps_full_strength_and_loud_input_drives_it_to_the_floor() {
    let m = small_model(60, 200e3);
    let lut = ramp_lut(&m.params);
    let p = &m.params;
    let opts = RunOptions::new(Mechanics::Starting, Filters::Dynamic(&lut), (0..60).collect()).with_knees(knees());
    let quiet = m.simulate(&vec![0.0; 200], &opts).unwrap();
    assert!(quiet.g.iter().flatten().all(|&g| g == p.g_max));
    // a sustained tone far above the second knee at the basal sections
    let loud = m.simulate(&tone(20e3, 1e4, 2000, p.fs), &opts).unwrap();
    let n20 = (0..60).min_by(|&a, &b| {
        let d = |n: usize| (m.geometry.sections[n].cf_hz - 20e3).abs();
        d(a).total_cmp(&d(b))
    });
    let row = loud.row(n20.unwrap()).unwrap();
    assert_eq!(*loud.g[row].last().unwrap(), p.g_min);
}

#[test]
fn identity_table_reproduces_the_plain_model_bit_for_bit() {
    let m = small_model(60, 200e3);
    let p = &m.params;
    let lut = FilterLut::identity(p.n, 30, p.k, p.g_min, p.g_max);
    let x = tone(15e3, 50.0, 1500, p.fs);
    let rec: Vec<usize> = (0..60).step_by(7).collect();
    let plain = RunOptions::new(Mechanics::Compressive, Filters::None, rec.clone()).with_knees(knees());
    let star = RunOptions::new(Mechanics::Compressive, Filters::Dynamic(&lut), rec).with_knees(knees());
    let a = m.simulate(&x, &plain).unwrap();
    let b = m.simulate(&x, &star).unwrap();
    assert_eq!(a.v, b.v);
    assert_eq!(a.y, b.y);
}

#[test]
fn doubling_a_soft_input_doubles_the_response() {
    let m = small_model(60, 200e3);
    let lut = ramp_lut(&m.params);
    // knees far above anything this input reaches: no updates fire
    let quiet_knees = Knees::new(100.0, 120.0).unwrap();
    let x = tone(18e3, 1e-3, 1500, m.params.fs);
    let x2: Vec<f64> = x.iter().map(|s| 2.0 * s).collect();
    let opts = RunOptions::new(Mechanics::Compressive, Filters::Dynamic(&lut), vec![10, 30, 50]).with_knees(quiet_knees);
    let a = m.simulate(&x, &opts).unwrap();
    let b = m.simulate(&x2, &opts).unwrap();
    for (ra, rb) in a.v.iter().zip(&b.v) {
        let peak = ra.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (va, vb) in ra.iter().zip(rb) {
            assert!((vb - 2.0 * va).abs() <= 0.01 * peak);
        }
    }
}

#[test]
fn dynamic_strength_changes_only_on_update_steps() {
    let m = small_model(60, 200e3);
    let lut = ramp_lut(&m.params);
    let x = tone(20e3, 1e3, 1200, m.params.fs);
    for period in [1usize, 6, 12] {
        let opts = RunOptions::new(Mechanics::Starting, Filters::Dynamic(&lut), (0..60).collect())
            .with_knees(knees())
            .with_update_period(period);
        let tr = m.simulate(&x, &opts).unwrap();
        let mut changes = 0;
        for row in &tr.g {
            for i in 1..row.len() {
                if row[i] != row[i - 1] {
                    changes += 1;
                    // sample i is recorded before step i, so the update that
                    // produced it ran at the start of step i − 1
                    assert_eq!((i - 1) % period, 0, "period {period}, sample {i}");
                }
            }
        }
        assert!(changes > 0);
    }
}

#[test]
fn tighter_tolerances_converge() {
    let p = ModelParams {
        n: 60,
        ..Default::default()
    };
    let x = tone(18e3, 50.0, 800, p.fs);
    let run = |rtol: f64| {
        let cfg = TlConfig {
            rtol,
            atol: 1e-12,
            ..Default::default()
        };
        let m = TlModel::new(p.clone(), cfg).unwrap();
        let opts = RunOptions::new(Mechanics::Compressive, Filters::None, vec![20]).with_knees(knees());
        m.simulate(&x, &opts).unwrap().v.remove(0)
    };
    let coarse = run(1e-4);
    let fine = run(1e-8);
    let peak = fine.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = coarse.iter().zip(&fine).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err < 1e-3 * peak, "{err} vs {peak}");
}

#[test]
fn too_few_substeps_is_a_stiffness_error() {
    let p = ModelParams {
        n: 60,
        ..Default::default()
    };
    let cfg = TlConfig {
        rtol: 1e-14,
        atol: 1e-30,
        max_substeps: 2,
        ..Default::default()
    };
    let m = TlModel::new(p, cfg).unwrap();
    let opts = RunOptions::new(Mechanics::Starting, Filters::None, vec![0]);
    let err = m.simulate(&tone(10e3, 1.0, 50, 200e3), &opts).unwrap_err();
    assert!(matches!(err, Error::Stiffness { .. }), "{err}");
}

#[test]
fn passive_tone_matches_linear_solve() {
    let m = small_model(100, 100e3);
    let fs = m.params.fs;
    let triplets = vec![Triplet::passive(m.config.passive_delta); 100];
    for f in [6e3, 12e3] {
        let len = (0.03 * fs) as usize;
        let x: Vec<f64> = (0..len).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).cos()).collect();
        let want = velocity_response(&m, &triplets, None, f).unwrap();
        let peak = (0..100).max_by(|&a, &b| want[a].norm().total_cmp(&want[b].norm())).unwrap();
        let rec = vec![5, peak];
        let tr = m.simulate(&x, &RunOptions::new(Mechanics::Passive, Filters::None, rec.clone())).unwrap();
        for (r, &n) in rec.iter().enumerate() {
            let tail = &tr.v[r][len / 2..];
            let (amp, _) = cochlea_tl::harness::analysis::sinusoid_fit(tail, f, fs);
            let o = want[n].norm();
            assert!((amp / o - 1.0).abs() < 1e-3, "f {f} n {n}: {amp} vs {o}");
        }
    }
}

#[test]
fn passive_click_decays_after_the_wave_passes() {
    let m = small_model(100, 100e3);
    let fs = m.params.fs;
    let spec = StimulusSpec::click(60.0, 0.15, fs);
    let rec = vec![10, 40, 80, 99];
    let tr = m
        .simulate(&spec.generate().unwrap(), &RunOptions::new(Mechanics::Passive, Filters::None, rec))
        .unwrap();
    // 10 ms envelope; the first 40 ms hold the direct wave and its reflection
    // off the apex, after which only slow fluid modes are left
    let w = (10e-3 * fs) as usize;
    for row in &tr.v {
        let env: Vec<f64> = row.chunks(w).map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect();
        // slow modes beat, so require decay on the log-envelope trend
        let tail: Vec<f64> = env[4..].iter().map(|e| e.ln()).collect();
        let t: Vec<f64> = (0..tail.len()).map(|i| i as f64).collect();
        let slope = cochlea_tl::harness::analysis::linear_slope(&t, &tail).unwrap();
        assert!(slope < 0.0, "{env:?}");
        assert!(env[4..].iter().all(|&e| e < env[0].max(env[1])));
        assert!(env[env.len() - 1] < 0.1 * env[0].max(env[1]));
    }
}

#[test]
fn missing_knees_and_bad_sections_are_rejected() {
    let m = small_model(60, 200e3);
    let none = RunOptions::new(Mechanics::Compressive, Filters::None, vec![0]);
    assert!(matches!(m.simulate(&[0.0], &none), Err(Error::Config(_))));
    let bad = RunOptions::new(Mechanics::Passive, Filters::None, vec![60]);
    assert!(matches!(m.simulate(&[0.0], &bad), Err(Error::Config(_))));
    let p = ModelParams {
        n: 60,
        fs: 20e3,
        ..Default::default()
    };
    let slow = TlModel::new(p, TlConfig::default()).unwrap();
    let opts = RunOptions::new(Mechanics::Starting, Filters::None, vec![0]);
    assert!(matches!(slow.simulate(&[0.0], &opts), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn passive_line_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, f in 2e3f64..20e3) {
        let m = small_model(40, 100e3);
        let fs = m.params.fs;
        let x = tone(f, 1.0, 300, fs);
        let y: Vec<f64> = (0..300).map(|i| if i % 37 == 0 { 1.0 } else { 0.0 }).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let cfg = TlConfig { atol: 1e-12, rtol: 1e-8, ..Default::default() };
        let m = TlModel::new(m.params.clone(), cfg).unwrap();
        let opts = RunOptions::new(Mechanics::Passive, Filters::None, vec![3, 20]);
        let rx = m.simulate(&x, &opts).unwrap();
        let ry = m.simulate(&y, &opts).unwrap();
        let rm = m.simulate(&mix, &opts).unwrap();
        for r in 0..2 {
            let scale = rm.v[r].iter().chain(&rx.v[r]).chain(&ry.v[r]).fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..300 {
                let want = a * rx.v[r][i] + b * ry.v[r][i];
                prop_assert!((rm.v[r][i] - want).abs() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn delayed_input_gives_delayed_output(shift in 1usize..40) {
        let m = small_model(40, 100e3);
        let x = tone(8e3, 1.0, 200, m.params.fs);
        let mut xd = vec![0.0; shift];
        xd.extend_from_slice(&x);
        let cfg = TlConfig { atol: 1e-12, rtol: 1e-8, ..Default::default() };
        let m = TlModel::new(m.params.clone(), cfg).unwrap();
        let opts = RunOptions::new(Mechanics::Passive, Filters::None, vec![10]);
        let a = m.simulate(&x, &opts).unwrap();
        let b = m.simulate(&xd, &opts).unwrap();
        let scale = a.v[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..200 {
            prop_assert!((b.v[0][i + shift] - a.v[0][i]).abs() <= 1e-6 * scale);
        }
    }
}

#[test]
fn coupling_solve_leaves_a_tiny_residual() {
    use rand::{Rng, SeedableRng};
    let m = small_model(250, 200e3);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let n = m.n_sections();
    for _ in 0..20 {
        let (mut lower, mut diag, mut upper) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            let (l, d, u) = m.geometry.coupling(i);
            lower.push(l);
            diag.push(d + 1.0 + rng.gen_range(-0.5..0.5));
            upper.push(u);
        }
        let a = tridiag::Tridiagonal::new(lower, diag, upper).unwrap();
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = a.solve(&rhs).unwrap();
        let back = a.mul_vec(&q);
        let scale = rhs.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        let res = back.iter().zip(&rhs).fold(0.0f64, |s, (x, y)| s.max((x - y).abs()));
        assert!(res < 1e-10 * scale, "{res}");
    }
}

#[test]
fn table_pinned_at_reference_strength_matches_the_plain_model() {
    use cochlea_tl::filter::fit_filter;
    use cochlea_tl::lut::section_omega_bm;
    use cochlea_tl::wkb::beta_target;
    let m = small_model(60, 200e3);
    let p = &m.params;
    // every column holds the fit to the reference-strength target (beta = 1)
    let mut lut = FilterLut::identity(p.n, 30, p.k, p.g_min, p.g_max);
    for (n, &w) in section_omega_bm(p).iter().enumerate() {
        let beta = beta_target(w, p.g_ref, p).unwrap();
        let (f, _) = fit_filter(&beta, w, p.g_ref, p).unwrap();
        for gi in 0..lut.n_g {
            let off = (n * lut.n_g + gi) * p.k;
            lut.b[off..off + p.k].copy_from_slice(&f.b);
            lut.eps[n * lut.n_g + gi] = f.eps;
        }
    }
    let cal = calibrate_knees(&m, None).unwrap();
    let spec = StimulusSpec::tone(cal.cf_hz, 60.0, 0.01, p.fs);
    let x = spec.generate().unwrap();
    let rec = vec![cal.section, 10, 50];
    let plain = m
        .simulate(&x, &RunOptions::new(Mechanics::Compressive, Filters::None, rec.clone()).with_knees(cal.knees()))
        .unwrap();
    let fixed = Filters::Fixed { lut: &lut, g: p.g_ref };
    let star = m
        .simulate(&x, &RunOptions::new(Mechanics::Compressive, fixed, rec).with_knees(cal.knees()))
        .unwrap();
    for (a, b) in plain.v.iter().zip(&star.v) {
        let rms = cochlea_tl::harness::analysis::rms(a);
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        assert!(cochlea_tl::harness::analysis::rms(&diff) <= 1e-6 * rms);
    }
}

#[test]
fn strength_dips_while_the_click_response_rings() {
    let m = small_model(120, 200e3);
    let p = &m.params;
    let lut = ramp_lut(p);
    let cal = calibrate_knees(&m, None).unwrap();
    let spec = StimulusSpec::click(90.0, 0.008, p.fs);
    let opts = RunOptions::new(Mechanics::Compressive, Filters::Dynamic(&lut), vec![cal.section])
        .with_knees(cal.knees())
        .with_update_period(1);
    let tr = m.simulate(&spec.generate().unwrap(), &opts).unwrap();
    let (v, g) = (&tr.v[0], &tr.g[0]);
    // response energy in windows of one CF period, against mean G there
    let w = (p.fs / cal.cf_hz).round() as usize;
    let energy: Vec<f64> = v.chunks(w).map(|c| c.iter().map(|x| x * x).sum::<f64>()).collect();
    let strength: Vec<f64> = g.chunks(w).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let peak = energy.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let dip = strength.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert!(strength[dip] < p.g_max - 0.3, "{strength:?}");
    // the dip trails the energy peak by at most the envelope smoothing
    assert!(dip >= peak && dip <= peak + 4, "peak {peak} dip {dip}");
    // before the wave arrives and after it dies out G sits near its maximum
    assert!(strength[0] > p.g_max - 1e-9);
    assert!(*strength.last().unwrap() > strength[dip] + 0.5 * (p.g_max - strength[dip]));
}
