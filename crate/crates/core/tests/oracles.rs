use std::f64::consts::PI;

use bloch_beam::bloch::{BandSampler, BlochSolver, LatticeSpec, ParabolicBand, PlaneWaveBand, SolverOptions};
use bloch_beam::orbit::{area_profile, orbit_at, peierls_lift, seed_point, OrbitOptions, SeedRay};
use bloch_beam::pipeline::{analyze_orbit, level_density_sweep, PipelineOptions, SweepOptions};
use bloch_beam::quasimode::eikonal_residual;

fn weak(dirs: &[[i32; 3]]) -> PlaneWaveBand {
    let lattice = LatticeSpec::cubic().with_cosines(0.05, dirs);
    let solver = BlochSolver::new(lattice, SolverOptions { cutoff: 2.0, ..Default::default() }).unwrap();
    PlaneWaveBand::new(solver, 1).unwrap()
}

fn weak_e0(s: &PlaneWaveBand) -> f64 {
    0.09 + s.energy([0.0; 3]).unwrap()
}

#[test]
fn weak_seed_matches_a_dense_scan() {
    let s = weak(&[[1, 0, 0], [0, 1, 0]]);
    let e0 = weak_e0(&s);
    let seed = seed_point(&s, 0.0, e0, [0.0, 0.0], [1.0, 0.0], 0.5, 1e-12).unwrap();
    let h = 1e-4;
    let f = |t: f64| s.energy([t, 0.0, 0.0]).unwrap() - e0;
    let mut t = 0.0;
    while f(t + h) < 0.0 {
        t += h;
    }
    let (fa, fb) = (f(t), f(t + h));
    let scan = t - h * fa / (fb - fa);
    assert!((seed[0] - scan).abs() <= 1e-6 && seed[1] == 0.0, "{seed:?} vs {scan}");
}

#[test]
fn weak_orbit_conserves_energy_and_period() {
    let s = weak(&[[1, 0, 0], [0, 1, 0]]);
    let e0 = weak_e0(&s);
    let opts = OrbitOptions::default();
    let o = orbit_at(&s, 0.0, e0, &SeedRay::default(), &opts).unwrap();
    let drift = (0..o.len())
        .map(|j| (s.energy(o.k3d(j)).unwrap() - e0).abs())
        .fold(0.0, f64::max);
    assert!(drift <= 1e-8, "drift {drift:.2e}");

    // T = dS/dE / mu
    let h = 1e-4;
    let area = |e: f64| orbit_at(&s, 0.0, e, &SeedRay::default(), &opts).unwrap().area;
    let dsde = (area(e0 + h) - area(e0 - h)) / (2.0 * h);
    assert!((o.period - dsde / o.mu).abs() <= 1e-2 * o.period, "T {} vs {}", o.period, dsde);
}

#[test]
fn area_is_stable_under_refined_sampling() {
    let s = weak(&[[1, 0, 0], [0, 1, 0]]);
    let e0 = weak_e0(&s);
    let coarse = orbit_at(&s, 0.0, e0, &SeedRay::default(), &OrbitOptions::default()).unwrap();
    let fine_opts = OrbitOptions {
        samples: 2 * OrbitOptions::default().samples,
        ..Default::default()
    };
    let fine = orbit_at(&s, 0.0, e0, &SeedRay::default(), &fine_opts).unwrap();
    assert!((coarse.area - fine.area).abs() <= 1e-8, "{} vs {}", coarse.area, fine.area);
}

#[test]
fn area_extremum_survives_grid_refinement() {
    let s = weak(&[[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
    let e0 = weak_e0(&s);
    let opts = OrbitOptions { samples: 128, ..Default::default() };
    let coarse: Vec<f64> = (0..5).map(|i| -0.1 + 0.05 * i as f64 + 0.013).collect();
    let fine: Vec<f64> = (0..41).map(|i| -0.1 + 0.005 * i as f64 + 0.0013).collect();
    let a = area_profile(&s, e0, &coarse, &SeedRay::default(), &opts);
    let b = area_profile(&s, e0, &fine, &SeedRay::default(), &opts);
    assert_eq!(a.extrema.len(), 1);
    assert_eq!(b.extrema.len(), 1);
    assert!(a.extrema[0].k3.abs() <= 1e-4 && b.extrema[0].k3.abs() <= 1e-4);
    assert!((a.extrema[0].k3 - b.extrema[0].k3).abs() <= 1e-4);
}

#[test]
fn lift_velocity_matches_finite_differences() {
    let s = weak(&[[1, 0, 0], [0, 1, 0]]);
    let e0 = weak_e0(&s);
    let opts = OrbitOptions { samples: 1024, ..Default::default() };
    let o = orbit_at(&s, 0.0, e0, &SeedRay::default(), &opts).unwrap();
    let lift = peierls_lift(&o, 0.4, -0.2);
    let n = lift.y.len();
    let h = o.step();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let at = |d: isize| lift.y[(j as isize + d).rem_euclid(n as isize) as usize];
        for i in 0..2 {
            let fd = (at(-2)[i] - 8.0 * at(-1)[i] + 8.0 * at(1)[i] - at(2)[i]) / (12.0 * h);
            worst = worst.max((fd - lift.ydot[j][i]).abs());
        }
    }
    assert!(worst <= 1e-6, "{worst:.2e}");
}

#[test]
fn blocks_match_hamiltonian_finite_differences() {
    let s = weak(&[[1, 0, 0], [0, 1, 0]]);
    let e0 = weak_e0(&s);
    let opts = PipelineOptions {
        orbit: OrbitOptions { samples: 64, ..Default::default() },
        ..Default::default()
    };
    let a = analyze_orbit(&s, 0.0, e0, &opts).unwrap();
    let mu = a.orbit.mu;
    // Hamiltonian in (y1, y2, p1, p2); y2 does not enter.
    let ham = |z: [f64; 4]| s.energy([z[2], z[3] + mu * z[0], 0.0]).unwrap();
    let h = 2e-4;
    for j in (0..a.orbit.len()).step_by(13) {
        let z0 = [a.lift.y[j][0], a.lift.y[j][1], a.lift.p[j][0], a.lift.p[j][1]];
        let d2 = |u: usize, v: usize| {
            let mut f = 0.0;
            for (su, sv, w) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                let mut z = z0;
                z[u] += su * h;
                z[v] += sv * h;
                f += w * ham(z);
            }
            f / (4.0 * h * h)
        };
        let (ba, bb, bc) = (&a.blocks.a[j], &a.blocks.b[j], &a.blocks.c[j]);
        for r in 0..2 {
            for c in 0..2 {
                assert!((d2(r, c) - ba[(r, c)]).abs() <= 1e-5, "A[{r}{c}] at {j}");
                assert!((d2(2 + r, c) - bb[(r, c)]).abs() <= 1e-5, "B[{r}{c}] at {j}");
                assert!((d2(2 + r, 2 + c) - bc[(r, c)]).abs() <= 1e-5, "C[{r}{c}] at {j}: {} vs {}", d2(2 + r, 2 + c), bc[(r, c)]);
            }
        }
    }
}

#[test]
fn weak_cosine_ledger() {
    let s = weak(&[[1, 0, 0], [0, 1, 0]]);
    let e0 = weak_e0(&s);
    let a = analyze_orbit(&s, 0.0, e0, &PipelineOptions::default()).unwrap();
    assert!(a.ledger.theta_b.abs() <= 1e-6, "{}", a.ledger.theta_b);
    assert_eq!(a.ledger.n_m, 1);
    assert_eq!(a.levels.gamma, 0.5);
    assert!(a.levels.entries.windows(2).all(|w| w[0].eps > w[1].eps));
    assert!(a.levels.max_residual(a.orbit.area, a.orbit.mu) <= 1e-12);

    // The lift constants only move the beam frame, not the phases.
    let moved = PipelineOptions {
        p2_const: 0.7,
        c: -1.3,
        ..Default::default()
    };
    let b = analyze_orbit(&s, 0.0, e0, &moved).unwrap();
    assert_eq!(b.ledger.n_m, a.ledger.n_m);
    assert!((b.ledger.theta_b - a.ledger.theta_b).abs() <= 1e-8);
    assert!((b.ledger.theta_rw - a.ledger.theta_rw).abs() <= 1e-8);
    assert!((b.ledger.action - a.ledger.action).abs() <= 1e-7);
}

#[test]
fn amplitude_modulus_follows_the_frame() {
    let s = ParabolicBand::free();
    let a = analyze_orbit(&s, 0.0, 0.09, &PipelineOptions::default()).unwrap();
    let tr = &a.amplitude;
    let vals: Vec<f64> = tr
        .s
        .iter()
        .zip(&tr.f0)
        .map(|(&t, f)| {
            let j = a.frame.s.iter().position(|&x| (x - t).abs() < 1e-12).expect("frame node");
            f.norm() * a.frame.det_y[j].norm().sqrt()
        })
        .collect();
    let spread = vals.iter().fold(0.0f64, |m, v| m.max((v - vals[0]).abs()));
    assert!(spread <= 1e-8 * vals[0], "{spread:.2e}");
}

#[test]
fn free_phase_is_gaussian_off_the_orbit() {
    let s = ParabolicBand::free();
    let a = analyze_orbit(&s, 0.0, 0.09, &PipelineOptions::default()).unwrap();
    let jet = a.jet(None).unwrap();
    let (y, n, p) = (jet.y_at(0.0), jet.normal_at(0.0), jet.p_at(0.0));
    let m = a.init.m0;
    let nn = m[(0, 0)] * n[0] * n[0] + (m[(0, 1)] + m[(1, 0)]) * n[0] * n[1] + m[(1, 1)] * n[1] * n[1];
    assert!((nn.im - 1.0).abs() < 1e-12);
    for delta in [1e-2, 3e-3, 1e-3] {
        let pt = jet.eval([y[0] + delta * n[0], y[1] + delta * n[1]]).unwrap();
        let lin = jet.phi_at(0.0) + delta * (p[0] * n[0] + p[1] * n[1]);
        let quad = pt.phi - lin;
        let want = 0.5 * delta * delta * nn;
        assert!((quad - want).norm() <= 10.0 * delta.powi(3), "delta {delta}: {quad} vs {want}");
        assert!((quad.im - 0.5 * delta * delta).abs() <= 10.0 * delta.powi(3));
    }
}

#[test]
fn free_eikonal_defect_is_cubic() {
    let s = ParabolicBand::free();
    let a = analyze_orbit(&s, 0.0, 0.09, &PipelineOptions::default()).unwrap();
    let jet = a.jet(None).unwrap();
    let fibres: Vec<usize> = (0..jet.len()).step_by(jet.len() / 8).collect();
    let r = eikonal_residual(&jet, &s, 0.09, &fibres, &[2e-2, 1e-2, 5e-3, 2.5e-3]).unwrap();
    if !r.vacuous {
        assert!(r.slope.unwrap() >= 2.8, "{r:?}");
    }
    assert!(r.on_orbit_max <= 1e-10);
}

fn sweep_opts(window: (f64, f64)) -> SweepOptions {
    SweepOptions {
        eps_window: window,
        ..Default::default()
    }
}

#[test]
fn free_density_peaks_at_the_central_section() {
    let s = ParabolicBand::free();
    let opts = PipelineOptions {
        orbit: OrbitOptions { samples: 64, ..Default::default() },
        ..Default::default()
    };
    let grid = |n: usize| -> Vec<f64> { (0..n).map(|i| -0.1 + 0.2 * i as f64 / (n - 1) as f64).collect() };
    let coarse = level_density_sweep(&s, 0.09, &grid(9), &opts, &sweep_opts((0.0, 0.1))).unwrap();
    assert_eq!(coarse.peak_k3, Some(0.0));
    assert!(!coarse.histogram.is_empty());
    let fine = level_density_sweep(&s, 0.09, &grid(17), &opts, &sweep_opts((0.0, 0.1))).unwrap();
    assert!((fine.peak_k3.unwrap() - coarse.peak_k3.unwrap()).abs() <= 0.025 + 1e-12);

    let empty = level_density_sweep(&s, 0.09, &grid(9), &opts, &sweep_opts((1.0, 2.0))).unwrap();
    assert!(empty.histogram.is_empty());
    assert_eq!(empty.peak_k3, None);
    assert!(empty.points.iter().all(|p| p.error.is_none()));
}

#[test]
fn reversed_seed_direction_gives_the_same_levels() {
    let s = ParabolicBand::free();
    let base = analyze_orbit(&s, 0.0, 0.09, &PipelineOptions::default()).unwrap();
    let opts = PipelineOptions {
        ray: SeedRay {
            origin: [0.0, 0.0],
            direction: [-1.0, 1.0],
        },
        ..Default::default()
    };
    let other = analyze_orbit(&s, 0.0, 0.09, &opts).unwrap();
    for (x, y) in base.levels.entries.iter().zip(&other.levels.entries) {
        assert!((x.eps - y.eps).abs() <= 1e-10 * x.eps);
    }
    assert!((base.orbit.area - PI * 0.09).abs() <= 1e-9);
}
