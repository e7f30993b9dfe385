use fhn_meso::config::RunConfig;
use fhn_meso::diagnostics::{ck_sandwich, csiszar_kullback, equicontinuity_bound, translate_w};
use fhn_meso::harness::{fit_rate, Abscissa};
use fhn_meso::kinetic::{fokker_planck_step, CoupledState, RescaledSolver, TransportScheme};
use fhn_meso::macro_solver::{evolve_bar_nu, evolve_bar_nu_samples, WProfile};
use fhn_meso::model::DriftSpec;
use fhn_meso::phase_space::field::{centered_v_moment, l1, slice_v_marginal};
use fhn_meso::phase_space::theta::theta_squared_rate;
use fhn_meso::phase_space::{maxwellian, theta, theta_squared, Axis, DensityField, MacroFields, PhaseGrid};
use proptest::prelude::*;

fn grid() -> PhaseGrid {
    PhaseGrid::new(24, 6.0, 16, 4.0).unwrap()
}

fn positive_field(values: Vec<f64>, nx: usize) -> DensityField {
    let g = grid();
    let mut f = DensityField::from_values(g, nx, values.iter().map(|x| x + 1e-3).collect(), 0.0)
        .unwrap_or_else(|_| DensityField::zeros(g, nx, 0.0));
    f.renormalize();
    f
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn theta_solves_its_ode(t in 0.0..5.0f64, rho in 0.8..1.25f64, eps in 1e-4..1.0f64) {
        let s = theta_squared(t, rho, eps);
        let r = 0.5 * theta_squared_rate(t, rho, eps) + rho / eps * s - rho;
        prop_assert!(r.abs() <= 1e-10);
        prop_assert!(s >= eps - 1e-15 && s <= 1.0);
        prop_assert_eq!(theta(0.0, rho, eps), 1.0);
    }

    #[test]
    // dt·prefactor up to 100 covers every step the solvers take at ε ≥ 1e-3
    fn maxwellian_product_is_a_fixed_point(rho in 0.8..1.25f64, dt in 1e-4..0.5f64, pre in 0.5..200.0f64) {
        let g = grid();
        let m = maxwellian(&g.v, rho).unwrap().values;
        let bar: Vec<f64> = (0..g.nw()).map(|k| (-(g.w.node(k)).powi(2)).exp()).collect();
        let nu = DensityField::product(g, &[m], &[bar], 0.0).unwrap();
        let next = fokker_planck_step(&nu, dt, &[pre], &[rho]).unwrap();
        let gap = next.values().iter().zip(nu.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(gap <= 1e-13, "{}", gap);
    }

    #[test]
    fn relaxation_keeps_mass_and_sign(values in prop::collection::vec(0.0..1.0f64, 24 * 16), dt in 1e-3..0.5f64, pre in 1.0..100.0f64) {
        let nu = positive_field(values, 1);
        let next = fokker_planck_step(&nu, dt, &[pre], &[1.0]).unwrap();
        prop_assert!((next.mass(0) - 1.0).abs() <= 1e-10);
        prop_assert!(next.min_value() >= -1e-14);
    }

    #[test]
    fn half_entropy_sandwich_on_random_pairs(
        a in prop::collection::vec(0.0..1.0f64, 2..200),
        seed in 0.0..1.0f64,
    ) {
        let n = a.len();
        let b: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * (seed + 0.1) * 7.3).sin().abs() + 1e-9).collect();
        let norm = |x: &[f64]| { let s: f64 = x.iter().sum(); x.iter().map(|v| v / s).collect::<Vec<f64>>() };
        let (f, g) = (norm(&a.iter().map(|x| x + 1e-12).collect::<Vec<_>>()), norm(&b));
        let s = ck_sandwich(&f, &g, 1.0);
        prop_assert!(s.lower_ok && s.upper_ok, "{:?}", s);
    }

    #[test]
    fn csiszar_kullback_on_random_slices(values in prop::collection::vec(0.0..1.0f64, 24 * 16), rho in 0.8..1.25f64) {
        let nu = positive_field(values, 1);
        let (holds, slack) = csiszar_kullback(nu.grid(), nu.slice(0), rho).unwrap();
        prop_assert!(holds, "{}", slack);
    }

    #[test]
    fn moment_quadrature_matches_direct_sum(values in prop::collection::vec(0.0..1.0f64, 24 * 16), c in -1.0..1.0f64, q in 0u32..5) {
        let nu = positive_field(values, 1);
        let g = *nu.grid();
        let p = slice_v_marginal(&g, nu.slice(0));
        let mut direct = 0.0;
        for j in 0..g.nv() {
            for k in 0..g.nw() {
                direct += nu.slice(0)[j * g.nw() + k] * (g.v.node(j) - c).abs().powi(q as i32);
            }
        }
        direct *= g.cell_area();
        let quad = centered_v_moment(&g.v, &p, c, q);
        prop_assert!((quad - direct).abs() <= 1e-13 * direct.abs().max(1.0));
    }

    #[test]
    fn cubic_growth_ratio_decreases_beyond_one(x in 1.0..5.0f64, y in 1.0..5.0f64) {
        let n = DriftSpec::cubic();
        let (lo, hi) = if x < y { (x, y) } else { (y, x) };
        let omega = |v: f64| n.eval(v) / v;
        prop_assert!(omega(hi) <= omega(lo) + 1e-12);
        prop_assert!(omega(lo) <= omega(1.0) + 1e-12);
        prop_assert!(omega(-hi) <= omega(-lo) + 1e-12);
    }

    #[test]
    fn coupling_is_bounded_by_the_kernel_constant(g in prop::collection::vec(-3.0..3.0f64, 8)) {
        let model = RunConfig::default().build_model().unwrap();
        let sup = g.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let out = model.conv_right(&g).unwrap();
        let bound = model.kernel().bound();
        prop_assert!(out.iter().all(|x| x.abs() <= bound * sup * (1.0 + 1e-12) + 1e-15));
    }

    #[test]
    fn nonlinearity_error_is_first_order_in_variance(mean in -1.0..1.0f64, var in 1e-4..1e-2f64) {
        let model = RunConfig::default().build_model().unwrap();
        let g = PhaseGrid::new(801, 3.0, 3, 1.0).unwrap();
        let mut vals = Vec::new();
        for j in 0..g.nv() {
            let v = g.v.node(j);
            let p = (-(v - mean).powi(2) / (2.0 * var)).exp();
            vals.extend([p, p, p]);
        }
        let e = model.nonlinearity_error(&vals, &g).unwrap();
        // for N(v) = v − v³, E = −3 mean var exactly for a Gaussian
        prop_assert!((e + 3.0 * mean * var).abs() <= 1e-3 * var + 1e-12, "{} vs {}", e, -3.0 * mean * var);
    }

    #[test]
    fn limit_marginal_is_a_semigroup(t1 in 0.0..1.0f64, t2 in 0.0..1.0f64, var in 0.2..1.0f64) {
        let axis = Axis::new(2001, 5.0).unwrap();
        let p = WProfile::Gaussian { variance: var };
        let (mid, _) = evolve_bar_nu(&p, 1.0, t1, &axis).unwrap();
        let two = evolve_bar_nu_samples(&mid, &axis, 1.0, t2, &axis);
        let (one, _) = evolve_bar_nu(&p, 1.0, t1 + t2, &axis).unwrap();
        let peak = one.iter().fold(0.0f64, |a, x| a.max(*x));
        let gap = two.iter().zip(&one).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(gap <= 1e-3 * peak, "{}", gap);
    }

    #[test]
    fn power_laws_are_recovered(slope in 0.1..2.0f64, scale in 0.01..100.0f64) {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025, 0.0125].iter().map(|e: &f64| (*e, scale * e.powf(slope))).collect();
        let f = fit_rate(&pts, Abscissa::Eps).unwrap();
        prop_assert!((f.slope - slope).abs() < 1e-10);
        prop_assert!(f.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn translation_is_a_contraction(values in prop::collection::vec(0.0..1.0f64, 24 * 16), cells in -20isize..20) {
        let nu = positive_field(values, 1);
        let g = *nu.grid();
        let moved = translate_w(&g, nu.slice(0), cells);
        let mass: f64 = moved.iter().sum::<f64>() * g.cell_area();
        prop_assert!(mass <= 1.0 + 1e-12);
        prop_assert!(l1(&g, nu.slice(0), &moved) <= 2.0 + 1e-12);
    }

    #[test]
    fn equicontinuity_bound_grows_with_the_shift(m1 in 0.0..10.0f64, s in 0.0..3.0f64, ds in 0.0..1.0f64) {
        prop_assert!(equicontinuity_bound(m1, 1.0, s + ds) >= equicontinuity_bound(m1, 1.0, s));
        prop_assert!(equicontinuity_bound(m1, 1.0, -s) == equicontinuity_bound(m1, 1.0, s));
    }

    #[test]
    fn config_echo_round_trips(seed in any::<u64>(), horizon in 1.0..10.0f64, nx in 2usize..32) {
        let mut c = RunConfig::default();
        c.experiment.seed = seed;
        c.experiment.horizon = horizon;
        c.grids.nx = nx;
        let once = RunConfig::from_json(&c.echo()).unwrap();
        let twice = RunConfig::from_json(&once.echo()).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.experiment.seed, seed);
        prop_assert_eq!(once.grids.nx, nx);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(8) })]

    /// Mass, sign and centring survive rescaled steps from random smooth data.
    #[test]
    fn rescaled_steps_keep_density_invariants(shift in -0.5..0.5f64, width in 0.5..2.0f64, eps in 0.01..0.5f64) {
        let mut cfg = RunConfig::default();
        cfg.grids.nx = 2;
        let model = cfg.build_model().unwrap();
        let g = PhaseGrid::new(48, 8.0, 16, 4.0).unwrap();
        let vp: Vec<f64> = (0..g.nv()).map(|j| (-(g.v.node(j)).powi(2) / (2.0 * width)).exp()).collect();
        let wp: Vec<f64> = (0..g.nw()).map(|k| (-(g.w.node(k)).powi(2)).exp()).collect();
        let mut nu = DensityField::product(g, &[vp.clone(), vp], &[wp.clone(), wp], 0.0).unwrap();
        nu.renormalize();
        let frame = MacroFields::new(vec![0.5 + shift, 0.7], vec![0.0, 0.1 - shift]).unwrap();
        let mut st = CoupledState::new(nu, frame, eps, 1.0).unwrap();
        let solver = RescaledSolver::new(&model, TransportScheme::Muscl, 0.9).unwrap();
        let tel = solver.run(&mut st, 0.005, 10).unwrap();
        prop_assert!(tel.mass_defect <= 1e-10);
        prop_assert!(st.comoving().min_value() >= 0.0);
        prop_assert!(tel.residual_mean <= 1e-10, "{}", tel.residual_mean);
    }
}
