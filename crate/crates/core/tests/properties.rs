use proptest::prelude::*;

use selftrig::casestudies::{jet_engine, rigid_body, CaseStudy};
use selftrig::config::RunConfig;
use selftrig::dynamics::{eval_extended, eval_vdot_bound, ClosedLoop, ErrorExtendedSystem, FrozenError, VectorField};
use selftrig::homogeneity::{lie_bracket, rho, DilationField};
use selftrig::integrator::{integrate, IntegratorOptions};
use selftrig::linbound::{tau_star, tau_star_riccati};
use selftrig::poly::PolyField;
use selftrig::polyhom::{check_phi_related, homogenize};
use selftrig::simloop::{metrics, run, SimConfig};
use selftrig::util::norm;

fn jet() -> CaseStudy {
    jet_engine(0.33, 1.0).unwrap()
}

fn rigid() -> CaseStudy {
    rigid_body(0.01).unwrap()
}

fn vec_in(n: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn tau_star_closed_form_matches_riccati(h in 1e-2f64..1e3, g in 1e-2f64..1e3, c in 1e-3f64..2.0) {
        let a = tau_star(h, g, c).unwrap().value;
        let b = tau_star_riccati(h, g, c).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-8 * a, "closed {a} riccati {b}");
    }

    #[test]
    fn tau_star_is_monotone(h in 1e-2f64..1e3, g in 1e-2f64..1e3, c in 1e-3f64..2.0, k in 1.01f64..3.0) {
        let t = tau_star(h, g, c).unwrap().value;
        prop_assert!(tau_star(h, g, c * k).unwrap().value > t);
        prop_assert!(tau_star(h * k, g, c).unwrap().value < t);
        prop_assert!(tau_star(h, g * k, c).unwrap().value < t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn extended_field_is_antisymmetric(z in vec_in(4, 6.0), w in vec_in(6, 3.0)) {
        for (cs, z) in [(jet(), z), (rigid(), w)] {
            let sys = ErrorExtendedSystem::new(cs.model.closed_loop.clone());
            let out = eval_extended(&sys, &z).unwrap();
            let n = out.len() / 2;
            for i in 0..n {
                prop_assert_eq!(out[n + i], -out[i]);
            }
        }
    }

    #[test]
    fn homogenized_field_restricts_to_original(x in vec_in(3, 5.0), e in vec_in(3, 1.0)) {
        let cs = rigid();
        let hs = cs.homogenized.as_ref().unwrap();
        let mut a = vec![0.0; 3];
        cs.closed_loop.eval_into(&x, &e, &mut a);
        let mut xw = x.clone();
        xw.push(1.0);
        let mut ew = e.clone();
        ew.push(0.0);
        let mut b = vec![0.0; 4];
        ClosedLoop::eval(hs.field().as_ref(), &xw, &ew, &mut b);
        prop_assert_eq!(b[3], 0.0);
        for i in 0..3 {
            prop_assert!((a[i] - b[i]).abs() <= 1e-12 * a[i].abs().max(1.0));
        }
    }

    #[test]
    fn homogenization_of_random_polynomials(
        coeffs in prop::collection::vec(-2.0f64..2.0, 6),
        x in vec_in(2, 2.0),
        e in vec_in(2, 0.5),
    ) {
        let exprs = [
            format!("{}*x1 + {}*x2^2 + {}*x1*e2", coeffs[0], coeffs[1], coeffs[2]),
            format!("{}*x2 + {}*x1^3 + {}*e1", coeffs[3], coeffs[4], coeffs[5]),
        ];
        let poly = PolyField::from_expressions(2, &exprs).unwrap();
        let Ok(hs) = homogenize(&poly) else { return Ok(()) };
        let l = hs.l();
        prop_assert!(hs.field().poly().monomials().all(|m| m.degree() == l));
        let mut a = vec![0.0; 2];
        poly.eval_into(&x, &e, &mut a);
        let mut b = vec![0.0; 3];
        ClosedLoop::eval(hs.field().as_ref(), &[x[0], x[1], 1.0], &[e[0], e[1], 0.0], &mut b);
        for i in 0..2 {
            prop_assert!((a[i] - b[i]).abs() <= 1e-12 * a[i].abs().max(1.0));
        }
    }

    #[test]
    fn trigger_rule_makes_vdot_bound_negative(r in 0.01f64..1.0, k in 0.0f64..1.0) {
        for cs in [jet(), rigid()] {
            let cert = &cs.certificate;
            let xn = r * cert.gamma_radius;
            let en = k * cert.c * xn;
            let bound = eval_vdot_bound(cert, xn, en);
            let limit = (cert.sigma * cert.sigma - 1.0) * cert.p * xn.powi(cert.degree as i32);
            prop_assert!(bound <= limit + 1e-9 * limit.abs().max(1.0), "{bound} > {limit}");
        }
    }

    #[test]
    fn rho_is_a_cocycle(x1 in -3.0f64..3.0, x2 in -3.0f64..3.0, s1 in -1.5f64..1.5, s2 in -1.5f64..1.5) {
        let cs = jet();
        let xi = cs.xi.clone().unwrap();
        let d = cs.dilation.clone().unwrap();
        let x = [x1, x2];
        let whole = rho(&xi, &d, &x, s1 + s2).unwrap();
        let parts = rho(&xi, &d, &x, s1).unwrap() + rho(&xi, &d, &d.flow(&x, s1), s2).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-9);
    }

    #[test]
    fn jet_degree_residual(x in vec_in(2, 5.4)) {
        prop_assume!(norm(&x) > 1e-3);
        let cs = jet();
        let xf = FrozenError::new(cs.model.closed_loop.clone());
        let d = cs.dilation.clone().unwrap();
        let xi = cs.xi.clone().unwrap();
        let b = lie_bracket(&d, &xf, &x).unwrap();
        let mut f = vec![0.0; 2];
        xf.eval(&x, &mut f);
        let res: Vec<f64> = b.iter().zip(&f).map(|(bi, fi)| bi - xi.eval(&x) * fi).collect();
        prop_assert!(norm(&res) <= 1e-8 * (1.0 + norm(&f)), "{}", norm(&res));
    }

    #[test]
    fn jet_self_trigger_time_shrinks_along_rays(theta in 0.0f64..std::f64::consts::TAU, r in 0.05f64..5.0) {
        let cs = jet();
        let u = [theta.cos(), theta.sin()];
        let t = |k: f64| cs.jet_closed_form(1.0, &[k * u[0], k * u[1]]);
        prop_assert!(t(r * 1.05) <= t(r) * (1.0 + 1e-12));
    }

    #[test]
    fn lie_bracket_matches_finite_differences(x in vec_in(2, 3.0)) {
        // Rebuilding the field without analytic Jacobians gives the finite-difference bracket.
        let cs = jet();
        let base = cs.model.closed_loop.clone();
        let fd = selftrig::dynamics::FnField::new(2, move |z, out| base.eval(z, &[0.0, 0.0], out));
        let d = DilationField::standard(2, 1.0).unwrap();
        let a = lie_bracket(&d, &FrozenError::new(cs.model.closed_loop.clone()), &x).unwrap();
        let b = lie_bracket(&d, &fd, &x).unwrap();
        let diff: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
        prop_assert!(norm(&diff) <= 1e-5 * norm(&a).max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ratio_transport_and_w_constancy(x in vec_in(3, 2.0), e in vec_in(3, 0.05), t in 1e-3f64..0.05) {
        let cs = rigid();
        let hs = cs.homogenized.as_ref().unwrap();
        let mut z0 = x.clone();
        z0.extend(&e);
        let io = IntegratorOptions::with_tolerances(1e-11, 1e-13);
        let r = check_phi_related(hs, &z0, t, &io).unwrap();
        prop_assert!(r.ratio_residual <= 1e-8, "{}", r.ratio_residual);
        let y = integrate(&hs.extended(), &hs.phi(&z0), 0.0, t, &io).unwrap().final_state();
        prop_assert!((y[3] - 1.0).abs() <= 1e-12 && y[7].abs() <= 1e-12);
    }

    #[test]
    fn error_plus_state_is_conserved(x in vec_in(2, 5.0), t in 0.001f64..0.05) {
        let cs = jet();
        let sys = ErrorExtendedSystem::new(cs.model.closed_loop.clone());
        let z = integrate(&sys, &ErrorExtendedSystem::sampled(&x), 0.0, t, &IntegratorOptions::default())
            .unwrap()
            .final_state();
        let drift = norm(&[z[0] + z[2] - x[0], z[1] + z[3] - x[1]]);
        prop_assert!(drift <= 1e-9 * norm(&x).max(1.0));
    }

    #[test]
    fn config_round_trips(
        sigma in 0.01f64..0.99,
        t_end in 0.1f64..10.0,
        seed in any::<u64>(),
        kind in prop::sample::select(vec!["periodic", "event-oracle", "self-trigger"]),
        noise in any::<bool>(),
    ) {
        let text = format!(
            r#"{{"system": "jet-engine", "sigma": {sigma}, "seed": {seed},
                "policy": {{"kind": "{kind}", "period": 0.01}},
                "sim": {{"t_end": {t_end}, "noise": {{"enabled": {noise}, "fraction": 0.02}}}}}}"#
        );
        let cfg = RunConfig::from_json(&text).unwrap();
        let again = RunConfig::from_json(&cfg.canonical_json()).unwrap();
        prop_assert_eq!(&cfg, &again);
        prop_assert_eq!(cfg.canonical_json(), again.canonical_json());
    }
}

#[test]
fn runs_are_deterministic() {
    let cs = jet();
    let policy = cs.self_trigger_policy(0.0143).unwrap();
    let mut cfg = SimConfig::new(vec![5.37, 0.34], 1.0);
    cfg.noise.enabled = true;
    cfg.disturbance.enabled = true;
    cfg.seed = 42;
    let a = metrics(&run(&cs.model, &policy, &cfg).unwrap());
    let b = metrics(&run(&cs.model, &policy, &cfg).unwrap());
    assert_eq!(a, b);
}
