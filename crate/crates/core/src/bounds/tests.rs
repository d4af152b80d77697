use super::*;
use crate::geometry::{BranchSpec, DomainSpec, Extension, ExtendedChannelSpec, WidthProfile};
use crate::wave1d::ClosedFormCubic;
use proptest::prelude::*;

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn channel() -> ExtendedChannelSpec {
    ExtendedChannelSpec::new(BranchSpec::at_angle(0.0, WidthProfile::Constant(2.0), 200.0), Extension::Natural)
}

/// Hand-derived constants of the cubic at `theta`: (sigma, gamma, c, lipschitz).
fn oracle_constants(theta: f64) -> (f64, f64, f64, f64) {
    let disc = (theta * theta - theta + 1.0).sqrt();
    let um = (1.0 + theta - disc) / 3.0;
    let up = (1.0 + theta + disc) / 3.0;
    let sigma = (0.99 * um.min(1.0 - up).min(0.5 - 1e-6)).min(0.49);
    let gamma = ((1.0 - sigma) * (theta - sigma)).min((1.0 - sigma) * (1.0 - sigma - theta));
    let c = (1.0 - 2.0 * theta) / SQRT2;
    // |f'| on [0, 1] peaks at an end point or at the vertex (1 + theta) / 3.
    let fp = |u: f64| -3.0 * u * u + 2.0 * (1.0 + theta) * u - theta;
    let m = fp(0.0).abs().max(fp(1.0).abs()).max(fp((1.0 + theta) / 3.0).abs());
    (sigma, gamma, c, 1.05 * m)
}

/// Closed-form width: `phi(M) = eps`.
fn oracle_width(eps: f64) -> f64 {
    SQRT2 * ((1.0 - eps) / eps).ln()
}

struct Setup {
    models: Models,
    profile: Arc<dyn FrontProfile>,
    weight: AuxWeight,
}

fn setup(theta: f64) -> Setup {
    let models = Models::cubic(theta).unwrap();
    let gamma = derive_stability_constants(&models.reaction).unwrap().gamma;
    let weight = build_weight(&channel(), gamma, &models).unwrap();
    Setup { models, profile: Arc::new(ClosedFormCubic::new(theta)), weight }
}

fn candidate(su: &Setup, kind: BoundKind, opts: &ParamOptions) -> CandidateBound {
    let params =
        choose_parameters_with(kind, su.profile.as_ref(), &su.weight, &su.models.reaction, 4.0, opts).unwrap();
    build_candidate(kind, su.profile.clone(), &su.weight, &params).unwrap()
}

fn axis_points(lo: f64, hi: f64, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|k| [lo + (hi - lo) * k as f64 / (n - 1) as f64, 0.3]).collect()
}

fn times(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

#[test]
fn emanation_delta_matches_hand_value() {
    let su = setup(0.3);
    let (sigma, gamma, c, _) = oracle_constants(0.3);
    let p = choose_parameters(BoundKind::EmanationSub, su.profile.as_ref(), &su.weight, &su.models.reaction, 4.0)
        .unwrap();
    let want = 0.9 * (sigma / 2.0).min(gamma.sqrt() * c);
    assert!((p.delta - want).abs() < 1e-12);
    assert!((p.delta - 0.0611).abs() < 5e-4);
}

#[test]
fn emanation_omega_matches_hand_value() {
    let su = setup(0.3);
    let (_, gamma, c, m) = oracle_constants(0.3);
    let p = choose_parameters(BoundKind::EmanationSub, su.profile.as_ref(), &su.weight, &su.models.reaction, 4.0)
        .unwrap();
    let m_delta = oracle_width(p.delta);
    // |phi'| is smallest at the ends of [-M, M], where phi (1 - phi) = delta (1 - delta).
    let k = c * p.delta * (1.0 - p.delta) / SQRT2;
    let lam = gamma.sqrt();
    let omega = 1.1 * (gamma + m) * (lam * (m_delta + 4.0 + 1.0)).exp() / k;
    assert!((p.m_delta - m_delta).abs() < 1e-9);
    assert!((p.slope - k).abs() < 1e-9 * k);
    assert!((p.omega - omega).abs() < 1e-6 * omega);
    assert!((m - 0.735).abs() < 1e-12);
    // Constraint holds with the 10% headroom.
    assert!(p.omega * p.slope >= (gamma + m) * (lam * (p.m_delta + 5.0)).exp());
    let t = -(4.0 + oracle_width(p.delta_prime) + 1.0) / c;
    assert!((p.valid.1 - t).abs() < 1e-9);
    assert!(c * p.valid.1 < -4.0 - oracle_width(p.delta_prime));
}

#[test]
fn negative_speed_is_infeasible() {
    let su = setup(0.7);
    for kind in BoundKind::ALL {
        let r = choose_parameters(kind, su.profile.as_ref(), &su.weight, &su.models.reaction, 4.0);
        assert!(matches!(r, Err(BoundError::KindInfeasible(k, _)) if k == kind));
    }
}

#[test]
fn emanation_sub_residual_is_nonpositive() {
    let su = setup(0.3);
    let cb = candidate(&su, BoundKind::EmanationSub, &ParamOptions::default());
    let t_end = cb.params.valid.1;
    let rep = verify_residual(
        &cb,
        &axis_points(4.0, 140.0, 120),
        &times(t_end - 20.0, t_end, 20),
        &su.models,
        ResidualMethod::Auto,
    )
    .unwrap();
    assert!(rep.analytic);
    assert!(rep.samples >= 1000, "{}", rep.samples);
    assert!(rep.passed(), "{}", rep.to_text());
}

#[test]
fn analytic_residual_agrees_with_difference_quotients() {
    let su = setup(0.3);
    let cb = candidate(&su, BoundKind::EmanationSub, &ParamOptions::default());
    let t = cb.params.valid.1 - 5.0;
    let p = &cb.params;
    let front = -p.speed * (t - p.omega * (p.delta * t).exp());
    for ds in [-2.0, 0.0, 1.5] {
        let x = [front + ds, 0.1];
        let exact = verify_residual(&cb, &[x], &[t], &su.models, ResidualMethod::Auto).unwrap();
        // Independent route: difference quotients of the point values.
        let v = |t: f64, s: f64| cb.value(t, [s, 0.1]).unwrap().unwrap();
        let (h, dt) = (1e-3, 1e-4);
        let ut = (v(t + dt, x[0]) - v(t - dt, x[0])) / (2.0 * dt);
        let uss = (v(t, x[0] + h) - 2.0 * v(t, x[0]) + v(t, x[0] - h)) / (h * h);
        let u = v(t, x[0]);
        let n = ut - uss - u * (1.0 - u) * (u - 0.3);
        assert!((n - exact.worst).abs() < 1e-4 * (1.0 + n.abs()), "{n} vs {}", exact.worst);
    }
}

#[test]
fn inflated_delta_is_detected() {
    let su = setup(0.3);
    let base = candidate(&su, BoundKind::EmanationSub, &ParamOptions::default());
    let mut params = base.params.clone();
    params.delta *= 10.0;
    params.delta_tilde *= 10.0;
    params.delta_prime *= 10.0;
    let cb = build_candidate(BoundKind::EmanationSub, su.profile.clone(), &su.weight, &params).unwrap();
    let t_end = params.valid.1;
    let rep = verify_residual(
        &cb,
        &axis_points(4.0, 140.0, 120),
        &times(t_end - 20.0, t_end, 20),
        &su.models,
        ResidualMethod::Auto,
    )
    .unwrap();
    assert!(rep.worst > ANALYTIC_TOL, "{}", rep.to_text());
    assert!(!rep.passed());
}

#[test]
fn emanation_super_residual_is_nonnegative() {
    let su = setup(0.3);
    let cb = candidate(&su, BoundKind::EmanationSuper, &ParamOptions::default());
    let t_end = cb.params.valid.1;
    let rep = verify_residual(
        &cb,
        &axis_points(-10.0, 400.0, 200),
        &times(t_end - 20.0, t_end, 10),
        &su.models,
        ResidualMethod::Auto,
    )
    .unwrap();
    assert!(rep.passed(), "{}", rep.to_text());
}

#[test]
fn constant_branch_residual_is_minus_f() {
    let su = setup(0.3);
    let cb = candidate(&su, BoundKind::EmanationSuper, &ParamOptions::default());
    let g = cb.params.glue.unwrap();
    let t = cb.params.valid.1;
    let x = [1.0, 0.0];
    assert_eq!(cb.active_piece(t, x).unwrap().unwrap().0, Piece::Constant);
    let rep = verify_residual(&cb, &[x], &[t], &su.models, ResidualMethod::Auto).unwrap();
    let eps = g.eps;
    assert_eq!(rep.worst, -(eps * (1.0 - eps) * (eps - 0.3)));
    assert!(rep.worst >= cb.params.gamma * eps);
}

#[test]
fn emanation_super_conditions_hold() {
    let su = setup(0.3);
    let cb = candidate(&su, BoundKind::EmanationSuper, &ParamOptions::default());
    let p = &cb.params;
    let g = p.glue.unwrap();
    let t_eps = p.valid.1;
    assert!(g.eps < p.delta_prime);
    assert!(p.delta * (-p.lambda * (g.cut - p.offset)).exp() <= g.eps / 2.0 * (1.0 + 1e-12));
    assert!(t_eps <= -p.omega);
    assert!(p.speed * p.omega * (p.delta * t_eps).exp() <= 1.0 + 1e-12);
    assert!(p.speed * t_eps <= -g.cut - oracle_width(g.eps / 2.0) - 1.0 + 1e-9);
}

#[test]
fn sub_lies_below_super() {
    let su = setup(0.3);
    let sub = candidate(&su, BoundKind::EmanationSub, &ParamOptions::default());
    let sup = candidate(&su, BoundKind::EmanationSuper, &ParamOptions::default());
    let t_eps = sup.params.valid.1;
    assert!(t_eps <= sub.params.valid.1);
    for t in [t_eps, t_eps - 10.0, t_eps - 100.0] {
        for x in axis_points(-20.0, 600.0, 3000) {
            let a = sub.value(t, x).unwrap().unwrap();
            let b = sup.value(t, x).unwrap().unwrap();
            assert!(a <= b, "t = {t}, x = {x:?}: {a} > {b}");
        }
    }
}

#[test]
fn emanation_sub_vanishes_on_the_offset_section() {
    let su = setup(0.3);
    let cb = candidate(&su, BoundKind::EmanationSub, &ParamOptions::default());
    let t_end = cb.params.valid.1;
    for t in times(t_end - 200.0, t_end, 50) {
        for tau in [-0.9, 0.0, 0.7] {
            assert_eq!(cb.value(t, [4.0, tau]).unwrap(), Some(0.0));
            assert_eq!(cb.value(t, [2.0, tau]).unwrap(), Some(0.0));
        }
    }
}

#[test]
fn emanation_sub_recedes_in_the_past() {
    let su = setup(0.3);
    let cb = candidate(&su, BoundKind::EmanationSub, &ParamOptions::default());
    let pts = axis_points(4.0, 60.0, 50);
    let sup_at = |t: f64| pts.iter().map(|&x| cb.value(t, x).unwrap().unwrap()).fold(0.0, f64::max);
    assert!(sup_at(-1000.0) < 1e-12);
    assert!(sup_at(-2000.0) <= sup_at(-1000.0));
}

#[test]
fn region_errors_outside_validity() {
    let su = setup(0.3);
    let cb = candidate(&su, BoundKind::EmanationSub, &ParamOptions::default());
    let t = cb.params.valid.1 + 1.0;
    assert!(matches!(cb.value(t, [10.0, 0.0]), Err(BoundError::Region { .. })));
    let conv = candidate(&su, BoundKind::ConvergenceLower, &ParamOptions { anchor_time: 2.0, ..Default::default() });
    assert!(matches!(conv.value(1.0, [10.0, 0.0]), Err(BoundError::Region { .. })));
    assert_eq!(conv.value(3.0, [2.0, 0.0]).unwrap(), None);
}

#[test]
fn convergence_candidates_pass() {
    let su = setup(0.3);
    for kind in [BoundKind::ConvergenceLower, BoundKind::ConvergenceUpper] {
        let cb = candidate(&su, kind, &ParamOptions { anchor_time: 1.0, ..Default::default() });
        let p = &cb.params;
        let (_, gamma, c, m) = oracle_constants(0.3);
        assert!(p.delta <= (gamma.sqrt() * c).min(gamma).min(p.sigma / 3.0));
        assert!(p.omega * p.slope >= p.delta + gamma + 2.0 * m);
        let rep =
            verify_residual(&cb, &axis_points(4.0, 500.0, 300), &times(1.0, 200.0, 12), &su.models, ResidualMethod::Auto)
                .unwrap();
        assert!(rep.samples > 100);
        assert!(rep.passed(), "{}", rep.to_text());
    }
}

#[test]
fn junction_lower_on_the_slab() {
    let su = setup(0.3);
    let opts = ParamOptions { slab: Some((40.0, 12.0)), ..Default::default() };
    let cb = candidate(&su, BoundKind::JunctionLower, &opts);
    let p = &cb.params;
    assert!((p.valid.1 - (40.0 - 24.0 - 4.0) / p.speed).abs() < 1e-12);
    let pr = ClosedFormCubic::new(0.3);
    for x in axis_points(4.0, 80.0, 761) {
        let s = x[0];
        let v = cb.value(0.0, x).unwrap().unwrap();
        let f1 = pr.phi(-s - p.speed * (p.shifts.0 + p.omega));
        let f2 = pr.phi(s - p.speed * (p.shifts.1 + p.omega));
        if f1 >= 1.0 - p.delta && f2 >= 1.0 - p.delta {
            assert!(v >= 1.0 - 3.0 * p.delta);
        }
        // Below the slab datum 1 - delta inside, nonpositive part outside.
        if (28.0..=52.0).contains(&s) {
            assert!(v <= 1.0 - p.delta);
        } else {
            assert_eq!(v, 0.0, "s = {s}");
        }
    }
    assert!(cb.value(0.0, [40.0, 0.0]).unwrap().unwrap() >= 1.0 - 3.0 * p.delta);
    let rep = verify_residual(&cb, &axis_points(4.0, 80.0, 200), &times(0.0, p.valid.1, 10), &su.models, ResidualMethod::Auto)
        .unwrap();
    assert!(rep.passed(), "{}", rep.to_text());
}

#[test]
fn differences_agree_with_exact_derivatives() {
    let su = setup(0.3);
    let cb = candidate(&su, BoundKind::EmanationSub, &ParamOptions::default());
    let t_end = cb.params.valid.1;
    let pts = axis_points(4.0, 140.0, 60);
    let ts = times(t_end - 20.0, t_end, 6);
    let exact = verify_residual(&cb, &pts, &ts, &su.models, ResidualMethod::Auto).unwrap();
    let fd = verify_residual(&cb, &pts, &ts, &su.models, ResidualMethod::Differences { h: 0.05, dt: 1e-3 }).unwrap();
    assert!(!fd.analytic);
    assert_eq!(fd.tolerance, FD_TOL);
    assert!(fd.passed(), "{}", fd.to_text());
    assert!(fd.fd_error < FD_TOL / 5.0);
    assert_eq!(exact.samples, fd.samples);
}

#[test]
fn trivial_lower_bound_margin_is_min() {
    let b = |deg| BranchSpec::at_angle(deg, WidthProfile::Constant(2.0), 12.0);
    let spec = DomainSpec::new(3.0, vec![b(90.0), b(210.0), b(330.0)], None).unwrap();
    let grid = MaskedGrid::build(&spec, 0.25).unwrap();
    let vals: Vec<f64> = (0..grid.len()).map(|c| 0.2 + 0.5 * (c as f64 * 0.37).sin().abs()).collect();
    let u = ScalarField::new(0.0, vals);
    let rep = check_ordering(std::slice::from_ref(&u), &grid, &ConstantBound(0.0), Direction::Lower, 0.0).unwrap();
    assert_eq!(rep.margin, u.min());
    assert!(rep.passed());
    let up = check_ordering(&[u.clone()], &grid, &ConstantBound(1.0), Direction::Upper, 0.0).unwrap();
    assert_eq!(up.margin, 1.0 - u.max());
}

#[test]
fn kind_names_round_trip() {
    for k in BoundKind::ALL {
        assert_eq!(BoundKind::parse(k.name()), Some(k));
    }
    assert_eq!(BoundKind::parse("nope"), None);
}

#[test]
fn mismatched_parameters_are_rejected() {
    let su = setup(0.3);
    let p = choose_parameters(BoundKind::EmanationSub, su.profile.as_ref(), &su.weight, &su.models.reaction, 4.0)
        .unwrap();
    assert!(build_candidate(BoundKind::ConvergenceLower, su.profile.clone(), &su.weight, &p).is_err());
    assert!(choose_parameters(BoundKind::JunctionLower, su.profile.as_ref(), &su.weight, &su.models.reaction, 4.0)
        .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn smaller_delta_keeps_the_sub_valid(factor in 0.05f64..0.9) {
        let su = setup(0.3);
        let cb = candidate(&su, BoundKind::EmanationSub, &ParamOptions { delta_factor: factor, ..Default::default() });
        let t_end = cb.params.valid.1;
        let rep = verify_residual(
            &cb,
            &axis_points(4.0, 200.0, 80),
            &times(t_end - 20.0, t_end, 8),
            &su.models,
            ResidualMethod::Auto,
        )
        .unwrap();
        prop_assert!(rep.passed(), "{}", rep.to_text());
    }
}
