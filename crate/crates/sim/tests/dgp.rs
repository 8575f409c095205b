use rand::Rng;
use rand_distr::StandardNormal;
use stratkit::rng;
use stratkit_sim::dgp::{late_truth_mc, ORACLE_DRAWS};
use stratkit_sim::*;

fn spec(model: u8, param: Param, n: usize) -> DgpSpec {
    DgpSpec::new(model, param, n).unwrap()
}

#[test]
fn model1_effect_mean() {
    let p = draw_potential_ate(&spec(1, Param::Ate, 1_000_000), &mut rng::seeded(1));
    let diffs: Vec<f64> = (0..p.n()).map(|i| p.r1.row(i)[0] - p.r0.row(i)[0]).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
    let se = (var / diffs.len() as f64).sqrt();
    assert!((mean - 0.2).abs() <= 3.0 * se + 1e-9, "mean {mean}, se {se}");
}

#[test]
fn model3_control_variance_follows_x4() {
    let s = spec(3, Param::Ate, 1_000_000);
    let p = draw_potential_ate(&s, &mut rng::seeded(2));
    let x4: Vec<f64> = p.x.iter().map(|r| r[0].powi(4)).collect();
    let z: Vec<f64> = (0..p.n()).map(|i| (p.r0.row(i)[0] - s.mu(0, p.x.row(i)[0])).powi(2)).collect();
    let n = z.len() as f64;
    let (mx, mz) = (x4.iter().sum::<f64>() / n, z.iter().sum::<f64>() / n);
    let sxx: f64 = x4.iter().map(|v| (v - mx).powi(2)).sum();
    let sxz: f64 = x4.iter().zip(&z).map(|(a, b)| (a - mx) * (b - mz)).sum();
    let slope = sxz / sxx;
    let intercept = mz - slope * mx;
    // Heteroskedasticity-robust slope standard error.
    let hc: f64 = x4
        .iter()
        .zip(&z)
        .map(|(a, b)| ((a - mx) * (b - intercept - slope * a)).powi(2))
        .sum();
    let se = hc.sqrt() / sxx;
    assert!((slope - 1.0).abs() <= 3.0 * se, "slope {slope}, se {se}");
}

#[test]
fn draws_are_deterministic() {
    let s = spec(2, Param::Late, 500);
    let a = draw_potential(&s, &mut rng::seeded(9));
    let b = draw_potential(&s, &mut rng::seeded(9));
    assert_eq!(a, b);
    let c = draw_potential(&s, &mut rng::seeded(10));
    assert_ne!(a, c);
}

#[test]
fn late_compliance_is_monotone() {
    for m in 1..=3 {
        let p = draw_potential_late(&spec(m, Param::Late, 100_000), &mut rng::seeded(u64::from(m)));
        for i in 0..p.n() {
            let (d1, d0) = (p.r1.row(i)[1], p.r0.row(i)[1]);
            assert!(d1 >= d0);
            assert!(d1 == 0.0 || d1 == 1.0);
        }
    }
}

#[test]
fn late_outcomes_follow_take_up() {
    let s = spec(2, Param::Late, 10_000);
    let p = draw_potential_late(&s, &mut rng::seeded(4));
    for i in 0..p.n() {
        let x = p.x.row(i)[0];
        // Never-takers and always-takers see the same outcome in both arms.
        if p.r1.row(i)[1] == p.r0.row(i)[1] {
            assert_eq!(p.r1.row(i)[0], p.r0.row(i)[0]);
        } else {
            let e = (p.r0.row(i)[0] - s.mu(0, x)) / s.sigma(0, x);
            let y1 = s.mu(1, x) + s.sigma(1, x) * e;
            assert!((p.r1.row(i)[0] - y1).abs() < 1e-9 * (1.0 + y1.abs()));
        }
    }
}

#[test]
fn control_take_up_matches_direct_oracle() {
    let p = draw_potential_late(&spec(1, Param::Late, 1_000_000), &mut rng::seeded(5));
    let n = p.n() as f64;
    let mean = p.r0.iter().map(|r| r[1]).sum::<f64>() / n;
    // Independent plain simulation of 1{0.5 + alpha(X) > e1}, e1 ~ N(0, 4).
    let mut g = rng::seeded(77);
    let draws = 10_000_000;
    let mut hits = 0u64;
    for _ in 0..draws {
        let x: f64 = g.sample(StandardNormal);
        let e1: f64 = 2.0 * g.sample::<f64, _>(StandardNormal);
        hits += u64::from(0.5 + x + (x * x - 1.0) / 3.0 > e1);
    }
    let oracle = hits as f64 / draws as f64;
    let se = (oracle * (1.0 - oracle) * (1.0 / n + 1.0 / draws as f64)).sqrt();
    assert!((mean - oracle).abs() <= 3.0 * se, "{mean} vs {oracle}");
    // Quadrature value.
    assert!((oracle - 0.577_474_897).abs() < 1e-3);
}

/// Composite Simpson rule for `E[p_c(X) tau(X)] / E[p_c(X)]` on [-12, 12].
fn late_by_quadrature(model: u8) -> f64 {
    let s = spec(model, Param::Late, 0);
    let m = 40_000;
    let (a, b) = (-12.0f64, 12.0f64);
    let h = (b - a) / m as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..=m {
        let x = a + h * j as f64;
        let w = if j == 0 || j == m {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let f = (-0.5 * x * x).exp() * DgpSpec::complier_probability(x);
        num += w * f * s.effect(x);
        den += w * f;
    }
    num / den
}

#[test]
fn late_truth_agrees_with_quadrature() {
    // Reference values from adaptive quadrature in double precision.
    let reference = [(2u8, -0.530_972_441_543_019_6), (3u8, -0.408_950_769_323_727_87)];
    for (m, want) in reference {
        let quad = late_by_quadrature(m);
        assert!((quad - want).abs() < 1e-9, "model {m}: simpson {quad} vs {want}");
        let t = true_theta(&spec(m, Param::Late, 0));
        assert!(t.se <= 1e-3);
        assert!((t.value - want).abs() <= 3.0 * t.se + 1e-6, "model {m}: {t:?}");
        assert!(matches!(t.method, TruthMethod::MonteCarlo { draws, .. } if draws == 10_000_000));
    }
    let small = late_truth_mc(3, 1 << 20, 5);
    assert!((small.value - reference[1].1).abs() < 1e-3);
}

#[test]
fn oracle_paths_agree_on_model1() {
    let s = spec(1, Param::Ate, 0);
    let cf = oracle_closed_form(&s, 0.5).unwrap();
    let mc = oracle_quasi_mc(&s, 0.5, 1 << 21, 3).unwrap();
    assert!((cf.ratio - mc.ratio).abs() < 2e-3, "{cf:?} {mc:?}");
    assert!(mc.v >= mc.v_star);
    assert_eq!(ORACLE_DRAWS, 10_000_000);
}

#[test]
fn late_oracle_orders_variances() {
    let o = oracle_quasi_mc(&spec(1, Param::Late, 0), 0.5, 1 << 20, 8).unwrap();
    assert!(o.v > o.v_star && o.v_star > 0.0, "{o:?}");
}
