//! Self-contained validation suites: closed-form oracles, identities and
//! solver checks runnable from the CLI (`rtd validate`) and reused by the
//! acceptance tests at their full sample counts.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::builders;
use crate::config::SystemConfig;
use crate::conic::{self, ConicProblem, LmiBlock, QuadForm, SolveOptions, SolveStatus};
use crate::metrics;
use crate::network::{generate_channel_set, sample_vector_in_ball, substream, Purpose};
use crate::rtd::{run_rtd, RtdOptions};
use crate::worstcase::{interference_weights, worst_case_d2d_coeffs, worst_norm_max, worst_norm_min};

/// Outcome of one validation suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    fn pass(name: &'static str, detail: String) -> Self {
        SuiteResult {
            name,
            passed: true,
            detail,
        }
    }
    fn fail(name: &'static str, detail: String) -> Self {
        SuiteResult {
            name,
            passed: false,
            detail,
        }
    }
}

/// O(1)-amplitude scenario used by the randomized suites.
fn o1_config(cells: usize, m: usize, n: usize, b: usize, mu: f64, seed: u64) -> SystemConfig {
    let mut cfg = SystemConfig::desk();
    cfg.cells = cells;
    cfg.cus_per_cell = m;
    cfg.d2d_per_cell = n;
    cfg.bs_antennas = b;
    cfg.csi_error_level = mu;
    cfg.seed = seed;
    cfg.pl_ref_db = -20.0;
    cfg.pathloss_exponent = 1.0;
    cfg
}

/// Ball-extremizer oracle: on random (estimate, radius) pairs the closed
/// forms must bracket `samples` ball draws, and the returned extremizers
/// must attain their values to 1e-12.
pub fn lemma_ball_extremizers(pairs: usize, samples: usize) -> SuiteResult {
    const NAME: &str = "lemma-ball-extremizers";
    let mut rng = ChaCha8Rng::seed_from_u64(0x1eaf);
    for case in 0..pairs {
        let dim = 1 + case % 4;
        let h = DVector::from_fn(dim, |_, _| {
            Complex64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
        });
        let eps = rng.random::<f64>() * 1.5;
        let lo = worst_norm_min(&h, eps);
        let hi = worst_norm_max(&h, eps);
        let at_lo = (&h + &lo.delta).norm_squared();
        let at_hi = (&h + &hi.delta).norm_squared();
        if (at_lo - lo.value).abs() > 1e-12 * (1.0 + lo.value)
            || (at_hi - hi.value).abs() > 1e-12 * (1.0 + hi.value)
        {
            return SuiteResult::fail(NAME, format!("case {case}: extremizer does not attain"));
        }
        for _ in 0..samples {
            let d = sample_vector_in_ball(dim, eps, &mut rng);
            let v = (&h + &d).norm_squared();
            if v < lo.value - 1e-9 || v > hi.value + 1e-9 {
                return SuiteResult::fail(
                    NAME,
                    format!("case {case}: sample {v} escapes [{}, {}]", lo.value, hi.value),
                );
            }
        }
    }
    SuiteResult::pass(NAME, format!("{pairs} pairs x {samples} samples bracketed"))
}

/// MMSE-SINR identity: on random instances the expectation-form MMSE at
/// the MMSE filter equals `1/(1+SINR)` (cellular) and the worst-case D2D
/// variant likewise, to 1e-9.
pub fn mmse_sinr_identity(instances: usize) -> SuiteResult {
    const NAME: &str = "mmse-sinr-identity";
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e0);
    let mut worst = 0.0f64;
    for case in 0..instances {
        let cells = 1 + (case % 2);
        let m = 1 + (case / 2) % 2;
        let b = m + (case / 4) % (5 - m).min(3);
        let n = case % 3;
        let cfg = o1_config(cells, m, n, b, 0.3, 1000 + case as u64);
        let set = generate_channel_set(&cfg, 0).unwrap();
        let dims = *set.dims();
        let p_cu: Vec<f64> = (0..dims.total_cus()).map(|_| rng.random::<f64>() * 0.2).collect();
        let p_d2d: Vec<f64> = (0..dims.total_d2d()).map(|_| rng.random::<f64>() * 0.2).collect();
        let n0 = 1e-3 + rng.random::<f64>() * 1e-2;

        for cell in 0..dims.cells {
            for user in 0..dims.cus_per_cell {
                let w = metrics::bs_mmse_filter(&set.actual, &p_cu, &p_d2d, n0, cell, user);
                let mmse =
                    metrics::cellular_mse_at_filter(&set.actual, &p_cu, &p_d2d, n0, &w, cell, user);
                let sinr = metrics::cellular_sinr(&set.actual, &p_cu, &p_d2d, n0, &w, cell, user);
                let gap = (mmse - 1.0 / (1.0 + sinr)).abs();
                worst = worst.max(gap);
                if gap > 1e-9 {
                    return SuiteResult::fail(
                        NAME,
                        format!("cellular case {case} cell {cell} user {user}: gap {gap:e}"),
                    );
                }
            }
        }
        let coeffs = worst_case_d2d_coeffs(&set.estimated, &set.radii);
        for s in 0..dims.total_d2d() {
            if p_d2d[s] == 0.0 {
                continue;
            }
            let f = metrics::d2d_mmse_equalizer(&coeffs, &p_cu, &p_d2d, n0, s);
            let mse = metrics::d2d_mse(f, &coeffs, &p_cu, &p_d2d, n0, s);
            let sinr = metrics::worst_case_d2d_sinr(&coeffs, &p_cu, &p_d2d, n0, s);
            let gap = (mse - 1.0 / (1.0 + sinr)).abs();
            worst = worst.max(gap);
            if gap > 1e-9 {
                return SuiteResult::fail(NAME, format!("d2d case {case} link {s}: gap {gap:e}"));
            }
        }
    }
    SuiteResult::pass(NAME, format!("{instances} instances, worst gap {worst:.2e}"))
}

/// S-procedure soundness: build and solve all three subproblem kinds on
/// random scenarios and verify every lifted robust constraint at sampled
/// uncertainties (no violation beyond 1e-8).
pub fn sprocedure_soundness(scenarios: usize, samples_per_constraint: usize) -> SuiteResult {
    const NAME: &str = "s-procedure-soundness";
    let opts = SolveOptions::default();
    let mut worst = f64::NEG_INFINITY;
    for case in 0..scenarios {
        let cells = 1 + case % 2;
        let m = 1 + case % 2;
        let n = 1 + case % 2;
        let b = m + 1 + (case / 2) % 2;
        let mu = 0.1 + 0.5 * (case as f64 / scenarios.max(1) as f64);
        let cfg = o1_config(cells, m, n, b, mu, 2000 + case as u64);
        let set = generate_channel_set(&cfg, 0).unwrap();
        let dims = *set.dims();
        let mut rng = substream(3000 + case as u64, 0, Purpose::Evaluation);

        let q_cu: Vec<f64> = (0..dims.total_cus())
            .map(|_| 0.1 + rng.random::<f64>() * 0.4)
            .collect();
        let q_d2d: Vec<f64> = (0..dims.total_d2d())
            .map(|_| 0.05 + rng.random::<f64>() * 0.3)
            .collect();
        let n0 = 5e-3;

        // receive designs, keeping the solutions for the power stages
        let mut combiners = Vec::new();
        let mut gammas = Vec::new();
        for cell in 0..dims.cells {
            let (problem, layout) = match builders::build_receive_design(
                cell, &q_cu, &q_d2d, &set.estimated, &set.radii, n0,
            ) {
                Ok(x) => x,
                Err(e) => return SuiteResult::fail(NAME, format!("case {case}: build {e}")),
            };
            let report = conic::solve(&problem, &opts);
            if report.status != SolveStatus::Optimal {
                return SuiteResult::fail(NAME, format!("case {case}: receive not optimal"));
            }
            worst = worst.max(layout.check_soundness(&report.x, samples_per_constraint, &mut rng));
            let sol = builders::extract_receive_solution(&report, &layout);
            combiners.push(sol.combiner);
            gammas.push(sol.gamma);
        }

        // D2D closed forms feed the power problems
        let coeffs = worst_case_d2d_coeffs(&set.estimated, &set.radii);
        let p_cu: Vec<f64> = q_cu.iter().map(|q| q * q).collect();
        let p_d2d: Vec<f64> = q_d2d.iter().map(|q| q * q).collect();
        let mut equalizers = Vec::new();
        let mut gamma_d2d = Vec::new();
        for s in 0..dims.total_d2d() {
            let f = metrics::d2d_mmse_equalizer(&coeffs, &p_cu, &p_d2d, n0, s);
            let mse = metrics::d2d_mse(f, &coeffs, &p_cu, &p_d2d, n0, s);
            equalizers.push(f);
            gamma_d2d.push(((metrics::u_star(mse) - 1.0) / 2.0).exp());
        }

        for t in 0..dims.total_cus() {
            let k = builders::cu_interference_coeff(t, &gamma_d2d, &equalizers, &coeffs);
            let (problem, layout) = builders::build_cu_power(
                t,
                &combiners,
                &gammas,
                k,
                &set.estimated,
                &set.radii,
                0.3,
            )
            .unwrap();
            let report = conic::solve(&problem, &opts);
            if report.status != SolveStatus::Optimal {
                return SuiteResult::fail(NAME, format!("case {case}: cu power not optimal"));
            }
            worst = worst.max(layout.check_soundness(&report.x, samples_per_constraint, &mut rng));
        }

        let rho = interference_weights(&set.estimated, &set.radii);
        let caps = vec![0.5; dims.cells];
        let (theta, phi) = builders::d2d_power_coefficients(&gamma_d2d, &equalizers, &coeffs);
        let (problem, layout) = builders::build_d2d_power(
            &combiners,
            &theta,
            &phi,
            &rho,
            &caps,
            &set.estimated,
            &set.radii,
            0.3,
        )
        .unwrap();
        let report = conic::solve(&problem, &opts);
        if report.status != SolveStatus::Optimal {
            return SuiteResult::fail(NAME, format!("case {case}: d2d power not optimal"));
        }
        worst = worst.max(layout.check_soundness(&report.x, samples_per_constraint, &mut rng));

        if worst > 1e-8 {
            return SuiteResult::fail(NAME, format!("case {case}: violation {worst:e}"));
        }
    }
    SuiteResult::pass(
        NAME,
        format!("{scenarios} scenarios, worst violation {worst:.2e}"),
    )
}

/// Descent monitor: full runs must have a non-increasing objective trace
/// bounded below by the Cauchy-Schwarz bound.
pub fn descent_monitor(drops: usize, mu: f64) -> SuiteResult {
    const NAME: &str = "descent-monitor";
    let mut cfg = SystemConfig::desk();
    cfg.csi_error_level = mu;
    let opts = RtdOptions::default();
    for drop in 0..drops as u64 {
        let set = match generate_channel_set(&cfg, drop) {
            Ok(s) => s,
            Err(e) => return SuiteResult::fail(NAME, format!("drop {drop}: {e}")),
        };
        let result = match run_rtd(&cfg, &set, drop, &opts) {
            Ok(r) => r,
            Err(e) => return SuiteResult::fail(NAME, format!("drop {drop}: {e}")),
        };
        for w in result.objective_trace.windows(2) {
            if w[1] > w[0] + 1e-6 * (1.0 + w[0].abs()) {
                return SuiteResult::fail(
                    NAME,
                    format!("drop {drop}: objective rose {} -> {}", w[0], w[1]),
                );
            }
        }
        for &v in &result.objective_trace {
            if v < result.objective_lower_bound - 1e-9 {
                return SuiteResult::fail(
                    NAME,
                    format!(
                        "drop {drop}: objective {v} below bound {}",
                        result.objective_lower_bound
                    ),
                );
            }
        }
        if result.max_constraint_violation > 1e-8 {
            return SuiteResult::fail(
                NAME,
                format!("drop {drop}: constraint violation {}", result.max_constraint_violation),
            );
        }
    }
    SuiteResult::pass(NAME, format!("{drops} drops monotone and bounded"))
}

/// Analytic solver cases plus dense grid-search agreement on random tiny
/// instances.
pub fn solver_suite(grid_instances: usize) -> SuiteResult {
    const NAME: &str = "solver-analytic";
    let opts = SolveOptions::default();

    // min x s.t. [[x, 1], [1, x]] >= 0  ->  x* = 1
    let mut p = ConicProblem::new(1);
    p.objective.lin.push((0, 1.0));
    p.lmi_blocks.push(LmiBlock::from_hermitian(
        2,
        &[(0, 1, Complex64::new(1.0, 0.0))],
        vec![(
            0,
            vec![
                (0, 0, Complex64::new(1.0, 0.0)),
                (1, 1, Complex64::new(1.0, 0.0)),
            ],
        )],
    ));
    p.initial_point = vec![2.0];
    let r = conic::solve(&p, &opts);
    if r.status != SolveStatus::Optimal || (r.x[0] - 1.0).abs() > 1e-6 {
        return SuiteResult::fail(NAME, format!("lmi case: x = {}", r.x[0]));
    }

    // min (q-2)^2 over [0, 1]  ->  q* = 1
    let mut p = ConicProblem::new(1);
    p.objective.quad.push((0, 0, 2.0));
    p.objective.lin.push((0, -4.0));
    p.objective.constant = 4.0;
    p.lower[0] = 0.0;
    p.upper[0] = 1.0;
    p.initial_point = vec![0.5];
    let r = conic::solve(&p, &opts);
    if r.status != SolveStatus::Optimal || (r.x[0] - 1.0).abs() > 1e-6 {
        return SuiteResult::fail(NAME, format!("box case: q = {}", r.x[0]));
    }

    // min q^2 - 2 ln gamma s.t. gamma <= 3, q in [0, 10]
    let mut p = ConicProblem::new(2);
    p.objective.quad.push((0, 0, 2.0));
    p.log_terms.push((1, 2.0));
    let mut g = QuadForm::default();
    g.lin.push((1, 1.0));
    g.constant = -3.0;
    p.scalar_ineqs.push(g);
    p.lower[0] = 0.0;
    p.upper[0] = 10.0;
    p.lower[1] = 0.0;
    p.initial_point = vec![1.0, 1.0];
    let r = conic::solve(&p, &opts);
    if r.status != SolveStatus::Optimal
        || r.x[0].abs() > 1e-6
        || (r.x[1] - 3.0).abs() > 1e-6
    {
        return SuiteResult::fail(NAME, format!("separable case: {:?}", r.x));
    }

    // grid agreement on random tiny instances
    let mut rng = ChaCha8Rng::seed_from_u64(0x9d1d);
    for case in 0..grid_instances {
        let n = 3;
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let q = a.transpose() * &a;
        let mut p = ConicProblem::new(n);
        for r0 in 0..n {
            for c0 in 0..n {
                if q[(r0, c0)] != 0.0 {
                    p.objective.quad.push((r0, c0, q[(r0, c0)]));
                }
            }
        }
        for i in 0..n {
            p.objective.lin.push((i, rng.random::<f64>() - 0.5));
            p.lower[i] = -1.0;
            p.upper[i] = 1.0;
        }
        let f0 = [
            (0usize, 0usize, 1.0 + rng.random::<f64>()),
            (1, 1, 1.0 + rng.random::<f64>()),
            (0, 1, 0.3 * (rng.random::<f64>() - 0.5)),
        ];
        let mut coeffs = Vec::new();
        let mut terms = Vec::new();
        for i in 0..n {
            let e = [
                0.4 * (rng.random::<f64>() - 0.5),
                0.4 * (rng.random::<f64>() - 0.5),
                0.4 * (rng.random::<f64>() - 0.5),
            ];
            coeffs.push(e);
            terms.push((i, vec![(0, 0, e[0]), (1, 1, e[1]), (0, 1, e[2])]));
        }
        p.lmi_blocks.push(LmiBlock::from_real(2, &f0, terms));
        p.initial_point = vec![0.0; n];
        let r = conic::solve(&p, &opts);
        if r.status != SolveStatus::Optimal {
            return SuiteResult::fail(NAME, format!("grid case {case}: not optimal"));
        }

        let psd2 = |x: &[f64]| {
            let m00 = f0[0].2 + (0..n).map(|i| x[i] * coeffs[i][0]).sum::<f64>();
            let m11 = f0[1].2 + (0..n).map(|i| x[i] * coeffs[i][1]).sum::<f64>();
            let m01 = f0[2].2 + (0..n).map(|i| x[i] * coeffs[i][2]).sum::<f64>();
            m00 >= 0.0 && m11 >= 0.0 && m00 * m11 - m01 * m01 >= 0.0
        };
        let mut best_x = vec![0.0; n];
        let mut best = p.objective.value(&best_x);
        let mut centers = vec![0.0; n];
        let mut width = 1.0f64;
        for _stage in 0..4 {
            let steps = 40;
            let mut xs = vec![0.0; n];
            for i0 in 0..=steps {
                xs[0] = (centers[0] - width + 2.0 * width * i0 as f64 / steps as f64).clamp(-1.0, 1.0);
                for i1 in 0..=steps {
                    xs[1] =
                        (centers[1] - width + 2.0 * width * i1 as f64 / steps as f64).clamp(-1.0, 1.0);
                    for i2 in 0..=steps {
                        xs[2] = (centers[2] - width + 2.0 * width * i2 as f64 / steps as f64)
                            .clamp(-1.0, 1.0);
                        if psd2(&xs) {
                            let v = p.objective.value(&xs);
                            if v < best {
                                best = v;
                                best_x = xs.clone();
                            }
                        }
                    }
                }
            }
            centers = best_x.clone();
            width /= 15.0;
        }
        if (r.objective_value - best).abs() > 1e-3 * (1.0 + best.abs()) {
            return SuiteResult::fail(
                NAME,
                format!("grid case {case}: solver {} vs grid {best}", r.objective_value),
            );
        }
    }
    SuiteResult::pass(
        NAME,
        format!("3 analytic cases + {grid_instances} grid instances"),
    )
}

/// The CLI validation set (desk-scale sample counts).
pub fn run_all() -> Vec<SuiteResult> {
    vec![
        lemma_ball_extremizers(20, 2000),
        mmse_sinr_identity(40),
        sprocedure_soundness(4, 50),
        solver_suite(5),
        descent_monitor(2, 0.3),
    ]
}
