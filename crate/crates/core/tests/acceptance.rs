//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each, and exits non-zero if any fail.
//!
//! Run a subset with `cargo test --test acceptance -- 3 7`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use cpkit::als::{als_sweep, AlsConfig};
use cpkit::gauss_newton::{
    cp_cg, explicit_jtj, gradient, hessian_matvec, variable_offsets, vectorize, GnConfig, RegSchedule, RegShape,
    EXPLICIT_VARIABLE_CAP,
};
use cpkit::generators::{derive_seed, matmul_tensor, random_low_rank, random_model, FactorDistribution, Family, ProblemSpec};
use cpkit::harness::{bench_matvec, run_likelihood_ranks, run_matmul_protocol, ExperimentSpec, OptimizerSpec};
use cpkit::kruskal::objective_dense;
use cpkit::mttkrp::{mttkrp, mttkrp_naive};
use cpkit::{GammaSet, KruskalModel, Matrix, MttkrpWorkspace};
use nalgebra::{DMatrix, DVector};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn dense_matvec(h: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..h.rows()).map(|i| h.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn gaussian(dims: &[usize], rank: usize, seed: u64) -> KruskalModel {
    random_model(dims, rank, FactorDistribution::Gaussian, seed).unwrap()
}

/// Small random shape: order in {2,3,4}, extents in 1..=4, rank in 1..=3.
fn small_shape(case: u64) -> (Vec<usize>, usize) {
    let h = derive_seed(&[0xacce, case]);
    let order = 2 + (h % 3) as usize;
    let dims = (0..order).map(|m| 1 + ((h >> (8 + 4 * m)) % 4) as usize).collect();
    let rank = 1 + ((h >> 40) % 3) as usize;
    (dims, rank)
}

fn c1_matvec_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for case in 0..200 {
        let (dims, rank) = small_shape(case);
        let m = gaussian(&dims, rank, derive_seed(&[1, case]));
        let w = gaussian(&dims, rank, derive_seed(&[2, case])).into_factors();
        let h = explicit_jtj(&m, EXPLICIT_VARIABLE_CAP).unwrap();
        let implicit = vectorize(&hessian_matvec(&m, &GammaSet::build(&m), &w, 0.0, RegShape::Identity));
        worst = worst.max(rel(&implicit, &dense_matvec(&h, &vectorize(&w))));
    }
    check(worst <= 1e-12, format!("200 models, max relative error {worst:.2e} (tol 1e-12)"))
}

fn c2_diagonal_blocks() -> Outcome {
    let mut worst = 0.0f64;
    for case in 0..50 {
        let (mut dims, rank) = small_shape(1000 + case);
        if dims.len() < 3 {
            dims.push(3);
        }
        let m = gaussian(&dims, rank, derive_seed(&[3, case]));
        let h = explicit_jtj(&m, EXPLICIT_VARIABLE_CAP).unwrap();
        let offs = variable_offsets(&m);
        for n in 0..dims.len() {
            // Γ⁽ⁿ'ⁿ⁾ from scratch: Π_{m≠n} Σ_i a⁽ᵐ⁾_{ir} a⁽ᵐ⁾_{iz}
            let gamma = Matrix::from_fn(rank, rank, |r, z| {
                (0..dims.len())
                    .filter(|&q| q != n)
                    .map(|q| (0..dims[q]).map(|i| m.factor(q).get(i, r) * m.factor(q).get(i, z)).sum::<f64>())
                    .product()
            });
            let s = dims[n];
            for r in 0..rank {
                for z in 0..rank {
                    for k in 0..s {
                        for l in 0..s {
                            let want = if k == l { gamma.get(r, z) } else { 0.0 };
                            worst = worst.max((h.get(offs[n] + r * s + k, offs[n] + z * s + l) - want).abs());
                        }
                    }
                }
            }
        }
    }
    check(worst <= 1e-12, format!("50 models, max block deviation {worst:.2e} (tol 1e-12)"))
}

fn c3_gradient() -> Outcome {
    let mut worst = 0.0f64;
    for case in 0..50u64 {
        let order = 3 + (case % 2) as usize;
        let dims = vec![3 + (case % 3) as usize; order];
        let rank = 1 + (case % 4) as usize;
        let x = gaussian(&dims, rank + 1, derive_seed(&[4, case])).reconstruct().unwrap();
        let m = gaussian(&dims, rank, derive_seed(&[5, case]));
        let ms: Vec<Matrix> = (0..order).map(|n| mttkrp_naive(&x, m.factors(), n).unwrap()).collect();
        let g = gradient(&m, &ms, &GammaSet::build(&m));
        let h = 1e-5;
        let mut num = 0.0;
        let mut den = 0.0;
        for n in 0..order {
            for k in 0..dims[n] {
                for r in 0..rank {
                    let f = |d: f64| {
                        let mut mm = m.clone();
                        let mut a = mm.factor(n).clone();
                        a.set(k, r, a.get(k, r) + d);
                        mm.set_factor(n, a).unwrap();
                        objective_dense(&mm, &x).unwrap()
                    };
                    let fd = (f(h) - f(-h)) / (2.0 * h);
                    num += (g[n].get(k, r) - fd).powi(2);
                    den += fd * fd;
                }
            }
        }
        worst = worst.max((num / den).sqrt());
    }
    check(worst <= 1e-6, format!("50 instances, max relative error {worst:.2e} (tol 1e-6)"))
}

fn c4_cg_vs_dense() -> Outcome {
    let lambda = 1e-3;
    let cfg = GnConfig {
        cg_tol: 1e-10,
        cg_max_iters: Some(10_000),
        schedule: RegSchedule::constant(RegShape::Identity, lambda),
        ..GnConfig::default()
    };
    let mut worst = 0.0f64;
    let mut max_vars = 0;
    for case in 0..50u64 {
        // same model class as criteria 1 and 2; see tests/cg_conditioning.rs
        // for larger, worse-conditioned systems
        let (dims, rank) = small_shape(2000 + case);
        let order = dims.len();
        let m = gaussian(&dims, rank, derive_seed(&[6, case]));
        max_vars = max_vars.max(m.num_variables());
        let x = gaussian(&dims, rank, derive_seed(&[7, case])).reconstruct().unwrap();
        let ms: Vec<Matrix> = (0..order).map(|n| mttkrp_naive(&x, m.factors(), n).unwrap()).collect();
        let gammas = GammaSet::build(&m);
        let g = gradient(&m, &ms, &gammas);
        let out = cp_cg(&m, &gammas, &g, lambda, &cfg).unwrap();
        let h = explicit_jtj(&m, EXPLICIT_VARIABLE_CAP).unwrap();
        let nv = h.rows();
        let mut a = DMatrix::from_row_slice(nv, nv, h.as_slice());
        for i in 0..nv {
            a[(i, i)] += lambda;
        }
        let b = DVector::from_iterator(nv, vectorize(&g).into_iter().map(|v| -v));
        let exact = a.lu().solve(&b).expect("regularized system is nonsingular");
        worst = worst.max(rel(&vectorize(&out.update), exact.as_slice()));
    }
    check(
        worst <= 1e-6 && max_vars <= 200,
        format!("50 instances (≤{max_vars} variables), max relative error {worst:.2e} (tol 1e-6)"),
    )
}

fn c5_als_monotone() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for p in 0..20u64 {
        let size = 4 + (p % 3) as usize;
        let rank = 2 + (p % 4) as usize;
        let spec = ProblemSpec::new(Family::UNIFORM_11, 3, size, rank, derive_seed(&[8, p]));
        let (_, x) = random_low_rank(&spec).unwrap();
        let init = gaussian(&spec.dims, rank, derive_seed(&[9, p]));
        let cfg = AlsConfig { max_sweeps: 200, residual_tol: 0.0, step_tol: 0.0, ..AlsConfig::default() };
        let (_, report) = cpkit::als_optimize(&x, &init, &cfg).unwrap();
        if report.records.len() != 200 {
            return Err(format!("problem {p} stopped after {} sweeps", report.records.len()));
        }
        for w in report.records.windows(2) {
            worst = worst.max(w[1].residual - w[0].residual);
        }
    }
    check(worst <= 1e-12, format!("20 problems x 200 sweeps, largest increase {worst:.2e} (slack 1e-12)"))
}

fn c6_dimension_tree() -> Outcome {
    let mut worst = 0.0f64;
    let mut max_contractions = 0;
    for order in 3..=5usize {
        for case in 0..4u64 {
            let dims: Vec<usize> = (0..order).map(|m| 2 + (m + case as usize) % 3).collect();
            let rank = 2 + case as usize;
            let x = gaussian(&dims, rank, derive_seed(&[10, order as u64, case])).reconstruct().unwrap();
            let mut model = gaussian(&dims, rank, derive_seed(&[11, order as u64, case]));
            let mut ws = MttkrpWorkspace::new();
            for _ in 0..3 {
                // tree results against naive ones in ALS access order
                let mut probe = model.clone();
                let mut ws_probe = MttkrpWorkspace::new();
                for n in 0..order {
                    let tree = mttkrp(&x, probe.factors(), n, Some(&mut ws_probe)).unwrap();
                    let naive = mttkrp_naive(&x, probe.factors(), n).unwrap();
                    worst = worst.max(rel(tree.as_slice(), naive.as_slice()));
                    let mut f = probe.factor(n).clone();
                    f.scale(0.9);
                    probe.set_factor(n, f).unwrap();
                }
                let (next, diag) = als_sweep(&x, &model, 1e-3, &mut ws).unwrap();
                max_contractions = max_contractions.max(diag.full_contractions);
                model = next;
            }
        }
    }
    check(
        worst <= 1e-12 && max_contractions <= 2,
        format!("N=3..5, max relative error {worst:.2e} (tol 1e-12), max full contractions per sweep {max_contractions} (≤2)"),
    )
}

fn c7_likelihood_trend() -> Outcome {
    let ranks = [3, 5, 6, 7, 9];
    let problem = ProblemSpec::new(Family::UNIFORM_11, 3, 4, ranks[0], 0);
    let run = |optimizer| {
        let mut spec = ExperimentSpec::new(problem.clone(), optimizer, 2024);
        spec.num_problems = 30;
        spec.num_inits = 5;
        spec.init_distribution = FactorDistribution::Gaussian;
        run_likelihood_ranks(&spec, &ranks).unwrap()
    };
    let als = run(OptimizerSpec::Als(AlsConfig::default()));
    let gn = run(OptimizerSpec::Gn(GnConfig::default()));
    let mut ge_all = true;
    let mut strict = false;
    let mut table = Vec::new();
    for &r in &ranks {
        let (a, g) = (als.fraction(r).unwrap(), gn.fraction(r).unwrap());
        ge_all &= g >= a;
        strict |= [5, 6, 7].contains(&r) && g > a;
        table.push(format!("R={r}: gn {g:.3} / als {a:.3}"));
    }
    check(ge_all && strict, table.join(", "))
}

fn c8_strassen() -> Outcome {
    let report = run_matmul_protocol(2, 7, 100, 7).unwrap();
    let arm = report.arm("hybrid_armijo").unwrap();
    check(
        arm.converged >= 1,
        format!("hybrid with Armijo: {}/100 inits below 1e-5, best residual {:.2e}", arm.converged, arm.best_residual),
    )
}

fn c9_matmul_tensor() -> Outcome {
    let mut worst = 0.0f64;
    for n in [2usize, 3] {
        let t = matmul_tensor(n).unwrap();
        for pair in 0..100u64 {
            let a = cpkit::generators::random_matrix(n, n, FactorDistribution::Gaussian, derive_seed(&[12, pair]), n as u64);
            let b = cpkit::generators::random_matrix(n, n, FactorDistribution::Gaussian, derive_seed(&[13, pair]), n as u64);
            for i in 0..n {
                for j in 0..n {
                    let mut via_t = 0.0;
                    for k in 0..n {
                        for l in 0..n {
                            for q in 0..n {
                                for p in 0..n {
                                    via_t += t.get(&[i * n + j, k * n + l, q * n + p]) * a.get(k, l) * b.get(q, p);
                                }
                            }
                        }
                    }
                    let direct: f64 = (0..n).map(|k| a.get(i, k) * b.get(k, j)).sum();
                    worst = worst.max((via_t - direct).abs());
                }
            }
        }
    }
    check(worst <= 1e-13, format!("n=2,3 x 100 pairs, max deviation {worst:.2e} (tol 1e-13)"))
}

fn c10_matvec_scaling() -> Outcome {
    // interleaved rounds, best per configuration, to damp machine noise
    let configs = [(200usize, 100usize), (200, 200), (400, 100)];
    let mut best = [f64::INFINITY; 3];
    for round in 0..3 {
        for (k, &(s, r)) in configs.iter().enumerate() {
            let t = bench_matvec(&[s; 3], r, 50 + round, 0.05).unwrap();
            best[k] = best[k].min(t.seconds_per_call);
        }
    }
    let rank_ratio = best[1] / best[0];
    let size_ratio = best[2] / best[0];
    check(
        (2.5..=6.0).contains(&rank_ratio) && (1.4..=3.0).contains(&size_ratio),
        format!(
            "R 100->200: x{rank_ratio:.2} (want [2.5, 6]); s 200->400: x{size_ratio:.2} (want [1.4, 3]); base {:.2e} s",
            best[0]
        ),
    )
}

fn c11_cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_cpkit"))
            .args([
                "likelihood", "--order", "3", "--dims", "4", "--rank", "3,5", "--family", "uniform11", "--optimizer", "gn",
                "--problems", "6", "--inits", "3", "--seed", "17", "--threads", "2", "--format", "json", "--out",
            ])
            .arg(&path)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(path).unwrap()
    };
    let (a, b) = (run("a.json"), run("b.json"));
    check(a == b && !a.is_empty(), format!("two runs, {} bytes each, identical: {}", a.len(), a == b))
}

type Criterion = (usize, &'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    (1, "implicit matvec equals explicit JtJ", c1_matvec_oracle),
    (2, "diagonal blocks are Gamma kron I", c2_diagonal_blocks),
    (3, "gradient matches finite differences", c3_gradient),
    (4, "CG matches dense regularized solve", c4_cg_vs_dense),
    (5, "ALS residual is monotone at lambda=0", c5_als_monotone),
    (6, "dimension tree equivalence and contraction budget", c6_dimension_tree),
    (7, "GN convergence likelihood dominates ALS", c7_likelihood_trend),
    (8, "rank-7 2x2 matmul decomposition found", c8_strassen),
    (9, "matmul tensor reproduces products", c9_matmul_tensor),
    (10, "matvec cost scaling", c10_matvec_scaling),
    (11, "CLI likelihood output is deterministic", c11_cli_determinism),
];

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for &(id, name, f) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {id:>2}  {name}  [{detail}]  ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {id:>2}  {name}  [{detail}]  ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
