//! Acceptance criteria, one test each. Every test writes a single
//! `PASS`/`FAIL` line straight to stdout (so it survives output capture)
//! and then asserts. Benchmark runs are shared between criteria and cached
//! per seed.

use std::io::Write as _;
use std::path::PathBuf;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use ndarray::{array, Array1, Array2, ArrayView2};
use nvmc::autodiff::{ActivationKind, Layer, MlpParams};
use nvmc::nodal::{moment_converges, simulate_toy_moments, NodalScaling, Sampling, Verdict};
use nvmc::report::{find_pseudo_convergence, log_log_pearson, threshold_check, ReportRow};
use nvmc::scan::{run_scan, scan_report, ScanPlan, ScanTable};
use nvmc::trainer::{metrics_csv, residual_loss, train, train_and_write, variance_adjoint, variance_loss, ResidualWeights};
use nvmc::{BoundaryFactor, Envelope, EvalBatch, HamiltonianSpec, InputFeatures, RunConfig, RunRecord, WavefunctionModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: [u64; 3] = [1, 2, 3];
const THRESHOLD: f64 = 1e-3;

fn verdict(name: &str, pass: bool, detail: impl std::fmt::Display) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{name}: {detail}");
}

fn config(json: &str) -> RunConfig {
    RunConfig::from_json(json).unwrap()
}

fn rel(value: f64, reference: f64) -> f64 {
    ((value - reference) / reference).abs()
}

// ---------------------------------------------------------------- derivatives

struct Case {
    system: HamiltonianSpec,
    model: WavefunctionModel,
    ortho: WavefunctionModel,
    x: Array2<f64>,
}

fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (system, features, boundary) = match seed % 4 {
        0 => (
            HamiltonianSpec::HarmonicOscillator2D { mass: 1.0, omega: 1.0 },
            InputFeatures::Cartesian,
            BoundaryFactor::None,
        ),
        1 => (HamiltonianSpec::Hydrogen3D {}, InputFeatures::CartesianRadius, BoundaryFactor::None),
        2 => (
            HamiltonianSpec::CharmoniumRadial { l: 1, s: 1, r_max: 15.0 },
            InputFeatures::Cartesian,
            BoundaryFactor::RadialOrigin { power: 2 },
        ),
        _ => (
            HamiltonianSpec::DoubleWell2D { alpha: 1.0, mass: 1.0, omega_y: 1.0, separation: 1.5 },
            InputFeatures::Cartesian,
            BoundaryFactor::None,
        ),
    };
    let d = system.dim();
    let layers = rng.random_range(1..=2);
    let widths: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=8)).collect();
    let build = |rng: &mut ChaCha8Rng| {
        let act = if rng.random::<bool>() { ActivationKind::Tanh } else { ActivationKind::Gaussian };
        let env = Envelope::Gaussian {
            widths: vec![rng.random_range(0.8..2.0)],
        };
        WavefunctionModel::init(d, &widths, act, env, boundary.clone(), features, rng).unwrap()
    };
    let model = build(&mut rng);
    let ortho = build(&mut rng);
    let x = Array2::from_shape_fn((12, d), |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        if d == 1 { v.abs() + 0.3 } else { v }
    });
    // Keep Coulomb rows away from the singular point.
    let x = if d == 3 { x.mapv(|v| if v.abs() < 0.2 { v + 0.4 } else { v }) } else { x };
    Case { system, model, ortho, x }
}

/// `max |a - b| <= tol * max |b|`.
fn close(a: &[f64], b: &[f64], tol: f64) -> Result<(), String> {
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let worst = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if worst <= tol * scale {
        Ok(())
    } else {
        Err(format!("max error {worst:.3e} vs scale {scale:.3e}"))
    }
}

fn fd_params(model: &WavefunctionModel, f: impl Fn(&WavefunctionModel) -> f64) -> Vec<f64> {
    let base = model.params_flat();
    let h = 1e-5;
    let mut m = model.clone();
    (0..base.len())
        .map(|j| {
            let mut p = base.clone();
            p[j] = base[j] + h;
            m.set_params_flat(&p).unwrap();
            let up = f(&m);
            p[j] = base[j] - h;
            m.set_params_flat(&p).unwrap();
            (up - f(&m)) / (2.0 * h)
        })
        .collect()
}

fn check_case(c: &Case) -> Result<(), String> {
    let batch = c.model.psi_batch(c.x.view()).map_err(|e| e.to_string())?;
    let psi = |rows: ArrayView2<f64>| c.model.psi_values(rows).unwrap();
    let (n, d) = c.x.dim();
    let (mut grad_fd, mut lap_fd) = (Vec::new(), Vec::new());
    for i in 0..n {
        let mut lap = 0.0;
        for j in 0..d {
            let shifted = |h: f64| {
                let mut r = c.x.row(i).to_owned().insert_axis(ndarray::Axis(0));
                r[[0, j]] += h;
                psi(r.view())[0]
            };
            grad_fd.push((shifted(1e-5) - shifted(-1e-5)) / 2e-5);
            let h = 1e-4;
            lap += (shifted(h) - 2.0 * shifted(0.0) + shifted(-h)) / (h * h);
        }
        lap_fd.push(lap);
    }
    close(batch.grad.as_slice().unwrap(), &grad_fd, 1e-4).map_err(|e| format!("input gradient: {e}"))?;
    close(batch.laplacian.as_slice().unwrap(), &lap_fd, 1e-4).map_err(|e| format!("laplacian: {e}"))?;

    let var = |m: &WavefunctionModel| variance_loss(&c.system, m, c.x.view(), false, 0.0).unwrap().loss;
    let eval = variance_loss(&c.system, &c.model, c.x.view(), false, 0.0).map_err(|e| e.to_string())?;
    close(&eval.grad, &fd_params(&c.model, var), 1e-4).map_err(|e| format!("variance loss: {e}"))?;

    let w = ResidualWeights { lambda_orth: 0.7, lambda_norm: 0.3, c0: 0.5, population_overlap: false };
    let ortho = [c.ortho.clone()];
    let e = eval.stats.mean + 0.1;
    let res = |m: &WavefunctionModel, e: f64| residual_loss(&c.system, m, c.x.view(), e, &ortho, w).unwrap().0.loss;
    let (reval, _) = residual_loss(&c.system, &c.model, c.x.view(), e, &ortho, w).map_err(|e| e.to_string())?;
    close(&reval.grad, &fd_params(&c.model, |m| res(m, e)), 1e-4).map_err(|e| format!("residual loss: {e}"))?;
    let h = 1e-5;
    let de = (res(&c.model, e + h) - res(&c.model, e - h)) / (2.0 * h);
    close(&[reval.grad_energy], &[de], 1e-4).map_err(|e| format!("residual dL/dE: {e}"))
}

#[test]
fn derivative_correctness() {
    let t = Instant::now();
    let failures: Vec<String> = (0..20)
        .filter_map(|seed| check_case(&random_case(seed)).err().map(|e| format!("net {seed}: {e}")))
        .collect();
    let secs = t.elapsed().as_secs_f64();
    verdict(
        "derivative correctness",
        failures.is_empty() && secs < 60.0,
        format!("20 random nets, rel tol 1e-4, {secs:.1} s {failures:?}"),
    );
}

// ---------------------------------------------------------- zero variance

#[test]
fn zero_variance_principle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ho = HamiltonianSpec::HarmonicOscillator2D { mass: 1.0, omega: 1.0 };
    // Constant network under a unit Gaussian: the exact ground state.
    let mlp = MlpParams::new(
        vec![
            Layer::new(array![[0.3, -0.2], [0.1, 0.4], [-0.5, 0.2]], array![0.1, -0.1, 0.3]),
            Layer::new(array![[0.0, 0.0, 0.0]], array![0.7]),
        ],
        vec![ActivationKind::Gaussian],
    )
    .unwrap();
    let exact = WavefunctionModel::new(
        mlp,
        Envelope::Gaussian { widths: vec![1.0] },
        BoundaryFactor::None,
        InputFeatures::Cartesian,
        2,
    )
    .unwrap();
    let x = Array2::from_shape_fn((1000, 2), |_| StandardNormal.sample(&mut rng));
    let ho_eval = variance_loss(&ho, &exact, x.view(), false, 0.0).unwrap();
    let ho_grad = ho_eval.grad.iter().map(|g| g * g).sum::<f64>().sqrt();

    // exp(-r): value, gradient and Laplacian written out by hand. Zero
    // adjoints make the parameter gradient vanish for any parametrisation.
    let h = HamiltonianSpec::Hydrogen3D {};
    let rows: Array2<f64> = Array2::from_shape_fn((1000, 3), |_| StandardNormal.sample(&mut rng));
    let r: Array1<f64> = rows.rows().into_iter().map(|x| x.dot(&x).sqrt()).collect();
    let value = r.mapv(|r| (-r).exp());
    let grad = Array2::from_shape_fn((1000, 3), |(i, j)| -rows[[i, j]] / r[i] * value[i]);
    let laplacian = Array1::from_shape_fn(1000, |i| (1.0 - 2.0 / r[i]) * value[i]);
    let batch = EvalBatch { inputs: rows, value, grad, laplacian, nonfinite_rows: vec![] };
    let (adj, stats) = variance_adjoint(&h, &batch, false, 0.0).unwrap();
    let adj_norm = (adj.d_value.iter().chain(adj.d_laplacian.iter()).map(|g| g * g).sum::<f64>()).sqrt();

    let pass = ho_eval.loss < 1e-20 && ho_grad < 1e-6 && stats.variance < 1e-20 && adj_norm < 1e-6;
    verdict(
        "zero-variance principle",
        pass,
        format!(
            "HO σ² {:.2e} |∇L| {ho_grad:.2e}; hydrogen σ² {:.2e} |adjoint| {adj_norm:.2e} (E {:.15})",
            ho_eval.loss, stats.variance, stats.mean
        ),
    );
}

// ------------------------------------------------------- benchmark runs

struct Bench {
    name: &'static str,
    record: RunRecord,
}

struct BenchSet {
    runs: Vec<Bench>,
    _dir: tempfile::TempDir,
}

impl BenchSet {
    fn get(&self, name: &str) -> &RunRecord {
        &self.runs.iter().find(|b| b.name == name).unwrap().record
    }
}

/// Trained to a fixed budget rather than stopped at the acceptance threshold,
/// so final variances spread over the range the accuracy claim is about.
fn ground_configs(seed: u64) -> Vec<(&'static str, RunConfig)> {
    let charm = |l: u32, s: u32| {
        config(&format!(
            r#"{{"system": {{"kind": "charmonium", "l": {l}, "s": {s}}},
                "ansatz": {{"layers": 2, "width": 32}},
                "sampler": {{"n_walkers": 2000, "burn_in": 200, "seed": {seed}}},
                "monitor": {{"threshold": 1e-5}},
                "trainer": {{"loss": {{"kind": "variance", "energy_weight": 1.0}}, "max_steps": 2000}}}}"#
        ))
    };
    vec![
        (
            "ho2d ground",
            config(&format!(
                r#"{{"system": {{"kind": "ho2d"}},
                    "ansatz": {{"layers": 2, "width": 16}},
                    "sampler": {{"n_walkers": 2000, "burn_in": 200, "seed": {seed}}},
                    "monitor": {{"threshold": 1e-5}},
                    "trainer": {{"max_steps": 2000}}}}"#
            )),
        ),
        (
            "hydrogen ground",
            config(&format!(
                r#"{{"system": {{"kind": "hydrogen"}},
                    "ansatz": {{"layers": 2, "width": 32}},
                    "sampler": {{"n_walkers": 2000, "burn_in": 200, "seed": {seed}}},
                    "monitor": {{"threshold": 1e-5}},
                    "trainer": {{"loss": {{"kind": "variance", "energy_weight": 1.0}}, "max_steps": 2000}}}}"#
            )),
        ),
        ("eta_c", charm(0, 0)),
        ("j_psi", charm(0, 1)),
        ("h_c", charm(1, 0)),
        ("chi_c", charm(1, 1)),
    ]
}

fn run_bench(seed: u64) -> BenchSet {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (name, mut c) in ground_configs(seed) {
        c.output_dir = Some(dir.path().join(name.replace(' ', "_")));
        runs.push(Bench { name, record: train_and_write(&c).unwrap() });
    }
    let ground: PathBuf = dir.path().join("ho2d_ground").join(nvmc::trainer::CHECKPOINT_FILE);
    let excited = config(&format!(
        r#"{{"system": {{"kind": "ho2d"}}, "state": 1,
            "ansatz": {{"layers": 2, "width": 32}},
            "sampler": {{"n_walkers": 2000, "burn_in": 200, "seed": {seed}}},
            "trainer": {{"loss": {{"kind": "residual", "lambda_orth": 10.0, "ortho": [{ground:?}]}}, "max_steps": 3000}}}}"#
    ));
    runs.push(Bench { name: "ho2d first excited", record: train(&excited).unwrap() });
    // Trained past the variance threshold so the trajectory shows what
    // happens after the energy settles.
    let trajectory = config(&format!(
        r#"{{"system": {{"kind": "charmonium", "l": 1, "s": 1}},
            "ansatz": {{"layers": 2, "width": 32}},
            "sampler": {{"n_walkers": 2000, "burn_in": 200, "seed": {seed}}},
            "monitor": {{"threshold": 1e-6}},
            "trainer": {{"loss": {{"kind": "variance", "energy_weight": 1.0}}, "max_steps": 1500, "plateau_steps": 100000}}}}"#
    ));
    runs.push(Bench { name: "chi_c trajectory", record: train(&trajectory).unwrap() });
    BenchSet { runs, _dir: dir }
}

static BENCH: [OnceLock<BenchSet>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
/// Serialises benchmark training: criteria sharing a seed wait for one run.
static TRAINING: Mutex<()> = Mutex::new(());

fn bench(i: usize) -> &'static BenchSet {
    BENCH[i].get_or_init(|| {
        let _guard = TRAINING.lock().unwrap_or_else(|e| e.into_inner());
        run_bench(SEEDS[i])
    })
}

fn describe(r: &RunRecord) -> String {
    let s = &r.summary;
    format!(
        "E {:.6} σ² {:.2e} rel err {:.2e} steps {} {:.0} s",
        s.observable,
        s.variance,
        s.relative_error.unwrap_or(f64::NAN),
        s.steps,
        s.wall_time_s
    )
}

#[test]
fn ho_ground_state() {
    let r = bench(0).get("ho2d ground");
    let s = &r.summary;
    let pass = (s.energy - 1.0).abs() < 5e-3 && s.variance < THRESHOLD && s.wall_time_s <= 300.0;
    verdict("HO ground state", pass, describe(r));
}

#[test]
fn hydrogen_ground_state() {
    let r = bench(0).get("hydrogen ground");
    let s = &r.summary;
    let pass = rel(s.energy, -0.5) < 0.01 && s.variance < THRESHOLD && s.wall_time_s <= 600.0;
    verdict("hydrogen ground state", pass, describe(r));
}

#[test]
fn charmonium_eta_c() {
    let r = bench(0).get("eta_c");
    let s = &r.summary;
    let pass = rel(s.observable, 2.981) < 0.01 && s.variance < THRESHOLD;
    verdict("charmonium eta_c", pass, describe(r));
}

#[test]
fn ho_first_excited_state() {
    let r = bench(0).get("ho2d first excited");
    verdict("HO first excited state", rel(r.summary.energy, 2.0) < 0.01, describe(r));
}

#[test]
fn variance_threshold_claim() {
    let mut rows = Vec::new();
    let mut coefficients = Vec::new();
    for i in 0..SEEDS.len() {
        let seed_rows: Vec<ReportRow> = bench(i)
            .runs
            .iter()
            .filter(|b| b.name != "chi_c trajectory")
            .map(|b| ReportRow::from_summary(&format!("{} seed {}", b.name, SEEDS[i]), b.record.config.system.tag(), &b.record.summary))
            .collect();
        coefficients.push(log_log_pearson(&seed_rows).unwrap_or(f64::NAN));
        rows.extend(seed_rows);
    }
    let check = threshold_check(&rows, THRESHOLD, 0.01);
    let mean = coefficients.iter().sum::<f64>() / coefficients.len() as f64;
    let pass = check.below > 0 && check.violations.is_empty() && mean > 0.3;
    verdict(
        "variance-threshold claim",
        pass,
        format!(
            "{} of {} runs below threshold, violations {:?}; log-log Pearson {coefficients:.3?} mean {mean:.3}",
            check.below,
            rows.len(),
            check.violations
        ),
    );
}

#[test]
fn pseudo_convergence_chi_c() {
    let mut hits = Vec::new();
    for i in 0..SEEDS.len() {
        let r = bench(i).get("chi_c trajectory");
        hits.push(find_pseudo_convergence(&r.rows, 200, 1e-4, 0.2).map(|h| {
            format!("seed {} at step {} (ΔĒ {:.1e}, σ² drop {:.0}%)", SEEDS[i], h.start_step, h.energy_change, 100.0 * h.variance_drop)
        }));
    }
    let found = hits.iter().flatten().count();
    verdict(
        "pseudo-convergence on chi_c",
        found >= 2,
        format!("{found} of {} seeds: {:?}", SEEDS.len(), hits.iter().flatten().collect::<Vec<_>>()),
    );
}

// ------------------------------------------------------------------ scans

fn scan(plan_json: &str) -> (ScanTable, f64, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = ScanPlan::from_json(plan_json).unwrap();
    plan.output_dir = dir.path().to_path_buf();
    let t = Instant::now();
    let table = run_scan(&plan).unwrap();
    (table, t.elapsed().as_secs_f64(), dir)
}

fn energies(table: &ScanTable) -> Vec<f64> {
    table.rows.iter().map(|r| r.energy).collect()
}

#[test]
fn double_well_scan() {
    let (table, secs, _dir) = scan(
        r#"{"base": {"system": {"kind": "double_well", "omega_y": 1.0, "separation": 0.0},
                     "ansatz": {"layers": 3, "width": 32},
                     "sampler": {"n_walkers": 2000, "burn_in": 200, "seed": 7},
                     "trainer": {"loss": {"kind": "variance", "score_function": true, "energy_weight": 20.0},
                                 "max_steps": 3000}},
            "axes": [{"path": "system.separation", "values": [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]}],
            "output_dir": "unused"}"#,
    );
    let e = energies(&table);
    let argmin = (0..e.len()).min_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap();
    let rising = e[3..].windows(2).all(|w| w[1] > w[0]);
    let pass = rel(e[0], 1.1680) < 0.02 && argmin == 2 && rising && secs <= 3600.0;
    verdict(
        "double-well scan",
        pass,
        format!("E(d) {e:.5?}, minimum at d = {}, {secs:.0} s", 0.5 * argmin as f64),
    );
}

#[test]
fn magnetic_scan() {
    let (table, secs, _dir) = scan(
        r#"{"base": {"system": {"kind": "hydrogen_magnetic", "field": 0.1},
                     "ansatz": {"layers": 2, "width": 32},
                     "sampler": {"n_walkers": 2000, "burn_in": 200, "seed": 11},
                     "trainer": {"loss": {"kind": "variance", "energy_weight": 20.0}, "max_steps": 4000}},
            "axes": [{"path": "system.field", "values": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]}],
            "output_dir": "unused"}"#,
    );
    let e = energies(&table);
    let increasing = e.windows(2).all(|w| w[1] > w[0]);
    let last = e[e.len() - 1];
    verdict(
        "magnetic scan",
        increasing && rel(last, -0.3273) < 0.02,
        format!("E(B) {e:.5?}, {secs:.0} s"),
    );
}

#[test]
fn quantum_dot_symmetry() {
    let (table, secs, _dir) = scan(
        r#"{"base": {"system": {"kind": "quantum_dot", "omega_x": 0.1, "omega_y": 0.1, "omega_z": 0.1},
                     "ansatz": {"layers": 2, "width": 32},
                     "sampler": {"n_walkers": 2000, "burn_in": 200, "seed": 13},
                     "trainer": {"loss": {"kind": "variance", "energy_weight": 20.0}, "max_steps": 3000,
                                 "plateau_steps": 100000, "lr": {"base": 3e-3, "decay_steps": 500}}},
            "axes": [{"path": "system.omega_x", "values": [0.1, 0.15, 0.2, 0.25, 0.3]},
                     {"path": "system.omega_y", "values": [0.1, 0.15, 0.2, 0.25, 0.3]}],
            "output_dir": "unused"}"#,
    );
    let report = scan_report(&table);
    let asym = report.max_relative_asymmetry.unwrap_or(f64::INFINITY);
    let mut monotone = true;
    for i in 0..5 {
        for j in 0..4 {
            monotone &= table.energy_at(i, j + 1) > table.energy_at(i, j);
            monotone &= table.energy_at(j + 1, i) > table.energy_at(j, i);
        }
    }
    verdict(
        "quantum-dot symmetry",
        asym < 5e-3 && monotone,
        format!("max relative asymmetry {asym:.2e}, monotone {monotone}, E(0.1,0.1) {:.5}, {secs:.0} s", table.energy_at(0, 0)),
    );
}

// ------------------------------------------------------------------ nodal

#[test]
fn nodal_analyzer() {
    let t = Instant::now();
    let v = |p, sampling| moment_converges(&NodalScaling::new(1.0, 1.0, 1, p, sampling)).verdict;
    let verdicts = [
        v(2, Sampling::PsiSquared) == Verdict::Converges,
        v(4, Sampling::PsiSquared) == Verdict::Diverges,
        v(2, Sampling::Uniform) == Verdict::Diverges,
    ];
    let sizes = [1_000, 10_000, 100_000, 1_000_000];
    let second = simulate_toy_moments(&NodalScaling::new(1.0, 1.0, 1, 2, Sampling::PsiSquared), &sizes, 0, 15);
    let fourth = simulate_toy_moments(&NodalScaling::new(1.0, 1.0, 1, 4, Sampling::PsiSquared), &sizes, 0, 15);
    let drift = (second[3].central_moment / second[2].central_moment - 1.0).abs();
    let growth = fourth[3].central_moment / fourth[0].central_moment;
    let again = simulate_toy_moments(&NodalScaling::new(1.0, 1.0, 1, 4, Sampling::PsiSquared), &sizes, 0, 15);
    let secs = t.elapsed().as_secs_f64();
    let pass = verdicts.iter().all(|&b| b) && drift < 0.2 && growth > 10.0 && again == fourth && secs < 60.0;
    verdict(
        "nodal analyzer",
        pass,
        format!("verdicts {verdicts:?}, μ₂ drift {:.1}%, μ₄ growth {growth:.1}x, {secs:.1} s", 100.0 * drift),
    );
}

// ------------------------------------------------------------ determinism

#[test]
fn determinism() {
    let c = config(
        r#"{"system": {"kind": "double_well", "omega_y": 1.0, "separation": 2.0},
            "ansatz": {"layers": 2, "width": 8},
            "sampler": {"n_walkers": 600, "burn_in": 30, "seed": 42},
            "trainer": {"max_steps": 40}}"#,
    );
    let in_pool = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| metrics_csv(&train(&c).unwrap().rows))
    };
    let a = in_pool(1);
    let b = in_pool(1);
    let c3 = in_pool(3);
    verdict(
        "determinism",
        a == b && a == c3,
        format!("{} metric rows, identical across repeats and thread counts: {}", a.lines().count() - 1, a == b && a == c3),
    );
}
