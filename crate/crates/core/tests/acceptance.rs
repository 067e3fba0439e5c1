//! End-to-end acceptance run: one PASS/FAIL line per criterion, exit status 1
//! if any criterion fails. Takes roughly half an hour on a single core.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use flagwave::atomic::{
    decompose, synthetic_atom, validate_atom, AtomTolerances, AtomicConfig, AtomicDecomposition,
};
use flagwave::dyadic::{
    log2_points, maximal_subrectangles, Direction, DyadicRectangle, JourneGeometry, MaximalityMode,
    OpenSet,
};
use flagwave::flagconv::{flag_convolve, ScaleGrid};
use flagwave::harness::{
    gen_corpus, identity_suite, journe_experiment, lp_identity_residual, max_ratio_change,
    norm_table, random_open_set, CorpusMember, CorpusSpec, IdentityCheck, IdentityTolerances,
    JourneSpec, NormConfig, NormTable,
};
use flagwave::kernels::{
    build_heat_pair, build_lp_pair, build_poisson_pair, Calibration, KernelPair,
};
use flagwave::lattice::{GridFunction, LatticeSpec};
use flagwave::maximal::nontangential_max;
use flagwave::window::cone_section;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20260101;
const PERIOD: f64 = 16.0;

struct Outcome {
    id: u32,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn lattice(points: usize) -> LatticeSpec {
    LatticeSpec::new(1, 1, points, PERIOD).unwrap()
}

fn scales(lat: &LatticeSpec, samples: u32) -> ScaleGrid {
    ScaleGrid::new(lat, -2, 7, -2, 7, samples).unwrap()
}

fn label(m: &CorpusMember) -> String {
    format!("{}_{}", m.family.name(), m.index)
}

/// Worst residual of the named checks and whether all of them pass.
fn summarize(checks: &[IdentityCheck], names: &[&str]) -> (bool, f64, String) {
    let picked: Vec<&IdentityCheck> = checks
        .iter()
        .filter(|c| names.contains(&c.name.as_str()))
        .collect();
    let worst = picked
        .iter()
        .max_by(|a, b| (a.residual / a.tolerance).total_cmp(&(b.residual / b.tolerance)))
        .unwrap();
    let all = picked.iter().all(|c| c.passed);
    (
        all,
        worst.residual,
        format!("{} on member {}", worst.name, worst.member),
    )
}

fn identity_criteria(corpus: &[CorpusMember], grid: &ScaleGrid) -> Vec<Outcome> {
    let tol = IdentityTolerances::default();
    let mut checks = Vec::new();
    let mut slowest = Duration::ZERO;
    for (i, m) in corpus.iter().enumerate() {
        let started = Instant::now();
        lp_identity_residual(&m.f, grid).unwrap();
        slowest = slowest.max(started.elapsed());
        checks.extend(identity_suite(&m.f, i, grid, &tol).unwrap());
    }
    let named = |names: &[&str]| summarize(&checks, names);
    let (lp_ok, lp_worst, lp_at) = named(&["lp_l2_identity"]);
    let lp_fast = slowest < Duration::from_secs(5);
    let (ren_ok, ren, _) = named(&["calderon_renormalized"]);
    let (ana_ok, ana, _) = named(&["calderon_analytic_vs_refined"]);
    let (inv_ok, inv, _) = named(&["riesz_involution"]);
    let (iso_ok, iso, _) = named(&["riesz_isometry"]);
    let (heat_ok, heat, _) = named(&["riesz_heat_path"]);
    let (cr_ok, cr, cr_at) = named(&["conjugate_system_t0.25", "conjugate_system_t1"]);
    vec![
        Outcome {
            id: 1,
            title: "Littlewood-Paley L2 identity",
            passed: lp_ok && lp_fast,
            detail: format!(
                "max |ratio - 1| = {lp_worst:.2e} ({lp_at}, tol 1e-8), slowest g_F {:.2} s (limit 5 s), {} members",
                slowest.as_secs_f64(),
                corpus.len()
            ),
        },
        Outcome {
            id: 2,
            title: "Calderon reconstruction",
            passed: ren_ok && ana_ok,
            detail: format!("renormalized {ren:.2e} (tol 1e-10), analytic vs 8-sample oracle {ana:.2e} (tol 2e-2)"),
        },
        Outcome {
            id: 3,
            title: "Riesz involution, isometry and heat path",
            passed: inv_ok && iso_ok && heat_ok,
            detail: format!("involution {inv:.2e}, isometry {iso:.2e} (tol 1e-10), heat path {heat:.2e} (tol 1e-6)"),
        },
        Outcome {
            id: 4,
            title: "Conjugate-system residual",
            passed: cr_ok,
            detail: format!("max {cr:.2e} ({cr_at}, tol 1e-10) at t = s in {{0.25, 1}}"),
        },
    ]
}

fn table(corpus: &[CorpusMember], grid: ScaleGrid) -> (NormTable, Duration) {
    let started = Instant::now();
    let t = norm_table(
        corpus,
        &NormConfig {
            scale_grid: grid,
            calibration: Calibration::DiscretelyRenormalized,
        },
    )
    .unwrap();
    (t, started.elapsed())
}

fn norm_criteria(
    base: &NormTable,
    fine_n: &NormTable,
    fine_s: &NormTable,
    elapsed: Duration,
) -> Vec<Outcome> {
    let dn = max_ratio_change(base, fine_n).unwrap();
    let ds = max_ratio_change(base, fine_s).unwrap();
    let fast = elapsed < Duration::from_secs(15 * 60);
    let dominations = [base, fine_n, fine_s].iter().all(|t| {
        t.rows
            .iter()
            .all(|r| r.dominations_hold && r.pp_sup >= r.pp_inf)
    });
    vec![
        Outcome {
            id: 5,
            title: "Norm equivalence and refinement stability",
            passed: base.rows.len() == 24 && base.c_emp <= 100.0 && dn <= 0.2 && ds <= 0.2 && fast,
            detail: format!(
                "C_emp = {:.3} (limit 100), max ratio change N 256->512 {:.3}, S 1->2 {:.3} (limit 0.2), tables {:.0} s (limit 900 s)",
                base.c_emp,
                dn,
                ds,
                elapsed.as_secs_f64()
            ),
        },
        Outcome {
            id: 6,
            title: "Pointwise dominations",
            passed: dominations,
            detail: format!("M+ <= M*, u+ <= u*, sup-PP >= inf-PP on {} members at three refinements", base.rows.len()),
        },
    ]
}

fn decompositions(corpus: &[CorpusMember], grid: &ScaleGrid) -> Vec<AtomicDecomposition> {
    corpus
        .iter()
        .map(|m| decompose(&m.f, &AtomicConfig::new(grid.clone())).unwrap())
        .collect()
}

fn lambda_ratio(d: &AtomicDecomposition) -> f64 {
    d.lambda_sum / d.s_heat_l1
}

fn atomic_criterion(
    corpus: &[CorpusMember],
    base: &[AtomicDecomposition],
    fine_n: &[AtomicDecomposition],
    fine_s: &[AtomicDecomposition],
) -> Outcome {
    let mut failures = Vec::new();
    let mut worst_err = 0.0f64;
    let mut worst_drift = 0.0f64;
    let mut ratio_max = 0.0f64;
    for (i, d) in base.iter().enumerate() {
        worst_err = worst_err.max(d.reconstruction_error);
        ratio_max = ratio_max.max(lambda_ratio(d));
        for refined in [&fine_n[i], &fine_s[i]] {
            worst_drift = worst_drift.max((lambda_ratio(refined) / lambda_ratio(d) - 1.0).abs());
        }
        let cake_ok =
            d.layer_cake_sum >= d.s_heat_l1 - d.eps_trunc && d.layer_cake_sum <= 2.0 * d.s_heat_l1;
        if d.reconstruction_error > 5e-2 || !cake_ok {
            failures.push(label(&corpus[i]));
        }
    }
    Outcome {
        id: 7,
        title: "Atomic decomposition",
        passed: failures.is_empty() && worst_drift <= 0.2,
        detail: format!(
            "max reconstruction error {worst_err:.2e} (tol 5e-2), max sum|lambda|/||S_heat||_1 = {ratio_max:.3}, \
             max refinement drift {worst_drift:.3} (limit 0.2), layer-cake failures {failures:?}"
        ),
    }
}

fn synthetic_rectangles(lat: &LatticeSpec, count: usize) -> Vec<DyadicRectangle> {
    let k = log2_points(lat).unwrap();
    let n = lat.points_per_axis;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0xa70);
    (0..count)
        .map(|_| {
            let (xl, yl) = (rng.gen_range(k - 4..=k - 2), rng.gen_range(k - 4..=k - 2));
            let anchor = vec![
                rng.gen_range(0..n >> xl) << xl,
                rng.gen_range(0..n >> yl) << yl,
            ];
            DyadicRectangle::new(lat, xl, yl, anchor).unwrap()
        })
        .collect()
}

fn validation_criterion(lat: &LatticeSpec, base: &[AtomicDecomposition]) -> Outcome {
    let mut min_mass = 1.0f64;
    let mut max_l2 = 0.0f64;
    let mut bound = 0.0f64;
    let mut atoms = 0;
    let mut all = true;
    for d in base {
        bound = bound.max(d.l2_bound);
        for level in &d.levels {
            atoms += 1;
            min_mass = min_mass.min(level.validation.support_mass_inside);
            max_l2 = max_l2.max(level.validation.l2_norm_ratio);
            all &= level.validation.passed
                && level.validation.l2_norm_ratio <= d.l2_bound * (1.0 + 1e-9);
        }
    }
    let strict = AtomTolerances::default();
    let mut synthetic_mass = 1.0f64;
    let mut synthetic_ok = true;
    let rects = synthetic_rectangles(lat, 32);
    for rect in &rects {
        let atom = synthetic_atom(lat, rect, 1, 0.1).unwrap();
        let omega = OpenSet::from_rectangles(*lat, std::slice::from_ref(rect));
        let report = validate_atom(&atom, &omega, 1, 10.0, &strict).unwrap();
        synthetic_mass = synthetic_mass.min(report.support_mass_inside);
        synthetic_ok &= report.passed;
    }
    Outcome {
        id: 8,
        title: "Atom validation",
        passed: all && min_mass >= 0.99 && synthetic_ok,
        detail: format!(
            "{atoms} atoms: min mass in 10-dilate {min_mass:.4} (limit 0.99), max ||a||_2 |Omega~|^1/2 = {max_l2:.3} \
             (C_emp = sqrt(kappa) <= {bound:.3}); {} synthetic atoms min mass {synthetic_mass:.4}",
            rects.len()
        ),
    }
}

fn wrap(v: isize, n: isize) -> usize {
    v.rem_euclid(n) as usize
}

/// Maximum of `|F_{t,s} * f|` over every lattice point of the cone section
/// and every scale pair, by direct scanning.
fn cone_scan(f: &GridFunction, pair: &KernelPair, grid: &ScaleGrid) -> Vec<f64> {
    let lat = *f.lattice();
    let n = lat.points_per_axis as isize;
    let mut out = vec![0.0f64; lat.len()];
    for &t in &grid.t_scales() {
        for &s in &grid.s_scales() {
            let u = flag_convolve(f, pair, t, s).unwrap();
            let b = cone_section(&lat, t, s);
            for x in 0..n {
                for y in 0..n {
                    let idx = lat.flat_index(&[x as usize, y as usize]);
                    for dx in b[0].0..=b[0].1 {
                        for dy in b[1].0..=b[1].1 {
                            let v = u.values()[lat.flat_index(&[wrap(x + dx, n), wrap(y + dy, n)])]
                                .abs();
                            out[idx] = out[idx].max(v);
                        }
                    }
                }
            }
        }
    }
    out
}

fn all_dyadic(lat: &LatticeSpec) -> Vec<DyadicRectangle> {
    let k = log2_points(lat).unwrap();
    let n = lat.points_per_axis;
    let mut out = Vec::new();
    for a in 0..=k {
        for b in 0..=k {
            for x in (0..n).step_by(1 << a) {
                for y in (0..n).step_by(1 << b) {
                    out.push(DyadicRectangle::new(lat, a, b, vec![x, y]).unwrap());
                }
            }
        }
    }
    out
}

fn inside(lat: &LatticeSpec, mask: &[bool], r: &DyadicRectangle) -> bool {
    r.cell_indices(lat).iter().all(|&c| mask[c])
}

fn maximal_brute(set: &OpenSet, mode: MaximalityMode) -> Vec<DyadicRectangle> {
    let lat = set.lattice();
    let candidates: Vec<DyadicRectangle> = all_dyadic(lat)
        .into_iter()
        .filter(|r| inside(lat, set.mask(), r))
        .collect();
    let mut out: Vec<DyadicRectangle> = candidates
        .iter()
        .filter(|r| {
            !candidates.iter().any(|o| {
                o != *r
                    && r.within(lat, o)
                    && match mode {
                        MaximalityMode::All => true,
                        MaximalityMode::XMaximal => {
                            o.y_log == r.y_log && o.anchor[1] == r.anchor[1]
                        }
                        MaximalityMode::YMaximal => {
                            o.x_log == r.x_log && o.anchor[0] == r.anchor[0]
                        }
                    }
            })
        })
        .cloned()
        .collect();
    out.sort();
    out
}

/// Cells where some dyadic-sided periodic window through the cell is more
/// than half covered by the set.
fn enlarged_brute(set: &OpenSet) -> Vec<bool> {
    let lat = set.lattice();
    let n = lat.points_per_axis;
    let mut best = vec![0.0f64; lat.len()];
    let sides: Vec<usize> = (0..=log2_points(lat).unwrap()).map(|k| 1 << k).collect();
    for &wx in &sides {
        for &wy in &sides {
            for ax in 0..n {
                for ay in 0..n {
                    let cells: Vec<usize> = (0..wx)
                        .flat_map(|i| (0..wy).map(move |j| ((ax + i) % n, (ay + j) % n)))
                        .map(|(x, y)| lat.flat_index(&[x, y]))
                        .collect();
                    let mean = cells.iter().filter(|&&c| set.mask()[c]).count() as f64
                        / cells.len() as f64;
                    for c in cells {
                        best[c] = best[c].max(mean);
                    }
                }
            }
        }
    }
    best.iter().map(|&v| v > 0.5).collect()
}

fn gamma_brute(lat: &LatticeSpec, enlarged: &[bool], r: &DyadicRectangle, dir: Direction) -> f64 {
    let mut best = 1.0f64;
    for o in all_dyadic(lat) {
        let shares_other_side = match dir {
            Direction::X => o.y_log == r.y_log && o.anchor[1] == r.anchor[1],
            Direction::Y => o.x_log == r.x_log && o.anchor[0] == r.anchor[0],
        };
        if shares_other_side && r.within(lat, &o) && inside(lat, enlarged, &o) {
            best = best.max(o.cells(lat) as f64 / r.cells(lat) as f64);
        }
    }
    best
}

fn oracle_criterion() -> Outcome {
    let mut cone_cases = 0;
    let mut cone_ok = true;
    for points in [8usize, 16, 32] {
        let lat = LatticeSpec::new(1, 1, points, 8.0).unwrap();
        let grid = ScaleGrid::new(&lat, -2, 3, -2, 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + points as u64);
        let f = GridFunction::new(
            lat,
            (0..lat.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let lp = build_lp_pair(&lat, Calibration::DiscretelyRenormalized, Some(&grid)).unwrap();
        for pair in [build_heat_pair(&lat), build_poisson_pair(&lat), lp] {
            cone_cases += 1;
            cone_ok &= nontangential_max(&f, &pair, &grid).value.values()
                == &cone_scan(&f, &pair, &grid)[..];
        }
    }

    let lat = lattice(16);
    let mut sets = 0;
    let mut rect_ok = true;
    let mut gammas = 0;
    for index in 0..40u64 {
        let (set, _) = random_open_set(&lat, SEED, index, 6, 0.5).unwrap();
        sets += 1;
        let mut seen = Vec::new();
        for mode in [
            MaximalityMode::All,
            MaximalityMode::XMaximal,
            MaximalityMode::YMaximal,
        ] {
            let fast = maximal_subrectangles(&set, mode).unwrap();
            rect_ok &= fast == maximal_brute(&set, mode);
            seen.extend(fast);
        }
        let geo = JourneGeometry::new(&set).unwrap();
        let enlarged = enlarged_brute(&set);
        rect_ok &= geo.enlarged.mask() == &enlarged[..];
        for r in &seen {
            for dir in [Direction::X, Direction::Y] {
                gammas += 1;
                rect_ok &= geo.gamma(r, dir) == gamma_brute(&lat, &enlarged, r, dir);
            }
        }
    }

    let spec = JourneSpec::default();
    let rows = journe_experiment(&spec, &lattice(64), SEED).unwrap();
    let worst = rows
        .iter()
        .map(|r| r.gamma1.max(r.gamma2))
        .fold(0.0, f64::max);
    Outcome {
        id: 9,
        title: "Oracle equivalences",
        passed: cone_ok && rect_ok && rows.len() == 100 && worst <= 10.0,
        detail: format!(
            "cone scan bit-exact on {cone_cases} kernel/grid cases up to 32^2: {cone_ok}; maximal rectangles and \
             {gammas} gammas on {sets} random 16^2 sets: {rect_ok}; max Journe ratio {worst:.3} over {} 64^2 sets (limit 10)",
            rows.len()
        ),
    }
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "run.log" {
                files.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    files
}

fn determinism_criterion() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let body = serde_json::json!({
        "version": 1,
        "lattice": {"n": 1, "m": 1, "N": 128, "L": PERIOD},
        "scales": {"j_min": -2, "j_max": 6, "k_min": -2, "k_max": 6}
    });
    fs::write(&config, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    let commands = [
        "selftest",
        "corpus",
        "norms",
        "pp",
        "decompose",
        "validate",
        "reconstruct",
        "journe",
    ];
    let mut snaps = Vec::new();
    let mut exit_codes = Vec::new();
    for (tag, workers) in [("first", "1"), ("second", "1"), ("eight", "8")] {
        let out = dir.path().join(tag);
        for command in commands {
            let status = Command::new(env!("CARGO_BIN_EXE_flagwave"))
                .args([command, "--workers", workers, "--config"])
                .arg(&config)
                .arg("--out")
                .arg(&out)
                .output()
                .unwrap()
                .status;
            exit_codes.push(status.code());
        }
        snaps.push(snapshot(&out));
    }
    let reports = snaps[0]
        .keys()
        .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "json"))
        .count();
    let ran = exit_codes.iter().all(|c| *c == Some(0));
    let same = snaps[0] == snaps[1] && snaps[0] == snaps[2];
    Outcome {
        id: 10,
        title: "Determinism",
        passed: ran && same && reports > 0,
        detail: format!(
            "{} commands x 3 runs (workers 1, 1, 8), all exit 0: {ran}; {} files ({reports} CSV/JSON) byte-identical: {same}",
            commands.len(),
            snaps[0].len()
        ),
    }
}

fn report(outcome: &Outcome) {
    let mark = if outcome.passed { "PASS" } else { "FAIL" };
    println!(
        "{mark} criterion {:>2} {}: {}",
        outcome.id, outcome.title, outcome.detail
    );
}

fn main() {
    // `cargo test -- --list` and filters from the default harness do not apply.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let started = Instant::now();
    let spec = CorpusSpec::standard(SEED);
    let (lat, lat_fine) = (lattice(256), lattice(512));
    let corpus = gen_corpus(&spec, &lat).unwrap();
    let corpus_fine = gen_corpus(&spec, &lat_fine).unwrap();
    let mut outcomes = Vec::new();

    for o in identity_criteria(&corpus, &scales(&lat, 1)) {
        report(&o);
        outcomes.push(o);
    }

    let (base, t0) = table(&corpus, scales(&lat, 1));
    let (fine_n, t1) = table(&corpus_fine, scales(&lat_fine, 1));
    let (fine_s, t2) = table(&corpus, scales(&lat, 2));
    for o in norm_criteria(&base, &fine_n, &fine_s, t0 + t1 + t2) {
        report(&o);
        outcomes.push(o);
    }

    let dec = decompositions(&corpus, &scales(&lat, 1));
    let dec_n = decompositions(&corpus_fine, &scales(&lat_fine, 1));
    let dec_s = decompositions(&corpus, &scales(&lat, 2));
    for o in [
        atomic_criterion(&corpus, &dec, &dec_n, &dec_s),
        validation_criterion(&lat, &dec),
    ] {
        report(&o);
        outcomes.push(o);
    }

    for o in [oracle_criterion(), determinism_criterion()] {
        report(&o);
        outcomes.push(o);
    }

    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!(
        "acceptance: {} of {} criteria passed in {:.0} s",
        outcomes.len() - failed,
        outcomes.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
