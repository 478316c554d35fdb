//! Acceptance test for the command-line interface: rerunning any command
//! with the same configuration, seed, and worker count must reproduce its
//! output directory byte for byte, except for wall-clock artifacts
//! (`timings.csv`), which the MANIFEST lists without hashing.
//!
//! The two runs of each command share one config file and identical
//! arguments; they differ only in working directory, so the default
//! `out/` output directory (and the echoed configuration) is the same
//! relative path in both.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use skycal::data::{write_domain_file, write_field_csv, write_simulator_csv, CoordFormat};
use skycal::experiments::{synth_from_rates, Schedule, ToyProblem};
use skycal::fit_vecchia;
use skycal::rng::Stream;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_skycal"))
}

/// Prints the criterion's verdict line, then enforces it.
fn check(criterion: u32, name: &str, ok: bool, detail: String) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("[criterion {criterion:02}] {name}: {verdict} — {detail}");
    assert!(ok, "criterion {criterion} ({name}) failed: {detail}");
}

/// Builds the shared inputs (simulator corpus, domain, synthetic field,
/// fitted surrogate) and the config file pointing at them; returns the
/// config path.
fn prepare_inputs(root: &Path) -> PathBuf {
    let inputs = root.join("inputs");
    fs::create_dir_all(&inputs).unwrap();

    let u1 = [0.46, 0.48, 0.5, 0.52, 0.54];
    let u2 = [0.0, 0.5, 1.0];
    let corpus = ToyProblem::corpus_from_axes(&u1, &u2, 24).unwrap();
    let domain = ToyProblem::domain();
    write_simulator_csv(inputs.join("simulator.csv"), &corpus, CoordFormat::LatLon).unwrap();
    write_domain_file(inputs.join("domain.toml"), &domain).unwrap();

    // Field data drawn from the run at (0.5, 0.5), u1-major run order.
    let truth_run = 2 * u2.len() + 1;
    let synthetic = synth_from_rates(
        corpus.grid(),
        corpus.rates(truth_run),
        &[0.5, 0.5],
        &Schedule::Constant(10.0),
        &Schedule::Constant(0.0),
        42,
        Stream::Synth,
    )
    .unwrap();
    write_field_csv(inputs.join("field.csv"), &synthetic.data, CoordFormat::LatLon).unwrap();

    let (surrogate, _) = fit_vecchia(&corpus.stack(), 10, 40).unwrap();
    surrogate.save(&inputs.join("surrogate.json")).unwrap();

    let config = format!(
        r#"seed = 42
threads = 2

[paths]
field = "{field}"
simulator = "{simulator}"
domain = "{domain}"
surrogate = "{surrogate}"

[surrogate]
m = 10
fit_budget = 40

[mcmc]
iterations = 600
burn_in = 200
thinning = 4

[experiment.predict]
u = [0.5, 0.5]

[experiment.synth]
u_star = [0.5, 0.5]
exposures = {{ constant = 10.0 }}

[experiment.holdout]
m_values = [10]
include_dense = true
dense_cap = 1000
fit_budget = 40

[experiment.cv]
folds = 2
m = 10
fit_budget = 40

[experiment.cv.mcmc]
iterations = 400
burn_in = 100
thinning = 4

[experiment.bench]
sizes = [20, 40]
m_values = [5]
repetitions = 1
fixed_runs = 5
fit_budget = 15

[experiment.toy]
u_star = [0.5, 0.5]
n_grid = 16
exposure = 10.0
"#,
        field = inputs.join("field.csv").display(),
        simulator = inputs.join("simulator.csv").display(),
        domain = inputs.join("domain.toml").display(),
        surrogate = inputs.join("surrogate.json").display(),
    );
    let path = root.join("config.toml");
    fs::write(&path, config).unwrap();
    path
}

/// Runs the binary in `cwd` with the shared config plus `args`, expecting
/// success.
fn run_in(cwd: &Path, config: &Path, args: &[&str]) -> Output {
    fs::create_dir_all(cwd).unwrap();
    let output = bin()
        .current_dir(cwd)
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "`skycal {}` failed in {}:\nstdout: {}\nstderr: {}",
        args.join(" "),
        cwd.display(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

/// All files under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, map: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, map);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                map.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut map = BTreeMap::new();
    walk(dir, dir, &mut map);
    map
}

fn is_wall_clock(rel: &str) -> bool {
    rel == "timings.csv" || rel.ends_with("/timings.csv")
}

#[test]
fn criterion_11_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = prepare_inputs(tmp.path());

    let commands: [(&str, &[&str]); 8] = [
        ("fit", &["fit"]),
        ("predict", &["predict"]),
        ("synth", &["synth"]),
        (
            "calibrate",
            &["calibrate", "--discrepancy", "multiplicative", "--pit"],
        ),
        ("holdout", &["holdout"]),
        ("cv", &["cv"]),
        ("bench", &["bench"]),
        ("toy", &["toy"]),
    ];

    let mut compared = 0usize;
    let mut diffs: Vec<String> = Vec::new();
    for (name, args) in commands {
        let first = tmp.path().join("runs").join(name).join("a");
        let second = tmp.path().join("runs").join(name).join("b");
        run_in(&first, &config, args);
        run_in(&second, &config, args);
        let snap_a = snapshot(&first.join("out"));
        let snap_b = snapshot(&second.join("out"));

        let names_a: Vec<&String> = snap_a.keys().collect();
        let names_b: Vec<&String> = snap_b.keys().collect();
        if names_a != names_b {
            diffs.push(format!("{name}: file sets differ ({names_a:?} vs {names_b:?})"));
            continue;
        }
        if !snap_a.contains_key("MANIFEST") {
            diffs.push(format!("{name}: no MANIFEST written"));
        }
        for (rel, bytes) in &snap_a {
            if is_wall_clock(rel) {
                continue;
            }
            if bytes != &snap_b[rel] {
                diffs.push(format!("{name}: {rel} differs between reruns"));
            }
            compared += 1;
        }
    }

    check(
        11,
        "rerun determinism",
        diffs.is_empty(),
        if diffs.is_empty() {
            format!(
                "8 commands, {compared} files byte-identical (wall-clock timings.csv excluded)"
            )
        } else {
            diffs.join("; ")
        },
    );
}

#[test]
fn exit_codes_match_the_contract() {
    let tmp = tempfile::tempdir().unwrap();

    // Usage problems: 64. Help and version: 0.
    let unknown = bin().current_dir(tmp.path()).arg("frobnicate").output().unwrap();
    assert_eq!(unknown.status.code(), Some(64));
    let bare = bin().current_dir(tmp.path()).output().unwrap();
    assert_eq!(bare.status.code(), Some(64));
    let bad_value = bin()
        .current_dir(tmp.path())
        .args(["calibrate", "--discrepancy", "additive"])
        .output()
        .unwrap();
    assert_eq!(bad_value.status.code(), Some(64));
    let help = bin().current_dir(tmp.path()).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("fit"));

    // Validation problems: 2, with an error line on stderr. With no config
    // file the defaults apply, and `fit` has no simulator path to read.
    let missing = bin().current_dir(tmp.path()).arg("fit").output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error:"));
    let bad_sizes = bin()
        .current_dir(tmp.path())
        .args(["bench", "--sizes", "40..20"])
        .output()
        .unwrap();
    assert_eq!(bad_sizes.status.code(), Some(2));
    let no_config = bin()
        .current_dir(tmp.path())
        .args(["--config", "does-not-exist.toml", "fit"])
        .output()
        .unwrap();
    assert_eq!(no_config.status.code(), Some(2));
}

#[test]
fn toy_run_recovers_its_own_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let config = prepare_inputs(tmp.path());
    let cwd = tmp.path().join("toy-recovery");
    run_in(&cwd, &config, &["--seed", "1", "toy"]);
    let recovery = fs::read_to_string(cwd.join("out").join("recovery")).unwrap();
    assert!(
        recovery.contains("covered_joint = true"),
        "toy run missed its own truth:\n{recovery}"
    );
}
