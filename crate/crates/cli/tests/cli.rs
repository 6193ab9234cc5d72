use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use puretherm::io::CsvTable;
use puretherm::pipeline::{Manifest, MANIFEST};

const MINIMAL: &str = "seed = 11
[chain]
sites = 10
[preparation]
t_prep = [1.0]
relax = 1.0
[evolution]
t_end = 2.0
[correlation]
tau_star = 2.0
omega_step = 0.1
[kpm]
moments = 40
random_vectors = 2
[decoherence]
duration = 2.0
[hydro]
length = 200.0
sweep_lengths = [200.0, 400.0]
points_per_decade = 4
";

fn puretherm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_puretherm")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn hydro_runs_without_many_body_stages() {
    let dir = tempfile::tempdir().unwrap();
    let o = puretherm(dir.path(), &["hydro", "--d", "1", "--sweep-L", "--lengths", "1000,2000", "--out", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sizes = CsvTable::read(&dir.path().join("run/hydro/sizes.csv")).unwrap();
    let gamma = sizes.column("gamma").unwrap();
    assert_eq!(gamma.len(), 2);
    assert!(gamma[1] > gamma[0]);
    assert!(!dir.path().join("run/prepare").exists());
}

#[test]
fn pipeline_refuses_missing_seed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), MINIMAL.replace("seed = 11\n", "")).unwrap();
    let o = puretherm(dir.path(), &["pipeline", "--config", "c.toml", "--out", "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn validation_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let bad = MINIMAL.replace("moments = 40", "moments = 0").replace("duration = 2.0", "duration = -1.0");
    fs::write(dir.path().join("c.toml"), bad).unwrap();
    let o = puretherm(dir.path(), &["pipeline", "--config", "c.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("kpm:") && e.contains("decoherence:"), "{e}");
}

#[test]
fn stage_without_inputs_names_producer() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), MINIMAL).unwrap();
    let o = puretherm(dir.path(), &["decohere", "--config", "c.toml", "--out", "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`prepare` stage"), "{}", stderr(&o));
}

#[test]
fn fisher_refuses_temperatures_closer_than_resolution() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), MINIMAL).unwrap();
    let mut t = CsvTable::new(&["index", "g", "T", "gamma_fit", "gamma_weak", "phi_dot_weak", "chi_A"]);
    t.push(vec![0.0, 0.2, 4.0, 0.02, 0.02, 0.1, 0.3]);
    t.push(vec![1.0, 0.2, 4.1, 0.021, 0.021, 0.1, 0.3]);
    t.write(&dir.path().join("run/decohere/rates.csv")).unwrap();
    let o = puretherm(dir.path(), &["fisher", "--config", "c.toml", "--out", "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("closer than delta_t"), "{}", stderr(&o));
}

#[test]
fn staged_run_matches_pipeline_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), MINIMAL).unwrap();
    let o = puretherm(dir.path(), &["pipeline", "--config", "c.toml", "--out", "a", "--threads", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = puretherm(dir.path(), &["pipeline", "--config", "c.toml", "--out", "b"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for stage in ["prepare", "evolve", "correlate", "spectra", "kpm", "decohere"] {
        let o = puretherm(dir.path(), &[stage, "--config", "c.toml", "--out", "c"]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let read = |d: &str| -> Manifest { serde_json::from_str(&fs::read_to_string(dir.path().join(d).join(MANIFEST)).unwrap()).unwrap() };
    let (a, b, c) = (read("a"), read("b"), read("c"));
    assert!(a.artifact_count() >= 6);
    assert_eq!(a.content_hash(), b.content_hash());
    let files = |m: &Manifest| -> Vec<(String, String)> {
        let mut v: Vec<_> = m.stages.iter().flat_map(|s| s.artifacts.iter().map(|x| (x.path.clone(), x.sha256.clone()))).collect();
        v.sort();
        v
    };
    // the staged run covers the same many-body artifacts with the same bytes
    let fc = files(&c);
    let fa: Vec<_> = files(&a).into_iter().filter(|(p, _)| !p.starts_with("hydro/")).collect();
    assert_eq!(fa, fc);
}
