use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use polysync_cli::config::PAPER_EXAMPLE;

fn polysync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polysync")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), &target).unwrap();
        }
    }
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

/// One full `bound` bundle shared by the tampering tests.
fn reference_bundle() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = polysync(&["bound", "--out", dir.path().to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        dir
    })
    .path()
}

fn tampered_copy(edit: impl FnOnce(&Path)) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(reference_bundle(), dir.path());
    edit(dir.path());
    dir
}

#[test]
fn short_experiment_fails_the_rank_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, PAPER_EXAMPLE.replace("rho = 20", "rho = 2")).unwrap();
    let out = polysync(&["collect", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("b").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("Assumption 5"), "{}", stderr(&out));
    assert!(stdout(&out).contains("FAIL"), "rank table still printed");
    let marker = fs::read_to_string(dir.path().join("b/STAGE")).unwrap();
    assert!(marker.contains("completed=collect") && marker.contains("failed="), "{marker}");
}

#[test]
fn collect_is_byte_identical_for_the_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = polysync(&["collect", "--seed", "11", "--out", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), fb.len());
    assert!(fa.len() > 6 * 4);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(&a).unwrap(), y.strip_prefix(&b).unwrap());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{} differs", x.display());
    }
    let other = dir.path().join("c");
    polysync(&["collect", "--seed", "12", "--out", other.to_str().unwrap()]);
    assert_ne!(fs::read(a.join("data/agent1/x.csv")).unwrap(), fs::read(other.join("data/agent1/x.csv")).unwrap());
}

#[test]
fn fresh_bundle_verifies() {
    let out = polysync(&["verify", reference_bundle().to_str().unwrap()]);
    assert!(out.status.success(), "{}\n{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    assert!(!text.contains("FAIL"));
    assert_eq!(text.matches("PASS bound containment").count(), 6);
    assert_eq!(text.matches("PASS vertex schur sweep").count(), 6);
}

#[test]
fn zeroed_gain_fails_the_schur_sweep() {
    let dir = tampered_copy(|root| {
        let path = root.join("gains.json");
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        // follower 1 is open-loop unstable (A = 2)
        v["agents"][0]["k"] = serde_json::json!([[0.0]]);
        fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    });
    let out = polysync(&["verify", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let text = stdout(&out);
    assert!(text.contains("FAIL vertex schur sweep [follower1]"), "{text}");
    assert!(text.contains("FAIL gain matches certificate [follower1]"), "{text}");
    assert!(text.contains("PASS vertex schur sweep [follower2]"), "{text}");
}

#[test]
fn halved_bound_fails_containment_at_the_reported_step() {
    let root = reference_bundle();
    let e = polysync::simulate::read_error_column(&root.join("trajectories/agent6.csv")).unwrap();
    let b = polysync::reach::read_bounds_csv(&root.join("bounds/agent6.csv")).unwrap();
    let expected = e
        .iter()
        .zip(&b.r)
        .position(|(e, r)| polysync::numkit::vec_norm_inf(e) > 0.5 * r + 1e-9 * (1.0 + 0.5 * r))
        .expect("halving the bound exposes some step");

    let dir = tampered_copy(|root| {
        let path = root.join("bounds/agent6.csv");
        let mut text = String::from("t,r,asymptotic\n");
        for (t, r) in b.r.iter().enumerate() {
            text.push_str(&format!("{t},{},{}\n", 0.5 * r, b.asymptotic));
        }
        fs::write(path, text).unwrap();
    });
    let out = polysync(&["verify", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let report = polysync_cli::verify::verify_bundle(dir.path()).unwrap();
    let failures: Vec<_> = report.failures().collect();
    assert_eq!(failures.len(), 1, "{failures:?}");
    assert_eq!(failures[0].name, "bound containment");
    assert_eq!(failures[0].agent.as_deref(), Some("follower6"));
    assert_eq!(failures[0].step, Some(expected));
    assert!(stdout(&out).contains(&format!("‖e({expected})‖∞")));
}

#[test]
fn missing_files_are_integrity_errors() {
    for victim in ["gains.json", "bounds/agent3.csv", "data/agent2/x.csv", "STAGE"] {
        let dir = tampered_copy(|root| fs::remove_file(root.join(victim)).unwrap());
        let out = polysync(&["verify", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(4), "{victim}");
        assert!(stderr(&out).contains("integrity"), "{victim}: {}", stderr(&out));
    }
}

#[test]
fn misshaped_matrix_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, PAPER_EXAMPLE.replace("a = [[2.0]]", "a = [[2.0, 1.0]]")).unwrap();
    let out = polysync(&["collect", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("b").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 11"), "{}", stderr(&out));
}

#[test]
fn disconnected_graph_is_an_assumption_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cut.toml");
    fs::write(&cfg, PAPER_EXAMPLE.replace("    { from = 3, to = 4, weight = 1.0 },\n", "")).unwrap();
    let out = polysync(&["synthesize", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("b").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("Assumption 1"), "{}", stderr(&out));
}
