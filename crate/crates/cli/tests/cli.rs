use std::path::Path;
use std::process::Command;

fn sim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cutfem-sim"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn classify_debug_writes_labels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let status = sim().args(["classify-debug", "--out"]).arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let vtk = std::fs::read_to_string(out.join("labels.vtk")).unwrap();
    assert!(vtk.contains("CELL_DATA") && vtk.contains("label"));
    let csv = std::fs::read_to_string(out.join("labels.csv")).unwrap();
    assert!(csv.starts_with("outside,cut,inside"));
}

#[test]
fn seeded_geometry_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let status = sim().args(["embed-debug", "--seed", seed, "--out"]).arg(&out).status().unwrap();
        assert_eq!(status.code(), Some(0));
        std::fs::read_to_string(out.join("embedding.csv")).unwrap()
    };
    assert_eq!(run("a", "7"), run("b", "7"));
    assert_ne!(run("a", "7"), run("c", "8"));
}

#[test]
fn compare_runs_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[comparison]\nmeshes = [[7, 3, 3]]\nsteps = 3\n[output]\nvtk_every = 2\n",
    );
    let out = dir.path().join("o");
    let status = sim().args(["compare", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let series = std::fs::read_to_string(out.join("comparison_7x3x3.csv")).unwrap();
    assert_eq!(series.lines().count(), 4);
    assert!(series.starts_with("step,time,"));
    assert!(out.join("comparison_cut_7x3x3_00002.vtk").exists());
    assert!(out.join("comparison.csv").exists());
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[comparison]\nmeshes = \"many\"\n");
    let status = sim().args(["compare", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn invalid_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let status = sim().args(["needle-phantom", "--tau", "-1", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = sim().args(["converge", "--mode", "sideways"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = sim().args(["classify-debug", "--mesh", "/nonexistent/mesh", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn embedding_failure_exits_3() {
    // a near-tangent placement that needs more than four refinement levels
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "tangent.toml",
        "[convergence.geometry]\nsphere_center = [3.4547348457883675, 1.1652445979612902, 0.8550113753251205]\nsphere_radius = 0.3660861657568548\nsphere_subdivisions = 3\n",
    );
    let status = sim().args(["embed-debug", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(3));
}
