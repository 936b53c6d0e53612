//! End-to-end tests against the compiled binary.

use std::path::Path;
use std::process::Command;

fn esod() -> Command {
    Command::new(env!("CARGO_BIN_EXE_esod"))
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.txt");
    std::fs::write(
        &path,
        "# small scenes keep the test fast\n\
         image_w = 129\n\
         image_h = 129\n\
         cluster_count_mean = 2.0\n\
         objects_per_cluster_mean = 6.0\n\
         k = 4\n",
    )
    .unwrap();
    path
}

#[test]
fn run_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let status = esod()
            .args(["run", "--synth", "3", "--seed", "5", "--no-overlays"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(
        read(&out_a.join("report.txt")),
        read(&out_b.join("report.txt")),
        "reports differ between identical runs"
    );
    for i in 0..3 {
        let name = format!("plan_{i:04}.txt");
        assert_eq!(read(&out_a.join(&name)), read(&out_b.join(&name)), "{name} differs");
    }
}

#[test]
fn synth_then_slice_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let scenes = dir.path().join("scenes");
    let status = esod()
        .args(["synth", "--count", "1", "--masks", "--seed", "11"])
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&scenes)
        .status()
        .unwrap();
    assert!(status.success());

    let plan_path = dir.path().join("plan.txt");
    let output = esod()
        .args(["slice", "--strategy", "greedy", "--k", "4", "--threshold", "0.5"])
        .arg("--mask")
        .arg(scenes.join("scene_0000.pgm"))
        .arg("--out")
        .arg(&plan_path)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let text = std::fs::read_to_string(&plan_path).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header[0], "greedy");
    assert_eq!(header[1], "4");
    assert!(text.lines().count() > 1, "no patches in plan:\n{text}");
}

#[test]
fn run_on_image_files_with_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let scenes = dir.path().join("scenes");
    assert!(esod()
        .args(["synth", "--count", "2", "--seed", "3"])
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&scenes)
        .status()
        .unwrap()
        .success());

    let out = dir.path().join("out");
    let output = esod()
        .args(["run", "--k", "4", "--seed", "3"])
        .arg("--image")
        .arg(scenes.join("scene_0000.ppm"))
        .arg("--image")
        .arg(scenes.join("scene_0001.ppm"))
        .arg("--ann")
        .arg(scenes.join("scene_0000.txt"))
        .arg("--ann")
        .arg(scenes.join("scene_0001.txt"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert!(out.join("report.txt").exists());
    assert!(out.join("overlay_0000.ppm").exists());
    assert!(out.join("detections_0001.txt").exists());
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.starts_with("esod-report v1"));
    assert!(report.contains("bpr_ctr"));
}

#[test]
fn stats_reads_annotation_files() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.txt");
    std::fs::write(&ann, "40,40,10,10,1,4,0,0\n").unwrap();
    let output = esod()
        .args(["stats", "--image-size", "256x256", "--k", "8"])
        .arg("--ann")
        .arg(&ann)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("mean_patch_emptiness_k8 0.984375"), "{stdout}");
    assert!(stdout.contains("mean_pixel_occupancy 0.00152587890625"), "{stdout}");
}

#[test]
fn report_merges_run_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (seed, out) in [("5", &out_a), ("6", &out_b)] {
        assert!(esod()
            .args(["run", "--synth", "2", "--seed", seed, "--no-overlays"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap()
            .success());
    }
    let merged = dir.path().join("merged.txt");
    let output = esod()
        .arg("report")
        .arg(out_a.join("report.txt"))
        .arg(out_b.join("report.txt"))
        .arg("--out")
        .arg(&merged)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("images 4"), "{stdout}");
    let text = std::fs::read_to_string(&merged).unwrap();
    assert!(text.contains("images 4"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.txt");
    std::fs::write(
        &config,
        "image_w = 129\nimage_h = 129\nk = 8\nstrategy = parallel\ncluster_count_mean = 2.0\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    assert!(esod()
        .args(["run", "--synth", "1", "--k", "4", "--strategy", "greedy", "--no-overlays"])
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let plan = std::fs::read_to_string(out.join("plan_0000.txt")).unwrap();
    let header: Vec<&str> = plan.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header[0], "greedy", "flag did not override config strategy");
    assert_eq!(header[1], "4", "flag did not override config k");
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    // malformed annotation line reports its number
    let ann = dir.path().join("bad.txt");
    std::fs::write(&ann, "1,2,3\n").unwrap();
    let output = esod()
        .args(["stats", "--image-size", "100x100"])
        .arg("--ann")
        .arg(&ann)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line 1"), "{stderr}");

    // unknown strategy
    let output = esod()
        .args(["run", "--synth", "1", "--strategy", "bogus", "--out"])
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert!(!output.status.success());
}
