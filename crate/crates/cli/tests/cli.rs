use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn horecon(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_horecon"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_line(o: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().expect("stderr line");
    serde_json::from_str(line).expect("JSON error line")
}

fn value(tsv: &str, metric: &str, threshold: &str) -> f64 {
    tsv.lines()
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .find(|f| f.len() == 4 && f[0] == metric && f[1] == threshold)
        .unwrap_or_else(|| panic!("{metric} {threshold} missing in\n{tsv}"))[3]
        .parse()
        .unwrap()
}

fn synth(dir: &Path, name: &str, frames: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--out", name, "--frames", frames];
    args.extend_from_slice(extra);
    let o = horecon(&args, dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();

    assert_eq!(code(&horecon(&[], d)), 1);
    let o = horecon(&["vh", "--nonsense"], d);
    assert_eq!(code(&o), 1);
    assert_eq!(error_line(&o)["error"], "usage");
    assert_eq!(code(&horecon(&["--help"], d)), 0);

    let o = horecon(&["eval-poses", "--pred", "missing.txt", "--gt", "missing.txt"], d);
    assert_eq!(code(&o), 2);
    assert_eq!(error_line(&o)["code"], 2);
    fs::write(d.join("garbage.txt"), "not a pose file\n").unwrap();
    assert_eq!(code(&horecon(&["eval-poses", "--pred", "garbage.txt", "--gt", "garbage.txt"], d)), 2);

    synth(d, "seq", "8", &[]);
    fs::write(d.join("empty.txt"), "").unwrap();
    let o = horecon(&["import-sfm", "--images", "empty.txt", "--seq", "seq", "--out", "none.txt"], d);
    assert_eq!(code(&o), 0);
    let o = horecon(&["vh", "--seq", "seq", "--poses", "none.txt", "--resolution", "16"], d);
    assert_eq!(code(&o), 3);
    assert_eq!(error_line(&o)["error"], "numerical");

    fs::write(d.join("bad.ini"), "[vh]\nno_such_flag = 1\n").unwrap();
    let o = horecon(&["--config", "bad.ini", "vh", "--seq", "seq", "--poses", "none.txt"], d);
    assert_eq!(code(&o), 1);
    assert_eq!(error_line(&o)["error"], "config");
}

#[test]
fn config_file_precedence() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "seq", "6", &[]);
    fs::write(
        d.join("run.ini"),
        "group = from_general\nresolution = 8\n\n[eval-poses]\npairs = 1:1\n",
    )
    .unwrap();
    let base = ["eval-poses", "--pred", "seq/poses/gt.txt", "--gt", "seq/poses/gt.txt"];

    let o = horecon(&[&["--config", "run.ini"][..], &base[..]].concat(), d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("\tfrom_general\t"));
    assert_eq!(value(&out, "quality", "1cm&1deg"), 100.0);

    let o = horecon(&[&base[..], &["--group", "flag", "--config", "run.ini", "--pairs", "3:3"][..]].concat(), d);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("\tflag\t"));
    assert_eq!(value(&out, "quality", "3cm&3deg"), 100.0);
    assert!(!out.contains("1cm&1deg"));
}

#[test]
fn identical_pose_files_score_perfectly() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "seq", "10", &["--seed", "4"]);
    let o = horecon(
        &["eval-poses", "--pred", "seq/poses/gt.txt", "--gt", "seq/poses/gt.txt", "--out", "p.tsv", "--json", "p.json"],
        d,
    );
    assert_eq!(code(&o), 0);
    let tsv = fs::read_to_string(d.join("p.tsv")).unwrap();
    for pair in ["2cm&4deg", "5cm&10deg", "10cm&20deg"] {
        assert_eq!(value(&tsv, "quality", pair), 100.0);
    }
    assert_eq!(value(&tsv, "det_rate", ""), 100.0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("p.json")).unwrap()).unwrap();
    assert_eq!(json["det_rate"], 100.0);
}

fn metric_file(dir: &Path, size: &str, value: f64) {
    fs::create_dir_all(dir).unwrap();
    let manifest = serde_json::json!({
        "frames": 1, "width": 4, "height": 4, "fx": 1.0, "fy": 1.0, "cx": 1.5, "cy": 1.5,
        "tags": { "size": size },
    });
    fs::write(dir.join("manifest.json"), manifest.to_string()).unwrap();
    fs::create_dir_all(dir.join("eval")).unwrap();
    fs::write(
        dir.join("eval/recon.tsv"),
        format!("metric\tthreshold\tgroup\tvalue\nfscore\t5mm\tall\t{value}\nrec_rate\t\tall\t100\n"),
    )
    .unwrap();
}

#[test]
fn report_groups_by_manifest_tag() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    metric_file(&d.join("a"), "small", 10.0);
    metric_file(&d.join("b"), "small", 20.0);
    metric_file(&d.join("c"), "large", 7.0);
    let o = horecon(
        &["report", "--group-by", "size", "--out", "r.tsv", "a/eval/recon.tsv", "b/eval/recon.tsv", "c/eval/recon.tsv"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let tsv = fs::read_to_string(d.join("r.tsv")).unwrap();
    let get = |metric: &str, group: &str| -> f64 {
        tsv.lines()
            .map(|l| l.split('\t').collect::<Vec<_>>())
            .find(|f| f[0] == metric && f[2] == group)
            .unwrap()[3]
            .parse()
            .unwrap()
    };
    assert_eq!(get("fscore/mean", "small"), 15.0);
    assert_eq!(get("fscore/std", "small"), 5.0);
    assert_eq!(get("fscore/n", "small"), 2.0);
    assert_eq!(get("fscore/mean", "large"), 7.0);
    assert_eq!(get("fscore/std", "large"), 0.0);

    let o = horecon(&["report", "--group-by", "size", "--groups", "small,medium", "a/eval/recon.tsv"], d);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_prediction_is_a_failed_reconstruction() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "seq", "2", &["--kind", "sphere"]);
    let o = horecon(&["eval-recon", "--pred", "nope.ply", "--gt", "seq/gt/mesh.ply", "--out", "r.tsv"], d);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let tsv = fs::read_to_string(d.join("r.tsv")).unwrap();
    assert_eq!(value(&tsv, "rec_rate", ""), 0.0);
}

#[test]
fn segmentation_recovers_rendered_masks() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "seq", "3", &["--kind", "sphere", "--sleeve", "--background-depth", "1.0"]);
    let before: Vec<Vec<u8>> = (0..3).map(|i| fs::read(d.join(format!("seq/frames/{i:04}.mask"))).unwrap()).collect();
    let o = horecon(&["segment", "--seq", "seq", "--depth-max", "0.9", "--sleeve-color", "0.05,0.9,0.1"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for (i, b) in before.iter().enumerate() {
        assert_eq!(&fs::read(d.join(format!("seq/frames/{i:04}.mask"))).unwrap(), b);
    }
}

#[test]
fn hand_poses_from_synthetic_keypoints() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "seq", "16", &["--noise-keypoints", "1.0", "--seed", "3"]);
    for smooth in ["none", "fixed", "median"] {
        let out = format!("hand_{smooth}.txt");
        let o = horecon(&["hand-poses", "--seq", "seq", "--smooth", smooth, "--out", &out], d);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = horecon(&["eval-poses", "--pred", &out, "--gt", "seq/poses/gt_relative.txt"], d);
        let tsv = stdout(&o);
        assert_eq!(value(&tsv, "det_rate", ""), 100.0);
        assert!(value(&tsv, "rot_error_deg", "") < 2.0);
    }
}

#[test]
fn synthetic_pipeline_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, "seq", "64", &["--seed", "1", "--noise-depth", "0.001"]);
    let steps: [&[&str]; 4] = [
        &["icp-align", "--seq", "seq", "--init-pose", "seq/poses/gt.txt"],
        &[
            "refine", "--seq", "seq", "--iterations", "20", "--lr-appearance", "0.01", "--trace", "seq/trace.tsv",
        ],
        &["vh", "--seq", "seq", "--poses", "seq/poses/icp.txt", "--resolution", "64"],
        &["eval-poses", "--pred", "seq/poses/icp.txt", "--gt", "seq/poses/gt.txt", "--out", "poses.tsv"],
    ];
    for args in steps {
        let o = horecon(args, d);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(fs::read_to_string(d.join("seq/poses/icp.residuals.tsv")).unwrap().lines().count() == 65);
    assert_eq!(fs::read_to_string(d.join("seq/trace.tsv")).unwrap().lines().count(), 21);
    let poses = fs::read_to_string(d.join("poses.tsv")).unwrap();
    assert!(value(&poses, "rot_error_deg", "") < 0.5);
    assert_eq!(value(&poses, "quality", "2cm&4deg"), 100.0);

    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("seq/recon/vh.json")).unwrap()).unwrap();
    let tau_mm = 2.0 * stats["spacing"].as_f64().unwrap() * 1000.0;
    let o = horecon(
        &["eval-recon", "--pred", "seq/recon/vh.ply", "--gt", "seq/gt/mesh.ply", "--thresholds", &tau_mm.to_string()],
        d,
    );
    assert_eq!(code(&o), 0);
    let recon = stdout(&o);
    let f = recon
        .lines()
        .find(|l| l.starts_with("fscore\t"))
        .and_then(|l| l.rsplit('\t').next())
        .unwrap()
        .parse::<f64>()
        .unwrap();
    assert!(f >= 90.0, "F = {f}");
}
