use std::fs;
use std::path::Path;
use std::process::Command;

use pat_recon::field::{GridSpec, ScalarField2D};
use pat_recon::patf;

fn pat_recon(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_pat-recon")).args(args).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pat_recon(&["--help"]).0, 0);
    assert_eq!(pat_recon(&[]).0, 2);
    assert_eq!(pat_recon(&["reconstruct-everything"]).0, 2);
    assert_eq!(pat_recon(&["phantom", "--grid", "sixty-four", "--out", s(dir.path())]).0, 2);

    let missing = dir.path().join("nope.patf");
    let out = dir.path().join("x.pgm");
    let (code, msg) = pat_recon(&["export-pgm", "--in", s(&missing), "--lo", "0", "--hi", "1", "--out", s(&out)]);
    assert_eq!(code, 3, "{msg}");

    let field = dir.path().join("f.patf");
    patf::write_field(&field, &ScalarField2D::constant(GridSpec::square(4, 1e-4).unwrap(), 2.0)).unwrap();
    assert_eq!(pat_recon(&["export-pgm", "--in", s(&field), "--lo", "1", "--hi", "1", "--out", s(&out)]).0, 2);
    assert_eq!(pat_recon(&["export-pgm", "--in", s(&field), "--lo", "0", "--hi", "4", "--out", s(&out)]).0, 0);
    let bytes = fs::read(&out).unwrap();
    assert_eq!(&bytes[bytes.len() - 16..], &[128u8; 16]);

    // an unusable grid is a data error, whichever way it arrived
    assert_eq!(pat_recon(&["phantom", "--grid", "16", "--out", s(&dir.path().join("ph"))]).0, 3);
}

#[test]
fn run_record_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    let rec = dir.path().join("rec");
    let (code, msg) = pat_recon(&[
        "dataset", "--train", "1", "--test", "2", "--grid", "32", "--steps", "90", "--seed", "3", "--out", s(&ds),
    ]);
    assert_eq!(code, 0, "{msg}");
    let (code, msg) = pat_recon(&["recon-classical", "--data", s(&ds), "--iters", "3", "--out", s(&rec)]);
    assert_eq!(code, 0, "{msg}");

    let record = fs::read_to_string(rec.join("run.txt")).unwrap();
    assert!(record.contains("beta = 0.001"));
    assert!(record.contains("iters = 3"));
    let line = record
        .lines()
        .find_map(|l| l.strip_prefix("command_line = "))
        .unwrap()
        .to_string();
    let mut samples: Vec<_> = fs::read_dir(&rec).unwrap().flatten().map(|e| e.path()).filter(|p| p.is_dir()).collect();
    samples.sort();
    assert_eq!(samples.len(), 2);
    let first: Vec<Vec<u8>> = samples.iter().map(|d| fs::read(d.join("p0.patf")).unwrap()).collect();
    let first_c = fs::read(samples[1].join("c.patf")).unwrap();

    fs::remove_dir_all(&rec).unwrap();
    let args: Vec<&str> = line.split_whitespace().skip(1).collect();
    let (code, msg) = pat_recon(&args);
    assert_eq!(code, 0, "{msg}");
    for (d, bytes) in samples.iter().zip(&first) {
        assert_eq!(&fs::read(d.join("p0.patf")).unwrap(), bytes);
    }
    assert_eq!(fs::read(samples[1].join("c.patf")).unwrap(), first_c);
    assert_eq!(fs::read_to_string(rec.join("run.txt")).unwrap(), record);
}

#[test]
fn eval_reports_mean_and_population_std() {
    let dir = tempfile::tempdir().unwrap();
    let g = GridSpec::square(5, 1e-4).unwrap();
    let (pred, truth) = (dir.path().join("pred"), dir.path().join("truth"));
    // per-sample MAE: p0 0.1, 0.2, 0.6 and c 10, 10, 30
    for (id, p, c) in [("a", 0.1, 1510.0), ("b", -0.2, 1490.0), ("c", 0.6, 1530.0)] {
        for (root, pv, cv) in [(&pred, p, c), (&truth, 0.0, 1500.0)] {
            let d = root.join(id);
            fs::create_dir_all(&d).unwrap();
            patf::write_field(&d.join("p0.patf"), &ScalarField2D::constant(g, pv)).unwrap();
            patf::write_field(&d.join("c.patf"), &ScalarField2D::constant(g, cv)).unwrap();
        }
    }
    let csv = dir.path().join("out/metrics.csv");
    let (code, msg) = pat_recon(&["eval", "--pred", s(&pred), "--truth", s(&truth), "--out", s(&csv)]);
    assert_eq!(code, 0, "{msg}");
    let text = fs::read_to_string(&csv).unwrap();
    let row = |key: &str| -> (f64, f64) {
        let l = text.lines().find(|l| l.starts_with(key)).unwrap();
        let f: Vec<&str> = l.split(',').collect();
        (f[2].parse().unwrap(), f[3].parse().unwrap())
    };
    let (mp, mc) = row("mean,final,");
    let (sp, sc) = row("std,final,");
    assert!((mp - 0.3).abs() < 1e-12);
    assert!((sp - (0.14f64 / 3.0).sqrt()).abs() < 1e-12);
    assert!((mc - 50.0 / 3.0).abs() < 1e-9);
    assert!((sc - 20.0 * 2f64.sqrt() / 3.0).abs() < 1e-9);
    assert_eq!(text.lines().count(), 1 + 3 + 2);
    assert!(dir.path().join("out/run.txt").is_file());
}
