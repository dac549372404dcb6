use std::path::Path;
use std::process::{Command, Output};

fn shapegrf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapegrf")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = shapegrf(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn blob_model_file_and_help_note() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen", "blobs", "--alpha", "0.35", "--beta", "0.5", "-o", "blobs.json"]);
    let (m, _) = shapegrf::io::read_model(dir.path().join("blobs.json")).unwrap();
    assert_eq!(m.potentials.table(shapegrf::Offset::new(0, 5)).unwrap(), &[0.15000000000000002, 0.35, 0.35, -0.85]);
    let help = ok(dir.path(), &["gen", "blobs", "--help"]);
    assert!(help.contains("(0,-1)"));
}

#[test]
fn oracle_equal_accepts_gauge_shifted_copies() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen", "potts", "--labels", "2", "--neighbourhood", "4", "--gamma", "0.7", "--width", "3", "--height", "2", "-o", "a.json"]);
    let (m, _) = shapegrf::io::read_model(p.join("a.json")).unwrap();
    let shifted = shapegrf::grid::add_gauge_constants(&m.potentials, &[(shapegrf::Offset::new(1, 0), 1.5)]).unwrap();
    let file = shapegrf::io::ModelFile::new(&m.with_potentials(shifted).unwrap(), None);
    shapegrf::io::write_model(p.join("b.json"), &file).unwrap();
    assert_eq!(shapegrf(p, &["oracle", "equal", "a.json", "b.json", "--tol", "1e-12"]).status.code(), Some(0));
    ok(p, &["gen", "potts", "--labels", "2", "--neighbourhood", "4", "--gamma", "0.2", "--width", "3", "--height", "2", "-o", "c.json"]);
    assert_eq!(shapegrf(p, &["oracle", "equal", "a.json", "c.json"]).status.code(), Some(1));
    let z: f64 = ok(p, &["oracle", "z", "--model", "a.json"]).trim().parse().unwrap();
    assert!(z > 6.0 * 2f64.ln());
    // height 2: every node has exactly one vertical neighbour
    assert!(ok(p, &["oracle", "rank", "--model", "a.json"]).contains("identifiable\tfalse"));
    assert!(ok(p, &["oracle", "rank", "--model", "a.json", "--width", "5", "--height", "5"]).contains("identifiable\ttrue"));
    let marg = ok(p, &["oracle", "marginals", "--model", "a.json"]);
    assert_eq!(marg.lines().count(), 6);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen", "blobs", "--width", "16", "--height", "16", "-o", "blobs.json"]);
    // too many labellings to enumerate: validation error
    let out = shapegrf(p, &["oracle", "z", "--model", "blobs.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error\tvalidation\t"));
    // missing file: runtime error
    assert_eq!(shapegrf(p, &["oracle", "z", "--model", "absent.json"]).status.code(), Some(3));
    // malformed PNM header
    std::fs::write(p.join("bad.pgm"), b"P2\n1 1\n255\n0").unwrap();
    assert_eq!(shapegrf(p, &["loss", "--truth", "bad.pgm", "--labelling", "bad.pgm"]).status.code(), Some(2));
    // usage error
    assert_eq!(shapegrf(p, &["gen", "blobs"]).status.code(), Some(2));
}

#[test]
fn sampling_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen", "blobs", "--width", "24", "--height", "24", "-o", "blobs.json"]);
    ok(p, &["sample-prior", "--model", "blobs.json", "-o", "a.pgm", "--seed", "5", "--burn-in", "50"]);
    ok(p, &["sample-prior", "--model", "blobs.json", "-o", "b.pgm", "--seed", "5", "--burn-in", "50", "--threads", "1"]);
    ok(p, &["sample-prior", "--model", "blobs.json", "-o", "c.pgm", "--seed", "6", "--burn-in", "50"]);
    let read = |f: &str| std::fs::read(p.join(f)).unwrap();
    assert_eq!(read("a.pgm"), read("b.pgm"));
    assert_ne!(read("a.pgm"), read("c.pgm"));
    ok(p, &["sample-prior", "--model", "blobs.json", "-o", "s.pgm", "--samples", "3", "--burn-in", "5"]);
    assert!(p.join("s_0002.pgm").exists());
    let loss = ok(p, &["loss", "--truth", "a.pgm", "--labelling", "a.pgm"]);
    assert!(loss.contains("hamming\t0"));
}

#[test]
fn learn_segment_and_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen", "figure", "--class", "man", "--parts", "3", "--scale", "1", "--sigma", "0.05", "--image", "x.pgm", "--truth", "y.pgm"]);
    ok(p, &["gen", "potts", "--labels", "3", "--neighbourhood", "8", "--anisotropic", "--width", "14", "--height", "24", "-o", "base.json"]);
    ok(p, &["learn", "--model", "base.json", "--labelling", "y.pgm", "--iters", "50", "-o", "learned.json", "--trace", "trace.tsv"]);
    let trace = std::fs::read_to_string(p.join("trace.tsv")).unwrap();
    assert_eq!(trace.lines().count(), 50);
    ok(p, &["learn-appearance", "--model", "learned.json", "--image", "x.pgm", "--iters", "20", "-o", "full.json"]);
    ok(p, &["segment", "--model", "full.json", "--image", "x.pgm", "-o", "seg.pgm", "--confidence", "conf.pgm", "--samples", "20", "--burn-in", "20"]);
    let seg = shapegrf::io::read_labelling(p.join("seg.pgm"), Some(3)).unwrap();
    assert_eq!(seg.domain().width, 14);
    ok(p, &["stats", "estimate", "--model", "learned.json", "--labelling", "y.pgm", "--frequencies", "-o", "s.json"]);
    let s = shapegrf::io::read_statistics(p.join("s.json")).unwrap();
    assert!((s.pairwise[0].values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    ok(p, &["stats", "estimate", "--model", "learned.json", "--samples", "5", "--burn-in", "5", "-o", "prior.json"]);
}

#[test]
fn structure_and_composition() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen", "figure", "--class", "man", "--parts", "3", "--scale", "1", "--sigma", "0", "--image", "xm.pgm", "--truth", "ym.pgm"]);
    ok(p, &["gen", "figure", "--class", "cat", "--parts", "3", "--scale", "1", "--sigma", "0", "--image", "xc.pgm", "--truth", "yc.pgm"]);
    let common = ["--labels", "3", "--d", "2", "--target-size", "2", "--iters", "40", "--burn-in", "10"];
    let grow: Vec<&str> = ["structure", "grow", "--labelling", "ym.pgm", "-o", "man.json", "--trace", "grow.tsv"].into_iter().chain(common).collect();
    ok(p, &grow);
    assert_eq!(std::fs::read_to_string(p.join("grow.tsv")).unwrap().lines().count(), 2);
    let shrink: Vec<&str> = ["structure", "shrink", "--labelling", "yc.pgm", "-o", "cat.json"].into_iter().chain(common).collect();
    ok(p, &shrink);
    ok(p, &["stats", "estimate", "--model", "man.json", "--labelling", "ym.pgm", "--frequencies", "-o", "sm.json"]);
    ok(p, &["stats", "estimate", "--model", "cat.json", "--labelling", "yc.pgm", "--frequencies", "-o", "sc.json"]);
    ok(p, &[
        "compose", "--first", "man.json", "--first-stats", "sm.json", "--second", "cat.json", "--second-stats", "sc.json",
        "--width", "24", "--height", "24", "--iters", "30", "--burn-in", "10", "-o", "joint.json", "--target", "t.json",
    ]);
    let (joint, _) = shapegrf::io::read_model(p.join("joint.json")).unwrap();
    assert_eq!(joint.num_labels(), 5);
    ok(p, &["gen", "collage", "--parts", "3", "--scale", "1", "--width", "48", "--height", "40", "--image", "cx.pgm", "--truth", "cy.pgm"]);
    let y = shapegrf::io::read_labelling(p.join("cy.pgm"), Some(5)).unwrap();
    assert!(y.as_slice().iter().any(|&v| v >= 3));
}
