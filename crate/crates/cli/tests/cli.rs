use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cfos_core::{load_image, load_mask};

fn cfos(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfos"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = cfos(args, cwd);
    assert!(
        out.status.success(),
        "cfos {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn count(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
        .count()
}

#[test]
fn corpus_tools_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let stdout = ok(&["synth", "gen", "--out", "corpus", "--tiles", "9", "--seed", "3"], d);
    assert!(stdout.contains("9 pool tiles"), "{stdout}");
    let c = d.join("corpus");
    for f in ["source.png", "source_mask.png", "pool.png", "pool_mask.png", "pipeline.toml", "corpus.json"] {
        assert!(c.join(f).exists(), "{f}");
    }
    assert_eq!(count(&c.join("annotations"), "json"), 9);

    ok(&["crop", "--input", "corpus/source.png", "--out", "tiles"], d);
    let n = count(&d.join("tiles"), "png");
    assert_eq!(n, 8 * 6);
    ok(&["stitch", "--in", "tiles", "--grid", "tiles/grid.json", "--out", "back.png"], d);
    let (src, back) = (load_image(c.join("source.png")).unwrap(), load_image(d.join("back.png")).unwrap());
    for y in 0..back.height() {
        for x in 0..back.width() {
            let want = if x < src.width() && y < src.height() { src.get(x, y) } else { 0.0 };
            assert_eq!(back.get(x, y), want, "({x}, {y})");
        }
    }

    ok(&["rasterize", "--ann", "corpus/annotations", "--out", "labels"], d);
    ok(&["proposals", "--in", "corpus/proposals", "--out", "merged"], d);
    assert_eq!(count(&d.join("labels"), "png"), 9);
    assert_eq!(count(&d.join("merged"), "png"), 9);
    assert_eq!(load_mask(d.join("labels/0-0.png")).unwrap().width(), 128);

    let stdout = ok(&["evaluate", "--pred", "corpus/truth", "--truth", "corpus/truth", "--out", "self.csv"], d);
    assert!(stdout.starts_with("miou 1.0000 f1 1.0000"), "{stdout}");
    let csv = fs::read_to_string(d.join("self.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("image,iou"));
    assert_eq!(csv.lines().count(), 1 + 9 + 1);
    assert!(csv.lines().last().unwrap().starts_with("summary,miou=1.000000"));
}

#[test]
fn bad_arguments_fail_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["synth", "gen", "--out", "c", "--tiles", "1"], d);
    let out = cfos(&["crop", "--input", "c/source.png", "--window", "16", "--margin", "8", "--out", "t"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("margin"));
    let out = cfos(&["pipeline", "run", "--config", "c/pipeline.toml", "--stop-after", "nonsense"], d);
    assert!(!out.status.success());
    let out = cfos(&["pipeline", "serve", "--config", "c/pipeline.toml", "--port", "0"], d);
    assert!(!out.status.success(), "serve without a review queue must fail");
}
