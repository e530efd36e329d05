use std::path::Path;
use std::process::Command;

const CONFIG: &str = "\
resolution = 16
channels = 4,6,8
layers = 0,2,4
d_a = 16
batch_size = 2
eval_every = 2
stage1_epochs = 3
stage2_epochs = 2
stage2_lr = 0.001
stage3_epochs = 2
";

fn voxatt(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_voxatt")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "voxatt {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_voxatt")).args(args).output().unwrap();
    assert!(!out.status.success(), "voxatt {args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_with(dir: &Path, ext: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
        .count()
}

#[test]
fn end_to_end_with_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let data = d.join("data");
    voxatt(&[
        "gen-synth",
        "--count",
        "6",
        "--resolution",
        "16",
        "--seed",
        "3",
        "--out",
        s(&data),
    ]);
    assert_eq!(files_with(&data, "vxp"), 6);
    let manifest = std::fs::read_to_string(data.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.ends_with("\ttrain")).count(), 5);

    let cfg = d.join("run.cfg");
    std::fs::write(&cfg, format!("{CONFIG}data_dir = {}\n", data.display())).unwrap();

    // straight through
    let (full, log) = (d.join("full.ckpt"), d.join("full.csv"));
    voxatt(&[
        "train",
        "--stage",
        "1",
        "--config",
        s(&cfg),
        "--out",
        s(&full),
        "--log",
        s(&log),
    ]);
    for stage in ["2", "3"] {
        voxatt(&[
            "train",
            "--stage",
            stage,
            "--checkpoint",
            s(&full),
            "--out",
            s(&full),
            "--log",
            s(&log),
        ]);
    }

    // stopped and resumed inside every stage
    let (part, plog) = (d.join("part.ckpt"), d.join("part.csv"));
    voxatt(&[
        "train",
        "--stage",
        "1",
        "--config",
        s(&cfg),
        "--until",
        "1",
        "--out",
        s(&part),
        "--log",
        s(&plog),
    ]);
    voxatt(&[
        "train",
        "--stage",
        "1",
        "--checkpoint",
        s(&part),
        "--out",
        s(&part),
        "--log",
        s(&plog),
    ]);
    for stage in ["2", "3"] {
        voxatt(&[
            "train",
            "--stage",
            stage,
            "--checkpoint",
            s(&part),
            "--until",
            "1",
            "--out",
            s(&part),
            "--log",
            s(&plog),
        ]);
        voxatt(&[
            "train",
            "--stage",
            stage,
            "--checkpoint",
            s(&part),
            "--out",
            s(&part),
            "--log",
            s(&plog),
        ]);
    }
    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(text, std::fs::read_to_string(&plog).unwrap());
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&part).unwrap());
    assert_eq!(text.lines().count(), 1 + 3 + 2 + 2);
    assert!(text.starts_with("epoch,stage,"));

    let summary = voxatt(&["log-summary", "--log", s(&log), "--stage", "2"]);
    assert!(
        summary.starts_with("stage 2 shape mIoU") && summary.contains("epochs 2..=2 (1 rows)"),
        "{summary}"
    );

    let ck = s(&full);
    let report = voxatt(&[
        "eval",
        "--checkpoint",
        ck,
        "--split",
        "train",
        "--set-metrics",
        "--out",
        s(&d.join("eval.csv")),
    ]);
    assert!(report.contains("shape mIoU"));
    let csv = std::fs::read_to_string(d.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let ids: Vec<&str> = manifest
        .lines()
        .skip(1)
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    let shapes = d.join("shapes");
    voxatt(&["recon", "--checkpoint", ck, "--split", "test", "--out", s(&shapes)]);
    assert_eq!(files_with(&shapes, "obj"), 1);
    voxatt(&[
        "swap",
        "--checkpoint",
        ck,
        "--a",
        ids[0],
        "--b",
        ids[1],
        "--part",
        "2",
        "--format",
        "vxp",
        "--out",
        s(&shapes),
    ]);
    assert_eq!(files_with(&shapes, "vxp"), 2);
    voxatt(&[
        "mix",
        "--checkpoint",
        ck,
        "--seed",
        "4",
        "--format",
        "ascii",
        "--out",
        s(&shapes),
    ]);
    assert_eq!(files_with(&shapes, "txt"), 1);
    let walk = d.join("walk");
    voxatt(&[
        "interp",
        "--checkpoint",
        ck,
        "--a",
        ids[0],
        "--b",
        ids[5],
        "--steps",
        "8",
        "--out",
        s(&walk),
    ]);
    assert_eq!(files_with(&walk, "obj"), 8);
    let maps = d.join("maps");
    voxatt(&["attn-maps", "--checkpoint", ck, "--item", ids[2], "--out", s(&maps)]);
    assert_eq!(files_with(&maps, "csv"), 3 * 3 * 8);
    assert!(maps.join("layer4_block2_head7.pgm").exists());

    let src = data.join(format!("{}.vxp", ids[0]));
    voxatt(&[
        "export",
        "--input",
        s(&src),
        "--format",
        "obj-cubes",
        "--out",
        s(&d.join("one.obj")),
    ]);
    assert!(std::fs::read_to_string(d.join("one.obj")).unwrap().starts_with('#'));
}

#[test]
fn usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let data = d.join("data");
    let all = d.join("all");
    voxatt(&["gen-synth", "--count", "3", "--resolution", "16", "--out", s(&data)]);
    voxatt(&[
        "gen-synth",
        "--count",
        "3",
        "--resolution",
        "16",
        "--ratio",
        "1.0",
        "--out",
        s(&all),
    ]);
    let cfg = d.join("run.cfg");
    std::fs::write(&cfg, format!("{CONFIG}data_dir = {}\n", data.display())).unwrap();
    let ck = d.join("a.ckpt");

    let err = fails(&["train", "--stage", "2", "--config", s(&cfg), "--out", s(&ck)]);
    assert!(err.contains("stage 2 needs a stage-1 checkpoint"), "{err}");
    let err = fails(&[
        "train",
        "--stage",
        "1",
        "--config",
        s(&cfg),
        "--data",
        s(&all),
        "--out",
        s(&ck),
    ]);
    assert!(err.contains("no test items"), "{err}");
    let err = fails(&[
        "train",
        "--stage",
        "1",
        "--config",
        s(&cfg),
        "--data",
        s(&d.join("none")),
        "--out",
        s(&ck),
    ]);
    assert!(err.contains("none"), "{err}");
    fails(&["eval", "--config", s(&cfg)]);
    fails(&["train", "--stage", "1", "--out", s(&ck)]);

    std::fs::write(&cfg, "colour = red\n").unwrap();
    let err = fails(&["train", "--stage", "1", "--config", s(&cfg), "--out", s(&ck)]);
    assert!(err.contains("colour"), "{err}");

    let text = voxatt(&["default-config", "--head-mode", "simple_mlp"]);
    assert!(text.contains("head_mode = simple_mlp"));
    assert!(text.contains("stage2_lr = 0.001"));
}
