use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"{"d":16,"num_windows":6,"audio_tokens_per_window":20,"frames_per_window":4,"video_tokens_per_frame":12,"audio_pool_size":1,"event_windows":2}"#;

fn omnizip(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omnizip"))
        .args(args)
        .current_dir(cwd)
        .env_remove("OMNIZIP_WORKERS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn generated() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    let out = omnizip(
        &["gen", "--config", "cfg.json", "--seed", "3", "--scenario", "events", "--out", "s"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn gen_then_compress_writes_every_output() {
    let dir = generated();
    for name in ["stream.json", "audio.f32", "video.f32"] {
        assert!(dir.path().join("s").join(name).is_file(), "{name}");
    }
    let out = omnizip(&["compress", "--stream", "s", "--out", "o"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["result.json", "compressed_audio.f32", "compressed_video.f32", "windows.csv", "timing.json"] {
        assert!(dir.path().join("o").join(name).is_file(), "{name}");
    }
    let csv = fs::read_to_string(dir.path().join("o/windows.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn gen_is_seeded() {
    let dir = generated();
    let again = omnizip(
        &["gen", "--config", "cfg.json", "--seed", "3", "--scenario", "events", "--out", "t"],
        dir.path(),
    );
    assert_eq!(code(&again), 0);
    for name in ["stream.json", "audio.f32", "video.f32"] {
        assert_eq!(
            fs::read(dir.path().join("s").join(name)).unwrap(),
            fs::read(dir.path().join("t").join(name)).unwrap()
        );
    }
}

#[test]
fn worker_env_does_not_change_outputs() {
    let dir = generated();
    assert_eq!(code(&omnizip(&["compress", "--stream", "s", "--out", "one"], dir.path())), 0);
    let many = Command::new(env!("CARGO_BIN_EXE_omnizip"))
        .args(["compress", "--stream", "s", "--out", "many"])
        .current_dir(dir.path())
        .env("OMNIZIP_WORKERS", "4")
        .output()
        .unwrap();
    assert_eq!(code(&many), 0);
    for name in ["result.json", "compressed_audio.f32", "compressed_video.f32", "windows.csv"] {
        assert_eq!(
            fs::read(dir.path().join("one").join(name)).unwrap(),
            fs::read(dir.path().join("many").join(name)).unwrap(),
            "{name}"
        );
    }
    let timing = fs::read_to_string(dir.path().join("many/timing.json")).unwrap();
    assert!(timing.contains("\"workers\": 4"), "{timing}");
}

#[test]
fn baseline_strategy_needs_retention() {
    let dir = generated();
    let out = omnizip(&["compress", "--stream", "s", "--strategy", "random", "--out", "r"], dir.path());
    assert_eq!(code(&out), 2);
    let out = omnizip(
        &["compress", "--stream", "s", "--strategy", "temporal_merge", "--retention", "0.4", "--out", "r"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = generated();
    let missing = omnizip(&["compress", "--stream", "nowhere", "--out", "x"], dir.path());
    assert_eq!(code(&missing), 4);
    let bad_rate = omnizip(&["compress", "--stream", "s", "--rho-v", "1.5", "--out", "x"], dir.path());
    assert_eq!(code(&bad_rate), 2);
    let infeasible = omnizip(&["compress", "--stream", "s", "--rho-v", "0.99", "--out", "x"], dir.path());
    assert_eq!(code(&infeasible), 3);
    let usage = omnizip(&["compress", "--rho-v", "0.5"], dir.path());
    assert_eq!(code(&usage), 2);
    let unknown = omnizip(&["compress", "--stream", "s", "--strategy", "magic", "--out", "x"], dir.path());
    assert_eq!(code(&unknown), 2);
}

#[test]
fn corrupt_tensor_is_a_validation_error() {
    let dir = generated();
    let video = dir.path().join("s/video.f32");
    let mut bytes = fs::read(&video).unwrap();
    bytes.truncate(bytes.len() - 4);
    fs::write(&video, bytes).unwrap();
    let out = omnizip(&["compress", "--stream", "s", "--out", "x"], dir.path());
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cost_prints_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = omnizip(
        &["cost", "--d", "3584", "--m", "18944", "--layers", "28", "-R", "128", "--n-full", "10000", "--n-compressed", "4000"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let header = lines[lines.len() - 2];
    assert!(header.starts_with("n_full,n_compressed"), "{header}");
    let row: Vec<&str> = lines[lines.len() - 1].split(',').collect();
    assert_eq!(row[0], "10000");
    assert_eq!(row[1], "4000");
    let json: String = lines[..lines.len() - 2].join("\n");
    assert!(json.trim_start().starts_with('{') && json.contains("\"ratio\""), "{json}");

    let missing = omnizip(&["cost", "--n-full", "10", "--n-compressed", "4"], dir.path());
    assert_eq!(code(&missing), 2);
    let unknown = omnizip(&["cost", "--preset", "nope", "--n-full", "10", "--n-compressed", "4"], dir.path());
    assert_eq!(code(&unknown), 2);
}

#[test]
fn compare_writes_one_row_per_strategy_and_rate() {
    let dir = generated();
    let out = omnizip(
        &["compare", "--stream", "s", "--retentions", "1.0,0.45", "--n-full", "10000", "--out", "c/cmp.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("c/cmp.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].starts_with("strategy,retention,kept_tokens"));
    let strategies: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(strategies, ["omnizip", "omnizip", "random", "random", "ttm-like", "ttm-like"]);
}
