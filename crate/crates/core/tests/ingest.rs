use std::fs;
use std::path::{Path, PathBuf};

use oct_triage::domain::GroundTruthLabel;
use oct_triage::ingest::*;
use oct_triage::IngestError;
use serde_json::json;

fn write_png(path: &Path, h: u32, w: u32, fill: impl Fn(u32, u32) -> u8) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    image::GrayImage::from_fn(w, h, |x, y| image::Luma([fill(x, y)])).save(path).unwrap();
}

fn volume_manifest(entries: serde_json::Value) -> String {
    json!({
        "dataset_id": "fixture",
        "scanner_id": "bench",
        "label_granularity": "VOLUME",
        "entries": entries,
    })
    .to_string()
}

#[test]
fn large_manifest_parses() {
    let entries: Vec<_> = (0..135)
        .map(|v| {
            json!({
                "volume_id": format!("v{v:03}"),
                "site_id": format!("site-{}", v % 3),
                "label": if v % 2 == 0 { "NORMAL" } else { "DME" },
                "bscan_paths": (0..128).map(|b| format!("v{v:03}/{b:03}.png")).collect::<Vec<_>>(),
            })
        })
        .collect();
    let text = volume_manifest(json!(entries));
    let m = manifest_from_str(&text, Path::new("big.json"), PathBuf::from("/data")).unwrap();
    assert_eq!(m.entries.len(), 135);
    assert_eq!(m.n_bscans(), 17_280);
    assert_eq!(m.site_ids(), ["site-0", "site-1", "site-2"]);
    assert_eq!(m.entries[1].volume_label(), GroundTruthLabel::Dme);
    assert_eq!(m.entries[134].bscan_paths[127], PathBuf::from("v134/127.png"));
}

#[test]
fn schema_errors_name_the_field() {
    let cases = [
        (json!([{"volume_id": "a", "site_id": "s", "bscan_paths": ["x.png"]}]), "entries[0].label"),
        (json!([{"volume_id": "a", "site_id": "s", "label": "GLAUCOMA", "bscan_paths": ["x.png"]}]), "entries[0].label"),
        (json!([{"volume_id": "a", "site_id": "s", "label": "DME", "bscan_paths": []}]), "entries[0].bscan_paths"),
        (
            json!([{"volume_id": "a", "site_id": "s", "label": "DME", "bscan_paths": ["x.png"], "extra": 1}]),
            "entries[0].extra",
        ),
    ];
    for (entries, field) in cases {
        let err = manifest_from_str(&volume_manifest(entries), Path::new("m.json"), PathBuf::new()).unwrap_err();
        match err {
            IngestError::SchemaViolation { field: f, .. } => assert_eq!(f, field),
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[test]
fn missing_and_dangling_files_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    assert!(matches!(parse_manifest(&path), Err(IngestError::MissingFile(p)) if p == path));

    write_png(&dir.path().join("a/0.png"), 16, 16, |_, _| 0);
    let entries = json!([{"volume_id": "a", "site_id": "s", "label": "NORMAL", "bscan_paths": ["a/0.png", "a/1.png"]}]);
    fs::write(&path, volume_manifest(entries)).unwrap();
    let err = parse_manifest(&path).unwrap_err();
    assert!(matches!(&err, IngestError::DanglingPath { missing, .. } if missing.ends_with("a/1.png")));
    assert!(err.to_string().contains("1.png"));
}

fn single_entry(dir: &Path, id: &str, paths: &[String]) -> DatasetManifest {
    let entries = json!([{"volume_id": id, "site_id": "s", "label": "WET_AMD", "bscan_paths": paths}]);
    let path = dir.join(format!("{id}.json"));
    fs::write(&path, volume_manifest(entries)).unwrap();
    parse_manifest(&path).unwrap()
}

#[test]
fn loads_full_size_volume() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<String> = (0..4).map(|b| format!("vol/{b}.png")).collect();
    for (b, p) in paths.iter().enumerate() {
        write_png(&dir.path().join(p), 256, 512, |x, y| ((x + y + b as u32) % 256) as u8);
    }
    let m = single_entry(dir.path(), "vol", &paths);
    let vols = load_dataset(&m).unwrap();
    let v = &vols[0];
    assert_eq!(v.bscans().len(), 4);
    assert_eq!(v.label(), GroundTruthLabel::WetAmd);
    assert_eq!(v.scanner_id(), "bench");
    for (b, scan) in v.bscans().iter().enumerate() {
        assert_eq!((scan.height(), scan.width(), scan.index()), (256, 512, b));
        assert_eq!(scan.get(3, 10), ((10 + 3 + b) % 256) as u8);
    }
}

#[test]
fn heterogeneous_sizes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<String> = (0..3).map(|b| format!("h/{b}.png")).collect();
    write_png(&dir.path().join(&paths[0]), 32, 32, |_, _| 1);
    write_png(&dir.path().join(&paths[1]), 32, 32, |_, _| 1);
    write_png(&dir.path().join(&paths[2]), 32, 48, |_, _| 1);
    let m = single_entry(dir.path(), "h", &paths);
    match load_dataset(&m).unwrap_err() {
        IngestError::HeterogeneousSize { volume_id, path, expected, actual } => {
            assert_eq!(volume_id, "h");
            assert!(path.ends_with("h/2.png"));
            assert_eq!((expected, actual), ((32, 32), (32, 48)));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn volumes_may_differ_in_length() {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = Vec::new();
    for (id, n) in [("short", 19), ("long", 61)] {
        let paths: Vec<String> = (0..n).map(|b| format!("{id}/{b:02}.png")).collect();
        for p in &paths {
            write_png(&dir.path().join(p), 16, 24, |x, _| x as u8);
        }
        entries.push(json!({"volume_id": id, "site_id": "s", "label": "NORMAL", "bscan_paths": paths}));
    }
    let path = dir.path().join("m.json");
    fs::write(&path, volume_manifest(json!(entries))).unwrap();
    let m = parse_manifest(&path).unwrap();
    let vols = load_dataset(&m).unwrap();
    assert_eq!(vols[0].bscans().len(), 19);
    assert_eq!(vols[1].bscans().len(), 61);
}

#[test]
fn undecodable_image_is_a_decode_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("d")).unwrap();
    fs::write(dir.path().join("d/0.png"), b"not an image").unwrap();
    let m = single_entry(dir.path(), "d", &["d/0.png".to_string()]);
    assert!(matches!(load_dataset(&m), Err(IngestError::DecodeError { path, .. }) if path.ends_with("d/0.png")));
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn phantom_generation_is_byte_reproducible() {
    let config = PhantomConfig {
        n_volumes_per_class: 2,
        bscans_per_volume: 3,
        ungradable_fraction: 0.25,
        site_profile: SiteProfile::Noisy,
        seed: 7,
        ..Default::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_phantom_dataset(&config, a.path()).unwrap();
    generate_phantom_dataset(&config, b.path()).unwrap();
    let ta = tree(a.path());
    assert_eq!(ta.len(), 8 * 3 + 2);
    assert_eq!(ta, tree(b.path()));

    let c = tempfile::tempdir().unwrap();
    generate_phantom_dataset(&PhantomConfig { seed: 8, ..config }, c.path()).unwrap();
    assert_ne!(ta, tree(c.path()));
}

#[test]
fn generated_dataset_round_trips() {
    let config = PhantomConfig { n_volumes_per_class: 2, bscans_per_volume: 4, ungradable_fraction: 0.5, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let written = generate_phantom_dataset(&config, dir.path()).unwrap();
    let parsed = parse_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(parsed.entries, written.entries);
    assert_eq!(parsed.dataset_id, config.dataset_id());

    let cohort = synthesize_cohort(&config).unwrap();
    let loaded = load_dataset(&parsed).unwrap();
    for (pv, v) in cohort.iter().zip(&loaded) {
        assert_eq!(pv.volume.volume_id(), v.volume_id());
        assert_eq!(pv.volume.label(), v.label());
        for (x, y) in pv.volume.bscans().iter().zip(v.bscans()) {
            assert_eq!(x.pixels(), y.pixels());
        }
    }

    let truth = read_truth(&dir.path().join(TRUTH_FILE)).unwrap();
    let ungradable = parsed
        .entries
        .iter()
        .flat_map(|e| &e.bscan_paths)
        .filter(|p| !truth_for(&truth, p).unwrap().gradable)
        .count();
    assert_eq!(ungradable, config.ungradable_count());
    assert_eq!(ungradable, 16);
}

#[test]
fn site_profiles_change_appearance() {
    let clean = PhantomConfig { n_volumes_per_class: 1, bscans_per_volume: 2, ..Default::default() };
    let noisy = PhantomConfig { site_profile: SiteProfile::Noisy, ..clean.clone() };
    let a = synthesize_cohort(&clean).unwrap();
    let b = synthesize_cohort(&noisy).unwrap();
    let mut diff = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in x.volume.bscans().iter().zip(y.volume.bscans()) {
            for (&u, &v) in p.pixels().iter().zip(q.pixels()) {
                diff += (f64::from(u) - f64::from(v)).abs();
                n += 1;
            }
        }
    }
    assert!(diff / n as f64 > 0.0);
}
