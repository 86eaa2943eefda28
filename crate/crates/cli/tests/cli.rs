use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn qrng(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrng"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let o = qrng(args, dir);
    assert!(
        o.status.success(),
        "qrng {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Parses the `variance X` figure from `simulate` output.
fn printed_variance(stdout: &str) -> f64 {
    let tail = stdout.split("variance ").nth(1).expect("variance printed");
    tail.split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn simulate_file_size_and_determinism() {
    let d = tempfile::tempdir().unwrap();
    let n = 1_000_000;
    let ns = n.to_string();
    for name in ["a.qrs", "b.qrs"] {
        ok(&["simulate", "--mode", "homodyne", "--count", &ns, "--seed", "7", "--out", name], d.path());
    }
    ok(&["simulate", "--mode", "homodyne", "--count", &ns, "--seed", "8", "--out", "c.qrs"], d.path());
    let a = std::fs::read(d.path().join("a.qrs")).unwrap();
    let b = std::fs::read(d.path().join("b.qrs")).unwrap();
    let c = std::fs::read(d.path().join("c.qrs")).unwrap();
    assert_eq!(a.len(), 24 + n);
    assert_eq!(&a[..4], b"QRS1");
    assert_eq!(a, b);
    assert_ne!(a, c);

    let side = read_json(d.path().join("a.qrs.prov.json"));
    assert_eq!(side["command"], "simulate");
    assert_eq!(side["tool"], "qrng");
    assert_eq!(side["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(side["config_hash"], read_json(d.path().join("b.qrs.prov.json"))["config_hash"]);
}

#[test]
fn dark_variance_below_homodyne() {
    let d = tempfile::tempdir().unwrap();
    let h = ok(&["simulate", "--mode", "homodyne", "--count", "200000", "--seed", "1", "--out", "h.qrs"], d.path());
    let k = ok(&["simulate", "--mode", "dark", "--count", "200000", "--seed", "1", "--out", "d.qrs"], d.path());
    assert!(printed_variance(&k) < printed_variance(&h));
}

fn ideal_config(dir: &Path) -> PathBuf {
    ok(&["init-config", "--out", "ref.json"], dir);
    let mut cfg = read_json(dir.join("ref.json"));
    // Flat detector at the 8-bit optimal gain, excess noise far below one LSB.
    cfg["detector"] = serde_json::json!({
        "vacuum_gain": 52.6967,
        "detector_response": { "kind": "flat" },
        "clearance_dc_db": 200.0,
        "clearance_shape": { "kind": "flat" },
        "sample_rate_hz": 20e9
    });
    let p = dir.join("ideal.json");
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn ideal_flat_pipeline_reaches_adc_limit() {
    let d = tempfile::tempdir().unwrap();
    let cfg = ideal_config(d.path());
    let cfg = cfg.to_str().unwrap();
    ok(&["simulate", "--config", cfg, "--mode", "homodyne", "--count", "1000000", "--seed", "3", "--out", "h.qrs"], d.path());
    ok(&["simulate", "--config", cfg, "--mode", "dark", "--count", "1000000", "--seed", "4", "--out", "d.qrs"], d.path());
    ok(&["entropy", "--signal", "h.qrs", "--dark", "d.qrs", "--out", "r.json"], d.path());
    let r = read_json(d.path().join("r.json"));
    let h = r["report"]["h_min_bits"].as_f64().unwrap();
    let rate = r["report"]["rate_bps"].as_f64().unwrap() / 1e9;
    assert!((h - 7.04).abs() <= 0.1, "H_min {h}");
    assert!((rate - 138.75).abs() <= 2.0, "rate {rate} Gbps");
    assert_eq!(r["run"]["inputs"].as_array().unwrap().len(), 2);
    assert!(r["run"]["config_hash"].is_string());
}

#[test]
fn report_matches_shipped_schema() {
    let d = tempfile::tempdir().unwrap();
    let cfg = ideal_config(d.path());
    let cfg = cfg.to_str().unwrap();
    ok(&["simulate", "--config", cfg, "--mode", "homodyne", "--count", "100000", "--seed", "3", "--out", "h.qrs"], d.path());
    ok(&["simulate", "--config", cfg, "--mode", "dark", "--count", "100000", "--seed", "4", "--out", "d.qrs"], d.path());
    ok(&["entropy", "--signal", "h.qrs", "--dark", "d.qrs", "--out", "r.json"], d.path());
    let report = read_json(d.path().join("r.json"));
    let schema = read_json(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/entropy-report.schema.json"));

    // Required keys and JSON types, recursively; enough to catch drift
    // between the serialized structs and the document.
    fn check(value: &Value, schema: &Value, path: &str) {
        let ty = |t: &str| match t {
            "object" => value.is_object(),
            "number" => value.is_number(),
            "integer" => value.is_u64() || value.is_i64(),
            "string" => value.is_string(),
            "boolean" => value.is_boolean(),
            "array" => value.is_array(),
            "null" => value.is_null(),
            other => panic!("unknown schema type {other}"),
        };
        match &schema["type"] {
            Value::String(t) => assert!(ty(t), "{path}: expected {t}, got {value}"),
            Value::Array(ts) => assert!(ts.iter().any(|t| ty(t.as_str().unwrap())), "{path}: {value}"),
            _ => {}
        }
        if let Some(req) = schema["required"].as_array() {
            for k in req {
                let k = k.as_str().unwrap();
                assert!(value.get(k).is_some(), "{path}: missing {k}");
            }
        }
        if let (Some(props), Some(obj)) = (schema["properties"].as_object(), value.as_object()) {
            for (k, sub) in props {
                if let Some(v) = obj.get(k) {
                    check(v, sub, &format!("{path}.{k}"));
                }
            }
            if schema["additionalProperties"] == Value::Bool(false) {
                for k in obj.keys() {
                    assert!(props.contains_key(k), "{path}: undocumented key {k}");
                }
            }
        }
        if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
            for (i, v) in arr.iter().enumerate() {
                check(v, items, &format!("{path}[{i}]"));
            }
        }
    }
    check(&report, &schema, "$");
}

#[test]
fn equalization_raises_rate() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(&["simulate", "--mode", "homodyne", "--count", "2000000", "--seed", "1", "--out", "h.qrs"], p);
    ok(&["simulate", "--mode", "dark", "--count", "2000000", "--seed", "2", "--out", "d.qrs"], p);
    ok(&["simulate", "--mode", "homodyne", "--count", "2000000", "--seed", "101", "--out", "design.qrs"], p);
    ok(&["entropy", "--signal", "h.qrs", "--dark", "d.qrs", "--out", "pre.json"], p);
    ok(&["design-eq", "--signal", "design.qrs", "--taps", "201", "--out", "eq.json"], p);
    ok(&["equalize", "--input", "h.qrs", "--filter", "eq.json", "--out", "he.qrs"], p);
    ok(&["equalize", "--input", "d.qrs", "--filter", "eq.json", "--out", "de.qrs"], p);
    ok(&["entropy", "--signal", "he.qrs", "--dark", "de.qrs", "--out", "post.json"], p);
    let rate = |f: &str| read_json(p.join(f))["report"]["rate_bps"].as_f64().unwrap();
    assert!(rate("post.json") > rate("pre.json"), "{} vs {}", rate("post.json"), rate("pre.json"));

    // Equalized stream keeps its length bookkeeping: 200 edge samples dropped.
    assert_eq!(std::fs::metadata(p.join("he.qrs")).unwrap().len(), 24 + 2_000_000 - 200);

    // Extraction sized by the post-equalization report, then the sanity gates.
    let seed: Vec<u8> = (0..4096u32).map(|i| (i.wrapping_mul(2654435761) >> 13) as u8).collect();
    std::fs::write(p.join("seed.bin"), seed).unwrap();
    ok(&["extract", "--input", "he.qrs", "--report", "post.json", "--seed", "seed.bin", "--out", "bits.bin"], p);
    let r = read_json(p.join("post.json"))["report"].clone();
    let (n, m) = (r["input_block_bits"].as_u64().unwrap(), r["output_block_bits"].as_u64().unwrap());
    let blocks = (2_000_000 - 200) * 8 / n;
    assert_eq!(std::fs::metadata(p.join("bits.bin")).unwrap().len(), (blocks * m).div_ceil(8));
    let side = read_json(p.join("bits.bin.prov.json"));
    assert_eq!(side["inputs"].as_array().unwrap().len(), 3);
    ok(&["stattest", "--input", "bits.bin", "--out", "st.json"], p);
    assert_eq!(read_json(p.join("st.json"))["passed"], Value::Bool(true));
}

#[test]
fn adc_calibration_feeds_entropy() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(&["simulate", "--mode", "sine", "--count", "2000000", "--seed", "5", "--out", "s.qrs"], p);
    ok(&["adc-cal", "--input", "s.qrs", "--min-hits", "1000", "--out", "cal.json", "--csv", "cal.csv"], p);
    let cal = read_json(p.join("cal.json"));
    // Ideal simulated converter: every interior code within a few hundredths of an LSB.
    assert!(cal["max_abs_dnl"].as_f64().unwrap() < 0.05, "{}", cal["max_abs_dnl"]);
    assert_eq!(cal["profile"]["codes"].as_array().unwrap().len(), 256);
    let csv = std::fs::read_to_string(p.join("cal.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 257);

    ok(&["simulate", "--mode", "homodyne", "--count", "500000", "--seed", "1", "--out", "h.qrs"], p);
    ok(&["simulate", "--mode", "dark", "--count", "500000", "--seed", "2", "--out", "d.qrs"], p);
    ok(&["entropy", "--signal", "h.qrs", "--dark", "d.qrs", "--dnl", "cal.json", "--out", "r.json"], p);
    let r = read_json(p.join("r.json"));
    assert_eq!(r["run"]["inputs"].as_array().unwrap().len(), 3);
    assert!(r["report"]["inputs"]["dnl_max"].as_f64().unwrap() >= 0.0);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(&["simulate", "--mode", "homodyne", "--count", "100000", "--seed", "1", "--out", "h.qrs"], p);
    ok(&["simulate", "--mode", "dark", "--count", "100000", "--seed", "2", "--out", "d.qrs"], p);

    let code = |args: &[&str]| qrng(args, p).status.code().unwrap();
    // ε = 1 is outside the domain of the extractor bound.
    assert_eq!(code(&["entropy", "--signal", "h.qrs", "--dark", "d.qrs", "--eps", "1", "--out", "r.json"]), 2);

    let missing = qrng(&["entropy", "--signal", "nope.qrs", "--dark", "d.qrs", "--out", "r.json"], p);
    assert_eq!(missing.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.qrs"));

    let fig = qrng(&["curves", "--figure", "fig9", "--out", "c.csv"], p);
    assert_eq!(fig.status.code(), Some(2));
    let err = String::from_utf8_lossy(&fig.stderr);
    assert!(err.contains("hmin-vs-tc") && err.contains("hmin-vs-clearance"), "{err}");

    std::fs::write(p.join("bad.json"), r#"{"detector": {}, "bogus": 1}"#).unwrap();
    let bad = qrng(&["simulate", "--config", "bad.json", "--mode", "dark", "--count", "10", "--seed", "1", "--out", "x.qrs"], p);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bad.json"));

    std::fs::write(p.join("junk.qrs"), b"QRS2 not a sample file at all").unwrap();
    assert_eq!(code(&["psd", "--input", "junk.qrs", "--out", "p.csv"]), 4);

    // Short and biased input: the sanity gates reject it.
    std::fs::write(p.join("zeros.bin"), vec![0u8; 200_000]).unwrap();
    assert_eq!(code(&["stattest", "--input", "zeros.bin"]), 1);
    std::fs::write(p.join("short.bin"), vec![0u8; 100]).unwrap();
    assert_eq!(code(&["stattest", "--input", "short.bin"]), 2);

    assert_eq!(code(&["selftest", "--only", "11"]), 2);
}

#[test]
fn curves_and_spectra_are_csv_with_provenance() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(&["curves", "--figure", "hmin-vs-clearance", "--out", "c.csv"], p);
    let text = std::fs::read_to_string(p.join("c.csv")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("# config_sha256: ")));
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.split(',').count() > 1);

    ok(&["simulate", "--mode", "homodyne", "--count", "100000", "--seed", "1", "--out", "h.qrs"], p);
    ok(&["simulate", "--mode", "dark", "--count", "100000", "--seed", "2", "--out", "d.qrs"], p);
    ok(&["psd", "--input", "h.qrs", "--segment", "1024", "--out", "psd.csv"], p);
    let psd = std::fs::read_to_string(p.join("psd.csv")).unwrap();
    assert!(psd.contains("# input: h.qrs sha256="));
    assert_eq!(psd.lines().filter(|l| !l.starts_with('#')).count(), 1 + 513);
    ok(&["clearance", "--signal", "h.qrs", "--dark", "d.qrs", "--segment", "1024", "--out", "c2.csv"], p);
    let c = std::fs::read_to_string(p.join("c2.csv")).unwrap();
    assert!(c.contains("freq_hz,clearance_linear,clearance_db,floored"));
}

#[test]
fn selftest_subset_passes() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(&["selftest", "--only", "1,2,9"], d.path());
    assert_eq!(out.lines().filter(|l| l.contains("[PASS]")).count(), 3, "{out}");
}
