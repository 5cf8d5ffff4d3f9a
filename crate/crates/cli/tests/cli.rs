//! Exit codes and report contents of the binary on small inputs.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn config(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Shrinks every grid in a config so the runs stay quick.
fn small_grid(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for (k, child) in map.iter_mut() {
                if k == "grid" {
                    *child = json!({"nx": 16, "ns1": 9, "ns2": 9});
                } else {
                    small_grid(child);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(small_grid),
        _ => {}
    }
}

struct Run {
    output: Output,
    out: PathBuf,
    _dir: tempfile::TempDir,
}

impl Run {
    fn code(&self) -> i32 {
        self.output.status.code().unwrap()
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&std::fs::read_to_string(self.out.join(name)).unwrap()).unwrap()
    }
}

fn run(command: &str, cfg: &Value) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    let out = dir.path().join("out");
    let output = Command::new(env!("CARGO_BIN_EXE_stratwave"))
        .arg(command)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    Run {
        output,
        out,
        _dir: dir,
    }
}

fn warnings(doc: &Value) -> Vec<String> {
    doc["warnings"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| w.as_str().unwrap().to_string())
        .collect()
}

#[test]
fn laminar_reports_the_bernoulli_constant() {
    let mut cfg = config("lam1_laminar.json");
    small_grid(&mut cfg);
    let r = run("laminar", &cfg);
    assert_eq!(r.code(), 0, "{}", String::from_utf8_lossy(&r.output.stderr));
    let doc = r.json("laminar.json");
    assert!((doc["flow"]["Q1"].as_f64().unwrap() - 1.0).abs() <= 1e-9);
    assert!(r.out.join("profile.csv").exists());
    assert!(r.out.join("state.json").exists());
    assert!(r.out.join("run.meta.json").exists());
}

#[test]
fn missing_depth_is_a_config_error() {
    let mut cfg = config("lam1_laminar.json");
    cfg["flow"].as_object_mut().unwrap().remove("d");
    assert_eq!(run("laminar", &cfg).code(), 2);
}

#[test]
fn zero_fluxes_run_with_a_stagnation_warning() {
    let mut cfg = config("lam1_laminar.json");
    small_grid(&mut cfg);
    cfg["flow"]["p1"] = json!(0.0);
    cfg["flow"]["p2"] = json!(0.0);
    let r = run("laminar", &cfg);
    assert_eq!(r.code(), 0, "{}", String::from_utf8_lossy(&r.output.stderr));
    let w = warnings(&r.json("laminar.json"));
    assert!(w.iter().any(|w| w.starts_with("stagnation")), "{w:?}");
}

#[test]
fn empty_eps_list_is_a_config_error() {
    let mut cfg = config("lam1_audit_grad.json");
    cfg["eps"] = json!([]);
    assert_eq!(run("audit-grad", &cfg).code(), 2);
}

#[test]
fn empty_basis_is_a_config_error() {
    let mut cfg = config("lam1_stability.json");
    cfg["options"]["basis"]["vertical_modes"] = json!(0);
    assert_eq!(run("stability", &cfg).code(), 2);
}

#[test]
fn config_for_another_command_is_rejected() {
    let cfg = config("lam1_audit_grad.json");
    let r = run("laminar", &cfg);
    assert_eq!(r.code(), 2);
    assert!(!r.out.join("run.meta.json").exists());
}

#[test]
fn unreadable_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_stratwave"))
        .args(["residual", "--config"])
        .arg(dir.path().join("absent.json"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

/// Writes a LAM-1 state with a bump added to the upper stream function and
/// returns a state source pointing at it.
fn corrupted_state(dir: &Path) -> Value {
    let mut cfg = config("lam1_laminar.json");
    small_grid(&mut cfg);
    let r = run("laminar", &cfg);
    assert_eq!(r.code(), 0);
    let mut state = r.json("state.json");
    let nx = state["grid"]["nx"].as_u64().unwrap() as usize;
    let ns = state["grid"]["ns2"].as_u64().unwrap() as usize;
    let psi2 = state["psi2"].as_array_mut().unwrap();
    for j in 0..nx {
        let x = 2.0 * PI * j as f64 / nx as f64;
        for k in 0..ns {
            let s = k as f64 / (ns - 1) as f64;
            let v = psi2[j * ns + k].as_f64().unwrap() + 0.1 * x.sin() * s * (1.0 - s);
            psi2[j * ns + k] = json!(v);
        }
    }
    let path = dir.join("corrupted.json");
    std::fs::write(&path, serde_json::to_string(&state).unwrap()).unwrap();
    json!({"file": {"path": path, "profiles": cfg["flow"]["profiles"].clone()}})
}

#[test]
fn corrupted_state_audits_as_neither() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("lam1_audit_grad.json");
    cfg["state"] = corrupted_state(dir.path());
    cfg["trials"] = json!(5);
    let r = run("audit-grad", &cfg);
    assert_eq!(r.code(), 0, "{}", String::from_utf8_lossy(&r.output.stderr));
    assert_eq!(r.json("audit.json")["verdict"], "NEITHER");
}

#[test]
fn corrupted_state_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("lam1_stability.json");
    cfg["state"] = corrupted_state(dir.path());
    let r = run("stability", &cfg);
    assert_eq!(r.code(), 0, "{}", String::from_utf8_lossy(&r.output.stderr));
    assert_eq!(r.json("verdict.json")["verdict"], "INCONCLUSIVE");
}

#[test]
fn linear_stream_function_warns_of_a_degenerate_map() {
    let mut cfg = config("cubic_manufacture.json");
    small_grid(&mut cfg);
    let line = json!({"kind": "polynomial", "coefficients": [0.0, -1.0]});
    cfg["spec"]["psi"] = json!([line.clone(), line]);
    let r = run("manufacture", &cfg);
    assert_eq!(r.code(), 0, "{}", String::from_utf8_lossy(&r.output.stderr));
    let w = warnings(&r.json("manufacture.json"));
    assert!(w.iter().any(|w| w.starts_with("degenerate F")), "{w:?}");
}

#[test]
fn non_monotone_stream_function_is_a_numerical_failure() {
    let mut cfg = config("cubic_manufacture.json");
    small_grid(&mut cfg);
    let bent = json!({"kind": "polynomial", "coefficients": [0.0, 1.0, 0.0, -10.0]});
    cfg["spec"]["psi"] = json!([bent.clone(), bent]);
    assert_eq!(run("manufacture", &cfg).code(), 3);
}

#[test]
fn residual_of_the_laminar_state_is_small() {
    let mut cfg = config("lam1_residual.json");
    small_grid(&mut cfg);
    let r = run("residual", &cfg);
    assert_eq!(r.code(), 0, "{}", String::from_utf8_lossy(&r.output.stderr));
    assert!(r.out.join("residual.csv").exists());
    let text = std::fs::read_to_string(r.out.join("residual.json")).unwrap();
    assert!(text.contains("interior"));
}
