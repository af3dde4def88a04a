use std::path::Path;
use std::process::{Command, Output};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn ebc(dir: &Path, args: &[&str]) -> Run {
    let Output { status, stdout, stderr } = Command::new(env!("CARGO_BIN_EXE_ebc"))
        .current_dir(dir)
        .args(["--workspace", "ws"])
        .args(args)
        .output()
        .unwrap();
    Run {
        code: status.code().unwrap(),
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

fn demo_file(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/assets/demos")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ebc(dir.path(), &["frobnicate"]).code, 2);
    assert_eq!(ebc(dir.path(), &["generate"]).code, 2);
    assert_eq!(ebc(dir.path(), &["generate", "--demo", "x", "--backend", "oracle"]).code, 2);
    assert_eq!(ebc(dir.path(), &["replay", "--function", "f", "--args", "novalue"]).code, 2);
}

#[test]
fn unknown_demo_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let run = ebc(dir.path(), &["generate", "--demo", "missing"]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("unknown demo id"), "{}", run.stderr);
}

#[test]
fn apps_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let run = ebc(dir.path(), &["apps", "list"]);
    assert_eq!(run.code, 0);
    let ids: Vec<&str> = run.stdout.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ids, ["coffeeshop", "fastfood", "trips"]);
}

#[test]
fn record_generate_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = ebc(dir.path(), &["record", "--app", "coffeeshop", "--script", &demo_file("coffeeshop_order_americano.json")]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.stdout.trim(), "recorded coffeeshop_order_americano (4 steps)");

    let run = ebc(dir.path(), &["generate", "--demo", "coffeeshop_order_americano", "--backend", "stub"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.starts_with("registered order_drink("));
    assert!(run.stdout.contains("fn order_drink(drink, quantity) {"));

    let run = ebc(dir.path(), &["replay", "--function", "order_drink", "--args", "drink=Latte", "quantity=2"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.starts_with("success: order_drink(drink=Latte, quantity=2)"), "{}", run.stdout);
    assert!(run.stdout.contains(r#"cart={"Latte":2}"#));

    let run = ebc(dir.path(), &["replay", "--function", "order_drink", "--args", "drink=Tea"]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("must be one of"));

    let run = ebc(dir.path(), &["run", "--task", "Order 3 Mochas"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.contains("plan: order_drink(drink=Mocha, quantity=3)"));
}

#[test]
fn record_rejects_an_event_file_for_another_app() {
    let dir = tempfile::tempdir().unwrap();
    let run = ebc(dir.path(), &["record", "--app", "fastfood", "--script", &demo_file("coffeeshop_order_americano.json")]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("not \"fastfood\""), "{}", run.stderr);
}

#[test]
fn functions_can_be_listed_shown_and_deleted() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ebc(dir.path(), &["generate", "--demo", "fastfood_checkout_bag"]).code, 0);
    let list = ebc(dir.path(), &["functions", "list"]);
    assert!(list.stdout.starts_with("check_out_bag()\tfastfood"), "{}", list.stdout);
    let show = ebc(dir.path(), &["functions", "show", "check_out_bag"]);
    assert!(show.stdout.starts_with("#! "), "{}", show.stdout);
    assert!(show.stdout.contains("fn check_out_bag() {"));
    assert_eq!(ebc(dir.path(), &["functions", "delete", "check_out_bag"]).code, 0);
    assert_eq!(ebc(dir.path(), &["functions", "list"]).stdout, "");
    assert_eq!(ebc(dir.path(), &["functions", "delete", "check_out_bag"]).code, 1);
}

#[test]
fn eval_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let suite = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets/suites/coffeeshop.json");
    let run = ebc(dir.path(), &["eval", "--suite", suite.to_str().unwrap(), "--trials", "10", "--out", "out"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["overall"]["task_sr"], 1.0);
    assert_eq!(report["overall"]["runs"], 300);
    assert!(dir.path().join("out/report.txt").exists());

    let run = ebc(dir.path(), &["eval", "--suite", "fastfood", "--trials", "2"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(dir.path().join("ws/reports/fastfood/report.json").exists());
}

#[test]
fn config_file_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ebc.toml"), "[interpret]\nbudget = 2\n").unwrap();
    assert_eq!(ebc(dir.path(), &["generate", "--demo", "coffeeshop_order_americano"]).code, 0);
    let run = ebc(dir.path(), &["replay", "--function", "order_drink", "--args", "drink=Latte"]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("budget of 2"), "{}", run.stderr);

    std::fs::write(dir.path().join("ebc.toml"), "bogus = 1\n").unwrap();
    let run = ebc(dir.path(), &["apps", "list"]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("invalid configuration"));
}

#[test]
fn map_resolves_a_selector_on_a_hierarchy_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("screen.xml"),
        r#"<hierarchy screen="menu"><node class="android.widget.FrameLayout" bounds="[0,0][1080,1920]">
  <node class="android.widget.Button" text="Cancel" resource-id="btn_cancel" clickable="true" bounds="[0,0][540,100]"/>
  <node class="android.widget.Button" text="Save" resource-id="btn_save" clickable="true" bounds="[540,0][1080,100]"/>
</node></hierarchy>"#,
    )
    .unwrap();
    let run = ebc(dir.path(), &["map", "--screen", "screen.xml", "--text", "Save"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.starts_with("element 1 "), "{}", run.stdout);
    let run = ebc(dir.path(), &["map", "--screen", "screen.xml", "--text", "Delete", "--id", "btn_delete"]);
    assert_eq!(run.code, 1);
}
