//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when
//! any criterion fails. Run with `cargo test -p ebc-core --test acceptance`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ebc_core::bundled;
use ebc_core::codegen::{
    compress_loops, deterministic_generate, expand, generate, ApiSpec, FaultConfig, GeneratedScript, LlmConfig,
};
use ebc_core::dsl::{
    check, interpret, parse_script, parse_script_file, pretty_print, render_script_file, ActionScript, Arg,
    CheckLimits, DiagnosticKind, InterpretConfig, RunError, SelectorLit, Stmt, StmtKind, TraceEntry, Value,
};
use ebc_core::encoder::{
    describe_visual, encode, record_script, text_id_matches, Demonstration, EncodedDemo, EncodedStep, VisualDescriberConfig,
};
use ebc_core::eval::{
    evaluate_suite, load_suite, run_task, task_cr, task_sr, EvalConfig, LibrarySource, RunRecord, Suite, TaskSpec,
};
use ebc_core::fusion::{FunctionLibrary, LearnedFunction};
use ebc_core::mapping::{map_step, MappingConfig, Selector};
use ebc_core::sim::{reset, Action, ActionKind, AppSpec, ScrollDirection, SimState};
use ebc_core::ui::{parse_ui_xml, surrounding_context_at, UiTree};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn recorded(demo_id: &str) -> (Arc<AppSpec>, Demonstration, SimState) {
    let script = bundled::demo_script(demo_id).expect("bundled demo");
    let app = bundled::app(&script.app_id).expect("bundled app");
    let (demo, end) = record_script(&app, &script).expect("demo records");
    (app, demo, end)
}

fn encoded(demo: &Demonstration) -> EncodedDemo {
    encode(demo, &VisualDescriberConfig::default()).expect("demo encodes")
}

fn generated(demo_id: &str) -> (Arc<AppSpec>, GeneratedScript) {
    let (app, demo, _) = recorded(demo_id);
    let g = generate(&encoded(&demo), &ApiSpec::default(), &app, &LlmConfig::default()).expect("generation");
    (app, g)
}

fn demo_ids() -> Vec<String> {
    bundled::demo_scripts().iter().map(|d| d.resolved_id()).collect()
}

fn default_args(g: &GeneratedScript) -> BTreeMap<String, String> {
    g.params.iter().map(|p| (p.name.clone(), p.default_value.clone())).collect()
}

fn replay_fidelity() -> Verdict {
    let start = Instant::now();
    let ids = demo_ids();
    let apps: std::collections::BTreeSet<String> = bundled::demo_scripts().into_iter().map(|d| d.app_id).collect();
    let mut failures = Vec::new();
    for id in &ids {
        let (app, demo, end) = recorded(id);
        let text = deterministic_generate(&encoded(&demo), &app);
        let ast = match parse_script(&text) {
            Ok(ast) => ast,
            Err(e) => {
                failures.push(format!("{id}: {e}"));
                continue;
            }
        };
        let (_, g) = generated(id);
        let f = &ast.functions[0];
        match interpret(&ast, &f.name, &default_args(&g), reset(&app), &InterpretConfig::default()) {
            Ok(trace) if trace.final_state.same_outcome(&end) => {}
            Ok(_) => failures.push(format!("{id}: final state differs")),
            Err(e) => failures.push(format!("{id}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    verdict(
        failures.is_empty() && ids.len() >= 6 && apps.len() == 3 && elapsed < Duration::from_secs(5),
        format!(
            "{}/{} demos across {} apps reproduce their final state in {:.2}s{}",
            ids.len() - failures.len(),
            ids.len(),
            apps.len(),
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!(" — {}", failures.join("; ")) }
        ),
    )
}

fn contains_repeat(body: &[Stmt]) -> bool {
    body.iter().any(|s| match &s.kind {
        StmtKind::Repeat { .. } => true,
        StmtKind::If { then_body, else_body, .. } => contains_repeat(then_body) || contains_repeat(else_body),
        _ => false,
    })
}

fn parameterized_generalization() -> Verdict {
    let (app, g) = generated("coffeeshop_order_americano");
    let mut lib = FunctionLibrary::new();
    lib.register(LearnedFunction::from_generated(&g, "deterministic_stub"));
    let suite = Suite {
        suite_id: "generalization".into(),
        app_id: "coffeeshop".into(),
        library_demos: vec![],
        trials: 10,
        tasks: vec![
            task("latte", "Order two Lattes", "cart_contains(item=Latte, qty=2)", 4),
            task("mocha", "Order 10 Mochas", "cart_contains(item=Mocha, qty=10)", 5),
        ],
    };
    let report = evaluate_suite(&suite, LibrarySource::Fixed(&lib), &bundled::app, &EvalConfig::default()).unwrap();
    let srs: Vec<(String, f64, usize)> = report
        .tasks
        .iter()
        .map(|t| (t.task_id.clone(), t.metrics.as_ref().map_or(0.0, |m| m.task_sr), t.runs.len()))
        .collect();
    let mocha = run_task(&suite.tasks[1], 0, &lib, &app, &EvalConfig::default());
    let scrolled_down = mocha.trace.iter().any(|e| e.action == Action::Scroll { direction: ScrollDirection::Down });
    let has_repeat = contains_repeat(&g.ast.functions[0].body);
    verdict(
        srs.iter().all(|(_, sr, n)| *sr == 1.0 && *n == 10) && has_repeat && scrolled_down,
        format!(
            "learned {} from one demonstration; {}; repeat loop in script: {has_repeat}, Mocha run scrolls through it: {scrolled_down}",
            g.ast.functions[0].name,
            srs.iter().map(|(t, sr, n)| format!("{t} SR={sr:.1} over {n} trials")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn task(id: &str, instruction: &str, goal: &str, steps: usize) -> TaskSpec {
    TaskSpec {
        task_id: id.into(),
        app_id: "coffeeshop".into(),
        instruction: instruction.into(),
        goal: goal.into(),
        reference_total_steps: steps,
        category: "new_params".into(),
        trials: None,
    }
}

fn loop_compression_soundness() -> Verdict {
    let alphabet: Vec<EncodedStep> = ["Latte", "Mocha", "Cart"]
        .iter()
        .map(|t| EncodedStep {
            action_type: ActionKind::Click,
            screen: "menu".into(),
            text: t.to_string(),
            id: format!("id_{t}"),
            visual: String::new(),
            exposed: vec![],
            surrounding: vec![],
            typed_text: None,
            scroll_direction: None,
        })
        .collect();
    let mut checked = 0usize;
    let mut failures = 0usize;
    for len in 1..=6u32 {
        for code in 0..3usize.pow(len) {
            let mut c = code;
            let seq: Vec<EncodedStep> = (0..len)
                .map(|_| {
                    let s = alphabet[c % 3].clone();
                    c /= 3;
                    s
                })
                .collect();
            checked += 1;
            if expand(&compress_loops(&seq)) != seq {
                failures += 1;
            }
        }
    }
    verdict(
        failures == 0 && checked == 1092,
        format!("{checked} sequences of length 1..=6 over 3 symbols, {failures} failures"),
    )
}

struct Case {
    tree: UiTree,
    target: Vec<usize>,
    five_add: bool,
}

fn row_xml(children: &[String]) -> String {
    format!("<node class=\"android.widget.LinearLayout\">{}</node>", children.join(""))
}

fn text_node(text: &str) -> String {
    format!("<node class=\"android.widget.TextView\" text=\"{text}\"/>")
}

fn screen_xml(screen: &str, rows: &[String]) -> String {
    format!(
        "<hierarchy screen=\"{screen}\"><node class=\"android.widget.FrameLayout\" bounds=\"[0,0][1080,1920]\">{}<node class=\"android.widget.LinearLayout\" resource-id=\"rows\">{}</node></node></hierarchy>",
        text_node(&format!("Screen {screen}")),
        rows.join("")
    )
}

/// Path of the first node carrying `marker` as its annotation or text.
fn find(tree: &UiTree, marker: &str) -> Vec<usize> {
    tree.walk()
        .into_iter()
        .find(|(_, n)| n.annotation == marker || n.text == marker)
        .map(|(p, _)| p)
        .expect("marker present")
}

/// Sixty screens: twenty with five identical "Add" buttons, ten with
/// text-less icon buttons sharing an id, ten with repeated "Remove" buttons
/// told apart only by their rows, and twenty with a unique target.
fn ambiguity_corpus() -> Vec<Case> {
    const NAMES: [&str; 10] = ["Latte", "Mocha", "Chai", "Matcha", "Espresso", "Cortado", "Lungo", "Ristretto", "Affogato", "Doppio"];
    const ICONS: [&str; 4] = ["blue share icon", "red heart icon", "grey trash icon", "yellow star icon"];
    let mut cases = Vec::new();
    for k in 0..20 {
        let names: Vec<&str> = (0..5).map(|r| NAMES[(k + r * 3) % 10]).collect();
        let rows: Vec<String> = names
            .iter()
            .enumerate()
            .map(|(r, name)| {
                row_xml(&[
                    text_node(name),
                    text_node(&format!("${}.{}5", 3 + r, k % 10)),
                    format!("<node class=\"android.widget.Button\" text=\"Add\" resource-id=\"btn_add\" clickable=\"true\" annotation=\"green add button next to {name}\"/>"),
                ])
            })
            .collect();
        let tree = parse_ui_xml(&screen_xml(&format!("five_add_{k}"), &rows)).unwrap();
        let target = find(&tree, &format!("green add button next to {}", names[k % 5]));
        cases.push(Case { tree, target, five_add: true });
    }
    for k in 0..10 {
        let rows: Vec<String> = ICONS
            .iter()
            .map(|icon| format!("<node class=\"android.widget.ImageButton\" resource-id=\"btn_icon\" clickable=\"true\" annotation=\"{icon}\"/>"))
            .collect();
        let tree = parse_ui_xml(&screen_xml(&format!("icons_{k}"), &[row_xml(&rows)])).unwrap();
        let target = find(&tree, ICONS[k % 4]);
        cases.push(Case { tree, target, five_add: false });
    }
    for k in 0..10 {
        let rows: Vec<String> = (0..3)
            .map(|r| {
                row_xml(&[
                    text_node(NAMES[(k + r) % 10]),
                    text_node(&format!("Qty: {}", r + 1)),
                    "<node class=\"android.widget.Button\" text=\"Remove\" resource-id=\"btn_remove\" clickable=\"true\"/>".to_string(),
                ])
            })
            .collect();
        let tree = parse_ui_xml(&screen_xml(&format!("remove_{k}"), &rows)).unwrap();
        let removes: Vec<Vec<usize>> = tree.walk().into_iter().filter(|(_, n)| n.text == "Remove").map(|(p, _)| p).collect();
        let target = removes[k % 3].clone();
        cases.push(Case { tree, target, five_add: false });
    }
    for k in 0..20 {
        let buttons: Vec<String> = ["Save", "Cancel", "Share", "Delete", "Settings", "Help"]
            .iter()
            .map(|b| format!("<node class=\"android.widget.Button\" text=\"{b}\" resource-id=\"btn_{}\" clickable=\"true\"/>", b.to_lowercase()))
            .collect();
        let tree = parse_ui_xml(&screen_xml(&format!("unique_{k}"), &[row_xml(&buttons)])).unwrap();
        let target = find(&tree, ["Save", "Cancel", "Share", "Delete", "Settings", "Help"][k % 6]);
        cases.push(Case { tree, target, five_add: false });
    }
    cases
}

/// The selector the encoder would record for the target.
fn recorded_selector(tree: &UiTree, path: &[usize]) -> Selector {
    let node = tree.node_at(path).unwrap();
    let visual = if text_id_matches(tree, &node.text, &node.resource_id) == 1 {
        String::new()
    } else {
        describe_visual(tree, path, &VisualDescriberConfig::default()).unwrap()
    };
    Selector {
        text: node.text.clone(),
        id: node.resource_id.clone(),
        visual,
        surrounding: surrounding_context_at(tree, path, 2).unwrap(),
    }
}

fn mapping_cascade() -> Verdict {
    let corpus = ambiguity_corpus();
    let five_add = corpus.iter().filter(|c| c.five_add).count();
    let correct = |config: &MappingConfig| {
        corpus
            .iter()
            .filter(|c| {
                map_step(&recorded_selector(&c.tree, &c.target), &c.tree, config).is_ok_and(|m| m.path == c.target)
            })
            .count()
    };
    let full = correct(&MappingConfig::default());
    let reduced = correct(&MappingConfig::text_id_only());
    verdict(
        corpus.len() >= 50 && five_add >= 10 && full == corpus.len() && reduced < full,
        format!(
            "{} screens ({five_add} with five identical Add buttons): full config {full}/{n}, text+id only {reduced}/{n}",
            corpus.len(),
            n = corpus.len()
        ),
    )
}

fn self_mapping() -> Verdict {
    let mut total = 0;
    let mut ok = 0;
    let mut misses = Vec::new();
    for id in demo_ids() {
        let (_, demo, _) = recorded(&id);
        let enc = encoded(&demo);
        for (k, (event, step)) in demo.events.iter().zip(&enc.steps).enumerate() {
            let Some(path) = event.element_path() else { continue };
            total += 1;
            match map_step(&step.selector(), &event.pre_tree, &MappingConfig::default()) {
                Ok(m) if m.path == path => ok += 1,
                _ => misses.push(format!("{id} step {}", k + 1)),
            }
        }
    }
    verdict(
        ok == total && total > 0,
        format!("{ok}/{total} recorded events map back to their own element{}", if misses.is_empty() { String::new() } else { format!(" — misses: {}", misses.join(", ")) }),
    )
}

fn record(trial: usize, total: usize, success: bool, finished: usize) -> RunRecord {
    RunRecord {
        task_id: "t".into(),
        trial,
        finished_steps: finished,
        total_steps: total,
        success,
        steps_taken: finished,
        plan: vec![],
        trace_ref: format!("t#{trial}"),
        failure: None,
    }
}

fn metric_arithmetic() -> Verdict {
    let cr = task_cr(&record(0, 9, false, 6));
    let cr_ok = (cr - 6.0 / 9.0).abs() <= 1e-9 && format!("{cr:.4}") == "0.6667";
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut pointwise = 0;
    let mut sets_ok = 0;
    for set in 0..100 {
        let records: Vec<RunRecord> = (0..10)
            .map(|i| {
                let total = rng.random_range(1..=20);
                let success = rng.random_bool(0.5);
                let finished = if success { total } else { rng.random_range(0..total) };
                record(set * 10 + i, total, success, finished)
            })
            .collect();
        pointwise += records.iter().filter(|r| r.success == (task_cr(r) == 1.0)).count();
        let mean_cr = records.iter().map(task_cr).sum::<f64>() / records.len() as f64;
        if task_sr(&records).unwrap() <= mean_cr {
            sets_ok += 1;
        }
    }
    let suite = Suite {
        suite_id: "trials".into(),
        app_id: "coffeeshop".into(),
        library_demos: vec!["coffeeshop_order_americano".into()],
        trials: 10,
        tasks: vec![task("latte", "Order a Latte", "cart_contains(item=Latte, qty=1)", 4)],
    };
    let demos = vec![recorded("coffeeshop_order_americano").1];
    let report = evaluate_suite(&suite, LibrarySource::Demos(&demos), &bundled::app, &EvalConfig::default()).unwrap();
    let defaulted: Suite = load_suite(
        r#"{"suite_id": "d", "app_id": "coffeeshop", "tasks": [{"task_id": "x", "app_id": "coffeeshop", "instruction": "Order a Latte", "goal": "cart_contains(item=Latte, qty=1)", "reference_total_steps": 4}]}"#,
    )
    .unwrap();
    let runs = report.tasks[0].runs.len();
    verdict(
        cr_ok && pointwise == 1000 && sets_ok == 100 && runs == 10 && defaulted.trials == 10,
        format!(
            "task_cr(6, 9) = {cr:.10}; success ⇔ CR = 1 on {pointwise}/1000 random records; SR ≤ mean CR on {sets_ok}/100 random sets; {runs} runs for 10 requested trials, default trials {}",
            defaulted.trials
        ),
    )
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scripts")
}

fn dsl_round_trip_and_safety() -> Verdict {
    let mut corpus: Vec<(String, String)> = demo_ids()
        .iter()
        .map(|id| (id.clone(), generated(id).1.raw_text))
        .collect();
    let mut entries: Vec<_> = std::fs::read_dir(fixture_dir()).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for path in entries {
        corpus.push((path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&path).unwrap()));
    }
    let mut failures = Vec::new();
    for (name, text) in &corpus {
        let identical = if text.starts_with("#!") {
            parse_script_file(text).map(|f| render_script_file(&f) == *text)
        } else {
            parse_script(text).map(|ast| pretty_print(&ast) == *text && parse_script(&pretty_print(&ast)).unwrap().structurally_eq(&ast))
        };
        if !matches!(identical, Ok(true)) {
            failures.push(name.clone());
        }
    }
    let violations: [(&str, DiagnosticKind); 5] = [
        ("fn f() {\n  # swipe left\n  swipe(\"left\")\n}\n", DiagnosticKind::UnknownPrimitive),
        ("fn f() {\n  # press enter\n  enter(\"now\")\n}\n", DiagnosticKind::Arity),
        ("fn f() {\n  # click the drink\n  clickAndGetExpose(sel(text=drink))\n}\n", DiagnosticKind::UnboundName),
        ("fn f() {\n  repeat 10000 {\n    # go back\n    back()\n  }\n}\n", DiagnosticKind::LoopBound),
        ("fn f() {\n  back()\n}\n", DiagnosticKind::MissingExplanation),
    ];
    let rejected = violations
        .iter()
        .filter(|(src, kind)| {
            check(&parse_script(src).unwrap(), &ApiSpec::default(), CheckLimits::default())
                .iter()
                .any(|d| d.kind == *kind)
        })
        .count();
    let adversarial = parse_script("fn spin() {\n  repeat 64 {\n    repeat 64 {\n      # go back\n      back()\n    }\n  }\n}\n").unwrap();
    let app = bundled::app("coffeeshop").unwrap();
    let halted = match interpret(&adversarial, "spin", &BTreeMap::new(), reset(&app), &InterpretConfig::default()) {
        Err(f) => matches!(f.error, RunError::BudgetExceeded(200)) && f.trace.entries.len() == 200,
        Ok(_) => false,
    };
    verdict(
        failures.is_empty() && rejected == 5 && halted,
        format!(
            "{}/{} scripts round-trip; {rejected}/5 canonical violations rejected; adversarial loop halted at 200 calls: {halted}{}",
            corpus.len() - failures.len(),
            corpus.len(),
            if failures.is_empty() { String::new() } else { format!(" — {}", failures.join(", ")) }
        ),
    )
}

/// What a selector says about its element: resolved text, else visual,
/// else id. Parameter references resolve to `{name}` placeholders.
fn selector_reference(sel: &SelectorLit) -> Option<String> {
    let show = |v: &Option<Value>| match v {
        Some(Value::Str(s)) if !s.trim().is_empty() => Some(s.clone()),
        Some(Value::Ref(r)) => Some(format!("{{{r}}}")),
        _ => None,
    };
    show(&sel.text).or_else(|| show(&sel.visual)).or_else(|| show(&sel.id))
}

fn unexplained_calls(script: &ActionScript) -> Vec<String> {
    fn walk(body: &[Stmt], out: &mut Vec<String>) {
        for s in body {
            match &s.kind {
                StmtKind::Call(call) => {
                    let reference = match call.args.first() {
                        Some(Arg::Selector(sel)) => selector_reference(sel),
                        _ => None,
                    };
                    let ok = !s.explanation.trim().is_empty() && reference.is_none_or(|r| s.explanation.contains(&r));
                    if !ok {
                        out.push(format!("{}: {:?}", call.name, s.explanation));
                    }
                }
                StmtKind::If { then_body, else_body, .. } => {
                    walk(then_body, out);
                    walk(else_body, out);
                }
                StmtKind::Repeat { body, .. } => walk(body, out),
                StmtKind::Let { .. } => {}
            }
        }
    }
    let mut out = Vec::new();
    for f in &script.functions {
        walk(&f.body, &mut out);
    }
    out
}

fn entry_explained(e: &TraceEntry) -> bool {
    if e.explanation.trim().is_empty() {
        return false;
    }
    match &e.mapping {
        None => true,
        Some(m) => [&m.chosen.text, &m.chosen.annotation, &m.chosen.resource_id]
            .iter()
            .any(|s| !s.trim().is_empty() && e.explanation.contains(s.as_str())),
    }
}

fn explanation_emission() -> Verdict {
    let mut calls = 0;
    let mut bad_calls = Vec::new();
    let mut entries = 0;
    let mut bad_entries = 0;
    for id in demo_ids() {
        let (app, g) = generated(&id);
        calls += g.ast.call_count();
        bad_calls.extend(unexplained_calls(&g.ast).into_iter().map(|c| format!("{id}: {c}")));
        let trace = interpret(&g.ast, &g.function_name, &default_args(&g), reset(&app), &InterpretConfig::default()).unwrap();
        entries += trace.entries.len();
        bad_entries += trace.entries.iter().filter(|e| !entry_explained(e)).count();
    }
    let suite = load_suite(bundled::suite_source("coffeeshop").unwrap()).unwrap();
    let demos: Vec<Demonstration> = suite.library_demos.iter().map(|d| recorded(d).1).collect();
    let (lib, _) = ebc_core::eval::build_library(&demos, &bundled::app, &LlmConfig::default(), &VisualDescriberConfig::default());
    let app = bundled::app("coffeeshop").unwrap();
    for t in &suite.tasks {
        let run = run_task(t, 0, &lib, &app, &EvalConfig::default());
        entries += run.trace.len();
        bad_entries += run.trace.iter().filter(|e| !entry_explained(e)).count();
    }
    verdict(
        bad_calls.is_empty() && bad_entries == 0 && calls > 0,
        format!(
            "{}/{calls} generated calls and {}/{entries} trace entries explain their target{}",
            calls - bad_calls.len(),
            entries - bad_entries,
            if bad_calls.is_empty() { String::new() } else { format!(" — {}", bad_calls.join("; ")) }
        ),
    )
}

fn end_to_end_suite() -> Verdict {
    let start = Instant::now();
    let suite = load_suite(bundled::suite_source("coffeeshop").unwrap()).unwrap();
    let demos: Vec<Demonstration> = suite.library_demos.iter().map(|d| recorded(d).1).collect();
    let run = |config: &EvalConfig| {
        std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            evaluate_suite(&suite, LibrarySource::Demos(&demos), &bundled::app, config).unwrap()
        }))
    };
    let (Ok(first), Ok(second)) = (run(&EvalConfig::default()), run(&EvalConfig::default())) else {
        return verdict(false, "deterministic evaluation panicked");
    };
    let sr = first.overall.as_ref().map_or(0.0, |a| a.task_sr);
    let identical = first.to_json() == second.to_json();
    let faulty_config = EvalConfig {
        llm: LlmConfig {
            fault: Some(FaultConfig { rate: 0.2, seed: 7 }),
            ..LlmConfig::default()
        },
        ..EvalConfig::default()
    };
    let Ok(faulty) = run(&faulty_config) else {
        return verdict(false, "fault-injected evaluation panicked");
    };
    let faulty_sr = faulty.overall.as_ref().map_or(0.0, |a| a.task_sr);
    let failures: Vec<&RunRecord> = faulty.tasks.iter().flat_map(|t| &t.runs).filter(|r| !r.success).collect();
    let diagnosed = failures.iter().filter(|r| r.failure.as_deref().is_some_and(|f| !f.trim().is_empty())).count();
    let elapsed = start.elapsed();
    verdict(
        suite.tasks.len() == 30
            && sr == 1.0
            && identical
            && faulty_sr < sr
            && diagnosed == failures.len()
            && elapsed < Duration::from_secs(60),
        format!(
            "{} tasks × 10 trials: SR {sr:.3}, reports byte-identical: {identical}; with 20% corrupted generations SR {faulty_sr:.3}, {diagnosed}/{} failures carry a diagnostic; {:.2}s",
            suite.tasks.len(),
            failures.len(),
            elapsed.as_secs_f64()
        ),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("replay fidelity", replay_fidelity),
        ("parameterized generalization", parameterized_generalization),
        ("loop-compression soundness", loop_compression_soundness),
        ("mapping cascade correctness", mapping_cascade),
        ("self-mapping", self_mapping),
        ("metric arithmetic", metric_arithmetic),
        ("DSL round-trip and safety", dsl_round_trip_and_safety),
        ("explanation emission", explanation_emission),
        ("end-to-end suite", end_to_end_suite),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = std::panic::catch_unwind(run).unwrap_or_else(|_| verdict(false, "panicked"));
        if !v.pass {
            failed += 1;
        }
        println!("criterion {} {name}: {} — {}", i + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
