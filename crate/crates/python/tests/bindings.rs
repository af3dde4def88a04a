use std::ffi::CString;
use std::sync::Once;

use pyo3::prelude::*;

static INIT: Once = Once::new();

fn python() {
    INIT.call_once(|| {
        pyo3::append_to_inittab!(ebc);
        Python::initialize();
    });
}

use ebc::ebc;

fn run(code: &str) -> PyResult<()> {
    python();
    let code = CString::new(code).unwrap();
    Python::attach(|py| py.run(&code, None, None))
}

#[test]
fn smoke_script_passes_against_the_embedded_module() {
    let script = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../python/smoke_test.py")).unwrap();
    run(&format!("{script}\nmain()\n")).unwrap();
}

#[test]
fn pipeline_failures_raise_ebc_error() {
    run(r#"
import ebc
for call in (lambda: ebc.Session("nope"),
             lambda: ebc.Demonstration.bundled("missing"),
             lambda: ebc.Session("coffeeshop").scroll("sideways"),
             lambda: ebc.Session("coffeeshop").click(999),
             lambda: ebc.Session("coffeeshop").finish("nothing"),
             lambda: ebc.format_script("fn {")):
    try:
        call()
    except ebc.EbcError:
        pass
    else:
        raise AssertionError("expected EbcError")
"#)
    .unwrap();
}

#[test]
fn sessions_record_the_same_demo_as_headless_playback() {
    run(r#"
import ebc
bundled = ebc.Demonstration.bundled("coffeeshop_quick_add_mochas")
s = ebc.Session("coffeeshop")
for a in bundled.actions():
    if a["kind"] == "click":
        s.click(a["target"])
    elif a["kind"] == "type":
        s.type(a["target"], a["text"])
    elif a["kind"] == "scroll":
        s.scroll(a["direction"])
    else:
        getattr(s, a["kind"])()
assert s.step_counter == len(bundled) == 9
live = s.finish(bundled.instruction)
assert live.encode().steps() == bundled.encode().steps()
assert live.demo_id == s.finish(bundled.instruction).demo_id
"#)
    .unwrap();
}
