use std::collections::BTreeMap;

use ebc_core::bundled;
use ebc_core::codegen::{deterministic_generate, generate, ApiSpec, LlmConfig};
use ebc_core::dsl::{interpret, parse_script, InterpretConfig};
use ebc_core::encoder::{encode, record_script, VisualDescriberConfig};
use ebc_core::sim::{reset, SimState};

fn generated(demo_id: &str) -> (ebc_core::codegen::GeneratedScript, SimState) {
    let script = bundled::demo_script(demo_id).unwrap();
    let app = bundled::app(&script.app_id).unwrap();
    let (demo, end) = record_script(&app, &script).unwrap();
    let encoded = encode(&demo, &VisualDescriberConfig::default()).unwrap();
    (generate(&encoded, &ApiSpec::default(), &app, &LlmConfig::default()).unwrap(), end)
}

#[test]
fn replay_with_demonstrated_values_reaches_the_demonstrated_state() {
    for script in bundled::demo_scripts() {
        let id = script.resolved_id();
        let (g, end) = generated(&id);
        println!("{}", g.raw_text);
        let args: BTreeMap<String, String> = g.params.iter().map(|p| (p.name.clone(), p.default_value.clone())).collect();
        let app = bundled::app(&g.app_id).unwrap();
        let trace = interpret(&g.ast, &g.function_name, &args, reset(&app), &InterpretConfig::default())
            .unwrap_or_else(|e| panic!("{id}: {e}"));
        assert!(trace.final_state.same_outcome(&end), "{id}: replay diverged");
    }
}

#[test]
fn generation_is_byte_stable() {
    for script in bundled::demo_scripts() {
        let app = bundled::app(&script.app_id).unwrap();
        let (demo, _) = record_script(&app, &script).unwrap();
        let encoded = encode(&demo, &VisualDescriberConfig::default()).unwrap();
        let a = deterministic_generate(&encoded, &app);
        assert_eq!(a, deterministic_generate(&encoded, &app));
        assert!(parse_script(&a).is_ok());
    }
}
