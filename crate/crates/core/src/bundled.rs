//! Apps, demonstrations and task suites shipped with the crate.

use std::sync::Arc;

use crate::encoder::DemoScript;
use crate::sim::{load_app_spec, AppSpec};

const APPS: &[(&str, &str)] = &[
    ("coffeeshop", include_str!("../assets/apps/coffeeshop.json")),
    ("fastfood", include_str!("../assets/apps/fastfood.json")),
    ("trips", include_str!("../assets/apps/trips.json")),
];

const DEMOS: &[&str] = &[
    include_str!("../assets/demos/coffeeshop_order_americano.json"),
    include_str!("../assets/demos/coffeeshop_checkout_takeaway.json"),
    include_str!("../assets/demos/coffeeshop_quick_add_mochas.json"),
    include_str!("../assets/demos/fastfood_combo_meal.json"),
    include_str!("../assets/demos/fastfood_checkout_bag.json"),
    include_str!("../assets/demos/trips_book_hotel.json"),
];

const SUITES: &[(&str, &str)] = &[
    ("coffeeshop", include_str!("../assets/suites/coffeeshop.json")),
    ("fastfood", include_str!("../assets/suites/fastfood.json")),
    ("trips", include_str!("../assets/suites/trips.json")),
];

pub fn app_ids() -> Vec<&'static str> {
    APPS.iter().map(|(id, _)| *id).collect()
}

pub fn app_source(app_id: &str) -> Option<&'static str> {
    APPS.iter().find(|(id, _)| *id == app_id).map(|(_, src)| *src)
}

/// Loads a bundled app. Bundled specs are validated by the test suite, so
/// a load failure here is a packaging bug.
pub fn app(app_id: &str) -> Option<Arc<AppSpec>> {
    app_source(app_id).map(|src| Arc::new(load_app_spec(src).expect("bundled app spec is valid")))
}

pub fn apps() -> Vec<Arc<AppSpec>> {
    app_ids().into_iter().filter_map(app).collect()
}

pub fn demo_scripts() -> Vec<DemoScript> {
    DEMOS
        .iter()
        .map(|src| serde_json::from_str(src).expect("bundled demo script is valid"))
        .collect()
}

pub fn demo_script(demo_id: &str) -> Option<DemoScript> {
    demo_scripts().into_iter().find(|d| d.resolved_id() == demo_id)
}

pub fn suite_source(suite_id: &str) -> Option<&'static str> {
    SUITES.iter().find(|(id, _)| *id == suite_id).map(|(_, src)| *src)
}

pub fn suite_ids() -> Vec<&'static str> {
    SUITES.iter().map(|(id, _)| *id).collect()
}
