#![no_main]

use dshare_core::files::parse_design;
use dshare_core::{instances, Model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(design) = parse_design(data) else {
        return;
    };
    assert_eq!(parse_design(&design.to_json()).unwrap(), design);
    let model = Model::new(instances::io()).unwrap();
    if let Ok(built) = design.build(&model) {
        for t in 1..=model.horizon() {
            let common = vec![0; t - 1];
            let _ = built.prescription(t, &common);
        }
    }
});
