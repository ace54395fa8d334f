#![no_main]

use dshare_core::{load_problem, validate_problem, Error, Model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(spec) = load_problem(data) else {
        return;
    };
    let again = load_problem(&spec.to_json()).expect("serialized problem parses");
    assert_eq!(again, spec);
    let small = spec.x_size <= 8
        && spec.horizon <= 4
        && spec.y_size.iter().chain(&spec.u_size).all(|&s| s <= 4);
    if small {
        let clean = validate_problem(&spec).is_empty();
        match Model::new(spec) {
            Err(Error::Budget { .. }) => {}
            built => assert_eq!(built.is_ok(), clean),
        }
    }
});
