#![no_main]

use dshare_core::files::parse_solution;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(file) = parse_solution(data) {
        let text = file.to_json();
        let again = parse_solution(&text).expect("serialized solution parses");
        assert_eq!(again.to_json(), text);
    }
});
