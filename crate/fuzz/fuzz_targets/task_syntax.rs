#![no_main]

use libfuzzer_sys::fuzz_target;
use stablesde::estimate::BoundaryFunction;
use stablesde_cli::parse;

fuzz_target!(|text: &str| {
    let _ = parse::points(text);
    for d in 1..=3 {
        let _ = parse::domain(text, d);
    }
    if let Ok(g) = BoundaryFunction::parse(text) {
        if g.max_axis().is_none_or(|k| k < 3) {
            let _ = g.value(&[0.25, -0.5, 2.0]);
        }
    }
});
