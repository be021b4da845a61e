#![no_main]

use libfuzzer_sys::fuzz_target;
use stablesde::parse_entry_expression;

fuzz_target!(|text: &str| {
    // Accepted input must print back to text that parses to the same tree.
    if let Ok(expr) = parse_entry_expression(text) {
        let again = parse_entry_expression(&expr.to_string()).expect("printed expression parses");
        assert_eq!(expr, again);
        let _ = expr.eval(&[0.5; 8]);
    }
});
