#![no_main]

use libfuzzer_sys::fuzz_target;
use selftrig::poly::parse::{parse_poly_expr, VarSpace};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_poly_expr(text, VarSpace::state(3));
        let _ = parse_poly_expr(text, VarSpace::closed_loop(3));
    }
});
