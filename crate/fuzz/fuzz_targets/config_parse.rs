#![no_main]

use libfuzzer_sys::fuzz_target;
use ma_chanest::config::parse_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_config(text, "fuzz") {
            // Anything accepted must describe a runnable sweep.
            cfg.sweep.validate().expect("accepted config must validate");
        }
    }
});
