#![no_main]

use libfuzzer_sys::fuzz_target;
use ma_chanest::codec::parse_record;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rec) = parse_record(text) {
            let again = parse_record(&rec.to_json()).expect("re-encoded record must parse");
            assert_eq!(again, rec);
        }
    }
});
