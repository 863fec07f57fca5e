#![no_main]

use libfuzzer_sys::fuzz_target;
use ma_chanest::codec::{decode_observation, encode_observation};

fuzz_target!(|data: &[u8]| {
    if let Ok(obs) = decode_observation(data) {
        assert_eq!(encode_observation(&obs), data);
    }
});
