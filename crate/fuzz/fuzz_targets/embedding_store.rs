#![no_main]

use chartfolio::autoencoder::read_embedding_store;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_embedding_store(data);
});
