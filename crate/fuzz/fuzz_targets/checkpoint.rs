#![no_main]

use chartfolio::autoencoder::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        assert_eq!(Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap().to_bytes(), ckpt.to_bytes());
    }
});
