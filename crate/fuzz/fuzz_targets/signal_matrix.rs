#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let _ = hardi_recon::io_formats::parse_signal_matrix(&text, "signals.csv");
});
