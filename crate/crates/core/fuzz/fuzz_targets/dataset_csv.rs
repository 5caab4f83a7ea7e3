#![no_main]

use libfuzzer_sys::fuzz_target;
use mbcri::data::{Dataset, ReadOptions};

fuzz_target!(|data: &[u8]| {
    for drop in [false, true] {
        let opts = ReadOptions { drop_nonpositive_y: drop };
        if let Ok((ds, _)) = Dataset::from_csv(data, &opts) {
            ds.validate().unwrap();
            let mut out = Vec::new();
            ds.to_csv(&mut out).unwrap();
            let (back, _) = Dataset::from_csv(out.as_slice(), &ReadOptions::default()).unwrap();
            assert_eq!(back.len(), ds.len());
        }
    }
});
