#![no_main]

use libfuzzer_sys::fuzz_target;
use mbcri::artifact::FitArtifact;
use mbcri::frontier::Frontier;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(a) = FitArtifact::from_json(text) {
        for o in &a.data.observations {
            let _ = a.summary.estimate.evaluate(&o.inputs);
            let _ = a.summary.estimate.marginal_products(&o.inputs);
        }
        if let Some(m) = a.summary.selected_model() {
            let _ = m.fitted_values(&a.data.inputs());
        }
    }
});
