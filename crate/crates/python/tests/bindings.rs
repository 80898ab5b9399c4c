use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<R>(f: impl FnOnce(Python<'_>, &Bound<'_, PyDict>) -> R) -> R {
    static INIT: std::sync::Once = std::sync::Once::new();
    INIT.call_once(|| {
        pyo3::append_to_inittab!(pystgan);
        Python::initialize();
    });
    Python::attach(|py| {
        let globals = PyDict::new(py);
        globals.set_item("pystgan", py.import("pystgan").unwrap()).unwrap();
        f(py, &globals)
    })
}

fn run(code: &str) {
    with_module(|py, globals| {
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    })
}

use pystgan::pystgan;

#[test]
fn metrics_and_losses_through_python() {
    run(r#"
import math
a = [[0.2 * ((i + j) % 5) - 0.4 for j in range(16)] for i in range(16)]
assert abs(pystgan.ssim(a, a) - 1.0) < 1e-12
assert pystgan.mse(a, a) == 0.0
assert math.isinf(pystgan.psnr_from_mse(0.0))
assert abs(pystgan.psnr_from_mse(0.01) - 20.0) < 1e-12
assert abs(pystgan.discriminator_loss([[0.5]], [[0.5]]) + 1.3862943611) < 1e-6
assert abs(pystgan.generator_adv_loss([[[0.5]]] * 3) - 2.0794415417) < 1e-6
r = pystgan.full_generator_objective([0.7, 0.7, 0.05, 0.04, 0.01, 0.02, 0.03, 0.01])
assert abs(r - 11.1) < 1e-9, r
f = [[0.5] * 16 for _ in range(16)]
g = [[0.1] * 16 for _ in range(16)]
assert abs(pystgan.temporal_loss(f, g) - 0.16) < 1e-12
assert pystgan.causal_window_indices(60, 10, 3, 0, "u2v") == [8, 9, 10]
"#);
}

#[test]
fn errors_map_to_python_exceptions() {
    run(r#"
try:
    pystgan.causal_window_indices(60, 1, 3, 0, "u2v")
    raise AssertionError("expected an error")
except pystgan.StganError:
    pass
try:
    pystgan.causal_window_indices(60, 5, 3, 0, "sideways")
    raise AssertionError("expected an error")
except ValueError as e:
    assert "direction" in str(e)
try:
    pystgan.Bundle.load("/nonexistent/x.ckpt")
    raise AssertionError("expected an error")
except OSError:
    pass
"#);
}

#[test]
fn bundle_round_trip_and_translate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.ckpt");
    run(&format!(
        r#"
import json
u, v = pystgan.generate_pair(json.dumps({{"frame_size": 64, "frames": 4, "seed": 3}}))
assert len(u) == 4 and len(u[0]) == 64
cfg = json.loads(pystgan.default_train_config())
cfg.update(tau=2, steps=2, batch_size=1, crop_size=64, gen_depth=2, gen_width=2, disc_width=2, n_train=3, n_val=0)
b = pystgan.Bundle(json.dumps(cfg))
losses = b.train(u, v)
assert len(losses) == 2 and b.step == 2
b.save({path:?})
c = pystgan.Bundle.load({path:?})
assert c.step == 2 and c.config_digest == b.config_digest
out, fallback = c.translate(u, "u2v", "averaged")
assert len(out) == 4 and fallback == [True, False, False, False]
assert out == b.translate(u, "u2v", "averaged")[0]
"#
    ));
}
