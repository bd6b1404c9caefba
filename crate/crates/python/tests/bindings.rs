use ads_py::ads_py;
use pyo3::ffi::c_str;
use pyo3::prelude::*;

#[test]
fn module_round_trip_through_the_interpreter() {
    pyo3::append_to_inittab!(ads_py);
    Python::initialize();
    Python::attach(|py| {
        let code = c_str!(
            r#"
import math
import ads_py
s = ads_py.NoiseSchedule(100, 1e-4, 0.05)
g = ads_py.IsotropicGmm([1.0], [[0.5, 0.5]], [0.01])
x0 = g.tweedie_denoise([0.2, 0.9], 10, s)
m = ads_py.MeasurementModel(1, 2)
t = ads_py.run_fixed_mask(g, m, [0.55, 0.45], [0, 1], steps=50, particles=4, zeta=0.5, beta_max=0.1)
assert len(t["posterior_samples"]) == 4
assert ads_py.mae([0.0, 1.0], [0.0, 0.0]) == 0.5
try:
    ads_py.IsotropicGmm([0.5], [[0.0]], [-1.0])
    raise AssertionError("negative variance accepted")
except ValueError:
    pass
result = len(x0)
"#
        );
        let globals = pyo3::types::PyDict::new(py);
        py.run(code, Some(&globals), None).unwrap();
        let n: usize = globals.get_item("result").unwrap().unwrap().extract().unwrap();
        assert_eq!(n, 2);
    });
}
