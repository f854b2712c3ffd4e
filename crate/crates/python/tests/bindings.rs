use pyo3::prelude::*;
use pyo3::types::PyDict;

#[test]
fn train_predict_and_round_trip_from_python() {
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(pytrajmix::pytrajmix)(py);
        let locals = PyDict::new(py);
        locals.set_item("tm", module).unwrap();
        py.run(
            cr#"
data = tm.generate_dataset(seed=4)
model = tm.Model.train(data["train"], k=2, omegas=[2.0], seed=0)
observed = [v for t, v in zip(data["grid"], data["test"][1]) if t <= 14.0]
pred = model.predict(observed, 14.0, omega=2.0)
assert model.num_clusters == 2
assert len(pred["t"]) == 41 and len(pred["clusters"]) == 2
assert abs(sum(pred["posterior"]) - 1.0) < 1e-9
clone = tm.Model.from_json(model.to_json())
assert clone.predict(observed, 14.0, omega=2.0)["mixture"] == pred["mixture"]
"#,
            None,
            Some(&locals),
        )
        .unwrap();
    });
}

#[test]
fn errors_surface_as_value_errors() {
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(pytrajmix::pytrajmix)(py);
        let locals = PyDict::new(py);
        locals.set_item("tm", module).unwrap();
        py.run(
            cr#"
try:
    tm.Model.train([[1.0, 2.0, 3.0]], k=1)
except ValueError:
    pass
else:
    raise AssertionError("a 3-point day on the 96-point grid was accepted")
try:
    tm.Model.from_json("{}")
except ValueError:
    pass
else:
    raise AssertionError("empty artifact accepted")
"#,
            None,
            Some(&locals),
        )
        .unwrap();
    });
}
