use pyo3::prelude::*;
use pyo3::types::PyModule;

fn with_module<F: FnOnce(&Bound<'_, PyModule>) -> PyResult<()>>(f: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "soiltdm_py").unwrap();
        soiltdm_py::soiltdm_py(&m).unwrap();
        f(&m).unwrap();
    });
}

#[test]
fn metric_helpers_are_exposed() {
    with_module(|m| {
        let r: f64 = m
            .getattr("relative_return")?
            .call1((-3.0, -3.0))?
            .extract()?;
        assert_eq!(r, 1.0);
        let ci: (f64, f64) = m.getattr("bootstrap_ci")?.call1((vec![0.5],))?.extract()?;
        assert_eq!(ci, (0.5, 0.5));
        let idx: usize = m
            .getattr("select_checkpoint")?
            .call1((vec![3.0, 1.0, 2.0], 1))?
            .extract()?;
        assert_eq!(idx, 1);
        assert!(m
            .getattr("spearman")?
            .call1((vec![1.0], vec![2.0]))
            .is_err());
        Ok(())
    });
}

#[test]
fn oracle_and_config_are_exposed() {
    with_module(|m| {
        let rows: Vec<(String, usize, f64, f64, bool)> =
            m.getattr("oracle_suite")?.call1((5, 3))?.extract()?;
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.4));
        let text: String = m
            .getattr("default_config")?
            .call1(("pointmass2d", "form"))?
            .extract()?;
        assert!(text.contains("method = form"));
        assert!(m.getattr("default_config")?.call1(("nowhere",)).is_err());
        Ok(())
    });
}

#[test]
fn flow_class_round_trips_densities() {
    with_module(|m| {
        let flow = m.getattr("Flow")?.call1((2, 1, 7))?;
        let lp: Vec<f64> = flow
            .call_method1("log_prob", (vec![vec![0.1, -0.2]], Some(vec![vec![0.3]])))?
            .extract()?;
        assert!(lp[0].is_finite());
        let s: Vec<Vec<f64>> = flow
            .call_method1("sample", (3, Some(vec![vec![0.0]; 3])))?
            .extract()?;
        assert_eq!((s.len(), s[0].len()), (3, 2));
        assert!(flow.call_method1("sample", (3,)).is_err());
        Ok(())
    });
}
