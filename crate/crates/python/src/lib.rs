//! Python bindings for the `tarpse` core crate.

use std::path::PathBuf;
use std::sync::OnceLock;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tarpse::corpus::{self, SyntheticSpec};
use tarpse::criteria;
use tarpse::ensemble::{self, CaptureFrequencies};
use tarpse::error::Error;
use tarpse::estimators;
use tarpse::features::FeatureVector;
use tarpse::harness::{self, Config, CriteriaSettings, MethodKind, MethodSpec};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        Error::Exhausted | Error::Contract(_) | Error::Estimator(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn frequencies(f: Vec<u64>, n: Option<u64>) -> PyResult<CaptureFrequencies> {
    match n {
        Some(n) => CaptureFrequencies::with_n(f, n),
        None => CaptureFrequencies::new(f),
    }
    .map_err(to_py)
}

/// Point estimate and 95% interval of the population size.
#[pyclass(frozen, get_all, skip_from_py_object, module = "tarpse_py")]
#[derive(Clone)]
struct Estimate {
    n: u64,
    f0_hat: f64,
    point: f64,
    variance: Option<f64>,
    ci_low: f64,
    ci_high: f64,
}

impl From<estimators::Estimate> for Estimate {
    fn from(e: estimators::Estimate) -> Self {
        Estimate { n: e.n, f0_hat: e.f0_hat, point: e.point, variance: e.variance, ci_low: e.ci_low, ci_high: e.ci_high }
    }
}

#[pymethods]
impl Estimate {
    fn __repr__(&self) -> String {
        format!("Estimate(n={}, point={:.4}, ci=[{:.4}, {:.4}])", self.n, self.point, self.ci_low, self.ci_high)
    }
}

#[pyclass(frozen, get_all, module = "tarpse_py")]
struct RivestFit {
    gamma: f64,
    beta: f64,
    etas: Vec<(usize, f64)>,
    deviance: f64,
    converged: bool,
    intercept_only: bool,
}

#[pymethods]
impl RivestFit {
    fn __repr__(&self) -> String {
        format!("RivestFit(gamma={:.4}, beta={:.4}, etas={:?})", self.gamma, self.beta, self.etas)
    }
}

/// Chao (1987) estimate from capture frequencies `f_1..f_C`.
#[pyfunction]
#[pyo3(signature = (f, n=None))]
fn chao1987(f: Vec<u64>, n: Option<u64>) -> PyResult<Estimate> {
    Ok(estimators::chao1987_interval(&frequencies(f, n)?).into())
}

/// Rivest estimate with its profile-likelihood interval.
#[pyfunction]
#[pyo3(signature = (f, n=None))]
fn rivest(py: Python<'_>, f: Vec<u64>, n: Option<u64>) -> PyResult<Estimate> {
    let freq = frequencies(f, n)?;
    py.detach(|| estimators::rivest_interval(&freq)).map(Into::into).map_err(to_py)
}

/// Rivest fit after pruning; pass `etas` to fit a fixed model instead.
#[pyfunction]
#[pyo3(signature = (f, etas=None))]
fn rivest_fit(f: Vec<u64>, etas: Option<Vec<usize>>) -> PyResult<RivestFit> {
    let freq = frequencies(f, None)?;
    let fit = match etas {
        Some(e) => estimators::fit_rivest_model(&freq, &e),
        None => estimators::rivest_fit(&freq),
    }
    .map_err(to_py)?;
    Ok(RivestFit {
        gamma: fit.gamma,
        beta: fit.beta,
        etas: fit.etas,
        deviance: fit.deviance,
        converged: fit.converged,
        intercept_only: fit.intercept_only,
    })
}

#[pyfunction]
fn quant_recall(labeled: Vec<f64>, unlabeled: Vec<f64>) -> PyResult<f64> {
    estimators::quant_recall(&labeled, &unlabeled).map_err(to_py)
}

/// `P(X <= x)` for a hypergeometric draw of `sample` from `population`
/// holding `successes`.
#[pyfunction]
fn hypergeometric_cdf(successes: u64, population: u64, sample: u64, x: i64) -> PyResult<f64> {
    criteria::hypergeometric_cdf(successes, population, sample, x).map_err(to_py)
}

#[pyfunction]
fn cmh_p_value(pivot: (usize, usize), reviewed: usize, found: usize, dataset_size: usize, tau: f64) -> PyResult<f64> {
    criteria::cmh_p_value(pivot, reviewed, found, dataset_size, tau).map_err(to_py)
}

#[pyclass(frozen, module = "tarpse_py")]
struct Dataset {
    inner: corpus::Dataset,
    features: OnceLock<Vec<FeatureVector>>,
}

impl Dataset {
    fn wrap(inner: corpus::Dataset) -> Self {
        Dataset { inner, features: OnceLock::new() }
    }

    fn features(&self) -> PyResult<&[FeatureVector]> {
        if let Some(f) = self.features.get() {
            return Ok(f);
        }
        let f = harness::featurize(&self.inner).map_err(to_py)?;
        Ok(self.features.get_or_init(|| f))
    }
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (path, format="synergy_csv"))]
    fn load(path: PathBuf, format: &str) -> PyResult<Self> {
        let format = format.parse().map_err(to_py)?;
        Ok(Self::wrap(corpus::load_dataset(&path, format).map_err(to_py)?))
    }

    #[staticmethod]
    #[pyo3(signature = (n_total, n_relevant, vocab_size=500, separation=0.8, rng_seed=1))]
    fn synthetic(n_total: usize, n_relevant: usize, vocab_size: usize, separation: f64, rng_seed: u64) -> PyResult<Self> {
        let spec = SyntheticSpec { n_total, n_relevant, vocab_size, separation, rng_seed };
        Ok(Self::wrap(corpus::generate_synthetic(spec).map_err(to_py)?))
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn n_total(&self) -> usize {
        self.inner.n_total()
    }

    #[getter]
    fn n_relevant(&self) -> usize {
        self.inner.n_relevant()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.documents().iter().map(|d| d.id.clone()).collect()
    }

    fn labels(&self) -> Vec<u8> {
        (0..self.inner.n_total()).map(|d| self.inner.gold(d).as_digit()).collect()
    }

    /// The `i`-th 5+5 seed set as `(relevant_ids, irrelevant_ids)`.
    #[pyo3(signature = (seed=0, index=0))]
    fn seed_set(&self, seed: u64, index: usize) -> PyResult<(Vec<String>, Vec<String>)> {
        let s = corpus::draw_seed_set(&self.inner, seed, index).map_err(to_py)?;
        Ok((s.relevant_ids, s.irrelevant_ids))
    }

    /// Capture frequencies after replaying a committee capture log up to a
    /// review count. Returns `(f, n)`.
    #[pyo3(signature = (path, up_to_review, committee_size=5))]
    fn replay_capture_log(&self, path: PathBuf, up_to_review: usize, committee_size: usize) -> PyResult<(Vec<u64>, u64)> {
        let file = std::fs::File::open(path).map_err(|e| to_py(e.into()))?;
        let events = ensemble::read_capture_log(&self.inner, file).map_err(to_py)?;
        let f = ensemble::replay_capture_log(&events, committee_size, up_to_review).map_err(to_py)?;
        Ok((f.counts().to_vec(), f.n()))
    }

    /// Screens the dataset to exhaustion with one method and returns the trace.
    #[pyo3(signature = (method="ensemble", seed=0, seed_index=0, targets=None, stop_after_k=None, rules=None, tau=None, k=None))]
    #[allow(clippy::too_many_arguments)]
    fn simulate(
        &self,
        py: Python<'_>,
        method: &str,
        seed: u64,
        seed_index: usize,
        targets: Option<Vec<f64>>,
        stop_after_k: Option<usize>,
        rules: Option<Vec<String>>,
        tau: Option<f64>,
        k: Option<usize>,
    ) -> PyResult<RunTrace> {
        let mut settings = CriteriaSettings::default();
        if let Some(t) = targets {
            settings.targets = t;
        }
        if let Some(s) = stop_after_k {
            settings.stop_after_k = s;
        }
        settings.rules = rules;
        let spec = match method.parse::<MethodKind>().map_err(to_py)? {
            MethodKind::Ensemble => MethodSpec::Ensemble,
            MethodKind::AutoTar => MethodSpec::AutoTar,
            MethodKind::Random => MethodSpec::Random,
            MethodKind::Target => MethodSpec::Target { k: k.unwrap_or(settings.target_k) },
            MethodKind::CmhHybrid => MethodSpec::CmhHybrid { tau: tau.unwrap_or(0.95) },
        };
        let features = self.features()?;
        let seeds = corpus::draw_seed_set(&self.inner, seed, seed_index).map_err(to_py)?;
        let rng_seed = harness::run_seed(seed, self.inner.name(), &spec, seed_index);
        let inner = py
            .detach(|| harness::run_simulation(&self.inner, features, spec, &seeds, rng_seed, &settings))
            .map_err(to_py)?;
        Ok(RunTrace { inner })
    }

    fn __repr__(&self) -> String {
        format!("Dataset(name={:?}, n_total={}, n_relevant={})", self.inner.name(), self.inner.n_total(), self.inner.n_relevant())
    }
}

#[pyclass(frozen, module = "tarpse_py")]
struct RunTrace {
    inner: harness::RunTrace,
}

#[pymethods]
impl RunTrace {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(RunTrace { inner: harness::load_run(&dir).map_err(to_py)? })
    }

    /// Writes trace, estimate, firing, curve and frequency CSVs plus `run.json`.
    fn write(&self, dir: PathBuf) -> PyResult<()> {
        harness::write_run(&self.inner, &dir).map_err(to_py)
    }

    #[getter]
    fn dataset(&self) -> &str {
        &self.inner.meta.dataset
    }

    #[getter]
    fn method(&self) -> &str {
        &self.inner.meta.label
    }

    #[getter]
    fn seed_index(&self) -> usize {
        self.inner.meta.seed_index
    }

    #[getter]
    fn n_total(&self) -> usize {
        self.inner.meta.n_total
    }

    #[getter]
    fn n_relevant(&self) -> usize {
        self.inner.meta.n_relevant
    }

    #[getter]
    fn total_reviews(&self) -> usize {
        self.inner.total_reviews()
    }

    /// `(review_count, doc_id, label, source)` per human decision.
    fn reviews(&self) -> Vec<(usize, String, u8, String)> {
        self.inner.reviews.iter().map(|r| (r.review_count, r.doc_id.clone(), r.label.as_digit(), r.source.clone())).collect()
    }

    fn checkpoints(&self) -> Vec<(usize, usize)> {
        self.inner.checkpoints.clone()
    }

    /// `(review_count, rule, point, ci_low, ci_high)`.
    fn estimates(&self) -> Vec<(usize, String, f64, f64, f64)> {
        self.inner.estimates.iter().map(|e| (e.review_count, e.rule.clone(), e.point, e.ci_low, e.ci_high)).collect()
    }

    /// `(rule, target, review_count)`.
    fn firings(&self) -> Vec<(String, Option<f64>, usize)> {
        self.inner.firings.iter().map(|f| (f.rule.name().to_string(), f.target, f.review_count)).collect()
    }

    fn wss_at_recall(&self, recall: f64) -> Option<f64> {
        self.inner.wss_at_recall(recall)
    }

    /// One metrics dict per evaluated rule and target.
    #[pyo3(signature = (reference_target=0.95))]
    fn metrics<'py>(&self, py: Python<'py>, reference_target: f64) -> PyResult<Vec<Bound<'py, PyDict>>> {
        harness::trace_metrics(&self.inner, reference_target)
            .into_iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("dataset", r.dataset)?;
                d.set_item("method", r.method)?;
                d.set_item("seed_index", r.seed_index)?;
                d.set_item("rule", r.rule)?;
                d.set_item("target", r.target)?;
                d.set_item("review_count", r.review_count)?;
                d.set_item("effort", r.effort)?;
                d.set_item("recall", r.recall)?;
                d.set_item("recall_error", r.recall_error)?;
                d.set_item("wss", r.wss)?;
                d.set_item("loss_er", r.loss_er)?;
                d.set_item("target_met", r.target_met)?;
                d.set_item("triggered", r.triggered)?;
                Ok(d)
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunTrace(dataset={:?}, method={:?}, seed_index={}, reviews={}, firings={})",
            self.inner.meta.dataset,
            self.inner.meta.label,
            self.inner.meta.seed_index,
            self.inner.total_reviews(),
            self.inner.firings.len()
        )
    }
}

/// Runs a TOML benchmark config and returns the number of metric rows.
#[pyfunction]
#[pyo3(signature = (config, out, parallel=true))]
fn benchmark(py: Python<'_>, config: PathBuf, out: PathBuf, parallel: bool) -> PyResult<usize> {
    let cfg = Config::load(&config).map_err(to_py)?;
    let base = config.parent().map(PathBuf::from).unwrap_or_default();
    let report = py.detach(|| harness::run_benchmark(&cfg, &base, &out, parallel)).map_err(to_py)?;
    Ok(report.rows.len())
}

/// Scores every run under `input` and writes the summary files to `out`.
#[pyfunction]
#[pyo3(signature = (input, out, reference_target=0.95))]
fn report(input: PathBuf, out: PathBuf, reference_target: f64) -> PyResult<usize> {
    Ok(harness::report(&input, &out, reference_target).map_err(to_py)?.aggregate.len())
}

#[pymodule]
fn tarpse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Estimate>()?;
    m.add_class::<RivestFit>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<RunTrace>()?;
    m.add_function(wrap_pyfunction!(chao1987, m)?)?;
    m.add_function(wrap_pyfunction!(rivest, m)?)?;
    m.add_function(wrap_pyfunction!(rivest_fit, m)?)?;
    m.add_function(wrap_pyfunction!(quant_recall, m)?)?;
    m.add_function(wrap_pyfunction!(hypergeometric_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(cmh_p_value, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
