//! CMC evaluation and the repeated half-split protocol.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::dataset::{split_protocol, CrossViewDataset, ViewMatrix};
use crate::error::{Error, Result};
use crate::kernels::{KernelChoice, KernelSpec};
use crate::kissme::{kissme_train, KissmeModel, KissmeOptions};
use crate::kxqda::{kxqda_fit, KxqdaModel, KxqdaOptions};
use crate::xqda::{xqda_fit, XqdaModel, XqdaOptions};

/// Query × gallery distances with the identity of every row and column.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    pub values: Mat<f64>,
    pub query_labels: Vec<usize>,
    pub gallery_labels: Vec<usize>,
}

impl DistanceMatrix {
    pub fn new(values: Mat<f64>, query_labels: Vec<usize>, gallery_labels: Vec<usize>) -> Result<Self> {
        if values.nrows() != query_labels.len() || values.ncols() != gallery_labels.len() {
            return Err(Error::Shape(format!(
                "distance matrix is {}x{} but there are {} query and {} gallery labels",
                values.nrows(),
                values.ncols(),
                query_labels.len(),
                gallery_labels.len()
            )));
        }
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                let v = values[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidMatrix(format!("distance ({i}, {j}) is {v}")));
                }
            }
        }
        Ok(DistanceMatrix {
            values,
            query_labels,
            gallery_labels,
        })
    }

    pub fn queries(&self) -> usize {
        self.values.nrows()
    }

    pub fn gallery(&self) -> usize {
        self.values.ncols()
    }
}

/// `accuracy[r - 1]` is the fraction of queries matched within rank `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    pub accuracy: Vec<f64>,
    /// Queries that entered the denominator.
    pub evaluated: usize,
    /// Queries skipped because their identity is absent from the gallery.
    pub excluded: usize,
}

impl CmcCurve {
    /// Accuracy at a 1-based rank; ranks past the gallery size saturate.
    pub fn at(&self, rank: usize) -> f64 {
        assert!(rank >= 1, "ranks are 1-based");
        match self.accuracy.len() {
            0 => 0.0,
            len => self.accuracy[rank.min(len) - 1],
        }
    }
}

/// 1-based rank of the first same-identity gallery entry of query `i`, with
/// ties broken by gallery index.
fn match_rank(dm: &DistanceMatrix, i: usize) -> Option<usize> {
    let label = dm.query_labels[i];
    let row = |j: usize| dm.values[(i, j)];
    let best = (0..dm.gallery())
        .filter(|&j| dm.gallery_labels[j] == label)
        .min_by(|&a, &b| row(a).total_cmp(&row(b)).then(a.cmp(&b)))?;
    let d = row(best);
    let ahead = (0..dm.gallery()).filter(|&j| row(j) < d || (row(j) == d && j < best)).count();
    Some(ahead + 1)
}

pub fn cmc(dm: &DistanceMatrix) -> Result<CmcCurve> {
    if dm.queries() == 0 || dm.gallery() == 0 {
        return Err(Error::EmptyEval(format!("{}x{} distance matrix", dm.queries(), dm.gallery())));
    }
    let mut hits = vec![0usize; dm.gallery()];
    let mut evaluated = 0;
    for i in 0..dm.queries() {
        if let Some(r) = match_rank(dm, i) {
            hits[r - 1] += 1;
            evaluated += 1;
        }
    }
    let excluded = dm.queries() - evaluated;
    if evaluated == 0 {
        return Err(Error::EmptyEval("no query identity occurs in the gallery".into()));
    }
    if excluded > 0 {
        log::info!("{excluded} queries have no gallery match and are excluded");
    }
    let mut acc = Vec::with_capacity(hits.len());
    let mut cum = 0;
    for h in hits {
        cum += h;
        acc.push(cum as f64 / evaluated as f64);
    }
    Ok(CmcCurve {
        accuracy: acc,
        evaluated,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiShotPolicy {
    #[default]
    Min,
    Mean,
}

impl std::str::FromStr for MultiShotPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(MultiShotPolicy::Min),
            "mean" => Ok(MultiShotPolicy::Mean),
            _ => Err(Error::Config(format!("multi-shot policy must be min or mean, got {s:?}"))),
        }
    }
}

/// One column per gallery identity (ascending), reduced over that
/// identity's images.
pub fn multishot_reduce(dm: &DistanceMatrix, policy: MultiShotPolicy) -> DistanceMatrix {
    let mut ids = dm.gallery_labels.clone();
    ids.sort_unstable();
    ids.dedup();
    let members: Vec<Vec<usize>> = ids
        .iter()
        .map(|&id| (0..dm.gallery()).filter(|&j| dm.gallery_labels[j] == id).collect())
        .collect();
    let values = Mat::from_fn(dm.queries(), ids.len(), |i, k| {
        let it = members[k].iter().map(|&j| dm.values[(i, j)]);
        match policy {
            MultiShotPolicy::Min => it.fold(f64::INFINITY, f64::min),
            MultiShotPolicy::Mean => it.sum::<f64>() / members[k].len() as f64,
        }
    });
    DistanceMatrix {
        values,
        query_labels: dm.query_labels.clone(),
        gallery_labels: ids,
    }
}

// ---------------------------------------------------------------------------
// Methods

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    Kissme(KissmeOptions),
    Xqda(XqdaOptions),
    Kxqda { kernel: KernelChoice, options: KxqdaOptions },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Kissme(_) => "kissme",
            Method::Xqda(_) => "xqda",
            Method::Kxqda { .. } => "kxqda",
        }
    }

    /// Fits on `train`; `seed` drives any data-dependent kernel parameter.
    pub fn fit(&self, train: &CrossViewDataset, seed: u64) -> Result<Model> {
        Ok(match self {
            Method::Kissme(o) => Model::Kissme(kissme_train(train, o)?),
            Method::Xqda(o) => Model::Xqda(xqda_fit(train, o)?),
            Method::Kxqda { kernel, options } => {
                let spec = kernel.resolve(train, seed)?;
                Model::Kxqda(kxqda_fit(train, &spec, options)?)
            }
        })
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    Kissme(KissmeModel),
    Xqda(XqdaModel),
    Kxqda(KxqdaModel),
}

impl Model {
    pub fn distances(&self, queries: &ViewMatrix, gallery: &ViewMatrix) -> Result<Mat<f64>> {
        match self {
            Model::Kissme(m) => m.distances(queries, gallery),
            Model::Xqda(m) => m.distances(queries, gallery),
            Model::Kxqda(m) => m.distances(queries, gallery),
        }
    }

    pub fn kernel(&self) -> Option<KernelSpec> {
        match self {
            Model::Kxqda(m) => Some(m.kernel),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Protocol

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOptions {
    pub trials: usize,
    pub seed: u64,
    /// Query from view Z and search view X instead of the reverse.
    pub swap_views: bool,
    /// Collapse gallery images per identity before ranking; `None` ranks
    /// every gallery image.
    pub multishot: Option<MultiShotPolicy>,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        ProtocolOptions {
            trials: 10,
            seed: 0,
            swap_views: false,
            multishot: Some(MultiShotPolicy::Min),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub split_secs: f64,
    pub fit_secs: f64,
    pub distance_secs: f64,
    pub cmc_secs: f64,
}

impl PhaseTimings {
    fn add(&mut self, o: &PhaseTimings) {
        self.split_secs += o.split_secs;
        self.fit_secs += o.fit_secs;
        self.distance_secs += o.distance_secs;
        self.cmc_secs += o.cmc_secs;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub cmc: Option<CmcCurve>,
    pub error: Option<String>,
    /// Resolved kernel for k-XQDA trials.
    pub kernel: Option<KernelSpec>,
    pub train_identities: Vec<usize>,
    pub timings: PhaseTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub protocol: ProtocolOptions,
    pub trials: Vec<TrialResult>,
    /// Per-rank mean over successful trials.
    pub mean: CmcCurve,
    pub failed_trials: usize,
    pub timings: PhaseTimings,
}

impl EvalReport {
    /// Everything except wall-clock fields.
    pub fn same_results(&self, other: &EvalReport) -> bool {
        self.method == other.method
            && self.protocol == other.protocol
            && self.mean == other.mean
            && self.failed_trials == other.failed_trials
            && self.trials.len() == other.trials.len()
            && self.trials.iter().zip(&other.trials).all(|(a, b)| {
                a.trial == b.trial
                    && a.cmc == b.cmc
                    && a.error == b.error
                    && a.kernel == b.kernel
                    && a.train_identities == b.train_identities
            })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `rank,mean_accuracy` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,mean_accuracy\n");
        for (r, a) in self.mean.accuracy.iter().enumerate() {
            writeln!(s, "{},{}", r + 1, a).unwrap();
        }
        s
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    /// Rank-N accuracies in percent as a small text table.
    pub fn rank_table(&self, ranks: &[usize]) -> String {
        let mut head = format!("{:<8}", "method");
        let mut row = format!("{:<8}", self.method.name());
        for &r in ranks {
            write!(head, " {:>8}", format!("r={r}")).unwrap();
            write!(row, " {:>8.2}", 100.0 * self.mean.at(r)).unwrap();
        }
        format!("{head}\n{row}\n")
    }
}

/// Per-rank mean; shorter curves are extended by their last value.
pub fn mean_curve(curves: &[&CmcCurve]) -> CmcCurve {
    let len = curves.iter().map(|c| c.accuracy.len()).max().unwrap_or(0);
    let accuracy = (1..=len)
        .map(|r| curves.iter().map(|c| c.at(r)).sum::<f64>() / curves.len() as f64)
        .collect();
    CmcCurve {
        accuracy,
        evaluated: curves.iter().map(|c| c.evaluated).sum(),
        excluded: curves.iter().map(|c| c.excluded).sum(),
    }
}

fn run_trial(ds: &CrossViewDataset, method: &Method, opts: &ProtocolOptions, trial: usize, t: &mut PhaseTimings) -> Result<(CmcCurve, Option<KernelSpec>, Vec<usize>)> {
    let clock = Instant::now();
    let split = split_protocol(ds, opts.seed, trial as u64)?;
    t.split_secs = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let model = method.fit(&split.train, crate::rng::stream_id("protocol/fit", trial as u64) ^ opts.seed)?;
    t.fit_secs = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let test = &split.test;
    let (q, ql, g, gl) = if opts.swap_views {
        (&test.z, &test.labels_z, &test.x, &test.labels_x)
    } else {
        (&test.x, &test.labels_x, &test.z, &test.labels_z)
    };
    let dm = DistanceMatrix::new(model.distances(q, g)?, ql.clone(), gl.clone())?;
    t.distance_secs = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let curve = match opts.multishot {
        Some(p) => cmc(&multishot_reduce(&dm, p))?,
        None => cmc(&dm)?,
    };
    t.cmc_secs = clock.elapsed().as_secs_f64();
    Ok((curve, model.kernel(), split.train_identities))
}

/// Repeats split → fit → rank for each trial. A failing trial is recorded
/// and skipped; if every trial fails the first error is returned.
pub fn run_protocol(ds: &CrossViewDataset, method: &Method, opts: &ProtocolOptions) -> Result<EvalReport> {
    if opts.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if ds.classes() < 4 {
        return Err(Error::Config(format!("protocol needs at least 4 identities, got {}", ds.classes())));
    }
    let mut trials = Vec::with_capacity(opts.trials);
    let mut first_error = None;
    let mut total = PhaseTimings::default();
    for trial in 0..opts.trials {
        let mut t = PhaseTimings::default();
        let result = run_trial(ds, method, opts, trial, &mut t);
        total.add(&t);
        trials.push(match result {
            Ok((curve, kernel, ids)) => TrialResult {
                trial,
                cmc: Some(curve),
                error: None,
                kernel,
                train_identities: ids,
                timings: t,
            },
            Err(e) => {
                log::warn!("trial {trial} failed: {e}");
                let msg = e.to_string();
                first_error.get_or_insert(e);
                TrialResult {
                    trial,
                    cmc: None,
                    error: Some(msg),
                    kernel: None,
                    train_identities: Vec::new(),
                    timings: t,
                }
            }
        });
    }
    let ok: Vec<&CmcCurve> = trials.iter().filter_map(|t| t.cmc.as_ref()).collect();
    if ok.is_empty() {
        return Err(first_error.expect("at least one trial ran"));
    }
    let mean = mean_curve(&ok);
    let failed_trials = opts.trials - ok.len();
    Ok(EvalReport {
        method: method.clone(),
        protocol: opts.clone(),
        trials,
        mean,
        failed_trials,
        timings: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_crossview, SynthConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dm(rows: &[&[f64]], ql: Vec<usize>, gl: Vec<usize>) -> DistanceMatrix {
        let values = Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
        DistanceMatrix::new(values, ql, gl).unwrap()
    }

    #[test]
    fn three_of_four_at_rank_one() {
        let d = dm(
            &[&[0.1, 0.5, 0.9, 0.7], &[0.6, 0.2, 0.9, 0.7], &[0.4, 0.5, 0.3, 0.7], &[0.1, 0.5, 0.9, 0.7]],
            vec![1, 2, 3, 4],
            vec![1, 2, 3, 4],
        );
        let c = cmc(&d).unwrap();
        assert_eq!(c.at(1), 0.75);
        assert_eq!(c.at(4), 1.0);
        assert_eq!(c.accuracy, vec![0.75, 0.75, 1.0, 1.0]);
    }

    #[test]
    fn zero_metric_copies() {
        let d = DistanceMatrix::new(Mat::zeros(3, 3), vec![1, 2, 3], vec![1, 2, 3]).unwrap();
        // ties resolve to gallery order, which matches the query order here
        let c = cmc(&d).unwrap();
        assert_eq!(c.accuracy, vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);
        let x = ViewMatrix::from_samples(2, &[vec![0.0, 1.0], vec![3.0, 0.0], vec![-2.0, 5.0]]).unwrap();
        let m = Model::Xqda(XqdaModel {
            w: Mat::identity(2, 2),
            core: crate::linalg::SymMatrix::identity(2),
            eigenvalues: vec![],
            spectrum: vec![],
            rule: crate::xqda::DimensionRule::AboveOne,
            ridge: 0.0,
            ridge_abs: 0.0,
            timings: Default::default(),
        });
        let d = DistanceMatrix::new(m.distances(&x, &x).unwrap(), vec![1, 2, 3], vec![1, 2, 3]).unwrap();
        assert_eq!(cmc(&d).unwrap().at(1), 1.0);
    }

    fn naive(d: &DistanceMatrix) -> Vec<f64> {
        let g = d.gallery();
        let mut hits = vec![0usize; g];
        for i in 0..d.queries() {
            let mut order: Vec<usize> = (0..g).collect();
            order.sort_by(|&a, &b| d.values[(i, a)].partial_cmp(&d.values[(i, b)]).unwrap());
            let r = order.iter().position(|&j| d.gallery_labels[j] == d.query_labels[i]).unwrap();
            for h in hits.iter_mut().skip(r) {
                *h += 1;
            }
        }
        hits.iter().map(|&h| h as f64 / d.queries() as f64).collect()
    }

    #[test]
    fn matches_naive_sort() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let values = Mat::from_fn(10, 10, |_, _| (r.gen_range(0..6) as f64) * 0.5);
            let gl: Vec<usize> = (0..10).map(|_| r.gen_range(1..=5)).collect();
            let ql: Vec<usize> = (0..10).map(|i| gl[(i * 3) % 10]).collect();
            let d = DistanceMatrix::new(values, ql, gl).unwrap();
            assert_eq!(cmc(&d).unwrap().accuracy, naive(&d));
        }
    }

    #[test]
    fn absent_queries_are_excluded() {
        let d = dm(&[&[0.1, 0.2], &[0.3, 0.1], &[0.5, 0.5]], vec![1, 2, 9], vec![1, 2]);
        let c = cmc(&d).unwrap();
        assert_eq!((c.evaluated, c.excluded), (2, 1));
        assert_eq!(c.accuracy, vec![1.0, 1.0]);
        let none = dm(&[&[0.1]], vec![3], vec![1]);
        assert!(matches!(cmc(&none), Err(Error::EmptyEval(_))));
        let empty = DistanceMatrix::new(Mat::zeros(0, 3), vec![], vec![1, 2, 3]).unwrap();
        assert!(matches!(cmc(&empty), Err(Error::EmptyEval(_))));
    }

    #[test]
    fn rejects_bad_entries() {
        let v = Mat::from_fn(1, 2, |_, j| if j == 0 { -1.0 } else { 0.0 });
        assert!(DistanceMatrix::new(v, vec![1], vec![1, 2]).is_err());
        assert!(matches!(DistanceMatrix::new(Mat::zeros(1, 2), vec![1], vec![1]), Err(Error::Shape(_))));
    }

    #[test]
    fn multishot_examples() {
        let d = dm(&[&[3.0, 1.0, 4.0]], vec![1], vec![1, 1, 2]);
        let min = multishot_reduce(&d, MultiShotPolicy::Min);
        assert_eq!(min.gallery_labels, vec![1, 2]);
        assert_eq!(min.values[(0, 0)], 1.0);
        assert_eq!(min.values[(0, 1)], 4.0);
        let mean = multishot_reduce(&d, MultiShotPolicy::Mean);
        assert_eq!(mean.values[(0, 0)], 2.0);
        assert_eq!(mean.values[(0, 1)], 4.0);
    }

    fn clean(noise: f64) -> CrossViewDataset {
        synth_crossview(
            &SynthConfig {
                classes: 12,
                per_class_x: 2,
                per_class_z: 2,
                dim: 8,
                noise,
                ..Default::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn protocol_is_reproducible_and_monotone() {
        let ds = clean(0.3);
        let method = Method::Xqda(XqdaOptions::default());
        let opts = ProtocolOptions {
            trials: 4,
            seed: 9,
            ..Default::default()
        };
        let a = run_protocol(&ds, &method, &opts).unwrap();
        let b = run_protocol(&ds, &method, &opts).unwrap();
        assert!(a.same_results(&b));
        for t in &a.trials {
            let c = t.cmc.as_ref().unwrap();
            assert!(c.accuracy.windows(2).all(|w| w[1] >= w[0]));
            assert_eq!(*c.accuracy.last().unwrap(), 1.0);
        }
        assert!(a.mean.accuracy.windows(2).all(|w| w[1] >= w[0]));
        let c = run_protocol(&ds, &method, &ProtocolOptions { seed: 10, ..opts }).unwrap();
        assert_ne!(a.trials[0].train_identities, c.trials[0].train_identities);
    }

    #[test]
    fn zero_noise_is_perfect() {
        let ds = clean(0.0);
        let opts = ProtocolOptions {
            trials: 3,
            seed: 1,
            ..Default::default()
        };
        for kernel in [KernelChoice::Linear, KernelChoice::Rbf { gamma: None }] {
            let method = Method::Kxqda {
                kernel,
                options: KxqdaOptions::default(),
            };
            let r = run_protocol(&ds, &method, &opts).unwrap();
            assert_eq!(r.mean.at(1), 1.0);
        }
        // similar-pair scatter is exactly zero, so its trace-relative ridge is too
        let r = run_protocol(&ds, &Method::Xqda(XqdaOptions::default()), &opts);
        assert!(matches!(r, Err(Error::SingularDenominator { .. })));
    }

    #[test]
    fn swap_and_multishot_options() {
        let ds = clean(0.2);
        let method = Method::Kissme(KissmeOptions::default());
        let base = ProtocolOptions {
            trials: 2,
            seed: 4,
            ..Default::default()
        };
        let swapped = run_protocol(&ds, &method, &ProtocolOptions { swap_views: true, ..base.clone() }).unwrap();
        assert_eq!(swapped.mean.evaluated, 2 * 6 * 2);
        let ms = run_protocol(
            &ds,
            &method,
            &ProtocolOptions {
                multishot: Some(MultiShotPolicy::Min),
                ..base
            },
        )
        .unwrap();
        assert_eq!(ms.mean.accuracy.len(), 6);
    }

    #[test]
    fn failures_are_recorded() {
        let ds = clean(0.2);
        let method = Method::Xqda(XqdaOptions {
            memory_limit: Some(1),
            ..Default::default()
        });
        let opts = ProtocolOptions {
            trials: 2,
            ..Default::default()
        };
        assert!(matches!(run_protocol(&ds, &method, &opts), Err(Error::TooLarge(_))));
        let small = synth_crossview(
            &SynthConfig {
                classes: 3,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        assert!(matches!(run_protocol(&small, &method, &opts), Err(Error::Config(_))));
    }

    #[test]
    fn report_outputs() {
        let ds = clean(0.3);
        let r = run_protocol(
            &ds,
            &Method::Xqda(XqdaOptions::default()),
            &ProtocolOptions {
                trials: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let csv = r.to_csv();
        let acc: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert!(acc.windows(2).all(|w| w[1] >= w[0]));
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.rank_table(&[1, 5, 10, 20]).contains("r=20"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        #[allow(unused_imports)]
        use rand::Rng;

        proptest! {
            #[test]
            fn monotone_and_rank_based(seed in any::<u64>(), q in 1usize..12, g in 1usize..12) {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let values = Mat::from_fn(q, g, |_, _| r.gen_range(0.0..2.0));
                let gl: Vec<usize> = (0..g).map(|_| r.gen_range(1..=4)).collect();
                let ql: Vec<usize> = (0..q).map(|_| gl[r.gen_range(0..g)]).collect();
                let a = DistanceMatrix::new(values.clone(), ql.clone(), gl.clone()).unwrap();
                let c = cmc(&a).unwrap();
                prop_assert!(c.accuracy.windows(2).all(|w| w[1] >= w[0]));
                prop_assert_eq!(*c.accuracy.last().unwrap(), 1.0);
                let t = Mat::from_fn(q, g, |i, j| (3.0 * values[(i, j)]).exp());
                prop_assert_eq!(cmc(&DistanceMatrix::new(t, ql, gl).unwrap()).unwrap(), c);
            }
        }
    }
}
