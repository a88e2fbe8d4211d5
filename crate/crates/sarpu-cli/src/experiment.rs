//! Experiment configuration, execution, and CSV emission.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use sarpu::eval::{cross_validate, MetricReport, Method, Summary};
use sarpu::pu_data::{self, LabelMechanism};
use sarpu::{Dataset, EmConfig};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SARPU_OUT_DIR";

const RESULT_HEADER: [&str; 16] = [
    "dataset",
    "method",
    "mechanism",
    "c",
    "c_bar",
    "delta_c",
    "p_on",
    "p_off",
    "seed",
    "fold",
    "f1",
    "abs_prior_error",
    "propensity_mae",
    "propensity_mse",
    "iterations",
    "converged",
];

const SUMMARY_HEADER: [&str; 16] = [
    "dataset",
    "method",
    "mechanism",
    "c",
    "c_bar",
    "delta_c",
    "p_on",
    "p_off",
    "f1_mean",
    "f1_sd",
    "abs_prior_error_mean",
    "abs_prior_error_sd",
    "propensity_mae_mean",
    "propensity_mae_sd",
    "propensity_mse_mean",
    "propensity_mse_sd",
];

fn default_label_column() -> String {
    "s".into()
}

fn default_truth_column() -> String {
    "y".into()
}

fn default_fold_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_folds() -> usize {
    5
}

fn default_p_on() -> f64 {
    0.9
}

fn default_p_off() -> f64 {
    0.5
}

/// JSON mechanism spec, convertible into a library label mechanism.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MechanismSpec {
    Scar {
        c: f64,
    },
    OneVar {
        attribute: usize,
        c_bar: f64,
        delta_c: f64,
    },
    ThreeVar {
        attributes: [usize; 3],
        #[serde(default = "default_p_on")]
        p_on: f64,
        #[serde(default = "default_p_off")]
        p_off: f64,
    },
}

impl MechanismSpec {
    fn to_mechanism(&self) -> LabelMechanism {
        match *self {
            MechanismSpec::Scar { c } => LabelMechanism::Scar { c },
            MechanismSpec::OneVar {
                attribute,
                c_bar,
                delta_c,
            } => LabelMechanism::OneVarSar {
                attribute,
                c_bar,
                delta_c,
            },
            MechanismSpec::ThreeVar {
                attributes,
                p_on,
                p_off,
            } => LabelMechanism::ThreeVarSar {
                attributes,
                p_on,
                p_off,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            MechanismSpec::Scar { .. } => "scar",
            MechanismSpec::OneVar { .. } => "one-var",
            MechanismSpec::ThreeVar { .. } => "three-var",
        }
    }

    /// The (c, c_bar, delta_c, p_on, p_off) columns; absent params are empty.
    fn param_fields(&self) -> [String; 5] {
        let f = |v: f64| format!("{v}");
        match *self {
            MechanismSpec::Scar { c } => {
                [f(c), String::new(), String::new(), String::new(), String::new()]
            }
            MechanismSpec::OneVar { c_bar, delta_c, .. } => {
                [String::new(), f(c_bar), f(delta_c), String::new(), String::new()]
            }
            MechanismSpec::ThreeVar { p_on, p_off, .. } => {
                [String::new(), String::new(), String::new(), f(p_on), f(p_off)]
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default = "default_truth_column")]
    pub truth_column: String,
    #[serde(default)]
    pub rescale: bool,
    pub methods: Vec<String>,
    pub mechanism: MechanismSpec,
    #[serde(default = "default_fold_seeds")]
    pub fold_seeds: Vec<u64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub em: EmConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub write_traces: bool,
}

/// Grid over mechanism parameters; lists not applicable to the base
/// mechanism must stay empty.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub c: Vec<f64>,
    #[serde(default)]
    pub c_bar: Vec<f64>,
    #[serde(default)]
    pub delta_c: Vec<f64>,
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config `{}`", path.display()))?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .with_context(|| format!("invalid config `{}`", path.display()))?;
    if config.methods.is_empty() {
        bail!("config field `methods` is empty");
    }
    for m in &config.methods {
        Method::parse(m)?;
    }
    if config.folds < 2 {
        bail!("config field `folds` must be at least 2");
    }
    if config.fold_seeds.is_empty() {
        bail!("config field `fold_seeds` is empty");
    }
    Ok(config)
}

fn resolve_out_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn configure_pool(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            bail!("flag `--jobs` must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("worker pool setup failed")?;
    }
    Ok(())
}

fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let (ds, warnings) = pu_data::load_csv(
        &config.dataset,
        &config.label_column,
        Some(config.truth_column.as_str()),
        config.rescale,
    )
    .with_context(|| format!("dataset `{}`", config.dataset.display()))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(ds)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

struct Emitter {
    results: csv::Writer<fs::File>,
    summary: csv::Writer<fs::File>,
}

impl Emitter {
    fn create(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)
            .with_context(|| format!("cannot create output dir `{}`", out_dir.display()))?;
        let mut results = csv::Writer::from_path(out_dir.join("results.csv"))?;
        results.write_record(RESULT_HEADER)?;
        let mut summary = csv::Writer::from_path(out_dir.join("summary.csv"))?;
        summary.write_record(SUMMARY_HEADER)?;
        Ok(Self { results, summary })
    }

    fn emit(
        &mut self,
        dataset: &str,
        spec: &MechanismSpec,
        reports: &[MetricReport],
    ) -> Result<()> {
        let params = spec.param_fields();
        for report in reports {
            let mut rows: Vec<_> = report.per_fold.iter().collect();
            rows.sort_by_key(|r| (r.fold_seed, r.fold));
            for r in rows {
                self.results.write_record([
                    dataset,
                    report.method.name(),
                    spec.kind(),
                    &params[0],
                    &params[1],
                    &params[2],
                    &params[3],
                    &params[4],
                    &r.fold_seed.to_string(),
                    &r.fold.to_string(),
                    &fmt(r.f1),
                    &fmt(r.abs_prior_error),
                    &fmt_opt(r.propensity_mae),
                    &fmt_opt(r.propensity_mse),
                    &r.iterations.to_string(),
                    &r.converged.to_string(),
                ])?;
            }
            let opt_summary = |s: &Option<Summary>| match s {
                Some(s) => (fmt(s.mean), fmt(s.sd)),
                None => (String::new(), String::new()),
            };
            let (mae_mean, mae_sd) = opt_summary(&report.propensity_mae);
            let (mse_mean, mse_sd) = opt_summary(&report.propensity_mse);
            self.summary.write_record([
                dataset,
                report.method.name(),
                spec.kind(),
                &params[0],
                &params[1],
                &params[2],
                &params[3],
                &params[4],
                &fmt(report.f1.mean),
                &fmt(report.f1.sd),
                &fmt(report.abs_prior_error.mean),
                &fmt(report.abs_prior_error.sd),
                &mae_mean,
                &mae_sd,
                &mse_mean,
                &mse_sd,
            ])?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.results.flush()?;
        self.summary.flush()?;
        Ok(())
    }
}

fn write_traces(out_dir: &Path, reports: &[MetricReport]) -> Result<()> {
    for report in reports {
        for r in &report.per_fold {
            if r.trace.is_empty() {
                continue;
            }
            let name = format!(
                "trace_{}_{}_{}.csv",
                report.method.name(),
                r.fold_seed,
                r.fold
            );
            let mut w = csv::Writer::from_path(out_dir.join(name))?;
            w.write_record(["iteration", "mean_propensity", "expected_loglik"])?;
            for (i, &(mean_e, ll)) in r.trace.iter().enumerate() {
                w.write_record([&(i + 1).to_string(), &fmt(mean_e), &fmt(ll)])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn run_methods(
    ds: &Dataset,
    spec: &MechanismSpec,
    config: &ExperimentConfig,
) -> Result<Vec<MetricReport>> {
    let mech = spec.to_mechanism();
    for w in mech.screening_warnings(&ds.features) {
        eprintln!("warning: {w}");
    }
    let mut methods: Vec<Method> = config
        .methods
        .iter()
        .map(|m| Method::parse(m))
        .collect::<sarpu::Result<_>>()?;
    methods.sort_by_key(|m| m.name());
    methods.dedup();
    methods
        .into_iter()
        .map(|method| {
            cross_validate(ds, &mech, method, &config.em, &config.fold_seeds, config.folds)
                .with_context(|| format!("method `{}`", method.name()))
        })
        .collect()
}

pub fn run(config_path: &Path, out: Option<PathBuf>, jobs: Option<usize>) -> Result<()> {
    configure_pool(jobs)?;
    let config = load_config(config_path)?;
    let out_dir = resolve_out_dir(out, &config);
    let ds = load_dataset(&config)?;

    let reports = run_methods(&ds, &config.mechanism, &config)?;
    let mut emitter = Emitter::create(&out_dir)?;
    emitter.emit(&config.dataset.display().to_string(), &config.mechanism, &reports)?;
    emitter.finish()?;
    if config.write_traces {
        write_traces(&out_dir, &reports)?;
    }
    println!("wrote {}", out_dir.join("results.csv").display());
    Ok(())
}

/// Expand the grid into concrete mechanism specs, in canonical order.
fn grid_points(base: &MechanismSpec, grid: &GridSpec) -> Result<Vec<MechanismSpec>> {
    let points = match base {
        MechanismSpec::Scar { .. } => {
            if !grid.c_bar.is_empty() || !grid.delta_c.is_empty() {
                bail!("grid fields `c_bar`/`delta_c` do not apply to a scar mechanism");
            }
            grid.c.iter().map(|&c| MechanismSpec::Scar { c }).collect()
        }
        MechanismSpec::OneVar {
            attribute,
            c_bar,
            delta_c,
        } => {
            if !grid.c.is_empty() {
                bail!("grid field `c` does not apply to a one-var mechanism");
            }
            let c_bars = if grid.c_bar.is_empty() {
                vec![*c_bar]
            } else {
                grid.c_bar.clone()
            };
            let delta_cs = if grid.delta_c.is_empty() {
                vec![*delta_c]
            } else {
                grid.delta_c.clone()
            };
            if grid.c_bar.is_empty() && grid.delta_c.is_empty() {
                Vec::new()
            } else {
                c_bars
                    .iter()
                    .flat_map(|&cb| {
                        delta_cs.iter().map(move |&dc| MechanismSpec::OneVar {
                            attribute: *attribute,
                            c_bar: cb,
                            delta_c: dc,
                        })
                    })
                    .collect()
            }
        }
        MechanismSpec::ThreeVar { .. } => {
            bail!("sweeps over a three-var mechanism have no grid parameters")
        }
    };
    if points.is_empty() {
        bail!("grid is empty: no parameter values to sweep");
    }
    Ok(points)
}

pub fn sweep(
    config_path: &Path,
    grid_path: &Path,
    out: Option<PathBuf>,
    jobs: Option<usize>,
) -> Result<()> {
    configure_pool(jobs)?;
    let config = load_config(config_path)?;
    let text = fs::read_to_string(grid_path)
        .with_context(|| format!("cannot read grid `{}`", grid_path.display()))?;
    let grid: GridSpec = serde_json::from_str(&text)
        .with_context(|| format!("invalid grid `{}`", grid_path.display()))?;
    let points = grid_points(&config.mechanism, &grid)?;

    let out_dir = resolve_out_dir(out, &config);
    let ds = load_dataset(&config)?;
    let mut emitter = Emitter::create(&out_dir)?;
    let dataset_name = config.dataset.display().to_string();
    for (i, spec) in points.iter().enumerate() {
        let reports = run_methods(&ds, spec, &config)?;
        emitter.emit(&dataset_name, spec, &reports)?;
        if config.write_traces {
            let point_dir = out_dir.join(format!("point_{i}"));
            fs::create_dir_all(&point_dir)?;
            write_traces(&point_dir, &reports)?;
        }
    }
    emitter.finish()?;
    println!("wrote {}", out_dir.join("results.csv").display());
    Ok(())
}

pub fn label(data: &Path, mechanism_path: &Path, seed: u64, out: &Path) -> Result<()> {
    let text = fs::read_to_string(mechanism_path)
        .with_context(|| format!("cannot read mechanism `{}`", mechanism_path.display()))?;
    let spec: MechanismSpec = serde_json::from_str(&text)
        .with_context(|| format!("invalid mechanism `{}`", mechanism_path.display()))?;
    let (ds, warnings) = pu_data::load_csv(data, "s", Some("y"), false)
        .with_context(|| format!("dataset `{}`", data.display()))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let y = ds
        .y
        .as_ref()
        .context("labeling requires a ground-truth column `y`")?;
    let mech = spec.to_mechanism();
    for w in mech.screening_warnings(&ds.features) {
        eprintln!("warning: {w}");
    }
    let s = pu_data::apply_mechanism(y, &ds.features, &mech, seed)?;
    let relabeled = ds.relabeled(s)?;
    pu_data::save_csv(&relabeled, out)?;
    println!("wrote {}", out.display());
    Ok(())
}
