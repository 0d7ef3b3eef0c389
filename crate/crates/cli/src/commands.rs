//! Subcommand execution. Each command resolves and validates every setting
//! first, computes all results in memory, and only then hands back the files
//! to write.

use std::path::PathBuf;

use eopr_core::baselines::{Method, QpOptions, RscConfig};
use eopr_core::eopr::{self, DEFAULT_HOLDOUT_FRACTION, DEFAULT_LAMBDA_GRID};
use eopr_core::estimator::{fit_method, Counterfactual, LambdaChoice, MethodSpec};
use eopr_core::evaluation::{inject_effect, lambda_ablation, placebo_run, score, sweep, EffectShape, Summary};
use eopr_core::panel::{
    align_by_intervention, differences, load_panel, moving_average, normalize, write_long, write_wide, AlignmentSpec,
    AlignmentWindow, Layout, NormalizationRecord, NormalizationScheme,
};
use eopr_core::simulation::{generate_panel, SimulationConfig, WeightMode};
use eopr_core::PanelData;
use nalgebra::DVector;
use rayon::prelude::*;
use serde_json::json;

use crate::args::{
    AblateArgs, AlignArgs, Command, FitArgs, List, MethodArgs, OutputArgs, PanelArgs, PlaceboArgs, SimParams,
    SimulateArgs, SweepArgs,
};
use crate::config::Resolver;
use crate::error::{CliError, Result};
use crate::report::{schema_line, Cell, Format, Output, Table, SCHEMA_VERSION};

const DEFAULT_OUT: &str = "eopr_out";
const ALL_METHODS: [Method; 4] = [Method::Eopr, Method::Sc, Method::Dsc, Method::Rsc];

/// Files produced by one subcommand, not yet written.
#[derive(Debug)]
pub struct Plan {
    pub out_dir: PathBuf,
    pub outputs: Vec<Output>,
}

pub fn run(command: Command, r: &mut Resolver) -> Result<Plan> {
    match command {
        Command::Fit(a) => {
            let s = FitSettings::resolve(a, r)?;
            r.finish()?;
            s.execute()
        }
        Command::Placebo(a) => {
            let s = PlaceboSettings::resolve(a, r)?;
            r.finish()?;
            s.execute()
        }
        Command::Ablate(a) => {
            let s = AblateSettings::resolve(a, r)?;
            r.finish()?;
            s.execute()
        }
        Command::Simulate(a) => {
            let s = SimulateSettings::resolve(a, r)?;
            r.finish()?;
            s.execute()
        }
        Command::Sweep(a) => {
            let s = SweepSettings::resolve(a, r)?;
            r.finish()?;
            s.execute()
        }
        Command::Align(a) => {
            let s = AlignSettings::resolve(a, r)?;
            r.finish()?;
            s.execute()
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn check_finite(name: &str, v: f64, min: f64) -> Result<f64> {
    if v.is_finite() && v >= min {
        Ok(v)
    } else {
        Err(invalid(format!("`{name}` must be finite and >= {min}, got {v}")))
    }
}

struct PanelSource {
    input: PathBuf,
    layout: Layout,
    treated: String,
    t0: usize,
    scheme: NormalizationScheme,
}

/// Panel in original units plus its normalized copy used for fitting.
struct LoadedPanel {
    raw: PanelData,
    fit: PanelData,
    record: NormalizationRecord,
}

impl PanelSource {
    fn resolve(a: PanelArgs, r: &mut Resolver) -> Result<Self> {
        Ok(Self {
            input: r.required("input", a.input)?,
            layout: r.or("layout", a.layout, Layout::Wide)?,
            treated: r.required("treated", a.treated)?,
            t0: r.required("t0", a.t0)?,
            scheme: r.or("normalize", a.normalize, NormalizationScheme::None)?,
        })
    }

    fn load(&self) -> Result<LoadedPanel> {
        let raw = load_panel(&self.input, self.layout, &self.treated, self.t0)?;
        let (fit, record) = normalize(&raw, self.scheme)?;
        Ok(LoadedPanel { raw, fit, record })
    }
}

struct OutputSettings {
    dir: PathBuf,
    format: Format,
}

impl OutputSettings {
    fn resolve(a: OutputArgs, r: &mut Resolver) -> Result<Self> {
        Ok(Self {
            dir: r.or("out", a.out, PathBuf::from(DEFAULT_OUT))?,
            format: r.or("format", a.format, Format::Csv)?,
        })
    }
}

struct MethodParams {
    lambda: Option<f64>,
    grid: Vec<f64>,
    holdout: f64,
    rsc: RscConfig,
    qp: QpOptions,
}

impl MethodParams {
    fn resolve(a: MethodArgs, r: &mut Resolver) -> Result<Self> {
        let rsc_default = RscConfig::default();
        let qp_default = QpOptions::default();
        let params = Self {
            lambda: r.get("lambda", a.lambda)?,
            grid: r.or("lambda-grid", a.lambda_grid, List(DEFAULT_LAMBDA_GRID.to_vec()))?.0,
            holdout: r.or("holdout-fraction", a.holdout_fraction, DEFAULT_HOLDOUT_FRACTION)?,
            rsc: RscConfig {
                singular_value_cutoff_ratio: r.or("rsc-ratio", a.rsc_ratio, rsc_default.singular_value_cutoff_ratio)?,
                ridge: r.or("rsc-ridge", a.rsc_ridge, rsc_default.ridge)?,
            },
            qp: QpOptions {
                max_iters: r.or("qp-max-iters", a.qp_max_iters, qp_default.max_iters)?,
                tol: r.or("qp-tol", a.qp_tol, qp_default.tol)?,
            },
        };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            check_finite("lambda", l, 0.0)?;
        }
        if let Some(bad) = self.grid.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(invalid(format!("`lambda-grid` values must be > 0, got {bad}")));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(invalid(format!("`holdout-fraction` must lie in (0, 1), got {}", self.holdout)));
        }
        self.rsc.validate()?;
        if self.qp.max_iters == 0 {
            return Err(invalid("`qp-max-iters` must be >= 1"));
        }
        check_finite("qp-tol", self.qp.tol, 0.0)?;
        Ok(())
    }

    fn spec(&self, method: Method) -> MethodSpec {
        match method {
            Method::Eopr => MethodSpec::Eopr {
                lambda: match self.lambda {
                    Some(l) => LambdaChoice::Fixed(l),
                    None => LambdaChoice::Select {
                        grid: self.grid.clone(),
                        holdout_fraction: self.holdout,
                    },
                },
            },
            Method::Sc => MethodSpec::Sc { qp: self.qp },
            Method::Dsc => MethodSpec::Dsc { qp: self.qp },
            Method::Rsc => MethodSpec::Rsc { config: self.rsc },
        }
    }
}

fn resolve_methods(r: &mut Resolver, flag: Option<List<Method>>) -> Result<Vec<Method>> {
    let methods = r.or("methods", flag, List(ALL_METHODS.to_vec()))?.0;
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(invalid(format!("method `{m}` listed twice")));
        }
    }
    Ok(methods)
}

struct FitSettings {
    source: PanelSource,
    methods: Vec<Method>,
    params: MethodParams,
    output: OutputSettings,
}

impl FitSettings {
    fn resolve(a: FitArgs, r: &mut Resolver) -> Result<Self> {
        Ok(Self {
            source: PanelSource::resolve(a.panel, r)?,
            methods: resolve_methods(r, a.methods)?,
            params: MethodParams::resolve(a.method, r)?,
            output: OutputSettings::resolve(a.output, r)?,
        })
    }

    fn execute(self) -> Result<Plan> {
        let p = self.source.load()?;
        let fits: Vec<Counterfactual> = self
            .methods
            .par_iter()
            .map(|m| fit_method(&p.fit, &self.params.spec(*m)))
            .collect::<eopr_core::Result<_>>()?;

        let (t0, t) = (p.raw.t0(), p.raw.t_total());
        let times = p.raw.time_labels();
        let observed = p.raw.treated();
        let rec = p.record;
        let fmt = self.output.format;
        let mut outputs = Vec::new();
        let mut effects = Table::new("effects", &["time", "method", "observed", "estimate", "effect"]);
        let mut scores = Table::new("scores", &["method", "lambda", "normalization", "pre_rmse", "post_rmse"]);

        for cf in &fits {
            let estimate = DVector::from_vec(rec.invert_series(cf.s_hat.as_slice()));
            let band = cf.band.as_ref().map(|(lo, hi)| {
                (
                    DVector::from_vec(rec.invert_series(lo.as_slice())),
                    DVector::from_vec(rec.invert_series(hi.as_slice())),
                )
            });
            let mut table = Table::new(
                "estimate",
                &["time", "observed", "method", "estimate", "band_lower", "band_upper"],
            );
            for k in 0..t {
                let (lo, hi) = match &band {
                    Some((lo, hi)) => (Cell::Num(lo[k]), Cell::Num(hi[k])),
                    None => (Cell::Empty, Cell::Empty),
                };
                table.push(vec![
                    times[k].as_str().into(),
                    observed[k].into(),
                    cf.method.as_str().into(),
                    estimate[k].into(),
                    lo,
                    hi,
                ]);
            }
            outputs.push(Output::table(&format!("estimate_{}", cf.method), &table, fmt));

            if let Some((lo, hi)) = &band {
                let mut table = Table::new(
                    "band",
                    &["time", "period", "observed", "estimate", "band_lower", "band_upper", "half_width"],
                );
                for k in 0..t {
                    table.push(vec![
                        times[k].as_str().into(),
                        (if k < t0 { "pre" } else { "post" }).into(),
                        observed[k].into(),
                        estimate[k].into(),
                        lo[k].into(),
                        hi[k].into(),
                        (0.5 * (hi[k] - lo[k])).into(),
                    ]);
                }
                outputs.push(Output::table(&format!("band_{}", cf.method), &table, fmt));
            }

            let tau = eopr::effect_series(&estimate, observed, t0)?;
            for (k, tau_k) in (t0..t).zip(tau) {
                effects.push(vec![
                    times[k].as_str().into(),
                    cf.method.as_str().into(),
                    observed[k].into(),
                    estimate[k].into(),
                    tau_k.into(),
                ]);
            }
            let s = score(&p.raw, &estimate, cf.method)?;
            scores.push(vec![
                cf.method.as_str().into(),
                Cell::opt(cf.lambda),
                rec.scheme.as_str().into(),
                s.pre_rmse.into(),
                s.post_rmse.into(),
            ]);
        }
        outputs.push(Output::table("effects", &effects, fmt));
        outputs.push(Output::table("scores", &scores, fmt));
        Ok(Plan {
            out_dir: self.output.dir,
            outputs,
        })
    }
}

struct PlaceboSettings {
    source: PanelSource,
    method: Method,
    params: MethodParams,
    output: OutputSettings,
}

impl PlaceboSettings {
    fn resolve(a: PlaceboArgs, r: &mut Resolver) -> Result<Self> {
        Ok(Self {
            source: PanelSource::resolve(a.panel, r)?,
            method: r.or("method", a.placebo_method, Method::Eopr)?,
            params: MethodParams::resolve(a.method, r)?,
            output: OutputSettings::resolve(a.output, r)?,
        })
    }

    fn execute(self) -> Result<Plan> {
        let p = self.source.load()?;
        let report = placebo_run(&p.fit, &self.params.spec(self.method))?;
        let rec = p.record;
        let times = p.raw.time_labels();
        let fmt = self.output.format;

        let mut gaps = Table::new("placebo_gaps", &["unit", "is_treated", "time", "gap"]);
        let mut summary = Table::new(
            "placebo_summary",
            &["unit", "is_treated", "method", "post_gap_rmse", "rank", "error"],
        );
        for e in &report.entries {
            if let Some(gap) = &e.gap {
                for (k, g) in gap.iter().enumerate() {
                    gaps.push(vec![
                        e.unit.as_str().into(),
                        e.is_treated.into(),
                        times[k].as_str().into(),
                        rec.invert_difference(*g).into(),
                    ]);
                }
            }
            let rank = e.post_gap_rmse.map(|mine| {
                1 + report
                    .entries
                    .iter()
                    .filter(|o| o.post_gap_rmse.is_some_and(|x| x > mine))
                    .count()
            });
            summary.push(vec![
                e.unit.as_str().into(),
                e.is_treated.into(),
                self.method.as_str().into(),
                Cell::opt(e.post_gap_rmse.map(|x| rec.invert_difference(x))),
                rank.map(Cell::from).unwrap_or(Cell::Empty),
                e.error.clone().map(Cell::Text).unwrap_or(Cell::Empty),
            ]);
        }
        if report.failures() > 0 {
            eprintln!("warning: {} placebo fit(s) failed; see the error column", report.failures());
        }
        Ok(Plan {
            out_dir: self.output.dir,
            outputs: vec![
                Output::table("placebo_gaps", &gaps, fmt),
                Output::table("placebo_summary", &summary, fmt),
            ],
        })
    }
}

struct AblateSettings {
    source: PanelSource,
    grid: Vec<f64>,
    holdout: f64,
    output: OutputSettings,
}

impl AblateSettings {
    fn resolve(a: AblateArgs, r: &mut Resolver) -> Result<Self> {
        let mut default_grid = vec![0.0];
        default_grid.extend(DEFAULT_LAMBDA_GRID);
        let s = Self {
            source: PanelSource::resolve(a.panel, r)?,
            grid: r.or("lambda-grid", a.lambda_grid, List(default_grid))?.0,
            holdout: r.or("holdout-fraction", a.holdout_fraction, DEFAULT_HOLDOUT_FRACTION)?,
            output: OutputSettings::resolve(a.output, r)?,
        };
        for &l in &s.grid {
            check_finite("lambda-grid", l, 0.0)?;
        }
        if !(s.holdout > 0.0 && s.holdout < 1.0) {
            return Err(invalid(format!("`holdout-fraction` must lie in (0, 1), got {}", s.holdout)));
        }
        Ok(s)
    }

    fn execute(self) -> Result<Plan> {
        let p = self.source.load()?;
        let positive: Vec<f64> = self.grid.iter().copied().filter(|l| *l > 0.0).collect();
        let selected = if positive.is_empty() {
            None
        } else {
            match eopr::select_lambda(&p.fit, &positive, self.holdout) {
                Ok(l) => Some(l),
                Err(e) => {
                    eprintln!("warning: λ selection failed ({e}); no row is marked selected");
                    None
                }
            }
        };
        let rows = lambda_ablation(&p.fit, &self.grid)?;
        let rec = p.record;
        let mut table = Table::new("ablation", &["lambda", "pre_rmse", "post_rmse", "selected", "error"]);
        for row in rows {
            table.push(vec![
                row.lambda.into(),
                Cell::opt(row.pre_rmse.map(|x| rec.invert_difference(x))),
                Cell::opt(row.post_rmse.map(|x| rec.invert_difference(x))),
                (selected == Some(row.lambda)).into(),
                row.error.map(Cell::Text).unwrap_or(Cell::Empty),
            ]);
        }
        Ok(Plan {
            out_dir: self.output.dir,
            outputs: vec![Output::table("ablation", &table, self.output.format)],
        })
    }
}

struct SimDefaults {
    noise_sigma: f64,
    pool_size: usize,
    weight_mode: WeightMode,
    treated_noise: bool,
    seed: u64,
}

impl SimDefaults {
    fn resolve(a: SimParams, r: &mut Resolver) -> Result<Self> {
        Ok(Self {
            noise_sigma: r.or("noise-sigma", a.noise_sigma, 1.0)?,
            pool_size: r.or("pool-size", a.pool_size, 10)?,
            weight_mode: r.or("weight-mode", a.weight_mode, WeightMode::Equal)?,
            treated_noise: r.or("treated-noise", a.treated_noise, true)?,
            seed: r.or("seed", a.seed, 0)?,
        })
    }

    fn config(&self, n_units: usize, t_total: usize, t0: usize) -> SimulationConfig {
        SimulationConfig {
            n_units,
            t_total,
            t0,
            pool_size: self.pool_size,
            noise_sigma: self.noise_sigma,
            treated_noise: self.treated_noise,
            weight_mode: self.weight_mode,
            seed: self.seed,
        }
    }
}

struct SimulateSettings {
    config: SimulationConfig,
    effect: f64,
    shape: EffectShape,
    out: PathBuf,
}

impl SimulateSettings {
    fn resolve(a: SimulateArgs, r: &mut Resolver) -> Result<Self> {
        let n = r.or("n-units", a.n_units, 50)?;
        let t = r.or("t-total", a.t_total, 200)?;
        let t0 = r.or("t0", a.t0, 20)?;
        let sim = SimDefaults::resolve(a.sim, r)?;
        let s = Self {
            config: sim.config(n, t, t0),
            effect: r.or("effect", a.effect, 0.0)?,
            shape: r.or("effect-shape", a.effect_shape, EffectShape::Step)?,
            out: r.or("out", a.out, PathBuf::from(DEFAULT_OUT))?,
        };
        s.config.validate()?;
        check_finite("effect", s.effect, f64::NEG_INFINITY)?;
        Ok(s)
    }

    fn execute(self) -> Result<Plan> {
        let sim = generate_panel(&self.config)?;
        let panel = inject_effect(&sim.panel, self.shape, self.effect)?;
        let metadata = json!({
            "schema": "simulation",
            "version": SCHEMA_VERSION,
            "config": sim.config,
            "effect": { "magnitude": self.effect, "shape": self.shape },
            "theta": sim.theta,
            "rho": sim.rho,
            "treated_weights": sim.treated_weights,
        });
        let mut meta = serde_json::to_vec_pretty(&metadata).expect("metadata serializes");
        meta.push(b'\n');
        Ok(Plan {
            out_dir: self.out,
            outputs: vec![
                panel_output("panel.csv", &panel, Layout::Wide)?,
                panel_output("truth.csv", &sim.truth, Layout::Wide)?,
                Output {
                    name: "metadata.json".into(),
                    bytes: meta,
                },
            ],
        })
    }
}

fn panel_output(name: &str, panel: &PanelData, layout: Layout) -> Result<Output> {
    let mut bytes = schema_line("panel").into_bytes();
    match layout {
        Layout::Wide => write_wide(panel, &mut bytes)?,
        Layout::Long => write_long(panel, &mut bytes)?,
    }
    Ok(Output {
        name: name.into(),
        bytes,
    })
}

struct SweepSettings {
    configs: Vec<SimulationConfig>,
    repeats: usize,
    methods: Vec<Method>,
    scheme: NormalizationScheme,
    params: MethodParams,
    output: OutputSettings,
}

impl SweepSettings {
    fn resolve(a: SweepArgs, r: &mut Resolver) -> Result<Self> {
        let ns = r.or("n-units", a.n_units, List(vec![50usize]))?.0;
        let ts = r.or("t-total", a.t_total, List(vec![200usize]))?.0;
        let fractions = r
            .or(
                "t0-fractions",
                a.t0_fractions,
                List(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]),
            )?
            .0;
        let repeats = r.or("repeats", a.repeats, 10)?;
        let sim = SimDefaults::resolve(a.sim, r)?;
        let s = Self {
            configs: Vec::new(),
            repeats,
            methods: resolve_methods(r, a.methods)?,
            scheme: r.or("normalize", a.normalize, NormalizationScheme::None)?,
            params: MethodParams::resolve(a.method, r)?,
            output: OutputSettings::resolve(a.output, r)?,
        };
        if repeats == 0 {
            return Err(invalid("`repeats` must be >= 1"));
        }
        let mut configs = Vec::new();
        for &n in &ns {
            for &t in &ts {
                for &f in &fractions {
                    if !(f > 0.0 && f < 1.0) {
                        return Err(invalid(format!("`t0-fractions` must lie in (0, 1), got {f}")));
                    }
                    let t0 = ((f * t as f64).round() as usize).clamp(1, t.saturating_sub(1).max(1));
                    let cfg = sim.config(n, t, t0);
                    cfg.validate()?;
                    configs.push(cfg);
                }
            }
        }
        Ok(Self { configs, ..s })
    }

    fn execute(self) -> Result<Plan> {
        let specs: Vec<MethodSpec> = self.methods.iter().map(|m| self.params.spec(*m)).collect();
        let result = sweep(&self.configs, &specs, self.repeats, self.scheme)?;
        let stats = |s: &Summary| vec![Cell::Num(s.mean), Cell::Num(s.std), Cell::Num(s.median)];
        let mut summary = Table::new(
            "sweep_summary",
            &[
                "config",
                "n_units",
                "t_total",
                "t0",
                "noise_sigma",
                "seed",
                "method",
                "runs",
                "failures",
                "pre_rmse_mean",
                "pre_rmse_std",
                "pre_rmse_median",
                "post_rmse_mean",
                "post_rmse_std",
                "post_rmse_median",
                "post_rmse_truth_mean",
                "post_rmse_truth_std",
                "post_rmse_truth_median",
            ],
        );
        for row in &result.rows {
            let c = &row.config;
            let mut cells: Vec<Cell> = vec![
                row.config_index.into(),
                c.n_units.into(),
                c.t_total.into(),
                c.t0.into(),
                c.noise_sigma.into(),
                Cell::Text(c.seed.to_string()),
                row.method.as_str().into(),
                row.runs.into(),
                row.failures.into(),
            ];
            cells.extend(stats(&row.pre_rmse));
            cells.extend(stats(&row.post_rmse));
            cells.extend(stats(&row.post_rmse_truth));
            summary.push(cells);
        }
        let mut runs = Table::new(
            "sweep_runs",
            &["config", "repeat", "seed", "method", "pre_rmse", "post_rmse", "post_rmse_truth"],
        );
        for run in &result.runs {
            runs.push(vec![
                run.config_index.into(),
                run.repeat.into(),
                Cell::Text(run.seed.to_string()),
                run.method.as_str().into(),
                run.pre_rmse.into(),
                run.post_rmse.into(),
                run.post_rmse_truth.into(),
            ]);
        }
        let fmt = self.output.format;
        Ok(Plan {
            out_dir: self.output.dir,
            outputs: vec![
                Output::table("sweep_summary", &summary, fmt),
                Output::table("sweep_runs", &runs, fmt),
            ],
        })
    }
}

struct AlignSettings {
    input: PathBuf,
    dates: PathBuf,
    treated: String,
    window: AlignmentWindow,
    smooth: usize,
    difference: bool,
    layout: Layout,
    out: PathBuf,
}

impl AlignSettings {
    fn resolve(a: AlignArgs, r: &mut Resolver) -> Result<Self> {
        let s = Self {
            input: r.required("input", a.input)?,
            dates: r.required("dates", a.dates)?,
            treated: r.required("treated", a.treated)?,
            window: AlignmentWindow {
                pre_days: r.required("pre-days", a.pre_days)?,
                post_days: r.required("post-days", a.post_days)?,
            },
            smooth: r.or("smooth", a.smooth, 1)?,
            difference: r.or("difference", a.difference, false)?,
            layout: r.or("layout", a.layout, Layout::Wide)?,
            out: r.or("out", a.out, PathBuf::from(DEFAULT_OUT))?,
        };
        if s.smooth == 0 {
            return Err(invalid("`smooth` must be >= 1"));
        }
        Ok(s)
    }

    fn execute(self) -> Result<Plan> {
        let mut spec = AlignmentSpec::from_files(&self.input, &self.dates, &self.treated)?;
        if self.difference {
            spec = spec.map_series(differences);
        }
        if self.smooth > 1 {
            spec = spec.map_series(|s| moving_average(s, self.smooth));
        }
        let panel = align_by_intervention(&spec, self.window)?;
        let metadata = json!({
            "schema": "alignment",
            "version": SCHEMA_VERSION,
            "treated": panel.treated_label(),
            "units": panel.unit_labels(),
            "t_total": panel.t_total(),
            "t0": panel.t0(),
            "pre_days": self.window.pre_days,
            "post_days": self.window.post_days,
            "smooth": self.smooth,
            "difference": self.difference,
            "layout": self.layout,
        });
        let mut meta = serde_json::to_vec_pretty(&metadata).expect("metadata serializes");
        meta.push(b'\n');
        Ok(Plan {
            out_dir: self.out,
            outputs: vec![
                panel_output("panel.csv", &panel, self.layout)?,
                Output {
                    name: "alignment.json".into(),
                    bytes: meta,
                },
            ],
        })
    }
}
