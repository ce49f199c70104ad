//! Subcommand implementations. Each writes plain comma-delimited text to `out`.

use std::io::Write;
use std::str::FromStr;

use drm_core::asymptotics::blocks;
use drm_core::inference::{
    drm_cdf, empirical_cdf, gof_pairs, refine_tilts, threshold_probability, ThresholdSource,
};
use drm_core::simulation::{replicate_rng, run_comparison, Family, Grid, SimConfig, GAMMA_NEIGHBOR, LOGNORMAL_NEIGHBOR, REFERENCE};
use drm_core::{fit, FitOptions, FittedModel, TiltSpec};

use crate::error::{CliError, Result};
use crate::ingest::{ingest, write_records, Ingested, PeriodFilter, RecordRow};
use crate::{DataArgs, Layout, SimulateArgs, SynthArgs, ThresholdArgs};

/// How neighbor tilts are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum TiltChoice {
    /// Pairwise refinement from the global tilt.
    Auto,
    Global,
    /// One spec per neighbor, separated by `;`.
    Spec(Vec<TiltSpec>),
}

impl FromStr for TiltChoice {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(TiltChoice::Auto),
            "global" => Ok(TiltChoice::Global),
            spec => spec
                .split(';')
                .map(|p| p.parse::<TiltSpec>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(TiltChoice::Spec)
                .map_err(|e| CliError::Config(format!("bad --tilt `{spec}`: {e}"))),
        }
    }
}

fn check_level(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must lie in (0, 1), got {v}")))
    }
}

fn load(args: &DataArgs) -> Result<(Ingested, PeriodFilter)> {
    check_level("--alpha", args.alpha)?;
    let periods: PeriodFilter = args.periods.parse()?;
    let ing = ingest(&args.input, &args.reference, &args.neighbors, &periods)?;
    for (region, n) in &ing.rejected {
        if *n > 0 {
            eprintln!("note: dropped {n} non-positive value(s) for {region}");
        }
    }
    Ok((ing, periods))
}

fn resolve_tilts(args: &DataArgs, ing: &Ingested) -> Result<Vec<TiltSpec>> {
    let m = ing.neighbors.len();
    match args.tilt.parse::<TiltChoice>()? {
        TiltChoice::Auto => Ok(refine_tilts(&ing.reference, &ing.neighbors, args.alpha)?),
        TiltChoice::Global => Ok(vec![TiltSpec::global(); m]),
        TiltChoice::Spec(specs) if specs.len() == m => Ok(specs),
        TiltChoice::Spec(specs) => Err(CliError::Config(format!(
            "--tilt lists {} specification(s) for {m} neighbor(s)",
            specs.len()
        ))),
    }
}

fn fit_joint(args: &DataArgs) -> Result<(Ingested, FittedModel)> {
    let (ing, _) = load(args)?;
    let tilts = resolve_tilts(args, &ing)?;
    let data = ing.fuse(tilts)?;
    let f = fit(&data, &FitOptions::default())?;
    Ok((ing, f))
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(out)
}

pub fn cmd_fit(args: &DataArgs, out: &mut dyn Write) -> Result<()> {
    let (_, f) = fit_joint(args)?;
    let data = f.data();
    writeln!(
        out,
        "# reference={} n0={} neighbors={} n={}",
        data.reference().label(),
        data.n0(),
        data.m(),
        data.n()
    )?;
    writeln!(
        out,
        "# loglik={} iterations={} converged={} score_norm={:e}",
        f.loglik(),
        f.iterations(),
        f.converged(),
        f.score_norm()
    )?;
    let se = f.standard_errors();
    let theta = f.theta();
    let mut w = csv_writer(out);
    w.write_record(["neighbor", "tilt", "parameter", "estimate", "se"])?;
    for (k, (sample, tilt)) in data.neighbors().iter().enumerate() {
        let spec = tilt.to_spec_string();
        w.write_record([
            sample.label(),
            &spec,
            "alpha",
            &theta.alpha()[k].to_string(),
            &se[k].to_string(),
        ])?;
        let off = data.m() + data.beta_offset(k);
        for (j, (b, v)) in tilt.basis().iter().zip(theta.beta_segment(k)).enumerate() {
            w.write_record([
                sample.label(),
                &spec,
                &format!("beta[{}]", b.token()),
                &v.to_string(),
                &se[off + j].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_refine(args: &DataArgs, out: &mut dyn Write) -> Result<()> {
    let (ing, periods) = load(args)?;
    let mut w = csv_writer(out);
    let mut header = vec!["period".to_string()];
    header.extend(ing.neighbors.iter().map(|s| s.label().to_string()));
    w.write_record(&header)?;
    let per_period: Vec<(String, Ingested)> = match &periods {
        PeriodFilter::All => vec![("all".to_string(), ing)],
        PeriodFilter::Only(labels) => labels
            .iter()
            .map(|l| {
                let one = PeriodFilter::Only(vec![l.clone()]);
                ingest(&args.input, &args.reference, &args.neighbors, &one).map(|i| (l.clone(), i))
            })
            .collect::<Result<_>>()?,
    };
    for (label, ing) in per_period {
        let tilts = refine_tilts(&ing.reference, &ing.neighbors, args.alpha)?;
        let mut row = vec![label];
        row.extend(tilts.iter().map(TiltSpec::to_spec_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_threshold(args: &ThresholdArgs, out: &mut dyn Write) -> Result<()> {
    check_level("--level", args.level)?;
    if args.thresholds.is_empty() {
        return Err(CliError::Config("--thresholds needs at least one value".into()));
    }
    let (ing, f) = fit_joint(&args.data)?;
    let bb = blocks(&f)?;
    let g_drm = drm_cdf(&f);
    let g_emp = empirical_cdf(&ing.reference);
    let mut w = csv_writer(out);
    w.write_record(["method", "T", "prob", "lower", "upper", "se"])?;
    let drm = ThresholdSource::Drm { fit: &f, blocks: &bb };
    let emp = ThresholdSource::Empirical(&ing.reference);
    for (cdf, source) in [(&g_drm, drm), (&g_emp, emp)] {
        for &t in &args.thresholds {
            let e = threshold_probability(cdf, source, t, args.level)?;
            w.write_record([
                e.method.to_string(),
                t.to_string(),
                format!("{:.4e}", e.prob),
                format!("{:.4e}", e.ci.0),
                format!("{:.4e}", e.ci.1),
                format!("{:.4e}", e.se),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_gof(args: &DataArgs, out: &mut dyn Write) -> Result<()> {
    let (_, f) = fit_joint(args)?;
    let report = gof_pairs(&f);
    eprintln!("max |G_hat - G_tilde| = {:.4e}", report.max_deviation);
    let mut w = csv_writer(out);
    w.write_record(["t", "G_hat", "G_tilde"])?;
    for p in &report.points {
        w.write_record([p.t.to_string(), p.ghat.to_string(), p.gtilde.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let grid = Grid::new(args.lo, args.hi, args.steps)?;
    let cfg = SimConfig {
        replications: args.replications,
        sizes: [args.n; 3],
        grid,
        seed: args.seed,
        parallel: !args.serial,
        ..SimConfig::default()
    };
    let table = run_comparison(&cfg)?;
    eprint!("{table}");
    out.write_all(table.to_delimited().as_bytes())?;
    Ok(())
}

/// Period labels and per-region sizes of the radon-shaped layout.
const PERIODS: [&str; 6] = ["89-93", "94-98", "99-03", "04-08", "09-13", "14-17"];
const REGIONS: [(&str, [usize; 6], f64, f64); 5] = [
    ("Beaver", [816, 913, 797, 1209, 2064, 1626], 1.2, 1.0),
    ("Washington", [471, 632, 642, 1017, 1820, 1472], 1.0, 0.9),
    ("Allegheny", [12328, 11982, 6548, 7581, 12772, 8419], 1.1, 1.0),
    ("Butler", [985, 2046, 1192, 1891, 3142, 1995], 1.3, 1.1),
    ("Lawrence", [231, 476, 400, 753, 910, 660], 1.25, 1.0),
];

pub fn synth_rows(args: &SynthArgs) -> Result<Vec<RecordRow>> {
    if args.scale.is_nan() || args.scale <= 0.0 {
        return Err(CliError::Config(format!("--scale must be positive, got {}", args.scale)));
    }
    let mut rows = Vec::new();
    let mut stream = 0u64;
    let mut push = |region: &str, period: &str, family: Family, n: usize, rows: &mut Vec<RecordRow>| {
        let values = family.sample(&mut replicate_rng(args.seed, stream), n);
        stream += 1;
        rows.extend(values.into_iter().map(|value| RecordRow {
            region: region.to_string(),
            period: period.to_string(),
            value,
        }));
    };
    match args.layout {
        Layout::Radon => {
            for (region, sizes, mu, sigma) in REGIONS {
                for (period, size) in PERIODS.iter().zip(sizes) {
                    let n = ((size as f64 * args.scale).round() as usize).max(1);
                    push(region, period, Family::LogNormal { mu, sigma }, n, &mut rows);
                }
            }
        }
        Layout::Simulation => {
            for (region, family) in [("reference", REFERENCE), ("gamma", GAMMA_NEIGHBOR), ("lognormal", LOGNORMAL_NEIGHBOR)] {
                push(region, "sim", family, args.n, &mut rows);
            }
        }
    }
    Ok(rows)
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    write_records(out, &synth_rows(args)?)
}

/// Sample sizes of the radon-shaped layout for one period, in region order.
pub fn layout_sizes(period: &str) -> Option<Vec<usize>> {
    let i = PERIODS.iter().position(|p| *p == period)?;
    Some(REGIONS.iter().map(|r| r.1[i]).collect())
}

/// Region labels of the radon-shaped layout, reference first.
pub fn layout_regions() -> Vec<&'static str> {
    REGIONS.iter().map(|r| r.0).collect()
}
