//! One function per subcommand, plus the run manifest every command
//! writes. Each command reads its sections from the config, runs the
//! library, and leaves a fixed set of artifacts in the output directory.
//! A fit that finishes without converging still writes its report before
//! the command fails, so the partial answer stays inspectable.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use rabifit::model::{dispersive_shift, kappa_broadening, rabi_branches};
use rabifit::spectrum::linspace;
use rabifit::units::{gauss_to_tesla, mhz_to_rad_s, rad_s_to_mhz, tesla_to_gauss};
use rabifit::{
    asymptotic_threshold_ratio, average_coupling_over_length, extract_dip_track,
    extract_linewidth_profile, fit_dispersive_track_with, fit_full_s11_map_with,
    fit_kappa_lorentzian_with, fit_position_sinusoid, fit_rabi_branches_with,
    mean_coupling_over_length, merge_point_scan, simulate_map, sqrt_n_regression, CavityParams,
    CouplingVsN, DerivedQuantities, ExpectedBranches, FitResult, MapFitSetup, PositionProfile,
    SinusoidParams, SpectrumMap, SpinEnsembleParams,
};

use crate::config::RunConfig;
use crate::plot::{self, Draw, Overlay, Series};
use crate::report::{Report, Unit};
use crate::{spectrum_io, synth, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Simulate,
    FitDispersive,
    FitKappa,
    FitBranches,
    FitMap,
    ThresholdScan,
    Nscale,
    Position,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::FitDispersive => "fit-dispersive",
            CommandKind::FitKappa => "fit-kappa",
            CommandKind::FitBranches => "fit-branches",
            CommandKind::FitMap => "fit-map",
            CommandKind::ThresholdScan => "threshold-scan",
            CommandKind::Nscale => "nscale",
            CommandKind::Position => "position",
        }
    }
}

/// Everything a command needs besides its config sections.
pub struct RunContext {
    pub config: RunConfig,
    /// Raw config bytes, hashed into the manifest.
    pub config_bytes: Vec<u8>,
    pub out_dir: PathBuf,
    /// `--seed`, overriding the config's noise seed.
    pub seed_override: Option<u64>,
    pub quiet: bool,
}

impl RunContext {
    pub fn new(
        config_path: &Path,
        out_dir: PathBuf,
        seed_override: Option<u64>,
        quiet: bool,
    ) -> Result<Self> {
        let (config, config_bytes) = RunConfig::load(config_path)?;
        std::fs::create_dir_all(&out_dir).map_err(|e| {
            CliError::Internal(format!(
                "cannot create output directory {}: {e}",
                out_dir.display()
            ))
        })?;
        Ok(RunContext {
            config,
            config_bytes,
            out_dir,
            seed_override,
            quiet,
        })
    }

    fn say(&self, line: &str) {
        if !self.quiet {
            println!("{line}");
        }
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    /// Records what would be needed to reproduce this run byte-for-byte:
    /// the exact config (by hash), the effective seed, and the versions.
    fn write_manifest(&self, command: CommandKind, seed: Option<u64>) -> Result<()> {
        let digest = Sha256::digest(&self.config_bytes);
        let manifest = serde_json::json!({
            "command": command.name(),
            "config_sha256": format!("{digest:x}"),
            "seed": seed,
            "versions": {
                "rabifit-cli": env!("CARGO_PKG_VERSION"),
                "rabifit": rabifit::VERSION,
            },
        });
        let path = self.path("manifest.json");
        let body = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Internal(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, body + "\n").map_err(|e| CliError::write_failed(&path, e))
    }

    /// Writes and prints the report; a non-converged fit becomes the
    /// command's failure after its artifacts are on disk.
    fn finish(&self, report: Report) -> Result<()> {
        report.write(&self.out_dir)?;
        if !self.quiet {
            print!("{}", report.text());
        }
        if report.converged == Some(false) {
            return Err(CliError::NonConvergence(format!(
                "stopped after {} iterations; see {}",
                report.iterations.unwrap_or(0),
                self.path("report.json").display()
            )));
        }
        Ok(())
    }

    fn read_input_map(&self) -> Result<SpectrumMap> {
        let input = self.config.input()?;
        spectrum_io::read_map(Path::new(input))
    }
}

pub fn run(command: CommandKind, ctx: &RunContext) -> Result<()> {
    if let Some(declared) = &ctx.config.command {
        if declared != command.name() {
            return Err(CliError::Config(format!(
                "config declares command = \"{declared}\" but \"{}\" was invoked",
                command.name()
            )));
        }
    }
    match command {
        CommandKind::Simulate => simulate(ctx),
        CommandKind::FitDispersive => fit_dispersive(ctx),
        CommandKind::FitKappa => fit_kappa(ctx),
        CommandKind::FitBranches => fit_branches(ctx),
        CommandKind::FitMap => fit_map(ctx),
        CommandKind::ThresholdScan => threshold_scan(ctx),
        CommandKind::Nscale => nscale(ctx),
        CommandKind::Position => position(ctx),
    }
}

fn simulate(ctx: &RunContext) -> Result<()> {
    let cav = ctx.config.cavity()?.build()?;
    let spins = ctx.config.spins()?.build()?;
    let (field_gauss, freq_mhz) = ctx.config.grid()?.axes()?;
    let field_axis: Vec<f64> = field_gauss.iter().map(|&b| gauss_to_tesla(b)).collect();
    let freq_axis: Vec<f64> = freq_mhz.iter().map(|&f| mhz_to_rad_s(f)).collect();

    let clean = simulate_map(&cav, &spins, &field_axis, &freq_axis)
        .map_err(CliError::config_from)?;
    let noise = ctx.config.noise(ctx.seed_override)?;
    let map = match &noise {
        Some(n) => synth::apply_noise(&clean, n)?,
        None => clean,
    };

    let scale = ctx.config.output_scale()?;
    spectrum_io::write_map(&map, scale, &ctx.path("map.csv"))?;

    let truth = synth::truth_json(&cav, &spins, noise.as_ref());
    let truth_path = ctx.path("truth.json");
    let body = serde_json::to_string_pretty(&truth)
        .map_err(|e| CliError::Internal(format!("truth serialization: {e}")))?;
    std::fs::write(&truth_path, body + "\n").map_err(|e| CliError::write_failed(&truth_path, e))?;

    plot::map_svg(&map, &[], "simulated reflection map", &ctx.path("plot.svg"))?;
    ctx.write_manifest(CommandKind::Simulate, noise.map(|n| n.seed))?;

    let derived = DerivedQuantities::from_params(&cav, &spins);
    let mut report = Report::new(CommandKind::Simulate.name());
    report.engine_note = Some(format!("coupling regime: {}", derived.regime));
    report.push_value("g_c/2pi", derived.g_c, Unit::RateMhz, "input");
    report.push_value("gamma_s/2pi", spins.gamma_s, Unit::RateMhz, "input");
    report.push_value("kappa_c/2pi", cav.kappa_c, Unit::RateMhz, "input");
    report.push_value("kappa_e/2pi", cav.kappa_e, Unit::RateMhz, "input");
    report.push_value("omega_c/2pi", cav.omega_c, Unit::RateMhz, "input");
    report.push_value("b_r", spins.resonance_field, Unit::FieldGauss, "input");
    report.push_value(
        "cooperativity",
        derived.cooperativity,
        Unit::Dimensionless,
        "derived",
    );
    ctx.finish(report)?;
    ctx.say(&format!(
        "wrote map.csv, truth.json, plot.svg, manifest.json to {}",
        ctx.out_dir.display()
    ));
    Ok(())
}

fn fit_dispersive(ctx: &RunContext) -> Result<()> {
    let map = ctx.read_input_map()?;
    let track = extract_dip_track(&map, ExpectedBranches::One).map_err(CliError::data_from)?;
    let slope = ctx.config.fit_slope_si();
    let fit = fit_dispersive_track_with(&track, slope, &ctx.config.lm_options())
        .map_err(CliError::data_from)?;

    spectrum_io::write_track(&track, &ctx.path("track.csv"))?;

    let curve = dense_fields(&map);
    let model_points: Vec<(f64, f64)> = curve
        .iter()
        .map(|&b| {
            let delta = slope * (b - fit.value("b_r"));
            (
                b,
                dispersive_shift(delta, fit.value("omega_c"), fit.value("g_c"), fit.value("gamma_s")),
            )
        })
        .collect();
    let overlays = vec![
        Overlay {
            label: "extracted dips".into(),
            points: track.field.iter().cloned().zip(track.frequency.iter().cloned()).collect(),
        },
        Overlay {
            label: "fitted pull curve".into(),
            points: model_points,
        },
    ];
    plot::map_svg(&map, &overlays, "dispersive shift fit", &ctx.path("plot.svg"))?;
    ctx.write_manifest(CommandKind::FitDispersive, ctx.seed_override)?;

    let mut report = Report::new(CommandKind::FitDispersive.name()).with_fit_status(&fit);
    report.push_param(&fit, "g_c", "g_c/2pi", Unit::RateMhz);
    report.push_param(&fit, "gamma_s", "gamma_s/2pi", Unit::RateMhz);
    report.push_param(&fit, "omega_c", "omega_c/2pi", Unit::RateMhz);
    report.push_param(&fit, "b_r", "b_r", Unit::FieldGauss);
    ctx.finish(report)
}

fn fit_kappa(ctx: &RunContext) -> Result<()> {
    let map = ctx.read_input_map()?;
    let profile = extract_linewidth_profile(&map).map_err(CliError::data_from)?;
    let slope = ctx.config.fit_slope_si();
    let fit = fit_kappa_lorentzian_with(&profile.field, &profile.kappa, slope, &ctx.config.lm_options())
        .map_err(CliError::data_from)?;

    let rows: Vec<(f64, f64)> = profile
        .field
        .iter()
        .zip(&profile.kappa)
        .map(|(&b, &k)| (tesla_to_gauss(b), rad_s_to_mhz(k)))
        .collect();
    spectrum_io::write_xy_csv(&ctx.path("profile.csv"), "field_G", "kappa_MHz", &rows)?;

    let curve: Vec<(f64, f64)> = linspace(
        profile.field[0],
        profile.field[profile.field.len() - 1],
        301,
    )
    .into_iter()
    .map(|b| {
        let delta = slope * (b - fit.value("b_r"));
        (
            tesla_to_gauss(b),
            rad_s_to_mhz(kappa_broadening(
                delta,
                fit.value("kappa_c"),
                fit.value("g_c"),
                fit.value("gamma_s"),
            )),
        )
    })
    .collect();
    let series = vec![
        Series {
            label: "measured linewidth".into(),
            points: rows,
            draw: Draw::Points,
        },
        Series {
            label: "fitted broadening".into(),
            points: curve,
            draw: Draw::Line,
        },
    ];
    plot::xy_svg(
        &series,
        "field (G)",
        "kappa/2pi (MHz)",
        "linewidth broadening fit",
        &ctx.path("plot.svg"),
    )?;
    ctx.write_manifest(CommandKind::FitKappa, ctx.seed_override)?;

    let mut report = Report::new(CommandKind::FitKappa.name()).with_fit_status(&fit);
    report.push_param(&fit, "g_c", "g_c/2pi", Unit::RateMhz);
    report.push_param(&fit, "gamma_s", "gamma_s/2pi", Unit::RateMhz);
    report.push_param(&fit, "kappa_c", "kappa_c/2pi", Unit::RateMhz);
    report.push_param(&fit, "b_r", "b_r", Unit::FieldGauss);
    ctx.finish(report)
}

fn fit_branches(ctx: &RunContext) -> Result<()> {
    let map = ctx.read_input_map()?;
    let track = extract_dip_track(&map, ExpectedBranches::Two).map_err(CliError::data_from)?;
    let slope = ctx.config.fit_slope_si();
    let fit = fit_rabi_branches_with(&track, slope, &ctx.config.lm_options())
        .map_err(CliError::data_from)?;

    spectrum_io::write_track(&track, &ctx.path("track.csv"))?;

    let fields = dense_fields(&map);
    let mut upper = Vec::with_capacity(fields.len());
    let mut lower = Vec::with_capacity(fields.len());
    for &b in &fields {
        let delta = slope * (b - fit.value("b_r"));
        let (up, lo) = rabi_branches(delta, fit.value("omega_c"), fit.value("g_c"));
        upper.push((b, up));
        lower.push((b, lo));
    }
    let overlays = vec![
        Overlay {
            label: "upper branch".into(),
            points: upper,
        },
        Overlay {
            label: "lower branch".into(),
            points: lower,
        },
    ];
    plot::map_svg(&map, &overlays, "normal-mode branch fit", &ctx.path("plot.svg"))?;
    ctx.write_manifest(CommandKind::FitBranches, ctx.seed_override)?;

    let mut report = Report::new(CommandKind::FitBranches.name()).with_fit_status(&fit);
    report.push_param(&fit, "g_c", "g_c/2pi", Unit::RateMhz);
    report.push_param(&fit, "omega_c", "omega_c/2pi", Unit::RateMhz);
    report.push_param(&fit, "b_r", "b_r", Unit::FieldGauss);
    let g = fit.param("g_c").unwrap();
    report.push_derived(
        "mode_splitting/2pi",
        2.0 * g.value,
        Some(2.0 * g.variance.sqrt()),
        Unit::RateMhz,
    );
    ctx.finish(report)
}

fn fit_map(ctx: &RunContext) -> Result<()> {
    let map = ctx.read_input_map()?;
    let slope = ctx.config.fit_slope_si();
    let mut setup = MapFitSetup::all_free(slope);
    if let Some(params) = ctx.config.fit.as_ref().and_then(|f| f.params.as_ref()) {
        if let Some(p) = &params.g_c {
            setup.g_c = p.setup_rate("g_c")?;
        }
        if let Some(p) = &params.gamma_s {
            setup.gamma_s = p.setup_rate("gamma_s")?;
        }
        if let Some(p) = &params.kappa_c {
            setup.kappa_c = p.setup_rate("kappa_c")?;
        }
        if let Some(p) = &params.kappa_e {
            setup.kappa_e = p.setup_rate("kappa_e")?;
        }
        if let Some(p) = &params.omega_c {
            setup.omega_c = p.setup_rate("omega_c")?;
        }
        if let Some(p) = &params.b_r {
            setup.b_r = p.setup_field()?;
        }
    }
    for (name, s) in [
        ("g_c", &setup.g_c),
        ("gamma_s", &setup.gamma_s),
        ("kappa_c", &setup.kappa_c),
        ("kappa_e", &setup.kappa_e),
        ("omega_c", &setup.omega_c),
        ("b_r", &setup.b_r),
    ] {
        if s.frozen && s.initial.is_none() {
            return Err(CliError::Config(format!(
                "[fit.params.{name}] frozen = true needs an initial value"
            )));
        }
    }

    let fit = fit_full_s11_map_with(&map, &setup, &ctx.config.lm_options())
        .map_err(CliError::data_from)?;

    let overlays = fitted_model_track(&map, &fit, slope)
        .map(|track| {
            vec![Overlay {
                label: "fitted model dips".into(),
                points: track,
            }]
        })
        .unwrap_or_default();
    plot::map_svg(&map, &overlays, "full map fit", &ctx.path("plot.svg"))?;
    ctx.write_manifest(CommandKind::FitMap, ctx.seed_override)?;

    let mut report = Report::new(CommandKind::FitMap.name()).with_fit_status(&fit);
    report.push_param(&fit, "g_c", "g_c/2pi", Unit::RateMhz);
    report.push_param(&fit, "gamma_s", "gamma_s/2pi", Unit::RateMhz);
    report.push_param(&fit, "kappa_c", "kappa_c/2pi", Unit::RateMhz);
    report.push_param(&fit, "kappa_e", "kappa_e/2pi", Unit::RateMhz);
    report.push_param(&fit, "omega_c", "omega_c/2pi", Unit::RateMhz);
    report.push_param(&fit, "b_r", "b_r", Unit::FieldGauss);
    let c = rabifit::model::cooperativity(
        fit.value("g_c"),
        fit.value("kappa_c"),
        fit.value("gamma_s"),
    );
    report.push_value("cooperativity", c, Unit::Dimensionless, "derived");
    ctx.finish(report)
}

/// Dip positions of the fitted model on the data's own grid, for the
/// overlay. Extraction failures only cost the overlay, never the fit.
fn fitted_model_track(map: &SpectrumMap, fit: &FitResult, slope: f64) -> Option<Vec<(f64, f64)>> {
    let cav = CavityParams::new(
        fit.value("omega_c"),
        fit.value("kappa_c"),
        fit.value("kappa_e"),
    )
    .ok()?;
    let spins = SpinEnsembleParams::with_collective_coupling(
        fit.value("gamma_s"),
        fit.value("b_r"),
        slope.abs(),
        fit.value("g_c"),
    )
    .ok()?;
    let model = simulate_map(&cav, &spins, &map.field_axis, &map.frequency_axis).ok()?;
    let track = extract_dip_track(&model, ExpectedBranches::Two)
        .or_else(|_| extract_dip_track(&model, ExpectedBranches::One))
        .ok()?;
    Some(
        track
            .field
            .iter()
            .cloned()
            .zip(track.frequency.iter().cloned())
            .collect(),
    )
}

fn threshold_scan(ctx: &RunContext) -> Result<()> {
    let scan = ctx.config.scan()?;
    let omega_c = mhz_to_rad_s(scan.omega_c_mhz.unwrap_or(9800.0));
    let kappa_c = mhz_to_rad_s(scan.kappa_c_mhz);
    let kappa_e = scan.kappa_e_ratio.unwrap_or(1.0) * kappa_c;
    let cav = CavityParams::new(omega_c, kappa_c, kappa_e).map_err(CliError::config_from)?;
    let gamma_s = mhz_to_rad_s(scan.gamma_s_mhz);
    let g_crit = merge_point_scan(
        &cav,
        gamma_s,
        mhz_to_rad_s(scan.g_lo_mhz),
        mhz_to_rad_s(scan.g_hi_mhz),
        scan.steps.unwrap_or(24),
    )
    .map_err(CliError::config_from)?;

    ctx.write_manifest(CommandKind::ThresholdScan, ctx.seed_override)?;

    let mut report = Report::new(CommandKind::ThresholdScan.name());
    report.push_value("critical_g_c/2pi", g_crit, Unit::RateMhz, "scanned");
    report.push_value("gamma_s/2pi", gamma_s, Unit::RateMhz, "input");
    report.push_value("kappa_c/2pi", kappa_c, Unit::RateMhz, "input");
    report.push_value(
        "critical_ratio",
        g_crit / gamma_s,
        Unit::Dimensionless,
        "derived",
    );
    report.push_value(
        "asymptotic_ratio",
        asymptotic_threshold_ratio(),
        Unit::Dimensionless,
        "reference",
    );
    ctx.finish(report)
}

fn nscale(ctx: &RunContext) -> Result<()> {
    let section = ctx.config.nscale()?;
    let g_c: Vec<f64> = section.g_c_mhz.iter().map(|&g| mhz_to_rad_s(g)).collect();
    let data = match &section.weight {
        Some(w) => CouplingVsN::weighted(section.n.clone(), g_c, w.clone()),
        None => CouplingVsN::new(section.n.clone(), g_c),
    }
    .map_err(CliError::config_from)?;
    let fit = sqrt_n_regression(&data).map_err(CliError::config_from)?;

    let points: Vec<(f64, f64)> = data
        .n
        .iter()
        .zip(&data.g_c)
        .map(|(&n, &g)| (n.sqrt(), rad_s_to_mhz(g)))
        .collect();
    let sqrt_n_max = data.n.iter().cloned().fold(0.0_f64, f64::max).sqrt();
    let g_s = fit.value("g_s");
    let line = vec![
        (0.0, 0.0),
        (sqrt_n_max, rad_s_to_mhz(g_s * sqrt_n_max)),
    ];
    let series = vec![
        Series {
            label: "measured g_c".into(),
            points,
            draw: Draw::Points,
        },
        Series {
            label: "sqrt(N) regression".into(),
            points: line,
            draw: Draw::Line,
        },
    ];
    plot::xy_svg(
        &series,
        "sqrt(N_polarized)",
        "g_c/2pi (MHz)",
        "collective coupling vs polarized spins",
        &ctx.path("plot.svg"),
    )?;
    ctx.write_manifest(CommandKind::Nscale, ctx.seed_override)?;

    let mut report = Report::new(CommandKind::Nscale.name()).with_fit_status(&fit);
    report.push_param(&fit, "g_s", "g_s/2pi", Unit::RateHz);
    ctx.finish(report)
}

fn position(ctx: &RunContext) -> Result<()> {
    let section = ctx.config.position()?;
    let positions: Vec<f64> = section.position_mm.iter().map(|&z| z * 1e-3).collect();
    let g_c: Vec<f64> = section.g_c_mhz.iter().map(|&g| mhz_to_rad_s(g)).collect();
    let profile = PositionProfile::new(positions, g_c).map_err(CliError::config_from)?;
    let fit = fit_position_sinusoid(&profile).map_err(CliError::config_from)?;

    let params = SinusoidParams {
        amplitude: fit.value("amplitude"),
        period: fit.value("period"),
        phase: fit.value("phase"),
        offset: fit.value("offset"),
    };

    let data: Vec<(f64, f64)> = profile
        .position
        .iter()
        .zip(&profile.g_c)
        .map(|(&z, &g)| (z * 1e3, rad_s_to_mhz(g)))
        .collect();
    let z_lo = profile.position[0];
    let z_hi = profile.position[profile.position.len() - 1];
    let curve: Vec<(f64, f64)> = linspace(z_lo, z_hi, 401)
        .into_iter()
        .map(|z| (z * 1e3, rad_s_to_mhz(params.eval(z))))
        .collect();
    let series = vec![
        Series {
            label: "measured g_c".into(),
            points: data,
            draw: Draw::Points,
        },
        Series {
            label: "fitted standing wave".into(),
            points: curve,
            draw: Draw::Line,
        },
    ];
    plot::xy_svg(
        &series,
        "position (mm)",
        "g_c/2pi (MHz)",
        "coupling along the cavity axis",
        &ctx.path("plot.svg"),
    )?;
    ctx.write_manifest(CommandKind::Position, ctx.seed_override)?;

    let mut report = Report::new(CommandKind::Position.name()).with_fit_status(&fit);
    report.push_param(&fit, "amplitude", "amplitude/2pi", Unit::RateMhz);
    report.push_param(&fit, "period", "period", Unit::LengthMm);
    report.push_param(&fit, "phase", "phase", Unit::Radian);
    report.push_param(&fit, "offset", "offset/2pi", Unit::RateMhz);

    if let Some(length_mm) = section.average_length_mm {
        let length = length_mm * 1e-3;
        let center = match section.center_mm {
            Some(c) => c * 1e-3,
            None => antinode_near(&params, 0.5 * (z_lo + z_hi)),
        };
        let rms = average_coupling_over_length(&params, length, center)
            .map_err(CliError::config_from)?;
        let mean =
            mean_coupling_over_length(&params, length, center).map_err(CliError::config_from)?;
        report.push_value("average_center", center, Unit::LengthMm, "derived");
        report.push_value("rms_coupling/2pi", rms, Unit::RateMhz, "derived");
        report.push_value("mean_coupling/2pi", mean, Unit::RateMhz, "derived");
    }
    ctx.finish(report)
}

/// Antinode of the rectified standing wave nearest to `z`: the phase
/// argument there is pi/2 plus a half-period multiple.
fn antinode_near(params: &SinusoidParams, z: f64) -> f64 {
    let half = params.period / 2.0;
    let first = (std::f64::consts::FRAC_PI_2 - params.phase) * params.period
        / std::f64::consts::TAU;
    let k = ((z - first) / half).round();
    first + k * half
}

/// Field-axis sample positions for smooth overlay curves: the map's own
/// rows are enough when dense, otherwise a refined grid between the ends.
fn dense_fields(map: &SpectrumMap) -> Vec<f64> {
    let n = map.n_fields();
    if n >= 128 {
        return map.field_axis.clone();
    }
    linspace(map.field_axis[0], map.field_axis[n - 1], 257)
}
