//! Batch front end: configure a model and wave, run one analysis pipeline,
//! and emit CSV/JSON (and optionally SVG) artifacts into an output
//! directory.
//!
//! Subcommands mirror the analysis stages: `check` (structural hypotheses
//! and shock classification), `profile` (connecting orbit), `evans`
//! (stability determinant on contours), `simulate` (time evolution with
//! decay and energy diagnostics), `iterate` (the nonlinear phase
//! iteration), and `report` (a consolidated verification document). Every
//! run writes a manifest recording the tool version and the fully resolved
//! configuration; given the same configuration and version the artifacts
//! are byte-identical — the pipeline has no randomness.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for
//! verifications that end without a clean verdict, 4 for runtime failures
//! (including hypothesis violations and guard aborts).

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use shockwork::config::RunConfig;
use shockwork::error::{Error, Result};
use shockwork::evans::verify_stability;
use shockwork::evolution::{
    energy_monitor, run_iteration, simulate, verify_decay, PhaseCurve, SimulationTrace,
};
use shockwork::grid::Field;
use shockwork::io::{self, PlotSeries};
use shockwork::model::{check_hypotheses, ConservationLaw, ShockEndstates};
use shockwork::profile::{solve_profile, Profile};
use shockwork::report::{self, TextReport};
use shockwork::spectral::TransportGeometry;
use shockwork::templates::TemplateBundle;
use shockwork::tol;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "shockwork",
    version,
    about = "Viscous shock profiles: existence, spectral stability, nonlinear decay"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory for artifacts (overrides the configured one).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Dotted-path configuration override (repeatable), e.g.
    /// `--override time.dt=0.005`.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Emit SVG plots alongside the data artifacts.
    #[arg(long, global = true)]
    plots: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the structural hypotheses and classify the shock.
    Check,
    /// Compute the connecting profile and its tail decay.
    Profile,
    /// Verify the spectral stability criterion on the indented contour.
    Evans,
    /// Evolve a perturbed wave; fit decay rates and the energy inequality.
    Simulate,
    /// Run the nonlinear phase iteration and measure its contraction.
    Iterate,
    /// Produce the consolidated verification report.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Loaded configuration plus resolved output settings.
struct Workspace {
    cfg: RunConfig,
    out_dir: PathBuf,
    plots: bool,
}

impl Workspace {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn emit_text(&self, name: &str, text: &str) -> Result<()> {
        io::write_text(&self.path(name), text)?;
        println!("wrote {}", self.path(name).display());
        Ok(())
    }

    fn emit_json(&self, name: &str, value: &Value) -> Result<()> {
        io::write_json(&self.path(name), value)?;
        println!("wrote {}", self.path(name).display());
        Ok(())
    }

    fn emit_manifest(&self, command: &str, extras: Vec<(&str, Value)>) -> Result<()> {
        self.emit_json("manifest.json", &io::manifest(command, &self.cfg, extras))
    }
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli.config.ok_or_else(|| {
        Error::Config("a configuration file is required; pass --config PATH".into())
    })?;
    let cfg = RunConfig::load(&config_path, &cli.overrides)?;
    let out_dir = cli
        .out
        .or_else(|| cfg.output.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let ws = Workspace {
        cfg,
        out_dir,
        plots: cli.plots,
    };
    match cli.command {
        Command::Check => cmd_check(&ws),
        Command::Profile => cmd_profile(&ws),
        Command::Evans => cmd_evans(&ws),
        Command::Simulate => cmd_simulate(&ws),
        Command::Iterate => cmd_iterate(&ws),
        Command::Report => cmd_report(&ws),
    }
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces
// ---------------------------------------------------------------------------

fn build_wave(ws: &Workspace) -> Result<(Box<dyn ConservationLaw>, ShockEndstates, Profile)> {
    let (model, ends) = ws.cfg.instantiate()?;
    let profile = solve_profile(model.as_ref(), &ends, &ws.cfg.profile_opts())?;
    Ok((model, ends, profile))
}

fn build_bundle(ws: &Workspace, model: &dyn ConservationLaw, profile: &Profile) -> Result<TemplateBundle> {
    let mut bundle = TemplateBundle::new(model, profile)?;
    ws.cfg.templates.apply(&mut bundle);
    Ok(bundle)
}

/// Initial full state: the wave plus the configured perturbation.
fn initial_state(ws: &Workspace, profile: &Profile) -> Result<Field> {
    let pert = ws.cfg.perturbation.build(profile.grid, profile)?;
    let n = profile.state_dim();
    let mut tilde0 = Field::zeros(profile.grid, n);
    let mut base = vec![0.0; n];
    for i in 0..profile.grid.len {
        profile.eval_into(profile.grid.x(i), &mut base);
        for c in 0..n {
            tilde0.set(i, c, base[c] + pert.get(i, c));
        }
    }
    Ok(tilde0)
}

fn seed_curve(ws: &Workspace, t_max: f64) -> PhaseCurve {
    match ws.cfg.iteration.seed.as_str() {
        "decaying" => {
            let a = ws.cfg.iteration.seed_amplitude;
            let times: Vec<f64> = (0..=200).map(|k| t_max * k as f64 / 200.0).collect();
            PhaseCurve::from_fn(
                times,
                |t| a / (1.0 + t).sqrt(),
                |t| -0.5 * a / (1.0 + t).powf(1.5),
            )
        }
        _ => PhaseCurve::zero(t_max),
    }
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

fn cmd_check(ws: &Workspace) -> Result<()> {
    let (model, ends) = ws.cfg.instantiate()?;
    let hypotheses = check_hypotheses(model.as_ref(), &ends)?;
    let rh_ok = ends.rh_residual <= tol::RANKINE_HUGONIOT;

    let mut text = TextReport::new(&format!("hypothesis check: {}", model.name()));
    text.section("shock classification");
    text.kv("class", ends.class);
    text.kv("incoming (left, right)", format!("{}, {}", ends.incoming_minus, ends.incoming_plus));
    text.kv("connection dimension", ends.ell_expected);
    text.verdict(
        "jump-conditions",
        rh_ok,
        &format!("frame-flux mismatch {:.3e}", ends.rh_residual),
    );
    report::render_hypotheses(&mut text, &hypotheses);
    let rendered = text.finish();
    print!("{rendered}");

    let doc = report::assemble_sections(vec![
        ("model", json!({"name": model.name(), "state_dim": model.state_dim(), "viscous_rank": model.viscous_rank()})),
        ("classification", report::classification_json(&ends)),
        ("hypotheses", report::hypotheses_json(&hypotheses)),
        ("jump_conditions_ok", json!(rh_ok)),
    ])?;
    ws.emit_json("check.json", &doc)?;
    ws.emit_text("check.txt", &rendered)?;
    ws.emit_manifest("check", vec![])?;

    if !hypotheses.satisfied {
        return Err(Error::Hypothesis(
            "one or more structural hypotheses fail; see check.json".into(),
        ));
    }
    if !rh_ok {
        return Err(Error::Hypothesis(format!(
            "the endstates violate the jump conditions (residual {:.3e})",
            ends.rh_residual
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// profile
// ---------------------------------------------------------------------------

fn cmd_profile(ws: &Workspace) -> Result<()> {
    let (model, ends, profile) = build_wave(ws)?;
    ws.emit_text("profile.csv", &io::profile_csv(&profile))?;

    let doc = report::assemble_sections(vec![
        ("model", json!({"name": model.name()})),
        ("classification", report::classification_json(&ends)),
        ("profile", report::profile_json(model.as_ref(), &profile)),
    ])?;
    ws.emit_json("profile.json", &doc)?;
    ws.emit_manifest("profile", vec![("grid_nodes", json!(profile.grid.len))])?;

    if ws.plots {
        let xs: Vec<f64> = profile.grid.nodes().collect();
        let comps: Vec<Vec<f64>> = (0..profile.state_dim())
            .map(|c| profile.states.component(c))
            .collect();
        let labels: Vec<String> = (1..=profile.state_dim()).map(|c| format!("u{c}")).collect();
        let series: Vec<PlotSeries> = comps
            .iter()
            .zip(&labels)
            .map(|(ys, label)| PlotSeries { label, xs: &xs, ys })
            .collect();
        let svg = io::svg_line_plot(
            &format!("wave profile: {}", model.name()),
            "x",
            "state",
            &series,
            false,
            false,
        )?;
        ws.emit_text("profile.svg", &svg)?;
    }

    println!(
        "profile solved: {} nodes, tail decay rates {:.4} (left) {:.4} (right)",
        profile.grid.len, profile.decay_left, profile.decay_right
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evans
// ---------------------------------------------------------------------------

fn cmd_evans(ws: &Workspace) -> Result<()> {
    let (model, ends, profile) = build_wave(ws)?;
    let stability = verify_stability(model.as_ref(), &profile, &ws.cfg.contour.to_opts())?;

    ws.emit_text("contour.csv", &io::contour_csv(&stability.indented.samples))?;
    ws.emit_text("origin.csv", &io::contour_csv(&stability.origin.samples))?;
    let doc = report::assemble_sections(vec![
        ("model", json!({"name": model.name()})),
        ("classification", report::classification_json(&ends)),
        ("stability", report::stability_json(&stability)),
    ])?;
    ws.emit_json("evans.json", &doc)?;
    ws.emit_manifest(
        "evans",
        vec![("contour_points", json!(stability.indented.points))],
    )?;

    if ws.plots {
        let idx: Vec<f64> = (0..stability.indented.samples.len()).map(|k| k as f64).collect();
        let ln_mod: Vec<f64> = stability.indented.samples.iter().map(|s| s.ln_modulus()).collect();
        let arg: Vec<f64> = stability.indented.samples.iter().map(|s| s.arg()).collect();
        let svg = io::svg_line_plot(
            &format!("stability determinant on the indented contour: {}", model.name()),
            "sample index",
            "value",
            &[
                PlotSeries { label: "ln |D|", xs: &idx, ys: &ln_mod },
                PlotSeries { label: "arg D (reduced)", xs: &idx, ys: &arg },
            ],
            false,
            false,
        )?;
        ws.emit_text("evans.svg", &svg)?;
    }

    println!(
        "indented contour encloses {} (winding {:.5}); origin multiplicity {} (expected {})",
        stability.indented.enclosed,
        stability.indented.winding,
        stability.origin.enclosed,
        stability.ell_expected
    );
    if !stability.satisfied {
        return Err(Error::Inconclusive(format!(
            "the stability criterion is not certified: indented contour encloses {}, \
             origin multiplicity {} vs expected {}",
            stability.indented.enclosed, stability.origin.enclosed, stability.ell_expected
        )));
    }
    println!("stability criterion satisfied");
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn emit_snapshots(ws: &Workspace, trace: &SimulationTrace) -> Result<()> {
    for snap in &trace.snapshots {
        let name = format!("snapshot_t{}.csv", io::fmt_float(snap.t));
        ws.emit_text(&name, &io::snapshot_csv(snap))?;
    }
    Ok(())
}

/// Pointwise template-ratio strip from the stored snapshots:
/// `log10((|u| + |u_x|) / (E0 * template))` per node, one row per snapshot.
fn ratio_strip(bundle: &TemplateBundle, trace: &SimulationTrace) -> Result<Option<String>> {
    let usable: Vec<_> = trace.snapshots.iter().filter(|s| s.t > 0.0).collect();
    if usable.len() < 2 || trace.initial_energy <= 0.0 {
        return Ok(None);
    }
    let grid = trace.grid;
    let xs: Vec<f64> = grid.nodes().collect();
    let mut rows = Vec::with_capacity(usable.len());
    let mut ts = Vec::with_capacity(usable.len());
    for snap in &usable {
        let du = snap.u.derivative();
        let mut row = Vec::with_capacity(grid.len);
        for i in 0..grid.len {
            let mut amp = 0.0f64;
            for c in 0..snap.u.ncomp {
                amp = amp.max(snap.u.get(i, c).abs() + du.get(i, c).abs());
            }
            let denom = trace.initial_energy * bundle.template_sum(grid.x(i), snap.t).max(1e-300);
            row.push((amp / denom).max(1e-300).log10());
        }
        rows.push(row);
        ts.push(snap.t);
    }
    let (cx, cv) = io::downsample_columns(&xs, &rows, 320);
    let svg = io::svg_heat_strip(
        "pointwise template ratio",
        &cx,
        &ts,
        &cv,
        "log10((|u|+|u_x|) / (E0 * template))",
    )?;
    Ok(Some(svg))
}

fn cmd_simulate(ws: &Workspace) -> Result<()> {
    let (model, ends, profile) = build_wave(ws)?;
    let bundle = build_bundle(ws, model.as_ref(), &profile)?;
    let tilde0 = initial_state(ws, &profile)?;
    let opts = ws.cfg.evolve_opts();
    let trace = simulate(model.as_ref(), &profile, Some(&bundle), &tilde0, &opts)?;
    let decay = verify_decay(&trace, ws.cfg.decay_window())?;
    let energy = energy_monitor(&trace);

    ws.emit_text("series.csv", &io::series_csv(&trace))?;
    emit_snapshots(ws, &trace)?;
    let doc = report::assemble_sections(vec![
        ("model", json!({"name": model.name()})),
        ("classification", report::classification_json(&ends)),
        ("template_constants", report::template_constants_json(&bundle)),
        ("trace", report::trace_summary_json(&trace)),
        ("decay", report::decay_json(&decay)),
        ("energy", report::energy_json(&energy)),
    ])?;
    ws.emit_json("simulate.json", &doc)?;
    ws.emit_manifest(
        "simulate",
        vec![
            ("grid_nodes", json!(trace.grid.len)),
            ("samples", json!(trace.times.len())),
        ],
    )?;

    if ws.plots {
        let norms = io::svg_line_plot(
            &format!("perturbation norms: {}", model.name()),
            "t",
            "norm",
            &[
                PlotSeries { label: "L1", xs: &trace.times, ys: &trace.lp1 },
                PlotSeries { label: "L2", xs: &trace.times, ys: &trace.lp2 },
                PlotSeries { label: "sup", xs: &trace.times, ys: &trace.lp_inf },
                PlotSeries { label: "Sobolev surrogate", xs: &trace.times, ys: &trace.surrogate },
            ],
            true,
            true,
        )?;
        ws.emit_text("norms.svg", &norms)?;
        let phase = io::svg_line_plot(
            "extracted phase and rate",
            "t",
            "value",
            &[
                PlotSeries { label: "delta", xs: &trace.times, ys: &trace.phase },
                PlotSeries { label: "delta rate", xs: &trace.times, ys: &trace.phase_rate },
            ],
            false,
            false,
        )?;
        ws.emit_text("phase.svg", &phase)?;
        match ratio_strip(&bundle, &trace)? {
            Some(svg) => ws.emit_text("ratio_strip.svg", &svg)?,
            None => println!("ratio strip skipped (requires two positive-time snapshots)"),
        }
    }

    println!(
        "simulated to t = {:.2}: initial energy {:.3e}, template ratio sup {:.3}, \
         phase norm {:.3e}",
        trace.times.last().copied().unwrap_or(0.0),
        trace.initial_energy,
        decay.ratio_sup,
        trace.phase_norm(),
    );
    for (p, s) in &decay.lp_slopes {
        let name = if p.is_finite() {
            format!("L{p}")
        } else {
            "sup".to_string()
        };
        println!("  {name} slope {s:+.3}");
    }
    if energy.damping_failure {
        println!("energy fit: damping FAILURE (trend {:.2})", energy.trend);
    } else {
        println!(
            "energy fit: C = {:.3}, rates ({:.2}, {:.2}), trend {:.2}",
            energy.damping_constant, energy.theta_initial, energy.theta_memory, energy.trend
        );
    }
    if trace.horizon_warning {
        println!("warning: outgoing signal reached the boundary; enlarge the domain");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// iterate
// ---------------------------------------------------------------------------

fn cmd_iterate(ws: &Workspace) -> Result<()> {
    let (model, ends, profile) = build_wave(ws)?;
    let bundle = build_bundle(ws, model.as_ref(), &profile)?;
    let tilde0 = initial_state(ws, &profile)?;
    let opts = ws.cfg.evolve_opts();
    let seed = seed_curve(ws, opts.t_max);
    let records = run_iteration(
        model.as_ref(),
        &profile,
        &bundle,
        &tilde0,
        &seed,
        0.0,
        ws.cfg.iteration.count,
        &opts,
    )?;

    ws.emit_text("iteration.csv", &io::iteration_csv(&records))?;
    if let Some(last) = records.last() {
        ws.emit_text("phase_final.csv", &io::phase_curve_csv(&last.output))?;
    }
    let doc = report::assemble_sections(vec![
        ("model", json!({"name": model.name()})),
        ("classification", report::classification_json(&ends)),
        ("template_constants", report::template_constants_json(&bundle)),
        ("iteration", report::iteration_json(&records)),
    ])?;
    ws.emit_json("iterate.json", &doc)?;
    ws.emit_manifest("iterate", vec![("iterates", json!(records.len()))])?;

    if ws.plots {
        let ns: Vec<f64> = records.iter().map(|r| r.n as f64).collect();
        let diffs: Vec<f64> = records.iter().map(|r| r.star_diff).collect();
        let svg = io::svg_line_plot(
            "iteration update sizes",
            "iterate",
            "star-norm difference",
            &[PlotSeries { label: "update", xs: &ns, ys: &diffs }],
            false,
            true,
        )?;
        ws.emit_text("contraction.svg", &svg)?;
        let series: Vec<PlotSeries> = records
            .iter()
            .map(|r| PlotSeries {
                label: "phase path",
                xs: &r.output.times,
                ys: &r.output.values,
            })
            .collect();
        let svg = io::svg_line_plot("phase paths per iterate", "t", "delta", &series, false, false)?;
        ws.emit_text("phase_paths.svg", &svg)?;
    }

    for r in &records {
        match r.alpha_hat {
            Some(a) => println!(
                "iterate {}: update {:.4e}, contraction {:.3}, shift {:+.5e}",
                r.n, r.star_diff, a, r.output_shift
            ),
            None => println!(
                "iterate {}: update {:.4e}, shift {:+.5e}",
                r.n, r.star_diff, r.output_shift
            ),
        }
    }
    if let Some(last) = records.last() {
        println!(
            "final phase at t = 0: {:.3e} (fixed point leaves the origin phase at zero)",
            last.phase_at_zero
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn cmd_report(ws: &Workspace) -> Result<()> {
    let (model, ends) = ws.cfg.instantiate()?;
    let hypotheses = check_hypotheses(model.as_ref(), &ends)?;
    let mut text = TextReport::new(&format!("verification report: {}", model.name()));
    let mut sections: Vec<(&str, Value)> = vec![
        ("model", json!({
            "name": model.name(),
            "state_dim": model.state_dim(),
            "viscous_rank": model.viscous_rank(),
            "frame_speed": model.frame_speed(),
        })),
        ("classification", report::classification_json(&ends)),
        ("hypotheses", report::hypotheses_json(&hypotheses)),
    ];

    text.section("shock classification");
    text.kv("class", ends.class);
    text.kv("connection dimension", ends.ell_expected);
    report::render_hypotheses(&mut text, &hypotheses);

    let mut failures: Vec<String> = Vec::new();
    if !hypotheses.satisfied {
        failures.push("structural hypotheses".into());
    }

    // Everything beyond the hypotheses needs the wave itself.
    let profile = solve_profile(model.as_ref(), &ends, &ws.cfg.profile_opts())?;
    sections.push(("profile", report::profile_json(model.as_ref(), &profile)));
    text.section("profile");
    text.kv("nodes", profile.grid.len);
    text.kv("tail decay (left, right)", format!("{:.4}, {:.4}", profile.decay_left, profile.decay_right));

    let bundle = build_bundle(ws, model.as_ref(), &profile)?;
    sections.push(("template_constants", report::template_constants_json(&bundle)));
    text.section("template constants");
    text.kv("gaussian width", format!("{:.4}", bundle.gaussian_width));
    text.kv("envelope width", format!("{:.4}", bundle.envelope_width));
    text.kv("weight rate", format!("{:.4}", bundle.weight_rate));
    text.kv("drift rate (heuristic)", format!("{:.4}", bundle.drift_rate));
    text.line(format!("  note: {}", report::drift_rate_note()));

    let geometry = TransportGeometry::new(model.as_ref(), &profile)?;
    if geometry.block_count() > 0 {
        sections.push(("transport", report::transport_json(&geometry)));
        text.section("interior transport");
        text.kv("blocks", geometry.block_count());
        text.kv("sign conflict", geometry.sign_conflict());
        if geometry.sign_conflict() {
            text.line(format!("  resolution: {}", report::damping_sign_note()));
        }
    }

    let kernel_fits = bundle.verify_kernel_bounds()?;
    sections.push(("kernel_bounds", report::constants_json(&kernel_fits)));
    report::render_constants(&mut text, "kernel-derivative majorants", &kernel_fits);

    let conv_opts = ws.cfg.report.convolution_opts();
    let geometry_ref = if geometry.block_count() > 0 {
        Some(&geometry)
    } else {
        None
    };
    let conv_fits = bundle.verify_convolution_lemmas(geometry_ref, &conv_opts)?;
    sections.push(("convolution_constants", report::constants_json(&conv_fits)));
    report::render_constants(&mut text, "convolution inequalities", &conv_fits);
    for c in &conv_fits {
        if !c.fitted.is_finite() {
            failures.push(format!("convolution constant {}", c.id));
        }
    }

    if ws.cfg.report.stability {
        let stability = verify_stability(model.as_ref(), &profile, &ws.cfg.contour.to_opts())?;
        text.section("spectral stability");
        text.verdict(
            "contour-winding",
            stability.indented.enclosed == 0,
            &format!("enclosed {}", stability.indented.enclosed),
        );
        text.verdict(
            "origin-multiplicity",
            stability.origin.enclosed == stability.ell_expected as i64,
            &format!(
                "{} vs expected {}",
                stability.origin.enclosed, stability.ell_expected
            ),
        );
        if !stability.satisfied {
            failures.push("spectral stability".into());
        }
        sections.push(("stability", report::stability_json(&stability)));
        ws.emit_text("contour.csv", &io::contour_csv(&stability.indented.samples))?;
    }

    if ws.cfg.report.simulation {
        let tilde0 = initial_state(ws, &profile)?;
        let opts = ws.cfg.evolve_opts();
        let trace = simulate(model.as_ref(), &profile, Some(&bundle), &tilde0, &opts)?;
        let decay = verify_decay(&trace, ws.cfg.decay_window())?;
        let energy = energy_monitor(&trace);
        sections.push(("trace", report::trace_summary_json(&trace)));
        sections.push(("decay", report::decay_json(&decay)));
        sections.push(("energy", report::energy_json(&energy)));
        text.section("time evolution");
        text.kv("initial energy", format!("{:.3e}", trace.initial_energy));
        text.kv("template ratio sup", format!("{:.3}", decay.ratio_sup));
        for (p, s) in &decay.lp_slopes {
            let name = if p.is_finite() { format!("L{p} slope") } else { "sup slope".into() };
            text.kv(&name, format!("{s:+.3}"));
        }
        text.verdict(
            "energy-damping",
            !energy.damping_failure,
            &format!("trend {:.2}", energy.trend),
        );
        if energy.damping_failure {
            failures.push("energy damping".into());
        }
        ws.emit_text("series.csv", &io::series_csv(&trace))?;
        emit_snapshots(ws, &trace)?;
    }

    if ws.cfg.report.iteration {
        let tilde0 = initial_state(ws, &profile)?;
        let opts = ws.cfg.evolve_opts();
        let seed = seed_curve(ws, opts.t_max);
        let records = run_iteration(
            model.as_ref(),
            &profile,
            &bundle,
            &tilde0,
            &seed,
            0.0,
            ws.cfg.iteration.count,
            &opts,
        )?;
        sections.push(("iteration", report::iteration_json(&records)));
        text.section("nonlinear iteration");
        for r in &records {
            text.kv(
                &format!("iterate {}", r.n),
                match r.alpha_hat {
                    Some(a) => format!("update {:.4e}, contraction {a:.3}", r.star_diff),
                    None => format!("update {:.4e}", r.star_diff),
                },
            );
        }
        ws.emit_text("iteration.csv", &io::iteration_csv(&records))?;
    }

    text.section("verdict");
    let ok = failures.is_empty();
    text.verdict(
        "verification",
        ok,
        &if ok {
            "all included checks pass".to_string()
        } else {
            format!("failing: {}", failures.join(", "))
        },
    );
    sections.push(("verdict", json!({"pass": ok, "failing": failures})));

    let rendered = text.finish();
    print!("{rendered}");
    let doc = report::assemble_sections(sections)?;
    ws.emit_json("report.json", &doc)?;
    ws.emit_text("report.txt", &rendered)?;
    ws.emit_manifest("report", vec![])?;

    if !hypotheses.satisfied {
        return Err(Error::Hypothesis(
            "structural hypotheses fail; see report.json".into(),
        ));
    }
    if !failures.is_empty() {
        return Err(Error::Inconclusive(format!(
            "verification did not certify: {}",
            failures.join(", ")
        )));
    }
    Ok(())
}
