use std::time::Instant;

use ffdg::analysis::{boundary_width_study, convergence_study, ConvergenceReport, Reference};
use ffdg::dg_core::{assemble_flux, assemble_mass, assemble_stiffness, Drift};
use ffdg::model::{partition_rates, validate_model, ModelSpec, Sign};
use ffdg::montecarlo::{empirical_return_cdf, estimate_stationary, simulate_first_return, OccupationSettings};
use ffdg::operator_assembly::{Discretisation, RhoMode};
use ffdg::riccati::{first_return_cdf, solve_psi, PsiMethod, PsiOptions, PsiSolution};
use ffdg::stationary::{Split, StationarySolution};
use ffdg::stencil::{mesh_index_sets, CoefficientVector, Degree};
use serde_json::{json, Value};

use crate::config::{load_model, parse_grid};
use crate::output::{num, CliError, OutDir};
use crate::{
    ConvergenceArgs, ModelArgs, PsiArgs, PsiMethodArg, PsiSolverArgs, ReferenceArg, RhoModeArg, SimulateArgs,
    SolveArgs, StationaryArgs, StencilArgs,
};

fn checked_model(path: &std::path::Path) -> Result<ModelSpec<f64>, CliError> {
    let model = load_model(path)?;
    validate_model(&model).into_result()?;
    Ok(model)
}

fn discretise(model: &ModelSpec<f64>, args: &SolveArgs) -> Result<Discretisation<f64>, CliError> {
    let mode = match args.rho_mode {
        RhoModeArg::Normalized => RhoMode::Normalized,
        RhoModeArg::Verbatim => RhoMode::Verbatim,
    };
    Ok(Discretisation::new(model, args.stencil.basis()?, mode)?)
}

fn psi_options(a: &PsiSolverArgs) -> Result<PsiOptions, CliError> {
    if !(a.psi_tol > 0.0) {
        return Err(CliError::Config("--psi-tol must be positive".into()));
    }
    let method = match a.psi_method {
        PsiMethodArg::Newton => PsiMethod::Newton,
        PsiMethodArg::FixedPoint => PsiMethod::FixedPoint,
    };
    Ok(PsiOptions { tol: a.psi_tol, max_iter: a.psi_max_iter, ..PsiOptions::with_method(method) })
}

fn seconds(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

fn discretisation_summary(model: &ModelSpec<f64>, disc: &Discretisation<f64>) -> Value {
    let layout = disc.layout();
    let stencil = disc.basis.stencil();
    json!({
        "phases": model.phases.labels(),
        "nodes": stencil.nodes().len(),
        "meshes": stencil.n_meshes(),
        "degree": disc.basis.degree().as_u32(),
        "basis_per_phase": layout.per_phase(),
        "dofs": layout.total(),
        "plus": layout.indices(Sign::Plus).len(),
        "minus": layout.indices(Sign::Minus).len(),
        "zero": layout.indices(Sign::Zero).len(),
    })
}

pub fn validate(args: &ModelArgs, stencil: &StencilArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let report = validate_model(&model);
    let checks: Vec<Value> = report
        .checks
        .iter()
        .map(|c| json!({ "check": c.name, "ok": c.error.is_none(), "code": c.error.as_ref().map(|e| e.code()) }))
        .collect();
    println!("{}", json!({ "model": args.model, "checks": checks }));
    report.into_result()?;
    if stencil.given() {
        let basis = stencil.basis()?;
        mesh_index_sets(basis.stencil(), &partition_rates(&model))?;
    }
    Ok(())
}

fn dump_operators(out: &OutDir, model: &ModelSpec<f64>, disc: &Discretisation<f64>) -> Result<usize, CliError> {
    let basis = &disc.basis;
    out.matrix("M.csv", &assemble_mass(basis))?;
    out.matrix("G.csv", &assemble_stiffness(basis))?;
    out.matrix("F_up.csv", &assemble_flux(basis, Drift::Up))?;
    out.matrix("F_down.csv", &assemble_flux(basis, Drift::Down))?;
    for (i, q) in disc.generators.iter().enumerate() {
        out.matrix(&format!("Q_{}.csv", model.phases.label(i)), q)?;
    }
    out.matrix("B_full.csv", disc.op.full())?;
    let name = |s: Sign| match s {
        Sign::Plus => "p",
        Sign::Minus => "m",
        Sign::Zero => "z",
    };
    let s = model.n_phases();
    let mut blocks = 0;
    for l in Sign::ALL {
        for m in Sign::ALL {
            for i in 0..s {
                for j in 0..s {
                    let b = disc.op.block(l, i, m, j);
                    if b.iter().any(|&x| x != 0.0) {
                        let file =
                            format!("B_{}{}_{}{}.csv", name(l), model.phases.label(i), name(m), model.phases.label(j));
                        out.matrix(&file, &b)?;
                        blocks += 1;
                    }
                }
            }
        }
    }
    let d = &disc.d0;
    out.matrix("D_pp.csv", &d.pp)?;
    out.matrix("D_pm.csv", &d.pm)?;
    out.matrix("D_mp.csv", &d.mp)?;
    out.matrix("D_mm.csv", &d.mm)?;
    Ok(blocks)
}

pub fn assemble(args: &SolveArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let model = checked_model(&args.model.model)?;
    let disc = discretise(&model, args)?;
    let out = OutDir::create(&args.model.out)?;
    let mut summary = discretisation_summary(&model, &disc);
    if args.dump_operators {
        summary["nonzero_blocks"] = json!(dump_operators(&out, &model, &disc)?);
    }
    summary["wall_seconds"] = json!(seconds(start));
    out.json("summary.json", &summary)
}

fn psi_summary(psi: &PsiSolution<f64>) -> Value {
    json!({
        "method": psi.method,
        "iterations": psi.iterations,
        "residual": psi.residual,
        "max_row_sum": psi.max_row_sum(),
        "min_entry": psi.psi.min(),
    })
}

fn write_index_map(
    out: &OutDir,
    file: &str,
    model: &ModelSpec<f64>,
    disc: &Discretisation<f64>,
    sign: Sign,
) -> Result<(), CliError> {
    let layout = disc.layout();
    let mut w = out.csv(file)?;
    w.record(["packed", "global", "phase", "basis", "mesh"])?;
    for (p, &g) in layout.indices(sign).iter().enumerate() {
        let n = layout.basis_of(g);
        w.record([
            p.to_string(),
            g.to_string(),
            model.phases.label(layout.phase_of(g)).to_string(),
            n.to_string(),
            disc.basis.mesh_of(n).to_string(),
        ])?;
    }
    w.finish()
}

fn phase_index(model: &ModelSpec<f64>, label: &str) -> Result<usize, CliError> {
    model.phases.index_of(label).ok_or_else(|| CliError::Config(format!("unknown phase `{label}`")))
}

pub fn psi(args: &PsiArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let model = checked_model(&args.solve.model.model)?;
    let disc = discretise(&model, &args.solve)?;
    let out = OutDir::create(&args.solve.model.out)?;
    let assembled = seconds(start);
    let sol = solve_psi(&disc.d0, &psi_options(&args.psi)?)?;
    let mut summary = discretisation_summary(&model, &disc);
    summary["psi"] = psi_summary(&sol);
    if args.solve.dump_operators {
        summary["nonzero_blocks"] = json!(dump_operators(&out, &model, &disc)?);
    }
    if args.dump_psi {
        out.matrix("psi.csv", &sol.psi)?;
        write_index_map(&out, "psi_rows.csv", &model, &disc, Sign::Plus)?;
        write_index_map(&out, "psi_cols.csv", &model, &disc, Sign::Minus)?;
    }
    if let (Some(x0), Some(label)) = (args.initial_x, &args.initial_phase) {
        let phase = phase_index(&model, label)?;
        let init = CoefficientVector::point_mass(&disc.basis, model.n_phases(), phase, x0)?;
        let layout = disc.layout();
        let off_plus = init.values().iter().enumerate().any(|(g, &v)| v != 0.0 && layout.class_of(g) != Sign::Plus);
        if off_plus {
            return Err(CliError::Config(format!(
                "initial point ({x0}, {label}) is not in the up-class of the second fluid"
            )));
        }
        let ret = first_return_cdf(&disc.basis, layout, &init, &sol.psi)?;
        let mut w = out.csv("first_return_cdf.csv")?;
        w.record(["phase", "x", "cdf"])?;
        for &p in ret.phases() {
            for (x, f) in ret.cdf_at_nodes(p) {
                w.record([model.phases.label(p).to_string(), num(x), num(f)])?;
            }
        }
        w.finish()?;
        summary["first_return_mass"] = json!(ret.total());
    }
    summary["assembly_seconds"] = json!(assembled);
    summary["wall_seconds"] = json!(seconds(start));
    out.json("summary.json", &summary)
}

fn write_marginals(out: &OutDir, sol: &StationarySolution<f64>) -> Result<(), CliError> {
    let basis = sol.basis();
    let mut w = out.csv("marginal_x.csv")?;
    w.record(["split", "group", "basis", "mesh", "left", "right", "coefficient", "mass"])?;
    for (split, tag) in [(Split::OnOff, "on_off"), (Split::YZeroPositive, "y_zero_positive")] {
        for group in sol.marginal_x(split) {
            let masses = group.chi.to_masses(basis);
            for (n, &v) in group.chi.values().iter().enumerate() {
                let k = basis.mesh_of(n);
                let (a, b) = basis.stencil().mesh(k);
                w.record([
                    tag.to_string(),
                    group.name.to_string(),
                    n.to_string(),
                    k.to_string(),
                    num(a),
                    num(b),
                    num(v),
                    num(masses[n]),
                ])?;
            }
        }
    }
    w.finish()
}

pub fn stationary(args: &StationaryArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let ys = parse_grid(&args.y_grid)?;
    let model = checked_model(&args.solve.model.model)?;
    let disc = discretise(&model, &args.solve)?;
    let out = OutDir::create(&args.solve.model.out)?;
    let assembled = seconds(start);
    let psi = solve_psi(&disc.d0, &psi_options(&args.psi)?)?;
    let psi_seconds = seconds(start) - assembled;
    let sol = StationarySolution::solve(&model, &disc, psi)?;
    let s = model.n_phases();
    let basis = sol.basis();

    let mut summary = discretisation_summary(&model, &disc);
    if args.solve.dump_operators {
        summary["nonzero_blocks"] = json!(dump_operators(&out, &model, &disc)?);
    }
    summary["psi"] = psi_summary(sol.psi());
    summary["regime"] = json!(sol.regime());
    summary["p_y_zero"] = json!(sol.prob_y_zero());
    summary["p_y_positive"] = json!(sol.prob_y_positive());
    summary["total_probability"] = json!(sol.total_probability());
    summary["xi_residual"] = json!(sol.xi().map(|x| x.residual));
    let atom = sol.atom_masses();
    let per = basis.len();
    let by_phase: serde_json::Map<String, Value> =
        (0..s).map(|i| (model.phases.label(i).to_string(), json!(atom.rows(i * per, per).sum()))).collect();
    summary["p_y_zero_by_phase"] = Value::Object(by_phase);

    let layout = sol.layout();
    let mut w = out.csv("masses.csv")?;
    w.record(["phase", "x_cell", "basis", "sign_class", "mass"])?;
    for (g, &m) in atom.iter().enumerate() {
        let n = layout.basis_of(g);
        w.record([
            model.phases.label(layout.phase_of(g)).to_string(),
            basis.mesh_of(n).to_string(),
            n.to_string(),
            layout.class_of(g).symbol().to_string(),
            num(m),
        ])?;
    }
    w.finish()?;
    write_marginals(&out, &sol)?;

    let densities = sol.density_on_grid(&ys)?;
    let mut w = out.csv("density.csv")?;
    w.record(["phase", "sign_class", "x_cell_left", "x_cell_right", "y", "basis", "density"])?;
    for (y, d) in ys.iter().zip(&densities) {
        for i in 0..s {
            for (n, &v) in d.phase(i).iter().enumerate() {
                let (a, b) = basis.stencil().mesh(basis.mesh_of(n));
                w.record([
                    model.phases.label(i).to_string(),
                    layout.class_of(i * per + n).symbol().to_string(),
                    num(a),
                    num(b),
                    num(*y),
                    n.to_string(),
                    num(v),
                ])?;
            }
        }
    }
    w.finish()?;

    summary["assembly_seconds"] = json!(assembled);
    summary["psi_seconds"] = json!(psi_seconds);
    summary["wall_seconds"] = json!(seconds(start));
    out.json("summary.json", &summary)
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let model = checked_model(&args.model.model)?;
    let phase = match &args.phase {
        Some(label) => phase_index(&model, label)?,
        None => model.c.iter().position(|&c| c > 0.0).unwrap_or(0),
    };
    let out = OutDir::create(&args.model.out)?;
    let records = simulate_first_return(&model, (args.x0, args.y0, phase), args.paths, args.horizon, args.seed)?;
    let mut w = out.csv("first_return.csv")?;
    w.record(["path", "tau", "x", "phase"])?;
    for (k, r) in records.iter().enumerate() {
        let (x, p) = match r.hit {
            Some((x, p)) => (num(x), model.phases.label(p).to_string()),
            None => (String::new(), "censored".to_string()),
        };
        w.record([k.to_string(), num(r.tau), x, p])?;
    }
    w.finish()?;
    let emp = empirical_return_cdf(&records, model.n_phases())?;
    let fractions: serde_json::Map<String, Value> =
        (0..model.n_phases()).map(|i| (model.phases.label(i).to_string(), json!(emp.phase_fraction(i)))).collect();
    let mut summary = json!({
        "paths": args.paths,
        "seed": args.seed,
        "start": { "x": args.x0, "y": args.y0, "phase": model.phases.label(phase) },
        "horizon": args.horizon,
        "retained": emp.retained,
        "censored_fraction": emp.censored_fraction(),
        "phase_fraction": fractions,
    });
    if let Some(run) = args.occupation_time {
        let edges: Vec<f64> = (0..=64).map(|k| k as f64 * model.truncation / 64.0).collect();
        let settings =
            OccupationSettings { burn_in: args.burn_in, run, chains: args.chains, seed: args.seed, x_edges: edges };
        let est = estimate_stationary(&model, &settings)?;
        let by_phase: serde_json::Map<String, Value> = (0..model.n_phases())
            .map(|i| (model.phases.label(i).to_string(), json!(est.p_y_zero_by_phase[i])))
            .collect();
        summary["occupation"] = json!({
            "chains": est.chains,
            "run": run,
            "burn_in": args.burn_in,
            "p_y_zero": est.p_y_zero,
            "p_y_zero_se": est.p_y_zero_se,
            "p_y_positive": est.p_y_positive(),
            "p_y_zero_by_phase": by_phase,
            "x_atom": est.x_atom,
        });
        let mut w = out.csv("occupation_x_cdf.csv")?;
        w.record(["x", "cdf"])?;
        for (x, f) in est.x_cdf() {
            w.record([num(x), num(f)])?;
        }
        w.finish()?;
    }
    summary["wall_seconds"] = json!(seconds(start));
    out.json("summary.json", &summary)
}

fn report_json(r: &ConvergenceReport) -> Value {
    json!({ "degree": r.degree, "slope": r.fit.slope, "intercept": r.fit.intercept, "r_squared": r.fit.r_squared })
}

pub fn convergence(args: &ConvergenceArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let model = checked_model(&args.model.model)?;
    let out = OutDir::create(&args.model.out)?;
    let reference = match args.reference {
        ReferenceArg::Reflected => Reference::Reflected,
        ReferenceArg::Unbounded => Reference::Unbounded,
    };
    let degrees = args.degrees.iter().map(|&d| Degree::try_from(d)).collect::<Result<Vec<_>, _>>()?;
    let mut reports = Vec::new();
    for &d in &degrees {
        reports.push(("h", convergence_study(&model, &args.hs, args.dh, d, reference)?));
    }
    if !args.dhs.is_empty() {
        for &d in &degrees {
            reports.push(("dh", boundary_width_study(&model, &args.dhs, args.dh_study_h, args.dh_reference, d)?));
        }
    }
    let mut w = out.csv("convergence.csv")?;
    w.record(["study", "degree", "step", "error", "meshes", "basis_per_phase", "dofs"])?;
    for (study, r) in &reports {
        for p in &r.points {
            w.record([
                study.to_string(),
                r.degree.to_string(),
                num(p.step),
                num(p.error),
                p.meshes.to_string(),
                p.per_phase.to_string(),
                p.dofs.to_string(),
            ])?;
        }
    }
    w.finish()?;
    let pick =
        |study: &str| reports.iter().filter(|(s, _)| *s == study).map(|(_, r)| report_json(r)).collect::<Vec<_>>();
    let summary = json!({
        "reference": reference,
        "dh": args.dh,
        "h_study": pick("h"),
        "dh_study": { "h": args.dh_study_h, "reference_dh": args.dh_reference, "fits": pick("dh") },
        "wall_seconds": seconds(start),
    });
    out.json("summary.json", &summary)
}
