//! Implementations of the subcommands.

use std::path::Path;

use resdr::data::{BasisConfig, ClusteredDataset};
use resdr::dimsel::{select_dimension, Criterion, DimSelReport};
use resdr::grassmann::Subspace;
use resdr::linalg::Mat;
use resdr::pfc::{fit_gpfc, fit_spfc};
use resdr::rmir::{fit_rmir, variable_importance, BinaryFit, RmirConfig};
use resdr::rpfc::{fit_rpfc, predict_from_params, McemConfig, RpfcFit, SigmaModel};
use resdr::simbench::runner::{design_label, rep_rng};
use resdr::simbench::{generate_dataset, run_benchmark, BenchConfig, Method, SimDesign};
use serde_json::{json, Value};

use crate::ingest::{read_dataset, write_dataset};
use crate::output::{mat_from_json, mat_json, matrix_csv, vec_json, write_file, write_json, BasisTable};
use crate::{CliError, Command, FitArgs, FitMethod, McemArgs};

type Res<T> = Result<T, CliError>;

pub fn dispatch(cmd: Command) -> Res<()> {
    match cmd {
        Command::Simulate { design, n, seed, out } => simulate(&design, n, seed, &out),
        Command::Fit { args, importance } => fit(&args, importance),
        Command::SelectDim { input, max_d, degree, out } => select_dim(&input, max_d, degree, out.as_deref()),
        Command::Predict { model, input, out } => predict(&model, &input, &out),
        Command::Importance { args } => importance_only(&args),
        Command::Benchmark { design, n, reps, seed, methods, mcem, timings, out } => {
            benchmark(&design, n, reps, seed, &methods, &mcem, timings, &out)
        }
    }
}

fn mcem_config(m: &McemArgs, seed: u64) -> Res<McemConfig> {
    if m.mc_samples < 2 || !(m.tol > 0.0) || m.max_iter == 0 {
        return Err(CliError::User("--mc-samples must be ≥ 2, --tol and --max-iter positive".into()));
    }
    Ok(McemConfig { samples: m.mc_samples, max_iter: m.max_iter, tol: m.tol, seed, common_random_numbers: true })
}

fn parse_design(name: &str, n: Option<usize>) -> Res<SimDesign> {
    let mut d: SimDesign = name.parse()?;
    if let Some(n) = n {
        d.n = n;
    }
    d.validate()?;
    Ok(d)
}

fn simulate(design: &str, n: Option<usize>, seed: u64, out: &Path) -> Res<()> {
    let design = parse_design(design, n)?;
    let mut rng = rep_rng(seed, 0, 0);
    let (data, truth) = generate_dataset(&design, &mut rng)?;
    let mut buf = Vec::new();
    write_dataset(&data, &mut buf)?;
    write_file(out, "data.csv", &String::from_utf8(buf).expect("CSV is UTF-8"))?;
    let report = json!({
        "design": design.to_string(),
        "n": design.n,
        "seed": seed,
        "d": design.d(),
        "gamma0": mat_json(truth.gamma0.basis()),
        "delta": mat_json(&truth.delta),
        "sigma": mat_json(&truth.sigma),
        "beta": truth.beta.as_ref().map(mat_json),
        "theta0": mat_json(&truth.theta0),
        "clusters": data.clusters.iter().zip(&truth.theta).map(|(c, t)| json!({"id": c.id, "theta": mat_json(t)})).collect::<Vec<_>>(),
    });
    write_json(out, "truth.json", &report)?;
    println!("wrote {} clusters to {}", data.n(), out.join("data.csv").display());
    Ok(())
}

fn names(data: &ClusteredDataset) -> Vec<String> {
    let mut v: Vec<String> = (1..=data.p()).map(|k| format!("x{k}")).collect();
    v.extend((1..=data.q()).map(|k| format!("w{k}")));
    v
}

/// Rows of (label, reduction) whose projector diagonals give the importance.
struct Fitted {
    report: Value,
    reductions: Vec<(String, Mat)>,
    files: Vec<(&'static str, String)>,
    /// Covariate names matching the rows of the reductions.
    names: Vec<String>,
}

fn fit_model(args: &FitArgs) -> Res<Fitted> {
    let data = read_dataset(&args.input)?;
    let basis = BasisConfig::polynomial(args.degree);
    let mcem = mcem_config(&args.mcem, args.seed)?;
    let config = json!({
        "method": format!("{:?}", args.method).to_lowercase(),
        "input": args.input.display().to_string(),
        "d": args.d,
        "dprime": args.dprime,
        "degree": args.degree,
        "sigma": SigmaModel::from(args.sigma).name(),
        "mc_samples": mcem.samples,
        "tol": mcem.tol,
        "max_iter": mcem.max_iter,
        "seed": mcem.seed,
    });
    let p = data.p();
    let all_names = names(&data);
    let x_names = all_names[..p].to_vec();
    match args.method {
        FitMethod::Gpfc => {
            let fit = fit_gpfc(&data, args.d, &basis)?;
            let theta = fit.theta()?;
            let report = json!({
                "config": config,
                "n_clusters": data.n(),
                "n_obs": fit.n_obs,
                "loglik": fit.loglik,
                "gamma0": mat_json(fit.gamma.basis()),
                "delta": mat_json(&fit.delta),
                "c": mat_json(&fit.c),
                "mu": vec_json(&fit.mu),
                "beta": fit.beta.as_ref().map(mat_json),
                "theta0": mat_json(theta.basis()),
            });
            let files = vec![
                ("gamma0.csv", matrix_csv(fit.gamma.basis())),
                ("delta.csv", matrix_csv(&fit.delta)),
                ("c.csv", matrix_csv(&fit.c)),
            ];
            Ok(Fitted { report, reductions: vec![("fixed".into(), theta.basis().clone())], files, names: x_names })
        }
        FitMethod::Spfc => {
            let fit = fit_spfc(&data, args.d, &basis)?;
            let mut table = BasisTable::new(p);
            let mut reductions = vec![("fixed".to_string(), fit.theta_mean.basis().clone())];
            let mut clusters = Vec::new();
            for (c, f) in data.clusters.iter().zip(&fit.fits) {
                if let Some(f) = f {
                    let t = f.theta()?;
                    table.push(&c.id, "theta", t.basis());
                    clusters.push(json!({"id": c.id, "theta": mat_json(t.basis()), "loglik": f.loglik}));
                    reductions.push((c.id.clone(), t.basis().clone()));
                }
            }
            let report = json!({
                "config": config,
                "n_clusters": data.n(),
                "unusable": fit.unusable,
                "theta_mean": mat_json(fit.theta_mean.basis()),
                "sigma": mat_json(&fit.sigma),
                "dropped_from_sigma": fit.dropped_from_sigma,
                "clusters": clusters,
            });
            let files = vec![("sigma.csv", matrix_csv(&fit.sigma)), ("clusters.csv", table.finish())];
            Ok(Fitted { report, reductions, files, names: x_names })
        }
        FitMethod::Rpfc => {
            let cont = if data.q() > 0 {
                log::warn!("rpfc ignores the binary columns; use --method rmir to model them");
                data.without_w()
            } else {
                data
            };
            let fit = fit_rpfc(&cont, args.d, &basis, &mcem, args.sigma.into())?;
            let (mut report, mut files, mut reductions) = rpfc_parts(&fit)?;
            report["config"] = config;
            files.push(("clusters.csv", rpfc_table(&fit).finish()));
            for (id, t) in fit.cluster_ids.iter().zip(&fit.theta_hat) {
                reductions.push((id.clone(), t.basis().clone()));
            }
            Ok(Fitted { report, reductions, files, names: x_names })
        }
        FitMethod::Rmir => {
            let cfg = RmirConfig {
                d: args.d,
                d_prime: args.dprime,
                basis,
                g_degree: 1,
                mcem,
                sigma_model: args.sigma.into(),
            };
            let fit = fit_rmir(&data, &cfg)?;
            let (mut report, mut files, _) = rpfc_parts(&fit.continuous)?;
            report["config"] = config;
            report["beta"] = mat_json(&fit.beta);
            report["mu_w"] = vec_json(&fit.mu_w);
            report["w_kind"] = json!(format!("{:?}", fit.kind));
            report["binary"] = match &fit.binary {
                BinaryFit::Ising(f) => json!({
                    "model": "ising",
                    "tau0": vec_json(&f.params.tau0),
                    "b": mat_json(&f.params.b),
                    "c2": mat_json(&f.params.c2),
                    "pseudo_loglik": f.pseudo_loglik,
                }),
                BinaryFit::Logistic(fits) => json!({
                    "model": "logistic",
                    "nodes": fits.iter().map(|f| json!({
                        "b0": vec_json(&f.b0),
                        "sigma_b": mat_json(&f.sigma_b),
                        "iterations": f.iterations,
                        "converged": f.converged,
                    })).collect::<Vec<_>>(),
                }),
            };
            report["theta0_mixed"] = mat_json(&fit.theta0);
            let table = rpfc_table(&fit.continuous);
            let mut mixed = BasisTable::new(p + data.q());
            let mut reductions = vec![("fixed".to_string(), fit.theta0.clone())];
            for (id, t) in fit.continuous.cluster_ids.iter().zip(&fit.theta_hat) {
                mixed.push(id, "theta_mixed", t);
                reductions.push((id.clone(), t.clone()));
            }
            files.push(("clusters.csv", table.finish()));
            files.push(("clusters_mixed.csv", mixed.finish()));
            Ok(Fitted { report, reductions, files, names: all_names })
        }
    }
}

type Parts = (Value, Vec<(&'static str, String)>, Vec<(String, Mat)>);

fn rpfc_parts(fit: &RpfcFit) -> Res<Parts> {
    let theta0 = fit.theta0()?;
    let report = json!({
        "n_clusters": fit.cluster_ids.len(),
        "excluded": fit.excluded,
        "sigma_model": fit.sigma_model.name(),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "loglik_trace": fit.loglik_trace,
        "loglik_se": fit.loglik_se,
        "gamma0": mat_json(fit.gamma0.basis()),
        "delta": mat_json(&fit.delta),
        "sigma": mat_json(&fit.sigma),
        "c": mat_json(&fit.c),
        "theta0": mat_json(theta0.basis()),
        "basis": {"degree": fit.basis.degree, "centering": format!("{:?}", fit.basis.centering)},
        "mcem": {"samples": fit.mcem.samples, "seed": fit.mcem.seed, "tol": fit.mcem.tol, "max_iter": fit.mcem.max_iter},
        "clusters": fit.cluster_ids.iter().enumerate().map(|(k, id)| json!({
            "id": id,
            "ess": fit.ess[k],
            "vhat": mat_json(fit.vhat[k].mat()),
            "theta": mat_json(fit.theta_hat[k].basis()),
        })).collect::<Vec<_>>(),
    });
    let files = vec![
        ("gamma0.csv", matrix_csv(fit.gamma0.basis())),
        ("delta.csv", matrix_csv(&fit.delta)),
        ("sigma.csv", matrix_csv(&fit.sigma)),
        ("c.csv", matrix_csv(&fit.c)),
    ];
    Ok((report, files, vec![("fixed".into(), theta0.basis().clone())]))
}

fn rpfc_table(fit: &RpfcFit) -> BasisTable {
    let mut table = BasisTable::new(fit.gamma0.p());
    for k in 0..fit.cluster_ids.len() {
        table.push(&fit.cluster_ids[k], "vhat", fit.vhat[k].mat());
        table.push(&fit.cluster_ids[k], "theta", fit.theta_hat[k].basis());
    }
    table
}

fn importance_csv(names: &[String], reductions: &[(String, Mat)]) -> Res<String> {
    let mut out = format!("cluster_id,{}\n", names.join(","));
    for (label, theta) in reductions {
        let imp = variable_importance(theta)?;
        let cells: Vec<String> = imp.iter().map(|&v| crate::output::fmt17(v)).collect();
        out.push_str(&format!("{label},{}\n", cells.join(",")));
    }
    Ok(out)
}

fn fit(args: &FitArgs, importance: bool) -> Res<()> {
    let fitted = fit_model(args)?;
    write_json(&args.out, "fit.json", &fitted.report)?;
    for (name, text) in &fitted.files {
        write_file(&args.out, name, text)?;
    }
    if importance {
        write_file(&args.out, "importance.csv", &importance_csv(&fitted.names, &fitted.reductions)?)?;
    }
    println!("wrote {}", args.out.join("fit.json").display());
    Ok(())
}

fn importance_only(args: &FitArgs) -> Res<()> {
    let fitted = fit_model(args)?;
    let text = importance_csv(&fitted.names, &fitted.reductions)?;
    write_file(&args.out, "importance.csv", &text)?;
    // the population-level row is the headline
    if let Some(line) = text.lines().nth(1) {
        println!("{}", text.lines().next().unwrap_or_default());
        println!("{line}");
    }
    Ok(())
}

fn dimsel_json(rep: &DimSelReport) -> Value {
    json!({
        "p": rep.p,
        "r": rep.r,
        "n_obs": rep.n_obs,
        "unusable_clusters": rep.unusable_clusters,
        "monotonicity_violations": rep.monotonicity_violations,
        "candidates": rep.candidates.iter().map(|c| json!({
            "w": c.w,
            "h": c.h,
            "global_loglik": c.global_loglik,
            "separate_loglik": c.separate_loglik,
            "usable_clusters": c.usable_clusters,
            "gaic": c.values[0],
            "gbic": c.values[1],
            "saic": c.values[2],
            "sbic": c.values[3],
            "error": c.error,
        })).collect::<Vec<_>>(),
        "chosen": Criterion::ALL.iter().map(|c| (c.name().to_lowercase(), json!(rep.chosen(*c)))).collect::<serde_json::Map<_, _>>(),
    })
}

fn select_dim(input: &Path, max_d: usize, degree: usize, out: Option<&Path>) -> Res<()> {
    if max_d == 0 {
        return Err(CliError::User("--max-d must be at least 1".into()));
    }
    let data = read_dataset(input)?;
    let candidates: Vec<usize> = (1..=max_d).collect();
    let rep = select_dimension(&data, &candidates, &BasisConfig::polynomial(degree))?;
    let cell = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.3}"));
    println!("{:>3} {:>5} {:>14} {:>14} {:>14} {:>14}", "w", "h", "GAIC", "GBIC", "SAIC", "SBIC");
    for c in &rep.candidates {
        println!(
            "{:>3} {:>5} {:>14} {:>14} {:>14} {:>14}",
            c.w,
            c.h,
            cell(c.values[0]),
            cell(c.values[1]),
            cell(c.values[2]),
            cell(c.values[3])
        );
    }
    let chosen: Vec<String> = Criterion::ALL
        .iter()
        .map(|c| format!("{}={}", c.name(), rep.chosen(*c).map_or("NA".into(), |w| w.to_string())))
        .collect();
    println!("chosen: {}", chosen.join(" "));
    if rep.unusable_clusters > 0 {
        println!("clusters left out of SAIC/SBIC: {}", rep.unusable_clusters);
    }
    if let Some(dir) = out {
        write_json(dir, "dimsel.json", &dimsel_json(&rep))?;
    }
    Ok(())
}

fn predict(model: &Path, input: &Path, out: &Path) -> Res<()> {
    let text = std::fs::read_to_string(model).map_err(|e| CliError::User(format!("cannot read {}: {e}", model.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::User(format!("{}: {e}", model.display())))?;
    if v["config"]["method"] != "rpfc" {
        return Err(CliError::User("predict needs a fit.json written by --method rpfc".into()));
    }
    let gamma0 = Subspace::new(mat_from_json(&v["gamma0"], "gamma0")?)?;
    let c = mat_from_json(&v["c"], "c")?;
    let delta = mat_from_json(&v["delta"], "delta")?;
    let sigma = mat_from_json(&v["sigma"], "sigma")?;
    let int = |x: &Value, what: &str| x.as_u64().ok_or_else(|| CliError::User(format!("field '{what}' missing")));
    let basis = BasisConfig::polynomial(int(&v["basis"]["degree"], "basis.degree")? as usize);
    let mcem = McemConfig {
        samples: int(&v["mcem"]["samples"], "mcem.samples")? as usize,
        seed: int(&v["mcem"]["seed"], "mcem.seed")?,
        ..Default::default()
    };
    let data = read_dataset(input)?;
    let mut table = BasisTable::new(gamma0.p());
    let mut clusters = Vec::new();
    for cl in &data.clusters {
        let pred = predict_from_params(&gamma0, &c, &delta, &sigma, &basis, &mcem, cl)?;
        table.push(&cl.id, "vhat", pred.vhat.mat());
        table.push(&cl.id, "theta", pred.theta_hat.basis());
        clusters.push(json!({
            "id": cl.id,
            "ess": pred.ess,
            "vhat": mat_json(pred.vhat.mat()),
            "theta": mat_json(pred.theta_hat.basis()),
        }));
    }
    write_json(out, "predictions.json", &json!({ "model": model.display().to_string(), "clusters": clusters }))?;
    write_file(out, "predictions.csv", &table.finish())?;
    println!("predicted {} clusters", data.n());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn benchmark(
    designs: &[String],
    n: Option<usize>,
    reps: usize,
    seed: u64,
    methods: &[String],
    mcem: &McemArgs,
    timings: bool,
    out: &Path,
) -> Res<()> {
    let designs: Vec<SimDesign> = designs.iter().map(|d| parse_design(d, n)).collect::<Res<_>>()?;
    let methods: Vec<Method> = methods.iter().map(|m| m.parse::<Method>()).collect::<Result<_, _>>()?;
    if reps == 0 {
        return Err(CliError::User("--reps must be at least 1".into()));
    }
    let cfg = BenchConfig { designs: designs.clone(), methods, reps, seed, mcem: mcem_config(mcem, 0)? };
    let report = run_benchmark(&cfg)?;
    for (design, method, failed) in &report.failures {
        log::warn!("{design} {method}: {failed} of {reps} replicates failed");
    }
    let label: Vec<String> = designs.iter().map(design_label).collect();
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
    let name = format!("bench_{}_{stamp}.csv", label.join("+"));
    write_file(out, &name, &report.to_csv(timings))?;
    print!("{}", report.to_csv(timings));
    eprintln!("wrote {}", out.join(&name).display());
    Ok(())
}
