//! One function per subcommand. Verdicts are data; only bad input and
//! numerical breakdowns become errors.

use std::path::{Path, PathBuf};

use serde::Serialize;
use stratwave::energy::{
    audit_criticality, fd_first_variation, first_variation, pde_residual, AuditReport,
    GravityRefs, ResidualReport,
};
use stratwave::geometry::{build_domain, SurfaceCurve};
use stratwave::hessian::{
    fd_second_variation, second_variation, spectrum, stability_verdict, StabilityVerdict,
};
use stratwave::laminar::{
    check_no_stagnation, manufacture_from_streamfunction, maps_for_state_with, recover_physical,
    solve_laminar, warp_to_domain, LaminarFlow, ManufactureReport,
};
use stratwave::profiles::{BernoulliMap, LayerProfiles};
use stratwave::state::{
    perturbation_norm, random_admissible_with, state_from_json, state_to_json, FlowState,
    Perturbation, PerturbationClass, RandomOptions,
};

use crate::config::{
    AuditGradConfig, AuditHessConfig, ConfigError, FlowSpec, GravityChoice, LaminarConfig,
    ManufactureConfig, ResidualConfig, StabilityConfig, StateSource,
};
use crate::output::{num, opt_num, write_atomic, write_json, Csv};

/// Failure of a run, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(stratwave::Error),
    #[error("i/o failure: {0:#}")]
    Io(#[from] anyhow::Error),
}

impl From<stratwave::Error> for RunError {
    fn from(e: stratwave::Error) -> Self {
        match e {
            stratwave::Error::Invalid(m) | stratwave::Error::Size(m) => {
                RunError::Config(ConfigError::Invalid(m))
            }
            other => RunError::Numerical(other),
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io(_) => 1,
        }
    }
}

pub type RunResult = Result<Vec<PathBuf>, RunError>;

/// A state ready for auditing with the profiles that define its maps.
struct Prepared {
    state: FlowState,
    profiles: [LayerProfiles; 2],
    warnings: Vec<String>,
}

fn solve(flow: &FlowSpec) -> Result<LaminarFlow, RunError> {
    Ok(solve_laminar(
        flow.profiles.clone(),
        flow.g,
        flow.d,
        flow.h_tilde,
        flow.h,
        flow.p1,
        flow.p2,
        flow.options,
    )?)
}

fn stagnation_warning(flow: &LaminarFlow) -> Option<String> {
    flow.stagnant
        .then(|| "stagnation: psi' vanishes or changes sign in the laminar flow".to_string())
}

fn prepare(src: &StateSource) -> Result<Prepared, RunError> {
    match src {
        StateSource::Laminar {
            flow,
            grid,
            c,
            p_atm,
            eta_tilde,
        } => {
            let lam = solve(flow)?;
            let state = match eta_tilde {
                Some(curve) => {
                    let domain = build_domain(lam.d, curve.clone(), SurfaceCurve::flat(lam.h))?;
                    warp_to_domain(&lam, domain, grid.nx, grid.ns1, grid.ns2, *c, *p_atm)?
                }
                None => lam.lift(grid.nx, grid.ns1, grid.ns2, *c, *p_atm)?,
            };
            Ok(Prepared {
                state,
                profiles: lam.profiles.clone(),
                warnings: stagnation_warning(&lam).into_iter().collect(),
            })
        }
        StateSource::Manufactured {
            spec,
            grid,
            c,
            p_atm,
        } => {
            let (_, lam, _) = manufacture_from_streamfunction(
                spec.psi.clone(),
                spec.rho.clone(),
                spec.g,
                spec.d,
                spec.h_tilde,
                spec.h,
                spec.options,
            )?;
            let state = lam.lift(grid.nx, grid.ns1, grid.ns2, *c, *p_atm)?;
            Ok(Prepared {
                state,
                profiles: lam.profiles.clone(),
                warnings: stagnation_warning(&lam).into_iter().collect(),
            })
        }
        StateSource::File { path, profiles } => {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.clone(),
                source,
            })?;
            let state = state_from_json(&text)?;
            let mut warnings = Vec::new();
            if !check_no_stagnation(&state).pass {
                warnings.push("stagnation: psi_y changes sign in the state".to_string());
            }
            Ok(Prepared {
                state,
                profiles: profiles.clone(),
                warnings,
            })
        }
    }
}

fn gravity_refs(choice: GravityChoice, maps: &[BernoulliMap; 2], st: &FlowState) -> GravityRefs {
    match choice {
        GravityChoice::Default => GravityRefs::defaults(maps, st.p1, st.p2),
        GravityChoice::Literal => GravityRefs::literal(maps, st.p1),
    }
}

fn unit_direction(
    seed: u64,
    state: &FlowState,
    class: PerturbationClass,
) -> Result<Perturbation, RunError> {
    let opts = RandomOptions {
        class,
        ..RandomOptions::default()
    };
    let p = random_admissible_with(seed, state, opts)?;
    let n = perturbation_norm(&p, state);
    Ok(if n > 0.0 { p.scaled(1.0 / n) } else { p })
}

/// `log(e0 / e1) / log(eps0 / eps1)` when both errors are positive.
fn order(e0: f64, e1: f64, eps0: f64, eps1: f64) -> Option<f64> {
    (e0 > 0.0 && e1 > 0.0 && eps0 != eps1).then(|| (e0 / e1).ln() / (eps0 / eps1).ln())
}

/// One analytic-versus-difference comparison.
#[derive(Debug, Clone, Serialize)]
pub struct FdRow {
    pub seed: u64,
    pub eps: f64,
    pub analytic: f64,
    pub fd: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub order_est: Option<f64>,
}

const FD_HEADER: &str = "seed,eps,analytic,fd,abs_err,order_est";

fn fd_rows<F>(seed: u64, eps: &[f64], analytic: f64, mut fd: F) -> Result<Vec<FdRow>, RunError>
where
    F: FnMut(f64) -> Result<f64, RunError>,
{
    let mut rows: Vec<FdRow> = Vec::with_capacity(eps.len());
    for &e in eps {
        let v = fd(e)?;
        let abs_err = (v - analytic).abs();
        let order_est = rows
            .last()
            .and_then(|prev| order(prev.abs_err, abs_err, prev.eps, e));
        rows.push(FdRow {
            seed,
            eps: e,
            analytic,
            fd: v,
            abs_err,
            rel_err: abs_err / analytic.abs().max(f64::MIN_POSITIVE),
            order_est,
        });
    }
    Ok(rows)
}

fn fd_csv(rows: &[FdRow]) -> Csv {
    let mut csv = Csv::new(FD_HEADER);
    for r in rows {
        csv.row([
            r.seed.to_string(),
            num(r.eps),
            num(r.analytic),
            num(r.fd),
            num(r.abs_err),
            opt_num(r.order_est),
        ]);
    }
    csv
}

fn write_state(out: &Path, state: &FlowState) -> Result<PathBuf, RunError> {
    let mut text = state_to_json(state);
    text.push('\n');
    Ok(write_atomic(out, "state.json", text.as_bytes())?)
}

#[derive(Serialize)]
struct LaminarOutput<'a> {
    flow: &'a LaminarFlow,
    warnings: Vec<String>,
}

pub fn laminar(cfg: &LaminarConfig, out: &Path) -> RunResult {
    let flow = solve(&cfg.flow)?;
    let mut warnings: Vec<String> = stagnation_warning(&flow).into_iter().collect();
    let mut written = Vec::new();
    // u - c and P come from the reconstruction on a thin lifted strip
    let strip = flow.lift(8, cfg.samples, cfg.samples, cfg.c, cfg.p_atm)?;
    let phys = if flow.stagnant {
        None
    } else {
        match recover_physical(&strip, [&flow.profiles[0], &flow.profiles[1]]) {
            Ok(p) => Some(p),
            Err(e) => {
                warnings.push(format!("no physical reconstruction: {e}"));
                None
            }
        }
    };
    let mut csv = Csv::new("y,psi1,psi2,u_minus_c,P");
    for (i, grid) in strip.grids.iter().enumerate() {
        for k in 0..grid.ns {
            let y = grid.y[[0, k]];
            let psi = num(strip.psi[i][[0, k]]);
            let (psi1, psi2) = if i == 0 {
                (psi, String::new())
            } else {
                (String::new(), psi)
            };
            let (u, p) = match &phys {
                Some(f) => (num(f.u[i][[0, k]]), num(f.pressure[i][[0, k]])),
                None => (String::new(), String::new()),
            };
            csv.row([num(y), psi1, psi2, u, p]);
        }
    }
    written.push(write_json(out, "laminar.json", &LaminarOutput { flow: &flow, warnings })?);
    written.push(csv.write(out, "profile.csv")?);
    if let Some(g) = cfg.grid {
        let st = flow.lift(g.nx, g.ns1, g.ns2, cfg.c, cfg.p_atm)?;
        written.push(write_state(out, &st)?);
    }
    Ok(written)
}

#[derive(Serialize)]
struct AuditGradOutput<'a> {
    verdict: &'static str,
    report: &'a AuditReport,
    fd: Vec<FdRow>,
    warnings: Vec<String>,
}

pub fn audit_grad(cfg: &AuditGradConfig, seed: u64, out: &Path) -> RunResult {
    let prep = prepare(&cfg.state)?;
    let st = &prep.state;
    let maps = maps_for_state_with(st, &prep.profiles, cfg.map_margin)?;
    let refs = gravity_refs(cfg.gravity_refs, &maps, st);
    let report = audit_criticality(st, &maps, refs, cfg.trials, seed, cfg.tolerances)?;
    let mut fd = Vec::new();
    for t in 0..cfg.fd_directions as u64 {
        let s = seed.wrapping_add(1_000_000 + t);
        let dir = unit_direction(s, st, cfg.fd_class)?;
        let analytic = first_variation(st, &maps, refs, &dir)?.total;
        fd.extend(fd_rows(s, &cfg.eps, analytic, |e| {
            Ok(fd_first_variation(st, &maps, refs, &dir, e)?)
        })?);
    }
    let mut csv = Csv::new(AuditReport::CSV_HEADER);
    for line in report.csv_rows() {
        csv.line(&line);
    }
    let doc = AuditGradOutput {
        verdict: report.verdict(),
        report: &report,
        fd: fd.clone(),
        warnings: prep.warnings,
    };
    Ok(vec![
        write_json(out, "audit.json", &doc)?,
        csv.write(out, "audit.csv")?,
        fd_csv(&fd).write(out, "fd.csv")?,
    ])
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryRow {
    pub pair: usize,
    pub seed_a: u64,
    pub seed_b: u64,
    pub ab: f64,
    pub ba: f64,
    pub rel_asymmetry: f64,
}

#[derive(Serialize)]
struct AuditHessOutput {
    symmetry_class: PerturbationClass,
    max_rel_asymmetry: f64,
    symmetry: Vec<SymmetryRow>,
    fd_class: PerturbationClass,
    max_rel_err_finest: f64,
    fd: Vec<FdRow>,
    warnings: Vec<String>,
}

pub fn audit_hess(cfg: &AuditHessConfig, seed: u64, out: &Path) -> RunResult {
    let prep = prepare(&cfg.state)?;
    let st = &prep.state;
    let maps = maps_for_state_with(st, &prep.profiles, cfg.map_margin)?;
    let refs = gravity_refs(cfg.gravity_refs, &maps, st);
    let mut sym = Vec::with_capacity(cfg.pairs);
    for k in 0..cfg.pairs {
        let (sa, sb) = (seed.wrapping_add(2 * k as u64), seed.wrapping_add(2 * k as u64 + 1));
        let a = unit_direction(sa, st, cfg.symmetry_class)?;
        let b = unit_direction(sb, st, cfg.symmetry_class)?;
        let ab = second_variation(st, &maps, refs, &a, &b)?;
        let ba = second_variation(st, &maps, refs, &b, &a)?;
        let scale = ab.abs().max(ba.abs());
        sym.push(SymmetryRow {
            pair: k,
            seed_a: sa,
            seed_b: sb,
            ab,
            ba,
            rel_asymmetry: if scale > 0.0 { (ab - ba).abs() / scale } else { 0.0 },
        });
    }
    let mut fd = Vec::new();
    let mut worst: f64 = 0.0;
    for k in 0..cfg.fd_pairs as u64 {
        let s = seed.wrapping_add(1_000_000 + 2 * k);
        let a = unit_direction(s, st, cfg.fd_class)?;
        let b = unit_direction(s + 1, st, cfg.fd_class)?;
        let exact = second_variation(st, &maps, refs, &a, &b)?;
        let rows = fd_rows(s, &cfg.eps, exact, |e| {
            Ok(fd_second_variation(st, &maps, refs, &a, &b, e)?)
        })?;
        worst = worst.max(rows.last().map_or(0.0, |r| r.rel_err));
        fd.extend(rows);
    }
    let mut csv = Csv::new("pair,seed_a,seed_b,ab,ba,rel_asymmetry");
    for r in &sym {
        csv.row([
            r.pair.to_string(),
            r.seed_a.to_string(),
            r.seed_b.to_string(),
            num(r.ab),
            num(r.ba),
            num(r.rel_asymmetry),
        ]);
    }
    let doc = AuditHessOutput {
        symmetry_class: cfg.symmetry_class,
        max_rel_asymmetry: sym.iter().map(|r| r.rel_asymmetry).fold(0.0, f64::max),
        symmetry: sym,
        fd_class: cfg.fd_class,
        max_rel_err_finest: worst,
        fd: fd.clone(),
        warnings: prep.warnings,
    };
    Ok(vec![
        write_json(out, "hess_audit.json", &doc)?,
        csv.write(out, "symmetry.csv")?,
        fd_csv(&fd).write(out, "fd.csv")?,
    ])
}

#[derive(Serialize)]
struct StabilityOutput<'a> {
    #[serde(flatten)]
    verdict: &'a StabilityVerdict,
    warnings: Vec<String>,
}

pub fn stability(cfg: &StabilityConfig, out: &Path) -> RunResult {
    let prep = prepare(&cfg.state)?;
    let st = &prep.state;
    let maps = maps_for_state_with(st, &prep.profiles, cfg.map_margin)?;
    let refs = gravity_refs(cfg.gravity_refs, &maps, st);
    let (verdict, matrix) = stability_verdict(st, &maps, refs, cfg.options)?;
    let mut written = vec![write_json(
        out,
        "verdict.json",
        &StabilityOutput {
            verdict: &verdict,
            warnings: prep.warnings,
        },
    )?];
    if let Some(m) = matrix {
        let mut csv = Csv::new("index,eigenvalue");
        for (i, v) in spectrum(&m)?.into_iter().enumerate() {
            csv.row([i.to_string(), num(v)]);
        }
        written.push(csv.write(out, "spectrum.csv")?);
        written.push(write_json(out, "hessian.json", &m)?);
        written.push(write_atomic(out, "hessian.bin", &m.sidecar_bytes())?);
    }
    Ok(written)
}

#[derive(Serialize)]
struct ManufactureOutput<'a> {
    flow: &'a LaminarFlow,
    report: ManufactureReport,
    residual: &'a ResidualReport,
    warnings: Vec<String>,
}

pub fn manufacture(cfg: &ManufactureConfig, out: &Path) -> RunResult {
    let s = &cfg.spec;
    let (_, flow, report) = manufacture_from_streamfunction(
        s.psi.clone(),
        s.rho.clone(),
        s.g,
        s.d,
        s.h_tilde,
        s.h,
        s.options,
    )?;
    let mut warnings: Vec<String> = stagnation_warning(&flow).into_iter().collect();
    for (i, psi) in s.psi.iter().enumerate() {
        let (lo, hi) = flow.interval(i);
        let flat = (0..=64).all(|k| {
            let y = lo + (hi - lo) * k as f64 / 64.0;
            psi.eval_all(y).2 == 0.0
        });
        if flat {
            warnings.push(format!(
                "degenerate F: psi'' vanishes identically in layer {}",
                i + 1
            ));
        }
        if !report.beta_decreasing[i] {
            warnings.push(format!("beta is not strictly decreasing in layer {}", i + 1));
        }
        if !report.rho_nonincreasing[i] {
            warnings.push(format!("rho is not nonincreasing in layer {}", i + 1));
        }
    }
    let g = cfg.grid;
    let state = flow.lift(g.nx, g.ns1, g.ns2, cfg.c, cfg.p_atm)?;
    let residual = pde_residual(&state, [&flow.profiles[0], &flow.profiles[1]])?;
    let mut csv = Csv::new("layer,y,q,beta,rho");
    for i in 0..2 {
        let (lo, hi) = flow.interval(i);
        let prof = &flow.profiles[i];
        for k in 0..cfg.samples {
            let y = lo + (hi - lo) * k as f64 / (cfg.samples - 1) as f64;
            let q = flow.psi(i, y);
            csv.row([
                (i + 1).to_string(),
                num(y),
                num(q),
                num(prof.beta(q)),
                num(prof.rho(-q)),
            ]);
        }
    }
    let doc = ManufactureOutput {
        flow: &flow,
        report,
        residual: &residual,
        warnings,
    };
    Ok(vec![
        write_json(out, "manufacture.json", &doc)?,
        csv.write(out, "beta.csv")?,
        write_state(out, &state)?,
    ])
}

#[derive(Serialize)]
struct ResidualOutput<'a> {
    residual: &'a ResidualReport,
    max_norm: f64,
    warnings: Vec<String>,
}

pub fn residual(cfg: &ResidualConfig, out: &Path) -> RunResult {
    let prep = prepare(&cfg.state)?;
    let st = &prep.state;
    let rep = pde_residual(st, [&prep.profiles[0], &prep.profiles[1]])?;
    let mut csv = Csv::new("layer,j,k,x,y,residual");
    for (i, grid) in st.grids.iter().enumerate() {
        for ((j, k), v) in rep.interior[i].indexed_iter() {
            csv.row([
                (i + 1).to_string(),
                j.to_string(),
                k.to_string(),
                num(grid.x[j]),
                num(grid.y[[j, k]]),
                num(*v),
            ]);
        }
    }
    let doc = ResidualOutput {
        residual: &rep,
        max_norm: rep.max_norm(),
        warnings: prep.warnings,
    };
    Ok(vec![
        write_json(out, "residual.json", &doc)?,
        csv.write(out, "residual.csv")?,
    ])
}
