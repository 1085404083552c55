//! Command-line front end: subcommands, PASS/FAIL reporting and exit codes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::FlowConfig;
use crate::error::{Error, Result};
use crate::estimators::{
    entropy_derivative_check, entropy_derivative_formulas, entropy_estimate, identity_sweep, jensen_sweep,
    mean_root_curvature, mrc_derivative_fd, mrc_derivative_formula, pinched_positivity_check, ricci_direction_sign,
    riccati_mean_check, verify_integration_by_parts, EstimatorReport, Perturbation, CSV_HEADER,
};
use crate::field::ConformalField;
use crate::flow::{run_flow, FlowCheckpoint};
use crate::geodesic::{CurvatureBounds, GeodesicParams};

/// Exit status when every contracted check passes.
pub const EXIT_OK: i32 = 0;
/// Exit status for a failed check or a numerical error.
pub const EXIT_FAILURE: i32 = 1;
/// Exit status for usage and configuration errors.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "liouflow", version, about = "Liouville entropy along the normalized Ricci flow on the Bolza surface")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (`key = value` lines); defaults to the single-bump field.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// CSV report path.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only print the PASS/FAIL lines.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Flow the metric and estimate entropy and κ at every checkpoint.
    Flow,
    /// Entropy of the initial field from both Riccati branches.
    Entropy,
    /// Identity and derivative checks.
    Verify {
        #[command(subcommand)]
        what: VerifyKind,
    },
    /// Random sweep of the Jensen-type inequality.
    Jensen,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum VerifyKind {
    /// Entropy and κ derivatives against finite differences.
    Derivative,
    /// Pointwise identities and the Riccati mean.
    Identities,
    /// Positivity terms of the pinched-curvature argument.
    Pinched,
}

impl Command {
    fn slug(&self) -> &'static str {
        match self {
            Command::Flow => "flow",
            Command::Entropy => "entropy",
            Command::Verify { what: VerifyKind::Derivative } => "verify-derivative",
            Command::Verify { what: VerifyKind::Identities } => "verify-identities",
            Command::Verify { what: VerifyKind::Pinched } => "verify-pinched",
            Command::Jensen => "jensen",
        }
    }
}

/// One named check.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    /// Monitored checks are printed but do not set the exit status.
    pub contracted: bool,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail,
            contracted: true,
        }
    }

    fn monitored(mut self) -> Self {
        self.contracted = false;
        self
    }

    pub fn line(&self) -> String {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        let note = if self.contracted { "" } else { " (monitored)" };
        format!("{tag} {}{note}: {}", self.name, self.detail)
    }
}

struct Run<'a> {
    config: FlowConfig,
    quiet: bool,
    stdout: &'a mut dyn Write,
}

impl Run<'_> {
    fn info(&mut self, msg: impl AsRef<str>) {
        if !self.quiet {
            let _ = writeln!(self.stdout, "{}", msg.as_ref());
        }
    }

    fn params(&self) -> GeodesicParams {
        self.config.geodesic_params()
    }
}

/// Parses `args` and runs the subcommand; returns the exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return code;
        }
    };
    let mut config = match &cli.config {
        Some(path) => match FlowConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                let _ = writeln!(stderr, "error: {e}");
                return EXIT_USAGE;
            }
        },
        None => FlowConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(format!("liouflow-{}.csv", cli.command.slug())));
    let mut run = Run {
        config,
        quiet: cli.quiet,
        stdout,
    };
    match execute(&cli.command, &mut run, &out) {
        Ok(checks) => {
            for c in &checks {
                let _ = writeln!(run.stdout, "{}", c.line());
            }
            if checks.iter().all(|c| c.pass || !c.contracted) {
                EXIT_OK
            } else {
                EXIT_FAILURE
            }
        }
        Err(e) => {
            let _ = writeln!(run.stdout, "FAIL {}: {e}", cli.command.slug());
            let _ = writeln!(stderr, "error: {e}");
            EXIT_FAILURE
        }
    }
}

fn create(out: &PathBuf) -> Result<BufWriter<File>> {
    File::create(out)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", out.display()))))
}

fn write_reports(out: &PathBuf, reports: &[EstimatorReport]) -> Result<()> {
    let mut w = create(out)?;
    writeln!(w, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

/// A deterministic quantity as a report row with zero standard error.
fn exact_row(quantity: &str, value: f64, seed: u64, params: &GeodesicParams) -> EstimatorReport {
    EstimatorReport {
        quantity: quantity.to_string(),
        mean: value,
        stderr: 0.0,
        n: 0,
        seed,
        burn_in: params.burn_in,
        dt: params.dt,
        tail_bound: 0.0,
    }
}

fn execute(command: &Command, run: &mut Run, out: &PathBuf) -> Result<Vec<Check>> {
    match command {
        Command::Flow => flow(run, out),
        Command::Entropy => entropy(run, out),
        Command::Verify { what } => match what {
            VerifyKind::Derivative => derivative(run, out),
            VerifyKind::Identities => identities(run, out),
            VerifyKind::Pinched => pinched(run, out),
        },
        Command::Jensen => jensen(run, out),
    }
}

/// Checks of a finished flow run.
pub fn flow_checks(cps: &[FlowCheckpoint]) -> Vec<Check> {
    let mut checks = Vec::new();
    let (first, last) = (&cps[0], &cps[cps.len() - 1]);
    checks.push(Check::new(
        "area",
        cps.iter().all(|c| c.area_defect <= 1e-6),
        format!("max defect {:e}", cps.iter().map(|c| c.area_defect).fold(0.0, f64::max)),
    ));
    checks.push(Check::new(
        "mean curvature",
        cps.iter().all(|c| (c.kbar + 1.0).abs() <= 1e-3),
        format!("max |K̄ + 1| {:e}", cps.iter().map(|c| (c.kbar + 1.0).abs()).fold(0.0, f64::max)),
    ));
    if first.curvature_deviation() < 1e-9 {
        // constant curvature is a fixed point
        let kappa_ok = cps.iter().all(|c| (c.kappa - 1.0).abs() <= 1e-6);
        let h_ok = cps.iter().all(|c| (c.entropy.mean - 1.0).abs() <= 1e-4);
        checks.push(Check::new("stationary kappa", kappa_ok, format!("κ = {}", last.kappa)));
        checks.push(Check::new("stationary entropy", h_ok, format!("h = {}", last.entropy.mean)));
        return checks;
    }
    let pairs = || cps.windows(2);
    checks.push(Check::new(
        "kappa increasing",
        pairs().all(|w| w[1].kappa > w[0].kappa),
        format!("κ {} -> {}", first.kappa, last.kappa),
    ));
    checks.push(Check::new(
        "curvature deviation decreasing",
        pairs().all(|w| w[1].curvature_deviation() < w[0].curvature_deviation()),
        format!("sup|K + 1| {:e} -> {:e}", first.curvature_deviation(), last.curvature_deviation()),
    ));
    let gain = last.entropy.mean - first.entropy.mean;
    let se = last.entropy.combined_stderr(&first.entropy);
    checks.push(Check::new(
        "entropy end above start",
        gain > 3.0 * se,
        format!("gain {gain:e}, combined stderr {se:e}"),
    ));
    checks.push(Check::new(
        "entropy non-decreasing",
        pairs().all(|w| w[1].entropy.mean - w[0].entropy.mean >= -3.0 * w[1].entropy.combined_stderr(&w[0].entropy)),
        "every step within 3 combined stderr".into(),
    ));
    let pinched: Vec<&FlowCheckpoint> = cps.iter().filter(|c| c.pinching_ratio - 1.0 >= 1e-2).collect();
    let worst = pinched
        .iter()
        .map(|c| c.formula_vs_fd.dh_formula.mean / c.formula_vs_fd.dh_formula.stderr)
        .fold(f64::INFINITY, f64::min);
    checks.push(Check::new(
        "entropy derivative positive",
        pinched.iter().all(|c| c.formula_vs_fd.dh_formula.mean > 3.0 * c.formula_vs_fd.dh_formula.stderr),
        format!("{} checkpoints with pinching >= 1.01, smallest mean/stderr {worst:.2}", pinched.len()),
    ));
    checks.push(
        Check::new(
            "pinching non-increasing",
            pairs().all(|w| w[1].pinching_ratio <= w[0].pinching_ratio),
            format!("K2/K1 {} -> {}", first.pinching_ratio, last.pinching_ratio),
        )
        .monitored(),
    );
    checks
}

fn flow(run: &mut Run, out: &PathBuf) -> Result<Vec<Check>> {
    let mut w = create(out)?;
    let config = run.config.clone();
    let mut lines = Vec::new();
    let result = run_flow(&config, &mut w, |cp| {
        lines.push(format!(
            "ε = {:.3}: h = {:.8} ± {:.1e}, κ = {:.8}, K in [{:.5}, {:.5}]",
            cp.epsilon, cp.entropy.mean, cp.entropy.stderr, cp.kappa, cp.k_min, cp.k_max
        ));
    });
    w.flush()?;
    for l in lines {
        run.info(l);
    }
    Ok(flow_checks(&result?))
}

/// Checks of an entropy estimate of `field`.
pub fn entropy_checks(field: &ConformalField, est: &crate::estimators::EntropyEstimate) -> Result<Vec<Check>> {
    let kappa = mean_root_curvature(field)?;
    let b = CurvatureBounds::of(field)?;
    let h = &est.stable;
    let gap = (est.stable.mean - est.unstable.mean).abs();
    let se = est.stable.combined_stderr(&est.unstable);
    let (lo, hi) = (b.k1.sqrt(), b.k2.sqrt());
    Ok(vec![
        Check::new("duality", gap <= 3.0 * se, format!("|h_s - h_u| = {gap:e}, 3 stderr = {:e}", 3.0 * se)),
        Check::new(
            "pinching bounds",
            h.mean >= lo - 3.0 * h.stderr && h.mean <= hi + 3.0 * h.stderr,
            format!("{lo:.6} <= {:.6} <= {hi:.6}", h.mean),
        ),
        Check::new(
            "kappa lower bound",
            kappa <= h.mean + 3.0 * h.stderr,
            format!("κ = {kappa:.8}, h = {:.8}", h.mean),
        ),
    ])
}

fn entropy(run: &mut Run, out: &PathBuf) -> Result<Vec<Check>> {
    let field = run.config.initial_field()?;
    let params = run.params();
    let est = entropy_estimate(&field, run.config.n_samples, &params, run.config.seed)?;
    let kappa = mean_root_curvature(&field)?;
    run.info(format!("entropy mean = {:.6} ± {:.1e} (n = {})", est.stable.mean, est.stable.stderr, est.stable.n));
    run.info(format!("dual mean    = {:.6} ± {:.1e}", est.unstable.mean, est.unstable.stderr));
    run.info(format!("reduced      = {:.8} ± {:.1e}", est.reduced.mean, est.reduced.stderr));
    write_reports(
        out,
        &[
            est.stable.clone(),
            est.unstable.clone(),
            est.reduced.clone(),
            exact_row("kappa", kappa, run.config.seed, &params),
        ],
    )?;
    entropy_checks(&field, &est)
}

fn bump_direction(config: &FlowConfig, field: &ConformalField) -> Result<Perturbation> {
    Perturbation::bump(field, config.psi_center, config.psi_amplitude, config.psi_width)
}

fn derivative(run: &mut Run, out: &PathBuf) -> Result<Vec<Check>> {
    let c = run.config.clone();
    let field = c.initial_field()?;
    let params = run.params();
    let psi_k = Perturbation::curvature_deviation(&field)?;
    let psi_b = bump_direction(&c, &field)?;
    let mut reports = Vec::new();
    let mut checks = Vec::new();
    for (label, psi) in [("ricci", &psi_k), ("bump", &psi_b)] {
        let cmp = entropy_derivative_check(&field, psi, c.fd_eps_entropy, c.n_samples, &params, c.seed)?;
        let tol = 3.0 * cmp.formula.combined_stderr(&cmp.finite_difference) + 1e-3;
        run.info(format!(
            "dh/dε ({label}): formula {:e} ± {:.1e}, difference {:e} ± {:.1e}",
            cmp.formula.mean, cmp.formula.stderr, cmp.finite_difference.mean, cmp.finite_difference.stderr
        ));
        checks.push(Check::new(
            &format!("entropy derivative ({label} direction)"),
            cmp.gap() <= tol,
            format!("gap {:e}, tolerance {tol:e}", cmp.gap()),
        ));
        for mut r in [cmp.formula, cmp.finite_difference] {
            r.quantity = format!("{}_{label}", r.quantity);
            reports.push(r);
        }
    }

    let sum = psi_k.sum(&field, &psi_b)?;
    let f = entropy_derivative_formulas(&field, &[&psi_k, &psi_b, &sum], c.n_samples, &params, c.seed)?;
    let defect = (f[2].mean - f[0].mean - f[1].mean).abs();
    checks.push(Check::new(
        "linearity",
        defect <= 1e-12 * (f[0].mean.abs() + f[1].mean.abs()).max(1e-300) + 1e-15,
        format!("additivity defect {defect:e}"),
    ));

    let formula = mrc_derivative_formula(&field, &psi_k)?;
    let fd = mrc_derivative_fd(&field, &psi_k, c.fd_eps_kappa)?;
    let rel = (formula - fd).abs() / formula.abs();
    run.info(format!("dκ/dε: formula {formula:e}, difference {fd:e}"));
    checks.push(Check::new("kappa derivative", rel <= 1e-2, format!("relative gap {rel:e}")));
    checks.push(Check::new("kappa derivative sign", formula > 0.0, format!("{formula:e}")));
    reports.push(exact_row("dkappa_formula", formula, c.seed, &params));
    reports.push(exact_row("dkappa_fd", fd, c.seed, &params));

    let sign = ricci_direction_sign(&field, c.n_samples, &params, c.seed)?;
    checks.push(Check::new(
        "ricci direction sign",
        sign.mean > 3.0 * sign.stderr,
        format!("{:e} ± {:.1e}", sign.mean, sign.stderr),
    ));
    reports.push(sign);

    let ibp = verify_integration_by_parts(&field, &psi_k, c.n_samples, &params, c.seed)?;
    checks.push(Check::new(
        "integration by parts",
        ibp.gap() <= 3.0 * ibp.combined_stderr() + ibp.lhs.tail_bound,
        format!("gap {:e}, combined stderr {:e}", ibp.gap(), ibp.combined_stderr()),
    ));
    reports.push(ibp.lhs);
    reports.push(ibp.rhs);
    write_reports(out, &reports)?;
    Ok(checks)
}

/// Largest residual of each pointwise identity with its tolerance.
pub const IDENTITY_TOLERANCES: [(&str, f64); 4] =
    [("transport", 1e-2), ("vertical derivative", 2e-2), ("stable derivative of w^s", 2e-2), ("coboundary", 1e-3)];

fn identities(run: &mut Run, out: &PathBuf) -> Result<Vec<Check>> {
    let c = run.config.clone();
    let field = c.initial_field()?;
    let params = run.params();
    let psi = Perturbation::curvature_deviation(&field)?;
    let sweep = identity_sweep(&field, &psi, c.identity_samples, &params, c.seed)?;
    let mut reports = Vec::new();
    let mut checks = Vec::new();
    for (j, (name, tol)) in IDENTITY_TOLERANCES.iter().enumerate() {
        let vals: Vec<f64> = sweep
            .iter()
            .map(|(_, r)| [r.transport, r.vertical, r.ws_derivative, r.coboundary][j])
            .collect();
        let worst = vals.iter().copied().fold(0.0, f64::max);
        let mut detail = format!("worst {worst:e} over {} vectors, tolerance {tol:e}", vals.len());
        if j < 3 {
            let resolved = sweep.iter().filter(|(_, r)| r.resolved()[j]).count();
            detail.push_str(&format!(", {resolved} resolved above the error budget"));
        }
        checks.push(Check::new(name, worst <= *tol, detail));
        let mut r = EstimatorReport::from_samples(&format!("{}_residual", name.replace(' ', "_")), &vals, c.seed, &params)?;
        r.tail_bound = worst;
        reports.push(r);
    }
    let m = riccati_mean_check(&field, c.n_samples, &params, c.seed)?;
    checks.push(Check::new(
        "riccati mean",
        m.mean.abs() <= 3.0 * m.stderr + 1e-3,
        format!("{:e} ± {:.1e}", m.mean, m.stderr),
    ));
    reports.push(m);
    write_reports(out, &reports)?;
    Ok(checks)
}

fn pinched(run: &mut Run, out: &PathBuf) -> Result<Vec<Check>> {
    let c = run.config.clone();
    let field = c.initial_field()?;
    let params = run.params();
    let r = pinched_positivity_check(&field, c.n_samples, &params, c.seed)?;
    run.info(format!("pinching ratio K2/K1 = {:.4}", r.pinching));
    let gap = (r.sum.mean - r.direct.mean).abs();
    let se = r.sum.combined_stderr(&r.direct);
    let checks = vec![
        Check::new("pinching at most 6", r.pinching <= 6.0, format!("{:.4}", r.pinching)).monitored(),
        Check::new(
            "riccati band",
            r.band_excess <= 0.0,
            format!("largest excess beyond the error bound {:e}", r.band_excess),
        ),
        Check::new(
            "curvature term non-negative",
            r.curvature_term.mean >= -3.0 * r.curvature_term.stderr,
            format!("{:e} ± {:.1e}", r.curvature_term.mean, r.curvature_term.stderr),
        ),
        Check::new(
            "cubic term non-negative",
            r.cubic_term.mean >= -3.0 * r.cubic_term.stderr,
            format!("{:e} ± {:.1e}", r.cubic_term.mean, r.cubic_term.stderr),
        ),
        Check::new(
            "decomposition",
            gap <= 3.0 * se,
            format!("|sum - direct| = {gap:e}, combined stderr {se:e}"),
        ),
    ];
    write_reports(out, &[r.curvature_term, r.cubic_term, r.direct, r.sum])?;
    Ok(checks)
}

fn jensen(run: &mut Run, out: &PathBuf) -> Result<Vec<Check>> {
    let c = run.config.clone();
    let params = run.params();
    let s = jensen_sweep(c.jensen_trials, c.seed)?;
    write_reports(
        out,
        &[
            exact_row("jensen_min", s.min, c.seed, &params),
            exact_row("jensen_constant_max", s.constant_max, c.seed, &params),
        ],
    )?;
    Ok(vec![
        Check::new("non-negative", s.min >= -1e-12, format!("smallest value {:e} over {} vectors", s.min, s.trials)),
        Check::new("zero on constants", s.constant_max == 0.0, format!("largest |value| {:e}", s.constant_max)),
    ])
}
