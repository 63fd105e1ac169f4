//! The table-producing subcommands.

use clap::Args;
use rayon::prelude::*;

use rgw::classify::{self, Verdict};
use rgw::measures::{self, OffspringLaw, ProbVector};
use rgw::simulate::{self, GenerationReport, RngStream, DEFAULT_POP_CAP};
use rgw::{rate, survival};

use crate::input::{
    load_law, load_prob, parse_list, parse_mesh, parse_q, parse_q_grid, parse_real,
};
use crate::output::{key, open, real_key, Cell, Sink};
use crate::{CliError, Common};

/// Replicas are simulated in blocks of this size and written in order.
const BLOCK: u64 = 4096;

fn sink(common: &Common, columns: Vec<&'static str>) -> Result<Sink, CliError> {
    Sink::new(open(common.out.as_deref())?, common.format, columns)
}

fn is_flagship(nu: &OffspringLaw, q: f64) -> bool {
    nu.support() == [1, 2]
        && nu.weights().iter().all(|w| (w - 0.5).abs() < 1e-15)
        && (q - 1.0 / 3.0).abs() < 1e-15
}

#[derive(Debug, Args)]
pub struct RateArgs {
    /// Reproduction law: JSON file or inline `{"support":[..],"probs":[..]}`.
    #[arg(long)]
    pub law: String,
    /// Memory parameter in [0, 1), decimal or ratio such as 1/3.
    #[arg(long)]
    pub q: String,
    /// Step of the grid ρ_p = (p, 1 − p) over p ∈ [0, 1] (two-atom laws).
    #[arg(long, conflicts_with = "rho")]
    pub grid: Option<String>,
    /// A single target probability vector (JSON file or inline).
    #[arg(long)]
    pub rho: Option<String>,
}

fn two_atom_family(nu: &OffspringLaw, mesh: u32) -> Result<Vec<ProbVector>, CliError> {
    if nu.len() != 2 {
        return Err(CliError::validation(
            "a p-grid needs a law with exactly two atoms",
        ));
    }
    (0..=mesh)
        .map(|i| {
            let p = i as f64 / mesh as f64;
            ProbVector::new(nu.support().to_vec(), vec![p, 1.0 - p]).map_err(CliError::from)
        })
        .collect()
}

pub fn rate(args: &RateArgs, common: &Common) -> Result<(), CliError> {
    let nu = load_law(&args.law)?;
    let q = parse_q(&args.q, true)?;
    let targets = match (&args.grid, &args.rho) {
        (Some(g), None) => two_atom_family(&nu, parse_mesh(g)?)?,
        (None, Some(r)) => vec![load_prob(r)?],
        _ => return Err(CliError::validation("give exactly one of --grid or --rho")),
    };
    let closed = is_flagship(&nu, q);
    let rows: Vec<(f64, f64, f64)> = targets
        .par_iter()
        .map(|rho| -> Result<_, CliError> {
            let rho = rho.on_support(nu.support())?;
            let (star, upper) = if q == 0.0 {
                let h = rate::lambda0_star(&rho, &nu)?.get();
                (h, h)
            } else {
                let upper =
                    measures::relative_entropy(&rho, &measures::mix(q, &rho, nu.as_prob())?)?.get();
                (rate::lambda_q_star(&rho, &nu, q)?.value, upper)
            };
            Ok((rho.weights()[0], star, upper))
        })
        .collect::<Result<_, _>>()?;
    let mut out = sink(
        common,
        vec![
            "p",
            "rate_closed_form_available",
            "lambda_star",
            "upper_bound_H",
            "neg_log_q",
        ],
    )?;
    for (p, star, upper) in rows {
        out.row(vec![
            p.into(),
            closed.into(),
            star.into(),
            upper.into(),
            (-q.ln()).into(),
        ])?;
    }
    out.finish()
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Reproduction law (JSON file or inline).
    #[arg(long)]
    pub law: String,
    /// Memory parameter in [0, 1); 0 uses the classical criteria.
    #[arg(long)]
    pub q: String,
    /// A single target (JSON file or inline).
    #[arg(long, conflicts_with = "grid")]
    pub rho: Option<String>,
    /// Mesh of a grid over the simplex on the support, e.g. 1/200.
    #[arg(long)]
    pub grid: Option<String>,
}

/// Every `ρ` on the support with weights in `(1/m) ℕ`.
fn simplex_grid(support: &[u32], m: u32) -> Result<Vec<ProbVector>, CliError> {
    fn rec(d: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if d == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in 0..=left {
            prefix.push(c);
            rec(d - 1, left - c, prefix, out);
            prefix.pop();
        }
    }
    let mut comps = Vec::new();
    rec(support.len(), m, &mut Vec::new(), &mut comps);
    if comps.len() > 5_000_000 {
        return Err(CliError::validation(format!(
            "grid of {} points is too large",
            comps.len()
        )));
    }
    comps
        .into_iter()
        .map(|c| {
            let w: Vec<f64> = c.iter().map(|&x| x as f64 / m as f64).collect();
            ProbVector::from_masses(support.to_vec(), &w).map_err(CliError::from)
        })
        .collect()
}

fn verdict(rho: &ProbVector, nu: &OffspringLaw, q: f64) -> rgw::Result<Verdict> {
    if q == 0.0 {
        classify::classify_gw(rho, nu)
    } else {
        classify::classify_rgw(rho, nu, q)
    }
}

pub fn classify(args: &ClassifyArgs, common: &Common) -> Result<(), CliError> {
    let nu = load_law(&args.law)?;
    let q = parse_q(&args.q, true)?;
    let targets = match (&args.rho, &args.grid) {
        (Some(r), None) => vec![load_prob(r)?],
        (None, Some(g)) => simplex_grid(nu.support(), parse_mesh(g)?)?,
        _ => return Err(CliError::validation("give exactly one of --rho or --grid")),
    };
    let verdicts: Vec<Verdict> = targets
        .par_iter()
        .map(|rho| verdict(rho, &nu, q))
        .collect::<rgw::Result<_>>()?;
    let mut out = sink(
        common,
        vec![
            "rho_key",
            "kind",
            "margin_evanescence",
            "margin_persistence",
            "subcritical_flag",
        ],
    )?;
    for (rho, v) in targets.iter().zip(verdicts) {
        for d in &v.diagnostics {
            eprintln!("rgw: note for {}: {d}", real_key(rho.weights()));
        }
        out.row(vec![
            real_key(rho.weights()).into(),
            v.kind.to_string().into(),
            v.margin_evanescence.into(),
            v.margin_persistence.into(),
            v.subcritical_flag.into(),
        ])?;
    }
    out.finish()
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Reproduction law (JSON file or inline).
    #[arg(long)]
    pub law: String,
    /// Memory parameter in [0, 1).
    #[arg(long)]
    pub q: String,
    /// Last generation to simulate.
    #[arg(long)]
    pub n_max: u32,
    /// Per-generation population at which a run is truncated.
    #[arg(long, default_value_t = DEFAULT_POP_CAP)]
    pub pop_cap: u64,
    /// Number of independent runs.
    #[arg(long, default_value_t = 1)]
    pub replicas: u64,
}

fn generation_rows(replica: u64, report: &GenerationReport, extra: &[Cell]) -> Vec<Vec<Cell>> {
    let head = |hist_key: Cell, count: Cell| {
        let mut row = vec![replica.into(), report.generation.into()];
        row.extend_from_slice(extra);
        row.extend([
            report.population.into(),
            report.survived.into(),
            report.truncated.into(),
            hist_key,
            count,
        ]);
        row
    };
    if report.histogram.is_empty() {
        return vec![head(Cell::Empty, 0u64.into())];
    }
    report
        .histogram
        .iter()
        .map(|(k, &c)| head(key(k).into(), c.into()))
        .collect()
}

/// Runs `replicas` jobs in parallel blocks and hands the results over in order.
fn blocked<T: Send>(
    replicas: u64,
    job: impl Fn(u64) -> rgw::Result<T> + Sync,
    mut emit: impl FnMut(u64, T) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let mut start = 0;
    while start < replicas {
        let end = (start + BLOCK).min(replicas);
        let block: Vec<T> = (start..end)
            .into_par_iter()
            .map(&job)
            .collect::<rgw::Result<_>>()?;
        for (i, item) in block.into_iter().enumerate() {
            emit(start + i as u64, item)?;
        }
        start = end;
    }
    Ok(())
}

fn check_replicas(replicas: u64) -> Result<(), CliError> {
    if replicas == 0 {
        return Err(CliError::validation("need at least one replica"));
    }
    Ok(())
}

pub fn simulate(args: &SimulateArgs, common: &Common) -> Result<(), CliError> {
    let nu = load_law(&args.law)?;
    let q = parse_q(&args.q, true)?;
    check_replicas(args.replicas)?;
    let stream = RngStream::new(common.seed, 0);
    let mut out = sink(
        common,
        vec![
            "replica",
            "generation",
            "population",
            "survived",
            "truncated",
            "hist_key",
            "hist_count",
        ],
    )?;
    blocked(
        args.replicas,
        |r| simulate::simulate_rgw(&nu, q, args.n_max, args.pop_cap, stream.split(r)),
        |r, reports| {
            for rep in &reports {
                for row in generation_rows(r, rep, &[]) {
                    out.row(row)?;
                }
            }
            Ok(())
        },
    )?;
    out.finish()
}

#[derive(Debug, Args)]
pub struct UrnArgs {
    /// Reproduction law (JSON file or inline).
    #[arg(long)]
    pub law: String,
    /// Memory parameter in (0, 1).
    #[arg(long)]
    pub q: String,
    /// Number of draws.
    #[arg(long)]
    pub n: u64,
    /// Number of independent runs.
    #[arg(long, default_value_t = 1)]
    pub replicas: u64,
    /// Print the exact law of the counts after `n` draws instead of simulating.
    #[arg(long)]
    pub exact: bool,
}

pub fn urn(args: &UrnArgs, common: &Common) -> Result<(), CliError> {
    let nu = load_law(&args.law)?;
    let q = parse_q(&args.q, false)?;
    if args.exact {
        let n = u32::try_from(args.n)
            .map_err(|_| CliError::validation("n too large for exact mode"))?;
        let law = simulate::exact_empirical_law(&nu, q, n)?;
        let mut out = sink(common, vec!["count_key", "probability"])?;
        for (k, p) in law {
            out.row(vec![key(&k).into(), p.into()])?;
        }
        return out.finish();
    }
    check_replicas(args.replicas)?;
    let stream = RngStream::new(common.seed, 1);
    let mut out = sink(common, vec!["replica", "atom", "count", "frequency"])?;
    blocked(
        args.replicas,
        |r| simulate::simulate_urn(&nu, q, args.n, stream.split(r)).map(|(_, l)| l),
        |r, l| {
            for (&k, &c) in l.support().iter().zip(l.counts()) {
                out.row(vec![
                    r.into(),
                    k.into(),
                    c.into(),
                    (c as f64 / l.total() as f64).into(),
                ])?;
            }
            Ok(())
        },
    )?;
    out.finish()
}

#[derive(Debug, Args)]
pub struct SpineArgs {
    /// Reproduction law (JSON file or inline).
    #[arg(long)]
    pub law: String,
    /// Memory parameter in (0, 1).
    #[arg(long)]
    pub q: String,
    /// Activity vector, one entry per atom of the support.
    #[arg(long, conflicts_with = "rho")]
    pub a: Option<String>,
    /// Target whose activity `ρ/(qρ + (1−q)ν)` is used instead of `--a`.
    #[arg(long)]
    pub rho: Option<String>,
    /// Number of draws of the urn.
    #[arg(long)]
    pub n: u64,
}

pub fn spine(args: &SpineArgs, common: &Common) -> Result<(), CliError> {
    let nu = load_law(&args.law)?;
    let q = parse_q(&args.q, false)?;
    let a = match (&args.a, &args.rho) {
        (Some(a), None) => parse_list(a)?,
        (None, Some(r)) => classify::a_from_rho(&load_prob(r)?, &nu, q)?,
        _ => return Err(CliError::validation("give exactly one of --a or --rho")),
    };
    let (freq, _) =
        simulate::simulate_spine_urn(&nu, q, &a, args.n, RngStream::new(common.seed, 2))?;
    let rep = simulate::replacement_matrix(&nu, q, &a)?;
    let pi = ProbVector::from_masses(
        nu.support().to_vec(),
        &simulate::spine::pi_weights(&a, &nu, q),
    )?;
    let mut out = sink(
        common,
        vec![
            "atom",
            "activity",
            "frequency",
            "pi_a",
            "eigenvector",
            "eigenvalue",
            "constraint_residual",
        ],
    )?;
    for (i, &k) in nu.support().iter().enumerate() {
        out.row(vec![
            k.into(),
            a[i].into(),
            freq.weights()[i].into(),
            pi.weights()[i].into(),
            rep.eigenvector_on_support.weights()[i].into(),
            rep.eigenvalue.into(),
            rep.constraint_residual.into(),
        ])?;
    }
    out.finish()
}

#[derive(Debug, Args)]
pub struct TwoTypeArgs {
    /// Law of the type-1 children (a type-1 individual also has one type-2 child).
    #[arg(long)]
    pub law: String,
    /// Law of the type-2 children.
    #[arg(long)]
    pub law_prime: String,
    /// Last generation to simulate.
    #[arg(long)]
    pub n_max: u32,
    /// Per-generation population at which a run is truncated.
    #[arg(long, default_value_t = DEFAULT_POP_CAP)]
    pub pop_cap: u64,
    /// Number of independent runs.
    #[arg(long, default_value_t = 1)]
    pub replicas: u64,
}

pub fn two_type(args: &TwoTypeArgs, common: &Common) -> Result<(), CliError> {
    let nu = load_law(&args.law)?;
    let nu_prime = load_law(&args.law_prime)?;
    check_replicas(args.replicas)?;
    let stream = RngStream::new(common.seed, 3);
    let mut out = sink(
        common,
        vec![
            "replica",
            "generation",
            "type1",
            "type2",
            "population",
            "survived",
            "truncated",
            "hist_key",
            "hist_count",
        ],
    )?;
    let mut warned = false;
    blocked(
        args.replicas,
        |r| simulate::simulate_two_type(&nu, &nu_prime, args.n_max, args.pop_cap, stream.split(r)),
        |r, run| {
            if let (Some(w), false) = (&run.assumption_warning, warned) {
                eprintln!("rgw: warning: {w}");
                warned = true;
            }
            for g in &run.generations {
                let extra = [g.type1.population.into(), g.type2.population.into()];
                for row in generation_rows(r, &g.merged, &extra) {
                    out.row(row)?;
                }
            }
            Ok(())
        },
    )?;
    out.finish()
}

#[derive(Debug, Args)]
pub struct GibbsArgs {
    /// Reproduction law (JSON file or inline).
    #[arg(long)]
    pub law: String,
    /// Memory parameter in (0, 1).
    #[arg(long)]
    pub q: String,
    /// Length of the urn sequence.
    #[arg(long)]
    pub n: u32,
    /// Normal `w` of the event `⟨L_n, w⟩ ≥ c`, one entry per atom.
    #[arg(long)]
    pub w: String,
    /// Threshold `c` of the event.
    #[arg(long)]
    pub c: String,
    /// Number of proposals for rejection sampling.
    #[arg(long, default_value_t = 100_000)]
    pub replicas: u64,
    /// Also report the exact conditional mean (feasible for moderate n).
    #[arg(long)]
    pub exact: bool,
}

pub fn gibbs(args: &GibbsArgs, common: &Common) -> Result<(), CliError> {
    let nu = load_law(&args.law)?;
    let q = parse_q(&args.q, false)?;
    let w = parse_list(&args.w)?;
    let c = parse_real(&args.c)?;
    let est = simulate::gibbs_conditional_estimate(
        &nu,
        q,
        args.n,
        &w,
        c,
        args.replicas,
        RngStream::new(common.seed, 4),
    )?;
    let exact = if args.exact {
        Some(simulate::exact_conditional_mean(&nu, q, args.n, &w, c)?)
    } else {
        None
    };
    let mut out = sink(
        common,
        vec![
            "atom",
            "estimate",
            "exact",
            "event_probability",
            "accepted",
            "proposals",
        ],
    )?;
    for (i, &k) in nu.support().iter().enumerate() {
        let (ex, mass) = match &exact {
            Some((m, p)) => (Cell::Real(m.weights()[i]), Cell::Real(*p)),
            None => (Cell::Empty, Cell::Empty),
        };
        out.row(vec![
            k.into(),
            est.mean.weights()[i].into(),
            ex,
            mass,
            est.accepted.into(),
            est.proposals.into(),
        ])?;
    }
    out.finish()
}

#[derive(Debug, Args)]
pub struct SurvivalArgs {
    /// Reproduction law (JSON file or inline).
    #[arg(long)]
    pub law: String,
    /// Memory parameter in (0, 1).
    #[arg(long, conflicts_with = "q_grid")]
    pub q: Option<String>,
    /// Grid `a:b:step` of memory parameters.
    #[arg(long)]
    pub q_grid: Option<String>,
}

pub fn survival(args: &SurvivalArgs, common: &Common) -> Result<(), CliError> {
    let nu = load_law(&args.law)?;
    let qs = match (&args.q, &args.q_grid) {
        (Some(q), None) => vec![parse_q(q, false)?],
        (None, Some(g)) => {
            let qs = parse_q_grid(g)?;
            if qs.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
                return Err(CliError::validation(format!("grid {g} leaves (0, 1)")));
            }
            qs
        }
        _ => return Err(CliError::validation("give exactly one of --q or --q-grid")),
    };
    let reports: Vec<_> = qs
        .par_iter()
        .map(|&q| survival::solve_survival_minimizer(&nu, q))
        .collect::<rgw::Result<_>>()?;
    if let Some(reason) = reports.first().and_then(|r| r.trivial_survival.as_ref()) {
        eprintln!(
            "rgw: note: survival is certain ({reason}); the criterion is reported as computed"
        );
    }
    let mut out = sink(
        common,
        vec!["q", "C", "J_min", "J_baseline", "survives_certified"],
    )?;
    for (q, r) in qs.iter().zip(reports) {
        out.row(vec![
            (*q).into(),
            r.c.into(),
            r.j_min.into(),
            r.j_baseline.into(),
            r.survives_certified.into(),
        ])?;
    }
    out.finish()
}
