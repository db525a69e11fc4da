//! Acceptance criteria: one PASS/FAIL line per criterion, each with its
//! wall-clock bound. Exits non-zero when any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use blrkit_harness::verify::{conjugate, estimators, optimizers, verify, Check, Suite};

struct Outcome {
    passed: bool,
    detail: String,
}

fn from_checks(checks: &[Check]) -> Outcome {
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.to_string()).collect();
    let detail = if failed.is_empty() {
        checks.iter().map(|c| format!("{:.2e}", c.measured)).collect::<Vec<_>>().join(", ")
    } else {
        failed.join("; ")
    };
    Outcome { passed: failed.is_empty(), detail }
}

fn or_error(r: blrkit::Result<Outcome>) -> Outcome {
    r.unwrap_or_else(|e| Outcome { passed: false, detail: format!("error: {e}") })
}

fn newton_equivalence() -> Outcome {
    or_error(optimizers::newton_equivalence(20, 10).map(|c| from_checks(&[c])))
}

fn ridge_fixed_point() -> Outcome {
    or_error((|| Ok(from_checks(&[conjugate::ridge_routes(20)?, conjugate::ridge_hand_instance()?])))())
}

fn duality_geometry() -> Outcome {
    let expfam = verify(Suite::Expfam);
    let blr = verify(Suite::Blr);
    let mut checks = expfam.checks;
    checks.extend(blr.checks.into_iter().filter(|c| c.name == "mirror_step_equals_natural_gradient_step"));
    from_checks(&checks)
}

fn bonnet_price() -> Outcome {
    or_error(estimators::sampling_unbiased(50, 10_000).map(|c| from_checks(&c)))
}

fn rmsprop_correspondence() -> Outcome {
    or_error(optimizers::rmsprop_twin_run(500).map(|c| from_checks(&c)))
}

fn ogn_vogn() -> Outcome {
    or_error((|| {
        let (residual, step) = optimizers::vogn_logistic_residual(5000, 1e-3)?;
        let shift = optimizers::vogn_asymmetric_shift()?;
        let mut out = from_checks(&[optimizers::ogn_ridge_scale()?, residual.clone(), shift.clone()]);
        out.detail = format!("{}; vogn residual step {step}; {}", out.detail, shift.note);
        Ok(out)
    })())
}

fn bayesbinn() -> Outcome {
    or_error((|| {
        let signs = optimizers::bayesbinn_ste_signs(3, 50)?;
        let runs = optimizers::bayesbinn_xor_accuracy(5, 3000, 0.95)?;
        let hits = runs.iter().filter(|r| r.0.is_some()).count();
        let mut out = from_checks(&[signs, Check::at_least("xor_seeds_reaching_95", hits as f64, 5.0)]);
        out.detail = format!("{}; first step at 95% {:?}, final accuracy {:?}", out.detail,
            runs.iter().map(|r| r.0).collect::<Vec<_>>(), runs.iter().map(|r| r.1).collect::<Vec<_>>());
        Ok(out)
    })())
}

fn mixture() -> Outcome {
    or_error((|| {
        let mut lines = vec![];
        let mut passed = true;
        for seed in 0..5 {
            let (err, resp, collapsed) = optimizers::mixture_double_well(seed, 400)?;
            passed &= err < 1e-2 && resp >= 0.99 && !collapsed;
            lines.push(format!("seed {seed}: |m -+ 1| {err:.1e}, resp {resp:.4}"));
        }
        Ok(Outcome { passed, detail: lines.join(", ") })
    })())
}

fn em_svi() -> Outcome {
    or_error((|| {
        let mut svi = 0.0f64;
        for seed in 0..5 {
            svi = svi.max(conjugate::svi_recovery_error(seed)?);
        }
        Ok(from_checks(&[
            conjugate::em_monotone(100)?,
            conjugate::em_textbook(20)?,
            conjugate::svi_full_batch_sweep()?,
            Check::at_most("svi_recovery_sd", svi, 3.0),
        ]))
    })())
}

fn dropout() -> Outcome {
    or_error(optimizers::dropout_reduction(200).map(|c| from_checks(&[c])))
}

fn hygiene() -> Outcome {
    let problems = verify(Suite::Problems);
    let mut out = from_checks(&problems.checks);
    match Command::new(env!("CARGO_BIN_EXE_blrkit")).args(["verify", "all"]).output() {
        Ok(o) if o.status.success() => out.detail = format!("{}; verify all exit 0", out.detail),
        Ok(o) => {
            out.passed = false;
            out.detail = format!("verify all exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stdout));
        }
        Err(e) => {
            out.passed = false;
            out.detail = format!("cannot start blrkit: {e}");
        }
    }
    out
}

type Criterion = (u32, &'static str, u64, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        (1, "newton equivalence", 1, newton_equivalence),
        (2, "ridge fixed point", 1, ridge_fixed_point),
        (3, "duality and geometry", 10, duality_geometry),
        (4, "sampling estimators", 30, bonnet_price),
        (5, "rmsprop correspondence", 5, rmsprop_correspondence),
        (6, "ogn and vogn", 60, ogn_vogn),
        (7, "bayesbinn", 60, bayesbinn),
        (8, "mixture double-well", 30, mixture),
        (9, "em and svi", 60, em_svi),
        (10, "dropout reduction", 5, dropout),
        (11, "gradient hygiene", 60, hygiene),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, bound, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = f();
        let took = start.elapsed();
        let ok = out.passed && took < Duration::from_secs(bound);
        failed += usize::from(!ok);
        println!(
            "{} C{id} {name}: {} ({:.2}s, bound {bound}s)",
            if ok { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
