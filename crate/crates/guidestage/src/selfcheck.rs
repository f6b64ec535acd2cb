//! The full invariant suite behind `guidestage selfcheck`.

use std::time::Instant;

use crate::checks::{self, CheckResult, Fault, Variant};

pub const SELFCHECK_SEED: u64 = 0x5E1F;

pub struct CheckOutcome {
    pub name: &'static str,
    pub result: CheckResult,
    pub seconds: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.result.is_ok()
    }
}

type Check = (&'static str, Box<dyn Fn(u64, Fault) -> CheckResult>);

fn suite() -> Vec<Check> {
    vec![
        ("full attention = dense oracle", Box::new(|s, f| checks::attention_oracle(Variant::Full, 50, s, f))),
        ("reference attention = dense oracle", Box::new(|s, f| checks::attention_oracle(Variant::Reference, 50, s, f))),
        ("object attention = dense oracle", Box::new(|s, f| checks::attention_oracle(Variant::Object, 50, s, f))),
        ("reference stream ignores video", Box::new(|s, _| checks::routing_isolation(100, s))),
        ("object attention contract", Box::new(|s, f| checks::object_contract(20, s, f))),
        ("flow loss gradients", Box::new(|s, _| checks::fm_loss_gradients(10, s))),
        ("min rotated rect = angle sweep", Box::new(|s, _| checks::min_rect_sweep(100, s))),
        ("rect IoU = sampled IoU", Box::new(|s, _| checks::iou_sampled(50, s))),
        ("template match = brute force", Box::new(|s, _| checks::match_brute_force(200, s))),
        ("plan aspect and two-hand width", Box::new(|s, _| checks::plan_properties(40, s))),
        ("Euler sampler and CFG", Box::new(|s, _| checks::sampler(s))),
        ("clip chaining boundaries", Box::new(|s, _| checks::clip_chaining(s))),
    ]
}

pub fn run(seed: u64, fault: Fault) -> Vec<CheckOutcome> {
    suite()
        .into_iter()
        .map(|(name, check)| {
            let start = Instant::now();
            let result = check(seed, fault);
            CheckOutcome {
                name,
                result,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

/// Deterministic for a fixed seed; timings are reported separately.
pub fn table(outcomes: &[CheckOutcome]) -> String {
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for o in outcomes {
        let (tag, detail) = match &o.result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        out.push_str(&format!("{tag}  {:<width$}  {detail}\n", o.name));
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    out.push_str(&format!("{} checks, {failed} failed\n", outcomes.len()));
    out
}
