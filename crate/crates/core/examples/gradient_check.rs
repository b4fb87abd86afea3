//! Finite-difference check of every differentiable primitive and of tiny
//! end-to-end models.

use envpred::arch::probe::end_to_end_gradcheck;
use envpred::arch::{HeadKind, Variant};
use envpred::autodiff::gradcheck::primitive_suite;

fn main() -> envpred::Result<()> {
    println!("{:<28} {:>10} {:>8}", "case", "max rel", "checked");
    for (name, r) in primitive_suite(7)? {
        println!("{name:<28} {:>10.2e} {:>8}", r.max_rel_error, r.checked);
    }
    for variant in [Variant::Proposed, Variant::Bb1, Variant::Bb2] {
        for head in [HeadKind::Mse, HeadKind::Cgm { components: 2 }] {
            let r = end_to_end_gradcheck(variant, head, 4)?;
            let name = format!("{} rollout, {}", variant.name(), if head == HeadKind::Mse { "mse" } else { "cgm" });
            println!("{name:<28} {:>10.2e} {:>8}", r.max_rel_error, r.checked);
        }
    }
    Ok(())
}
