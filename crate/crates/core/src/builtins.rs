//! Named example models.
//!
//! Where only the family `𝒫` and the intended chain are fixed by the model's
//! description, the weights are fixtures chosen to realize that chain. Every
//! fixture records its expected chain and the unit tests re-derive it with
//! the solver, so a wrong fixture fails loudly.

use crate::chain::Chain;
use crate::model::{validate_model, ModelDraft, ModelError, ModelSpec};
use crate::subset::Subset;

pub const BUILTIN_NAMES: [&str; 8] = ["REM", "M1", "M2", "M2c", "M3", "M4", "M5", "paradigmatic"];

#[derive(Debug, Clone)]
pub struct Builtin {
    pub name: &'static str,
    pub spec: ModelSpec,
    pub expected_chain: Chain,
    pub description: &'static str,
}

fn chain(sets: &[&[usize]]) -> Chain {
    Chain::new(sets.iter().map(|s| Subset::from_labels(s.iter().copied()).expect("valid labels")).collect())
        .expect("fixture chain is valid")
}

pub fn builtin_model(name: &str) -> Result<Builtin, ModelError> {
    let third = 1.0 / 3.0;
    let (name, draft, expected, description): (&'static str, ModelDraft, Chain, &'static str) = match name {
        "REM" => (
            "REM",
            ModelDraft::new(&[1.0], &[(&[1], 1.0)]),
            chain(&[&[], &[1]]),
            "random energy model; one level, no critical subsets",
        ),
        "M1" => (
            "M1",
            ModelDraft::new(&[0.5, 0.5], &[(&[1], 0.25), (&[1, 2], 0.75)]),
            chain(&[&[], &[1, 2]]),
            "two-level GREM collapsing to one level; no critical subsets, irreducible",
        ),
        "M2" => (
            "M2",
            ModelDraft::new(&[0.5, 0.5], &[(&[1], 0.25), (&[2], 0.25), (&[1, 2], 0.5)]),
            chain(&[&[], &[1, 2]]),
            "two single-spin fields plus a coupling; no critical subsets, irreducible",
        ),
        "M2c" => (
            "M2c",
            ModelDraft::new(&[0.5, 0.5], &[(&[1], 0.5), (&[2], 0.2), (&[1, 2], 0.3)]),
            chain(&[&[], &[1, 2]]),
            "critical variant of M2: {1} is critical with alpha_hat = 1/2, C_1 = 1/2",
        ),
        "M3" => (
            "M3",
            ModelDraft::new(&[0.5, 0.5], &[(&[1], 0.5), (&[2], 0.5)]),
            chain(&[&[], &[1, 2]]),
            "two independent REMs; {1} and {2} both critical, reducible, C_1 degenerate",
        ),
        "M4" => (
            "M4",
            ModelDraft::new(&[0.5, 0.5], &[(&[1], 0.75), (&[1, 2], 0.25)]),
            chain(&[&[], &[1], &[1, 2]]),
            "genuine two-level GREM; no critical subsets, irreducible",
        ),
        "M5" => (
            "M5",
            ModelDraft::new(&[0.25, 0.375, 0.375], &[(&[1], 0.5), (&[2], 0.2), (&[2, 3], 0.3)]),
            chain(&[&[], &[1], &[1, 2, 3]]),
            "second level does not touch the first layer; fails condition c'",
        ),
        "paradigmatic" => (
            "paradigmatic",
            ModelDraft::new(&[third; 3], &[(&[1, 2], third), (&[1, 3], third), (&[2, 3], third)]).renormalized(),
            chain(&[&[], &[1, 2, 3]]),
            "three pair couplings on three coordinates; one level, irreducible",
        ),
        other => return Err(ModelError::UnknownModel(other.to_string())),
    };
    Ok(Builtin { name, spec: validate_model(&draft)?, expected_chain: expected, description })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_chain, DEFAULT_TOL};

    #[test]
    fn solver_reproduces_every_fixture_chain() {
        for name in BUILTIN_NAMES {
            let b = builtin_model(name).unwrap();
            let (c, _) = build_chain(&b.spec, DEFAULT_TOL).unwrap();
            assert_eq!(c, b.expected_chain, "{name}");
        }
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(builtin_model("M9"), Err(ModelError::UnknownModel(_))));
    }
}
