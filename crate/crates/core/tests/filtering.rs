//! Suite filtering under real execution.

use bughunt_core::sandbox::{Sandbox, SandboxOptions};
use bughunt_core::variants::{filter_by_suite, passes_suite};
use bughunt_core::{FilterStatus, ProgramVariant, SourceProgram, SuiteTestCase, TaskBundle, VariantOrigin};
use proptest::prelude::*;
use std::sync::OnceLock;

fn sandbox() -> &'static Sandbox {
    static SB: OnceLock<Sandbox> = OnceLock::new();
    SB.get_or_init(|| Sandbox::new(SandboxOptions::default()).unwrap())
}

/// Doubles its input, except that `glitch` maps to one more than that.
fn doubler(glitch: Option<i64>) -> SourceProgram {
    let src = match glitch {
        None => "x = int(input())\nprint(2 * x)\n".to_owned(),
        Some(g) => format!("x = int(input())\nprint(2 * x + (1 if x == {g} else 0))\n"),
    };
    SourceProgram::new("python3", src).unwrap()
}

fn task(suite_inputs: &[i64]) -> TaskBundle {
    TaskBundle {
        task_id: "double".into(),
        specification: "Print twice the input.".into(),
        put: doubler(None),
        suite: suite_inputs
            .iter()
            .map(|x| SuiteTestCase {
                input: format!("{x}\n"),
                expected_output: format!("{}\n", 2 * x),
            })
            .collect(),
        canonical: None,
        checker: None,
        difficulty: None,
    }
}

fn variant(i: usize, program: SourceProgram) -> ProgramVariant {
    ProgramVariant {
        variant_id: format!("v{i:02}"),
        source: program,
        origin: VariantOrigin::PutGuided,
        llm_transcript_ref: String::new(),
        filter_status: FilterStatus::Unfiltered,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn retained_variants_pass_and_mutants_fail(
        suite in proptest::collection::btree_set(-20i64..20, 1..4),
        glitches in proptest::collection::vec(proptest::option::of(-25i64..25), 1..5),
    ) {
        let suite: Vec<i64> = suite.into_iter().collect();
        let t = task(&suite);
        let variants: Vec<ProgramVariant> = glitches
            .iter()
            .enumerate()
            .map(|(i, g)| variant(i, doubler(*g)))
            .collect();
        let kept = filter_by_suite(sandbox(), &t, &variants);
        for v in &kept {
            prop_assert_eq!(v.filter_status, FilterStatus::PassedSuite);
            prop_assert!(passes_suite(sandbox(), &t, &v.source));
        }
        for (v, g) in variants.iter().zip(&glitches) {
            let retained = kept.iter().any(|k| k.variant_id == v.variant_id);
            let hits_suite = g.is_some_and(|g| suite.contains(&g));
            prop_assert_eq!(retained, !hits_suite, "variant {} glitch {:?}", v.variant_id, g);
        }
    }
}

#[test]
fn non_compiling_variant_is_excluded() {
    let t = task(&[1]);
    let broken = variant(0, SourceProgram::new("python3", "print(").unwrap());
    assert!(filter_by_suite(sandbox(), &t, &[broken]).is_empty());
}
