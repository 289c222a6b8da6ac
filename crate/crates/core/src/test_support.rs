//! Small hand-built worlds shared by unit tests.

use crate::domain::{ContextSpec, InputSpec, TaskSpec, TeacherBank, TokenDistribution, VocabularySpec, World};

fn td(p: &[f64]) -> TokenDistribution {
    TokenDistribution::new(p.to_vec()).unwrap()
}

/// One input, one task, one context holding the two three-token teachers
/// `(0.8, 0.15, 0.05)` and `(0.4, 0.35, 0.25)`. Token 0 is a safety token and
/// the context is safety-critical.
pub fn appendix_world(safety: [f64; 2]) -> World {
    let bank = TeacherBank::new(
        2,
        1,
        vec![vec![td(&[0.8, 0.15, 0.05]), td(&[0.4, 0.35, 0.25])]],
        vec![vec![Some(0.9)], vec![Some(0.6)]],
        vec![Some(safety[0]), Some(safety[1])],
    )
    .unwrap();
    World::new(
        VocabularySpec::new(3, vec![0]).unwrap(),
        vec![InputSpec { id: 0, features: vec![0.0] }],
        vec![TaskSpec { id: 0, inputs: vec![(0, 1.0)], importance: 1.0 }],
        vec![ContextSpec { id: 0, features: vec![0.0], measure_weight: 1.0, safety_critical: true }],
        bank,
    )
    .unwrap()
}

/// Two teachers over three tokens in two inputs and two contexts. Teacher 0 is
/// the safest but the least confident everywhere; token 0 and context 1 are
/// safety-critical.
pub fn confident_unsafe_world() -> World {
    let cautious = td(&[0.4, 0.35, 0.25]);
    let bold = [td(&[0.9, 0.05, 0.05]), td(&[0.05, 0.9, 0.05])];
    let table = (0..4).map(|cell| vec![cautious.clone(), bold[cell % 2].clone()]).collect();
    let bank =
        TeacherBank::new(2, 2, table, vec![vec![Some(0.6)], vec![Some(0.9)]], vec![Some(0.9), Some(0.2)]).unwrap();
    World::new(
        VocabularySpec::new(3, vec![0]).unwrap(),
        (0..2).map(|id| InputSpec { id, features: vec![id as f64] }).collect(),
        vec![TaskSpec { id: 0, inputs: vec![(0, 0.5), (1, 0.5)], importance: 1.0 }],
        (0..2)
            .map(|id| ContextSpec { id, features: vec![id as f64], measure_weight: 0.5, safety_critical: id == 1 })
            .collect(),
        bank,
    )
    .unwrap()
}
