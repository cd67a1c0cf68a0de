use serde::{Deserialize, Serialize};

use super::{ItemCatalog, SessionRecord};
use crate::scalar::Scalar;
use crate::slate::{ActionSlate, Step};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NextStep {
    Step(Step),
    Terminal,
}

/// One training tuple: state (session, step), action, reward, successor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition<T> {
    pub session_ref: usize,
    pub step: Step,
    pub action: ActionSlate,
    pub reward: T,
    pub next_step: NextStep,
}

/// Converts logged sessions into transitions.
///
/// A step is only emitted if every item of every earlier step was bought;
/// later labels in the log are ignored once the session has terminated.
/// Sessions must already be validated against `catalog`.
pub fn sessions_to_transitions<T: Scalar>(
    sessions: &[SessionRecord<T>],
    catalog: &ItemCatalog<T>,
) -> Vec<Transition<T>> {
    let mut out = Vec::with_capacity(sessions.len() * 3 / 2);
    for (session_ref, s) in sessions.iter().enumerate() {
        for step in Step::ALL {
            let items = s.slate_at(step);
            let labels = s.labels_at(step);
            let action = ActionSlate::new(items).expect("validated session slate has three distinct items per row");
            let reward = items
                .iter()
                .zip(labels.iter())
                .filter(|(_, &l)| l)
                .map(|(&i, _)| catalog.price(i).expect("validated session item"))
                .fold(T::zero(), |a, p| a + p);
            let all_bought = labels.iter().all(|&l| l);
            let next_step = match step.next() {
                Some(n) if all_bought => NextStep::Step(n),
                _ => NextStep::Terminal,
            };
            out.push(Transition {
                session_ref,
                step,
                action,
                reward,
                next_step,
            });
            if next_step == NextStep::Terminal {
                break;
            }
        }
    }
    out
}
