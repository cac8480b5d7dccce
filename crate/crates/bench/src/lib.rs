//! Scenario list shared by the benchmarks.

use mpc_core::sim::{CstrScenario, PendulumController, PendulumScenario, PendulumTest, Scenario};

/// Scenarios timed by the benchmark suite, keyed by their file label.
pub fn scenarios() -> Vec<Scenario> {
    let mut v = vec![
        Scenario::Cstr(CstrScenario::default()),
        Scenario::Cstr(CstrScenario { feedforward: true, ..Default::default() }),
    ];
    for c in [PendulumController::Nmpc, PendulumController::Empc, PendulumController::Slmpc] {
        for t in [PendulumTest::Track, PendulumTest::Regulate] {
            v.push(Scenario::Pendulum(PendulumScenario::new(c, t)));
        }
    }
    v
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_scenario_builds_and_labels_are_unique() {
        let all = super::scenarios();
        let mut labels: Vec<String> = all.iter().map(|s| s.label()).collect();
        for s in &all {
            s.build().unwrap();
        }
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), all.len());
    }
}
