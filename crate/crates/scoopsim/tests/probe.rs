//! Scratch diagnostics — deleted before release.

use std::path::Path;

use scoopsim::policy::{run_policy, Controller};
use scoopsim::worldmodel::{
    spawn_scenario, Catalog, ItemGroup, PolicySpec, ScenarioConfig, StrategyToggles,
};

fn dump(label: &str, spec: PolicySpec) {
    let catalog = Catalog::shipped();
    let config = ScenarioConfig {
        items: vec![ItemGroup {
            class: "tofu".into(),
            count: 1,
        }],
        jitter: 0.0,
        seed: 7,
        toggles: StrategyToggles::default(),
        policy: PolicySpec::default(),
    };
    let mut world = spawn_scenario(&config, &catalog).unwrap();
    let controller = Controller::from_spec(&spec, Path::new(".")).unwrap();
    let rollout = run_policy(&mut world, &controller, StrategyToggles::default()).unwrap();
    println!(
        "==== {label} alpha={:?} ====",
        rollout.result.realized_alpha
    );
    for t in &rollout.result.ticks {
        if t.tick % 4 != 0 && t.max_squeeze < 1e-9 {
            continue;
        }
        let it = &t.items[0];
        println!(
            "t{:3} {:9?} u={:.3} pusher=({:+.4},{:+.4}) spoon=({:+.4},{:+.4},{:5.1}deg) \
             item=({:+.4},{:+.4},{:6.1}deg) comp={:.4} sq={:.3} brk={}",
            t.tick,
            t.phase,
            t.progress,
            t.pusher_x,
            t.pusher_z,
            t.scooper_x,
            t.scooper_z,
            t.scooper_pitch.to_degrees(),
            it.x,
            it.z,
            it.angle.to_degrees(),
            it.compression,
            t.max_squeeze,
            t.breaks,
        );
    }
    let end = rollout.result.ticks.last().unwrap();
    println!(
        "END verdict={:?} members_end_pushing={:?} in_spoon={:.4} initial={:.4}",
        rollout.verdict,
        rollout.spoon_members_end_pushing,
        end.account.in_spoon,
        world.initial_mass,
    );
    let it = world.items.first().unwrap();
    println!(
        "final item=({:+.4},{:+.4},{:.1}deg) lip=({:+.4},{:+.4}) pitch={:.1}",
        it.pose.position.x,
        it.pose.position.z,
        it.pose.angle.to_degrees(),
        world.tools.scooper.position.x,
        world.tools.scooper.position.z,
        world.tools.scooper.pitch.to_degrees(),
    );
}

#[test]
fn probe_tofu() {
    dump("fixed_alpha(1.0)", PolicySpec::FixedAlpha { alpha: 1.0 });
    dump("oracle", PolicySpec::OracleServo { margin: None });
}
