use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teleop_core::gesture::RobotCommand;
use teleop_core::scene::{Cell, CellConfig, Scene};
use teleop_core::session::{ArbitrationEvent, Policy, RequestOutcome, RouteOutcome, Session};

const CMD: RobotCommand = RobotCommand::GripperSet { opening: 0.02 };

#[derive(Debug, Clone, Copy)]
enum Op {
    Join(usize),
    Leave(usize),
    Request(usize),
    Touch(usize),
    Route(usize),
    AutoRoute(usize),
    Advance(u64),
}

fn random_ops(seed: u64, n: usize) -> Vec<Op> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u = rng.random_range(0..6);
            match rng.random_range(0..7) {
                0 => Op::Join(u),
                1 => Op::Leave(u),
                2 => Op::Request(u),
                3 => Op::Touch(u),
                4 => Op::Route(u),
                5 => Op::AutoRoute(u),
                _ => Op::Advance(rng.random_range(0..3000)),
            }
        })
        .collect()
}

fn user(u: usize) -> String {
    format!("u{u}")
}

/// Applies the log, checking the invariants after every step.
fn run(ops: &[Op], policy: Policy) -> Session {
    let mut s = Session::new("s", policy, 5000);
    let mut now = 0;
    for (i, op) in ops.iter().enumerate() {
        match *op {
            Op::Join(u) => s.join(&user(u), now),
            Op::Leave(u) => {
                s.leave(&user(u), now);
            }
            Op::Request(u) => {
                let _ = s.request_control(&user(u), now);
            }
            Op::Touch(u) => s.touch(&user(u), now),
            Op::Route(u) => {
                s.route_command(&user(u), CMD, now);
            }
            Op::AutoRoute(u) => {
                s.route_with_auto_grant(&user(u), CMD, now);
            }
            Op::Advance(dt) => {
                now += dt;
                s.tick(now);
            }
        }
        if let Err(e) = s.check_invariants() {
            panic!("step {i} ({op:?}): {e}");
        }
        if let Some(h) = &s.token_holder {
            assert!(s.users.contains(h), "step {i}: holder {h} left the session");
        }
        assert!(s.request_queue.iter().all(|u| s.users.contains(u)), "step {i}: departed user queued");
    }
    s
}

#[test]
fn exclusive_token_safety_over_1e5_steps() {
    let ops = random_ops(2024, 100_000);
    run(&ops, Policy::ExclusiveToken);
}

#[test]
fn replaying_the_log_gives_the_same_state() {
    let ops = random_ops(9, 20_000);
    assert_eq!(run(&ops, Policy::ExclusiveToken), run(&ops, Policy::ExclusiveToken));
    assert_eq!(run(&ops, Policy::LastWriter), run(&ops, Policy::LastWriter));
}

#[test]
fn last_writer_never_holds_a_token() {
    let s = run(&random_ops(5, 10_000), Policy::LastWriter);
    assert!(s.token_holder.is_none());
    assert!(s.request_queue.is_empty());
}

#[test]
fn queued_users_are_granted_within_position_times_timeout() {
    let timeout = 5000;
    for n in 1..=5usize {
        let mut s = Session::new("s", Policy::ExclusiveToken, timeout);
        for u in 0..=n {
            s.join(&user(u), 0);
        }
        assert_eq!(s.request_control(&user(0), 0), Ok(RequestOutcome::Granted));
        for u in 1..=n {
            assert_eq!(s.request_control(&user(u), 0), Ok(RequestOutcome::Queued(u)));
        }
        // nobody does anything: every holder goes idle in turn
        let mut granted_at = vec![None; n + 1];
        for t in 0..=(n as u64 * (timeout + 1)) {
            for e in s.tick(t) {
                if let ArbitrationEvent::ControlGranted { user: u } = e {
                    let idx: usize = u[1..].parse().unwrap();
                    granted_at[idx] = Some(t);
                }
            }
        }
        for (pos, at) in granted_at.iter().enumerate().skip(1) {
            let at = at.unwrap_or_else(|| panic!("u{pos} never granted with {n} queued"));
            assert!(at <= pos as u64 * (timeout + 1), "u{pos} granted at {at}");
        }
    }
}

#[test]
fn second_tick_in_the_same_millisecond_is_a_no_op() {
    let ops = random_ops(77, 2_000);
    let mut s = run(&ops, Policy::ExclusiveToken);
    let now = s.holder_last_active_ms + 6000;
    s.tick(now);
    let snapshot = s.clone();
    assert!(s.tick(now).is_empty());
    assert_eq!(s, snapshot);
}

#[test]
fn route_rejections() {
    let mut s = Session::new("s", Policy::ExclusiveToken, 5000);
    s.join("u1", 0);
    s.join("u2", 0);
    s.request_control("u1", 0).unwrap();
    assert_eq!(s.route_command("u1", CMD, 1), RouteOutcome::Accepted(CMD));
    assert_eq!(s.route_command("u2", CMD, 1), RouteOutcome::Rejected("not-controller".into()));
}

#[test]
fn last_writer_applies_the_later_command_within_a_tick() {
    let mut s = Session::new("s", Policy::LastWriter, 5000);
    s.join("u1", 0);
    s.join("u2", 0);
    let mut cell = Cell::new(CellConfig::default(), Scene::default());
    let opening = cell.state().gripper_opening;
    for (u, cmd) in [("u1", RobotCommand::GripperSet { opening: 0.0 }), ("u2", RobotCommand::GripperSet { opening: 0.085 })] {
        if let RouteOutcome::Accepted(c) = s.route_command(u, cmd, 5) {
            cell.submit(c);
        }
    }
    cell.tick();
    // u2 asked for fully open, so the gripper did not start closing
    assert_eq!(cell.state().gripper_opening, opening);
}
