use std::collections::BTreeMap;

use proptest::prelude::*;
use teleop_core::gesture::{FsmConfig, FsmEvent, GestureClass, GestureFsm, Prediction, RobotCommand};
use teleop_core::landmark::{Hand, HandFrame, Landmark};
use teleop_core::synth::generate_sample;

const FRAME_MS: u64 = 33;

/// Per step and hand: absent, or (class index, confidence, frame seed, wrist shift).
type HandInput = Option<(usize, f64, u64, (f64, f64))>;

fn frame(class: GestureClass, seed: u64, hand: Hand, shift: (f64, f64)) -> HandFrame {
    let mut f = generate_sample(class, seed, 0.1);
    f.hand = hand;
    for l in f.landmarks.iter_mut() {
        // shifting may leave the unit square; the FSM must still clamp its outputs
        *l = Landmark::new(l.x + shift.0, l.y + shift.1, l.z);
    }
    f
}

fn prediction(input: (usize, f64, u64, (f64, f64)), hand: Hand) -> Prediction {
    let (k, conf, seed, shift) = input;
    let class = GestureClass::TRAINABLE[k];
    let mut proba = [(1.0 - conf) / 3.0; 4];
    proba[k] = conf;
    Prediction { class, proba, frame: frame(class, seed, hand, shift) }
}

fn hand_input() -> impl Strategy<Value = HandInput> {
    prop_oneof![
        1 => Just(None),
        4 => (0usize..4, 0.3f64..1.0, 0u64..50, (-0.6f64..0.6, -0.6f64..0.6)).prop_map(Some),
    ]
}

/// Long runs of one input are what make the stable class move, so inputs
/// are drawn as (input, repeat count) blocks.
fn stream() -> impl Strategy<Value = Vec<(HandInput, HandInput)>> {
    prop::collection::vec(((hand_input(), hand_input()), 1usize..12), 1..40).prop_map(|blocks| {
        blocks.into_iter().flat_map(|(pair, n)| std::iter::repeat_n(pair, n)).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fsm_invariants(inputs in stream()) {
        let config = FsmConfig::default();
        let n = config.debounce_n as usize;
        let ws = config.workspace;
        let mut fsm = GestureFsm::new(config.clone());
        let mut last_change: BTreeMap<Hand, usize> = BTreeMap::new();
        for (step, (left, right)) in inputs.into_iter().enumerate() {
            let mut preds = BTreeMap::new();
            if let Some(i) = left {
                preds.insert(Hand::Left, prediction(i, Hand::Left));
            }
            if let Some(i) = right {
                preds.insert(Hand::Right, prediction(i, Hand::Right));
            }
            let stable_before: BTreeMap<Hand, GestureClass> =
                [Hand::Left, Hand::Right].into_iter().map(|h| (h, fsm.stable(h))).collect();
            let (out, commands) = fsm.step_commands(&preds, step as u64 * FRAME_MS);
            for e in &out.events {
                match e {
                    FsmEvent::StableChanged { hand, .. } => {
                        if let Some(prev) = last_change.insert(*hand, step) {
                            prop_assert!(step - prev >= n, "{hand:?} changed at steps {prev} and {step}");
                        } else {
                            prop_assert!(step + 1 >= n);
                        }
                    }
                    FsmEvent::FingerDistance { hand, .. } => {
                        prop_assert_eq!(out.stable[&hand.other()], GestureClass::Grab);
                        prop_assert!(preds.contains_key(hand));
                    }
                }
            }
            for (_, cmd) in commands {
                match cmd {
                    RobotCommand::MoveTcp { x, y, z } => {
                        prop_assert!(ws.contains(x, y), "({x}, {y}) outside workspace");
                        prop_assert_eq!(z, config.z_fixed);
                    }
                    RobotCommand::GripperSet { opening } => {
                        prop_assert!((config.grip_min..=config.grip_max).contains(&opening));
                    }
                    RobotCommand::SetYaw { yaw } => prop_assert!(yaw.is_finite()),
                    RobotCommand::Hold => prop_assert!(false, "Hold is never emitted"),
                }
            }
            // a stable change needs the hand to be present or absent past the timeout
            for h in [Hand::Left, Hand::Right] {
                if out.stable[&h] != stable_before[&h] && !preds.contains_key(&h) {
                    prop_assert_eq!(out.stable[&h], GestureClass::NoGesture);
                }
            }
        }
    }

    #[test]
    fn identical_streams_give_identical_commands(inputs in stream()) {
        let run = |inputs: &[(HandInput, HandInput)]| {
            let mut fsm = GestureFsm::new(FsmConfig::default());
            let mut all = Vec::new();
            for (step, (l, r)) in inputs.iter().enumerate() {
                let mut preds = BTreeMap::new();
                if let Some(i) = l {
                    preds.insert(Hand::Left, prediction(*i, Hand::Left));
                }
                if let Some(i) = r {
                    preds.insert(Hand::Right, prediction(*i, Hand::Right));
                }
                all.extend(fsm.step_commands(&preds, step as u64 * FRAME_MS).1);
            }
            all
        };
        prop_assert_eq!(run(&inputs), run(&inputs));
    }
}
