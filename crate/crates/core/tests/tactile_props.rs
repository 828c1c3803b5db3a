use proptest::prelude::*;
use teleop_core::gesture::RobotCommand;
use teleop_core::pipeline::{footprint_rows, mask_rows};
use teleop_core::robot::{fk, KinematicChain, HOME_Q};
use teleop_core::scene::{Cell, CellConfig, ObjectKind, Scene, SceneObject};
use teleop_core::tactile::{footprint, frame_schedule, render_frame, ContactModel, TactileClock, GRID};

const PIPETTE_BAND: [&str; 10] = [".....##..."; 10];
const TUBE_BLOCK: [&str; 10] = [
    "..........",
    ".########.",
    ".########.",
    ".########.",
    ".########.",
    ".########.",
    ".########.",
    ".########.",
    ".########.",
    "..........",
];

#[test]
fn footprint_shapes() {
    assert_eq!(footprint_rows(ObjectKind::Pipette), PIPETTE_BAND);
    assert_eq!(footprint_rows(ObjectKind::Tube), TUBE_BLOCK);
}

#[test]
fn rendered_active_cells_match_footprint() {
    for kind in [ObjectKind::Pipette, ObjectKind::Tube] {
        let obj = SceneObject::new("o", kind, [0.0; 3]);
        let f = render_frame(&ContactModel::default(), obj.width * 0.5, Some(&obj), 0.0);
        let active: [[bool; GRID]; GRID] = std::array::from_fn(|r| std::array::from_fn(|c| f.pressures[r][c] > 0.0));
        assert_eq!(mask_rows(&active), footprint_rows(kind));
    }
}

#[test]
fn ten_counts_per_cell_at_two_tenths_of_a_millimetre() {
    let model = ContactModel { stiffness_k: 5e4 };
    let mut obj = SceneObject::new("p", ObjectKind::Pipette, [0.0; 3]);
    obj.width = 0.0102;
    let f = render_frame(&model, obj.width - 2e-4, Some(&obj), 0.0);
    let n = f.active_cells();
    assert_eq!(n, 20);
    // oracle: sum the rendered grid directly
    let sum: f64 = f.pressures.iter().flatten().sum();
    let per_cell = f.max();
    assert!((per_cell - 10.0).abs() < 1e-9);
    assert_eq!(sum, per_cell * n as f64);
}

proptest! {
    #[test]
    fn total_force_is_k_delta_footprint(
        opening in 0.0f64..0.03,
        k in 1e3f64..1e6,
        tube in any::<bool>(),
    ) {
        let kind = if tube { ObjectKind::Tube } else { ObjectKind::Pipette };
        let obj = SceneObject::new("o", kind, [0.0; 3]);
        let f = render_frame(&ContactModel { stiffness_k: k }, opening, Some(&obj), 0.0);
        let cells = footprint(kind).iter().flatten().filter(|b| **b).count() as f64;
        let expected = if opening >= obj.width { 0.0 } else { k * (obj.width - opening) * cells };
        // summing |footprint| equal terms can differ from one product by rounding only
        prop_assert!((f.total() - expected).abs() <= expected * 64.0 * f64::EPSILON);
        prop_assert!(f.pressures.iter().flatten().all(|p| p.is_finite() && *p >= 0.0));
    }

    #[test]
    fn closing_never_lowers_a_cell(a in 0.0f64..0.04, b in 0.0f64..0.04, tube in any::<bool>()) {
        let kind = if tube { ObjectKind::Tube } else { ObjectKind::Pipette };
        let obj = SceneObject::new("o", kind, [0.0; 3]);
        let (wide, narrow) = if a >= b { (a, b) } else { (b, a) };
        let m = ContactModel::default();
        let fw = render_frame(&m, wide, Some(&obj), 0.0);
        let fn_ = render_frame(&m, narrow, Some(&obj), 0.0);
        for r in 0..GRID {
            for c in 0..GRID {
                prop_assert!(fn_.pressures[r][c] >= fw.pressures[r][c]);
            }
        }
    }
}

fn command_strategy() -> impl Strategy<Value = RobotCommand> {
    prop_oneof![
        3 => (0.0f64..0.085).prop_map(|opening| RobotCommand::GripperSet { opening }),
        1 => (-0.01f64..0.01, -0.01f64..0.01).prop_map(|(dx, dy)| {
            // small moves around the home TCP, where the object sits
            RobotCommand::MoveTcp { x: -0.688 + dx, y: -0.164 + dy, z: 0.648 }
        }),
        1 => Just(RobotCommand::Hold),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn safety_clamp_bounds_pressure(
        cmds in prop::collection::vec((command_strategy(), 1u64..20), 1..30),
        tube in any::<bool>(),
        limit in 20.0f64..500.0,
    ) {
        let home = fk(&KinematicChain::default_arm(), &HOME_Q).unwrap().position_array();
        let kind = if tube { ObjectKind::Tube } else { ObjectKind::Pipette };
        let mut obj = SceneObject::new("o", kind, home);
        obj.fragile_pressure_limit = limit;
        let config = CellConfig::default();
        let slew_per_tick = config.sim.gripper_speed * config.tick_ms as f64 / 1000.0;
        let bound = limit + config.contact.stiffness_k * slew_per_tick;
        let mut cell = Cell::new(config, Scene { objects: vec![obj] });
        for (cmd, ticks) in cmds {
            cell.submit(cmd);
            for _ in 0..ticks {
                cell.tick();
                let max = cell.tactile_frame(cell.state().time_ms as f64).max();
                prop_assert!(max <= bound + 1e-9, "max {max} > bound {bound}");
            }
        }
    }
}

#[test]
fn one_simulated_second_is_120_frames() {
    assert_eq!(frame_schedule(120, 1000.0).len(), 120);
    assert!(frame_schedule(120, 0.0).is_empty());
    let mut cell = Cell::new(CellConfig::default(), Scene::default());
    let frames = cell.tactile_clock(1000, 120);
    assert_eq!(frames.len(), 120);
    assert_eq!(cell.state().time_ms, 1000);
}

#[test]
fn schedule_matches_rational_times() {
    let mut clock = TactileClock::new(120);
    let times = clock.due(10_000.0 * 1000.0 / 120.0 + 1.0);
    assert_eq!(times.len(), 10_001);
    for (k, t) in times.iter().enumerate() {
        // exact schedule: t_k = 25k/3 ms
        let exact_num = 25 * k as i64;
        let err = (t * 3.0 - exact_num as f64).abs() / 3.0;
        assert!(err < 1e-6, "frame {k}: {t}");
    }
    for w in times.windows(2) {
        assert!(((w[1] - w[0]) - 1000.0 / 120.0).abs() < 1e-6);
    }
}
