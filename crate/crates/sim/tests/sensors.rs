use cogfuse_sim::bev::rasterize_lidar;
use cogfuse_sim::geom::{Pose, Vec2};
use cogfuse_sim::path::LanePath;
use cogfuse_sim::render::{cast_lidar, render_camera, tl_state, Semantic, TlState};
use cogfuse_sim::town::{build_town, plan_route, LightState};
use cogfuse_sim::vehicle::{VehicleState, HALF_LENGTH};
use cogfuse_sim::world::{expert_command, AgentId, ExpertParams, Navigator, Npc, World, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// World with no buildings, vehicles or pedestrians and an ego on a straight
/// three-node route.
fn empty_world(seed: u64) -> (World, Navigator) {
    let mut town = build_town(seed, 3).unwrap();
    town.buildings.clear();
    let route = plan_route(&town, 0, 2).unwrap();
    assert_eq!(route.nodes.len(), 3);
    let path = LanePath::from_route(&town, &route).unwrap();
    let pose = Navigator::start_pose(&path, 2.0);
    let cfg = WorldConfig {
        npc_vehicles: 0,
        pedestrian_density: 0.0,
    };
    let world = World::new(town, &cfg, seed, pose).unwrap();
    let nav = Navigator::new(path, pose.pos);
    (world, nav)
}

fn add_vehicle(world: &mut World, nav: &Navigator, pose: Pose) {
    world.npcs.push(Npc {
        state: VehicleState { pose, speed: 0.0 },
        nav: nav.clone(),
        active: true,
    });
}

fn ego_at(nav: &Navigator) -> VehicleState {
    VehicleState {
        pose: Navigator::start_pose(&nav.path, nav.s),
        speed: 0.0,
    }
}

#[test]
fn empty_world_returns_only_ground() {
    let (world, nav) = empty_world(3);
    let ego = ego_at(&nav);
    let cloud = cast_lidar(&world, &ego.pose);
    assert!(!cloud.is_empty());
    assert!(cloud.iter().all(|p| p.z == 0.0));
    let (grid, _) = rasterize_lidar(&cloud, 0.2);
    assert!(grid.total() > 0);
    assert!(grid.counts[256 * 256..].iter().all(|&c| c == 0));
}

/// Slab intersection of a ray from the sensor against an axis-aligned box in
/// the ego frame.
fn slab(origin: [f64; 3], dir: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<f64> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (ta, tb) = ((lo[a] - origin[a]) / dir[a], (hi[a] - origin[a]) / dir[a]);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t0 <= t1).then_some(t0)
}

#[test]
fn lidar_matches_analytic_ray_box_oracle() {
    let (mut world, nav) = empty_world(4);
    let ego = ego_at(&nav);
    let f = ego.pose.forward();
    add_vehicle(
        &mut world,
        &nav,
        Pose {
            pos: ego.pose.pos + f * (5.0 + HALF_LENGTH),
            heading: ego.pose.heading,
        },
    );
    let cloud = cast_lidar(&world, &ego.pose);

    let mut expected = Vec::new();
    for i in 0..64 {
        let az = (-90.0 + (i as f64 + 0.5) * 180.0 / 64.0).to_radians();
        for j in 0..16 {
            let el = (-24.0 + j as f64 * 23.0 / 15.0).to_radians();
            let dir = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
            let ground = if dir[2] < 0.0 { 2.5 / -dir[2] } else { f64::INFINITY };
            let boxed = slab([0.0, 0.0, 2.5], dir, [5.0, -1.0, 0.0], [9.5, 1.0, 1.6]).unwrap_or(f64::INFINITY);
            let t = ground.min(boxed);
            if t <= 50.0 {
                expected.push([t * dir[0], t * dir[1], (2.5 + t * dir[2]).max(0.0)]);
            }
        }
    }
    assert_eq!(cloud.len(), expected.len());
    for (p, e) in cloud.iter().zip(&expected) {
        assert!((p.x - e[0]).abs() < 1e-9 && (p.y - e[1]).abs() < 1e-9 && (p.z - e[2]).abs() < 1e-9, "{p:?} vs {e:?}");
    }

    let (grid, _) = rasterize_lidar(&cloud, 0.2);
    let mut rows = Vec::new();
    for row in 0..256 {
        for col in 0..256 {
            if grid.get(1, row, col) > 0 {
                rows.push(row);
            }
        }
    }
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|&r| (179..=216).contains(&r)), "{rows:?}");
    assert!(rows.iter().any(|&r| (214..=216).contains(&r)));
}

#[test]
fn vehicles_in_frontal_cone_are_sensed() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..30 {
        let (mut world, nav) = empty_world(trial);
        let ego = ego_at(&nav);
        let x = rng.random_range(5.0..28.0);
        let y_max = (x * 30f64.to_radians().tan()).min(13.0);
        let y = rng.random_range(-y_max..y_max);
        let heading = ego.pose.heading + rng.random_range(-3.1..3.1);
        add_vehicle(&mut world, &nav, Pose { pos: ego.pose.to_world(Vec2::new(x, y)), heading });

        let (grid, _) = rasterize_lidar(&cast_lidar(&world, &ego.pose), 0.2);
        let high: u64 = grid.counts[256 * 256..].iter().map(|&c| c as u64).sum();
        assert!(high > 0, "trial {trial}: no BEV return for vehicle at ({x:.1}, {y:.1})");
        let (_, labels) = render_camera(&world, &ego);
        assert!(
            labels.data.iter().any(|&c| c == Semantic::Vehicle as u8),
            "trial {trial}: vehicle at ({x:.1}, {y:.1}) missing from semantics"
        );
    }
}

fn step_with(world: &World, nav: &Navigator, state: LightState) -> u64 {
    let (light, _) = nav.next_signal(&world.town).unwrap();
    (0..).find(|&k| light.state(k) == state).unwrap()
}

/// Places the ego so its front bumper is `gap` meters before the next stop line.
fn before_stop_line(nav: &mut Navigator, gap: f64) -> VehicleState {
    let stop = nav.path.stops[0].s;
    let pose = Navigator::start_pose(&nav.path, stop - gap - HALF_LENGTH);
    *nav = Navigator::new(nav.path.clone(), pose.pos);
    VehicleState { pose, speed: 0.0 }
}

#[test]
fn light_state_follows_the_governing_signal() {
    let (mut world, mut nav) = empty_world(6);
    let _ = before_stop_line(&mut nav, 10.0);
    let (_, d) = nav.next_signal(&world.town).unwrap();
    assert!((d - 10.0).abs() < 0.05, "{d}");
    world.step = step_with(&world, &nav, LightState::Red);
    assert_eq!(tl_state(&world, &nav), TlState::Stop);
    world.step = step_with(&world, &nav, LightState::Green);
    assert_eq!(tl_state(&world, &nav), TlState::Proceed);
}

#[test]
fn distant_red_light_is_not_reported() {
    let (mut world, mut nav) = empty_world(6);
    let _ = before_stop_line(&mut nav, 25.0);
    world.step = step_with(&world, &nav, LightState::Red);
    assert_eq!(tl_state(&world, &nav), TlState::Proceed);
}

#[test]
fn expert_drives_on_green_and_brakes_at_red() {
    let (mut world, mut nav) = empty_world(8);
    let ego = before_stop_line(&mut nav, 15.0);
    world.step = step_with(&world, &nav, LightState::Green);
    let params = ExpertParams::default();
    let cmd = expert_command(&params, &ego, &nav, &world.scene(Some(&ego)), AgentId::Ego);
    assert!(cmd.throttle > 0.0 && !cmd.brake && cmd.steer.abs() < 0.05, "{cmd:?}");

    let mut ego = before_stop_line(&mut nav, 3.0);
    world.step = step_with(&world, &nav, LightState::Red);
    for speed in [0.0, 2.0, 5.0] {
        ego.speed = speed;
        let cmd = expert_command(&params, &ego, &nav, &world.scene(Some(&ego)), AgentId::Ego);
        assert!(cmd.brake && cmd.throttle == 0.0, "speed {speed}: {cmd:?}");
    }
}
