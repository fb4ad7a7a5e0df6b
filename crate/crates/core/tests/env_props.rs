use std::collections::VecDeque;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crfn::env::{
    geodesic, render_audio, sample_start_goal, trace_ray, trace_rays, Action, Cell, DistanceField, EpisodeSpec,
    GridEnv, GridMap, Heading, Pose, SoundSignature, VisualConfig, STEP_PENALTY, SUCCESS_REWARD,
};

fn grid(max: usize) -> impl Strategy<Value = GridMap> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(proptest::bool::weighted(0.3), w * h).prop_filter_map("all blocked", move |b| {
            GridMap::new("p", w, h, b).ok().filter(|m| m.free_count() > 0)
        })
    })
}

fn heading() -> impl Strategy<Value = Heading> {
    (0usize..4).prop_map(Heading::from_index)
}

/// Entry parameter of the ray into the unit square centered on `c`, or
/// `None` if the ray misses it or only touches a corner.
fn slab_entry(origin: Cell, dir: (f64, f64), c: Cell) -> Option<f64> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (o, d, x) in [(origin.x, dir.0, c.x), (origin.y, dir.1, c.y)] {
        let (a, b) = ((x - o) as f64 - 0.5, (x - o) as f64 + 0.5);
        if d == 0.0 {
            if !(a < 0.0 && 0.0 < b) {
                return None;
            }
        } else {
            let (t0, t1) = (a / d, b / d);
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
        }
    }
    (hi - lo > 1e-12 && lo > 0.0).then_some(lo)
}

/// Cells entered by the ray in order, stopping at the first blocked one.
fn brute_force_ray(map: &GridMap, origin: Cell, dir: (f64, f64), range: f64) -> (Vec<Cell>, Option<Cell>) {
    let r = range.ceil() as i32 + 1;
    let mut hits: Vec<(f64, Cell)> = Vec::new();
    for y in origin.y - r..=origin.y + r {
        for x in origin.x - r..=origin.x + r {
            let c = Cell::new(x, y);
            if let Some(t) = slab_entry(origin, dir, c) {
                if t <= range {
                    hits.push((t, c));
                }
            }
        }
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut free = Vec::new();
    for (_, c) in hits {
        if !map.is_free(c) {
            return (free, Some(c));
        }
        free.push(c);
    }
    (free, None)
}

fn bfs_all(map: &GridMap, from: Cell) -> Vec<Option<u32>> {
    let w = map.width();
    let mut dist = vec![None; w * map.height()];
    let mut q = VecDeque::from([from]);
    dist[from.y as usize * w + from.x as usize] = Some(0);
    while let Some(c) = q.pop_front() {
        let d = dist[c.y as usize * w + c.x as usize].unwrap();
        for h in Heading::ALL {
            let n = c.step(h);
            if map.is_free(n) && dist[n.y as usize * w + n.x as usize].is_none() {
                dist[n.y as usize * w + n.x as usize] = Some(d + 1);
                q.push_back(n);
            }
        }
    }
    dist
}

fn signature() -> SoundSignature {
    SoundSignature::new("s", (1..=16).map(|k| k as f64).collect()).unwrap()
}

proptest! {
    #[test]
    fn rays_match_slab_oracle(map in grid(9), pick in any::<prop::sample::Index>(), h in heading(), rays in 1usize..12) {
        let free = map.free_cells();
        let origin = free[pick.index(free.len())];
        let cfg = VisualConfig { rays, ..Default::default() };
        for (off, ray) in cfg.offsets_deg().into_iter().zip(trace_rays(&map, Pose::new(origin.x, origin.y, h), &cfg)) {
            let dir = crfn::env::ray_direction(h, off);
            let (free, hit) = brute_force_ray(&map, origin, dir, cfg.range);
            prop_assert_eq!(&ray.free, &free);
            prop_assert_eq!(ray.hit, hit);
            prop_assert!((0.0..=1.0).contains(&ray.depth));
            match hit {
                Some(c) => {
                    let d = (((c.x - origin.x).pow(2) + (c.y - origin.y).pow(2)) as f64).sqrt();
                    prop_assert_eq!(ray.depth, d.min(cfg.range) / cfg.range);
                }
                None => prop_assert_eq!(ray.depth, 1.0),
            }
        }
    }

    #[test]
    fn axis_ray_depth_is_wall_distance(map in grid(9), pick in any::<prop::sample::Index>(), h in heading()) {
        let free = map.free_cells();
        let origin = free[pick.index(free.len())];
        let ray = trace_ray(&map, origin, { let (x, y) = h.delta(); (x as f64, y as f64) }, 10.0);
        let mut k = 1;
        while map.is_free(Cell::new(origin.x + k * h.delta().0, origin.y + k * h.delta().1)) {
            k += 1;
        }
        prop_assert_eq!(ray.free.len() as i32, k - 1);
        prop_assert_eq!(ray.depth, (k as f64).min(10.0) / 10.0);
    }

    #[test]
    fn geodesic_matches_bfs(map in grid(10), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let free = map.free_cells();
        let (s, t) = (free[a.index(free.len())], free[b.index(free.len())]);
        let oracle = bfs_all(&map, s)[t.y as usize * map.width() + t.x as usize];
        let g = geodesic(&map, s, t).unwrap();
        prop_assert_eq!(g.distance, oracle);
        if let (Some(d), Some(h)) = (g.distance, g.first_step) {
            let field = DistanceField::new(&map, t).unwrap();
            prop_assert_eq!(field.distance(s.step(h)), Some(d - 1));
            let path = field.path_from(s).unwrap();
            prop_assert_eq!(path.len() as u32, d + 1);
            for w in path.windows(2) {
                prop_assert_eq!(w[0].manhattan(w[1]), 1);
            }
        }
    }

    #[test]
    fn audio_energy_and_panning(map in grid(9), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>(), h in heading()) {
        let free = map.free_cells();
        let (s, t) = (free[a.index(free.len())], free[b.index(free.len())]);
        let field = DistanceField::new(&map, t).unwrap();
        let sig = signature();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pose = Pose::new(s.x, s.y, h);
        match field.distance(s) {
            None => prop_assert!(render_audio(&field, pose, &sig, 0.0, &mut rng).is_err()),
            Some(d) => {
                let au = render_audio(&field, pose, &sig, 0.0, &mut rng).unwrap();
                let total = au.left_sum() + au.right_sum();
                prop_assert!((total - sig.l1() / (1.0 + d as f64)).abs() < 1e-12);
                let rel = field.first_step(s).map(|f| h.relative(f));
                match rel {
                    Some(1) => prop_assert_eq!(au.left_sum(), 0.0),
                    Some(3) => prop_assert_eq!(au.right_sum(), 0.0),
                    _ => prop_assert_eq!(au.left, au.right),
                }
            }
        }
    }

    #[test]
    fn episode_accounting(map in grid(8), seed in any::<u64>(), actions in proptest::collection::vec(0usize..4, 1..60)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assume!(map.free_count() >= 2);
        let Ok((start, goal)) = sample_start_goal(&map, 1, &mut rng) else { return Ok(()) };
        let map = Arc::new(map);
        let spec = EpisodeSpec {
            map: map.clone(),
            start,
            goal,
            signature: signature(),
            max_steps: 40,
            noise_std: 0.05,
            seed,
        };
        let mut env = GridEnv::new(VisualConfig::default());
        let first = env.reset(spec.clone()).unwrap();
        let d0 = env.geodesic_distance().unwrap() as f64;
        let mut ret = 0.0;
        let mut moves = 0;
        let mut taken = 0;
        let mut last = None;
        for &a in &actions {
            let before = env.pose().unwrap();
            let res = env.step(Action::from_index(a).unwrap()).unwrap();
            taken += 1;
            let after = env.pose().unwrap();
            if after.cell() != before.cell() {
                moves += 1;
                prop_assert_eq!(after.cell(), before.cell().step(before.heading));
            }
            prop_assert!(res.obs.audio.left.iter().chain(&res.obs.audio.right).all(|v| *v >= 0.0));
            ret += res.reward;
            last = Some(res);
            if env.is_done() {
                prop_assert!(env.step(Action::Stop).is_err());
                break;
            }
        }
        let rec = env.record("x").unwrap();
        let last = last.unwrap();
        prop_assert_eq!(rec.action_count, taken);
        prop_assert_eq!(rec.path_len, moves as f64);
        prop_assert_eq!(rec.geodesic_len, d0);
        prop_assert!(rec.path_len >= rec.geodesic_len || !rec.success);
        let expected = d0 - last.info.geodesic_distance - STEP_PENALTY * taken as f64
            + if rec.success { SUCCESS_REWARD } else { 0.0 };
        prop_assert!((ret - expected).abs() < 1e-9);
        prop_assert_eq!(rec.success, last.info.success);

        let again = env.reset(spec).unwrap();
        prop_assert_eq!(first, again);
    }
}
