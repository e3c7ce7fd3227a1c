use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, LabelRule, SceneFrames, SyntheticConfig, MODALITY_CHANNELS};
use crate::activity::image::to_byte;
use crate::activity::{BBox, Person, Scene};
use crate::error::{Error, Result};

/// Free pixels kept between any two boxes.
const GAP: f64 = 2.0;
/// Positions tried per person before the layout is restarted.
const PLACE_TRIES: usize = 200;
const LAYOUT_TRIES: usize = 20;
/// Regenerations allowed while some group class is missing.
const COVERAGE_TRIES: u64 = 16;
/// Datasets at least this large must contain every group class.
const COVERAGE_MIN_SCENES: usize = 100;

/// Action indices reserved for the key actor under the keyactor-side rule:
/// the top `n_group / 2` actions.
pub fn key_actions(config: &SyntheticConfig) -> std::ops::Range<usize> {
    config.n_individual - config.n_group / 2..config.n_individual
}

/// Most frequent action; ties go to the lowest index.
pub fn majority_label(actions: &[usize], n_individual: usize) -> usize {
    let mut counts = vec![0usize; n_individual];
    for &a in actions {
        counts[a] += 1;
    }
    let mut best = 0;
    for (a, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = a;
        }
    }
    best
}

/// Group label recomputed from the scene's key actor, or `None` when the scene
/// has no key actor or its action is not a key action.
pub fn keyactor_side_label(scene: &Scene, config: &SyntheticConfig) -> Option<usize> {
    let p = scene.persons.get(scene.key_actor?)?;
    let keys = key_actions(config);
    if !keys.contains(&p.action) {
        return None;
    }
    let side = usize::from(p.bbox.center().0 >= config.image_width as f64 / 2.0);
    Some(2 * (p.action - keys.start) + side)
}

fn scene_rng(seed: u64, attempt: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
    rng.set_stream(index as u64);
    rng
}

/// Draws `config.scenes` scenes and renders their frames. Each scene uses its
/// own random stream derived from `(seed, index)`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut attempt = 0;
    loop {
        let mut scenes = Vec::with_capacity(config.scenes);
        let mut frames = Vec::with_capacity(config.scenes);
        for i in 0..config.scenes {
            let mut rng = scene_rng(config.seed, attempt, i);
            let scene = draw_scene(config, i, &mut rng)?;
            frames.push(render_scene(&scene, config, rng.random())?);
            scenes.push(scene);
        }
        let ds = Dataset {
            config: config.clone(),
            scenes,
            frames: Some(frames),
        };
        let covered = ds.class_counts().iter().all(|&c| c > 0);
        attempt += 1;
        if covered || config.scenes < COVERAGE_MIN_SCENES || attempt >= COVERAGE_TRIES {
            return Ok(ds);
        }
    }
}

fn draw_scene(config: &SyntheticConfig, id: usize, rng: &mut ChaCha8Rng) -> Result<Scene> {
    let m = rng.random_range(config.min_persons..=config.max_persons);
    let (actions, group, key_actor) = match config.rule {
        LabelRule::Majority => {
            let actions: Vec<usize> = (0..m).map(|_| rng.random_range(0..config.n_individual)).collect();
            let g = majority_label(&actions, config.n_individual);
            (actions, g, None)
        }
        LabelRule::KeyactorSide => {
            let keys = key_actions(config);
            let key = rng.random_range(0..m);
            let mut actions: Vec<usize> = (0..m).map(|_| rng.random_range(0..keys.start)).collect();
            actions[key] = rng.random_range(keys);
            (actions, 0, Some(key))
        }
    };
    let side = key_actor.map(|_| rng.random_range(0..2usize));
    let boxes = place_boxes(config, m, key_actor.zip(side), rng)?;
    let mut scene = Scene {
        id,
        persons: boxes
            .into_iter()
            .zip(actions)
            .map(|(bbox, action)| Person { bbox, action })
            .collect(),
        group,
        key_actor,
    };
    if config.rule == LabelRule::KeyactorSide {
        scene.group = keyactor_side_label(&scene, config).expect("key actor holds a key action");
    }
    Ok(scene)
}

/// Non-overlapping integer boxes, one pixel clear of the border. `side`
/// pins person `index` to the left (0) or right (1) of the midline, with
/// its center at least `W / 16` away from it.
fn place_boxes(
    config: &SyntheticConfig,
    m: usize,
    side: Option<(usize, usize)>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BBox>> {
    let (h, w) = (config.image_height, config.image_width);
    let wmin = (w / 16).max(4);
    let wmax = (w / 10).max(wmin);
    let hmin = (h / 5).max(4);
    let hmax = (h * 5 / 16).max(hmin);
    let mid = w as f64 / 2.0;
    let margin = w as f64 / 16.0;
    for _ in 0..LAYOUT_TRIES {
        let mut boxes: Vec<BBox> = Vec::with_capacity(m);
        for i in 0..m {
            let bw = rng.random_range(wmin..=wmax);
            let bh = rng.random_range(hmin..=hmax).min(h - 2);
            let bw = bw.min(w - 2);
            let mut placed = None;
            for _ in 0..PLACE_TRIES {
                let x1 = rng.random_range(1..=w - 1 - bw) as f64;
                let y1 = rng.random_range(1..=h - 1 - bh) as f64;
                let b = BBox::new(x1, y1, x1 + bw as f64, y1 + bh as f64);
                if let Some((k, s)) = side {
                    let cx = b.center().0;
                    let ok = if s == 0 { cx <= mid - margin } else { cx >= mid + margin };
                    if k == i && !ok {
                        continue;
                    }
                }
                let grown = BBox::new(b.x1 - GAP, b.y1 - GAP, b.x2 + GAP, b.y2 + GAP);
                if boxes.iter().all(|o| !o.intersects(&grown)) {
                    placed = Some(b);
                    break;
                }
            }
            match placed {
                Some(b) => boxes.push(b),
                None => break,
            }
        }
        if boxes.len() == m {
            return Ok(boxes);
        }
    }
    Err(Error::Packing {
        persons: m,
        height: h,
        width: w,
    })
}

fn hsv(hue: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (hue.fract() * 6.0).rem_euclid(6.0);
    let sector = h6.floor() as usize;
    let f = h6 - sector as f64;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Renders the clip of `scene`: noisy dark background, each person a filled
/// rectangle whose hue encodes its action. Frames after the first shift every
/// box by up to one pixel. The motion stream (when enabled) writes a per-action
/// direction into both channels inside each box.
pub fn render_scene(scene: &Scene, config: &SyntheticConfig, seed: u64) -> Result<SceneFrames> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (config.image_height, config.image_width);
    let n = config.n_individual as f64;
    let shade: Vec<f64> = scene.persons.iter().map(|_| rng.random_range(0.75..1.0)).collect();
    let mut modalities: Vec<Vec<u8>> = MODALITY_CHANNELS[..config.modalities]
        .iter()
        .map(|c| Vec::with_capacity(config.frames * h * w * c))
        .collect();
    for k in 0..config.frames {
        let shift: Vec<(f64, f64)> = scene
            .persons
            .iter()
            .map(|_| {
                if k == 0 {
                    (0.0, 0.0)
                } else {
                    (rng.random_range(-1..=1) as f64, rng.random_range(-1..=1) as f64)
                }
            })
            .collect();
        let mut owner = vec![usize::MAX; h * w];
        for (pi, p) in scene.persons.iter().enumerate() {
            let b = p.bbox.translated(shift[pi].0, shift[pi].1).clamped(w as f64, h as f64);
            for y in b.y1 as usize..b.y2 as usize {
                for x in b.x1 as usize..b.x2 as usize {
                    owner[y * w + x] = pi;
                }
            }
        }
        for &o in &owner {
            let rgb = match scene.persons.get(o) {
                Some(p) => hsv(p.action as f64 / n, 0.85, shade[o]),
                None => [0.1; 3],
            };
            for c in rgb {
                modalities[0].push(to_byte(c + rng.random_range(-0.04..0.04)));
            }
        }
        if config.modalities > 1 {
            for &o in &owner {
                let dir = match scene.persons.get(o) {
                    Some(p) => {
                        let a = std::f64::consts::TAU * p.action as f64 / n;
                        [0.5 + 0.4 * a.cos(), 0.5 + 0.4 * a.sin()]
                    }
                    None => [0.5; 2],
                };
                for c in dir {
                    modalities[1].push(to_byte(c + rng.random_range(-0.02..0.02)));
                }
            }
        }
    }
    Ok(SceneFrames { modalities })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_ties_go_low() {
        assert_eq!(majority_label(&[2, 1, 2, 1], 3), 1);
        assert_eq!(majority_label(&[0, 2, 2], 3), 2);
        assert_eq!(majority_label(&[], 3), 0);
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv(1.0 / 3.0, 1.0, 1.0).map(|v| v.round()), [0.0, 1.0, 0.0]);
        assert_eq!(hsv(2.0 / 3.0, 1.0, 1.0).map(|v| v.round()), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn impossible_packing_is_rejected() {
        let cfg = SyntheticConfig {
            image_height: 16,
            image_width: 16,
            min_persons: 30,
            max_persons: 30,
            scenes: 1,
            ..SyntheticConfig::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Packing { persons: 30, .. })));
    }
}
