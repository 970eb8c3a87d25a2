use macforge::synthscene::{generate, render, SceneConfig};

fn small(seed: u64) -> SceneConfig {
    SceneConfig {
        clusters: 4,
        images_per_cluster: (6, 8),
        points_per_cluster: (100, 150),
        image_size: 48,
        seed,
        ..SceneConfig::default()
    }
}

fn pearson(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt().max(1e-300)
}

#[test]
fn same_cluster_images_correlate_more() {
    let (mut within, mut across) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let cfg = small(seed);
        let graphs = generate(&cfg).unwrap();
        let mut imgs = Vec::new();
        for g in &graphs {
            for id in g.image_ids() {
                imgs.push((g.cluster_id(), render(g, id, cfg.image_size).unwrap()));
            }
        }
        let (mut w, mut x) = ((0.0, 0usize), (0.0, 0usize));
        for i in 0..imgs.len() {
            for j in i + 1..imgs.len() {
                let r = pearson(imgs[i].1.data(), imgs[j].1.data());
                let acc = if imgs[i].0 == imgs[j].0 { &mut w } else { &mut x };
                acc.0 += r;
                acc.1 += 1;
            }
        }
        within.push(w.0 / w.1 as f64);
        across.push(x.0 / x.1 as f64);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&within) > mean(&across), "within {within:?} across {across:?}");
}

#[test]
fn generation_is_seeded() {
    let a = generate(&small(3)).unwrap();
    let b = generate(&small(3)).unwrap();
    let c = generate(&small(4)).unwrap();
    let json = |g: &[macforge::mining::VisibilityGraph]| g.iter().map(|x| x.to_json()).collect::<Vec<_>>();
    assert_eq!(json(&a), json(&b));
    assert_ne!(json(&a), json(&c));
}
