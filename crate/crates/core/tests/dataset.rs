use adveval::harness::dataset::{generate_shapes, load_idx, save_idx, ShapeStyle, DISC, SQUARE};
use adveval::harness::pipeline::{combos, load_dataset, train_combo};
use adveval::harness::ExperimentConfig;
use adveval::nn::train::Sample;
use adveval::nn::Image8;

/// Thresholds halfway between the darkest and brightest pixel, then compares
/// the foreground against a square and a disc filling its bounding box.
fn template_match(img: &Image8) -> usize {
    let (h, w) = (img.height(), img.width());
    let px = img.pixels();
    let (lo, hi) = (*px.iter().min().unwrap(), *px.iter().max().unwrap());
    let t = (f64::from(lo) + f64::from(hi)) / 2.0;
    let fg: Vec<bool> = px.iter().map(|&v| f64::from(v) > t).collect();
    let (mut y0, mut y1, mut x0, mut x1) = (h, 0, w, 0);
    for y in 0..h {
        for x in 0..w {
            if fg[y * w + x] {
                (y0, y1, x0, x1) = (y0.min(y), y1.max(y), x0.min(x), x1.max(x));
            }
        }
    }
    if y0 > y1 {
        return SQUARE;
    }
    let (cy, cx) = ((y0 + y1) as f64 / 2.0, (x0 + x1) as f64 / 2.0);
    let r = ((y1 - y0).max(x1 - x0) + 1) as f64 / 2.0;
    let iou = |inside: &dyn Fn(f64, f64) -> bool| {
        let (mut inter, mut union) = (0usize, 0usize);
        for y in 0..h {
            for x in 0..w {
                let t = inside(y as f64 - cy, x as f64 - cx);
                let f = fg[y * w + x];
                inter += usize::from(t && f);
                union += usize::from(t || f);
            }
        }
        inter as f64 / union as f64
    };
    let square = iou(&|dy, dx| dy.abs() < r && dx.abs() < r);
    let disc = iou(&|dy, dx| dy * dy + dx * dx < r * r);
    if square >= disc {
        SQUARE
    } else {
        DISC
    }
}

fn accuracy(samples: &[Sample], f: impl Fn(&Image8) -> usize) -> f64 {
    samples.iter().filter(|s| f(&s.image) == s.label).count() as f64 / samples.len() as f64
}

#[test]
fn shapes_are_learnable_by_template_matching() {
    let samples = generate_shapes(1000, 16, 42, &ShapeStyle::default()).unwrap();
    let acc = accuracy(&samples, template_match);
    assert!(acc > 0.9, "template-match accuracy {acc}");
}

#[test]
fn generator_is_balanced_and_seed_stable() {
    let style = ShapeStyle::default();
    let a = generate_shapes(100, 16, 5, &style).unwrap();
    assert_eq!(a.iter().filter(|s| s.label == DISC).count(), 50);
    assert_eq!(a, generate_shapes(100, 16, 5, &style).unwrap());
    assert_ne!(a, generate_shapes(100, 16, 6, &style).unwrap());
    assert!(generate_shapes(1, 16, 0, &style).is_err());
}

#[test]
fn idx_files_round_trip() {
    let samples = generate_shapes(10, 28, 1, &ShapeStyle::default()).unwrap();
    let (mut imgs, mut labels) = (Vec::new(), Vec::new());
    save_idx(&samples, &mut imgs, &mut labels).unwrap();
    let back = load_idx(imgs.as_slice(), labels.as_slice()).unwrap();
    assert_eq!(back.len(), 10);
    assert!(back
        .iter()
        .all(|s| (s.image.height(), s.image.width(), s.image.channels()) == (28, 28, 1)));
    assert_eq!(back, samples);
    imgs[3] ^= 0xff;
    assert!(load_idx(imgs.as_slice(), labels.as_slice()).is_err());
}

#[test]
fn default_model_learns_the_default_dataset() {
    let c = ExperimentConfig::default();
    let (train, test) = load_dataset(&c.datasets[0]).unwrap();
    let t = train_combo(&c, &combos(&c)[0], &train, &test).unwrap();
    assert!(t.test_accuracy > 0.95, "test accuracy {}", t.test_accuracy);
    let again = train_combo(&c, &combos(&c)[0], &train, &test).unwrap();
    assert_eq!(t.model, again.model);
}
