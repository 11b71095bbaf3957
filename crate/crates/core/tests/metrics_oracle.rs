//! The structure measure against a direct re-derivation on 2-D arrays.

use cirnet::metrics::s_measure;
use cirnet::{Rng, Tensor};

const EPS: f64 = f64::EPSILON;

fn grid(t: &Tensor) -> Vec<Vec<f64>> {
    let [_, _, h, w] = t.shape();
    (0..h).map(|y| (0..w).map(|x| t.at(0, 0, y, x)).collect()).collect()
}

fn sim(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * m / (m * m + 1.0 + sd + EPS)
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let (mp, mg) = (p.iter().sum::<f64>() / n, g.iter().sum::<f64>() / n);
    let (mut vp, mut vg, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(g) {
        vp += (a - mp) * (a - mp);
        vg += (b - mg) * (b - mg);
        cov += (a - mp) * (b - mg);
    }
    let d = n - 1.0 + EPS;
    let (vp, vg, cov) = (vp / d, vg / d, cov / d);
    let num = 4.0 * mp * mg * cov;
    let den = (mp * mp + mg * mg) * (vp + vg);
    if num != 0.0 {
        num / (den + EPS)
    } else if den == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_oracle(pred: &Tensor, mask: &Tensor) -> f64 {
    let p = grid(pred);
    let g: Vec<Vec<bool>> = grid(mask)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v >= 0.5).collect())
        .collect();
    let (h, w) = (p.len(), p[0].len());
    let area = (h * w) as f64;
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let (mut ys, mut xs) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if g[y][x] {
                fg.push(p[y][x]);
                ys += y as f64;
                xs += x as f64;
            } else {
                bg.push(1.0 - p[y][x]);
            }
        }
    }
    let mean_p = p.iter().flatten().sum::<f64>() / area;
    if fg.is_empty() {
        return (1.0 - mean_p).clamp(0.0, 1.0);
    }
    if bg.is_empty() {
        return mean_p.clamp(0.0, 1.0);
    }
    let u = fg.len() as f64 / area;
    let object = u * sim(&fg) + (1.0 - u) * sim(&bg);

    let cx = ((xs / fg.len() as f64).round_ties_even() as usize + 1).min(w);
    let cy = ((ys / fg.len() as f64).round_ties_even() as usize + 1).min(h);
    let quad = |r0: usize, r1: usize, c0: usize, c1: usize| {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for y in r0..r1 {
            for x in c0..c1 {
                a.push(p[y][x]);
                b.push(if g[y][x] { 1.0 } else { 0.0 });
            }
        }
        (a, b)
    };
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let mut region = 0.0;
    for (wt, (a, b)) in [
        (w1, quad(0, cy, 0, cx)),
        (w2, quad(0, cy, cx, w)),
        (w3, quad(cy, h, 0, cx)),
        (w4, quad(cy, h, cx, w)),
    ] {
        if !a.is_empty() {
            region += wt * ssim(&a, &b);
        }
    }
    (0.5 * object + 0.5 * region).clamp(0.0, 1.0)
}

fn random_mask(rng: &mut Rng, h: usize, w: usize) -> Tensor {
    let mut m = Tensor::zeros([1, 1, h, w]);
    for _ in 0..1 + rng.below(3) {
        let (y0, x0) = (rng.below(h), rng.below(w));
        let (y1, x1) = ((y0 + 1 + rng.below(h)).min(h), (x0 + 1 + rng.below(w)).min(w));
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(0, 0, y, x, 1.0);
            }
        }
    }
    m
}

#[test]
fn matches_direct_derivation() {
    let mut rng = Rng::new(31);
    let mut worst: f64 = 0.0;
    for case in 0..300 {
        let (h, w) = if case < 200 {
            (16, 16)
        } else {
            (1 + rng.below(20), 1 + rng.below(20))
        };
        let g = random_mask(&mut rng, h, w);
        let s = match case % 4 {
            0 => Tensor::rand_uniform([1, 1, h, w], 0.0, 1.0, &mut rng),
            1 => g.map(|v| 0.8 * v + 0.1),
            2 => g.clone(),
            _ => Tensor::rand_uniform([1, 1, h, w], 0.0, 1.0, &mut rng).map(|v| (v * 4.0).floor() / 4.0),
        };
        worst = worst.max((s_measure(&s, &g).unwrap() - s_oracle(&s, &g)).abs());
    }
    assert!(worst < 1e-10, "max difference {worst:e}");
}

#[test]
fn hand_computed_values() {
    // empty mask: 1 - mean(s)
    let g = Tensor::zeros([1, 1, 4, 4]);
    assert_eq!(s_measure(&Tensor::full([1, 1, 4, 4], 0.25), &g).unwrap(), 0.75);
    // full mask: mean(s)
    let g = Tensor::full([1, 1, 4, 4], 1.0);
    assert_eq!(s_measure(&Tensor::full([1, 1, 4, 4], 0.25), &g).unwrap(), 0.25);
    // zero prediction, mask = left two columns. Object: the foreground
    // scores 0 and the all-one background 2/(2+eps). Region: centroid
    // (x 0.5 -> 0, y 1.5 -> 2) splits after column 1 and row 3; the two
    // constant-mask left blocks score 1 (weights 3/16 and 1/16), the right
    // blocks 0.
    let mut g = Tensor::zeros([1, 1, 4, 4]);
    for y in 0..4 {
        g.set(0, 0, y, 0, 1.0);
        g.set(0, 0, y, 1, 1.0);
    }
    let s = s_measure(&Tensor::zeros([1, 1, 4, 4]), &g).unwrap();
    let expected = 0.5 * (0.5 * 2.0 / (2.0 + EPS)) + 0.5 * (4.0 / 16.0);
    assert!((s - expected).abs() < 1e-15, "{s} vs {expected}");
}
