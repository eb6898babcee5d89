//! Distortion-ranking oracles for the quality metrics on synthetic scenes.

use trifuse::imaging::scenes;
use trifuse::iqa::{brisque_score, fit_niqe_model, niqe, psnr, spearman, NiqeModel};
use trifuse::ImageTensor;

const SIZE: usize = 96;

fn corpus(n: usize, offset: u64) -> Vec<ImageTensor> {
    (0..n as u64).map(|i| scenes::generate(SIZE, SIZE, 3, offset + i)).collect()
}

fn noisy(img: &ImageTensor, sigma: f32, seed: u64) -> ImageTensor {
    let mut rng = trifuse::rng::stream(seed, "distortion");
    let z = trifuse::rng::gaussian_vec(&mut rng, img.data().len());
    let data = img.data().iter().zip(z).map(|(v, n)| v + sigma * n).collect();
    ImageTensor::from_clamped(img.height(), img.width(), img.channels(), data).unwrap()
}

fn model() -> NiqeModel {
    fit_niqe_model(&corpus(20, 1000), 32).unwrap()
}

#[test]
fn noise_lowers_psnr_and_raises_niqe() {
    let m = model();
    let imgs = corpus(20, 0);
    let (mut psnr_ok, mut niqe_ok) = (0, 0);
    for (i, img) in imgs.iter().enumerate() {
        let mut p = vec![];
        let mut q = vec![niqe(img, &m).unwrap()];
        for s in [0.02, 0.05, 0.1] {
            let d = noisy(img, s, i as u64);
            p.push(psnr(&d, img).unwrap());
            q.push(niqe(&d, &m).unwrap());
        }
        eprintln!("{i}: psnr {p:.2?} niqe {q:.2?}");
        psnr_ok += usize::from(p.windows(2).all(|w| w[1] < w[0]));
        niqe_ok += usize::from(q[1..].windows(2).all(|w| w[1] > w[0]));
    }
    eprintln!("psnr {psnr_ok}/20 niqe {niqe_ok}/20");
    assert!(psnr_ok >= 18);
    assert!(niqe_ok >= 18);
}

#[test]
fn pristine_images_score_lowest_under_their_own_model() {
    let pristine = corpus(20, 1000);
    let m = model();
    let clean: Vec<f64> = pristine.iter().map(|i| niqe(i, &m).unwrap()).collect();
    let dirty: Vec<f64> =
        pristine.iter().enumerate().map(|(k, i)| niqe(&noisy(i, 0.1, k as u64), &m).unwrap()).collect();
    let max_clean = clean.iter().copied().fold(f64::MIN, f64::max);
    let min_dirty = dirty.iter().copied().fold(f64::MAX, f64::min);
    eprintln!("clean max {max_clean:.3} dirty min {min_dirty:.3}");
    assert!(max_clean < min_dirty);
}

#[test]
fn brisque_fallback_ranks_like_niqe() {
    let m = model();
    let imgs = corpus(20, 0);
    let (mut b, mut n) = (vec![], vec![]);
    for (i, img) in imgs.iter().enumerate() {
        let d = noisy(img, 0.005 * (i + 1) as f32, i as u64);
        b.push(brisque_score(&d, None, Some(&m)).unwrap());
        n.push(niqe(&d, &m).unwrap());
    }
    let rho = spearman(&b, &n).unwrap();
    eprintln!("rho {rho:.3}");
    assert!(rho > 0.7);
}
