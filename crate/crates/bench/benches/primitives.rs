use attrib_bench::scene;
use attrib_core::fillers::harmonic_inpaint;
use attrib_core::imgcore::{gaussian_blur, BoundingBox};
use attrib_core::sensitivity::{ms_ssim, ssim};
use attrib_core::PerturbMask;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn inpaint(c: &mut Criterion) {
    let x = scene(64);
    let hole = PerturbMask::from_box(64, 64, &BoundingBox::new(20, 20, 43, 43).unwrap());
    c.bench_function("harmonic_inpaint_64px_24px_hole", |b| {
        b.iter(|| harmonic_inpaint(black_box(&x), &hole, 5000, 1e-5).unwrap())
    });
}

fn blur(c: &mut Criterion) {
    let x = scene(224);
    c.bench_function("gaussian_blur_224px_sigma10", |b| b.iter(|| gaussian_blur(black_box(&x), 10.0).unwrap()));
}

fn similarity(c: &mut Criterion) {
    let x = scene(224);
    let y = gaussian_blur(&x, 2.0).unwrap();
    let (a, b2) = (x.luminance(), y.luminance());
    c.bench_function("ssim_224px", |b| b.iter(|| ssim(black_box(&a), &b2).unwrap()));
    c.bench_function("ms_ssim_224px", |b| b.iter(|| ms_ssim(black_box(&x), &y).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = inpaint, blur, similarity
}
criterion_main!(benches);
