use autocodec::nn::*;
use autocodec::rng::SplitMix64;
use autocodec::tensor::Tensor;
use std::time::Instant;

#[test]
fn conv_throughput() {
    let mut rng = SplitMix64::new(1);
    let b = 64usize;
    // the heaviest layer: 64->64 at 32x32
    let input = Tensor::<f32>::new(vec![b, 64, 32, 32], (0..b*64*1024).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()).unwrap();
    let w = Tensor::<f32>::new(vec![64, 64, 3, 3], (0..64*64*9).map(|_| rng.uniform(-0.1, 0.1) as f32).collect()).unwrap();
    let bias = Tensor::<f32>::zeros(vec![64]);

    let t0 = Instant::now();
    let out = conv2d_forward(&input, &w, &bias, 1, 1).unwrap();
    let fwd = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let g = conv2d_backward(&out, &input, &w, 1, 1).unwrap();
    let bwd = t1.elapsed().as_secs_f64();
    let macs = (b * 64 * 64 * 9 * 1024) as f64;
    println!("fwd: {:.3}s = {:.1} GFLOP/s", fwd, 2.0 * macs / fwd / 1e9);
    println!("bwd: {:.3}s = {:.1} GFLOP/s", bwd, 2.0 * 2.0 * macs / bwd / 1e9);
    assert!(g.input.all_finite());
}
