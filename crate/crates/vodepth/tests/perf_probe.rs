use std::time::Instant;
use vodepth::ops::{conv2d_forward, conv2d_input_grad, conv2d_weight_grad};
use vodepth::Tensor;

fn bench(name: &str, flops: f64, mut f: impl FnMut()) {
    let t0 = Instant::now();
    let mut reps = 0u32;
    while t0.elapsed().as_secs_f64() < 0.4 {
        f();
        reps += 1;
    }
    let per = t0.elapsed().as_secs_f64() / reps as f64;
    println!(
        "{name:34} {:8.3} ms   {:6.2} GFLOP/s",
        per * 1e3,
        flops / per / 1e9
    );
}

#[test]
#[ignore]
fn conv_kernel_throughput() {
    let cases: &[(usize, usize, usize, usize, usize)] = &[
        (1, 16, 9, 64, 128),
        (16, 16, 5, 64, 128),
        (16, 16, 3, 64, 128),
        (3, 16, 3, 64, 128),
        (16, 32, 3, 32, 64),
        (42, 16, 3, 64, 128),
        (74, 24, 3, 32, 64),
        (114, 40, 3, 16, 32),
    ];
    for &(cin, cout, k, h, w) in cases {
        let x = Tensor::<f32>::full(&[1, cin, h, w], 0.5);
        let wt = Tensor::<f32>::full(&[cout, cin, k, k], 0.01);
        let b = Tensor::<f32>::zeros(&[cout]);
        let gy = Tensor::<f32>::full(&[1, cout, h, w], 0.3);
        let flops = 2.0 * (h * w * cout * cin * k * k) as f64;
        bench(
            &format!("fwd   {cin}x{cout} k{k} {h}x{w}"),
            flops,
            || {
                let _ = conv2d_forward(&x, &wt, &b, 1, k / 2).unwrap();
            },
        );
        bench(
            &format!("igrad {cin}x{cout} k{k} {h}x{w}"),
            flops,
            || {
                let _ = conv2d_input_grad(&gy, &[1, cin, h, w], &wt, 1, k / 2);
            },
        );
        bench(
            &format!("wgrad {cin}x{cout} k{k} {h}x{w}"),
            flops,
            || {
                let _ = conv2d_weight_grad(&gy, &x, &[cout, cin, k, k], 1, k / 2);
            },
        );
    }
}
