//! Parallel vs sequential throughput of the element-parallel kernels.

use conformal_deform::exec;
use conformal_deform::fem::{assemble_cr, assemble_h1, cr_residual};
use conformal_deform::mesh::{boundary_distance, element_quality, gen_disc};
use conformal_deform::rkhs::kernel_matrix;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn modes() -> Vec<(&'static str, bool)> {
    if exec::parallel_enabled() {
        vec![("parallel", false), ("sequential", true)]
    } else {
        vec![("sequential", true)]
    }
}

fn bench_assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble");
    for rings in [16usize, 32] {
        let mesh = gen_disc(3.0, rings).unwrap();
        for (mode, seq) in modes() {
            group.bench_with_input(
                BenchmarkId::new(format!("h1/{mode}"), mesh.n_triangles()),
                &mesh,
                |b, mesh| {
                    exec::force_sequential(seq);
                    b.iter(|| black_box(assemble_h1(mesh)));
                    exec::force_sequential(false);
                },
            );
            group.bench_with_input(
                BenchmarkId::new(format!("cr_weighted/{mode}"), mesh.n_triangles()),
                &mesh,
                |b, mesh| {
                    exec::force_sequential(seq);
                    b.iter(|| black_box(assemble_cr(mesh, true, 0.1)));
                    exec::force_sequential(false);
                },
            );
        }
    }
    group.finish();
}

fn bench_geometry(c: &mut Criterion) {
    let mut group = c.benchmark_group("geometry");
    let mesh = gen_disc(3.0, 32).unwrap();
    let field: Vec<f64> = (0..2 * mesh.n_nodes())
        .map(|i| ((i as f64) * 0.01).sin() * 0.01)
        .collect();
    let probes: Vec<[f64; 2]> = (0..2048)
        .map(|i| {
            let t = i as f64 / 2048.0;
            [2.9 * (6.28 * t).cos() * t, 2.9 * (6.28 * t).sin() * t]
        })
        .collect();
    for (mode, seq) in modes() {
        group.bench_function(format!("quality/{mode}"), |b| {
            exec::force_sequential(seq);
            b.iter(|| black_box(element_quality(&mesh).unwrap()));
            exec::force_sequential(false);
        });
        group.bench_function(format!("boundary_distance/{mode}"), |b| {
            exec::force_sequential(seq);
            b.iter(|| black_box(boundary_distance(&mesh, &probes)));
            exec::force_sequential(false);
        });
        group.bench_function(format!("cr_residual/{mode}"), |b| {
            exec::force_sequential(seq);
            b.iter(|| black_box(cr_residual(&mesh, &field)));
            exec::force_sequential(false);
        });
    }
    group.finish();
}

fn bench_kernel(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel");
    group.sample_size(20);
    let mesh = gen_disc(3.0, 12).unwrap();
    let sigma = 4.0 * mesh.mean_edge_length();
    for (mode, seq) in modes() {
        group.bench_function(format!("gram_matrix/{mode}"), |b| {
            exec::force_sequential(seq);
            b.iter(|| black_box(kernel_matrix(&mesh.nodes, sigma)));
            exec::force_sequential(false);
        });
    }
    group.finish();
}

criterion_group!(benches, bench_assembly, bench_geometry, bench_kernel);
criterion_main!(benches);
