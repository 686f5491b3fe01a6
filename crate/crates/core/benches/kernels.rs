use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use tieredfem::constitutive::{SpringState, SPRINGS_PER_ELEMENT};
use tieredfem::element::DOFS;
use tieredfem::mesh::{BoundaryConditionSpec, Mesh, MeshConfig};
use tieredfem::model::{update_element, Model};
use tieredfem::par::Exec;
use tieredfem::sparse::{EbeOperator, LinearOperator, ScatterMode};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn model() -> Model {
    let cfg = MeshConfig::two_layer(80.0, 80.0, 40.0, 6, 6, 4, 20.0);
    Model::new(
        Mesh::generate(&cfg).unwrap(),
        BoundaryConditionSpec::default(),
        Exec::Sequential,
    )
    .unwrap()
}

fn input(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i * 7919) % 1000) as f64 * 1e-3 - 0.5).collect()
}

fn matvec(c: &mut Criterion) {
    let m = model();
    let n = m.n_dofs();
    let tangents = m.initial_tangents();
    let diag: Vec<f64> = m
        .mass
        .iter()
        .zip(&m.dashpot)
        .map(|(a, b)| 4e4 * a + 200.0 * b)
        .collect();
    let mut crs = m.pattern.clone();
    crs.update_values(&m.kernels, &tangents, &m.coloring, 1.0, &diag, Exec::Sequential)
        .unwrap();
    let x = input(n);
    let mut y = vec![0.0; n];
    let mut g = c.benchmark_group("matvec");
    for (name, exec) in MODES {
        for scatter in [ScatterMode::Colored, ScatterMode::Atomic] {
            let op = EbeOperator {
                n_dofs: n,
                kernels: &m.kernels,
                nodes: m.nodes(),
                coloring: &m.coloring,
                tangents: &tangents,
                diag: Some(&diag),
                a_k: 1.0,
                scatter,
                exec,
            };
            g.bench_function(BenchmarkId::new(format!("ebe_{scatter:?}"), name), |b| {
                b.iter(|| op.apply(black_box(&x), &mut y))
            });
        }
        g.bench_function(BenchmarkId::new("crs", name), |b| {
            b.iter(|| crs.matvec(black_box(&x), &mut y, exec))
        });
    }
    g.finish();
}

fn multispring(c: &mut Criterion) {
    let m = model();
    let du: [f64; DOFS] = std::array::from_fn(|i| 1e-4 * ((i % 7) as f64 - 3.0));
    let mut g = c.benchmark_group("multispring_update");
    g.sample_size(20);
    for (name, exec) in MODES {
        let mut springs = vec![SpringState::VIRGIN; m.n_elements() * SPRINGS_PER_ELEMENT];
        let mut sign = 1.0;
        g.bench_function(name, |b| {
            b.iter(|| {
                sign = -sign;
                let d = du.map(|v| v * sign);
                exec.for_each_chunk_mut(&mut springs, SPRINGS_PER_ELEMENT, |e, s| {
                    black_box(update_element(&m.kernels[e], s, &d, m.material(e)));
                });
            })
        });
    }
    g.finish();
}

criterion_group!(benches, matvec, multispring);
criterion_main!(benches);
