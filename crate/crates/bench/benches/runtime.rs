use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use sdnn_core::runtime::{
    neuron_step, run_sequence, scatter_conv, Execution, GradedSpike, NeuronBlockState, RunOptions,
    SpikeBatch,
};
use sdnn_core::synth::{gen_synthetic, ModelSpec, VideoKind, VideoSpec};
use sdnn_core::{convert, run_graph_reference, SdnnGraph};

const SPEC: &str = "3x64x64:16k3s2p1,32k3s1p1,32k3s2p1,27k1s1p0";

fn setup(frames: usize) -> (SdnnGraph, Vec<sdnn_core::QuantTensor>) {
    let spec: ModelSpec = SPEC.parse().unwrap();
    let video = VideoSpec {
        frames,
        kind: VideoKind::MovingBlob {
            blob_size: 8,
            motion_rate: 1.0,
        },
    };
    let s = gen_synthetic(&spec, &video, 1).unwrap();
    let g = convert(&s.model, &[0; 4]).unwrap();
    let frames = g.quantize_inputs(&s.frames).unwrap();
    (g, frames)
}

fn bench_scatter(c: &mut Criterion) {
    let (g, _) = setup(1);
    let layer = &g.layers[1];
    let n = layer.input_dims.len();
    let mut group = c.benchmark_group("scatter_conv");
    for density in [0.01, 0.1, 1.0] {
        let step = (1.0 / density) as usize;
        let mut batch = SpikeBatch::new(0, 0);
        batch.spikes = (0..n)
            .step_by(step)
            .map(|i| GradedSpike {
                neuron: i as u32,
                payload: (i % 7) as i32 - 3,
            })
            .collect();
        group.throughput(Throughput::Elements(batch.len() as u64));
        group.bench_function(format!("density_{density}"), |b| {
            b.iter_batched_ref(
                || NeuronBlockState::new(layer),
                |state| scatter_conv(black_box(&batch), layer, state).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn bench_neuron_step(c: &mut Criterion) {
    let (g, _) = setup(1);
    let layer = &g.layers[1];
    c.bench_function("neuron_step", |b| {
        b.iter_batched_ref(
            || NeuronBlockState::new(layer),
            |state| neuron_step(state, layer, 1, 0).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_sequence(c: &mut Criterion) {
    let (g, frames) = setup(16);
    let mut group = c.benchmark_group("run_sequence");
    group.sample_size(10);
    group.throughput(Throughput::Elements(frames.len() as u64));
    for (name, execution) in [
        ("sequential", Execution::Sequential),
        ("layer_parallel", Execution::LayerParallel),
    ] {
        let opts = RunOptions {
            execution,
            record_spikes: false,
        };
        group.bench_function(name, |b| {
            b.iter(|| run_sequence(&g, black_box(&frames), opts).unwrap())
        });
    }
    group.bench_function("dense_reference", |b| {
        b.iter(|| {
            for f in &frames {
                black_box(run_graph_reference(&g, f).unwrap());
            }
        })
    });
    group.finish();
}

criterion_group!(benches, bench_scatter, bench_neuron_step, bench_sequence);
criterion_main!(benches);
