use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor};
use evrgbhand::fusion_net::{FusionNet, MeshPrediction, NetworkConfig, StepInput, StreamState};
use evrgbhand::hand_model::make_desk_model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk_net(seed: u64) -> FusionNet {
    let model = make_desk_model(&mut ChaCha8Rng::seed_from_u64(0));
    FusionNet::new(NetworkConfig::desk(), &model.upsample_matrix, seed, DType::F32, &Device::Cpu).unwrap()
}

fn unit_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f32> = (0..n).map(|_| rng.random::<f32>()).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn all_finite(p: &MeshPrediction) -> bool {
    [&p.joints, &p.coarse, &p.fine]
        .iter()
        .all(|t| t.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|v| v.is_finite()))
}

#[test]
fn default_init_outputs_stay_finite_on_random_inputs() {
    let net = desk_net(1);
    let s = net.config().input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut state = StreamState::new();
    let mut image = unit_tensor(&mut rng, &[1, 3, s, s]);
    for trial in 0..1000 {
        if rng.random_bool(0.25) {
            image = unit_tensor(&mut rng, &[1, 3, s, s]);
        }
        if rng.random_bool(0.1) {
            state = StreamState::new();
        }
        let input = StepInput { image: image.clone(), events: unit_tensor(&mut rng, &[1, 2, s, s]) };
        let pred = net.step(&input, &mut state).unwrap();
        assert!(all_finite(&pred), "non-finite output at trial {trial}");
    }
}

#[test]
fn desk_five_step_sequence_budget() {
    let net = desk_net(3);
    let s = net.config().input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let image = unit_tensor(&mut rng, &[1, 3, s, s]);
    let steps: Vec<StepInput> = (0..5)
        .map(|_| StepInput { image: image.clone(), events: unit_tensor(&mut rng, &[1, 2, s, s]) })
        .collect();
    net.forward_sequence(&steps[..1]).unwrap();
    let start = Instant::now();
    let (out, _) = net.forward_sequence(&steps).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(out.len(), 5);
    assert_eq!(out[4].fine.dims(), &[1, 778, 3]);
    assert!(elapsed < Duration::from_secs(1), "5 steps took {elapsed:?}");
}
