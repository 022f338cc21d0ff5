#![allow(dead_code)]

use std::path::PathBuf;

use distdpo::bench_suite::{DataConfig, DpoSettings};
use distdpo::cli_io::{ConstantsConfig, GradcheckConfig, LowerBoundConfig, Mode, RunConfig, SweepConfig};
use distdpo::dec_runtime::DecConfig;
use distdpo::env_policy::InstanceConfig;
use distdpo::fed_runtime::{FedConfig, Weighting};
use distdpo::lowerbound::EtaRule;
use distdpo::oracle::StreamKeying;
use distdpo::par::Exec;
use distdpo::topology::{TopologyKind, WeightScheme};
use proptest::prelude::*;

fn topology() -> impl Strategy<Value = TopologyKind> {
    prop::sample::select(TopologyKind::ALL.to_vec())
}

fn clip() -> impl Strategy<Value = Option<f64>> {
    prop::option::of(0.01f64..10.0)
}

fn keying() -> impl Strategy<Value = StreamKeying> {
    prop_oneof![Just(StreamKeying::PerClient), Just(StreamKeying::Shared)]
}

prop_compose! {
    fn instance()(num_states in 1usize..6, num_actions in 1usize..6, feature_dim in 1usize..9,
                  horizon in 1usize..7, phi_bound in 0.1f64..4.0) -> InstanceConfig {
        InstanceConfig { num_states, num_actions, feature_dim, horizon, phi_bound }
    }
}

prop_compose! {
    fn fed()(num_clients in 1usize..10, part in 0usize..1000, local_steps in 1usize..10, rounds in 1usize..200,
             step_size in 1e-6f64..1.0, batch_size in 1usize..16, clip_norm in clip(), q_max in 0usize..6,
             uniform in any::<bool>(), minibatch_streams in keying(), record_timing in any::<bool>()) -> FedConfig {
        FedConfig {
            num_clients,
            participation: 1 + part % num_clients,
            local_steps,
            rounds,
            step_size,
            batch_size,
            clip_norm,
            q_max,
            weighting: if uniform { Weighting::Uniform } else { Weighting::DataSize },
            minibatch_streams,
            record_timing,
            exec: Exec::default(),
        }
    }
}

prop_compose! {
    fn dec()(num_nodes in 1usize..10, topology in topology(),
             scheme in prop::option::of(prop_oneof![Just(WeightScheme::UniformNeighbor), Just(WeightScheme::Metropolis)]),
             rounds in 1usize..200, step_size in 1e-6f64..1.0, batch_size in 1usize..16, local_steps in 1usize..8,
             clip_norm in clip(), minibatch_streams in keying(), record_timing in any::<bool>()) -> DecConfig {
        DecConfig { num_nodes, topology, scheme, rounds, step_size, batch_size, local_steps, clip_norm,
                    minibatch_streams, record_timing, exec: Exec::default() }
    }
}

prop_compose! {
    fn lowerbound()(half in 1usize..8, alpha in 0.1f64..5.0, noise_std in 0.0f64..1.0,
                    e_grid in prop::collection::vec(1usize..8, 1..4), s_raw in prop::collection::vec(0usize..100, 1..5),
                    inverse in any::<bool>(), eta in 0.01f64..1.0, rounds in 1usize..100,
                    seeds in prop::collection::vec(0u64..1_000_000, 1..6)) -> LowerBoundConfig {
        let n = 2 * half;
        LowerBoundConfig {
            n_clients: n,
            alpha,
            noise_std,
            e_grid,
            s_grid: s_raw.iter().map(|s| 1 + s % n).collect(),
            eta: if inverse { EtaRule::InverseE(eta) } else { EtaRule::Fixed(eta) },
            rounds,
            seeds,
        }
    }
}

prop_compose! {
    fn sections()(instance in instance(), weights in prop::collection::vec(-2.0f64..2.0, 8), has_weights in any::<bool>(),
                  perturbation_scale in 0.0f64..3.0, pairs_per_client in 1usize..500, behavior_seed in 0u64..1_000_000,
                  beta in 0.01f64..2.0, loss_offset in -1.0f64..1.0)
                  -> (InstanceConfig, DataConfig, DpoSettings) {
        let d = instance.feature_dim;
        let data = DataConfig {
            base_weights: has_weights.then(|| weights[..d].to_vec()),
            perturbation_scale,
            pairs_per_client,
            behavior_seed,
        };
        (instance, data, DpoSettings { beta, loss_offset })
    }
}

prop_compose! {
    /// Random configs that pass validation in every mode.
    pub fn run_config()(mode in prop::sample::select(Mode::all()), master_seed in 0u64..=i64::MAX as u64,
                        seeds in prop::collection::vec(0u64..10_000, 3..6), dir in "[a-z]{1,8}",
                        (instance, data, dpo) in sections(), fed in fed(), dec in dec(),
                        num_samples in 2usize..10_000, inflate in any::<bool>(),
                        gc in (1usize..50, 1usize..20, 1e-7f64..1e-3, 1e-9f64..1e-3),
                        lowerbound in lowerbound(),
                        grids in (prop::collection::vec(0usize..100, 1..4), prop::collection::vec(1usize..10, 1..4),
                                  prop::collection::vec(0usize..6, 1..4), prop::collection::vec(topology(), 1..4),
                                  prop::collection::vec(topology(), 0..4)))
                        -> RunConfig {
        let (part, local_steps, staleness, topologies, fit_topologies) = grids;
        RunConfig {
            mode,
            master_seed,
            seeds,
            output_dir: PathBuf::from(dir),
            instance,
            data,
            dpo,
            sweep: SweepConfig {
                participation: part.iter().map(|s| 1 + s % fed.num_clients).collect(),
                local_steps,
                staleness,
                topologies,
                fit_topologies,
            },
            fed,
            dec,
            constants: ConstantsConfig { num_samples, inflate },
            gradcheck: GradcheckConfig { instances: gc.0, pairs_per_instance: gc.1, step: gc.2, tolerance: gc.3 },
            lowerbound,
        }
    }
}
