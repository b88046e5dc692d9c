use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    balanced_subset, load_cifar_batches, load_mnist_dir, partition_noniid, synthetic_dataset, train_test_split,
    Dataset, PartitionSpec, SyntheticSpec,
};
use crate::model::{ModelVector, TinyModel};
use crate::protocol::{
    Algorithm, ClientState, CloudServer, EdgeServer, FedAsyncServer, FedAvgServer, NodeId, RoundServer, ServerNode,
    ServerState, SpykerParams, SyncServerState,
};
use crate::scalar::Scalar;
use crate::sim::{derive_seed, DerivedSeeds, EvalTarget, LinkModel, RunManifest, World, WorldSpec, CODE_VERSION};

use super::config::{DatasetConfig, ExperimentConfig, InitMode};
use super::ExperimentError;

/// Root directory for dataset files: `FEDSIM_DATA_DIR`, else `data/` at the workspace root.
pub fn data_root() -> PathBuf {
    std::env::var_os("FEDSIM_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

type RawPair = Arc<(Dataset, Dataset)>;

/// Decoded files are kept for the life of the process so suites do not re-read them.
fn cached_raw(key: PathBuf, load: impl FnOnce() -> Result<(Dataset, Dataset), ExperimentError>) -> Result<RawPair, ExperimentError> {
    static CACHE: OnceLock<Mutex<HashMap<PathBuf, RawPair>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().expect("cache lock").get(&key) {
        return Ok(hit.clone());
    }
    let pair = Arc::new(load()?);
    cache.lock().expect("cache lock").insert(key, pair.clone());
    Ok(pair)
}

fn limit(data: &Dataset, per_class: Option<usize>) -> Result<Dataset, ExperimentError> {
    match per_class {
        Some(n) => Ok(balanced_subset(data, n)?),
        None => Ok(data.clone()),
    }
}

/// Train and test sets for a configuration.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), ExperimentError> {
    match &cfg.dataset {
        DatasetConfig::Synthetic {
            n_samples,
            dim,
            n_classes,
            separation,
            blob_std,
            test_fraction,
        } => {
            let spec = SyntheticSpec {
                n_samples: *n_samples,
                dim: *dim,
                n_classes: *n_classes,
                separation: *separation,
                blob_std: *blob_std,
            };
            let all = synthetic_dataset(derive_seed(cfg.seed, "data", 0), &spec)?;
            Ok(train_test_split(&all, *test_fraction, derive_seed(cfg.seed, "split", 0))?)
        }
        DatasetConfig::Mnist {
            dir,
            train_per_class,
            test_per_class,
        } => {
            let dir = dir.clone().unwrap_or_else(|| data_root().join("mnist"));
            let raw = cached_raw(dir.clone(), || Ok(load_mnist_dir(&dir)?))?;
            Ok((limit(&raw.0, *train_per_class)?, limit(&raw.1, *test_per_class)?))
        }
        DatasetConfig::Cifar {
            dir,
            train_per_class,
            test_per_class,
        } => {
            let dir = dir.clone().unwrap_or_else(|| data_root().join("cifar-10-batches-bin"));
            let raw = cached_raw(dir.clone(), || {
                let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
                let train_refs: Vec<&Path> = train.iter().map(PathBuf::as_path).collect();
                let test = dir.join("test_batch.bin");
                Ok((load_cifar_batches(&train_refs)?, load_cifar_batches(&[test.as_path()])?))
            })?;
            Ok((limit(&raw.0, *train_per_class)?, limit(&raw.1, *test_per_class)?))
        }
    }
}

/// A ready-to-run simulation plus everything needed to reproduce it.
pub struct Prepared<S> {
    pub world: World<S>,
    pub manifest: RunManifest,
    /// Home server index of each client.
    pub client_server: Vec<usize>,
}

/// Home server index of each client, contiguous blocks in client order.
pub fn client_groups(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(s, &c)| std::iter::repeat_n(s, c))
        .collect()
}

pub fn build_world<S: Scalar>(cfg: &ExperimentConfig) -> Result<Prepared<S>, ExperimentError> {
    cfg.validate()?;
    let n = cfg.n_servers;
    let n_clients = cfg.n_clients;
    let seeds = DerivedSeeds::derive(cfg.seed, n, n_clients);

    let (train, test) = load_datasets(cfg)?;
    let shards: Vec<Arc<Dataset>> = if n_clients == 0 {
        Vec::new()
    } else {
        let partition = partition_noniid(
            &train,
            &PartitionSpec {
                n_clients,
                labels_per_client: cfg.partition.labels_per_client,
                seed: seeds.partition,
            },
        )?;
        partition.materialize(&train)?.into_iter().map(Arc::new).collect()
    };
    let n_classes = train.n_classes().max(test.n_classes());
    let shape = cfg.model.shape(train.dim(), n_classes);

    let init_model = |i: usize| -> Result<ModelVector<S>, ExperimentError> {
        let seed = match cfg.initial_model {
            InitMode::Shared => seeds.init[0],
            InitMode::Independent => seeds.init[i],
        };
        Ok(TinyModel::<S>::random(shape, &mut ChaCha8Rng::seed_from_u64(seed))?.into_params())
    };

    let mut ring: Vec<usize> = (0..n).collect();
    ring.shuffle(&mut ChaCha8Rng::seed_from_u64(seeds.ring));

    let matrix = cfg.latency.resolve()?;
    let server_locs: Vec<usize> = cfg
        .server_locations()
        .iter()
        .map(|l| matrix.index_of(l))
        .collect::<Result<_, _>>()
        .map_err(|e| ExperimentError::config("locations", e.to_string()))?;
    let central = matrix
        .index_of(&cfg.central_location)
        .map_err(|e| ExperimentError::config("central_location", e.to_string()))?;

    let counts = cfg.client_counts();
    let groups = client_groups(&counts);

    let mut delay_rng = ChaCha8Rng::seed_from_u64(seeds.delays);
    let mut delays: Vec<f64> = (0..n_clients)
        .map(|_| cfg.compute.sample_training_delay(&mut delay_rng))
        .collect();
    for o in &cfg.client_delay_overrides {
        delays[o.client] = o.per_epoch_ms;
    }

    let alg = cfg.algorithm;
    let n_server_nodes = match alg {
        Algorithm::Spyker | Algorithm::SyncSpyker => n,
        Algorithm::FedAsync | Algorithm::FedAvg => 1,
        Algorithm::HierFavg => n + 1,
    };
    let client_node = |k: usize| n_server_nodes + k;
    let home_of = |k: usize| -> NodeId {
        match alg {
            Algorithm::FedAsync | Algorithm::FedAvg => 0,
            _ => groups[k],
        }
    };
    let clients_of = |s: usize| -> Vec<NodeId> { (0..n_clients).filter(|&k| home_of(k) == s).map(client_node).collect() };
    let sizes_of = |s: usize| -> BTreeMap<NodeId, usize> {
        (0..n_clients)
            .filter(|&k| home_of(k) == s)
            .map(|k| (client_node(k), shards[k].len()))
            .collect()
    };

    let params = SpykerParams::new(&cfg.hyper, n, n_clients);
    let eta = cfg.hyper.eta_init;
    let mut servers: Vec<ServerNode<S>> = Vec::with_capacity(n_server_nodes);
    let mut locations: Vec<usize> = Vec::with_capacity(n_server_nodes + n_clients);
    match alg {
        Algorithm::Spyker => {
            for i in 0..n {
                servers.push(ServerNode::Spyker(ServerState::server_init(
                    i,
                    params.clone(),
                    init_model(i)?,
                    &ring,
                    &clients_of(i),
                )?));
                locations.push(server_locs[i]);
            }
        }
        Algorithm::SyncSpyker => {
            let period = cfg.sync_spyker.period.unwrap_or(cfg.hyper.h_intra);
            for i in 0..n {
                servers.push(ServerNode::SyncSpyker(SyncServerState::new(
                    i,
                    params.clone(),
                    init_model(i)?,
                    &clients_of(i),
                    period,
                )));
                locations.push(server_locs[i]);
            }
        }
        Algorithm::FedAsync => {
            servers.push(ServerNode::FedAsync(FedAsyncServer::new(
                init_model(0)?,
                sizes_of(0),
                cfg.hyper.alpha_fedasync,
                eta,
            )));
            locations.push(central);
        }
        Algorithm::FedAvg => {
            servers.push(ServerNode::FedAvg(FedAvgServer {
                core: RoundServer::new(init_model(0)?, sizes_of(0), eta, cfg.fedavg.client_fraction, seeds.selection)?,
            }));
            locations.push(central);
        }
        Algorithm::HierFavg => {
            let mut edge_sizes = BTreeMap::new();
            for i in 0..n {
                let sizes = sizes_of(i);
                edge_sizes.insert(i, sizes.values().sum::<usize>());
                servers.push(ServerNode::Edge(EdgeServer {
                    core: RoundServer::new(
                        init_model(i)?,
                        sizes,
                        eta,
                        cfg.fedavg.client_fraction,
                        derive_seed(seeds.selection, "edge", i as u64),
                    )?,
                    cloud: n,
                    period: cfg.hierfavg.period,
                    awaiting_cloud: false,
                }));
                locations.push(server_locs[i]);
            }
            servers.push(ServerNode::Cloud(CloudServer::new(init_model(0)?, edge_sizes)));
            locations.push(central);
        }
    }

    let mut clients = Vec::with_capacity(n_clients);
    for k in 0..n_clients {
        clients.push(ClientState::new(
            client_node(k),
            home_of(k),
            shards[k].clone(),
            shape,
            delays[k],
            cfg.hyper.local_epochs,
            cfg.hyper.batch_size,
            seeds.clients[k],
        ));
        locations.push(server_locs[groups[k]]);
    }
    let is_client: Vec<bool> = (0..n_server_nodes + n_clients).map(|i| i >= n_server_nodes).collect();
    let link = LinkModel::new(matrix, locations, is_client, cfg.bandwidth_mbps * 1e6, cfg.bandwidth_window)?;

    let eval_nodes: Vec<NodeId> = match alg {
        Algorithm::Spyker | Algorithm::SyncSpyker => (0..n).collect(),
        Algorithm::FedAsync | Algorithm::FedAvg => vec![0],
        Algorithm::HierFavg => vec![n],
    };
    let eval_target = if eval_nodes.len() == 1 {
        EvalTarget::AgeWeighted
    } else {
        cfg.eval_target
    };
    let spec = WorldSpec {
        algorithm: alg,
        stop: cfg.stop.clone(),
        eval_interval_ms: cfg.eval_interval_ms,
        queue_sample_ms: cfg.queue_sample_ms,
        eval_target,
        per_server_accuracy: cfg.per_server_accuracy,
        audit: cfg.audit,
        wire: cfg.wire,
        aggregation_ms: cfg.compute.aggregation_for(alg),
    };
    let world = World::new(spec, servers, clients, link, eval_nodes, shape, Arc::new(test))?;
    let manifest = RunManifest {
        master_seed: cfg.seed,
        seeds,
        ring_order: ring,
        config_hash: cfg.config_hash(),
        client_assignment: counts,
        code_version: CODE_VERSION.to_string(),
    };
    Ok(Prepared {
        world,
        manifest,
        client_server: groups,
    })
}
