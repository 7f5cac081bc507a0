#include "hflow/grid.hpp"

#include <nlohmann/json.hpp>

#include "hflow/deploy.hpp"
#include "hflow/model.hpp"

namespace hflow {

double stub_metric(uint64_t seed, uint64_t variant, uint64_t fold) {
  const uint64_t h = mix64(mix64(mix64(seed) ^ variant) ^ fold);
  // Top 53 bits → [0,1), the usual uniform-double construction.
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

double estimate_makespan(uint64_t variants, double hours_each,
                         uint64_t slots) {
  if (slots == 0) throw Error("estimate_makespan: slots must be >= 1");
  const uint64_t waves = (variants + slots - 1) / slots;
  return static_cast<double>(waves) * hours_each;
}

GridSpec make_grid_spec(uint32_t networks, uint32_t hyperparams,
                        uint32_t datasets, uint32_t folds) {
  GridSpec spec;
  for (uint32_t i = 0; i < networks; ++i)
    spec.networks.push_back("net" + std::to_string(i));
  for (uint32_t i = 0; i < hyperparams; ++i) {
    HyperSetting h;
    h.name = "hp" + std::to_string(i);
    h.learning_rate = 1e-3 / (1 + i);
    h.weight_decay = 1e-4 * (1 + i % 3);
    h.lr_decay = 0.9 - 0.05 * (i % 5);
    spec.hyperparams.push_back(std::move(h));
  }
  for (uint32_t i = 0; i < datasets; ++i)
    spec.datasets.push_back("ds" + std::to_string(i));
  spec.folds = folds;
  return spec;
}

namespace {

using json = nlohmann::ordered_json;

Payload axis_list(const json& items) {
  std::vector<Payload> out;
  for (const auto& item : items) out.push_back(Payload::value(item.dump()));
  return Payload::list(std::move(out));
}

Step make_step(std::string id, std::string command,
               std::vector<InPort> inputs, std::vector<OutPort> outputs,
               std::vector<std::string> scatter = {},
               ScatterMethod method = ScatterMethod::dot) {
  Step s;
  s.id = std::move(id);
  s.command = std::move(command);
  s.inputs = std::move(inputs);
  s.outputs = std::move(outputs);
  s.scatter = std::move(scatter);
  s.scatter_method = method;
  return s;
}

}  // namespace

GridFiles generate_grid(const GridSpec& spec) {
  json networks = json::array();
  for (size_t i = 0; i < spec.networks.size(); ++i)
    networks.push_back({{"i", i}, {"name", spec.networks[i]}});
  json hypers = json::array();
  for (size_t i = 0; i < spec.hyperparams.size(); ++i) {
    const auto& h = spec.hyperparams[i];
    hypers.push_back({{"i", i},
                      {"name", h.name},
                      {"learning_rate", h.learning_rate},
                      {"weight_decay", h.weight_decay},
                      {"lr_decay", h.lr_decay}});
  }
  json datasets = json::array();
  for (size_t i = 0; i < spec.datasets.size(); ++i)
    datasets.push_back({{"i", i}, {"name", spec.datasets[i]}});

  Workflow w;
  w.name = "grid-pipeline";
  w.inputs.push_back({"networks", PortKind::value, axis_list(networks)});
  w.inputs.push_back({"hyperparams", PortKind::value, axis_list(hypers)});
  w.inputs.push_back({"datasets", PortKind::value, axis_list(datasets)});
  {
    std::vector<Payload> folds;
    for (uint32_t k = 0; k < spec.folds; ++k)
      folds.push_back(Payload::value(std::to_string(k)));
    w.inputs.push_back({"folds", PortKind::value, Payload::list(std::move(folds))});
  }
  w.inputs.push_back({"n_hp", PortKind::value,
                      Payload::value(std::to_string(spec.hyperparams.size()))});
  w.inputs.push_back({"n_ds", PortKind::value,
                      Payload::value(std::to_string(spec.datasets.size()))});

  // One preprocessing + segmentation chain per dataset; both stages ride
  // the same per-dataset iteration.
  w.steps.push_back(make_step(
      "preprocess",
      "hflow-stub stage --label preprocess --input {dataset} --out "
      "{outdir}/pre.dat",
      {{"dataset", PortKind::value, "inputs.datasets"}},
      {{"data", PortKind::file, "pre.dat"}}, {"dataset"}));
  w.steps.push_back(make_step(
      "segment",
      "hflow-stub stage --label segment --in-file {data} --out "
      "{outdir}/seg.dat",
      {{"data", PortKind::file, "preprocess.data"}},
      {{"data", PortKind::file, "seg.dat"}}, {"data"}));

  // The variant axis: cross product over (network, hyperparams, dataset),
  // networks outermost. Every instance sees the full per-dataset
  // segmentation list and indexes it by the dataset's position.
  w.steps.push_back(make_step(
      "augment",
      "hflow-stub augment --network {network} --hyper {hyper} --dataset "
      "{dataset} --n-hp {n_hp} --n-ds {n_ds} --segs {segs} --out "
      "{outdir}/aug.dat",
      {{"network", PortKind::value, "inputs.networks"},
       {"hyper", PortKind::value, "inputs.hyperparams"},
       {"dataset", PortKind::value, "inputs.datasets"},
       {"n_hp", PortKind::value, "inputs.n_hp"},
       {"n_ds", PortKind::value, "inputs.n_ds"},
       {"segs", PortKind::file, "segment.data"}},
      {{"data", PortKind::file, "aug.dat"},
       {"variant", PortKind::value, "stdout"}},
      {"network", "hyper", "dataset"}, ScatterMethod::cross));
  w.steps.push_back(make_step(
      "pretrain",
      "hflow-stub stage --label pretrain --in-file {data} --out "
      "{outdir}/weights.bin",
      {{"data", PortKind::file, "augment.data"}},
      {{"weights", PortKind::file, "weights.bin"}}, {"data"}));

  // Cross-validation: each variant's weights fan out over the folds; the
  // weights ride the variant axis while the fold list splits a second
  // tag level under it.
  w.steps.push_back(make_step(
      "classify",
      "hflow-stub metric --variant {variant} --fold {fold} --weights "
      "{weights}",
      {{"weights", PortKind::file, "pretrain.weights"},
       {"fold", PortKind::value, "inputs.folds"},
       {"variant", PortKind::value, "augment.variant"}},
      {{"metric", PortKind::value, "stdout"}}, {"weights", "fold"}));

  // Per-variant reduce (fold mean), then the global ranking reduce.
  w.steps.push_back(make_step(
      "fold_reduce", "hflow-stub mean --variant {variant} --values {metrics}",
      {{"variant", PortKind::value, "augment.variant"},
       {"metrics", PortKind::value, "classify.metric"}},
      {{"mean", PortKind::value, "stdout"}}, {"variant"}));
  w.steps.push_back(make_step(
      "global_rank",
      "hflow-stub rank --variants {variants} --means {means} --folds {folds}",
      {{"variants", PortKind::value, "augment.variant"},
       {"means", PortKind::value, "fold_reduce.mean"},
       {"folds", PortKind::value, "classify.metric"}},
      {{"ranking", PortKind::value, "stdout"}}));

  w.outputs.push_back({"ranking", "global_rank.ranking"});

  EnvironmentPlan env;
  {
    ModelDecl hpc;
    hpc.name = "hpc";
    hpc.kind = ConnectorKind::sim_batch;
    hpc.root = "sites/hpc";
    hpc.batch.max_concurrent_jobs = 4;
    hpc.batch.submit_delay_ms = 0;
    hpc.batch.poll_interval_ms = 10;
    hpc.services.push_back({"gpu", 4, 1});
    env.models.push_back(std::move(hpc));

    ModelDecl local;
    local.name = "workstation";
    local.kind = ConnectorKind::local;
    local.root = "sites/workstation";
    local.services.push_back({"cpu", 1, 4});
    env.models.push_back(std::move(local));
  }
  // Training stages default to the batch cluster via the glob; the two
  // reduce steps override it with exact (more specific) bindings.
  env.bindings.push_back({"*", "hpc", "gpu", 1});
  env.bindings.push_back({"fold_reduce", "workstation", "cpu", 1});
  env.bindings.push_back({"global_rank", "workstation", "cpu", 1});
  env.staging_dir = "staging";

  json manifest;
  manifest["folds"] = spec.folds;
  json variants = json::array();
  const size_t H = spec.hyperparams.size(), D = spec.datasets.size();
  for (size_t n = 0; n < spec.networks.size(); ++n)
    for (size_t h = 0; h < H; ++h)
      for (size_t d = 0; d < D; ++d)
        variants.push_back({{"id", (n * H + h) * D + d},
                            {"network", spec.networks[n]},
                            {"hyperparams", spec.hyperparams[h].name},
                            {"dataset", spec.datasets[d]}});
  manifest["variants"] = std::move(variants);

  return {serialize_workflow(w), serialize_environment(env),
          manifest.dump(2) + "\n"};
}

}  // namespace hflow
