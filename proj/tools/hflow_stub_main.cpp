// Deterministic task stubs. Every subcommand is a pure function of its
// arguments, its input file *contents*, and HF_SEED — never of paths,
// clocks, or host state — so runs can be compared byte-for-byte across
// schedules and execution sites. File-reading commands fail loudly when
// an input is missing, which is what staging tests probe for.
#include <CLI11.hpp>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <thread>
#include <vector>

#include "hflow/common.hpp"
#include "hflow/grid.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

uint64_t env_seed() {
  const char* s = std::getenv("HF_SEED");
  return s ? std::strtoull(s, nullptr, 10) : 0;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Digest of a file's contents as "<hex>:<size>"; exits 3 when missing so
// an un-staged input is unmistakable in stderr and exit code.
std::string file_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::fprintf(stderr, "missing input file: %s\n", path.c_str());
    std::exit(3);
  }
  uint64_t h = hflow::fnv1a64("");
  char buf[1 << 16];
  uint64_t size = 0;
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = hflow::fnv1a64(std::string_view(buf, static_cast<size_t>(in.gcount())),
                       h);
    size += static_cast<uint64_t>(in.gcount());
  }
  return hflow::hex64(h) + ":" + std::to_string(size);
}

void write_file(const std::string& path, const std::string& content) {
  if (const fs::path parent = fs::path(path).parent_path(); !parent.empty())
    fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) {
    std::fprintf(stderr, "cannot write output file: %s\n", path.c_str());
    std::exit(3);
  }
}

json parse_json(const std::string& text, const std::string& what) {
  json parsed = json::parse(text, nullptr, false);
  if (parsed.is_discarded()) {
    std::fprintf(stderr, "malformed %s: %s\n", what.c_str(), text.c_str());
    std::exit(3);
  }
  return parsed;
}

// Engine substitutions quote every leaf; accept bare numbers too so a
// hand-driven invocation degrades into a message instead of an abort.
std::string leaf_text(const json& v, const char* what) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number() || v.is_boolean()) return v.dump();
  std::fprintf(stderr, "expected a scalar in %s, got: %s\n", what,
               v.dump().c_str());
  std::exit(3);
}

// Fingerprints every string leaf of a (possibly nested) JSON array of
// file paths, in order.
void fingerprint_tree(const json& node, std::string* out) {
  if (node.is_string()) {
    *out += "file=" + file_fingerprint(node.get<std::string>()) + "\n";
    return;
  }
  if (!node.is_array()) {
    std::fprintf(stderr, "expected a path or array of paths, got: %s\n",
                 node.dump().c_str());
    std::exit(3);
  }
  *out += "[\n";
  for (const auto& child : node) fingerprint_tree(child, out);
  *out += "]\n";
}

int cmd_stage(const std::string& label, const std::string& input,
              bool has_input, const std::vector<std::string>& in_files,
              const std::string& out) {
  std::string content = "label=" + label + "\n";
  if (has_input) content += "input=" + input + "\n";
  for (const auto& f : in_files) content += "file=" + file_fingerprint(f) + "\n";
  write_file(out, content);
  return 0;
}

int cmd_augment(const std::string& network, const std::string& hyper,
                const std::string& dataset, uint64_t n_hp, uint64_t n_ds,
                const std::string& segs, const std::string& out) {
  const json net = parse_json(network, "network");
  const json hp = parse_json(hyper, "hyper");
  const json ds = parse_json(dataset, "dataset");
  const json seg_paths = parse_json(segs, "segs");
  const uint64_t i_n = net.at("i").get<uint64_t>();
  const uint64_t i_h = hp.at("i").get<uint64_t>();
  const uint64_t i_d = ds.at("i").get<uint64_t>();
  const uint64_t variant = (i_n * n_hp + i_h) * n_ds + i_d;
  if (!seg_paths.is_array() || i_d >= seg_paths.size()) {
    std::fprintf(stderr, "segs has no entry for dataset %" PRIu64 "\n", i_d);
    return 3;
  }
  const std::string seg =
      file_fingerprint(leaf_text(seg_paths[i_d], "segs"));
  std::string content = "variant=" + std::to_string(variant) + "\n";
  content += "network=" + net.dump() + "\n";
  content += "hyper=" + hp.dump() + "\n";
  content += "dataset=" + ds.dump() + "\n";
  content += "seg=" + seg + "\n";
  write_file(out, content);
  std::printf("%" PRIu64, variant);
  return 0;
}

int cmd_metric(uint64_t variant, uint64_t fold, const std::string& weights) {
  file_fingerprint(weights);  // the read is the point: fails when un-staged
  std::printf("%s", format_double(hflow::stub_metric(env_seed(), variant,
                                                     fold)).c_str());
  return 0;
}

int cmd_mean(const std::string& values) {
  const json parsed = parse_json(values, "values");
  double sum = 0.0;
  for (const auto& v : parsed)
    sum += std::strtod(leaf_text(v, "values").c_str(), nullptr);
  const double mean = parsed.empty() ? 0.0 : sum / parsed.size();
  std::printf("%s", format_double(mean).c_str());
  return 0;
}

int cmd_rank(const std::string& variants, const std::string& means,
             const std::string& folds) {
  const json vs = parse_json(variants, "variants");
  const json ms = parse_json(means, "means");
  const json fs_ = parse_json(folds, "folds");
  if (vs.size() != ms.size() || vs.size() != fs_.size()) {
    std::fprintf(stderr,
                 "axis mismatch: %zu variants, %zu means, %zu fold lists\n",
                 vs.size(), ms.size(), fs_.size());
    return 3;
  }
  struct Row {
    uint64_t variant;
    double mean;
    std::vector<double> folds;
  };
  std::vector<Row> rows;
  for (size_t i = 0; i < vs.size(); ++i) {
    Row r;
    r.variant =
        std::strtoull(leaf_text(vs[i], "variants").c_str(), nullptr, 10);
    r.mean = std::strtod(leaf_text(ms[i], "means").c_str(), nullptr);
    for (const auto& f : fs_[i])
      r.folds.push_back(std::strtod(leaf_text(f, "folds").c_str(), nullptr));
    rows.push_back(std::move(r));
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.mean != b.mean) return a.mean > b.mean;
    return a.variant < b.variant;
  });
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"variant", r.variant},
                   {"mean_metric", r.mean},
                   {"fold_metrics", r.folds}});
  std::printf("%s", out.dump().c_str());
  return 0;
}

int cmd_mix(const std::string& label, const std::vector<std::string>& args,
            const std::vector<std::string>& in_files,
            const std::vector<std::string>& in_lists, const std::string& out) {
  std::string trace = "label=" + label + "\n";
  for (const auto& a : args) trace += "arg=" + a + "\n";
  for (const auto& f : in_files)
    trace += "file=" + file_fingerprint(f) + "\n";
  for (const auto& l : in_lists)
    fingerprint_tree(parse_json(l, "path list"), &trace);
  const std::string digest = hflow::hex64(hflow::fnv1a64(trace));
  if (!out.empty()) write_file(out, "mix=" + digest + "\n" + trace);
  std::printf("%s", digest.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic workflow task stubs"};
  app.require_subcommand(1);

  auto* stage = app.add_subcommand("stage", "derive a file from inputs");
  std::string st_label, st_input, st_out;
  std::vector<std::string> st_files;
  stage->add_option("--label", st_label)->required();
  auto* st_input_opt = stage->add_option("--input", st_input);
  // allow_extra_args(false) everywhere a value may hold JSON: it stops
  // CLI11 from expanding "[a,b]" values into separate elements, so each
  // occurrence contributes exactly the literal token it was given.
  stage->add_option("--in-file", st_files)->allow_extra_args(false);
  stage->add_option("--out", st_out)->required();

  auto* augment = app.add_subcommand("augment", "expand one grid variant");
  std::string au_net, au_hp, au_ds, au_segs, au_out;
  uint64_t au_nhp = 0, au_nds = 0;
  augment->add_option("--network", au_net)->required();
  augment->add_option("--hyper", au_hp)->required();
  augment->add_option("--dataset", au_ds)->required();
  augment->add_option("--n-hp", au_nhp)->required();
  augment->add_option("--n-ds", au_nds)->required();
  augment->add_option("--segs", au_segs)->required();
  augment->add_option("--out", au_out)->required();

  auto* metric = app.add_subcommand("metric", "per-fold metric from weights");
  uint64_t me_variant = 0, me_fold = 0;
  std::string me_weights;
  metric->add_option("--variant", me_variant)->required();
  metric->add_option("--fold", me_fold)->required();
  metric->add_option("--weights", me_weights)->required();

  auto* mean = app.add_subcommand("mean", "mean of a metric list");
  std::string mn_values;
  uint64_t mn_variant = 0;
  mean->add_option("--variant", mn_variant);
  mean->add_option("--values", mn_values)->required();

  auto* rank = app.add_subcommand("rank", "rank variants by mean metric");
  std::string rk_variants, rk_means, rk_folds;
  rank->add_option("--variants", rk_variants)->required();
  rank->add_option("--means", rk_means)->required();
  rank->add_option("--folds", rk_folds)->required();

  auto* mix = app.add_subcommand("mix", "digest of labeled inputs");
  std::string mx_label, mx_out;
  std::vector<std::string> mx_args, mx_files, mx_lists;
  mix->add_option("--label", mx_label)->required();
  mix->add_option("--arg", mx_args)->allow_extra_args(false);
  mix->add_option("--in-file", mx_files)->allow_extra_args(false);
  mix->add_option("--in-list", mx_lists)->allow_extra_args(false);
  mix->add_option("--out", mx_out);

  auto* cat = app.add_subcommand("cat", "print a file's contents");
  std::string ct_file;
  cat->add_option("--file", ct_file)->required();

  auto* sleep_cmd = app.add_subcommand("sleep", "sleep for a duration");
  uint64_t sl_ms = 0;
  sleep_cmd->add_option("--ms", sl_ms)->required();

  auto* spam = app.add_subcommand("spam", "write many bytes to stdout");
  uint64_t sp_bytes = 0;
  spam->add_option("--bytes", sp_bytes)->required();

  auto* fail = app.add_subcommand("fail", "exit with a given code");
  int fl_code = 1;
  std::string fl_message = "stub failure";
  fail->add_option("--code", fl_code);
  fail->add_option("--message", fl_message);

  auto* echo = app.add_subcommand("echo", "print a string");
  std::string ec_text;
  echo->add_option("--text", ec_text)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (stage->parsed())
      return cmd_stage(st_label, st_input, st_input_opt->count() > 0,
                       st_files, st_out);
    if (augment->parsed())
      return cmd_augment(au_net, au_hp, au_ds, au_nhp, au_nds, au_segs,
                         au_out);
    if (metric->parsed()) return cmd_metric(me_variant, me_fold, me_weights);
    if (mean->parsed()) return cmd_mean(mn_values);
    if (rank->parsed()) return cmd_rank(rk_variants, rk_means, rk_folds);
    if (mix->parsed())
      return cmd_mix(mx_label, mx_args, mx_files, mx_lists, mx_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 3;
  }
  if (cat->parsed()) {
    std::ifstream in(ct_file, std::ios::binary);
    if (!in) {
      std::fprintf(stderr, "missing input file: %s\n", ct_file.c_str());
      return 3;
    }
    std::string data{std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>()};
    std::fwrite(data.data(), 1, data.size(), stdout);
    return 0;
  }
  if (sleep_cmd->parsed()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(sl_ms));
    return 0;
  }
  if (spam->parsed()) {
    std::string chunk(1 << 16, 'x');
    uint64_t left = sp_bytes;
    while (left > 0) {
      const size_t n = static_cast<size_t>(
          std::min<uint64_t>(left, chunk.size()));
      std::fwrite(chunk.data(), 1, n, stdout);
      left -= n;
    }
    return 0;
  }
  if (fail->parsed()) {
    std::fprintf(stderr, "%s\n", fl_message.c_str());
    return fl_code;
  }
  if (echo->parsed()) {
    std::printf("%s", ec_text.c_str());
    return 0;
  }
  return 2;
}
