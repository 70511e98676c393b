#include "mvcl/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "mvcl/error.hpp"

namespace mvcl {

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  fail(ErrorKind::Config, "config key '" + std::string(key) + "': cannot parse '" +
                              std::string(value) + "' as " + expected);
}

template <class T>
T parse_unsigned(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
    bad_value(key, v, "a finite number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

template <class T>
std::string show(const T& v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Entry {
  ConfigKey key;
  std::function<void(RunConfig&, std::string_view, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, class Access>
Entry size_entry(const char* name, const char* help, Access access) {
  return {{name, help},
          [access](RunConfig& c, std::string_view k, std::string_view v) {
            access(c) = parse_unsigned<T>(k, v);
          },
          [access](const RunConfig& c) { return show(access(c)); }};
}

template <class Access>
Entry real_entry(const char* name, const char* help, Access access) {
  return {{name, help},
          [access](RunConfig& c, std::string_view k, std::string_view v) {
            access(c) = parse_double(k, v);
          },
          [access](const RunConfig& c) { return show(access(c)); }};
}

template <class Access>
Entry bool_entry(const char* name, const char* help, Access access) {
  return {{name, help},
          [access](RunConfig& c, std::string_view k, std::string_view v) {
            access(c) = parse_bool(k, v);
          },
          [access](const RunConfig& c) { return std::string(access(c) ? "true" : "false"); }};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    using Sz = std::size_t;
    using U32 = std::uint32_t;
    t.push_back(size_entry<Sz>("model_dim", "hidden width D",
                               [](auto& c) -> auto& { return c.model.model_dim; }));
    t.push_back(size_entry<Sz>("num_layers", "encoder layers",
                               [](auto& c) -> auto& { return c.model.num_layers; }));
    t.push_back(size_entry<Sz>("num_heads", "attention heads",
                               [](auto& c) -> auto& { return c.model.num_heads; }));
    t.push_back(size_entry<Sz>("ffn_dim", "feed-forward hidden width",
                               [](auto& c) -> auto& { return c.model.ffn_dim; }));
    t.push_back(size_entry<Sz>("proj_dim", "projection head output width",
                               [](auto& c) -> auto& { return c.model.proj_dim; }));
    t.push_back(size_entry<Sz>("cross_blocks", "cross-attention blocks per level",
                               [](auto& c) -> auto& { return c.model.cross_blocks; }));
    t.push_back(bool_entry("type_embeddings", "learned type embeddings in fusion",
                           [](auto& c) -> auto& { return c.model.type_embeddings; }));
    t.push_back(size_entry<Sz>("classifier_hidden", "classifier MLP hidden width",
                               [](auto& c) -> auto& { return c.model.classifier_hidden; }));
    t.push_back(size_entry<Sz>("batch_size", "training batch size",
                               [](auto& c) -> auto& { return c.train.batch_size; }));
    t.push_back(real_entry("temperature", "contrastive temperature",
                           [](auto& c) -> auto& { return c.train.temperature; }));
    t.push_back(
        real_entry("lr", "Adam learning rate", [](auto& c) -> auto& { return c.train.lr; }));
    t.push_back(real_entry("clip_norm", "global gradient-norm clip",
                           [](auto& c) -> auto& { return c.train.clip_norm; }));
    t.push_back(size_entry<Sz>("epochs_stage1", "epochs of unimodal contrastive training",
                               [](auto& c) -> auto& { return c.train.epochs[0]; }));
    t.push_back(size_entry<Sz>("epochs_stage2", "epochs of cross-modal contrastive training",
                               [](auto& c) -> auto& { return c.train.epochs[1]; }));
    t.push_back(size_entry<Sz>("epochs_stage3", "epochs of fused contrastive training",
                               [](auto& c) -> auto& { return c.train.epochs[2]; }));
    t.push_back(size_entry<Sz>("epochs_cls", "epochs of classifier training",
                               [](auto& c) -> auto& { return c.train.epochs[3]; }));
    t.push_back({{"reduction", "contrastive loss reduction: mean or sum"},
                 [](RunConfig& c, std::string_view k, std::string_view v) {
                   if (v == "mean")
                     c.train.reduction = Reduction::Mean;
                   else if (v == "sum")
                     c.train.reduction = Reduction::Sum;
                   else
                     bad_value(k, v, "'mean' or 'sum'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.reduction == Reduction::Mean ? "mean" : "sum");
                 }});
    t.push_back(real_entry("label_granularity",
                           "regression label bucket width for contrastive classes",
                           [](auto& c) -> auto& { return c.train.label_granularity; }));
    t.push_back(bool_entry("acc2_exclude_zero", "drop zero targets from Acc-2 and F1",
                           [](auto& c) -> auto& { return c.train.metric_options.exclude_zero; }));
    t.push_back(bool_entry("f1_weighted", "support-weighted F1",
                           [](auto& c) -> auto& { return c.train.metric_options.weighted_f1; }));
    t.push_back(size_entry<U32>("synth_classes", "synthetic latent classes",
                                [](auto& c) -> auto& { return c.synth.classes; }));
    t.push_back(size_entry<Sz>("synth_train", "synthetic train samples",
                               [](auto& c) -> auto& { return c.synth.train; }));
    t.push_back(size_entry<Sz>("synth_val", "synthetic validation samples",
                               [](auto& c) -> auto& { return c.synth.val; }));
    t.push_back(size_entry<Sz>("synth_test", "synthetic test samples",
                               [](auto& c) -> auto& { return c.synth.test; }));
    t.push_back({{"synth_task", "synthetic task: regression or classification"},
                 [](RunConfig& c, std::string_view k, std::string_view v) {
                   if (v == "regression")
                     c.synth.task = TaskKind::Regression;
                   else if (v == "classification")
                     c.synth.task = TaskKind::Classification;
                   else
                     bad_value(k, v, "'regression' or 'classification'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.synth.task == TaskKind::Regression ? "regression"
                                                                           : "classification");
                 }});
    t.push_back(bool_entry("synth_multi_task", "emit per-modality labels",
                           [](auto& c) -> auto& { return c.synth.multi_task; }));
    t.push_back(real_entry("synth_mean_scale", "scale of class mean vectors",
                           [](auto& c) -> auto& { return c.synth.mean_scale; }));
    t.push_back(real_entry("synth_noise", "per-element Gaussian noise sigma",
                           [](auto& c) -> auto& { return c.synth.noise; }));
    t.push_back(real_entry("synth_consistency", "chance a modality agrees with the label",
                           [](auto& c) -> auto& { return c.synth.consistency; }));
    const char* letters[] = {"t", "a", "v"};
    for (std::size_t m = 0; m < 3; ++m) {
      static std::string names[6], helps[6];
      names[2 * m] = std::string("synth_len_") + letters[m];
      helps[2 * m] = std::string("synthetic sequence length of modality ") + letters[m];
      names[2 * m + 1] = std::string("synth_dim_") + letters[m];
      helps[2 * m + 1] = std::string("synthetic feature dimension of modality ") + letters[m];
      t.push_back(size_entry<U32>(names[2 * m].c_str(), helps[2 * m].c_str(),
                                  [m](auto& c) -> auto& { return c.synth.shapes[m].length; }));
      t.push_back(size_entry<U32>(names[2 * m + 1].c_str(), helps[2 * m + 1].c_str(),
                                  [m](auto& c) -> auto& { return c.synth.shapes[m].dim; }));
    }
    t.push_back(size_entry<Sz>("gradcheck_seeds", "seeds per gradient check",
                               [](auto& c) -> auto& { return c.gradcheck_seeds; }));
    t.push_back({{"seed", "master seed for data, initialization and batching"},
                 [](RunConfig& c, std::string_view k, std::string_view v) {
                   c.set_seed(parse_unsigned<std::uint64_t>(k, v));
                 },
                 [](const RunConfig& c) { return show(c.seed); }});
    return t;
  }();
  return table;
}

const Entry& find(std::string_view key) {
  for (const auto& e : entries())
    if (key == e.key.name) return e;
  fail(ErrorKind::Config, "unknown config key '" + std::string(key) + "'");
}

}  // namespace

std::span<const ConfigKey> config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& e : entries()) out.push_back(e.key);
    return out;
  }();
  return keys;
}

RunConfig RunConfig::from_preset(std::string_view name) {
  RunConfig c;
  c.preset = std::string(name);
  if (name == "desk") {
    c.model.model_dim = 64;
    c.model.num_heads = 4;
    c.model.ffn_dim = 128;
    c.model.proj_dim = 32;
    c.model.classifier_hidden = 64;
    c.train.batch_size = 16;
  } else if (name == "paper") {
    c.model.model_dim = 512;
    c.model.num_heads = 8;
    c.model.ffn_dim = 2048;
    c.model.proj_dim = 256;
    c.model.classifier_hidden = 512;
    c.train.batch_size = 128;
  } else {
    fail(ErrorKind::Config, "unknown preset '" + std::string(name) + "' (expected desk or paper)");
  }
  c.train.temperature = 0.2;
  return c;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  find(key).set(*this, key, value);
}

std::string RunConfig::get(std::string_view key) const { return find(key).get(*this); }

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
  synth.seed = s;
}

void RunConfig::validate() const {
  ModelConfig probe = model;
  for (auto& s : probe.inputs) s = {1, 1};
  probe.task = TaskKind::Regression;
  probe.validate();
  train.validate();
  synth.validate();
  require(gradcheck_seeds >= 1, ErrorKind::Config, "gradcheck_seeds must be >= 1");
}

ModelConfig RunConfig::model_for(const DatasetHeader& header) const {
  ModelConfig m = model;
  m.inputs = header.shapes;
  m.task = header.task;
  m.num_classes = header.num_classes;
  m.validate();
  return m;
}

}  // namespace mvcl
