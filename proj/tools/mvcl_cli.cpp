// Command-line front end. Talks to the library only through mvcl.h.
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mvcl/mvcl.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct ConfigHandle {
  mvcl_config* ptr = nullptr;
  ~ConfigHandle() { mvcl_config_destroy(ptr); }
};

struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { mvcl_string_free(ptr); }
};

int report_failure(const char* command, mvcl_status status) {
  std::cerr << "mvcl " << command << ": " << mvcl_status_name(status) << ": " << mvcl_last_error()
            << "\n";
  return status == MVCL_ERR_CONFIG ? kExitUsage : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view contrastive learning for multimodal sentiment analysis"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI file of config keys; flags take precedence");
  app.allow_config_extras(false);

  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
  app.add_option("--preset", preset, "model preset")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", seed, "master seed");

  std::map<std::string, std::optional<std::string>> overrides;
  for (std::size_t i = 0; i < mvcl_config_key_count(); ++i) {
    const std::string key = mvcl_config_key_name(i);
    if (key == "seed") continue;
    app.add_option("--" + key, overrides[key], mvcl_config_key_help(i))
        ->group("Config keys")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }

  std::string out_dir;
  std::string dataset;
  std::string stage = "all";
  std::string checkpoint;
  std::string fault;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset directory");
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "run training stages");
  train->add_option("--dataset", dataset, "dataset directory")
      ->required()
      ->check(CLI::ExistingPath);
  train->add_option("--out", out_dir, "checkpoint and report directory")->required();
  train->add_option("--stage", stage, "stage to run")
      ->check(CLI::IsMember({"1", "2", "3", "cls", "all"}));

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval->add_option("--dataset", dataset, "dataset directory")->required()->check(CLI::ExistingPath);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file (default OUT/final.mvck)");
  eval->add_option("--out", out_dir, "training output directory");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  grad->add_option("--inject-fault", fault, "test hook: corrupt the named check")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  ConfigHandle cfg;
  if (mvcl_status s = mvcl_config_create(preset.c_str(), &cfg.ptr); s != MVCL_OK)
    return report_failure("config", s);
  for (const auto& [key, value] : overrides) {
    if (!value) continue;
    if (mvcl_status s = mvcl_config_set(cfg.ptr, key.c_str(), value->c_str()); s != MVCL_OK)
      return report_failure("config", s);
  }
  if (seed) {
    const std::string text = std::to_string(*seed);
    if (mvcl_status s = mvcl_config_set(cfg.ptr, "seed", text.c_str()); s != MVCL_OK)
      return report_failure("config", s);
  }
  if (mvcl_status s = mvcl_config_validate(cfg.ptr); s != MVCL_OK)
    return report_failure("config", s);

  OwnedString text;
  if (*synth) {
    if (mvcl_status s = mvcl_synth(cfg.ptr, out_dir.c_str(), &text.ptr); s != MVCL_OK)
      return report_failure("synth", s);
    std::cout << text.ptr;
    return kExitOk;
  }
  if (*train) {
    if (mvcl_status s =
            mvcl_train(cfg.ptr, dataset.c_str(), out_dir.c_str(), stage.c_str(), &text.ptr);
        s != MVCL_OK)
      return report_failure("train", s);
    std::cout << text.ptr << "\n";
    return kExitOk;
  }
  if (*eval) {
    if (checkpoint.empty()) {
      if (out_dir.empty()) {
        std::cerr << "mvcl eval: pass --checkpoint or --out\n";
        return kExitUsage;
      }
      checkpoint = out_dir + "/final.mvck";
    }
    if (mvcl_status s = mvcl_eval(cfg.ptr, dataset.c_str(), checkpoint.c_str(), &text.ptr);
        s != MVCL_OK)
      return report_failure("eval", s);
    std::cout << text.ptr << "\n";
    return kExitOk;
  }
  int passed = 0;
  if (mvcl_status s =
          mvcl_gradcheck(cfg.ptr, fault.empty() ? nullptr : fault.c_str(), &passed, &text.ptr);
      s != MVCL_OK)
    return report_failure("gradcheck", s);
  std::cout << text.ptr;
  return passed ? kExitOk : kExitFailure;
}
