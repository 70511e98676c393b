#include "mvcl/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "mvcl/checkpoint.hpp"
#include "mvcl/error.hpp"
#include "mvcl/pipeline.hpp"

namespace mvcl {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

const char* task_name(TaskKind t) {
  return t == TaskKind::Regression ? "regression" : "classification";
}

ordered_json metrics_json(const MetricReport& r) {
  ordered_json j;
  j["acc2"] = r.acc2;
  j["f1"] = r.f1;
  j["mae"] = r.mae;
  j["corr"] = r.corr ? ordered_json(*r.corr) : ordered_json(nullptr);
  return j;
}

fs::path checkpoint_path(const fs::path& out_dir, StageId stage) {
  switch (stage) {
    case StageId::Stage1:
      return out_dir / "stage1.mvck";
    case StageId::Stage2:
      return out_dir / "stage2.mvck";
    case StageId::Stage3:
      return out_dir / "stage3.mvck";
    default:
      return out_dir / "final.mvck";
  }
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for append");
  out << line << '\n';
  require(static_cast<bool>(out), ErrorKind::Io, "write failed: " + path.string());
}

// Runs `body`, prefixing any library error with the stage label.
template <class Body>
auto in_stage(const char* label, Body body) {
  try {
    return body();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(label) + ": " + e.what());
  }
}

TrainConfig train_config(const RunConfig& cfg, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.seed = seed;
  t.threads = worker_threads();
  return t;
}

}  // namespace

std::size_t worker_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MVCL_THREADS"); env && *env) {
    char* end = nullptr;
    const unsigned long long cap = std::strtoull(env, &end, 10);
    require(*end == '\0' && cap >= 1, ErrorKind::Config,
            std::string("MVCL_THREADS must be a positive integer, got '") + env + "'");
    n = std::min<std::size_t>(n, cap);
  }
  return n;
}

DatasetSplits load_splits(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::Io,
          "dataset path " + dir.string() + " is not a directory");
  DatasetSplits s{read_dataset(dir / kSplitFiles[0]), read_dataset(dir / kSplitFiles[1]),
                  read_dataset(dir / kSplitFiles[2])};
  for (const Dataset* d : {&s.val, &s.test}) {
    require(d->header.shapes == s.train.header.shapes && d->header.task == s.train.header.task &&
                d->header.num_classes == s.train.header.num_classes &&
                d->header.multi_task == s.train.header.multi_task,
            ErrorKind::Shape, "dataset splits in " + dir.string() + " disagree on their headers");
  }
  return s;
}

std::string cmd_synth(const RunConfig& cfg, const fs::path& out_dir) {
  cfg.synth.validate();
  const DatasetSplits splits = generate_synthetic(cfg.synth);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec, ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  write_dataset(out_dir / kSplitFiles[0], splits.train);
  write_dataset(out_dir / kSplitFiles[1], splits.val);
  write_dataset(out_dir / kSplitFiles[2], splits.test);

  const DatasetHeader& h = splits.train.header;
  std::ostringstream os;
  os << "wrote " << out_dir.string() << " (seed " << cfg.synth.seed << ")\n"
     << "  task " << task_name(h.task) << ", classes " << cfg.synth.classes << ", multi_task "
     << (h.multi_task ? "yes" : "no") << "\n"
     << "  samples train " << splits.train.records.size() << ", val " << splits.val.records.size()
     << ", test " << splits.test.records.size() << "\n";
  for (auto m : kModalities) {
    const auto& s = h.shapes[index_of(m)];
    os << "  " << modality_letter(m) << ": length " << s.length << ", dim " << s.dim << "\n";
  }
  return os.str();
}

std::string cmd_train(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& out_dir,
                      std::string_view stage) {
  require(stage == "1" || stage == "2" || stage == "3" || stage == "cls" || stage == "all",
          ErrorKind::Config, "--stage must be one of 1, 2, 3, cls, all");
  cfg.validate();
  const DatasetSplits data = load_splits(dataset_dir);
  const ModelConfig model_cfg = cfg.model_for(data.train.header);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec, ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());

  Model model(model_cfg, cfg.seed);
  std::uint64_t seed = cfg.seed;
  StageId resume = StageId::Init;
  if (stage == "2") resume = StageId::Stage1;
  if (stage == "3") resume = StageId::Stage2;
  if (stage == "cls") resume = StageId::Stage3;
  if (resume != StageId::Init) {
    in_stage((std::string("stage ") + std::string(stage)).c_str(), [&] {
      const Checkpoint ckpt = load_checkpoint(checkpoint_path(out_dir, resume));
      require(ckpt.stage == resume, ErrorKind::MissingCheckpoint,
              checkpoint_path(out_dir, resume).string() + " holds stage " + stage_name(ckpt.stage) +
                  ", expected stage " + stage_name(resume));
      restore(model, ckpt);
      seed = ckpt.rng.seed;
    });
  }

  Pipeline pipeline(model, train_config(cfg, seed), data);
  pipeline.mark_completed(resume);

  ordered_json line;
  line["command"] = "train";
  line["seed"] = seed;
  line["stage"] = std::string(stage);
  ordered_json losses = ordered_json::object();
  std::size_t skipped = 0;
  const auto record = [&](const StageReport& r) {
    losses[r.name] =
        r.loss_curve.empty() ? ordered_json(nullptr) : ordered_json(r.loss_curve.back());
    skipped += r.skipped_batches;
  };
  const auto save = [&](StageId id) {
    save_checkpoint(checkpoint_path(out_dir, id), capture(model, id, pipeline.rng_state()));
  };

  const bool all = stage == "all";
  if (all || stage == "1") {
    for (const auto& r : in_stage("stage 1", [&] { return pipeline.run_stage1(); })) record(r);
    save(StageId::Stage1);
  }
  if (all || stage == "2") {
    record(in_stage("stage 2", [&] { return pipeline.run_stage2(); }));
    save(StageId::Stage2);
  }
  if (all || stage == "3") {
    record(in_stage("stage 3", [&] { return pipeline.run_stage3(); }));
    save(StageId::Stage3);
  }
  if (all || stage == "cls") {
    const auto reports = in_stage("classifier", [&] { return pipeline.run_classifier_phase(); });
    for (const auto& r : reports) record(r);
    save(StageId::Classifier);
    line["split"] = "test";
    const MetricReport test = pipeline.evaluate(data.test);
    line.update(metrics_json(test));
    line["mae_untrained"] = reports.front().values.at("mae_untrained");
    ordered_json unimodal;
    for (auto m : kModalities)
      unimodal[std::string(1, modality_letter(m))] =
          metrics_json(pipeline.evaluate_unimodal(m, data.test));
    line["unimodal"] = unimodal;
  }
  line["final_loss"] = losses;
  line["skipped_batches"] = skipped;

  const std::string text = line.dump();
  append_line(out_dir / "report.jsonl", text);
  return text;
}

std::string cmd_eval(const RunConfig& cfg, const fs::path& dataset_dir,
                     const fs::path& checkpoint) {
  cfg.validate();
  const DatasetSplits data = load_splits(dataset_dir);
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  Model model(cfg.model_for(data.train.header), ckpt.rng.seed);
  restore(model, ckpt);
  Pipeline pipeline(model, train_config(cfg, ckpt.rng.seed), data);
  pipeline.mark_completed(ckpt.stage);

  ordered_json line;
  line["command"] = "eval";
  line["seed"] = ckpt.rng.seed;
  line["stage"] = stage_name(ckpt.stage);
  line["split"] = "test";
  line.update(metrics_json(pipeline.evaluate(data.test)));
  return line.dump();
}

GradcheckTable cmd_gradcheck(const RunConfig& cfg, std::string_view fault) {
  return run_gradcheck_suite(cfg.gradcheck_seeds, cfg.seed, fault);
}

}  // namespace mvcl
