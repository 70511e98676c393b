#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "mvcl/commands.hpp"
#include "mvcl/config.hpp"
#include "mvcl/error.hpp"
#include "mvcl/mvcl.h"

struct mvcl_config {
  mvcl::RunConfig cfg;
};

struct mvcl_dataset {
  mvcl::Dataset data;
};

namespace {

thread_local std::string g_last_error;

mvcl_status status_of(mvcl::ErrorKind kind) {
  using mvcl::ErrorKind;
  switch (kind) {
    case ErrorKind::InvalidArgument:
      return MVCL_ERR_INVALID_ARGUMENT;
    case ErrorKind::Config:
      return MVCL_ERR_CONFIG;
    case ErrorKind::Shape:
      return MVCL_ERR_SHAPE;
    case ErrorKind::Numeric:
      return MVCL_ERR_NUMERIC;
    case ErrorKind::DegenerateInput:
      return MVCL_ERR_DEGENERATE_INPUT;
    case ErrorKind::BatchTooSmall:
      return MVCL_ERR_BATCH_TOO_SMALL;
    case ErrorKind::DegenerateBatch:
      return MVCL_ERR_DEGENERATE_BATCH;
    case ErrorKind::Label:
      return MVCL_ERR_LABEL;
    case ErrorKind::Io:
      return MVCL_ERR_IO;
    case ErrorKind::BadMagic:
      return MVCL_ERR_BAD_MAGIC;
    case ErrorKind::Truncated:
      return MVCL_ERR_TRUNCATED;
    case ErrorKind::CountMismatch:
      return MVCL_ERR_COUNT_MISMATCH;
    case ErrorKind::Version:
      return MVCL_ERR_VERSION;
    case ErrorKind::Fingerprint:
      return MVCL_ERR_FINGERPRINT;
    case ErrorKind::Parse:
      return MVCL_ERR_PARSE;
    case ErrorKind::MissingCheckpoint:
      return MVCL_ERR_MISSING_CHECKPOINT;
  }
  return MVCL_ERR_INTERNAL;
}

template <class Body>
mvcl_status guarded(Body body) {
  try {
    body();
    g_last_error.clear();
    return MVCL_OK;
  } catch (const mvcl::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown failure";
  }
  return MVCL_ERR_INTERNAL;
}

char* duplicate(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void need(const void* p, const char* what) {
  mvcl::require(p != nullptr, mvcl::ErrorKind::InvalidArgument, std::string(what) + " is NULL");
}

}  // namespace

extern "C" {

const char* mvcl_last_error(void) { return g_last_error.c_str(); }

const char* mvcl_status_name(mvcl_status status) {
  switch (status) {
    case MVCL_OK:
      return "ok";
    case MVCL_ERR_INTERNAL:
      return "internal";
    default:
      break;
  }
  const int k = static_cast<int>(status) - 1;
  if (k < 0 || k > static_cast<int>(mvcl::ErrorKind::MissingCheckpoint)) return "unknown";
  return mvcl::to_string(static_cast<mvcl::ErrorKind>(k));
}

void mvcl_string_free(char* s) { std::free(s); }

mvcl_status mvcl_config_create(const char* preset, mvcl_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    auto cfg = std::make_unique<mvcl_config>();
    cfg->cfg = mvcl::RunConfig::from_preset(preset ? preset : "desk");
    *out = cfg.release();
  });
}

void mvcl_config_destroy(mvcl_config* cfg) { delete cfg; }

mvcl_status mvcl_config_set(mvcl_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    cfg->cfg.set(key, value);
  });
}

mvcl_status mvcl_config_get(const mvcl_config* cfg, const char* key, char** out) {
  if (out) *out = nullptr;
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(out, "out");
    *out = duplicate(cfg->cfg.get(key));
  });
}

mvcl_status mvcl_config_validate(const mvcl_config* cfg) {
  return guarded([&] {
    need(cfg, "config");
    cfg->cfg.validate();
  });
}

size_t mvcl_config_key_count(void) { return mvcl::config_keys().size(); }

const char* mvcl_config_key_name(size_t index) {
  const auto keys = mvcl::config_keys();
  return index < keys.size() ? keys[index].name : nullptr;
}

const char* mvcl_config_key_help(size_t index) {
  const auto keys = mvcl::config_keys();
  return index < keys.size() ? keys[index].help : nullptr;
}

mvcl_status mvcl_synth(const mvcl_config* cfg, const char* out_dir, char** summary) {
  if (summary) *summary = nullptr;
  return guarded([&] {
    need(cfg, "config");
    need(out_dir, "out_dir");
    const std::string text = mvcl::cmd_synth(cfg->cfg, out_dir);
    if (summary) *summary = duplicate(text);
  });
}

mvcl_status mvcl_train(const mvcl_config* cfg, const char* dataset_dir, const char* out_dir,
                       const char* stage, char** report) {
  if (report) *report = nullptr;
  return guarded([&] {
    need(cfg, "config");
    need(dataset_dir, "dataset_dir");
    need(out_dir, "out_dir");
    const std::string text = mvcl::cmd_train(cfg->cfg, dataset_dir, out_dir, stage ? stage : "all");
    if (report) *report = duplicate(text);
  });
}

mvcl_status mvcl_eval(const mvcl_config* cfg, const char* dataset_dir, const char* checkpoint,
                      char** report) {
  if (report) *report = nullptr;
  return guarded([&] {
    need(cfg, "config");
    need(dataset_dir, "dataset_dir");
    need(checkpoint, "checkpoint");
    const std::string text = mvcl::cmd_eval(cfg->cfg, dataset_dir, checkpoint);
    if (report) *report = duplicate(text);
  });
}

mvcl_status mvcl_gradcheck(const mvcl_config* cfg, const char* fault, int* passed, char** table) {
  if (table) *table = nullptr;
  return guarded([&] {
    need(cfg, "config");
    const mvcl::GradcheckTable t = mvcl::cmd_gradcheck(cfg->cfg, fault ? fault : "");
    if (passed) *passed = t.passed() ? 1 : 0;
    if (table) *table = duplicate(t.render());
  });
}

mvcl_status mvcl_dataset_open(const char* path, mvcl_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto ds = std::make_unique<mvcl_dataset>();
    ds->data = mvcl::read_dataset(path);
    *out = ds.release();
  });
}

void mvcl_dataset_close(mvcl_dataset* ds) { delete ds; }

mvcl_status mvcl_dataset_info_get(const mvcl_dataset* ds, mvcl_dataset_info* out) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    const auto& h = ds->data.header;
    out->count = h.count;
    for (std::size_t m = 0; m < 3; ++m) {
      out->lengths[m] = h.shapes[m].length;
      out->dims[m] = h.shapes[m].dim;
    }
    out->is_regression = h.task == mvcl::TaskKind::Regression ? 1 : 0;
    out->num_classes = h.num_classes;
    out->multi_task = h.multi_task ? 1 : 0;
  });
}

}  // extern "C"
