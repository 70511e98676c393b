#include "mvcl/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "mvcl/error.hpp"
#include "mvcl/rng.hpp"

namespace mvcl {

namespace {

constexpr char kMagic[6] = {'M', 'V', 'C', 'L', '1', '\n'};

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  bool has(std::size_t n) const { return in_.size() - pos_ >= n; }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::uint8_t u8() { return in_[pos_++]; }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::size_t record_bytes(const DatasetHeader& h) {
  std::size_t n = (h.multi_task ? 4 : 1) * 4;
  for (const auto& s : h.shapes) n += static_cast<std::size_t>(s.length) * s.dim * 4;
  return n;
}

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

void DatasetHeader::validate() const {
  require(count >= 1, ErrorKind::Shape, "dataset must contain at least one sample");
  for (const auto& s : shapes) {
    require(s.length >= 1 && s.dim >= 1, ErrorKind::Shape,
            "modality sequence length and dimension must be >= 1");
  }
  if (task == TaskKind::Classification) {
    require(num_classes >= 2, ErrorKind::Shape, "classification needs at least 2 classes");
  } else {
    require(num_classes == 0, ErrorKind::Shape, "regression datasets carry class count 0");
  }
}

bool bitwise_equal(const Dataset& a, const Dataset& b) {
  if (!(a.header == b.header) || a.records.size() != b.records.size()) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& ra = a.records[i];
    const auto& rb = b.records[i];
    if (std::bit_cast<std::uint64_t>(ra.label) != std::bit_cast<std::uint64_t>(rb.label))
      return false;
    if (ra.modality_labels.has_value() != rb.modality_labels.has_value()) return false;
    if (ra.modality_labels) {
      for (std::size_t m = 0; m < 3; ++m) {
        if (std::bit_cast<std::uint64_t>((*ra.modality_labels)[m]) !=
            std::bit_cast<std::uint64_t>((*rb.modality_labels)[m]))
          return false;
      }
    }
    for (std::size_t m = 0; m < 3; ++m)
      if (!bitwise_equal(ra.features[m], rb.features[m])) return false;
  }
  return true;
}

void SynthConfig::validate() const {
  require(classes >= 2, ErrorKind::Config, "synthetic data needs at least 2 classes");
  require(train >= 1 && val >= 1 && test >= 1, ErrorKind::Config,
          "every synthetic split needs at least one sample");
  for (const auto& s : shapes) {
    require(s.length >= 1 && s.dim >= 1, ErrorKind::Config,
            "synthetic sequence length and dimension must be >= 1");
  }
  require(consistency >= 0.0 && consistency <= 1.0, ErrorKind::Config,
          "consistency probability must lie in [0, 1]");
  require(noise >= 0.0, ErrorKind::Config, "noise scale must be >= 0");
  require(mean_scale >= 0.0, ErrorKind::Config, "mean scale must be >= 0");
}

double class_score(std::int64_t c, std::uint32_t num_classes) {
  if (num_classes < 2) return 0.0;
  return -1.0 + 2.0 * static_cast<double>(c) / static_cast<double>(num_classes - 1);
}

DatasetSplits generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);

  // means[c][m] is a d_m vector shared by every sample of latent class c.
  Rng mean_rng = root.split(1);
  std::vector<std::array<std::vector<double>, 3>> means(cfg.classes);
  for (auto& per_class : means) {
    for (std::size_t m = 0; m < 3; ++m) {
      per_class[m].resize(cfg.shapes[m].dim);
      for (auto& v : per_class[m]) v = cfg.mean_scale * mean_rng.normal();
    }
  }

  DatasetHeader header;
  header.shapes = cfg.shapes;
  header.task = cfg.task;
  header.num_classes = cfg.task == TaskKind::Classification ? cfg.classes : 0;
  header.multi_task = cfg.multi_task;

  const auto label_value = [&](std::int64_t c) {
    return cfg.task == TaskKind::Classification ? static_cast<double>(c)
                                                : round_f32(class_score(c, cfg.classes));
  };

  const auto make_split = [&](std::size_t count, std::uint64_t stream) {
    Dataset ds;
    ds.header = header;
    ds.header.count = static_cast<std::uint32_t>(count);
    Rng rng = root.split(stream);
    ds.records.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      SampleRecord rec;
      const auto y = static_cast<std::int64_t>(rng.below(cfg.classes));
      std::array<double, 3> latent_labels{};
      for (std::size_t m = 0; m < 3; ++m) {
        std::int64_t latent = y;
        if (rng.uniform() >= cfg.consistency) {
          latent = (y + 1 + static_cast<std::int64_t>(rng.below(cfg.classes - 1))) %
                   static_cast<std::int64_t>(cfg.classes);
        }
        latent_labels[m] = label_value(latent);
        const auto& mu = means[static_cast<std::size_t>(latent)][m];
        Tensor x({cfg.shapes[m].length, cfg.shapes[m].dim});
        for (std::size_t l = 0; l < cfg.shapes[m].length; ++l)
          for (std::size_t d = 0; d < cfg.shapes[m].dim; ++d)
            x(l, d) = round_f32(mu[d] + cfg.noise * rng.normal());
        rec.features[m] = std::move(x);
      }
      if (cfg.multi_task) rec.modality_labels = latent_labels;
      rec.label = label_value(y);
      ds.records.push_back(std::move(rec));
    }
    return ds;
  };

  return DatasetSplits{make_split(cfg.train, 2), make_split(cfg.val, 3), make_split(cfg.test, 4)};
}

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  const DatasetHeader& h = ds.header;
  h.validate();
  require(ds.records.size() == h.count, ErrorKind::CountMismatch,
          "header declares " + std::to_string(h.count) + " samples but " +
              std::to_string(ds.records.size()) + " were given");

  ByteWriter w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(h.count);
  for (const auto& s : h.shapes) {
    w.u32(s.length);
    w.u32(s.dim);
  }
  w.u8(static_cast<std::uint8_t>(h.task));
  w.u32(h.num_classes);
  w.u8(h.multi_task ? 1 : 0);

  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const SampleRecord& r = ds.records[i];
    require(r.modality_labels.has_value() == h.multi_task, ErrorKind::Shape,
            "record " + std::to_string(i) + ": per-modality labels must be present iff multi-task");
    if (h.multi_task)
      for (double y : *r.modality_labels) w.f32(y);
    w.f32(r.label);
    for (std::size_t m = 0; m < 3; ++m) {
      const Tensor& x = r.features[m];
      require(x.rank() == 2 && x.rows() == h.shapes[m].length && x.cols() == h.shapes[m].dim,
              ErrorKind::Shape,
              "record " + std::to_string(i) + ": feature shape " + shape_string(x.shape()) +
                  " does not match header");
      for (double v : x.data()) w.f32(v);
    }
  }
  return w.take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  const std::size_t magic_seen = std::min(bytes.size(), sizeof kMagic);
  require(std::memcmp(bytes.data(), kMagic, magic_seen) == 0, ErrorKind::BadMagic,
          "not an MVCL1 feature file (bad magic)");
  require(bytes.size() >= sizeof kMagic, ErrorKind::Truncated, "truncated file: magic");

  ByteReader r(bytes.subspan(sizeof kMagic));
  constexpr std::size_t kHeaderBytes = 4 + 6 * 4 + 1 + 4 + 1;
  require(r.has(kHeaderBytes), ErrorKind::Truncated, "truncated file: header");

  Dataset ds;
  DatasetHeader& h = ds.header;
  h.count = r.u32();
  for (auto& s : h.shapes) {
    s.length = r.u32();
    s.dim = r.u32();
  }
  const std::uint8_t task = r.u8();
  require(task <= 1, ErrorKind::Shape, "unknown task kind " + std::to_string(task));
  h.task = static_cast<TaskKind>(task);
  h.num_classes = r.u32();
  const std::uint8_t multi = r.u8();
  require(multi <= 1, ErrorKind::Shape, "multi-task flag must be 0 or 1");
  h.multi_task = multi == 1;
  h.validate();

  const std::size_t per_record = record_bytes(h);
  ds.records.reserve(std::min<std::size_t>(h.count, r.remaining() / per_record + 1));
  for (std::size_t i = 0; i < h.count; ++i) {
    require(r.has(per_record), ErrorKind::Truncated,
            "truncated file: record " + std::to_string(i) + " of " + std::to_string(h.count) +
                " is incomplete");
    SampleRecord rec;
    if (h.multi_task) {
      std::array<double, 3> ys{};
      for (auto& y : ys) y = r.f32();
      rec.modality_labels = ys;
    }
    rec.label = r.f32();
    for (std::size_t m = 0; m < 3; ++m) {
      Tensor x({h.shapes[m].length, h.shapes[m].dim});
      for (auto& v : x.data()) v = r.f32();
      rec.features[m] = std::move(x);
    }
    ds.records.push_back(std::move(rec));
  }
  require(r.remaining() == 0, ErrorKind::CountMismatch,
          std::to_string(r.remaining()) + " unexpected trailing bytes after " +
              std::to_string(h.count) + " records");
  return ds;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  require(!in.bad(), ErrorKind::Io, "read error on " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  out.flush();
  require(static_cast<bool>(out), ErrorKind::Io, "write error on " + path.string());
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  const auto bytes = encode_dataset(ds);
  write_file_bytes(path, bytes);
}

Dataset read_dataset(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_dataset(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::vector<std::vector<std::size_t>> make_batch_indices(std::size_t count, std::size_t batch_size,
                                                         std::uint64_t seed, BatchMode mode) {
  require(batch_size >= 1, ErrorKind::Config, "batch size must be >= 1");
  require(mode != BatchMode::Contrastive || batch_size >= 2, ErrorKind::Config,
          "contrastive stages need batch size >= 2");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t begin = 0; begin < count; begin += batch_size) {
    const std::size_t end = std::min(count, begin + batch_size);
    if (end - begin < batch_size && mode == BatchMode::Contrastive) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Batch stack_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch b;
  b.indices.assign(indices.begin(), indices.end());
  for (std::size_t m = 0; m < 3; ++m) {
    const auto& shape = ds.header.shapes[m];
    std::vector<double> data;
    data.reserve(indices.size() * shape.length * shape.dim);
    for (auto i : indices) {
      const auto& x = ds.records.at(i).features[m].data();
      data.insert(data.end(), x.begin(), x.end());
    }
    b.features[m] = Tensor::matrix(indices.size() * shape.length, shape.dim, std::move(data));
  }
  for (auto i : indices) {
    const SampleRecord& r = ds.records[i];
    b.labels.push_back(r.label);
    if (r.modality_labels)
      for (std::size_t m = 0; m < 3; ++m) b.modality_labels[m].push_back((*r.modality_labels)[m]);
  }
  return b;
}

std::vector<Batch> make_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                BatchMode mode) {
  std::vector<Batch> out;
  for (const auto& idx : make_batch_indices(ds.records.size(), batch_size, seed, mode))
    out.push_back(stack_batch(ds, idx));
  return out;
}

}  // namespace mvcl
