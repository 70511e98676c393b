#include "mvcl/model.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <memory>
#include <sstream>

#include "mvcl/error.hpp"

namespace mvcl {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    require(ctx_ && EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) == 1,
            ErrorKind::InvalidArgument, "SHA-256 initialisation failed");
  }
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
  Fingerprint finish() {
    Fingerprint out{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), out.data(), &len);
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

bool in_group(const std::string& name, std::string_view group) {
  return name.size() > group.size() && name.compare(0, group.size(), group) == 0 &&
         name[group.size()] == '.';
}

}  // namespace

void ModelConfig::validate() const {
  require(model_dim >= 1 && num_heads >= 1 && ffn_dim >= 1 && proj_dim >= 1 && cross_blocks >= 1 &&
              classifier_hidden >= 1,
          ErrorKind::Config, "model dimensions must be >= 1");
  if (model_dim % num_heads != 0)
    fail(ErrorKind::Config, "model_dim " + std::to_string(model_dim) +
                                " not divisible by num_heads " + std::to_string(num_heads));
  for (const auto& s : inputs) {
    require(s.length >= 1 && s.dim >= 1, ErrorKind::Config, "input shapes must be >= 1");
  }
  if (task == TaskKind::Classification) {
    require(num_classes >= 2, ErrorKind::Config, "classification needs at least two classes");
  }
}

EncoderConfig ModelConfig::encoder_config(Modality m) const {
  const auto& s = inputs[index_of(m)];
  return EncoderConfig{s.dim, model_dim, num_layers, num_heads, ffn_dim, s.length};
}

CrossModalConfig ModelConfig::cross_config() const {
  return CrossModalConfig{model_dim, num_heads, ffn_dim, cross_blocks, type_embeddings};
}

std::size_t ModelConfig::head_out_dim() const {
  return task == TaskKind::Classification ? num_classes : 1;
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "mvcl-model/1"
     << ";model_dim=" << model_dim << ";num_layers=" << num_layers << ";num_heads=" << num_heads
     << ";ffn_dim=" << ffn_dim << ";proj_dim=" << proj_dim << ";cross_blocks=" << cross_blocks
     << ";type_embeddings=" << type_embeddings << ";classifier_hidden=" << classifier_hidden;
  for (std::size_t m = 0; m < 3; ++m) {
    os << ";input_" << modality_letter(kModalities[m]) << "=" << inputs[m].length << "x"
       << inputs[m].dim;
  }
  os << ";task=" << static_cast<int>(task) << ";num_classes=" << num_classes;
  return os.str();
}

Fingerprint ModelConfig::fingerprint() const {
  const std::string text = canonical();
  Sha256 h;
  h.update(text.data(), text.size());
  return h.finish();
}

std::string hex(const Fingerprint& fp) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (auto b : fp) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 15]);
  }
  return out;
}

namespace groups {
std::string encoder(Modality m) { return std::string("encoder.") + modality_letter(m); }
std::string unimodal_proj(Modality m) { return std::string("proj1.") + modality_letter(m); }
std::string view_proj(Modality m) { return std::string("proj2.") + modality_letter(m); }
std::string unimodal_head(Modality m) { return std::string("head.") + modality_letter(m); }

std::vector<std::string> all() {
  std::vector<std::string> out;
  for (auto m : kModalities) out.push_back(encoder(m));
  for (auto m : kModalities) out.push_back(unimodal_proj(m));
  out.emplace_back(kCrossModal);
  for (auto m : kModalities) out.push_back(view_proj(m));
  out.emplace_back(kFusion);
  out.emplace_back(kFusedProj);
  for (auto m : kModalities) out.push_back(unimodal_head(m));
  out.emplace_back(kMultimodalHead);
  return out;
}
}  // namespace groups

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  // Each component draws from its own stream so adding one never shifts
  // another's initialization.
  const Rng root(seed);
  for (auto m : kModalities) {
    const std::size_t i = index_of(m);
    Rng r_enc = root.split(10 + i);
    encoders_[i] = Encoder(cfg.encoder_config(m), r_enc);
    Rng r_p1 = root.split(20 + i);
    unimodal_proj_[i] = ProjectionHead(cfg.model_dim, cfg.proj_dim, r_p1);
    Rng r_p2 = root.split(30 + i);
    view_proj_[i] = ProjectionHead(cfg.model_dim, cfg.proj_dim, r_p2);
    Rng r_head = root.split(40 + i);
    unimodal_heads_[i] =
        ClassifierHead(cfg.model_dim, cfg.classifier_hidden, cfg.head_out_dim(), r_head);
  }
  Rng r_cross = root.split(50);
  refiner_ = CrossModalRefiner(cfg.cross_config(), r_cross);
  Rng r_fusion = root.split(51);
  fusion_ = Fusion(cfg.cross_config(), r_fusion);
  Rng r_p3 = root.split(52);
  fused_proj_ = ProjectionHead(cfg.model_dim, cfg.proj_dim, r_p3);
  Rng r_mm = root.split(53);
  mm_head_ = ClassifierHead(cfg.model_dim, cfg.classifier_hidden, cfg.head_out_dim(), r_mm);
}

void Model::collect(ParamList& out) const {
  for (auto m : kModalities) encoders_[index_of(m)].collect(out, groups::encoder(m));
  for (auto m : kModalities) unimodal_proj_[index_of(m)].collect(out, groups::unimodal_proj(m));
  refiner_.collect(out, std::string(groups::kCrossModal));
  for (auto m : kModalities) view_proj_[index_of(m)].collect(out, groups::view_proj(m));
  fusion_.collect(out, std::string(groups::kFusion));
  fused_proj_.collect(out, std::string(groups::kFusedProj));
  for (auto m : kModalities) unimodal_heads_[index_of(m)].collect(out, groups::unimodal_head(m));
  mm_head_.collect(out, std::string(groups::kMultimodalHead));
}

ParamList Model::params() const {
  ParamList out;
  collect(out);
  return out;
}

ParamList Model::group(std::string_view name) const {
  ParamList out;
  for (auto& p : params())
    if (in_group(p.name, name)) out.push_back(p);
  if (out.empty())
    fail(ErrorKind::InvalidArgument, "unknown parameter group '" + std::string(name) + "'");
  return out;
}

void Model::set_trainable(std::span<const std::string> names) {
  for (auto& p : params()) {
    const bool on = std::any_of(names.begin(), names.end(),
                                [&](const std::string& g) { return in_group(p.name, g); });
    p.var.set_requires_grad(on);
    p.var.zero_grad();
  }
}

HiddenRepresentation Model::encode(Modality m, const Tensor& x, std::size_t batch) const {
  return encoders_[index_of(m)].encode(constant(x), batch);
}

Var Model::project_unimodal(Modality m, const Var& pooled) const {
  return unimodal_proj_[index_of(m)].forward(pooled);
}

RefinedSet Model::refine(const HiddenRepresentation& t, const HiddenRepresentation& a,
                         const HiddenRepresentation& v) const {
  return refiner_.refine(t, a, v);
}

Var Model::project_view(Modality target, const Var& pooled) const {
  return view_proj_[index_of(target)].forward(pooled);
}

Var Model::unimodal_head(Modality m, const Var& pooled) const {
  return unimodal_heads_[index_of(m)].forward(pooled);
}

Var Model::predict_multimodal(const std::array<Tensor, 3>& features, std::size_t batch) const {
  const auto h_t = encode(Modality::Text, features[0], batch);
  const auto h_a = encode(Modality::Acoustic, features[1], batch);
  const auto h_v = encode(Modality::Vision, features[2], batch);
  return multimodal_head(fuse(refine(h_t, h_a, h_v)));
}

Fingerprint hash_params(const ParamList& params) {
  Sha256 h;
  for (const auto& p : params) {
    h.update(p.name.data(), p.name.size());
    for (auto d : p.var.shape()) {
      const std::uint64_t dim = d;
      h.update(&dim, sizeof dim);
    }
    h.update(p.var.value().ptr(), p.var.value().numel() * sizeof(double));
  }
  return h.finish();
}

}  // namespace mvcl
