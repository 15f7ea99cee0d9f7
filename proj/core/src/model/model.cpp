#include "adma/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "adma/error.hpp"

namespace adma::model {

namespace ops = numerics;

namespace {

constexpr double kTimeScale = 100.0;
constexpr std::uint32_t kModelFormatVersion = 1;

std::string idx(const char* prefix, std::size_t i, const char* leaf) {
  return std::string(prefix) + "." + std::to_string(i) + "." + leaf;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) { return ops::linear(x, w, b); }

/// layer_norm(x) * gain + shift, where gain already holds 1 + scale.
Tensor modulate(const Tensor& x, const Tensor& shift, const Tensor& gain) {
  return ops::add(ops::mul(ops::layer_norm_rows(x), gain), shift);
}

}  // namespace

void ModelConfig::validate() const {
  if (num_layers == 0 || width == 0 || heads == 0 || mlp_ratio == 0 || vocab == 0 || feature_dim == 0) {
    throw ConfigError("model: sizes must be positive");
  }
  if (width % heads != 0) throw ConfigError("model: width must be divisible by heads");
  if (width % 2 != 0) throw ConfigError("model: width must be even");
  if (text_conv_kernel % 2 == 0) throw ConfigError("model: text_conv_kernel must be odd");
  if (text_tap < 1 || text_tap > num_layers) throw ConfigError("model: text_tap must lie in [1, num_layers]");
  if (speech_tap < 1 || speech_tap > num_layers) throw ConfigError("model: speech_tap must lie in [1, num_layers]");
  if (!(init_std > 0.0)) throw ConfigError("model: init_std must be positive");
}

ModelConfig model_config_from(const io::Config& cfg, ModelConfig base) {
  auto sz = [&](const char* key, std::size_t v) {
    const auto r = cfg.get_int(key, static_cast<std::int64_t>(v));
    if (r < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(r);
  };
  base.num_layers = sz("model.num_layers", base.num_layers);
  base.width = sz("model.width", base.width);
  base.heads = sz("model.heads", base.heads);
  base.text_refine_layers = sz("model.text_refine_layers", base.text_refine_layers);
  base.text_conv_kernel = sz("model.text_conv_kernel", base.text_conv_kernel);
  base.mlp_ratio = sz("model.mlp_ratio", base.mlp_ratio);
  base.vocab = sz("model.vocab", base.vocab);
  base.feature_dim = sz("model.feature_dim", base.feature_dim);
  base.text_tap = sz("model.text_tap", base.text_tap);
  base.speech_tap = sz("model.speech_tap", base.speech_tap);
  base.init_std = cfg.get_double("model.init_std", base.init_std);
  base.validate();
  return base;
}

void write_model_config(const ModelConfig& c, io::Config& out) {
  out.set("model.num_layers", std::to_string(c.num_layers));
  out.set("model.width", std::to_string(c.width));
  out.set("model.heads", std::to_string(c.heads));
  out.set("model.text_refine_layers", std::to_string(c.text_refine_layers));
  out.set("model.text_conv_kernel", std::to_string(c.text_conv_kernel));
  out.set("model.mlp_ratio", std::to_string(c.mlp_ratio));
  out.set("model.vocab", std::to_string(c.vocab));
  out.set("model.feature_dim", std::to_string(c.feature_dim));
  out.set("model.text_tap", std::to_string(c.text_tap));
  out.set("model.speech_tap", std::to_string(c.speech_tap));
  out.set("model.init_std", io::format_double(c.init_std));
}

ModelConfig tiny_profile(std::size_t vocab, std::size_t feature_dim) {
  ModelConfig c;
  c.num_layers = 2;
  c.width = 8;
  c.heads = 2;
  c.text_refine_layers = 1;
  c.text_conv_kernel = 3;
  c.vocab = vocab;
  c.feature_dim = feature_dim;
  c.text_tap = 1;
  c.speech_tap = 2;
  c.init_std = 0.5;
  return c;
}

Tensor position_features(std::size_t n, std::size_t width) {
  std::vector<double> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[i] = static_cast<double>(i);
  const double h = static_cast<double>(width / 2);
  numerics::NoGradGuard no_grad;
  return ops::sinusoidal_features(Tensor::from({n}, std::move(pos)), width, std::numbers::pi, std::exp2(h / 4.0));
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  init(seed);
  bind();
}

Model::Model(const ModelConfig& cfg, ParamStore params) : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  bind();
}

Model::Model(const Model& other) : cfg_(other.cfg_), params_(other.params_.clone()) { bind(); }

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    cfg_ = other.cfg_;
    params_ = other.params_.clone();
    bind();
  }
  return *this;
}

void Model::init(std::uint64_t seed) {
  numerics::Rng rng(seed);
  const std::size_t D = cfg_.width;
  const std::size_t H = cfg_.mlp_ratio * D;
  const std::size_t F = cfg_.feature_dim;
  const double sd = cfg_.init_std;
  params_.add_trunc_normal("text.embed", {cfg_.vocab, D}, sd, rng);
  for (std::size_t r = 0; r < cfg_.text_refine_layers; ++r) {
    params_.add_trunc_normal(idx("text.refine", r, "dw"), {cfg_.text_conv_kernel, D}, sd, rng);
    params_.add_zeros(idx("text.refine", r, "dw_b"), {D});
    params_.add_trunc_normal(idx("text.refine", r, "pw1"), {D, H}, sd, rng);
    params_.add_zeros(idx("text.refine", r, "pw1_b"), {H});
    params_.add_trunc_normal(idx("text.refine", r, "pw2"), {H, D}, sd, rng);
    params_.add_zeros(idx("text.refine", r, "pw2_b"), {D});
  }
  params_.add_trunc_normal("time.w1", {D, D}, sd, rng);
  params_.add_zeros("time.b1", {D});
  params_.add_trunc_normal("time.w2", {D, D}, sd, rng);
  params_.add_zeros("time.b2", {D});
  params_.add_trunc_normal("input.w", {2 * F + D, D}, sd, rng);
  params_.add_zeros("input.b", {D});
  for (std::size_t i = 0; i < cfg_.num_layers; ++i) {
    params_.add_trunc_normal(idx("block", i, "mod_w"), {D, 6 * D}, sd, rng);
    params_.add_zeros(idx("block", i, "mod_b"), {6 * D});
    params_.add_trunc_normal(idx("block", i, "qkv_w"), {D, 3 * D}, sd, rng);
    params_.add_zeros(idx("block", i, "qkv_b"), {3 * D});
    params_.add_trunc_normal(idx("block", i, "out_w"), {D, D}, sd, rng);
    params_.add_zeros(idx("block", i, "out_b"), {D});
    params_.add_trunc_normal(idx("block", i, "mlp1_w"), {D, H}, sd, rng);
    params_.add_zeros(idx("block", i, "mlp1_b"), {H});
    params_.add_trunc_normal(idx("block", i, "mlp2_w"), {H, D}, sd, rng);
    params_.add_zeros(idx("block", i, "mlp2_b"), {D});
  }
  params_.add_trunc_normal("final.mod_w", {D, 2 * D}, sd, rng);
  params_.add_zeros("final.mod_b", {2 * D});
  params_.add_zeros("final.w", {D, F});
  params_.add_zeros("final.b", {F});
}

void Model::bind() {
  const std::size_t D = cfg_.width;
  const std::size_t H = cfg_.mlp_ratio * D;
  const std::size_t F = cfg_.feature_dim;
  auto get = [&](const std::string& name, const numerics::Shape& shape) {
    if (!params_.contains(name)) throw DimensionError("model parameters lack '" + name + "'");
    const auto& t = params_.get(name);
    if (t.shape() != shape) {
      throw DimensionError("model parameter '" + name + "' has shape " + numerics::shape_str(t.shape()) +
                           ", config expects " + numerics::shape_str(shape));
    }
    return t;
  };
  text_embed_ = get("text.embed", {cfg_.vocab, D});
  refine_.clear();
  for (std::size_t r = 0; r < cfg_.text_refine_layers; ++r) {
    refine_.push_back({get(idx("text.refine", r, "dw"), {cfg_.text_conv_kernel, D}),
                       get(idx("text.refine", r, "dw_b"), {D}), get(idx("text.refine", r, "pw1"), {D, H}),
                       get(idx("text.refine", r, "pw1_b"), {H}), get(idx("text.refine", r, "pw2"), {H, D}),
                       get(idx("text.refine", r, "pw2_b"), {D})});
  }
  time_w1_ = get("time.w1", {D, D});
  time_b1_ = get("time.b1", {D});
  time_w2_ = get("time.w2", {D, D});
  time_b2_ = get("time.b2", {D});
  in_w_ = get("input.w", {2 * F + D, D});
  in_b_ = get("input.b", {D});
  blocks_.clear();
  for (std::size_t i = 0; i < cfg_.num_layers; ++i) {
    blocks_.push_back({get(idx("block", i, "mod_w"), {D, 6 * D}), get(idx("block", i, "mod_b"), {6 * D}),
                       get(idx("block", i, "qkv_w"), {D, 3 * D}), get(idx("block", i, "qkv_b"), {3 * D}),
                       get(idx("block", i, "out_w"), {D, D}), get(idx("block", i, "out_b"), {D}),
                       get(idx("block", i, "mlp1_w"), {D, H}), get(idx("block", i, "mlp1_b"), {H}),
                       get(idx("block", i, "mlp2_w"), {H, D}), get(idx("block", i, "mlp2_b"), {D})});
  }
  final_mod_w_ = get("final.mod_w", {D, 2 * D});
  final_mod_b_ = get("final.mod_b", {2 * D});
  final_w_ = get("final.w", {D, F});
  final_b_ = get("final.b", {F});
  if (params_.size() != 11 + 6 * cfg_.text_refine_layers + 10 * cfg_.num_layers) {
    throw DimensionError("model parameters contain entries the config does not describe");
  }
}

Tensor Model::embed_text_packed(const std::vector<std::size_t>& ids, const std::vector<std::size_t>& segments) const {
  for (auto id : ids) {
    if (id >= cfg_.vocab) {
      throw DomainError("embed_text: token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(cfg_.vocab));
    }
  }
  Tensor x = ops::gather_rows(text_embed_, ids);
  for (const auto& r : refine_) {
    auto h = ops::add(ops::depthwise_conv1d(x, r.dw, segments), r.dw_b);
    h = affine(ops::gelu(affine(ops::layer_norm_rows(h), r.pw1, r.pw1_b)), r.pw2, r.pw2_b);
    x = ops::add(x, h);
  }
  return x;
}

Tensor Model::embed_text(const TokenSeq& padded_tokens) const {
  if (padded_tokens.empty()) throw DimensionError("embed_text: empty token sequence");
  return embed_text_packed(padded_tokens, {padded_tokens.size()});
}

Tensor Model::time_mlp(const Tensor& features) const {
  return affine(ops::silu(affine(features, time_w1_, time_b1_)), time_w2_, time_b2_);
}

Tensor Model::embed_time(const Tensor& t) const {
  for (double v : t.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("embed_time: t = " + std::to_string(v) + " outside [0, 1]");
  }
  return time_mlp(ops::sinusoidal_features(t, cfg_.width, kTimeScale));
}

Tensor Model::embed_time(double t) const {
  return ops::reshape(embed_time(Tensor::from({1}, {t})), {cfg_.width});
}

BatchOutput Model::forward_batch(const std::vector<ModelInput>& batch, const ForwardOptions& opts) const {
  if (batch.empty()) throw DimensionError("forward: empty batch");
  for (auto tap : opts.taps) {
    if (tap < 1 || tap > cfg_.num_layers) {
      throw DomainError("forward: tap " + std::to_string(tap) + " outside [1, " + std::to_string(cfg_.num_layers) + "]");
    }
  }
  const std::size_t D = cfg_.width;
  const std::size_t F = cfg_.feature_dim;
  std::vector<std::size_t> segments;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> row_item;
  std::vector<double> times;
  std::vector<Tensor> psi_rows, xm_rows, pos_rows;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& in = batch[b];
    const std::size_t n = in.padded_tokens.size();
    if (in.psi.rank() != 2 || in.psi.dim(0) != F || in.psi.dim(1) != n || in.x_m.shape() != in.psi.shape()) {
      throw DimensionError("forward: item " + std::to_string(b) + " has psi " + numerics::shape_str(in.psi.shape()) +
                           ", x_m " + numerics::shape_str(in.x_m.shape()) + " and " + std::to_string(n) +
                           " tokens; expected [" + std::to_string(F) + " x N] with N = token count");
    }
    segments.push_back(n);
    ids.insert(ids.end(), in.padded_tokens.begin(), in.padded_tokens.end());
    row_item.insert(row_item.end(), n, b);
    times.push_back(in.t);
    psi_rows.push_back(ops::transpose(in.psi));
    xm_rows.push_back(ops::transpose(in.x_m));
    pos_rows.push_back(position_features(n, D));
  }

  const Tensor text = embed_text_packed(ids, segments);
  const Tensor pos = batch.size() == 1 ? pos_rows[0] : ops::concat_rows(pos_rows);
  const Tensor psi = batch.size() == 1 ? psi_rows[0] : ops::concat_rows(psi_rows);
  const Tensor xm = batch.size() == 1 ? xm_rows[0] : ops::concat_rows(xm_rows);
  Tensor h = ops::add(affine(ops::concat_cols({psi, xm, text}), in_w_, in_b_), pos);

  const Tensor cond = ops::silu(embed_time(Tensor::from({times.size()}, times)));

  BatchOutput out;
  std::map<std::size_t, Tensor> taps;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& blk = blocks_[i];
    // Slice and shift the per-item conditioning before expanding it to frames.
    const Tensor mod = affine(cond, blk.mod_w, blk.mod_b);
    auto part = [&](std::size_t k) { return ops::gather_rows(ops::slice_cols(mod, k * D, (k + 1) * D), row_item); };
    auto gain = [&](std::size_t k) {
      return ops::gather_rows(ops::add_scalar(ops::slice_cols(mod, k * D, (k + 1) * D), 1.0), row_item);
    };
    const Tensor a = modulate(h, part(0), gain(1));
    const Tensor att = ops::multihead_attention(affine(a, blk.qkv_w, blk.qkv_b), segments, cfg_.heads, opts.probe);
    h = ops::add(h, ops::mul(part(2), affine(att, blk.out_w, blk.out_b)));
    const Tensor m = modulate(h, part(3), gain(4));
    const Tensor mlp = affine(ops::gelu(affine(m, blk.mlp1_w, blk.mlp1_b)), blk.mlp2_w, blk.mlp2_b);
    h = ops::add(h, ops::mul(part(5), mlp));
    if (std::find(opts.taps.begin(), opts.taps.end(), i + 1) != opts.taps.end()) taps[i + 1] = h;
  }

  const Tensor fmod = affine(cond, final_mod_w_, final_mod_b_);
  const Tensor o = modulate(h, ops::gather_rows(ops::slice_cols(fmod, 0, D), row_item),
                            ops::gather_rows(ops::add_scalar(ops::slice_cols(fmod, D, 2 * D), 1.0), row_item));
  const Tensor v = affine(o, final_w_, final_b_);

  std::size_t offset = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t n = segments[b];
    out.v.push_back(batch.size() == 1 ? ops::transpose(v) : ops::transpose(ops::slice_rows(v, offset, offset + n)));
    for (const auto& [layer, t] : taps) {
      out.hidden[layer].push_back(batch.size() == 1 ? t : ops::slice_rows(t, offset, offset + n));
    }
    offset += n;
  }
  return out;
}

ModelOutput Model::forward(const ModelInput& input, const ForwardOptions& opts) const {
  auto batch = forward_batch({input}, opts);
  ModelOutput out;
  out.v = batch.v.front();
  for (auto& [layer, ts] : batch.hidden) out.hidden[layer] = ts.front();
  return out;
}

void write_params(io::BinaryWriter& w, const ParamStore& params) {
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.tensors()[i];
    w.str(params.names()[i]);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f64s(t.data());
  }
}

void read_params(io::BinaryReader& r, ParamStore& params) {
  const auto count = r.u32();
  if (count != params.size()) {
    throw FormatError(r.source() + ": holds " + std::to_string(count) + " tensors, expected " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto name = r.str();
    if (name != params.names()[i]) {
      throw FormatError(r.source() + ": tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                        params.names()[i] + "'");
    }
    const auto rank = r.u32();
    numerics::Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    auto& t = params.tensors()[i];
    if (shape != t.shape()) {
      throw FormatError(r.source() + ": '" + name + "' has shape " + numerics::shape_str(shape) + ", expected " +
                        numerics::shape_str(t.shape()));
    }
    const auto values = r.f64s(t.numel());
    auto dst = t.mutable_data();
    std::copy(values.begin(), values.end(), dst.begin());
  }
}

void save_model(const std::filesystem::path& path, const Model& m) {
  io::BinaryWriter w;
  w.bytes("ADMAM");
  w.u32(kModelFormatVersion);
  io::Config cfg;
  write_model_config(m.config(), cfg);
  w.str(cfg.to_text());
  write_params(w, m.params());
  w.save(path);
}

Model load_model(const std::filesystem::path& path) {
  auto r = io::BinaryReader::open(path);
  r.expect_magic("ADMAM");
  const auto version = r.u32();
  if (version != kModelFormatVersion) {
    throw FormatError(path.string() + ": unsupported model format version " + std::to_string(version));
  }
  const auto cfg = model_config_from(io::Config::parse(r.str(), path.string()));
  Model m(cfg, 0);
  read_params(r, m.params());
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after parameters");
  return m;
}

}  // namespace adma::model
