// Copyright 2026 The ftanet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "error.hpp"

namespace ftanet {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

void LayerConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorCode::kInvalidArgument, "layer_cfg: " + m); };
  if (widths.empty()) bad("widths must list at least one stage");
  for (int w : widths) {
    if (w < 1) bad("stage widths must be >= 1");
  }
  if (reduction < 1) bad("reduction must be >= 1");
  if (attention_depth < 1) bad("attention_depth must be >= 1");
  if (attention_kernel < 1 || attention_kernel % 2 == 0) bad("attention_kernel must be odd and >= 1");
  if (mdb_widths.size() != 3) bad("mdb_widths must have 3 entries");
  for (int w : mdb_widths) {
    if (w < 1) bad("mdb widths must be >= 1");
  }
}

namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

void add_conv(std::vector<ParamSpec>& out, const std::string& name, std::size_t kh, std::size_t kw,
              std::size_t cin, std::size_t cout) {
  out.push_back({name + ".w", {kh, kw, cin, cout}, kh * kw * cin, kh * kw * cout});
  out.push_back({name + ".b", {cout}, 0, 0});
}

void add_conv1d(std::vector<ParamSpec>& out, const std::string& name, std::size_t k,
                std::size_t cin, std::size_t cout) {
  out.push_back({name + ".w", {k, cin, cout}, k * cin, k * cout});
  out.push_back({name + ".b", {cout}, 0, 0});
}

void add_fc(std::vector<ParamSpec>& out, const std::string& name, std::size_t n, std::size_t m) {
  out.push_back({name + ".w", {n, m}, n, m});
  out.push_back({name + ".b", {m}, 0, 0});
}

std::string stage_prefix(int i) { return "stage" + std::to_string(i) + "."; }

// Uniform double in [0, 1) from the top 53 bits; independent of the
// standard library's distribution implementation.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename T>
const Var<T>& param(const ParamSet<T>& params, const std::string& name) {
  auto it = params.find(name);
  require(it != params.end(), ErrorCode::kShapeMismatch, "missing parameter " + name);
  return it->second;
}

template <typename T>
Var<T> conv(const Var<T>& x, const ParamSet<T>& p, const std::string& name,
            std::pair<std::size_t, std::size_t> stride = {1, 1}) {
  return conv2d(x, param(p, name + ".w"), param(p, name + ".b"), stride);
}

// Stacked 1-D convs (relu between) followed by softmax over the pooled axis.
template <typename T>
Var<T> attention_path(Var<T> pooled, const ParamSet<T>& p, const std::string& name, int depth) {
  for (int l = 0; l < depth; ++l) {
    const std::string layer = name + std::to_string(l);
    pooled = conv1d(pooled, param(p, layer + ".w"), param(p, layer + ".b"));
    if (l + 1 < depth) pooled = relu(pooled);
  }
  return softmax(pooled, 0);
}

template <typename T>
Var<T> channel_weights(const Var<T>& w, std::size_t branch, std::size_t channels) {
  return reshape(select(w, branch), {1, 1, channels});
}

}  // namespace

std::vector<ParamSpec> param_specs(const LayerConfig& cfg, int in_channels) {
  std::vector<ParamSpec> out;
  std::size_t cin = sz(in_channels);
  for (int i = 0; i < cfg.n_stages(); ++i) {
    const std::string pre = stage_prefix(i);
    const std::size_t c = sz(cfg.widths[sz(i)]);
    add_conv(out, pre + "lift", 3, 3, cin, c);
    for (int l = 0; l < cfg.attention_depth; ++l) {
      add_conv1d(out, pre + "fta.freq" + std::to_string(l), sz(cfg.attention_kernel), c, c);
      add_conv1d(out, pre + "fta.time" + std::to_string(l), sz(cfg.attention_kernel), c, c);
    }
    add_conv(out, pre + "fta.sf", 3, 3, c, c);
    add_conv(out, pre + "fta.st", 5, 5, c, c);
    add_conv(out, pre + "sfm.proj", 1, 1, c, c);
    const std::size_t hidden = sz(cfg.sfm_hidden(static_cast<int>(c)));
    add_fc(out, pre + "sfm.fc", c, hidden);
    add_fc(out, pre + "sfm.head_s", hidden, c);
    add_fc(out, pre + "sfm.head_f", hidden, c);
    add_fc(out, pre + "sfm.head_t", hidden, c);
    cin = c;
  }
  add_conv(out, "head", 1, 1, cin, 1);
  std::size_t mdb_in = sz(in_channels);
  for (std::size_t j = 0; j < 3; ++j) {
    add_conv(out, "mdb" + std::to_string(j), 4, 1, mdb_in, sz(cfg.mdb_widths[j]));
    mdb_in = sz(cfg.mdb_widths[j]);
  }
  add_conv(out, "mdb3", 5, 1, mdb_in, 1);
  return out;
}

ModelParams init_params(const LayerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const auto& spec : param_specs(cfg)) {
    Tensor<float> t(spec.shape);
    if (spec.fan_out > 0) {
      const double limit = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
      for (float& v : t.values) v = static_cast<float>((2.0 * unit_uniform(rng) - 1.0) * limit);
    }
    params.emplace(spec.name, std::move(t));
  }
  return params;
}

void check_params(const ModelParams& params, const LayerConfig& cfg) {
  const auto specs = param_specs(cfg);
  for (const auto& spec : specs) {
    auto it = params.find(spec.name);
    require(it != params.end(), ErrorCode::kShapeMismatch,
            "model parameters lack " + spec.name + " required by the layer config");
    require(it->second.dims == spec.shape, ErrorCode::kShapeMismatch,
            "parameter " + spec.name + " has shape " + shape_string(it->second.dims) +
                ", layer config expects " + shape_string(spec.shape));
  }
  require(params.size() == specs.size(), ErrorCode::kShapeMismatch,
          "model parameters contain tensors not described by the layer config");
}

template <typename T>
ParamSet<T> to_param_set(const ModelParams& params, bool trainable) {
  ParamSet<T> out;
  for (const auto& [name, t] : params) {
    std::vector<T> values(t.values.begin(), t.values.end());
    out.emplace(name, trainable ? Var<T>::parameter(t.dims, std::move(values))
                                : Var<T>::constant(t.dims, std::move(values)));
  }
  return out;
}

template <typename T>
ModelParams from_param_set(const ParamSet<T>& params) {
  ModelParams out;
  for (const auto& [name, v] : params) {
    std::vector<float> values(v.value().begin(), v.value().end());
    out.emplace(name, Tensor<float>(v.shape(), std::move(values)));
  }
  return out;
}

template <typename T>
FtaOutput<T> fta_module(const Var<T>& s, const ParamSet<T>& params, const std::string& prefix,
                        const LayerConfig& cfg) {
  require(s.rank() == 3, ErrorCode::kShapeMismatch, "fta_module: S must be F x T x C");
  const Var<T>& sf_w = param(params, prefix + "sf.w");
  require(sf_w.dim(2) == s.dim(2), ErrorCode::kShapeMismatch,
          "fta_module: S has " + std::to_string(s.dim(2)) + " channels, parameters expect " +
              std::to_string(sf_w.dim(2)));
  FtaOutput<T> out;
  out.a_f = attention_path(row_avg_pool(s), params, prefix + "freq", cfg.attention_depth);
  out.a_t = attention_path(col_avg_pool(s), params, prefix + "time", cfg.attention_depth);
  const std::size_t f = s.dim(0), t = s.dim(1), c = s.dim(2);
  const Var<T> s_f = conv(s, params, prefix + "sf");
  const Var<T> s_t = conv(s, params, prefix + "st");
  out.e_f = mul(s_f, reshape(out.a_f, {f, 1, c}));
  out.e_t = mul(s_t, reshape(out.a_t, {1, t, c}));
  return out;
}

template <typename T>
SfmOutput<T> selective_fusion(const Var<T>& s_prime, const Var<T>& e_f, const Var<T>& e_t,
                              const ParamSet<T>& params, const std::string& prefix,
                              const LayerConfig&) {
  require(s_prime.rank() == 3 && s_prime.shape() == e_f.shape() && s_prime.shape() == e_t.shape(),
          ErrorCode::kShapeMismatch,
          "selective_fusion: inputs must share one F x T x C shape, got " +
              shape_string(s_prime.shape()) + ", " + shape_string(e_f.shape()) + ", " +
              shape_string(e_t.shape()));
  const std::size_t c = s_prime.dim(2);
  const Var<T> gamma = add(add(s_prime, e_f), e_t);
  const Var<T> g = global_avg_pool(gamma);
  const Var<T> z = relu(linear(g, param(params, prefix + "fc.w"), param(params, prefix + "fc.b")));
  std::vector<Var<T>> logits;
  for (const char* head : {"head_s", "head_f", "head_t"}) {
    const std::string name = prefix + head;
    logits.push_back(reshape(linear(z, param(params, name + ".w"), param(params, name + ".b")), {1, c}));
  }
  SfmOutput<T> out;
  out.weights = softmax(concat(logits, 0), 0);
  out.out = add(add(mul(s_prime, channel_weights(out.weights, 0, c)),
                    mul(e_f, channel_weights(out.weights, 1, c))),
                mul(e_t, channel_weights(out.weights, 2, c)));
  return out;
}

template <typename T>
Var<T> melody_detection_branch(const Var<T>& s, const ParamSet<T>& params, const LayerConfig&) {
  require(s.rank() == 3 && s.dim(0) == kMelodyBins, ErrorCode::kShapeMismatch,
          "melody detection branch needs 320 frequency rows, got " + shape_string(s.shape()));
  Var<T> x = s;
  for (int j = 0; j < 3; ++j) x = relu(conv(x, params, "mdb" + std::to_string(j), {4, 1}));
  x = conv(x, params, "mdb3", {5, 1});
  return reshape(x, {1, x.dim(1)});
}

template <typename T>
Var<T> bottom_branch(const Var<T>& s, const ParamSet<T>& params, const LayerConfig& cfg) {
  Var<T> x = s;
  for (int i = 0; i < cfg.n_stages(); ++i) {
    const std::string pre = stage_prefix(i);
    x = relu(conv(x, params, pre + "lift"));
    const FtaOutput<T> fta = fta_module(x, params, pre + "fta.", cfg);
    const Var<T> s_prime = conv(x, params, pre + "sfm.proj");
    x = selective_fusion(s_prime, fta.e_f, fta.e_t, params, pre + "sfm.", cfg).out;
  }
  x = conv(x, params, "head");
  return reshape(x, {x.dim(0), x.dim(1)});
}

template <typename T>
Var<T> salience_graph(const Var<T>& input, const ParamSet<T>& params, const LayerConfig& cfg) {
  require(input.rank() == 3 && input.dim(0) == kMelodyBins && input.dim(2) == kCfpChannels &&
              input.dim(1) >= 1,
          ErrorCode::kShapeMismatch, "model input must be 320 x T x 3, got " + shape_string(input.shape()));
  const Var<T> pitch = bottom_branch(input, params, cfg);
  const Var<T> melody = melody_detection_branch(input, params, cfg);
  return softmax(concat<T>({pitch, melody}, 0), 0);
}

Var<float> cfp_input(const CfpTensor& cfp) {
  require(cfp.n_bins() == kMelodyBins && cfp.n_frames >= 1 &&
              cfp.data.size() == sz(cfp.n_bins()) * sz(cfp.n_frames) * kCfpChannels,
          ErrorCode::kShapeMismatch, "CFP tensor must be 320 x T x 3 with T >= 1");
  return Var<float>::constant({sz(cfp.n_bins()), sz(cfp.n_frames), kCfpChannels}, cfp.data);
}

SalienceMap forward(const CfpTensor& cfp, const ModelParams& params, const LayerConfig& cfg, int window) {
  check_params(params, cfg);
  require(window >= 0, ErrorCode::kInvalidArgument, "window must be >= 0");
  const Var<float> input = cfp_input(cfp);
  const ParamSet<float> ps = to_param_set<float>(params, false);
  const std::size_t f = sz(cfp.n_bins()), n = sz(cfp.n_frames);
  const std::size_t win = window == 0 ? n : sz(window);
  SalienceMap sal;
  sal.n_rows = kSalienceRows;
  sal.n_frames = cfp.n_frames;
  sal.values.assign(sz(kSalienceRows) * n, 0.0f);
  for (std::size_t start = 0; start < n; start += win) {
    const std::size_t real = std::min(win, n - start);
    Var<float> chunk = input;
    if (window != 0) {
      std::vector<float> buf(f * win * kCfpChannels, 0.0f);
      for (std::size_t b = 0; b < f; ++b) {
        std::copy_n(cfp.data.begin() + static_cast<long>((b * n + start) * kCfpChannels), real * kCfpChannels,
                    buf.begin() + static_cast<long>(b * win * kCfpChannels));
      }
      chunk = Var<float>::constant({f, win, kCfpChannels}, std::move(buf));
    }
    const Var<float> out = salience_graph(chunk, ps, cfg);
    for (std::size_t r = 0; r < sz(kSalienceRows); ++r) {
      std::copy_n(out.value().begin() + static_cast<long>(r * out.dim(1)), real,
                  sal.values.begin() + static_cast<long>(r * n + start));
    }
  }
  for (int t = 0; t < sal.n_frames; ++t) sal.frame_times.push_back(cfp.frame_time(t));
  return sal;
}

namespace {

constexpr char kMagic[4] = {'F', 'T', 'A', 'N'};

template <typename V>
void put(std::ofstream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  template <typename V>
  V get() {
    V v;
    std::memcpy(&v, take(sizeof v), sizeof v);
    return v;
  }

  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) fail(ErrorCode::kCorruptFile, origin_ + ": model file is truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
  std::string origin_;
};

}  // namespace

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kModelFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    require(name.size() <= 0xFFFF && t.dims.size() <= 0xFF, ErrorCode::kInvalidArgument,
            "parameter " + name + " cannot be represented in the model format");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    for (std::size_t d : t.dims) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  }
  require(static_cast<bool>(out.flush()), ErrorCode::kIo, "failed writing " + path.string());
}

ModelParams load_params(const std::filesystem::path& path) {
  std::error_code ec;
  require(std::filesystem::is_regular_file(path, ec), ErrorCode::kNotFound,
          "model not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());
  require(std::memcmp(r.take(4), kMagic, 4) == 0, ErrorCode::kCorruptFile,
          path.string() + ": not a model file (bad magic)");
  const auto version = r.get<std::uint32_t>();
  require(version == kModelFormatVersion, ErrorCode::kUnsupportedVersion,
          path.string() + ": unsupported model format version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  ModelParams params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>();
    std::string name(r.take(name_len), name_len);
    const auto ndim = r.get<std::uint8_t>();
    Shape dims(ndim);
    for (auto& d : dims) d = r.get<std::uint32_t>();
    Tensor<float> t(dims);
    if (!t.values.empty()) std::memcpy(t.values.data(), r.take(t.values.size() * sizeof(float)), t.values.size() * sizeof(float));
    require(params.emplace(std::move(name), std::move(t)).second, ErrorCode::kCorruptFile,
            path.string() + ": duplicate tensor name");
  }
  require(r.at_end(), ErrorCode::kCorruptFile, path.string() + ": trailing bytes after last tensor");
  return params;
}

#define FTANET_INSTANTIATE(T)                                                                       \
  template ParamSet<T> to_param_set<T>(const ModelParams&, bool);                                   \
  template ModelParams from_param_set<T>(const ParamSet<T>&);                                       \
  template FtaOutput<T> fta_module<T>(const Var<T>&, const ParamSet<T>&, const std::string&,        \
                                      const LayerConfig&);                                          \
  template SfmOutput<T> selective_fusion<T>(const Var<T>&, const Var<T>&, const Var<T>&,            \
                                            const ParamSet<T>&, const std::string&,                 \
                                            const LayerConfig&);                                    \
  template Var<T> melody_detection_branch<T>(const Var<T>&, const ParamSet<T>&, const LayerConfig&); \
  template Var<T> bottom_branch<T>(const Var<T>&, const ParamSet<T>&, const LayerConfig&);           \
  template Var<T> salience_graph<T>(const Var<T>&, const ParamSet<T>&, const LayerConfig&);

FTANET_INSTANTIATE(float)
FTANET_INSTANTIATE(double)

#undef FTANET_INSTANTIATE

}  // namespace ftanet
