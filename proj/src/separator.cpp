#include "orpit/separator.hpp"

#include <cmath>
#include <sstream>

#include "orpit/errors.hpp"
#include "orpit/orp1.hpp"
#include "orpit/rng.hpp"

namespace orpit {

namespace {

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
};

std::vector<TensorSpec> tensor_layout(const SeparatorConfig& c) {
  std::vector<TensorSpec> out;
  out.push_back({"enc.w", {c.n_basis, 1, c.enc_kernel}});
  for (int i = 0; i < c.mask_layers; ++i) {
    const int c_in = i == 0 ? c.n_basis : c.mask_channels;
    const std::string p = "mask" + std::to_string(i);
    out.push_back({p + ".pw.w", {c.mask_channels, c_in, 1}});
    out.push_back({p + ".pw.b", {c.mask_channels}});
    out.push_back({p + ".dw.w", {c.mask_channels, kDwKernel}});
    out.push_back({p + ".dw.b", {c.mask_channels}});
  }
  out.push_back({"head.one.w", {c.n_basis, c.mask_channels, 1}});
  out.push_back({"head.rest.w", {c.n_basis, c.mask_channels, 1}});
  out.push_back({"dec.w", {c.n_basis, 1, c.enc_kernel}});
  return out;
}

template <typename P>
std::vector<std::pair<std::string, P>> named_tensors_impl(P enc, std::vector<P> layer_tensors,
                                                          P head_one, P head_rest, P dec,
                                                          int mask_layers) {
  std::vector<std::pair<std::string, P>> out;
  out.emplace_back("enc.w", enc);
  for (int i = 0; i < mask_layers; ++i) {
    const std::string p = "mask" + std::to_string(i);
    out.emplace_back(p + ".pw.w", layer_tensors[4 * i + 0]);
    out.emplace_back(p + ".pw.b", layer_tensors[4 * i + 1]);
    out.emplace_back(p + ".dw.w", layer_tensors[4 * i + 2]);
    out.emplace_back(p + ".dw.b", layer_tensors[4 * i + 3]);
  }
  out.emplace_back("head.one.w", head_one);
  out.emplace_back("head.rest.w", head_rest);
  out.emplace_back("dec.w", dec);
  return out;
}

}  // namespace

void validate_config(const SeparatorConfig& c) {
  if (c.n_basis < 1 || c.enc_kernel < 1 || c.enc_stride < 1 || c.mask_layers < 1 ||
      c.mask_channels < 1 || c.segment_len < 1)
    throw InvalidArgument("separator config: counts must be >= 1");
  if (c.enc_stride > c.enc_kernel)
    throw InvalidArgument("separator config: enc_stride must not exceed enc_kernel");
  if (c.segment_len % c.enc_stride != 0)
    throw InvalidArgument("separator config: segment_len must be a multiple of enc_stride");
  if (static_cast<int>(c.dilations.size()) != c.mask_layers)
    throw InvalidArgument("separator config: dilations must list one entry per mask layer");
  for (int d : c.dilations)
    if (d < 1) throw InvalidArgument("separator config: dilations must be >= 1");
}

std::vector<std::pair<std::string, TensorData<float>*>> named_tensors(SeparatorParams& p) {
  std::vector<TensorData<float>*> layer_tensors;
  for (auto& l : p.layers) {
    layer_tensors.push_back(&l.pw_w);
    layer_tensors.push_back(&l.pw_b);
    layer_tensors.push_back(&l.dw_w);
    layer_tensors.push_back(&l.dw_b);
  }
  return named_tensors_impl<TensorData<float>*>(&p.enc_w, std::move(layer_tensors), &p.head_one_w,
                                                &p.head_rest_w, &p.dec_w, p.config.mask_layers);
}

std::vector<std::pair<std::string, const TensorData<float>*>> named_tensors(
    const SeparatorParams& p) {
  std::vector<const TensorData<float>*> layer_tensors;
  for (auto& l : p.layers) {
    layer_tensors.push_back(&l.pw_w);
    layer_tensors.push_back(&l.pw_b);
    layer_tensors.push_back(&l.dw_w);
    layer_tensors.push_back(&l.dw_b);
  }
  return named_tensors_impl<const TensorData<float>*>(&p.enc_w, std::move(layer_tensors),
                                                      &p.head_one_w, &p.head_rest_w, &p.dec_w,
                                                      p.config.mask_layers);
}

SeparatorParams init_params(const SeparatorConfig& config, std::uint64_t seed) {
  validate_config(config);
  SeparatorParams p;
  p.config = config;
  p.config.seed = seed;
  p.layers.resize(config.mask_layers);

  Rng rng(seed);
  auto named = named_tensors(p);
  const auto layout = tensor_layout(config);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    TensorData<float>& t = *named[i].second;
    t.shape = layout[i].shape;
    t.data.assign(t.numel(), 0.f);
    if (layout[i].name.ends_with(".b")) continue;  // biases stay zero
    // Fan-in counts everything one output element sums over.
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= t.shape[d];
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-limit, limit));
  }
  return p;
}

template <typename S>
std::vector<Tensor<S>> bind_params(Tape<S>& tape, const SeparatorParams& params,
                                   bool requires_grad) {
  std::vector<Tensor<S>> out;
  for (const auto& [name, t] : named_tensors(params)) {
    (void)name;
    out.push_back(
        tape.input(t->shape, std::vector<S>(t->data.begin(), t->data.end()), requires_grad));
  }
  return out;
}

template std::vector<Tensor<float>> bind_params(Tape<float>&, const SeparatorParams&, bool);
template std::vector<Tensor<double>> bind_params(Tape<double>&, const SeparatorParams&, bool);

template <typename S>
std::pair<Tensor<S>, Tensor<S>> forward(Tape<S>& tape, const SeparatorConfig& cfg,
                                        const std::vector<Tensor<S>>& bound, Tensor<S> mixture,
                                        ForwardDebug<S>* debug) {
  validate_config(cfg);
  const int expected = 4 + 4 * cfg.mask_layers;
  if (static_cast<int>(bound.size()) != expected)
    throw InvalidArgument("forward: bound parameter count does not match the config");
  const std::vector<int> in_shape = mixture.shape();
  if (in_shape.size() != 2 || in_shape[0] != 1)
    throw InvalidArgument("forward: mixture must be [1 x T]");
  const int t_in = in_shape[1];
  if (t_in < cfg.enc_kernel) throw InvalidArgument("forward: input shorter than enc_kernel");

  const int rem = (t_in - cfg.enc_kernel) % cfg.enc_stride;
  const int pad = rem == 0 ? 0 : cfg.enc_stride - rem;
  auto x = pad == 0 ? mixture : tape.pad_time(mixture, 0, pad);

  std::vector<Tensor<S>> preacts;
  auto e_pre = tape.conv1d(x, bound[0], cfg.enc_stride);
  preacts.push_back(e_pre);
  auto e = tape.relu(e_pre);
  auto h = e;
  for (int i = 0; i < cfg.mask_layers; ++i) {
    auto pw_pre = tape.bias_add(tape.conv1d(h, bound[1 + 4 * i], 1), bound[2 + 4 * i]);
    preacts.push_back(pw_pre);
    auto pw = tape.relu(pw_pre);
    const int halo = cfg.dilations[i] * (kDwKernel - 1) / 2;
    auto dw = tape.depthwise_conv1d(tape.pad_time(pw, halo, halo), bound[3 + 4 * i],
                                    cfg.dilations[i]);
    auto dw_pre = tape.bias_add(dw, bound[4 + 4 * i]);
    preacts.push_back(dw_pre);
    h = tape.relu(dw_pre);
  }
  const int base = 1 + 4 * cfg.mask_layers;
  auto m_one_pre = tape.conv1d(h, bound[base], 1);
  auto m_rest_pre = tape.conv1d(h, bound[base + 1], 1);
  preacts.push_back(m_one_pre);
  preacts.push_back(m_rest_pre);
  auto m_one = tape.relu(m_one_pre);
  auto m_rest = tape.relu(m_rest_pre);
  auto one = tape.conv1d_transpose(tape.mul(m_one, e), bound[base + 2], cfg.enc_stride);
  auto rest = tape.conv1d_transpose(tape.mul(m_rest, e), bound[base + 2], cfg.enc_stride);
  if (pad != 0) {
    one = tape.crop_time(one, 0, t_in);
    rest = tape.crop_time(rest, 0, t_in);
  }
  if (debug) {
    debug->mask_one = m_one.value();
    debug->mask_rest = m_rest.value();
    debug->relu_preacts.clear();
    for (const auto& p : preacts) debug->relu_preacts.push_back(p.value());
  }
  return {one, rest};
}

template std::pair<Tensor<float>, Tensor<float>> forward(Tape<float>&, const SeparatorConfig&,
                                                         const std::vector<Tensor<float>>&,
                                                         Tensor<float>, ForwardDebug<float>*);
template std::pair<Tensor<double>, Tensor<double>> forward(Tape<double>&, const SeparatorConfig&,
                                                           const std::vector<Tensor<double>>&,
                                                           Tensor<double>, ForwardDebug<double>*);

std::pair<Waveform, Waveform> separate_once(const SeparatorParams& params, const Waveform& x) {
  Tape<float> tape;
  auto bound = bind_params(tape, params, false);
  auto mixture = tape.input({1, static_cast<int>(x.samples.size())}, x.samples, false);
  auto [one, rest] = forward(tape, params.config, bound, mixture);
  Waveform a{one.value(), x.sample_rate};
  Waveform b{rest.value(), x.sample_rate};
  return {std::move(a), std::move(b)};
}

std::vector<float> ola_combine(const std::vector<std::vector<float>>& segments,
                               const std::vector<int>& starts, int total_len, int segment_len) {
  if (segments.size() != starts.size() || segments.empty())
    throw InvalidArgument("ola_combine: segments and starts must pair up");
  if (segment_len < 2 || segment_len % 2 != 0)
    throw InvalidArgument("ola_combine: segment_len must be even and >= 2");
  const int half = segment_len / 2;
  if (starts.front() != 0 || starts.back() + segment_len != total_len)
    throw InvalidArgument("ola_combine: segments must span the full length");
  for (std::size_t j = 0; j < starts.size(); ++j) {
    if (static_cast<int>(segments[j].size()) != segment_len)
      throw InvalidArgument("ola_combine: segment length mismatch");
    if (j > 0) {
      const int gap = starts[j] - starts[j - 1];
      if (gap < 1 || gap > half)
        throw InvalidArgument("ola_combine: segments must overlap by at least half");
    }
  }

  std::vector<double> acc(total_len, 0.0), wsum(total_len, 0.0);
  for (std::size_t j = 0; j < segments.size(); ++j) {
    const bool first = j == 0;
    const bool last = j + 1 == segments.size();
    for (int n = 0; n < segment_len; ++n) {
      double w = n < half ? static_cast<double>(n) / half
                          : static_cast<double>(segment_len - n) / half;
      if (first && n < half) w = 1.0;
      if (last && n >= half) w = 1.0;
      acc[starts[j] + n] += w * segments[j][n];
      wsum[starts[j] + n] += w;
    }
  }
  std::vector<float> out(total_len);
  for (int i = 0; i < total_len; ++i)
    out[i] = static_cast<float>(acc[i] / wsum[i]);  // every sample has weight by construction
  return out;
}

std::pair<Waveform, Waveform> separate_long(const SeparatorParams& params, const Waveform& x) {
  const int total = static_cast<int>(x.samples.size());
  const int seg_len = params.config.segment_len;
  if (total <= seg_len) return separate_once(params, x);

  const int hop = seg_len / 2;
  std::vector<int> starts{0};
  for (int s = hop; s + seg_len < total; s += hop) starts.push_back(s);
  if (starts.back() != total - seg_len) starts.push_back(total - seg_len);

  std::vector<std::vector<float>> ones, rests;
  for (int s : starts) {
    Waveform seg{{x.samples.begin() + s, x.samples.begin() + s + seg_len}, x.sample_rate};
    auto [one, rest] = separate_once(params, seg);
    ones.push_back(std::move(one.samples));
    rests.push_back(std::move(rest.samples));
  }
  Waveform one{ola_combine(ones, starts, total, seg_len), x.sample_rate};
  Waveform rest{ola_combine(rests, starts, total, seg_len), x.sample_rate};
  return {std::move(one), std::move(rest)};
}

namespace {

std::string config_header(const SeparatorConfig& c, std::size_t tensor_count) {
  std::ostringstream os;
  os << "type=separator\n";
  os << "n_basis=" << c.n_basis << "\n";
  os << "enc_kernel=" << c.enc_kernel << "\n";
  os << "enc_stride=" << c.enc_stride << "\n";
  os << "mask_layers=" << c.mask_layers << "\n";
  os << "mask_channels=" << c.mask_channels << "\n";
  os << "dilations=";
  for (std::size_t i = 0; i < c.dilations.size(); ++i)
    os << (i ? "," : "") << c.dilations[i];
  os << "\n";
  os << "segment_len=" << c.segment_len << "\n";
  os << "seed=" << c.seed << "\n";
  os << "tensors=" << tensor_count << "\n";
  return os.str();
}

}  // namespace

void save_checkpoint(const SeparatorParams& params, const std::filesystem::path& path) {
  validate_config(params.config);
  const auto named = named_tensors(params);

  Orp1File file;
  file.header = config_header(params.config, named.size());
  for (const auto& [name, t] : named) file.tensors.emplace_back(name, *t);
  write_orp1(file, path);
}

SeparatorParams load_checkpoint(const std::filesystem::path& path) {
  const Orp1File file = read_orp1(path);
  const auto kv = parse_header(file.header);
  if (header_str(kv, "type") != "separator")
    throw FormatError("checkpoint: not a separator checkpoint");

  SeparatorConfig cfg;
  cfg.n_basis = static_cast<int>(header_int(kv, "n_basis"));
  cfg.enc_kernel = static_cast<int>(header_int(kv, "enc_kernel"));
  cfg.enc_stride = static_cast<int>(header_int(kv, "enc_stride"));
  cfg.mask_layers = static_cast<int>(header_int(kv, "mask_layers"));
  cfg.mask_channels = static_cast<int>(header_int(kv, "mask_channels"));
  cfg.segment_len = static_cast<int>(header_int(kv, "segment_len"));
  cfg.seed = static_cast<std::uint64_t>(header_int(kv, "seed"));
  cfg.dilations.clear();
  {
    std::istringstream ds(header_str(kv, "dilations"));
    std::string item;
    while (std::getline(ds, item, ',')) {
      try {
        cfg.dilations.push_back(std::stoi(item));
      } catch (const std::exception&) {
        throw FormatError("checkpoint: bad dilations list");
      }
    }
  }
  try {
    validate_config(cfg);
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
  }

  const auto layout = tensor_layout(cfg);
  if (header_int(kv, "tensors") != static_cast<long long>(layout.size()))
    throw FormatError("checkpoint: tensor count does not match the config");
  if (file.tensors.size() != layout.size())
    throw FormatError("checkpoint: tensor count does not match the header");

  SeparatorParams params;
  params.config = cfg;
  params.layers.resize(cfg.mask_layers);
  auto named = named_tensors(params);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, t] = file.tensors[i];
    if (name != layout[i].name) throw FormatError("checkpoint: unexpected tensor " + name);
    if (t.shape != layout[i].shape)
      throw FormatError("checkpoint: shape mismatch for tensor " + name);
    *named[i].second = t;
  }
  return params;
}

}  // namespace orpit
