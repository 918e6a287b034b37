#include "autoddpm/unet.hpp"

#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace autoddpm {

namespace {

enum class Kind { conv_weight, dense_weight, bias, gain, shift };

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  Kind kind;
  int fan_in;
  bool output_layer;
};

struct ConvRef {
  int w = -1, b = -1, cin = 0, cout = 0, k = 0;
};
struct NormRef {
  int gamma = -1, beta = -1, channels = 0;
};
struct DenseRef {
  int w = -1, b = -1, in = 0, out = 0;
};
struct BlockRef {
  int cin = 0, cout = 0;
  NormRef norm1;
  ConvRef conv1;
  DenseRef temb;
  NormRef norm2;
  ConvRef conv2;
  std::optional<ConvRef> skip;
};

}  // namespace

struct UNetPlan {
  std::vector<TensorSpec> specs;
  ConvRef conv_in;
  DenseRef temb_fc;
  std::vector<std::vector<BlockRef>> enc;  // [level][block]
  std::vector<std::vector<BlockRef>> dec;  // [level][block], levels 0..L-2
  NormRef norm_out;
  ConvRef conv_out;
  int groups = 1;
  int temb_dim = 0;
};

namespace {

class PlanBuilder {
 public:
  explicit PlanBuilder(UNetPlan& plan) : plan_(plan) {}

  int add(std::string name, std::vector<int> shape, Kind kind, int fan_in, bool output_layer = false) {
    plan_.specs.push_back({std::move(name), std::move(shape), kind, fan_in, output_layer});
    return static_cast<int>(plan_.specs.size()) - 1;
  }
  ConvRef conv(const std::string& name, int cin, int cout, int k, bool output_layer = false) {
    ConvRef r;
    r.cin = cin;
    r.cout = cout;
    r.k = k;
    r.w = add(name + ".weight", {k, k, cin, cout}, Kind::conv_weight, k * k * cin, output_layer);
    r.b = add(name + ".bias", {cout}, Kind::bias, k * k * cin, output_layer);
    return r;
  }
  NormRef norm(const std::string& name, int ch) {
    NormRef r;
    r.channels = ch;
    r.gamma = add(name + ".gamma", {ch}, Kind::gain, ch);
    r.beta = add(name + ".beta", {ch}, Kind::shift, ch);
    return r;
  }
  DenseRef dense(const std::string& name, int in, int out) {
    DenseRef r;
    r.in = in;
    r.out = out;
    r.w = add(name + ".weight", {in, out}, Kind::dense_weight, in);
    r.b = add(name + ".bias", {out}, Kind::bias, in);
    return r;
  }
  BlockRef block(const std::string& name, int cin, int cout, int temb_dim) {
    BlockRef b;
    b.cin = cin;
    b.cout = cout;
    b.norm1 = norm(name + ".norm1", cin);
    b.conv1 = conv(name + ".conv1", cin, cout, 3);
    b.temb = dense(name + ".temb", temb_dim, cout);
    b.norm2 = norm(name + ".norm2", cout);
    b.conv2 = conv(name + ".conv2", cout, cout, 3);
    if (cin != cout) b.skip = conv(name + ".skip", cin, cout, 1);
    return b;
  }

 private:
  UNetPlan& plan_;
};

std::shared_ptr<const UNetPlan> build_plan(const UNetConfig& cfg) {
  cfg.validate();
  auto plan = std::make_shared<UNetPlan>();
  PlanBuilder b(*plan);
  plan->groups = cfg.norm_groups;
  plan->temb_dim = cfg.temb_dim;
  const int levels = cfg.levels();
  std::vector<int> ch(levels);
  for (int l = 0; l < levels; ++l) ch[l] = cfg.base_channels * cfg.channel_mult[l];

  plan->conv_in = b.conv("conv_in", cfg.in_channels, cfg.base_channels, 3);
  plan->temb_fc = b.dense("temb.fc", cfg.temb_dim, cfg.temb_dim);
  int cur = cfg.base_channels;
  plan->enc.resize(levels);
  for (int l = 0; l < levels; ++l) {
    for (int k = 0; k < cfg.blocks_per_level; ++k) {
      plan->enc[l].push_back(
          b.block("enc" + std::to_string(l) + ".block" + std::to_string(k), cur, ch[l], cfg.temb_dim));
      cur = ch[l];
    }
  }
  plan->dec.resize(levels > 1 ? levels - 1 : 0);
  for (int l = levels - 2; l >= 0; --l) {
    cur = cur + ch[l];
    for (int k = 0; k < cfg.blocks_per_level; ++k) {
      plan->dec[l].push_back(
          b.block("dec" + std::to_string(l) + ".block" + std::to_string(k), cur, ch[l], cfg.temb_dim));
      cur = ch[l];
    }
  }
  plan->norm_out = b.norm("out.norm", cur);
  plan->conv_out = b.conv("out.conv", cur, cfg.in_channels, 3, true);
  return plan;
}

template <class T>
std::span<const T> view(const UNetParams<T>& p, int idx) {
  return p.tensors[idx].data;
}
template <class T>
std::span<T> view(UNetParams<T>& p, int idx) {
  return p.tensors[idx].data;
}

template <class T>
struct BlockCache {
  Tensor<T> x, n1, a1, h1, n2, a2;
  ops::GroupNormCache<T> g1, g2;
};

template <class T>
void silu_tensor(const Tensor<T>& x, Tensor<T>& out) {
  if (!out.same_shape(x)) out = Tensor<T>(x.n, x.h, x.w, x.c);
  ops::silu_forward<T>(x.data, out.data);
}

// Residual block forward. When cache is non-null every intermediate needed
// by the backward pass is retained there.
template <class T>
void block_forward(const UNetParams<T>& p, const BlockRef& b, int groups, const Tensor<T>& x,
                   std::span<const T> temb, Tensor<T>& out, BlockCache<T>* cache) {
  BlockCache<T> local;
  BlockCache<T>& c = cache ? *cache : local;
  if (cache) c.x = x;
  ops::group_norm_forward<T>(x, view(p, b.norm1.gamma), view(p, b.norm1.beta), groups, c.n1, c.g1);
  silu_tensor(c.n1, c.a1);
  ops::conv2d_forward<T>(c.a1, view(p, b.conv1.w), view(p, b.conv1.b), 3, b.cout, c.h1);
  std::vector<T> proj(static_cast<std::size_t>(x.n) * b.cout);
  ops::dense_forward<T>(temb, x.n, b.temb.in, view(p, b.temb.w), view(p, b.temb.b), b.cout, proj);
  ops::add_channel_bias<T>(c.h1, proj);
  ops::group_norm_forward<T>(c.h1, view(p, b.norm2.gamma), view(p, b.norm2.beta), groups, c.n2, c.g2);
  silu_tensor(c.n2, c.a2);
  Tensor<T> h2;
  ops::conv2d_forward<T>(c.a2, view(p, b.conv2.w), view(p, b.conv2.b), 3, b.cout, h2);
  if (b.skip) {
    ops::conv2d_forward<T>(x, view(p, b.skip->w), view(p, b.skip->b), 1, b.cout, out);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += h2.data[i];
  } else {
    out = std::move(h2);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += x.data[i];
  }
}

template <class T>
void block_backward(const UNetParams<T>& p, const BlockRef& b, int groups, std::span<const T> temb,
                    const BlockCache<T>& c, const Tensor<T>& dout, UNetParams<T>& g, std::span<T> dtemb,
                    Tensor<T>& dx) {
  Tensor<T> da2;
  ops::conv2d_backward<T>(c.a2, view(p, b.conv2.w), 3, dout, view(g, b.conv2.w), view(g, b.conv2.b), &da2);
  Tensor<T> dn2(da2.n, da2.h, da2.w, da2.c);
  ops::silu_backward<T>(c.n2.data, da2.data, dn2.data);
  Tensor<T> dh1;
  ops::group_norm_backward<T>(c.h1, view(p, b.norm2.gamma), groups, c.g2, dn2, view(g, b.norm2.gamma),
                              view(g, b.norm2.beta), dh1);
  std::vector<T> dproj(static_cast<std::size_t>(dh1.n) * b.cout, T(0));
  ops::add_channel_bias_backward<T>(dh1, dproj);
  std::vector<T> dtemb_local(dtemb.size(), T(0));
  ops::dense_backward<T>(temb, dh1.n, b.temb.in, view(p, b.temb.w), b.cout, dproj, view(g, b.temb.w),
                         view(g, b.temb.b), dtemb_local);
  for (std::size_t i = 0; i < dtemb.size(); ++i) dtemb[i] += dtemb_local[i];
  Tensor<T> da1;
  ops::conv2d_backward<T>(c.a1, view(p, b.conv1.w), 3, dh1, view(g, b.conv1.w), view(g, b.conv1.b), &da1);
  Tensor<T> dn1(da1.n, da1.h, da1.w, da1.c);
  ops::silu_backward<T>(c.n1.data, da1.data, dn1.data);
  ops::group_norm_backward<T>(c.x, view(p, b.norm1.gamma), groups, c.g1, dn1, view(g, b.norm1.gamma),
                              view(g, b.norm1.beta), dx);
  if (b.skip) {
    Tensor<T> dskip;
    ops::conv2d_backward<T>(c.x, view(p, b.skip->w), 1, dout, view(g, b.skip->w), view(g, b.skip->b), &dskip);
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += dskip.data[i];
  } else {
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += dout.data[i];
  }
}

template <class T>
struct NetCache {
  std::vector<T> temb_in, temb_pre, temb;
  Tensor<T> x;
  std::vector<std::vector<BlockCache<T>>> enc, dec;
  std::vector<Tensor<T>> skips;
  std::vector<Tensor<T>> dec_concat_channels;  // shapes only
  Tensor<T> head_in, head_norm, head_act;
  ops::GroupNormCache<T> head_g;
};

template <class T>
void check_inputs(const UNetConfig& cfg, const Tensor<T>& x, std::span<const int> t) {
  if (x.c != cfg.in_channels) throw std::invalid_argument("unet: channel count mismatch");
  if (x.h % cfg.size_divisor() != 0 || x.w % cfg.size_divisor() != 0) {
    throw std::invalid_argument("unet: image size must be divisible by " + std::to_string(cfg.size_divisor()));
  }
  if (t.size() != static_cast<std::size_t>(x.n)) throw std::invalid_argument("unet: one timestep per sample");
  for (const int ti : t) {
    if (ti < 1) throw std::out_of_range("unet: timestep must be >= 1");
  }
}

template <class T>
void net_forward(const UNetPlan& plan, const UNetParams<T>& p, const Tensor<T>& x, std::span<const int> t,
                 Tensor<T>& out, NetCache<T>* cache) {
  const int n = x.n;
  const int td = plan.temb_dim;
  std::vector<T> temb_in(static_cast<std::size_t>(n) * td), temb_pre(temb_in.size()), temb(temb_in.size());
  for (int i = 0; i < n; ++i) timestep_embedding<T>(t[i], td, std::span<T>(temb_in).subspan(i * td, td));
  ops::dense_forward<T>(temb_in, n, td, view(p, plan.temb_fc.w), view(p, plan.temb_fc.b), td, temb_pre);
  ops::silu_forward<T>(temb_pre, temb);

  Tensor<T> h;
  ops::conv2d_forward<T>(x, view(p, plan.conv_in.w), view(p, plan.conv_in.b), 3, plan.conv_in.cout, h);
  const int levels = static_cast<int>(plan.enc.size());
  std::vector<Tensor<T>> skips(levels);
  if (cache) {
    cache->x = x;
    cache->enc.assign(levels, {});
    cache->dec.assign(plan.dec.size(), {});
  }
  for (int l = 0; l < levels; ++l) {
    if (cache) cache->enc[l].resize(plan.enc[l].size());
    for (std::size_t k = 0; k < plan.enc[l].size(); ++k) {
      Tensor<T> next;
      block_forward<T>(p, plan.enc[l][k], plan.groups, h, temb, next, cache ? &cache->enc[l][k] : nullptr);
      h = std::move(next);
    }
    if (l + 1 < levels) {
      skips[l] = h;
      Tensor<T> pooled;
      ops::avgpool2_forward<T>(h, pooled);
      h = std::move(pooled);
    }
  }
  for (int l = levels - 2; l >= 0; --l) {
    Tensor<T> up, cat;
    ops::upsample2_forward<T>(h, up);
    ops::concat_forward<T>(up, skips[l], cat);
    h = std::move(cat);
    if (cache) cache->dec[l].resize(plan.dec[l].size());
    for (std::size_t k = 0; k < plan.dec[l].size(); ++k) {
      Tensor<T> next;
      block_forward<T>(p, plan.dec[l][k], plan.groups, h, temb, next, cache ? &cache->dec[l][k] : nullptr);
      h = std::move(next);
    }
  }
  Tensor<T> hn, ha;
  ops::GroupNormCache<T> hg;
  ops::group_norm_forward<T>(h, view(p, plan.norm_out.gamma), view(p, plan.norm_out.beta), plan.groups, hn, hg);
  silu_tensor(hn, ha);
  ops::conv2d_forward<T>(ha, view(p, plan.conv_out.w), view(p, plan.conv_out.b), 3, plan.conv_out.cout, out);
  if (cache) {
    cache->temb_in = std::move(temb_in);
    cache->temb_pre = std::move(temb_pre);
    cache->temb = std::move(temb);
    cache->skips = std::move(skips);
    cache->head_in = std::move(h);
    cache->head_norm = std::move(hn);
    cache->head_act = std::move(ha);
    cache->head_g = std::move(hg);
  }
}

template <class T>
void net_backward(const UNetPlan& plan, const UNetParams<T>& p, NetCache<T>& c, const Tensor<T>& dout,
                  UNetParams<T>& g) {
  const int n = dout.n;
  const int td = plan.temb_dim;
  std::vector<T> dtemb(static_cast<std::size_t>(n) * td, T(0));

  Tensor<T> dha;
  ops::conv2d_backward<T>(c.head_act, view(p, plan.conv_out.w), 3, dout, view(g, plan.conv_out.w),
                          view(g, plan.conv_out.b), &dha);
  Tensor<T> dhn(dha.n, dha.h, dha.w, dha.c);
  ops::silu_backward<T>(c.head_norm.data, dha.data, dhn.data);
  Tensor<T> dh;
  ops::group_norm_backward<T>(c.head_in, view(p, plan.norm_out.gamma), plan.groups, c.head_g, dhn,
                              view(g, plan.norm_out.gamma), view(g, plan.norm_out.beta), dh);

  const int levels = static_cast<int>(plan.enc.size());
  std::vector<Tensor<T>> dskips(levels);
  for (int l = 0; l <= levels - 2; ++l) {
    for (int k = static_cast<int>(plan.dec[l].size()) - 1; k >= 0; --k) {
      Tensor<T> dprev;
      block_backward<T>(p, plan.dec[l][k], plan.groups, c.temb, c.dec[l][k], dh, g, dtemb, dprev);
      dh = std::move(dprev);
    }
    const Tensor<T>& skip = c.skips[l];
    Tensor<T> dup(dh.n, dh.h, dh.w, dh.c - skip.c);
    Tensor<T> dskip(skip.n, skip.h, skip.w, skip.c);
    ops::concat_backward<T>(dh, dup, dskip);
    dskips[l] = std::move(dskip);
    ops::upsample2_backward<T>(dup, dh);
  }
  for (int l = levels - 1; l >= 0; --l) {
    if (l + 1 < levels) {
      Tensor<T> dpre;
      ops::avgpool2_backward<T>(dh, dpre);
      for (std::size_t i = 0; i < dpre.size(); ++i) dpre.data[i] += dskips[l].data[i];
      dh = std::move(dpre);
    }
    for (int k = static_cast<int>(plan.enc[l].size()) - 1; k >= 0; --k) {
      Tensor<T> dprev;
      block_backward<T>(p, plan.enc[l][k], plan.groups, c.temb, c.enc[l][k], dh, g, dtemb, dprev);
      dh = std::move(dprev);
    }
  }
  ops::conv2d_backward<T>(c.x, view(p, plan.conv_in.w), 3, dh, view(g, plan.conv_in.w), view(g, plan.conv_in.b),
                          static_cast<Tensor<T>*>(nullptr));

  std::vector<T> dpre(dtemb.size());
  ops::silu_backward<T>(c.temb_pre, dtemb, dpre);
  ops::dense_backward<T>(c.temb_in, n, td, view(p, plan.temb_fc.w), td, dpre, view(g, plan.temb_fc.w),
                         view(g, plan.temb_fc.b), std::span<T>());
}

}  // namespace

void UNetConfig::validate() const {
  if (in_channels < 1) throw std::invalid_argument("UNetConfig: in_channels must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("UNetConfig: base_channels must be >= 1");
  if (channel_mult.empty()) throw std::invalid_argument("UNetConfig: at least one level is required");
  for (const int m : channel_mult) {
    if (m < 1) throw std::invalid_argument("UNetConfig: channel multipliers must be >= 1");
  }
  if (blocks_per_level < 1) throw std::invalid_argument("UNetConfig: blocks_per_level must be >= 1");
  if (temb_dim < 2 || temb_dim % 2 != 0) throw std::invalid_argument("UNetConfig: temb_dim must be even and >= 2");
  if (norm_groups < 1) throw std::invalid_argument("UNetConfig: norm_groups must be >= 1");
  for (std::size_t l = 0; l < channel_mult.size(); ++l) {
    const int ch = base_channels * channel_mult[l];
    if (ch % norm_groups != 0) throw std::invalid_argument("UNetConfig: channels not divisible by norm_groups");
    if (l + 1 < channel_mult.size() &&
        (base_channels * channel_mult[l + 1] + ch) % norm_groups != 0) {
      throw std::invalid_argument("UNetConfig: decoder concat channels not divisible by norm_groups");
    }
  }
}

std::string UNetConfig::describe() const {
  std::ostringstream os;
  os << "unet/v1 in=" << in_channels << " base=" << base_channels << " mult=";
  for (std::size_t i = 0; i < channel_mult.size(); ++i) os << (i ? "," : "") << channel_mult[i];
  os << " blocks=" << blocks_per_level << " temb=" << temb_dim << " groups=" << norm_groups;
  return os.str();
}

std::uint64_t UNetConfig::arch_hash() const { return hash_string(describe()); }

template <class T>
std::size_t UNetParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.data.size();
  return n;
}

template <class T>
const ParamTensor<T>& UNetParams<T>::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw std::out_of_range("no parameter tensor named " + name);
}

template <class T>
ParamTensor<T>& UNetParams<T>::get(const std::string& name) {
  return const_cast<ParamTensor<T>&>(static_cast<const UNetParams&>(*this).get(name));
}

template <class T>
UNetParams<T> UNetParams<T>::zeros_like() const {
  UNetParams z;
  z.config = config;
  for (const auto& t : tensors) z.tensors.push_back({t.name, t.shape, std::vector<T>(t.data.size(), T(0))});
  return z;
}

UNetParams<float> unet_init(const UNetConfig& config, RandomSource& rng, UNetInitOptions options) {
  const auto plan = build_plan(config);
  UNetParams<float> p;
  p.config = config;
  for (const auto& s : plan->specs) {
    const std::size_t count =
        std::accumulate(s.shape.begin(), s.shape.end(), std::size_t{1}, std::multiplies<std::size_t>());
    ParamTensor<float> t{s.name, s.shape, std::vector<float>(count, 0.0f)};
    const bool zero = options.zero_output && s.output_layer;
    switch (s.kind) {
      case Kind::conv_weight:
      case Kind::dense_weight: {
        if (zero) break;
        const double bound = std::sqrt(3.0 / s.fan_in);
        for (float& v : t.data) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
        break;
      }
      case Kind::gain:
        std::fill(t.data.begin(), t.data.end(), 1.0f);
        break;
      case Kind::bias:
      case Kind::shift:
        break;
    }
    p.tensors.push_back(std::move(t));
  }
  return p;
}

template <class T>
void timestep_embedding(int t, int dim, std::span<T> out) {
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out[i] = static_cast<T>(std::sin(t * freq));
    out[half + i] = static_cast<T>(std::cos(t * freq));
  }
}

template <class T>
UNetModel<T>::UNetModel(const UNetConfig& config) : config_(config), plan_(build_plan(config)) {}

template <class T>
void UNetModel<T>::predict(const UNetParams<T>& params, const Tensor<T>& x, std::span<const int> t,
                           Tensor<T>& out) const {
  if (params.arch_hash() != config_.arch_hash() || params.tensors.size() != plan_->specs.size()) {
    throw std::invalid_argument("unet: parameters do not match the model architecture");
  }
  check_inputs(config_, x, t);
  net_forward<T>(*plan_, params, x, t, out, nullptr);
}

template <class T>
double UNetModel<T>::loss_and_grad(const UNetParams<T>& params, const Tensor<T>& x, std::span<const int> t,
                                   const Tensor<T>& eps, double loss_scale, UNetParams<T>& grad) const {
  if (params.arch_hash() != config_.arch_hash() || params.tensors.size() != plan_->specs.size()) {
    throw std::invalid_argument("unet: parameters do not match the model architecture");
  }
  check_inputs(config_, x, t);
  if (!eps.same_shape(x)) throw std::invalid_argument("unet: target shape mismatch");
  NetCache<T> cache;
  Tensor<T> out;
  net_forward<T>(*plan_, params, x, t, out, &cache);
  double loss = 0.0;
  Tensor<T> dout(out.n, out.h, out.w, out.c);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = static_cast<double>(out.data[i]) - eps.data[i];
    loss += d * d;
    dout.data[i] = static_cast<T>(2.0 * loss_scale * d);
  }
  net_backward<T>(*plan_, params, cache, dout, grad);
  return loss;
}

Image unet_predict_eps(const UNetParams<float>& params, const Image& x_t, int t, int t_max) {
  if (t < 1 || t > t_max) throw std::out_of_range("unet_predict_eps: timestep out of range");
  const UNetModel<float> model(params.config);
  Tensor<float> x(1, x_t.height(), x_t.width(), 1);
  std::copy(x_t.data(), x_t.data() + x_t.size(), x.data.begin());
  Tensor<float> out;
  const int ts[1] = {t};
  model.predict(params, x, ts, out);
  return Image(x_t.height(), x_t.width(), std::move(out.data));
}

template struct UNetParams<float>;
template struct UNetParams<double>;
template class UNetModel<float>;
template class UNetModel<double>;
template void timestep_embedding<float>(int, int, std::span<float>);
template void timestep_embedding<double>(int, int, std::span<double>);

}  // namespace autoddpm
