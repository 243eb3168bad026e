#include "btseg/net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace btseg {

namespace {

int layer_reduction_steps(const LayerSpec& ls) {
  switch (ls.kind) {
    case LayerKind::Conv3:
      return 2;
    case LayerKind::ResidualStandard:
      return 4;
    case LayerKind::ResidualBottleneck:
      return 2;
  }
  return 0;
}

int pathway_reduction_steps(const PathwaySpec& p) {
  int r = 0;
  for (const LayerSpec& ls : p.layers) r += layer_reduction_steps(ls);
  return r;
}

int pathway_out_features(const PathwaySpec& p) {
  return p.empty() ? 0 : p.layers.back().features;
}

template <typename T>
struct Ten {
  int c = 0, nx = 0, ny = 0, nz = 0;
  std::vector<T> v;

  void resize(int c_, int nx_, int ny_, int nz_) {
    c = c_;
    nx = nx_;
    ny = ny_;
    nz = nz_;
    v.assign(std::size_t(c_) * nx_ * ny_ * nz_, T(0));
  }
  std::int64_t plane() const { return std::int64_t(nx) * ny * nz; }
  std::int64_t idx(int x, int y, int z) const {
    return x + std::int64_t(nx) * (y + std::int64_t(ny) * z);
  }
  T* ch(int ci) { return v.data() + ci * plane(); }
  const T* ch(int ci) const { return v.data() + ci * plane(); }
};

struct ConvUnit {
  int ci = 0, co = 0, k = 1;
  std::size_t w_off = 0, b_off = 0, w_count = 0;
};

struct Layout {
  std::vector<ConvUnit> native, low, head;
  std::size_t total = 0;
};

Layout build_layout(const NetworkSpec& spec) {
  Layout layout;
  std::size_t off = 0;
  const auto add_unit = [&](std::vector<ConvUnit>& units, int ci, int co, int k) {
    ConvUnit u;
    u.ci = ci;
    u.co = co;
    u.k = k;
    u.w_off = off;
    u.w_count = std::size_t(co) * ci * k * k * k;
    u.b_off = off + u.w_count;
    off = u.b_off + std::size_t(co);
    units.push_back(u);
  };
  const auto add_pathway = [&](const PathwaySpec& p, std::vector<ConvUnit>& units) {
    int ch = 1;
    for (const LayerSpec& ls : p.layers) {
      switch (ls.kind) {
        case LayerKind::Conv3:
          add_unit(units, ch, ls.features, 3);
          ch = ls.features;
          break;
        case LayerKind::ResidualStandard:
          add_unit(units, ch, ls.features, 3);
          add_unit(units, ls.features, ls.features, 3);
          break;
        case LayerKind::ResidualBottleneck:
          add_unit(units, ch, ls.bottleneck, 1);
          add_unit(units, ls.bottleneck, ls.bottleneck, 3);
          add_unit(units, ls.bottleneck, ls.features, 1);
          break;
      }
    }
  };
  add_pathway(spec.native, layout.native);
  if (!spec.low.empty()) add_pathway(spec.low, layout.low);
  int ch = spec.concat_features();
  for (int h : spec.hidden) {
    add_unit(layout.head, ch, h, 1);
    ch = h;
  }
  add_unit(layout.head, ch, spec.num_classes, 1);
  layout.total = off;
  return layout;
}

// Valid convolution; each output element accumulates bias first, then taps in
// (ic, kz, ky, kx) order, so the summation order is identical however the
// spatial shape was produced.
template <typename T>
void conv_forward(const Ten<T>& in, const T* w, const T* b, int k, int dil, int co, Ten<T>& out) {
  const int r = (k - 1) * dil;
  out.resize(co, in.nx - r, in.ny - r, in.nz - r);
  const int ci = in.c;
  for (int oc = 0; oc < co; ++oc) {
    T* dst = out.ch(oc);
    std::fill(dst, dst + out.plane(), b[oc]);
  }
  for (int oc = 0; oc < co; ++oc) {
    T* outc = out.ch(oc);
    for (int ic = 0; ic < ci; ++ic) {
      const T* inc = in.ch(ic);
      const T* wk = w + (std::size_t(oc) * ci + ic) * k * k * k;
      for (int kz = 0; kz < k; ++kz) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const T wv = wk[(kz * k + ky) * k + kx];
            for (int z = 0; z < out.nz; ++z) {
              for (int y = 0; y < out.ny; ++y) {
                const T* src = inc + in.idx(kx * dil, y + ky * dil, z + kz * dil);
                T* d = outc + out.idx(0, y, z);
                for (int x = 0; x < out.nx; ++x) d[x] += wv * src[x];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward(const Ten<T>& in, const T* w, int k, int dil, int co, const Ten<T>& dout,
                   Ten<T>* din, T* dw, T* db) {
  const int ci = in.c;
  if (din) din->resize(ci, in.nx, in.ny, in.nz);
  for (int oc = 0; oc < co; ++oc) {
    const T* doc = dout.ch(oc);
    T bias_acc = 0;
    for (std::int64_t e = 0; e < dout.plane(); ++e) bias_acc += doc[e];
    db[oc] += bias_acc;
    for (int ic = 0; ic < ci; ++ic) {
      const T* inc = in.ch(ic);
      T* dinc = din ? din->ch(ic) : nullptr;
      const T* wk = w + (std::size_t(oc) * ci + ic) * k * k * k;
      T* dwk = dw + (std::size_t(oc) * ci + ic) * k * k * k;
      for (int kz = 0; kz < k; ++kz) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const T wv = wk[(kz * k + ky) * k + kx];
            T acc = 0;
            for (int z = 0; z < dout.nz; ++z) {
              for (int y = 0; y < dout.ny; ++y) {
                const T* src = inc + in.idx(kx * dil, y + ky * dil, z + kz * dil);
                const T* g = doc + dout.idx(0, y, z);
                if (dinc) {
                  T* ds = dinc + in.idx(kx * dil, y + ky * dil, z + kz * dil);
                  for (int x = 0; x < dout.nx; ++x) {
                    acc += src[x] * g[x];
                    ds[x] += wv * g[x];
                  }
                } else {
                  for (int x = 0; x < dout.nx; ++x) acc += src[x] * g[x];
                }
              }
            }
            dwk[(kz * k + ky) * k + kx] += acc;
          }
        }
      }
    }
  }
}

template <typename T>
Ten<T> relu(const Ten<T>& in) {
  Ten<T> out = in;
  for (T& x : out.v) x = x > T(0) ? x : T(0);
  return out;
}

// Masks by the cached post-relu output: out > 0 iff the pre-activation was.
template <typename T>
void relu_backward_inplace(const Ten<T>& out, Ten<T>& d) {
  for (std::size_t i = 0; i < d.v.size(); ++i) {
    if (!(out.v[i] > T(0))) d.v[i] = T(0);
  }
}

// out += in cropped by `off` voxels on every side.
template <typename T>
void crop_add(const Ten<T>& in, int off, Ten<T>& out) {
  for (int c = 0; c < in.c; ++c) {
    const T* src = in.ch(c);
    T* dst = out.ch(c);
    for (int z = 0; z < out.nz; ++z) {
      for (int y = 0; y < out.ny; ++y) {
        const T* s = src + in.idx(off, y + off, z + off);
        T* d = dst + out.idx(0, y, z);
        for (int x = 0; x < out.nx; ++x) d[x] += s[x];
      }
    }
  }
}

// din[crop window] += dout.
template <typename T>
void crop_scatter_add(const Ten<T>& dout, int off, Ten<T>& din) {
  for (int c = 0; c < dout.c; ++c) {
    const T* src = dout.ch(c);
    T* dst = din.ch(c);
    for (int z = 0; z < dout.nz; ++z) {
      for (int y = 0; y < dout.ny; ++y) {
        const T* s = src + dout.idx(0, y, z);
        T* d = dst + din.idx(off, y + off, z + off);
        for (int x = 0; x < dout.nx; ++x) d[x] += s[x];
      }
    }
  }
}

// Cached tensors a pathway layer needs for its backward pass.
template <typename T>
using LayerTrace = std::vector<Ten<T>>;

template <typename T>
Ten<T> pathway_forward(const PathwaySpec& p, const std::vector<ConvUnit>& units,
                       std::span<const T> w, Ten<T> x, int dil,
                       std::vector<LayerTrace<T>>* trace) {
  std::size_t u = 0;
  for (const LayerSpec& ls : p.layers) {
    LayerTrace<T> lt;
    switch (ls.kind) {
      case LayerKind::Conv3: {
        const ConvUnit& cu = units[u++];
        if (trace) lt.push_back(x);
        Ten<T> y;
        conv_forward(x, w.data() + cu.w_off, w.data() + cu.b_off, cu.k, dil, cu.co, y);
        x = relu(y);
        if (trace) lt.push_back(x);
        break;
      }
      case LayerKind::ResidualStandard: {
        const ConvUnit& c1 = units[u++];
        const ConvUnit& c2 = units[u++];
        Ten<T> t0 = relu(x);
        Ten<T> t1;
        conv_forward(t0, w.data() + c1.w_off, w.data() + c1.b_off, c1.k, dil, c1.co, t1);
        Ten<T> t2 = relu(t1);
        Ten<T> t3;
        conv_forward(t2, w.data() + c2.w_off, w.data() + c2.b_off, c2.k, dil, c2.co, t3);
        crop_add(x, 2 * dil, t3);
        if (trace) {
          lt.push_back(std::move(t0));
          lt.push_back(std::move(t2));
        }
        x = std::move(t3);
        break;
      }
      case LayerKind::ResidualBottleneck: {
        const ConvUnit& ca = units[u++];
        const ConvUnit& cb = units[u++];
        const ConvUnit& cc = units[u++];
        Ten<T> t0 = relu(x);
        Ten<T> t1;
        conv_forward(t0, w.data() + ca.w_off, w.data() + ca.b_off, ca.k, dil, ca.co, t1);
        Ten<T> t2 = relu(t1);
        Ten<T> t3;
        conv_forward(t2, w.data() + cb.w_off, w.data() + cb.b_off, cb.k, dil, cb.co, t3);
        Ten<T> t4 = relu(t3);
        Ten<T> t5;
        conv_forward(t4, w.data() + cc.w_off, w.data() + cc.b_off, cc.k, dil, cc.co, t5);
        crop_add(x, dil, t5);
        if (trace) {
          lt.push_back(std::move(t0));
          lt.push_back(std::move(t2));
          lt.push_back(std::move(t4));
        }
        x = std::move(t5);
        break;
      }
    }
    if (trace) trace->push_back(std::move(lt));
  }
  return x;
}

// dy arrives for the pathway output; returns d(input) and accumulates dW/db.
template <typename T>
Ten<T> pathway_backward(const PathwaySpec& p, const std::vector<ConvUnit>& units,
                        std::span<const T> w, const std::vector<LayerTrace<T>>& trace, int dil,
                        Ten<T> dy, std::span<T> grad) {
  std::size_t u = units.size();
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const LayerSpec& ls = p.layers[li];
    const LayerTrace<T>& lt = trace[li];
    switch (ls.kind) {
      case LayerKind::Conv3: {
        const ConvUnit& cu = units[--u];
        const Ten<T>& x = lt[0];
        const Ten<T>& y = lt[1];
        relu_backward_inplace(y, dy);
        Ten<T> dx;
        conv_backward(x, w.data() + cu.w_off, cu.k, dil, cu.co, dy, &dx,
                      grad.data() + cu.w_off, grad.data() + cu.b_off);
        dy = std::move(dx);
        break;
      }
      case LayerKind::ResidualStandard: {
        const ConvUnit& c2 = units[--u];
        const ConvUnit& c1 = units[--u];
        const Ten<T>& t0 = lt[0];
        const Ten<T>& t2 = lt[1];
        Ten<T> dt2;
        conv_backward(t2, w.data() + c2.w_off, c2.k, dil, c2.co, dy, &dt2,
                      grad.data() + c2.w_off, grad.data() + c2.b_off);
        relu_backward_inplace(t2, dt2);
        Ten<T> dt0;
        conv_backward(t0, w.data() + c1.w_off, c1.k, dil, c1.co, dt2, &dt0,
                      grad.data() + c1.w_off, grad.data() + c1.b_off);
        relu_backward_inplace(t0, dt0);
        crop_scatter_add(dy, 2 * dil, dt0);
        dy = std::move(dt0);
        break;
      }
      case LayerKind::ResidualBottleneck: {
        const ConvUnit& cc = units[--u];
        const ConvUnit& cb = units[--u];
        const ConvUnit& ca = units[--u];
        const Ten<T>& t0 = lt[0];
        const Ten<T>& t2 = lt[1];
        const Ten<T>& t4 = lt[2];
        Ten<T> dt4;
        conv_backward(t4, w.data() + cc.w_off, cc.k, dil, cc.co, dy, &dt4,
                      grad.data() + cc.w_off, grad.data() + cc.b_off);
        relu_backward_inplace(t4, dt4);
        Ten<T> dt2;
        conv_backward(t2, w.data() + cb.w_off, cb.k, dil, cb.co, dt4, &dt2,
                      grad.data() + cb.w_off, grad.data() + cb.b_off);
        relu_backward_inplace(t2, dt2);
        Ten<T> dt0;
        conv_backward(t0, w.data() + ca.w_off, ca.k, dil, ca.co, dt2, &dt0,
                      grad.data() + ca.w_off, grad.data() + ca.b_off);
        relu_backward_inplace(t0, dt0);
        crop_scatter_add(dy, dil, dt0);
        dy = std::move(dt0);
        break;
      }
    }
  }
  return dy;
}

// Nearest upsample by `scale` followed by a center crop to `region`.
template <typename T>
Ten<T> upsample_crop(const Ten<T>& in, int scale, int region) {
  const int up = in.nx * scale;
  const int s = (up - region) / 2;
  Ten<T> out;
  out.resize(in.c, region, region, region);
  for (int c = 0; c < in.c; ++c) {
    const T* src = in.ch(c);
    T* dst = out.ch(c);
    std::int64_t o = 0;
    for (int z = 0; z < region; ++z) {
      const int sz = (z + s) / scale;
      for (int y = 0; y < region; ++y) {
        const int sy = (y + s) / scale;
        for (int x = 0; x < region; ++x) {
          dst[o++] = src[in.idx((x + s) / scale, sy, sz)];
        }
      }
    }
  }
  return out;
}

template <typename T>
Ten<T> upsample_crop_backward(const Ten<T>& dout, int scale, int in_side, int in_c) {
  const int up = in_side * scale;
  const int s = (up - dout.nx) / 2;
  Ten<T> din;
  din.resize(in_c, in_side, in_side, in_side);
  for (int c = 0; c < in_c; ++c) {
    const T* src = dout.ch(c);
    T* dst = din.ch(c);
    std::int64_t o = 0;
    for (int z = 0; z < dout.nz; ++z) {
      const int sz = (z + s) / scale;
      for (int y = 0; y < dout.ny; ++y) {
        const int sy = (y + s) / scale;
        for (int x = 0; x < dout.nx; ++x) {
          dst[din.idx((x + s) / scale, sy, sz)] += src[o++];
        }
      }
    }
  }
  return din;
}

template <typename T>
Ten<T> concat_channels(const Ten<T>& a, const Ten<T>& b) {
  Ten<T> out;
  out.resize(a.c + b.c, a.nx, a.ny, a.nz);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
  return out;
}

// Softmax over channels per spatial position, in place.
template <typename T>
void softmax_channels(Ten<T>& t) {
  const std::int64_t n = t.plane();
  for (std::int64_t e = 0; e < n; ++e) {
    T mx = t.v[e];
    for (int c = 1; c < t.c; ++c) mx = std::max(mx, t.v[c * n + e]);
    T sum = 0;
    for (int c = 0; c < t.c; ++c) {
      const T ex = std::exp(t.v[c * n + e] - mx);
      t.v[c * n + e] = ex;
      sum += ex;
    }
    for (int c = 0; c < t.c; ++c) t.v[c * n + e] /= sum;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// NetworkSpec

void NetworkSpec::validate() const {
  if (native.empty()) throw std::invalid_argument("native pathway must have at least one layer");
  const auto check_pathway = [](const PathwaySpec& p, const char* name) {
    if (p.layers.front().kind != LayerKind::Conv3) {
      throw std::invalid_argument(std::string(name) + " pathway must start with a conv layer");
    }
    int ch = 1;
    for (const LayerSpec& ls : p.layers) {
      if (ls.features <= 0) throw std::invalid_argument("layer features must be positive");
      switch (ls.kind) {
        case LayerKind::Conv3:
          ch = ls.features;
          break;
        case LayerKind::ResidualStandard:
          if (ch != ls.features) {
            throw std::invalid_argument("residual block features must match input channels");
          }
          break;
        case LayerKind::ResidualBottleneck:
          if (ch != ls.features) {
            throw std::invalid_argument("residual block features must match input channels");
          }
          if (ls.bottleneck <= 0) {
            throw std::invalid_argument("bottleneck width must be positive");
          }
          break;
      }
    }
  };
  check_pathway(native, "native");
  if (!low.empty()) check_pathway(low, "low");
  for (int h : hidden) {
    if (h <= 0) throw std::invalid_argument("hidden widths must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw std::invalid_argument("dropout must be in [0, 1)");
  }
  if (num_classes < 2 || num_classes > 255) {
    throw std::invalid_argument("num_classes must be in [2, 255]");
  }
  if (output_region <= 0 || output_region % 2 == 0) {
    throw std::invalid_argument("output_region must be odd and positive");
  }
}

int NetworkSpec::native_reduction() const { return pathway_reduction_steps(native); }
int NetworkSpec::low_reduction_steps() const { return pathway_reduction_steps(low); }

int NetworkSpec::low_output_size() const {
  if (low.empty()) return 0;
  return (output_region + low_scale - 1) / low_scale;
}

int NetworkSpec::concat_features() const {
  return pathway_out_features(native) + pathway_out_features(low);
}

std::size_t NetworkSpec::param_count() const { return build_layout(*this).total; }

PatchRequest NetworkSpec::patch_request() const {
  PatchRequest r;
  r.native_size = native_input_size();
  r.low_size = low.empty() ? 0 : low_input_size();
  r.low_scale = low_scale;
  r.output_region = output_region;
  return r;
}

// ---------------------------------------------------------------------------
// Network

template <typename T>
Network<T>::Network(NetworkSpec spec, std::vector<T> weights)
    : spec_(std::move(spec)), weights_(std::move(weights)) {
  spec_.validate();
  if (weights_.size() != spec_.param_count()) {
    throw std::invalid_argument("weight vector length does not match the network spec");
  }
  for (T w : weights_) {
    if (!std::isfinite(double(w))) throw std::invalid_argument("network weights must be finite");
  }
}

template <typename T>
std::vector<std::uint8_t> Network<T>::decay_mask() const {
  const Layout layout = build_layout(spec_);
  std::vector<std::uint8_t> mask(layout.total, 1);
  const ConvUnit& cls = layout.head.back();
  std::fill(mask.begin() + cls.w_off, mask.begin() + cls.b_off + cls.co, 0);
  return mask;
}

template <typename T>
Network<T> glorot_init(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Layout layout = build_layout(spec);
  std::vector<T> w(layout.total, T(0));
  RngStream rng(seed);
  const auto init_units = [&](const std::vector<ConvUnit>& units) {
    for (const ConvUnit& u : units) {
      const double fan_in = double(u.ci) * u.k * u.k * u.k;
      const double fan_out = double(u.co) * u.k * u.k * u.k;
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (std::size_t i = 0; i < u.w_count; ++i) {
        w[u.w_off + i] = T(rng.uniform(-limit, limit));
      }
      // biases stay zero
    }
  };
  init_units(layout.native);
  init_units(layout.low);
  init_units(layout.head);
  return Network<T>(spec, std::move(w));
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
struct SampleTrace {
  Ten<T> native_in, low_in;
  std::vector<LayerTrace<T>> native_trace, low_trace;
  int low_out_side = 0, low_out_c = 0;
  // Head: per unit, the post-dropout conv input, dropout mask (empty when
  // inactive), and the post-relu output (hidden units only).
  std::vector<Ten<T>> head_inputs;
  std::vector<std::vector<std::uint8_t>> head_masks;
  std::vector<Ten<T>> head_outputs;
  Ten<T> probs;
};

template <typename T>
struct BatchCache {
  std::uint64_t net_version = 0;
  std::vector<SampleTrace<T>> samples;
};

namespace {

template <typename T>
Ten<T> patch_to_tensor(const Patch& p) {
  Ten<T> t;
  t.resize(1, p.size, p.size, p.size);
  for (std::size_t i = 0; i < p.data.size(); ++i) t.v[i] = T(p.data[i]);
  return t;
}

void check_batch(const NetworkSpec& spec, std::span<const BatchSample> batch) {
  const int region = spec.output_region;
  const std::size_t target_count = std::size_t(region) * region * region;
  for (const BatchSample& s : batch) {
    if (s.native.size != spec.native_input_size() || s.native.scale != 1) {
      throw std::invalid_argument("native patch size does not match the network spec");
    }
    if (spec.low.empty() != !s.low.has_value()) {
      throw std::invalid_argument("sample pathway patches do not match the network spec");
    }
    if (s.low && (s.low->size != spec.low_input_size() || s.low->scale != NetworkSpec::low_scale)) {
      throw std::invalid_argument("low patch size does not match the network spec");
    }
    if (s.targets.size() != target_count) {
      throw std::invalid_argument("target count does not match the output region");
    }
    for (std::uint8_t t : s.targets) {
      if (t >= spec.num_classes) throw std::invalid_argument("target class out of range");
    }
  }
}

// Head (dense 1x1x1 stack) shared by the sample and volume paths.
template <typename T>
Ten<T> head_forward(const NetworkSpec& spec, const std::vector<ConvUnit>& units,
                    std::span<const T> w, Ten<T> x, Mode mode, RngStream* rng,
                    SampleTrace<T>* trace) {
  const bool drop = mode == Mode::Train && spec.dropout > 0.0;
  const T keep = T(1.0 - spec.dropout);
  for (std::size_t i = 0; i < units.size(); ++i) {
    const ConvUnit& u = units[i];
    std::vector<std::uint8_t> mask;
    if (drop) {
      mask.resize(x.v.size());
      for (std::size_t e = 0; e < x.v.size(); ++e) {
        mask[e] = rng->uniform() >= spec.dropout ? 1 : 0;
        x.v[e] = mask[e] ? x.v[e] / keep : T(0);
      }
    }
    if (trace) {
      trace->head_inputs.push_back(x);
      trace->head_masks.push_back(std::move(mask));
    }
    Ten<T> y;
    conv_forward(x, w.data() + u.w_off, w.data() + u.b_off, u.k, 1, u.co, y);
    if (i + 1 < units.size()) {
      x = relu(y);
      if (trace) trace->head_outputs.push_back(x);
    } else {
      x = std::move(y);  // logits
    }
  }
  softmax_channels(x);
  return x;
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const Network<T>& net, std::span<const BatchSample> batch, Mode mode,
                         RngStream* dropout_rng) {
  const NetworkSpec& spec = net.spec();
  check_batch(spec, batch);
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  if (mode == Mode::Train && spec.dropout > 0.0 && dropout_rng == nullptr) {
    throw std::invalid_argument("train-mode forward needs a dropout rng");
  }

  const Layout layout = build_layout(spec);
  const int region = spec.output_region;

  ForwardResult<T> result;
  result.samples = int(batch.size());
  result.num_classes = spec.num_classes;
  result.region = region;
  result.probs.resize(std::size_t(batch.size()) * spec.num_classes * region * region * region);

  std::shared_ptr<BatchCache<T>> cache;
  if (mode == Mode::Train) {
    cache = std::make_shared<BatchCache<T>>();
    cache->net_version = net.version();
    cache->samples.resize(batch.size());
  }

  const std::span<const T> w = net.weights();
  for (std::size_t si = 0; si < batch.size(); ++si) {
    SampleTrace<T>* trace = cache ? &cache->samples[si] : nullptr;
    Ten<T> nat_in = patch_to_tensor<T>(batch[si].native);
    if (trace) trace->native_in = nat_in;
    Ten<T> nat = pathway_forward(spec.native, layout.native, w, std::move(nat_in), 1,
                                 trace ? &trace->native_trace : nullptr);
    Ten<T> feat;
    if (!spec.low.empty()) {
      Ten<T> low_in = patch_to_tensor<T>(*batch[si].low);
      if (trace) trace->low_in = low_in;
      Ten<T> low = pathway_forward(spec.low, layout.low, w, std::move(low_in), 1,
                                   trace ? &trace->low_trace : nullptr);
      if (trace) {
        trace->low_out_side = low.nx;
        trace->low_out_c = low.c;
      }
      feat = concat_channels(nat, upsample_crop(low, NetworkSpec::low_scale, region));
    } else {
      feat = std::move(nat);
    }
    Ten<T> probs = head_forward(spec, layout.head, w, std::move(feat), mode, dropout_rng, trace);
    std::copy(probs.v.begin(), probs.v.end(),
              result.probs.begin() + std::int64_t(si) * spec.num_classes * probs.plane());
    if (trace) trace->probs = std::move(probs);
  }
  result.cache = std::move(cache);
  return result;
}

template <typename T>
T cross_entropy(const ForwardResult<T>& result, std::span<const BatchSample> batch) {
  if (int(batch.size()) != result.samples) {
    throw std::invalid_argument("cross_entropy: batch does not match the forward result");
  }
  const std::int64_t voxels = result.voxels();
  double total = 0.0;
  for (int s = 0; s < result.samples; ++s) {
    for (std::int64_t e = 0; e < voxels; ++e) {
      const double p = std::max(double(result.prob(s, batch[s].targets[e], e)), 1e-12);
      total -= std::log(p);
    }
  }
  return T(total / double(result.samples * voxels));
}

template <typename T>
std::vector<T> backward(const Network<T>& net, const ForwardResult<T>& result,
                        std::span<const BatchSample> batch) {
  const NetworkSpec& spec = net.spec();
  if (!result.cache) {
    throw std::logic_error("backward requires a train-mode forward result");
  }
  if (result.cache->net_version != net.version()) {
    throw std::logic_error("stale forward cache: weights changed since forward");
  }
  if (int(batch.size()) != result.samples) {
    throw std::invalid_argument("backward: batch does not match the forward result");
  }

  const Layout layout = build_layout(spec);
  const std::span<const T> w = net.weights();
  std::vector<T> grad(layout.total, T(0));
  const std::span<T> gspan(grad);

  const int region = spec.output_region;
  const std::int64_t voxels = std::int64_t(region) * region * region;
  const T scale = T(1) / T(double(result.samples) * double(voxels));
  const bool drop = spec.dropout > 0.0;
  const T keep = T(1.0 - spec.dropout);

  for (int si = 0; si < result.samples; ++si) {
    const SampleTrace<T>& trace = result.cache->samples[si];

    // d(loss)/d(logits) = (softmax - onehot) / (samples * voxels)
    Ten<T> d;
    d.resize(spec.num_classes, region, region, region);
    for (std::int64_t e = 0; e < voxels; ++e) {
      for (int c = 0; c < spec.num_classes; ++c) {
        const T p = trace.probs.v[c * voxels + e];
        const T y = batch[si].targets[e] == c ? T(1) : T(0);
        d.v[c * voxels + e] = (p - y) * scale;
      }
    }

    // Head, in reverse.
    for (std::size_t i = layout.head.size(); i-- > 0;) {
      const ConvUnit& u = layout.head[i];
      if (i + 1 < layout.head.size()) {
        relu_backward_inplace(trace.head_outputs[i], d);
      }
      Ten<T> dx;
      conv_backward(trace.head_inputs[i], w.data() + u.w_off, u.k, 1, u.co, d, &dx,
                    grad.data() + u.w_off, grad.data() + u.b_off);
      if (drop) {
        const std::vector<std::uint8_t>& mask = trace.head_masks[i];
        for (std::size_t e = 0; e < dx.v.size(); ++e) {
          dx.v[e] = mask[e] ? dx.v[e] / keep : T(0);
        }
      }
      d = std::move(dx);
    }

    // Split the concat gradient between the pathways.
    if (!spec.low.empty()) {
      const int nat_c = pathway_out_features(spec.native);
      Ten<T> dnat;
      dnat.resize(nat_c, region, region, region);
      std::copy(d.v.begin(), d.v.begin() + dnat.v.size(), dnat.v.begin());
      Ten<T> dlow_up;
      dlow_up.resize(trace.low_out_c, region, region, region);
      std::copy(d.v.begin() + dnat.v.size(), d.v.end(), dlow_up.v.begin());
      Ten<T> dlow = upsample_crop_backward(dlow_up, NetworkSpec::low_scale, trace.low_out_side,
                                           trace.low_out_c);
      pathway_backward(spec.low, layout.low, w, trace.low_trace, 1, std::move(dlow), gspan);
      pathway_backward(spec.native, layout.native, w, trace.native_trace, 1, std::move(dnat),
                       gspan);
    } else {
      pathway_backward(spec.native, layout.native, w, trace.native_trace, 1, std::move(d), gspan);
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Dense inference over a volume box

std::vector<float> infer_region(const Network<float>& net, const Volume& volume, Vec3i origin,
                                Vec3i size) {
  const NetworkSpec& spec = net.spec();
  const Layout layout = build_layout(spec);
  const std::span<const float> w = net.weights();

  const int rn = spec.native_reduction();
  Ten<float> nat_in;
  nat_in.c = 1;
  nat_in.nx = size.x + rn;
  nat_in.ny = size.y + rn;
  nat_in.nz = size.z + rn;
  nat_in.v = extract_box(volume, {origin.x - rn / 2, origin.y - rn / 2, origin.z - rn / 2},
                         {nat_in.nx, nat_in.ny, nat_in.nz});
  Ten<float> feat = pathway_forward(spec.native, layout.native, w, std::move(nat_in), 1,
                                    static_cast<std::vector<LayerTrace<float>>*>(nullptr));

  if (!spec.low.empty()) {
    const int rl = NetworkSpec::low_scale * spec.low_reduction_steps();
    Ten<float> low_in;
    low_in.c = 1;
    low_in.nx = size.x + rl;
    low_in.ny = size.y + rl;
    low_in.nz = size.z + rl;
    low_in.v = extract_box(volume, {origin.x - rl / 2, origin.y - rl / 2, origin.z - rl / 2},
                           {low_in.nx, low_in.ny, low_in.nz});
    Ten<float> low =
        pathway_forward(spec.low, layout.low, w, std::move(low_in), NetworkSpec::low_scale,
                        static_cast<std::vector<LayerTrace<float>>*>(nullptr));
    feat = concat_channels(feat, low);
  }

  // Dense head in eval mode; softmax over channels.
  for (std::size_t i = 0; i < layout.head.size(); ++i) {
    const ConvUnit& u = layout.head[i];
    Ten<float> y;
    conv_forward(feat, w.data() + u.w_off, w.data() + u.b_off, u.k, 1, u.co, y);
    feat = i + 1 < layout.head.size() ? relu(y) : std::move(y);
  }
  softmax_channels(feat);
  return std::move(feat.v);
}

template class Network<float>;
template class Network<double>;
template Network<float> glorot_init<float>(const NetworkSpec&, std::uint64_t);
template Network<double> glorot_init<double>(const NetworkSpec&, std::uint64_t);
template ForwardResult<float> forward<float>(const Network<float>&, std::span<const BatchSample>,
                                             Mode, RngStream*);
template ForwardResult<double> forward<double>(const Network<double>&,
                                               std::span<const BatchSample>, Mode, RngStream*);
template float cross_entropy<float>(const ForwardResult<float>&, std::span<const BatchSample>);
template double cross_entropy<double>(const ForwardResult<double>&, std::span<const BatchSample>);
template std::vector<float> backward<float>(const Network<float>&, const ForwardResult<float>&,
                                            std::span<const BatchSample>);
template std::vector<double> backward<double>(const Network<double>&, const ForwardResult<double>&,
                                              std::span<const BatchSample>);

}  // namespace btseg
