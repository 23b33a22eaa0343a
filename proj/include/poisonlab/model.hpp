#pragma once

// Mean-pooled embedding classifier:
//   x = mean_t E[t];  h = tanh(x W1 + b1);  p = softmax(h W2 + b2)
// with exact gradients and Hessian-vector products of the mean NLL.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "poisonlab/corpus.hpp"
#include "poisonlab/dual.hpp"
#include "poisonlab/error.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

struct ModelShape {
  std::size_t vocab_size = 0;
  std::size_t emb_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_classes = 0;

  std::size_t embeddings_size() const { return vocab_size * emb_dim; }
  std::size_t hidden_w_offset() const { return embeddings_size(); }
  std::size_t hidden_b_offset() const { return hidden_w_offset() + emb_dim * hidden_dim; }
  std::size_t out_w_offset() const { return hidden_b_offset() + hidden_dim; }
  std::size_t out_b_offset() const { return out_w_offset() + hidden_dim * num_classes; }
  std::size_t param_count() const { return out_b_offset() + num_classes; }

  bool operator==(const ModelShape&) const = default;
};

/// Parameters in the canonical flat layout: embeddings (row-major,
/// vocab_size x emb_dim), hidden_w (emb_dim x hidden_dim), hidden_b,
/// out_w (hidden_dim x num_classes), out_b.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const ModelShape& shape) : shape_(shape), values_(shape.param_count(), 0.0) {}
  ModelParams(const ModelShape& shape, std::vector<double> values) : shape_(shape), values_(std::move(values)) {
    if (values_.size() != shape_.param_count()) {
      throw ValidationError("ModelParams: " + std::to_string(values_.size()) + " values for shape with " +
                            std::to_string(shape_.param_count()) + " parameters");
    }
  }

  const ModelShape& shape() const { return shape_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double> embeddings() { return block(0, shape_.embeddings_size()); }
  std::span<const double> embeddings() const { return block(0, shape_.embeddings_size()); }
  std::span<double> embedding_row(TokenId id) { return block(std::size_t{id} * shape_.emb_dim, shape_.emb_dim); }
  std::span<const double> embedding_row(TokenId id) const {
    return block(std::size_t{id} * shape_.emb_dim, shape_.emb_dim);
  }
  std::span<double> hidden_w() { return block(shape_.hidden_w_offset(), shape_.emb_dim * shape_.hidden_dim); }
  std::span<const double> hidden_w() const {
    return block(shape_.hidden_w_offset(), shape_.emb_dim * shape_.hidden_dim);
  }
  std::span<double> hidden_b() { return block(shape_.hidden_b_offset(), shape_.hidden_dim); }
  std::span<const double> hidden_b() const { return block(shape_.hidden_b_offset(), shape_.hidden_dim); }
  std::span<double> out_w() { return block(shape_.out_w_offset(), shape_.hidden_dim * shape_.num_classes); }
  std::span<const double> out_w() const {
    return block(shape_.out_w_offset(), shape_.hidden_dim * shape_.num_classes);
  }
  std::span<double> out_b() { return block(shape_.out_b_offset(), shape_.num_classes); }
  std::span<const double> out_b() const { return block(shape_.out_b_offset(), shape_.num_classes); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
  }

  bool operator==(const ModelParams&) const = default;

 private:
  std::span<double> block(std::size_t off, std::size_t n) { return std::span<double>(values_).subspan(off, n); }
  std::span<const double> block(std::size_t off, std::size_t n) const {
    return std::span<const double>(values_).subspan(off, n);
  }

  ModelShape shape_;
  std::vector<double> values_;
};

/// A vector in parameter space (gradients, HVP inputs and outputs).
struct FlatVector {
  std::vector<double> values;

  FlatVector() = default;
  explicit FlatVector(std::size_t n, double fill = 0.0) : values(n, fill) {}
  explicit FlatVector(std::vector<double> v) : values(std::move(v)) {}

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  bool operator==(const FlatVector&) const = default;
};

inline double dot(const FlatVector& a, const FlatVector& b) {
  if (a.size() != b.size()) throw ValidationError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y += alpha * x
inline void axpy(double alpha, const FlatVector& x, FlatVector& y) {
  if (x.size() != y.size()) throw ValidationError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline bool all_finite(const FlatVector& v) {
  return std::all_of(v.values.begin(), v.values.end(), [](double x) { return std::isfinite(x); });
}

inline FlatVector flatten(const ModelParams& p) {
  return FlatVector(std::vector<double>(p.values().begin(), p.values().end()));
}

inline ModelParams unflatten(const ModelShape& shape, const FlatVector& v) {
  if (v.size() != shape.param_count()) {
    throw ValidationError("unflatten: vector of length " + std::to_string(v.size()) + ", expected " +
                          std::to_string(shape.param_count()));
  }
  return ModelParams(shape, v.values);
}

/// Zero-mean normal init with variance 1/fan_in for every weight matrix
/// (fan_in = emb_dim for embeddings and hidden_w, hidden_dim for out_w);
/// biases start at zero.
inline ModelParams init_params(std::size_t vocab_size, std::size_t emb_dim, std::size_t hidden_dim,
                               std::size_t num_classes, std::uint64_t seed) {
  if (vocab_size == 0 || emb_dim == 0 || hidden_dim == 0 || num_classes == 0) {
    throw ValidationError("init_params: all dimensions must be >= 1");
  }
  ModelParams p({vocab_size, emb_dim, hidden_dim, num_classes});
  Rng rng(seed);
  const double emb_scale = 1.0 / std::sqrt(static_cast<double>(emb_dim));
  const double out_scale = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (double& x : p.embeddings()) x = emb_scale * rng.normal();
  for (double& x : p.hidden_w()) x = emb_scale * rng.normal();
  for (double& x : p.out_w()) x = out_scale * rng.normal();
  return p;
}

using Batch = std::span<const Example>;

namespace detail {

// A batch re-indexed onto the embedding rows it touches.
struct LocalBatch {
  std::vector<TokenId> rows;                     // local row -> global token id
  std::vector<std::vector<std::uint32_t>> tokens;  // per example, local rows
  std::vector<Label> labels;
};

inline LocalBatch localize(const ModelShape& shape, Batch batch) {
  if (batch.empty()) throw ValidationError("empty batch");
  LocalBatch lb;
  std::unordered_map<TokenId, std::uint32_t> index;
  lb.tokens.reserve(batch.size());
  lb.labels.reserve(batch.size());
  for (const auto& ex : batch) {
    if (ex.token_ids.empty()) throw ValidationError("example with no tokens");
    if (ex.label >= shape.num_classes) {
      throw ValidationError("label " + std::to_string(ex.label) + " out of range for " +
                            std::to_string(shape.num_classes) + " classes");
    }
    std::vector<std::uint32_t> local;
    local.reserve(ex.token_ids.size());
    for (TokenId t : ex.token_ids) {
      if (t >= shape.vocab_size) {
        throw ValidationError("token id " + std::to_string(t) + " out of range for vocab of " +
                              std::to_string(shape.vocab_size));
      }
      auto [it, inserted] = index.try_emplace(t, static_cast<std::uint32_t>(lb.rows.size()));
      if (inserted) lb.rows.push_back(t);
      local.push_back(it->second);
    }
    lb.tokens.push_back(std::move(local));
    lb.labels.push_back(ex.label);
  }
  return lb;
}

template <class S>
struct LocalParams {
  std::size_t d = 0, h = 0, c = 0;
  std::vector<S> emb, w1, b1, w2, b2;

  LocalParams(std::size_t rows, std::size_t d_, std::size_t h_, std::size_t c_)
      : d(d_), h(h_), c(c_), emb(rows * d_), w1(d_ * h_), b1(h_), w2(h_ * c_), b2(c_) {}
};

// Builds local parameters, seeding tangents from `direction` when S is Dual.
template <class S>
LocalParams<S> gather(const ModelParams& p, const LocalBatch& lb, const FlatVector* direction = nullptr) {
  const auto& sh = p.shape();
  LocalParams<S> lp(lb.rows.size(), sh.emb_dim, sh.hidden_dim, sh.num_classes);
  const auto vals = p.values();
  auto load = [&](std::vector<S>& dst, std::size_t off) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if constexpr (std::is_same_v<S, Dual>) {
        dst[i] = Dual(vals[off + i], direction ? (*direction)[off + i] : 0.0);
      } else {
        dst[i] = vals[off + i];
      }
    }
  };
  for (std::size_t r = 0; r < lb.rows.size(); ++r) {
    const std::size_t off = std::size_t{lb.rows[r]} * sh.emb_dim;
    for (std::size_t k = 0; k < sh.emb_dim; ++k) {
      if constexpr (std::is_same_v<S, Dual>) {
        lp.emb[r * sh.emb_dim + k] = Dual(vals[off + k], direction ? (*direction)[off + k] : 0.0);
      } else {
        lp.emb[r * sh.emb_dim + k] = vals[off + k];
      }
    }
  }
  load(lp.w1, sh.hidden_w_offset());
  load(lp.b1, sh.hidden_b_offset());
  load(lp.w2, sh.out_w_offset());
  load(lp.b2, sh.out_b_offset());
  return lp;
}

// Writes a local gradient (or its tangent) into a full-length vector.
template <class S, class Part>
FlatVector scatter(const ModelShape& sh, const LocalBatch& lb, const LocalParams<S>& g, Part part) {
  FlatVector out(sh.param_count());
  for (std::size_t r = 0; r < lb.rows.size(); ++r) {
    const std::size_t off = std::size_t{lb.rows[r]} * sh.emb_dim;
    for (std::size_t k = 0; k < sh.emb_dim; ++k) out[off + k] = part(g.emb[r * sh.emb_dim + k]);
  }
  auto store = [&](const std::vector<S>& src, std::size_t off) {
    for (std::size_t i = 0; i < src.size(); ++i) out[off + i] = part(src[i]);
  };
  store(g.w1, sh.hidden_w_offset());
  store(g.b1, sh.hidden_b_offset());
  store(g.w2, sh.out_w_offset());
  store(g.b2, sh.out_b_offset());
  return out;
}

// Mean NLL over the batch; when `grad` is non-null, accumulates its gradient.
template <class S>
S loss_kernel(const LocalParams<S>& p, const LocalBatch& lb, LocalParams<S>* grad) {
  using std::exp;
  using std::log;
  using std::tanh;
  const std::size_t d = p.d, h = p.h, c = p.c;
  const double inv_b = 1.0 / static_cast<double>(lb.labels.size());
  std::vector<S> x(d), hid(h), z(c), dz(c), dh(h), dx(d);
  S total = 0.0;

  for (std::size_t e = 0; e < lb.labels.size(); ++e) {
    const auto& toks = lb.tokens[e];
    const double inv_len = 1.0 / static_cast<double>(toks.size());
    std::fill(x.begin(), x.end(), S(0.0));
    for (auto r : toks) {
      for (std::size_t k = 0; k < d; ++k) x[k] += p.emb[r * d + k];
    }
    for (auto& v : x) v = v * S(inv_len);

    for (std::size_t j = 0; j < h; ++j) hid[j] = p.b1[j];
    for (std::size_t k = 0; k < d; ++k) {
      for (std::size_t j = 0; j < h; ++j) hid[j] += x[k] * p.w1[k * h + j];
    }
    for (auto& v : hid) v = tanh(v);

    for (std::size_t q = 0; q < c; ++q) z[q] = p.b2[q];
    for (std::size_t j = 0; j < h; ++j) {
      for (std::size_t q = 0; q < c; ++q) z[q] += hid[j] * p.w2[j * c + q];
    }
    S zmax = z[0];
    for (std::size_t q = 1; q < c; ++q) {
      if (zmax < z[q]) zmax = z[q];
    }
    S sum = 0.0;
    for (std::size_t q = 0; q < c; ++q) sum += exp(z[q] - zmax);
    const S lse = zmax + log(sum);
    const Label y = lb.labels[e];
    total += lse - z[y];

    if (!grad) continue;
    for (std::size_t q = 0; q < c; ++q) {
      dz[q] = exp(z[q] - lse) * S(inv_b);
      if (q == y) dz[q] -= S(inv_b);
    }
    for (std::size_t j = 0; j < h; ++j) {
      S acc = 0.0;
      for (std::size_t q = 0; q < c; ++q) {
        grad->w2[j * c + q] += hid[j] * dz[q];
        acc += p.w2[j * c + q] * dz[q];
      }
      dh[j] = acc * (S(1.0) - hid[j] * hid[j]);
    }
    for (std::size_t q = 0; q < c; ++q) grad->b2[q] += dz[q];
    for (std::size_t j = 0; j < h; ++j) grad->b1[j] += dh[j];
    for (std::size_t k = 0; k < d; ++k) {
      S acc = 0.0;
      for (std::size_t j = 0; j < h; ++j) {
        grad->w1[k * h + j] += x[k] * dh[j];
        acc += p.w1[k * h + j] * dh[j];
      }
      dx[k] = acc * S(inv_len);
    }
    for (auto r : toks) {
      for (std::size_t k = 0; k < d; ++k) grad->emb[r * d + k] += dx[k];
    }
  }
  return total * S(inv_b);
}

}  // namespace detail

/// Class probabilities, one row per example.
struct ProbMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return std::span<const double>(data).subspan(i * cols, cols); }
};

/// Probabilities for one token sequence. `probs` must have num_classes slots.
inline void predict_proba(const ModelParams& params, std::span<const TokenId> tokens, std::span<double> probs) {
  const auto& sh = params.shape();
  if (tokens.empty()) throw ValidationError("predict: empty token sequence");
  const std::size_t d = sh.emb_dim, h = sh.hidden_dim, c = sh.num_classes;
  std::vector<double> x(d, 0.0), hid(h);
  for (TokenId t : tokens) {
    if (t >= sh.vocab_size) throw ValidationError("token id " + std::to_string(t) + " out of range");
    auto row = params.embedding_row(t);
    for (std::size_t k = 0; k < d; ++k) x[k] += row[k];
  }
  const double inv_len = 1.0 / static_cast<double>(tokens.size());
  for (auto& v : x) v *= inv_len;
  auto w1 = params.hidden_w();
  auto b1 = params.hidden_b();
  auto w2 = params.out_w();
  auto b2 = params.out_b();
  for (std::size_t j = 0; j < h; ++j) hid[j] = b1[j];
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t j = 0; j < h; ++j) hid[j] += x[k] * w1[k * h + j];
  }
  for (auto& v : hid) v = std::tanh(v);
  for (std::size_t q = 0; q < c; ++q) probs[q] = b2[q];
  for (std::size_t j = 0; j < h; ++j) {
    for (std::size_t q = 0; q < c; ++q) probs[q] += hid[j] * w2[j * c + q];
  }
  const double zmax = *std::max_element(probs.begin(), probs.end());
  double sum = 0.0;
  for (auto& v : probs) {
    v = std::exp(v - zmax);
    sum += v;
  }
  for (auto& v : probs) v /= sum;
}

/// Argmax class; ties go to the lowest class id.
inline Label predict(const ModelParams& params, std::span<const TokenId> tokens) {
  std::vector<double> probs(params.shape().num_classes);
  predict_proba(params, tokens, probs);
  return static_cast<Label>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

inline ProbMatrix forward(const ModelParams& params, Batch batch) {
  const std::size_t c = params.shape().num_classes;
  ProbMatrix out{batch.size(), c, std::vector<double>(batch.size() * c)};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    predict_proba(params, batch[i].token_ids, std::span<double>(out.data).subspan(i * c, c));
  }
  return out;
}

inline double loss(const ModelParams& params, Batch batch) {
  auto lb = detail::localize(params.shape(), batch);
  auto lp = detail::gather<double>(params, lb);
  return detail::loss_kernel<double>(lp, lb, nullptr);
}

struct LossAndGrad {
  double loss = 0.0;
  FlatVector grad;
};

inline LossAndGrad loss_and_grad(const ModelParams& params, Batch batch) {
  const auto& sh = params.shape();
  auto lb = detail::localize(sh, batch);
  auto lp = detail::gather<double>(params, lb);
  detail::LocalParams<double> g(lb.rows.size(), sh.emb_dim, sh.hidden_dim, sh.num_classes);
  const double l = detail::loss_kernel<double>(lp, lb, &g);
  return {l, detail::scatter(sh, lb, g, [](double v) { return v; })};
}

inline FlatVector grad(const ModelParams& params, Batch batch) { return loss_and_grad(params, batch).grad; }

/// Exact H*v, H the Hessian of the batch loss, by forward-over-reverse
/// differentiation. H is never formed.
inline FlatVector hvp(const ModelParams& params, Batch batch, const FlatVector& v) {
  const auto& sh = params.shape();
  if (v.size() != sh.param_count()) {
    throw ValidationError("hvp: direction of length " + std::to_string(v.size()) + ", expected " +
                          std::to_string(sh.param_count()));
  }
  auto lb = detail::localize(sh, batch);
  auto lp = detail::gather<Dual>(params, lb, &v);
  detail::LocalParams<Dual> g(lb.rows.size(), sh.emb_dim, sh.hidden_dim, sh.num_classes);
  detail::loss_kernel<Dual>(lp, lb, &g);
  return detail::scatter(sh, lb, g, [](const Dual& x) { return x.tangent; });
}

/// Central difference of gradients, (g(θ+εv) - g(θ-εv)) / 2ε. Cross-check only.
inline FlatVector hvp_finite_difference(const ModelParams& params, Batch batch, const FlatVector& v,
                                        double eps = 1e-3) {
  if (v.size() != params.shape().param_count()) throw ValidationError("hvp_finite_difference: length mismatch");
  FlatVector plus = flatten(params), minus = flatten(params);
  axpy(eps, v, plus);
  axpy(-eps, v, minus);
  FlatVector gp = grad(unflatten(params.shape(), plus), batch);
  FlatVector gm = grad(unflatten(params.shape(), minus), batch);
  for (std::size_t i = 0; i < gp.size(); ++i) gp[i] = (gp[i] - gm[i]) / (2.0 * eps);
  return gp;
}

// Checkpoint layout (all little-endian):
//   8 bytes magic "PLABCKPT", u64 format version,
//   u64 vocab_size, emb_dim, hidden_dim, num_classes, param_count,
//   param_count f64 values in canonical order.
inline constexpr std::array<char, 8> kCheckpointMagic{'P', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
inline constexpr std::uint64_t kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointHeaderBytes = 8 + 8 * 6;

namespace detail {

inline void put_u64(std::string& buf, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= std::uint64_t{p[i]} << (8 * i);
  return x;
}

}  // namespace detail

inline std::string serialize_checkpoint(const ModelParams& params) {
  const auto& sh = params.shape();
  std::string buf(kCheckpointMagic.begin(), kCheckpointMagic.end());
  buf.reserve(kCheckpointHeaderBytes + 8 * sh.param_count());
  detail::put_u64(buf, kCheckpointVersion);
  detail::put_u64(buf, sh.vocab_size);
  detail::put_u64(buf, sh.emb_dim);
  detail::put_u64(buf, sh.hidden_dim);
  detail::put_u64(buf, sh.num_classes);
  detail::put_u64(buf, sh.param_count());
  for (double v : params.values()) detail::put_u64(buf, std::bit_cast<std::uint64_t>(v));
  return buf;
}

inline ModelParams deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointHeaderBytes) throw ValidationError("checkpoint: truncated header");
  if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
    throw ValidationError("checkpoint: bad magic");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + 8;
  const std::uint64_t version = detail::get_u64(p);
  if (version != kCheckpointVersion) throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
  ModelShape sh{detail::get_u64(p + 8), detail::get_u64(p + 16), detail::get_u64(p + 24), detail::get_u64(p + 32)};
  const std::uint64_t count = detail::get_u64(p + 40);
  if (sh.vocab_size == 0 || sh.emb_dim == 0 || sh.hidden_dim == 0 || sh.num_classes == 0 ||
      count != sh.param_count()) {
    throw ValidationError("checkpoint: inconsistent shape header");
  }
  if (bytes.size() != kCheckpointHeaderBytes + 8 * count) {
    throw ValidationError("checkpoint: expected " + std::to_string(kCheckpointHeaderBytes + 8 * count) +
                          " bytes, found " + std::to_string(bytes.size()));
  }
  std::vector<double> values(count);
  const auto* body = p + 48;
  for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<double>(detail::get_u64(body + 8 * i));
  return ModelParams(sh, std::move(values));
}

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint " + path);
  const auto buf = serialize_checkpoint(params);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ValidationError("failed writing checkpoint " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

/// Checkpoint with an expected shape (e.g. matching a vocabulary).
inline ModelParams load_checkpoint(const std::string& path, const ModelShape& expected) {
  auto p = load_checkpoint(path);
  if (!(p.shape() == expected)) throw ValidationError(path + ": checkpoint shape does not match");
  return p;
}

}  // namespace poisonlab
