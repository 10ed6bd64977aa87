#pragma once
// Parameterized building blocks: named parameters, pointwise and temporal
// convolutions, LSTM cell, layer norm, dropout, Adam and checkpoint I/O.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtnav/errors.hpp"
#include "mtnav/rng.hpp"
#include "mtnav/tensor.hpp"

namespace mtnav {

enum class Mode { train, eval };

struct Parameter {
    std::string name;
    Tensor value;
};

/// Ordered, name-unique collection of trainable tensors.
class ParameterSet {
public:
    Tensor add(std::string name, Tensor value) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        value.set_requires_grad(true);
        index_.emplace(name, params_.size());
        params_.push_back({std::move(name), value});
        return value;
    }

    /// Weights drawn from U(−1/√fan_in, 1/√fan_in).
    Tensor add_uniform(std::string name, Shape shape, std::size_t fan_in, RngStream& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<double> values(shape_numel(shape));
        for (double& v : values) v = rng.uniform(-bound, bound);
        return add(std::move(name), Tensor(std::move(shape), std::move(values)));
    }

    Tensor add_constant(std::string name, Shape shape, double value) {
        return add(std::move(name), Tensor::full(std::move(shape), value));
    }

    const std::vector<Parameter>& params() const { return params_; }
    std::size_t size() const { return params_.size(); }
    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.numel();
        return n;
    }

    const Parameter* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }

    void zero_grad() {
        for (auto& p : params_) p.value.zero_grad();
    }

    /// Overwrites values from a set with identical names and shapes.
    void copy_values_from(const ParameterSet& other) {
        if (other.params_.size() != params_.size()) throw DimensionError("parameter sets differ in size");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const auto& src = other.params_[i];
            auto& dst = params_[i];
            if (src.name != dst.name || src.value.shape() != dst.value.shape()) {
                throw DimensionError("parameter mismatch: " + dst.name + " vs " + src.name);
            }
            std::copy(src.value.data().begin(), src.value.data().end(), dst.value.mutable_data().begin());
        }
    }

private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Blocks

struct Linear {
    Tensor w;  // [in × out]
    Tensor b;  // [out]

    static Linear create(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, RngStream& rng) {
        return {ps.add_uniform(name + ".w", {in, out}, in, rng), ps.add_constant(name + ".b", {out}, 0.0)};
    }
    Tensor operator()(const Tensor& x) const { return affine(x, w, b); }
};

/// 1×1 convolution: out[c,h,w] = Σ_k w[c,k]·x[k,h,w] + b[c].
inline Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 3 || w.rank() != 2 || w.dim(1) != x.dim(0) || b.numel() != w.dim(0)) {
        throw DimensionError("pointwise_conv: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()) + ", b " +
                             shape_str(b.shape()));
    }
    const std::size_t cin = x.dim(0), cout = w.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<double> out(cout * hw);
    for (std::size_t c = 0; c < cout; ++c) {
        double* orow = out.data() + c * hw;
        std::fill(orow, orow + hw, b[c]);
        for (std::size_t k = 0; k < cin; ++k) {
            const double wv = w[c * cin + k];
            const double* xrow = x.data().data() + k * hw;
            for (std::size_t p = 0; p < hw; ++p) orow[p] += wv * xrow[p];
        }
    }
    detail::check_finite(out, "pointwise_conv");
    Tensor result(Shape{cout, x.dim(1), x.dim(2)}, std::move(out));
    if (Tape* tape = detail::tape_for({&x, &w, &b})) {
        tape->record(result, [xn = x.impl(), wn = w.impl(), bn = b.impl(), on = result.impl().get(), cin, cout, hw] {
            const double* G = on->grad.data();
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (std::size_t c = 0; c < cout; ++c) {
                const double* grow = G + c * hw;
                if (bn->requires_grad) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < hw; ++p) s += grow[p];
                    bn->grad[c] += s;
                }
                for (std::size_t k = 0; k < cin; ++k) {
                    const double* xrow = xn->data.data() + k * hw;
                    if (wn->requires_grad) {
                        double s = 0.0;
                        for (std::size_t p = 0; p < hw; ++p) s += grow[p] * xrow[p];
                        wn->grad[c * cin + k] += s;
                    }
                    if (xn->requires_grad) {
                        const double wv = wn->data[c * cin + k];
                        double* dx = xn->grad.data() + k * hw;
                        for (std::size_t p = 0; p < hw; ++p) dx[p] += wv * grow[p];
                    }
                }
            }
        });
    }
    return result;
}

/// Zero-padded 1-D convolution along the row axis of x[D×F] with kernel w[k×F]
/// and scalar bias b, producing one channel per row: out is [D×1].
inline Tensor temporal_conv(const Tensor& x, std::size_t kernel_size, const Tensor& w, const Tensor& b) {
    if (kernel_size % 2 == 0) throw ConfigError("temporal_conv: kernel size must be odd, got " + std::to_string(kernel_size));
    if (x.rank() != 2 || w.rank() != 2 || w.dim(0) != kernel_size || w.dim(1) != x.dim(1) || b.numel() != 1) {
        throw DimensionError("temporal_conv: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()) +
                             ", kernel " + std::to_string(kernel_size));
    }
    const std::size_t rows = x.dim(0), feats = x.dim(1);
    const long half = static_cast<long>(kernel_size / 2);
    std::vector<double> out(rows, b[0]);
    for (std::size_t d = 0; d < rows; ++d) {
        for (long o = -half; o <= half; ++o) {
            const long src = static_cast<long>(d) + o;
            if (src < 0 || src >= static_cast<long>(rows)) continue;
            const double* xr = x.data().data() + static_cast<std::size_t>(src) * feats;
            const double* wr = w.data().data() + static_cast<std::size_t>(o + half) * feats;
            double s = 0.0;
            for (std::size_t f = 0; f < feats; ++f) s += wr[f] * xr[f];
            out[d] += s;
        }
    }
    detail::check_finite(out, "temporal_conv");
    Tensor result(Shape{rows, 1}, std::move(out));
    if (Tape* tape = detail::tape_for({&x, &w, &b})) {
        tape->record(result, [xn = x.impl(), wn = w.impl(), bn = b.impl(), on = result.impl().get(), rows, feats, half] {
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (std::size_t d = 0; d < rows; ++d) {
                const double g = on->grad[d];
                if (bn->requires_grad) bn->grad[0] += g;
                for (long o = -half; o <= half; ++o) {
                    const long src = static_cast<long>(d) + o;
                    if (src < 0 || src >= static_cast<long>(rows)) continue;
                    const std::size_t xs = static_cast<std::size_t>(src) * feats;
                    const std::size_t ws = static_cast<std::size_t>(o + half) * feats;
                    for (std::size_t f = 0; f < feats; ++f) {
                        if (wn->requires_grad) wn->grad[ws + f] += g * xn->data[xs + f];
                        if (xn->requires_grad) xn->grad[xs + f] += g * wn->data[ws + f];
                    }
                }
            }
        });
    }
    return result;
}

struct TemporalConv {
    std::size_t kernel_size = 1;
    Tensor w;  // [k × F]
    Tensor b;  // [1]

    static TemporalConv create(ParameterSet& ps, const std::string& name, std::size_t kernel_size, std::size_t feats,
                               RngStream& rng) {
        if (kernel_size % 2 == 0) throw ConfigError("temporal kernel size must be odd");
        return {kernel_size, ps.add_uniform(name + ".w", {kernel_size, feats}, kernel_size * feats, rng),
                ps.add_constant(name + ".b", {1}, 0.0)};
    }
    Tensor operator()(const Tensor& x) const { return temporal_conv(x, kernel_size, w, b); }
};

/// (x − mean)/sqrt(var + 1e-5)·gain + bias over the last axis of each row.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    const std::size_t n = x.shape().back();
    if (n < 2) throw ContractError("layer_norm needs at least 2 features");
    if (gain.numel() != n || bias.numel() != n) {
        throw DimensionError("layer_norm: x " + shape_str(x.shape()) + ", gain " + shape_str(gain.shape()));
    }
    constexpr double kEps = 1e-5;
    const std::size_t rows = x.numel() / n;
    std::vector<double> out(x.numel()), xhat(x.numel()), inv(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * n;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += xr[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= static_cast<double>(n);
        inv[r] = 1.0 / std::sqrt(var + kEps);
        for (std::size_t i = 0; i < n; ++i) {
            xhat[r * n + i] = (xr[i] - mean) * inv[r];
            out[r * n + i] = xhat[r * n + i] * gain[i] + bias[i];
        }
    }
    detail::check_finite(out, "layer_norm");
    Tensor result(x.shape(), std::move(out));
    if (Tape* tape = detail::tape_for({&x, &gain, &bias})) {
        tape->record(result, [xn = x.impl(), gn = gain.impl(), bn = bias.impl(), on = result.impl().get(),
                              xhat = std::move(xhat), inv = std::move(inv), rows, n] {
            if (xn->requires_grad) xn->ensure_grad();
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            std::vector<double> dxhat(n);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = on->grad.data() + r * n;
                const double* xh = xhat.data() + r * n;
                double sum_d = 0.0, sum_dx = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (gn->requires_grad) gn->grad[i] += g[i] * xh[i];
                    if (bn->requires_grad) bn->grad[i] += g[i];
                    dxhat[i] = g[i] * gn->data[i];
                    sum_d += dxhat[i];
                    sum_dx += dxhat[i] * xh[i];
                }
                if (!xn->requires_grad) continue;
                const double nn = static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i) {
                    xn->grad[r * n + i] += inv[r] / nn * (nn * dxhat[i] - sum_d - xh[i] * sum_dx);
                }
            }
        });
    }
    return result;
}

struct LayerNorm {
    Tensor gain;
    Tensor bias;

    static LayerNorm create(ParameterSet& ps, const std::string& name, std::size_t n) {
        return {ps.add_constant(name + ".gain", {n}, 1.0), ps.add_constant(name + ".bias", {n}, 0.0)};
    }
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1−rate); eval mode is the identity.
inline Tensor dropout(const Tensor& x, double rate, Mode mode, RngStream& rng) {
    if (!(rate >= 0.0) || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    if (mode == Mode::eval || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
    return elementwise_mul(x, Tensor(x.shape(), std::move(mask)));
}

struct LstmState {
    Tensor h;  // [1 × hidden]
    Tensor c;  // [1 × hidden]

    static LstmState zeros(std::size_t hidden) {
        return {Tensor::zeros({1, hidden}), Tensor::zeros({1, hidden})};
    }
    LstmState detach() const { return {h.detach(), c.detach()}; }
};

struct LstmParams {
    Tensor w_x;  // [d_in × 4h], gate blocks ordered input, forget, candidate, output
    Tensor w_h;  // [h × 4h]
    Tensor b;    // [4h]

    std::size_t hidden() const { return w_h.dim(0); }
    std::size_t input_dim() const { return w_x.dim(0); }

    /// Uniform weights; zero bias except +1 on the forget gate.
    static LstmParams create(ParameterSet& ps, const std::string& name, std::size_t d_in, std::size_t hidden,
                             RngStream& rng) {
        LstmParams p{ps.add_uniform(name + ".w_x", {d_in, 4 * hidden}, d_in, rng),
                     ps.add_uniform(name + ".w_h", {hidden, 4 * hidden}, hidden, rng),
                     ps.add_constant(name + ".b", {4 * hidden}, 0.0)};
        auto bias = p.b.mutable_data();
        for (std::size_t i = hidden; i < 2 * hidden; ++i) bias[i] = 1.0;
        return p;
    }
};

/// One LSTM cell update; pure in its inputs.
inline LstmState lstm_step(const Tensor& x, const LstmState& state, const LstmParams& p) {
    const std::size_t hidden = p.hidden();
    const Tensor xr = x.rank() == 1 ? reshape(x, {1, x.numel()}) : x;
    const Tensor hr = state.h.rank() == 1 ? reshape(state.h, {1, state.h.numel()}) : state.h;
    const Tensor cr = state.c.rank() == 1 ? reshape(state.c, {1, state.c.numel()}) : state.c;
    if (xr.dim(0) != 1 || xr.dim(1) != p.input_dim() || hr.numel() != hidden || cr.numel() != hidden) {
        throw DimensionError("lstm_step: x " + shape_str(x.shape()) + ", h " + shape_str(state.h.shape()) +
                             " for cell " + std::to_string(p.input_dim()) + "->" + std::to_string(hidden));
    }
    const Tensor gates = add(affine(xr, p.w_x, p.b), matmul(hr, p.w_h));
    const Tensor in_gate = sigmoid(slice(gates, 1, 0, hidden));
    const Tensor forget_gate = sigmoid(slice(gates, 1, hidden, hidden));
    const Tensor candidate = tanh(slice(gates, 1, 2 * hidden, hidden));
    const Tensor out_gate = sigmoid(slice(gates, 1, 3 * hidden, hidden));
    Tensor c_next = add(elementwise_mul(forget_gate, cr), elementwise_mul(in_gate, candidate));
    Tensor h_next = elementwise_mul(out_gate, tanh(c_next));
    return {std::move(h_next), std::move(c_next)};
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First and second moment buffers, one per parameter in set order.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    static AdamState allocate(const ParameterSet& ps) {
        AdamState s;
        for (const auto& p : ps.params()) {
            s.m.emplace_back(p.value.numel(), 0.0);
            s.v.emplace_back(p.value.numel(), 0.0);
        }
        return s;
    }
};

/// Bias-corrected Adam update at step t (t ≥ 1).
inline void adam_step(ParameterSet& params, const std::vector<std::vector<double>>& grads, AdamState& state,
                      const AdamConfig& cfg, std::uint64_t t) {
    if (t < 1) throw ContractError("adam_step: step index must be >= 1");
    if (grads.size() != params.size() || state.m.size() != params.size()) {
        throw DimensionError("adam_step: gradient/moment count does not match parameter count");
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor value = params.params()[k].value;
        auto data = value.mutable_data();
        const auto& g = grads[k];
        if (g.size() != data.size()) throw DimensionError("adam_step: gradient size mismatch for " + params.params()[k].name);
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < data.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Binary little-endian container:
//   "MTNAVCKP" | u32 version | u64 step | u64 episodes | u32 count
//   per parameter: u32 name_len | name | u32 rank | u64 dims[rank]
//                  | f64 values[n] | u8 has_moments | (f64 m[n] | f64 v[n])

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<double> values;
    std::vector<double> m;  // empty when moments were not saved
    std::vector<double> v;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;
    std::uint64_t step = 0;
    std::uint64_t episodes = 0;
    std::vector<CheckpointEntry> entries;

    static Checkpoint capture(const ParameterSet& ps, const AdamState* adam, std::uint64_t step, std::uint64_t episodes) {
        Checkpoint ck;
        ck.step = step;
        ck.episodes = episodes;
        for (std::size_t k = 0; k < ps.size(); ++k) {
            const auto& p = ps.params()[k];
            CheckpointEntry e{p.name, p.value.shape(), {p.value.data().begin(), p.value.data().end()}, {}, {}};
            if (adam) {
                e.m = adam->m.at(k);
                e.v = adam->v.at(k);
            }
            ck.entries.push_back(std::move(e));
        }
        return ck;
    }

    /// Copies stored values (and moments when `adam` is given) into a set with the same layout.
    void restore(ParameterSet& ps, AdamState* adam = nullptr) const {
        if (entries.size() != ps.size()) {
            throw DimensionError("checkpoint holds " + std::to_string(entries.size()) + " parameters, model has " +
                                 std::to_string(ps.size()));
        }
        if (adam) *adam = AdamState::allocate(ps);
        for (std::size_t k = 0; k < entries.size(); ++k) {
            const auto& e = entries[k];
            Tensor value = ps.params()[k].value;
            if (e.name != ps.params()[k].name || e.shape != value.shape()) {
                throw DimensionError("checkpoint entry " + e.name + " " + shape_str(e.shape) + " does not match " +
                                     ps.params()[k].name + " " + shape_str(value.shape()));
            }
            std::copy(e.values.begin(), e.values.end(), value.mutable_data().begin());
            if (adam && !e.m.empty()) {
                adam->m[k] = e.m;
                adam->v[k] = e.v;
            }
        }
    }
};

namespace detail {
inline void put_u64(std::ostream& os, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(buf, 8);
}
inline void put_u32(std::ostream& os, std::uint32_t v) {
    char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(buf, 4);
}
inline void put_f64s(std::ostream& os, const std::vector<double>& values) {
    for (double d : values) put_u64(os, std::bit_cast<std::uint64_t>(d));
}
inline std::uint64_t get_u64(std::istream& is) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8)) throw IoError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char buf[4];
    if (!is.read(reinterpret_cast<char*>(buf), 4)) throw IoError("checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
}
inline std::vector<double> get_f64s(std::istream& is, std::size_t n) {
    std::vector<double> out(n);
    for (double& d : out) d = std::bit_cast<double>(get_u64(is));
    return out;
}
}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
    os.write("MTNAVCKP", 8);
    detail::put_u32(os, Checkpoint::kVersion);
    detail::put_u64(os, ck.step);
    detail::put_u64(os, ck.episodes);
    detail::put_u32(os, static_cast<std::uint32_t>(ck.entries.size()));
    for (const auto& e : ck.entries) {
        detail::put_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(e.shape.size()));
        for (std::size_t d : e.shape) detail::put_u64(os, d);
        detail::put_f64s(os, e.values);
        const bool moments = !e.m.empty();
        os.put(moments ? 1 : 0);
        if (moments) {
            detail::put_f64s(os, e.m);
            detail::put_f64s(os, e.v);
        }
    }
    if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::string(magic, 8) != "MTNAVCKP") throw IoError("not a checkpoint file: " + path.string());
    const std::uint32_t version = detail::get_u32(is);
    if (version != Checkpoint::kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    ck.step = detail::get_u64(is);
    ck.episodes = detail::get_u64(is);
    const std::uint32_t count = detail::get_u32(is);
    for (std::uint32_t k = 0; k < count; ++k) {
        CheckpointEntry e;
        e.name.resize(detail::get_u32(is));
        if (!is.read(e.name.data(), static_cast<std::streamsize>(e.name.size()))) throw IoError("checkpoint truncated");
        const std::uint32_t rank = detail::get_u32(is);
        for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(detail::get_u64(is));
        const std::size_t n = shape_numel(e.shape);
        e.values = detail::get_f64s(is, n);
        const int moments = is.get();
        if (moments == std::char_traits<char>::eof()) throw IoError("checkpoint truncated");
        if (moments) {
            e.m = detail::get_f64s(is, n);
            e.v = detail::get_f64s(is, n);
        }
        ck.entries.push_back(std::move(e));
    }
    return ck;
}

}  // namespace mtnav
