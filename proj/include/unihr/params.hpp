#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "unihr/rng.hpp"
#include "unihr/tensor.hpp"

#include <nlohmann/json.hpp>

namespace unihr {

struct Param {
    Tensor t;
    bool trainable = true;
};

// Named parameter table. std::map keeps iteration order stable, which every
// downstream consumer (optimizer, checkpoints, grad checks) relies on.
class ParamStore {
public:
    Tensor add(const std::string& name, std::vector<int> shape) {
        if (params_.count(name))
            throw std::logic_error("ParamStore: duplicate parameter " + name);
        Tensor t = Tensor::zeros(std::move(shape), true);
        params_[name] = Param{t, true};
        return t;
    }

    Tensor get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end())
            throw std::out_of_range("ParamStore: no parameter " + name);
        return it->second.t;
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }

    void set_trainable(const std::string& name, bool trainable) {
        auto it = params_.find(name);
        if (it == params_.end())
            throw std::out_of_range("ParamStore: no parameter " + name);
        it->second.trainable = trainable;
    }

    bool trainable(const std::string& name) const {
        return params_.at(name).trainable;
    }

    void zero_grads() {
        for (auto& [name, p] : params_) p.t.zero_grad();
    }

    std::size_t total_params() const {
        std::size_t n = 0;
        for (const auto& [name, p] : params_) n += p.t.size();
        return n;
    }

    std::map<std::string, Param>& entries() { return params_; }
    const std::map<std::string, Param>& entries() const { return params_; }

private:
    std::map<std::string, Param> params_;
};

// ---- initialization ----

inline void init_xavier(Tensor t, Rng& rng, int fan_in, int fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < t.size(); ++i)
        t.data()[i] = rng.uniform_real(-limit, limit);
}

inline void init_uniform(Tensor t, Rng& rng, double lo, double hi) {
    for (std::size_t i = 0; i < t.size(); ++i)
        t.data()[i] = rng.uniform_real(lo, hi);
}

inline void init_const(Tensor t, double v) {
    std::fill_n(t.data(), t.size(), v);
}

// ---- optimizer ----

// Adam with decoupled weight decay: the decay term is applied to the raw
// parameter, outside the moment estimates.
class AdamW {
public:
    AdamW(double lr = 5e-4, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8, double weight_decay = 0.01)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

    void step(ParamStore& store) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (auto& [name, p] : store.entries()) {
            if (!p.trainable) continue;
            if (!p.t.has_grad()) continue;
            auto& slot = moments_[name];
            if (slot.m.empty()) {
                slot.m.assign(p.t.size(), 0.0);
                slot.v.assign(p.t.size(), 0.0);
            }
            double* x = p.t.data();
            const std::vector<double>& g = p.t.grad();
            for (std::size_t i = 0; i < p.t.size(); ++i) {
                const double gi = g[i];
                if (!std::isfinite(gi))
                    throw std::runtime_error("AdamW: non-finite gradient in " + name);
                slot.m[i] = b1_ * slot.m[i] + (1.0 - b1_) * gi;
                slot.v[i] = b2_ * slot.v[i] + (1.0 - b2_) * gi * gi;
                const double mhat = slot.m[i] / bc1;
                const double vhat = slot.v[i] / bc2;
                x[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * x[i]);
            }
        }
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    double lr_, b1_, b2_, eps_, wd_;
    std::int64_t t_ = 0;
    std::map<std::string, Moments> moments_;
};

// ---- checkpoint ----

// Binary container: magic, format version, JSON manifest (names, shapes,
// dtype, free-form metadata), then raw little-endian float64 payloads in
// manifest order. Loading validates the shape table exactly.
namespace ckpt_detail {

constexpr char kMagic[8] = {'U', 'N', 'I', 'H', 'R', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_f64_le(std::ostream& os, const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &p[i], 8);
        write_u64(os, bits);
    }
}

inline void read_f64_le(std::istream& is, double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t bits = read_u64(is);
        std::memcpy(&p[i], &bits, 8);
    }
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const ParamStore& store,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    nlohmann::json manifest;
    manifest["dtype"] = "f64le";
    manifest["metadata"] = metadata;
    nlohmann::json plist = nlohmann::json::array();
    for (const auto& [name, p] : store.entries()) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = p.t.shape();
        plist.push_back(e);
    }
    manifest["params"] = plist;
    const std::string mtext = manifest.dump();
    os.write(ckpt_detail::kMagic, 8);
    ckpt_detail::write_u32(os, ckpt_detail::kVersion);
    ckpt_detail::write_u64(os, mtext.size());
    os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (const auto& [name, p] : store.entries())
        ckpt_detail::write_f64_le(os, p.t.data(), p.t.size());
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

// Loads payloads into an already-built store; the manifest must match the
// store's name/shape table exactly.
inline nlohmann::json load_checkpoint(const std::string& path, ParamStore& store) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, ckpt_detail::kMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    const std::uint32_t version = ckpt_detail::read_u32(is);
    if (version != ckpt_detail::kVersion)
        throw std::runtime_error("load_checkpoint: unsupported version");
    const std::uint64_t mlen = ckpt_detail::read_u64(is);
    std::string mtext(mlen, '\0');
    is.read(mtext.data(), static_cast<std::streamsize>(mlen));
    nlohmann::json manifest = nlohmann::json::parse(mtext);
    const auto& plist = manifest.at("params");
    if (plist.size() != store.entries().size())
        throw std::runtime_error("load_checkpoint: parameter count mismatch");
    std::size_t i = 0;
    for (auto& [name, p] : store.entries()) {
        const auto& e = plist.at(i++);
        if (e.at("name").get<std::string>() != name)
            throw std::runtime_error("load_checkpoint: name mismatch at " + name);
        const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
        if (shape != p.t.shape())
            throw std::runtime_error("load_checkpoint: shape mismatch at " + name);
    }
    for (auto& [name, p] : store.entries())
        ckpt_detail::read_f64_le(is, p.t.data(), p.t.size());
    if (!is) throw std::runtime_error("load_checkpoint: truncated payload");
    return manifest.at("metadata");
}

// ---- gradient checking ----

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
};

// Central finite differences against reverse-mode gradients. fn must rebuild
// the whole forward pass (fresh tape) and return the scalar loss tensor;
// it is called once per probe with perturbed parameters.
template <typename LossFn>
GradCheckResult grad_check(ParamStore& store, LossFn fn,
                           const std::vector<std::string>& names,
                           double h = 1e-5) {
    Tape tape;
    store.zero_grads();
    Tensor loss = fn(&tape);
    tape.backward(loss);
    // central differences bottom out at cancellation noise ~ |f| * eps / h;
    // differences below that bound carry no signal about the gradient
    const double noise =
        std::max(1.0, std::abs(loss.item())) * 1e-13 / h;

    GradCheckResult result;
    for (const auto& name : names) {
        Tensor p = store.get(name);
        const std::vector<double> analytic =
            p.has_grad() ? p.grad() : std::vector<double>(p.size(), 0.0);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p.data()[i];
            p.data()[i] = saved + h;
            const double fp = fn(nullptr).item();
            p.data()[i] = saved - h;
            const double fm = fn(nullptr).item();
            p.data()[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            if (std::abs(numeric - analytic[i]) < noise) continue;
            const double denom =
                std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
            const double rel = std::abs(numeric - analytic[i]) / denom;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = name;
                result.worst_index = i;
            }
        }
    }
    return result;
}

}  // namespace unihr
