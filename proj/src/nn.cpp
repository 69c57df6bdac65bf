// SPDX-License-Identifier: Apache-2.0
#include "crossmatch/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "crossmatch/common.hpp"

namespace crossmatch::nn {

ad::Tensor ParamStore::create(const std::string& name, const ad::Shape& shape,
                              std::vector<double> init) {
    for (const auto& p : params_)
        check_internal(p.name != name, "duplicate parameter name " + name);
    auto t = ad::Tensor::from_data(shape, std::move(init), true);
    params_.push_back({name, t});
    return t;
}

const Param& ParamStore::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p;
    throw InternalError("unknown parameter " + name);
}

size_t ParamStore::total_size() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.t.numel();
    return n;
}

double scheduled_lr(const OptimizerConfig& cfg, long step, long total_steps) {
    if (cfg.schedule == LrSchedule::constant || total_steps <= 0) return cfg.lr;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return cfg.lr * std::pow(1.0 - frac, cfg.poly_power);
}

void Optimizer::step(ParamStore& store, double lr) {
    state_.t += 1;
    for (auto& p : store.params()) {
        auto& w = p.t.values();
        const auto& g0 = p.t.grad();
        check_internal(g0.size() == w.size(), "gradient missing for " + p.name);
        if (cfg_.kind == OptKind::sgd_momentum) {
            auto& buf = state_.buffers["m/" + p.name];
            if (buf.size() != w.size()) buf.assign(w.size(), 0.0);
            for (size_t i = 0; i < w.size(); ++i) {
                const double g = g0[i] + cfg_.weight_decay * w[i];
                buf[i] = cfg_.momentum * buf[i] + g;
                w[i] -= lr * buf[i];
            }
        } else {  // adamw, decoupled weight decay
            auto& m = state_.buffers["m/" + p.name];
            auto& v = state_.buffers["v/" + p.name];
            if (m.size() != w.size()) m.assign(w.size(), 0.0);
            if (v.size() != w.size()) v.assign(w.size(), 0.0);
            const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(state_.t));
            const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(state_.t));
            for (size_t i = 0; i < w.size(); ++i) {
                const double g = g0[i];
                w[i] -= lr * cfg_.weight_decay * w[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                w[i] -= lr * mh / (std::sqrt(vh) + cfg_.eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoint: little-endian binary; layout documented in the README.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'M', 'C', 'K', 'P', 'T', '0', '1'};

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void put_u64(FILE* f, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    check_data(std::fwrite(b, 1, 8, f) == 8, "checkpoint write failed");
}

uint64_t get_u64(FILE* f) {
    unsigned char b[8];
    check_data(std::fread(b, 1, 8, f) == 8, "truncated checkpoint");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_string(FILE* f, const std::string& s) {
    put_u64(f, s.size());
    check_data(std::fwrite(s.data(), 1, s.size(), f) == s.size(), "checkpoint write failed");
}

std::string get_string(FILE* f) {
    const uint64_t n = get_u64(f);
    check_data(n < (1ULL << 32), "corrupt checkpoint string length");
    std::string s(n, '\0');
    check_data(std::fread(s.data(), 1, n, f) == n, "truncated checkpoint");
    return s;
}

void put_doubles(FILE* f, const std::vector<double>& v) {
    put_u64(f, v.size());
    // Exact bit round-trip; doubles stored as IEEE-754 little-endian words.
    for (double d : v) {
        uint64_t bits;
        std::memcpy(&bits, &d, 8);
        put_u64(f, bits);
    }
}

std::vector<double> get_doubles(FILE* f) {
    const uint64_t n = get_u64(f);
    check_data(n < (1ULL << 32), "corrupt checkpoint buffer length");
    std::vector<double> v(n);
    for (uint64_t i = 0; i < n; ++i) {
        const uint64_t bits = get_u64(f);
        std::memcpy(&v[i], &bits, 8);
    }
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    check_data(f != nullptr, "cannot write checkpoint " + path);
    check_data(std::fwrite(kMagic, 1, 8, f.get()) == 8, "checkpoint write failed");
    put_string(f.get(), ck.config_json);
    put_u64(f.get(), ck.step);
    put_u64(f.get(), ck.seed);
    put_u64(f.get(), ck.tensors.size());
    for (const auto& [name, sv] : ck.tensors) {
        put_string(f.get(), name);
        put_u64(f.get(), sv.first.size());
        for (long d : sv.first) put_u64(f.get(), static_cast<uint64_t>(d));
        put_doubles(f.get(), sv.second);
    }
    put_u64(f.get(), ck.opt.t);
    put_u64(f.get(), ck.opt.buffers.size());
    for (const auto& [name, buf] : ck.opt.buffers) {
        put_string(f.get(), name);
        put_doubles(f.get(), buf);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    check_data(f != nullptr, "cannot open checkpoint " + path);
    char magic[8];
    check_data(std::fread(magic, 1, 8, f.get()) == 8 && std::memcmp(magic, kMagic, 8) == 0,
               "not a checkpoint file: " + path);
    Checkpoint ck;
    ck.config_json = get_string(f.get());
    ck.step = get_u64(f.get());
    ck.seed = get_u64(f.get());
    const uint64_t nt = get_u64(f.get());
    check_data(nt < (1ULL << 24), "corrupt checkpoint tensor count");
    for (uint64_t i = 0; i < nt; ++i) {
        const std::string name = get_string(f.get());
        const uint64_t nd = get_u64(f.get());
        check_data(nd <= 8, "corrupt checkpoint tensor rank");
        ad::Shape shape(nd);
        for (uint64_t d = 0; d < nd; ++d) shape[d] = static_cast<long>(get_u64(f.get()));
        ck.tensors.emplace_back(name, std::make_pair(shape, get_doubles(f.get())));
    }
    ck.opt.t = get_u64(f.get());
    const uint64_t nb = get_u64(f.get());
    check_data(nb < (1ULL << 24), "corrupt checkpoint buffer count");
    for (uint64_t i = 0; i < nb; ++i) {
        const std::string name = get_string(f.get());
        ck.opt.buffers[name] = get_doubles(f.get());
    }
    return ck;
}

}  // namespace crossmatch::nn
