// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "crossmatch/config.hpp"
#include "crossmatch/tensor.hpp"

namespace crossmatch::nn {

struct Param {
    std::string name;
    ad::Tensor t;
};

// Ordered named parameters; order is creation order and defines the
// optimizer-update and checkpoint layout.
class ParamStore {
public:
    ad::Tensor create(const std::string& name, const ad::Shape& shape, std::vector<double> init);
    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    const Param& find(const std::string& name) const;
    size_t total_size() const;

private:
    std::vector<Param> params_;
};

struct OptState {
    uint64_t t = 0;  // completed update count (Adam bias correction)
    std::map<std::string, std::vector<double>> buffers;
};

class Optimizer {
public:
    explicit Optimizer(const OptimizerConfig& cfg) : cfg_(cfg) {}
    // Applies one update from the gradients currently stored on the params.
    void step(ParamStore& store, double lr);
    OptState& state() { return state_; }
    const OptState& state() const { return state_; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    OptimizerConfig cfg_;
    OptState state_;
};

double scheduled_lr(const OptimizerConfig& cfg, long step, long total_steps);

struct Checkpoint {
    std::string config_json;  // canonical resolved config
    uint64_t step = 0;
    uint64_t seed = 0;
    std::vector<std::pair<std::string, std::pair<ad::Shape, std::vector<double>>>> tensors;
    OptState opt;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace crossmatch::nn
