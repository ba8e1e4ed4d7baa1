#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mil/kernels.hpp"
#include "mil/tensor.hpp"

namespace mil {

// Class index convention used everywhere: 0 = negative, 1 = positive.
inline constexpr int kNumClasses = 2;

// Residual classifier: stem conv3x3 -> S stages of residual blocks
// (stride 2 at entry of stages past the first, 1x1 projection on the skip
// where channels or stride change) -> global average pool -> dense to 2
// logits. No normalization layers; inference is per-instance.
struct ArchConfig {
    int input_hw = 64;
    int in_channels = 1;
    int stem_width = 16;
    std::vector<int> stage_widths = {16, 32, 64};
    int blocks_per_stage = 2;

    int downsample_factor() const;
    bool operator==(const ArchConfig&) const = default;
};

// One named slice of the flat parameter vector.
struct ParamEntry {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t count = 0;
};

// Deterministic flat enumeration of every tensor in the model. The order
// is: stem kernel, stem bias, then per stage / per block conv1, conv2 and
// optional projection (kernel before bias), then head weight, head bias.
class ParamLayout {
public:
    explicit ParamLayout(const ArchConfig& arch);

    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::size_t total() const { return total_; }
    const ParamEntry& find(const std::string& name) const;

private:
    std::vector<ParamEntry> entries_;
    std::size_t total_ = 0;
};

struct ModelParams {
    ArchConfig arch;
    std::vector<double> flat;

    double* view(const ParamEntry& e) { return flat.data() + e.offset; }
    const double* view(const ParamEntry& e) const { return flat.data() + e.offset; }
};

using Gradients = std::vector<double>;  // same enumeration order as ModelParams::flat

// Fan-in-scaled zero-mean init, biases zero. Deterministic in (config, seed).
// Rejects input sizes not divisible by the total downsampling factor.
ModelParams init_params(const ArchConfig& arch, std::uint64_t seed);

// Numerically stable softmax / categorical cross-entropy on 2 logits.
std::array<double, 2> softmax2(const std::array<double, 2>& logits);
double softmax_crossentropy(const std::array<double, 2>& logits, int label);

// Pure forward pass; probs sum to 1.
std::array<double, 2> model_forward(const ModelParams& params, const Tensor& instance);

// Forward with cached activations plus reverse sweep. Returns the gradient
// of the cross-entropy loss at `label` w.r.t. every parameter, in flat
// enumeration order. loss_out (optional) receives the forward loss.
Gradients backward(const ModelParams& params, const Tensor& instance, int label,
                   double* loss_out = nullptr);

}  // namespace mil
