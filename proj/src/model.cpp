#include "mil/model.hpp"

#include <algorithm>
#include <cmath>

#include "mil/errors.hpp"
#include "mil/rng.hpp"

namespace mil {

int ArchConfig::downsample_factor() const {
    int f = 1;
    for (std::size_t s = 1; s < stage_widths.size(); ++s) f *= 2;
    return f;
}

ParamLayout::ParamLayout(const ArchConfig& arch) {
    auto add = [&](std::string name, std::vector<std::size_t> shape) {
        ParamEntry e;
        e.name = std::move(name);
        e.shape = std::move(shape);
        e.offset = total_;
        e.count = Tensor::count(e.shape);
        total_ += e.count;
        entries_.push_back(std::move(e));
    };

    const auto sw = static_cast<std::size_t>(arch.stem_width);
    add("stem.k", {sw, static_cast<std::size_t>(arch.in_channels), 3, 3});
    add("stem.b", {sw});

    int prev = arch.stem_width;
    for (std::size_t si = 0; si < arch.stage_widths.size(); ++si) {
        const int width = arch.stage_widths[si];
        const auto w = static_cast<std::size_t>(width);
        for (int bi = 0; bi < arch.blocks_per_stage; ++bi) {
            const int stride = (bi == 0 && si > 0) ? 2 : 1;
            const bool project = stride != 1 || prev != width;
            const std::string prefix = "s" + std::to_string(si) + ".b" + std::to_string(bi);
            add(prefix + ".conv1.k", {w, static_cast<std::size_t>(prev), 3, 3});
            add(prefix + ".conv1.b", {w});
            add(prefix + ".conv2.k", {w, w, 3, 3});
            add(prefix + ".conv2.b", {w});
            if (project) {
                add(prefix + ".proj.k", {w, static_cast<std::size_t>(prev), 1, 1});
                add(prefix + ".proj.b", {w});
            }
            prev = width;
        }
    }
    add("head.w", {static_cast<std::size_t>(kNumClasses), static_cast<std::size_t>(prev)});
    add("head.b", {static_cast<std::size_t>(kNumClasses)});
}

const ParamEntry& ParamLayout::find(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e;
    throw DataError("unknown parameter: " + name);
}

ModelParams init_params(const ArchConfig& arch, std::uint64_t seed) {
    if (arch.input_hw <= 0 || arch.in_channels <= 0 || arch.stem_width <= 0 ||
        arch.stage_widths.empty() || arch.blocks_per_stage <= 0)
        throw DataError("init_params: invalid architecture config");
    if (arch.input_hw % arch.downsample_factor() != 0)
        throw DataError("init_params: input size " + std::to_string(arch.input_hw) +
                        " not divisible by downsampling factor " +
                        std::to_string(arch.downsample_factor()));

    ParamLayout layout(arch);
    ModelParams params;
    params.arch = arch;
    params.flat.assign(layout.total(), 0.0);

    Rng rng(derive_seed(seed, 0x696e6974ull));  // "init"
    for (const auto& e : layout.entries()) {
        if (e.name.ends_with(".b")) continue;  // biases stay zero
        // fan-in = product of all dims except the leading output dim
        std::size_t fan_in = 1;
        for (std::size_t i = 1; i < e.shape.size(); ++i) fan_in *= e.shape[i];
        const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        double* w = params.view(e);
        for (std::size_t i = 0; i < e.count; ++i) w[i] = rng.normal(0.0, sd);
    }
    return params;
}

std::array<double, 2> softmax2(const std::array<double, 2>& logits) {
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m);
    const double e1 = std::exp(logits[1] - m);
    const double z = e0 + e1;
    return {e0 / z, e1 / z};
}

double softmax_crossentropy(const std::array<double, 2>& logits, int label) {
    if (label != 0 && label != 1) throw DataError("softmax_crossentropy: label must be 0 or 1");
    const double m = std::max(logits[0], logits[1]);
    const double lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
    return lse - logits[label];
}

namespace {

struct ConvRef {
    const ParamEntry* k = nullptr;
    const ParamEntry* b = nullptr;
    kernels::Conv2dDims dims;
};

struct BlockPlan {
    ConvRef conv1, conv2, proj;
    bool has_proj = false;
    int in_c = 0, in_hw = 0, out_c = 0, out_hw = 0;
};

// Static shape plan for one forward pass.
struct Plan {
    ConvRef stem;
    std::vector<BlockPlan> blocks;
    const ParamEntry* head_w = nullptr;
    const ParamEntry* head_b = nullptr;
    int feat_c = 0, feat_hw = 0;
};

Plan make_plan(const ArchConfig& arch, const ParamLayout& layout) {
    Plan p;
    p.stem.k = &layout.find("stem.k");
    p.stem.b = &layout.find("stem.b");
    p.stem.dims = kernels::Conv2dDims::make(arch.in_channels, arch.input_hw, arch.input_hw,
                                            arch.stem_width, 3, 1);
    int ch = arch.stem_width;
    int hw = arch.input_hw;
    for (std::size_t si = 0; si < arch.stage_widths.size(); ++si) {
        const int width = arch.stage_widths[si];
        for (int bi = 0; bi < arch.blocks_per_stage; ++bi) {
            const int stride = (bi == 0 && si > 0) ? 2 : 1;
            const std::string prefix = "s" + std::to_string(si) + ".b" + std::to_string(bi);
            BlockPlan bp;
            bp.in_c = ch;
            bp.in_hw = hw;
            bp.out_c = width;
            bp.out_hw = (hw + stride - 1) / stride;
            bp.conv1.k = &layout.find(prefix + ".conv1.k");
            bp.conv1.b = &layout.find(prefix + ".conv1.b");
            bp.conv1.dims = kernels::Conv2dDims::make(ch, hw, hw, width, 3, stride);
            bp.conv2.k = &layout.find(prefix + ".conv2.k");
            bp.conv2.b = &layout.find(prefix + ".conv2.b");
            bp.conv2.dims = kernels::Conv2dDims::make(width, bp.out_hw, bp.out_hw, width, 3, 1);
            bp.has_proj = stride != 1 || ch != width;
            if (bp.has_proj) {
                bp.proj.k = &layout.find(prefix + ".proj.k");
                bp.proj.b = &layout.find(prefix + ".proj.b");
                bp.proj.dims = kernels::Conv2dDims::make(ch, hw, hw, width, 1, stride);
            }
            p.blocks.push_back(bp);
            ch = width;
            hw = bp.out_hw;
        }
    }
    p.head_w = &layout.find("head.w");
    p.head_b = &layout.find("head.b");
    p.feat_c = ch;
    p.feat_hw = hw;
    return p;
}

inline void relu_inplace(std::vector<double>& v) {
    for (double& x : v) x = x > 0.0 ? x : 0.0;
}

// Cached activations of one forward pass; consumed by the reverse sweep.
struct BlockTrace {
    std::vector<double> input;   // block input a_in
    std::vector<double> pre1;    // conv1 output before relu
    std::vector<double> act1;    // relu(pre1)
    std::vector<double> sum;     // conv2(act1) + skip, before final relu
    std::vector<double> output;  // relu(sum)
};

struct Trace {
    std::vector<double> stem_pre;
    std::vector<double> stem_act;
    std::vector<BlockTrace> blocks;
    std::vector<double> features;  // after global average pool
    std::array<double, 2> logits{};
};

std::array<double, 2> run_forward(const ModelParams& params, const Plan& plan,
                                  const Tensor& instance, Trace* trace) {
    const auto& arch = params.arch;
    if (instance.shape.size() != 3 ||
        instance.shape[0] != static_cast<std::size_t>(arch.in_channels) ||
        instance.shape[1] != static_cast<std::size_t>(arch.input_hw) ||
        instance.shape[2] != static_cast<std::size_t>(arch.input_hw))
        throw DataError("model_forward: instance shape does not match configured input size");

    std::vector<double> cur(static_cast<std::size_t>(plan.stem.dims.out_c) *
                            plan.stem.dims.out_h * plan.stem.dims.out_w);
    kernels::conv2d_forward(instance.data.data(), params.view(*plan.stem.k),
                            params.view(*plan.stem.b), plan.stem.dims, cur.data());
    if (trace) trace->stem_pre = cur;
    relu_inplace(cur);
    if (trace) trace->stem_act = cur;

    for (const auto& bp : plan.blocks) {
        BlockTrace bt;
        if (trace) bt.input = cur;
        const std::size_t out_n =
            static_cast<std::size_t>(bp.out_c) * bp.out_hw * bp.out_hw;

        std::vector<double> pre1(out_n);
        kernels::conv2d_forward(cur.data(), params.view(*bp.conv1.k),
                                params.view(*bp.conv1.b), bp.conv1.dims, pre1.data());
        std::vector<double> act1 = pre1;
        relu_inplace(act1);

        std::vector<double> sum(out_n);
        kernels::conv2d_forward(act1.data(), params.view(*bp.conv2.k),
                                params.view(*bp.conv2.b), bp.conv2.dims, sum.data());
        if (bp.has_proj) {
            std::vector<double> skip(out_n);
            kernels::conv2d_forward(cur.data(), params.view(*bp.proj.k),
                                    params.view(*bp.proj.b), bp.proj.dims, skip.data());
            for (std::size_t i = 0; i < out_n; ++i) sum[i] += skip[i];
        } else {
            for (std::size_t i = 0; i < out_n; ++i) sum[i] += cur[i];
        }
        if (trace) {
            bt.pre1 = std::move(pre1);
            bt.act1 = act1;
            bt.sum = sum;
        }
        relu_inplace(sum);
        cur = std::move(sum);
        if (trace) {
            bt.output = cur;
            trace->blocks.push_back(std::move(bt));
        }
    }

    // global average pool
    const int area = plan.feat_hw * plan.feat_hw;
    std::vector<double> feat(static_cast<std::size_t>(plan.feat_c));
    for (int c = 0; c < plan.feat_c; ++c) {
        double acc = 0.0;
        const double* base = cur.data() + static_cast<std::size_t>(c) * area;
        for (int i = 0; i < area; ++i) acc += base[i];
        feat[c] = acc / area;
    }

    const double* hw = params.view(*plan.head_w);
    const double* hb = params.view(*plan.head_b);
    std::array<double, 2> logits{};
    for (int k = 0; k < kNumClasses; ++k) {
        double acc = hb[k];
        for (int c = 0; c < plan.feat_c; ++c) acc += hw[k * plan.feat_c + c] * feat[c];
        logits[k] = acc;
    }
    if (trace) {
        trace->features = std::move(feat);
        trace->logits = logits;
    }
    return softmax2(logits);
}

}  // namespace

std::array<double, 2> model_forward(const ModelParams& params, const Tensor& instance) {
    ParamLayout layout(params.arch);
    Plan plan = make_plan(params.arch, layout);
    return run_forward(params, plan, instance, nullptr);
}

Gradients backward(const ModelParams& params, const Tensor& instance, int label,
                   double* loss_out) {
    if (label != 0 && label != 1) throw DataError("backward: label must be 0 or 1");
    ParamLayout layout(params.arch);
    Plan plan = make_plan(params.arch, layout);
    Trace trace;
    const auto probs = run_forward(params, plan, instance, &trace);
    if (loss_out) *loss_out = softmax_crossentropy(trace.logits, label);

    Gradients grads(layout.total(), 0.0);

    // head: dL/dlogits = softmax - onehot
    std::array<double, 2> dlogits = probs;
    dlogits[label] -= 1.0;

    const double* hw = params.view(*plan.head_w);
    double* ghw = grads.data() + plan.head_w->offset;
    double* ghb = grads.data() + plan.head_b->offset;
    std::vector<double> dfeat(static_cast<std::size_t>(plan.feat_c), 0.0);
    for (int k = 0; k < kNumClasses; ++k) {
        ghb[k] = dlogits[k];
        for (int c = 0; c < plan.feat_c; ++c) {
            ghw[k * plan.feat_c + c] = dlogits[k] * trace.features[c];
            dfeat[c] += hw[k * plan.feat_c + c] * dlogits[k];
        }
    }

    // undo global average pool
    const int area = plan.feat_hw * plan.feat_hw;
    std::vector<double> dcur(static_cast<std::size_t>(plan.feat_c) * area);
    for (int c = 0; c < plan.feat_c; ++c) {
        const double g = dfeat[c] / area;
        double* base = dcur.data() + static_cast<std::size_t>(c) * area;
        for (int i = 0; i < area; ++i) base[i] = g;
    }

    for (std::size_t bi = plan.blocks.size(); bi-- > 0;) {
        const auto& bp = plan.blocks[bi];
        const auto& bt = trace.blocks[bi];
        const std::size_t out_n = dcur.size();

        // through the final relu: sum > 0 gate
        std::vector<double> dsum(out_n);
        for (std::size_t i = 0; i < out_n; ++i) dsum[i] = bt.sum[i] > 0.0 ? dcur[i] : 0.0;

        // conv2 branch
        kernels::conv2d_backward_params(dsum.data(), bt.act1.data(), bp.conv2.dims,
                                        grads.data() + bp.conv2.k->offset,
                                        grads.data() + bp.conv2.b->offset);
        std::vector<double> dact1(bt.act1.size());
        kernels::conv2d_backward_input(dsum.data(), params.view(*bp.conv2.k), bp.conv2.dims,
                                       dact1.data());
        for (std::size_t i = 0; i < dact1.size(); ++i)
            if (bt.pre1[i] <= 0.0) dact1[i] = 0.0;

        std::vector<double> dinput(bt.input.size());
        kernels::conv2d_backward_params(dact1.data(), bt.input.data(), bp.conv1.dims,
                                        grads.data() + bp.conv1.k->offset,
                                        grads.data() + bp.conv1.b->offset);
        kernels::conv2d_backward_input(dact1.data(), params.view(*bp.conv1.k), bp.conv1.dims,
                                       dinput.data());

        // skip branch
        if (bp.has_proj) {
            kernels::conv2d_backward_params(dsum.data(), bt.input.data(), bp.proj.dims,
                                            grads.data() + bp.proj.k->offset,
                                            grads.data() + bp.proj.b->offset);
            std::vector<double> dskip(bt.input.size());
            kernels::conv2d_backward_input(dsum.data(), params.view(*bp.proj.k), bp.proj.dims,
                                           dskip.data());
            for (std::size_t i = 0; i < dinput.size(); ++i) dinput[i] += dskip[i];
        } else {
            for (std::size_t i = 0; i < dinput.size(); ++i) dinput[i] += dsum[i];
        }
        dcur = std::move(dinput);
    }

    // stem relu gate, then stem conv params
    for (std::size_t i = 0; i < dcur.size(); ++i)
        if (trace.stem_pre[i] <= 0.0) dcur[i] = 0.0;
    kernels::conv2d_backward_params(dcur.data(), instance.data.data(), plan.stem.dims,
                                    grads.data() + plan.stem.k->offset,
                                    grads.data() + plan.stem.b->offset);
    return grads;
}

}  // namespace mil
