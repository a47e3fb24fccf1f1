#include "swaplab/faceswap.hpp"

#include <cmath>
#include <stdexcept>

namespace swaplab {

namespace {

constexpr float kLeakySlope = 0.1f;
constexpr int kLatent = 128;
constexpr int kSeedChannels = 64;

int seed_extent(int resolution) { return resolution / 8; }

Tensor glorot_uniform(const std::vector<int>& shape, int fan_in, int fan_out, RngStream& rng) {
    Tensor t(shape);
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-limit, limit);
    return t;
}

void add_conv(ParamSet& p, const std::string& name, int k, int cin, int cout, RngStream& rng) {
    p.add(name + "/w", glorot_uniform({k, k, cin, cout}, k * k * cin, k * k * cout, rng));
    p.add(name + "/b", Tensor({cout}));
}

void add_dense(ParamSet& p, const std::string& name, int in, int out, RngStream& rng) {
    p.add(name + "/w", glorot_uniform({in, out}, in, out, rng));
    p.add(name + "/b", Tensor({out}));
}

ValueId conv_block(Tape& t, const BoundParams& bp, const std::string& name, ValueId x, int stride) {
    return t.leaky_relu(t.conv2d(x, bp.at(name + "/w"), bp.at(name + "/b"), stride), kLeakySlope);
}

std::string side_prefix(Side s) { return s == Side::A ? "dec_a" : "dec_b"; }

} // namespace

const char* arch_name(SwapArch a) { return a == SwapArch::H128Mini ? "h128-mini" : "sae-mini"; }

SwapArch arch_from_name(const std::string& s) {
    if (s == "h128-mini") return SwapArch::H128Mini;
    if (s == "sae-mini") return SwapArch::SaeMini;
    throw std::invalid_argument("unknown architecture " + s + " (expected h128-mini or sae-mini)");
}

ValueId BoundParams::at(const std::string& name) const {
    auto it = ids.find(name);
    if (it == ids.end()) throw std::out_of_range("bound params: " + name + " not bound");
    return it->second;
}

BoundParams bind_params(Tape& tape, const ParamSet& params, const std::vector<std::string>& prefixes,
                        bool trainable) {
    BoundParams bp;
    for (size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.names()[i];
        for (const std::string& pre : prefixes) {
            if (name.rfind(pre, 0) == 0) {
                bp.ids[name] = tape.leaf(params[i].value, trainable);
                break;
            }
        }
    }
    return bp;
}

void init_encoder_params(ParamSet& p, const std::string& prefix, int in_channels, int resolution, RngStream& rng) {
    const int se = seed_extent(resolution);
    add_conv(p, prefix + "/c1", 3, in_channels, 16, rng);
    add_conv(p, prefix + "/c2", 3, 16, 32, rng);
    add_conv(p, prefix + "/c3", 3, 32, 64, rng);
    add_dense(p, prefix + "/fc1", se * se * 64, kLatent, rng);
    add_dense(p, prefix + "/fc2", kLatent, se * se * kSeedChannels, rng);
}

void init_decoder_params(ParamSet& p, const std::string& prefix, bool with_skips, RngStream& rng) {
    // skip concat widens the first two decoder convs (e2: 32ch, e1: 16ch)
    add_conv(p, prefix + "/c1", 3, with_skips ? kSeedChannels + 32 : kSeedChannels, 64, rng);
    add_conv(p, prefix + "/c2", 3, with_skips ? 64 + 16 : 64, 32, rng);
    add_conv(p, prefix + "/c3", 3, 32, 16, rng);
}

EncoderTaps encoder_forward(Tape& tape, const BoundParams& bp, const std::string& prefix, ValueId x, int resolution) {
    const int se = seed_extent(resolution);
    EncoderTaps taps;
    taps.e1 = conv_block(tape, bp, prefix + "/c1", x, 2);
    taps.e2 = conv_block(tape, bp, prefix + "/c2", taps.e1, 2);
    taps.e3 = conv_block(tape, bp, prefix + "/c3", taps.e2, 2);
    const int n = tape.val(x).dim(0);
    ValueId flat = tape.reshape(taps.e3, {n, se * se * 64});
    ValueId z = tape.leaky_relu(tape.dense(flat, bp.at(prefix + "/fc1/w"), bp.at(prefix + "/fc1/b")), kLeakySlope);
    ValueId h = tape.leaky_relu(tape.dense(z, bp.at(prefix + "/fc2/w"), bp.at(prefix + "/fc2/b")), kLeakySlope);
    taps.seed = tape.reshape(h, {n, se, se, kSeedChannels});
    return taps;
}

ValueId decoder_forward(Tape& tape, const BoundParams& bp, const std::string& prefix, bool with_skips,
                        const EncoderTaps& taps) {
    ValueId t = tape.upsample2x(taps.seed);
    if (with_skips) t = tape.concat_channels(t, taps.e2);
    t = conv_block(tape, bp, prefix + "/c1", t, 1);
    t = tape.upsample2x(t);
    if (with_skips) t = tape.concat_channels(t, taps.e1);
    t = conv_block(tape, bp, prefix + "/c2", t, 1);
    t = tape.upsample2x(t);
    t = conv_block(tape, bp, prefix + "/c3", t, 1);
    return t;
}

SwapModel SwapModel::init(SwapArch arch, int resolution, RngStream& rng) {
    if (resolution < 16 || resolution % 8 != 0)
        throw std::invalid_argument("swap model: resolution must be a multiple of 8, >= 16");
    SwapModel m;
    m.arch = arch;
    m.resolution = resolution;
    const bool skips = arch == SwapArch::SaeMini;
    init_encoder_params(m.params, "enc", 3, resolution, rng);
    for (const char* dec : {"dec_a", "dec_b"}) {
        init_decoder_params(m.params, dec, skips, rng);
        add_conv(m.params, std::string(dec) + "/face", 3, 16, 3, rng);
        add_conv(m.params, std::string(dec) + "/mask", 3, 16, 1, rng);
    }
    return m;
}

SwapOutputs swap_forward(Tape& tape, const BoundParams& bp, SwapArch arch, Side side, ValueId x, int resolution) {
    const bool skips = arch == SwapArch::SaeMini;
    const std::string dec = side_prefix(side);
    EncoderTaps taps = encoder_forward(tape, bp, "enc", x, resolution);
    ValueId feat = decoder_forward(tape, bp, dec, skips, taps);
    SwapOutputs out;
    out.face = tape.sigmoid(tape.conv2d(feat, bp.at(dec + "/face/w"), bp.at(dec + "/face/b"), 1));
    out.mask = tape.sigmoid(tape.conv2d(feat, bp.at(dec + "/mask/w"), bp.at(dec + "/mask/b"), 1));
    return out;
}

ValueId tile_mask(Tape& tape, ValueId mask, int channels) {
    if (tape.val(mask).shape().back() != 1) throw ShapeError("tile_mask: mask must have 1 channel");
    ValueId out = mask;
    for (int c = 1; c < channels; ++c) out = tape.concat_channels(out, mask);
    return out;
}

ValueId swap_blend(Tape& tape, const BoundParams& bp, SwapArch arch, ValueId x, int resolution) {
    SwapOutputs o = swap_forward(tape, bp, arch, Side::B, x, resolution);
    ValueId m3 = tile_mask(tape, o.mask, 3);
    ValueId ones = tape.leaf(Tensor(tape.val(m3).shape(), 1.0f));
    return tape.add(tape.pointwise_mul(o.face, m3), tape.pointwise_mul(x, tape.sub(ones, m3)));
}

ValueId loss_face(Tape& tape, ValueId pred_face, ValueId target, ValueId mask) {
    const Tensor& p = tape.val(pred_face);
    if (!p.same_shape(tape.val(target)))
        throw ShapeError("loss_face: prediction " + p.shape_str() + " vs target " + tape.val(target).shape_str());
    ValueId m3 = tile_mask(tape, mask, p.shape().back());
    if (!tape.val(m3).same_shape(p))
        throw ShapeError("loss_face: mask " + tape.val(mask).shape_str() + " vs prediction " + p.shape_str());
    ValueId weighted = tape.pointwise_mul(tape.sub(pred_face, target), m3);
    return tape.scalar_mul(tape.abs_sum(weighted), 1.0f / static_cast<float>(p.numel()));
}

ValueId loss_mask(Tape& tape, ValueId pred_mask, ValueId mask) {
    const Tensor& p = tape.val(pred_mask);
    if (!p.same_shape(tape.val(mask)))
        throw ShapeError("loss_mask: prediction " + p.shape_str() + " vs mask " + tape.val(mask).shape_str());
    return tape.scalar_mul(tape.abs_sum(tape.sub(pred_mask, mask)), 1.0f / static_cast<float>(p.numel()));
}

ValueId loss_rec(Tape& tape, ValueId pred_face, ValueId pred_mask, ValueId target, ValueId mask) {
    return tape.add(loss_face(tape, pred_face, target, mask), loss_mask(tape, pred_mask, mask));
}

Tensor stack_images(const std::vector<const FaceSample*>& batch) {
    if (batch.empty()) throw std::invalid_argument("stack: empty batch");
    const Tensor& first = batch.front()->image;
    Tensor out({static_cast<int>(batch.size()), first.dim(0), first.dim(1), first.dim(2)});
    const int64_t plane = first.numel();
    for (size_t i = 0; i < batch.size(); ++i) {
        if (!batch[i]->image.same_shape(first)) throw ShapeError("stack: inconsistent image shapes in batch");
        std::copy(batch[i]->image.data(), batch[i]->image.data() + plane, out.data() + static_cast<int64_t>(i) * plane);
    }
    return out;
}

Tensor stack_masks(const std::vector<const FaceSample*>& batch) {
    if (batch.empty()) throw std::invalid_argument("stack: empty batch");
    const Tensor& first = batch.front()->mask;
    Tensor out({static_cast<int>(batch.size()), first.dim(0), first.dim(1), first.dim(2)});
    const int64_t plane = first.numel();
    for (size_t i = 0; i < batch.size(); ++i) {
        if (!batch[i]->mask.same_shape(first)) throw ShapeError("stack: inconsistent mask shapes in batch");
        std::copy(batch[i]->mask.data(), batch[i]->mask.data() + plane, out.data() + static_cast<int64_t>(i) * plane);
    }
    return out;
}

float train_step(SwapModel& model, Side side, const std::vector<const FaceSample*>& batch, const AugmentConfig& aug,
                 const OptimConfig& opt, RngStream& aug_rng) {
    // augment image and mask together, then reconstruct the augmented pair
    std::vector<FaceSample> augmented(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        augmented[i].image = batch[i]->image;
        augmented[i].mask = batch[i]->mask;
        augment_sample(augmented[i].image, augmented[i].mask, aug, aug_rng);
    }
    std::vector<const FaceSample*> aug_ptrs(augmented.size());
    for (size_t i = 0; i < augmented.size(); ++i) aug_ptrs[i] = &augmented[i];

    Tape tape;
    BoundParams bp = bind_params(tape, model.params, {"enc", side_prefix(side)}, true);
    ValueId x = tape.leaf(stack_images(aug_ptrs));
    ValueId m = tape.leaf(stack_masks(aug_ptrs));
    SwapOutputs out = swap_forward(tape, bp, model.arch, side, x, model.resolution);
    ValueId loss = loss_rec(tape, out.face, out.mask, x, m);

    const float loss_value = tape.val(loss).value();
    if (!std::isfinite(loss_value))
        throw std::runtime_error(std::string("train_step: non-finite loss on side ") + (side == Side::A ? "A" : "B"));

    tape.backward(loss);
    std::vector<std::pair<std::string, const Tensor*>> grads;
    grads.reserve(bp.ids.size());
    for (const auto& [name, id] : bp.ids) grads.emplace_back(name, &tape.grad(id));
    adam_step(model.params, grads, opt);
    return loss_value;
}

PretrainResult pretrain(const Dataset& data_a, const Dataset& data_b, SwapArch arch, const TrainConfig& cfg,
                        const TrainHook& hook) {
    if (data_a.empty() || data_b.empty()) throw std::invalid_argument("pretrain: empty dataset");
    if (cfg.iterations < 0 || cfg.batch_size < 1) throw std::invalid_argument("pretrain: bad config");

    const std::string& ns = cfg.stream_namespace;
    RngStream root(cfg.seed, "root");
    RngStream init_rng = root.derive("model-init/" + std::string(arch_name(arch)) + "/" + ns);
    RngStream batch_rng = root.derive(ns + "/batches");
    RngStream aug_rng = root.derive(ns + "/augment");

    PretrainResult res;
    res.model = SwapModel::init(arch, data_a.front().image.dim(0), init_rng);

    auto draw_batch = [&](const Dataset& data) {
        std::vector<const FaceSample*> batch(static_cast<size_t>(cfg.batch_size));
        for (auto& p : batch) p = &data[batch_rng.uniform_index(data.size())];
        return batch;
    };

    res.loss_a.reserve(static_cast<size_t>(cfg.iterations));
    res.loss_b.reserve(static_cast<size_t>(cfg.iterations));
    for (int it = 0; it < cfg.iterations; ++it) {
        res.loss_a.push_back(train_step(res.model, Side::A, draw_batch(data_a), cfg.augment, cfg.optimizer, aug_rng));
        res.loss_b.push_back(train_step(res.model, Side::B, draw_batch(data_b), cfg.augment, cfg.optimizer, aug_rng));
        if (hook) hook(it + 1, res.model);
    }
    return res;
}

std::vector<Tensor> swap_sequence(const SwapModel& model, const Dataset& frames) {
    std::vector<Tensor> out;
    out.reserve(frames.size());
    constexpr size_t kChunk = 16;
    for (size_t start = 0; start < frames.size(); start += kChunk) {
        const size_t end = std::min(frames.size(), start + kChunk);
        std::vector<const FaceSample*> batch;
        for (size_t i = start; i < end; ++i) batch.push_back(&frames[i]);
        Tape tape;
        BoundParams bp = bind_params(tape, model.params, {"enc", "dec_b"}, false);
        ValueId x = tape.leaf(stack_images(batch));
        ValueId h = swap_blend(tape, bp, model.arch, x, model.resolution);
        const Tensor& big = tape.val(h);
        const int hh = big.dim(1), ww = big.dim(2), cc = big.dim(3);
        const int64_t plane = static_cast<int64_t>(hh) * ww * cc;
        for (size_t i = start; i < end; ++i) {
            Tensor frame({hh, ww, cc});
            std::copy(big.data() + static_cast<int64_t>(i - start) * plane,
                      big.data() + static_cast<int64_t>(i - start + 1) * plane, frame.data());
            out.push_back(std::move(frame));
        }
    }
    return out;
}

void save_model(const SwapModel& model, const std::filesystem::path& dir, const nlohmann::json& extra_meta,
                const std::vector<RngRecord>& rng) {
    Checkpoint ck;
    ck.params = model.params;
    ck.rng = rng;
    ck.meta = extra_meta.is_null() ? nlohmann::json::object() : extra_meta;
    ck.meta["kind"] = "swap_model";
    ck.meta["architecture"] = arch_name(model.arch);
    ck.meta["resolution"] = model.resolution;
    ck.save(dir);
}

SwapModel load_model(const std::filesystem::path& dir) {
    Checkpoint ck = Checkpoint::load(dir);
    if (ck.meta.value("kind", "") != "swap_model")
        throw std::runtime_error("checkpoint at " + dir.string() + " is not a swap model");
    SwapModel m;
    m.arch = arch_from_name(ck.meta.at("architecture").get<std::string>());
    m.resolution = ck.meta.at("resolution").get<int>();
    m.params = std::move(ck.params);
    return m;
}

} // namespace swaplab
