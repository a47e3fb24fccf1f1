#include "swaplab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace swaplab {

namespace {

// one generator optimization step; returns the adversarial loss value
float generator_step(AdvGenerator& gen, const SwapModel& fswap, const Tensor& images, const Tensor& cond,
                     const Tensor& targets, const Tensor& masks, const OptimConfig& opt) {
    Tape tape;
    BoundParams gp = bind_params(tape, gen.params, {"gen"}, true);
    BoundParams fp = bind_params(tape, fswap.params, {"enc", "dec_a"}, false); // f_A frozen during G steps
    ValueId x = tape.leaf(images);
    ValueId c = tape.leaf(cond);
    ValueId x_adv = generator_forward(tape, gp, gen, x, c);
    SwapOutputs out = swap_forward(tape, fp, fswap.arch, Side::A, x_adv, fswap.resolution);
    ValueId loss = loss_adv(tape, out.face, tape.leaf(targets), tape.leaf(masks));

    const float loss_value = tape.val(loss).value();
    if (!std::isfinite(loss_value)) throw std::runtime_error("ogan: non-finite adversarial loss in generator step");

    tape.backward(loss);
    std::vector<std::pair<std::string, const Tensor*>> grads;
    for (const auto& [name, id] : gp.ids) grads.emplace_back(name, &tape.grad(id));
    adam_step(gen.params, grads, opt);
    return loss_value;
}

std::vector<size_t> shuffled_indices(size_t n, RngStream& rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
    return idx;
}

} // namespace

AdvGenerator AdvGenerator::init(float epsilon, float theta_max, float psi_max, int resolution, RngStream& rng) {
    if (epsilon < 0.0f) throw std::invalid_argument("generator: epsilon must be >= 0");
    AdvGenerator g;
    g.epsilon = epsilon;
    g.theta_max = theta_max;
    g.psi_max = psi_max;
    g.resolution = resolution;
    init_encoder_params(g.params, "gen/enc", 6, resolution, rng); // image + 3 conditioning channels
    init_decoder_params(g.params, "gen/dec", false, rng);
    g.params.add("gen/dec/head/w", Tensor({3, 3, 16, 3}));
    g.params.add("gen/dec/head/b", Tensor({3}));
    // head starts at zero so training begins from the identity perturbation
    return g;
}

Tensor distortion_channels(const std::vector<AffineDistortion>& ds, float theta_max, float psi_max, int resolution) {
    Tensor out({static_cast<int>(ds.size()), resolution, resolution, 3});
    const int64_t plane = static_cast<int64_t>(resolution) * resolution * 3;
    for (size_t i = 0; i < ds.size(); ++i) {
        const float t = theta_max > 0.0f ? ds[i].theta_deg / theta_max : 0.0f;
        const float sx = psi_max > 0.0f ? ds[i].shift_x / psi_max : 0.0f;
        const float sy = psi_max > 0.0f ? ds[i].shift_y / psi_max : 0.0f;
        float* p = out.data() + static_cast<int64_t>(i) * plane;
        for (int64_t px = 0; px < plane; px += 3) {
            p[px] = t;
            p[px + 1] = sx;
            p[px + 2] = sy;
        }
    }
    return out;
}

ValueId generator_forward(Tape& tape, const BoundParams& bp, const AdvGenerator& gen, ValueId x, ValueId cond) {
    ValueId in = tape.concat_channels(x, cond);
    EncoderTaps taps = encoder_forward(tape, bp, "gen/enc", in, gen.resolution);
    ValueId feat = decoder_forward(tape, bp, "gen/dec", false, taps);
    ValueId head = tape.tanh_op(tape.conv2d(feat, bp.at("gen/dec/head/w"), bp.at("gen/dec/head/b"), 1));
    return tape.clip(tape.add(x, tape.scalar_mul(head, gen.epsilon)), 0.0f, 1.0f);
}

Tensor ogan_perturb(const AdvGenerator& gen, const Tensor& image, const AffineDistortion& n) {
    if (image.ndim() != 3) throw ShapeError("ogan_perturb: expected HxWxC image, got " + image.shape_str());
    Tape tape;
    BoundParams bp = bind_params(tape, gen.params, {"gen"}, false);
    Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)}, image.storage());
    ValueId x = tape.leaf(std::move(batch));
    ValueId c = tape.leaf(distortion_channels({n}, gen.theta_max, gen.psi_max, gen.resolution));
    ValueId out = generator_forward(tape, bp, gen, x, c);
    return Tensor(image.shape(), tape.val(out).storage());
}

ValueId loss_dist(Tape& tape, ValueId h_adv, ValueId h_x) {
    const Tensor& a = tape.val(h_adv);
    if (!a.same_shape(tape.val(h_x)))
        throw ShapeError("loss_dist: " + a.shape_str() + " vs " + tape.val(h_x).shape_str());
    ValueId msq = tape.scalar_mul(tape.sq_sum(tape.sub(h_adv, h_x)), 1.0f / static_cast<float>(a.numel()));
    return tape.scalar_mul(tape.sqrt_op(msq), -1.0f);
}

ValueId loss_adv(Tape& tape, ValueId f_a_face_on_adv, ValueId distorted_target, ValueId mask) {
    return loss_face(tape, f_a_face_on_adv, distorted_target, mask);
}

void PgdConfig::validate() const {
    if (epsilon < 0.0f) throw std::invalid_argument("pgd: epsilon must be >= 0");
    if (!(alpha > 0.0f)) throw std::invalid_argument("pgd: alpha must be > 0");
    if (iterations < 0) throw std::invalid_argument("pgd: iterations must be >= 0");
}

Tensor pgd_distort_fn(const TapeImageFn& deepfake, const Tensor& image, const PgdConfig& cfg, RngStream& init_rng) {
    cfg.validate();
    const float eps = cfg.epsilon;

    auto clip_iterate = [&](Tensor& t) {
        for (int64_t i = 0; i < t.numel(); ++i) {
            float lo = image[i] - eps, hi = image[i] + eps;
            float v = t[i] < lo ? lo : (t[i] > hi ? hi : t[i]);
            t[i] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        }
    };

    Tensor x_adv = image;
    for (int64_t i = 0; i < x_adv.numel(); ++i) x_adv[i] += init_rng.uniform(-eps, eps);
    clip_iterate(x_adv);

    // deepfake output on the pristine image is a constant of the loop
    Tensor h_x;
    {
        Tape tape;
        ValueId x = tape.leaf(image);
        h_x = tape.val(deepfake(tape, x));
    }

    for (int it = 0; it < cfg.iterations; ++it) {
        Tape tape;
        ValueId x = tape.leaf(x_adv, true);
        ValueId loss = loss_dist(tape, deepfake(tape, x), tape.leaf(h_x));
        if (!std::isfinite(tape.val(loss).value())) throw std::runtime_error("pgd: non-finite distortion loss");
        tape.backward(loss);
        const Tensor& g = tape.grad(x);
        if (!g.all_finite()) throw std::runtime_error("pgd: non-finite gradient");
        for (int64_t i = 0; i < x_adv.numel(); ++i) {
            const float s = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f); // sign(0) = 0
            x_adv[i] -= cfg.alpha * s;
        }
        clip_iterate(x_adv);
    }
    return x_adv;
}

Tensor pgd_distort(const SwapModel& model, const Tensor& image, const PgdConfig& cfg, int frame_index) {
    RngStream init_rng =
        RngStream(cfg.seed, "root").derive_indexed("pgd/init", static_cast<uint64_t>(frame_index));
    auto deepfake = [&model](Tape& tape, ValueId x) {
        BoundParams bp = bind_params(tape, model.params, {"enc", "dec_b"}, false);
        // batch-of-one view so conv shapes line up
        ValueId xb = tape.reshape(x, {1, model.resolution, model.resolution, 3});
        ValueId h = swap_blend(tape, bp, model.arch, xb, model.resolution);
        return tape.reshape(h, {model.resolution, model.resolution, 3});
    };
    return pgd_distort_fn(deepfake, image, cfg, init_rng);
}

OganResult ogan_train(const DatasetPartition& part, const SwapModel& pretrained, const OganConfig& cfg) {
    if (cfg.batch_iters < 0 || cfg.epochs < 0) throw std::invalid_argument("ogan: bad config");
    cfg.gen_optimizer.validate();
    cfg.swap_optimizer.validate();

    RngStream root(cfg.seed, "root");
    RngStream init_rng = root.derive("ogan/gen-init");
    RngStream dist_rng = root.derive("ogan/distortions");
    RngStream shuffle_rng = root.derive("ogan/shuffle");
    RngStream batch_rng = root.derive("ogan/b-batches");
    RngStream aug_rng = root.derive("ogan/augment");

    OganResult res;
    res.generator = AdvGenerator::init(cfg.epsilon, cfg.theta_max, cfg.psi_max, pretrained.resolution, init_rng);
    res.cotrained = pretrained;

    const Dataset protected_set = part.protected_samples();
    const Dataset unprotected = part.unprotected_samples();

    // lines 3-4: one distortion per protected sample, fixed for all epochs
    DistortionSamplerConfig sampler{cfg.theta_max, cfg.psi_max};
    res.distortions.reserve(protected_set.size());
    for (size_t i = 0; i < protected_set.size(); ++i) res.distortions.push_back(sample_distortion(sampler, dist_rng));

    if (protected_set.empty()) return res; // degenerates to plain FaceSwap training

    auto draw_b_batch = [&]() {
        std::vector<const FaceSample*> batch(static_cast<size_t>(cfg.batch_size));
        for (auto& p : batch) p = &part.d_b[batch_rng.uniform_index(part.d_b.size())];
        return batch;
    };

    const size_t bs = static_cast<size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // protected pass
        std::vector<size_t> order = shuffled_indices(protected_set.size(), shuffle_rng);
        for (size_t start = 0; start + bs <= order.size(); start += bs) {
            std::vector<const FaceSample*> batch(bs);
            std::vector<AffineDistortion> batch_n(bs);
            for (size_t i = 0; i < bs; ++i) {
                batch[i] = &protected_set[order[start + i]];
                batch_n[i] = res.distortions[order[start + i]];
            }
            const Tensor images = stack_images(batch);
            const Tensor masks = stack_masks(batch);
            const Tensor cond =
                distortion_channels(batch_n, cfg.theta_max, cfg.psi_max, pretrained.resolution);

            // N(x) targets computed once per batch
            Tensor targets(images.shape());
            const int64_t plane = batch.front()->image.numel();
            for (size_t i = 0; i < bs; ++i) {
                Tensor warped = apply_affine(batch[i]->image, batch_n[i]);
                std::copy(warped.data(), warped.data() + plane, targets.data() + static_cast<int64_t>(i) * plane);
            }

            for (int k = 0; k < cfg.batch_iters; ++k)
                res.adv_loss.push_back(
                    generator_step(res.generator, res.cotrained, images, cond, targets, masks, cfg.gen_optimizer));

            // emit the adversarial batch and train f_A on it (augmented), f_B on D_B
            std::vector<FaceSample> adv(bs);
            {
                Tape tape;
                BoundParams gp = bind_params(tape, res.generator.params, {"gen"}, false);
                ValueId out = generator_forward(tape, gp, res.generator, tape.leaf(images), tape.leaf(cond));
                const Tensor& ot = tape.val(out);
                for (size_t i = 0; i < bs; ++i) {
                    adv[i].image = Tensor(batch[i]->image.shape());
                    std::copy(ot.data() + static_cast<int64_t>(i) * plane, ot.data() + static_cast<int64_t>(i + 1) * plane,
                              adv[i].image.data());
                    adv[i].mask = batch[i]->mask;
                    adv[i].frame_index = batch[i]->frame_index;
                    adv[i].identity_tag = batch[i]->identity_tag;
                }
            }
            std::vector<const FaceSample*> adv_ptrs(bs);
            for (size_t i = 0; i < bs; ++i) adv_ptrs[i] = &adv[i];
            train_step(res.cotrained, Side::A, adv_ptrs, cfg.augment, cfg.swap_optimizer, aug_rng);
            train_step(res.cotrained, Side::B, draw_b_batch(), cfg.augment, cfg.swap_optimizer, aug_rng);
        }

        // pristine pass over D_A \ P_A
        std::vector<size_t> rest = shuffled_indices(unprotected.size(), shuffle_rng);
        for (size_t start = 0; start + bs <= rest.size(); start += bs) {
            std::vector<const FaceSample*> batch(bs);
            for (size_t i = 0; i < bs; ++i) batch[i] = &unprotected[rest[start + i]];
            train_step(res.cotrained, Side::A, batch, cfg.augment, cfg.swap_optimizer, aug_rng);
            train_step(res.cotrained, Side::B, draw_b_batch(), cfg.augment, cfg.swap_optimizer, aug_rng);
        }
    }
    return res;
}

Dataset protect_with_generator(const AdvGenerator& gen, const std::vector<std::pair<int, AffineDistortion>>& np,
                               const Dataset& protected_samples) {
    Dataset out;
    out.reserve(protected_samples.size());
    for (const FaceSample& s : protected_samples) {
        auto it = std::find_if(np.begin(), np.end(), [&](const auto& e) { return e.first == s.frame_index; });
        if (it == np.end())
            throw std::runtime_error("protect: no distortion recorded for frame " + std::to_string(s.frame_index));
        FaceSample adv;
        adv.image = ogan_perturb(gen, s.image, it->second);
        adv.mask = s.mask;
        adv.frame_index = s.frame_index;
        adv.identity_tag = s.identity_tag;
        out.push_back(std::move(adv));
    }
    return out;
}

Dataset protect_with_pgd(const SwapModel& model, const Dataset& protected_samples, const PgdConfig& cfg) {
    Dataset out;
    out.reserve(protected_samples.size());
    for (const FaceSample& s : protected_samples) {
        FaceSample adv;
        adv.image = pgd_distort(model, s.image, cfg, s.frame_index);
        adv.mask = s.mask;
        adv.frame_index = s.frame_index;
        adv.identity_tag = s.identity_tag;
        out.push_back(std::move(adv));
    }
    return out;
}

void save_distortions(const std::filesystem::path& file, const Dataset& protected_samples,
                      const std::vector<AffineDistortion>& ds) {
    if (protected_samples.size() != ds.size())
        throw std::invalid_argument("save_distortions: sample/distortion count mismatch");
    nlohmann::json list = nlohmann::json::array();
    for (size_t i = 0; i < ds.size(); ++i)
        list.push_back({{"frame_index", protected_samples[i].frame_index},
                        {"theta", ds[i].theta_deg},
                        {"shift_x", ds[i].shift_x},
                        {"shift_y", ds[i].shift_y}});
    std::ofstream f(file, std::ios::trunc);
    if (!f) throw std::runtime_error("save_distortions: cannot write " + file.string());
    f << list.dump(2) << "\n";
}

std::vector<std::pair<int, AffineDistortion>> load_distortions(const std::filesystem::path& file) {
    std::ifstream f(file);
    if (!f) throw std::runtime_error("load_distortions: cannot open " + file.string());
    nlohmann::json list = nlohmann::json::parse(f);
    std::vector<std::pair<int, AffineDistortion>> out;
    for (const auto& e : list) {
        AffineDistortion d;
        d.theta_deg = e.at("theta").get<float>();
        d.shift_x = e.at("shift_x").get<float>();
        d.shift_y = e.at("shift_y").get<float>();
        out.emplace_back(e.at("frame_index").get<int>(), d);
    }
    return out;
}

void save_generator(const AdvGenerator& gen, const std::filesystem::path& dir, const nlohmann::json& extra_meta) {
    Checkpoint ck;
    ck.params = gen.params;
    ck.meta = extra_meta.is_null() ? nlohmann::json::object() : extra_meta;
    ck.meta["kind"] = "adv_generator";
    ck.meta["epsilon"] = gen.epsilon;
    ck.meta["theta_max"] = gen.theta_max;
    ck.meta["psi_max"] = gen.psi_max;
    ck.meta["resolution"] = gen.resolution;
    ck.save(dir);
}

AdvGenerator load_generator(const std::filesystem::path& dir) {
    Checkpoint ck = Checkpoint::load(dir);
    if (ck.meta.value("kind", "") != "adv_generator")
        throw std::runtime_error("checkpoint at " + dir.string() + " is not an adversarial generator");
    AdvGenerator g;
    g.epsilon = ck.meta.at("epsilon").get<float>();
    g.theta_max = ck.meta.at("theta_max").get<float>();
    g.psi_max = ck.meta.at("psi_max").get<float>();
    g.resolution = ck.meta.at("resolution").get<int>();
    g.params = std::move(ck.params);
    return g;
}

} // namespace swaplab
