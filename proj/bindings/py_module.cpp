#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "swaplab/attacks.hpp"
#include "swaplab/harness.hpp"
#include "swaplab/metrics.hpp"

namespace py = pybind11;
using namespace swaplab;

namespace {

using FArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const FArray& a) {
    std::vector<int> shape(static_cast<size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = static_cast<int>(a.shape(i));
    Tensor t(shape);
    std::copy(a.data(), a.data() + a.size(), t.data());
    return t;
}

py::array array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> a(shape);
    std::copy(t.data(), t.data() + t.numel(), a.mutable_data());
    return a;
}

std::vector<Tensor> frames_from_array(const FArray& a) {
    if (a.ndim() != 4) throw std::invalid_argument("expected a (n, h, w, c) frame array");
    std::vector<Tensor> frames;
    const int n = static_cast<int>(a.shape(0));
    const int h = static_cast<int>(a.shape(1)), w = static_cast<int>(a.shape(2)), c = static_cast<int>(a.shape(3));
    const int64_t plane = static_cast<int64_t>(h) * w * c;
    for (int i = 0; i < n; ++i) {
        Tensor t({h, w, c});
        std::copy(a.data() + i * plane, a.data() + (i + 1) * plane, t.data());
        frames.push_back(std::move(t));
    }
    return frames;
}

py::array array_from_frames(const std::vector<Tensor>& frames) {
    const int h = frames.front().dim(0), w = frames.front().dim(1), c = frames.front().dim(2);
    py::array_t<float> a({static_cast<py::ssize_t>(frames.size()), static_cast<py::ssize_t>(h),
                          static_cast<py::ssize_t>(w), static_cast<py::ssize_t>(c)});
    const int64_t plane = static_cast<int64_t>(h) * w * c;
    for (size_t i = 0; i < frames.size(); ++i)
        std::copy(frames[i].data(), frames[i].data() + plane, a.mutable_data() + static_cast<int64_t>(i) * plane);
    return a;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Training-resistant adversarial attacks on miniature face-swapping autoencoders";

    // metrics
    m.def(
        "e_tmp", [](const FArray& frames) { return e_tmp(frames_from_array(frames)); },
        py::arg("frames"), "Spatial-temporal score of an (n, h, w, c) frame array.");
    m.def(
        "s_tmp",
        [](const FArray& attacked, const FArray& baseline) {
            return s_tmp(frames_from_array(attacked), frames_from_array(baseline));
        },
        py::arg("attacked"), py::arg("baseline"));

    // transforms
    m.def(
        "sample_distortion",
        [](float theta_max, float psi_max, uint64_t seed) {
            RngStream rng(seed, "py/distortions");
            AffineDistortion d = sample_distortion({theta_max, psi_max}, rng);
            return py::make_tuple(d.theta_deg, d.shift_x, d.shift_y);
        },
        py::arg("theta_max"), py::arg("psi_max"), py::arg("seed") = 0);
    m.def(
        "apply_affine",
        [](const FArray& img, float theta, float shift_x, float shift_y) {
            return array_from_tensor(apply_affine(tensor_from_array(img), {theta, shift_x, shift_y}));
        },
        py::arg("image"), py::arg("theta"), py::arg("shift_x"), py::arg("shift_y"),
        "Rotate about the center then shift; bilinear with edge clamping.");

    // synthetic data
    m.def(
        "synthesize_sequence",
        [](const std::string& identity, int n_frames, int resolution, uint64_t seed) {
            RngStream rng(seed, "py/synth");
            Dataset d = synthesize_sequence(SynthIdentitySpec::preset(identity), n_frames, resolution, rng);
            std::vector<Tensor> images, masks;
            for (FaceSample& s : d) {
                images.push_back(std::move(s.image));
                masks.push_back(std::move(s.mask));
            }
            return py::make_tuple(array_from_frames(images), array_from_frames(masks));
        },
        py::arg("identity"), py::arg("n_frames"), py::arg("resolution") = 32, py::arg("seed") = 0);
    m.def("read_frames", [](const std::filesystem::path& dir) {
        Dataset d = read_frames(dir);
        std::vector<Tensor> images, masks;
        std::vector<int> indices;
        for (FaceSample& s : d) {
            images.push_back(std::move(s.image));
            masks.push_back(std::move(s.mask));
            indices.push_back(s.frame_index);
        }
        return py::make_tuple(array_from_frames(images), array_from_frames(masks), indices);
    });

    // models and attacks on checkpoint directories
    m.def(
        "swap_frames",
        [](const std::filesystem::path& model_dir, const FArray& frames) {
            SwapModel model = load_model(model_dir);
            Dataset d;
            int idx = 0;
            for (Tensor& t : frames_from_array(frames)) {
                FaceSample s;
                s.image = std::move(t);
                s.mask = Tensor({s.image.dim(0), s.image.dim(1), 1}, 1.0f);
                s.frame_index = idx++;
                d.push_back(std::move(s));
            }
            return array_from_frames(swap_sequence(model, d));
        },
        py::arg("model_dir"), py::arg("frames"), "Deepfake blend H(x) per frame.");
    m.def(
        "pgd_distort",
        [](const std::filesystem::path& model_dir, const FArray& image, float epsilon, float alpha, int iterations,
           uint64_t seed, int frame_index) {
            PgdConfig cfg;
            cfg.epsilon = epsilon;
            cfg.alpha = alpha;
            cfg.iterations = iterations;
            cfg.seed = seed;
            return array_from_tensor(pgd_distort(load_model(model_dir), tensor_from_array(image), cfg, frame_index));
        },
        py::arg("model_dir"), py::arg("image"), py::arg("epsilon") = 2.0f / 255.0f, py::arg("alpha") = 0.001f,
        py::arg("iterations") = 200, py::arg("seed") = 0, py::arg("frame_index") = 0);
    m.def(
        "ogan_perturb",
        [](const std::filesystem::path& generator_dir, const FArray& image, float theta, float shift_x, float shift_y) {
            return array_from_tensor(
                ogan_perturb(load_generator(generator_dir), tensor_from_array(image), {theta, shift_x, shift_y}));
        },
        py::arg("generator_dir"), py::arg("image"), py::arg("theta"), py::arg("shift_x"), py::arg("shift_y"));

    // experiment phases (directory-level, mirroring the CLI)
    m.def(
        "synth",
        [](const std::filesystem::path& out, uint64_t seed, int frames, int protected_begin, int protected_count,
           int resolution) {
            harness::run_synth({out, seed, frames, protected_begin, protected_count, resolution});
        },
        py::arg("out"), py::arg("seed") = 0, py::arg("frames") = 512, py::arg("protected_begin") = 0,
        py::arg("protected_count") = 48, py::arg("resolution") = 32);
    m.def(
        "pretrain",
        [](const std::filesystem::path& data, const std::filesystem::path& out, const std::string& arch,
           const std::string& direction, uint64_t seed, int iterations, int batch_size) {
            harness::run_pretrain({data, out, arch, direction, seed, iterations, batch_size});
        },
        py::arg("data"), py::arg("out"), py::arg("arch") = "h128-mini", py::arg("direction") = "A2B",
        py::arg("seed") = 0, py::arg("iterations") = 3000, py::arg("batch_size") = 16);
    m.def(
        "attack",
        [](const std::string& kind, const std::filesystem::path& model, const std::filesystem::path& data,
           const std::filesystem::path& out, uint64_t seed, int iterations_or_epochs) {
            harness::AttackOptions o;
            o.kind = kind;
            o.model = model;
            o.data = data;
            o.out = out;
            o.seed = seed;
            if (iterations_or_epochs > 0) {
                o.pgd.iterations = iterations_or_epochs;
                o.ogan.epochs = iterations_or_epochs;
            }
            harness::run_attack(o);
        },
        py::arg("kind"), py::arg("model"), py::arg("data"), py::arg("out"), py::arg("seed") = 0,
        py::arg("iterations_or_epochs") = 0);
    m.def(
        "retrain",
        [](const std::filesystem::path& data, const std::filesystem::path& out, const std::filesystem::path& adversarial,
           const std::string& arch, const std::string& direction, const std::string& arm, uint64_t seed, int iterations,
           int batch_size, bool include_adversarial, int checkpoint_every) {
            harness::RetrainOptions o;
            o.data = data;
            o.out = out;
            o.adversarial = adversarial;
            o.arch = arch;
            o.direction = direction;
            o.arm_id = arm;
            o.seed = seed;
            o.iterations = iterations;
            o.batch_size = batch_size;
            o.include_adversarial = include_adversarial;
            o.checkpoint_every = checkpoint_every;
            harness::run_retrain(o);
        },
        py::arg("data"), py::arg("out"), py::arg("adversarial") = std::filesystem::path(),
        py::arg("arch") = "h128-mini", py::arg("direction") = "A2B", py::arg("arm") = "arm", py::arg("seed") = 0,
        py::arg("iterations") = 3000, py::arg("batch_size") = 16, py::arg("include_adversarial") = true,
        py::arg("checkpoint_every") = 0);
    m.def(
        "evaluate",
        [](const std::filesystem::path& victim, const std::filesystem::path& data,
           const std::filesystem::path& adversarial, const std::filesystem::path& out) {
            harness::run_evaluate({victim, data, adversarial, out});
            return TemporalReport::load(out).to_json().dump();
        },
        py::arg("victim"), py::arg("data"), py::arg("adversarial"), py::arg("out"));
}
