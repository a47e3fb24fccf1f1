#include "swaplab/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace swaplab {

double e_tmp(const std::vector<Tensor>& frames) {
    if (frames.size() < 2) throw std::invalid_argument("e_tmp: need at least 2 frames");
    const Tensor& first = frames.front();
    const int64_t d = first.numel();
    double acc = 0.0;
    for (size_t i = 0; i + 1 < frames.size(); ++i) {
        if (!frames[i + 1].same_shape(first))
            throw ShapeError("e_tmp: frame " + std::to_string(i + 1) + " shape " + frames[i + 1].shape_str() +
                             " differs from " + first.shape_str());
        const float* a = frames[i].data();
        const float* b = frames[i + 1].data();
        for (int64_t j = 0; j < d; ++j) {
            const double diff = static_cast<double>(b[j]) - static_cast<double>(a[j]);
            acc += diff * diff;
        }
    }
    const double n1 = static_cast<double>(frames.size() - 1);
    return kTemporalGamma * std::sqrt(acc / (static_cast<double>(d) * n1));
}

double s_tmp(const std::vector<Tensor>& attacked, const std::vector<Tensor>& baseline) {
    const double base = e_tmp(baseline);
    if (base <= 0.0) throw std::invalid_argument("s_tmp: baseline sequence is static (e_tmp = 0)");
    return e_tmp(attacked) / base - 1.0;
}

nlohmann::json TemporalReport::to_json() const {
    return {{"e_tmp_attacked", e_tmp_attacked},
            {"e_tmp_baseline", e_tmp_baseline},
            {"s_tmp", s_tmp},
            {"n_frames", n_frames},
            {"gamma", gamma}};
}

TemporalReport TemporalReport::from_json(const nlohmann::json& j) {
    TemporalReport r;
    r.e_tmp_attacked = j.at("e_tmp_attacked").get<double>();
    r.e_tmp_baseline = j.at("e_tmp_baseline").get<double>();
    r.s_tmp = j.at("s_tmp").get<double>();
    r.n_frames = j.at("n_frames").get<int>();
    r.gamma = j.at("gamma").get<double>();
    return r;
}

void TemporalReport::save(const std::filesystem::path& file) const {
    std::ofstream f(file, std::ios::trunc);
    if (!f) throw std::runtime_error("report: cannot write " + file.string());
    f << to_json().dump(2) << "\n";
}

TemporalReport TemporalReport::load(const std::filesystem::path& file) {
    std::ifstream f(file);
    if (!f) throw std::runtime_error("report: cannot open " + file.string());
    return from_json(nlohmann::json::parse(f));
}

TemporalReport score_sequences(const std::vector<Tensor>& attacked, const std::vector<Tensor>& baseline) {
    TemporalReport r;
    r.e_tmp_attacked = e_tmp(attacked);
    r.e_tmp_baseline = e_tmp(baseline);
    if (r.e_tmp_baseline <= 0.0) throw std::invalid_argument("s_tmp: baseline sequence is static (e_tmp = 0)");
    r.s_tmp = r.e_tmp_attacked / r.e_tmp_baseline - 1.0;
    r.n_frames = static_cast<int>(attacked.size());
    return r;
}

void append_curve_point(const std::filesystem::path& csv, int iteration, double s) {
    const bool fresh = !std::filesystem::exists(csv);
    std::ofstream f(csv, std::ios::app);
    if (!f) throw std::runtime_error("curve: cannot write " + csv.string());
    if (fresh) f << "iteration,s_tmp\n";
    f << iteration << "," << std::setprecision(17) << s << "\n";
}

} // namespace swaplab
