#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "swaplab/tensor.hpp"

namespace swaplab {

inline constexpr double kTemporalGamma = 1000.0;

/// Spatial-temporal consistency score of a frame sequence:
/// gamma * sqrt( sum_i ||y_{i+1} - y_i||^2 / (d * (n - 1)) ), where d counts
/// all elements of one frame (pixels times channels). Needs n >= 2.
double e_tmp(const std::vector<Tensor>& frames);

/// Normalized score e_tmp(attacked) / e_tmp(baseline) - 1; rejects a static
/// (zero e_tmp) baseline.
double s_tmp(const std::vector<Tensor>& attacked, const std::vector<Tensor>& baseline);

/// E_tmp/S_tmp results of one experiment arm.
struct TemporalReport {
    double e_tmp_attacked = 0.0;
    double e_tmp_baseline = 0.0;
    double s_tmp = 0.0;
    int n_frames = 0;
    double gamma = kTemporalGamma;

    nlohmann::json to_json() const;
    static TemporalReport from_json(const nlohmann::json& j);

    void save(const std::filesystem::path& file) const;
    static TemporalReport load(const std::filesystem::path& file);
};

TemporalReport score_sequences(const std::vector<Tensor>& attacked, const std::vector<Tensor>& baseline);

/// Appends "iteration,s_tmp" rows; writes the header when creating the file.
void append_curve_point(const std::filesystem::path& csv, int iteration, double s);

} // namespace swaplab
