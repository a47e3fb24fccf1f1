#include "swaplab/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace swaplab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double smoothstep01(double s) {
    if (s <= 0.0) return 0.0;
    if (s >= 1.0) return 1.0;
    return s * s * (3.0 - 2.0 * s);
}

// 1 well inside rho < edge, 0 well outside, smooth and monotone across
// the [edge - f, edge + f] band.
double feather_in(double rho, double edge, double f) {
    if (f <= 0.0) return rho <= edge ? 1.0 : 0.0;
    return smoothstep01((edge + f - rho) / (2.0 * f));
}

struct TextureParams {
    double kx1, ky1, p1, kx2, ky2, p2;
};

TextureParams texture_params(uint64_t texture_seed) {
    RngStream r(texture_seed, "synth/texture");
    TextureParams t;
    t.kx1 = 0.2 + 0.5 * r.uniform();
    t.ky1 = 0.2 + 0.5 * r.uniform();
    t.p1 = 6.283 * r.uniform();
    t.kx2 = 0.5 + 0.9 * r.uniform();
    t.ky2 = 0.5 + 0.9 * r.uniform();
    t.p2 = 6.283 * r.uniform();
    return t;
}

void render_frame(const SynthIdentitySpec& s, const TextureParams& tex, int t, int res, Tensor& image, Tensor& mask) {
    const int h = res, w = res;
    const double ms = s.motion_scale;
    const double fcx = s.center_x * (w - 1) + ms * s.drift_amp_x * std::sin(s.drift_freq_x * t + s.drift_phase_x);
    const double fcy = s.center_y * (h - 1) + ms * s.drift_amp_y * std::sin(s.drift_freq_y * t + s.drift_phase_y);
    const double wob = 1.0 + ms * s.wobble_amp * std::sin(s.wobble_freq * t + s.wobble_phase);
    const double rx = s.radius_x * w * wob;
    const double ry = s.radius_y * h / wob;
    const double mouth_h = s.mouth_h * (1.0 + ms * s.mouth_amp * std::sin(s.mouth_freq * t + s.mouth_phase));

    const double aa = 0.8; // anti-alias half-width in pixels

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double dx = (x - fcx) / rx;
            const double dy = (y - fcy) / ry;
            const double rho = std::sqrt(dx * dx + dy * dy);
            const double m = feather_in(rho, 1.0, s.feather);

            // background: vertical gradient plus slow sinusoid texture
            const double grad = static_cast<double>(y) / (h - 1);
            const double noise =
                s.texture_amp * (std::sin(tex.kx1 * x + tex.ky1 * y + tex.p1) + 0.5 * std::sin(tex.kx2 * x - tex.ky2 * y + tex.p2));
            double px[3];
            for (int c = 0; c < 3; ++c) px[c] = s.bg_top[c] + (s.bg_bottom[c] - s.bg_top[c]) * grad + noise;

            // skin with radial and lateral shading
            const double shade = 1.0 - 0.22 * rho * rho - 0.10 * dx;
            double face[3];
            for (int c = 0; c < 3; ++c) face[c] = s.skin[c] * shade;

            // eyes: sclera disc, iris disc, brow bar
            for (int side = -1; side <= 1; side += 2) {
                const double ex = fcx + side * s.eye_dx * rx;
                const double ey = fcy + s.eye_dy * ry;
                const double er = s.eye_r * rx;
                const double d = std::sqrt((x - ex) * (x - ex) + (y - ey) * (y - ey));
                const double sclera = feather_in(d, er, aa);
                const double iris = feather_in(d, s.pupil_r * rx, aa);
                for (int c = 0; c < 3; ++c) {
                    face[c] = face[c] * (1.0 - sclera) + 0.93 * sclera;
                    face[c] = face[c] * (1.0 - iris) + s.eye_color[c] * iris;
                }
                const double by = fcy + s.brow_dy * ry;
                const double brow = feather_in(std::fabs(y - by), s.brow_h * ry, aa) * feather_in(std::fabs(x - ex), er * 1.3, aa);
                for (int c = 0; c < 3; ++c) face[c] = face[c] * (1.0 - 0.7 * brow) + 0.18 * 0.7 * brow;
            }

            // mouth: animated ellipse
            {
                const double mx = (x - fcx) / (s.mouth_w * rx);
                const double my = (y - (fcy + s.mouth_dy * ry)) / (mouth_h * ry);
                const double md = std::sqrt(mx * mx + my * my);
                const double mo = feather_in(md, 1.0, aa / (s.mouth_w * rx));
                for (int c = 0; c < 3; ++c) face[c] = face[c] * (1.0 - mo) + s.mouth_color[c] * mo;
            }

            float* ip = image.data() + (static_cast<size_t>(y) * w + x) * 3;
            for (int c = 0; c < 3; ++c) {
                const double v = px[c] + (face[c] - px[c]) * m;
                ip[c] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
            }
            mask[static_cast<size_t>(y) * w + x] = static_cast<float>(m);
        }
    }
}

void write_u8_image(const fs::path& p, const Tensor& t, bool color) {
    const int h = t.dim(0), w = t.dim(1), c = t.dim(2);
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("frames: cannot write " + p.string());
    f << (color ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(w) * c);
    for (int y = 0; y < h; ++y) {
        const float* src = t.data() + static_cast<size_t>(y) * w * c;
        for (int i = 0; i < w * c; ++i) {
            float v = src[i];
            v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            row[static_cast<size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

int read_pnm_token(std::istream& in, const fs::path& p) {
    // skips whitespace and '#' comments
    while (true) {
        int ch = in.peek();
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            break;
        }
    }
    int v = -1;
    in >> v;
    if (!in || v < 0) throw std::runtime_error("frames: malformed header in " + p.string());
    return v;
}

Tensor read_u8_image(const fs::path& p, bool color) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("frames: cannot open " + p.string());
    io_audit::record(p);
    std::string magic(2, '\0');
    f.read(magic.data(), 2);
    const std::string want = color ? "P6" : "P5";
    if (magic != want) throw std::runtime_error("frames: " + p.string() + " is not a " + want + " file");
    const int w = read_pnm_token(f, p);
    const int h = read_pnm_token(f, p);
    const int maxval = read_pnm_token(f, p);
    if (maxval != 255) throw std::runtime_error("frames: " + p.string() + " must be 8-bit (maxval 255)");
    f.get(); // single whitespace after maxval
    const int c = color ? 3 : 1;
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h * c);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("frames: truncated pixel data in " + p.string());
    Tensor t({h, w, c});
    for (size_t i = 0; i < buf.size(); ++i) t[static_cast<int64_t>(i)] = static_cast<float>(buf[i]) / 255.0f;
    return t;
}

} // namespace

SynthIdentitySpec SynthIdentitySpec::preset(const std::string& tag) {
    SynthIdentitySpec s;
    s.tag = tag;
    if (tag == "A") {
        s.texture_seed = 101;
    } else if (tag == "B") {
        s.texture_seed = 202;
        s.center_y = 0.50;
        s.radius_x = 0.34;
        s.radius_y = 0.35;
        s.eye_dx = 0.36;
        s.eye_r = 0.15;
        s.mouth_w = 0.55;
        s.mouth_dy = 0.50;
        double skin[3] = {0.55, 0.42, 0.33};
        double bg_top[3] = {0.45, 0.36, 0.28};
        double bg_bottom[3] = {0.62, 0.55, 0.45};
        double eye[3] = {0.30, 0.20, 0.12};
        double mouth[3] = {0.50, 0.20, 0.22};
        std::copy(skin, skin + 3, s.skin);
        std::copy(bg_top, bg_top + 3, s.bg_top);
        std::copy(bg_bottom, bg_bottom + 3, s.bg_bottom);
        std::copy(eye, eye + 3, s.eye_color);
        std::copy(mouth, mouth + 3, s.mouth_color);
        s.drift_freq_x = 0.091;
        s.drift_phase_x = 2.2;
        s.drift_freq_y = 0.129;
        s.mouth_freq = 0.083;
    } else if (tag == "C") {
        s.texture_seed = 303;
        s.center_x = 0.48;
        s.radius_x = 0.27;
        s.radius_y = 0.41;
        s.eye_dx = 0.46;
        s.eye_dy = -0.24;
        s.mouth_h = 0.10;
        double skin[3] = {0.92, 0.80, 0.70};
        double bg_top[3] = {0.15, 0.34, 0.22};
        double bg_bottom[3] = {0.30, 0.50, 0.38};
        double eye[3] = {0.12, 0.40, 0.25};
        double mouth[3] = {0.70, 0.35, 0.30};
        std::copy(skin, skin + 3, s.skin);
        std::copy(bg_top, bg_top + 3, s.bg_top);
        std::copy(bg_bottom, bg_bottom + 3, s.bg_bottom);
        std::copy(eye, eye + 3, s.eye_color);
        std::copy(mouth, mouth + 3, s.mouth_color);
        s.drift_freq_x = 0.137;
        s.drift_phase_y = 0.4;
        s.wobble_freq = 0.047;
        s.mouth_freq = 0.151;
    } else {
        throw std::invalid_argument("synth: unknown preset tag " + tag + " (expected A, B or C)");
    }
    return s;
}

SynthIdentitySpec SynthIdentitySpec::random(const std::string& tag, RngStream& rng) {
    SynthIdentitySpec s;
    s.tag = tag;
    s.center_x = 0.46 + 0.08 * rng.uniform();
    s.center_y = 0.48 + 0.08 * rng.uniform();
    s.radius_x = 0.25 + 0.10 * rng.uniform();
    s.radius_y = 0.33 + 0.10 * rng.uniform();
    s.eye_dx = 0.34 + 0.14 * rng.uniform();
    s.eye_r = 0.13 + 0.06 * rng.uniform();
    s.mouth_w = 0.40 + 0.20 * rng.uniform();
    for (int c = 0; c < 3; ++c) {
        s.skin[c] = 0.35 + 0.55 * rng.uniform();
        s.bg_top[c] = 0.15 + 0.40 * rng.uniform();
        s.bg_bottom[c] = s.bg_top[c] + 0.15 * rng.uniform();
        s.eye_color[c] = 0.10 + 0.35 * rng.uniform();
        s.mouth_color[c] = 0.20 + 0.50 * rng.uniform();
    }
    s.texture_seed = (static_cast<uint64_t>(rng.next_u32()) << 32) | rng.next_u32();
    s.drift_freq_x = 0.06 + 0.09 * rng.uniform();
    s.drift_freq_y = 0.06 + 0.09 * rng.uniform();
    s.drift_phase_x = 6.283 * rng.uniform();
    s.drift_phase_y = 6.283 * rng.uniform();
    s.mouth_freq = 0.07 + 0.10 * rng.uniform();
    s.mouth_phase = 6.283 * rng.uniform();
    return s;
}

json SynthIdentitySpec::to_json() const {
    json j;
    j["tag"] = tag;
    j["geometry"] = {{"center_x", center_x}, {"center_y", center_y}, {"radius_x", radius_x}, {"radius_y", radius_y},
                     {"eye_dx", eye_dx},     {"eye_dy", eye_dy},     {"eye_r", eye_r},       {"pupil_r", pupil_r},
                     {"brow_dy", brow_dy},   {"brow_h", brow_h},     {"mouth_dy", mouth_dy}, {"mouth_w", mouth_w},
                     {"mouth_h", mouth_h},   {"feather", feather}};
    j["palette"] = {{"skin", {skin[0], skin[1], skin[2]}},
                    {"bg_top", {bg_top[0], bg_top[1], bg_top[2]}},
                    {"bg_bottom", {bg_bottom[0], bg_bottom[1], bg_bottom[2]}},
                    {"eye", {eye_color[0], eye_color[1], eye_color[2]}},
                    {"mouth", {mouth_color[0], mouth_color[1], mouth_color[2]}}};
    j["texture"] = {{"seed", texture_seed}, {"amp", texture_amp}};
    j["motion"] = {{"scale", motion_scale},       {"drift_amp_x", drift_amp_x},   {"drift_freq_x", drift_freq_x},
                   {"drift_phase_x", drift_phase_x}, {"drift_amp_y", drift_amp_y}, {"drift_freq_y", drift_freq_y},
                   {"drift_phase_y", drift_phase_y}, {"wobble_amp", wobble_amp},   {"wobble_freq", wobble_freq},
                   {"wobble_phase", wobble_phase},   {"mouth_amp", mouth_amp},     {"mouth_freq", mouth_freq},
                   {"mouth_phase", mouth_phase},     {"noise_amp", noise_amp}};
    return j;
}

SynthIdentitySpec SynthIdentitySpec::from_json(const json& j) {
    SynthIdentitySpec s;
    s.tag = j.at("tag").get<std::string>();
    const json& g = j.at("geometry");
    s.center_x = g.at("center_x");
    s.center_y = g.at("center_y");
    s.radius_x = g.at("radius_x");
    s.radius_y = g.at("radius_y");
    s.eye_dx = g.at("eye_dx");
    s.eye_dy = g.at("eye_dy");
    s.eye_r = g.at("eye_r");
    s.pupil_r = g.at("pupil_r");
    s.brow_dy = g.at("brow_dy");
    s.brow_h = g.at("brow_h");
    s.mouth_dy = g.at("mouth_dy");
    s.mouth_w = g.at("mouth_w");
    s.mouth_h = g.at("mouth_h");
    s.feather = g.at("feather");
    const json& p = j.at("palette");
    for (int c = 0; c < 3; ++c) {
        s.skin[c] = p.at("skin")[static_cast<size_t>(c)];
        s.bg_top[c] = p.at("bg_top")[static_cast<size_t>(c)];
        s.bg_bottom[c] = p.at("bg_bottom")[static_cast<size_t>(c)];
        s.eye_color[c] = p.at("eye")[static_cast<size_t>(c)];
        s.mouth_color[c] = p.at("mouth")[static_cast<size_t>(c)];
    }
    s.texture_seed = j.at("texture").at("seed");
    s.texture_amp = j.at("texture").at("amp");
    const json& m = j.at("motion");
    s.motion_scale = m.at("scale");
    s.drift_amp_x = m.at("drift_amp_x");
    s.drift_freq_x = m.at("drift_freq_x");
    s.drift_phase_x = m.at("drift_phase_x");
    s.drift_amp_y = m.at("drift_amp_y");
    s.drift_freq_y = m.at("drift_freq_y");
    s.drift_phase_y = m.at("drift_phase_y");
    s.wobble_amp = m.at("wobble_amp");
    s.wobble_freq = m.at("wobble_freq");
    s.wobble_phase = m.at("wobble_phase");
    s.mouth_amp = m.at("mouth_amp");
    s.mouth_freq = m.at("mouth_freq");
    s.mouth_phase = m.at("mouth_phase");
    s.noise_amp = m.at("noise_amp");
    return s;
}

Dataset DatasetPartition::protected_samples() const {
    return Dataset(d_a.begin() + static_cast<std::ptrdiff_t>(protected_begin),
                   d_a.begin() + static_cast<std::ptrdiff_t>(protected_end));
}

Dataset DatasetPartition::unprotected_samples() const {
    Dataset out(d_a.begin(), d_a.begin() + static_cast<std::ptrdiff_t>(protected_begin));
    out.insert(out.end(), d_a.begin() + static_cast<std::ptrdiff_t>(protected_end), d_a.end());
    return out;
}

Dataset synthesize_sequence(const SynthIdentitySpec& spec, int n_frames, int resolution, RngStream& rng) {
    if (resolution < 16) throw std::invalid_argument("synth: resolution must be >= 16");
    if (n_frames < 2) throw std::invalid_argument("synth: need at least 2 frames");
    const TextureParams tex = texture_params(spec.texture_seed);
    Dataset out;
    out.reserve(static_cast<size_t>(n_frames));
    for (int t = 0; t < n_frames; ++t) {
        FaceSample s;
        s.image = Tensor({resolution, resolution, 3});
        s.mask = Tensor({resolution, resolution, 1});
        s.frame_index = t;
        s.identity_tag = spec.tag;
        render_frame(spec, tex, t, resolution, s.image, s.mask);
        if (spec.noise_amp > 0.0) {
            RngStream frame_rng = rng.derive_indexed("synth/noise", static_cast<uint64_t>(t));
            for (int64_t i = 0; i < s.image.numel(); ++i) {
                float v = s.image[i] + frame_rng.uniform(-static_cast<float>(spec.noise_amp),
                                                         static_cast<float>(spec.noise_amp));
                s.image[i] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

DatasetPartition build_partition(const SynthIdentitySpec& spec_a, const SynthIdentitySpec& spec_b,
                                 const SynthIdentitySpec& spec_c, int frames_per_identity, size_t protected_begin,
                                 size_t protected_end, int resolution, RngStream& rng) {
    if (protected_begin >= protected_end) throw std::invalid_argument("partition: protected range is empty");
    if (protected_end > static_cast<size_t>(frames_per_identity))
        throw std::invalid_argument("partition: protected range exceeds |D_A|");
    DatasetPartition part;
    RngStream rng_a = rng.derive("synth/A");
    RngStream rng_b = rng.derive("synth/B");
    RngStream rng_c = rng.derive("synth/C");
    part.d_a = synthesize_sequence(spec_a, frames_per_identity, resolution, rng_a);
    part.d_b = synthesize_sequence(spec_b, frames_per_identity, resolution, rng_b);
    part.d_c = synthesize_sequence(spec_c, frames_per_identity, resolution, rng_c);
    part.protected_begin = protected_begin;
    part.protected_end = protected_end;
    return part;
}

void write_ppm(const fs::path& file, const Tensor& image) {
    if (image.ndim() != 3 || image.dim(2) != 3)
        throw ShapeError("write_ppm: expected HxWx3 image, got " + image.shape_str());
    write_u8_image(file, image, true);
}

void write_frames(const fs::path& dir, const Dataset& samples) {
    fs::create_directories(dir);
    char name[32];
    for (const FaceSample& s : samples) {
        std::snprintf(name, sizeof(name), "frame_%06d.ppm", s.frame_index);
        write_u8_image(dir / name, s.image, true);
        std::snprintf(name, sizeof(name), "mask_%06d.pgm", s.frame_index);
        write_u8_image(dir / name, s.mask, false);
    }
}

Dataset read_frames(const fs::path& dir) {
    if (!fs::exists(dir)) throw std::runtime_error("frames: no such directory " + dir.string());
    std::vector<std::pair<int, fs::path>> frames;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string fn = e.path().filename().string();
        if (fn.rfind("frame_", 0) == 0 && fn.size() == 16 && fn.substr(12) == ".ppm")
            frames.emplace_back(std::stoi(fn.substr(6, 6)), e.path());
    }
    std::sort(frames.begin(), frames.end());

    Dataset out;
    out.reserve(frames.size());
    int resolution = -1;
    for (const auto& [idx, path] : frames) {
        FaceSample s;
        s.frame_index = idx;
        s.image = read_u8_image(path, true);
        if (resolution < 0) resolution = s.image.dim(0);
        if (s.image.dim(0) != resolution || s.image.dim(1) != resolution)
            throw std::runtime_error("frames: inconsistent resolution in " + path.string());
        char mask_name[32];
        std::snprintf(mask_name, sizeof(mask_name), "mask_%06d.pgm", idx);
        const fs::path mp = dir / mask_name;
        if (fs::exists(mp)) {
            s.mask = read_u8_image(mp, false);
            if (s.mask.dim(0) != resolution || s.mask.dim(1) != resolution)
                throw std::runtime_error("frames: inconsistent resolution in " + mp.string());
        } else {
            s.mask = Tensor({resolution, resolution, 1}, 1.0f);
        }
        out.push_back(std::move(s));
    }
    return out;
}

namespace io_audit {
namespace {
std::vector<std::string>& registry() {
    static std::vector<std::string> files;
    return files;
}
} // namespace

void record(const fs::path& p) { registry().push_back(p.string()); }

std::vector<std::string> take() {
    std::vector<std::string> out;
    out.swap(registry());
    return out;
}
} // namespace io_audit

} // namespace swaplab
