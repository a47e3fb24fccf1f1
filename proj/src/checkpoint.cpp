#include "swaplab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace swaplab {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {

std::vector<char> read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + p.string());
    return std::vector<char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void append_tensor(json& list, std::ofstream& blob, uint64_t& offset, const std::string& name, const Tensor& t) {
    list.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    blob.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
}

Tensor read_tensor(const std::vector<char>& blob, const json& entry) {
    std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    const uint64_t offset = entry.at("offset").get<uint64_t>();
    const int64_t count = shape_numel(shape);
    if (offset + count * sizeof(float) > blob.size())
        throw std::runtime_error("checkpoint: blob truncated at tensor " + entry.at("name").get<std::string>());
    Tensor t(shape);
    std::memcpy(t.data(), blob.data() + offset, static_cast<size_t>(count) * sizeof(float));
    return t;
}

} // namespace

void Checkpoint::save(const fs::path& dir) const {
    fs::create_directories(dir);
    std::ofstream blob(dir / "blob.bin", std::ios::binary | std::ios::trunc);
    if (!blob) throw std::runtime_error("checkpoint: cannot write " + (dir / "blob.bin").string());

    json manifest;
    manifest["format"] = "swaplab-ckpt-v1";
    manifest["meta"] = meta.is_null() ? json::object() : meta;

    json tensors = json::array();
    json steps = json::object();
    uint64_t offset = 0;
    for (size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.names()[i];
        const ParamState& p = params[i];
        append_tensor(tensors, blob, offset, name, p.value);
        append_tensor(tensors, blob, offset, name + ".adam_m", p.m);
        append_tensor(tensors, blob, offset, name + ".adam_v", p.v);
        steps[name] = p.step;
    }
    manifest["tensors"] = std::move(tensors);
    manifest["adam_steps"] = std::move(steps);

    json rng_list = json::array();
    for (const RngRecord& r : rng)
        rng_list.push_back({{"purpose", r.purpose}, {"seed", r.seed}, {"stream", r.stream}, {"counter", r.counter}});
    manifest["rng"] = std::move(rng_list);

    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) throw std::runtime_error("checkpoint: cannot write " + (dir / "manifest.json").string());
    mf << manifest.dump(2) << "\n";
}

Checkpoint Checkpoint::load(const fs::path& dir) {
    json manifest = json::parse(read_file(dir / "manifest.json"));
    if (manifest.at("format") != "swaplab-ckpt-v1")
        throw std::runtime_error("checkpoint: unknown format in " + dir.string());
    std::vector<char> blob = read_file(dir / "blob.bin");

    Checkpoint ck;
    ck.meta = manifest.value("meta", json::object());

    // value/adam_m/adam_v triples in manifest order
    const json& tensors = manifest.at("tensors");
    if (tensors.size() % 3 != 0) throw std::runtime_error("checkpoint: tensor list not in value/m/v triples");
    for (size_t i = 0; i + 3 <= tensors.size(); i += 3) {
        const std::string name = tensors[i].at("name").get<std::string>();
        ParamState& p = ck.params.add(name, read_tensor(blob, tensors[i]));
        p.m = read_tensor(blob, tensors[i + 1]);
        p.v = read_tensor(blob, tensors[i + 2]);
        if (!p.m.same_shape(p.value) || !p.v.same_shape(p.value))
            throw std::runtime_error("checkpoint: Adam moment shape mismatch for " + name);
        p.step = manifest.at("adam_steps").at(name).get<int64_t>();
        if (p.step < 0) throw std::runtime_error("checkpoint: negative step counter for " + name);
    }

    for (const json& r : manifest.value("rng", json::array())) {
        RngRecord rec;
        rec.purpose = r.at("purpose").get<std::string>();
        rec.seed = r.at("seed").get<uint64_t>();
        rec.stream = r.at("stream").get<uint32_t>();
        rec.counter = r.at("counter").get<uint64_t>();
        ck.rng.push_back(std::move(rec));
    }
    return ck;
}

RngStream Checkpoint::restore_stream(const std::string& purpose) const {
    for (const RngRecord& r : rng)
        if (r.purpose == purpose) return RngStream(r.seed, r.stream, r.counter);
    throw std::runtime_error("checkpoint: no RNG record for purpose " + purpose);
}

void Checkpoint::record_stream(const std::string& purpose, const RngStream& s) {
    for (RngRecord& r : rng)
        if (r.purpose == purpose) {
            r.seed = s.seed();
            r.stream = s.stream();
            r.counter = s.counter();
            return;
        }
    rng.push_back(RngRecord{purpose, s.seed(), s.stream(), s.counter()});
}

bool checkpoints_identical(const fs::path& a, const fs::path& b) {
    for (const char* f : {"manifest.json", "blob.bin"}) {
        std::vector<char> fa = read_file(a / f);
        std::vector<char> fb = read_file(b / f);
        if (fa != fb) return false;
    }
    return true;
}

} // namespace swaplab
