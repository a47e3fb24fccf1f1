#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "swaplab/attacks.hpp"
#include "swaplab/faceswap.hpp"
#include "swaplab/metrics.hpp"
#include "swaplab/synthdata.hpp"

namespace swaplab::harness {

namespace fs = std::filesystem;

// ---- workspace layout -------------------------------------------------

/// Datasets as stored on disk: one frame directory per identity plus a
/// partition sidecar (specs, seed, resolution, protected range).
struct DataBundle {
    DatasetPartition part;
    int resolution = 32;
    nlohmann::json sidecar;
};

DataBundle load_data(const fs::path& data_dir);

/// Side-B training data for a swap direction ("A2B" or "A2C").
const Dataset& target_set(const DataBundle& d, const std::string& direction);

// ---- experiment plan ----------------------------------------------------

struct ArmSpec {
    std::string id;
    std::string attack = "none"; // ogan | pgd | none
    std::string victim_arch = "h128-mini";
    std::string direction = "A2B"; // A2B | A2C
    bool include_adversarial = true;
    int retrain_iterations = 3000;
    int eval_every = 0; // > 0 records a curve at every multiple
    std::vector<uint64_t> seeds; // empty = plan-wide seeds
};

struct ExperimentPlan {
    std::vector<uint64_t> seeds{0, 1, 2};
    uint64_t data_seed = 0;
    int frames = 512;
    int protected_begin = 0;
    int protected_count = 48;
    int resolution = 32;
    int pretrain_iterations = 3000;
    int batch_size = 16;
    PgdConfig pgd;
    OganConfig ogan;
    std::vector<ArmSpec> arms;

    static ExperimentPlan from_json(const nlohmann::json& j);
    static ExperimentPlan load(const fs::path& file);
    nlohmann::json to_json() const;
    void validate() const;

    /// The desk-scale grid mirroring the paper's experiment tables.
    static ExperimentPlan desk_grid();
};

// ---- CLI phases ---------------------------------------------------------

struct SynthOptions {
    fs::path out;
    uint64_t seed = 0;
    int frames = 512;
    int protected_begin = 0;
    int protected_count = 48;
    int resolution = 32;
};
void run_synth(const SynthOptions& o);

struct PretrainOptions {
    fs::path data;
    fs::path out;
    std::string arch = "h128-mini";
    std::string direction = "A2B";
    uint64_t seed = 0;
    int iterations = 3000;
    int batch_size = 16;
};
void run_pretrain(const PretrainOptions& o);

struct AttackOptions {
    std::string kind; // pgd | ogan
    fs::path model;   // pretrained swap model checkpoint
    fs::path data;
    fs::path out;
    uint64_t seed = 0;
    PgdConfig pgd;
    OganConfig ogan;
};
void run_attack(const AttackOptions& o);

struct RetrainOptions {
    fs::path data;
    fs::path adversarial; // frame dir; ignored unless include_adversarial
    fs::path out;
    std::string arch = "h128-mini";
    std::string direction = "A2B";
    std::string arm_id = "arm";
    uint64_t seed = 0;
    int iterations = 3000;
    int batch_size = 16;
    bool include_adversarial = true;
    int checkpoint_every = 0;
};
void run_retrain(const RetrainOptions& o);

struct EvaluateOptions {
    fs::path victim; // model checkpoint dir
    fs::path data;
    fs::path adversarial; // empty = score the pristine sequence against itself
    fs::path out;         // report JSON
};
void run_evaluate(const EvaluateOptions& o);

struct CurveOptions {
    fs::path victim_run; // retrain output dir containing ckpt_* subdirs
    fs::path data;
    fs::path adversarial;
    fs::path out; // CSV
};
void run_curve(const CurveOptions& o);

struct ReportOptions {
    fs::path results; // a run workspace
    fs::path out;
};
void run_report(const ReportOptions& o);

struct RunOptions {
    fs::path plan_file; // empty = built-in desk grid
    fs::path out;
    int jobs = 2;
    bool force = false;
    std::string self_exe; // binary to spawn phases with
};
/// Executes the plan as a layered DAG of child phase processes. Returns 0
/// only when every requested arm completed.
int run_plan(const RunOptions& o);

// ---- shared helpers -------------------------------------------------

uint64_t config_fingerprint(const nlohmann::json& config);
bool phase_done(const fs::path& out_dir, uint64_t fingerprint);
void mark_phase_done(const fs::path& out_dir, uint64_t fingerprint);

/// run.json written by every phase: config echo, wall time, files read.
void write_run_manifest(const fs::path& out_dir, const std::string& phase, const nlohmann::json& config,
                        double runtime_sec, const nlohmann::json& extra);

} // namespace swaplab::harness
