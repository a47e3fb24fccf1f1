#include "swaplab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <sys/wait.h>
#include <unistd.h>

namespace swaplab::harness {

using nlohmann::json;

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("cannot open " + p.string());
    return json::parse(f);
}

void write_json(const fs::path& p, const json& j) {
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << j.dump(2) << "\n";
}

std::string lineage_id(const std::string& phase, const std::string& detail, uint64_t seed) {
    return phase + ":" + detail + ":seed" + std::to_string(seed);
}

Dataset sorted_by_frame(Dataset d) {
    std::sort(d.begin(), d.end(), [](const FaceSample& a, const FaceSample& b) { return a.frame_index < b.frame_index; });
    return d;
}

float smoothed_tail(const std::vector<float>& loss, size_t window) {
    if (loss.empty()) return 0.0f;
    const size_t n = std::min(window, loss.size());
    double acc = 0.0;
    for (size_t i = loss.size() - n; i < loss.size(); ++i) acc += loss[i];
    return static_cast<float>(acc / static_cast<double>(n));
}

} // namespace

// ---- workspace ---------------------------------------------------------

DataBundle load_data(const fs::path& data_dir) {
    DataBundle d;
    d.sidecar = read_json(data_dir / "partition.json");
    d.resolution = d.sidecar.at("resolution").get<int>();
    d.part.d_a = sorted_by_frame(read_frames(data_dir / "A"));
    d.part.d_b = sorted_by_frame(read_frames(data_dir / "B"));
    d.part.d_c = sorted_by_frame(read_frames(data_dir / "C"));
    d.part.protected_begin = d.sidecar.at("protected_begin").get<size_t>();
    d.part.protected_end = d.sidecar.at("protected_end").get<size_t>();
    if (d.part.protected_end > d.part.d_a.size() || d.part.protected_begin >= d.part.protected_end)
        throw std::runtime_error("data: invalid protected range in " + data_dir.string());
    return d;
}

const Dataset& target_set(const DataBundle& d, const std::string& direction) {
    if (direction == "A2B") return d.part.d_b;
    if (direction == "A2C") return d.part.d_c;
    throw std::invalid_argument("direction must be A2B or A2C, got " + direction);
}

// ---- plan ----------------------------------------------------------------

ExperimentPlan ExperimentPlan::desk_grid() {
    ExperimentPlan p;
    p.seeds = {0, 1, 2};
    p.pgd.iterations = 200;
    p.ogan.epochs = 48;
    for (const std::string attack : {"ogan", "pgd"}) {
        p.arms.push_back({attack + "_h128_A2B_incl", attack, "h128-mini", "A2B", true, 3000, 0, {}});
        p.arms.push_back({attack + "_h128_A2B_excl", attack, "h128-mini", "A2B", false, 3000, 0, {}});
        p.arms.push_back({attack + "_sae_A2B_incl", attack, "sae-mini", "A2B", true, 3000, 0, {}});
        p.arms.push_back({attack + "_h128_A2C_incl", attack, "h128-mini", "A2C", true, 3000, 0, {}});
        // Fig-5 analogue: 2.5x retraining with periodic checkpoints, seed 0
        p.arms.push_back({attack + "_h128_A2B_incl_long", attack, "h128-mini", "A2B", true, 7500, 375, {0}});
    }
    return p;
}

ExperimentPlan ExperimentPlan::from_json(const json& j) {
    ExperimentPlan p;
    if (j.contains("seeds")) p.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    p.data_seed = j.value("data_seed", p.data_seed);
    if (j.contains("data")) {
        const json& d = j.at("data");
        p.frames = d.value("frames", p.frames);
        p.protected_begin = d.value("protected_begin", p.protected_begin);
        p.protected_count = d.value("protected_count", p.protected_count);
        p.resolution = d.value("resolution", p.resolution);
    }
    if (j.contains("pretrain")) {
        p.pretrain_iterations = j.at("pretrain").value("iterations", p.pretrain_iterations);
        p.batch_size = j.at("pretrain").value("batch_size", p.batch_size);
    }
    if (j.contains("attacks")) {
        const json& a = j.at("attacks");
        if (a.contains("pgd")) {
            const json& g = a.at("pgd");
            p.pgd.epsilon = g.value("epsilon", p.pgd.epsilon);
            p.pgd.alpha = g.value("alpha", p.pgd.alpha);
            p.pgd.iterations = g.value("iterations", p.pgd.iterations);
        }
        if (a.contains("ogan")) {
            const json& g = a.at("ogan");
            p.ogan.epsilon = g.value("epsilon", p.ogan.epsilon);
            p.ogan.theta_max = g.value("theta_max", p.ogan.theta_max);
            p.ogan.psi_max = g.value("psi_max", p.ogan.psi_max);
            p.ogan.batch_size = g.value("batch_size", p.ogan.batch_size);
            p.ogan.batch_iters = g.value("batch_iters", p.ogan.batch_iters);
            p.ogan.epochs = g.value("epochs", p.ogan.epochs);
        }
    }
    if (j.contains("arms")) {
        p.arms.clear();
        for (const json& a : j.at("arms")) {
            ArmSpec arm;
            arm.id = a.at("id").get<std::string>();
            arm.attack = a.value("attack", arm.attack);
            arm.victim_arch = a.value("victim_arch", arm.victim_arch);
            arm.direction = a.value("direction", arm.direction);
            arm.include_adversarial = a.value("include_adversarial", arm.include_adversarial);
            arm.retrain_iterations = a.value("retrain_iterations", arm.retrain_iterations);
            arm.eval_every = a.value("eval_every", arm.eval_every);
            if (a.contains("seeds")) arm.seeds = a.at("seeds").get<std::vector<uint64_t>>();
            p.arms.push_back(std::move(arm));
        }
    }
    p.validate();
    return p;
}

ExperimentPlan ExperimentPlan::load(const fs::path& file) { return from_json(read_json(file)); }

json ExperimentPlan::to_json() const {
    json j;
    j["seeds"] = seeds;
    j["data_seed"] = data_seed;
    j["data"] = {{"frames", frames},
                 {"protected_begin", protected_begin},
                 {"protected_count", protected_count},
                 {"resolution", resolution}};
    j["pretrain"] = {{"iterations", pretrain_iterations}, {"batch_size", batch_size}};
    j["attacks"] = {{"pgd", {{"epsilon", pgd.epsilon}, {"alpha", pgd.alpha}, {"iterations", pgd.iterations}}},
                    {"ogan",
                     {{"epsilon", ogan.epsilon},
                      {"theta_max", ogan.theta_max},
                      {"psi_max", ogan.psi_max},
                      {"batch_size", ogan.batch_size},
                      {"batch_iters", ogan.batch_iters},
                      {"epochs", ogan.epochs}}}};
    j["arms"] = json::array();
    for (const ArmSpec& a : arms)
        j["arms"].push_back({{"id", a.id},
                             {"attack", a.attack},
                             {"victim_arch", a.victim_arch},
                             {"direction", a.direction},
                             {"include_adversarial", a.include_adversarial},
                             {"retrain_iterations", a.retrain_iterations},
                             {"eval_every", a.eval_every},
                             {"seeds", a.seeds.empty() ? seeds : a.seeds}});
    return j;
}

void ExperimentPlan::validate() const {
    if (seeds.empty()) throw std::invalid_argument("plan: needs at least one seed");
    std::set<std::string> ids;
    for (const ArmSpec& a : arms) {
        if (!ids.insert(a.id).second) throw std::invalid_argument("plan: duplicate arm id " + a.id);
        if (a.attack != "ogan" && a.attack != "pgd" && a.attack != "none")
            throw std::invalid_argument("plan: arm " + a.id + " has unknown attack " + a.attack);
        arch_from_name(a.victim_arch);
        if (a.direction != "A2B" && a.direction != "A2C")
            throw std::invalid_argument("plan: arm " + a.id + " has unknown direction " + a.direction);
        if (a.eval_every < 0 || (a.eval_every > 0 && a.retrain_iterations % a.eval_every != 0))
            throw std::invalid_argument("plan: arm " + a.id + ": eval_every must divide retrain_iterations");
        if (a.attack == "none") {
            // a no-attack arm must baseline some attacked arm of the same victim setting
            const bool paired = std::any_of(arms.begin(), arms.end(), [&](const ArmSpec& b) {
                return b.attack != "none" && b.victim_arch == a.victim_arch && b.direction == a.direction;
            });
            if (!paired)
                throw std::invalid_argument("plan: baseline arm " + a.id + " pairs with no attacked arm");
        }
    }
}

// ---- phase bookkeeping -------------------------------------------------

uint64_t config_fingerprint(const json& config) {
    const std::string s = config.dump();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

bool phase_done(const fs::path& out_dir, uint64_t fingerprint) {
    const fs::path f = out_dir / "done.json";
    if (!fs::exists(f)) return false;
    try {
        return read_json(f).at("fingerprint").get<uint64_t>() == fingerprint;
    } catch (...) {
        return false;
    }
}

void mark_phase_done(const fs::path& out_dir, uint64_t fingerprint) {
    write_json(out_dir / "done.json", json{{"fingerprint", fingerprint}});
}

void write_run_manifest(const fs::path& out_dir, const std::string& phase, const json& config, double runtime_sec,
                        const json& extra) {
    json j;
    j["phase"] = phase;
    j["config"] = config;
    j["runtime_sec"] = runtime_sec;
    j["files_read"] = io_audit::take();
    if (!extra.is_null()) j["detail"] = extra;
    write_json(out_dir / "run.json", j);
}

// ---- phases ---------------------------------------------------------------

void run_synth(const SynthOptions& o) {
    const double t0 = now_seconds();
    io_audit::take();
    if (o.protected_count <= 0 || o.protected_begin < 0 || o.protected_begin + o.protected_count > o.frames)
        throw std::invalid_argument("synth: protected range must be a non-empty slice of the A sequence");

    RngStream rng(o.seed, "synth");
    const SynthIdentitySpec sa = SynthIdentitySpec::preset("A");
    const SynthIdentitySpec sb = SynthIdentitySpec::preset("B");
    const SynthIdentitySpec sc = SynthIdentitySpec::preset("C");
    DatasetPartition part = build_partition(sa, sb, sc, o.frames, static_cast<size_t>(o.protected_begin),
                                            static_cast<size_t>(o.protected_begin + o.protected_count), o.resolution,
                                            rng);

    write_frames(o.out / "A", part.d_a);
    write_frames(o.out / "B", part.d_b);
    write_frames(o.out / "C", part.d_c);

    json sidecar;
    sidecar["seed"] = o.seed;
    sidecar["resolution"] = o.resolution;
    sidecar["frames"] = o.frames;
    sidecar["protected_begin"] = part.protected_begin;
    sidecar["protected_end"] = part.protected_end;
    sidecar["specs"] = {{"A", sa.to_json()}, {"B", sb.to_json()}, {"C", sc.to_json()}};
    write_json(o.out / "partition.json", sidecar);

    json cfg{{"seed", o.seed},       {"frames", o.frames},           {"resolution", o.resolution},
             {"protected_begin", o.protected_begin}, {"protected_count", o.protected_count}};
    write_run_manifest(o.out, "synth", cfg, now_seconds() - t0, {});
    mark_phase_done(o.out, config_fingerprint(cfg));
}

void run_pretrain(const PretrainOptions& o) {
    const double t0 = now_seconds();
    io_audit::take();
    DataBundle data = load_data(o.data);

    TrainConfig cfg;
    cfg.iterations = o.iterations;
    cfg.batch_size = o.batch_size;
    cfg.seed = o.seed;
    cfg.stream_namespace = "pretrain";
    PretrainResult res = pretrain(data.part.d_a, target_set(data, o.direction), arch_from_name(o.arch), cfg);

    json meta;
    meta["phase"] = "pretrain";
    meta["seed"] = o.seed;
    meta["direction"] = o.direction;
    meta["lineage"] = {{"id", lineage_id("pretrain", o.arch + "/" + o.direction, o.seed)}, {"parent", nullptr}};
    meta["init_stream"] = "model-init/" + o.arch + "/pretrain";
    save_model(res.model, o.out / "model", meta);

    json cfg_json{{"data", o.data.string()}, {"arch", o.arch},   {"direction", o.direction},
                  {"seed", o.seed},          {"iterations", o.iterations}, {"batch_size", o.batch_size}};
    json detail;
    detail["loss_a"] = res.loss_a;
    detail["loss_b"] = res.loss_b;
    detail["final_loss_a_smoothed100"] = smoothed_tail(res.loss_a, 100);
    detail["final_loss_b_smoothed100"] = smoothed_tail(res.loss_b, 100);
    write_run_manifest(o.out, "pretrain", cfg_json, now_seconds() - t0, detail);
    mark_phase_done(o.out, config_fingerprint(cfg_json));
}

void run_attack(const AttackOptions& o) {
    const double t0 = now_seconds();
    io_audit::take();
    DataBundle data = load_data(o.data);
    SwapModel base = load_model(o.model);
    const Dataset protected_set = data.part.protected_samples();

    json detail;
    Dataset adversarial;
    if (o.kind == "pgd") {
        PgdConfig cfg = o.pgd;
        cfg.seed = o.seed;
        adversarial = protect_with_pgd(base, protected_set, cfg);
    } else if (o.kind == "ogan") {
        OganConfig cfg = o.ogan;
        cfg.seed = o.seed;
        OganResult res = ogan_train(data.part, base, cfg);

        json gen_meta;
        gen_meta["phase"] = "attack/ogan";
        gen_meta["seed"] = o.seed;
        gen_meta["lineage"] = {{"id", lineage_id("attack/ogan", "generator", o.seed)},
                               {"trained_against", lineage_id("pretrain", std::string(arch_name(base.arch)) + "/A2B", o.seed)}};
        save_generator(res.generator, o.out / "generator", gen_meta);
        save_distortions(o.out / "distortions.json", protected_set, res.distortions);

        json co_meta;
        co_meta["phase"] = "attack/ogan-cotrained";
        co_meta["seed"] = o.seed;
        co_meta["lineage"] = {{"id", lineage_id("attack/ogan", "cotrained", o.seed)},
                              {"parent", lineage_id("pretrain", std::string(arch_name(base.arch)) + "/A2B", o.seed)}};
        save_model(res.cotrained, o.out / "cotrained", co_meta);

        auto np = load_distortions(o.out / "distortions.json");
        adversarial = protect_with_generator(res.generator, np, protected_set);
        detail["generator_steps"] = res.adv_loss.size();
        detail["final_adv_loss_smoothed100"] = smoothed_tail(res.adv_loss, 100);
    } else {
        throw std::invalid_argument("attack: unknown kind " + o.kind);
    }

    write_frames(o.out / "frames", adversarial);

    // diagnostics: the budget actually used
    double max_dev = 0.0, mean_dev = 0.0;
    int64_t count = 0;
    for (size_t i = 0; i < adversarial.size(); ++i) {
        const Tensor& a = adversarial[i].image;
        const Tensor& x = protected_set[i].image;
        for (int64_t j = 0; j < a.numel(); ++j) {
            const double dev = std::fabs(static_cast<double>(a[j]) - static_cast<double>(x[j]));
            max_dev = std::max(max_dev, dev);
            mean_dev += dev;
            ++count;
        }
    }
    detail["linf_max"] = max_dev;
    detail["perturbation_mean_abs"] = count ? mean_dev / static_cast<double>(count) : 0.0;

    json cfg_json{{"kind", o.kind}, {"model", o.model.string()}, {"data", o.data.string()}, {"seed", o.seed}};
    if (o.kind == "pgd")
        cfg_json["pgd"] = {{"epsilon", o.pgd.epsilon}, {"alpha", o.pgd.alpha}, {"iterations", o.pgd.iterations}};
    else
        cfg_json["ogan"] = {{"epsilon", o.ogan.epsilon},     {"theta_max", o.ogan.theta_max},
                            {"psi_max", o.ogan.psi_max},     {"batch_size", o.ogan.batch_size},
                            {"batch_iters", o.ogan.batch_iters}, {"epochs", o.ogan.epochs}};
    write_run_manifest(o.out, "attack", cfg_json, now_seconds() - t0, detail);
    mark_phase_done(o.out, config_fingerprint(cfg_json));
}

void run_retrain(const RetrainOptions& o) {
    const double t0 = now_seconds();
    io_audit::take();
    DataBundle data = load_data(o.data);

    Dataset train_a;
    if (o.include_adversarial) {
        // Eq-10 rebuild: adversarial protected images plus untouched rest
        Dataset adv = sorted_by_frame(read_frames(o.adversarial));
        if (adv.size() != data.part.protected_count())
            throw std::runtime_error("retrain: adversarial set has " + std::to_string(adv.size()) +
                                     " frames, protected range has " + std::to_string(data.part.protected_count()));
        train_a = std::move(adv);
        Dataset rest = data.part.unprotected_samples();
        train_a.insert(train_a.end(), rest.begin(), rest.end());
        train_a = sorted_by_frame(std::move(train_a));
    } else {
        train_a = data.part.unprotected_samples(); // exclusion setting
    }

    TrainConfig cfg;
    cfg.iterations = o.iterations;
    cfg.batch_size = o.batch_size;
    cfg.seed = o.seed;
    cfg.stream_namespace = "retrain/" + o.arm_id;

    TrainHook hook;
    if (o.checkpoint_every > 0) {
        hook = [&](int iter, const SwapModel& m) {
            if (iter % o.checkpoint_every != 0) return;
            char name[32];
            std::snprintf(name, sizeof(name), "ckpt_%06d", iter);
            json meta{{"phase", "retrain-checkpoint"}, {"iteration", iter}, {"seed", o.seed}, {"arm", o.arm_id}};
            save_model(m, o.out / name, meta);
        };
    }

    PretrainResult res = pretrain(train_a, target_set(data, o.direction), arch_from_name(o.arch), cfg, hook);

    json meta;
    meta["phase"] = "retrain";
    meta["seed"] = o.seed;
    meta["arm"] = o.arm_id;
    meta["direction"] = o.direction;
    meta["include_adversarial"] = o.include_adversarial;
    meta["lineage"] = {{"id", lineage_id("retrain", o.arm_id, o.seed)}, {"parent", nullptr}};
    meta["init_stream"] = "model-init/" + o.arch + "/retrain/" + o.arm_id;
    save_model(res.model, o.out / "model", meta);

    json cfg_json{{"data", o.data.string()},
                  {"adversarial", o.include_adversarial ? o.adversarial.string() : ""},
                  {"arch", o.arch},
                  {"direction", o.direction},
                  {"arm", o.arm_id},
                  {"seed", o.seed},
                  {"iterations", o.iterations},
                  {"batch_size", o.batch_size},
                  {"include_adversarial", o.include_adversarial},
                  {"checkpoint_every", o.checkpoint_every}};
    json detail;
    detail["final_loss_a_smoothed100"] = smoothed_tail(res.loss_a, 100);
    detail["final_loss_b_smoothed100"] = smoothed_tail(res.loss_b, 100);
    detail["train_a_size"] = train_a.size();
    write_run_manifest(o.out, "retrain", cfg_json, now_seconds() - t0, detail);
    mark_phase_done(o.out, config_fingerprint(cfg_json));
}

namespace {

TemporalReport evaluate_model(const SwapModel& victim, const DataBundle& data, const fs::path& adversarial,
                              double* e_tmp_input = nullptr) {
    const Dataset pristine = data.part.protected_samples();
    std::vector<Tensor> baseline_frames;
    for (const FaceSample& s : pristine) baseline_frames.push_back(s.image);
    if (e_tmp_input) *e_tmp_input = e_tmp(baseline_frames);

    Dataset attacked_in = adversarial.empty() ? pristine : sorted_by_frame(read_frames(adversarial));
    std::vector<Tensor> baseline = swap_sequence(victim, pristine);
    std::vector<Tensor> attacked = swap_sequence(victim, attacked_in);
    return score_sequences(attacked, baseline);
}

} // namespace

void run_evaluate(const EvaluateOptions& o) {
    const double t0 = now_seconds();
    io_audit::take();
    DataBundle data = load_data(o.data);
    SwapModel victim = load_model(o.victim);
    double e_input = 0.0;
    TemporalReport rep = evaluate_model(victim, data, o.adversarial, &e_input);
    fs::create_directories(o.out.parent_path().empty() ? "." : o.out.parent_path());
    rep.save(o.out);

    json cfg_json{{"victim", o.victim.string()}, {"data", o.data.string()}, {"adversarial", o.adversarial.string()}};
    json detail{{"e_tmp_input_pristine", e_input}};
    write_run_manifest(o.out.parent_path(), "evaluate", cfg_json, now_seconds() - t0, detail);
}

void run_curve(const CurveOptions& o) {
    io_audit::take();
    DataBundle data = load_data(o.data);

    std::vector<std::pair<int, fs::path>> ckpts;
    for (const auto& e : fs::directory_iterator(o.victim_run)) {
        const std::string fn = e.path().filename().string();
        if (fn.rfind("ckpt_", 0) == 0) ckpts.emplace_back(std::stoi(fn.substr(5)), e.path());
    }
    if (ckpts.empty()) throw std::runtime_error("curve: no ckpt_* checkpoints under " + o.victim_run.string());
    std::sort(ckpts.begin(), ckpts.end());

    if (fs::exists(o.out)) fs::remove(o.out);
    for (const auto& [iter, path] : ckpts) {
        SwapModel victim = load_model(path);
        TemporalReport rep = evaluate_model(victim, data, o.adversarial);
        append_curve_point(o.out, iter, rep.s_tmp);
    }
}

// ---- plan runner -----------------------------------------------------

namespace {

struct PhaseCmd {
    std::string key;                // dependency tracking id
    std::vector<std::string> deps;  // keys that must have succeeded
    std::vector<std::string> argv;  // phase arguments (without binary)
    fs::path out_dir;               // for cache checks
    json fingerprint_cfg;
};

class PhaseRunner {
public:
    PhaseRunner(std::string exe, fs::path log_dir, int jobs, bool force)
        : exe_(std::move(exe)), log_dir_(std::move(log_dir)), jobs_(std::max(1, jobs)), force_(force) {
        fs::create_directories(log_dir_);
    }

    void run_layer(std::vector<PhaseCmd> layer) {
        std::vector<PhaseCmd> pending;
        for (PhaseCmd& cmd : layer) {
            if (!deps_ok(cmd)) {
                std::cerr << "[skip] " << cmd.key << " (failed dependency)\n";
                status_[cmd.key] = false;
                continue;
            }
            if (!force_ && phase_done(cmd.out_dir, config_fingerprint(cmd.fingerprint_cfg))) {
                std::cerr << "[cached] " << cmd.key << "\n";
                status_[cmd.key] = true;
                continue;
            }
            pending.push_back(std::move(cmd));
        }

        std::map<pid_t, std::string> running;
        size_t next = 0;
        while (next < pending.size() || !running.empty()) {
            while (next < pending.size() && static_cast<int>(running.size()) < jobs_) {
                const PhaseCmd& cmd = pending[next];
                pid_t pid = spawn(cmd);
                running[pid] = cmd.key;
                ++next;
            }
            int wstatus = 0;
            pid_t pid = waitpid(-1, &wstatus, 0);
            if (pid < 0) throw std::runtime_error("run: waitpid failed");
            auto it = running.find(pid);
            if (it == running.end()) continue;
            const bool ok = WIFEXITED(wstatus) && WEXITSTATUS(wstatus) == 0;
            std::cerr << (ok ? "[done] " : "[FAIL] ") << it->second << "\n";
            status_[it->second] = ok;
            running.erase(it);
        }
    }

    bool ok(const std::string& key) const {
        auto it = status_.find(key);
        return it != status_.end() && it->second;
    }

private:
    bool deps_ok(const PhaseCmd& cmd) const {
        for (const std::string& d : cmd.deps)
            if (!ok(d)) return false;
        return true;
    }

    pid_t spawn(const PhaseCmd& cmd) {
        std::string safe = cmd.key;
        std::replace(safe.begin(), safe.end(), '/', '_');
        const fs::path log = log_dir_ / (safe + ".log");
        std::cerr << "[run]  " << cmd.key << "\n";

        std::vector<std::string> full;
        full.push_back(exe_);
        full.insert(full.end(), cmd.argv.begin(), cmd.argv.end());
        std::vector<char*> argv;
        for (std::string& s : full) argv.push_back(s.data());
        argv.push_back(nullptr);

        pid_t pid = fork();
        if (pid < 0) throw std::runtime_error("run: fork failed");
        if (pid == 0) {
            FILE* lf = std::fopen(log.c_str(), "w");
            if (lf) {
                dup2(fileno(lf), STDOUT_FILENO);
                dup2(fileno(lf), STDERR_FILENO);
            }
            execv(exe_.c_str(), argv.data());
            std::perror("execv");
            _exit(127);
        }
        return pid;
    }

    std::string exe_;
    fs::path log_dir_;
    int jobs_;
    bool force_;
    std::map<std::string, bool> status_;
};

std::string seed_str(uint64_t s) { return std::to_string(s); }

} // namespace

int run_plan(const RunOptions& o) {
    ExperimentPlan plan = o.plan_file.empty() ? ExperimentPlan::desk_grid() : ExperimentPlan::load(o.plan_file);
    plan.validate();
    const fs::path ws = o.out;
    fs::create_directories(ws);
    write_json(ws / "plan.json", plan.to_json());

    std::string exe = o.self_exe;
    if (exe.empty()) exe = fs::read_symlink("/proc/self/exe").string();

    PhaseRunner runner(exe, ws / "logs", o.jobs, o.force);

    const fs::path data_dir = ws / "data";
    std::set<std::string> attacks_needed;
    for (const ArmSpec& a : plan.arms)
        if (a.attack != "none") attacks_needed.insert(a.attack);

    // layer 0: shared synthetic data
    {
        PhaseCmd c;
        c.key = "synth";
        c.out_dir = data_dir;
        c.fingerprint_cfg = {{"seed", plan.data_seed},
                             {"frames", plan.frames},
                             {"resolution", plan.resolution},
                             {"protected_begin", plan.protected_begin},
                             {"protected_count", plan.protected_count}};
        c.argv = {"synth",
                  "--out", data_dir.string(),
                  "--seed", seed_str(plan.data_seed),
                  "--frames", std::to_string(plan.frames),
                  "--protected-begin", std::to_string(plan.protected_begin),
                  "--protected-count", std::to_string(plan.protected_count),
                  "--resolution", std::to_string(plan.resolution)};
        runner.run_layer({c});
    }

    // layer 1: attack-base pretrains (h128-mini, A2B), one per seed
    {
        std::vector<PhaseCmd> layer;
        for (uint64_t s : plan.seeds) {
            PhaseCmd c;
            c.key = "pretrain/seed" + seed_str(s);
            c.deps = {"synth"};
            c.out_dir = ws / "pretrain" / ("seed" + seed_str(s));
            c.fingerprint_cfg = {{"data", data_dir.string()}, {"arch", "h128-mini"}, {"direction", "A2B"},
                                 {"seed", s},                 {"iterations", plan.pretrain_iterations},
                                 {"batch_size", plan.batch_size}};
            c.argv = {"pretrain",
                      "--data", data_dir.string(),
                      "--arch", "h128-mini",
                      "--direction", "A2B",
                      "--seed", seed_str(s),
                      "--iters", std::to_string(plan.pretrain_iterations),
                      "--batch-size", std::to_string(plan.batch_size),
                      "--out", c.out_dir.string()};
            layer.push_back(std::move(c));
        }
        runner.run_layer(std::move(layer));
    }

    // layer 2: attacks per (kind, seed)
    {
        std::vector<PhaseCmd> layer;
        for (const std::string& kind : attacks_needed) {
            for (uint64_t s : plan.seeds) {
                PhaseCmd c;
                c.key = "attack/" + kind + "/seed" + seed_str(s);
                c.deps = {"pretrain/seed" + seed_str(s)};
                c.out_dir = ws / "attacks" / kind / ("seed" + seed_str(s));
                json acfg = kind == "pgd"
                                ? json{{"epsilon", plan.pgd.epsilon}, {"alpha", plan.pgd.alpha}, {"iterations", plan.pgd.iterations}}
                                : json{{"epsilon", plan.ogan.epsilon}, {"theta_max", plan.ogan.theta_max},
                                       {"psi_max", plan.ogan.psi_max}, {"batch_size", plan.ogan.batch_size},
                                       {"batch_iters", plan.ogan.batch_iters}, {"epochs", plan.ogan.epochs}};
                c.fingerprint_cfg = {{"kind", kind}, {"seed", s}, {"cfg", acfg}};
                c.argv = {"attack", kind,
                          "--model", (ws / "pretrain" / ("seed" + seed_str(s)) / "model").string(),
                          "--data", data_dir.string(),
                          "--seed", seed_str(s),
                          "--out", c.out_dir.string()};
                if (kind == "pgd") {
                    c.argv.insert(c.argv.end(), {"--epsilon", std::to_string(plan.pgd.epsilon),
                                                 "--alpha", std::to_string(plan.pgd.alpha),
                                                 "--iters", std::to_string(plan.pgd.iterations)});
                } else {
                    c.argv.insert(c.argv.end(), {"--epsilon", std::to_string(plan.ogan.epsilon),
                                                 "--theta", std::to_string(plan.ogan.theta_max),
                                                 "--psi", std::to_string(plan.ogan.psi_max),
                                                 "--batch-size", std::to_string(plan.ogan.batch_size),
                                                 "--batch-iters", std::to_string(plan.ogan.batch_iters),
                                                 "--epochs", std::to_string(plan.ogan.epochs)});
                }
                layer.push_back(std::move(c));
            }
        }
        runner.run_layer(std::move(layer));
    }

    auto arm_seeds = [&](const ArmSpec& a) { return a.seeds.empty() ? plan.seeds : a.seeds; };

    // layer 3: victim retrains
    {
        std::vector<PhaseCmd> layer;
        for (const ArmSpec& a : plan.arms) {
            for (uint64_t s : arm_seeds(a)) {
                PhaseCmd c;
                c.key = "retrain/" + a.id + "/seed" + seed_str(s);
                c.deps = {"synth"};
                if (a.attack != "none" && a.include_adversarial)
                    c.deps.push_back("attack/" + a.attack + "/seed" + seed_str(s));
                c.out_dir = ws / "victims" / a.id / ("seed" + seed_str(s));
                const fs::path adv_frames = ws / "attacks" / a.attack / ("seed" + seed_str(s)) / "frames";
                c.fingerprint_cfg = {{"arm", a.id},    {"seed", s},
                                     {"arch", a.victim_arch}, {"direction", a.direction},
                                     {"iterations", a.retrain_iterations}, {"include", a.include_adversarial},
                                     {"eval_every", a.eval_every}};
                c.argv = {"retrain",
                          "--data", data_dir.string(),
                          "--arch", a.victim_arch,
                          "--direction", a.direction,
                          "--arm", a.id,
                          "--seed", seed_str(s),
                          "--iters", std::to_string(a.retrain_iterations),
                          "--batch-size", std::to_string(plan.batch_size),
                          "--out", c.out_dir.string()};
                if (a.attack != "none" && a.include_adversarial)
                    c.argv.insert(c.argv.end(), {"--adversarial", adv_frames.string(), "--include-adversarial"});
                else
                    c.argv.push_back("--exclude-adversarial");
                if (a.eval_every > 0)
                    c.argv.insert(c.argv.end(), {"--checkpoint-every", std::to_string(a.eval_every)});
                layer.push_back(std::move(c));
            }
        }
        runner.run_layer(std::move(layer));
    }

    // layer 4: evaluations and curves
    {
        std::vector<PhaseCmd> layer;
        for (const ArmSpec& a : plan.arms) {
            for (uint64_t s : arm_seeds(a)) {
                const fs::path victim_dir = ws / "victims" / a.id / ("seed" + seed_str(s));
                const fs::path adv_frames = ws / "attacks" / a.attack / ("seed" + seed_str(s)) / "frames";
                PhaseCmd c;
                c.key = "evaluate/" + a.id + "/seed" + seed_str(s);
                c.deps = {"retrain/" + a.id + "/seed" + seed_str(s)};
                if (a.attack != "none") c.deps.push_back("attack/" + a.attack + "/seed" + seed_str(s));
                c.out_dir = victim_dir;
                c.fingerprint_cfg = {{"arm", a.id}, {"seed", s}, {"eval", true}, {"eval_every", a.eval_every}};
                c.argv = {"evaluate",
                          "--victim", (victim_dir / "model").string(),
                          "--data", data_dir.string(),
                          "--out", (victim_dir / "report.json").string()};
                if (a.attack != "none") c.argv.insert(c.argv.end(), {"--adversarial", adv_frames.string()});
                // cache marker lives in the victim dir; use a distinct name
                c.out_dir = victim_dir / "eval";
                layer.push_back(std::move(c));

                if (a.eval_every > 0) {
                    PhaseCmd k;
                    k.key = "curve/" + a.id + "/seed" + seed_str(s);
                    k.deps = c.deps;
                    k.out_dir = victim_dir / "curve";
                    k.fingerprint_cfg = {{"arm", a.id}, {"seed", s}, {"curve", true}};
                    k.argv = {"curve",
                              "--victim-run", victim_dir.string(),
                              "--data", data_dir.string(),
                              "--out", (victim_dir / "curve.csv").string()};
                    if (a.attack != "none") k.argv.insert(k.argv.end(), {"--adversarial", adv_frames.string()});
                    layer.push_back(std::move(k));
                }
            }
        }
        runner.run_layer(std::move(layer));
    }

    // aggregate results
    json rows = json::array();
    bool all_ok = true;
    for (const ArmSpec& a : plan.arms) {
        for (uint64_t s : arm_seeds(a)) {
            const fs::path victim_dir = ws / "victims" / a.id / ("seed" + seed_str(s));
            json row{{"arm", a.id},
                     {"seed", s},
                     {"attack", a.attack},
                     {"victim_arch", a.victim_arch},
                     {"direction", a.direction},
                     {"include_adversarial", a.include_adversarial}};
            const bool ok = runner.ok("evaluate/" + a.id + "/seed" + seed_str(s)) &&
                            (a.eval_every == 0 || runner.ok("curve/" + a.id + "/seed" + seed_str(s)));
            if (ok && fs::exists(victim_dir / "report.json")) {
                TemporalReport rep = TemporalReport::load(victim_dir / "report.json");
                row["status"] = "ok";
                row["s_tmp"] = rep.s_tmp;
                row["e_tmp"] = rep.e_tmp_attacked;
                row["e_tmp_baseline"] = rep.e_tmp_baseline;
                try {
                    row["runtime_sec"] = read_json(victim_dir / "run.json").at("runtime_sec").get<double>();
                } catch (...) {
                    row["runtime_sec"] = nullptr;
                }
            } else {
                row["status"] = "failed";
                all_ok = false;
            }
            rows.push_back(std::move(row));
        }
    }

    json results;
    results["rows"] = rows;
    json aggregates = json::array();
    for (const ArmSpec& a : plan.arms) {
        double mn = 1e300, mx = -1e300, sum = 0.0;
        int n = 0;
        for (const json& row : rows) {
            if (row.at("arm") != a.id || row.at("status") != "ok") continue;
            const double v = row.at("s_tmp").get<double>();
            mn = std::min(mn, v);
            mx = std::max(mx, v);
            sum += v;
            ++n;
        }
        if (n > 0)
            aggregates.push_back(
                {{"arm", a.id}, {"n", n}, {"s_tmp_mean", sum / n}, {"s_tmp_min", mn}, {"s_tmp_max", mx}});
    }
    results["aggregates"] = aggregates;
    write_json(ws / "results.json", results);

    std::cerr << (all_ok ? "all arms completed\n" : "some arms FAILED\n");
    return all_ok ? 0 : 1;
}

// ---- report ---------------------------------------------------------------

namespace {

Tensor abs_diff_image(const Tensor& a, const Tensor& b, float gain) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) {
        const float v = std::fabs(a[i] - b[i]) * gain;
        out[i] = v > 1.0f ? 1.0f : v;
    }
    return out;
}

Tensor hstrip(const std::vector<Tensor>& imgs, int gap = 2) {
    const int h = imgs.front().dim(0), c = imgs.front().dim(2);
    int w_total = 0;
    for (const Tensor& t : imgs) w_total += t.dim(1);
    w_total += gap * static_cast<int>(imgs.size() - 1);
    Tensor out({h, w_total, c}, 1.0f);
    int x0 = 0;
    for (const Tensor& t : imgs) {
        const int w = t.dim(1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch)
                    out[(static_cast<int64_t>(y) * w_total + x0 + x) * c + ch] =
                        t[(static_cast<int64_t>(y) * w + x) * c + ch];
        x0 += w + gap;
    }
    return out;
}

} // namespace

void run_report(const ReportOptions& o) {
    const fs::path ws = o.results;
    fs::create_directories(o.out);
    json results;
    std::vector<std::string> missing;
    try {
        results = read_json(ws / "results.json");
    } catch (...) {
        results = json{{"rows", json::array()}, {"aggregates", json::array()}};
        missing.push_back("results.json");
    }

    // CSV
    {
        std::ofstream csv(o.out / "tables.csv", std::ios::trunc);
        csv << "arm,seed,attack,victim_arch,direction,include_adversarial,status,s_tmp,e_tmp,e_tmp_baseline,runtime_sec\n";
        for (const json& row : results.at("rows")) {
            csv << row.value("arm", "") << "," << row.value("seed", 0ull) << "," << row.value("attack", "") << ","
                << row.value("victim_arch", "") << "," << row.value("direction", "") << ","
                << (row.value("include_adversarial", false) ? 1 : 0) << "," << row.value("status", "");
            if (row.value("status", "") == "ok")
                csv << "," << row.at("s_tmp").get<double>() << "," << row.at("e_tmp").get<double>() << ","
                    << row.at("e_tmp_baseline").get<double>() << ","
                    << (row.contains("runtime_sec") && !row.at("runtime_sec").is_null()
                            ? std::to_string(row.at("runtime_sec").get<double>())
                            : "");
            else
                csv << ",,,,";
            csv << "\n";
        }
    }

    // markdown tables
    {
        std::ofstream md(o.out / "tables.md", std::ios::trunc);
        md << "# Temporal disruption scores\n\n";
        md << "| arm | seed | attack | arch | dir | adv in training | S_tmp | E_tmp |\n";
        md << "|---|---|---|---|---|---|---|---|\n";
        for (const json& row : results.at("rows")) {
            md << "| " << row.value("arm", "") << " | " << row.value("seed", 0ull) << " | " << row.value("attack", "")
               << " | " << row.value("victim_arch", "") << " | " << row.value("direction", "") << " | "
               << (row.value("include_adversarial", false) ? "yes" : "no") << " | ";
            if (row.value("status", "") == "ok")
                md << row.at("s_tmp").get<double>() << " | " << row.at("e_tmp").get<double>() << " |\n";
            else
                md << "failed | failed |\n";
        }
        md << "\n## Aggregates over seeds\n\n| arm | n | mean S_tmp | min | max |\n|---|---|---|---|---|\n";
        for (const json& agg : results.at("aggregates"))
            md << "| " << agg.at("arm").get<std::string>() << " | " << agg.at("n").get<int>() << " | "
               << agg.at("s_tmp_mean").get<double>() << " | " << agg.at("s_tmp_min").get<double>() << " | "
               << agg.at("s_tmp_max").get<double>() << " |\n";
        if (!missing.empty()) {
            md << "\nMissing inputs:\n";
            for (const std::string& m : missing) md << "- " << m << "\n";
        }
    }

    // difference strips for the first protected frame of each attack
    const fs::path data_dir = ws / "data";
    if (fs::exists(data_dir / "partition.json")) {
        DataBundle data = load_data(data_dir);
        const Dataset pristine = data.part.protected_samples();
        for (const std::string kind : {"ogan", "pgd"}) {
            // pick any seed directory that exists
            const fs::path attack_root = ws / "attacks" / kind;
            if (!fs::exists(attack_root)) continue;
            for (const auto& seed_entry : fs::directory_iterator(attack_root)) {
                const fs::path frames_dir = seed_entry.path() / "frames";
                if (!fs::exists(frames_dir)) continue;
                Dataset adv = sorted_by_frame(read_frames(frames_dir));
                if (adv.empty() || pristine.empty()) break;

                std::vector<Tensor> strip_parts{pristine.front().image, adv.front().image,
                                                abs_diff_image(pristine.front().image, adv.front().image, 32.0f)};
                // swap through an inclusion victim when present
                const fs::path victim_model = ws / "victims" / (kind + "_h128_A2B_incl") / seed_entry.path().filename() / "model";
                if (fs::exists(victim_model / "manifest.json")) {
                    SwapModel victim = load_model(victim_model);
                    Dataset one_p{pristine.front()};
                    Dataset one_a{adv.front()};
                    Tensor sp = swap_sequence(victim, one_p).front();
                    Tensor sa = swap_sequence(victim, one_a).front();
                    strip_parts.push_back(sa);
                    strip_parts.push_back(abs_diff_image(sp, sa, 4.0f));
                }
                write_ppm(o.out / ("strip_" + kind + "_" + seed_entry.path().filename().string() + ".ppm"),
                          hstrip(strip_parts));
                break;
            }
        }
    }
}

} // namespace swaplab::harness
