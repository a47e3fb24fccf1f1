#include <iostream>

#include <CLI11.hpp>

#include "swaplab/harness.hpp"

using namespace swaplab;

int main(int argc, char** argv) {
    CLI::App app{"swaplab: training-resistant attacks on miniature face-swapping autoencoders"};
    app.require_subcommand(1);

    harness::SynthOptions synth;
    auto* cmd_synth = app.add_subcommand("synth", "generate synthetic identity sequences and the dataset partition");
    cmd_synth->add_option("--out", synth.out, "output data directory")->required();
    cmd_synth->add_option("--seed", synth.seed, "seed");
    cmd_synth->add_option("--frames", synth.frames, "frames per identity");
    cmd_synth->add_option("--protected-begin", synth.protected_begin, "first protected frame");
    cmd_synth->add_option("--protected-count", synth.protected_count, "protected frame count");
    cmd_synth->add_option("--resolution", synth.resolution, "square crop resolution");

    harness::PretrainOptions pre;
    auto* cmd_pre = app.add_subcommand("pretrain", "train a face-swapping model on pristine data");
    cmd_pre->add_option("--data", pre.data, "data directory from synth")->required();
    cmd_pre->add_option("--out", pre.out, "output run directory")->required();
    cmd_pre->add_option("--arch", pre.arch, "h128-mini or sae-mini");
    cmd_pre->add_option("--direction", pre.direction, "A2B or A2C");
    cmd_pre->add_option("--seed", pre.seed, "seed");
    cmd_pre->add_option("--iters", pre.iterations, "training iterations (T)");
    cmd_pre->add_option("--batch-size", pre.batch_size, "batch size");

    harness::AttackOptions att;
    auto* cmd_att = app.add_subcommand("attack", "generate adversarial protected frames");
    cmd_att->require_subcommand(1);
    auto* cmd_pgd = cmd_att->add_subcommand("pgd", "PGD Distorting Attack");
    auto* cmd_ogan = cmd_att->add_subcommand("ogan", "OGAN bilevel attack");
    for (auto* c : {cmd_pgd, cmd_ogan}) {
        c->add_option("--model", att.model, "pretrained model checkpoint directory")->required();
        c->add_option("--data", att.data, "data directory")->required();
        c->add_option("--out", att.out, "attack output directory")->required();
        c->add_option("--seed", att.seed, "seed");
    }
    cmd_pgd->add_option("--epsilon", att.pgd.epsilon, "l-inf budget");
    cmd_pgd->add_option("--alpha", att.pgd.alpha, "step size");
    cmd_pgd->add_option("--iters", att.pgd.iterations, "PGD iterations");
    cmd_ogan->add_option("--epsilon", att.ogan.epsilon, "l-inf budget");
    cmd_ogan->add_option("--theta", att.ogan.theta_max, "max |rotation| in degrees");
    cmd_ogan->add_option("--psi", att.ogan.psi_max, "max |shift| in pixels");
    cmd_ogan->add_option("--batch-size", att.ogan.batch_size, "batch size");
    cmd_ogan->add_option("--batch-iters", att.ogan.batch_iters, "generator steps per batch");
    cmd_ogan->add_option("--epochs", att.ogan.epochs, "training epochs (M)");

    harness::RetrainOptions ret;
    bool include_flag = false, exclude_flag = false;
    auto* cmd_ret = app.add_subcommand("retrain", "train a fresh victim on the rebuilt dataset");
    cmd_ret->add_option("--data", ret.data, "data directory")->required();
    cmd_ret->add_option("--out", ret.out, "output run directory")->required();
    cmd_ret->add_option("--adversarial", ret.adversarial, "adversarial frame directory");
    cmd_ret->add_option("--arch", ret.arch, "victim architecture");
    cmd_ret->add_option("--direction", ret.direction, "A2B or A2C");
    cmd_ret->add_option("--arm", ret.arm_id, "arm identifier (namespaces the RNG streams)");
    cmd_ret->add_option("--seed", ret.seed, "seed");
    cmd_ret->add_option("--iters", ret.iterations, "training iterations");
    cmd_ret->add_option("--batch-size", ret.batch_size, "batch size");
    cmd_ret->add_option("--checkpoint-every", ret.checkpoint_every, "persist ckpt_NNNNNN every N iterations");
    cmd_ret->add_flag("--include-adversarial", include_flag, "train on D'_A (adversarial protected frames included)");
    cmd_ret->add_flag("--exclude-adversarial", exclude_flag, "train on D_A minus P_A only");

    harness::EvaluateOptions ev;
    auto* cmd_ev = app.add_subcommand("evaluate", "score a victim with the temporal metrics");
    cmd_ev->add_option("--victim", ev.victim, "victim model checkpoint directory")->required();
    cmd_ev->add_option("--data", ev.data, "data directory")->required();
    cmd_ev->add_option("--adversarial", ev.adversarial, "adversarial frame directory (omit for the baseline arm)");
    cmd_ev->add_option("--out", ev.out, "output report JSON")->required();

    harness::CurveOptions cur;
    auto* cmd_cur = app.add_subcommand("curve", "score every periodic checkpoint of a retrain run");
    cmd_cur->add_option("--victim-run", cur.victim_run, "retrain output directory with ckpt_* subdirs")->required();
    cmd_cur->add_option("--data", cur.data, "data directory")->required();
    cmd_cur->add_option("--adversarial", cur.adversarial, "adversarial frame directory");
    cmd_cur->add_option("--out", cur.out, "output CSV")->required();

    harness::RunOptions run;
    auto* cmd_run = app.add_subcommand("run", "execute an experiment plan end to end");
    cmd_run->add_option("--plan", run.plan_file, "plan JSON (defaults to the built-in desk grid)");
    cmd_run->add_option("--out", run.out, "workspace directory")->required();
    cmd_run->add_option("--jobs", run.jobs, "concurrent phase processes");
    cmd_run->add_flag("--force", run.force, "ignore cached phase results");

    harness::ReportOptions rep;
    auto* cmd_rep = app.add_subcommand("report", "render tables and difference strips from a workspace");
    cmd_rep->add_option("--results", rep.results, "run workspace")->required();
    cmd_rep->add_option("--out", rep.out, "report output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*cmd_synth) {
            harness::run_synth(synth);
        } else if (*cmd_pre) {
            harness::run_pretrain(pre);
        } else if (*cmd_att) {
            att.kind = *cmd_pgd ? "pgd" : "ogan";
            harness::run_attack(att);
        } else if (*cmd_ret) {
            if (include_flag && exclude_flag)
                throw std::invalid_argument("retrain: pass only one of --include-adversarial / --exclude-adversarial");
            ret.include_adversarial = include_flag && !exclude_flag;
            if (ret.include_adversarial && ret.adversarial.empty())
                throw std::invalid_argument("retrain: --include-adversarial needs --adversarial");
            harness::run_retrain(ret);
        } else if (*cmd_ev) {
            harness::run_evaluate(ev);
        } else if (*cmd_cur) {
            harness::run_curve(cur);
        } else if (*cmd_run) {
            return harness::run_plan(run);
        } else if (*cmd_rep) {
            harness::run_report(rep);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
