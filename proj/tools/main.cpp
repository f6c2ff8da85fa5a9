// SPDX-License-Identifier: Apache-2.0
//
// Experiment lifecycle CLI: pretrain a toy base model on a synthetic Markov
// corpus, adapt it with LoRA or OLoRA, compare the two initializations over
// seeds, inspect adapter spectra, and verify gradients.
//
// Exit codes: 0 success, 2 config/usage error, 3 runtime (divergence, IO),
// 4 verification failure (gradcheck).

#include <CLI11.hpp>

#include "olora/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"LoRA / OLoRA training laboratory"};
    app.require_subcommand(1);

    olora::cli::PretrainArgs pre;
    auto* pre_cmd = app.add_subcommand("pretrain", "train the base model and write a checkpoint");
    std::string pre_config, pre_seed_unused;
    pre_cmd->add_option("--config", pre_config, "JSON config file");
    pre_cmd->add_option("--out", pre.out_path, "output base checkpoint path")->required();
    uint64_t pre_seed = 0;
    auto* pre_seed_opt = pre_cmd->add_option("--seed", pre_seed, "override pretraining seed");

    olora::cli::AdaptArgs ad;
    auto* ad_cmd = app.add_subcommand("adapt", "fine-tune adapters on the shifted corpus");
    std::string ad_config, ad_method;
    int ad_rank = 0, ad_steps = 0;
    double ad_scale = 0;
    uint64_t ad_seed = 0;
    ad_cmd->add_option("--base", ad.base_path, "base checkpoint")->required();
    ad_cmd->add_option("--config", ad_config, "JSON config file");
    auto* ad_method_opt = ad_cmd->add_option("--method", ad_method, "lora|olora");
    auto* ad_rank_opt = ad_cmd->add_option("--rank", ad_rank, "adapter rank");
    auto* ad_scale_opt = ad_cmd->add_option("--scale", ad_scale, "adapter scale (default alpha/rank)");
    auto* ad_steps_opt = ad_cmd->add_option("--steps", ad_steps, "training steps");
    auto* ad_seed_opt = ad_cmd->add_option("--seed", ad_seed, "run seed");
    ad_cmd->add_option("--metrics", ad.metrics_path, "metrics CSV output path")->required();
    ad_cmd->add_option("--out", ad.out_path, "adapter checkpoint output path")->required();

    olora::cli::CompareArgs cmp;
    auto* cmp_cmd = app.add_subcommand("compare", "run the LoRA vs OLoRA experiment over seeds");
    std::string cmp_config, cmp_base;
    int cmp_seeds = 0, cmp_jobs = 0;
    cmp_cmd->add_option("--config", cmp_config, "JSON config file");
    auto* cmp_seeds_opt = cmp_cmd->add_option("--seeds", cmp_seeds, "number of seeds (>= 3)");
    cmp_cmd->add_option("--outdir", cmp.outdir, "output directory")->required();
    auto* cmp_jobs_opt = cmp_cmd->add_option("--jobs", cmp_jobs, "parallel (method, seed) units");
    auto* cmp_base_opt = cmp_cmd->add_option("--base", cmp_base, "reuse an existing base checkpoint");

    olora::cli::DiagnoseArgs diag;
    auto* diag_cmd = app.add_subcommand("diagnose", "spectral report for an adapter checkpoint");
    diag_cmd->add_option("--base", diag.base_path, "base checkpoint")->required();
    diag_cmd->add_option("--adapter", diag.adapter_path, "adapter checkpoint")->required();
    diag_cmd->add_option("--out", diag.out_path, "JSON report output path")->required();

    olora::cli::GradcheckArgs gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of adapter gradients");
    std::string gc_config;
    gc_cmd->add_option("--config", gc_config, "JSON config file");
    gc_cmd->add_flag("--corrupt-backward", gc.corrupt_backward)->group("");  // test fixture

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
            return app.exit(e);
        }
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    if (pre_cmd->parsed()) {
        if (!pre_config.empty()) pre.config_path = pre_config;
        if (*pre_seed_opt) pre.seed = pre_seed;
        return olora::cli::cmd_pretrain(pre);
    }
    if (ad_cmd->parsed()) {
        if (!ad_config.empty()) ad.config_path = ad_config;
        if (*ad_method_opt) ad.method = ad_method;
        if (*ad_rank_opt) ad.rank = ad_rank;
        if (*ad_scale_opt) ad.scale = ad_scale;
        if (*ad_steps_opt) ad.steps = ad_steps;
        if (*ad_seed_opt) ad.seed = ad_seed;
        return olora::cli::cmd_adapt(ad);
    }
    if (cmp_cmd->parsed()) {
        if (!cmp_config.empty()) cmp.config_path = cmp_config;
        if (*cmp_seeds_opt) cmp.seeds = cmp_seeds;
        if (*cmp_jobs_opt) cmp.jobs = cmp_jobs;
        if (*cmp_base_opt) cmp.base_path = cmp_base;
        return olora::cli::cmd_compare(cmp);
    }
    if (diag_cmd->parsed()) {
        return olora::cli::cmd_diagnose(diag);
    }
    if (gc_cmd->parsed()) {
        if (!gc_config.empty()) gc.config_path = gc_config;
        return olora::cli::cmd_gradcheck(gc);
    }
    return 2;
}
