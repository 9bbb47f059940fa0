// SPDX-License-Identifier: Apache-2.0
// Command-line front end over the C API.
#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "entprop/entprop.h"

namespace {

int exit_code(ep_status s) {
  switch (s) {
    case EP_OK: return 0;
    case EP_IO:
    case EP_NUMERIC:
    case EP_INTERNAL: return 2;
    default: return 1;
  }
}

void print_progress(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

std::string percent(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * j[key].get<double>());
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EntProp experiments: train, evaluate, sweep and report"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress lines");

  std::string train_cfg;
  auto* train = app.add_subcommand("train", "Train one configuration");
  train->add_option("config", train_cfg, "Experiment config file")->required();

  std::string eval_ckpt, eval_cfg;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval->add_option("config", eval_cfg, "Experiment config naming the test data and suite")->required();

  std::string sweep_cfg;
  std::vector<double> ks;
  std::vector<int> ns;
  auto* sweep = app.add_subcommand("sweep", "Train over a grid of k and n");
  sweep->add_option("config", sweep_cfg, "Base experiment config")->required();
  sweep->add_option("--k", ks, "Values of k (comma separated)")->delimiter(',');
  sweep->add_option("--n", ns, "Values of n (comma separated)")->delimiter(',');

  std::vector<std::string> dirs;
  std::string out_dir = "report";
  auto* report = app.add_subcommand("report", "Compare finished runs");
  report->add_option("runs", dirs, "Run directories")->required();
  report->add_option("--out", out_dir, "Directory for the report files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  ep_context* ctx = nullptr;
  if (ep_context_create(&ctx) != EP_OK) {
    std::fprintf(stderr, "error: %s\n", ep_last_error(nullptr));
    return 2;
  }
  if (!quiet) ep_context_set_log(ctx, print_progress, nullptr);

  ep_status status = EP_OK;
  if (*train) {
    status = ep_train(ctx, train_cfg.c_str());
    if (status == EP_OK) {
      const auto s = nlohmann::json::parse(ep_last_output(ctx));
      std::printf("SA %s RA %s H_score %s\n", percent(s, "sa").c_str(), percent(s, "ra").c_str(),
                  percent(s, "h_score").c_str());
    }
  } else if (*eval) {
    status = ep_evaluate(ctx, eval_ckpt.c_str(), eval_cfg.c_str());
    if (status == EP_OK) std::fputs(ep_last_output(ctx), stdout);
  } else if (*sweep) {
    status = ep_sweep(ctx, sweep_cfg.c_str(), ks.data(), ks.size(), ns.data(), ns.size());
    if (status == EP_OK) std::fputs(ep_last_output(ctx), stdout);
  } else if (*report) {
    std::vector<const char*> ptrs;
    for (const auto& d : dirs) ptrs.push_back(d.c_str());
    status = ep_report(ctx, ptrs.data(), ptrs.size(), out_dir.c_str());
    if (status == EP_OK) std::fputs(ep_last_output(ctx), stdout);
  }

  if (status != EP_OK) std::fprintf(stderr, "error (%s): %s\n", ep_status_name(status), ep_last_error(ctx));
  ep_context_destroy(ctx);
  return exit_code(status);
}
