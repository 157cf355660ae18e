/*
 * Copyright (c) 2026 The LFAM Authors. All Rights Reserved
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Command-line driver for the compression pipeline.
//
//   lfam <stage> [--config FILE] [--set key=value ...] [--work-dir DIR]
//   lfam run     same options, runs every stage in order

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lfam/errors.hpp"
#include "lfam/pipeline.hpp"

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::string work_dir;
};

lfam::PipelineConfig resolve(const Options& o) {
  lfam::PipelineConfig cfg = o.config.empty() ? lfam::PipelineConfig{} : lfam::load_config(o.config);
  for (const auto& kv : o.overrides) lfam::apply_override(cfg, kv);
  if (!o.work_dir.empty()) cfg.work_dir = o.work_dir;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("-c,--config", o.config, "Pipeline config file (key = value lines)")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", o.overrides, "Override a config key, key=value (repeatable)");
  cmd->add_option("-w,--work-dir", o.work_dir, "Directory holding stage artifacts");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse int8 compression pipeline for weight-shared transformers"};
  app.require_subcommand(1);
  Options opts;

  for (const auto& stage : lfam::stage_order()) {
    auto* cmd = app.add_subcommand(stage, "Run the " + stage + " stage");
    add_common(cmd, opts);
    cmd->callback([&opts, stage] {
      const auto cfg = resolve(opts);
      if (stage == "evaluate") {
        std::cout << lfam::format_evaluation(lfam::stage_evaluate(cfg));
      } else if (stage == "report") {
        std::cout << lfam::stage_report(cfg);
      } else {
        lfam::run_stage(stage, cfg);
      }
    });
  }

  auto* run = app.add_subcommand("run", "Run every stage in order");
  add_common(run, opts);
  run->callback([&opts] {
    const auto cfg = resolve(opts);
    const auto result = lfam::run_pipeline(cfg);
    std::cout << result.report_text;
  });

  auto* show = app.add_subcommand("config", "Print the resolved config");
  add_common(show, opts);
  show->callback([&opts] { std::cout << lfam::format_config(resolve(opts)); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const lfam::StageError& e) {
    std::cerr << "lfam: stage '" << e.stage() << "' failed: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "lfam: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
