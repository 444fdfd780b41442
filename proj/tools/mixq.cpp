// Copyright 2026 The mixq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mixq/error.hpp"
#include "mixq/pipeline.hpp"

namespace {

int exit_code(mixq::ErrorCode c) {
  switch (c) {
    case mixq::ErrorCode::Config:
    case mixq::ErrorCode::Dimension: return 2;
    case mixq::ErrorCode::MissingArtifact: return 3;
    case mixq::ErrorCode::Infeasible: return 4;
    default: return 1;
  }
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace mixq::pipeline;
  CLI::App app{"mixq: mixed-precision post-training quantization of a toy vision transformer"};
  app.require_subcommand(1, 1);

  std::string config_path, out = "out", cache, ablation = "omega-lambda";
  std::uint64_t seed = 0;
  bool seed_given = false;
  auto* seed_opt = app.add_option("--seed", seed, "Run seed (overrides the config file)");
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--out", out, "Output directory for the report")->capture_default_str();
  app.add_option("--stage-cache", cache, "Directory for stage artifacts (default: --out)");
  app.add_option("--ablation", ablation, "Allocation shown as 'mixed' in the report")
      ->check(CLI::IsMember({"omega-only", "omega-lambda"}))
      ->capture_default_str();
  app.fallthrough();

  for (Stage s : kAllStages) app.add_subcommand(stage_name(s), std::string("Run the ") + stage_name(s) + " stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: code=config %s\n", one_line(e.what()).c_str());
    return 2;
  }
  seed_given = seed_opt->count() > 0;

  try {
    RunContext ctx;
    ctx.config = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    if (seed_given) ctx.config.seed = seed;
    ctx.config.validate();
    ctx.out = out;
    ctx.cache = cache;
    ctx.ablation = ablation_from_name(ablation);
    const Stage stage = stage_from_name(app.get_subcommands().front()->get_name());
    run_stage(stage, ctx);
    if (stage == Stage::Report) std::printf("%s\n", (ctx.out / "report.json").string().c_str());
    return 0;
  } catch (const mixq::MissingArtifactError& e) {
    std::fprintf(stderr, "error: code=missing_artifact stage=%s %s\n", e.stage().c_str(), one_line(e.what()).c_str());
    return 3;
  } catch (const mixq::InfeasibleError& e) {
    std::fprintf(stderr, "error: code=infeasible constraint=%s %s\n", e.constraint().c_str(), one_line(e.what()).c_str());
    return 4;
  } catch (const mixq::Error& e) {
    std::fprintf(stderr, "error: code=%s %s\n", mixq::error_code_name(e.code()), one_line(e.what()).c_str());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: code=internal %s\n", one_line(e.what()).c_str());
    return 1;
  }
}
