// Copyright 2026 The pass-reid Authors.
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

// Command-line entry point: pass_cli <mode> [--config FILE] [--seed N]
// [--out DIR] [--resume CKPT] [--set key=value ...]

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pass/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Part-aware self-supervised pre-training and person ReID fine-tuning"};
  std::string mode, config_path, out, resume;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  bool print_config = false;
  app.add_option("command", mode, "pretrain | finetune | uda | usl | eval | visualize | ablation | synth");
  app.add_option("--mode", mode, "same as the positional mode");
  app.add_option("-c,--config", config_path, "key = value config file");
  auto* seed_opt = app.add_option("--seed", seed, "base seed (overrides run.seed)");
  app.add_option("-o,--out", out, "output root (overrides run.out)");
  app.add_option("--resume", resume, "pre-training checkpoint to resume from");
  app.add_option("-s,--set", overrides, "extra key=value overrides, applied last");
  app.add_flag("--print-config", print_config, "print the resolved config and exit");
  CLI11_PARSE(app, argc, argv);

  pass::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = pass::load_config_file(config_path);
    if (!mode.empty()) cfg.mode = mode;
    if (*seed_opt) cfg.seed = seed;
    if (!out.empty()) cfg.out = out;
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw pass::ConfigError("--set expects key=value, got '" + kv + "'");
      pass::set_config_value(cfg, pass::detail::trim(kv.substr(0, eq)), pass::detail::trim(kv.substr(eq + 1)));
    }
  } catch (const pass::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return pass::kExitConfig;
  }
  if (print_config) {
    std::cout << pass::config_text(cfg);
    return pass::kExitOk;
  }
  pass::RunOptions opt;
  opt.resume = resume;
  return pass::run(cfg, opt);
}
