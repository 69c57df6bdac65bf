// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

namespace crossmatch::cli {

// Subcommand bodies. Each throws the usual error taxonomy on failure and
// returns 0 on success; dispatch() maps exceptions to process exit codes
// (2 config, 3 data, 4 numeric, 1 anything else).
int cmd_synth(const std::string& spec_path, const std::string& out_dir);
int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume_ckpt, bool naive);
int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& out_dir);
int cmd_ablate(const std::string& grid_path, const std::string& out_dir);
int cmd_plot(const std::string& run_dir, const std::string& out_dir);

int dispatch(int argc, const char* const* argv);

}  // namespace crossmatch::cli
