#pragma once

#include <string>

#include "iclids/runconfig.hpp"

namespace iclids {

// CLI subcommand bodies. Each writes its artifacts plus a run manifest into
// cfg.out_dir and returns 0; failures throw iclids::Error.
int cmd_synth(Config& cfg);
int cmd_train_weak(Config& cfg);
int cmd_train(Config& cfg);
int cmd_eval(Config& cfg);
int cmd_sensitivity(Config& cfg);
int cmd_plan(Config& cfg);
int cmd_bench(Config& cfg);

int run_command(const std::string& name, Config& cfg);

}  // namespace iclids
