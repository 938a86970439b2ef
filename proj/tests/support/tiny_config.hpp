#pragma once

// Smallest run the encoder accepts (inputs divisible by 16); trains in well
// under a second.

#include "lfusion/cli/run_config.hpp"

namespace lfusion::testing {

inline RunConfig tiny_config() {
  RunConfig c;
  c.bev_rows = c.bev_cols = 32;
  c.bev_cell = 1.6;
  c.image_rows = 16;
  c.image_cols = 48;
  c.stage_channels = {4, 4, 8, 8};
  c.decoder_channels = 8;
  c.head_hidden = 4;
  c.d_model = 8;
  c.num_heads = 2;
  c.num_layers = 1;
  c.pool_size = 4;
  c.train_size = 8;
  c.val_size = 4;
  c.test_size = 4;
  c.batch_size = 2;
  c.steps = 3;
  c.eval_interval = 0;
  c.log_interval = 1;
  c.lr = 1e-3;
  return c;
}

}  // namespace lfusion::testing
