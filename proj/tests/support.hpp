#pragma once

#include <cstdint>
#include <random>

#include "pixpoint/config.hpp"
#include "pixpoint/matrix.hpp"

namespace pixpoint::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& v : m.data) v = u(rng);
  return m;
}

/// A few objects with small dimensions; a whole three-stage run takes seconds.
inline config::RunConfig tiny_config() {
  config::RunConfig c = config::default_config();
  c.corpus.categories = {0, 3};
  c.corpus.train_per_category = 3;
  c.corpus.test_per_category = 1;
  c.corpus.random_views = 4;
  c.corpus.resolution = 32;
  c.corpus.high_resolution = 48;
  c.corpus.surface_points = 256;
  c.corpus.dense_points = 2048;
  c.model.f2d = 24;
  c.model.dc = 8;
  c.model.dt = 8;
  c.model.dsh = 16;
  c.model.dloc = 12;
  c.model.dg = 16;
  c.model.dvae = 16;
  c.model.n3d = 32;
  c.model.k_neighbors = 8;
  c.model.m_max = 32;
  c.model.mlp_hidden = 24;
  c.model.mlp_blocks = 1;
  c.model.heads = 2;
  c.model.ffn_hidden = 24;
  c.model.point_width = 16;
  for (auto& s : c.stages) {
    s.batch_size = 2;
    s.epochs = 1;
  }
  c.train.desk.epoch_multiplier = 1.0;
  c.train.max_views = 2;
  return c;
}

}  // namespace pixpoint::testing
