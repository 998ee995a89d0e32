#ifndef CEA_TEST_GRADCHECK_HPP
#define CEA_TEST_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cea/encoder.hpp"

namespace cea::testing {

struct GradCheck {
  std::size_t checked = 0;
  double worst_relative = 0.0;
  std::string worst_where;
};

/// Flat view of the analytic gradient in for_each_block order.
inline std::vector<double> flatten(const EncoderParams& p, const EncoderGradients& g) {
  std::vector<double> out;
  const auto E = static_cast<Eigen::Index>(p.dims.token_dim);
  for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(p.dims.buckets); ++b) {
    auto it = g.table_rows.find(static_cast<BucketId>(b));
    for (Eigen::Index e = 0; e < E; ++e) out.push_back(it == g.table_rows.end() ? 0.0 : it->second[e]);
  }
  // Eigen's default storage is column-major, matching data() order.
  for (Eigen::Index i = 0; i < g.w1.size(); ++i) out.push_back(g.w1.data()[i]);
  for (Eigen::Index i = 0; i < g.b1.size(); ++i) out.push_back(g.b1[i]);
  for (Eigen::Index i = 0; i < g.w2.size(); ++i) out.push_back(g.w2.data()[i]);
  for (Eigen::Index i = 0; i < g.b2.size(); ++i) out.push_back(g.b2[i]);
  return out;
}

/// Central differences over every parameter. Relative error is measured
/// against max(|analytic|, |numeric|); entries where both are below `floor`
/// must agree absolutely within `floor`.
inline GradCheck check_gradients(EncoderParams p, const std::string& a, const std::string& b, int target,
                                 double eps = 1e-4, double floor = 1e-8) {
  const auto analytic = flatten(p, encode_gradients(p, a, b, target).grads);
  GradCheck res;
  std::size_t flat = 0;
  p.for_each_block([&](double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i, ++flat) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = encode_gradients(p, a, b, target).loss;
      data[i] = saved - eps;
      const double down = encode_gradients(p, a, b, target).loss;
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double an = analytic[flat];
      const double scale = std::max(std::abs(an), std::abs(numeric));
      const double rel = scale < floor ? (std::abs(an - numeric) < floor ? 0.0 : 1.0) : std::abs(an - numeric) / scale;
      if (rel > res.worst_relative) {
        res.worst_relative = rel;
        res.worst_where = "param " + std::to_string(flat) + " analytic " + std::to_string(an) + " numeric " + std::to_string(numeric);
      }
      ++res.checked;
    }
  });
  return res;
}

}  // namespace cea::testing

#endif  // CEA_TEST_GRADCHECK_HPP
