#include "fedmoe/common.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <numeric>

namespace fedmoe {

std::string fmt_double(double v) {
  // %.17g always round-trips a double; among the precisions that parse
  // back bit-exactly, keep the shortest text ("100", not "1e+02").
  char buf[40];
  std::string best;
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v || (std::isnan(back) && std::isnan(v))) {
      if (best.empty() || std::strlen(buf) < best.size()) best = buf;
    }
  }
  return best;
}

std::vector<long> largest_remainder(const std::vector<double>& weights,
                                    long total) {
  const std::size_t n = weights.size();
  double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (n == 0 || total <= 0) return std::vector<long>(n, 0);
  if (wsum <= 0.0) throw InternalError("largest_remainder: weight sum <= 0");

  std::vector<long> counts(n, 0);
  std::vector<std::pair<double, std::size_t>> rema(n);
  long assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double exact = weights[i] / wsum * static_cast<double>(total);
    counts[i] = static_cast<long>(std::floor(exact));
    assigned += counts[i];
    rema[i] = {exact - std::floor(exact), i};
  }
  // Distribute the leftover by descending fractional part, lower index wins
  // ties so the result is deterministic.
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  long leftover = total - assigned;
  for (long k = 0; k < leftover; ++k) {
    counts[rema[static_cast<std::size_t>(k) % n].second] += 1;
  }
  // Floating-point drift can in principle over-assign; trim from the
  // smallest remainders.
  for (std::size_t i = n; leftover < 0 && i > 0; --i) {
    auto idx = rema[i - 1].second;
    if (counts[idx] > 0) {
      counts[idx] -= 1;
      ++leftover;
    }
  }
  return counts;
}

}  // namespace fedmoe
