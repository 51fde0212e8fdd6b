#include "lsn/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "lsn/errors.hpp"

namespace lsn {

int Rng::uniform_int(int lo, int hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo + 1);
  return lo + static_cast<int>(next_u64() % span);
}

double Rng::normal() {
  // Box-Muller; one draw per call keeps the state easy to reason about.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (!is) throw ParseError("corrupt RNG state");
}

}  // namespace lsn
