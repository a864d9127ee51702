#include "mappo/rng.hpp"

#include <sstream>

namespace mappo {

std::string Rng::serialize() const {
  std::ostringstream os;
  os << gen_;
  return os.str();
}

void Rng::deserialize(const std::string& s) {
  std::istringstream is(s);
  is >> gen_;
}

}  // namespace mappo
