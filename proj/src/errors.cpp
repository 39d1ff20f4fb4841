#include "adaann/errors.hpp"

#include <sstream>

namespace adaann {

void NumericError::attach_context(std::size_t step, double t) {
  if (step_) return;
  step_ = step;
  t_ = t;
  std::ostringstream os;
  os.precision(17);
  os << message_ << " (annealing step " << step << ", t=" << t << ")";
  message_ = os.str();
}

}  // namespace adaann
