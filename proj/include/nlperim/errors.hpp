#pragma once

#include <stdexcept>
#include <string>

namespace nlperim {

// Base class for every error thrown by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define NLPERIM_ERROR_TYPE(Name)                               \
  struct Name : Error {                                        \
    explicit Name(const std::string& what) : Error(what) {}    \
  }

NLPERIM_ERROR_TYPE(NonPositiveInterval);
NLPERIM_ERROR_TYPE(DomainError);
NLPERIM_ERROR_TYPE(ResolutionError);
NLPERIM_ERROR_TYPE(DegenerateSet);
NLPERIM_ERROR_TYPE(OrderingError);
NLPERIM_ERROR_TYPE(OverlapError);
NLPERIM_ERROR_TYPE(NotOnBoundary);
NLPERIM_ERROR_TYPE(NoCancellation);
NLPERIM_ERROR_TYPE(RegularityError);
NLPERIM_ERROR_TYPE(SizeMismatch);
NLPERIM_ERROR_TYPE(CellNotFree);
NLPERIM_ERROR_TYPE(TooLarge);
NLPERIM_ERROR_TYPE(UnboundedTrace);
NLPERIM_ERROR_TYPE(RegionOutOfDomain);
NLPERIM_ERROR_TYPE(OriginNotOnBoundary);
NLPERIM_ERROR_TYPE(RoughnessError);
NLPERIM_ERROR_TYPE(AliasWarning);
NLPERIM_ERROR_TYPE(EmptyBoundary);
NLPERIM_ERROR_TYPE(InsufficientRows);
NLPERIM_ERROR_TYPE(Inconclusive);
NLPERIM_ERROR_TYPE(NoInteriorBalls);

#undef NLPERIM_ERROR_TYPE

// Carries the best value reached together with the error actually achieved.
struct ToleranceNotMet : Error {
  double best_estimate;
  double achieved_error;
  ToleranceNotMet(const std::string& what, double best, double err)
      : Error(what), best_estimate(best), achieved_error(err) {}
};

}  // namespace nlperim
