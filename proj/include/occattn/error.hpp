#pragma once

#include <stdexcept>
#include <string>

namespace occattn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define OCCATTN_DEFINE_ERROR(Name)          \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

OCCATTN_DEFINE_ERROR(DimensionError);
OCCATTN_DEFINE_ERROR(NonFiniteError);
OCCATTN_DEFINE_ERROR(EmptyPopulationError);
OCCATTN_DEFINE_ERROR(ContractError);
OCCATTN_DEFINE_ERROR(ConfigurationError);
OCCATTN_DEFINE_ERROR(TrainingDivergedError);
OCCATTN_DEFINE_ERROR(FieldError);
OCCATTN_DEFINE_ERROR(TopologyError);
OCCATTN_DEFINE_ERROR(DegenerateMeshError);
OCCATTN_DEFINE_ERROR(UndefinedMetricError);
OCCATTN_DEFINE_ERROR(RoutingError);
OCCATTN_DEFINE_ERROR(FormatError);
OCCATTN_DEFINE_ERROR(IoError);

#undef OCCATTN_DEFINE_ERROR

}  // namespace occattn
