#pragma once

#include <stdexcept>
#include <string>

namespace masq {

/// Base class for every error raised by the library. Each concrete error
/// names one failure condition so callers can catch precisely.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MASQ_DEFINE_ERROR(Name)         \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

// geom
MASQ_DEFINE_ERROR(BehindCamera);
MASQ_DEFINE_ERROR(DegenerateConfiguration);
MASQ_DEFINE_ERROR(PointAtInfinity);
// retarget
MASQ_DEFINE_ERROR(DegenerateHand);
MASQ_DEFINE_ERROR(EmptyTrajectory);
// labelgen
MASQ_DEFINE_ERROR(MissingHomography);
// dataset
MASQ_DEFINE_ERROR(ChecksumMismatch);
MASQ_DEFINE_ERROR(VersionMismatch);
MASQ_DEFINE_ERROR(TruncatedFile);
MASQ_DEFINE_ERROR(EmptyAnnotation);
MASQ_DEFINE_ERROR(FormatError);
// nn
MASQ_DEFINE_ERROR(DimensionMismatch);
MASQ_DEFINE_ERROR(StepOutOfRange);
// train
MASQ_DEFINE_ERROR(EmptyDataset);
MASQ_DEFINE_ERROR(EmptyRobotDataset);
// general
MASQ_DEFINE_ERROR(InvalidArgument);

#undef MASQ_DEFINE_ERROR

}  // namespace masq
