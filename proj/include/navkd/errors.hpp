#pragma once

#include <stdexcept>
#include <string>

namespace navkd {

class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

#define NAVKD_DEFINE_ERROR(Name)              \
    class Name : public Error {               \
       public:                                \
        using Error::Error;                   \
    }

// tensor-core
NAVKD_DEFINE_ERROR(ShapeError);
NAVKD_DEFINE_ERROR(NonPositiveTemperature);
NAVKD_DEFINE_ERROR(NonScalarLoss);
// graph-world
NAVKD_DEFINE_ERROR(TooFewNodes);
NAVKD_DEFINE_ERROR(UnknownNode);
NAVKD_DEFINE_ERROR(NoFeasiblePair);
// model
NAVKD_DEFINE_ERROR(TokenOutOfRange);
NAVKD_DEFINE_ERROR(TooLong);
NAVKD_DEFINE_ERROR(IllegalMove);
// distillation
NAVKD_DEFINE_ERROR(OutOfRange);
NAVKD_DEFINE_ERROR(CandidateSetMismatch);
// evaluation
NAVKD_DEFINE_ERROR(EmptyBenchmark);
// pipeline
NAVKD_DEFINE_ERROR(ConfigError);
NAVKD_DEFINE_ERROR(PhaseError);
NAVKD_DEFINE_ERROR(ChecksumError);
NAVKD_DEFINE_ERROR(ConfigDigestMismatch);
NAVKD_DEFINE_ERROR(FormatError);

#undef NAVKD_DEFINE_ERROR

}  // namespace navkd
