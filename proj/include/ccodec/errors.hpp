#pragma once

#include <stdexcept>
#include <string>

namespace ccodec {

// Base for every error raised by the library. Each failure mode named in the
// public contracts gets its own subclass so callers can catch selectively.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CCODEC_DEFINE_ERROR(Name)          \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

// data_ingest
CCODEC_DEFINE_ERROR(MalformedRow);
CCODEC_DEFINE_ERROR(UnknownLabel);
CCODEC_DEFINE_ERROR(DanglingEdge);
CCODEC_DEFINE_ERROR(InvalidMix);
CCODEC_DEFINE_ERROR(UnsatisfiableCenter);
CCODEC_DEFINE_ERROR(ExhaustedRetries);
CCODEC_DEFINE_ERROR(TooManyNodes);

// graph_stats
CCODEC_DEFINE_ERROR(InsufficientSamples);

// vae_model / nn
CCODEC_DEFINE_ERROR(ShapeMismatch);
CCODEC_DEFINE_ERROR(CheckpointError);

// training
CCODEC_DEFINE_ERROR(NonFiniteLoss);

// surrogate
CCODEC_DEFINE_ERROR(InsufficientValidPairs);

// explain
CCODEC_DEFINE_ERROR(EmptyTable);

// latent_control
CCODEC_DEFINE_ERROR(GridOverflow);
CCODEC_DEFINE_ERROR(NoReachableCell);

// cli_harness
CCODEC_DEFINE_ERROR(ConfigError);

#undef CCODEC_DEFINE_ERROR

}  // namespace ccodec
