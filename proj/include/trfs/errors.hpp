#pragma once

#include <stdexcept>
#include <string>

namespace trfs {

struct TrfsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : TrfsError { using TrfsError::TrfsError; };
struct EmptyInput : TrfsError { using TrfsError::TrfsError; };
struct NotScalarRoot : TrfsError { using TrfsError::TrfsError; };
struct DetachedRoot : TrfsError { using TrfsError::TrfsError; };
struct BadOutputSize : TrfsError { using TrfsError::TrfsError; };
struct HeadsDontDivide : TrfsError { using TrfsError::TrfsError; };
struct BadImageSize : TrfsError { using TrfsError::TrfsError; };
struct SizeTooSmall : TrfsError { using TrfsError::TrfsError; };
struct EmptySupportMask : TrfsError { using TrfsError::TrfsError; };
struct BadMagic : TrfsError { using TrfsError::TrfsError; };
struct TruncatedPayload : TrfsError { using TrfsError::TrfsError; };
struct UnsupportedVersion : TrfsError { using TrfsError::TrfsError; };
struct NonFiniteLoss : TrfsError { using TrfsError::TrfsError; };
struct FingerprintMismatch : TrfsError { using TrfsError::TrfsError; };
struct ConfigError : TrfsError { using TrfsError::TrfsError; };
struct IoError : TrfsError { using TrfsError::TrfsError; };

} // namespace trfs
