#pragma once

#include <stdexcept>
#include <string>

namespace tkil {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IndivisibleClasses : Error { using Error::Error; };
struct OutOfRangeTask : Error { using Error::Error; };
struct ClassCollision : Error { using Error::Error; };
struct EmptySource : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct HeterogeneousModels : Error { using Error::Error; };
struct LayoutMismatch : Error { using Error::Error; };
struct LabelOutOfRange : Error { using Error::Error; };
struct ZeroGradient : Error { using Error::Error; };
struct EmptyBatch : Error { using Error::Error; };
struct MissingTaskExemplars : Error { using Error::Error; };
struct ConfigInvalid : Error { using Error::Error; };
struct OutputExists : Error { using Error::Error; };
struct EmptyBundle : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

} // namespace tkil
