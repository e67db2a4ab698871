#pragma once

#include <stdexcept>
#include <string>

namespace luq {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// linalg
class NotPositiveDefinite : public Error { public: using Error::Error; };
class DegenerateSampleCount : public Error { public: using Error::Error; };
class DimensionMismatch : public Error { public: using Error::Error; };
class EmptyInput : public Error { public: using Error::Error; };

// dataio
class BadMagic : public Error { public: using Error::Error; };
class TruncatedFile : public Error { public: using Error::Error; };
class LabelAbsent : public Error { public: using Error::Error; };
class BadParameter : public Error { public: using Error::Error; };

// nn
class BadArchitecture : public Error { public: using Error::Error; };
class Diverged : public Error { public: using Error::Error; };
class EmptyDataset : public Error { public: using Error::Error; };
class BadFormat : public Error { public: using Error::Error; };
class VersionMismatch : public Error { public: using Error::Error; };

// latent_uq
class EmptyClass : public Error { public: using Error::Error; };
class BadPercentiles : public Error { public: using Error::Error; };
class BadThresholds : public Error { public: using Error::Error; };
class FingerprintMismatch : public Error { public: using Error::Error; };

// baselines
class BadSeeds : public Error { public: using Error::Error; };

// cli / config
class ParseError : public Error { public: using Error::Error; };
class ValidationError : public Error { public: using Error::Error; };

} // namespace luq
