#pragma once

namespace iclids {

inline constexpr const char* kVersion = "0.1.0";

// On-disk format versions. Bump when the layout changes.
inline constexpr unsigned kCheckpointFormatVersion = 1;  // "ICLT"
inline constexpr unsigned kEnsembleFormatVersion = 1;    // "WCE1"
inline constexpr unsigned kManifestFormatVersion = 1;

}  // namespace iclids
