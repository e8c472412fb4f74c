#pragma once

#include <string>

#include "pelab/policy.hpp"

namespace pelab::policy {

// On-disk container for PolicyRecord: magic "PEPO", u32 format version,
// length-prefixed UTF-8 key/value metadata, named tensors as row-major
// little-endian f32, trailing CRC-32 over everything before it. Heuristic
// records carry their spec in the metadata and no tensors.
inline constexpr uint32_t kPepoVersion = 1;

// Serializes to `path` atomically (temp file + rename).
void save_policy(const PolicyRecord& record, const std::string& path);

// Throws ValidationError on bad magic, version mismatch, truncation or
// checksum failure. Files are self-contained (action bounds travel along).
PolicyRecord load_policy(const std::string& path);

// Harness-level guard for slots that accept only one modality.
void expect_modality(const PolicyRecord& record, Modality expected);

// In-memory encode/decode, exposed for corruption tests.
std::string encode_policy(const PolicyRecord& record);
PolicyRecord decode_policy(const std::string& bytes);

}  // namespace pelab::policy
