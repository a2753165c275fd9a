// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "opdlab/corelang.hpp"
#include "opdlab/tasks.hpp"
#include "opdlab/teacher.hpp"

// Flat-union teacher scoring protocol. Record layout is documented in
// docs/protocol.md; everything multi-byte is big-endian.
namespace opdlab::protocol {

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint8_t kMagic[4] = {'O', 'P', 'D', 'Q'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kMaxFrame = 64u << 20;

enum class Kind : std::uint8_t { request = 1, response = 2, error = 3 };

enum class FieldType : std::uint8_t { u64 = 1, i64 = 2, i32_list = 3, f64_list = 4, text = 5, nested_i32_list = 6 };

enum Tag : std::uint8_t {
  kRequestId = 1,
  kPromptId = 2,
  kPiKind = 3,
  kPiTokens = 4,
  kResponseTokens = 5,
  kTokenIdsLogprob = 6,
  kRows = 7,
  kCols = 8,
  kLogprobs = 9,
  kSampledLogprobs = 10,
  kReason = 11,
};

struct ScoreRequest {
  std::uint64_t request_id = 0;
  std::int64_t prompt_id = 0;
  PiKind pi_kind = PiKind::none;
  std::vector<TokenId> pi_tokens;
  std::vector<TokenId> response_tokens;
  std::vector<TokenId> token_ids_logprob;  // the union U, ascending and unique

  friend bool operator==(const ScoreRequest&, const ScoreRequest&) = default;
};

struct ScoreResponse {
  std::uint64_t request_id = 0;
  std::size_t rows = 0;  // T
  std::size_t cols = 0;  // |U|
  std::vector<double> logprobs;          // row-major rows x cols
  std::vector<double> sampled_logprobs;  // one per row

  double at(std::size_t t, std::size_t j) const { return logprobs[t * cols + j]; }
  friend bool operator==(const ScoreResponse&, const ScoreResponse&) = default;
};

struct ErrorResponse {
  std::uint64_t request_id = 0;
  std::string reason;

  friend bool operator==(const ErrorResponse&, const ErrorResponse&) = default;
};

using Message = std::variant<ScoreRequest, ScoreResponse, ErrorResponse>;

Bytes encode(const Message& msg);
/// Throws ProtocolError with a description of the first defect.
Message decode(std::span<const std::uint8_t> body);
/// Best-effort request id of a record that failed to decode.
std::optional<std::uint64_t> peek_request_id(std::span<const std::uint8_t> body);

/// 4-byte big-endian length followed by the body.
Bytes frame(std::span<const std::uint8_t> body);
/// Splits one frame off the front of `buf`; nullopt when incomplete.
std::optional<Bytes> unframe(std::span<const std::uint8_t> buf, std::size_t* consumed = nullptr);

struct UnionResult {
  std::vector<TokenId> tokens;  // sorted unique
  double amplification = 0.0;   // |U| / K with K the largest per-position set
};

/// Flattens per-position TopK sets into one query set. Each set must be non-empty.
UnionResult build_union(std::span<const std::vector<TokenId>> per_position);

/// Recovers position t's requested logprobs from row t of the union matrix.
std::vector<std::map<TokenId, double>> extract_position_maps(const ScoreRequest& req,
                                                             const ScoreResponse& resp,
                                                             std::span<const std::vector<TokenId>> per_position);

/// Stateless scorer over an immutable teacher snapshot.
class TeacherService {
 public:
  TeacherService(Teacher teacher, std::size_t union_cap = 0);

  const Vocab& vocab() const { return vocab_; }
  std::size_t union_cap() const { return cap_; }

  Message handle(const ScoreRequest& req) const;
  /// Decodes, scores, and encodes. Malformed input yields an encoded ErrorResponse.
  Bytes handle_body(std::span<const std::uint8_t> body) const;

 private:
  Teacher teacher_;
  Vocab vocab_;
  std::size_t cap_;
};

}  // namespace opdlab::protocol
