// SPDX-License-Identifier: Apache-2.0
#include "opdlab/protocol.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

namespace opdlab::protocol {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void be(std::uint64_t v, int bytes) {
    for (int i = bytes - 1; i >= 0; --i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void header(Kind kind, std::uint16_t fields) {
    out_.insert(out_.end(), std::begin(kMagic), std::end(kMagic));
    u8(kVersion);
    u8(static_cast<std::uint8_t>(kind));
    be(fields, 2);
  }
  void field(Tag tag, FieldType type, std::size_t len) {
    u8(tag);
    u8(static_cast<std::uint8_t>(type));
    be(len, 4);
  }
  void u64_field(Tag tag, std::uint64_t v) {
    field(tag, FieldType::u64, 8);
    be(v, 8);
  }
  void i64_field(Tag tag, std::int64_t v) {
    field(tag, FieldType::i64, 8);
    be(static_cast<std::uint64_t>(v), 8);
  }
  void i32_list(Tag tag, std::span<const TokenId> v) {
    field(tag, FieldType::i32_list, 4 * v.size());
    for (TokenId t : v) be(static_cast<std::uint32_t>(t), 4);
  }
  void f64_list(Tag tag, std::span<const double> v) {
    field(tag, FieldType::f64_list, 8 * v.size());
    for (double d : v) be(std::bit_cast<std::uint64_t>(d), 8);
  }
  void text(Tag tag, const std::string& s) {
    field(tag, FieldType::text, s.size());
    out_.insert(out_.end(), s.begin(), s.end());
  }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

struct Field {
  Tag tag;
  FieldType type;
  std::span<const std::uint8_t> payload;
};

std::uint64_t read_be(std::span<const std::uint8_t> b, std::size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v = (v << 8) | b[off + static_cast<std::size_t>(i)];
  return v;
}

struct Record {
  Kind kind;
  std::vector<Field> fields;
};

Record parse_record(std::span<const std::uint8_t> b) {
  if (b.size() < 8) throw ProtocolError("record shorter than its 8-byte header");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), b.begin())) throw ProtocolError("bad magic");
  if (b[4] != kVersion) throw ProtocolError("unsupported version " + std::to_string(b[4]));
  const auto kind = b[5];
  if (kind < 1 || kind > 3) throw ProtocolError("unknown record kind " + std::to_string(kind));
  const auto count = read_be(b, 6, 2);
  Record rec{static_cast<Kind>(kind), {}};
  std::size_t off = 8;
  int last_tag = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    if (off + 6 > b.size()) throw ProtocolError("truncated field header");
    const auto tag = b[off];
    const auto type = b[off + 1];
    const auto len = read_be(b, off + 2, 4);
    off += 6;
    if (len > b.size() - off) throw ProtocolError("field " + std::to_string(tag) + " overruns the record");
    if (tag <= last_tag) throw ProtocolError("fields must appear once each in ascending tag order");
    if (type < 1 || type > 6) throw ProtocolError("unknown field type " + std::to_string(type));
    last_tag = tag;
    rec.fields.push_back({static_cast<Tag>(tag), static_cast<FieldType>(type), b.subspan(off, len)});
    off += len;
  }
  if (off != b.size()) throw ProtocolError("trailing bytes after the last field");
  return rec;
}

const char* tag_name(Tag t) {
  switch (t) {
    case kRequestId: return "request_id";
    case kPromptId: return "prompt_id";
    case kPiKind: return "pi_kind";
    case kPiTokens: return "pi_tokens";
    case kResponseTokens: return "response_tokens";
    case kTokenIdsLogprob: return "token_ids_logprob";
    case kRows: return "rows";
    case kCols: return "cols";
    case kLogprobs: return "logprobs";
    case kSampledLogprobs: return "sampled_logprobs";
    case kReason: return "reason";
  }
  return "unknown";
}

class Reader {
 public:
  Reader(const Record& rec, std::initializer_list<Tag> allowed) : rec_(rec) {
    for (const auto& f : rec.fields)
      if (std::find(allowed.begin(), allowed.end(), f.tag) == allowed.end())
        throw ProtocolError("unexpected field tag " + std::to_string(f.tag) + " in this record kind");
  }

  const Field& get(Tag tag, FieldType type) const {
    for (const auto& f : rec_.fields) {
      if (f.tag != tag) continue;
      if (tag == kTokenIdsLogprob && f.type == FieldType::nested_i32_list)
        throw ProtocolError(
            "per-position token lists are not supported; send the flat sorted union in token_ids_logprob");
      if (f.type != type) throw ProtocolError(std::string("field ") + tag_name(tag) + " has the wrong type");
      return f;
    }
    throw ProtocolError(std::string("missing field ") + tag_name(tag));
  }

  std::uint64_t u64(Tag tag) const {
    const auto& f = get(tag, FieldType::u64);
    if (f.payload.size() != 8) throw ProtocolError(std::string("field ") + tag_name(tag) + " must be 8 bytes");
    return read_be(f.payload, 0, 8);
  }
  std::int64_t i64(Tag tag) const {
    const auto& f = get(tag, FieldType::i64);
    if (f.payload.size() != 8) throw ProtocolError(std::string("field ") + tag_name(tag) + " must be 8 bytes");
    return static_cast<std::int64_t>(read_be(f.payload, 0, 8));
  }
  std::vector<TokenId> i32s(Tag tag) const {
    const auto& f = get(tag, FieldType::i32_list);
    if (f.payload.size() % 4) throw ProtocolError(std::string("field ") + tag_name(tag) + " is not a whole number of i32");
    std::vector<TokenId> out(f.payload.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = static_cast<TokenId>(static_cast<std::uint32_t>(read_be(f.payload, 4 * i, 4)));
    return out;
  }
  std::vector<double> f64s(Tag tag) const {
    const auto& f = get(tag, FieldType::f64_list);
    if (f.payload.size() % 8) throw ProtocolError(std::string("field ") + tag_name(tag) + " is not a whole number of f64");
    std::vector<double> out(f.payload.size() / 8);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<double>(read_be(f.payload, 8 * i, 8));
    return out;
  }
  std::string text(Tag tag) const {
    const auto& f = get(tag, FieldType::text);
    return std::string(f.payload.begin(), f.payload.end());
  }

 private:
  const Record& rec_;
};

PiKind pi_kind_from(std::uint64_t v) {
  switch (v) {
    case 0: return PiKind::none;
    case 1: return PiKind::shared_rule;
    case 2: return PiKind::instance_answer;
    case 3: return PiKind::instance_response;
  }
  throw ProtocolError("unknown pi_kind " + std::to_string(v));
}

}  // namespace

Bytes encode(const Message& msg) {
  Writer w;
  if (const auto* r = std::get_if<ScoreRequest>(&msg)) {
    w.header(Kind::request, 6);
    w.u64_field(kRequestId, r->request_id);
    w.i64_field(kPromptId, r->prompt_id);
    w.u64_field(kPiKind, static_cast<std::uint64_t>(r->pi_kind));
    w.i32_list(kPiTokens, r->pi_tokens);
    w.i32_list(kResponseTokens, r->response_tokens);
    w.i32_list(kTokenIdsLogprob, r->token_ids_logprob);
  } else if (const auto* s = std::get_if<ScoreResponse>(&msg)) {
    if (s->logprobs.size() != s->rows * s->cols || s->sampled_logprobs.size() != s->rows)
      throw ProtocolError("response shape does not match its matrix");
    w.header(Kind::response, 5);
    w.u64_field(kRequestId, s->request_id);
    w.u64_field(kRows, s->rows);
    w.u64_field(kCols, s->cols);
    w.f64_list(kLogprobs, s->logprobs);
    w.f64_list(kSampledLogprobs, s->sampled_logprobs);
  } else {
    const auto& e = std::get<ErrorResponse>(msg);
    w.header(Kind::error, 2);
    w.u64_field(kRequestId, e.request_id);
    w.text(kReason, e.reason);
  }
  return w.take();
}

Message decode(std::span<const std::uint8_t> body) {
  const Record rec = parse_record(body);
  switch (rec.kind) {
    case Kind::request: {
      Reader r(rec, {kRequestId, kPromptId, kPiKind, kPiTokens, kResponseTokens, kTokenIdsLogprob});
      ScoreRequest q;
      q.request_id = r.u64(kRequestId);
      q.prompt_id = r.i64(kPromptId);
      q.pi_kind = pi_kind_from(r.u64(kPiKind));
      q.pi_tokens = r.i32s(kPiTokens);
      q.response_tokens = r.i32s(kResponseTokens);
      q.token_ids_logprob = r.i32s(kTokenIdsLogprob);
      return q;
    }
    case Kind::response: {
      Reader r(rec, {kRequestId, kRows, kCols, kLogprobs, kSampledLogprobs});
      ScoreResponse s;
      s.request_id = r.u64(kRequestId);
      s.rows = r.u64(kRows);
      s.cols = r.u64(kCols);
      s.logprobs = r.f64s(kLogprobs);
      s.sampled_logprobs = r.f64s(kSampledLogprobs);
      if (s.cols != 0 && s.rows > s.logprobs.size() / s.cols) throw ProtocolError("matrix size does not match rows x cols");
      if (s.logprobs.size() != s.rows * s.cols) throw ProtocolError("matrix size does not match rows x cols");
      if (s.sampled_logprobs.size() != s.rows) throw ProtocolError("sampled_logprobs length differs from rows");
      return s;
    }
    case Kind::error: {
      Reader r(rec, {kRequestId, kReason});
      return ErrorResponse{r.u64(kRequestId), r.text(kReason)};
    }
  }
  throw ProtocolError("unreachable record kind");
}

std::optional<std::uint64_t> peek_request_id(std::span<const std::uint8_t> body) {
  try {
    const Record rec = parse_record(body);
    for (const auto& f : rec.fields)
      if (f.tag == kRequestId && f.type == FieldType::u64 && f.payload.size() == 8) return read_be(f.payload, 0, 8);
  } catch (const ProtocolError&) {
  }
  return std::nullopt;
}

Bytes frame(std::span<const std::uint8_t> body) {
  if (body.size() > kMaxFrame) throw ProtocolError("frame exceeds the 64 MiB limit");
  Bytes out;
  out.reserve(body.size() + 4);
  const auto n = static_cast<std::uint32_t>(body.size());
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

std::optional<Bytes> unframe(std::span<const std::uint8_t> buf, std::size_t* consumed) {
  if (buf.size() < 4) return std::nullopt;
  const auto n = read_be(buf, 0, 4);
  if (n > kMaxFrame) throw ProtocolError("frame length " + std::to_string(n) + " exceeds the 64 MiB limit");
  if (buf.size() - 4 < n) return std::nullopt;
  if (consumed) *consumed = 4 + n;
  return Bytes(buf.begin() + 4, buf.begin() + 4 + static_cast<std::ptrdiff_t>(n));
}

UnionResult build_union(std::span<const std::vector<TokenId>> per_position) {
  UnionResult u;
  std::size_t k = 0;
  for (const auto& s : per_position) {
    if (s.empty()) throw ArgumentError("build_union: every position needs a non-empty set");
    k = std::max(k, s.size());
    u.tokens.insert(u.tokens.end(), s.begin(), s.end());
  }
  std::sort(u.tokens.begin(), u.tokens.end());
  u.tokens.erase(std::unique(u.tokens.begin(), u.tokens.end()), u.tokens.end());
  if (k > 0) u.amplification = static_cast<double>(u.tokens.size()) / static_cast<double>(k);
  return u;
}

std::vector<std::map<TokenId, double>> extract_position_maps(
    const ScoreRequest& req, const ScoreResponse& resp, std::span<const std::vector<TokenId>> per_position) {
  const auto& u = req.token_ids_logprob;
  if (resp.request_id != req.request_id) throw ProtocolError("response answers a different request id");
  if (resp.cols != u.size()) throw ProtocolError("response column count differs from the union size");
  if (resp.rows != per_position.size()) throw ProtocolError("response row count differs from the position count");
  std::vector<std::map<TokenId, double>> out(per_position.size());
  for (std::size_t t = 0; t < per_position.size(); ++t) {
    for (TokenId tok : per_position[t]) {
      const auto it = std::lower_bound(u.begin(), u.end(), tok);
      if (it == u.end() || *it != tok)
        throw ProtocolError("token " + std::to_string(tok) + " requested at position " + std::to_string(t) +
                            " is not in the union");
      out[t][tok] = resp.at(t, static_cast<std::size_t>(it - u.begin()));
    }
  }
  return out;
}

namespace {

Vocab teacher_vocab(const Teacher& t) {
  if (const auto* f = std::get_if<FrozenTeacher>(&t.construction)) return f->snapshot.vocab();
  if (const auto* e = std::get_if<EmaTeacher>(&t.construction)) return e->shadow.vocab();
  if (const auto* o = std::get_if<OracleTeacher>(&t.construction)) return o->family->vocab();
  throw ConstructionError("a self-referencing teacher has no snapshot to serve");
}

}  // namespace

TeacherService::TeacherService(Teacher teacher, std::size_t union_cap)
    : teacher_(std::move(teacher)), vocab_(teacher_vocab(teacher_)), cap_(union_cap ? union_cap : vocab_.size()) {}

Message TeacherService::handle(const ScoreRequest& req) const {
  auto fail = [&](std::string reason) { return ErrorResponse{req.request_id, std::move(reason)}; };
  const auto& u = req.token_ids_logprob;
  const std::size_t T = req.response_tokens.size();
  if (T == 0) return fail("empty sequence");
  if (u.empty()) return fail("empty token_ids_logprob");
  if (u.size() > cap_)
    return fail("union size " + std::to_string(u.size()) + " exceeds the cap of " + std::to_string(cap_));
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!vocab_.contains(u[i])) return fail("token " + std::to_string(u[i]) + " is outside the vocabulary");
    if (i > 0 && u[i] <= u[i - 1]) return fail("token_ids_logprob must be strictly ascending");
  }
  for (TokenId t : req.response_tokens)
    if (!vocab_.contains(t)) return fail("response token " + std::to_string(t) + " is outside the vocabulary");
  for (TokenId t : req.pi_tokens)
    if (!vocab_.contains(t)) return fail("pi token " + std::to_string(t) + " is outside the vocabulary");
  if (req.pi_kind == PiKind::none && !req.pi_tokens.empty()) return fail("pi_kind none with non-empty pi_tokens");

  const PrivilegedInfo pi{req.pi_kind, req.pi_tokens};
  ScoreResponse resp;
  resp.request_id = req.request_id;
  resp.rows = T;
  resp.cols = u.size();
  resp.logprobs.reserve(T * u.size());
  resp.sampled_logprobs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto p = teacher_dist(teacher_, nullptr, req.prompt_id, pi,
                                std::span<const TokenId>(req.response_tokens.data(), t));
    for (TokenId tok : u) resp.logprobs.push_back(safe_log(p[static_cast<std::size_t>(tok)]));
    resp.sampled_logprobs.push_back(safe_log(p[static_cast<std::size_t>(req.response_tokens[t])]));
  }
  return resp;
}

Bytes TeacherService::handle_body(std::span<const std::uint8_t> body) const {
  Message in;
  try {
    in = decode(body);
  } catch (const ProtocolError& e) {
    return encode(ErrorResponse{peek_request_id(body).value_or(0), std::string("malformed record: ") + e.what()});
  }
  if (const auto* req = std::get_if<ScoreRequest>(&in)) {
    try {
      return encode(handle(*req));
    } catch (const std::exception& e) {
      return encode(ErrorResponse{req->request_id, e.what()});
    }
  }
  return encode(ErrorResponse{peek_request_id(body).value_or(0), "expected a request record"});
}

}  // namespace opdlab::protocol
