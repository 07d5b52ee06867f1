#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ovlens/error.hpp"

namespace ovlens {

struct TokenSeq {
  std::vector<std::size_t> ids;
  std::string text;
};

/// Greedy longest-match tokenizer. Bytes not covered by any vocabulary
/// string fall back to "<0xNN>" byte tokens, as in Llama vocabularies.
class Tokenizer {
 public:
  explicit Tokenizer(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    byte_ids_.fill(kNone);
    for (std::size_t id = 0; id < tokens_.size(); ++id) {
      const std::string& t = tokens_[id];
      if (auto b = byte_token_value(t); b >= 0) {
        if (byte_ids_[b] == kNone) byte_ids_[b] = id;
        continue;
      }
      if (t.empty()) continue;
      by_text_.try_emplace(t, id);
      max_len_ = std::max(max_len_, t.size());
    }
  }

  static std::string byte_token(unsigned char b) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "<0x%02X>", b);
    return buf;
  }

  /// True when every byte value has a fallback token, making tokenize total.
  bool has_full_byte_fallback() const {
    for (std::size_t id : byte_ids_)
      if (id == kNone) return false;
    return true;
  }

  std::size_t vocab_size() const noexcept { return tokens_.size(); }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }

  TokenSeq tokenize(std::string_view text) const {
    TokenSeq seq;
    seq.text = std::string(text);
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t best_len = 0;
      std::size_t best_id = kNone;
      const std::size_t limit = std::min(max_len_, text.size() - pos);
      for (std::size_t len = limit; len >= 1; --len) {
        auto it = by_text_.find(std::string(text.substr(pos, len)));
        if (it != by_text_.end()) {
          best_len = len;
          best_id = it->second;
          break;
        }
      }
      if (best_id == kNone) {
        const auto b = static_cast<unsigned char>(text[pos]);
        best_id = byte_ids_[b];
        best_len = 1;
        if (best_id == kNone) {
          throw ArgumentError("tokenize: byte 0x" + byte_token(b).substr(3, 2) +
                              " not covered by vocabulary");
        }
      }
      seq.ids.push_back(best_id);
      pos += best_len;
    }
    return seq;
  }

  std::string decode(std::size_t id) const {
    const std::string& t = tokens_.at(id);
    if (auto b = byte_token_value(t); b >= 0) return std::string(1, static_cast<char>(b));
    return t;
  }

  std::string detokenize(const std::vector<std::size_t>& ids) const {
    std::string out;
    for (std::size_t id : ids) out += decode(id);
    return out;
  }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  static int byte_token_value(const std::string& t) {
    if (t.size() != 6 || t.compare(0, 3, "<0x") != 0 || t[5] != '>') return -1;
    auto hex = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      return -1;
    };
    const int hi = hex(t[3]);
    const int lo = hex(t[4]);
    return hi < 0 || lo < 0 ? -1 : hi * 16 + lo;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> by_text_;
  std::array<std::size_t, 256> byte_ids_{};
  std::size_t max_len_ = 0;
};

}  // namespace ovlens
