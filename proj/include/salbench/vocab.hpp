#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace salbench {

/// Bijective token <-> id map with ids contiguous from 0.
/// Id 0 is reserved for unknown tokens, id 1 for padding.
class Vocabulary {
 public:
  static constexpr const char* kUnknown = "<unk>";
  static constexpr const char* kPad = "<pad>";
  static constexpr int kUnknownId = 0;
  static constexpr int kPadId = 1;

  Vocabulary();

  int add(const std::string& token);
  int id(const std::string& token) const;  // kUnknownId if absent
  bool contains(const std::string& token) const;
  const std::string& token(int id) const;
  size_t size() const { return tokens_.size(); }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace salbench
