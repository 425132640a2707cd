#include "ctxasr/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ctxasr/tensor.hpp"

namespace ctxasr {

using nlohmann::json;

int char_to_phoneme(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c >= '0' && c <= '9') return 26 + (c - '0');
  if (c == ' ') return kBoundaryPhoneme;
  return -1;
}

char phoneme_to_char(int id) {
  if (id >= 0 && id < 26) return static_cast<char>('a' + id);
  if (id >= 26 && id < 36) return static_cast<char>('0' + (id - 26));
  if (id == kBoundaryPhoneme) return ' ';
  fail("phoneme_to_char: id " + std::to_string(id) + " outside inventory");
}

namespace {

void check_word(const std::string& word) {
  if (word.empty()) fail("vocab: empty word");
  for (char c : word)
    if (c == ' ' || char_to_phoneme(c) < 0)
      fail("vocab: character '" + std::string(1, c) + "' in word '" + word + "' outside inventory");
}

}  // namespace

int WordpieceVocab::add(const std::string& piece) {
  auto it = index_.find(piece);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(pieces_.size());
  pieces_.push_back(piece);
  index_.emplace(piece, id);
  max_piece_len_ = std::max(max_piece_len_, piece.size());
  return id;
}

WordpieceVocab WordpieceVocab::build(const std::vector<std::vector<std::string>>& sentences,
                                     const std::vector<std::string>& must_include) {
  WordpieceVocab v;
  // Character pieces first so ids are stable regardless of corpus content.
  for (int p = 0; p < kPhonemeCount; ++p) {
    if (p == kBoundaryPhoneme) continue;
    const char c = phoneme_to_char(p);
    v.add(std::string("_") + c);
    v.add(std::string(1, c));
  }
  // Whole words by descending frequency, ties alphabetical.
  std::map<std::string, std::int64_t> counts;
  for (const auto& s : sentences)
    for (const auto& w : s) {
      check_word(w);
      ++counts[w];
    }
  for (const auto& w : must_include) {
    check_word(w);
    counts.try_emplace(w, 0);
  }
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [word, count] : ranked) v.add("_" + word);
  return v;
}

const std::string& WordpieceVocab::piece(int id) const {
  if (id < 0 || id >= size()) fail("vocab: piece id " + std::to_string(id) + " out of range");
  return pieces_[static_cast<std::size_t>(id)];
}

std::vector<int> WordpieceVocab::tokenize_word(const std::string& word) const {
  check_word(word);
  std::vector<int> out;
  std::size_t pos = 0;
  bool at_start = true;
  while (pos < word.size()) {
    const std::size_t remaining = word.size() - pos;
    std::size_t take = std::min(remaining, at_start ? max_piece_len_ - 1 : max_piece_len_);
    int id = -1;
    for (; take >= 1; --take) {
      std::string candidate = word.substr(pos, take);
      if (at_start) candidate = "_" + candidate;
      auto it = index_.find(candidate);
      if (it != index_.end()) {
        id = it->second;
        break;
      }
    }
    if (id < 0) fail("vocab: cannot tokenize word '" + word + "'");  // unreachable: chars always present
    out.push_back(id);
    pos += take;
    at_start = false;
  }
  return out;
}

std::vector<int> WordpieceVocab::tokenize(const std::vector<std::string>& words) const {
  std::vector<int> out;
  for (const auto& w : words) {
    std::vector<int> ids = tokenize_word(w);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

std::vector<std::string> WordpieceVocab::detokenize(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  for (int id : ids) {
    const std::string& p = piece(id);
    if (p.size() >= 2 && p[0] == '_') {
      words.push_back(p.substr(1));
    } else if (!words.empty()) {
      words.back() += p;
    } else {
      words.push_back(p);  // continuation with no open word: degrade gracefully
    }
  }
  return words;
}

std::string WordpieceVocab::to_json() const {
  json j;
  j["pieces"] = pieces_;
  return j.dump();
}

WordpieceVocab WordpieceVocab::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(std::string("vocab: invalid JSON: ") + e.what());
  }
  WordpieceVocab v;
  for (const auto& p : j.at("pieces")) v.add(p.get<std::string>());
  return v;
}

void WordpieceVocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail("vocab: cannot write " + path);
  out << to_json() << "\n";
}

WordpieceVocab WordpieceVocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("vocab: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

}  // namespace ctxasr
