#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace ctxasr {

// Character inventory shared by the toy G2P and the synthetic feature
// renderer: 'a'..'z' -> 0..25, '0'..'9' -> 26..35, word boundary -> 36.
constexpr int kPhonemeCount = 37;
constexpr int kBoundaryPhoneme = 36;

// Phoneme id for a character, or -1 if outside the inventory.
int char_to_phoneme(char c);
char phoneme_to_char(int id);  // inverse; boundary maps to ' '

// Word-piece vocabulary. Pieces prefixed with '_' start a new word; bare
// pieces continue the current word. The inventory always contains the
// word-start and continuation variants of every character, so any in-alphabet
// word tokenizes without OOV; frequent whole words are added as single
// pieces on top.
class WordpieceVocab {
 public:
  // `sentences` supply whole-word candidates ranked by frequency;
  // `must_include` words are added regardless of count. Words omitted from
  // both fall back to their character pieces, which is how context-phrase
  // words stay multi-piece.
  static WordpieceVocab build(const std::vector<std::vector<std::string>>& sentences,
                              const std::vector<std::string>& must_include);

  int size() const { return static_cast<int>(pieces_.size()); }
  int blank() const { return size(); }  // joint output index V
  const std::string& piece(int id) const;

  // Greedy longest-match within each word, '_'-prefixed first piece.
  std::vector<int> tokenize_word(const std::string& word) const;
  std::vector<int> tokenize(const std::vector<std::string>& words) const;
  std::vector<std::string> detokenize(const std::vector<int>& ids) const;

  std::string to_json() const;
  static WordpieceVocab from_json(const std::string& text);
  void save(const std::string& path) const;
  static WordpieceVocab load(const std::string& path);

 private:
  int add(const std::string& piece);
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> index_;
  std::size_t max_piece_len_ = 0;
};

}  // namespace ctxasr
