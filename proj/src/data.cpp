#include "ctxasr/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ctxasr/text_injection.hpp"

namespace ctxasr {

using nlohmann::json;

void CorpusSpec::validate() const {
  auto bad = [](const std::string& msg) { fail("corpus spec: " + msg); };
  if (n_common_words < 4) bad("n_common_words must be >= 4");
  if (n_entities < 4) bad("n_entities must be >= 4");
  if (!(1 <= entity_min_words && entity_min_words <= entity_max_words))
    bad("need 1 <= entity_min_words <= entity_max_words");
  if (n_paired < 1 || n_text < 1) bad("corpus sizes must be >= 1");
  if (text_entity_holdout < 0 || text_entity_holdout >= 1) bad("text_entity_holdout must be in [0, 1)");
  if (static_cast<int>(n_entities * text_entity_holdout) >= n_entities)
    bad("holdout leaves no entities for paired data");
  if (feature_dim < 1) bad("feature_dim must be >= 1");
  if (noise_std < 0) bad("noise_std must be >= 0");
  if (n_test_per_set < 1 || n_val < 1) bad("test/validation sizes must be >= 1");
  if (test_distractors < 1) bad("test_distractors must be >= 1");
  if (!(1 <= frames_min_rep && frames_min_rep <= frames_max_rep))
    bad("need 1 <= frames_min_rep <= frames_max_rep");
  if (train_bias_distractors < 0) bad("train_bias_distractors must be >= 0");
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json spec_to_json_obj(const CorpusSpec& s) {
  json j;
  j["n_common_words"] = s.n_common_words;
  j["n_entities"] = s.n_entities;
  j["entity_min_words"] = s.entity_min_words;
  j["entity_max_words"] = s.entity_max_words;
  j["n_paired"] = s.n_paired;
  j["n_text"] = s.n_text;
  j["text_entity_holdout"] = s.text_entity_holdout;
  j["feature_dim"] = s.feature_dim;
  j["noise_std"] = s.noise_std;
  j["seed"] = s.seed;
  j["n_test_per_set"] = s.n_test_per_set;
  j["n_val"] = s.n_val;
  j["test_distractors"] = s.test_distractors;
  j["frames_min_rep"] = s.frames_min_rep;
  j["frames_max_rep"] = s.frames_max_rep;
  j["train_bias_distractors"] = s.train_bias_distractors;
  return j;
}

}  // namespace

std::string CorpusSpec::to_json() const { return spec_to_json_obj(*this).dump(2); }

CorpusSpec CorpusSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("corpus spec: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail("corpus spec: " + path + " is not valid JSON: " + e.what());
  }
  CorpusSpec s;
  read_field(j, "n_common_words", s.n_common_words);
  read_field(j, "n_entities", s.n_entities);
  read_field(j, "entity_min_words", s.entity_min_words);
  read_field(j, "entity_max_words", s.entity_max_words);
  read_field(j, "n_paired", s.n_paired);
  read_field(j, "n_text", s.n_text);
  read_field(j, "text_entity_holdout", s.text_entity_holdout);
  read_field(j, "feature_dim", s.feature_dim);
  read_field(j, "noise_std", s.noise_std);
  read_field(j, "seed", s.seed);
  read_field(j, "n_test_per_set", s.n_test_per_set);
  read_field(j, "n_val", s.n_val);
  read_field(j, "test_distractors", s.test_distractors);
  read_field(j, "frames_min_rep", s.frames_min_rep);
  read_field(j, "frames_max_rep", s.frames_max_rep);
  read_field(j, "train_bias_distractors", s.train_bias_distractors);
  s.validate();
  return s;
}

void EntityLexicon::save(const std::string& path) const {
  json j;
  j["phrases"] = json::array();
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    json e;
    e["words"] = phrases[i];
    e["held_out"] = static_cast<bool>(held_out[i]);
    j["phrases"].push_back(e);
  }
  std::ofstream out(path);
  if (!out) fail("entities: cannot write " + path);
  out << j.dump() << "\n";
}

EntityLexicon EntityLexicon::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("entities: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail("entities: " + path + " is not valid JSON: " + e.what());
  }
  EntityLexicon lex;
  for (const auto& e : j.at("phrases")) {
    lex.phrases.push_back(e.at("words").get<std::vector<std::string>>());
    lex.held_out.push_back(e.at("held_out").get<bool>() ? 1 : 0);
  }
  return lex;
}

namespace {

bool contains_phrase(const std::vector<std::string>& words, const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > words.size()) return false;
  for (std::size_t start = 0; start + phrase.size() <= words.size(); ++start) {
    bool match = true;
    for (std::size_t i = 0; i < phrase.size(); ++i)
      if (words[start + i] != phrase[i]) {
        match = false;
        break;
      }
    if (match) return true;
  }
  return false;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

}  // namespace

int assign_retrieval_label(const std::vector<std::string>& transcript, const BiasSet& bias_set) {
  int best = bias_set.no_bias_index();
  std::size_t best_len = 0;
  for (int i = 0; i < bias_set.size(); ++i) {
    const auto& phrase = bias_set.phrases[static_cast<std::size_t>(i)];
    if (phrase.size() > best_len && contains_phrase(transcript, phrase)) {
      best = i;
      best_len = phrase.size();
    }
  }
  return best;
}

BiasSet make_bias_set(const std::vector<std::vector<std::string>>& phrases,
                      const WordpieceVocab& vocab) {
  BiasSet set;
  set.phrases = phrases;
  set.wordpieces.reserve(phrases.size());
  for (const auto& p : phrases) set.wordpieces.push_back(vocab.tokenize(p));
  set.validate();
  return set;
}

std::vector<BiasSet> sample_bias_set(const std::vector<std::vector<std::string>>& batch_sentences,
                                     const EntityLexicon& lexicon, int target_n, Rng& rng,
                                     const WordpieceVocab& vocab) {
  // Candidate pool: entity phrases contained in any sentence of the batch,
  // deduplicated in first-appearance order.
  std::vector<int> pool;
  std::set<int> seen;
  for (const auto& sentence : batch_sentences)
    for (std::size_t e = 0; e < lexicon.phrases.size(); ++e)
      if (!seen.count(static_cast<int>(e)) && contains_phrase(sentence, lexicon.phrases[e])) {
        seen.insert(static_cast<int>(e));
        pool.push_back(static_cast<int>(e));
      }

  std::vector<BiasSet> out;
  out.reserve(batch_sentences.size());
  for (std::size_t i = 0; i < batch_sentences.size(); ++i) {
    std::vector<int> chosen = pool;
    rng.shuffle(chosen);
    if (target_n < static_cast<int>(chosen.size())) chosen.resize(static_cast<std::size_t>(target_n));
    std::vector<std::vector<std::string>> phrases;
    phrases.reserve(chosen.size());
    for (int e : chosen) phrases.push_back(lexicon.phrases[static_cast<std::size_t>(e)]);
    out.push_back(make_bias_set(phrases, vocab));
  }
  return out;
}

namespace {

// --- corpus synthesis ------------------------------------------------------

std::string random_word(Rng& rng, int min_len, int max_len) {
  const int len = rng.uniform_int(min_len, max_len);
  std::string w(static_cast<std::size_t>(len), 'a');
  for (char& c : w) c = static_cast<char>('a' + rng.uniform_int(0, 25));
  return w;
}

std::vector<std::string> fresh_words(Rng& rng, int count, int min_len, int max_len,
                                     std::set<std::string>& used) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(count));
  while (static_cast<int>(out.size()) < count) {
    std::string w = random_word(rng, min_len, max_len);
    if (used.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

const std::vector<std::string> kPrefixes = {"open", "call", "play", "text", "find"};

struct Generator {
  const CorpusSpec& spec;
  Rng rng;
  std::vector<std::string> common;
  EntityLexicon lexicon;
  std::vector<int> train_entities;   // indices with held_out == 0
  std::vector<int> holdout_entities; // indices with held_out == 1
  Tensor prototypes;                 // [kPhonemeCount x F]

  explicit Generator(const CorpusSpec& s) : spec(s), rng(Rng::mix(s.seed, 0xC0D47A)) {
    std::set<std::string> used(kPrefixes.begin(), kPrefixes.end());
    common = fresh_words(rng, spec.n_common_words, 2, 5, used);
    for (int e = 0; e < spec.n_entities; ++e) {
      const int n_words = rng.uniform_int(spec.entity_min_words, spec.entity_max_words);
      lexicon.phrases.push_back(fresh_words(rng, n_words, 3, 7, used));
      lexicon.held_out.push_back(0);
    }
    // Mark a random fraction as text/test-only.
    std::vector<int> order = rng.sample_indices(spec.n_entities, spec.n_entities);
    const int n_holdout = static_cast<int>(spec.n_entities * spec.text_entity_holdout);
    for (int i = 0; i < n_holdout; ++i) lexicon.held_out[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    for (int e = 0; e < spec.n_entities; ++e)
      (lexicon.held_out[static_cast<std::size_t>(e)] ? holdout_entities : train_entities).push_back(e);

    Rng proto_rng(Rng::mix(spec.seed, 0xFEA7));
    prototypes = Tensor::randn({kPhonemeCount, spec.feature_dim}, proto_rng, 1.0, false);
  }

  std::vector<std::string> fillers(int lo, int hi) {
    const int n = rng.uniform_int(lo, hi);
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i)
      out.push_back(common[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(common.size()) - 1))]);
    return out;
  }

  const std::vector<std::string>& entity(const std::vector<int>& pool) {
    return lexicon.phrases[static_cast<std::size_t>(pool[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(pool.size()) - 1))])];
  }

  // Sentence templates shared by paired and text generation. `entity_pool`
  // selects which entities may appear.
  std::vector<std::string> sentence(const std::vector<int>& entity_pool) {
    const double roll = rng.uniform_real();
    std::vector<std::string> words;
    if (roll < 0.35) {  // "open $APP"-style prefixed entity
      words.push_back(kPrefixes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(kPrefixes.size()) - 1))]);
      const auto& e = entity(entity_pool);
      words.insert(words.end(), e.begin(), e.end());
    } else if (roll < 0.6) {  // bare entity, possibly trailed by filler
      const auto& e = entity(entity_pool);
      words.insert(words.end(), e.begin(), e.end());
      if (rng.uniform_real() < 0.5) {
        auto f = fillers(1, 1);
        words.insert(words.end(), f.begin(), f.end());
      }
    } else {  // general query, no entity
      words = fillers(2, 4);
    }
    return words;
  }

  Tensor render_frames(const std::vector<std::string>& words) {
    const std::vector<int> phonemes = text_to_phonemes(words);
    std::vector<double> data;
    int t = 0;
    std::span<const double> proto = prototypes.values();
    const int F = spec.feature_dim;
    for (int p : phonemes) {
      const int reps = rng.uniform_int(spec.frames_min_rep, spec.frames_max_rep);
      for (int r = 0; r < reps; ++r) {
        for (int f = 0; f < F; ++f)
          data.push_back(proto[static_cast<std::size_t>(p) * F + f] + spec.noise_std * rng.normal());
        ++t;
      }
    }
    return Tensor::from({t, F}, std::move(data));
  }

  // Bias set for a training utterance: distractors from the paired-visible
  // entities only; the true phrase (if any) mixed in at a random slot.
  void train_bias(const std::vector<std::string>& words,
                  std::vector<std::vector<std::string>>& phrases_out, int& label_out) {
    int own = -1;
    for (int e : train_entities)
      if (contains_phrase(words, lexicon.phrases[static_cast<std::size_t>(e)])) {
        own = e;
        break;
      }
    std::vector<int> candidates;
    for (int e : train_entities)
      if (e != own) candidates.push_back(e);
    rng.shuffle(candidates);
    std::vector<int> chosen(candidates.begin(),
                            candidates.begin() + std::min<std::size_t>(candidates.size(),
                                                                       static_cast<std::size_t>(spec.train_bias_distractors)));
    if (own >= 0) {
      const int pos = rng.uniform_int(0, static_cast<int>(chosen.size()));
      chosen.insert(chosen.begin() + pos, own);
    }
    phrases_out.clear();
    for (int e : chosen) phrases_out.push_back(lexicon.phrases[static_cast<std::size_t>(e)]);
    BiasSet probe;
    probe.phrases = phrases_out;
    probe.wordpieces.assign(phrases_out.size(), {0});  // tokenization irrelevant for labeling
    label_out = assign_retrieval_label(words, probe);
  }

  json paired_row(const std::string& id, const std::vector<std::string>& words,
                  const std::vector<std::vector<std::string>>& bias_phrases, int label) {
    json j;
    j["id"] = id;
    Tensor frames = render_frames(words);
    json fr = json::array();
    const int T = frames.dim(0), F = frames.dim(1);
    std::span<const double> v = frames.values();
    for (int t = 0; t < T; ++t) {
      json row = json::array();
      for (int f = 0; f < F; ++f) row.push_back(v[static_cast<std::size_t>(t) * F + f]);
      fr.push_back(std::move(row));
    }
    j["frames"] = std::move(fr);
    j["words"] = words;
    json bias = json::array();
    for (const auto& p : bias_phrases) bias.push_back(join_words(p));
    j["bias"] = std::move(bias);
    j["label"] = label;
    return j;
  }

  // Test row: the true entity (when present) goes to a random slot among the
  // first few distractors; the full distractor list is stored for eval-time
  // sweeps over the bias-set size.
  json test_row(const std::string& id, const std::string& set_type,
                const std::vector<std::string>& words, const std::vector<std::string>& entity_words) {
    std::vector<int> others;
    for (int e = 0; e < spec.n_entities; ++e)
      if (entity_words.empty() || lexicon.phrases[static_cast<std::size_t>(e)] != entity_words)
        others.push_back(e);
    rng.shuffle(others);
    others.resize(static_cast<std::size_t>(std::min<int>(spec.test_distractors, static_cast<int>(others.size()))));

    std::vector<std::vector<std::string>> materialized;
    for (int e : others) materialized.push_back(lexicon.phrases[static_cast<std::size_t>(e)]);
    if (!entity_words.empty()) {
      const int pos = rng.uniform_int(0, static_cast<int>(materialized.size()));
      materialized.insert(materialized.begin() + pos, entity_words);
    }
    BiasSet probe;
    probe.phrases = materialized;
    probe.wordpieces.assign(materialized.size(), {0});
    json j = paired_row(id, words, materialized, assign_retrieval_label(words, probe));
    j["set_type"] = set_type;
    j["n_distractors"] = static_cast<int>(others.size());
    j["entity"] = join_words(entity_words);
    json d = json::array();
    for (int e : others) d.push_back(join_words(lexicon.phrases[static_cast<std::size_t>(e)]));
    j["distractors"] = std::move(d);
    return j;
  }
};

void write_lines(const std::string& path, const std::vector<json>& rows) {
  std::ofstream out(path);
  if (!out) fail("gen-data: cannot write " + path);
  for (const auto& r : rows) out << r.dump() << "\n";
}

}  // namespace

void generate_corpus(const CorpusSpec& spec, const std::string& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  Generator gen(spec);

  // Paired transcripts see only the non-held-out entities.
  std::vector<json> paired_rows;
  std::vector<std::vector<std::string>> paired_sentences;
  for (int i = 0; i < spec.n_paired; ++i) {
    std::vector<std::string> words = gen.sentence(gen.train_entities);
    paired_sentences.push_back(words);
    std::vector<std::vector<std::string>> bias;
    int label = 0;
    gen.train_bias(words, bias, label);
    std::ostringstream id;
    id << "p" << std::setw(6) << std::setfill('0') << i;
    paired_rows.push_back(gen.paired_row(id.str(), words, bias, label));
  }

  // Unpaired text: full entity inventory, held-out entities boosted so the
  // text-only regime actually covers them densely.
  std::vector<json> text_rows;
  std::vector<std::string> must_include;
  for (int i = 0; i < spec.n_text; ++i) {
    const bool pick_holdout = !gen.holdout_entities.empty() && gen.rng.uniform_real() < 0.7;
    std::vector<std::string> words = gen.sentence(pick_holdout ? gen.holdout_entities : gen.train_entities);
    json j;
    std::ostringstream id;
    id << "t" << std::setw(6) << std::setfill('0') << i;
    j["id"] = id.str();
    j["words"] = words;
    text_rows.push_back(std::move(j));
  }

  // Validation: held-back draws from the training distribution, bias sets
  // sized like training ones (used for checkpoint selection in every mode).
  std::vector<json> val_rows;
  for (int i = 0; i < spec.n_val; ++i) {
    std::vector<std::string> words = gen.sentence(gen.train_entities);
    std::vector<std::vector<std::string>> bias;
    int label = 0;
    gen.train_bias(words, bias, label);
    std::ostringstream id;
    id << "v" << std::setw(4) << std::setfill('0') << i;
    val_rows.push_back(gen.paired_row(id.str(), words, bias, label));
  }

  // Test sets: NO_PRE and PRE over held-out entities, ANTI over general
  // queries with no entity at all.
  const std::vector<int>& test_pool =
      gen.holdout_entities.empty() ? gen.train_entities : gen.holdout_entities;
  std::vector<json> no_pre_rows, pre_rows, anti_rows;
  for (int i = 0; i < spec.n_test_per_set; ++i) {
    const auto& e = gen.entity(test_pool);
    std::ostringstream id;
    id << "no_pre_" << std::setw(4) << std::setfill('0') << i;
    no_pre_rows.push_back(gen.test_row(id.str(), "no_pre", e, e));
  }
  for (int i = 0; i < spec.n_test_per_set; ++i) {
    const auto& e = gen.entity(test_pool);
    std::vector<std::string> words = {kPrefixes[static_cast<std::size_t>(gen.rng.uniform_int(0, static_cast<int>(kPrefixes.size()) - 1))]};
    words.insert(words.end(), e.begin(), e.end());
    std::ostringstream id;
    id << "pre_" << std::setw(4) << std::setfill('0') << i;
    pre_rows.push_back(gen.test_row(id.str(), "pre", words, e));
  }
  for (int i = 0; i < spec.n_test_per_set; ++i) {
    std::vector<std::string> words = gen.fillers(2, 4);
    std::ostringstream id;
    id << "anti_" << std::setw(4) << std::setfill('0') << i;
    anti_rows.push_back(gen.test_row(id.str(), "anti", words, {}));
  }

  // Word-piece vocabulary: common words and prefixes become whole pieces,
  // while entity words are deliberately left to their character pieces, so a
  // context phrase always spans several pieces. That keeps the bias
  // attention's next-piece structure meaningful and makes unseen entities
  // new sequences of well-trained units rather than untrained labels.
  std::set<std::string> entity_words;
  for (const auto& p : gen.lexicon.phrases)
    for (const auto& w : p) entity_words.insert(w);
  std::vector<std::vector<std::string>> vocab_sentences;
  vocab_sentences.reserve(paired_sentences.size());
  for (const auto& s : paired_sentences) {
    std::vector<std::string> kept;
    for (const auto& w : s)
      if (!entity_words.count(w)) kept.push_back(w);
    vocab_sentences.push_back(std::move(kept));
  }
  for (const auto& w : gen.common) must_include.push_back(w);
  for (const auto& w : kPrefixes) must_include.push_back(w);
  WordpieceVocab vocab = WordpieceVocab::build(vocab_sentences, must_include);

  namespace fs = std::filesystem;
  write_lines((fs::path(out_dir) / "paired.jsonl").string(), paired_rows);
  write_lines((fs::path(out_dir) / "text.jsonl").string(), text_rows);
  write_lines((fs::path(out_dir) / "val.jsonl").string(), val_rows);
  write_lines((fs::path(out_dir) / "test_no_pre.jsonl").string(), no_pre_rows);
  write_lines((fs::path(out_dir) / "test_pre.jsonl").string(), pre_rows);
  write_lines((fs::path(out_dir) / "test_anti.jsonl").string(), anti_rows);
  vocab.save((fs::path(out_dir) / "vocab.json").string());
  gen.lexicon.save((fs::path(out_dir) / "entities.json").string());
  std::ofstream spec_out((fs::path(out_dir) / "spec.json").string());
  if (!spec_out) fail("gen-data: cannot write spec.json");
  spec_out << spec.to_json() << "\n";
}

std::vector<PairedExample> load_paired(const std::string& path, const WordpieceVocab& vocab) {
  std::ifstream in(path);
  if (!in) fail("data: cannot open " + path);
  std::vector<PairedExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail("data: " + path + ":" + std::to_string(line_no) + " invalid JSON: " + e.what());
    }
    PairedExample ex;
    ex.id = j.at("id").get<std::string>();
    const auto& fr = j.at("frames");
    const int T = static_cast<int>(fr.size());
    if (T == 0) fail("data: " + ex.id + " has no frames");
    const int F = static_cast<int>(fr.at(0).size());
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(T) * static_cast<std::size_t>(F));
    for (const auto& row : fr) {
      if (static_cast<int>(row.size()) != F) fail("data: " + ex.id + " has ragged frames");
      for (const auto& v : row) values.push_back(v.get<double>());
    }
    ex.frames = Tensor::from({T, F}, std::move(values));
    ex.words = j.at("words").get<std::vector<std::string>>();
    ex.wordpieces = vocab.tokenize(ex.words);
    std::vector<std::vector<std::string>> phrases;
    for (const auto& b : j.at("bias")) phrases.push_back(split_words(b.get<std::string>()));
    ex.bias = make_bias_set(phrases, vocab);
    ex.label = j.at("label").get<int>();
    if (ex.label < 0 || ex.label > ex.bias.size())
      fail("data: " + ex.id + " label " + std::to_string(ex.label) + " out of range");
    if (j.contains("set_type")) ex.set_type = j.at("set_type").get<std::string>();
    if (j.contains("n_distractors")) ex.n_distractors = j.at("n_distractors").get<int>();
    if (j.contains("entity")) {
      const std::string e = j.at("entity").get<std::string>();
      if (!e.empty()) ex.entity = split_words(e);
    }
    if (j.contains("distractors"))
      for (const auto& d : j.at("distractors")) ex.distractors.push_back(split_words(d.get<std::string>()));
    out.push_back(std::move(ex));
  }
  if (out.empty()) fail("data: " + path + " contains no examples");
  return out;
}

std::vector<TextSentence> load_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("data: cannot open " + path);
  std::vector<TextSentence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail("data: " + path + ":" + std::to_string(line_no) + " invalid JSON: " + e.what());
    }
    TextSentence s;
    s.id = j.at("id").get<std::string>();
    s.words = j.at("words").get<std::vector<std::string>>();
    if (s.words.empty()) fail("data: " + path + ":" + std::to_string(line_no) + " empty sentence");
    // Reject out-of-inventory characters up front.
    text_to_phonemes(s.words);
    out.push_back(std::move(s));
  }
  if (out.empty()) fail("data: " + path + " contains no sentences");
  return out;
}

BiasSet test_bias_at(const PairedExample& ex, int k, const WordpieceVocab& vocab, int* label_out) {
  if (k < 0) fail("eval: negative distractor count");
  if (k > static_cast<int>(ex.distractors.size()))
    fail("eval: " + ex.id + " stores only " + std::to_string(ex.distractors.size()) +
         " distractors, requested " + std::to_string(k));
  std::vector<std::vector<std::string>> phrases(ex.distractors.begin(), ex.distractors.begin() + k);
  if (k > 0 && !ex.entity.empty()) {
    // Deterministic slot for the true phrase, varying across utterances.
    std::uint64_t h = Rng::mix(std::hash<std::string>{}(ex.id), static_cast<std::uint64_t>(k));
    const int pos = static_cast<int>(h % static_cast<std::uint64_t>(k + 1));
    phrases.insert(phrases.begin() + pos, ex.entity);
  }
  BiasSet set = make_bias_set(phrases, vocab);
  if (label_out) *label_out = assign_retrieval_label(ex.words, set);
  return set;
}

}  // namespace ctxasr
