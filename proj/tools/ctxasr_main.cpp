// Command-line surface over the engine: corpus generation, the two training
// stages, the evaluation sweep, batch decoding, and the gradient self-check.
// Every failure path exits nonzero with a single "error: ..." line on stderr.
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctxasr/checkpoint.hpp"
#include "ctxasr/config.hpp"
#include "ctxasr/data.hpp"
#include "ctxasr/decoding.hpp"
#include "ctxasr/losses.hpp"
#include "ctxasr/train.hpp"
#include "json.hpp"

namespace {

using ctxasr::fail;

int run_gen_data(const std::string& spec_path, const std::string& out_dir) {
  ctxasr::CorpusSpec spec = ctxasr::CorpusSpec::load(spec_path);
  ctxasr::generate_corpus(spec, out_dir);
  std::cout << "gen-data: wrote corpus (" << spec.n_paired << " paired, " << spec.n_text
            << " text) to " << out_dir << '\n';
  return 0;
}

int finish_training(const ctxasr::TrainResult& result, const std::string& stage) {
  if (result.diverged) {
    std::cerr << "error: " << stage << ": loss diverged at step " << result.steps_run + 1
              << "; last good checkpoint: " << result.last_checkpoint << '\n';
    return 2;
  }
  std::cout << stage << ": finished " << result.steps_run << " steps; best val WER "
            << std::fixed << std::setprecision(2) << result.best_val_wer << "% at step "
            << result.best_step << '\n';
  std::cout << stage << ": best checkpoint " << result.best_checkpoint << '\n';
  std::cout << stage << ": last checkpoint " << result.last_checkpoint << '\n';
  return 0;
}

int run_train(const std::string& config_path, const std::string& mode,
              const std::string& out_dir, const std::string& resume) {
  ctxasr::EngineConfig cfg = ctxasr::load_config(config_path);
  return finish_training(
      ctxasr::train_cti(cfg, ctxasr::parse_train_mode(mode), out_dir, resume), "train");
}

int run_train_mwer(const std::string& config_path, const std::string& mode,
                   const std::string& init, const std::string& out_dir,
                   const std::string& resume) {
  ctxasr::EngineConfig cfg = ctxasr::load_config(config_path);
  return finish_training(
      ctxasr::train_mwer(cfg, ctxasr::parse_mwer_mode(mode), init, out_dir, resume),
      "train-mwer");
}

std::vector<ctxasr::PairedExample> load_test_sets(const std::string& dir,
                                                  const ctxasr::WordpieceVocab& vocab) {
  std::vector<ctxasr::PairedExample> tests;
  for (const char* name : {"test_no_pre.jsonl", "test_pre.jsonl", "test_anti.jsonl"}) {
    const std::string path = dir + "/" + name;
    std::ifstream probe(path);
    if (!probe) fail("eval: missing test set " + path);
    probe.close();
    auto rows = ctxasr::load_paired(path, vocab);
    tests.insert(tests.end(), rows.begin(), rows.end());
  }
  return tests;
}

int run_eval(const std::string& ckpt_path, const std::string& tests_dir,
             const std::vector<int>& distractors, const std::string& out_csv, int threads) {
  ctxasr::Checkpoint ckpt = ctxasr::read_checkpoint(ckpt_path);
  ctxasr::Model model = ctxasr::restore_model(ckpt);
  auto tests = load_test_sets(tests_dir, ckpt.vocab);
  auto cells = ctxasr::evaluate(model, ckpt.vocab, tests, distractors,
                                model.config().lambda_c_infer, threads);
  std::ofstream out(out_csv);
  if (!out) fail("eval: cannot write " + out_csv);
  out << ctxasr::eval_csv(cells);
  out.close();
  if (!out) fail("eval: write to " + out_csv + " failed");
  std::cout << ctxasr::eval_table(cells);
  std::cout << "eval: wrote " << out_csv << '\n';
  return 0;
}

int run_decode(const std::string& ckpt_path, const std::string& input_path) {
  ctxasr::Checkpoint ckpt = ctxasr::read_checkpoint(ckpt_path);
  ctxasr::Model model = ctxasr::restore_model(ckpt);
  const ctxasr::ModelConfig& cfg = model.config();
  auto utterances = ctxasr::load_paired(input_path, ckpt.vocab);
  for (const auto& ex : utterances) {
    ctxasr::DecodeResult res =
        ctxasr::decode_utterance(ex, model, cfg, ckpt.vocab, cfg.lambda_c_infer, cfg.nbest);
    nlohmann::json line;
    line["id"] = ex.id;
    std::string hyp;
    for (const auto& w : res.best.words) hyp += (hyp.empty() ? "" : " ") + w;
    line["hypothesis"] = hyp;
    line["log_prob"] = res.best.log_prob;
    std::string ref;
    for (const auto& w : ex.words) ref += (ref.empty() ? "" : " ") + w;
    line["reference"] = ref;
    line["word_errors"] = ctxasr::edit_distance_words(res.best.words, ex.words);
    nlohmann::json nbest = nlohmann::json::array();
    for (const auto& hypo : res.nbest) {
      std::string text;
      for (const auto& w : hypo.words) text += (text.empty() ? "" : " ") + w;
      nbest.push_back({{"text", text}, {"log_prob", hypo.log_prob}});
    }
    line["nbest"] = nbest;
    std::cout << line.dump() << '\n';
  }
  return 0;
}

int run_gradcheck(const std::string& config_path) {
  const double tol = 1e-4;
  ctxasr::FullGradCheck res = ctxasr::run_full_gradcheck(ctxasr::load_config(config_path));
  auto report = [&](const char* name, const ctxasr::GradCheckReport& r) {
    std::cout << name << ": max_rel_err=" << std::scientific << std::setprecision(3)
              << r.max_rel_err << " over " << r.checked << " elements (worst " << r.worst_param
              << "[" << r.worst_index << "] analytic=" << r.worst_analytic
              << " numeric=" << r.worst_numeric << ") "
              << (r.ok(tol) ? "PASS" : "FAIL") << '\n';
  };
  report("cti_loss", res.cti);
  report("cti_mwer_loss", res.cti_mwer);
  std::cout << "gradcheck: " << std::fixed << std::setprecision(1) << res.seconds << "s\n";
  if (!res.ok(tol)) {
    std::cerr << "error: gradcheck: max relative error exceeds " << tol << '\n';
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contextual ASR training and evaluation engine"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  std::string gen_spec, gen_out;
  gen->add_option("--spec", gen_spec, "corpus spec JSON")->required();
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* train = app.add_subcommand("train", "stage-1 training from scratch");
  std::string train_config, train_mode, train_out, train_resume;
  train->add_option("--config", train_config, "engine config JSON")->required();
  train->add_option("--mode", train_mode, "sup_only | joist | cti")->required();
  train->add_option("--out", train_out, "checkpoint directory")->required();
  train->add_option("--resume", train_resume, "checkpoint to continue from");

  auto* mwer = app.add_subcommand("train-mwer", "stage-2 fine-tuning");
  std::string mwer_config, mwer_mode, mwer_init, mwer_out, mwer_resume;
  mwer->add_option("--config", mwer_config, "engine config JSON")->required();
  mwer->add_option("--init", mwer_init, "stage-1 checkpoint")->required();
  mwer->add_option("--mode", mwer_mode, "mwer | joist_mwer | cti_mwer")->required();
  mwer->add_option("--out", mwer_out, "checkpoint directory")->required();
  mwer->add_option("--resume", mwer_resume, "checkpoint to continue from");

  auto* eval = app.add_subcommand("eval", "distractor sweep over the test sets");
  std::string eval_ckpt, eval_tests, eval_out;
  std::vector<int> eval_distractors;
  int eval_threads = 0;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--tests", eval_tests, "directory with test_{no_pre,pre,anti}.jsonl")
      ->required();
  eval->add_option("--distractors", eval_distractors, "distractor counts, e.g. 4,8,16,32,64")
      ->delimiter(',');
  eval->add_option("--out", eval_out, "results CSV path")->required();
  eval->add_option("--threads", eval_threads, "decode workers (0 = hardware)");

  auto* decode = app.add_subcommand("decode", "decode a JSONL utterance file");
  std::string decode_ckpt, decode_input;
  decode->add_option("--ckpt", decode_ckpt, "checkpoint file")->required();
  decode->add_option("--input", decode_input, "utterances in the paired JSONL format")
      ->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "full finite-difference gradient check");
  std::string gradcheck_config;
  gradcheck->add_option("--config", gradcheck_config, "engine config JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_data(gen_spec, gen_out);
    if (train->parsed()) return run_train(train_config, train_mode, train_out, train_resume);
    if (mwer->parsed())
      return run_train_mwer(mwer_config, mwer_mode, mwer_init, mwer_out, mwer_resume);
    if (eval->parsed())
      return run_eval(eval_ckpt, eval_tests, eval_distractors, eval_out, eval_threads);
    if (decode->parsed()) return run_decode(decode_ckpt, decode_input);
    if (gradcheck->parsed()) return run_gradcheck(gradcheck_config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
