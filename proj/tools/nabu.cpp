// nabu: corpus preparation, tokenizer training, model training, generation and scoring.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "nabu/decoding.hpp"
#include "nabu/manifest.hpp"
#include "nabu/metrics.hpp"
#include "nabu/synthetic.hpp"
#include "nabu/training.hpp"

namespace fs = std::filesystem;
using namespace nabu;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string manifest;
};

std::string data_root() {
  const char* env = std::getenv("NABU_DATA_DIR");
  return env && *env ? env : "data";
}

RunConfig load_config(const Globals& g) {
  RunConfig cfg;
  if (!g.manifest.empty()) {
    auto m = RunManifest::load(g.manifest);
    m.verify();
    if (!m.config.empty()) cfg = RunConfig::parse(m.config);
    if (!g.seed) cfg.train.seed = m.seed ? m.seed : cfg.train.seed;
  }
  if (!g.config.empty()) cfg = RunConfig::load(g.config);
  if (g.seed) cfg.train.seed = *g.seed;
  return cfg;
}

std::vector<GraphRecord> read_records(const std::string& path) {
  try {
    return parse_triple_file(read_file(path));
  } catch (const MalformedTriple& e) {
    throw MalformedTriple(e.line(), "in " + path + ": " + e.what());
  }
}

void write_records(const std::string& path, const std::vector<GraphRecord>& records) {
  write_file(path, format_triple_file(records));
}

std::string lang_file(const std::string& dir, Language l, const std::string& suffix) {
  return (fs::path(dir) / (std::string(language_code(l)) + suffix)).string();
}

std::vector<std::string> tokenizer_corpus(const std::vector<GraphRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) {
    for (const auto& t : r.texts) out.push_back(t);
    if (r.triples.empty()) continue;
    auto g = reify(r.triples, r.language);
    for (const auto& words : node_feature_labels(g)) {
      for (const auto& w : words) out.push_back(w);
    }
  }
  return out;
}

// --- synth -------------------------------------------------------------------

int cmd_synth(const Globals& g, std::size_t graphs, std::string out) {
  if (out.empty()) out = data_root();
  fs::create_directories(out);
  const auto seed = g.seed.value_or(1);
  auto records = synthetic_corpus(graphs, seed);
  RunManifest m;
  m.command = "synth";
  m.seed = seed;
  for (auto l : kAllLanguages) {
    std::vector<GraphRecord> part;
    for (const auto& r : records) {
      if (r.language == l) part.push_back(r);
    }
    const auto path = lang_file(out, l, ".txt");
    write_records(path, part);
    m.add_output(path);
  }
  m.save((fs::path(out) / "synth.manifest.json").string());
  std::cout << "wrote " << records.size() << " records to " << out << "\n";
  return 0;
}

// --- prepare -----------------------------------------------------------------

int cmd_prepare(const Globals& g, std::string data, std::string out, std::string task_s, std::string langs_s,
                std::size_t k) {
  auto cfg = load_config(g);
  if (data.empty()) data = data_root();
  if (out.empty()) out = (fs::path(data) / "prepared").string();
  const Task task = task_s.empty() ? cfg.train.task : parse_task(task_s);
  auto langs = langs_s.empty() ? cfg.model.languages : parse_language_list(langs_s);
  if (langs.size() != task_language_count(task)) {
    throw ConfigError("task " + std::string(task_name(task)) + " needs " + std::to_string(task_language_count(task)) +
                      " language(s)");
  }
  fs::create_directories(out);
  RunManifest m;
  m.command = "prepare";
  m.seed = cfg.train.seed;
  m.config = cfg.to_text();
  std::vector<GraphRecord> merged;
  for (auto l : langs) {
    std::vector<GraphRecord> train, dev, test;
    const auto test_path = lang_file(data, l, ".test.txt");
    const auto train_path = fs::exists(lang_file(data, l, ".train.txt")) ? lang_file(data, l, ".train.txt")
                                                                          : lang_file(data, l, ".txt");
    if (!fs::exists(train_path)) {
      throw MissingLanguageData("no data for " + std::string(language_code(l)) + " (expected " + train_path + ")");
    }
    auto records = read_records(train_path);
    m.add_input(train_path);
    if (fs::exists(test_path)) {
      train = std::move(records);
      test = read_records(test_path);
      m.add_input(test_path);
      const auto dev_path = lang_file(data, l, ".dev.txt");
      if (fs::exists(dev_path)) {
        dev = read_records(dev_path);
        m.add_input(dev_path);
      }
    } else {
      // No test split shipped: carve test (fold 0) and dev (fold 1, when k >= 3) by k-fold.
      auto fold = kfold_assignment(records.size(), k, cfg.train.seed);
      for (std::size_t i = 0; i < records.size(); ++i) {
        if (fold[i] == 0 && k > 1) test.push_back(records[i]);
        else if (fold[i] == 1 && k >= 3) dev.push_back(records[i]);
        else train.push_back(records[i]);
      }
    }
    if (train.empty()) throw MissingLanguageData("empty training split for " + std::string(language_code(l)));
    for (auto& [suffix, part] : {std::pair{".train.txt", &train}, {".dev.txt", &dev}, {".test.txt", &test}}) {
      const auto path = lang_file(out, l, suffix);
      write_records(path, *part);
      m.add_output(path);
    }
    merged.insert(merged.end(), train.begin(), train.end());
  }
  if (task == Task::Multi) {
    std::vector<GraphRecord> shuffled;
    for (auto i : shuffled_order(merged.size(), cfg.train.seed)) shuffled.push_back(merged[i]);
    const auto path = (fs::path(out) / "train.multi.txt").string();
    write_records(path, shuffled);
    m.add_output(path);
  }
  m.save((fs::path(out) / "prepare.manifest.json").string());
  std::cout << "prepared " << langs.size() << " language(s) in " << out << "\n";
  return 0;
}

// --- train-tokenizer -----------------------------------------------------------

int cmd_train_tokenizer(const Globals& g, const std::vector<std::string>& inputs, std::size_t size, std::string out) {
  auto cfg = load_config(g);
  if (size == 0) size = cfg.train.bpe_size;
  if (out.empty()) out = "vocab.txt";
  std::vector<GraphRecord> records;
  RunManifest m;
  m.command = "train-tokenizer";
  m.seed = cfg.train.seed;
  for (const auto& in : inputs) {
    auto r = read_records(in);
    records.insert(records.end(), r.begin(), r.end());
    m.add_input(in);
  }
  auto vocab = train_bpe(tokenizer_corpus(records), size);
  vocab.save(out);
  m.add_output(out);
  m.vocab_hash = hex64(vocab.hash());
  m.save(out + ".manifest.json");
  std::cout << "vocabulary of " << vocab.size() << " entries written to " << out << "\n";
  return 0;
}

// --- train ---------------------------------------------------------------------

struct TrainFlags {
  std::string encoder;
  std::vector<std::string> files;
  std::string vocab;
  std::string out;
  std::string log;
  std::optional<std::size_t> epochs;
};

int cmd_train(const Globals& g, const TrainFlags& f) {
  auto cfg = load_config(g);
  if (!f.encoder.empty()) cfg.model.encoder = parse_encoder(f.encoder);
  if (!f.files.empty()) cfg.train.train_files = f.files;
  if (!f.vocab.empty()) cfg.train.vocab = f.vocab;
  if (!f.out.empty()) cfg.train.checkpoint = f.out;
  if (!f.log.empty()) cfg.train.log = f.log;
  if (f.epochs) cfg.train.epochs = *f.epochs;
  if (cfg.train.train_files.empty()) throw ConfigError("no train_files configured");

  RunManifest m;
  m.command = "train";
  m.seed = cfg.train.seed;
  std::vector<GraphRecord> records;
  for (const auto& in : cfg.train.train_files) {
    auto r = read_records(in);
    records.insert(records.end(), r.begin(), r.end());
    m.add_input(in);
  }
  Vocabulary vocab;
  if (!cfg.train.vocab.empty() && fs::exists(cfg.train.vocab)) {
    vocab = Vocabulary::load(cfg.train.vocab);
    m.add_input(cfg.train.vocab);
  } else {
    vocab = train_bpe(tokenizer_corpus(records), cfg.train.bpe_size);
    if (cfg.train.vocab.empty()) cfg.train.vocab = cfg.train.checkpoint + ".vocab";
    vocab.save(cfg.train.vocab);
    m.add_output(cfg.train.vocab);
  }
  cfg.model.vocab_size = vocab.size();
  cfg.validate();
  m.config = cfg.to_text();
  m.vocab_hash = hex64(vocab.hash());

  auto corpus = build_corpus(records, cfg.model.languages, cfg.model.predicate_nodes, cfg.train.seed);
  Model model(cfg.model, cfg.train.seed);
  Trainer trainer(model, vocab, cfg.train);
  std::ofstream log(cfg.train.log, std::ios::trunc);
  if (!log) throw IoError("cannot write " + cfg.train.log);
  write_log_header(log);
  try {
    trainer.fit(corpus, [&](const EpochMetrics& e) {
      write_log_row(log, e);
      log.flush();
      std::cerr << "epoch " << e.epoch << " loss " << e.mean_loss << " acc " << e.token_acc;
      if (e.train_bleu >= 0) std::cerr << " train_bleu " << e.train_bleu;
      std::cerr << "\n";
    });
  } catch (const NonFiniteGradient&) {
    // adam_step refused the update, so the parameters are still the last good ones.
    save_checkpoint(cfg.train.checkpoint, model, vocab);
    std::cerr << "last good parameters written to " << cfg.train.checkpoint << "\n";
    throw;
  }
  log.close();
  save_checkpoint(cfg.train.checkpoint, model, vocab);
  m.checkpoint = cfg.train.checkpoint;
  m.add_output(cfg.train.checkpoint);
  m.save(cfg.train.checkpoint + ".manifest.json");
  std::cout << "checkpoint written to " << cfg.train.checkpoint << "\n";
  return 0;
}

// --- generate --------------------------------------------------------------------

struct GenerateFlags {
  std::string checkpoint;
  std::string input;
  std::string out;
  std::string lang;
  std::size_t beam = 0;
  bool jsonl = false;
  bool no_copy = false;
  std::string attention;
};

int cmd_generate(const Globals& g, const GenerateFlags& f) {
  auto cfg = load_config(g);
  auto ck = load_checkpoint(f.checkpoint);
  std::optional<Language> override_lang;
  if (!f.lang.empty()) {
    override_lang = parse_language(f.lang);
    bool ok = false;
    for (auto l : ck.model.languages) ok = ok || l == *override_lang;
    if (!ok) {
      throw GenerationRefused("model was not trained for language " + std::string(language_code(*override_lang)));
    }
  }
  Model model(ck.model, std::move(ck.params));
  BeamConfig bc{f.beam ? f.beam : cfg.train.beam_size, ck.model.max_decode_len, cfg.train.length_penalty};
  const bool copy = cfg.train.copy && !f.no_copy;

  auto records = read_records(f.input);
  std::ostringstream out, attention;
  for (const auto& rec : records) {
    auto graph = reify(rec.triples, override_lang.value_or(rec.language), ck.model.predicate_nodes);
    auto gen = generate(model, ck.vocab, graph, bc, copy);
    if (f.jsonl) {
      nlohmann::ordered_json j;
      j["id"] = rec.id;
      j["text"] = gen.text;
      j["score"] = gen.score;
      auto copies = nlohmann::json::array();
      for (const auto& c : gen.copies) {
        copies.push_back({{"position", c.position}, {"node", c.node}, {"surface", c.surface}, {"stage", c.stage}});
      }
      j["copies"] = copies;
      out << j.dump() << '\n';
    } else {
      out << gen.text << '\n';
    }
    if (!f.attention.empty()) {
      auto src = model.prepare(graph, ck.vocab);
      attention << "## " << rec.id << '\n' << dump_attention(model.graph_attention(src), graph.nodes);
    }
  }
  if (f.out.empty()) {
    std::cout << out.str();
  } else {
    write_file(f.out, out.str());
    RunManifest m;
    m.command = "generate";
    m.seed = cfg.train.seed;
    m.config = cfg.to_text();
    m.checkpoint = f.checkpoint;
    m.vocab_hash = hex64(ck.vocab.hash());
    m.add_input(f.checkpoint);
    m.add_input(f.input);
    m.add_output(f.out);
    m.save(f.out + ".manifest.json");
  }
  if (!f.attention.empty()) write_file(f.attention, attention.str());
  return 0;
}

// --- score -------------------------------------------------------------------------

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

int cmd_score(const std::string& hyp, const std::vector<std::string>& refs, const std::string& ref_records,
              const std::string& per_segment, const std::string& out) {
  auto hyps = read_lines(hyp);
  std::vector<std::vector<std::string>> ref_sets;
  if (!ref_records.empty()) {
    for (const auto& r : read_records(ref_records)) ref_sets.push_back(r.texts);
  } else {
    if (refs.empty()) throw ConfigError("score needs --ref or --ref-records");
    for (const auto& path : refs) {
      auto lines = read_lines(path);
      if (ref_sets.empty()) ref_sets.resize(lines.size());
      if (lines.size() != ref_sets.size()) throw LengthMismatch("reference files differ in line count");
      for (std::size_t i = 0; i < lines.size(); ++i) ref_sets[i].push_back(lines[i]);
    }
  }
  auto report = score(hyps, ref_sets);
  if (!per_segment.empty()) write_file(per_segment, report.segments_csv());
  if (out.empty()) {
    std::cout << report.to_json();
    return 0;
  }
  write_file(out, report.to_json());
  RunManifest m;
  m.command = "score";
  m.add_input(hyp);
  for (const auto& r : refs) m.add_input(r);
  if (!ref_records.empty()) m.add_input(ref_records);
  m.add_output(out);
  if (!per_segment.empty()) m.add_output(per_segment);
  m.save(out + ".manifest.json");
  return 0;
}

// --- reify ---------------------------------------------------------------------------

int cmd_reify(const std::string& input, bool shared, const std::string& lang, const std::string& out) {
  const auto text = read_file(input);
  const auto mode = shared ? PredicateNodes::Shared : PredicateNodes::PerOccurrence;
  std::ostringstream os;
  if (text.rfind("lang=", 0) == 0) {
    for (const auto& rec : read_records(input)) {
      if (!rec.id.empty()) os << "# " << rec.id << '\n';
      os << dump_graph(reify(rec.triples, rec.language, mode)) << '\n';
    }
  } else {
    os << dump_graph(reify(parse_triples(text), parse_language(lang), mode));
  }
  if (out.empty()) {
    std::cout << os.str();
    return 0;
  }
  write_file(out, os.str());
  RunManifest m;
  m.command = "reify";
  m.add_input(input);
  m.add_output(out);
  m.save(out + ".manifest.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nabu: multilingual graph-to-text verbalizer"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 1;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed");
  app.add_option("--config", g.config, "Config file (key=value)");
  app.add_option("--manifest", g.manifest, "Manifest to verify and take the config from");

  std::size_t graphs = 50;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Write the bundled synthetic corpus");
  synth->add_option("--graphs", graphs, "Number of graphs");
  synth->add_option("--out", synth_out, "Output directory (default $NABU_DATA_DIR)");

  std::string prep_data, prep_out, prep_task, prep_langs;
  std::size_t k_fold = 10;
  auto* prepare = app.add_subcommand("prepare", "Split raw per-language files into train/dev/test");
  prepare->add_option("--data", prep_data, "Raw data directory (default $NABU_DATA_DIR)");
  prepare->add_option("--out", prep_out, "Output directory");
  prepare->add_option("--task", prep_task, "mono | bi | multi");
  prepare->add_option("--languages", prep_langs, "Comma-separated language codes");
  prepare->add_option("--k-fold", k_fold, "Folds for languages without a test split");

  std::vector<std::string> tok_inputs;
  std::size_t tok_size = 0;
  std::string tok_out;
  auto* tok = app.add_subcommand("train-tokenizer", "Learn a BPE vocabulary");
  tok->add_option("--input", tok_inputs, "Triple files")->required();
  tok->add_option("--size", tok_size, "Target vocabulary size");
  tok->add_option("--out", tok_out, "Vocabulary file");

  TrainFlags tf;
  std::size_t epochs = 0;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--encoder", tf.encoder, "gat | linearized-transformer");
  train->add_option("--train", tf.files, "Training triple files");
  train->add_option("--vocab", tf.vocab, "Vocabulary file");
  train->add_option("--out", tf.out, "Checkpoint path");
  train->add_option("--log", tf.log, "CSV training log");
  auto* epochs_opt = train->add_option("--epochs", epochs, "Epoch budget");

  GenerateFlags gf;
  auto* gen = app.add_subcommand("generate", "Verbalize graphs with a trained model");
  gen->add_option("--checkpoint", gf.checkpoint, "Checkpoint")->required();
  gen->add_option("--input", gf.input, "Triple file")->required();
  gen->add_option("--out", gf.out, "Output text file (default stdout)");
  gen->add_option("--lang", gf.lang, "Force the output language");
  gen->add_option("--beam", gf.beam, "Beam size");
  gen->add_flag("--jsonl", gf.jsonl, "Emit {text, score, copies} JSON lines");
  gen->add_flag("--no-copy", gf.no_copy, "Disable UNK copying");
  gen->add_option("--attention", gf.attention, "Write GAT attention coefficients here");

  std::string hyp, ref_records, per_segment, score_out;
  std::vector<std::string> refs;
  auto* sc = app.add_subcommand("score", "BLEU and chrF++ of hypotheses against references");
  sc->add_option("--hyp", hyp, "Hypothesis file, one segment per line")->required();
  sc->add_option("--ref", refs, "Reference file(s), line-aligned");
  sc->add_option("--ref-records", ref_records, "Triple file whose text= lines are the references");
  sc->add_option("--per-segment", per_segment, "Per-segment CSV output");
  sc->add_option("--out", score_out, "JSON report (default stdout)");

  std::string reify_in, reify_lang = "ENG", reify_out;
  bool shared = false;
  auto* rf = app.add_subcommand("reify", "Dump the reified graph of a triple file");
  rf->add_option("--input", reify_in, "Triple file")->required();
  rf->add_option("--lang", reify_lang, "Language of plain triple lists");
  rf->add_flag("--shared-predicates", shared, "One node per predicate name");
  rf->add_option("--out", reify_out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (seed_opt->count()) g.seed = seed;
  if (epochs_opt->count()) tf.epochs = epochs;

  try {
    if (*synth) return cmd_synth(g, graphs, synth_out);
    if (*prepare) return cmd_prepare(g, prep_data, prep_out, prep_task, prep_langs, k_fold);
    if (*tok) return cmd_train_tokenizer(g, tok_inputs, tok_size, tok_out);
    if (*train) return cmd_train(g, tf);
    if (*gen) return cmd_generate(g, gf);
    if (*sc) return cmd_score(hyp, refs, ref_records, per_segment, score_out);
    if (*rf) return cmd_reify(reify_in, shared, reify_lang, reify_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorCode::Generic);
  }
  return 0;
}
