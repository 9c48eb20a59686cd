#include "nabu/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace nabu {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + std::string(key) + "' expects an unsigned integer, got '" + std::string(v) + "'");
  }
  return out;
}

Real to_real(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    double d = std::stod(std::string(v), &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return static_cast<Real>(d);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  }
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config key '" + std::string(key) + "' expects true/false");
}

std::vector<std::string> to_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    auto comma = v.find(',', start);
    auto item = trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

std::string languages_text(const std::vector<Language>& langs) {
  std::vector<std::string> s;
  for (auto l : langs) s.emplace_back(language_code(l));
  return join(s);
}

std::string real_text(Real r) {
  std::ostringstream os;
  os.precision(9);
  os << static_cast<double>(r);
  return os.str();
}

}  // namespace

std::string_view encoder_name(EncoderKind e) {
  return e == EncoderKind::Gat ? "gat" : "linearized-transformer";
}

EncoderKind parse_encoder(std::string_view s) {
  if (s == "gat") return EncoderKind::Gat;
  if (s == "linearized-transformer" || s == "transformer") return EncoderKind::LinearizedTransformer;
  throw ConfigError("unknown encoder '" + std::string(s) + "' (gat | linearized-transformer)");
}

std::string_view task_name(Task t) {
  switch (t) {
    case Task::Mono: return "mono";
    case Task::Bi: return "bi";
    case Task::Multi: return "multi";
  }
  return "multi";
}

Task parse_task(std::string_view s) {
  if (s == "mono") return Task::Mono;
  if (s == "bi") return Task::Bi;
  if (s == "multi") return Task::Multi;
  throw ConfigError("unknown task '" + std::string(s) + "' (mono | bi | multi)");
}

std::size_t task_language_count(Task t) {
  switch (t) {
    case Task::Mono: return 1;
    case Task::Bi: return 2;
    case Task::Multi: return 3;
  }
  return 3;
}

void ModelConfig::validate() const {
  if (embedding_size == 0 || hidden_size == 0 || vocab_size == 0) throw ConfigError("model dimensions must be positive");
  if (embedding_size != hidden_size) throw ConfigError("embedding_size must equal hidden_size");
  if (heads == 0 || hidden_size % heads != 0) throw ConfigError("hidden_size must be divisible by heads");
  if (encoder_layers == 0 || decoder_layers == 0) throw ConfigError("layer counts must be >= 1");
  if (ffn_size == 0 || max_decode_len == 0) throw ConfigError("ffn_size and max_decode_len must be >= 1");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
  if (languages.empty()) throw ConfigError("at least one language is required");
}

bool ModelConfig::supports(Language lang) const {
  for (auto l : languages) {
    if (l == lang) return true;
  }
  return false;
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "embedding_size=" << embedding_size << '\n'
     << "hidden_size=" << hidden_size << '\n'
     << "vocab_size=" << vocab_size << '\n'
     << "heads=" << heads << '\n'
     << "encoder_layers=" << encoder_layers << '\n'
     << "decoder_layers=" << decoder_layers << '\n'
     << "ffn_size=" << ffn_size << '\n'
     << "max_decode_len=" << max_decode_len << '\n'
     << "encoder=" << encoder_name(encoder) << '\n'
     << "graph_attention=" << (graph_attention == GraphAttention::Learned ? "gat" : "gcn") << '\n'
     << "edge_aggregation=" << (edge_aggregation == EdgeAggregation::Mean ? "mean" : "sum") << '\n'
     << "predicate_nodes=" << (predicate_nodes == PredicateNodes::PerOccurrence ? "per-occurrence" : "shared") << '\n'
     << "languages=" << languages_text(languages) << '\n';
  return os.str();
}

void TrainConfig::validate(const ModelConfig& model) const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (beam_size == 0) throw ConfigError("beam_size must be >= 1");
  if (model.languages.size() != task_language_count(task)) {
    throw ConfigError("task '" + std::string(task_name(task)) + "' needs " + std::to_string(task_language_count(task)) +
                      " language(s), got " + std::to_string(model.languages.size()));
  }
}

bool RunConfig::set(std::string_view key, std::string_view value) {
  auto& m = model;
  auto& t = train;
  if (key == "embedding_size") m.embedding_size = to_size(key, value);
  else if (key == "hidden_size") m.hidden_size = to_size(key, value);
  else if (key == "dims") m.embedding_size = m.hidden_size = to_size(key, value);
  else if (key == "vocab_size") m.vocab_size = to_size(key, value);
  else if (key == "heads") m.heads = to_size(key, value);
  else if (key == "layers") m.encoder_layers = m.decoder_layers = to_size(key, value);
  else if (key == "encoder_layers") m.encoder_layers = to_size(key, value);
  else if (key == "decoder_layers") m.decoder_layers = to_size(key, value);
  else if (key == "ffn_size") m.ffn_size = to_size(key, value);
  else if (key == "max_decode_len") m.max_decode_len = to_size(key, value);
  else if (key == "dropout") m.dropout = to_real(key, value);
  else if (key == "encoder") m.encoder = parse_encoder(value);
  else if (key == "graph_attention") {
    if (value == "gat") m.graph_attention = GraphAttention::Learned;
    else if (value == "gcn") m.graph_attention = GraphAttention::Uniform;
    else throw ConfigError("graph_attention must be gat or gcn");
  } else if (key == "edge_aggregation") {
    if (value == "mean") m.edge_aggregation = EdgeAggregation::Mean;
    else if (value == "sum") m.edge_aggregation = EdgeAggregation::Sum;
    else throw ConfigError("edge_aggregation must be mean or sum");
  } else if (key == "predicate_nodes") {
    if (value == "per-occurrence") m.predicate_nodes = PredicateNodes::PerOccurrence;
    else if (value == "shared") m.predicate_nodes = PredicateNodes::Shared;
    else throw ConfigError("predicate_nodes must be per-occurrence or shared");
  } else if (key == "languages") m.languages = parse_language_list(value);
  else if (key == "batch_size") t.batch_size = to_size(key, value);
  else if (key == "lr") t.lr = to_real(key, value);
  else if (key == "epochs") t.epochs = to_size(key, value);
  else if (key == "seed") t.seed = to_size(key, value);
  else if (key == "task") t.task = parse_task(value);
  else if (key == "grad_clip") t.grad_clip = to_real(key, value);
  else if (key == "warmup_steps") t.warmup_steps = to_size(key, value);
  else if (key == "beam_size") t.beam_size = to_size(key, value);
  else if (key == "length_penalty") t.length_penalty = to_real(key, value);
  else if (key == "copy") t.copy = to_bool(key, value);
  else if (key == "eval_every") t.eval_every = to_size(key, value);
  else if (key == "stop_at_train_bleu") t.stop_at_train_bleu = to_real(key, value);
  else if (key == "bpe_size") t.bpe_size = to_size(key, value);
  else if (key == "train_files") t.train_files = to_list(value);
  else if (key == "vocab") t.vocab = std::string(value);
  else if (key == "checkpoint") t.checkpoint = std::string(value);
  else if (key == "log") t.log = std::string(value);
  else return false;
  return true;
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    auto line = trim(text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    start = end == std::string_view::npos ? text.size() : end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (!cfg.set(key, value)) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << model.canonical() << "dropout=" << real_text(model.dropout) << '\n'
     << "batch_size=" << train.batch_size << '\n'
     << "lr=" << real_text(train.lr) << '\n'
     << "epochs=" << train.epochs << '\n'
     << "seed=" << train.seed << '\n'
     << "task=" << task_name(train.task) << '\n'
     << "grad_clip=" << real_text(train.grad_clip) << '\n'
     << "warmup_steps=" << train.warmup_steps << '\n'
     << "beam_size=" << train.beam_size << '\n'
     << "length_penalty=" << real_text(train.length_penalty) << '\n'
     << "copy=" << (train.copy ? "true" : "false") << '\n'
     << "eval_every=" << train.eval_every << '\n'
     << "stop_at_train_bleu=" << real_text(train.stop_at_train_bleu) << '\n'
     << "bpe_size=" << train.bpe_size << '\n'
     << "train_files=" << join(train.train_files) << '\n'
     << "vocab=" << train.vocab << '\n'
     << "checkpoint=" << train.checkpoint << '\n'
     << "log=" << train.log << '\n';
  return os.str();
}

void RunConfig::validate() const {
  model.validate();
  train.validate(model);
}

RunConfig desk_config() {
  RunConfig cfg;
  auto& m = cfg.model;
  m.embedding_size = m.hidden_size = 64;
  m.heads = 2;
  m.encoder_layers = m.decoder_layers = 2;
  m.ffn_size = 128;
  m.vocab_size = 800;
  m.dropout = Real(0.1);
  cfg.train.bpe_size = 800;
  cfg.train.batch_size = 8;
  cfg.train.epochs = 300;
  return cfg;
}

}  // namespace nabu
