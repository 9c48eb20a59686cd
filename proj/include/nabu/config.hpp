#pragma once

// Model and training hyperparameters, and the flat key=value config file.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nabu/common.hpp"
#include "nabu/graph.hpp"

namespace nabu {

enum class EncoderKind { Gat, LinearizedTransformer };
enum class GraphAttention { Learned, Uniform };  // Uniform = GCN-style constant 1/|N_i|
enum class EdgeAggregation { Mean, Sum };
enum class Task { Mono, Bi, Multi };

std::string_view encoder_name(EncoderKind e);
EncoderKind parse_encoder(std::string_view s);
std::string_view task_name(Task t);
Task parse_task(std::string_view s);
std::size_t task_language_count(Task t);

struct ModelConfig {
  std::size_t embedding_size = 256;  // m
  std::size_t hidden_size = 256;     // n
  std::size_t vocab_size = 4000;     // K
  std::size_t heads = 8;
  std::size_t encoder_layers = 6;
  std::size_t decoder_layers = 6;
  std::size_t ffn_size = 1024;
  std::size_t max_decode_len = 128;
  Real dropout = Real(0.3);
  EncoderKind encoder = EncoderKind::Gat;
  GraphAttention graph_attention = GraphAttention::Learned;
  EdgeAggregation edge_aggregation = EdgeAggregation::Mean;
  PredicateNodes predicate_nodes = PredicateNodes::PerOccurrence;
  std::vector<Language> languages{Language::Eng, Language::Ger, Language::Rus};

  void validate() const;
  std::size_t head_size() const { return hidden_size / heads; }
  bool supports(Language lang) const;
  /// Architecture-defining keys only, in a fixed order.
  std::string canonical() const;
  std::uint64_t hash() const { return fnv1a(canonical()); }
};

struct TrainConfig {
  std::size_t batch_size = 32;
  Real lr = Real(0.001);
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  Task task = Task::Multi;
  Real grad_clip = Real(1.0);
  std::size_t warmup_steps = 0;  // 0 = constant learning rate
  std::size_t beam_size = 5;
  Real length_penalty = Real(0.6);
  bool copy = true;
  std::size_t eval_every = 0;        // epochs between training-set evaluations, 0 = never
  Real stop_at_train_bleu = Real(0);  // early stop once training BLEU reaches this (0 = off)
  std::size_t bpe_size = 4000;
  std::vector<std::string> train_files;
  std::string vocab;
  std::string checkpoint = "model.ckpt";
  std::string log = "train_log.csv";

  void validate(const ModelConfig& model) const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  /// Parses key=value lines ('#' comments allowed). Unknown keys are ConfigError.
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::string& path);
  /// Applies one key; returns false if the key is unknown.
  bool set(std::string_view key, std::string_view value);
  std::string to_text() const;
  void validate() const;
};

/// Preset used by the desk-scale memorization experiments: m=n=64, 2 layers, 2 heads, vocab 800.
RunConfig desk_config();

}  // namespace nabu
