#include "doctest.h"

#include <filesystem>

#include "nabu/config.hpp"
#include "nabu/manifest.hpp"

using namespace nabu;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("defaults follow the full-scale settings") {
  RunConfig cfg;
  CHECK(cfg.model.embedding_size == 256);
  CHECK(cfg.model.hidden_size == 256);
  CHECK(cfg.model.heads == 8);
  CHECK(cfg.model.encoder_layers == 6);
  CHECK(cfg.model.decoder_layers == 6);
  CHECK(cfg.model.dropout == Real(0.3));
  CHECK(cfg.train.batch_size == 32);
  CHECK(cfg.train.lr == Real(0.001));
  CHECK(cfg.train.beam_size == 5);
  CHECK(cfg.model.head_size() == 32);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("key=value parsing") {
  auto cfg = RunConfig::parse(
      "# desk run\n"
      "dims = 64\n"
      "heads=2\n"
      "layers=2\n"
      "languages=ENG,GER\n"
      "task=bi\n"
      "encoder=linearized-transformer\n"
      "graph_attention=gcn\n"
      "copy=false\n"
      "train_files=a.txt, b.txt\n");
  CHECK(cfg.model.embedding_size == 64);
  CHECK(cfg.model.hidden_size == 64);
  CHECK(cfg.model.encoder_layers == 2);
  CHECK(cfg.model.languages == std::vector<Language>{Language::Eng, Language::Ger});
  CHECK(cfg.train.task == Task::Bi);
  CHECK(cfg.model.encoder == EncoderKind::LinearizedTransformer);
  CHECK(cfg.model.graph_attention == GraphAttention::Uniform);
  CHECK(!cfg.train.copy);
  CHECK(cfg.train.train_files == std::vector<std::string>{"a.txt", "b.txt"});
  CHECK_NOTHROW(cfg.validate());
  CHECK(RunConfig::parse(cfg.to_text()).to_text() == cfg.to_text());
}

TEST_CASE("bad config is refused") {
  CHECK_THROWS_AS(RunConfig::parse("bogus=1"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("heads"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("heads=two"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("dropout=1.0").validate(), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("heads=3").validate(), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("embedding_size=32").validate(), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("task=mono").validate(), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("encoder=rnn"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load(temp_path("nabu_no_such_config.cfg")), IoError);
}

TEST_CASE("architecture hash covers model settings only") {
  auto a = desk_config();
  auto b = desk_config();
  CHECK(a.model.hash() == b.model.hash());
  b.train.lr = Real(0.5);
  CHECK(a.model.hash() == b.model.hash());
  b.model.vocab_size = 801;
  CHECK(a.model.hash() != b.model.hash());
}

TEST_CASE("run manifest") {
  const auto in = temp_path("nabu_manifest_in.txt");
  const auto out = temp_path("nabu_manifest_out.txt");
  write_file(in, "hello\n");
  write_file(out, "world\n");
  RunManifest m;
  m.command = "train";
  m.seed = 7;
  m.config = desk_config().to_text();
  m.add_input(in);
  m.add_output(out);
  auto back = RunManifest::from_json(m.to_json());
  CHECK(back.command == "train");
  CHECK(back.seed == 7);
  CHECK(back.config == m.config);
  CHECK(back.inputs == m.inputs);
  CHECK(back.outputs == m.outputs);
  CHECK(back.tool_version == kToolVersion);
  CHECK_NOTHROW(back.verify());

  write_file(out, "changed\n");
  CHECK_THROWS_AS(back.verify(), ManifestMismatch);
  std::filesystem::remove(out);
  CHECK_THROWS_AS(back.verify(), ManifestMismatch);
  std::filesystem::remove(in);
  CHECK_THROWS_AS(file_hash(temp_path("nabu_manifest_missing")), IoError);
}
