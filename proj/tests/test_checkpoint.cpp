#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "xlg/checkpoint.hpp"

using namespace xlg;

namespace {

ModelConfig ck_config() {
  ModelConfig c;
  c.enc_layers = 1;
  c.dec_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ffn = 12;
  c.max_positions = 10;
  c.vocab_size = 15;
  return c;
}

std::filesystem::path tmp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

}  // namespace

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("checkpoint round trip is exact and re-saving is byte-identical") {
  const Seq2SeqModel<float> m(ck_config(), 42);
  const auto p = tmp("xlg_ck_roundtrip.ckpt");
  const Json meta{{"stage", 2}, {"step", 17}};
  save_checkpoint(p, m, meta);
  Json got_meta;
  const auto back = load_checkpoint(p, &got_meta);
  CHECK(got_meta == meta);
  CHECK(back.config() == m.config());
  REQUIRE(back.params().size() == m.params().size());
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    CHECK(back.params()[i].name == m.params()[i].name);
    CHECK(back.params()[i].group == m.params()[i].group);
    CHECK(back.params()[i].value == m.params()[i].value);
  }
  const auto p2 = tmp("xlg_ck_roundtrip2.ckpt");
  save_checkpoint(p2, back, got_meta);
  CHECK(read_bytes(p) == read_bytes(p2));
  CHECK(sha256_file(p) == sha256_file(p2));
  CHECK(group_hashes(back) == group_hashes(m));
  std::filesystem::remove(p);
  std::filesystem::remove(p2);
}

TEST_CASE("group hashes change only for the touched group") {
  Seq2SeqModel<float> m(ck_config(), 1);
  const auto before = group_hashes(m);
  CHECK(before.size() == kAllGroups.size());
  m.params()[static_cast<std::size_t>(m.out_bias())].value(0, 0) += 1.0f;
  const auto after = group_hashes(m);
  for (ParamGroup g : kAllGroups) CHECK((before.at(g) == after.at(g)) == (g != ParamGroup::OutputHead));
}

TEST_CASE("corrupted checkpoints are rejected") {
  const Seq2SeqModel<float> m(ck_config(), 2);
  const auto p = tmp("xlg_ck_bad.ckpt");
  save_checkpoint(p, m);
  const std::string good = read_bytes(p);

  SUBCASE("bad magic") {
    std::string s = good;
    s[0] = 'Y';
    write_bytes(p, s);
    CHECK_THROWS_AS(load_checkpoint(p), CheckpointError);
  }
  SUBCASE("truncated data") {
    write_bytes(p, good.substr(0, good.size() - 3));
    CHECK_THROWS_AS(load_checkpoint(p), CheckpointError);
  }
  SUBCASE("trailing bytes") {
    write_bytes(p, good + "x");
    CHECK_THROWS_AS(load_checkpoint(p), CheckpointError);
  }
  SUBCASE("manifest shape disagrees with the config") {
    std::string s = good;
    const auto pos = s.find("\"d_ffn\":12");
    REQUIRE(pos != std::string::npos);
    s.replace(pos, 10, "\"d_ffn\":13");
    write_bytes(p, s);
    CHECK_THROWS_AS(load_checkpoint(p), CheckpointError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(tmp("xlg_ck_missing.ckpt")), CheckpointError); }
  std::filesystem::remove(p);
}

TEST_CASE("model config json round trip") {
  const auto c = ck_config();
  CHECK(model_config_from_json(to_json(c)) == c);
  CHECK_THROWS_AS(model_config_from_json(Json{{"enc_layers", 1}}), CheckpointError);
}
