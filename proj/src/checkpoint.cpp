#include "xlg/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

namespace xlg {

namespace {

constexpr std::string_view kMagic = "XLGCKPT1\n";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw CheckpointError("sha256 init failed");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw CheckpointError("sha256 update failed");
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md, &len) != 1) throw CheckpointError("sha256 final failed");
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kDigits[md[i] >> 4]);
      out.push_back(kDigits[md[i] & 15]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

Json to_json(const ModelConfig& c) {
  return Json{{"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers},       {"d_model", c.d_model},
              {"n_heads", c.n_heads},       {"d_ffn", c.d_ffn},                 {"max_positions", c.max_positions},
              {"vocab_size", c.vocab_size}, {"num_languages", c.num_languages}};
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  try {
    c.enc_layers = j.at("enc_layers").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ffn = j.at("d_ffn").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.num_languages = j.at("num_languages").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad model config in checkpoint: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Seq2SeqModel<float>& model, const Json& metadata) {
  Json manifest = Json::array();
  for (const auto& p : model.params()) {
    manifest.push_back({{"name", p.name},
                        {"shape", {p.value.rows(), p.value.cols()}},
                        {"group", std::string(to_string(p.group))},
                        {"dtype", "f32"}});
  }
  const Json header{{"model", to_json(model.config())}, {"metadata", metadata}, {"params", manifest}};
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.params()) {
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(float)));
  }
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Seq2SeqModel<float> load_checkpoint(const std::filesystem::path& path, Json* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const auto fail = [&](const std::string& m) -> void { throw CheckpointError(path.string() + ": " + m); };

  std::string magic(kMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kMagic) fail("not a checkpoint (bad magic)");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 26)) fail("corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) fail("truncated header");

  Json header;
  try {
    header = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("unreadable header: ") + e.what());
  }
  if (!header.contains("model") || !header.contains("params")) fail("header lacks model or params");
  const ModelConfig cfg = model_config_from_json(header["model"]);
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    fail(std::string("invalid model config: ") + e.what());
  }

  Seq2SeqModel<float> model(cfg, 0);
  auto& params = model.params();
  const auto& manifest = header["params"];
  if (!manifest.is_array() || manifest.size() != params.size()) {
    fail("manifest lists " + std::to_string(manifest.size()) + " parameters, config implies " +
         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& m = manifest[i];
    const std::string name = m.value("name", "");
    if (name != p.name) fail("parameter " + std::to_string(i) + " is '" + name + "', expected '" + p.name + "'");
    const auto shape = m.value("shape", std::vector<long long>{});
    if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols()) {
      fail("shape mismatch for " + p.name + ": expected [" + std::to_string(p.value.rows()) + "," +
           std::to_string(p.value.cols()) + "]");
    }
    if (m.value("group", "") != to_string(p.group)) fail("group mismatch for " + p.name);
    if (m.value("dtype", "") != "f32") fail("unsupported dtype for " + p.name);
    in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(float)));
    if (!in) fail("truncated data for " + p.name);
  }
  if (in.peek() != std::char_traits<char>::eof()) fail("trailing bytes after parameter data");
  if (metadata) *metadata = header.value("metadata", Json::object());
  return model;
}

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  Sha256 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::map<ParamGroup, std::string> group_hashes(const Seq2SeqModel<float>& model) {
  std::map<ParamGroup, std::string> out;
  for (const auto& [group, indices] : model.partition_params()) {
    Sha256 h;
    for (int i : indices) {
      const auto& p = model.params()[static_cast<std::size_t>(i)];
      h.update(p.name.data(), p.name.size() + 1);
      h.update(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(float));
    }
    out[group] = h.hex();
  }
  return out;
}

}  // namespace xlg
