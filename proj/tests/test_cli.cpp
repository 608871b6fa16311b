#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "xlg/json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::path(XLG_TEST_TMP) / "cli";

std::string bin() {
  const char* b = std::getenv("XLG_BIN");
  REQUIRE(b != nullptr);
  return b;
}

// Runs the tool; stdout/stderr go to files under kRoot.
int run_tool(const std::string& args) {
  const std::string cmd = bin() + " " + args + " >" + (kRoot / "stdout.txt").string() + " 2>" +
                          (kRoot / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string p(const std::string& rel) { return (kRoot / rel).string(); }

void write_config() {
  const xlg::Json cfg = xlg::Json::parse(R"({
    "data": {"vocab_size_per_lang": 12, "mono_size": 60, "parallel_size": 60, "task_pool_size": 40,
             "min_len": 3, "max_len": 8},
    "task": {"train_size": 20, "test_size": 8},
    "model": {"enc_layers": 1, "dec_layers": 1, "d_model": 8, "n_heads": 2, "d_ffn": 16, "max_positions": 24},
    "stage1": {"steps": 4, "warmup": 1, "lr": 0.01, "batch_size": 4, "checkpoint_every": 2},
    "stage2": {"steps": 4, "warmup": 1, "lr": 0.01, "batch_size": 4},
    "finetune": {"steps": 4, "warmup": 1, "lr": 0.01, "batch_size": 4},
    "decode": {"beam_size": 2, "max_len": 6}
  })");
  std::ofstream(kRoot / "cfg.json") << cfg.dump(2);
}

// Task JSONL -> generate manifest with the given target tag.
void write_manifest(const fs::path& tasks, const fs::path& out, const std::string& tgt) {
  std::ifstream in(tasks);
  std::ofstream o(out);
  for (std::string line; std::getline(in, line);) {
    const auto t = xlg::Json::parse(line);
    o << xlg::Json{{"input", t["input"]}, {"src_lang", t["lang"]}, {"tgt_lang", tgt}}.dump() << '\n';
  }
}

}  // namespace

TEST_CASE("end-to-end CLI workflow, exit codes and determinism") {
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);
  write_config();
  const std::string cfg = "--config " + p("cfg.json");

  // Usage errors.
  CHECK(run_tool("") == 2);
  CHECK(run_tool("frobnicate") == 2);
  CHECK(run_tool("gen-data --out " + p("d") + " --set model.depth=3") == 2);
  CHECK(slurp(kRoot / "stderr.txt").find("model.depth") != std::string::npos);
  CHECK(run_tool("gen-data --out " + p("d") + " --config " + p("missing.json")) == 2);

  // Data.
  REQUIRE(run_tool("gen-data " + cfg + " --seed 5 --out " + p("d")) == 0);
  CHECK(fs::exists(kRoot / "d" / "vocab.txt"));
  CHECK(fs::exists(kRoot / "d" / "task_test_b.jsonl"));
  CHECK(run_tool("gen-data " + cfg + " --seed 5 --out " + p("d")) == 2);
  CHECK(slurp(kRoot / "stderr.txt").find("--force") != std::string::npos);
  const std::string vocab_before = slurp(kRoot / "d" / "vocab.txt");
  REQUIRE(run_tool("gen-data " + cfg + " --seed 5 --force --out " + p("d")) == 0);
  CHECK(slurp(kRoot / "d" / "vocab.txt") == vocab_before);

  // Vocabulary from text.
  CHECK(run_tool("learn-vocab " + cfg + " --input " + p("d/text_a.txt") + " --input " + p("d/text_b.txt") +
            " --languages la,lb --set vocab.merges=5 --out " + p("v.txt")) == 0);
  CHECK(slurp(kRoot / "v.txt").find("#LANGUAGES") != std::string::npos);

  // Pre-training.
  CHECK(run_tool("pretrain " + cfg + " --stage 3 --data " + p("d") + " --out " + p("m")) == 2);
  CHECK(run_tool("pretrain " + cfg + " --stage 2 --data " + p("d") + " --out " + p("m")) == 2);
  REQUIRE(run_tool("pretrain " + cfg + " --seed 5 --stage 1 --data " + p("d") + " --out " + p("m")) == 0);
  CHECK(fs::exists(kRoot / "m" / "stage1-step2.ckpt"));
  CHECK(fs::exists(kRoot / "m" / "stage1-loss.csv"));
  const std::string s1 = p("m/stage1-step4.ckpt");
  REQUIRE(run_tool("pretrain " + cfg + " --seed 5 --stage 2 --data " + p("d") + " --init " + s1 + " --out " + p("m")) == 0);
  const std::string log2 = slurp(kRoot / "stdout.txt");
  CHECK(log2.find("frozen EncoderLayers") != std::string::npos);
  CHECK(log2.find("CHANGED") == std::string::npos);

  // Rerunning stage 1 elsewhere reproduces the checkpoint bytes.
  REQUIRE(run_tool("pretrain " + cfg + " --seed 5 --stage 1 --data " + p("d") + " --out " + p("m2")) == 0);
  CHECK(slurp(kRoot / "m" / "stage1-step4.ckpt") == slurp(kRoot / "m2" / "stage1-step4.ckpt"));
  CHECK(slurp(kRoot / "m" / "stage1-loss.csv") == slurp(kRoot / "m2" / "stage1-loss.csv"));
  REQUIRE(run_tool("pretrain " + cfg + " --seed 6 --stage 1 --data " + p("d") + " --out " + p("m3")) == 0);
  CHECK(slurp(kRoot / "m" / "stage1-step4.ckpt") != slurp(kRoot / "m3" / "stage1-step4.ckpt"));

  // Fine-tuning.
  const std::string s2 = p("m/stage2-step4.ckpt");
  CHECK(run_tool("finetune " + cfg + " --strategy bogus --data " + p("d") + " --init " + s2 + " --out " + p("f")) == 2);
  REQUIRE(run_tool("finetune " + cfg + " --strategy et --data " + p("d") + " --init " + s2 + " --out " + p("f")) == 0);
  CHECK(slurp(kRoot / "stdout.txt").find("frozen DecoderLayers") != std::string::npos);
  const std::string ft = p("f/finetune-et-step4.ckpt");
  CHECK(run_tool("finetune " + cfg + " --strategy et --data " + p("d") + " --init " + p("nope.ckpt") + " --out " +
            p("f2")) == 1);

  // Generation and evaluation.
  write_manifest(kRoot / "d" / "task_test_a.jsonl", kRoot / "manifest.jsonl", "la");
  REQUIRE(run_tool("generate " + cfg + " --checkpoint " + ft + " --manifest " + p("manifest.jsonl") + " --out " +
              p("out.jsonl")) == 0);
  REQUIRE(run_tool("evaluate " + cfg + " --outputs " + p("out.jsonl") + " --refs " + p("d/task_test_a.jsonl") +
              " --data " + p("d") + " --lang la --out " + p("report.json")) == 0);
  const auto report = xlg::Json::parse(slurp(kRoot / "report.json"));
  CHECK(report.at("n_examples") == 8);
  CHECK(report.contains("settings"));
  const std::string report_bytes = slurp(kRoot / "report.json");
  REQUIRE(run_tool("generate " + cfg + " --force --checkpoint " + ft + " --manifest " + p("manifest.jsonl") + " --out " +
              p("out.jsonl")) == 0);
  REQUIRE(run_tool("evaluate " + cfg + " --force --outputs " + p("out.jsonl") + " --refs " + p("d/task_test_a.jsonl") +
              " --data " + p("d") + " --lang la --out " + p("report.json")) == 0);
  CHECK(slurp(kRoot / "report.json") == report_bytes);

  // Restricted decoding with the B tag only emits B-side ids.
  REQUIRE(run_tool("generate " + cfg + " --set decode.restrict_vocab=true --data " + p("d") + " --tgt-lang lb --checkpoint " +
              ft + " --manifest " + p("manifest.jsonl") + " --out " + p("out_b.jsonl")) == 0);
  REQUIRE(run_tool("evaluate " + cfg + " --outputs " + p("out_b.jsonl") + " --refs " + p("d/task_test_b.jsonl") +
              " --data " + p("d") + " --lang lb --out " + p("report_b.json")) == 0);
  const auto rb = xlg::Json::parse(slurp(kRoot / "report_b.json"));
  if (rb.at("empty_outputs") < 8) CHECK(rb.at("lang_membership") == 1.0);

  // Malformed manifest names the line.
  {
    std::ofstream bad(kRoot / "bad.jsonl");
    bad << slurp(kRoot / "manifest.jsonl").substr(0, slurp(kRoot / "manifest.jsonl").find('\n') + 1);
    bad << R"({"input": [1, 2], "src_lang": "la"})" << '\n';
  }
  CHECK(run_tool("generate " + cfg + " --checkpoint " + ft + " --manifest " + p("bad.jsonl") + " --out " + p("bad_out.jsonl")) ==
        1);
  CHECK(slurp(kRoot / "stderr.txt").find("bad.jsonl:2:") != std::string::npos);

  CHECK(run_tool("ablate " + cfg + " --which nothing --out " + p("a.json")) == 2);
}
