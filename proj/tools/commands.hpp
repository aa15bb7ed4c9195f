#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rupp::cli {

enum ExitCode : int { kOk = 0, kError = 1, kNanAbort = 2, kVerifyFailed = 3 };

struct TrainArgs {
  std::filesystem::path data_dir;
  std::filesystem::path config;
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;  // key=value
  bool resume = false;
  bool quiet = false;
};

struct PredictArgs {
  std::filesystem::path model;
  std::filesystem::path image;
  std::filesystem::path mask;
  std::filesystem::path out;
};

struct EvalArgs {
  std::filesystem::path model;
  std::filesystem::path data_dir;
  std::string split = "test";
  std::filesystem::path config;
  std::filesystem::path csv;
  std::vector<std::string> overrides;
};

struct VerifyArgs {
  std::string inject_fault;
};

struct GenerateArgs {
  std::filesystem::path out_dir;
  std::size_t count = 8;
  std::size_t size = 64;
  std::uint64_t seed = 0;
};

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_predict(const PredictArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_verify(const VerifyArgs& args, std::ostream& out, std::ostream& err);
int cmd_generate(const GenerateArgs& args, std::ostream& out, std::ostream& err);

}  // namespace rupp::cli
